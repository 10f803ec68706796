//! Context-sensitive edge coverage with AFL hit-count buckets.

use std::collections::HashMap;

use crate::target::MAP_SIZE;

/// AFL bucket classes: 1, 2, 3, 4-7, 8-15, 16-31, 32-127, 128+.
/// Returns a one-hot byte (0 for a zero count).
pub fn bucket(count: u32) -> u8 {
    match count {
        0 => 0,
        1 => 1,
        2 => 2,
        3 => 4,
        4..=7 => 8,
        8..=15 => 16,
        16..=31 => 32,
        32..=127 => 64,
        _ => 128,
    }
}

/// Smallest raw count that falls in the same bucket as `count`.
pub fn bucket_representative(count: u32) -> u32 {
    match bucket(count) {
        0 => 0,
        1 => 1,
        2 => 2,
        4 => 3,
        8 => 4,
        16 => 8,
        32 => 16,
        64 => 32,
        _ => 128,
    }
}

/// Raw per-index hit counts of one execution, sorted by index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CoverageTrace {
    entries: Vec<(u32, u32)>,
}

impl CoverageTrace {
    pub fn from_edges(edges: &[u32]) -> Self {
        let mut idx = edges.to_vec();
        idx.sort_unstable();
        let mut entries: Vec<(u32, u32)> = Vec::new();
        for i in idx {
            match entries.last_mut() {
                Some((j, c)) if *j == i => *c += 1,
                _ => entries.push((i, 1)),
            }
        }
        CoverageTrace { entries }
    }

    pub fn from_counts(mut entries: Vec<(u32, u32)>) -> Self {
        entries.retain(|&(_, c)| c > 0);
        entries.sort_unstable();
        CoverageTrace { entries }
    }

    pub fn entries(&self) -> &[(u32, u32)] {
        &self.entries
    }

    pub fn count(&self, index: u32) -> u32 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|p| self.entries[p].1)
            .unwrap_or(0)
    }

    pub fn contains(&self, index: u32) -> bool {
        self.count(index) > 0
    }

    pub fn path_hash(&self) -> PathHash {
        path_hash(self)
    }
}

/// Digest of the bucketized map of one execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PathHash(pub u64);

/// FNV-1a over (index, bucket) pairs. Counts inside one bucket hash
/// alike.
pub fn path_hash(trace: &CoverageTrace) -> PathHash {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for &(i, c) in &trace.entries {
        for b in i.to_le_bytes().into_iter().chain([bucket(c)]) {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    }
    PathHash(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Surgical,
    Structure,
}

/// What made an execution interesting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Novelty {
    pub new_edges: u32,
    pub new_buckets: u32,
    pub new_maxima: u32,
}

impl Novelty {
    pub fn is_interesting(&self) -> bool {
        self.new_edges + self.new_buckets + self.new_maxima > 0
    }
}

pub struct CoverageMap {
    counts: Vec<u32>,
    touched: Vec<u32>,
    virgin: Vec<u8>,
    stage_max: HashMap<u32, u32>,
    edges_seen: usize,
    buckets_seen: usize,
}

impl Default for CoverageMap {
    fn default() -> Self {
        Self::new()
    }
}

impl CoverageMap {
    pub fn new() -> Self {
        CoverageMap {
            counts: vec![0; MAP_SIZE],
            touched: Vec::new(),
            virgin: vec![0; MAP_SIZE],
            stage_max: HashMap::new(),
            edges_seen: 0,
            buckets_seen: 0,
        }
    }

    /// Adds raw hits for an edge stream into the current-execution
    /// counters. Colliding indices share a counter.
    pub fn record(&mut self, edges: &[u32]) {
        for &e in edges {
            let slot = &mut self.counts[e as usize];
            if *slot == 0 {
                self.touched.push(e);
            }
            *slot += 1;
        }
    }

    pub fn raw_count(&self, index: u32) -> u32 {
        self.counts[index as usize]
    }

    /// Drains the current-execution counters into a trace.
    pub fn take_trace(&mut self) -> CoverageTrace {
        let mut entries = Vec::with_capacity(self.touched.len());
        for i in self.touched.drain(..) {
            entries.push((i, std::mem::take(&mut self.counts[i as usize])));
        }
        CoverageTrace::from_counts(entries)
    }

    /// Starts a surgical stage: forgets previous per-edge maxima and seeds
    /// them with the counts of the input entering the stage.
    pub fn begin_surgical_stage(&mut self, baseline: &CoverageTrace) {
        self.stage_max.clear();
        for &(i, c) in baseline.entries() {
            self.stage_max.insert(i, c);
        }
    }

    /// Novelty check; records whatever was new.
    pub fn is_interesting(&mut self, trace: &CoverageTrace, stage: Stage) -> Novelty {
        let mut n = Novelty::default();
        for &(i, c) in trace.entries() {
            let b = bucket(c);
            let v = &mut self.virgin[i as usize];
            if *v == 0 {
                n.new_edges += 1;
                self.edges_seen += 1;
            } else if *v & b == 0 {
                n.new_buckets += 1;
            }
            if *v & b == 0 {
                self.buckets_seen += 1;
                *v |= b;
            }
            if stage == Stage::Surgical {
                match self.stage_max.get_mut(&i) {
                    Some(m) if c > *m => {
                        *m = c;
                        n.new_maxima += 1;
                    }
                    Some(_) => {}
                    None => {
                        self.stage_max.insert(i, c);
                    }
                }
            }
        }
        n
    }

    /// Whether `trace` would be interesting, without recording anything.
    pub fn peek(&self, trace: &CoverageTrace, stage: Stage) -> bool {
        trace.entries().iter().any(|&(i, c)| {
            self.virgin[i as usize] & bucket(c) == 0
                || (stage == Stage::Surgical
                    && self.stage_max.get(&i).is_some_and(|&m| c > m))
        })
    }

    pub fn has_seen(&self, index: u32) -> bool {
        self.virgin[index as usize] != 0
    }

    pub fn edges_seen(&self) -> usize {
        self.edges_seen
    }

    pub fn buckets_seen(&self) -> usize {
        self.buckets_seen
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::edge_index;
    use proptest::prelude::*;

    #[test]
    fn bucket_classes() {
        let expect = [
            (1, 1),
            (2, 2),
            (3, 4),
            (4, 8),
            (7, 8),
            (8, 16),
            (15, 16),
            (16, 32),
            (31, 32),
            (32, 64),
            (127, 64),
            (128, 128),
            (100_000, 128),
        ];
        for (c, b) in expect {
            assert_eq!(bucket(c), b, "count {c}");
        }
    }

    #[test]
    fn record_empty_stream_leaves_map_unchanged() {
        let mut m = CoverageMap::new();
        m.record(&[]);
        assert_eq!(m.take_trace(), CoverageTrace::default());
    }

    #[test]
    fn five_hits_land_in_4_to_7() {
        let mut m = CoverageMap::new();
        m.record(&[42; 5]);
        assert_eq!(m.raw_count(42), 5);
        let t = m.take_trace();
        assert_eq!(t.entries(), &[(42, 5)]);
        assert_eq!(bucket(t.count(42)), 8);
        assert_eq!(m.raw_count(42), 0);
    }

    #[test]
    fn colliding_edges_share_a_counter() {
        // brute-force a collision in the index hash
        let base = edge_index(1, 2, 0);
        let other = (3..u32::MAX).find(|&d| edge_index(7, d, 0) == base).unwrap();
        let mut m = CoverageMap::new();
        m.record(&[edge_index(1, 2, 0), edge_index(7, other, 0)]);
        assert_eq!(m.raw_count(base), 2);
    }

    #[test]
    fn first_execution_new_then_idempotent() {
        let mut m = CoverageMap::new();
        let t = CoverageTrace::from_edges(&[1, 2, 2, 3]);
        assert!(m.is_interesting(&t, Stage::Structure).is_interesting());
        assert!(!m.is_interesting(&t, Stage::Structure).is_interesting());
        assert!(!m.is_interesting(&t, Stage::Surgical).is_interesting());
    }

    #[test]
    fn loop_bucketization_example() {
        let t = |c: usize| CoverageTrace::from_edges(&vec![9u32; c]);
        let mut surg = CoverageMap::new();
        let mut stru = CoverageMap::new();
        for m in [&mut surg, &mut stru] {
            m.is_interesting(&t(3), Stage::Structure);
        }
        surg.begin_surgical_stage(&t(3));
        // 3 -> 4: surgical by the new maximum (and the new 4-7 bucket)
        assert!(surg.is_interesting(&t(4), Stage::Surgical).new_maxima == 1);
        assert!(stru.is_interesting(&t(4), Stage::Structure).new_buckets == 1);
        // later 5: same bucket, only the surgical rule fires
        assert!(!stru.is_interesting(&t(5), Stage::Structure).is_interesting());
        let n = surg.is_interesting(&t(5), Stage::Surgical);
        assert_eq!(n, Novelty { new_edges: 0, new_buckets: 0, new_maxima: 1 });
    }

    #[test]
    fn stage_maxima_reset_per_stage() {
        let t = |c: usize| CoverageTrace::from_edges(&vec![9u32; c]);
        let mut m = CoverageMap::new();
        m.begin_surgical_stage(&t(2));
        assert!(m.is_interesting(&t(6), Stage::Surgical).is_interesting());
        m.begin_surgical_stage(&t(2));
        assert_eq!(m.is_interesting(&t(5), Stage::Surgical).new_maxima, 1);
    }

    #[test]
    fn path_hash_distinguishes_buckets_not_counts() {
        let a = CoverageTrace::from_edges(&[1, 1, 1, 1, 2]);
        let b = CoverageTrace::from_edges(&[1, 1, 1, 1, 1, 2]);
        let c = CoverageTrace::from_edges(&[1, 1, 1, 2]);
        assert_eq!(a.path_hash(), b.path_hash());
        assert_ne!(a.path_hash(), c.path_hash());
        assert_ne!(a.path_hash(), CoverageTrace::from_edges(&[1, 1, 1, 1, 3]).path_hash());
    }

    proptest! {
        #[test]
        fn bucket_is_monotone_and_idempotent(a in 0u32..100_000, b in 0u32..100_000) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(bucket(lo) <= bucket(hi));
            prop_assert_eq!(bucket(bucket_representative(a)), bucket(a));
        }

        #[test]
        fn record_matches_sorting_route(edges in proptest::collection::vec(0u32..64, 0..200)) {
            let mut m = CoverageMap::new();
            m.record(&edges);
            prop_assert_eq!(m.take_trace(), CoverageTrace::from_edges(&edges));
        }

        #[test]
        fn replay_is_never_interesting(edges in proptest::collection::vec(0u32..64, 1..100)) {
            let mut m = CoverageMap::new();
            let t = CoverageTrace::from_edges(&edges);
            m.begin_surgical_stage(&CoverageTrace::default());
            m.is_interesting(&t, Stage::Surgical);
            prop_assert!(!m.is_interesting(&t, Stage::Surgical).is_interesting());
            prop_assert!(!m.is_interesting(&t, Stage::Structure).is_interesting());
        }
    }
}
