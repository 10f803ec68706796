use std::collections::BTreeMap;

use crate::coverage::CoverageTrace;
use crate::tags::{TagArray, TagKind};
use crate::target::{PatchSet, SiteId};

/// Base number of children per structure stage.
pub const BASE_ENERGY: f64 = 64.0;

/// How a queue entry came to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Seed,
    BitFlip { parent: usize },
    Operand { parent: usize, site: SiteId },
    Stack { parent: usize },
}

impl Provenance {
    /// Short form used in queue file names.
    pub fn label(&self) -> String {
        match self {
            Provenance::Seed => "seed".to_string(),
            Provenance::BitFlip { parent } => format!("src:{parent:06},op:flip"),
            Provenance::Operand { parent, site } => format!("src:{parent:06},op:cmp{site}"),
            Provenance::Stack { parent } => format!("src:{parent:06},op:stack"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QueueEntry {
    pub id: usize,
    pub input: Vec<u8>,
    pub tags: Option<TagArray>,
    pub repaired_ok: bool,
    pub times_fuzzed: u64,
    pub found_at_ms: u64,
    pub found_at_exec: u64,
    pub provenance: Provenance,
    /// Execution cost in target steps.
    pub steps: u64,
    pub coverage: CoverageTrace,
    pub favored: bool,
    /// Patches in force when the surgical tags were computed.
    pub analyzed_under: Option<PatchSet>,
}

impl QueueEntry {
    pub fn has_surgical_tags(&self) -> bool {
        self.tags.as_ref().is_some_and(|t| t.kind == TagKind::Surgical)
    }

    /// Surgical tags computed under `patches`. Tags from a run where a
    /// since-patched checksum still blocked execution are stale.
    pub fn tags_current(&self, patches: &PatchSet) -> bool {
        self.has_surgical_tags() && self.analyzed_under.as_ref() == Some(patches)
    }
}

#[derive(Debug, Default)]
pub struct Queue {
    entries: Vec<QueueEntry>,
    /// Best (cost, id) per edge.
    top_rated: BTreeMap<u32, (u128, usize)>,
    /// Visit order of the current cycle.
    order: Vec<usize>,
    cursor: usize,
    pub cycles: u64,
}

fn median(mut v: Vec<u64>) -> f64 {
    if v.is_empty() {
        return 1.0;
    }
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] as f64 + v[n / 2] as f64) / 2.0
    }
}

impl Queue {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[QueueEntry] {
        &self.entries
    }

    pub fn get(&self, id: usize) -> &QueueEntry {
        &self.entries[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut QueueEntry {
        &mut self.entries[id]
    }

    /// Appends an entry, assigning its id, and updates favored flags.
    pub fn push(&mut self, mut e: QueueEntry) -> usize {
        let id = self.entries.len();
        e.id = id;
        let cost = e.steps.max(1) as u128 * e.input.len().max(1) as u128;
        for &(edge, _) in e.coverage.entries() {
            let better = self.top_rated.get(&edge).is_none_or(|&(c, _)| cost < c);
            if better {
                self.top_rated.insert(edge, (cost, id));
            }
        }
        self.entries.push(e);
        self.order.push(id);
        self.refresh_favored();
        id
    }

    fn refresh_favored(&mut self) {
        for e in &mut self.entries {
            e.favored = false;
        }
        for &(_, id) in self.top_rated.values() {
            self.entries[id].favored = true;
        }
    }

    pub fn pending_favored(&self) -> bool {
        self.entries.iter().any(|e| e.favored && e.times_fuzzed == 0)
    }

    /// Next entry in round-robin order, favored entries first within each
    /// cycle. Returns the id and whether a new cycle started.
    pub fn advance(&mut self) -> (usize, bool) {
        let wrapped = self.cursor == 0 || self.cursor >= self.order.len();
        if wrapped {
            let (fav, rest): (Vec<usize>, Vec<usize>) =
                (0..self.entries.len()).partition(|&i| self.entries[i].favored);
            self.order = fav;
            self.order.extend(rest);
            self.cursor = 0;
            self.cycles += 1;
        }
        let id = self.order[self.cursor];
        self.cursor += 1;
        (id, wrapped)
    }

    /// Number of children for the structure stage of `id`.
    pub fn energy(&self, id: usize) -> usize {
        let e = &self.entries[id];
        let med_cost = median(self.entries.iter().map(|e| e.steps.max(1)).collect());
        let med_len = median(self.entries.iter().map(|e| e.input.len().max(1) as u64).collect());
        energy_score(med_cost, e.steps.max(1) as f64, med_len, e.input.len().max(1) as f64).round()
            as usize
    }
}

/// Power schedule: faster and smaller than the corpus median earns more.
pub fn energy_score(median_cost: f64, cost: f64, median_len: f64, len: f64) -> f64 {
    let speed = (median_cost / cost).clamp(0.25, 4.0);
    let size = (median_len / len).clamp(0.5, 2.0);
    BASE_ENERGY * speed * size
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(input: &[u8], steps: u64, edges: &[u32]) -> QueueEntry {
        QueueEntry {
            id: 0,
            input: input.to_vec(),
            tags: None,
            repaired_ok: true,
            times_fuzzed: 0,
            found_at_ms: 0,
            found_at_exec: 0,
            provenance: Provenance::Seed,
            steps,
            coverage: CoverageTrace::from_edges(edges),
            favored: false,
            analyzed_under: None,
        }
    }

    #[test]
    fn tags_go_stale_when_patches_change() {
        let mut e = entry(b"abcd", 1, &[1]);
        let none = PatchSet::new();
        assert!(!e.tags_current(&none));
        e.tags = Some(TagArray::untagged(4, TagKind::Surgical));
        e.analyzed_under = Some(none.clone());
        assert!(e.tags_current(&none));
        let mut more = PatchSet::new();
        more.insert(0x3020);
        assert!(!e.tags_current(&more));
    }

    #[test]
    fn energy_factors() {
        assert_eq!(energy_score(100.0, 100.0, 10.0, 10.0), 64.0);
        assert_eq!(energy_score(100.0, 25.0, 10.0, 10.0), 256.0);
        assert_eq!(energy_score(100.0, 800.0, 10.0, 10.0), 16.0);
        assert_eq!(energy_score(100.0, 100.0, 10.0, 40.0), 32.0);
        assert_eq!(energy_score(100.0, 1.0, 10.0, 1.0), 512.0);
    }

    #[test]
    fn favored_tracks_cheapest_per_edge() {
        let mut q = Queue::default();
        q.push(entry(&[0; 10], 100, &[1, 2]));
        q.push(entry(&[0; 2], 10, &[1]));
        assert!(q.get(0).favored, "still best for edge 2");
        assert!(q.get(1).favored);
        q.push(entry(&[0; 1], 1, &[1, 2]));
        assert!(!q.get(0).favored && !q.get(1).favored && q.get(2).favored);
    }

    #[test]
    fn round_robin_wraps() {
        let mut q = Queue::default();
        q.push(entry(b"a", 1, &[1]));
        q.push(entry(b"b", 1, &[2]));
        let ids: Vec<_> = (0..5).map(|_| q.advance()).collect();
        assert_eq!(ids, [(0, true), (1, false), (0, true), (1, false), (0, true)]);
        assert_eq!(q.cycles, 3);
    }

    #[test]
    fn favored_entries_lead_each_cycle() {
        let mut q = Queue::default();
        q.push(entry(&[0; 8], 50, &[1]));
        q.push(entry(&[0; 8], 80, &[1]));
        q.push(entry(&[0; 1], 1, &[1]));
        let ids: Vec<_> = (0..4).map(|_| q.advance().0).collect();
        assert_eq!(ids, [2, 0, 1, 2]);
    }
}
