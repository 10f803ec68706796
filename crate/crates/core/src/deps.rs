//! Byte-to-operand dependency inference by single-bit flips.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::cmplog::{build_ct, ComparisonTable, OpSel};
use crate::coverage::{CoverageTrace, Stage};
use crate::exec::{execute, Executor, Verdict};
use crate::target::{InstrMode, Outcome, PatchSet, SiteId};

/// Fixed-length bit vector over input positions.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ByteMask {
    words: Vec<u64>,
    len: usize,
}

impl ByteMask {
    pub fn new(len: usize) -> Self {
        ByteMask {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn from_indices(len: usize, idx: impl IntoIterator<Item = usize>) -> Self {
        let mut m = ByteMask::new(len);
        for i in idx {
            m.set(i);
        }
        m
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn set(&mut self, i: usize) {
        assert!(i < self.len);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn get(&self, i: usize) -> bool {
        i < self.len && self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn union_with(&mut self, other: &ByteMask) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn intersects(&self, other: &ByteMask) -> bool {
        self.words.iter().zip(&other.words).any(|(a, b)| a & b != 0)
    }

    pub fn intersects_range(&self, start: usize, len: usize) -> bool {
        (start..start + len).any(|i| self.get(i))
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(|&i| self.get(i))
    }
}

impl std::fmt::Debug for ByteMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.ones()).finish()
    }
}

/// Key of one dependency vector: site, instance index, operand.
pub type DepKey = (SiteId, usize, OpSel);

#[derive(Debug, Clone, Default)]
pub struct DepsMap {
    len: usize,
    map: BTreeMap<DepKey, ByteMask>,
}

impl DepsMap {
    /// Empty vectors for every (site, instance, operand) of `ct`.
    pub fn for_table(ct: &ComparisonTable, len: usize) -> Self {
        let mut map = BTreeMap::new();
        for (s, r) in ct.iter() {
            for j in 0..r.instances.len() {
                for op in OpSel::BOTH {
                    map.insert((s, j, op), ByteMask::new(len));
                }
            }
        }
        DepsMap { len, map }
    }

    pub fn input_len(&self) -> usize {
        self.len
    }

    pub fn get(&self, site: SiteId, j: usize, op: OpSel) -> Option<&ByteMask> {
        self.map.get(&(site, j, op))
    }

    pub fn set(&mut self, site: SiteId, j: usize, op: OpSel, byte: usize) {
        let len = self.len;
        self.map
            .entry((site, j, op))
            .or_insert_with(|| ByteMask::new(len))
            .set(byte);
    }

    /// Bytes on which any instance of the operand depends.
    pub fn any_instance(&self, site: SiteId, op: OpSel) -> ByteMask {
        let mut m = ByteMask::new(self.len);
        for (_, v) in self
            .map
            .range((site, 0, OpSel::Op1)..=(site, usize::MAX, OpSel::Op2))
            .filter(|((_, _, o), _)| *o == op)
        {
            m.union_with(v);
        }
        m
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DepKey, &ByteMask)> {
        self.map.iter()
    }
}

/// Keys whose operand differs between the baseline and a flipped run,
/// restricted to sites with equal hit counts.
pub fn diff_tables(base: &ComparisonTable, flipped: &ComparisonTable) -> Vec<DepKey> {
    let mut out = Vec::new();
    for (s, r) in base.iter() {
        let Some(r2) = flipped.get(s) else { continue };
        if r.hits != r2.hits {
            continue;
        }
        for (j, (a, b)) in r.instances.iter().zip(&r2.instances).enumerate() {
            if a.op1 != b.op1 {
                out.push((s, j, OpSel::Op1));
            }
            if a.op2 != b.op2 {
                out.push((s, j, OpSel::Op2));
            }
        }
    }
    out
}

/// An input found while flipping that the coverage map deemed new.
#[derive(Debug, Clone)]
pub struct Discovery {
    pub input: Vec<u8>,
    pub coverage: CoverageTrace,
    pub steps: u64,
}

pub struct DepsResult {
    pub ct: ComparisonTable,
    pub deps: DepsMap,
    pub baseline: CoverageTrace,
    pub baseline_outcome: Outcome,
    pub baseline_steps: u64,
    pub discovered: Vec<Discovery>,
}

struct FlipRun {
    outcome: Outcome,
    coverage: CoverageTrace,
    steps: u64,
}

struct ByteRuns {
    keys: Vec<DepKey>,
    runs: Vec<FlipRun>,
}

/// Flips every bit of `input` in turn and records which operands change.
///
/// Byte positions are processed in parallel; the merge and all coverage
/// bookkeeping happen afterwards in (byte, bit) order, so the result does
/// not depend on scheduling.
pub fn get_deps(exec: &mut Executor<'_>, input: &[u8], patches: &PatchSet) -> DepsResult {
    let target = exec.target();
    let limit = exec.step_limit();
    let base = exec.run(input, patches, InstrMode::Full);
    exec.coverage.begin_surgical_stage(&base.coverage);
    let ct = build_ct(&base.cmps);
    let mut deps = DepsMap::for_table(&ct, input.len());

    let per_byte: Vec<ByteRuns> = (0..input.len())
        .into_par_iter()
        .map(|b| {
            let mut buf = input.to_vec();
            let mut keys = Vec::new();
            let mut runs = Vec::with_capacity(8);
            for k in 0..8 {
                buf[b] ^= 1 << k;
                let r = execute(target, &buf, patches, InstrMode::Full, limit);
                buf[b] ^= 1 << k;
                keys.extend(diff_tables(&ct, &build_ct(&r.cmps)));
                runs.push(FlipRun {
                    outcome: r.outcome,
                    coverage: r.coverage,
                    steps: r.steps,
                });
            }
            keys.sort_unstable();
            keys.dedup();
            ByteRuns { keys, runs }
        })
        .collect();

    let mut discovered = Vec::new();
    let mut buf = input.to_vec();
    for (b, br) in per_byte.into_iter().enumerate() {
        for (s, j, op) in br.keys {
            deps.set(s, j, op, b);
        }
        for (k, run) in br.runs.into_iter().enumerate() {
            exec.execs += 1;
            buf[b] ^= 1 << k;
            let v = exec.observe(&buf, &run.outcome, &run.coverage, Stage::Surgical);
            if let Verdict::Interesting(_) = v {
                discovered.push(Discovery {
                    input: buf.clone(),
                    coverage: run.coverage,
                    steps: run.steps,
                });
            }
            buf[b] ^= 1 << k;
        }
    }

    DepsResult {
        ct,
        deps,
        baseline: base.coverage,
        baseline_outcome: base.outcome,
        baseline_steps: base.steps,
        discovered,
    }
}
