//! Targeted operand replacement: writes the value a comparison expects
//! into the input bytes that feed the other operand.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::cmplog::{sites_by_exec_order, ComparisonTable, Instance, OpSel};
use crate::coverage::{CoverageTrace, Stage};
use crate::deps::{ByteMask, DepsMap};
use crate::exec::{Executor, Verdict};
use crate::i2s::{encode, Encoding, I2SRecord};
use crate::target::{CmpKind, InstrMode, Operand, PatchSet, SiteId};

/// Substitutions tried per site and pass.
pub const MAX_CANDIDATES_PER_SITE: usize = 512;

/// Floor for the per-site attempt probability.
pub const MIN_ATTEMPT_PROBABILITY: f64 = 1.0 / 16.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SiteStats {
    pub total: u64,
    pub failed: u64,
}

/// Campaign-wide record of how often substituting at each site paid off.
#[derive(Debug, Clone, Default)]
pub struct OperandStats {
    sites: BTreeMap<SiteId, SiteStats>,
}

impl OperandStats {
    pub fn get(&self, s: SiteId) -> SiteStats {
        self.sites.get(&s).copied().unwrap_or_default()
    }

    /// Probability of fuzzing site `s` on the next pass.
    pub fn attempt_probability(&self, s: SiteId) -> f64 {
        let st = self.get(s);
        (1.0 - st.failed as f64 / (st.total + 1) as f64).max(MIN_ATTEMPT_PROBABILITY)
    }

    pub fn record(&mut self, s: SiteId, success: bool) {
        let st = self.sites.entry(s).or_default();
        st.total += 1;
        if !success {
            st.failed += 1;
        }
    }
}

/// A substitution that produced new coverage.
#[derive(Debug, Clone)]
pub struct OperandChild {
    pub input: Vec<u8>,
    pub coverage: CoverageTrace,
    pub steps: u64,
    pub site: SiteId,
}

fn neighbours(v: &Operand, kind: CmpKind) -> Vec<Operand> {
    let mut out = vec![*v];
    if kind == CmpKind::Compare && v.len() <= 8 {
        let size = v.len() as u8;
        out.push(Operand::from_u64(v.as_u64().wrapping_add(1), size));
        out.push(Operand::from_u64(v.as_u64().wrapping_sub(1), size));
    }
    out
}

/// Candidate writes `(offset, bytes)` for one operand of one instance.
fn candidates_for(
    inst: &Instance,
    op: OpSel,
    dep: &ByteMask,
    known: Option<&crate::i2s::I2SInfo>,
    input: &[u8],
    out: &mut BTreeSet<(usize, Vec<u8>)>,
) {
    let n = input.len();
    let wanted = inst.operand(op.other());
    let values = neighbours(wanted, inst.kind);
    let mut push = |p: usize, b: Vec<u8>| {
        if p + b.len() <= n && input[p..p + b.len()] != b[..] {
            out.insert((p, b));
        }
    };
    if let Some(info) = known {
        for v in &values {
            if let Some(b) = encode(v, info.encoding, info.len) {
                if b.len() == info.len {
                    push(info.offset, b);
                }
            }
        }
        return;
    }
    for b in dep.ones() {
        for enc in Encoding::ALL {
            for v in &values {
                for w in enc.widths(v, inst.kind) {
                    let Some(bytes) = encode(v, enc, w) else {
                        continue;
                    };
                    let l = bytes.len();
                    for p in b.saturating_sub(l - 1)..=b {
                        push(p, bytes.clone());
                    }
                }
            }
        }
    }
}

fn site_candidates(
    ct: &ComparisonTable,
    deps: &DepsMap,
    i2s: &I2SRecord,
    s: SiteId,
    input: &[u8],
) -> Vec<(usize, Vec<u8>)> {
    let mut set = BTreeSet::new();
    let Some(rec) = ct.get(s) else {
        return Vec::new();
    };
    for (j, inst) in rec.instances.iter().enumerate() {
        for op in OpSel::BOTH {
            let Some(dep) = deps.get(s, j, op).filter(|m| !m.is_empty()) else {
                continue;
            };
            let known = i2s.get(&(s, j)).and_then(|e| e.get(op));
            candidates_for(inst, op, dep, known, input, &mut set);
        }
    }
    set.into_iter().take(MAX_CANDIDATES_PER_SITE).collect()
}

/// Runs substitutions for every site, in first-execution order, that
/// passes its attempt draw. Returns the inputs that hit new coverage.
#[allow(clippy::too_many_arguments)]
pub fn fuzz_operands(
    exec: &mut Executor<'_>,
    input: &[u8],
    ct: &ComparisonTable,
    deps: &DepsMap,
    i2s: &I2SRecord,
    patches: &PatchSet,
    stats: &mut OperandStats,
    rng: &mut impl Rng,
) -> Vec<OperandChild> {
    let mut found = Vec::new();
    let mut buf = input.to_vec();
    for s in sites_by_exec_order(ct) {
        if !rng.gen_bool(stats.attempt_probability(s)) {
            continue;
        }
        let cands = site_candidates(ct, deps, i2s, s, input);
        if cands.is_empty() {
            continue;
        }
        let mut success = false;
        for (p, bytes) in cands {
            let l = bytes.len();
            buf[p..p + l].copy_from_slice(&bytes);
            let (r, v) = exec.run_and_observe(&buf, patches, InstrMode::Light, Stage::Surgical);
            if let Verdict::Interesting(_) = v {
                success = true;
                found.push(OperandChild {
                    input: buf.clone(),
                    coverage: r.coverage,
                    steps: r.steps,
                    site: s,
                });
            }
            buf[p..p + l].copy_from_slice(&input[p..p + l]);
        }
        stats.record(s, success);
    }
    found
}
