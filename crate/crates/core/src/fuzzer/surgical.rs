use rand::Rng;

use crate::checksum::{
    fix_checksums, mark_checksums, patch_all_checksums, topo_order, ChecksumIndex, TopoOrder,
};
use crate::cmplog::sites_by_exec_order;
use crate::coverage::CoverageTrace;
use crate::deps::get_deps;
use crate::exec::Executor;
use crate::i2s::{detect_i2s, I2SRecord};
use crate::operands::{fuzz_operands, OperandStats};
use crate::tags::{place_all_tags, TagArray, TagContext};
use crate::target::{Outcome, SiteId};

/// Feature switches for the surgical stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SurgicalFeatures {
    pub operand_fuzz: bool,
    pub checksums: bool,
}

impl Default for SurgicalFeatures {
    fn default() -> Self {
        SurgicalFeatures {
            operand_fuzz: true,
            checksums: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChildOrigin {
    BitFlip,
    Operand(SiteId),
}

/// An input with new coverage found during the stage. Its tags are the
/// entry's, since every such child has the entry's length.
#[derive(Debug, Clone)]
pub struct SurgicalChild {
    pub input: Vec<u8>,
    pub coverage: CoverageTrace,
    pub steps: u64,
    pub origin: ChildOrigin,
}

#[derive(Debug, Clone)]
pub struct SurgicalOutcome {
    /// The repaired input when repair succeeded, otherwise the original.
    pub input: Vec<u8>,
    pub tags: TagArray,
    pub fix_ok: bool,
    pub children: Vec<SurgicalChild>,
    pub baseline_outcome: Outcome,
    pub baseline_steps: u64,
    pub order: TopoOrder,
}

/// Dependency analysis, operand substitution, tagging and checksum
/// handling for one input.
pub fn surgical_stage(
    exec: &mut Executor<'_>,
    ci: &mut ChecksumIndex,
    stats: &mut OperandStats,
    input: &[u8],
    features: SurgicalFeatures,
    rng: &mut impl Rng,
) -> SurgicalOutcome {
    let patches = ci.patches().clone();
    let d = get_deps(exec, input, &patches);

    let mut r = I2SRecord::new();
    for s in sites_by_exec_order(&d.ct) {
        let n = d.ct.get(s).map_or(0, |rec| rec.instances.len());
        for j in 0..n {
            let e = detect_i2s(&d.ct, &d.deps, s, j, input);
            if features.checksums {
                mark_checksums(&d.ct, &d.deps, s, j, &e, ci);
            }
            r.insert((s, j), e);
        }
    }

    let mut children: Vec<SurgicalChild> = d
        .discovered
        .into_iter()
        .map(|x| SurgicalChild {
            input: x.input,
            coverage: x.coverage,
            steps: x.steps,
            origin: ChildOrigin::BitFlip,
        })
        .collect();
    if features.operand_fuzz {
        let found = fuzz_operands(exec, input, &d.ct, &d.deps, &r, &patches, stats, rng);
        children.extend(found.into_iter().map(|c| SurgicalChild {
            input: c.input,
            coverage: c.coverage,
            steps: c.steps,
            origin: ChildOrigin::Operand(c.site),
        }));
    }

    let order = if features.checksums {
        topo_order(&d.ct, &d.deps, &r, ci)
    } else {
        TopoOrder::default()
    };
    let tags = place_all_tags(
        input.len(),
        &TagContext {
            ct: &d.ct,
            deps: &d.deps,
            ci,
            r: &r,
            order: &order,
        },
    );

    let (out, fix_ok) = if features.checksums {
        let fix = fix_checksums(exec, ci, input, &tags, &order);
        patch_all_checksums(ci);
        if fix.ok {
            (fix.input, true)
        } else {
            (input.to_vec(), false)
        }
    } else {
        (input.to_vec(), true)
    };

    SurgicalOutcome {
        input: out,
        tags,
        fix_ok,
        children,
        baseline_outcome: d.baseline_outcome,
        baseline_steps: d.baseline_steps,
        order,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checksum::ChecksumStatus;
    use crate::target::running_example::CMP_D;
    use crate::target::{run_target, InstrMode, PatchSet, RunningExample};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SEED: [u8; 8] = [0x0E, 0x00, 0x02, 0x00, 0x41, 0x41, 0x36, 0x0C];

    #[test]
    fn second_pass_confirms_running_example_checksum() {
        let t = RunningExample;
        let mut ex = Executor::new(&t);
        let mut ci = ChecksumIndex::default();
        let mut st = OperandStats::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = SurgicalFeatures::default();
        let first = surgical_stage(&mut ex, &mut ci, &mut st, &SEED, f, &mut rng);
        assert!(first.fix_ok);
        assert!(ci.is_patched(CMP_D));
        assert_eq!(ci.get(CMP_D).unwrap().status, ChecksumStatus::Candidate);

        let mut broken = SEED;
        broken[4] = 42;
        let second = surgical_stage(&mut ex, &mut ci, &mut st, &broken, f, &mut rng);
        assert!(second.fix_ok);
        assert_eq!(ci.get(CMP_D).unwrap().status, ChecksumStatus::Confirmed);
        let fold = crate::target::running_example::fold_checksum(&second.input[..6]);
        assert_eq!(&second.input[6..8], &fold.to_le_bytes());
        let unpatched = run_target(&t, &second.input, &PatchSet::new(), InstrMode::Light);
        let patched = run_target(&t, &broken, ci.patches(), InstrMode::Light);
        assert_eq!(unpatched.edges, patched.edges);
    }

    #[test]
    fn no_comparisons_no_tags() {
        struct Inert;
        impl crate::target::Target for Inert {
            fn name(&self) -> &'static str {
                "inert"
            }
            fn description(&self) -> &'static str {
                ""
            }
            fn run(&self, _: &[u8], t: &mut crate::target::Tracer<'_>) -> crate::target::Status {
                t.block(1);
                crate::target::Status::Ok
            }
        }
        let t = Inert;
        let mut ex = Executor::new(&t);
        ex.run_and_observe(b"xyz", &PatchSet::new(), InstrMode::Light, crate::coverage::Stage::Structure);
        let mut ci = ChecksumIndex::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let o = surgical_stage(
            &mut ex,
            &mut ci,
            &mut OperandStats::default(),
            b"xyz",
            SurgicalFeatures::default(),
            &mut rng,
        );
        assert!(o.fix_ok && !o.tags.any_tagged() && o.children.is_empty());
        assert!(ci.is_empty());
    }
}
