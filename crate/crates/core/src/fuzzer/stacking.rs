use rand::Rng;

use super::schedule::{choose_step, stack_size, Step};
use crate::checksum::{fix_checksums, patch_all_checksums, ChecksumIndex, TopoOrder};
use crate::coverage::{CoverageTrace, Stage};
use crate::exec::{Executor, Verdict};
use crate::havoc::havoc_mutate;
use crate::structure::{
    chunk_addition, chunk_deletion, chunk_splicing, field_mutation, get_random_chunk, Donor,
    StructParams,
};
use crate::tags::{derive_tags, Edit, TagArray};
use crate::target::InstrMode;

/// Step mix for stacked mutations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackParams {
    pub pr_field: f64,
    pub pr_chunk: f64,
    pub structure: StructParams,
}

impl Default for StackParams {
    fn default() -> Self {
        StackParams {
            pr_field: 1.0 / 15.0,
            pr_chunk: 1.0 / 15.0,
            structure: StructParams::default(),
        }
    }
}

fn chunk_step(
    input: &[u8],
    tags: &TagArray,
    donors: &[Donor],
    p: &StructParams,
    rng: &mut impl Rng,
) -> Option<(Vec<u8>, Edit)> {
    let span = get_random_chunk(&tags.tags, p.pr_chunk12, p.pr_extend, rng)?;
    let m = match rng.gen_range(0..3) {
        0 => chunk_addition(input, span, donors, p.pr_extend, rng),
        1 => chunk_deletion(input, span),
        _ => chunk_splicing(input, span, donors, p.pr_extend, rng),
    }?;
    Some((m.input, m.edit))
}

/// Applies a stack of `1..=256` mutations. Tags follow the edits while
/// they can; once lost, remaining steps are havoc.
pub fn mutate_stack(
    input: &[u8],
    tags: Option<&TagArray>,
    donors: &[Donor],
    p: &StackParams,
    rng: &mut impl Rng,
) -> (Vec<u8>, Option<TagArray>) {
    let mut buf = input.to_vec();
    let mut tags = tags.cloned();
    for _ in 0..stack_size(rng) {
        let step = choose_step(p.pr_field, p.pr_chunk, rng);
        let edit = match (step, tags.as_ref()) {
            (Step::Field, Some(t)) => field_mutation(&t.tags, &mut buf, p.structure.pr_i2s, rng)
                .map(|_| Edit::InPlace),
            (Step::Chunk, Some(t)) => chunk_step(&buf, t, donors, &p.structure, rng).map(|(b, e)| {
                buf = b;
                e
            }),
            _ => None,
        };
        let edit = match edit {
            Some(e) => e,
            None => havoc_mutate(&mut buf, rng),
        };
        tags = tags.and_then(|t| derive_tags(&t, &edit));
    }
    (buf, tags)
}

#[derive(Debug, Clone)]
pub struct StackChild {
    pub input: Vec<u8>,
    pub tags: Option<TagArray>,
    pub coverage: CoverageTrace,
    pub steps: u64,
    pub exec: u64,
}

#[derive(Debug, Clone)]
pub struct CrashFind {
    /// Index into the executor's crash list.
    pub index: usize,
    pub repaired: Option<Vec<u8>>,
}

#[derive(Debug, Clone, Default)]
pub struct StageFinds {
    pub children: Vec<StackChild>,
    pub crashes: Vec<CrashFind>,
}

/// Runs `energy` stacked children of one entry. `stop` is polled with the
/// execution count before each child.
#[allow(clippy::too_many_arguments)]
pub fn structure_stage(
    exec: &mut Executor<'_>,
    ci: &mut ChecksumIndex,
    input: &[u8],
    tags: Option<&TagArray>,
    donors: &[Donor],
    energy: usize,
    p: &StackParams,
    repair_crashes: bool,
    stop: &dyn Fn(u64) -> bool,
    rng: &mut impl Rng,
) -> StageFinds {
    let mut finds = StageFinds::default();
    for _ in 0..energy {
        if stop(exec.execs) {
            break;
        }
        let (child, ctags) = mutate_stack(input, tags, donors, p, rng);
        let patches = ci.patches().clone();
        let (r, v) = exec.run_and_observe(&child, &patches, InstrMode::Light, Stage::Structure);
        match v {
            Verdict::Interesting(_) => finds.children.push(StackChild {
                input: child,
                tags: ctags,
                coverage: r.coverage,
                steps: r.steps,
                exec: exec.execs,
            }),
            Verdict::NewCrash => {
                let index = exec.crashes.len() - 1;
                let repaired = match (&ctags, repair_crashes) {
                    (Some(t), true) if !ci.patches().is_empty() => {
                        let fix = fix_checksums(exec, ci, &child, t, &TopoOrder::default());
                        patch_all_checksums(ci);
                        fix.ok.then_some(fix.input)
                    }
                    _ => None,
                };
                finds.crashes.push(CrashFind { index, repaired });
            }
            _ => {}
        }
    }
    finds
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tags::{Tag, TagKind};
    use crate::target::SiteId;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tagged(len: usize) -> TagArray {
        let tags = (0..len)
            .map(|i| Tag {
                id: SiteId(1 + (i / 4) as u16),
                ts: (i / 4) as u32,
                ..Tag::default()
            })
            .collect();
        TagArray { tags, kind: TagKind::Surgical }
    }

    #[test]
    fn tags_follow_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let input = vec![0x11u8; 32];
        let t = tagged(32);
        let donors = [Donor { input: &input, tags: &t.tags }];
        let p = StackParams { pr_field: 0.4, pr_chunk: 0.4, ..StackParams::default() };
        let mut kept = 0;
        for _ in 0..200 {
            let (out, tags) = mutate_stack(&input, Some(&t), &donors, &p, &mut rng);
            assert!(!out.is_empty());
            if let Some(tags) = tags {
                assert_eq!(tags.len(), out.len());
                kept += 1;
            }
        }
        assert!(kept > 0);
    }

    #[test]
    fn untagged_entries_only_havoc() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, tags) = mutate_stack(b"abcdefgh", None, &[], &StackParams::default(), &mut rng);
        assert!(tags.is_none());
    }
}
