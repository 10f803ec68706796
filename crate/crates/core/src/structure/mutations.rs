use rand::seq::SliceRandom;
use rand::Rng;

use super::chunk::{find_chunk_end, ChunkSpan};
use crate::havoc::MAX_INPUT_LEN;
use crate::tags::{Edit, Tag};
use crate::target::SiteId;

/// A tagged queue entry that can contribute chunks.
#[derive(Debug, Clone, Copy)]
pub struct Donor<'a> {
    pub input: &'a [u8],
    pub tags: &'a [Tag],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChunkKind {
    Addition,
    Deletion,
    Splicing,
}

/// Result of a chunk mutation: the child and how its tags follow.
#[derive(Debug, Clone)]
pub struct ChunkMutation {
    pub kind: ChunkKind,
    pub input: Vec<u8>,
    pub edit: Edit,
}

const DONOR_ATTEMPTS: usize = 8;

fn run_starts(tags: &[Tag], pred: impl Fn(&Tag) -> bool) -> Vec<usize> {
    (0..tags.len())
        .filter(|&i| tags[i].is_tagged() && (i == 0 || tags[i - 1].id != tags[i].id) && pred(&tags[i]))
        .collect()
}

/// Picks a donor chunk whose first byte satisfies `pred`.
fn donor_chunk(
    donors: &[Donor],
    pred: impl Fn(&Tag) -> bool,
    pr_extend: f64,
    rng: &mut impl Rng,
) -> Option<(Vec<u8>, Vec<Tag>)> {
    for _ in 0..DONOR_ATTEMPTS {
        let d = donors.choose(rng)?;
        if d.tags.len() != d.input.len() {
            continue;
        }
        let starts = run_starts(d.tags, &pred);
        let Some(&s) = starts.choose(rng) else {
            continue;
        };
        let e = find_chunk_end(d.tags, s, pr_extend, rng);
        return Some((d.input[s..=e].to_vec(), d.tags[s..=e].to_vec()));
    }
    None
}

/// Inserts a donor chunk that shares the victim's leading parent, before
/// or after the victim.
pub fn chunk_addition(
    input: &[u8],
    span: ChunkSpan,
    donors: &[Donor],
    pr_extend: f64,
    rng: &mut impl Rng,
) -> Option<ChunkMutation> {
    let parent: SiteId = span.lead_parent;
    let (bytes, tags) = donor_chunk(donors, |t| t.parent == parent, pr_extend, rng)?;
    if input.len() + bytes.len() > MAX_INPUT_LEN {
        return None;
    }
    let at = if rng.gen() { span.start } else { span.end + 1 };
    let mut out = input.to_vec();
    out.splice(at..at, bytes);
    Some(ChunkMutation {
        kind: ChunkKind::Addition,
        input: out,
        edit: Edit::Insert { at, tags },
    })
}

/// Removes the chunk unless it covers the whole input.
pub fn chunk_deletion(input: &[u8], span: ChunkSpan) -> Option<ChunkMutation> {
    if span.len() >= input.len() {
        return None;
    }
    let mut out = input.to_vec();
    out.drain(span.start..=span.end);
    Some(ChunkMutation {
        kind: ChunkKind::Deletion,
        input: out,
        edit: Edit::Delete {
            start: span.start,
            end: span.end + 1,
        },
    })
}

/// Replaces the chunk with a donor chunk led by the same tag.
pub fn chunk_splicing(
    input: &[u8],
    span: ChunkSpan,
    donors: &[Donor],
    pr_extend: f64,
    rng: &mut impl Rng,
) -> Option<ChunkMutation> {
    let lead = span.lead_tag;
    let (bytes, tags) = donor_chunk(donors, |t| t.id == lead, pr_extend, rng)?;
    if input.len() - span.len() + bytes.len() > MAX_INPUT_LEN {
        return None;
    }
    let mut out = input.to_vec();
    out.splice(span.start..=span.end, bytes);
    Some(ChunkMutation {
        kind: ChunkKind::Splicing,
        input: out,
        edit: Edit::Replace {
            start: span.start,
            end: span.end + 1,
            tags,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tags::{derive_tags, TagArray, TagKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn field(id: u16, ts: u32, parent: u16, len: usize) -> Vec<Tag> {
        vec![
            Tag {
                id: SiteId(id),
                ts,
                parent: SiteId(parent),
                ..Tag::default()
            };
            len
        ]
    }

    /// Two chunk types: 8-byte A chunks (type 1, body 2) and 12-byte B
    /// chunks (type 3, body 4), all led by tags whose parent is 9.
    fn chunk_a() -> Vec<Tag> {
        [field(1, 0, 9, 4), field(2, 1, 1, 4)].concat()
    }

    fn chunk_b() -> Vec<Tag> {
        [field(3, 0, 9, 4), field(4, 1, 3, 8)].concat()
    }

    #[test]
    fn deletion_preserves_surrounding_tags() {
        let tags = [chunk_a(), chunk_b(), chunk_a()].concat();
        let input: Vec<u8> = (0..tags.len() as u8).collect();
        let span = ChunkSpan::new(&tags, 8, 19);
        let m = chunk_deletion(&input, span).unwrap();
        assert_eq!(m.input.len(), 16);
        assert_eq!(m.input[8], 20);
        let parent = TagArray { tags, kind: TagKind::Derived };
        let child = derive_tags(&parent, &m.edit).unwrap();
        assert_eq!(child.tags, [chunk_a(), chunk_a()].concat());
        assert!(chunk_deletion(&input[..8], ChunkSpan::new(&parent.tags, 0, 7)).is_none());
    }

    #[test]
    fn splicing_swaps_same_type_chunk() {
        let tags = [chunk_a(), chunk_b()].concat();
        let input = vec![0u8; 20];
        let donor_tags = [chunk_b(), chunk_a()].concat();
        let donor_input: Vec<u8> = (100..120).collect();
        let donors = [Donor { input: &donor_input, tags: &donor_tags }];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let span = ChunkSpan::new(&tags, 0, 7);
        let m = chunk_splicing(&input, span, &donors, 0.0, &mut rng).unwrap();
        assert_eq!(&m.input[..8], &donor_input[12..20]);
        assert_eq!(m.input.len(), 20);
    }

    #[test]
    fn splicing_changes_length_by_size_difference() {
        let tags = [chunk_a(), chunk_b()].concat();
        let input = vec![0u8; 20];
        let donor_tags = [chunk_a(), field(3, 0, 9, 4), field(4, 1, 3, 40)].concat();
        let donor_input = vec![7u8; donor_tags.len()];
        let donors = [Donor { input: &donor_input, tags: &donor_tags }];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let span = ChunkSpan::new(&tags, 8, 19);
        let m = chunk_splicing(&input, span, &donors, 0.0, &mut rng).unwrap();
        assert_eq!(m.input.len(), 20 + 44 - 12);
        let parent = TagArray { tags, kind: TagKind::Derived };
        assert_eq!(derive_tags(&parent, &m.edit).unwrap().len(), m.input.len());
    }

    #[test]
    fn addition_uses_matching_parent() {
        let tags = chunk_a();
        let input = vec![1u8; 8];
        // the 5-tagged chunk has the wrong parent and must never be picked
        let donor_tags = [field(5, 0, 7, 4), chunk_b()].concat();
        let donor_input = vec![2u8; donor_tags.len()];
        let donors = [Donor { input: &donor_input, tags: &donor_tags }];
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let span = ChunkSpan::new(&tags, 0, 7);
        let mut placements = [0; 2];
        for _ in 0..50 {
            let m = chunk_addition(&input, span, &donors, 0.0, &mut rng).unwrap();
            assert_eq!(m.input.len(), 20);
            let Edit::Insert { at, tags: t } = &m.edit else { panic!() };
            assert_eq!(t, &chunk_b());
            placements[(*at == 8) as usize] += 1;
        }
        assert!(placements[0] > 0 && placements[1] > 0);
    }

    #[test]
    fn no_compatible_donor() {
        let tags = chunk_a();
        let donor_tags = field(5, 0, 7, 4);
        let donors = [Donor { input: &[0; 4], tags: &donor_tags }];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let span = ChunkSpan::new(&tags, 0, 7);
        assert!(chunk_addition(&[0; 8], span, &donors, 0.5, &mut rng).is_none());
        assert!(chunk_splicing(&[0; 8], span, &donors, 0.5, &mut rng).is_none());
        assert!(chunk_addition(&[0; 8], span, &[], 0.5, &mut rng).is_none());
    }
}
