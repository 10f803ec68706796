use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::field::{go_left_while_same_tag, go_right_while_same_tag};
use crate::tags::Tag;
use crate::target::SiteId;

/// Inclusive byte range of a chunk and the tag it starts with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkSpan {
    pub start: usize,
    pub end: usize,
    pub lead_tag: SiteId,
    pub lead_parent: SiteId,
}

impl ChunkSpan {
    pub fn new(tags: &[Tag], start: usize, end: usize) -> Self {
        ChunkSpan {
            start,
            end,
            lead_tag: tags[start].id,
            lead_parent: tags[start].parent,
        }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// End of the chunk whose first field starts at `k`.
///
/// Follows adjacent fields checked no earlier than the one at `k`, then
/// bytes tagged by the comparison that preceded it, and with probability
/// `pr_extend` untagged bytes and further later-checked fields.
pub fn find_chunk_end(tags: &[Tag], k: usize, pr_extend: f64, rng: &mut impl Rng) -> usize {
    let n = tags.len();
    let ts = tags[k].ts;
    let later = |e: usize| e + 1 < n && tags[e + 1].is_tagged() && tags[e + 1].ts >= ts;
    let mut end = go_right_while_same_tag(tags, k);
    while later(end) {
        end = find_chunk_end(tags, end + 1, pr_extend, rng);
    }
    let parent = tags[k].parent;
    while !parent.is_none() && end + 1 < n && tags[end + 1].id == parent {
        end += 1;
    }
    if rng.gen_bool(pr_extend) {
        while end + 1 < n && !tags[end + 1].is_tagged() {
            end += 1;
        }
        while later(end) {
            end = find_chunk_end(tags, end + 1, pr_extend, rng);
        }
    }
    end
}

/// A random chunk: with probability `pr_chunk12` grown from a random
/// position, otherwise one of the chunks led by a randomly chosen tag.
pub fn get_random_chunk(
    tags: &[Tag],
    pr_chunk12: f64,
    pr_extend: f64,
    rng: &mut impl Rng,
) -> Option<ChunkSpan> {
    let n = tags.len();
    if !tags.iter().any(Tag::is_tagged) {
        return None;
    }
    if rng.gen_bool(pr_chunk12) {
        let r = rng.gen_range(0..n);
        let k = (0..n).map(|i| (r + i) % n).find(|&i| tags[i].is_tagged())?;
        let start = go_left_while_same_tag(tags, k);
        let end = find_chunk_end(tags, k, pr_extend, rng);
        return Some(ChunkSpan::new(tags, start, end));
    }
    let ids: Vec<SiteId> = tags
        .iter()
        .filter(|t| t.is_tagged())
        .map(|t| t.id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let id = *ids.choose(rng)?;
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < n {
        let Some(s) = (start..n).find(|&i| tags[i].id == id) else {
            break;
        };
        let end = find_chunk_end(tags, s, pr_extend, rng);
        chunks.push(ChunkSpan::new(tags, s, end));
        start = end + 1;
    }
    chunks.choose(rng).copied()
}
