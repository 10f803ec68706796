use rand::seq::SliceRandom;
use rand::Rng;

use crate::havoc::{in_place_op, HavocKind, HavocOp};
use crate::tags::Tag;

/// Recursion limit when chaining consecutive-timestamp segments.
pub const MAX_FIELD_DEPTH: u32 = 8;

/// Inclusive byte range of a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldSpan {
    pub start: usize,
    pub end: usize,
}

/// Two bytes carry the same tag when site and role flags agree.
fn same_tag(a: &Tag, b: &Tag) -> bool {
    a.is_tagged() && a.id == b.id && a.flags == b.flags
}

/// Last index of the run of bytes sharing the tag of `tags[k]`.
pub fn go_right_while_same_tag(tags: &[Tag], k: usize) -> usize {
    let mut e = k;
    while e + 1 < tags.len() && same_tag(&tags[e + 1], &tags[k]) {
        e += 1;
    }
    e
}

/// First index of the run of bytes sharing the tag of `tags[k]`.
pub fn go_left_while_same_tag(tags: &[Tag], k: usize) -> usize {
    let (id, flags) = (tags[k].id, tags[k].flags);
    let mut s = k;
    while s > 0 && tags[s - 1].id == id && tags[s - 1].flags == flags {
        s -= 1;
    }
    s
}

/// End of the field starting at `k`: a same-tag run, extended over
/// following runs whose timestamps increase by one.
pub fn find_field_end(tags: &[Tag], k: usize, depth: u32) -> usize {
    let end = go_right_while_same_tag(tags, k);
    if depth < MAX_FIELD_DEPTH
        && end + 1 < tags.len()
        && tags[end + 1].is_tagged()
        && tags[end + 1].ts == tags[k].ts + 1
    {
        return find_field_end(tags, end + 1, depth + 1);
    }
    end
}

/// The twelve length-preserving field mutations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldOp {
    BitFlip,
    ByteFlip,
    RandomByte,
    Interesting8,
    Interesting16,
    Interesting32,
    Arith8,
    Arith16,
    Arith32,
    Swap,
    Shuffle,
    Reverse,
}

impl FieldOp {
    pub const ALL: [FieldOp; 12] = [
        FieldOp::BitFlip,
        FieldOp::ByteFlip,
        FieldOp::RandomByte,
        FieldOp::Interesting8,
        FieldOp::Interesting16,
        FieldOp::Interesting32,
        FieldOp::Arith8,
        FieldOp::Arith16,
        FieldOp::Arith32,
        FieldOp::Swap,
        FieldOp::Shuffle,
        FieldOp::Reverse,
    ];

    fn min_len(self) -> usize {
        match self {
            FieldOp::Interesting16 | FieldOp::Arith16 | FieldOp::Swap | FieldOp::Shuffle | FieldOp::Reverse => 2,
            FieldOp::Interesting32 | FieldOp::Arith32 => 4,
            _ => 1,
        }
    }

    fn havoc_kind(self) -> Option<HavocKind> {
        Some(match self {
            FieldOp::BitFlip => HavocKind::BitFlip,
            FieldOp::ByteFlip => HavocKind::ByteFlip,
            FieldOp::RandomByte => HavocKind::RandomByte,
            FieldOp::Interesting8 => HavocKind::Interesting8,
            FieldOp::Interesting16 => HavocKind::Interesting16,
            FieldOp::Interesting32 => HavocKind::Interesting32,
            FieldOp::Arith8 => HavocKind::Arith8,
            FieldOp::Arith16 => HavocKind::Arith16,
            FieldOp::Arith32 => HavocKind::Arith32,
            FieldOp::Swap => HavocKind::Swap,
            FieldOp::Shuffle | FieldOp::Reverse => return None,
        })
    }
}

/// Applies one of the twelve operations that fits the span.
pub fn mutate_field(input: &mut Vec<u8>, span: FieldSpan, rng: &mut impl Rng) -> FieldOp {
    let len = span.end + 1 - span.start;
    let ops: Vec<FieldOp> = FieldOp::ALL.into_iter().filter(|o| o.min_len() <= len).collect();
    let op = *ops.choose(rng).unwrap();
    match op.havoc_kind() {
        Some(kind) => {
            let h: HavocOp = in_place_op(kind, input, span.start, span.end, rng).unwrap();
            h.apply(input);
        }
        None if op == FieldOp::Shuffle => input[span.start..=span.end].shuffle(rng),
        None => input[span.start..=span.end].reverse(),
    }
    op
}

/// Picks a random position, moves to the field it belongs to and mutates
/// that field. Fields starting with an input-to-state byte are mutated
/// only with probability `pr_i2s`. Returns the mutated span, if any.
pub fn field_mutation(
    tags: &[Tag],
    input: &mut Vec<u8>,
    pr_i2s: f64,
    rng: &mut impl Rng,
) -> Option<FieldSpan> {
    if input.is_empty() || tags.len() != input.len() {
        return None;
    }
    let b = rng.gen_range(0..input.len());
    for i in b..input.len() {
        if !tags[i].is_tagged() {
            continue;
        }
        let start = go_left_while_same_tag(tags, i);
        if !tags[start].is_i2s() || rng.gen_bool(pr_i2s) {
            let span = FieldSpan {
                start,
                end: find_field_end(tags, start, 0),
            };
            mutate_field(input, span, rng);
            return Some(span);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::SiteId;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(id: u16, ts: u32) -> Tag {
        Tag {
            id: SiteId(id),
            ts,
            ..Tag::default()
        }
    }

    #[test]
    fn single_comparison_field() {
        let tags = [t(9, 0), t(1, 3), t(1, 3), t(1, 3), t(1, 3), t(2, 9)];
        assert_eq!(find_field_end(&tags, 1, 0), 4);
    }

    #[test]
    fn consecutive_timestamps_field() {
        let tags = [t(0xA, 5), t(0xE, 6), t(0xF, 7), t(0xB, 8), t(0xC, 2)];
        assert_eq!(find_field_end(&tags, 0, 0), 3);
    }

    #[test]
    fn combined_pattern() {
        let tags = [t(1, 5), t(1, 5), t(2, 6), t(3, 7), t(3, 7), t(4, 1)];
        assert_eq!(find_field_end(&tags, 0, 0), 4);
    }

    #[test]
    fn recursion_is_capped() {
        let tags: Vec<Tag> = (0..12).map(|i| t(i as u16 + 1, i)).collect();
        assert_eq!(find_field_end(&tags, 0, 0), 8);
        assert_eq!(find_field_end(&tags, 3, 0), 11);
    }

    #[test]
    fn untagged_input_unchanged() {
        let tags = vec![Tag::default(); 6];
        let mut input = b"abcdef".to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert!(field_mutation(&tags, &mut input, 1.0, &mut rng).is_none());
        }
        assert_eq!(input, b"abcdef");
    }

    #[test]
    fn mutation_stays_in_field() {
        // running example layout: id, size, data, checksum
        let tags = [t(1, 0), t(1, 0), t(2, 1), t(2, 1), t(4, 3), t(4, 3), t(5, 9), t(5, 9)];
        let seed = [0x0E, 0x00, 0x02, 0x00, 0x41, 0x41, 0x36, 0x0C];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut seen_data = 0;
        for _ in 0..500 {
            let mut input = seed.to_vec();
            let span = field_mutation(&tags, &mut input, 1.0, &mut rng).unwrap();
            for (i, (a, b)) in input.iter().zip(&seed).enumerate() {
                if a != b {
                    assert!(i >= span.start && i <= span.end);
                }
            }
            if span == (FieldSpan { start: 4, end: 5 }) {
                seen_data += 1;
            }
        }
        assert!(seen_data > 0);
    }

    #[test]
    fn i2s_fields_are_skipped_at_zero_probability() {
        let mut tags = [t(1, 0), t(1, 0), t(2, 5)];
        tags[0].flags = crate::tags::FLAG_I2S;
        tags[1].flags = crate::tags::FLAG_I2S;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let mut input = vec![0u8; 3];
            if let Some(s) = field_mutation(&tags, &mut input, 0.0, &mut rng) {
                assert_eq!(s, FieldSpan { start: 2, end: 2 });
            }
        }
    }

    proptest! {
        #[test]
        fn left_retraction_idempotent_and_ends_progress(ids in proptest::collection::vec(0u16..4, 1..40), k in 0usize..40) {
            let tags: Vec<Tag> = ids.iter().enumerate().map(|(i, &id)| if id == 0 { Tag::default() } else { t(id, i as u32 / 3) }).collect();
            let k = k % tags.len();
            let s = go_left_while_same_tag(&tags, k);
            prop_assert_eq!(go_left_while_same_tag(&tags, s), s);
            if tags[k].is_tagged() {
                prop_assert!(find_field_end(&tags, k, 0) >= k);
            }
        }
    }
}
