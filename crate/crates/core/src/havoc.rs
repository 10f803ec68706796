//! AFL-style random mutations.

use rand::Rng;

use crate::tags::Edit;

pub const INTERESTING_8: [i8; 9] = [-128, -1, 0, 1, 16, 32, 64, 100, 127];
pub const INTERESTING_16: [i16; 10] = [-32768, -129, 128, 255, 256, 512, 1000, 1024, 4096, 32767];
pub const INTERESTING_32: [i32; 8] = [
    -2147483648,
    -100663046,
    -32769,
    32768,
    65535,
    65536,
    100663045,
    2147483647,
];

/// Largest magnitude added or subtracted by arithmetic mutations.
pub const ARITH_MAX: u32 = 35;

/// Inputs never grow past this size.
pub const MAX_INPUT_LEN: usize = 1 << 16;

const BLOCK_MAX: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HavocKind {
    BitFlip,
    ByteFlip,
    Interesting8,
    Interesting16,
    Interesting32,
    Arith8,
    Arith16,
    Arith32,
    RandomByte,
    DeleteRange,
    CloneRange,
    OverwriteRange,
    Swap,
}

impl HavocKind {
    pub const ALL: [HavocKind; 13] = [
        HavocKind::BitFlip,
        HavocKind::ByteFlip,
        HavocKind::Interesting8,
        HavocKind::Interesting16,
        HavocKind::Interesting32,
        HavocKind::Arith8,
        HavocKind::Arith16,
        HavocKind::Arith32,
        HavocKind::RandomByte,
        HavocKind::DeleteRange,
        HavocKind::CloneRange,
        HavocKind::OverwriteRange,
        HavocKind::Swap,
    ];
}

/// Fully resolved mutation: applying it needs no randomness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HavocOp {
    BitFlip { pos: usize, bit: u8 },
    ByteFlip { pos: usize },
    /// Writes `bytes` at `pos` (interesting values, arithmetic results,
    /// random bytes).
    Set { pos: usize, bytes: Vec<u8> },
    DeleteRange { pos: usize, len: usize },
    /// Inserts `bytes` before `pos`.
    Insert { pos: usize, bytes: Vec<u8> },
    Swap { a: usize, b: usize },
}

impl HavocOp {
    /// Length change caused by the operation.
    pub fn delta(&self) -> isize {
        match self {
            HavocOp::DeleteRange { len, .. } => -(*len as isize),
            HavocOp::Insert { bytes, .. } => bytes.len() as isize,
            _ => 0,
        }
    }

    pub fn apply(&self, buf: &mut Vec<u8>) {
        match self {
            HavocOp::BitFlip { pos, bit } => buf[*pos] ^= 1 << bit,
            HavocOp::ByteFlip { pos } => buf[*pos] ^= 0xff,
            HavocOp::Set { pos, bytes } => buf[*pos..*pos + bytes.len()].copy_from_slice(bytes),
            HavocOp::DeleteRange { pos, len } => {
                buf.drain(*pos..*pos + *len);
            }
            HavocOp::Insert { pos, bytes } => {
                buf.splice(*pos..*pos, bytes.iter().copied());
            }
            HavocOp::Swap { a, b } => buf.swap(*a, *b),
        }
    }

    /// Tag bookkeeping for this operation.
    pub fn edit(&self) -> Edit {
        if self.delta() == 0 {
            Edit::InPlace
        } else {
            Edit::Resize
        }
    }
}

fn pick<T: Copy>(rng: &mut impl Rng, xs: &[T]) -> T {
    xs[rng.gen_range(0..xs.len())]
}

fn endian(rng: &mut impl Rng, le: Vec<u8>) -> Vec<u8> {
    if rng.gen() {
        le
    } else {
        le.into_iter().rev().collect()
    }
}

fn arith(rng: &mut impl Rng, cur: u64) -> u64 {
    let d = rng.gen_range(1..=ARITH_MAX) as u64;
    if rng.gen() {
        cur.wrapping_add(d)
    } else {
        cur.wrapping_sub(d)
    }
}

fn read(buf: &[u8], pos: usize, w: usize, swap: bool) -> u64 {
    let it = buf[pos..pos + w].iter();
    if swap {
        it.fold(0u64, |a, &b| a << 8 | b as u64)
    } else {
        it.rev().fold(0u64, |a, &b| a << 8 | b as u64)
    }
}

/// Length-preserving operation of `kind` confined to `lo..=hi`, or `None`
/// when the region is too narrow.
pub fn in_place_op(
    kind: HavocKind,
    buf: &[u8],
    lo: usize,
    hi: usize,
    rng: &mut impl Rng,
) -> Option<HavocOp> {
    let len = hi + 1 - lo;
    let at = |rng: &mut _, w: usize| -> Option<usize> {
        (len >= w).then(|| lo + Rng::gen_range(rng, 0..=len - w))
    };
    Some(match kind {
        HavocKind::BitFlip => HavocOp::BitFlip {
            pos: at(rng, 1)?,
            bit: rng.gen_range(0..8),
        },
        HavocKind::ByteFlip => HavocOp::ByteFlip { pos: at(rng, 1)? },
        HavocKind::Interesting8 => HavocOp::Set {
            pos: at(rng, 1)?,
            bytes: vec![pick(rng, &INTERESTING_8) as u8],
        },
        HavocKind::Interesting16 => {
            let pos = at(rng, 2)?;
            let v = pick(rng, &INTERESTING_16).to_le_bytes().to_vec();
            HavocOp::Set { pos, bytes: endian(rng, v) }
        }
        HavocKind::Interesting32 => {
            let pos = at(rng, 4)?;
            let v = pick(rng, &INTERESTING_32).to_le_bytes().to_vec();
            HavocOp::Set { pos, bytes: endian(rng, v) }
        }
        HavocKind::Arith8 | HavocKind::Arith16 | HavocKind::Arith32 => {
            let w = match kind {
                HavocKind::Arith8 => 1,
                HavocKind::Arith16 => 2,
                _ => 4,
            };
            let pos = at(rng, w)?;
            let swap = w > 1 && rng.gen();
            let v = arith(rng, read(buf, pos, w, swap)).to_le_bytes()[..w].to_vec();
            let bytes = if swap { v.into_iter().rev().collect() } else { v };
            HavocOp::Set { pos, bytes }
        }
        HavocKind::RandomByte => {
            let pos = at(rng, 1)?;
            HavocOp::Set {
                pos,
                bytes: vec![buf[pos] ^ rng.gen_range(1..=255u8)],
            }
        }
        HavocKind::Swap => {
            if len < 2 {
                return None;
            }
            let a = lo + rng.gen_range(0..len);
            let mut b = lo + rng.gen_range(0..len - 1);
            if b >= a {
                b += 1;
            }
            HavocOp::Swap { a, b }
        }
        _ => return None,
    })
}

fn block_len(rng: &mut impl Rng, limit: usize) -> usize {
    rng.gen_range(1..=limit.clamp(1, BLOCK_MAX))
}

/// Draws one operation applicable to `buf`.
pub fn random_op(buf: &[u8], rng: &mut impl Rng) -> HavocOp {
    let n = buf.len();
    loop {
        let kind = pick(rng, &HavocKind::ALL);
        let op = match kind {
            HavocKind::DeleteRange => {
                if n < 2 {
                    continue;
                }
                // at least one byte always survives
                let len = block_len(rng, n - 1);
                HavocOp::DeleteRange {
                    pos: rng.gen_range(0..=n - len),
                    len,
                }
            }
            HavocKind::CloneRange => {
                if n >= MAX_INPUT_LEN {
                    continue;
                }
                let len = block_len(rng, n.min(MAX_INPUT_LEN - n));
                let bytes = if rng.gen_range(0..4) == 0 {
                    vec![rng.gen(); len]
                } else {
                    let from = rng.gen_range(0..=n - len);
                    buf[from..from + len].to_vec()
                };
                HavocOp::Insert {
                    pos: rng.gen_range(0..=n),
                    bytes,
                }
            }
            HavocKind::OverwriteRange => {
                if n < 2 {
                    continue;
                }
                let len = block_len(rng, n - 1);
                let to = rng.gen_range(0..=n - len);
                let bytes = if rng.gen_range(0..4) == 0 {
                    vec![rng.gen(); len]
                } else {
                    let from = rng.gen_range(0..=n - len);
                    buf[from..from + len].to_vec()
                };
                HavocOp::Set { pos: to, bytes }
            }
            k => match in_place_op(k, buf, 0, n - 1, rng) {
                Some(op) => op,
                None => continue,
            },
        };
        return op;
    }
}

/// Applies one random operation. Returns the tag edit it implies.
pub fn havoc_mutate(buf: &mut Vec<u8>, rng: &mut impl Rng) -> Edit {
    assert!(!buf.is_empty());
    let op = random_op(buf, rng);
    op.apply(buf);
    op.edit()
}
