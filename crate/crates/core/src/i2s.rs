//! Input-to-state correspondence: locating comparison operands in the
//! input under simple encodings.

use std::collections::BTreeMap;

use crate::cmplog::{ComparisonTable, OpSel};
use crate::deps::DepsMap;
use crate::target::{CmpKind, Operand, SiteId, MAX_OPERAND};

/// How an operand value relates to the input bytes that produce it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Encoding {
    /// Little-endian bytes as they appear in the input.
    Identity,
    /// Reversed byte order.
    ByteSwap,
    /// A narrower little-endian integer widened with zeros.
    ZeroExtend,
    /// A narrower little-endian integer widened with its sign bit.
    SignExtend,
    /// The operand is the input integer plus one.
    PlusOne,
    /// The operand is the input integer minus one.
    MinusOne,
    /// The input holds the operand as ASCII decimal digits.
    AsciiEncode,
    /// The operand holds the input integer as ASCII decimal digits.
    AsciiDecode,
}

impl Encoding {
    /// Search precedence.
    pub const ALL: [Encoding; 8] = [
        Encoding::Identity,
        Encoding::ByteSwap,
        Encoding::ZeroExtend,
        Encoding::SignExtend,
        Encoding::PlusOne,
        Encoding::MinusOne,
        Encoding::AsciiEncode,
        Encoding::AsciiDecode,
    ];

    /// Image widths tried for an operand of `size` bytes, widest first.
    pub fn widths(self, value: &Operand, kind: CmpKind) -> Vec<usize> {
        let size = value.len();
        let numeric = kind == CmpKind::Compare && size <= 8;
        match self {
            Encoding::Identity => vec![size],
            _ if !numeric => vec![],
            Encoding::ByteSwap if size >= 2 => vec![size],
            Encoding::PlusOne | Encoding::MinusOne => vec![size],
            Encoding::ZeroExtend | Encoding::SignExtend => {
                [4, 2, 1].into_iter().filter(|&w| w < size).collect()
            }
            Encoding::AsciiEncode => vec![value.as_u64().to_string().len()],
            Encoding::AsciiDecode => [8, 4, 2, 1].into_iter().filter(|&w| w <= size).collect(),
            Encoding::ByteSwap => vec![],
        }
    }
}

fn le(image: &[u8]) -> u64 {
    image.iter().rev().fold(0u64, |a, &b| a << 8 | b as u64)
}

fn mask(size: usize) -> u64 {
    if size >= 8 {
        u64::MAX
    } else {
        (1u64 << (8 * size)) - 1
    }
}

fn parse_decimal(digits: &[u8]) -> Option<u64> {
    if digits.is_empty() || digits.len() > 20 || !digits.iter().all(u8::is_ascii_digit) {
        return None;
    }
    if digits.len() > 1 && digits[0] == b'0' {
        return None;
    }
    std::str::from_utf8(digits).ok()?.parse().ok()
}

/// Operand value the target would observe for `image` under `enc`, given
/// the operand width `size`.
pub fn decode(image: &[u8], enc: Encoding, size: usize) -> Option<Operand> {
    let w = image.len();
    if w == 0 || w > MAX_OPERAND {
        return None;
    }
    let int = |v: u64| Operand::from_u64(v & mask(size), size as u8);
    let numeric = matches!(size, 1 | 2 | 4 | 8);
    match enc {
        Encoding::Identity => (w == size).then(|| Operand::from_slice(image)),
        Encoding::ByteSwap => {
            let mut v = image.to_vec();
            v.reverse();
            (w == size && w >= 2).then(|| Operand::from_slice(&v))
        }
        _ if !numeric => None,
        Encoding::ZeroExtend => (w < size && w <= 8).then(|| int(le(image))),
        Encoding::SignExtend => {
            if w >= size || w > 8 || image[w - 1] & 0x80 == 0 {
                return None;
            }
            let shift = 64 - 8 * w as u32;
            Some(int(((le(image) << shift) as i64 >> shift) as u64))
        }
        Encoding::PlusOne => (w == size).then(|| int(le(image).wrapping_add(1))),
        Encoding::MinusOne => (w == size).then(|| int(le(image).wrapping_sub(1))),
        Encoding::AsciiEncode => {
            let v = parse_decimal(image)?;
            (v <= mask(size)).then(|| int(v))
        }
        Encoding::AsciiDecode => {
            let text = le(image).to_string();
            (w <= 8 && text.len() == size).then(|| Operand::from_slice(text.as_bytes()))
        }
    }
}

/// Bytes to place in the input so that the target observes `value`.
/// `len` is the image width; ASCII encoding ignores it and yields the
/// canonical digit string.
pub fn encode(value: &Operand, enc: Encoding, len: usize) -> Option<Vec<u8>> {
    let size = value.len();
    let v = value.as_u64();
    let out = match enc {
        Encoding::Identity => value.as_bytes().to_vec(),
        Encoding::ByteSwap => value.as_bytes().iter().rev().copied().collect(),
        Encoding::ZeroExtend | Encoding::SignExtend => {
            if len == 0 || len >= size || len > 8 {
                return None;
            }
            v.to_le_bytes()[..len].to_vec()
        }
        Encoding::PlusOne => (v.wrapping_sub(1) & mask(size)).to_le_bytes()[..size.min(8)].to_vec(),
        Encoding::MinusOne => (v.wrapping_add(1) & mask(size)).to_le_bytes()[..size.min(8)].to_vec(),
        Encoding::AsciiEncode => v.to_string().into_bytes(),
        Encoding::AsciiDecode => {
            let n = parse_decimal(value.as_bytes())?;
            if len == 0 || len > 8 || n > mask(len) {
                return None;
            }
            n.to_le_bytes()[..len].to_vec()
        }
    };
    // only keep encodings that round-trip exactly
    (decode(&out, enc, size).as_ref() == Some(value)).then_some(out)
}

/// Where and how an operand's value sits in the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct I2SInfo {
    pub encoding: Encoding,
    pub offset: usize,
    pub len: usize,
}

impl I2SInfo {
    pub fn contains(&self, byte: usize) -> bool {
        (self.offset..self.offset + self.len).contains(&byte)
    }

    /// Writes `value` into `input` at this location. Fails when the
    /// encoded form does not have the recorded width.
    pub fn write(&self, input: &mut [u8], value: &Operand) -> bool {
        match encode(value, self.encoding, self.len) {
            Some(b) if b.len() == self.len && self.offset + self.len <= input.len() => {
                input[self.offset..self.offset + self.len].copy_from_slice(&b);
                true
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct I2SEntry {
    pub op1: Option<I2SInfo>,
    pub op2: Option<I2SInfo>,
}

impl I2SEntry {
    pub fn get(&self, op: OpSel) -> Option<&I2SInfo> {
        match op {
            OpSel::Op1 => self.op1.as_ref(),
            OpSel::Op2 => self.op2.as_ref(),
        }
    }
}

/// I2S results keyed by (site, instance).
pub type I2SRecord = BTreeMap<(SiteId, usize), I2SEntry>;

/// Searches the input around an operand's dependency bytes for its value.
pub fn detect_i2s(
    ct: &ComparisonTable,
    deps: &DepsMap,
    s: SiteId,
    j: usize,
    input: &[u8],
) -> I2SEntry {
    let Some(inst) = ct.instance(s, j) else {
        return I2SEntry::default();
    };
    let mut entry = I2SEntry::default();
    for op in OpSel::BOTH {
        let value = inst.operand(op);
        let found = deps
            .get(s, j, op)
            .and_then(|m| find_image(value, inst.kind, |p, w| m.intersects_range(p, w), input));
        match op {
            OpSel::Op1 => entry.op1 = found,
            OpSel::Op2 => entry.op2 = found,
        }
    }
    entry
}

/// First image of `value` in `input` accepted by `near`, in encoding
/// precedence, then widest first, then leftmost.
pub fn find_image(
    value: &Operand,
    kind: CmpKind,
    near: impl Fn(usize, usize) -> bool,
    input: &[u8],
) -> Option<I2SInfo> {
    if value.is_empty() {
        return None;
    }
    for enc in Encoding::ALL {
        for w in enc.widths(value, kind) {
            if w == 0 || w > input.len() {
                continue;
            }
            for p in 0..=input.len() - w {
                if near(p, w) && decode(&input[p..p + w], enc, value.len()).as_ref() == Some(value) {
                    return Some(I2SInfo {
                        encoding: enc,
                        offset: p,
                        len: w,
                    });
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deps::get_deps;
    use crate::exec::Executor;
    use crate::target::extra::PLUS_ONE_CMP;
    use crate::target::running_example::{CMP_A, CMP_B, CMP_C, CMP_D};
    use crate::target::{PatchSet, PlusOne, RunningExample};
    use proptest::prelude::*;

    const SEED: [u8; 8] = [0x0E, 0x00, 0x02, 0x00, 0x41, 0x41, 0x36, 0x0C];

    fn entry(t: &dyn crate::target::Target, input: &[u8], addr: u32, j: usize) -> I2SEntry {
        let mut ex = Executor::new(t);
        let r = get_deps(&mut ex, input, &PatchSet::new());
        detect_i2s(&r.ct, &r.deps, SiteId::new(addr, 0), j, input)
    }

    #[test]
    fn running_example_classification() {
        let a = entry(&RunningExample, &SEED, CMP_A, 0);
        assert_eq!(
            a.op1,
            Some(I2SInfo { encoding: Encoding::Identity, offset: 0, len: 2 })
        );
        assert!(a.op2.is_none());
        let b = entry(&RunningExample, &SEED, CMP_B, 0);
        assert_eq!(b.op1.map(|i| (i.offset, i.len)), Some((2, 2)));
        let d = entry(&RunningExample, &SEED, CMP_D, 0);
        assert!(d.op1.is_none());
        assert_eq!(
            d.op2,
            Some(I2SInfo { encoding: Encoding::Identity, offset: 6, len: 2 })
        );
        for j in 0..7 {
            assert!(entry(&RunningExample, &SEED, CMP_C, j).op2.is_none());
        }
    }

    #[test]
    fn plus_one_encoding() {
        let e = entry(&PlusOne, &[0x34, 0x12, 0xff], PLUS_ONE_CMP, 0);
        assert_eq!(
            e.op1,
            Some(I2SInfo { encoding: Encoding::PlusOne, offset: 0, len: 2 })
        );
        let mut buf = [0x34, 0x12, 0xff];
        assert!(e.op1.unwrap().write(&mut buf, &Operand::from_u64(0x1000, 2)));
        assert_eq!(buf, [0xff, 0x0f, 0xff]);
    }

    #[test]
    fn encodings_round_trip() {
        let v = Operand::from_u64(0x1234, 4);
        assert_eq!(encode(&v, Encoding::ByteSwap, 4).unwrap(), vec![0, 0, 0x12, 0x34]);
        assert_eq!(encode(&v, Encoding::ZeroExtend, 2).unwrap(), vec![0x34, 0x12]);
        assert!(encode(&v, Encoding::ZeroExtend, 1).is_none());
        assert!(encode(&v, Encoding::SignExtend, 2).is_none());
        let neg = Operand::from_u64(0xffff_ff80, 4);
        assert_eq!(encode(&neg, Encoding::SignExtend, 1).unwrap(), vec![0x80]);
        assert_eq!(encode(&v, Encoding::AsciiEncode, 0).unwrap(), b"4660".to_vec());
        let text = Operand::from_slice(b"42");
        assert_eq!(encode(&text, Encoding::AsciiDecode, 1).unwrap(), vec![42]);
        assert_eq!(decode(b"4660", Encoding::AsciiEncode, 4), Some(v));
        assert_eq!(decode(b"0466", Encoding::AsciiEncode, 4), None);
    }

    proptest! {
        #[test]
        fn claims_are_backed_by_the_input(
            input in proptest::collection::vec(any::<u8>(), 1..40),
            value in any::<u64>(),
            size in prop_oneof![Just(1u8), Just(2), Just(4), Just(8)],
        ) {
            let v = Operand::from_u64(value, size);
            if let Some(info) = find_image(&v, CmpKind::Compare, |_, _| true, &input) {
                let img = &input[info.offset..info.offset + info.len];
                prop_assert_eq!(decode(img, info.encoding, v.len()), Some(v));
            }
        }

        #[test]
        fn planted_values_are_found(
            mut input in proptest::collection::vec(any::<u8>(), 8..40),
            value in any::<u64>(),
            at in 0usize..32,
        ) {
            let v = Operand::from_u64(value, 4);
            let at = at % (input.len() - 3);
            input[at..at + 4].copy_from_slice(&v.as_bytes()[..4]);
            let info = find_image(&v, CmpKind::Compare, |p, w| p <= at && at < p + w, &input).unwrap();
            prop_assert!(info.offset <= at);
        }

        #[test]
        fn encode_then_decode_is_identity(value in any::<u64>(), size in prop_oneof![Just(2u8), Just(4), Just(8)]) {
            let v = Operand::from_u64(value, size);
            for enc in Encoding::ALL {
                for w in enc.widths(&v, CmpKind::Compare) {
                    if let Some(b) = encode(&v, enc, w) {
                        prop_assert_eq!(decode(&b, enc, v.len()), Some(v));
                    }
                }
            }
        }
    }
}
