//! Per-byte tags: which comparison best characterizes each input byte.

use crate::checksum::{ChecksumIndex, TopoOrder};
use crate::cmplog::{sites_by_exec_order, ComparisonTable, OpSel};
use crate::deps::DepsMap;
use crate::error::{Error, Result};
use crate::i2s::I2SRecord;
use crate::target::SiteId;

pub const FLAG_OP2: u8 = 1;
pub const FLAG_I2S: u8 = 2;
pub const FLAG_CHECKSUM: u8 = 4;

/// Operands with more dependency bytes than this may lose their bytes to
/// a more specific comparison.
pub const REASSIGN_MIN_DEPS: u32 = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Tag {
    pub id: SiteId,
    pub ts: u32,
    pub parent: SiteId,
    pub depends_on: SiteId,
    pub flags: u8,
    pub num_deps: u32,
}

impl Tag {
    pub fn is_tagged(&self) -> bool {
        !self.id.is_none()
    }

    pub fn is_checksum(&self) -> bool {
        self.flags & FLAG_CHECKSUM != 0
    }

    pub fn is_i2s(&self) -> bool {
        self.flags & FLAG_I2S != 0
    }

    pub fn operand(&self) -> OpSel {
        if self.flags & FLAG_OP2 != 0 {
            OpSel::Op2
        } else {
            OpSel::Op1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagKind {
    /// Copied or shifted from a related input.
    Derived,
    /// Computed by a surgical pass over this very input.
    Surgical,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagArray {
    pub tags: Vec<Tag>,
    pub kind: TagKind,
}

impl TagArray {
    pub fn untagged(len: usize, kind: TagKind) -> Self {
        TagArray {
            tags: vec![Tag::default(); len],
            kind,
        }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn any_tagged(&self) -> bool {
        self.tags.iter().any(Tag::is_tagged)
    }

    pub fn ids(&self) -> Vec<SiteId> {
        self.tags.iter().map(|t| t.id).collect()
    }

    pub fn derived(&self) -> TagArray {
        TagArray {
            tags: self.tags.clone(),
            kind: TagKind::Derived,
        }
    }
}

/// Shared inputs of one tag-placement sweep.
pub struct TagContext<'a> {
    pub ct: &'a ComparisonTable,
    pub deps: &'a DepsMap,
    pub ci: &'a ChecksumIndex,
    pub r: &'a I2SRecord,
    pub order: &'a TopoOrder,
}

/// Tags the bytes that site `s` depends on. Returns whether any byte was
/// (re)assigned.
pub fn place_tags(tags: &mut TagArray, s: SiteId, parent: SiteId, cx: &TagContext<'_>) -> bool {
    let Some(rec) = cx.ct.get(s) else {
        return false;
    };
    let masks = [cx.deps.any_instance(s, OpSel::Op1), cx.deps.any_instance(s, OpSel::Op2)];
    let counts = [masks[0].count() as u32, masks[1].count() as u32];
    let ck_op = cx.ci.valid_checksum_operand(rec.addr);
    let instances = rec.instances.len();
    let i2s_at = |op: OpSel, b: usize| {
        (0..instances).any(|j| {
            cx.r
                .get(&(s, j))
                .and_then(|e| e.get(op))
                .is_some_and(|i| i.contains(b))
        })
    };

    let mut assigned = false;
    for b in 0..tags.len() {
        let on = [masks[0].get(b), masks[1].get(b)];
        if !on[0] && !on[1] {
            continue;
        }
        let ck = ck_op.filter(|&op| on[op as usize] && i2s_at(op, b));
        let op = match ck {
            Some(op) => op,
            None if on[0] && on[1] => {
                if counts[1] < counts[0] {
                    OpSel::Op2
                } else {
                    OpSel::Op1
                }
            }
            None if on[0] => OpSel::Op1,
            None => OpSel::Op2,
        };
        let n = counts[op as usize];
        let cur = tags.tags[b];
        let reassign = !cur.is_checksum() && cur.num_deps > REASSIGN_MIN_DEPS && n < cur.num_deps;
        if !cur.is_tagged() || ck.is_some() || reassign {
            let mut flags = 0;
            if op == OpSel::Op2 {
                flags |= FLAG_OP2;
            }
            if i2s_at(op, b) {
                flags |= FLAG_I2S;
            }
            if ck.is_some() {
                flags |= FLAG_CHECKSUM;
            }
            tags.tags[b] = Tag {
                id: s,
                ts: rec.first_seen_ts,
                parent,
                depends_on: cx.order.depends_on(b),
                flags,
                num_deps: n,
            };
            assigned = true;
        }
    }
    assigned
}

/// Full sweep: zeroed tags, then every site in execution order. `parent`
/// is the last site that assigned a tag before the current one.
pub fn place_all_tags(len: usize, cx: &TagContext<'_>) -> TagArray {
    let mut tags = TagArray::untagged(len, TagKind::Surgical);
    let mut parent = SiteId::NONE;
    for s in sites_by_exec_order(cx.ct) {
        if place_tags(&mut tags, s, parent, cx) {
            parent = s;
        }
    }
    tags
}

/// How a child was produced from its parent, for tag bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Edit {
    /// Bytes changed in place.
    InPlace,
    /// `tags` inserted before position `at`.
    Insert { at: usize, tags: Vec<Tag> },
    /// Range `start..end` replaced by `tags`.
    Replace { start: usize, end: usize, tags: Vec<Tag> },
    /// Range `start..end` removed.
    Delete { start: usize, end: usize },
    /// Length changed in a way tags cannot follow.
    Resize,
}

/// Tags for a child input, or `None` when the edit loses track of them.
pub fn derive_tags(parent: &TagArray, edit: &Edit) -> Option<TagArray> {
    let p = &parent.tags;
    let tags = match edit {
        Edit::InPlace => p.clone(),
        Edit::Insert { at, tags } => {
            let at = (*at).min(p.len());
            [&p[..at], tags, &p[at..]].concat()
        }
        Edit::Replace { start, end, tags } => [&p[..*start], tags, &p[*end..]].concat(),
        Edit::Delete { start, end } => [&p[..*start], &p[*end..]].concat(),
        Edit::Resize => return None,
    };
    Some(TagArray {
        tags,
        kind: TagKind::Derived,
    })
}

const SIDECAR_MAGIC: &[u8; 4] = b"TAGS";
const SIDECAR_VERSION: u16 = 1;
const RECORD: usize = 16;

/// Binary sidecar: header (magic, version, kind, count) followed by one
/// 16-byte little-endian record per byte.
pub fn encode_sidecar(tags: &TagArray) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + RECORD * tags.len());
    out.extend_from_slice(SIDECAR_MAGIC);
    out.extend_from_slice(&SIDECAR_VERSION.to_le_bytes());
    let kind: u16 = match tags.kind {
        TagKind::Derived => 0,
        TagKind::Surgical => 1,
    };
    out.extend_from_slice(&kind.to_le_bytes());
    out.extend_from_slice(&(tags.len() as u32).to_le_bytes());
    for t in &tags.tags {
        out.extend_from_slice(&t.id.0.to_le_bytes());
        out.extend_from_slice(&t.ts.to_le_bytes());
        out.extend_from_slice(&t.parent.0.to_le_bytes());
        out.extend_from_slice(&t.depends_on.0.to_le_bytes());
        out.push(t.flags);
        out.extend_from_slice(&t.num_deps.to_le_bytes());
        out.push(0);
    }
    out
}

pub fn decode_sidecar(data: &[u8]) -> Result<TagArray> {
    let u16_at = |i: usize| u16::from_le_bytes([data[i], data[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes(data[i..i + 4].try_into().unwrap());
    if data.len() < 12 || &data[..4] != SIDECAR_MAGIC {
        return Err(Error::Sidecar("bad magic"));
    }
    if u16_at(4) != SIDECAR_VERSION {
        return Err(Error::Sidecar("unsupported version"));
    }
    let kind = match u16_at(6) {
        0 => TagKind::Derived,
        1 => TagKind::Surgical,
        _ => return Err(Error::Sidecar("unknown kind")),
    };
    let n = u32_at(8) as usize;
    if data.len() != 12 + n * RECORD {
        return Err(Error::Sidecar("length mismatch"));
    }
    let tags = (0..n)
        .map(|k| {
            let o = 12 + k * RECORD;
            Tag {
                id: SiteId(u16_at(o)),
                ts: u32_at(o + 2),
                parent: SiteId(u16_at(o + 6)),
                depends_on: SiteId(u16_at(o + 8)),
                flags: data[o + 10],
                num_deps: u32_at(o + 11),
            }
        })
        .collect();
    Ok(TagArray { tags, kind })
}
