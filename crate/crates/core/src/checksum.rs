//! Checksum candidates, patch management and input repair.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use log::warn;

use crate::cmplog::{ComparisonTable, OpSel};
use crate::deps::{ByteMask, DepsMap};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::i2s::{decode, Encoding, I2SEntry, I2SInfo, I2SRecord};
use crate::tags::TagArray;
use crate::target::{InstrMode, PatchSet, SiteId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChecksumStatus {
    Candidate,
    Confirmed,
    FalsePositive,
}

impl ChecksumStatus {
    fn as_str(self) -> &'static str {
        match self {
            ChecksumStatus::Candidate => "candidate",
            ChecksumStatus::Confirmed => "confirmed",
            ChecksumStatus::FalsePositive => "false-positive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChecksumInfo {
    pub status: ChecksumStatus,
    pub patched: bool,
    /// Operand holding the value stored in the input.
    pub i2s_operand: OpSel,
    /// Input location of the stored value when first marked.
    pub i2s_offset: usize,
    pub i2s_len: usize,
}

/// Checksum knowledge keyed by comparison address, shared across inputs.
#[derive(Debug, Clone, Default)]
pub struct ChecksumIndex {
    entries: BTreeMap<u32, ChecksumInfo>,
    patches: PatchSet,
}

impl ChecksumIndex {
    pub fn get(&self, addr: u32) -> Option<&ChecksumInfo> {
        self.entries.get(&addr)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &ChecksumInfo)> {
        self.entries.iter().map(|(a, i)| (*a, i))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stored-value operand of a checksum that is not a false positive.
    pub fn valid_checksum_operand(&self, addr: u32) -> Option<OpSel> {
        self.entries
            .get(&addr)
            .filter(|i| i.status != ChecksumStatus::FalsePositive)
            .map(|i| i.i2s_operand)
    }

    pub fn patches(&self) -> &PatchSet {
        &self.patches
    }

    pub fn is_patched(&self, addr: u32) -> bool {
        self.patches.contains(addr)
    }

    pub fn insert_candidate(&mut self, addr: u32, op: OpSel, image: &I2SInfo) -> bool {
        if self.entries.contains_key(&addr) {
            return false;
        }
        self.entries.insert(
            addr,
            ChecksumInfo {
                status: ChecksumStatus::Candidate,
                patched: false,
                i2s_operand: op,
                i2s_offset: image.offset,
                i2s_len: image.len,
            },
        );
        true
    }

    pub fn patch(&mut self, addr: u32) {
        if let Some(i) = self.entries.get_mut(&addr) {
            if i.status != ChecksumStatus::FalsePositive {
                i.patched = true;
                self.patches.insert(addr);
            }
        }
    }

    pub fn unpatch(&mut self, addr: u32) {
        if let Some(i) = self.entries.get_mut(&addr) {
            i.patched = false;
        }
        self.patches.remove(addr);
    }

    pub fn mark_false_positive(&mut self, addr: u32) {
        self.unpatch(addr);
        if let Some(i) = self.entries.get_mut(&addr) {
            i.status = ChecksumStatus::FalsePositive;
        }
    }

    pub fn confirm(&mut self, addr: u32) {
        if let Some(i) = self.entries.get_mut(&addr) {
            if i.status == ChecksumStatus::Candidate {
                i.status = ChecksumStatus::Confirmed;
            }
        }
    }

    pub fn count(&self, status: ChecksumStatus) -> usize {
        self.entries.values().filter(|i| i.status == status).count()
    }

    /// Text table, one `0xADDR status patched` line per address.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (a, i) in &self.entries {
            let _ = writeln!(s, "{a:#06x} {} {}", i.status.as_str(), i.patched as u8);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut ci = ChecksumIndex::default();
        for (n, line) in text.lines().enumerate() {
            let bad = || Error::ChecksumTable {
                line: n + 1,
                text: line.to_string(),
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            if f.len() != 3 {
                return Err(bad());
            }
            let addr = u32::from_str_radix(f[0].trim_start_matches("0x"), 16).map_err(|_| bad())?;
            let status = match f[1] {
                "candidate" => ChecksumStatus::Candidate,
                "confirmed" => ChecksumStatus::Confirmed,
                "false-positive" => ChecksumStatus::FalsePositive,
                _ => return Err(bad()),
            };
            let patched = match f[2] {
                "0" => false,
                "1" => true,
                _ => return Err(bad()),
            };
            ci.entries.insert(
                addr,
                ChecksumInfo {
                    status,
                    patched: false,
                    i2s_operand: OpSel::Op2,
                    i2s_offset: 0,
                    i2s_len: 0,
                },
            );
            if patched {
                ci.patch(addr);
            }
        }
        Ok(ci)
    }
}

/// Adds `(s, j)` as a checksum candidate when one operand is a stored
/// value of at least two bytes and the other is computed from input bytes
/// that do not include the stored value's bytes.
pub fn mark_checksums(
    ct: &ComparisonTable,
    deps: &DepsMap,
    s: SiteId,
    j: usize,
    entry: &I2SEntry,
    ci: &mut ChecksumIndex,
) -> bool {
    let Some(rec) = ct.get(s) else { return false };
    let Some(inst) = rec.instances.get(j) else {
        return false;
    };
    for stored in OpSel::BOTH {
        let computed = stored.other();
        let Some(image) = entry.get(stored) else { continue };
        if inst.size() < 2 || entry.get(computed).is_some() {
            continue;
        }
        let Some(cdeps) = deps.get(s, j, computed) else { continue };
        if cdeps.is_empty() || cdeps.intersects_range(image.offset, image.len) {
            continue;
        }
        return ci.insert_candidate(rec.addr, stored, image);
    }
    false
}

/// Patches every address that is not a known false positive.
pub fn patch_all_checksums(ci: &mut ChecksumIndex) {
    let addrs: Vec<u32> = ci.entries.keys().copied().collect();
    for a in addrs {
        ci.patch(a);
    }
}

/// A stored checksum value in the input together with what it covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChecksumField {
    pub site: SiteId,
    pub addr: u32,
    pub instance: usize,
    pub ts: u32,
    pub stored: OpSel,
    pub image: I2SInfo,
    pub computed_deps: ByteMask,
}

/// Checksum fields ordered so that a field precedes every checksum whose
/// computed value depends on it.
#[derive(Debug, Clone, Default)]
pub struct TopoOrder {
    pub fields: Vec<ChecksumField>,
}

impl TopoOrder {
    /// Innermost checksum verifying `byte`, excluding the field holding it.
    pub fn depends_on(&self, byte: usize) -> SiteId {
        self.fields
            .iter()
            .find(|f| f.computed_deps.get(byte) && !f.image.contains(byte))
            .map_or(SiteId::NONE, |f| f.site)
    }

    pub fn field_at(&self, site: SiteId, byte: usize) -> Option<&ChecksumField> {
        self.fields.iter().find(|f| f.site == site && f.image.contains(byte))
    }
}

pub fn topo_order(
    ct: &ComparisonTable,
    deps: &DepsMap,
    r: &I2SRecord,
    ci: &ChecksumIndex,
) -> TopoOrder {
    let mut fields: Vec<ChecksumField> = Vec::new();
    for (&(s, j), entry) in r {
        let Some(rec) = ct.get(s) else { continue };
        let Some(stored) = ci.valid_checksum_operand(rec.addr) else {
            continue;
        };
        let Some(image) = entry.get(stored) else { continue };
        if entry.get(stored.other()).is_some() {
            continue;
        }
        let Some(cdeps) = deps.get(s, j, stored.other()) else { continue };
        if cdeps.is_empty() || fields.iter().any(|f| f.image.offset == image.offset) {
            continue;
        }
        fields.push(ChecksumField {
            site: s,
            addr: rec.addr,
            instance: j,
            ts: rec.first_seen_ts,
            stored,
            image: *image,
            computed_deps: cdeps.clone(),
        });
    }
    order_fields(fields)
}

/// Kahn's algorithm over checksum fields. Ties go to the earliest site,
/// then instance, then offset; a cycle is broken at its earliest site.
pub fn order_fields(fields: Vec<ChecksumField>) -> TopoOrder {
    let key = |f: &ChecksumField| (f.ts, f.instance, f.image.offset);
    let n = fields.len();
    let edge = |a: usize, b: usize| {
        a != b && fields[b].computed_deps.intersects_range(fields[a].image.offset, fields[a].image.len)
    };
    let mut indeg: Vec<usize> = (0..n).map(|b| (0..n).filter(|&a| edge(a, b)).count()).collect();
    let mut done = vec![false; n];
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let ready = (0..n).filter(|&i| !done[i] && indeg[i] == 0).min_by_key(|&i| key(&fields[i]));
        let next = match ready {
            Some(i) => i,
            None => {
                let i = (0..n).filter(|&i| !done[i]).min_by_key(|&i| key(&fields[i])).unwrap();
                warn!("checksum dependency cycle, breaking at site {}", fields[i].site);
                i
            }
        };
        done[next] = true;
        for b in 0..n {
            if !done[b] && edge(next, b) {
                indeg[b] = indeg[b].saturating_sub(1);
            }
        }
        out.push(next);
    }
    TopoOrder {
        fields: out.into_iter().map(|i| fields[i].clone()).collect(),
    }
}

/// Result of an input repair attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixOutcome {
    pub input: Vec<u8>,
    pub ok: bool,
}

struct TaggedField {
    site: SiteId,
    addr: u32,
    start: usize,
    len: usize,
    encoding: Option<Encoding>,
}

/// Contiguous checksum-flagged runs whose address is currently patched,
/// in topological order.
fn filter_and_sort(
    tags: &TagArray,
    ct: &ComparisonTable,
    ci: &ChecksumIndex,
    order: &TopoOrder,
) -> Vec<TaggedField> {
    let t = &tags.tags;
    let mut runs = Vec::new();
    let mut i = 0;
    while i < t.len() {
        if !t[i].is_checksum() {
            i += 1;
            continue;
        }
        let mut e = i;
        while e + 1 < t.len() && t[e + 1].is_checksum() && t[e + 1].id == t[i].id {
            e += 1;
        }
        if let Some(rec) = ct.get(t[i].id) {
            if ci.is_patched(rec.addr) {
                let f = order.field_at(t[i].id, i);
                runs.push((
                    f.map_or(usize::MAX, |f| order.fields.iter().position(|g| g == f).unwrap()),
                    TaggedField {
                        site: t[i].id,
                        addr: rec.addr,
                        start: i,
                        len: e + 1 - i,
                        encoding: f.map(|f| f.image.encoding),
                    },
                ));
            }
        }
        i = e + 1;
    }
    runs.sort_by_key(|(pos, f)| (*pos, f.start));
    runs.into_iter().map(|(_, f)| f).collect()
}

/// Candidate repairs for a tagged field: the instance whose stored operand
/// is what the field bytes decode to, its computed value, and every
/// encoding under which the bytes decode that way, preferred first.
fn computed_value(
    ct: &ComparisonTable,
    ci: &ChecksumIndex,
    f: &TaggedField,
    input: &[u8],
) -> Option<(usize, crate::target::Operand, Vec<Encoding>)> {
    let stored = ci.get(f.addr)?.i2s_operand;
    let image = &input[f.start..f.start + f.len];
    let mut encs: Vec<Encoding> = f.encoding.into_iter().collect();
    encs.extend(Encoding::ALL.into_iter().filter(|e| Some(*e) != f.encoding));
    for (j, inst) in ct.get(f.site)?.instances.iter().enumerate() {
        let want = inst.operand(stored);
        let ok: Vec<Encoding> = encs
            .iter()
            .copied()
            .filter(|&enc| decode(image, enc, want.len()).as_ref() == Some(want))
            .collect();
        if !ok.is_empty() {
            return Some((j, *inst.operand(stored.other()), ok));
        }
    }
    None
}

/// Rewrites every checksum field of `input` with the value the target
/// computes, removing patches as fields become valid. `ok` means the
/// unpatched target now follows the patched path.
pub fn fix_checksums(
    exec: &mut Executor<'_>,
    ci: &mut ChecksumIndex,
    input: &[u8],
    tags: &TagArray,
    order: &TopoOrder,
) -> FixOutcome {
    let mut input = input.to_vec();
    let base = exec.run(&input, ci.patches(), InstrMode::Full);
    let h = base.path_hash();
    let mut ct = crate::cmplog::build_ct(&base.cmps);
    let fields = filter_and_sort(tags, &ct, ci, order);
    let tagged: BTreeSet<u32> = fields.iter().map(|f| f.addr).collect();

    for (k, f) in fields.iter().enumerate() {
        let Some((j, v, encs)) = computed_value(&ct, ci, f, &input) else {
            return FixOutcome { input, ok: false };
        };
        let stored = ci.get(f.addr).map_or(OpSel::Op2, |i| i.i2s_operand);
        let mut written = None;
        for &enc in &encs {
            let info = I2SInfo {
                encoding: enc,
                offset: f.start,
                len: f.len,
            };
            let mut trial = input.clone();
            if !info.write(&mut trial, &v) {
                continue;
            }
            if encs.len() == 1 {
                written = Some(trial);
                break;
            }
            // several encodings fit the old bytes: keep the one that
            // satisfies the comparison
            let r = exec.run(&trial, ci.patches(), InstrMode::Full);
            let t = crate::cmplog::build_ct(&r.cmps);
            let met = t
                .instance(f.site, j)
                .is_some_and(|i| i.operand(stored) == i.operand(stored.other()));
            if met || written.is_none() {
                written = Some(trial);
            }
            if met {
                break;
            }
        }
        let Some(fixed) = written else {
            return FixOutcome { input, ok: false };
        };
        input = fixed;
        // one address may guard several fields, e.g. one CRC per chunk
        if !fields[k + 1..].iter().any(|g| g.addr == f.addr) {
            ci.unpatch(f.addr);
        }
        let r = exec.run(&input, ci.patches(), InstrMode::Full);
        if r.path_hash() != h {
            ci.mark_false_positive(f.addr);
            return FixOutcome { input, ok: false };
        }
        ct = crate::cmplog::build_ct(&r.cmps);
    }

    let untagged: Vec<u32> = ci
        .iter()
        .filter(|(a, i)| i.patched && !tagged.contains(a))
        .map(|(a, _)| a)
        .collect();
    for &a in &untagged {
        ci.unpatch(a);
    }
    let h1 = exec.run(&input, ci.patches(), InstrMode::Light).path_hash();
    if h1 == h {
        for &a in &tagged {
            ci.confirm(a);
        }
        return FixOutcome { input, ok: true };
    }
    for &a in &untagged {
        ci.patch(a);
        let h2 = exec.run(&input, ci.patches(), InstrMode::Light).path_hash();
        if h2 != h1 {
            ci.mark_false_positive(a);
        }
        ci.unpatch(a);
    }
    FixOutcome { input, ok: false }
}
