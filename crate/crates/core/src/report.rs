//! Field and chunk layout of one input, as text or JSON.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checksum::{ChecksumIndex, ChecksumStatus};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::fuzzer::{surgical_stage, SurgicalFeatures};
use crate::i2s::{decode, Encoding};
use crate::operands::OperandStats;
use crate::structure::{find_chunk_end, find_field_end};
use crate::tags::{Tag, TagArray};
use crate::target::{run_target, CmpEvent, InstrMode, PatchSet, SiteId, Target};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckState {
    Valid,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ReportField {
    pub start: usize,
    pub end: usize,
    pub site: String,
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checksum: Option<CheckState>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ReportChunk {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ReportChecksum {
    pub addr: String,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct InspectReport {
    pub target: String,
    pub len: usize,
    pub fields: Vec<ReportField>,
    /// Inclusive ranges of bytes no field covers.
    pub unidentified: Vec<[usize; 2]>,
    pub chunks: Vec<ReportChunk>,
    pub checksums: Vec<ReportChecksum>,
    #[serde(skip)]
    pub input: Vec<u8>,
}

struct Labeler<'a> {
    target: &'a dyn Target,
    addrs: BTreeMap<SiteId, u32>,
}

impl Labeler<'_> {
    fn label(&self, t: &Tag) -> String {
        if t.is_checksum() {
            return "checksum".into();
        }
        match self.addrs.get(&t.id) {
            Some(&a) => self
                .target
                .field_label(a, t.operand())
                .map_or_else(|| format!("{a:#06x}"), str::to_string),
            None => format!("site {}", t.id),
        }
    }
}

/// Whether the checksum stored in `bytes` matches what the target computes.
fn check_state(events: &[CmpEvent], ci: &ChecksumIndex, site: SiteId, bytes: &[u8]) -> CheckState {
    let matches = events.iter().filter(|e| e.site == site).any(|e| {
        let Some(info) = ci.get(e.addr) else {
            return false;
        };
        let (stored, computed) = match info.i2s_operand {
            crate::cmplog::OpSel::Op1 => (&e.op1, &e.op2),
            crate::cmplog::OpSel::Op2 => (&e.op2, &e.op1),
        };
        stored == computed
            && Encoding::ALL
                .into_iter()
                .any(|enc| decode(bytes, enc, stored.len()).as_ref() == Some(stored))
    });
    if matches {
        CheckState::Valid
    } else {
        CheckState::Invalid
    }
}

fn sweep_fields(tags: &[Tag]) -> (Vec<(usize, usize)>, Vec<[usize; 2]>) {
    let mut fields = Vec::new();
    let mut gaps: Vec<[usize; 2]> = Vec::new();
    let mut k = 0;
    while k < tags.len() {
        if !tags[k].is_tagged() {
            match gaps.last_mut() {
                Some(g) if g[1] + 1 == k => g[1] = k,
                _ => gaps.push([k, k]),
            }
            k += 1;
            continue;
        }
        let end = find_field_end(tags, k, 0);
        fields.push((k, end));
        k = end + 1;
    }
    (fields, gaps)
}

fn sweep_chunks(tags: &[Tag]) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::new();
    let mut k = 0;
    while k < tags.len() {
        if !tags[k].is_tagged() {
            k += 1;
            continue;
        }
        let end = find_chunk_end(tags, k, 0.0, &mut rng);
        out.push((k, end));
        k = end + 1;
    }
    out
}

/// Upper bound on surgical passes while new checksums keep appearing.
pub const MAX_PASSES: usize = 4;

/// Runs surgical passes over `input` until no new checksum gets patched,
/// then describes the resulting layout.
pub fn inspect(target: &dyn Target, input: &[u8], cap: usize) -> Result<InspectReport> {
    if input.len() > cap {
        return Err(Error::Config(format!(
            "input is {} bytes, above the surgical cap of {cap}",
            input.len()
        )));
    }
    let mut exec = Executor::new(target);
    let mut ci = ChecksumIndex::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let features = SurgicalFeatures {
        operand_fuzz: false,
        checksums: true,
    };
    let mut stats = OperandStats::default();
    let mut tags = None;
    for _ in 0..MAX_PASSES {
        let before = ci.patches().clone();
        let o = surgical_stage(&mut exec, &mut ci, &mut stats, input, features, &mut rng);
        tags = Some(o.tags);
        if *ci.patches() == before {
            break;
        }
    }
    let tags = tags.expect("at least one pass");
    let plain = run_target(target, input, &PatchSet::new(), InstrMode::Full);
    Ok(build(target, input, &tags, &ci, &plain.cmps))
}

fn build(
    target: &dyn Target,
    input: &[u8],
    tags: &TagArray,
    ci: &ChecksumIndex,
    events: &[CmpEvent],
) -> InspectReport {
    let t = &tags.tags;
    let lab = Labeler {
        target,
        addrs: events.iter().map(|e| (e.site, e.addr)).collect(),
    };
    let (spans, unidentified) = sweep_fields(t);
    let fields = spans
        .into_iter()
        .map(|(s, e)| ReportField {
            start: s,
            end: e,
            site: t[s].id.to_string(),
            label: lab.label(&t[s]),
            checksum: t[s]
                .is_checksum()
                .then(|| check_state(events, ci, t[s].id, &input[s..=e])),
        })
        .collect();
    let chunks = sweep_chunks(t)
        .into_iter()
        .map(|(s, e)| ReportChunk {
            start: s,
            end: e,
            label: lab.label(&t[s]),
        })
        .collect();
    let checksums = ci
        .iter()
        .map(|(a, i)| ReportChecksum {
            addr: format!("{a:#06x}"),
            status: match i.status {
                ChecksumStatus::Candidate => "candidate",
                ChecksumStatus::Confirmed => "confirmed",
                ChecksumStatus::FalsePositive => "false-positive",
            }
            .into(),
        })
        .collect();
    InspectReport {
        target: target.name().into(),
        len: input.len(),
        fields,
        unidentified,
        chunks,
        checksums,
        input: input.to_vec(),
    }
}

impl InspectReport {
    /// Bracketed field spans, e.g. `[0-1 id][2-3 size]`.
    pub fn field_line(&self) -> String {
        if self.fields.is_empty() {
            return "no fields identified".into();
        }
        let mut s = String::new();
        for f in &self.fields {
            let mark = match f.checksum {
                Some(CheckState::Valid) => "✓",
                Some(CheckState::Invalid) => "✗",
                None => "",
            };
            let _ = write!(s, "[{}-{} {}{}]", f.start, f.end, f.label, mark);
        }
        s
    }

    fn checksum_bytes(&self) -> Vec<bool> {
        let mut v = vec![false; self.len];
        for f in self.fields.iter().filter(|f| f.checksum.is_some()) {
            v[f.start..=f.end].iter_mut().for_each(|b| *b = true);
        }
        v
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} ({} bytes)\n{}\n\n", self.target, self.len, self.field_line());
        let marks = self.checksum_bytes();
        for (row, bytes) in self.input.chunks(16).enumerate() {
            let base = row * 16;
            let hex: Vec<String> = bytes.iter().map(|b| format!("{b:02x}")).collect();
            let _ = writeln!(s, "{base:06x}  {}", hex.join(" "));
            if marks[base..base + bytes.len()].iter().any(|&m| m) {
                let under: Vec<&str> = (base..base + bytes.len())
                    .map(|i| if marks[i] { "^^" } else { "  " })
                    .collect();
                let _ = writeln!(s, "        {}", under.join(" ").trim_end());
            }
        }
        let gaps: Vec<String> = self.unidentified.iter().map(|[a, b]| format!("{a}-{b}")).collect();
        let _ = writeln!(
            s,
            "\nunidentified: {}",
            if gaps.is_empty() { "none".into() } else { gaps.join(" ") }
        );
        let chunks: Vec<String> = self
            .chunks
            .iter()
            .map(|c| format!("[{}-{} {}]", c.start, c.end, c.label))
            .collect();
        let _ = writeln!(s, "chunks: {}", if chunks.is_empty() { "none".into() } else { chunks.join("") });
        for c in &self.checksums {
            let _ = writeln!(s, "checksum {} {}", c.addr, c.status);
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
