//! Comparison table: per-site rings of the most recent operand pairs.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use crate::target::{CmpEvent, CmpKind, Operand, SiteId};

/// Instances kept per site.
pub const MAX_INSTANCES: usize = 256;

/// Which side of a comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpSel {
    Op1,
    Op2,
}

impl OpSel {
    pub const BOTH: [OpSel; 2] = [OpSel::Op1, OpSel::Op2];

    pub fn other(self) -> OpSel {
        match self {
            OpSel::Op1 => OpSel::Op2,
            OpSel::Op2 => OpSel::Op1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Instance {
    pub op1: Operand,
    pub op2: Operand,
    pub kind: CmpKind,
}

impl Instance {
    pub fn operand(&self, op: OpSel) -> &Operand {
        match op {
            OpSel::Op1 => &self.op1,
            OpSel::Op2 => &self.op2,
        }
    }

    pub fn size(&self) -> usize {
        self.op1.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteRecord {
    pub addr: u32,
    pub first_seen_ts: u32,
    pub hits: u32,
    pub instances: VecDeque<Instance>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ComparisonTable {
    entries: BTreeMap<SiteId, SiteRecord>,
}

/// Folds a comparison event stream into a table.
pub fn build_ct(events: &[CmpEvent]) -> ComparisonTable {
    let mut ct = ComparisonTable::default();
    for ev in events {
        ct.push(ev);
    }
    ct
}

/// Sites ordered by first occurrence.
pub fn sites_by_exec_order(ct: &ComparisonTable) -> Vec<SiteId> {
    let mut v: Vec<_> = ct.entries.iter().map(|(s, r)| (r.first_seen_ts, *s)).collect();
    v.sort_unstable();
    v.into_iter().map(|(_, s)| s).collect()
}

impl ComparisonTable {
    pub fn push(&mut self, ev: &CmpEvent) {
        let next_ts = self.entries.len() as u32;
        let rec = self.entries.entry(ev.site).or_insert_with(|| SiteRecord {
            addr: ev.addr,
            first_seen_ts: next_ts,
            hits: 0,
            instances: VecDeque::new(),
        });
        rec.hits += 1;
        if rec.instances.len() == MAX_INSTANCES {
            rec.instances.pop_front();
        }
        rec.instances.push_back(Instance {
            op1: ev.op1,
            op2: ev.op2,
            kind: ev.kind,
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, site: SiteId) -> Option<&SiteRecord> {
        self.entries.get(&site)
    }

    pub fn hits(&self, site: SiteId) -> u32 {
        self.entries.get(&site).map_or(0, |r| r.hits)
    }

    pub fn instance(&self, site: SiteId, j: usize) -> Option<&Instance> {
        self.entries.get(&site)?.instances.get(j)
    }

    pub fn iter(&self) -> impl Iterator<Item = (SiteId, &SiteRecord)> {
        self.entries.iter().map(|(s, r)| (*s, r))
    }

    /// First site observed at instruction `addr`.
    pub fn site_of_addr(&self, addr: u32) -> Option<SiteId> {
        self.iter()
            .filter(|(_, r)| r.addr == addr)
            .min_by_key(|(_, r)| r.first_seen_ts)
            .map(|(s, _)| s)
    }

    /// One line per site in execution order: site, addr, ts, hits, and
    /// the operands of the first and last kept instances.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for s in sites_by_exec_order(self) {
            let r = &self.entries[&s];
            let first = r.instances.front().unwrap();
            let last = r.instances.back().unwrap();
            let _ = writeln!(
                out,
                "{s} addr={:#06x} ts={} hits={} first=({:?},{:?}) last=({:?},{:?})",
                r.addr, r.first_seen_ts, r.hits, first.op1, first.op2, last.op1, last.op2
            );
        }
        out
    }
}
