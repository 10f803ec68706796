use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::output::{OutputDir, StatsLine};
use super::queue::{Provenance, Queue, QueueEntry};
use super::schedule::{enter_surgical, Clock};
use super::stacking::{structure_stage, StackParams};
use super::surgical::{surgical_stage, ChildOrigin, SurgicalFeatures};
use crate::checksum::{ChecksumIndex, ChecksumStatus};
use crate::coverage::{CoverageTrace, Stage};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::operands::OperandStats;
use crate::structure::Donor;
use crate::tags::{derive_tags, Edit, TagArray};
use crate::target::{InstrMode, Target};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Execs(u64),
    Seconds(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzConfig {
    pub budget: Budget,
    pub rng_seed: u64,
    pub stack: StackParams,
    /// Inputs longer than this skip the surgical stage.
    pub surgical_cap: usize,
    /// Quiet period after which the surgical stage is always entered.
    pub window_ms: u64,
    /// Virtual time charged per execution under an execution budget.
    pub us_per_exec: u64,
    pub features: SurgicalFeatures,
    pub struct_mutations: bool,
    /// Executions between two stats lines.
    pub stats_every: u64,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            budget: Budget::Execs(100_000),
            rng_seed: 0,
            stack: StackParams::default(),
            surgical_cap: 3000,
            window_ms: 50_000,
            us_per_exec: 10_000,
            features: SurgicalFeatures::default(),
            struct_mutations: true,
            stats_every: 10_000,
        }
    }
}

impl FuzzConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.stack;
        let probs = [
            ("pr-field", s.pr_field),
            ("pr-chunk", s.pr_chunk),
            ("pr-i2s", s.structure.pr_i2s),
            ("pr-extend", s.structure.pr_extend),
            ("pr-chunk12", s.structure.pr_chunk12),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if s.pr_field + s.pr_chunk > 1.0 {
            return Err(Error::Config("pr-field + pr-chunk exceeds 1".into()));
        }
        match self.budget {
            Budget::Execs(0) => return Err(Error::Config("budget must be positive".into())),
            Budget::Seconds(t) if t.is_nan() || t <= 0.0 => {
                return Err(Error::Config("budget must be positive".into()))
            }
            _ => {}
        }
        if self.surgical_cap == 0 {
            return Err(Error::Config("surgical cap must be at least 1".into()));
        }
        Ok(())
    }
}

/// A fuzzing campaign against one target.
pub struct Campaign<'t> {
    cfg: FuzzConfig,
    exec: Executor<'t>,
    queue: Queue,
    ci: ChecksumIndex,
    op_stats: OperandStats,
    rng: ChaCha8Rng,
    clock: Clock,
    deadline: Option<Instant>,
    last_interesting_ms: Option<u64>,
    out: Option<OutputDir>,
    next_stats: u64,
    surgical_runs: u64,
}

impl<'t> Campaign<'t> {
    pub fn new(target: &'t dyn Target, cfg: FuzzConfig, out: Option<&Path>) -> Result<Self> {
        cfg.validate()?;
        let (clock, deadline) = match cfg.budget {
            Budget::Execs(_) => (Clock::Virtual { us_per_exec: cfg.us_per_exec }, None),
            Budget::Seconds(s) => {
                let now = Instant::now();
                (Clock::Wall(now), Some(now + Duration::from_secs_f64(s)))
            }
        };
        let out = out.map(OutputDir::create).transpose()?;
        Ok(Campaign {
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            next_stats: cfg.stats_every,
            cfg,
            exec: Executor::new(target),
            queue: Queue::default(),
            ci: ChecksumIndex::default(),
            op_stats: OperandStats::default(),
            clock,
            deadline,
            last_interesting_ms: None,
            out,
            surgical_runs: 0,
        })
    }

    pub fn queue(&self) -> &Queue {
        &self.queue
    }

    pub fn checksums(&self) -> &ChecksumIndex {
        &self.ci
    }

    pub fn executor(&self) -> &Executor<'t> {
        &self.exec
    }

    /// Number of completed surgical stages.
    pub fn surgical_runs(&self) -> u64 {
        self.surgical_runs
    }

    fn exhausted(&self) -> bool {
        match (self.cfg.budget, self.deadline) {
            (Budget::Execs(n), _) => self.exec.execs >= n,
            (_, Some(d)) => Instant::now() >= d,
            _ => true,
        }
    }

    fn stats(&self) -> StatsLine {
        StatsLine {
            execs: self.exec.execs,
            queue_size: self.queue.len(),
            edges: self.exec.coverage.edges_seen(),
            buckets: self.exec.coverage.buckets_seen(),
            crashes: self.exec.crashes.len(),
            checksums_confirmed: self.ci.count(ChecksumStatus::Confirmed),
            checksums_false_positive: self.ci.count(ChecksumStatus::FalsePositive),
            time_ms: self.clock.now_ms(self.exec.execs),
        }
    }

    /// Imports the initial corpus. Every distinct non-empty seed is kept.
    pub fn add_seeds(&mut self, seeds: &[Vec<u8>]) -> Result<()> {
        let mut seen = BTreeSet::new();
        for s in seeds {
            if s.is_empty() || !seen.insert(s.clone()) {
                continue;
            }
            let patches = self.ci.patches().clone();
            let (r, _) = self.exec.run_and_observe(s, &patches, InstrMode::Light, Stage::Structure);
            self.admit(s.clone(), None, r.coverage, r.steps, Provenance::Seed, false)?;
        }
        Ok(())
    }

    fn admit(
        &mut self,
        input: Vec<u8>,
        tags: Option<TagArray>,
        coverage: CoverageTrace,
        steps: u64,
        provenance: Provenance,
        interesting: bool,
    ) -> Result<usize> {
        let now = self.clock.now_ms(self.exec.execs);
        if interesting {
            self.last_interesting_ms = Some(now);
        }
        let id = self.queue.push(QueueEntry {
            id: 0,
            input,
            tags,
            repaired_ok: true,
            times_fuzzed: 0,
            found_at_ms: now,
            found_at_exec: self.exec.execs,
            provenance,
            steps,
            coverage,
            favored: false,
            analyzed_under: None,
        });
        if let Some(o) = &self.out {
            o.save_entry(self.queue.get(id))?;
        }
        Ok(id)
    }

    fn skip(&mut self, id: usize) -> bool {
        let e = self.queue.get(id);
        if e.favored {
            return false;
        }
        let p = if self.queue.pending_favored() {
            0.99
        } else if e.times_fuzzed > 0 {
            0.95
        } else {
            0.75
        };
        self.rng.gen_bool(p)
    }

    fn surgical(&mut self, id: usize) -> Result<()> {
        let input = self.queue.get(id).input.clone();
        let patches = self.ci.patches().clone();
        self.surgical_runs += 1;
        let o = surgical_stage(
            &mut self.exec,
            &mut self.ci,
            &mut self.op_stats,
            &input,
            self.cfg.features,
            &mut self.rng,
        );
        debug!("surgical stage on {id}: {} children, fix ok {}", o.children.len(), o.fix_ok);
        for c in o.children {
            let tags = derive_tags(&o.tags, &Edit::InPlace);
            let provenance = match c.origin {
                ChildOrigin::BitFlip => Provenance::BitFlip { parent: id },
                ChildOrigin::Operand(site) => Provenance::Operand { parent: id, site },
            };
            self.admit(c.input, tags, c.coverage, c.steps, provenance, true)?;
        }
        let e = self.queue.get_mut(id);
        e.input = o.input;
        e.tags = Some(o.tags);
        e.repaired_ok = o.fix_ok;
        e.analyzed_under = Some(patches);
        if let Some(out) = &self.out {
            out.save_entry(self.queue.get(id))?;
        }
        Ok(())
    }

    fn structure(&mut self, id: usize) -> Result<()> {
        let energy = self.queue.energy(id);
        let mut p = self.cfg.stack;
        if !self.cfg.struct_mutations {
            p.pr_field = 0.0;
            p.pr_chunk = 0.0;
        }
        let (budget, deadline) = (self.cfg.budget, self.deadline);
        let stop = move |execs: u64| match (budget, deadline) {
            (Budget::Execs(n), _) => execs >= n,
            (_, Some(d)) => Instant::now() >= d,
            _ => true,
        };
        let entry = self.queue.get(id);
        let donors: Vec<Donor> = self
            .queue
            .entries()
            .iter()
            .filter_map(|e| e.tags.as_ref().map(|t| Donor { input: &e.input, tags: &t.tags }))
            .collect();
        let finds = structure_stage(
            &mut self.exec,
            &mut self.ci,
            &entry.input,
            entry.tags.as_ref(),
            &donors,
            energy,
            &p,
            self.cfg.features.checksums,
            &stop,
            &mut self.rng,
        );
        for c in finds.children {
            self.admit(c.input, c.tags, c.coverage, c.steps, Provenance::Stack { parent: id }, true)?;
        }
        if let Some(out) = &self.out {
            for f in &finds.crashes {
                let rec = &self.exec.crashes[f.index];
                out.save_crash(f.index, rec.reason, &rec.input, f.repaired.as_deref())?;
            }
        }
        Ok(())
    }

    /// One queue entry through both stages.
    pub fn fuzz_one(&mut self) -> Result<()> {
        if self.queue.is_empty() {
            return Err(Error::Config("empty queue".into()));
        }
        let (id, wrapped) = self.queue.advance();
        if wrapped {
            debug!("queue cycle {}", self.queue.cycles);
        }
        if self.skip(id) {
            return Ok(());
        }
        let e = self.queue.get(id);
        let now = self.clock.now_ms(self.exec.execs);
        let go = enter_surgical(
            e.tags_current(self.ci.patches()),
            e.input.len(),
            self.cfg.surgical_cap,
            now,
            self.last_interesting_ms,
            self.cfg.window_ms,
            &mut self.rng,
        );
        if go && !self.exhausted() {
            self.surgical(id)?;
        }
        if !self.exhausted() {
            self.structure(id)?;
        }
        self.queue.get_mut(id).times_fuzzed += 1;
        self.maybe_stats()
    }

    fn maybe_stats(&mut self) -> Result<()> {
        if self.exec.execs < self.next_stats {
            return Ok(());
        }
        while self.next_stats <= self.exec.execs {
            self.next_stats += self.cfg.stats_every.max(1);
        }
        let line = self.stats();
        info!(
            "execs {} queue {} edges {} crashes {}",
            line.execs, line.queue_size, line.edges, line.crashes
        );
        if let Some(o) = &mut self.out {
            o.append_stats(&line)?;
        }
        Ok(())
    }

    /// Runs until the budget is spent, then writes final state.
    pub fn run(&mut self) -> Result<StatsLine> {
        while !self.exhausted() {
            self.fuzz_one()?;
        }
        let line = self.stats();
        if let Some(o) = &mut self.out {
            o.append_stats(&line)?;
            o.save_ci(&self.ci)?;
        }
        Ok(line)
    }
}
