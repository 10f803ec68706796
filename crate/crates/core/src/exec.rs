//! Execution accounting shared by every stage: runs the target, counts
//! executions, feeds the coverage map and keeps unique crashes.

use std::collections::HashSet;

use crate::coverage::{CoverageMap, CoverageTrace, Novelty, PathHash, Stage};
use crate::target::{
    run_target_limited, CmpEvent, InstrMode, Outcome, PatchSet, Target, DEFAULT_STEP_LIMIT,
};

/// One execution, reduced to what the fuzzer consumes.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub outcome: Outcome,
    pub coverage: CoverageTrace,
    pub cmps: Vec<CmpEvent>,
    pub steps: u64,
}

impl RunResult {
    pub fn path_hash(&self) -> PathHash {
        self.coverage.path_hash()
    }
}

/// Runs `input` without touching any executor state.
pub fn execute(
    target: &dyn Target,
    input: &[u8],
    patches: &PatchSet,
    mode: InstrMode,
    step_limit: u64,
) -> RunResult {
    let tr = run_target_limited(target, input, patches, mode, step_limit);
    RunResult {
        outcome: tr.outcome,
        coverage: CoverageTrace::from_edges(&tr.edges),
        cmps: tr.cmps,
        steps: tr.steps,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrashRecord {
    pub input: Vec<u8>,
    pub reason: &'static str,
    pub exec: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Boring,
    Interesting(Novelty),
    NewCrash,
    KnownCrash,
    Timeout,
}

impl Verdict {
    pub fn is_interesting(&self) -> bool {
        matches!(self, Verdict::Interesting(_))
    }
}

pub struct Executor<'t> {
    target: &'t dyn Target,
    pub coverage: CoverageMap,
    pub execs: u64,
    pub crashes: Vec<CrashRecord>,
    crash_paths: HashSet<PathHash>,
    step_limit: u64,
}

impl<'t> Executor<'t> {
    pub fn new(target: &'t dyn Target) -> Self {
        Executor {
            target,
            coverage: CoverageMap::new(),
            execs: 0,
            crashes: Vec::new(),
            crash_paths: HashSet::new(),
            step_limit: DEFAULT_STEP_LIMIT,
        }
    }

    pub fn target(&self) -> &'t dyn Target {
        self.target
    }

    pub fn step_limit(&self) -> u64 {
        self.step_limit
    }

    pub fn run(&mut self, input: &[u8], patches: &PatchSet, mode: InstrMode) -> RunResult {
        self.execs += 1;
        execute(self.target, input, patches, mode, self.step_limit)
    }

    /// Runs and classifies in one go.
    pub fn run_and_observe(
        &mut self,
        input: &[u8],
        patches: &PatchSet,
        mode: InstrMode,
        stage: Stage,
    ) -> (RunResult, Verdict) {
        let r = self.run(input, patches, mode);
        let v = self.observe(input, &r.outcome, &r.coverage, stage);
        (r, v)
    }

    /// Classifies a finished execution. Crashes are kept once per path
    /// and never feed the coverage map.
    pub fn observe(
        &mut self,
        input: &[u8],
        outcome: &Outcome,
        coverage: &CoverageTrace,
        stage: Stage,
    ) -> Verdict {
        match outcome {
            Outcome::Crash(reason) => {
                if self.crash_paths.insert(coverage.path_hash()) {
                    self.crashes.push(CrashRecord {
                        input: input.to_vec(),
                        reason,
                        exec: self.execs,
                    });
                    Verdict::NewCrash
                } else {
                    Verdict::KnownCrash
                }
            }
            Outcome::Timeout => Verdict::Timeout,
            _ => {
                let n = self.coverage.is_interesting(coverage, stage);
                if n.is_interesting() {
                    Verdict::Interesting(n)
                } else {
                    Verdict::Boring
                }
            }
        }
    }
}
