//! The two-stage fuzzing loop.

mod campaign;
mod output;
mod queue;
mod schedule;
mod stacking;
mod surgical;

pub use campaign::{Budget, Campaign, FuzzConfig};
pub use output::{OutputDir, StatsLine};
pub use queue::{energy_score, Provenance, Queue, QueueEntry, BASE_ENERGY};
pub use schedule::{choose_step, enter_surgical, stack_size, surgical_probability, Clock, Step};
pub use stacking::{mutate_stack, structure_stage, CrashFind, StackChild, StackParams, StageFinds};
pub use surgical::{surgical_stage, ChildOrigin, SurgicalChild, SurgicalFeatures, SurgicalOutcome};
