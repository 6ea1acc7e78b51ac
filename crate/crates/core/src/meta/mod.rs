//! The meta-model: knobs over the fixed model quantities and the schedules
//! that move a posterior along a path of knobs.

mod knob;
mod schedule;

pub use knob::{CompiledKnob, HypotheticalPoll, Knob, LikelihoodOverride, PriorComponent, PriorOverride};
pub use schedule::{CompiledSchedule, PerturbationSchedule, PollTemplate, ScheduleFamily};

pub(crate) use knob::{GaussianOverride, HalfNormalOverride};
