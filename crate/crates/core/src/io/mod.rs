//! File formats, synthetic data and presets.
pub mod draws;
pub mod files;
pub mod kv;
pub mod nonfinite;
pub mod polls;
pub mod presets;
pub mod report;
pub mod schedule_doc;
pub mod synthetic;

pub use draws::{read_draws, write_draws, BlockInfo, DrawsFile};
pub use files::{load_polls, load_spec, parse_spec, read_text, save_spec, write_atomic};
pub use kv::{from_kv, to_kv, KvDocument};
pub use polls::{parse_polls, write_polls};
pub use presets::{desk_presets, extreme_insertion_document, hypothetical_poll_document, Preset};
pub use report::{DiagnosticsRollup, FailureInfo, RunReport, Timing};
pub use schedule_doc::{load_schedule, Label, PollEntry, ScheduleDoc};
pub use synthetic::{desk_instance, desk_spec, generate_synthetic, DeskInstance, PlanEntry, PollPlan, TruthRecord};
