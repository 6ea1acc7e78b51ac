use serde::{Deserialize, Serialize};

use super::ModelSpec;
use crate::{Error, Result};

/// Categorical drivers of the poll bias term (0-based table indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PollMeta {
    pub pollster: usize,
    pub mode: usize,
    pub population: usize,
}

/// One poll: `y` of `n` respondents support the Democratic candidate.
///
/// `day` runs over `1..=T`. `state` is a 0-based state index, `None` for a
/// national poll.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollObservation {
    pub poll_id: String,
    pub day: usize,
    pub state: Option<usize>,
    pub y: u64,
    pub n: u64,
    #[serde(flatten)]
    pub meta: PollMeta,
}

impl PollObservation {
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Data(format!("poll {}: n must be positive", self.poll_id)));
        }
        if self.y > self.n {
            return Err(Error::Data(format!(
                "poll {}: y = {} exceeds n = {}",
                self.poll_id, self.y, self.n
            )));
        }
        check_placement(&self.poll_id, self.day, self.state, &self.meta, spec)
    }
}

pub(crate) fn check_placement(
    id: &str,
    day: usize,
    state: Option<usize>,
    meta: &PollMeta,
    spec: &ModelSpec,
) -> Result<()> {
    if day == 0 || day > spec.days {
        return Err(Error::Data(format!(
            "poll {id}: day {day} outside 1..={}",
            spec.days
        )));
    }
    if let Some(s) = state {
        if s >= spec.states {
            return Err(Error::Data(format!("poll {id}: state index {s} out of range")));
        }
    }
    if meta.pollster >= spec.n_pollsters
        || meta.mode >= spec.n_modes
        || meta.population >= spec.n_populations
    {
        return Err(Error::Data(format!("poll {id}: categorical index out of range")));
    }
    Ok(())
}
