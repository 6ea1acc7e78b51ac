//! Ready-made schedule documents for the desk instance.

use serde::{Deserialize, Serialize};

use super::schedule_doc::{Label, PollEntry, ScheduleDoc};
use super::synthetic::{DeskInstance, DESK_TODAY};

/// Logit shift of the prior-forecast location presets.
pub const LOCATION_SHIFT: f64 = 0.2;
/// Factor of the scale presets; the reverse presets use its reciprocal.
pub const SCALE_FACTOR: f64 = 1.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub description: String,
    pub document: ScheduleDoc,
}

fn preset(name: &str, description: &str, document: ScheduleDoc) -> Preset {
    Preset {
        name: name.into(),
        description: description.into(),
        document,
    }
}

fn name(s: &str) -> Label {
    Label::Name(s.into())
}

/// A Pennsylvania NBC live-phone registered-voter poll ten days after
/// today, growing from 10 of 20 to 300 of 600 respondents.
pub fn hypothetical_poll_document(mesh: usize) -> ScheduleDoc {
    ScheduleDoc::HypotheticalPoll {
        poll_id: "hypothetical-pa".into(),
        day: DESK_TODAY + 10,
        state: Some(name("Pennsylvania")),
        pollster: name("NBC"),
        mode: name("live phone"),
        population: name("registered voters"),
        start: Some([10.0, 20.0]),
        end: Some([300.0, 600.0]),
        path: None,
        fixed_ratio: true,
        slot: None,
        mesh: Some(mesh),
    }
}

/// One-step insertion of 89,999 supporters out of 90,000, which no finite
/// reweighting of the baseline can represent.
pub fn extreme_insertion_document() -> ScheduleDoc {
    ScheduleDoc::HypotheticalPoll {
        poll_id: "extreme".into(),
        day: DESK_TODAY,
        state: Some(name("Pennsylvania")),
        pollster: name("NBC"),
        mode: name("live phone"),
        population: name("registered voters"),
        start: None,
        end: None,
        path: Some(vec![[89_999.0, 90_000.0]]),
        fixed_ratio: true,
        slot: None,
        mesh: None,
    }
}

/// Every preset for `desk`, each with `mesh` steps.
pub fn desk_presets(desk: &DeskInstance, mesh: usize) -> Vec<Preset> {
    let polls = desk
        .arrivals
        .iter()
        .flatten()
        .map(|p| PollEntry::from_observation(p, &desk.spec))
        .collect();
    let scale = |a_max: f64, rw: bool| {
        if rw {
            ScheduleDoc::RwScale { a_max, mesh: Some(mesh) }
        } else {
            ScheduleDoc::PriorScale { a_max, mesh: Some(mesh) }
        }
    };
    let location = |a_max: f64| ScheduleDoc::PriorLocation {
        state: name("California"),
        a_max,
        mesh: Some(mesh),
    };
    vec![
        preset(
            "data-insertion",
            "insert the polls arriving after today",
            ScheduleDoc::DataArrival {
                polls,
                polls_file: None,
                first_slot: None,
                mesh: Some(mesh),
            },
        ),
        preset(
            "location-up",
            "shift the California prior forecast up by 0.2 on the logit scale",
            location(LOCATION_SHIFT),
        ),
        preset(
            "location-down",
            "shift the California prior forecast down by 0.2 on the logit scale",
            location(-LOCATION_SHIFT),
        ),
        preset("prior-scale-up", "widen the prior scales by 1.25", scale(SCALE_FACTOR, false)),
        preset("prior-scale-down", "narrow the prior scales by 1.25", scale(1.0 / SCALE_FACTOR, false)),
        preset("rw-scale-up", "widen the random-walk scale by 1.25", scale(SCALE_FACTOR, true)),
        preset("rw-scale-down", "narrow the random-walk scale by 1.25", scale(1.0 / SCALE_FACTOR, true)),
        preset(
            "hypothetical-poll",
            "add a Pennsylvania poll growing from 10/20 to 300/600",
            hypothetical_poll_document(mesh),
        ),
        preset(
            "extreme-insertion",
            "one-step insertion of 89999 of 90000",
            extreme_insertion_document(),
        ),
    ]
}
