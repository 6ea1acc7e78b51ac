//! Poll tables: `poll_id,day,state,y,n,pollster,mode,population`.
//!
//! An empty `state` marks a national poll. Categorical columns accept either
//! a declared name or a 0-based index.

use serde::{Deserialize, Serialize};

use crate::model::{ModelSpec, PollMeta, PollObservation};
use crate::{Error, Result};

pub const POLL_HEADER: [&str; 8] = ["poll_id", "day", "state", "y", "n", "pollster", "mode", "population"];

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    poll_id: String,
    day: String,
    state: String,
    y: String,
    n: String,
    pollster: String,
    mode: String,
    population: String,
}

fn schema(file: &str, line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        file: file.to_string(),
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

/// Parses a poll table; each row is validated against `spec`.
pub fn parse_polls(text: &str, file: &str, spec: &ModelSpec) -> Result<Vec<PollObservation>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| schema(file, 1, "", e.to_string()))?
        .clone();
    let got: Vec<&str> = header.iter().collect();
    if got != POLL_HEADER {
        return Err(schema(
            file,
            1,
            "header",
            format!("expected `{}`", POLL_HEADER.join(",")),
        ));
    }
    let mut polls = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            schema(file, line, "", e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row: Row = record
            .deserialize(Some(&header))
            .map_err(|e| schema(file, line, "", e.to_string()))?;
        let int = |field: &str, v: &str| -> Result<u64> {
            v.parse::<u64>()
                .map_err(|_| schema(file, line, field, format!("`{v}` is not a nonnegative integer")))
        };
        let cat = |field: &str, v: &str, found: Option<usize>| -> Result<usize> {
            found.ok_or_else(|| schema(file, line, field, format!("unknown {field} `{v}`")))
        };
        let state = if row.state.is_empty() {
            None
        } else {
            Some(cat("state", &row.state, spec.state_index(&row.state))?)
        };
        let poll = PollObservation {
            poll_id: row.poll_id.clone(),
            day: int("day", &row.day)? as usize,
            state,
            y: int("y", &row.y)?,
            n: int("n", &row.n)?,
            meta: PollMeta {
                pollster: cat("pollster", &row.pollster, spec.pollster_index(&row.pollster))?,
                mode: cat("mode", &row.mode, spec.mode_index(&row.mode))?,
                population: cat(
                    "population",
                    &row.population,
                    spec.population_index(&row.population),
                )?,
            },
        };
        if row.poll_id.is_empty() {
            return Err(schema(file, line, "poll_id", "empty poll id"));
        }
        poll.validate(spec).map_err(|e| match e {
            Error::Data(m) => Error::Data(format!("{file}:{line}: {m}")),
            other => other,
        })?;
        polls.push(poll);
    }
    Ok(polls)
}

fn label(names: &[String], i: usize) -> String {
    names.get(i).cloned().unwrap_or_else(|| i.to_string())
}

/// Writes a poll table using declared names where the spec has them.
pub fn write_polls(polls: &[PollObservation], spec: &ModelSpec) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let map = |e: csv::Error| Error::Config(format!("cannot encode polls: {e}"));
    w.write_record(POLL_HEADER).map_err(map)?;
    for p in polls {
        w.write_record([
            p.poll_id.clone(),
            p.day.to_string(),
            p.state.map_or_else(String::new, |s| label(&spec.state_names, s)),
            p.y.to_string(),
            p.n.to_string(),
            label(&spec.pollster_names, p.meta.pollster),
            label(&spec.mode_names, p.meta.mode),
            label(&spec.population_names, p.meta.population),
        ])
        .map_err(map)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::synthetic::desk_instance;

    #[test]
    fn round_trips_with_names() {
        let desk = desk_instance(3).unwrap();
        let text = write_polls(&desk.baseline, &desk.spec).unwrap();
        assert!(text.starts_with("poll_id,day,state,y,n,pollster,mode,population\n"));
        assert!(text.contains("live phone"));
        let back = parse_polls(&text, "polls.csv", &desk.spec).unwrap();
        assert_eq!(back, desk.baseline);
        assert_eq!(write_polls(&back, &desk.spec).unwrap(), text);
    }

    #[test]
    fn accepts_indices_and_national_rows() {
        let desk = desk_instance(3).unwrap();
        let text = "poll_id,day,state,y,n,pollster,mode,population\n\
                    a,3,,50,100,0,1,2\nb,4,Utah,40,90,Marist,IVR,adults\n";
        let polls = parse_polls(text, "p.csv", &desk.spec).unwrap();
        assert_eq!(polls[0].state, None);
        assert_eq!(polls[0].meta.mode, 1);
        assert_eq!(polls[1].state, Some(4));
        assert_eq!(polls[1].meta.pollster, 1);
    }

    #[test]
    fn errors_name_line_and_field() {
        let desk = desk_instance(3).unwrap();
        let head = "poll_id,day,state,y,n,pollster,mode,population\n";
        let bad_state = format!("{head}a,3,,50,100,0,1,2\nb,4,Narnia,40,90,0,0,0\n");
        match parse_polls(&bad_state, "p.csv", &desk.spec) {
            Err(Error::Schema { file, line, field, .. }) => {
                assert_eq!((file.as_str(), line, field.as_str()), ("p.csv", 3, "state"))
            }
            other => panic!("{other:?}"),
        }
        let bad_n = format!("{head}a,3,,50,many,0,1,2\n");
        assert!(matches!(
            parse_polls(&bad_n, "p.csv", &desk.spec),
            Err(Error::Schema { line: 2, ref field, .. }) if field == "n"
        ));
        let y_over_n = format!("{head}a,3,,150,100,0,1,2\n");
        assert!(matches!(parse_polls(&y_over_n, "p.csv", &desk.spec), Err(Error::Data(_))));
        assert!(matches!(
            parse_polls("id,day\n", "p.csv", &desk.spec),
            Err(Error::Schema { line: 1, .. })
        ));
    }
}
