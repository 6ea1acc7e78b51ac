//! Structured errors: one JSON object on stderr and a nonzero exit code.

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub kind: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    /// What to try next.
    pub hint: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>, hint: impl Into<String>) -> Self {
        Self {
            kind: "usage".into(),
            message: message.into(),
            field: None,
            hint: hint.into(),
        }
    }

    /// Usage mistakes exit with 2, everything else with 1.
    pub fn exit_code(&self) -> i32 {
        if self.kind == "usage" {
            2
        } else {
            1
        }
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Envelope<'a> {
            error: &'a CliError,
        }
        serde_json::to_string(&Envelope { error: self }).unwrap_or_else(|_| self.message.clone())
    }
}

impl From<pollsmc_core::Error> for CliError {
    fn from(e: pollsmc_core::Error) -> Self {
        use pollsmc_core::Error as E;
        let hint = match &e {
            E::Io { .. } => "check that the path exists and is readable; `pollsmc generate` writes spec.kv and polls.csv",
            E::Schema { .. } => "fix the named field; the README lists every file format",
            E::Config(_) => "check the spec dimensions and the engine flags --mesh, --ess-frac, --sweeps and --khat",
            E::Data(_) => "every poll needs 0 <= y <= n, a day within the campaign and a declared state",
            E::Usage(_) => "see `pollsmc <command> --help`",
            E::Evaluation { .. } => "the configuration reaches a region where the density is undefined; shrink the perturbation",
            E::DegenerateWeights { .. } | E::Kernel { .. } => {
                "the perturbation moves too far in one step; use a finer --mesh or more --sweeps"
            }
        };
        let field = match &e {
            E::Schema { field, .. } if !field.is_empty() => Some(field.clone()),
            _ => None,
        };
        Self {
            kind: e.kind().into(),
            message: e.to_string(),
            field,
            hint: hint.into(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self {
            kind: "io".into(),
            message: e.to_string(),
            field: None,
            hint: "check the address, port and data directory".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(CliError::usage("x", "y").exit_code(), 2);
        let e: CliError = pollsmc_core::Error::Data("y > n".into()).into();
        assert_eq!(e.exit_code(), 1);
        assert_eq!(e.kind, "data");
    }

    #[test]
    fn schema_errors_keep_their_field() {
        let e: CliError = pollsmc_core::Error::Schema {
            file: "s.kv".into(),
            line: 3,
            field: "a_max".into(),
            message: "expected a number".into(),
        }
        .into();
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["error"]["field"], "a_max");
        assert_eq!(v["error"]["kind"], "schema");
        assert!(v["error"]["hint"].as_str().unwrap().contains("README"));
    }
}
