//! The key-value document format used for specs, schedules and configs.
//!
//! One `key: value` pair per line; `#` starts a comment line. Dotted keys
//! nest (`prior_scales.house: 0.05`). A value is JSON when it parses as JSON,
//! a bracketed list of such values or bare words (`[NBC, "live phone"]`),
//! or otherwise a bare string. A value whose brackets are unbalanced
//! continues on the following lines.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::{Error, Result};

/// A parsed document and the line on which each key was declared.
#[derive(Debug, Clone, PartialEq)]
pub struct KvDocument {
    pub value: Value,
    lines: BTreeMap<String, usize>,
}

fn schema(file: &str, line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        file: file.to_string(),
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

/// Bracket depth change of `s`, ignoring brackets inside double quotes.
fn depth_delta(s: &str) -> i64 {
    let mut depth = 0;
    let mut quoted = false;
    let mut escaped = false;
    for c in s.chars() {
        if quoted {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => quoted = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => quoted = true,
            '[' | '{' => depth += 1,
            ']' | '}' => depth -= 1,
            _ => {}
        }
    }
    depth
}

/// Splits on commas at bracket depth zero outside quotes.
fn split_top_level(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i64;
    let mut quoted = false;
    let mut escaped = false;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        if quoted {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => quoted = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => quoted = true,
            '[' | '{' => depth += 1,
            ']' | '}' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&s[start..]);
    parts
}

fn parse_value(s: &str) -> std::result::Result<Value, String> {
    let s = s.trim();
    if s.is_empty() {
        return Err("empty value".into());
    }
    if let Ok(v) = serde_json::from_str::<Value>(s) {
        return Ok(v);
    }
    if let Some(inner) = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
        if inner.trim().is_empty() {
            return Ok(Value::Array(Vec::new()));
        }
        return split_top_level(inner)
            .into_iter()
            .map(parse_value)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Value::Array);
    }
    if s.starts_with(['[', '{', '"']) {
        return Err(format!("malformed value `{s}`"));
    }
    Ok(Value::String(s.to_string()))
}

fn valid_key(k: &str) -> bool {
    !k.is_empty()
        && k.split('.').all(|part| {
            !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        })
}

impl KvDocument {
    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let mut root = Map::new();
        let mut lines = BTreeMap::new();
        let mut it = text.lines().enumerate().peekable();
        while let Some((i, raw)) = it.next() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, rest) = line
                .split_once(':')
                .ok_or_else(|| schema(file, line_no, "", "expected `key: value`"))?;
            let key = key.trim();
            if !valid_key(key) {
                return Err(schema(file, line_no, key, "invalid key"));
            }
            let mut value_text = rest.trim().to_string();
            let mut depth = depth_delta(&value_text);
            while depth > 0 {
                let (_, next) = it
                    .next()
                    .ok_or_else(|| schema(file, line_no, key, "unterminated bracket"))?;
                value_text.push(' ');
                value_text.push_str(next.trim());
                depth = depth_delta(&value_text);
            }
            let value = parse_value(&value_text).map_err(|m| schema(file, line_no, key, m))?;
            insert(&mut root, key, value).map_err(|m| schema(file, line_no, key, m))?;
            lines.insert(key.to_string(), line_no);
        }
        Ok(Self {
            value: Value::Object(root),
            lines,
        })
    }

    /// Line declaring the longest key that prefixes `path`; 0 when the path
    /// refers to the document as a whole.
    pub fn line_of(&self, path: &str) -> usize {
        let mut best = (0usize, 0usize);
        for (k, &line) in &self.lines {
            let matches = path == k
                || path.starts_with(&format!("{k}."))
                || path.starts_with(&format!("{k}["));
            if matches && k.len() >= best.0 {
                best = (k.len(), line);
            }
        }
        best.1
    }

    pub fn is_empty(&self) -> bool {
        self.value.as_object().is_none_or(Map::is_empty)
    }

    /// Deserializes into `T`; errors name the offending field and its line.
    pub fn decode<T: DeserializeOwned>(&self, file: &str) -> Result<T> {
        serde_path_to_error::deserialize(&self.value).map_err(|e| {
            let message = e.inner().to_string();
            let field = field_path(&e.path().to_string(), &message);
            schema(file, self.line_of(&field), &field, located(&message).1)
        })
    }
}

/// Splits an error raised inside a nested document, written as
/// ``at `field`: message``, into the field and the message.
pub fn located(message: &str) -> (Option<&str>, &str) {
    message
        .strip_prefix("at `")
        .and_then(|rest| rest.split_once("`: "))
        .map_or((None, message), |(f, m)| (Some(f), m))
}

/// Full path of the field a decode error at `path` refers to, including
/// fields only named in the message (missing, unknown or nested ones).
pub fn field_path(path: &str, message: &str) -> String {
    let named = ["missing field `", "unknown field `"]
        .iter()
        .find_map(|p| message.strip_prefix(p))
        .and_then(|rest| rest.split('`').next())
        .or_else(|| located(message).0);
    let path = if path == "." { "" } else { path };
    match named {
        None => path.to_string(),
        Some(m) if path.is_empty() => m.to_string(),
        Some(m) if path == m || path.ends_with(&format!(".{m}")) => path.to_string(),
        Some(m) => format!("{path}.{m}"),
    }
}

fn insert(root: &mut Map<String, Value>, key: &str, value: Value) -> std::result::Result<(), String> {
    let mut parts = key.split('.').peekable();
    let mut node = root;
    while let Some(part) = parts.next() {
        if parts.peek().is_none() {
            if node.contains_key(part) {
                return Err("duplicate key".into());
            }
            node.insert(part.to_string(), value);
            return Ok(());
        }
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
        node = entry
            .as_object_mut()
            .ok_or_else(|| format!("`{part}` already holds a value"))?;
    }
    Ok(())
}

/// Parses `text` and deserializes it into `T`.
pub fn from_kv<T: DeserializeOwned>(text: &str, file: &str) -> Result<T> {
    KvDocument::parse(text, file)?.decode(file)
}

/// Writes `value` as a key-value document. Nested objects become dotted
/// keys; everything else is written as compact JSON, strings bare when
/// they read back unchanged.
pub fn to_kv<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)
        .map_err(|e| Error::Config(format!("cannot encode document: {e}")))?;
    let mut out = String::new();
    match v {
        Value::Object(map) => write_map(&mut out, "", &map),
        other => return Err(Error::Config(format!("documents must be objects, got {other}"))),
    }
    Ok(out)
}

fn write_map(out: &mut String, prefix: &str, map: &Map<String, Value>) {
    for (k, v) in map {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Object(inner) if !inner.is_empty() && inner.keys().all(|k| valid_key(k) && !k.contains('.')) => {
                write_map(out, &key, inner)
            }
            Value::String(s) if bare_safe(s) => {
                out.push_str(&format!("{key}: {s}\n"));
            }
            other => out.push_str(&format!("{key}: {other}\n")),
        }
    }
}

fn bare_safe(s: &str) -> bool {
    !s.is_empty()
        && s.trim() == s
        && !s.starts_with(['[', '{', '"', '#'])
        && serde_json::from_str::<Value>(s).is_err()
        && !s.contains('\n')
}

#[cfg(test)]
mod tests {
    use serde::Deserialize;

    use super::*;

    #[derive(Debug, Deserialize, Serialize, PartialEq)]
    #[serde(deny_unknown_fields)]
    struct Inner {
        house: f64,
        mode: f64,
    }

    #[derive(Debug, Deserialize, Serialize, PartialEq)]
    #[serde(deny_unknown_fields)]
    struct Doc {
        family: String,
        a_max: f64,
        mesh: usize,
        names: Vec<String>,
        matrix: Vec<Vec<f64>>,
        scales: Inner,
    }

    const TEXT: &str = "# a comment\nfamily: prior_scale\na_max: 1.25\nmesh: 30\n\
names: [NBC, \"live phone\", registered voters]\nmatrix: [[1, 0.5],\n  [0.5, 2]]\n\
scales.house: 0.05\nscales.mode: 0.03\n";

    #[test]
    fn parses_bare_words_lists_and_dotted_keys() {
        let doc: Doc = from_kv(TEXT, "x.kv").unwrap();
        assert_eq!(doc.family, "prior_scale");
        assert_eq!(doc.a_max, 1.25);
        assert_eq!(doc.names, vec!["NBC", "live phone", "registered voters"]);
        assert_eq!(doc.matrix, vec![vec![1.0, 0.5], vec![0.5, 2.0]]);
        assert_eq!(doc.scales.mode, 0.03);
    }

    #[test]
    fn round_trips_through_text() {
        let doc: Doc = from_kv(TEXT, "x.kv").unwrap();
        let text = to_kv(&doc).unwrap();
        let back: Doc = from_kv(&text, "y.kv").unwrap();
        assert_eq!(back, doc);
        assert_eq!(to_kv(&back).unwrap(), text);
    }

    #[test]
    fn errors_name_file_line_and_field() {
        let bad = TEXT.replace("scales.mode: 0.03", "scales.mode: lots");
        match from_kv::<Doc>(&bad, "spec.kv") {
            Err(Error::Schema { file, line, field, .. }) => {
                assert_eq!(file, "spec.kv");
                assert_eq!(line, 9);
                assert_eq!(field, "scales.mode");
            }
            other => panic!("{other:?}"),
        }
        let missing = TEXT.replace("mesh: 30\n", "");
        match from_kv::<Doc>(&missing, "s.kv") {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "mesh"),
            other => panic!("{other:?}"),
        }
        match from_kv::<Doc>("family prior_scale", "t.kv") {
            Err(Error::Schema { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
        match from_kv::<Doc>("a: 1\na: 2", "t.kv") {
            Err(Error::Schema { line, field, .. }) => assert_eq!((line, field.as_str()), (2, "a")),
            other => panic!("{other:?}"),
        }
        let extra = format!("{TEXT}bogus: 1\n");
        match from_kv::<Doc>(&extra, "t.kv") {
            Err(Error::Schema { line, field, .. }) => assert_eq!((line, field.as_str()), (10, "bogus")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            from_kv::<Doc>("matrix: [[1, 2]", "t.kv"),
            Err(Error::Schema { line: 1, .. })
        ));
    }

    #[test]
    fn empty_document_is_an_empty_object() {
        let doc = KvDocument::parse("# nothing\n\n", "e.kv").unwrap();
        assert!(doc.is_empty());
    }

    #[test]
    fn field_paths_join_the_location_and_the_named_field() {
        assert_eq!(field_path(".", "missing field `mesh`"), "mesh");
        assert_eq!(field_path("schedule", "unknown field `msh`, expected ..."), "schedule.msh");
        assert_eq!(field_path("a.b", "unknown field `b`"), "a.b");
        assert_eq!(field_path("schedule", "at `parts[0].a_max`: invalid type"), "schedule.parts[0].a_max");
        assert_eq!(field_path("x.y", "invalid type"), "x.y");
        assert_eq!(located("at `a`: bad"), (Some("a"), "bad"));
        assert_eq!(located("bad"), (None, "bad"));
    }
}
