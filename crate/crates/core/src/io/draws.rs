//! Self-describing particle files.
//!
//! ```text
//! # pollsmc-draws v1
//! # layout: {"states":5,"days":60,...}
//! # block: z_terminal 0 5
//! # step: 0
//! # generation: 0
//! log_weight,z_terminal[0],...
//! -6.907755278982137,0.12,...
//! ```
//!
//! Numbers use the shortest representation that parses back to the same
//! `f64`, so a write/read cycle is bit-exact.

use serde::{Deserialize, Serialize};

use crate::model::Layout;
use crate::smc::ParticleSet;
use crate::{Error, Result};

pub const DRAWS_MAGIC: &str = "# pollsmc-draws v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrawsFile {
    pub layout: Layout,
    pub blocks: Vec<BlockInfo>,
    pub particles: ParticleSet,
}

fn schema(file: &str, line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        file: file.to_string(),
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

pub fn blocks_of(layout: &Layout) -> Vec<BlockInfo> {
    layout
        .blocks()
        .into_iter()
        .map(|(name, r)| BlockInfo {
            name: name.to_string(),
            start: r.start,
            len: r.len(),
        })
        .collect()
}

pub fn write_draws(layout: &Layout, set: &ParticleSet) -> Result<String> {
    if set.dim() != layout.dim() {
        return Err(Error::Config(format!(
            "particles have dimension {} but the layout has {}",
            set.dim(),
            layout.dim()
        )));
    }
    let layout_json = serde_json::to_string(layout).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = format!("{DRAWS_MAGIC}\n# layout: {layout_json}\n");
    for b in blocks_of(layout) {
        out.push_str(&format!("# block: {} {} {}\n", b.name, b.start, b.len));
    }
    out.push_str(&format!("# step: {}\n# generation: {}\n", set.step, set.generation));
    out.push_str("log_weight");
    for j in 0..layout.dim() {
        out.push(',');
        out.push_str(&layout.coordinate_name(j));
    }
    out.push('\n');
    for (p, lw) in set.particles.iter().zip(&set.log_weights) {
        out.push_str(&lw.to_string());
        for v in p {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    Ok(out)
}

/// Reads a draws file; the layout comes from the header alone.
pub fn read_draws(text: &str, file: &str) -> Result<DrawsFile> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == DRAWS_MAGIC => {}
        _ => return Err(schema(file, 1, "header", format!("expected `{DRAWS_MAGIC}`"))),
    }
    let mut layout = None;
    let mut blocks = Vec::new();
    let mut step = 0usize;
    let mut generation = 0u64;
    let mut columns = None;
    let mut rows = Vec::new();
    let mut log_weights = Vec::new();
    for (i, raw) in lines {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            let (key, value) = meta
                .trim()
                .split_once(':')
                .ok_or_else(|| schema(file, line_no, "", "expected `# key: value`"))?;
            let value = value.trim();
            let bad = |m: String| schema(file, line_no, key, m);
            match key {
                "layout" => layout = Some(serde_json::from_str::<Layout>(value).map_err(|e| bad(e.to_string()))?),
                "block" => {
                    let parts: Vec<&str> = value.split_whitespace().collect();
                    let [name, start, len] = parts[..] else {
                        return Err(bad("expected `name start len`".into()));
                    };
                    blocks.push(BlockInfo {
                        name: name.to_string(),
                        start: start.parse().map_err(|_| bad(format!("bad start `{start}`")))?,
                        len: len.parse().map_err(|_| bad(format!("bad length `{len}`")))?,
                    });
                }
                "step" => step = value.parse().map_err(|_| bad(format!("bad step `{value}`")))?,
                "generation" => {
                    generation = value.parse().map_err(|_| bad(format!("bad generation `{value}`")))?
                }
                _ => return Err(bad("unknown header key".into())),
            }
            continue;
        }
        if columns.is_none() {
            let names: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
            if names.first().map(String::as_str) != Some("log_weight") {
                return Err(schema(file, line_no, "columns", "first column must be `log_weight`"));
            }
            columns = Some(names);
            continue;
        }
        let ncol = columns.as_ref().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(ncol);
        for (c, cell) in line.split(',').enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                let name = columns.as_ref().and_then(|n| n.get(c)).cloned().unwrap_or_default();
                schema(file, line_no, &name, format!("`{}` is not a number", cell.trim()))
            })?;
            values.push(v);
        }
        if values.len() != ncol {
            return Err(schema(
                file,
                line_no,
                "",
                format!("expected {ncol} values, found {}", values.len()),
            ));
        }
        log_weights.push(values[0]);
        values.remove(0);
        rows.push(values);
    }
    let layout = layout.ok_or_else(|| schema(file, 0, "layout", "missing layout header"))?;
    if blocks != blocks_of(&layout) {
        return Err(schema(file, 0, "block", "block headers disagree with the layout"));
    }
    let names = columns.ok_or_else(|| schema(file, 0, "columns", "missing column header"))?;
    let expected: Vec<String> = std::iter::once("log_weight".to_string())
        .chain((0..layout.dim()).map(|j| layout.coordinate_name(j)))
        .collect();
    if names != expected {
        return Err(schema(file, 0, "columns", "column names disagree with the layout"));
    }
    let mut particles = ParticleSet::from_draws(rows)?;
    particles.log_weights = log_weights;
    particles.step = step;
    particles.generation = generation;
    particles.weights()?;
    Ok(DrawsFile {
        layout,
        blocks,
        particles,
    })
}
