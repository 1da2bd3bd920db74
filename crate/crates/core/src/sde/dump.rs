//! Plain-text sample dumps.
//!
//! ```text
//! # rsgm-samples manifold=Sphere(2) seed=7 count=2
//! 0.6 0 0.8
//! 0 1 0
//! ```
//!
//! One point per line as space-separated ambient coordinates, each written
//! in shortest round-trip form.

use crate::error::{Error, Result};
use crate::manifold::Manifold;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct SampleDump {
    pub manifold: Manifold,
    pub seed: u64,
    pub points: Vec<Vec<f64>>,
}

pub fn write_samples(path: &Path, manifold: &Manifold, seed: u64, points: &[Vec<f64>]) -> Result<()> {
    let mut out = format!("# rsgm-samples manifold={manifold} seed={seed} count={}\n", points.len());
    for p in points {
        let line: Vec<String> = p.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a dump and validates every point against its manifold.
pub fn read_samples(path: &Path) -> Result<SampleDump> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::MalformedRow { line: 1, reason: "missing header".into() })?;
    let fields =
        header.strip_prefix("# rsgm-samples").ok_or_else(|| Error::MalformedRow { line: 1, reason: "missing sample header".into() })?;
    let (mut manifold, mut seed, mut count) = (None, None, None);
    for kv in fields.split_whitespace() {
        let bad = |r: String| Error::MalformedRow { line: 1, reason: r };
        match kv.split_once('=') {
            Some(("manifold", v)) => manifold = Some(v.parse::<Manifold>()?),
            Some(("seed", v)) => seed = Some(v.parse::<u64>().map_err(|e| bad(e.to_string()))?),
            Some(("count", v)) => count = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            _ => return Err(bad(format!("unexpected header field '{kv}'"))),
        }
    }
    let manifold = manifold.ok_or_else(|| Error::MalformedRow { line: 1, reason: "header lacks manifold".into() })?;
    let mut points = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = i + 1;
        let p: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::MalformedRow { line: row, reason: e.to_string() })?;
        if p.len() != manifold.ambient_dim() {
            return Err(Error::MalformedRow {
                line: row,
                reason: format!("expected {} coordinates, got {}", manifold.ambient_dim(), p.len()),
            });
        }
        manifold.check_point(&p).map_err(|e| Error::MalformedRow { line: row, reason: e.to_string() })?;
        points.push(p);
    }
    if let Some(c) = count {
        if c != points.len() {
            return Err(Error::MalformedRow { line: 1, reason: format!("header announces {c} points, file has {}", points.len()) });
        }
    }
    Ok(SampleDump { manifold, seed: seed.unwrap_or(0), points })
}
