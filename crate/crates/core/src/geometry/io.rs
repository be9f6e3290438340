//! Text point formats.
//!
//! * XYZ: one point per line as three whitespace-separated reals; blank lines
//!   and lines starting with `#` are skipped.
//! * OFF: `OFF` header, a `nv nf ne` counts line, then `nv` vertex lines.
//!   Faces are ignored.

use std::fmt::Write as _;
use std::path::Path;

use super::PointCloud;
use crate::error::{Error, Result};

fn load_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Load(format!("line {line}: {msg}"))
}

fn parse_triple(line: &str, lineno: usize) -> Result<[f64; 3]> {
    let mut fields = line.split_whitespace();
    let mut out = [0.0; 3];
    for slot in &mut out {
        let tok = fields
            .next()
            .ok_or_else(|| load_err(lineno, "expected three coordinates"))?;
        *slot = tok
            .parse()
            .map_err(|_| load_err(lineno, format!("invalid number '{tok}'")))?;
    }
    if fields.next().is_some() {
        return Err(load_err(lineno, "expected exactly three coordinates"));
    }
    Ok(out)
}

pub fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        points.push(parse_triple(t, i + 1)?);
    }
    if points.is_empty() {
        return Err(Error::Load("no points found".into()));
    }
    PointCloud::new(points, None).map_err(|e| Error::Load(e.to_string()))
}

pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 64);
    for p in cloud.points() {
        // `{:?}` prints the shortest string that round-trips exactly
        let _ = writeln!(s, "{:?} {:?} {:?}", p[0], p[1], p[2]);
    }
    s
}

pub fn parse_off(text: &str) -> Result<PointCloud> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, header) = lines.next().ok_or_else(|| Error::Load("empty OFF file".into()))?;
    // some writers put the counts on the header line: "OFF 8 6 0"
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| load_err(hline, "missing OFF header"))?
        .trim();
    let (cline, counts) = if rest.is_empty() {
        lines
            .next()
            .ok_or_else(|| Error::Load("missing counts line".into()))?
    } else {
        (hline, rest)
    };
    let nv: usize = counts
        .split_whitespace()
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| load_err(cline, "invalid vertex count"))?;
    let mut points = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| Error::Load(format!("truncated: expected {nv} vertices")))?;
        points.push(parse_triple(l, ln)?);
    }
    PointCloud::new(points, None).map_err(|e| Error::Load(e.to_string()))
}

/// Reads `.off` files as OFF and everything else as XYZ.
pub fn read_point_cloud(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_off = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("off"));
    let parsed = if is_off { parse_off(&text) } else { parse_xyz(&text) };
    parsed.map_err(|e| Error::Load(format!("{}: {e}", path.display())))
}

pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, format_xyz(cloud)).map_err(|e| Error::io(path, e))
}
