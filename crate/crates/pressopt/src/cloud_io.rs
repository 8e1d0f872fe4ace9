//! Point-cloud text files: one point per line, three whitespace-separated
//! numbers. Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use pressopt_core::moe::PointCloud;

use crate::error::{Error, Result};

pub fn parse_cloud(part_id: &str, text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |msg: String| Error::Config(format!("point cloud {part_id}, line {}: {msg}", i + 1));
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 numbers, found {}", fields.len())));
        }
        let mut p = [0.0; 3];
        for (slot, f) in p.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|_| bad(format!("{f:?} is not a number")))?;
        }
        points.push(p);
    }
    Ok(PointCloud::new(part_id, points)?)
}

pub fn read_cloud(part_id: &str, path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cloud(part_id, &text)
}

pub fn write_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut out = String::new();
    for [x, y, z] in &cloud.points {
        writeln!(out, "{x} {y} {z}").expect("writing to a string");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
