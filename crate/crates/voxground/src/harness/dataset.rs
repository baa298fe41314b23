//! Line-oriented scene files and directory datasets.
//!
//! Format: a header line with counts, the point rows, the object rows,
//! then the description, target index and relevant indices:
//!
//! ```text
//! <n_points> <n_objects>
//! x y z r g b            (n_points lines)
//! cx cy cz sx sy sz cat color   (n_objects lines)
//! the red box left of the blue crate
//! <target_idx>
//! <relevant idx list, possibly empty>
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so reading a
//! file back reproduces the sample bit-for-bit.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::head::Box3D;
use crate::matrix::Matrix;

use super::scene::{GroundingSample, SceneObject};

pub fn write_scene(sample: &GroundingSample, path: &Path) -> Result<()> {
    let mut out = String::new();
    let n = sample.points.rows();
    writeln!(out, "{} {}", n, sample.objects.len()).ok();
    for r in 0..n {
        let row = sample.points.row(r);
        writeln!(
            out,
            "{} {} {} {} {} {}",
            row[0], row[1], row[2], row[3], row[4], row[5]
        )
        .ok();
    }
    for o in &sample.objects {
        writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            o.bbox.center[0],
            o.bbox.center[1],
            o.bbox.center[2],
            o.bbox.size[0],
            o.bbox.size[1],
            o.bbox.size[2],
            o.category,
            o.color
        )
        .ok();
    }
    writeln!(out, "{}", sample.description.join(" ")).ok();
    writeln!(out, "{}", sample.target_idx).ok();
    let rel: Vec<String> = sample.relevant_idxs.iter().map(|i| i.to_string()).collect();
    writeln!(out, "{}", rel.join(" ")).ok();
    fs::write(path, out)?;
    Ok(())
}

fn parse_floats(line: &str, n: usize, what: &str) -> Result<Vec<f64>> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse(format!("bad {what} line: {line}")))?;
    if vals.len() != n {
        return Err(Error::Parse(format!(
            "{what} line has {} fields, expected {n}",
            vals.len()
        )));
    }
    Ok(vals)
}

pub fn read_scene(path: &Path) -> Result<GroundingSample> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty scene file".into()))?;
    let counts: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse(format!("bad header: {header}")))?;
    let [n_points, n_objects] = counts[..] else {
        return Err(Error::Parse(format!("bad header: {header}")));
    };

    let mut data = Vec::with_capacity(n_points * 6);
    for _ in 0..n_points {
        let line = lines.next().ok_or_else(|| Error::Parse("truncated points".into()))?;
        data.extend(parse_floats(line, 6, "point")?);
    }
    let points = Matrix::from_vec(n_points, 6, data)?;

    let mut objects = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let line = lines.next().ok_or_else(|| Error::Parse("truncated objects".into()))?;
        let v = parse_floats(line, 8, "object")?;
        objects.push(SceneObject {
            bbox: Box3D::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])?,
            category: v[6] as usize,
            color: v[7] as usize,
        });
    }

    let description: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Parse("missing description".into()))?
        .split_whitespace()
        .map(str::to_string)
        .collect();
    let target_idx: usize = lines
        .next()
        .ok_or_else(|| Error::Parse("missing target index".into()))?
        .trim()
        .parse()
        .map_err(|_| Error::Parse("bad target index".into()))?;
    if target_idx >= objects.len() {
        return Err(Error::Parse(format!("target index {target_idx} out of range")));
    }
    let relevant_idxs: Vec<usize> = match lines.next() {
        None => Vec::new(),
        Some(line) => line
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse("bad relevant index".into()))?,
    };
    if relevant_idxs.iter().any(|&i| i >= objects.len()) {
        return Err(Error::Parse("relevant index out of range".into()));
    }
    Ok(GroundingSample { points, objects, description, target_idx, relevant_idxs })
}

/// Writes `scene_NNNN.scene` files into a directory.
pub fn write_dataset(samples: &[GroundingSample], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, s) in samples.iter().enumerate() {
        write_scene(s, &dir.join(format!("scene_{i:04}.scene")))?;
    }
    Ok(())
}

/// Reads every `*.scene` file in a directory, sorted by file name.
pub fn read_dataset(dir: &Path) -> Result<Vec<GroundingSample>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "scene"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no .scene files in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| read_scene(p)).collect()
}
