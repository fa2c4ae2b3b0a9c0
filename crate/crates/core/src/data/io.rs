use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::PointCloud;
use crate::error::{Error, Result};

/// Reads `x y z nx ny nz [part]` lines. Blank lines and `#` comments are skipped.
/// A seventh integer column on every line populates per-point part labels.
pub fn read_xyzn(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut parts = Vec::new();
    let mut columns = None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .collect();
        if fields.len() != 6 && fields.len() != 7 {
            return Err(err(lineno, format!("expected 6 or 7 columns, found {}", fields.len())));
        }
        match columns {
            None => columns = Some(fields.len()),
            Some(c) if c != fields.len() => {
                return Err(err(lineno, format!("expected {c} columns, found {}", fields.len())))
            }
            _ => {}
        }
        let mut v = [0.0f64; 6];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f
                .parse()
                .map_err(|_| err(lineno, format!("not a number: {f:?}")))?;
            if !slot.is_finite() {
                return Err(err(lineno, format!("non-finite value {f:?}")));
            }
        }
        positions.push([v[0], v[1], v[2]]);
        normals.push([v[3], v[4], v[5]]);
        if fields.len() == 7 {
            parts.push(
                fields[6]
                    .parse::<usize>()
                    .map_err(|_| err(lineno, format!("bad part label {:?}", fields[6])))?,
            );
        }
    }
    if positions.is_empty() {
        return Err(err(0, "file contains no points".into()));
    }
    let cloud = PointCloud::new(positions, normals)?;
    if parts.is_empty() {
        Ok(cloud)
    } else {
        cloud.with_parts(parts)
    }
}

/// Writes one point per line with 6 significant digits.
pub fn write_xyzn(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let wrap = |e| Error::io(path.display().to_string(), e);
    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        let n = cloud.normals[i];
        write!(
            w,
            "{:.5e} {:.5e} {:.5e} {:.5e} {:.5e} {:.5e}",
            p[0], p[1], p[2], n[0], n[1], n[2]
        )
        .map_err(wrap)?;
        if let Some(parts) = &cloud.parts {
            write!(w, " {}", parts[i]).map_err(wrap)?;
        }
        writeln!(w).map_err(wrap)?;
    }
    w.flush().map_err(wrap)
}
