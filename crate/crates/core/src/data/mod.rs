//! Point clouds, file formats, the synthetic shape generator and augmentation.

mod augment;
mod import;
mod io;
mod synth;

pub use augment::{augment, inject_noise, sample_points, AugmentDraw, SamplePolicy, SCALE_RANGE, SHIFT_RANGE};
pub use import::{import_modelnet, import_partnet, DatasetManifest, ManifestEntry, Split};
pub use io::{read_xyzn, write_xyzn};
pub use synth::{synth_segmentation, synth_shapes, ShapeKind, SHAPE_NAMES};

use crate::error::{Error, Result};
use crate::pointops::Point;

/// Positions with unit normals and an optional class or per-point part labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Point>,
    pub normals: Vec<Point>,
    pub class: Option<usize>,
    pub parts: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn new(positions: Vec<Point>, normals: Vec<Point>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidArgument("point cloud needs at least one point".into()));
        }
        if positions.len() != normals.len() {
            return Err(Error::InvalidArgument(format!(
                "{} positions but {} normals",
                positions.len(),
                normals.len()
            )));
        }
        Ok(PointCloud {
            positions,
            normals,
            class: None,
            parts: None,
        })
    }

    pub fn with_class(mut self, class: usize) -> Self {
        self.class = Some(class);
        self
    }

    pub fn with_parts(mut self, parts: Vec<usize>) -> Result<Self> {
        if parts.len() != self.positions.len() {
            return Err(Error::InvalidArgument(format!(
                "{} part labels for {} points",
                parts.len(),
                self.positions.len()
            )));
        }
        self.parts = Some(parts);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Keeps the listed points, in the given order, with their normals and labels.
    pub fn select(&self, index: &[usize]) -> PointCloud {
        PointCloud {
            positions: index.iter().map(|&i| self.positions[i]).collect(),
            normals: index.iter().map(|&i| self.normals[i]).collect(),
            class: self.class,
            parts: self
                .parts
                .as_ref()
                .map(|p| index.iter().map(|&i| p[i]).collect()),
        }
    }

    pub fn max_normal_error(&self) -> f64 {
        self.normals
            .iter()
            .map(|n| ((n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// An in-memory labeled collection.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub clouds: Vec<PointCloud>,
    pub class_names: Vec<String>,
    /// Number of part labels for segmentation data, zero otherwise.
    pub n_parts: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn subset(&self, index: &[usize]) -> Dataset {
        Dataset {
            clouds: index.iter().map(|&i| self.clouds[i].clone()).collect(),
            class_names: self.class_names.clone(),
            n_parts: self.n_parts,
        }
    }
}

pub(crate) fn normalize3(v: Point) -> Point {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n == 0.0 {
        [0.0, 0.0, 1.0]
    } else {
        [v[0] / n, v[1] / n, v[2] / n]
    }
}
