//! Differentiable building blocks operating on batched [`LevelState`]s.
//!
//! A batch holds `B` clouds with the same point count `N`. Point geometry is
//! kept in 64-bit and converted to the tape's scalar type only where it enters
//! the feature path. Features are a `[B·N, D]` tape value, clouds stacked
//! row-wise.

mod fp;
mod mlp;
mod refine;
mod sa;

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

pub use fp::FeaturePropagation;
pub use mlp::{FullyConnected, MlpLayer, SharedMlp};
pub use refine::{FcrLevel, FreLevel};
pub use sa::{group_max_pool, grouped_rows, GroupSpec, SetAbstraction};

use crate::error::{Error, Result};
use crate::pointops::{lexicographic_min, Point, StartPolicy};
use crate::tensor::{Float, Mode, Tape, Var};

/// Batch-norm epsilon used by every layer.
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Input,
    Bb,
    Fcr,
    Fre,
    Fp,
}

/// Positions and normals of a batch of equally sized clouds, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub batch: usize,
    pub n: usize,
    pub positions: Vec<Point>,
    pub normals: Vec<Point>,
}

impl PointSet {
    pub fn new(batch: usize, n: usize, positions: Vec<Point>, normals: Vec<Point>) -> Result<Self> {
        if batch == 0 || n == 0 || positions.len() != batch * n || normals.len() != batch * n {
            return Err(Error::shape(
                "point_set",
                format!(
                    "{} positions / {} normals for {batch} clouds of {n}",
                    positions.len(),
                    normals.len()
                ),
            ));
        }
        Ok(PointSet {
            batch,
            n,
            positions,
            normals,
        })
    }

    /// One point per cloud at the origin with zero normal; the center of
    /// global pooling.
    pub fn origin(batch: usize) -> Self {
        PointSet {
            batch,
            n: 1,
            positions: vec![[0.0; 3]; batch],
            normals: vec![[0.0; 3]; batch],
        }
    }

    pub fn cloud(&self, b: usize) -> &[Point] {
        &self.positions[b * self.n..(b + 1) * self.n]
    }

    pub fn cloud_normals(&self, b: usize) -> &[Point] {
        &self.normals[b * self.n..(b + 1) * self.n]
    }

    /// Keeps `index[b]` of every cloud `b`; all index lists must have the same length.
    pub fn select(&self, index: &[Vec<usize>]) -> Self {
        let m = index.first().map_or(0, Vec::len);
        let mut positions = Vec::with_capacity(self.batch * m);
        let mut normals = Vec::with_capacity(self.batch * m);
        for (b, idx) in index.iter().enumerate() {
            for &i in idx {
                positions.push(self.positions[b * self.n + i]);
                normals.push(self.normals[b * self.n + i]);
            }
        }
        PointSet {
            batch: self.batch,
            n: m,
            positions,
            normals,
        }
    }
}

/// One abstraction level of one stage: points plus per-point features.
#[derive(Clone)]
pub struct LevelState {
    pub stage: Stage,
    pub level: usize,
    pub points: Rc<PointSet>,
    /// `[B·N, width]`; `None` when the level carries no feature channels.
    pub feats: Option<Var>,
    pub width: usize,
}

impl LevelState {
    /// The raw input level: geometry only, no feature channels.
    pub fn input(points: Rc<PointSet>) -> Self {
        LevelState {
            stage: Stage::Input,
            level: 0,
            points,
            feats: None,
            width: 0,
        }
    }

    /// `(channels, points per cloud)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.points.n)
    }

    pub fn feats(&self) -> Result<Var> {
        self.feats.ok_or_else(|| {
            Error::shape("level_state", format!("{:?} level {} has no features", self.stage, self.level))
        })
    }

    pub(crate) fn check<T: Float>(&self, tape: &Tape<T>) -> Result<()> {
        if let Some(f) = self.feats {
            let (rows, cols) = tape.dims2(f);
            if rows != self.points.batch * self.points.n || cols != self.width {
                return Err(Error::shape(
                    "level_state",
                    format!(
                        "{:?} level {}: features [{rows}, {cols}] for {}×{} points of width {}",
                        self.stage, self.level, self.points.batch, self.points.n, self.width
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// How the first farthest-point-sampling pick is made in each cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FpsStart {
    /// Lexicographically smallest point; independent of input order.
    #[default]
    Lexicographic,
    /// Index 0 of the current point order.
    First,
    /// Uniformly random, drawn from the context RNG.
    Random,
}

/// Per-forward-pass settings shared by all layers.
pub struct Ctx {
    pub mode: Mode,
    pub fps_start: FpsStart,
    /// Replace every batch norm by the identity. Used by wiring tests.
    pub bn_bypass: bool,
    pub rng: ChaCha8Rng,
}

impl Ctx {
    pub fn new(mode: Mode, rng: ChaCha8Rng) -> Self {
        Ctx {
            mode,
            fps_start: FpsStart::Lexicographic,
            bn_bypass: false,
            rng,
        }
    }

    pub fn eval() -> Self {
        use rand::SeedableRng;
        Self::new(Mode::Eval, ChaCha8Rng::seed_from_u64(0))
    }

    pub(crate) fn start_policy(&mut self, pts: &[Point]) -> StartPolicy {
        match self.fps_start {
            FpsStart::Lexicographic => StartPolicy::Index(lexicographic_min(pts).unwrap_or(0)),
            FpsStart::First => StartPolicy::Index(0),
            FpsStart::Random => StartPolicy::random(&mut self.rng, pts.len()),
        }
    }
}

/// Raw `[x y z nx ny nz]` rows of a point set, as used by the last
/// segmentation skip connection.
pub fn geometry_features<T: Float>(tape: &mut Tape<T>, pts: &PointSet) -> Result<Var> {
    let mut data = Vec::with_capacity(pts.positions.len() * 6);
    for (p, n) in pts.positions.iter().zip(&pts.normals) {
        data.extend(p.iter().chain(n).map(|&v| T::from_f64(v)));
    }
    tape.constant(&[pts.positions.len(), 6], data)
}

/// Converts a configuration-level error into one naming the layer.
pub(crate) fn in_layer<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config { message, layer } if layer != name => Error::Config {
            layer: name.to_string(),
            message: format!("{layer}: {message}"),
        },
        Error::NonFinite { op } => Error::NonFinite {
            op: format!("{name}/{op}"),
        },
        other => other,
    })
}
