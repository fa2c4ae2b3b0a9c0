use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{normalize3, PointCloud};
use crate::error::{Error, Result};
use crate::pointops::{farthest_point_sample, StartPolicy};

pub const SCALE_RANGE: (f64, f64) = (0.66, 1.5);
pub const SHIFT_RANGE: (f64, f64) = (-0.2, 0.2);

/// One draw of per-axis scale and shift. Scaling is applied first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub scale: [f64; 3],
    pub shift: [f64; 3],
}

impl AugmentDraw {
    pub const IDENTITY: AugmentDraw = AugmentDraw {
        scale: [1.0; 3],
        shift: [0.0; 3],
    };

    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        let mut d = Self::IDENTITY;
        for a in 0..3 {
            d.scale[a] = rng.gen_range(SCALE_RANGE.0..=SCALE_RANGE.1);
        }
        for a in 0..3 {
            d.shift[a] = rng.gen_range(SHIFT_RANGE.0..=SHIFT_RANGE.1);
        }
        d
    }

    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        let mut out = cloud.clone();
        if *self == Self::IDENTITY {
            return out;
        }
        for p in &mut out.positions {
            for a in 0..3 {
                p[a] = p[a] * self.scale[a] + self.shift[a];
            }
        }
        for n in &mut out.normals {
            *n = normalize3([n[0] / self.scale[0], n[1] / self.scale[1], n[2] / self.scale[2]]);
        }
        out
    }
}

/// Random anisotropic scale then translation.
pub fn augment<R: Rng>(cloud: &PointCloud, rng: &mut R) -> PointCloud {
    AugmentDraw::sample(rng).apply(cloud)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplePolicy {
    Uniform,
    Fps(StartPolicy),
}

/// Picks `m` points. Uniform sampling is without replacement; when `m`
/// exceeds the cloud size every point is kept once and the remainder is drawn
/// with replacement. FPS requires `m <= N`.
pub fn sample_points<R: Rng>(
    cloud: &PointCloud,
    m: usize,
    policy: SamplePolicy,
    rng: &mut R,
) -> Result<PointCloud> {
    let n = cloud.len();
    if m == 0 {
        return Err(Error::InvalidArgument("cannot sample zero points".into()));
    }
    let index = match policy {
        SamplePolicy::Fps(start) => farthest_point_sample(&cloud.positions, m, start)?,
        SamplePolicy::Uniform if m <= n => sample(rng, n, m).into_vec(),
        SamplePolicy::Uniform => {
            let mut idx = sample(rng, n, n).into_vec();
            idx.extend((n..m).map(|_| rng.gen_range(0..n)));
            idx
        }
    };
    Ok(cloud.select(&index))
}

/// Appends `n_noise` points uniform in `[-1, 1]^3` with random unit normals.
/// Part labels, when present, are copied from the nearest original point.
pub fn inject_noise<R: Rng>(cloud: &PointCloud, n_noise: usize, rng: &mut R) -> PointCloud {
    let mut out = cloud.clone();
    for _ in 0..n_noise {
        let p = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
        let n = normalize3([
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ]);
        if let Some(parts) = &mut out.parts {
            let near = (0..cloud.len())
                .min_by(|&a, &b| {
                    crate::pointops::dist2(&cloud.positions[a], &p)
                        .total_cmp(&crate::pointops::dist2(&cloud.positions[b], &p))
                })
                .expect("cloud is non-empty");
            parts.push(parts[near]);
        }
        out.positions.push(p);
        out.normals.push(n);
    }
    out
}
