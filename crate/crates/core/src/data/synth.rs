//! Labeled synthetic surfaces for desk-scale experiments.
//!
//! Every shape is centrally symmetric, so points are drawn in antipodal pairs
//! `(p, n)` / `(-p, -n)`; the sample centroid is then the origin and the
//! unit-ball normalization only rescales.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{normalize3, Dataset, PointCloud};
use crate::error::{Error, Result};
use crate::pointops::{normalize_positions, Point};

pub const SHAPE_NAMES: [&str; 4] = ["sphere", "cube", "cylinder", "torus"];

const TORUS_MAJOR: f64 = 1.0;
const TORUS_MINOR: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Sphere,
    Cube,
    Cylinder,
    Torus,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Sphere,
        ShapeKind::Cube,
        ShapeKind::Cylinder,
        ShapeKind::Torus,
    ];

    pub fn name(self) -> &'static str {
        SHAPE_NAMES[self as usize]
    }

    /// One surface sample and its outward normal, in the canonical frame.
    fn sample<R: Rng>(self, rng: &mut R) -> (Point, Point) {
        match self {
            ShapeKind::Sphere => {
                let d = normalize3([
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                ]);
                (d, d)
            }
            ShapeKind::Cube => {
                let face = rng.gen_range(0..6);
                let axis = face % 3;
                let sign = if face < 3 { 1.0 } else { -1.0 };
                let mut p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                p[axis] = sign;
                let mut n = [0.0; 3];
                n[axis] = sign;
                (p, n)
            }
            ShapeKind::Cylinder => {
                // Radius 1, height 2: side area 4π, caps 2π together.
                let theta = rng.gen_range(0.0..2.0 * PI);
                if rng.gen_bool(2.0 / 3.0) {
                    let (s, c) = theta.sin_cos();
                    ([c, s, rng.gen_range(-1.0..1.0)], [c, s, 0.0])
                } else {
                    let r = rng.gen::<f64>().sqrt();
                    let z = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    let (s, c) = theta.sin_cos();
                    ([r * c, r * s, z], [0.0, 0.0, z])
                }
            }
            ShapeKind::Torus => {
                // Area element is proportional to R + r cos(tube angle).
                let tube = loop {
                    let t = rng.gen_range(0.0..2.0 * PI);
                    let accept = (TORUS_MAJOR + TORUS_MINOR * f64::cos(t)) / (TORUS_MAJOR + TORUS_MINOR);
                    if rng.gen::<f64>() < accept {
                        break t;
                    }
                };
                let phi = rng.gen_range(0.0..2.0 * PI);
                let (sp, cp) = phi.sin_cos();
                let (st, ct) = tube.sin_cos();
                let ring = TORUS_MAJOR + TORUS_MINOR * ct;
                ([ring * cp, ring * sp, TORUS_MINOR * st], [ct * cp, ct * sp, st])
            }
        }
    }

    /// Two-part labels: sphere by hemisphere (`z >= 0` is part 1), torus by
    /// inner (part 0) or outer (part 1) half. Other shapes split like the sphere.
    fn part(self, p: &Point) -> usize {
        match self {
            ShapeKind::Torus => {
                usize::from((p[0] * p[0] + p[1] * p[1]).sqrt() >= TORUS_MAJOR)
            }
            _ => usize::from(p[2] >= 0.0),
        }
    }
}

type Rotation = [[f64; 3]; 3];

fn random_rotation<R: Rng>(rng: &mut R) -> Rotation {
    let mut q: [f64; 4] = [
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    ];
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut q {
        *v /= n;
    }
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn rotation_about_z<R: Rng>(rng: &mut R) -> Rotation {
    let (s, c) = rng.gen_range(0.0..2.0 * PI).sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn rotate(r: &Rotation, p: Point) -> Point {
    [
        r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2],
        r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
        r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2],
    ]
}

fn surface<R: Rng>(kind: ShapeKind, n_points: usize, rot: &Rotation, rng: &mut R) -> (Vec<Point>, Vec<Point>, Vec<usize>) {
    let mut pos = Vec::with_capacity(n_points + 1);
    let mut nrm = Vec::with_capacity(n_points + 1);
    let mut parts = Vec::with_capacity(n_points + 1);
    while pos.len() < n_points {
        let (p, n) = kind.sample(rng);
        for (p, n) in [(p, n), ([-p[0], -p[1], -p[2]], [-n[0], -n[1], -n[2]])] {
            parts.push(kind.part(&p));
            pos.push(rotate(rot, p));
            nrm.push(normalize3(rotate(rot, n)));
        }
    }
    pos.truncate(n_points);
    nrm.truncate(n_points);
    parts.truncate(n_points);
    normalize_positions(&mut pos);
    (pos, nrm, parts)
}

fn check_points(n_points: usize) -> Result<()> {
    if n_points < 64 {
        return Err(Error::InvalidArgument(format!(
            "synthetic clouds need at least 64 points, got {n_points}"
        )));
    }
    Ok(())
}

/// `n_per_class` clouds of each of the four shapes, interleaved by class, each
/// under an independent random rotation and normalized to the unit ball.
pub fn synth_shapes(n_per_class: usize, n_points: usize, seed: u64) -> Result<Dataset> {
    check_points(n_points)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clouds = Vec::with_capacity(n_per_class * 4);
    for _ in 0..n_per_class {
        for (class, kind) in ShapeKind::ALL.iter().enumerate() {
            let rot = random_rotation(&mut rng);
            let (pos, nrm, _) = surface(*kind, n_points, &rot, &mut rng);
            clouds.push(PointCloud::new(pos, nrm)?.with_class(class));
        }
    }
    Ok(Dataset {
        clouds,
        class_names: SHAPE_NAMES.iter().map(|s| s.to_string()).collect(),
        n_parts: 0,
    })
}

/// Two-part segmentation clouds of the given shapes. Rotations are about the
/// z axis only, so the hemisphere split stays defined in the world frame.
pub fn synth_segmentation(
    kinds: &[ShapeKind],
    n_per_class: usize,
    n_points: usize,
    seed: u64,
) -> Result<Dataset> {
    check_points(n_points)?;
    if kinds.is_empty() {
        return Err(Error::InvalidArgument("no shapes requested".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clouds = Vec::with_capacity(n_per_class * kinds.len());
    for _ in 0..n_per_class {
        for (class, kind) in kinds.iter().enumerate() {
            let rot = rotation_about_z(&mut rng);
            let (pos, nrm, parts) = surface(*kind, n_points, &rot, &mut rng);
            clouds.push(PointCloud::new(pos, nrm)?.with_class(class).with_parts(parts)?);
        }
    }
    Ok(Dataset {
        clouds,
        class_names: kinds.iter().map(|k| k.name().to_string()).collect(),
        n_parts: 2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointops::{dist2, knn, normalize_cloud};

    #[test]
    fn sphere_normals_equal_positions() {
        let ds = synth_shapes(2, 128, 7).unwrap();
        for c in ds.clouds.iter().filter(|c| c.class == Some(0)) {
            for (p, n) in c.positions.iter().zip(&c.normals) {
                for k in 0..3 {
                    assert!((p[k] - n[k]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn clouds_are_normalized_and_unit_normal() {
        let ds = synth_shapes(3, 100, 1).unwrap();
        for c in &ds.clouds {
            assert!(c.max_normal_error() < 1e-4);
            let again = normalize_cloud(c);
            for (a, b) in c.positions.iter().zip(&again.positions) {
                for k in 0..3 {
                    assert!((a[k] - b[k]).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        assert_eq!(synth_shapes(2, 64, 11).unwrap(), synth_shapes(2, 64, 11).unwrap());
        assert_ne!(synth_shapes(2, 64, 11).unwrap(), synth_shapes(2, 64, 12).unwrap());
        assert!(synth_shapes(1, 63, 0).is_err());
    }

    // Mean nearest-neighbor spacing per class, averaged over a few instances.
    fn spacing(ds: &Dataset, class: usize) -> f64 {
        let mut total = 0.0;
        let mut count = 0.0;
        for c in ds.clouds.iter().filter(|c| c.class == Some(class)) {
            let nn = knn(&c.positions, &c.positions, 2).unwrap();
            total += nn.iter().map(|r| r[1].distance).sum::<f64>() / nn.len() as f64;
            count += 1.0;
        }
        total / count
    }

    fn mean_radius(ds: &Dataset, class: usize) -> f64 {
        let clouds: Vec<_> = ds.clouds.iter().filter(|c| c.class == Some(class)).collect();
        clouds
            .iter()
            .map(|c| c.positions.iter().map(|p| dist2(p, &[0.0; 3]).sqrt()).sum::<f64>() / c.len() as f64)
            .sum::<f64>()
            / clouds.len() as f64
    }

    #[test]
    fn shapes_have_distinct_statistics() {
        let ds = synth_shapes(4, 256, 5).unwrap();
        // The sphere's points all sit at radius 1, so its spacing is the widest.
        let s: Vec<f64> = (0..4).map(|c| spacing(&ds, c)).collect();
        assert!(s[1..].iter().all(|&v| v < s[0] * 0.9), "{s:?}");
        let r: Vec<f64> = (0..4).map(|c| mean_radius(&ds, c)).collect();
        assert!((r[0] - 1.0).abs() < 1e-9);
        for i in 0..4 {
            for j in i + 1..4 {
                assert!((r[i] - r[j]).abs() > 0.005, "{r:?}");
            }
        }
    }

    #[test]
    fn segmentation_labels_follow_geometry() {
        let ds = synth_segmentation(&[ShapeKind::Sphere, ShapeKind::Torus], 2, 128, 3).unwrap();
        assert_eq!(ds.n_parts, 2);
        for c in &ds.clouds {
            let parts = c.parts.as_ref().unwrap();
            let ones = parts.iter().filter(|&&p| p == 1).count();
            assert!(ones > 32 && ones < 96);
            if c.class == Some(0) {
                for (p, &l) in c.positions.iter().zip(parts) {
                    if p[2].abs() > 1e-9 {
                        assert_eq!(l, usize::from(p[2] > 0.0));
                    }
                }
            }
        }
    }
}
