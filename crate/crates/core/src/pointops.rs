//! Geometric kernels on 3D point sets: farthest point sampling, ball query,
//! k-nearest neighbors and inverse-distance interpolation.
//!
//! All kernels are brute force, `O(N·M)`, and deterministic: ties are always
//! broken toward the lowest index.

use std::cmp::Ordering;

use rand::Rng;

use crate::data::PointCloud;
use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// Added to squared distances before inversion in [`three_nn_weights`].
pub const INTERP_EPS: f64 = 1e-8;

#[inline]
pub fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// How farthest point sampling picks its first point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartPolicy {
    Index(usize),
    /// The lexicographically smallest `(x, y, z)`; makes the selected set
    /// independent of input order.
    Lexicographic,
}

impl StartPolicy {
    pub fn random<R: Rng>(rng: &mut R, n: usize) -> Self {
        StartPolicy::Index(rng.gen_range(0..n.max(1)))
    }
}

pub fn lexicographic_min(pts: &[Point]) -> Option<usize> {
    (0..pts.len()).min_by(|&a, &b| {
        let (p, q) = (&pts[a], &pts[b]);
        p[0].total_cmp(&q[0])
            .then(p[1].total_cmp(&q[1]))
            .then(p[2].total_cmp(&q[2]))
            .then(a.cmp(&b))
    })
}

/// Greedy farthest point sampling. Each pick maximizes the distance to the
/// nearest already-selected point.
pub fn farthest_point_sample(pts: &[Point], m: usize, start: StartPolicy) -> Result<Vec<usize>> {
    let n = pts.len();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {m} of {n} points"
        )));
    }
    let first = match start {
        StartPolicy::Index(i) if i < n => i,
        StartPolicy::Index(i) => {
            return Err(Error::InvalidArgument(format!("start index {i} >= {n}")))
        }
        StartPolicy::Lexicographic => lexicographic_min(pts).expect("n >= 1"),
    };
    let mut min_d = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut out = Vec::with_capacity(m);
    let mut cur = first;
    loop {
        out.push(cur);
        taken[cur] = true;
        if out.len() == m {
            break;
        }
        let c = pts[cur];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d = dist2(&pts[i], &c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        cur = best;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGroup {
    pub center_index: usize,
    pub members: Vec<usize>,
    /// Set when no source point was inside the ball and the nearest point was
    /// used instead.
    pub fallback: bool,
}

/// Up to `samples` source indices within `radius` of each center, in
/// ascending source order. Short groups repeat their first member; empty
/// balls fall back to the nearest source point.
pub fn ball_query(
    src: &[Point],
    centers: &[Point],
    radius: f64,
    samples: usize,
) -> Result<Vec<NeighborGroup>> {
    if src.is_empty() {
        return Err(Error::InvalidArgument("ball query over an empty source set".into()));
    }
    if !(radius > 0.0) || samples == 0 {
        return Err(Error::InvalidArgument(format!(
            "ball query needs radius > 0 and samples >= 1 (got {radius}, {samples})"
        )));
    }
    let r2 = radius * radius;
    Ok(centers
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            let mut members = Vec::with_capacity(samples);
            for (i, p) in src.iter().enumerate() {
                if dist2(p, c) <= r2 {
                    members.push(i);
                    if members.len() == samples {
                        break;
                    }
                }
            }
            let fallback = members.is_empty();
            if fallback {
                members.push(nearest(src, c));
            }
            let first = members[0];
            members.resize(samples, first);
            NeighborGroup {
                center_index: ci,
                members,
                fallback,
            }
        })
        .collect())
}

fn nearest(src: &[Point], q: &Point) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in src.iter().enumerate() {
        let d = dist2(p, q);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

fn by_distance(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// The `k` nearest source points of every query, nearest first, ties by
/// lowest index.
pub fn knn(src: &[Point], queries: &[Point], k: usize) -> Result<Vec<Vec<Neighbor>>> {
    if k == 0 || k > src.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} invalid for {} source points",
            src.len()
        )));
    }
    let mut buf: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    Ok(queries
        .iter()
        .map(|q| {
            buf.clear();
            for (i, p) in src.iter().enumerate() {
                let cand = (dist2(p, q), i);
                if buf.len() == k && by_distance(&cand, &buf[k - 1]) != Ordering::Less {
                    continue;
                }
                let pos = buf.partition_point(|e| by_distance(e, &cand) == Ordering::Less);
                buf.insert(pos, cand);
                buf.truncate(k);
            }
            buf.iter()
                .map(|&(d2, index)| Neighbor {
                    index,
                    distance: d2.sqrt(),
                })
                .collect()
        })
        .collect())
}

/// Interpolation stencil from `coarse` onto `fine`: per fine point, the
/// indices of its (up to) three nearest coarse points and normalized
/// inverse-squared-distance weights. Returns `(index, weights, k)` laid out
/// `k` entries per fine point.
pub fn three_nn_weights(coarse: &[Point], fine: &[Point]) -> Result<(Vec<usize>, Vec<f64>, usize)> {
    if coarse.is_empty() {
        return Err(Error::InvalidArgument("interpolation from an empty set".into()));
    }
    let k = coarse.len().min(3);
    let nn = knn(coarse, fine, k)?;
    let mut index = Vec::with_capacity(fine.len() * k);
    let mut weights = Vec::with_capacity(fine.len() * k);
    for row in nn {
        let inv: Vec<f64> = row
            .iter()
            .map(|n| 1.0 / (n.distance * n.distance + INTERP_EPS))
            .collect();
        let total: f64 = inv.iter().sum();
        for (n, w) in row.iter().zip(inv) {
            index.push(n.index);
            weights.push(w / total);
        }
    }
    Ok((index, weights, k))
}

/// Centers the cloud at the origin and scales it into the unit ball. A cloud
/// of identical points collapses onto the origin. Normals are untouched.
pub fn normalize_cloud(pc: &PointCloud) -> PointCloud {
    let mut out = pc.clone();
    normalize_positions(&mut out.positions);
    out
}

pub fn normalize_positions(pts: &mut [Point]) {
    if pts.is_empty() {
        return;
    }
    let n = pts.len() as f64;
    let mut c = [0.0; 3];
    for p in pts.iter() {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    for v in &mut c {
        *v /= n;
    }
    let mut max = 0.0f64;
    for p in pts.iter_mut() {
        for a in 0..3 {
            p[a] -= c[a];
        }
        max = max.max(dist2(p, &[0.0; 3]).sqrt());
    }
    if max > 0.0 {
        for p in pts.iter_mut() {
            for v in p.iter_mut() {
                *v /= max;
            }
        }
    }
}
