use std::rc::Rc;

use rand::Rng;

use super::{in_layer, Ctx, LevelState, PointSet, SharedMlp, Stage};
use crate::error::{Error, Result};
use crate::pointops::{ball_query, farthest_point_sample};
use crate::tensor::{Float, ParamStore, Tape, Var};

/// Neighborhood definition: a ball of `radius` holding `samples` members, or
/// every point of the cloud when `radius` is `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupSpec {
    pub radius: Option<f64>,
    pub samples: usize,
}

impl GroupSpec {
    pub const GLOBAL: GroupSpec = GroupSpec {
        radius: None,
        samples: 0,
    };

    /// Members per group for a source cloud of `n` points.
    pub fn set_size(&self, n: usize) -> usize {
        match self.radius {
            Some(_) => self.samples,
            None => n,
        }
    }
}

/// Gathers the members of every group into consecutive rows, groups ordered
/// by cloud then center. With `geometry`, each row is extended by the
/// member's center-relative position and its normal. Returns the rows and the
/// group size.
pub fn grouped_rows<T: Float>(
    tape: &mut Tape<T>,
    src: &LevelState,
    centers: &PointSet,
    spec: GroupSpec,
    geometry: bool,
) -> Result<(Var, usize)> {
    let pts = &src.points;
    if centers.batch != pts.batch {
        return Err(Error::shape(
            "grouping",
            format!("{} center clouds for {} source clouds", centers.batch, pts.batch),
        ));
    }
    let set = spec.set_size(pts.n);
    let rows = pts.batch * centers.n * set;
    let mut index = Vec::with_capacity(rows);
    let mut geom = Vec::with_capacity(if geometry { rows * 6 } else { 0 });
    for b in 0..pts.batch {
        let cloud = pts.cloud(b);
        let normals = pts.cloud_normals(b);
        let ctr = centers.cloud(b);
        let groups: Vec<Vec<usize>> = match spec.radius {
            Some(r) => ball_query(cloud, ctr, r, spec.samples)?
                .into_iter()
                .map(|g| g.members)
                .collect(),
            None => vec![(0..pts.n).collect(); ctr.len()],
        };
        for (c, members) in ctr.iter().zip(&groups) {
            for &j in members {
                index.push((b * pts.n + j) as u32);
                if geometry {
                    let q = cloud[j];
                    let n = normals[j];
                    geom.extend(
                        [q[0] - c[0], q[1] - c[1], q[2] - c[2], n[0], n[1], n[2]]
                            .iter()
                            .map(|&v| T::from_f64(v)),
                    );
                }
            }
        }
    }
    let gathered = match src.feats {
        Some(f) => Some(tape.gather_rows(f, index)?),
        None => None,
    };
    let out = match (gathered, geometry) {
        (Some(g), false) => g,
        (None, true) => tape.constant(&[rows, 6], geom)?,
        (Some(g), true) => {
            let geo = tape.constant(&[rows, 6], geom)?;
            let cat = tape.concat_channels(&[g, geo])?;
            tape.release(g);
            tape.release(geo);
            cat
        }
        (None, false) => return Err(Error::shape("grouping", "nothing to group: no features, no geometry")),
    };
    Ok((out, set))
}

/// Channel-wise max over consecutive groups of `set` rows.
pub fn group_max_pool<T: Float>(tape: &mut Tape<T>, rows: Var, set: usize) -> Result<Var> {
    tape.group_max(rows, set)
}

/// Farthest-point-sampled centers for every cloud.
pub(crate) fn sample_centers(ctx: &mut Ctx, pts: &PointSet, m: usize) -> Result<PointSet> {
    if m > pts.n {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {m} centers from {} points",
            pts.n
        )));
    }
    let mut index = Vec::with_capacity(pts.batch);
    for b in 0..pts.batch {
        let start = ctx.start_policy(pts.cloud(b));
        index.push(farthest_point_sample(pts.cloud(b), m, start)?);
    }
    Ok(pts.select(&index))
}

/// Set abstraction with one (SSG) or several (MSG) grouping scales, or
/// global pooling when built without radii.
#[derive(Debug, Clone)]
pub struct SetAbstraction {
    pub name: String,
    /// Feature channels of the input level, excluding the 6 geometry channels.
    pub c_in: usize,
    pub scales: Vec<(GroupSpec, SharedMlp)>,
}

impl SetAbstraction {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore<f32>,
        name: &str,
        c_in: usize,
        radii: &[f64],
        samples: &[usize],
        mlps: &[Vec<usize>],
        n_groups: usize,
        residual: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let specs: Vec<GroupSpec> = if radii.is_empty() {
            if mlps.len() != 1 {
                return Err(Error::config(name, "global pooling takes exactly one MLP"));
            }
            vec![GroupSpec::GLOBAL]
        } else {
            if radii.len() != samples.len() || radii.len() != mlps.len() {
                return Err(Error::config(
                    name,
                    format!(
                        "{} radii, {} sample counts and {} MLPs",
                        radii.len(),
                        samples.len(),
                        mlps.len()
                    ),
                ));
            }
            if let Some(r) = radii.iter().find(|&&r| !(r > 0.0)) {
                return Err(Error::config(name, format!("radius {r} must be positive")));
            }
            if samples.contains(&0) {
                return Err(Error::config(name, "zero samples per group"));
            }
            radii
                .iter()
                .zip(samples)
                .map(|(&r, &s)| GroupSpec {
                    radius: Some(r),
                    samples: s,
                })
                .collect()
        };
        let multi = specs.len() > 1;
        let scales = specs
            .into_iter()
            .zip(mlps)
            .enumerate()
            .map(|(i, (spec, widths))| {
                let mlp_name = if multi { format!("{name}.scale{i}") } else { name.to_string() };
                SharedMlp::new(store, &mlp_name, c_in + 6, widths, n_groups, residual, rng).map(|m| (spec, m))
            })
            .collect::<Result<_>>()?;
        Ok(SetAbstraction {
            name: name.to_string(),
            c_in,
            scales,
        })
    }

    pub fn is_global(&self) -> bool {
        self.scales[0].0.radius.is_none()
    }

    pub fn c_out(&self) -> usize {
        self.scales.iter().map(|(_, m)| m.c_out()).sum()
    }

    pub fn num_params(&self) -> usize {
        self.scales.iter().map(|(_, m)| m.num_params()).sum()
    }

    /// FLOPs for one cloud: `m` centers over `n` source points.
    pub fn flops(&self, m: usize, n: usize) -> u64 {
        let m = if self.is_global() { 1 } else { m };
        self.scales
            .iter()
            .map(|(spec, mlp)| {
                let s = spec.set_size(n);
                mlp.flops(m * s) + (m * (s - 1) * mlp.c_out()) as u64
            })
            .sum()
    }

    /// Samples `m` centers per cloud (ignored for global pooling) and encodes
    /// their neighborhoods.
    pub fn forward<T: Float>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        ctx: &mut Ctx,
        input: &LevelState,
        m: usize,
        level: usize,
    ) -> Result<LevelState> {
        input.check(tape)?;
        if input.width != self.c_in {
            return Err(Error::shape(
                "set_abstraction",
                format!("{}: expected {} input channels, got {}", self.name, self.c_in, input.width),
            ));
        }
        let centers = if self.is_global() {
            PointSet::origin(input.points.batch)
        } else {
            in_layer(&self.name, sample_centers(ctx, &input.points, m))?
        };
        let mut outs = Vec::with_capacity(self.scales.len());
        for (spec, mlp) in &self.scales {
            let (rows, set) = grouped_rows(tape, input, &centers, *spec, true)?;
            let h = mlp.forward(tape, store, ctx, rows)?;
            tape.release(rows);
            let pooled = in_layer(&self.name, group_max_pool(tape, h, set))?;
            tape.release(h);
            outs.push(pooled);
        }
        let feats = tape.concat_channels(&outs)?;
        if outs.len() > 1 {
            for o in outs {
                tape.release(o);
            }
        }
        Ok(LevelState {
            stage: Stage::Bb,
            level,
            points: Rc::new(centers),
            feats: Some(feats),
            width: self.c_out(),
        })
    }
}
