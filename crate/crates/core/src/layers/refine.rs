use std::rc::Rc;

use rand::Rng;

use super::sa::{group_max_pool, grouped_rows, GroupSpec};
use super::{in_layer, Ctx, LevelState, PointSet, SharedMlp, Stage};
use crate::error::{Error, Result};
use crate::pointops::three_nn_weights;
use crate::tensor::{Float, ParamStore, Tape, Var};

fn concat_levels<T: Float>(tape: &mut Tape<T>, name: &str, levels: &[&LevelState]) -> Result<Var> {
    let first = levels[0];
    for l in &levels[1..] {
        if !Rc::ptr_eq(&l.points, &first.points) && *l.points != *first.points {
            return Err(Error::shape(
                "concat_levels",
                format!("{name}: inputs live on different point sets"),
            ));
        }
    }
    let feats = levels.iter().map(|l| l.feats()).collect::<Result<Vec<_>>>()?;
    tape.concat_channels(&feats)
}

/// Inverse-distance interpolation of `x` (living on `coarse`) onto `fine`.
pub(crate) fn upsample<T: Float>(tape: &mut Tape<T>, x: Var, coarse: &PointSet, fine: &PointSet) -> Result<Var> {
    if coarse.batch != fine.batch {
        return Err(Error::shape("upsample", "batch sizes differ"));
    }
    let mut index = Vec::new();
    let mut weights = Vec::new();
    let mut k = 0;
    for b in 0..coarse.batch {
        let (idx, w, kk) = three_nn_weights(coarse.cloud(b), fine.cloud(b))?;
        k = kk;
        index.extend(idx.into_iter().map(|i| (b * coarse.n + i) as u32));
        weights.extend(w.into_iter().map(T::from_f64));
    }
    tape.interpolate(x, index, weights, k)
}

/// One cross-referencing level: concatenate same-level features, refine with
/// `φ(cat) + reduction(cat, k)`, upsample to the next finer point set.
#[derive(Debug, Clone)]
pub struct FcrLevel {
    pub name: String,
    pub c_fcr: usize,
    pub c_bb: usize,
    pub k: usize,
    pub residual: bool,
    pub mlp: SharedMlp,
}

impl FcrLevel {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore<f32>,
        name: &str,
        c_fcr: usize,
        c_bb: usize,
        widths: &[usize],
        n_groups: usize,
        residual: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let c_cat = c_fcr + c_bb;
        let out = *widths.last().ok_or_else(|| Error::config(name, "empty MLP"))?;
        if out == 0 || c_cat % out != 0 {
            return Err(Error::config(
                name,
                format!("reduction factor {c_cat}/{out} is not an integer"),
            ));
        }
        let mlp = SharedMlp::new(store, name, c_cat, widths, n_groups, false, rng)?;
        Ok(FcrLevel {
            name: name.to_string(),
            c_fcr,
            c_bb,
            k: c_cat / out,
            residual,
            mlp,
        })
    }

    pub fn c_out(&self) -> usize {
        self.mlp.c_out()
    }

    pub fn num_params(&self) -> usize {
        self.mlp.num_params()
    }

    /// FLOPs for one cloud refined at `n` points and upsampled to `n_next`.
    pub fn flops(&self, n: usize, n_next: usize, n_coarse: usize) -> u64 {
        let c_cat = self.c_fcr + self.c_bb;
        let out = self.c_out();
        let residual = if self.residual { n * (c_cat - out) + n * out } else { 0 };
        let k = n_coarse.min(3);
        self.mlp.flops(n) + residual as u64 + (2 * k * n_next * out) as u64
    }

    /// Refined features before upsampling.
    pub fn refine<T: Float>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        ctx: &mut Ctx,
        fcr: Option<&LevelState>,
        bb: &LevelState,
    ) -> Result<Var> {
        let mut inputs = Vec::with_capacity(2);
        inputs.extend(fcr);
        inputs.push(bb);
        let width: usize = inputs.iter().map(|l| l.width).sum();
        if width != self.c_fcr + self.c_bb {
            return Err(Error::shape(
                "fcr_level",
                format!("{}: expected {} concatenated channels, got {width}", self.name, self.c_fcr + self.c_bb),
            ));
        }
        let cat = concat_levels(tape, &self.name, &inputs)?;
        let phi = self.mlp.forward(tape, store, ctx, cat)?;
        if !self.residual {
            return Ok(phi);
        }
        let r = in_layer(&self.name, tape.reduction(cat, self.k))?;
        let out = tape.add(phi, r)?;
        tape.release(phi);
        if r != cat {
            tape.release(r);
        }
        Ok(out)
    }

    pub fn forward<T: Float>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        ctx: &mut Ctx,
        fcr: Option<&LevelState>,
        bb: &LevelState,
        next: &Rc<PointSet>,
        level: usize,
    ) -> Result<LevelState> {
        let refined = self.refine(tape, store, ctx, fcr, bb)?;
        let feats = in_layer(&self.name, upsample(tape, refined, &bb.points, next))?;
        tape.release(refined);
        Ok(LevelState {
            stage: Stage::Fcr,
            level,
            points: Rc::clone(next),
            feats: Some(feats),
            width: self.c_out(),
        })
    }
}

/// One re-encoding level: concatenate features of all stages, refine with
/// `φ(cat) + cat`, then max-pool onto the given coarser centers (or globally).
#[derive(Debug, Clone)]
pub struct FreLevel {
    pub name: String,
    pub c_in: Vec<usize>,
    pub group: GroupSpec,
    pub residual: bool,
    pub mlp: SharedMlp,
}

impl FreLevel {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore<f32>,
        name: &str,
        c_in: &[usize],
        widths: &[usize],
        group: GroupSpec,
        n_groups: usize,
        residual: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let c_cat: usize = c_in.iter().sum();
        let out = *widths.last().ok_or_else(|| Error::config(name, "empty MLP"))?;
        if c_cat != out {
            return Err(Error::config(
                name,
                format!("identity residual needs {c_cat} concatenated channels to equal the final width {out}"),
            ));
        }
        if let Some(r) = group.radius {
            if !(r > 0.0) || group.samples == 0 {
                return Err(Error::config(name, "downsampling needs radius > 0 and samples >= 1"));
            }
        }
        let mlp = SharedMlp::new(store, name, c_cat, widths, n_groups, false, rng)?;
        Ok(FreLevel {
            name: name.to_string(),
            c_in: c_in.to_vec(),
            group,
            residual,
            mlp,
        })
    }

    pub fn c_out(&self) -> usize {
        self.mlp.c_out()
    }

    pub fn num_params(&self) -> usize {
        self.mlp.num_params()
    }

    /// FLOPs for one cloud refined at `n` points and pooled onto `m` centers.
    pub fn flops(&self, n: usize, m: usize) -> u64 {
        let out = self.c_out();
        let residual = if self.residual { n * out } else { 0 };
        let (m, s) = match self.group.radius {
            Some(_) => (m, self.group.samples),
            None => (1, n),
        };
        self.mlp.flops(n) + residual as u64 + (m * (s - 1) * out) as u64
    }

    /// `inputs` in the order FRE, FCR, backbone (the FRE entry is absent at
    /// the first level). `centers` is ignored for global pooling.
    pub fn forward<T: Float>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        ctx: &mut Ctx,
        inputs: &[&LevelState],
        centers: Option<&Rc<PointSet>>,
        level: usize,
    ) -> Result<LevelState> {
        let widths: Vec<usize> = inputs.iter().map(|l| l.width).collect();
        if widths != self.c_in {
            return Err(Error::shape(
                "fre_level",
                format!("{}: expected input widths {:?}, got {widths:?}", self.name, self.c_in),
            ));
        }
        let cat = concat_levels(tape, &self.name, inputs)?;
        let phi = self.mlp.forward(tape, store, ctx, cat)?;
        let refined = if self.residual {
            let r = tape.add(phi, cat)?;
            tape.release(phi);
            r
        } else {
            phi
        };
        let here = LevelState {
            stage: Stage::Fre,
            level,
            points: Rc::clone(&inputs[0].points),
            feats: Some(refined),
            width: self.c_out(),
        };
        let target = match (self.group.radius, centers) {
            (None, _) => Rc::new(PointSet::origin(here.points.batch)),
            (Some(_), Some(c)) => Rc::clone(c),
            (Some(_), None) => {
                return Err(Error::shape("fre_level", format!("{}: no downsampling centers", self.name)))
            }
        };
        let (rows, set) = grouped_rows(tape, &here, &target, self.group, false)?;
        tape.release(refined);
        let feats = group_max_pool(tape, rows, set)?;
        tape.release(rows);
        Ok(LevelState {
            stage: Stage::Fre,
            level,
            points: target,
            feats: Some(feats),
            width: self.c_out(),
        })
    }
}
