use rand::Rng;

use super::{in_layer, Ctx, BN_EPS};
use crate::error::{Error, Result};
use crate::tensor::{Float, ParamId, ParamStore, StatsId, Tape, Var};

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Clone, Copy)]
struct BnIds {
    gamma: ParamId,
    beta: ParamId,
    stats: StatsId,
}

/// Grouped linear, optional batch norm, optional ReLU, optional identity
/// residual and dropout, in that order.
#[derive(Debug, Clone)]
pub struct MlpLayer {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub groups: usize,
    pub relu: bool,
    pub residual: bool,
    pub dropout: f64,
    w: ParamId,
    /// Absent when batch norm follows, whose shift makes it redundant.
    b: Option<ParamId>,
    bn: Option<BnIds>,
}

impl MlpLayer {
    #[allow(clippy::too_many_arguments)]
    fn new<R: Rng>(
        store: &mut ParamStore<f32>,
        name: String,
        c_in: usize,
        c_out: usize,
        groups: usize,
        batch_norm: bool,
        relu: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if c_in == 0 || c_out == 0 {
            return Err(Error::config(name, "zero-width layer"));
        }
        if c_in % groups != 0 || c_out % groups != 0 {
            return Err(Error::config(
                name,
                format!("{c_in} -> {c_out} cannot be split into {groups} groups"),
            ));
        }
        let (ci, co) = (c_in / groups, c_out / groups);
        let w = store.add_uniform(format!("{name}.weight"), &[groups, ci, co], ci, rng)?;
        let b = if batch_norm {
            None
        } else {
            Some(store.add_uniform(format!("{name}.bias"), &[c_out], ci, rng)?)
        };
        let bn = if batch_norm {
            Some(BnIds {
                gamma: store.add(format!("{name}.bn.gamma"), crate::tensor::Tensor::full(&[c_out], 1.0))?,
                beta: store.add(format!("{name}.bn.beta"), crate::tensor::Tensor::zeros(&[c_out]))?,
                stats: store.add_stats(format!("{name}.bn.running"), c_out)?,
            })
        } else {
            None
        };
        Ok(MlpLayer {
            name,
            c_in,
            c_out,
            groups,
            relu,
            residual: false,
            dropout: 0.0,
            w,
            b,
            bn,
        })
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn bias(&self) -> Option<ParamId> {
        self.b
    }

    pub fn num_params(&self) -> usize {
        // Either a bias or the batch-norm scale and shift.
        self.c_in * self.c_out / self.groups + if self.bn.is_some() { 2 * self.c_out } else { self.c_out }
    }

    /// Multiply-accumulates count 2, residual additions 1.
    pub fn flops(&self, rows: usize) -> u64 {
        let mac = 2 * rows * self.c_in * self.c_out / self.groups;
        let add = if self.residual { rows * self.c_out } else { 0 };
        (mac + add) as u64
    }

    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, ctx: &mut Ctx, x: Var) -> Result<Var> {
        in_layer(&self.name, self.forward_inner(tape, store, ctx, x))
    }

    fn forward_inner<T: Float>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = self.b.map(|b| tape.param(store, b));
        let mut h = tape.grouped_linear(x, w, b, self.groups)?;
        if let (Some(bn), false) = (self.bn, ctx.bn_bypass) {
            let gamma = tape.param(store, bn.gamma);
            let beta = tape.param(store, bn.beta);
            let y = tape.batch_norm(h, gamma, beta, bn.stats, store, ctx.mode, BN_EPS)?;
            tape.release(h);
            h = y;
        }
        if self.relu {
            let y = tape.relu(h)?;
            tape.release(h);
            h = y;
        }
        if self.residual {
            let y = tape.add(h, x)?;
            tape.release(h);
            h = y;
        }
        if self.dropout > 0.0 {
            h = tape.dropout(h, self.dropout, ctx.mode, &mut ctx.rng)?;
        }
        Ok(h)
    }
}

/// A point-wise stack of grouped-linear + BN + ReLU layers.
#[derive(Debug, Clone)]
pub struct SharedMlp {
    pub name: String,
    pub layers: Vec<MlpLayer>,
}

impl SharedMlp {
    /// Every width must be divisible by `n_groups`; the first layer uses
    /// `gcd(c_in, n_groups)` groups so inputs widened by geometry channels still
    /// build. With `residual`, layers whose input and output widths agree add
    /// their input back after the activation.
    pub fn new<R: Rng>(
        store: &mut ParamStore<f32>,
        name: &str,
        c_in: usize,
        widths: &[usize],
        n_groups: usize,
        residual: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.is_empty() {
            return Err(Error::config(name, "empty MLP"));
        }
        if n_groups == 0 {
            return Err(Error::config(name, "n_groups must be positive"));
        }
        if let Some(w) = widths.iter().find(|&&w| w % n_groups != 0) {
            return Err(Error::config(
                name,
                format!("width {w} is not divisible by {n_groups} groups"),
            ));
        }
        let mut layers = Vec::with_capacity(widths.len());
        let mut c = c_in;
        for (i, &w) in widths.iter().enumerate() {
            let groups = gcd(c, n_groups);
            let mut layer = MlpLayer::new(store, format!("{name}.layer{i}"), c, w, groups, true, true, rng)?;
            layer.residual = residual && c == w;
            layers.push(layer);
            c = w;
        }
        Ok(SharedMlp {
            name: name.to_string(),
            layers,
        })
    }

    pub fn c_in(&self) -> usize {
        self.layers[0].c_in
    }

    pub fn c_out(&self) -> usize {
        self.layers.last().map_or(0, |l| l.c_out)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(MlpLayer::num_params).sum()
    }

    pub fn flops(&self, rows: usize) -> u64 {
        self.layers.iter().map(|l| l.flops(rows)).sum()
    }

    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            let y = layer.forward(tape, store, ctx, h)?;
            if h != x {
                tape.release(h);
            }
            h = y;
        }
        Ok(h)
    }
}

/// Dense head: hidden layers are linear → BN → ReLU → dropout; the last
/// layer emits raw logits.
#[derive(Debug, Clone)]
pub struct FullyConnected {
    pub name: String,
    pub layers: Vec<MlpLayer>,
}

impl FullyConnected {
    pub fn new<R: Rng>(
        store: &mut ParamStore<f32>,
        name: &str,
        c_in: usize,
        hidden: &[(usize, f64)],
        out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut c = c_in;
        for (i, &(w, p)) in hidden.iter().enumerate() {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!("{name}{}", i + 1), format!("dropout {p} outside [0, 1)")));
            }
            let mut layer = MlpLayer::new(store, format!("{name}{}", i + 1), c, w, 1, true, true, rng)?;
            layer.dropout = p;
            layers.push(layer);
            c = w;
        }
        layers.push(MlpLayer::new(
            store,
            format!("{name}{}", hidden.len() + 1),
            c,
            out,
            1,
            false,
            false,
            rng,
        )?);
        Ok(FullyConnected {
            name: name.to_string(),
            layers,
        })
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(MlpLayer::num_params).sum()
    }

    pub fn flops(&self, rows: usize) -> u64 {
        self.layers.iter().map(|l| l.flops(rows)).sum()
    }

    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(tape, store, ctx, h)?;
        }
        Ok(h)
    }
}
