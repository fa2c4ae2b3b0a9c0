//! Forward kernels recorded on the tape and their adjoints.

use rand::Rng;

use super::tape::{add_into, Mode, Tape, Var};
use super::{Float, ParamStore, StatsId};
use crate::error::{Error, Result};

pub(crate) enum Op<T> {
    Input {
        requires_grad: bool,
    },
    Param,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        groups: usize,
    },
    Relu(Var),
    Add(Var, Var),
    Concat(Vec<Var>),
    GatherRows {
        x: Var,
        index: Vec<u32>,
    },
    /// `argmax[m * D + d]` is the row of `x` that won channel `d` of set `m`.
    GroupMax {
        x: Var,
        argmax: Vec<u32>,
    },
    GroupMean {
        x: Var,
        set: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    /// Batch norm with frozen statistics: `(x - mean) * inv_std * gamma + beta`.
    FrozenNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Reduction {
        x: Var,
        k: usize,
    },
    Interpolate {
        x: Var,
        index: Vec<u32>,
        weights: Vec<T>,
        k: usize,
    },
    SoftmaxCe {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Sum(Var),
    Mean(Var),
    Dot {
        x: Var,
        weights: Vec<T>,
    },
}

impl<T> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Param => "param",
            Op::Linear { .. } => "grouped_linear",
            Op::Relu(_) => "relu",
            Op::Add(..) => "add",
            Op::Concat(_) => "concat_channels",
            Op::GatherRows { .. } => "gather_rows",
            Op::GroupMax { .. } => "max_over_set",
            Op::GroupMean { .. } => "mean_over_set",
            Op::BatchNorm { .. } | Op::FrozenNorm { .. } => "batch_norm",
            Op::Dropout { .. } => "dropout",
            Op::Reduction { .. } => "reduction",
            Op::Interpolate { .. } => "interpolate",
            Op::SoftmaxCe { .. } => "softmax_cross_entropy",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Dot { .. } => "dot",
        }
    }

    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Input { .. } | Op::Param => vec![],
            Op::Linear { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::Concat(xs) => xs.clone(),
            Op::Add(a, b) => vec![*a, *b],
            Op::BatchNorm { x, gamma, beta, .. } | Op::FrozenNorm { x, gamma, beta, .. } => {
                vec![*x, *gamma, *beta]
            }
            Op::SoftmaxCe { logits, .. } => vec![*logits],
            Op::Relu(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::GatherRows { x, .. }
            | Op::GroupMax { x, .. }
            | Op::GroupMean { x, .. }
            | Op::Dropout { x, .. }
            | Op::Reduction { x, .. }
            | Op::Interpolate { x, .. }
            | Op::Dot { x, .. } => vec![*x],
        }
    }
}

impl<T: Float> Tape<T> {
    /// Point-wise linear map with channels split into `groups` independent
    /// blocks. `w` is shaped `[groups, c_in / groups, c_out / groups]`, `b` is
    /// `[c_out]`. Group `g` of the output only sees group `g` of the input.
    pub fn grouped_linear(&mut self, x: Var, w: Var, b: Option<Var>, groups: usize) -> Result<Var> {
        let (rows, c_in) = self.dims2(x);
        let (g, ci, co) = match self.shape(w) {
            [g, ci, co] => (*g, *ci, *co),
            s => {
                return Err(Error::config(
                    "grouped_linear",
                    format!("weight must be rank 3, got {s:?}"),
                ))
            }
        };
        if groups == 0 || g != groups || c_in % groups != 0 || ci * groups != c_in {
            return Err(Error::config(
                "grouped_linear",
                format!("{c_in} input channels cannot be split into {groups} groups of {ci}"),
            ));
        }
        let c_out = co * groups;
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(Error::config(
                    "grouped_linear",
                    format!("bias shape {:?} != [{c_out}]", self.shape(b)),
                ));
            }
        }
        let mut y = vec![T::zero(); rows * c_out];
        {
            let xv = self.value(x);
            let wv = self.value(w);
            for grp in 0..groups {
                // SAFETY: the strided views stay inside x (rows × c_in), the
                // group's weight block (ci × co) and y (rows × c_out).
                unsafe {
                    T::gemm(
                        rows,
                        ci,
                        co,
                        xv.as_ptr().add(grp * ci),
                        c_in as isize,
                        1,
                        wv.as_ptr().add(grp * ci * co),
                        co as isize,
                        1,
                        T::zero(),
                        y.as_mut_ptr().add(grp * co),
                        c_out as isize,
                        1,
                    );
                }
            }
            if let Some(b) = b {
                let bv = self.value(b);
                for row in y.chunks_exact_mut(c_out) {
                    for (o, &bb) in row.iter_mut().zip(bv) {
                        *o += bb;
                    }
                }
            }
        }
        self.push(vec![rows, c_out], y, Op::Linear { x, w, b, groups })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = self
            .value(x)
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        self.push(self.shape(x).to_vec(), y, Op::Relu(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let y = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&p, &q)| p + q)
            .collect();
        self.push(self.shape(a).to_vec(), y, Op::Add(a, b))
    }

    /// Concatenates rank-2 values along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::shape("concat_channels", "no inputs"));
        };
        if xs.len() == 1 {
            return Ok(first);
        }
        let rows = self.dims2(first).0;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (r, c) = self.dims2(x);
            if r != rows {
                return Err(Error::shape(
                    "concat_channels",
                    format!("leading extents differ: {rows} vs {r}"),
                ));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut y = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &c) in xs.iter().zip(&widths) {
                y.extend_from_slice(&self.value(x)[r * c..(r + 1) * c]);
            }
        }
        self.push(vec![rows, total], y, Op::Concat(xs.to_vec()))
    }

    /// Selects rows of a rank-2 value; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, index: Vec<u32>) -> Result<Var> {
        let (rows, d) = self.dims2(x);
        if let Some(&bad) = index.iter().find(|&&i| i as usize >= rows) {
            return Err(Error::shape(
                "gather_rows",
                format!("row {bad} out of range for {rows} rows"),
            ));
        }
        if index.is_empty() {
            return Err(Error::shape("gather_rows", "empty index"));
        }
        let xv = self.value(x);
        let mut y = Vec::with_capacity(index.len() * d);
        for &i in &index {
            let i = i as usize;
            y.extend_from_slice(&xv[i * d..(i + 1) * d]);
        }
        self.push(vec![index.len(), d], y, Op::GatherRows { x, index })
    }

    /// Channel-wise maximum over consecutive sets of `set` rows. The gradient
    /// goes to one maximizer per channel, the lowest row on ties.
    pub fn group_max(&mut self, x: Var, set: usize) -> Result<Var> {
        let (rows, d) = self.dims2(x);
        if set == 0 || rows == 0 {
            return Err(Error::InvalidArgument("max over an empty set".into()));
        }
        if rows % set != 0 {
            return Err(Error::shape(
                "max_over_set",
                format!("{rows} rows do not split into sets of {set}"),
            ));
        }
        let m = rows / set;
        let xv = self.value(x);
        let mut y = Vec::with_capacity(m * d);
        let mut argmax = Vec::with_capacity(m * d);
        for g in 0..m {
            let base = g * set;
            let first = &xv[base * d..(base + 1) * d];
            let mut best: Vec<T> = first.to_vec();
            let mut arg = vec![base as u32; d];
            for r in base + 1..base + set {
                let row = &xv[r * d..(r + 1) * d];
                for c in 0..d {
                    if row[c] > best[c] {
                        best[c] = row[c];
                        arg[c] = r as u32;
                    }
                }
            }
            y.extend_from_slice(&best);
            argmax.extend_from_slice(&arg);
        }
        if !self.grad_enabled() {
            argmax = Vec::new();
        }
        self.push(vec![m, d], y, Op::GroupMax { x, argmax })
    }

    /// Maximum over all rows: `[S, D] -> [1, D]`.
    pub fn max_over_set(&mut self, x: Var) -> Result<Var> {
        let rows = self.dims2(x).0;
        self.group_max(x, rows)
    }

    pub fn group_mean(&mut self, x: Var, set: usize) -> Result<Var> {
        let (rows, d) = self.dims2(x);
        if set == 0 || rows == 0 {
            return Err(Error::InvalidArgument("mean over an empty set".into()));
        }
        if rows % set != 0 {
            return Err(Error::shape(
                "mean_over_set",
                format!("{rows} rows do not split into sets of {set}"),
            ));
        }
        let m = rows / set;
        let inv = T::one() / T::from_f64(set as f64);
        let xv = self.value(x);
        let mut y = vec![T::zero(); m * d];
        for g in 0..m {
            let out = &mut y[g * d..(g + 1) * d];
            for r in g * set..(g + 1) * set {
                for (o, &v) in out.iter_mut().zip(&xv[r * d..(r + 1) * d]) {
                    *o += v;
                }
            }
            for o in out.iter_mut() {
                *o *= inv;
            }
        }
        self.push(vec![m, d], y, Op::GroupMean { x, set })
    }

    pub fn mean_over_set(&mut self, x: Var) -> Result<Var> {
        let rows = self.dims2(x).0;
        self.group_mean(x, rows)
    }

    /// Batch normalization over rows. Training mode uses the batch statistics
    /// and records them for the running averages; eval mode reads the running
    /// statistics from `store`.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: StatsId,
        store: &ParamStore<T>,
        mode: Mode,
        eps: f64,
    ) -> Result<Var> {
        let (rows, d) = self.dims2(x);
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape("batch_norm", format!("affine parameters must be [{d}]")));
        }
        let eps = T::from_f64(eps);
        match mode {
            Mode::Eval => {
                let running = store.stats(stats);
                let mean = running.mean.clone();
                let inv_std: Vec<T> = running.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                let xv = self.value(x);
                let gv = self.value(gamma);
                let bv = self.value(beta);
                let mut y = Vec::with_capacity(rows * d);
                for row in xv.chunks_exact(d) {
                    for c in 0..d {
                        y.push((row[c] - mean[c]) * inv_std[c] * gv[c] + bv[c]);
                    }
                }
                self.push(
                    vec![rows, d],
                    y,
                    Op::FrozenNorm {
                        x,
                        gamma,
                        beta,
                        mean,
                        inv_std,
                    },
                )
            }
            Mode::Train => {
                if rows < 2 {
                    return Err(Error::InvalidArgument(
                        "batch norm in training mode needs at least 2 rows".into(),
                    ));
                }
                let n = T::from_f64(rows as f64);
                let xv = self.value(x);
                let mut mean = vec![T::zero(); d];
                for row in xv.chunks_exact(d) {
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                for m in &mut mean {
                    *m /= n;
                }
                let mut var = vec![T::zero(); d];
                for row in xv.chunks_exact(d) {
                    for c in 0..d {
                        let t = row[c] - mean[c];
                        var[c] += t * t;
                    }
                }
                let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v / n + eps).sqrt()).collect();
                let unbiased: Vec<T> = var.iter().map(|&v| v / T::from_f64((rows - 1) as f64)).collect();
                let gv = self.value(gamma);
                let bv = self.value(beta);
                let mut xhat = Vec::with_capacity(rows * d);
                let mut y = Vec::with_capacity(rows * d);
                for row in xv.chunks_exact(d) {
                    for c in 0..d {
                        let h = (row[c] - mean[c]) * inv_std[c];
                        xhat.push(h);
                        y.push(h * gv[c] + bv[c]);
                    }
                }
                self.record_bn_update(stats, mean, unbiased);
                self.push(
                    vec![rows, d],
                    y,
                    Op::BatchNorm {
                        x,
                        gamma,
                        beta,
                        xhat,
                        inv_std,
                    },
                )
            }
        }
    }

    /// Inverted dropout. Identity in eval mode or for `p == 0`.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let scale = T::from_f64(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { scale })
            .collect();
        let y = self.value(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        self.push(self.shape(x).to_vec(), y, Op::Dropout { x, mask })
    }

    /// Parameter-free channel reduction: output channel `j` is the sum of
    /// input channels `j*k .. (j+1)*k`.
    pub fn reduction(&mut self, x: Var, k: usize) -> Result<Var> {
        let (rows, d) = self.dims2(x);
        if k == 0 || d % k != 0 {
            return Err(Error::config(
                "reduction",
                format!("{d} channels are not divisible by k = {k}"),
            ));
        }
        if k == 1 {
            return Ok(x);
        }
        let out = d / k;
        let y = self
            .value(x)
            .chunks_exact(k)
            .map(|bucket| bucket.iter().copied().fold(T::zero(), |a, b| a + b))
            .collect();
        self.push(vec![rows, out], y, Op::Reduction { x, k })
    }

    /// Weighted gather: output row `i` is `Σ_j weights[i*k + j] * x[index[i*k + j]]`.
    pub fn interpolate(&mut self, x: Var, index: Vec<u32>, weights: Vec<T>, k: usize) -> Result<Var> {
        let (rows, d) = self.dims2(x);
        if k == 0 || index.len() != weights.len() || index.len() % k != 0 || index.is_empty() {
            return Err(Error::shape(
                "interpolate",
                format!("{} indices / {} weights with k = {k}", index.len(), weights.len()),
            ));
        }
        if let Some(&bad) = index.iter().find(|&&i| i as usize >= rows) {
            return Err(Error::shape("interpolate", format!("row {bad} out of range")));
        }
        let n_out = index.len() / k;
        let xv = self.value(x);
        let mut y = vec![T::zero(); n_out * d];
        for (i, out) in y.chunks_exact_mut(d).enumerate() {
            for j in 0..k {
                let src = index[i * k + j] as usize;
                let w = weights[i * k + j];
                for (o, &v) in out.iter_mut().zip(&xv[src * d..(src + 1) * d]) {
                    *o += w * v;
                }
            }
        }
        self.push(vec![n_out, d], y, Op::Interpolate { x, index, weights, k })
    }

    /// Mean negative log-likelihood of `targets` under `softmax(logits)`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, c) = self.dims2(logits);
        if targets.len() != n {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{n} rows but {} targets", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::InvalidArgument(format!(
                "target {bad} out of range for {c} classes"
            )));
        }
        let lv = self.value(logits);
        let mut probs = Vec::with_capacity(n * c);
        let mut loss = 0.0f64;
        for (row, &t) in lv.chunks_exact(c).zip(targets) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
            let sum: T = exps.iter().copied().sum();
            loss += (sum.ln() - (row[t] - max)).as_f64();
            probs.extend(exps.iter().map(|&e| e / sum));
        }
        let loss = T::from_f64(loss / n as f64);
        self.push(
            vec![1],
            vec![loss],
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).iter().copied().sum();
        self.push(vec![1], vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s: T = v.iter().copied().sum::<T>() / T::from_f64(v.len() as f64);
        self.push(vec![1], vec![s], Op::Mean(x))
    }

    /// Inner product with a constant vector; a scalar probe for gradient checks.
    pub fn dot(&mut self, x: Var, weights: Vec<T>) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return Err(Error::shape("dot", "weight length differs from value length"));
        }
        let s: T = self
            .value(x)
            .iter()
            .zip(&weights)
            .map(|(&a, &b)| a * b)
            .sum();
        self.push(vec![1], vec![s], Op::Dot { x, weights })
    }
}

/// Propagates `g` (the gradient at node `id`) into the node's inputs.
pub(crate) fn backward<T: Float>(
    tape: &Tape<T>,
    id: usize,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) -> Result<()> {
    let node = &tape.nodes[id];
    let len_of = |v: Var| tape.value(v).len();
    match &node.op {
        Op::Input { .. } | Op::Param => {}
        Op::Linear { x, w, b, groups } => {
            let (rows, c_in) = tape.dims2(*x);
            let groups = *groups;
            let ci = c_in / groups;
            let c_out = node.shape[1];
            let co = c_out / groups;
            if tape.needs_grad(*x) {
                let wv = tape.value(*w);
                let dx = add_into(&mut grads[x.0], rows * c_in);
                for grp in 0..groups {
                    // SAFETY: dY group block (rows × co), Wᵀ of the group
                    // (co × ci), dX group block (rows × ci).
                    unsafe {
                        T::gemm(
                            rows,
                            co,
                            ci,
                            g.as_ptr().add(grp * co),
                            c_out as isize,
                            1,
                            wv.as_ptr().add(grp * ci * co),
                            1,
                            co as isize,
                            T::one(),
                            dx.as_mut_ptr().add(grp * ci),
                            c_in as isize,
                            1,
                        );
                    }
                }
            }
            if tape.needs_grad(*w) {
                let xv = tape.value(*x);
                let dw = add_into(&mut grads[w.0], groups * ci * co);
                for grp in 0..groups {
                    // SAFETY: Xᵀ of the group (ci × rows), dY block (rows × co),
                    // dW block (ci × co).
                    unsafe {
                        T::gemm(
                            ci,
                            rows,
                            co,
                            xv.as_ptr().add(grp * ci),
                            1,
                            c_in as isize,
                            g.as_ptr().add(grp * co),
                            c_out as isize,
                            1,
                            T::one(),
                            dw.as_mut_ptr().add(grp * ci * co),
                            co as isize,
                            1,
                        );
                    }
                }
            }
            if let Some(b) = b {
                if tape.needs_grad(*b) {
                    let db = add_into(&mut grads[b.0], c_out);
                    for row in g.chunks_exact(c_out) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                }
            }
        }
        Op::Relu(x) => {
            if tape.needs_grad(*x) {
                let xv = tape.value(*x);
                let dx = add_into(&mut grads[x.0], xv.len());
                for ((d, &v), &gg) in dx.iter_mut().zip(xv).zip(g) {
                    if v > T::zero() {
                        *d += gg;
                    }
                }
            }
        }
        Op::Add(a, b) => {
            for v in [*a, *b] {
                if tape.needs_grad(v) {
                    let d = add_into(&mut grads[v.0], g.len());
                    for (d, &gg) in d.iter_mut().zip(g) {
                        *d += gg;
                    }
                }
            }
        }
        Op::Concat(xs) => {
            let rows = node.shape[0];
            let total = node.shape[1];
            let mut offset = 0;
            for &x in xs {
                let c = tape.dims2(x).1;
                if tape.needs_grad(x) {
                    let dx = add_into(&mut grads[x.0], rows * c);
                    for r in 0..rows {
                        let src = &g[r * total + offset..r * total + offset + c];
                        for (d, &gg) in dx[r * c..(r + 1) * c].iter_mut().zip(src) {
                            *d += gg;
                        }
                    }
                }
                offset += c;
            }
        }
        Op::GatherRows { x, index } => {
            if tape.needs_grad(*x) {
                let d = node.shape[1];
                let dx = add_into(&mut grads[x.0], len_of(*x));
                for (k, &i) in index.iter().enumerate() {
                    let i = i as usize;
                    for (dd, &gg) in dx[i * d..(i + 1) * d].iter_mut().zip(&g[k * d..(k + 1) * d]) {
                        *dd += gg;
                    }
                }
            }
        }
        Op::GroupMax { x, argmax } => {
            if tape.needs_grad(*x) {
                let d = node.shape[1];
                let dx = add_into(&mut grads[x.0], len_of(*x));
                for (k, (&row, &gg)) in argmax.iter().zip(g).enumerate() {
                    dx[row as usize * d + k % d] += gg;
                }
            }
        }
        Op::GroupMean { x, set } => {
            if tape.needs_grad(*x) {
                let d = node.shape[1];
                let inv = T::one() / T::from_f64(*set as f64);
                let dx = add_into(&mut grads[x.0], len_of(*x));
                for (r, row) in dx.chunks_exact_mut(d).enumerate() {
                    let src = &g[(r / set) * d..(r / set + 1) * d];
                    for (dd, &gg) in row.iter_mut().zip(src) {
                        *dd += gg * inv;
                    }
                }
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let (rows, d) = (node.shape[0], node.shape[1]);
            let gv = tape.value(*gamma);
            let mut sum_g = vec![T::zero(); d];
            let mut sum_gx = vec![T::zero(); d];
            for (grow, hrow) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                for c in 0..d {
                    sum_g[c] += grow[c];
                    sum_gx[c] += grow[c] * hrow[c];
                }
            }
            if tape.needs_grad(*x) {
                let n = T::from_f64(rows as f64);
                let dx = add_into(&mut grads[x.0], rows * d);
                for ((drow, grow), hrow) in dx
                    .chunks_exact_mut(d)
                    .zip(g.chunks_exact(d))
                    .zip(xhat.chunks_exact(d))
                {
                    for c in 0..d {
                        let t = n * grow[c] - sum_g[c] - hrow[c] * sum_gx[c];
                        drow[c] += gv[c] * inv_std[c] * t / n;
                    }
                }
            }
            if tape.needs_grad(*gamma) {
                let dg = add_into(&mut grads[gamma.0], d);
                for (a, &b) in dg.iter_mut().zip(&sum_gx) {
                    *a += b;
                }
            }
            if tape.needs_grad(*beta) {
                let db = add_into(&mut grads[beta.0], d);
                for (a, &b) in db.iter_mut().zip(&sum_g) {
                    *a += b;
                }
            }
        }
        Op::FrozenNorm {
            x,
            gamma,
            beta,
            mean,
            inv_std,
        } => {
            let (rows, d) = (node.shape[0], node.shape[1]);
            let gv = tape.value(*gamma);
            if tape.needs_grad(*x) {
                let dx = add_into(&mut grads[x.0], rows * d);
                for (drow, grow) in dx.chunks_exact_mut(d).zip(g.chunks_exact(d)) {
                    for c in 0..d {
                        drow[c] += grow[c] * gv[c] * inv_std[c];
                    }
                }
            }
            if tape.needs_grad(*gamma) {
                let xv = tape.value(*x);
                let dg = add_into(&mut grads[gamma.0], d);
                for (xrow, grow) in xv.chunks_exact(d).zip(g.chunks_exact(d)) {
                    for c in 0..d {
                        dg[c] += grow[c] * (xrow[c] - mean[c]) * inv_std[c];
                    }
                }
            }
            if tape.needs_grad(*beta) {
                let db = add_into(&mut grads[beta.0], d);
                for grow in g.chunks_exact(d) {
                    for c in 0..d {
                        db[c] += grow[c];
                    }
                }
            }
        }
        Op::Dropout { x, mask } => {
            if tape.needs_grad(*x) {
                let dx = add_into(&mut grads[x.0], mask.len());
                for ((d, &m), &gg) in dx.iter_mut().zip(mask).zip(g) {
                    *d += m * gg;
                }
            }
        }
        Op::Reduction { x, k } => {
            if tape.needs_grad(*x) {
                let dx = add_into(&mut grads[x.0], len_of(*x));
                for (bucket, &gg) in dx.chunks_exact_mut(*k).zip(g) {
                    for d in bucket {
                        *d += gg;
                    }
                }
            }
        }
        Op::Interpolate {
            x,
            index,
            weights,
            k,
        } => {
            if tape.needs_grad(*x) {
                let d = node.shape[1];
                let dx = add_into(&mut grads[x.0], len_of(*x));
                for (i, grow) in g.chunks_exact(d).enumerate() {
                    for j in 0..*k {
                        let src = index[i * k + j] as usize;
                        let w = weights[i * k + j];
                        for (dd, &gg) in dx[src * d..(src + 1) * d].iter_mut().zip(grow) {
                            *dd += w * gg;
                        }
                    }
                }
            }
        }
        Op::SoftmaxCe {
            logits,
            targets,
            probs,
        } => {
            if tape.needs_grad(*logits) {
                let (n, c) = tape.dims2(*logits);
                let scale = g[0] / T::from_f64(n as f64);
                let dl = add_into(&mut grads[logits.0], n * c);
                for (r, &t) in targets.iter().enumerate() {
                    for j in 0..c {
                        let onehot = if j == t { T::one() } else { T::zero() };
                        dl[r * c + j] += (probs[r * c + j] - onehot) * scale;
                    }
                }
            }
        }
        Op::Sum(x) => {
            if tape.needs_grad(*x) {
                let dx = add_into(&mut grads[x.0], len_of(*x));
                for d in dx.iter_mut() {
                    *d += g[0];
                }
            }
        }
        Op::Mean(x) => {
            if tape.needs_grad(*x) {
                let n = len_of(*x);
                let share = g[0] / T::from_f64(n as f64);
                let dx = add_into(&mut grads[x.0], n);
                for d in dx.iter_mut() {
                    *d += share;
                }
            }
        }
        Op::Dot { x, weights } => {
            if tape.needs_grad(*x) {
                let dx = add_into(&mut grads[x.0], weights.len());
                for (d, &w) in dx.iter_mut().zip(weights) {
                    *d += w * g[0];
                }
            }
        }
    }
    Ok(())
}
