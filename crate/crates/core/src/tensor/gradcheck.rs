//! Finite-difference verification of tape gradients (64-bit only).

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Finite-difference step, within `[1e-7, 1e-4]`.
    pub epsilon: f64,
    pub tolerance: f64,
    /// Seeds the projection of non-scalar outputs and element sampling.
    pub seed: u64,
    /// Check at most this many elements per tensor (all when `None`).
    pub max_per_tensor: Option<usize>,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            epsilon: 1e-5,
            tolerance: 1e-5,
            seed: 0x5eed,
            max_per_tensor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// Tensor label and element index of the worst element.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst element.
    pub worst_values: Option<(f64, f64)>,
    pub checked: usize,
    pub non_finite: bool,
    pub pass: bool,
}

/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

impl GradCheck {
    pub fn new(epsilon: f64, tolerance: f64) -> Result<Self> {
        if !(1e-7..=1e-4).contains(&epsilon) {
            return Err(Error::InvalidArgument(format!(
                "epsilon {epsilon} outside [1e-7, 1e-4]"
            )));
        }
        Ok(GradCheck {
            epsilon,
            tolerance,
            ..Self::default()
        })
    }

    pub fn with_sampling(mut self, max_per_tensor: usize) -> Self {
        self.max_per_tensor = Some(max_per_tensor);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn project(&self, tape: &mut Tape<f64>, out: Var) -> Result<Var> {
        let n = tape.value(out).len();
        if n == 1 {
            return Ok(out);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9);
        let w = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        tape.dot(out, w)
    }

    fn elements(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        match self.max_per_tensor {
            Some(k) if k < len => {
                let mut idx = sample(rng, len, k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..len).collect(),
        }
    }

    /// Compares the gradient of `f` with respect to each input tensor against
    /// central differences of the same function.
    pub fn inputs<F>(&self, inputs: &[Tensor<f64>], f: F) -> GradReport
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    {
        let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
            let mut tape = Tape::new();
            let vars: Vec<Var> = xs.iter().map(|t| tape.input(t.clone())).collect();
            let out = f(&mut tape, &vars)?;
            let out = self.project(&mut tape, out)?;
            Ok(tape.scalar(out))
        };
        let analytic = (|| -> Result<Vec<Vec<f64>>> {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs
                .iter()
                .map(|t| tape.input(t.clone().with_requires_grad(true)))
                .collect();
            let out = f(&mut tape, &vars)?;
            let out = self.project(&mut tape, out)?;
            let grads = tape.backward(out)?;
            Ok(vars
                .iter()
                .zip(inputs)
                .map(|(&v, t)| grads.get(v).map(<[f64]>::to_vec).unwrap_or(vec![0.0; t.len()]))
                .collect())
        })();
        let analytic = match analytic {
            Ok(a) => a,
            Err(e) => return failed(e),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut report = Report::default();
        let mut work = inputs.to_vec();
        for (ti, t) in inputs.iter().enumerate() {
            for i in self.elements(t.len(), &mut rng) {
                let numeric = self.numeric(analytic[ti][i], |delta| {
                    work[ti].data_mut()[i] = t.data()[i] + delta;
                    let r = eval(&work);
                    work[ti].data_mut()[i] = t.data()[i];
                    r
                });
                match numeric {
                    Ok(n) => report.record(format!("input{ti}"), i, analytic[ti][i], n),
                    Err(e) => return failed(e),
                }
            }
        }
        report.finish(self.tolerance)
    }

    /// Same comparison with respect to every parameter in `store`.
    pub fn params<F>(&self, store: &mut ParamStore<f64>, f: F) -> GradReport
    where
        F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
    {
        let analytic = (|| -> Result<Vec<Vec<f64>>> {
            let mut tape = Tape::new();
            let out = f(&mut tape, store)?;
            let out = self.project(&mut tape, out)?;
            let grads = tape.backward(out)?;
            Ok((0..store.params().len())
                .map(|i| {
                    let id = super::ParamId(i);
                    grads
                        .param(id)
                        .map(<[f64]>::to_vec)
                        .unwrap_or(vec![0.0; store.get(id).value.len()])
                })
                .collect())
        })();
        let analytic = match analytic {
            Ok(a) => a,
            Err(e) => return failed(e),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut report = Report::default();
        for pi in 0..store.params().len() {
            let id = super::ParamId(pi);
            let len = store.get(id).value.len();
            for i in self.elements(len, &mut rng) {
                let orig = store.get(id).value.data()[i];
                let numeric = self.numeric(analytic[pi][i], |delta| {
                    store.get_mut(id).value.data_mut()[i] = orig + delta;
                    let r = (|| {
                        let mut tape = Tape::new();
                        let out = f(&mut tape, store)?;
                        let out = self.project(&mut tape, out)?;
                        Ok(tape.scalar(out))
                    })();
                    store.get_mut(id).value.data_mut()[i] = orig;
                    r
                });
                match numeric {
                    Ok(n) => report.record(store.get(id).name.clone(), i, analytic[pi][i], n),
                    Err(e) => return failed(e),
                }
            }
        }
        report.finish(self.tolerance)
    }

    /// Fourth-order central differences at step `epsilon`, then at
    /// `epsilon / 4`, `10 · epsilon` and `100 · epsilon` while that disagrees,
    /// keeping the estimate closest to `analytic`. Large steps lose accuracy
    /// where they straddle a ReLU or max-pool kink, small ones where the
    /// derivative is tiny next to the function value; a wrong analytic
    /// gradient disagrees at every step.
    fn numeric(&self, analytic: f64, mut eval: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
        let mut best = Self::stencil(self.epsilon, &mut eval)?;
        for h in [self.epsilon / 4.0, 10.0 * self.epsilon, 100.0 * self.epsilon] {
            if relative_error(analytic, best) < self.tolerance {
                break;
            }
            let n = Self::stencil(h, &mut eval)?;
            if relative_error(analytic, n) < relative_error(analytic, best) {
                best = n;
            }
        }
        Ok(best)
    }

    fn stencil(h: f64, eval: &mut impl FnMut(f64) -> Result<f64>) -> Result<f64> {
        let p2 = eval(2.0 * h)?;
        let p1 = eval(h)?;
        let m1 = eval(-h)?;
        let m2 = eval(-2.0 * h)?;
        // Differences first, so equal evaluations give exactly zero.
        Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h))
    }
}

fn failed(e: Error) -> GradReport {
    GradReport {
        max_rel_err: f64::INFINITY,
        worst: Some((e.to_string(), 0)),
        worst_values: None,
        checked: 0,
        non_finite: matches!(e, Error::NonFinite { .. }),
        pass: false,
    }
}

#[derive(Default)]
struct Report {
    max_rel_err: f64,
    worst: Option<(String, usize)>,
    worst_values: Option<(f64, f64)>,
    checked: usize,
    non_finite: bool,
}

impl Report {
    fn record(&mut self, label: String, index: usize, analytic: f64, numeric: f64) {
        self.checked += 1;
        if !analytic.is_finite() || !numeric.is_finite() {
            self.non_finite = true;
            return;
        }
        let err = relative_error(analytic, numeric);
        if err > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(err);
            self.worst = Some((label, index));
            self.worst_values = Some((analytic, numeric));
        }
    }

    fn finish(self, tolerance: f64) -> GradReport {
        GradReport {
            pass: !self.non_finite && self.max_rel_err < tolerance,
            max_rel_err: self.max_rel_err,
            worst: self.worst,
            worst_values: self.worst_values,
            checked: self.checked,
            non_finite: self.non_finite,
        }
    }
}
