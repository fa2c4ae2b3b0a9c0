use rand::Rng;

use super::refine::upsample;
use super::{in_layer, Ctx, LevelState, SharedMlp, Stage};
use crate::error::{Error, Result};
use crate::tensor::{Float, ParamStore, Tape};

/// Interpolates coarse features onto a finer level, concatenates the finer
/// level's own features and applies a dense shared MLP.
#[derive(Debug, Clone)]
pub struct FeaturePropagation {
    pub name: String,
    pub c_coarse: usize,
    pub c_skip: usize,
    pub mlp: SharedMlp,
}

impl FeaturePropagation {
    pub fn new<R: Rng>(
        store: &mut ParamStore<f32>,
        name: &str,
        c_coarse: usize,
        c_skip: usize,
        widths: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mlp = SharedMlp::new(store, name, c_coarse + c_skip, widths, 1, false, rng)?;
        Ok(FeaturePropagation {
            name: name.to_string(),
            c_coarse,
            c_skip,
            mlp,
        })
    }

    pub fn c_out(&self) -> usize {
        self.mlp.c_out()
    }

    pub fn num_params(&self) -> usize {
        self.mlp.num_params()
    }

    pub fn flops(&self, n_fine: usize, n_coarse: usize) -> u64 {
        (2 * n_coarse.min(3) * n_fine * self.c_coarse) as u64 + self.mlp.flops(n_fine)
    }

    pub fn forward<T: Float>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        ctx: &mut Ctx,
        coarse: &LevelState,
        fine: &LevelState,
        level: usize,
    ) -> Result<LevelState> {
        if coarse.width != self.c_coarse || fine.width != self.c_skip {
            return Err(Error::shape(
                "feature_propagation",
                format!(
                    "{}: expected {}+{} channels, got {}+{}",
                    self.name, self.c_coarse, self.c_skip, coarse.width, fine.width
                ),
            ));
        }
        let up = in_layer(&self.name, upsample(tape, coarse.feats()?, &coarse.points, &fine.points))?;
        let x = match fine.feats {
            Some(skip) => {
                let cat = tape.concat_channels(&[up, skip])?;
                tape.release(up);
                cat
            }
            None => up,
        };
        let feats = self.mlp.forward(tape, store, ctx, x)?;
        tape.release(x);
        Ok(LevelState {
            stage: Stage::Fp,
            level,
            points: fine.points.clone(),
            feats: Some(feats),
            width: self.c_out(),
        })
    }
}
