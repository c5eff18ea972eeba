use std::sync::Arc;

use ndarray::Array2;

use super::modulate::{modulate, AttentionLogits, ModulationConfig};
use super::ownership::TokenOwnership;
use super::score::{build_score_matrix, ScoreMatrix};
use crate::dense_caption::ObjectAnnotation;
use crate::diffusion::{AttentionCall, AttentionHook, HookHandle, ToyBackbone};
use crate::error::{Error, Result};

/// Replaces every cross-attention evaluation with its modulated version,
/// resampling the object masks to the layer's resolution.
#[derive(Debug, Clone)]
pub struct ModulationHook {
    annotations: Vec<ObjectAnnotation>,
    ownership: TokenOwnership,
    cfg: ModulationConfig,
}

impl ModulationHook {
    pub fn new(
        annotations: Vec<ObjectAnnotation>,
        ownership: TokenOwnership,
        cfg: ModulationConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        ownership.check_objects(&annotations)?;
        Ok(Self {
            annotations,
            ownership,
            cfg,
        })
    }

    pub fn config(&self) -> &ModulationConfig {
        &self.cfg
    }

    pub fn ownership(&self) -> &TokenOwnership {
        &self.ownership
    }

    /// Score matrix at a layer resolution of `height × width`.
    pub fn score_matrix_for(&self, height: usize, width: usize) -> Result<ScoreMatrix> {
        let resized = self
            .annotations
            .iter()
            .map(|a| {
                Ok(ObjectAnnotation {
                    mask: a.mask.resample(height, width)?,
                    ..a.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        build_score_matrix(
            &resized,
            &self.ownership,
            height * width,
            self.ownership.n_k(),
        )
    }

    fn attend_inner(&self, call: &AttentionCall<'_>) -> Result<Array2<f64>> {
        let (n_q, n_k) = call.logits.dim();
        if n_k != self.ownership.n_k() {
            return Err(Error::shape(
                "token ownership",
                &[n_k],
                &[self.ownership.n_k()],
            ));
        }
        // Without any owned token there is nothing to steer towards.
        if !self.ownership.any_owned() {
            return Ok(call.baseline());
        }
        let (h, w) = call.spatial;
        if h * w != n_q {
            return Err(Error::shape("query grid", &[n_q], &[h * w]));
        }
        let s = self.score_matrix_for(h, w)?;
        let logits = AttentionLogits::new(call.logits.clone(), call.key_dim)?;
        modulate(
            &logits,
            &s,
            &self.ownership.activation(),
            self.cfg.lambda_t(call.step, call.total_steps),
            &self.cfg,
        )
    }
}

impl AttentionHook for ModulationHook {
    fn attend(&self, call: &AttentionCall<'_>) -> Result<Array2<f64>> {
        self.attend_inner(call).map_err(|e| match e {
            e @ Error::Numeric { .. } => e,
            other => Error::Hook {
                layer: call.layer.to_string(),
                step: call.step,
                message: other.to_string(),
            },
        })
    }
}

/// Installs a modulation hook on `backbone`; uninstall with the returned
/// handle to restore the plain attention.
pub fn install_hook(
    backbone: &mut ToyBackbone,
    annotations: &[ObjectAnnotation],
    ownership: &TokenOwnership,
    cfg: &ModulationConfig,
) -> Result<HookHandle> {
    let hook = ModulationHook::new(annotations.to_vec(), ownership.clone(), cfg.clone())?;
    backbone.install_hook(Arc::new(hook))
}
