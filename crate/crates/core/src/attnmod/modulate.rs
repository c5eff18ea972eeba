use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::score::ScoreMatrix;
use crate::diffusion::softmax_rows;
use crate::error::{Error, Result};

/// Similarity logits `B = Q K^T` of one attention evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLogits {
    pub b: Array2<f64>,
    pub key_dim: usize,
}

impl AttentionLogits {
    pub fn new(b: Array2<f64>, key_dim: usize) -> Result<Self> {
        if key_dim == 0 {
            return Err(Error::config("key_dim", "must be positive"));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("B"));
        }
        Ok(Self { b, key_dim })
    }

    pub fn scale(&self) -> f64 {
        1.0 / (self.key_dim as f64).sqrt()
    }

    pub fn baseline(&self) -> Array2<f64> {
        softmax_rows(&self.b.mapv(|v| v * self.scale()))
    }
}

/// How `B` enters the `(1 - B)` factor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Min-max scaled over the whole matrix to `[0, 1]`.
    #[default]
    Normalized,
    /// The raw logits.
    Raw,
}

/// Scope of the max and min in the extremum maps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extrema {
    #[default]
    Global,
    PerRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModulationConfig {
    pub lambda_0: f64,
    pub normalization: Normalization,
    pub extrema: Extrema,
}

impl Default for ModulationConfig {
    fn default() -> Self {
        Self {
            lambda_0: 1.0,
            normalization: Normalization::Normalized,
            extrema: Extrema::Global,
        }
    }
}

impl ModulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda_0.is_finite() || self.lambda_0 < 0.0 {
            return Err(Error::config("lambda_0", "must be finite and non-negative"));
        }
        Ok(())
    }

    /// `lambda_t = lambda_0 * t / T`.
    pub fn lambda_t(&self, t: usize, total_steps: usize) -> f64 {
        if total_steps == 0 {
            return 0.0;
        }
        self.lambda_0 * t as f64 / total_steps as f64
    }
}

/// Distance-to-max and distance-to-min maps of `b`.
pub fn pos_neg_maps(b: &Array2<f64>, extrema: Extrema) -> (Array2<f64>, Array2<f64>) {
    match extrema {
        Extrema::Global => {
            let max = b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = b.iter().copied().fold(f64::INFINITY, f64::min);
            (b.mapv(|v| max - v), b.mapv(|v| v - min))
        }
        Extrema::PerRow => {
            let mut pos = b.clone();
            let mut neg = b.clone();
            for ((mut p, mut n), row) in pos
                .axis_iter_mut(Axis(0))
                .zip(neg.axis_iter_mut(Axis(0)))
                .zip(b.axis_iter(Axis(0)))
            {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let min = row.iter().copied().fold(f64::INFINITY, f64::min);
                p.mapv_inplace(|v| max - v);
                n.mapv_inplace(|v| v - min);
            }
            (pos, neg)
        }
    }
}

/// `B` as used in the `(1 - B)` factor.
pub fn normalized_logits(b: &Array2<f64>, mode: Normalization) -> Array2<f64> {
    match mode {
        Normalization::Raw => b.clone(),
        Normalization::Normalized => {
            let max = b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = b.iter().copied().fold(f64::INFINITY, f64::min);
            let range = max - min;
            if range > 0.0 {
                b.mapv(|v| (v - min) / range)
            } else {
                Array2::zeros(b.raw_dim())
            }
        }
    }
}

/// The additive modulation `M` before it is weighted by `S`.
pub fn modulation_term(
    b: &Array2<f64>,
    activation: &[bool],
    lambda_t: f64,
    cfg: &ModulationConfig,
) -> Result<Array2<f64>> {
    let (n_q, n_k) = b.dim();
    if activation.len() != n_k {
        return Err(Error::shape(
            "activation vector R",
            &[n_k],
            &[activation.len()],
        ));
    }
    let (m_pos, m_neg) = pos_neg_maps(b, cfg.extrema);
    let b_hat = normalized_logits(b, cfg.normalization);
    let mut m = Array2::zeros((n_q, n_k));
    for p in 0..n_q {
        for j in 0..n_k {
            let damp = 1.0 - b_hat[[p, j]];
            m[[p, j]] = if activation[j] {
                lambda_t * m_pos[[p, j]] * damp
            } else {
                -lambda_t * m_neg[[p, j]] * damp
            };
        }
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("modulation M"));
    }
    Ok(m)
}

/// Modulated attention `softmax((B + S * M) / sqrt(d))`.
pub fn modulate(
    logits: &AttentionLogits,
    score: &ScoreMatrix,
    activation: &[bool],
    lambda_t: f64,
    cfg: &ModulationConfig,
) -> Result<Array2<f64>> {
    let b = &logits.b;
    if score.values.dim() != b.dim() {
        let (q, k) = b.dim();
        let (sq, sk) = score.values.dim();
        return Err(Error::shape("score matrix S", &[q, k], &[sq, sk]));
    }
    if lambda_t == 0.0 {
        return Ok(logits.baseline());
    }
    let m = modulation_term(b, activation, lambda_t, cfg)?;
    let scale = logits.scale();
    let z = (b + &(&score.values * &m)).mapv(|v| v * scale);
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("modulated logits B + S*M"));
    }
    Ok(softmax_rows(&z))
}
