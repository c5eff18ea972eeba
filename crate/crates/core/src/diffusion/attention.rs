use ndarray::Array2;

use crate::error::Result;

/// Name of the single cross-attention layer of the toy backbone.
pub const CROSS_ATTENTION_LAYER: &str = "cross_attn.0";

/// One cross-attention evaluation, as seen by a hook.
#[derive(Debug)]
pub struct AttentionCall<'a> {
    pub layer: &'a str,
    /// Diffusion step `t` (1..=T) of the current denoiser evaluation.
    pub step: usize,
    pub total_steps: usize,
    /// Spatial resolution `(height, width)` of the query grid.
    pub spatial: (usize, usize),
    /// Unscaled similarity `B = Q K^T`, queries by tokens.
    pub logits: &'a Array2<f64>,
    /// Feature length `d` of queries and keys.
    pub key_dim: usize,
}

impl AttentionCall<'_> {
    pub fn scale(&self) -> f64 {
        1.0 / (self.key_dim as f64).sqrt()
    }

    /// The unmodulated attention `softmax(B / sqrt(d))`.
    pub fn baseline(&self) -> Array2<f64> {
        softmax_rows(&self.logits.mapv(|b| b * self.scale()))
    }
}

/// Intercepts cross-attention evaluations and returns attention
/// probabilities in place of the baseline softmax.
pub trait AttentionHook {
    fn attend(&self, call: &AttentionCall<'_>) -> Result<Array2<f64>>;
}

/// Hook that returns the baseline attention unchanged.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityHook;

impl AttentionHook for IdentityHook {
    fn attend(&self, call: &AttentionCall<'_>) -> Result<Array2<f64>> {
        Ok(call.baseline())
    }
}

/// Handle returned when a hook is installed on a backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HookHandle(pub(crate) u64);

/// Row-wise numerically stable softmax.
pub fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub layer: String,
    pub step: usize,
    pub spatial: (usize, usize),
    pub probs: Array2<f64>,
}

/// Attention maps recorded during sampling, in evaluation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionTrace {
    pub records: Vec<TraceRecord>,
}

impl AttentionTrace {
    pub fn push(&mut self, record: TraceRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Summed attention mass from the query positions in `queries` to the
    /// tokens in `tokens`, over every recorded evaluation.
    pub fn mass(&self, queries: &[usize], tokens: &[usize]) -> f64 {
        self.records
            .iter()
            .map(|r| {
                queries
                    .iter()
                    .flat_map(|&p| tokens.iter().map(move |&j| r.probs[[p, j]]))
                    .sum::<f64>()
            })
            .sum()
    }
}
