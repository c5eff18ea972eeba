use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::attention::{
    softmax_rows, AttentionCall, AttentionHook, AttentionTrace, HookHandle, TraceRecord,
    CROSS_ATTENTION_LAYER,
};
use super::latent::LatentImage;
use crate::error::{Error, Result};
use crate::util::{rng_stream, seed_from_str, tokenize};

/// Token prepended to every conditioning sequence.
pub const BOS_TOKEN: &str = "<bos>";

/// Encoded text conditioning: one embedding row per token.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning {
    pub tokens: Vec<String>,
    pub embeddings: Array2<f64>,
}

impl Conditioning {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A noise-prediction network `eps_theta(x_t, t_p, t)`.
pub trait Denoiser {
    fn latent_shape(&self) -> [usize; 3];

    /// Encodes prompt text into conditioning tokens.
    fn encode(&self, text: &str) -> Conditioning;

    /// Predicts the noise in `xt` at step `t`. Every cross-attention
    /// evaluation is routed through `hook` when one is given, otherwise
    /// through the installed hook, otherwise the plain softmax. When `trace`
    /// is given the attention probabilities are appended to it.
    fn predict_noise(
        &self,
        xt: &LatentImage,
        cond: &Conditioning,
        t: usize,
        total_steps: usize,
        hook: Option<&dyn AttentionHook>,
        trace: Option<&mut AttentionTrace>,
    ) -> Result<LatentImage>;
}

/// A denoiser whose flat parameter vector can be differentiated.
pub trait TrainableDenoiser: Denoiser + Clone {
    type Cache;

    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Forward pass without hooks, retaining what [`Self::backward`] needs.
    fn forward_tracked(
        &self,
        xt: &LatentImage,
        cond: &Conditioning,
        t: usize,
    ) -> Result<(LatentImage, Self::Cache)>;

    /// Accumulates `d loss / d theta` into `grads` given `d loss / d eps`.
    fn backward(&self, cache: &Self::Cache, grad_out: &LatentImage, grads: &mut [f64]);

    fn param_segments(&self) -> Vec<ParamSegment>;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSegment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSegment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub hidden: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    pub text_dim: usize,
    pub time_features: usize,
    /// Normalisation constant for the timestep embedding.
    pub time_scale: f64,
    pub init_seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            channels: 4,
            height: 8,
            width: 8,
            hidden: 48,
            key_dim: 16,
            value_dim: 16,
            text_dim: 16,
            time_features: 8,
            time_scale: 50.0,
            init_seed: 0,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("backbone.channels", self.channels),
            ("backbone.height", self.height),
            ("backbone.width", self.width),
            ("backbone.hidden", self.hidden),
            ("backbone.key_dim", self.key_dim),
            ("backbone.value_dim", self.value_dim),
            ("backbone.text_dim", self.text_dim),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !self.time_features.is_multiple_of(2) {
            return Err(Error::config("backbone.time_features", "must be even"));
        }
        if !(self.time_scale.is_finite() && self.time_scale > 0.0) {
            return Err(Error::config("backbone.time_scale", "must be positive"));
        }
        Ok(())
    }

    fn layout(&self) -> Vec<ParamSegment> {
        let (c, h, d, dv, e, f) = (
            self.channels,
            self.hidden,
            self.key_dim,
            self.value_dim,
            self.text_dim,
            self.time_features,
        );
        let shapes: [(&str, Vec<usize>); 9] = [
            ("w_in", vec![h, c]),
            ("w_time", vec![h, f]),
            ("b_in", vec![h]),
            ("w_q", vec![d, h]),
            ("w_k", vec![d, e]),
            ("w_v", vec![dv, e]),
            ("w_out", vec![c, h + dv]),
            ("w_skip", vec![c, c]),
            ("b_out", vec![c]),
        ];
        let mut offset = 0;
        shapes
            .into_iter()
            .map(|(name, shape)| {
                let seg = ParamSegment {
                    name: name.to_string(),
                    shape,
                    offset,
                };
                offset += seg.len();
                seg
            })
            .collect()
    }
}

// Segment indices into the layout above.
const W_IN: usize = 0;
const W_TIME: usize = 1;
const B_IN: usize = 2;
const W_Q: usize = 3;
const W_K: usize = 4;
const W_V: usize = 5;
const W_OUT: usize = 6;
const W_SKIP: usize = 7;
const B_OUT: usize = 8;

/// Desk-scale denoiser with one cross-attention layer.
///
/// Per spatial position the latent channel vector is lifted to a hidden
/// state together with a sinusoidal timestep embedding; the hidden states
/// provide the attention queries, the stub text embeddings provide keys and
/// values, and the output mixes hidden state, attended values and a skip
/// connection back to the channel dimension.
#[derive(Clone)]
pub struct ToyBackbone {
    config: BackboneConfig,
    segments: Vec<ParamSegment>,
    params: Vec<f64>,
    hook: Option<(HookHandle, Arc<dyn AttentionHook + Send + Sync>)>,
    next_hook: u64,
}

impl std::fmt::Debug for ToyBackbone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToyBackbone")
            .field("config", &self.config)
            .field("num_params", &self.params.len())
            .field("hooked", &self.hook.is_some())
            .finish()
    }
}

/// Intermediate values of a tracked forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    x: Array2<f64>,
    tau: Array1<f64>,
    hidden: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Array2<f64>,
    attended: Array2<f64>,
    text: Array2<f64>,
    shape: [usize; 3],
}

impl ForwardCache {
    pub fn attention(&self) -> &Array2<f64> {
        &self.attn
    }
}

impl ToyBackbone {
    pub fn new(config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        let segments = config.layout();
        let total = segments.iter().map(ParamSegment::len).sum();
        let mut params = vec![0.0; total];
        let mut rng = rng_stream(config.init_seed, 0x1b17, 0);
        for seg in &segments {
            if seg.shape.len() != 2 {
                continue;
            }
            let fan_in = seg.shape[1] as f64;
            let gain = if seg.name == "w_out" { 0.5 } else { 1.0 };
            for p in &mut params[seg.offset..seg.offset + seg.len()] {
                let z: f64 = rng.sample(StandardNormal);
                *p = gain * z / fan_in.sqrt();
            }
        }
        Ok(Self {
            config,
            segments,
            params,
            hook: None,
            next_hook: 1,
        })
    }

    pub fn from_params(config: BackboneConfig, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::new(config)?;
        if params.len() != model.params.len() {
            return Err(Error::shape(
                "backbone parameters",
                &[model.params.len()],
                &[params.len()],
            ));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::numeric("backbone parameters"));
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Installs a hook consulted by every cross-attention evaluation.
    pub fn install_hook(
        &mut self,
        hook: Arc<dyn AttentionHook + Send + Sync>,
    ) -> Result<HookHandle> {
        if self.hook.is_some() {
            return Err(Error::Consistency(
                "a hook is already installed on this backbone".into(),
            ));
        }
        let handle = HookHandle(self.next_hook);
        self.next_hook += 1;
        self.hook = Some((handle, hook));
        Ok(handle)
    }

    pub fn uninstall_hook(
        &mut self,
        handle: HookHandle,
    ) -> Result<Arc<dyn AttentionHook + Send + Sync>> {
        match self.hook.take() {
            Some((h, hook)) if h == handle => Ok(hook),
            other => {
                self.hook = other;
                Err(Error::Consistency(format!(
                    "hook {handle:?} is not installed"
                )))
            }
        }
    }

    pub fn has_hook(&self) -> bool {
        self.hook.is_some()
    }

    fn mat(&self, idx: usize) -> ArrayView2<'_, f64> {
        let seg = &self.segments[idx];
        ArrayView2::from_shape(
            (seg.shape[0], seg.shape[1]),
            &self.params[seg.offset..seg.offset + seg.len()],
        )
        .expect("segment shape matches layout")
    }

    fn vec(&self, idx: usize) -> ArrayView1<'_, f64> {
        let seg = &self.segments[idx];
        ArrayView1::from(&self.params[seg.offset..seg.offset + seg.len()])
    }

    fn time_embedding(&self, t: usize) -> Array1<f64> {
        let f = self.config.time_features;
        let tn = t as f64 / self.config.time_scale;
        Array1::from_shape_fn(f, |i| {
            let omega = std::f64::consts::PI * 2f64.powi((i / 2) as i32);
            if i % 2 == 0 {
                (tn * omega).sin()
            } else {
                (tn * omega).cos()
            }
        })
    }

    fn token_embedding(&self, token: &str) -> Vec<f64> {
        let e = self.config.text_dim;
        let mut rng = rng_stream(seed_from_str(token), 0x7e47, 0);
        (0..e)
            .map(|_| rng.sample::<f64, _>(StandardNormal) / (e as f64).sqrt())
            .collect()
    }

    fn check_inputs(&self, xt: &LatentImage, cond: &Conditioning) -> Result<()> {
        let expected = self.latent_shape();
        if xt.shape() != expected {
            return Err(Error::shape("denoiser input", &expected, &xt.shape()));
        }
        if cond.is_empty() || cond.embeddings.ncols() != self.config.text_dim {
            return Err(Error::shape(
                "conditioning embeddings",
                &[cond.len().max(1), self.config.text_dim],
                cond.embeddings.shape(),
            ));
        }
        Ok(())
    }

    /// Shared forward pass. `attend` maps the logits `B` to probabilities.
    fn forward_with(
        &self,
        xt: &LatentImage,
        cond: &Conditioning,
        t: usize,
        attend: impl FnOnce(&Array2<f64>) -> Result<Array2<f64>>,
    ) -> Result<(LatentImage, ForwardCache)> {
        self.check_inputs(xt, cond)?;
        let x = xt.to_positions();
        let tau = self.time_embedding(t);
        let bias = self.mat(W_TIME).dot(&tau) + self.vec(B_IN);
        let mut hidden = x.dot(&self.mat(W_IN).t());
        hidden += &bias;
        hidden.mapv_inplace(f64::tanh);

        let q = hidden.dot(&self.mat(W_Q).t());
        let k = cond.embeddings.dot(&self.mat(W_K).t());
        let v = cond.embeddings.dot(&self.mat(W_V).t());
        let logits = q.dot(&k.t());
        let attn = attend(&logits)?;
        let attended = attn.dot(&v);

        let w_out = self.mat(W_OUT);
        let h = self.config.hidden;
        let mut eps = hidden.dot(&w_out.slice(ndarray::s![.., ..h]).t());
        eps += &attended.dot(&w_out.slice(ndarray::s![.., h..]).t());
        eps += &x.dot(&self.mat(W_SKIP).t());
        eps += &self.vec(B_OUT);

        if eps.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("denoiser output"));
        }
        let shape = xt.shape();
        let out = LatentImage::from_positions(eps.view(), shape);
        let cache = ForwardCache {
            x,
            tau,
            hidden,
            q,
            k,
            v,
            attn,
            attended,
            text: cond.embeddings.clone(),
            shape,
        };
        Ok((out, cache))
    }
}

impl Denoiser for ToyBackbone {
    fn latent_shape(&self) -> [usize; 3] {
        [self.config.channels, self.config.height, self.config.width]
    }

    fn encode(&self, text: &str) -> Conditioning {
        let mut tokens = vec![BOS_TOKEN.to_string()];
        tokens.extend(tokenize(text));
        let e = self.config.text_dim;
        let mut embeddings = Array2::zeros((tokens.len(), e));
        for (row, tok) in embeddings.rows_mut().into_iter().zip(&tokens) {
            let mut row: ArrayViewMut1<f64> = row;
            for (dst, src) in row.iter_mut().zip(self.token_embedding(tok)) {
                *dst = src;
            }
        }
        Conditioning { tokens, embeddings }
    }

    fn predict_noise(
        &self,
        xt: &LatentImage,
        cond: &Conditioning,
        t: usize,
        total_steps: usize,
        hook: Option<&dyn AttentionHook>,
        trace: Option<&mut AttentionTrace>,
    ) -> Result<LatentImage> {
        let hook: Option<&dyn AttentionHook> = match hook {
            Some(h) => Some(h),
            None => self
                .hook
                .as_ref()
                .map(|(_, h)| h.as_ref() as &dyn AttentionHook),
        };
        let spatial = (self.config.height, self.config.width);
        let key_dim = self.config.key_dim;
        let (eps, cache) = self.forward_with(xt, cond, t, |logits| {
            let call = AttentionCall {
                layer: CROSS_ATTENTION_LAYER,
                step: t,
                total_steps,
                spatial,
                logits,
                key_dim,
            };
            match hook {
                None => Ok(call.baseline()),
                Some(hook) => {
                    let probs = hook.attend(&call)?;
                    if probs.dim() != logits.dim() {
                        return Err(Error::Hook {
                            layer: CROSS_ATTENTION_LAYER.to_string(),
                            step: t,
                            message: format!(
                                "hook returned shape {:?}, expected {:?}",
                                probs.shape(),
                                logits.shape()
                            ),
                        });
                    }
                    Ok(probs)
                }
            }
        })?;
        if let Some(trace) = trace {
            trace.push(TraceRecord {
                layer: CROSS_ATTENTION_LAYER.to_string(),
                step: t,
                spatial,
                probs: cache.attn,
            });
        }
        Ok(eps)
    }
}

impl TrainableDenoiser for ToyBackbone {
    type Cache = ForwardCache;

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward_tracked(
        &self,
        xt: &LatentImage,
        cond: &Conditioning,
        t: usize,
    ) -> Result<(LatentImage, ForwardCache)> {
        let scale = 1.0 / (self.config.key_dim as f64).sqrt();
        self.forward_with(xt, cond, t, |logits| {
            Ok(softmax_rows(&logits.mapv(|b| b * scale)))
        })
    }

    fn backward(&self, cache: &ForwardCache, grad_out: &LatentImage, grads: &mut [f64]) {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer length");
        assert_eq!(grad_out.shape(), cache.shape, "output gradient shape");
        let g = grad_out.to_positions();
        let h = self.config.hidden;
        let scale = 1.0 / (self.config.key_dim as f64).sqrt();
        let w_out = self.mat(W_OUT);
        let w_out_h = w_out.slice(ndarray::s![.., ..h]);
        let w_out_o = w_out.slice(ndarray::s![.., h..]);

        let d_w_out_h = g.t().dot(&cache.hidden);
        let d_w_out_o = g.t().dot(&cache.attended);
        let d_b_out = g.sum_axis(Axis(0));
        let d_w_skip = g.t().dot(&cache.x);

        let mut d_hidden = g.dot(&w_out_h);
        let d_attended = g.dot(&w_out_o);

        let d_attn = d_attended.dot(&cache.v.t());
        let d_v = cache.attn.t().dot(&d_attended);

        // softmax backward, row-wise
        let mut d_logits = &cache.attn * &d_attn;
        let row_dot = d_logits.sum_axis(Axis(1));
        for (mut row, (a_row, dot)) in d_logits
            .rows_mut()
            .into_iter()
            .zip(cache.attn.rows().into_iter().zip(row_dot.iter()))
        {
            row.zip_mut_with(&a_row, |v, &a| *v -= a * dot);
        }
        d_logits.mapv_inplace(|v| v * scale);

        let d_q = d_logits.dot(&cache.k);
        let d_k = d_logits.t().dot(&cache.q);
        let d_w_q = d_q.t().dot(&cache.hidden);
        d_hidden += &d_q.dot(&self.mat(W_Q));
        let d_w_k = d_k.t().dot(&cache.text);
        let d_w_v = d_v.t().dot(&cache.text);

        let d_pre = &d_hidden * &cache.hidden.mapv(|v| 1.0 - v * v);
        let d_w_in = d_pre.t().dot(&cache.x);
        let d_b_in = d_pre.sum_axis(Axis(0));
        let d_w_time = d_b_in
            .view()
            .insert_axis(Axis(1))
            .dot(&cache.tau.view().insert_axis(Axis(0)));

        let mut acc = |idx: usize, values: ndarray::ArrayViewD<'_, f64>| {
            let seg = &self.segments[idx];
            let dst = &mut grads[seg.offset..seg.offset + seg.len()];
            for (d, v) in dst.iter_mut().zip(values.iter()) {
                *d += v;
            }
        };
        let mut d_w_out = Array2::zeros((self.config.channels, h + self.config.value_dim));
        {
            let mut left: ArrayViewMut2<f64> = d_w_out.slice_mut(ndarray::s![.., ..h]);
            left.assign(&d_w_out_h);
        }
        d_w_out.slice_mut(ndarray::s![.., h..]).assign(&d_w_out_o);

        acc(W_IN, d_w_in.view().into_dyn());
        acc(W_TIME, d_w_time.view().into_dyn());
        acc(B_IN, d_b_in.view().into_dyn());
        acc(W_Q, d_w_q.view().into_dyn());
        acc(W_K, d_w_k.view().into_dyn());
        acc(W_V, d_w_v.view().into_dyn());
        acc(W_OUT, d_w_out.view().into_dyn());
        acc(W_SKIP, d_w_skip.view().into_dyn());
        acc(B_OUT, d_b_out.view().into_dyn());
    }

    fn param_segments(&self) -> Vec<ParamSegment> {
        self.segments.clone()
    }
}
