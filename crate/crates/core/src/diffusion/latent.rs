use ndarray::{Array2, Array3, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// A dense latent tensor laid out as `channels x height x width`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentImage {
    data: Array3<f64>,
}

impl LatentImage {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("latent image"));
        }
        Ok(Self { data })
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            data: Array3::zeros(shape),
        }
    }

    pub fn filled(shape: [usize; 3], value: f64) -> Self {
        Self {
            data: Array3::from_elem(shape, value),
        }
    }

    pub fn standard_normal(shape: [usize; 3], rng: &mut impl Rng) -> Self {
        Self {
            data: Array3::from_shape_simple_fn(shape, || rng.sample(StandardNormal)),
        }
    }

    /// Wraps an array produced by arithmetic whose finiteness is checked by
    /// the caller.
    pub(crate) fn from_array_unchecked(data: Array3<f64>) -> Self {
        Self { data }
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.data.shape();
        [s[0], s[1], s[2]]
    }

    pub fn channels(&self) -> usize {
        self.shape()[0]
    }

    pub fn spatial(&self) -> (usize, usize) {
        let s = self.shape();
        (s[1], s[2])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_same_shape(&self, other: &LatentImage, context: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(context, &self.shape(), &other.shape()));
        }
        Ok(())
    }

    /// Positions-by-channels view: row `p = y * width + x` holds the channel
    /// vector at that pixel.
    pub fn to_positions(&self) -> Array2<f64> {
        let [c, h, w] = self.shape();
        let mut out = Array2::zeros((h * w, c));
        for ((ch, y, x), v) in self.data.indexed_iter() {
            out[[y * w + x, ch]] = *v;
        }
        out
    }

    pub fn from_positions(positions: ArrayView2<f64>, shape: [usize; 3]) -> Self {
        let [c, h, w] = shape;
        let mut data = Array3::zeros((c, h, w));
        for ((ch, y, x), v) in data.indexed_iter_mut() {
            *v = positions[[y * w + x, ch]];
        }
        Self { data }
    }

    pub fn channel_means(&self) -> Vec<f64> {
        let [c, h, w] = self.shape();
        let n = (h * w) as f64;
        (0..c)
            .map(|ch| self.data.index_axis(ndarray::Axis(0), ch).sum() / n)
            .collect()
    }

    pub fn mean(&self) -> f64 {
        self.data.mean().unwrap_or(0.0)
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn digest(&self) -> String {
        let s = self.shape();
        let mut parts: Vec<f64> = s.iter().map(|&d| d as f64).collect();
        parts.extend(self.data.iter().copied());
        crate::util::digest_f64s(parts)
    }
}
