//! Dense layers with cached forward passes and exact backward passes.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out x in`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self {
            w: Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-s..=s)),
            b: Array1::zeros(fan_out),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    /// Rows of `x` are samples.
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    /// Accumulate parameter gradients into `grad`, return `d x`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.w += &dy.t().dot(x);
        grad.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w)
    }

    pub(crate) fn tensors(&self) -> [(&'static str, Vec<usize>, &[f64]); 2] {
        [
            ("weight", self.w.shape().to_vec(), self.w.as_slice().expect("standard layout")),
            ("bias", self.b.shape().to_vec(), self.b.as_slice().expect("standard layout")),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut [f64]; 2] {
        [
            self.w.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// Two linear layers with a ReLU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    pub input: Array2<f64>,
    pub pre: Array2<f64>,
    pub hidden: Array2<f64>,
}

impl Mlp {
    pub fn init<R: Rng>(d_in: usize, d_hidden: usize, d_out: usize, rng: &mut R) -> Self {
        Self {
            first: Linear::init(d_in, d_hidden, rng),
            second: Linear::init(d_hidden, d_out, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            first: self.first.zeros_like(),
            second: self.second.zeros_like(),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        let pre = self.first.forward(x);
        let hidden = pre.mapv(|v| v.max(0.0));
        let out = self.second.forward(&hidden);
        (
            out,
            MlpCache {
                input: x.clone(),
                pre,
                hidden,
            },
        )
    }

    pub fn backward(&self, cache: &MlpCache, dy: &Array2<f64>, grad: &mut Mlp) -> Array2<f64> {
        let mut dh = self.second.backward(&cache.hidden, dy, &mut grad.second);
        dh.zip_mut_with(&cache.pre, |g, &p| {
            if p <= 0.0 {
                *g = 0.0
            }
        });
        self.first.backward(&cache.input, &dh, &mut grad.first)
    }

    pub(crate) fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::with_capacity(4);
        for (name, layer) in [("fc1", &self.first), ("fc2", &self.second)] {
            for (t, shape, data) in layer.tensors() {
                out.push((format!("{name}.{t}"), shape, data));
            }
        }
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let [a, b] = self.first.tensors_mut();
        let [c, d] = self.second.tensors_mut();
        vec![a, b, c, d]
    }
}
