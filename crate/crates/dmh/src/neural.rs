//! Minimal fully connected network with analytic reverse-mode gradients,
//! an adaptive-moment optimizer and target-network soft updates. Hidden
//! layers use rectified-linear activation, the output layer is linear.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("dimension mismatch: expected {expected}, got {got}")]
pub struct DimensionError {
    pub expected: usize,
    pub got: usize,
}

/// One affine layer; `w` has shape (out, in).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Parameter-shaped gradient container.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

/// Forward-pass activations kept for the backward pass; `post[0]` is the
/// input batch, `post[l]` the post-activation output of layer l.
pub struct ForwardCache {
    post: Vec<Array2<f64>>,
}

impl Mlp {
    /// Kaiming-style uniform fan-in init: weights in ±sqrt(6 / fan_in),
    /// biases zero.
    pub fn init(dims: &[usize], rng: &mut ChaCha8Rng) -> Mlp {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let layers = dims
            .windows(2)
            .map(|d| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
                    rng.gen_range(-bound..bound)
                });
                Dense {
                    w,
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros(dims: &[usize]) -> Mlp {
        let layers = dims
            .windows(2)
            .map(|d| Dense {
                w: Array2::zeros((d[1], d[0])),
                b: Array1::zeros(d[1]),
            })
            .collect();
        Mlp { layers }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].w.ncols()];
        dims.extend(self.layers.iter().map(|l| l.w.nrows()));
        dims
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>, DimensionError> {
        if x.len() != self.input_dim() {
            return Err(DimensionError {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let batch = x.insert_axis(Axis(0)).to_owned();
        Ok(self.forward_batch(&batch).row(0).to_owned())
    }

    /// Batched forward pass; `x` is (batch, in).
    pub fn forward_batch(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward_cached(x).0.post.last().unwrap().clone()
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> (ForwardCache, Array2<f64>) {
        assert_eq!(x.ncols(), self.input_dim(), "input dimension mismatch");
        let mut post = Vec::with_capacity(self.layers.len() + 1);
        post.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = post.last().unwrap().dot(&layer.w.t());
            z += &layer.b;
            if i + 1 < self.layers.len() {
                z.mapv_inplace(|v| v.max(0.0));
            }
            post.push(z);
        }
        let out = post.last().unwrap().clone();
        (ForwardCache { post }, out)
    }

    /// Exact gradients of `sum(upstream * output)` w.r.t. all parameters.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Array2<f64>) -> Gradients {
        let mut delta = upstream.clone();
        let mut grads: Vec<Dense> = self
            .layers
            .iter()
            .map(|l| Dense {
                w: Array2::zeros(l.w.dim()),
                b: Array1::zeros(l.b.len()),
            })
            .collect();
        for l in (0..self.layers.len()).rev() {
            grads[l].w = delta.t().dot(&cache.post[l]);
            grads[l].b = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut prev = delta.dot(&self.layers[l].w);
                // Hidden activations are post-rectifier: positive iff the
                // unit was active.
                prev.zip_mut_with(&cache.post[l], |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = prev;
            }
        }
        Gradients { layers: grads }
    }

    /// Single-sample reverse-mode gradients of `upstream . forward(x)`.
    pub fn gradients(
        &self,
        x: ArrayView1<f64>,
        upstream: ArrayView1<f64>,
    ) -> Result<Gradients, DimensionError> {
        if x.len() != self.input_dim() {
            return Err(DimensionError {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if upstream.len() != self.output_dim() {
            return Err(DimensionError {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        let xb = x.insert_axis(Axis(0)).to_owned();
        let ub = upstream.insert_axis(Axis(0)).to_owned();
        let (cache, _) = self.forward_cached(&xb);
        Ok(self.backward(&cache, &ub))
    }

    /// Parameters flattened layer by layer, row-major weights then biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn from_flat(dims: &[usize], flat: &[f64]) -> Result<Mlp, DimensionError> {
        let mut net = Mlp::zeros(dims);
        let expected = net.param_count();
        if flat.len() != expected {
            return Err(DimensionError {
                expected,
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for l in &mut net.layers {
            for w in l.w.iter_mut() {
                *w = flat[offset];
                offset += 1;
            }
            for b in l.b.iter_mut() {
                *b = flat[offset];
                offset += 1;
            }
        }
        Ok(net)
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Dense>,
    v: Vec<Dense>,
}

impl AdamState {
    pub fn new(net: &Mlp, lr: f64) -> AdamState {
        let shape = |l: &Dense| Dense {
            w: Array2::zeros(l.w.dim()),
            b: Array1::zeros(l.b.len()),
        };
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: net.layers.iter().map(shape).collect(),
            v: net.layers.iter().map(shape).collect(),
        }
    }

    /// One adaptive-moment descent step in place.
    pub fn apply(&mut self, params: &mut Mlp, grads: &Gradients) {
        assert_eq!(params.layers.len(), grads.layers.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (l, (param, grad)) in params
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .enumerate()
        {
            let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            };
            for ((p, &g), (m, v)) in param
                .w
                .iter_mut()
                .zip(grad.w.iter())
                .zip(self.m[l].w.iter_mut().zip(self.v[l].w.iter_mut()))
            {
                update(p, g, m, v);
            }
            for ((p, &g), (m, v)) in param
                .b
                .iter_mut()
                .zip(grad.b.iter())
                .zip(self.m[l].b.iter_mut().zip(self.v[l].b.iter_mut()))
            {
                update(p, g, m, v);
            }
        }
    }
}

/// Polyak averaging: target <- (1 - tau) * target + tau * online.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) {
    assert!((0.0..=1.0).contains(&tau) && tau > 0.0, "tau in (0, 1]");
    assert_eq!(target.dims(), online.dims(), "shape mismatch");
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        t.w.zip_mut_with(&o.w, |t, &o| *t = (1.0 - tau) * *t + tau * o);
        t.b.zip_mut_with(&o.b, |t, &o| *t = (1.0 - tau) * *t + tau * o);
    }
}
