//! Shared per-point perceptrons with hand-written backward passes.
//!
//! Inputs are row-major point sets (`n × d`). The first layer optionally
//! takes an extra global vector that is broadcast to every row, which is
//! equivalent to concatenating it to each row but costs one product.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }

    fn apply(self, x: &mut DMatrix<f64>) {
        match self {
            Activation::Relu => x.apply(|v| *v = v.max(0.0)),
            Activation::Tanh => x.apply(|v| *v = v.tanh()),
            Activation::Identity => {}
        }
    }

    /// Multiplies `grad` in place by the derivative, given the layer output.
    fn backprop(self, out: &DMatrix<f64>, grad: &mut DMatrix<f64>) {
        match self {
            Activation::Relu => grad.zip_apply(out, |g, y| {
                if y <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Tanh => grad.zip_apply(out, |g, y| *g *= 1.0 - y * y),
            Activation::Identity => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `in × out`.
    pub weight: DMatrix<f64>,
    /// `1 × out`.
    pub bias: DMatrix<f64>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    /// Leading rows of the first weight that act on per-point input; the
    /// remaining rows act on the broadcast global input.
    pub local_in: usize,
}

/// Activations saved by [`Mlp::forward`].
#[derive(Clone, Debug)]
pub struct MlpCache {
    /// `acts[0]` is the local input, `acts[k]` the output of layer `k-1`.
    acts: Vec<DMatrix<f64>>,
    global: Option<DVector<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.acts.last().expect("cache holds the input")
    }
}

impl Mlp {
    /// Weights and biases uniform in `±sqrt(6 / (fan_in + fan_out))`.
    /// `dims[0]` is the total input width (local plus global).
    pub fn new<R: Rng + ?Sized>(dims: &[usize], local_in: usize, acts: &[Activation], rng: &mut R) -> Self {
        assert_eq!(dims.len(), acts.len() + 1, "one activation per layer");
        assert!(local_in <= dims[0]);
        let layers = dims
            .windows(2)
            .zip(acts)
            .map(|(d, &activation)| {
                let bound = (6.0 / (d[0] + d[1]) as f64).sqrt();
                Layer {
                    weight: DMatrix::from_fn(d[0], d[1], |_, _| rng.random_range(-bound..=bound)),
                    bias: DMatrix::from_fn(1, d[1], |_, _| rng.random_range(-bound..=bound)),
                    activation,
                }
            })
            .collect();
        Self { layers, local_in }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn global_in(&self) -> usize {
        self.input_dim() - self.local_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.ncols())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: DMatrix::zeros(l.weight.nrows(), l.weight.ncols()),
                    bias: DMatrix::zeros(1, l.bias.ncols()),
                    activation: l.activation,
                })
                .collect(),
            local_in: self.local_in,
        }
    }

    pub fn fill_zero(&mut self) {
        for l in &mut self.layers {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Checks the chain of layer widths.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("perceptron without layers"));
        }
        for (k, w) in self.layers.windows(2).enumerate() {
            if w[0].weight.ncols() != w[1].weight.nrows() {
                return Err(Error::invalid(format!("layer {k} output does not feed layer {}", k + 1)));
            }
        }
        for l in &self.layers {
            if l.bias.nrows() != 1 || l.bias.ncols() != l.weight.ncols() {
                return Err(Error::invalid("bias shape does not match weight"));
            }
        }
        if self.local_in > self.input_dim() {
            return Err(Error::invalid("local input wider than the first layer"));
        }
        Ok(())
    }

    /// Row-wise forward pass over `local` (`n × local_in`) with the optional
    /// `global` vector appended to every row.
    pub fn forward(&self, local: &DMatrix<f64>, global: Option<&DVector<f64>>) -> MlpCache {
        debug_assert_eq!(local.ncols(), self.local_in);
        debug_assert_eq!(global.map_or(0, |g| g.len()), self.global_in());
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(local.clone());
        for (k, layer) in self.layers.iter().enumerate() {
            let input = &acts[k];
            let mut z;
            let mut row: RowDVector<f64> = RowDVector::from_iterator(layer.bias.ncols(), layer.bias.iter().copied());
            if k == 0 {
                let li = self.local_in;
                z = if li > 0 {
                    input * layer.weight.rows(0, li)
                } else {
                    DMatrix::zeros(input.nrows(), layer.weight.ncols())
                };
                if let Some(g) = global {
                    row += g.transpose() * layer.weight.rows(li, self.global_in());
                }
            } else {
                z = input * &layer.weight;
            }
            for mut r in z.row_iter_mut() {
                r += &row;
            }
            layer.activation.apply(&mut z);
            acts.push(z);
        }
        MlpCache { acts, global: global.cloned() }
    }

    /// Backpropagates `grad_out` (`n × out`), accumulating parameter
    /// gradients into `grad`. Returns the gradients of the local input and
    /// of the global vector.
    pub fn backward(&self, cache: &MlpCache, grad_out: DMatrix<f64>, grad: &mut Mlp) -> (DMatrix<f64>, DVector<f64>) {
        let mut delta = grad_out;
        let mut grad_global = DVector::zeros(self.global_in());
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            layer.activation.backprop(&cache.acts[k + 1], &mut delta);
            let input = &cache.acts[k];
            let g = &mut grad.layers[k];
            let colsum = delta.row_sum();
            g.bias += &colsum;
            if k == 0 {
                let li = self.local_in;
                if li > 0 {
                    let mut gw = g.weight.rows_mut(0, li);
                    gw.gemm_tr(1.0, input, &delta, 1.0);
                }
                if let Some(gv) = &cache.global {
                    let gi = self.global_in();
                    let mut gw = g.weight.rows_mut(li, gi);
                    gw.ger(1.0, gv, &colsum.transpose(), 1.0);
                    grad_global = layer.weight.rows(li, gi) * colsum.transpose();
                }
                delta = if li > 0 {
                    &delta * layer.weight.rows(0, li).transpose()
                } else {
                    DMatrix::zeros(delta.nrows(), 0)
                };
            } else {
                g.weight.gemm_tr(1.0, input, &delta, 1.0);
                delta = &delta * layer.weight.transpose();
            }
        }
        (delta, grad_global)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(m: &Mlp, x: &DMatrix<f64>, g: &DVector<f64>) -> f64 {
        m.forward(x, Some(g)).output().iter().map(|v| v * v).sum::<f64>() * 0.5
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let acts = [Activation::Tanh, Activation::Relu, Activation::Identity];
        let m = Mlp::new(&[5, 7, 6, 3], 3, &acts, &mut rng);
        let x = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        let g = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let cache = m.forward(&x, Some(&g));
        let mut grad = m.zeros_like();
        let (gx, gg) = m.backward(&cache, cache.output().clone(), &mut grad);
        let eps = 1e-6;
        for k in 0..m.layers.len() {
            for idx in 0..m.layers[k].weight.len() {
                let mut p = m.clone();
                p.layers[k].weight[idx] += eps;
                let mut q = m.clone();
                q.layers[k].weight[idx] -= eps;
                let fd = (loss(&p, &x, &g) - loss(&q, &x, &g)) / (2.0 * eps);
                assert!((fd - grad.layers[k].weight[idx]).abs() < 1e-6, "layer {k} weight {idx}");
            }
            for idx in 0..m.layers[k].bias.len() {
                let mut p = m.clone();
                p.layers[k].bias[idx] += eps;
                let mut q = m.clone();
                q.layers[k].bias[idx] -= eps;
                let fd = (loss(&p, &x, &g) - loss(&q, &x, &g)) / (2.0 * eps);
                assert!((fd - grad.layers[k].bias[idx]).abs() < 1e-6, "layer {k} bias {idx}");
            }
        }
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xq = x.clone();
            xq[idx] -= eps;
            let fd = (loss(&m, &xp, &g) - loss(&m, &xq, &g)) / (2.0 * eps);
            assert!((fd - gx[idx]).abs() < 1e-6);
        }
        for idx in 0..g.len() {
            let mut gp = g.clone();
            gp[idx] += eps;
            let mut gq = g.clone();
            gq[idx] -= eps;
            let fd = (loss(&m, &x, &gp) - loss(&m, &x, &gq)) / (2.0 * eps);
            assert!((fd - gg[idx]).abs() < 1e-6);
        }
    }

    #[test]
    fn global_input_equals_concatenation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Mlp::new(&[4, 5], 2, &[Activation::Relu], &mut rng);
        let x = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let g = DVector::from_vec(vec![0.3, -0.7]);
        let split = m.forward(&x, Some(&g));
        let full = DMatrix::from_fn(3, 4, |i, j| if j < 2 { x[(i, j)] } else { g[j - 2] });
        let whole = Mlp { local_in: 4, ..m.clone() };
        let joined = whole.forward(&full, None);
        assert!((split.output() - joined.output()).abs().max() < 1e-14);
    }
}
