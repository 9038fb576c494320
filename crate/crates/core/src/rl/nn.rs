//! Fully connected networks with hand-written backpropagation and Adam.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DiclError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `in × out`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// ReLU on every hidden layer, identity on the output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Linear>,
}

/// Parameter-shaped gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Linear>,
}

impl MlpGrads {
    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &MlpGrads, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.scaled_add(scale, &b.weight);
            a.bias.scaled_add(scale, &b.bias);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
            .collect()
    }
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Array2<f64>>,
}

impl Mlp {
    /// PyTorch-style init: weights and biases `U(−1/√fan_in, 1/√fan_in)`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(DiclError::invalid(
                "an MLP needs at least input and output sizes, all > 0",
            ));
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Linear {
                    weight: Array2::from_shape_fn((w[0], w[1]), |_| rng.random_range(-bound..bound)),
                    bias: Array1::from_shape_fn(w[1], |_| rng.random_range(-bound..bound)),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        if layers.is_empty() {
            return Err(DiclError::invalid("an MLP needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].weight.ncols() != w[1].weight.nrows() {
                return Err(DiclError::DimMismatch {
                    expected: w[0].weight.ncols(),
                    got: w[1].weight.nrows(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
            .collect()
    }

    /// Overwrite parameters from the layout produced by [`Mlp::flatten`].
    pub fn set_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(DiclError::DimMismatch {
                expected: self.n_params(),
                got: params.len(),
            });
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            l.weight
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|p| *p = *it.next().expect("length checked"));
        }
        Ok(())
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(DiclError::DimMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            h = h.dot(&l.weight) + &l.bias;
            if i < last {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = h.dot(&l.weight) + &l.bias;
            inputs.push(h);
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            h = z;
        }
        Ok((h, ForwardCache { inputs }))
    }

    /// Gradients of a scalar loss given `d_out = ∂L/∂output`; also returns
    /// `∂L/∂input`.
    pub fn backward(&self, cache: &ForwardCache, d_out: ArrayView2<f64>) -> (MlpGrads, Array2<f64>) {
        let mut grads: Vec<Linear> = Vec::with_capacity(self.layers.len());
        let mut delta = d_out.to_owned();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[i];
            grads.push(Linear {
                weight: input.t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            });
            let mut d_in = delta.dot(&l.weight.t());
            if i > 0 {
                // input[i] is the ReLU output of layer i - 1
                Zip::from(&mut d_in).and(input).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = d_in;
        }
        grads.reverse();
        (MlpGrads { layers: grads }, delta)
    }

    /// `self ← τ·source + (1 − τ)·self`.
    pub fn soft_update(&mut self, source: &Mlp, tau: f64) {
        for (t, s) in self.layers.iter_mut().zip(&source.layers) {
            Zip::from(&mut t.weight)
                .and(&s.weight)
                .for_each(|a, &b| *a = tau * b + (1.0 - tau) * *a);
            Zip::from(&mut t.bias)
                .and(&s.bias)
                .for_each(|a, &b| *a = tau * b + (1.0 - tau) * *a);
        }
    }
}

/// Adam with PyTorch's defaults and update rule.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Option<MlpGrads>,
    v: Option<MlpGrads>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: None,
            v: None,
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &MlpGrads) -> Result<()> {
        if grads
            .layers
            .iter()
            .any(|l| l.weight.iter().chain(l.bias.iter()).any(|g| !g.is_finite()))
        {
            return Err(DiclError::Numerical("non-finite gradient".into()));
        }
        let m = self.m.get_or_insert_with(|| net.zero_grads());
        let v = self.v.get_or_insert_with(|| net.zero_grads());
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.step);
        let bc2_sqrt = (1.0 - b2.powi(self.step)).sqrt();
        let step_size = self.lr / bc1;
        let eps = self.eps;
        for (((p, g), mm), vv) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut m.layers)
            .zip(&mut v.layers)
        {
            let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step_size * *m / (v.sqrt() / bc2_sqrt + eps);
            };
            Zip::from(&mut p.weight)
                .and(&g.weight)
                .and(&mut mm.weight)
                .and(&mut vv.weight)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            Zip::from(&mut p.bias)
                .and(&g.bias)
                .and(&mut mm.bias)
                .and(&mut vv.bias)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
        Ok(())
    }
}

/// Adam on a single scalar parameter.
#[derive(Debug, Clone)]
pub struct ScalarAdam {
    inner: Adam,
    m: f64,
    v: f64,
}

impl ScalarAdam {
    pub fn new(lr: f64) -> Self {
        Self {
            inner: Adam::new(lr),
            m: 0.0,
            v: 0.0,
        }
    }

    pub fn step(&mut self, p: &mut f64, g: f64) {
        let a = &mut self.inner;
        a.step += 1;
        self.m = a.beta1 * self.m + (1.0 - a.beta1) * g;
        self.v = a.beta2 * self.v + (1.0 - a.beta2) * g * g;
        let bc1 = 1.0 - a.beta1.powi(a.step);
        let bc2 = 1.0 - a.beta2.powi(a.step);
        *p -= a.lr / bc1 * self.m / (self.v.sqrt() / bc2.sqrt() + a.eps);
    }
}

/// Mean squared error over all entries and its gradient.
pub fn mse_loss(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let diff = &pred - &target;
    let n = diff.len() as f64;
    let loss = diff.mapv(|d| d * d).sum() / n;
    (loss, diff * (2.0 / n))
}

/// One Adam step on the MSE between `net(x)` and `y`; returns the loss.
pub fn train_step_mse(net: &mut Mlp, opt: &mut Adam, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<f64> {
    let (out, cache) = net.forward_cached(x)?;
    if out.dim() != y.dim() {
        return Err(DiclError::DimMismatch {
            expected: out.len(),
            got: y.len(),
        });
    }
    let (loss, d) = mse_loss(out.view(), y);
    if !loss.is_finite() {
        return Err(DiclError::Numerical(format!(
            "non-finite MSE loss (max |pred| = {})",
            out.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        )));
    }
    let (g, _) = net.backward(&cache, d.view());
    opt.step(net, &g)?;
    Ok(loss)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Max over parameters of `|analytic − numeric| / max(1, |analytic|, |numeric|)`
    /// with central differences.
    pub(crate) fn gradient_check<F>(net: &Mlp, analytic: &[f64], loss: F, h: f64) -> f64
    where
        F: Fn(&Mlp) -> f64,
    {
        let base = net.flatten();
        let mut probe = net.clone();
        let mut worst = 0.0f64;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] = base[i] + h;
            probe.set_flat(&p).unwrap();
            let up = loss(&probe);
            p[i] = base[i] - h;
            probe.set_flat(&p).unwrap();
            let down = loss(&probe);
            let num = (up - down) / (2.0 * h);
            let denom = analytic[i].abs().max(num.abs()).max(1.0);
            worst = worst.max((analytic[i] - num).abs() / denom);
        }
        worst
    }

    #[test]
    fn zero_weights_output_bias() {
        let net = Mlp::from_layers(vec![
            Linear {
                weight: Array2::zeros((3, 4)),
                bias: Array1::from(vec![0.5, -1.0, 0.0, 2.0]),
            },
            Linear {
                weight: Array2::zeros((4, 2)),
                bias: Array1::from(vec![0.25, -0.75]),
            },
        ])
        .unwrap();
        let out = net.forward(Array2::zeros((2, 3)).view()).unwrap();
        assert_eq!(out.row(0).to_vec(), vec![0.25, -0.75]);
    }

    #[test]
    fn linear_regression_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::new(&[1, 1], &mut rng).unwrap();
        let mut opt = Adam::new(0.05);
        let x = Array2::from_shape_fn((32, 1), |(i, _)| i as f64 / 16.0 - 1.0);
        let y = &x * 2.0;
        for _ in 0..500 {
            train_step_mse(&mut net, &mut opt, x.view(), y.view()).unwrap();
        }
        assert!((net.layers()[0].weight[[0, 0]] - 2.0).abs() < 1e-2);
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = Mlp::new(&[3, 7, 5, 2], &mut rng).unwrap();
            let x = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
            let y = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));
            let (out, cache) = net.forward_cached(x.view()).unwrap();
            let (_, d) = mse_loss(out.view(), y.view());
            let (g, _) = net.backward(&cache, d.view());
            let err = gradient_check(
                &net,
                &g.flatten(),
                |n| mse_loss(n.forward(x.view()).unwrap().view(), y.view()).0,
                1e-6,
            );
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Mlp::new(&[4, 8, 1], &mut rng).unwrap();
        let x = Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0));
        let (_, cache) = net.forward_cached(x.view()).unwrap();
        let (_, dx) = net.backward(&cache, Array2::ones((3, 1)).view());
        for i in 0..3 {
            for j in 0..4 {
                let mut up = x.clone();
                up[[i, j]] += 1e-6;
                let mut down = x.clone();
                down[[i, j]] -= 1e-6;
                let num = (net.forward(up.view()).unwrap().sum() - net.forward(down.view()).unwrap().sum()) / 2e-6;
                assert!((num - dx[[i, j]]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn soft_update_interpolates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Mlp::new(&[2, 2], &mut rng).unwrap();
        let mut b = Mlp::new(&[2, 2], &mut rng).unwrap();
        let before = b.flatten();
        b.soft_update(&a, 0.25);
        for ((x, y), z) in b.flatten().iter().zip(a.flatten()).zip(before) {
            assert!((x - (0.25 * y + 0.75 * z)).abs() < 1e-15);
        }
    }
}
