//! Soft actor-critic with twin critics, Polyak targets and automatic
//! temperature tuning.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::buffer::Batch;
use super::nn::{Adam, ForwardCache, Mlp, MlpGrads, ScalarAdam};
use crate::error::{DiclError, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const LOG_2PI: f64 = 1.837_877_066_409_345_3;
const TANH_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub tau: f64,
    pub policy_lr: f64,
    pub q_lr: f64,
    /// Actor and temperature are updated on every `policy_frequency`-th
    /// gradient step, `policy_frequency` times.
    pub policy_frequency: u64,
    pub target_network_frequency: u64,
    pub autotune: bool,
    /// Fixed temperature when `autotune` is off.
    pub alpha: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            gamma: 0.99,
            tau: 0.005,
            policy_lr: 3e-4,
            q_lr: 1e-3,
            policy_frequency: 2,
            target_network_frequency: 1,
            autotune: true,
            alpha: 0.2,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(DiclError::schema(format!(
                "gamma must be in [0, 1), got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(DiclError::schema(format!("tau must be in [0, 1], got {}", self.tau)));
        }
        if self.policy_lr <= 0.0 || self.q_lr <= 0.0 {
            return Err(DiclError::schema("learning rates must be positive"));
        }
        if self.policy_frequency == 0 || self.target_network_frequency == 0 {
            return Err(DiclError::schema(
                "policy_frequency and target_network_frequency must be ≥ 1",
            ));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(DiclError::schema("hidden layer widths must be non-empty and positive"));
        }
        Ok(())
    }
}

/// Size of the forecaster minibatch for a data proportion `alpha` of `batch`.
pub fn llm_batch_size(alpha: f64, batch: usize) -> usize {
    (alpha * batch as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Weight of the forecaster minibatch loss relative to the real one.
pub fn balancing_coefficient(llm_batch: usize, batch: usize) -> f64 {
    llm_batch as f64 / batch as f64
}

pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Tanh-squashed Gaussian policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    net: Mlp,
    scale: Array1<f64>,
    bias: Array1<f64>,
}

/// Intermediate values of one reparameterised actor pass.
#[derive(Debug, Clone)]
pub struct ActorPass {
    cache: ForwardCache,
    raw_tanh: Array2<f64>,
    std: Array2<f64>,
    noise: Array2<f64>,
    squashed: Array2<f64>,
    pub actions: Array2<f64>,
    pub log_prob: Array1<f64>,
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        low: &[f64],
        high: &[f64],
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if low.len() != high.len() || low.is_empty() {
            return Err(DiclError::invalid(
                "action bounds must be non-empty and of equal length",
            ));
        }
        let act_dim = low.len();
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * act_dim);
        Ok(Self {
            net: Mlp::new(&sizes, rng)?,
            scale: low.iter().zip(high).map(|(l, h)| (h - l) / 2.0).collect(),
            bias: low.iter().zip(high).map(|(l, h)| (h + l) / 2.0).collect(),
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn action_dim(&self) -> usize {
        self.scale.len()
    }

    /// Reparameterised pass with externally supplied standard-normal noise.
    pub fn pass(&self, obs: ArrayView2<f64>, noise: Array2<f64>) -> Result<ActorPass> {
        let d = self.action_dim();
        if noise.dim() != (obs.nrows(), d) {
            return Err(DiclError::DimMismatch {
                expected: obs.nrows() * d,
                got: noise.len(),
            });
        }
        let (out, cache) = self.net.forward_cached(obs)?;
        let mean = out.slice(s![.., ..d]);
        let raw_tanh = out.slice(s![.., d..]).mapv(f64::tanh);
        let log_std = raw_tanh.mapv(|t| LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (t + 1.0));
        let std = log_std.mapv(f64::exp);
        let squashed = (&mean + &(&std * &noise)).mapv(f64::tanh);
        let actions = &squashed * &self.scale + &self.bias;
        let mut log_prob = Array1::zeros(obs.nrows());
        for ((r, c), &t) in squashed.indexed_iter() {
            let eps = noise[[r, c]];
            log_prob[r] +=
                -0.5 * eps * eps - log_std[[r, c]] - 0.5 * LOG_2PI - (self.scale[c] * (1.0 - t * t) + TANH_EPS).ln();
        }
        Ok(ActorPass {
            cache,
            raw_tanh,
            std,
            noise,
            squashed,
            actions,
            log_prob,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, obs: ArrayView2<f64>, rng: &mut R) -> Result<ActorPass> {
        let noise = standard_normal(obs.nrows(), self.action_dim(), rng);
        self.pass(obs, noise)
    }

    /// Deterministic action `scale · tanh(mean) + bias`.
    pub fn mean_action(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let out = self.net.forward(obs)?;
        let d = self.action_dim();
        Ok(out.slice(s![.., ..d]).mapv(f64::tanh) * &self.scale + &self.bias)
    }

    /// Parameter gradients given `∂L/∂action` and `∂L/∂log_prob` per row.
    pub fn backward(&self, pass: &ActorPass, d_actions: ArrayView2<f64>, d_log_prob: ArrayView1<f64>) -> MlpGrads {
        let d = self.action_dim();
        let n = pass.actions.nrows();
        let mut d_out = Array2::zeros((n, 2 * d));
        for r in 0..n {
            let w = d_log_prob[r];
            for c in 0..d {
                let t = pass.squashed[[r, c]];
                let sc = self.scale[c];
                let dt_du = 1.0 - t * t;
                let d_u = d_actions[[r, c]] * sc * dt_du + w * 2.0 * sc * t * dt_du / (sc * dt_du + TANH_EPS);
                d_out[[r, c]] = d_u;
                let d_log_std = d_u * pass.std[[r, c]] * pass.noise[[r, c]] - w;
                let rt = pass.raw_tanh[[r, c]];
                d_out[[r, d + c]] = d_log_std * 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (1.0 - rt * rt);
            }
        }
        self.net.backward(&pass.cache, d_out.view()).0
    }
}

pub fn q_network<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Mlp> {
    let mut sizes = vec![obs_dim + act_dim];
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    Mlp::new(&sizes, rng)
}

fn q_input(obs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[obs, actions]).expect("row counts agree")
}

/// `mean((Q1 − y)²) + mean((Q2 − y)²)` and its parameter gradients.
pub fn critic_loss_grads(
    q1: &Mlp,
    q2: &Mlp,
    obs: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    targets: ArrayView1<f64>,
) -> Result<(f64, MlpGrads, MlpGrads)> {
    let x = q_input(obs, actions);
    let n = targets.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(2);
    for q in [q1, q2] {
        let (out, cache) = q.forward_cached(x.view())?;
        let diff = &out.column(0) - &targets;
        loss += diff.mapv(|v| v * v).sum() / n;
        let d_out = (diff * (2.0 / n)).insert_axis(Axis(1));
        grads.push(q.backward(&cache, d_out.view()).0);
    }
    let g2 = grads.pop().expect("two critics");
    let g1 = grads.pop().expect("two critics");
    Ok((loss, g1, g2))
}

/// `mean(α·log π(a|s) − min(Q1, Q2)(s, a))` with `a` reparameterised by
/// `noise`; returns the loss, actor gradients and the log-probabilities.
pub fn actor_loss_grads(
    actor: &Actor,
    q1: &Mlp,
    q2: &Mlp,
    obs: ArrayView2<f64>,
    noise: Array2<f64>,
    alpha: f64,
) -> Result<(f64, MlpGrads, Array1<f64>)> {
    let pass = actor.pass(obs, noise)?;
    let n = obs.nrows();
    let nf = n as f64;
    let x = q_input(obs, pass.actions.view());
    let (o1, c1) = q1.forward_cached(x.view())?;
    let (o2, c2) = q2.forward_cached(x.view())?;
    let mut d1 = Array2::zeros((n, 1));
    let mut d2 = Array2::zeros((n, 1));
    let mut loss = 0.0;
    for r in 0..n {
        let (a, b) = (o1[[r, 0]], o2[[r, 0]]);
        if a <= b {
            d1[[r, 0]] = -1.0 / nf;
        } else {
            d2[[r, 0]] = -1.0 / nf;
        }
        loss += (alpha * pass.log_prob[r] - a.min(b)) / nf;
    }
    let obs_dim = obs.ncols();
    let dx = q1.backward(&c1, d1.view()).1 + q2.backward(&c2, d2.view()).1;
    let d_actions = dx.slice(s![.., obs_dim..]);
    let d_log_prob = Array1::from_elem(n, alpha / nf);
    let grads = actor.backward(&pass, d_actions, d_log_prob.view());
    Ok((loss, grads, pass.log_prob))
}

/// `−exp(log α)·(E[log π] + target entropy)` and its derivative in `log α`;
/// `entropy_gap` is the bracketed term.
pub fn temperature_loss_grad(log_alpha: f64, entropy_gap: f64) -> (f64, f64) {
    let loss = -log_alpha.exp() * entropy_gap;
    (loss, loss)
}

/// Losses from one gradient step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    /// Present when the actor was updated on this step.
    pub actor_loss: Option<f64>,
    pub alpha: f64,
    pub used_llm_batch: bool,
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    config: SacConfig,
    actor: Actor,
    q1: Mlp,
    q2: Mlp,
    q1_target: Mlp,
    q2_target: Mlp,
    actor_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
    log_alpha: f64,
    alpha_opt: ScalarAdam,
    target_entropy: f64,
    n_updates: u64,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        action_bound: f64,
        config: SacConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if !action_bound.is_finite() || action_bound <= 0.0 {
            return Err(DiclError::invalid("action bound must be positive"));
        }
        let low = vec![-action_bound; act_dim];
        let high = vec![action_bound; act_dim];
        let actor = Actor::new(obs_dim, &low, &high, &config.hidden, rng)?;
        let q1 = q_network(obs_dim, act_dim, &config.hidden, rng)?;
        let q2 = q_network(obs_dim, act_dim, &config.hidden, rng)?;
        let log_alpha = if config.autotune { 0.0 } else { config.alpha.ln() };
        Ok(Self {
            actor_opt: Adam::new(config.policy_lr),
            q1_opt: Adam::new(config.q_lr),
            q2_opt: Adam::new(config.q_lr),
            alpha_opt: ScalarAdam::new(config.q_lr),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor,
            q1,
            q2,
            log_alpha,
            target_entropy: -(act_dim as f64),
            n_updates: 0,
            config,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn actor(&self) -> &Actor {
        &self.actor
    }

    pub fn critics(&self) -> (&Mlp, &Mlp) {
        (&self.q1, &self.q2)
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn n_updates(&self) -> u64 {
        self.n_updates
    }

    /// Stochastic action for a single observation.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, obs.len()), obs).map_err(|e| DiclError::invalid(e.to_string()))?;
        Ok(self.actor.sample(x, rng)?.actions.row(0).to_vec())
    }

    pub fn act_deterministic(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, obs.len()), obs).map_err(|e| DiclError::invalid(e.to_string()))?;
        Ok(self.actor.mean_action(x)?.row(0).to_vec())
    }

    fn td_targets<R: Rng + ?Sized>(&self, batch: &Batch, rng: &mut R) -> Result<Array1<f64>> {
        let next = self.actor.sample(batch.next_observations.view(), rng)?;
        let x = q_input(batch.next_observations.view(), next.actions.view());
        let t1 = self.q1_target.forward(x.view())?;
        let t2 = self.q2_target.forward(x.view())?;
        let alpha = self.alpha();
        Ok(Array1::from_shape_fn(batch.len(), |r| {
            let soft = t1[[r, 0]].min(t2[[r, 0]]) - alpha * next.log_prob[r];
            batch.rewards[r] + (1.0 - batch.dones[r]) * self.config.gamma * soft
        }))
    }

    /// One gradient step on `batch`, plus `llm` weighted by `|llm| / |batch|`.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, llm: Option<&Batch>, rng: &mut R) -> Result<UpdateStats> {
        if batch.is_empty() {
            return Err(DiclError::invalid("SAC update needs a non-empty batch"));
        }
        let llm = llm.filter(|b| !b.is_empty());
        let coef = llm.map_or(0.0, |b| balancing_coefficient(b.len(), batch.len()));

        let y = self.td_targets(batch, rng)?;
        let y_llm = llm.map(|b| self.td_targets(b, rng)).transpose()?;
        let (mut critic_loss, mut g1, mut g2) = critic_loss_grads(
            &self.q1,
            &self.q2,
            batch.observations.view(),
            batch.actions.view(),
            y.view(),
        )?;
        if let (Some(b), Some(y)) = (llm, &y_llm) {
            let (l, h1, h2) = critic_loss_grads(&self.q1, &self.q2, b.observations.view(), b.actions.view(), y.view())?;
            critic_loss += coef * l;
            g1.add_scaled(&h1, coef);
            g2.add_scaled(&h2, coef);
        }
        if !critic_loss.is_finite() {
            return Err(DiclError::Numerical(format!(
                "critic loss is {critic_loss} after {} updates",
                self.n_updates
            )));
        }
        self.q1_opt.step(&mut self.q1, &g1)?;
        self.q2_opt.step(&mut self.q2, &g2)?;

        let mut actor_loss = None;
        if self.n_updates.is_multiple_of(self.config.policy_frequency) {
            for _ in 0..self.config.policy_frequency {
                actor_loss = Some(self.actor_step(batch, llm, coef, rng)?);
                if self.config.autotune {
                    self.temperature_step(batch, llm, coef, rng)?;
                }
            }
        }
        if self.n_updates.is_multiple_of(self.config.target_network_frequency) {
            self.q1_target.soft_update(&self.q1, self.config.tau);
            self.q2_target.soft_update(&self.q2, self.config.tau);
        }
        self.n_updates += 1;
        Ok(UpdateStats {
            critic_loss,
            actor_loss,
            alpha: self.alpha(),
            used_llm_batch: llm.is_some(),
        })
    }

    fn actor_step<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        llm: Option<&Batch>,
        coef: f64,
        rng: &mut R,
    ) -> Result<f64> {
        let alpha = self.alpha();
        let d = self.actor.action_dim();
        let noise = standard_normal(batch.len(), d, rng);
        let (mut loss, mut grads, _) =
            actor_loss_grads(&self.actor, &self.q1, &self.q2, batch.observations.view(), noise, alpha)?;
        if let Some(b) = llm {
            let noise = standard_normal(b.len(), d, rng);
            let (l, g, _) = actor_loss_grads(&self.actor, &self.q1, &self.q2, b.observations.view(), noise, alpha)?;
            loss += coef * l;
            grads.add_scaled(&g, coef);
        }
        if !loss.is_finite() {
            return Err(DiclError::Numerical(format!(
                "actor loss is {loss} after {} updates",
                self.n_updates
            )));
        }
        self.actor_opt.step(self.actor.net_mut(), &grads)?;
        Ok(loss)
    }

    fn temperature_step<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        llm: Option<&Batch>,
        coef: f64,
        rng: &mut R,
    ) -> Result<()> {
        let entropy_gap = |b: &Batch, rng: &mut R| -> Result<f64> {
            let pass = self.actor.sample(b.observations.view(), rng)?;
            Ok(pass.log_prob.mean().expect("non-empty") + self.target_entropy)
        };
        let mut gap = entropy_gap(batch, rng)?;
        if let Some(b) = llm {
            gap += coef * entropy_gap(b, rng)?;
        }
        let (_, grad) = temperature_loss_grad(self.log_alpha, gap);
        self.alpha_opt.step(&mut self.log_alpha, grad);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::nn::tests::gradient_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_batch(n: usize, obs_dim: usize, act_dim: usize, rng: &mut ChaCha8Rng) -> Batch {
        let u = |r: usize, c: usize, rng: &mut ChaCha8Rng| {
            Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
        };
        Batch {
            observations: u(n, obs_dim, rng),
            actions: u(n, act_dim, rng),
            rewards: Array1::from_shape_simple_fn(n, || rng.random_range(-1.0..1.0)),
            next_observations: u(n, obs_dim, rng),
            dones: Array1::from_shape_simple_fn(n, || if rng.random_bool(0.2) { 1.0 } else { 0.0 }),
        }
    }

    #[test]
    fn table_batch_sizes() {
        assert_eq!(llm_batch_size(0.05, 128), 7);
        assert_eq!(llm_batch_size(0.10, 128), 13);
        assert_eq!(llm_batch_size(0.25, 128), 32);
        assert_eq!(llm_batch_size(0.05, 64), 4);
        assert_eq!(llm_batch_size(0.10, 64), 7);
        assert_eq!(llm_batch_size(0.25, 64), 16);
        assert_eq!(llm_batch_size(0.0, 64), 0);
        assert_eq!(balancing_coefficient(7, 128), 7.0 / 128.0);
    }

    #[test]
    fn log_prob_matches_change_of_variables() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let actor = Actor::new(2, &[-2.0], &[2.0], &[6], &mut rng).unwrap();
        let obs = Array2::from_shape_vec((1, 2), vec![0.3, -0.7]).unwrap();
        let noise = Array2::from_elem((1, 1), 0.4);
        let pass = actor.pass(obs.view(), noise).unwrap();
        let out = actor.net().forward(obs.view()).unwrap();
        let (mean, raw) = (out[[0, 0]], out[[0, 1]]);
        let log_std = LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (raw.tanh() + 1.0);
        let std = log_std.exp();
        let u = mean + std * 0.4;
        let gauss = statrs::distribution::Normal::new(mean, std).unwrap();
        use statrs::distribution::Continuous;
        let expected = gauss.ln_pdf(u) - (2.0 * (1.0 - u.tanh().powi(2)) + 1e-6).ln();
        assert!((pass.log_prob[0] - expected).abs() < 1e-10);
        assert!((pass.actions[[0, 0]] - 2.0 * u.tanh()).abs() < 1e-14);
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        for seed in 0..4 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q1 = q_network(3, 2, &[6, 5], &mut rng).unwrap();
            let q2 = q_network(3, 2, &[6, 5], &mut rng).unwrap();
            let b = random_batch(5, 3, 2, &mut rng);
            let (_, g1, g2) =
                critic_loss_grads(&q1, &q2, b.observations.view(), b.actions.view(), b.rewards.view()).unwrap();
            let loss_q1 = |q: &Mlp| {
                critic_loss_grads(q, &q2, b.observations.view(), b.actions.view(), b.rewards.view())
                    .unwrap()
                    .0
            };
            let loss_q2 = |q: &Mlp| {
                critic_loss_grads(&q1, q, b.observations.view(), b.actions.view(), b.rewards.view())
                    .unwrap()
                    .0
            };
            assert!(gradient_check(&q1, &g1.flatten(), loss_q1, 1e-6) < 1e-4);
            assert!(gradient_check(&q2, &g2.flatten(), loss_q2, 1e-6) < 1e-4);
        }
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        for seed in 0..4 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let actor = Actor::new(3, &[-2.0, -1.0], &[2.0, 1.0], &[6, 5], &mut rng).unwrap();
            let q1 = q_network(3, 2, &[6], &mut rng).unwrap();
            let q2 = q_network(3, 2, &[6], &mut rng).unwrap();
            let b = random_batch(5, 3, 2, &mut rng);
            let noise = standard_normal(5, 2, &mut rng);
            let alpha = 0.3;
            let (_, g, _) = actor_loss_grads(&actor, &q1, &q2, b.observations.view(), noise.clone(), alpha).unwrap();
            let loss = |net: &Mlp| {
                let mut a = actor.clone();
                *a.net_mut() = net.clone();
                actor_loss_grads(&a, &q1, &q2, b.observations.view(), noise.clone(), alpha)
                    .unwrap()
                    .0
            };
            let err = gradient_check(actor.net(), &g.flatten(), loss, 1e-6);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn empty_llm_batch_matches_plain_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = SacConfig {
            hidden: vec![8, 8],
            ..SacConfig::default()
        };
        let mut a = SacAgent::new(3, 1, 2.0, cfg, &mut rng).unwrap();
        let mut b = a.clone();
        let batch = random_batch(16, 3, 1, &mut rng);
        let empty = random_batch(0, 3, 1, &mut rng);
        let mut ra = ChaCha8Rng::seed_from_u64(9);
        let mut rb = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..4 {
            let sa = a.update(&batch, None, &mut ra).unwrap();
            let sb = b.update(&batch, Some(&empty), &mut rb).unwrap();
            assert_eq!(sa, sb);
        }
        assert_eq!(a.actor().net().flatten(), b.actor().net().flatten());
    }

    #[test]
    fn llm_batch_changes_the_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = SacConfig {
            hidden: vec![8],
            ..SacConfig::default()
        };
        let mut a = SacAgent::new(3, 1, 2.0, cfg, &mut rng).unwrap();
        let mut b = a.clone();
        let batch = random_batch(16, 3, 1, &mut rng);
        let extra = random_batch(2, 3, 1, &mut rng);
        a.update(&batch, None, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let s = b
            .update(&batch, Some(&extra), &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert!(s.used_llm_batch);
        assert_ne!(a.critics().0.flatten(), b.critics().0.flatten());
    }

    #[test]
    fn critic_fits_constant_reward_terminal_transitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = SacConfig {
            hidden: vec![16, 16],
            ..SacConfig::default()
        };
        let mut agent = SacAgent::new(2, 1, 1.0, cfg, &mut rng).unwrap();
        let mut batch = random_batch(32, 2, 1, &mut rng);
        batch.rewards.fill(1.5);
        batch.dones.fill(1.0);
        let mut last = f64::INFINITY;
        for _ in 0..1500 {
            last = agent.update(&batch, None, &mut rng).unwrap().critic_loss;
        }
        assert!(last < 1e-3, "{last}");
    }
}
