//! Ground-truth dynamics: finite MDPs with exact returns, and a pendulum
//! swing-up task with the classic control constants.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{DiclError, Result};
use crate::trajdata::Trajectory;

const STOCHASTIC_TOL: f64 = 1e-12;

/// Finite MDP with kernel `P[s, a, s']` stored flat, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    kernel: Vec<f64>,
    reward: Vec<f64>,
    mu0: Vec<f64>,
    gamma: f64,
    r_max: f64,
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
        return Err(DiclError::schema(format!("{what} has negative or non-finite entries")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > STOCHASTIC_TOL * row.len().max(1) as f64 {
        return Err(DiclError::schema(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// Dirichlet(1, ..., 1) draw via normalized exponentials.
pub fn dirichlet_row<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let g = Gamma::new(1.0, 1.0).expect("valid gamma");
    let mut v: Vec<f64> = (0..n).map(|_| g.sample(rng)).collect();
    let s: f64 = v.iter().sum();
    for x in &mut v {
        *x /= s;
    }
    v
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        kernel: Vec<f64>,
        reward: Vec<f64>,
        mu0: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(DiclError::invalid("MDP needs at least one state and action"));
        }
        if kernel.len() != n_states * n_actions * n_states {
            return Err(DiclError::DimMismatch {
                expected: n_states * n_actions * n_states,
                got: kernel.len(),
            });
        }
        if reward.len() != n_states * n_actions {
            return Err(DiclError::DimMismatch {
                expected: n_states * n_actions,
                got: reward.len(),
            });
        }
        if mu0.len() != n_states {
            return Err(DiclError::DimMismatch {
                expected: n_states,
                got: mu0.len(),
            });
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(DiclError::invalid("gamma must lie in [0, 1)"));
        }
        for (i, row) in kernel.chunks(n_states).enumerate() {
            check_distribution(row, &format!("P[{}, {}, .]", i / n_actions, i % n_actions))?;
        }
        check_distribution(&mu0, "mu0")?;
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(DiclError::schema("rewards must be finite"));
        }
        let r_max = reward.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        Ok(Self {
            n_states,
            n_actions,
            kernel,
            reward,
            mu0,
            gamma,
            r_max,
        })
    }

    /// Dirichlet(1) kernel rows, `r ~ U[0, r_max]`, Dirichlet(1) initial
    /// distribution.
    pub fn random<R: Rng + ?Sized>(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        r_max: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let kernel = (0..n_states * n_actions)
            .flat_map(|_| dirichlet_row(n_states, rng))
            .collect();
        let reward = (0..n_states * n_actions).map(|_| rng.random::<f64>() * r_max).collect();
        let mu0 = dirichlet_row(n_states, rng);
        let mut m = Self::new(n_states, n_actions, kernel, reward, mu0, gamma)?;
        m.r_max = m.r_max.max(r_max);
        Ok(m)
    }

    /// Same rewards and initial distribution with a different kernel.
    pub fn with_kernel(&self, kernel: Vec<f64>) -> Result<Self> {
        let mut m = Self::new(
            self.n_states,
            self.n_actions,
            kernel,
            self.reward.clone(),
            self.mu0.clone(),
            self.gamma,
        )?;
        m.r_max = self.r_max;
        Ok(m)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Recorded reward bound (at least `max |r|`).
    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    /// `P[s, a, .]`.
    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let o = (s * self.n_actions + a) * self.n_states;
        &self.kernel[o..o + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    fn check_policy(&self, pi: &TabularPolicy) -> Result<()> {
        if pi.n_states != self.n_states || pi.n_actions != self.n_actions {
            return Err(DiclError::DimMismatch {
                expected: self.n_states * self.n_actions,
                got: pi.n_states * pi.n_actions,
            });
        }
        Ok(())
    }

    /// `P^π[s, s'] = Σ_a π[s, a] P[s, a, s']`.
    pub fn policy_transition(&self, pi: &TabularPolicy) -> Result<DMatrix<f64>> {
        self.check_policy(pi)?;
        let n = self.n_states;
        Ok(DMatrix::from_fn(n, n, |s, t| {
            (0..self.n_actions)
                .map(|a| pi.prob(s, a) * self.next_dist(s, a)[t])
                .sum()
        }))
    }

    /// `r^π[s] = Σ_a π[s, a] r[s, a]`.
    pub fn policy_reward(&self, pi: &TabularPolicy) -> Result<DVector<f64>> {
        self.check_policy(pi)?;
        Ok(DVector::from_fn(self.n_states, |s, _| {
            (0..self.n_actions).map(|a| pi.prob(s, a) * self.reward(s, a)).sum()
        }))
    }

    /// `μ0ᵀ (I − γ P^π)⁻¹ r^π`.
    pub fn exact_return(&self, pi: &TabularPolicy) -> Result<f64> {
        let p = self.policy_transition(pi)?;
        let r = self.policy_reward(pi)?;
        let n = self.n_states;
        let a = DMatrix::identity(n, n) - p * self.gamma;
        let v = a
            .lu()
            .solve(&r)
            .ok_or_else(|| DiclError::Numerical("singular policy evaluation system".into()))?;
        Ok(DVector::from_column_slice(&self.mu0).dot(&v))
    }

    /// Iterative policy evaluation until the update falls below `tol`.
    pub fn value_iteration_return(&self, pi: &TabularPolicy, tol: f64) -> Result<f64> {
        let p = self.policy_transition(pi)?;
        let r = self.policy_reward(pi)?;
        let mut v = DVector::zeros(self.n_states);
        loop {
            let next = &r + &p * &v * self.gamma;
            let diff = (&next - &v).amax();
            v = next;
            if diff < tol {
                break;
            }
        }
        Ok(DVector::from_column_slice(&self.mu0).dot(&v))
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.mu0, rng)
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        sample_index(self.next_dist(s, a), rng)
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Stochastic policy `π[s, a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(DiclError::DimMismatch {
                expected: n_states * n_actions,
                got: probs.len(),
            });
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            check_distribution(row, &format!("pi[{s}, .]"))?;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Always take `actions[s]` in state `s`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(DiclError::invalid(format!("action {a} out of range")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Self::new(actions.len(), n_actions, probs)
    }

    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> Self {
        let probs = (0..n_states).flat_map(|_| dirichlet_row(n_actions, rng)).collect();
        Self {
            n_states,
            n_actions,
            probs,
        }
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        sample_index(self.row(s), rng)
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    /// Time limit reached.
    pub truncated: bool,
}

/// Continuous-control environment interface used by the trainers.
pub trait Env {
    fn observation_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Symmetric action bound: actions live in `[-bound, bound]`.
    fn action_bound(&self) -> f64;
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> StepOutcome;
}

/// Wrap an angle into `(-π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    use std::f64::consts::PI;
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumParams {
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub dt: f64,
    pub max_torque: f64,
    pub max_speed: f64,
    pub max_steps: usize,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            dt: 0.05,
            max_torque: 2.0,
            max_speed: 8.0,
            max_steps: 200,
        }
    }
}

/// Pendulum state `(θ, θ̇)`; `θ = 0` is upright.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumState {
    pub theta: f64,
    pub theta_dot: f64,
}

impl PendulumState {
    pub fn observation(&self) -> [f64; 3] {
        [self.theta.cos(), self.theta.sin(), self.theta_dot]
    }

    pub fn from_observation(obs: &[f64]) -> Self {
        Self {
            theta: obs[1].atan2(obs[0]),
            theta_dot: obs[2],
        }
    }
}

/// Semi-implicit Euler step; returns the next state and the reward of
/// acting in `state`.
pub fn pendulum_step(params: &PendulumParams, state: PendulumState, torque: f64) -> (PendulumState, f64) {
    let p = params;
    let u = torque.clamp(-p.max_torque, p.max_torque);
    let th = state.theta;
    let thdot = state.theta_dot;
    let angle = wrap_angle(th);
    let reward = -(angle * angle + 0.1 * thdot * thdot + 0.001 * u * u);
    let accel = 3.0 * p.gravity / (2.0 * p.length) * th.sin() + 3.0 / (p.mass * p.length * p.length) * u;
    let new_thdot = (thdot + accel * p.dt).clamp(-p.max_speed, p.max_speed);
    let new_th = th + new_thdot * p.dt;
    (
        PendulumState {
            theta: wrap_angle(new_th),
            theta_dot: new_thdot,
        },
        reward,
    )
}

/// Mechanical energy per unit inertia, conserved by the continuous dynamics
/// without torque.
pub fn pendulum_energy(params: &PendulumParams, state: PendulumState) -> f64 {
    0.5 * state.theta_dot * state.theta_dot - 3.0 * params.gravity / (2.0 * params.length) * (1.0 - state.theta.cos())
}

#[derive(Debug, Clone)]
pub struct PendulumEnv {
    params: PendulumParams,
    state: PendulumState,
    steps: usize,
}

impl Default for PendulumEnv {
    fn default() -> Self {
        Self::new(PendulumParams::default())
    }
}

impl PendulumEnv {
    pub fn new(params: PendulumParams) -> Self {
        Self {
            params,
            state: PendulumState {
                theta: std::f64::consts::PI,
                theta_dot: 0.0,
            },
            steps: 0,
        }
    }

    pub fn params(&self) -> &PendulumParams {
        &self.params
    }

    pub fn state(&self) -> PendulumState {
        self.state
    }

    pub fn set_state(&mut self, state: PendulumState) {
        self.state = state;
        self.steps = 0;
    }
}

impl Env for PendulumEnv {
    fn observation_dim(&self) -> usize {
        3
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_bound(&self) -> f64 {
        self.params.max_torque
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        use std::f64::consts::PI;
        self.state = PendulumState {
            theta: rng.random_range(-PI..PI),
            theta_dot: rng.random_range(-1.0..1.0),
        };
        self.steps = 0;
        self.state.observation().to_vec()
    }

    fn step(&mut self, action: &[f64]) -> StepOutcome {
        let (next, reward) = pendulum_step(&self.params, self.state, action[0]);
        self.state = next;
        self.steps += 1;
        StepOutcome {
            observation: next.observation().to_vec(),
            reward,
            terminated: false,
            truncated: self.steps >= self.params.max_steps,
        }
    }
}

/// Run `policy` for `n_steps` from a seeded reset, without time-limit
/// resets. Row `t` holds the observation, the action taken in it and the
/// reward received.
pub fn collect_rollout<E, P>(env: &mut E, mut policy: P, n_steps: usize, seed: u64) -> Result<Trajectory>
where
    E: Env,
    P: FnMut(&[f64], &mut ChaCha8Rng) -> Vec<f64>,
{
    if n_steps == 0 {
        return Err(DiclError::invalid("rollout needs at least one step"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs = env.reset(&mut rng);
    let (ds, da) = (env.observation_dim(), env.action_dim());
    let mut states = Array2::zeros((n_steps, ds));
    let mut actions = Array2::zeros((n_steps, da));
    let mut rewards = Array1::zeros(n_steps);
    for t in 0..n_steps {
        let a = policy(&obs, &mut rng);
        if a.len() != da {
            return Err(DiclError::DimMismatch {
                expected: da,
                got: a.len(),
            });
        }
        let out = env.step(&a);
        states.row_mut(t).assign(&Array1::from(obs.clone()));
        actions.row_mut(t).assign(&Array1::from(a));
        rewards[t] = out.reward;
        obs = out.observation;
    }
    Trajectory::new(states, Some(actions), Some(rewards))
}

/// Uniform random actions in `[-bound, bound]^dim`.
pub fn random_policy(dim: usize, bound: f64) -> impl FnMut(&[f64], &mut ChaCha8Rng) -> Vec<f64> {
    move |_, rng| (0..dim).map(|_| rng.random_range(-bound..=bound)).collect()
}
