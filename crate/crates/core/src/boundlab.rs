//! Tabular laboratory for the multi-branch return bound: total variation
//! distances, the multi-step error lemma, Monte Carlo multi-branch returns
//! and the bound check itself.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{dirichlet_row, TabularMdp, TabularPolicy};
use crate::error::{DiclError, Result};
use crate::stats::{mix_seed, KahanSum};

/// Tail mass below which the return sum is truncated.
pub const TRUNCATION_TOL: f64 = 1e-4;

const ROLLOUTS_PER_CHUNK: usize = 4096;

/// `½ Σ |p − q|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(DiclError::DimMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// True MDP and a model sharing its states, actions, rewards and `μ0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPair {
    pub truth: TabularMdp,
    pub model: TabularMdp,
}

impl ModelPair {
    pub fn new(truth: TabularMdp, model_kernel: Vec<f64>) -> Result<Self> {
        let model = truth.with_kernel(model_kernel)?;
        Ok(Self { truth, model })
    }

    /// Random truth and a model `(1 − δ) P + δ Q` with `Q` an independent
    /// random kernel and `δ ~ U(0, 1)`.
    pub fn random<R: Rng + ?Sized>(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        r_max: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let truth = TabularMdp::random(n_states, n_actions, gamma, r_max, rng)?;
        let delta: f64 = rng.random();
        let kernel = truth
            .kernel()
            .chunks(n_states)
            .flat_map(|row| {
                let q = dirichlet_row(n_states, rng);
                let mut mixed: Vec<f64> = row.iter().zip(&q).map(|(p, q)| (1.0 - delta) * p + delta * q).collect();
                let s: f64 = mixed.iter().sum();
                mixed.iter_mut().for_each(|v| *v /= s);
                mixed
            })
            .collect();
        Self::new(truth, kernel)
    }

    /// `Σ_a π(a|s) TV(P(·|s,a), P̂(·|s,a))` for every state.
    pub fn state_action_tv(&self, pi: &TabularPolicy) -> Result<Vec<f64>> {
        let (n, na) = (self.truth.n_states(), self.truth.n_actions());
        (0..n)
            .map(|s| {
                (0..na)
                    .map(|a| Ok(pi.prob(s, a) * tv_distance(self.truth.next_dist(s, a), self.model.next_dist(s, a))?))
                    .sum()
            })
            .collect()
    }
}

fn row_vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// State marginals `μ0ᵀ P^t` for `t = 0..=t_max`.
fn marginals(mu0: &[f64], kernel: &DMatrix<f64>, t_max: usize) -> Vec<DVector<f64>> {
    let kt = kernel.transpose();
    let mut out = Vec::with_capacity(t_max + 1);
    let mut d = row_vector(mu0);
    out.push(d.clone());
    for _ in 0..t_max {
        d = &kt * d;
        out.push(d.clone());
    }
    out
}

/// `max_{T ≤ t ≤ H} E_{s ~ P^t, a ~ π} TV(P(·|s,a), P̂(·|s,a))`.
pub fn epsilon_llm(pair: &ModelPair, pi: &TabularPolicy, min_context: usize, horizon: usize) -> Result<f64> {
    if min_context > horizon {
        return Err(DiclError::invalid("min_context must not exceed horizon"));
    }
    let tv = row_vector(&pair.state_action_tv(pi)?);
    let p = pair.truth.policy_transition(pi)?;
    Ok(marginals(pair.truth.mu0(), &p, horizon)[min_context..]
        .iter()
        .map(|d| d.dot(&tv))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    /// `ε_t = TV(μ0 P^t, μ0 P̂^t)` for `t = 0..=t_max`.
    pub eps: Vec<f64>,
    /// `ξ_t = E_{s ~ μ0 P^{t−1}} TV(P^π(·|s), P̂^π(·|s))`, `ξ_0 = 0`.
    pub xi: Vec<f64>,
    pub holds: bool,
}

/// Exact check of `ε_t ≤ Σ_{i ≤ t} ξ_i` under the policy-marginal kernels.
pub fn lemma_b2_check(pair: &ModelPair, pi: &TabularPolicy, mu0: &[f64], t_max: usize) -> Result<LemmaReport> {
    if t_max == 0 {
        return Err(DiclError::invalid("t_max must be >= 1"));
    }
    let n = pair.truth.n_states();
    if mu0.len() != n {
        return Err(DiclError::DimMismatch {
            expected: n,
            got: mu0.len(),
        });
    }
    let p = pair.truth.policy_transition(pi)?;
    let q = pair.model.policy_transition(pi)?;
    let one_step: Vec<f64> = (0..n)
        .map(|s| {
            let a: Vec<f64> = p.row(s).iter().copied().collect();
            let b: Vec<f64> = q.row(s).iter().copied().collect();
            tv_distance(&a, &b)
        })
        .collect::<Result<_>>()?;
    let one_step = row_vector(&one_step);
    let mp = marginals(mu0, &p, t_max);
    let mq = marginals(mu0, &q, t_max);
    let eps: Vec<f64> = (0..=t_max)
        .map(|t| tv_distance(mp[t].as_slice(), mq[t].as_slice()))
        .collect::<Result<_>>()?;
    let mut xi = vec![0.0];
    xi.extend((1..=t_max).map(|t| mp[t - 1].dot(&one_step)));
    let mut cum = 0.0;
    let mut holds = true;
    for t in 0..=t_max {
        cum += xi[t];
        holds &= eps[t] <= cum + 1e-12;
    }
    Ok(LemmaReport { eps, xi, holds })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchConfig {
    /// Branching probability per eligible timestep.
    pub p: f64,
    /// Branch length.
    pub k: usize,
    /// Minimal context length: no branch starts before this timestep.
    pub min_context: usize,
    /// Truncation horizon; defaults to [`default_horizon`].
    pub horizon: Option<usize>,
    pub n_rollouts: usize,
    pub seed: u64,
}

impl BranchConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(DiclError::invalid("p must lie in [0, 1]"));
        }
        if self.n_rollouts < 2 {
            return Err(DiclError::invalid("n_rollouts must be >= 2"));
        }
        Ok(())
    }

    pub fn resolved_horizon(&self, gamma: f64, r_max: f64) -> usize {
        self.horizon.unwrap_or_else(|| default_horizon(gamma, r_max))
    }
}

/// Smallest `H` with `γ^H r_max / (1 − γ) < TRUNCATION_TOL`.
pub fn default_horizon(gamma: f64, r_max: f64) -> usize {
    let mut h = 0;
    let mut tail = r_max / (1.0 - gamma);
    while tail >= TRUNCATION_TOL && h < 100_000 {
        tail *= gamma;
        h += 1;
    }
    h
}

/// Discounted return truncated to `t < horizon`, computed exactly.
pub fn truncated_return(mdp: &TabularMdp, pi: &TabularPolicy, horizon: usize) -> Result<f64> {
    let p = mdp.policy_transition(pi)?;
    let r = mdp.policy_reward(pi)?;
    let mut acc = KahanSum::new();
    let mut disc = 1.0;
    for d in marginals(mdp.mu0(), &p, horizon.saturating_sub(1)).iter().take(horizon) {
        acc.add(disc * d.dot(&r));
        disc *= mdp.gamma();
    }
    Ok(acc.value())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnEstimate {
    pub eta_hat: f64,
    pub stderr: f64,
    pub horizon: usize,
}

fn cumulative_rows(k: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..k.nrows())
        .map(|s| {
            let mut acc = 0.0;
            k.row(s)
                .iter()
                .map(|p| {
                    acc += p;
                    acc
                })
                .collect()
        })
        .collect()
}

fn draw(cum: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1)
}

struct Sampler {
    true_cum: Vec<Vec<f64>>,
    model_cum: Vec<Vec<f64>>,
    mu0_cum: Vec<f64>,
    reward: Vec<f64>,
    gamma: f64,
}

impl Sampler {
    /// One rollout: a persistent true chain, with a model branch started
    /// from the true state at each eligible `t` with probability `p`. Branch
    /// `b` started at `τ` occupies `τ+1..=τ+k`; the reward at `t` is the
    /// mean over occupying branches, or the true chain's if there are none.
    fn rollout(&self, cfg: &BranchConfig, horizon: usize, rng: &mut ChaCha8Rng) -> f64 {
        let k = cfg.k;
        // ring of branch states indexed by start time modulo k
        let mut branches: Vec<Option<usize>> = vec![None; k.max(1)];
        let mut s = draw(&self.mu0_cum, rng);
        let mut g = 0.0;
        let mut disc = 1.0;
        for t in 0..horizon {
            let mut sum = 0.0;
            let mut count = 0;
            for b in branches.iter().flatten() {
                sum += self.reward[*b];
                count += 1;
            }
            let r = if count > 0 { sum / count as f64 } else { self.reward[s] };
            g += disc * r;
            disc *= self.gamma;
            if t + 1 == horizon {
                break;
            }
            if k > 0 {
                // retire the branch started at t - k, then possibly start one at t
                let slot = t % k;
                branches[slot] = None;
                for b in branches.iter_mut().flatten() {
                    *b = draw(&self.model_cum[*b], rng);
                }
                if t >= cfg.min_context && rng.random::<f64>() < cfg.p {
                    branches[slot] = Some(draw(&self.model_cum[s], rng));
                }
            }
            s = draw(&self.true_cum[s], rng);
        }
        g
    }
}

/// Monte Carlo estimate of the multi-branch return with its standard error.
///
/// Rollouts run in fixed chunks with seeds derived from `cfg.seed`, so the
/// result does not depend on the number of worker threads.
pub fn multibranch_return(pair: &ModelPair, pi: &TabularPolicy, cfg: &BranchConfig) -> Result<ReturnEstimate> {
    cfg.validate()?;
    let mdp = &pair.truth;
    let horizon = cfg.resolved_horizon(mdp.gamma(), mdp.r_max());
    let effective = if cfg.k == 0 || cfg.p == 0.0 {
        BranchConfig { k: 0, p: 0.0, ..*cfg }
    } else {
        *cfg
    };
    let mu0_cum = {
        let mut acc = 0.0;
        mdp.mu0()
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect()
    };
    let sampler = Sampler {
        true_cum: cumulative_rows(&mdp.policy_transition(pi)?),
        model_cum: cumulative_rows(&pair.model.policy_transition(pi)?),
        mu0_cum,
        reward: mdp.policy_reward(pi)?.as_slice().to_vec(),
        gamma: mdp.gamma(),
    };
    let n_chunks = cfg.n_rollouts.div_ceil(ROLLOUTS_PER_CHUNK);
    let partial: Vec<(KahanSum, KahanSum)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, c as u64));
            let n = ROLLOUTS_PER_CHUNK.min(cfg.n_rollouts - c * ROLLOUTS_PER_CHUNK);
            let mut s1 = KahanSum::new();
            let mut s2 = KahanSum::new();
            for _ in 0..n {
                let g = sampler.rollout(&effective, horizon, &mut rng);
                s1.add(g);
                s2.add(g * g);
            }
            (s1, s2)
        })
        .collect();
    let mut s1 = KahanSum::new();
    let mut s2 = KahanSum::new();
    for (a, b) in &partial {
        s1.merge(a);
        s2.merge(b);
    }
    let n = cfg.n_rollouts as f64;
    let mean = s1.value() / n;
    let var = ((s2.value() - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(ReturnEstimate {
        eta_hat: mean,
        stderr: (var / n).sqrt(),
        horizon,
    })
}

/// `2 γ^T / (1 − γ) · r_max · k² · p · ε`.
pub fn theorem1_rhs(gamma: f64, min_context: usize, r_max: f64, k: usize, p: f64, eps: f64) -> f64 {
    2.0 * gamma.powi(min_context as i32) / (1.0 - gamma) * r_max * (k * k) as f64 * p * eps
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `|η_H − η̂|` against the exact return truncated at the same horizon.
    pub lhs: f64,
    pub stderr: f64,
    pub rhs: f64,
    pub eps_llm: f64,
    pub eta_exact: f64,
    pub eta_hat: f64,
    /// Tail of the untruncated return ignored by both sides.
    pub truncation_bias: f64,
    pub holds: bool,
    /// `rhs − (lhs − 3·stderr)`.
    pub slack: f64,
}

/// Compare the Monte Carlo multi-branch return against the bound.
pub fn theorem1_check(pair: &ModelPair, pi: &TabularPolicy, cfg: &BranchConfig) -> Result<BoundReport> {
    cfg.validate()?;
    let mdp = &pair.truth;
    let horizon = cfg.resolved_horizon(mdp.gamma(), mdp.r_max());
    let eps = epsilon_llm(pair, pi, cfg.min_context.min(horizon), horizon)?;
    let rhs = theorem1_rhs(mdp.gamma(), cfg.min_context, mdp.r_max(), cfg.k, cfg.p, eps);
    let eta_exact = truncated_return(mdp, pi, horizon)?;
    let truncation_bias = mdp.exact_return(pi)? - eta_exact;
    if cfg.k == 0 || cfg.p == 0.0 {
        return Ok(BoundReport {
            lhs: 0.0,
            stderr: 0.0,
            rhs,
            eps_llm: eps,
            eta_exact,
            eta_hat: eta_exact,
            truncation_bias,
            holds: true,
            slack: rhs,
        });
    }
    let est = multibranch_return(pair, pi, cfg)?;
    let lhs = (eta_exact - est.eta_hat).abs();
    Ok(BoundReport {
        lhs,
        stderr: est.stderr,
        rhs,
        eps_llm: eps,
        eta_exact,
        eta_hat: est.eta_hat,
        truncation_bias,
        holds: lhs - 3.0 * est.stderr <= rhs,
        slack: rhs - (lhs - 3.0 * est.stderr),
    })
}

/// Grid of random model pairs × (p, k, T) cells for [`theorem1_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub n_pairs: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub r_max: f64,
    pub p: Vec<f64>,
    pub k: Vec<usize>,
    pub min_context: Vec<usize>,
    pub n_rollouts: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_pairs: 50,
            n_states: 4,
            n_actions: 2,
            gamma: 0.9,
            r_max: 1.0,
            p: vec![0.1, 0.5],
            k: vec![1, 3],
            min_context: vec![0, 2],
            n_rollouts: 200_000,
            seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(DiclError::schema(format!(
                "gamma must be in [0, 1), got {}",
                self.gamma
            )));
        }
        if self.r_max.is_nan() || self.r_max <= 0.0 {
            return Err(DiclError::schema("r_max must be positive"));
        }
        if self.n_states == 0 || self.n_actions == 0 || self.n_pairs == 0 {
            return Err(DiclError::schema("n_pairs, n_states and n_actions must be ≥ 1"));
        }
        if let Some(p) = self.p.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(DiclError::schema(format!("branching probability {p} outside [0, 1]")));
        }
        if self.n_rollouts < 2 {
            return Err(DiclError::schema("n_rollouts must be ≥ 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub pair: usize,
    pub p: f64,
    pub k: usize,
    pub min_context: usize,
    pub report: BoundReport,
}

/// Run [`theorem1_check`] on every cell. Pair `i` and its random policy are
/// drawn from `mix_seed(seed, i)`; each cell gets its own rollout seed.
pub fn theorem1_sweep(cfg: &SweepConfig) -> Result<Vec<SweepCell>> {
    cfg.validate()?;
    let mut cells = Vec::with_capacity(cfg.n_pairs * cfg.p.len() * cfg.k.len() * cfg.min_context.len());
    for i in 0..cfg.n_pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, i as u64));
        let pair = ModelPair::random(cfg.n_states, cfg.n_actions, cfg.gamma, cfg.r_max, &mut rng)?;
        let pi = TabularPolicy::random(cfg.n_states, cfg.n_actions, &mut rng);
        for &p in &cfg.p {
            for &k in &cfg.k {
                for &t in &cfg.min_context {
                    let branch = BranchConfig {
                        p,
                        k,
                        min_context: t,
                        horizon: None,
                        n_rollouts: cfg.n_rollouts,
                        seed: rng.random(),
                    };
                    cells.push(SweepCell {
                        pair: i,
                        p,
                        k,
                        min_context: t,
                        report: theorem1_check(&pair, &pi, &branch)?,
                    });
                }
            }
        }
    }
    Ok(cells)
}
