//! Hybrid policy evaluation: real rewards outside a forecast window, forecast
//! rewards inside it.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dicl::{DiclConfig, DiclMethod};
use crate::error::{DiclError, Result};
use crate::forecaster::LookupOracle;
use crate::trajdata::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discount {
    #[default]
    Undiscounted,
    Gamma(f64),
}

impl Discount {
    fn weight(&self, t: usize) -> f64 {
        match *self {
            Discount::Undiscounted => 1.0,
            Discount::Gamma(g) => g.powi(t as i32),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridEvalSpec {
    /// Real steps before the forecast window (T).
    pub context_len: usize,
    /// Forecast steps (k).
    pub horizon: usize,
    /// Steps in the evaluated value (L).
    #[serde(default = "default_episode_len")]
    pub episode_len: usize,
    #[serde(default)]
    pub discount: Discount,
}

fn default_episode_len() -> usize {
    1000
}

impl HybridEvalSpec {
    pub fn new(context_len: usize, horizon: usize) -> Self {
        Self {
            context_len,
            horizon,
            episode_len: default_episode_len(),
            discount: Discount::Undiscounted,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.context_len + self.horizon > self.episode_len {
            return Err(DiclError::schema(format!(
                "context_len + horizon ({}) exceeds episode_len ({})",
                self.context_len + self.horizon,
                self.episode_len
            )));
        }
        if self.horizon > 0 && self.context_len < 2 {
            return Err(DiclError::schema("forecasting needs context_len ≥ 2"));
        }
        if let Discount::Gamma(g) = self.discount {
            if !(0.0..=1.0).contains(&g) {
                return Err(DiclError::schema(format!("discount gamma must be in [0, 1], got {g}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridValue {
    pub context_len: usize,
    pub horizon: usize,
    pub v_hat: f64,
    pub v_true: f64,
    pub abs_err: f64,
    /// `None` when `v_true` is zero; `abs_err` is then the error to report.
    pub rel_err: Option<f64>,
}

impl HybridValue {
    pub fn v_true_is_zero(&self) -> bool {
        self.rel_err.is_none()
    }
}

fn value(rewards: &[f64], discount: Discount) -> f64 {
    rewards.iter().enumerate().map(|(t, r)| discount.weight(t) * r).sum()
}

/// Value of `episode` with rewards on `[T, T + k)` replaced by the reward
/// column of a `k`-step rollout from the first `T` steps.
pub fn hybrid_value(episode: &Trajectory, spec: &HybridEvalSpec, method: &DiclMethod) -> Result<HybridValue> {
    spec.validate()?;
    if !method.config().include_reward {
        return Err(DiclError::schema(
            "hybrid evaluation needs a method with include_reward = true",
        ));
    }
    let rewards = episode
        .rewards()
        .ok_or_else(|| DiclError::schema("hybrid evaluation needs an episode with rewards"))?;
    if episode.len() < spec.episode_len {
        return Err(DiclError::invalid(format!(
            "episode has {} steps, episode_len is {}",
            episode.len(),
            spec.episode_len
        )));
    }
    let real: Vec<f64> = rewards.iter().take(spec.episode_len).copied().collect();
    let mut spliced = real.clone();
    if spec.horizon > 0 {
        let context = episode.slice(0..spec.context_len)?;
        let forecast = method.rollout(&context, spec.horizon, None)?;
        for (j, step) in forecast.iter().enumerate() {
            spliced[spec.context_len + j] = step.reward().expect("include_reward checked");
        }
    }
    let v_hat = value(&spliced, spec.discount);
    let v_true = value(&real, spec.discount);
    let abs_err = (v_hat - v_true).abs();
    Ok(HybridValue {
        context_len: spec.context_len,
        horizon: spec.horizon,
        v_hat,
        v_true,
        abs_err,
        rel_err: (v_true != 0.0).then(|| abs_err / v_true.abs()),
    })
}

/// Evaluate every episode in parallel; results keep the input order.
pub fn hybrid_value_batch(
    episodes: &[Trajectory],
    spec: &HybridEvalSpec,
    method: &DiclMethod,
) -> Vec<Result<HybridValue>> {
    episodes.par_iter().map(|e| hybrid_value(e, spec, method)).collect()
}

/// A method built on `config` whose backend knows `episode`'s continuation,
/// so rollouts from `episode[..context_len]` carry quantization error only.
pub fn oracle_method(episode: &Trajectory, context_len: usize, config: DiclConfig) -> Result<(DiclMethod, Vec<f64>)> {
    let probe = DiclMethod::with_backend(config.clone(), Arc::new(LookupOracle::default()))?;
    let (bins, widths) = probe.reference_bins(episode, context_len)?;
    Ok((
        DiclMethod::with_backend(config, Arc::new(LookupOracle::new(bins)))?,
        widths,
    ))
}

/// One CSV row per result: `episode,context_len,horizon,v_hat,v_true,abs_err,rel_err`.
pub fn write_results_csv<W: Write>(rows: &[(usize, HybridValue)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| DiclError::Io(std::io::Error::other(e));
    w.write_record([
        "episode",
        "context_len",
        "horizon",
        "v_hat",
        "v_true",
        "abs_err",
        "rel_err",
    ])
    .map_err(io)?;
    for (ep, r) in rows {
        w.write_record([
            ep.to_string(),
            r.context_len.to_string(),
            r.horizon.to_string(),
            r.v_hat.to_string(),
            r.v_true.to_string(),
            r.abs_err.to_string(),
            r.rel_err.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
