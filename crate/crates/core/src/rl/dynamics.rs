//! One-step MLP dynamics model fitted on a single context trajectory.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{mse_loss, train_step_mse, Adam, Mlp};
use crate::error::{DiclError, Result};
use crate::trajdata::{ScalerPipeline, Trajectory};

/// Fewer transitions than this leave no usable validation split.
pub const MIN_TRANSITIONS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    /// Epochs without an improvement larger than `min_delta` before stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128; 4],
            epochs: 150,
            batch_size: 64,
            learning_rate: 1e-3,
            validation_fraction: 0.1,
            patience: 10,
            min_delta: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub stopped_early: bool,
    pub n_train: usize,
    pub n_validation: usize,
}

/// `s_{t+1} ≈ f(s_t, a_t)` with standardised inputs and targets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicsModel {
    net: Mlp,
    input_scaler: ScalerPipeline,
    target_scaler: ScalerPipeline,
    state_dim: usize,
    action_dim: usize,
    report: FitReport,
}

fn transitions(context: &Trajectory) -> Result<(Array2<f64>, Array2<f64>)> {
    let n = context.len().saturating_sub(1);
    let states = context.states();
    let inputs = match context.actions() {
        Some(a) => concatenate(Axis(1), &[states.slice(s![..n, ..]), a.slice(s![..n, ..])])
            .map_err(|e| DiclError::invalid(e.to_string()))?,
        None => states.slice(s![..n, ..]).to_owned(),
    };
    Ok((inputs, states.slice(s![1.., ..]).to_owned()))
}

fn rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

/// Train the baseline on the transitions of `context` with early stopping on
/// a held-out split; the best validation weights are kept.
pub fn mlp_dynamics_baseline(context: &Trajectory, config: &DynamicsConfig) -> Result<DynamicsModel> {
    let n = context.len().saturating_sub(1);
    if n < MIN_TRANSITIONS {
        return Err(DiclError::invalid(format!(
            "the MLP baseline needs at least {MIN_TRANSITIONS} transitions, got {n}"
        )));
    }
    if !(config.validation_fraction > 0.0 && config.validation_fraction < 1.0) || config.batch_size == 0 {
        return Err(DiclError::schema(
            "validation_fraction must be in (0, 1) and batch_size ≥ 1",
        ));
    }
    let (inputs, targets) = transitions(context)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((n as f64 * config.validation_fraction).ceil() as usize).clamp(1, n - 2);
    let (val_idx, train_idx) = order.split_at(n_val);

    let input_scaler = ScalerPipeline::fit(&rows(&inputs, train_idx))?;
    let target_scaler = ScalerPipeline::fit(&rows(&targets, train_idx))?;
    let x = input_scaler.transform(&inputs)?;
    let y = target_scaler.transform(&targets)?;
    let (x_val, y_val) = (rows(&x, val_idx), rows(&y, val_idx));

    let mut sizes = vec![x.ncols()];
    sizes.extend_from_slice(&config.hidden);
    sizes.push(y.ncols());
    let mut net = Mlp::new(&sizes, &mut rng)?;
    let mut opt = Adam::new(config.learning_rate);
    let mut train: Vec<usize> = train_idx.to_vec();

    let mut best = (f64::INFINITY, net.clone(), 0usize);
    let mut since_best = 0;
    let mut epochs_run = 0;
    for epoch in 0..config.epochs {
        train.shuffle(&mut rng);
        for chunk in train.chunks(config.batch_size) {
            train_step_mse(&mut net, &mut opt, rows(&x, chunk).view(), rows(&y, chunk).view())?;
        }
        epochs_run = epoch + 1;
        let val = mse_loss(net.forward(x_val.view())?.view(), y_val.view()).0;
        if !val.is_finite() {
            return Err(DiclError::Numerical(format!(
                "validation loss is {val} at epoch {epoch}"
            )));
        }
        if val < best.0 - config.min_delta {
            best = (val, net.clone(), epochs_run);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let (best_validation_loss, net, best_epoch) = best;
    Ok(DynamicsModel {
        net,
        input_scaler,
        target_scaler,
        state_dim: context.state_dim(),
        action_dim: context.action_dim(),
        report: FitReport {
            epochs_run,
            best_epoch,
            best_validation_loss,
            stopped_early: epochs_run < config.epochs,
            n_train: train.len(),
            n_validation: n_val,
        },
    })
}

impl DynamicsModel {
    pub fn report(&self) -> &FitReport {
        &self.report
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn target_scaler(&self) -> &ScalerPipeline {
        &self.target_scaler
    }

    /// Next-state predictions for rows of `(states | actions)`.
    pub fn predict(&self, states: ArrayView2<f64>, actions: Option<ArrayView2<f64>>) -> Result<Array2<f64>> {
        let inputs = match (actions, self.action_dim) {
            (_, 0) => states.to_owned(),
            (Some(a), _) => concatenate(Axis(1), &[states, a]).map_err(|e| DiclError::invalid(e.to_string()))?,
            (None, d) => return Err(DiclError::DimMismatch { expected: d, got: 0 }),
        };
        let z = self.net.forward(self.input_scaler.transform(&inputs)?.view())?;
        self.target_scaler.inverse(&z)
    }

    /// Mean squared one-step error in the target scaler's space over the
    /// transitions of `traj`.
    pub fn scaled_mse(&self, traj: &Trajectory) -> Result<f64> {
        let (inputs, targets) = transitions(traj)?;
        let z = self.net.forward(self.input_scaler.transform(&inputs)?.view())?;
        Ok(mse_loss(z.view(), self.target_scaler.transform(&targets)?.view()).0)
    }

    /// Autoregressive rollout from the last state of `context` under
    /// `actions` (one row per step).
    pub fn rollout(&self, start: &[f64], actions: Option<ArrayView2<f64>>, horizon: usize) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((horizon, self.state_dim));
        let mut state =
            Array2::from_shape_vec((1, start.len()), start.to_vec()).map_err(|e| DiclError::invalid(e.to_string()))?;
        for h in 0..horizon {
            let a = actions.as_ref().map(|a| a.slice(s![h..h + 1, ..]));
            state = self.predict(state.view(), a)?;
            out.row_mut(h).assign(&state.row(0));
        }
        Ok(out)
    }
}
