//! `dicl sensitivity`: one-at-a-time sensitivity of the pendulum dynamics.

use std::fs::File;

use dicl_core::envs::{pendulum_step, PendulumParams, PendulumState};
use dicl_core::metrics::{column_std, sensitivity_matrix};
use dicl_core::{DiclError, Result};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{csv_err, write_resolved, GlobalArgs, RawConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityConfig {
    #[serde(default)]
    pub env: super::train::EnvKind,
    #[serde(default = "default_states")]
    pub n_states: usize,
    /// Perturbation as a fraction of each input's standard deviation.
    #[serde(default = "default_rel")]
    pub rel: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_states() -> usize {
    64
}

fn default_rel() -> f64 {
    0.1
}

pub fn run(raw: RawConfig, args: &GlobalArgs) -> Result<()> {
    let mut cfg: SensitivityConfig = crate::config::parse_table(raw.table)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if cfg.n_states < 2 || cfg.rel.is_nan() || cfg.rel <= 0.0 {
        return Err(DiclError::schema("n_states must be ≥ 2 and rel > 0"));
    }
    write_resolved(&args.out, &cfg)?;

    let params = PendulumParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inputs = Array2::from_shape_fn((cfg.n_states, 4), |_| 0.0);
    let mut inputs = inputs;
    for mut row in inputs.rows_mut() {
        let state = PendulumState {
            theta: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            theta_dot: rng.random_range(-params.max_speed..params.max_speed),
        };
        let obs = state.observation();
        row[0] = obs[0];
        row[1] = obs[1];
        row[2] = obs[2];
        row[3] = rng.random_range(-params.max_torque..params.max_torque);
    }
    let scale = column_std(inputs.view());
    let dynamics = |s: &[f64], a: &[f64]| {
        pendulum_step(&params, PendulumState::from_observation(s), a[0])
            .0
            .observation()
            .to_vec()
    };
    let mut sum = Array2::<f64>::zeros((3, 4));
    let mut max = Array2::<f64>::zeros((3, 4));
    for row in inputs.rows() {
        let m = sensitivity_matrix(dynamics, &row.to_vec()[..3], &[row[3]], &scale, cfg.rel)?;
        sum += &m;
        max.zip_mut_with(&m, |a, &b| *a = a.max(b));
    }
    let n = cfg.n_states as f64;
    let outputs = ["s0", "s1", "s2"];
    let input_names = ["s0", "s1", "s2", "a0"];
    let mut w = csv::Writer::from_writer(File::create(args.out.join("sensitivity.csv"))?);
    w.write_record(["output", "input", "mean", "max"]).map_err(csv_err)?;
    for (k, o) in outputs.iter().enumerate() {
        for (i, name) in input_names.iter().enumerate() {
            w.write_record([
                o.to_string(),
                name.to_string(),
                (sum[[k, i]] / n).to_string(),
                max[[k, i]].to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}
