//! `dicl train`: SAC or DICL-SAC on the native pendulum.

use std::fs;
use std::path::PathBuf;

use dicl_core::dicl::{DiclConfig, DiclMethod};
use dicl_core::envs::{PendulumEnv, PendulumParams};
use dicl_core::rl::{dicl_sac_train, sac_train, DiclSacConfig};
use dicl_core::Result;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{default_method, override_method, write_json, write_resolved, GlobalArgs, RawConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    #[default]
    Pendulum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sac,
    #[default]
    DiclSac,
}

/// Keys that are not trainer hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainHead {
    #[serde(default)]
    env: EnvKind,
    #[serde(default)]
    algorithm: Algorithm,
    #[serde(default = "default_episode_steps")]
    max_episode_steps: usize,
    #[serde(default = "default_method")]
    method: DiclConfig,
}

fn default_episode_steps() -> usize {
    200
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainConfig {
    env: EnvKind,
    algorithm: Algorithm,
    max_episode_steps: usize,
    method: DiclConfig,
    #[serde(flatten)]
    trainer: DiclSacConfig,
}

pub fn run(raw: RawConfig, args: &GlobalArgs) -> Result<()> {
    let mut table = raw.table;
    let mut head_table = serde_json::Map::new();
    for key in ["env", "algorithm", "max_episode_steps", "method"] {
        if let Some(v) = table.remove(key) {
            head_table.insert(key.to_string(), v);
        }
    }
    let head: TrainHead = crate::config::parse_table(head_table)?;
    let mut cfg = TrainConfig {
        env: head.env,
        algorithm: head.algorithm,
        max_episode_steps: head.max_episode_steps,
        method: head.method,
        trainer: crate::config::parse_table(table)?,
    };
    if let Some(seed) = args.seed {
        cfg.trainer.seed = seed;
    }
    override_method(&mut cfg.method, cfg.trainer.seed, args);
    cfg.trainer.validate()?;
    write_resolved(&args.out, &cfg)?;

    let mut env = match cfg.env {
        EnvKind::Pendulum => PendulumEnv::new(PendulumParams {
            max_steps: cfg.max_episode_steps,
            ..PendulumParams::default()
        }),
    };
    let outcome = match cfg.algorithm {
        Algorithm::Sac => sac_train(&mut env, &cfg.trainer)?,
        Algorithm::DiclSac => {
            let method = DiclMethod::from_config(cfg.method.clone())?;
            dicl_sac_train(&mut env, &cfg.trainer, Some(&method))?
        }
    };
    outcome.save_log_csv(&args.out.join("training_log.csv"))?;
    let ckpt: PathBuf = args.out.join("checkpoints");
    fs::create_dir_all(&ckpt)?;
    write_json(&ckpt.join("actor.json"), outcome.agent.actor())?;
    write_json(
        &args.out.join("summary.json"),
        &json!({
            "episodes": outcome.episode_returns.len(),
            "final_mean_return_10": outcome.final_mean_return(10),
            "generation_rounds": outcome.generation_rounds,
            "failed_rounds": outcome.failed_rounds,
            "skipped_llm_batches": outcome.skipped_llm_batches,
            "llm_transitions": outcome.audit.len(),
        }),
    )?;
    if let Some(m) = outcome.final_mean_return(10) {
        println!("final 10-episode mean return: {m:.2}");
    }
    Ok(())
}
