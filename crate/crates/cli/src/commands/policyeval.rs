//! `dicl policyeval`: hybrid real/forecast value estimates per episode.

use std::fs::File;
use std::path::PathBuf;

use dicl_core::dicl::{DiclConfig, DiclMethod, MethodKind};
use dicl_core::policyeval::{hybrid_value, oracle_method, write_results_csv, Discount, HybridEvalSpec, HybridValue};
use dicl_core::{DiclError, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::open_dataset;
use crate::config::{override_method, resolve_path, write_resolved, GlobalArgs, RawConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyEvalConfig {
    pub dataset: PathBuf,
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default = "reward_method")]
    pub method: DiclConfig,
    #[serde(default = "default_contexts")]
    pub context_lens: Vec<usize>,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
    #[serde(default = "default_episode_len")]
    pub episode_len: usize,
    #[serde(default)]
    pub discount: Discount,
    /// Replace the backend with one that knows each episode's rewards.
    #[serde(default)]
    pub oracle: bool,
    #[serde(default)]
    pub seed: u64,
}

fn reward_method() -> DiclConfig {
    DiclConfig {
        include_reward: true,
        ..DiclConfig::new(MethodKind::Vicl)
    }
}

fn default_contexts() -> Vec<usize> {
    vec![500]
}

fn default_horizons() -> Vec<usize> {
    vec![0, 100, 250, 500]
}

fn default_episode_len() -> usize {
    1000
}

pub fn run(raw: RawConfig, args: &GlobalArgs) -> Result<()> {
    let mut cfg: PolicyEvalConfig = crate::config::parse_table(raw.table)?;
    resolve_path(&raw.base_dir, &mut cfg.dataset);
    if let Some(m) = cfg.manifest.as_mut() {
        resolve_path(&raw.base_dir, m);
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    override_method(&mut cfg.method, cfg.seed, args);
    if !cfg.method.include_reward {
        return Err(DiclError::schema(
            "method.include_reward must be true for policy evaluation",
        ));
    }
    let specs: Vec<HybridEvalSpec> = cfg
        .context_lens
        .iter()
        .flat_map(|&t| {
            cfg.horizons.iter().map(move |&k| HybridEvalSpec {
                context_len: t,
                horizon: k,
                episode_len: cfg.episode_len,
                discount: cfg.discount,
            })
        })
        .collect();
    for s in &specs {
        s.validate()?;
    }
    write_resolved(&args.out, &cfg)?;

    let dataset = open_dataset(&cfg.dataset, cfg.manifest.as_ref())?;
    let shared = DiclMethod::from_config(cfg.method.clone())?;
    let per_episode: Vec<Result<Vec<(usize, HybridValue)>>> = dataset
        .trajectories
        .par_iter()
        .enumerate()
        .map(|(e, ep)| {
            specs
                .iter()
                .map(|spec| {
                    let value = if cfg.oracle && spec.horizon > 0 {
                        let (m, _) = oracle_method(ep, spec.context_len, cfg.method.clone())?;
                        hybrid_value(ep, spec, &m)?
                    } else {
                        hybrid_value(ep, spec, &shared)?
                    };
                    Ok((e, value))
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_episode {
        rows.extend(r?);
    }
    write_results_csv(&rows, File::create(args.out.join("policyeval.csv"))?)?;
    Ok(())
}
