//! `dicl forecast`: rollouts from the start of each episode.

use std::fs::File;
use std::path::PathBuf;

use dicl_core::dicl::{ActionMode, DiclConfig, DiclMethod, MethodKind};
use dicl_core::forecaster::NextValueDistribution;
use dicl_core::{DiclError, Result};
use ndarray::s;
use serde::{Deserialize, Serialize};

use super::open_dataset;
use crate::config::{
    csv_err, default_method, override_method, resolve_path, write_json, write_resolved, GlobalArgs, RawConfig,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastConfig {
    pub dataset: PathBuf,
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default = "default_method")]
    pub method: DiclConfig,
    /// Defaults to the episode length minus `horizon`.
    #[serde(default)]
    pub context_len: Option<usize>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Episode indices to forecast; all when absent.
    #[serde(default)]
    pub episodes: Option<Vec<usize>>,
    #[serde(default)]
    pub seed: u64,
}

fn default_horizon() -> usize {
    10
}

/// Per-step distributions as written to `distributions.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistributionRecord {
    pub episode: usize,
    pub step: usize,
    pub h: usize,
    pub channels: Vec<ChannelRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelRecord {
    pub distribution: NextValueDistribution,
    /// Realised channel value when the episode extends that far.
    pub truth: Option<f64>,
}

pub fn run(raw: RawConfig, args: &GlobalArgs) -> Result<()> {
    let mut cfg: ForecastConfig = crate::config::parse_table(raw.table)?;
    resolve_path(&raw.base_dir, &mut cfg.dataset);
    if let Some(m) = cfg.manifest.as_mut() {
        resolve_path(&raw.base_dir, m);
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    override_method(&mut cfg.method, cfg.seed, args);
    if cfg.horizon == 0 {
        return Err(DiclError::schema("horizon must be ≥ 1"));
    }
    write_resolved(&args.out, &cfg)?;

    let dataset = open_dataset(&cfg.dataset, cfg.manifest.as_ref())?;
    let method = DiclMethod::from_config(cfg.method.clone())?;
    let episodes = cfg
        .episodes
        .clone()
        .unwrap_or_else(|| (0..dataset.trajectories.len()).collect());

    let mut writer = csv::Writer::from_writer(File::create(args.out.join("predictions.csv"))?);
    let mut records = Vec::new();
    let mut header_written = false;
    for &e in &episodes {
        let traj = dataset
            .trajectories
            .get(e)
            .ok_or_else(|| DiclError::schema(format!("episodes: index {e} out of range")))?;
        let ctx_len = match cfg.context_len {
            Some(c) => c,
            None => traj
                .len()
                .checked_sub(cfg.horizon)
                .ok_or_else(|| DiclError::schema(format!("episode {e} is shorter than horizon {}", cfg.horizon)))?,
        };
        if ctx_len < 2 || ctx_len > traj.len() {
            return Err(DiclError::schema(format!(
                "context_len {ctx_len} invalid for episode {e} of length {}",
                traj.len()
            )));
        }
        let context = traj.slice(0..ctx_len)?;
        let oracle_actions = cfg.method.kind == MethodKind::DiclSa && cfg.method.action_mode == ActionMode::Oracle;
        let future = if oracle_actions {
            let acts = traj
                .actions()
                .ok_or_else(|| DiclError::schema("oracle action mode needs actions"))?;
            if ctx_len + cfg.horizon > traj.len() {
                return Err(DiclError::schema(
                    "oracle action mode needs the real actions of the whole horizon",
                ));
            }
            Some(acts.slice(s![ctx_len..ctx_len + cfg.horizon, ..]).to_owned())
        } else {
            None
        };
        let results = method.rollout(&context, cfg.horizon, future.as_ref().map(|a| a.view()))?;
        let truths = if ctx_len + cfg.horizon <= traj.len() {
            Some(method.channel_values(&traj.slice(0..ctx_len + cfg.horizon)?, ctx_len)?)
        } else {
            None
        };

        let names = method.layout(traj).names();
        if !header_written {
            let mut header = vec!["episode".to_string(), "step".into(), "h".into()];
            header.extend(names.iter().cloned());
            header.extend(names.iter().map(|n| format!("{n}_lower")));
            header.extend(names.iter().map(|n| format!("{n}_upper")));
            writer.write_record(&header).map_err(csv_err)?;
            header_written = true;
        }
        for (j, r) in results.into_iter().enumerate() {
            let step = ctx_len + j;
            let mut row = vec![e.to_string(), step.to_string(), (j + 1).to_string()];
            row.extend(r.point.iter().chain(&r.lower).chain(&r.upper).map(|v| v.to_string()));
            writer.write_record(&row).map_err(csv_err)?;
            records.push(DistributionRecord {
                episode: e,
                step,
                h: j + 1,
                channels: r
                    .dists
                    .into_iter()
                    .enumerate()
                    .map(|(c, distribution)| ChannelRecord {
                        distribution,
                        truth: truths.as_ref().map(|z| z[[step, c]]),
                    })
                    .collect(),
            });
        }
    }
    writer.flush()?;
    write_json(&args.out.join("distributions.json"), &records)?;
    log::info!("wrote {} forecast steps to {}", records.len(), args.out.display());
    Ok(())
}
