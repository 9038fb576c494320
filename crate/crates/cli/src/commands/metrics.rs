//! `dicl metrics`: multi-step MSE and calibration of forecast artifacts.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::PathBuf;

use dicl_core::metrics::{default_grid, multistep_mse, reliability_diagram, RolloutPair};
use dicl_core::trajdata::{ScalerPipeline, Trajectory};
use dicl_core::{DiclError, Result};
use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::forecast::DistributionRecord;
use super::open_dataset;
use crate::config::{csv_err, resolve_path, write_json, write_resolved, GlobalArgs, RawConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    pub dataset: PathBuf,
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    /// `predictions.csv` written by `dicl forecast`.
    pub predictions: PathBuf,
    /// `distributions.json` written by `dicl forecast`; enables calibration.
    #[serde(default)]
    pub distributions: Option<PathBuf>,
    /// Defaults to every horizon present in the predictions.
    #[serde(default)]
    pub horizons: Option<Vec<usize>>,
    #[serde(default = "default_grid")]
    pub grid: Vec<f64>,
    /// Pool every horizon into the calibration instead of one-step only.
    #[serde(default)]
    pub calibration_all_horizons: bool,
    #[serde(default)]
    pub scaler_fit: ScalerFit,
    #[serde(default)]
    pub seed: u64,
}

/// Rows the error-metric scaler is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerFit {
    /// Each episode's rows before its first predicted step.
    #[default]
    Context,
    /// Every row of the dataset.
    Dataset,
}

/// Column of a named feature (`s<i>`, `a<i>`, `r`) in a trajectory.
fn feature_column(traj: &Trajectory, name: &str) -> Result<Vec<f64>> {
    let index = |prefix: &str| name.strip_prefix(prefix).and_then(|i| i.parse::<usize>().ok());
    let missing = || DiclError::schema(format!("dataset has no column for prediction feature `{name}`"));
    if name == "r" {
        return Ok(traj.rewards().ok_or_else(missing)?.to_vec());
    }
    if let Some(i) = index("s").filter(|&i| i < traj.state_dim()) {
        return Ok(traj.states().column(i).to_vec());
    }
    if let Some(i) = index("a").filter(|&i| i < traj.action_dim()) {
        return Ok(traj.actions().ok_or_else(missing)?.column(i).to_vec());
    }
    Err(missing())
}

fn scaled(scaler: &ScalerPipeline, p: RolloutPair) -> Result<RolloutPair> {
    Ok(RolloutPair {
        prediction: scaler.transform(&p.prediction)?,
        truth: scaler.transform(&p.truth)?,
    })
}

pub fn run(raw: RawConfig, args: &GlobalArgs) -> Result<()> {
    let mut cfg: MetricsConfig = crate::config::parse_table(raw.table)?;
    for p in [&mut cfg.dataset, &mut cfg.predictions] {
        resolve_path(&raw.base_dir, p);
    }
    for p in [cfg.manifest.as_mut(), cfg.distributions.as_mut()]
        .into_iter()
        .flatten()
    {
        resolve_path(&raw.base_dir, p);
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    write_resolved(&args.out, &cfg)?;

    let dataset = open_dataset(&cfg.dataset, cfg.manifest.as_ref())?;
    let mut reader = csv::Reader::from_path(&cfg.predictions)
        .map_err(|e| DiclError::schema(format!("predictions {}: {e}", cfg.predictions.display())))?;
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    for key in ["episode", "step", "h"] {
        if !header.iter().any(|h| h == key) {
            return Err(DiclError::schema(format!("predictions: missing column `{key}`")));
        }
    }
    let features: Vec<(usize, String)> = header
        .iter()
        .enumerate()
        .filter(|(_, n)| {
            !matches!(n.as_str(), "episode" | "step" | "h") && !n.ends_with("_lower") && !n.ends_with("_upper")
        })
        .map(|(i, n)| (i, n.clone()))
        .collect();
    if features.is_empty() {
        return Err(DiclError::schema("predictions: no feature columns"));
    }
    let col = |name: &str| header.iter().position(|h| h == name).expect("checked");
    let (ci_ep, ci_step, ci_h) = (col("episode"), col("step"), col("h"));

    // episode -> rows of (h, step, values)
    let mut by_episode: BTreeMap<usize, Vec<(usize, usize, Vec<f64>)>> = BTreeMap::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|e| DiclError::Parse {
                line: line + 2,
                message: format!("column {}: {e}", header[i]),
            })
        };
        let ep = num(ci_ep)? as usize;
        let step = num(ci_step)? as usize;
        let h = num(ci_h)? as usize;
        let values = features.iter().map(|(i, _)| num(*i)).collect::<Result<Vec<_>>>()?;
        by_episode.entry(ep).or_default().push((h, step, values));
    }
    if by_episode.is_empty() {
        return Err(DiclError::schema("predictions file has no rows"));
    }

    let d = features.len();
    let mut blocks = Vec::new();
    for (ep, mut rows) in by_episode {
        let traj = dataset.trajectories.get(ep).ok_or_else(|| {
            DiclError::schema(format!(
                "predictions reference episode {ep}, dataset has {}",
                dataset.trajectories.len()
            ))
        })?;
        let cols = features
            .iter()
            .map(|(_, n)| feature_column(traj, n))
            .collect::<Result<Vec<_>>>()?;
        let data = Array2::from_shape_fn((traj.len(), d), |(t, j)| cols[j][t]);
        rows.sort_by_key(|r| r.0);
        let mut prediction = Array2::zeros((rows.len(), d));
        let mut truth = Array2::zeros((rows.len(), d));
        for (k, (_, step, values)) in rows.iter().enumerate() {
            if *step >= traj.len() {
                return Err(DiclError::schema(format!(
                    "episode {ep}: prediction step {step} beyond the data"
                )));
            }
            prediction.row_mut(k).assign(&ndarray::aview1(values));
            truth.row_mut(k).assign(&data.row(*step));
        }
        let context_len = rows.iter().map(|r| r.1).min().expect("non-empty");
        blocks.push((ep, data, context_len, RolloutPair { prediction, truth }));
    }

    let pairs = match cfg.scaler_fit {
        ScalerFit::Dataset => {
            let views: Vec<_> = blocks.iter().map(|b| b.1.view()).collect();
            let stacked = ndarray::concatenate(Axis(0), &views).map_err(|e| DiclError::invalid(e.to_string()))?;
            let scaler = ScalerPipeline::fit(&stacked)?;
            blocks
                .into_iter()
                .map(|(_, _, _, p)| scaled(&scaler, p))
                .collect::<Result<Vec<_>>>()?
        }
        ScalerFit::Context => blocks
            .into_iter()
            .map(|(ep, data, context_len, p)| {
                if context_len < 2 {
                    return Err(DiclError::invalid(format!(
                        "episode {ep}: context of {context_len} rows is too short for scaler_fit = \"context\""
                    )));
                }
                scaled(&ScalerPipeline::fit(&data.slice(s![..context_len, ..]).to_owned())?, p)
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let horizons = cfg.horizons.clone().unwrap_or_else(|| {
        let max_h = pairs.iter().map(|p| p.truth.nrows()).max().unwrap_or(0);
        (1..=max_h).collect()
    });
    let scaler = ScalerPipeline::identity(d);
    let report = multistep_mse(&pairs, &scaler, &horizons)?;
    report.write_csv(File::create(args.out.join("mse.csv"))?)?;

    if let Some(path) = &cfg.distributions {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DiclError::schema(format!("distributions {}: {e}", path.display())))?;
        let records: Vec<DistributionRecord> = serde_json::from_str(&text)
            .map_err(|e| DiclError::schema(format!("distributions {}: {e}", path.display())))?;
        let mut dists = Vec::new();
        let mut truths = Vec::new();
        for r in records.into_iter().filter(|r| cfg.calibration_all_horizons || r.h == 1) {
            for c in r.channels {
                if let Some(t) = c.truth {
                    dists.push(c.distribution);
                    truths.push(t);
                }
            }
        }
        if truths.is_empty() {
            return Err(DiclError::schema(
                "distributions carry no realised values to calibrate against",
            ));
        }
        let calib = reliability_diagram(&dists, &truths, &cfg.grid)?;
        calib.write_csv(File::create(args.out.join("reliability.csv"))?)?;
        write_json(
            &args.out.join("ks.json"),
            &json!({ "ks": calib.ks, "n": truths.len(), "within_3_sigma": calib.within_band(3.0) }),
        )?;
    }
    Ok(())
}
