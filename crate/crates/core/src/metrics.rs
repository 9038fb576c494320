//! Forecast quality metrics: multi-step MSE in scaled space, quantile
//! calibration, the KS statistic, state coverage and one-at-a-time
//! sensitivity of a dynamics function.

use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DiclError, Result};
use crate::forecaster::NextValueDistribution;
use crate::stats::KahanSum;
use crate::trajdata::ScalerPipeline;

/// Default quantile grid `0.05, 0.10, ..., 0.95`.
pub fn default_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

/// Predicted and true values of one rollout, `horizon × d`, in source units.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutPair {
    pub prediction: Array2<f64>,
    pub truth: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiStepMseReport {
    /// 1-based horizons, one per column of `mse`.
    pub horizons: Vec<usize>,
    /// `d × horizons.len()`.
    pub mse: Array2<f64>,
    /// Rollouts contributing to each horizon.
    pub counts: Vec<usize>,
}

impl MultiStepMseReport {
    /// Mean over dimensions for each horizon.
    pub fn per_horizon(&self) -> Vec<f64> {
        self.mse.mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_default()
    }

    /// Mean over all dimensions and horizons.
    pub fn average(&self) -> f64 {
        self.mse.mean().unwrap_or(f64::NAN)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["horizon", "dim", "mse", "count"]).map_err(csv_err)?;
        for (c, h) in self.horizons.iter().enumerate() {
            for d in 0..self.mse.nrows() {
                out.write_record([
                    h.to_string(),
                    d.to_string(),
                    self.mse[[d, c]].to_string(),
                    self.counts[c].to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> DiclError {
    DiclError::Io(std::io::Error::other(e))
}

/// MSE per dimension and horizon after mapping both sides through `scaler`.
///
/// Rollouts shorter than a requested horizon do not contribute to it.
pub fn multistep_mse(pairs: &[RolloutPair], scaler: &ScalerPipeline, horizons: &[usize]) -> Result<MultiStepMseReport> {
    if horizons.is_empty() || horizons.contains(&0) {
        return Err(DiclError::invalid("horizons must be non-empty and 1-based"));
    }
    let d = scaler.dim();
    let mut acc = vec![vec![KahanSum::new(); horizons.len()]; d];
    let mut counts = vec![0usize; horizons.len()];
    for p in pairs {
        if p.prediction.dim() != p.truth.dim() {
            return Err(DiclError::DimMismatch {
                expected: p.truth.len(),
                got: p.prediction.len(),
            });
        }
        if p.truth.ncols() != d {
            return Err(DiclError::DimMismatch {
                expected: d,
                got: p.truth.ncols(),
            });
        }
        let zp = scaler.transform(&p.prediction)?;
        let zt = scaler.transform(&p.truth)?;
        for (c, &h) in horizons.iter().enumerate() {
            if h > zt.nrows() {
                continue;
            }
            counts[c] += 1;
            for (j, row) in acc.iter_mut().enumerate() {
                let e = zp[[h - 1, j]] - zt[[h - 1, j]];
                row[c].add(e * e);
            }
        }
    }
    if counts.contains(&0) {
        return Err(DiclError::invalid("some horizon has no rollout long enough"));
    }
    let mse = Array2::from_shape_fn((d, horizons.len()), |(j, c)| acc[j][c].value() / counts[c] as f64);
    Ok(MultiStepMseReport {
        horizons: horizons.to_vec(),
        mse,
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub grid: Vec<f64>,
    /// Fraction of truths at or below the predicted `p`-quantile.
    pub frequencies: Vec<f64>,
    pub ks: f64,
    pub n: usize,
}

impl CalibrationReport {
    /// Half-width of the `z`-sigma binomial band around the diagonal at `p`.
    pub fn band(&self, p: f64, z: f64) -> f64 {
        z * (p * (1.0 - p) / self.n as f64).sqrt()
    }

    /// True when every frequency lies within the `z`-sigma band.
    pub fn within_band(&self, z: f64) -> bool {
        self.grid
            .iter()
            .zip(&self.frequencies)
            .all(|(&p, &f)| (f - p).abs() <= self.band(p, z))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["p", "freq"]).map_err(csv_err)?;
        for (p, f) in self.grid.iter().zip(&self.frequencies) {
            out.write_record([p.to_string(), f.to_string()]).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Right-continuous CDF of each distribution at its truth.
pub fn quantiles_of_truth(dists: &[NextValueDistribution], truths: &[f64]) -> Result<Vec<f64>> {
    if dists.len() != truths.len() {
        return Err(DiclError::DimMismatch {
            expected: dists.len(),
            got: truths.len(),
        });
    }
    Ok(dists.iter().zip(truths).map(|(d, &y)| d.cdf(y)).collect())
}

/// Empirical coverage of predicted quantiles plus the KS statistic of the
/// quantiles of truth.
pub fn reliability_diagram(dists: &[NextValueDistribution], truths: &[f64], grid: &[f64]) -> Result<CalibrationReport> {
    if dists.is_empty() {
        return Err(DiclError::invalid("reliability needs at least one forecast"));
    }
    if grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(DiclError::invalid("grid values must lie in [0, 1]"));
    }
    let q = quantiles_of_truth(dists, truths)?;
    let n = dists.len();
    let frequencies = grid
        .iter()
        .map(|&p| {
            let hits = dists
                .par_iter()
                .zip(truths.par_iter())
                .filter(|(d, &y)| y <= d.quantile(p))
                .count();
            hits as f64 / n as f64
        })
        .collect();
    Ok(CalibrationReport {
        grid: grid.to_vec(),
        frequencies,
        ks: ks_statistic(&q)?,
        n,
    })
}

/// Coverage frequencies computed from precomputed quantiles of truth:
/// `freq(p) = mean(q <= p)`.
pub fn reliability_from_quantiles(q: &[f64], grid: &[f64]) -> Result<CalibrationReport> {
    let ks = ks_statistic(q)?;
    let frequencies = grid
        .iter()
        .map(|&p| q.iter().filter(|&&v| v <= p).count() as f64 / q.len() as f64)
        .collect();
    Ok(CalibrationReport {
        grid: grid.to_vec(),
        frequencies,
        ks,
        n: q.len(),
    })
}

/// `max_i |ECDF(q_i) - q_i|` with `ECDF(x) = #{q_j <= x} / N`.
pub fn ks_statistic(q: &[f64]) -> Result<f64> {
    if q.is_empty() {
        return Err(DiclError::invalid("KS statistic of an empty sample"));
    }
    if q.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(DiclError::invalid("quantiles must lie in [0, 1]"));
    }
    let mut s = q.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = s.len() as f64;
    let mut ks = 0.0f64;
    let mut i = 0;
    while i < s.len() {
        let mut j = i;
        while j + 1 < s.len() && s[j + 1] == s[i] {
            j += 1;
        }
        ks = ks.max(((j + 1) as f64 / n - s[i]).abs());
        i = j + 1;
    }
    Ok(ks)
}

/// Largest Euclidean distance between any two rows.
pub fn state_coverage(states: ArrayView2<f64>) -> Result<f64> {
    let n = states.nrows();
    if n < 2 {
        return Err(DiclError::invalid("coverage needs at least 2 states"));
    }
    let best = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = states.row(i);
            let mut m = 0.0f64;
            for j in i + 1..n {
                let d2: f64 = a.iter().zip(states.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
                m = m.max(d2);
            }
            m
        })
        .reduce(|| 0.0, f64::max);
    Ok(best.sqrt())
}

/// One-at-a-time sensitivity of a deterministic dynamics function.
///
/// Entry `(k, i)` is `|f(x + eps_i)_k - f(x)_k|` where input `i` (states
/// first, then actions) is moved by `rel * scale[i]`.
pub fn sensitivity_matrix<F>(f: F, state: &[f64], action: &[f64], scale: &[f64], rel: f64) -> Result<Array2<f64>>
where
    F: Fn(&[f64], &[f64]) -> Vec<f64>,
{
    let ds = state.len();
    let da = action.len();
    if scale.len() != ds + da {
        return Err(DiclError::DimMismatch {
            expected: ds + da,
            got: scale.len(),
        });
    }
    let base = f(state, action);
    if f(state, action) != base {
        return Err(DiclError::invalid("sensitivity requires deterministic dynamics"));
    }
    let mut out = Array2::zeros((base.len(), ds + da));
    for i in 0..ds + da {
        let mut s = state.to_vec();
        let mut a = action.to_vec();
        if i < ds {
            s[i] += rel * scale[i];
        } else {
            a[i - ds] += rel * scale[i];
        }
        let y = f(&s, &a);
        for k in 0..base.len() {
            out[[k, i]] = (y[k] - base[k]).abs();
        }
    }
    Ok(out)
}

/// Population standard deviation of each column, the default OAT scale.
pub fn column_std(data: ArrayView2<f64>) -> Vec<f64> {
    data.std_axis(Axis(0), 0.0).to_vec()
}
