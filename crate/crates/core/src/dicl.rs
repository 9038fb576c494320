//! vICL and DICL predictors: one-step forecasts and autoregressive rollouts
//! of multivariate trajectories through per-channel in-context forecasts.
//!
//! `vicl` forecasts every raw feature on its own. `dicl_s` and `dicl_sa`
//! first rotate the features (states, or states and actions) with a PCA map
//! fitted on the context, forecast each component series, and map the
//! predictions back.

use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::disentangle::{default_components, FeatureMap, PcaMap};
use crate::error::{DiclError, Result};
use crate::forecaster::{
    forecast_encoded, map_series, ForecastBackend, ForecastBackendSpec, NextValueDistribution, Positions,
};
use crate::stats::mix_seed;
use crate::tokenizer::{encode_bins, fit_rescale, NumericEncoding, SeriesRescale};
use crate::trajdata::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Vicl,
    DiclS,
    DiclSa,
}

/// How a channel's next value is picked from its distribution when rolling
/// forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Mean,
    #[default]
    Mode,
    Sample,
}

/// Source of the action block during `dicl_sa` rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    /// Actions are forecast with the states.
    #[default]
    Forecast,
    /// Real future actions are substituted after every step.
    Oracle,
}

/// Serializable method description; [`DiclMethod::from_config`] builds it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiclConfig {
    pub kind: MethodKind,
    #[serde(default)]
    pub include_reward: bool,
    /// Defaults to half the feature count, rounded up.
    #[serde(default)]
    pub n_components: Option<usize>,
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub backend: ForecastBackendSpec,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub action_mode: ActionMode,
    #[serde(default)]
    pub encoding: NumericEncoding,
    #[serde(default = "default_quantiles")]
    pub quantiles: (f64, f64),
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

fn default_quantiles() -> (f64, f64) {
    (0.05, 0.95)
}

fn default_mc_samples() -> usize {
    512
}

impl DiclConfig {
    pub fn new(kind: MethodKind) -> Self {
        Self {
            kind,
            include_reward: false,
            n_components: None,
            standardize: true,
            backend: ForecastBackendSpec::default(),
            sampling: Sampling::default(),
            action_mode: ActionMode::default(),
            encoding: NumericEncoding::default(),
            quantiles: default_quantiles(),
            mc_samples: default_mc_samples(),
            seed: 0,
        }
    }
}

/// Column layout of the feature vectors a method predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub state_dim: usize,
    /// Zero unless actions are part of the modelled features.
    pub action_dim: usize,
    pub reward: bool,
}

impl FeatureLayout {
    pub fn width(&self) -> usize {
        self.state_dim + self.action_dim + self.reward as usize
    }

    pub fn reward_index(&self) -> Option<usize> {
        self.reward.then_some(self.state_dim + self.action_dim)
    }

    /// Column names: `s0.., a0.., r`.
    pub fn names(&self) -> Vec<String> {
        let mut out: Vec<String> = (0..self.state_dim).map(|i| format!("s{i}")).collect();
        out.extend((0..self.action_dim).map(|i| format!("a{i}")));
        if self.reward {
            out.push("r".into());
        }
        out
    }
}

/// One predicted step, in source units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    /// The value fed back into the context (chosen by the sampling rule).
    pub point: Vec<f64>,
    pub mean: Vec<f64>,
    pub mode: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Per-channel distributions: raw features for `vicl`, PCA components
    /// otherwise.
    #[serde(skip)]
    pub dists: Vec<NextValueDistribution>,
    pub layout: FeatureLayout,
}

impl ForecastResult {
    pub fn state(&self) -> &[f64] {
        &self.point[..self.layout.state_dim]
    }

    pub fn reward(&self) -> Option<f64> {
        self.layout.reward_index().map(|i| self.point[i])
    }
}

/// A configured vICL / DICL predictor.
#[derive(Clone)]
pub struct DiclMethod {
    config: DiclConfig,
    backend: Arc<dyn ForecastBackend>,
}

impl std::fmt::Debug for DiclMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiclMethod")
            .field("config", &self.config)
            .field("backend", &self.backend.describe())
            .finish()
    }
}

/// Per-channel series plus the map back to features.
struct Channels {
    map: Option<PcaMap>,
    series: Vec<Vec<f64>>,
    layout: FeatureLayout,
}

impl Channels {
    fn to_features(&self, z: &[f64]) -> Result<Array1<f64>> {
        match &self.map {
            Some(m) => m.inverse_row(Array1::from(z.to_vec()).view()),
            None => Ok(Array1::from(z.to_vec())),
        }
    }

    fn to_channels(&self, x: &Array1<f64>) -> Result<Vec<f64>> {
        match &self.map {
            Some(m) => Ok(m.transform_row(x.view())?.to_vec()),
            None => Ok(x.to_vec()),
        }
    }
}

impl DiclMethod {
    pub fn from_config(config: DiclConfig) -> Result<Self> {
        let backend = config.backend.build()?;
        Self::with_backend(config, backend)
    }

    /// Use an already constructed backend; `config.backend` is ignored.
    pub fn with_backend(config: DiclConfig, backend: Arc<dyn ForecastBackend>) -> Result<Self> {
        config.encoding.validate()?;
        let (lo, hi) = config.quantiles;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(DiclError::invalid("quantiles must satisfy 0 <= lower <= upper <= 1"));
        }
        if config.n_components == Some(0) {
            return Err(DiclError::invalid("n_components must be >= 1"));
        }
        if config.mc_samples == 0 {
            return Err(DiclError::invalid("mc_samples must be >= 1"));
        }
        Ok(Self { config, backend })
    }

    pub fn config(&self) -> &DiclConfig {
        &self.config
    }

    pub fn backend(&self) -> &Arc<dyn ForecastBackend> {
        &self.backend
    }

    pub fn layout(&self, traj: &Trajectory) -> FeatureLayout {
        FeatureLayout {
            state_dim: traj.state_dim(),
            action_dim: if self.config.kind == MethodKind::DiclSa {
                traj.action_dim()
            } else {
                0
            },
            reward: self.config.include_reward,
        }
    }

    fn channels(&self, context: &Trajectory) -> Result<Channels> {
        if context.len() < 2 {
            return Err(DiclError::invalid(format!(
                "context needs at least 2 steps, got {}",
                context.len()
            )));
        }
        let layout = self.layout(context);
        let x = context.features(layout.action_dim > 0, layout.reward)?;
        let (map, z) = match self.config.kind {
            MethodKind::Vicl => (None, x),
            MethodKind::DiclS | MethodKind::DiclSa => {
                let c = self
                    .config
                    .n_components
                    .unwrap_or_else(|| default_components(layout.width()));
                if c > layout.width() {
                    return Err(DiclError::invalid(format!(
                        "n_components {c} exceeds feature count {}",
                        layout.width()
                    )));
                }
                let map = PcaMap::fit(x.view(), c, self.config.standardize)?;
                let z = map.transform(x.view())?;
                (Some(map), z)
            }
        };
        let series = z.axis_iter(Axis(1)).map(|col| col.to_vec()).collect();
        Ok(Channels { map, series, layout })
    }

    fn forecast_last(&self, bins: &[Vec<u16>], rescales: &[SeriesRescale]) -> Result<Vec<NextValueDistribution>> {
        let mut out = map_series(bins.len(), self.backend.prefers_concurrency(), |j| {
            forecast_encoded(&bins[j], &rescales[j], self.backend.as_ref(), &Positions::Last)
        })?;
        Ok(out.iter_mut().map(|v| v.pop().expect("one position")).collect())
    }

    fn pick(&self, d: &NextValueDistribution, rng: &mut ChaCha8Rng) -> f64 {
        match self.config.sampling {
            Sampling::Mean => d.mean(),
            Sampling::Mode => d.mode(),
            Sampling::Sample => d.sample(rng),
        }
    }

    /// Summaries in feature space for one step's channel distributions.
    fn summarize(
        &self,
        ch: &Channels,
        dists: Vec<NextValueDistribution>,
        point_z: &[f64],
        mc_seed: u64,
    ) -> Result<ForecastResult> {
        let (ql, qu) = self.config.quantiles;
        let means: Vec<f64> = dists.iter().map(|d| d.mean()).collect();
        let modes: Vec<f64> = dists.iter().map(|d| d.mode()).collect();
        let (lower, upper) = match &ch.map {
            None => (
                dists.iter().map(|d| d.quantile(ql)).collect(),
                dists.iter().map(|d| d.quantile(qu)).collect(),
            ),
            Some(map) => {
                let mut rng = ChaCha8Rng::seed_from_u64(mc_seed);
                let n = self.config.mc_samples;
                let z = Array2::from_shape_fn((n, dists.len()), |(_, j)| dists[j].sample(&mut rng));
                let x = map.inverse(z.view())?;
                let mut lower = Vec::with_capacity(x.ncols());
                let mut upper = Vec::with_capacity(x.ncols());
                for col in x.axis_iter(Axis(1)) {
                    let mut v = col.to_vec();
                    v.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
                    lower.push(empirical_quantile(&v, ql));
                    upper.push(empirical_quantile(&v, qu));
                }
                (lower, upper)
            }
        };
        Ok(ForecastResult {
            point: ch.to_features(point_z)?.to_vec(),
            mean: ch.to_features(&means)?.to_vec(),
            mode: ch.to_features(&modes)?.to_vec(),
            lower,
            upper,
            dists,
            layout: ch.layout,
        })
    }

    /// Forecast the step after the end of `context`.
    pub fn predict_next(&self, context: &Trajectory) -> Result<ForecastResult> {
        Ok(self.rollout(context, 1, None)?.remove(0))
    }

    /// Autoregressive `horizon`-step forecast.
    ///
    /// In [`ActionMode::Oracle`] (`dicl_sa` only) `future_actions` must hold
    /// at least `horizon` rows: row `j` replaces the action block of the
    /// `j`-th predicted step before it is appended to the context.
    pub fn rollout(
        &self,
        context: &Trajectory,
        horizon: usize,
        future_actions: Option<ArrayView2<f64>>,
    ) -> Result<Vec<ForecastResult>> {
        if horizon == 0 {
            return Err(DiclError::invalid("horizon must be >= 1"));
        }
        let mut ch = self.channels(context)?;
        let oracle = self.config.action_mode == ActionMode::Oracle && ch.layout.action_dim > 0;
        if oracle {
            let fa = future_actions.ok_or_else(|| DiclError::invalid("oracle action mode needs future actions"))?;
            if fa.nrows() < horizon || fa.ncols() != ch.layout.action_dim {
                return Err(DiclError::DimMismatch {
                    expected: horizon * ch.layout.action_dim,
                    got: fa.nrows() * fa.ncols(),
                });
            }
        }
        let enc = &self.config.encoding;
        let mut rescales = ch
            .series
            .iter()
            .map(|s| fit_rescale(s, enc))
            .collect::<Result<Vec<_>>>()?;
        let mut bins: Vec<Vec<u16>> = ch
            .series
            .iter()
            .zip(&rescales)
            .map(|(s, r)| encode_bins(s, r).0)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut out = Vec::with_capacity(horizon);
        for step in 0..horizon {
            let dists = self.forecast_last(&bins, &rescales)?;
            let mut z: Vec<f64> = dists.iter().map(|d| self.pick(d, &mut rng)).collect();
            let mut result = self.summarize(&ch, dists, &z, mix_seed(self.config.seed, step as u64 + 1))?;
            if oracle {
                let a0 = ch.layout.state_dim;
                let fa = future_actions.expect("checked above");
                let mut x = Array1::from(result.point.clone());
                x.slice_mut(s![a0..a0 + ch.layout.action_dim]).assign(&fa.row(step));
                z = ch.to_channels(&x)?;
                result.point = x.to_vec();
            }
            for (j, &v) in z.iter().enumerate() {
                ch.series[j].push(v);
                if rescales[j].contains(v) {
                    bins[j].push(rescales[j].bin_of(v).0);
                } else {
                    rescales[j] = fit_rescale(&ch.series[j], enc)?;
                    bins[j] = encode_bins(&ch.series[j], &rescales[j]).0;
                }
            }
            out.push(result);
        }
        Ok(out)
    }

    /// Channel-space values of every row of `full` under the channel map a
    /// rollout from `full[..context_len]` fits (identity for `vicl`).
    pub fn channel_values(&self, full: &Trajectory, context_len: usize) -> Result<Array2<f64>> {
        let ch = self.channels(&full.slice(0..context_len)?)?;
        let x = full.features(ch.layout.action_dim > 0, ch.layout.reward)?;
        match &ch.map {
            Some(m) => m.transform(x.view()),
            None => Ok(x),
        }
    }

    /// Bin sequences of `full`'s channels under the encoding a rollout from
    /// `full[..context_len]` uses, with each channel's bin width. Feeding these
    /// to a [`crate::forecaster::LookupOracle`] yields a forecaster whose only
    /// error is quantization.
    pub fn reference_bins(&self, full: &Trajectory, context_len: usize) -> Result<(Vec<Vec<u16>>, Vec<f64>)> {
        let ch = self.channels(&full.slice(0..context_len)?)?;
        let z = self.channel_values(full, context_len)?;
        let mut bins = Vec::with_capacity(ch.series.len());
        let mut widths = Vec::with_capacity(ch.series.len());
        for (j, s) in ch.series.iter().enumerate() {
            let r = fit_rescale(s, &self.config.encoding)?;
            bins.push(encode_bins(&z.column(j).to_vec(), &r).0);
            widths.push(r.bin_width());
        }
        Ok((bins, widths))
    }

    /// Teacher-forced one-step predictions: row `i` is the point forecast of
    /// the features at step `i + 1` given the context up to step `i`.
    pub fn predict_all(&self, context: &Trajectory) -> Result<Array2<f64>> {
        let ch = self.channels(context)?;
        let enc = &self.config.encoding;
        let per_channel = map_series(ch.series.len(), self.backend.prefers_concurrency(), |j| {
            let r = fit_rescale(&ch.series[j], enc)?;
            let bins = encode_bins(&ch.series[j], &r).0;
            forecast_encoded(&bins, &r, self.backend.as_ref(), &Positions::All)
        })?;
        let n = context.len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut out = Array2::zeros((n, ch.layout.width()));
        for i in 0..n {
            let z: Vec<f64> = per_channel.iter().map(|d| self.pick(&d[i], &mut rng)).collect();
            out.row_mut(i).assign(&ch.to_features(&z)?);
        }
        Ok(out)
    }
}

/// Linear-interpolated quantile of sorted samples.
fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}
