//! In-context next-value forecasting over tokenized series.
//!
//! A [`ForecastBackend`] sees only bin ids (see [`crate::tokenizer`]) and
//! returns, for each requested position `i`, a probability vector over the
//! next value's bin conditioned on bins `0..=i`. [`icl_forecast`] wraps that
//! into [`NextValueDistribution`]s carrying the series rescale, so statistics
//! come back in source units.

mod gaussian;
mod http;
mod markov;
mod oracle;

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DiclError, Result};
use crate::tokenizer::{encode_bins, fit_rescale, NumericEncoding, SeriesRescale};

pub use gaussian::GaussianContext;
pub use http::{HttpForecastRequest, HttpForecastResponse, LlmHttp, RetryPolicy, ICL_FORECAST_PATH};
pub use markov::MarkovBin;
pub use oracle::LookupOracle;

/// Which positions of the series to return distributions for.
///
/// Serialized as `"all"`, `"last"` or a list of indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PositionsRepr", into = "PositionsRepr")]
pub enum Positions {
    All,
    Last,
    At(Vec<usize>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PositionsRepr {
    Named(String),
    At(Vec<usize>),
}

impl TryFrom<PositionsRepr> for Positions {
    type Error = String;

    fn try_from(r: PositionsRepr) -> std::result::Result<Self, String> {
        match r {
            PositionsRepr::Named(s) if s == "all" => Ok(Positions::All),
            PositionsRepr::Named(s) if s == "last" => Ok(Positions::Last),
            PositionsRepr::Named(s) => Err(format!("unknown positions {s:?}")),
            PositionsRepr::At(v) => Ok(Positions::At(v)),
        }
    }
}

impl From<Positions> for PositionsRepr {
    fn from(p: Positions) -> Self {
        match p {
            Positions::All => PositionsRepr::Named("all".into()),
            Positions::Last => PositionsRepr::Named("last".into()),
            Positions::At(v) => PositionsRepr::At(v),
        }
    }
}

impl Positions {
    /// Concrete, validated position list for a series of `len` values.
    pub fn resolve(&self, len: usize) -> Result<Vec<usize>> {
        if len == 0 {
            return Err(DiclError::invalid("empty series"));
        }
        match self {
            Positions::All => Ok((0..len).collect()),
            Positions::Last => Ok(vec![len - 1]),
            Positions::At(ps) => {
                if let Some(bad) = ps.iter().find(|&&p| p >= len) {
                    return Err(DiclError::invalid(format!(
                        "position {bad} out of range for series of length {len}"
                    )));
                }
                Ok(ps.clone())
            }
        }
    }
}

/// A source of next-bin probabilities.
///
/// Implementations must be causal: the output for position `i` may depend
/// only on `bins[..=i]`.
pub trait ForecastBackend: Send + Sync {
    fn forecast_bins(&self, bins: &[u16], n_bins: usize, positions: &[usize]) -> Result<Vec<Vec<f64>>>;

    /// Short human-readable description used in logs and run configs.
    fn describe(&self) -> String;

    /// Whether callers should issue per-series calls concurrently.
    fn prefers_concurrency(&self) -> bool {
        false
    }
}

/// Categorical distribution over the next value's bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextValueDistribution {
    probs: Vec<f64>,
    rescale: SeriesRescale,
}

impl NextValueDistribution {
    /// Validates and renormalizes `probs`.
    pub fn new(mut probs: Vec<f64>, rescale: SeriesRescale) -> Result<Self> {
        if probs.len() != rescale.n_bins() {
            return Err(DiclError::DimMismatch {
                expected: rescale.n_bins(),
                got: probs.len(),
            });
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(DiclError::Numerical(
                "probabilities must be finite and nonnegative".into(),
            ));
        }
        let total = crate::stats::kahan_sum(probs.iter().copied());
        if total <= 0.0 {
            return Err(DiclError::Numerical("probabilities sum to zero".into()));
        }
        for p in &mut probs {
            *p /= total;
        }
        Ok(Self { probs, rescale })
    }

    pub fn point_mass(bin: u16, rescale: SeriesRescale) -> Self {
        let mut probs = vec![0.0; rescale.n_bins()];
        probs[bin as usize] = 1.0;
        Self { probs, rescale }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn rescale(&self) -> &SeriesRescale {
        &self.rescale
    }

    pub fn n_bins(&self) -> usize {
        self.probs.len()
    }

    fn last_support(&self) -> usize {
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    fn first_support(&self) -> usize {
        self.probs.iter().position(|&p| p > 0.0).unwrap_or(0)
    }

    /// Cumulative probabilities; exactly 1 from the last supported bin on.
    fn cumulative(&self) -> Vec<f64> {
        let last = self.last_support();
        let mut acc = 0.0;
        self.probs
            .iter()
            .enumerate()
            .map(|(b, p)| {
                acc += p;
                if b >= last {
                    1.0
                } else {
                    acc.min(1.0)
                }
            })
            .collect()
    }

    pub fn bin_center(&self, bin: u16) -> f64 {
        self.rescale.bin_center(bin)
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(b, p)| p * self.rescale.bin_center(b as u16))
            .sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(b, p)| {
                let d = self.rescale.bin_center(b as u16) - m;
                p * d * d
            })
            .sum::<f64>()
            .max(0.0)
    }

    /// Most probable bin; ties resolve to the lowest bin.
    pub fn mode_bin(&self) -> u16 {
        let mut best = 0;
        for (b, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = b;
            }
        }
        best as u16
    }

    pub fn mode(&self) -> f64 {
        self.rescale.bin_center(self.mode_bin())
    }

    /// Generalized inverse CDF, `inf { y : p <= F(y) }`, restricted to the
    /// support so that `quantile(0)` is the smallest supported bin center.
    pub fn quantile_bin(&self, p: f64) -> u16 {
        let p = p.clamp(0.0, 1.0);
        let cum = self.cumulative();
        let first = self.first_support();
        let b = (first..cum.len())
            .find(|&b| cum[b] >= p)
            .unwrap_or_else(|| self.last_support());
        b as u16
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.rescale.bin_center(self.quantile_bin(p))
    }

    /// Right-continuous CDF evaluated at a source-unit value; the atom at
    /// `v` is included.
    pub fn cdf(&self, v: f64) -> f64 {
        let cum = self.cumulative();
        let mut idx = None;
        for b in 0..cum.len() {
            if self.rescale.bin_center(b as u16) <= v {
                idx = Some(b);
            } else {
                break;
            }
        }
        idx.map_or(0.0, |b| cum[b])
    }

    pub fn sample_bin<R: Rng + ?Sized>(&self, rng: &mut R) -> u16 {
        let u: f64 = rng.random();
        let cum = self.cumulative();
        let first = self.first_support();
        (first..cum.len())
            .find(|&b| cum[b] > u && self.probs[b] > 0.0)
            .unwrap_or_else(|| self.last_support()) as u16
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.rescale.bin_center(self.sample_bin(rng))
    }
}

/// Softmax of `logits / temperature`.
pub fn logits_to_distribution(
    logits: &[f64],
    temperature: f64,
    rescale: SeriesRescale,
) -> Result<NextValueDistribution> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(DiclError::invalid("temperature must be > 0"));
    }
    if logits.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(DiclError::Numerical("logits must be finite or -inf".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(DiclError::Numerical("all logits are -inf".into()));
    }
    let probs: Vec<f64> = logits.iter().map(|&l| ((l - max) / temperature).exp()).collect();
    NextValueDistribution::new(probs, rescale)
}

/// Serializable description of a backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForecastBackendSpec {
    MarkovBin {
        #[serde(default)]
        smoothing: f64,
    },
    GaussianContext {
        #[serde(default = "GaussianContext::default_prior_weight")]
        prior_weight: f64,
    },
    LlmHttp {
        endpoint: String,
        #[serde(default = "LlmHttp::default_concurrency")]
        max_concurrency: usize,
        #[serde(default = "LlmHttp::default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default = "LlmHttp::default_temperature")]
        temperature: f64,
        #[serde(default)]
        max_context: Option<usize>,
    },
}

impl Default for ForecastBackendSpec {
    fn default() -> Self {
        ForecastBackendSpec::MarkovBin { smoothing: 0.0 }
    }
}

impl ForecastBackendSpec {
    pub fn build(&self) -> Result<Arc<dyn ForecastBackend>> {
        Ok(match self {
            ForecastBackendSpec::MarkovBin { smoothing } => Arc::new(MarkovBin::new(*smoothing)?),
            ForecastBackendSpec::GaussianContext { prior_weight } => Arc::new(GaussianContext::new(*prior_weight)?),
            ForecastBackendSpec::LlmHttp {
                endpoint,
                max_concurrency,
                timeout_secs,
                temperature,
                max_context,
            } => Arc::new(
                LlmHttp::new(endpoint, *max_concurrency, *timeout_secs, *temperature)?.with_max_context(*max_context),
            ),
        })
    }
}

fn check_series(series: &[f64]) -> Result<()> {
    if series.len() < 2 {
        return Err(DiclError::invalid(format!(
            "forecasting needs at least 2 values, got {}",
            series.len()
        )));
    }
    Ok(())
}

/// Fit the rescale on `series` and forecast the requested positions.
pub fn icl_forecast(
    series: &[f64],
    enc: &NumericEncoding,
    backend: &dyn ForecastBackend,
    positions: &Positions,
) -> Result<Vec<NextValueDistribution>> {
    check_series(series)?;
    let rescale = fit_rescale(series, enc)?;
    icl_forecast_with(series, &rescale, backend, positions)
}

/// Forecast with a caller-supplied rescale (values outside it are clamped).
pub fn icl_forecast_with(
    series: &[f64],
    rescale: &SeriesRescale,
    backend: &dyn ForecastBackend,
    positions: &Positions,
) -> Result<Vec<NextValueDistribution>> {
    let (bins, _) = encode_bins(series, rescale);
    forecast_encoded(&bins, rescale, backend, positions)
}

pub(crate) fn forecast_encoded(
    bins: &[u16],
    rescale: &SeriesRescale,
    backend: &dyn ForecastBackend,
    positions: &Positions,
) -> Result<Vec<NextValueDistribution>> {
    let pos = positions.resolve(bins.len())?;
    let rows = backend.forecast_bins(bins, rescale.n_bins(), &pos)?;
    if rows.len() != pos.len() {
        return Err(DiclError::Backend {
            status: None,
            retryable: false,
            message: format!("backend returned {} rows for {} positions", rows.len(), pos.len()),
        });
    }
    rows.into_iter()
        .map(|p| NextValueDistribution::new(p, *rescale))
        .collect()
}

/// Forecast several series; element `i` equals `icl_forecast(&series[i], ..)`.
pub fn icl_forecast_batch(
    series: &[Vec<f64>],
    enc: &NumericEncoding,
    backend: &dyn ForecastBackend,
    positions: &Positions,
) -> Result<Vec<Vec<NextValueDistribution>>> {
    map_series(series.len(), backend.prefers_concurrency(), |i| {
        icl_forecast(&series[i], enc, backend, positions)
    })
}

/// Run `f(0..n)`, concurrently when `concurrent`; output order is by index.
pub(crate) fn map_series<T, F>(n: usize, concurrent: bool, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    if concurrent && n > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..n)
                .map(|i| {
                    let f = &f;
                    scope.spawn(move || f(i))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("forecast worker panicked"))
                .collect()
        })
    } else if n > 1 {
        (0..n).into_par_iter().map(&f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn id() -> SeriesRescale {
        SeriesRescale::identity(&NumericEncoding::default())
    }

    fn random_dist(seed: u64) -> NextValueDistribution {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probs: Vec<f64> = (0..1000)
            .map(|_| {
                if rng.random::<f64>() < 0.3 {
                    rng.random::<f64>()
                } else {
                    0.0
                }
            })
            .collect();
        NextValueDistribution::new(probs, id()).unwrap()
    }

    #[test]
    fn equal_logits_give_uniform() {
        let d = logits_to_distribution(&vec![0.3; 1000], 1.0, id()).unwrap();
        assert!(d.probs().iter().all(|p| (p - 1e-3).abs() < 1e-15));
    }

    #[test]
    fn dominant_logit() {
        let mut l = vec![0.0; 1000];
        l[42] = 20.0;
        let d = logits_to_distribution(&l, 1.0, id()).unwrap();
        assert!(d.probs()[42] > 0.999);
    }

    #[test]
    fn high_temperature_flattens() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l: Vec<f64> = (0..1000).map(|_| rng.random_range(-5.0..5.0)).collect();
        let d = logits_to_distribution(&l, 1e6, id()).unwrap();
        let max = d.probs().iter().copied().fold(0.0, f64::max);
        let min = d.probs().iter().copied().fold(1.0, f64::min);
        assert!((max / min - 1.0).abs() < 1e-3);
    }

    #[test]
    fn all_neg_inf_logits_rejected() {
        assert!(logits_to_distribution(&vec![f64::NEG_INFINITY; 1000], 1.0, id()).is_err());
    }

    #[test]
    fn point_mass_stats() {
        let d = NextValueDistribution::point_mass(321, id());
        assert!((d.mean() - 3.215).abs() < 1e-12);
        assert_eq!(d.mode(), d.mean());
        assert_eq!(d.variance(), 0.0);
        assert_eq!(d.quantile(0.0), d.mean());
        assert_eq!(d.quantile(1.0), d.mean());
    }

    #[test]
    fn uniform_median() {
        let d = NextValueDistribution::new(vec![1.0; 1000], id()).unwrap();
        // true median of the bin grid is 5.0; one bin tolerance
        assert!((d.quantile(0.5) - 5.0).abs() <= 0.01);
    }

    #[test]
    fn cdf_of_quantile_dominates_p() {
        for seed in 0..20 {
            let d = random_dist(seed);
            for i in 0..=100 {
                let p = i as f64 / 100.0;
                assert!(d.cdf(d.quantile(p)) >= p, "seed {seed} p {p}");
            }
        }
    }

    #[test]
    fn sampling_is_reproducible_and_in_support() {
        let d = random_dist(9);
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let x = d.sample_bin(&mut a);
            assert_eq!(x, d.sample_bin(&mut b));
            assert!(d.probs()[x as usize] > 0.0);
        }
    }

    #[test]
    fn normalization_within_tolerance() {
        let d = random_dist(3);
        let s: f64 = d.probs().iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn positions_resolution() {
        assert_eq!(Positions::Last.resolve(4).unwrap(), vec![3]);
        assert_eq!(Positions::All.resolve(2).unwrap(), vec![0, 1]);
        assert!(Positions::At(vec![5]).resolve(3).is_err());
    }

    #[test]
    fn short_series_rejected() {
        let b = MarkovBin::new(0.0).unwrap();
        assert!(icl_forecast(&[1.0], &NumericEncoding::default(), &b, &Positions::Last).is_err());
    }

    #[test]
    fn backend_spec_json_roundtrip() {
        let spec: ForecastBackendSpec = serde_json::from_str(r#"{"kind":"llm_http","endpoint":"http://x:1"}"#).unwrap();
        match &spec {
            ForecastBackendSpec::LlmHttp { max_concurrency, .. } => assert_eq!(*max_concurrency, 4),
            _ => panic!(),
        }
        let back: ForecastBackendSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }
}
