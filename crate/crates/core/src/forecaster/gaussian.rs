use super::ForecastBackend;
use crate::error::{DiclError, Result};
use crate::stats::normal_cdf;

/// Gaussian fitted to the in-context moments, discretized onto the bins.
///
/// The variance is shrunk towards the variance of a uniform distribution
/// over the encoding window with weight `prior_weight` (in pseudo-samples),
/// so very short contexts give wide forecasts.
#[derive(Debug, Clone)]
pub struct GaussianContext {
    prior_weight: f64,
}

impl GaussianContext {
    pub fn default_prior_weight() -> f64 {
        2.0
    }

    pub fn new(prior_weight: f64) -> Result<Self> {
        if !prior_weight.is_finite() || prior_weight < 0.0 {
            return Err(DiclError::invalid("gaussian_context prior_weight must be >= 0"));
        }
        Ok(Self { prior_weight })
    }

    fn row(&self, mean: f64, var: f64, n_bins: usize, width: f64) -> Vec<f64> {
        let sd = var.sqrt().max(width / 2.0);
        let mut probs = Vec::with_capacity(n_bins);
        let mut prev = 0.0;
        for b in 0..n_bins {
            let upper = if b + 1 == n_bins {
                1.0
            } else {
                normal_cdf(((b + 1) as f64 * width - mean) / sd)
            };
            probs.push((upper - prev).max(0.0));
            prev = upper;
        }
        if probs.iter().all(|&p| p == 0.0) {
            let b = ((mean / width).floor().max(0.0) as usize).min(n_bins - 1);
            probs[b] = 1.0;
        }
        probs
    }
}

impl ForecastBackend for GaussianContext {
    fn forecast_bins(&self, bins: &[u16], n_bins: usize, positions: &[usize]) -> Result<Vec<Vec<f64>>> {
        // bins cover [0, 10) in rescaled units
        let width = 10.0 / n_bins as f64;
        let prior_var = 100.0 / 12.0;
        let centers: Vec<f64> = bins.iter().map(|&b| (b as f64 + 0.5) * width).collect();
        // prefix sums for O(1) moments per position
        let mut s1 = vec![0.0; centers.len() + 1];
        let mut s2 = vec![0.0; centers.len() + 1];
        for (i, c) in centers.iter().enumerate() {
            s1[i + 1] = s1[i] + c;
            s2[i + 1] = s2[i] + c * c;
        }
        Ok(positions
            .iter()
            .map(|&i| {
                let n = (i + 1) as f64;
                let mean = s1[i + 1] / n;
                let ss = (s2[i + 1] - n * mean * mean).max(0.0);
                let var = (ss + self.prior_weight * prior_var) / (n - 1.0 + self.prior_weight).max(1.0);
                self.row(mean, var, n_bins, width)
            })
            .collect())
    }

    fn describe(&self) -> String {
        format!("gaussian_context(prior_weight={})", self.prior_weight)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecaster::{icl_forecast, Positions};
    use crate::tokenizer::NumericEncoding;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn mean_tracks_sample_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<f64> = (0..400).map(|_| StandardNormal.sample(&mut rng)).collect();
        let g = GaussianContext::new(2.0).unwrap();
        let d = icl_forecast(&xs, &NumericEncoding::default(), &g, &Positions::Last).unwrap();
        let m = crate::stats::mean(&xs);
        assert!((d[0].mean() - m).abs() < 3.0 / (xs.len() as f64).sqrt());
    }

    #[test]
    fn constant_series_mode_on_constant() {
        let xs = vec![2.5; 50];
        let g = GaussianContext::new(2.0).unwrap();
        let enc = NumericEncoding::default();
        let d = icl_forecast(&xs, &enc, &g, &Positions::Last).unwrap();
        let r = crate::tokenizer::fit_rescale(&xs, &enc).unwrap();
        assert_eq!(d[0].mode_bin(), r.bin_of(2.5).0);
    }

    #[test]
    fn rows_are_normalized() {
        let g = GaussianContext::new(1.0).unwrap();
        let rows = g.forecast_bins(&[10, 500, 990, 3], 1000, &[0, 1, 2, 3]).unwrap();
        for r in rows {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
