use super::ForecastBackend;
use crate::error::{DiclError, Result};

/// Diagnostic backend that knows the true continuation of its series.
///
/// Holds full bin sequences; a request is answered from the first sequence
/// whose prefix equals the request, with a point mass on the true next bin.
#[derive(Debug, Clone, Default)]
pub struct LookupOracle {
    truths: Vec<Vec<u16>>,
}

impl LookupOracle {
    pub fn new(truths: Vec<Vec<u16>>) -> Self {
        Self { truths }
    }
}

impl ForecastBackend for LookupOracle {
    fn forecast_bins(&self, bins: &[u16], n_bins: usize, positions: &[usize]) -> Result<Vec<Vec<f64>>> {
        let truth = self
            .truths
            .iter()
            .find(|t| t.len() > bins.len() && t[..bins.len()] == *bins)
            .ok_or_else(|| DiclError::Backend {
                status: None,
                retryable: false,
                message: "oracle has no series matching this context".into(),
            })?;
        Ok(positions
            .iter()
            .map(|&i| {
                let mut row = vec![0.0; n_bins];
                row[truth[i + 1] as usize] = 1.0;
                row
            })
            .collect())
    }

    fn describe(&self) -> String {
        format!("lookup_oracle({} series)", self.truths.len())
    }
}
