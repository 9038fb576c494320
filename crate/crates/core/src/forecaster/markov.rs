use std::collections::HashMap;

use super::ForecastBackend;
use crate::error::{DiclError, Result};

/// Empirical next-bin frequencies over the context.
///
/// For position `i` the distribution is built from every earlier transition
/// `bins[j] -> bins[j + 1]` (`j < i`) whose source bin equals `bins[i]`, with
/// Laplace smoothing `smoothing`. A bin never seen before falls back to a
/// single pseudo-count on itself (persistence).
#[derive(Debug, Clone)]
pub struct MarkovBin {
    smoothing: f64,
}

impl MarkovBin {
    pub fn new(smoothing: f64) -> Result<Self> {
        if !smoothing.is_finite() || smoothing < 0.0 {
            return Err(DiclError::invalid("markov_bin smoothing must be >= 0"));
        }
        Ok(Self { smoothing })
    }

    fn row(&self, counts: Option<&Vec<(u16, u32)>>, current: u16, n_bins: usize) -> Vec<f64> {
        let mut probs = vec![self.smoothing; n_bins];
        match counts {
            Some(c) if !c.is_empty() => {
                for &(b, n) in c {
                    probs[b as usize] += n as f64;
                }
            }
            _ => probs[current as usize] += 1.0,
        }
        probs
    }
}

impl ForecastBackend for MarkovBin {
    fn forecast_bins(&self, bins: &[u16], n_bins: usize, positions: &[usize]) -> Result<Vec<Vec<f64>>> {
        if let Some(&b) = bins.iter().find(|&&b| b as usize >= n_bins) {
            return Err(DiclError::invalid(format!("bin {b} out of range")));
        }
        // single last position: direct scan
        if positions.len() == 1 && positions[0] + 1 == bins.len() {
            let i = positions[0];
            let mut counts: Vec<(u16, u32)> = Vec::new();
            for j in 0..i {
                if bins[j] == bins[i] {
                    let next = bins[j + 1];
                    match counts.iter_mut().find(|(b, _)| *b == next) {
                        Some(e) => e.1 += 1,
                        None => counts.push((next, 1)),
                    }
                }
            }
            return Ok(vec![self.row(Some(&counts), bins[i], n_bins)]);
        }
        let mut order: Vec<(usize, usize)> = positions.iter().copied().enumerate().collect();
        order.sort_by_key(|&(_, p)| p);
        let mut out: Vec<Vec<f64>> = vec![Vec::new(); positions.len()];
        let mut table: HashMap<u16, Vec<(u16, u32)>> = HashMap::new();
        let mut added = 0; // transitions j -> j+1 for j < added are in the table
        for (slot, pos) in order {
            while added < pos {
                let entry = table.entry(bins[added]).or_default();
                let next = bins[added + 1];
                match entry.iter_mut().find(|(b, _)| *b == next) {
                    Some(e) => e.1 += 1,
                    None => entry.push((next, 1)),
                }
                added += 1;
            }
            out[slot] = self.row(table.get(&bins[pos]), bins[pos], n_bins);
        }
        Ok(out)
    }

    fn describe(&self) -> String {
        format!("markov_bin(smoothing={})", self.smoothing)
    }
}
