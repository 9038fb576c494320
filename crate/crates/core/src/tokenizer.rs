//! Fixed-width numeric encoding of univariate series.
//!
//! A series is mapped affinely onto `[target_lo, target_hi]` (by default
//! `[0, 9.99]`) after padding its range by `pad_fraction` on both sides, then
//! every value is written with `k` digits: `floor(u * 10^(k-1))`, zero padded.
//! With `k = 3` each value is one of 1000 bins, which is also the forecaster's
//! output space.

use serde::{Deserialize, Serialize};

use crate::error::{DiclError, Result};

/// Tolerance, in bins, absorbed when flooring rescaled values. Keeps values
/// such as `1.15 * 100 = 114.999...` in the bin their decimal spelling names.
pub const ROUNDING_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericEncoding {
    pub target_lo: f64,
    pub target_hi: f64,
    /// Digits per value.
    pub digits: u32,
    pub separator: char,
    /// Fraction of the observed range added below the minimum and above the
    /// maximum before rescaling.
    pub pad_fraction: f64,
}

impl Default for NumericEncoding {
    fn default() -> Self {
        Self {
            target_lo: 0.0,
            target_hi: 9.99,
            digits: 3,
            separator: ',',
            pad_fraction: 0.15,
        }
    }
}

impl NumericEncoding {
    pub fn validate(&self) -> Result<()> {
        if self.target_lo.partial_cmp(&self.target_hi) != Some(std::cmp::Ordering::Less) {
            return Err(DiclError::invalid("target_lo must be below target_hi"));
        }
        if !(1..=5).contains(&self.digits) {
            return Err(DiclError::invalid("digits must be in 1..=5"));
        }
        if self.pad_fraction.is_nan() || self.pad_fraction < 0.0 {
            return Err(DiclError::invalid("pad_fraction must be >= 0"));
        }
        if self.target_lo < 0.0 || self.target_hi >= 10.0 {
            return Err(DiclError::invalid("target range must lie within [0, 10)"));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        10usize.pow(self.digits)
    }
}

/// Affine map from source units onto the target range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRescale {
    /// Padded source minimum, mapped to `target_lo`.
    pub source_min: f64,
    /// Padded source maximum, mapped to `target_hi`.
    pub source_max: f64,
    pub target_lo: f64,
    pub target_hi: f64,
    pub digits: u32,
}

impl SeriesRescale {
    /// The map that leaves values unchanged (source range = target range).
    pub fn identity(enc: &NumericEncoding) -> Self {
        Self {
            source_min: enc.target_lo,
            source_max: enc.target_hi,
            target_lo: enc.target_lo,
            target_hi: enc.target_hi,
            digits: enc.digits,
        }
    }

    pub fn n_bins(&self) -> usize {
        10usize.pow(self.digits)
    }

    fn bins_per_unit(&self) -> f64 {
        10f64.powi(self.digits as i32 - 1)
    }

    fn gain(&self) -> f64 {
        (self.target_hi - self.target_lo) / (self.source_max - self.source_min)
    }

    pub fn to_rescaled(&self, v: f64) -> f64 {
        self.target_lo + (v - self.source_min) * self.gain()
    }

    pub fn from_rescaled(&self, u: f64) -> f64 {
        self.source_min + (u - self.target_lo) / self.gain()
    }

    /// Width of one bin in rescaled units, `10^(1-k)`.
    pub fn bin_width_rescaled(&self) -> f64 {
        1.0 / self.bins_per_unit()
    }

    /// Width of one bin in source units.
    pub fn bin_width(&self) -> f64 {
        self.bin_width_rescaled() / self.gain()
    }

    /// True when `v` lies inside the padded source range.
    pub fn contains(&self, v: f64) -> bool {
        v >= self.source_min && v <= self.source_max
    }

    /// Bin of a source value; the second field is true if it was clamped.
    pub fn bin_of(&self, v: f64) -> (u16, bool) {
        let u = self.to_rescaled(v);
        let clamped = !(self.target_lo..=self.target_hi).contains(&u);
        let u = u.clamp(self.target_lo, self.target_hi);
        let raw = (u * self.bins_per_unit() + ROUNDING_SLACK).floor();
        let b = raw.clamp(0.0, (self.n_bins() - 1) as f64) as u16;
        (b, clamped)
    }

    /// Bin center in rescaled units.
    pub fn bin_center_rescaled(&self, bin: u16) -> f64 {
        (bin as f64 + 0.5) / self.bins_per_unit()
    }

    /// Bin center in source units.
    pub fn bin_center(&self, bin: u16) -> f64 {
        self.from_rescaled(self.bin_center_rescaled(bin))
    }
}

/// Fit the padded min-max map for `series`.
///
/// A constant series `c` uses the source window `c ± max(|c|, 1)` so that it
/// maps to the middle of the target range.
pub fn fit_rescale(series: &[f64], enc: &NumericEncoding) -> Result<SeriesRescale> {
    enc.validate()?;
    if series.is_empty() {
        return Err(DiclError::invalid("cannot fit a rescale on an empty series"));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(DiclError::invalid("series contains non-finite values"));
    }
    let lo = series.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (source_min, source_max) = if hi > lo {
        let pad = enc.pad_fraction * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let half = lo.abs().max(1.0);
        (lo - half, lo + half)
    };
    Ok(SeriesRescale {
        source_min,
        source_max,
        target_lo: enc.target_lo,
        target_hi: enc.target_hi,
        digits: enc.digits,
    })
}

/// Token stream for a series: text prompt, bin ids and the number of values
/// that had to be clamped into range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSeries {
    pub text: String,
    pub bins: Vec<u16>,
    pub clamped: usize,
}

pub fn encode_bins(series: &[f64], rescale: &SeriesRescale) -> (Vec<u16>, usize) {
    let mut clamped = 0;
    let bins = series
        .iter()
        .map(|&v| {
            let (b, c) = rescale.bin_of(v);
            clamped += c as usize;
            b
        })
        .collect();
    (bins, clamped)
}

pub fn format_bins(bins: &[u16], enc: &NumericEncoding) -> String {
    let width = enc.digits as usize;
    let mut out = String::with_capacity(bins.len() * (width + 1));
    for (i, b) in bins.iter().enumerate() {
        if i > 0 {
            out.push(enc.separator);
        }
        out.push_str(&format!("{b:0width$}"));
    }
    out
}

pub fn encode_series(series: &[f64], rescale: &SeriesRescale, enc: &NumericEncoding) -> EncodedSeries {
    let (bins, clamped) = encode_bins(series, rescale);
    if clamped > 0 {
        log::warn!("{clamped} value(s) clamped into the encoding range");
    }
    EncodedSeries {
        text: format_bins(&bins, enc),
        bins,
        clamped,
    }
}

/// Parse one `k`-digit token into its bin id.
pub fn parse_token(token: &str, digits: u32) -> Result<u16> {
    if token.len() != digits as usize || !token.bytes().all(|b| b.is_ascii_digit()) {
        return Err(DiclError::Decode(format!(
            "token '{token}' is not exactly {digits} digits"
        )));
    }
    token.parse::<u16>().map_err(|e| DiclError::Decode(e.to_string()))
}

/// Source-unit value at the center of the token's bin.
pub fn decode_value(token: &str, rescale: &SeriesRescale) -> Result<f64> {
    Ok(rescale.bin_center(parse_token(token, rescale.digits)?))
}

/// Decode a whole prompt back into source units.
pub fn decode_series(text: &str, rescale: &SeriesRescale, enc: &NumericEncoding) -> Result<Vec<f64>> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(enc.separator)
        .map(|tok| decode_value(tok, rescale))
        .collect()
}
