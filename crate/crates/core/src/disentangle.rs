//! PCA feature maps used to decorrelate state(-action) features before
//! per-channel forecasting.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{DiclError, Result};

/// Relative eigenvalue threshold below which a direction counts as null.
const RANK_TOL: f64 = 1e-10;

/// An invertible-on-its-range linear feature map.
///
/// PCA is the only implementation here; ICA or autoencoder maps plug in by
/// implementing this trait.
pub trait FeatureMap: Send + Sync {
    fn n_features(&self) -> usize;
    fn n_components(&self) -> usize;
    fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>>;
    fn inverse(&self, z: ArrayView2<f64>) -> Result<Array2<f64>>;
}

/// Fitted PCA rotation.
///
/// `transform(x) = ((x - mean) / scale) · componentsᵀ` where `scale` is all
/// ones unless the map was fitted with standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PcaRepr", into = "PcaRepr")]
pub struct PcaMap {
    mean: Array1<f64>,
    scale: Option<Array1<f64>>,
    components: Array2<f64>,
    explained_variance: Array1<f64>,
}

#[derive(Serialize, Deserialize)]
struct PcaRepr {
    mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale: Option<Vec<f64>>,
    /// Row-major, one row per component.
    components: Vec<Vec<f64>>,
    explained_variance: Vec<f64>,
}

impl From<PcaMap> for PcaRepr {
    fn from(m: PcaMap) -> Self {
        PcaRepr {
            mean: m.mean.to_vec(),
            scale: m.scale.map(|s| s.to_vec()),
            components: m.components.rows().into_iter().map(|r| r.to_vec()).collect(),
            explained_variance: m.explained_variance.to_vec(),
        }
    }
}

impl TryFrom<PcaRepr> for PcaMap {
    type Error = DiclError;

    fn try_from(r: PcaRepr) -> Result<Self> {
        let d = r.mean.len();
        let c = r.components.len();
        if c == 0 || c > d || r.explained_variance.len() != c {
            return Err(DiclError::schema("inconsistent PCA component count"));
        }
        if r.components.iter().any(|row| row.len() != d) || r.scale.as_ref().is_some_and(|s| s.len() != d) {
            return Err(DiclError::schema("PCA component width does not match mean"));
        }
        let flat: Vec<f64> = r.components.into_iter().flatten().collect();
        Ok(PcaMap {
            mean: Array1::from(r.mean),
            scale: r.scale.map(Array1::from),
            components: Array2::from_shape_vec((c, d), flat).expect("shape checked"),
            explained_variance: Array1::from(r.explained_variance),
        })
    }
}

/// Default component count: half the features, rounded up.
pub fn default_components(n_features: usize) -> usize {
    n_features.div_ceil(2).max(1)
}

/// Sample covariance (n - 1 denominator).
pub fn covariance_matrix(data: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = data.nrows();
    if n < 2 {
        return Err(DiclError::invalid("covariance needs at least 2 rows"));
    }
    let mean = data.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &data - &mean;
    let mut cov = centered.t().dot(&centered) / (n - 1) as f64;
    // exact symmetry
    let d = cov.nrows();
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (cov[[i, j]] + cov[[j, i]]);
            cov[[i, j]] = v;
            cov[[j, i]] = v;
        }
    }
    Ok(cov)
}

/// Pearson correlation; constant columns get 0 off-diagonal and 1 on it.
pub fn correlation_matrix(data: ArrayView2<f64>) -> Result<Array2<f64>> {
    let cov = covariance_matrix(data)?;
    let d = cov.nrows();
    let sd: Vec<f64> = (0..d).map(|i| cov[[i, i]].max(0.0).sqrt()).collect();
    Ok(Array2::from_shape_fn((d, d), |(i, j)| {
        if i == j {
            1.0
        } else if sd[i] > 0.0 && sd[j] > 0.0 {
            (cov[[i, j]] / (sd[i] * sd[j])).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    }))
}

/// Fit PCA on raw (unstandardized) features.
pub fn fit_pca(data: ArrayView2<f64>, n_components: usize) -> Result<PcaMap> {
    PcaMap::fit(data, n_components, false)
}

impl PcaMap {
    /// Fit the top `n_components` principal axes of `data` (`n × d`).
    ///
    /// With `standardize`, each feature is divided by its sample standard
    /// deviation first (constant features keep scale 1).
    pub fn fit(data: ArrayView2<f64>, n_components: usize, standardize: bool) -> Result<Self> {
        let (n, d) = data.dim();
        if n < 2 {
            return Err(DiclError::invalid(format!("PCA needs at least 2 rows, got {n}")));
        }
        if d == 0 {
            return Err(DiclError::invalid("PCA needs at least one feature"));
        }
        if n_components == 0 || n_components > d {
            return Err(DiclError::invalid(format!(
                "component count must be in 1..={d}, got {n_components}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DiclError::schema("PCA input contains non-finite values"));
        }
        let mean = data.mean_axis(Axis(0)).expect("n >= 2");
        let scale = if standardize {
            let cov = covariance_matrix(data)?;
            Some(Array1::from_iter((0..d).map(|i| {
                let s = cov[[i, i]].max(0.0).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })))
        } else {
            None
        };
        let mut x = &data - &mean;
        if let Some(s) = &scale {
            x /= s;
        }
        let cov = covariance_matrix(x.view())?;
        let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .expect("finite eigenvalues")
                .then(a.cmp(&b))
        });
        let top = eig.eigenvalues[order[0]].max(0.0);
        let rank = order
            .iter()
            .filter(|&&k| eig.eigenvalues[k] > RANK_TOL * top.max(f64::MIN_POSITIVE) * d as f64)
            .count();
        if n_components > rank {
            return Err(DiclError::Rank {
                requested: n_components,
                attainable: rank,
            });
        }
        let mut components = Array2::zeros((n_components, d));
        let mut explained = Array1::zeros(n_components);
        for (row, &k) in order.iter().take(n_components).enumerate() {
            let v = eig.eigenvectors.column(k);
            let mut pivot = 0;
            for i in 1..d {
                if v[i].abs() > v[pivot].abs() {
                    pivot = i;
                }
            }
            let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
            let norm = v.norm();
            for i in 0..d {
                components[[row, i]] = sign * v[i] / norm;
            }
            explained[row] = eig.eigenvalues[k].max(0.0);
        }
        Ok(PcaMap {
            mean,
            scale,
            components,
            explained_variance: explained,
        })
    }

    pub fn mean(&self) -> ArrayView1<'_, f64> {
        self.mean.view()
    }

    pub fn scale(&self) -> Option<ArrayView1<'_, f64>> {
        self.scale.as_ref().map(|s| s.view())
    }

    /// `c × d`, rows orthonormal.
    pub fn components(&self) -> ArrayView2<'_, f64> {
        self.components.view()
    }

    pub fn explained_variance(&self) -> ArrayView1<'_, f64> {
        self.explained_variance.view()
    }

    fn check_width(&self, got: usize, expected: usize) -> Result<()> {
        if got != expected {
            return Err(DiclError::DimMismatch { expected, got });
        }
        Ok(())
    }

    pub fn transform_row(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_width(x.len(), self.n_features())?;
        let mut centered = &x - &self.mean;
        if let Some(s) = &self.scale {
            centered /= s;
        }
        Ok(self.components.dot(&centered))
    }

    pub fn inverse_row(&self, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_width(z.len(), self.n_components())?;
        let mut x = self.components.t().dot(&z);
        if let Some(s) = &self.scale {
            x *= s;
        }
        Ok(x + &self.mean)
    }
}

impl FeatureMap for PcaMap {
    fn n_features(&self) -> usize {
        self.mean.len()
    }

    fn n_components(&self) -> usize {
        self.components.nrows()
    }

    fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_width(x.ncols(), self.n_features())?;
        let mut centered = &x - &self.mean;
        if let Some(s) = &self.scale {
            centered /= s;
        }
        Ok(centered.dot(&self.components.t()))
    }

    fn inverse(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_width(z.ncols(), self.n_components())?;
        let mut x = z.dot(&self.components);
        if let Some(s) = &self.scale {
            x *= s;
        }
        Ok(x + &self.mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, sds: &[f64], seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, sds.len()), |(_, j)| {
            sds[j] * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        })
    }

    fn mixed(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mix = Array2::from_shape_fn((d, d), |_| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        gaussian(n, &vec![1.0; d], seed + 1).dot(&mix) + 3.0
    }

    fn max_abs(a: &Array2<f64>) -> f64 {
        a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn axis_aligned_recovers_identity_permutation() {
        let data = gaussian(4000, &[1.0, 3.0, 0.3], 11);
        let m = fit_pca(data.view(), 3).unwrap();
        let c = m.components();
        // descending variance: axis 1, axis 0, axis 2
        for (row, axis) in [(0, 1), (1, 0), (2, 2)] {
            assert!((c[[row, axis]] - 1.0).abs() < 0.02, "{c:?}");
        }
    }

    #[test]
    fn one_dimensional_is_centering() {
        let data = Array2::from_shape_vec((4, 1), vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let m = fit_pca(data.view(), 1).unwrap();
        assert_eq!(m.components()[[0, 0]], 1.0);
        let z = m.transform(data.view()).unwrap();
        assert_eq!(z.column(0).to_vec(), vec![-2.0, -1.0, 0.0, 3.0]);
    }

    #[test]
    fn mean_row_maps_to_zero() {
        let data = mixed(50, 4, 2);
        let m = fit_pca(data.view(), 2).unwrap();
        let z = m.transform_row(m.mean()).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn reconstruction_error_equals_discarded_variance() {
        let data = mixed(300, 5, 3);
        let full = fit_pca(data.view(), 5).unwrap();
        let m = fit_pca(data.view(), 2).unwrap();
        let rec = m.inverse(m.transform(data.view()).unwrap().view()).unwrap();
        let n = data.nrows() as f64;
        // squared error summed over features, averaged with the n-1 denominator
        let err = (&rec - &data).mapv(|v| v * v).sum() / (n - 1.0);
        let discarded: f64 = full.explained_variance().iter().skip(2).sum();
        assert!((err - discarded).abs() <= 1e-6 * discarded);
    }

    #[test]
    fn rank_error_reports_attainable() {
        let base = gaussian(30, &[1.0, 1.0], 4);
        let mut data = Array2::zeros((30, 3));
        data.column_mut(0).assign(&base.column(0));
        data.column_mut(1).assign(&base.column(1));
        data.column_mut(2).assign(&(&base.column(0) * 2.0));
        match fit_pca(data.view(), 3) {
            Err(DiclError::Rank {
                requested: 3,
                attainable: 2,
            }) => {}
            other => panic!("{other:?}"),
        }
        assert!(fit_pca(data.view(), 2).is_ok());
    }

    #[test]
    fn identical_columns_correlate_perfectly() {
        let g = gaussian(100, &[1.0], 5);
        let data = ndarray::concatenate(Axis(1), &[g.view(), g.view()]).unwrap();
        let c = correlation_matrix(data.view()).unwrap();
        assert!((c[[0, 1]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn independent_columns_nearly_uncorrelated() {
        let data = gaussian(100_000, &[1.0, 1.0, 1.0], 6);
        let cov = covariance_matrix(data.view()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(cov[[i, j]].abs() < 0.02);
                }
            }
        }
    }

    #[test]
    fn standardized_fit_round_trips() {
        let mut data = mixed(80, 3, 7);
        data.column_mut(2).mapv_inplace(|v| v * 100.0);
        let m = PcaMap::fit(data.view(), 3, true).unwrap();
        let back = m.inverse(m.transform(data.view()).unwrap().view()).unwrap();
        assert!(max_abs(&(&back - &data)) < 1e-8);
    }

    #[test]
    fn json_round_trip() {
        let m = PcaMap::fit(mixed(40, 3, 8).view(), 2, true).unwrap();
        let back: PcaMap = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn dim_mismatch() {
        let m = fit_pca(mixed(40, 3, 9).view(), 2).unwrap();
        assert!(m.transform(Array2::zeros((2, 4)).view()).is_err());
        assert!(m.inverse(Array2::zeros((2, 3)).view()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn fitted_map_invariants(seed in 0u64..10_000, d in 1usize..7, extra in 2usize..40) {
            let data = mixed(d + extra, d, seed);
            let m = fit_pca(data.view(), d).unwrap();
            let c = m.components().to_owned();
            let gram = c.dot(&c.t());
            prop_assert!(max_abs(&(gram - Array2::<f64>::eye(d))) < 1e-8);
            let ev = m.explained_variance();
            prop_assert!(ev.windows(2).into_iter().all(|w| w[0] >= w[1]));
            prop_assert!(ev.iter().all(|&v| v >= 0.0));
            let cov = covariance_matrix(data.view()).unwrap();
            let trace: f64 = (0..d).map(|i| cov[[i, i]]).sum();
            prop_assert!((ev.sum() - trace).abs() < 1e-8 * trace.max(1.0));

            let z = m.transform(data.view()).unwrap();
            let zc = covariance_matrix(z.view()).unwrap();
            for i in 0..d {
                for j in 0..d {
                    if i != j {
                        prop_assert!(zc[[i, j]].abs() < 1e-8 * trace.max(1.0));
                    }
                }
            }
            let back = m.inverse(z.view()).unwrap();
            prop_assert!(max_abs(&(back - &data)) < 1e-8 * (1.0 + max_abs(&data)));

            let again = fit_pca(data.view(), d).unwrap();
            prop_assert_eq!(again, m);
        }
    }
}
