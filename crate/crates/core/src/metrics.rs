//! Normalized error energy and z-scoring.
//!
//! All statistics are population statistics (divide by `N`).

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("series too short: need at least 2 samples, got {0}")]
    TooShort(usize),
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population standard deviation.
pub fn std_dev(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn correlation(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Z-scores `x`; `None` for a constant series.
pub fn zscore(x: &[f64]) -> Option<Vec<f64>> {
    let m = mean(x);
    let s = std_dev(x);
    (s > 0.0 && s.is_finite()).then(|| x.iter().map(|v| (v - m) / s).collect())
}

/// Per-feature affine standardization fitted on a reference set.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits per-component mean/std over all rows. Constant components get
    /// unit scale so they map to zero.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        for r in &rows {
            n += 1;
            for (i, v) in r.iter().enumerate() {
                sum[i] += v;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n.max(1) as f64).collect();
        for r in &rows {
            for (i, v) in r.iter().enumerate() {
                sq[i] += (v - mean[i]) * (v - mean[i]);
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let sd = (s / n.max(1) as f64).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Result of comparing two series with the normalized error energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    /// `None` exactly when `degenerate` is set.
    pub rho: Option<f64>,
    pub sign_flipped: bool,
    pub degenerate: bool,
}

impl ScoredPair {
    fn degenerate() -> Self {
        Self {
            rho: None,
            sign_flipped: false,
            degenerate: true,
        }
    }
}

fn check_pair(x: &[f64], x_hat: &[f64]) -> Result<(), MetricError> {
    if x.len() != x_hat.len() {
        return Err(MetricError::LengthMismatch(x.len(), x_hat.len()));
    }
    if x.len() < 2 {
        return Err(MetricError::TooShort(x.len()));
    }
    Ok(())
}

/// `sum((zx - zx_hat)^2) / sum(zx^2)` for z-scored `x` and `x_hat`.
pub fn rho(x: &[f64], x_hat: &[f64]) -> Result<ScoredPair, MetricError> {
    check_pair(x, x_hat)?;
    let (Some(zx), Some(zh)) = (zscore(x), zscore(x_hat)) else {
        return Ok(ScoredPair::degenerate());
    };
    let num: f64 = zx.iter().zip(&zh).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = zx.iter().map(|a| a * a).sum();
    Ok(ScoredPair {
        rho: Some(num / den),
        sign_flipped: false,
        degenerate: false,
    })
}

/// Sign-minimized score of a learned series against ground truth:
/// `min(rho(c, c*), rho(-c, c*))`.
pub fn rho_validation(c: &[f64], c_star: &[f64]) -> Result<ScoredPair, MetricError> {
    check_pair(c, c_star)?;
    let direct = rho(c, c_star)?;
    let Some(r) = direct.rho else {
        return Ok(direct);
    };
    let neg: Vec<f64> = c.iter().map(|v| -v).collect();
    let flipped = rho(&neg, c_star)?.rho.expect("negation preserves variance");
    Ok(if flipped < r {
        ScoredPair {
            rho: Some(flipped),
            sign_flipped: true,
            degenerate: false,
        }
    } else {
        direct
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, 3..60)
            .prop_filter("non-constant", |v| std_dev(v) > 1e-3)
    }

    #[test]
    fn identity_and_negation() {
        let x = [1.0, 3.0, 2.0, 7.0, -1.0];
        assert_eq!(rho(&x, &x).unwrap().rho, Some(0.0));
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((rho(&x, &neg).unwrap().rho.unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn positive_affine_is_free() {
        let x = [0.2, 0.9, 0.4, 0.5];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 7.0).collect();
        assert!(rho(&x, &y).unwrap().rho.unwrap() < 1e-12);
    }

    #[test]
    fn degenerate_series_has_no_score() {
        let s = rho(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]).unwrap();
        assert!(s.degenerate && s.rho.is_none());
        let s = rho_validation(&[0.0, 1.0, 2.0], &[5.0, 5.0, 5.0]).unwrap();
        assert!(s.degenerate && s.rho.is_none());
    }

    #[test]
    fn shape_errors() {
        assert_eq!(rho(&[1.0, 2.0], &[1.0]).unwrap_err(), MetricError::LengthMismatch(2, 1));
        assert_eq!(rho(&[1.0], &[1.0]).unwrap_err(), MetricError::TooShort(1));
    }

    #[test]
    fn validation_handles_mirror() {
        let c_star = [0.1, 0.5, 0.3, 0.9, 0.7];
        let s = rho_validation(&c_star, &c_star).unwrap();
        assert_eq!(s.rho, Some(0.0));
        assert!(!s.sign_flipped);
        let mirror: Vec<f64> = c_star.iter().map(|v| 1.0 - v).collect();
        let s = rho_validation(&mirror, &c_star).unwrap();
        assert!(s.rho.unwrap() < 1e-12);
        assert!(s.sign_flipped);
    }

    #[test]
    fn standardizer_round_values() {
        let rows = [vec![1.0, 10.0], vec![3.0, 10.0]];
        let st = Standardizer::fit(rows.iter().map(|r| r.as_slice()), 2);
        assert_eq!(st.mean, vec![2.0, 10.0]);
        assert_eq!(st.std, vec![1.0, 1.0]);
        assert_eq!(st.apply(&[3.0, 10.0]), vec![1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn affine_invariance(x in series(), y in series(), a in 0.01f64..100.0, b in -50.0f64..50.0) {
            let n = x.len().min(y.len());
            let (x, y) = (&x[..n], &y[..n]);
            prop_assume!(std_dev(x) > 1e-3 && std_dev(y) > 1e-3);
            let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let r0 = rho(x, y).unwrap().rho.unwrap();
            let r1 = rho(&ax, y).unwrap().rho.unwrap();
            prop_assert!((r0 - r1).abs() < 1e-10);
            let v0 = rho_validation(x, y).unwrap().rho.unwrap();
            let v1 = rho_validation(&ax.iter().map(|v| -v).collect::<Vec<_>>(), y).unwrap().rho.unwrap();
            prop_assert!((v0 - v1).abs() < 1e-10);
        }

        #[test]
        fn rho_is_two_one_minus_corr(x in series(), y in series()) {
            let n = x.len().min(y.len());
            let (x, y) = (&x[..n], &y[..n]);
            prop_assume!(std_dev(x) > 1e-3 && std_dev(y) > 1e-3);
            let r = rho(x, y).unwrap().rho.unwrap();
            let c = correlation(x, y).unwrap();
            prop_assert!((r - 2.0 * (1.0 - c)).abs() < 1e-10);
            prop_assert!(r >= 0.0 && r <= 4.0 + 1e-10);
        }
    }
}
