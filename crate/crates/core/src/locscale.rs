//! Median / MAD marginal standardization.
//!
//! All estimates are computed on the full sample. The MAD is scaled by
//! [`MAD_GAUSSIAN_FACTOR`] by default so that standardized values live on the
//! unit-normal scale, which is what the chi-square based threshold choice in
//! [`crate::psi`] assumes.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TimeSeries;

/// `1 / Phi^{-1}(3/4)`, rounded as customary.
pub const MAD_GAUSSIAN_FACTOR: f64 = 1.4826;

fn check_finite(sample: &[f64]) -> Result<()> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    match sample.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

/// Median of a scratch buffer; reorders `buf`.
fn median_in_place(buf: &mut [f64]) -> f64 {
    let n = buf.len();
    let mid = n / 2;
    let (lower, upper, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Sample median; the midpoint of the central pair for even `n`.
pub fn median(sample: &[f64]) -> Result<f64> {
    check_finite(sample)?;
    Ok(median_in_place(&mut sample.to_vec()))
}

/// `consistency_factor * median(|x_i - median(x)|)`. A zero result is
/// returned as is.
pub fn mad(sample: &[f64], consistency_factor: f64) -> Result<f64> {
    check_finite(sample)?;
    if !(consistency_factor > 0.0 && consistency_factor.is_finite()) {
        return Err(Error::invalid(format!(
            "MAD consistency factor must be positive, got {consistency_factor}"
        )));
    }
    let mut buf = sample.to_vec();
    let m = median_in_place(&mut buf);
    for v in buf.iter_mut() {
        *v = (*v - m).abs();
    }
    Ok(consistency_factor * median_in_place(&mut buf))
}

/// Marginal location and scale estimates `(mu_j, sigma_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocScale {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl LocScale {
    /// Column-wise median and MAD.
    pub fn estimate(x: &TimeSeries, consistency_factor: f64) -> Result<Self> {
        let p = x.dim();
        let mut mu = Vec::with_capacity(p);
        let mut sigma = Vec::with_capacity(p);
        for j in 0..p {
            let col = x.column(j);
            mu.push(median(col)?);
            let s = mad(col, consistency_factor)?;
            if s <= 0.0 {
                return Err(Error::ZeroScale(j));
            }
            sigma.push(s);
        }
        Ok(Self { mu, sigma })
    }

    /// Location pinned at zero, scale = column median. Used for transforms
    /// of positive data (exponential score, log-Huber variance) that must
    /// not be centred.
    pub fn estimate_uncentered(x: &TimeSeries) -> Result<Self> {
        let p = x.dim();
        let mut sigma = Vec::with_capacity(p);
        for j in 0..p {
            let col = x.column(j);
            if let Some(&v) = col.iter().find(|v| **v < 0.0) {
                return Err(Error::NonPositiveInput(v));
            }
            let m = median(col)?;
            if m <= 0.0 {
                return Err(Error::ZeroScale(j));
            }
            sigma.push(m);
        }
        Ok(Self {
            mu: vec![0.0; p],
            sigma,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.len() != self.sigma.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mu.len(),
                got: self.sigma.len(),
            });
        }
        if let Some(j) = self.sigma.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::ZeroScale(j));
        }
        Ok(())
    }

    /// `D_sigma^{-1} (x - mu)` row by row.
    pub fn apply(&self, x: &TimeSeries) -> Result<DMatrix<f64>> {
        self.validate()?;
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.dim(),
            });
        }
        let m = x.matrix();
        Ok(DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
            (m[(i, j)] - self.mu[j]) / self.sigma[j]
        }))
    }
}

/// Marginal standardization by median and MAD.
pub fn standardize(x: &TimeSeries, consistency_factor: f64) -> Result<(TimeSeries, LocScale)> {
    if x.n_obs() < 2 {
        return Err(Error::TooShort {
            len: x.n_obs(),
            min: 2,
        });
    }
    let ls = LocScale::estimate(x, consistency_factor)?;
    let z = TimeSeries::new(ls.apply(x)?)?;
    Ok((z, ls))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 2.5);
        assert_eq!(median(&[5.0; 5]).unwrap(), 5.0);
        assert!(matches!(median(&[]), Err(Error::EmptySample)));
        assert!(matches!(median(&[1.0, f64::INFINITY]), Err(Error::NonFinite(1))));
    }

    #[test]
    fn mad_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(mad(&x, 1.0).unwrap(), 1.0);
        assert!((mad(&x, MAD_GAUSSIAN_FACTOR).unwrap() - 1.4826).abs() < 1e-15);
        assert_eq!(mad(&[7.0, 7.0, 7.0], MAD_GAUSSIAN_FACTOR).unwrap(), 0.0);
    }

    #[test]
    fn standardize_examples() {
        let x = TimeSeries::univariate(&[0.0, 2.0, 4.0]).unwrap();
        let (z, ls) = standardize(&x, 1.0).unwrap();
        assert_eq!(z.column(0), &[-1.0, 0.0, 1.0]);
        assert_eq!(ls.mu, vec![2.0]);
        assert_eq!(ls.sigma, vec![2.0]);

        // a column with median 0 and MAD 1 is left alone
        let x = TimeSeries::univariate(&[-1.0, 0.0, 1.0]).unwrap();
        let (z, _) = standardize(&x, 1.0).unwrap();
        assert_eq!(z.column(0), x.column(0));

        // col2 = 3 col1 + 7 standardizes to the same column
        let c1 = [0.3, -1.2, 2.5, 0.9, -0.4, 1.7];
        let rows: Vec<Vec<f64>> = c1.iter().map(|&v| vec![v, 3.0 * v + 7.0]).collect();
        let (z, _) = standardize(&TimeSeries::from_rows(&rows).unwrap(), MAD_GAUSSIAN_FACTOR).unwrap();
        for (a, b) in z.column(0).iter().zip(z.column(1)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_scale_is_an_error() {
        let x = TimeSeries::from_rows(&[vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]]).unwrap();
        assert!(matches!(standardize(&x, 1.0), Err(Error::ZeroScale(1))));
    }

    proptest! {
        #[test]
        fn median_minimizes_absolute_loss(xs in prop::collection::vec(-50.0f64..50.0, 1..12)) {
            let m = median(&xs).unwrap();
            let loss = |c: f64| xs.iter().map(|x| (x - c).abs()).sum::<f64>();
            let best = loss(m);
            // grid oracle
            let mut c = -60.0;
            while c <= 60.0 {
                prop_assert!(best <= loss(c) + 1e-9);
                c += 0.05;
            }
        }

        #[test]
        fn permutation_invariance(mut xs in prop::collection::vec(-1e3f64..1e3, 2..40), seed in 0u64..1000) {
            let m = median(&xs).unwrap();
            let s = mad(&xs, 1.0).unwrap();
            // deterministic shuffle
            let n = xs.len();
            let mut state = seed;
            for i in (1..n).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                xs.swap(i, (state >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(median(&xs).unwrap(), m);
            prop_assert_eq!(mad(&xs, 1.0).unwrap(), s);
        }

        #[test]
        fn standardize_is_affine_invariant(
            xs in prop::collection::vec(-10.0f64..10.0, 5..40),
            a in 0.1f64..10.0,
            b in -10.0f64..10.0,
        ) {
            let x = TimeSeries::univariate(&xs).unwrap();
            prop_assume!(mad(&xs, 1.0).unwrap() > 0.1);
            let y: Vec<f64> = xs.iter().map(|v| a * v + b).collect();
            let (zx, lx) = standardize(&x, MAD_GAUSSIAN_FACTOR).unwrap();
            let (zy, ly) = standardize(&TimeSeries::univariate(&y).unwrap(), MAD_GAUSSIAN_FACTOR).unwrap();
            prop_assert!((ly.mu[0] - (a * lx.mu[0] + b)).abs() <= 1e-12 * (1.0 + ly.mu[0].abs()));
            prop_assert!((ly.sigma[0] - a * lx.sigma[0]).abs() <= 1e-12 * ly.sigma[0]);
            for (u, v) in zx.column(0).iter().zip(zy.column(0)) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }
}
