//! Kernel estimation of the long-run covariance of a transformed series.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative eigenvalue floor applied after estimation.
pub const EIGEN_FLOOR_REL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kernel {
    /// 1 on [0, 1/2], linear down to 0 at 1.
    #[default]
    FlatTop,
    /// Triangular `1 - x` on [0, 1]; always positive semi-definite.
    Bartlett,
}

impl Kernel {
    pub fn weight(self, x: f64) -> f64 {
        match self {
            Kernel::FlatTop => flat_top_kernel(x),
            Kernel::Bartlett => bartlett_kernel(x),
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kernel::FlatTop => "flat-top",
            Kernel::Bartlett => "bartlett",
        })
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "flat-top" | "flattop" => Ok(Kernel::FlatTop),
            "bartlett" => Ok(Kernel::Bartlett),
            _ => Err(Error::invalid(format!("unknown kernel '{s}'"))),
        }
    }
}

pub fn flat_top_kernel(x: f64) -> f64 {
    let x = x.abs();
    if x <= 0.5 {
        1.0
    } else if x <= 1.0 {
        2.0 - 2.0 * x
    } else {
        0.0
    }
}

pub fn bartlett_kernel(x: f64) -> f64 {
    (1.0 - x.abs()).max(0.0)
}

/// `log_base(T / 50)` floored at one (the rule is undefined for `T <= 50`).
fn log_rule(t: usize, base: f64) -> f64 {
    let v = (t as f64 / 50.0).ln() / base.ln();
    if v.is_finite() && v >= 1.0 {
        v
    } else {
        1.0
    }
}

/// `0.9 T^{1/3}` for a scalar transformed series, `log_{1.8 + s/40}(T/50)`
/// otherwise.
pub fn default_bandwidth(t: usize, s: usize) -> f64 {
    if s <= 1 {
        0.9 * (t as f64).cbrt()
    } else {
        log_rule(t, 1.8 + s as f64 / 40.0)
    }
}

/// Tabulated bandwidth choices for particular tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthRule {
    /// Huber variance tests `M_q`.
    HuberScale,
    /// Mean absolute deviation cusum.
    Md,
    /// Gini mean difference cusum.
    Gmd,
    /// Huberized / classical covariance tests on `p` components.
    Multivariate { p: usize },
}

pub fn baseline_bandwidth(rule: BandwidthRule, t: usize) -> f64 {
    let tf = t as f64;
    match rule {
        BandwidthRule::HuberScale => 0.9 * tf.cbrt(),
        BandwidthRule::Md | BandwidthRule::Gmd => tf.powf(0.25),
        BandwidthRule::Multivariate { p } => log_rule(t, 1.8 + (p * (p + 1)) as f64 / 40.0),
    }
}

/// Estimated long-run covariance `U_hat` with estimation metadata.
#[derive(Debug, Clone)]
pub struct LongRunCov {
    pub u_hat: DMatrix<f64>,
    pub bandwidth: f64,
    pub kernel: Kernel,
    pub eigen_floor_applied: bool,
    /// Smallest eigenvalue after repair.
    pub min_eigenvalue: f64,
    eigen: SymmetricEigen<f64, nalgebra::Dyn>,
}

impl LongRunCov {
    pub fn dim(&self) -> usize {
        self.u_hat.nrows()
    }
}

/// Lagged cross-product sum `(1/T) sum_i (Y_{i+h} - Ybar)(Y_i - Ybar)^T`.
fn lag_cov(centered: &DMatrix<f64>, h: usize) -> DMatrix<f64> {
    let (n, s) = centered.shape();
    let mut g = DMatrix::zeros(s, s);
    // column-major: iterate columns outermost for contiguous access
    for b in 0..s {
        let cb = centered.column(b);
        for a in 0..s {
            let ca = centered.column(a);
            let mut acc = 0.0;
            for i in 0..n - h {
                acc += ca[i + h] * cb[i];
            }
            g[(a, b)] = acc;
        }
    }
    g / n as f64
}

/// `U_hat = (1/T) sum_{i,j} (Y_i - Ybar)(Y_j - Ybar)^T k(|i-j| / b)`,
/// evaluated as a lag sum over `|h| < b`, symmetrized and with eigenvalues
/// floored at `EIGEN_FLOOR_REL * lambda_max`.
pub fn long_run_cov(y: &DMatrix<f64>, bandwidth: f64, kernel: Kernel) -> Result<LongRunCov> {
    let (n, s) = y.shape();
    if n < 2 {
        return Err(Error::TooShort { len: n, min: 2 });
    }
    if s == 0 {
        return Err(Error::invalid("transformed series has no columns"));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let mut centered = y.clone();
    for mut col in centered.column_iter_mut() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
    }

    let mut u = lag_cov(&centered, 0);
    for h in 1..n {
        let w = kernel.weight(h as f64 / bandwidth);
        if h as f64 >= bandwidth {
            break;
        }
        if w == 0.0 {
            continue;
        }
        let g = lag_cov(&centered, h);
        u += (&g + g.transpose()) * w;
    }
    u = (&u + u.transpose()) * 0.5;
    repair(u, bandwidth, kernel)
}

fn repair(u: DMatrix<f64>, bandwidth: f64, kernel: Kernel) -> Result<LongRunCov> {
    let mut eigen = SymmetricEigen::new(u.clone());
    let lambda_max = eigen.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lambda_max > 0.0 && lambda_max.is_finite()) {
        return Err(Error::DegenerateLrv(lambda_max));
    }
    let floor = EIGEN_FLOOR_REL * lambda_max;
    let mut floored = false;
    for l in eigen.eigenvalues.iter_mut() {
        if *l < floor {
            *l = floor;
            floored = true;
        }
    }
    let u_hat = if floored {
        let r = eigen.recompose();
        (&r + r.transpose()) * 0.5
    } else {
        u
    };
    let min_eigenvalue = eigen.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(LongRunCov {
        u_hat,
        bandwidth,
        kernel,
        eigen_floor_applied: floored,
        min_eigenvalue,
        eigen,
    })
}

/// Symmetric inverse through the (repaired) eigendecomposition.
pub fn invert_spd(lrv: &LongRunCov) -> Result<DMatrix<f64>> {
    let e = &lrv.eigen;
    if e.eigenvalues.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::Singular);
    }
    let v = &e.eigenvectors;
    let inv_diag = DMatrix::from_diagonal(&e.eigenvalues.map(|l| 1.0 / l));
    let inv = v * inv_diag * v.transpose();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// Builds a [`LongRunCov`] from a given symmetric matrix, applying the same
/// eigenvalue repair as [`long_run_cov`].
pub fn from_matrix(u: DMatrix<f64>, bandwidth: f64, kernel: Kernel) -> Result<LongRunCov> {
    if u.nrows() != u.ncols() {
        return Err(Error::DimensionMismatch {
            expected: u.nrows(),
            got: u.ncols(),
        });
    }
    let sym = (&u + u.transpose()) * 0.5;
    repair(sym, bandwidth, kernel)
}
