//! Cusum processes, test functionals and the end-to-end test.
//!
//! The univariate process is normalized by the long-run *standard
//! deviation* `sqrt(v_hat)`, so that its square coincides with the quadratic
//! form for `s = 1` and its limit is a standard Brownian bridge.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::critvals::{lookup_quantile, McConfig, NullDistribution, PValue};
use crate::error::{Error, Result, Stage, StageExt};
use crate::locscale::{LocScale, MAD_GAUSSIAN_FACTOR};
use crate::longrun::{default_bandwidth, invert_spd, long_run_cov, Kernel};
use crate::psi::{apply_psi, Psi, PsiSpec};
use crate::series::TimeSeries;

/// `|zeta(1/2)|`.
pub const ZETA_HALF_ABS: f64 = 1.460_354_508_809_586_8;

/// `|zeta(1/2)| / sqrt(2 pi)`; discrete maxima of a Brownian path fall
/// short of its supremum by about this much times `T^{-1/2}`.
pub const CORRECTION_CONSTANT: f64 = 0.582_597_157_939_010_7;

/// Smallest series length accepted by [`run_test`].
pub const MIN_OBS: usize = 20;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Functional {
    #[default]
    Sup,
    Integral,
    /// `sup_x W^2(x) / q(x)` with `q(x) = (x (1 - x))^exponent`.
    WeightedSup { exponent: f64 },
}

impl Functional {
    pub fn validate(&self) -> Result<()> {
        match self {
            Functional::WeightedSup { exponent } if !(*exponent > 0.0 && exponent.is_finite()) => {
                Err(Error::invalid(format!("weight exponent must be positive, got {exponent}")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Functional::Sup => "sup",
            Functional::Integral => "integral",
            Functional::WeightedSup { .. } => "weighted-sup",
        }
    }
}

/// `W_T(k/T)^2` (or signed `W_T(k/T)`) for `k = 1..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CusumProcess {
    pub values: Vec<f64>,
    pub dim: usize,
}

impl CusumProcess {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `W_T(k/T) = (S_k - (k/T) S_T) / (sqrt(T) sqrt(v_hat))`.
pub fn cusum_process_univariate(y: &[f64], v_hat: f64) -> Result<Vec<f64>> {
    let n = y.len();
    if n < 2 {
        return Err(Error::TooShort { len: n, min: 2 });
    }
    if !(v_hat > 0.0 && v_hat.is_finite()) {
        return Err(Error::NonPositiveInput(v_hat));
    }
    let total: f64 = y.iter().sum();
    let norm = (n as f64).sqrt() * v_hat.sqrt();
    let mut partial = 0.0;
    Ok(y.iter()
        .enumerate()
        .map(|(i, v)| {
            partial += v;
            let k = i + 1;
            let d = if k == n { 0.0 } else { partial - (k as f64 / n as f64) * total };
            d / norm
        })
        .collect())
}

/// `W_T^2(k/T) = d_k^T U^{-1} d_k / T` with `d_k = S_k - (k/T) S_T`.
pub fn cusum_process_quadratic(y: &DMatrix<f64>, u_inv: &DMatrix<f64>) -> Result<CusumProcess> {
    let (n, s) = y.shape();
    if u_inv.shape() != (s, s) {
        return Err(Error::DimensionMismatch {
            expected: s,
            got: u_inv.nrows(),
        });
    }
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let total: Vec<f64> = (0..s).map(|j| y.column(j).sum()).collect();
    let mut partial = vec![0.0; s];
    let mut d = vec![0.0; s];
    let mut values = Vec::with_capacity(n);
    for k in 1..=n {
        for j in 0..s {
            partial[j] += y[(k - 1, j)];
        }
        if k == n {
            values.push(0.0);
            break;
        }
        let frac = k as f64 / n as f64;
        for j in 0..s {
            d[j] = partial[j] - frac * total[j];
        }
        let mut q = 0.0;
        for b in 0..s {
            let mut row = 0.0;
            for a in 0..s {
                row += u_inv[(a, b)] * d[a];
            }
            q += row * d[b];
        }
        values.push(q / n as f64);
    }
    Ok(CusumProcess { values, dim: s })
}

/// Maximum and its first (1-based) argmax.
pub fn sup_statistic(proc: &CusumProcess) -> (f64, usize) {
    let mut best = f64::NEG_INFINITY;
    let mut idx = 1;
    for (i, v) in proc.values.iter().enumerate() {
        if *v > best {
            best = *v;
            idx = i + 1;
        }
    }
    (best, idx)
}

/// Right-endpoint Riemann sum `(1/T) sum_k W^2(k/T)`.
pub fn integral_statistic(proc: &CusumProcess) -> f64 {
    proc.values.iter().sum::<f64>() / proc.values.len() as f64
}

/// `max_{k < T} W^2(k/T) / q(k/T)` and its argmax.
pub fn weighted_sup_statistic(proc: &CusumProcess, q: impl Fn(f64) -> f64) -> Result<(f64, usize)> {
    let n = proc.values.len();
    if n < 2 {
        return Err(Error::TooShort { len: n, min: 2 });
    }
    let mut best = f64::NEG_INFINITY;
    let mut idx = 1;
    for k in 1..n {
        let w = q(k as f64 / n as f64);
        if !(w > 0.0) {
            return Err(Error::invalid(format!("weight q({k}/{n}) = {w} is not positive")));
        }
        let v = proc.values[k - 1] / w;
        if v > best {
            best = v;
            idx = k;
        }
    }
    Ok((best, idx))
}

/// `sup |W_T| + |zeta(1/2)| / sqrt(2 pi T)`.
pub fn finite_sample_correction(sup_abs: f64, t: usize) -> Result<f64> {
    if t < 2 {
        return Err(Error::TooShort { len: t, min: 2 });
    }
    Ok(sup_abs + CORRECTION_CONSTANT / (t as f64).sqrt())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticalSource {
    /// Embedded table, falling back to simulation when not tabulated.
    #[default]
    Table,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    /// Significance level.
    pub alpha: f64,
    pub functional: Functional,
    /// Overrides the default bandwidth rule.
    pub bandwidth: Option<f64>,
    pub kernel: Kernel,
    pub critical: CriticalSource,
    /// Finite-sample correction of the univariate sup statistic.
    pub correction: bool,
    pub mad_factor: f64,
    pub mc: McConfig,
    /// Simulate a p-value (expensive; off by default).
    pub p_value: bool,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            functional: Functional::Sup,
            bandwidth: None,
            kernel: Kernel::FlatTop,
            critical: CriticalSource::Table,
            correction: true,
            mad_factor: MAD_GAUSSIAN_FACTOR,
            mc: McConfig::default(),
            p_value: false,
        }
    }
}

impl TestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if let Some(b) = self.bandwidth {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::invalid(format!("bandwidth must be positive, got {b}")));
            }
        }
        self.functional.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueSource {
    Table,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_obs: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub bandwidth: f64,
    pub kernel: Kernel,
    pub eigen_floor_applied: bool,
    pub min_eigenvalue: f64,
    /// `C` with `|Psi|_inf <= C`; `null` when unbounded.
    pub psi_bound: Option<f64>,
    pub loc_scale: LocScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub functional: Functional,
    /// Corrected statistic on the same (squared) scale, when applied.
    pub corrected_statistic: Option<f64>,
    pub critical_value: f64,
    pub critical_source: ValueSource,
    pub alpha: f64,
    pub p_value: Option<PValue>,
    pub reject: bool,
    /// 1-based index `k` of the last observation before the estimated change.
    pub change_point_index: usize,
    pub diagnostics: Diagnostics,
}

impl TestOutcome {
    /// The value compared against the critical value.
    pub fn statistic_used(&self) -> f64 {
        self.corrected_statistic.unwrap_or(self.statistic)
    }
}

/// Runs the robust cusum test of `x` with transformation `spec`.
pub fn run_test(x: &TimeSeries, spec: &PsiSpec, cfg: &TestConfig) -> Result<TestOutcome> {
    let psi = spec.resolve(x.dim()).at(Stage::Transform)?;
    run_test_with(x, &psi, cfg, None)
}

/// As [`run_test`], with a resolved transformation and optionally a
/// pre-simulated null distribution (must match `s` and the functional),
/// which is then used for both critical value and p-value.
pub fn run_test_with(
    x: &TimeSeries,
    psi: &Psi,
    cfg: &TestConfig,
    null: Option<&NullDistribution>,
) -> Result<TestOutcome> {
    cfg.validate()?;
    let n = x.n_obs();
    if n < MIN_OBS {
        return Err(Error::TooShort { len: n, min: MIN_OBS });
    }
    if x.dim() != psi.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: psi.input_dim(),
            got: x.dim(),
        })
        .at(Stage::Transform);
    }
    let ls = if psi.variant().is_uncentered() {
        LocScale::estimate_uncentered(x)
    } else {
        LocScale::estimate(x, cfg.mad_factor)
    }
    .at(Stage::Standardize)?;
    let ty = apply_psi(x, psi, &ls).at(Stage::Transform)?;
    let s = ty.dim();

    let bandwidth = cfg.bandwidth.unwrap_or_else(|| default_bandwidth(n, s));
    let lrv = long_run_cov(&ty.y, bandwidth, cfg.kernel).at(Stage::LongRunCov)?;
    let u_inv = invert_spd(&lrv).at(Stage::Invert)?;
    let proc = cusum_process_quadratic(&ty.y, &u_inv).at(Stage::Cusum)?;

    let (sup, argmax) = sup_statistic(&proc);
    let change_point_index = argmax.clamp(1, n - 1);
    let statistic = match cfg.functional {
        Functional::Sup => sup,
        Functional::Integral => integral_statistic(&proc),
        Functional::WeightedSup { exponent } => {
            weighted_sup_statistic(&proc, |t| (t * (1.0 - t)).powf(exponent))
                .at(Stage::Cusum)?
                .0
        }
    };
    let corrected_statistic = (cfg.correction && s == 1 && cfg.functional == Functional::Sup)
        .then(|| {
            let a = finite_sample_correction(statistic.max(0.0).sqrt(), n)?;
            Ok::<_, Error>(a * a)
        })
        .transpose()
        .at(Stage::Cusum)?;

    if let Some(d) = null {
        if d.dim() != s || d.functional() != cfg.functional {
            return Err(Error::invalid(
                "supplied null distribution does not match dimension or functional",
            ))
            .at(Stage::CriticalValue);
        }
    }
    let level = 1.0 - cfg.alpha;
    let mut simulated: Option<NullDistribution> = None;
    let simulate = |owned: &mut Option<NullDistribution>| -> Result<()> {
        if owned.is_none() && null.is_none() {
            *owned = Some(NullDistribution::simulate(s, cfg.functional, &cfg.mc)?);
        }
        Ok(())
    };

    let table_value = match (cfg.critical, cfg.functional, null) {
        (CriticalSource::Table, Functional::Sup, None) => lookup_quantile(s, level).ok(),
        _ => None,
    };
    let (critical_value, critical_source) = match table_value {
        Some(v) => (v, ValueSource::Table),
        None => {
            simulate(&mut simulated).at(Stage::CriticalValue)?;
            let d = null.or(simulated.as_ref()).expect("simulated above");
            (d.quantile(level).at(Stage::CriticalValue)?, ValueSource::MonteCarlo)
        }
    };

    let used = corrected_statistic.unwrap_or(statistic);
    let p_value = if cfg.p_value {
        simulate(&mut simulated).at(Stage::CriticalValue)?;
        let d = null.or(simulated.as_ref()).expect("simulated above");
        Some(d.p_value(used))
    } else {
        None
    };

    let bound = psi.bound();
    Ok(TestOutcome {
        statistic,
        functional: cfg.functional,
        corrected_statistic,
        critical_value,
        critical_source,
        alpha: cfg.alpha,
        p_value,
        reject: used > critical_value,
        change_point_index,
        diagnostics: Diagnostics {
            n_obs: n,
            input_dim: x.dim(),
            output_dim: s,
            bandwidth,
            kernel: cfg.kernel,
            eigen_floor_applied: lrv.eigen_floor_applied,
            min_eigenvalue: lrv.min_eigenvalue,
            psi_bound: bound.is_finite().then_some(bound),
            loc_scale: ls,
        },
    })
}
