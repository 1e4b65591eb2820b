//! Data generators, break models and a Monte Carlo experiment runner.
//!
//! Experiments are described in TOML; see `configs/README.md` at the
//! repository root for the grammar.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{scale_cusum_test, ScaleEstimator};
use crate::critvals::{lookup_quantile, McConfig, NullDistribution};
use crate::cusum::{run_test_with, Functional, TestConfig};
use crate::error::{Error, Result};
use crate::longrun::{baseline_bandwidth, BandwidthRule, Kernel};
use crate::psi::{Psi, PsiSpec};
use crate::rng;
use crate::series::TimeSeries;

pub const DEFAULT_BURN_IN: usize = 500;

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

fn default_pi0() -> f64 {
    1.0
}

fn default_df() -> f64 {
    f64::INFINITY
}

fn default_p() -> usize {
    1
}

/// `X_t = sigma_t eps_t` with `sigma_t^2 = pi0 + pi1 X_{t-1}^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arch1Spec {
    #[serde(default = "default_pi0")]
    pub pi0: f64,
    #[serde(default)]
    pub pi1: f64,
    pub t: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

impl Arch1Spec {
    pub fn new(pi0: f64, pi1: f64, t: usize) -> Self {
        Self { pi0, pi1, t, burn_in: DEFAULT_BURN_IN }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pi0 > 0.0 && self.pi0.is_finite()) {
            return Err(Error::invalid(format!("pi0 must be positive, got {}", self.pi0)));
        }
        if !(0.0..1.0).contains(&self.pi1) {
            return Err(Error::invalid(format!("pi1 must lie in [0, 1), got {}", self.pi1)));
        }
        if self.t == 0 {
            return Err(Error::invalid("t must be positive"));
        }
        Ok(())
    }
}

/// `X_t = rho X_{t-1} + eps_t` with multivariate-t innovations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Var1Spec {
    #[serde(default)]
    pub rho: f64,
    #[serde(default = "default_p")]
    pub p: usize,
    /// Degrees of freedom; `inf` gives Gaussian innovations.
    #[serde(default = "default_df")]
    pub df: f64,
    /// Shape matrix of the innovations; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<CovSpec>,
    pub t: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

impl Var1Spec {
    pub fn new(rho: f64, p: usize, df: f64, t: usize) -> Self {
        Self { rho, p, df, shape: None, t, burn_in: DEFAULT_BURN_IN }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho.abs() < 1.0) {
            return Err(Error::invalid(format!("|rho| must be < 1, got {}", self.rho)));
        }
        if self.p == 0 || self.t == 0 {
            return Err(Error::invalid("p and t must be positive"));
        }
        if !(self.df > 0.0) {
            return Err(Error::invalid(format!("df must be positive, got {}", self.df)));
        }
        Ok(())
    }

    fn shape_matrix(&self) -> Result<DMatrix<f64>> {
        match &self.shape {
            Some(c) => c.matrix(self.p),
            None => Ok(DMatrix::identity(self.p, self.p)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IidDist {
    Normal,
    Cauchy,
    /// Uniform on `[0, 1]`.
    Uniform,
    /// Exponential with rate 1.
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IidSpec {
    pub dist: IidDist,
    #[serde(default = "default_p")]
    pub p: usize,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum GeneratorSpec {
    Iid(IidSpec),
    Arch1(Arch1Spec),
    Var1(Var1Spec),
}

impl GeneratorSpec {
    pub fn n_obs(&self) -> usize {
        match self {
            GeneratorSpec::Iid(s) => s.t,
            GeneratorSpec::Arch1(s) => s.t,
            GeneratorSpec::Var1(s) => s.t,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            GeneratorSpec::Iid(s) => s.p,
            GeneratorSpec::Arch1(_) => 1,
            GeneratorSpec::Var1(s) => s.p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GeneratorSpec::Iid(s) if s.p == 0 || s.t == 0 => Err(Error::invalid("p and t must be positive")),
            GeneratorSpec::Iid(_) => Ok(()),
            GeneratorSpec::Arch1(s) => s.validate(),
            GeneratorSpec::Var1(s) => s.validate(),
        }
    }
}

/// A named or explicit covariance / shape matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CovSpec {
    Identity,
    /// See [`sigma_delta`].
    SigmaDelta { delta: f64 },
    /// See [`sigma_two`].
    SigmaTwo,
    Matrix { rows: Vec<Vec<f64>> },
}

impl CovSpec {
    pub fn matrix(&self, p: usize) -> Result<DMatrix<f64>> {
        let m = match self {
            CovSpec::Identity => DMatrix::identity(p, p),
            CovSpec::SigmaDelta { delta } => sigma_delta(*delta)?,
            CovSpec::SigmaTwo => sigma_two()?,
            CovSpec::Matrix { rows } => {
                if rows.len() != p || rows.iter().any(|r| r.len() != p) {
                    return Err(Error::invalid(format!("covariance matrix must be {p} x {p}")));
                }
                let m = DMatrix::from_fn(p, p, |i, j| rows[i][j]);
                check_spd(&m)?;
                m
            }
        };
        if m.nrows() != p {
            return Err(Error::DimensionMismatch { expected: p, got: m.nrows() });
        }
        Ok(m)
    }
}

fn check_spd(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let diff = (m[(i, j)] - m[(j, i)]).abs();
            if diff > 1e-12 {
                return Err(Error::Asymmetric { row: i, col: j, diff });
            }
        }
    }
    Cholesky::new(m.clone()).ok_or_else(|| Error::invalid("matrix is not positive definite"))
}

/// Unit-diagonal 4 x 4 matrix with fixed 0.2 entries at (1,2), (1,4),
/// (3,4) and `delta` at (1,3), (2,3), (2,4), symmetrized.
pub fn sigma_delta(delta: f64) -> Result<DMatrix<f64>> {
    if !(-0.2..=0.2).contains(&delta) {
        return Err(Error::invalid(format!("delta must lie in [-0.2, 0.2], got {delta}")));
    }
    let d = delta;
    let m = DMatrix::from_row_slice(
        4,
        4,
        &[1.0, 0.2, d, 0.2, 0.2, 1.0, d, d, d, d, 1.0, 0.2, 0.2, d, 0.2, 1.0],
    );
    check_spd(&m)?;
    Ok(m)
}

/// Unit-diagonal 4 x 4 matrix with 0.3 at (1,2), (1,4), (3,4), zero
/// elsewhere.
pub fn sigma_two() -> Result<DMatrix<f64>> {
    let m = DMatrix::from_row_slice(
        4,
        4,
        &[1.0, 0.3, 0.0, 0.3, 0.3, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.3, 0.3, 0.0, 0.3, 1.0],
    );
    check_spd(&m)?;
    Ok(m)
}

/// `delta = 1 + s / (sqrt(T) b (1 - b) (1 - pi1))`.
pub fn jump_height(s_mag: f64, t: usize, b: f64, pi1: f64) -> Result<f64> {
    if !(b > 0.0 && b < 1.0) {
        return Err(Error::invalid(format!("b must lie in (0, 1), got {b}")));
    }
    if !(0.0..1.0).contains(&pi1) {
        return Err(Error::invalid(format!("pi1 must lie in [0, 1), got {pi1}")));
    }
    if t == 0 {
        return Err(Error::invalid("T must be positive"));
    }
    Ok(1.0 + s_mag / ((t as f64).sqrt() * b * (1.0 - b) * (1.0 - pi1)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BreakSpec {
    /// Rows after `floor(b T)` are multiplied by `delta`.
    ScaleJump { delta: f64, b: f64 },
    /// A scale jump whose `delta` comes from [`jump_height`], using `T` and
    /// `pi1` of the generator.
    JumpHeight { s: f64, b: f64 },
    /// Innovation covariance switches from `before` to `after` for
    /// observations `t > t_switch` (VAR(1) only).
    InnovationCovSwitch { before: CovSpec, after: CovSpec, t_switch: usize },
}

impl BreakSpec {
    /// The multiplicative factor of a scale break for generator `gen`.
    pub fn delta(&self, gen: &GeneratorSpec) -> Result<Option<(f64, f64)>> {
        match self {
            BreakSpec::ScaleJump { delta, b } => Ok(Some((*delta, *b))),
            BreakSpec::JumpHeight { s, b } => {
                let pi1 = match gen {
                    GeneratorSpec::Arch1(a) => a.pi1,
                    _ => 0.0,
                };
                Ok(Some((jump_height(*s, gen.n_obs(), *b, pi1)?, *b)))
            }
            BreakSpec::InnovationCovSwitch { .. } => Ok(None),
        }
    }
}

/// Scale break applied to an existing series.
pub fn apply_scale_jump(x: &TimeSeries, delta: f64, b: f64) -> Result<TimeSeries> {
    if !(b > 0.0 && b < 1.0) {
        return Err(Error::invalid(format!("b must lie in (0, 1), got {b}")));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid(format!("delta must be positive, got {delta}")));
    }
    let cut = (b * x.n_obs() as f64).floor() as usize;
    Ok(x.map_rows(|i, row| {
        if i >= cut {
            row.iter_mut().for_each(|v| *v *= delta);
        }
    }))
}

/// Applies a scale break; innovation switches are generated, not applied
/// after the fact, and leave `x` unchanged here.
pub fn apply_break(x: &TimeSeries, brk: &BreakSpec, gen: &GeneratorSpec) -> Result<TimeSeries> {
    match brk.delta(gen)? {
        Some((delta, b)) => apply_scale_jump(x, delta, b),
        None => Ok(x.clone()),
    }
}

pub fn sample_iid<R: Rng>(spec: &IidSpec, rng: &mut R) -> Result<TimeSeries> {
    let n = spec.t * spec.p;
    let v: Vec<f64> = match spec.dist {
        IidDist::Normal => (0..n).map(|_| StandardNormal.sample(rng)).collect(),
        IidDist::Cauchy => (0..n)
            .map(|_| {
                let a: f64 = StandardNormal.sample(rng);
                let b: f64 = StandardNormal.sample(rng);
                a / b
            })
            .collect(),
        IidDist::Uniform => (0..n).map(|_| rng.gen::<f64>()).collect(),
        IidDist::Exponential => (0..n).map(|_| Exp1.sample(rng)).collect(),
    };
    TimeSeries::from_row_major(&v, spec.t, spec.p)
}

pub fn sample_arch1<R: Rng>(spec: &Arch1Spec, rng: &mut R) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.t);
    let mut prev = 0.0f64;
    for i in 0..spec.burn_in + spec.t {
        let sigma = (spec.pi0 + spec.pi1 * prev * prev).sqrt();
        let eps: f64 = StandardNormal.sample(rng);
        prev = sigma * eps;
        if i >= spec.burn_in {
            out.push(prev);
        }
    }
    Ok(out)
}

/// ARCH(1) path; identical for identical `seed`.
pub fn gen_arch1(spec: &Arch1Spec, seed: u64) -> Result<Vec<f64>> {
    sample_arch1(spec, &mut rng::stream(seed, 0))
}

/// Innovation covariance switch used by [`sample_var1_t`].
#[derive(Debug, Clone)]
pub struct CovSwitch {
    pub after: DMatrix<f64>,
    /// Observations `t > t_switch` (1-based) use `after`.
    pub t_switch: usize,
}

/// VAR(1) path with multivariate-t innovations
/// `L Z / sqrt(W / df)`, `L L^T = shape`, `W ~ chi2(df)`.
pub fn sample_var1_t<R: Rng>(spec: &Var1Spec, switch: Option<&CovSwitch>, rng: &mut R) -> Result<TimeSeries> {
    spec.validate()?;
    let p = spec.p;
    let l_before = check_spd(&spec.shape_matrix()?)?.l();
    let l_after = match switch {
        Some(sw) => {
            if sw.after.nrows() != p {
                return Err(Error::DimensionMismatch { expected: p, got: sw.after.nrows() });
            }
            Some(check_spd(&sw.after)?.l())
        }
        None => None,
    };
    let chi = if spec.df.is_finite() {
        Some(ChiSquared::new(spec.df).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };
    let mut state = vec![0.0; p];
    let mut z = vec![0.0; p];
    let mut out = Vec::with_capacity(spec.t * p);
    for i in 0..spec.burn_in + spec.t {
        let t_obs = i as i64 - spec.burn_in as i64 + 1;
        let l = match (switch, &l_after) {
            (Some(sw), Some(la)) if t_obs > sw.t_switch as i64 => la,
            _ => &l_before,
        };
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let scale = match &chi {
            Some(c) => 1.0 / (c.sample(rng) / spec.df).sqrt(),
            None => 1.0,
        };
        for a in 0..p {
            let mut e = 0.0;
            for b in 0..=a {
                e += l[(a, b)] * z[b];
            }
            state[a] = spec.rho * state[a] + scale * e;
        }
        if i >= spec.burn_in {
            out.extend_from_slice(&state);
        }
    }
    TimeSeries::from_row_major(&out, spec.t, p)
}

pub fn gen_var1_t(spec: &Var1Spec, seed: u64) -> Result<TimeSeries> {
    sample_var1_t(spec, None, &mut rng::stream(seed, 0))
}

/// A generator with an optional break; the unit of one simulated series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub generator: GeneratorSpec,
    #[serde(default, rename = "break", skip_serializing_if = "Option::is_none")]
    pub brk: Option<BreakSpec>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if let Some(BreakSpec::InnovationCovSwitch { before, after, .. }) = &self.brk {
            match &self.generator {
                GeneratorSpec::Var1(v) => {
                    before.matrix(v.p)?;
                    after.matrix(v.p)?;
                }
                _ => return Err(Error::invalid("innovation-cov-switch requires the var1 model")),
            }
        }
        if let Some(b) = &self.brk {
            b.delta(&self.generator)?;
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<TimeSeries> {
        let x = match &self.generator {
            GeneratorSpec::Iid(s) => sample_iid(s, rng)?,
            GeneratorSpec::Arch1(s) => TimeSeries::univariate(&sample_arch1(s, rng)?)?,
            GeneratorSpec::Var1(s) => match &self.brk {
                Some(BreakSpec::InnovationCovSwitch { before, after, t_switch }) => {
                    let spec = Var1Spec { shape: Some(before.clone()), ..s.clone() };
                    let sw = CovSwitch { after: after.matrix(s.p)?, t_switch: *t_switch };
                    sample_var1_t(&spec, Some(&sw), rng)?
                }
                _ => sample_var1_t(s, None, rng)?,
            },
        };
        match &self.brk {
            Some(b) => apply_break(&x, b, &self.generator),
            None => Ok(x),
        }
    }

    /// The series of replication `r` under master seed `seed`.
    pub fn generate(&self, seed: u64, r: u64) -> Result<TimeSeries> {
        self.sample(&mut rng::stream(seed, r))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthChoice {
    /// `0.9 T^{1/3}` for `s = 1`, `log_{1.8+s/40}(T/50)` otherwise.
    #[default]
    Default,
    /// `log_{1.8+p(p+1)/40}(T/50)` keyed on the input dimension `p`.
    Multivariate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MethodSpec {
    Psi {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
        psi: PsiSpec,
        #[serde(default)]
        bandwidth_rule: BandwidthChoice,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bandwidth: Option<f64>,
        #[serde(default)]
        functional: Functional,
        #[serde(default = "default_true")]
        correction: bool,
        #[serde(default)]
        kernel: Kernel,
    },
    Md {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    Gmd {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
}

fn default_true() -> bool {
    true
}

impl MethodSpec {
    pub fn psi(psi: PsiSpec) -> Self {
        MethodSpec::Psi {
            label: None,
            psi,
            bandwidth_rule: BandwidthChoice::Default,
            bandwidth: None,
            functional: Functional::Sup,
            correction: true,
            kernel: Kernel::FlatTop,
        }
    }

    pub fn label(&self) -> String {
        match self {
            MethodSpec::Psi { label: Some(l), .. }
            | MethodSpec::Md { label: Some(l) }
            | MethodSpec::Gmd { label: Some(l) } => l.clone(),
            MethodSpec::Psi { psi, .. } => {
                let mut s = psi.variant.name().to_string();
                if let Some(level) = psi.chi2_level {
                    s.push_str(&format!("_q{level}"));
                } else if let Some(k) = psi.k {
                    s.push_str(&format!("_k{k}"));
                }
                s
            }
            MethodSpec::Md { .. } => "md".into(),
            MethodSpec::Gmd { .. } => "gmd".into(),
        }
    }
}

/// A method prepared for repeated runs on series of one shape.
#[allow(clippy::large_enum_variant)]
enum PreparedMethod {
    Psi {
        psi: Psi,
        cfg: TestConfig,
        null: Option<NullDistribution>,
    },
    Scale(ScaleEstimator),
}

impl PreparedMethod {
    fn new(m: &MethodSpec, p: usize, t: usize, alpha: f64, mc: &McConfig) -> Result<Self> {
        match m {
            MethodSpec::Psi { psi, bandwidth_rule, bandwidth, functional, correction, kernel, .. } => {
                let psi = psi.resolve(p)?;
                let bandwidth = match (bandwidth, bandwidth_rule) {
                    (Some(b), _) => Some(*b),
                    (None, BandwidthChoice::Multivariate) => {
                        Some(baseline_bandwidth(BandwidthRule::Multivariate { p }, t))
                    }
                    (None, BandwidthChoice::Default) => None,
                };
                let cfg = TestConfig {
                    alpha,
                    functional: *functional,
                    bandwidth,
                    kernel: *kernel,
                    correction: *correction,
                    mc: *mc,
                    ..TestConfig::default()
                };
                cfg.validate()?;
                let s = psi.output_dim();
                let tabulated = *functional == Functional::Sup && lookup_quantile(s, 1.0 - alpha).is_ok();
                let null = if tabulated {
                    None
                } else {
                    Some(NullDistribution::simulate(s, *functional, mc)?)
                };
                Ok(PreparedMethod::Psi { psi, cfg, null })
            }
            MethodSpec::Md { .. } => Ok(PreparedMethod::Scale(ScaleEstimator::Md)),
            MethodSpec::Gmd { .. } => Ok(PreparedMethod::Scale(ScaleEstimator::Gmd)),
        }
    }

    fn rejects(&self, x: &TimeSeries, alpha: f64) -> Result<bool> {
        match self {
            PreparedMethod::Psi { psi, cfg, null } => Ok(run_test_with(x, psi, cfg, null.as_ref())?.reject),
            PreparedMethod::Scale(est) => {
                if x.dim() != 1 {
                    return Err(Error::DimensionMismatch { expected: 1, got: x.dim() });
                }
                Ok(scale_cusum_test(x.column(0), *est, alpha)?.reject)
            }
        }
    }
}

/// One-parameter sweep: `param` is a dotted path into the scenario
/// (for example `generator.pi1` or `break.after.delta`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub param: String,
    pub values: Vec<toml::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub n_rep: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Output path prefix; `.csv`, `.json` and `_plot.csv` are appended.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub generator: GeneratorSpec,
    #[serde(default, rename = "break", skip_serializing_if = "Option::is_none")]
    pub brk: Option<BreakSpec>,
    #[serde(rename = "method")]
    pub methods: Vec<MethodSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    /// Settings for simulated critical values when a level is not tabulated.
    #[serde(default)]
    pub mc: McConfig,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_alpha() -> f64 {
    0.05
}

pub const MIN_REPLICATIONS: usize = 100;

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Input(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rep < MIN_REPLICATIONS {
            return Err(Error::invalid(format!(
                "n_rep must be at least {MIN_REPLICATIONS}, got {}",
                self.n_rep
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("at least one [[method]] is required"));
        }
        let mut seen = HashMap::new();
        for m in &self.methods {
            if seen.insert(m.label(), ()).is_some() {
                return Err(Error::invalid(format!("duplicate method label '{}'", m.label())));
            }
        }
        for (_, sc) in self.scenarios()? {
            sc.validate()?;
        }
        Ok(())
    }

    fn base_scenario(&self) -> Scenario {
        Scenario { generator: self.generator.clone(), brk: self.brk.clone() }
    }

    /// Sweep points as `(x, scenario)`; a single point with `x = None`
    /// without a sweep.
    pub fn scenarios(&self) -> Result<Vec<(Option<toml::Value>, Scenario)>> {
        let base = self.base_scenario();
        let Some(sweep) = &self.sweep else {
            return Ok(vec![(None, base)]);
        };
        if sweep.values.is_empty() {
            return Err(Error::invalid("sweep.values is empty"));
        }
        let tree = toml::Value::try_from(&base).map_err(|e| Error::Input(e.to_string()))?;
        sweep
            .values
            .iter()
            .map(|v| {
                let mut t = tree.clone();
                set_path(&mut t, &sweep.param, v.clone())?;
                let sc: Scenario = t
                    .try_into()
                    .map_err(|e| Error::Input(format!("sweep {} = {v}: {e}", sweep.param)))?;
                Ok((Some(v.clone()), sc))
            })
            .collect()
    }
}

fn set_path(tree: &mut toml::Value, path: &str, value: toml::Value) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    let mut node = tree;
    for (i, key) in keys.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::invalid(format!("sweep path '{path}' does not name a table field")))?;
        if i + 1 == keys.len() {
            table.insert((*key).to_string(), value);
            return Ok(());
        }
        node = table
            .get_mut(*key)
            .ok_or_else(|| Error::invalid(format!("sweep path '{path}': no field '{key}'")))?;
    }
    Err(Error::invalid("empty sweep path"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub method: String,
    pub scenario: String,
    /// Sweep value when numeric.
    pub x: Option<f64>,
    pub rate: f64,
    pub mc_se: f64,
    pub n_ok: usize,
    pub n_fail: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub name: String,
    pub seed: u64,
    pub n_rep: usize,
    pub alpha: f64,
    pub sweep_param: Option<String>,
    pub rows: Vec<RateRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub method: String,
    pub x: f64,
    pub rate: f64,
    pub mc_se: f64,
}

impl RateTable {
    pub fn get(&self, method: &str, scenario_index: usize) -> Option<&RateRow> {
        let n_methods = self.rows.len() / self.n_scenarios().max(1);
        self.rows
            .iter()
            .skip(scenario_index * n_methods)
            .take(n_methods)
            .find(|r| r.method == method)
    }

    pub fn n_scenarios(&self) -> usize {
        let mut seen: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.scenario.as_str()) {
                seen.push(&r.scenario);
            }
        }
        seen.len()
    }

    pub fn rate(&self, method: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.method == method).map(|r| r.rate)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Input(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Input(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Input(e.to_string()))
    }

    /// `(x, rate)` points per method, for numeric sweeps.
    pub fn plot_points(&self) -> Vec<PlotPoint> {
        self.rows
            .iter()
            .filter_map(|r| {
                r.x.map(|x| PlotPoint { method: r.method.clone(), x, rate: r.rate, mc_se: r.mc_se })
            })
            .collect()
    }

    pub fn plot_csv(&self) -> Result<String> {
        let mut pts = self.plot_points();
        pts.sort_by(|a, b| a.method.cmp(&b.method).then(a.x.total_cmp(&b.x)));
        let mut w = csv::Writer::from_writer(Vec::new());
        for p in &pts {
            w.serialize(p).map_err(|e| Error::Input(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Input(e.to_string()))
    }
}

fn scenario_label(param: Option<&str>, x: &Option<toml::Value>) -> String {
    match (param, x) {
        (Some(p), Some(v)) => format!("{p}={v}"),
        _ => "base".into(),
    }
}

/// Runs every method on `n_rep` series per sweep point. Replication `r`
/// draws from stream `(seed, r)` at every sweep point, so methods and
/// sweep points see common random numbers. Failed runs are counted and
/// excluded from the rate denominator.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RateTable> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let param = cfg.sweep.as_ref().map(|s| s.param.as_str());
    for (x, sc) in cfg.scenarios()? {
        let p = sc.generator.dim();
        let t = sc.generator.n_obs();
        let prepared: Vec<PreparedMethod> = cfg
            .methods
            .iter()
            .map(|m| PreparedMethod::new(m, p, t, cfg.alpha, &cfg.mc))
            .collect::<Result<_>>()?;
        let outcomes: Vec<Vec<Option<bool>>> = (0..cfg.n_rep as u64)
            .into_par_iter()
            .map(|r| match sc.generate(cfg.seed, r) {
                Ok(series) => prepared.iter().map(|m| m.rejects(&series, cfg.alpha).ok()).collect(),
                Err(_) => vec![None; prepared.len()],
            })
            .collect();
        for (j, m) in cfg.methods.iter().enumerate() {
            let n_ok = outcomes.iter().filter(|o| o[j].is_some()).count();
            let hits = outcomes.iter().filter(|o| o[j] == Some(true)).count();
            let rate = if n_ok > 0 { hits as f64 / n_ok as f64 } else { f64::NAN };
            let mc_se = if n_ok > 0 { (rate * (1.0 - rate) / n_ok as f64).sqrt() } else { f64::NAN };
            rows.push(RateRow {
                method: m.label(),
                scenario: scenario_label(param, &x),
                x: x.as_ref().and_then(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64))),
                rate,
                mc_se,
                n_ok,
                n_fail: cfg.n_rep - n_ok,
            });
        }
    }
    Ok(RateTable {
        name: cfg.name.clone(),
        seed: cfg.seed,
        n_rep: cfg.n_rep,
        alpha: cfg.alpha,
        sweep_param: cfg.sweep.as_ref().map(|s| s.param.clone()),
        rows,
    })
}
