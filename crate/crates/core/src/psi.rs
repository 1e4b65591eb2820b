//! Bounded transformations applied to marginally standardized observations.
//!
//! Every transformation maps `R^p -> R^s` and is bounded in the maximum norm
//! by a constant [`Psi::bound`] that depends only on the tuning constants.
//! Matrix-valued transformations are flattened by [`du_vectorize`] (diagonal
//! and lower triangle, column by column) or [`du_minor_vectorize`] (the same
//! with the last diagonal entry dropped, for spatial sign covariances whose
//! trace is identically one).
//!
//! The threshold `k` is on the scale of standardized values. `k = inf`
//! reproduces the classical unbounded statistics.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dist::chi2_1_quantile;
use crate::error::{Error, Result};
use crate::locscale::LocScale;
use crate::series::TimeSeries;

const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsiVariant {
    SpatialSign,
    HuberMultivariate,
    HuberMarginal,
    SpatialSignCov,
    HuberCovJoint,
    HuberCovMarginal,
    HuberVar,
    LogHuberVar,
    Projection,
    ExpScore,
}

impl PsiVariant {
    pub const ALL: [PsiVariant; 10] = [
        PsiVariant::SpatialSign,
        PsiVariant::HuberMultivariate,
        PsiVariant::HuberMarginal,
        PsiVariant::SpatialSignCov,
        PsiVariant::HuberCovJoint,
        PsiVariant::HuberCovMarginal,
        PsiVariant::HuberVar,
        PsiVariant::LogHuberVar,
        PsiVariant::Projection,
        PsiVariant::ExpScore,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PsiVariant::SpatialSign => "spatialsign",
            PsiVariant::HuberMultivariate => "hubermultivariate",
            PsiVariant::HuberMarginal => "hubermarginal",
            PsiVariant::SpatialSignCov => "spatialsigncov",
            PsiVariant::HuberCovJoint => "hubercovjoint",
            PsiVariant::HuberCovMarginal => "hubercovmarginal",
            PsiVariant::HuberVar => "hubervar",
            PsiVariant::LogHuberVar => "loghubervar",
            PsiVariant::Projection => "projection",
            PsiVariant::ExpScore => "expscore",
        }
    }

    pub fn needs_threshold(self) -> bool {
        !matches!(self, PsiVariant::SpatialSign | PsiVariant::SpatialSignCov)
    }

    /// Transforms of positive data skip centring and scale by the median.
    pub fn is_uncentered(self) -> bool {
        matches!(self, PsiVariant::ExpScore | PsiVariant::LogHuberVar)
    }

    pub fn output_dim(self, p: usize) -> usize {
        match self {
            PsiVariant::SpatialSign | PsiVariant::HuberMultivariate | PsiVariant::HuberMarginal => p,
            PsiVariant::HuberVar
            | PsiVariant::LogHuberVar
            | PsiVariant::Projection
            | PsiVariant::ExpScore => 1,
            PsiVariant::SpatialSignCov => p * (p + 1) / 2 - 1,
            PsiVariant::HuberCovJoint | PsiVariant::HuberCovMarginal => p * (p + 1) / 2,
        }
    }
}

impl fmt::Display for PsiVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PsiVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .flat_map(char::to_lowercase)
            .collect();
        let v = match key.as_str() {
            "spatialsign" | "sign" => PsiVariant::SpatialSign,
            "hubermultivariate" | "huber" => PsiVariant::HuberMultivariate,
            "hubermarginal" => PsiVariant::HuberMarginal,
            "spatialsigncov" | "scov" => PsiVariant::SpatialSignCov,
            "hubercovjoint" | "hubercov" | "huberg" => PsiVariant::HuberCovJoint,
            "hubercovmarginal" | "huberm" => PsiVariant::HuberCovMarginal,
            "hubervar" => PsiVariant::HuberVar,
            "loghubervar" => PsiVariant::LogHuberVar,
            "projection" => PsiVariant::Projection,
            "expscore" => PsiVariant::ExpScore,
            _ => return Err(Error::invalid(format!("unknown psi variant '{s}'"))),
        };
        Ok(v)
    }
}

/// How the marginal Huber covariance forms its entries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossProduct {
    /// `psi_H(x_i) * psi_H(x_j)` with componentwise clamping.
    #[default]
    Clamped,
    /// `psi_HVar(x_i) * psi_HVar(x_j)`, products of squared clamped values.
    SquaredClamped,
}

/// Serializable description of a transformation; see [`PsiSpec::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsiSpec {
    pub variant: PsiVariant,
    #[serde(
        default,
        serialize_with = "ser_threshold",
        deserialize_with = "de_threshold",
        skip_serializing_if = "Option::is_none"
    )]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi2_level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<f64>>,
    #[serde(default)]
    pub cross_product: CrossProduct,
}

fn ser_threshold<S: Serializer>(k: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match k {
        Some(v) if v.is_infinite() => s.serialize_str("inf"),
        Some(v) => s.serialize_f64(*v),
        None => s.serialize_none(),
    }
}

fn de_threshold<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(v) => Ok(Some(v)),
        Raw::Text(t) => parse_threshold(&t).map(Some).map_err(serde::de::Error::custom),
    }
}

/// Parses a threshold, accepting `inf` / `infinity`.
pub fn parse_threshold(s: &str) -> Result<f64> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "+inf" => Ok(f64::INFINITY),
        t => t
            .parse::<f64>()
            .map_err(|_| Error::invalid(format!("cannot parse threshold '{s}'"))),
    }
}

impl PsiSpec {
    pub fn new(variant: PsiVariant) -> Self {
        Self {
            variant,
            k: None,
            chi2_level: None,
            direction: None,
            cross_product: CrossProduct::default(),
        }
    }

    pub fn with_k(mut self, k: f64) -> Self {
        self.k = Some(k);
        self
    }

    pub fn with_chi2_level(mut self, level: f64) -> Self {
        self.chi2_level = Some(level);
        self
    }

    pub fn with_direction(mut self, a: Vec<f64>) -> Self {
        self.direction = Some(a);
        self
    }

    pub fn with_cross_product(mut self, c: CrossProduct) -> Self {
        self.cross_product = c;
        self
    }

    /// The threshold `k`, given directly or as `sqrt(q_chi2_1(level))`.
    pub fn threshold(&self) -> Result<f64> {
        match (self.k, self.chi2_level) {
            (Some(_), Some(_)) => Err(Error::invalid("give either k or chi2_level, not both")),
            (Some(k), None) => {
                if k > 0.0 {
                    Ok(k)
                } else {
                    Err(Error::invalid(format!("threshold k must be positive, got {k}")))
                }
            }
            (None, Some(level)) => Ok(chi2_1_quantile(level)?.sqrt()),
            (None, None) if !self.variant.needs_threshold() => Ok(f64::INFINITY),
            (None, None) => Err(Error::invalid(format!(
                "variant {} needs k or chi2_level",
                self.variant
            ))),
        }
    }

    /// Validates the spec against input dimension `p`.
    pub fn resolve(&self, p: usize) -> Result<Psi> {
        if p == 0 {
            return Err(Error::invalid("input dimension must be at least 1"));
        }
        let k = self.threshold()?;
        let variant = self.variant;
        match variant {
            PsiVariant::HuberVar | PsiVariant::LogHuberVar | PsiVariant::ExpScore if p != 1 => {
                return Err(Error::DimensionMismatch {
                    expected: 1,
                    got: p,
                })
            }
            PsiVariant::SpatialSignCov if p < 2 => {
                return Err(Error::invalid("spatial sign covariance needs p >= 2"))
            }
            _ => {}
        }
        let direction = if variant == PsiVariant::Projection {
            let a = self
                .direction
                .clone()
                .ok_or_else(|| Error::invalid("projection needs a direction vector"))?;
            if a.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: a.len(),
                });
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("projection direction must be finite"));
            }
            if a.iter().all(|v| *v == 0.0) {
                return Err(Error::ZeroDirection);
            }
            a
        } else {
            Vec::new()
        };
        Ok(Psi {
            variant,
            k,
            direction,
            cross_product: self.cross_product,
            input_dim: p,
        })
    }
}

/// A validated transformation for a fixed input dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Psi {
    variant: PsiVariant,
    k: f64,
    direction: Vec<f64>,
    cross_product: CrossProduct,
    input_dim: usize,
}

impl Psi {
    pub fn variant(&self) -> PsiVariant {
        self.variant
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.variant.output_dim(self.input_dim)
    }

    /// `C` with `|Psi(x)|_inf <= C` for all `x`.
    pub fn bound(&self) -> f64 {
        let k = self.k;
        match self.variant {
            PsiVariant::SpatialSign | PsiVariant::SpatialSignCov => 1.0,
            PsiVariant::HuberMultivariate | PsiVariant::HuberMarginal | PsiVariant::ExpScore => k,
            PsiVariant::HuberCovJoint | PsiVariant::HuberVar | PsiVariant::LogHuberVar => k * k,
            PsiVariant::HuberCovMarginal => match self.cross_product {
                CrossProduct::Clamped => k * k,
                CrossProduct::SquaredClamped => (k * k) * (k * k),
            },
            PsiVariant::Projection => self.direction.iter().fold(0.0, |acc, a| acc + a.abs() * k),
        }
    }

    /// Evaluates on one standardized observation, writing `output_dim` values.
    pub fn eval_into(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(z.len(), self.input_dim);
        debug_assert_eq!(out.len(), self.output_dim());
        let k = self.k;
        match self.variant {
            PsiVariant::SpatialSign => {
                let (_, s) = norm_and_sign(z);
                out.copy_from_slice(&s);
            }
            PsiVariant::HuberMultivariate => out.copy_from_slice(&huber_multivariate(z, k)),
            PsiVariant::HuberMarginal => {
                for (o, v) in out.iter_mut().zip(z) {
                    *o = v.clamp(-k, k);
                }
            }
            PsiVariant::SpatialSignCov => {
                let (_, s) = norm_and_sign(z);
                pack_outer(&s, &s, 1.0, out, true);
            }
            PsiVariant::HuberCovJoint => {
                let (norm, s) = norm_and_sign(z);
                if norm <= k {
                    pack_outer(z, z, 1.0, out, false);
                } else {
                    pack_outer(&s, &s, k * k, out, false);
                }
            }
            PsiVariant::HuberCovMarginal => {
                let c = marginal_factors(z, k, self.cross_product);
                pack_outer(&c, &c, 1.0, out, false);
            }
            PsiVariant::HuberVar => out[0] = huber_var(z[0], k),
            PsiVariant::LogHuberVar => out[0] = log_huber_var(z[0], k)?,
            PsiVariant::Projection => {
                out[0] = self
                    .direction
                    .iter()
                    .zip(z)
                    .fold(0.0, |acc, (a, v)| acc + a * v.clamp(-k, k));
            }
            PsiVariant::ExpScore => {
                if z[0] < 0.0 {
                    return Err(Error::NonPositiveInput(z[0]));
                }
                out[0] = (std::f64::consts::LN_2 * z[0]).min(k);
            }
        }
        Ok(())
    }

    pub fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_dim()];
        self.eval_into(z, &mut out)?;
        Ok(out)
    }
}

/// Rows `Y_i = Psi(D_sigma^{-1}(X_i - mu))`.
#[derive(Debug, Clone)]
pub struct TransformedSeries {
    pub y: DMatrix<f64>,
    pub psi: Psi,
    pub loc_scale: LocScale,
}

impl TransformedSeries {
    pub fn n_obs(&self) -> usize {
        self.y.nrows()
    }

    pub fn dim(&self) -> usize {
        self.y.ncols()
    }
}

/// Applies `psi` to `x` standardized with the given estimates.
pub fn apply_psi(x: &TimeSeries, psi: &Psi, ls: &LocScale) -> Result<TransformedSeries> {
    if x.dim() != psi.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: psi.input_dim(),
            got: x.dim(),
        });
    }
    let z = ls.apply(x)?;
    let (n, p) = z.shape();
    let s = psi.output_dim();
    let mut y = DMatrix::zeros(n, s);
    let mut row = vec![0.0; p];
    let mut out = vec![0.0; s];
    for i in 0..n {
        for j in 0..p {
            row[j] = z[(i, j)];
        }
        psi.eval_into(&row, &mut out)?;
        for j in 0..s {
            y[(i, j)] = out[j];
        }
    }
    Ok(TransformedSeries {
        y,
        psi: psi.clone(),
        loc_scale: ls.clone(),
    })
}

/// Estimates the standardization appropriate for `psi` and applies it.
pub fn transform(x: &TimeSeries, psi: &Psi, mad_factor: f64) -> Result<TransformedSeries> {
    let ls = if psi.variant().is_uncentered() {
        LocScale::estimate_uncentered(x)?
    } else {
        LocScale::estimate(x, mad_factor)?
    };
    apply_psi(x, psi, &ls)
}

/// Euclidean norm and spatial sign, robust to under/overflow. The sign
/// satisfies `|s_i| <= 1` exactly in floating point.
fn norm_and_sign(x: &[f64]) -> (f64, Vec<f64>) {
    let m = x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if m == 0.0 {
        return (0.0, vec![0.0; x.len()]);
    }
    if m.is_infinite() {
        // only infinite coordinates carry direction
        let s: Vec<f64> = x.iter().map(|v| if v.is_infinite() { v.signum() } else { 0.0 }).collect();
        let r = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        return (f64::INFINITY, s.into_iter().map(|v| v / r).collect());
    }
    let scaled: Vec<f64> = x.iter().map(|v| v / m).collect();
    let r = scaled.iter().map(|v| v * v).sum::<f64>().sqrt();
    (m * r, scaled.into_iter().map(|v| v / r).collect())
}

fn marginal_factors(z: &[f64], k: f64, mode: CrossProduct) -> Vec<f64> {
    match mode {
        CrossProduct::Clamped => z.iter().map(|v| v.clamp(-k, k)).collect(),
        CrossProduct::SquaredClamped => z.iter().map(|v| huber_var(*v, k)).collect(),
    }
}

/// Writes `scale * a b^T` in DU order, optionally dropping the last diagonal.
fn pack_outer(a: &[f64], b: &[f64], scale: f64, out: &mut [f64], drop_last: bool) {
    let p = a.len();
    let mut idx = 0;
    for j in 0..p {
        for i in j..p {
            if drop_last && i == p - 1 && j == p - 1 {
                continue;
            }
            out[idx] = scale * (a[i] * b[j]);
            idx += 1;
        }
    }
}

/// `x / |x|`, and `0` at the origin.
pub fn spatial_sign(x: &[f64]) -> Vec<f64> {
    norm_and_sign(x).1
}

/// Radial Huber: identity inside the ball of radius `k`, projection onto
/// its surface outside.
pub fn huber_multivariate(x: &[f64], k: f64) -> Vec<f64> {
    let (norm, s) = norm_and_sign(x);
    if norm <= k {
        x.to_vec()
    } else {
        s.into_iter().map(|v| k * v).collect()
    }
}

/// Componentwise clamp to `[-k, k]`.
pub fn huber_marginal(x: &[f64], k: f64) -> Vec<f64> {
    x.iter().map(|v| v.clamp(-k, k)).collect()
}

/// `x^2` capped at `k^2`.
pub fn huber_var(x: f64, k: f64) -> f64 {
    if x.abs() <= k {
        x * x
    } else {
        k * k
    }
}

pub fn log_huber_var(x: f64, k: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::NonPositiveInput(x));
    }
    Ok(huber_var(x.ln(), k))
}

pub fn psi_scov(x: &[f64]) -> DMatrix<f64> {
    let s = spatial_sign(x);
    outer(&s, &s, 1.0)
}

pub fn psi_hcov_joint(x: &[f64], k: f64) -> DMatrix<f64> {
    let (norm, s) = norm_and_sign(x);
    if norm <= k {
        outer(x, x, 1.0)
    } else {
        outer(&s, &s, k * k)
    }
}

pub fn psi_hcov_marginal(x: &[f64], k: f64) -> DMatrix<f64> {
    let c = marginal_factors(x, k, CrossProduct::Clamped);
    outer(&c, &c, 1.0)
}

/// Products of squared clamped values, `psi_HVar(x_i) psi_HVar(x_j)`.
pub fn psi_hcov_marginal_squared(x: &[f64], k: f64) -> DMatrix<f64> {
    let c = marginal_factors(x, k, CrossProduct::SquaredClamped);
    outer(&c, &c, 1.0)
}

fn outer(a: &[f64], b: &[f64], scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| scale * (a[i] * b[j]))
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let (r, c) = m.shape();
    if r != c {
        return Err(Error::DimensionMismatch { expected: r, got: c });
    }
    for j in 0..c {
        for i in j + 1..r {
            let diff = (m[(i, j)] - m[(j, i)]).abs();
            if diff > SYMMETRY_TOL {
                return Err(Error::Asymmetric { row: i, col: j, diff });
            }
        }
    }
    Ok(())
}

/// `(M11, M21, ..., Mp1, M22, ..., Mp2, ..., Mpp)`.
pub fn du_vectorize(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_symmetric(m)?;
    let p = m.nrows();
    let mut out = Vec::with_capacity(p * (p + 1) / 2);
    for j in 0..p {
        for i in j..p {
            out.push(m[(i, j)]);
        }
    }
    Ok(out)
}

/// [`du_vectorize`] without the final diagonal entry; needs `p >= 2`.
pub fn du_minor_vectorize(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.nrows() < 2 {
        return Err(Error::invalid("dU vectorization needs p >= 2"));
    }
    let mut v = du_vectorize(m)?;
    v.pop();
    Ok(v)
}

/// Inverse of [`du_vectorize`].
pub fn du_reconstruct(v: &[f64]) -> Result<DMatrix<f64>> {
    // p(p+1)/2 = len
    let p = ((((8 * v.len() + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    if p * (p + 1) / 2 != v.len() {
        return Err(Error::invalid(format!(
            "length {} is not a triangular number",
            v.len()
        )));
    }
    let mut m = DMatrix::zeros(p, p);
    let mut idx = 0;
    for j in 0..p {
        for i in j..p {
            m[(i, j)] = v[idx];
            m[(j, i)] = v[idx];
            idx += 1;
        }
    }
    Ok(m)
}

/// `a^T huber_marginal(x, k)`.
pub fn projection_psi(x: &[f64], a: &[f64], k: f64) -> Result<f64> {
    if a.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: a.len(),
        });
    }
    if a.iter().all(|v| *v == 0.0) {
        return Err(Error::ZeroDirection);
    }
    Ok(a.iter()
        .zip(x)
        .fold(0.0, |acc, (ai, xi)| acc + ai * xi.clamp(-k, k)))
}

/// Truncated exponential score `min(ln 2 * x / sigma_hat, k)`, with
/// `sigma_hat` the sample median.
pub fn exp_score(x: f64, sigma_hat: f64, k: f64) -> Result<f64> {
    if !(sigma_hat > 0.0) {
        return Err(Error::NonPositiveInput(sigma_hat));
    }
    if x < 0.0 {
        return Err(Error::NonPositiveInput(x));
    }
    Ok((std::f64::consts::LN_2 * x / sigma_hat).min(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn sign_and_huber_examples() {
        assert!(close(&spatial_sign(&[3.0, 4.0]), &[0.6, 0.8], 1e-15));
        assert_eq!(spatial_sign(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(spatial_sign(&[-5.0]), vec![-1.0]);
        assert!(close(&spatial_sign(&[1e-200, 0.0]), &[1.0, 0.0], 0.0));

        assert!(close(&huber_multivariate(&[3.0, 4.0], 2.0), &[1.2, 1.6], 1e-15));
        assert_eq!(huber_multivariate(&[0.5, 0.5], 2.0), vec![0.5, 0.5]);
        assert_eq!(huber_multivariate(&[0.0, 0.0], 1.0), vec![0.0, 0.0]);

        assert_eq!(huber_marginal(&[3.0, -4.0], 1.5), vec![1.5, -1.5]);
        assert_eq!(huber_marginal(&[0.2, -0.3], 1.5), vec![0.2, -0.3]);
        assert_eq!(huber_marginal(&[2.0], 1.5), vec![1.5]);
    }

    #[test]
    fn variance_transforms() {
        let k = chi2_1_quantile(0.5).unwrap().sqrt();
        assert!((huber_var(0.3, k) - 0.09).abs() < 1e-15);
        assert!((huber_var(2.0, k) - 0.454_936).abs() < 1e-6);
        assert_eq!(huber_var(0.0, k), 0.0);

        assert_eq!(log_huber_var(1.0, 0.7).unwrap(), 0.0);
        assert!((log_huber_var(std::f64::consts::E, 2.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(log_huber_var(3f64.exp(), 2.0).unwrap(), 4.0);
        assert!(matches!(log_huber_var(0.0, 1.0), Err(Error::NonPositiveInput(_))));
        assert!(log_huber_var(-2.0, 1.0).is_err());
    }

    #[test]
    fn covariance_transforms() {
        assert!(close(psi_scov(&[3.0, 4.0]).as_slice(), mat(&[&[0.36, 0.48], &[0.48, 0.64]]).as_slice(), 1e-15));
        assert_eq!(psi_scov(&[0.0, 0.0]), DMatrix::zeros(2, 2));
        assert_eq!(psi_scov(&[1.0]), mat(&[&[1.0]]));

        assert_eq!(psi_hcov_joint(&[1.0, 0.0], 2.0), mat(&[&[1.0, 0.0], &[0.0, 0.0]]));
        assert!(close(
            psi_hcov_joint(&[3.0, 4.0], 2.0).as_slice(),
            mat(&[&[1.44, 1.92], &[1.92, 2.56]]).as_slice(),
            1e-14
        ));
        assert_eq!(psi_hcov_joint(&[0.0, 0.0], 1.0), DMatrix::zeros(2, 2));

        assert_eq!(psi_hcov_marginal(&[0.5, 0.5], 2.0), mat(&[&[0.25, 0.25], &[0.25, 0.25]]));
        assert_eq!(psi_hcov_marginal(&[3.0, 0.5], 1.0), mat(&[&[1.0, 0.5], &[0.5, 0.25]]));
        assert_eq!(psi_hcov_marginal(&[0.0, 0.0], 1.0), DMatrix::zeros(2, 2));
        // literal form squares before multiplying
        assert_eq!(psi_hcov_marginal_squared(&[3.0, 0.5], 1.0), mat(&[&[1.0, 0.25], &[0.25, 0.0625]]));
    }

    #[test]
    fn vectorization() {
        assert_eq!(du_vectorize(&mat(&[&[1.0, 2.0], &[2.0, 3.0]])).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(du_vectorize(&DMatrix::identity(2, 2)).unwrap(), vec![1.0, 0.0, 1.0]);
        assert_eq!(du_vectorize(&DMatrix::from_element(3, 3, 1.0)).unwrap(), vec![1.0; 6]);
        assert!(matches!(
            du_vectorize(&mat(&[&[1.0, 2.0], &[2.5, 3.0]])),
            Err(Error::Asymmetric { .. })
        ));

        assert_eq!(du_minor_vectorize(&mat(&[&[1.0, 2.0], &[2.0, 3.0]])).unwrap(), vec![1.0, 2.0]);
        assert!(close(&du_minor_vectorize(&psi_scov(&[3.0, 4.0])).unwrap(), &[0.36, 0.48], 1e-15));
        assert!(du_minor_vectorize(&mat(&[&[1.0]])).is_err());

        // column-by-column lower triangle for p = 3
        let m = mat(&[&[1.0, 2.0, 3.0], &[2.0, 4.0, 5.0], &[3.0, 5.0, 6.0]]);
        assert_eq!(du_vectorize(&m).unwrap(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn projection_and_exp_score() {
        assert_eq!(projection_psi(&[3.0, -3.0], &[1.0, 1.0], 1.5).unwrap(), 0.0);
        assert_eq!(projection_psi(&[0.5, 0.5], &[1.0, 0.0], 2.0).unwrap(), 0.5);
        assert_eq!(projection_psi(&[10.0, 10.0], &[1.0, 1.0], 1.0).unwrap(), 2.0);
        assert!(matches!(projection_psi(&[1.0, 1.0], &[0.0, 0.0], 1.0), Err(Error::ZeroDirection)));

        let ln2 = std::f64::consts::LN_2;
        assert!((exp_score(3.0 / ln2, 3.0, 2.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(exp_score(0.0, 1.0, 2.0).unwrap(), 0.0);
        assert_eq!(exp_score(1e300, 1.0, 2.0).unwrap(), 2.0);
        assert!(exp_score(1.0, 0.0, 2.0).is_err());
    }

    #[test]
    fn spec_resolution() {
        let spec = PsiSpec::new(PsiVariant::HuberVar).with_chi2_level(0.95);
        let psi = spec.resolve(1).unwrap();
        assert!((psi.k() - 3.841_458_820_694_124f64.sqrt()).abs() < 1e-9);
        assert!(spec.resolve(2).is_err());
        assert!(PsiSpec::new(PsiVariant::HuberVar).resolve(1).is_err());
        assert!(PsiSpec::new(PsiVariant::HuberVar).with_k(1.0).with_chi2_level(0.5).resolve(1).is_err());
        assert!(PsiSpec::new(PsiVariant::SpatialSignCov).resolve(1).is_err());
        assert!(matches!(
            PsiSpec::new(PsiVariant::Projection).with_k(1.0).with_direction(vec![0.0, 0.0]).resolve(2),
            Err(Error::ZeroDirection)
        ));
        for (v, p, s) in [
            (PsiVariant::SpatialSign, 3, 3),
            (PsiVariant::HuberMultivariate, 3, 3),
            (PsiVariant::HuberMarginal, 3, 3),
            (PsiVariant::SpatialSignCov, 4, 9),
            (PsiVariant::HuberCovJoint, 4, 10),
            (PsiVariant::HuberCovMarginal, 2, 3),
            (PsiVariant::Projection, 5, 1),
        ] {
            assert_eq!(v.output_dim(p), s, "{v}");
        }
        assert_eq!("huber-cov-joint".parse::<PsiVariant>().unwrap(), PsiVariant::HuberCovJoint);
        assert_eq!("HuberVar".parse::<PsiVariant>().unwrap(), PsiVariant::HuberVar);
        assert!("tukey".parse::<PsiVariant>().is_err());
    }

    #[test]
    fn spec_serialization_handles_infinite_k() {
        let spec = PsiSpec::new(PsiVariant::HuberCovJoint).with_k(f64::INFINITY);
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"inf\""));
        let back: PsiSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        let t: PsiSpec = toml::from_str("variant = \"hubercovjoint\"\nchi2_level = 0.8\n").unwrap();
        assert_eq!(t.chi2_level, Some(0.8));
    }

    #[test]
    fn packed_rows_match_matrix_forms() {
        let z = [0.7, -2.3, 1.1];
        let psi = PsiSpec::new(PsiVariant::HuberCovJoint).with_k(1.5).resolve(3).unwrap();
        assert_eq!(psi.eval(&z).unwrap(), du_vectorize(&psi_hcov_joint(&z, 1.5)).unwrap());
        let psi = PsiSpec::new(PsiVariant::HuberCovMarginal).with_k(1.5).resolve(3).unwrap();
        assert_eq!(psi.eval(&z).unwrap(), du_vectorize(&psi_hcov_marginal(&z, 1.5)).unwrap());
        let psi = PsiSpec::new(PsiVariant::SpatialSignCov).resolve(3).unwrap();
        assert_eq!(psi.eval(&z).unwrap(), du_minor_vectorize(&psi_scov(&z)).unwrap());
    }

    #[test]
    fn apply_psi_examples() {
        let ls = LocScale { mu: vec![0.0], sigma: vec![1.0] };
        let x = TimeSeries::univariate(&[-1.0, 0.0, 1.0]).unwrap();
        let psi = PsiSpec::new(PsiVariant::HuberVar).with_k(0.8).resolve(1).unwrap();
        let y = apply_psi(&x, &psi, &ls).unwrap();
        let got: Vec<f64> = y.y.column(0).iter().copied().collect();
        assert!(close(&got, &[0.64, 0.0, 0.64], 1e-15));

        // unbounded limit gives the squared standardized values
        let psi = PsiSpec::new(PsiVariant::HuberVar).with_k(f64::INFINITY).resolve(1).unwrap();
        let x = TimeSeries::univariate(&[-3.0, 0.5, 20.0]).unwrap();
        let y = apply_psi(&x, &psi, &ls).unwrap();
        assert_eq!(y.y.column(0).as_slice(), &[9.0, 0.25, 400.0]);

        // constant input gives constant rows
        let x = TimeSeries::from_rows(&vec![vec![0.3, -0.2]; 5]).unwrap();
        let ls2 = LocScale { mu: vec![0.0, 0.0], sigma: vec![1.0, 1.0] };
        let psi = PsiSpec::new(PsiVariant::HuberMarginal).with_k(1.0).resolve(2).unwrap();
        let y = apply_psi(&x, &psi, &ls2).unwrap();
        for i in 1..5 {
            assert_eq!(y.y.row(i), y.y.row(0));
        }

        let bad = TimeSeries::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let psi = PsiSpec::new(PsiVariant::HuberVar).with_k(1.0).resolve(1).unwrap();
        assert!(matches!(apply_psi(&bad, &psi, &ls), Err(Error::DimensionMismatch { .. })));
    }

    fn all_specs(p: usize) -> Vec<Psi> {
        let mut out = Vec::new();
        for v in PsiVariant::ALL {
            let p_use = match v {
                PsiVariant::HuberVar | PsiVariant::LogHuberVar | PsiVariant::ExpScore => 1,
                _ => p,
            };
            let mut spec = PsiSpec::new(v);
            if v.needs_threshold() {
                spec = spec.with_k(1.3);
            }
            if v == PsiVariant::Projection {
                spec = spec.with_direction((0..p_use).map(|i| 0.5 - i as f64 * 0.7).collect());
            }
            out.push(spec.resolve(p_use).unwrap());
            if v == PsiVariant::HuberCovMarginal {
                out.push(spec.with_cross_product(CrossProduct::SquaredClamped).resolve(p_use).unwrap());
            }
        }
        out
    }

    fn magnitude() -> impl Strategy<Value = f64> {
        prop_oneof![
            -3.0f64..3.0,
            -1e8f64..1e8,
            Just(0.0),
            Just(1e8),
            Just(-1e8),
            (-1.0f64..1.0).prop_map(|v| v * 1e-150),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2500))]

        #[test]
        fn every_variant_is_bounded(z in prop::collection::vec(magnitude(), 3)) {
            for psi in all_specs(3) {
                let input = &z[..psi.input_dim()];
                let input: Vec<f64> = if psi.variant().is_uncentered() {
                    input.iter().map(|v| v.abs() + 1e-300).collect()
                } else {
                    input.to_vec()
                };
                let out = psi.eval(&input).unwrap();
                let c = psi.bound();
                for v in out {
                    prop_assert!(v.abs() <= c, "{:?}: {} > {}", psi.variant(), v, c);
                }
            }
        }

        #[test]
        fn symmetry_properties(z in prop::collection::vec(-1e4f64..1e4, 2), k in 0.1f64..5.0) {
            let neg: Vec<f64> = z.iter().map(|v| -v).collect();
            let flip = |v: Vec<f64>| v.into_iter().map(|x| -x).collect::<Vec<_>>();
            prop_assert_eq!(spatial_sign(&neg), flip(spatial_sign(&z)));
            prop_assert_eq!(huber_multivariate(&neg, k), flip(huber_multivariate(&z, k)));
            prop_assert_eq!(huber_marginal(&neg, k), flip(huber_marginal(&z, k)));
            prop_assert_eq!(huber_var(-z[0], k), huber_var(z[0], k));
            prop_assert_eq!(psi_scov(&neg), psi_scov(&z));
            prop_assert_eq!(psi_hcov_joint(&neg, k), psi_hcov_joint(&z, k));
        }

        #[test]
        fn radial_consistency(z in prop::collection::vec(-100.0f64..100.0, 1..5), k in 0.1f64..50.0) {
            let h = huber_multivariate(&z, k);
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((norm(&h) - norm(&z).min(k)).abs() <= 1e-12 * (1.0 + k));
        }

        #[test]
        fn du_roundtrip(v in prop::collection::vec(-10.0f64..10.0, 6)) {
            let m = du_reconstruct(&v).unwrap();
            prop_assert_eq!(du_vectorize(&m).unwrap(), v);
        }

        #[test]
        fn infinite_threshold_is_raw_outer_product(z in prop::collection::vec(-1e3f64..1e3, 1..5)) {
            prop_assert_eq!(psi_hcov_joint(&z, f64::INFINITY), outer(&z, &z, 1.0));
        }
    }
}
