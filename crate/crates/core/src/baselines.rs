//! Scale cusum tests based on the mean absolute deviation (MD) and Gini's
//! mean difference (GMD), used as non-robust reference competitors.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::critvals::{lookup_quantile, simulate_bessel_sup_quantile, McConfig};
use crate::cusum::{finite_sample_correction, MIN_OBS};
use crate::error::{Error, Result, Stage, StageExt};
use crate::locscale::median;
use crate::longrun::{baseline_bandwidth, long_run_cov, BandwidthRule, Kernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleEstimator {
    Md,
    Gmd,
}

impl ScaleEstimator {
    pub fn name(self) -> &'static str {
        match self {
            ScaleEstimator::Md => "md",
            ScaleEstimator::Gmd => "gmd",
        }
    }

    /// Scale estimate of a whole sample.
    pub fn estimate(self, x: &[f64]) -> Result<f64> {
        match self {
            ScaleEstimator::Md => md_scale(x),
            ScaleEstimator::Gmd => gmd_scale(x),
        }
    }

    fn bandwidth_rule(self) -> BandwidthRule {
        match self {
            ScaleEstimator::Md => BandwidthRule::Md,
            ScaleEstimator::Gmd => BandwidthRule::Gmd,
        }
    }
}

impl std::fmt::Display for ScaleEstimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ScaleEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "md" => Ok(ScaleEstimator::Md),
            "gmd" => Ok(ScaleEstimator::Gmd),
            other => Err(Error::invalid(format!("unknown scale estimator '{other}' (md, gmd)"))),
        }
    }
}

fn check_sample(x: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::EmptySample);
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(())
}

/// `(1/n) sum |x_i - median(x)|`.
pub fn md_scale(x: &[f64]) -> Result<f64> {
    check_sample(x)?;
    let m = median(x)?;
    Ok(x.iter().map(|v| (v - m).abs()).sum::<f64>() / x.len() as f64)
}

/// `2 / (n (n-1)) sum_{i<j} |x_i - x_j|`, from the sorted sample in
/// `O(n log n)`.
pub fn gmd_scale(x: &[f64]) -> Result<f64> {
    check_sample(x)?;
    let n = x.len();
    if n < 2 {
        return Err(Error::TooShort { len: n, min: 2 });
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pair_sum: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, v)| (2.0 * (i + 1) as f64 - n as f64 - 1.0) * v)
        .sum();
    Ok(2.0 * pair_sum / (n * (n - 1)) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key(f64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Streaming MD: two heaps split at the median, each with a running sum.
#[derive(Debug, Default)]
struct RunningMd {
    lower: BinaryHeap<Key>,
    upper: BinaryHeap<Reverse<Key>>,
    lower_sum: f64,
    upper_sum: f64,
}

impl RunningMd {
    fn push(&mut self, v: f64) {
        if self.lower.peek().is_some_and(|top| v > top.0) {
            self.upper.push(Reverse(Key(v)));
            self.upper_sum += v;
        } else {
            self.lower.push(Key(v));
            self.lower_sum += v;
        }
        if self.lower.len() > self.upper.len() + 1 {
            let Key(m) = self.lower.pop().expect("non-empty");
            self.lower_sum -= m;
            self.upper.push(Reverse(Key(m)));
            self.upper_sum += m;
        } else if self.upper.len() > self.lower.len() {
            let Reverse(Key(m)) = self.upper.pop().expect("non-empty");
            self.upper_sum -= m;
            self.lower.push(Key(m));
            self.lower_sum += m;
        }
    }

    fn value(&self) -> f64 {
        let nl = self.lower.len();
        let nu = self.upper.len();
        // any point between the central pair minimizes the absolute loss
        let m = self.lower.peek().expect("non-empty").0;
        let dev = (m * nl as f64 - self.lower_sum) + (self.upper_sum - m * nu as f64);
        dev / (nl + nu) as f64
    }
}

/// Fenwick tree over value ranks holding counts and sums.
struct Fenwick {
    count: Vec<u32>,
    sum: Vec<f64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self {
            count: vec![0; n + 1],
            sum: vec![0.0; n + 1],
        }
    }

    fn add(&mut self, rank: usize, v: f64) {
        let mut i = rank + 1;
        while i < self.count.len() {
            self.count[i] += 1;
            self.sum[i] += v;
            i += i & i.wrapping_neg();
        }
    }

    /// Count and sum over ranks `< rank`.
    fn prefix(&self, rank: usize) -> (u32, f64) {
        let (mut c, mut s) = (0, 0.0);
        let mut i = rank;
        while i > 0 {
            c += self.count[i];
            s += self.sum[i];
            i -= i & i.wrapping_neg();
        }
        (c, s)
    }
}

/// `s_{1:k}` for `k = 1..n`, updated incrementally. `s_{1:1}` is 0 for both
/// estimators.
pub fn sequential_scales(x: &[f64], est: ScaleEstimator) -> Result<Vec<f64>> {
    check_sample(x)?;
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    match est {
        ScaleEstimator::Md => {
            let mut run = RunningMd::default();
            for &v in x {
                run.push(v);
                out.push(run.value());
            }
        }
        ScaleEstimator::Gmd => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
            let mut rank = vec![0usize; n];
            for (r, &i) in order.iter().enumerate() {
                rank[i] = r;
            }
            let mut tree = Fenwick::new(n);
            let (mut total_sum, mut pair_sum) = (0.0, 0.0);
            for (k, &v) in x.iter().enumerate() {
                let (c_lo, s_lo) = tree.prefix(rank[k]);
                let c_hi = k as u32 - c_lo;
                let s_hi = total_sum - s_lo;
                pair_sum += (v * c_lo as f64 - s_lo) + (s_hi - v * c_hi as f64);
                tree.add(rank[k], v);
                total_sum += v;
                let m = k + 1;
                out.push(if m < 2 { 0.0 } else { 2.0 * pair_sum / (m * (m - 1)) as f64 });
            }
        }
    }
    Ok(out)
}

/// Empirical influence values `h_i` of the full-sample estimator.
pub fn influence_values(x: &[f64], est: ScaleEstimator) -> Result<Vec<f64>> {
    check_sample(x)?;
    let n = x.len();
    match est {
        ScaleEstimator::Md => {
            let m = median(x)?;
            let md = md_scale(x)?;
            Ok(x.iter().map(|v| (v - m).abs() - md).collect())
        }
        ScaleEstimator::Gmd => {
            let g = gmd_scale(x)?;
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
            let total: f64 = x.iter().sum();
            let mut h = vec![0.0; n];
            let mut below = 0.0;
            for (r, &i) in order.iter().enumerate() {
                let v = x[i];
                let above = total - below - v;
                let abs_sum = (v * r as f64 - below) + (above - v * (n - r - 1) as f64);
                h[i] = 2.0 * abs_sum / n as f64 - g;
                below += v;
            }
            Ok(h)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleCusumResult {
    /// Corrected statistic on the `sup |.|` scale.
    pub statistic: f64,
    pub uncorrected_statistic: f64,
    pub estimator_id: ScaleEstimator,
    pub v_hat: f64,
    pub bandwidth: f64,
    pub corrected: bool,
    pub critical_value: f64,
    pub alpha: f64,
    pub reject: bool,
    /// 1-based argmax `k` of the weighted difference, in `[1, T-1]`.
    pub change_point_index: usize,
}

/// `max_k (k / sqrt(T v_hat)) |s_{1:k} - s_{1:T}|` plus the finite-sample
/// correction, compared with the square root of the `s = 1` table value.
pub fn scale_cusum_test(x: &[f64], est: ScaleEstimator, alpha: f64) -> Result<ScaleCusumResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let n = x.len();
    if n < MIN_OBS {
        return Err(Error::TooShort { len: n, min: MIN_OBS });
    }
    let h = influence_values(x, est).at(Stage::Transform)?;
    let bandwidth = baseline_bandwidth(est.bandwidth_rule(), n);
    let lrv = long_run_cov(&DMatrix::from_column_slice(n, 1, &h), bandwidth, Kernel::FlatTop)
        .at(Stage::LongRunCov)?;
    let v_hat = lrv.u_hat[(0, 0)];
    if lrv.eigen_floor_applied || !(v_hat > 0.0) {
        return Err(Error::DegenerateLrv(v_hat)).at(Stage::LongRunCov);
    }

    let seq = sequential_scales(x, est).at(Stage::Cusum)?;
    let full = seq[n - 1];
    let norm = (n as f64 * v_hat).sqrt();
    let mut best = f64::NEG_INFINITY;
    let mut argmax = 1;
    for (i, s) in seq.iter().enumerate() {
        let v = (i + 1) as f64 / norm * (s - full).abs();
        if v > best {
            best = v;
            argmax = i + 1;
        }
    }
    let statistic = finite_sample_correction(best, n).at(Stage::Cusum)?;
    let level = 1.0 - alpha;
    let q = match lookup_quantile(1, level) {
        Ok(q) => q,
        Err(_) => simulate_bessel_sup_quantile(1, level, &McConfig::default()).at(Stage::CriticalValue)?,
    };
    let critical_value = q.sqrt();
    Ok(ScaleCusumResult {
        statistic,
        uncorrected_statistic: best,
        estimator_id: est,
        v_hat,
        bandwidth,
        corrected: true,
        critical_value,
        alpha,
        reject: statistic > critical_value,
        change_point_index: argmax.min(n - 1),
    })
}
