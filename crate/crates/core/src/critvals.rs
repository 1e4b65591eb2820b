//! Critical values for the quadratic cusum statistic under the null.
//!
//! The limit of `W_T^2` is the squared norm of an `s`-dimensional Brownian
//! bridge. Quantiles of its supremum are shipped as a small embedded table
//! and can be simulated for any `s` and any supported functional.
//!
//! Two constructions of the discretized bridge are available and produce the
//! same finite-dimensional law on the grid `k / n_grid`:
//!
//! * [`BridgeEngine::PartialSums`]: `s` bridges from cumulative sums of iid
//!   normals with the end value removed proportionally. Cost `O(s n_grid)`.
//! * [`BridgeEngine::BesselMarkov`]: uses `BB(t) = (1 - t) W(t / (1 - t))`
//!   and the Markov property of `|W|^2`, whose transitions are scaled
//!   noncentral chi-square. Cost `O(n_grid)` whatever `s` is.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cusum::{Functional, CORRECTION_CONSTANT};
use crate::error::{Error, Result};
use crate::rng;

const EMBEDDED_TABLE: &str = include_str!("../data/sup_bessel_bridge_quantiles.csv");

/// Tabulated quantiles of `sup_x sum_{i<=s} BB_i(x)^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTable {
    dims: Vec<usize>,
    levels: Vec<f64>,
    /// `values[level_idx][dim_idx]`
    values: Vec<Vec<f64>>,
}

impl QuantileTable {
    /// Parses `level,<s1>,<s2>,...` CSV text and checks monotonicity in both
    /// directions.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::Input("empty quantile table".into()))?;
        let dims = header
            .split(',')
            .skip(1)
            .map(|c| c.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Input(format!("quantile table header: {e}")))?;
        let mut levels = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let cells = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Input(format!("quantile table line {}: {e}", lineno + 2)))?;
            if cells.len() != dims.len() + 1 {
                return Err(Error::Input(format!(
                    "quantile table line {} has {} cells",
                    lineno + 2,
                    cells.len()
                )));
            }
            levels.push(cells[0]);
            values.push(cells[1..].to_vec());
        }
        let table = Self { dims, levels, values };
        table.check_monotone()?;
        Ok(table)
    }

    fn check_monotone(&self) -> Result<()> {
        let inc = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        let dims_ok = self.dims.windows(2).all(|w| w[0] < w[1]);
        let rows_ok = self.values.iter().all(|row| inc(row));
        let cols_ok = (0..self.dims.len())
            .all(|j| inc(&self.values.iter().map(|r| r[j]).collect::<Vec<_>>()));
        if dims_ok && rows_ok && cols_ok && inc(&self.levels) {
            Ok(())
        } else {
            Err(Error::Input("quantile table is not strictly increasing".into()))
        }
    }

    pub fn embedded() -> &'static QuantileTable {
        static TABLE: OnceLock<QuantileTable> = OnceLock::new();
        TABLE.get_or_init(|| QuantileTable::parse(EMBEDDED_TABLE).expect("embedded table is valid"))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn get(&self, s: usize, level: f64) -> Option<f64> {
        let j = self.dims.iter().position(|d| *d == s)?;
        let i = self.levels.iter().position(|l| (l - level).abs() < 1e-9)?;
        Some(self.values[i][j])
    }

    /// All `(s, level, value)` entries.
    pub fn entries(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.levels.iter().enumerate().flat_map(move |(i, &l)| {
            self.dims
                .iter()
                .enumerate()
                .map(move |(j, &d)| (d, l, self.values[i][j]))
        })
    }
}

/// Tabulated quantile at probability `level` (e.g. 0.95).
pub fn lookup_quantile(s: usize, level: f64) -> Result<f64> {
    QuantileTable::embedded()
        .get(s, level)
        .ok_or(Error::NotTabulated { s, level })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BridgeEngine {
    #[default]
    BesselMarkov,
    PartialSums,
}

/// Monte Carlo settings for simulated null distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub n_grid: usize,
    pub n_rep: usize,
    pub seed: u64,
    /// Shift each simulated grid supremum by `0.5826 / sqrt(n_grid)` on the
    /// `sqrt` scale. The grid maximum of a Brownian path falls short of the
    /// continuous supremum by about that much; without the shift the
    /// quantiles at `n_grid = 2000` sit 1-2% low.
    pub correction: bool,
    pub engine: BridgeEngine,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_grid: 2000,
            n_rep: 100_000,
            seed: 20_190_101,
            correction: true,
            engine: BridgeEngine::default(),
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid < 100 {
            return Err(Error::invalid(format!("n_grid must be >= 100, got {}", self.n_grid)));
        }
        if self.n_rep < 1000 {
            return Err(Error::invalid(format!("n_rep must be >= 1000, got {}", self.n_rep)));
        }
        Ok(())
    }
}

/// Running reduction of a path `v_1..v_n` into a functional value.
struct Reducer {
    functional: Functional,
    n: usize,
    acc: f64,
}

impl Reducer {
    fn new(functional: Functional, n: usize) -> Self {
        let acc = match functional {
            Functional::Integral => 0.0,
            _ => f64::NEG_INFINITY,
        };
        Self { functional, n, acc }
    }

    /// `k` in `1..n`; the endpoint `k = n` is identically zero.
    fn push(&mut self, k: usize, v: f64) {
        match self.functional {
            Functional::Sup => self.acc = self.acc.max(v),
            Functional::Integral => self.acc += v,
            Functional::WeightedSup { exponent } => {
                let t = k as f64 / self.n as f64;
                self.acc = self.acc.max(v / (t * (1.0 - t)).powf(exponent));
            }
        }
    }

    fn finish(self) -> f64 {
        match self.functional {
            Functional::Integral => self.acc / self.n as f64,
            // include the zero endpoint
            Functional::Sup => self.acc.max(0.0),
            Functional::WeightedSup { .. } => self.acc,
        }
    }
}

fn path_bessel_markov<R: Rng>(s: usize, n: usize, functional: Functional, rng: &mut R) -> f64 {
    let chi = (s > 1).then(|| ChiSquared::new((s - 1) as f64).expect("positive dof"));
    let nf = n as f64;
    let mut red = Reducer::new(functional, n);
    let mut r = 0.0f64;
    let mut u_prev = 0.0f64;
    for k in 1..n {
        let u = k as f64 / (n - k) as f64;
        let du = u - u_prev;
        let z: f64 = StandardNormal.sample(rng);
        let a = z + (r / du).sqrt();
        let mut x = a * a;
        if let Some(chi) = &chi {
            x += chi.sample(rng);
        }
        r = du * x;
        let w = (n - k) as f64 / nf;
        red.push(k, w * w * r);
        u_prev = u;
    }
    red.finish()
}

fn path_partial_sums<R: Rng>(s: usize, n: usize, functional: Functional, rng: &mut R) -> f64 {
    let mut total = vec![0.0f64; n + 1];
    let mut walk = vec![0.0f64; n + 1];
    let scale = 1.0 / (n as f64).sqrt();
    for _ in 0..s {
        for k in 1..=n {
            let z: f64 = StandardNormal.sample(rng);
            walk[k] = walk[k - 1] + z * scale;
        }
        let end = walk[n];
        for k in 1..=n {
            let b = walk[k] - (k as f64 / n as f64) * end;
            total[k] += b * b;
        }
    }
    let mut red = Reducer::new(functional, n);
    for (k, v) in total.iter().enumerate().take(n).skip(1) {
        red.push(k, *v);
    }
    red.finish()
}

/// Simulated draws of a functional of the squared `s`-dimensional bridge.
#[derive(Debug, Clone)]
pub struct NullDistribution {
    s: usize,
    functional: Functional,
    cfg: McConfig,
    sorted: Vec<f64>,
}

impl NullDistribution {
    pub fn simulate(s: usize, functional: Functional, cfg: &McConfig) -> Result<Self> {
        if s == 0 {
            return Err(Error::invalid("dimension s must be >= 1"));
        }
        cfg.validate()?;
        functional.validate()?;
        let n = cfg.n_grid;
        let shift = CORRECTION_CONSTANT / (n as f64).sqrt();
        let apply_shift = cfg.correction && functional == Functional::Sup;
        let mut draws: Vec<f64> = (0..cfg.n_rep as u64)
            .into_par_iter()
            .map(|r| {
                let mut rng = rng::stream(cfg.seed, r);
                let v = match cfg.engine {
                    BridgeEngine::BesselMarkov => path_bessel_markov(s, n, functional, &mut rng),
                    BridgeEngine::PartialSums => path_partial_sums(s, n, functional, &mut rng),
                };
                if apply_shift {
                    let a = v.sqrt() + shift;
                    a * a
                } else {
                    v
                }
            })
            .collect();
        draws.sort_by(f64::total_cmp);
        Ok(Self {
            s,
            functional,
            cfg: *cfg,
            sorted: draws,
        })
    }

    pub fn dim(&self) -> usize {
        self.s
    }

    pub fn functional(&self) -> Functional {
        self.functional
    }

    pub fn config(&self) -> &McConfig {
        &self.cfg
    }

    pub fn draws(&self) -> &[f64] {
        &self.sorted
    }

    /// Empirical quantile `x_(ceil(level * n))`.
    pub fn quantile(&self, level: f64) -> Result<f64> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::invalid(format!("quantile level must lie in (0, 1), got {level}")));
        }
        let n = self.sorted.len();
        let idx = ((level * n as f64).ceil() as usize).clamp(1, n) - 1;
        Ok(self.sorted[idx])
    }

    /// Fraction of draws strictly above `statistic`.
    pub fn p_value(&self, statistic: f64) -> PValue {
        let n = self.sorted.len();
        let below_or_eq = self.sorted.partition_point(|v| *v <= statistic);
        PValue {
            p: (n - below_or_eq) as f64 / n as f64,
            mc_error: 1.0 / (n as f64).sqrt(),
        }
    }
}

/// A Monte Carlo p-value with its nominal simulation error `1/sqrt(n_rep)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PValue {
    pub p: f64,
    pub mc_error: f64,
}

/// Simulated `level`-quantile of `sup_x sum_{i<=s} BB_i(x)^2`.
pub fn simulate_bessel_sup_quantile(s: usize, level: f64, cfg: &McConfig) -> Result<f64> {
    NullDistribution::simulate(s, Functional::Sup, cfg)?.quantile(level)
}

/// Simulated p-value of an observed supremum statistic.
pub fn p_value(statistic: f64, s: usize, cfg: &McConfig) -> Result<PValue> {
    if !(statistic >= 0.0) {
        return Err(Error::invalid(format!("statistic must be >= 0, got {statistic}")));
    }
    Ok(NullDistribution::simulate(s, Functional::Sup, cfg)?.p_value(statistic))
}
