//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use rcp_core::baselines::gmd_scale;
use rcp_core::critvals::{McConfig, NullDistribution, QuantileTable};
use rcp_core::cusum::{
    cusum_process_quadratic, cusum_process_univariate, finite_sample_correction, run_test, Functional, TestConfig,
    CORRECTION_CONSTANT, ZETA_HALF_ABS,
};
use rcp_core::longrun::{long_run_cov, Kernel};
use rcp_core::psi::{PsiSpec, PsiVariant};
use rcp_core::rng::stream;
use rcp_core::simlab::{sample_var1_t, sigma_two, CovSwitch, Var1Spec};
use rcp_core::TimeSeries;

struct Report {
    lines: Vec<(usize, bool, String)>,
}

impl Report {
    fn record(&mut self, id: usize, pass: bool, detail: String) {
        println!("criterion {id}: {} - {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((id, pass, detail));
    }
}

/// `P(sup |BB| <= x)` from the alternating series.
fn kolmogorov_cdf(x: f64) -> f64 {
    let mut s = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    1.0 - 2.0 * s
}

fn kolmogorov_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (0.3, 3.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn criterion_1(rep: &mut Report) {
    let table = QuantileTable::embedded();
    let cfg = McConfig::default();
    let start = Instant::now();
    let mut worst = (0usize, 0.0f64, 0.0f64);
    let mut worst_uncorrected = 0.0f64;
    let mut misses = Vec::new();
    let mut q_1_95 = f64::NAN;
    let shift = CORRECTION_CONSTANT / (cfg.n_grid as f64).sqrt();
    for &s in table.dims() {
        let d = NullDistribution::simulate(s, Functional::Sup, &cfg).expect("simulation");
        for &level in table.levels() {
            let q = d.quantile(level).expect("quantile");
            let t = table.get(s, level).expect("tabulated");
            let rel = q / t - 1.0;
            if rel.abs() > worst.2.abs() {
                worst = (s, level, rel);
            }
            if rel.abs() > 0.02 {
                misses.push(format!("s={s} level={level} rel={rel:+.4}"));
            }
            // the shift is monotone, so the unshifted quantile maps back exactly
            let raw = (q.sqrt() - shift).powi(2);
            worst_uncorrected = worst_uncorrected.max((raw / t - 1.0).abs());
            if s == 1 && level == 0.95 {
                q_1_95 = q;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let kolmogorov = kolmogorov_quantile(0.95);
    let root_ok = (q_1_95.sqrt() - kolmogorov).abs() < 0.012;
    let point_ok = (q_1_95 - 1.844).abs() < 0.03;
    let pass = misses.is_empty() && root_ok && point_ok && secs < 120.0;
    rep.record(
        1,
        pass,
        format!(
            "embedded quantile table by Monte Carlo (n_grid={}, n_rep={}, seed={}): {} of 36 within 2%, worst s={} level={} rel={:+.4}; \
             q(1,0.95)={:.4}, sqrt={:.4} vs Kolmogorov {:.4}; {:.1}s{}; without grid shift worst |rel|={:.4}",
            cfg.n_grid,
            cfg.n_rep,
            cfg.seed,
            36 - misses.len(),
            worst.0,
            worst.1,
            worst.2,
            q_1_95,
            q_1_95.sqrt(),
            kolmogorov,
            secs,
            if misses.is_empty() { String::new() } else { format!("; misses: {}", misses.join(", ")) },
            worst_uncorrected,
        ),
    );
}

fn rejection_rate<F>(n_rep: usize, seed: u64, spec: &PsiSpec, cfg: &TestConfig, gen: F) -> (f64, usize)
where
    F: Fn(&mut rcp_core::rng::StreamRng) -> TimeSeries + Sync,
{
    let results: Vec<Option<bool>> = (0..n_rep as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, r);
            let x = gen(&mut rng);
            run_test(&x, spec, cfg).ok().map(|o| o.reject)
        })
        .collect();
    let ok = results.iter().filter(|r| r.is_some()).count();
    let hits = results.iter().filter(|r| **r == Some(true)).count();
    (hits as f64 / ok as f64, n_rep - ok)
}

fn criterion_2(rep: &mut Report) {
    let spec = PsiSpec::new(PsiVariant::HuberVar).with_chi2_level(0.95);
    let cfg = TestConfig::default();
    let t = 400;
    let normal = |rng: &mut rcp_core::rng::StreamRng| {
        let v: Vec<f64> = (0..t).map(|_| StandardNormal.sample(rng)).collect();
        TimeSeries::univariate(&v).unwrap()
    };
    let cauchy = |rng: &mut rcp_core::rng::StreamRng| {
        let v: Vec<f64> = (0..t)
            .map(|_| {
                let a: f64 = StandardNormal.sample(rng);
                let b: f64 = StandardNormal.sample(rng);
                a / b
            })
            .collect();
        TimeSeries::univariate(&v).unwrap()
    };
    let (rn, fn_) = rejection_rate(2000, 21, &spec, &cfg, normal);
    let (rc, fc) = rejection_rate(2000, 22, &spec, &cfg, cauchy);
    let pass = (0.03..=0.07).contains(&rn) && (0.03..=0.07).contains(&rc) && fn_ == 0 && fc == 0;
    rep.record(
        2,
        pass,
        format!("univariate size, hubervar k^2=q(0.95), T=400, 2000 reps: normal {rn:.4}, cauchy {rc:.4} (band [0.03, 0.07])"),
    );
}

fn var1(rng: &mut rcp_core::rng::StreamRng, p: usize, df: f64, t: usize, switch: Option<&CovSwitch>) -> TimeSeries {
    sample_var1_t(&Var1Spec::new(0.0, p, df, t), switch, rng).unwrap()
}

fn criterion_3(rep: &mut Report) {
    let spec = PsiSpec::new(PsiVariant::HuberCovJoint).with_chi2_level(0.8);
    let cfg = TestConfig::default();
    let (rg, fg) = rejection_rate(1000, 31, &spec, &cfg, |r| var1(r, 2, f64::INFINITY, 400, None));
    let (rt, ft) = rejection_rate(1000, 32, &spec, &cfg, |r| var1(r, 2, 3.0, 400, None));
    let pass = (0.02..=0.10).contains(&rg) && (0.02..=0.10).contains(&rt) && fg == 0 && ft == 0;
    rep.record(
        3,
        pass,
        format!(
            "multivariate size, joint Huber covariance level 0.8, VAR(1) rho=0 p=2 T=400, 1000 reps: \
             gaussian {rg:.4}, t3 {rt:.4} (band [0.02, 0.10])"
        ),
    );
}

fn criterion_4(rep: &mut Report) {
    let huber = PsiSpec::new(PsiVariant::HuberCovJoint).with_chi2_level(0.8);
    let classical = PsiSpec::new(PsiVariant::HuberCovJoint).with_k(f64::INFINITY);
    let cfg = TestConfig::default();
    let sw = CovSwitch { after: sigma_two().unwrap(), t_switch: 200 };
    let mut rates = Vec::new();
    for (seed, df) in [(41u64, 3.0), (42, f64::INFINITY)] {
        let gen = |r: &mut rcp_core::rng::StreamRng| var1(r, 4, df, 400, Some(&sw));
        let (h, _) = rejection_rate(500, seed, &huber, &cfg, gen);
        let (c, _) = rejection_rate(500, seed, &classical, &cfg, gen);
        rates.push((h, c));
    }
    let (h3, c3) = rates[0];
    let (hg, cg) = rates[1];
    let pass = h3 > c3 && (hg - cg).abs() <= 0.10;
    rep.record(
        4,
        pass,
        format!(
            "power under innovation switch to sigma-two, T=400, 500 reps: df=3 huber {h3:.3} vs classical {c3:.3}; \
             df=inf huber {hg:.3} vs classical {cg:.3}"
        ),
    );
}

fn naive_lrv(y: &DMatrix<f64>, b: f64) -> DMatrix<f64> {
    let (n, s) = y.shape();
    let mean: Vec<f64> = (0..s).map(|j| y.column(j).mean()).collect();
    let mut u = DMatrix::zeros(s, s);
    for i in 0..n {
        for j in 0..n {
            let x = (i as f64 - j as f64).abs() / b;
            let w = if x <= 0.5 {
                1.0
            } else if x < 1.0 {
                2.0 - 2.0 * x
            } else {
                0.0
            };
            if w == 0.0 {
                continue;
            }
            for a in 0..s {
                for c in 0..s {
                    u[(a, c)] += w * (y[(i, a)] - mean[a]) * (y[(j, c)] - mean[c]);
                }
            }
        }
    }
    u / n as f64
}

fn brute_gmd(x: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += (x[i] - x[j]).abs();
        }
    }
    2.0 * s / (n * (n - 1)) as f64
}

fn criterion_5(rep: &mut Report) {
    let mut failures: Vec<String> = Vec::new();
    let mut rng = stream(5, 0);

    // boundedness on adversarial inputs
    let magnitudes = [0.0, 1e-300, 1e-8, 1.0, 1e8, 1e150, 1e300];
    for variant in PsiVariant::ALL {
        let p = match variant {
            PsiVariant::HuberVar | PsiVariant::LogHuberVar | PsiVariant::ExpScore => 1,
            _ => 3,
        };
        let mut spec = PsiSpec::new(variant);
        if variant.needs_threshold() {
            spec = spec.with_k(1.5);
        }
        if variant == PsiVariant::Projection {
            spec = spec.with_direction(vec![1.0, -2.0, 0.5]);
        }
        let psi = spec.resolve(p).unwrap();
        let bound = psi.bound();
        for _ in 0..2000 {
            let z: Vec<f64> = (0..p)
                .map(|_| {
                    let m = magnitudes[rng.gen_range(0..magnitudes.len())];
                    let sign = if variant.is_uncentered() || rng.gen::<bool>() { 1.0 } else { -1.0 };
                    let v = sign * m * rng.gen_range(0.5..2.0);
                    if variant == PsiVariant::LogHuberVar && v == 0.0 { 1e-300 } else { v }
                })
                .collect();
            let out = psi.eval(&z).unwrap();
            if out.iter().any(|v| !v.is_finite() || v.abs() > bound * (1.0 + 1e-12)) {
                failures.push(format!("bound {variant} at {z:?}"));
                break;
            }
        }
    }

    // affine invariance of run_test statistics
    for seed in 0..20u64 {
        let mut r = stream(50, seed);
        let v: Vec<f64> = (0..200).map(|_| StandardNormal.sample(&mut r)).collect();
        let x = TimeSeries::from_row_major(&v, 100, 2).unwrap();
        let (a, b) = (r.gen_range(0.001..1000.0), r.gen_range(-100.0..100.0));
        let y = x.map_rows(|_, row| row.iter_mut().for_each(|u| *u = a * *u + b));
        for variant in [PsiVariant::HuberMultivariate, PsiVariant::HuberCovJoint, PsiVariant::SpatialSignCov] {
            let mut spec = PsiSpec::new(variant);
            if variant.needs_threshold() {
                spec = spec.with_chi2_level(0.9);
            }
            let s0 = run_test(&x, &spec, &TestConfig::default()).unwrap().statistic;
            let s1 = run_test(&y, &spec, &TestConfig::default()).unwrap().statistic;
            if (s0 - s1).abs() > 1e-8 * (1.0 + s0.abs()) {
                failures.push(format!("affine {variant}: {s0} vs {s1}"));
            }
        }
    }

    // lag-sum long-run covariance against the double sum; bandwidth <= 1
    for seed in 0..30u64 {
        let mut r = stream(51, seed);
        let n = r.gen_range(2..=200);
        let s = r.gen_range(1..=3);
        let y = DMatrix::from_fn(n, s, |_, _| StandardNormal.sample(&mut r));
        let b = r.gen_range(0.5..30.0);
        if let Ok(l) = long_run_cov(&y, b, Kernel::FlatTop) {
            let o = naive_lrv(&y, b);
            if !l.eigen_floor_applied && (&l.u_hat - &o).amax() > 1e-10 {
                failures.push(format!("lrv T={n} b={b}"));
            }
        }
        let l = long_run_cov(&y, 1.0, Kernel::FlatTop).unwrap();
        let centered = DMatrix::from_fn(n, s, |i, j| y[(i, j)] - y.column(j).mean());
        let cov = centered.transpose() * &centered / n as f64;
        if !l.eigen_floor_applied && (&l.u_hat - cov).amax() > 1e-12 {
            failures.push(format!("sample covariance T={n}"));
        }
    }

    // GMD fast path
    for seed in 0..200u64 {
        let mut r = stream(52, seed);
        let n = r.gen_range(2..100);
        let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        if (gmd_scale(&x).unwrap() - brute_gmd(&x)).abs() > 1e-10 {
            failures.push(format!("gmd seed {seed}"));
        }
    }

    // W^2(1) = 0 and the s = 1 identity
    for seed in 0..50u64 {
        let mut r = stream(53, seed);
        let n = r.gen_range(2..300);
        let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let v = r.gen_range(0.01..10.0);
        let w = cusum_process_univariate(&y, v).unwrap();
        let q = cusum_process_quadratic(&DMatrix::from_column_slice(n, 1, &y), &DMatrix::from_element(1, 1, 1.0 / v))
            .unwrap();
        if *q.values.last().unwrap() != 0.0 {
            failures.push("W^2(1) != 0".into());
        }
        if w.iter().zip(&q.values).any(|(a, b)| (a * a - b).abs() > 1e-12 * (1.0 + b.abs())) {
            failures.push(format!("s=1 identity seed {seed}"));
        }
    }

    // thread-count independence of simulated quantiles
    let cfg = McConfig { n_grid: 300, n_rep: 5000, seed: 99, ..McConfig::default() };
    let sim = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| NullDistribution::simulate(3, Functional::Sup, &cfg).unwrap())
    };
    let (a, b) = (sim(1), sim(4));
    if a.draws().iter().zip(b.draws()).any(|(u, v)| u.to_bits() != v.to_bits()) {
        failures.push("thread-count dependence".into());
    }

    rep.record(
        5,
        failures.is_empty(),
        if failures.is_empty() {
            "boundedness, affine invariance, lag-sum oracle, bandwidth<=1 covariance, GMD oracle, W^2(1)=0, \
             s=1 identity, thread-count determinism"
                .into()
        } else {
            failures.join("; ")
        },
    );
}

/// `zeta(1/2)` from the Hasse series of the eta function,
/// accelerated with the Euler transform on forward differences.
fn zeta_half_euler() -> f64 {
    let terms: i32 = 60;
    let mut eta = 0.0;
    for n in 0..terms {
        let mut diff = 0.0;
        let mut binom = 1.0f64;
        for k in 0..=n {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            diff += sign * binom / ((k + 1) as f64).sqrt();
            binom *= (n - k) as f64 / (k + 1) as f64;
        }
        eta += diff / 2f64.powi(n + 1);
    }
    eta / (1.0 - 2f64.sqrt())
}

fn criterion_6(rep: &mut Report) {
    // published value of |zeta(1/2)|
    let table_value = 1.460_354_508_809_586_8;
    let series = zeta_half_euler();
    let c = finite_sample_correction(0.0, 100).unwrap();
    let pass = (c - 0.058_259_7).abs() < 1e-6
        && (ZETA_HALF_ABS - table_value).abs() < 1e-15
        && (series + ZETA_HALF_ABS).abs() < 1e-12
        && (CORRECTION_CONSTANT - ZETA_HALF_ABS / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15;
    rep.record(
        6,
        pass,
        format!("correction at T=100 = {c:.9}; |zeta(1/2)| = {ZETA_HALF_ABS} (series {:.15})", -series),
    );
}

fn main() {
    // `cargo test` passes harness flags; honour a name filter if one is given
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut rep = Report { lines: Vec::new() };
    type Criterion = (usize, fn(&mut Report));
    let criteria: [Criterion; 6] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
    ];
    for (id, f) in criteria {
        if let Some(fl) = &filter {
            if !format!("criterion_{id}").contains(fl.as_str()) {
                continue;
            }
        }
        f(&mut rep);
    }
    let failed: Vec<usize> = rep.lines.iter().filter(|l| !l.1).map(|l| l.0).collect();
    println!(
        "acceptance: {} passed, {} failed",
        rep.lines.len() - failed.len(),
        failed.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
