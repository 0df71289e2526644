//! Seeded property suites over every module.
//!
//! Each suite draws its instances from its own ChaCha generator derived
//! from the options' seed, so running one suite alone reproduces the same
//! instances as running it inside the full set. A suite counts its checks,
//! tracks the smallest slack seen, and keeps the first failing input as a
//! witness.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{
    aggregate_cwtm, aggregate_smea, check_robustness, kappa_cwtm, kappa_smea, trimmed_mean,
    GradientBatch, OpNorm, RobustnessSpec,
};
use crate::analysis::{
    covariance_lemma_check, cwtm_cocoercivity_counterexample, refined_covariance_check,
    theorem_bound, BoundQuery, Theorem,
};
use crate::engine::{
    first_divergence_step, run, run_paired, Algorithm, HonestWorker, NeighboringPair, RunConfig,
    Schedule, Trajectory, WorkerSet,
};
use crate::error::{Error, Result};
use crate::experiments::{
    byzantine_cell, empirical_kappa_bound, poisoning_cell, projected_report,
    strongly_convex_report, SweepSettings,
};
use crate::linalg::{
    binomial, covariance_stats, enumerate_subsets, max_eigenvalue_sym, IndexSubset, SquareMatrix,
    Vector,
};
use crate::losses::{DataPoint, LossModel, ProjectionDomain};
use crate::threats::{byzantine_identity_table, ConstructionParams};

/// Options shared by all suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Multiplies both robustness coefficients in the certification suite.
    /// Values below 1 should make the suite fail.
    pub kappa_scale: f64,
    /// Monte-Carlo seeds of the projected-SGD suite.
    pub projected_seeds: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            kappa_scale: 1.0,
            projected_seeds: 10_000,
        }
    }
}

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub checks: u64,
    pub failures: u64,
    /// Smallest `bound - measured` seen; nonnegative means every check had
    /// room.
    pub worst_slack: f64,
    /// First failing input.
    pub witness: Option<String>,
}

impl SuiteReport {
    fn new(name: &str) -> Self {
        SuiteReport {
            name: name.to_string(),
            checks: 0,
            failures: 0,
            worst_slack: f64::INFINITY,
            witness: None,
        }
    }

    /// No check failed.
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    /// Records a check with slack `slack` that fails when `slack < -tol`.
    fn check(&mut self, slack: f64, tol: f64, witness: impl FnOnce() -> String) {
        self.checks += 1;
        if slack.is_nan() || slack < self.worst_slack {
            self.worst_slack = slack;
        }
        if slack.is_nan() || slack < -tol {
            self.fail(witness);
        }
    }

    /// Records a check that either holds or not.
    fn check_that(&mut self, ok: bool, witness: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.fail(witness);
        }
    }

    fn fail(&mut self, witness: impl FnOnce() -> String) {
        self.failures += 1;
        if self.witness.is_none() {
            self.witness = Some(witness());
        }
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<15} {} {}/{} checks passed, worst slack {:.3e}",
            self.name,
            if self.passed() { "PASS" } else { "FAIL" },
            self.checks - self.failures,
            self.checks,
            self.worst_slack
        )?;
        if let Some(w) = &self.witness {
            write!(f, "\n  witness: {w}")?;
        }
        Ok(())
    }
}

/// Suite names in execution order.
pub const SUITE_NAMES: [&str; 13] = [
    "linalg",
    "losses",
    "robustness",
    "trimmed-mean",
    "expansivity",
    "counterexample",
    "pick-lemma",
    "coupling",
    "covariance",
    "constructions",
    "generalization",
    "bounds",
    "projected",
];

/// Runs the named suite.
pub fn run_suite(name: &str, opts: &VerifyOptions) -> Result<SuiteReport> {
    let rng =
        |salt: u64| ChaCha8Rng::seed_from_u64(opts.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    match name {
        "linalg" => linalg_suite(&mut rng(1)),
        "losses" => losses_suite(&mut rng(2)),
        "robustness" => robustness_suite(&mut rng(3), opts.kappa_scale, 1000),
        "trimmed-mean" => trimmed_mean_suite(&mut rng(4), 10_000),
        "expansivity" => expansivity_suite(&mut rng(5), 10_000),
        "counterexample" => counterexample_suite(),
        "pick-lemma" => pick_lemma_suite(&mut rng(7), 500),
        "coupling" => coupling_suite(&mut rng(8), 100),
        "covariance" => covariance_suite(&mut rng(9), 100),
        "constructions" => constructions_suite(),
        "generalization" => generalization_suite(),
        "bounds" => bounds_suite(),
        "projected" => projected_suite(opts),
        other => Err(Error::validation(format!(
            "unknown suite '{other}' (available: {})",
            SUITE_NAMES.join(", ")
        ))),
    }
}

/// Runs every suite in order.
pub fn run_all(opts: &VerifyOptions) -> Result<Vec<SuiteReport>> {
    SUITE_NAMES
        .iter()
        .map(|name| run_suite(name, opts))
        .collect()
}

fn uniform_vector(rng: &mut ChaCha8Rng, d: usize, half_width: f64) -> Vector {
    Vector::new(
        (0..d)
            .map(|_| rng.gen_range(-half_width..=half_width))
            .collect(),
    )
    .expect("finite entries")
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vector {
    loop {
        let v = uniform_vector(rng, d, 1.0);
        let norm = v.norm();
        if norm > 1e-3 && norm <= 1.0 {
            return v.scale(1.0 / norm);
        }
    }
}

fn vectors_repr(vs: &[Vector]) -> String {
    let rows: Vec<Vec<f64>> = vs.iter().map(|v| v.as_slice().to_vec()).collect();
    format!("{rows:?}")
}

fn linalg_suite(rng: &mut ChaCha8Rng) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("linalg");
    for _ in 0..2000 {
        let d = rng.gen_range(1..=6);
        let mut m = SquareMatrix::zeros(d);
        for i in 0..d {
            for j in i..d {
                let x = rng.gen_range(-3.0..3.0);
                m.set(i, j, x);
                m.set(j, i, x);
            }
        }
        let top = max_eigenvalue_sym(&m)?;
        for _ in 0..5 {
            let u = unit_vector(rng, d);
            let q = m.quadratic_form(u.as_slice());
            rep.check(top - q, 1e-8, || {
                format!("uᵀMu = {q} > λ_max = {top} for u = {u}")
            });
        }
        // λ_max·I - M is positive semidefinite, so its top eigenvalue is at
        // least the largest diagonal deviation.
        let diag_max = (0..d)
            .map(|i| m.get(i, i))
            .fold(f64::NEG_INFINITY, f64::max);
        rep.check(top - diag_max, 1e-8, || {
            format!("λ_max {top} below a diagonal entry {diag_max}")
        });
    }
    for _ in 0..500 {
        let d = rng.gen_range(1..=4);
        let k = rng.gen_range(1..=8);
        let vs: Vec<Vector> = (0..k).map(|_| uniform_vector(rng, d, 2.0)).collect();
        let stats = covariance_stats(&vs, &IndexSubset::full(k))?;
        let mean = Vector::mean_of(&vs).expect("nonempty");
        let direct = vs.iter().map(|v| (v - &mean).norm_sq()).sum::<f64>() / k as f64;
        rep.check(1e-8 - (stats.trace - direct).abs(), 0.0, || {
            format!(
                "trace {} vs direct {direct} for {}",
                stats.trace,
                vectors_repr(&vs)
            )
        });
        rep.check(stats.trace - stats.lambda_max, 1e-8, || {
            format!("λ_max {} above trace {}", stats.lambda_max, stats.trace)
        });
        rep.check(stats.lambda_max - stats.trace / d as f64, 1e-8, || {
            format!("λ_max {} below trace/d", stats.lambda_max)
        });
    }
    for (n, k) in [(3, 2), (5, 5), (6, 1), (10, 4), (15, 8)] {
        let subsets: Vec<IndexSubset> = enumerate_subsets(n, k)?.collect();
        let mut sorted = subsets.clone();
        sorted.dedup();
        let ok = subsets.len() as u64 == binomial(n, k)
            && sorted.len() == subsets.len()
            && subsets.iter().all(|s| s.len() == k)
            && subsets.windows(2).all(|w| w[0] < w[1]);
        rep.check_that(ok, || {
            format!(
                "enumerate_subsets({n}, {k}) yielded {} subsets",
                subsets.len()
            )
        });
    }
    Ok(rep)
}

fn losses_suite(rng: &mut ChaCha8Rng) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("losses");
    for _ in 0..10_000 {
        let c = rng.gen_range(0.2..3.0);
        let l = rng.gen_range(0.2..3.0);
        let mu = rng.gen_range(0.1..=1.0) * l;
        let (model, theta, theta2, z) = match rng.gen_range(0..3) {
            0 => (
                LossModel::linear1d(c, l)?,
                Vector::scalar(rng.gen_range(-5.0..5.0)),
                Vector::scalar(rng.gen_range(-5.0..5.0)),
                DataPoint::Scalar(rng.gen_range(-c..=c)),
            ),
            1 => {
                let r = c / (2.0 * mu);
                (
                    LossModel::quadratic_mean(c, mu, l)?,
                    Vector::scalar(rng.gen_range(-r..=r)),
                    Vector::scalar(rng.gen_range(-r..=r)),
                    DataPoint::Scalar(rng.gen_range(-r..=r)),
                )
            }
            _ => {
                let d = rng.gen_range(1..=4);
                let x = unit_vector(rng, d).scale(l.sqrt() * rng.gen_range(0.05..=1.0));
                (
                    LossModel::huberized_regression(c, l, ProjectionDomain::None)?,
                    uniform_vector(rng, d, 3.0),
                    uniform_vector(rng, d, 3.0),
                    DataPoint::labeled(x, rng.gen_range(-3.0..3.0)),
                )
            }
        };
        let g = model.gradient(&theta, &z)?;
        rep.check(c - g.norm(), 1e-9, || {
            format!("‖∇ℓ‖ = {} > C = {c} at θ = {theta}, z = {z:?}", g.norm())
        });
        let g2 = model.gradient(&theta2, &z)?;
        let lip = model.l * theta.distance(&theta2) - g.distance(&g2);
        rep.check(lip, 1e-9, || {
            format!("smoothness fails at θ = {theta}, ω = {theta2}, z = {z:?}")
        });

        let h = 1e-6;
        let near_kink = match &z {
            DataPoint::Labeled { x, y } => {
                let r = theta.dot(x) - y;
                (r.abs() * x.norm() - c).abs() <= 2.0 * h * x.norm_sq().max(1.0) * 4.0
            }
            DataPoint::Scalar(_) => false,
        };
        if !near_kink {
            let fd = model.finite_diff_gradient(&theta, &z, h)?;
            let err = fd.distance(&g);
            rep.check(1e-5 - err, 0.0, || {
                format!("finite difference off by {err} at θ = {theta}, z = {z:?}")
            });
        }
    }
    for _ in 0..2000 {
        let d = rng.gen_range(1..=4);
        let domain = if rng.gen_bool(0.5) {
            ProjectionDomain::ball(rng.gen_range(0.1..3.0))?
        } else {
            ProjectionDomain::ray(unit_vector(rng, d))?
        };
        let dim = match &domain {
            ProjectionDomain::Ray { direction } => direction.dim(),
            _ => d,
        };
        let a = uniform_vector(rng, dim, 5.0);
        let b = uniform_vector(rng, dim, 5.0);
        let pa = domain.project(&a);
        let pb = domain.project(&b);
        rep.check(a.distance(&b) - pa.distance(&pb), 1e-12, || {
            format!("projection onto {domain:?} expands {a} and {b}")
        });
    }
    Ok(rep)
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vector> {
    let integer = rng.gen_bool(0.5);
    let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
    (0..n)
        .map(|_| {
            let entries = (0..d)
                .map(|_| {
                    if integer {
                        rng.gen_range(-2i32..=2) as f64
                    } else {
                        scale * rng.gen_range(-1.0..1.0)
                    }
                })
                .collect();
            Vector::new(entries).expect("finite entries")
        })
        .collect()
}

fn robustness_suite(rng: &mut ChaCha8Rng, kappa_scale: f64, batches: usize) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("robustness");
    for _ in 0..batches {
        let n = rng.gen_range(3..=10);
        let d = rng.gen_range(1..=4);
        let vs = random_batch(rng, n, d);
        let batch = GradientBatch::new(vs.clone())?;
        for f in 0..(n + 1) / 2 {
            let cases = [
                (
                    "smea",
                    aggregate_smea(&batch, f)?.aggregate,
                    kappa_smea(n, f)?,
                    OpNorm::Spectral,
                ),
                (
                    "cwtm",
                    aggregate_cwtm(&batch, f)?.aggregate,
                    kappa_cwtm(n, f)?,
                    OpNorm::Trace,
                ),
            ];
            for (rule, out, kappa, norm) in cases {
                let spec = RobustnessSpec {
                    f,
                    kappa: kappa * kappa_scale,
                    norm,
                };
                let cert = check_robustness(&batch, &out, &spec)?;
                rep.checks += 1;
                rep.worst_slack = rep.worst_slack.min(cert.worst_slack);
                if !cert.passed {
                    rep.fail(|| {
                        format!(
                            "rule={rule} n={n} f={f} kappa={} norm={norm} batch={} subset={} slack={:e}",
                            spec.kappa,
                            vectors_repr(&vs),
                            cert.worst_subset,
                            cert.worst_slack
                        )
                    });
                }
            }
        }
    }
    Ok(rep)
}

fn trimmed_mean_suite(rng: &mut ChaCha8Rng, pairs: usize) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("trimmed-mean");
    for _ in 0..pairs {
        let n = rng.gen_range(1..=12);
        let f = rng.gen_range(0..(n + 1) / 2);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let x2: Vec<f64> = x
            .iter()
            .map(|&v| {
                if rng.gen_bool(0.5) {
                    v
                } else {
                    rng.gen_range(-5.0..5.0)
                }
            })
            .collect();
        let diff = trimmed_mean(&x, f)? - trimmed_mean(&x2, f)?;
        let deltas: Vec<f64> = x.iter().zip(&x2).map(|(a, b)| a - b).collect();
        let l1: f64 = deltas.iter().map(|v| v.abs()).sum();
        let lo = deltas.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tol = 1e-12 * (1.0 + l1);
        let w = || format!("n={n} f={f} x={x:?} x'={x2:?} TM(x)-TM(x')={diff}");
        rep.check(l1 / (n - 2 * f) as f64 - diff.abs(), tol, w);
        rep.check(diff - lo, tol, w);
        rep.check(hi - diff, tol, w);
    }
    Ok(rep)
}

/// Per-worker smooth losses used by the expansivity suite.
#[derive(Debug, Clone)]
enum SmoothLoss {
    /// Huberized regression through the library loss; convex.
    Huber(LossModel, DataPoint),
    /// `½(θᵀx - y)² + (μ/2)‖θ‖²`; `(‖x‖² + μ)`-smooth and `μ`-strongly convex.
    Ridge { x: Vector, y: f64, mu: f64 },
    /// `Σ_k s(1 - cos(θ_k - a_k))`; `s`-smooth and nonconvex.
    Wave { a: Vector, s: f64 },
}

impl SmoothLoss {
    fn gradient(&self, theta: &Vector) -> Result<Vector> {
        match self {
            SmoothLoss::Huber(model, z) => model.gradient(theta, z),
            SmoothLoss::Ridge { x, y, mu } => {
                let mut g = x.scale(theta.dot(x) - y);
                g.axpy(*mu, theta);
                Ok(g)
            }
            SmoothLoss::Wave { a, s } => Vector::new(
                theta
                    .as_slice()
                    .iter()
                    .zip(a.as_slice())
                    .map(|(t, a)| s * (t - a).sin())
                    .collect(),
            ),
        }
    }

    fn random(rng: &mut ChaCha8Rng, kind: usize, d: usize, l: f64, mu: f64) -> Result<Self> {
        Ok(match kind {
            0 => {
                let x = unit_vector(rng, d).scale(l.sqrt() * rng.gen_range(0.1..=1.0));
                SmoothLoss::Huber(
                    LossModel::huberized_regression(
                        rng.gen_range(0.2..3.0),
                        l,
                        ProjectionDomain::None,
                    )?,
                    DataPoint::labeled(x, rng.gen_range(-2.0..2.0)),
                )
            }
            1 => SmoothLoss::Ridge {
                x: unit_vector(rng, d).scale((l - mu).max(0.0).sqrt() * rng.gen_range(0.0..=1.0)),
                y: rng.gen_range(-2.0..2.0),
                mu,
            },
            _ => SmoothLoss::Wave {
                a: uniform_vector(rng, d, 3.0),
                s: l * rng.gen_range(0.1..=1.0),
            },
        })
    }
}

fn gradients(losses: &[SmoothLoss], theta: &Vector) -> Result<Vec<Vector>> {
    losses.iter().map(|l| l.gradient(theta)).collect()
}

fn expansivity_suite(rng: &mut ChaCha8Rng, instances: usize) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("expansivity");
    // Mean rule, f = 0: regimes 0 convex, 1 strongly convex, 2 nonconvex.
    for regime in 0..3 {
        for _ in 0..instances {
            let d = rng.gen_range(1..=4);
            let n = rng.gen_range(1..=6);
            let l = rng.gen_range(0.2..3.0);
            let mu = l * rng.gen_range(0.05..=1.0);
            let gamma = match regime {
                1 => rng.gen_range(0.0..=1.0) / l,
                _ => rng.gen_range(0.0..=2.0) / l,
            };
            let losses = (0..n)
                .map(|_| SmoothLoss::random(rng, regime, d, l, mu))
                .collect::<Result<Vec<_>>>()?;
            let theta = uniform_vector(rng, d, 3.0);
            let omega = uniform_vector(rng, d, 3.0);
            let step = |p: &Vector| -> Result<Vector> {
                let g = Vector::mean_of(&gradients(&losses, p)?).expect("n ≥ 1");
                Ok(p - &g.scale(gamma))
            };
            let eta = match regime {
                0 => 1.0,
                1 => 1.0 - gamma * mu,
                _ => 1.0 + gamma * l,
            };
            let dist = theta.distance(&omega);
            let moved = step(&theta)?.distance(&step(&omega)?);
            rep.check(eta * dist - moved, 1e-9, || {
                format!("mean rule regime {regime}: n={n} γ={gamma} L={l} μ={mu} θ={theta} ω={omega} losses={losses:?}")
            });
        }
    }
    // CWTM with mixed smooth losses.
    for _ in 0..instances {
        let d = rng.gen_range(1..=4);
        let n = rng.gen_range(3..=10);
        let f = rng.gen_range(0..(n + 1) / 2);
        let l = rng.gen_range(0.2..3.0);
        let gamma = rng.gen_range(0.0..=2.0) / l;
        let losses = (0..n)
            .map(|_| {
                let kind = rng.gen_range(0..3);
                let mu = l * rng.gen_range(0.05..=1.0);
                SmoothLoss::random(rng, kind, d, l, mu)
            })
            .collect::<Result<Vec<_>>>()?;
        let theta = uniform_vector(rng, d, 3.0);
        let omega = uniform_vector(rng, d, 3.0);
        let step = |p: &Vector| -> Result<Vector> {
            let agg = aggregate_cwtm(&GradientBatch::new(gradients(&losses, p)?)?, f)?.aggregate;
            Ok(p - &agg.scale(gamma))
        };
        let factor = (n as f64 / (n - 2 * f) as f64)
            .min((n as f64).sqrt())
            .min((d as f64).sqrt());
        let eta = 1.0 + gamma * l * factor;
        let moved = step(&theta)?.distance(&step(&omega)?);
        rep.check(eta * theta.distance(&omega) - moved, 1e-9, || {
            format!("cwtm: n={n} f={f} γ={gamma} L={l} θ={theta} ω={omega} losses={losses:?}")
        });
    }
    Ok(rep)
}

/// Median of three numbers by explicit comparisons.
fn median3(a: f64, b: f64, c: f64) -> f64 {
    a.max(b).min(a.min(b).max(c))
}

fn counterexample_suite() -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("counterexample");
    for l in [1.0, 0.5, 2.0] {
        let w = cwtm_cocoercivity_counterexample(l)?;
        rep.check(-1e-6 - w.inner_product, 0.0, || {
            format!(
                "L={l}: inner product {} is not below -1e-6",
                w.inner_product
            )
        });
        // Recompute both aggregates from the closed-form gradients.
        let residual_grad = |p: &Vector, x: &Vector, y: f64| x.scale(p.dot(x) - y);
        let at = |p: &Vector| {
            let g = [
                residual_grad(p, &w.v, 0.0),
                residual_grad(p, &w.x, 0.0),
                residual_grad(p, &w.x, 1.0),
            ];
            Vector::new((0..2).map(|k| median3(g[0][k], g[1][k], g[2][k])).collect())
                .expect("finite")
        };
        let theta = w.x.scale(1.0 / l);
        let inner = theta.dot(&(&at(&theta) - &at(&Vector::zeros(2))));
        rep.check(1e-12 - (inner - w.inner_product).abs(), 0.0, || {
            format!(
                "L={l}: recomputed inner product {inner} vs {}",
                w.inner_product
            )
        });
    }
    Ok(rep)
}

/// `min over a + b + c = n - f` of the pool covariance top eigenvalue.
pub fn pick_lemma_minimum(values: [f64; 3], mult: [usize; 3], n: usize, f: usize) -> f64 {
    let k = n - f;
    let [ga, gb, gc] = values;
    let mut best = f64::INFINITY;
    for a in 0..=mult[0].min(k) {
        for b in 0..=mult[1].min(k - a) {
            let c = k - a - b;
            if c > mult[2] {
                continue;
            }
            let (af, bf, cf) = (a as f64, b as f64, c as f64);
            let value = (af * bf * (ga - gb).powi(2)
                + bf * cf * (gb - gc).powi(2)
                + af * cf * (ga - gc).powi(2))
                / (k * k) as f64;
            best = best.min(value);
        }
    }
    best
}

fn pick_lemma_suite(rng: &mut ChaCha8Rng, pools: usize) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("pick-lemma");
    for _ in 0..pools {
        let n = rng.gen_range(3..=9);
        let f = rng.gen_range(0..(n + 1) / 2);
        let first = rng.gen_range(1..=n - 2);
        let second = rng.gen_range(1..=n - first - 1);
        let mult = [first, second, n - first - second];
        let values = loop {
            let v: [f64; 3] = [
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            ];
            if (v[0] - v[1]).abs() > 1e-3
                && (v[1] - v[2]).abs() > 1e-3
                && (v[0] - v[2]).abs() > 1e-3
            {
                break v;
            }
        };
        // Points on the line through `origin` with unit direction `u`.
        let u = unit_vector(rng, 2);
        let origin = uniform_vector(rng, 2, 2.0);
        let mut vs = Vec::with_capacity(n);
        for (t, &count) in values.iter().zip(&mult) {
            for _ in 0..count {
                let mut p = origin.clone();
                p.axpy(*t, &u);
                vs.push(p);
            }
        }
        let out = aggregate_smea(&GradientBatch::new(vs)?, f)?;
        let exhaustive = out.selected_lambda_max.expect("SMEA reports λ_max");
        let formula = pick_lemma_minimum(values, mult, n, f);
        rep.check(1e-10 - (exhaustive - formula).abs(), 0.0, || {
            format!("n={n} f={f} values={values:?} multiplicities={mult:?}: exhaustive {exhaustive} vs formula {formula}")
        });
    }
    Ok(rep)
}

/// A random SGD pair on the quadratic loss whose datasets differ at one
/// example.
fn random_sgd_pair(
    rng: &mut ChaCha8Rng,
    n: usize,
    m: usize,
) -> Result<(NeighboringPair, WorkerSet, LossModel)> {
    let loss = LossModel::quadratic_mean(1.0, 1.0, 1.0)?;
    let base: Vec<HonestWorker> = (0..n)
        .map(|id| {
            HonestWorker::new(
                id,
                (0..m)
                    .map(|_| DataPoint::Scalar(rng.gen_range(-0.5..=0.5)))
                    .collect(),
            )
        })
        .collect();
    let w = rng.gen_range(0..n);
    let b = rng.gen_range(0..m);
    let mut variant = base.clone();
    let old = match variant[w].data[b] {
        DataPoint::Scalar(v) => v,
        _ => unreachable!("scalar data"),
    };
    let shifted = if old > 0.0 { old - 0.25 } else { old + 0.25 };
    variant[w].data[b] = DataPoint::Scalar(shifted);
    let workers = WorkerSet::new(n, base.clone(), vec![], None)?;
    Ok((NeighboringPair::new(base, variant, (w, b))?, workers, loss))
}

fn first_draw(t: &Trajectory, location: (usize, usize)) -> Option<usize> {
    t.sample_indices
        .iter()
        .position(|draws| draws.contains(&location))
}

fn bit_identical(a: &[Vector], b: &[Vector]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.as_slice()
                .iter()
                .zip(y.as_slice())
                .all(|(p, q)| p.to_bits() == q.to_bits())
        })
}

fn coupling_suite(rng: &mut ChaCha8Rng, runs: usize) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("coupling");
    for _ in 0..runs {
        let n = rng.gen_range(3..=7);
        let m = rng.gen_range(2..=5);
        let (pair, workers, loss) = random_sgd_pair(rng, n, m)?;
        let seed = rng.gen::<u64>();
        for (rule, f) in [("mean", 0), ("smea", (n - 1) / 2)] {
            let config = RunConfig {
                algorithm: Algorithm::Sgd,
                rule: rule.into(),
                f,
                steps: 12,
                schedule: Schedule::Constant(0.5),
                theta0: Vector::scalar(0.0),
                seed,
                mc_runs: 1,
            };
            let (a, b) = run_paired(&config, &pair, &workers, &loss)?;
            let drawn = first_draw(&a, pair.diff_location);
            let witness = || {
                format!(
                    "rule={rule} n={n} m={m} seed={seed} diff={:?} first draw={drawn:?} divergence={:?}",
                    pair.diff_location,
                    first_divergence_step(&a, &b)
                )
            };
            rep.check_that(a.sample_indices == b.sample_indices, witness);
            let shared = drawn.map_or(a.thetas.len(), |t| t + 1);
            rep.check_that(
                bit_identical(&a.thetas[..shared], &b.thetas[..shared]),
                witness,
            );
            if rule == "mean" {
                rep.check_that(
                    first_divergence_step(&a, &b) == drawn.map(|t| t + 1),
                    witness,
                );
            }
            let again = run(&config, &workers.with_honest(pair.base.clone())?, &loss)?;
            rep.check_that(again == a, || {
                format!("rule={rule} seed={seed}: rerun differs")
            });
        }
    }
    Ok(rep)
}

fn figure1_trajectories() -> Result<Vec<Trajectory>> {
    let settings = SweepSettings::default();
    let mut out = Vec::new();
    for f in 1..=7 {
        let (construction, pois) = poisoning_cell(&settings, f)?;
        let byz = byzantine_cell(&settings, &construction, f)?;
        out.extend([pois.base, pois.variant, byz.base, byz.variant]);
    }
    Ok(out)
}

fn covariance_suite(rng: &mut ChaCha8Rng, datasets: usize) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("covariance");
    let mut recorded: Vec<(Trajectory, f64)> = figure1_trajectories()?
        .into_iter()
        .map(|t| (t, 1.0))
        .collect();
    for _ in 0..20 {
        let n = rng.gen_range(3..=7);
        let (pair, workers, loss) = random_sgd_pair(rng, n, 3)?;
        let config = RunConfig {
            algorithm: Algorithm::Sgd,
            rule: "smea".into(),
            f: (n - 1) / 2,
            steps: 10,
            schedule: Schedule::Constant(0.5),
            theta0: Vector::scalar(0.0),
            seed: rng.gen(),
            mc_runs: 1,
        };
        let (a, b) = run_paired(&config, &pair, &workers, &loss)?;
        recorded.push((a, loss.c));
        recorded.push((b, loss.c));
    }
    for (t, c) in &recorded {
        let check = covariance_lemma_check(t, *c)?;
        rep.check(
            check.worst_trace_slack.min(check.worst_spectral_slack),
            1e-12 * c * c,
            || format!("trajectory with rule {} fails Tr Σ ≤ C²: {check:?}", t.rule),
        );
    }
    for _ in 0..datasets {
        let n = rng.gen_range(3..=10);
        let f = rng.gen_range(0..(n + 1) / 2);
        let m = rng.gen_range(1..=6);
        let (c, mu) = (rng.gen_range(0.5..3.0), rng.gen_range(0.2..=1.0));
        let loss = LossModel::quadratic_mean(c, mu, 1.0)?;
        let r = c / (2.0 * mu);
        let honest: Vec<HonestWorker> = (0..n - f)
            .map(|id| {
                let center = rng.gen_range(-r..=r);
                let spread = rng.gen_range(0.0..=r);
                let data = (0..m)
                    .map(|_| {
                        DataPoint::Scalar((center + rng.gen_range(-spread..=spread)).clamp(-r, r))
                    })
                    .collect();
                HonestWorker::new(id, data)
            })
            .collect();
        let grid: Vec<Vector> = (0..=20)
            .map(|i| Vector::scalar(-r + 2.0 * r * i as f64 / 20.0))
            .collect();
        let report = refined_covariance_check(&honest, &loss, &grid, n, f)?;
        let slack = (report.trace_bound - report.measured_max_trace)
            .min(report.trace_bound - report.measured_max_sgd_trace)
            .min(report.spectral_bound - report.measured_max_spectral);
        rep.check(slack, 1e-12 * (1.0 + report.trace_bound), || {
            format!("n={n} f={f} data={honest:?}: {report:?}")
        });
    }
    Ok(rep)
}

fn constructions_suite() -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("constructions");
    let settings = SweepSettings::default();
    for f in 1..=7 {
        let (construction, pois) = poisoning_cell(&settings, f)?;
        let pred = construction
            .predicted
            .clone()
            .expect("linear construction predicts");
        let all_base = pois
            .base
            .selected_subsets
            .iter()
            .all(|s| s.as_ref() == Some(&pred.base_subset));
        let all_variant = pois
            .variant
            .selected_subsets
            .iter()
            .all(|s| s.as_ref() == Some(&pred.variant_subset));
        rep.check_that(all_base && all_variant, || {
            format!(
                "f={f}: base selections {:?}, variant selections {:?}",
                pois.base.selected_subsets, pois.variant.selected_subsets
            )
        });
        let p = (f as f64 + 1.0) / (15 - f) as f64;
        let closed = 5.0 * (p + f as f64 * (1.0 + construction.psi) / (2.0 * (15 - f) as f64));
        rep.check(1e-9 - (pois.stability - closed).abs(), 0.0, || {
            format!(
                "f={f}: stability {} vs closed form {closed}",
                pois.stability
            )
        });
        rep.check(
            (pois.stability - 5.0 * p).min(10.0 * p - pois.stability),
            1e-9,
            || {
                format!(
                    "f={f}: stability {} outside [{}, {}]",
                    pois.stability,
                    5.0 * p,
                    10.0 * p
                )
            },
        );

        let byz = byzantine_cell(&settings, &construction, f)?;
        let kappa = kappa_smea(15, f)?;
        rep.check(byz.stability - pois.stability, 0.0, || {
            format!(
                "f={f}: Byzantine stability {} below poisoning {}",
                byz.stability, pois.stability
            )
        });
        for k in [
            byz.kappa_hat_base,
            byz.kappa_hat_variant,
            pois.kappa_hat_base,
            pois.kappa_hat_variant,
        ] {
            rep.check(kappa - k, 1e-9, || {
                format!("f={f}: κ̂ = {k} exceeds κ = {kappa}")
            });
        }
        let emp = empirical_kappa_bound(
            1.0,
            1.0,
            5,
            15,
            f,
            1,
            byz.kappa_hat_base,
            byz.kappa_hat_variant,
        );
        rep.check(emp - byz.stability, 1e-6, || {
            format!(
                "f={f}: stability {} above empirical-κ bound {emp}",
                byz.stability
            )
        });
        let mut q = BoundQuery::new(Theorem::ByzConvex, 1.0, 1.0, 5, 15, f, 1);
        q.gamma = Some(1.0);
        q.kappa = Some(kappa);
        let theory = theorem_bound(&q)?.value;
        rep.check(theory - byz.stability, 1e-6, || {
            format!("f={f}: stability {} above bound {theory}", byz.stability)
        });

        // The value sent while θ ≠ 0 is selected by that step's aggregation.
        let ids = byzantine_identity_table(15, f);
        for t in [&byz.base, &byz.variant] {
            for (step, sel) in t.selected_subsets.iter().enumerate() {
                if t.thetas[step].as_scalar()? != 0.0 {
                    let chosen = sel
                        .as_ref()
                        .is_some_and(|s| ids.indices().iter().any(|&i| s.contains(i)));
                    rep.check_that(chosen, || {
                        format!("f={f} step {step}: no Byzantine worker selected in {sel:?}")
                    });
                }
            }
        }
    }
    for f in 1..=6 {
        let params = ConstructionParams {
            mu: Some(1.0),
            ..ConstructionParams::reference(f)
        };
        let r = strongly_convex_report(&params)?;
        let p = params.p();
        rep.check_that(r.subsets_match, || {
            format!("strongly convex f={f}: unexpected selections")
        });
        rep.check(1e-9 - (r.theta_base - p / 2.0).abs(), 0.0, || {
            format!(
                "strongly convex f={f}: θ_T = {} vs p/2 = {}",
                r.theta_base,
                p / 2.0
            )
        });
        rep.check(
            (r.measured_stability - r.lower).min(r.upper - r.measured_stability),
            1e-9,
            || {
                format!(
                    "strongly convex f={f}: stability {} outside [{}, {}]",
                    r.measured_stability, r.lower, r.upper
                )
            },
        );
    }
    Ok(rep)
}

/// Expected generalization error of the pivot setup by enumerating both
/// pivot datasets and evaluating population and empirical risks directly.
pub fn enumerated_generalization_error(f: usize) -> Result<f64> {
    let settings = SweepSettings::default();
    let (construction, cell) = poisoning_cell(&settings, f)?;
    let loss = &construction.loss;
    let n = settings.n;
    // Poisoned workers are the last f; every other worker is honest.
    let honest: Vec<&HonestWorker> = construction
        .pair
        .base
        .iter()
        .filter(|w| w.id < n - f)
        .collect();
    let pivot = construction.groups.pivot;
    let pivot_law = [
        (DataPoint::Scalar(0.0), 0.5),
        (DataPoint::Scalar(-settings.c), 0.5),
    ];
    let mut total = 0.0;
    for (z1, theta) in [
        (DataPoint::Scalar(0.0), cell.variant.final_theta()),
        (DataPoint::Scalar(-settings.c), cell.base.final_theta()),
    ] {
        let mut gap = 0.0;
        for w in &honest {
            let (population, empirical) = if w.id == pivot {
                let pop = pivot_law
                    .iter()
                    .map(|(z, p)| Ok(p * loss.value(theta, z)?))
                    .sum::<Result<f64>>()?;
                (pop, loss.value(theta, &z1)?)
            } else {
                // Dirac distributions: the population is the local sample.
                let v = loss.value(theta, &w.data[0])?;
                (v, v)
            };
            gap += population - empirical;
        }
        total += 0.5 * gap / honest.len() as f64;
    }
    Ok(total)
}

fn generalization_suite() -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("generalization");
    let settings = SweepSettings::default();
    for f in 0..=7 {
        let (_, cell) = poisoning_cell(&settings, f)?;
        let enumerated = enumerated_generalization_error(f)?;
        rep.check(1e-12 - (enumerated - cell.gen_error).abs(), 0.0, || {
            format!(
                "f={f}: enumerated {enumerated} vs formula {}",
                cell.gen_error
            )
        });
    }
    Ok(rep)
}

fn bound(th: Theorem, n: usize, f: usize, m: usize, steps: usize, c: f64) -> Result<f64> {
    let mut q = BoundQuery::new(th, c, 1.0, steps, n, f, m);
    q.gamma = Some(0.5);
    q.mu = Some(0.5);
    q.c_schedule = Some(1.0);
    q.ell_inf = Some(2.0);
    q.nu = Some(1.0);
    q.kappa = Some(if f == 0 { 0.0 } else { kappa_smea(n, f)? });
    q.override_regime = th == Theorem::PoisCwtmNonconvex;
    Ok(theorem_bound(&q)?.value)
}

fn bounds_suite() -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("bounds");
    for th in Theorem::ALL {
        for n in [7usize, 10, 15] {
            for m in [1usize, 2, 5] {
                for steps in [1usize, 5, 20] {
                    for c in [0.5, 1.0, 2.0] {
                        for f in 0..(n - 1) / 2 {
                            let tol = 1e-12;
                            let here = bound(th, n, f, m, steps, c)?;
                            let w = || format!("{th}: n={n} f={f} m={m} T={steps} C={c}");
                            rep.check(bound(th, n, f + 1, m, steps, c)? - here, tol * here, w);
                            rep.check(bound(th, n, f, m, steps + 1, c)? - here, tol * here, w);
                            rep.check(bound(th, n, f, m, steps, c * 1.5)? - here, tol * here, w);
                            rep.check(here - bound(th, n + 1, f, m, steps, c)?, tol * here, w);
                            rep.check(here - bound(th, n, f, m + 1, steps, c)?, tol * here, w);
                        }
                    }
                }
            }
        }
    }
    // Ratios between the nonconvex bounds against their simplified forms.
    for n in [9usize, 15, 21] {
        for f in 1..(n - 1) / 3 {
            for m in [1usize, 3] {
                let (nf, ff, mf) = (n as f64, f as f64, m as f64);
                let kappa = kappa_smea(n, f)?;
                let e = 0.5;
                let byz = bound(Theorem::ByzNonconvexSgd, n, f, m, 10, 1.0)?;
                let pois = bound(Theorem::PoisSmeaNonconvex, n, f, m, 10, 1.0)?;
                let cw = bound(Theorem::PoisCwtmNonconvex, n, f, m, 10, 1.0)?;
                let expected = [
                    (
                        byz / pois,
                        ((1.0 / ((nf - ff) * mf) + kappa.sqrt())
                            / (1.0 / ((nf - ff) * mf) + ff / (nf - ff)))
                            .powf(e),
                    ),
                    (
                        byz / cw,
                        (9.0 * (nf.sqrt() / (nf - ff) + mf * (nf * kappa).sqrt())).powf(e),
                    ),
                    (
                        pois / cw,
                        (9.0 * (nf.sqrt() / (nf - ff) + ff * mf * nf.sqrt() / (nf - ff))).powf(e),
                    ),
                ];
                for (got, want) in expected {
                    rep.check(1e-12 * want - (got - want).abs(), 0.0, || {
                        format!("n={n} f={f} m={m}: ratio {got} vs {want}")
                    });
                }
            }
        }
    }
    Ok(rep)
}

fn projected_suite(opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("projected");
    let params = ConstructionParams {
        m: 4,
        steps: 16,
        ..ConstructionParams::reference(3)
    };
    let r = projected_report(&params, opts.seed, opts.projected_seeds)?;
    rep.check(3.0 - r.z_score.abs(), 0.0, || {
        format!(
            "Monte-Carlo λ_T {} vs closed form {} (z = {})",
            r.mc_lambda, r.closed_form_lambda, r.z_score
        )
    });
    rep.check(r.measured_stability - r.lower_bound, 0.0, || {
        format!("stability {} below {}", r.measured_stability, r.lower_bound)
    });
    rep.check_that(r.max_variant_norm == 0.0, || {
        format!("variant moved to norm {}", r.max_variant_norm)
    });
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pick_lemma_small_case() {
        // Pool {0, 0, 1}, f = 1: keeping the two zeros gives zero spread.
        assert_eq!(pick_lemma_minimum([0.0, 1.0, 5.0], [2, 1, 0], 3, 1), 0.0);
        assert!((pick_lemma_minimum([0.0, 1.0, 2.0], [1, 1, 1], 3, 1) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn median_of_three() {
        assert_eq!(median3(3.0, 1.0, 2.0), 2.0);
        assert_eq!(median3(0.0, 0.0, -1.0), 0.0);
    }

    #[test]
    fn unknown_suite_is_rejected() {
        assert!(matches!(
            run_suite("nope", &VerifyOptions::default()),
            Err(Error::Validation(_))
        ));
    }
}
