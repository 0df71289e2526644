//! End-to-end acceptance checks at pinned tolerances.
//!
//! Each test prints one `PASS`/`FAIL` line. The line is written to the raw
//! stdout handle so it shows up even when the harness captures output.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use robust_agg::aggregation::{aggregate_cwtm, aggregate_smea, trimmed_mean, GradientBatch};
use robust_agg::analysis::cwtm_cocoercivity_counterexample;
use robust_agg::experiments::{
    figure1, poisoning_cell, projected_report, strongly_convex_report, SweepSettings,
};
use robust_agg::linalg::Vector;
use robust_agg::threats::ConstructionParams;
use robust_agg::verify::{enumerated_generalization_error, run_suite, VerifyOptions};

fn report(id: u32, title: &str, pass: bool, detail: &str) {
    let line = format!(
        "acceptance {id:>2} {:<4} {title}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {id} ({title}) failed: {detail}");
}

fn suite(name: &str) -> (bool, String) {
    let r = run_suite(name, &VerifyOptions::default()).unwrap();
    let mut detail = format!(
        "{}/{} checks, worst slack {:.3e}",
        r.checks - r.failures,
        r.checks,
        r.worst_slack
    );
    if let Some(w) = &r.witness {
        detail.push_str(&format!(" (witness {w})"));
    }
    (r.passed(), detail)
}

/// `4f/(n-f)·(1 + f/(n-2f))²`.
fn kappa_smea_oracle(n: usize, f: usize) -> f64 {
    let (n, f) = (n as f64, f as f64);
    4.0 * f / (n - f) * (1.0 + f / (n - 2.0 * f)).powi(2)
}

#[test]
fn c01_poisoning_bracket() {
    let start = Instant::now();
    let settings = SweepSettings::default();
    let (n, m, c, gamma, t) = (15.0, 1.0, 1.0, 1.0, 5.0);
    let mut worst = 0.0f64;
    let mut in_bracket = true;
    for f in 1..=7usize {
        let ff = f as f64;
        let (_, cell) = poisoning_cell(&settings, f).unwrap();
        let psi = ((n - 2.0 * ff - 2.0 / m).max(0.0) / (n - 2.0 * ff + 2.0 / m)).sqrt();
        let p = (ff + 1.0 / m) / (n - ff);
        let expected = gamma * c * c * t * (p + ff * (1.0 + psi) / (2.0 * (n - ff)));
        worst = worst.max((cell.stability - expected).abs());
        let base = gamma * c * c * t * p;
        in_bracket &= cell.stability >= base && cell.stability <= 2.0 * base;
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-9 && in_bracket && elapsed < Duration::from_secs(5);
    report(
        1,
        "poisoning bracket",
        pass,
        &format!("max |measured - closed form| {worst:.2e}, within [γC²Tp, 2γC²Tp]: {in_bracket}, {elapsed:.2?}"),
    );
}

#[test]
fn c02_subset_selection_audit() {
    let settings = SweepSettings::default();
    let mut exceptions = 0usize;
    let mut audited = 0usize;
    for f in 1..=7usize {
        let (construction, cell) = poisoning_cell(&settings, f).unwrap();
        let g = &construction.groups;
        let mut base: Vec<usize> = std::iter::once(g.pivot)
            .chain(g.neutral.iter().copied())
            .chain(g.f.iter().copied())
            .collect();
        let mut variant: Vec<usize> = std::iter::once(g.pivot)
            .chain(g.neutral.iter().copied())
            .chain(g.e.iter().copied())
            .collect();
        base.sort_unstable();
        variant.sort_unstable();
        for (traj, want) in [(&cell.base, &base), (&cell.variant, &variant)] {
            assert_eq!(traj.selected_subsets.len(), 5);
            for sel in &traj.selected_subsets {
                audited += 1;
                if sel.as_ref().map(|s| s.indices()) != Some(want.as_slice()) {
                    exceptions += 1;
                }
            }
        }
    }
    report(
        2,
        "subset-selection audit",
        exceptions == 0 && audited == 70,
        &format!("{exceptions} exceptions over {audited} selections"),
    );
}

#[test]
fn c03_byzantine_dominance() {
    let start = Instant::now();
    let rows = figure1(&SweepSettings::default()).unwrap();
    let elapsed = start.elapsed();
    let (n, m, c, gamma, t) = (15usize, 1usize, 1.0, 1.0, 5.0);
    let mut failures = Vec::new();
    for r in &rows {
        let f = r.f;
        let (Some(stab_byz), Some(kb), Some(kv)) =
            (r.stab_byz, r.kappa_hat_byz_base, r.kappa_hat_byz_variant)
        else {
            failures.push(format!("f={f}: {}", r.status));
            continue;
        };
        let kappa = kappa_smea_oracle(n, f);
        let sample = 2.0 / ((n - f) * m) as f64;
        let empirical = gamma * c * t * (sample + kb.sqrt() + kv.sqrt());
        let theory = 2.0 * gamma * c * c * t * (1.0 / ((n - f) * m) as f64 + kappa.sqrt());
        if stab_byz < r.stab_pois {
            failures.push(format!(
                "f={f}: stab_byz {stab_byz} < stab_pois {}",
                r.stab_pois
            ));
        }
        for (name, k) in [
            ("pois base", r.kappa_hat_pois_base),
            ("pois variant", r.kappa_hat_pois_variant),
            ("byz base", kb),
            ("byz variant", kv),
        ] {
            if k > kappa + 1e-9 {
                failures.push(format!("f={f}: κ̂ {name} {k} > {kappa}"));
            }
        }
        if stab_byz > empirical + 1e-6 {
            failures.push(format!(
                "f={f}: stab_byz {stab_byz} > empirical bound {empirical}"
            ));
        }
        if stab_byz > theory + 1e-6 {
            failures.push(format!("f={f}: stab_byz {stab_byz} > bound {theory}"));
        }
        if (r.ub_byz_theory - theory).abs() > 1e-9 * theory {
            failures.push(format!(
                "f={f}: reported bound {} vs {theory}",
                r.ub_byz_theory
            ));
        }
    }
    let pass = failures.is_empty() && rows.len() == 7 && elapsed < Duration::from_secs(60);
    report(
        3,
        "Byzantine dominance and bound consistency",
        pass,
        &if failures.is_empty() {
            format!("7 rows consistent, {elapsed:.2?}")
        } else {
            failures.join("; ")
        },
    );
}

#[test]
fn c04_generalization_equals_scaled_stability() {
    let settings = SweepSettings {
        f_min: 0,
        ..SweepSettings::default()
    };
    let mut worst = 0.0f64;
    for f in 0..=7usize {
        let (_, cell) = poisoning_cell(&settings, f).unwrap();
        let theta_minus = cell.base.final_theta().as_scalar().unwrap();
        let theta_zero = cell.variant.final_theta().as_scalar().unwrap();
        let scaled = (theta_minus - theta_zero) / (4.0 * (15 - f) as f64);
        let enumerated = enumerated_generalization_error(f).unwrap();
        worst = worst.max((enumerated - scaled).abs());
        worst = worst.max((cell.gen_error - scaled).abs());
    }
    report(
        4,
        "generalization equals scaled stability",
        worst <= 1e-12,
        &format!("max deviation {worst:.2e} over f = 0..7"),
    );
}

/// Mean and `1/|S|`-normalized covariance of the rows in `idx`.
fn subset_stats(vs: &[Vec<f64>], idx: &[usize]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = vs[0].len();
    let k = idx.len() as f64;
    let mut mean = vec![0.0; d];
    for &i in idx {
        for j in 0..d {
            mean[j] += vs[i][j] / k;
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    for &i in idx {
        for a in 0..d {
            for b in 0..d {
                cov[a][b] += (vs[i][a] - mean[a]) * (vs[i][b] - mean[b]) / k;
            }
        }
    }
    (mean, cov)
}

/// Largest eigenvalue of a small PSD matrix by power iteration on the
/// Rayleigh quotient, which never overestimates.
fn top_eigenvalue(m: &[Vec<f64>]) -> f64 {
    let d = m.len();
    let mut best = 0.0f64;
    for start in 0..d {
        let mut v: Vec<f64> = (0..d).map(|i| if i == start { 1.0 } else { 0.3 }).collect();
        for _ in 0..500 {
            let w: Vec<f64> = (0..d)
                .map(|i| (0..d).map(|j| m[i][j] * v[j]).sum())
                .collect();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            v = w.iter().map(|x| x / norm).collect();
        }
        let mv: Vec<f64> = (0..d)
            .map(|i| (0..d).map(|j| m[i][j] * v[j]).sum())
            .collect();
        let rq = v.iter().zip(&mv).map(|(a, b)| a * b).sum::<f64>()
            / v.iter().map(|x| x * x).sum::<f64>();
        best = best.max(rq);
    }
    best
}

/// All `k`-subsets of `0..n`.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

#[test]
fn c05_robustness_certification() {
    let (suite_pass, suite_detail) = suite("robustness");
    // Independent recomputation on a separate random stream.
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut violations = 0usize;
    let mut checks = 0usize;
    for _ in 0..1000 {
        let n = rng.gen_range(3..=10);
        let d = rng.gen_range(1..=4);
        let integer = rng.gen_bool(0.3);
        let vs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        if integer {
                            rng.gen_range(-2..=2) as f64
                        } else {
                            rng.gen_range(-3.0..3.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let batch =
            GradientBatch::new(vs.iter().map(|v| Vector::new(v.clone()).unwrap()).collect())
                .unwrap();
        let scale = vs
            .iter()
            .map(|v| v.iter().map(|x| x * x).sum::<f64>())
            .fold(0.0, f64::max);
        for f in 0..(n + 1) / 2 {
            let nf = n as f64;
            let ff = f as f64;
            let k_smea = kappa_smea_oracle(n, f);
            let k_cwtm = 6.0 * ff / (nf - 2.0 * ff) * (1.0 + ff / (nf - 2.0 * ff));
            let smea = aggregate_smea(&batch, f).unwrap().aggregate;
            let cwtm = aggregate_cwtm(&batch, f).unwrap().aggregate;
            for s in subsets(n, n - f) {
                let (mean, cov) = subset_stats(&vs, &s);
                let gap = |out: &Vector| {
                    out.as_slice()
                        .iter()
                        .zip(&mean)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                };
                let trace: f64 = (0..d).map(|i| cov[i][i]).sum();
                let lam = top_eigenvalue(&cov);
                for (lhs, rhs) in [(gap(&smea), k_smea * lam), (gap(&cwtm), k_cwtm * trace)] {
                    checks += 1;
                    if rhs - lhs < -1e-9 * (rhs + 1e-12 * scale) {
                        violations += 1;
                    }
                }
            }
        }
    }
    report(
        5,
        "robustness certification",
        suite_pass && violations == 0,
        &format!(
            "suite {suite_detail}; independent: {violations} violations in {checks} subset checks"
        ),
    );
}

#[test]
fn c06_trimmed_mean_lemmas() {
    let (suite_pass, suite_detail) = suite("trimmed-mean");
    let tm = |x: &[f64], f: usize| {
        let mut s = x.to_vec();
        s.sort_by(f64::total_cmp);
        let kept = &s[f..s.len() - f];
        kept.iter().sum::<f64>() / kept.len() as f64
    };
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut violations = 0usize;
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=12);
        let f = rng.gen_range(0..(n + 1) / 2);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let (tx, ty) = (trimmed_mean(&x, f).unwrap(), trimmed_mean(&y, f).unwrap());
        let agree = (tx - tm(&x, f)).abs() <= 1e-12 && (ty - tm(&y, f)).abs() <= 1e-12;
        let diff: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let l1: f64 = diff.iter().map(|d| d.abs()).sum();
        let lo = diff.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = diff.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let delta = tx - ty;
        let ok = agree
            && delta.abs() <= l1 / (n - 2 * f) as f64 + 1e-12
            && delta >= lo - 1e-12
            && delta <= hi + 1e-12;
        if !ok {
            violations += 1;
        }
    }
    report(
        6,
        "trimmed-mean lemmas",
        suite_pass && violations == 0,
        &format!("suite {suite_detail}; independent: {violations} violations in 10000 pairs"),
    );
}

#[test]
fn c07_expansivity() {
    let (pass, detail) = suite("expansivity");
    report(7, "expansivity", pass, &detail);
}

#[test]
fn c08_cwtm_counterexample() {
    let w = cwtm_cocoercivity_counterexample(1.0).unwrap();
    // Gradients of ½(⟨x, θ⟩ - y)² and a coordinate-wise median of three.
    let grad = |p: &[f64], x: &[f64], y: f64| {
        let r = p[0] * x[0] + p[1] * x[1] - y;
        [r * x[0], r * x[1]]
    };
    let median = |a: f64, b: f64, c: f64| a.max(b).min(a.min(b).max(c));
    let (v, x) = (w.v.as_slice(), w.x.as_slice());
    let at = |p: &[f64]| {
        let g = [grad(p, v, 0.0), grad(p, x, 0.0), grad(p, x, 1.0)];
        [
            median(g[0][0], g[1][0], g[2][0]),
            median(g[0][1], g[1][1], g[2][1]),
        ]
    };
    let theta = [x[0], x[1]];
    let (a, b) = (at(&theta), at(&[0.0, 0.0]));
    let inner = theta[0] * (a[0] - b[0]) + theta[1] * (a[1] - b[1]);
    let agree = (inner - w.inner_product).abs();
    report(
        8,
        "CWTM co-coercivity counterexample",
        w.inner_product < -1e-6 && agree <= 1e-12,
        &format!(
            "inner product {:.6e} at |x| = {:.3}, recomputation differs by {agree:.1e}",
            w.inner_product,
            w.x.norm()
        ),
    );
}

#[test]
fn c09_pick_lemma() {
    let (suite_pass, suite_detail) = suite("pick-lemma");
    // Independent: scalar pools, exhaustive variance minimum vs the
    // three-multiplicity formula.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n = rng.gen_range(3..=9);
        let f = rng.gen_range(0..(n + 1) / 2);
        let a = rng.gen_range(1..=n - 2);
        let b = rng.gen_range(1..=n - a - 1);
        let mult = [a, b, n - a - b];
        let vals = [
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0) + 7.0,
            rng.gen_range(-3.0..3.0) + 14.0,
        ];
        let pool: Vec<f64> = vals
            .iter()
            .zip(mult)
            .flat_map(|(&v, c)| std::iter::repeat(v).take(c))
            .collect();
        let out = aggregate_smea(&GradientBatch::from_scalars(&pool).unwrap(), f).unwrap();
        let exhaustive = out.selected_lambda_max.unwrap();
        let k = n - f;
        let mut formula = f64::INFINITY;
        for i in 0..=mult[0].min(k) {
            for j in 0..=mult[1].min(k - i) {
                let l = k - i - j;
                if l > mult[2] {
                    continue;
                }
                let (i, j, l) = (i as f64, j as f64, l as f64);
                let v = (i * j * (vals[0] - vals[1]).powi(2)
                    + j * l * (vals[1] - vals[2]).powi(2)
                    + i * l * (vals[0] - vals[2]).powi(2))
                    / (k * k) as f64;
                formula = formula.min(v);
            }
        }
        worst = worst.max((exhaustive - formula).abs());
    }
    report(
        9,
        "SMEA pick lemma",
        suite_pass && worst <= 1e-10,
        &format!("suite {suite_detail}; independent: max deviation {worst:.2e} over 500 pools"),
    );
}

#[test]
fn c10_strongly_convex_construction() {
    let mut failures = Vec::new();
    for f in 1..=6usize {
        let params = ConstructionParams {
            mu: Some(1.0),
            ..ConstructionParams::reference(f)
        };
        let r = strongly_convex_report(&params).unwrap();
        let p = (f as f64 + 1.0) / (15 - f) as f64;
        let lower = r.theta_base / 2.0;
        let upper = 2.0 * p;
        if (r.theta_base - p / 2.0).abs() > 1e-9 {
            failures.push(format!("f={f}: θ_T {} vs p/2 {}", r.theta_base, p / 2.0));
        }
        if !(r.measured_stability >= lower && r.measured_stability <= upper) {
            failures.push(format!(
                "f={f}: stability {} outside [{lower}, {upper}]",
                r.measured_stability
            ));
        }
    }
    report(
        10,
        "strongly convex construction",
        failures.is_empty(),
        &if failures.is_empty() {
            "θ_T = p/2 and stability bracketed for f = 1..6".to_string()
        } else {
            failures.join("; ")
        },
    );
}

#[test]
fn c11_projected_sgd_construction() {
    let start = Instant::now();
    let params = ConstructionParams {
        m: 4,
        steps: 16,
        ..ConstructionParams::reference(3)
    };
    let r = projected_report(&params, 0, 10_000).unwrap();
    let elapsed = start.elapsed();
    let tau = 4.0f64;
    let p = (3.0 + 0.25) / 12.0;
    let lower = 0.5 * (1.0 - (1.0 - (-tau).exp()) / tau) * p * 16.0;
    let pass = r.z_score.abs() <= 3.0
        && r.measured_stability >= lower
        && (r.lower_bound - lower).abs() <= 1e-12
        && elapsed < Duration::from_secs(120);
    report(
        11,
        "projected-SGD construction",
        pass,
        &format!(
            "E[λ_T] Monte Carlo {:.5} ± {:.5} vs closed form {:.5} (z = {:.2}), stability {:.4} ≥ {:.4}, {elapsed:.2?}",
            r.mc_lambda, r.mc_lambda_stderr, r.closed_form_lambda, r.z_score, r.measured_stability, lower
        ),
    );
}

#[test]
fn c12_coupling() {
    let (pass, detail) = suite("coupling");
    report(12, "coupling", pass, &detail);
}

#[test]
fn c13_covariance_lemmas() {
    let (pass, detail) = suite("covariance");
    report(13, "covariance lemmas", pass, &detail);
}
