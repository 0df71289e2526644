//! Stability measurement, empirical robustness coefficients, generalization
//! error, closed-form stability bounds, covariance checks, and the CWTM
//! co-coercivity counterexample search.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate_cwtm, GradientBatch};
use crate::engine::{HonestWorker, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::{
    check_subset_capacity, covariance_matrix, max_eigenvalue_sym, next_combination, IndexSubset,
    Vector,
};
use crate::losses::{DataPoint, LossFamily, LossModel};

/// Below this value a subset variance or a squared mean gap counts as zero
/// when estimating `κ̂`.
pub const KAPPA_ZERO_TOL: f64 = 1e-12;

/// One row of stability results for an `(attack, f)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub attack: String,
    pub f: usize,
    /// Exact for GD, a Monte-Carlo mean for SGD.
    pub measured_stability: f64,
    pub stderr: Option<f64>,
    pub lb_theoretical: Option<f64>,
    pub ub_theoretical: f64,
    pub ub_empirical_kappa: Option<f64>,
    pub kappa_hat_base: f64,
    pub kappa_hat_variant: f64,
    pub gen_error: Option<f64>,
}

/// A stability estimate with its Monte-Carlo standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityEstimate {
    pub value: f64,
    /// Standard error of the mean loss gap at the maximizing example; absent
    /// for a single pair.
    pub stderr: Option<f64>,
    /// Example attaining the supremum.
    pub argmax: DataPoint,
}

/// `sup_z |mean over pairs of ℓ(θ_T; z) - ℓ(θ'_T; z)|`.
///
/// `finals` holds the final parameters of each paired run (one pair for GD,
/// one per seed for SGD). The supremum is exact for `linear1d` and
/// `quadratic_mean`, whose gaps are affine in `z` and peak at an endpoint
/// of the data interval. Other families need an explicit `grid`.
pub fn estimate_stability(
    finals: &[(Vector, Vector)],
    loss: &LossModel,
    grid: Option<&[DataPoint]>,
) -> Result<StabilityEstimate> {
    if finals.is_empty() {
        return Err(Error::validation(
            "stability needs at least one pair of final parameters",
        ));
    }
    let endpoints;
    let candidates: &[DataPoint] = match loss.family {
        LossFamily::Linear1d => {
            endpoints = [DataPoint::Scalar(-loss.c), DataPoint::Scalar(loss.c)];
            &endpoints
        }
        LossFamily::QuadraticMean => {
            let r = loss.c / (2.0 * loss.mu.unwrap_or(1.0));
            endpoints = [DataPoint::Scalar(-r), DataPoint::Scalar(r)];
            &endpoints
        }
        _ => grid.ok_or_else(|| {
            Error::configuration(format!(
                "stability for loss family {} needs an explicit z-grid",
                loss.family
            ))
        })?,
    };
    if candidates.is_empty() {
        return Err(Error::configuration("the z-grid is empty"));
    }
    let count = finals.len() as f64;
    let mut best: Option<StabilityEstimate> = None;
    for z in candidates {
        let mut gaps = Vec::with_capacity(finals.len());
        for (a, b) in finals {
            gaps.push(loss.value(a, z)? - loss.value(b, z)?);
        }
        let mean = gaps.iter().sum::<f64>() / count;
        let stderr = (finals.len() > 1).then(|| {
            let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (count - 1.0);
            (var / count).sqrt()
        });
        if best.as_ref().map_or(true, |b| mean.abs() > b.value) {
            best = Some(StabilityEstimate {
                value: mean.abs(),
                stderr,
                argmax: z.clone(),
            });
        }
    }
    Ok(best.expect("candidates are nonempty"))
}

/// The value of [`estimate_stability`].
pub fn measure_stability(
    finals: &[(Vector, Vector)],
    loss: &LossModel,
    grid: Option<&[DataPoint]>,
) -> Result<f64> {
    estimate_stability(finals, loss, grid).map(|e| e.value)
}

/// Largest ratio `‖ḡ_{S*_t} - ḡ_S‖² / Tr Σ_S` over steps `t` and subsets
/// `S` of size `n - f`.
///
/// `ḡ_{S*_t}` is the mean of the recorded SMEA selection. Steps without a
/// selection (other rules) use the aggregator output in its place, which
/// gives the observed robustness coefficient of that rule.
///
/// A subset whose variance and gap are both below `1e-12` contributes 0. A
/// zero-variance subset with a nonzero gap makes the ratio infinite, which
/// is reported as a property violation.
pub fn empirical_kappa(trajectory: &Trajectory) -> Result<f64> {
    let n = trajectory.n;
    let f = trajectory.f;
    check_subset_capacity(n)?;
    let k = n - f;
    let mut worst = 0.0f64;
    for t in 0..trajectory.steps() {
        let batch = trajectory.batch(t)?;
        let chosen_mean = match &trajectory.selected_subsets[t] {
            Some(s) => {
                Vector::mean_of(s.indices().iter().map(|&i| &batch.vectors()[i])).expect("nonempty")
            }
            None if f == 0 && trajectory.aggregates.len() <= t => {
                Vector::mean_of(batch.vectors().iter()).expect("nonempty")
            }
            None => trajectory.aggregates.get(t).cloned().ok_or_else(|| {
                Error::validation(format!(
                    "step {t} has neither a recorded selection nor an aggregate"
                ))
            })?,
        };
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            let (mean, cov) = covariance_matrix(batch.vectors(), &idx)?;
            let num = (&chosen_mean - &mean).norm_sq();
            let den = cov.trace();
            let ratio = if den < KAPPA_ZERO_TOL {
                if num < KAPPA_ZERO_TOL {
                    0.0
                } else {
                    return Err(Error::PropertyViolation(format!(
                        "κ̂ = +inf at step {t}: subset {} has zero variance but mean gap {num}",
                        IndexSubset::new(idx.clone(), n)?
                    )));
                }
            } else {
                num / den
            };
            worst = worst.max(ratio);
            if !next_combination(&mut idx, n) {
                break;
            }
        }
    }
    Ok(worst)
}

/// `(θ^(-1)_T - θ^(0)_T) / (4(n - f))`.
pub fn generalization_error_linear(theta_zero: f64, theta_minus: f64, n: usize, f: usize) -> f64 {
    (theta_minus - theta_zero) / (4.0 * (n - f) as f64)
}

/// Which closed-form bound to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    ByzConvex,
    ByzStrongcvx,
    ByzNonconvexSgd,
    PoisSmeaConvex,
    PoisSmeaStrongcvx,
    PoisSmeaNonconvex,
    PoisCwtmNonconvex,
    LbPoisConvex,
    LbPoisStrongcvx,
}

impl Theorem {
    /// Every theorem, in display order.
    pub const ALL: [Theorem; 9] = [
        Theorem::ByzConvex,
        Theorem::ByzStrongcvx,
        Theorem::ByzNonconvexSgd,
        Theorem::PoisSmeaConvex,
        Theorem::PoisSmeaStrongcvx,
        Theorem::PoisSmeaNonconvex,
        Theorem::PoisCwtmNonconvex,
        Theorem::LbPoisConvex,
        Theorem::LbPoisStrongcvx,
    ];

    /// Snake-case name.
    pub fn name(self) -> &'static str {
        match self {
            Theorem::ByzConvex => "byz_convex",
            Theorem::ByzStrongcvx => "byz_strongcvx",
            Theorem::ByzNonconvexSgd => "byz_nonconvex_sgd",
            Theorem::PoisSmeaConvex => "pois_smea_convex",
            Theorem::PoisSmeaStrongcvx => "pois_smea_strongcvx",
            Theorem::PoisSmeaNonconvex => "pois_smea_nonconvex",
            Theorem::PoisCwtmNonconvex => "pois_cwtm_nonconvex",
            Theorem::LbPoisConvex => "lb_pois_convex",
            Theorem::LbPoisStrongcvx => "lb_pois_strongcvx",
        }
    }

    /// Parse a snake-case name.
    pub fn from_name(name: &str) -> Result<Self> {
        Theorem::ALL
            .into_iter()
            .find(|t| t.name() == name)
            .ok_or_else(|| Error::validation(format!("unknown theorem '{name}'")))
    }
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Constants entering the stability bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundQuery {
    pub theorem: Theorem,
    /// Constant step size (convex bounds).
    pub gamma: Option<f64>,
    /// Schedule constant of `γ_t ≤ c/(Lt)` (nonconvex bounds).
    pub c_schedule: Option<f64>,
    pub c: f64,
    pub l: f64,
    pub mu: Option<f64>,
    pub steps: usize,
    pub n: usize,
    pub f: usize,
    pub m: usize,
    pub kappa: Option<f64>,
    pub ell_inf: Option<f64>,
    pub nu: Option<f64>,
    /// Skip the step-size and population regime checks.
    pub override_regime: bool,
}

impl BoundQuery {
    /// A query for `theorem` with the given core constants and no optional
    /// fields.
    pub fn new(
        theorem: Theorem,
        c: f64,
        l: f64,
        steps: usize,
        n: usize,
        f: usize,
        m: usize,
    ) -> Self {
        BoundQuery {
            theorem,
            gamma: None,
            c_schedule: None,
            c,
            l,
            mu: None,
            steps,
            n,
            f,
            m,
            kappa: None,
            ell_inf: None,
            nu: None,
            override_regime: false,
        }
    }
}

/// A bound value; lower bounds are order expressions with unit constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub value: f64,
    pub order_only: bool,
}

fn require(value: Option<f64>, field: &str, theorem: Theorem) -> Result<f64> {
    match value {
        Some(x) if x.is_finite() => Ok(x),
        Some(x) => Err(Error::validation(format!(
            "{theorem}: {field} = {x} is not finite"
        ))),
        None => Err(Error::validation(format!("{theorem} requires {field}"))),
    }
}

/// Evaluates the closed-form stability bound selected by `query.theorem`.
pub fn theorem_bound(query: &BoundQuery) -> Result<BoundValue> {
    let th = query.theorem;
    let BoundQuery {
        c,
        l,
        n,
        f,
        m,
        steps,
        ..
    } = *query;
    if 2 * f >= n {
        return Err(Error::validation(format!(
            "{th}: f = {f} must satisfy f < n/2 for n = {n}"
        )));
    }
    if m == 0 || steps == 0 {
        return Err(Error::validation(format!(
            "{th}: m and T must be at least 1"
        )));
    }
    if !(c > 0.0 && l > 0.0) {
        return Err(Error::validation(format!("{th}: C and L must be positive")));
    }
    let (nf, ff, mf, tf) = (n as f64, f as f64, m as f64, steps as f64);
    let sample_term = 1.0 / ((nf - ff) * mf);
    let poison_term = ff / (nf - ff) + sample_term;

    let step_cap = |gamma: f64| -> Result<()> {
        if !query.override_regime && gamma > (1.0 / l) * (1.0 + 1e-12) {
            return Err(Error::validation(format!(
                "{th}: step size {gamma} exceeds 1/L = {}",
                1.0 / l
            )));
        }
        Ok(())
    };
    let kappa = || -> Result<f64> {
        let k = require(query.kappa, "kappa", th)?;
        if k < 0.0 {
            return Err(Error::validation(format!(
                "{th}: kappa must be nonnegative"
            )));
        }
        Ok(k)
    };
    let nonconvex = || -> Result<(f64, f64)> {
        let cs = require(query.c_schedule, "the schedule constant c", th)?;
        let ell = require(query.ell_inf, "ell_inf", th)?;
        if cs <= 0.0 || ell < 0.0 {
            return Err(Error::validation(format!(
                "{th}: c must be positive and ell_inf nonnegative"
            )));
        }
        Ok((cs, ell))
    };

    let (value, order_only) = match th {
        Theorem::ByzConvex | Theorem::PoisSmeaConvex | Theorem::LbPoisConvex => {
            let gamma = require(query.gamma, "gamma", th)?;
            step_cap(gamma)?;
            let horizon = gamma * c * c * tf;
            match th {
                Theorem::ByzConvex => (2.0 * horizon * (sample_term + kappa()?.sqrt()), false),
                Theorem::PoisSmeaConvex => (2.0 * horizon * poison_term, false),
                _ => (horizon * poison_term, true),
            }
        }
        Theorem::ByzStrongcvx | Theorem::PoisSmeaStrongcvx | Theorem::LbPoisStrongcvx => {
            let mu = require(query.mu, "mu", th)?;
            if !(mu > 0.0 && mu <= l) {
                return Err(Error::validation(format!("{th}: mu must lie in (0, L]")));
            }
            if let Some(gamma) = query.gamma {
                step_cap(gamma)?;
            }
            let scale = c * c / mu;
            match th {
                Theorem::ByzStrongcvx => (2.0 * scale * (sample_term + kappa()?.sqrt()), false),
                Theorem::PoisSmeaStrongcvx => (2.0 * scale * poison_term, false),
                _ => (scale * poison_term, true),
            }
        }
        Theorem::ByzNonconvexSgd | Theorem::PoisSmeaNonconvex => {
            let (cs, ell) = nonconvex()?;
            let e = 1.0 / (cs + 1.0);
            let drift = if th == Theorem::ByzNonconvexSgd {
                sample_term + kappa()?.sqrt()
            } else {
                poison_term
            };
            let value = 2.0 * (2.0 * c * c / l * drift).powf(e) * (ell * tf / mf).powf(cs * e);
            (value, false)
        }
        Theorem::PoisCwtmNonconvex => {
            let (cs, ell) = nonconvex()?;
            let nu = require(query.nu, "nu", th)?;
            if nu <= 0.0 {
                return Err(Error::validation(format!("{th}: nu must be positive")));
            }
            if !query.override_regime && nf < (2.0 + nu) * ff {
                return Err(Error::validation(format!(
                    "{th}: requires n >= (2 + nu) f, got n = {n}, f = {f}, nu = {nu}"
                )));
            }
            let e = 1.0 / (cs + 1.0);
            let value = 2.0
                * (2.0 * c * c * nu * nu / ((2.0 + nu).powi(2) * l)).powf(e)
                * (tf * ell).powf(cs * e)
                / (mf * nf.sqrt().powf(e));
            (value, false)
        }
    };
    Ok(BoundValue { value, order_only })
}

/// Outcome of the pathwise covariance checks on one trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaCheck {
    pub passed: bool,
    /// `min_t (C² - Tr Σ_{H,t})`.
    pub worst_trace_slack: f64,
    /// `min_t (C² - λ_max(Σ_{H,t}))`.
    pub worst_spectral_slack: f64,
}

/// Checks `Tr Σ_{H,t} ≤ C²` and `λ_max(Σ_{H,t}) ≤ C²` at every step, where
/// `Σ_{H,t}` is the covariance of the honest gradients.
pub fn covariance_lemma_check(trajectory: &Trajectory, c: f64) -> Result<LemmaCheck> {
    let bound = c * c;
    let mut trace_slack = f64::INFINITY;
    let mut spectral_slack = f64::INFINITY;
    for grads in &trajectory.honest_gradients {
        let vectors: Vec<Vector> = grads.iter().map(|(_, g)| g.clone()).collect();
        let idx: Vec<usize> = (0..vectors.len()).collect();
        let (_, cov) = covariance_matrix(&vectors, &idx)?;
        trace_slack = trace_slack.min(bound - cov.trace());
        spectral_slack = spectral_slack.min(bound - max_eigenvalue_sym(&cov)?);
    }
    let tol = -1e-12 * bound;
    Ok(LemmaCheck {
        passed: trace_slack >= tol && spectral_slack >= tol,
        worst_trace_slack: trace_slack,
        worst_spectral_slack: spectral_slack,
    })
}

/// Heterogeneity and variance constants measured on a parameter grid, the
/// covariance bounds they imply, and the covariances actually observed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinedCovarianceReport {
    /// Largest spread of the local full gradients around their average.
    pub g: f64,
    /// Largest spread of per-example gradients around a local full gradient.
    pub sigma: f64,
    /// `3G² + 3σ²(1 + 1/(n-f))`.
    pub trace_bound: f64,
    /// `σ² + G²`.
    pub spectral_bound: f64,
    /// Largest trace of the covariance of the local full gradients.
    pub measured_max_trace: f64,
    /// Largest top eigenvalue of the same covariance.
    pub measured_max_spectral: f64,
    /// Largest expected trace when each worker instead draws one example
    /// uniformly, evaluated exactly.
    pub measured_max_sgd_trace: f64,
    pub passed: bool,
}

/// Measures `G` and `σ` for the honest datasets over `theta_grid` and
/// compares the implied covariance bounds with the observed covariances.
pub fn refined_covariance_check(
    datasets: &[HonestWorker],
    loss: &LossModel,
    theta_grid: &[Vector],
    n: usize,
    f: usize,
) -> Result<RefinedCovarianceReport> {
    if theta_grid.is_empty() {
        return Err(Error::validation("the parameter grid is empty"));
    }
    if datasets.is_empty() {
        return Err(Error::validation(
            "refined covariance check needs honest datasets",
        ));
    }
    if 2 * f >= n {
        return Err(Error::validation(format!(
            "f = {f} must satisfy f < n/2 for n = {n}"
        )));
    }
    let k = datasets.len() as f64;
    let (mut g2, mut s2) = (0.0f64, 0.0f64);
    let (mut max_trace, mut max_spec, mut max_sgd) = (0.0f64, 0.0f64, 0.0f64);
    for theta in theta_grid {
        let mut locals = Vec::with_capacity(datasets.len());
        let mut local_vars = Vec::with_capacity(datasets.len());
        for w in datasets {
            let full = loss.empirical_gradient(theta, &w.data)?;
            let mut var = 0.0;
            for z in &w.data {
                var += (&loss.gradient(theta, z)? - &full).norm_sq();
            }
            local_vars.push(var / w.data.len() as f64);
            locals.push(full);
        }
        let idx: Vec<usize> = (0..locals.len()).collect();
        let (_, cov) = covariance_matrix(&locals, &idx)?;
        let spread = cov.trace();
        g2 = g2.max(spread);
        s2 = local_vars.iter().copied().fold(s2, f64::max);
        max_trace = max_trace.max(spread);
        max_spec = max_spec.max(max_eigenvalue_sym(&cov)?);
        // E Tr Σ over independent uniform draws = spread + (1 - 1/k)·mean σ_i².
        let mean_var = local_vars.iter().sum::<f64>() / k;
        max_sgd = max_sgd.max(spread + (1.0 - 1.0 / k) * mean_var);
    }
    let trace_bound = 3.0 * g2 + 3.0 * s2 * (1.0 + 1.0 / (n - f) as f64);
    let spectral_bound = s2 + g2;
    let tol = 1e-12 * (1.0 + trace_bound);
    Ok(RefinedCovarianceReport {
        g: g2.sqrt(),
        sigma: s2.sqrt(),
        trace_bound,
        spectral_bound,
        measured_max_trace: max_trace,
        measured_max_spectral: max_spec,
        measured_max_sgd_trace: max_sgd,
        passed: max_trace <= trace_bound + tol
            && max_sgd <= trace_bound + tol
            && max_spec <= spectral_bound + tol,
    })
}

/// A configuration where CWTM breaks co-coercivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleWitness {
    pub v: Vector,
    pub x: Vector,
    pub theta: Vector,
    /// CWTM of the three gradients at `θ`.
    pub cwtm_theta: Vector,
    /// CWTM of the three gradients at `ω = 0`.
    pub cwtm_omega: Vector,
    /// `⟨θ - ω, CWTM_θ - CWTM_ω⟩`.
    pub inner_product: f64,
}

/// Angles per circle in the counterexample search.
const COUNTEREXAMPLE_ANGLES: usize = 720;

/// Threshold below which the inner product counts as negative.
const COUNTEREXAMPLE_MARGIN: f64 = -1e-6;

/// Radii of `x` as multiples of `√L`, in search order. No witness exists
/// for `‖x‖² ≥ L/4`, so the first three radii never succeed and the
/// smaller ones are where witnesses are found.
const COUNTEREXAMPLE_RADII: [f64; 11] = [0.5, 0.7, 0.9, 0.45, 0.4, 0.35, 0.3, 0.25, 0.2, 0.15, 0.1];

/// Searches for samples `(v, 0)`, `(x, 0)`, `(x, 1)` under the squared loss
/// such that, with `θ = x/L` and `ω = 0`, the CWTM (f = 1) of the three
/// gradients satisfies `⟨θ - ω, CWTM_θ - CWTM_ω⟩ < -1e-6`.
///
/// `v` ranges over 720 angles on the circle of radius `√L`; `x` over the
/// radii in `COUNTEREXAMPLE_RADII` (times `√L`) and 720 angles. The first
/// witness in that order is returned.
pub fn cwtm_cocoercivity_counterexample(l: f64) -> Result<CounterexampleWitness> {
    let loss = LossModel::squared_regression(l)?;
    let r = l.sqrt();
    let omega = Vector::zeros(2);
    let circle = |radius: f64, i: usize| -> Result<Vector> {
        let a = 2.0 * std::f64::consts::PI * i as f64 / COUNTEREXAMPLE_ANGLES as f64;
        Vector::new(vec![radius * a.cos(), radius * a.sin()])
    };
    for scale in COUNTEREXAMPLE_RADII {
        for i in 0..COUNTEREXAMPLE_ANGLES {
            let x = circle(scale * r, i)?;
            let theta = x.scale(1.0 / l);
            for j in 0..COUNTEREXAMPLE_ANGLES {
                let v = circle(r, j)?;
                let data = [
                    DataPoint::labeled(v.clone(), 0.0),
                    DataPoint::labeled(x.clone(), 0.0),
                    DataPoint::labeled(x.clone(), 1.0),
                ];
                let at = |p: &Vector| -> Result<Vector> {
                    let grads = data
                        .iter()
                        .map(|z| loss.gradient(p, z))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(aggregate_cwtm(&GradientBatch::new(grads)?, 1)?.aggregate)
                };
                let cwtm_theta = at(&theta)?;
                let cwtm_omega = at(&omega)?;
                let inner = (&theta - &omega).dot(&(&cwtm_theta - &cwtm_omega));
                if inner < COUNTEREXAMPLE_MARGIN {
                    return Ok(CounterexampleWitness {
                        v,
                        x,
                        theta,
                        cwtm_theta,
                        cwtm_omega,
                        inner_product: inner,
                    });
                }
            }
        }
    }
    Err(Error::NotFound(format!(
        "no CWTM co-coercivity counterexample on the search grid for L = {l}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(a: f64, b: f64) -> Vec<(Vector, Vector)> {
        vec![(Vector::scalar(a), Vector::scalar(b))]
    }

    #[test]
    fn stability_closed_forms() {
        let lin = LossModel::linear1d(1.0, 1.0).unwrap();
        assert_eq!(measure_stability(&pair(0.4, 0.4), &lin, None).unwrap(), 0.0);
        let psi = (7.0f64 / 11.0).sqrt();
        let theta_v = -(3.0 / 12.0) * 0.5 * (1.0 + psi) * 5.0;
        let s = measure_stability(&pair(5.0 / 3.0, theta_v), &lin, None).unwrap();
        assert!((s - 2.7902).abs() < 1e-4);
        assert!(
            (measure_stability(&pair(1.0 / 3.0, 0.0), &lin, None).unwrap() - 1.0 / 3.0).abs()
                < 1e-15
        );

        let q = LossModel::quadratic_mean(1.0, 1.0, 1.0).unwrap();
        let (a, b) = (0.3f64, -0.2f64);
        let chi = 0.5 * (a - b).abs() * ((a + b).abs() + 1.0);
        assert!((measure_stability(&pair(a, b), &q, None).unwrap() - chi).abs() < 1e-15);
    }

    #[test]
    fn grid_is_required_for_regression() {
        let h = LossModel::huberized_regression(1.0, 1.0, crate::losses::ProjectionDomain::None)
            .unwrap();
        let finals = vec![(Vector::zeros(2), Vector::zeros(2))];
        assert!(matches!(
            estimate_stability(&finals, &h, None),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn generalization_examples() {
        assert_eq!(generalization_error_linear(0.2, 0.2, 15, 3), 0.0);
        assert!((generalization_error_linear(0.0, 1.0 / 3.0, 15, 0) - 1.0 / 180.0).abs() < 1e-15);
    }

    fn one_step(values: &[f64], selected: &[usize], f: usize) -> Trajectory {
        let n = values.len();
        Trajectory {
            n,
            f,
            rule: "smea".into(),
            thetas: vec![Vector::scalar(0.0), Vector::scalar(0.0)],
            selected_subsets: vec![Some(IndexSubset::new(selected.to_vec(), n).unwrap())],
            aggregates: vec![],
            honest_gradients: vec![values
                .iter()
                .enumerate()
                .map(|(i, &g)| (i, Vector::scalar(g)))
                .collect()],
            sample_indices: vec![vec![]],
            byzantine_values: vec![vec![]],
        }
    }

    #[test]
    fn kappa_hat_examples() {
        let t = one_step(&[0.0, 0.0, 1.0], &[0, 1], 1);
        assert!((empirical_kappa(&t).unwrap() - 1.0).abs() < 1e-15);
        let mut t0 = one_step(&[0.2, 0.7], &[0, 1], 0);
        t0.selected_subsets = vec![None];
        assert_eq!(empirical_kappa(&t0).unwrap(), 0.0);
        // Two zero-variance subsets with different means.
        let bad = one_step(&[0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0], &[0, 1, 2, 3], 3);
        assert!(matches!(
            empirical_kappa(&bad),
            Err(Error::PropertyViolation(_))
        ));
    }

    #[test]
    fn kappa_hat_uses_aggregate_without_selection() {
        // Trimmed mean of {0, 1, 2} with f = 1 is 1; the subsets {0, 1} and
        // {1, 2} give ratio 0.25/0.25.
        let mut t = one_step(&[0.0, 1.0, 2.0], &[0, 1], 1);
        t.selected_subsets = vec![None];
        t.aggregates = vec![Vector::scalar(1.0)];
        assert!((empirical_kappa(&t).unwrap() - 1.0).abs() < 1e-15);
        t.aggregates.clear();
        assert!(matches!(empirical_kappa(&t), Err(Error::Validation(_))));
    }

    #[test]
    fn bound_examples() {
        let mut q = BoundQuery::new(Theorem::ByzConvex, 1.0, 1.0, 5, 15, 3, 1);
        q.gamma = Some(1.0);
        q.kappa = Some(16.0 / 9.0);
        assert!((theorem_bound(&q).unwrap().value - 85.0 / 6.0).abs() < 1e-12);
        q.theorem = Theorem::PoisSmeaConvex;
        assert!((theorem_bound(&q).unwrap().value - 10.0 / 3.0).abs() < 1e-12);
        q.theorem = Theorem::LbPoisConvex;
        let lb = theorem_bound(&q).unwrap();
        assert!(lb.order_only && (lb.value - 5.0 / 3.0).abs() < 1e-12);

        q.f = 0;
        q.kappa = Some(0.0);
        q.theorem = Theorem::ByzConvex;
        let byz = theorem_bound(&q).unwrap().value;
        q.theorem = Theorem::PoisSmeaConvex;
        assert_eq!(byz, theorem_bound(&q).unwrap().value);
        assert!((byz - 2.0 / 15.0 * 5.0).abs() < 1e-15);

        q.gamma = Some(2.0);
        assert!(theorem_bound(&q).is_err());
        q.override_regime = true;
        assert!(theorem_bound(&q).is_ok());

        let mut nc = BoundQuery::new(Theorem::ByzNonconvexSgd, 1.0, 1.0, 100, 15, 3, 10);
        nc.c_schedule = Some(1.0);
        nc.kappa = Some(16.0 / 9.0);
        let err = theorem_bound(&nc).unwrap_err();
        assert!(err.to_string().contains("ell_inf"));
    }

    #[test]
    fn covariance_lemma_boundary() {
        let t = one_step(&[-1.0, 1.0], &[0, 1], 0);
        let check = covariance_lemma_check(&t, 1.0).unwrap();
        assert!(check.passed);
        assert!(check.worst_trace_slack.abs() < 1e-15);
    }

    #[test]
    fn refined_covariance_trivial_cases() {
        let q = LossModel::quadratic_mean(1.0, 1.0, 1.0).unwrap();
        let grid = vec![Vector::scalar(-0.3), Vector::scalar(0.4)];
        let same: Vec<HonestWorker> = (0..4)
            .map(|i| HonestWorker::new(i, vec![DataPoint::Scalar(0.1), DataPoint::Scalar(-0.2)]))
            .collect();
        let r = refined_covariance_check(&same, &q, &grid, 5, 1).unwrap();
        assert!(r.g.abs() < 1e-15);
        assert!((r.trace_bound - 3.0 * r.sigma.powi(2) * 1.25).abs() < 1e-15);
        let single: Vec<HonestWorker> = (0..4)
            .map(|i| HonestWorker::new(i, vec![DataPoint::Scalar(0.1 * i as f64)]))
            .collect();
        let r = refined_covariance_check(&single, &q, &grid, 5, 1).unwrap();
        assert_eq!(r.sigma, 0.0);
        assert!((r.spectral_bound - r.g * r.g).abs() < 1e-15);
        assert!(r.passed);
        assert!(refined_covariance_check(&single, &q, &[], 5, 1).is_err());
    }

    #[test]
    fn counterexample_exists() {
        let w = cwtm_cocoercivity_counterexample(1.0).unwrap();
        assert!(w.inner_product < -1e-6);
        assert!(w.x.norm_sq() < 0.25);
        assert_eq!(w.cwtm_omega, Vector::zeros(2));
    }
}
