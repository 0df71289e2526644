//! Adversarial inputs: three neighboring-dataset constructions that force a
//! robust rule to amplify a single-sample change, and a Byzantine strategy
//! that exploits SMEA's subset selection.
//!
//! Worker ids are zero-based. Every construction uses the same partition of
//! `{0..n-1}`: the pivot worker `0` holds the differing example, the
//! neutral group `N = {1..n-2f-1}` holds zeros, and two attack groups
//! `E = {n-2f..n-f-1}` and `F = {n-f..n-1}` of size `f` hold values chosen
//! so that SMEA averages `{0} ∪ N ∪ F` on one dataset and `{0} ∪ N ∪ E` on
//! the other. Poisoning workers are ordinary honest workers with corrupted
//! data; they follow the algorithm.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate_smea, GradientBatch};
use crate::engine::{ByzantineStrategy, HonestWorker, NeighboringPair, StepContext, WorkerSet};
use crate::error::{Error, Result};
use crate::linalg::{IndexSubset, Vector};
use crate::losses::{DataPoint, LossModel, ProjectionDomain};

/// Default margin added to the attack's boundary value.
pub const DEFAULT_ATTACK_EPSILON: f64 = 1e-3;

/// Default half-width multiplier of the attack's search bracket.
pub const DEFAULT_BRACKET: f64 = 10.0;

/// Bisection stopping width.
const BISECTION_TOL: f64 = 1e-9;

/// Bisection iteration cap.
const BISECTION_MAX_ITER: usize = 200;

/// Points in the coarse scan used to find a first selected candidate.
const MEMBER_SCAN_POINTS: usize = 401;

/// Inputs shared by the three constructions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionParams {
    pub n: usize,
    pub f: usize,
    /// Examples per worker.
    pub m: usize,
    /// Lipschitz constant.
    pub c: f64,
    /// Smoothness constant.
    pub l: f64,
    /// Strong-convexity constant (strongly convex construction).
    pub mu: Option<f64>,
    /// Step size used by the closed-form predictions.
    pub gamma: f64,
    /// Number of steps used by the closed-form predictions.
    pub steps: usize,
    /// Margin `ε` of the projected construction; defaults to half of its
    /// admissible upper limit.
    pub epsilon: Option<f64>,
    /// Replaces the default `ψ`.
    pub psi_override: Option<f64>,
}

impl ConstructionParams {
    /// Parameters of the reference experiment: `n = 15`, `m = 1`,
    /// `C = L = γ = 1`, five steps.
    pub fn reference(f: usize) -> Self {
        ConstructionParams {
            n: 15,
            f,
            m: 1,
            c: 1.0,
            l: 1.0,
            mu: None,
            gamma: 1.0,
            steps: 5,
            epsilon: None,
            psi_override: None,
        }
    }

    /// `p = (f + 1/m)/(n - f)`.
    pub fn p(&self) -> f64 {
        (self.f as f64 + 1.0 / self.m as f64) / (self.n - self.f) as f64
    }

    fn validate_common(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::validation("m must be at least 1"));
        }
        if 2 * self.f >= self.n {
            return Err(Error::validation(format!(
                "f = {} must satisfy f < n/2 for n = {}",
                self.f, self.n
            )));
        }
        for (name, x) in [("C", self.c), ("L", self.l), ("gamma", self.gamma)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::validation(format!(
                    "{name} must be positive, got {x}"
                )));
            }
        }
        Ok(())
    }
}

/// The worker partition `{0} ∪ N ∪ E ∪ F`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Groups {
    pub pivot: usize,
    pub neutral: Vec<usize>,
    pub e: Vec<usize>,
    pub f: Vec<usize>,
}

impl Groups {
    fn new(n: usize, f: usize) -> Self {
        Groups {
            pivot: 0,
            neutral: (1..n - 2 * f).collect(),
            e: (n - 2 * f..n - f).collect(),
            f: (n - f..n).collect(),
        }
    }

    /// `{0} ∪ N ∪ F`.
    pub fn base_selection(&self, n: usize) -> IndexSubset {
        let ids = std::iter::once(self.pivot)
            .chain(self.neutral.iter().copied())
            .chain(self.f.iter().copied())
            .collect();
        IndexSubset::from_unsorted(ids, n).expect("groups partition 0..n")
    }

    /// `{0} ∪ N ∪ E`.
    pub fn variant_selection(&self, n: usize) -> IndexSubset {
        let ids = std::iter::once(self.pivot)
            .chain(self.neutral.iter().copied())
            .chain(self.e.iter().copied())
            .collect();
        IndexSubset::from_unsorted(ids, n).expect("groups partition 0..n")
    }
}

/// Closed-form behavior of a GD construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Subset SMEA averages at every step of the base run.
    pub base_subset: IndexSubset,
    /// Subset SMEA averages at every step of the variant run.
    pub variant_subset: IndexSubset,
    /// `θ_T` of the base run.
    pub theta_base: f64,
    /// `θ'_T` of the variant run.
    pub theta_variant: f64,
}

/// Closed-form expectations for the projected-SGD construction.
///
/// The base iterate stays at the origin until the pivot first draws its
/// special example at step `t₀ - 1` (so `T₀ = t₀`), then moves along the
/// ray `{λv}`. Conditional on `T₀ = t₀`, the coefficient `λ` follows the
/// affine recursion `E[λ_{t+1}] = (1 - a)E[λ_t] + aλ*` with
/// `a = pγLb²`, `λ* = β/(b²L)` and starting value
/// `λ_{t₀} = γβ(f+1)/(n-f)`. The variant iterate never leaves the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedModel {
    pub n: usize,
    pub f: usize,
    pub m: usize,
    pub c: f64,
    pub l: f64,
    pub gamma: f64,
    pub steps: usize,
    pub v: Vector,
    pub beta: f64,
    pub alpha: f64,
    pub b: f64,
    pub epsilon: f64,
    pub p: f64,
}

impl ProjectedModel {
    /// `P(T₀ = t₀)` for `t₀ ≥ 1`.
    pub fn t0_probability(&self, t0: usize) -> f64 {
        let q = 1.0 / self.m as f64;
        (1.0 - q).powi(t0 as i32 - 1) * q
    }

    /// `E[λ_t | T₀ = t₀]`.
    pub fn conditional_lambda(&self, t: usize, t0: usize) -> f64 {
        if t < t0 {
            return 0.0;
        }
        let a = self.p * self.gamma * self.l * self.b * self.b;
        let fixed = self.beta / (self.b * self.b * self.l);
        let start = self.gamma * self.beta * (self.f as f64 + 1.0) / (self.n - self.f) as f64;
        fixed + (start - fixed) * (1.0 - a).powi((t - t0) as i32)
    }

    /// `E[λ_T]` mixed over the law of `T₀` (paths with `T₀ > T` contribute 0).
    pub fn mixture_lambda(&self) -> f64 {
        (1..=self.steps)
            .map(|t0| self.t0_probability(t0) * self.conditional_lambda(self.steps, t0))
            .sum()
    }

    /// `E[θ_T] = E[λ_T]·v`.
    pub fn mixture_theta(&self) -> Vector {
        self.v.scale(self.mixture_lambda())
    }

    /// The example `(v, -C/√L)` at which the loss gap equals `C√L·λ`.
    pub fn witness_point(&self) -> DataPoint {
        DataPoint::labeled(self.v.clone(), -self.beta)
    }

    /// `½(1 - (1 - e^{-τ})/τ)·pγC²T` with `τ = T/m`.
    pub fn stability_lower_bound(&self) -> f64 {
        let tau = self.steps as f64 / self.m as f64;
        0.5 * (1.0 - (1.0 - (-tau).exp()) / tau)
            * self.p
            * self.gamma
            * self.c
            * self.c
            * self.steps as f64
    }
}

/// Everything a construction produces.
#[derive(Debug, Clone)]
pub struct ConstructionOutput {
    pub pair: NeighboringPair,
    /// Honest population holding the base datasets; no Byzantine workers.
    pub workers: WorkerSet,
    pub loss: LossModel,
    pub groups: Groups,
    pub psi: f64,
    /// Present for the GD constructions.
    pub predicted: Option<Prediction>,
    /// Present for the projected-SGD construction.
    pub projected: Option<ProjectedModel>,
}

fn assemble(
    n: usize,
    groups: &Groups,
    pivot_base: Vec<DataPoint>,
    pivot_variant: Vec<DataPoint>,
    neutral: DataPoint,
    e: DataPoint,
    f: DataPoint,
    m: usize,
) -> Result<(NeighboringPair, WorkerSet)> {
    let mut base = vec![HonestWorker::new(groups.pivot, pivot_base)];
    let mut variant = vec![HonestWorker::new(groups.pivot, pivot_variant)];
    for (ids, z) in [
        (&groups.neutral, &neutral),
        (&groups.e, &e),
        (&groups.f, &f),
    ] {
        for &id in ids {
            base.push(HonestWorker::new(id, vec![z.clone(); m]));
            variant.push(HonestWorker::new(id, vec![z.clone(); m]));
        }
    }
    let pair = NeighboringPair::new(base.clone(), variant, (groups.pivot, 0))?;
    let workers = WorkerSet::new(n, base, vec![], None)?;
    Ok((pair, workers))
}

fn pivot_data(special: DataPoint, zero: DataPoint, m: usize) -> (Vec<DataPoint>, Vec<DataPoint>) {
    let mut base = vec![zero.clone(); m];
    base[0] = special;
    (base, vec![zero; m])
}

/// The linear-loss construction for robust GD.
///
/// Data: the pivot holds `-C` at example 0 and zeros elsewhere (zeros only
/// on the variant), `N` holds zeros, `E` holds `(1+ψ)C/2` and `F` holds
/// `-C`, with `ψ = √(max(0, n-2f-2/m)/(n-2f+2/m))`.
pub fn build_linear_lb(params: &ConstructionParams) -> Result<ConstructionOutput> {
    params.validate_common()?;
    let ConstructionParams { n, f, m, c, .. } = *params;
    let (nf, ff, mf) = (n as f64, f as f64, m as f64);
    let psi = match params.psi_override {
        Some(psi) => psi,
        None => ((nf - 2.0 * ff - 2.0 / mf).max(0.0) / (nf - 2.0 * ff + 2.0 / mf)).sqrt(),
    };
    let groups = Groups::new(n, f);
    let (pb, pv) = pivot_data(DataPoint::Scalar(-c), DataPoint::Scalar(0.0), m);
    let (pair, workers) = assemble(
        n,
        &groups,
        pb,
        pv,
        DataPoint::Scalar(0.0),
        DataPoint::Scalar(0.5 * (1.0 + psi) * c),
        DataPoint::Scalar(-c),
        m,
    )?;
    let horizon = params.gamma * c * params.steps as f64;
    let predicted = Prediction {
        base_subset: groups.base_selection(n),
        variant_subset: groups.variant_selection(n),
        theta_base: params.p() * horizon,
        theta_variant: -(ff / (nf - ff)) * 0.5 * (1.0 + psi) * horizon,
    };
    Ok(ConstructionOutput {
        pair,
        workers,
        loss: LossModel::linear1d(c, params.l)?,
        groups,
        psi,
        predicted: Some(predicted),
        projected: None,
    })
}

/// Open interval of admissible `ψ` for the strongly convex construction.
pub fn strongcvx_psi_interval(n: usize, f: usize, m: usize) -> (f64, f64) {
    let (nf, ff, mf) = (n as f64, f as f64, m as f64);
    let radicand = (nf - 2.0 * (ff + 1.0 / mf)).max(0.0) / (nf - 2.0 * (ff - 1.0 / mf));
    let lower = radicand.sqrt().max(1.0 - 4.0 / (mf * (nf - 2.0 * ff)));
    (lower, 1.0)
}

/// The quadratic-loss construction for robust GD.
///
/// Data on the ball of radius `R = C/(2μ)`: the pivot holds `R` at example
/// 0 (zero on the variant), `N` holds zeros, `E` holds `-(1+ψ)R/2` and `F`
/// holds `R`. `ψ` defaults to the midpoint of [`strongcvx_psi_interval`].
pub fn build_strongcvx_lb(params: &ConstructionParams) -> Result<ConstructionOutput> {
    params.validate_common()?;
    let ConstructionParams { n, f, m, c, l, .. } = *params;
    let mu = params
        .mu
        .ok_or_else(|| Error::validation("the strongly convex construction needs mu"))?;
    let loss = LossModel::quadratic_mean(c, mu, l)?;
    let (lower, upper) = strongcvx_psi_interval(n, f, m);
    if lower >= upper {
        return Err(Error::infeasible(format!(
            "empty psi interval ({lower}, {upper}) for n = {n}, f = {f}, m = {m}"
        )));
    }
    let psi = match params.psi_override {
        Some(psi) if psi > lower && psi < upper => psi,
        Some(psi) => {
            return Err(Error::infeasible(format!(
                "psi = {psi} lies outside the admissible interval ({lower}, {upper})"
            )))
        }
        None => 0.5 * (lower + upper),
    };
    let r = c / (2.0 * mu);
    let groups = Groups::new(n, f);
    let (pb, pv) = pivot_data(DataPoint::Scalar(r), DataPoint::Scalar(0.0), m);
    let (pair, workers) = assemble(
        n,
        &groups,
        pb,
        pv,
        DataPoint::Scalar(0.0),
        DataPoint::Scalar(-0.5 * (1.0 + psi) * r),
        DataPoint::Scalar(r),
        m,
    )?;
    let (nf, ff) = (n as f64, f as f64);
    let decay = 1.0 - (1.0 - params.gamma * mu).powi(params.steps as i32);
    let predicted = Prediction {
        base_subset: groups.base_selection(n),
        variant_subset: groups.variant_selection(n),
        theta_base: params.p() * r * decay,
        theta_variant: -(ff / (nf - ff)) * 0.5 * (1.0 + psi) * r * decay,
    };
    Ok(ConstructionOutput {
        pair,
        workers,
        loss,
        groups,
        psi,
        predicted: Some(predicted),
        projected: None,
    })
}

/// The huberized-regression construction for robust projected SGD.
///
/// With `v = (√L, 0)`, `β = C/√L`, `α = (1-ε)β` and `b = 1/√T`: the pivot
/// holds `(bv, β/b)` at example 0 and `(0, 0)` elsewhere (all `(0, 0)` on
/// the variant), `N` holds `(0, 0)`, `E` holds `(v, -α)` and `F` holds
/// `(bv, β/b)`. Iterates are projected onto the ray spanned by `v`.
pub fn build_projected_lb(params: &ConstructionParams) -> Result<ConstructionOutput> {
    params.validate_common()?;
    let ConstructionParams {
        n,
        f,
        m,
        c,
        l,
        gamma,
        steps,
        ..
    } = *params;
    if n < 2 * f + 3 {
        return Err(Error::infeasible(format!(
            "the projected construction needs n - 2f >= 3, got n = {n}, f = {f}"
        )));
    }
    if steps == 0 {
        return Err(Error::validation(
            "the projected construction needs at least one step",
        ));
    }
    let (nf, ff) = (n as f64, f as f64);
    let psi = (nf - 2.0 * ff - 2.0) / (nf - 2.0 * ff);
    let eps_cap = (1.0 - psi).min(gamma * l * ff / (nf - ff));
    let epsilon = params.epsilon.unwrap_or(0.5 * eps_cap);
    if !(epsilon > 0.0 && epsilon < eps_cap) {
        return Err(Error::infeasible(format!(
            "epsilon = {epsilon} must lie in (0, {eps_cap})"
        )));
    }
    let v = Vector::new(vec![l.sqrt(), 0.0])?;
    let beta = c / l.sqrt();
    let alpha = (1.0 - epsilon) * beta;
    let b = 1.0 / (steps as f64).sqrt();
    let zero = DataPoint::labeled(Vector::zeros(2), 0.0);
    let spike = DataPoint::labeled(v.scale(b), beta / b);
    let groups = Groups::new(n, f);
    let (pb, pv) = pivot_data(spike.clone(), zero.clone(), m);
    let (pair, workers) = assemble(
        n,
        &groups,
        pb,
        pv,
        zero,
        DataPoint::labeled(v.clone(), -alpha),
        spike,
        m,
    )?;
    let loss = LossModel::huberized_regression(c, l, ProjectionDomain::ray(v.clone())?)?;
    let projected = ProjectedModel {
        n,
        f,
        m,
        c,
        l,
        gamma,
        steps,
        v,
        beta,
        alpha,
        b,
        epsilon,
        p: params.p(),
    };
    Ok(ConstructionOutput {
        pair,
        workers,
        loss,
        groups,
        psi,
        predicted: None,
        projected: Some(projected),
    })
}

/// Byzantine ids used by the reference experiment.
///
/// For `n = 15` and `1 ≤ f ≤ 7` these are the tabulated sets; otherwise the
/// last `f` workers.
pub fn byzantine_identity_table(n: usize, f: usize) -> IndexSubset {
    let ids: Vec<usize> = match (n, f) {
        (15, 1..=5) => (1..=f).collect(),
        (15, 6) => (6..=11).collect(),
        (15, 7) => (5..=11).collect(),
        _ => (n.saturating_sub(f)..n).collect(),
    };
    IndexSubset::new(ids, n).expect("table entries are sorted and in range")
}

/// State of the tailored attack for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TailoredAttackState {
    pub byz_ids: IndexSubset,
    pub epsilon: f64,
    /// Gradient each Byzantine worker sends while `θ = 0`: the value its
    /// poisoned dataset would produce.
    pub poisoning_mimic: BTreeMap<usize, f64>,
    /// Half-width multiplier `K = bracket·(max|g| + C)` of the search.
    pub bracket: f64,
    /// Lipschitz constant entering the bracket.
    pub c: f64,
}

impl TailoredAttackState {
    /// State whose mimic values are the base-dataset gradients at `θ = 0`
    /// of a linear construction.
    pub fn from_construction(
        construction: &ConstructionOutput,
        byz_ids: IndexSubset,
        epsilon: f64,
    ) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::validation(format!(
                "attack epsilon must be positive, got {epsilon}"
            )));
        }
        let theta0 = Vector::scalar(0.0);
        let mut mimic = BTreeMap::new();
        for w in &construction.pair.base {
            if byz_ids.contains(w.id) {
                let g = construction.loss.empirical_gradient(&theta0, &w.data)?;
                mimic.insert(w.id, g.as_scalar()?);
            }
        }
        if let Some(&missing) = byz_ids.indices().iter().find(|id| !mimic.contains_key(id)) {
            return Err(Error::validation(format!(
                "no poisoning value for worker {missing}"
            )));
        }
        Ok(TailoredAttackState {
            byz_ids,
            epsilon,
            poisoning_mimic: mimic,
            bracket: DEFAULT_BRACKET,
            c: construction.loss.c,
        })
    }
}

/// Whether SMEA keeps at least one Byzantine slot when every Byzantine
/// worker sends `candidate`.
fn byzantine_selected(
    byz_ids: &IndexSubset,
    honest: &[(usize, f64)],
    n: usize,
    f: usize,
    candidate: f64,
) -> Result<bool> {
    let mut values = vec![candidate; n];
    for &(id, g) in honest {
        values[id] = g;
    }
    let out = aggregate_smea(&GradientBatch::from_scalars(&values)?, f)?;
    let selected = out.selected.expect("SMEA reports its subset");
    Ok(byz_ids.indices().iter().any(|&i| selected.contains(i)))
}

/// Which end of the selected region the attack targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// The smallest selected value.
    Infimum,
    /// The largest selected value.
    Supremum,
}

/// Boundary of the set of candidate values for which SMEA still selects a
/// Byzantine slot, found by bracketing on `[-K, K]` and bisection.
pub fn selection_boundary(
    state: &TailoredAttackState,
    honest: &[(usize, f64)],
    n: usize,
    f: usize,
    which: Boundary,
) -> Result<f64> {
    let max_abs = honest.iter().map(|(_, g)| g.abs()).fold(0.0f64, f64::max);
    let k = state.bracket * (max_abs + state.c);
    let member = |x: f64| byzantine_selected(&state.byz_ids, honest, n, f, x);

    // A selected starting point: honest values first, then a uniform scan.
    let mut inside = None;
    let mut sorted: Vec<f64> = honest.iter().map(|(_, g)| *g).collect();
    sorted.sort_by(f64::total_cmp);
    let median = sorted.get(sorted.len() / 2).copied();
    let scan =
        (0..MEMBER_SCAN_POINTS).map(|i| -k + 2.0 * k * i as f64 / (MEMBER_SCAN_POINTS - 1) as f64);
    for x in median.into_iter().chain(sorted.iter().copied()).chain(scan) {
        if member(x)? {
            inside = Some(x);
            break;
        }
    }
    let inside = inside.ok_or_else(|| {
        Error::infeasible(format!(
            "no candidate in [{}, {k}] is selected by SMEA with f = {f}",
            -k
        ))
    })?;

    let outer = match which {
        Boundary::Infimum => -k,
        Boundary::Supremum => k,
    };
    if member(outer)? {
        return Ok(outer);
    }
    let (mut good, mut bad) = (inside, outer);
    for _ in 0..BISECTION_MAX_ITER {
        if (good - bad).abs() <= BISECTION_TOL {
            break;
        }
        let mid = 0.5 * (good + bad);
        if member(mid)? {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Ok(good)
}

/// Value sent by every Byzantine worker at parameter `theta`.
///
/// At `θ = 0` each worker returns its poisoning value, so the returned
/// vector has one entry per Byzantine id. Otherwise all workers send the
/// same scalar: the infimum of the selected region plus `ε` when `θ > 0`,
/// or the supremum minus `ε` when `θ < 0`.
pub fn tailored_byzantine_value(
    state: &TailoredAttackState,
    theta: &Vector,
    honest_gradients: &[(usize, Vector)],
    n: usize,
    f: usize,
) -> Result<Vec<Vector>> {
    let theta = theta.as_scalar()?;
    if state.byz_ids.is_empty() {
        return Err(Error::validation(
            "the tailored attack needs at least one Byzantine worker",
        ));
    }
    if theta == 0.0 {
        return state
            .byz_ids
            .indices()
            .iter()
            .map(|id| {
                state
                    .poisoning_mimic
                    .get(id)
                    .map(|&g| Vector::scalar(g))
                    .ok_or_else(|| Error::validation(format!("no poisoning value for worker {id}")))
            })
            .collect();
    }
    let honest = honest_gradients
        .iter()
        .map(|(id, g)| Ok((*id, g.as_scalar()?)))
        .collect::<Result<Vec<_>>>()?;
    let value = if theta > 0.0 {
        selection_boundary(state, &honest, n, f, Boundary::Infimum)? + state.epsilon
    } else {
        selection_boundary(state, &honest, n, f, Boundary::Supremum)? - state.epsilon
    };
    Ok(vec![Vector::scalar(value); state.byz_ids.len()])
}

/// The tailored attack as an engine strategy.
#[derive(Debug, Clone)]
pub struct TailoredAttack {
    pub state: TailoredAttackState,
}

impl ByzantineStrategy for TailoredAttack {
    fn name(&self) -> &'static str {
        "tailored"
    }

    fn act(&mut self, ctx: &StepContext<'_>) -> Result<Vec<Vector>> {
        if ctx.byzantine_ids != self.state.byz_ids.indices() {
            return Err(Error::configuration(format!(
                "attack state targets {} but the run's Byzantine ids are {:?}",
                self.state.byz_ids, ctx.byzantine_ids
            )));
        }
        tailored_byzantine_value(&self.state, ctx.theta, ctx.honest_gradients, ctx.n, ctx.f)
    }

    fn box_clone(&self) -> Box<dyn ByzantineStrategy> {
        Box::new(self.clone())
    }
}

/// Byzantine workers that keep sending their poisoning values.
#[derive(Debug, Clone)]
pub struct MimicAttack {
    pub values: BTreeMap<usize, f64>,
}

impl ByzantineStrategy for MimicAttack {
    fn name(&self) -> &'static str {
        "mimic"
    }

    fn act(&mut self, ctx: &StepContext<'_>) -> Result<Vec<Vector>> {
        ctx.byzantine_ids
            .iter()
            .map(|id| {
                self.values
                    .get(id)
                    .map(|&g| Vector::scalar(g))
                    .ok_or_else(|| Error::validation(format!("no poisoning value for worker {id}")))
            })
            .collect()
    }

    fn box_clone(&self) -> Box<dyn ByzantineStrategy> {
        Box::new(self.clone())
    }
}

/// Builds a strategy from a poisoning construction's attack state.
pub type StrategyFactory =
    Arc<dyn Fn(&TailoredAttackState) -> Result<Box<dyn ByzantineStrategy>> + Send + Sync>;

/// Name-indexed collection of Byzantine strategies.
#[derive(Clone)]
pub struct StrategyRegistry {
    factories: HashMap<String, StrategyFactory>,
}

impl StrategyRegistry {
    /// An empty registry.
    pub fn empty() -> Self {
        StrategyRegistry {
            factories: HashMap::new(),
        }
    }

    /// Add or replace a strategy factory.
    pub fn register(&mut self, name: &str, factory: StrategyFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    /// Instantiate the named strategy.
    pub fn create(
        &self,
        name: &str,
        state: &TailoredAttackState,
    ) -> Result<Box<dyn ByzantineStrategy>> {
        let factory = self.factories.get(name).ok_or_else(|| {
            Error::configuration(format!(
                "unknown Byzantine strategy '{name}' (available: {})",
                self.names().join(", ")
            ))
        })?;
        factory(state)
    }

    /// Registered names in sorted order.
    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.factories.keys().cloned().collect();
        names.sort();
        names
    }
}

impl Default for StrategyRegistry {
    /// A registry holding `tailored` and `mimic`.
    fn default() -> Self {
        let mut reg = Self::empty();
        reg.register(
            "tailored",
            Arc::new(|s: &TailoredAttackState| {
                Ok(Box::new(TailoredAttack { state: s.clone() }) as Box<dyn ByzantineStrategy>)
            }),
        );
        reg.register(
            "mimic",
            Arc::new(|s: &TailoredAttackState| {
                Ok(Box::new(MimicAttack {
                    values: s.poisoning_mimic.clone(),
                }) as Box<dyn ByzantineStrategy>)
            }),
        );
        reg
    }
}

impl fmt::Debug for StrategyRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StrategyRegistry")
            .field("strategies", &self.names())
            .finish()
    }
}

/// Replaces the workers listed in `byz_ids` by Byzantine workers running
/// `strategy`, keeping every other worker's base and variant data.
pub fn byzantine_setting(
    construction: &ConstructionOutput,
    byz_ids: &IndexSubset,
    strategy: Box<dyn ByzantineStrategy>,
) -> Result<(NeighboringPair, WorkerSet)> {
    let keep = |ws: &[HonestWorker]| -> Vec<HonestWorker> {
        ws.iter()
            .filter(|w| !byz_ids.contains(w.id))
            .cloned()
            .collect()
    };
    let base = keep(&construction.pair.base);
    let variant = keep(&construction.pair.variant);
    let pair = NeighboringPair::new(base.clone(), variant, construction.pair.diff_location)?;
    let n = construction.workers.n();
    let workers = WorkerSet::new(n, base, byz_ids.indices().to_vec(), Some(strategy))?;
    Ok((pair, workers))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_reference_values() {
        let out = build_linear_lb(&ConstructionParams::reference(3)).unwrap();
        assert!((out.psi - (7.0f64 / 11.0).sqrt()).abs() < 1e-15);
        let pred = out.predicted.unwrap();
        assert!((pred.theta_base - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            pred.base_subset.indices(),
            &[0, 1, 2, 3, 4, 5, 6, 7, 8, 12, 13, 14]
        );
        assert_eq!(out.groups.neutral.len(), 15 - 6 - 1);

        let out = build_linear_lb(&ConstructionParams::reference(7)).unwrap();
        assert_eq!(out.psi, 0.0);
        assert!(out.groups.neutral.is_empty());
        assert_eq!(out.pair.base[1].data[0], DataPoint::Scalar(0.5));

        let out = build_linear_lb(&ConstructionParams::reference(0)).unwrap();
        assert!(out.groups.e.is_empty() && out.groups.f.is_empty());
    }

    #[test]
    fn strongcvx_reference_values() {
        let mut params = ConstructionParams::reference(3);
        params.mu = Some(1.0);
        let out = build_strongcvx_lb(&params).unwrap();
        let pred = out.predicted.unwrap();
        assert!((pred.theta_base - 1.0 / 6.0).abs() < 1e-15);
        let (lo, hi) = strongcvx_psi_interval(15, 3, 1);
        assert!((out.psi - 0.5 * (lo + hi)).abs() < 1e-15);
        params.psi_override = Some(0.01);
        assert!(matches!(
            build_strongcvx_lb(&params),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn projected_reference_values() {
        let mut params = ConstructionParams::reference(3);
        params.steps = 16;
        params.m = 4;
        let out = build_projected_lb(&params).unwrap();
        assert!((out.psi - 7.0 / 9.0).abs() < 1e-15);
        let model = out.projected.unwrap();
        let theta = Vector::zeros(2);
        let e_point = &out.pair.base[out.groups.e[0]].data[0];
        let g = out.loss.gradient(&theta, e_point).unwrap();
        assert!((g.norm() - (1.0 - model.epsilon)).abs() < 1e-15);
        // Probabilities over t0 = 1..∞ sum to one.
        let total: f64 = (1..2000).map(|t| model.t0_probability(t)).sum();
        assert!((total - 1.0).abs() < 1e-12);

        params.epsilon = Some(0.5);
        assert!(matches!(
            build_projected_lb(&params),
            Err(Error::Infeasible(_))
        ));
        params.epsilon = None;
        params.f = 7;
        assert!(matches!(
            build_projected_lb(&params),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn identity_table() {
        assert_eq!(byzantine_identity_table(15, 1).indices(), &[1]);
        assert_eq!(
            byzantine_identity_table(15, 6).indices(),
            &[6, 7, 8, 9, 10, 11]
        );
        assert_eq!(
            byzantine_identity_table(15, 7).indices(),
            &[5, 6, 7, 8, 9, 10, 11]
        );
        assert_eq!(byzantine_identity_table(10, 2).indices(), &[8, 9]);
    }

    #[test]
    fn attack_at_origin_mimics_poisoning() {
        let out = build_linear_lb(&ConstructionParams::reference(7)).unwrap();
        let ids = byzantine_identity_table(15, 7);
        let state =
            TailoredAttackState::from_construction(&out, ids, DEFAULT_ATTACK_EPSILON).unwrap();
        let vals = tailored_byzantine_value(&state, &Vector::scalar(0.0), &[], 15, 7).unwrap();
        let got: Vec<f64> = vals.iter().map(|v| v[0]).collect();
        assert_eq!(got, vec![0.5, 0.5, 0.5, -1.0, -1.0, -1.0, -1.0]);
    }
}
