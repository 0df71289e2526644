//! End-to-end experiments built from the constructions: the stability
//! sweep over `f` under poisoning and the tailored Byzantine attack, the
//! strongly convex closed-form check, and the projected-SGD Monte-Carlo
//! comparison.

use serde::{Deserialize, Serialize};

use crate::aggregation::kappa_smea;
use crate::analysis::{
    empirical_kappa, generalization_error_linear, measure_stability, theorem_bound, BoundQuery,
    StabilityReport, Theorem,
};
use crate::engine::{monte_carlo_paired, run_paired, Algorithm, RunConfig, Schedule, Trajectory};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::threats::{
    build_linear_lb, build_projected_lb, build_strongcvx_lb, byzantine_identity_table,
    byzantine_setting, ConstructionOutput, ConstructionParams, StrategyRegistry,
    TailoredAttackState, DEFAULT_ATTACK_EPSILON,
};

/// Settings of the stability sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub n: usize,
    pub m: usize,
    pub c: f64,
    pub gamma: f64,
    pub steps: usize,
    /// Inclusive range of `f`.
    pub f_min: usize,
    pub f_max: usize,
    /// Registry name of the Byzantine strategy.
    pub attack: String,
    pub attack_epsilon: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            n: 15,
            m: 1,
            c: 1.0,
            gamma: 1.0,
            steps: 5,
            f_min: 1,
            f_max: 7,
            attack: "tailored".into(),
            attack_epsilon: DEFAULT_ATTACK_EPSILON,
        }
    }
}

impl SweepSettings {
    fn params(&self, f: usize) -> ConstructionParams {
        ConstructionParams {
            n: self.n,
            f,
            m: self.m,
            c: self.c,
            l: 1.0,
            mu: None,
            gamma: self.gamma,
            steps: self.steps,
            epsilon: None,
            psi_override: None,
        }
    }

    fn run_config(&self, f: usize) -> RunConfig {
        RunConfig {
            algorithm: Algorithm::Gd,
            rule: "smea".into(),
            f,
            steps: self.steps,
            schedule: Schedule::Constant(self.gamma),
            theta0: Vector::scalar(0.0),
            seed: 0,
            mc_runs: 1,
        }
    }

    /// Checks the range of `f` and the constants.
    pub fn validate(&self) -> Result<()> {
        if self.f_min > self.f_max {
            return Err(Error::validation(format!(
                "empty f range {}..{}",
                self.f_min, self.f_max
            )));
        }
        if 2 * self.f_max >= self.n {
            return Err(Error::validation(format!(
                "f = {} must satisfy f < n/2 for n = {}",
                self.f_max, self.n
            )));
        }
        if self.m == 0 || self.steps == 0 {
            return Err(Error::validation("m and T must be at least 1"));
        }
        if !(self.c > 0.0 && self.gamma > 0.0 && self.attack_epsilon > 0.0) {
            return Err(Error::validation(
                "C, gamma and the attack epsilon must be positive",
            ));
        }
        Ok(())
    }
}

/// Measurements of one threat model at one `f`.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub base: Trajectory,
    pub variant: Trajectory,
    pub stability: f64,
    pub kappa_hat_base: f64,
    pub kappa_hat_variant: f64,
    /// `(θ_base - θ_variant)/(4(n - f))`: the base pivot holds `-C`, the
    /// variant pivot holds 0.
    pub gen_error: f64,
}

fn measure_cell(
    construction: &ConstructionOutput,
    base: Trajectory,
    variant: Trajectory,
    n: usize,
    f: usize,
) -> Result<CellRun> {
    let (tb, tv) = (base.final_theta().clone(), variant.final_theta().clone());
    let stability = measure_stability(&[(tb.clone(), tv.clone())], &construction.loss, None)?;
    Ok(CellRun {
        kappa_hat_base: empirical_kappa(&base)?,
        kappa_hat_variant: empirical_kappa(&variant)?,
        gen_error: generalization_error_linear(tv.as_scalar()?, tb.as_scalar()?, n, f),
        stability,
        base,
        variant,
    })
}

/// Poisoning run of the linear construction at `f`.
pub fn poisoning_cell(settings: &SweepSettings, f: usize) -> Result<(ConstructionOutput, CellRun)> {
    let construction = build_linear_lb(&settings.params(f))?;
    let (a, b) = run_paired(
        &settings.run_config(f),
        &construction.pair,
        &construction.workers,
        &construction.loss,
    )?;
    let cell = measure_cell(&construction, a, b, settings.n, f)?;
    Ok((construction, cell))
}

/// Byzantine run at `f`: the tabulated workers of the linear construction
/// are replaced by workers running the configured strategy.
pub fn byzantine_cell(
    settings: &SweepSettings,
    construction: &ConstructionOutput,
    f: usize,
) -> Result<CellRun> {
    let ids = byzantine_identity_table(settings.n, f);
    let state =
        TailoredAttackState::from_construction(construction, ids.clone(), settings.attack_epsilon)?;
    let strategy = StrategyRegistry::default().create(&settings.attack, &state)?;
    let (pair, workers) = byzantine_setting(construction, &ids, strategy)?;
    let (a, b) = run_paired(&settings.run_config(f), &pair, &workers, &construction.loss)?;
    measure_cell(construction, a, b, settings.n, f)
}

/// One row of the sweep. Byzantine columns are empty when the attack could
/// not be built; `status` then carries the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Figure1Row {
    pub f: usize,
    pub kappa_theory: f64,
    pub kappa_hat_pois_base: f64,
    pub kappa_hat_pois_variant: f64,
    pub kappa_hat_byz_base: Option<f64>,
    pub kappa_hat_byz_variant: Option<f64>,
    pub stab_pois: f64,
    pub stab_byz: Option<f64>,
    pub lb_pois: f64,
    pub ub_pois: f64,
    pub ub_byz_theory: f64,
    pub ub_byz_empirical: Option<f64>,
    pub gen_err_pois: f64,
    pub gen_err_byz: Option<f64>,
    pub status: String,
}

impl Figure1Row {
    /// Column names in output order.
    pub const COLUMNS: [&'static str; 15] = [
        "f",
        "kappa_theory",
        "kappa_hat_pois_base",
        "kappa_hat_pois_variant",
        "kappa_hat_byz_base",
        "kappa_hat_byz_variant",
        "stab_pois",
        "stab_byz",
        "lb_pois",
        "ub_pois",
        "ub_byz_theory",
        "ub_byz_empirical",
        "gen_err_pois",
        "gen_err_byz",
        "status",
    ];

    /// The poisoning and Byzantine cells as stability reports.
    pub fn reports(&self, attack: &str) -> Vec<StabilityReport> {
        let mut out = vec![StabilityReport {
            attack: "poisoning".into(),
            f: self.f,
            measured_stability: self.stab_pois,
            stderr: None,
            lb_theoretical: Some(self.lb_pois),
            ub_theoretical: self.ub_pois,
            ub_empirical_kappa: None,
            kappa_hat_base: self.kappa_hat_pois_base,
            kappa_hat_variant: self.kappa_hat_pois_variant,
            gen_error: Some(self.gen_err_pois),
        }];
        if let (Some(s), Some(kb), Some(kv)) = (
            self.stab_byz,
            self.kappa_hat_byz_base,
            self.kappa_hat_byz_variant,
        ) {
            out.push(StabilityReport {
                attack: attack.to_string(),
                f: self.f,
                measured_stability: s,
                stderr: None,
                lb_theoretical: None,
                ub_theoretical: self.ub_byz_theory,
                ub_empirical_kappa: self.ub_byz_empirical,
                kappa_hat_base: kb,
                kappa_hat_variant: kv,
                gen_error: self.gen_err_byz,
            });
        }
        out
    }
}

/// `γCT(2/((n-f)m) + √κ̂ + √κ̂')`.
pub fn empirical_kappa_bound(
    gamma: f64,
    c: f64,
    steps: usize,
    n: usize,
    f: usize,
    m: usize,
    kappa_base: f64,
    kappa_variant: f64,
) -> f64 {
    gamma
        * c
        * steps as f64
        * (2.0 / ((n - f) * m) as f64 + kappa_base.sqrt() + kappa_variant.sqrt())
}

fn convex_bound(settings: &SweepSettings, theorem: Theorem, f: usize, kappa: f64) -> Result<f64> {
    let mut q = BoundQuery::new(
        theorem,
        settings.c,
        1.0,
        settings.steps,
        settings.n,
        f,
        settings.m,
    );
    q.gamma = Some(settings.gamma);
    q.kappa = Some(kappa);
    Ok(theorem_bound(&q)?.value)
}

/// Poisoning and Byzantine measurements for one `f`.
pub fn figure1_row(settings: &SweepSettings, f: usize) -> Result<Figure1Row> {
    let (n, m) = (settings.n, settings.m);
    let (construction, pois) = poisoning_cell(settings, f)?;
    let kappa = if f == 0 { 0.0 } else { kappa_smea(n, f)? };
    let mut row = Figure1Row {
        f,
        kappa_theory: kappa,
        kappa_hat_pois_base: pois.kappa_hat_base,
        kappa_hat_pois_variant: pois.kappa_hat_variant,
        kappa_hat_byz_base: None,
        kappa_hat_byz_variant: None,
        stab_pois: pois.stability,
        stab_byz: None,
        lb_pois: convex_bound(settings, Theorem::LbPoisConvex, f, kappa)?,
        ub_pois: convex_bound(settings, Theorem::PoisSmeaConvex, f, kappa)?,
        ub_byz_theory: convex_bound(settings, Theorem::ByzConvex, f, kappa)?,
        ub_byz_empirical: None,
        gen_err_pois: pois.gen_error,
        gen_err_byz: None,
        status: "ok".into(),
    };
    let byz = if f == 0 {
        // Without Byzantine workers both threat models coincide.
        Ok(pois)
    } else {
        byzantine_cell(settings, &construction, f)
    };
    match byz {
        Ok(cell) => {
            row.kappa_hat_byz_base = Some(cell.kappa_hat_base);
            row.kappa_hat_byz_variant = Some(cell.kappa_hat_variant);
            row.stab_byz = Some(cell.stability);
            row.gen_err_byz = Some(cell.gen_error);
            row.ub_byz_empirical = Some(empirical_kappa_bound(
                settings.gamma,
                settings.c,
                settings.steps,
                n,
                f,
                m,
                cell.kappa_hat_base,
                cell.kappa_hat_variant,
            ));
        }
        Err(Error::Infeasible(msg)) => row.status = format!("infeasible: {msg}"),
        Err(e) => return Err(e),
    }
    Ok(row)
}

/// One row per `f` in the configured range.
pub fn figure1(settings: &SweepSettings) -> Result<Vec<Figure1Row>> {
    settings.validate()?;
    (settings.f_min..=settings.f_max)
        .map(|f| figure1_row(settings, f))
        .collect()
}

/// Closed-form comparison for the strongly convex construction under GD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrongConvexReport {
    pub f: usize,
    pub psi: f64,
    pub theta_base: f64,
    pub theta_variant: f64,
    pub predicted_theta_base: f64,
    pub predicted_theta_variant: f64,
    pub subsets_match: bool,
    pub measured_stability: f64,
    /// `C·|θ_T|/2`.
    pub lower: f64,
    /// `(2C²/μ)(f/(n-f) + 1/((n-f)m))`.
    pub upper: f64,
}

/// Runs the strongly convex construction with GD and SMEA.
pub fn strongly_convex_report(params: &ConstructionParams) -> Result<StrongConvexReport> {
    let construction = build_strongcvx_lb(params)?;
    let config = RunConfig {
        algorithm: Algorithm::Gd,
        rule: "smea".into(),
        f: params.f,
        steps: params.steps,
        schedule: Schedule::Constant(params.gamma),
        theta0: Vector::scalar(0.0),
        seed: 0,
        mc_runs: 1,
    };
    let (a, b) = run_paired(
        &config,
        &construction.pair,
        &construction.workers,
        &construction.loss,
    )?;
    let pred = construction
        .predicted
        .clone()
        .expect("GD constructions carry predictions");
    let subsets_match = a
        .selected_subsets
        .iter()
        .all(|s| s.as_ref() == Some(&pred.base_subset))
        && b.selected_subsets
            .iter()
            .all(|s| s.as_ref() == Some(&pred.variant_subset));
    let (tb, tv) = (a.final_theta().clone(), b.final_theta().clone());
    let measured = measure_stability(&[(tb.clone(), tv.clone())], &construction.loss, None)?;
    let mu = params.mu.unwrap_or(1.0);
    let mut q = BoundQuery::new(
        Theorem::PoisSmeaStrongcvx,
        params.c,
        params.l,
        params.steps,
        params.n,
        params.f,
        params.m,
    );
    q.mu = Some(mu);
    q.gamma = Some(params.gamma);
    Ok(StrongConvexReport {
        f: params.f,
        psi: construction.psi,
        theta_base: tb.as_scalar()?,
        theta_variant: tv.as_scalar()?,
        predicted_theta_base: pred.theta_base,
        predicted_theta_variant: pred.theta_variant,
        subsets_match,
        measured_stability: measured,
        lower: params.c * tb.as_scalar()?.abs() / 2.0,
        upper: theorem_bound(&q)?.value,
    })
}

/// Monte-Carlo comparison for the projected-SGD construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedReport {
    pub f: usize,
    pub m: usize,
    pub steps: usize,
    pub seeds: usize,
    /// Monte-Carlo mean of `λ_T`, where `θ_T = λ_T·v` on the base run.
    pub mc_lambda: f64,
    pub mc_lambda_stderr: f64,
    /// `E[λ_T]` from the conditional-expectation mixture.
    pub closed_form_lambda: f64,
    /// `(mc_lambda - closed_form_lambda)/stderr`.
    pub z_score: f64,
    /// Stability at the witness example `(v, -C/√L)`.
    pub measured_stability: f64,
    pub stability_stderr: f64,
    /// `½(1 - (1 - e^{-τ})/τ)·pγC²T`.
    pub lower_bound: f64,
    /// Largest `|θ'_T|` over seeds; the variant run never moves.
    pub max_variant_norm: f64,
}

/// Runs the projected-SGD construction over `seeds` consecutive seeds.
pub fn projected_report(
    params: &ConstructionParams,
    seed: u64,
    seeds: usize,
) -> Result<ProjectedReport> {
    if seeds < 2 {
        return Err(Error::validation(
            "the Monte-Carlo report needs at least two seeds",
        ));
    }
    let construction = build_projected_lb(params)?;
    let model = construction
        .projected
        .clone()
        .expect("projected construction carries its model");
    let config = RunConfig {
        algorithm: Algorithm::ProjectedSgd,
        rule: "smea".into(),
        f: params.f,
        steps: params.steps,
        schedule: Schedule::Constant(params.gamma),
        theta0: Vector::zeros(2),
        seed,
        mc_runs: seeds,
    };
    let loss = &construction.loss;
    let witness = model.witness_point();
    let vn = model.v.norm_sq();
    let samples = monte_carlo_paired(
        &config,
        &construction.pair,
        &construction.workers,
        loss,
        |a, b| {
            let (ta, tb) = (a.final_theta(), b.final_theta());
            let lambda = ta.dot(&model.v) / vn;
            let gap = loss
                .value(ta, &witness)
                .and_then(|x| Ok(x - loss.value(tb, &witness)?));
            (lambda, gap, tb.norm())
        },
    )?;
    let k = samples.len() as f64;
    let mut lambdas = Vec::with_capacity(samples.len());
    let mut gaps = Vec::with_capacity(samples.len());
    let mut max_variant_norm = 0.0f64;
    for (lambda, gap, vnorm) in samples {
        lambdas.push(lambda);
        gaps.push(gap?);
        max_variant_norm = max_variant_norm.max(vnorm);
    }
    let mean_se = |xs: &[f64]| {
        let mean = xs.iter().sum::<f64>() / k;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
        (mean, (var / k).sqrt())
    };
    let (mc_lambda, mc_se) = mean_se(&lambdas);
    let (gap_mean, gap_se) = mean_se(&gaps);
    let closed = model.mixture_lambda();
    Ok(ProjectedReport {
        f: params.f,
        m: params.m,
        steps: params.steps,
        seeds,
        mc_lambda,
        mc_lambda_stderr: mc_se,
        closed_form_lambda: closed,
        z_score: if mc_se > 0.0 {
            (mc_lambda - closed) / mc_se
        } else {
            0.0
        },
        measured_stability: gap_mean.abs(),
        stability_stderr: gap_se,
        lower_bound: model.stability_lower_bound(),
        max_variant_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_row_three() {
        let row = figure1_row(&SweepSettings::default(), 3).unwrap();
        assert!((row.stab_pois - 2.7902).abs() < 1e-4);
        assert!((row.lb_pois - 5.0 / 3.0).abs() < 1e-12);
        assert!((row.ub_pois - 10.0 / 3.0).abs() < 1e-12);
        assert!((row.ub_byz_theory - 85.0 / 6.0).abs() < 1e-12);
        assert_eq!(row.status, "ok");
        assert!(row.stab_byz.unwrap() >= row.stab_pois);
    }

    #[test]
    fn attack_free_row() {
        let row = figure1_row(&SweepSettings::default(), 0).unwrap();
        assert!((row.stab_pois - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(row.stab_byz, Some(row.stab_pois));
        assert!((row.gen_err_pois - 1.0 / 180.0).abs() < 1e-14);
    }

    #[test]
    fn sweep_rejects_bad_range() {
        let s = SweepSettings {
            f_min: 4,
            f_max: 2,
            ..SweepSettings::default()
        };
        assert!(matches!(figure1(&s), Err(Error::Validation(_))));
        let s = SweepSettings {
            f_max: 8,
            ..SweepSettings::default()
        };
        assert!(matches!(figure1(&s), Err(Error::Validation(_))));
    }
}
