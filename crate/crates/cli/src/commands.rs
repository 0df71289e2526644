//! The five subcommands.
//!
//! Each command reads its parameters from a [`Config`], writes data to a
//! [`Sink`] and returns the process exit code for outcomes that are not
//! errors (a failed verification suite exits with 2).

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use robust_agg::aggregation::{kappa_cwtm, kappa_smea};
use robust_agg::analysis::{
    cwtm_cocoercivity_counterexample, empirical_kappa, estimate_stability,
    generalization_error_linear, theorem_bound, BoundQuery, StabilityReport, Theorem,
};
use robust_agg::engine::{
    monte_carlo_paired, run_paired, Algorithm, RunConfig, Schedule, Trajectory,
};
use robust_agg::experiments::{
    figure1, projected_report, Figure1Row, ProjectedReport, SweepSettings,
};
use robust_agg::linalg::Vector;
use robust_agg::threats::{
    build_linear_lb, build_projected_lb, build_strongcvx_lb, byzantine_identity_table,
    byzantine_setting, ConstructionParams, Prediction, StrategyRegistry, TailoredAttackState,
    DEFAULT_ATTACK_EPSILON,
};
use robust_agg::verify::{run_suite, SuiteReport, VerifyOptions, SUITE_NAMES};
use robust_agg::Error;

use crate::config::Config;
use crate::output::{figure1_plot_script, num, opt, plot_script_path, Format, Sink};

/// Output settings shared by every command.
pub struct Output {
    pub sink: Sink,
    pub format: Format,
    /// Whether `format` was chosen explicitly.
    pub format_given: bool,
    pub emit_plot_script: bool,
}

fn validation(msg: impl Into<String>) -> anyhow::Error {
    Error::Validation(msg.into()).into()
}

/// Stability sweep over `f` for the linear construction.
pub fn figure1_cmd(cfg: &Config, out: &Output) -> Result<i32> {
    let defaults = SweepSettings::default();
    let (f_min, f_max) = cfg.range_or("f_range", (defaults.f_min, defaults.f_max))?;
    let settings = SweepSettings {
        n: cfg.get_or("n", defaults.n)?,
        m: cfg.get_or("m", defaults.m)?,
        c: cfg.get_or("c", defaults.c)?,
        gamma: cfg.get_or("gamma", defaults.gamma)?,
        steps: cfg.get_or("steps", defaults.steps)?,
        f_min,
        f_max,
        attack: cfg.get_or("attack", defaults.attack.clone())?,
        attack_epsilon: cfg.get_or("attack_epsilon", defaults.attack_epsilon)?,
    };
    if out.emit_plot_script && (out.sink.path.is_none() || out.format != Format::Csv) {
        bail!(validation(
            "--emit-plot-script needs --out PATH and the csv format"
        ));
    }
    let rows = figure1(&settings)?;
    match out.format {
        Format::Csv => {
            let body: Vec<Vec<String>> = rows.iter().map(figure1_cells).collect();
            out.sink.csv(&Figure1Row::COLUMNS, &body)?;
        }
        Format::Json => {
            let reports: Vec<StabilityReport> = rows
                .iter()
                .flat_map(|r| r.reports(&settings.attack))
                .collect();
            out.sink.json(&reports)?;
        }
    }
    if out.emit_plot_script {
        let csv_path = out.sink.path.as_deref().expect("checked above");
        write_plot_script(csv_path)?;
    }
    for r in &rows {
        if r.status != "ok" {
            eprintln!("f = {}: {}", r.f, r.status);
        }
    }
    Ok(0)
}

fn figure1_cells(r: &Figure1Row) -> Vec<String> {
    vec![
        r.f.to_string(),
        num(r.kappa_theory),
        num(r.kappa_hat_pois_base),
        num(r.kappa_hat_pois_variant),
        opt(r.kappa_hat_byz_base),
        opt(r.kappa_hat_byz_variant),
        num(r.stab_pois),
        opt(r.stab_byz),
        num(r.lb_pois),
        num(r.ub_pois),
        num(r.ub_byz_theory),
        opt(r.ub_byz_empirical),
        num(r.gen_err_pois),
        opt(r.gen_err_byz),
        r.status.clone(),
    ]
}

fn write_plot_script(csv_path: &Path) -> Result<()> {
    let script = plot_script_path(csv_path);
    std::fs::write(&script, figure1_plot_script(csv_path))
        .with_context(|| format!("cannot write {}", script.display()))?;
    eprintln!("wrote {}", script.display());
    Ok(())
}

/// Runs property suites; exits with 2 when any check fails.
pub fn verify_cmd(cfg: &Config, out: &Output) -> Result<i32> {
    let defaults = VerifyOptions::default();
    let opts = VerifyOptions {
        seed: cfg.get_or("seed", defaults.seed)?,
        kappa_scale: cfg.get_or("kappa_scale", defaults.kappa_scale)?,
        projected_seeds: cfg.get_or(
            "projected_seeds",
            cfg.get_or("seeds", defaults.projected_seeds)?,
        )?,
    };
    if !(opts.kappa_scale > 0.0 && opts.kappa_scale.is_finite()) {
        bail!(validation(format!(
            "kappa_scale must be positive, got {}",
            opts.kappa_scale
        )));
    }
    let names: Vec<String> = match cfg.raw("suite") {
        None | Some("all") => SUITE_NAMES.iter().map(|s| s.to_string()).collect(),
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
    };
    let structured = out.format_given || out.sink.path.is_some();
    let mut reports = Vec::with_capacity(names.len());
    for name in &names {
        let report = run_suite(name, &opts)?;
        if structured {
            eprintln!("{report}");
        } else {
            println!("{report}");
        }
        reports.push(report);
    }
    if structured {
        match out.format {
            Format::Csv => {
                let rows: Vec<Vec<String>> = reports.iter().map(suite_cells).collect();
                out.sink.csv(
                    &[
                        "suite",
                        "passed",
                        "checks",
                        "failures",
                        "worst_slack",
                        "witness",
                    ],
                    &rows,
                )?;
            }
            Format::Json => out.sink.json(&reports)?,
        }
    }
    Ok(if reports.iter().all(SuiteReport::passed) {
        0
    } else {
        2
    })
}

fn suite_cells(r: &SuiteReport) -> Vec<String> {
    vec![
        r.name.clone(),
        r.passed().to_string(),
        r.checks.to_string(),
        r.failures.to_string(),
        num(r.worst_slack),
        r.witness.clone().unwrap_or_default(),
    ]
}

/// One evaluated bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
struct BoundRow {
    f: usize,
    theorem: String,
    value: Option<f64>,
    order_only: bool,
    status: String,
}

/// Pairs whose quotient is reported when both members were evaluated.
const RATIO_PAIRS: [(Theorem, Theorem); 4] = [
    (Theorem::ByzConvex, Theorem::PoisSmeaConvex),
    (Theorem::ByzStrongcvx, Theorem::PoisSmeaStrongcvx),
    (Theorem::ByzNonconvexSgd, Theorem::PoisSmeaNonconvex),
    (Theorem::ByzNonconvexSgd, Theorem::PoisCwtmNonconvex),
];

/// Closed-form bounds over a range of `f`.
pub fn bounds_cmd(cfg: &Config, out: &Output) -> Result<i32> {
    let n: usize = cfg.get_or("n", 15)?;
    let m: usize = cfg.get_or("m", 1)?;
    let c: f64 = cfg.get_or("c", 1.0)?;
    let l: f64 = cfg.get_or("l", 1.0)?;
    let steps: usize = cfg.get_or("steps", 5)?;
    let (f_min, f_max) = cfg.range_or("f_range", (1, 7))?;
    let gamma: f64 = cfg.get_or("gamma", 1.0 / l)?;
    let mu: Option<f64> = cfg.get("mu")?;
    let c_schedule: Option<f64> = cfg.get("c_schedule")?;
    let ell_inf: Option<f64> = cfg.get("ell_inf")?;
    let nu: Option<f64> = cfg.get("nu")?;
    let kappa: Option<f64> = cfg.get("kappa")?;
    let rule: String = cfg.get_or("rule", "smea".to_string())?;
    let override_regime: bool = cfg.get_or("override_regime", false)?;

    let theorems: Vec<Theorem> = match cfg.raw("theorem") {
        None | Some("all") => Theorem::ALL
            .into_iter()
            .filter(|th| match th {
                Theorem::ByzStrongcvx | Theorem::PoisSmeaStrongcvx | Theorem::LbPoisStrongcvx => {
                    mu.is_some()
                }
                Theorem::ByzNonconvexSgd | Theorem::PoisSmeaNonconvex => c_schedule.is_some(),
                Theorem::PoisCwtmNonconvex => c_schedule.is_some() && nu.is_some(),
                _ => true,
            })
            .collect(),
        Some(list) => list
            .split(',')
            .map(|s| Theorem::from_name(s.trim()))
            .collect::<std::result::Result<_, _>>()?,
    };

    let mut rows = Vec::new();
    for f in f_min..=f_max {
        let kappa_f = match kappa {
            Some(k) => k,
            None if f == 0 => 0.0,
            None => match rule.as_str() {
                "smea" => kappa_smea(n, f)?,
                "cwtm" => kappa_cwtm(n, f)?,
                other => bail!(validation(format!(
                    "rule '{other}' has no robustness coefficient; set kappa explicitly"
                ))),
            },
        };
        let mut at_f: Vec<(Theorem, f64)> = Vec::new();
        for &th in &theorems {
            let mut q = BoundQuery::new(th, c, l, steps, n, f, m);
            q.gamma = Some(gamma);
            q.mu = mu;
            q.c_schedule = c_schedule;
            q.ell_inf = ell_inf;
            q.nu = nu;
            q.kappa = Some(kappa_f);
            q.override_regime = override_regime;
            if th == Theorem::PoisCwtmNonconvex && !override_regime {
                let nu = nu.unwrap_or(0.0);
                if (n as f64) < (2.0 + nu) * f as f64 {
                    rows.push(BoundRow {
                        f,
                        theorem: th.name().into(),
                        value: None,
                        order_only: false,
                        status: format!("outside regime: n < (2 + nu) f with nu = {nu}"),
                    });
                    continue;
                }
            }
            let b = theorem_bound(&q)?;
            at_f.push((th, b.value));
            rows.push(BoundRow {
                f,
                theorem: th.name().into(),
                value: Some(b.value),
                order_only: b.order_only,
                status: "ok".into(),
            });
        }
        let lookup = |t: Theorem| at_f.iter().find(|(u, _)| *u == t).map(|(_, v)| *v);
        for (num_th, den_th) in RATIO_PAIRS {
            if let (Some(a), Some(b)) = (lookup(num_th), lookup(den_th)) {
                rows.push(BoundRow {
                    f,
                    theorem: format!("ratio:{num_th}/{den_th}"),
                    value: Some(a / b),
                    order_only: false,
                    status: "ok".into(),
                });
            }
        }
    }
    if rows.is_empty() {
        bail!(validation("no theorem selected"));
    }
    match out.format {
        Format::Csv => {
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.f.to_string(),
                        r.theorem.clone(),
                        opt(r.value),
                        r.order_only.to_string(),
                        r.status.clone(),
                    ]
                })
                .collect();
            out.sink
                .csv(&["f", "theorem", "value", "order_only", "status"], &body)?;
        }
        Format::Json => out.sink.json(&rows)?,
    }
    Ok(0)
}

/// Everything one `run` produces.
#[derive(Debug, Clone, Serialize)]
struct RunOutput {
    construction: String,
    threat: String,
    rule: String,
    algorithm: Algorithm,
    n: usize,
    f: usize,
    m: usize,
    steps: usize,
    psi: f64,
    report: StabilityReport,
    /// Closed-form iterates of the GD constructions.
    prediction: Option<Prediction>,
    /// Whether the measured final iterates and SMEA selections match the
    /// prediction (poisoning, SMEA, GD only).
    prediction_matches: Option<bool>,
    projected: Option<ProjectedReport>,
    base: Trajectory,
    variant: Trajectory,
}

/// Relative agreement required between predicted and measured iterates.
const PREDICTION_TOL: f64 = 1e-9;

/// One paired run of a construction under a threat model.
pub fn run_cmd(cfg: &Config, out: &Output) -> Result<i32> {
    let construction_name: String = cfg.get_or("construction", "linear".to_string())?;
    let threat: String = cfg.get_or("threat", "poisoning".to_string())?;
    let rule: String = cfg.get_or("rule", "smea".to_string())?;
    let n: usize = cfg.get_or("n", 15)?;
    let f: usize = cfg.require("f", "run")?;
    let l: f64 = cfg.get_or("l", 1.0)?;
    let params = ConstructionParams {
        n,
        f,
        m: cfg.get_or("m", 1)?,
        c: cfg.get_or("c", 1.0)?,
        l,
        mu: Some(cfg.get_or("mu", l)?),
        gamma: cfg.get_or("gamma", 1.0)?,
        steps: cfg.get_or("steps", 5)?,
        epsilon: cfg.get("epsilon")?,
        psi_override: cfg.get("psi")?,
    };
    let seed: u64 = cfg.get_or("seed", 0)?;
    let projected = construction_name == "projected";
    let default_algorithm = if projected { "projected_sgd" } else { "gd" };
    let algorithm = match cfg
        .get_or("algorithm", default_algorithm.to_string())?
        .as_str()
    {
        "gd" => Algorithm::Gd,
        "sgd" => Algorithm::Sgd,
        "projected_sgd" => Algorithm::ProjectedSgd,
        other => bail!(validation(format!(
            "unknown algorithm '{other}' (expected gd, sgd or projected_sgd)"
        ))),
    };
    let seeds: usize = cfg.get_or("seeds", if algorithm.is_stochastic() { 1000 } else { 1 })?;

    let construction = match construction_name.as_str() {
        "linear" => build_linear_lb(&params)?,
        "strongcvx" => build_strongcvx_lb(&params)?,
        "projected" => build_projected_lb(&params)?,
        other => bail!(validation(format!(
            "unknown construction '{other}' (expected linear, strongcvx or projected)"
        ))),
    };
    if projected
        && (algorithm != Algorithm::ProjectedSgd || rule != "smea" || threat != "poisoning")
    {
        bail!(validation(
            "the projected construction runs projected_sgd with smea under poisoning"
        ));
    }
    if !projected && algorithm == Algorithm::ProjectedSgd {
        bail!(validation(format!(
            "the {construction_name} construction has no projection domain"
        )));
    }
    let kappa = match rule.as_str() {
        _ if f == 0 => 0.0,
        "smea" => kappa_smea(n, f)?,
        "cwtm" => kappa_cwtm(n, f)?,
        "mean" => bail!(validation(
            "the mean rule carries no robustness guarantee for f > 0"
        )),
        other => bail!(validation(format!("unknown rule '{other}'"))),
    };

    let (pair, workers) = match threat.as_str() {
        "poisoning" => (construction.pair.clone(), construction.workers.clone()),
        "byzantine" => {
            let attack: String = cfg.get_or("attack", "tailored".to_string())?;
            let eps: f64 = cfg.get_or("attack_epsilon", DEFAULT_ATTACK_EPSILON)?;
            let ids = byzantine_identity_table(n, f);
            let state = TailoredAttackState::from_construction(&construction, ids.clone(), eps)?;
            let strategy = StrategyRegistry::default().create(&attack, &state)?;
            byzantine_setting(&construction, &ids, strategy)?
        }
        other => bail!(validation(format!(
            "unknown threat '{other}' (expected poisoning or byzantine)"
        ))),
    };
    let config = RunConfig {
        algorithm,
        rule: rule.clone(),
        f,
        steps: params.steps,
        schedule: Schedule::Constant(params.gamma),
        theta0: Vector::zeros(if projected { 2 } else { 1 }),
        seed,
        mc_runs: seeds.max(1),
    };
    config.validate()?;
    let loss = &construction.loss;
    let (base, variant) = run_paired(&config, &pair, &workers, loss)?;

    let mut projected_out = None;
    let (measured, stderr) = if projected {
        let pr = projected_report(&params, seed, seeds)?;
        let r = (pr.measured_stability, Some(pr.stability_stderr));
        projected_out = Some(pr);
        r
    } else if algorithm.is_stochastic() && seeds > 1 {
        let finals = monte_carlo_paired(&config, &pair, &workers, loss, |a, b| {
            (a.final_theta().clone(), b.final_theta().clone())
        })?;
        let est = estimate_stability(&finals, loss, None)?;
        (est.value, est.stderr)
    } else {
        let finals = [(base.final_theta().clone(), variant.final_theta().clone())];
        (estimate_stability(&finals, loss, None)?.value, None)
    };

    let (upper_th, lower_th) = match (construction_name.as_str(), threat.as_str(), rule.as_str()) {
        ("strongcvx", "poisoning", "smea") => (Theorem::PoisSmeaStrongcvx, None),
        ("strongcvx", _, _) => (Theorem::ByzStrongcvx, None),
        (_, "poisoning", "smea") => (Theorem::PoisSmeaConvex, Some(Theorem::LbPoisConvex)),
        _ => (Theorem::ByzConvex, None),
    };
    let query = |th: Theorem| {
        let mut q = BoundQuery::new(th, params.c, l, params.steps, n, f, params.m);
        q.gamma = Some(params.gamma);
        q.mu = params.mu;
        q.kappa = Some(kappa);
        theorem_bound(&q).map(|b| b.value)
    };
    // The closed-form lower bounds describe full-batch runs.
    // The strongly convex construction certifies `C·θ_T/2` directly.
    let strongcvx_lb = construction_name == "strongcvx" && threat == "poisoning" && rule == "smea";
    let lb_theoretical = match (&projected_out, lower_th) {
        (Some(pr), _) => Some(pr.lower_bound),
        _ if algorithm != Algorithm::Gd => None,
        (None, Some(th)) => Some(query(th)?),
        (None, None) if strongcvx_lb => {
            Some(params.c * base.final_theta().as_scalar()?.abs() / 2.0)
        }
        (None, None) => None,
    };
    let (kappa_hat_base, kappa_hat_variant) = (empirical_kappa(&base)?, empirical_kappa(&variant)?);
    let gen_error = if construction_name == "linear" {
        Some(generalization_error_linear(
            variant.final_theta().as_scalar()?,
            base.final_theta().as_scalar()?,
            n,
            f,
        ))
    } else {
        None
    };
    let ub_empirical_kappa = (threat == "byzantine").then(|| {
        params.gamma
            * params.c
            * params.steps as f64
            * (2.0 / ((n - f) * params.m) as f64 + kappa_hat_base.sqrt() + kappa_hat_variant.sqrt())
    });
    let report = StabilityReport {
        attack: if threat == "byzantine" {
            cfg.get_or("attack", "tailored".to_string())?
        } else {
            threat.clone()
        },
        f,
        measured_stability: measured,
        stderr,
        lb_theoretical,
        ub_theoretical: query(upper_th)?,
        ub_empirical_kappa,
        kappa_hat_base,
        kappa_hat_variant,
        gen_error,
    };
    let check_prediction = threat == "poisoning" && rule == "smea" && algorithm == Algorithm::Gd;
    let prediction_matches = match (&construction.predicted, check_prediction) {
        (Some(p), true) => Some(prediction_holds(p, &base, &variant)?),
        _ => None,
    };

    let result = RunOutput {
        construction: construction_name,
        threat,
        rule,
        algorithm,
        n,
        f,
        m: params.m,
        steps: params.steps,
        psi: construction.psi,
        report,
        prediction: construction.predicted.clone(),
        prediction_matches,
        projected: projected_out,
        base,
        variant,
    };
    match out.format {
        Format::Json => out.sink.json(&result)?,
        Format::Csv => out.sink.csv(&RUN_COLUMNS, &run_rows(&result))?,
    }
    eprintln!(
        "stability {} (upper bound {}{}), kappa_hat {} / {}",
        num(result.report.measured_stability),
        num(result.report.ub_theoretical),
        result
            .report
            .lb_theoretical
            .map(|x| format!(", lower bound {}", num(x)))
            .unwrap_or_default(),
        num(result.report.kappa_hat_base),
        num(result.report.kappa_hat_variant),
    );
    if result.prediction_matches == Some(false) {
        eprintln!("measured iterates differ from the closed-form prediction");
        return Ok(2);
    }
    Ok(0)
}

fn prediction_holds(p: &Prediction, base: &Trajectory, variant: &Trajectory) -> Result<bool> {
    let close = |a: f64, b: f64| (a - b).abs() <= PREDICTION_TOL * (1.0 + b.abs());
    let subsets = |t: &Trajectory, s| t.selected_subsets.iter().all(|x| x.as_ref() == Some(s));
    Ok(close(base.final_theta().as_scalar()?, p.theta_base)
        && close(variant.final_theta().as_scalar()?, p.theta_variant)
        && subsets(base, &p.base_subset)
        && subsets(variant, &p.variant_subset))
}

const RUN_COLUMNS: [&str; 5] = [
    "t",
    "theta_base",
    "theta_variant",
    "selected_base",
    "selected_variant",
];

/// Per-step table: vector components are separated by spaces, selections
/// list worker ids.
fn run_rows(r: &RunOutput) -> Vec<Vec<String>> {
    let vec_cell = |v: &Vector| {
        v.as_slice()
            .iter()
            .map(|&x| num(x))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let sel_cell = |t: &Trajectory, step: usize| {
        t.selected_subsets
            .get(step)
            .and_then(Option::as_ref)
            .map(|s| {
                s.indices()
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .unwrap_or_default()
    };
    (0..r.base.thetas.len())
        .map(|t| {
            vec![
                t.to_string(),
                vec_cell(&r.base.thetas[t]),
                vec_cell(&r.variant.thetas[t]),
                sel_cell(&r.base, t),
                sel_cell(&r.variant, t),
            ]
        })
        .collect()
}

/// Searches for a point where trimmed-mean gradients fail co-coercivity.
pub fn counterexample_cmd(cfg: &Config, out: &Output) -> Result<i32> {
    let l: f64 = cfg.get_or("l", 1.0)?;
    let w = match cwtm_cocoercivity_counterexample(l) {
        Ok(w) => w,
        Err(Error::NotFound(msg)) => {
            eprintln!("no witness: {msg}");
            return Ok(2);
        }
        Err(e) => return Err(e.into()),
    };
    match out.format {
        Format::Json => out.sink.json(&w)?,
        Format::Csv => {
            let mut header = Vec::new();
            let mut row = Vec::new();
            for (name, v) in [
                ("v", &w.v),
                ("x", &w.x),
                ("theta", &w.theta),
                ("cwtm_theta", &w.cwtm_theta),
                ("cwtm_omega", &w.cwtm_omega),
            ] {
                for (i, &x) in v.as_slice().iter().enumerate() {
                    header.push(format!("{name}_{}", i + 1));
                    row.push(num(x));
                }
            }
            header.push("inner_product".into());
            row.push(num(w.inner_product));
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            out.sink.csv(&header, &[row])?;
        }
    }
    Ok(0)
}

/// Dispatches `command`.
pub fn dispatch(command: &str, cfg: &Config, out: &Output) -> Result<i32> {
    match command {
        "figure1" => figure1_cmd(cfg, out),
        "verify" => verify_cmd(cfg, out),
        "bounds" => bounds_cmd(cfg, out),
        "run" => run_cmd(cfg, out),
        "counterexample" => counterexample_cmd(cfg, out),
        other => Err(validation(format!("unknown command '{other}'"))),
    }
}

/// Exit code for an error raised by a command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Error>() {
        Some(Error::PropertyViolation(_)) | Some(Error::NotFound(_)) => 2,
        Some(Error::Infeasible(_)) => 3,
        _ => 1,
    }
}
