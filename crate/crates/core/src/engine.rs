//! The distributed optimization loop.
//!
//! Each step every honest worker computes a gradient on its local data (the
//! full local average for GD, one uniformly drawn example for SGD), every
//! Byzantine worker returns whatever its strategy chooses, the server
//! aggregates the `n` vectors with the configured rule, and the parameter
//! moves against the aggregate.
//!
//! Sample draws come from a generator keyed by `(seed, step, worker)`, so
//! two runs with the same seed draw the same indices regardless of what
//! happens elsewhere in the run. Paired runs on neighboring datasets rely on
//! this to stay coupled until the differing example is first drawn.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{Aggregator, AggregatorRegistry, GradientBatch};
use crate::error::{Error, Result};
use crate::linalg::{IndexSubset, Vector};
use crate::losses::{DataPoint, LossModel};

/// Threshold on `‖θ_t - θ'_t‖` above which two trajectories have diverged.
pub const DIVERGENCE_TOL: f64 = 1e-12;

/// Optimization algorithm driven by [`run`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Full local averages every step.
    Gd,
    /// One example per honest worker per step.
    Sgd,
    /// SGD followed by projection onto the loss domain.
    ProjectedSgd,
}

impl Algorithm {
    /// Whether honest workers draw a single example per step.
    pub fn is_stochastic(self) -> bool {
        !matches!(self, Algorithm::Gd)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Gd => "gd",
            Algorithm::Sgd => "sgd",
            Algorithm::ProjectedSgd => "projected_sgd",
        })
    }
}

/// Step-size schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// `γ_t = γ`.
    Constant(f64),
    /// `γ_t = c / (L·(t+1))` for `t = 0, 1, …`.
    Inverse { c: f64, l: f64 },
}

impl Schedule {
    /// Step size used at step `t` (zero-based).
    pub fn step_size(&self, t: usize) -> f64 {
        match *self {
            Schedule::Constant(g) => g,
            Schedule::Inverse { c, l } => c / (l * (t as f64 + 1.0)),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Schedule::Constant(g) => g > 0.0 && g.is_finite(),
            Schedule::Inverse { c, l } => c > 0.0 && l > 0.0 && c.is_finite() && l.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::configuration(format!(
                "step-size schedule {self:?} must be positive"
            )))
        }
    }
}

/// Parameters of one optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    /// Registry name of the aggregation rule.
    pub rule: String,
    /// Number of inputs the rule is asked to tolerate.
    pub f: usize,
    /// Number of steps.
    pub steps: usize,
    pub schedule: Schedule,
    pub theta0: Vector,
    pub seed: u64,
    /// Monte-Carlo repetitions for stochastic algorithms.
    pub mc_runs: usize,
}

impl RunConfig {
    /// Structural checks performed by every run.
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::configuration(
                "the number of steps must be at least 1",
            ));
        }
        if self.mc_runs == 0 {
            return Err(Error::configuration("mc_runs must be at least 1"));
        }
        self.schedule.validate()
    }

    /// Checks the step-size cap the convex and strongly convex bounds assume:
    /// a constant step no larger than `1/L`.
    pub fn validate_theorem_regime(&self, l: f64) -> Result<()> {
        match self.schedule {
            Schedule::Constant(g) if g > 1.0 / l * (1.0 + 1e-12) => Err(Error::configuration(
                format!("constant step size {g} exceeds 1/L = {}", 1.0 / l),
            )),
            _ => Ok(()),
        }
    }
}

/// An honest worker and its local dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HonestWorker {
    pub id: usize,
    pub data: Vec<DataPoint>,
}

impl HonestWorker {
    pub fn new(id: usize, data: Vec<DataPoint>) -> Self {
        HonestWorker { id, data }
    }
}

/// What a Byzantine strategy observes at one step.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub step: usize,
    pub theta: &'a Vector,
    /// This step's honest gradients, sorted by worker id.
    pub honest_gradients: &'a [(usize, Vector)],
    pub n: usize,
    /// Robustness parameter of the aggregation rule.
    pub f: usize,
    /// Ids of the Byzantine workers, sorted.
    pub byzantine_ids: &'a [usize],
}

/// Behavior of the Byzantine workers.
///
/// One instance belongs to one run. The engine clones the template held by
/// the [`WorkerSet`] at the start of every run, so state never leaks from
/// one run into another.
pub trait ByzantineStrategy: Send + Sync {
    /// Registry name of the strategy.
    fn name(&self) -> &'static str;

    /// The vectors sent by the Byzantine workers this step, one per id in
    /// `ctx.byzantine_ids` and in the same order.
    fn act(&mut self, ctx: &StepContext<'_>) -> Result<Vec<Vector>>;

    /// A fresh copy of the strategy and its state.
    fn box_clone(&self) -> Box<dyn ByzantineStrategy>;
}

impl Clone for Box<dyn ByzantineStrategy> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

impl fmt::Debug for dyn ByzantineStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ByzantineStrategy({})", self.name())
    }
}

/// Byzantine workers that always send the same vector.
#[derive(Debug, Clone)]
pub struct FixedStrategy {
    pub value: Vector,
}

impl ByzantineStrategy for FixedStrategy {
    fn name(&self) -> &'static str {
        "fixed"
    }

    fn act(&mut self, ctx: &StepContext<'_>) -> Result<Vec<Vector>> {
        Ok(vec![self.value.clone(); ctx.byzantine_ids.len()])
    }

    fn box_clone(&self) -> Box<dyn ByzantineStrategy> {
        Box::new(self.clone())
    }
}

/// The full population of workers for one run.
#[derive(Debug, Clone)]
pub struct WorkerSet {
    n: usize,
    honest: Vec<HonestWorker>,
    byzantine_ids: Vec<usize>,
    strategy: Option<Box<dyn ByzantineStrategy>>,
}

impl WorkerSet {
    /// Builds a worker population, checking that ids partition `{0..n-1}`
    /// and that every honest dataset has the same nonzero size.
    pub fn new(
        n: usize,
        mut honest: Vec<HonestWorker>,
        mut byzantine_ids: Vec<usize>,
        strategy: Option<Box<dyn ByzantineStrategy>>,
    ) -> Result<Self> {
        honest.sort_by_key(|w| w.id);
        byzantine_ids.sort_unstable();
        let mut seen = vec![false; n];
        for id in honest
            .iter()
            .map(|w| w.id)
            .chain(byzantine_ids.iter().copied())
        {
            if id >= n {
                return Err(Error::configuration(format!(
                    "worker id {id} out of range for n = {n}"
                )));
            }
            if std::mem::replace(&mut seen[id], true) {
                return Err(Error::configuration(format!("worker id {id} listed twice")));
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::configuration(format!(
                "worker id {missing} has no role"
            )));
        }
        if 2 * byzantine_ids.len() >= n {
            return Err(Error::configuration(format!(
                "{} Byzantine workers out of {n} is not a minority",
                byzantine_ids.len()
            )));
        }
        let m = honest.first().map(|w| w.data.len()).unwrap_or(0);
        if m == 0 {
            return Err(Error::configuration(
                "honest workers must hold at least one example",
            ));
        }
        if let Some(w) = honest.iter().find(|w| w.data.len() != m) {
            return Err(Error::configuration(format!(
                "worker {} holds {} examples but worker {} holds {m}",
                w.id,
                w.data.len(),
                honest[0].id
            )));
        }
        Ok(WorkerSet {
            n,
            honest,
            byzantine_ids,
            strategy,
        })
    }

    /// Total number of workers.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Examples per honest worker.
    pub fn m(&self) -> usize {
        self.honest[0].data.len()
    }

    /// Honest workers sorted by id.
    pub fn honest(&self) -> &[HonestWorker] {
        &self.honest
    }

    /// Byzantine ids, sorted.
    pub fn byzantine_ids(&self) -> &[usize] {
        &self.byzantine_ids
    }

    /// The strategy template, if any.
    pub fn strategy(&self) -> Option<&dyn ByzantineStrategy> {
        self.strategy.as_deref()
    }

    /// The same population with the honest datasets replaced.
    pub fn with_honest(&self, honest: Vec<HonestWorker>) -> Result<Self> {
        WorkerSet::new(
            self.n,
            honest,
            self.byzantine_ids.clone(),
            self.strategy.clone(),
        )
    }
}

/// Two honest dataset collections that agree everywhere except possibly at
/// one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighboringPair {
    pub base: Vec<HonestWorker>,
    pub variant: Vec<HonestWorker>,
    /// `(worker id, example index)` of the example that may differ.
    pub diff_location: (usize, usize),
}

impl NeighboringPair {
    /// Builds a pair, checking that the two collections differ at most at
    /// `diff_location`.
    pub fn new(
        mut base: Vec<HonestWorker>,
        mut variant: Vec<HonestWorker>,
        diff_location: (usize, usize),
    ) -> Result<Self> {
        base.sort_by_key(|w| w.id);
        variant.sort_by_key(|w| w.id);
        if base.len() != variant.len() {
            return Err(Error::validation(
                "neighboring datasets have different worker counts",
            ));
        }
        let (a, b) = diff_location;
        let mut located = false;
        for (wb, wv) in base.iter().zip(&variant) {
            if wb.id != wv.id || wb.data.len() != wv.data.len() {
                return Err(Error::validation(format!(
                    "neighboring datasets disagree on worker {} layout",
                    wb.id
                )));
            }
            for (j, (zb, zv)) in wb.data.iter().zip(&wv.data).enumerate() {
                let here = wb.id == a && j == b;
                located |= here;
                if !here && zb != zv {
                    return Err(Error::validation(format!(
                        "datasets differ at ({}, {j}) outside the declared location ({a}, {b})",
                        wb.id
                    )));
                }
            }
        }
        if !located {
            return Err(Error::validation(format!(
                "declared difference location ({a}, {b}) is not an honest example"
            )));
        }
        Ok(NeighboringPair {
            base,
            variant,
            diff_location,
        })
    }
}

/// Record of one optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub n: usize,
    /// Robustness parameter the rule was run with.
    pub f: usize,
    pub rule: String,
    /// `θ_0, …, θ_T`.
    pub thetas: Vec<Vector>,
    /// SMEA selection at each step.
    pub selected_subsets: Vec<Option<IndexSubset>>,
    /// Aggregator output at each step.
    pub aggregates: Vec<Vector>,
    /// Honest gradients at each step, sorted by worker id.
    pub honest_gradients: Vec<Vec<(usize, Vector)>>,
    /// `(worker id, example index)` drawn at each step; empty lists for GD.
    pub sample_indices: Vec<Vec<(usize, usize)>>,
    /// Vectors sent by Byzantine workers at each step.
    pub byzantine_values: Vec<Vec<(usize, Vector)>>,
}

impl Trajectory {
    /// Number of steps.
    pub fn steps(&self) -> usize {
        self.thetas.len() - 1
    }

    /// Final parameter `θ_T`.
    pub fn final_theta(&self) -> &Vector {
        self.thetas.last().expect("trajectory has at least theta0")
    }

    /// All `n` vectors received by the server at step `t`, ordered by id.
    pub fn batch(&self, t: usize) -> Result<GradientBatch> {
        let mut slots: Vec<Option<Vector>> = vec![None; self.n];
        for (id, g) in self.honest_gradients[t]
            .iter()
            .chain(&self.byzantine_values[t])
        {
            slots[*id] = Some(g.clone());
        }
        let vectors = slots
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                v.ok_or_else(|| Error::validation(format!("worker {i} missing at step {t}")))
            })
            .collect::<Result<Vec<_>>>()?;
        GradientBatch::new(vectors)
    }
}

/// Index in `{0..m-1}` drawn by `worker` at `step` under `seed`.
///
/// The generator is keyed by the triple alone, so draws are reproducible
/// and independent of call order.
pub fn sample_index(seed: u64, step: usize, worker: usize, m: usize) -> usize {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(step as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(worker as u64).to_le_bytes());
    key[24..].copy_from_slice(b"sgd-draw");
    ChaCha8Rng::from_seed(key).gen_range(0..m)
}

fn check_run_inputs(config: &RunConfig, workers: &WorkerSet, loss: &LossModel) -> Result<()> {
    config.validate()?;
    if !loss.is_globally_lipschitz() {
        return Err(Error::configuration(format!(
            "loss family {} is not globally Lipschitz and cannot be optimized here",
            loss.family
        )));
    }
    if 2 * config.f >= workers.n() {
        return Err(Error::configuration(format!(
            "rule parameter f = {} must satisfy f < n/2 for n = {}",
            config.f,
            workers.n()
        )));
    }
    if !workers.byzantine_ids().is_empty() && workers.strategy().is_none() {
        return Err(Error::configuration(
            "Byzantine workers are present but no strategy was supplied",
        ));
    }
    for w in workers.honest() {
        for z in &w.data {
            loss.validate_point(z)?;
        }
    }
    Ok(())
}

/// Runs the configured algorithm with the rule looked up in the default
/// registry.
pub fn run(config: &RunConfig, workers: &WorkerSet, loss: &LossModel) -> Result<Trajectory> {
    let rule = AggregatorRegistry::default().get(&config.rule)?;
    run_with_rule(config, workers, loss, rule.as_ref())
}

/// Runs the configured algorithm with an explicit rule object.
pub fn run_with_rule(
    config: &RunConfig,
    workers: &WorkerSet,
    loss: &LossModel,
    rule: &dyn Aggregator,
) -> Result<Trajectory> {
    check_run_inputs(config, workers, loss)?;
    let n = workers.n();
    let m = workers.m();
    let byz_ids = workers.byzantine_ids();
    let mut strategy = workers.strategy().map(|s| s.box_clone());
    let stochastic = config.algorithm.is_stochastic();

    let mut theta = config.theta0.clone();
    let mut traj = Trajectory {
        n,
        f: config.f,
        rule: rule.name().to_string(),
        thetas: Vec::with_capacity(config.steps + 1),
        selected_subsets: Vec::with_capacity(config.steps),
        aggregates: Vec::with_capacity(config.steps),
        honest_gradients: Vec::with_capacity(config.steps),
        sample_indices: Vec::with_capacity(config.steps),
        byzantine_values: Vec::with_capacity(config.steps),
    };
    traj.thetas.push(theta.clone());

    for t in 0..config.steps {
        let mut honest_grads = Vec::with_capacity(workers.honest().len());
        let mut draws = Vec::new();
        for w in workers.honest() {
            let g = if stochastic {
                let j = sample_index(config.seed, t, w.id, m);
                draws.push((w.id, j));
                loss.gradient(&theta, &w.data[j])?
            } else {
                loss.empirical_gradient(&theta, &w.data)?
            };
            honest_grads.push((w.id, g));
        }

        let byz_values = match strategy.as_mut() {
            Some(s) if !byz_ids.is_empty() => {
                let ctx = StepContext {
                    step: t,
                    theta: &theta,
                    honest_gradients: &honest_grads,
                    n,
                    f: config.f,
                    byzantine_ids: byz_ids,
                };
                let values = s.act(&ctx)?;
                if values.len() != byz_ids.len() {
                    return Err(Error::configuration(format!(
                        "strategy {} returned {} vectors for {} Byzantine workers",
                        s.name(),
                        values.len(),
                        byz_ids.len()
                    )));
                }
                byz_ids.iter().copied().zip(values).collect()
            }
            _ => Vec::new(),
        };

        let mut slots: Vec<Option<&Vector>> = vec![None; n];
        for (id, g) in honest_grads.iter().chain(&byz_values) {
            slots[*id] = Some(g);
        }
        let batch = GradientBatch::new(
            slots
                .into_iter()
                .map(|v| v.expect("worker ids partition 0..n").clone())
                .collect(),
        )?;
        let outcome = rule.aggregate(&batch, config.f)?;

        let mut next = theta.clone();
        next.axpy(-config.schedule.step_size(t), &outcome.aggregate);
        traj.aggregates.push(outcome.aggregate);
        if config.algorithm == Algorithm::ProjectedSgd {
            next = loss.project(&next);
        }
        if !next.is_finite() {
            return Err(Error::validation(format!(
                "parameter became non-finite at step {t}"
            )));
        }
        theta = next;

        traj.thetas.push(theta.clone());
        traj.selected_subsets.push(outcome.selected);
        traj.honest_gradients.push(honest_grads);
        traj.sample_indices.push(draws);
        traj.byzantine_values.push(byz_values);
    }
    Ok(traj)
}

/// Runs both datasets of `pair` with identical seeds and identical fresh
/// strategy state.
pub fn run_paired(
    config: &RunConfig,
    pair: &NeighboringPair,
    workers_template: &WorkerSet,
    loss: &LossModel,
) -> Result<(Trajectory, Trajectory)> {
    let rule = AggregatorRegistry::default().get(&config.rule)?;
    run_paired_with_rule(config, pair, workers_template, loss, rule.as_ref())
}

/// [`run_paired`] with an explicit rule object.
pub fn run_paired_with_rule(
    config: &RunConfig,
    pair: &NeighboringPair,
    workers_template: &WorkerSet,
    loss: &LossModel,
    rule: &dyn Aggregator,
) -> Result<(Trajectory, Trajectory)> {
    let base = workers_template.with_honest(pair.base.clone())?;
    let variant = workers_template.with_honest(pair.variant.clone())?;
    Ok((
        run_with_rule(config, &base, loss, rule)?,
        run_with_rule(config, &variant, loss, rule)?,
    ))
}

/// Applies `summarize` to the paired trajectories of seeds
/// `seed, seed+1, …, seed+mc_runs-1`, returning results in seed order.
///
/// Seeds run in parallel; the output order does not depend on scheduling.
pub fn monte_carlo_paired<R, F>(
    config: &RunConfig,
    pair: &NeighboringPair,
    workers_template: &WorkerSet,
    loss: &LossModel,
    summarize: F,
) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(&Trajectory, &Trajectory) -> R + Sync,
{
    let rule = AggregatorRegistry::default().get(&config.rule)?;
    let base = workers_template.with_honest(pair.base.clone())?;
    let variant = workers_template.with_honest(pair.variant.clone())?;
    (0..config.mc_runs)
        .into_par_iter()
        .map(|i| {
            let mut cfg = config.clone();
            cfg.seed = config.seed.wrapping_add(i as u64);
            let a = run_with_rule(&cfg, &base, loss, rule.as_ref())?;
            let b = run_with_rule(&cfg, &variant, loss, rule.as_ref())?;
            Ok(summarize(&a, &b))
        })
        .collect()
}

/// First step `t` with `‖θ_t - θ'_t‖ > 1e-12`, if any.
pub fn first_divergence_step(a: &Trajectory, b: &Trajectory) -> Option<usize> {
    a.thetas
        .iter()
        .zip(&b.thetas)
        .position(|(x, y)| x.distance(y) > DIVERGENCE_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_workers(values: &[f64], m: usize) -> Vec<HonestWorker> {
        values
            .iter()
            .enumerate()
            .map(|(id, &z)| HonestWorker::new(id, vec![DataPoint::Scalar(z); m]))
            .collect()
    }

    fn config(algorithm: Algorithm, rule: &str, f: usize, steps: usize, gamma: f64) -> RunConfig {
        RunConfig {
            algorithm,
            rule: rule.to_string(),
            f,
            steps,
            schedule: Schedule::Constant(gamma),
            theta0: Vector::scalar(0.0),
            seed: 7,
            mc_runs: 1,
        }
    }

    #[test]
    fn quadratic_converges_in_one_step() {
        let loss = LossModel::quadratic_mean(1.0, 1.0, 1.0).unwrap();
        let ws = WorkerSet::new(4, scalar_workers(&[0.3; 4], 2), vec![], None).unwrap();
        let traj = run(&config(Algorithm::Gd, "mean", 0, 3, 1.0), &ws, &loss).unwrap();
        for theta in &traj.thetas[1..] {
            assert!((theta[0] - 0.3).abs() < 1e-15);
        }
        let traj = run(&config(Algorithm::Gd, "mean", 0, 20, 0.5), &ws, &loss).unwrap();
        let gaps: Vec<f64> = traj.thetas.iter().map(|t| (t[0] - 0.3).abs()).collect();
        assert!(gaps.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn sgd_with_one_example_matches_gd() {
        let loss = LossModel::linear1d(1.0, 1.0).unwrap();
        let ws = WorkerSet::new(
            5,
            scalar_workers(&[0.1, -0.4, 0.9, 0.0, -1.0], 1),
            vec![],
            None,
        )
        .unwrap();
        let gd = run(&config(Algorithm::Gd, "smea", 1, 4, 1.0), &ws, &loss).unwrap();
        let sgd = run(&config(Algorithm::Sgd, "smea", 1, 4, 1.0), &ws, &loss).unwrap();
        assert_eq!(gd.thetas, sgd.thetas);
    }

    #[test]
    fn mean_rule_pair_difference() {
        let loss = LossModel::linear1d(1.0, 1.0).unwrap();
        let mut base = scalar_workers(&[0.0; 15], 1);
        let variant = base.clone();
        base[0].data[0] = DataPoint::Scalar(-1.0);
        let pair = NeighboringPair::new(base.clone(), variant, (0, 0)).unwrap();
        let ws = WorkerSet::new(15, base, vec![], None).unwrap();
        let (a, b) =
            run_paired(&config(Algorithm::Gd, "mean", 0, 5, 1.0), &pair, &ws, &loss).unwrap();
        let diff = a.final_theta()[0] - b.final_theta()[0];
        assert!((diff - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(first_divergence_step(&a, &b), Some(1));
        assert_eq!(first_divergence_step(&a, &a), None);
    }

    #[test]
    fn missing_strategy_is_a_configuration_error() {
        let loss = LossModel::linear1d(1.0, 1.0).unwrap();
        let honest = scalar_workers(&[0.0, 0.0], 1);
        let ws = WorkerSet::new(3, honest, vec![2], None).unwrap();
        let err = run(&config(Algorithm::Gd, "smea", 1, 1, 1.0), &ws, &loss).unwrap_err();
        assert!(matches!(err, Error::Configuration(_)));
    }

    #[test]
    fn fixed_strategy_is_recorded() {
        let loss = LossModel::linear1d(1.0, 1.0).unwrap();
        let honest = scalar_workers(&[0.0, 0.0], 1);
        let strat = FixedStrategy {
            value: Vector::scalar(5.0),
        };
        let ws = WorkerSet::new(3, honest, vec![2], Some(Box::new(strat))).unwrap();
        let traj = run(&config(Algorithm::Gd, "smea", 1, 2, 1.0), &ws, &loss).unwrap();
        assert_eq!(traj.byzantine_values[0], vec![(2, Vector::scalar(5.0))]);
        assert_eq!(
            traj.selected_subsets[0].as_ref().unwrap().indices(),
            &[0, 1]
        );
        assert_eq!(traj.final_theta()[0], 0.0);
        assert_eq!(traj.batch(1).unwrap().n(), 3);
    }

    #[test]
    fn worker_set_validation() {
        let h = scalar_workers(&[0.0, 0.0], 1);
        assert!(WorkerSet::new(3, h.clone(), vec![], None).is_err());
        assert!(WorkerSet::new(2, h.clone(), vec![1], None).is_err());
        let mut uneven = h.clone();
        uneven[1].data.push(DataPoint::Scalar(0.0));
        assert!(WorkerSet::new(2, uneven, vec![], None).is_err());
    }

    #[test]
    fn pair_validation() {
        let base = scalar_workers(&[0.0, 0.5], 2);
        let mut variant = base.clone();
        variant[1].data[1] = DataPoint::Scalar(0.25);
        assert!(NeighboringPair::new(base.clone(), variant.clone(), (1, 1)).is_ok());
        assert!(NeighboringPair::new(base.clone(), variant, (0, 0)).is_err());
        assert!(NeighboringPair::new(base.clone(), base, (4, 0)).is_err());
    }

    #[test]
    fn squared_regression_is_rejected() {
        let loss = LossModel::squared_regression(1.0).unwrap();
        let honest = vec![HonestWorker::new(
            0,
            vec![DataPoint::labeled(
                Vector::new(vec![0.5, 0.0]).unwrap(),
                0.0,
            )],
        )];
        let ws = WorkerSet::new(1, honest, vec![], None).unwrap();
        let mut cfg = config(Algorithm::Gd, "mean", 0, 1, 0.5);
        cfg.theta0 = Vector::zeros(2);
        assert!(matches!(
            run(&cfg, &ws, &loss),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn sample_index_is_keyed() {
        let a: Vec<usize> = (0..50).map(|t| sample_index(3, t, 2, 4)).collect();
        let b: Vec<usize> = (0..50).map(|t| sample_index(3, t, 2, 4)).collect();
        assert_eq!(a, b);
        assert!(a.iter().all(|&j| j < 4));
        let c: Vec<usize> = (0..50).map(|t| sample_index(4, t, 2, 4)).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn inverse_schedule() {
        let s = Schedule::Inverse { c: 2.0, l: 4.0 };
        assert_eq!(s.step_size(0), 0.5);
        assert_eq!(s.step_size(3), 0.125);
    }
}
