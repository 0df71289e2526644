//! Aggregation rules, their robustness coefficients, and exhaustive
//! certification of the robustness inequality.
//!
//! A rule `F` is `(f, κ, ‖·‖)`-robust when, for every subset `S` of
//! `n - f` inputs, `‖F(g) - ḡ_S‖² ≤ κ ‖Σ_S‖`, where `Σ_S` is the empirical
//! covariance of the subset and the norm is either the trace or the top
//! eigenvalue.
//!
//! Rules are exposed both as free functions and as [`Aggregator`] trait
//! objects held in an [`AggregatorRegistry`], so that runs can select a rule
//! by name at runtime.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    check_subset_capacity, covariance_matrix, covariance_stats, max_eigenvalue_2x2,
    max_eigenvalue_sym, next_combination, IndexSubset, SquareMatrix, Vector,
};

/// Relative width of the band within which two subset eigenvalues are
/// treated as tied during the SMEA scan.
const SMEA_TIE_TOL: f64 = 1e-11;

/// Relative tolerance of the certification inequality.
pub const CERTIFICATION_TOL: f64 = 1e-9;

/// The `n` vectors presented to an aggregation rule at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBatch {
    vectors: Vec<Vector>,
}

impl GradientBatch {
    /// Builds a batch, checking that it is nonempty and dimensionally
    /// consistent.
    pub fn new(vectors: Vec<Vector>) -> Result<Self> {
        let first = vectors
            .first()
            .ok_or_else(|| Error::validation("gradient batch must contain at least one vector"))?;
        let d = first.dim();
        if let Some((i, v)) = vectors.iter().enumerate().find(|(_, v)| v.dim() != d) {
            return Err(Error::validation(format!(
                "batch vector {i} has dimension {} but vector 0 has {d}",
                v.dim()
            )));
        }
        Ok(GradientBatch { vectors })
    }

    /// Convenience constructor for one-dimensional batches.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        let vectors = values
            .iter()
            .map(|&x| Vector::new(vec![x]))
            .collect::<Result<Vec<_>>>()?;
        Self::new(vectors)
    }

    /// Number of vectors.
    pub fn n(&self) -> usize {
        self.vectors.len()
    }

    /// Dimension shared by every vector.
    pub fn dim(&self) -> usize {
        self.vectors[0].dim()
    }

    /// Borrow the vectors.
    pub fn vectors(&self) -> &[Vector] {
        &self.vectors
    }
}

/// Operator norm used on the subset covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpNorm {
    /// Sum of eigenvalues.
    Trace,
    /// Largest eigenvalue.
    Spectral,
}

impl fmt::Display for OpNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpNorm::Trace => write!(f, "trace"),
            OpNorm::Spectral => write!(f, "spectral"),
        }
    }
}

/// The triple `(f, κ, ‖·‖)` of a robustness claim.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSpec {
    pub f: usize,
    pub kappa: f64,
    pub norm: OpNorm,
}

/// Output of one aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationOutcome {
    pub aggregate: Vector,
    /// The averaged subset, reported by SMEA only.
    pub selected: Option<IndexSubset>,
    /// Top covariance eigenvalue of the averaged subset, reported by SMEA only.
    pub selected_lambda_max: Option<f64>,
}

fn check_f(n: usize, f: usize) -> Result<()> {
    if 2 * f >= n {
        Err(Error::validation(format!(
            "robustness parameter f = {f} must satisfy f < n/2 for n = {n}"
        )))
    } else {
        Ok(())
    }
}

/// Coordinate-wise arithmetic mean of every vector in the batch.
pub fn aggregate_mean(batch: &GradientBatch) -> AggregationOutcome {
    AggregationOutcome {
        aggregate: Vector::mean_of(batch.vectors()).expect("batch is nonempty"),
        selected: None,
        selected_lambda_max: None,
    }
}

/// Scalar trimmed mean: sort, drop `f` values from each end, average the rest.
///
/// Equal values are ordered by their original position, which keeps the
/// result deterministic.
pub fn trimmed_mean(values: &[f64], f: usize) -> Result<f64> {
    check_f(values.len(), f)?;
    if let Some(x) = values.iter().find(|x| !x.is_finite()) {
        return Err(Error::validation(format!(
            "trimmed mean of non-finite value {x}"
        )));
    }
    let mut order: Vec<(f64, usize)> = values.iter().copied().zip(0..).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let kept = &order[f..values.len() - f];
    Ok(kept.iter().map(|(x, _)| x).sum::<f64>() / kept.len() as f64)
}

/// Coordinate-wise trimmed mean.
pub fn aggregate_cwtm(batch: &GradientBatch, f: usize) -> Result<AggregationOutcome> {
    check_f(batch.n(), f)?;
    let mut column = vec![0.0; batch.n()];
    let mut out = Vec::with_capacity(batch.dim());
    for k in 0..batch.dim() {
        for (slot, v) in column.iter_mut().zip(batch.vectors()) {
            *slot = v[k];
        }
        out.push(trimmed_mean(&column, f)?);
    }
    Ok(AggregationOutcome {
        aggregate: Vector::new(out)?,
        selected: None,
        selected_lambda_max: None,
    })
}

/// Smallest maximum eigenvalue averaging.
///
/// Scans every subset of size `n - f`, keeps the one whose empirical
/// covariance has the smallest top eigenvalue, and returns its mean. Two
/// eigenvalues closer than `1e-11` times the largest squared deviation in
/// the batch count as tied, and ties go to the lexicographically first
/// subset.
pub fn aggregate_smea(batch: &GradientBatch, f: usize) -> Result<AggregationOutcome> {
    let n = batch.n();
    check_f(n, f)?;
    check_subset_capacity(n)?;
    let selected = smea_select(batch.vectors(), f)?;
    let stats = covariance_stats(batch.vectors(), &selected)?;
    Ok(AggregationOutcome {
        aggregate: stats.mean,
        selected: Some(selected),
        selected_lambda_max: Some(stats.lambda_max.max(0.0)),
    })
}

/// Packed sufficient statistics of one vector: the centered coordinates
/// followed by the upper triangle of their outer product.
fn packed_stats(u: &[f64]) -> Vec<f64> {
    let d = u.len();
    let mut out = Vec::with_capacity(d + d * (d + 1) / 2);
    out.extend_from_slice(u);
    for r in 0..d {
        for s in r..d {
            out.push(u[r] * u[s]);
        }
    }
    out
}

fn lambda_from_sums(sums: &[f64], d: usize, k: f64, scratch: &mut SquareMatrix) -> Result<f64> {
    let mean = &sums[..d];
    let second = &sums[d..];
    if d == 1 {
        let m = mean[0] / k;
        return Ok(second[0] / k - m * m);
    }
    if d == 2 {
        let (m0, m1) = (mean[0] / k, mean[1] / k);
        let a = second[0] / k - m0 * m0;
        let b = second[1] / k - m0 * m1;
        let c = second[2] / k - m1 * m1;
        return Ok(max_eigenvalue_2x2(a, b, c));
    }
    let mut pos = 0;
    for r in 0..d {
        for s in r..d {
            let v = second[pos] / k - (mean[r] / k) * (mean[s] / k);
            scratch.set(r, s, v);
            scratch.set(s, r, v);
            pos += 1;
        }
    }
    max_eigenvalue_sym(scratch)
}

/// Whether the subset complementary to `excl_a` precedes the one
/// complementary to `excl_b` in lexicographic order. Both exclusion lists
/// are sorted and of equal length.
fn complement_precedes(excl_a: &[usize], excl_b: &[usize]) -> bool {
    // The smallest index in the symmetric difference belongs to the
    // lexicographically smaller included set, i.e. it is excluded by `b`.
    let (mut i, mut j) = (0, 0);
    while i < excl_a.len() && j < excl_b.len() {
        match excl_a[i].cmp(&excl_b[j]) {
            Ordering::Equal => {
                i += 1;
                j += 1;
            }
            Ordering::Less => return false,
            Ordering::Greater => return true,
        }
    }
    false
}

fn smea_select(vectors: &[Vector], f: usize) -> Result<IndexSubset> {
    let n = vectors.len();
    if f == 0 {
        return Ok(IndexSubset::full(n));
    }
    let d = vectors[0].dim();
    let center = Vector::mean_of(vectors).expect("batch is nonempty");
    let packed: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| packed_stats((v - &center).as_slice()))
        .collect();
    let width = packed[0].len();
    let mut total = vec![0.0; width];
    for p in &packed {
        for (t, x) in total.iter_mut().zip(p) {
            *t += x;
        }
    }
    let scale = vectors
        .iter()
        .map(|v| (v - &center).norm_sq())
        .fold(0.0f64, f64::max);
    let tie = SMEA_TIE_TOL * scale;
    let k = (n - f) as f64;
    let mut scratch = SquareMatrix::zeros(d);
    let mut sums = vec![0.0; width];

    let mut excl: Vec<usize> = (0..f).collect();
    let mut best_excl = excl.clone();
    let mut best = f64::INFINITY;
    loop {
        sums.copy_from_slice(&total);
        for &e in &excl {
            for (s, x) in sums.iter_mut().zip(&packed[e]) {
                *s -= x;
            }
        }
        let lam = lambda_from_sums(&sums, d, k, &mut scratch)?;
        let better = if lam < best - tie {
            true
        } else if lam <= best + tie {
            complement_precedes(&excl, &best_excl)
        } else {
            false
        };
        if better {
            best = lam;
            best_excl.copy_from_slice(&excl);
        }
        if !next_combination(&mut excl, n) {
            break;
        }
    }
    let keep = (0..n)
        .filter(|i| best_excl.binary_search(i).is_err())
        .collect();
    IndexSubset::new(keep, n)
}

/// Robustness coefficient of SMEA: `(4f/(n-f))·(1 + f/(n-2f))²`.
pub fn kappa_smea(n: usize, f: usize) -> Result<f64> {
    check_f(n, f)?;
    let (n, f) = (n as f64, f as f64);
    Ok(4.0 * f / (n - f) * (1.0 + f / (n - 2.0 * f)).powi(2))
}

/// Robustness coefficient of CWTM: `(6f/(n-2f))·(1 + f/(n-2f))`.
pub fn kappa_cwtm(n: usize, f: usize) -> Result<f64> {
    check_f(n, f)?;
    let (n, f) = (n as f64, f as f64);
    Ok(6.0 * f / (n - 2.0 * f) * (1.0 + f / (n - 2.0 * f)))
}

/// Result of an exhaustive robustness check.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub passed: bool,
    /// Minimum over subsets of `rhs - lhs`.
    pub worst_slack: f64,
    /// The subset attaining the worst slack.
    pub worst_subset: IndexSubset,
    pub subsets_checked: u64,
}

/// Checks `‖output - ḡ_S‖² ≤ κ‖Σ_S‖` on every subset of size `n - f`.
///
/// A subset passes when `rhs - lhs ≥ -1e-9·(rhs + 1e-12·s)`, where `s` is
/// the largest squared norm in the batch; the second term absorbs rounding
/// in zero-variance subsets.
pub fn check_robustness(
    batch: &GradientBatch,
    rule_output: &Vector,
    spec: &RobustnessSpec,
) -> Result<Certificate> {
    let n = batch.n();
    check_f(n, spec.f)?;
    check_subset_capacity(n)?;
    if rule_output.dim() != batch.dim() {
        return Err(Error::validation(format!(
            "rule output has dimension {} but the batch has {}",
            rule_output.dim(),
            batch.dim()
        )));
    }
    let scale = batch
        .vectors()
        .iter()
        .map(Vector::norm_sq)
        .fold(rule_output.norm_sq(), f64::max);
    let k = n - spec.f;
    let mut idx: Vec<usize> = (0..k).collect();
    let mut passed = true;
    let mut worst = f64::INFINITY;
    let mut worst_idx = idx.clone();
    let mut count = 0u64;
    loop {
        let (mean, cov) = covariance_matrix(batch.vectors(), &idx)?;
        let spread = match spec.norm {
            OpNorm::Trace => cov.trace(),
            OpNorm::Spectral => max_eigenvalue_sym(&cov)?,
        }
        .max(0.0);
        let lhs = (rule_output - &mean).norm_sq();
        let rhs = spec.kappa * spread;
        let slack = rhs - lhs;
        if slack < -CERTIFICATION_TOL * (rhs + 1e-12 * scale) {
            passed = false;
        }
        if slack < worst {
            worst = slack;
            worst_idx.copy_from_slice(&idx);
        }
        count += 1;
        if !next_combination(&mut idx, n) {
            break;
        }
    }
    Ok(Certificate {
        passed,
        worst_slack: worst,
        worst_subset: IndexSubset::new(worst_idx, n)?,
        subsets_checked: count,
    })
}

/// An aggregation rule selectable by name.
pub trait Aggregator: Send + Sync {
    /// Registry name of the rule.
    fn name(&self) -> &'static str;

    /// Aggregate `batch` tolerating `f` misbehaving inputs.
    fn aggregate(&self, batch: &GradientBatch, f: usize) -> Result<AggregationOutcome>;

    /// The robustness triple the rule is known to satisfy, if any.
    fn robustness(&self, n: usize, f: usize) -> Result<Option<RobustnessSpec>>;
}

/// Plain averaging.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanRule;

impl Aggregator for MeanRule {
    fn name(&self) -> &'static str {
        "mean"
    }

    fn aggregate(&self, batch: &GradientBatch, _f: usize) -> Result<AggregationOutcome> {
        Ok(aggregate_mean(batch))
    }

    fn robustness(&self, n: usize, f: usize) -> Result<Option<RobustnessSpec>> {
        check_f(n, f)?;
        Ok((f == 0).then_some(RobustnessSpec {
            f,
            kappa: 0.0,
            norm: OpNorm::Trace,
        }))
    }
}

/// Coordinate-wise trimmed mean.
#[derive(Debug, Clone, Copy, Default)]
pub struct CwtmRule;

impl Aggregator for CwtmRule {
    fn name(&self) -> &'static str {
        "cwtm"
    }

    fn aggregate(&self, batch: &GradientBatch, f: usize) -> Result<AggregationOutcome> {
        aggregate_cwtm(batch, f)
    }

    fn robustness(&self, n: usize, f: usize) -> Result<Option<RobustnessSpec>> {
        Ok(Some(RobustnessSpec {
            f,
            kappa: kappa_cwtm(n, f)?,
            norm: OpNorm::Trace,
        }))
    }
}

/// Smallest maximum eigenvalue averaging.
#[derive(Debug, Clone, Copy, Default)]
pub struct SmeaRule;

impl Aggregator for SmeaRule {
    fn name(&self) -> &'static str {
        "smea"
    }

    fn aggregate(&self, batch: &GradientBatch, f: usize) -> Result<AggregationOutcome> {
        aggregate_smea(batch, f)
    }

    fn robustness(&self, n: usize, f: usize) -> Result<Option<RobustnessSpec>> {
        Ok(Some(RobustnessSpec {
            f,
            kappa: kappa_smea(n, f)?,
            norm: OpNorm::Spectral,
        }))
    }
}

/// Name-indexed collection of aggregation rules.
#[derive(Clone)]
pub struct AggregatorRegistry {
    rules: BTreeMap<String, Arc<dyn Aggregator>>,
}

impl AggregatorRegistry {
    /// An empty registry.
    pub fn empty() -> Self {
        AggregatorRegistry {
            rules: BTreeMap::new(),
        }
    }

    /// Add or replace a rule under its own name.
    pub fn register(&mut self, rule: Arc<dyn Aggregator>) {
        self.rules.insert(rule.name().to_string(), rule);
    }

    /// Look up a rule by name.
    pub fn get(&self, name: &str) -> Result<Arc<dyn Aggregator>> {
        self.rules.get(name).cloned().ok_or_else(|| {
            Error::configuration(format!(
                "unknown aggregation rule '{name}' (available: {})",
                self.names().join(", ")
            ))
        })
    }

    /// Registered names in sorted order.
    pub fn names(&self) -> Vec<String> {
        self.rules.keys().cloned().collect()
    }
}

impl Default for AggregatorRegistry {
    /// A registry holding `mean`, `cwtm` and `smea`.
    fn default() -> Self {
        let mut reg = Self::empty();
        reg.register(Arc::new(MeanRule));
        reg.register(Arc::new(CwtmRule));
        reg.register(Arc::new(SmeaRule));
        reg
    }
}

impl fmt::Debug for AggregatorRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AggregatorRegistry")
            .field("rules", &self.names())
            .finish()
    }
}
