//! Small dense linear algebra and subset combinatorics.
//!
//! Everything here is sized for desk-scale experiments: vectors of a few
//! coordinates, symmetric matrices with `d` at most a few dozen, and subset
//! scans over at most [`MAX_SUBSET_N`] workers.

use std::fmt;
use std::ops::{Add, Index, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest worker count accepted by exhaustive subset enumeration.
pub const MAX_SUBSET_N: usize = 24;

/// Symmetry tolerance accepted by [`max_eigenvalue_sym`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Off-diagonal convergence threshold of the Jacobi sweeps, relative to the
/// Frobenius norm of the input.
const JACOBI_TOL: f64 = 1e-12;

/// Maximum number of cyclic Jacobi sweeps.
const JACOBI_MAX_SWEEPS: usize = 100;

/// A dense real vector with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector(Vec<f64>);

impl Vector {
    /// Builds a vector, rejecting empty input and non-finite entries.
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::validation("vector must have dimension at least 1"));
        }
        if let Some(pos) = entries.iter().position(|x| !x.is_finite()) {
            return Err(Error::validation(format!(
                "vector entry {pos} is not finite ({})",
                entries[pos]
            )));
        }
        Ok(Vector(entries))
    }

    /// The zero vector of dimension `dim`.
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "vector dimension must be at least 1");
        Vector(vec![0.0; dim])
    }

    /// A one-dimensional vector holding `x`.
    pub fn scalar(x: f64) -> Self {
        Vector(vec![x])
    }

    /// Number of coordinates.
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Borrow the coordinates.
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Consume the vector and return its coordinates.
    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Whether every coordinate is finite.
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Euclidean inner product. Panics on a dimension mismatch.
    pub fn dot(&self, other: &Vector) -> f64 {
        assert_same_dim(self, other);
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Squared Euclidean norm.
    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Euclidean distance to `other`.
    pub fn distance(&self, other: &Vector) -> f64 {
        (self - other).norm()
    }

    /// Multiply every coordinate by `s`.
    pub fn scale(&self, s: f64) -> Vector {
        Vector(self.0.iter().map(|x| x * s).collect())
    }

    /// In-place `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Vector) {
        assert_same_dim(self, other);
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += s * b;
        }
    }

    /// The single coordinate of a one-dimensional vector.
    pub fn as_scalar(&self) -> Result<f64> {
        if self.dim() == 1 {
            Ok(self.0[0])
        } else {
            Err(Error::validation(format!(
                "expected a one-dimensional vector, got dimension {}",
                self.dim()
            )))
        }
    }

    /// Arithmetic mean of a nonempty list of equal-dimension vectors.
    pub fn mean_of<'a, I>(vectors: I) -> Option<Vector>
    where
        I: IntoIterator<Item = &'a Vector>,
    {
        let mut iter = vectors.into_iter();
        let first = iter.next()?;
        let mut acc = first.clone();
        let mut count = 1usize;
        for v in iter {
            acc.axpy(1.0, v);
            count += 1;
        }
        Some(acc.scale(1.0 / count as f64))
    }
}

fn assert_same_dim(a: &Vector, b: &Vector) {
    assert_eq!(
        a.dim(),
        b.dim(),
        "vector dimension mismatch: {} vs {}",
        a.dim(),
        b.dim()
    );
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;

    fn try_from(entries: Vec<f64>) -> Result<Self> {
        Vector::new(entries)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

impl Index<usize> for Vector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Add for &Vector {
    type Output = Vector;

    fn add(self, rhs: &Vector) -> Vector {
        assert_same_dim(self, rhs);
        Vector(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &Vector {
    type Output = Vector;

    fn sub(self, rhs: &Vector) -> Vector {
        assert_same_dim(self, rhs);
        Vector(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl Mul<f64> for &Vector {
    type Output = Vector;

    fn mul(self, s: f64) -> Vector {
        self.scale(s)
    }
}

impl Neg for &Vector {
    type Output = Vector;

    fn neg(self) -> Vector {
        self.scale(-1.0)
    }
}

impl fmt::Display for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, x) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{x}")?;
        }
        write!(f, ")")
    }
}

/// A dense square matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    /// The zero matrix of size `dim × dim`.
    pub fn zeros(dim: usize) -> Self {
        SquareMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    /// Builds a matrix from rows, checking that it is square and nonempty.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::validation("matrix must have dimension at least 1"));
        }
        let mut data = Vec::with_capacity(dim * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::validation(format!(
                    "row {i} has length {} but the matrix has {dim} rows",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(SquareMatrix { dim, data })
    }

    /// Number of rows (and columns).
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Entry at row `i`, column `j`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Set the entry at row `i`, column `j`.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.dim + j] = value;
    }

    /// Sum of the diagonal.
    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Quadratic form `uᵀ M u`.
    pub fn quadratic_form(&self, u: &[f64]) -> f64 {
        assert_eq!(u.len(), self.dim, "quadratic form dimension mismatch");
        let mut acc = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                acc += u[i] * self.get(i, j) * u[j];
            }
        }
        acc
    }

    fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Largest eigenvalue of a real symmetric matrix.
///
/// Dimensions one and two use the closed form; larger matrices use cyclic
/// Jacobi rotations until the off-diagonal norm falls below `1e-12` times
/// the Frobenius norm, capped at 100 sweeps.
pub fn max_eigenvalue_sym(matrix: &SquareMatrix) -> Result<f64> {
    let d = matrix.dim();
    if d == 0 {
        return Err(Error::validation("matrix must have dimension at least 1"));
    }
    if let Some(x) = matrix.data.iter().find(|x| !x.is_finite()) {
        return Err(Error::validation(format!(
            "matrix has a non-finite entry ({x})"
        )));
    }
    let scale = matrix.data.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    for i in 0..d {
        for j in (i + 1)..d {
            if (matrix.get(i, j) - matrix.get(j, i)).abs() > SYMMETRY_TOL * scale {
                return Err(Error::validation(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    matrix.get(i, j),
                    matrix.get(j, i)
                )));
            }
        }
    }
    Ok(match d {
        1 => matrix.get(0, 0),
        2 => max_eigenvalue_2x2(
            matrix.get(0, 0),
            0.5 * (matrix.get(0, 1) + matrix.get(1, 0)),
            matrix.get(1, 1),
        ),
        _ => jacobi_max_eigenvalue(matrix),
    })
}

/// Largest eigenvalue of `[[a, b], [b, c]]`.
pub(crate) fn max_eigenvalue_2x2(a: f64, b: f64, c: f64) -> f64 {
    0.5 * (a + c) + (0.5 * (a - c)).hypot(b)
}

fn jacobi_max_eigenvalue(matrix: &SquareMatrix) -> f64 {
    let d = matrix.dim();
    let mut a = matrix.clone();
    // Symmetrize so that rotations act on an exactly symmetric matrix.
    for i in 0..d {
        for j in (i + 1)..d {
            let s = 0.5 * (a.get(i, j) + a.get(j, i));
            a.set(i, j, s);
            a.set(j, i, s);
        }
    }
    let threshold = JACOBI_TOL * a.frobenius_norm();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j) * a.get(i, j))
            .sum::<f64>()
            .sqrt();
        if off <= threshold {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..d {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
            }
        }
    }
    (0..d)
        .map(|i| a.get(i, i))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// A strictly increasing list of worker indices drawn from `{0..n-1}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IndexSubset {
    indices: Vec<usize>,
    n: usize,
}

impl IndexSubset {
    /// Builds a subset, checking order, uniqueness and range.
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        if let Some(w) = indices.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::validation(format!(
                "subset indices must be strictly increasing, found {} then {}",
                w[0], w[1]
            )));
        }
        if let Some(&last) = indices.last() {
            if last >= n {
                return Err(Error::validation(format!(
                    "subset index {last} out of range for n = {n}"
                )));
            }
        }
        Ok(IndexSubset { indices, n })
    }

    /// Builds a subset from indices in any order.
    pub fn from_unsorted(mut indices: Vec<usize>, n: usize) -> Result<Self> {
        indices.sort_unstable();
        Self::new(indices, n)
    }

    /// The subset `{0..n-1}`.
    pub fn full(n: usize) -> Self {
        IndexSubset {
            indices: (0..n).collect(),
            n,
        }
    }

    /// The member indices in increasing order.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Size of the ground set.
    pub fn universe(&self) -> usize {
        self.n
    }

    /// Number of members.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    /// Whether the subset has no members.
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Whether `i` is a member.
    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// The indices of `{0..n-1}` not in this subset.
    pub fn complement(&self) -> IndexSubset {
        let indices = (0..self.n).filter(|i| !self.contains(*i)).collect();
        IndexSubset { indices, n: self.n }
    }
}

impl fmt::Display for IndexSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, x) in self.indices.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{x}")?;
        }
        write!(f, "}}")
    }
}

/// Mean, trace and top eigenvalue of an empirical covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceStats {
    pub mean: Vector,
    pub trace: f64,
    pub lambda_max: f64,
}

/// Mean and empirical covariance (normalized by `|S|`) of the vectors
/// indexed by `subset`.
pub fn covariance_matrix(vectors: &[Vector], subset: &[usize]) -> Result<(Vector, SquareMatrix)> {
    if subset.is_empty() {
        return Err(Error::validation("covariance of an empty subset"));
    }
    let d = vectors[subset[0]].dim();
    if let Some(&bad) = subset.iter().find(|&&i| vectors[i].dim() != d) {
        return Err(Error::validation(format!(
            "vector {bad} has dimension {} but expected {d}",
            vectors[bad].dim()
        )));
    }
    let mean = Vector::mean_of(subset.iter().map(|&i| &vectors[i])).expect("nonempty subset");
    let mut cov = SquareMatrix::zeros(d);
    for &i in subset {
        let c = &vectors[i] - &mean;
        for r in 0..d {
            for s in r..d {
                let v = cov.get(r, s) + c[r] * c[s];
                cov.set(r, s, v);
            }
        }
    }
    let k = subset.len() as f64;
    for r in 0..d {
        for s in r..d {
            let v = cov.get(r, s) / k;
            cov.set(r, s, v);
            cov.set(s, r, v);
        }
    }
    Ok((mean, cov))
}

/// Covariance statistics of the vectors indexed by `subset`.
pub fn covariance_stats(vectors: &[Vector], subset: &IndexSubset) -> Result<CovarianceStats> {
    if let Some(&last) = subset.indices().last() {
        if last >= vectors.len() {
            return Err(Error::validation(format!(
                "subset index {last} out of range for {} vectors",
                vectors.len()
            )));
        }
    }
    let (mean, cov) = covariance_matrix(vectors, subset.indices())?;
    let trace = cov.trace();
    let lambda_max = max_eigenvalue_sym(&cov)?;
    Ok(CovarianceStats {
        mean,
        trace,
        lambda_max,
    })
}

/// Binomial coefficient `C(n, k)`.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u64 / (i + 1) as u64;
    }
    acc
}

pub(crate) fn check_subset_capacity(n: usize) -> Result<()> {
    if n > MAX_SUBSET_N {
        Err(Error::Capacity {
            what: format!("subset enumeration over n = {n} workers"),
            limit: MAX_SUBSET_N,
        })
    } else {
        Ok(())
    }
}

/// Advance `idx` (a strictly increasing `k`-combination of `{0..n-1}`) to
/// its lexicographic successor. Returns `false` once `idx` was the last one.
pub fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in (i + 1)..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// All `k`-subsets of `{0..n-1}` in lexicographic order.
pub fn enumerate_subsets(n: usize, k: usize) -> Result<SubsetIter> {
    check_subset_capacity(n)?;
    if k == 0 || k > n {
        return Err(Error::validation(format!(
            "subset size must satisfy 0 < k <= n, got k = {k}, n = {n}"
        )));
    }
    Ok(SubsetIter {
        current: Some((0..k).collect()),
        n,
    })
}

/// Iterator returned by [`enumerate_subsets`].
#[derive(Debug, Clone)]
pub struct SubsetIter {
    current: Option<Vec<usize>>,
    n: usize,
}

impl Iterator for SubsetIter {
    type Item = IndexSubset;

    fn next(&mut self) -> Option<IndexSubset> {
        let out = self.current.clone()?;
        let mut next = out.clone();
        self.current = if next_combination(&mut next, self.n) {
            Some(next)
        } else {
            None
        };
        Some(IndexSubset {
            indices: out,
            n: self.n,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_eigenvalues() {
        let z = SquareMatrix::from_rows(&[vec![0.0]]).unwrap();
        assert_eq!(max_eigenvalue_sym(&z).unwrap(), 0.0);
        let diag = SquareMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 5.0]]).unwrap();
        assert_eq!(max_eigenvalue_sym(&diag).unwrap(), 5.0);
    }

    #[test]
    fn jacobi_matches_known_spectrum() {
        // Eigenvalues of this tridiagonal matrix are 2 - sqrt(2), 2, 2 + sqrt(2).
        let m = SquareMatrix::from_rows(&[
            vec![2.0, -1.0, 0.0],
            vec![-1.0, 2.0, -1.0],
            vec![0.0, -1.0, 2.0],
        ])
        .unwrap();
        let lam = max_eigenvalue_sym(&m).unwrap();
        assert!((lam - (2.0 + 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn rejects_asymmetric_and_non_finite() {
        let m = SquareMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(max_eigenvalue_sym(&m), Err(Error::Validation(_))));
        let m = SquareMatrix::from_rows(&[vec![f64::NAN]]).unwrap();
        assert!(matches!(max_eigenvalue_sym(&m), Err(Error::Validation(_))));
    }

    #[test]
    fn covariance_examples() {
        let v: Vec<Vector> = [0.0, 0.0, 1.0].iter().map(|&x| Vector::scalar(x)).collect();
        let s = covariance_stats(&v, &IndexSubset::full(3)).unwrap();
        assert!((s.trace - 2.0 / 9.0).abs() < 1e-15);
        assert!((s.lambda_max - 2.0 / 9.0).abs() < 1e-15);

        let v = vec![Vector::scalar(-1.0), Vector::scalar(1.0)];
        let s = covariance_stats(&v, &IndexSubset::full(2)).unwrap();
        assert_eq!(s.trace, 1.0);

        let same = vec![Vector::new(vec![1.0, 2.0]).unwrap(); 3];
        let s = covariance_stats(&same, &IndexSubset::full(3)).unwrap();
        assert_eq!((s.trace, s.lambda_max), (0.0, 0.0));
    }

    #[test]
    fn empty_subset_is_rejected() {
        let v = vec![Vector::scalar(1.0)];
        let empty = IndexSubset::new(vec![], 1).unwrap();
        assert!(covariance_stats(&v, &empty).is_err());
    }

    #[test]
    fn subset_enumeration_order_and_count() {
        let all: Vec<Vec<usize>> = enumerate_subsets(3, 2)
            .unwrap()
            .map(|s| s.indices().to_vec())
            .collect();
        assert_eq!(all, vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
        assert_eq!(enumerate_subsets(5, 5).unwrap().count(), 1);
        assert_eq!(enumerate_subsets(15, 8).unwrap().count(), 6435);
        assert_eq!(binomial(15, 8), 6435);
        assert!(matches!(
            enumerate_subsets(25, 3),
            Err(Error::Capacity { limit: 24, .. })
        ));
        assert!(enumerate_subsets(4, 0).is_err());
    }

    #[test]
    fn vector_validation() {
        assert!(Vector::new(vec![]).is_err());
        assert!(Vector::new(vec![1.0, f64::INFINITY]).is_err());
        let v = Vector::new(vec![3.0, 4.0]).unwrap();
        assert_eq!(v.norm(), 5.0);
        assert_eq!((&v - &v).norm(), 0.0);
    }
}
