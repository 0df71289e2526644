//! Loss models with their regularity constants, exact gradients, and
//! projection domains.
//!
//! Four families are provided:
//!
//! * `linear1d`: `ℓ(θ; z) = z·θ` on the real line, with `|z| ≤ C`.
//! * `quadratic_mean`: `ℓ(θ; z) = (μ/2)(θ - z)²`, with `|z| ≤ C/(2μ)`.
//! * `huberized_regression`: the squared residual `½(θᵀx - y)²` while
//!   `|θᵀx - y|·‖x‖ ≤ C`, continued linearly beyond, so that gradients
//!   never exceed `C`.
//! * `squared_regression`: the plain squared residual. It is not globally
//!   Lipschitz and is rejected by the optimization engine.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;

/// Slack allowed when checking data points against family bounds.
const DATA_TOL: f64 = 1e-12;

/// The four supported loss families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFamily {
    Linear1d,
    QuadraticMean,
    HuberizedRegression,
    SquaredRegression,
}

impl fmt::Display for LossFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LossFamily::Linear1d => "linear1d",
            LossFamily::QuadraticMean => "quadratic_mean",
            LossFamily::HuberizedRegression => "huberized_regression",
            LossFamily::SquaredRegression => "squared_regression",
        };
        f.write_str(s)
    }
}

/// Parameter set onto which iterates are projected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionDomain {
    /// No constraint.
    None,
    /// Centered Euclidean ball.
    Ball { radius: f64 },
    /// The half-line `{λv : λ ≥ 0}`.
    Ray { direction: Vector },
}

impl ProjectionDomain {
    /// Builds a ball, rejecting non-positive radii.
    pub fn ball(radius: f64) -> Result<Self> {
        if radius > 0.0 && radius.is_finite() {
            Ok(ProjectionDomain::Ball { radius })
        } else {
            Err(Error::validation(format!(
                "ball radius must be positive, got {radius}"
            )))
        }
    }

    /// Builds a ray, rejecting the zero direction.
    pub fn ray(direction: Vector) -> Result<Self> {
        if direction.norm_sq() > 0.0 {
            Ok(ProjectionDomain::Ray { direction })
        } else {
            Err(Error::validation("ray direction must be nonzero"))
        }
    }

    /// Euclidean projection of `theta` onto the domain.
    pub fn project(&self, theta: &Vector) -> Vector {
        match self {
            ProjectionDomain::None => theta.clone(),
            ProjectionDomain::Ball { radius } => {
                let norm = theta.norm();
                if norm <= *radius {
                    theta.clone()
                } else {
                    theta.scale(radius / norm)
                }
            }
            ProjectionDomain::Ray { direction } => {
                let coef = (theta.dot(direction) / direction.norm_sq()).max(0.0);
                direction.scale(coef)
            }
        }
    }
}

/// Free-function form of [`ProjectionDomain::project`].
pub fn project(domain: &ProjectionDomain, theta: &Vector) -> Vector {
    domain.project(theta)
}

/// One training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataPoint {
    /// Scalar example used by `linear1d` and `quadratic_mean`.
    Scalar(f64),
    /// Feature/label pair used by the regression families.
    Labeled { x: Vector, y: f64 },
}

impl DataPoint {
    /// Shorthand for a labeled example.
    pub fn labeled(x: Vector, y: f64) -> Self {
        DataPoint::Labeled { x, y }
    }
}

/// A loss family together with its regularity constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub family: LossFamily,
    /// Lipschitz constant (infinite for `squared_regression`).
    pub c: f64,
    /// Smoothness constant.
    pub l: f64,
    /// Strong-convexity constant, when the family has one.
    pub mu: Option<f64>,
    /// Uniform bound on the loss, when known.
    pub ell_inf: Option<f64>,
    pub domain: ProjectionDomain,
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "{name} must be positive and finite, got {x}"
        )))
    }
}

impl LossModel {
    /// `ℓ(θ; z) = zθ` with `|z| ≤ c`; `l` is any positive smoothness bound.
    pub fn linear1d(c: f64, l: f64) -> Result<Self> {
        check_positive("C", c)?;
        check_positive("L", l)?;
        Ok(LossModel {
            family: LossFamily::Linear1d,
            c,
            l,
            mu: None,
            ell_inf: None,
            domain: ProjectionDomain::None,
        })
    }

    /// `ℓ(θ; z) = (μ/2)(θ - z)²` on the ball of radius `c/(2μ)`.
    pub fn quadratic_mean(c: f64, mu: f64, l: f64) -> Result<Self> {
        check_positive("C", c)?;
        check_positive("mu", mu)?;
        check_positive("L", l)?;
        if mu > l {
            return Err(Error::validation(format!(
                "mu = {mu} must not exceed L = {l}"
            )));
        }
        Ok(LossModel {
            family: LossFamily::QuadraticMean,
            c,
            l,
            mu: Some(mu),
            ell_inf: None,
            domain: ProjectionDomain::ball(c / (2.0 * mu))?,
        })
    }

    /// Huberized least squares with gradient norm at most `c`; features
    /// satisfy `‖x‖ ≤ √l`.
    pub fn huberized_regression(c: f64, l: f64, domain: ProjectionDomain) -> Result<Self> {
        check_positive("C", c)?;
        check_positive("L", l)?;
        Ok(LossModel {
            family: LossFamily::HuberizedRegression,
            c,
            l,
            mu: None,
            ell_inf: None,
            domain,
        })
    }

    /// Plain least squares with features satisfying `‖x‖ ≤ √l`.
    pub fn squared_regression(l: f64) -> Result<Self> {
        check_positive("L", l)?;
        Ok(LossModel {
            family: LossFamily::SquaredRegression,
            c: f64::INFINITY,
            l,
            mu: None,
            ell_inf: None,
            domain: ProjectionDomain::None,
        })
    }

    /// Attach a uniform loss bound.
    pub fn with_ell_inf(mut self, ell_inf: f64) -> Self {
        self.ell_inf = Some(ell_inf);
        self
    }

    /// Whether gradients are uniformly bounded by `c`.
    pub fn is_globally_lipschitz(&self) -> bool {
        self.family != LossFamily::SquaredRegression
    }

    /// Check that `z` belongs to the family's data domain.
    pub fn validate_point(&self, z: &DataPoint) -> Result<()> {
        match (self.family, z) {
            (LossFamily::Linear1d, DataPoint::Scalar(v)) => {
                bounded("z", *v, self.c)?;
            }
            (LossFamily::QuadraticMean, DataPoint::Scalar(v)) => {
                bounded("z", *v, self.c / (2.0 * self.mu.unwrap_or(1.0)))?;
            }
            (
                LossFamily::HuberizedRegression | LossFamily::SquaredRegression,
                DataPoint::Labeled { x, y },
            ) => {
                if !y.is_finite() {
                    return Err(Error::validation(format!("label {y} is not finite")));
                }
                bounded("‖x‖", x.norm(), self.l.sqrt())?;
            }
            (family, z) => {
                return Err(Error::validation(format!(
                    "data point {z:?} does not match loss family {family}"
                )))
            }
        }
        Ok(())
    }

    fn check_theta(&self, theta: &Vector, z: &DataPoint) -> Result<()> {
        let expected = match z {
            DataPoint::Scalar(_) => 1,
            DataPoint::Labeled { x, .. } => x.dim(),
        };
        if theta.dim() != expected {
            return Err(Error::validation(format!(
                "parameter has dimension {} but the data point needs {expected}",
                theta.dim()
            )));
        }
        Ok(())
    }

    /// Loss at parameter `theta` on example `z`.
    pub fn value(&self, theta: &Vector, z: &DataPoint) -> Result<f64> {
        self.validate_point(z)?;
        self.check_theta(theta, z)?;
        Ok(match z {
            DataPoint::Scalar(v) => match self.family {
                LossFamily::Linear1d => v * theta[0],
                _ => {
                    let mu = self.mu.unwrap_or(1.0);
                    0.5 * mu * (theta[0] - v).powi(2)
                }
            },
            DataPoint::Labeled { x, y } => {
                let r = theta.dot(x) - y;
                let nx = x.norm();
                if self.family == LossFamily::SquaredRegression || r.abs() * nx <= self.c {
                    0.5 * r * r
                } else {
                    self.c * (r.abs() / nx - self.c / (2.0 * nx * nx))
                }
            }
        })
    }

    /// Analytic gradient of the loss at `theta` on example `z`.
    pub fn gradient(&self, theta: &Vector, z: &DataPoint) -> Result<Vector> {
        self.validate_point(z)?;
        self.check_theta(theta, z)?;
        Ok(match z {
            DataPoint::Scalar(v) => match self.family {
                LossFamily::Linear1d => Vector::scalar(*v),
                _ => Vector::scalar(self.mu.unwrap_or(1.0) * (theta[0] - v)),
            },
            DataPoint::Labeled { x, y } => {
                let r = theta.dot(x) - y;
                let nx = x.norm();
                if self.family == LossFamily::SquaredRegression || r.abs() * nx <= self.c {
                    x.scale(r)
                } else {
                    if nx == 0.0 {
                        return Err(Error::validation(
                            "zero feature vector in the linear branch",
                        ));
                    }
                    x.scale(self.c * r.signum() / nx)
                }
            }
        })
    }

    /// Central-difference gradient with step `h`.
    pub fn finite_diff_gradient(&self, theta: &Vector, z: &DataPoint, h: f64) -> Result<Vector> {
        check_positive("h", h)?;
        let mut out = Vec::with_capacity(theta.dim());
        for k in 0..theta.dim() {
            let mut plus = theta.clone().into_vec();
            let mut minus = plus.clone();
            plus[k] += h;
            minus[k] -= h;
            let fp = self.value(&Vector::new(plus)?, z)?;
            let fm = self.value(&Vector::new(minus)?, z)?;
            out.push((fp - fm) / (2.0 * h));
        }
        Vector::new(out)
    }

    /// Average gradient over a local dataset.
    pub fn empirical_gradient(&self, theta: &Vector, data: &[DataPoint]) -> Result<Vector> {
        if data.is_empty() {
            return Err(Error::validation("empirical gradient of an empty dataset"));
        }
        let mut acc = Vector::zeros(theta.dim());
        for z in data {
            acc.axpy(1.0, &self.gradient(theta, z)?);
        }
        Ok(acc.scale(1.0 / data.len() as f64))
    }

    /// Euclidean projection onto the model's domain.
    pub fn project(&self, theta: &Vector) -> Vector {
        self.domain.project(theta)
    }
}

fn bounded(name: &str, value: f64, bound: f64) -> Result<()> {
    if value.is_finite() && value.abs() <= bound * (1.0 + DATA_TOL) {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "{name} = {value} exceeds the bound {bound}"
        )))
    }
}

/// Free-function form of [`LossModel::value`].
pub fn loss_value(model: &LossModel, theta: &Vector, z: &DataPoint) -> Result<f64> {
    model.value(theta, z)
}

/// Free-function form of [`LossModel::gradient`].
pub fn loss_gradient(model: &LossModel, theta: &Vector, z: &DataPoint) -> Result<Vector> {
    model.gradient(theta, z)
}

/// Free-function form of [`LossModel::finite_diff_gradient`].
pub fn finite_diff_gradient(
    model: &LossModel,
    theta: &Vector,
    z: &DataPoint,
    h: f64,
) -> Result<Vector> {
    model.finite_diff_gradient(theta, z, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn linear_and_quadratic_examples() {
        let lin = LossModel::linear1d(1.0, 1.0).unwrap();
        assert_eq!(lin.value(&v(&[0.0]), &DataPoint::Scalar(0.7)).unwrap(), 0.0);
        assert_eq!(
            lin.gradient(&v(&[3.0]), &DataPoint::Scalar(-1.0)).unwrap(),
            v(&[-1.0])
        );
        assert!(lin.value(&v(&[0.0]), &DataPoint::Scalar(1.5)).is_err());

        let q = LossModel::quadratic_mean(1.0, 1.0, 1.0).unwrap();
        assert_eq!(q.value(&v(&[0.25]), &DataPoint::Scalar(0.25)).unwrap(), 0.0);
        assert_eq!(
            q.gradient(&v(&[0.0]), &DataPoint::Scalar(0.5)).unwrap(),
            v(&[-0.5])
        );
        assert!(q.validate_point(&DataPoint::Scalar(0.6)).is_err());
        assert!(LossModel::quadratic_mean(1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn huberized_boundary_example() {
        let (c, l, t) = (1.0f64, 4.0f64, 16.0f64);
        let b = 1.0 / t.sqrt();
        let beta = c / l.sqrt();
        let vdir = v(&[l.sqrt(), 0.0]);
        let model = LossModel::huberized_regression(c, l, ProjectionDomain::None).unwrap();
        let z = DataPoint::labeled(vdir.scale(b), beta / b);
        let theta = v(&[0.0, 0.0]);
        let val = model.value(&theta, &z).unwrap();
        assert!((val - 0.5 * (beta / b).powi(2)).abs() < 1e-15);
        let g = model.gradient(&theta, &z).unwrap();
        assert!((&g - &vdir.scale(-beta)).norm() < 1e-15);
        assert!((g.norm() - c).abs() < 1e-15);
    }

    #[test]
    fn huberized_linear_branch_is_continuous() {
        let model = LossModel::huberized_regression(1.0, 1.0, ProjectionDomain::None).unwrap();
        let x = v(&[0.6, 0.8]);
        // Residual exactly at the kink |r|·‖x‖ = C.
        let kink = DataPoint::labeled(x.clone(), -1.0);
        let theta = v(&[0.0, 0.0]);
        let inside = model.value(&theta, &kink).unwrap();
        let outside = model.value(&v(&[1e-9 * 0.6, 1e-9 * 0.8]), &kink).unwrap();
        assert!((inside - outside).abs() < 1e-8);
        let g = model.gradient(&v(&[3.0, 3.0]), &kink).unwrap();
        assert!((g.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn projection_examples() {
        let ray = ProjectionDomain::ray(v(&[1.0, 0.0])).unwrap();
        assert_eq!(ray.project(&v(&[-3.0, 5.0])), v(&[0.0, 0.0]));
        assert_eq!(ray.project(&v(&[2.0, 7.0])), v(&[2.0, 0.0]));
        let ball = ProjectionDomain::ball(1.0).unwrap();
        let p = ball.project(&v(&[3.0, 4.0]));
        assert!((&p - &v(&[0.6, 0.8])).norm() < 1e-15);
        assert_eq!(ProjectionDomain::None.project(&v(&[9.0])), v(&[9.0]));
        assert!(ProjectionDomain::ray(v(&[0.0, 0.0])).is_err());
        assert!(ProjectionDomain::ball(0.0).is_err());
    }

    #[test]
    fn mismatched_data_is_rejected() {
        let lin = LossModel::linear1d(1.0, 1.0).unwrap();
        let z = DataPoint::labeled(v(&[1.0]), 0.0);
        assert!(matches!(
            lin.value(&v(&[0.0]), &z),
            Err(Error::Validation(_))
        ));
        let reg = LossModel::squared_regression(1.0).unwrap();
        assert!(!reg.is_globally_lipschitz());
        assert!(reg
            .value(&v(&[0.0, 0.0]), &DataPoint::labeled(v(&[2.0, 0.0]), 0.0))
            .is_err());
    }
}
