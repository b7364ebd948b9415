//! Linear binary classifiers: per-sample losses, gradients, Hessians and
//! decision values for the cross-entropy and squared one-hot losses.
//!
//! Parameters are flat vectors. For the squared one-hot loss the 2×d
//! coefficient matrix is stored row-major, so the first `d` entries are the
//! positive-class row and the last `d` the negative-class row.

use std::ops::{Deref, DerefMut};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// One observation: features, sensitive bit, and label in {-1, +1}.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vector,
    pub z: u8,
    pub y: i8,
}

impl Sample {
    pub fn new(x: Vector, z: u8, y: i8) -> Result<Self> {
        if z > 1 {
            return Err(Error::invalid("z", format!("{z} is not in {{0,1}}")));
        }
        if y != 1 && y != -1 {
            return Err(Error::invalid("y", format!("{y} is not in {{-1,+1}}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample features".into()));
        }
        Ok(Self { x, z, y })
    }

    pub fn from_slice(x: &[f64], z: u8, y: i8) -> Result<Self> {
        Self::new(Vector::from_column_slice(x), z, y)
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn label(&self) -> f64 {
        f64::from(self.y)
    }
}

/// Classifier parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Params(pub Vector);

impl Params {
    pub fn zeros(len: usize) -> Self {
        Params(Vector::zeros(len))
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Params(Vector::from_column_slice(v))
    }

    pub fn into_inner(self) -> Vector {
        self.0
    }
}

impl Deref for Params {
    type Target = Vector;
    fn deref(&self) -> &Vector {
        &self.0
    }
}

impl DerefMut for Params {
    fn deref_mut(&mut self) -> &mut Vector {
        &mut self.0
    }
}

impl From<Vector> for Params {
    fn from(v: Vector) -> Self {
        Params(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    CrossEntropy,
    SquaredOneHot,
}

/// Loss family plus ridge coefficient `kappa` (the penalty is `kappa/2 ‖θ‖²`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub kappa: f64,
}

/// Numerically stable logistic function.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` without overflow.
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

impl LossSpec {
    pub fn new(kind: LossKind, kappa: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(Error::invalid("kappa", "must be finite and >= 0"));
        }
        Ok(Self { kind, kappa })
    }

    pub fn cross_entropy(kappa: f64) -> Result<Self> {
        Self::new(LossKind::CrossEntropy, kappa)
    }

    pub fn squared_one_hot(kappa: f64) -> Result<Self> {
        Self::new(LossKind::SquaredOneHot, kappa)
    }

    /// Parameter length for `d` features.
    pub fn param_dim(&self, d: usize) -> usize {
        match self.kind {
            LossKind::CrossEntropy => d,
            LossKind::SquaredOneHot => 2 * d,
        }
    }

    /// Whether the regularized expected loss is guaranteed strongly convex.
    pub fn is_strongly_convex(&self) -> bool {
        match self.kind {
            LossKind::CrossEntropy => self.kappa > 0.0,
            LossKind::SquaredOneHot => true,
        }
    }

    fn check(&self, p: &Vector, x: &Vector) -> Result<()> {
        let expected = self.param_dim(x.len());
        if p.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: p.len(),
            });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameters".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features".into()));
        }
        Ok(())
    }

    fn ridge(&self, p: &Vector) -> f64 {
        0.5 * self.kappa * p.norm_squared()
    }

    pub fn loss_value(&self, p: &Params, s: &Sample) -> Result<f64> {
        self.check(p, &s.x)?;
        let data = match self.kind {
            LossKind::CrossEntropy => softplus(-s.label() * p.dot(&s.x)),
            LossKind::SquaredOneHot => {
                let d = s.dim();
                let (t1, t2) = one_hot(s.y);
                let r1 = t1 - p.rows(0, d).dot(&s.x);
                let r2 = t2 - p.rows(d, d).dot(&s.x);
                r1 * r1 + r2 * r2
            }
        };
        Ok(data + self.ridge(p))
    }

    pub fn loss_grad(&self, p: &Params, s: &Sample) -> Result<Vector> {
        self.check(p, &s.x)?;
        let mut g = p.0.scale(self.kappa);
        match self.kind {
            LossKind::CrossEntropy => {
                let y = s.label();
                let w = -y * sigmoid(-y * p.dot(&s.x));
                g.axpy(w, &s.x, 1.0);
            }
            LossKind::SquaredOneHot => {
                let d = s.dim();
                let (t1, t2) = one_hot(s.y);
                let r1 = t1 - p.rows(0, d).dot(&s.x);
                let r2 = t2 - p.rows(d, d).dot(&s.x);
                g.rows_mut(0, d).axpy(-2.0 * r1, &s.x, 1.0);
                g.rows_mut(d, d).axpy(-2.0 * r2, &s.x, 1.0);
            }
        }
        Ok(g)
    }

    pub fn loss_hessian(&self, p: &Params, s: &Sample) -> Result<Matrix> {
        self.check(p, &s.x)?;
        let n = p.len();
        let mut h = Matrix::identity(n, n).scale(self.kappa);
        let xxt = &s.x * s.x.transpose();
        match self.kind {
            LossKind::CrossEntropy => {
                let m = p.dot(&s.x);
                h += xxt.scale(sigmoid(m) * sigmoid(-m));
            }
            LossKind::SquaredOneHot => {
                let d = s.dim();
                let block = xxt.scale(2.0);
                h.view_mut((0, 0), (d, d)).add_assign(&block);
                h.view_mut((d, d), (d, d)).add_assign(&block);
            }
        }
        Ok(h)
    }

    pub fn decision_value(&self, p: &Params, x: &Vector) -> Result<f64> {
        self.check(p, x)?;
        Ok(self.decision_unchecked(p, x))
    }

    /// Decision value without argument validation, for hot loops whose
    /// inputs were validated at construction.
    pub(crate) fn decision_unchecked(&self, p: &Vector, x: &Vector) -> f64 {
        match self.kind {
            LossKind::CrossEntropy => p.dot(x),
            LossKind::SquaredOneHot => {
                let d = x.len();
                p.rows(0, d).dot(x) - p.rows(d, d).dot(x)
            }
        }
    }

    /// Gradient of the decision value with respect to the parameters. It does
    /// not depend on the parameters because decisions are linear in them.
    pub fn decision_gradient(&self, x: &Vector) -> Vector {
        match self.kind {
            LossKind::CrossEntropy => x.clone(),
            LossKind::SquaredOneHot => {
                let d = x.len();
                let mut v = Vector::zeros(2 * d);
                v.rows_mut(0, d).copy_from(x);
                v.rows_mut(d, d).copy_from(&(-x));
                v
            }
        }
    }

    /// `out += alpha · ∇δ(x)` without allocating.
    pub(crate) fn axpy_decision_gradient(&self, alpha: f64, x: &Vector, out: &mut Vector) {
        match self.kind {
            LossKind::CrossEntropy => out.axpy(alpha, x, 1.0),
            LossKind::SquaredOneHot => {
                let d = x.len();
                out.rows_mut(0, d).axpy(alpha, x, 1.0);
                out.rows_mut(d, d).axpy(-alpha, x, 1.0);
            }
        }
    }

    /// +1 when the decision value is strictly positive, otherwise -1.
    pub fn predict(&self, p: &Params, x: &Vector) -> Result<i8> {
        Ok(if self.decision_value(p, x)? > 0.0 { 1 } else { -1 })
    }
}

fn one_hot(y: i8) -> (f64, f64) {
    if y == 1 {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    }
}

trait AddAssignView {
    fn add_assign(&mut self, other: &Matrix);
}

impl AddAssignView for nalgebra::DMatrixViewMut<'_, f64> {
    fn add_assign(&mut self, other: &Matrix) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
    }
}
