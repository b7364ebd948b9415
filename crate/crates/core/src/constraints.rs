//! The disparate-impact slab constraint and the disparate-mistreatment
//! penalty, both built from the fixed constraint dataset.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sigmoid, softplus, LossSpec, Matrix, Params, Sample, Vector};

/// Feasible set `{θ : |x̃ᵀθ| ≤ ε}`. An infinite `epsilon` or a zero `xtilde`
/// makes the set all of parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct SlabConstraint {
    pub xtilde: Vector,
    pub epsilon: f64,
}

fn sensitive_mean(dprime: &[Sample]) -> f64 {
    dprime.iter().map(|s| f64::from(s.z)).sum::<f64>() / dprime.len() as f64
}

/// Builds the slab from the constraint dataset: `x̃ = n⁻¹ Σ (z_i − z̄) ∇δ(x_i)`.
pub fn build_slab(dprime: &[Sample], epsilon: f64, spec: &LossSpec) -> Result<SlabConstraint> {
    if dprime.is_empty() {
        return Err(Error::EmptyInput("constraint dataset"));
    }
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::invalid("epsilon", "must be >= 0"));
    }
    let d = dprime[0].dim();
    if let Some(bad) = dprime.iter().find(|s| s.dim() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.dim(),
        });
    }
    let zbar = sensitive_mean(dprime);
    let mut acc = Vector::zeros(spec.param_dim(d));
    for s in dprime {
        spec.axpy_decision_gradient(f64::from(s.z) - zbar, &s.x, &mut acc);
    }
    acc /= dprime.len() as f64;
    Ok(SlabConstraint {
        xtilde: acc,
        epsilon,
    })
}

impl SlabConstraint {
    pub fn vacuous(dim: usize) -> Self {
        Self {
            xtilde: Vector::zeros(dim),
            epsilon: f64::INFINITY,
        }
    }

    pub fn dim(&self) -> usize {
        self.xtilde.len()
    }

    pub fn is_vacuous(&self) -> bool {
        self.epsilon.is_infinite() || self.xtilde.norm_squared() == 0.0
    }

    /// Euclidean projection onto the slab. Points on the boundary, or within
    /// `1e−13·max(1, ε)` outside it, are left untouched; this makes the map
    /// exactly idempotent under rounding.
    pub fn project(&self, theta: &Params) -> Params {
        let n2 = self.xtilde.norm_squared();
        if n2 == 0.0 || self.epsilon.is_infinite() {
            return theta.clone();
        }
        let v = self.xtilde.dot(theta);
        let band = self.epsilon + 1e-13 * self.epsilon.max(1.0);
        let shift = if v > band {
            v - self.epsilon
        } else if v < -band {
            v + self.epsilon
        } else {
            return theta.clone();
        };
        let mut out = theta.clone();
        out.axpy(-shift / n2, &self.xtilde, 1.0);
        out
    }

    /// `|x̃ᵀθ|`.
    pub fn violation_level(&self, theta: &Vector) -> f64 {
        self.xtilde.dot(theta).abs()
    }

    /// Orthogonal projector onto the null space of `x̃ᵀ` (identity when `x̃ = 0`).
    pub fn tangent_projector(&self) -> Matrix {
        let n = self.dim();
        let n2 = self.xtilde.norm_squared();
        let mut p = Matrix::identity(n, n);
        if n2 > 0.0 {
            p -= (&self.xtilde * self.xtilde.transpose()) / n2;
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PenaltyMode {
    /// `min(0, u)` with zero derivative at the kink.
    HardMin,
    /// `−ln(1 + e^{−τu}) / τ`.
    Smooth { tau: f64 },
}

impl PenaltyMode {
    pub const DEFAULT_TAU: f64 = 50.0;

    pub fn smooth_default() -> Self {
        PenaltyMode::Smooth {
            tau: Self::DEFAULT_TAU,
        }
    }

    fn value(self, u: f64) -> f64 {
        match self {
            PenaltyMode::HardMin => u.min(0.0),
            PenaltyMode::Smooth { tau } => -softplus(-tau * u) / tau,
        }
    }

    fn first(self, u: f64) -> f64 {
        match self {
            PenaltyMode::HardMin => {
                if u < 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            PenaltyMode::Smooth { tau } => sigmoid(-tau * u),
        }
    }

    fn second(self, u: f64) -> f64 {
        match self {
            PenaltyMode::HardMin => 0.0,
            PenaltyMode::Smooth { tau } => -tau * sigmoid(-tau * u) * sigmoid(tau * u),
        }
    }
}

/// Squared FPR-covariance penalty `R₂·g(θ)²` with
/// `g(θ) = n₋⁻¹ Σ_{y_i=−1} (z_i − z̄) m(y_i δ_θ(x_i))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DmPenalty {
    pub r2: f64,
    pub negatives: Vec<(Vector, u8)>,
    pub zbar: f64,
    pub mode: PenaltyMode,
}

impl DmPenalty {
    /// Uses the negatives of `dprime`; `z̄` is the mean over all of `dprime`.
    pub fn from_dprime(dprime: &[Sample], r2: f64, mode: PenaltyMode) -> Result<Self> {
        if dprime.is_empty() {
            return Err(Error::EmptyInput("constraint dataset"));
        }
        let negatives: Vec<(Vector, u8)> = dprime
            .iter()
            .filter(|s| s.y == -1)
            .map(|s| (s.x.clone(), s.z))
            .collect();
        Self::new(r2, negatives, sensitive_mean(dprime), mode)
    }

    pub fn new(r2: f64, negatives: Vec<(Vector, u8)>, zbar: f64, mode: PenaltyMode) -> Result<Self> {
        if !(r2.is_finite() && r2 >= 0.0) {
            return Err(Error::invalid("r2", "must be finite and >= 0"));
        }
        if negatives.is_empty() {
            return Err(Error::EmptyInput("negative samples in constraint dataset"));
        }
        if !(0.0..=1.0).contains(&zbar) {
            return Err(Error::invalid("zbar", "must lie in [0, 1]"));
        }
        if let PenaltyMode::Smooth { tau } = mode {
            if !(tau.is_finite() && tau > 0.0) {
                return Err(Error::invalid("tau", "must be finite and > 0"));
            }
        }
        Ok(Self {
            r2,
            negatives,
            zbar,
            mode,
        })
    }

    pub fn with_mode(&self, mode: PenaltyMode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    fn weight(&self, z: u8) -> f64 {
        (f64::from(z) - self.zbar) / self.negatives.len() as f64
    }

    /// `g(θ)` and `∇g(θ)`.
    pub fn inner(&self, theta: &Vector, spec: &LossSpec) -> (f64, Vector) {
        let mut g = 0.0;
        let mut grad = Vector::zeros(theta.len());
        for (x, z) in &self.negatives {
            let w = self.weight(*z);
            // y_i = −1 for every stored sample.
            let u = -spec.decision_unchecked(theta, x);
            g += w * self.mode.value(u);
            let d = self.mode.first(u);
            if d != 0.0 {
                spec.axpy_decision_gradient(-w * d, x, &mut grad);
            }
        }
        (g, grad)
    }

    /// `γ(θ) = g(θ)²` (without the `R₂` factor).
    pub fn value(&self, theta: &Params, spec: &LossSpec) -> f64 {
        let (g, _) = self.inner(theta, spec);
        g * g
    }

    /// `∇γ(θ) = 2 g ∇g` (without the `R₂` factor).
    pub fn grad(&self, theta: &Params, spec: &LossSpec) -> Vector {
        let (g, dg) = self.inner(theta, spec);
        dg.scale(2.0 * g)
    }

    /// `∇²γ(θ) = 2(∇g∇gᵀ + g∇²g)`. Under the hard minimum the second
    /// derivative of `min(0,u)` is taken as zero, leaving the outer product.
    pub fn hessian(&self, theta: &Params, spec: &LossSpec) -> Matrix {
        let (g, dg) = self.inner(theta, spec);
        let n = theta.len();
        let mut d2g = Matrix::zeros(n, n);
        if !matches!(self.mode, PenaltyMode::HardMin) {
            for (x, z) in &self.negatives {
                let u = -spec.decision_unchecked(theta, x);
                let c = self.weight(*z) * self.mode.second(u);
                let v = spec.decision_gradient(x);
                d2g += (&v * v.transpose()).scale(c);
            }
        }
        ((&dg * dg.transpose()) + d2g.scale(g)).scale(2.0)
    }
}
