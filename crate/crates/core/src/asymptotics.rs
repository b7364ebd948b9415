//! Limiting covariances of the averaged iterates and Gaussian sampling from
//! the limit law.

use nalgebra::SymmetricEigen;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::constraints::{DmPenalty, PenaltyMode, SlabConstraint};
use crate::error::{Error, Result};
use crate::fairness::{phi_hat, Criterion};
use crate::model::{LossSpec, Matrix, Params, Sample, Vector};
use crate::optim::Problem;

pub const DEFAULT_TOL: f64 = 1e-10;
const MAX_NEWTON: usize = 500;

fn mean_loss(spec: &LossSpec, theta: &Params, data: &[Sample]) -> Result<f64> {
    let mut acc = 0.0;
    for s in data {
        acc += spec.loss_value(theta, s)?;
    }
    Ok(acc / data.len() as f64)
}

fn mean_grad(spec: &LossSpec, theta: &Params, data: &[Sample]) -> Result<Vector> {
    let mut acc = Vector::zeros(theta.len());
    for s in data {
        acc += spec.loss_grad(theta, s)?;
    }
    Ok(acc / data.len() as f64)
}

fn mean_hessian(spec: &LossSpec, theta: &Params, data: &[Sample]) -> Result<Matrix> {
    let n = theta.len();
    let mut acc = Matrix::zeros(n, n);
    for s in data {
        acc += spec.loss_hessian(theta, s)?;
    }
    Ok(acc / data.len() as f64)
}

fn smooth_for_optimum(p: &DmPenalty) -> DmPenalty {
    match p.mode {
        PenaltyMode::HardMin => p.with_mode(PenaltyMode::smooth_default()),
        PenaltyMode::Smooth { .. } => p.clone(),
    }
}

fn objective(spec: &LossSpec, problem: &Problem, theta: &Params, data: &[Sample]) -> Result<f64> {
    let l = mean_loss(spec, theta, data)?;
    Ok(match problem {
        Problem::Di(_) => l,
        Problem::Dm(p) => l + p.r2 * p.value(theta, spec),
    })
}

fn objective_grad(spec: &LossSpec, problem: &Problem, theta: &Params, data: &[Sample]) -> Result<Vector> {
    let mut g = mean_grad(spec, theta, data)?;
    if let Problem::Dm(p) = problem {
        g.axpy(p.r2, &p.grad(theta, spec), 1.0);
    }
    Ok(g)
}

/// Empirical Hessian of the training objective at `theta`: the averaged loss
/// Hessian, plus `R₂∇²γ` for the penalized problem.
pub fn estimate_hessian(spec: &LossSpec, problem: &Problem, theta: &Params, samples: &[Sample]) -> Result<Matrix> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("hessian samples"));
    }
    let mut h = mean_hessian(spec, theta, samples)?;
    if let Problem::Dm(p) = problem {
        h += p.hessian(theta, spec).scale(p.r2);
    }
    Ok(symmetrize(h))
}

/// Covariance (denominator N) of the per-sample loss gradients at `theta`.
pub fn estimate_noise_cov(spec: &LossSpec, _problem: &Problem, theta: &Params, samples: &[Sample]) -> Result<Matrix> {
    if samples.len() < 2 {
        return Err(Error::invalid("samples", "need at least 2 samples"));
    }
    let grads = samples
        .iter()
        .map(|s| spec.loss_grad(theta, s))
        .collect::<Result<Vec<_>>>()?;
    let n = theta.len();
    let mean = grads.iter().fold(Vector::zeros(n), |a, g| a + g) / grads.len() as f64;
    let mut cov = Matrix::zeros(n, n);
    for g in &grads {
        let d = g - &mean;
        cov.ger(1.0, &d, &d, 1.0);
    }
    Ok(symmetrize(cov / grads.len() as f64))
}

fn symmetrize(m: Matrix) -> Matrix {
    (&m + m.transpose()) * 0.5
}

/// Newton direction for the quadratic model, restricted to the slab: the
/// plain Newton step when it stays feasible, otherwise the minimizer of the
/// model on the violated boundary hyperplane.
fn slab_newton_step(theta: &Params, g: &Vector, h: &Matrix, c: &SlabConstraint) -> Result<Vector> {
    let lu = h.clone().lu();
    let p = lu.solve(&(-g)).ok_or(Error::Singular)?;
    if c.is_vacuous() {
        return Ok(p);
    }
    let a = &c.xtilde;
    let target = a.dot(&(&theta.0 + &p));
    if target.abs() <= c.epsilon {
        return Ok(p);
    }
    let bound = target.signum() * c.epsilon;
    let hinv_a = lu.solve(a).ok_or(Error::Singular)?;
    let lambda = (target - bound) / a.dot(&hinv_a);
    Ok(p - hinv_a * lambda)
}

/// `−(H + μI)⁻¹ g` with the smallest shift `μ ≥ 0` (on a doubling grid)
/// that makes the matrix positive definite. The penalized objective is not
/// convex, so the plain Newton direction can point uphill.
fn descent_newton_step(g: &Vector, h: Matrix) -> Result<Vector> {
    let n = h.nrows();
    let scale = h.diagonal().amax().max(1e-12);
    let mut mu = 0.0;
    for _ in 0..80 {
        let shifted = &h + Matrix::identity(n, n) * mu;
        if let Some(ch) = shifted.cholesky() {
            return Ok(ch.solve(&(-g)));
        }
        mu = if mu == 0.0 { 1e-10 * scale } else { mu * 2.0 };
    }
    Err(Error::Singular)
}

/// Minimizer of the empirical objective on `reference_data`.
///
/// The slab problem uses a projected Newton method whose subproblem is solved
/// exactly; the penalized problem uses damped Newton on the smoothed penalty
/// (a hard-min penalty is replaced by its default smoothing). Iterates until
/// successive iterates are closer than `tol`.
pub fn find_optimum(spec: &LossSpec, problem: &Problem, reference_data: &[Sample], tol: f64) -> Result<Params> {
    if reference_data.is_empty() {
        return Err(Error::EmptyInput("reference data"));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::invalid("tol", "must be > 0"));
    }
    let problem = match problem {
        Problem::Dm(p) => Problem::Dm(smooth_for_optimum(p)),
        other => other.clone(),
    };
    let dim = spec.param_dim(reference_data[0].dim());
    let mut theta = Params::zeros(dim);
    let mut f = objective(spec, &problem, &theta, reference_data)?;
    let mut last = f64::INFINITY;
    for _ in 0..MAX_NEWTON {
        let g = objective_grad(spec, &problem, &theta, reference_data)?;
        let h = estimate_hessian(spec, &problem, &theta, reference_data)?;
        let dir = match &problem {
            Problem::Di(c) => slab_newton_step(&theta, &g, &h, c)?,
            Problem::Dm(_) => descent_newton_step(&g, h)?,
        };
        let slope = g.dot(&dir);
        let mut t = 1.0;
        let mut next;
        loop {
            next = Params(&theta.0 + dir.scale(t));
            let fnext = objective(spec, &problem, &next, reference_data)?;
            if fnext <= f + 1e-4 * t * slope {
                f = fnext;
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                // no decrease along the Newton direction: stationary up to rounding
                let residual = dir.norm();
                return if residual < tol.sqrt() {
                    Ok(theta)
                } else {
                    Err(Error::NonConvergence {
                        iterations: MAX_NEWTON,
                        residual,
                    })
                };
            }
        }
        if let Problem::Di(c) = &problem {
            // guards against rounding drift off the boundary
            next = c.project(&next);
        }
        last = (&next.0 - &theta.0).norm();
        theta = next;
        if last < tol {
            return Ok(theta);
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_NEWTON,
        residual: last,
    })
}

/// Default numerical-rank cutoff for [`pinv_sym`].
pub fn default_rel_tol(dim: usize) -> f64 {
    1e-10 * dim as f64
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix; eigenvalues with
/// `|λ| ≤ rel_tol·max|λ|` are treated as zero.
pub fn pinv_sym(m: &Matrix, rel_tol: f64) -> Matrix {
    let eig = SymmetricEigen::new(symmetrize(m.clone()));
    let cut = rel_tol * eig.eigenvalues.amax();
    let inv = eig
        .eigenvalues
        .map(|l| if l.abs() <= cut || l == 0.0 { 0.0 } else { 1.0 / l });
    let q = &eig.eigenvectors;
    symmetrize(q * Matrix::from_diagonal(&inv) * q.transpose())
}

fn tangent_projector(xtilde: &Vector) -> Matrix {
    SlabConstraint {
        xtilde: xtilde.clone(),
        epsilon: 0.0,
    }
    .tangent_projector()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaDi {
    /// `(P H P)† P Σ P (P H P)†`.
    pub canonical: Matrix,
    /// `P H† P Σ P H† P`.
    pub unprojected_noise_form: Matrix,
    /// Frobenius norm of the difference of the two forms.
    pub gap: f64,
    pub projector: Matrix,
}

/// Limiting covariance of the averaged dual-averaging iterate when the slab
/// is active with normal `xtilde`. A zero `xtilde` gives `H†ΣH†`.
pub fn sigma_di(hessian: &Matrix, noise_cov: &Matrix, xtilde: &Vector) -> SigmaDi {
    let n = hessian.nrows();
    let tol = default_rel_tol(n);
    let p = tangent_projector(xtilde);
    let ps = &p * noise_cov * &p;
    let php = pinv_sym(&(&p * hessian * &p), tol);
    let canonical = symmetrize(&php * &ps * &php);
    let hp = &p * pinv_sym(hessian, tol) * &p;
    let unprojected_noise_form = symmetrize(&hp * noise_cov * &hp);
    SigmaDi {
        gap: (&canonical - &unprojected_noise_form).norm(),
        canonical,
        unprojected_noise_form,
        projector: p,
    }
}

/// `H⁻¹(Σ + R₂²∇γ∇γᵀ)H⁻¹`, computed with linear solves.
pub fn sigma_dm(hessian: &Matrix, noise_cov: &Matrix, penalty_grad_at_star: &Vector, r2: f64) -> Result<Matrix> {
    let mut mid = noise_cov.clone();
    mid.ger(r2 * r2, penalty_grad_at_star, penalty_grad_at_star, 1.0);
    sandwich(hessian, &mid)
}

/// `H⁻¹ M H⁻¹`.
pub fn sandwich(hessian: &Matrix, mid: &Matrix) -> Result<Matrix> {
    let lu = hessian.clone().lu();
    if !lu.is_invertible() {
        return Err(Error::Singular);
    }
    let left = lu.solve(mid).ok_or(Error::Singular)?;
    let both = lu.solve(&left.transpose()).ok_or(Error::Singular)?;
    Ok(symmetrize(both))
}

/// Symmetric PSD square root; rejects matrices with eigenvalues below
/// `−1e−8·λ_max`.
pub fn psd_sqrt(m: &Matrix) -> Result<Matrix> {
    let eig = SymmetricEigen::new(symmetrize(m.clone()));
    let lmax = eig.eigenvalues.max().max(0.0);
    let lmin = eig.eigenvalues.min();
    if lmin < -1e-8 * lmax || (lmax == 0.0 && lmin < 0.0) {
        return Err(Error::NotPsd { min_eigenvalue: lmin });
    }
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    Ok(symmetrize(q * Matrix::from_diagonal(&root) * q.transpose()))
}

/// `m` draws from `N(θ*, Σ/k)`.
pub fn sample_asymptotic(theta_star: &Params, sigma_star: &Matrix, k: u64, m: usize, seed: u64) -> Result<Vec<Params>> {
    if k == 0 {
        return Err(Error::invalid("k", "must be >= 1"));
    }
    let n = theta_star.len();
    if sigma_star.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: sigma_star.nrows(),
        });
    }
    let a = psd_sqrt(&(sigma_star / k as f64))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..m)
        .map(|_| {
            let g = Vector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            Params(&theta_star.0 + &a * g)
        })
        .collect())
}

pub fn theoretical_phi_sample(draws: &[Params], dtilde: &[Sample], criterion: Criterion, spec: &LossSpec) -> Result<Vec<f64>> {
    draws.iter().map(|t| phi_hat(criterion, t, dtilde, spec)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceReport {
    pub criterion: Criterion,
    pub theta_star: Params,
    pub hessian: Matrix,
    pub noise_cov: Matrix,
    pub projector: Matrix,
    pub sigma_star: Matrix,
    /// Slab problems: whether the constraint binds at θ*.
    pub active: Option<bool>,
    /// Slab problems: `P H† P Σ P H† P` and its Frobenius distance to `sigma_star`.
    pub unprojected_noise_form: Option<Matrix>,
    pub form_gap: Option<f64>,
    /// Penalized problems: `∇γ(θ*)` and the plain sandwich `H⁻¹ΣH⁻¹`.
    pub penalty_grad: Option<Vector>,
    pub sandwich: Option<Matrix>,
}

/// Locates θ* on `reference` and assembles the limiting covariance, with
/// `H` and `Σ` estimated on the same data. A slab that does not bind at θ*
/// leaves the projector at the identity.
pub fn covariance_report(spec: &LossSpec, problem: &Problem, reference: &[Sample], tol: f64) -> Result<CovarianceReport> {
    let problem = match problem {
        Problem::Dm(p) => Problem::Dm(smooth_for_optimum(p)),
        other => other.clone(),
    };
    let theta_star = find_optimum(spec, &problem, reference, tol)?;
    let hessian = estimate_hessian(spec, &problem, &theta_star, reference)?;
    let noise_cov = estimate_noise_cov(spec, &problem, &theta_star, reference)?;
    let n = theta_star.len();
    match &problem {
        Problem::Di(c) => {
            let level = c.violation_level(&theta_star);
            let active = !c.is_vacuous() && level >= c.epsilon - 1e-9 * c.epsilon.max(1.0);
            let normal = if active {
                c.xtilde.clone()
            } else {
                Vector::zeros(n)
            };
            let s = sigma_di(&hessian, &noise_cov, &normal);
            Ok(CovarianceReport {
                criterion: Criterion::Di,
                theta_star,
                hessian,
                noise_cov,
                projector: s.projector,
                sigma_star: s.canonical,
                active: Some(active),
                unprojected_noise_form: Some(s.unprojected_noise_form),
                form_gap: Some(s.gap),
                penalty_grad: None,
                sandwich: None,
            })
        }
        Problem::Dm(p) => {
            let pg = p.grad(&theta_star, spec);
            let sigma_star = sigma_dm(&hessian, &noise_cov, &pg, p.r2)?;
            let plain = sandwich(&hessian, &noise_cov)?;
            Ok(CovarianceReport {
                criterion: Criterion::Dm,
                theta_star,
                hessian,
                noise_cov,
                projector: Matrix::identity(n, n),
                sigma_star,
                active: None,
                unprojected_noise_form: None,
                form_gap: None,
                penalty_grad: Some(pg),
                sandwich: Some(plain),
            })
        }
    }
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn eigenvalues(m: &Matrix) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(symmetrize(m.clone())).eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Serialize)]
struct ReportJson<'a> {
    criterion: Criterion,
    theta_star: &'a [f64],
    hessian: Vec<Vec<f64>>,
    hessian_eigenvalues: Vec<f64>,
    noise_cov: Vec<Vec<f64>>,
    projector: Vec<Vec<f64>>,
    sigma_star: Vec<Vec<f64>>,
    sigma_star_eigenvalues: Vec<f64>,
    active: Option<bool>,
    unprojected_noise_form: Option<Vec<Vec<f64>>>,
    form_gap: Option<f64>,
    penalty_grad: Option<&'a [f64]>,
    sandwich: Option<Vec<Vec<f64>>>,
}

impl CovarianceReport {
    /// JSON value with matrices as row arrays and eigenvalues in ascending order.
    pub fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(ReportJson {
            criterion: self.criterion,
            theta_star: self.theta_star.as_slice(),
            hessian: rows(&self.hessian),
            hessian_eigenvalues: eigenvalues(&self.hessian),
            noise_cov: rows(&self.noise_cov),
            projector: rows(&self.projector),
            sigma_star: rows(&self.sigma_star),
            sigma_star_eigenvalues: eigenvalues(&self.sigma_star),
            active: self.active,
            unprojected_noise_form: self.unprojected_noise_form.as_ref().map(rows),
            form_gap: self.form_gap,
            penalty_grad: self.penalty_grad.as_ref().map(|v| v.as_slice()),
            sandwich: self.sandwich.as_ref().map(rows),
        })?)
    }
}
