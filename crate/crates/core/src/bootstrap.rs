//! Online multiplier bootstrap: replicate chains share the data stream and
//! perturb each gradient step by an independent mean-one weight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::{phi_hat, quantile_sorted, Criterion, HeldoutCounts};
use crate::model::{LossSpec, Params, Sample};
use crate::optim::{normalize_checkpoints, OptimizerState, Problem, StepSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MultiplierDist {
    /// Uniform on `[1 − √3, 1 + √3]`.
    UniformSqrt3,
    /// Standard exponential.
    Exponential,
    /// Constant 1. Has variance 0; only useful for testing.
    Degenerate,
}

impl MultiplierDist {
    pub fn mean(self) -> f64 {
        1.0
    }

    pub fn variance(self) -> f64 {
        match self {
            MultiplierDist::UniformSqrt3 | MultiplierDist::Exponential => 1.0,
            MultiplierDist::Degenerate => 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        const R3: f64 = 1.732_050_807_568_877_2;
        match self {
            MultiplierDist::UniformSqrt3 => rng.random_range(1.0 - R3..1.0 + R3),
            MultiplierDist::Exponential => Exp1.sample(rng),
            MultiplierDist::Degenerate => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FairnessCI {
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    pub criterion: Criterion,
    pub k: u64,
}

/// Quantile interval `[q_{α/2}, q_{1−α/2}]` of replicate fairness values.
pub fn ci_from_values(values: &[f64], alpha: f64, criterion: Criterion, k: u64) -> Result<FairnessCI> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha", "must lie in (0, 1)"));
    }
    let mut v = values.to_vec();
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("replicate values".into()));
    }
    v.sort_by(f64::total_cmp);
    Ok(FairnessCI {
        lower: quantile_sorted(&v, alpha / 2.0)?,
        upper: quantile_sorted(&v, 1.0 - alpha / 2.0)?,
        alpha,
        criterion,
        k,
    })
}

/// Base chain plus `B` perturbed replicates advanced in lockstep.
#[derive(Debug, Clone)]
pub struct BootstrapEnsemble {
    pub problem: Problem,
    pub spec: LossSpec,
    pub sched: StepSchedule,
    pub dist: MultiplierDist,
    pub base: OptimizerState,
    pub replicates: Vec<OptimizerState>,
    rngs: Vec<ChaCha8Rng>,
    k: u64,
}

impl BootstrapEnsemble {
    /// Replicate `b` draws its multipliers from ChaCha stream `b + 1` of `seed`.
    pub fn new(
        problem: Problem,
        spec: LossSpec,
        sched: StepSchedule,
        dim: usize,
        b: usize,
        dist: MultiplierDist,
        seed: u64,
    ) -> Result<Self> {
        if b < 2 {
            return Err(Error::invalid("b", "need at least 2 replicates"));
        }
        let base = OptimizerState::init(&problem, dim);
        let rngs = (0..b)
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(i as u64 + 1);
                r
            })
            .collect();
        Ok(Self {
            replicates: vec![base.clone(); b],
            base,
            problem,
            spec,
            sched,
            dist,
            rngs,
            k: 0,
        })
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn len(&self) -> usize {
        self.replicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicates.is_empty()
    }

    /// Feeds one sample to the base chain and every replicate.
    pub fn step(&mut self, s: &Sample) -> Result<()> {
        let (problem, spec, sched, dist) = (&self.problem, &self.spec, &self.sched, self.dist);
        self.base.step(problem, spec, sched, s, 1.0)?;
        self.replicates
            .par_iter_mut()
            .zip(self.rngs.par_iter_mut())
            .enumerate()
            .with_min_len(8)
            .try_for_each(|(b, (st, rng))| {
                let v = dist.sample(rng);
                st.step(problem, spec, sched, s, v).map_err(|e| Error::Replicate {
                    replicate: b,
                    source: Box::new(e),
                })
            })?;
        self.k += 1;
        Ok(())
    }

    /// Averaged replicate parameters `θ̄_k^b`.
    pub fn replicate_parameter_samples(&self) -> Vec<Params> {
        self.replicates.iter().map(|r| r.theta_bar().clone()).collect()
    }

    pub fn base_phi(&self, heldout: &[Sample], criterion: Criterion) -> Result<f64> {
        phi_hat(criterion, self.base.theta_bar(), heldout, &self.spec)
    }

    pub fn replicate_phi(&self, heldout: &[Sample], criterion: Criterion) -> Result<Vec<f64>> {
        HeldoutCounts::from_samples(heldout).check(criterion)?;
        self.replicates
            .iter()
            .map(|r| phi_hat(criterion, r.theta_bar(), heldout, &self.spec))
            .collect()
    }

    pub fn bootstrap_ci(&self, heldout: &[Sample], criterion: Criterion, alpha: f64) -> Result<FairnessCI> {
        ci_from_values(&self.replicate_phi(heldout, criterion)?, alpha, criterion, self.k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointCI {
    pub k: u64,
    pub base_phi: f64,
    pub ci: FairnessCI,
    pub replicate_phi: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BootstrapRun {
    pub checkpoints: Vec<CheckpointCI>,
    pub ensemble: BootstrapEnsemble,
}

/// Drives an ensemble over `iters` samples, recording the CI at each checkpoint.
pub fn run_bootstrap<I>(
    stream: I,
    mut ensemble: BootstrapEnsemble,
    iters: u64,
    checkpoints: &[u64],
    heldout: &[Sample],
    alpha: f64,
) -> Result<BootstrapRun>
where
    I: IntoIterator<Item = Sample>,
{
    let criterion = ensemble.problem.criterion();
    HeldoutCounts::from_samples(heldout).check(criterion)?;
    let cks = normalize_checkpoints(checkpoints, iters)?;
    let mut out = Vec::with_capacity(cks.len());
    let mut next = cks.iter().peekable();
    let mut stream = stream.into_iter();
    for k in 1..=iters {
        let s = stream.next().ok_or(Error::StreamExhausted {
            consumed: k - 1,
            needed: iters,
        })?;
        ensemble.step(&s)?;
        if next.peek() == Some(&&k) {
            next.next();
            let replicate_phi = ensemble.replicate_phi(heldout, criterion)?;
            out.push(CheckpointCI {
                k,
                base_phi: ensemble.base_phi(heldout, criterion)?,
                ci: ci_from_values(&replicate_phi, alpha, criterion, k)?,
                replicate_phi,
            });
        }
    }
    Ok(BootstrapRun {
        checkpoints: out,
        ensemble,
    })
}
