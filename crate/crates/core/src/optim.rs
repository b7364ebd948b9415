//! Online training: weighted stochastic dual averaging on the slab and SGD
//! on the penalized objective, both with running iterate averages.

use serde::{Deserialize, Serialize};

use crate::constraints::{DmPenalty, SlabConstraint};
use crate::error::{Error, Result};
use crate::fairness::Criterion;
use crate::model::{LossSpec, Params, Sample, Vector};

/// Power-law step sizes `η_k = c·(k + k0)^{−a}`. With the default `k0 = 0`
/// this is the plain `c·k^{−a}` schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub c: f64,
    pub a: f64,
    #[serde(default)]
    pub k0: f64,
}

impl StepSchedule {
    pub fn new(c: f64, a: f64) -> Result<Self> {
        Self::with_offset(c, a, 0.0)
    }

    pub fn with_offset(c: f64, a: f64, k0: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::invalid("step-c", "must be finite and > 0"));
        }
        if !(a > 0.5 && a < 1.0) {
            return Err(Error::invalid("step-a", "must lie in (0.5, 1)"));
        }
        if !(k0.is_finite() && k0 >= 0.0) {
            return Err(Error::invalid("step-k0", "must be finite and >= 0"));
        }
        Ok(Self { c, a, k0 })
    }

    pub fn eta(&self, k: u64) -> f64 {
        self.c * (k as f64 + self.k0).powf(-self.a)
    }
}

fn update_average(bar: &mut Vector, theta: &Vector, k: u64) {
    let inv = 1.0 / k as f64;
    bar.zip_apply(theta, |b, t| *b += (t - *b) * inv);
}

fn check_finite(g: &Vector, k: u64) -> Result<()> {
    if g.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteGradient { iteration: k })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdaState {
    pub z: Vector,
    pub theta: Params,
    pub theta_bar: Params,
    pub k: u64,
}

impl SdaState {
    pub fn new(dim: usize) -> Self {
        Self::with_dual(Vector::zeros(dim))
    }

    pub fn with_dual(z0: Vector) -> Self {
        let n = z0.len();
        Self {
            z: z0,
            theta: Params::zeros(n),
            theta_bar: Params::zeros(n),
            k: 0,
        }
    }

    /// `θ_k = Π(−z_{k−1})`, then `z_k = z_{k−1} + η_k·v·∇L(θ_k, W_k)`.
    pub fn step(
        &mut self,
        c: &SlabConstraint,
        spec: &LossSpec,
        sched: &StepSchedule,
        s: &Sample,
        multiplier: f64,
    ) -> Result<()> {
        let k = self.k + 1;
        self.theta = c.project(&Params(-&self.z));
        let g = spec.loss_grad(&self.theta, s)?;
        check_finite(&g, k)?;
        self.z.axpy(sched.eta(k) * multiplier, &g, 1.0);
        update_average(&mut self.theta_bar, &self.theta, k);
        self.k = k;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub theta: Params,
    pub theta_bar: Params,
    pub k: u64,
}

impl SgdState {
    pub fn new(theta0: Params) -> Self {
        let n = theta0.len();
        Self {
            theta: theta0,
            theta_bar: Params::zeros(n),
            k: 0,
        }
    }

    /// `θ_k = θ_{k−1} − η_k·v·(∇L(θ_{k−1}, W_k) + R₂∇γ(θ_{k−1}))`.
    pub fn step(
        &mut self,
        pen: &DmPenalty,
        spec: &LossSpec,
        sched: &StepSchedule,
        s: &Sample,
        multiplier: f64,
    ) -> Result<()> {
        let k = self.k + 1;
        let mut g = spec.loss_grad(&self.theta, s)?;
        if pen.r2 != 0.0 {
            g.axpy(pen.r2, &pen.grad(&self.theta, spec), 1.0);
        }
        check_finite(&g, k)?;
        self.theta.axpy(-sched.eta(k) * multiplier, &g, 1.0);
        update_average(&mut self.theta_bar, &self.theta, k);
        self.k = k;
        Ok(())
    }
}

/// The fairness-aware training objective: a slab-constrained problem solved
/// by dual averaging, or a penalized one solved by SGD.
#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    Di(SlabConstraint),
    Dm(DmPenalty),
}

impl Problem {
    pub fn criterion(&self) -> Criterion {
        match self {
            Problem::Di(_) => Criterion::Di,
            Problem::Dm(_) => Criterion::Dm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Sda(SdaState),
    Sgd(SgdState),
}

impl OptimizerState {
    /// Zero-initialized state for `problem` in a `dim`-dimensional parameter space.
    pub fn init(problem: &Problem, dim: usize) -> Self {
        match problem {
            Problem::Di(_) => OptimizerState::Sda(SdaState::new(dim)),
            Problem::Dm(_) => OptimizerState::Sgd(SgdState::new(Params::zeros(dim))),
        }
    }

    pub fn step(
        &mut self,
        problem: &Problem,
        spec: &LossSpec,
        sched: &StepSchedule,
        s: &Sample,
        multiplier: f64,
    ) -> Result<()> {
        match (self, problem) {
            (OptimizerState::Sda(st), Problem::Di(c)) => st.step(c, spec, sched, s, multiplier),
            (OptimizerState::Sgd(st), Problem::Dm(p)) => st.step(p, spec, sched, s, multiplier),
            _ => Err(Error::invalid("problem", "does not match the optimizer state")),
        }
    }

    pub fn theta(&self) -> &Params {
        match self {
            OptimizerState::Sda(s) => &s.theta,
            OptimizerState::Sgd(s) => &s.theta,
        }
    }

    pub fn theta_bar(&self) -> &Params {
        match self {
            OptimizerState::Sda(s) => &s.theta_bar,
            OptimizerState::Sgd(s) => &s.theta_bar,
        }
    }

    pub fn k(&self) -> u64 {
        match self {
            OptimizerState::Sda(s) => s.k,
            OptimizerState::Sgd(s) => s.k,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub spec: LossSpec,
    pub problem: Problem,
    pub sched: StepSchedule,
    pub iters: u64,
    pub checkpoints: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub k: u64,
    pub theta: Params,
    pub theta_bar: Params,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub final_state: OptimizerState,
}

/// Sorted, deduplicated checkpoints, all within `[1, iters]`.
pub fn normalize_checkpoints(checkpoints: &[u64], iters: u64) -> Result<Vec<u64>> {
    if iters == 0 {
        return Err(Error::invalid("iters", "must be >= 1"));
    }
    if let Some(&bad) = checkpoints.iter().find(|&&k| k == 0 || k > iters) {
        return Err(Error::invalid(
            "checkpoints",
            format!("{bad} is outside [1, {iters}]"),
        ));
    }
    let mut v = checkpoints.to_vec();
    v.sort_unstable();
    v.dedup();
    Ok(v)
}

/// Runs `cfg.iters` steps over `stream` from a zero initialization and
/// records `(k, θ_k, θ̄_k)` at each checkpoint.
pub fn run_training<I>(stream: I, dim: usize, cfg: &TrainingConfig) -> Result<Trajectory>
where
    I: IntoIterator<Item = Sample>,
{
    let checkpoints = normalize_checkpoints(&cfg.checkpoints, cfg.iters)?;
    let mut state = OptimizerState::init(&cfg.problem, dim);
    let mut snapshots = Vec::with_capacity(checkpoints.len());
    let mut next = checkpoints.iter().peekable();
    let mut stream = stream.into_iter();
    for k in 1..=cfg.iters {
        let s = stream.next().ok_or(Error::StreamExhausted {
            consumed: k - 1,
            needed: cfg.iters,
        })?;
        state.step(&cfg.problem, &cfg.spec, &cfg.sched, &s, 1.0)?;
        if next.peek() == Some(&&k) {
            next.next();
            snapshots.push(Snapshot {
                k,
                theta: state.theta().clone(),
                theta_bar: state.theta_bar().clone(),
            });
        }
    }
    Ok(Trajectory {
        snapshots,
        final_state: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::PenaltyMode;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ce() -> LossSpec {
        LossSpec::cross_entropy(1e-4).unwrap()
    }

    // Independent scalar loop for one-dimensional CE with a fixed sample.
    fn reference_sda(steps: usize, sched: &StepSchedule, x: f64, y: f64, kappa: f64) -> Vec<f64> {
        let sig = |t: f64| 1.0 / (1.0 + (-t).exp());
        let (mut z, mut out) = (0.0f64, vec![]);
        for k in 1..=steps {
            let th = -z;
            out.push(th);
            let g = -y * sig(-y * th * x) * x + kappa * th;
            z += sched.c * (k as f64).powf(-sched.a) * g;
        }
        out
    }

    #[test]
    fn schedule() {
        let s = StepSchedule::new(1.0, 0.501).unwrap();
        assert_eq!(s.eta(1), 1.0);
        assert!((s.eta(4) - 4f64.powf(-0.501)).abs() < 1e-15);
        let o = StepSchedule::with_offset(0.5, 0.6, 9.0).unwrap();
        assert!((o.eta(1) - 0.5 * 10f64.powf(-0.6)).abs() < 1e-15);
        assert!(StepSchedule::new(1.0, 0.5).is_err());
        assert!(StepSchedule::new(1.0, 1.0).is_err());
        assert!(StepSchedule::new(0.0, 0.7).is_err());
        assert!(StepSchedule::with_offset(1.0, 0.7, -1.0).is_err());
    }

    #[test]
    fn sda_first_step() {
        let spec = ce();
        let sched = StepSchedule::new(0.3, 0.6).unwrap();
        let s = Sample::from_slice(&[1.0, -2.0], 0, 1).unwrap();
        let mut st = SdaState::new(2);
        st.step(&SlabConstraint::vacuous(2), &spec, &sched, &s, 1.0).unwrap();
        assert_eq!(st.theta.as_slice(), &[0.0, 0.0]);
        let g = spec.loss_grad(&Params::zeros(2), &s).unwrap();
        assert_eq!(st.z, g.scale(0.3));
        assert_eq!(st.k, 1);
        assert_eq!(st.theta_bar, st.theta);
    }

    #[test]
    fn sda_matches_scalar_reference() {
        // kappa = 1 with a one-dimensional quadratic-like CE problem
        let spec = LossSpec::cross_entropy(1.0).unwrap();
        let sched = StepSchedule::new(1.0, 0.501).unwrap();
        let s = Sample::from_slice(&[0.7], 1, -1).unwrap();
        let reference = reference_sda(3, &sched, 0.7, -1.0, 1.0);
        let mut st = SdaState::new(1);
        for r in reference {
            st.step(&SlabConstraint::vacuous(1), &spec, &sched, &s, 1.0).unwrap();
            assert!((st.theta[0] - r).abs() <= 1e-12);
        }
    }

    // Squared loss with d = 1 is quadratic in each coordinate.
    #[test]
    fn sgd_matches_scalar_reference_on_quadratic() {
        let spec = LossSpec::squared_one_hot(0.0).unwrap();
        let sched = StepSchedule::new(1.0, 0.501).unwrap();
        let s = Sample::from_slice(&[0.5], 0, 1).unwrap();
        let pen = DmPenalty::new(0.0, vec![(Vector::from_column_slice(&[1.0]), 0)], 0.5, PenaltyMode::HardMin).unwrap();
        let mut st = SgdState::new(Params::zeros(2));
        let (mut a, mut b) = (0.0f64, 0.0f64);
        for k in 1..=3u64 {
            let eta = (k as f64).powf(-0.501);
            let ga = -2.0 * (1.0 - 0.5 * a) * 0.5;
            let gb = -2.0 * (0.0 - 0.5 * b) * 0.5;
            a -= eta * ga;
            b -= eta * gb;
            st.step(&pen, &spec, &sched, &s, 1.0).unwrap();
            assert!((st.theta[0] - a).abs() <= 1e-12);
            assert!((st.theta[1] - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn sda_stationary_without_gradient() {
        // squared loss gradient vanishes when Θx interpolates the one-hot label
        let spec = LossSpec::squared_one_hot(0.0).unwrap();
        let sched = StepSchedule::new(1.0, 0.7).unwrap();
        let s = Sample::from_slice(&[1.0], 0, -1).unwrap();
        let mut st = SdaState::with_dual(Vector::from_column_slice(&[0.0, -1.0]));
        for _ in 0..5 {
            st.step(&SlabConstraint::vacuous(2), &spec, &sched, &s, 1.0).unwrap();
            assert_eq!(st.theta.as_slice(), &[0.0, 1.0]);
        }
    }

    #[test]
    fn sgd_zero_multiplier_and_stationary_point() {
        let spec = ce();
        let sched = StepSchedule::new(1.0, 0.7).unwrap();
        let s = Sample::from_slice(&[1.0, 1.0], 0, 1).unwrap();
        let pen = DmPenalty::new(0.0, vec![(Vector::from_column_slice(&[1.0, 0.0]), 0)], 0.5, PenaltyMode::HardMin).unwrap();
        let mut st = SgdState::new(Params::from_slice(&[0.3, 0.1]));
        st.step(&pen, &spec, &sched, &s, 0.0).unwrap();
        assert_eq!(st.theta.as_slice(), &[0.3, 0.1]);
        assert_eq!(st.k, 1);
        assert_eq!(st.theta_bar, st.theta);

        let sq = LossSpec::squared_one_hot(0.0).unwrap();
        let sp = Sample::from_slice(&[1.0], 0, 1).unwrap();
        let pen1 = DmPenalty::new(0.0, vec![(Vector::from_column_slice(&[1.0]), 0)], 0.5, PenaltyMode::HardMin).unwrap();
        let mut st = SgdState::new(Params::from_slice(&[1.0, 0.0]));
        for _ in 0..4 {
            st.step(&pen1, &sq, &sched, &sp, 1.0).unwrap();
        }
        assert_eq!(st.theta.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let pen = DmPenalty::new(1.0, vec![(Vector::from_column_slice(&[1.0]), 0)], 0.5, PenaltyMode::HardMin).unwrap();
        let mut st = OptimizerState::init(&Problem::Di(SlabConstraint::vacuous(1)), 1);
        let s = Sample::from_slice(&[1.0], 0, 1).unwrap();
        let sched = StepSchedule::new(1.0, 0.7).unwrap();
        assert!(st.step(&Problem::Dm(pen), &ce(), &sched, &s, 1.0).is_err());
    }

    #[test]
    fn non_finite_gradient_reports_iteration() {
        let spec = LossSpec::squared_one_hot(0.0).unwrap();
        let sched = StepSchedule::new(1.0, 0.7).unwrap();
        let pen = DmPenalty::new(0.0, vec![(Vector::from_column_slice(&[1.0]), 0)], 0.5, PenaltyMode::HardMin).unwrap();
        let mut st = SgdState::new(Params::from_slice(&[1e10, 0.0]));
        let huge = Sample::from_slice(&[1e300], 0, 1).unwrap();
        let err = st.step(&pen, &spec, &sched, &huge, 1.0);
        assert!(matches!(err, Err(Error::NonFiniteGradient { iteration: 1 })));
    }

    fn random_stream(seed: u64, n: usize) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let y: i8 = if rng.random_bool(0.5) { 1 } else { -1 };
                let m = f64::from(y);
                Sample::from_slice(&[m + rng.random_range(-1.0..1.0), m * 0.5 + rng.random_range(-1.0..1.0), 1.0], u8::from(rng.random_bool(0.5)), y)
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn run_training_checkpoints_and_determinism() {
        let cfg = TrainingConfig {
            spec: ce(),
            problem: Problem::Di(SlabConstraint {
                xtilde: Vector::from_column_slice(&[0.3, -0.1, 0.0]),
                epsilon: 0.01,
            }),
            sched: StepSchedule::new(1.0, 0.501).unwrap(),
            iters: 200,
            checkpoints: vec![200, 10, 10, 50],
        };
        let a = run_training(random_stream(1, 200), 3, &cfg).unwrap();
        let b = run_training(random_stream(1, 200), 3, &cfg).unwrap();
        assert_eq!(a, b);
        let ks: Vec<u64> = a.snapshots.iter().map(|s| s.k).collect();
        assert_eq!(ks, vec![10, 50, 200]);
        assert_eq!(&a.snapshots[2].theta_bar, a.final_state.theta_bar());

        let one = TrainingConfig { iters: 1, checkpoints: vec![1], ..cfg.clone() };
        let t = run_training(random_stream(1, 1), 3, &one).unwrap();
        let mut manual = OptimizerState::init(&cfg.problem, 3);
        manual.step(&cfg.problem, &cfg.spec, &cfg.sched, &random_stream(1, 1)[0], 1.0).unwrap();
        assert_eq!(t.final_state, manual);
        assert_eq!(t.snapshots.len(), 1);

        assert!(matches!(
            run_training(random_stream(1, 20), 3, &cfg),
            Err(Error::StreamExhausted { consumed: 20, needed: 200 })
        ));
        let bad = TrainingConfig { checkpoints: vec![201], ..cfg };
        assert!(run_training(random_stream(1, 200), 3, &bad).is_err());
    }

    proptest! {
        #[test]
        fn sda_feasibility_and_averaging(seed in 0u64..500, eps in 0.0..0.5f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = SlabConstraint {
                xtilde: Vector::from_column_slice(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0]),
                epsilon: eps,
            };
            let sched = StepSchedule::new(rng.random_range(0.1..3.0), 0.6).unwrap();
            let mut st = SdaState::new(3);
            let mut prev_bar = st.theta_bar.clone();
            for s in random_stream(seed, 60) {
                let mult = rng.random_range(1.0 - 3f64.sqrt()..1.0 + 3f64.sqrt());
                st.step(&c, &ce(), &sched, &s, mult).unwrap();
                prop_assert!(c.violation_level(&st.theta) <= eps + 1e-12 * eps.max(1.0));
                let k = st.k as f64;
                let recon = st.theta_bar.0.scale(k) - prev_bar.0.scale(k - 1.0);
                prop_assert!((&recon - &st.theta.0).norm() <= 1e-10 * st.theta.norm().max(1.0));
                prev_bar = st.theta_bar.clone();
            }
        }

        #[test]
        fn sgd_averaging_identity(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let stream = random_stream(seed, 40);
            let pen = DmPenalty::from_dprime(&random_stream(seed + 1, 30), 5.0, PenaltyMode::smooth_default()).unwrap();
            let sched = StepSchedule::new(0.2, 0.7).unwrap();
            let mut st = SgdState::new(Params::zeros(3));
            let mut sum = Vector::zeros(3);
            for s in &stream {
                st.step(&pen, &ce(), &sched, s, rng.random_range(0.0..2.0)).unwrap();
                sum += &st.theta.0;
                let mean = &sum / st.k as f64;
                prop_assert!((&mean - &st.theta_bar.0).norm() <= 1e-10 * mean.norm().max(1.0));
            }
        }
    }
}
