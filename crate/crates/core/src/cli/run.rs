//! Pipeline shared by the subcommands: data, split, problem construction,
//! repetitions, the designated bootstrap run and the asymptotic oracle.

use rayon::prelude::*;

use super::config::{DataSource, ExperimentConfig};
use crate::asymptotics::{covariance_report, sample_asymptotic, theoretical_phi_sample, CovarianceReport};
use crate::bootstrap::{run_bootstrap, BootstrapEnsemble, BootstrapRun};
use crate::constraints::{build_slab, DmPenalty};
use crate::data::{gen_synthetic_di, gen_synthetic_dm, load_csv, mix_seed, split, CsvSchema, Dataset, SplitConfig, StreamSource};
use crate::error::{Error, Result};
use crate::fairness::{ks_distance, mis, phi_hat, quantile, w2_1d, Criterion, HeldoutCounts};
use crate::model::{LossSpec, Params, Sample};
use crate::optim::{run_training, Problem, Snapshot, StepSchedule, TrainingConfig};

/// Seed-derivation slots under the master seed.
pub mod slot {
    pub const DATA: u64 = 0;
    pub const SPLIT: u64 = 1;
    pub const ASYMPTOTIC: u64 = 2;
    pub const STREAM: u64 = 3;
    pub const MULTIPLIER: u64 = 4;
}

pub fn stream_seed(master: u64, rep: usize) -> u64 {
    mix_seed(mix_seed(master, slot::STREAM), rep as u64)
}

pub fn multiplier_seed(master: u64, rep: usize) -> u64 {
    mix_seed(mix_seed(master, slot::MULTIPLIER), rep as u64)
}

pub fn asymptotic_seed(master: u64, k: u64) -> u64 {
    mix_seed(mix_seed(master, slot::ASYMPTOTIC), k)
}

/// Loads or generates the full dataset named by the config.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let seed = mix_seed(cfg.seed, slot::DATA);
    let ds = match &cfg.data {
        DataSource::SyntheticDi => gen_synthetic_di(cfg.n_data, seed)?,
        DataSource::SyntheticDm { weights } => gen_synthetic_dm(cfg.n_data, seed, *weights)?,
        DataSource::Csv { path, schema } => {
            let schema = match schema {
                Some(p) => CsvSchema::parse(&std::fs::read_to_string(p)?)?,
                None => CsvSchema::canonical(),
            };
            return load_csv(path, &schema);
        }
    };
    Ok(if cfg.intercept { ds.with_intercept() } else { ds })
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub spec: LossSpec,
    pub sched: StepSchedule,
    pub problem: Problem,
    pub dim: usize,
    pub feature_names: Vec<String>,
    pub dprime: Vec<Sample>,
    pub dtilde: Vec<Sample>,
    /// Training pool; also serves as the reference data for θ*.
    pub stream: StreamSource,
    pub warnings: Vec<String>,
}

pub fn build_problem(cfg: &ExperimentConfig, dprime: &[Sample], spec: &LossSpec) -> Result<Problem> {
    match cfg.mode {
        Criterion::Di => {
            let eps = cfg.epsilon.ok_or_else(|| Error::invalid("epsilon", "is required in di mode"))?;
            Ok(Problem::Di(build_slab(dprime, eps, spec)?))
        }
        Criterion::Dm => {
            let r2 = cfg.r2.ok_or_else(|| Error::invalid("r2", "is required in dm mode"))?;
            Ok(Problem::Dm(DmPenalty::from_dprime(dprime, r2, cfg.penalty)?))
        }
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    prepare_from(cfg, &load_dataset(cfg)?)
}

pub fn prepare_from(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Prepared> {
    let spec = cfg.spec();
    let s = split(
        ds,
        &SplitConfig {
            n_constraint: cfg.n_constraint,
            n_heldout: cfg.n_heldout,
            stream_length: cfg.iters,
            seed: mix_seed(cfg.seed, slot::SPLIT),
        },
    )?;
    HeldoutCounts::from_samples(&s.dtilde).check(cfg.mode)?;
    let problem = build_problem(cfg, &s.dprime, &spec)?;
    Ok(Prepared {
        spec,
        sched: cfg.schedule(),
        problem,
        dim: spec.param_dim(ds.dim()),
        feature_names: ds.feature_names.clone(),
        dprime: s.dprime,
        dtilde: s.dtilde,
        stream: s.stream,
        warnings: ds.warnings(),
    })
}

impl Prepared {
    pub fn rep_stream(&self, cfg: &ExperimentConfig, rep: usize) -> StreamSource {
        self.stream.reseeded(cfg.iters, stream_seed(cfg.seed, rep))
    }

    pub fn training_config(&self, cfg: &ExperimentConfig) -> TrainingConfig {
        TrainingConfig {
            spec: self.spec,
            problem: self.problem.clone(),
            sched: self.sched,
            iters: cfg.iters,
            checkpoints: cfg.checkpoints.clone(),
        }
    }

    pub fn phi(&self, cfg: &ExperimentConfig, theta: &Params) -> Result<f64> {
        phi_hat(cfg.mode, theta, &self.dtilde, &self.spec)
    }

    /// θ* and the limiting covariance, estimated on the training pool.
    pub fn asymptotics(&self, cfg: &ExperimentConfig) -> Result<CovarianceReport> {
        covariance_report(&self.spec, &self.problem, self.stream.pool(), cfg.tol)
    }
}

#[derive(Debug, Clone)]
pub struct RepetitionRun {
    pub rep: usize,
    pub seed: u64,
    pub snapshots: Vec<Snapshot>,
    /// φ̂ on D̃ at θ̄_k, one per checkpoint.
    pub phi: Vec<f64>,
}

pub fn run_repetition(cfg: &ExperimentConfig, prep: &Prepared, rep: usize) -> Result<RepetitionRun> {
    let seed = stream_seed(cfg.seed, rep);
    let inner = || -> Result<RepetitionRun> {
        let traj = run_training(prep.rep_stream(cfg, rep), prep.dim, &prep.training_config(cfg))?;
        let phi = traj
            .snapshots
            .iter()
            .map(|s| prep.phi(cfg, &s.theta_bar))
            .collect::<Result<_>>()?;
        Ok(RepetitionRun {
            rep,
            seed,
            snapshots: traj.snapshots,
            phi,
        })
    };
    inner().map_err(|e| Error::Repetition {
        repetition: rep,
        seed,
        source: Box::new(e),
    })
}

/// Bootstrap over the stream of repetition 0.
pub fn run_designated_bootstrap(cfg: &ExperimentConfig, prep: &Prepared) -> Result<BootstrapRun> {
    let ensemble = BootstrapEnsemble::new(
        prep.problem.clone(),
        prep.spec,
        prep.sched,
        prep.dim,
        cfg.b,
        cfg.multiplier,
        multiplier_seed(cfg.seed, 0),
    )?;
    run_bootstrap(prep.rep_stream(cfg, 0), ensemble, cfg.iters, &cfg.checkpoints, &prep.dtilde, cfg.alpha)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointStats {
    pub k: u64,
    pub w2: f64,
    pub ks: f64,
    pub mis: f64,
    pub phi_mean: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Summary {
    pub criterion: Criterion,
    pub iters: u64,
    pub reps: usize,
    pub phi_mean: f64,
    pub phi_q025: f64,
    pub phi_q975: f64,
    /// Fraction of repetitions whose final φ̂ lies in the designated CI at `T`.
    pub coverage: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub phi_star: f64,
    pub theta_star: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub checkpoints: Vec<u64>,
    pub report: CovarianceReport,
    pub reps: Vec<RepetitionRun>,
    pub designated: BootstrapRun,
    /// φ evaluated on draws from `N(θ*, Σ*/k)`, one sample per checkpoint.
    pub theory: Vec<Vec<f64>>,
    pub stats: Vec<CheckpointStats>,
    pub summary: Summary,
}

impl ExperimentResult {
    /// Repetition φ̂ values at checkpoint index `i`.
    pub fn phi_at(&self, i: usize) -> Vec<f64> {
        self.reps.iter().map(|r| r.phi[i]).collect()
    }

    pub fn checkpoint_index(&self, k: u64) -> Option<usize> {
        self.checkpoints.iter().position(|&c| c == k)
    }
}

pub fn run_experiment(cfg: &ExperimentConfig, prep: &Prepared) -> Result<ExperimentResult> {
    let report = prep.asymptotics(cfg)?;
    let mut reps: Vec<RepetitionRun> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| run_repetition(cfg, prep, r))
        .collect::<Result<_>>()?;
    reps.sort_by_key(|r| r.rep);
    let designated = run_designated_bootstrap(cfg, prep)?;
    let checkpoints = cfg.checkpoints.clone();

    let theory: Vec<Vec<f64>> = checkpoints
        .par_iter()
        .map(|&k| {
            let draws = sample_asymptotic(&report.theta_star, &report.sigma_star, k, cfg.asym_draws, asymptotic_seed(cfg.seed, k))?;
            theoretical_phi_sample(&draws, &prep.dtilde, cfg.mode, &prep.spec)
        })
        .collect::<Result<_>>()?;

    let mut stats = Vec::with_capacity(checkpoints.len());
    for (i, &k) in checkpoints.iter().enumerate() {
        let sample: Vec<f64> = reps.iter().map(|r| r.phi[i]).collect();
        let ci = &designated.checkpoints[i].ci;
        stats.push(CheckpointStats {
            k,
            w2: w2_1d(&sample, &theory[i])?,
            ks: ks_distance(&sample, &theory[i])?,
            mis: mis(ci.lower, ci.upper, &sample, cfg.alpha)?,
            phi_mean: sample.iter().sum::<f64>() / sample.len() as f64,
        });
    }

    let last = checkpoints.len() - 1;
    let finals: Vec<f64> = reps.iter().map(|r| r.phi[last]).collect();
    let ci = designated.checkpoints[last].ci;
    let covered = finals.iter().filter(|&&v| v >= ci.lower && v <= ci.upper).count();
    let summary = Summary {
        criterion: cfg.mode,
        iters: cfg.iters,
        reps: cfg.reps,
        phi_mean: finals.iter().sum::<f64>() / finals.len() as f64,
        phi_q025: quantile(&finals, 0.025)?,
        phi_q975: quantile(&finals, 0.975)?,
        coverage: covered as f64 / finals.len() as f64,
        ci_lower: ci.lower,
        ci_upper: ci.upper,
        phi_star: prep.phi(cfg, &report.theta_star)?,
        theta_star: report.theta_star.iter().copied().collect(),
    };
    Ok(ExperimentResult {
        checkpoints,
        report,
        reps,
        designated,
        theory,
        stats,
        summary,
    })
}
