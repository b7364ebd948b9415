//! Command-line front end: `gen-data`, `train`, `bootstrap`, `experiment`,
//! `asymptotics`.

pub mod config;
pub mod output;
pub mod run;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::data::{gen_synthetic_di, gen_synthetic_dm, mix_seed, write_csv, DiDesign, DmDesign};
use crate::error::{Error, Result};
pub use config::{resolve, DataSource, ExperimentConfig};
use output::{header, num, write_json, write_table};
pub use run::{prepare, run_experiment, ExperimentResult, Prepared};

#[derive(Parser, Debug)]
#[command(name = "fairci", version, about = "Online bootstrap confidence intervals for classifier unfairness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset in canonical CSV form.
    GenData(GenDataArgs),
    /// Single training run: trajectory of the averaged iterate and its unfairness.
    Train(ConfigArgs),
    /// Single run with the bootstrap ensemble: CI at every checkpoint.
    Bootstrap(ConfigArgs),
    /// Repetitions plus the designated bootstrap run and the asymptotic oracle.
    Experiment(ConfigArgs),
    /// Optimum and limiting covariance report.
    Asymptotics(ConfigArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// synthetic-di or synthetic-dm
    #[arg(long, default_value = "synthetic-di")]
    data: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cell weights for synthetic-dm, in the order (z,y) = (0,+1),(1,+1),(0,-1),(1,-1).
    #[arg(long)]
    dm_weights: Option<String>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// synthetic-di, adult, synthetic-dm or compas
    #[arg(long)]
    preset: Option<String>,
    /// key=value file, applied after the preset
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    loss: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    epsilon: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    r2: Option<String>,
    #[arg(long)]
    penalty: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    step_c: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    step_a: Option<String>,
    #[arg(long)]
    step_k0: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    kappa: Option<String>,
    #[arg(long)]
    iters: Option<String>,
    /// `geometric` or a comma-separated list
    #[arg(long)]
    checkpoints: Option<String>,
    #[arg(long)]
    b: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    n_constraint: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    n_heldout: Option<String>,
    #[arg(long)]
    n_data: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    reps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// synthetic-di, synthetic-dm or a CSV path
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    schema: Option<String>,
    #[arg(long)]
    intercept: Option<String>,
    #[arg(long)]
    dm_weights: Option<String>,
    #[arg(long)]
    multiplier: Option<String>,
    #[arg(long)]
    asym_draws: Option<String>,
    /// Checkpoints at which raw φ̂ samples are written (`final` or a list)
    #[arg(long)]
    density_at: Option<String>,
    #[arg(long)]
    tol: Option<String>,
}

impl ConfigArgs {
    fn overrides(&self) -> BTreeMap<String, String> {
        let pairs = [
            ("mode", &self.mode),
            ("loss", &self.loss),
            ("epsilon", &self.epsilon),
            ("r2", &self.r2),
            ("penalty", &self.penalty),
            ("tau", &self.tau),
            ("step-c", &self.step_c),
            ("step-a", &self.step_a),
            ("step-k0", &self.step_k0),
            ("kappa", &self.kappa),
            ("iters", &self.iters),
            ("checkpoints", &self.checkpoints),
            ("b", &self.b),
            ("alpha", &self.alpha),
            ("n-constraint", &self.n_constraint),
            ("n-heldout", &self.n_heldout),
            ("n-data", &self.n_data),
            ("reps", &self.reps),
            ("seed", &self.seed),
            ("data", &self.data),
            ("schema", &self.schema),
            ("intercept", &self.intercept),
            ("dm-weights", &self.dm_weights),
            ("multiplier", &self.multiplier),
            ("asym-draws", &self.asym_draws),
            ("density-at", &self.density_at),
            ("tol", &self.tol),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }

    fn resolve(&self) -> Result<ExperimentConfig> {
        let text = match &self.config {
            Some(p) => Some(std::fs::read_to_string(p)?),
            None => None,
        };
        resolve(self.preset.as_deref(), text.as_deref(), &self.overrides())
    }
}

/// Parses `std::env::args` and runs. Returns the process exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// 1 for configuration problems, 2 for failures during computation or I/O.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument { .. } => 1,
        _ => 2,
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => with_config(&a, train),
        Command::Bootstrap(a) => with_config(&a, bootstrap),
        Command::Experiment(a) => with_config(&a, experiment),
        Command::Asymptotics(a) => with_config(&a, asymptotics),
    }
}

fn with_config(a: &ConfigArgs, f: fn(&ExperimentConfig, &Path, &Value) -> Result<()>) -> Result<()> {
    let cfg = a.resolve()?;
    std::fs::create_dir_all(&a.out)?;
    let meta = json!({ "config": cfg.to_json(), "seed": cfg.seed });
    f(&cfg, &a.out, &meta)
}

fn done(path: &Path) {
    eprintln!("wrote {}", path.display());
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    if a.n == 0 {
        return Err(Error::invalid("n", "must be >= 1"));
    }
    let mut overrides = BTreeMap::from([
        ("mode".to_string(), "dm".to_string()),
        ("r2".to_string(), "0".to_string()),
        ("data".to_string(), a.data.clone()),
    ]);
    if let Some(w) = &a.dm_weights {
        overrides.insert("dm-weights".into(), w.clone());
    }
    let cfg = resolve(None, None, &overrides)?;
    let data_seed = mix_seed(a.seed, run::slot::DATA);
    let (ds, generator) = match cfg.data {
        DataSource::SyntheticDi => (
            gen_synthetic_di(a.n, data_seed)?,
            json!({
                "name": "synthetic-di",
                "mean_pos": DiDesign::MEAN_POS,
                "cov_pos": DiDesign::COV_POS,
                "mean_neg": DiDesign::MEAN_NEG,
                "cov_neg": DiDesign::COV_NEG,
                "p_positive": DiDesign::P_POSITIVE,
                "rotation": "x' = R x, R = [cos pi/3, -sin pi/3; sin pi/3, cos pi/3]",
                "design_decisions": [
                    "class prior P(y=1) = 1/2",
                    "z ~ Bernoulli(p(x')) with p = rho(x'|y=1) / (rho(x'|y=1) + rho(x'|y=-1))",
                ],
            }),
        ),
        DataSource::SyntheticDm { weights } => (
            gen_synthetic_dm(a.n, data_seed, weights)?,
            json!({
                "name": "synthetic-dm",
                "cov": DmDesign::COV,
                "cells": DmDesign::CELLS.iter().map(|(z, y, m)| json!({"z": z, "y": y, "mean": m})).collect::<Vec<_>>(),
                "cell_weights": weights,
                "design_decisions": [
                    if weights == DmDesign::UNIFORM {
                        "(z, y) uniform over the four cells"
                    } else {
                        "(z, y) cell weights set by the user"
                    },
                ],
            }),
        ),
        DataSource::Csv { .. } => {
            return Err(Error::invalid("data", "gen-data needs synthetic-di or synthetic-dm"));
        }
    };
    std::fs::create_dir_all(&a.out)?;
    let meta = json!({
        "generator": generator,
        "n": a.n,
        "seed": a.seed,
        "data_seed": data_seed,
    });
    let csv_path = a.out.join("data.csv");
    let mut buf = format!("# {}\n", serde_json::to_string(&meta)?).into_bytes();
    write_csv(&ds, &mut buf)?;
    std::fs::write(&csv_path, buf)?;
    done(&csv_path);
    let meta_path = a.out.join("metadata.json");
    write_json(&meta_path, &meta, json!({ "columns": ds.feature_names.iter().chain(["z".to_string(), "y".to_string()].iter()).collect::<Vec<_>>() }))?;
    done(&meta_path);
    Ok(())
}

fn warn(prep: &Prepared) {
    for w in &prep.warnings {
        eprintln!("warning: {w}");
    }
}

fn train(cfg: &ExperimentConfig, out: &Path, meta: &Value) -> Result<()> {
    let prep = prepare(cfg)?;
    warn(&prep);
    let rep = run::run_repetition(cfg, &prep, 0)?;
    let path = out.join("trajectory.csv");
    let rows = rep.snapshots.iter().zip(&rep.phi).map(|(s, phi)| {
        let mut r = vec![s.k.to_string()];
        r.extend(s.theta_bar.iter().map(|&v| num(v)));
        r.push(num(*phi));
        r
    });
    let mut h = header(&["k"], "theta_bar_", prep.dim);
    h.push("phi".into());
    write_table(&path, meta, &h, rows)?;
    done(&path);
    let last = rep.snapshots.last().expect("at least one checkpoint");
    let path = out.join("final.json");
    write_json(
        &path,
        meta,
        json!({
            "k": last.k,
            "theta_bar": last.theta_bar.as_slice(),
            "phi": rep.phi.last(),
            "criterion": cfg.mode,
            "stream_seed": rep.seed,
        }),
    )?;
    done(&path);
    Ok(())
}

fn bootstrap(cfg: &ExperimentConfig, out: &Path, meta: &Value) -> Result<()> {
    let prep = prepare(cfg)?;
    warn(&prep);
    let run = run::run_designated_bootstrap(cfg, &prep)?;
    let path = out.join("bootstrap.csv");
    let rows = run
        .checkpoints
        .iter()
        .map(|c| vec![c.k.to_string(), num(c.base_phi), num(c.ci.lower), num(c.ci.upper)]);
    write_table(&path, meta, &header(&["k", "base", "lower", "upper"], "", 0), rows)?;
    done(&path);

    let path = out.join("replicate_phi.csv");
    let rows = run.checkpoints.iter().flat_map(|c| {
        c.replicate_phi
            .iter()
            .enumerate()
            .map(move |(b, &v)| vec![c.k.to_string(), b.to_string(), num(v)])
    });
    write_table(&path, meta, &header(&["k", "replicate", "phi"], "", 0), rows)?;
    done(&path);

    let path = out.join("replicate_params.csv");
    let params = run.ensemble.replicate_parameter_samples();
    let rows = params.iter().enumerate().map(|(b, p)| {
        let mut r = vec![b.to_string()];
        r.extend(p.iter().map(|&v| num(v)));
        r
    });
    write_table(&path, meta, &header(&["replicate"], "theta_bar_", prep.dim), rows)?;
    done(&path);

    let (mut outside, mut healthy) = (0usize, true);
    for c in &run.checkpoints {
        let lo = c.replicate_phi.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = c.replicate_phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if c.base_phi < lo || c.base_phi > hi {
            outside += 1;
            healthy = false;
        }
    }
    let last = run.checkpoints.last().expect("at least one checkpoint");
    let path = out.join("bootstrap.json");
    write_json(
        &path,
        meta,
        json!({
            "k": last.k,
            "base_phi": last.base_phi,
            "ci": last.ci,
            "base_theta_bar": run.ensemble.base.theta_bar().as_slice(),
            "diagnostics": {
                "base_within_replicate_range": healthy,
                "checkpoints_outside_range": outside,
            },
            "stream_seed": run::stream_seed(cfg.seed, 0),
            "multiplier_seed": run::multiplier_seed(cfg.seed, 0),
        }),
    )?;
    done(&path);
    Ok(())
}

fn experiment(cfg: &ExperimentConfig, out: &Path, meta: &Value) -> Result<()> {
    let prep = prepare(cfg)?;
    warn(&prep);
    let res = run_experiment(cfg, &prep)?;

    let path = out.join("w2.csv");
    let rows = res
        .stats
        .iter()
        .map(|s| vec![s.k.to_string(), num(s.w2), num(s.ks), num(s.phi_mean)]);
    write_table(&path, meta, &header(&["k", "w2", "ks", "phi_mean"], "", 0), rows)?;
    done(&path);

    let density: Vec<usize> = cfg.density_at.iter().filter_map(|&k| res.checkpoint_index(k)).collect();
    let path = out.join("phi_samples.csv");
    let rows = density.iter().flat_map(|&i| {
        let k = res.checkpoints[i];
        res.reps.iter().map(move |r| vec![k.to_string(), r.rep.to_string(), num(r.phi[i])])
    });
    write_table(&path, meta, &header(&["k", "rep", "phi"], "", 0), rows)?;
    done(&path);

    let path = out.join("theory_phi.csv");
    let rows = density.iter().flat_map(|&i| {
        let k = res.checkpoints[i];
        res.theory[i]
            .iter()
            .enumerate()
            .map(move |(d, &v)| vec![k.to_string(), d.to_string(), num(v)])
    });
    write_table(&path, meta, &header(&["k", "draw", "phi"], "", 0), rows)?;
    done(&path);

    let path = out.join("ci_band.csv");
    let rows = res
        .designated
        .checkpoints
        .iter()
        .map(|c| vec![c.k.to_string(), num(c.base_phi), num(c.ci.lower), num(c.ci.upper)]);
    write_table(&path, meta, &header(&["k", "base", "lower", "upper"], "", 0), rows)?;
    done(&path);

    let path = out.join("trajectories.csv");
    let rows = res.reps.iter().flat_map(|r| {
        res.checkpoints
            .iter()
            .zip(&r.phi)
            .map(move |(k, &v)| vec![r.rep.to_string(), k.to_string(), num(v)])
    });
    write_table(&path, meta, &header(&["rep", "k", "phi"], "", 0), rows)?;
    done(&path);

    let path = out.join("mis.csv");
    let rows = res.stats.iter().zip(&res.designated.checkpoints).map(|(s, c)| {
        vec![s.k.to_string(), num(c.ci.lower), num(c.ci.upper), num(s.mis)]
    });
    write_table(&path, meta, &header(&["k", "lower", "upper", "mis"], "", 0), rows)?;
    done(&path);

    let path = out.join("summary.json");
    let mut body = serde_json::to_value(&res.summary)?;
    body["asymptotics"] = res.report.to_json()?;
    body["rep_seeds"] = json!(res.reps.iter().map(|r| r.seed).collect::<Vec<_>>());
    write_json(&path, meta, body)?;
    done(&path);
    Ok(())
}

fn asymptotics(cfg: &ExperimentConfig, out: &Path, meta: &Value) -> Result<()> {
    let prep = prepare(cfg)?;
    warn(&prep);
    let report = prep.asymptotics(cfg)?;
    let mut body = report.to_json()?;
    if let crate::optim::Problem::Di(c) = &prep.problem {
        let support = (&report.sigma_star * &c.xtilde).norm();
        body["xtilde"] = json!(c.xtilde.as_slice());
        body["sigma_xtilde_norm"] = json!(support);
    }
    body["phi_star"] = json!(prep.phi(cfg, &report.theta_star)?);
    let path = out.join("report.json");
    write_json(&path, meta, body)?;
    done(&path);
    Ok(())
}
