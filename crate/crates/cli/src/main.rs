use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use emdp::audit::{verify_emd_dp, verify_item_metric_dp};
use emdp::experiment::{run_experiment_with_jobs, ExperimentConfig};
use emdp::frequency::{
    emd_error, freq_est_unchecked, gkrr_mechanism, gkrr_right_inverse, hadamard_item_budget, hadamard_response,
    l1_error, laplace_freq_central_raw, verify_right_inverse, GkrrParams,
};
use emdp::io::{load_space, read_matrix, read_users_file};
use emdp::linear::{lipschitz_constant_in, priv_emd_linear, LinearQuery, NoiseKind, NoiseNorm, NoiseSpec};
use emdp::mechanism::TransitionMechanism;
use emdp::reduction::{bounded_emd_reduction, reduction_budget};
use emdp::rng::derive_seed;
use emdp::shuffle::{best_alpha0, calibrate_alpha0, effective_budget, CalibrationMode};
use emdp::{MetricBudget, MetricSpace, Model, Multiset};

#[derive(Parser)]
#[command(
    name = "emdp",
    version,
    about = "User-level metric DP under the earth mover's distance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Release a linear query with noise scaled to its Lipschitz constant.
    LinearQuery(LinearArgs),
    /// Per-item budget for a user-level target, with the amplified budget it yields.
    Calibrate(CalibrateArgs),
    /// Resample every user to a fixed size, then run an inner subcommand.
    Reduce(ReduceArgs),
    /// Frequency estimation error over repeated trials.
    FreqEst(FreqArgs),
    /// Exhaustive privacy check of a channel on a small space.
    Audit(AuditArgs),
    /// Run a TOML-configured experiment grid.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Local,
    Central,
}

impl ModelArg {
    fn model(self, n: u64) -> Model {
        match self {
            ModelArg::Local => Model::Local,
            ModelArg::Central => Model::Central { n },
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NoiseArg {
    Gamma,
    Gaussian,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NormArg {
    L2,
    L1,
}

#[derive(Args, Clone)]
struct LinearArgs {
    #[arg(long)]
    space: String,
    /// Dataset CSV (`point_index`, optional `user_id` and `count`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Query matrix CSV, one row per output coordinate.
    #[arg(long)]
    query: PathBuf,
    #[arg(long)]
    alpha: f64,
    #[arg(long, value_enum)]
    noise: NoiseArg,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_enum, default_value = "l2")]
    norm: NormArg,
    /// Lipschitz bound; defaults to the exact constant.
    #[arg(long)]
    lipschitz: Option<f64>,
    /// Do not check --lipschitz against the exact constant.
    #[arg(long)]
    unchecked: bool,
    #[arg(long, value_enum, default_value = "local")]
    model: ModelArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    m: u64,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long, value_enum, default_value = "local")]
    model: ModelArg,
    #[arg(long, default_value = "exact")]
    mode: CalibrationMode,
}

#[derive(Args)]
struct ReduceArgs {
    /// CSV with `user_id,point_index`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    samples: u64,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    radius: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// The bounded subcommand to run on the resampled data, e.g.
    /// `--inner freq-est --space clustered:2,2,0.3 --mechanism gkrr`.
    #[arg(long, num_args = 1.., allow_hyphen_values = true, trailing_var_arg = true, required = true)]
    inner: Vec<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FreqMechanism {
    Gkrr,
    Hadamard,
    Laplace,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CalibrationArg {
    Exact,
    Asymptotic,
    Best,
}

#[derive(Args, Clone)]
struct FreqArgs {
    /// `clustered:s,t,r`
    #[arg(long)]
    space: String,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    mechanism: FreqMechanism,
    #[arg(long, conflicts_with = "epsilon")]
    alpha: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    delta: f64,
    #[arg(long, value_enum, default_value = "local")]
    model: ModelArg,
    /// Per-item level for gkrr; calibrated from the budget when absent.
    #[arg(long)]
    alpha0: Option<f64>,
    #[arg(long, value_enum, default_value = "best")]
    calibration: CalibrationArg,
    #[arg(long, default_value_t = 1)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AuditMechanism {
    Gkrr,
    Hadamard,
    Channel,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    space: String,
    #[arg(long, value_enum)]
    mechanism: AuditMechanism,
    /// Channel level: alpha0 for gkrr, epsilon0 for hadamard.
    #[arg(long)]
    alpha0: Option<f64>,
    /// Row-stochastic channel CSV for `--mechanism channel`.
    #[arg(long)]
    channel: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    m: u64,
    /// Level to verify; defaults to the amplified budget of the channel.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Exit successfully even when some cells are infeasible.
    #[arg(long)]
    allow_skip: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::LinearQuery(a) => {
            let space = Arc::new(load_space(&a.space)?);
            let users = load_users(a.data.as_deref(), &space)?;
            linear_query(&a, &users, &mut io::stdout().lock())?;
        }
        Command::Calibrate(a) => calibrate(&a, &mut io::stdout().lock())?,
        Command::Reduce(a) => reduce(&a)?,
        Command::FreqEst(a) => {
            let space = Arc::new(load_space(&a.space)?);
            let users = load_users(a.data.as_deref(), &space)?;
            freq_est(&a, &users, None)?;
        }
        Command::Audit(a) => return audit(&a, &mut io::stdout().lock()),
        Command::Experiment(a) => return experiment(&a),
    }
    Ok(ExitCode::SUCCESS)
}

fn load_users(path: Option<&Path>, space: &Arc<MetricSpace>) -> Result<Vec<Multiset>> {
    let path = path.context("--data is required")?;
    let users = read_users_file(path, space).with_context(|| format!("reading {}", path.display()))?;
    if users.is_empty() {
        bail!("{} holds no data", path.display());
    }
    Ok(users.into_iter().map(|(_, m)| m).collect())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn csv_line(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

/// Local model: one noisy row per user. Central: one row for the pooled data.
fn linear_query(a: &LinearArgs, users: &[Multiset], out: &mut dyn Write) -> Result<()> {
    let space = users[0].space().clone();
    let rows = read_matrix(File::open(&a.query).with_context(|| format!("reading {}", a.query.display()))?)?;
    let q = LinearQuery::from_rows(space, &rows)?;
    let norm = match a.norm {
        NormArg::L2 => NoiseNorm::L2,
        NormArg::L1 => NoiseNorm::L1,
    };
    let kind = match a.noise {
        NoiseArg::Gamma => NoiseKind::GammaBall(norm),
        NoiseArg::Gaussian => NoiseKind::Gaussian {
            delta: a.delta.context("--noise gaussian needs --delta")?,
        },
    };
    let ell = match a.lipschitz {
        Some(l) => l,
        None => lipschitz_constant_in(&q, norm)?,
    };
    let mut spec = NoiseSpec::for_alpha(kind, a.alpha, ell)?;
    if a.unchecked {
        spec = spec.unchecked();
    }
    match a.model {
        ModelArg::Central => {
            let pooled = Multiset::pooled(users)?;
            let v = priv_emd_linear(&q, &pooled, &spec, Model::Central { n: users.len() as u64 }, a.seed)?;
            writeln!(out, "{}", csv_line(&v))?;
        }
        ModelArg::Local => {
            for (i, u) in users.iter().enumerate() {
                let v = priv_emd_linear(&q, u, &spec, Model::Local, derive_seed(a.seed, i as u64))?;
                writeln!(out, "{}", csv_line(&v))?;
            }
        }
    }
    Ok(())
}

fn calibrate(a: &CalibrateArgs, out: &mut dyn Write) -> Result<()> {
    let n = match (a.model, a.n) {
        (ModelArg::Central, Some(n)) => n,
        (ModelArg::Central, None) => bail!("--model central needs --n"),
        (ModelArg::Local, _) => 1,
    };
    let model = a.model.model(n);
    let target = MetricBudget::new(a.alpha, a.delta)?;
    let alpha0 = calibrate_alpha0(&target, a.m, model, a.mode)?;
    let eff = effective_budget(alpha0, a.delta, a.m, model)?;
    if eff.delta_warning() {
        eprintln!(
            "warning: delta_eff = {} is not a meaningful privacy parameter",
            eff.delta_eff
        );
    }
    writeln!(out, "alpha0,alpha_eff,delta_eff,w_star")?;
    writeln!(out, "{},{},{},{}", alpha0, eff.alpha_eff, eff.delta_eff, eff.w_star)?;
    Ok(())
}

fn reduce(a: &ReduceArgs) -> Result<()> {
    let inner = Cli::try_parse_from(std::iter::once("emdp".to_string()).chain(a.inner.iter().cloned()))
        .map_err(|e| anyhow::anyhow!("inner command: {e}"))?;
    let budget = reduction_budget(a.epsilon, a.delta, a.radius, a.samples)?;
    eprintln!("inner budget: alpha = {}, delta = {}", budget.alpha, budget.delta);
    match inner.command {
        Command::FreqEst(mut f) => {
            let space = Arc::new(load_space(&f.space)?);
            let users = load_users(Some(&a.data), &space)?;
            f.alpha = Some(budget.alpha);
            f.epsilon = None;
            f.delta = budget.delta;
            // Errors are measured against the original data, not the resample.
            let mut result = Ok(());
            bounded_emd_reduction(
                &users,
                a.samples,
                |ds| {
                    result = freq_est(&f, ds, Some(&users));
                    Ok(())
                },
                a.seed,
            )?;
            result?;
        }
        Command::LinearQuery(mut l) => {
            let space = Arc::new(load_space(&l.space)?);
            let users = load_users(Some(&a.data), &space)?;
            l.alpha = budget.alpha;
            if l.noise == NoiseArg::Gaussian {
                l.delta = Some(budget.delta);
            }
            let mut result = Ok(());
            bounded_emd_reduction(
                &users,
                a.samples,
                |ds| {
                    result = linear_query(&l, ds, &mut io::stdout().lock());
                    Ok(())
                },
                a.seed,
            )?;
            result?;
        }
        _ => bail!("--inner must be freq-est or linear-query"),
    }
    Ok(())
}

fn equal_size(users: &[Multiset]) -> Result<u64> {
    let m = users[0].size();
    if users.iter().any(|u| u.size() != m) {
        bail!("users hold different numbers of items; resample them with `reduce` first");
    }
    if m == 0 {
        bail!("users hold no items");
    }
    Ok(m)
}

fn freq_est(a: &FreqArgs, users: &[Multiset], truth_users: Option<&[Multiset]>) -> Result<()> {
    let cs = a.space.parse::<emdp::ClusteredSpace>()?;
    let n = users.len() as u64;
    let m = equal_size(users)?;
    let truth = Multiset::pooled(truth_users.unwrap_or(users)).and_then(|p| p.normalize())?;
    let pooled = Multiset::pooled(users)?;
    let alpha = a
        .alpha
        .or(a.epsilon.map(|e| e / cs.r))
        .context("give --alpha or --epsilon")?;
    let epsilon = a.epsilon.unwrap_or(alpha * cs.r);
    let model = a.model.model(n);
    let estimate: Box<dyn Fn(u64) -> Result<Vec<f64>>> = match a.mechanism {
        FreqMechanism::Gkrr => {
            let alpha0 = match a.alpha0 {
                Some(x) => x,
                None => {
                    let target = MetricBudget::new(alpha, a.delta)?;
                    match a.calibration {
                        CalibrationArg::Best => best_alpha0(&target, m, model),
                        CalibrationArg::Exact => calibrate_alpha0(&target, m, model, CalibrationMode::Exact),
                        CalibrationArg::Asymptotic => calibrate_alpha0(&target, m, model, CalibrationMode::Asymptotic),
                    }?
                }
            };
            eprintln!("gkrr alpha0 = {alpha0}");
            let chan = gkrr_mechanism(cs, alpha0)?;
            let b = gkrr_right_inverse(&GkrrParams::new(cs, alpha0)?)?;
            verify_right_inverse(&chan, &b)?;
            let reporters = match a.model {
                ModelArg::Local => users.to_vec(),
                ModelArg::Central => vec![pooled.clone()],
            };
            Box::new(move |s| Ok(freq_est_unchecked(&reporters, &chan, &b, s)?))
        }
        FreqMechanism::Hadamard => {
            if a.model == ModelArg::Central {
                bail!("hadamard runs in the local model");
            }
            let eps0 = hadamard_item_budget(epsilon, m, a.delta)?;
            let (chan, b) = hadamard_response(cs.len(), eps0)?;
            let users = users.to_vec();
            Box::new(move |s| Ok(freq_est_unchecked(&users, &chan, &b, s)?))
        }
        FreqMechanism::Laplace => {
            if a.model == ModelArg::Local {
                bail!("laplace runs in the central model");
            }
            let pooled = pooled.clone();
            Box::new(move |s| Ok(laplace_freq_central_raw(&pooled, n, epsilon, s)?))
        }
    };
    let mut out = output(a.out.as_deref())?;
    writeln!(out, "trial,emd_error,l1_error")?;
    for t in 0..a.trials {
        let raw = estimate(derive_seed(a.seed, t))?;
        let e = emd_error(&raw, &truth)?;
        writeln!(out, "{t},{e},{}", l1_error(&raw, &truth))?;
    }
    out.flush()?;
    Ok(())
}

fn audit(a: &AuditArgs, out: &mut dyn Write) -> Result<ExitCode> {
    let space = Arc::new(load_space(&a.space)?);
    let chan = match a.mechanism {
        AuditMechanism::Gkrr => {
            let cs = space.clustered().copied().context("gkrr needs a clustered space")?;
            gkrr_mechanism(cs, a.alpha0.context("gkrr needs --alpha0")?)?
        }
        AuditMechanism::Hadamard => {
            let (h, _) = hadamard_response(space.len(), a.alpha0.context("hadamard needs --alpha0 (epsilon0)")?)?;
            let rows = (0..h.in_size()).map(|x| h.row(x).to_vec()).collect();
            TransitionMechanism::with_certified_level(space.clone(), rows)?
        }
        AuditMechanism::Channel => {
            let path = a.channel.as_deref().context("--mechanism channel needs --channel")?;
            let rows = read_matrix(File::open(path).with_context(|| format!("reading {}", path.display()))?)?;
            TransitionMechanism::with_certified_level(space.clone(), rows)?
        }
    };
    let (alpha, delta) = match a.alpha {
        Some(alpha) => (alpha, a.delta),
        None if a.m == 1 => (chan.alpha0(), a.delta),
        None => {
            if a.delta <= 0.0 {
                bail!("the amplified budget needs --delta > 0");
            }
            let eff = emdp::shuffle::effective_budget_with(
                chan.alpha0(),
                a.delta,
                a.m,
                Model::Local,
                emdp::shuffle::Applicability::FormulaOnly,
            )?;
            (eff.alpha_eff, eff.delta_eff)
        }
    };
    let passed = if a.m == 1 {
        let r = verify_item_metric_dp(&chan, alpha, delta)?;
        writeln!(out, "result: {}", if r.passed { "pass" } else { "fail" })?;
        writeln!(out, "alpha: {alpha}\ndelta: {delta}")?;
        writeln!(out, "worst pair: {} {}", r.worst_pair.0, r.worst_pair.1)?;
        writeln!(out, "divergence: {:e}", r.divergence)?;
        r.passed
    } else {
        let r = verify_emd_dp(&chan, a.m, alpha, delta)?;
        writeln!(out, "result: {}", if r.passed { "pass" } else { "fail" })?;
        writeln!(out, "alpha: {alpha}\ndelta: {delta}")?;
        writeln!(out, "worst pair: {:?} {:?}", r.worst_pair.0, r.worst_pair.1)?;
        writeln!(out, "divergence: {:e}", r.divergence)?;
        writeln!(out, "pairs checked: {}", r.pairs_checked)?;
        r.passed
    };
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn experiment(a: &ExperimentArgs) -> Result<ExitCode> {
    let cfg = ExperimentConfig::from_file(&a.config).with_context(|| format!("loading {}", a.config.display()))?;
    let report = run_experiment_with_jobs(&cfg, a.seed, a.jobs)?;
    let mut out = output(a.out.as_deref())?;
    report.write_csv(&mut out)?;
    out.flush()?;
    let skipped = report.skipped();
    if skipped > 0 {
        eprintln!("{skipped} cell(s) skipped");
        if !a.allow_skip {
            return Ok(ExitCode::FAILURE);
        }
    }
    Ok(ExitCode::SUCCESS)
}
