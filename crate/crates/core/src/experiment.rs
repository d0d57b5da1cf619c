//! Seeded Monte-Carlo experiments over a grid of `(mechanism, n, m)` cells,
//! reported as CSV.
//!
//! Config is TOML with three tables:
//!
//! ```toml
//! [scenario]
//! name = "local-gkrr"
//! kind = "frequency"          # or "linear"
//! model = "local"             # or "central"
//! mechanisms = ["gkrr", "hadamard"]
//! space = "clustered:2,2,0.3" # frequency only
//!
//! [grid]
//! n = [100, 1000, 10000]
//! m = [20]
//! trials = 50
//!
//! [budget]
//! alpha = 4.0
//! delta = 1e-6
//! calibration = "fixed"       # exact | asymptotic | best | fixed
//! alpha0 = 2.0                # with calibration = "fixed"
//! ```
//!
//! Linear scenarios take `k` (domain size, even) and `d` (output dimension)
//! instead of `space`, and mechanisms `emd-gaussian` and `user-gaussian`.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Deserialize;

use crate::budget::{MetricBudget, Model};
use crate::error::{invalid, Error, Result};
use crate::frequency::{
    emd_error, freq_error_bound, freq_est_unchecked, gkrr_error_bound, gkrr_mechanism, gkrr_right_inverse,
    hadamard_item_budget, hadamard_response, laplace_freq_central_raw, verify_right_inverse, GkrrParams,
};
use crate::linear::{gaussian_std, lipschitz_constant, priv_emd_linear, LinearQuery, NoiseSpec};
use crate::metric::{ClusteredSpace, MetricSpace};
use crate::rng;
use crate::shuffle::{best_alpha0, calibrate_alpha0, CalibrationMode};
use crate::transport::Multiset;

pub const CSV_HEADER: &str = "scenario,mechanism,n,m,k,alpha,epsilon,delta,trial_count,mean_error,std_error,bound,seed";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub grid: GridConfig,
    pub budget: BudgetConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Frequency,
    Linear,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub kind: ScenarioKind,
    #[serde(default = "default_model")]
    pub model: String,
    pub mechanisms: Vec<String>,
    pub space: Option<String>,
    pub k: Option<usize>,
    pub d: Option<usize>,
}

fn default_model() -> String {
    "local".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: Vec<u64>,
    pub m: Vec<u64>,
    pub trials: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub delta: f64,
    #[serde(default = "default_calibration")]
    pub calibration: String,
    pub alpha0: Option<f64>,
}

fn default_calibration() -> String {
    "exact".into()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        parse_model_name(&self.scenario.model)?;
        if self.grid.n.is_empty() || self.grid.m.is_empty() {
            return Err(Error::Parse("grid.n and grid.m must be nonempty".into()));
        }
        if self.grid.n.contains(&0) || self.grid.m.contains(&0) {
            return Err(Error::Parse("grid values must be >= 1".into()));
        }
        if self.budget.alpha.is_none() && self.budget.epsilon.is_none() {
            return Err(Error::Parse("budget needs alpha or epsilon".into()));
        }
        if !(self.budget.delta > 0.0 && self.budget.delta < 1.0) {
            return Err(Error::Parse("budget.delta must lie in (0, 1)".into()));
        }
        match self.budget.calibration.as_str() {
            "exact" | "asymptotic" | "best" => {}
            "fixed" if self.budget.alpha0.is_some() => {}
            "fixed" => return Err(Error::Parse("calibration = \"fixed\" needs budget.alpha0".into())),
            other => return Err(Error::Parse(format!("unknown calibration `{other}`"))),
        }
        let known: &[&str] = match self.scenario.kind {
            ScenarioKind::Frequency => {
                self.space()?;
                &["gkrr", "hadamard", "laplace"]
            }
            ScenarioKind::Linear => {
                let k = self
                    .scenario
                    .k
                    .ok_or_else(|| Error::Parse("linear scenario needs k".into()))?;
                if k < 2 || k % 2 != 0 {
                    return Err(Error::Parse("linear scenario needs an even k >= 2".into()));
                }
                if self.scenario.d.unwrap_or(0) == 0 {
                    return Err(Error::Parse("linear scenario needs d >= 1".into()));
                }
                &["emd-gaussian", "user-gaussian"]
            }
        };
        if self.scenario.mechanisms.is_empty() {
            return Err(Error::Parse("no mechanisms listed".into()));
        }
        for m in &self.scenario.mechanisms {
            if !known.contains(&m.as_str()) {
                return Err(Error::Parse(format!("unknown mechanism `{m}` for this scenario")));
            }
        }
        Ok(())
    }

    fn space(&self) -> Result<ClusteredSpace> {
        self.scenario
            .space
            .as_deref()
            .ok_or_else(|| Error::Parse("frequency scenario needs space".into()))?
            .parse()
    }
}

pub fn parse_model_name(s: &str) -> Result<bool> {
    match s {
        "local" => Ok(false),
        "central" => Ok(true),
        other => Err(Error::Parse(format!("unknown model `{other}`"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellOutcome {
    Done { mean: f64, std: f64, bound: Option<f64> },
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scenario: String,
    /// Mechanism name with how its per-item level was set: `gkrr/<mode>`,
    /// `hadamard/composition`, or `<name>/none` for mechanisms without one.
    pub mechanism: String,
    pub n: u64,
    pub m: u64,
    pub k: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub trial_count: u64,
    pub outcome: CellOutcome,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn skipped(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| matches!(r.outcome, CellOutcome::Skipped(_)))
            .count()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.rows {
            let (mean, std, bound) = match &r.outcome {
                CellOutcome::Done { mean, std, bound } => (
                    mean.to_string(),
                    std.to_string(),
                    bound.map(|b| b.to_string()).unwrap_or_default(),
                ),
                CellOutcome::Skipped(_) => ("skipped".into(), "skipped".into(), "skipped".into()),
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.scenario,
                r.mechanism,
                r.n,
                r.m,
                r.k,
                r.alpha,
                r.epsilon,
                r.delta,
                r.trial_count,
                mean,
                std,
                bound,
                r.seed
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is UTF-8")
    }
}

/// Synthetic users: `n` datasets of `m` i.i.d. items from weights
/// proportional to `1 / (x + 1)`.
pub fn synthetic_users(space: &Arc<MetricSpace>, n: u64, m: u64, seed: u64) -> Result<Vec<Multiset>> {
    let k = space.len();
    let weights: Vec<f64> = (0..k).map(|x| 1.0 / (x as f64 + 1.0)).collect();
    let dist = rand::distr::weighted::WeightedIndex::new(&weights).map_err(|e| invalid(e.to_string()))?;
    (0..n)
        .map(|i| {
            let mut rng = rng::substream(seed, i);
            let items: Vec<usize> = (0..m).map(|_| dist.sample(&mut rng)).collect();
            Multiset::from_items(space.clone(), &items)
        })
        .collect()
}

/// A query on the discrete space of `k` points whose columns come in
/// antipodal pairs `v, -v` with `||v|| <= 1`.
pub fn antipodal_query(k: usize, d: usize, seed: u64) -> Result<LinearQuery> {
    if k < 2 || !k.is_multiple_of(2) {
        return Err(invalid("antipodal query needs an even k >= 2"));
    }
    let mut rng = rng::stream(seed);
    let half: Vec<Vec<f64>> = (0..k / 2)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let len = 0.5 + 0.5 * rng.random::<f64>();
            v.into_iter().map(|x| x / norm * len).collect()
        })
        .collect();
    let f = DMatrix::from_fn(d, k, |i, x| if x < k / 2 { half[x][i] } else { -half[x - k / 2][i] });
    LinearQuery::new(Arc::new(MetricSpace::discrete(k)?), f)
}

/// User-level Gaussian mechanism with sensitivity `2 max_x ||f(x)||_2`.
///
/// Draws its noise in the same order as the Gaussian variant of
/// `priv_emd_linear`, so equal seeds give paired samples.
pub fn user_level_gaussian_baseline(
    q: &LinearQuery,
    k: &Multiset,
    epsilon: f64,
    delta: f64,
    model: Model,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(epsilon > 0.0) {
        return Err(invalid(format!("epsilon = {epsilon} must be > 0")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta = {delta} must lie in (0, 1)")));
    }
    let scale = match model {
        Model::Local => 1.0 / epsilon,
        Model::Central { n } if n > 0 => 1.0 / (epsilon * n as f64),
        Model::Central { .. } => return Err(invalid("central model needs n >= 1")),
    };
    let value = q.evaluate_multiset(k)?;
    let std = gaussian_std(user_level_sensitivity(q), scale, delta);
    let normal = Normal::new(0.0, std).map_err(|e| invalid(format!("gaussian: {e}")))?;
    let mut rng = rng::stream(seed);
    Ok(value.into_iter().map(|v| v + normal.sample(&mut rng)).collect())
}

pub fn user_level_sensitivity(q: &LinearQuery) -> f64 {
    2.0 * q.matrix().column_iter().map(|c| c.norm()).fold(0.0, f64::max)
}

struct Cell {
    mechanism: String,
    n: u64,
    m: u64,
    seed: u64,
}

/// Runs every cell. Cells run on the current rayon pool; rows come back in
/// grid order regardless of scheduling.
pub fn run_experiment(cfg: &ExperimentConfig, master_seed: u64) -> Result<Report> {
    cfg.validate()?;
    if cfg.grid.trials == 0 {
        return Ok(Report::default());
    }
    let mut cells = Vec::new();
    let mut point = 0u64;
    for &n in &cfg.grid.n {
        for &m in &cfg.grid.m {
            // Mechanisms at the same grid point share a seed, so their
            // trials are paired.
            let seed = rng::derive_seed(master_seed, point);
            point += 1;
            for mech in &cfg.scenario.mechanisms {
                cells.push(Cell {
                    mechanism: mech.clone(),
                    n,
                    m,
                    seed,
                });
            }
        }
    }
    let rows = cells.par_iter().map(|c| run_cell(cfg, c)).collect::<Result<Vec<_>>>()?;
    Ok(Report { rows })
}

/// As `run_experiment`, on a dedicated pool of `jobs` threads.
pub fn run_experiment_with_jobs(cfg: &ExperimentConfig, master_seed: u64, jobs: usize) -> Result<Report> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| invalid(e.to_string()))?;
    pool.install(|| run_experiment(cfg, master_seed))
}

fn mean_std(errors: &[f64]) -> (f64, f64) {
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = if errors.len() > 1 {
        errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn run_cell(cfg: &ExperimentConfig, cell: &Cell) -> Result<ReportRow> {
    let central = parse_model_name(&cfg.scenario.model)?;
    let model = if central {
        Model::Central { n: cell.n }
    } else {
        Model::Local
    };
    let delta = cfg.budget.delta;
    let (k, r) = match cfg.scenario.kind {
        ScenarioKind::Frequency => {
            let cs = cfg.space()?;
            (cs.len(), cs.r)
        }
        ScenarioKind::Linear => (cfg.scenario.k.unwrap_or(0), 1.0),
    };
    // alpha = epsilon / r on clustered spaces; equal on linear scenarios.
    let alpha = cfg
        .budget
        .alpha
        .unwrap_or_else(|| cfg.budget.epsilon.unwrap_or(0.0) / r);
    let epsilon = cfg.budget.epsilon.unwrap_or(alpha * r);
    let mut row = ReportRow {
        scenario: cfg.scenario.name.clone(),
        mechanism: format!("{}/none", cell.mechanism),
        n: cell.n,
        m: cell.m,
        k,
        alpha,
        epsilon,
        delta,
        trial_count: cfg.grid.trials,
        outcome: CellOutcome::Skipped(String::new()),
        seed: cell.seed,
    };
    let result = match cfg.scenario.kind {
        ScenarioKind::Frequency => frequency_cell(cfg, cell, model, alpha, epsilon, &mut row.mechanism),
        ScenarioKind::Linear => linear_cell(cfg, cell, model, alpha, epsilon),
    };
    row.outcome = match result {
        Ok(outcome) => outcome,
        Err(e @ (Error::Infeasible(_) | Error::AmplificationInapplicable { .. } | Error::Degenerate(_))) => {
            CellOutcome::Skipped(e.to_string())
        }
        Err(e) => return Err(e),
    };
    Ok(row)
}

fn trials<F>(count: u64, seed: u64, f: F) -> Result<(f64, f64)>
where
    F: Fn(u64) -> Result<f64>,
{
    let errors = (0..count)
        .map(|t| f(rng::derive_seed(seed, t)))
        .collect::<Result<Vec<_>>>()?;
    if errors.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    Ok(mean_std(&errors))
}

const DATA_STREAM: u64 = u64::MAX - 1;

fn frequency_cell(
    cfg: &ExperimentConfig,
    cell: &Cell,
    model: Model,
    alpha: f64,
    epsilon: f64,
    label: &mut String,
) -> Result<CellOutcome> {
    let cs = cfg.space()?;
    let space = Arc::new(cs.metric()?);
    let users = synthetic_users(&space, cell.n, cell.m, rng::derive_seed(cell.seed, DATA_STREAM))?;
    let pooled = Multiset::pooled(&users)?;
    let truth = pooled.normalize()?;
    let central = matches!(model, Model::Central { .. });
    let delta = cfg.budget.delta;
    match cell.mechanism.as_str() {
        "gkrr" => {
            let calibration = cfg.budget.calibration.as_str();
            *label = format!("gkrr/{calibration}");
            let target = MetricBudget::new(alpha, delta)?;
            let alpha0 = match calibration {
                "fixed" => cfg.budget.alpha0.unwrap_or(0.0),
                "best" => best_alpha0(&target, cell.m, model)?,
                mode => calibrate_alpha0(&target, cell.m, model, mode.parse::<CalibrationMode>()?)?,
            };
            let params = GkrrParams::new(cs, alpha0)?;
            let a = gkrr_mechanism(cs, alpha0)?;
            let b = gkrr_right_inverse(&params)?;
            verify_right_inverse(&a, &b)?;
            let reporters: Vec<Multiset> = if central { vec![pooled.clone()] } else { users.clone() };
            let (mean, std) = trials(cfg.grid.trials, cell.seed, |s| {
                emd_error(&freq_est_unchecked(&reporters, &a, &b, s)?, &truth)
            })?;
            let bound = gkrr_error_bound(&params, cell.m, cell.n)?;
            Ok(CellOutcome::Done {
                mean,
                std,
                bound: Some(bound),
            })
        }
        "hadamard" => {
            if central {
                return Err(Error::Infeasible("hadamard response is a local-model baseline".into()));
            }
            *label = "hadamard/composition".into();
            let eps0 = hadamard_item_budget(epsilon, cell.m, delta)?;
            let (a, b) = hadamard_response(cs.len(), eps0)?;
            verify_right_inverse(&a, &b)?;
            let (mean, std) = trials(cfg.grid.trials, cell.seed, |s| {
                emd_error(&freq_est_unchecked(&users, &a, &b, s)?, &truth)
            })?;
            let bound = freq_error_bound(&b, &cs, cell.m, cell.n)?;
            Ok(CellOutcome::Done {
                mean,
                std,
                bound: Some(bound),
            })
        }
        "laplace" => {
            if !central {
                return Err(Error::Infeasible("laplace is a central-model baseline".into()));
            }
            let (mean, std) = trials(cfg.grid.trials, cell.seed, |s| {
                emd_error(&laplace_freq_central_raw(&pooled, cell.n, epsilon, s)?, &truth)
            })?;
            // EMD <= L1 and each coordinate has mean absolute noise 1 / (n eps).
            let bound = cs.len() as f64 / (cell.n as f64 * epsilon);
            Ok(CellOutcome::Done {
                mean,
                std,
                bound: Some(bound),
            })
        }
        other => Err(Error::Parse(format!("unknown mechanism `{other}`"))),
    }
}

fn linear_cell(cfg: &ExperimentConfig, cell: &Cell, model: Model, alpha: f64, epsilon: f64) -> Result<CellOutcome> {
    let k = cfg.scenario.k.unwrap_or(2);
    let d = cfg.scenario.d.unwrap_or(1);
    let delta = cfg.budget.delta;
    let q = antipodal_query(k, d, rng::derive_seed(cell.seed, DATA_STREAM - 1))?;
    let space = q.space().clone();
    let users = synthetic_users(&space, cell.n, cell.m, rng::derive_seed(cell.seed, DATA_STREAM))?;
    let emd_mech = cell.mechanism == "emd-gaussian";
    let spec = if emd_mech {
        Some(NoiseSpec::gaussian(alpha, delta, lipschitz_constant(&q)?)?)
    } else {
        None
    };
    let release = |data: &Multiset, model: Model, s: u64| -> Result<Vec<f64>> {
        match &spec {
            Some(spec) => priv_emd_linear(&q, data, spec, model, s),
            None => user_level_gaussian_baseline(&q, data, epsilon, delta, model, s),
        }
    };
    let sigma = match &spec {
        Some(spec) => gaussian_std(spec.lipschitz, spec.effective_omega(model), delta),
        None => {
            let scale = match model {
                Model::Local => 1.0 / epsilon,
                Model::Central { n } => 1.0 / (epsilon * n as f64),
            };
            gaussian_std(user_level_sensitivity(&q), scale, delta)
        }
    };
    let (mean, std, bound) = match model {
        Model::Central { .. } => {
            let pooled = Multiset::pooled(&users)?;
            let exact = q.evaluate_multiset(&pooled)?;
            let (mean, std) = trials(cfg.grid.trials, cell.seed, |s| {
                let out = release(&pooled, model, s)?;
                Ok(l2(&out, &exact))
            })?;
            (mean, std, sigma * (d as f64).sqrt())
        }
        Model::Local => {
            // Each user releases their own answer; the error is that of the
            // average of the n releases.
            let exact: Vec<Vec<f64>> = users.iter().map(|u| q.evaluate_multiset(u)).collect::<Result<_>>()?;
            let truth = average(&exact);
            let (mean, std) = trials(cfg.grid.trials, cell.seed, |s| {
                let outs = users
                    .iter()
                    .enumerate()
                    .map(|(i, u)| release(u, Model::Local, rng::derive_seed(s, i as u64)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(l2(&average(&outs), &truth))
            })?;
            (mean, std, sigma * (d as f64 / cell.n as f64).sqrt())
        }
    };
    Ok(CellOutcome::Done {
        mean,
        std,
        bound: Some(bound),
    })
}

fn average(vs: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = vec![0.0; vs[0].len()];
    for v in vs {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x / vs.len() as f64;
        }
    }
    acc
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Least-squares slope of `ln(error)` against `ln(n)`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}
