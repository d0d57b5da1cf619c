//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line
//! with its measured values and wall time; the test fails if any does.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use emdp::audit::{verify_emd_dp, verify_item_metric_dp};
use emdp::budget::alpha_from_requirements;
use emdp::experiment::{log_log_slope, run_experiment, CellOutcome, ExperimentConfig};
use emdp::frequency::{freq_est_local, gkrr_mechanism, gkrr_right_inverse, GkrrParams};
use emdp::linear::{gamma_ball_noise, lipschitz_constant, LinearQuery, NoiseNorm, NoiseSpec};
use emdp::rng;
use emdp::shuffle::{calibrate_alpha0, effective_budget, effective_budget_with, Applicability, CalibrationMode};
use emdp::{
    build_embedding, bvn_matching, emd, emd_cost, sample_coupling, ClusteredSpace, EmbeddingTable, MetricBudget,
    MetricSpace, Model, Multiset, Requirement,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

fn random_space(rng: &mut ChaCha8Rng, k: usize) -> Arc<MetricSpace> {
    if k == 1 {
        return Arc::new(MetricSpace::discrete(1).unwrap());
    }
    let pts: Vec<Vec<f64>> = (0..k).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
    Arc::new(build_embedding(&EmbeddingTable::new(pts).unwrap()).unwrap())
}

fn random_multiset(rng: &mut ChaCha8Rng, space: &Arc<MetricSpace>, m: usize) -> Multiset {
    let items: Vec<usize> = (0..m).map(|_| rng.random_range(0..space.len())).collect();
    Multiset::from_items(space.clone(), &items).unwrap()
}

fn budget_rule() -> Outcome {
    let reqs = [
        Requirement::new(0.08, 1.0 / 30.0, 0.2).unwrap(),
        Requirement::new(0.008, 1.0, 0.2).unwrap(),
    ];
    let alpha = alpha_from_requirements(&reqs).unwrap();
    outcome((alpha - 25.0).abs() <= 1e-9, format!("alpha = {alpha}"))
}

fn calibration_example() -> Outcome {
    let target = MetricBudget::new(25.0, 1e-12).unwrap();
    let model = Model::Central { n: 100_000 };
    let alpha0 = calibrate_alpha0(&target, 1000, model, CalibrationMode::Exact).unwrap();
    let eff = effective_budget(alpha0, 1e-12, 1000, model).unwrap();
    outcome(
        (2.1..=3.9).contains(&alpha0) && eff.alpha_eff <= 25.0,
        format!("alpha0 = {alpha0:.4}, alpha_eff = {:.6}", eff.alpha_eff),
    )
}

fn emd_bvn_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0f64;
    for _ in 0..1000 {
        let k = rng.random_range(1..=8);
        let m = rng.random_range(1..=8);
        let space = random_space(&mut rng, k);
        let a = random_multiset(&mut rng, &space, m);
        let b = random_multiset(&mut rng, &space, m);
        let lp = emd_cost(&a.normalize().unwrap(), &b.normalize().unwrap()).unwrap();
        let bvn = bvn_matching(&a, &b).unwrap().cost;
        worst = worst.max((lp - bvn).abs());
    }
    outcome(
        worst <= 1e-9,
        format!("max |bvn - emd| = {worst:e} over 1000 instances"),
    )
}

fn gkrr_item_audit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_slack = 0f64;
    let mut all = true;
    for _ in 0..20 {
        let cs = ClusteredSpace::new(
            rng.random_range(1..=4),
            rng.random_range(1..=4),
            rng.random_range(0.05..0.45),
        )
        .unwrap();
        if cs.len() < 2 {
            continue;
        }
        let alpha0 = rng.random_range(0.1..5.0);
        let a = gkrr_mechanism(cs, alpha0).unwrap();
        let at = verify_item_metric_dp(&a, alpha0, 0.0).unwrap();
        let below = verify_item_metric_dp(&a, 0.9 * alpha0, 0.0).unwrap();
        let slack = at.ratio_slack.abs().max(at.divergence);
        worst_slack = worst_slack.max(slack);
        all &= at.passed && slack <= 1e-12 && !below.passed;
    }
    outcome(
        all,
        format!("worst slack at alpha0 = {worst_slack:e}; all fail at 0.9 alpha0"),
    )
}

fn end_to_end_audit() -> Outcome {
    let mut lines = Vec::new();
    let mut all = true;
    // Both two-point spaces: one cluster of two, and two singleton clusters.
    for cs in [
        ClusteredSpace::new(1, 2, 0.3).unwrap(),
        ClusteredSpace::new(2, 1, 0.3).unwrap(),
    ] {
        for m in [2u64, 3] {
            for alpha0 in [0.2, 0.5] {
                let a = gkrr_mechanism(cs, alpha0).unwrap();
                let eff = effective_budget_with(alpha0, 1e-6, m, Model::Local, Applicability::FormulaOnly).unwrap();
                let r = verify_emd_dp(&a, m, eff.alpha_eff, eff.delta_eff.min(1.0)).unwrap();
                all &= r.passed;
                lines.push(format!(
                    "{}x{} m={m} a0={alpha0}: {}",
                    cs.s,
                    cs.t,
                    if r.passed { "ok" } else { "FAIL" }
                ));
            }
        }
    }
    outcome(all, lines.join("; "))
}

fn inverse_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut inv, mut coef) = (0f64, 0f64);
    for _ in 0..50 {
        let cs = ClusteredSpace::new(
            rng.random_range(1..=5),
            rng.random_range(1..=5),
            rng.random_range(0.05..0.45),
        )
        .unwrap();
        let p = GkrrParams::new(cs, rng.random_range(0.1..6.0)).unwrap();
        let a = p.matrix();
        let b = gkrr_right_inverse(&p).unwrap();
        let id = DMatrix::<f64>::identity(cs.len(), cs.len());
        inv = inv.max((&b * &a - &id).amax()).max((&a * &b - &id).amax());
        let (ap, bp, cp) = p.inverse_coefficients().unwrap();
        coef = coef.max((ap + cs.t as f64 * bp + (cs.s * cs.t) as f64 * cp - 1.0).abs());
    }
    outcome(
        inv <= 1e-9 && coef <= 1e-12,
        format!("max |BA - I| = {inv:e}, max |a'+tb'+stc' - 1| = {coef:e}"),
    )
}

fn unbiasedness() -> Outcome {
    let cs = ClusteredSpace::new(2, 3, 0.3).unwrap();
    let space = Arc::new(cs.metric().unwrap());
    let p = GkrrParams::new(cs, 1.0).unwrap();
    let chan = gkrr_mechanism(cs, 1.0).unwrap();
    let b = gkrr_right_inverse(&p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let users: Vec<Multiset> = (0..50).map(|_| random_multiset(&mut rng, &space, 20)).collect();
    let truth = Multiset::pooled(&users).unwrap().normalize().unwrap();
    let k = cs.len();
    let kt = DMatrix::from_row_slice(1, k, truth.mass());
    let exact = (&kt * p.matrix() * &b - &kt).amax();

    let trials = 10_000u64;
    let mut sum = vec![0.0; k];
    let mut sq = vec![0.0; k];
    for t in 0..trials {
        let est = freq_est_local(&users, &chan, &b, rng::derive_seed(70, t)).unwrap();
        for i in 0..k {
            sum[i] += est[i];
            sq[i] += est[i] * est[i];
        }
    }
    let n = trials as f64;
    let mut worst_z = 0f64;
    for i in 0..k {
        let mean = sum[i] / n;
        let se = ((sq[i] / n - mean * mean) * n / (n - 1.0) / n).sqrt();
        worst_z = worst_z.max((mean - truth.mass()[i]).abs() / se);
    }
    outcome(
        exact <= 1e-9 && worst_z <= 4.0,
        format!("|KAB - K| = {exact:e}, worst |z| = {worst_z:.3}"),
    )
}

fn projection_smoothness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (s, delta, trials) = (500usize, 0.05, 2000u64);
    let mut violations = 0u64;
    for t in 0..trials {
        let k = rng.random_range(2..=6);
        let space = random_space(&mut rng, k);
        let m1 = rng.random_range(1..=12);
        let m2 = rng.random_range(1..=12);
        let a = random_multiset(&mut rng, &space, m1).normalize().unwrap();
        let b = random_multiset(&mut rng, &space, m2).normalize().unwrap();
        let (cost, plan) = emd(&a, &b).unwrap();
        let pairs = sample_coupling(&plan, s, rng::derive_seed(80, t)).unwrap();
        let (l1, l2): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let l1 = Multiset::from_items(space.clone(), &l1).unwrap().normalize().unwrap();
        let l2 = Multiset::from_items(space.clone(), &l2).unwrap().normalize().unwrap();
        let bound = emdp::reduction::projection_bound(cost, s as u64, delta);
        if emd_cost(&l1, &l2).unwrap() > bound {
            violations += 1;
        }
    }
    let rate = violations as f64 / trials as f64;
    outcome(rate <= 0.07, format!("violation rate = {rate:.4}"))
}

fn sensitivity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..500 {
        let k = rng.random_range(2..=7);
        let d = rng.random_range(1..=4);
        let space = random_space(&mut rng, k);
        let f = DMatrix::from_fn(d, k, |_, _| rng.random_range(-1.0..1.0));
        let q = LinearQuery::new(space.clone(), f).unwrap();
        let ell = lipschitz_constant(&q).unwrap();
        let m1 = rng.random_range(1..=10);
        let m2 = rng.random_range(1..=10);
        let a = random_multiset(&mut rng, &space, m1);
        let b = random_multiset(&mut rng, &space, m2);
        let (qa, qb) = (q.evaluate_multiset(&a).unwrap(), q.evaluate_multiset(&b).unwrap());
        let gap: f64 = qa.iter().zip(&qb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let e = emd_cost(&a.normalize().unwrap(), &b.normalize().unwrap()).unwrap();
        worst = worst.max(gap - ell * e);
    }
    outcome(worst <= 1e-9, format!("max (||q(K) - q(K')|| - l emd) = {worst:e}"))
}

const LOCAL_SCALING: &str = r#"
[scenario]
name = "local-gkrr"
kind = "frequency"
model = "local"
mechanisms = ["gkrr"]
space = "clustered:2,2,0.3"

[grid]
n = [100, 1000, 10000]
m = [20]
trials = 40

[budget]
alpha = 40.0
delta = 1e-6
calibration = "fixed"
alpha0 = 2.0
"#;

const CENTRAL_SCALING: &str = r#"
[scenario]
name = "central-gkrr"
kind = "frequency"
model = "central"
mechanisms = ["gkrr"]
space = "clustered:2,2,0.3"

[grid]
n = [100, 1000, 10000]
m = [1000]
trials = 40

[budget]
alpha = 100.0
delta = 1e-6
calibration = "asymptotic"
"#;

const LINEAR_MATCH: &str = r#"
[scenario]
name = "linear"
kind = "linear"
model = "central"
mechanisms = ["emd-gaussian", "user-gaussian"]
k = 8
d = 3

[grid]
n = [1000]
m = [10]
trials = 200

[budget]
alpha = 2.0
epsilon = 2.0
delta = 1e-6
calibration = "fixed"
alpha0 = 1.0
"#;

fn means(text: &str) -> Vec<(f64, f64)> {
    let cfg = ExperimentConfig::parse(text).unwrap();
    let report = run_experiment(&cfg, 2024).unwrap();
    report
        .rows
        .iter()
        .map(|r| match r.outcome {
            CellOutcome::Done { mean, .. } => (r.n as f64, mean),
            CellOutcome::Skipped(ref why) => panic!("cell skipped: {why}"),
        })
        .collect()
}

fn scaling() -> Outcome {
    let local = log_log_slope(&means(LOCAL_SCALING));
    let central = log_log_slope(&means(CENTRAL_SCALING));
    let lin = means(LINEAR_MATCH);
    let ratio = lin[0].1 / lin[1].1;
    outcome(
        (-0.6..=-0.4).contains(&local) && (-1.2..=-0.8).contains(&central) && (ratio - 1.0).abs() <= 0.05,
        format!("local slope = {local:.3}, central slope = {central:.3}, linear error ratio = {ratio:.4}"),
    )
}

fn noise_calibration() -> Outcome {
    let (d, ell, alpha) = (3usize, 1.5, 2.0);
    let spec = NoiseSpec::gamma_ball(alpha, ell).unwrap();
    let scale = ell * spec.effective_omega(Model::Local);
    let mut rng = rng::stream(11);
    let draws = 100_000;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..draws {
        let v = gamma_ball_noise(&mut rng, d, scale, NoiseNorm::L2).unwrap();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        sum += norm;
        sq += norm * norm;
    }
    let n = draws as f64;
    let mean = sum / n;
    let se = ((sq / n - mean * mean) / n).sqrt();
    let expected = ell * d as f64 * spec.omega;
    let z = (mean - expected).abs() / se;
    let worked = 1.0 * 1.0 * NoiseSpec::gamma_ball(25.0, 1.0).unwrap().omega;
    outcome(
        z <= 3.0 && (worked - 0.04).abs() <= 1e-12,
        format!("mean = {mean:.5} vs {expected:.5} (|z| = {z:.3}); worked value = {worked}"),
    )
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 11] = [
        (1, "budget rule", Duration::from_millis(1), budget_rule),
        (2, "calibration example", Duration::from_secs(5), calibration_example),
        (3, "emd / bvn equivalence", Duration::from_secs(30), emd_bvn_equivalence),
        (4, "gkrr exact item audit", Duration::from_secs(10), gkrr_item_audit),
        (5, "end-to-end shuffle audit", Duration::from_secs(60), end_to_end_audit),
        (6, "inverse identities", Duration::from_secs(5), inverse_identities),
        (7, "unbiasedness", Duration::from_secs(60), unbiasedness),
        (
            8,
            "projection smoothness",
            Duration::from_secs(120),
            projection_smoothness,
        ),
        (9, "linear query sensitivity", Duration::from_secs(60), sensitivity),
        (10, "scaling reproduction", Duration::from_secs(600), scaling),
        (11, "noise calibration", Duration::from_secs(10), noise_calibration),
    ];
    let mut failed = Vec::new();
    for (id, name, limit, check) in criteria {
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let ok = result.passed && took <= limit;
        println!(
            "[{}] {id:>2} {name}: {} ({:.3?} / limit {:?})",
            if ok { "PASS" } else { "FAIL" },
            result.detail,
            took,
            limit
        );
        if !ok {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
