//! Acceptance suite. Each test prints one line
//! `criterion NN PASS|FAIL <name>: <detail>` and then asserts.
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::path::Path;
use std::process::Command;

use causal_ate::cli::fit_scores;
use causal_ate::data::FoldSplit;
use causal_ate::ingest::{composite_health_score, rescale_marker, MarkerSpec, Orientation, WeightProfile};
use causal_ate::lins::lins_on_split;
use causal_ate::matching::assignment::assignment_cost;
use causal_ate::matching::{balance_table, match_with_caliper, min_cost_assignment, optimal_match, DistanceMatrix};
use causal_ate::models::ModelKind;
use causal_ate::simulation::{
    generate_dgp, ipw_identity, propensity_bin_balance, run_replications, DgpConfig, Misspecification,
    SimEstimator,
};
use causal_ate::stats::sample_sd;
use causal_ate::weighting::{
    aipw_from_predictions, estimate_aipw, estimate_hajek, estimate_ht, Truncation, WeightingConfig,
};
use causal_ate::Dataset;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances and thresholds.
const MAX_ABS_BIAS: f64 = 0.1;
const COVERAGE_RANGE: (f64, f64) = (0.90, 0.98);
const SHIFT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const DR_MAX_ABS_BIAS: f64 = 0.05;
const HT_MIN_ABS_BIAS: f64 = 0.1;
const BALANCE_MIN_SHARE: f64 = 0.95;
const DECILE_MAX_SMD: f64 = 0.1;
const MAX_Z: f64 = 3.0;

const REPLICATIONS: usize = 200;
const SHIFTS: [f64; 3] = [-100.0, 1.0, 3.7];

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {id:02} {} {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {id} failed: {detail}");
}

fn base_dgp(n: usize, seed: u64) -> DgpConfig {
    DgpConfig {
        n,
        d: 5,
        beta: vec![0.4, -0.3, 0.2, 0.0, 0.1],
        gamma: vec![1.0, 0.5, -0.5, 0.3, 0.0],
        alpha: 1.0,
        tau: 2.0,
        noise_sd: 1.0,
        misspec: Misspecification::None,
        hidden_covariate: 0,
        seed,
    }
}

/// Random studies of varied size and dimension with fitted scores.
fn random_studies(count: usize, seed: u64) -> Vec<(Dataset, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let d = rng.random_range(1..=4);
            let cfg = DgpConfig {
                n: rng.random_range(50..=300),
                d,
                beta: (0..d).map(|_| rng.random_range(-0.8..0.8)).collect(),
                gamma: (0..d).map(|_| rng.random_range(-2.0..2.0)).collect(),
                alpha: rng.random_range(-5.0..5.0),
                tau: rng.random_range(-3.0..3.0),
                noise_sd: 1.0,
                misspec: Misspecification::None,
                hidden_covariate: 0,
                seed: seed + k as u64,
            };
            let ds = generate_dgp(&cfg).unwrap();
            let e = fit_scores(&ds).unwrap();
            (ds, e)
        })
        .collect()
}

fn shifted(ds: &Dataset, c: f64) -> Dataset {
    ds.with_outcome(ds.outcome.iter().map(|y| y + c).collect()).unwrap()
}

#[test]
fn criterion_01_oracle_recovery() {
    let started = std::time::Instant::now();
    let summary = run_replications(
        &base_dgp(2000, 0),
        &SimEstimator::default_set(),
        REPLICATIONS,
        20_240_601,
        &WeightingConfig::default(),
    )
    .unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for row in &summary.rows {
        let ok = row.failures == 0
            && row.mean_bias.abs() < MAX_ABS_BIAS
            && (COVERAGE_RANGE.0..=COVERAGE_RANGE.1).contains(&row.coverage);
        pass &= ok;
        parts.push(format!("{} bias {:+.4} cov {:.3}", row.method, row.mean_bias, row.coverage));
    }
    pass &= summary.rows.len() == 5;
    let detail = format!("{} ({:.0?})", parts.join("; "), started.elapsed());
    report(1, "oracle recovery", pass, &detail);
}

#[test]
fn criterion_02_hajek_location_invariance() {
    let cfg = WeightingConfig::default();
    let mut worst: f64 = 0.0;
    for (ds, e) in random_studies(100, 11) {
        let base = estimate_hajek(&ds, &e, &cfg).unwrap().tau_hat;
        for c in SHIFTS {
            let moved = estimate_hajek(&shifted(&ds, c), &e, &cfg).unwrap().tau_hat;
            worst = worst.max((moved - base).abs());
        }
    }
    report(2, "Hajek location invariance", worst < SHIFT_TOL, &format!("max |diff| {worst:.3e} over 100 datasets x 3 shifts"));
}

#[test]
fn criterion_03_ht_shift_identity() {
    let cfg = WeightingConfig::default();
    let mut worst: f64 = 0.0;
    let mut nonzero = 0;
    for (ds, e) in random_studies(100, 11) {
        let e_used = Truncation::default().apply(&e);
        let base = estimate_ht(&ds, &e, &cfg).unwrap().tau_hat;
        for c in SHIFTS {
            let moved = estimate_ht(&shifted(&ds, c), &e, &cfg).unwrap().tau_hat;
            // tau(Y) - tau(Y + c) = (1/n) sum c (e - Z) / (e (1 - e))
            let closed = (0..ds.n())
                .map(|i| c * (e_used[i] - ds.z(i)) / (e_used[i] * (1.0 - e_used[i])))
                .sum::<f64>()
                / ds.n() as f64;
            worst = worst.max(((base - moved) - closed).abs());
            nonzero += usize::from(closed.abs() > 1e-6);
        }
    }
    report(
        3,
        "HT shift identity",
        worst < SHIFT_TOL && nonzero > 0,
        &format!("max |tau(Y) - tau(Y+c) - closed form| {worst:.3e}; {nonzero}/300 shifts move the estimate"),
    );
}

#[test]
fn criterion_04_aipw_collapse() {
    let mut stub_equal = 0;
    let mut oracle_equal = 0;
    let stub_cfg = WeightingConfig {
        outcome_model: ModelKind::ConstantStub(0.0),
        ..WeightingConfig::default()
    };
    let studies = random_studies(20, 41);
    for (ds, e) in &studies {
        let aipw = estimate_aipw(ds, e, &stub_cfg).unwrap().tau_hat;
        let ht = estimate_ht(ds, e, &stub_cfg).unwrap().tau_hat;
        stub_equal += usize::from(aipw.to_bits() == ht.to_bits());

        let oracle = ds.oracle.as_ref().unwrap();
        let truth = oracle.y1.iter().zip(&oracle.y0).map(|(a, b)| a - b).sum::<f64>() / ds.n() as f64;
        let with_oracle = aipw_from_predictions(ds, e, &oracle.y1, &oracle.y0, &WeightingConfig::default())
            .unwrap()
            .tau_hat;
        oracle_equal += usize::from(with_oracle.to_bits() == truth.to_bits());
    }
    let n = studies.len();
    report(
        4,
        "AIPW collapse",
        stub_equal == n && oracle_equal == n,
        &format!("zero stubs == HT in {stub_equal}/{n}; oracle models == mean oracle difference in {oracle_equal}/{n}"),
    );
}

#[test]
fn criterion_05_lins_hand_trace() {
    let ds = Dataset::new(
        DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]),
        vec![1, 0, 1, 0],
        vec![4.0, 2.0, 6.0, 0.0],
        vec!["x".to_string()],
    )
    .unwrap();
    let split = FoldSplit {
        fold1: vec![0, 1],
        fold2: vec![2, 3],
        seed: 0,
    };
    let r = lins_on_split(&ds, &split, &ModelKind::ConstantStub(0.0)).unwrap();
    let (t1, t2, t) = (r.folds[0].tau, r.folds[1].tau, r.estimate.tau_hat);
    report(
        5,
        "Lin's hand trace",
        t1 == 2.0 && t2 == 6.0 && t == 4.0,
        &format!("tau_I1 = {t1}, tau_I2 = {t2}, tau = {t}"),
    );
}

/// Lexicographically best (cardinality, -cost) over all partial injections.
fn brute_force(rows: &[Vec<f64>]) -> (usize, f64) {
    fn go(rows: &[Vec<f64>], r: usize, used: &mut [bool], card: usize, cost: f64, best: &mut (usize, f64)) {
        if r == rows.len() {
            if card > best.0 || (card == best.0 && cost < best.1) {
                *best = (card, cost);
            }
            return;
        }
        go(rows, r + 1, used, card, cost, best);
        for c in 0..used.len() {
            if !used[c] && rows[r][c].is_finite() {
                used[c] = true;
                go(rows, r + 1, used, card + 1, cost + rows[r][c], best);
                used[c] = false;
            }
        }
    }
    let mut best = (0, 0.0);
    go(rows, 0, &mut vec![false; rows[0].len()], 0, 0.0, &mut best);
    best
}

#[test]
fn criterion_06_matching_optimality_and_feasibility() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut optimal = 0;
    for _ in 0..1000 {
        let (nr, nc) = (rng.random_range(2..=8), rng.random_range(2..=8));
        let rows: Vec<Vec<f64>> = (0..nr)
            .map(|_| {
                (0..nc)
                    .map(|_| if rng.random::<f64>() < 0.2 { f64::INFINITY } else { rng.random_range(0.0..10.0) })
                    .collect()
            })
            .collect();
        let dist = DistanceMatrix::from_rows(&rows);
        let a = min_cost_assignment(&dist);
        let (card, cost) = brute_force(&rows);
        let mut cols: Vec<usize> = a.iter().flatten().copied().collect();
        cols.sort_unstable();
        cols.dedup();
        if cols.len() == card
            && a.iter().flatten().count() == card
            && (assignment_cost(&dist, &a) - cost).abs() < COST_TOL
        {
            optimal += 1;
        }
    }

    let mut violations = 0;
    let mut pairs = 0;
    for seed in 0..20 {
        let ds = generate_dgp(&base_dgp(400, 600 + seed)).unwrap();
        let e = fit_scores(&ds).unwrap();
        for caliper in [0.05, 0.1, 0.2] {
            let bound = caliper * sample_sd(&e);
            let m = match_with_caliper(&ds, &e, caliper).unwrap();
            pairs += m.pairs.len();
            violations += m.pairs.iter().filter(|&&(t, c)| (e[t] - e[c]).abs() > bound).count();
        }
    }

    let small = optimal_match(&DistanceMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 10.0]]));
    report(
        6,
        "matching optimality and feasibility",
        optimal == 1000 && violations == 0 && small.total_distance == 2.0,
        &format!(
            "{optimal}/1000 match exhaustive search; {violations} caliper violations in {pairs} pairs; [[0,1],[1,10]] total {}",
            small.total_distance
        ),
    );
}

#[test]
fn criterion_07_double_robustness() {
    let estimators = [SimEstimator::Aipw, SimEstimator::HorvitzThompson];
    let run = |misspec| {
        let cfg = DgpConfig {
            misspec,
            ..base_dgp(2000, 0)
        };
        run_replications(&cfg, &estimators, REPLICATIONS, 70_000, &WeightingConfig::default()).unwrap()
    };
    let outcome_wrong = run(Misspecification::HideCovariateFromOutcome);
    let score_wrong = run(Misspecification::HideCovariateFromPropensity);
    let aipw_o = outcome_wrong.row("AIPW").unwrap().mean_bias;
    let aipw_p = score_wrong.row("AIPW").unwrap().mean_bias;
    let ht_p = score_wrong.row("Horvitz-Thompson").unwrap().mean_bias;
    report(
        7,
        "double robustness",
        aipw_o.abs() < DR_MAX_ABS_BIAS && aipw_p.abs() < DR_MAX_ABS_BIAS && ht_p.abs() > HT_MIN_ABS_BIAS,
        &format!("AIPW bias {aipw_o:+.4} (outcome model wrong), {aipw_p:+.4} (score model wrong); HT bias {ht_p:+.4} (score model wrong)"),
    );
}

#[test]
fn criterion_08_balance_improvement() {
    let mut improved = 0;
    let mut worst_post: f64 = 0.0;
    for seed in 0..100 {
        let ds = generate_dgp(&base_dgp(2000, 8_000 + seed)).unwrap();
        let e = fit_scores(&ds).unwrap();
        let m = match_with_caliper(&ds, &e, 0.1).unwrap();
        let b = balance_table(&ds, Some(&m), &e).unwrap();
        let post = b.max_abs_post().unwrap_or(f64::INFINITY);
        worst_post = worst_post.max(post);
        improved += usize::from(post < b.max_abs_pre());
    }
    let share = improved as f64 / 100.0;
    report(
        8,
        "balance improvement",
        share >= BALANCE_MIN_SHARE,
        &format!("post < pre in {improved}/100 seeds; largest post-match max |SMD| {worst_post:.4}"),
    );
}

#[test]
fn criterion_09_ingestion_exactness() {
    let spec = MarkerSpec::new("m", 1, 4, Orientation::AscendingGood);
    let desc = MarkerSpec::new("m", 1, 7, Orientation::DescendingGood);
    let nonresponse = [98, 99].map(|c| rescale_marker(c, &spec).unwrap());
    let unit = composite_health_score(&[9.0; 17], &WeightProfile::unit()).unwrap();
    let scaled = composite_health_score(&[9.0; 17], &WeightProfile::scaled()).unwrap();
    let total = WeightProfile::scaled().total_weight();
    let ends = [
        rescale_marker(1, &spec).unwrap(),
        rescale_marker(4, &spec).unwrap(),
        rescale_marker(7, &desc).unwrap(),
        rescale_marker(1, &desc).unwrap(),
    ];
    report(
        9,
        "ingestion exactness",
        nonresponse == [4.5, 4.5] && unit == 153.0 && scaled == 126.0 && total == 14.0 && ends == [0.0, 9.0, 0.0, 9.0],
        &format!("98/99 -> {nonresponse:?}; unit all-9 {unit}; scaled all-9 {scaled} (sum w {total}); endpoints {ends:?}"),
    );
}

#[test]
fn criterion_10_propensity_identities() {
    let ds = generate_dgp(&base_dgp(20_000, 10)).unwrap();
    let bins = propensity_bin_balance(&ds, 10).unwrap();
    let ipw = ipw_identity(&ds).unwrap();
    let z = ipw.z_score();
    report(
        10,
        "propensity identities",
        bins.average < DECILE_MAX_SMD && z.abs() < MAX_Z,
        &format!(
            "mean within-decile |SMD| {:.4}; mean(ZY/e) {:.4} vs mean(Y(1)) {:.4}, z = {z:+.2}",
            bins.average, ipw.weighted_mean, ipw.oracle_mean
        ),
    );
}

fn run_cli(command: &str, config: &Path) {
    let status = Command::new(env!("CARGO_BIN_EXE_causal-ate"))
        .args([command, "--config"])
        .arg(config)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
}

#[test]
fn criterion_11_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let ds = generate_dgp(&base_dgp(600, 11)).unwrap();
    Dataset { oracle: None, ..ds }
        .write_csv(root.join("study.csv"), &Default::default())
        .unwrap();
    let simulate = "[simulate]\nreplications = 12\n[simulate.dgp]\nn = 400\nd = 2\nbeta = [0.5, -0.3]\ngamma = [1.0, 0.5]\ntau = 2.0\n";
    for run in ["a", "b"] {
        let text = format!("seed = 99\n[output]\ndir = \"out_{run}\"\n[data]\npath = \"study.csv\"\n{simulate}");
        let path = root.join(format!("{run}.toml"));
        std::fs::write(&path, text).unwrap();
        run_cli("estimate", &path);
        run_cli("simulate", &path);
    }
    let files = ["estimate.csv", "estimate.txt", "simulation.csv", "simulation.txt"];
    let same: Vec<bool> = files
        .iter()
        .map(|f| std::fs::read(root.join("out_a").join(f)).unwrap() == std::fs::read(root.join("out_b").join(f)).unwrap())
        .collect();
    report(
        11,
        "determinism",
        same.iter().all(|&s| s),
        &format!("byte-identical: {}", files.iter().zip(&same).map(|(f, s)| format!("{f}={s}")).collect::<Vec<_>>().join(" ")),
    );
}
