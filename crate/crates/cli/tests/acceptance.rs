//! End-to-end acceptance gate. Each test covers one numbered criterion and
//! prints a single PASS/FAIL line (visible with --nocapture, or on failure).
//!
//! The criteria pin down the contract of the whole workspace: estimator
//! exactness and speed, the variance sandwich, the shifted-population
//! certificate, finite-sample error rates, deviation radii, training
//! gradients, the regularization tradeoff, and the CLI's determinism.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mwld_core::audit::shift_check_section;
use mwld_core::data::{
    builtin_schema, load_csv, load_csv_with_manifest, population_of_atoms, split_train_test,
    synth_discrete_loss_population, synth_two_group, write_csv,
};
use mwld_core::estimator::{
    brute_force_mwld, convergence_error_bound, empirical_mwld, group_loss_bound,
};
use mwld_core::loss::{group_fraction, group_mean};
use mwld_core::model::{log_loss_bound, LinearModel};
use mwld_core::trainer::{
    doubled_lambda_grid, fit, lambda_sweep, log_losses, objective_gradient, objective_value_on,
    Objective, TrainConfig, LAMBDA_GRID,
};
use mwld_core::variance::{
    coarse_loss_variance, conditional_coarse_loss_variance, conditional_loss_variance,
    loss_variance, sandwich_envelope, unbiased_loss_variance, variance_upper_bound_general_l,
    coarse_deviation, maurer_deviation,
};
use mwld_core::{GroupMask, LabelVector, LossVector, SensitiveKeyVector, Weighting};

fn report(id: u32, name: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("criterion {id:02} ({name}): {verdict} [{detail}]");
    assert!(ok, "criterion {id:02} ({name}) failed: {detail}");
}

fn random_losses(rng: &mut ChaCha8Rng, n: usize) -> LossVector {
    let values: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    LossVector::uniform(values, 1.0).unwrap()
}

/// Eight-atom discrete loss distribution used wherever a known population
/// value is needed. Masses sum to one exactly.
const ATOMS: [(f64, f64); 8] = [
    (0.05, 0.30),
    (0.15, 0.20),
    (0.30, 0.15),
    (0.40, 0.10),
    (0.55, 0.10),
    (0.70, 0.05),
    (0.85, 0.05),
    (0.95, 0.05),
];

// 1. The sorted scan equals the exhaustive oracle on every group, across
//    weight exponents, to 1e-12.
#[test]
fn criterion_01_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ks = [0.1, 0.3, 0.5, 1.0];
    let mut max_diff = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=12);
        let losses = random_losses(&mut rng, n);
        for &k in &ks {
            let scan = empirical_mwld(&losses, k).unwrap().value;
            let oracle = brute_force_mwld(&losses, &Weighting::PowerK(k))
                .unwrap()
                .value;
            max_diff = max_diff.max((scan - oracle).abs());
        }
    }
    report(
        1,
        "oracle equivalence",
        max_diff <= 1e-12,
        &format!("1000 vectors x 4 exponents, max |scan - oracle| = {max_diff:.3e}"),
    );
}

// 2. The scan handles a million samples in under a second and scales like
//    n log n, not n^2.
#[test]
fn criterion_02_scan_speed() {
    let big: Vec<f64> = (0..1_000_000).map(|i| i as f64 / 1e6).collect();
    let big = LossVector::uniform(big, 1.0).unwrap();
    let small: Vec<f64> = (0..100_000).map(|i| i as f64 / 1e5).collect();
    let small = LossVector::uniform(small, 1.0).unwrap();

    let time_best_of_3 = |l: &LossVector| {
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            let start = Instant::now();
            let r = empirical_mwld(l, 0.5).unwrap();
            assert!(r.value >= 0.0);
            best = best.min(start.elapsed().as_secs_f64());
        }
        best
    };
    let t_big = time_best_of_3(&big);
    let t_small = time_best_of_3(&small).max(1e-6);
    let ratio = t_big / t_small;
    report(
        2,
        "scan speed",
        t_big < 1.0 && ratio < 15.0,
        &format!("1e6 samples in {t_big:.4}s, 1e6/1e5 time ratio {ratio:.1}"),
    );
}

// 3. The variance sandwich holds on random loss vectors, and the general
//    scale bound holds after stretching losses to [0, 7.5].
#[test]
fn criterion_03_variance_sandwich() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst_lower = f64::INFINITY;
    let mut worst_upper = f64::INFINITY;
    let mut worst_general = f64::INFINITY;
    const L: f64 = 7.5;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=200);
        let losses = random_losses(&mut rng, n);
        let half = empirical_mwld(&losses, 0.5).unwrap().value;
        let sd = loss_variance(&losses).sqrt();
        worst_lower = worst_lower.min(sd - half);
        worst_upper = worst_upper.min(sandwich_envelope(half).unwrap() - sd);

        let stretched: Vec<f64> = losses.values().iter().map(|v| v * L).collect();
        let stretched = LossVector::uniform(stretched, L).unwrap();
        let gamma = empirical_mwld(&stretched, 0.5).unwrap().value;
        if gamma > 0.0 {
            let ceiling = variance_upper_bound_general_l(gamma, L).unwrap();
            worst_general = worst_general.min(ceiling - loss_variance(&stretched));
        }
    }
    let ok = worst_lower >= -1e-9 && worst_upper >= -1e-9 && worst_general >= -1e-9;
    report(
        3,
        "variance sandwich",
        ok,
        &format!(
            "1000 vectors, slack: lower {worst_lower:.3e}, envelope {worst_upper:.3e}, \
             general-scale {worst_general:.3e}"
        ),
    );
}

// 4. The shifted-population certificate: for every sampled subgroup, the
//    reweighted mean stays below mean + discrepancy.
#[test]
fn criterion_04_shift_certificate() {
    let losses = synth_discrete_loss_population(&ATOMS, 400, 17).unwrap();
    let mut min_margin = f64::INFINITY;
    let mut checked = 0usize;
    for &k in &[0.5, 1.0] {
        let section = shift_check_section(&losses, k, 10_000, 99).unwrap();
        assert_eq!(section.skipped, 0, "no coin mask should be empty at n=400");
        checked += section.trials - section.skipped;
        min_margin = min_margin.min(section.min_margin);
    }
    report(
        4,
        "shift certificate",
        checked >= 10_000 && min_margin >= -1e-9,
        &format!("{checked} random subgroups, smallest margin {min_margin:.3e}"),
    );
}

// 5. Finite-sample behavior of the plug-in estimate against the known
//    population value: deviations shrink with n and respect the stated
//    error rates at delta = 0.2.
#[test]
fn criterion_05_convergence_rates() {
    let population = population_of_atoms(&ATOMS).unwrap();
    let delta = 0.2;
    let sizes = [1_000usize, 10_000, 100_000];
    let trials = 200;
    let mut detail = String::new();
    let mut ok = true;
    for (ki, &k) in [0.5f64, 1.0].iter().enumerate() {
        let truth = brute_force_mwld(&population, &Weighting::PowerK(k))
            .unwrap()
            .value;
        let mut medians = Vec::new();
        for (ni, &n) in sizes.iter().enumerate() {
            let bound = convergence_error_bound(n, delta, k).unwrap();
            let mut deviations = Vec::with_capacity(trials);
            let mut under_violations = 0usize;
            let mut over_violations = 0usize;
            for t in 0..trials {
                let seed = (ki as u64 * 31 + ni as u64) * 100_000 + t as u64;
                let sample = synth_discrete_loss_population(&ATOMS, n, seed).unwrap();
                let estimate = empirical_mwld(&sample, k).unwrap().value;
                deviations.push((estimate - truth).abs());
                if truth - estimate > bound.lower_side_bound {
                    under_violations += 1;
                }
                if estimate - truth > bound.upper_side_bound {
                    over_violations += 1;
                }
            }
            deviations.sort_by(|a, b| a.total_cmp(b));
            medians.push(deviations[trials / 2]);
            let limit = (delta * trials as f64) as usize;
            if under_violations > limit || over_violations > limit {
                ok = false;
            }
            detail.push_str(&format!(
                "k={k} n={n}: med {:.4}, viol {}/{}; ",
                medians[ni],
                under_violations + over_violations,
                trials
            ));
        }
        if !(medians[0] > medians[1] && medians[1] > medians[2]) {
            ok = false;
            detail.push_str(&format!("medians not decreasing for k={k}; "));
        }
    }
    report(5, "convergence rates", ok, detail.trim_end_matches("; "));
}

// 6. The two deviation radii cover their quantities at the stated
//    confidence in a Monte Carlo over a four-cell Bernoulli population.
#[test]
fn criterion_06_deviation_radii() {
    let n = 2000usize;
    let delta = 0.02;
    let t_cells = 4usize;
    let trials = 500;
    let cell_rates = [0.2, 0.4, 0.6, 0.8];
    // Total variance: mean Bernoulli variance + variance of cell means.
    let true_sd = (0.2f64 + 0.05).sqrt();
    let true_coarse_sd = 0.05f64.sqrt();

    let sd_radius = maurer_deviation(n, delta).unwrap();
    let coarse_radius = coarse_deviation(n, delta, t_cells).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut sd_misses = 0usize;
    let mut coarse_misses = 0usize;
    for _ in 0..trials {
        let mut values = Vec::with_capacity(n);
        let mut keys = Vec::with_capacity(n);
        for _ in 0..n {
            let cell = rng.gen_range(0..t_cells);
            let loss = f64::from(rng.gen::<f64>() < cell_rates[cell]);
            values.push(loss);
            keys.push(format!("g{cell}"));
        }
        let losses = LossVector::uniform(values, 1.0).unwrap();
        let keys = SensitiveKeyVector::new(keys).unwrap();
        let sample_sd = unbiased_loss_variance(&losses).unwrap().sqrt();
        if (sample_sd - true_sd).abs() > sd_radius {
            sd_misses += 1;
        }
        let coarse_sd = coarse_loss_variance(&losses, &keys).unwrap().sqrt();
        if (coarse_sd - true_coarse_sd).abs() > coarse_radius {
            coarse_misses += 1;
        }
    }
    // Radii hold with probability 1 - delta and 1 - (T + 3) delta.
    let sd_limit = (delta * trials as f64).ceil() as usize;
    let coarse_limit = ((t_cells + 3) as f64 * delta * trials as f64).ceil() as usize;
    report(
        6,
        "deviation radii",
        sd_misses <= sd_limit && coarse_misses <= coarse_limit,
        &format!(
            "sd radius {sd_radius:.4} missed {sd_misses}/{trials} (allowed {sd_limit}), \
             coarse radius {coarse_radius:.4} missed {coarse_misses}/{trials} (allowed {coarse_limit})"
        ),
    );
}

// 7. Analytic training gradients match central differences for all three
//    objectives at random weights.
#[test]
fn criterion_07_gradient_check() {
    let objectives = [Objective::Lr, Objective::Lv, Objective::Clv];
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for i in 0..100u64 {
        let data = synth_two_group(40, 0.4, 0.2, 9000 + i).unwrap();
        let labels = data.labels().as_slice();
        assert!(
            labels.contains(&0) && labels.contains(&1),
            "both classes present at n=40"
        );
        let objective = objectives[(i % 3) as usize];
        let lambda = if objective == Objective::Lr { 0.0 } else { 0.7 };
        let config = TrainConfig::new(objective, 0.01, lambda, i);
        let width = data.feature_count() + 1;
        let weights: Vec<f64> = (0..width).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let model = LinearModel::from_weights(weights.clone()).unwrap();
        let rows: Vec<usize> = (0..data.len()).collect();
        let analytic = objective_gradient(&model, &data, &rows, &config).unwrap();
        let h = 1e-5;
        for j in 0..width {
            let mut plus = weights.clone();
            plus[j] += h;
            let mut minus = weights.clone();
            minus[j] -= h;
            let f_plus = objective_value_on(
                &LinearModel::from_weights(plus).unwrap(),
                &data,
                &rows,
                &config,
            )
            .unwrap();
            let f_minus = objective_value_on(
                &LinearModel::from_weights(minus).unwrap(),
                &data,
                &rows,
                &config,
            )
            .unwrap();
            let numeric = (f_plus - f_minus) / (2.0 * h);
            let rel = (analytic[j] - numeric).abs() / analytic[j].abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    report(
        7,
        "gradient check",
        worst <= 1e-5,
        &format!("100 random configs x all coordinates, worst relative error {worst:.3e}"),
    );
}

// 8. On imbalanced synthetic data, some grid lambda halves the variance
//    penalty while raising test loss by at most 15 percent, for both
//    penalized objectives, averaged over seeds.
#[test]
fn criterion_08_variance_regularization() {
    let seeds = [100u64, 101, 102, 103, 104];
    let mut detail = String::new();
    let mut all_ok = true;
    for (objective, grid) in [
        (Objective::Lv, LAMBDA_GRID.to_vec()),
        (Objective::Clv, doubled_lambda_grid()),
    ] {
        let mut penalty_sums = vec![0.0f64; grid.len()];
        let mut loss_sums = vec![0.0f64; grid.len()];
        for &seed in &seeds {
            let data = synth_two_group(5000, 0.3, 0.3, seed).unwrap();
            let (train, test) = split_train_test(&data, 0.3, seed).unwrap();
            let config = TrainConfig::new(objective, 0.01, 0.0, seed);
            let points = lambda_sweep(&train, &test, &config, &grid).unwrap();
            assert_eq!(points.len(), grid.len());
            for (i, p) in points.iter().enumerate() {
                penalty_sums[i] += p.test_penalty;
                loss_sums[i] += p.test_mean_loss;
            }
        }
        let base_penalty = penalty_sums[0] / seeds.len() as f64;
        let base_loss = loss_sums[0] / seeds.len() as f64;
        let winner = (1..grid.len()).find(|&i| {
            penalty_sums[i] / seeds.len() as f64 <= 0.5 * base_penalty
                && loss_sums[i] / seeds.len() as f64 <= 1.15 * base_loss
        });
        match winner {
            Some(i) => detail.push_str(&format!(
                "{}: lambda {} cuts penalty {:.4} -> {:.4} at loss {:.4} -> {:.4}; ",
                objective.name(),
                grid[i],
                base_penalty,
                penalty_sums[i] / seeds.len() as f64,
                base_loss,
                loss_sums[i] / seeds.len() as f64,
            )),
            None => {
                all_ok = false;
                detail.push_str(&format!("{}: no grid point qualifies; ", objective.name()));
            }
        }
    }
    report(
        8,
        "variance regularization",
        all_ok,
        detail.trim_end_matches("; "),
    );
}

// 9. Small exponents overfit: the train/test gap of the estimate is larger
//    at k = 0.1 than at k = 1.0, averaged over seeds.
#[test]
fn criterion_09_small_k_overfit() {
    let mut gap_small_k = 0.0f64;
    let mut gap_large_k = 0.0f64;
    let seeds = 10u64;
    for seed in 0..seeds {
        let data = synth_two_group(1200, 0.3, 0.3, 500 + seed).unwrap();
        let (train, test) = split_train_test(&data, 0.5, seed).unwrap();
        let config = TrainConfig::new(Objective::Lr, 0.01, 0.0, seed);
        let (model, _) = fit(&train, None, &config).unwrap();
        let train_losses =
            LossVector::uniform(log_losses(&model, &train).unwrap(), log_loss_bound()).unwrap();
        let test_losses =
            LossVector::uniform(log_losses(&model, &test).unwrap(), log_loss_bound()).unwrap();
        for (k, gap) in [(0.1, &mut gap_small_k), (1.0, &mut gap_large_k)] {
            let at_train = empirical_mwld(&train_losses, k).unwrap().value;
            let at_test = empirical_mwld(&test_losses, k).unwrap().value;
            *gap += (at_train - at_test).abs() / seeds as f64;
        }
    }
    report(
        9,
        "small-k overfit",
        gap_small_k > gap_large_k,
        &format!("mean train/test gap: k=0.1 gives {gap_small_k:.4}, k=1.0 gives {gap_large_k:.4}"),
    );
}

// 10. Every group's loss gap is covered by discrepancy / weight.
#[test]
fn criterion_10_group_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut worst_slack = f64::INFINITY;
    for _ in 0..100 {
        let n = rng.gen_range(5..=60);
        let losses = random_losses(&mut rng, n);
        for &k in &[0.3, 1.0] {
            let mwld = empirical_mwld(&losses, k).unwrap().value;
            for _ in 0..40 {
                let members: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
                let mask = GroupMask::new(members);
                if mask.member_count() == 0 {
                    continue;
                }
                let fraction = group_fraction(&losses, &mask).unwrap();
                let ceiling = group_loss_bound(mwld, fraction.powf(k)).unwrap();
                let gap = (group_mean(&losses, &mask).unwrap() - losses.population_mean()).abs();
                worst_slack = worst_slack.min(ceiling - gap);
            }
        }
    }
    assert!(group_loss_bound(0.3, 0.0).is_err(), "zero weight must error");
    report(
        10,
        "group bound",
        worst_slack >= -1e-9,
        &format!("100 vectors x 2 exponents x 40 groups, smallest slack {worst_slack:.3e}"),
    );
}

// 11. Variance identities: conditioning and coarsening never increase
//     variance, and the group bound holds to 1e-12 at modest n.
#[test]
fn criterion_11_variance_laws() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let levels = ["a", "b", "c"];
    let mut ok = true;
    let mut worst = f64::INFINITY;
    for _ in 0..500 {
        let n = rng.gen_range(4..=64);
        let losses = random_losses(&mut rng, n);
        let labels =
            LabelVector::new((0..n).map(|_| rng.gen_range(0..=1u8)).collect()).unwrap();
        let keys = SensitiveKeyVector::new(
            (0..n)
                .map(|_| levels[rng.gen_range(0..levels.len())].to_string())
                .collect(),
        )
        .unwrap();
        let lv = loss_variance(&losses);
        let cond_lv = conditional_loss_variance(&losses, &labels).unwrap();
        let clv = coarse_loss_variance(&losses, &keys).unwrap();
        let cond_clv = conditional_coarse_loss_variance(&losses, &keys, &labels).unwrap();
        if cond_lv > lv + 1e-12 || clv > lv + 1e-12 || cond_clv > cond_lv + 1e-12 {
            ok = false;
        }
        let mwld = empirical_mwld(&losses, 0.5).unwrap().value;
        for _ in 0..20 {
            let members: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
            let mask = GroupMask::new(members);
            if mask.member_count() == 0 {
                continue;
            }
            let fraction = group_fraction(&losses, &mask).unwrap();
            let ceiling = group_loss_bound(mwld, fraction.powf(0.5)).unwrap();
            let gap = (group_mean(&losses, &mask).unwrap() - losses.population_mean()).abs();
            worst = worst.min(ceiling - gap);
        }
    }
    report(
        11,
        "variance laws",
        ok && worst >= -1e-12,
        &format!("500 cases; group-bound slack down to {worst:.3e}"),
    );
}

fn run_cli(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_mwld"))
        .args(args)
        .output()
        .expect("spawn CLI");
    assert!(
        out.status.success(),
        "CLI {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

// 12. Fixed seeds make the CLI byte-deterministic: training and audit runs
//     repeated into fresh directories produce identical files.
#[test]
fn criterion_12_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let csv = root.join("synth.csv");
    let csv_s = csv.to_str().unwrap();
    run_cli(&[
        "synth",
        "--out",
        csv_s,
        "--n",
        "600",
        "--seed",
        "7",
    ]);

    let train_dirs: Vec<PathBuf> = (0..2).map(|i| root.join(format!("train{i}"))).collect();
    for d in &train_dirs {
        run_cli(&[
            "train",
            "--data",
            csv_s,
            "--schema",
            "two_group",
            "--objective",
            "lv",
            "--eta",
            "0.01",
            "--lambda",
            "0.5",
            "--seed",
            "9",
            "--out-dir",
            d.to_str().unwrap(),
        ]);
    }

    let model = train_dirs[0].join("model.toml");
    let audit_dirs: Vec<PathBuf> = (0..2).map(|i| root.join(format!("audit{i}"))).collect();
    for d in &audit_dirs {
        run_cli(&[
            "audit",
            "--data",
            csv_s,
            "--schema",
            "two_group",
            "--model",
            model.to_str().unwrap(),
            "--train-data",
            csv_s,
            "--seed",
            "11",
            "--out-dir",
            d.to_str().unwrap(),
        ]);
    }

    let mut identical = true;
    let mut compared = Vec::new();
    for file in ["model.toml", "history.csv"] {
        let a = read_bytes(&train_dirs[0].join(file));
        let b = read_bytes(&train_dirs[1].join(file));
        identical &= a == b;
        compared.push(format!("train/{file} ({} bytes)", a.len()));
    }
    for file in ["report.toml", "curves/k_sweep.csv", "curves/size_profile.csv"] {
        let a = read_bytes(&audit_dirs[0].join(file));
        let b = read_bytes(&audit_dirs[1].join(file));
        identical &= a == b;
        compared.push(format!("audit/{file} ({} bytes)", a.len()));
    }
    report(
        12,
        "cli determinism",
        identical,
        &format!("repeat runs byte-identical: {}", compared.join(", ")),
    );
}

// 13. The bundled dataset schemas load their fixture CSVs with the expected
//     sensitive cardinality and attribute counts, and survive a write/reload
//     round trip bit-exactly.
#[test]
fn criterion_13_dataset_loaders() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures");
    let expected = [
        ("candc", 16usize, 11usize),
        ("income", 30, 14),
        ("german", 6, 12),
        ("compas5", 30, 5),
    ];
    let dir = tempfile::tempdir().unwrap();
    let mut ok = true;
    let mut detail = String::new();
    for (name, cells, attributes) in expected {
        let schema = builtin_schema(name).unwrap();
        let (dataset, summary) = load_csv(fixtures.join(format!("{name}.csv")), &schema).unwrap();
        if summary.sensitive_cardinality != cells
            || summary.raw_attribute_count != attributes
            || summary.rows_kept != 200
        {
            ok = false;
        }
        let copy = dir.path().join(format!("{name}.csv"));
        write_csv(&dataset, &copy).unwrap();
        let (reloaded, _) = load_csv_with_manifest(&copy, &schema, dataset.manifest()).unwrap();
        for i in 0..dataset.len() {
            if dataset.feature_row(i) != reloaded.feature_row(i) {
                ok = false;
            }
        }
        if dataset.labels().as_slice() != reloaded.labels().as_slice() {
            ok = false;
        }
        detail.push_str(&format!(
            "{name}: {} cells, {} attributes; ",
            summary.sensitive_cardinality, summary.raw_attribute_count
        ));
    }
    report(13, "dataset loaders", ok, detail.trim_end_matches("; "));
}
