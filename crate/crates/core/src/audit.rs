//! Audit reports: discrepancy estimates, variance decompositions, deviation
//! bounds, and training tradeoff curves, serialized as a single TOML
//! document plus optional CSV curve exports.
//!
//! Serialization is deterministic: every collection is a Vec in a fixed
//! order and every struct serializes its fields in declaration order, so the
//! same report value always produces the same bytes. Floats are written in
//! shortest round-trip form and reload bit-exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimator::{
    convergence_error_bound, empirical_mwld, mwld_over_explicit_groups, shifted_population_loss,
    ConvergenceBound,
};
use crate::loss::{GroupMask, LabelVector, LossVector, SensitiveKeyVector, WeightRule};
use crate::numeric::derive_seed;
use crate::trainer::{mean_zero_one_loss, log_losses, Objective, SweepPoint};
use crate::variance::{
    coarse_deviation, coarse_loss_variance, conditional_coarse_loss_variance,
    conditional_loss_variance, loss_variance, maurer_deviation, sandwich,
    variance_upper_bound_general_l, VarianceSandwich,
};
use crate::data::TabularDataset;
use crate::model::log_loss_bound;

const SHIFT_SEED_TAG: u64 = 0x73_68_69_66_74; // "shift"

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Hex SHA-256 of a canonical configuration string. Stored in report
/// metadata so reruns can prove they used the same configuration.
pub fn config_digest(canonical: &str) -> String {
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub schema_version: u32,
    pub seed: u64,
    pub config_digest: String,
    /// What the audited losses are ("log", "zero_one", or "external").
    pub loss_kind: String,
    /// Upper bound of the loss range as audited.
    pub loss_bound: f64,
    /// Set when sandwich inputs were divided by this to reach [0, 1].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rescaled_by: Option<f64>,
    /// Rows the audited loss vector covers.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepRow {
    pub k: f64,
    pub train_mwld: f64,
    pub test_mwld: f64,
    /// |train - test|.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepSection {
    pub n_train: usize,
    pub n_test: usize,
    pub rows: Vec<KSweepRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeProfileRow {
    pub m: usize,
    pub fraction: f64,
    /// Largest |group mean - population mean| over prefix and suffix groups
    /// of exactly m samples in sorted-loss order.
    pub discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeEntry {
    pub k: f64,
    pub mwld: f64,
}

/// Discrepancy by group size, with the weighted-discrepancy values whose
/// envelopes mwld / fraction^k dominate the profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeProfileSection {
    pub n: usize,
    pub envelopes: Vec<EnvelopeEntry>,
    pub rows: Vec<SizeProfileRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSection {
    pub loss_variance: f64,
    pub conditional_loss_variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarse_loss_variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditional_coarse_loss_variance: Option<f64>,
    /// Two-sided bracket between weighted discrepancy and standard
    /// deviation, computed on losses rescaled to [0, 1].
    pub sandwich: VarianceSandwich,
    /// Variance bound from the raw-scale discrepancy, when it is positive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub general_scale_variance_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsSection {
    pub delta: f64,
    pub maurer_radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarse_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarse_cell_count: Option<usize>,
    /// Distribution-free estimator error bounds, one per exponent whose
    /// validity threshold the sample size meets.
    pub convergence: Vec<ConvergenceBound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub lambda: f64,
    pub test_mean_loss: f64,
    pub test_zero_one_loss: f64,
    pub conditional_loss_variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditional_coarse_loss_variance: Option<f64>,
    /// Square-root-weighted discrepancy of test log losses over all groups.
    pub mwld_half: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mwld_half_label0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mwld_half_label1: Option<f64>,
    /// Largest unit-weight discrepancy over the observed sensitive-key
    /// groups.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitive_group_discrepancy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSection {
    pub objective: String,
    pub eta: f64,
    pub rows: Vec<TradeoffRow>,
}

/// Random-subgroup check of the shifted-population bound: for a group of
/// empirical fraction f reweighted to mass f^k, the shifted mean loss never
/// exceeds the population mean plus the weighted discrepancy at exponent k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftCheckSection {
    pub k: f64,
    pub trials: usize,
    /// Coin-flip masks that came out empty or full and were redrawn against
    /// the trial budget.
    pub skipped: usize,
    /// Smallest (population mean + discrepancy - shifted mean) observed;
    /// nonnegative up to float error when the bound holds.
    pub min_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub meta: ReportMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_sweep: Option<KSweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_profile: Option<SizeProfileSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<VarianceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweeps: Option<Vec<SweepSection>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_checks: Option<Vec<ShiftCheckSection>>,
}

const KNOWN_TOP_LEVEL: [&str; 7] = [
    "meta",
    "k_sweep",
    "size_profile",
    "variance",
    "bounds",
    "sweeps",
    "shift_checks",
];

pub fn report_to_string(report: &AuditReport) -> Result<String> {
    let mut text =
        toml::to_string_pretty(report).map_err(|e| Error::Report(e.to_string()))?;
    if !text.ends_with('\n') {
        text.push('\n');
    }
    Ok(text)
}

pub fn write_report(report: &AuditReport, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, report_to_string(report)?)?;
    Ok(())
}

/// Parse a report, returning a warning per unrecognized top-level key so
/// documents from newer writers load without silently dropping content.
pub fn read_report(path: impl AsRef<Path>) -> Result<(AuditReport, Vec<String>)> {
    let text = std::fs::read_to_string(path)?;
    let value: toml::Value = text
        .parse()
        .map_err(|e: toml::de::Error| Error::TomlParse(e.to_string()))?;
    let mut warnings = Vec::new();
    if let Some(table) = value.as_table() {
        for key in table.keys() {
            if !KNOWN_TOP_LEVEL.contains(&key.as_str()) {
                warnings.push(format!("unknown report section {key:?} ignored"));
            }
        }
    }
    let report: AuditReport =
        toml::from_str(&text).map_err(|e| Error::TomlParse(e.to_string()))?;
    Ok((report, warnings))
}

/// Weighted discrepancy of train and test losses across exponents, with the
/// generalization gap |train - test| per exponent.
pub fn k_sweep_section(
    train_losses: &LossVector,
    test_losses: &LossVector,
    ks: &[f64],
) -> Result<KSweepSection> {
    if ks.is_empty() {
        return Err(Error::EmptyInput("exponent grid"));
    }
    let mut sorted = ks.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted.dedup();
    let mut rows = Vec::with_capacity(sorted.len());
    for k in sorted {
        let train = empirical_mwld(train_losses, k)?.value;
        let test = empirical_mwld(test_losses, k)?.value;
        rows.push(KSweepRow {
            k,
            train_mwld: train,
            test_mwld: test,
            gap: (train - test).abs(),
        });
    }
    Ok(KSweepSection {
        n_train: train_losses.len(),
        n_test: test_losses.len(),
        rows,
    })
}

const SIZE_PROFILE_MAX_ROWS: usize = 128;

/// Largest absolute discrepancy at each group size (subsampled to at most
/// 128 sizes), with the discrepancy values whose weighted envelopes bound
/// the profile.
pub fn size_profile_section(losses: &LossVector, ks: &[f64]) -> Result<SizeProfileSection> {
    let n = losses.len();
    let points = SIZE_PROFILE_MAX_ROWS.min(n);
    let mut sizes: Vec<usize> = (1..=points)
        .map(|j| ((n as f64 * j as f64 / points as f64).ceil() as usize).clamp(1, n))
        .collect();
    sizes.dedup();
    let mut rows = Vec::with_capacity(sizes.len());
    for m in sizes {
        rows.push(SizeProfileRow {
            m,
            fraction: m as f64 / n as f64,
            discrepancy: crate::estimator::max_discrepancy_at_size(losses, m)?,
        });
    }
    let mut envelopes = Vec::with_capacity(ks.len());
    for &k in ks {
        envelopes.push(EnvelopeEntry {
            k,
            mwld: empirical_mwld(losses, k)?.value,
        });
    }
    Ok(SizeProfileSection { n, envelopes, rows })
}

/// Variance decompositions plus the discrepancy/deviation bracket. The
/// sandwich is computed on losses divided by their bound so they lie in
/// [0, 1]; the general-scale bound uses the raw values.
pub fn variance_section(
    losses: &LossVector,
    labels: Option<&LabelVector>,
    keys: Option<&SensitiveKeyVector>,
) -> Result<(VarianceSection, Option<f64>)> {
    let bound = losses.loss_bound();
    let rescaled_by = if bound == 1.0 { None } else { Some(bound) };
    let rescaled = match rescaled_by {
        None => losses.clone(),
        Some(b) => LossVector::uniform(losses.values().iter().map(|v| v / b).collect(), 1.0)?,
    };
    if !rescaled.is_uniform() {
        return Err(Error::WeightedInputUnsupported("variance section"));
    }
    let mwld_half_rescaled = empirical_mwld(&rescaled, 0.5)?.value;
    let sqrt_variance = loss_variance(&rescaled).sqrt();
    let sandwich = sandwich(mwld_half_rescaled, sqrt_variance)?;
    let gamma_raw = empirical_mwld(losses, 0.5)?.value;
    let general = if gamma_raw > 0.0 && gamma_raw <= bound {
        Some(variance_upper_bound_general_l(gamma_raw, bound)?)
    } else {
        None
    };
    let section = VarianceSection {
        loss_variance: loss_variance(losses),
        conditional_loss_variance: match labels {
            Some(l) => Some(conditional_loss_variance(losses, l)?),
            None => None,
        },
        coarse_loss_variance: match keys {
            Some(k) => Some(coarse_loss_variance(losses, k)?),
            None => None,
        },
        conditional_coarse_loss_variance: match (keys, labels) {
            (Some(k), Some(l)) => Some(conditional_coarse_loss_variance(losses, k, l)?),
            _ => None,
        },
        sandwich,
        general_scale_variance_bound: general,
    };
    Ok((section, rescaled_by))
}

/// Concentration radii and estimator convergence bounds at sample size `n`.
/// Exponents whose validity threshold exceeds `n` are omitted rather than
/// reported with a vacuous value.
pub fn bounds_section(
    n: usize,
    delta: f64,
    coarse_cells: Option<usize>,
    ks: &[f64],
) -> Result<BoundsSection> {
    let maurer_radius = maurer_deviation(n, delta)?;
    let (coarse_radius, coarse_cell_count) = match coarse_cells {
        Some(t) => (Some(coarse_deviation(n, delta, t)?), Some(t)),
        None => (None, None),
    };
    let mut convergence = Vec::new();
    for &k in ks {
        match convergence_error_bound(n, delta, k) {
            Ok(b) => convergence.push(b),
            Err(Error::InvalidParameter(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(BoundsSection {
        delta,
        maurer_radius,
        coarse_radius,
        coarse_cell_count,
        convergence,
    })
}

/// Evaluate sweep points into tradeoff rows on a test set.
pub fn tradeoff_section(
    objective: Objective,
    eta: f64,
    points: &[SweepPoint],
    test: &TabularDataset,
) -> Result<SweepSection> {
    if points.is_empty() {
        return Err(Error::EmptyInput("sweep points"));
    }
    let bound = log_loss_bound();
    let mut rows = Vec::with_capacity(points.len());
    for point in points {
        let losses = log_losses(&point.model, test)?;
        let loss_vec = LossVector::uniform(losses.clone(), bound)?;
        let labels = test.labels();
        let cond_lv = conditional_loss_variance(&loss_vec, labels)?;
        let cond_clv = match test.sensitive_keys() {
            Some(keys) => Some(conditional_coarse_loss_variance(&loss_vec, keys, labels)?),
            None => None,
        };
        let mut per_label = [None, None];
        for class in [0u8, 1u8] {
            let class_losses: Vec<f64> = losses
                .iter()
                .zip(labels.as_slice())
                .filter(|(_, y)| **y == class)
                .map(|(l, _)| *l)
                .collect();
            if !class_losses.is_empty() {
                let v = LossVector::uniform(class_losses, bound)?;
                per_label[class as usize] = Some(empirical_mwld(&v, 0.5)?.value);
            }
        }
        let sensitive_group_discrepancy = match test.sensitive_keys() {
            None => None,
            Some(keys) => {
                let mut distinct: Vec<&str> = keys.keys().iter().map(|s| s.as_str()).collect();
                distinct.sort_unstable();
                distinct.dedup();
                let masks: Vec<GroupMask> = distinct
                    .iter()
                    .map(|key| GroupMask::new(keys.keys().iter().map(|s| s == key).collect()))
                    .collect();
                Some(mwld_over_explicit_groups(&loss_vec, &masks, WeightRule::Unit)?.0)
            }
        };
        rows.push(TradeoffRow {
            lambda: point.lambda,
            test_mean_loss: point.test_mean_loss,
            test_zero_one_loss: mean_zero_one_loss(&point.model, test)?,
            conditional_loss_variance: cond_lv,
            conditional_coarse_loss_variance: cond_clv,
            mwld_half: point.test_mwld_half,
            mwld_half_label0: per_label[0],
            mwld_half_label1: per_label[1],
            sensitive_group_discrepancy,
        });
    }
    Ok(SweepSection {
        objective: objective.name().to_string(),
        eta,
        rows,
    })
}

/// Sample coin-flip masks and verify the shifted-population bound on each,
/// recording the smallest margin. Masks that come out empty or full count
/// as skipped.
pub fn shift_check_section(
    losses: &LossVector,
    k: f64,
    trials: usize,
    seed: u64,
) -> Result<ShiftCheckSection> {
    if trials == 0 {
        return Err(Error::EmptyInput("shift check trials"));
    }
    let n = losses.len();
    let result = empirical_mwld(losses, k)?;
    let mean = losses.population_mean();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SHIFT_SEED_TAG));
    let mut skipped = 0usize;
    let mut min_margin = f64::INFINITY;
    let mut checked = 0usize;
    for _ in 0..trials {
        let members: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();
        let count = members.iter().filter(|m| **m).count();
        if count == 0 || count == n {
            skipped += 1;
            continue;
        }
        let mask = GroupMask::new(members);
        let fraction = count as f64 / n as f64;
        let weight = crate::loss::power_weight(fraction, k);
        let shifted = shifted_population_loss(losses, &mask, weight)?;
        let margin = mean + result.value - shifted;
        if margin < min_margin {
            min_margin = margin;
        }
        checked += 1;
    }
    if checked == 0 {
        return Err(Error::invalid(
            "every sampled mask was empty or full; need n >= 2 and more trials",
        ));
    }
    Ok(ShiftCheckSection {
        k,
        trials,
        skipped,
        min_margin,
    })
}

/// Write one CSV per curve-like section next to each other in `dir`,
/// returning the paths written. Numbers use 17 significant digits so the
/// CSVs parse back to the exact report values.
pub fn export_curves(report: &AuditReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if let Some(section) = &report.k_sweep {
        let path = dir.join("k_sweep.csv");
        let mut text = String::from("k,train_mwld,test_mwld,gap\n");
        for r in &section.rows {
            text.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e}\n",
                r.k, r.train_mwld, r.test_mwld, r.gap
            ));
        }
        std::fs::write(&path, text)?;
        written.push(path);
    }
    if let Some(section) = &report.size_profile {
        let path = dir.join("size_profile.csv");
        let mut text = String::from("m,fraction,discrepancy\n");
        for r in &section.rows {
            text.push_str(&format!(
                "{},{:.16e},{:.16e}\n",
                r.m, r.fraction, r.discrepancy
            ));
        }
        std::fs::write(&path, text)?;
        written.push(path);
    }
    if let Some(sweeps) = &report.sweeps {
        for section in sweeps {
            let path = dir.join(format!("sweep_{}.csv", section.objective));
            let mut text = String::from(
                "lambda,test_mean_loss,test_zero_one_loss,conditional_loss_variance,conditional_coarse_loss_variance,mwld_half,mwld_half_label0,mwld_half_label1,sensitive_group_discrepancy\n",
            );
            for r in &section.rows {
                let opt = |v: Option<f64>| match v {
                    Some(x) => format!("{x:.16e}"),
                    None => String::new(),
                };
                text.push_str(&format!(
                    "{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{},{},{}\n",
                    r.lambda,
                    r.test_mean_loss,
                    r.test_zero_one_loss,
                    r.conditional_loss_variance,
                    opt(r.conditional_coarse_loss_variance),
                    r.mwld_half,
                    opt(r.mwld_half_label0),
                    opt(r.mwld_half_label1),
                    opt(r.sensitive_group_discrepancy),
                ));
            }
            std::fs::write(&path, text)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split_train_test, synth_two_group};
    use crate::trainer::{lambda_sweep, TrainConfig};

    fn sample_meta() -> ReportMeta {
        ReportMeta {
            schema_version: REPORT_SCHEMA_VERSION,
            seed: 7,
            config_digest: config_digest("test"),
            loss_kind: "log".to_string(),
            loss_bound: log_loss_bound(),
            rescaled_by: Some(log_loss_bound()),
            n: 4,
        }
    }

    fn toy_losses() -> LossVector {
        LossVector::uniform(vec![0.9, 0.1, 0.5, 0.3, 0.8, 0.2, 0.6, 0.4], 1.0).unwrap()
    }

    #[test]
    fn digest_is_the_standard_hex_hash() {
        assert_eq!(
            config_digest("a"),
            "ca978112ca1bbdcafac231b39a23dc4da786eff8147c4e72b9807785afee48bb"
        );
        assert_ne!(config_digest("a"), config_digest("b"));
    }

    #[test]
    fn report_round_trips_floats_bit_exactly() {
        let report = AuditReport {
            meta: ReportMeta {
                loss_bound: 0.1 + 0.2, // deliberately non-representable sum
                rescaled_by: Some(27.631021115928547),
                ..sample_meta()
            },
            k_sweep: Some(KSweepSection {
                n_train: 3,
                n_test: 2,
                rows: vec![KSweepRow {
                    k: 0.1,
                    train_mwld: 1e-17,
                    test_mwld: 2.0f64.sqrt(),
                    gap: 1e-17 - 2.0f64.sqrt(),
                }],
            }),
            size_profile: None,
            variance: None,
            bounds: None,
            sweeps: None,
            shift_checks: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.toml");
        write_report(&report, &path).unwrap();
        let (back, warnings) = read_report(&path).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(report, back);
        // Identical values serialize to identical bytes.
        assert_eq!(
            report_to_string(&report).unwrap(),
            report_to_string(&back).unwrap()
        );
    }

    #[test]
    fn unknown_sections_warn_but_still_parse() {
        let report = AuditReport {
            meta: sample_meta(),
            k_sweep: None,
            size_profile: None,
            variance: None,
            bounds: None,
            sweeps: None,
            shift_checks: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.toml");
        let mut text = report_to_string(&report).unwrap();
        text.push_str("\n[future_section]\nanswer = 42\n");
        std::fs::write(&path, text).unwrap();
        let (back, warnings) = read_report(&path).unwrap();
        assert_eq!(back.meta, report.meta);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("future_section"));
    }

    #[test]
    fn k_sweep_sorts_exponents_and_takes_absolute_gaps() {
        let train = toy_losses();
        let test = LossVector::uniform(vec![0.2, 0.7, 0.4, 0.9], 1.0).unwrap();
        let section = k_sweep_section(&train, &test, &[1.0, 0.1, 0.5]).unwrap();
        assert_eq!(section.n_train, 8);
        assert_eq!(section.n_test, 4);
        let ks: Vec<f64> = section.rows.iter().map(|r| r.k).collect();
        assert_eq!(ks, vec![0.1, 0.5, 1.0]);
        for row in &section.rows {
            assert!(row.gap >= 0.0);
            assert_eq!(row.gap, (row.train_mwld - row.test_mwld).abs());
        }
    }

    #[test]
    fn size_profile_stays_under_every_envelope() {
        let losses = toy_losses();
        let ks = [0.3, 0.5, 1.0];
        let section = size_profile_section(&losses, &ks).unwrap();
        assert_eq!(section.rows.len(), losses.len());
        for row in &section.rows {
            for env in &section.envelopes {
                let ceiling = env.mwld / row.fraction.powf(env.k);
                assert!(
                    row.discrepancy <= ceiling + 1e-12,
                    "m={} k={} discrepancy {} over {}",
                    row.m,
                    env.k,
                    row.discrepancy,
                    ceiling
                );
            }
        }
        // Some size must attain the k = 1 value exactly.
        let env1 = section.envelopes.iter().find(|e| e.k == 1.0).unwrap();
        let attained = section
            .rows
            .iter()
            .any(|r| (r.discrepancy * r.fraction - env1.mwld).abs() < 1e-12);
        assert!(attained);
    }

    #[test]
    fn variance_section_rescales_for_the_sandwich() {
        let raw = LossVector::uniform(vec![5.0, 1.0, 3.0, 4.0, 2.0, 0.5], 10.0).unwrap();
        let labels = LabelVector::new(vec![0, 1, 0, 1, 0, 1]).unwrap();
        let keys =
            SensitiveKeyVector::new(vec!["a".into(), "a".into(), "b".into(), "b".into(), "a".into(), "b".into()])
                .unwrap();
        let (section, rescaled_by) = variance_section(&raw, Some(&labels), Some(&keys)).unwrap();
        assert_eq!(rescaled_by, Some(10.0));
        // Sandwich inputs live on the [0, 1] scale: raw variance is 100x.
        let sd_raw = loss_variance(&raw).sqrt();
        assert!((section.sandwich.sqrt_variance * 10.0 - sd_raw).abs() < 1e-12);
        assert!(section.sandwich.mwld_half <= section.sandwich.sqrt_variance + 1e-12);
        assert!(section.sandwich.sqrt_variance <= section.sandwich.upper_envelope + 1e-12);
        assert!(section.general_scale_variance_bound.unwrap() >= loss_variance(&raw) - 1e-9);
        assert!(section.conditional_loss_variance.is_some());
        assert!(section.conditional_coarse_loss_variance.is_some());
    }

    #[test]
    fn bounds_section_omits_exponents_below_validity() {
        // Small n fails the validity threshold for every exponent.
        let small = bounds_section(100, 0.05, Some(4), &[0.5, 1.0]).unwrap();
        assert!(small.convergence.is_empty());
        assert!(small.maurer_radius > 0.0);
        assert!(small.coarse_radius.unwrap() > small.maurer_radius);
        // Large n keeps them.
        let large = bounds_section(100_000, 0.05, None, &[0.5, 1.0]).unwrap();
        assert_eq!(large.convergence.len(), 2);
        assert!(large.coarse_radius.is_none());
    }

    #[test]
    fn tradeoff_rows_follow_sweep_points() {
        let data = synth_two_group(240, 0.3, 0.2, 51).unwrap();
        let (train, test) = split_train_test(&data, 0.3, 3).unwrap();
        let mut config = TrainConfig::new(Objective::Lv, 0.01, 0.0, 9);
        config.epochs = 4;
        let points = lambda_sweep(&train, &test, &config, &[0.0, 0.6]).unwrap();
        let section = tradeoffs_ok(&points, &test);
        assert_eq!(section.objective, "lv");
        assert_eq!(section.rows.len(), 2);
        for (row, point) in section.rows.iter().zip(&points) {
            assert_eq!(row.lambda, point.lambda);
            assert_eq!(row.test_mean_loss, point.test_mean_loss);
            assert_eq!(row.mwld_half, point.test_mwld_half);
            assert!(row.conditional_coarse_loss_variance.is_some());
            assert!(row.sensitive_group_discrepancy.is_some());
            assert!(row.mwld_half_label0.is_some());
            assert!(row.mwld_half_label1.is_some());
        }
    }

    fn tradeoffs_ok(points: &[SweepPoint], test: &TabularDataset) -> SweepSection {
        tradeoff_section(Objective::Lv, 0.01, points, test).unwrap()
    }

    #[test]
    fn shift_margins_stay_nonnegative() {
        let losses = toy_losses();
        for k in [0.5, 1.0] {
            let section = shift_check_section(&losses, k, 400, 33).unwrap();
            assert!(
                section.min_margin >= -1e-9,
                "k={k} margin {}",
                section.min_margin
            );
            assert!(section.trials == 400);
            assert!(section.skipped < 40);
        }
    }

    #[test]
    fn curve_export_is_deterministic_and_parseable() {
        let train = toy_losses();
        let test = LossVector::uniform(vec![0.2, 0.7, 0.4, 0.9], 1.0).unwrap();
        let report = AuditReport {
            meta: sample_meta(),
            k_sweep: Some(k_sweep_section(&train, &test, &[0.5, 1.0]).unwrap()),
            size_profile: Some(size_profile_section(&train, &[0.5]).unwrap()),
            variance: None,
            bounds: None,
            sweeps: None,
            shift_checks: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        let wrote_a = export_curves(&report, &a).unwrap();
        let wrote_b = export_curves(&report, &b).unwrap();
        assert_eq!(wrote_a.len(), 2);
        assert_eq!(wrote_b.len(), 2);
        for (pa, pb) in wrote_a.iter().zip(&wrote_b) {
            let ca = std::fs::read(pa).unwrap();
            let cb = std::fs::read(pb).unwrap();
            assert_eq!(ca, cb);
        }
        // Round-trip one number through the printed format.
        let text = std::fs::read_to_string(&wrote_a[0]).unwrap();
        let first_value: f64 = text
            .lines()
            .nth(1)
            .unwrap()
            .split(',')
            .nth(1)
            .unwrap()
            .parse()
            .unwrap();
        assert_eq!(first_value, report.k_sweep.unwrap().rows[0].train_mwld);
    }
}
