//! Maximum weighted loss discrepancy: exhaustive oracle, sorted-scan plug-in
//! estimator, explicit-group audits, and the certificates derived from the
//! estimate.
//!
//! The plug-in estimate under w(g) = p^k maximizes p^k |E[loss|g] - E[loss]|
//! over all groups g of the sample. The maximizer is always a set of the t
//! lowest or the t highest losses: fixing group size t, the group mean is
//! extremized at the tails, and scanning every t on both sides covers all
//! candidate sizes. Sorting once and sweeping prefix/suffix sums gives
//! O(n log n) total. [`brute_force_mwld`] checks the same supremum by
//! enumerating every nonempty subset and exists to validate the scan.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{
    group_fraction, group_mean, power_weight, validate_power_exponent, weighted_discrepancy,
    GroupMask, LossVector, WeightRule, Weighting,
};
use crate::numeric::CompensatedSum;

/// Which tail of the sorted losses the argmax group occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArgmaxSide {
    /// The `threshold_index` lowest losses.
    BelowThreshold,
    /// The `threshold_index` highest losses.
    AboveThreshold,
}

/// Result of a discrepancy maximization.
#[derive(Debug, Clone, PartialEq)]
pub struct MwldResult {
    /// The maximized weighted discrepancy, >= 0.
    pub value: f64,
    /// Tail of the sorted order holding the argmax group.
    pub argmax_side: ArgmaxSide,
    /// Number of samples in the argmax group, 1..=n.
    pub threshold_index: usize,
    /// Membership of the argmax group in original sample order.
    pub argmax_mask: GroupMask,
}

/// Largest number of samples the exhaustive oracle accepts (2^20 subsets).
pub const ORACLE_LIMIT: usize = 20;

/// Exhaustive maximization of w(g) |E[loss|g] - E[loss]| over every nonempty
/// subset of samples. Exponential; capped at [`ORACLE_LIMIT`] samples.
///
/// Unlike the sorted scan this accepts probability-weighted vectors, so it
/// doubles as an exact population-MWLD calculator for small discrete
/// populations.
pub fn brute_force_mwld(losses: &LossVector, weighting: &Weighting) -> Result<MwldResult> {
    weighting.validate()?;
    let n = losses.len();
    if n > ORACLE_LIMIT {
        return Err(Error::OracleTooLarge {
            n,
            limit: ORACLE_LIMIT,
        });
    }

    if let Weighting::ExplicitSet { masks, rule } = weighting {
        // The listed groups are the whole group space here; enumerate them.
        let (value, index) = mwld_over_explicit_groups(losses, masks, *rule)?;
        let mask = masks[index].clone();
        let mean = losses.population_mean();
        let side = if group_mean(losses, &mask)? <= mean {
            ArgmaxSide::BelowThreshold
        } else {
            ArgmaxSide::AboveThreshold
        };
        return Ok(MwldResult {
            value,
            argmax_side: side,
            threshold_index: mask.member_count(),
            argmax_mask: mask,
        });
    }

    let mean = losses.population_mean();
    let values = losses.values();
    let subsets = 1usize << n;

    // Subset sums by lowest-bit recurrence: mass[m] and loss-mass[m] come
    // from the subset with that bit cleared plus one term.
    let mut mass = vec![0.0f64; subsets];
    let mut loss_mass = vec![0.0f64; subsets];
    for m in 1..subsets {
        let low = m.trailing_zeros() as usize;
        let rest = m & (m - 1);
        let w = losses.weight_of(low);
        mass[m] = mass[rest] + w;
        loss_mass[m] = loss_mass[rest] + w * values[low];
    }

    let uniform = losses.is_uniform();
    let mut best_value = -1.0f64;
    let mut best_mask = 0usize;
    let mut best_mean = mean;
    for m in 1..subsets {
        // Exact member-count fraction for uniform vectors keeps the oracle
        // bit-consistent with the scan's t/n arithmetic.
        let fraction = if uniform {
            m.count_ones() as f64 / n as f64
        } else {
            mass[m]
        };
        if fraction <= 0.0 {
            continue; // zero-mass subset has no conditional mean
        }
        let weight = match weighting {
            Weighting::PowerK(k) => power_weight(fraction, *k),
            Weighting::LargeGroup(alpha) => {
                if fraction >= *alpha {
                    1.0
                } else {
                    continue;
                }
            }
            Weighting::ExplicitSet { .. } => unreachable!("handled above"),
        };
        // loss_mass sums w * value; dividing by the group's mass averages
        // over members (w = 1/n cancels in the uniform case).
        let group_mean = if uniform {
            loss_mass[m] * n as f64 / m.count_ones() as f64
        } else {
            loss_mass[m] / mass[m]
        };
        let value = weight * (group_mean - mean).abs();
        if value > best_value {
            best_value = value;
            best_mask = m;
            best_mean = group_mean;
        }
    }

    if best_value < 0.0 {
        // Every subset fell below the weighting's threshold (LargeGroup with
        // alpha above the largest achievable mass cannot happen since the
        // full group has mass 1 >= alpha <= 1).
        return Err(Error::EmptyGroup("no group admitted by the weighting"));
    }

    let members: Vec<bool> = (0..n).map(|i| best_mask >> i & 1 == 1).collect();
    let argmax_mask = GroupMask::new(members);
    Ok(MwldResult {
        value: best_value,
        argmax_side: if best_mean <= mean {
            ArgmaxSide::BelowThreshold
        } else {
            ArgmaxSide::AboveThreshold
        },
        threshold_index: argmax_mask.member_count(),
        argmax_mask,
    })
}

/// Plug-in discrepancy estimate under w(g) = p^k by the sorted prefix/suffix
/// scan. Uniformly weighted samples only; weighted atoms go through
/// [`brute_force_mwld`], whose optimality argument does not need the
/// equal-mass step structure the scan relies on.
pub fn empirical_mwld(losses: &LossVector, k: f64) -> Result<MwldResult> {
    validate_power_exponent(k)?;
    if !losses.is_uniform() {
        return Err(Error::WeightedInputUnsupported(
            "sorted-scan estimator; use brute_force_mwld for weighted atoms",
        ));
    }
    let n = losses.len();
    let values = losses.values();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));

    // prefix[t] = sum of the t lowest losses, suffix[t] = sum of the t
    // highest, both compensated.
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = CompensatedSum::new();
    for &i in &order {
        acc.add(values[i]);
        prefix.push(acc.total());
    }
    let mut suffix = Vec::with_capacity(n + 1);
    suffix.push(0.0);
    let mut acc = CompensatedSum::new();
    for &i in order.iter().rev() {
        acc.add(values[i]);
        suffix.push(acc.total());
    }

    let mean = losses.population_mean();
    let mut best_value = -1.0f64;
    let mut best_side = ArgmaxSide::BelowThreshold;
    let mut best_t = n;
    // Ties keep the first candidate in scan order: prefixes by growing t,
    // then suffixes. The full group (t = n, discrepancy 0) is included, so
    // n = 1 resolves to the full group with value 0.
    for t in 1..=n {
        let weight = power_weight(t as f64 / n as f64, k);
        let value = weight * (prefix[t] / t as f64 - mean).abs();
        if value > best_value {
            best_value = value;
            best_side = ArgmaxSide::BelowThreshold;
            best_t = t;
        }
    }
    for t in 1..=n {
        let weight = power_weight(t as f64 / n as f64, k);
        let value = weight * (suffix[t] / t as f64 - mean).abs();
        if value > best_value {
            best_value = value;
            best_side = ArgmaxSide::AboveThreshold;
            best_t = t;
        }
    }

    let member_indices: Vec<usize> = match best_side {
        ArgmaxSide::BelowThreshold => order[..best_t].to_vec(),
        ArgmaxSide::AboveThreshold => order[n - best_t..].to_vec(),
    };
    let argmax_mask = GroupMask::from_indices(n, &member_indices)?;
    debug_assert!(
        (best_value - weighted_discrepancy(losses, &argmax_mask, &Weighting::PowerK(k)).unwrap())
            .abs()
            <= 1e-12
    );
    Ok(MwldResult {
        value: best_value,
        argmax_side: best_side,
        threshold_index: best_t,
        argmax_mask,
    })
}

/// Maximum weighted discrepancy over a fixed list of groups. Returns the
/// value and the index of the first maximizing group.
pub fn mwld_over_explicit_groups(
    losses: &LossVector,
    masks: &[GroupMask],
    rule: WeightRule,
) -> Result<(f64, usize)> {
    Weighting::ExplicitSet {
        masks: masks.to_vec(),
        rule,
    }
    .validate()?;
    let mean = losses.population_mean();
    let mut best_value = -1.0f64;
    let mut best_index = 0usize;
    for (i, mask) in masks.iter().enumerate() {
        if mask.member_count() == 0 {
            return Err(Error::EmptyGroup("explicit group list contains an empty group"));
        }
        let fraction = group_fraction(losses, mask)?;
        if fraction <= 0.0 {
            return Err(Error::EmptyGroup("explicit group carries zero probability mass"));
        }
        let value = rule.weight(fraction) * (group_mean(losses, mask)? - mean).abs();
        if value > best_value {
            best_value = value;
            best_index = i;
        }
    }
    Ok((best_value, best_index))
}

/// Largest |group mean - population mean| over groups of exactly `m`
/// samples: the extremes are the m lowest and m highest losses. Uniform
/// vectors only.
pub fn max_discrepancy_at_size(losses: &LossVector, m: usize) -> Result<f64> {
    if !losses.is_uniform() {
        return Err(Error::WeightedInputUnsupported("size profile"));
    }
    let n = losses.len();
    if m == 0 || m > n {
        return Err(Error::invalid(format!(
            "group size m = {m} outside 1..={n}"
        )));
    }
    let mut sorted = losses.values().to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mean = losses.population_mean();
    let mut low = CompensatedSum::new();
    for v in &sorted[..m] {
        low.add(*v);
    }
    let mut high = CompensatedSum::new();
    for v in &sorted[n - m..] {
        high.add(*v);
    }
    let below = (low.total() / m as f64 - mean).abs();
    let above = (high.total() / m as f64 - mean).abs();
    Ok(below.max(above))
}

/// Discrepancy maximization under the large-group indicator weighting: the
/// best |group mean - population mean| over groups of mass >= alpha, i.e.
/// sizes m >= ceil(alpha n). Uniform vectors only.
pub fn large_group_mwld(losses: &LossVector, alpha: f64) -> Result<MwldResult> {
    Weighting::LargeGroup(alpha).validate()?;
    if !losses.is_uniform() {
        return Err(Error::WeightedInputUnsupported(
            "large-group scan; use brute_force_mwld for weighted atoms",
        ));
    }
    let n = losses.len();
    let values = losses.values();
    let m0 = ((alpha * n as f64).ceil() as usize).max(1);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mean = losses.population_mean();

    let mut best_value = -1.0f64;
    let mut best_side = ArgmaxSide::BelowThreshold;
    let mut best_t = n;
    let mut acc = CompensatedSum::new();
    let mut prefix = vec![0.0];
    for &i in &order {
        acc.add(values[i]);
        prefix.push(acc.total());
    }
    let mut acc = CompensatedSum::new();
    let mut suffix = vec![0.0];
    for &i in order.iter().rev() {
        acc.add(values[i]);
        suffix.push(acc.total());
    }
    for t in m0..=n {
        let value = (prefix[t] / t as f64 - mean).abs();
        if value > best_value {
            best_value = value;
            best_side = ArgmaxSide::BelowThreshold;
            best_t = t;
        }
    }
    for t in m0..=n {
        let value = (suffix[t] / t as f64 - mean).abs();
        if value > best_value {
            best_value = value;
            best_side = ArgmaxSide::AboveThreshold;
            best_t = t;
        }
    }

    let member_indices: Vec<usize> = match best_side {
        ArgmaxSide::BelowThreshold => order[..best_t].to_vec(),
        ArgmaxSide::AboveThreshold => order[n - best_t..].to_vec(),
    };
    Ok(MwldResult {
        value: best_value,
        argmax_side: best_side,
        threshold_index: best_t,
        argmax_mask: GroupMask::from_indices(n, &member_indices)?,
    })
}

/// Rearranged per-group guarantee: a group of weight w can have mean loss at
/// most MWLD / w above (or below) the population mean.
pub fn group_loss_bound(mwld_value: f64, group_weight: f64) -> Result<f64> {
    if !mwld_value.is_finite() || mwld_value < 0.0 {
        return Err(Error::invalid(format!(
            "discrepancy value must be finite and nonnegative, got {mwld_value}"
        )));
    }
    if !group_weight.is_finite() || group_weight <= 0.0 {
        return Err(Error::invalid(format!(
            "group weight must be positive, got {group_weight}"
        )));
    }
    Ok(mwld_value / group_weight)
}

/// Mean loss after a demographic shift that reweights the group to mass
/// `group_weight` and its complement to the remainder:
/// w_g E[loss|g] + (1 - w_g) E[loss|not g].
///
/// Requires `group_weight >= E[g]` (shifts that grow the group), which is
/// what the certificate E_shifted <= E[loss] + MWLD covers.
pub fn shifted_population_loss(
    losses: &LossVector,
    mask: &GroupMask,
    group_weight: f64,
) -> Result<f64> {
    let fraction = group_fraction(losses, mask)?;
    if fraction <= 0.0 {
        return Err(Error::EmptyGroup("shift needs a group with positive mass"));
    }
    if fraction >= 1.0 {
        return Err(Error::EmptyGroup("shift needs a nonempty complement"));
    }
    if !group_weight.is_finite() || group_weight < 0.0 || group_weight > 1.0 {
        return Err(Error::invalid(format!(
            "shifted group mass must lie in [0, 1], got {group_weight}"
        )));
    }
    if group_weight < fraction - 1e-12 {
        return Err(Error::invalid(format!(
            "shifted group mass {group_weight} below current mass {fraction}; \
             the certificate covers shifts that grow the group"
        )));
    }
    let mean_in = group_mean(losses, mask)?;
    let mean_out = group_mean(losses, &mask.complement())?;
    Ok(group_weight * mean_in + (1.0 - group_weight) * mean_out)
}

/// Two-sided finite-sample error rates for the plug-in estimate under
/// w(g) = p^k, each holding with probability at least 1 - delta:
///
/// * the estimate undershoots the population value by at most
///   (108 ln(18/delta) / n)^(k / (2k+1)),
/// * and overshoots by at most (108 ln(18/delta) / n)^(k / (2k+2)).
///
/// Valid once n >= 108 ln(18/delta); requesting the bound below that
/// threshold is an error rather than a vacuous number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceBound {
    pub n: usize,
    pub delta: f64,
    pub k: f64,
    pub lower_side_bound: f64,
    pub upper_side_bound: f64,
}

pub fn convergence_error_bound(n: usize, delta: f64, k: f64) -> Result<ConvergenceBound> {
    validate_power_exponent(k)?;
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::invalid(format!(
            "confidence level delta must lie in (0, 0.5), got {delta}"
        )));
    }
    let threshold = 108.0 * (18.0 / delta).ln();
    if (n as f64) < threshold {
        return Err(Error::invalid(format!(
            "n = {n} below the validity threshold 108 ln(18/delta) = {threshold:.3}"
        )));
    }
    let base = threshold / n as f64;
    Ok(ConvergenceBound {
        n,
        delta,
        k,
        lower_side_bound: base.powf(k / (2.0 * k + 1.0)),
        upper_side_bound: base.powf(k / (2.0 * k + 2.0)),
    })
}
