//! Shared vocabulary: loss vectors, group masks, weighting families, labels,
//! and sensitive keys.
//!
//! Validation happens at construction. Everything downstream (estimators,
//! variance measures, trainers) assumes finite values, matching lengths, and
//! normalized weights, and states only its own extra preconditions.

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, CompensatedSum};

/// Per-sample losses, an optional probability weight per sample, and the
/// declared loss ceiling `L`.
///
/// Uniform vectors model an empirical sample (weight 1/n each); weighted
/// vectors model a finite discrete population, which the exhaustive oracle
/// can audit exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct LossVector {
    values: Vec<f64>,
    weights: Option<Vec<f64>>,
    loss_bound: f64,
}

impl LossVector {
    /// Empirical sample: every value carries weight 1/n.
    pub fn uniform(values: Vec<f64>, loss_bound: f64) -> Result<Self> {
        Self::validate_values(&values, loss_bound)?;
        Ok(Self {
            values,
            weights: None,
            loss_bound,
        })
    }

    /// Discrete population: `weights` are atom probabilities, nonnegative and
    /// summing to 1 within 1e-12.
    pub fn weighted(values: Vec<f64>, weights: Vec<f64>, loss_bound: f64) -> Result<Self> {
        Self::validate_values(&values, loss_bound)?;
        if weights.len() != values.len() {
            return Err(Error::LengthMismatch {
                context: "loss weights",
                expected: values.len(),
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        let total = compensated_sum(weights.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "weights must sum to 1 within 1e-12, got {total}"
            )));
        }
        Ok(Self {
            values,
            weights: Some(weights),
            loss_bound,
        })
    }

    fn validate_values(values: &[f64], loss_bound: f64) -> Result<()> {
        if values.is_empty() {
            return Err(Error::EmptyInput("loss vector"));
        }
        if !loss_bound.is_finite() || loss_bound <= 0.0 {
            return Err(Error::invalid(format!(
                "loss bound must be finite and positive, got {loss_bound}"
            )));
        }
        for v in values {
            if !v.is_finite() {
                return Err(Error::NonFinite("loss value"));
            }
            if *v < 0.0 || *v > loss_bound {
                return Err(Error::invalid(format!(
                    "loss value {v} outside [0, {loss_bound}]"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty vectors
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Atom probabilities when present; `None` means uniform 1/n.
    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn is_uniform(&self) -> bool {
        self.weights.is_none()
    }

    pub fn loss_bound(&self) -> f64 {
        self.loss_bound
    }

    #[inline]
    pub fn weight_of(&self, i: usize) -> f64 {
        match &self.weights {
            None => 1.0 / self.values.len() as f64,
            Some(w) => w[i],
        }
    }

    /// Mean loss over the whole population, compensated.
    pub fn population_mean(&self) -> f64 {
        crate::numeric::weighted_mean(&self.values, self.weights.as_deref())
    }
}

/// Group membership over the samples of a [`LossVector`], index-aligned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupMask {
    members: Vec<bool>,
}

impl GroupMask {
    pub fn new(members: Vec<bool>) -> Self {
        Self { members }
    }

    pub fn from_indices(len: usize, indices: &[usize]) -> Result<Self> {
        let mut members = vec![false; len];
        for &i in indices {
            if i >= len {
                return Err(Error::invalid(format!(
                    "mask index {i} out of range for length {len}"
                )));
            }
            members[i] = true;
        }
        Ok(Self { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[bool] {
        &self.members
    }

    pub fn member_count(&self) -> usize {
        self.members.iter().filter(|m| **m).count()
    }

    pub fn complement(&self) -> Self {
        Self {
            members: self.members.iter().map(|m| !m).collect(),
        }
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        self.members[i]
    }
}

/// Per-group weight rule inside an explicit group list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightRule {
    /// Every listed group weighs 1.
    Unit,
    /// A listed group of mass p weighs p^k, 0 < k <= 1.
    SizePower(f64),
}

impl WeightRule {
    fn validate(&self) -> Result<()> {
        match self {
            WeightRule::Unit => Ok(()),
            WeightRule::SizePower(k) => validate_power_exponent(*k),
        }
    }

    pub(crate) fn weight(&self, fraction: f64) -> f64 {
        match self {
            WeightRule::Unit => 1.0,
            WeightRule::SizePower(k) => power_weight(fraction, *k),
        }
    }
}

/// Weighting families over groups.
///
/// * `PowerK(k)`: every group of mass p weighs p^k. The supremum over all
///   groups is what the sorted scan estimates.
/// * `ExplicitSet`: a fixed audit list of groups; anything off the list
///   weighs 0.
/// * `LargeGroup(alpha)`: indicator weight 1 for groups of mass >= alpha.
#[derive(Debug, Clone, PartialEq)]
pub enum Weighting {
    PowerK(f64),
    ExplicitSet {
        masks: Vec<GroupMask>,
        rule: WeightRule,
    },
    LargeGroup(f64),
}

impl Weighting {
    pub fn validate(&self) -> Result<()> {
        match self {
            Weighting::PowerK(k) => validate_power_exponent(*k),
            Weighting::ExplicitSet { masks, rule } => {
                if masks.is_empty() {
                    return Err(Error::invalid("explicit weighting needs at least one group"));
                }
                rule.validate()
            }
            Weighting::LargeGroup(alpha) => {
                if !alpha.is_finite() || *alpha <= 0.0 || *alpha > 1.0 {
                    return Err(Error::invalid(format!(
                        "large-group threshold must lie in (0, 1], got {alpha}"
                    )));
                }
                Ok(())
            }
        }
    }
}

pub(crate) fn validate_power_exponent(k: f64) -> Result<()> {
    if k == 0.0 {
        return Err(Error::UniformWeightingUnestimable);
    }
    if !k.is_finite() || k < 0.0 || k > 1.0 {
        return Err(Error::invalid(format!("exponent k must lie in (0, 1], got {k}")));
    }
    Ok(())
}

/// p^k with exact handling of the two exponents used pervasively, so the scan
/// and the oracle agree bit-for-bit with hand computations.
#[inline]
pub(crate) fn power_weight(fraction: f64, k: f64) -> f64 {
    if k == 1.0 {
        fraction
    } else if k == 0.5 {
        fraction.sqrt()
    } else {
        fraction.powf(k)
    }
}

/// Binary labels, values restricted to {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<u8>,
}

impl LabelVector {
    pub fn new(labels: Vec<u8>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyInput("label vector"));
        }
        if let Some(bad) = labels.iter().find(|l| **l > 1) {
            return Err(Error::invalid(format!("label {bad} outside {{0, 1}}")));
        }
        Ok(Self { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.labels
    }

    pub fn count_of(&self, class: u8) -> usize {
        self.labels.iter().filter(|l| **l == class).count()
    }
}

/// Opaque per-sample sensitive keys, one per sample; a key is the joined
/// tuple of discretized sensitive attributes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensitiveKeyVector {
    keys: Vec<String>,
}

impl SensitiveKeyVector {
    pub fn new(keys: Vec<String>) -> Result<Self> {
        if keys.is_empty() {
            return Err(Error::EmptyInput("sensitive key vector"));
        }
        Ok(Self { keys })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    /// Number of distinct keys (T).
    pub fn distinct_count(&self) -> usize {
        let mut seen: Vec<&str> = self.keys.iter().map(|s| s.as_str()).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }
}

/// Probability mass of the group: sum of member weights (member count / n for
/// uniform vectors).
pub fn group_fraction(losses: &LossVector, mask: &GroupMask) -> Result<f64> {
    check_mask_len(losses, mask)?;
    match losses.weights() {
        None => Ok(mask.member_count() as f64 / losses.len() as f64),
        Some(w) => {
            let mut acc = CompensatedSum::new();
            for (i, m) in mask.members().iter().enumerate() {
                if *m {
                    acc.add(w[i]);
                }
            }
            Ok(acc.total())
        }
    }
}

/// Mean loss inside the group. The group must carry positive mass.
pub fn group_mean(losses: &LossVector, mask: &GroupMask) -> Result<f64> {
    check_mask_len(losses, mask)?;
    if mask.member_count() == 0 {
        return Err(Error::EmptyGroup("group mean of an empty group"));
    }
    match losses.weights() {
        None => {
            let mut acc = CompensatedSum::new();
            let mut count = 0usize;
            for (i, m) in mask.members().iter().enumerate() {
                if *m {
                    acc.add(losses.values()[i]);
                    count += 1;
                }
            }
            Ok(acc.total() / count as f64)
        }
        Some(w) => {
            let mut num = CompensatedSum::new();
            let mut den = CompensatedSum::new();
            for (i, m) in mask.members().iter().enumerate() {
                if *m {
                    num.add(w[i] * losses.values()[i]);
                    den.add(w[i]);
                }
            }
            let mass = den.total();
            if mass <= 0.0 {
                return Err(Error::EmptyGroup("group carries zero probability mass"));
            }
            Ok(num.total() / mass)
        }
    }
}

/// w(g) * |E[loss | g] - E[loss]| for a single group under the weighting.
///
/// Groups the weighting does not cover (off-list masks under `ExplicitSet`,
/// groups below the `LargeGroup` threshold) contribute 0.
pub fn weighted_discrepancy(
    losses: &LossVector,
    mask: &GroupMask,
    weighting: &Weighting,
) -> Result<f64> {
    weighting.validate()?;
    let fraction = group_fraction(losses, mask)?;
    let weight = match weighting {
        Weighting::PowerK(k) => power_weight(fraction, *k),
        Weighting::ExplicitSet { masks, rule } => {
            if masks.iter().any(|m| m == mask) {
                rule.weight(fraction)
            } else {
                0.0
            }
        }
        Weighting::LargeGroup(alpha) => {
            if fraction >= *alpha {
                1.0
            } else {
                0.0
            }
        }
    };
    if weight == 0.0 {
        // Off-list or below-threshold groups never contribute, and a
        // zero-mass group has no conditional mean to compare.
        if mask.member_count() == 0 {
            return Err(Error::EmptyGroup("discrepancy of an empty group"));
        }
        return Ok(0.0);
    }
    let mean_g = group_mean(losses, mask)?;
    let mean = losses.population_mean();
    Ok(weight * (mean_g - mean).abs())
}

fn check_mask_len(losses: &LossVector, mask: &GroupMask) -> Result<()> {
    if mask.len() != losses.len() {
        return Err(Error::LengthMismatch {
            context: "group mask",
            expected: losses.len(),
            found: mask.len(),
        });
    }
    Ok(())
}
