//! Loss-variance measures and their finite-sample deviation radii.
//!
//! Four population-form variance quantities over a loss vector:
//!
//! * [`loss_variance`]: plain variance of the losses,
//! * [`conditional_loss_variance`]: label-conditioned variance, averaged over
//!   label classes,
//! * [`coarse_loss_variance`]: variance of per-sensitive-cell mean losses
//!   around the population mean,
//! * [`conditional_coarse_loss_variance`]: the coarse quantity computed
//!   within each label class, averaged over classes.
//!
//! For losses in [0, 1], sqrt-variance sandwiches the discrepancy value under
//! w(g) = sqrt(p): MWLD <= sqrt(Var) <= MWLD * sqrt(2 - 4 ln MWLD). The
//! deviation radii ([`maurer_deviation`], [`coarse_deviation`]) certify how
//! far empirical variance quantities can sit from their population values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{LabelVector, LossVector, SensitiveKeyVector};
use crate::numeric::CompensatedSum;

/// Population-form variance: sum of w_i (v_i - mean)^2 (w_i = 1/n when
/// uniform).
pub fn loss_variance(losses: &LossVector) -> f64 {
    let mean = losses.population_mean();
    let mut acc = CompensatedSum::new();
    for (i, v) in losses.values().iter().enumerate() {
        let d = v - mean;
        acc.add(losses.weight_of(i) * d * d);
    }
    acc.total()
}

/// Unbiased (n-1 denominator) sample variance, the form the sqrt-variance
/// deviation radius is stated for. Uniform samples of size >= 2 only.
pub fn unbiased_loss_variance(losses: &LossVector) -> Result<f64> {
    if !losses.is_uniform() {
        return Err(Error::WeightedInputUnsupported(
            "unbiased variance is a sample statistic",
        ));
    }
    let n = losses.len();
    if n < 2 {
        return Err(Error::invalid(
            "unbiased variance needs at least 2 samples",
        ));
    }
    let mean = losses.population_mean();
    let mut acc = CompensatedSum::new();
    for v in losses.values() {
        let d = v - mean;
        acc.add(d * d);
    }
    Ok(acc.total() / (n - 1) as f64)
}

struct Cell {
    mass: CompensatedSum,
    loss_mass: CompensatedSum,
    // member indices, needed for within-cell second passes
    members: Vec<usize>,
}

impl Cell {
    fn new() -> Self {
        Self {
            mass: CompensatedSum::new(),
            loss_mass: CompensatedSum::new(),
            members: Vec::new(),
        }
    }

    fn mean(&self) -> f64 {
        self.loss_mass.total() / self.mass.total()
    }
}

fn group_cells<'a, K: Ord>(
    losses: &LossVector,
    key_of: impl Fn(usize) -> K,
) -> BTreeMap<K, Cell> {
    let mut cells: BTreeMap<K, Cell> = BTreeMap::new();
    for (i, v) in losses.values().iter().enumerate() {
        let w = losses.weight_of(i);
        let cell = cells.entry(key_of(i)).or_insert_with(Cell::new);
        cell.mass.add(w);
        cell.loss_mass.add(w * v);
        cell.members.push(i);
    }
    cells
}

fn check_len(losses: &LossVector, found: usize, context: &'static str) -> Result<()> {
    if losses.len() != found {
        return Err(Error::LengthMismatch {
            context,
            expected: losses.len(),
            found,
        });
    }
    Ok(())
}

/// Label-conditioned loss variance: sum over observed label classes b of
/// p(b) * Var[loss | y = b], both factors in population form. A single
/// observed class degenerates to [`loss_variance`].
pub fn conditional_loss_variance(losses: &LossVector, labels: &LabelVector) -> Result<f64> {
    check_len(losses, labels.len(), "labels")?;
    let cells = group_cells(losses, |i| labels.as_slice()[i]);
    let mut total = CompensatedSum::new();
    for cell in cells.values() {
        let mass = cell.mass.total();
        if mass <= 0.0 {
            continue;
        }
        let mean = cell.mean();
        let mut var = CompensatedSum::new();
        for &i in &cell.members {
            let d = losses.values()[i] - mean;
            var.add((losses.weight_of(i) / mass) * d * d);
        }
        total.add(mass * var.total());
    }
    Ok(total.total())
}

/// Coarse loss variance: variance of the per-sensitive-cell mean losses,
/// sum over cells a of p(a) (mean_a - mean)^2. Distinct keys per sample
/// degenerate to [`loss_variance`]; a constant key gives 0.
pub fn coarse_loss_variance(losses: &LossVector, keys: &SensitiveKeyVector) -> Result<f64> {
    check_len(losses, keys.len(), "sensitive keys")?;
    let mean = losses.population_mean();
    let cells = group_cells(losses, |i| keys.keys()[i].as_str());
    let mut total = CompensatedSum::new();
    for cell in cells.values() {
        let mass = cell.mass.total();
        if mass <= 0.0 {
            continue;
        }
        let d = cell.mean() - mean;
        total.add(mass * d * d);
    }
    Ok(total.total())
}

/// Label-conditioned coarse loss variance: within each label class, the
/// variance of per-cell means around the class mean, averaged over classes
/// by class mass.
pub fn conditional_coarse_loss_variance(
    losses: &LossVector,
    keys: &SensitiveKeyVector,
    labels: &LabelVector,
) -> Result<f64> {
    check_len(losses, keys.len(), "sensitive keys")?;
    check_len(losses, labels.len(), "labels")?;
    let classes = group_cells(losses, |i| labels.as_slice()[i]);
    let mut total = CompensatedSum::new();
    for class in classes.values() {
        let class_mass = class.mass.total();
        if class_mass <= 0.0 {
            continue;
        }
        let class_mean = class.mean();
        // Sub-cells within the class; p(a, b) (m_ab - m_b)^2 summed directly
        // equals p(b) * sum_a p(a|b) (m_ab - m_b)^2.
        let mut sub: BTreeMap<&str, Cell> = BTreeMap::new();
        for &i in &class.members {
            let w = losses.weight_of(i);
            let cell = sub
                .entry(keys.keys()[i].as_str())
                .or_insert_with(Cell::new);
            cell.mass.add(w);
            cell.loss_mass.add(w * losses.values()[i]);
            cell.members.push(i);
        }
        for cell in sub.values() {
            let mass = cell.mass.total();
            if mass <= 0.0 {
                continue;
            }
            let d = cell.mean() - class_mean;
            total.add(mass * d * d);
        }
    }
    Ok(total.total())
}

/// Two-sided relation between the sqrt-weighted discrepancy and
/// sqrt-variance for losses in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceSandwich {
    /// Discrepancy value under w(g) = sqrt(p); must lie in [0, 1].
    pub mwld_half: f64,
    /// Square root of the loss variance.
    pub sqrt_variance: f64,
    /// mwld_half * sqrt(2 - 4 ln(mwld_half)), the certified ceiling on
    /// sqrt-variance; 0 at mwld_half = 0 by continuity.
    pub upper_envelope: f64,
}

/// The envelope function x * sqrt(2 - 4 ln x) on [0, 1], extended by
/// continuity to 0 at x = 0.
pub fn sandwich_envelope(x: f64) -> Result<f64> {
    if !x.is_finite() || x < 0.0 || x > 1.0 {
        return Err(Error::invalid(format!(
            "sandwich envelope argument must lie in [0, 1], got {x}"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok(x * (2.0 - 4.0 * x.ln()).sqrt())
}

/// Assemble the sandwich record for a measured discrepancy and variance.
pub fn sandwich(mwld_half: f64, sqrt_variance: f64) -> Result<VarianceSandwich> {
    if !sqrt_variance.is_finite() || sqrt_variance < 0.0 {
        return Err(Error::invalid(format!(
            "sqrt-variance must be finite and nonnegative, got {sqrt_variance}"
        )));
    }
    let upper_envelope = sandwich_envelope(mwld_half)?;
    Ok(VarianceSandwich {
        mwld_half,
        sqrt_variance,
        upper_envelope,
    })
}

/// Variance ceiling for losses in [0, L] given the sqrt-weighted discrepancy
/// gamma: Var <= 2 gamma^2 (1 + 2 ln(L / gamma)). Requires 0 < gamma <= L.
pub fn variance_upper_bound_general_l(gamma: f64, l: f64) -> Result<f64> {
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(Error::invalid(format!(
            "discrepancy gamma must be positive, got {gamma}"
        )));
    }
    if !l.is_finite() || l < gamma {
        return Err(Error::invalid(format!(
            "loss bound L = {l} must be finite and at least gamma = {gamma}"
        )));
    }
    Ok(2.0 * gamma * gamma * (1.0 + 2.0 * (l / gamma).ln()))
}

/// Deviation radius for sqrt-variance: with probability at least 1 - delta,
/// |sqrt(Var) - sqrt(Var_hat)| <= sqrt(2 ln(2/delta) / (n - 1)), where
/// Var_hat is the unbiased (n-1) sample variance of losses in [0, 1].
pub fn maurer_deviation(n: usize, delta: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("deviation radius needs n >= 2"));
    }
    check_delta(delta)?;
    Ok((2.0 * (2.0 / delta).ln() / (n - 1) as f64).sqrt())
}

/// Deviation radius for the square root of coarse loss variance over T
/// sensitive cells: sqrt(2 ln(2/delta) / (n - 1)) plus
/// sqrt((2T + 8) ln(2/delta) / n), holding with probability at least
/// 1 - (T + 3) delta. Requires n > 2.
pub fn coarse_deviation(n: usize, delta: f64, t: usize) -> Result<f64> {
    if n <= 2 {
        return Err(Error::invalid("coarse deviation radius needs n > 2"));
    }
    if t < 1 {
        return Err(Error::invalid("cell count T must be at least 1"));
    }
    check_delta(delta)?;
    let log_term = (2.0 / delta).ln();
    let sample_term = (2.0 * log_term / (n - 1) as f64).sqrt();
    let cell_term = (((2 * t + 8) as f64) * log_term / n as f64).sqrt();
    Ok(sample_term + cell_term)
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!(
            "confidence level delta must lie in (0, 1), got {delta}"
        )));
    }
    Ok(())
}
