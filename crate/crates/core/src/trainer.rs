//! Logistic regression with optional loss-variance penalties.
//!
//! Three objectives share one optimizer. All of them minimize mean log loss
//! plus an L2 term `eta * |theta|^2`; the penalized variants add
//! `lambda` times a variance penalty computed from the per-sample log
//! losses:
//!
//! * [`Objective::Lr`]: no penalty.
//! * [`Objective::Lv`]: label-conditional loss variance, which spreads cost
//!   over every sample whose loss strays from its label class mean.
//! * [`Objective::Clv`]: label-conditional coarse loss variance over
//!   sensitive keys, which only penalizes between-group mean differences.
//!
//! The penalty gradient uses the exact identity that the centering terms of
//! a variance cancel: d/dtheta of the batch penalty is a weighted sum of
//! per-sample loss gradients with coefficients `(2/n)(l_i - mean of l over
//! the cell of i)` for Lv and `(2/n)(cell mean - class mean)` for Clv. The
//! unit tests confirm this against finite differences of the penalty value.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::TabularDataset;
use crate::error::{Error, Result};
use crate::estimator::empirical_mwld;
use crate::loss::{LabelVector, LossVector, SensitiveKeyVector};
use crate::model::{log_loss, log_loss_bound, log_loss_gradient, zero_one_loss, LinearModel};
use crate::numeric::{compensated_sum, derive_seed, CompensatedSum};
use crate::variance::{conditional_coarse_loss_variance, conditional_loss_variance};

const TRAIN_SEED_TAG: u64 = 0x74_72_61_69_6e; // "train"

/// Regularization grid for the L2 coefficient.
pub const ETA_GRID: [f64; 4] = [0.1, 0.01, 0.001, 0.0001];

/// Penalty coefficient grid for loss-variance training; coarse-variance
/// training conventionally doubles it (the coarse penalty is weaker because
/// within-group spread is invisible to it).
pub const LAMBDA_GRID: [f64; 10] = [0.0, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0, 2.0, 3.0];

/// The doubled grid used for coarse-variance sweeps.
pub fn doubled_lambda_grid() -> Vec<f64> {
    LAMBDA_GRID.iter().map(|l| 2.0 * l).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Plain L2-regularized logistic regression.
    Lr,
    /// Adds the label-conditional loss variance penalty.
    Lv,
    /// Adds the label-conditional coarse loss variance penalty over
    /// sensitive keys.
    Clv,
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::Lr => "lr",
            Objective::Lv => "lv",
            Objective::Clv => "clv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    /// L2 coefficient (applies to every weight including the intercept).
    pub eta: f64,
    /// Variance penalty coefficient; ignored by [`Objective::Lr`].
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Interleave classes so each batch sees both labels when possible.
    pub stratify_by_label: bool,
}

impl TrainConfig {
    pub fn new(objective: Objective, eta: f64, lambda: f64, seed: u64) -> Self {
        TrainConfig {
            objective,
            eta,
            lambda,
            learning_rate: 0.5,
            batch_size: 128,
            epochs: 30,
            seed,
            stratify_by_label: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::invalid(format!(
                "eta must be finite and nonnegative, got {}",
                self.eta
            )));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid(format!(
                "lambda must be finite and nonnegative, got {}",
                self.lambda
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!(
                "learning rate must be finite and positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epoch count must be at least 1"));
        }
        Ok(())
    }

    fn penalty_active(&self) -> bool {
        self.lambda > 0.0 && self.objective != Objective::Lr
    }
}

/// Full-dataset metrics recorded after each epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub train_loss: f64,
    pub train_penalty: f64,
    pub eval_loss: Option<f64>,
    pub eval_penalty: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

/// Per-row log losses of the model on a dataset.
pub fn log_losses(model: &LinearModel, data: &TabularDataset) -> Result<Vec<f64>> {
    (0..data.len())
        .map(|i| log_loss(model, data.feature_row(i), data.labels().as_slice()[i]))
        .collect()
}

pub fn mean_log_loss(model: &LinearModel, data: &TabularDataset) -> Result<f64> {
    let losses = log_losses(model, data)?;
    Ok(compensated_sum(losses.iter().copied()) / losses.len() as f64)
}

pub fn mean_zero_one_loss(model: &LinearModel, data: &TabularDataset) -> Result<f64> {
    let mut acc = CompensatedSum::new();
    for i in 0..data.len() {
        acc.add(zero_one_loss(
            model,
            data.feature_row(i),
            data.labels().as_slice()[i],
        )?);
    }
    Ok(acc.total() / data.len() as f64)
}

/// The variance penalty of the objective on the whole dataset (0 for plain
/// regression). Requires sensitive keys for [`Objective::Clv`].
pub fn penalty_value(
    model: &LinearModel,
    data: &TabularDataset,
    objective: Objective,
) -> Result<f64> {
    let rows: Vec<usize> = (0..data.len()).collect();
    penalty_value_on(model, data, &rows, objective)
}

fn gather_rows(
    model: &LinearModel,
    data: &TabularDataset,
    rows: &[usize],
) -> Result<(Vec<f64>, Vec<u8>)> {
    let mut losses = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for &i in rows {
        losses.push(log_loss(model, data.feature_row(i), data.labels().as_slice()[i])?);
        labels.push(data.labels().as_slice()[i]);
    }
    Ok((losses, labels))
}

fn penalty_value_on(
    model: &LinearModel,
    data: &TabularDataset,
    rows: &[usize],
    objective: Objective,
) -> Result<f64> {
    match objective {
        Objective::Lr => Ok(0.0),
        Objective::Lv => {
            let (losses, labels) = gather_rows(model, data, rows)?;
            conditional_loss_variance(
                &LossVector::uniform(losses, log_loss_bound())?,
                &LabelVector::new(labels)?,
            )
        }
        Objective::Clv => {
            let keys = data
                .sensitive_keys()
                .ok_or(Error::MissingSensitiveKeys("coarse variance penalty"))?;
            let (losses, labels) = gather_rows(model, data, rows)?;
            let row_keys: Vec<String> = rows.iter().map(|&i| keys.keys()[i].clone()).collect();
            conditional_coarse_loss_variance(
                &LossVector::uniform(losses, log_loss_bound())?,
                &SensitiveKeyVector::new(row_keys)?,
                &LabelVector::new(labels)?,
            )
        }
    }
}

/// Objective restricted to a row subset: mean log loss over the rows, plus
/// the L2 term, plus lambda times the penalty computed within the rows.
/// [`objective_gradient`] is its exact gradient.
pub fn objective_value_on(
    model: &LinearModel,
    data: &TabularDataset,
    rows: &[usize],
    config: &TrainConfig,
) -> Result<f64> {
    config.validate()?;
    if rows.is_empty() {
        return Err(Error::EmptyInput("objective row subset"));
    }
    let mut acc = CompensatedSum::new();
    for &i in rows {
        acc.add(log_loss(model, data.feature_row(i), data.labels().as_slice()[i])?);
    }
    let mut value = acc.total() / rows.len() as f64;
    value += config.eta * l2_norm_squared(model.weights());
    if config.penalty_active() {
        value += config.lambda * penalty_value_on(model, data, rows, config.objective)?;
    }
    Ok(value)
}

/// Objective on the whole dataset.
pub fn objective_value(
    model: &LinearModel,
    data: &TabularDataset,
    config: &TrainConfig,
) -> Result<f64> {
    let rows: Vec<usize> = (0..data.len()).collect();
    objective_value_on(model, data, &rows, config)
}

fn l2_norm_squared(weights: &[f64]) -> f64 {
    compensated_sum(weights.iter().map(|w| w * w))
}

/// Gradient of [`objective_value_on`] with respect to the weights.
pub fn objective_gradient(
    model: &LinearModel,
    data: &TabularDataset,
    rows: &[usize],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    if rows.is_empty() {
        return Err(Error::EmptyInput("gradient row subset"));
    }
    let n = rows.len() as f64;
    let width = model.feature_count() + 1;
    let mut grad = vec![0.0; width];

    // Per-sample loss gradients enter twice: averaged for the base term and
    // reweighted by the variance coefficients for the penalty term. Compute
    // the combined per-sample scale first, then accumulate one pass.
    let mut scales = vec![1.0 / n; rows.len()];
    if config.penalty_active() {
        let (losses, labels) = gather_rows(model, data, rows)?;
        let coeffs = match config.objective {
            Objective::Lr => unreachable!("penalty_active excludes Lr"),
            Objective::Lv => variance_coefficients(&losses, &labels),
            Objective::Clv => {
                let keys = data
                    .sensitive_keys()
                    .ok_or(Error::MissingSensitiveKeys("coarse variance penalty"))?;
                coarse_variance_coefficients(&losses, &labels, rows, keys)
            }
        };
        for (scale, c) in scales.iter_mut().zip(&coeffs) {
            *scale += config.lambda * c;
        }
    }

    for (pos, &i) in rows.iter().enumerate() {
        let g = log_loss_gradient(model, data.feature_row(i), data.labels().as_slice()[i])?;
        let s = scales[pos];
        for (slot, gj) in grad.iter_mut().zip(&g) {
            *slot += s * gj;
        }
    }
    for (slot, w) in grad.iter_mut().zip(model.weights()) {
        *slot += 2.0 * config.eta * w;
    }
    Ok(grad)
}

/// Coefficients c_i with d(penalty)/dtheta = sum_i c_i * dl_i/dtheta for the
/// label-conditional loss variance: c_i = (2/n)(l_i - class mean of i).
fn variance_coefficients(losses: &[f64], labels: &[u8]) -> Vec<f64> {
    let n = losses.len() as f64;
    let mut sums: BTreeMap<u8, (CompensatedSum, usize)> = BTreeMap::new();
    for (l, y) in losses.iter().zip(labels) {
        let entry = sums.entry(*y).or_insert_with(|| (CompensatedSum::new(), 0));
        entry.0.add(*l);
        entry.1 += 1;
    }
    let means: BTreeMap<u8, f64> = sums
        .into_iter()
        .map(|(y, (s, c))| (y, s.total() / c as f64))
        .collect();
    losses
        .iter()
        .zip(labels)
        .map(|(l, y)| 2.0 / n * (l - means[y]))
        .collect()
}

/// Coefficients for the label-conditional coarse variance:
/// c_i = (2/n)(mean of i's (key, label) cell - mean of i's label class).
fn coarse_variance_coefficients(
    losses: &[f64],
    labels: &[u8],
    rows: &[usize],
    keys: &SensitiveKeyVector,
) -> Vec<f64> {
    let n = losses.len() as f64;
    let mut class_sums: BTreeMap<u8, (CompensatedSum, usize)> = BTreeMap::new();
    let mut cell_sums: BTreeMap<(&str, u8), (CompensatedSum, usize)> = BTreeMap::new();
    for ((l, y), &i) in losses.iter().zip(labels).zip(rows) {
        let class = class_sums
            .entry(*y)
            .or_insert_with(|| (CompensatedSum::new(), 0));
        class.0.add(*l);
        class.1 += 1;
        let cell = cell_sums
            .entry((keys.keys()[i].as_str(), *y))
            .or_insert_with(|| (CompensatedSum::new(), 0));
        cell.0.add(*l);
        cell.1 += 1;
    }
    let class_means: BTreeMap<u8, f64> = class_sums
        .into_iter()
        .map(|(y, (s, c))| (y, s.total() / c as f64))
        .collect();
    let cell_means: BTreeMap<(&str, u8), f64> = cell_sums
        .into_iter()
        .map(|(k, (s, c))| (k, s.total() / c as f64))
        .collect();
    labels
        .iter()
        .zip(rows)
        .map(|(y, &i)| {
            let cell = cell_means[&(keys.keys()[i].as_str(), *y)];
            2.0 / n * (cell - class_means[y])
        })
        .collect()
}

/// One epoch's visit order. Stratified order shuffles each class and merges
/// them by progress so labels interleave; otherwise a plain shuffle.
pub(crate) fn epoch_order(labels: &[u8], rng: &mut ChaCha8Rng, stratify: bool) -> Vec<usize> {
    let n = labels.len();
    if !stratify {
        let mut order: Vec<usize> = (0..n).collect();
        shuffle(&mut order, rng);
        return order;
    }
    let mut class0: Vec<usize> = (0..n).filter(|&i| labels[i] == 0).collect();
    let mut class1: Vec<usize> = (0..n).filter(|&i| labels[i] == 1).collect();
    shuffle(&mut class0, rng);
    shuffle(&mut class1, rng);
    if class0.is_empty() || class1.is_empty() {
        let mut order = if class0.is_empty() { class1 } else { class0 };
        shuffle(&mut order, rng);
        return order;
    }
    let (n0, n1) = (class0.len(), class1.len());
    let mut order = Vec::with_capacity(n);
    let (mut i0, mut i1) = (0usize, 0usize);
    while i0 < n0 || i1 < n1 {
        // Advance whichever class is behind in fractional progress
        // (i0/n0 vs i1/n1, compared exactly in integers; ties take class 0).
        let take0 = if i0 == n0 {
            false
        } else if i1 == n1 {
            true
        } else {
            i0 * n1 <= i1 * n0
        };
        if take0 {
            order.push(class0[i0]);
            i0 += 1;
        } else {
            order.push(class1[i1]);
            i1 += 1;
        }
    }
    order
}

// Fisher-Yates with an explicit loop so epoch orders are a stable function
// of the seed, not of library shuffle internals.
fn shuffle(slice: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..slice.len()).rev() {
        let j = rng.gen_range(0..=i);
        slice.swap(i, j);
    }
}

/// Minibatch SGD from zero weights. Records full-dataset metrics after each
/// epoch and fails with [`Error::Diverged`] if weights or losses stop being
/// finite.
pub fn fit(
    train: &TabularDataset,
    eval: Option<&TabularDataset>,
    config: &TrainConfig,
) -> Result<(LinearModel, TrainHistory)> {
    fit_from(LinearModel::zeros(train.feature_count()), train, eval, config)
}

pub(crate) fn fit_from(
    start: LinearModel,
    train: &TabularDataset,
    eval: Option<&TabularDataset>,
    config: &TrainConfig,
) -> Result<(LinearModel, TrainHistory)> {
    config.validate()?;
    if config.objective == Objective::Clv {
        if train.sensitive_keys().is_none() {
            return Err(Error::MissingSensitiveKeys("coarse variance training"));
        }
        if let Some(e) = eval {
            if e.sensitive_keys().is_none() {
                return Err(Error::MissingSensitiveKeys("coarse variance evaluation"));
            }
        }
    }
    if start.feature_count() != train.feature_count() {
        return Err(Error::LengthMismatch {
            context: "initial weights vs dataset width",
            expected: train.feature_count() + 1,
            found: start.feature_count() + 1,
        });
    }
    let mut model = start;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, TRAIN_SEED_TAG));
    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        let order = epoch_order(
            train.labels().as_slice(),
            &mut rng,
            config.stratify_by_label,
        );
        for batch in order.chunks(config.batch_size) {
            let grad = objective_gradient(&model, train, batch, config)?;
            let weights = model.weights_mut();
            for (w, g) in weights.iter_mut().zip(&grad) {
                *w -= config.learning_rate * g;
            }
        }
        if model.weights().iter().any(|w| !w.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                value: f64::NAN,
            });
        }
        let train_loss = mean_log_loss(&model, train)?;
        let train_penalty = penalty_value(&model, train, config.objective)?;
        if !train_loss.is_finite() || !train_penalty.is_finite() {
            return Err(Error::Diverged {
                epoch,
                value: train_loss,
            });
        }
        let (eval_loss, eval_penalty) = match eval {
            None => (None, None),
            Some(e) => (
                Some(mean_log_loss(&model, e)?),
                Some(penalty_value(&model, e, config.objective)?),
            ),
        };
        history.epochs.push(EpochRecord {
            train_loss,
            train_penalty,
            eval_loss,
            eval_penalty,
        });
    }
    Ok((model, history))
}

/// One fitted point of a penalty sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub lambda: f64,
    pub model: LinearModel,
    pub test_mean_loss: f64,
    pub test_penalty: f64,
    /// Size-square-root-weighted discrepancy of the test log losses.
    pub test_mwld_half: f64,
}

/// Retrain at each lambda (same seed, so batch orders match) and evaluate on
/// the test set. Lambdas are deduplicated and sorted ascending.
pub fn lambda_sweep(
    train: &TabularDataset,
    test: &TabularDataset,
    config: &TrainConfig,
    lambdas: &[f64],
) -> Result<Vec<SweepPoint>> {
    if lambdas.is_empty() {
        return Err(Error::EmptyInput("lambda grid"));
    }
    let mut grid: Vec<f64> = lambdas.to_vec();
    for l in &grid {
        if !(l.is_finite() && *l >= 0.0) {
            return Err(Error::invalid(format!("lambda {l} must be finite and nonnegative")));
        }
    }
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup();
    let mut points = Vec::with_capacity(grid.len());
    for lambda in grid {
        let mut c = *config;
        c.lambda = lambda;
        let (model, _) = fit(train, None, &c)?;
        let losses = log_losses(&model, test)?;
        let test_mean_loss = compensated_sum(losses.iter().copied()) / losses.len() as f64;
        let test_penalty = penalty_value(&model, test, config.objective)?;
        let lv = LossVector::uniform(losses, log_loss_bound())?;
        let test_mwld_half = empirical_mwld(&lv, 0.5)?.value;
        points.push(SweepPoint {
            lambda,
            model,
            test_mean_loss,
            test_penalty,
            test_mwld_half,
        });
    }
    Ok(points)
}

/// Pick the L2 coefficient by validation mean log loss with the penalty
/// switched off (lambda = 0). Ties keep the earliest grid entry.
pub fn tune_eta(
    train: &TabularDataset,
    validation: &TabularDataset,
    etas: &[f64],
    config: &TrainConfig,
) -> Result<f64> {
    if etas.is_empty() {
        return Err(Error::EmptyInput("eta grid"));
    }
    let mut best: Option<(f64, f64)> = None;
    for &eta in etas {
        let mut c = *config;
        c.eta = eta;
        c.lambda = 0.0;
        let (model, _) = fit(train, None, &c)?;
        let loss = mean_log_loss(&model, validation)?;
        if best.map_or(true, |(_, b)| loss < b) {
            best = Some((eta, loss));
        }
    }
    Ok(best.expect("nonempty grid").0)
}
