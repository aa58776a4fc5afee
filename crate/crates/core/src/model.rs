//! Linear logistic models over encoded feature vectors.
//!
//! A model is a flat weight vector with the intercept as the final
//! coordinate. Probabilities are clamped to [1e-12, 1 - 1e-12] and the log
//! loss is capped at ln(1e12) to match, so every loss vector built from this
//! model has a finite declared bound.

use crate::error::{Error, Result};

/// Probability clamp applied after the sigmoid.
pub const PROBABILITY_CLAMP: f64 = 1e-12;

/// Ceiling on the clamped log loss: -ln(PROBABILITY_CLAMP) = ln(1e12).
pub fn log_loss_bound() -> f64 {
    -PROBABILITY_CLAMP.ln()
}

/// Weights for a linear score over d features; weights[d] is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    weights: Vec<f64>,
}

impl LinearModel {
    /// Zero-initialized model for `feature_count` features.
    pub fn zeros(feature_count: usize) -> Self {
        Self {
            weights: vec![0.0; feature_count + 1],
        }
    }

    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyInput("model weights"));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("model weight"));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn feature_count(&self) -> usize {
        self.weights.len() - 1
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Linear score w . [features, 1].
    pub fn score(&self, features: &[f64]) -> Result<f64> {
        if features.len() + 1 != self.weights.len() {
            return Err(Error::LengthMismatch {
                context: "feature vector",
                expected: self.weights.len() - 1,
                found: features.len(),
            });
        }
        let mut s = self.weights[features.len()];
        for (w, x) in self.weights.iter().zip(features) {
            if !x.is_finite() {
                return Err(Error::NonFinite("feature value"));
            }
            s += w * x;
        }
        Ok(s)
    }
}

/// Branching on the score sign keeps the sigmoid free of overflow for any
/// finite score; extreme scores saturate and the clamp takes over.
#[inline]
fn sigmoid(score: f64) -> f64 {
    if score >= 0.0 {
        1.0 / (1.0 + (-score).exp())
    } else {
        let e = score.exp();
        e / (1.0 + e)
    }
}

/// Clamped probability of class 1.
pub fn predict_probability(model: &LinearModel, features: &[f64]) -> Result<f64> {
    let score = model.score(features)?;
    Ok(sigmoid(score).clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP))
}

fn check_label(label: u8) -> Result<()> {
    if label > 1 {
        return Err(Error::invalid(format!("label {label} outside {{0, 1}}")));
    }
    Ok(())
}

// ln(1 + e^z) without overflow or cancellation at either extreme.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Cross-entropy of the prediction against the label, capped at
/// [`log_loss_bound`]. Capping the loss is the same as clamping the
/// probability (the map is monotone) but makes the ceiling exact instead of
/// losing it to cancellation in 1 - p.
pub fn log_loss(model: &LinearModel, features: &[f64], label: u8) -> Result<f64> {
    check_label(label)?;
    let score = model.score(features)?;
    let raw = if label == 1 {
        softplus(-score)
    } else {
        softplus(score)
    };
    Ok(raw.min(log_loss_bound()))
}

/// 0/1 loss of the thresholded prediction; the threshold is exactly 0.5 and
/// p = 0.5 predicts class 1.
pub fn zero_one_loss(model: &LinearModel, features: &[f64], label: u8) -> Result<f64> {
    check_label(label)?;
    let p = predict_probability(model, features)?;
    let predicted: u8 = if p >= 0.5 { 1 } else { 0 };
    Ok(if predicted == label { 0.0 } else { 1.0 })
}

/// Gradient of the clamped log loss in the model weights:
/// (p - y) * [features, 1].
pub fn log_loss_gradient(model: &LinearModel, features: &[f64], label: u8) -> Result<Vec<f64>> {
    check_label(label)?;
    let p = predict_probability(model, features)?;
    let residual = p - label as f64;
    let mut grad = Vec::with_capacity(features.len() + 1);
    for x in features {
        grad.push(residual * x);
    }
    grad.push(residual);
    Ok(grad)
}
