//! Listwise softmax cross-entropy, token-level generation cross-entropy and
//! their combination.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::error::{Error, Result};

/// How graded labels become the listwise target distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    /// Divide by the label sum so the target is a probability distribution.
    #[default]
    Normalized,
    /// Use the labels as given.
    Raw,
}

/// Per-segment relevance targets for one list.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingTarget {
    y: Vec<f64>,
}

impl RankingTarget {
    pub fn new(y: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::Shape("ranking target must have at least one entry".into()));
        }
        if y.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation(
                "ranking targets must be finite and non-negative".into(),
            ));
        }
        Ok(RankingTarget { y })
    }

    pub fn from_labels(labels: &[u32]) -> Result<Self> {
        Self::new(labels.iter().map(|&l| f64::from(l)).collect())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn has_mass(&self) -> bool {
        self.y.iter().any(|&v| v > 0.0)
    }

    fn prepared(&self, mode: TargetMode) -> Result<Vec<f64>> {
        let total: f64 = self.y.iter().sum();
        if total <= 0.0 {
            return Err(Error::NoPositiveMass);
        }
        Ok(match mode {
            TargetMode::Normalized => self.y.iter().map(|v| v / total).collect(),
            TargetMode::Raw => self.y.clone(),
        })
    }
}

/// Numerically stable `ln Σ exp(x)`.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(x);
    x.iter().map(|v| (v - lse).exp()).collect()
}

fn check_lengths(y: &RankingTarget, y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::Shape(format!(
            "ranking target has {} entries but prediction has {}",
            y.len(),
            y_hat.len()
        )));
    }
    Ok(())
}

/// `-Σ_j y_j log softmax(y_hat)_j`.
pub fn softmax_ce_listwise(y: &RankingTarget, y_hat: &[f64], mode: TargetMode) -> Result<f64> {
    check_lengths(y, y_hat)?;
    let t = y.prepared(mode)?;
    let lse = log_sum_exp(y_hat);
    Ok(-t.iter().zip(y_hat).map(|(ti, s)| ti * (s - lse)).sum::<f64>())
}

/// `∂ℓ/∂y_hat_j = softmax(y_hat)_j · Σ_k y_k − y_j`.
pub fn softmax_ce_grad(y: &RankingTarget, y_hat: &[f64], mode: TargetMode) -> Result<Vec<f64>> {
    check_lengths(y, y_hat)?;
    let t = y.prepared(mode)?;
    let mass: f64 = t.iter().sum();
    Ok(softmax(y_hat)
        .into_iter()
        .zip(&t)
        .map(|(p, ti)| p * mass - ti)
        .collect())
}

fn check_generation(logits: &Array2<f64>, target: &[TokenId], pad_id: TokenId) -> Result<usize> {
    if logits.nrows() != target.len() {
        return Err(Error::Shape(format!(
            "{} logit steps for a target of {} tokens",
            logits.nrows(),
            target.len()
        )));
    }
    if let Some(&t) = target.iter().find(|&&t| t as usize >= logits.ncols()) {
        return Err(Error::Shape(format!(
            "target token {t} outside vocabulary of {}",
            logits.ncols()
        )));
    }
    let n = target.iter().filter(|&&t| t != pad_id).count();
    if n == 0 {
        return Err(Error::AllPadTarget);
    }
    Ok(n)
}

/// Mean over non-PAD steps of `-log softmax(logits_t)[target_t]`.
pub fn generation_ce(logits: &Array2<f64>, target: &[TokenId], pad_id: TokenId) -> Result<f64> {
    let n = check_generation(logits, target, pad_id)?;
    let mut total = 0.0;
    for (row, &t) in logits.rows().into_iter().zip(target) {
        if t == pad_id {
            continue;
        }
        let row = row.to_vec();
        total += log_sum_exp(&row) - row[t as usize];
    }
    Ok(total / n as f64)
}

/// Loss and its gradient with respect to the logits.
pub fn generation_ce_grad(
    logits: &Array2<f64>,
    target: &[TokenId],
    pad_id: TokenId,
) -> Result<(f64, Array2<f64>)> {
    let n = check_generation(logits, target, pad_id)?;
    let scale = 1.0 / n as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    for (i, (row, &t)) in logits.rows().into_iter().zip(target).enumerate() {
        if t == pad_id {
            continue;
        }
        let row = row.to_vec();
        let lse = log_sum_exp(&row);
        total += lse - row[t as usize];
        for (j, v) in row.iter().enumerate() {
            grad[[i, j]] = (v - lse).exp() * scale;
        }
        grad[[i, t as usize]] -= scale;
    }
    Ok((total * scale, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLossConfig {
    pub lambda: f64,
}

impl Default for JointLossConfig {
    fn default() -> Self {
        JointLossConfig { lambda: 1.0 }
    }
}

impl JointLossConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::Config(format!(
                "lambda must be finite and non-negative, got {lambda}"
            )));
        }
        Ok(JointLossConfig { lambda })
    }
}

pub fn joint_loss(gen: f64, ltr: f64, cfg: &JointLossConfig) -> f64 {
    gen + cfg.lambda * ltr
}
