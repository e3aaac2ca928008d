//! Classification losses.

use crate::error::{Error, Result};

/// `-ln(pred[gold])`: cross-entropy against a one-hot target.
pub fn cross_entropy(pred: &[f64], gold: usize) -> Result<f64> {
    let p = pred.get(gold).ok_or(Error::Label {
        label: gold,
        classes: pred.len(),
    })?;
    Ok(-p.ln())
}

/// `φ = Σ_m λ_m L_m`.
pub fn global_cost(losses: &[f64], lambdas: &[f64]) -> Result<f64> {
    if losses.len() != lambdas.len() {
        return Err(Error::Contract(format!(
            "{} losses but {} task weights",
            losses.len(),
            lambdas.len()
        )));
    }
    Ok(losses.iter().zip(lambdas).map(|(l, w)| l * w).sum())
}
