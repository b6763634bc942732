//! Hypothesis embeddings and the embedding-prediction-consistency loss.
//!
//! The sum-to-one weights solved in gaze space are reapplied to the source
//! embeddings, producing a hypothesis embedding per target sample; the loss
//! is the mean L1 distance between each target's predicted embedding and its
//! hypothesis, averaged over the whole target batch (skipped samples
//! contribute zero to the sum but stay in the divisor).

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llr::LlrWeights;

/// A point in embedding space; fixed dimension per model.
pub type Embedding = DVector<f64>;

/// Weights of the combined domain-adaptation loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_epc: f64,
    pub lambda_gaze: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_epc: 1.0, lambda_gaze: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_epc < 0.0 || self.lambda_gaze < 0.0 {
            return Err(Error::InvalidInput(format!(
                "loss weights must be >= 0, got ({}, {})",
                self.lambda_epc, self.lambda_gaze
            )));
        }
        Ok(())
    }
}

/// Consistency loss over one target batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpcBatchResult {
    pub loss: f64,
    /// Target samples that had at least k neighbors.
    pub participating: usize,
    pub skipped: usize,
}

/// Combine source embeddings with the gaze-space weights: sum_i w_i phi_i.
/// Summation runs in slice order, which callers keep canonical (ascending
/// neighbor index).
pub fn hypothesis_embedding(
    source_embeddings: &[Embedding],
    w: &LlrWeights,
) -> Result<Embedding> {
    if source_embeddings.len() != w.values.len() {
        return Err(Error::DimensionMismatch {
            expected: w.values.len(),
            got: source_embeddings.len(),
        });
    }
    let dim = source_embeddings
        .first()
        .ok_or_else(|| Error::InvalidInput("empty neighborhood".into()))?
        .len();
    let mut out = Embedding::zeros(dim);
    for (e, &wi) in source_embeddings.iter().zip(&w.values) {
        if e.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: e.len() });
        }
        out.axpy(wi, e, 1.0);
    }
    Ok(out)
}

/// L1 distance; the building block of the consistency loss.
fn l1(a: &Embedding, b: &Embedding) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum()
}

/// Consistency loss over a target batch. `hypotheses[j]` is `None` for
/// skipped samples. Divides by the full batch size.
pub fn epc_loss(
    target_embeddings: &[Embedding],
    hypotheses: &[Option<Embedding>],
) -> Result<EpcBatchResult> {
    let (result, _) = epc_loss_with_grads(target_embeddings, hypotheses)?;
    Ok(result)
}

/// Same as [`epc_loss`], also returning d(loss)/d(target embedding) per
/// sample, already scaled by 1/B_t. The gradient w.r.t. the hypothesis
/// embedding is the negation; callers scatter it onto the source embeddings
/// with the reconstruction weights. The L1 sub-gradient at a zero component
/// difference is zero.
pub fn epc_loss_with_grads(
    target_embeddings: &[Embedding],
    hypotheses: &[Option<Embedding>],
) -> Result<(EpcBatchResult, Vec<Option<Embedding>>)> {
    if target_embeddings.len() != hypotheses.len() {
        return Err(Error::DimensionMismatch {
            expected: target_embeddings.len(),
            got: hypotheses.len(),
        });
    }
    let batch = target_embeddings.len();
    if batch == 0 {
        return Ok((EpcBatchResult { loss: 0.0, participating: 0, skipped: 0 }, Vec::new()));
    }
    let inv_b = 1.0 / batch as f64;
    let mut sum = 0.0;
    let mut participating = 0;
    let mut grads = Vec::with_capacity(batch);
    for (phi, hyp) in target_embeddings.iter().zip(hypotheses) {
        match hyp {
            None => grads.push(None),
            Some(h) => {
                if h.len() != phi.len() {
                    return Err(Error::DimensionMismatch { expected: phi.len(), got: h.len() });
                }
                participating += 1;
                sum += l1(phi, h);
                let g = Embedding::from_iterator(
                    phi.len(),
                    phi.iter().zip(h.iter()).map(|(x, y)| {
                        let d = x - y;
                        if d > 0.0 {
                            inv_b
                        } else if d < 0.0 {
                            -inv_b
                        } else {
                            0.0
                        }
                    }),
                );
                grads.push(Some(g));
            }
        }
    }
    let result = EpcBatchResult {
        loss: sum * inv_b,
        participating,
        skipped: batch - participating,
    };
    Ok((result, grads))
}

/// Combined domain-adaptation loss: lambda_epc * epc + lambda_gaze * gaze.
pub fn da_loss(epc: f64, gaze: f64, lw: &LossWeights) -> f64 {
    lw.lambda_epc * epc + lw.lambda_gaze * gaze
}
