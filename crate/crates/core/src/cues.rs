//! Per-sample robustness cues: input-gradient norm, predictive entropy, and
//! MC-dropout uncertainty, each min-max normalized over the batch.
//!
//! Cue extraction is read-only with respect to the model: everything returned
//! here is detached, so no gradient flows from the scheduler back into the
//! classifier through the cues.

use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, Reduction};
use crate::models::MlpClassifier;
use crate::rng::SeededRng;
use crate::tensor::{softmax_rows, Tensor};

/// Unnormalized per-sample signals.
#[derive(Debug, Clone)]
pub struct RawCues {
    /// L2 norm of the input gradient of the summed cross-entropy, >= 0.
    pub gradient_norm: Vec<f64>,
    /// Predictive entropy in nats, in [0, ln K].
    pub entropy: Vec<f64>,
    /// Mean per-class variance of softmax outputs across dropout passes, >= 0.
    pub uncertainty: Vec<f64>,
}

/// Raw cues plus their batch-normalized form, one row per sample with columns
/// (gradient norm, entropy, uncertainty), each in [0, 1].
#[derive(Debug, Clone)]
pub struct CueBatch {
    pub raw: RawCues,
    pub normalized: Tensor,
}

/// Threshold under which a batch is treated as constant in a cue.
const DEGENERATE_RANGE: f64 = 1e-12;

/// Per-sample L2 norm of the input gradient of the cross-entropy loss, using
/// an eval-mode forward and a summed (not averaged) batch loss so sample
/// gradients stay independent.
pub fn gradient_norm(model: &MlpClassifier, x: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let input = g.leaf(x.clone());
    let mut unused_rng = SeededRng::new(0);
    let pass = model.forward(&mut g, input, Mode::Eval, &mut unused_rng)?;
    let loss = g.softmax_cross_entropy(pass.output, labels, Reduction::Sum)?;
    g.backward(loss)?;
    let grad = g
        .gradient(input)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));
    Ok(grad.row_l2_norms())
}

/// Shannon entropy in nats of the softmax distribution per row, with
/// 0 * log 0 treated as 0.
pub fn prediction_entropy(logits: &Tensor) -> Vec<f64> {
    let probs = softmax_rows(logits);
    (0..probs.nrows())
        .map(|i| {
            let h: f64 = probs
                .row(i)
                .iter()
                .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
                .sum();
            h.max(0.0)
        })
        .collect()
}

/// Mean over classes of the population variance of softmax probabilities
/// across stochastic passes. `passes` holds one [B x K] tensor per pass.
pub fn mean_class_variance(passes: &[Tensor]) -> Vec<f64> {
    let t = passes.len();
    let (b, k) = (passes[0].nrows(), passes[0].ncols());
    let mut out = vec![0.0; b];
    for (i, u) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..k {
            let mean: f64 = passes.iter().map(|p| p.row(i)[j]).sum::<f64>() / t as f64;
            let var: f64 = passes
                .iter()
                .map(|p| {
                    let d = p.row(i)[j] - mean;
                    d * d
                })
                .sum::<f64>()
                / t as f64;
            acc += var;
        }
        *u = acc / k as f64;
    }
    out
}

/// Epistemic uncertainty from `t_passes` train-mode forwards with dropout
/// active. Each pass draws its mask from an indexed child of `rng`, so a
/// fixed stream reproduces the estimate bit for bit.
pub fn mc_dropout_uncertainty(
    model: &MlpClassifier,
    x: &Tensor,
    t_passes: usize,
    rng: &SeededRng,
) -> Result<Vec<f64>> {
    if t_passes < 1 {
        return Err(Error::Config(format!(
            "MC dropout needs at least one pass, got {t_passes}"
        )));
    }
    let mut passes = Vec::with_capacity(t_passes);
    for t in 0..t_passes {
        let mut pass_rng = rng.child(t as u64);
        let logits = model.logits(x, Mode::Train, &mut pass_rng)?;
        passes.push(softmax_rows(&logits));
    }
    Ok(mean_class_variance(&passes))
}

/// Min-max scaling to [0, 1]; a batch with range below 1e-12 maps to 0.5
/// everywhere, which centers the scheduler input.
pub fn batch_minmax_normalize(values: &[f64]) -> Vec<f64> {
    let min = values.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let max = values.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if max - min < DEGENERATE_RANGE {
        return vec![0.5; values.len()];
    }
    values.iter().map(|&v| (v - min) / (max - min)).collect()
}

/// Extract and normalize all three cues for a batch. The gradient-norm
/// forward is shared with the entropy computation (same eval-mode logits).
pub fn assemble_cues(
    model: &MlpClassifier,
    x: &Tensor,
    labels: &[usize],
    t_passes: usize,
    rng: &SeededRng,
) -> Result<CueBatch> {
    // One eval-mode graph serves both the input gradient and the entropy.
    let mut g = Graph::new();
    let input = g.leaf(x.clone());
    let mut unused_rng = SeededRng::new(0);
    let pass = model.forward(&mut g, input, Mode::Eval, &mut unused_rng)?;
    let loss = g.softmax_cross_entropy(pass.output, labels, Reduction::Sum)?;
    g.backward(loss)?;
    let grad = g
        .gradient(input)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));
    let gradient_norm = grad.row_l2_norms();
    let probs = g.probabilities(loss).expect("cross-entropy stores probs");
    let entropy: Vec<f64> = (0..probs.nrows())
        .map(|i| {
            probs
                .row(i)
                .iter()
                .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
                .sum::<f64>()
                .max(0.0)
        })
        .collect();

    let uncertainty = mc_dropout_uncertainty(model, x, t_passes, rng)?;

    let g_norm = batch_minmax_normalize(&gradient_norm);
    let h_norm = batch_minmax_normalize(&entropy);
    let u_norm = batch_minmax_normalize(&uncertainty);

    let b = x.nrows();
    let mut z = vec![0.0; b * 3];
    for i in 0..b {
        z[i * 3] = g_norm[i];
        z[i * 3 + 1] = h_norm[i];
        z[i * 3 + 2] = u_norm[i];
    }
    Ok(CueBatch {
        raw: RawCues {
            gradient_norm,
            entropy,
            uncertainty,
        },
        normalized: Tensor::new(vec![b, 3], z)?,
    })
}
