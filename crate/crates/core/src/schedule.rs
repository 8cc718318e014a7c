//! Per-sample perturbation budgets: the affine map from fusion scores to
//! epsilons, the fixed-weight fusion baseline, and the first-order surrogate
//! that carries loss gradients back to the scheduler through the budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, Reduction};
use crate::models::MlpClassifier;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// How fusion scores are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerMode {
    /// Learnable MLP fusion of the cue vector.
    Learnable,
    /// Fixed weighted sum of the cue vector.
    Static,
    /// Constant budget at the midpoint eps_min + lambda/2.
    Fixed,
}

/// Budget configuration: emitted epsilons live in [eps_min, eps_min+lambda].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleConfig {
    /// Smallest budget, in input-domain units.
    pub eps_min: f64,
    /// Budget range on top of eps_min.
    pub lambda: f64,
    pub mode: SchedulerMode,
    /// Weights (w_g, w_H, w_u) for static fusion.
    pub static_weights: [f64; 3],
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            eps_min: 2.0 / 255.0,
            lambda: 12.0 / 255.0,
            mode: SchedulerMode::Learnable,
            static_weights: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        }
    }
}

impl ScheduleConfig {
    /// Validate against the unit input domain.
    pub fn validate(&self) -> Result<()> {
        if self.eps_min < 0.0 || self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "eps_min and lambda must be nonnegative, got {} and {}",
                self.eps_min, self.lambda
            )));
        }
        if self.eps_min + self.lambda > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "eps_min + lambda = {} exceeds the domain width 1.0",
                self.eps_min + self.lambda
            )));
        }
        if self.static_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config(format!(
                "static weights must be finite, got {:?}",
                self.static_weights
            )));
        }
        Ok(())
    }

    /// Budget used by fixed-budget training: the midpoint of the range, which
    /// equals the conventional single evaluation budget.
    pub fn fixed_budget(&self) -> f64 {
        self.eps_min + 0.5 * self.lambda
    }
}

/// Per-sample budgets together with the scores and config that produced them.
#[derive(Debug, Clone)]
pub struct EpsilonSchedule {
    pub eps: Vec<f64>,
    pub sigma: Vec<f64>,
    pub config: ScheduleConfig,
}

/// Affine budget map eps_i = eps_min + lambda * sigma_i. The derivative
/// d eps / d sigma is the constant lambda.
pub fn epsilon_from_sigma(sigma: &[f64], cfg: &ScheduleConfig) -> Result<EpsilonSchedule> {
    cfg.validate()?;
    let eps = sigma
        .iter()
        .map(|&s| cfg.eps_min + cfg.lambda * s)
        .collect();
    Ok(EpsilonSchedule {
        eps,
        sigma: sigma.to_vec(),
        config: cfg.clone(),
    })
}

/// Fixed-weight fusion: sigma_i = clamp(w . z_i, 0, 1) over the normalized
/// cue rows.
pub fn static_fusion(cues: &Tensor, weights: &[f64; 3]) -> Vec<f64> {
    (0..cues.nrows())
        .map(|i| {
            let row = cues.row(i);
            (weights[0] * row[0] + weights[1] * row[1] + weights[2] * row[2]).clamp(0.0, 1.0)
        })
        .collect()
}

/// Tolerance for deciding that a sample's budget constraint is active.
const ACTIVE_CONSTRAINT_SLACK: f64 = 1e-9;

/// First-order estimate of d loss / d eps at the attack optimum, per sample.
///
/// At an active L-infinity constraint the attack point moves radially with
/// the budget, so dL/deps is the input gradient dotted with delta/eps where
/// delta = x_adv - x. Samples whose constraint is inactive get zero: growing
/// a slack budget does not move the optimum.
pub fn epsilon_grad_surrogate(
    model: &MlpClassifier,
    x_adv: &Tensor,
    x: &Tensor,
    labels: &[usize],
    eps: &[f64],
) -> Result<Vec<f64>> {
    if x_adv.shape() != x.shape() {
        return Err(Error::DimensionMismatch {
            op: "epsilon_grad_surrogate",
            lhs: x_adv.shape().to_vec(),
            rhs: x.shape().to_vec(),
        });
    }
    if eps.len() != x.nrows() {
        return Err(Error::Contract(format!(
            "expected {} budgets, got {}",
            x.nrows(),
            eps.len()
        )));
    }
    if let Some(bad) = eps.iter().find(|&&e| e <= 0.0) {
        return Err(Error::Contract(format!(
            "surrogate requires positive budgets, got {bad}"
        )));
    }

    // Input gradient of the summed loss at the adversarial points; summed so
    // the per-sample gradients stay separated.
    let mut g = Graph::new();
    let input = g.leaf(x_adv.clone());
    let mut unused_rng = SeededRng::new(0);
    let pass = model.forward(&mut g, input, Mode::Eval, &mut unused_rng)?;
    let loss = g.softmax_cross_entropy(pass.output, labels, Reduction::Sum)?;
    g.backward(loss)?;
    let grad = g
        .gradient(input)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));

    let d = x.ncols();
    let mut out = Vec::with_capacity(x.nrows());
    for i in 0..x.nrows() {
        let mut linf: f64 = 0.0;
        for j in 0..d {
            linf = linf.max((x_adv.row(i)[j] - x.row(i)[j]).abs());
        }
        if linf < eps[i] - ACTIVE_CONSTRAINT_SLACK {
            out.push(0.0);
            continue;
        }
        let mut dot = 0.0;
        for j in 0..d {
            let delta = x_adv.row(i)[j] - x.row(i)[j];
            dot += grad.row(i)[j] * (delta / eps[i]);
        }
        out.push(dot);
    }
    Ok(out)
}
