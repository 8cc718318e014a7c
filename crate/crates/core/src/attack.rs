//! L-infinity PGD under per-sample budgets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, Reduction};
use crate::models::MlpClassifier;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Signed-gradient iterations, >= 1.
    pub steps: usize,
    /// Step size in input-domain units. May exceed the budget; projection
    /// handles overshoot.
    pub alpha: f64,
    /// Start from a uniform point inside the budget ball instead of the
    /// clean input.
    pub random_start: bool,
    /// Valid input interval, clamped after every step.
    pub domain: (f64, f64),
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            steps: 20,
            alpha: 2.0 / 255.0,
            random_start: true,
            domain: (0.0, 1.0),
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("attack needs at least one step".into()));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config(format!(
                "attack step size must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.domain.0.is_finite() && self.domain.1.is_finite() && self.domain.0 < self.domain.1) {
            return Err(Error::Config(format!(
                "attack domain must be a nonempty interval, got {:?}",
                self.domain
            )));
        }
        Ok(())
    }
}

/// Clamp each row of `delta` to [-eps_i, +eps_i].
pub fn linf_project(delta: &mut Tensor, eps: &[f64]) {
    let cols = delta.ncols();
    for i in 0..delta.nrows() {
        let e = eps[i];
        for v in &mut delta.row_mut(i)[..cols] {
            *v = v.clamp(-e, e);
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Iterated signed-gradient ascent on the cross-entropy with eval-mode
/// forwards, projecting onto the per-sample ball and the domain after every
/// step. Samples with a zero budget are passed through untouched. The result
/// is a plain tensor, detached from any graph.
pub fn pgd_attack(
    model: &MlpClassifier,
    x: &Tensor,
    labels: &[usize],
    eps: &[f64],
    cfg: &AttackConfig,
    rng: &SeededRng,
) -> Result<Tensor> {
    cfg.validate()?;
    if eps.len() != x.nrows() {
        return Err(Error::Contract(format!(
            "expected {} budgets, got {}",
            x.nrows(),
            eps.len()
        )));
    }
    if let Some(bad) = eps.iter().find(|&&e| e < 0.0) {
        return Err(Error::Contract(format!(
            "attack budgets must be nonnegative, got {bad}"
        )));
    }

    let (b, d) = (x.nrows(), x.ncols());
    let (lo, hi) = cfg.domain;
    let live: Vec<bool> = eps.iter().map(|&e| e > 0.0).collect();

    // delta starts at zero or at a uniform point in the ball; drawing a unit
    // coordinate and scaling by eps keeps the start smooth in the budget.
    let mut delta = Tensor::zeros(vec![b, d]);
    if cfg.random_start {
        let mut init_rng = rng.clone();
        for i in 0..b {
            for j in 0..d {
                let u = init_rng.uniform(-1.0, 1.0);
                if live[i] {
                    delta.row_mut(i)[j] = u * eps[i];
                }
            }
        }
    }

    let mut current = x.clone();
    let apply = |current: &mut Tensor, delta: &Tensor| {
        for i in 0..b {
            if !live[i] {
                continue;
            }
            for j in 0..d {
                current.row_mut(i)[j] = (x.row(i)[j] + delta.row(i)[j]).clamp(lo, hi);
            }
        }
    };
    apply(&mut current, &delta);

    for _ in 0..cfg.steps {
        let mut g = Graph::new();
        let input = g.leaf(current.clone());
        let mut unused_rng = SeededRng::new(0);
        let pass = model.forward(&mut g, input, Mode::Eval, &mut unused_rng)?;
        let loss = g.softmax_cross_entropy(pass.output, labels, Reduction::Sum)?;
        g.backward(loss)?;
        let grad = g
            .gradient(input)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(vec![b, d]));

        for i in 0..b {
            if !live[i] {
                continue;
            }
            for j in 0..d {
                let stepped = current.row(i)[j] + cfg.alpha * sign(grad.row(i)[j]);
                delta.row_mut(i)[j] = (stepped - x.row(i)[j]).clamp(-eps[i], eps[i]);
            }
        }
        apply(&mut current, &delta);
    }

    Ok(current)
}
