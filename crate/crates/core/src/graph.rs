//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is an append-only tape: every operation pushes one node whose
//! parents already live on the tape, so reverse tape order is a reverse
//! topological order and [`Graph::backward`] visits each node exactly once.
//! Gradients persist on the nodes and accumulate across backward calls;
//! callers that want fresh gradients zero them first.
//!
//! The op set is exactly what the classifier, the scheduler, and the attack
//! pipeline need: matmul, bias add (the only broadcast), elementwise add/mul,
//! relu, sigmoid, inverted dropout, and softmax cross-entropy. Constants are
//! leaves whose gradient is simply never read.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Forward-pass mode: train enables dropout, eval disables it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch reduction applied by [`Graph::softmax_cross_entropy`].
///
/// `Sum` keeps per-sample input gradients unmixed, which the per-sample cue
/// extraction relies on; `Mean` is the conventional training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulScalar(NodeId, f64),
    Relu(NodeId),
    Sigmoid(NodeId),
    Dropout { input: NodeId, mask: Tensor },
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Tensor,
        reduction: Reduction,
    },
    Sum(NodeId),
    Mean(NodeId),
}

struct NodeData {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
}

/// Append-only computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<NodeData>,
}

fn stable_sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    // Keep the output strictly inside (0, 1) even when exp() underflows.
    s.clamp(f64::MIN_POSITIVE, ONE_BELOW_ONE)
}

const ONE_BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        debug_assert!(value.is_finite(), "non-finite value produced by graph op");
        self.nodes.push(NodeData {
            value,
            grad: None,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Insert an input, parameter, or constant.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated on a node, if any backward pass reached it.
    pub fn gradient(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn zero_gradients(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Matrix product [m x k] * [k x n] -> [m x n].
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value)?;
        Ok(self.push(value, Op::Matmul(a, b)))
    }

    /// Broadcasting bias add: [b x n] + [n] -> [b x n]. The only broadcast.
    pub fn add_bias(&mut self, mat: NodeId, bias: NodeId) -> Result<NodeId> {
        let m = &self.nodes[mat.0].value;
        let v = &self.nodes[bias.0].value;
        if m.shape().len() != 2 || v.shape().len() != 1 || m.ncols() != v.shape()[0] {
            return Err(Error::DimensionMismatch {
                op: "add_bias",
                lhs: m.shape().to_vec(),
                rhs: v.shape().to_vec(),
            });
        }
        let cols = m.ncols();
        let data: Vec<f64> = m
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + v.data()[i % cols])
            .collect();
        let value = Tensor::new(m.shape().to_vec(), data)?;
        Ok(self.push(value, Op::AddBias(mat, bias)))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.nodes[a.0]
            .value
            .zip_map(&self.nodes[b.0].value, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.nodes[a.0]
            .value
            .zip_map(&self.nodes[b.0].value, |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn mul_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        let value = self.nodes[a.0].value.scale(s);
        self.push(value, Op::MulScalar(a, s))
    }

    /// Elementwise max(0, x).
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    /// Elementwise logistic function, branched for numerical stability.
    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.map(stable_sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    /// Inverted dropout: in train mode each element is zeroed with probability
    /// `rate` and survivors are scaled by 1/(1-rate); eval mode is the
    /// identity. The mask is drawn from `rng`, so fixed seeds reproduce masks.
    pub fn dropout(
        &mut self,
        a: NodeId,
        rate: f64,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(a);
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let input = &self.nodes[a.0].value;
        let mask = Tensor::new(
            input.shape().to_vec(),
            (0..input.numel())
                .map(|_| if rng.next_f64() >= rate { keep_scale } else { 0.0 })
                .collect(),
        )?;
        let value = input.zip_map(&mask, |x, m| x * m)?;
        Ok(self.push(value, Op::Dropout { input: a, mask }))
    }

    /// Mean (or sum) over the batch of -log softmax(logits)[label], computed
    /// via log-sum-exp with max subtraction. The row softmax probabilities are
    /// retained on the node for reuse (see [`Graph::probabilities`]).
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        labels: &[usize],
        reduction: Reduction,
    ) -> Result<NodeId> {
        let l = &self.nodes[logits.0].value;
        if l.shape().len() != 2 || l.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                op: "softmax_cross_entropy",
                lhs: l.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let (b, k) = (l.nrows(), l.ncols());
        for &y in labels {
            if y >= k {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    classes: k,
                });
            }
        }
        let mut probs = vec![0.0; b * k];
        let mut total = 0.0;
        for i in 0..b {
            let row = l.row(i);
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &x| a.max(x));
            let exps: Vec<f64> = row.iter().map(|&x| (x - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            let lse = m + z.ln();
            total += lse - row[labels[i]];
            for (j, e) in exps.iter().enumerate() {
                probs[i * k + j] = e / z;
            }
        }
        if reduction == Reduction::Mean {
            total /= b as f64;
        }
        let op = Op::SoftmaxCrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs: Tensor::new(vec![b, k], probs)?,
            reduction,
        };
        Ok(self.push(Tensor::scalar(total), op))
    }

    /// Softmax probabilities computed by a [`Graph::softmax_cross_entropy`]
    /// node, or `None` for any other node.
    pub fn probabilities(&self, ce: NodeId) -> Option<&Tensor> {
        match &self.nodes[ce.0].op {
            Op::SoftmaxCrossEntropy { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.nodes[a.0].value.sum());
        self.push(value, Op::Sum(a))
    }

    /// Mean of all elements, as a scalar node.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        let value = Tensor::scalar(v.sum() / v.numel() as f64);
        self.push(value, Op::Mean(a))
    }

    /// Reverse-mode accumulation from a scalar root. Gradients from earlier
    /// backward calls are kept and added to.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar root, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        // Contributions local to this pass; persistent grads only receive.
        let mut pending: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        pending[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            match self.nodes[i].grad.as_mut() {
                Some(acc) => acc.add_assign(&g),
                None => self.nodes[i].grad = Some(g.clone()),
            }
            self.propagate(i, &g, &mut pending);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, pending: &mut [Option<Tensor>]) {
        let contribute = |pending: &mut [Option<Tensor>], id: NodeId, t: Tensor| {
            match pending[id.0].as_mut() {
                Some(acc) => acc.add_assign(&t),
                None => pending[id.0] = Some(t),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let da = g.matmul(&bv.transpose()).expect("matmul backward shapes");
                let db = av.transpose().matmul(g).expect("matmul backward shapes");
                contribute(pending, *a, da);
                contribute(pending, *b, db);
            }
            Op::AddBias(mat, bias) => {
                contribute(pending, *mat, g.clone());
                let cols = g.ncols();
                let mut db = vec![0.0; cols];
                for (idx, &x) in g.data().iter().enumerate() {
                    db[idx % cols] += x;
                }
                contribute(pending, *bias, Tensor::from_vec(db));
            }
            Op::Add(a, b) => {
                contribute(pending, *a, g.clone());
                contribute(pending, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let da = g
                    .zip_map(&self.nodes[b.0].value, |x, y| x * y)
                    .expect("mul backward shapes");
                let db = g
                    .zip_map(&self.nodes[a.0].value, |x, y| x * y)
                    .expect("mul backward shapes");
                contribute(pending, *a, da);
                contribute(pending, *b, db);
            }
            Op::MulScalar(a, s) => {
                contribute(pending, *a, g.scale(*s));
            }
            Op::Relu(a) => {
                let da = g
                    .zip_map(&self.nodes[a.0].value, |gi, xi| if xi > 0.0 { gi } else { 0.0 })
                    .expect("relu backward shapes");
                contribute(pending, *a, da);
            }
            Op::Sigmoid(a) => {
                // d/dx sigmoid = s * (1 - s), using the stored output.
                let da = g
                    .zip_map(&self.nodes[i].value, |gi, s| gi * s * (1.0 - s))
                    .expect("sigmoid backward shapes");
                contribute(pending, *a, da);
            }
            Op::Dropout { input, mask } => {
                let da = g.zip_map(mask, |gi, m| gi * m).expect("dropout backward shapes");
                contribute(pending, *input, da);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
                reduction,
            } => {
                let scale = match reduction {
                    Reduction::Mean => g.item() / labels.len() as f64,
                    Reduction::Sum => g.item(),
                };
                let k = probs.ncols();
                let mut dl = probs.scale(scale);
                for (row, &y) in labels.iter().enumerate() {
                    dl.data_mut()[row * k + y] -= scale;
                }
                contribute(pending, *logits, dl);
            }
            Op::Sum(a) => {
                let shape = self.nodes[a.0].value.shape().to_vec();
                contribute(pending, *a, Tensor::full(shape, g.item()));
            }
            Op::Mean(a) => {
                let v = &self.nodes[a.0].value;
                let shape = v.shape().to_vec();
                let n = v.numel() as f64;
                contribute(pending, *a, Tensor::full(shape, g.item() / n));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor2(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::from_rows(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_forward_identity_and_zero() {
        let mut g = Graph::new();
        let i2 = g.leaf(tensor2(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let b = g.leaf(tensor2(2, 2, &[3.0, 4.0, 5.0, 6.0]));
        let c = g.matmul(i2, b).unwrap();
        assert_eq!(g.value(c).data(), &[3.0, 4.0, 5.0, 6.0]);

        let a = g.leaf(tensor2(1, 2, &[1.0, 2.0]));
        let z = g.leaf(tensor2(2, 1, &[0.0, 0.0]));
        let azero = g.matmul(a, z).unwrap();
        assert_eq!(g.value(azero).data(), &[0.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_shapes() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(vec![3, 4]));
        let b = g.leaf(Tensor::zeros(vec![2, 5]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[3, 4]") && err.contains("[2, 5]"), "{err}");
    }

    #[test]
    fn relu_forward_and_backward() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.gradient(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_all_negative_zero_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![-3.0, -0.5, -1e-9]));
        let y = g.relu(x);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.gradient(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sigmoid_at_zero_and_saturation() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![0.0, 50.0, -50.0, 1000.0, -1000.0]));
        let y = g.sigmoid(x);
        let v = g.value(y).data();
        assert_eq!(v[0], 0.5);
        // The true gap 1 - sigmoid(50) = exp(-50)/(1+exp(-50)) is below 1e-20;
        // the stored f64 saturates at the largest double under 1.0.
        assert!((-50.0_f64).exp() < 1e-20);
        assert!(v[1] >= ONE_BELOW_ONE && v[1] < 1.0);
        assert!(v[2] < 1e-20 && v[2] > 0.0);
        // Extreme inputs stay strictly inside (0, 1).
        assert!(v[3] < 1.0 && v[4] > 0.0);
        assert!(g.value(y).is_finite());
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut g = Graph::new();
        let logits = g.leaf(Tensor::zeros(vec![3, 4]));
        let loss = g
            .softmax_cross_entropy(logits, &[0, 1, 2], Reduction::Mean)
            .unwrap();
        assert!((g.value(loss).item() - 4.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_confident_correct() {
        let mut g = Graph::new();
        let logits = g.leaf(tensor2(1, 3, &[1000.0, 0.0, 0.0]));
        let loss = g
            .softmax_cross_entropy(logits, &[0], Reduction::Mean)
            .unwrap();
        assert!(g.value(loss).item() < 1e-12);
        assert!(g.value(loss).item() >= 0.0);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let mut g = Graph::new();
        let logits = g.leaf(Tensor::zeros(vec![2, 3]));
        let err = g
            .softmax_cross_entropy(logits, &[0, 3], Reduction::Mean)
            .unwrap_err();
        assert!(matches!(
            err,
            crate::error::Error::LabelOutOfRange {
                label: 3,
                classes: 3
            }
        ));
    }

    #[test]
    fn cross_entropy_probs_rows_sum_to_one() {
        let mut g = Graph::new();
        let logits = g.leaf(tensor2(2, 3, &[5.0, -2.0, 0.3, 900.0, -900.0, 0.0]));
        let loss = g
            .softmax_cross_entropy(logits, &[2, 0], Reduction::Mean)
            .unwrap();
        let p = g.probabilities(loss).unwrap();
        for i in 0..2 {
            let s: f64 = p.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_rate_zero_is_identity() {
        let mut rng = SeededRng::new(1);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![1.0, -2.0, 3.0]));
        let train = g.dropout(x, 0.0, Mode::Train, &mut rng).unwrap();
        let eval = g.dropout(x, 0.0, Mode::Eval, &mut rng).unwrap();
        assert_eq!(train, x);
        assert_eq!(eval, x);
    }

    #[test]
    fn dropout_eval_is_identity_any_rate() {
        let mut rng = SeededRng::new(1);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![1.0, -2.0, 3.0]));
        let y = g.dropout(x, 0.9, Mode::Eval, &mut rng).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn dropout_rejects_rate_one() {
        let mut rng = SeededRng::new(1);
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![1.0]));
        assert!(g.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
        assert!(g.dropout(x, -0.1, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_survivor_fraction_and_mean() {
        let n = 1_000_000;
        let mut rng = SeededRng::new(2024).stream("dropout");
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(vec![n], 1.0));
        let y = g.dropout(x, 0.5, Mode::Train, &mut rng).unwrap();
        let out = g.value(y).data();
        let survivors = out.iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
        assert!((survivors - 0.5).abs() < 0.002, "survivors {survivors}");
        let mean = out.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn dropout_same_seed_bit_identical() {
        let run = || {
            let mut rng = SeededRng::new(77).stream("dropout");
            let mut g = Graph::new();
            let x = g.leaf(Tensor::full(vec![64], 1.0));
            let y = g.dropout(x, 0.3, Mode::Train, &mut rng).unwrap();
            g.value(y).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![3.0, -1.0, 2.5]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.gradient(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_constant_root_propagates_nothing() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![3.0]));
        let c = g.leaf(Tensor::scalar(5.0));
        g.backward(c).unwrap();
        assert!(g.gradient(x).is_none());
        assert_eq!(g.gradient(c).unwrap().item(), 1.0);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        let err = g.backward(x).unwrap_err();
        assert!(matches!(err, crate::error::Error::Contract(_)));
    }

    #[test]
    fn backward_accumulates_without_clearing() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.gradient(x).unwrap().data(), &[2.0, 2.0]);
        g.zero_gradients();
        g.backward(s).unwrap();
        assert_eq!(g.gradient(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn diamond_graph_accumulates_both_paths() {
        // y = sum(x * x) has gradient 2x through the two mul parents.
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![1.5, -2.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.gradient(x).unwrap().data(), &[3.0, -4.0]);
    }

    #[test]
    fn bias_add_backward_column_sums() {
        let mut g = Graph::new();
        let m = g.leaf(tensor2(2, 3, &[0.0; 6]));
        let b = g.leaf(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let y = g.add_bias(m, b).unwrap();
        assert_eq!(g.value(y).row(1), &[1.0, 2.0, 3.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.gradient(b).unwrap().data(), &[2.0, 2.0, 2.0]);
    }
}
