//! Concrete networks: the dropout MLP classifier and the cue-fusion
//! scheduler, plus parameter storage and the binary checkpoint format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, NodeId};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// One named parameter tensor with its momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub momentum: Tensor,
}

/// Named flat list of parameters with parallel zero-initialized momentum
/// buffers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) {
        let momentum = Tensor::zeros(value.shape().to_vec());
        self.params.push(Param {
            name: name.into(),
            value,
            momentum,
        });
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Insert every parameter as a graph leaf, in order.
    pub fn bind(&self, g: &mut Graph) -> Vec<NodeId> {
        self.params
            .iter()
            .map(|p| g.leaf(p.value.clone()))
            .collect()
    }
}

/// Glorot-style uniform init: entries drawn from
/// U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))).
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::new(
        vec![fan_in, fan_out],
        (0..fan_in * fan_out)
            .map(|_| rng.uniform(-limit, limit))
            .collect(),
    )
    .expect("glorot shape")
}

/// Result of binding a model to a graph and running it forward.
pub struct ForwardPass {
    /// Network output node (logits or sigma).
    pub output: NodeId,
    /// Graph leaves for the model parameters, parallel to the ParamSet.
    pub param_nodes: Vec<NodeId>,
}

impl ForwardPass {
    /// Collect parameter gradients after a backward pass, zeros where the
    /// backward pass did not reach.
    pub fn gradients(&self, g: &Graph, params: &ParamSet) -> Vec<Tensor> {
        self.param_nodes
            .iter()
            .zip(params.params())
            .map(|(&id, p)| {
                g.gradient(id)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec()))
            })
            .collect()
    }
}

/// MLP classifier: affine -> relu -> dropout per hidden layer, final affine.
#[derive(Debug, Clone)]
pub struct MlpClassifier {
    layer_sizes: Vec<usize>,
    dropout_rate: f64,
    params: ParamSet,
}

impl MlpClassifier {
    /// `layer_sizes` runs input dim through hidden widths to the class count.
    pub fn new(layer_sizes: &[usize], dropout_rate: f64, rng: &mut SeededRng) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "classifier needs at least input and output widths, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!(
                "classifier layer widths must be positive, got {layer_sizes:?}"
            )));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0, 1), got {dropout_rate}"
            )));
        }
        let mut params = ParamSet::new();
        for i in 0..layer_sizes.len() - 1 {
            let (fan_in, fan_out) = (layer_sizes[i], layer_sizes[i + 1]);
            params.push(format!("cls.layer{i}.weight"), glorot_uniform(fan_in, fan_out, rng));
            params.push(format!("cls.layer{i}.bias"), Tensor::zeros(vec![fan_out]));
        }
        Ok(MlpClassifier {
            layer_sizes: layer_sizes.to_vec(),
            dropout_rate,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Forward pass on the graph: returns logits [B x K]. Train mode applies
    /// dropout after each hidden relu; eval mode is deterministic.
    pub fn forward(
        &self,
        g: &mut Graph,
        x: NodeId,
        mode: Mode,
        rng: &mut SeededRng,
    ) -> Result<ForwardPass> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.input_dim() {
            return Err(Error::DimensionMismatch {
                op: "classifier_forward",
                lhs: shape,
                rhs: vec![self.input_dim()],
            });
        }
        let param_nodes = self.params.bind(g);
        let n_layers = self.layer_sizes.len() - 1;
        let mut h = x;
        for i in 0..n_layers {
            let w = param_nodes[2 * i];
            let b = param_nodes[2 * i + 1];
            h = g.matmul(h, w)?;
            h = g.add_bias(h, b)?;
            if i + 1 < n_layers {
                h = g.relu(h);
                h = g.dropout(h, self.dropout_rate, mode, rng)?;
            }
        }
        Ok(ForwardPass {
            output: h,
            param_nodes,
        })
    }

    /// Detached forward: just the logits tensor.
    pub fn logits(&self, x: &Tensor, mode: Mode, rng: &mut SeededRng) -> Result<Tensor> {
        let mut g = Graph::new();
        let input = g.leaf(x.clone());
        let pass = self.forward(&mut g, input, mode, rng)?;
        Ok(g.value(pass.output).clone())
    }
}

/// Cue-fusion scheduler: 3 -> hidden (relu) -> 1 (sigmoid).
#[derive(Debug, Clone)]
pub struct SchedulerNet {
    hidden_width: usize,
    params: ParamSet,
}

/// Width of the cue vector the scheduler consumes.
pub const CUE_DIM: usize = 3;

/// Default hidden width of the scheduler.
pub const DEFAULT_SCHEDULER_HIDDEN: usize = 16;

impl SchedulerNet {
    pub fn new(hidden_width: usize, rng: &mut SeededRng) -> Result<Self> {
        if hidden_width == 0 {
            return Err(Error::Config("scheduler hidden width must be positive".into()));
        }
        let mut params = ParamSet::new();
        params.push("sched.layer0.weight", glorot_uniform(CUE_DIM, hidden_width, rng));
        params.push("sched.layer0.bias", Tensor::zeros(vec![hidden_width]));
        params.push("sched.layer1.weight", glorot_uniform(hidden_width, 1, rng));
        params.push("sched.layer1.bias", Tensor::zeros(vec![1]));
        Ok(SchedulerNet {
            hidden_width,
            params,
        })
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden_width
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Forward pass: cue batch [B x 3] to scores sigma [B x 1], each strictly
    /// inside (0, 1) and differentiable w.r.t. the scheduler parameters.
    pub fn forward(&self, g: &mut Graph, z: NodeId) -> Result<ForwardPass> {
        let shape = g.value(z).shape().to_vec();
        if shape.len() != 2 || shape[1] != CUE_DIM {
            return Err(Error::DimensionMismatch {
                op: "scheduler_forward",
                lhs: shape,
                rhs: vec![CUE_DIM],
            });
        }
        let param_nodes = self.params.bind(g);
        let mut h = g.matmul(z, param_nodes[0])?;
        h = g.add_bias(h, param_nodes[1])?;
        h = g.relu(h);
        h = g.matmul(h, param_nodes[2])?;
        h = g.add_bias(h, param_nodes[3])?;
        let sigma = g.sigmoid(h);
        Ok(ForwardPass {
            output: sigma,
            param_nodes,
        })
    }

    /// Detached scores for a cue batch.
    pub fn sigma(&self, z: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let input = g.leaf(z.clone());
        let pass = self.forward(&mut g, input)?;
        Ok(g.value(pass.output).data().to_vec())
    }
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"ADESCKPT";
const CHECKPOINT_VERSION: u32 = 1;

fn write_record(w: &mut impl Write, name: &str, tensor: &Tensor) -> std::io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
    for &d in tensor.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &x in tensor.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact_or_eof(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            if filled == 0 {
                return Ok(false);
            }
            return Err(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "truncated record",
            ));
        }
        filled += n;
    }
    Ok(true)
}

fn read_record(r: &mut impl Read) -> Result<Option<(String, Tensor)>> {
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());
    let mut len4 = [0u8; 4];
    if !read_exact_or_eof(r, &mut len4).map_err(|_| bad("truncated record header"))? {
        return Ok(None);
    }
    let name_len = u32::from_le_bytes(len4) as usize;
    if name_len > 4096 {
        return Err(bad("implausible parameter name length"));
    }
    let mut name_bytes = vec![0u8; name_len];
    if !read_exact_or_eof(r, &mut name_bytes).map_err(|_| bad("truncated name"))? && name_len > 0 {
        return Err(bad("truncated name"));
    }
    let name = String::from_utf8(name_bytes).map_err(|_| bad("non-utf8 parameter name"))?;
    let mut rank4 = [0u8; 4];
    if !read_exact_or_eof(r, &mut rank4).map_err(|_| bad("truncated rank"))? {
        return Err(bad("truncated rank"));
    }
    let rank = u32::from_le_bytes(rank4) as usize;
    if rank > 8 {
        return Err(bad("implausible tensor rank"));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut dim8 = [0u8; 8];
        if !read_exact_or_eof(r, &mut dim8).map_err(|_| bad("truncated dims"))? {
            return Err(bad("truncated dims"));
        }
        shape.push(u64::from_le_bytes(dim8) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    for _ in 0..numel {
        let mut f8 = [0u8; 8];
        if !read_exact_or_eof(r, &mut f8).map_err(|_| bad("truncated data"))? {
            return Err(bad("truncated data"));
        }
        data.push(f64::from_le_bytes(f8));
    }
    let tensor = Tensor::new(shape, data).map_err(|e| bad(&e.to_string()))?;
    Ok(Some((name, tensor)))
}

/// Write classifier and scheduler parameters plus momentum buffers.
///
/// Layout: magic, version, then parameter records (classifier first, then
/// scheduler), then both momentum buffer sets in the same order.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    classifier: &MlpClassifier,
    scheduler: &SchedulerNet,
) -> Result<()> {
    let path = path.as_ref();
    let file =
        File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);

    w.write_all(CHECKPOINT_MAGIC).map_err(io_err)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io_err)?;
    for p in classifier.params().params().iter().chain(scheduler.params().params()) {
        write_record(&mut w, &p.name, &p.value).map_err(io_err)?;
    }
    for p in classifier.params().params().iter().chain(scheduler.params().params()) {
        write_record(&mut w, &p.name, &p.momentum).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

/// Restore parameters and momentum buffers into models built from the same
/// architecture config. Names and shapes must match record for record.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
    classifier: &mut MlpClassifier,
    scheduler: &mut SchedulerNet,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for magic".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(CHECKPOINT_MAGIC)
        )));
    }
    let mut ver4 = [0u8; 4];
    r.read_exact(&mut ver4)
        .map_err(|_| Error::Checkpoint("file too short for version".into()))?;
    let version = u32::from_le_bytes(ver4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }

    let mut records = Vec::new();
    while let Some(rec) = read_record(&mut r)? {
        records.push(rec);
    }
    let n_cls = classifier.params().len();
    let n_sched = scheduler.params().len();
    let expected = 2 * (n_cls + n_sched);
    if records.len() != expected {
        return Err(Error::Checkpoint(format!(
            "expected {expected} records for this architecture, found {}",
            records.len()
        )));
    }

    let apply = |params: &mut ParamSet, offset: usize, momentum: bool| -> Result<()> {
        for (i, p) in params.params_mut().iter_mut().enumerate() {
            let (name, tensor) = &records[offset + i];
            if *name != p.name {
                return Err(Error::Checkpoint(format!(
                    "record {} is named {name:?}, expected {:?}",
                    offset + i,
                    p.name
                )));
            }
            if tensor.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "{name}: shape {:?} does not match model shape {:?}",
                    tensor.shape(),
                    p.value.shape()
                )));
            }
            if momentum {
                p.momentum = tensor.clone();
            } else {
                p.value = tensor.clone();
            }
        }
        Ok(())
    };
    apply(classifier.params_mut(), 0, false)?;
    apply(scheduler.params_mut(), n_cls, false)?;
    apply(classifier.params_mut(), n_cls + n_sched, true)?;
    apply(scheduler.params_mut(), n_cls + n_sched + n_cls, true)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Reduction;

    fn rng() -> SeededRng {
        SeededRng::new(42)
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let mut r = rng();
        let mut model = MlpClassifier::new(&[3, 4, 2], 0.1, &mut r).unwrap();
        for p in model.params_mut().params_mut() {
            p.value = Tensor::zeros(p.value.shape().to_vec());
        }
        let x = Tensor::from_rows(2, 3, vec![0.5, -1.0, 2.0, 0.0, 0.3, 0.9]).unwrap();
        let logits = model.logits(&x, Mode::Eval, &mut r).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let mut r = rng();
        let model = MlpClassifier::new(&[3, 8, 2], 0.5, &mut r).unwrap();
        let x = Tensor::from_rows(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let mut r1 = SeededRng::new(1);
        let mut r2 = SeededRng::new(999);
        let a = model.logits(&x, Mode::Eval, &mut r1).unwrap();
        let b = model.logits(&x, Mode::Eval, &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn train_forward_differs_across_streams() {
        let mut r = rng();
        let model = MlpClassifier::new(&[3, 16, 2], 0.5, &mut r).unwrap();
        let x = Tensor::from_rows(1, 3, vec![0.4, 0.9, 0.1]).unwrap();
        let mut r1 = SeededRng::new(7).stream("dropout");
        let mut r2 = SeededRng::new(8).stream("dropout");
        let a = model.logits(&x, Mode::Train, &mut r1).unwrap();
        let b = model.logits(&x, Mode::Train, &mut r2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn width_mismatch_is_dimension_error() {
        let mut r = rng();
        let model = MlpClassifier::new(&[3, 4, 2], 0.0, &mut r).unwrap();
        let x = Tensor::from_rows(1, 5, vec![0.0; 5]).unwrap();
        let err = model.logits(&x, Mode::Eval, &mut r).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn scheduler_zero_output_layer_gives_half() {
        let mut r = rng();
        let mut net = SchedulerNet::new(16, &mut r).unwrap();
        // Zero the output affine layer; hidden activations then feed zeros
        // into the sigmoid.
        for p in net.params_mut().params_mut() {
            if p.name.contains("layer1") {
                p.value = Tensor::zeros(p.value.shape().to_vec());
            }
        }
        let z = Tensor::from_rows(3, 3, vec![0.1, 0.5, 0.9, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let sigma = net.sigma(&z).unwrap();
        assert!(sigma.iter().all(|&s| s == 0.5), "{sigma:?}");
    }

    #[test]
    fn scheduler_large_bias_saturates_toward_one() {
        let mut r = rng();
        let mut net = SchedulerNet::new(8, &mut r).unwrap();
        for p in net.params_mut().params_mut() {
            if p.name == "sched.layer1.bias" {
                p.value = Tensor::from_vec(vec![40.0]);
            }
        }
        let z = Tensor::from_rows(1, 3, vec![0.2, 0.8, 0.5]).unwrap();
        let sigma = net.sigma(&z).unwrap();
        assert!(sigma[0] > 1.0 - 1e-9 && sigma[0] < 1.0);
    }

    #[test]
    fn scheduler_rejects_wrong_cue_width() {
        let mut r = rng();
        let net = SchedulerNet::new(4, &mut r).unwrap();
        let z = Tensor::from_rows(2, 4, vec![0.0; 8]).unwrap();
        let err = net.sigma(&z).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn scheduler_omega_gradient_matches_finite_differences() {
        // Perturb each parameter coordinate of mean(sigma(z)) and compare
        // against analytic gradients from one backward pass.
        let mut r = rng();
        let net = SchedulerNet::new(6, &mut r).unwrap();
        let mut zr = SeededRng::new(5);
        let z = Tensor::new(vec![4, 3], (0..12).map(|_| zr.next_f64()).collect()).unwrap();

        let mut g = Graph::new();
        let zn = g.leaf(z.clone());
        let pass = net.forward(&mut g, zn).unwrap();
        let mean = g.mean(pass.output);
        g.backward(mean).unwrap();
        let analytic = pass.gradients(&g, net.params());

        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (pi, p) in net.params().params().iter().enumerate() {
            for ci in 0..p.value.numel() {
                let eval = |delta: f64| -> f64 {
                    let mut perturbed = net.clone();
                    perturbed.params_mut().params_mut()[pi].value.data_mut()[ci] += delta;
                    let s = perturbed.sigma(&z).unwrap();
                    s.iter().sum::<f64>() / s.len() as f64
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic[pi].data()[ci];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max(err);
            }
        }
        assert!(worst < 1e-6, "scheduler omega gradcheck {worst}");
    }

    #[test]
    fn init_same_seed_bit_identical() {
        let mut r1 = SeededRng::new(9).stream("init");
        let mut r2 = SeededRng::new(9).stream("init");
        let a = MlpClassifier::new(&[4, 8, 3], 0.1, &mut r1).unwrap();
        let b = MlpClassifier::new(&[4, 8, 3], 0.1, &mut r2).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn init_biases_zero() {
        let mut r = rng();
        let model = MlpClassifier::new(&[4, 8, 3], 0.1, &mut r).unwrap();
        for p in model.params().params() {
            if p.name.ends_with("bias") {
                assert!(p.value.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn init_variance_matches_uniform_law() {
        // Var(U(-a, a)) = a^2/3 = 2/(fan_in+fan_out) for the Glorot limit.
        let mut r = rng();
        let w = glorot_uniform(256, 256, &mut r);
        let n = w.numel() as f64;
        let mean = w.sum() / n;
        let var = w.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let expected = 2.0 / (256.0 + 256.0);
        assert!(
            (var - expected).abs() / expected < 0.1,
            "var {var} vs {expected}"
        );
    }

    #[test]
    fn classifier_param_gradients_match_finite_differences() {
        let mut r = rng();
        let model = MlpClassifier::new(&[3, 5, 2], 0.0, &mut r).unwrap();
        let mut xr = SeededRng::new(21);
        let x = Tensor::new(vec![4, 3], (0..12).map(|_| xr.uniform(-1.0, 1.0)).collect()).unwrap();
        let labels = [0usize, 1, 1, 0];

        let mut g = Graph::new();
        let xn = g.leaf(x.clone());
        let pass = model.forward(&mut g, xn, Mode::Eval, &mut r).unwrap();
        let loss = g
            .softmax_cross_entropy(pass.output, &labels, Reduction::Mean)
            .unwrap();
        g.backward(loss).unwrap();
        let analytic = pass.gradients(&g, model.params());

        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (pi, p) in model.params().params().iter().enumerate() {
            for ci in 0..p.value.numel() {
                let eval = |delta: f64| -> f64 {
                    let mut m = model.clone();
                    m.params_mut().params_mut()[pi].value.data_mut()[ci] += delta;
                    let mut rr = SeededRng::new(0);
                    let logits = m.logits(&x, Mode::Eval, &mut rr).unwrap();
                    let mut gg = Graph::new();
                    let ln = gg.leaf(logits);
                    let l = gg
                        .softmax_cross_entropy(ln, &labels, Reduction::Mean)
                        .unwrap();
                    gg.value(l).item()
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic[pi].data()[ci];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max(err);
            }
        }
        assert!(worst < 1e-6, "classifier gradcheck {worst}");
    }

    #[test]
    fn checkpoint_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut r = rng();
        let mut cls = MlpClassifier::new(&[2, 4, 2], 0.1, &mut r).unwrap();
        let sched = SchedulerNet::new(5, &mut r).unwrap();
        // Nonzero momentum so the buffers are exercised too.
        for p in cls.params_mut().params_mut() {
            p.momentum = p.value.scale(0.5);
        }
        save_checkpoint(&path, &cls, &sched).unwrap();

        let mut cls2 = MlpClassifier::new(&[2, 4, 2], 0.1, &mut SeededRng::new(777)).unwrap();
        let mut sched2 = SchedulerNet::new(5, &mut SeededRng::new(778)).unwrap();
        load_checkpoint(&path, &mut cls2, &mut sched2).unwrap();
        assert_eq!(cls.params(), cls2.params());
        assert_eq!(sched.params(), sched2.params());
    }

    #[test]
    fn checkpoint_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOTMAGIC\x01\x00\x00\x00").unwrap();
        let mut r = rng();
        let mut cls = MlpClassifier::new(&[2, 4, 2], 0.1, &mut r).unwrap();
        let mut sched = SchedulerNet::new(5, &mut r).unwrap();
        let err = load_checkpoint(&path, &mut cls, &mut sched).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");

        let good = dir.path().join("good.ckpt");
        save_checkpoint(&good, &cls, &sched).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_checkpoint(&path, &mut cls, &mut sched).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }

    #[test]
    fn checkpoint_rejects_architecture_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut r = rng();
        let cls = MlpClassifier::new(&[2, 4, 2], 0.1, &mut r).unwrap();
        let sched = SchedulerNet::new(5, &mut r).unwrap();
        save_checkpoint(&path, &cls, &sched).unwrap();

        let mut other = MlpClassifier::new(&[2, 8, 2], 0.1, &mut r).unwrap();
        let mut sched2 = SchedulerNet::new(5, &mut r).unwrap();
        let err = load_checkpoint(&path, &mut other, &mut sched2).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }
}
