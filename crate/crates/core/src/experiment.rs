//! Experiment configs and end-to-end orchestration: dataset, training,
//! evaluation, and on-disk artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::data::{load_csv_dataset, make_blobs, Dataset};
use crate::error::{Error, Result};
use crate::eval::write_metrics_csv;
use crate::models::{
    save_checkpoint, MlpClassifier, SchedulerNet, DEFAULT_SCHEDULER_HIDDEN,
};
use crate::rng::SeededRng;
use crate::schedule::{ScheduleConfig, SchedulerMode};
use crate::train::{train, EvalPlan, TrainConfig, TrainMode, TrainSettings, TrainState};

/// Thread-cap environment variable; defaults to 1 for bit-exact runs.
pub const THREADS_ENV: &str = "ADES_THREADS";

/// Worker-thread cap from the environment.
pub fn worker_threads() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => {
            let n: usize = v
                .parse()
                .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
            if n == 0 {
                return Err(Error::Config(format!("{THREADS_ENV} must be at least 1")));
            }
            Ok(n)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobsSpec {
    pub n_train_per_class: usize,
    pub n_test_per_class: usize,
    pub k: usize,
    pub d: usize,
    pub spread: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSpec {
    pub train_path: String,
    pub test_path: Option<String>,
    pub k: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DatasetSpec {
    Blobs(BlobsSpec),
    Csv(CsvSpec),
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Blobs(BlobsSpec {
            n_train_per_class: 1000,
            n_test_per_class: 500,
            k: 2,
            d: 2,
            spread: 0.08,
            seed: 7,
        })
    }
}

impl DatasetSpec {
    /// Materialize train and test splits. The test split falls back to the
    /// train split when none is configured.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSpec::Blobs(b) => {
                let mut train = make_blobs(b.n_train_per_class, b.k, b.d, b.spread, b.seed)?;
                train.split = "train".into();
                let mut test =
                    make_blobs(b.n_test_per_class, b.k, b.d, b.spread, b.seed.wrapping_add(1))?;
                test.split = "test".into();
                Ok((train, test))
            }
            DatasetSpec::Csv(c) => {
                let mut train = load_csv_dataset(&c.train_path, c.k)?;
                train.split = "train".into();
                let mut test = match &c.test_path {
                    Some(p) => load_csv_dataset(p, c.k)?,
                    None => train.clone(),
                };
                test.split = "test".into();
                Ok((train, test))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    /// Hidden widths between the input and the class logits.
    pub hidden_layers: Vec<usize>,
    pub dropout: f64,
    pub scheduler_hidden: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            hidden_layers: vec![64, 64],
            dropout: 0.1,
            scheduler_hidden: DEFAULT_SCHEDULER_HIDDEN,
        }
    }
}

/// Optimizer section of the experiment file; mode and seed live at the top
/// level so a mode matrix can share them.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_theta: f64,
    pub lr_decay_milestones: Vec<usize>,
    pub lr_decay_factor: f64,
    pub lr_omega: f64,
    pub momentum: f64,
    pub weight_decay_theta: f64,
    pub t_mc: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSpec {
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr_theta: d.lr_theta,
            lr_decay_milestones: d.lr_decay_milestones,
            lr_decay_factor: d.lr_decay_factor,
            lr_omega: d.lr_omega,
            momentum: d.momentum,
            weight_decay_theta: d.weight_decay_theta,
            t_mc: d.t_mc,
        }
    }
}

impl TrainSpec {
    pub fn to_config(&self, mode: TrainMode, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_theta: self.lr_theta,
            lr_decay_milestones: self.lr_decay_milestones.clone(),
            lr_decay_factor: self.lr_decay_factor,
            lr_omega: self.lr_omega,
            momentum: self.momentum,
            weight_decay_theta: self.weight_decay_theta,
            t_mc: self.t_mc,
            mode,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSpec {
    /// Uniform attack budgets for robust accuracy.
    pub budgets: Vec<f64>,
    pub steps: usize,
    pub alpha: f64,
    pub random_start: bool,
    pub batch_size: usize,
    /// Evaluate every N epochs; the final epoch always evaluates.
    pub every: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            budgets: vec![8.0 / 255.0],
            steps: 20,
            alpha: 2.0 / 255.0,
            random_start: true,
            batch_size: 512,
            every: 1,
        }
    }
}

impl EvalSpec {
    pub fn attack_config(&self) -> AttackConfig {
        AttackConfig {
            steps: self.steps,
            alpha: self.alpha,
            random_start: self.random_start,
            domain: (0.0, 1.0),
        }
    }
}

fn default_train_attack() -> AttackConfig {
    AttackConfig {
        steps: 10,
        ..AttackConfig::default()
    }
}

/// Top-level experiment file. Budget keys sit at the top level; everything
/// else is sectioned.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: String,
    /// Single training mode; ignored when `modes` is present.
    pub mode: TrainMode,
    /// Mode matrix sharing seed and datasets.
    pub modes: Option<Vec<TrainMode>>,
    pub eps_min: f64,
    pub lambda: f64,
    pub scheduler_mode: SchedulerMode,
    pub static_weights: [f64; 3],
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub train: TrainSpec,
    pub train_attack: AttackConfig,
    pub eval: EvalSpec,
    /// Checkpoint every N epochs on top of the final checkpoint; 0 disables.
    pub checkpoint_every: usize,
    /// Existing checkpoint for the attack/eval/cues subcommands.
    pub checkpoint: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sched = ScheduleConfig::default();
        ExperimentConfig {
            seed: 0,
            output_dir: "out".into(),
            mode: TrainMode::Ades,
            modes: None,
            eps_min: sched.eps_min,
            lambda: sched.lambda,
            scheduler_mode: sched.mode,
            static_weights: sched.static_weights,
            dataset: DatasetSpec::default(),
            model: ModelSpec::default(),
            train: TrainSpec::default(),
            train_attack: default_train_attack(),
            eval: EvalSpec::default(),
            checkpoint_every: 0,
            checkpoint: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule_config(self.effective_scheduler_mode(self.mode))
            .validate()?;
        self.train_attack.validate()?;
        self.eval.attack_config().validate()?;
        if self.eval.budgets.iter().any(|&b| b < 0.0) {
            return Err(Error::Config("evaluation budgets must be nonnegative".into()));
        }
        if self.eval.batch_size == 0 {
            return Err(Error::Config("eval batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Modes to run: the matrix when present, else the single mode.
    pub fn mode_list(&self) -> Vec<TrainMode> {
        match &self.modes {
            Some(list) if !list.is_empty() => list.clone(),
            _ => vec![self.mode],
        }
    }

    /// Scheduler behavior implied by a training mode.
    pub fn effective_scheduler_mode(&self, mode: TrainMode) -> SchedulerMode {
        match mode {
            TrainMode::Ades => SchedulerMode::Learnable,
            TrainMode::StaticDes => SchedulerMode::Static,
            TrainMode::PgdAt | TrainMode::Clean => SchedulerMode::Fixed,
        }
    }

    pub fn schedule_config(&self, mode: SchedulerMode) -> ScheduleConfig {
        ScheduleConfig {
            eps_min: self.eps_min,
            lambda: self.lambda,
            mode,
            static_weights: self.static_weights,
        }
    }

    /// Fresh models from the experiment seed; identical across modes.
    pub fn build_state(&self, input_dim: usize, num_classes: usize) -> Result<TrainState> {
        let root = SeededRng::new(self.seed);
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(&self.model.hidden_layers);
        sizes.push(num_classes);
        let mut cls_rng = root.stream("cls-init");
        let classifier = MlpClassifier::new(&sizes, self.model.dropout, &mut cls_rng)?;
        let mut sched_rng = root.stream("sched-init");
        let scheduler = SchedulerNet::new(self.model.scheduler_hidden, &mut sched_rng)?;
        Ok(TrainState::new(classifier, scheduler, self.seed))
    }
}

/// Artifacts produced for one mode of an experiment.
#[derive(Debug, Clone)]
pub struct ModeArtifacts {
    pub mode: TrainMode,
    pub metrics_csv: PathBuf,
    pub checkpoint: PathBuf,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Train every configured mode from shared seeds and write metrics, final
/// checkpoints, and a config snapshot under the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ModeArtifacts>> {
    cfg.validate()?;
    let threads = worker_threads()?;
    let (train_data, test_data) = cfg.dataset.load()?;
    let out_root = PathBuf::from(&cfg.output_dir);
    create_dir(&out_root)?;

    // Config snapshot for provenance.
    let snapshot = out_root.join("config.json");
    let text = serde_json::to_string_pretty(cfg)
        .map_err(|e| Error::Config(format!("cannot serialize config: {e}")))?;
    fs::write(&snapshot, text.as_bytes())
        .map_err(|e| Error::io(snapshot.display().to_string(), e))?;

    let mut artifacts = Vec::new();
    for mode in cfg.mode_list() {
        let mode_dir = out_root.join(mode.as_str());
        create_dir(&mode_dir)?;
        let mut state = cfg.build_state(train_data.dim(), train_data.num_classes)?;
        let settings = TrainSettings {
            train: cfg.train.to_config(mode, cfg.seed),
            schedule: cfg.schedule_config(cfg.effective_scheduler_mode(mode)),
            attack: cfg.train_attack.clone(),
        };
        let eval_plan = EvalPlan {
            dataset: test_data.clone(),
            budgets: cfg.eval.budgets.clone(),
            attack: cfg.eval.attack_config(),
            batch_size: cfg.eval.batch_size,
            every: cfg.eval.every,
            threads,
        };
        let ckpt_every = cfg.checkpoint_every;
        let dir = mode_dir.clone();
        let outcome = train(
            &mut state,
            &train_data,
            &settings,
            Some(&eval_plan),
            |s, record| {
                if ckpt_every > 0 && (record.epoch + 1) % ckpt_every == 0 {
                    let path = dir.join(format!("checkpoint_e{}.ckpt", record.epoch));
                    save_checkpoint(path, &s.classifier, &s.scheduler)?;
                }
                Ok(())
            },
        )?;

        let metrics_csv = mode_dir.join("metrics.csv");
        write_metrics_csv(&metrics_csv, &outcome.records, cfg.eval.budgets.len())?;
        let checkpoint = mode_dir.join("checkpoint.ckpt");
        save_checkpoint(&checkpoint, &state.classifier, &state.scheduler)?;
        artifacts.push(ModeArtifacts {
            mode,
            metrics_csv,
            checkpoint,
        });
    }
    Ok(artifacts)
}
