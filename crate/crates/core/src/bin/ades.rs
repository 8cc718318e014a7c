//! Command-line front end: train/attack/eval/cues/gradcheck over a JSON
//! experiment config.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ades_core::attack::pgd_attack;
use ades_core::cues::assemble_cues;
use ades_core::data::Dataset;
use ades_core::error::{Error, Result};
use ades_core::eval::evaluate;
use ades_core::experiment::{run_experiment, worker_threads, ExperimentConfig};
use ades_core::gradcheck::run_suite;
use ades_core::graph::Mode;
use ades_core::models::load_checkpoint;
use ades_core::rng::SeededRng;
use ades_core::train::TrainState;

#[derive(Parser)]
#[command(name = "ades", about = "Adversarial training with per-sample perturbation budgets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Path to the JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured training experiment (all modes) and write metrics,
    /// checkpoints, and a config snapshot.
    Train(Common),
    /// Attack a checkpointed model at each evaluation budget and write
    /// adversarial accuracy plus mean perturbation norms.
    Attack(Common),
    /// Evaluate a checkpointed model: clean accuracy and the robust-accuracy
    /// sweep over the configured budgets.
    Eval(Common),
    /// Dump per-sample raw and normalized cues for the test split.
    Cues(Common),
    /// Check reverse-mode gradients of every op and the composed networks
    /// against central finite differences.
    Gradcheck {
        /// Optional JSON config; only the seed is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Random instances per check.
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Rebuild models from the config and load the configured checkpoint if any.
fn load_state(cfg: &ExperimentConfig, data: &Dataset) -> Result<TrainState> {
    let mut state = cfg.build_state(data.dim(), data.num_classes)?;
    if let Some(path) = &cfg.checkpoint {
        load_checkpoint(path, &mut state.classifier, &mut state.scheduler)?;
    }
    Ok(state)
}

fn csv_writer(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| {
        Error::io(path.display().to_string(), e)
    })?))
}

fn run_train(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let artifacts = run_experiment(&cfg)?;
    for a in artifacts {
        println!("{}: {}", a.mode.as_str(), a.metrics_csv.display());
    }
    Ok(())
}

fn run_attack(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let (_, test) = cfg.dataset.load()?;
    let state = load_state(&cfg, &test)?;
    let attack_cfg = cfg.eval.attack_config();
    let root = SeededRng::new(cfg.seed).stream("cli-attack");

    let out = PathBuf::from(&cfg.output_dir).join("attack.csv");
    let mut w = csv_writer(&out)?;
    let io_err = |e: std::io::Error| Error::io(out.display().to_string(), e);
    writeln!(w, "budget,adversarial_acc,mean_linf,mean_l2").map_err(io_err)?;

    let n = test.len();
    for (bi, &budget) in cfg.eval.budgets.iter().enumerate() {
        let mut correct = 0usize;
        let mut linf_sum = 0.0;
        let mut l2_sum = 0.0;
        let indices: Vec<usize> = (0..n).collect();
        for (batch_idx, chunk) in indices.chunks(cfg.eval.batch_size).enumerate() {
            let (x, labels) = test.batch(chunk);
            let rng = root.child(bi as u64).child(batch_idx as u64);
            let eps = vec![budget; labels.len()];
            let adv = pgd_attack(&state.classifier, &x, &labels, &eps, &attack_cfg, &rng)?;
            let mut dummy = SeededRng::new(0);
            let logits = state.classifier.logits(&adv, Mode::Eval, &mut dummy)?;
            correct += logits
                .row_argmax()
                .iter()
                .zip(&labels)
                .filter(|(p, y)| p == y)
                .count();
            for i in 0..labels.len() {
                let mut linf: f64 = 0.0;
                let mut l2 = 0.0;
                for j in 0..x.ncols() {
                    let d = adv.row(i)[j] - x.row(i)[j];
                    linf = linf.max(d.abs());
                    l2 += d * d;
                }
                linf_sum += linf;
                l2_sum += l2.sqrt();
            }
        }
        writeln!(
            w,
            "{budget},{},{},{}",
            correct as f64 / n as f64,
            linf_sum / n as f64,
            l2_sum / n as f64
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    println!("{}", out.display());
    Ok(())
}

fn run_eval(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let (_, test) = cfg.dataset.load()?;
    let state = load_state(&cfg, &test)?;
    let metrics = evaluate(
        &state.classifier,
        &test,
        &cfg.eval.budgets,
        &cfg.eval.attack_config(),
        cfg.eval.batch_size,
        &SeededRng::new(cfg.seed).stream("cli-eval"),
        worker_threads()?,
    )?;

    let out = PathBuf::from(&cfg.output_dir).join("eval.csv");
    let mut w = csv_writer(&out)?;
    let io_err = |e: std::io::Error| Error::io(out.display().to_string(), e);
    let mut header = String::from("clean_acc");
    for i in 1..=cfg.eval.budgets.len() {
        header.push_str(&format!(",robust_acc_eps{i}"));
    }
    writeln!(w, "{header}").map_err(io_err)?;
    let mut line = format!("{}", metrics.clean_acc);
    for v in &metrics.robust_acc {
        line.push_str(&format!(",{v}"));
    }
    writeln!(w, "{line}").map_err(io_err)?;
    w.flush().map_err(io_err)?;
    println!("{}", out.display());
    Ok(())
}

fn run_cues(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let (_, test) = cfg.dataset.load()?;
    let state = load_state(&cfg, &test)?;
    let root = SeededRng::new(cfg.seed).stream("cli-cues");

    let out = PathBuf::from(&cfg.output_dir).join("cues.csv");
    let mut w = csv_writer(&out)?;
    let io_err = |e: std::io::Error| Error::io(out.display().to_string(), e);
    writeln!(w, "sample_index,g,H,u,g_norm,H_norm,u_norm").map_err(io_err)?;

    let indices: Vec<usize> = (0..test.len()).collect();
    let mut sample_index = 0usize;
    for (batch_idx, chunk) in indices.chunks(cfg.eval.batch_size).enumerate() {
        let (x, labels) = test.batch(chunk);
        let cues = assemble_cues(
            &state.classifier,
            &x,
            &labels,
            cfg.train.t_mc,
            &root.child(batch_idx as u64),
        )?;
        for i in 0..labels.len() {
            writeln!(
                w,
                "{sample_index},{},{},{},{},{},{}",
                cues.raw.gradient_norm[i],
                cues.raw.entropy[i],
                cues.raw.uncertainty[i],
                cues.normalized.row(i)[0],
                cues.normalized.row(i)[1],
                cues.normalized.row(i)[2],
            )
            .map_err(io_err)?;
            sample_index += 1;
        }
    }
    w.flush().map_err(io_err)?;
    println!("{}", out.display());
    Ok(())
}

fn run_gradcheck(config: Option<&PathBuf>, seed: Option<u64>, instances: usize) -> Result<bool> {
    let mut base_seed = 2024;
    if let Some(path) = config {
        base_seed = ExperimentConfig::from_path(path)?.seed;
    }
    if let Some(s) = seed {
        base_seed = s;
    }
    let checks = run_suite(base_seed, instances)?;
    let mut all_pass = true;
    for c in &checks {
        let status = if c.passed() { "pass" } else { "FAIL" };
        println!(
            "{status}  {:<28} max_rel_err={:.3e}  tol={:.0e}",
            c.name, c.max_err, c.tolerance
        );
        all_pass &= c.passed();
    }
    Ok(all_pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Train(c) => run_train(c).map(|()| true),
        Command::Attack(c) => run_attack(c).map(|()| true),
        Command::Eval(c) => run_eval(c).map(|()| true),
        Command::Cues(c) => run_cues(c).map(|()| true),
        Command::Gradcheck {
            config,
            seed,
            instances,
        } => run_gradcheck(config.as_ref(), *seed, *instances),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
