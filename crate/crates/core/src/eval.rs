//! Clean and robust accuracy evaluation, and the metrics CSV format.
//!
//! Evaluation attacks use uniform budgets: attacker strength is fixed from
//! the outside, never scheduled. Each (budget, batch) pair derives its own
//! rng stream, so running batches on worker threads produces bit-identical
//! results to the serial order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::attack::{pgd_attack, AttackConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::Mode;
use crate::models::MlpClassifier;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Clean accuracy plus robust accuracy per attack budget.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub clean_acc: f64,
    pub robust_acc: Vec<f64>,
}

/// One row of experiment output.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub mode: String,
    pub train_loss: f64,
    pub clean_acc: f64,
    pub robust_acc: Vec<f64>,
    pub mean_eps: f64,
    pub wall_ms: u64,
}

fn count_correct(model: &MlpClassifier, x: &Tensor, labels: &[usize]) -> Result<usize> {
    let mut rng = SeededRng::new(0);
    let logits = model.logits(x, Mode::Eval, &mut rng)?;
    Ok(logits
        .row_argmax()
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count())
}

/// Correct counts for one batch: clean, then one count per budget.
fn eval_batch(
    model: &MlpClassifier,
    x: &Tensor,
    labels: &[usize],
    budgets: &[f64],
    attack_cfg: &AttackConfig,
    batch_stream: &SeededRng,
) -> Result<Vec<usize>> {
    let mut counts = Vec::with_capacity(budgets.len() + 1);
    counts.push(count_correct(model, x, labels)?);
    for (bi, &eps) in budgets.iter().enumerate() {
        let rng = batch_stream.child(bi as u64);
        let eps_vec = vec![eps; labels.len()];
        let adv = pgd_attack(model, x, labels, &eps_vec, attack_cfg, &rng)?;
        counts.push(count_correct(model, &adv, labels)?);
    }
    Ok(counts)
}

/// Evaluate clean accuracy and PGD robust accuracy at each budget.
///
/// `threads` caps worker threads; 1 runs serially. Aggregation is a plain sum
/// of per-batch counts, so the thread count never changes the result.
pub fn evaluate(
    model: &MlpClassifier,
    dataset: &Dataset,
    budgets: &[f64],
    attack_cfg: &AttackConfig,
    batch_size: usize,
    stream: &SeededRng,
    threads: usize,
) -> Result<EvalMetrics> {
    if dataset.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("evaluation batch size must be positive".into()));
    }
    let n = dataset.len();
    let batch_indices: Vec<Vec<usize>> = (0..n)
        .collect::<Vec<usize>>()
        .chunks(batch_size)
        .map(|c| c.to_vec())
        .collect();

    let run_batch = |bi: usize| -> Result<Vec<usize>> {
        let (x, labels) = dataset.batch(&batch_indices[bi]);
        eval_batch(
            model,
            &x,
            &labels,
            budgets,
            attack_cfg,
            &stream.child(bi as u64),
        )
    };

    let per_batch: Vec<Vec<usize>> = if threads <= 1 || batch_indices.len() <= 1 {
        batch_indices
            .iter()
            .enumerate()
            .map(|(bi, _)| run_batch(bi))
            .collect::<Result<_>>()?
    } else {
        let workers = threads.min(batch_indices.len());
        let next = std::sync::atomic::AtomicUsize::new(0);
        let results: Vec<std::sync::Mutex<Option<Result<Vec<usize>>>>> =
            (0..batch_indices.len()).map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let bi = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if bi >= batch_indices.len() {
                        break;
                    }
                    *results[bi].lock().unwrap() = Some(run_batch(bi));
                });
            }
        });
        results
            .into_iter()
            .map(|m| m.into_inner().unwrap().expect("worker filled every slot"))
            .collect::<Result<_>>()?
    };

    let mut totals = vec![0usize; budgets.len() + 1];
    for counts in &per_batch {
        for (t, c) in totals.iter_mut().zip(counts) {
            *t += c;
        }
    }
    let denom = n as f64;
    Ok(EvalMetrics {
        clean_acc: totals[0] as f64 / denom,
        robust_acc: totals[1..].iter().map(|&c| c as f64 / denom).collect(),
    })
}

// ---------------------------------------------------------------------------
// Metrics CSV
// ---------------------------------------------------------------------------

/// Header: epoch,mode,train_loss,clean_acc,robust_acc_eps1,...,mean_eps,wall_ms
pub fn metrics_header(n_budgets: usize) -> String {
    let mut h = String::from("epoch,mode,train_loss,clean_acc");
    for i in 1..=n_budgets {
        h.push_str(&format!(",robust_acc_eps{i}"));
    }
    h.push_str(",mean_eps,wall_ms");
    h
}

fn record_line(r: &MetricsRecord) -> String {
    let mut line = format!("{},{},{},{}", r.epoch, r.mode, r.train_loss, r.clean_acc);
    for v in &r.robust_acc {
        line.push_str(&format!(",{v}"));
    }
    line.push_str(&format!(",{},{}", r.mean_eps, r.wall_ms));
    line
}

/// Write records with the standard header. Floats use the shortest
/// round-trip representation, so re-parsing restores the exact values.
pub fn write_metrics_csv(
    path: impl AsRef<Path>,
    records: &[MetricsRecord],
    n_budgets: usize,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    writeln!(w, "{}", metrics_header(n_budgets)).map_err(io_err)?;
    for r in records {
        debug_assert_eq!(r.robust_acc.len(), n_budgets);
        writeln!(w, "{}", record_line(r)).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

/// Parse a metrics CSV produced by [`write_metrics_csv`].
pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(display.clone(), e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(display.clone(), e))?
        .ok_or_else(|| Error::Parse {
            path: display.clone(),
            line: 0,
            msg: "empty metrics file".into(),
        })?;
    let n_budgets = header.matches("robust_acc_eps").count();

    let mut records = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(display.clone(), e))?;
        let line_no = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 + n_budgets {
            return Err(Error::Parse {
                path: display,
                line: line_no,
                msg: format!("expected {} fields, got {}", 6 + n_budgets, fields.len()),
            });
        }
        let bad = |msg: String| Error::Parse {
            path: display.clone(),
            line: line_no,
            msg,
        };
        let parse_f64 =
            |s: &str| -> Result<f64> { s.parse().map_err(|_| bad(format!("bad float {s:?}"))) };
        records.push(MetricsRecord {
            epoch: fields[0]
                .parse()
                .map_err(|_| bad(format!("bad epoch {:?}", fields[0])))?,
            mode: fields[1].to_string(),
            train_loss: parse_f64(fields[2])?,
            clean_acc: parse_f64(fields[3])?,
            robust_acc: fields[4..4 + n_budgets]
                .iter()
                .map(|s| parse_f64(s))
                .collect::<Result<_>>()?,
            mean_eps: parse_f64(fields[4 + n_budgets])?,
            wall_ms: fields[5 + n_budgets]
                .parse()
                .map_err(|_| bad(format!("bad wall_ms {:?}", fields[5 + n_budgets])))?,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;

    fn toy_model(seed: u64, sizes: &[usize]) -> MlpClassifier {
        let mut r = SeededRng::new(seed).stream("init");
        MlpClassifier::new(sizes, 0.0, &mut r).unwrap()
    }

    #[test]
    fn zero_budget_equals_clean_accuracy_exactly() {
        let model = toy_model(1, &[2, 8, 2]);
        let ds = make_blobs(40, 2, 2, 0.1, 5).unwrap();
        let cfg = AttackConfig::default();
        let m = evaluate(&model, &ds, &[0.0], &cfg, 16, &SeededRng::new(2), 1).unwrap();
        assert_eq!(m.robust_acc[0], m.clean_acc);
    }

    #[test]
    fn untrained_model_near_chance_on_balanced_data() {
        // Spread far above the center separation: class-conditional feature
        // distributions overlap almost completely, so any fixed model sits at
        // chance over a balanced sample.
        let ds = make_blobs(500, 2, 2, 5.0, 6).unwrap();
        let cfg = AttackConfig::default();
        for s in 0..4 {
            let model = toy_model(100 + s, &[2, 8, 2]);
            let acc = evaluate(&model, &ds, &[], &cfg, 256, &SeededRng::new(3), 1)
                .unwrap()
                .clean_acc;
            assert!((acc - 0.5).abs() < 0.05, "model {s}: accuracy {acc}");
        }
    }

    #[test]
    fn robust_accuracy_monotone_without_random_start() {
        let model = toy_model(2, &[2, 16, 2]);
        let ds = make_blobs(100, 2, 2, 0.08, 7).unwrap();
        let cfg = AttackConfig {
            steps: 10,
            alpha: 0.01,
            random_start: false,
            domain: (0.0, 1.0),
        };
        let m = evaluate(
            &model,
            &ds,
            &[0.02, 0.05, 0.1],
            &cfg,
            50,
            &SeededRng::new(4),
            1,
        )
        .unwrap();
        assert!(m.robust_acc[0] >= m.robust_acc[1]);
        assert!(m.robust_acc[1] >= m.robust_acc[2]);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let model = toy_model(3, &[2, 8, 2]);
        let ds = make_blobs(60, 2, 2, 0.1, 8).unwrap();
        let cfg = AttackConfig::default();
        let stream = SeededRng::new(5);
        let serial = evaluate(&model, &ds, &[0.03, 0.06], &cfg, 16, &stream, 1).unwrap();
        let parallel = evaluate(&model, &ds, &[0.03, 0.06], &cfg, 16, &stream, 4).unwrap();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn metrics_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let records = vec![
            MetricsRecord {
                epoch: 0,
                mode: "ades".into(),
                train_loss: 0.625061,
                clean_acc: 0.51234,
                robust_acc: vec![0.25, 0.125],
                mean_eps: 0.0525,
                wall_ms: 123,
            },
            MetricsRecord {
                epoch: 1,
                mode: "ades".into(),
                train_loss: 0.1,
                clean_acc: 0.9,
                robust_acc: vec![0.8, 0.7],
                mean_eps: 0.061224489795918366,
                wall_ms: 456,
            },
        ];
        write_metrics_csv(&path, &records, 2).unwrap();
        let back = read_metrics_csv(&path).unwrap();
        assert_eq!(back, records);

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "epoch,mode,train_loss,clean_acc,robust_acc_eps1,robust_acc_eps2,mean_eps,wall_ms\n"
        ));
    }

    #[test]
    fn accuracies_stay_in_unit_interval() {
        let model = toy_model(9, &[2, 4, 2]);
        let ds = make_blobs(30, 2, 2, 0.15, 9).unwrap();
        let cfg = AttackConfig::default();
        let m = evaluate(&model, &ds, &[0.05], &cfg, 8, &SeededRng::new(6), 1).unwrap();
        assert!((0.0..=1.0).contains(&m.clean_acc));
        assert!((0.0..=1.0).contains(&m.robust_acc[0]));
    }
}
