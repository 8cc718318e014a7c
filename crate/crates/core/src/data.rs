//! Synthetic datasets and CSV ingestion.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Labeled features in the unit hypercube.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// [N x d], every entry in [0, 1].
    pub features: Tensor,
    /// Labels in [0, K).
    pub labels: Vec<usize>,
    /// Split tag, e.g. "train" or "test".
    pub split: String,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Gather rows into a new batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        (
            Tensor::new(vec![indices.len(), d], data).expect("batch shape"),
            labels,
        )
    }

    /// Write as feature columns followed by the integer label, one row per
    /// sample, no header.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        for i in 0..self.len() {
            let mut line = String::new();
            for v in self.features.row(i) {
                line.push_str(&format!("{v},"));
            }
            line.push_str(&format!("{}\n", self.labels[i]));
            w.write_all(line.as_bytes())
                .map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }
}

/// Class centers: evenly spaced on a circle of radius 0.3 around (0.5, 0.5)
/// for d = 2, otherwise corners of [0.25, 0.75]^d indexed by the bits of the
/// class id.
fn class_centers(k: usize, d: usize) -> Result<Vec<Vec<f64>>> {
    if d == 2 {
        return Ok((0..k)
            .map(|c| {
                let angle = std::f64::consts::TAU * c as f64 / k as f64;
                vec![0.5 + 0.3 * angle.cos(), 0.5 + 0.3 * angle.sin()]
            })
            .collect());
    }
    if k > (1usize << d.min(63)) {
        return Err(Error::Config(format!(
            "cannot place {k} classes on the corners of a {d}-cube"
        )));
    }
    Ok((0..k)
        .map(|c| {
            (0..d)
                .map(|j| if (c >> j) & 1 == 1 { 0.75 } else { 0.25 })
                .collect()
        })
        .collect())
}

/// Gaussian blobs with fixed class centers, clipped to [0, 1]. Deterministic
/// per seed.
pub fn make_blobs(
    n_per_class: usize,
    k: usize,
    d: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_per_class == 0 || k == 0 || d == 0 {
        return Err(Error::Config(format!(
            "blob parameters must be positive, got n={n_per_class}, k={k}, d={d}"
        )));
    }
    if spread < 0.0 {
        return Err(Error::Config(format!("spread must be nonnegative, got {spread}")));
    }
    let centers = class_centers(k, d)?;
    let mut rng = SeededRng::new(seed).stream("blobs");
    let mut data = Vec::with_capacity(n_per_class * k * d);
    let mut labels = Vec::with_capacity(n_per_class * k);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            for &cj in center {
                data.push((cj + spread * rng.next_gaussian()).clamp(0.0, 1.0));
            }
            labels.push(c);
        }
    }
    Ok(Dataset {
        features: Tensor::new(vec![n_per_class * k, d], data)?,
        labels,
        split: "train".into(),
        num_classes: k,
    })
}

/// Parse a dataset CSV: d feature columns in [0, 1] then one integer label.
pub fn load_csv_dataset(path: impl AsRef<Path>, k: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(display.clone(), e))?;
    let reader = BufReader::new(file);

    let mut dim: Option<usize> = None;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(display.clone(), e))?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(Error::Parse {
                path: display,
                line: line_no,
                msg: format!("expected features and a label, got {} column(s)", fields.len()),
            });
        }
        let d = fields.len() - 1;
        match dim {
            None => dim = Some(d),
            Some(expect) if expect != d => {
                return Err(Error::Parse {
                    path: display,
                    line: line_no,
                    msg: format!("row has {d} feature column(s), expected {expect}"),
                });
            }
            _ => {}
        }
        for f in &fields[..d] {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                path: display.clone(),
                line: line_no,
                msg: format!("bad feature value {f:?}"),
            })?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Parse {
                    path: display,
                    line: line_no,
                    msg: format!("feature {v} outside [0, 1]"),
                });
            }
            data.push(v);
        }
        let label: usize = fields[d].trim().parse().map_err(|_| Error::Parse {
            path: display.clone(),
            line: line_no,
            msg: format!("bad label {:?}", fields[d]),
        })?;
        if label >= k {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        labels.push(label);
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::Parse {
            path: display,
            line: 0,
            msg: "empty dataset".into(),
        });
    }
    Ok(Dataset {
        features: Tensor::new(vec![n, dim.unwrap()], data)?,
        labels,
        split: "train".into(),
        num_classes: k,
    })
}
