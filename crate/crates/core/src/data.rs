//! Deterministic task and stream generators plus the IDX loader.

use std::io::Read as _;
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug)]
pub struct LabeledBatch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(inputs: Matrix, labels: Vec<usize>) -> Self {
        assert_eq!(inputs.rows(), labels.len(), "inputs/labels length mismatch");
        LabeledBatch { inputs, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn gather(&self, idx: &[usize]) -> LabeledBatch {
        LabeledBatch {
            inputs: self.inputs.gather_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// First n samples (deterministic subsetting for desk-scale runs).
    pub fn take(&self, n: usize) -> LabeledBatch {
        if n == 0 || n >= self.len() {
            return self.clone();
        }
        self.gather(&(0..n).collect::<Vec<_>>())
    }
}

#[derive(Clone, Debug)]
pub struct TaskDataset {
    pub task_id: usize,
    pub train: LabeledBatch,
    pub test: LabeledBatch,
    pub num_classes: usize,
}

/// Ordered arrivals with hidden phase tags. Learners see only the batches;
/// evaluators may use the tags.
#[derive(Clone, Debug)]
pub struct Stream {
    pub arrivals: Vec<(LabeledBatch, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quadrant {
    Q1,
    Q2,
}

/// 4-D points with radius uniform in [0,2] and direction uniform over the
/// quadrant; label 1 inside the unit sphere. Q2 negates coordinate 0.
pub fn gen_sphere_quadrant(quadrant: Quadrant, n: usize, seed: u64) -> LabeledBatch {
    assert!(n >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Matrix::zeros(n, 4);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        // |Box-Muller normals|, normalized: direction uniform on the positive orthant.
        let mut dir = [0.0f64; 4];
        let mut norm = 0.0;
        while norm == 0.0 {
            for pair in 0..2 {
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let r = (-2.0 * u1.ln()).sqrt();
                let t = 2.0 * std::f64::consts::PI * u2;
                dir[2 * pair] = (r * t.cos()).abs();
                dir[2 * pair + 1] = (r * t.sin()).abs();
            }
            norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        let radius = rng.gen_range(0.0..2.0);
        for (j, d) in dir.iter().enumerate() {
            let mut v = radius * d / norm;
            if j == 0 && quadrant == Quadrant::Q2 {
                v = -v;
            }
            inputs.set(i, j, v);
        }
        labels.push(if radius <= 1.0 { 1 } else { 0 });
    }
    LabeledBatch::new(inputs, labels)
}

/// Task 0 is the identity; later tasks apply fixed seed-derived pixel
/// permutations to train and test alike.
pub fn gen_permuted_tasks(base: &TaskDataset, num_tasks: usize, seed: u64) -> Vec<TaskDataset> {
    assert!(num_tasks >= 1);
    let d = base.train.inputs.cols();
    let mut tasks = Vec::with_capacity(num_tasks);
    tasks.push(TaskDataset { task_id: 0, ..base.clone() });
    for t in 1..num_tasks {
        let mut perm: Vec<usize> = (0..d).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[t as u64]));
        perm.shuffle(&mut rng);
        let apply = |batch: &LabeledBatch| {
            let mut m = Matrix::zeros(batch.inputs.rows(), d);
            for r in 0..m.rows() {
                let src = batch.inputs.row(r);
                let dst = m.row_mut(r);
                for (j, &p) in perm.iter().enumerate() {
                    dst[j] = src[p];
                }
            }
            LabeledBatch::new(m, batch.labels.clone())
        };
        tasks.push(TaskDataset {
            task_id: t,
            train: apply(&base.train),
            test: apply(&base.test),
            num_classes: base.num_classes,
        });
    }
    tasks
}

/// Splits one dataset into per-group tasks with labels re-indexed 0..|group|-1.
pub fn split_classes(base: &TaskDataset, groups: &[Vec<usize>]) -> Result<Vec<TaskDataset>> {
    let mut seen = vec![false; base.num_classes];
    for g in groups {
        if g.is_empty() {
            return Err(Error::InvalidArg("empty class group".into()));
        }
        for &c in g {
            if c >= base.num_classes {
                return Err(Error::InvalidArg(format!("class {c} out of range")));
            }
            if seen[c] {
                return Err(Error::InvalidArg(format!("class {c} appears in two groups")));
            }
            seen[c] = true;
        }
    }
    let mut tasks = Vec::with_capacity(groups.len());
    for (t, g) in groups.iter().enumerate() {
        let relabel: std::collections::HashMap<usize, usize> =
            g.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let filter = |batch: &LabeledBatch| {
            let idx: Vec<usize> = (0..batch.len()).filter(|&i| relabel.contains_key(&batch.labels[i])).collect();
            let mut b = batch.gather(&idx);
            for l in &mut b.labels {
                *l = relabel[l];
            }
            b
        };
        tasks.push(TaskDataset {
            task_id: t,
            train: filter(&base.train),
            test: filter(&base.test),
            num_classes: g.len(),
        });
    }
    Ok(tasks)
}

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

// Reads a whole file, transparently gunzipping if the gzip magic is present.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Data(format!("bad gzip in {}: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Big-endian IDX pair (optionally gzipped); pixels scaled to [0,1].
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledBatch> {
    let img_bytes = read_maybe_gz(images_path)?;
    let mut img = &img_bytes[..];
    let magic = img.read_u32::<BigEndian>()?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Data(format!(
            "wrong magic {magic:#010x} in {} (want {IMAGE_MAGIC:#010x})",
            images_path.display()
        )));
    }
    let n = img.read_u32::<BigEndian>()? as usize;
    let rows = img.read_u32::<BigEndian>()? as usize;
    let cols = img.read_u32::<BigEndian>()? as usize;
    let d = rows * cols;
    let mut pixels = vec![0u8; n * d];
    img.read_exact(&mut pixels).map_err(|e| Error::Data(format!("truncated image payload: {e}")))?;

    let lab_bytes = read_maybe_gz(labels_path)?;
    let mut lab = &lab_bytes[..];
    let magic = lab.read_u32::<BigEndian>()?;
    if magic != LABEL_MAGIC {
        return Err(Error::Data(format!(
            "wrong magic {magic:#010x} in {} (want {LABEL_MAGIC:#010x})",
            labels_path.display()
        )));
    }
    let n_lab = lab.read_u32::<BigEndian>()? as usize;
    if n_lab != n {
        return Err(Error::Data(format!("{n} images but {n_lab} labels")));
    }
    let mut raw_labels = vec![0u8; n];
    lab.read_exact(&mut raw_labels).map_err(|e| Error::Data(format!("truncated label payload: {e}")))?;

    let data: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Ok(LabeledBatch::new(
        Matrix::from_vec(n, d, data),
        raw_labels.iter().map(|&l| l as usize).collect(),
    ))
}

/// Loads the MNIST train/test pair from a directory using the standard
/// file names, optionally truncated to `train_subset` samples.
pub fn load_mnist(dir: &Path, train_subset: usize) -> Result<TaskDataset> {
    let train = load_idx(
        &dir.join("train-images-idx3-ubyte.gz"),
        &dir.join("train-labels-idx1-ubyte.gz"),
    )?;
    let test = load_idx(
        &dir.join("test-images-idx3-ubyte.gz"),
        &dir.join("test-labels-idx1-ubyte.gz"),
    )?;
    Ok(TaskDataset { task_id: 0, train: train.take(train_subset), test, num_classes: 10 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseSource {
    SphereQ1,
    SphereQ2,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub source: PhaseSource,
    pub num_batches: usize,
    pub batch_size: usize,
}

impl PhaseSource {
    pub fn generate(self, n: usize, seed: u64) -> LabeledBatch {
        match self {
            PhaseSource::SphereQ1 => gen_sphere_quadrant(Quadrant::Q1, n, seed),
            PhaseSource::SphereQ2 => gen_sphere_quadrant(Quadrant::Q2, n, seed),
        }
    }
}

/// Concatenates phase batches in order; tags record the phase index.
pub fn make_stream(phases: &[PhaseSpec], seed: u64) -> Stream {
    let mut arrivals = Vec::new();
    for (p, spec) in phases.iter().enumerate() {
        assert!(spec.batch_size >= 1);
        let total = spec.num_batches * spec.batch_size;
        if total == 0 {
            continue;
        }
        let pool = spec.source.generate(total, derive_seed(seed, &[p as u64]));
        for b in 0..spec.num_batches {
            let idx: Vec<usize> = (b * spec.batch_size..(b + 1) * spec.batch_size).collect();
            arrivals.push((pool.gather(&idx), p));
        }
    }
    Stream { arrivals }
}
