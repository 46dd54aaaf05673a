//! Experiment configs: one TOML file describes mode, dataset, method, and
//! seeds. Parsing is strict (unknown keys are errors) so a typo never
//! silently falls back to a default.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::PhaseSpec;
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::online::OnlineConfig;
use crate::sequence::MethodConfig;

/// Directory holding the MNIST IDX files when the config leaves `dir` unset.
pub const DATA_DIR_ENV: &str = "LIFELONG_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Tasks one after another, evaluated on every task seen so far.
    Sequence,
    /// Task-free stream with plateau-triggered consolidation.
    Stream,
    /// All tasks at once; the upper-bound baseline.
    Joint,
    /// The finite-difference suite; no data needed.
    Gradcheck,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    PermutedMnist {
        /// Falls back to $LIFELONG_DATA_DIR, then ./data/mnist.
        dir: Option<PathBuf>,
        #[serde(default = "default_num_tasks")]
        num_tasks: usize,
        /// Training samples kept per task; 0 keeps everything.
        #[serde(default = "default_train_subset")]
        train_subset: usize,
        /// Permutations depend on this, not on the run seeds.
        #[serde(default = "default_dataset_seed")]
        seed: u64,
    },
    SphereStream {
        phases: Vec<PhaseSpec>,
        #[serde(default = "default_test_n")]
        test_n: usize,
        #[serde(default = "default_dataset_seed")]
        seed: u64,
    },
}

fn default_num_tasks() -> usize {
    5
}
fn default_train_subset() -> usize {
    10_000
}
fn default_dataset_seed() -> u64 {
    1234
}
fn default_test_n() -> usize {
    500
}

impl DatasetSpec {
    /// The MNIST directory after env/default fallback.
    pub fn resolve_dir(&self) -> Option<PathBuf> {
        match self {
            DatasetSpec::PermutedMnist { dir, .. } => Some(match dir {
                Some(d) => d.clone(),
                None => match std::env::var_os(DATA_DIR_ENV) {
                    Some(v) => PathBuf::from(v),
                    None => PathBuf::from("data/mnist"),
                },
            }),
            DatasetSpec::SphereStream { .. } => None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden layer widths, input and heads excluded.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_hidden() -> Vec<usize> {
    vec![128, 128]
}
fn default_activation() -> Activation {
    Activation::Relu
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden: default_hidden(), activation: default_activation() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    pub dataset: Option<DatasetSpec>,
    pub method: Option<MethodConfig>,
    pub stream: Option<OnlineConfig>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be nonempty".into()));
        }
        {
            let mut sorted = self.seeds.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != self.seeds.len() {
                return Err(Error::Config("seeds must be distinct".into()));
            }
        }
        if let Some(m) = &self.model {
            if m.hidden.is_empty() {
                return Err(Error::Config("model.hidden must be nonempty".into()));
            }
        }
        match self.mode {
            Mode::Sequence | Mode::Joint => {
                let Some(m) = &self.method else {
                    return Err(Error::Config("sequence/joint modes need [method]".into()));
                };
                m.validate()?;
                match &self.dataset {
                    Some(DatasetSpec::PermutedMnist { num_tasks, .. }) => {
                        if *num_tasks == 0 {
                            return Err(Error::Config("num_tasks must be at least 1".into()));
                        }
                    }
                    Some(DatasetSpec::SphereStream { .. }) => {
                        return Err(Error::Config(
                            "sphere_stream only runs in stream mode".into(),
                        ));
                    }
                    None => return Err(Error::Config("sequence/joint modes need [dataset]".into())),
                }
                let dir = self.dataset.as_ref().unwrap().resolve_dir().unwrap();
                for name in [
                    "train-images-idx3-ubyte.gz",
                    "train-labels-idx1-ubyte.gz",
                    "test-images-idx3-ubyte.gz",
                    "test-labels-idx1-ubyte.gz",
                ] {
                    let p = dir.join(name);
                    if !p.is_file() {
                        return Err(Error::Config(format!("missing data file {}", p.display())));
                    }
                }
            }
            Mode::Stream => {
                let Some(s) = &self.stream else {
                    return Err(Error::Config("stream mode needs [stream]".into()));
                };
                s.validate()?;
                match &self.dataset {
                    Some(DatasetSpec::SphereStream { phases, test_n, .. }) => {
                        if phases.is_empty() {
                            return Err(Error::Config("phases must be nonempty".into()));
                        }
                        if *test_n == 0 {
                            return Err(Error::Config("test_n must be at least 1".into()));
                        }
                        if phases.iter().any(|p| p.batch_size == 0) {
                            return Err(Error::Config("batch_size must be at least 1".into()));
                        }
                    }
                    Some(DatasetSpec::PermutedMnist { .. }) => {
                        return Err(Error::Config(
                            "permuted_mnist does not run in stream mode".into(),
                        ));
                    }
                    None => return Err(Error::Config("stream mode needs [dataset]".into())),
                }
            }
            Mode::Gradcheck => {}
        }
        Ok(())
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: ExperimentConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::ImportanceKind;
    use std::io::Write;

    fn write_tmp(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    const DATA_DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist");

    #[test]
    fn minimal_sequence_config_fills_defaults() {
        let f = write_tmp(&format!(
            r#"
mode = "sequence"
output_dir = "out"
seeds = [0]

[dataset]
kind = "permuted_mnist"
dir = "{DATA_DIR}"

[method]
importance = "mas"
lambda = 100.0
epochs = 10
lr = 0.01
batch_size = 64
"#
        ));
        let cfg = parse_config(f.path()).unwrap();
        assert_eq!(cfg.mode, Mode::Sequence);
        match cfg.dataset.unwrap() {
            DatasetSpec::PermutedMnist { num_tasks, train_subset, seed, .. } => {
                assert_eq!(num_tasks, 5);
                assert_eq!(train_subset, 10_000);
                assert_eq!(seed, 1234);
            }
            _ => panic!("wrong dataset kind"),
        }
        let m = cfg.method.unwrap();
        assert_eq!(m.importance, ImportanceKind::Mas);
        assert!(m.rep_reg.is_none());
    }

    #[test]
    fn unknown_key_is_named_in_the_error() {
        let f = write_tmp(
            r#"
mode = "gradcheck"
output_dir = "out"
seeds = [0]
lamda = 3.0
"#,
        );
        let err = parse_config(f.path()).unwrap_err().to_string();
        assert!(err.contains("lamda"), "error should name the key: {err}");
    }

    #[test]
    fn stream_defaults_follow_the_documented_table() {
        let f = write_tmp(
            r#"
mode = "stream"
output_dir = "out"
seeds = [3]

[dataset]
kind = "sphere_stream"
phases = [
  { source = "sphere_q1", num_batches = 100, batch_size = 10 },
  { source = "sphere_q2", num_batches = 100, batch_size = 10 },
]

[stream]
"#,
        );
        let cfg = parse_config(f.path()).unwrap();
        let s = cfg.stream.unwrap();
        assert_eq!(s.lambda, 100.0);
        assert_eq!(s.lr, 1e-4);
        assert_eq!(s.buffer_capacity, 100);
        assert_eq!(s.window, 5);
        assert_eq!(s.delta_mu, 0.3);
        assert_eq!(s.delta_sigma, 0.1);
    }

    #[test]
    fn wrong_dataset_for_mode_is_rejected() {
        let f = write_tmp(&format!(
            r#"
mode = "stream"
output_dir = "out"
seeds = [0]

[dataset]
kind = "permuted_mnist"
dir = "{DATA_DIR}"

[stream]
"#
        ));
        assert!(parse_config(f.path()).is_err());
    }

    #[test]
    fn missing_data_files_fail_validation() {
        let f = write_tmp(
            r#"
mode = "sequence"
output_dir = "out"
seeds = [0]

[dataset]
kind = "permuted_mnist"
dir = "/nonexistent/nowhere"

[method]
importance = "mas"
lambda = 100.0
epochs = 1
lr = 0.01
batch_size = 64
"#,
        );
        let err = parse_config(f.path()).unwrap_err().to_string();
        assert!(err.contains("missing data file"), "{err}");
    }

    #[test]
    fn empty_or_duplicate_seeds_are_rejected() {
        for seeds in ["seeds = []", "seeds = [1, 1]"] {
            let f = write_tmp(&format!(
                "mode = \"gradcheck\"\noutput_dir = \"out\"\n{seeds}\n"
            ));
            assert!(parse_config(f.path()).is_err(), "{seeds}");
        }
    }
}
