//! Turns a parsed config into artifacts on disk: one directory per seed with
//! the metrics, a summary, and an echo of the fully resolved config. A rerun
//! of the echo reproduces the metrics byte for byte.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use crate::config::{DatasetSpec, ExperimentConfig, Mode, ModelConfig};
use crate::data::{load_mnist, make_stream, gen_permuted_tasks, LabeledBatch, Stream, TaskDataset};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::metrics::{sequence_csv, summary, trace_csv};
use crate::nn::build_network;
use crate::online::{run_stream, OnlineConfig, TraceRow};
use crate::sequence::{joint_train, run_sequence, MethodConfig, MetricsMatrix};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

const TEST_SET_TAG: u64 = 0x7e57;

pub enum RunMetrics {
    Matrix(MetricsMatrix),
    Trace(Vec<TraceRow>),
    Checks(Vec<(String, f64, f64, bool)>),
}

pub struct RunArtifact {
    pub seed: u64,
    pub dir: PathBuf,
    pub metrics: RunMetrics,
    pub wall_secs: f64,
    /// Single-seed config whose rerun reproduces this artifact.
    pub config_echo: String,
    pub method_id: String,
}

/// Short self-describing run label, e.g. `sequence/mas+slnid`.
pub fn method_id(cfg: &ExperimentConfig) -> String {
    let mode = match cfg.mode {
        Mode::Sequence => "sequence",
        Mode::Stream => "stream",
        Mode::Joint => "joint",
        Mode::Gradcheck => return "gradcheck".into(),
    };
    let mut parts: Vec<String> = Vec::new();
    if let Some(m) = &cfg.method {
        parts.push(format!("{:?}", m.importance).to_lowercase());
        if let Some(r) = &m.rep_reg {
            parts.push(format!("{:?}", r.kind).to_lowercase());
        }
        if let Some(d) = &m.distill {
            parts.push(format!("{:?}", d.mode).to_lowercase());
        }
    }
    if let Some(s) = &cfg.stream {
        parts.push(format!("{:?}", s.importance).to_lowercase());
        if s.buffer_capacity == 0 {
            parts.push("nobuf".into());
        }
    }
    format!("{mode}/{}", parts.join("+"))
}

/// The datasets a sequence/joint run trains on. Built once per config from
/// the dataset seed, shared across run seeds.
pub fn build_tasks(spec: &DatasetSpec) -> Result<Vec<TaskDataset>> {
    match spec {
        DatasetSpec::PermutedMnist { num_tasks, train_subset, seed, .. } => {
            let dir = spec.resolve_dir().expect("mnist spec has a directory");
            let base = load_mnist(&dir, *train_subset)?;
            Ok(gen_permuted_tasks(&base, *num_tasks, *seed))
        }
        DatasetSpec::SphereStream { .. } => {
            Err(Error::Config("sphere_stream has no task sequence".into()))
        }
    }
}

/// The arrival stream plus one held-out test set per phase source.
pub fn build_stream(spec: &DatasetSpec) -> Result<(Stream, Vec<LabeledBatch>)> {
    match spec {
        DatasetSpec::SphereStream { phases, test_n, seed } => {
            let stream = make_stream(phases, *seed);
            // one test set per distinct source, in first-appearance order
            let mut sources = Vec::new();
            for p in phases {
                if !sources.contains(&p.source) {
                    sources.push(p.source);
                }
            }
            let tests = sources
                .iter()
                .enumerate()
                .map(|(i, s)| s.generate(*test_n, derive_seed(*seed, &[TEST_SET_TAG, i as u64])))
                .collect();
            Ok((stream, tests))
        }
        DatasetSpec::PermutedMnist { .. } => {
            Err(Error::Config("permuted_mnist is not a stream".into()))
        }
    }
}

fn echo_toml(cfg: &ExperimentConfig, seed: u64, method_id: &str) -> String {
    let mut one = cfg.clone();
    one.seeds = vec![seed];
    if one.model.is_none() && one.mode != Mode::Gradcheck {
        one.model = Some(ModelConfig::default());
    }
    let body = toml::to_string_pretty(&one).expect("config serializes");
    format!("# lifelong v{VERSION} {method_id}\n{body}")
}

fn run_one_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    tasks: &[TaskDataset],
    stream: Option<&(Stream, Vec<LabeledBatch>)>,
) -> Result<RunArtifact> {
    let started = Instant::now();
    let id = method_id(cfg);
    let model = cfg.model.clone().unwrap_or_default();

    let metrics = match cfg.mode {
        Mode::Sequence | Mode::Joint => {
            let mut method: MethodConfig = cfg.method.clone().expect("validated");
            method.seed = seed;
            let in_dim = tasks[0].train.inputs.cols();
            let classes = tasks[0].num_classes;
            let mut dims = vec![in_dim];
            dims.extend(&model.hidden);
            let heads = if method.shared_head { vec![classes] } else { vec![classes; tasks.len()] };
            let mut net = build_network(&dims, model.activation, &heads, seed)?;
            let m = match cfg.mode {
                Mode::Sequence => run_sequence(tasks, &mut net, &method)?,
                _ => joint_train(tasks, &mut net, &method)?,
            };
            RunMetrics::Matrix(m)
        }
        Mode::Stream => {
            let stream_cfg: OnlineConfig = cfg.stream.clone().expect("validated");
            let (stream, tests) = stream.expect("validated");
            let in_dim = tests[0].inputs.cols();
            let mut dims = vec![in_dim];
            dims.extend(&model.hidden);
            let mut net = build_network(&dims, model.activation, &[2], seed)?;
            let trace = run_stream(stream, tests, &mut net, 0, &stream_cfg)?;
            RunMetrics::Trace(trace)
        }
        Mode::Gradcheck => {
            let checks = gradcheck::run_all()
                .into_iter()
                .map(|r| {
                    let pass = r.passed();
                    (r.name.to_string(), r.max_rel_err, r.tolerance, pass)
                })
                .collect();
            RunMetrics::Checks(checks)
        }
    };

    Ok(RunArtifact {
        seed,
        dir: cfg.output_dir.join(format!("seed-{seed}")),
        metrics,
        wall_secs: started.elapsed().as_secs_f64(),
        config_echo: echo_toml(cfg, seed, &id),
        method_id: id,
    })
}

fn persist(artifact: &RunArtifact) -> Result<()> {
    fs::create_dir_all(&artifact.dir)?;
    fs::write(artifact.dir.join("config.toml"), &artifact.config_echo)?;
    match &artifact.metrics {
        RunMetrics::Matrix(m) => {
            fs::write(artifact.dir.join("metrics.csv"), sequence_csv(m))?;
            fs::write(artifact.dir.join("summary.csv"), summary(m))?;
        }
        RunMetrics::Trace(t) => {
            fs::write(artifact.dir.join("trace.csv"), trace_csv(t))?;
        }
        RunMetrics::Checks(c) => {
            let mut out = String::from("check,max_rel_err,tolerance,pass\n");
            for (name, err, tol, pass) in c {
                out.push_str(&format!("{name},{err:e},{tol:e},{pass}\n"));
            }
            fs::write(artifact.dir.join("gradcheck.csv"), out)?;
        }
    }
    let wall = format!("wall_secs,{:.3}\n", artifact.wall_secs);
    fs::write(artifact.dir.join("wall.csv"), wall)?;
    Ok(())
}

/// Runs every seed in the config. Artifacts are written as each seed
/// finishes; a failing seed removes its partial directory and aborts.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<RunArtifact>> {
    cfg.validate()?;
    let tasks = match cfg.mode {
        Mode::Sequence | Mode::Joint => build_tasks(cfg.dataset.as_ref().expect("validated"))?,
        _ => Vec::new(),
    };
    let stream = match cfg.mode {
        Mode::Stream => Some(build_stream(cfg.dataset.as_ref().expect("validated"))?),
        _ => None,
    };

    let mut artifacts = Vec::new();
    for &seed in &cfg.seeds {
        let result = run_one_seed(cfg, seed, &tasks, stream.as_ref())
            .and_then(|a| persist(&a).map(|()| a));
        match result {
            Ok(a) => artifacts.push(a),
            Err(e) => {
                let dir = cfg.output_dir.join(format!("seed-{seed}"));
                let _ = fs::remove_dir_all(&dir);
                return Err(e);
            }
        }
    }
    Ok(artifacts)
}
