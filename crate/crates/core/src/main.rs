use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lifelong::config::parse_config;
use lifelong::error::Error;
use lifelong::gradcheck;
use lifelong::runner::{self, RunMetrics};

#[derive(Parser)]
#[command(name = "lifelong", version, about = "Continual-learning engine and benchmark harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute every seed of a TOML experiment config.
    Run { config: PathBuf },
    /// Check analytic gradients against central finite differences.
    Gradcheck,
    /// Show the configurable methods and their config keys.
    ListMethods,
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Run { config } => {
            let cfg = match parse_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(2);
                }
            };
            match runner::run(&cfg) {
                Ok(artifacts) => {
                    for a in &artifacts {
                        let what = match &a.metrics {
                            RunMetrics::Matrix(m) => match m.avg_accuracy() {
                                Some(acc) => format!("avg_accuracy {:.4}", acc),
                                None => "avg_accuracy n/a".into(),
                            },
                            RunMetrics::Trace(t) => match t.last() {
                                Some(r) => {
                                    format!("final step {} omega_updates {}", r.step, r.omega_updates)
                                }
                                None => "empty trace".into(),
                            },
                            RunMetrics::Checks(c) => {
                                format!("{}/{} checks passed", c.iter().filter(|c| c.3).count(), c.len())
                            }
                        };
                        println!(
                            "seed {:>3}  {:<22} {}  ({:.1}s)  -> {}",
                            a.seed,
                            a.method_id,
                            what,
                            a.wall_secs,
                            a.dir.display()
                        );
                    }
                    if let Some(a) = artifacts.iter().next() {
                        if let RunMetrics::Checks(c) = &a.metrics {
                            if c.iter().any(|c| !c.3) {
                                return ExitCode::from(1);
                            }
                        }
                    }
                    ExitCode::SUCCESS
                }
                Err(Error::Config(e)) => {
                    eprintln!("config error: {e}");
                    ExitCode::from(2)
                }
                Err(e) => {
                    eprintln!("run failed: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Cmd::Gradcheck => {
            let mut ok = true;
            for r in gradcheck::run_all() {
                let verdict = if r.passed() { "pass" } else { "FAIL" };
                println!("{:<20} max rel err {:>10.3e}  tol {:>7.0e}  {}", r.name, r.max_rel_err, r.tolerance, verdict);
                ok &= r.passed();
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Cmd::ListMethods => {
            print!("{}", METHODS);
            ExitCode::SUCCESS
        }
    }
}

const METHODS: &str = "\
modes (config key `mode`):
  sequence   tasks one after another; evaluates every task seen so far
  joint      all tasks at once; the upper-bound baseline
  stream     task-free arrivals with plateau-triggered consolidation
  gradcheck  finite-difference suite; no data needed

[method] importance (quadratic anchor penalty, strength `lambda`):
  none  mas  ewc

[method.rep_reg] kind (representation penalty on hidden layers):
  sni      co-activation inhibition across all neuron pairs
  slni     gaussian-localized inhibition (width sigma_scale * layer width)
  snid     inhibition discounted by accumulated neuron importance
  slnid    localized and importance-discounted (sigma_scale default 1/6)
  l1_rep   plain L1 on activations
  decov    squared off-diagonal covariance
  l1_param / l2_wd   parameter-space norms

[method.distill] mode (previous-task output preservation):
  lwf    temperature-softened distillation on recorded logits
  ebll   lwf plus per-task autoencoder code penalty (alpha, code_size)

[stream] importance:
  none (plain replay)  mas  ewc
";
