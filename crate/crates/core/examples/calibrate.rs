// Hyperparameter probes for the benchmark experiments. Scratch tool:
//   cargo run --release --example calibrate -- <probe> [args...]
use std::env;
use std::path::Path;
use std::time::Instant;

use lifelong::data::{gen_permuted_tasks, load_mnist};
use lifelong::distill::{DistillConfig, DistillMode};
use lifelong::nn::{build_network, Activation};
use lifelong::regularizers::{RegConfig, RegKind};
use lifelong::sequence::{joint_train, run_sequence, ImportanceKind, MethodConfig};

fn base_method(seed: u64) -> MethodConfig {
    MethodConfig {
        importance: ImportanceKind::None,
        lambda: 0.0,
        rep_reg: None,
        distill: None,
        shared_head: true,
        epochs: 10,
        lr: 0.01,
        batch_size: 64,
        seed,
    }
}

fn ablation_net(seed: u64, heads: &[usize]) -> lifelong::nn::Network {
    build_network(&[784, 128, 128], Activation::Relu, heads, seed).unwrap()
}

fn main() {
    let args: Vec<String> = env::args().skip(1).collect();
    let probe = args.first().map(String::as_str).unwrap_or("help");
    let base = load_mnist(Path::new("data/mnist"), 10_000).unwrap();
    let tasks = gen_permuted_tasks(&base, 5, 1234);

    let t0 = Instant::now();
    match probe {
        // cargo run ... -- joint <seed> [batch]
        "joint" => {
            let seed: u64 = args[1].parse().unwrap();
            let mut method = base_method(seed);
            if let Some(bs) = args.get(2) {
                method.batch_size = bs.parse().unwrap();
            }
            let mut net = ablation_net(seed, &[10]);
            let m = joint_train(&tasks, &mut net, &method).unwrap();
            println!("joint seed={seed} avg={:.4}", m.avg_accuracy().unwrap());
        }
        // cargo run ... -- noreg <lambda> <seed> [batch]
        "noreg" => {
            let lambda: f64 = args[1].parse().unwrap();
            let seed: u64 = args[2].parse().unwrap();
            let mut method = base_method(seed);
            method.importance = ImportanceKind::Mas;
            method.lambda = lambda;
            if let Some(bs) = args.get(3) {
                method.batch_size = bs.parse().unwrap();
            }
            let mut net = ablation_net(seed, &[10]);
            let m = run_sequence(&tasks, &mut net, &method).unwrap();
            let per: Vec<String> =
                (0..5).map(|t| format!("{:.3}", m.get(t, 4).unwrap())).collect();
            println!(
                "noreg lambda={lambda} seed={seed} avg={:.4} per={}",
                m.avg_accuracy().unwrap(),
                per.join(",")
            );
        }
        // cargo run ... -- variant <kind> <mas_lambda> <reg_lambda> <seed>
        "variant" => {
            let kind = match args[1].as_str() {
                "sni" => RegKind::Sni,
                "snid" => RegKind::Snid,
                "slni" => RegKind::Slni,
                "slnid" => RegKind::Slnid,
                other => panic!("unknown kind {other}"),
            };
            let mas_lambda: f64 = args[2].parse().unwrap();
            let reg_lambda: f64 = args[3].parse().unwrap();
            let seed: u64 = args[4].parse().unwrap();
            let mut method = base_method(seed);
            method.importance = ImportanceKind::Mas;
            method.lambda = mas_lambda;
            method.rep_reg = Some(RegConfig { kind, lambda: reg_lambda, sigma_scale: 1.0 / 6.0 });
            if let Some(bs) = args.get(5) {
                method.batch_size = bs.parse().unwrap();
            }
            let mut net = ablation_net(seed, &[10]);
            let m = run_sequence(&tasks, &mut net, &method).unwrap();
            println!(
                "variant {:?} mas={mas_lambda} reg={reg_lambda} seed={seed} avg={:.4}",
                kind,
                m.avg_accuracy().unwrap()
            );
        }
        // cargo run ... -- pair <method> <seed> [alpha]: 2-task distill trio
        "pair" => {
            let which = args[1].as_str();
            let seed: u64 = args[2].parse().unwrap();
            let pair = gen_permuted_tasks(&base, 2, 1234);
            let mut method = base_method(seed);
            method.shared_head = false;
            method.epochs = 8;
            match which {
                "finetune" => {}
                "lwf" => {
                    method.distill = Some(DistillConfig::new(DistillMode::Lwf));
                }
                "ebll" => {
                    let alpha: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1.0);
                    let mut d = DistillConfig::new(DistillMode::Ebll);
                    d.alpha = alpha;
                    method.distill = Some(d);
                }
                other => panic!("unknown method {other}"),
            }
            let mut net = ablation_net(seed, &[10, 10]);
            let m = run_sequence(&pair, &mut net, &method).unwrap();
            let forgetting = m.forgetting()[0].unwrap();
            println!(
                "pair {which} seed={seed} t0_after={:.4} t0_end={:.4} t1_end={:.4} forgetting={:.4}",
                m.get(0, 0).unwrap(),
                m.get(0, 1).unwrap(),
                m.get(1, 1).unwrap(),
                forgetting
            );
        }
        // cargo run ... -- sphere <variant> <lr> <batches_per_phase> <batch> <hidden> <lambda> <seed>
        "sphere" => {
            use lifelong::data::{make_stream, PhaseSource, PhaseSpec};
            use lifelong::online::{run_stream, OnlineConfig};
            let variant = args[1].as_str();
            let lr: f64 = args[2].parse().unwrap();
            let nb: usize = args[3].parse().unwrap();
            let bs: usize = args[4].parse().unwrap();
            let hidden: Vec<usize> = args[5].split('-').map(|s| s.parse().unwrap()).collect();
            let lambda: f64 = args[6].parse().unwrap();
            let seed: u64 = args[7].parse().unwrap();
            let parse_act = |s: &str| match s {
                "sigmoid" => Activation::Sigmoid,
                "tanh" => Activation::Tanh,
                _ => Activation::Relu,
            };
            let acts: Vec<Activation> = args
                .get(8)
                .map(String::as_str)
                .unwrap_or("relu")
                .split('+')
                .map(parse_act)
                .collect();
            let act = acts[0];

            let cap: usize = args.get(9).map(|s| s.parse().unwrap()).unwrap_or(100);
            let kind = match args.get(13).map(String::as_str) {
                Some("ewc") => ImportanceKind::Ewc,
                _ => ImportanceKind::Mas,
            };
            let (importance, capacity) = match variant {
                "continual" => (kind, cap),
                "online" => (ImportanceKind::None, cap),
                "nohard" => (ImportanceKind::None, 0),
                other => panic!("unknown variant {other}"),
            };
            let cfg = OnlineConfig {
                importance,
                lambda,
                lr,
                steps: args.get(14).map(|s| s.parse().unwrap()).unwrap_or(3),
                buffer_capacity: capacity,
                window: 5,
                delta_mu: args.get(11).map(|s| s.parse().unwrap()).unwrap_or(0.3),
                delta_sigma: args.get(12).map(|s| s.parse().unwrap()).unwrap_or(0.1),
                eval_every: args.get(10).map(|s| s.parse().unwrap()).unwrap_or(nb / 8),
            };
            let nb2: usize = args.get(15).map(|s| s.parse().unwrap()).unwrap_or(nb);
            let phases = [
                PhaseSpec { source: PhaseSource::SphereQ1, num_batches: nb, batch_size: bs },
                PhaseSpec { source: PhaseSource::SphereQ2, num_batches: nb2, batch_size: bs },
            ];
            let mut stream = make_stream(&phases, 1234);
            let mut tests = vec![
                PhaseSource::SphereQ1.generate(500, 777),
                PhaseSource::SphereQ2.generate(500, 778),
            ];
            if args.get(16).map(String::as_str) == Some("center") {
                let shift = |b: &mut lifelong::data::LabeledBatch| {
                    for v in b.inputs.data_mut() {
                        *v -= 0.5;
                    }
                };
                for (b, _) in stream.arrivals.iter_mut() {
                    shift(b);
                }
                for t in tests.iter_mut() {
                    shift(t);
                }
            }
            let mut dims = vec![4];
            if hidden.len() == 1 {
                dims.extend([hidden[0], hidden[0]]);
            } else {
                dims.extend(&hidden);
            }
            let mut net = build_network(&dims, act, &[2], seed).unwrap();
            for (i, layer) in net.trunk.iter_mut().enumerate() {
                layer.act = acts[i.min(acts.len() - 1)];
            }
            let trace = run_stream(&stream, &tests, &mut net, 0, &cfg).unwrap();
            for r in &trace {
                println!(
                    "sphere {variant} step={} phase={} acc={:.4} loss={:.3} omega_updates={}",
                    r.step, r.phase, r.accuracy, r.loss_mean, r.omega_updates
                );
            }
        }
        // cargo run ... -- omegastats <lr> <nb> <bs> <hidden> <seed>
        "omegastats" => {
            use lifelong::data::{make_stream, PhaseSource, PhaseSpec};
            use lifelong::importance::mas_importance;
            use lifelong::nn::ParamMap;
            use lifelong::online::{online_step, OnlineConfig, OnlineLearner};

            let lr: f64 = args[1].parse().unwrap();
            let nb: usize = args[2].parse().unwrap();
            let bs: usize = args[3].parse().unwrap();
            let hidden: usize = args[4].parse().unwrap();
            let seed: u64 = args[5].parse().unwrap();
            let cfg = OnlineConfig {
                importance: ImportanceKind::None,
                lambda: 0.0,
                lr,
                steps: 3,
                buffer_capacity: 20,
                window: 5,
                delta_mu: 0.3,
                delta_sigma: 0.1,
                eval_every: nb,
            };
            let phases =
                [PhaseSpec { source: PhaseSource::SphereQ1, num_batches: nb, batch_size: bs }];
            let stream = make_stream(&phases, 1234);
            let mut net = build_network(&[4, hidden, hidden], Activation::Tanh, &[2], seed).unwrap();
            let mut learner = OnlineLearner::new(&net, 0, &cfg);
            for (arrival, _) in &stream.arrivals {
                online_step(&mut learner, &mut net, arrival, &cfg).unwrap();
            }
            let quantiles = |m: &ParamMap, name: &str| {
                let mut all: Vec<f64> = Vec::new();
                for blk in m.trunk.iter().chain(m.heads.iter().flatten()) {
                    all.extend(blk.w.data().iter().copied());
                    all.extend(blk.b.iter().copied());
                }
                all.sort_by(f64::total_cmp);
                let q = |p: f64| all[((all.len() - 1) as f64 * p) as usize];
                println!(
                    "{name:>8}: min={:.3e} p25={:.3e} p50={:.3e} p75={:.3e} p95={:.3e} max={:.3e}",
                    q(0.0), q(0.25), q(0.5), q(0.75), q(0.95), q(1.0)
                );
            };
            let buf = learner.buffer.batch().expect("buffer nonempty");
            let om_buf = mas_importance(&net, 0, &buf.inputs, Some(0)).unwrap();
            let fresh = PhaseSource::SphereQ1.generate(500, 4321);
            let om_fresh = mas_importance(&net, 0, &fresh.inputs, Some(0)).unwrap();
            quantiles(&om_buf, "buffer");
            quantiles(&om_fresh, "fresh");
        }
        other => {
            eprintln!("unknown probe {other}; see source");
        }
    }
    eprintln!("[{:.1}s]", t0.elapsed().as_secs_f64());
}
