// quick throughput probe, not part of the repo
use lifelong::data::{load_mnist, gen_permuted_tasks};
use lifelong::nn::{build_network, Activation};
use lifelong::sequence::{run_sequence, ImportanceKind, MethodConfig};
use std::path::Path;
use std::time::Instant;

fn main() {
    let base = load_mnist(Path::new("data/mnist"), 10_000).unwrap();
    println!("train {} test {}", base.train.len(), base.test.len());
    let tasks = gen_permuted_tasks(&base, 1, 1234);
    let method = MethodConfig {
        importance: ImportanceKind::Mas,
        lambda: 1.0,
        rep_reg: None,
        distill: None,
        shared_head: true,
        epochs: 1,
        lr: 0.01,
        batch_size: 64,
        seed: 0,
    };
    let mut net = build_network(&[784, 128, 128], Activation::Relu, &[10], 0).unwrap();
    let t = Instant::now();
    let m = run_sequence(&tasks, &mut net, &method).unwrap();
    println!("1 epoch + consolidate + eval: {:.2}s, acc {:?}", t.elapsed().as_secs_f64(), m.get(0,0));
}
