//! The rotated domain-incremental benchmark: twenty tasks, each a random
//! rotation of the source images, one shared ten-class head throughout.
//!
//! ```bash
//! cargo run --release -p cclfp --example generate_digits -- data/digits
//! cargo run --release -p cclfp --example rotated_benchmark -- data/digits 0
//! ```

use std::path::PathBuf;

use cclfp::config::default_loss;
use cclfp::data::{build_rotated, idx, Scenario, TransformStreamOptions};
use cclfp::trainer::{run_scenario, Method, TrainConfig};

fn main() -> cclfp::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let dir = PathBuf::from(args.get(1).map(String::as_str).unwrap_or("data/digits"));
    let seed: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0);

    let (train, test) = idx::load_mnist_dir(&dir)?;
    let stream = build_rotated(
        &train.examples,
        &test.examples,
        train.height,
        train.width,
        &TransformStreamOptions {
            seed,
            ..Default::default()
        },
    )?;
    println!(
        "rotated domain-il | {} tasks | seed {}",
        stream.task_count(),
        seed
    );
    for task in stream.manifest.tasks.iter().take(5) {
        println!("  task {}: {}", task.task, task.transform);
    }
    println!("  ...");

    for method in [Method::Er, Method::CclFp, Method::CclFpPlus] {
        let config = TrainConfig::new(method, default_loss(Scenario::DomainIncremental), seed);
        let outcome = run_scenario(&stream, &config)?;
        println!(
            "{:<8} accuracy {:>6.2}%   forgetting {:+6.2}%",
            method.as_str(),
            100.0 * outcome.accuracy.final_average_accuracy()?,
            100.0 * outcome.accuracy.final_forgetting().unwrap_or(0.0)
        );
    }
    Ok(())
}
