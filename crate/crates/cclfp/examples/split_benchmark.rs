//! The split benchmark: five two-digit tasks in sequence, comparing
//! finetune, replay, and both contrastive variants under the class- or
//! task-incremental protocol.
//!
//! Expects an IDX data directory (real handwriting data or the output of
//! the `generate_digits` example):
//!
//! ```bash
//! cargo run --release -p cclfp --example generate_digits -- data/digits
//! cargo run --release -p cclfp --example split_benchmark -- data/digits class-il 0
//! ```

use std::path::PathBuf;
use std::time::Instant;

use cclfp::config::default_loss;
use cclfp::data::{build_split, default_digit_pairs, idx, Scenario};
use cclfp::trainer::{run_scenario, Method, TrainConfig};

fn main() -> cclfp::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let dir = PathBuf::from(args.get(1).map(String::as_str).unwrap_or("data/digits"));
    let scenario = Scenario::parse(args.get(2).map(String::as_str).unwrap_or("class-il"))?;
    let seed: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0);

    let (train, test) = idx::load_mnist_dir(&dir)?;
    let stream = build_split(
        &train.examples,
        &test.examples,
        &default_digit_pairs(),
        scenario,
    )?;
    println!(
        "split {} | {} train / {} test examples | seed {}",
        scenario,
        train.examples.len(),
        test.examples.len(),
        seed
    );

    for method in [
        Method::Joint,
        Method::Finetune,
        Method::Er,
        Method::CclFp,
        Method::CclFpPlus,
    ] {
        let config = TrainConfig::new(method, default_loss(scenario), seed);
        let t0 = Instant::now();
        let outcome = run_scenario(&stream, &config)?;
        let accuracy = outcome.accuracy.final_average_accuracy()?;
        let forgetting = outcome
            .accuracy
            .final_forgetting()
            .map(|f| format!("{:+6.2}%", 100.0 * f))
            .unwrap_or_else(|| "     --".into());
        println!(
            "{:<9} accuracy {:>6.2}%   forgetting {}   ({:.1}s)",
            method.as_str(),
            100.0 * accuracy,
            forgetting,
            t0.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
