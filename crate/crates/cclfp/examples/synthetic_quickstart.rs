//! Smallest end-to-end run: a Gaussian-blob class-incremental stream,
//! plain replay against finetune, metrics printed in a few seconds.
//!
//! ```bash
//! cargo run --release -p cclfp --example synthetic_quickstart
//! ```

use cclfp::config::default_loss;
use cclfp::data::{build_synthetic, Scenario, SyntheticOptions};
use cclfp::trainer::{run_scenario, Method, TrainConfig};

fn main() -> cclfp::Result<()> {
    let stream = build_synthetic(&SyntheticOptions {
        task_count: 5,
        classes_per_task: 2,
        per_class: 200,
        test_per_class: 80,
        width: 16,
        shift: 0.0,
        scenario: Scenario::ClassIncremental,
        seed: 7,
    })?;
    println!(
        "stream: {} tasks, {} classes, width {}",
        stream.task_count(),
        stream.class_count,
        stream.input_width
    );

    for method in [Method::Finetune, Method::Er, Method::CclFpPlus] {
        let mut config = TrainConfig::new(method, default_loss(stream.scenario), 0);
        config.hidden_widths = vec![32, 32];
        config.buffer_capacity = 100;
        let outcome = run_scenario(&stream, &config)?;
        let accuracy = outcome.accuracy.final_average_accuracy()?;
        let forgetting = outcome
            .accuracy
            .final_forgetting()
            .map(|f| format!("{:+.2}%", 100.0 * f))
            .unwrap_or_else(|| "--".into());
        println!(
            "{:<9} final average accuracy {:>6.2}%   forgetting {}",
            method.as_str(),
            100.0 * accuracy,
            forgetting
        );
        if method == Method::CclFpPlus {
            println!("\naccuracy matrix (rows = after task, columns = test task):");
            for (i, row) in outcome.accuracy.rows().iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|v| format!("{:5.1}", 100.0 * v)).collect();
                println!("  after task {}: [{}]", i, cells.join(", "));
            }
        }
    }
    Ok(())
}
