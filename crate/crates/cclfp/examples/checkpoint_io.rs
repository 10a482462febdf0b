//! Checkpoint round trip: train a small run, dump model + snapshot +
//! buffer into one container file, reload it and verify everything is
//! bit-identical.
//!
//! ```bash
//! cargo run --release -p cclfp --example checkpoint_io
//! ```

use cclfp::checkpoint;
use cclfp::config::default_loss;
use cclfp::data::{build_synthetic, Scenario, SyntheticOptions};
use cclfp::trainer::{run_scenario, Method, TrainConfig};

fn main() -> cclfp::Result<()> {
    let stream = build_synthetic(&SyntheticOptions {
        task_count: 3,
        classes_per_task: 2,
        per_class: 100,
        test_per_class: 40,
        width: 12,
        shift: 0.0,
        scenario: Scenario::ClassIncremental,
        seed: 3,
    })?;
    let mut config = TrainConfig::new(Method::CclFpPlus, default_loss(stream.scenario), 1);
    config.hidden_widths = vec![24, 24];
    config.buffer_capacity = 60;
    let outcome = run_scenario(&stream, &config)?;

    let path = std::env::temp_dir().join("cclfp-checkpoint-demo.bin");
    checkpoint::save(&path, &outcome.state)?;
    let size = std::fs::metadata(&path)?.len();
    println!("wrote {} ({} bytes)", path.display(), size);

    let restored = checkpoint::load(&path)?;
    assert_eq!(restored.model, outcome.state.model);
    assert_eq!(
        restored.buffer.as_ref().map(|b| b.slots().len()),
        outcome.state.buffer.as_ref().map(|b| b.slots().len())
    );
    println!(
        "restored: {} extractor layers, buffer {}/{} slots, snapshot present: {}",
        restored.model.extractor.layers().len(),
        restored.buffer.as_ref().map_or(0, |b| b.slots().len()),
        restored.buffer.as_ref().map_or(0, |b| b.capacity()),
        restored.snapshot.is_some()
    );
    println!("round trip verified bit-exactly");
    std::fs::remove_file(&path).ok();
    Ok(())
}
