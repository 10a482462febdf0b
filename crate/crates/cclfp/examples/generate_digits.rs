//! Write the procedural digit corpus as IDX files, laid out like the
//! classic handwriting distribution, so the benchmark CLI and examples can
//! run without external data.
//!
//! ```bash
//! cargo run --release -p cclfp --example generate_digits -- data/digits 60000 10000
//! ```

use std::path::PathBuf;

use cclfp::data::digits;

fn main() -> cclfp::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let dir = PathBuf::from(args.get(1).map(String::as_str).unwrap_or("data/digits"));
    let train: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(60_000);
    let test: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(10_000);
    let seed: u64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(20260808);

    println!(
        "rendering {train} train / {test} test digit images into {}",
        dir.display()
    );
    digits::write_corpus_idx(&dir, train, test, seed)?;
    for path in cclfp::data::idx::mnist_paths(&dir) {
        let len = std::fs::metadata(&path)?.len();
        println!("  {} ({} bytes)", path.display(), len);
    }
    println!("point --data (or data_dir) at this directory to use it");
    Ok(())
}
