//! Verify every backward rule against central finite differences and print
//! the per-op error table.
//!
//! ```bash
//! cargo run --release -p cclfp --example gradcheck_report
//! ```

fn main() {
    let report = cclfp::gradcheck::run_suite(20);
    print!("{}", report.render());
    if report.all_passed() {
        println!("all gradient checks passed");
    } else {
        std::process::exit(3);
    }
}
