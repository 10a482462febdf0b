//! Reservoir behavior at a glance: stream 2000 examples through a
//! 100-slot buffer and show that retention frequency matches
//! capacity/seen for early, middle and late stream positions.
//!
//! ```bash
//! cargo run --release -p cclfp --example reservoir_demo
//! ```

use cclfp::buffer::MemoryBuffer;
use cclfp::data::Example;

fn main() {
    let capacity = 100;
    let stream_len = 2000usize;
    let trials = 2000;

    let mut retained = vec![0u32; stream_len];
    for trial in 0..trials {
        let mut buffer = MemoryBuffer::new(capacity, trial as u64);
        for i in 0..stream_len {
            buffer.offer(Example {
                input: vec![i as f64],
                label: 0,
                task_id: 0,
            });
        }
        for e in buffer.slots() {
            retained[e.input[0] as usize] += 1;
        }
    }

    let expected = capacity as f64 / stream_len as f64;
    println!(
        "capacity {capacity}, stream {stream_len}: every example should survive with p = {expected:.3}"
    );
    println!("position   observed   expected");
    for &pos in &[0usize, 99, 500, 1000, 1500, 1999] {
        println!(
            "{:>8}   {:.4}     {:.4}",
            pos,
            retained[pos] as f64 / trials as f64,
            expected
        );
    }
}
