//! Contrastive continual learning with feature propagation.
//!
//! A continual learner sees a stream of tasks once, keeps a small replay
//! buffer, and is scored on all tasks seen so far. This crate implements
//! experience replay on *propagated* embeddings (current embeddings fused
//! with similarity-weighted embeddings from a frozen snapshot of the
//! extractor), a contrastive rehearsal term pulling embeddings toward their
//! snapshot counterparts, and a supervised contrastive term clustering
//! same-class embeddings, together with the class-, task- and
//! domain-incremental benchmark harness around them.
//!
//! Everything runs on a small tape-based reverse-mode differentiation
//! engine over dense double-precision matrices; no external ML framework.
//!
//! # Start with the examples
//!
//! Each major capability has a runnable example:
//!
//! - **`synthetic_quickstart`** — smallest end-to-end run (no data needed):
//!   blob stream, finetune vs replay vs the full method, in seconds
//! - **`generate_digits`** — render the bundled 28x28 digit corpus as IDX
//!   files, for running the benchmarks without external data
//! - **`split_benchmark`** — five two-digit tasks, class- or
//!   task-incremental, all five methods side by side
//! - **`rotated_benchmark`** — twenty random-rotation tasks under the
//!   domain-incremental protocol
//! - **`gradcheck_report`** — every backward rule against central finite
//!   differences, per-op error table
//! - **`reservoir_demo`** — retention frequencies of the replay buffer
//!   against the capacity/seen law
//! - **`checkpoint_io`** — bit-exact model + buffer checkpoint round trip
//!
//! ```bash
//! cargo run --release -p cclfp --example synthetic_quickstart
//! cargo run --release -p cclfp --example generate_digits -- data/digits
//! cargo run --release -p cclfp --example split_benchmark -- data/digits class-il 0
//! ```
//!
//! The `cclfp` binary exposes the same machinery as `run`, `compare` and
//! `gradcheck` subcommands driven by a key-value config file; see the
//! repository README for the schema.
//!
//! # Module map
//!
//! - [`matrix`]: row-major dense matrices, the sole numeric container
//! - [`autodiff`]: the gradient tape and its operation set
//! - [`model`]: MLP extractor, classifier heads, frozen snapshots
//! - [`buffer`]: reservoir-sampled episodic memory
//! - [`losses`]: propagation weights, the three loss terms, the combined
//!   objective
//! - [`data`]: IDX ingestion, split/permuted/rotated stream builders, blob
//!   and digit generators
//! - [`trainer`]: the continual loop, baselines, SGD
//! - [`metrics`]: accuracy matrix, average accuracy, forgetting
//! - [`gradcheck`]: finite-difference verification of every backward rule
//! - [`checkpoint`]: bit-exact model + buffer container files
//! - [`config`] / [`cli`]: experiment configs, artifact layout, comparisons

pub mod autodiff;
pub mod buffer;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::DenseMatrix;
