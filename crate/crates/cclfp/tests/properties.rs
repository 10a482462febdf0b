//! Property tests for the numeric invariants the losses and buffer rely on.

use cclfp::autodiff::GradientTape;
use cclfp::buffer::MemoryBuffer;
use cclfp::data::Example;
use cclfp::losses::{
    propagate, propagation_weights, supervised_contrastive_loss, total_loss, BatchContext,
    LossConfig,
};
use cclfp::matrix::DenseMatrix;
use cclfp::metrics::AccuracyMatrix;
use cclfp::model::{register_heads, HeadParams, LinearLayer};
use proptest::prelude::*;

fn matrix_strategy(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
    proptest::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |data| DenseMatrix::from_vec(rows, cols, data).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one_and_stay_positive(m in matrix_strategy(4, 6)) {
        let mut tape = GradientTape::new();
        let x = tape.leaf(m);
        let sm = tape.row_softmax(x);
        for r in 0..4 {
            let row = tape.value(sm).row(r);
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn pairwise_is_symmetric_and_non_negative(m in matrix_strategy(5, 3)) {
        let mut tape = GradientTape::new();
        let a = tape.leaf(m);
        let d = tape.pairwise_euclidean(a, a, 1e-12).unwrap();
        let value = tape.value(d);
        for i in 0..5 {
            for j in 0..5 {
                prop_assert!(value.get(i, j) >= 0.0);
                prop_assert!((value.get(i, j) - value.get(j, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn propagation_stays_in_componentwise_hull(
        cur in matrix_strategy(4, 3),
        prev in matrix_strategy(4, 3),
        w in 0.0f64..1.0,
    ) {
        let mut tape = GradientTape::new();
        let c = tape.leaf(cur.clone());
        let p = tape.leaf(prev.clone());
        let a = propagation_weights(&mut tape, c, p, 0.1, 1e-12).unwrap();
        let tilde = propagate(&mut tape, c, a, p, w).unwrap();
        for i in 0..4 {
            for col in 0..3 {
                let mut lo = cur.get(i, col);
                let mut hi = cur.get(i, col);
                for j in 0..4 {
                    lo = lo.min(prev.get(j, col));
                    hi = hi.max(prev.get(j, col));
                }
                let v = tape.value(tilde).get(i, col);
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn total_loss_is_batch_order_invariant(
        cur in matrix_strategy(5, 4),
        prev in matrix_strategy(5, 4),
        labels in proptest::collection::vec(0usize..3, 5),
        perm_seed in 0u64..1000,
    ) {
        let config = LossConfig {
            w: 0.4, eta: 0.2, tau: 0.3, alpha: 0.6, beta: 0.5,
            distance_eps: 1e-12,
        };
        let head = HeadParams::Single(LinearLayer {
            weight: DenseMatrix::from_vec(4, 3, (0..12).map(|i| (i as f64) * 0.07 - 0.4).collect()).unwrap(),
            bias: DenseMatrix::zeros(1, 3),
        });
        let eval = |cur_m: &DenseMatrix, prev_m: &DenseMatrix, labels: &[usize]| -> f64 {
            let mut tape = GradientTape::new();
            let nodes = register_heads(&mut tape, &head, &[], &[]).unwrap();
            let c = tape.param(cur_m.clone());
            let p = tape.leaf(prev_m.clone());
            let ctx = BatchContext {
                labels: labels.to_vec(),
                task_ids: vec![0; labels.len()],
                cur_emb: c,
                prev_emb: Some(p),
            };
            let parts = total_loss(&mut tape, &nodes, &ctx, &config, None).unwrap();
            tape.value(parts.total).scalar_value().unwrap()
        };

        // pseudo-random permutation of the batch
        let mut order: Vec<usize> = (0..5).collect();
        let mut state = perm_seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        for i in (1..5).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            order.swap(i, (state >> 33) as usize % (i + 1));
        }
        let cur_p = cur.gather_rows(&order).unwrap();
        let prev_p = prev.gather_rows(&order).unwrap();
        let labels_p: Vec<usize> = order.iter().map(|&i| labels[i]).collect();

        let base = eval(&cur, &prev, &labels);
        let permuted = eval(&cur_p, &prev_p, &labels_p);
        prop_assert!((base - permuted).abs() < 1e-12, "{} vs {}", base, permuted);
    }

    #[test]
    fn supcon_zero_exactly_when_no_anchor_has_peers(
        cur in matrix_strategy(4, 3),
        labels in proptest::collection::vec(0usize..6, 4),
    ) {
        let mut tape = GradientTape::new();
        let c = tape.leaf(cur);
        let loss = supervised_contrastive_loss(&mut tape, c, &labels, 0.5, 1e-12).unwrap();
        let value = tape.value(loss).scalar_value().unwrap();
        let has_pair = (0..4).any(|i| (0..4).any(|k| k != i && labels[k] == labels[i]));
        if has_pair {
            prop_assert!(value.is_finite());
        } else {
            prop_assert_eq!(value, 0.0);
        }
    }

    #[test]
    fn buffer_never_exceeds_capacity(
        capacity in 1usize..20,
        offers in proptest::collection::vec(0usize..100, 0..200),
        seed in 0u64..500,
    ) {
        let mut buffer = MemoryBuffer::new(capacity, seed);
        for (count, &tag) in offers.iter().enumerate() {
            buffer.offer(Example { input: vec![tag as f64], label: tag % 10, task_id: 0 });
            prop_assert_eq!(buffer.len(), capacity.min(count + 1));
        }
        prop_assert_eq!(buffer.seen_count(), offers.len() as u64);
    }

    #[test]
    fn metric_ranges_hold(rows in proptest::collection::vec(
        proptest::collection::vec(0.0f64..=1.0, 1..6), 1..6)
    ) {
        // coerce into a lower-triangular-ish matrix by truncating rows
        let mut m = AccuracyMatrix::new();
        for (i, row) in rows.iter().enumerate() {
            let mut r = row.clone();
            r.truncate(i + 1);
            if r.is_empty() {
                r.push(row[0]);
            }
            m.push_row(r).unwrap();
        }
        for t in 0..m.row_count() {
            let acc = m.average_accuracy(t).unwrap();
            prop_assert!((0.0..=1.0).contains(&acc));
        }
        if m.row_count() >= 2 {
            if let Ok(f) = m.forgetting(m.row_count() - 1) {
                prop_assert!((-1.0..=1.0).contains(&f));
            }
        }
    }

    #[test]
    fn idx_files_round_trip(
        pixels in proptest::collection::vec(0u8..=255, 12),
        labels in proptest::collection::vec(0u8..=9, 3),
    ) {
        let dir = std::env::temp_dir();
        let img = dir.join(format!("cclfp-prop-img-{}", std::process::id()));
        let lbl = dir.join(format!("cclfp-prop-lbl-{}", std::process::id()));
        cclfp::data::idx::write_idx_images(&img, 2, 2, &pixels).unwrap();
        cclfp::data::idx::write_idx_labels(&lbl, &labels).unwrap();
        let images = cclfp::data::idx::read_idx_images(&img).unwrap();
        let read_labels = cclfp::data::idx::read_idx_labels(&lbl).unwrap();
        prop_assert_eq!(images.pixels, pixels);
        prop_assert_eq!(read_labels, labels);
        std::fs::remove_file(img).ok();
        std::fs::remove_file(lbl).ok();
    }
}
