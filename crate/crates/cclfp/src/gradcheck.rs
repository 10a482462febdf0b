//! Finite-difference verification of every backward rule.
//!
//! Central differences (step 1e-5) against the tape's analytic gradients,
//! repeated across random seeds per op. The numeric side only ever calls
//! forward evaluations, so it stays independent of the backward code it
//! checks. `run_suite` powers both the test suite and the `gradcheck` CLI
//! command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{GradientTape, NodeId};
use crate::error::{Error, Result};
use crate::losses::{self, BatchContext, LossConfig};
use crate::matrix::DenseMatrix;
use crate::model::{
    embed_on_tape, register_extractor, register_heads, ExtractorParams, ExtractorSnapshot,
    HeadParams,
};

pub const FD_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` at `point`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, point: &[f64], step: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(point.len());
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        let original = probe[i];
        probe[i] = original + step;
        let plus = f(&probe);
        probe[i] = original - step;
        let minus = f(&probe);
        probe[i] = original;
        grad.push((plus - minus) / (2.0 * step));
    }
    grad
}

/// Largest per-coordinate relative error between two gradients.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct OpCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checks: Vec<OpCheck>,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(OpCheck::passed)
    }

    pub fn render(&self) -> String {
        let mut out =
            String::from("op                          max rel err   tolerance   status\n");
        for c in &self.checks {
            out.push_str(&format!(
                "{:<27} {:<13.3e} {:<11.0e} {}\n",
                c.name,
                c.max_rel_err,
                c.tolerance,
                if c.passed() { "ok" } else { "FAIL" }
            ));
        }
        out
    }
}

/// Compare a hand-supplied analytic gradient against central differences.
pub fn check_custom(
    name: &str,
    tolerance: f64,
    value_fn: &mut dyn FnMut(&[f64]) -> f64,
    analytic: &[f64],
    point: &[f64],
) -> OpCheck {
    let numeric = central_difference(value_fn, point, FD_STEP);
    OpCheck {
        name: name.into(),
        max_rel_err: max_relative_error(analytic, &numeric),
        tolerance,
    }
}

fn random_vec(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(lo..hi)).collect()
}

fn mat_of(rows: usize, cols: usize, data: &[f64]) -> DenseMatrix {
    DenseMatrix::from_vec(rows, cols, data.to_vec()).expect("probe shape")
}

/// Run one op scenario across seeds: `build` maps the flat parameter vector
/// to a scalar loss node on a fresh tape (aux constants fixed per seed by
/// capturing them), returning (tape, loss, param node).
fn check_scenario<F>(name: &str, tolerance: f64, seeds: usize, dim: usize, mut setup: F) -> OpCheck
where
    F: FnMut(
        u64,
    ) -> (
        Vec<f64>,
        Box<dyn Fn(&[f64]) -> (GradientTape, NodeId, NodeId)>,
    ),
{
    let mut worst = 0.0f64;
    for seed in 0..seeds as u64 {
        let (point, build) = setup(seed);
        debug_assert_eq!(point.len(), dim);
        let (mut tape, loss, param) = build(&point);
        tape.backward(loss).expect("backward");
        let analytic = tape
            .grad(param)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; dim]);
        let mut value_fn = |p: &[f64]| {
            let (tape, loss, _) = build(p);
            tape.value(loss).scalar_value().expect("scalar loss")
        };
        let numeric = central_difference(&mut value_fn, &point, FD_STEP);
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    OpCheck {
        name: name.into(),
        max_rel_err: worst,
        tolerance,
    }
}

fn weighted_sum(tape: &mut GradientTape, node: NodeId, weights: &DenseMatrix) -> NodeId {
    let w = tape.leaf(weights.clone());
    let prod = tape.mul_elem(node, w).expect("weight shape");
    tape.sum(prod)
}

fn check_matmul(seeds: usize) -> OpCheck {
    check_scenario("matmul", 1e-6, seeds, 18, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let point = random_vec(&mut rng, 18, -1.0, 1.0);
        (
            point,
            Box::new(move |p: &[f64]| {
                let mut tape = GradientTape::new();
                let both = tape.param(mat_of(6, 3, p));
                // rows 0..2 act as the left factor, rows 3..5 as the right,
                // so one finite-difference pass covers both matmul grads
                let a = tape.gather_rows(both, &[0, 1, 2]).unwrap();
                let b = tape.gather_rows(both, &[3, 4, 5]).unwrap();
                let prod = tape.matmul(a, b).unwrap();
                let loss = tape.sum(prod);
                (tape, loss, both)
            }),
        )
    })
}

fn check_relu(seeds: usize) -> OpCheck {
    check_scenario("relu", 1e-6, seeds, 20, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        // keep entries away from the kink
        let point: Vec<f64> = (0..20)
            .map(|_| {
                let v: f64 = rng.gen_range(0.05..1.0);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let weights = mat_of(4, 5, &random_vec(&mut rng, 20, -1.0, 1.0));
        (
            point,
            Box::new(move |p: &[f64]| {
                let mut tape = GradientTape::new();
                let x = tape.param(mat_of(4, 5, p));
                let act = tape.relu(x);
                let loss = weighted_sum(&mut tape, act, &weights);
                (tape, loss, x)
            }),
        )
    })
}

fn check_pairwise(seeds: usize) -> OpCheck {
    check_scenario("pairwise_euclidean", 1e-5, seeds, 24, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let point = random_vec(&mut rng, 24, -1.0, 1.0);
        let weights = mat_of(4, 4, &random_vec(&mut rng, 16, -1.0, 1.0));
        (
            point,
            Box::new(move |p: &[f64]| {
                let mut tape = GradientTape::new();
                let both = tape.param(mat_of(8, 3, p));
                let a = tape.gather_rows(both, &[0, 1, 2, 3]).unwrap();
                let b = tape.gather_rows(both, &[4, 5, 6, 7]).unwrap();
                let d = tape.pairwise_euclidean(a, b, 1e-12).unwrap();
                let loss = weighted_sum(&mut tape, d, &weights);
                (tape, loss, both)
            }),
        )
    })
}

fn check_row_softmax(seeds: usize) -> OpCheck {
    check_scenario("row_softmax", 1e-4, seeds, 12, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let point = random_vec(&mut rng, 12, -2.0, 2.0);
        let weights = mat_of(3, 4, &random_vec(&mut rng, 12, -1.0, 1.0));
        (
            point,
            Box::new(move |p: &[f64]| {
                let mut tape = GradientTape::new();
                let x = tape.param(mat_of(3, 4, p));
                let sm = tape.row_softmax(x);
                let loss = weighted_sum(&mut tape, sm, &weights);
                (tape, loss, x)
            }),
        )
    })
}

fn check_cross_entropy(seeds: usize) -> OpCheck {
    check_scenario("cross_entropy", 1e-4, seeds, 15, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let point = random_vec(&mut rng, 15, -2.0, 2.0);
        let labels: Vec<usize> = (0..5).map(|_| rng.gen_range(0..3)).collect();
        (
            point,
            Box::new(move |p: &[f64]| {
                let mut tape = GradientTape::new();
                let logits = tape.param(mat_of(5, 3, p));
                let loss = tape.cross_entropy(logits, &labels).unwrap();
                (tape, loss, logits)
            }),
        )
    })
}

fn check_elementwise(seeds: usize) -> Vec<OpCheck> {
    let arith = |name: &'static str, f: fn(&mut GradientTape, NodeId, NodeId) -> NodeId| {
        check_scenario(name, 1e-4, seeds, 12, move |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
            let point = random_vec(&mut rng, 12, -1.0, 1.0);
            let other = mat_of(3, 4, &random_vec(&mut rng, 12, 0.2, 1.5));
            let weights = mat_of(3, 4, &random_vec(&mut rng, 12, -1.0, 1.0));
            (
                point,
                Box::new(move |p: &[f64]| {
                    let mut tape = GradientTape::new();
                    let x = tape.param(mat_of(3, 4, p));
                    let o = tape.leaf(other.clone());
                    let combined = f(&mut tape, x, o);
                    let loss = weighted_sum(&mut tape, combined, &weights);
                    (tape, loss, x)
                }),
            )
        })
    };
    vec![
        arith("add", |t, x, o| t.add(x, o).unwrap()),
        arith("sub", |t, x, o| t.sub(x, o).unwrap()),
        arith("mul_elem", |t, x, o| t.mul_elem(x, o).unwrap()),
        arith("scale", |t, x, _| t.scale(x, -1.75)),
        arith("neg", |t, x, _| t.neg(x)),
        check_scenario("log", 1e-4, seeds, 12, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
            let point = random_vec(&mut rng, 12, 0.2, 3.0);
            let weights = mat_of(3, 4, &random_vec(&mut rng, 12, -1.0, 1.0));
            (
                point,
                Box::new(move |p: &[f64]| {
                    let mut tape = GradientTape::new();
                    let x = tape.param(mat_of(3, 4, p));
                    let l = tape.log(x);
                    let loss = weighted_sum(&mut tape, l, &weights);
                    (tape, loss, x)
                }),
            )
        }),
        check_scenario("sum", 1e-4, seeds, 12, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(650 + seed);
            let point = random_vec(&mut rng, 12, -1.0, 1.0);
            (
                point,
                Box::new(move |p: &[f64]| {
                    let mut tape = GradientTape::new();
                    let x = tape.param(mat_of(3, 4, p));
                    let loss = tape.sum(x);
                    (tape, loss, x)
                }),
            )
        }),
        check_scenario("mean", 1e-4, seeds, 12, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
            let point = random_vec(&mut rng, 12, -1.0, 1.0);
            (
                point,
                Box::new(move |p: &[f64]| {
                    let mut tape = GradientTape::new();
                    let x = tape.param(mat_of(3, 4, p));
                    let loss = tape.mean(x);
                    (tape, loss, x)
                }),
            )
        }),
        check_scenario("concat_rows", 1e-4, seeds, 12, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(750 + seed);
            let point = random_vec(&mut rng, 12, -1.0, 1.0);
            let other = mat_of(2, 4, &random_vec(&mut rng, 8, -1.0, 1.0));
            let weights = mat_of(5, 4, &random_vec(&mut rng, 20, -1.0, 1.0));
            (
                point,
                Box::new(move |p: &[f64]| {
                    let mut tape = GradientTape::new();
                    let x = tape.param(mat_of(3, 4, p));
                    let o = tape.leaf(other.clone());
                    let cat = tape.concat_rows(x, o).unwrap();
                    let loss = weighted_sum(&mut tape, cat, &weights);
                    (tape, loss, x)
                }),
            )
        }),
        check_scenario("gather_rows", 1e-4, seeds, 12, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
            let point = random_vec(&mut rng, 12, -1.0, 1.0);
            let weights = mat_of(4, 4, &random_vec(&mut rng, 16, -1.0, 1.0));
            (
                point,
                Box::new(move |p: &[f64]| {
                    let mut tape = GradientTape::new();
                    let x = tape.param(mat_of(3, 4, p));
                    // repeated row exercises the scatter-add
                    let g = tape.gather_rows(x, &[2, 0, 2, 1]).unwrap();
                    let loss = weighted_sum(&mut tape, g, &weights);
                    (tape, loss, x)
                }),
            )
        }),
        check_scenario("add_row_vec", 1e-4, seeds, 4, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(850 + seed);
            let point = random_vec(&mut rng, 4, -1.0, 1.0);
            let base = mat_of(3, 4, &random_vec(&mut rng, 12, -1.0, 1.0));
            let weights = mat_of(3, 4, &random_vec(&mut rng, 12, -1.0, 1.0));
            (
                point,
                Box::new(move |p: &[f64]| {
                    let mut tape = GradientTape::new();
                    let v = tape.param(mat_of(1, 4, p));
                    let b = tape.leaf(base.clone());
                    let out = tape.add_row_vec(b, v).unwrap();
                    let loss = weighted_sum(&mut tape, out, &weights);
                    (tape, loss, v)
                }),
            )
        }),
    ]
}

fn check_propagation_weights(seeds: usize) -> OpCheck {
    check_scenario("propagation_weights", 1e-4, seeds, 12, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let point = random_vec(&mut rng, 12, -1.0, 1.0);
        let prev = mat_of(4, 3, &random_vec(&mut rng, 12, -1.0, 1.0));
        let weights = mat_of(4, 4, &random_vec(&mut rng, 16, -1.0, 1.0));
        (
            point,
            Box::new(move |p: &[f64]| {
                let mut tape = GradientTape::new();
                let cur = tape.param(mat_of(4, 3, p));
                let prev_node = tape.leaf(prev.clone());
                let a = losses::propagation_weights(&mut tape, cur, prev_node, 0.7, 1e-12).unwrap();
                let loss = weighted_sum(&mut tape, a, &weights);
                (tape, loss, cur)
            }),
        )
    })
}

fn check_contrastive_rehearsal(seeds: usize) -> OpCheck {
    check_scenario("contrastive_rehearsal", 1e-4, seeds, 12, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(950 + seed);
        let point = random_vec(&mut rng, 12, -1.0, 1.0);
        let prev = mat_of(4, 3, &random_vec(&mut rng, 12, -1.0, 1.0));
        (
            point,
            Box::new(move |p: &[f64]| {
                let mut tape = GradientTape::new();
                let cur = tape.param(mat_of(4, 3, p));
                let prev_node = tape.leaf(prev.clone());
                let loss =
                    losses::contrastive_rehearsal_loss(&mut tape, cur, prev_node, 0.8, 1e-12)
                        .unwrap();
                (tape, loss, cur)
            }),
        )
    })
}

fn check_supervised_contrastive(seeds: usize) -> OpCheck {
    check_scenario("supervised_contrastive", 1e-4, seeds, 15, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let point = random_vec(&mut rng, 15, -1.0, 1.0);
        let labels: Vec<usize> = (0..5).map(|_| rng.gen_range(0..2)).collect();
        (
            point,
            Box::new(move |p: &[f64]| {
                let mut tape = GradientTape::new();
                let cur = tape.param(mat_of(5, 3, p));
                let loss = losses::supervised_contrastive_loss(&mut tape, cur, &labels, 0.6, 1e-12)
                    .unwrap();
                (tape, loss, cur)
            }),
        )
    })
}

/// Smallest |pre-activation| across all ReLU inputs of a forward pass.
/// Probe instances whose margin is below ~1e-3 are redrawn: a central
/// difference stepping across the kink makes the numeric gradient
/// meaningless there (the relu op check masks such entries the same way).
fn min_relu_margin(extractor: &ExtractorParams, inputs: &DenseMatrix) -> f64 {
    let mut margin = f64::INFINITY;
    let mut cur = inputs.clone();
    for layer in extractor.layers() {
        let lin = cur.matmul(&layer.weight).expect("probe shape");
        let mut post = lin;
        for r in 0..post.rows() {
            for c in 0..post.cols() {
                let pre = post.get(r, c) + layer.bias.get(0, c);
                margin = margin.min(pre.abs());
                post.set(r, c, pre.max(0.0));
            }
        }
        cur = post;
    }
    margin
}

/// Flatten a model's parameters (extractor layers then head layers).
fn flatten_params(extractor: &ExtractorParams, heads: &[&crate::model::LinearLayer]) -> Vec<f64> {
    let mut out = Vec::new();
    for layer in extractor.layers() {
        out.extend_from_slice(layer.weight.data());
        out.extend_from_slice(layer.bias.data());
    }
    for head in heads {
        out.extend_from_slice(head.weight.data());
        out.extend_from_slice(head.bias.data());
    }
    out
}

fn unflatten_into(
    extractor: &mut ExtractorParams,
    heads: &mut [&mut crate::model::LinearLayer],
    flat: &[f64],
) {
    let mut cursor = 0;
    let mut take = |len: usize| {
        let slice = &flat[cursor..cursor + len];
        cursor += len;
        slice.to_vec()
    };
    for layer in extractor.layers_mut() {
        let (r, c) = layer.weight.shape();
        layer.weight = DenseMatrix::from_vec(r, c, take(r * c)).unwrap();
        let bc = layer.bias.cols();
        layer.bias = DenseMatrix::from_vec(1, bc, take(bc)).unwrap();
    }
    for head in heads {
        let (r, c) = head.weight.shape();
        head.weight = DenseMatrix::from_vec(r, c, take(r * c)).unwrap();
        let bc = head.bias.cols();
        head.bias = DenseMatrix::from_vec(1, bc, take(bc)).unwrap();
    }
}

/// Full-objective check: gradients of the complete combined loss (with
/// propagation, rehearsal and supervised terms active) against central
/// differences for every extractor and head parameter.
fn check_full_objective(seeds: usize) -> OpCheck {
    let mut worst = 0.0f64;
    for seed in 0..seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let (extractor, head, inputs) = loop {
            let extractor = ExtractorParams::init(&[6, 5, 4], &mut rng).unwrap();
            let head = HeadParams::single(4, 3, &mut rng);
            let inputs = mat_of(4, 6, &random_vec(&mut rng, 24, 0.0, 1.0));
            if min_relu_margin(&extractor, &inputs) > 1e-3 {
                break (extractor, head, inputs);
            }
        };
        let head_layer = match &head {
            HeadParams::Single(l) => l.clone(),
            _ => unreachable!(),
        };
        // frozen snapshot: a perturbed copy of the extractor
        let mut snap_params = extractor.clone();
        for layer in snap_params.layers_mut() {
            layer.weight = layer.weight.map(|v| v + 0.05);
        }
        let snapshot = ExtractorSnapshot::take(&snap_params);
        let prev_emb = snapshot.embed(&inputs).unwrap();
        let labels = vec![0usize, 1, 0, 2];
        let config = LossConfig {
            w: 0.3,
            eta: 0.1,
            tau: 0.1,
            alpha: 0.5,
            beta: 0.25,
            distance_eps: 1e-12,
        };

        let point = flatten_params(&extractor, &[&head_layer]);
        let build = |p: &[f64]| {
            let mut ex = extractor.clone();
            let mut hd = head_layer.clone();
            unflatten_into(&mut ex, &mut [&mut hd], p);
            let mut tape = GradientTape::new();
            let nodes = register_extractor(&mut tape, &ex);
            let head_nodes = register_heads(&mut tape, &HeadParams::Single(hd), &[], &[]).unwrap();
            let x = tape.leaf(inputs.clone());
            let cur = embed_on_tape(&mut tape, &nodes, x).unwrap();
            let prev = tape.leaf(prev_emb.clone());
            let ctx = BatchContext {
                labels: labels.clone(),
                task_ids: vec![0; 4],
                cur_emb: cur,
                prev_emb: Some(prev),
            };
            let parts = losses::total_loss(&mut tape, &head_nodes, &ctx, &config, None).unwrap();
            (tape, parts.total, nodes, head_nodes)
        };

        let (mut tape, loss, nodes, head_nodes) = build(&point);
        tape.backward(loss).unwrap();
        let mut analytic = Vec::with_capacity(point.len());
        for &(w, b) in &nodes.layers {
            analytic.extend_from_slice(tape.grad(w).expect("extractor grad").data());
            analytic.extend_from_slice(tape.grad(b).expect("extractor bias grad").data());
        }
        if let crate::model::HeadNodes::Single((w, b)) = head_nodes {
            analytic.extend_from_slice(tape.grad(w).expect("head grad").data());
            analytic.extend_from_slice(tape.grad(b).expect("head bias grad").data());
        }
        let mut value_fn = |p: &[f64]| {
            let (tape, loss, _, _) = build(p);
            tape.value(loss).scalar_value().unwrap()
        };
        let numeric = central_difference(&mut value_fn, &point, FD_STEP);
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    OpCheck {
        name: "full_objective".into(),
        max_rel_err: worst,
        tolerance: 1e-4,
    }
}

/// Multi-head replay with a frozen past-task head: gradients flow into the
/// extractor and the current head only, and match central differences.
fn check_multi_head_replay(seeds: usize) -> OpCheck {
    let mut worst = 0.0f64;
    for seed in 0..seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let (extractor, head, inputs) = loop {
            let extractor = ExtractorParams::init(&[5, 4], &mut rng).unwrap();
            let mut head = HeadParams::multi(4, 2);
            head.ensure_task_head(1, &mut rng);
            let inputs = mat_of(4, 5, &random_vec(&mut rng, 20, 0.0, 1.0));
            if min_relu_margin(&extractor, &inputs) > 1e-3 {
                break (extractor, head, inputs);
            }
        };
        let current_layer = match &head {
            HeadParams::Multi { heads, .. } => heads[1].clone(),
            _ => unreachable!(),
        };
        let labels = vec![0usize, 1, 1, 0];
        let task_ids = vec![0usize, 0, 1, 1];

        let point = {
            let mut p = Vec::new();
            for layer in extractor.layers() {
                p.extend_from_slice(layer.weight.data());
                p.extend_from_slice(layer.bias.data());
            }
            p.extend_from_slice(current_layer.weight.data());
            p.extend_from_slice(current_layer.bias.data());
            p
        };

        let build = |p: &[f64]| {
            let mut ex = extractor.clone();
            let mut cur_head = current_layer.clone();
            unflatten_into(&mut ex, &mut [&mut cur_head], p);
            let mut hd = head.clone();
            if let HeadParams::Multi { heads, .. } = &mut hd {
                heads[1] = cur_head;
            }
            let mut tape = GradientTape::new();
            let nodes = register_extractor(&mut tape, &ex);
            let head_nodes = register_heads(&mut tape, &hd, &task_ids, &[1]).unwrap();
            let x = tape.leaf(inputs.clone());
            let emb = embed_on_tape(&mut tape, &nodes, x).unwrap();
            let loss =
                losses::replay_loss(&mut tape, &head_nodes, emb, &labels, &task_ids, None).unwrap();
            (tape, loss, nodes, head_nodes)
        };

        let (mut tape, loss, nodes, head_nodes) = build(&point);
        tape.backward(loss).unwrap();
        let mut analytic = Vec::new();
        for &(w, b) in &nodes.layers {
            analytic.extend_from_slice(tape.grad(w).expect("extractor grad").data());
            analytic.extend_from_slice(tape.grad(b).expect("bias grad").data());
        }
        if let crate::model::HeadNodes::Multi(heads) = &head_nodes {
            let (w1, b1) = heads[1].expect("current head registered");
            analytic.extend_from_slice(tape.grad(w1).expect("head grad").data());
            analytic.extend_from_slice(tape.grad(b1).expect("head bias grad").data());
            // the frozen head must receive nothing
            let (w0, b0) = heads[0].expect("past head registered");
            assert!(tape.grad(w0).is_none() && tape.grad(b0).is_none());
        }
        let mut value_fn = |p: &[f64]| {
            let (tape, loss, _, _) = build(p);
            tape.value(loss).scalar_value().unwrap()
        };
        let numeric = central_difference(&mut value_fn, &point, FD_STEP);
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    OpCheck {
        name: "multi_head_replay".into(),
        max_rel_err: worst,
        tolerance: 1e-4,
    }
}

/// Run the whole finite-difference suite, `seeds` random instances per op.
pub fn run_suite(seeds: usize) -> GradCheckReport {
    let mut checks = vec![
        check_matmul(seeds),
        check_relu(seeds),
        check_pairwise(seeds),
        check_row_softmax(seeds),
        check_cross_entropy(seeds),
    ];
    checks.extend(check_elementwise(seeds));
    checks.push(check_propagation_weights(seeds));
    checks.push(check_contrastive_rehearsal(seeds));
    checks.push(check_supervised_contrastive(seeds));
    checks.push(check_full_objective(seeds));
    checks.push(check_multi_head_replay(seeds));
    GradCheckReport { checks }
}

/// Like [`run_suite`] but returns an error suitable for the CLI exit-code
/// contract when any check fails.
pub fn run_suite_strict(seeds: usize) -> Result<GradCheckReport> {
    let report = run_suite(seeds);
    if report.all_passed() {
        Ok(report)
    } else {
        let failing: Vec<String> = report
            .checks
            .iter()
            .filter(|c| !c.passed())
            .map(|c| format!("{} (max rel err {:.3e})", c.name, c.max_rel_err))
            .collect();
        Err(Error::Numerical(failing.join(", ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_twenty_seeds() {
        let report = run_suite(20);
        assert!(report.all_passed(), "\n{}", report.render());
    }

    #[test]
    fn report_lists_every_op() {
        let report = run_suite(2);
        let rendered = report.render();
        for op in [
            "matmul",
            "relu",
            "pairwise_euclidean",
            "row_softmax",
            "cross_entropy",
            "add",
            "sub",
            "mul_elem",
            "scale",
            "neg",
            "log",
            "sum",
            "mean",
            "concat_rows",
            "gather_rows",
            "add_row_vec",
            "propagation_weights",
            "contrastive_rehearsal",
            "supervised_contrastive",
            "full_objective",
            "multi_head_replay",
        ] {
            assert!(rendered.contains(op), "missing {op} in:\n{rendered}");
        }
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        // f(x) = sum(x^2)/2, true gradient x; corrupt it and expect failure
        let point = vec![0.4, -1.2, 0.9];
        let mut value_fn = |p: &[f64]| p.iter().map(|v| v * v).sum::<f64>() / 2.0;
        let good: Vec<f64> = point.clone();
        let ok = check_custom("negative_control_good", 1e-6, &mut value_fn, &good, &point);
        assert!(ok.passed());

        let corrupted: Vec<f64> = point.iter().map(|v| v + 0.01).collect();
        let bad = check_custom(
            "negative_control_bad",
            1e-4,
            &mut value_fn,
            &corrupted,
            &point,
        );
        assert!(!bad.passed());
        assert!(bad.max_rel_err > 1e-3);
    }
}
