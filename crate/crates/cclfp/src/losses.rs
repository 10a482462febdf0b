//! The training objectives: replay on propagated embeddings, contrastive
//! rehearsal against the frozen snapshot, supervised contrastive replay,
//! and their weighted combination.
//!
//! All losses are built on a [`GradientTape`] over the concatenated
//! minibatch (current-task batch plus memory batch); softmax denominators
//! range over that minibatch. Snapshot embeddings enter as constant leaves,
//! so no gradient ever reaches the frozen extractor, including through the
//! propagation weights.

use std::collections::BTreeMap;

use crate::autodiff::{GradientTape, NodeId};
use crate::error::{Error, Result};
use crate::model::{classify_on_tape, HeadNodes};

pub const DEFAULT_DISTANCE_EPS: f64 = 1e-12;

/// Loss hyperparameters.
///
/// `w` balances current against propagated embeddings, `eta` tempers the
/// propagation softmax, `tau` tempers both contrastive losses, and `alpha`
/// and `beta` weight the contrastive-rehearsal and supervised-contrastive
/// terms. Zero coefficients switch their components off entirely.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    pub w: f64,
    pub eta: f64,
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default = "default_eps")]
    pub distance_eps: f64,
}

fn default_eps() -> f64 {
    DEFAULT_DISTANCE_EPS
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.w) {
            return Err(Error::config(format!(
                "w must be in [0, 1), got {}",
                self.w
            )));
        }
        if self.eta <= 0.0 || self.tau <= 0.0 {
            return Err(Error::config(format!(
                "temperatures must be positive, got eta = {}, tau = {}",
                self.eta, self.tau
            )));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::config(format!(
                "loss coefficients must be non-negative, got alpha = {}, beta = {}",
                self.alpha, self.beta
            )));
        }
        if self.distance_eps <= 0.0 {
            return Err(Error::config("distance_eps must be positive"));
        }
        Ok(())
    }

    /// Plain experience replay: every extra component off.
    pub fn plain_er() -> Self {
        LossConfig {
            w: 0.0,
            eta: 0.1,
            tau: 0.1,
            alpha: 0.0,
            beta: 0.0,
            distance_eps: DEFAULT_DISTANCE_EPS,
        }
    }
}

/// Per-iteration realization of the concatenated minibatch on the tape.
#[derive(Debug, Clone)]
pub struct BatchContext {
    pub labels: Vec<usize>,
    pub task_ids: Vec<usize>,
    /// Embeddings from the live extractor (differentiable).
    pub cur_emb: NodeId,
    /// Embeddings from the frozen snapshot (constant leaf), when one exists.
    pub prev_emb: Option<NodeId>,
}

/// Row-stochastic propagation weights: softmax over snapshot embeddings of
/// -eta * distance(cur_i, prev_j). Differentiable through `cur` only.
pub fn propagation_weights(
    tape: &mut GradientTape,
    cur: NodeId,
    prev: NodeId,
    eta: f64,
    eps: f64,
) -> Result<NodeId> {
    let dist = tape.pairwise_euclidean(cur, prev, eps)?;
    let logits = tape.scale(dist, -eta);
    Ok(tape.row_softmax(logits))
}

/// Fused embeddings: (1 - w) * cur + w * (A @ prev). `w = 0` returns `cur`
/// unchanged, skipping the propagation entirely.
pub fn propagate(
    tape: &mut GradientTape,
    cur: NodeId,
    weights: NodeId,
    prev: NodeId,
    w: f64,
) -> Result<NodeId> {
    if w == 0.0 {
        return Ok(cur);
    }
    let mixed = tape.matmul(weights, prev)?;
    let scaled_cur = tape.scale(cur, 1.0 - w);
    let scaled_mix = tape.scale(mixed, w);
    tape.add(scaled_cur, scaled_mix)
}

/// Cross-entropy of classified (possibly propagated) embeddings, averaged
/// over the batch. Multi-head batches are grouped by task id; each group is
/// classified through its own head and the group means are recombined with
/// weights |group| / n, which reproduces the overall batch mean.
pub fn replay_loss(
    tape: &mut GradientTape,
    heads: &HeadNodes,
    emb: NodeId,
    labels: &[usize],
    task_ids: &[usize],
    class_mask: Option<&[bool]>,
) -> Result<NodeId> {
    let n = labels.len();
    if n == 0 || task_ids.len() != n {
        return Err(Error::shape(format!(
            "replay_loss: {} labels, {} task ids",
            n,
            task_ids.len()
        )));
    }
    match heads {
        HeadNodes::Single(_) => {
            let mut logits = classify_on_tape(tape, heads, emb, None)?;
            if let Some(mask) = class_mask {
                let cols = tape.value(logits).cols();
                if mask.len() != cols {
                    return Err(Error::shape(format!(
                        "class mask covers {} classes, head has {}",
                        mask.len(),
                        cols
                    )));
                }
                let row: Vec<f64> = mask
                    .iter()
                    .map(|&allowed| if allowed { 0.0 } else { -1e9 })
                    .collect();
                let mask_node = tape.leaf(crate::matrix::DenseMatrix::from_vec(1, cols, row)?);
                logits = tape.add_row_vec(logits, mask_node)?;
            }
            tape.cross_entropy(logits, labels)
        }
        HeadNodes::Multi(_) => {
            let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (row, &task) in task_ids.iter().enumerate() {
                groups.entry(task).or_default().push(row);
            }
            let mut total: Option<NodeId> = None;
            for (task, rows) in groups {
                let group_emb = if rows.len() == n {
                    emb
                } else {
                    tape.gather_rows(emb, &rows)?
                };
                let group_labels: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
                let logits = classify_on_tape(tape, heads, group_emb, Some(task))?;
                let ce = tape.cross_entropy(logits, &group_labels)?;
                let weighted = tape.scale(ce, rows.len() as f64 / n as f64);
                total = Some(match total {
                    Some(acc) => tape.add(acc, weighted)?,
                    None => weighted,
                });
            }
            Ok(total.expect("at least one group"))
        }
    }
}

/// Pulls each embedding toward its own snapshot embedding relative to all
/// snapshot embeddings in the batch: mean over i of
/// `-log softmax_j(-tau * d(cur_i, prev_j))[i]`. The denominator includes
/// j = i, so the loss is non-negative.
pub fn contrastive_rehearsal_loss(
    tape: &mut GradientTape,
    cur: NodeId,
    prev: NodeId,
    tau: f64,
    eps: f64,
) -> Result<NodeId> {
    let n = tape.value(cur).rows();
    let dist = tape.pairwise_euclidean(cur, prev, eps)?;
    let logits = tape.scale(dist, -tau);
    let diagonal: Vec<usize> = (0..n).collect();
    tape.cross_entropy(logits, &diagonal)
}

/// Clusters same-class embeddings: for each anchor with at least one
/// same-class peer, the mean over peers k of -log of the share of
/// exp(-tau * d(anchor, k)) among all non-anchor batch members; anchors
/// without peers contribute nothing.
pub fn supervised_contrastive_loss(
    tape: &mut GradientTape,
    cur: NodeId,
    labels: &[usize],
    tau: f64,
    eps: f64,
) -> Result<NodeId> {
    let dist = tape.pairwise_euclidean(cur, cur, eps)?;
    let logits = tape.scale(dist, -tau);
    tape.supcon_from_logits(logits, labels)
}

/// The combined objective value and its per-term breakdown.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: NodeId,
    pub replay: f64,
    pub contrastive: f64,
    pub supervised: f64,
}

/// Build the full objective: replay + alpha * rehearsal + beta * supervised.
///
/// Zero-coefficient terms are skipped outright (no tape nodes), so the
/// `w = alpha = beta = 0` configuration is computationally identical to
/// plain experience replay. Components that need snapshot embeddings
/// (`w > 0` or `alpha > 0`) require `ctx.prev_emb`.
pub fn total_loss(
    tape: &mut GradientTape,
    heads: &HeadNodes,
    ctx: &BatchContext,
    config: &LossConfig,
    class_mask: Option<&[bool]>,
) -> Result<LossParts> {
    config.validate()?;
    let needs_prev = config.w != 0.0 || config.alpha != 0.0;
    if needs_prev && ctx.prev_emb.is_none() {
        return Err(Error::protocol(
            "propagation and contrastive rehearsal need snapshot embeddings",
        ));
    }

    let psi_tilde = if config.w != 0.0 {
        let prev = ctx.prev_emb.expect("checked above");
        let weights =
            propagation_weights(tape, ctx.cur_emb, prev, config.eta, config.distance_eps)?;
        propagate(tape, ctx.cur_emb, weights, prev, config.w)?
    } else {
        ctx.cur_emb
    };

    let replay = replay_loss(
        tape,
        heads,
        psi_tilde,
        &ctx.labels,
        &ctx.task_ids,
        class_mask,
    )?;
    let replay_value = tape.value(replay).scalar_value()?;
    let mut total = replay;
    let mut contrastive_value = 0.0;
    let mut supervised_value = 0.0;

    if config.alpha != 0.0 {
        let prev = ctx.prev_emb.expect("checked above");
        let cl =
            contrastive_rehearsal_loss(tape, ctx.cur_emb, prev, config.tau, config.distance_eps)?;
        contrastive_value = tape.value(cl).scalar_value()?;
        let scaled = tape.scale(cl, config.alpha);
        total = tape.add(total, scaled)?;
    }
    if config.beta != 0.0 {
        let scl = supervised_contrastive_loss(
            tape,
            ctx.cur_emb,
            &ctx.labels,
            config.tau,
            config.distance_eps,
        )?;
        supervised_value = tape.value(scl).scalar_value()?;
        let scaled = tape.scale(scl, config.beta);
        total = tape.add(total, scaled)?;
    }

    Ok(LossParts {
        total,
        replay: replay_value,
        contrastive: contrastive_value,
        supervised: supervised_value,
    })
}
