//! The learner: an MLP feature extractor with scenario-appropriate
//! classifier head(s), plus frozen snapshot management.
//!
//! The extractor applies `relu(x W + b)` per layer; the embedding is the
//! output of the last layer. Heads are plain linear maps from embedding
//! width to class count: one shared head for class- and domain-incremental
//! runs, one head per seen task for task-incremental runs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{GradientTape, NodeId};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    /// in_width x out_width.
    pub weight: DenseMatrix,
    /// 1 x out_width.
    pub bias: DenseMatrix,
}

impl LinearLayer {
    /// Uniform(-a, a) init with a = sqrt(6 / (fan_in + fan_out)); zero bias.
    pub fn init(in_width: usize, out_width: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (in_width + out_width) as f64).sqrt();
        let mut data = Vec::with_capacity(in_width * out_width);
        for _ in 0..in_width * out_width {
            data.push(rng.gen_range(-bound..bound));
        }
        LinearLayer {
            weight: DenseMatrix::from_vec(in_width, out_width, data).expect("init shape"),
            bias: DenseMatrix::zeros(1, out_width),
        }
    }

    pub fn in_width(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_width(&self) -> usize {
        self.weight.cols()
    }
}

/// The feature extractor: a chain of linear layers, ReLU after each.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorParams {
    layers: Vec<LinearLayer>,
}

impl ExtractorParams {
    /// `widths` chains input width through hidden layers to the embedding
    /// width, e.g. `[784, 100, 100]` for the MNIST configuration.
    pub fn init(widths: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::config(
                "extractor needs at least input and embedding widths",
            ));
        }
        let layers = widths
            .windows(2)
            .map(|w| LinearLayer::init(w[0], w[1], rng))
            .collect();
        Ok(ExtractorParams { layers })
    }

    /// Rebuild from explicit layers (checkpoint restore); shapes must chain.
    pub fn from_layers(layers: Vec<LinearLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("extractor needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_width() != pair[1].in_width() {
                return Err(Error::shape(format!(
                    "layer widths do not chain: {} -> {}",
                    pair[0].out_width(),
                    pair[1].in_width()
                )));
            }
        }
        Ok(ExtractorParams { layers })
    }

    pub fn layers(&self) -> &[LinearLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LinearLayer] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].in_width()
    }

    pub fn embedding_width(&self) -> usize {
        self.layers.last().expect("nonempty").out_width()
    }

    /// Forward pass without a tape; used for frozen snapshots and evaluation.
    pub fn embed_plain(&self, batch: &DenseMatrix) -> Result<DenseMatrix> {
        if batch.cols() != self.input_width() {
            return Err(Error::shape(format!(
                "embed: batch width {} vs input width {}",
                batch.cols(),
                self.input_width()
            )));
        }
        let mut cur = batch.clone();
        for layer in &self.layers {
            let lin = cur.matmul(&layer.weight)?;
            let mut with_bias = lin;
            let cols = with_bias.cols();
            for r in 0..with_bias.rows() {
                for c in 0..cols {
                    let v = with_bias.get(r, c) + layer.bias.get(0, c);
                    with_bias.set(r, c, v.max(0.0));
                }
            }
            cur = with_bias;
        }
        Ok(cur)
    }
}

/// Tape node ids for registered extractor parameters, in layer order.
#[derive(Debug, Clone)]
pub struct ExtractorNodes {
    pub layers: Vec<(NodeId, NodeId)>,
}

/// Register extractor parameters as trainable tape nodes.
pub fn register_extractor(tape: &mut GradientTape, params: &ExtractorParams) -> ExtractorNodes {
    let layers = params
        .layers()
        .iter()
        .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
        .collect();
    ExtractorNodes { layers }
}

/// Differentiable forward pass through registered extractor parameters.
pub fn embed_on_tape(
    tape: &mut GradientTape,
    nodes: &ExtractorNodes,
    input: NodeId,
) -> Result<NodeId> {
    let mut cur = input;
    for &(w, b) in &nodes.layers {
        let lin = tape.matmul(cur, w)?;
        let biased = tape.add_row_vec(lin, b)?;
        cur = tape.relu(biased);
    }
    Ok(cur)
}

/// Classifier head(s). Single-head scenarios share one linear map; the
/// task-incremental scenario grows one head per seen task.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadParams {
    Single(LinearLayer),
    Multi {
        classes_per_task: usize,
        embedding_width: usize,
        heads: Vec<LinearLayer>,
    },
}

impl HeadParams {
    pub fn single(embedding_width: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        HeadParams::Single(LinearLayer::init(embedding_width, classes, rng))
    }

    pub fn multi(embedding_width: usize, classes_per_task: usize) -> Self {
        HeadParams::Multi {
            classes_per_task,
            embedding_width,
            heads: Vec::new(),
        }
    }

    pub fn is_multi(&self) -> bool {
        matches!(self, HeadParams::Multi { .. })
    }

    pub fn head_count(&self) -> usize {
        match self {
            HeadParams::Single(_) => 1,
            HeadParams::Multi { heads, .. } => heads.len(),
        }
    }

    /// Make sure heads exist for tasks `0..=task`. Heads are created in task
    /// order so initialization is deterministic under a fixed seed.
    pub fn ensure_task_head(&mut self, task: usize, rng: &mut ChaCha8Rng) {
        if let HeadParams::Multi {
            classes_per_task,
            embedding_width,
            heads,
        } = self
        {
            while heads.len() <= task {
                heads.push(LinearLayer::init(*embedding_width, *classes_per_task, rng));
            }
        }
    }

    fn head_for(&self, task: Option<usize>) -> Result<&LinearLayer> {
        match self {
            HeadParams::Single(layer) => Ok(layer),
            HeadParams::Multi { heads, .. } => {
                let t = task.ok_or_else(|| {
                    Error::protocol("multi-head classification requires a task id")
                })?;
                heads.get(t).ok_or_else(|| {
                    Error::protocol(format!("unknown task id {} ({} heads)", t, heads.len()))
                })
            }
        }
    }

    /// Logits without a tape; used for evaluation.
    pub fn classify_plain(&self, emb: &DenseMatrix, task: Option<usize>) -> Result<DenseMatrix> {
        let head = self.head_for(task)?;
        let lin = emb.matmul(&head.weight)?;
        let mut out = lin;
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                out.set(r, c, out.get(r, c) + head.bias.get(0, c));
            }
        }
        Ok(out)
    }
}

/// Tape node ids for registered head parameters.
#[derive(Debug, Clone)]
pub enum HeadNodes {
    Single((NodeId, NodeId)),
    /// One entry per task id; `None` for heads not used this step.
    Multi(Vec<Option<(NodeId, NodeId)>>),
}

impl HeadNodes {
    pub fn head_for(&self, task: Option<usize>) -> Result<(NodeId, NodeId)> {
        match self {
            HeadNodes::Single(nodes) => Ok(*nodes),
            HeadNodes::Multi(heads) => {
                let t = task.ok_or_else(|| {
                    Error::protocol("multi-head classification requires a task id")
                })?;
                heads
                    .get(t)
                    .copied()
                    .flatten()
                    .ok_or_else(|| Error::protocol(format!("task id {} not registered", t)))
            }
        }
    }
}

/// Register head parameters on the tape. For multi-head models only
/// `tasks_in_batch` heads are registered, and only heads in
/// `trainable_tasks` become trainable params; the rest enter as frozen
/// constants so replay never updates past-task heads.
pub fn register_heads(
    tape: &mut GradientTape,
    head: &HeadParams,
    tasks_in_batch: &[usize],
    trainable_tasks: &[usize],
) -> Result<HeadNodes> {
    match head {
        HeadParams::Single(layer) => Ok(HeadNodes::Single((
            tape.param(layer.weight.clone()),
            tape.param(layer.bias.clone()),
        ))),
        HeadParams::Multi { heads, .. } => {
            let mut nodes = vec![None; heads.len()];
            let mut wanted: Vec<usize> = tasks_in_batch.to_vec();
            wanted.sort_unstable();
            wanted.dedup();
            for t in wanted {
                let layer = heads
                    .get(t)
                    .ok_or_else(|| Error::protocol(format!("task id {} not registered", t)))?;
                let trainable = trainable_tasks.contains(&t);
                let pair = if trainable {
                    (
                        tape.param(layer.weight.clone()),
                        tape.param(layer.bias.clone()),
                    )
                } else {
                    (
                        tape.leaf(layer.weight.clone()),
                        tape.leaf(layer.bias.clone()),
                    )
                };
                nodes[t] = Some(pair);
            }
            Ok(HeadNodes::Multi(nodes))
        }
    }
}

/// Differentiable logits for a single head selection.
pub fn classify_on_tape(
    tape: &mut GradientTape,
    heads: &HeadNodes,
    emb: NodeId,
    task: Option<usize>,
) -> Result<NodeId> {
    let (w, b) = heads.head_for(task)?;
    let lin = tape.matmul(emb, w)?;
    tape.add_row_vec(lin, b)
}

/// A frozen deep copy of the extractor, taken at a task boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorSnapshot {
    params: ExtractorParams,
}

impl ExtractorSnapshot {
    pub fn take(params: &ExtractorParams) -> Self {
        ExtractorSnapshot {
            params: params.clone(),
        }
    }

    pub fn params(&self) -> &ExtractorParams {
        &self.params
    }

    /// Detached embeddings from the frozen extractor.
    pub fn embed(&self, batch: &DenseMatrix) -> Result<DenseMatrix> {
        self.params.embed_plain(batch)
    }
}

/// Trainable state: extractor plus head(s).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub extractor: ExtractorParams,
    pub head: HeadParams,
}
