//! Dataset ingestion and task-stream construction.
//!
//! A [`TaskStream`] is an ordered list of per-task train/test splits plus
//! the scenario tag that tells the trainer how to size heads and how to
//! evaluate. Builders cover the split protocol (disjoint label pairs), the
//! permuted and rotated protocols (per-task pixel transforms), and a
//! Gaussian-blob generator for fast tests.

pub mod digits;
pub mod idx;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A labeled sample with its task identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Input features; pixels are scaled to [0, 1].
    pub input: Vec<f64>,
    pub label: usize,
    pub task_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    ClassIncremental,
    TaskIncremental,
    DomainIncremental,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::ClassIncremental => "class-il",
            Scenario::TaskIncremental => "task-il",
            Scenario::DomainIncremental => "domain-il",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "class-il" => Ok(Scenario::ClassIncremental),
            "task-il" => Ok(Scenario::TaskIncremental),
            "domain-il" => Ok(Scenario::DomainIncremental),
            other => Err(Error::config(format!(
                "unknown scenario '{}' (expected class-il, task-il or domain-il)",
                other
            ))),
        }
    }

    /// Single-head scenarios share one classifier across tasks.
    pub fn single_head(&self) -> bool {
        !matches!(self, Scenario::TaskIncremental)
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One task's data and bookkeeping.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    /// Original (source) labels covered by this task.
    pub classes: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskManifest {
    pub task: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub classes: Vec<usize>,
    pub transform: String,
}

/// Everything needed to reconstruct a stream bit-exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamManifest {
    pub dataset: String,
    pub scenario: Scenario,
    pub seed: u64,
    pub input_width: usize,
    pub class_count: usize,
    pub classes_per_task: usize,
    pub tasks: Vec<TaskManifest>,
}

/// An ordered sequence of per-task datasets, presented once.
#[derive(Debug, Clone)]
pub struct TaskStream {
    pub tasks: Vec<TaskData>,
    pub scenario: Scenario,
    /// Number of distinct labels a single shared head must cover.
    pub class_count: usize,
    /// Label-space width of one task (head width in task-incremental runs).
    pub classes_per_task: usize,
    pub input_width: usize,
    pub manifest: StreamManifest,
}

impl TaskStream {
    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    /// Head width for this stream's scenario.
    pub fn head_width(&self) -> usize {
        if self.scenario.single_head() {
            self.class_count
        } else {
            self.classes_per_task
        }
    }
}

pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; the log argument is clamped away from zero.
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// `k` distinct indices drawn uniformly from `0..n` (partial Fisher-Yates).
pub(crate) fn sample_indices(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    debug_assert!(k <= n);
    let mut pool: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
        out.push(pool[i]);
    }
    out
}

fn random_permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}

/// Rotate an h x w image by `theta_deg` about its center, bilinear
/// interpolation, zero fill outside the source frame.
pub fn rotate_image(src: &[f64], height: usize, width: usize, theta_deg: f64) -> Vec<f64> {
    let theta = theta_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cy = (height as f64 - 1.0) / 2.0;
    let cx = (width as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; height * width];
    for r in 0..height {
        let dy = r as f64 - cy;
        for c in 0..width {
            let dx = c as f64 - cx;
            // Inverse map: where does this output pixel come from?
            let sx = cx + cos * dx + sin * dy;
            let sy = cy - sin * dx + cos * dy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let mut acc = 0.0;
            for (oy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                for (ox, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                    let px = x0 + ox;
                    let py = y0 + oy;
                    if px >= 0.0 && px < width as f64 && py >= 0.0 && py < height as f64 {
                        acc += wy * wx * src[py as usize * width + px as usize];
                    }
                }
            }
            out[r * width + c] = acc;
        }
    }
    out
}

/// The default split used by the 10-digit benchmarks: 0/1, 2/3, ... 8/9.
pub fn default_digit_pairs() -> Vec<(usize, usize)> {
    (0..5).map(|k| (2 * k, 2 * k + 1)).collect()
}

/// Partition a labeled corpus into one task per label pair, in order.
///
/// Class-incremental tasks keep their source labels; task-incremental
/// tasks renumber labels within each pair to 0/1.
pub fn build_split(
    train: &[Example],
    test: &[Example],
    pairs: &[(usize, usize)],
    scenario: Scenario,
) -> Result<TaskStream> {
    if scenario == Scenario::DomainIncremental {
        return Err(Error::config(
            "split streams are class-il or task-il; labels differ across tasks",
        ));
    }
    if pairs.is_empty() {
        return Err(Error::config("split needs at least one label pair"));
    }
    let mut owner = std::collections::HashMap::new();
    for (k, &(a, b)) in pairs.iter().enumerate() {
        if a == b {
            return Err(Error::config(format!("pair {} repeats label {}", k, a)));
        }
        for label in [a, b] {
            if owner.insert(label, k).is_some() {
                return Err(Error::config(format!(
                    "label {} appears in more than one pair",
                    label
                )));
            }
        }
    }
    for ex in train.iter().chain(test) {
        if !owner.contains_key(&ex.label) {
            return Err(Error::config(format!(
                "label {} in data is not covered by any pair",
                ex.label
            )));
        }
    }

    let input_width = train
        .first()
        .or_else(|| test.first())
        .map(|e| e.input.len())
        .ok_or_else(|| Error::config("split: empty source data"))?;

    let mut tasks: Vec<TaskData> = pairs
        .iter()
        .map(|&(a, b)| TaskData {
            train: Vec::new(),
            test: Vec::new(),
            classes: vec![a, b],
        })
        .collect();

    let relabel = |label: usize, pair: &(usize, usize)| -> usize {
        match scenario {
            Scenario::TaskIncremental => {
                if label == pair.0 {
                    0
                } else {
                    1
                }
            }
            _ => label,
        }
    };
    for ex in train {
        let k = owner[&ex.label];
        tasks[k].train.push(Example {
            input: ex.input.clone(),
            label: relabel(ex.label, &pairs[k]),
            task_id: k,
        });
    }
    for ex in test {
        let k = owner[&ex.label];
        tasks[k].test.push(Example {
            input: ex.input.clone(),
            label: relabel(ex.label, &pairs[k]),
            task_id: k,
        });
    }

    let class_count = pairs.len() * 2;
    let manifest = StreamManifest {
        dataset: "split".into(),
        scenario,
        seed: 0,
        input_width,
        class_count,
        classes_per_task: 2,
        tasks: tasks
            .iter()
            .enumerate()
            .map(|(k, t)| TaskManifest {
                task: k,
                train_size: t.train.len(),
                test_size: t.test.len(),
                classes: t.classes.clone(),
                transform: "identity".into(),
            })
            .collect(),
    };
    Ok(TaskStream {
        tasks,
        scenario,
        class_count,
        classes_per_task: 2,
        input_width,
        manifest,
    })
}

/// Options shared by the permuted and rotated stream builders.
#[derive(Debug, Clone)]
pub struct TransformStreamOptions {
    pub task_count: usize,
    pub train_per_task: usize,
    pub test_per_task: usize,
    /// Use the identity transform for task 0.
    pub identity_first: bool,
    pub seed: u64,
}

impl Default for TransformStreamOptions {
    fn default() -> Self {
        TransformStreamOptions {
            task_count: 20,
            train_per_task: 1000,
            test_per_task: 1000,
            identity_first: true,
            seed: 0,
        }
    }
}

fn check_transform_sizes(
    train: &[Example],
    test: &[Example],
    opts: &TransformStreamOptions,
) -> Result<usize> {
    if opts.train_per_task > train.len() {
        return Err(Error::config(format!(
            "train_per_task {} exceeds source size {}",
            opts.train_per_task,
            train.len()
        )));
    }
    if opts.test_per_task > test.len() {
        return Err(Error::config(format!(
            "test_per_task {} exceeds source size {}",
            opts.test_per_task,
            test.len()
        )));
    }
    train
        .first()
        .map(|e| e.input.len())
        .ok_or_else(|| Error::config("empty source data"))
}

fn domain_manifest(
    dataset: &str,
    seed: u64,
    input_width: usize,
    class_count: usize,
    tasks: &[TaskData],
    transforms: &[String],
) -> StreamManifest {
    StreamManifest {
        dataset: dataset.into(),
        scenario: Scenario::DomainIncremental,
        seed,
        input_width,
        class_count,
        classes_per_task: class_count,
        tasks: tasks
            .iter()
            .enumerate()
            .map(|(k, t)| TaskManifest {
                task: k,
                train_size: t.train.len(),
                test_size: t.test.len(),
                classes: t.classes.clone(),
                transform: transforms[k].clone(),
            })
            .collect(),
    }
}

/// Domain-incremental stream where task k applies a random pixel
/// permutation to a fresh sample of source examples.
pub fn build_permuted(
    train: &[Example],
    test: &[Example],
    opts: &TransformStreamOptions,
) -> Result<TaskStream> {
    let input_width = check_transform_sizes(train, test, opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let class_count = class_count_of(train);

    let mut tasks = Vec::with_capacity(opts.task_count);
    let mut transforms = Vec::with_capacity(opts.task_count);
    for k in 0..opts.task_count {
        let identity = k == 0 && opts.identity_first;
        let perm = if identity {
            (0..input_width).collect::<Vec<_>>()
        } else {
            random_permutation(input_width, &mut rng)
        };
        let apply = |ex: &Example| Example {
            input: perm.iter().map(|&p| ex.input[p]).collect(),
            label: ex.label,
            task_id: k,
        };
        let train_idx = sample_indices(train.len(), opts.train_per_task, &mut rng);
        let test_idx = sample_indices(test.len(), opts.test_per_task, &mut rng);
        tasks.push(TaskData {
            train: train_idx.iter().map(|&i| apply(&train[i])).collect(),
            test: test_idx.iter().map(|&i| apply(&test[i])).collect(),
            classes: (0..class_count).collect(),
        });
        transforms.push(if identity {
            "permutation:identity".into()
        } else {
            format!("permutation:seeded(task={})", k)
        });
    }
    let manifest = domain_manifest(
        "permuted",
        opts.seed,
        input_width,
        class_count,
        &tasks,
        &transforms,
    );
    Ok(TaskStream {
        tasks,
        scenario: Scenario::DomainIncremental,
        class_count,
        classes_per_task: class_count,
        input_width,
        manifest,
    })
}

/// Domain-incremental stream where task k rotates a fresh sample of source
/// images by an angle drawn uniformly from [0, 180) degrees.
pub fn build_rotated(
    train: &[Example],
    test: &[Example],
    height: usize,
    width: usize,
    opts: &TransformStreamOptions,
) -> Result<TaskStream> {
    let input_width = check_transform_sizes(train, test, opts)?;
    if height * width != input_width {
        return Err(Error::config(format!(
            "rotated: {}x{} does not match input width {}",
            height, width, input_width
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let class_count = class_count_of(train);

    let mut tasks = Vec::with_capacity(opts.task_count);
    let mut transforms = Vec::with_capacity(opts.task_count);
    for k in 0..opts.task_count {
        let theta = if k == 0 && opts.identity_first {
            0.0
        } else {
            rng.gen::<f64>() * 180.0
        };
        let apply = |ex: &Example| Example {
            input: rotate_image(&ex.input, height, width, theta),
            label: ex.label,
            task_id: k,
        };
        let train_idx = sample_indices(train.len(), opts.train_per_task, &mut rng);
        let test_idx = sample_indices(test.len(), opts.test_per_task, &mut rng);
        tasks.push(TaskData {
            train: train_idx.iter().map(|&i| apply(&train[i])).collect(),
            test: test_idx.iter().map(|&i| apply(&test[i])).collect(),
            classes: (0..class_count).collect(),
        });
        transforms.push(format!("rotation:{:.6}deg", theta));
    }
    let manifest = domain_manifest(
        "rotated",
        opts.seed,
        input_width,
        class_count,
        &tasks,
        &transforms,
    );
    Ok(TaskStream {
        tasks,
        scenario: Scenario::DomainIncremental,
        class_count,
        classes_per_task: class_count,
        input_width,
        manifest,
    })
}

fn class_count_of(examples: &[Example]) -> usize {
    examples.iter().map(|e| e.label).max().map_or(0, |m| m + 1)
}

/// Gaussian-blob stream generator for fast tests.
#[derive(Debug, Clone)]
pub struct SyntheticOptions {
    pub task_count: usize,
    pub classes_per_task: usize,
    /// Training examples per class per task.
    pub per_class: usize,
    /// Test examples per class per task.
    pub test_per_class: usize,
    pub width: usize,
    /// Domain-incremental runs translate class means by this much per task.
    pub shift: f64,
    pub scenario: Scenario,
    pub seed: u64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        SyntheticOptions {
            task_count: 5,
            classes_per_task: 2,
            per_class: 100,
            test_per_class: 50,
            width: 8,
            shift: 0.0,
            scenario: Scenario::ClassIncremental,
            seed: 0,
        }
    }
}

/// Build a blob stream: one Gaussian cluster per class, unit noise, class
/// means drawn uniformly from [-3, 3]^width.
pub fn build_synthetic(opts: &SyntheticOptions) -> Result<TaskStream> {
    if opts.width < 2 {
        return Err(Error::config("synthetic width must be at least 2"));
    }
    if opts.task_count == 0 || opts.classes_per_task == 0 {
        return Err(Error::config("synthetic needs tasks and classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let single_distribution = opts.scenario == Scenario::DomainIncremental;
    let global_classes = if single_distribution {
        opts.classes_per_task
    } else {
        opts.task_count * opts.classes_per_task
    };
    let means: Vec<Vec<f64>> = (0..global_classes)
        .map(|_| (0..opts.width).map(|_| rng.gen_range(-3.0..3.0)).collect())
        .collect();

    let mut tasks = Vec::with_capacity(opts.task_count);
    let mut transforms = Vec::with_capacity(opts.task_count);
    for k in 0..opts.task_count {
        let class_ids: Vec<usize> = if single_distribution {
            (0..opts.classes_per_task).collect()
        } else {
            (k * opts.classes_per_task..(k + 1) * opts.classes_per_task).collect()
        };
        let offset = if single_distribution {
            opts.shift * k as f64
        } else {
            0.0
        };
        let gen_set = |count: usize, rng: &mut ChaCha8Rng| -> Vec<Example> {
            let mut out = Vec::with_capacity(count * class_ids.len());
            for (within, &class) in class_ids.iter().enumerate() {
                let label = match opts.scenario {
                    Scenario::TaskIncremental => within,
                    _ => class,
                };
                for _ in 0..count {
                    let input = means[class]
                        .iter()
                        .map(|m| m + offset + standard_normal(rng))
                        .collect();
                    out.push(Example {
                        input,
                        label,
                        task_id: k,
                    });
                }
            }
            out
        };
        let train = gen_set(opts.per_class, &mut rng);
        let test = gen_set(opts.test_per_class, &mut rng);
        tasks.push(TaskData {
            train,
            test,
            classes: class_ids,
        });
        transforms.push(format!("blobs(shift={})", offset));
    }

    let class_count = global_classes;
    let manifest = StreamManifest {
        dataset: "synthetic".into(),
        scenario: opts.scenario,
        seed: opts.seed,
        input_width: opts.width,
        class_count,
        classes_per_task: opts.classes_per_task,
        tasks: tasks
            .iter()
            .enumerate()
            .map(|(k, t)| TaskManifest {
                task: k,
                train_size: t.train.len(),
                test_size: t.test.len(),
                classes: t.classes.clone(),
                transform: transforms[k].clone(),
            })
            .collect(),
    };
    Ok(TaskStream {
        tasks,
        scenario: opts.scenario,
        class_count,
        classes_per_task: opts.classes_per_task,
        input_width: opts.width,
        manifest,
    })
}
