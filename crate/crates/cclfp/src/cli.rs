//! Operator entry points behind the `run`, `compare` and `gradcheck`
//! subcommands: build streams, run seeds, write artifacts, aggregate and
//! compare finished runs.
//!
//! Every seed writes `R.csv`, `summary.json`, `steps.csv` and
//! `manifest.json` into its own directory; the manifest embeds the fully
//! resolved configuration and the stream manifest, which is enough to
//! reproduce the run bit-exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{Dataset, ExperimentConfig};
use crate::data::{
    build_permuted, build_rotated, build_split, build_synthetic, default_digit_pairs,
    idx::load_mnist_dir, Scenario, SyntheticOptions, TaskStream, TransformStreamOptions,
};
use crate::error::{Error, Result};
use crate::metrics::RunSummary;
use crate::trainer::{run_scenario, RunOutcome, StepRecord};

/// Source data loaded once per invocation (the IDX pair for the MNIST-layout
/// datasets; nothing for synthetic streams).
pub enum SourceData {
    Idx {
        train: Vec<crate::data::Example>,
        test: Vec<crate::data::Example>,
        height: usize,
        width: usize,
    },
    None,
}

pub fn load_source(config: &ExperimentConfig) -> Result<SourceData> {
    if !config.dataset.needs_data_dir() {
        return Ok(SourceData::None);
    }
    let dir = config
        .data_dir
        .as_ref()
        .ok_or_else(|| Error::config("data_dir is required for this dataset"))?;
    let (train, test) = load_mnist_dir(dir)?;
    Ok(SourceData::Idx {
        train: train.examples,
        test: test.examples,
        height: train.height,
        width: train.width,
    })
}

/// Build the task stream for one seed.
pub fn build_stream(
    config: &ExperimentConfig,
    source: &SourceData,
    seed: u64,
) -> Result<TaskStream> {
    match (config.dataset, source) {
        (Dataset::Synthetic, _) => build_synthetic(&SyntheticOptions {
            task_count: config.synthetic.tasks,
            classes_per_task: config.synthetic.classes_per_task,
            per_class: config.synthetic.per_class,
            test_per_class: config.synthetic.test_per_class,
            width: config.synthetic.width,
            shift: config.synthetic.shift,
            scenario: config.scenario,
            seed,
        }),
        (Dataset::SplitMnist, SourceData::Idx { train, test, .. }) => {
            let mut stream = build_split(train, test, &default_digit_pairs(), config.scenario)?;
            stream.manifest.dataset = config.dataset.as_str().into();
            stream.manifest.seed = seed;
            Ok(stream)
        }
        (Dataset::PermutedMnist, SourceData::Idx { train, test, .. }) => {
            let opts = TransformStreamOptions {
                task_count: config.transform.tasks,
                train_per_task: config.transform.per_task,
                test_per_task: config.transform.test_per_task,
                identity_first: config.transform.identity_first,
                seed,
            };
            let mut stream = build_permuted(train, test, &opts)?;
            stream.manifest.dataset = config.dataset.as_str().into();
            Ok(stream)
        }
        (
            Dataset::RotatedMnist,
            SourceData::Idx {
                train,
                test,
                height,
                width,
            },
        ) => {
            let opts = TransformStreamOptions {
                task_count: config.transform.tasks,
                train_per_task: config.transform.per_task,
                test_per_task: config.transform.test_per_task,
                identity_first: config.transform.identity_first,
                seed,
            };
            let mut stream = build_rotated(train, test, *height, *width, &opts)?;
            stream.manifest.dataset = config.dataset.as_str().into();
            Ok(stream)
        }
        _ => Err(Error::config("dataset needs IDX source data")),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub stream: crate::data::StreamManifest,
}

/// Aggregate statistics over the seeds of one run directory.
#[derive(Debug, Serialize, Deserialize)]
pub struct Aggregate {
    pub dataset: String,
    pub scenario: Scenario,
    pub method: String,
    pub seeds: Vec<u64>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub forgetting_mean: Option<f64>,
    pub forgetting_std: Option<f64>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn steps_csv(steps: &[StepRecord]) -> String {
    let mut out = String::from("task,step,replay,contrastive,supervised,total\n");
    for s in steps {
        out.push_str(&format!(
            "{},{},{:?},{:?},{:?},{:?}\n",
            s.task, s.step, s.replay, s.contrastive, s.supervised, s.total
        ));
    }
    out
}

fn summarize(config: &ExperimentConfig, seed: u64, outcome: &RunOutcome) -> Result<RunSummary> {
    Ok(RunSummary {
        dataset: config.dataset.as_str().into(),
        scenario: config.scenario,
        method: config.method.as_str().into(),
        seed,
        buffer_capacity: config.buffer_capacity,
        loss: config.method.effective_loss(&config.loss),
        task_count: outcome
            .accuracy
            .rows()
            .iter()
            .map(Vec::len)
            .max()
            .unwrap_or(0),
        final_average_accuracy: outcome.accuracy.final_average_accuracy()?,
        final_forgetting: outcome.accuracy.final_forgetting(),
        average_accuracy_curve: outcome.accuracy.average_accuracy_curve(),
        per_task_curves: outcome.accuracy.per_task_curves(),
    })
}

/// Run every configured seed, writing artifacts under `config.out_dir`.
/// Returns the per-seed summaries (in seed order) plus the aggregate.
pub fn cmd_run(config: &ExperimentConfig) -> Result<(Vec<RunSummary>, Aggregate)> {
    config.validate()?;
    let source = load_source(config)?;
    std::fs::create_dir_all(&config.out_dir)?;

    let mut summaries = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let stream = build_stream(config, &source, seed)?;
        let outcome = run_scenario(&stream, &config.trainer_config(seed))?;
        let summary = summarize(config, seed, &outcome)?;

        let seed_dir = config.out_dir.join(format!("seed_{}", seed));
        std::fs::create_dir_all(&seed_dir)?;
        std::fs::write(seed_dir.join("R.csv"), outcome.accuracy.to_csv())?;
        std::fs::write(
            seed_dir.join("summary.json"),
            serde_json::to_string_pretty(&summary)?,
        )?;
        if config.write_steps {
            std::fs::write(seed_dir.join("steps.csv"), steps_csv(&outcome.steps))?;
        }
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config: config.clone(),
            stream: stream.manifest.clone(),
        };
        std::fs::write(
            seed_dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        summaries.push(summary);
    }

    let accs: Vec<f64> = summaries.iter().map(|s| s.final_average_accuracy).collect();
    let (accuracy_mean, accuracy_std) = mean_std(&accs);
    let forgettings: Vec<f64> = summaries
        .iter()
        .filter_map(|s| s.final_forgetting)
        .collect();
    let (forgetting_mean, forgetting_std) = if forgettings.len() == summaries.len() {
        let (m, s) = mean_std(&forgettings);
        (Some(m), Some(s))
    } else {
        (None, None)
    };
    let aggregate = Aggregate {
        dataset: config.dataset.as_str().into(),
        scenario: config.scenario,
        method: config.method.as_str().into(),
        seeds: config.seeds.clone(),
        accuracy_mean,
        accuracy_std,
        forgetting_mean,
        forgetting_std,
    };
    std::fs::write(
        config.out_dir.join("aggregate.json"),
        serde_json::to_string_pretty(&aggregate)?,
    )?;
    Ok((summaries, aggregate))
}

fn read_run_dir(dir: &Path) -> Result<Vec<RunSummary>> {
    let mut summaries = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::data(format!("{}: {}", dir.display(), e)))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("seed_"))
        })
        .collect();
    entries.sort();
    for entry in entries {
        let path = entry.join("summary.json");
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::data(format!("{}: {}", path.display(), e)))?;
        summaries.push(serde_json::from_str(&text)?);
    }
    if summaries.is_empty() {
        return Err(Error::data(format!(
            "{}: no seed_*/summary.json found",
            dir.display()
        )));
    }
    Ok(summaries)
}

/// Comparison table over finished run directories: one row per directory,
/// mean ± std of average accuracy and forgetting across its seeds. All
/// directories must share a dataset and scenario.
pub fn cmd_compare(dirs: &[PathBuf]) -> Result<String> {
    if dirs.is_empty() {
        return Err(Error::config("compare needs at least one run directory"));
    }
    let mut rows = Vec::new();
    let mut key: Option<(String, Scenario)> = None;
    for dir in dirs {
        let summaries = read_run_dir(dir)?;
        let first = &summaries[0];
        let cell = (first.dataset.clone(), first.scenario);
        for s in &summaries {
            if (s.dataset.clone(), s.scenario) != cell {
                return Err(Error::config(format!(
                    "{}: mixed dataset/scenario inside one run directory",
                    dir.display()
                )));
            }
        }
        match &key {
            None => key = Some(cell),
            Some(k) if *k != cell => {
                return Err(Error::config(format!(
                    "cannot compare across cells: {} is {}/{} but earlier runs are {}/{}",
                    dir.display(),
                    cell.0,
                    cell.1,
                    k.0,
                    k.1
                )));
            }
            _ => {}
        }
        rows.push((dir.clone(), summaries));
    }

    let (dataset, scenario) = key.expect("at least one dir");
    let mut out = format!("{} / {} (mean ± std over seeds)\n", dataset, scenario);
    out.push_str(&format!(
        "{:<28} {:>6} {:>6} {:>6} {:>6} {:>7} {:>18} {:>18}\n",
        "run", "method", "w", "alpha", "beta", "buffer", "avg accuracy", "forgetting"
    ));
    for (dir, summaries) in &rows {
        let s0 = &summaries[0];
        let accs: Vec<f64> = summaries.iter().map(|s| s.final_average_accuracy).collect();
        let (am, astd) = mean_std(&accs);
        let fgt: Vec<f64> = summaries
            .iter()
            .filter_map(|s| s.final_forgetting)
            .collect();
        let fgt_text = if fgt.len() == summaries.len() {
            let (fm, fs) = mean_std(&fgt);
            format!("{:7.2} ± {:5.2}", 100.0 * fm, 100.0 * fs)
        } else {
            "--".into()
        };
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("run")
            .to_string();
        out.push_str(&format!(
            "{:<28} {:>6} {:>6.2} {:>6.2} {:>6.2} {:>7} {:>9.2} ± {:5.2} {:>18}\n",
            name,
            s0.method,
            s0.loss.w,
            s0.loss.alpha,
            s0.loss.beta,
            s0.buffer_capacity,
            100.0 * am,
            100.0 * astd,
            fgt_text
        ));
    }
    Ok(out)
}

/// Run the finite-difference suite; the error carries the rendered report
/// so a tolerance breach surfaces every failing op and its max error.
pub fn cmd_gradcheck(seeds: usize) -> Result<String> {
    let report = crate::gradcheck::run_suite(seeds);
    let rendered = report.render();
    if report.all_passed() {
        Ok(rendered)
    } else {
        Err(Error::Numerical(format!(
            "finite-difference suite failed\n{}",
            rendered
        )))
    }
}
