//! Experiment configuration: a plain `key = value` text file, overridable
//! by command-line flags. The parsed, fully resolved form is serialized
//! into every run's manifest so a run directory doubles as a rerun input.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::Scenario;
use crate::error::{Error, Result};
use crate::losses::{LossConfig, DEFAULT_DISTANCE_EPS};
use crate::trainer::Method;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dataset {
    SplitMnist,
    PermutedMnist,
    RotatedMnist,
    Synthetic,
}

impl Dataset {
    pub fn as_str(&self) -> &'static str {
        match self {
            Dataset::SplitMnist => "split-mnist",
            Dataset::PermutedMnist => "permuted-mnist",
            Dataset::RotatedMnist => "rotated-mnist",
            Dataset::Synthetic => "synthetic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "split-mnist" => Ok(Dataset::SplitMnist),
            "permuted-mnist" => Ok(Dataset::PermutedMnist),
            "rotated-mnist" => Ok(Dataset::RotatedMnist),
            "synthetic" => Ok(Dataset::Synthetic),
            other => Err(Error::config(format!(
                "unknown dataset '{}' (expected split-mnist, permuted-mnist, rotated-mnist or synthetic)",
                other
            ))),
        }
    }

    pub fn needs_data_dir(&self) -> bool {
        !matches!(self, Dataset::Synthetic)
    }

    /// The scenarios each dataset supports.
    pub fn allowed_scenarios(&self) -> &'static [Scenario] {
        match self {
            Dataset::SplitMnist => &[Scenario::ClassIncremental, Scenario::TaskIncremental],
            Dataset::PermutedMnist | Dataset::RotatedMnist => &[Scenario::DomainIncremental],
            Dataset::Synthetic => &[
                Scenario::ClassIncremental,
                Scenario::TaskIncremental,
                Scenario::DomainIncremental,
            ],
        }
    }
}

impl std::fmt::Display for Dataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Stream-construction knobs for the permuted/rotated protocols.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformConfig {
    pub tasks: usize,
    pub per_task: usize,
    pub test_per_task: usize,
    pub identity_first: bool,
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig {
            tasks: 20,
            per_task: 1000,
            test_per_task: 1000,
            identity_first: true,
        }
    }
}

/// Stream-construction knobs for the synthetic blob generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub tasks: usize,
    pub classes_per_task: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub width: usize,
    pub shift: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            tasks: 5,
            classes_per_task: 2,
            per_class: 100,
            test_per_class: 50,
            width: 8,
            shift: 1.0,
        }
    }
}

/// A fully resolved experiment: dataset, scenario, method, seeds and every
/// hyperparameter the trainer consumes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: Dataset,
    pub scenario: Scenario,
    pub method: Method,
    pub seeds: Vec<u64>,
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub loss: LossConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub memory_batch_size: usize,
    pub buffer_capacity: usize,
    pub hidden_widths: Vec<usize>,
    pub mask_unseen_classes: bool,
    pub transform: TransformConfig,
    pub synthetic: SyntheticConfig,
    pub write_steps: bool,
}

/// Scenario-dependent defaults: temperatures 0.1 everywhere except the
/// domain-incremental contrastive temperature, which is 1. The component
/// weights are the grid picks (w from {0.1, 0.3, 0.5}, alpha and beta from
/// {0.01, 0.1, 0.5, 1}) that won a one-off search per scenario, frozen.
pub fn default_loss(scenario: Scenario) -> LossConfig {
    let (w, alpha, beta, tau) = match scenario {
        Scenario::ClassIncremental => (0.5, 1.0, 0.1, 0.1),
        Scenario::TaskIncremental => (0.1, 1.0, 0.1, 0.1),
        Scenario::DomainIncremental => (0.3, 0.5, 1.0, 1.0),
    };
    LossConfig {
        w,
        eta: 0.1,
        tau,
        alpha,
        beta,
        distance_eps: DEFAULT_DISTANCE_EPS,
    }
}

impl ExperimentConfig {
    pub fn defaults(dataset: Dataset, scenario: Scenario, method: Method) -> Self {
        ExperimentConfig {
            dataset,
            scenario,
            method,
            seeds: vec![0],
            data_dir: None,
            out_dir: PathBuf::from("runs"),
            loss: default_loss(scenario),
            learning_rate: 0.1,
            batch_size: 10,
            memory_batch_size: 10,
            buffer_capacity: 200,
            hidden_widths: vec![100, 100],
            mask_unseen_classes: false,
            transform: TransformConfig::default(),
            synthetic: SyntheticConfig::default(),
            write_steps: true,
        }
    }

    /// Parse the key-value config format. Unknown keys and malformed values
    /// are config errors carrying the line number.
    pub fn parse(text: &str) -> Result<Self> {
        let mut dataset = None;
        let mut scenario = None;
        let mut method = None;
        let mut pairs: Vec<(usize, String, String)> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected 'key = value'", lineno)))?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            match key.as_str() {
                "dataset" => dataset = Some((lineno, value)),
                "scenario" => scenario = Some((lineno, value)),
                "method" => method = Some((lineno, value)),
                _ => pairs.push((lineno, key, value)),
            }
        }

        let anchored = |lineno: usize, e: Error| Error::config(format!("line {}: {}", lineno, e));
        let (dl, dv) = dataset.ok_or_else(|| Error::config("missing required key 'dataset'"))?;
        let dataset = Dataset::parse(&dv).map_err(|e| anchored(dl, e))?;
        let (sl, sv) = scenario.ok_or_else(|| Error::config("missing required key 'scenario'"))?;
        let scenario = Scenario::parse(&sv).map_err(|e| anchored(sl, e))?;
        let (ml, mv) = method.ok_or_else(|| Error::config("missing required key 'method'"))?;
        let method = Method::parse(&mv).map_err(|e| anchored(ml, e))?;

        let mut config = ExperimentConfig::defaults(dataset, scenario, method);
        for (lineno, key, value) in pairs {
            config
                .apply_key(&key, &value)
                .map_err(|e| anchored(lineno, e))?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Apply one key-value assignment (config file line or CLI override).
    pub fn apply_key(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| Error::config(format!("{} = {}: {}", key, value, e)))
        }
        fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>>
        where
            T::Err: std::fmt::Display,
        {
            value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| num(key, s))
                .collect()
        }
        match key {
            "seeds" => self.seeds = list(key, value)?,
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "w" => self.loss.w = num(key, value)?,
            "eta" => self.loss.eta = num(key, value)?,
            "tau" => self.loss.tau = num(key, value)?,
            "alpha" => self.loss.alpha = num(key, value)?,
            "beta" => self.loss.beta = num(key, value)?,
            "distance_eps" => self.loss.distance_eps = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "memory_batch_size" => self.memory_batch_size = num(key, value)?,
            "buffer" => self.buffer_capacity = num(key, value)?,
            "hidden" => self.hidden_widths = list(key, value)?,
            "mask_unseen" => self.mask_unseen_classes = num(key, value)?,
            "tasks" => self.transform.tasks = num(key, value)?,
            "per_task" => self.transform.per_task = num(key, value)?,
            "test_per_task" => self.transform.test_per_task = num(key, value)?,
            "identity_first" => self.transform.identity_first = num(key, value)?,
            "synthetic_tasks" => self.synthetic.tasks = num(key, value)?,
            "synthetic_classes_per_task" => self.synthetic.classes_per_task = num(key, value)?,
            "synthetic_per_class" => self.synthetic.per_class = num(key, value)?,
            "synthetic_test_per_class" => self.synthetic.test_per_class = num(key, value)?,
            "synthetic_width" => self.synthetic.width = num(key, value)?,
            "synthetic_shift" => self.synthetic.shift = num(key, value)?,
            "write_steps" => self.write_steps = num(key, value)?,
            other => {
                return Err(Error::config(format!("unknown key '{}'", other)));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.dataset.allowed_scenarios().contains(&self.scenario) {
            return Err(Error::config(format!(
                "dataset {} does not support scenario {}; allowed: {}",
                self.dataset,
                self.scenario,
                self.dataset
                    .allowed_scenarios()
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.dataset.needs_data_dir() && self.data_dir.is_none() {
            return Err(Error::config(format!(
                "dataset {} needs data_dir (IDX files are not downloaded automatically)",
                self.dataset
            )));
        }
        self.loss.validate()?;
        self.trainer_config(0).validate()
    }

    /// The trainer view of this experiment for one seed.
    pub fn trainer_config(&self, seed: u64) -> crate::trainer::TrainConfig {
        crate::trainer::TrainConfig {
            method: self.method,
            loss: self.loss,
            batch_size: self.batch_size,
            memory_batch_size: self.memory_batch_size,
            learning_rate: self.learning_rate,
            buffer_capacity: self.buffer_capacity,
            seed,
            hidden_widths: self.hidden_widths.clone(),
            mask_unseen_classes: self.mask_unseen_classes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "dataset = synthetic\nscenario = class-il\nmethod = er\n";

    #[test]
    fn minimal_config_parses_with_defaults() {
        let config = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(config.dataset, Dataset::Synthetic);
        assert_eq!(config.batch_size, 10);
        assert_eq!(config.buffer_capacity, 200);
        assert_eq!(config.seeds, vec![0]);
        assert_eq!(config.loss.tau, 0.1);
    }

    #[test]
    fn domain_default_temperature_is_one() {
        let text = "dataset = synthetic\nscenario = domain-il\nmethod = ccl-fp+\n";
        let config = ExperimentConfig::parse(text).unwrap();
        assert_eq!(config.loss.tau, 1.0);
    }

    #[test]
    fn overrides_and_lists_parse() {
        let text = format!(
            "{MINIMAL}seeds = 3, 5, 8\nhidden = 32,16\nbuffer = 500\nw = 0.5\nwrite_steps = false\n"
        );
        let config = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(config.seeds, vec![3, 5, 8]);
        assert_eq!(config.hidden_widths, vec![32, 16]);
        assert_eq!(config.buffer_capacity, 500);
        assert_eq!(config.loss.w, 0.5);
        assert!(!config.write_steps);
    }

    #[test]
    fn unknown_key_is_line_anchored() {
        let text = format!("{MINIMAL}bogus = 1\n");
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("line 4"), "{err}");
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn malformed_value_is_line_anchored() {
        let text = format!("{MINIMAL}buffer = many\n");
        let err = ExperimentConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("line 4"), "{err}");
    }

    #[test]
    fn every_invalid_dataset_scenario_pair_is_rejected() {
        let all_datasets = [
            "split-mnist",
            "permuted-mnist",
            "rotated-mnist",
            "synthetic",
        ];
        let all_scenarios = ["class-il", "task-il", "domain-il"];
        for ds in all_datasets {
            for sc in all_scenarios {
                let text =
                    format!("dataset = {ds}\nscenario = {sc}\nmethod = er\ndata_dir = /tmp/x\n");
                let result = ExperimentConfig::parse(&text);
                let valid = match ds {
                    "split-mnist" => sc != "domain-il",
                    "permuted-mnist" | "rotated-mnist" => sc == "domain-il",
                    _ => true,
                };
                if valid {
                    assert!(result.is_ok(), "{ds}/{sc} should be valid: {result:?}");
                } else {
                    let err = result.unwrap_err().to_string();
                    assert!(
                        err.contains("does not support"),
                        "{ds}/{sc} error should name the pairing: {err}"
                    );
                }
            }
        }
    }

    #[test]
    fn mnist_datasets_require_data_dir() {
        let text = "dataset = split-mnist\nscenario = class-il\nmethod = er\n";
        let err = ExperimentConfig::parse(text).unwrap_err().to_string();
        assert!(err.contains("data_dir"), "{err}");
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text =
            "# a comment\n\ndataset = synthetic # trailing\nscenario = class-il\nmethod = er\n";
        assert!(ExperimentConfig::parse(text).is_ok());
    }
}
