//! Average accuracy and forgetting, computed from the accuracy matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower-triangular record: `row(i)[j]` is the test accuracy on task j
/// after training through task i (0-based). A joint-training run stores a
/// single row covering every task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::state("accuracy entries must lie in [0, 1]"));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, after_task: usize) -> Result<&[f64]> {
        self.rows
            .get(after_task)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::state(format!("row {} not populated", after_task)))
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Mean accuracy over all tasks evaluated after `after_task`.
    pub fn average_accuracy(&self, after_task: usize) -> Result<f64> {
        let row = self.row(after_task)?;
        if row.is_empty() {
            return Err(Error::state("empty accuracy row"));
        }
        Ok(row.iter().sum::<f64>() / row.len() as f64)
    }

    /// Mean over earlier tasks of the drop from their best historical
    /// accuracy to their accuracy after `after_task`. Needs at least two
    /// populated rows; may be negative when later training helps.
    pub fn forgetting(&self, after_task: usize) -> Result<f64> {
        if after_task < 1 {
            return Err(Error::state(
                "forgetting is undefined before the second task",
            ));
        }
        let last = self.row(after_task)?;
        let mut total = 0.0;
        let mut count = 0usize;
        for k in 0..after_task.min(last.len()) {
            let mut best = f64::NEG_INFINITY;
            for i in k..after_task {
                let row = self.row(i)?;
                if k < row.len() {
                    best = best.max(row[k]);
                }
            }
            if best.is_finite() {
                total += best - last[k];
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::state("no earlier tasks to measure forgetting on"));
        }
        Ok(total / count as f64)
    }

    pub fn final_average_accuracy(&self) -> Result<f64> {
        if self.rows.is_empty() {
            return Err(Error::state("empty accuracy matrix"));
        }
        self.average_accuracy(self.rows.len() - 1)
    }

    /// Final forgetting, or `None` for single-row (e.g. joint) runs.
    pub fn final_forgetting(&self) -> Option<f64> {
        if self.rows.len() < 2 {
            return None;
        }
        self.forgetting(self.rows.len() - 1).ok()
    }

    /// Average-accuracy trajectory: one value per populated row.
    pub fn average_accuracy_curve(&self) -> Vec<f64> {
        (0..self.rows.len())
            .map(|t| self.average_accuracy(t).expect("populated row"))
            .collect()
    }

    /// Column view: for each task, its accuracy after each later row.
    pub fn per_task_curves(&self) -> Vec<Vec<f64>> {
        let width = self.rows.iter().map(Vec::len).max().unwrap_or(0);
        (0..width)
            .map(|task| {
                self.rows
                    .iter()
                    .filter_map(|row| row.get(task).copied())
                    .collect()
            })
            .collect()
    }

    /// CSV with a header row; later columns are blank for rows that had not
    /// seen those tasks yet. Values round-trip exactly.
    pub fn to_csv(&self) -> String {
        let width = self.rows.iter().map(Vec::len).max().unwrap_or(0);
        let mut out = String::from("after_task");
        for j in 0..width {
            out.push_str(&format!(",task_{}", j));
        }
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str(&i.to_string());
            for j in 0..width {
                out.push(',');
                if let Some(v) = row.get(j) {
                    out.push_str(&format!("{:?}", v));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let _after = fields
                .next()
                .ok_or_else(|| Error::data(format!("R.csv line {}: empty", lineno + 1)))?;
            let mut row = Vec::new();
            for field in fields {
                if field.is_empty() {
                    break;
                }
                row.push(
                    field
                        .parse::<f64>()
                        .map_err(|e| Error::data(format!("R.csv line {}: {}", lineno + 1, e)))?,
                );
            }
            rows.push(row);
        }
        Ok(AccuracyMatrix { rows })
    }
}

/// Per-seed result summary written next to the accuracy matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub dataset: String,
    pub scenario: crate::data::Scenario,
    pub method: String,
    pub seed: u64,
    pub buffer_capacity: usize,
    pub loss: crate::losses::LossConfig,
    pub task_count: usize,
    pub final_average_accuracy: f64,
    pub final_forgetting: Option<f64>,
    pub average_accuracy_curve: Vec<f64>,
    pub per_task_curves: Vec<Vec<f64>>,
}
