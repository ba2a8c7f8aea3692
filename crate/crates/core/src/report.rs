//! Experiment reports: per-run rows, per-cell means, CSV and Markdown output.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::pipeline::{IterationTrace, Method};

/// One run of one method on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: String,
    pub method: Method,
    pub seed: u64,
    pub iterations: usize,
    pub initial_accuracy: Option<f64>,
    pub final_accuracy: Option<f64>,
}

/// Mean over seeds of every `(task, method, iterations)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub task: String,
    pub method: Method,
    pub iterations: usize,
    pub runs: usize,
    pub mean_initial: Option<f64>,
    pub mean_final: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

/// Mean of the present values, summed in order. `None` if any value is
/// missing, so a mean never silently covers fewer runs than it claims.
pub fn mean_of(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v?;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x}"))
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.1}", 100.0 * x))
}

impl ExperimentReport {
    pub fn new(rows: Vec<ReportRow>) -> Self {
        ExperimentReport { rows }
    }

    pub fn push(&mut self, row: ReportRow) {
        self.rows.push(row);
    }

    /// Cells in first-appearance order.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut keys: Vec<(&str, Method, usize)> = Vec::new();
        for r in &self.rows {
            let key = (r.task.as_str(), r.method, r.iterations);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        keys.into_iter()
            .map(|(task, method, iterations)| {
                let cell: Vec<&ReportRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.task == task && r.method == method && r.iterations == iterations)
                    .collect();
                Aggregate {
                    task: task.to_string(),
                    method,
                    iterations,
                    runs: cell.len(),
                    mean_initial: mean_of(cell.iter().map(|r| r.initial_accuracy)),
                    mean_final: mean_of(cell.iter().map(|r| r.final_accuracy)),
                }
            })
            .collect()
    }

    fn aggregate_for(&self, aggs: &[Aggregate], row: &ReportRow) -> Option<f64> {
        aggs.iter()
            .find(|a| a.task == row.task && a.method == row.method && a.iterations == row.iterations)
            .and_then(|a| a.mean_final)
    }

    /// One line per run. `mean_final_accuracy` repeats the cell mean on every
    /// row of the cell. Accuracies are fractions in shortest round-trip form;
    /// missing values are `-`.
    pub fn to_csv(&self) -> String {
        let aggs = self.aggregates();
        let mut out = String::from("task,method,seed,iterations,initial_accuracy,final_accuracy,mean_final_accuracy\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.task,
                r.method,
                r.seed,
                r.iterations,
                fmt_opt(r.initial_accuracy),
                fmt_opt(r.final_accuracy),
                fmt_opt(self.aggregate_for(&aggs, r)),
            );
        }
        out
    }

    /// Mean final accuracy in percent with tasks as columns and an `Avg`
    /// column. Rows follow the first appearance of each `(method, T)`.
    pub fn to_markdown(&self) -> String {
        let aggs = self.aggregates();
        let mut tasks: Vec<&str> = Vec::new();
        let mut lines: Vec<(Method, usize)> = Vec::new();
        for a in &aggs {
            if !tasks.contains(&a.task.as_str()) {
                tasks.push(&a.task);
            }
            if !lines.contains(&(a.method, a.iterations)) {
                lines.push((a.method, a.iterations));
            }
        }
        let mut out = String::from("| Method | T |");
        for t in &tasks {
            let _ = write!(out, " {t} |");
        }
        out.push_str(" Avg |\n|---|---|");
        for _ in &tasks {
            out.push_str("---|");
        }
        out.push_str("---|\n");
        for (method, iterations) in lines {
            let _ = write!(out, "| {method} | {iterations} |");
            let cells: Vec<Option<f64>> = tasks
                .iter()
                .map(|t| {
                    aggs.iter()
                        .find(|a| a.task == *t && a.method == method && a.iterations == iterations)
                        .and_then(|a| a.mean_final)
                })
                .collect();
            for c in &cells {
                let _ = write!(out, " {} |", fmt_pct(*c));
            }
            let _ = writeln!(out, " {} |", fmt_pct(mean_of(cells)));
        }
        out
    }
}

/// One JSON object per line.
pub fn format_traces<'a>(traces: impl IntoIterator<Item = &'a IterationTrace>) -> String {
    let mut out = String::new();
    for t in traces {
        // Serializing plain data with no maps keyed by non-strings cannot fail.
        out.push_str(&serde_json::to_string(t).expect("trace serializes"));
        out.push('\n');
    }
    out
}
