//! Run reports: a JSON file plus a plain-text table next to it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use triadrec_core::cae::TrainHistory;
use triadrec_core::metrics::MetricsReport;
use triadrec_core::recmodel::{RecConfig, RecHistory};

use crate::error::{self, HarnessError, Result};
use crate::pipeline::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub image_size: usize,
    pub config: ExperimentConfig,
    /// SHA-256 of the feature file the recommender read.
    pub feature_checksum: String,
    /// Keyed by partition name.
    pub metrics: BTreeMap<String, MetricsReport>,
    pub cae_history: Option<TrainHistory>,
    pub rec_history: RecHistory,
    /// Seconds per stage.
    pub wall_times: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn check_complete(&self) -> Result<()> {
        if self.rec_history.epochs() == 0 {
            return Err(HarnessError::IncompleteReport("the recommender history is empty".into()));
        }
        if self.cae_history.as_ref().is_some_and(|h| h.epochs() == 0) {
            return Err(HarnessError::IncompleteReport("the autoencoder history is empty".into()));
        }
        if self.metrics.is_empty() {
            return Err(HarnessError::IncompleteReport("no partition was evaluated".into()));
        }
        Ok(())
    }

    pub fn table(&self) -> String {
        let cols: Vec<(&str, &MetricsReport)> = ["train", "validation", "test"]
            .iter()
            .filter_map(|p| self.metrics.get(*p).map(|m| (*p, m)))
            .collect();
        let mut out = format!(
            "seed {}  image size {}x{}  best epoch {} of {}\n",
            self.seed,
            self.image_size,
            self.image_size,
            self.rec_history.best_epoch,
            self.rec_history.epochs()
        );
        out.push_str(&metric_table(&cols));
        for w in &self.warnings {
            writeln!(out, "warning: {w}").expect("writing to a string");
        }
        out
    }
}

/// One column per block count, same data and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub image_size: Option<usize>,
    /// Shared by every variant except for the block count.
    pub rec: RecConfig,
    /// Present when the ablation ran the whole pipeline.
    pub experiment: Option<ExperimentConfig>,
    pub partition: String,
    pub columns: Vec<AblationColumn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationColumn {
    pub n_reduce_blocks: usize,
    pub feature_checksum: String,
    pub metrics: MetricsReport,
    pub history: RecHistory,
}

impl AblationReport {
    pub fn check_complete(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(HarnessError::IncompleteReport("no ablation variant".into()));
        }
        if self.columns.iter().any(|c| c.history.epochs() == 0) {
            return Err(HarnessError::IncompleteReport("a variant has an empty history".into()));
        }
        Ok(())
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| format!("{}RB", c.n_reduce_blocks)).collect()
    }

    pub fn table(&self) -> String {
        let names = self.column_names();
        let cols: Vec<(&str, &MetricsReport)> =
            names.iter().zip(&self.columns).map(|(n, c)| (n.as_str(), &c.metrics)).collect();
        format!("{} partition, seed {}\n{}", self.partition, self.seed, metric_table(&cols))
    }
}

pub fn format_metric(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.4}"),
        None => "n/a".to_string(),
    }
}

/// Five metric rows, one column per report.
pub fn metric_table(columns: &[(&str, &MetricsReport)]) -> String {
    let width = columns.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(10);
    let mut out = format!("{:<12}", "metric");
    for (name, _) in columns {
        write!(out, " {name:>width$}").expect("writing to a string");
    }
    out.push('\n');
    let rows: Vec<_> = columns.iter().map(|(_, m)| m.rows()).collect();
    for i in 0..5 {
        let label = rows.first().map_or("", |r| r[i].0);
        write!(out, "{label:<12}").expect("writing to a string");
        for r in &rows {
            write!(out, " {:>width$}", format_metric(r[i].1)).expect("writing to a string");
        }
        out.push('\n');
    }
    out
}

fn text_path(path: &Path) -> PathBuf {
    path.with_extension("txt")
}

fn write_pair<T: Serialize>(value: &T, table: &str, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("reports serialize");
    error::write(path, json.as_bytes())?;
    error::write(&text_path(path), table.as_bytes())
}

/// Writes `path` (JSON) and the same name with a `.txt` extension (table).
pub fn write_report(report: &RunReport, path: &Path) -> Result<()> {
    report.check_complete()?;
    write_pair(report, &report.table(), path)
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    serde_json::from_str(&error::read_text(path)?).map_err(|e| HarnessError::json(path, e))
}

pub fn write_ablation_report(report: &AblationReport, path: &Path) -> Result<()> {
    report.check_complete()?;
    write_pair(report, &report.table(), path)
}

pub fn read_ablation_report(path: &Path) -> Result<AblationReport> {
    serde_json::from_str(&error::read_text(path)?).map_err(|e| HarnessError::json(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use triadrec_core::metrics::{compute_metrics, ConfusionCounts};

    #[test]
    fn undefined_values_print_as_na() {
        let m = compute_metrics(ConfusionCounts { tp: 0, tn: 3, fp: 1, fn_: 0 }, 0.5);
        let t = metric_table(&[("test", &m)]);
        assert!(t.contains("Sensitivity") && t.contains("n/a"));
        assert!(t.contains("0.7500"));
        assert_eq!(t.lines().count(), 6);
    }

    #[test]
    fn four_decimals() {
        assert_eq!(format_metric(Some(0.123456)), "0.1235");
        assert_eq!(format_metric(Some(1.0)), "1.0000");
        assert_eq!(format_metric(None), "n/a");
    }
}
