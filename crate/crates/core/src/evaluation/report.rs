use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::Level;
use super::nested::{nested_cv, CellReport, EvalConfig, LabeledData};
use crate::classifiers::Method;
use crate::error::{Error, Result};

/// Results of every tooth type × method cell of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub seed: u64,
    pub config: EvalConfig,
    pub cells: Vec<CellReport>,
}

/// Which number of a [`LevelResult`](super::nested::LevelResult) a table shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    LogLoss,
    Accuracy,
}

impl Metric {
    pub fn key(self) -> &'static str {
        match self {
            Metric::LogLoss => "log_loss",
            Metric::Accuracy => "accuracy",
        }
    }
}

/// Runs nested cross-validation for every dataset and method. Cells are
/// ordered dataset-major, methods in the order given.
pub fn run_experiment(datasets: &[LabeledData], methods: &[Method], cfg: &EvalConfig, seed: u64) -> Result<EvaluationReport> {
    let tasks: Vec<(&LabeledData, Method)> = datasets
        .iter()
        .flat_map(|d| methods.iter().map(move |&m| (d, m)))
        .collect();
    let cells = tasks
        .par_iter()
        .map(|&(d, m)| {
            nested_cv(d, m, cfg, seed).map_err(|e| {
                let tooth = d.tooth.map_or("dataset".to_string(), |t| t.to_string());
                e.context(format!("{tooth} {}", m.name()))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport {
        seed,
        config: cfg.clone(),
        cells,
    })
}

impl EvaluationReport {
    pub fn cell(&self, tooth: Option<crate::outline::ToothType>, method: Method) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.tooth == tooth && c.method == method)
    }

    /// Methods present, in table column order.
    pub fn methods(&self) -> Vec<Method> {
        Method::ALL
            .into_iter()
            .filter(|m| self.cells.iter().any(|c| c.method == *m))
            .collect()
    }

    /// Table rows, in the order they first appear.
    pub fn teeth(&self) -> Vec<Option<crate::outline::ToothType>> {
        let mut out = Vec::new();
        for c in &self.cells {
            if !out.contains(&c.tooth) {
                out.push(c.tooth);
            }
        }
        out
    }

    /// CSV text with tooth types as rows and methods as columns.
    pub fn table_csv(&self, level: Level, metric: Metric) -> Result<String> {
        let methods = self.methods();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["tooth".to_string()];
        header.extend(methods.iter().map(|m| m.name().to_string()));
        w.write_record(&header)?;
        for tooth in self.teeth() {
            let mut rec = vec![tooth.map_or("all".to_string(), |t| t.to_string())];
            for &m in &methods {
                rec.push(match self.cell(tooth, m) {
                    Some(c) => {
                        let r = match level {
                            Level::Tribe => &c.tribe,
                            Level::Species => &c.species,
                        };
                        let v = match metric {
                            Metric::LogLoss => r.log_loss,
                            Metric::Accuracy => r.accuracy,
                        };
                        format!("{v:.6}")
                    }
                    None => String::new(),
                });
            }
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Writes the four summary tables into `dir` and returns their paths.
    pub fn write_tables(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for level in [Level::Tribe, Level::Species] {
            for metric in [Metric::LogLoss, Metric::Accuracy] {
                let name = format!(
                    "{}_{}.csv",
                    match level {
                        Level::Tribe => "tribe",
                        Level::Species => "species",
                    },
                    metric.key()
                );
                let path = dir.join(name);
                std::fs::write(&path, self.table_csv(level, metric)?)?;
                paths.push(path);
            }
        }
        Ok(paths)
    }

    /// Writes `report.json` and the summary tables into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join("report.json");
        std::fs::write(&json, self.to_json()?)?;
        let mut paths = vec![json];
        paths.extend(self.write_tables(dir)?);
        Ok(paths)
    }
}
