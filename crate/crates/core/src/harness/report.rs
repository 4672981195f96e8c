use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::types::BudgetVector;

use super::{CellKey, ExperimentPlan, ReplicaSeeds};

/// Metrics of one run. Throughput is fractional for oracle rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub performance: f64,
    pub cost: f64,
    pub performance_per_cost: f64,
    pub throughput: f64,
    pub relative_performance: Option<f64>,
    pub s_max: f64,
    /// Models whose charged cost exceeded their budget.
    pub violations: usize,
}

impl MetricRow {
    pub fn from_report(r: &MetricsReport, violations: usize) -> Self {
        Self {
            performance: r.performance,
            cost: r.cost,
            performance_per_cost: r.performance_per_cost,
            throughput: r.throughput as f64,
            relative_performance: r.relative_performance,
            s_max: r.s_max,
            violations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub volume: usize,
    pub budget_factor: f64,
    pub split: String,
    pub order: String,
    pub algorithm: String,
    pub seeds: ReplicaSeeds,
    pub budgets: Vec<f64>,
    pub metrics: Option<MetricRow>,
    pub error: Option<String>,
}

impl ReportRow {
    pub(super) fn new(
        cell: &CellKey,
        algorithm: &str,
        seeds: ReplicaSeeds,
        budgets: &BudgetVector,
        metrics: Option<MetricRow>,
        error: Option<String>,
    ) -> Self {
        Self {
            volume: cell.volume,
            budget_factor: cell.budget_factor,
            split: cell.split.to_string(),
            order: cell.order.to_string(),
            algorithm: algorithm.to_string(),
            seeds,
            budgets: budgets.per_model.clone(),
            metrics,
            error,
        }
    }
}

/// Mean and standard deviation across the replicas of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub volume: usize,
    pub budget_factor: f64,
    pub split: String,
    pub order: String,
    pub algorithm: String,
    pub runs: usize,
    pub failures: usize,
    pub violations: usize,
    pub perf_mean: f64,
    pub perf_std: f64,
    pub cost_mean: f64,
    pub cost_std: f64,
    pub ppc_mean: f64,
    pub ppc_std: f64,
    pub tput_mean: f64,
    pub tput_std: f64,
    pub rp_mean: Option<f64>,
    pub rp_std: Option<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups rows by configuration and algorithm in order of first appearance.
pub fn summarize_rows(rows: &[ReportRow]) -> Vec<SummaryRow> {
    let mut groups: Vec<Vec<&ReportRow>> = Vec::new();
    let mut index: HashMap<(usize, u64, &str, &str, &str), usize> = HashMap::new();
    for r in rows {
        let key = (r.volume, r.budget_factor.to_bits(), r.split.as_str(), r.order.as_str(), r.algorithm.as_str());
        let g = *index.entry(key).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(r);
    }
    groups
        .into_iter()
        .map(|g| {
            let ok: Vec<&MetricRow> = g.iter().filter_map(|r| r.metrics.as_ref()).collect();
            let col = |f: fn(&MetricRow) -> f64| mean_std(&ok.iter().map(|m| f(m)).collect::<Vec<_>>());
            let (perf_mean, perf_std) = col(|m| m.performance);
            let (cost_mean, cost_std) = col(|m| m.cost);
            let (ppc_mean, ppc_std) = col(|m| m.performance_per_cost);
            let (tput_mean, tput_std) = col(|m| m.throughput);
            let rp: Vec<f64> = ok.iter().filter_map(|m| m.relative_performance).collect();
            let (rp_mean, rp_std) = if rp.is_empty() {
                (None, None)
            } else {
                let (a, b) = mean_std(&rp);
                (Some(a), Some(b))
            };
            let first = g[0];
            SummaryRow {
                volume: first.volume,
                budget_factor: first.budget_factor,
                split: first.split.clone(),
                order: first.order.clone(),
                algorithm: first.algorithm.clone(),
                runs: g.len(),
                failures: g.len() - ok.len(),
                violations: ok.iter().map(|m| m.violations).sum(),
                perf_mean,
                perf_std,
                cost_mean,
                cost_std,
                ppc_mean,
                ppc_std,
                tput_mean,
                tput_std,
                rp_mean,
                rp_std,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub plan: ExperimentPlan,
    pub provenance: String,
    pub rows: Vec<ReportRow>,
    pub summary: Vec<SummaryRow>,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serde(e.to_string())
}

impl ExperimentReport {
    /// Summary rows matching `algorithm`, in plan order.
    pub fn summary_for<'a>(&'a self, algorithm: &'a str) -> impl Iterator<Item = &'a SummaryRow> + 'a {
        self.summary.iter().filter(move |s| s.algorithm == algorithm)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// One line per (configuration, algorithm) with mean and spread.
    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for row in &self.summary {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Long format: configuration columns, then one `metric,value` pair per line.
    pub fn write_long_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record([
            "volume",
            "budget_factor",
            "split",
            "order",
            "algorithm",
            "seed",
            "shuffle",
            "draw",
            "metric",
            "value",
        ])
        .map_err(csv_err)?;
        for r in &self.rows {
            let Some(m) = &r.metrics else { continue };
            let metrics = [
                ("performance", Some(m.performance)),
                ("cost", Some(m.cost)),
                ("performance_per_cost", Some(m.performance_per_cost)),
                ("throughput", Some(m.throughput)),
                ("relative_performance", m.relative_performance),
            ];
            for (name, value) in metrics {
                let Some(v) = value else { continue };
                w.write_record([
                    r.volume.to_string(),
                    r.budget_factor.to_string(),
                    r.split.clone(),
                    r.order.clone(),
                    r.algorithm.clone(),
                    r.seeds.seed.to_string(),
                    r.seeds.shuffle.to_string(),
                    r.seeds.draw.to_string(),
                    name.to_string(),
                    v.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
