//! Episode traces and the metrics derived from them.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Observe,
    Route,
}

/// Outcome for one test query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub query_id: String,
    pub stage: Stage,
    /// Model the query was sent to, `None` when it was withheld.
    pub model: Option<usize>,
    /// `true` when the model ran the query; `false` means it waits in the queue.
    pub executed: bool,
    pub charged_cost: f64,
    pub earned_score: f64,
}

impl Decision {
    pub fn queued(query_id: impl Into<String>, stage: Stage, model: Option<usize>) -> Self {
        Self {
            query_id: query_id.into(),
            stage,
            model,
            executed: false,
            charged_cost: 0.0,
            earned_score: 0.0,
        }
    }
}

/// Episode header written as the first JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub algorithm: String,
    pub budgets: Vec<f64>,
    pub remaining: Vec<f64>,
    /// Largest true score any query in the stream could earn.
    pub s_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub header: EpisodeHeader,
    pub decisions: Vec<Decision>,
}

impl EpisodeLog {
    pub fn new(algorithm: impl Into<String>, budgets: Vec<f64>, s_max: f64) -> Self {
        Self {
            header: EpisodeHeader {
                algorithm: algorithm.into(),
                remaining: budgets.clone(),
                budgets,
                s_max,
            },
            decisions: Vec::new(),
        }
    }

    pub fn algorithm(&self) -> &str {
        &self.header.algorithm
    }

    /// Sum of charged costs per model, accumulated in log order.
    pub fn charged_per_model(&self) -> Vec<f64> {
        let mut charged = vec![0.0; self.header.budgets.len()];
        for d in self.decisions.iter().filter(|d| d.executed) {
            if let Some(m) = d.model {
                charged[m] += d.charged_cost;
            }
        }
        charged
    }

    /// Models whose charged total exceeds their budget.
    pub fn budget_violations(&self) -> Vec<usize> {
        self.charged_per_model()
            .iter()
            .zip(&self.header.budgets)
            .enumerate()
            .filter(|(_, (c, b))| c > b)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("<episode log>", e);
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n").map_err(io)?;
        for d in &self.decisions {
            serde_json::to_writer(&mut out, d)?;
            out.write_all(b"\n").map_err(io)?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits utf-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let header: EpisodeHeader = match lines.next() {
            Some((_, line)) => {
                let line = line.map_err(|e| Error::io("<episode log>", e))?;
                serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: 1,
                    message: e.to_string(),
                })?
            }
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "missing episode header".into(),
                })
            }
        };
        let mut decisions = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io("<episode log>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            decisions.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(Self { header, decisions })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub performance: f64,
    pub cost: f64,
    pub performance_per_cost: f64,
    pub throughput: usize,
    /// `performance / approx_optimum`; `None` when the optimum is not positive.
    pub relative_performance: Option<f64>,
    pub s_max: f64,
}

pub fn compute_metrics(log: &EpisodeLog, approx_optimum: f64) -> MetricsReport {
    let mut performance = 0.0;
    let mut cost = 0.0;
    let mut throughput = 0;
    for d in log.decisions.iter().filter(|d| d.executed) {
        performance += d.earned_score;
        cost += d.charged_cost;
        throughput += 1;
    }
    MetricsReport {
        performance,
        cost,
        performance_per_cost: if cost > 0.0 { performance / cost } else { 0.0 },
        throughput,
        relative_performance: (approx_optimum > 0.0).then(|| performance / approx_optimum),
        s_max: log.header.s_max,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn executed(id: &str, model: usize, cost: f64, score: f64) -> Decision {
        Decision {
            query_id: id.into(),
            stage: Stage::Route,
            model: Some(model),
            executed: true,
            charged_cost: cost,
            earned_score: score,
        }
    }

    #[test]
    fn empty_log_gives_zero_metrics() {
        let log = EpisodeLog::new("x", vec![1.0], 0.0);
        let m = compute_metrics(&log, 1.0);
        assert_eq!(m.performance, 0.0);
        assert_eq!(m.cost, 0.0);
        assert_eq!(m.performance_per_cost, 0.0);
        assert_eq!(m.throughput, 0);
        assert_eq!(m.relative_performance, Some(0.0));
    }

    #[test]
    fn single_record_arithmetic() {
        let mut log = EpisodeLog::new("x", vec![1.0], 0.5);
        log.decisions.push(executed("a", 0, 0.25, 0.5));
        let m = compute_metrics(&log, 1.0);
        assert_eq!(m.performance, 0.5);
        assert_eq!(m.performance_per_cost, 2.0);
        assert_eq!(m.throughput, 1);
        assert_eq!(m.relative_performance, Some(0.5));
    }

    #[test]
    fn queued_queries_do_not_count() {
        let mut log = EpisodeLog::new("x", vec![1.0], 0.5);
        log.decisions.push(executed("a", 0, 0.25, 0.5));
        log.decisions.push(Decision::queued("b", Stage::Observe, None));
        log.decisions.push(Decision::queued("c", Stage::Route, Some(0)));
        let m = compute_metrics(&log, 0.0);
        assert_eq!(m.throughput, 1);
        assert_eq!(m.relative_performance, None);
    }

    #[test]
    fn jsonl_round_trip() {
        let mut log = EpisodeLog::new("ours", vec![1.0, 2.0], 0.9);
        log.decisions.push(executed("a", 1, 0.125, 0.75));
        log.decisions.push(Decision::queued("b", Stage::Observe, None));
        log.header.remaining = vec![1.0, 1.875];
        let text = log.to_jsonl_string();
        assert_eq!(text.lines().count(), 3);
        let back = EpisodeLog::read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn violations_detected() {
        let mut log = EpisodeLog::new("x", vec![0.2], 0.5);
        log.decisions.push(executed("a", 0, 0.25, 0.5));
        assert_eq!(log.budget_violations(), vec![0]);
    }
}
