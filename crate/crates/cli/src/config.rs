//! Run configuration: a TOML document whose top-level keys mirror the
//! command-line flags, plus optional `[learner]`, `[hnsw]` and `[synth]`
//! sections. Flags override file values key by key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use budget_router::ann::{Distance, IndexConfig};
use budget_router::baselines::BaselineConfig;
use budget_router::dual::LearnerConfig;
use budget_router::harness::{Algorithm, ExperimentPlan, OrderRegime, SplitStrategy};
use budget_router::ingest::DataFormat;
use budget_router::router::{AdmissionPolicy, RouterConfig};
use budget_router::synth::SynthConfig;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSection {
    pub restarts: Option<usize>,
    pub iterations: Option<usize>,
    pub step_scale: Option<f64>,
    pub polish: Option<bool>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HnswSection {
    pub graph_degree: Option<usize>,
    pub build_beam: Option<usize>,
    pub search_beam: Option<usize>,
    pub distance: Option<Distance>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub historical: Option<usize>,
    pub test: Option<usize>,
    pub dim: Option<usize>,
    pub clusters: Option<usize>,
    pub delta: Option<f64>,
    pub seed: Option<u64>,
}

/// Every key is optional so file and flags can be layered.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub test_dataset: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub format: Option<String>,
    pub test_size: Option<usize>,
    pub seed: Option<u64>,
    pub index: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub prediction_costs: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub k: Option<usize>,
    pub budget_factor: Option<Vec<f64>>,
    pub split: Option<Vec<String>>,
    pub order: Option<Vec<String>>,
    pub seeds: Option<Vec<u64>>,
    pub admission: Option<String>,
    pub algorithms: Option<Vec<String>>,
    pub volumes: Option<Vec<usize>>,
    pub random_split_draws: Option<usize>,
    pub batch_size: Option<usize>,
    pub clamp_zero: Option<bool>,
    pub oracles: Option<bool>,
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub learner: LearnerSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub hnsw: HnswSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub synth: SynthSection,
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

macro_rules! overlay {
    ($base:expr, $top:expr; $($field:ident),* $(,)?) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )*
    };
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses a TOML document; a failure names the first offending key.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::config("config", e.message()))?;
        match table.clone().try_into::<RunConfig>() {
            Ok(cfg) => Ok(cfg),
            Err(whole) => Err(locate_bad_key(&table).unwrap_or_else(|| CliError::config("config", whole.message()))),
        }
    }

    /// Values present in `top` win.
    pub fn overlay(mut self, top: &RunConfig) -> Self {
        overlay!(self, top; dataset, test_dataset, embeddings, format, test_size, seed, index, predictions,
            prediction_costs, report, alpha, epsilon, k, budget_factor, split, order, seeds, admission, algorithms,
            volumes, random_split_draws, batch_size, clamp_zero, oracles, out);
        overlay!(self.learner, top.learner; restarts, iterations, step_scale, polish, seed);
        overlay!(self.hnsw, top.hnsw; graph_degree, build_beam, search_beam, distance, seed);
        overlay!(self.synth, top.synth; historical, test, dim, clusters, delta, seed);
        self
    }

    /// Fills every unset key with its default so the document fully
    /// describes the run.
    pub fn completed(&self) -> Self {
        let plan = ExperimentPlan::default();
        let learner = LearnerConfig::default();
        let index = IndexConfig::default();
        let synth = SynthConfig::default();
        let format = match self.dataset.as_deref().and_then(DataFormat::from_path) {
            Some(DataFormat::Csv) => "csv",
            _ => "jsonl",
        };
        let defaults = RunConfig {
            format: Some(format.into()),
            seed: Some(0),
            alpha: Some(learner.alpha),
            epsilon: Some(plan.router.epsilon),
            k: Some(index.k_neighbors),
            budget_factor: Some(plan.budget_factors.clone()),
            split: Some(plan.splits.iter().map(|s| s.to_string()).collect()),
            order: Some(plan.orders.iter().map(|o| o.to_string()).collect()),
            seeds: Some(plan.seeds.clone()),
            admission: Some("actual_cost".into()),
            algorithms: Some(plan.algorithms.iter().map(|a| a.name().to_string()).collect()),
            volumes: Some(vec![]),
            random_split_draws: Some(plan.random_split_draws),
            batch_size: Some(plan.baseline.batch_size),
            clamp_zero: Some(plan.router.clamp_zero),
            oracles: Some(plan.oracles),
            out: Some(PathBuf::from("out")),
            learner: LearnerSection {
                restarts: Some(learner.restarts),
                iterations: Some(learner.iterations),
                step_scale: Some(learner.step_scale),
                polish: Some(learner.polish),
                seed: Some(learner.seed),
            },
            hnsw: HnswSection {
                graph_degree: Some(index.graph_degree),
                build_beam: Some(index.build_beam),
                search_beam: Some(index.search_beam),
                distance: Some(index.distance),
                seed: Some(index.seed),
            },
            synth: SynthSection {
                historical: Some(synth.historical),
                test: Some(synth.test),
                dim: Some(synth.dim),
                clusters: Some(synth.clusters),
                delta: Some(synth.delta),
                seed: Some(synth.seed),
            },
            ..RunConfig::default()
        };
        defaults.overlay(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn data_format(&self) -> Result<DataFormat, CliError> {
        match (&self.format, &self.dataset) {
            (Some(f), _) => f.parse().map_err(CliError::from),
            (None, Some(p)) => Ok(DataFormat::from_path(p).unwrap_or(DataFormat::Jsonl)),
            (None, None) => Ok(DataFormat::Jsonl),
        }
    }

    pub fn index_config(&self) -> Result<IndexConfig, CliError> {
        let c = self.completed();
        let h = &c.hnsw;
        let cfg = IndexConfig {
            k_neighbors: c.k.unwrap_or(5),
            graph_degree: h.graph_degree.unwrap_or_default(),
            build_beam: h.build_beam.unwrap_or_default(),
            search_beam: h.search_beam.unwrap_or_default(),
            distance: h.distance.unwrap_or_default(),
            seed: h.seed.unwrap_or_default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn synth_config(&self) -> Result<SynthConfig, CliError> {
        let s = self.completed().synth;
        let cfg = SynthConfig {
            historical: s.historical.unwrap_or_default(),
            test: s.test.unwrap_or_default(),
            dim: s.dim.unwrap_or_default(),
            clusters: s.clusters.unwrap_or_default(),
            delta: s.delta.unwrap_or_default(),
            seed: s.seed.unwrap_or_default(),
            ..SynthConfig::default()
        };
        cfg.validate().map_err(|e| match e {
            budget_router::Error::EmptyDataset => CliError::config("synth.historical", "must be positive"),
            other => CliError::from(other),
        })?;
        Ok(cfg)
    }

    /// Builds and validates the experiment plan; `m` and `test_len` come from
    /// the loaded dataset.
    pub fn plan(&self) -> Result<ExperimentPlan, CliError> {
        let c = self.completed();
        let alpha = c.alpha.unwrap_or_default();
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(CliError::config("alpha", "must be positive and finite"));
        }
        let admission: AdmissionPolicy = c.admission.as_deref().unwrap_or_default().parse()?;
        let l = &c.learner;
        let learner = LearnerConfig {
            alpha,
            restarts: l.restarts.unwrap_or_default(),
            iterations: l.iterations.unwrap_or_default(),
            step_scale: l.step_scale.unwrap_or_default(),
            polish: l.polish.unwrap_or_default(),
            seed: l.seed.unwrap_or_default(),
        };
        learner.validate().map_err(|e| prefix(e, "learner"))?;
        let router = RouterConfig {
            epsilon: c.epsilon.unwrap_or_default(),
            admission,
            learner,
            clamp_zero: c.clamp_zero.unwrap_or_default(),
            ..RouterConfig::default()
        };
        router.validate()?;
        let parse_all = |field: &str, items: &[String]| -> Result<Vec<String>, CliError> {
            if items.is_empty() {
                return Err(CliError::config(field, "needs at least one entry"));
            }
            Ok(items.to_vec())
        };
        let algorithms = parse_all("algorithms", c.algorithms.as_deref().unwrap_or_default())?
            .iter()
            .map(|s| s.parse::<Algorithm>().map_err(|_| CliError::config("algorithms", format!("unknown algorithm '{s}'"))))
            .collect::<Result<Vec<_>, _>>()?;
        let splits = parse_all("split", c.split.as_deref().unwrap_or_default())?
            .iter()
            .map(|s| s.parse::<SplitStrategy>())
            .collect::<Result<Vec<_>, _>>()?;
        let orders = parse_all("order", c.order.as_deref().unwrap_or_default())?
            .iter()
            .map(|s| s.parse::<OrderRegime>())
            .collect::<Result<Vec<_>, _>>()?;
        let budget_factors = c.budget_factor.clone().unwrap_or_default();
        if budget_factors.is_empty() || budget_factors.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(CliError::config("budget_factor", "need at least one finite nonnegative factor"));
        }
        let seeds = c.seeds.clone().unwrap_or_default();
        if seeds.is_empty() {
            return Err(CliError::config("seeds", "need at least one seed"));
        }
        Ok(ExperimentPlan {
            algorithms,
            budget_factors,
            splits,
            orders,
            volumes: c.volumes.clone().unwrap_or_default(),
            seeds,
            router,
            baseline: BaselineConfig {
                admission,
                batch_size: c.batch_size.unwrap_or_default(),
                ..BaselineConfig::default()
            },
            random_split_draws: c.random_split_draws.unwrap_or_default(),
            oracles: c.oracles.unwrap_or_default(),
        })
    }
}

fn prefix(e: budget_router::Error, section: &str) -> CliError {
    match e {
        budget_router::Error::InvalidConfig { field, message } => CliError::config(format!("{section}.{field}"), message),
        other => other.into(),
    }
}

/// Deserializes each key on its own to find which one is malformed.
fn locate_bad_key(table: &toml::Table) -> Option<CliError> {
    for (key, value) in table {
        if let toml::Value::Table(inner) = value {
            for (sub, v) in inner {
                let mut one = toml::Table::new();
                let mut section = toml::Table::new();
                section.insert(sub.clone(), v.clone());
                one.insert(key.clone(), toml::Value::Table(section));
                if let Err(e) = one.try_into::<RunConfig>() {
                    return Some(CliError::config(format!("{key}.{sub}"), e.message()));
                }
            }
        }
        let mut one = toml::Table::new();
        one.insert(key.clone(), value.clone());
        if let Err(e) = one.try_into::<RunConfig>() {
            return Some(CliError::config(key.clone(), e.message()));
        }
    }
    None
}
