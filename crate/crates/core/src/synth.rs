//! Synthetic routing workloads: clustered query embeddings, per-cluster model
//! affinities, token-priced costs and a noise level `δ` that controls how far a
//! query's true scores stray from those of its neighbors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::DatasetManifest;
use crate::types::{ModelCatalog, ModelSpec, QueryRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthModel {
    pub name: String,
    /// Dollars per million input tokens.
    pub input_per_million: f64,
    /// Dollars per million output tokens.
    pub output_per_million: f64,
    /// Mean score across clusters.
    pub quality: f64,
    /// Multiplier on the cluster's typical answer length.
    pub verbosity: f64,
}

impl SynthModel {
    fn new(name: &str, input: f64, output: f64, quality: f64, verbosity: f64) -> Self {
        Self {
            name: name.into(),
            input_per_million: input,
            output_per_million: output,
            quality,
            verbosity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub models: Vec<SynthModel>,
    pub dim: usize,
    pub clusters: usize,
    pub historical: usize,
    pub test: usize,
    /// Standard deviation of embeddings around their cluster center.
    pub spread: f64,
    /// Spread of per-cluster affinity offsets around each model's quality.
    pub affinity_spread: f64,
    /// Per-query score noise `δ`.
    pub delta: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            models: vec![
                SynthModel::new("tiny-instruct", 0.1, 0.1, 0.40, 0.8),
                SynthModel::new("small-chat", 0.2, 0.6, 0.52, 1.0),
                SynthModel::new("mid-general", 0.6, 0.6, 0.58, 1.1),
                SynthModel::new("large-reasoner", 1.0, 3.0, 0.70, 1.3),
                SynthModel::new("frontier", 5.0, 15.0, 0.80, 1.2),
            ],
            dim: 32,
            clusters: 40,
            historical: 10_000,
            test: 5_000,
            spread: 0.45,
            affinity_spread: 0.15,
            delta: 0.1,
            seed: 2024,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::config("models", "at least one model is required"));
        }
        if self.dim == 0 || self.clusters == 0 {
            return Err(Error::config("dim", "dimension and cluster count must be positive"));
        }
        if self.historical == 0 {
            return Err(Error::EmptyDataset);
        }
        if self.spread < 0.0 || self.delta < 0.0 || self.affinity_spread < 0.0 {
            return Err(Error::config("delta", "noise levels must be nonnegative"));
        }
        Ok(())
    }

    pub fn catalog(&self) -> ModelCatalog {
        ModelCatalog {
            models: self
                .models
                .iter()
                .enumerate()
                .map(|(i, m)| ModelSpec::new(i, m.name.clone(), m.input_per_million / 1e6, m.output_per_million / 1e6))
                .collect(),
        }
    }
}

struct Cluster {
    center: Vec<f64>,
    affinity: Vec<f64>,
    /// Direction per model along which the score drifts inside the cluster.
    tilt: Vec<Vec<f64>>,
    prompt_len: f64,
    answer_len: f64,
}

/// Generates a manifest with `historical` past queries and `test` new ones
/// drawn from the same distribution.
pub fn generate(cfg: &SynthConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let m = cfg.models.len();

    let clusters: Vec<Cluster> = (0..cfg.clusters)
        .map(|_| {
            let center = (0..cfg.dim).map(|_| std.sample(&mut rng)).collect();
            let affinity = cfg
                .models
                .iter()
                .map(|model| model.quality + cfg.affinity_spread * std.sample(&mut rng))
                .collect();
            let tilt = (0..m)
                .map(|_| {
                    let v: Vec<f64> = (0..cfg.dim).map(|_| std.sample(&mut rng)).collect();
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                    v.into_iter().map(|x| x / n).collect()
                })
                .collect();
            Cluster {
                center,
                affinity,
                tilt,
                prompt_len: rng.random_range(80.0..900.0),
                answer_len: rng.random_range(60.0..600.0),
            }
        })
        .collect();

    let catalog = cfg.catalog();
    let len_noise = LogNormal::new(0.0, 0.45).expect("valid lognormal");
    let draw = |prefix: &str, n: usize, rng: &mut ChaCha8Rng| -> Vec<QueryRecord> {
        (0..n)
            .map(|j| {
                let c = &clusters[rng.random_range(0..clusters.len())];
                let offset: Vec<f64> = (0..cfg.dim).map(|_| cfg.spread * std.sample(rng)).collect();
                let embedding = c.center.iter().zip(&offset).map(|(a, b)| a + b).collect();
                let input_tokens = (c.prompt_len * len_noise.sample(rng)).round().max(1.0) as u64;
                let mut scores = Vec::with_capacity(m);
                let mut outputs = Vec::with_capacity(m);
                for (i, model) in cfg.models.iter().enumerate() {
                    let drift: f64 = c.tilt[i].iter().zip(&offset).map(|(t, o)| t * o).sum::<f64>() / cfg.spread.max(1e-12);
                    let s = c.affinity[i] + 0.1 * drift.tanh() + cfg.delta * std.sample(rng);
                    scores.push(s.clamp(0.0, 1.0));
                    let out = (c.answer_len * model.verbosity * len_noise.sample(rng)).round().max(1.0);
                    outputs.push(out as u64);
                }
                QueryRecord::from_tokens(
                    format!("{prefix}{j:06}"),
                    embedding,
                    scores,
                    &catalog,
                    input_tokens,
                    outputs,
                )
            })
            .collect()
    };
    let historical = draw("h", cfg.historical, &mut rng);
    let test = draw("t", cfg.test, &mut rng);
    DatasetManifest::new(
        catalog,
        historical,
        test,
        format!("synthetic workload (seed {}, delta {})", cfg.seed, cfg.delta),
    )
}

/// `n` standard Gaussian vectors of dimension `dim`.
pub fn gaussian_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    (0..n).map(|_| (0..dim).map(|_| std.sample(&mut rng)).collect()).collect()
}
