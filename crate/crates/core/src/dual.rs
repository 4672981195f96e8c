//! Partial dual objective over the observed prefix and the learner for the
//! routing weights `γ`.
//!
//! `F(γ, P) = ε Σ_i γ_i B_i + Σ_{j∈P} max_i (α d̂_ij − γ_i ĝ_ij)`
//!
//! The inner max runs over models only; `clamp_zero` adds the "route nowhere"
//! option `0` to it.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ann::FeatureEstimate;
use crate::error::{Error, Result};
use crate::oracle::simplex::{solve_gub, FreeColumn, GubProblem};
use crate::types::BudgetVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualWeights {
    pub gamma: Vec<f64>,
    pub alpha: f64,
}

impl DualWeights {
    pub fn new(gamma: Vec<f64>, alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::config("alpha", "must be positive"));
        }
        if gamma.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return Err(Error::config("gamma", "entries must be finite and nonnegative"));
        }
        Ok(Self { gamma, alpha })
    }

    pub fn zeros(m: usize, alpha: f64) -> Self {
        Self {
            gamma: vec![0.0; m],
            alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedBatch {
    pub features: Vec<(String, FeatureEstimate)>,
    pub epsilon: f64,
    pub budgets: BudgetVector,
    /// Use `max(0, ·)` for the per-query term.
    #[serde(default)]
    pub clamp_zero: bool,
}

impl ObservedBatch {
    pub fn new(features: Vec<(String, FeatureEstimate)>, epsilon: f64, budgets: BudgetVector) -> Result<Self> {
        let batch = Self {
            features,
            epsilon,
            budgets,
            clamp_zero: false,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn with_clamp(mut self, clamp_zero: bool) -> Self {
        self.clamp_zero = clamp_zero;
        self
    }

    pub fn num_models(&self) -> usize {
        self.budgets.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::config("epsilon", "observation batch is empty"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::config("epsilon", "must lie in (0, 1]"));
        }
        let m = self.num_models();
        for (id, f) in &self.features {
            if f.scores.len() != m || f.costs.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    found: f.scores.len().min(f.costs.len()),
                    context: format!("features of query {id}"),
                });
            }
        }
        Ok(())
    }

    /// `α · max d̂ / min positive ĝ`: at this level no model with positive
    /// estimated cost can beat zero on any observed query.
    pub fn gamma_max(&self, alpha: f64) -> f64 {
        let max_d = self
            .features
            .iter()
            .flat_map(|(_, f)| f.scores.iter())
            .fold(0.0f64, |a, &v| a.max(v));
        let min_g = self
            .features
            .iter()
            .flat_map(|(_, f)| f.costs.iter())
            .filter(|&&g| g > 0.0)
            .fold(f64::INFINITY, |a, &v| a.min(v));
        if min_g.is_finite() {
            alpha * max_d / min_g
        } else {
            0.0
        }
    }
}

/// Index of the winning term for one query: `None` only in clamped mode when
/// every model scores below zero. Ties go to the lowest index.
fn winner(f: &FeatureEstimate, gamma: &[f64], alpha: f64, clamp: bool) -> (Option<usize>, f64) {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, g) in gamma.iter().enumerate() {
        let v = alpha * f.scores[i] - g * f.costs[i];
        if v > best.1 {
            best = (i, v);
        }
    }
    if clamp && best.1 < 0.0 {
        (None, 0.0)
    } else {
        (Some(best.0), best.1)
    }
}

pub fn partial_dual(weights: &DualWeights, batch: &ObservedBatch) -> f64 {
    let budget_term: f64 = weights
        .gamma
        .iter()
        .zip(&batch.budgets.per_model)
        .map(|(g, b)| g * b)
        .sum::<f64>()
        * batch.epsilon;
    budget_term
        + batch
            .features
            .iter()
            .map(|(_, f)| winner(f, &weights.gamma, weights.alpha, batch.clamp_zero).1)
            .sum::<f64>()
}

/// A subgradient of `F` at `γ`: `ε B_i − Σ_{j won by i} ĝ_ij`.
pub fn partial_dual_subgradient(weights: &DualWeights, batch: &ObservedBatch) -> Vec<f64> {
    let mut grad: Vec<f64> = batch.budgets.per_model.iter().map(|b| batch.epsilon * b).collect();
    for (_, f) in &batch.features {
        if let (Some(i), _) = winner(f, &weights.gamma, weights.alpha, batch.clamp_zero) {
            grad[i] -= f.costs[i];
        }
    }
    grad
}

/// `α d̂_i − ĝ_i γ_i` per model and the winner (ties to the lowest index).
pub fn score_models(features: &FeatureEstimate, weights: &DualWeights) -> (Vec<f64>, usize) {
    let scores: Vec<f64> = (0..weights.gamma.len())
        .map(|i| weights.alpha * features.scores[i] - features.costs[i] * weights.gamma[i])
        .collect();
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    (scores, best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub alpha: f64,
    pub restarts: usize,
    pub iterations: usize,
    /// Step at iteration `t` is `step_scale · γ_max / √t` along the
    /// normalized subgradient.
    pub step_scale: f64,
    /// Re-solve the piecewise-linear program exactly after the subgradient
    /// search and keep whichever point is better.
    pub polish: bool,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-4,
            restarts: 8,
            iterations: 500,
            step_scale: 0.5,
            polish: true,
            seed: 0xd0a1,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::config("alpha", "must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::config("restarts", "must be at least 1"));
        }
        if self.iterations == 0 {
            return Err(Error::config("iterations", "must be at least 1"));
        }
        if !(self.step_scale.is_finite() && self.step_scale > 0.0) {
            return Err(Error::config("step_scale", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedWeights {
    pub alpha: f64,
    pub gamma: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub gamma_max: f64,
    /// `false` when the subgradient search was still improving at the end and
    /// no exact polish replaced its answer.
    pub converged: bool,
    pub polished: bool,
}

impl LearnedWeights {
    pub fn weights(&self) -> DualWeights {
        DualWeights {
            gamma: self.gamma.clone(),
            alpha: self.alpha,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

struct Run {
    gamma: Vec<f64>,
    objective: f64,
    stalled: bool,
}

fn subgradient_run(batch: &ObservedBatch, cfg: &LearnerConfig, start: Vec<f64>, gamma_max: f64) -> Run {
    let mut w = DualWeights {
        gamma: start,
        alpha: cfg.alpha,
    };
    let mut best = Run {
        gamma: w.gamma.clone(),
        objective: partial_dual(&w, batch),
        stalled: true,
    };
    let tail = cfg.iterations - cfg.iterations / 10;
    let mut tail_start = best.objective;
    for t in 1..=cfg.iterations {
        if t == tail {
            tail_start = best.objective;
        }
        let g = partial_dual_subgradient(&w, batch);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        let step = cfg.step_scale * gamma_max / (t as f64).sqrt() / norm;
        for (gi, di) in w.gamma.iter_mut().zip(&g) {
            *gi = (*gi - step * di).clamp(0.0, gamma_max);
        }
        let f = partial_dual(&w, batch);
        if f < best.objective {
            best.objective = f;
            best.gamma.clone_from(&w.gamma);
        }
    }
    best.stalled = tail_start - best.objective <= 1e-9 * best.objective.abs().max(1e-12);
    best
}

/// Exact minimizer of `F` over the box `[0, γ_max]^M`, read off the duals of
/// the equivalent allocation LP.
fn polish(batch: &ObservedBatch, alpha: f64, gamma_max: f64) -> Result<Vec<f64>> {
    let m = batch.num_models();
    let problem = GubProblem {
        rows: m,
        rhs: batch.budgets.per_model.iter().map(|b| batch.epsilon * b).collect(),
        sets: batch.features.len(),
        cost: batch
            .features
            .iter()
            .flat_map(|(_, f)| f.scores.iter().map(|d| alpha * d))
            .collect(),
        coef: batch.features.iter().flat_map(|(_, f)| f.costs.iter().copied()).collect(),
        set_slack: batch.clamp_zero,
        free: (0..m)
            .map(|row| FreeColumn {
                row,
                coef: -1.0,
                cost: -gamma_max,
            })
            .collect(),
    };
    let sol = solve_gub(&problem)?;
    Ok(sol.row_duals.iter().map(|g| g.clamp(0.0, gamma_max)).collect())
}

/// Minimizes `F(·, P)` over `0 ≤ γ ≤ γ_max` by multi-start projected
/// subgradient descent, optionally followed by an exact polish.
pub fn learn_weights(batch: &ObservedBatch, cfg: &LearnerConfig) -> Result<LearnedWeights> {
    batch.validate()?;
    cfg.validate()?;
    let m = batch.num_models();
    let gamma_max = batch.gamma_max(cfg.alpha);
    let zero = DualWeights::zeros(m, cfg.alpha);
    if gamma_max == 0.0 {
        return Ok(LearnedWeights {
            alpha: cfg.alpha,
            gamma: zero.gamma.clone(),
            objective: partial_dual(&zero, batch),
            iterations: 0,
            gamma_max,
            converged: true,
            polished: false,
        });
    }

    let starts: Vec<Vec<f64>> = (0..cfg.restarts)
        .map(|r| {
            if r == 0 {
                vec![0.0; m]
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(r as u64));
                (0..m).map(|_| rng.random::<f64>() * gamma_max).collect()
            }
        })
        .collect();
    let runs: Vec<Run> = starts
        .into_par_iter()
        .map(|s| subgradient_run(batch, cfg, s, gamma_max))
        .collect();
    // lowest objective, ties to the lowest restart index
    let mut best = 0;
    for (r, run) in runs.iter().enumerate() {
        if run.objective < runs[best].objective {
            best = r;
        }
    }
    let Run {
        mut gamma,
        mut objective,
        stalled,
    } = runs.into_iter().nth(best).expect("at least one restart");
    let mut converged = stalled;
    let mut polished = false;

    if cfg.polish {
        match polish(batch, cfg.alpha, gamma_max) {
            Ok(g) => {
                let f = partial_dual(&DualWeights::new(g.clone(), cfg.alpha)?, batch);
                if f <= objective {
                    gamma = g;
                    objective = f;
                    polished = true;
                    converged = true;
                }
            }
            Err(e) => log::warn!("exact polish of dual weights failed: {e}"),
        }
    }
    Ok(LearnedWeights {
        alpha: cfg.alpha,
        gamma,
        objective,
        iterations: cfg.iterations * cfg.restarts,
        gamma_max,
        converged,
        polished,
    })
}
