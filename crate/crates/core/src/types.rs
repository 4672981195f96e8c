//! Domain types shared across the router: the model catalog, query records,
//! and per-model budgets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A deployed model and its per-token prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: usize,
    pub name: String,
    /// Price per prompt (prefill) token.
    pub input_price: f64,
    /// Price per generated (decode) token.
    pub output_price: f64,
}

impl ModelSpec {
    pub fn new(model_id: usize, name: impl Into<String>, input_price: f64, output_price: f64) -> Self {
        Self {
            model_id,
            name: name.into(),
            input_price,
            output_price,
        }
    }
}

/// Cost of serving a query: `input_price * input_tokens + output_price * output_tokens`.
pub fn compute_cost(model: &ModelSpec, input_tokens: u64, output_tokens: u64) -> f64 {
    model.input_price * input_tokens as f64 + model.output_price * output_tokens as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCatalog {
    pub models: Vec<ModelSpec>,
}

impl ModelCatalog {
    pub fn new(models: Vec<ModelSpec>) -> Result<Self> {
        let catalog = Self { models };
        catalog.validate()?;
        Ok(catalog)
    }

    /// Catalog of `m` anonymous models with unknown (zero) prices, used when a
    /// dataset ships precomputed costs only.
    pub fn anonymous(m: usize) -> Self {
        Self {
            models: (0..m)
                .map(|i| ModelSpec::new(i, format!("model_{i}"), 0.0, 0.0))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::InvalidCatalog("catalog has no models".into()));
        }
        for (i, m) in self.models.iter().enumerate() {
            if m.model_id != i {
                return Err(Error::InvalidCatalog(format!(
                    "model ids must be dense 0..M-1; position {i} has id {}",
                    m.model_id
                )));
            }
            if !(m.input_price >= 0.0 && m.output_price >= 0.0) {
                return Err(Error::InvalidCatalog(format!(
                    "model {} has a negative or NaN price",
                    m.name
                )));
            }
        }
        Ok(())
    }
}

/// One query with its embedding and ground-truth per-model outcomes.
///
/// The same shape serves as a historical record (the neighbors used for
/// estimation) and as a test query (whose truth is only consulted by the
/// simulator when the query is executed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub embedding: Vec<f64>,
    /// True performance score per model.
    pub scores: Vec<f64>,
    /// True cost per model.
    pub costs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_tokens: Option<Vec<u64>>,
}

pub type HistoricalRecord = QueryRecord;
pub type Query = QueryRecord;

impl QueryRecord {
    pub fn new(query_id: impl Into<String>, embedding: Vec<f64>, scores: Vec<f64>, costs: Vec<f64>) -> Self {
        Self {
            query_id: query_id.into(),
            embedding,
            scores,
            costs,
            input_tokens: None,
            output_tokens: None,
        }
    }

    /// Builds a record whose costs are derived from token counts and catalog prices.
    pub fn from_tokens(
        query_id: impl Into<String>,
        embedding: Vec<f64>,
        scores: Vec<f64>,
        catalog: &ModelCatalog,
        input_tokens: u64,
        output_tokens: Vec<u64>,
    ) -> Self {
        let costs = catalog
            .models
            .iter()
            .zip(&output_tokens)
            .map(|(m, &out)| compute_cost(m, input_tokens, out))
            .collect();
        Self {
            query_id: query_id.into(),
            embedding,
            scores,
            costs,
            input_tokens: Some(input_tokens),
            output_tokens: Some(output_tokens),
        }
    }

    /// Checks vector lengths against the catalog size, non-negativity, and
    /// token/cost consistency when token counts are present.
    pub fn validate(&self, catalog: &ModelCatalog, dim: usize) -> Result<()> {
        let m = catalog.len();
        let fail = |message: String| Error::InvalidRecord {
            query_id: self.query_id.clone(),
            message,
        };
        if self.embedding.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: self.embedding.len(),
                context: format!("embedding of record {}", self.query_id),
            });
        }
        if self.scores.len() != m {
            return Err(fail(format!("score vector has {} entries, expected {m}", self.scores.len())));
        }
        if self.costs.len() != m {
            return Err(fail(format!("cost vector has {} entries, expected {m}", self.costs.len())));
        }
        if let Some(v) = self.scores.iter().find(|v| **v < 0.0 || !v.is_finite()) {
            return Err(fail(format!("score {v} is negative or not finite")));
        }
        if let Some(v) = self.costs.iter().find(|v| **v < 0.0 || !v.is_finite()) {
            return Err(fail(format!("cost {v} is negative or not finite")));
        }
        if self.embedding.iter().any(|v| !v.is_finite()) {
            return Err(fail("embedding has non-finite entries".into()));
        }
        if let (Some(input), Some(outputs)) = (self.input_tokens, &self.output_tokens) {
            if outputs.len() != m {
                return Err(fail(format!("output token vector has {} entries, expected {m}", outputs.len())));
            }
            let priced = catalog.models.iter().any(|s| s.input_price > 0.0 || s.output_price > 0.0);
            if priced {
                for (spec, (&out, &cost)) in catalog.models.iter().zip(outputs.iter().zip(&self.costs)) {
                    let expected = compute_cost(spec, input, out);
                    if (expected - cost).abs() > 1e-9 * expected.abs().max(cost.abs()).max(1e-300) {
                        return Err(fail(format!(
                            "cost {cost} for model {} disagrees with token pricing {expected}",
                            spec.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Largest true score available to this query.
    pub fn best_score(&self) -> f64 {
        self.scores.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_cost(&self) -> f64 {
        self.costs.iter().copied().fold(0.0, f64::max)
    }
}

/// Per-model budgets `B_i` and their total `B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetVector {
    pub per_model: Vec<f64>,
    pub total: f64,
}

impl BudgetVector {
    pub fn new(per_model: Vec<f64>) -> Result<Self> {
        if let Some(b) = per_model.iter().find(|b| **b < 0.0 || !b.is_finite()) {
            return Err(Error::config("budgets", format!("budget {b} is negative or not finite")));
        }
        let total = per_model.iter().sum();
        Ok(Self { per_model, total })
    }

    pub fn len(&self) -> usize {
        self.per_model.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_model.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let per_model: Vec<f64> = self.per_model.iter().map(|b| b * factor).collect();
        let total = per_model.iter().sum();
        Self { per_model, total }
    }
}
