//! Offline optima: an exhaustive MILP search for tiny instances and a relaxed
//! LP solver with dual certificates for everything else.

mod milp;
pub mod simplex;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ann::FeatureEstimate;
use crate::error::{Error, Result};
use crate::types::{BudgetVector, QueryRecord};

pub use milp::{solve_milp_bruteforce, MAX_ASSIGNMENTS};
use simplex::{solve_gub, GubProblem};

/// Entries above this count as "routed" when reading fractional solutions.
pub const SUPPORT_TOL: f64 = 1e-7;
const FEASIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Integrality {
    Integral,
    #[default]
    Fractional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationProblem {
    /// `values[j][i]`: score of query `j` on model `i` (true or estimated).
    pub values: Vec<Vec<f64>>,
    pub costs: Vec<Vec<f64>>,
    pub budgets: Vec<f64>,
    pub integrality: Integrality,
    /// Multiplier on every value; `None` means 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl AllocationProblem {
    pub fn new(values: Vec<Vec<f64>>, costs: Vec<Vec<f64>>, budgets: Vec<f64>, integrality: Integrality) -> Self {
        Self {
            values,
            costs,
            budgets,
            integrality,
            alpha: None,
        }
    }

    /// Problem over true scores and costs of `queries`.
    pub fn from_truth(queries: &[QueryRecord], budgets: &BudgetVector) -> Self {
        Self::new(
            queries.iter().map(|q| q.scores.clone()).collect(),
            queries.iter().map(|q| q.costs.clone()).collect(),
            budgets.per_model.clone(),
            Integrality::Fractional,
        )
    }

    /// Problem over estimated scores and costs.
    pub fn from_estimates(features: &[FeatureEstimate], budgets: &BudgetVector) -> Self {
        Self::new(
            features.iter().map(|f| f.scores.clone()).collect(),
            features.iter().map(|f| f.costs.clone()).collect(),
            budgets.per_model.clone(),
            Integrality::Fractional,
        )
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn num_queries(&self) -> usize {
        self.values.len()
    }

    pub fn num_models(&self) -> usize {
        self.budgets.len()
    }

    pub(crate) fn alpha_or_one(&self) -> f64 {
        self.alpha.unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.num_models();
        if m == 0 {
            return Err(Error::Solver("problem has no models".into()));
        }
        if self.costs.len() != self.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                found: self.costs.len(),
                context: "cost rows".into(),
            });
        }
        for (j, (d, g)) in self.values.iter().zip(&self.costs).enumerate() {
            if d.len() != m || g.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    found: if d.len() != m { d.len() } else { g.len() },
                    context: format!("row {j} of allocation problem"),
                });
            }
            if d.iter().any(|v| !v.is_finite()) || g.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Solver(format!("row {j} has a non-finite value or a negative cost")));
            }
        }
        if self.budgets.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::Solver("budgets must be finite and nonnegative".into()));
        }
        if let Some(a) = self.alpha {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::config("alpha", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Dual solution `(γ, β)` of the relaxed LP together with its residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCertificate {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub dual_objective: f64,
    /// `|dual - primal| / max(|primal|, |dual|)`.
    pub duality_gap: f64,
    /// Largest `x_ij > SUPPORT_TOL` violation of `β_j = α d_ij − γ_i g_ij`.
    pub slackness_residual: f64,
    /// Largest budget or assignment-row overrun of the primal.
    pub primal_residual: f64,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationSolution {
    pub x: Vec<Vec<f64>>,
    pub objective: f64,
    pub integrality: Integrality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<DualCertificate>,
    pub iterations: usize,
}

impl AllocationSolution {
    pub(crate) fn integral(x: Vec<Vec<f64>>, objective: f64) -> Self {
        Self {
            x,
            objective,
            integrality: Integrality::Integral,
            certificate: None,
            iterations: 0,
        }
    }

    /// Model with the largest share per query (ties to the lower index), or
    /// `None` when the row is empty.
    pub fn assignment(&self) -> Vec<Option<usize>> {
        self.x
            .iter()
            .map(|row| {
                let mut best: Option<(usize, f64)> = None;
                for (i, &v) in row.iter().enumerate() {
                    if v > SUPPORT_TOL && best.is_none_or(|(_, b)| v > b) {
                        best = Some((i, v));
                    }
                }
                best.map(|b| b.0)
            })
            .collect()
    }

    /// Queries whose row is neither all-zero nor a single unit entry.
    pub fn fractional_rows(&self) -> Vec<usize> {
        self.x
            .iter()
            .enumerate()
            .filter(|(_, row)| row.iter().any(|&v| v > SUPPORT_TOL && v < 1.0 - SUPPORT_TOL))
            .map(|(j, _)| j)
            .collect()
    }

    /// `Σ_j g_ij x_ij` per model.
    pub fn spend(&self, problem: &AllocationProblem) -> Vec<f64> {
        let mut spend = vec![0.0; problem.num_models()];
        for (row, g) in self.x.iter().zip(&problem.costs) {
            for i in 0..spend.len() {
                spend[i] += g[i] * row[i];
            }
        }
        spend
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Dispatches on `problem.integrality`.
pub fn solve(problem: &AllocationProblem) -> Result<AllocationSolution> {
    match problem.integrality {
        Integrality::Integral => solve_milp_bruteforce(problem),
        Integrality::Fractional => solve_relaxed_lp(problem),
    }
}

/// Optimal fractional allocation with a dual certificate.
pub fn solve_relaxed_lp(problem: &AllocationProblem) -> Result<AllocationSolution> {
    problem.validate()?;
    let m = problem.num_models();
    let n = problem.num_queries();
    let alpha = problem.alpha_or_one();
    let gub = GubProblem {
        rows: m,
        rhs: problem.budgets.clone(),
        sets: n,
        cost: problem.values.iter().flat_map(|r| r.iter().map(|v| alpha * v)).collect(),
        coef: problem.costs.iter().flatten().copied().collect(),
        set_slack: true,
        free: vec![],
    };
    let sol = solve_gub(&gub)?;
    let x: Vec<Vec<f64>> = sol.x.chunks(m.max(1)).map(|c| c.iter().map(|v| v.min(1.0)).collect()).collect();
    let x = if n == 0 { vec![] } else { x };
    let mut out = AllocationSolution {
        objective: primal_objective(problem, &x),
        x,
        integrality: Integrality::Fractional,
        certificate: None,
        iterations: sol.iterations,
    };
    out.certificate = Some(certify(problem, &out, &sol.row_duals));
    Ok(out)
}

fn primal_objective(problem: &AllocationProblem, x: &[Vec<f64>]) -> f64 {
    let alpha = problem.alpha_or_one();
    x.iter()
        .zip(&problem.values)
        .map(|(row, d)| row.iter().zip(d).map(|(a, v)| alpha * v * a).sum::<f64>())
        .sum()
}

/// Builds a feasible dual from raw row duals and measures the residuals.
fn certify(problem: &AllocationProblem, solution: &AllocationSolution, row_duals: &[f64]) -> DualCertificate {
    let alpha = problem.alpha_or_one();
    let gamma: Vec<f64> = row_duals.iter().map(|g| g.max(0.0)).collect();
    let beta: Vec<f64> = problem
        .values
        .iter()
        .zip(&problem.costs)
        .map(|(d, g)| {
            (0..gamma.len())
                .map(|i| alpha * d[i] - gamma[i] * g[i])
                .fold(0.0f64, f64::max)
        })
        .collect();
    let dual_objective =
        gamma.iter().zip(&problem.budgets).map(|(g, b)| g * b).sum::<f64>() + beta.iter().sum::<f64>();
    let primal = solution.objective;
    let scale = primal.abs().max(dual_objective.abs());
    let duality_gap = if scale < 1e-300 {
        0.0
    } else {
        (dual_objective - primal).abs() / scale
    };

    let value_scale = problem
        .values
        .iter()
        .flatten()
        .fold(0.0f64, |a, v| a.max((alpha * v).abs()))
        .max(1e-300);
    let mut slackness_residual = 0.0f64;
    for (j, row) in solution.x.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            if v > SUPPORT_TOL {
                let reduced = alpha * problem.values[j][i] - gamma[i] * problem.costs[j][i];
                slackness_residual = slackness_residual.max((beta[j] - reduced).abs() / value_scale);
            }
        }
    }

    let mut primal_residual = 0.0f64;
    for (i, s) in solution.spend(problem).into_iter().enumerate() {
        let b = problem.budgets[i];
        primal_residual = primal_residual.max((s - b) / b.max(1e-300));
    }
    for row in &solution.x {
        primal_residual = primal_residual.max(row.iter().sum::<f64>() - 1.0);
    }
    let certified = duality_gap <= 1e-6 && slackness_residual <= 1e-6 && primal_residual <= FEASIBILITY_TOL;
    DualCertificate {
        gamma,
        beta,
        dual_objective,
        duality_gap,
        slackness_residual,
        primal_residual,
        certified,
    }
}

/// Integral allocation derived from a fractional one: fractional rows are
/// dropped, then each dropped (and afterwards each unrouted) query is assigned
/// in order to its best-valued model that still fits the leftover budget.
pub fn round_lp_solution(problem: &AllocationProblem, lp: &AllocationSolution) -> AllocationSolution {
    let m = problem.num_models();
    let alpha = problem.alpha_or_one();
    let mut x = vec![vec![0.0; m]; problem.num_queries()];
    let mut spent = vec![0.0; m];
    let mut pending = Vec::new();
    for (j, row) in lp.x.iter().enumerate() {
        match row.iter().position(|&v| v >= 1.0 - SUPPORT_TOL) {
            Some(i) if spent[i] + problem.costs[j][i] <= problem.budgets[i] => {
                x[j][i] = 1.0;
                spent[i] += problem.costs[j][i];
            }
            Some(_) => pending.push(j),
            None if row.iter().any(|&v| v > SUPPORT_TOL) => pending.push(j),
            None => {}
        }
    }
    // leftover budget then goes to queries the LP left out entirely
    let unrouted = (0..x.len()).filter(|&j| lp.x[j].iter().all(|&v| v <= SUPPORT_TOL));
    let pending: Vec<usize> = pending.into_iter().chain(unrouted).collect();
    for j in pending {
        let mut best: Option<(usize, f64)> = None;
        for (i, &s) in spent.iter().enumerate() {
            let v = alpha * problem.values[j][i];
            if v > 0.0 && s + problem.costs[j][i] <= problem.budgets[i] && best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        if let Some((i, _)) = best {
            x[j][i] = 1.0;
            spent[i] += problem.costs[j][i];
        }
    }
    improve_by_exchange(problem, &mut x, &mut spent);
    let objective = primal_objective(problem, &x);
    AllocationSolution::integral(x, objective)
}

/// Single-query local search on an integral allocation. For each query in
/// turn it applies the best of: routing it into spare budget, moving it to a
/// better model, or (when idle) replacing one routed query, which may itself
/// be relocated. Sweeps repeat until a full pass changes nothing.
fn improve_by_exchange(problem: &AllocationProblem, x: &mut [Vec<f64>], spent: &mut [f64]) {
    const MAX_SWEEPS: usize = 50;
    let m = problem.num_models();
    let n = x.len();
    let v = |j: usize, i: usize| problem.values[j][i];
    let c = |j: usize, i: usize| problem.costs[j][i];
    let budgets = &problem.budgets;
    let mut at: Vec<Option<usize>> = x.iter().map(|row| row.iter().position(|&e| e == 1.0)).collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (j, a) in at.iter().enumerate() {
        if let Some(i) = a {
            members[*i].push(j);
        }
    }
    let tol = 1e-12 * problem.values.iter().flatten().fold(1.0f64, |a, b| a.max(b.abs()));
    for _ in 0..MAX_SWEEPS {
        let mut changed = false;
        for j in 0..n {
            let from = at[j];
            let current = from.map_or(0.0, |f| v(j, f));
            // (gain, model, evicted query, evicted destination)
            let mut best: Option<(f64, usize, Option<usize>, Option<usize>)> = None;
            let mut offer = |cand: (f64, usize, Option<usize>, Option<usize>)| {
                if cand.0 > tol && best.is_none_or(|b| cand.0 > b.0) {
                    best = Some(cand);
                }
            };
            for i in 0..m {
                if Some(i) == from || v(j, i) <= current {
                    continue;
                }
                if spent[i] + c(j, i) <= budgets[i] {
                    offer((v(j, i) - current, i, None, None));
                    continue;
                }
                if from.is_some() {
                    continue;
                }
                for &k in &members[i] {
                    if spent[i] - c(k, i) + c(j, i) > budgets[i] {
                        continue;
                    }
                    offer((v(j, i) - v(k, i), i, Some(k), None));
                    for d in 0..m {
                        if d != i && spent[d] + c(k, d) <= budgets[d] {
                            offer((v(j, i) - v(k, i) + v(k, d), i, Some(k), Some(d)));
                        }
                    }
                }
            }
            let Some((_, i, evict, dest)) = best else { continue };
            if let Some(k) = evict {
                unassign(problem, k, i, x, spent, &mut members);
                at[k] = None;
                if let Some(d) = dest {
                    spent[d] += c(k, d);
                    x[k][d] = 1.0;
                    at[k] = Some(d);
                    members[d].push(k);
                }
            }
            if let Some(f) = from {
                unassign(problem, j, f, x, spent, &mut members);
            }
            spent[i] += c(j, i);
            x[j][i] = 1.0;
            at[j] = Some(i);
            members[i].push(j);
            changed = true;
        }
        if !changed {
            break;
        }
    }
}

fn unassign(
    problem: &AllocationProblem,
    q: usize,
    model: usize,
    x: &mut [Vec<f64>],
    spent: &mut [f64],
    members: &mut [Vec<usize>],
) {
    spent[model] -= problem.costs[q][model];
    x[q][model] = 0.0;
    members[model].retain(|&e| e != q);
}

/// Relative gap `(upper - lower) / upper`, zero when `upper` is zero.
pub fn relative_gap(upper: f64, lower: f64) -> f64 {
    if upper.abs() < 1e-300 {
        0.0
    } else {
        (upper - lower) / upper.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimumSummary {
    /// Relaxed LP value (the reference optimum).
    pub value: f64,
    /// Exact integral optimum, present for tiny instances only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub milp_value: Option<f64>,
    /// Value of the rounded integral allocation.
    pub rounded_value: f64,
    /// `(LP − integral) / LP` using the MILP when available, else the rounding.
    pub integrality_gap: f64,
    /// Total true cost of the LP allocation.
    pub cost: f64,
    /// Number of routed queries (`Σ x`).
    pub throughput: f64,
    /// Budgets used to within `1e-6` relative.
    pub binding: Vec<bool>,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineOptima {
    /// Optimum over true scores and costs.
    pub c_opt: OptimumSummary,
    /// Optimum over estimated scores and costs (no α).
    pub c_hat_opt: OptimumSummary,
    /// `(C_opt − Ĉ_opt) / C_opt`.
    pub estimation_gap: f64,
}

/// Instances up to this many assignments are also solved exactly.
const TINY_ASSIGNMENTS: f64 = 1e6;

fn summarize(problem: &AllocationProblem, true_costs: &[Vec<f64>]) -> Result<OptimumSummary> {
    let lp = solve_relaxed_lp(problem)?;
    let rounded = round_lp_solution(problem, &lp);
    let assignments = ((problem.num_models() + 1) as f64).powi(problem.num_queries() as i32);
    let milp_value = if assignments <= TINY_ASSIGNMENTS {
        Some(solve_milp_bruteforce(problem)?.objective)
    } else {
        None
    };
    let spend = lp.spend(problem);
    let binding = spend
        .iter()
        .zip(&problem.budgets)
        .map(|(s, b)| *b - s <= 1e-6 * b.max(1e-300))
        .collect();
    let cost = lp
        .x
        .iter()
        .zip(true_costs)
        .map(|(row, g)| row.iter().zip(g).map(|(a, c)| a * c).sum::<f64>())
        .sum();
    Ok(OptimumSummary {
        value: lp.objective,
        milp_value,
        rounded_value: rounded.objective,
        integrality_gap: relative_gap(lp.objective, milp_value.unwrap_or(rounded.objective)),
        cost,
        throughput: lp.x.iter().flatten().sum(),
        binding,
        certified: lp.certificate.as_ref().is_some_and(|c| c.certified),
    })
}

/// `C_opt` from true features and `Ĉ_opt` from estimates. Reported costs are
/// true costs in both cases.
pub fn offline_optima(
    queries: &[QueryRecord],
    features: &[FeatureEstimate],
    budgets: &BudgetVector,
) -> Result<OfflineOptima> {
    if queries.len() != features.len() {
        return Err(Error::DimensionMismatch {
            expected: queries.len(),
            found: features.len(),
            context: "feature estimates vs queries".into(),
        });
    }
    let true_costs: Vec<Vec<f64>> = queries.iter().map(|q| q.costs.clone()).collect();
    let c_opt = summarize(&AllocationProblem::from_truth(queries, budgets), &true_costs)?;
    let c_hat_opt = summarize(&AllocationProblem::from_estimates(features, budgets), &true_costs)?;
    Ok(OfflineOptima {
        estimation_gap: relative_gap(c_opt.value, c_hat_opt.value),
        c_opt,
        c_hat_opt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(values: Vec<Vec<f64>>, costs: Vec<Vec<f64>>, budgets: Vec<f64>) -> AllocationSolution {
        solve_relaxed_lp(&AllocationProblem::new(values, costs, budgets, Integrality::Fractional)).unwrap()
    }

    #[test]
    fn loose_budgets_pick_best_model() {
        let d = vec![vec![0.2, 0.9, 0.1], vec![0.7, 0.3, 0.5], vec![0.0, 0.1, 0.4]];
        let s = lp(d, vec![vec![1.0; 3]; 3], vec![3.0; 3]);
        assert!((s.objective - 2.0).abs() < 1e-12);
        assert_eq!(s.assignment(), vec![Some(1), Some(0), Some(2)]);
        assert!(s.certificate.unwrap().certified);
    }

    #[test]
    fn fractional_split_on_tight_budget() {
        // one model, budget fits one and a half queries
        let s = lp(vec![vec![1.0], vec![1.0]], vec![vec![2.0], vec![2.0]], vec![3.0]);
        assert!((s.objective - 1.5).abs() < 1e-12);
        assert_eq!(s.fractional_rows().len(), 1);
        let cert = s.certificate.unwrap();
        assert!((cert.gamma[0] - 0.5).abs() < 1e-12);
        assert!(cert.duality_gap < 1e-12);
    }

    #[test]
    fn alpha_scales_objective_only() {
        let p = AllocationProblem::new(
            vec![vec![0.3, 0.8], vec![0.6, 0.5], vec![0.9, 0.2]],
            vec![vec![0.4, 1.0], vec![0.5, 0.7], vec![0.3, 0.9]],
            vec![0.6, 1.2],
            Integrality::Fractional,
        );
        let base = solve_relaxed_lp(&p).unwrap();
        let scaled = solve_relaxed_lp(&p.clone().with_alpha(1e-4)).unwrap();
        assert!((scaled.objective / 1e-4 - base.objective).abs() < 1e-9);
        for (a, b) in base.x.iter().flatten().zip(scaled.x.iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rounding_stays_feasible() {
        let p = AllocationProblem::new(
            vec![vec![1.0], vec![1.0], vec![0.5]],
            vec![vec![2.0], vec![2.0], vec![1.0]],
            vec![3.0],
            Integrality::Fractional,
        );
        let s = solve_relaxed_lp(&p).unwrap();
        let r = round_lp_solution(&p, &s);
        assert!(r.spend(&p)[0] <= 3.0);
        assert_eq!(r.objective, 1.5);
    }

    #[test]
    fn exact_estimates_give_equal_optima() {
        let qs: Vec<QueryRecord> = (0..6)
            .map(|j| {
                let f = j as f64;
                QueryRecord::new(format!("q{j}"), vec![f], vec![0.1 * f, 0.5], vec![0.2 + 0.1 * f, 0.3])
            })
            .collect();
        let feats: Vec<FeatureEstimate> = qs
            .iter()
            .map(|q| FeatureEstimate {
                scores: q.scores.clone(),
                costs: q.costs.clone(),
                neighbor_ids: vec![],
            })
            .collect();
        let budgets = BudgetVector::new(vec![0.8, 0.6]).unwrap();
        let o = offline_optima(&qs, &feats, &budgets).unwrap();
        assert_eq!(o.c_opt.value, o.c_hat_opt.value);
        assert_eq!(o.estimation_gap, 0.0);
        assert!(o.c_opt.milp_value.unwrap() <= o.c_opt.value + 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = AllocationProblem::new(vec![vec![1.0, 2.0]], vec![vec![1.0, 1.0]], vec![1.0, 1.0], Integrality::Integral)
            .with_alpha(0.5);
        let path = dir.path().join("p.json");
        p.write_json(&path).unwrap();
        assert_eq!(AllocationProblem::read_json(&path).unwrap(), p);
    }
}
