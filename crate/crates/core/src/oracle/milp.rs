use crate::error::{Error, Result};

use super::{AllocationProblem, AllocationSolution};

/// Largest `(M + 1)^|Q|` the enumerator accepts.
pub const MAX_ASSIGNMENTS: f64 = 1e7;

/// Exhaustive search over all assignments (each query to one model or to
/// nobody). Assignments are visited in lexicographic order with "unrouted"
/// before model 0, and only a strictly better value replaces the incumbent, so
/// the lexicographically smallest maximizer is returned.
pub fn solve_milp_bruteforce(problem: &AllocationProblem) -> Result<AllocationSolution> {
    problem.validate()?;
    let n = problem.num_queries();
    let m = problem.num_models();
    let assignments = ((m + 1) as f64).powi(n as i32);
    if assignments > MAX_ASSIGNMENTS {
        return Err(Error::InstanceTooLarge {
            assignments,
            limit: MAX_ASSIGNMENTS,
        });
    }
    let alpha = problem.alpha_or_one();

    // choice[q]: 0 = unrouted, i + 1 = model i
    let mut choice = vec![0usize; n];
    // prefix_value[q] / prefix_cost[q*m + i]: sums over queries before q
    let mut prefix_value = vec![0.0; n + 1];
    let mut prefix_cost = vec![0.0; (n + 1) * m];
    let mut best_value = f64::NEG_INFINITY;
    let mut best = vec![0usize; n];

    // Iterative depth-first walk; `q` is the next query to place.
    let mut q = 0usize;
    loop {
        if q == n {
            if prefix_value[n] > best_value {
                best_value = prefix_value[n];
                best.copy_from_slice(&choice);
            }
            // backtrack to the deepest query with an untried option
            loop {
                if q == 0 {
                    return Ok(finish(problem, &best, best_value));
                }
                q -= 1;
                if advance(problem, alpha, q, &mut choice, &mut prefix_value, &mut prefix_cost) {
                    q += 1;
                    break;
                }
            }
            continue;
        }
        // first option (unrouted) is always feasible
        choice[q] = 0;
        prefix_value[q + 1] = prefix_value[q];
        let (head, tail) = prefix_cost.split_at_mut((q + 1) * m);
        tail[..m].copy_from_slice(&head[q * m..]);
        q += 1;
    }
}

/// Moves query `q` to its next budget-feasible model. Returns `false` when
/// every option has been tried.
fn advance(
    problem: &AllocationProblem,
    alpha: f64,
    q: usize,
    choice: &mut [usize],
    prefix_value: &mut [f64],
    prefix_cost: &mut [f64],
) -> bool {
    let m = problem.num_models();
    let mut next = choice[q] + 1;
    while next <= m {
        let i = next - 1;
        let spent = prefix_cost[q * m + i] + problem.costs[q][i];
        if spent <= problem.budgets[i] {
            choice[q] = next;
            prefix_value[q + 1] = prefix_value[q] + alpha * problem.values[q][i];
            let (head, tail) = prefix_cost.split_at_mut((q + 1) * m);
            tail[..m].copy_from_slice(&head[q * m..]);
            tail[i] = spent;
            return true;
        }
        next += 1;
    }
    false
}

fn finish(problem: &AllocationProblem, best: &[usize], value: f64) -> AllocationSolution {
    let m = problem.num_models();
    let x = best
        .iter()
        .map(|&c| {
            let mut row = vec![0.0; m];
            if c > 0 {
                row[c - 1] = 1.0;
            }
            row
        })
        .collect();
    AllocationSolution::integral(x, if best.is_empty() { 0.0 } else { value })
}
