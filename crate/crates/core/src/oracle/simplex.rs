//! Revised simplex for allocation LPs with generalized upper bound (GUB) rows.
//!
//! The problem has `m` coupling rows and `n` disjoint GUB sets:
//!
//! ```text
//! max   sum_{j,i} c_ji x_ji + sum_k c_k z_k
//! s.t.  sum_j a_ji x_ji + sum_{k in row i} a_k z_k + s_i = b_i   (i = 1..m)
//!       sum_i x_ji (+ t_j) = 1                                   (j = 1..n)
//!       x, z, s, t >= 0
//! ```
//!
//! Member `x_ji` of set `j` touches only coupling row `i`. Each set keeps one
//! basic "key" variable; the remaining `m` basic variables form an `m x m`
//! working basis, so a pivot costs `O(m^3 + n m)` instead of a factorization of
//! the full `(m + n)`-row basis. Pricing uses Dantzig's rule and switches to
//! Bland's rule after a run of degenerate pivots.

use crate::error::{Error, Result};

/// A column outside every GUB set touching a single coupling row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeColumn {
    pub row: usize,
    pub coef: f64,
    pub cost: f64,
}

#[derive(Debug, Clone)]
pub struct GubProblem {
    pub rows: usize,
    pub rhs: Vec<f64>,
    pub sets: usize,
    /// `cost[j * rows + i]`.
    pub cost: Vec<f64>,
    /// `coef[j * rows + i]`: coefficient of `x_ji` in row `i`.
    pub coef: Vec<f64>,
    /// `true` for `sum_i x_ji <= 1`, `false` for equality.
    pub set_slack: bool,
    /// Extra columns; a zero-cost slack for every row is always added.
    pub free: Vec<FreeColumn>,
}

#[derive(Debug, Clone)]
pub struct GubSolution {
    pub x: Vec<f64>,
    pub free: Vec<f64>,
    pub objective: f64,
    /// Duals of the coupling rows.
    pub row_duals: Vec<f64>,
    /// Duals of the GUB rows.
    pub set_duals: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Var {
    X(u32, u32),
    T(u32),
    F(u32),
}

const OPT_TOL: f64 = 1e-10;
const PIV_TOL: f64 = 1e-9;
const DEGENERATE_RUN: usize = 50;

struct Solver<'a> {
    p: &'a GubProblem,
    m: usize,
    free: Vec<FreeColumn>,
    cost_scale: f64,
    row_scale: Vec<f64>,
    key: Vec<Var>,
    nonkey: Vec<Var>,
    basic: Vec<bool>,
}

impl Var {
    fn set(self) -> Option<usize> {
        match self {
            Var::X(j, _) | Var::T(j) => Some(j as usize),
            Var::F(_) => None,
        }
    }
}

impl<'a> Solver<'a> {
    fn new(p: &'a GubProblem) -> Result<Self> {
        let m = p.rows;
        if p.rhs.len() != m || p.cost.len() != p.sets * m || p.coef.len() != p.sets * m {
            return Err(Error::Solver("inconsistent problem dimensions".into()));
        }
        if p.free.iter().any(|f| f.row >= m) {
            return Err(Error::Solver("free column row out of range".into()));
        }
        let mut free: Vec<FreeColumn> = (0..m)
            .map(|row| FreeColumn {
                row,
                coef: 1.0,
                cost: 0.0,
            })
            .collect();
        free.extend_from_slice(&p.free);

        let max_cost = p
            .cost
            .iter()
            .chain(free.iter().map(|f| &f.cost))
            .fold(0.0f64, |a, c| a.max(c.abs()));
        let cost_scale = if max_cost > 0.0 { 1.0 / max_cost } else { 1.0 };
        let mut row_max = p.rhs.iter().map(|b| b.abs()).collect::<Vec<_>>();
        for j in 0..p.sets {
            for (r, c) in row_max.iter_mut().zip(&p.coef[j * m..(j + 1) * m]) {
                *r = r.max(c.abs());
            }
        }
        let row_scale = row_max.iter().map(|&r| if r > 0.0 { 1.0 / r } else { 1.0 }).collect();

        let mut s = Self {
            p,
            m,
            free,
            cost_scale,
            row_scale,
            key: Vec::with_capacity(p.sets),
            nonkey: Vec::with_capacity(m),
            basic: vec![false; p.sets * m + p.sets + m + p.free.len()],
        };
        s.initial_basis()?;
        Ok(s)
    }

    fn index(&self, v: Var) -> usize {
        let nx = self.p.sets * self.m;
        match v {
            Var::X(j, i) => j as usize * self.m + i as usize,
            Var::T(j) => nx + j as usize,
            Var::F(k) => nx + self.p.sets + k as usize,
        }
    }

    fn cost(&self, v: Var) -> f64 {
        self.cost_scale
            * match v {
                Var::X(j, i) => self.p.cost[j as usize * self.m + i as usize],
                Var::T(_) => 0.0,
                Var::F(k) => self.free[k as usize].cost,
            }
    }

    /// Scaled coupling-row entry of `v`, if any.
    fn column(&self, v: Var) -> Option<(usize, f64)> {
        match v {
            Var::X(j, i) => {
                let i = i as usize;
                Some((i, self.p.coef[j as usize * self.m + i] * self.row_scale[i]))
            }
            Var::T(_) => None,
            Var::F(k) => {
                let f = self.free[k as usize];
                Some((f.row, f.coef * self.row_scale[f.row]))
            }
        }
    }

    fn set_basic(&mut self, v: Var, flag: bool) {
        let idx = self.index(v);
        self.basic[idx] = flag;
    }

    fn initial_basis(&mut self) -> Result<()> {
        let m = self.m;
        let mut load = vec![0.0; m];
        for j in 0..self.p.sets {
            let key = if self.p.set_slack {
                Var::T(j as u32)
            } else {
                // cheapest member relative to its row budget
                let i = (0..m)
                    .min_by(|&a, &b| {
                        let ca = self.p.coef[j * m + a] * self.row_scale[a];
                        let cb = self.p.coef[j * m + b] * self.row_scale[b];
                        ca.total_cmp(&cb)
                    })
                    .unwrap_or(0);
                load[i] += self.p.coef[j * m + i];
                Var::X(j as u32, i as u32)
            };
            self.key.push(key);
            self.set_basic(key, true);
        }
        for (i, &l) in load.iter().enumerate().take(m) {
            let v = if self.p.rhs[i] - l >= 0.0 {
                Var::F(i as u32)
            } else {
                let k = self
                    .free
                    .iter()
                    .enumerate()
                    .skip(m)
                    .find(|(_, f)| f.row == i && f.coef < 0.0)
                    .map(|(k, _)| k)
                    .ok_or_else(|| Error::Solver(format!("no feasible starting basis for row {i}")))?;
                Var::F(k as u32)
            };
            self.nonkey.push(v);
            self.set_basic(v, true);
        }
        Ok(())
    }

    fn working_basis(&self) -> Vec<f64> {
        let m = self.m;
        let mut w = vec![0.0; m * m];
        for (s, &v) in self.nonkey.iter().enumerate() {
            if let Some((r, a)) = self.column(v) {
                w[r * m + s] += a;
            }
            if let Some(j) = v.set() {
                if let Some((r, a)) = self.column(self.key[j]) {
                    w[r * m + s] -= a;
                }
            }
        }
        w
    }

    fn transformed(&self, v: Var) -> Vec<f64> {
        let mut col = vec![0.0; self.m];
        if let Some((r, a)) = self.column(v) {
            col[r] += a;
        }
        if let Some(j) = v.set() {
            if let Some((r, a)) = self.column(self.key[j]) {
                col[r] -= a;
            }
        }
        col
    }

    /// Values of the nonkey basics and of the keys of sets that hold nonkeys.
    fn primal(&self, w: &Lu) -> (Vec<f64>, Vec<(usize, f64)>) {
        let m = self.m;
        let mut rhs: Vec<f64> = (0..m).map(|i| self.p.rhs[i] * self.row_scale[i]).collect();
        for &k in &self.key {
            if let Some((r, a)) = self.column(k) {
                rhs[r] -= a;
            }
        }
        let xn = w.solve(&rhs);
        let mut keys: Vec<(usize, f64)> = Vec::new();
        for (s, &v) in self.nonkey.iter().enumerate() {
            if let Some(j) = v.set() {
                match keys.iter_mut().find(|(jj, _)| *jj == j) {
                    Some(entry) => entry.1 -= xn[s],
                    None => keys.push((j, 1.0 - xn[s])),
                }
            }
        }
        (xn, keys)
    }

    fn duals(&self, w: &Lu) -> (Vec<f64>, Vec<f64>) {
        let ct: Vec<f64> = self
            .nonkey
            .iter()
            .map(|&v| self.cost(v) - v.set().map(|j| self.cost(self.key[j])).unwrap_or(0.0))
            .collect();
        let gamma = w.solve_transposed(&ct);
        let beta = self
            .key
            .iter()
            .map(|&k| self.cost(k) - self.column(k).map(|(r, a)| gamma[r] * a).unwrap_or(0.0))
            .collect();
        (gamma, beta)
    }

    fn reduced_cost(&self, v: Var, gamma: &[f64], beta: &[f64]) -> f64 {
        let mut r = self.cost(v);
        if let Some((row, a)) = self.column(v) {
            r -= gamma[row] * a;
        }
        if let Some(j) = v.set() {
            r -= beta[j];
        }
        r
    }

    fn price(&self, gamma: &[f64], beta: &[f64], bland: bool) -> Option<Var> {
        let m = self.m;
        let mut best: Option<(f64, Var)> = None;
        let mut consider = |v: Var, r: f64| -> bool {
            if r > OPT_TOL && best.is_none_or(|(br, _)| r > br) {
                best = Some((r, v));
                return bland;
            }
            false
        };
        // Variable index order: x, then t, then free columns.
        for j in 0..self.p.sets {
            for i in 0..m {
                let v = Var::X(j as u32, i as u32);
                if self.basic[j * m + i] {
                    continue;
                }
                if consider(v, self.reduced_cost(v, gamma, beta)) {
                    return best.map(|b| b.1);
                }
            }
        }
        if self.p.set_slack {
            for (j, &b) in beta.iter().enumerate().take(self.p.sets) {
                let v = Var::T(j as u32);
                if self.basic[self.index(v)] {
                    continue;
                }
                if consider(v, -b) {
                    return best.map(|b| b.1);
                }
            }
        }
        for k in 0..self.free.len() {
            let v = Var::F(k as u32);
            if self.basic[self.index(v)] {
                continue;
            }
            if consider(v, self.reduced_cost(v, gamma, beta)) {
                return best.map(|b| b.1);
            }
        }
        best.map(|b| b.1)
    }

    fn solve(mut self) -> Result<GubSolution> {
        let max_iter = 50 * (self.p.sets + self.m) + 10_000;
        let mut degenerate = 0usize;
        let mut bland = false;
        for iter in 0..max_iter {
            let w = Lu::factor(self.working_basis(), self.m)
                .ok_or_else(|| Error::Solver(format!("singular working basis at iteration {iter}")))?;
            let (gamma, beta) = self.duals(&w);
            let Some(enter) = self.price(&gamma, &beta, bland) else {
                return Ok(self.finish(&w, &gamma, &beta, iter));
            };
            let y = w.solve(&self.transformed(enter));
            let (xn, keys) = self.primal(&w);
            let enter_set = enter.set();

            // Leaving candidates: nonkey slots and keys of touched sets.
            let mut best: Option<(f64, f64, usize, Leaving)> = None;
            let mut offer = |ratio: f64, pivot: f64, var_index: usize, leaving: Leaving| {
                let better = match &best {
                    None => true,
                    Some((br, bp, bi, _)) => {
                        if ratio < br - 1e-12 {
                            true
                        } else if ratio <= br + 1e-12 {
                            if bland {
                                var_index < *bi
                            } else {
                                pivot > *bp
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    best = Some((ratio, pivot, var_index, leaving));
                }
            };
            for (s, &v) in self.nonkey.iter().enumerate() {
                if y[s] > PIV_TOL {
                    offer(xn[s].max(0.0) / y[s], y[s], self.index(v), Leaving::Nonkey(s));
                }
            }
            let mut touched: Vec<usize> = keys.iter().map(|(j, _)| *j).collect();
            if let Some(je) = enter_set {
                if !touched.contains(&je) {
                    touched.push(je);
                }
            }
            for &j in &touched {
                let mut rate = if Some(j) == enter_set { 1.0 } else { 0.0 };
                for (s, &v) in self.nonkey.iter().enumerate() {
                    if v.set() == Some(j) {
                        rate -= y[s];
                    }
                }
                if rate > PIV_TOL {
                    let value = keys.iter().find(|(jj, _)| *jj == j).map(|(_, v)| *v).unwrap_or(1.0);
                    offer(value.max(0.0) / rate, rate, self.index(self.key[j]), Leaving::Key(j));
                }
            }
            let Some((theta, _, _, leaving)) = best else {
                return Err(Error::Solver("problem is unbounded".into()));
            };

            if theta <= 1e-12 {
                degenerate += 1;
                if degenerate > DEGENERATE_RUN {
                    bland = true;
                }
            } else {
                degenerate = 0;
                bland = false;
            }

            self.set_basic(enter, true);
            match leaving {
                Leaving::Nonkey(s) => {
                    self.set_basic(self.nonkey[s], false);
                    self.nonkey[s] = enter;
                }
                Leaving::Key(j) => {
                    self.set_basic(self.key[j], false);
                    if enter_set == Some(j) {
                        self.key[j] = enter;
                    } else {
                        let s = self
                            .nonkey
                            .iter()
                            .enumerate()
                            .filter(|(_, v)| v.set() == Some(j))
                            .max_by(|a, b| y[a.0].abs().total_cmp(&y[b.0].abs()))
                            .map(|(s, _)| s)
                            .ok_or_else(|| Error::Solver("key left without a replacement".into()))?;
                        self.key[j] = self.nonkey[s];
                        self.nonkey[s] = enter;
                    }
                }
            }
        }
        Err(Error::Solver(format!("iteration limit {max_iter} reached")))
    }

    fn finish(&self, w: &Lu, gamma: &[f64], beta: &[f64], iterations: usize) -> GubSolution {
        let m = self.m;
        let (xn, keys) = self.primal(w);
        let mut x = vec![0.0; self.p.sets * m];
        let mut free = vec![0.0; self.free.len()];
        let assign = |v: Var, val: f64, x: &mut Vec<f64>, free: &mut Vec<f64>| match v {
            Var::X(j, i) => x[j as usize * m + i as usize] = val.max(0.0),
            Var::T(_) => {}
            Var::F(k) => free[k as usize] = val.max(0.0) / self.row_scale[self.free[k as usize].row],
        };
        for (j, &k) in self.key.iter().enumerate() {
            let val = keys.iter().find(|(jj, _)| *jj == j).map(|(_, v)| *v).unwrap_or(1.0);
            assign(k, val, &mut x, &mut free);
        }
        for (s, &v) in self.nonkey.iter().enumerate() {
            assign(v, xn[s], &mut x, &mut free);
        }
        let objective = x.iter().zip(&self.p.cost).map(|(a, c)| a * c).sum::<f64>()
            + free.iter().zip(&self.free).map(|(a, f)| a * f.cost).sum::<f64>();
        GubSolution {
            x,
            free: free[m..].to_vec(),
            objective,
            row_duals: gamma
                .iter()
                .zip(&self.row_scale)
                .map(|(g, s)| g * s / self.cost_scale)
                .collect(),
            set_duals: beta.iter().map(|b| b / self.cost_scale).collect(),
            iterations,
        }
    }
}

enum Leaving {
    Nonkey(usize),
    Key(usize),
}

/// Dense LU with partial pivoting for the small working basis.
struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    fn factor(mut a: Vec<f64>, n: usize) -> Option<Self> {
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let p = (k..n).max_by(|&x, &y| a[x * n + k].abs().total_cmp(&a[y * n + k].abs()))?;
            if a[p * n + k].abs() < 1e-14 {
                return None;
            }
            if p != k {
                for c in 0..n {
                    a.swap(p * n + c, k * n + c);
                }
                perm.swap(p, k);
            }
            let pivot = a[k * n + k];
            for r in k + 1..n {
                let f = a[r * n + k] / pivot;
                a[r * n + k] = f;
                if f != 0.0 {
                    for c in k + 1..n {
                        a[r * n + c] -= f * a[k * n + c];
                    }
                }
            }
        }
        Some(Self { n, lu: a, perm })
    }

    /// Solves `A x = b`.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            for c in 0..r {
                x[r] -= self.lu[r * n + c] * x[c];
            }
        }
        for r in (0..n).rev() {
            for c in r + 1..n {
                x[r] -= self.lu[r * n + c] * x[c];
            }
            x[r] /= self.lu[r * n + r];
        }
        x
    }

    /// Solves `A^T x = b`.
    fn solve_transposed(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        // A = P^T L U  =>  A^T = U^T L^T P
        let mut z = b.to_vec();
        for r in 0..n {
            for c in 0..r {
                z[r] -= self.lu[c * n + r] * z[c];
            }
            z[r] /= self.lu[r * n + r];
        }
        for r in (0..n).rev() {
            for c in r + 1..n {
                z[r] -= self.lu[c * n + r] * z[c];
            }
        }
        let mut x = vec![0.0; n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = z[k];
        }
        x
    }
}

pub fn solve_gub(problem: &GubProblem) -> Result<GubSolution> {
    if problem.rhs.iter().any(|b| !b.is_finite() || *b < 0.0) {
        return Err(Error::Solver("right-hand sides must be finite and nonnegative".into()));
    }
    if problem.sets == 0 && problem.free.is_empty() {
        return Ok(GubSolution {
            x: vec![],
            free: vec![],
            objective: 0.0,
            row_duals: vec![0.0; problem.rows],
            set_duals: vec![],
            iterations: 0,
        });
    }
    if problem.rows == 0 {
        return Err(Error::Solver("problem needs at least one coupling row".into()));
    }
    Solver::new(problem)?.solve()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_solves_both_ways() {
        let a = vec![0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0];
        let lu = Lu::factor(a.clone(), 3).unwrap();
        let b = [1.0, 2.0, 3.0];
        let x = lu.solve(&b);
        for r in 0..3 {
            let s: f64 = (0..3).map(|c| a[r * 3 + c] * x[c]).sum();
            assert!((s - b[r]).abs() < 1e-12);
        }
        let y = lu.solve_transposed(&b);
        for c in 0..3 {
            let s: f64 = (0..3).map(|r| a[r * 3 + c] * y[r]).sum();
            assert!((s - b[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn two_queries_one_tight_budget() {
        // max 3x00 + 1x01 + 2x10 + 1x11, budget row 0: x00 + x10 <= 1, row 1 loose
        let p = GubProblem {
            rows: 2,
            rhs: vec![1.0, 10.0],
            sets: 2,
            cost: vec![3.0, 1.0, 2.0, 1.0],
            coef: vec![1.0, 1.0, 1.0, 1.0],
            set_slack: true,
            free: vec![],
        };
        let s = solve_gub(&p).unwrap();
        assert!((s.objective - 4.0).abs() < 1e-9, "{s:?}");
        assert!((s.x[0] - 1.0).abs() < 1e-9);
        assert!((s.x[3] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn equality_sets_with_overdraft() {
        // every set must be fully assigned; overdraft on row 0 costs 10 per unit
        let p = GubProblem {
            rows: 1,
            rhs: vec![0.5],
            sets: 1,
            cost: vec![1.0],
            coef: vec![1.0],
            set_slack: false,
            free: vec![FreeColumn {
                row: 0,
                coef: -1.0,
                cost: -10.0,
            }],
        };
        let s = solve_gub(&p).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12);
        assert!((s.free[0] - 0.5).abs() < 1e-9);
        assert!((s.objective - (1.0 - 5.0)).abs() < 1e-9);
    }
}
