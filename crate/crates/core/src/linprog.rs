//! Dense linear programming: a standard-form container, a two-phase primal
//! simplex with Bland's rule, and a brute-force vertex enumerator used as an
//! independent cross-check on small programs.
//!
//! Programs have the form `min c^T x` subject to `A x = b`, where every
//! variable is either nonnegative or free. The simplex splits free variables
//! into a difference of nonnegative parts; the enumerator keeps them whole.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum equality residual accepted on an optimal solution (scaled by `max(1, |b|)`).
pub const FEASIBILITY_TOL: f64 = 1e-8;
/// Smallest pivot magnitude the simplex will divide by.
pub const PIVOT_TOL: f64 = 1e-11;
const OPTIMALITY_TOL: f64 = 1e-9;
const NOISE_TOL: f64 = 1e-13;
const MAX_PIVOTS: usize = 200_000;
/// Upper bound on candidate bases visited by [`enumerate_vertices`].
pub const MAX_ENUMERATED_BASES: u128 = 50_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("row {row} references variable {var} but the program has {vars} variables")]
    UnknownVariable { row: usize, var: usize, vars: usize },
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("pivot limit of {0} reached")]
    IterationLimit(usize),
    #[error("vertex enumeration would visit {bases} bases (limit {limit})")]
    GuardExceeded { bases: u128, limit: u128 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarBound {
    NonNegative,
    Free,
}

/// `min c^T x` s.t. `A x = b`, `x_j >= 0` unless marked free.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    names: Vec<String>,
    objective: Vec<f64>,
    bounds: Vec<VarBound>,
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, name: impl Into<String>, cost: f64, bound: VarBound) -> usize {
        self.names.push(name.into());
        self.objective.push(cost);
        self.bounds.push(bound);
        self.names.len() - 1
    }

    /// Adds the row `sum coef * x_var = rhs`; repeated variables accumulate.
    pub fn add_row(&mut self, terms: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.rows.push(terms);
        self.rhs.push(rhs);
        self.rows.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn bounds(&self) -> &[VarBound] {
        &self.bounds
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn row(&self, r: usize) -> &[(usize, f64)] {
        &self.rows[r]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let vars = self.num_vars();
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite("objective"));
        }
        if self.rhs.iter().any(|v| !v.is_finite()) {
            return Err(LpError::NonFinite("right-hand side"));
        }
        for (row, terms) in self.rows.iter().enumerate() {
            for &(var, coef) in terms {
                if var >= vars {
                    return Err(LpError::UnknownVariable { row, var, vars });
                }
                if !coef.is_finite() {
                    return Err(LpError::NonFinite("constraint matrix"));
                }
            }
        }
        Ok(())
    }

    /// Dense row-major copy of `A`.
    pub fn dense_rows(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|terms| {
                let mut row = vec![0.0; self.num_vars()];
                for &(var, coef) in terms {
                    row[var] += coef;
                }
                row
            })
            .collect()
    }

    /// `max_r |(A x)_r - b_r|`.
    pub fn max_residual(&self, x: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(&self.rhs)
            .map(|(terms, b)| {
                let ax: f64 = terms.iter().map(|&(v, c)| c * x[v]).sum();
                (ax - b).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Human-readable listing with a fixed ordering, suitable for diffing.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let term = |out: &mut String, coef: f64, var: usize| {
            let sign = if coef < 0.0 { '-' } else { '+' };
            let _ = write!(out, " {sign} {:?} {}", coef.abs(), self.names[var]);
        };
        out.push_str("minimize\n ");
        for (var, &coef) in self.objective.iter().enumerate() {
            if coef != 0.0 {
                term(&mut out, coef, var);
            }
        }
        out.push_str("\nsubject to\n");
        for (r, terms) in self.rows.iter().enumerate() {
            let _ = write!(out, "  r{r}:");
            let mut sorted = terms.clone();
            sorted.sort_by_key(|&(v, _)| v);
            for (var, coef) in sorted {
                term(&mut out, coef, var);
            }
            let _ = writeln!(out, " = {:?}", self.rhs[r]);
        }
        out.push_str("bounds\n");
        for (var, bound) in self.bounds.iter().enumerate() {
            match bound {
                VarBound::NonNegative => {
                    let _ = writeln!(out, "  {} >= 0", self.names[var]);
                }
                VarBound::Free => {
                    let _ = writeln!(out, "  {} free", self.names[var]);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal values in variable order; empty unless optimal.
    pub x: Vec<f64>,
    /// `+inf` when infeasible, `-inf` when unbounded.
    pub objective: f64,
    pub iterations: usize,
    /// Whether each variable is basic (a free variable counts if either part is).
    pub basic: Vec<bool>,
    /// Reduced costs in variable order; exactly zero on basic variables.
    pub reduced_costs: Vec<f64>,
    /// Sum of artificial variables at the end of phase one.
    pub phase_one_residual: f64,
    names: Vec<String>,
}

impl LpSolution {
    pub fn value(&self, name: &str) -> Option<f64> {
        let k = self.names.iter().position(|n| n == name)?;
        self.x.get(k).copied()
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    fn terminal(lp: &LinearProgram, status: LpStatus, iterations: usize, phase_one: f64) -> Self {
        let objective = match status {
            LpStatus::Infeasible => f64::INFINITY,
            LpStatus::Unbounded => f64::NEG_INFINITY,
            LpStatus::Optimal => unreachable!(),
        };
        Self {
            status,
            x: Vec::new(),
            objective,
            iterations,
            basic: Vec::new(),
            reduced_costs: Vec::new(),
            phase_one_residual: phase_one,
            names: lp.names.clone(),
        }
    }
}

/// Dense simplex tableau. Column `cols` holds the right-hand side; `cost`
/// holds reduced costs with the negated objective value in its last slot.
struct Tableau {
    cols: usize,
    rows: Vec<Vec<f64>>,
    cost: Vec<f64>,
    basis: Vec<usize>,
}

enum Outcome {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn pivot(&mut self, r: usize, e: usize) {
        let pv = self.rows[r][e];
        for v in self.rows[r].iter_mut() {
            *v /= pv;
        }
        let pivot_row = std::mem::take(&mut self.rows[r]);
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[e];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                row[e] = 0.0;
            }
        }
        let f = self.cost[e];
        if f != 0.0 {
            for (v, p) in self.cost.iter_mut().zip(&pivot_row) {
                *v -= f * p;
            }
            self.cost[e] = 0.0;
        }
        self.rows[r] = pivot_row;
        self.basis[r] = e;
    }

    /// Bland's rule: lowest-index improving column enters; among tied ratios
    /// the lowest-index basic variable leaves.
    fn run(&mut self, eligible: usize, iterations: &mut usize) -> Result<Outcome, LpError> {
        let rhs = self.cols;
        loop {
            let Some(e) = (0..eligible).find(|&j| self.cost[j] < -OPTIMALITY_TOL) else {
                return Ok(Outcome::Optimal);
            };
            let mut leave: Option<(usize, f64)> = None;
            let mut tiny = false;
            for (i, row) in self.rows.iter().enumerate() {
                let a = row[e];
                if a > PIVOT_TOL {
                    let ratio = row[rhs].max(0.0) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            let tie = (ratio - br).abs() <= 1e-12 * (1.0 + br.abs());
                            if (tie && self.basis[i] < self.basis[bi]) || (!tie && ratio < br) {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                } else if a > NOISE_TOL {
                    tiny = true;
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, e),
                None if tiny => {
                    return Err(LpError::NumericalBreakdown(format!(
                        "column {e} has only pivots below {PIVOT_TOL:e}"
                    )))
                }
                None => return Ok(Outcome::Unbounded),
            }
            *iterations += 1;
            if *iterations > MAX_PIVOTS {
                return Err(LpError::IterationLimit(MAX_PIVOTS));
            }
        }
    }
}

/// Two-phase primal simplex with Bland's anti-cycling rule.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let dense = lp.dense_rows();
    let n_rows = lp.num_rows();

    // column layout after splitting free variables into (plus, minus)
    let mut col_of = Vec::with_capacity(lp.num_vars());
    let mut cols = 0;
    for bound in &lp.bounds {
        col_of.push(cols);
        cols += match bound {
            VarBound::NonNegative => 1,
            VarBound::Free => 2,
        };
    }
    let n_struct = cols;
    let split_row = |row: &[f64]| {
        let mut out = vec![0.0; n_struct];
        for (var, &a) in row.iter().enumerate() {
            out[col_of[var]] = a;
            if lp.bounds[var] == VarBound::Free {
                out[col_of[var] + 1] = -a;
            }
        }
        out
    };
    let mut split_cost = vec![0.0; n_struct];
    for (var, &c) in lp.objective.iter().enumerate() {
        split_cost[col_of[var]] = c;
        if lp.bounds[var] == VarBound::Free {
            split_cost[col_of[var] + 1] = -c;
        }
    }
    let b_scale = lp.rhs.iter().fold(1.0_f64, |acc, b| acc.max(b.abs()));

    // phase one: one artificial per row, rows sign-normalized so b >= 0
    let total = n_struct + n_rows;
    let mut rows = Vec::with_capacity(n_rows);
    for (r, row) in dense.iter().enumerate() {
        let sign = if lp.rhs[r] < 0.0 { -1.0 } else { 1.0 };
        let mut t = vec![0.0; total + 1];
        for (k, a) in split_row(row).into_iter().enumerate() {
            t[k] = sign * a;
        }
        t[n_struct + r] = 1.0;
        t[total] = sign * lp.rhs[r];
        rows.push(t);
    }
    let mut cost = vec![0.0; total + 1];
    for row in &rows {
        for k in 0..n_struct {
            cost[k] -= row[k];
        }
        cost[total] -= row[total];
    }
    let mut tab = Tableau {
        cols: total,
        rows,
        cost,
        basis: (n_struct..total).collect(),
    };
    let mut iterations = 0;
    if let Outcome::Unbounded = tab.run(total, &mut iterations)? {
        return Err(LpError::NumericalBreakdown(
            "phase one reported an unbounded ray".into(),
        ));
    }
    let phase_one = (-tab.cost[total]).max(0.0);
    if phase_one > FEASIBILITY_TOL * b_scale {
        return Ok(LpSolution::terminal(
            lp,
            LpStatus::Infeasible,
            iterations,
            phase_one,
        ));
    }

    // drive remaining artificials out of the basis; rows that cannot pivot are redundant
    let mut keep = vec![true; tab.rows.len()];
    for r in 0..tab.rows.len() {
        if tab.basis[r] < n_struct {
            continue;
        }
        let best = (0..n_struct)
            .map(|k| (k, tab.rows[r][k].abs()))
            .filter(|&(_, a)| a > PIVOT_TOL)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((k, _)) => tab.pivot(r, k),
            None => keep[r] = false,
        }
    }
    let mut kept_rows = Vec::new();
    let mut basis = Vec::new();
    for (r, row) in tab.rows.into_iter().enumerate() {
        if keep[r] {
            let mut t = row[..n_struct].to_vec();
            t.push(row[total]);
            kept_rows.push(t);
            basis.push(tab.basis[r]);
        }
    }

    // phase two
    let mut cost = split_cost.clone();
    cost.push(0.0);
    for (row, &bv) in kept_rows.iter().zip(&basis) {
        let cb = split_cost[bv];
        if cb != 0.0 {
            for (v, a) in cost.iter_mut().zip(row) {
                *v -= cb * a;
            }
        }
    }
    let mut tab = Tableau {
        cols: n_struct,
        rows: kept_rows,
        cost,
        basis,
    };
    if let Outcome::Unbounded = tab.run(n_struct, &mut iterations)? {
        return Ok(LpSolution::terminal(
            lp,
            LpStatus::Unbounded,
            iterations,
            phase_one,
        ));
    }

    // recompute basic values from the original data rather than the updated tableau
    let kept_idx: Vec<usize> = (0..n_rows).filter(|&r| keep[r]).collect();
    let dim = tab.basis.len();
    let mut split_x = vec![0.0; n_struct];
    if dim > 0 {
        let mut bmat = vec![0.0; dim * dim];
        let mut bvec = vec![0.0; dim];
        for (ri, &r) in kept_idx.iter().enumerate() {
            let srow = split_row(&dense[r]);
            for (ci, &bv) in tab.basis.iter().enumerate() {
                bmat[ri * dim + ci] = srow[bv];
            }
            bvec[ri] = lp.rhs[r];
        }
        let refined = DenseLu::factor(bmat, dim, 1e-14).map(|lu| lu.solve(&bvec));
        for (ci, &bv) in tab.basis.iter().enumerate() {
            let tableau_value = tab.rows[ci][n_struct];
            let value = refined.as_ref().map_or(tableau_value, |v| v[ci]);
            split_x[bv] = value.max(0.0);
        }
    }

    let mut x = vec![0.0; lp.num_vars()];
    let mut basic = vec![false; lp.num_vars()];
    let mut reduced_costs = vec![0.0; lp.num_vars()];
    let in_basis: Vec<bool> = {
        let mut v = vec![false; n_struct];
        for &bv in &tab.basis {
            v[bv] = true;
        }
        v
    };
    for var in 0..lp.num_vars() {
        let k = col_of[var];
        match lp.bounds[var] {
            VarBound::NonNegative => {
                x[var] = split_x[k];
                basic[var] = in_basis[k];
            }
            VarBound::Free => {
                x[var] = split_x[k] - split_x[k + 1];
                basic[var] = in_basis[k] || in_basis[k + 1];
            }
        }
        reduced_costs[var] = if basic[var] { 0.0 } else { tab.cost[k] };
    }
    let residual = lp.max_residual(&x);
    if residual > FEASIBILITY_TOL * b_scale {
        return Err(LpError::NumericalBreakdown(format!(
            "equality residual {residual:e} at the final basis"
        )));
    }
    let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
        iterations,
        basic,
        reduced_costs,
        phase_one_residual: phase_one,
        names: lp.names.clone(),
    })
}

/// LU factorization with partial pivoting of a small dense square matrix.
pub(crate) struct DenseLu {
    lu: Vec<f64>,
    perm: Vec<usize>,
    n: usize,
}

impl DenseLu {
    /// Returns `None` when a pivot falls below `rel_tol * max|a|`.
    pub(crate) fn factor(mut a: Vec<f64>, n: usize, rel_tol: f64) -> Option<Self> {
        let scale = a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if n > 0 && scale == 0.0 {
            return None;
        }
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pv) = (k..n)
                .map(|i| (i, a[i * n + k].abs()))
                .max_by(|x, y| x.1.total_cmp(&y.1))?;
            if pv <= rel_tol * scale {
                return None;
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let d = a[k * n + k];
            for i in k + 1..n {
                let f = a[i * n + k] / d;
                a[i * n + k] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        a[i * n + j] -= f * a[k * n + j];
                    }
                }
            }
        }
        Some(Self { lu: a, perm, n })
    }

    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.lu[i * n + k] * y[k];
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                y[i] -= self.lu[i * n + k] * y[k];
            }
            y[i] /= self.lu[i * n + i];
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertexResult {
    pub status: LpStatus,
    /// Best vertex in variable order; empty unless optimal.
    pub x: Vec<f64>,
    pub objective: f64,
    pub bases_examined: usize,
    pub feasible_vertices: usize,
}

fn rank(rows: &[Vec<f64>]) -> usize {
    if rows.is_empty() || rows[0].is_empty() {
        return 0;
    }
    let m = nalgebra::DMatrix::from_fn(rows.len(), rows[0].len(), |r, c| rows[r][c]);
    m.rank(1e-9 * (1.0 + m.amax()))
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Gauss-Jordan form of the columns chosen so far, stored flat with stride
/// `size`. Pivot `k` sits in row `rows[k]`; `pivots[k]` is the unit vector at
/// that row, written as the image of `coefs[k]` (weights over basis positions).
#[derive(Clone)]
struct Frame {
    rows: Vec<usize>,
    pivots: Vec<f64>,
    coefs: Vec<f64>,
}

impl Frame {
    fn new(size: usize) -> Self {
        Self {
            rows: Vec::with_capacity(size),
            pivots: vec![0.0; size * size],
            coefs: vec![0.0; size * size],
        }
    }

    /// Writes `from` plus column `a` into `self`; `false` if `a` is dependent.
    fn extend_from(&mut self, from: &Frame, a: &[f64], size: usize) -> bool {
        let k = from.rows.len();
        let scale = a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if scale == 0.0 {
            return false;
        }
        self.rows.clear();
        self.rows.extend_from_slice(&from.rows);
        self.pivots[..k * size].copy_from_slice(&from.pivots[..k * size]);
        self.coefs[..k * size].copy_from_slice(&from.coefs[..k * size]);
        let (old_p, new_p) = self.pivots.split_at_mut(k * size);
        let (old_t, new_t) = self.coefs.split_at_mut(k * size);
        let v = &mut new_p[..size];
        let t = &mut new_t[..size];
        v.copy_from_slice(a);
        t.fill(0.0);
        t[k] = 1.0;
        for (l, &row) in self.rows.iter().enumerate() {
            let f = v[row];
            if f != 0.0 {
                let (p, tc) = (
                    &old_p[l * size..(l + 1) * size],
                    &old_t[l * size..(l + 1) * size],
                );
                v.iter_mut().zip(p).for_each(|(x, y)| *x -= f * y);
                t.iter_mut().zip(tc).for_each(|(x, y)| *x -= f * y);
            }
        }
        let mut best: Option<(usize, f64)> = None;
        for (r, &value) in v.iter().enumerate() {
            if !self.rows.contains(&r) && best.is_none_or(|(_, b)| value.abs() > b.abs()) {
                best = Some((r, value));
            }
        }
        let Some((row, pivot)) = best else {
            return false;
        };
        if pivot.abs() <= 1e-10 * scale {
            return false;
        }
        v.iter_mut().for_each(|x| *x /= pivot);
        t.iter_mut().for_each(|x| *x /= pivot);
        v[row] = 1.0;
        for l in 0..k {
            let p = &mut old_p[l * size..(l + 1) * size];
            let g = p[row];
            if g != 0.0 {
                p.iter_mut().zip(v.iter()).for_each(|(x, y)| *x -= g * y);
                p[row] = 0.0;
                old_t[l * size..(l + 1) * size]
                    .iter_mut()
                    .zip(t.iter())
                    .for_each(|(x, y)| *x -= g * y);
            }
        }
        self.rows.push(row);
        true
    }

    /// `B^{-1} b` over basis positions, for a complete basis.
    fn solve(&self, b: &[f64], size: usize) -> Vec<f64> {
        let mut x = vec![0.0; size];
        for (l, &row) in self.rows.iter().enumerate() {
            let f = b[row];
            if f != 0.0 {
                x.iter_mut()
                    .zip(&self.coefs[l * size..(l + 1) * size])
                    .for_each(|(a, y)| *a += f * y);
            }
        }
        x
    }
}

struct BasisSearch<'a> {
    columns: Vec<Vec<f64>>,
    kept_b: &'a [f64],
    c: &'a [f64],
    nonneg: &'a [usize],
    fixed: usize,
    rank: usize,
    nv: usize,
    consistent: bool,
    frames: Vec<Frame>,
    basis: Vec<usize>,
    best: Option<(f64, Vec<f64>)>,
    improving_ray: bool,
    examined: usize,
    feasible: usize,
}

impl BasisSearch<'_> {
    /// Adds column `j` on top of frame `depth`; `false` if it is dependent.
    fn push(&mut self, depth: usize, j: usize) -> bool {
        let (lower, upper) = self.frames.split_at_mut(depth + 1);
        if upper[0].extend_from(&lower[depth], &self.columns[j], self.rank) {
            self.basis.truncate(depth);
            self.basis.push(j);
            true
        } else {
            false
        }
    }

    /// Extends the basis with nonnegative columns from `start` on, skipping
    /// every superset of a dependent prefix.
    fn descend(&mut self, depth: usize, start: usize) {
        if depth == self.rank {
            self.visit();
            return;
        }
        let missing = self.rank - depth;
        for s in start..self.nonneg.len() {
            if self.nonneg.len() - s < missing {
                break;
            }
            if self.push(depth, self.nonneg[s]) {
                self.descend(depth + 1, s + 1);
            }
        }
    }

    fn visit(&mut self) {
        self.examined += 1;
        let frame = &self.frames[self.rank];
        let xb = frame.solve(self.kept_b, self.rank);
        let xscale = xb.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
        if !self.consistent || xb[self.fixed..].iter().any(|&v| v < -1e-9 * xscale) {
            return;
        }
        self.feasible += 1;
        let mut x = vec![0.0; self.nv];
        for (k, &j) in self.basis.iter().enumerate() {
            x[j] = if k >= self.fixed {
                xb[k].max(0.0)
            } else {
                xb[k]
            };
        }
        let obj: f64 = self.c.iter().zip(&x).map(|(a, b)| a * b).sum();
        let better = match &self.best {
            None => true,
            Some((bo, _)) => obj < bo - 1e-12 * (1.0 + bo.abs()),
        };
        if better {
            self.best = Some((obj, x));
        }
        // a feasible unbounded LP always shows its ray at some feasible basis
        if self.improving_ray {
            return;
        }
        for &j in self.nonneg {
            if self.basis.contains(&j) {
                continue;
            }
            let d = frame.solve(&self.columns[j], self.rank);
            // direction: x_j = 1, x_B = -B^{-1} a_j
            let dscale = d.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
            if d[self.fixed..].iter().any(|&v| v > 1e-9 * dscale) {
                continue;
            }
            let cost_along = self.c[j]
                - self
                    .basis
                    .iter()
                    .zip(&d)
                    .map(|(&k, v)| self.c[k] * v)
                    .sum::<f64>();
            if cost_along < -OPTIMALITY_TOL * dscale {
                self.improving_ray = true;
                return;
            }
        }
    }
}

/// Brute-force LP oracle: visits every basis, keeps the best feasible vertex,
/// and checks every basis/entering-column pair for an improving extreme ray.
///
/// Free variables are kept unsplit: a maximal independent subset of free
/// columns is forced into every basis, the remaining free columns are fixed at
/// zero after checking that they do not open an improving line.
pub fn enumerate_vertices(lp: &LinearProgram) -> Result<VertexResult, LpError> {
    lp.validate()?;
    let dense = lp.dense_rows();
    let nv = lp.num_vars();
    let c = &lp.objective;

    // independent rows, with an inconsistency check on the augmented system
    let mut kept: Vec<Vec<f64>> = Vec::new();
    let mut kept_b: Vec<f64> = Vec::new();
    let mut infeasible = false;
    for (r, row) in dense.iter().enumerate() {
        let mut trial = kept.clone();
        trial.push(row.clone());
        if rank(&trial) > kept.len() {
            kept = trial;
            kept_b.push(lp.rhs[r]);
        } else {
            let aug = |rows: &[Vec<f64>], bs: &[f64]| {
                rows.iter()
                    .zip(bs)
                    .map(|(row, b)| {
                        let mut v = row.clone();
                        v.push(*b);
                        v
                    })
                    .collect::<Vec<_>>()
            };
            let mut bs = kept_b.clone();
            bs.push(lp.rhs[r]);
            if rank(&aug(&trial, &bs)) > kept.len() {
                infeasible = true;
            }
        }
    }
    let rank_a = kept.len();
    let column = |j: usize| kept.iter().map(|row| row[j]).collect::<Vec<f64>>();

    let free: Vec<usize> = (0..nv)
        .filter(|&j| lp.bounds[j] == VarBound::Free)
        .collect();
    let nonneg: Vec<usize> = (0..nv)
        .filter(|&j| lp.bounds[j] == VarBound::NonNegative)
        .collect();
    let mut free_basic: Vec<usize> = Vec::new();
    let mut free_dependent: Vec<usize> = Vec::new();
    for &j in &free {
        let mut cols: Vec<Vec<f64>> = free_basic.iter().map(|&k| column(k)).collect();
        cols.push(column(j));
        if rank(&cols) > free_basic.len() {
            free_basic.push(j);
        } else {
            free_dependent.push(j);
        }
    }
    let mut improving_line = false;
    for &j in &free_dependent {
        let cost_along = if free_basic.is_empty() {
            c[j]
        } else {
            let fb =
                nalgebra::DMatrix::from_fn(rank_a, free_basic.len(), |r, k| kept[r][free_basic[k]]);
            let target = nalgebra::DVector::from_vec(column(j));
            let lambda = fb
                .svd(true, true)
                .solve(&target, 1e-12)
                .map_err(|e| LpError::NumericalBreakdown(e.to_string()))?;
            c[j] - free_basic
                .iter()
                .zip(lambda.iter())
                .map(|(&k, l)| c[k] * l)
                .sum::<f64>()
        };
        if cost_along.abs() > OPTIMALITY_TOL {
            improving_line = true;
        }
    }

    let fixed = free_basic.len();
    let pick = rank_a - fixed;
    let total_bases = binomial(nonneg.len(), pick);
    if total_bases > MAX_ENUMERATED_BASES {
        return Err(LpError::GuardExceeded {
            bases: total_bases,
            limit: MAX_ENUMERATED_BASES,
        });
    }

    let mut search = BasisSearch {
        columns: (0..nv).map(column).collect(),
        kept_b: &kept_b,
        c,
        nonneg: &nonneg,
        fixed,
        rank: rank_a,
        nv,
        consistent: !infeasible,
        frames: vec![Frame::new(rank_a); rank_a + 1],
        basis: Vec::with_capacity(rank_a),
        best: None,
        improving_ray: false,
        examined: 0,
        feasible: 0,
    };
    for (depth, &j) in free_basic.iter().enumerate() {
        if !search.push(depth, j) {
            return Err(LpError::NumericalBreakdown("free columns lost rank".into()));
        }
    }
    search.descend(fixed, 0);
    let BasisSearch {
        best,
        improving_ray,
        examined,
        feasible,
        ..
    } = search;

    let status = match best {
        None => LpStatus::Infeasible,
        Some(_) if improving_ray || improving_line => LpStatus::Unbounded,
        Some(_) => LpStatus::Optimal,
    };
    let (objective, x) = match (status, best) {
        (LpStatus::Optimal, Some((o, x))) => (o, x),
        (LpStatus::Unbounded, _) => (f64::NEG_INFINITY, Vec::new()),
        _ => (f64::INFINITY, Vec::new()),
    };
    Ok(VertexResult {
        status,
        x,
        objective,
        bases_examined: examined,
        feasible_vertices: feasible,
    })
}
