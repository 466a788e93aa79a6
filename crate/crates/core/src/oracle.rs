//! Brute-force verifiers for tiny instances: explicit vertex lists of the
//! transportation polytope, a verdict on inverse solutions and a grid search
//! over diagonal perturbations.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inverse::{perturbation_norm, InverseSolution, Norm};
use crate::kkt::gap_over_vertices;
use crate::model::{
    check_flow_feasibility, dot, mat_vec, FlowMatrix, ModelError, QuadraticCost,
    TransportationInstance,
};

/// Largest `n * m` for which vertices are enumerated.
pub const MAX_VERTEX_LINKS: usize = 12;
/// Largest `n * m` accepted by the grid search.
pub const MAX_GRID_LINKS: usize = 4;
/// Gap and sampling tolerance of a verdict.
pub const VERDICT_TOL: f64 = 1e-7;
/// A grid point counts as feasible when its Frank-Wolfe gap is at most this.
pub const GRID_GAP_TOL: f64 = 1e-11;

const DEDUP_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("{links} links exceed the brute-force limit of {limit}")]
    GuardExceeded { links: usize, limit: usize },
    #[error("grid search needs a diagonal quadratic term")]
    NotDiagonal,
    #[error("grid needs at least one point per axis and a finite nonnegative radius")]
    BadGrid,
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn guard(links: usize, limit: usize) -> Result<(), OracleError> {
    if links > limit {
        return Err(OracleError::GuardExceeded { links, limit });
    }
    Ok(())
}

/// Every vertex of the transportation polytope.
///
/// Each vertex is the unique flow on some spanning tree of the complete
/// bipartite graph; degenerate vertices arise from several trees and are
/// reported once.
pub fn transportation_vertices(
    inst: &TransportationInstance,
) -> Result<Vec<Vec<f64>>, OracleError> {
    let (n, m) = (inst.n(), inst.m());
    let links = n * m;
    guard(links, MAX_VERTEX_LINKS)?;
    let size = n + m - 1;
    let mut vertices: Vec<Vec<f64>> = Vec::new();
    let mut subset: Vec<usize> = (0..size).collect();
    loop {
        if let Some(x) = tree_flow(inst, &subset) {
            let duplicate = vertices
                .iter()
                .any(|v| v.iter().zip(&x).all(|(a, b)| (a - b).abs() <= DEDUP_TOL));
            if !duplicate && check_flow_feasibility(inst, &x)?.feasible {
                vertices.push(x);
            }
        }
        // next combination in lexicographic order
        let Some(k) = (0..size).rev().find(|&k| subset[k] < links - size + k) else {
            break;
        };
        subset[k] += 1;
        for t in k + 1..size {
            subset[t] = subset[t - 1] + 1;
        }
    }
    Ok(vertices)
}

/// Flow carried by a set of `n + m - 1` links, if they form a spanning tree
/// and the flow is nonnegative. Solved by repeatedly peeling leaves.
fn tree_flow(inst: &TransportationInstance, subset: &[usize]) -> Option<Vec<f64>> {
    let (n, m) = (inst.n(), inst.m());
    let mut residual = inst.rhs();
    let mut degree = vec![0usize; n + m];
    for &p in subset {
        degree[p / m] += 1;
        degree[n + p % m] += 1;
    }
    if degree.contains(&0) {
        return None;
    }
    let mut x = vec![0.0; n * m];
    let mut open: Vec<usize> = subset.to_vec();
    while !open.is_empty() {
        let pos = open
            .iter()
            .position(|&p| degree[p / m] == 1 || degree[n + p % m] == 1)?;
        let p = open.swap_remove(pos);
        let (row, col) = (p / m, n + p % m);
        let (leaf, other) = if degree[row] == 1 {
            (row, col)
        } else {
            (col, row)
        };
        let value = residual[leaf];
        x[p] = value;
        residual[leaf] = 0.0;
        residual[other] -= value;
        degree[row] -= 1;
        degree[col] -= 1;
    }
    let scale = residual.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    if x.iter().any(|&v| v < -DEDUP_TOL * scale) {
        return None;
    }
    for v in x.iter_mut() {
        *v = v.max(0.0);
    }
    Some(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub frank_wolfe_gap: f64,
    pub first_order: bool,
    pub psd: bool,
    pub min_eigenvalue: f64,
    /// Sampled points examined; zero when the matrix is not PSD.
    pub sampled_points: usize,
    /// Largest improvement over `x0` seen among sampled points.
    pub worst_sample_improvement: f64,
    /// `Some` when the spot check ran, `None` for a first-order-only verdict.
    pub global_spot_check: Option<bool>,
    pub l1_norm: f64,
    pub linf_norm: f64,
    pub declared_objective: f64,
    pub norm_matches: bool,
    pub passed: bool,
}

fn quadratic_value(h: &nalgebra::DMatrix<f64>, d: &[f64], y: &[f64]) -> f64 {
    0.5 * dot(y, &mat_vec(h, y)) + dot(d, y)
}

/// Checks that `x0` is optimal under `(H*, d*)` and that the declared
/// objective matches the perturbation norm. The verdict passes when the
/// first-order gap is small and, if the spot check ran, no sampled point beats
/// `x0`. A norm mismatch is reported but does not fail the verdict, since
/// closed-form solutions are not claimed to be minimal.
pub fn verify_inverse(
    sol: &InverseSolution,
    cost: &QuadraticCost,
    inst: &TransportationInstance,
    flow: &FlowMatrix,
) -> Result<Verdict, OracleError> {
    let vertices = transportation_vertices(inst)?;
    let x0 = flow.x();
    let h = &sol.h_star;
    let d = &sol.d_star;
    let g: Vec<f64> = mat_vec(h, x0).iter().zip(d).map(|(a, b)| a + b).collect();
    let gap = gap_over_vertices(&g, x0, &vertices);
    let first_order = gap <= VERDICT_TOL;

    let eigen = SymmetricEigen::new(h.clone());
    let min_eigenvalue = eigen
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let scale = h.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    let psd = min_eigenvalue >= -1e-10 * scale;

    let mut sampled_points = 0;
    let mut worst = 0.0_f64;
    if psd {
        let base = quadratic_value(h, d, x0);
        let mut targets: Vec<Vec<f64>> = vertices.clone();
        for a in 0..vertices.len() {
            for b in a + 1..vertices.len() {
                for lambda in [0.25, 0.5, 0.75] {
                    targets.push(
                        vertices[a]
                            .iter()
                            .zip(&vertices[b])
                            .map(|(u, v)| lambda * u + (1.0 - lambda) * v)
                            .collect(),
                    );
                }
            }
        }
        for target in &targets {
            for t in [0.05, 0.1, 0.25, 0.5, 0.75, 1.0] {
                let y: Vec<f64> = x0
                    .iter()
                    .zip(target)
                    .map(|(x, v)| x + t * (v - x))
                    .collect();
                worst = worst.max(base - quadratic_value(h, d, &y));
                sampled_points += 1;
            }
        }
    }
    let global_spot_check = psd.then_some(worst <= VERDICT_TOL);

    let l1_norm = perturbation_norm(cost.q(), h, cost.c(), d, Norm::L1);
    let linf_norm = perturbation_norm(cost.q(), h, cost.c(), d, Norm::Linf);
    let declared = match sol.norm {
        Norm::L1 => l1_norm,
        Norm::Linf => linf_norm,
    };
    Ok(Verdict {
        frank_wolfe_gap: gap,
        first_order,
        psd,
        min_eigenvalue,
        sampled_points,
        worst_sample_improvement: worst,
        global_spot_check,
        l1_norm,
        linf_norm,
        declared_objective: sol.objective,
        norm_matches: (declared - sol.objective).abs() <= VERDICT_TOL,
        passed: first_order && global_spot_check != Some(false),
    })
}

/// Grid over the shift each link's gradient receives at `x0`.
///
/// With diagonal `H`, a perturbation changes the gradient at `x0` only through
/// `dg_p = dH_pp x0_p + dd_p`, so optimality of `x0` depends on `dg` alone.
/// Axis `p` spans `[-radius (1 + x0_p), radius (1 + x0_p)]` with `points`
/// evenly spaced values (odd counts include zero); for every feasible `dg` the
/// cheapest split into `dH` and `dd` is computed exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub points: usize,
    pub radius: f64,
}

impl GridSpec {
    pub const DEFAULT_POINTS: usize = 21;

    /// Box covering every perturbation of norm at most `1.5 * objective`.
    pub fn around(objective: f64) -> Self {
        Self {
            points: Self::DEFAULT_POINTS,
            radius: 1.5 * objective,
        }
    }

    /// Same box with the step halved; every old point stays on the grid.
    pub fn refined(self) -> Self {
        Self {
            points: 2 * self.points - 1,
            radius: self.radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    /// Smallest norm among feasible grid points; infinite if none was feasible.
    pub best_objective: f64,
    pub best_shift: Vec<f64>,
    pub evaluated: usize,
    pub feasible: usize,
}

/// Cheapest `||dH|| + ||dd||` with diagonal `dH` realizing shifts `dg`.
/// Both matrix norms of a diagonal matrix equal `t = max |dH_pp|`, and given
/// `t` the best vector part uses `|dd_p| = max(0, |dg_p| - t x0_p)`. The
/// resulting function of `t` is convex piecewise linear, so its minimum sits
/// at `t = 0` or at a kink.
pub fn minimal_split(dg: &[f64], x0: &[f64], norm: Norm) -> f64 {
    let value = |t: f64| {
        let parts = dg.iter().zip(x0).map(|(g, x)| (g.abs() - t * x).max(0.0));
        t + match norm {
            Norm::L1 => parts.sum::<f64>(),
            Norm::Linf => parts.fold(0.0, f64::max),
        }
    };
    let mut candidates = vec![0.0];
    for (p, (gp, xp)) in dg.iter().zip(x0).enumerate() {
        if *xp > 0.0 {
            candidates.push(gp.abs() / xp);
        }
        if norm == Norm::Linf {
            for (gq, xq) in dg.iter().zip(x0).skip(p + 1) {
                if xp != xq {
                    candidates.push((gp.abs() - gq.abs()) / (xp - xq));
                }
            }
        }
    }
    candidates
        .into_iter()
        .filter(|t| t.is_finite() && *t >= 0.0)
        .map(value)
        .fold(f64::INFINITY, f64::min)
}

pub fn grid_search_inverse_diagonal(
    cost: &QuadraticCost,
    inst: &TransportationInstance,
    flow: &FlowMatrix,
    norm: Norm,
    spec: GridSpec,
) -> Result<GridResult, OracleError> {
    let links = inst.links();
    guard(links, MAX_GRID_LINKS)?;
    if !cost.is_diagonal() {
        return Err(OracleError::NotDiagonal);
    }
    if spec.points == 0 || !spec.radius.is_finite() || spec.radius < 0.0 {
        return Err(OracleError::BadGrid);
    }
    let vertices = transportation_vertices(inst)?;
    let x0 = flow.x();
    let g0 = cost.gradient(x0);
    let axis = |p: usize, k: usize| {
        if spec.points == 1 {
            0.0
        } else {
            let half = spec.radius * (1.0 + x0[p]);
            -half + 2.0 * half * k as f64 / (spec.points - 1) as f64
        }
    };
    let mut index = vec![0usize; links];
    let mut result = GridResult {
        best_objective: f64::INFINITY,
        best_shift: Vec::new(),
        evaluated: 0,
        feasible: 0,
    };
    loop {
        let dg: Vec<f64> = index.iter().enumerate().map(|(p, &k)| axis(p, k)).collect();
        let g: Vec<f64> = g0.iter().zip(&dg).map(|(a, b)| a + b).collect();
        result.evaluated += 1;
        if gap_over_vertices(&g, x0, &vertices) <= GRID_GAP_TOL {
            result.feasible += 1;
            let value = minimal_split(&dg, x0, norm);
            if value < result.best_objective {
                result.best_objective = value;
                result.best_shift = dg;
            }
        }
        let Some(p) = (0..links).find(|&p| index[p] + 1 < spec.points) else {
            break;
        };
        index[p] += 1;
        for k in index.iter_mut().take(p) {
            *k = 0;
        }
    }
    Ok(result)
}
