//! Forward solve of a convex quadratic transportation problem, used only to
//! manufacture optimal flows for testing and instance generation.
//!
//! Pairwise Frank-Wolfe with exact line search finds the optimal face; an
//! equality-constrained solve on that face then removes the remaining error.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linprog::{solve_lp, LinearProgram, LpError, LpStatus, VarBound};
use crate::model::{dot, mat_vec, northwest_corner, QuadraticCost, TransportationInstance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForwardError {
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("linear minimization over the transportation polytope returned {0:?}")]
    Oracle(LpStatus),
    #[error("no convergence after {iterations} iterations (gap {gap:e})")]
    NotConverged { iterations: usize, gap: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    pub target_gap: f64,
    pub max_iterations: usize,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            target_gap: 1e-10,
            max_iterations: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSolution {
    pub x: Vec<f64>,
    /// Frank-Wolfe gap at `x`, measured with the LP linear-minimization oracle.
    pub gap: f64,
    pub iterations: usize,
    pub polished: bool,
}

/// Vertex minimizing `g^T y` over the polytope.
fn linear_minimizer(inst: &TransportationInstance, g: &[f64]) -> Result<Vec<f64>, ForwardError> {
    let (n, m) = (inst.n(), inst.m());
    let mut lp = LinearProgram::new();
    for (p, &gp) in g.iter().enumerate() {
        lp.add_variable(format!("y[{p}]"), gp, VarBound::NonNegative);
    }
    for i in 0..n {
        lp.add_row(
            (0..m).map(|j| (i * m + j, 1.0)).collect(),
            inst.supplies()[i],
        );
    }
    for j in 0..m {
        lp.add_row(
            (0..n).map(|i| (i * m + j, 1.0)).collect(),
            inst.demands()[j],
        );
    }
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(ForwardError::Oracle(sol.status));
    }
    Ok(sol.x)
}

fn gap_at(
    inst: &TransportationInstance,
    cost: &QuadraticCost,
    x: &[f64],
) -> Result<f64, ForwardError> {
    let g = cost.gradient(x);
    let s = linear_minimizer(inst, &g)?;
    Ok(dot(&g, x) - dot(&g, &s))
}

/// Minimizes over the face `{x : A x = b, x_p = 0 for p outside support}`,
/// dropping links that come out negative. `None` if no nonnegative point results.
fn polish(
    inst: &TransportationInstance,
    cost: &QuadraticCost,
    mut support: Vec<usize>,
) -> Option<Vec<f64>> {
    let (n, m) = (inst.n(), inst.m());
    let b = inst.rhs();
    while !support.is_empty() {
        let k = support.len();
        let dim = k + n + m;
        let mut kkt = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        for (a, &p) in support.iter().enumerate() {
            for (c, &q) in support.iter().enumerate() {
                kkt[(a, c)] = cost.q()[(p, q)];
            }
            for (row, col) in [(p / m, a), (n + p % m, a)] {
                kkt[(k + row, col)] = 1.0;
                kkt[(col, k + row)] = 1.0;
            }
            rhs[a] = -cost.c()[p];
        }
        for (r, &br) in b.iter().enumerate() {
            rhs[k + r] = br;
        }
        let sol = kkt.svd(true, true).solve(&rhs, 1e-12).ok()?;
        let mut x = vec![0.0; inst.links()];
        for (a, &p) in support.iter().enumerate() {
            x[p] = sol[a];
        }
        let (worst, value) = support
            .iter()
            .map(|&p| (p, x[p]))
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        if value < 0.0 {
            if value > -1e-13 {
                x[worst] = 0.0;
            } else {
                support.retain(|&p| p != worst);
                continue;
            }
        }
        let ax = inst.apply_constraints(&x);
        let residual = ax
            .iter()
            .zip(&b)
            .fold(0.0_f64, |acc, (u, v)| acc.max((u - v).abs()));
        return (residual <= 1e-10 * (1.0 + b.iter().fold(0.0_f64, |a, v| a.max(*v)))).then_some(x);
    }
    None
}

/// Pairwise Frank-Wolfe from the northwest-corner vertex, with face polishing
/// once the iterate is close.
pub fn solve_forward(
    inst: &TransportationInstance,
    cost: &QuadraticCost,
    opts: ForwardOptions,
) -> Result<ForwardSolution, ForwardError> {
    let start = northwest_corner(inst);
    let mut atoms: Vec<(Vec<f64>, f64)> = vec![(start.clone(), 1.0)];
    let mut x = start;
    let mut gap = f64::INFINITY;
    let mut next_polish = 1e-3;
    for iteration in 0..opts.max_iterations {
        let g = cost.gradient(&x);
        let s = linear_minimizer(inst, &g)?;
        gap = dot(&g, &x) - dot(&g, &s);
        if gap <= opts.target_gap {
            return Ok(ForwardSolution {
                x,
                gap,
                iterations: iteration,
                polished: false,
            });
        }
        if gap <= next_polish || iteration % 50 == 49 {
            next_polish = gap * 1e-2;
            let scale = x.iter().fold(1.0_f64, |a, v| a.max(*v));
            let support: Vec<usize> = (0..x.len()).filter(|&p| x[p] > 1e-9 * scale).collect();
            if let Some(candidate) = polish(inst, cost, support) {
                let candidate_gap = gap_at(inst, cost, &candidate)?;
                if candidate_gap <= opts.target_gap {
                    return Ok(ForwardSolution {
                        x: candidate,
                        gap: candidate_gap,
                        iterations: iteration,
                        polished: true,
                    });
                }
            }
        }

        // pairwise step: move weight from the worst active atom to s
        let (away, _) = atoms
            .iter()
            .enumerate()
            .map(|(k, (v, _))| (k, dot(&g, v)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("active set is never empty");
        let d: Vec<f64> = s.iter().zip(&atoms[away].0).map(|(a, b)| a - b).collect();
        let slope = dot(&g, &d);
        if slope >= 0.0 {
            // the away atom already matches s; fall back to a plain Frank-Wolfe step
            let d: Vec<f64> = s.iter().zip(&x).map(|(a, b)| a - b).collect();
            let curvature = dot(&d, &mat_vec(cost.q(), &d));
            let slope = dot(&g, &d);
            let step = if curvature > 0.0 {
                (-slope / curvature).clamp(0.0, 1.0)
            } else {
                1.0
            };
            for atom in atoms.iter_mut() {
                atom.1 *= 1.0 - step;
            }
            push_atom(&mut atoms, s, step);
            for (xp, dp) in x.iter_mut().zip(&d) {
                *xp += step * dp;
            }
        } else {
            let max_step = atoms[away].1;
            let curvature = dot(&d, &mat_vec(cost.q(), &d));
            let step = if curvature > 0.0 {
                (-slope / curvature).min(max_step)
            } else {
                max_step
            };
            atoms[away].1 -= step;
            push_atom(&mut atoms, s, step);
            for (xp, dp) in x.iter_mut().zip(&d) {
                *xp += step * dp;
            }
        }
        atoms.retain(|(_, w)| *w > 1e-15);
        for xp in x.iter_mut() {
            if *xp < 0.0 {
                *xp = 0.0;
            }
        }
    }
    Err(ForwardError::NotConverged {
        iterations: opts.max_iterations,
        gap,
    })
}

fn push_atom(atoms: &mut Vec<(Vec<f64>, f64)>, v: Vec<f64>, weight: f64) {
    if let Some(atom) = atoms
        .iter_mut()
        .find(|(a, _)| a.iter().zip(&v).all(|(p, q)| (p - q).abs() <= 1e-12))
    {
        atom.1 += weight;
    } else {
        atoms.push((v, weight));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kkt::frank_wolfe_gap;
    use crate::model::{check_flow_feasibility, generate_instance, GeneratorConfig, QuadraticMode};

    #[test]
    fn converges_on_generated_instances() {
        for seed in 0..12 {
            for mode in [QuadraticMode::DensePsd, QuadraticMode::Diagonal] {
                let n = 1 + seed as usize % 3;
                let m = 1 + (seed as usize / 3) % 3;
                let g = generate_instance(&GeneratorConfig::new(seed, n, m).with_quadratic(mode))
                    .unwrap();
                let sol = solve_forward(&g.instance, &g.cost, ForwardOptions::default()).unwrap();
                assert!(
                    check_flow_feasibility(&g.instance, &sol.x)
                        .unwrap()
                        .feasible
                );
                let gap = frank_wolfe_gap(&g.instance, &g.cost, &sol.x).unwrap();
                assert!(gap <= 1e-8, "seed {seed} {mode:?}: gap {gap:e}");
            }
        }
    }

    #[test]
    fn quadratic_pulls_flow_into_the_interior() {
        // no linear cost, identity Q: the uniform split is optimal
        let inst = TransportationInstance::new(vec![2.0, 2.0], vec![2.0, 2.0]).unwrap();
        let cost = QuadraticCost::diagonal(&[1.0; 4], vec![0.0; 4]).unwrap();
        let sol = solve_forward(&inst, &cost, ForwardOptions::default()).unwrap();
        for v in sol.x {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }
}
