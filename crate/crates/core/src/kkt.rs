//! First-order optimality of a flow: stationarity residuals, dual
//! certificates, reduced costs, spanning-forest potentials and the
//! Frank-Wolfe gap.
//!
//! Stationarity of `x0` for `min 0.5 x^T H x + d^T x` over the transportation
//! polytope asks for multipliers `w1` (one per supply/demand row) and
//! `w2 >= 0` with `w2 = 0` on the support of `x0`. The sign with which `w2`
//! enters is selected by [`BoundMultiplierSign`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linprog::{solve_lp, LinearProgram, LpError, LpStatus, VarBound};
use crate::model::{
    dot, FlowMatrix, ModelError, QuadraticCost, SupportPartition, TransportationInstance,
};
use crate::oracle::{transportation_vertices, OracleError};

/// Max-norm threshold on the stationarity residual.
pub const STATIONARITY_TOL: f64 = 1e-7;
/// Complementary slackness threshold on `w2[p] * x0[p]`.
pub const COMPLEMENTARITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KktError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("support of x0 contains a cycle through link {0}")]
    CyclicSupport(usize),
}

/// How the nonnegativity multiplier `w2` enters the stationarity equation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundMultiplierSign {
    /// `H x0 + d - A^T w1 - w2 = 0`. This is the sign of the inverse-problem
    /// rows and of the usual Lagrangian for a minimization with `x >= 0`.
    #[default]
    Minus,
    /// `H x0 + d - A^T w1 + w2 = 0`, the compact stationarity form taken
    /// literally. With `w2 >= 0` it certifies optimality only when `w2 = 0`.
    Plus,
}

impl BoundMultiplierSign {
    fn factor(self) -> f64 {
        match self {
            Self::Minus => -1.0,
            Self::Plus => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCertificate {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

impl DualCertificate {
    /// `w2 >= 0` everywhere and `w2[p] * x0[p] = 0` within tolerance.
    pub fn complementary(&self, x0: &[f64]) -> bool {
        self.w2.iter().all(|&v| v >= 0.0)
            && self
                .w2
                .iter()
                .zip(x0)
                .all(|(w, x)| (w * x).abs() <= COMPLEMENTARITY_TOL)
    }

    /// `w2` vanishes exactly on every link of `F`.
    pub fn zero_on_support(&self, partition: &SupportPartition) -> bool {
        partition.positive().iter().all(|&p| self.w2[p] == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedCostField {
    pub cpi: Vec<f64>,
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), ModelError> {
    if expected != found {
        return Err(ModelError::DimensionMismatch {
            what,
            expected,
            found,
        });
    }
    Ok(())
}

fn check_dims(
    inst: &TransportationInstance,
    cost: &QuadraticCost,
    x: &[f64],
) -> Result<(), ModelError> {
    check_len("cost", inst.links(), cost.dim())?;
    check_len("flow", inst.links(), x.len())
}

/// `H x0 + d - A^T w1 -/+ w2`, componentwise.
pub fn stationarity_residual(
    inst: &TransportationInstance,
    cost: &QuadraticCost,
    flow: &FlowMatrix,
    cert: &DualCertificate,
    sign: BoundMultiplierSign,
) -> Result<Vec<f64>, KktError> {
    check_dims(inst, cost, flow.x())?;
    check_len("w1", inst.n() + inst.m(), cert.w1.len())?;
    check_len("w2", inst.links(), cert.w2.len())?;
    let g = cost.gradient(flow.x());
    let atw = inst.apply_transpose(&cert.w1);
    let s = sign.factor();
    Ok((0..inst.links())
        .map(|p| g[p] - atw[p] + s * cert.w2[p])
        .collect())
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum KktOutcome {
    Certified {
        certificate: DualCertificate,
        residual: f64,
    },
    Infeasible {
        /// Sum of artificial variables left by phase one of the feasibility LP.
        phase_one_residual: f64,
    },
}

impl KktOutcome {
    pub fn is_certified(&self) -> bool {
        matches!(self, Self::Certified { .. })
    }
}

/// Searches for `w1` free and `w2 >= 0`, zero on `F`, satisfying stationarity
/// under the given sign. Solved as an LP feasibility problem.
pub fn kkt_check(
    inst: &TransportationInstance,
    cost: &QuadraticCost,
    flow: &FlowMatrix,
    partition: &SupportPartition,
    sign: BoundMultiplierSign,
) -> Result<KktOutcome, KktError> {
    check_dims(inst, cost, flow.x())?;
    let (n, m) = (inst.n(), inst.m());
    let g = cost.gradient(flow.x());
    let mut lp = LinearProgram::new();
    let w1: Vec<usize> = (0..n + m)
        .map(|k| lp.add_variable(format!("w1[{k}]"), 0.0, VarBound::Free))
        .collect();
    let mut w2 = vec![None; inst.links()];
    for &p in partition.zero() {
        w2[p] = Some(lp.add_variable(format!("w2[{p}]"), 0.0, VarBound::NonNegative));
    }
    // g - A^T w1 + s w2 = 0  <=>  A^T w1 - s w2 = g
    let s = sign.factor();
    for p in 0..inst.links() {
        let mut terms = vec![(w1[p / m], 1.0), (w1[n + p % m], 1.0)];
        if let Some(v) = w2[p] {
            terms.push((v, -s));
        }
        lp.add_row(terms, g[p]);
    }
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => {
            let certificate = DualCertificate {
                w1: w1.iter().map(|&k| sol.x[k]).collect(),
                w2: w2.iter().map(|v| v.map_or(0.0, |k| sol.x[k])).collect(),
            };
            let residual = max_abs(&stationarity_residual(
                inst,
                cost,
                flow,
                &certificate,
                sign,
            )?);
            Ok(KktOutcome::Certified {
                certificate,
                residual,
            })
        }
        LpStatus::Infeasible => Ok(KktOutcome::Infeasible {
            phase_one_residual: sol.phase_one_residual,
        }),
        LpStatus::Unbounded => Err(KktError::Lp(LpError::NumericalBreakdown(
            "feasibility program reported unbounded".into(),
        ))),
    }
}

/// `c^pi = c - A^T w1 + Q x0`.
pub fn reduced_costs(
    inst: &TransportationInstance,
    cost: &QuadraticCost,
    flow: &FlowMatrix,
    w1: &[f64],
) -> Result<ReducedCostField, KktError> {
    check_dims(inst, cost, flow.x())?;
    check_len("w1", inst.n() + inst.m(), w1.len())?;
    let g = cost.gradient(flow.x());
    let atw = inst.apply_transpose(w1);
    Ok(ReducedCostField {
        cpi: g.iter().zip(&atw).map(|(a, b)| a - b).collect(),
    })
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(len: usize) -> Self {
        Self {
            parent: (0..len).collect(),
        }
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.parent[a] != a {
            self.parent[a] = self.parent[self.parent[a]];
            a = self.parent[a];
        }
        a
    }

    /// Returns false when `a` and `b` were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// True when the links in `support` form a forest in the origin/destination graph.
pub fn is_forest(n: usize, m: usize, support: &[usize]) -> bool {
    let mut sets = DisjointSets::new(n + m);
    support.iter().all(|&p| sets.union(p / m, n + p % m))
}

/// Potentials with `w1_i + w1_{n+j} = (H x0 + d)_{ij}` on every link of `F`,
/// anchored at zero on the smallest node of each connected component.
pub fn tree_potentials(
    inst: &TransportationInstance,
    cost: &QuadraticCost,
    flow: &FlowMatrix,
    partition: &SupportPartition,
) -> Result<Vec<f64>, KktError> {
    check_dims(inst, cost, flow.x())?;
    let (n, m) = (inst.n(), inst.m());
    let mut sets = DisjointSets::new(n + m);
    let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n + m];
    for &p in partition.positive() {
        let (a, b) = (p / m, n + p % m);
        if !sets.union(a, b) {
            return Err(KktError::CyclicSupport(p));
        }
        adjacency[a].push((b, p));
        adjacency[b].push((a, p));
    }
    let g = cost.gradient(flow.x());
    let mut w = vec![0.0; n + m];
    let mut seen = vec![false; n + m];
    for root in 0..n + m {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            for &(v, p) in &adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    w[v] = g[p] - w[u];
                    stack.push(v);
                }
            }
        }
    }
    Ok(w)
}

/// `g^T x0 - min_y g^T y` over the transportation polytope with `g = Q x0 + c`.
///
/// The minimum is taken over an explicit vertex list, so the instance must
/// fit the vertex-enumeration guard.
pub fn frank_wolfe_gap(
    inst: &TransportationInstance,
    cost: &QuadraticCost,
    x0: &[f64],
) -> Result<f64, KktError> {
    check_dims(inst, cost, x0)?;
    let vertices = transportation_vertices(inst)?;
    Ok(gap_over_vertices(&cost.gradient(x0), x0, &vertices))
}

pub(crate) fn gap_over_vertices(g: &[f64], x0: &[f64], vertices: &[Vec<f64>]) -> f64 {
    let best = vertices
        .iter()
        .map(|v| dot(g, v))
        .fold(f64::INFINITY, f64::min);
    dot(g, x0) - best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::support_partition;
    use nalgebra::DMatrix;

    fn single(h: f64, d: f64, t: f64) -> (TransportationInstance, QuadraticCost, FlowMatrix) {
        (
            TransportationInstance::new(vec![t], vec![t]).unwrap(),
            QuadraticCost::diagonal(&[h], vec![d]).unwrap(),
            FlowMatrix::new(vec![t], 1e-9).unwrap(),
        )
    }

    #[test]
    fn single_cell_residual_vanishes() {
        let (inst, cost, flow) = single(1.5, -0.25, 2.0);
        let cert = DualCertificate {
            w1: vec![1.5 * 2.0 - 0.25, 0.0],
            w2: vec![0.0],
        };
        let r =
            stationarity_residual(&inst, &cost, &flow, &cert, BoundMultiplierSign::Minus).unwrap();
        assert_eq!(r, vec![0.0]);
    }

    #[test]
    fn zero_cost_zero_residual() {
        let inst = TransportationInstance::new(vec![1.0, 2.0], vec![2.0, 1.0]).unwrap();
        let cost = QuadraticCost::dense(DMatrix::zeros(4, 4), vec![0.0; 4]).unwrap();
        let flow = FlowMatrix::new(vec![1.0, 0.0, 1.0, 1.0], 1e-9).unwrap();
        let cert = DualCertificate {
            w1: vec![0.0; 4],
            w2: vec![0.0; 4],
        };
        for sign in [BoundMultiplierSign::Minus, BoundMultiplierSign::Plus] {
            let r = stationarity_residual(&inst, &cost, &flow, &cert, sign).unwrap();
            assert_eq!(max_abs(&r), 0.0);
        }
    }

    #[test]
    fn single_cell_always_certified() {
        let (inst, cost, flow) = single(3.0, 7.0, 4.0);
        let out = kkt_check(
            &inst,
            &cost,
            &flow,
            &flow.partition(),
            BoundMultiplierSign::Minus,
        )
        .unwrap();
        assert!(out.is_certified());
    }

    #[test]
    fn reduced_cost_examples() {
        let inst = TransportationInstance::new(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let c = vec![1.0, 2.0, 3.0, 4.0];
        let flow = FlowMatrix::new(vec![0.25, 0.75, 0.75, 0.25], 1e-9).unwrap();
        let zero_q = QuadraticCost::dense(DMatrix::zeros(4, 4), c.clone()).unwrap();
        assert_eq!(
            reduced_costs(&inst, &zero_q, &flow, &[0.0; 4]).unwrap().cpi,
            c
        );
        let ident = QuadraticCost::diagonal(&[1.0; 4], c.clone()).unwrap();
        let cpi = reduced_costs(&inst, &ident, &flow, &[0.0; 4]).unwrap().cpi;
        let expect: Vec<f64> = c.iter().zip(flow.x()).map(|(a, b)| a + b).collect();
        assert_eq!(cpi, expect);
        let t = 0.5;
        let shifted = reduced_costs(&inst, &ident, &flow, &[t, t, 0.0, 0.0])
            .unwrap()
            .cpi;
        for p in 0..4 {
            assert_eq!(shifted[p], cpi[p] - t);
        }
    }

    #[test]
    fn tree_potentials_single_cell() {
        let (inst, cost, flow) = single(1.0, 3.0, 2.0);
        let w = tree_potentials(&inst, &cost, &flow, &flow.partition()).unwrap();
        assert_eq!(w, vec![0.0, 5.0]);
    }

    #[test]
    fn tree_potentials_zero_reduced_cost_on_support() {
        for seed in 0..20 {
            let g =
                crate::model::generate_instance(&crate::model::GeneratorConfig::new(seed, 3, 3))
                    .unwrap();
            let flow = FlowMatrix::new(g.flow.clone(), 1e-9).unwrap();
            let part = flow.partition();
            let w = tree_potentials(&g.instance, &g.cost, &flow, &part).unwrap();
            let cpi = reduced_costs(&g.instance, &g.cost, &flow, &w).unwrap().cpi;
            for &p in part.positive() {
                assert!(cpi[p].abs() < 1e-12, "seed {seed} link {p}: {}", cpi[p]);
            }
        }
    }

    #[test]
    fn cyclic_support_is_refused() {
        let inst = TransportationInstance::new(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let cost = QuadraticCost::diagonal(&[1.0; 4], vec![0.0; 4]).unwrap();
        let flow = FlowMatrix::new(vec![0.5; 4], 1e-9).unwrap();
        assert!(matches!(
            tree_potentials(&inst, &cost, &flow, &flow.partition()),
            Err(KktError::CyclicSupport(_))
        ));
        let empty = support_partition(&[0.0; 4], 1e-9).unwrap();
        assert_eq!(
            tree_potentials(&inst, &cost, &flow, &empty).unwrap(),
            vec![0.0; 4]
        );
    }

    #[test]
    fn suboptimal_vertex_fails_kkt() {
        // identity Q, c favours the anti-diagonal; x0 on the diagonal is not optimal
        let inst = TransportationInstance::new(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let cost = QuadraticCost::diagonal(&[1.0; 4], vec![5.0, 0.0, 0.0, 5.0]).unwrap();
        let flow = FlowMatrix::new(vec![1.0, 0.0, 0.0, 1.0], 1e-9).unwrap();
        assert!(frank_wolfe_gap(&inst, &cost, flow.x()).unwrap() > 1.0);
        let out = kkt_check(
            &inst,
            &cost,
            &flow,
            &flow.partition(),
            BoundMultiplierSign::Minus,
        )
        .unwrap();
        assert!(!out.is_certified());
    }

    #[test]
    fn gap_of_single_point_is_zero() {
        let (inst, cost, flow) = single(2.0, 1.0, 3.0);
        assert_eq!(frank_wolfe_gap(&inst, &cost, flow.x()).unwrap(), 0.0);
    }
}
