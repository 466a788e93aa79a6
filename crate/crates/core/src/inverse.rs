//! Shared machinery for the inverse problems: perturbation norms, split
//! variables, the LP builder, LP-based solving and the closed-form repair.
//!
//! The perturbation is written `H - Q = Gamma - Delta`, `d - c = alpha - beta`
//! with all four parts nonnegative and `Gamma`, `Delta` symmetric. Symmetry is
//! enforced by giving each unordered pair of links a single LP column.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kkt::{
    max_abs, reduced_costs, stationarity_residual, BoundMultiplierSign, DualCertificate, KktError,
    STATIONARITY_TOL,
};
use crate::linprog::{solve_lp, LinearProgram, LpError, LpSolution, LpStatus, VarBound};
use crate::model::{
    check_flow_feasibility, mat_vec, FlowMatrix, ModelError, QuadraticCost, SupportPartition,
    TransportationInstance,
};

/// Reduced costs with magnitude at or below this are treated as zero.
pub const CPI_ZERO_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InverseError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kkt(#[from] KktError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("x0 is not feasible for the instance (row {row:e}, column {column:e}, min {min:e})")]
    InfeasibleFlow { row: f64, column: f64, min: f64 },
    #[error("inverse LP reported {0:?}")]
    LpStatus(LpStatus),
    #[error("stationarity residual {0:e} exceeds tolerance")]
    StationarityViolated(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Norm {
    /// Max absolute column sum for the matrix, sum of absolute values for the vector.
    L1,
    /// Max absolute row sum for the matrix, max absolute value for the vector.
    Linf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Lp,
    ClosedForm,
}

/// Report tag such as `l1-lp` or `linf-closed`.
pub fn method_tag(norm: Norm, method: Method) -> &'static str {
    match (norm, method) {
        (Norm::L1, Method::Lp) => "l1-lp",
        (Norm::L1, Method::ClosedForm) => "l1-closed",
        (Norm::Linf, Method::Lp) => "linf-lp",
        (Norm::Linf, Method::ClosedForm) => "linf-closed",
    }
}

/// Whether the constraint multipliers are decision variables or given data.
#[derive(Debug, Clone, PartialEq)]
pub enum W1Mode {
    Free,
    Fixed(Vec<f64>),
}

pub fn matrix_norm(delta: &DMatrix<f64>, norm: Norm) -> f64 {
    let sums: Vec<f64> = match norm {
        Norm::L1 => delta
            .column_iter()
            .map(|c| c.iter().map(|v| v.abs()).sum())
            .collect(),
        Norm::Linf => delta
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum())
            .collect(),
    };
    sums.into_iter().fold(0.0, f64::max)
}

pub fn vector_norm(v: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::L1 => v.iter().map(|x| x.abs()).sum(),
        Norm::Linf => v.iter().fold(0.0, |a, x| a.max(x.abs())),
    }
}

/// `||Q - H|| + ||c - d||` under the chosen norm pair.
pub fn perturbation_norm(
    q: &DMatrix<f64>,
    h: &DMatrix<f64>,
    c: &[f64],
    d: &[f64],
    norm: Norm,
) -> f64 {
    let dv: Vec<f64> = c.iter().zip(d).map(|(a, b)| a - b).collect();
    matrix_norm(&(q - h), norm) + vector_norm(&dv, norm)
}

/// Nonnegative parts of a perturbation together with epigraph levels and multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitVariables {
    pub gamma: DMatrix<f64>,
    pub delta: DMatrix<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Epigraph level of the matrix norm.
    pub theta: f64,
    /// Epigraph level of the vector norm; present only for L-infinity.
    pub theta_vector: Option<f64>,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

impl SplitVariables {
    pub fn norm(&self) -> Norm {
        if self.theta_vector.is_some() {
            Norm::Linf
        } else {
            Norm::L1
        }
    }

    /// `theta + sum(alpha + beta)` for L1, `theta_1 + theta_2` for L-infinity.
    pub fn objective(&self) -> f64 {
        match self.theta_vector {
            None => self.theta + self.alpha.iter().chain(&self.beta).sum::<f64>(),
            Some(t2) => self.theta + t2,
        }
    }

    /// `(Q + Gamma - Delta, c + alpha - beta)`.
    pub fn perturbed(&self, cost: &QuadraticCost) -> (DMatrix<f64>, Vec<f64>) {
        let h = cost.q() + &self.gamma - &self.delta;
        let d = cost
            .c()
            .iter()
            .zip(self.alpha.iter().zip(&self.beta))
            .map(|(c, (a, b))| c + a - b)
            .collect();
        (h, d)
    }
}

/// Removes the common part of each split pair and recomputes the epigraph
/// levels from what is left. Differences `Gamma - Delta` and `alpha - beta`
/// are untouched, so every stationarity row still holds.
pub fn canonicalize(vars: &SplitVariables) -> SplitVariables {
    let overlap = vars.gamma.zip_map(&vars.delta, f64::min);
    let gamma = &vars.gamma - &overlap;
    let delta = &vars.delta - &overlap;
    let (alpha, beta): (Vec<f64>, Vec<f64>) = vars
        .alpha
        .iter()
        .zip(&vars.beta)
        .map(|(&a, &b)| {
            let o = a.min(b);
            (a - o, b - o)
        })
        .unzip();
    let total = &gamma + &delta;
    let (theta, theta_vector) = match vars.theta_vector {
        None => (matrix_norm(&total, Norm::L1), None),
        Some(_) => {
            let t2 = alpha
                .iter()
                .zip(&beta)
                .map(|(a, b)| a + b)
                .fold(0.0, f64::max);
            (matrix_norm(&total, Norm::Linf), Some(t2))
        }
    };
    SplitVariables {
        gamma,
        delta,
        alpha,
        beta,
        theta,
        theta_vector,
        w1: vars.w1.clone(),
        w2: vars.w2.clone(),
    }
}

/// Variable counts of an inverse LP. `nominal` counts a full `Gamma` and
/// `Delta`, `alpha`, `beta`, `w2` on every link and `w1` when free; `raw`
/// adds the epigraph levels; `columns` is what the LP actually carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableCounts {
    pub nominal: usize,
    pub raw: usize,
    pub columns: usize,
    pub rows: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    dim: usize,
    pairs: Vec<(usize, usize)>,
    gamma: Vec<usize>,
    delta: Vec<usize>,
    alpha: Vec<usize>,
    beta: Vec<usize>,
    w2: Vec<Option<usize>>,
    w1: Result<Vec<usize>, Vec<f64>>,
    theta: usize,
    theta_vector: Option<usize>,
}

/// An assembled inverse LP with the bookkeeping needed to read its solution.
#[derive(Debug, Clone)]
pub struct InverseLp {
    pub lp: LinearProgram,
    pub counts: VariableCounts,
    pub norm: Norm,
    pub diagonal: bool,
    layout: Layout,
}

impl InverseLp {
    /// Reads split variables off an optimal LP solution.
    pub fn split_variables(&self, sol: &LpSolution) -> SplitVariables {
        let l = &self.layout;
        let mut gamma = DMatrix::zeros(l.dim, l.dim);
        let mut delta = DMatrix::zeros(l.dim, l.dim);
        for (k, &(a, b)) in l.pairs.iter().enumerate() {
            for (mat, var) in [(&mut gamma, l.gamma[k]), (&mut delta, l.delta[k])] {
                mat[(a, b)] = sol.x[var];
                mat[(b, a)] = sol.x[var];
            }
        }
        SplitVariables {
            gamma,
            delta,
            alpha: l.alpha.iter().map(|&v| sol.x[v]).collect(),
            beta: l.beta.iter().map(|&v| sol.x[v]).collect(),
            theta: sol.x[l.theta],
            theta_vector: l.theta_vector.map(|v| sol.x[v]),
            w1: match &l.w1 {
                Ok(vars) => vars.iter().map(|&v| sol.x[v]).collect(),
                Err(fixed) => fixed.clone(),
            },
            w2: l.w2.iter().map(|v| v.map_or(0.0, |k| sol.x[k])).collect(),
        }
    }
}

fn require_feasible(inst: &TransportationInstance, flow: &FlowMatrix) -> Result<(), InverseError> {
    let report = check_flow_feasibility(inst, flow.x())?;
    if !report.feasible {
        return Err(InverseError::InfeasibleFlow {
            row: report.max_row_residual,
            column: report.max_column_residual,
            min: report.min_entry,
        });
    }
    Ok(())
}

fn check_sizes(
    inst: &TransportationInstance,
    cost: &QuadraticCost,
    partition: &SupportPartition,
) -> Result<(), ModelError> {
    for (what, found) in [("cost", cost.dim()), ("partition", partition.len())] {
        if found != inst.links() {
            return Err(ModelError::DimensionMismatch {
                what,
                expected: inst.links(),
                found,
            });
        }
    }
    Ok(())
}

/// Assembles the inverse LP for either norm.
///
/// Rows: one stationarity row per link, then one matrix-epigraph row per link,
/// then (L-infinity only) one vector-epigraph row per link. Epigraph rows carry
/// an explicit nonnegative slack.
pub(crate) fn build_inverse_lp(
    norm: Norm,
    inst: &TransportationInstance,
    cost: &QuadraticCost,
    flow: &FlowMatrix,
    partition: &SupportPartition,
    w1mode: &W1Mode,
    diagonal: bool,
) -> Result<InverseLp, InverseError> {
    check_sizes(inst, cost, partition)?;
    require_feasible(inst, flow)?;
    let (n, m) = (inst.n(), inst.m());
    let dim = inst.links();
    let x0 = flow.x();
    let mut lp = LinearProgram::new();

    let pairs: Vec<(usize, usize)> = if diagonal {
        (0..dim).map(|a| (a, a)).collect()
    } else {
        (0..dim)
            .flat_map(|a| (a..dim).map(move |b| (a, b)))
            .collect()
    };
    let gamma: Vec<usize> = pairs
        .iter()
        .map(|(a, b)| lp.add_variable(format!("gamma[{a},{b}]"), 0.0, VarBound::NonNegative))
        .collect();
    let delta: Vec<usize> = pairs
        .iter()
        .map(|(a, b)| lp.add_variable(format!("delta[{a},{b}]"), 0.0, VarBound::NonNegative))
        .collect();
    let (alpha_cost, theta_names) = match norm {
        Norm::L1 => (1.0, ["theta", ""]),
        Norm::Linf => (0.0, ["theta1", "theta2"]),
    };
    let alpha: Vec<usize> = (0..dim)
        .map(|p| lp.add_variable(format!("alpha[{p}]"), alpha_cost, VarBound::NonNegative))
        .collect();
    let beta: Vec<usize> = (0..dim)
        .map(|p| lp.add_variable(format!("beta[{p}]"), alpha_cost, VarBound::NonNegative))
        .collect();
    let mut w2 = vec![None; dim];
    for &p in partition.zero() {
        w2[p] = Some(lp.add_variable(format!("w2[{p}]"), 0.0, VarBound::NonNegative));
    }
    let theta = lp.add_variable(theta_names[0], 1.0, VarBound::NonNegative);
    let theta_vector =
        (norm == Norm::Linf).then(|| lp.add_variable(theta_names[1], 1.0, VarBound::NonNegative));
    let w1 = match w1mode {
        W1Mode::Free => Ok((0..n + m)
            .map(|k| lp.add_variable(format!("w1[{k}]"), 0.0, VarBound::Free))
            .collect::<Vec<_>>()),
        W1Mode::Fixed(values) => {
            if values.len() != n + m {
                return Err(ModelError::DimensionMismatch {
                    what: "w1",
                    expected: n + m,
                    found: values.len(),
                }
                .into());
            }
            Err(values.clone())
        }
    };

    // stationarity: sum_q (Delta - Gamma)_{qp} x0_q - alpha_p + beta_p [+ w2_p] = c_pi_p,
    // with w1 moved to the left when it is a decision variable
    let qx = mat_vec(cost.q(), x0);
    let mut stationarity: Vec<Vec<(usize, f64)>> = vec![Vec::new(); dim];
    for (k, &(a, b)) in pairs.iter().enumerate() {
        let mut touch = |row: usize, coef: f64| {
            if coef != 0.0 {
                stationarity[row].push((delta[k], coef));
                stationarity[row].push((gamma[k], -coef));
            }
        };
        touch(b, x0[a]);
        if a != b {
            touch(a, x0[b]);
        }
    }
    for p in 0..dim {
        let mut terms = std::mem::take(&mut stationarity[p]);
        terms.push((alpha[p], -1.0));
        terms.push((beta[p], 1.0));
        if let Some(v) = w2[p] {
            terms.push((v, 1.0));
        }
        let rhs = match &w1 {
            Ok(vars) => {
                terms.push((vars[p / m], 1.0));
                terms.push((vars[n + p % m], 1.0));
                cost.c()[p] + qx[p]
            }
            Err(fixed) => cost.c()[p] - (fixed[p / m] + fixed[n + p % m]) + qx[p],
        };
        lp.add_row(terms, rhs);
    }

    // matrix epigraph: theta >= sum over one column (equivalently row) of Gamma + Delta
    let mut epigraph: Vec<Vec<(usize, f64)>> = (0..dim).map(|_| vec![(theta, 1.0)]).collect();
    for (k, &(a, b)) in pairs.iter().enumerate() {
        let mut touch = |line: usize| {
            epigraph[line].push((gamma[k], -1.0));
            epigraph[line].push((delta[k], -1.0));
        };
        touch(b);
        if a != b {
            touch(a);
        }
    }
    for (p, mut terms) in epigraph.into_iter().enumerate() {
        let slack = lp.add_variable(format!("slack_theta[{p}]"), 0.0, VarBound::NonNegative);
        terms.push((slack, -1.0));
        lp.add_row(terms, 0.0);
    }
    if let Some(t2) = theta_vector {
        for p in 0..dim {
            let slack = lp.add_variable(format!("slack_theta2[{p}]"), 0.0, VarBound::NonNegative);
            lp.add_row(
                vec![(t2, 1.0), (alpha[p], -1.0), (beta[p], -1.0), (slack, -1.0)],
                0.0,
            );
        }
    }

    let base = if diagonal {
        5 * dim
    } else {
        2 * dim * dim + 3 * dim
    };
    let nominal = base + if w1.is_ok() { n + m } else { 0 };
    let raw = nominal + if norm == Norm::Linf { 2 } else { 1 };
    let counts = VariableCounts {
        nominal,
        raw,
        columns: lp.num_vars(),
        rows: lp.num_rows(),
    };
    Ok(InverseLp {
        lp,
        counts,
        norm,
        diagonal,
        layout: Layout {
            dim,
            pairs,
            gamma,
            delta,
            alpha,
            beta,
            w2,
            w1,
            theta,
            theta_vector,
        },
    })
}

/// How the closed form handled one link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RepairAction {
    /// Positive reduced cost on a zero-flow link, carried by `w2`.
    Absorbed,
    /// `d_p` shifted by `-c_pi_p`.
    Vector,
    /// `H_(k)(p)` and its mirror shifted by `-c_pi_p / x0_k`.
    Matrix { partner: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Repair {
    pub link: usize,
    pub cpi: f64,
    pub action: RepairAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Max-norm stationarity residual with `w2` subtracted.
    pub stationarity_residual: f64,
    /// Same residual with `w2` added instead.
    pub plus_sign_residual: f64,
    /// Norm recomputed from `(H*, d*)` under the solution's norm.
    pub recomputed_norm: f64,
    pub canonicalized: bool,
    pub w1_free: bool,
    pub lp_objective: Option<f64>,
    pub lp_iterations: Option<usize>,
    pub variable_counts: Option<VariableCounts>,
    pub repairs: Vec<Repair>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InverseSolution {
    pub h_star: DMatrix<f64>,
    pub d_star: Vec<f64>,
    pub objective: f64,
    pub norm: Norm,
    pub method: Method,
    pub certificate: DualCertificate,
    pub diagnostics: Diagnostics,
}

impl InverseSolution {
    pub fn tag(&self) -> &'static str {
        method_tag(self.norm, self.method)
    }

    /// `(H*, d*)` as a cost; diagonal when `H*` has no off-diagonal entries.
    pub fn perturbed_cost(&self) -> QuadraticCost {
        perturbed_cost(&self.h_star, &self.d_star)
    }
}

pub(crate) fn perturbed_cost(h: &DMatrix<f64>, d: &[f64]) -> QuadraticCost {
    let dim = h.nrows();
    let off_diagonal = (0..dim).any(|a| (0..dim).any(|b| a != b && h[(a, b)] != 0.0));
    if off_diagonal {
        QuadraticCost::dense(h.clone(), d.to_vec()).expect("perturbed matrix is symmetric")
    } else {
        let diag: Vec<f64> = (0..dim).map(|a| h[(a, a)]).collect();
        QuadraticCost::diagonal(&diag, d.to_vec()).expect("sizes agree")
    }
}

fn residuals(
    inst: &TransportationInstance,
    h: &DMatrix<f64>,
    d: &[f64],
    flow: &FlowMatrix,
    cert: &DualCertificate,
) -> Result<(f64, f64), InverseError> {
    let cost = perturbed_cost(h, d);
    let minus = stationarity_residual(inst, &cost, flow, cert, BoundMultiplierSign::Minus)?;
    let plus = stationarity_residual(inst, &cost, flow, cert, BoundMultiplierSign::Plus)?;
    Ok((max_abs(&minus), max_abs(&plus)))
}

pub(crate) fn solve_inverse(
    norm: Norm,
    inst: &TransportationInstance,
    cost: &QuadraticCost,
    flow: &FlowMatrix,
    partition: &SupportPartition,
    w1mode: &W1Mode,
) -> Result<InverseSolution, InverseError> {
    let built = build_inverse_lp(
        norm,
        inst,
        cost,
        flow,
        partition,
        w1mode,
        cost.is_diagonal(),
    )?;
    let sol = solve_lp(&built.lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(InverseError::LpStatus(sol.status));
    }
    let vars = canonicalize(&built.split_variables(&sol));
    let (h_star, d_star) = vars.perturbed(cost);
    let certificate = DualCertificate {
        w1: vars.w1.clone(),
        w2: vars.w2.clone(),
    };
    let (residual, plus_residual) = residuals(inst, &h_star, &d_star, flow, &certificate)?;
    if residual > STATIONARITY_TOL {
        return Err(InverseError::StationarityViolated(residual));
    }
    let recomputed_norm = perturbation_norm(cost.q(), &h_star, cost.c(), &d_star, norm);
    Ok(InverseSolution {
        objective: vars.objective(),
        h_star,
        d_star,
        norm,
        method: Method::Lp,
        certificate,
        diagnostics: Diagnostics {
            stationarity_residual: residual,
            plus_sign_residual: plus_residual,
            recomputed_norm,
            canonicalized: true,
            w1_free: matches!(w1mode, W1Mode::Free),
            lp_objective: Some(sol.objective),
            lp_iterations: Some(sol.iterations),
            variable_counts: Some(built.counts),
            repairs: Vec::new(),
        },
    })
}

/// Closed-form candidate from the reduced costs at a fixed `w1`.
///
/// Each link with a nonzero reduced cost is repaired either through `d` or
/// through one entry of `H` (and its mirror), whichever raises the running
/// L1 objective less; ties go to `d`. The partner entry is the link's own
/// diagonal when it carries flow, otherwise the largest-flow link of `F`
/// (lowest index on ties). Diagonal costs only use their own diagonal, so a
/// zero-flow link is always repaired through `d`. The procedure is the same
/// for both norms; only the reported objective differs.
pub(crate) fn closed_form(
    norm: Norm,
    inst: &TransportationInstance,
    cost: &QuadraticCost,
    flow: &FlowMatrix,
    partition: &SupportPartition,
    w1: &[f64],
) -> Result<InverseSolution, InverseError> {
    check_sizes(inst, cost, partition)?;
    require_feasible(inst, flow)?;
    let dim = inst.links();
    let x0 = flow.x();
    let cpi = reduced_costs(inst, cost, flow, w1)?.cpi;

    let anchor =
        partition
            .positive()
            .iter()
            .copied()
            .fold(None, |best: Option<usize>, p| match best {
                Some(b) if x0[b] >= x0[p] => Some(b),
                _ => Some(p),
            });

    let mut dh = DMatrix::zeros(dim, dim);
    let mut dd = vec![0.0; dim];
    let mut w2 = vec![0.0; dim];
    let mut column_sums = vec![0.0; dim];
    let mut theta = 0.0_f64;
    let mut repairs = Vec::new();
    for p in 0..dim {
        let r = cpi[p];
        if r.abs() <= CPI_ZERO_TOL {
            continue;
        }
        if r > 0.0 && !partition.is_positive(p) {
            w2[p] = r;
            repairs.push(Repair {
                link: p,
                cpi: r,
                action: RepairAction::Absorbed,
            });
            continue;
        }
        let partner = if partition.is_positive(p) {
            Some(p)
        } else if cost.is_diagonal() {
            None
        } else {
            anchor
        };
        let vector_increase = r.abs();
        let matrix = partner.map(|k| {
            let value = -r / x0[k];
            let mut sums = column_sums.clone();
            sums[p] += value.abs();
            if k != p {
                sums[k] += value.abs();
            }
            let new_theta = sums.iter().copied().fold(0.0, f64::max);
            (k, value, sums, new_theta - theta)
        });
        match matrix {
            Some((k, value, sums, increase)) if increase < vector_increase => {
                dh[(k, p)] += value;
                if k != p {
                    dh[(p, k)] += value;
                }
                theta = sums.iter().copied().fold(theta, f64::max);
                column_sums = sums;
                repairs.push(Repair {
                    link: p,
                    cpi: r,
                    action: RepairAction::Matrix { partner: k },
                });
            }
            _ => {
                dd[p] = -r;
                repairs.push(Repair {
                    link: p,
                    cpi: r,
                    action: RepairAction::Vector,
                });
            }
        }
    }

    let mut h_star = cost.q() + &dh;
    crate::model::symmetrize(&mut h_star);
    let d_star: Vec<f64> = cost.c().iter().zip(&dd).map(|(c, e)| c + e).collect();
    let certificate = DualCertificate {
        w1: w1.to_vec(),
        w2,
    };
    let (residual, plus_residual) = residuals(inst, &h_star, &d_star, flow, &certificate)?;
    let recomputed_norm = perturbation_norm(cost.q(), &h_star, cost.c(), &d_star, norm);
    Ok(InverseSolution {
        h_star,
        d_star,
        objective: recomputed_norm,
        norm,
        method: Method::ClosedForm,
        certificate,
        diagnostics: Diagnostics {
            stationarity_residual: residual,
            plus_sign_residual: plus_residual,
            recomputed_norm,
            canonicalized: false,
            w1_free: false,
            lp_objective: None,
            lp_iterations: None,
            variable_counts: None,
            repairs,
        },
    })
}
