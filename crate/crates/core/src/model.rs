//! Balanced transportation instances, quadratic costs, candidate flows and the
//! flat index scheme shared by every other module.
//!
//! A link `(i, j)` from origin `i` to destination `j` (both 1-based) is stored
//! at flat position `(i - 1) * m + (j - 1)`. Matrices over links, such as the
//! quadratic cost `Q`, are `nm x nm` and indexed by flat positions on both axes.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `|sum(supplies) - sum(demands)|`.
pub const BALANCE_TOL: f64 = 1e-9;
/// Default threshold below which a flow entry counts as zero.
pub const DEFAULT_SUPPORT_TOL: f64 = 1e-9;
/// Tolerance on row/column residuals when checking a flow.
pub const FLOW_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("index ({i}, {j}) out of range for a grid with {m} destinations")]
    IndexOutOfRange { i: usize, j: usize, m: usize },
    #[error("{what}: expected length {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("support tolerance must be nonnegative, got {0}")]
    NegativeTolerance(f64),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("Q is not symmetric at ({p}, {q})")]
    Asymmetric { p: usize, q: usize },
    #[error("flow entry {index} is negative or not finite ({value})")]
    InvalidFlowEntry { index: usize, value: f64 },
    #[error("impossible generator ranges: {0}")]
    ImpossibleRange(String),
}

/// A link `(i, j)` with 1-based origin/destination and its 0-based flat position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairIndex {
    pub i: usize,
    pub j: usize,
    pub flat: usize,
}

/// Row-major flat position of link `(i, j)`; `i` and `j` are 1-based.
pub fn flatten(i: usize, j: usize, m: usize) -> Result<usize, ModelError> {
    if i == 0 || j == 0 || j > m {
        return Err(ModelError::IndexOutOfRange { i, j, m });
    }
    Ok((i - 1) * m + (j - 1))
}

/// Inverse of [`flatten`].
pub fn unflatten(flat: usize, m: usize) -> PairIndex {
    assert!(m > 0, "destination count must be positive");
    PairIndex {
        i: flat / m + 1,
        j: flat % m + 1,
        flat,
    }
}

/// Origins with supplies and destinations with demands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportationInstance {
    supplies: Vec<f64>,
    demands: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub balance_residual: f64,
    pub negative_supplies: Vec<usize>,
    pub negative_demands: Vec<usize>,
    pub accepted: bool,
}

/// Checks sizes, signs and balance of a supply/demand pair.
pub fn validate_instance(supplies: &[f64], demands: &[f64]) -> InstanceReport {
    let total_s: f64 = supplies.iter().sum();
    let total_d: f64 = demands.iter().sum();
    let balance_residual = (total_s - total_d).abs();
    let negative = |v: &[f64]| {
        v.iter()
            .enumerate()
            .filter(|(_, x)| !(**x >= 0.0) || !x.is_finite())
            .map(|(k, _)| k)
            .collect::<Vec<_>>()
    };
    let negative_supplies = negative(supplies);
    let negative_demands = negative(demands);
    let accepted = !supplies.is_empty()
        && !demands.is_empty()
        && negative_supplies.is_empty()
        && negative_demands.is_empty()
        && balance_residual <= BALANCE_TOL;
    InstanceReport {
        balance_residual,
        negative_supplies,
        negative_demands,
        accepted,
    }
}

impl TransportationInstance {
    pub fn new(supplies: Vec<f64>, demands: Vec<f64>) -> Result<Self, ModelError> {
        let report = validate_instance(&supplies, &demands);
        if !report.accepted {
            let reason = if supplies.is_empty() || demands.is_empty() {
                "need at least one origin and one destination".to_string()
            } else if !report.negative_supplies.is_empty() || !report.negative_demands.is_empty() {
                "negative supply or demand".to_string()
            } else {
                format!("unbalanced, residual {}", report.balance_residual)
            };
            return Err(ModelError::InvalidInstance(reason));
        }
        Ok(Self { supplies, demands })
    }

    pub fn n(&self) -> usize {
        self.supplies.len()
    }

    pub fn m(&self) -> usize {
        self.demands.len()
    }

    /// Number of links, `n * m`.
    pub fn links(&self) -> usize {
        self.n() * self.m()
    }

    pub fn supplies(&self) -> &[f64] {
        &self.supplies
    }

    pub fn demands(&self) -> &[f64] {
        &self.demands
    }

    /// Right-hand side `(s_1..s_n, d_1..d_m)`.
    pub fn rhs(&self) -> Vec<f64> {
        self.supplies.iter().chain(&self.demands).copied().collect()
    }

    /// `A x`: row sums followed by column sums of a flat flow vector.
    pub fn apply_constraints(&self, x: &[f64]) -> Vec<f64> {
        let (n, m) = (self.n(), self.m());
        let mut out = vec![0.0; n + m];
        for (p, v) in x.iter().enumerate() {
            out[p / m] += v;
            out[n + p % m] += v;
        }
        out
    }

    /// `A^T w`: entry `(i, j)` is `w_i + w_{n+j}`.
    pub fn apply_transpose(&self, w: &[f64]) -> Vec<f64> {
        let (n, m) = (self.n(), self.m());
        (0..n * m).map(|p| w[p / m] + w[n + p % m]).collect()
    }
}

/// Node-link incidence matrix `A` (`n + m` rows, `nm` columns) and `b`.
pub fn constraint_matrix(inst: &TransportationInstance) -> (DMatrix<f64>, Vec<f64>) {
    let (n, m) = (inst.n(), inst.m());
    let mut a = DMatrix::zeros(n + m, n * m);
    for p in 0..n * m {
        a[(p / m, p)] = 1.0;
        a[(n + p % m, p)] = 1.0;
    }
    (a, inst.rhs())
}

/// Symmetric `Q` and linear `c` defining `0.5 x^T Q x + c^T x`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    q: DMatrix<f64>,
    c: Vec<f64>,
    diagonal: bool,
}

impl QuadraticCost {
    /// Dense cost; symmetry is checked entrywise and exactly.
    pub fn dense(q: DMatrix<f64>, c: Vec<f64>) -> Result<Self, ModelError> {
        let dim = c.len();
        if q.nrows() != dim || q.ncols() != dim {
            return Err(ModelError::DimensionMismatch {
                what: "Q",
                expected: dim,
                found: if q.nrows() != dim {
                    q.nrows()
                } else {
                    q.ncols()
                },
            });
        }
        for p in 0..dim {
            for r in p + 1..dim {
                if q[(p, r)] != q[(r, p)] {
                    return Err(ModelError::Asymmetric { p, q: r });
                }
            }
        }
        Ok(Self {
            q,
            c,
            diagonal: false,
        })
    }

    pub fn diagonal(diag: &[f64], c: Vec<f64>) -> Result<Self, ModelError> {
        if diag.len() != c.len() {
            return Err(ModelError::DimensionMismatch {
                what: "Q diagonal",
                expected: c.len(),
                found: diag.len(),
            });
        }
        Ok(Self {
            q: DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag)),
            c,
            diagonal: true,
        })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// `Q x + c`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = mat_vec(&self.q, x);
        for (gp, cp) in g.iter_mut().zip(&self.c) {
            *gp += cp;
        }
        g
    }
}

pub(crate) fn mat_vec(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (0..a.nrows())
        .map(|r| (0..a.ncols()).map(|k| a[(r, k)] * x[k]).sum())
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `0.5 x^T Q x + c^T x`.
pub fn evaluate_objective(cost: &QuadraticCost, x: &[f64]) -> Result<f64, ModelError> {
    if x.len() != cost.dim() {
        return Err(ModelError::DimensionMismatch {
            what: "flow",
            expected: cost.dim(),
            found: x.len(),
        });
    }
    let qx = mat_vec(&cost.q, x);
    Ok(0.5 * dot(x, &qx) + dot(&cost.c, x))
}

/// A candidate flow `x0` over the flat link index.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMatrix {
    x: Vec<f64>,
    support_tol: f64,
}

impl FlowMatrix {
    pub fn new(x: Vec<f64>, support_tol: f64) -> Result<Self, ModelError> {
        if !(support_tol >= 0.0) {
            return Err(ModelError::NegativeTolerance(support_tol));
        }
        if let Some((index, &value)) = x
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0) || !v.is_finite())
        {
            return Err(ModelError::InvalidFlowEntry { index, value });
        }
        Ok(Self { x, support_tol })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn support_tol(&self) -> f64 {
        self.support_tol
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn partition(&self) -> SupportPartition {
        support_partition(&self.x, self.support_tol).expect("tolerance checked at construction")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub max_row_residual: f64,
    pub max_column_residual: f64,
    pub min_entry: f64,
    pub feasible: bool,
}

pub fn check_flow_feasibility(
    inst: &TransportationInstance,
    x: &[f64],
) -> Result<FlowReport, ModelError> {
    if x.len() != inst.links() {
        return Err(ModelError::DimensionMismatch {
            what: "flow",
            expected: inst.links(),
            found: x.len(),
        });
    }
    let n = inst.n();
    let ax = inst.apply_constraints(x);
    let residual = |range: std::ops::Range<usize>, target: &[f64]| {
        range
            .zip(target)
            .map(|(k, t)| (ax[k] - t).abs())
            .fold(0.0, f64::max)
    };
    let max_row_residual = residual(0..n, inst.supplies());
    let max_column_residual = residual(n..n + inst.m(), inst.demands());
    let min_entry = x.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(FlowReport {
        max_row_residual,
        max_column_residual,
        min_entry,
        feasible: max_row_residual <= FLOW_TOL
            && max_column_residual <= FLOW_TOL
            && min_entry >= 0.0,
    })
}

/// Split of the link set into positive-flow links `F` and zero-flow links `L`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportPartition {
    positive: Vec<usize>,
    zero: Vec<usize>,
    is_positive: Vec<bool>,
}

impl SupportPartition {
    /// `F`, ascending.
    pub fn positive(&self) -> &[usize] {
        &self.positive
    }

    /// `L`, ascending.
    pub fn zero(&self) -> &[usize] {
        &self.zero
    }

    pub fn is_positive(&self, p: usize) -> bool {
        self.is_positive[p]
    }

    pub fn len(&self) -> usize {
        self.is_positive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.is_positive.is_empty()
    }
}

pub fn support_partition(x: &[f64], tol: f64) -> Result<SupportPartition, ModelError> {
    if !(tol >= 0.0) {
        return Err(ModelError::NegativeTolerance(tol));
    }
    let is_positive: Vec<bool> = x.iter().map(|&v| v > tol).collect();
    let (positive, zero) = (0..x.len()).partition(|&p| is_positive[p]);
    Ok(SupportPartition {
        positive,
        zero,
        is_positive,
    })
}

/// Northwest-corner rule. The support is a forest with at most `n + m - 1` links.
pub fn northwest_corner(inst: &TransportationInstance) -> Vec<f64> {
    let (n, m) = (inst.n(), inst.m());
    let mut s = inst.supplies().to_vec();
    let mut d = inst.demands().to_vec();
    let mut x = vec![0.0; n * m];
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        let ship = s[i].min(d[j]);
        x[i * m + j] = ship;
        s[i] -= ship;
        d[j] -= ship;
        if i == n - 1 {
            j += 1;
        } else if j == m - 1 || s[i] <= d[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadraticMode {
    /// Sum of `nm + 1` random outer products; positive semidefinite.
    DensePsd,
    /// Positive diagonal.
    Diagonal,
    /// Random symmetric matrix, generally indefinite.
    Indefinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    /// Integer-valued supplies and demands are drawn from this closed range.
    pub amount_range: (u32, u32),
    pub cost_range: (f64, f64),
    pub quadratic: QuadraticMode,
}

impl GeneratorConfig {
    pub fn new(seed: u64, n: usize, m: usize) -> Self {
        Self {
            seed,
            n,
            m,
            amount_range: (1, 9),
            cost_range: (0.0, 10.0),
            quadratic: QuadraticMode::DensePsd,
        }
    }

    pub fn with_quadratic(mut self, mode: QuadraticMode) -> Self {
        self.quadratic = mode;
        self
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedInstance {
    pub instance: TransportationInstance,
    pub cost: QuadraticCost,
    pub flow: Vec<f64>,
}

/// Seeded random instance with a northwest-corner starting flow.
pub fn generate_instance(config: &GeneratorConfig) -> Result<GeneratedInstance, ModelError> {
    let (n, m) = (config.n, config.m);
    let (lo, hi) = config.amount_range;
    if n == 0 || m == 0 {
        return Err(ModelError::ImpossibleRange(
            "n and m must be positive".into(),
        ));
    }
    if lo > hi || !(config.cost_range.0 <= config.cost_range.1) {
        return Err(ModelError::ImpossibleRange("empty range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let supplies: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..=hi) as f64).collect();
    let total: f64 = supplies.iter().sum();

    // split the total proportionally to random weights; the last demand closes the balance
    let weights: Vec<f64> = (0..m)
        .map(|_| rng.gen_range(lo..=hi).max(1) as f64)
        .collect();
    let weight_sum: f64 = weights.iter().sum();
    let mut demands: Vec<f64> = weights[..m - 1]
        .iter()
        .map(|w| (total * w / weight_sum).floor())
        .collect();
    demands.push(total - demands.iter().sum::<f64>());
    let instance = TransportationInstance::new(supplies, demands)?;

    let dim = n * m;
    let (clo, chi) = config.cost_range;
    let c: Vec<f64> = (0..dim)
        .map(|_| {
            if clo == chi {
                clo
            } else {
                rng.gen_range(clo..chi)
            }
        })
        .collect();
    let cost = match config.quadratic {
        QuadraticMode::Diagonal => {
            let diag: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.5..2.0)).collect();
            QuadraticCost::diagonal(&diag, c)?
        }
        QuadraticMode::DensePsd => {
            let mut q = DMatrix::zeros(dim, dim);
            for _ in 0..dim + 1 {
                let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                for a in 0..dim {
                    for b in 0..dim {
                        q[(a, b)] += v[a] * v[b];
                    }
                }
            }
            symmetrize(&mut q);
            QuadraticCost::dense(q, c)?
        }
        QuadraticMode::Indefinite => {
            let mut q = DMatrix::zeros(dim, dim);
            for a in 0..dim {
                for b in a..dim {
                    let v = rng.gen_range(-1.0..1.0);
                    q[(a, b)] = v;
                    q[(b, a)] = v;
                }
            }
            QuadraticCost::dense(q, c)?
        }
    };
    let flow = northwest_corner(&instance);
    Ok(GeneratedInstance {
        instance,
        cost,
        flow,
    })
}

/// Copies the upper triangle onto the lower one so symmetry is exact.
pub(crate) fn symmetrize(q: &mut DMatrix<f64>) {
    for a in 0..q.nrows() {
        for b in a + 1..q.ncols() {
            q[(b, a)] = q[(a, b)];
        }
    }
}
