//! Inverse problem under the L-infinity pair: max absolute row sum on the
//! matrix plus the max absolute value on the vector.

pub use crate::inverse::{InverseLp, InverseSolution, W1Mode};

use crate::inverse::{build_inverse_lp, closed_form, solve_inverse, InverseError, Norm};
use crate::model::{FlowMatrix, QuadraticCost, SupportPartition, TransportationInstance};

pub fn build_linf_lp(
    inst: &TransportationInstance,
    cost: &QuadraticCost,
    flow: &FlowMatrix,
    partition: &SupportPartition,
    w1mode: &W1Mode,
    diagonal: bool,
) -> Result<InverseLp, InverseError> {
    build_inverse_lp(Norm::Linf, inst, cost, flow, partition, w1mode, diagonal)
}

pub fn solve_linf(
    inst: &TransportationInstance,
    cost: &QuadraticCost,
    flow: &FlowMatrix,
    partition: &SupportPartition,
    w1mode: &W1Mode,
) -> Result<InverseSolution, InverseError> {
    solve_inverse(Norm::Linf, inst, cost, flow, partition, w1mode)
}

/// Same repair as the L1 closed form; the objective is measured under L-infinity.
pub fn closed_form_linf(
    inst: &TransportationInstance,
    cost: &QuadraticCost,
    flow: &FlowMatrix,
    partition: &SupportPartition,
    w1: &[f64],
) -> Result<InverseSolution, InverseError> {
    closed_form(Norm::Linf, inst, cost, flow, partition, w1)
}
