//! Inverse problem under the L1 pair: max absolute column sum on the matrix
//! plus the sum of absolute values on the vector.

pub use crate::inverse::{canonicalize, InverseLp, InverseSolution, SplitVariables, W1Mode};

use crate::inverse::{build_inverse_lp, closed_form, solve_inverse, InverseError, Norm};
use crate::model::{FlowMatrix, QuadraticCost, SupportPartition, TransportationInstance};

/// Assembles the L1 inverse LP. `diagonal` restricts `H` to diagonal perturbations.
pub fn build_l1_lp(
    inst: &TransportationInstance,
    cost: &QuadraticCost,
    flow: &FlowMatrix,
    partition: &SupportPartition,
    w1mode: &W1Mode,
    diagonal: bool,
) -> Result<InverseLp, InverseError> {
    build_inverse_lp(Norm::L1, inst, cost, flow, partition, w1mode, diagonal)
}

/// Solves the L1 inverse LP; diagonal costs get diagonal perturbations.
pub fn solve_l1(
    inst: &TransportationInstance,
    cost: &QuadraticCost,
    flow: &FlowMatrix,
    partition: &SupportPartition,
    w1mode: &W1Mode,
) -> Result<InverseSolution, InverseError> {
    solve_inverse(Norm::L1, inst, cost, flow, partition, w1mode)
}

pub fn closed_form_l1(
    inst: &TransportationInstance,
    cost: &QuadraticCost,
    flow: &FlowMatrix,
    partition: &SupportPartition,
    w1: &[f64],
) -> Result<InverseSolution, InverseError> {
    closed_form(Norm::L1, inst, cost, flow, partition, w1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{solve_forward, ForwardOptions};
    use crate::kkt::tree_potentials;
    use crate::linprog::{enumerate_vertices, LpStatus};
    use crate::model::{generate_instance, GeneratorConfig, QuadraticMode};
    use nalgebra::DMatrix;

    fn two_by_two(diagonal: bool) -> (TransportationInstance, QuadraticCost, FlowMatrix) {
        let inst = TransportationInstance::new(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let cost = if diagonal {
            QuadraticCost::diagonal(&[2.0; 4], vec![0.0; 4]).unwrap()
        } else {
            QuadraticCost::dense(DMatrix::identity(4, 4) * 2.0, vec![0.0; 4]).unwrap()
        };
        (
            inst,
            cost,
            FlowMatrix::new(vec![1.0, 0.0, 0.0, 1.0], 1e-9).unwrap(),
        )
    }

    #[test]
    fn dense_counts_with_fixed_and_free_w1() {
        let (inst, cost, flow) = two_by_two(false);
        let part = flow.partition();
        let fixed = build_l1_lp(
            &inst,
            &cost,
            &flow,
            &part,
            &W1Mode::Fixed(vec![0.0; 4]),
            false,
        )
        .unwrap();
        assert_eq!(fixed.counts.raw, 45);
        let free = build_l1_lp(&inst, &cost, &flow, &part, &W1Mode::Free, false).unwrap();
        assert_eq!((free.counts.nominal, free.counts.raw), (48, 49));
    }

    #[test]
    fn diagonal_counts_with_free_w1() {
        let (inst, cost, flow) = two_by_two(true);
        let built =
            build_l1_lp(&inst, &cost, &flow, &flow.partition(), &W1Mode::Free, true).unwrap();
        assert_eq!((built.counts.nominal, built.counts.raw), (24, 25));
    }

    #[test]
    fn rows_split_into_stationarity_and_epigraph() {
        let (inst, cost, flow) = two_by_two(false);
        let part = flow.partition();
        let built = build_l1_lp(&inst, &cost, &flow, &part, &W1Mode::Free, false).unwrap();
        assert_eq!(built.lp.num_rows(), 8);
        let names = built.lp.names();
        let with_w2 = (0..4)
            .filter(|&r| {
                built
                    .lp
                    .row(r)
                    .iter()
                    .any(|(v, _)| names[*v].starts_with("w2"))
            })
            .count();
        assert_eq!(with_w2, part.zero().len());
    }

    #[test]
    fn single_cell_needs_no_perturbation() {
        let inst = TransportationInstance::new(vec![2.5], vec![2.5]).unwrap();
        let cost = QuadraticCost::diagonal(&[3.0], vec![-4.0]).unwrap();
        let flow = FlowMatrix::new(vec![2.5], 1e-9).unwrap();
        let sol = solve_l1(&inst, &cost, &flow, &flow.partition(), &W1Mode::Free).unwrap();
        assert!(sol.objective.abs() <= 1e-12);
        assert_eq!(sol.h_star, *cost.q());
    }

    #[test]
    fn forward_optimal_flow_gives_zero_perturbation() {
        for seed in 0..6 {
            let g = generate_instance(
                &GeneratorConfig::new(seed, 2, 3).with_quadratic(QuadraticMode::DensePsd),
            )
            .unwrap();
            let x = solve_forward(&g.instance, &g.cost, ForwardOptions::default())
                .unwrap()
                .x;
            let flow = FlowMatrix::new(x, 1e-9).unwrap();
            let sol = solve_l1(
                &g.instance,
                &g.cost,
                &flow,
                &flow.partition(),
                &W1Mode::Free,
            )
            .unwrap();
            assert!(sol.objective <= 1e-6, "seed {seed}: {}", sol.objective);
        }
    }

    #[test]
    fn anti_optimal_vertex_matches_vertex_enumeration() {
        let (inst, cost, flow) = two_by_two(true);
        let part = flow.partition();
        let built = build_l1_lp(&inst, &cost, &flow, &part, &W1Mode::Free, true).unwrap();
        let oracle = enumerate_vertices(&built.lp).unwrap();
        assert_eq!(oracle.status, LpStatus::Optimal);
        let sol = solve_l1(&inst, &cost, &flow, &part, &W1Mode::Free).unwrap();
        assert!(sol.objective > 1e-3);
        assert!((sol.objective - oracle.objective).abs() <= 1e-8);
    }

    #[test]
    fn canonicalize_removes_overlap() {
        let mut gamma = DMatrix::zeros(2, 2);
        gamma[(0, 1)] = 1.0;
        gamma[(1, 0)] = 1.0;
        let vars = SplitVariables {
            delta: gamma.clone(),
            gamma,
            alpha: vec![0.0; 2],
            beta: vec![0.0; 2],
            theta: 2.0,
            theta_vector: None,
            w1: vec![0.0; 2],
            w2: vec![0.0; 2],
        };
        let canon = canonicalize(&vars);
        assert_eq!(canon.gamma, DMatrix::zeros(2, 2));
        assert_eq!(canon.delta, DMatrix::zeros(2, 2));
        assert_eq!(canon.theta, 0.0);
        assert_eq!(canonicalize(&canon), canon);
    }

    #[test]
    fn closed_form_on_optimal_flow_is_zero() {
        let inst = TransportationInstance::new(vec![1.0], vec![1.0]).unwrap();
        let cost = QuadraticCost::diagonal(&[1.0], vec![7.0]).unwrap();
        let flow = FlowMatrix::new(vec![1.0], 1e-9).unwrap();
        let part = flow.partition();
        let w1 = tree_potentials(&inst, &cost, &flow, &part).unwrap();
        let sol = closed_form_l1(&inst, &cost, &flow, &part, &w1).unwrap();
        assert_eq!(sol.objective, 0.0);
        assert_eq!(sol.d_star, cost.c());
    }

    #[test]
    fn closed_form_is_never_better_than_the_lp() {
        let (inst, cost, flow) = two_by_two(true);
        let part = flow.partition();
        let w1 = tree_potentials(&inst, &cost, &flow, &part).unwrap();
        let closed = closed_form_l1(&inst, &cost, &flow, &part, &w1).unwrap();
        let lp = solve_l1(&inst, &cost, &flow, &part, &W1Mode::Free).unwrap();
        assert!(closed.objective >= lp.objective - 1e-8);
        assert!(closed.diagnostics.stationarity_residual <= 1e-7);
    }
}
