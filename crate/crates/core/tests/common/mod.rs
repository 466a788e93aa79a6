//! Seeded instance fleet shared by the integration tests.
#![allow(dead_code)]

use invqtp::forward::{solve_forward, ForwardOptions};
use invqtp::kkt::frank_wolfe_gap;
use invqtp::model::{
    generate_instance, FlowMatrix, GeneratorConfig, QuadraticCost, QuadraticMode,
    TransportationInstance, DEFAULT_SUPPORT_TOL,
};

#[derive(Debug, Clone)]
pub struct Case {
    pub label: String,
    pub instance: TransportationInstance,
    pub cost: QuadraticCost,
    pub flow: FlowMatrix,
    pub optimal: bool,
}

/// Shape and quadratic mode for a seed; 18 consecutive seeds cover every
/// combination of n, m in {1, 2, 3} and both modes.
pub fn shape(seed: u64) -> (usize, usize, QuadraticMode) {
    let n = 1 + (seed % 3) as usize;
    let m = 1 + ((seed / 3) % 3) as usize;
    let mode = if seed.is_multiple_of(2) {
        QuadraticMode::Diagonal
    } else {
        QuadraticMode::DensePsd
    };
    (n, m, mode)
}

pub fn case(seed: u64, n: usize, m: usize, mode: QuadraticMode, optimal: bool) -> Case {
    let g = generate_instance(&GeneratorConfig::new(seed, n, m).with_quadratic(mode)).unwrap();
    let x = if optimal {
        let x = solve_forward(&g.instance, &g.cost, ForwardOptions::default())
            .unwrap()
            .x;
        let gap = frank_wolfe_gap(&g.instance, &g.cost, &x).unwrap();
        assert!(gap <= 1e-8, "forward solve of seed {seed} left gap {gap:e}");
        x
    } else {
        g.flow.clone()
    };
    Case {
        label: format!(
            "seed {seed} {n}x{m} {mode:?} {}",
            if optimal { "optimal" } else { "northwest" }
        ),
        instance: g.instance,
        cost: g.cost,
        flow: FlowMatrix::new(x, DEFAULT_SUPPORT_TOL).unwrap(),
        optimal,
    }
}

/// Forward-optimal flows for seeds `0..count`.
pub fn optimal_fleet(count: u64) -> Vec<Case> {
    (0..count)
        .map(|seed| {
            let (n, m, mode) = shape(seed);
            case(seed, n, m, mode, true)
        })
        .collect()
}

/// Forward-optimal and northwest-corner flows for seeds `0..count`.
pub fn full_fleet(count: u64) -> Vec<Case> {
    let mut cases = optimal_fleet(count);
    cases.extend((0..count).map(|seed| {
        let (n, m, mode) = shape(seed);
        case(seed, n, m, mode, false)
    }));
    cases
}
