//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use cohesim_core::msnet::Job;
use cohesim_core::ruc_micro::{macro_f_from_jump, Model, RucTemplate};
use cohesim_core::svr::{median_heuristic, SvrProblem};
use cohesim_core::DefGradient;

pub fn two_phase(grid: usize) -> Arc<RucTemplate> {
    Arc::new(RucTemplate::reference_two_phase(grid, 7).expect("reference cell packs"))
}

/// Mixed-mode opening of `r` µm on a 100 µm layer.
pub fn opening(r: f64) -> DefGradient {
    macro_f_from_jump(&[0.4 * r, 0.0, r], &[0.0, 0.0, 1.0], 100.0).expect("admissible")
}

/// Deterministic labeled problem with a curved class boundary.
pub fn svr_problem(n: usize) -> SvrProblem {
    let x: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let t = i as f64 / n as f64;
            [
                0.785 * ((t * 7.3).fract()),
                1.57 * ((t * 3.1 + 0.2).fract()),
            ]
        })
        .collect();
    let y = x
        .iter()
        .map(|p| {
            if p[1] > 0.6 + 0.5 * p[0].sin() {
                1.0
            } else {
                -1.0
            }
        })
        .collect();
    let sigma = median_heuristic(&x);
    SvrProblem {
        x,
        y,
        c: 10.0,
        epsilon: 0.1,
        sigma,
    }
}

pub fn jobs(n: usize) -> Vec<Job> {
    (0..n)
        .map(|e| Job {
            id: e,
            element: e,
            model: if e % 3 == 0 {
                Model::Full
            } else {
                Model::Taylor
            },
            f0: DefGradient::identity(),
            dt: 0.01,
            cost: 1.0 + ((e * 37) % 11) as f64,
        })
        .collect()
}
