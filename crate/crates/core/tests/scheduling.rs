use std::sync::Arc;

use cohesim_core::msnet::{
    lpt_assign, plan_schedule, validate_trace, CostBasis, Job, MicroSolver, MsnetConfig, Network,
    TransportMode,
};
use cohesim_core::ruc_micro::{MicroError, MicroResult, Model, Ruc, RucTemplate};
use cohesim_core::tensor_mech::{DefGradient, MaterialParams, Tensor3};
use proptest::prelude::*;

fn optimal_makespan(costs: &[f64], m: usize) -> f64 {
    fn go(i: usize, costs: &[f64], loads: &mut Vec<f64>, best: &mut f64) {
        let cur = loads.iter().copied().fold(0.0, f64::max);
        if cur >= *best {
            return;
        }
        if i == costs.len() {
            *best = cur;
            return;
        }
        for s in 0..loads.len() {
            loads[s] += costs[i];
            go(i + 1, costs, loads, best);
            loads[s] -= costs[i];
        }
    }
    let mut best = f64::INFINITY;
    go(0, costs, &mut vec![0.0; m], &mut best);
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn lpt_within_graham_bound(costs in prop::collection::vec(0.01f64..10.0, 1..=8), m in 1usize..=3) {
        let (assign, loads) = lpt_assign(&costs, m);
        let mut check = vec![0.0; m];
        for (c, s) in costs.iter().zip(&assign) {
            check[*s] += c;
        }
        for (a, b) in check.iter().zip(&loads) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let lpt = loads.iter().copied().fold(0.0, f64::max);
        let opt = optimal_makespan(&costs, m);
        prop_assert!(lpt <= (4.0 / 3.0 - 1.0 / (3.0 * m as f64)) * opt + 1e-12, "{lpt} vs {opt}");
    }
}

struct Stretch;

impl MicroSolver for Stretch {
    fn solve(&self, job: &Job, ruc: &mut Ruc) -> Result<MicroResult, MicroError> {
        ruc.damage[0].omega_v = (ruc.damage[0].omega_v + 0.1).min(0.9);
        Ok(MicroResult {
            traction: [
                job.f0.tensor().0[2][2] + ruc.damage[0].omega_v,
                0.0,
                job.element as f64,
            ],
            mean_damage: ruc.mean_damage(),
            iterations: 1,
            wall_time_s: 0.0,
            converged: true,
        })
    }
}

fn job(element: usize, cost: f64) -> Job {
    Job {
        id: element,
        element,
        model: if cost > 1.0 {
            Model::Full
        } else {
            Model::Taylor
        },
        f0: DefGradient::new(Tensor3::from_diag([1.0, 1.0, 1.0 + 0.001 * element as f64])).unwrap(),
        dt: 0.01,
        cost,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn placement_never_changes_results(
        costs in prop::collection::vec(prop::collection::vec(0.1f64..5.0, 9), 1..4),
        servers in 2usize..5,
        workers in 1usize..4,
        seed in any::<u64>(),
    ) {
        let cell = Arc::new(RucTemplate::homogeneous(2, 100.0, 100.0, MaterialParams::polyurethane_matrix()).unwrap());
        let rucs = || (0..9).map(|_| Ruc::pristine(cell.clone())).collect::<Vec<_>>();
        let run = |cfg: MsnetConfig| {
            let mut net = Network::new(cfg, rucs()).unwrap();
            let mut out = Vec::new();
            let mut traces = Vec::new();
            for step in &costs {
                let jobs = step.iter().enumerate().map(|(e, &c)| job(e, c)).collect();
                let o = net.execute_step(jobs, &Stretch).unwrap();
                let moved: Vec<(usize, usize)> = o.schedule.migrations.iter().map(|m| (o.schedule.step, m.element)).collect();
                traces.push(validate_trace(&o.trace, cfg.workers_per_server, Some(&moved)));
                out.push(o.results);
            }
            (out, traces)
        };
        let base = MsnetConfig { cost_basis: CostBasis::Nominal, ..Default::default() };
        let (serial, _) = run(base);
        let cfg = MsnetConfig { servers, workers_per_server: workers, mode: TransportMode::Seeded, seed, ..base };
        let (spread, reports) = run(cfg);
        prop_assert_eq!(serial, spread);
        for r in reports {
            prop_assert!(r.ok(), "{:?}", r.violations);
        }
    }
}

#[test]
fn rebalance_threshold_keeps_near_optimal_placement() {
    let jobs: Vec<Job> = [4.0, 4.0, 3.0, 3.0]
        .iter()
        .enumerate()
        .map(|(e, &c)| job(e, c))
        .collect();
    let host = [0, 1, 0, 1];
    let kept = plan_schedule(0, &jobs, 2, &host, Some(0.05));
    assert!(kept.migrations.is_empty());
    let skewed = [0, 0, 0, 1];
    let moved = plan_schedule(0, &jobs, 2, &skewed, Some(0.05));
    assert_eq!(moved.predicted_makespan, 7.0);
    assert!(!moved.migrations.is_empty());
}
