use std::sync::Arc;

use cohesim_core::interface_geom::InterfaceMesh;
use cohesim_core::macro_driver::{
    run_simulation, LoadProgram, ModelPolicy, OpeningProfile, SimulationSetup,
};
use cohesim_core::msnet::{CostBasis, MsnetConfig, TransportMode};
use cohesim_core::ruc_micro::{Model, RucTemplate, SolverOptions, MATRIX_PHASE, PARTICLE_PHASE};
use cohesim_core::sampling_db::{build_database, BankOptions, DatabaseSpec, PhiRange, SvrOptions};
use cohesim_core::tensor_mech::MaterialParams;

fn cell() -> Arc<RucTemplate> {
    let g = 4;
    let map = (0..g * g * g)
        .map(|v| {
            if [v % g, (v / g) % g, v / (g * g)]
                .iter()
                .all(|c| (1..3).contains(c))
            {
                PARTICLE_PHASE
            } else {
                MATRIX_PHASE
            }
        })
        .collect();
    let phases = vec![
        MaterialParams::polyurethane_matrix(),
        MaterialParams::nylon_particle(),
    ];
    Arc::new(RucTemplate::new(g, 100.0, 100.0, map, phases, None).unwrap())
}

#[test]
fn adaptive_run_is_monotone_and_placement_independent() {
    let cell = cell();
    let spec = DatabaseSpec {
        lambda: 8.0,
        n_s: 4,
        n_t: 16,
        gamma: 0.15,
        phi_range: PhiRange::Reduced,
        svr: SvrOptions::default(),
        seed: 2,
    };
    let (db, _) = build_database(&cell, &spec, &BankOptions::default()).unwrap();
    let db = Arc::new(db);
    let mesh = InterfaceMesh::bezier_interface(
        InterfaceMesh::circular_arc_controls(20.0, 1.0),
        8,
        100.0,
        false,
    )
    .unwrap();
    let setup = |msnet| SimulationSetup {
        mesh: &mesh,
        template: cell.clone(),
        policy: ModelPolicy::Adaptive(db.clone()),
        program: LoadProgram {
            delta_max: 0.008,
            steps: 8,
            rate_cap: 1.0,
        },
        profile: OpeningProfile {
            length: 0.4,
            ..OpeningProfile::default()
        },
        msnet,
        solver: SolverOptions::default(),
    };
    let one = run_simulation(&setup(MsnetConfig {
        cost_basis: CostBasis::Nominal,
        ..MsnetConfig::default()
    }))
    .unwrap();
    assert!(one.failure.is_none(), "{:?}", one.failure);
    for w in one.records.windows(2) {
        assert!(w[1].tm_fraction <= w[0].tm_fraction);
        for (a, b) in w[0].elements.iter().zip(&w[1].elements) {
            assert!(a.model == Model::Taylor || b.model == Model::Full);
        }
    }
    assert!(one.records[0].tm_fraction > one.final_tm_fraction());
    let four = run_simulation(&setup(MsnetConfig {
        servers: 4,
        workers_per_server: 2,
        mode: TransportMode::Threaded,
        threads: 2,
        cost_basis: CostBasis::Nominal,
        ..MsnetConfig::default()
    }))
    .unwrap();
    let strip = |r: &cohesim_core::macro_driver::SimulationRun| {
        r.records
            .iter()
            .map(|s| (s.step, s.reaction, s.tm_fraction, s.crack_root))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&one), strip(&four));
}

#[test]
fn forced_taylor_is_stiffer_than_forced_full() {
    let cell = cell();
    let mesh = InterfaceMesh::bezier_interface(
        InterfaceMesh::circular_arc_controls(20.0, 1.0),
        4,
        100.0,
        false,
    )
    .unwrap();
    let run = |m| {
        run_simulation(&SimulationSetup {
            mesh: &mesh,
            template: cell.clone(),
            policy: ModelPolicy::Forced(m),
            program: LoadProgram {
                delta_max: 0.002,
                steps: 2,
                rate_cap: 1.0,
            },
            profile: OpeningProfile::default(),
            msnet: MsnetConfig::default(),
            solver: SolverOptions::default(),
        })
        .unwrap()
    };
    let (fm, tm) = (run(Model::Full), run(Model::Taylor));
    assert!(tm.records[0].reaction > fm.records[0].reaction);
    assert_eq!(tm.final_tm_fraction(), 1.0);
    assert_eq!(fm.final_tm_fraction(), 0.0);
}
