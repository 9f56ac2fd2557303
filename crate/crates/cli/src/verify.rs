//! Quick oracle suites run by `verify`.

use std::sync::Arc;

use cohesim_core::interface_geom::rotation_from_normal;
use cohesim_core::msnet::lpt_assign;
use cohesim_core::ruc_micro::{full_model_solve, taylor_traction, Ruc, RucTemplate, SolverOptions};
use cohesim_core::sampling_db::OfflineDatabase;
use cohesim_core::seed;
use cohesim_core::svr::{train, SvrProblem, TrainOptions};
use cohesim_core::tensor_mech::{
    norm3, pk2_stress, strain_energy, DamageState, DefGradient, MaterialParams, Tensor3,
};
use rand::Rng;
use serde::Deserialize;

use crate::config::RunConfig;
use crate::output::write_rows;
use crate::CliError;

const SVR_REFERENCE: &str = include_str!("../../core/tests/data/svr_reference.json");

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub max_residual: f64,
    pub tolerance: f64,
    pub detail: String,
}

fn suite(name: &'static str, max_residual: f64, tolerance: f64, detail: String) -> SuiteResult {
    SuiteResult {
        name,
        passed: max_residual <= tolerance,
        max_residual,
        tolerance,
        detail,
    }
}

fn random_f(rng: &mut impl Rng, amp: f64) -> Tensor3 {
    let mut f = Tensor3::IDENTITY;
    for r in f.0.iter_mut() {
        for v in r.iter_mut() {
            *v += rng.gen_range(-amp..amp);
        }
    }
    f
}

/// Relative mismatch between the stress and a central difference of the energy.
pub fn stress_gradient_residual(c: &Tensor3, d: &DamageState, p: &MaterialParams) -> f64 {
    let s = pk2_stress(c, d, p).expect("spd input");
    let h = 1e-6;
    let mut worst = 0.0f64;
    let scale = s.max_abs().max(p.mu * 1e-3);
    for i in 0..3 {
        for j in 0..3 {
            let mut cp = *c;
            let mut cm = *c;
            cp.0[i][j] += 0.5 * h;
            cp.0[j][i] += 0.5 * h;
            cm.0[i][j] -= 0.5 * h;
            cm.0[j][i] -= 0.5 * h;
            let fd = (strain_energy(&cp, d, p).expect("spd")
                - strain_energy(&cm, d, p).expect("spd"))
                / h;
            worst = worst.max((fd - s.0[i][j]).abs() / scale);
        }
    }
    worst
}

fn gradient_suite(root: u64, materials: &[MaterialParams]) -> SuiteResult {
    let mut rng = seed::stream(root, "verify-gradient");
    let mut worst = 0.0f64;
    for i in 0..100 {
        let f = random_f(&mut rng, 0.3);
        let c = f.right_cauchy_green();
        if c.check_spd().is_err() || f.det() <= 0.05 {
            continue;
        }
        let d = DamageState {
            omega_d: rng.gen_range(0.0..0.9),
            omega_v: rng.gen_range(0.0..0.9),
            ..DamageState::default()
        };
        worst = worst.max(stress_gradient_residual(
            &c,
            &d,
            &materials[i % materials.len()],
        ));
    }
    suite("stress_gradient", worst, 1e-5, "100 random C".into())
}

/// Largest relative traction difference between the two models on a
/// single-phase cell.
pub fn homogeneous_model_gap(
    material: MaterialParams,
    grid: usize,
    samples: usize,
    root: u64,
) -> f64 {
    let cell =
        Arc::new(RucTemplate::homogeneous(grid, 100.0, 100.0, material).expect("valid cell"));
    let mut rng = seed::stream(root, "verify-homogeneous");
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < samples {
        let Ok(f0) = DefGradient::new(random_f(&mut rng, 0.08)) else {
            continue;
        };
        let mut a = Ruc::pristine(cell.clone());
        let mut b = Ruc::pristine(cell.clone());
        let fm = match full_model_solve(&f0, &mut a, 0.01, &SolverOptions::default()) {
            Ok(r) => r,
            Err(_) => return f64::INFINITY,
        };
        let tm = taylor_traction(&f0, &mut b, 0.01).expect("admissible");
        let diff = [
            fm.traction[0] - tm.traction[0],
            fm.traction[1] - tm.traction[1],
            fm.traction[2] - tm.traction[2],
        ];
        worst = worst.max(norm3(&diff) / norm3(&tm.traction).max(1e-300));
        done += 1;
    }
    worst
}

#[derive(Deserialize)]
struct Reference {
    problems: Vec<RefProblem>,
}

#[derive(Deserialize)]
pub struct RefProblem {
    pub x: Vec<[f64; 2]>,
    pub y: Vec<f64>,
    pub c: f64,
    pub epsilon: f64,
    pub sigma: f64,
    pub beta: Vec<f64>,
    pub dual_objective: f64,
    pub bias: f64,
}

pub fn svr_reference() -> Vec<RefProblem> {
    serde_json::from_str::<Reference>(SVR_REFERENCE)
        .expect("embedded fixture parses")
        .problems
}

fn smo_suite() -> SuiteResult {
    let mut worst = 0.0f64;
    let refs = svr_reference();
    for rp in &refs {
        let p = SvrProblem {
            x: rp.x.clone(),
            y: rp.y.clone(),
            c: rp.c,
            epsilon: rp.epsilon,
            sigma: rp.sigma,
        };
        worst = match train(&p, &TrainOptions::default()) {
            Ok(f) => worst.max((f.diagnostics.dual_objective - rp.dual_objective).abs()),
            Err(_) => f64::INFINITY,
        };
    }
    suite(
        "smo_vs_qp",
        worst,
        1e-6,
        format!("{} reference problems", refs.len()),
    )
}

/// Exhaustive minimum makespan.
pub fn optimal_makespan(costs: &[f64], m: usize) -> f64 {
    fn go(i: usize, costs: &[f64], loads: &mut [f64], best: &mut f64) {
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

/// Worst `LPT / (bound · OPT)` over random instances; at most one passes.
pub fn lpt_bound_ratio(root: u64, instances: usize) -> f64 {
    let mut rng = seed::stream(root, "verify-lpt");
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = rng.gen_range(1..=8);
        let m = rng.gen_range(1..=3);
        let costs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..10.0)).collect();
        let (_, loads) = lpt_assign(&costs, m);
        let lpt = loads.iter().copied().fold(0.0, f64::max);
        let bound = 4.0 / 3.0 - 1.0 / (3.0 * m as f64);
        worst = worst.max(lpt / (bound * optimal_makespan(&costs, m)));
    }
    worst
}

fn unit_vector(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let l = norm3(&v);
        if l > 1e-2 && l <= 1.0 {
            return [v[0] / l, v[1] / l, v[2] / l];
        }
    }
}

/// Worst orthogonality, determinant and normal-row errors over random frames.
pub fn rotation_residuals(root: u64, n: usize) -> (f64, f64, f64) {
    let mut rng = seed::stream(root, "verify-rotation");
    let (mut orth, mut det, mut row) = (0.0f64, 0.0f64, 0.0f64);
    let mut done = 0;
    while done < n {
        let normal = unit_vector(&mut rng);
        let x1 = unit_vector(&mut rng);
        let Ok(r) = rotation_from_normal(&normal, &x1) else {
            continue;
        };
        let rtr = r.transpose() * r;
        orth = orth.max((rtr - Tensor3::IDENTITY).max_abs());
        det = det.max((r.det() - 1.0).abs());
        row = row.max(
            (0..3)
                .map(|k| (r.0[2][k] - normal[k]).abs())
                .fold(0.0, f64::max),
        );
        done += 1;
    }
    (orth, det, row)
}

fn database_suite(cfg: &RunConfig) -> Result<SuiteResult, CliError> {
    let fp = cfg.template()?.fingerprint();
    let mut checked = 0;
    let mut problems = Vec::new();
    for &g in &cfg.database.gammas {
        let path = cfg.database_file(g);
        if !path.exists() {
            continue;
        }
        checked += 1;
        match OfflineDatabase::read(&path) {
            Ok(db) if db.metadata.fingerprint == fp => {}
            Ok(_) => problems.push(format!("{}: fingerprint mismatch", path.display())),
            Err(e) => problems.push(format!("{}: {e}", path.display())),
        }
    }
    let detail = if problems.is_empty() {
        format!("{checked} database files intact")
    } else {
        problems.join("; ")
    };
    Ok(suite(
        "database_fingerprint",
        problems.len() as f64,
        0.0,
        detail,
    ))
}

/// Runs every suite and writes `verify.csv`.
pub fn verify(cfg: &RunConfig) -> Result<Vec<SuiteResult>, CliError> {
    let phases = cfg.template()?.phases.clone();
    let mut out = vec![gradient_suite(cfg.seed, &phases)];
    let gap = homogeneous_model_gap(phases[0], 4, 5, cfg.seed);
    out.push(suite(
        "fm_equals_tm_homogeneous",
        gap,
        1e-8,
        "4^3 cell, 5 F0".into(),
    ));
    out.push(smo_suite());
    out.push(suite(
        "lpt_bound",
        lpt_bound_ratio(cfg.seed, 200),
        1.0 + 1e-12,
        "200 instances, ratio to bound".into(),
    ));
    let (o, d, r) = rotation_residuals(cfg.seed, 1000);
    out.push(suite(
        "rotation",
        o.max(d).max(r),
        1e-12,
        format!("orthogonality {o:.1e}, det {d:.1e}, normal row {r:.1e}"),
    ));
    out.push(database_suite(cfg)?);
    let dir = cfg.output();
    std::fs::create_dir_all(&dir).map_err(|e| crate::output::io_err(&dir, e))?;
    write_rows(
        &dir.join("verify.csv"),
        &["suite", "passed", "max_residual", "tolerance", "detail"],
        out.iter().map(|s| {
            vec![
                s.name.to_string(),
                s.passed.to_string(),
                s.max_residual.to_string(),
                s.tolerance.to_string(),
                s.detail.clone(),
            ]
        }),
    )?;
    Ok(out)
}
