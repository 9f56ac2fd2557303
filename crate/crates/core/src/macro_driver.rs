//! Quasi-static loading of a curved cohesive interface under a prescribed
//! opening profile, with per-element micro-model selection.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::interface_geom::InterfaceMesh;
use crate::msnet::{Job, ModelSolver, MsnetConfig, NetError, Network, Schedule, TraceEvent};
use crate::ruc_micro::{macro_f_from_jump, MicroError, Model, Ruc, RucTemplate, SolverOptions};
use crate::sampling_db::{DbError, OfflineDatabase};
use crate::tensor_mech::{norm3, scale3, sub3, Tensor3, Vec3};

const CELL_NORMAL: Vec3 = [0.0, 0.0, 1.0];

#[derive(Debug, thiserror::Error)]
pub enum DriverError {
    #[error("invalid load program: {0}")]
    Program(String),
    #[error(transparent)]
    Database(#[from] DbError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Micro(#[from] MicroError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadProgram {
    /// Applied opening at the profile root (mm).
    pub delta_max: f64,
    pub steps: usize,
    /// Bound on `|d jump / dt| / l_c` (1/s).
    pub rate_cap: f64,
}

impl LoadProgram {
    pub fn validate(&self) -> Result<(), DriverError> {
        if self.steps == 0 {
            return Err(DriverError::Program("at least one step".into()));
        }
        if !(self.delta_max >= 0.0) || !self.delta_max.is_finite() {
            return Err(DriverError::Program(
                "delta_max must be finite and non-negative".into(),
            ));
        }
        if !(self.rate_cap > 0.0) {
            return Err(DriverError::Program("rate cap must be positive".into()));
        }
        Ok(())
    }

    pub fn delta(&self, step: usize) -> f64 {
        self.delta_max * step as f64 / self.steps as f64
    }
}

/// Opening shape along the arc: fully open behind the root `s_root`,
/// decaying as `(1 - (s - s_root) / length)^2` ahead of it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpeningProfile {
    pub initial_root: f64,
    /// Process-zone length in arc fraction.
    pub length: f64,
    /// Tangential share of the opening direction.
    pub shear_mix: f64,
    /// Jump (in units of `l_c`) at which an element releases and the root
    /// advances past it.
    pub release_jump: f64,
}

impl Default for OpeningProfile {
    fn default() -> Self {
        OpeningProfile {
            initial_root: 0.0,
            length: 0.3,
            shear_mix: 0.0,
            release_jump: 0.1,
        }
    }
}

impl OpeningProfile {
    pub fn g(&self, s: f64, root: f64) -> f64 {
        if s <= root {
            return 1.0;
        }
        if self.length <= 0.0 {
            return 0.0;
        }
        let x = (1.0 - (s - root) / self.length).max(0.0);
        x * x
    }
}

/// Unit opening direction of an element: normal plus a tangential mix.
pub fn opening_direction(normal: &Vec3, tangent: &Vec3, shear_mix: f64) -> Vec3 {
    let d = [
        normal[0] + shear_mix * tangent[0],
        normal[1] + shear_mix * tangent[1],
        normal[2] + shear_mix * tangent[2],
    ];
    scale3(&d, 1.0 / norm3(&d))
}

/// Global-frame jumps (µm) for opening `delta` (mm).
pub fn jump_field(
    delta: f64,
    mesh: &InterfaceMesh,
    profile: &OpeningProfile,
    root: f64,
) -> Vec<Vec3> {
    mesh.elements
        .iter()
        .map(|e| {
            let d = opening_direction(&e.normal, &e.tangent, profile.shear_mix);
            scale3(&d, 1000.0 * delta * profile.g(e.arc_position, root))
        })
        .collect()
}

#[derive(Clone, Debug)]
pub enum ModelPolicy {
    Forced(Model),
    /// Starts TM; an element switches to FM for good once the database asks
    /// for it.
    Adaptive(Arc<OfflineDatabase>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementRecord {
    pub element: usize,
    pub model: Model,
    pub jump_norm: f64,
    /// Global-frame traction (MPa).
    pub traction: Vec3,
    pub traction_norm: f64,
    pub mean_damage: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Applied opening (mm).
    pub delta: f64,
    /// Reaction per unit depth (N/mm).
    pub reaction: f64,
    pub tm_fraction: f64,
    pub crack_root: f64,
    pub out_of_range: usize,
    pub dt: f64,
    pub wall_time_s: f64,
    pub elements: Vec<ElementRecord>,
}

#[derive(Clone, Debug, Default)]
pub struct SimulationRun {
    pub records: Vec<StepRecord>,
    pub schedules: Vec<Schedule>,
    pub trace: Vec<TraceEvent>,
    pub wall_time_s: f64,
    /// Set when a step failed; `records` then holds the completed steps.
    pub failure: Option<String>,
}

impl SimulationRun {
    pub fn peak_reaction(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.reaction)
            .fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a })
    }

    pub fn final_tm_fraction(&self) -> f64 {
        self.records.last().map_or(1.0, |r| r.tm_fraction)
    }
}

#[derive(Clone, Debug)]
pub struct SimulationSetup<'a> {
    pub mesh: &'a InterfaceMesh,
    pub template: Arc<RucTemplate>,
    pub policy: ModelPolicy,
    pub program: LoadProgram,
    pub profile: OpeningProfile,
    pub msnet: MsnetConfig,
    pub solver: SolverOptions,
}

/// Runs the loading program through the multiscale network.
pub fn run_simulation(setup: &SimulationSetup<'_>) -> Result<SimulationRun, DriverError> {
    setup.program.validate()?;
    let mesh = setup.mesh;
    let fingerprint = setup.template.fingerprint();
    if let ModelPolicy::Adaptive(db) = &setup.policy {
        db.classify(&[0.0; 3], &fingerprint)?;
    }
    let start = Instant::now();
    let n = mesh.len();
    let rucs = (0..n)
        .map(|_| Ruc::pristine(setup.template.clone()))
        .collect();
    let mut net = Network::new(setup.msnet, rucs)?;
    let solver = ModelSolver { opts: setup.solver };
    let l_c = setup.template.l_c;

    let mut run = SimulationRun::default();
    let mut models: Vec<Model> = vec![
        match setup.policy {
            ModelPolicy::Forced(m) => m,
            ModelPolicy::Adaptive(_) => Model::Taylor,
        };
        n
    ];
    let mut prev: Vec<Vec3> = vec![[0.0; 3]; n];
    let mut root = setup.profile.initial_root;
    for step in 1..=setup.program.steps {
        let step_start = Instant::now();
        let delta = setup.program.delta(step);
        let jumps = jump_field(delta, mesh, &setup.profile, root);
        let max_inc = jumps
            .iter()
            .zip(&prev)
            .map(|(a, b)| norm3(&sub3(a, b)))
            .fold(0.0, f64::max);
        let dt = max_inc / (l_c * setup.program.rate_cap);

        let mut out_of_range = 0;
        let mut jobs = Vec::with_capacity(n);
        for (e, el) in mesh.elements.iter().enumerate() {
            let local = el.to_local(&jumps[e]);
            if let ModelPolicy::Adaptive(db) = &setup.policy {
                let c = db.classify(&local, &fingerprint)?;
                out_of_range += c.out_of_range as usize;
                if c.model == Model::Full {
                    models[e] = Model::Full;
                }
            }
            let f0 = macro_f_from_jump(&local, &CELL_NORMAL, l_c)?;
            jobs.push(Job {
                id: e,
                element: e,
                model: models[e],
                f0,
                dt,
                cost: 0.0,
            });
        }

        let outcome = match net.execute_step(jobs, &solver) {
            Ok(o) => o,
            Err(e) => {
                log::error!("step {step} failed: {e}");
                run.failure = Some(format!("step {step}: {e}"));
                break;
            }
        };
        let mut elements = Vec::with_capacity(n);
        let mut reaction = 0.0;
        for (e, res) in &outcome.results {
            let el = &mesh.elements[*e];
            let t = el.to_global(&res.traction);
            let d = opening_direction(&el.normal, &el.tangent, setup.profile.shear_mix);
            reaction += Tensor3::dot(&t, &d) * el.area;
            elements.push(ElementRecord {
                element: *e,
                model: models[*e],
                jump_norm: norm3(&jumps[*e]),
                traction: t,
                traction_norm: norm3(&t),
                mean_damage: res.mean_damage,
                iterations: res.iterations,
                wall_time_s: res.wall_time_s,
            });
        }
        let tm = models.iter().filter(|m| **m == Model::Taylor).count();
        for (el, j) in mesh.elements.iter().zip(&jumps) {
            if norm3(j) >= setup.profile.release_jump * l_c {
                root = root.max(el.arc_position);
            }
        }
        run.records.push(StepRecord {
            step,
            delta,
            reaction,
            tm_fraction: if n == 0 { 1.0 } else { tm as f64 / n as f64 },
            crack_root: root,
            out_of_range,
            dt,
            wall_time_s: step_start.elapsed().as_secs_f64(),
            elements,
        });
        run.schedules.push(outcome.schedule);
        run.trace.extend(outcome.trace);
        prev = jumps;
    }
    run.wall_time_s = start.elapsed().as_secs_f64();
    Ok(run)
}

/// Per-step, per-element `|t_FM - t| / max_e |t_FM| * 100`; `None` where the
/// FM field vanishes.
pub fn traction_field_error(run: &SimulationRun, fm: &SimulationRun) -> Vec<Vec<Option<f64>>> {
    run.records
        .iter()
        .zip(&fm.records)
        .map(|(a, b)| {
            let inf = b
                .elements
                .iter()
                .map(|e| e.traction_norm)
                .fold(0.0, f64::max);
            a.elements
                .iter()
                .zip(&b.elements)
                .map(|(x, y)| {
                    (inf > 0.0).then(|| 100.0 * norm3(&sub3(&y.traction, &x.traction)) / inf)
                })
                .collect()
        })
        .collect()
}

/// `|peak(run) - peak(fm)| / |peak(fm)|`.
pub fn peak_deviation(run: &SimulationRun, fm: &SimulationRun) -> f64 {
    let p = fm.peak_reaction();
    if p == 0.0 {
        return (run.peak_reaction()).abs();
    }
    (run.peak_reaction() - p).abs() / p.abs()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub gamma: f64,
    pub tm_fraction: f64,
    pub ratio: f64,
}

/// Rows `(γ, N_T / N_COH, T_FM / T_AM)` relative to the forced-FM run.
pub fn speedup_report(fm: &SimulationRun, runs: &[(f64, &SimulationRun)]) -> Vec<SpeedupRow> {
    runs.iter()
        .map(|(gamma, r)| SpeedupRow {
            gamma: *gamma,
            tm_fraction: r.final_tm_fraction(),
            ratio: fm.wall_time_s / r.wall_time_s.max(f64::MIN_POSITIVE),
        })
        .collect()
}
