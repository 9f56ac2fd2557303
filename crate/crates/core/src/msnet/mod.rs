//! Multiscale network runtime: the macro domain hands one micro job per
//! cohesive element to a pool of servers, balancing cost by largest-first
//! assignment and moving cell state only between workers of equal rank.
//!
//! A step runs as message exchange among actors:
//!
//! ```text
//! D0 --StepBegin--> S_i                      (once per server)
//! S_a --ShardOut--> S_a.w_r --MigrateShard--> S_b.w_r --ShardIn--> S_b
//! D0 --Dispatch--> S_i --WorkAssign--> S_i.w_r --WorkDone--> S_i --Result--> D0
//! D0 --StepEnd--> S_i --Ack--> D0            (barrier)
//! ```

mod schedule;
mod trace;
mod transport;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use schedule::{
    estimate_cost, lpt_assign, plan_schedule, CostModel, DamageBucket, Migration, Schedule,
};
pub use trace::{
    read_jsonl, validate_trace, write_jsonl, Endpoint, MessageKind, TraceEvent, TraceReport,
};

use crate::ruc_micro::{
    full_model_solve, taylor_traction, MicroError, MicroResult, Model, Ruc, RucTemplate,
    SolverOptions,
};
use crate::seed;
use crate::tensor_mech::DefGradient;
use transport::{run_serial, run_threaded, MacroActor, Master, Wire};

/// One micro solve request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: usize,
    pub element: usize,
    pub model: Model,
    /// Cell-frame macro deformation gradient.
    pub f0: DefGradient,
    pub dt: f64,
    /// Predicted solve time (s).
    pub cost: f64,
}

/// Runs a job against the element's cell state.
pub trait MicroSolver: Sync {
    fn solve(&self, job: &Job, ruc: &mut Ruc) -> Result<MicroResult, MicroError>;
}

/// FM or TM according to the job's model.
#[derive(Clone, Copy, Debug, Default)]
pub struct ModelSolver {
    pub opts: SolverOptions,
}

impl MicroSolver for ModelSolver {
    fn solve(&self, job: &Job, ruc: &mut Ruc) -> Result<MicroResult, MicroError> {
        match job.model {
            Model::Full => full_model_solve(&job.f0, ruc, job.dt, &self.opts),
            Model::Taylor => taylor_traction(&job.f0, ruc, job.dt),
        }
    }
}

/// Server bookkeeping visible to the macro domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Server {
    pub id: usize,
    pub workers: usize,
    pub hosted: Vec<usize>,
    pub busy_time_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportMode {
    /// One OS thread per master and worker.
    Threaded,
    /// Single thread, mailboxes visited in turn.
    RoundRobin,
    /// Single thread, mailbox order drawn from the seeded transport stream.
    Seeded,
}

/// Where job costs come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostBasis {
    /// Moving average of measured solve times.
    Measured,
    /// Cold-start defaults only; schedules then depend on inputs alone.
    Nominal,
}

/// Loses one message: the `occurrence`-th (1-based) of `kind`, optionally
/// only in `step`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropRule {
    pub kind: MessageKind,
    pub occurrence: usize,
    pub step: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MsnetConfig {
    pub servers: usize,
    pub workers_per_server: usize,
    pub mode: TransportMode,
    /// Bound on concurrently running solves in threaded mode.
    pub threads: usize,
    /// Root seed; the transport stream is derived from it.
    pub seed: u64,
    pub rebalance_threshold: Option<f64>,
    pub cost_basis: CostBasis,
    pub deadline_s: f64,
    #[serde(default)]
    pub drop: Option<DropRule>,
}

impl Default for MsnetConfig {
    fn default() -> Self {
        MsnetConfig {
            servers: 1,
            workers_per_server: 1,
            mode: TransportMode::RoundRobin,
            threads: 1,
            seed: 0,
            rebalance_threshold: None,
            cost_basis: CostBasis::Measured,
            deadline_s: 600.0,
            drop: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("step {step}: deadline passed with {missing} results outstanding")]
    Deadline { step: usize, missing: usize },
    #[error("element {element}: {error}")]
    Worker { element: usize, error: MicroError },
    #[error("step {step}: hosting map inconsistent: {detail}")]
    Hosting { step: usize, detail: String },
    #[error("job list invalid: {0}")]
    Jobs(String),
}

/// Outcome of one step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub schedule: Schedule,
    /// `(element, result)` by ascending element id.
    pub results: Vec<(usize, MicroResult)>,
    pub trace: Vec<TraceEvent>,
    pub wall_time_s: f64,
}

/// The runtime: servers hosting cell states plus the dispatcher state.
pub struct Network {
    config: MsnetConfig,
    masters: Vec<Master>,
    host_of: Vec<usize>,
    last_damage: Vec<f64>,
    costs: CostModel,
    step: usize,
    transport_rng: rand_chacha::ChaCha8Rng,
    busy: Vec<f64>,
    poisoned: bool,
}

impl Network {
    /// Hosts element `e` on server `e mod n`.
    pub fn new(config: MsnetConfig, rucs: Vec<Ruc>) -> Result<Self, NetError> {
        if config.servers == 0 || config.workers_per_server == 0 {
            return Err(NetError::Config(
                "servers and workers per server must be at least 1".into(),
            ));
        }
        if !(config.deadline_s > 0.0) {
            return Err(NetError::Config("deadline must be positive".into()));
        }
        let templates: Arc<Vec<Arc<RucTemplate>>> =
            Arc::new(rucs.iter().map(|r| r.template.clone()).collect());
        let n = config.servers;
        let mut hosted: Vec<BTreeMap<usize, Ruc>> = vec![BTreeMap::new(); n];
        let last_damage = rucs.iter().map(Ruc::mean_damage).collect();
        let host_of = (0..rucs.len()).map(|e| e % n).collect();
        for (e, r) in rucs.into_iter().enumerate() {
            hosted[e % n].insert(e, r);
        }
        let masters = hosted
            .into_iter()
            .enumerate()
            .map(|(s, h)| Master::new(s, config.workers_per_server, h, templates.clone()))
            .collect();
        Ok(Network {
            transport_rng: seed::stream(config.seed, seed::TRANSPORT),
            config,
            masters,
            host_of,
            last_damage,
            costs: CostModel::default(),
            step: 0,
            busy: vec![0.0; n],
            poisoned: false,
        })
    }

    pub fn config(&self) -> &MsnetConfig {
        &self.config
    }

    pub fn n_elements(&self) -> usize {
        self.host_of.len()
    }

    pub fn host_of(&self) -> &[usize] {
        &self.host_of
    }

    pub fn servers(&self) -> Vec<Server> {
        self.masters
            .iter()
            .map(|m| Server {
                id: m.id,
                workers: m.m,
                hosted: m.hosted.keys().copied().collect(),
                busy_time_s: self.busy[m.id],
            })
            .collect()
    }

    /// Snapshot of an element's cell state.
    pub fn ruc(&self, element: usize) -> Option<&Ruc> {
        self.masters
            .get(*self.host_of.get(element)?)?
            .hosted
            .get(&element)
    }

    /// Jobs with costs filled from the estimator.
    pub fn costed_jobs(&self, mut jobs: Vec<Job>) -> Vec<Job> {
        for j in &mut jobs {
            j.cost = match self.config.cost_basis {
                CostBasis::Measured => estimate_cost(j, self.last_damage[j.element], &self.costs),
                CostBasis::Nominal => estimate_cost(j, 0.0, &CostModel::default()),
            };
        }
        jobs
    }

    /// Plans, migrates, solves and gathers one step.
    pub fn execute_step(
        &mut self,
        jobs: Vec<Job>,
        solver: &dyn MicroSolver,
    ) -> Result<StepOutcome, NetError> {
        if self.poisoned {
            return Err(NetError::Config(
                "network unusable after a failed step".into(),
            ));
        }
        let mut seen = vec![false; self.n_elements()];
        for j in &jobs {
            if j.element >= seen.len() || std::mem::replace(&mut seen[j.element], true) {
                return Err(NetError::Jobs(format!(
                    "element {} missing or given twice",
                    j.element
                )));
            }
        }
        let start = Instant::now();
        let step = self.step;
        let jobs = self.costed_jobs(jobs);
        let schedule = plan_schedule(
            step,
            &jobs,
            self.config.servers,
            &self.host_of,
            self.config.rebalance_threshold,
        );

        let mut outgoing = vec![Vec::new(); self.config.servers];
        for mg in &schedule.migrations {
            outgoing[mg.from].push((mg.element, mg.to));
        }
        let by_id: BTreeMap<usize, &Job> = jobs.iter().map(|j| (j.id, j)).collect();
        let dispatch = schedule
            .assignment
            .iter()
            .map(|(id, s)| (by_id[id].clone(), *s))
            .collect();
        let (actor, opening) = MacroActor::start(self.config.servers, outgoing, dispatch);
        let wire = Wire::new(step, self.config.drop);
        let m = self.config.workers_per_server;
        let out = match self.config.mode {
            TransportMode::Threaded => run_threaded(
                &mut self.masters,
                m,
                solver,
                actor,
                opening,
                wire,
                self.config.threads,
                Duration::from_secs_f64(self.config.deadline_s),
            ),
            TransportMode::RoundRobin => run_serial::<rand_chacha::ChaCha8Rng>(
                &mut self.masters,
                m,
                solver,
                actor,
                opening,
                wire,
                None,
            ),
            TransportMode::Seeded => {
                let rng = seed::rng(rand::Rng::gen(&mut self.transport_rng));
                run_serial(
                    &mut self.masters,
                    m,
                    solver,
                    actor,
                    opening,
                    wire,
                    Some(rng),
                )
            }
        };
        let out = out.inspect_err(|_| self.poisoned = true)?;

        for mg in &schedule.migrations {
            self.host_of[mg.element] = mg.to;
        }
        for (s, (hosted, busy)) in &out.acks {
            self.busy[*s] += busy;
            for e in hosted {
                if self.host_of[*e] != *s {
                    self.poisoned = true;
                    return Err(NetError::Hosting {
                        step,
                        detail: format!("element {e} acknowledged by S{s}"),
                    });
                }
            }
        }
        let hosted_total: usize = out.acks.values().map(|(h, _)| h.len()).sum();
        if hosted_total != self.n_elements() {
            self.poisoned = true;
            return Err(NetError::Hosting {
                step,
                detail: format!("{hosted_total} cells hosted"),
            });
        }

        let mut results = Vec::with_capacity(out.results.len());
        for (element, r) in out.results {
            match r {
                Ok(res) => results.push((element, res)),
                Err(error) => {
                    self.step += 1;
                    return Err(NetError::Worker { element, error });
                }
            }
        }
        let model_of: BTreeMap<usize, Model> = jobs.iter().map(|j| (j.element, j.model)).collect();
        for (e, res) in &results {
            self.costs
                .observe(model_of[e], self.last_damage[*e], res.wall_time_s);
            self.last_damage[*e] = res.mean_damage;
        }
        self.step += 1;
        Ok(StepOutcome {
            schedule,
            results,
            trace: out.trace,
            wall_time_s: start.elapsed().as_secs_f64(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_mech::Tensor3;

    struct Echo;

    impl MicroSolver for Echo {
        fn solve(&self, job: &Job, ruc: &mut Ruc) -> Result<MicroResult, MicroError> {
            ruc.damage[0].omega_d += 0.01;
            Ok(MicroResult {
                traction: [job.f0.tensor()[(2, 2)], job.element as f64, 0.0],
                mean_damage: ruc.mean_damage(),
                iterations: 0,
                wall_time_s: 0.0,
                converged: true,
            })
        }
    }

    fn rucs(n: usize) -> Vec<Ruc> {
        let cell = Arc::new(
            RucTemplate::homogeneous(
                2,
                100.0,
                100.0,
                crate::tensor_mech::MaterialParams::nylon_particle(),
            )
            .unwrap(),
        );
        (0..n).map(|_| Ruc::pristine(cell.clone())).collect()
    }

    fn jobs(n: usize, costs: &[f64]) -> Vec<Job> {
        (0..n)
            .map(|e| Job {
                id: e,
                element: e,
                model: if costs[e] > 2.0 {
                    Model::Full
                } else {
                    Model::Taylor
                },
                f0: DefGradient::new(Tensor3::from_diag([1.0, 1.0, 1.0 + 0.01 * e as f64]))
                    .unwrap(),
                dt: 0.01,
                cost: costs[e],
            })
            .collect()
    }

    #[test]
    fn empty_step_sends_only_control_messages() {
        let mut net = Network::new(
            MsnetConfig {
                servers: 3,
                ..Default::default()
            },
            rucs(0),
        )
        .unwrap();
        let out = net.execute_step(Vec::new(), &Echo).unwrap();
        assert!(out.results.is_empty());
        assert!(out.trace.iter().all(|e| matches!(
            e.kind,
            MessageKind::StepBegin | MessageKind::StepEnd | MessageKind::Ack
        )));
        assert_eq!(out.trace.len(), 9);
    }

    #[test]
    fn modes_agree_and_respect_discipline() {
        let mut reference = None;
        for mode in [
            TransportMode::RoundRobin,
            TransportMode::Seeded,
            TransportMode::Threaded,
        ] {
            for servers in [1, 3] {
                let cfg = MsnetConfig {
                    servers,
                    workers_per_server: 2,
                    mode,
                    cost_basis: CostBasis::Nominal,
                    ..Default::default()
                };
                let mut net = Network::new(cfg, rucs(5)).unwrap();
                let mut all = Vec::new();
                for _ in 0..3 {
                    let out = net
                        .execute_step(jobs(5, &[1.0, 9.0, 1.0, 9.0, 1.0]), &Echo)
                        .unwrap();
                    let expected: Vec<(usize, usize)> = out
                        .schedule
                        .migrations
                        .iter()
                        .map(|m| (0, m.element))
                        .collect();
                    let report = validate_trace(&out.trace, 2, Some(&expected));
                    assert!(report.ok(), "{:?}", report.violations);
                    all.push(out.results);
                }
                match &reference {
                    None => reference = Some(all),
                    Some(r) => assert_eq!(r, &all),
                }
            }
        }
    }

    #[test]
    fn lost_message_hits_deadline() {
        for mode in [TransportMode::RoundRobin, TransportMode::Threaded] {
            let cfg = MsnetConfig {
                servers: 2,
                mode,
                deadline_s: 0.5,
                drop: Some(DropRule {
                    kind: MessageKind::Result,
                    occurrence: 1,
                    step: None,
                }),
                ..Default::default()
            };
            let mut net = Network::new(cfg, rucs(3)).unwrap();
            let r = net.execute_step(jobs(3, &[1.0, 1.0, 1.0]), &Echo);
            assert!(
                matches!(r, Err(NetError::Deadline { missing: 1, .. })),
                "{r:?}"
            );
            assert!(net.execute_step(jobs(3, &[1.0, 1.0, 1.0]), &Echo).is_err());
        }
    }

    #[test]
    fn hosting_follows_migrations() {
        let cfg = MsnetConfig {
            servers: 3,
            cost_basis: CostBasis::Nominal,
            ..Default::default()
        };
        let mut net = Network::new(cfg, rucs(5)).unwrap();
        assert_eq!(net.host_of(), &[0, 1, 2, 0, 1]);
        let out = net
            .execute_step(jobs(5, &[1.0, 9.0, 1.0, 9.0, 1.0]), &Echo)
            .unwrap();
        for mg in &out.schedule.migrations {
            assert_eq!(net.host_of()[mg.element], mg.to);
        }
        let hosted: usize = net.servers().iter().map(|s| s.hosted.len()).sum();
        assert_eq!(hosted, 5);
        for e in 0..5 {
            assert!(net.ruc(e).is_some());
            assert!((net.ruc(e).unwrap().damage[0].omega_d - 0.01).abs() < 1e-15);
        }
    }

    #[test]
    fn duplicate_jobs_rejected() {
        let mut net = Network::new(MsnetConfig::default(), rucs(2)).unwrap();
        let mut j = jobs(2, &[1.0, 1.0]);
        j[1].element = 0;
        assert!(matches!(net.execute_step(j, &Echo), Err(NetError::Jobs(_))));
    }
}
