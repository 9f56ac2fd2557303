//! Actors of one step and the two delivery drivers.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;

use super::trace::{Endpoint, MessageKind, TraceEvent};
use super::{DropRule, Job, MicroSolver, NetError};
use crate::ruc_micro::{MicroError, MicroResult, Ruc, RucTemplate};
use crate::tensor_mech::DamageState;

const JOB_BYTES: usize = 96;
const RESULT_BYTES: usize = 56;
const CONTROL_BYTES: usize = 8;
const VOXEL_BYTES: usize = 32;

pub(crate) enum Message {
    StepBegin {
        outgoing: Vec<(usize, usize)>,
    },
    ShardOut {
        element: usize,
        to: usize,
        shard: Vec<DamageState>,
    },
    MigrateShard {
        element: usize,
        rank: usize,
        shard: Vec<DamageState>,
    },
    ShardIn {
        element: usize,
        rank: usize,
        shard: Vec<DamageState>,
    },
    Dispatch {
        job: Job,
    },
    WorkAssign {
        job: Job,
        ruc: Box<Ruc>,
    },
    WorkDone {
        job: Job,
        rank: usize,
        ruc: Box<Ruc>,
        result: Result<MicroResult, MicroError>,
        busy_s: f64,
    },
    Result {
        element: usize,
        result: Result<MicroResult, MicroError>,
    },
    StepEnd,
    Ack {
        hosted: Vec<usize>,
        busy_s: f64,
    },
    Shutdown,
}

impl Message {
    fn kind(&self) -> Option<MessageKind> {
        Some(match self {
            Message::StepBegin { .. } => MessageKind::StepBegin,
            Message::ShardOut { .. } => MessageKind::ShardOut,
            Message::MigrateShard { .. } => MessageKind::MigrateShard,
            Message::ShardIn { .. } => MessageKind::ShardIn,
            Message::Dispatch { .. } => MessageKind::Dispatch,
            Message::WorkAssign { .. } => MessageKind::WorkAssign,
            Message::WorkDone { .. } => MessageKind::WorkDone,
            Message::Result { .. } => MessageKind::Result,
            Message::StepEnd => MessageKind::StepEnd,
            Message::Ack { .. } => MessageKind::Ack,
            Message::Shutdown => return None,
        })
    }

    fn element(&self) -> Option<usize> {
        match self {
            Message::ShardOut { element, .. }
            | Message::MigrateShard { element, .. }
            | Message::ShardIn { element, .. }
            | Message::Result { element, .. } => Some(*element),
            Message::Dispatch { job }
            | Message::WorkAssign { job, .. }
            | Message::WorkDone { job, .. } => Some(job.element),
            _ => None,
        }
    }

    fn bytes(&self) -> usize {
        match self {
            Message::ShardOut { shard, .. }
            | Message::MigrateShard { shard, .. }
            | Message::ShardIn { shard, .. } => shard.len() * VOXEL_BYTES,
            Message::Dispatch { .. } | Message::WorkAssign { .. } => JOB_BYTES,
            Message::WorkDone { .. } | Message::Result { .. } => RESULT_BYTES,
            Message::StepBegin { outgoing } => CONTROL_BYTES + 16 * outgoing.len(),
            Message::Ack { hosted, .. } => CONTROL_BYTES + 8 * hosted.len(),
            Message::StepEnd | Message::Shutdown => CONTROL_BYTES,
        }
    }
}

pub(crate) struct Envelope {
    pub src: Endpoint,
    pub dst: Endpoint,
    pub msg: Message,
}

fn env(src: Endpoint, dst: Endpoint, msg: Message) -> Envelope {
    Envelope { src, dst, msg }
}

/// Contiguous split of `n` voxels over `m` ranks.
pub(crate) fn shard_range(n: usize, m: usize, rank: usize) -> std::ops::Range<usize> {
    let lo = n * (rank - 1) / m;
    let hi = n * rank / m;
    lo..hi
}

/// Server coordinator: owns the hosted cells between steps.
pub(crate) struct Master {
    pub id: usize,
    pub m: usize,
    pub hosted: BTreeMap<usize, Ruc>,
    pub templates: Arc<Vec<Arc<RucTemplate>>>,
    incoming: BTreeMap<usize, Vec<Option<Vec<DamageState>>>>,
    pending: VecDeque<Job>,
    idle: BTreeSet<usize>,
    busy_s: f64,
}

impl Master {
    pub fn new(
        id: usize,
        m: usize,
        hosted: BTreeMap<usize, Ruc>,
        templates: Arc<Vec<Arc<RucTemplate>>>,
    ) -> Self {
        Master {
            id,
            m,
            hosted,
            templates,
            incoming: BTreeMap::new(),
            pending: VecDeque::new(),
            idle: (1..=m).collect(),
            busy_s: 0.0,
        }
    }

    fn me(&self) -> Endpoint {
        Endpoint::Master(self.id)
    }

    fn try_assign(&mut self, out: &mut Vec<Envelope>) {
        while let Some(&rank) = self.idle.iter().next() {
            let Some(pos) = self
                .pending
                .iter()
                .position(|j| self.hosted.contains_key(&j.element))
            else {
                break;
            };
            let job = self.pending.remove(pos).expect("position is valid");
            let ruc = self.hosted.remove(&job.element).expect("checked above");
            self.idle.remove(&rank);
            out.push(env(
                self.me(),
                Endpoint::Worker(self.id, rank),
                Message::WorkAssign {
                    job,
                    ruc: Box::new(ruc),
                },
            ));
        }
    }

    pub fn handle(&mut self, msg: Message, out: &mut Vec<Envelope>) {
        match msg {
            Message::StepBegin { outgoing } => {
                for (element, to) in outgoing {
                    let Some(ruc) = self.hosted.remove(&element) else {
                        continue;
                    };
                    let n = ruc.damage.len();
                    for rank in 1..=self.m {
                        let shard = ruc.damage[shard_range(n, self.m, rank)].to_vec();
                        out.push(env(
                            self.me(),
                            Endpoint::Worker(self.id, rank),
                            Message::ShardOut { element, to, shard },
                        ));
                    }
                }
            }
            Message::ShardIn {
                element,
                rank,
                shard,
            } => {
                let m = self.m;
                let slots = self
                    .incoming
                    .entry(element)
                    .or_insert_with(|| vec![None; m]);
                slots[rank - 1] = Some(shard);
                if slots.iter().all(Option::is_some) {
                    let slots = self.incoming.remove(&element).expect("present");
                    let damage: Vec<DamageState> = slots.into_iter().flatten().flatten().collect();
                    let template = self.templates[element].clone();
                    self.hosted.insert(element, Ruc { template, damage });
                    self.try_assign(out);
                }
            }
            Message::Dispatch { job } => {
                self.pending.push_back(job);
                self.try_assign(out);
            }
            Message::WorkDone {
                job,
                rank,
                ruc,
                result,
                busy_s,
            } => {
                self.busy_s += busy_s;
                self.hosted.insert(job.element, *ruc);
                self.idle.insert(rank);
                out.push(env(
                    self.me(),
                    Endpoint::Macro,
                    Message::Result {
                        element: job.element,
                        result,
                    },
                ));
                self.try_assign(out);
            }
            Message::StepEnd => {
                let hosted = self.hosted.keys().copied().collect();
                out.push(env(
                    self.me(),
                    Endpoint::Macro,
                    Message::Ack {
                        hosted,
                        busy_s: self.busy_s,
                    },
                ));
                self.busy_s = 0.0;
            }
            _ => {}
        }
    }
}

pub(crate) struct Worker {
    pub server: usize,
    pub rank: usize,
}

impl Worker {
    fn me(&self) -> Endpoint {
        Endpoint::Worker(self.server, self.rank)
    }

    pub fn handle(
        &self,
        msg: Message,
        solver: &dyn MicroSolver,
        gate: &Gate,
        out: &mut Vec<Envelope>,
    ) {
        match msg {
            Message::ShardOut { element, to, shard } => {
                out.push(env(
                    self.me(),
                    Endpoint::Worker(to, self.rank),
                    Message::MigrateShard {
                        element,
                        rank: self.rank,
                        shard,
                    },
                ));
            }
            Message::MigrateShard {
                element,
                rank,
                shard,
            } => {
                out.push(env(
                    self.me(),
                    Endpoint::Master(self.server),
                    Message::ShardIn {
                        element,
                        rank,
                        shard,
                    },
                ));
            }
            Message::WorkAssign { job, mut ruc } => {
                let _permit = gate.acquire();
                let start = Instant::now();
                let result = solver.solve(&job, &mut ruc);
                let busy_s = start.elapsed().as_secs_f64();
                let done = Message::WorkDone {
                    job,
                    rank: self.rank,
                    ruc,
                    result,
                    busy_s,
                };
                out.push(env(self.me(), Endpoint::Master(self.server), done));
            }
            _ => {}
        }
    }
}

/// Counting semaphore bounding concurrent solves.
pub(crate) struct Gate {
    limit: usize,
    used: Mutex<usize>,
    cv: Condvar,
}

pub(crate) struct Permit<'a>(&'a Gate);

impl Gate {
    pub fn new(limit: usize) -> Self {
        Gate {
            limit: limit.max(1),
            used: Mutex::new(0),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().expect("gate lock");
        while *used >= self.limit {
            used = self.cv.wait(used).expect("gate lock");
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().expect("gate lock") -= 1;
        self.0.cv.notify_one();
    }
}

/// Macro-domain side of a step.
pub(crate) struct MacroActor {
    n_servers: usize,
    expected: usize,
    pub results: BTreeMap<usize, Result<MicroResult, MicroError>>,
    pub acks: BTreeMap<usize, (Vec<usize>, f64)>,
    ended: bool,
}

impl MacroActor {
    /// Opening messages of the step.
    pub fn start(
        n_servers: usize,
        outgoing: Vec<Vec<(usize, usize)>>,
        dispatch: Vec<(Job, usize)>,
    ) -> (Self, Vec<Envelope>) {
        let mut out = Vec::new();
        for (s, list) in outgoing.into_iter().enumerate() {
            out.push(env(
                Endpoint::Macro,
                Endpoint::Master(s),
                Message::StepBegin { outgoing: list },
            ));
        }
        let expected = dispatch.len();
        for (job, s) in dispatch {
            out.push(env(
                Endpoint::Macro,
                Endpoint::Master(s),
                Message::Dispatch { job },
            ));
        }
        let mut actor = MacroActor {
            n_servers,
            expected,
            results: BTreeMap::new(),
            acks: BTreeMap::new(),
            ended: false,
        };
        if expected == 0 {
            actor.end(&mut out);
        }
        (actor, out)
    }

    fn end(&mut self, out: &mut Vec<Envelope>) {
        self.ended = true;
        for s in 0..self.n_servers {
            out.push(env(Endpoint::Macro, Endpoint::Master(s), Message::StepEnd));
        }
    }

    pub fn handle(&mut self, src: Endpoint, msg: Message, out: &mut Vec<Envelope>) {
        match (src, msg) {
            (_, Message::Result { element, result }) => {
                self.results.insert(element, result);
                if self.results.len() == self.expected && !self.ended {
                    self.end(out);
                }
            }
            (Endpoint::Master(s), Message::Ack { hosted, busy_s }) => {
                self.acks.insert(s, (hosted, busy_s));
            }
            _ => {}
        }
    }

    pub fn done(&self) -> bool {
        self.ended && self.acks.len() == self.n_servers
    }
}

/// Delivers or drops a message, logging it in the trace.
pub(crate) struct Wire {
    pub step: usize,
    pub drop: Option<DropRule>,
    counts: HashMap<MessageKind, usize>,
    pub trace: Vec<TraceEvent>,
}

impl Wire {
    pub fn new(step: usize, drop: Option<DropRule>) -> Self {
        Wire {
            step,
            drop,
            counts: HashMap::new(),
            trace: Vec::new(),
        }
    }

    /// Returns `false` when the message is lost.
    pub fn pass(&mut self, e: &Envelope) -> bool {
        let Some(kind) = e.msg.kind() else {
            return true;
        };
        let n = self.counts.entry(kind).or_insert(0);
        *n += 1;
        if let Some(rule) = self.drop {
            if rule.kind == kind
                && rule.occurrence == *n
                && rule.step.is_none_or(|s| s == self.step)
            {
                log::debug!("dropping {kind:?} #{n} {} -> {}", e.src, e.dst);
                return false;
            }
        }
        self.trace.push(TraceEvent {
            step: self.step,
            src: e.src,
            dst: e.dst,
            kind,
            element: e.msg.element(),
            bytes: e.msg.bytes(),
        });
        true
    }
}

pub(crate) struct StepOutput {
    pub results: BTreeMap<usize, Result<MicroResult, MicroError>>,
    pub acks: BTreeMap<usize, (Vec<usize>, f64)>,
    pub trace: Vec<TraceEvent>,
}

/// Single-threaded delivery. Mailboxes are visited round-robin, or in a
/// seeded random order when `rng` is given.
pub(crate) fn run_serial<R: Rng>(
    masters: &mut [Master],
    m: usize,
    solver: &dyn MicroSolver,
    mut actor: MacroActor,
    opening: Vec<Envelope>,
    mut wire: Wire,
    mut rng: Option<R>,
) -> Result<StepOutput, NetError> {
    let gate = Gate::new(1);
    let n = masters.len();
    let workers: Vec<Worker> = (0..n)
        .flat_map(|s| (1..=m).map(move |r| Worker { server: s, rank: r }))
        .collect();
    let mut boxes: BTreeMap<Endpoint, VecDeque<Envelope>> = BTreeMap::new();
    let post = |boxes: &mut BTreeMap<Endpoint, VecDeque<Envelope>>,
                wire: &mut Wire,
                list: Vec<Envelope>| {
        for e in list {
            if wire.pass(&e) {
                boxes.entry(e.dst).or_default().push_back(e);
            }
        }
    };
    post(&mut boxes, &mut wire, opening);
    let mut cursor = 0usize;
    while !actor.done() {
        let ready: Vec<Endpoint> = boxes
            .iter()
            .filter(|(_, q)| !q.is_empty())
            .map(|(k, _)| *k)
            .collect();
        if ready.is_empty() {
            return Err(NetError::Deadline {
                step: wire.step,
                missing: actor.expected - actor.results.len(),
            });
        }
        let pick = match rng.as_mut() {
            Some(r) => ready[r.gen_range(0..ready.len())],
            None => {
                cursor = (cursor + 1) % ready.len().max(1);
                ready[cursor % ready.len()]
            }
        };
        let e = boxes
            .get_mut(&pick)
            .and_then(VecDeque::pop_front)
            .expect("mailbox is non-empty");
        let mut out = Vec::new();
        match e.dst {
            Endpoint::Macro => actor.handle(e.src, e.msg, &mut out),
            Endpoint::Master(s) => masters[s].handle(e.msg, &mut out),
            Endpoint::Worker(s, r) => workers[s * m + r - 1].handle(e.msg, solver, &gate, &mut out),
        }
        post(&mut boxes, &mut wire, out);
    }
    Ok(StepOutput {
        results: actor.results,
        acks: actor.acks,
        trace: wire.trace,
    })
}

/// One thread per master and worker; the caller's thread is the macro
/// domain.
pub(crate) fn run_threaded(
    masters: &mut [Master],
    m: usize,
    solver: &dyn MicroSolver,
    mut actor: MacroActor,
    opening: Vec<Envelope>,
    wire: Wire,
    threads: usize,
    deadline: Duration,
) -> Result<StepOutput, NetError> {
    let n = masters.len();
    let gate = Gate::new(threads);
    let step = wire.step;
    let wire = Mutex::new(wire);
    let mut senders: HashMap<Endpoint, Sender<Envelope>> = HashMap::new();
    let mut receivers: HashMap<Endpoint, Receiver<Envelope>> = HashMap::new();
    let mut endpoints = vec![Endpoint::Macro];
    for s in 0..n {
        endpoints.push(Endpoint::Master(s));
        endpoints.extend((1..=m).map(|r| Endpoint::Worker(s, r)));
    }
    for ep in &endpoints {
        let (tx, rx) = mpsc::channel();
        senders.insert(*ep, tx);
        receivers.insert(*ep, rx);
    }
    let senders = &senders;
    let send_all = |list: Vec<Envelope>| {
        for e in list {
            if wire.lock().expect("wire lock").pass(&e) {
                // a closed mailbox means the step is already being torn down
                let _ = senders[&e.dst].send(e);
            }
        }
    };

    let outcome = std::thread::scope(|scope| {
        for master in masters.iter_mut() {
            let rx = receivers
                .remove(&Endpoint::Master(master.id))
                .expect("mailbox");
            let send_all = &send_all;
            scope.spawn(move || {
                while let Ok(e) = rx.recv() {
                    if matches!(e.msg, Message::Shutdown) {
                        break;
                    }
                    let mut out = Vec::new();
                    master.handle(e.msg, &mut out);
                    send_all(out);
                }
            });
        }
        for s in 0..n {
            for r in 1..=m {
                let rx = receivers.remove(&Endpoint::Worker(s, r)).expect("mailbox");
                let (send_all, gate) = (&send_all, &gate);
                scope.spawn(move || {
                    let w = Worker { server: s, rank: r };
                    while let Ok(e) = rx.recv() {
                        if matches!(e.msg, Message::Shutdown) {
                            break;
                        }
                        let mut out = Vec::new();
                        w.handle(e.msg, solver, gate, &mut out);
                        send_all(out);
                    }
                });
            }
        }
        let rx = receivers.remove(&Endpoint::Macro).expect("mailbox");
        send_all(opening);
        let limit = Instant::now() + deadline;
        let mut failure = None;
        while !actor.done() {
            let left = limit.saturating_duration_since(Instant::now());
            match rx.recv_timeout(left) {
                Ok(e) => {
                    let mut out = Vec::new();
                    actor.handle(e.src, e.msg, &mut out);
                    send_all(out);
                }
                Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => {
                    failure = Some(NetError::Deadline {
                        step,
                        missing: actor.expected - actor.results.len(),
                    });
                    break;
                }
            }
        }
        for ep in endpoints.iter().filter(|e| **e != Endpoint::Macro) {
            let _ = senders[ep].send(env(Endpoint::Macro, *ep, Message::Shutdown));
        }
        failure
    });
    if let Some(e) = outcome {
        return Err(e);
    }
    let wire = wire.into_inner().expect("wire lock");
    Ok(StepOutput {
        results: actor.results,
        acks: actor.acks,
        trace: wire.trace,
    })
}
