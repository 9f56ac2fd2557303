use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Job;
use crate::ruc_micro::Model;

/// Moves a hosted cell between servers before the step's jobs run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Migration {
    pub element: usize,
    pub from: usize,
    pub to: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub step: usize,
    /// `(job id, server)` in assignment order.
    pub assignment: Vec<(usize, usize)>,
    pub migrations: Vec<Migration>,
    pub loads: Vec<f64>,
    pub predicted_makespan: f64,
}

impl Schedule {
    pub fn server_of(&self, job_id: usize) -> Option<usize> {
        self.assignment
            .iter()
            .find(|(j, _)| *j == job_id)
            .map(|(_, s)| *s)
    }
}

/// Largest-first assignment: jobs in descending cost (ties by id) each go to
/// the least-loaded server (ties to the lowest index). Returns the server per
/// input job and the final loads.
pub fn lpt_assign(costs: &[f64], n_servers: usize) -> (Vec<usize>, Vec<f64>) {
    assert!(n_servers >= 1, "at least one server");
    let mut order: Vec<usize> = (0..costs.len()).collect();
    order.sort_by(|&a, &b| costs[b].total_cmp(&costs[a]).then(a.cmp(&b)));
    let mut loads = vec![0.0f64; n_servers];
    let mut out = vec![0; costs.len()];
    for j in order {
        let s = (0..n_servers)
            .min_by(|&a, &b| loads[a].total_cmp(&loads[b]).then(a.cmp(&b)))
            .unwrap_or(0);
        loads[s] += costs[j];
        out[j] = s;
    }
    (out, loads)
}

fn makespan(loads: &[f64]) -> f64 {
    loads.iter().copied().fold(0.0, f64::max)
}

/// Plans one step. `host_of[e]` is the server currently holding element
/// `e`'s cell.
///
/// With a `rebalance_threshold`, the current placement is kept whenever its
/// makespan exceeds the largest-first one by at most that relative margin.
pub fn plan_schedule(
    step: usize,
    jobs: &[Job],
    n_servers: usize,
    host_of: &[usize],
    rebalance_threshold: Option<f64>,
) -> Schedule {
    let costs: Vec<f64> = jobs.iter().map(|j| j.cost).collect();
    let (mut servers, mut loads) = lpt_assign(&costs, n_servers);
    if let Some(th) = rebalance_threshold {
        let mut stay = vec![0.0; n_servers];
        for j in jobs {
            stay[host_of[j.element]] += j.cost;
        }
        if makespan(&stay) <= (1.0 + th) * makespan(&loads) {
            servers = jobs.iter().map(|j| host_of[j.element]).collect();
            loads = stay;
        }
    }
    let mut order: Vec<usize> = (0..jobs.len()).collect();
    order.sort_by(|&a, &b| costs[b].total_cmp(&costs[a]).then(a.cmp(&b)));
    let assignment = order.iter().map(|&i| (jobs[i].id, servers[i])).collect();
    let mut migrations: Vec<Migration> = jobs
        .iter()
        .zip(&servers)
        .filter(|(j, &s)| host_of[j.element] != s)
        .map(|(j, &s)| Migration {
            element: j.element,
            from: host_of[j.element],
            to: s,
        })
        .collect();
    migrations.sort_by_key(|m| m.element);
    Schedule {
        step,
        assignment,
        migrations,
        predicted_makespan: makespan(&loads),
        loads,
    }
}

/// Damage regime used to key cost history.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DamageBucket {
    Low,
    Mid,
    High,
}

impl DamageBucket {
    pub fn of(mean_damage: f64) -> Self {
        if mean_damage < 0.01 {
            DamageBucket::Low
        } else if mean_damage <= 0.5 {
            DamageBucket::Mid
        } else {
            DamageBucket::High
        }
    }
}

/// Exponential moving average of observed solve times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub alpha: f64,
    pub default_tm: f64,
    pub default_fm: f64,
    history: BTreeMap<(Model, DamageBucket), f64>,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            alpha: 0.3,
            default_tm: 1e-3,
            default_fm: 5e-2,
            history: BTreeMap::new(),
        }
    }
}

impl CostModel {
    pub fn estimate(&self, model: Model, mean_damage: f64) -> f64 {
        self.history
            .get(&(model, DamageBucket::of(mean_damage)))
            .copied()
            .unwrap_or(match model {
                Model::Full => self.default_fm,
                Model::Taylor => self.default_tm,
            })
    }

    pub fn observe(&mut self, model: Model, mean_damage: f64, seconds: f64) {
        if !(seconds.is_finite() && seconds >= 0.0) {
            return;
        }
        let alpha = self.alpha;
        self.history
            .entry((model, DamageBucket::of(mean_damage)))
            .and_modify(|e| *e = alpha * seconds + (1.0 - alpha) * *e)
            .or_insert(seconds);
    }
}

/// `estimate_cost` for a job given the element's last mean damage.
pub fn estimate_cost(job: &Job, mean_damage: f64, history: &CostModel) -> f64 {
    history.estimate(job.model, mean_damage)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_simulated_example() {
        let (servers, loads) = lpt_assign(&[9.0, 7.0, 5.0, 3.0, 1.0], 3);
        assert_eq!(servers, vec![0, 1, 2, 2, 1]);
        assert_eq!(loads, vec![9.0, 8.0, 8.0]);
    }

    #[test]
    fn single_server_and_symmetric_cases() {
        let (s, loads) = lpt_assign(&[1.0, 2.0, 3.0], 1);
        assert_eq!(s, vec![0, 0, 0]);
        assert_eq!(loads, vec![6.0]);
        let (s, _) = lpt_assign(&[2.0; 4], 4);
        let mut sorted = s.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }

    #[test]
    fn cost_model_cold_start_and_ema() {
        let mut m = CostModel::default();
        assert_eq!(m.estimate(Model::Taylor, 0.0), m.default_tm);
        assert_eq!(
            m.estimate(Model::Full, 0.0) / m.estimate(Model::Taylor, 0.0),
            50.0
        );
        for _ in 0..10 {
            m.observe(Model::Full, 0.2, 0.4);
        }
        assert!((m.estimate(Model::Full, 0.3) - 0.4).abs() < 1e-15);
        let mut alt = CostModel::default();
        let mut oracle = None::<f64>;
        for i in 0..20 {
            let t = if i % 2 == 0 { 1.0 } else { 3.0 };
            alt.observe(Model::Taylor, 0.0, t);
            oracle = Some(oracle.map_or(t, |e| 0.3 * t + 0.7 * e));
        }
        let e = alt.estimate(Model::Taylor, 0.0);
        assert_eq!(e, oracle.unwrap());
        assert!(e > 1.0 && e < 3.0);
    }

    #[test]
    fn buckets() {
        assert_eq!(DamageBucket::of(0.0), DamageBucket::Low);
        assert_eq!(DamageBucket::of(0.01), DamageBucket::Mid);
        assert_eq!(DamageBucket::of(0.5), DamageBucket::Mid);
        assert_eq!(DamageBucket::of(0.51), DamageBucket::High);
    }
}
