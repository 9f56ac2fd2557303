use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Message endpoint: the macro domain, a server master, or a worker rank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Endpoint {
    Macro,
    Master(usize),
    /// `(server, rank)` with ranks starting at 1.
    Worker(usize, usize),
}

impl Endpoint {
    pub fn server(self) -> Option<usize> {
        match self {
            Endpoint::Macro => None,
            Endpoint::Master(s) | Endpoint::Worker(s, _) => Some(s),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Macro => f.write_str("D0"),
            Endpoint::Master(s) => write!(f, "S{s}"),
            Endpoint::Worker(s, r) => write!(f, "S{s}.w{r}"),
        }
    }
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "D0" {
            return Ok(Endpoint::Macro);
        }
        let bad = || format!("bad endpoint {s:?}");
        let rest = s.strip_prefix('S').ok_or_else(bad)?;
        match rest.split_once(".w") {
            Some((srv, rank)) => Ok(Endpoint::Worker(
                srv.parse().map_err(|_| bad())?,
                rank.parse().map_err(|_| bad())?,
            )),
            None => Ok(Endpoint::Master(rest.parse().map_err(|_| bad())?)),
        }
    }
}

impl Serialize for Endpoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Endpoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    StepBegin,
    ShardOut,
    MigrateShard,
    ShardIn,
    Dispatch,
    WorkAssign,
    WorkDone,
    Result,
    StepEnd,
    Ack,
}

/// One logged message.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub step: usize,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub kind: MessageKind,
    pub element: Option<usize>,
    pub bytes: usize,
}

pub fn write_jsonl<W: std::io::Write>(events: &[TraceEvent], mut w: W) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<Vec<TraceEvent>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub messages: usize,
    pub inter_server: usize,
    /// Migrated `(step, element)` pairs seen in the trace.
    pub migrations: usize,
    pub violations: Vec<String>,
}

impl TraceReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the communication contract:
///
/// * messages crossing servers are shard transfers between workers of equal
///   rank;
/// * the macro domain talks only to server masters, workers only to their
///   own master or a peer;
/// * each migrated cell moves as exactly one shard per rank `1..=m`, all
///   between the same pair of servers;
/// * when `expected` migrations are given, the trace contains exactly those.
pub fn validate_trace(
    events: &[TraceEvent],
    m: usize,
    expected: Option<&[(usize, usize)]>,
) -> TraceReport {
    let mut report = TraceReport {
        messages: events.len(),
        ..Default::default()
    };
    let mut shards: BTreeMap<(usize, usize), Vec<(usize, usize, usize)>> = BTreeMap::new();
    for (i, e) in events.iter().enumerate() {
        let crosses = match (e.src.server(), e.dst.server()) {
            (Some(a), Some(b)) => a != b,
            _ => false,
        };
        let allowed = match (e.src, e.dst) {
            (Endpoint::Macro, Endpoint::Master(_)) | (Endpoint::Master(_), Endpoint::Macro) => true,
            (Endpoint::Master(a), Endpoint::Worker(b, _))
            | (Endpoint::Worker(b, _), Endpoint::Master(a)) => a == b,
            (Endpoint::Worker(a, ra), Endpoint::Worker(b, rb)) => {
                a != b && ra == rb && e.kind == MessageKind::MigrateShard
            }
            _ => false,
        };
        if crosses {
            report.inter_server += 1;
        }
        if !allowed {
            report.violations.push(format!(
                "message {i}: {:?} {} -> {} not permitted",
                e.kind, e.src, e.dst
            ));
        }
        if e.kind == MessageKind::MigrateShard {
            match (e.src, e.dst, e.element) {
                (Endpoint::Worker(a, r), Endpoint::Worker(b, _), Some(el)) => {
                    shards.entry((e.step, el)).or_default().push((a, b, r));
                }
                _ => report
                    .violations
                    .push(format!("message {i}: malformed shard transfer")),
            }
        }
    }
    for ((step, el), list) in &shards {
        let mut ranks: Vec<usize> = list.iter().map(|x| x.2).collect();
        ranks.sort_unstable();
        let pairs_agree = list.iter().all(|x| (x.0, x.1) == (list[0].0, list[0].1));
        if ranks != (1..=m).collect::<Vec<_>>() || !pairs_agree {
            report.violations.push(format!(
                "step {step} element {el}: shard ranks {ranks:?} (want 1..={m})"
            ));
        }
    }
    report.migrations = shards.len();
    if let Some(exp) = expected {
        let mut want: Vec<(usize, usize)> = exp.to_vec();
        want.sort_unstable();
        let got: Vec<(usize, usize)> = shards.keys().copied().collect();
        if want != got {
            report.violations.push(format!(
                "migrations in trace {got:?} differ from schedule {want:?}"
            ));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: Endpoint, dst: Endpoint, kind: MessageKind, element: Option<usize>) -> TraceEvent {
        TraceEvent {
            step: 0,
            src,
            dst,
            kind,
            element,
            bytes: 8,
        }
    }

    #[test]
    fn endpoint_names_round_trip() {
        for e in [Endpoint::Macro, Endpoint::Master(3), Endpoint::Worker(2, 4)] {
            assert_eq!(e.to_string().parse::<Endpoint>().unwrap(), e);
        }
        assert!("X1".parse::<Endpoint>().is_err());
    }

    #[test]
    fn rejects_unequal_ranks_and_foreign_masters() {
        let bad = [
            ev(
                Endpoint::Worker(0, 1),
                Endpoint::Worker(1, 2),
                MessageKind::MigrateShard,
                Some(0),
            ),
            ev(
                Endpoint::Worker(0, 1),
                Endpoint::Master(1),
                MessageKind::WorkDone,
                Some(0),
            ),
            ev(
                Endpoint::Macro,
                Endpoint::Worker(0, 1),
                MessageKind::WorkAssign,
                Some(0),
            ),
            ev(
                Endpoint::Master(0),
                Endpoint::Master(1),
                MessageKind::Dispatch,
                Some(0),
            ),
        ];
        for e in bad {
            assert!(!validate_trace(&[e], 2, None).violations.is_empty());
        }
    }

    #[test]
    fn counts_complete_handoffs() {
        let t = vec![
            ev(
                Endpoint::Worker(0, 1),
                Endpoint::Worker(2, 1),
                MessageKind::MigrateShard,
                Some(5),
            ),
            ev(
                Endpoint::Worker(0, 2),
                Endpoint::Worker(2, 2),
                MessageKind::MigrateShard,
                Some(5),
            ),
        ];
        let r = validate_trace(&t, 2, Some(&[(0, 5)]));
        assert!(r.ok(), "{:?}", r.violations);
        assert_eq!((r.inter_server, r.migrations), (2, 1));
        assert!(!validate_trace(&t[..1], 2, None).ok());
        assert!(!validate_trace(&t, 2, Some(&[])).ok());
    }

    #[test]
    fn jsonl_round_trip() {
        let t = vec![ev(
            Endpoint::Macro,
            Endpoint::Master(0),
            MessageKind::StepBegin,
            None,
        )];
        let mut buf = Vec::new();
        write_jsonl(&t, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(r#"{"step":0,"src":"D0","dst":"S0","kind":"StepBegin""#));
        assert_eq!(read_jsonl(&text).unwrap(), t);
    }
}
