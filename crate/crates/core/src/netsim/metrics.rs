use super::scenario::{Protocol, Scenario};
use crate::audit::Audit;
use crate::baselines::corruption_audit;
use crate::trace::{EventKind, TraceEvent};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

/// One metrics row. Column order is the CSV header and is frozen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub protocol: Protocol,
    pub scenario: String,
    pub seed: u64,
    pub transactions: u64,
    pub commits: u64,
    pub aborts: u64,
    pub detected_divergences: u64,
    pub silent_corruptions: u64,
    pub relay_uses: u64,
    pub entropy_produced: u64,
    pub frames_sent: u64,
    pub frames_dropped: u64,
}

pub const CSV_HEADER: &str = "protocol,scenario,seed,transactions,commits,aborts,detected_divergences,silent_corruptions,relay_uses,entropy_produced,frames_sent,frames_dropped";

impl Metrics {
    /// Fold a finished trace into a row.
    ///
    /// `commits` and `aborts` count the outcome seen by each transaction's
    /// initiator.
    pub fn from_trace(scenario: &Scenario, trace: &[TraceEvent]) -> Self {
        let mut initiator = BTreeMap::new();
        let mut commits = BTreeSet::new();
        let mut aborts = BTreeSet::new();
        let mut divergent = BTreeSet::new();
        let (mut relay, mut sent, mut dropped) = (0, 0, 0);
        for e in trace {
            match e.kind {
                EventKind::TxnStart => {
                    if let (Some(t), Some(n)) = (e.txn_id, e.node) {
                        initiator.insert(t, n);
                    }
                }
                EventKind::Commit | EventKind::Abort => {
                    if let Some(t) = e.txn_id {
                        if initiator.get(&t) == e.node.as_ref() {
                            if e.kind == EventKind::Commit {
                                commits.insert(t);
                            } else {
                                aborts.insert(t);
                            }
                        }
                    }
                }
                EventKind::DivergenceDetected => {
                    divergent.extend(e.txn_id);
                }
                EventKind::RelayUsed => relay += 1,
                EventKind::FrameSent => sent += 1,
                EventKind::FrameDropped => dropped += 1,
                _ => {}
            }
        }
        let entropy = Audit::from_trace(trace).map_or(0, |a| a.entropy_produced());
        Metrics {
            protocol: scenario.protocol,
            scenario: scenario.name.clone(),
            seed: scenario.seed,
            transactions: initiator.len() as u64,
            commits: commits.len() as u64,
            aborts: aborts.len() as u64,
            detected_divergences: divergent.len() as u64,
            silent_corruptions: corruption_audit(trace, scenario.protocol),
            relay_uses: relay,
            entropy_produced: entropy,
            frames_sent: sent,
            frames_dropped: dropped,
        }
    }
}

pub fn write_csv<W: Write>(w: W, rows: &[Metrics]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    if rows.is_empty() {
        out.write_record(CSV_HEADER.split(','))?;
    }
    out.flush()?;
    Ok(())
}

pub fn to_csv(rows: &[Metrics]) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("csv output is utf-8")
}
