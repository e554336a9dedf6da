//! Forward-in-time-only reference protocols and the silent-corruption auditor.
//!
//! Baselines send over the direct link only and never retransmit.

mod fireforget;
mod lww;

pub use fireforget::FireForget;
pub use lww::{LwwEntry, LwwReplica, Lww};

use crate::ids::TxnId;
use crate::link::Digest;
use crate::netsim::Protocol;
use crate::trace::{EventKind, TraceEvent};
use std::collections::{BTreeMap, BTreeSet};

/// Count silent semantic corruptions in a finished trace.
///
/// - fireforget: transactions reported complete at send whose payload never
///   reached the receiver intact.
/// - lww: distinct writes discarded by a merge although the surviving write
///   did not causally follow them.
/// - oae: commits that expose unverified data, i.e. a commit whose digest
///   differs from what the initiator sent, or an initiator commit that no
///   responder commit preceded.
pub fn corruption_audit(trace: &[TraceEvent], protocol: Protocol) -> u64 {
    let mut sent: BTreeMap<TxnId, (Option<Digest>, Option<crate::ids::NodeId>)> = BTreeMap::new();
    for e in trace.iter().filter(|e| e.kind == EventKind::TxnStart) {
        if let Some(t) = e.txn_id {
            sent.insert(t, (e.digest, e.node));
        }
    }
    match protocol {
        Protocol::Fireforget => {
            let mut complete = BTreeSet::new();
            let mut intact = BTreeSet::new();
            for e in trace {
                let Some(t) = e.txn_id else { continue };
                match e.kind {
                    EventKind::Commit => {
                        complete.insert(t);
                    }
                    EventKind::Applied if sent.get(&t).is_some_and(|s| s.0 == e.digest) => {
                        intact.insert(t);
                    }
                    _ => {}
                }
            }
            complete.difference(&intact).count() as u64
        }
        Protocol::Lww => trace
            .iter()
            .filter(|e| e.kind == EventKind::CorruptionDetected)
            .filter_map(|e| e.txn_id)
            .collect::<BTreeSet<_>>()
            .len() as u64,
        Protocol::Oae => {
            let mut responder_committed = BTreeSet::new();
            let mut bad = BTreeSet::new();
            for e in trace.iter().filter(|e| e.kind == EventKind::Commit) {
                let Some(t) = e.txn_id else { continue };
                let Some(&(d, init)) = sent.get(&t) else {
                    bad.insert(t);
                    continue;
                };
                if e.digest != d {
                    bad.insert(t);
                }
                if e.node == init {
                    if !responder_committed.contains(&t) {
                        bad.insert(t);
                    }
                } else {
                    responder_committed.insert(t);
                }
            }
            bad.len() as u64
        }
    }
}
