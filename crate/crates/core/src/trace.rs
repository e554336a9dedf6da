//! Append-only run records, encoded as JSON Lines.

use crate::ids::{NodeId, TxnId};
use crate::link::{AgreementTag, Digest, Phase, Verdict};
use serde::{Deserialize, Serialize};
use std::io::{self, BufRead, Write};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    /// First record of every run; carries the link set.
    RunStart,
    /// A workload item was issued at `node` toward `peer`.
    TxnStart,
    FrameSent,
    FrameDelivered,
    FrameDropped,
    /// A frame the receiving reactor refused as malformed or unexpected.
    FrameRejected,
    PhaseChange,
    Commit,
    Abort,
    /// Application state restored to the transaction's checkpoint.
    Rollback,
    DivergenceDetected,
    CorruptionDetected,
    PartitionStart,
    PartitionEnd,
    RelayUsed,
    /// A baseline receiver applied a delivered payload.
    Applied,
    RunEnd,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::RunStart => "run-start",
            EventKind::TxnStart => "txn-start",
            EventKind::FrameSent => "frame-sent",
            EventKind::FrameDelivered => "frame-delivered",
            EventKind::FrameDropped => "frame-dropped",
            EventKind::FrameRejected => "frame-rejected",
            EventKind::PhaseChange => "phase-change",
            EventKind::Commit => "commit",
            EventKind::Abort => "abort",
            EventKind::Rollback => "rollback",
            EventKind::DivergenceDetected => "divergence-detected",
            EventKind::CorruptionDetected => "corruption-detected",
            EventKind::PartitionStart => "partition-start",
            EventKind::PartitionEnd => "partition-end",
            EventKind::RelayUsed => "relay-used",
            EventKind::Applied => "applied",
            EventKind::RunEnd => "run-end",
        }
    }
}

/// One trace record. Fields that do not apply to a kind are omitted.
///
/// For frame events `hop` is the edge the frame is crossing and `src`/`dst`
/// are its end-to-end endpoints; they differ only on relayed frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub slot: u64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub txn_id: Option<TxnId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hop: Option<(NodeId, NodeId)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retransmit: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<AgreementTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub payload_bits: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Phase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub links: Option<Vec<(NodeId, NodeId)>>,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

impl TraceEvent {
    pub fn new(slot: u64, kind: EventKind) -> Self {
        TraceEvent {
            slot,
            kind,
            txn_id: None,
            node: None,
            peer: None,
            hop: None,
            src: None,
            dst: None,
            seq: None,
            retransmit: None,
            tag: None,
            verdict: None,
            payload_bits: 0,
            digest: None,
            phase: None,
            reason: None,
            links: None,
        }
    }

    pub fn txn(mut self, txn: TxnId) -> Self {
        self.txn_id = Some(txn);
        self
    }

    pub fn at(mut self, node: NodeId) -> Self {
        self.node = Some(node);
        self
    }

    pub fn peer(mut self, peer: NodeId) -> Self {
        self.peer = Some(peer);
        self
    }

    pub fn bits(mut self, bits: u64) -> Self {
        self.payload_bits = bits;
        self
    }

    pub fn digest(mut self, d: Digest) -> Self {
        self.digest = Some(d);
        self
    }

    pub fn phase(mut self, p: Phase) -> Self {
        self.phase = Some(p);
        self
    }

    pub fn reason(mut self, r: impl Into<String>) -> Self {
        self.reason = Some(r.into());
        self
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn write_jsonl<W: Write>(mut w: W, events: &[TraceEvent]) -> io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn to_jsonl(events: &[TraceEvent]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, events).expect("writing to a Vec cannot fail");
    buf
}

/// Parse a JSON Lines trace. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<TraceEvent>, TraceError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line).map_err(|source| TraceError::Parse { line: i + 1, source })?;
        out.push(e);
    }
    Ok(out)
}
