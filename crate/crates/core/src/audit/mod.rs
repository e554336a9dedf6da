//! Kirchhoff-style conservation checks over run traces.
//!
//! The potential of a payload is its surprisal under a uniform source, which
//! is its length in bits. Flux `J_e[n]` is the payload bits crossing edge `e`
//! in slot `n`. Bits a node originates or absorbs as a transaction endpoint
//! flow through virtual source and sink edges, so the node law is exact at
//! endpoints as well as at relays.

use crate::ids::{NodeId, TxnId};
use crate::link::{AgreementTag, Digest, Frame, Phase};
use crate::trace::{EventKind, TraceEvent};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;
use thiserror::Error;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PotentialModel {
    /// `-log2` of a uniform distribution over payloads of the same length.
    #[default]
    SurprisalUniform,
}

pub fn payload_potential(payload: &[u8], model: PotentialModel) -> u64 {
    match model {
        PotentialModel::SurprisalUniform => payload.len() as u64 * 8,
    }
}

pub fn frame_potential(frame: &Frame, model: PotentialModel) -> u64 {
    payload_potential(&frame.payload, model)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("slot {slot} is outside the ledger (last slot {last})")]
    SlotOutOfRange { slot: u64, last: u64 },
    #[error("cycle must start and end at the same node")]
    NotClosed,
    #[error("{0}-{1} is not a link")]
    NotALink(NodeId, NodeId),
    #[error("transaction {0} has not reached a terminal phase")]
    NonTerminal(TxnId),
    #[error("trace has no run-start record")]
    NoRunStart,
}

type Edge = (NodeId, NodeId);

fn undirected(a: NodeId, b: NodeId) -> Edge {
    (a.min(b), a.max(b))
}

/// Per-edge, per-slot payload flux plus virtual source and sink edges.
#[derive(Clone, Debug, Default)]
pub struct FluxLedger {
    nodes: BTreeSet<NodeId>,
    last_slot: u64,
    injected: BTreeMap<(Edge, u64), u64>,
    delivered: BTreeMap<(Edge, u64), u64>,
    source: BTreeMap<(NodeId, u64), u64>,
    sink: BTreeMap<(NodeId, u64), u64>,
}

impl FluxLedger {
    pub fn new(nodes: impl IntoIterator<Item = NodeId>) -> Self {
        FluxLedger {
            nodes: nodes.into_iter().collect(),
            ..Default::default()
        }
    }

    /// A frame of `bits` put on edge `from -> to`; `originated` when `from`
    /// is the frame's end-to-end source.
    pub fn record_sent(&mut self, slot: u64, from: NodeId, to: NodeId, bits: u64, originated: bool) {
        self.touch(slot);
        *self.injected.entry(((from, to), slot)).or_insert(0) += bits;
        if originated {
            *self.source.entry((from, slot)).or_insert(0) += bits;
        }
    }

    /// A frame of `bits` taken off edge `from -> to`; `absorbed` when `to`
    /// is the frame's end-to-end destination.
    pub fn record_delivered(&mut self, slot: u64, from: NodeId, to: NodeId, bits: u64, absorbed: bool) {
        self.touch(slot);
        *self.delivered.entry(((from, to), slot)).or_insert(0) += bits;
        if absorbed {
            *self.sink.entry((to, slot)).or_insert(0) += bits;
        }
    }

    fn touch(&mut self, slot: u64) {
        self.last_slot = self.last_slot.max(slot);
    }

    pub fn last_slot(&self) -> u64 {
        self.last_slot
    }

    pub fn nodes(&self) -> &BTreeSet<NodeId> {
        &self.nodes
    }

    /// `J_e[n]`: bits delivered on the directed edge in the slot.
    pub fn flux(&self, from: NodeId, to: NodeId, slot: u64) -> u64 {
        self.delivered.get(&((from, to), slot)).copied().unwrap_or(0)
    }

    /// Bits put on the edge minus bits taken off it, over the whole run.
    pub fn edge_deficit(&self, from: NodeId, to: NodeId) -> i64 {
        let sum = |m: &BTreeMap<(Edge, u64), u64>| -> i64 {
            m.range(((from, to), 0)..=((from, to), u64::MAX)).map(|(_, &b)| b as i64).sum()
        };
        sum(&self.injected) - sum(&self.delivered)
    }

    /// `(inflow + source) - (outflow + sink)` at `node` in `slot`.
    pub fn node_residual(&self, node: NodeId, slot: u64) -> Result<i64, AuditError> {
        if !self.nodes.contains(&node) {
            return Err(AuditError::UnknownNode(node));
        }
        if slot > self.last_slot {
            return Err(AuditError::SlotOutOfRange {
                slot,
                last: self.last_slot,
            });
        }
        let mut r = 0i64;
        for (&((_, to), s), &b) in &self.delivered {
            if to == node && s == slot {
                r += b as i64;
            }
        }
        for (&((from, _), s), &b) in &self.injected {
            if from == node && s == slot {
                r -= b as i64;
            }
        }
        r += self.source.get(&(node, slot)).copied().unwrap_or(0) as i64;
        r -= self.sink.get(&(node, slot)).copied().unwrap_or(0) as i64;
        Ok(r)
    }

    /// Every `(node, slot, residual)` with a nonzero residual.
    pub fn node_violations(&self) -> Vec<(NodeId, u64, i64)> {
        let mut acc: BTreeMap<(NodeId, u64), i64> = BTreeMap::new();
        for (&((_, to), s), &b) in &self.delivered {
            *acc.entry((to, s)).or_insert(0) += b as i64;
        }
        for (&((from, _), s), &b) in &self.injected {
            *acc.entry((from, s)).or_insert(0) -= b as i64;
        }
        for (&(n, s), &b) in &self.source {
            *acc.entry((n, s)).or_insert(0) += b as i64;
        }
        for (&(n, s), &b) in &self.sink {
            *acc.entry((n, s)).or_insert(0) -= b as i64;
        }
        acc.into_iter().filter(|&(_, r)| r != 0).map(|((n, s), r)| (n, s, r)).collect()
    }
}

/// What the trace says about one transaction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TxnOutcome {
    pub id: TxnId,
    pub initiator: NodeId,
    pub responder: NodeId,
    pub bits: u64,
    pub start: u64,
    pub digest: Option<Digest>,
    pub initiator_phase: Option<Phase>,
    pub responder_phase: Option<Phase>,
    pub initiator_commit_digest: Option<Digest>,
    pub responder_commit_digest: Option<Digest>,
    /// A TYK carrying the sent digest reached the initiator.
    pub reflection_seen: bool,
}

impl TxnOutcome {
    /// Reflection recovered the assertion on both sides.
    pub fn confirmed(&self) -> bool {
        self.initiator_phase == Some(Phase::Agreed)
            && self.responder_phase == Some(Phase::Agreed)
            && self.initiator_commit_digest.is_some()
            && self.initiator_commit_digest == self.responder_commit_digest
    }

    pub fn is_terminal(&self) -> bool {
        self.initiator_phase.is_some_and(Phase::is_terminal)
    }
}

/// Λ for one exchange: 0 when the reflection recovered the assertion, 1 otherwise.
pub fn exchange_deficit(o: &TxnOutcome) -> Result<f64, AuditError> {
    if !o.is_terminal() {
        return Err(AuditError::NonTerminal(o.id));
    }
    Ok(if o.confirmed() { 0.0 } else { 1.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PifThroughput {
    /// Confirmed payload bits per slot in the requested direction.
    pub one_way: f64,
    /// Confirmed payload plus the equal measure its reflection confirms, per slot.
    pub bilateral_confirmed: f64,
    /// `one_way` for the opposite direction.
    pub reverse_one_way: f64,
    /// Both directions issued the same number of transactions and bits.
    pub symmetric: bool,
}

/// Everything the auditor derives from one trace.
#[derive(Clone, Debug)]
pub struct Audit {
    links: BTreeSet<Edge>,
    ledger: FluxLedger,
    outcomes: BTreeMap<TxnId, TxnOutcome>,
    frames_dropped: u64,
    duration: u64,
}

impl Audit {
    pub fn from_trace(events: &[TraceEvent]) -> Result<Self, AuditError> {
        let start = events
            .iter()
            .find(|e| e.kind == EventKind::RunStart)
            .ok_or(AuditError::NoRunStart)?;
        let links: BTreeSet<Edge> = start
            .links
            .iter()
            .flatten()
            .map(|&(a, b)| undirected(a, b))
            .collect();
        let nodes = links.iter().flat_map(|&(a, b)| [a, b]);
        let mut ledger = FluxLedger::new(nodes);
        let mut outcomes: BTreeMap<TxnId, TxnOutcome> = BTreeMap::new();
        let mut frames_dropped = 0;
        let mut duration = 0;
        for e in events {
            duration = duration.max(e.slot);
            match e.kind {
                EventKind::TxnStart => {
                    if let (Some(id), Some(i), Some(r)) = (e.txn_id, e.node, e.peer) {
                        outcomes.insert(
                            id,
                            TxnOutcome {
                                id,
                                initiator: i,
                                responder: r,
                                bits: e.payload_bits,
                                start: e.slot,
                                digest: e.digest,
                                initiator_phase: None,
                                responder_phase: None,
                                initiator_commit_digest: None,
                                responder_commit_digest: None,
                                reflection_seen: false,
                            },
                        );
                    }
                }
                EventKind::FrameSent => {
                    if let Some((from, to)) = e.hop {
                        ledger.record_sent(e.slot, from, to, e.payload_bits, e.src == Some(from));
                    }
                }
                EventKind::FrameDelivered => {
                    if let Some((from, to)) = e.hop {
                        ledger.record_delivered(e.slot, from, to, e.payload_bits, e.dst == Some(to));
                    }
                    if e.tag == Some(AgreementTag::Tyk) && e.dst == e.hop.map(|h| h.1) {
                        if let Some(o) = e.txn_id.and_then(|t| outcomes.get_mut(&t)) {
                            if e.dst == Some(o.initiator) && e.digest.is_some() && e.digest == o.digest {
                                o.reflection_seen = true;
                            }
                        }
                    }
                }
                EventKind::FrameDropped => frames_dropped += 1,
                EventKind::Commit | EventKind::Abort => {
                    let Some(o) = e.txn_id.and_then(|t| outcomes.get_mut(&t)) else {
                        continue;
                    };
                    let phase = if e.kind == EventKind::Commit {
                        Phase::Agreed
                    } else {
                        Phase::Aborted
                    };
                    if e.node == Some(o.initiator) {
                        o.initiator_phase = Some(phase);
                        if phase == Phase::Agreed {
                            o.initiator_commit_digest = e.digest;
                        }
                    } else if e.node == Some(o.responder) {
                        o.responder_phase = Some(phase);
                        if phase == Phase::Agreed {
                            o.responder_commit_digest = e.digest;
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(Audit {
            links,
            ledger,
            outcomes,
            frames_dropped,
            duration,
        })
    }

    pub fn ledger(&self) -> &FluxLedger {
        &self.ledger
    }

    pub fn outcomes(&self) -> &BTreeMap<TxnId, TxnOutcome> {
        &self.outcomes
    }

    pub fn links(&self) -> &BTreeSet<(NodeId, NodeId)> {
        &self.links
    }

    /// Last slot of the run.
    pub fn duration(&self) -> u64 {
        self.duration
    }

    /// No frame was dropped and every transaction was confirmed.
    pub fn is_lossless(&self) -> bool {
        self.frames_dropped == 0 && self.outcomes.values().all(TxnOutcome::confirmed)
    }

    pub fn node_residual(&self, node: NodeId, slot: u64) -> Result<i64, AuditError> {
        self.ledger.node_residual(node, slot)
    }

    /// `ΔΦ` of the link between `a` and `b` over transactions started in
    /// `window`: bits asserted minus bits confirmed by reflection.
    pub fn potential_drop(&self, a: NodeId, b: NodeId, window: &Range<u64>) -> u64 {
        let e = undirected(a, b);
        self.outcomes
            .values()
            .filter(|o| undirected(o.initiator, o.responder) == e && window.contains(&o.start))
            .map(|o| {
                let confirmed = if o.confirmed() { o.bits } else { 0 };
                o.bits - confirmed
            })
            .sum()
    }

    /// Sum of `ΔΦ` around a closed walk given as a node list whose first and
    /// last entries coincide.
    pub fn loop_residual(&self, cycle: &[NodeId], window: Range<u64>) -> Result<u64, AuditError> {
        if cycle.len() < 2 || cycle.first() != cycle.last() {
            return Err(AuditError::NotClosed);
        }
        let mut total = 0;
        for w in cycle.windows(2) {
            if !self.links.contains(&undirected(w[0], w[1])) {
                return Err(AuditError::NotALink(w[0], w[1]));
            }
            total += self.potential_drop(w[0], w[1], &window);
        }
        Ok(total)
    }

    /// Every triangle of the link graph, as `[a, b, c]` with `a < b < c`.
    pub fn triangles(&self) -> Vec<[NodeId; 3]> {
        let mut out = Vec::new();
        for &(a, b) in &self.links {
            for &(x, c) in self.links.range((b, NodeId(0))..) {
                if x == b && self.links.contains(&(a, c)) {
                    out.push([a, b, c]);
                }
            }
        }
        out
    }

    /// `Σ Λ × payload bits` over all transactions.
    pub fn entropy_produced(&self) -> u64 {
        self.outcomes
            .values()
            .filter(|o| !o.confirmed())
            .map(|o| o.bits)
            .sum()
    }

    /// Confirmed throughput on the link from `from` to `to`.
    ///
    /// A confirmed exchange contributes its payload bits once as assertion
    /// and once more as the confirmation carried back by its reflection.
    pub fn pif_throughput(&self, from: NodeId, to: NodeId) -> PifThroughput {
        let slots = (self.duration + 1) as f64;
        let dir = |a: NodeId, b: NodeId| self.outcomes.values().filter(move |o| o.initiator == a && o.responder == b);
        let confirmed = |a, b| dir(a, b).filter(|o| o.confirmed()).map(|o| o.bits).sum::<u64>();
        let echoed: u64 = dir(from, to)
            .filter(|o| o.confirmed() && o.reflection_seen)
            .map(|o| o.bits)
            .sum();
        let fwd = confirmed(from, to);
        let issued = |a, b| (dir(a, b).count(), dir(a, b).map(|o| o.bits).sum::<u64>());
        PifThroughput {
            one_way: fwd as f64 / slots,
            bilateral_confirmed: (fwd + echoed) as f64 / slots,
            reverse_one_way: confirmed(to, from) as f64 / slots,
            symmetric: issued(from, to) == issued(to, from),
        }
    }

    pub fn check(&self) -> ConservationReport {
        let lossless = self.is_lossless();
        let mut loop_violations = Vec::new();
        let triangles = self.triangles();
        if lossless {
            for t in &triangles {
                let cycle = [t[0], t[1], t[2], t[0]];
                let r = self.loop_residual(&cycle, 0..self.duration + 1).expect("triangle edges are links");
                if r != 0 {
                    loop_violations.push((*t, r));
                }
            }
        }
        let window = 0..self.duration + 1;
        let link_drop: u64 = self
            .links
            .iter()
            .map(|&(a, b)| self.potential_drop(a, b, &window))
            .sum();
        let entropy = self.entropy_produced();
        ConservationReport {
            nodes: self.ledger.nodes().len(),
            last_slot: self.ledger.last_slot(),
            transactions: self.outcomes.len(),
            confirmed: self.outcomes.values().filter(|o| o.confirmed()).count(),
            frames_dropped: self.frames_dropped,
            lossless,
            node_violations: self.ledger.node_violations(),
            triangles_checked: if lossless { triangles.len() } else { 0 },
            loop_violations,
            entropy_produced: entropy,
            link_potential_drop: link_drop,
        }
    }
}

/// Residual summary of one trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConservationReport {
    pub nodes: usize,
    pub last_slot: u64,
    pub transactions: usize,
    pub confirmed: usize,
    pub frames_dropped: u64,
    pub lossless: bool,
    pub node_violations: Vec<(NodeId, u64, i64)>,
    pub triangles_checked: usize,
    pub loop_violations: Vec<([NodeId; 3], u64)>,
    pub entropy_produced: u64,
    /// `Σ ΔΦ` over every link; must equal `entropy_produced`.
    pub link_potential_drop: u64,
}

impl ConservationReport {
    pub fn reconciled(&self) -> bool {
        self.link_potential_drop == self.entropy_produced
    }

    pub fn passed(&self) -> bool {
        self.node_violations.is_empty() && self.loop_violations.is_empty() && self.reconciled()
    }
}

impl fmt::Display for ConservationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "transactions {} (confirmed {}), frames dropped {}, slots 0..={}",
            self.transactions, self.confirmed, self.frames_dropped, self.last_slot
        )?;
        writeln!(f, "node law: {} violations over {} nodes", self.node_violations.len(), self.nodes)?;
        for (n, s, r) in &self.node_violations {
            writeln!(f, "  node {n} slot {s}: residual {r} bits")?;
        }
        if self.lossless {
            writeln!(
                f,
                "loop law: {} violations over {} triangles",
                self.loop_violations.len(),
                self.triangles_checked
            )?;
            for (t, r) in &self.loop_violations {
                writeln!(f, "  triangle {}-{}-{}: residual {r} bits", t[0], t[1], t[2])?;
            }
        } else {
            writeln!(f, "loop law: not asserted (run had losses or unconfirmed exchanges)")?;
        }
        writeln!(f, "entropy produced: {} bits", self.entropy_produced)?;
        writeln!(
            f,
            "link potential drop: {} bits ({})",
            self.link_potential_drop,
            if self.reconciled() { "reconciled" } else { "MISMATCH" }
        )?;
        write!(f, "{}", if self.passed() { "PASS" } else { "FAIL" })
    }
}
