use super::{digest, AgreementTag, Digest, Frame, LinkError, Phase, Transaction, Verdict};
use crate::causal::Role;
use crate::ids::{NodeId, TxnId};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Which requests the initiator retransmits on its retry timer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetryPolicy {
    /// TIK while tentative and TIK2 while reflecting.
    All,
    /// Only TIK2: the assertion and its reflection get a single try.
    AgreementOnly,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LinkConfig {
    pub horizon: u64,
    pub retry: RetryPolicy,
}

impl LinkConfig {
    pub fn new(horizon: u64) -> Self {
        LinkConfig {
            horizon,
            retry: RetryPolicy::All,
        }
    }

    /// `ceil(horizon / 4)`, at least one slot.
    pub fn retry_interval(&self) -> u64 {
        self.horizon.div_ceil(4).max(1)
    }
}

/// Reference to the last committed application state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Checkpoint {
    pub journal_len: usize,
    pub state: Digest,
}

/// Committed journal plus per-transaction staged writes.
///
/// Staged writes never touch the committed state, so rolling a transaction
/// back only discards its staging slot.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AppState {
    journal: Vec<(TxnId, Digest)>,
    staged: BTreeMap<TxnId, Digest>,
    state: Digest,
}

impl Default for AppState {
    fn default() -> Self {
        AppState {
            journal: Vec::new(),
            staged: BTreeMap::new(),
            state: digest(b""),
        }
    }
}

impl AppState {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            journal_len: self.journal.len(),
            state: self.state,
        }
    }

    pub fn state(&self) -> Digest {
        self.state
    }

    pub fn journal(&self) -> &[(TxnId, Digest)] {
        &self.journal
    }

    pub fn is_staged(&self, txn: TxnId) -> bool {
        self.staged.contains_key(&txn)
    }

    pub fn is_committed(&self, txn: TxnId) -> bool {
        self.journal.iter().any(|(t, _)| *t == txn)
    }

    fn stage(&mut self, txn: TxnId, d: Digest) {
        self.staged.insert(txn, d);
    }

    fn commit(&mut self, txn: TxnId) {
        if let Some(d) = self.staged.remove(&txn) {
            let mut buf = Vec::with_capacity(24);
            buf.extend_from_slice(&self.state.0.to_le_bytes());
            buf.extend_from_slice(&txn.0.to_le_bytes());
            buf.extend_from_slice(&d.0.to_le_bytes());
            self.state = digest(&buf);
            self.journal.push((txn, d));
        }
    }

    fn rollback(&mut self, txn: TxnId) {
        self.staged.remove(&txn);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbortReason {
    /// The reflected digest did not match what was sent.
    DigestMismatch,
    /// The confirmation in TIK2 did not match what was received.
    ConfirmationMismatch,
    /// The peer sent an abort verdict.
    PeerAborted,
    /// The temporal horizon expired before the exchange completed.
    Horizon,
}

impl AbortReason {
    pub fn as_str(self) -> &'static str {
        match self {
            AbortReason::DigestMismatch => "digest-mismatch",
            AbortReason::ConfirmationMismatch => "confirmation-mismatch",
            AbortReason::PeerAborted => "peer-aborted",
            AbortReason::Horizon => "horizon",
        }
    }
}

/// Observable side effects of one reactor step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LinkEvent {
    PhaseChange { txn: TxnId, from: Phase, to: Phase },
    Committed { txn: TxnId, role: Role, digest: Digest, bits: u64 },
    Aborted { txn: TxnId, role: Role, reason: AbortReason, bits: u64 },
    RolledBack { txn: TxnId, checkpoint: Checkpoint },
    /// The initiator aborted but learned that the responder committed.
    DivergenceDetected { txn: TxnId },
    Rejected { txn: TxnId, reason: String },
    Retransmit { txn: TxnId, tag: AgreementTag },
    RelayRetry { txn: TxnId },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Reaction {
    pub frames: Vec<Frame>,
    pub events: Vec<LinkEvent>,
}

impl Reaction {
    fn extend(&mut self, other: Reaction) {
        self.frames.extend(other.frames);
        self.events.extend(other.events);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct Session {
    txn: Transaction,
    role: Role,
    /// Initiator: the request awaiting an answer (TIK, then TIK2).
    last_request: Option<Frame>,
    /// Responder: the last answer sent (TYK or TYK2).
    last_response: Option<Frame>,
    next_retry: Option<u64>,
    relay_retried: bool,
    reflected_ok: bool,
    confirmed: bool,
    divergence_flagged: bool,
}

/// One node's side of all its bilateral links.
///
/// A deterministic sequential reactor: every input (a frame or a timer) is
/// handled to completion and yields a [`Reaction`].
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Endpoint {
    node: NodeId,
    peers: BTreeSet<NodeId>,
    config: LinkConfig,
    next_counter: u32,
    link_seq: BTreeMap<NodeId, u64>,
    sessions: BTreeMap<TxnId, Session>,
    app: AppState,
}

impl Endpoint {
    pub fn new(node: NodeId, peers: impl IntoIterator<Item = NodeId>, config: LinkConfig) -> Result<Self, LinkError> {
        if config.horizon == 0 {
            return Err(LinkError::ZeroHorizon);
        }
        Ok(Endpoint {
            node,
            peers: peers.into_iter().collect(),
            config,
            next_counter: 0,
            link_seq: BTreeMap::new(),
            sessions: BTreeMap::new(),
            app: AppState::default(),
        })
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn config(&self) -> LinkConfig {
        self.config
    }

    pub fn app(&self) -> &AppState {
        &self.app
    }

    pub fn transaction(&self, txn: TxnId) -> Option<&Transaction> {
        self.sessions.get(&txn).map(|s| &s.txn)
    }

    pub fn role(&self, txn: TxnId) -> Option<Role> {
        self.sessions.get(&txn).map(|s| s.role)
    }

    pub fn transactions(&self) -> impl Iterator<Item = (&Transaction, Role)> {
        self.sessions.values().map(|s| (&s.txn, s.role))
    }

    /// `true` once the initiator has accepted a digest-matching reflection.
    pub fn reflected(&self, txn: TxnId) -> bool {
        self.sessions.get(&txn).is_some_and(|s| s.reflected_ok)
    }

    /// `true` once the responder has accepted a matching commit verdict.
    pub fn confirmed(&self, txn: TxnId) -> bool {
        self.sessions.get(&txn).is_some_and(|s| s.confirmed)
    }

    /// Start a transaction toward `peer` and emit its TIK.
    pub fn initiate(&mut self, peer: NodeId, payload: Vec<u8>, now: u64) -> Result<(Transaction, Frame), LinkError> {
        if !self.peers.contains(&peer) {
            return Err(LinkError::NoSuchPeer { node: self.node, peer });
        }
        if payload.is_empty() {
            return Err(LinkError::EmptyPayload);
        }
        self.next_counter += 1;
        let id = TxnId::new(self.node, self.next_counter);
        let d = digest(&payload);
        let checkpoint = self.app.checkpoint();
        self.app.stage(id, d);
        let txn = Transaction {
            id,
            initiator: self.node,
            responder: peer,
            payload: payload.clone(),
            digest: d,
            phase: Phase::Tentative,
            start: now,
            deadline: now + self.config.horizon,
            checkpoint,
        };
        let frame = self.build(peer, AgreementTag::Tik, id, None, None, payload, 0);
        let next_retry = (self.config.retry == RetryPolicy::All).then(|| now + self.config.retry_interval());
        self.sessions.insert(
            id,
            Session {
                txn: txn.clone(),
                role: Role::Initiator,
                last_request: Some(frame.clone()),
                last_response: None,
                next_retry,
                relay_retried: false,
                reflected_ok: false,
                confirmed: false,
                divergence_flagged: false,
            },
        );
        Ok((txn, frame))
    }

    /// React to a frame addressed to this endpoint.
    pub fn on_frame(&mut self, frame: &Frame, now: u64) -> Reaction {
        let mut out = Reaction::default();
        if frame.dst != self.node {
            out.events.push(LinkEvent::Rejected {
                txn: frame.txn_id,
                reason: format!("addressed to {}", frame.dst),
            });
            return out;
        }
        if let Err(e) = frame.validate() {
            out.events.push(LinkEvent::Rejected {
                txn: frame.txn_id,
                reason: e.to_string(),
            });
            return out;
        }
        let Some(role) = self.sessions.get(&frame.txn_id).map(|s| s.role) else {
            if frame.tag == AgreementTag::Tik {
                return self.accept_tik(frame, now);
            }
            out.events.push(LinkEvent::Rejected {
                txn: frame.txn_id,
                reason: format!("{} for unknown transaction", frame.tag),
            });
            return out;
        };
        match (role, frame.tag) {
            (Role::Responder, AgreementTag::Tik) => self.reemit_response(frame.txn_id),
            (Role::Responder, AgreementTag::Tik2) => self.responder_on_verdict(frame),
            (Role::Initiator, AgreementTag::Tyk) => self.initiator_on_reflection(frame, now),
            (Role::Initiator, AgreementTag::Tyk2) => self.initiator_on_ack(frame),
            (_, tag) => {
                out.events.push(LinkEvent::Rejected {
                    txn: frame.txn_id,
                    reason: format!("{tag} not expected by the {role:?}"),
                });
                out
            }
        }
    }

    /// Handle the temporal horizon of `txn` at `now`.
    ///
    /// With `relay_available` (the direct link is down and another live path
    /// exists) the first expiry re-sends once through the relay with a fresh
    /// horizon instead of aborting.
    pub fn on_horizon_expiry(&mut self, txn: TxnId, now: u64, relay_available: bool) -> Reaction {
        let mut out = Reaction::default();
        let horizon = self.config.horizon;
        let Some(s) = self.sessions.get_mut(&txn) else {
            return out;
        };
        if s.txn.phase.is_terminal() || now < s.txn.deadline {
            return out;
        }
        if relay_available && !s.relay_retried {
            s.relay_retried = true;
            s.txn.deadline = now + horizon;
            let resend = match s.role {
                Role::Initiator => s.last_request.clone(),
                Role::Responder => s.last_response.clone(),
            };
            out.events.push(LinkEvent::RelayRetry { txn });
            if let Some(f) = resend {
                let f = self.rebuild(&f);
                out.frames.push(f);
            }
            return out;
        }
        self.abort(txn, AbortReason::Horizon, &mut out);
        out
    }

    /// Fire every retransmission and expiry due at `now`.
    pub fn poll_timers(&mut self, now: u64, relay_available: &dyn Fn(NodeId) -> bool) -> Reaction {
        let mut out = Reaction::default();
        let due: Vec<TxnId> = self
            .sessions
            .iter()
            .filter(|(_, s)| !s.txn.phase.is_terminal())
            .filter(|(_, s)| now >= s.txn.deadline || s.next_retry.is_some_and(|t| t <= now))
            .map(|(id, _)| *id)
            .collect();
        for id in due {
            let s = &self.sessions[&id];
            if now >= s.txn.deadline {
                let peer = self.peer_of(s);
                let r = self.on_horizon_expiry(id, now, relay_available(peer));
                out.extend(r);
            } else {
                let r = self.retransmit(id, now);
                out.extend(r);
            }
        }
        out
    }

    /// Earliest slot at which [`Endpoint::poll_timers`] has work.
    pub fn next_timer(&self) -> Option<u64> {
        self.sessions
            .values()
            .filter(|s| !s.txn.phase.is_terminal())
            .map(|s| s.next_retry.map_or(s.txn.deadline, |t| t.min(s.txn.deadline)))
            .min()
    }

    /// Re-send the outstanding request of `txn` regardless of timers.
    pub(crate) fn retransmit_now(&mut self, txn: TxnId) -> Option<Frame> {
        let s = self.sessions.get(&txn)?;
        if s.role != Role::Initiator || s.txn.phase.is_terminal() {
            return None;
        }
        let f = s.last_request.clone()?;
        let f = self.rebuild(&f);
        self.sessions.get_mut(&txn)?.last_request = Some(f.clone());
        Some(f)
    }

    /// Forget link sequence numbers and retransmit counters.
    ///
    /// The reactor never branches on them, so two endpoints that differ only
    /// there behave identically from then on.
    pub(crate) fn normalize(&mut self) {
        self.link_seq.clear();
        for s in self.sessions.values_mut() {
            for f in s.last_request.iter_mut().chain(s.last_response.iter_mut()) {
                f.seq = 0;
                f.retransmit_count = 0;
            }
        }
    }

    fn retransmit(&mut self, txn: TxnId, now: u64) -> Reaction {
        let mut out = Reaction::default();
        let interval = self.config.retry_interval();
        let retry = self.config.retry;
        let Some(s) = self.sessions.get(&txn) else {
            return out;
        };
        let allowed = match (s.txn.phase, retry) {
            (Phase::Tentative, RetryPolicy::All) => true,
            (Phase::Reflecting, RetryPolicy::All | RetryPolicy::AgreementOnly) => s.role == Role::Initiator,
            _ => false,
        };
        let deadline = s.txn.deadline;
        if allowed {
            if let Some(f) = self.retransmit_now(txn) {
                out.events.push(LinkEvent::Retransmit { txn, tag: f.tag });
                out.frames.push(f);
            }
        }
        let s = self.sessions.get_mut(&txn).expect("present");
        let next = now + interval;
        s.next_retry = (allowed && next < deadline).then_some(next);
        out
    }

    fn accept_tik(&mut self, frame: &Frame, now: u64) -> Reaction {
        let mut out = Reaction::default();
        let id = frame.txn_id;
        let d = digest(&frame.payload);
        let checkpoint = self.app.checkpoint();
        self.app.stage(id, d);
        let txn = Transaction {
            id,
            initiator: frame.src,
            responder: self.node,
            payload: frame.payload.clone(),
            digest: d,
            phase: Phase::Reflecting,
            start: now,
            deadline: now + self.config.horizon,
            checkpoint,
        };
        let tyk = self.build(frame.src, AgreementTag::Tyk, id, Some(d), None, Vec::new(), 0);
        out.events.push(LinkEvent::PhaseChange {
            txn: id,
            from: Phase::Idle,
            to: Phase::Reflecting,
        });
        out.frames.push(tyk.clone());
        self.sessions.insert(
            id,
            Session {
                txn,
                role: Role::Responder,
                last_request: None,
                last_response: Some(tyk),
                next_retry: None,
                relay_retried: false,
                reflected_ok: false,
                confirmed: false,
                divergence_flagged: false,
            },
        );
        out
    }

    fn reemit_response(&mut self, txn: TxnId) -> Reaction {
        let mut out = Reaction::default();
        if let Some(f) = self.sessions.get(&txn).and_then(|s| s.last_response.clone()) {
            let f = self.rebuild(&f);
            self.sessions.get_mut(&txn).expect("present").last_response = Some(f.clone());
            out.frames.push(f);
        }
        out
    }

    fn responder_on_verdict(&mut self, frame: &Frame) -> Reaction {
        let id = frame.txn_id;
        let s = &self.sessions[&id];
        if s.txn.phase.is_terminal() {
            return self.reemit_response(id);
        }
        let mut out = Reaction::default();
        let matches = frame.reflection_digest == Some(s.txn.digest);
        match frame.verdict {
            Some(Verdict::Commit) if matches => {
                let (peer, d, bits) = (s.txn.initiator, s.txn.digest, s.txn.payload.len() as u64 * 8);
                let s = self.sessions.get_mut(&id).expect("present");
                s.confirmed = true;
                s.txn.phase = Phase::Agreed;
                s.next_retry = None;
                self.app.commit(id);
                out.events.push(LinkEvent::PhaseChange {
                    txn: id,
                    from: Phase::Reflecting,
                    to: Phase::Agreed,
                });
                out.events.push(LinkEvent::Committed {
                    txn: id,
                    role: Role::Responder,
                    digest: d,
                    bits,
                });
                let ack = self.build(peer, AgreementTag::Tyk2, id, Some(d), Some(Verdict::Commit), Vec::new(), 0);
                self.sessions.get_mut(&id).expect("present").last_response = Some(ack.clone());
                out.frames.push(ack);
            }
            Some(Verdict::Commit) => self.abort(id, AbortReason::ConfirmationMismatch, &mut out),
            _ => self.abort(id, AbortReason::PeerAborted, &mut out),
        }
        out
    }

    fn initiator_on_reflection(&mut self, frame: &Frame, now: u64) -> Reaction {
        let id = frame.txn_id;
        let s = &self.sessions[&id];
        match s.txn.phase {
            Phase::Tentative => {}
            Phase::Reflecting | Phase::Agreed => {
                // duplicate reflection: answer with the verdict already sent
                let mut out = Reaction::default();
                if let Some(f) = s.last_request.clone() {
                    let f = self.rebuild(&f);
                    out.frames.push(f);
                }
                return out;
            }
            _ => {
                let mut out = Reaction::default();
                let (peer, d) = (s.txn.responder, s.txn.digest);
                let f = self.build(peer, AgreementTag::Tik2, id, Some(d), Some(Verdict::Abort), Vec::new(), 0);
                out.frames.push(f);
                return out;
            }
        }
        let mut out = Reaction::default();
        let (peer, d) = (s.txn.responder, s.txn.digest);
        if frame.reflection_digest == Some(d) {
            let tik2 = self.build(peer, AgreementTag::Tik2, id, Some(d), Some(Verdict::Commit), Vec::new(), 0);
            let retry = self.config.retry != RetryPolicy::None;
            let interval = self.config.retry_interval();
            let s = self.sessions.get_mut(&id).expect("present");
            s.reflected_ok = true;
            s.txn.phase = Phase::Reflecting;
            s.last_request = Some(tik2.clone());
            s.next_retry = (retry && now + interval < s.txn.deadline).then_some(now + interval);
            out.events.push(LinkEvent::PhaseChange {
                txn: id,
                from: Phase::Tentative,
                to: Phase::Reflecting,
            });
            out.frames.push(tik2);
        } else {
            let tik2 = self.build(peer, AgreementTag::Tik2, id, Some(d), Some(Verdict::Abort), Vec::new(), 0);
            self.sessions.get_mut(&id).expect("present").last_request = Some(tik2.clone());
            self.abort(id, AbortReason::DigestMismatch, &mut out);
            out.frames.push(tik2);
        }
        out
    }

    fn initiator_on_ack(&mut self, frame: &Frame) -> Reaction {
        let id = frame.txn_id;
        let mut out = Reaction::default();
        let s = self.sessions.get_mut(&id).expect("checked by caller");
        match (s.txn.phase, frame.verdict) {
            (Phase::Reflecting, Some(Verdict::Commit)) => {
                s.txn.phase = Phase::Agreed;
                s.next_retry = None;
                let (d, bits) = (s.txn.digest, s.txn.payload.len() as u64 * 8);
                self.app.commit(id);
                out.events.push(LinkEvent::PhaseChange {
                    txn: id,
                    from: Phase::Reflecting,
                    to: Phase::Agreed,
                });
                out.events.push(LinkEvent::Committed {
                    txn: id,
                    role: Role::Initiator,
                    digest: d,
                    bits,
                });
            }
            (Phase::Tentative | Phase::Reflecting, Some(Verdict::Abort)) => {
                self.abort(id, AbortReason::PeerAborted, &mut out);
            }
            (Phase::Aborted, Some(Verdict::Commit)) => {
                if !s.divergence_flagged {
                    s.divergence_flagged = true;
                    out.events.push(LinkEvent::DivergenceDetected { txn: id });
                }
            }
            (Phase::Tentative, Some(Verdict::Commit)) => {
                out.events.push(LinkEvent::Rejected {
                    txn: id,
                    reason: "commit acknowledgment before reflection".into(),
                });
            }
            _ => {}
        }
        out
    }

    fn abort(&mut self, txn: TxnId, reason: AbortReason, out: &mut Reaction) {
        let s = self.sessions.get_mut(&txn).expect("abort of a known transaction");
        let from = s.txn.phase;
        s.txn.phase = Phase::Aborted;
        s.next_retry = None;
        let (role, bits, checkpoint, peer, d) = (
            s.role,
            s.txn.payload.len() as u64 * 8,
            s.txn.checkpoint,
            match s.role {
                Role::Initiator => s.txn.responder,
                Role::Responder => s.txn.initiator,
            },
            s.txn.digest,
        );
        self.app.rollback(txn);
        out.events.push(LinkEvent::PhaseChange {
            txn,
            from,
            to: Phase::Aborted,
        });
        out.events.push(LinkEvent::Aborted {
            txn,
            role,
            reason,
            bits,
        });
        out.events.push(LinkEvent::RolledBack { txn, checkpoint });
        if role == Role::Responder {
            let ack = self.build(peer, AgreementTag::Tyk2, txn, Some(d), Some(Verdict::Abort), Vec::new(), 0);
            self.sessions.get_mut(&txn).expect("present").last_response = Some(ack.clone());
            // Only tell the initiator when it asked (a TIK2 is what reaches here).
            if reason != AbortReason::Horizon {
                out.frames.push(ack);
            }
        }
    }

    fn peer_of(&self, s: &Session) -> NodeId {
        match s.role {
            Role::Initiator => s.txn.responder,
            Role::Responder => s.txn.initiator,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        &mut self,
        dst: NodeId,
        tag: AgreementTag,
        txn: TxnId,
        reflection_digest: Option<Digest>,
        verdict: Option<Verdict>,
        payload: Vec<u8>,
        retransmit_count: u32,
    ) -> Frame {
        let seq = self.link_seq.entry(dst).or_insert(0);
        *seq += 1;
        Frame {
            src: self.node,
            dst,
            seq: *seq,
            retransmit_count,
            reflection_digest,
            tag,
            verdict,
            txn_id: txn,
            payload,
        }
    }

    fn rebuild(&mut self, f: &Frame) -> Frame {
        let mut g = self.build(
            f.dst,
            f.tag,
            f.txn_id,
            f.reflection_digest,
            f.verdict,
            f.payload.clone(),
            f.retransmit_count + 1,
        );
        g.src = f.src;
        g
    }
}
