//! Exhaustive exploration of a single exchange under a bounded adversary.
//!
//! The network is a multiset of in-flight frames and any of them may be
//! delivered next, so every reordering is covered. The adversary may also
//! drop, duplicate or corrupt frames a bounded number of times. Timers are
//! abstracted: the initiator may retransmit and either endpoint's horizon may
//! expire at any point while it is non-terminal.

use super::{AgreementTag, Endpoint, LinkConfig, Phase, RetryPolicy};
use crate::ids::{NodeId, TxnId};
use crate::link::Frame;
use std::collections::{HashSet, VecDeque};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bounds {
    /// Losses allowed per agreement tag.
    pub loss: u8,
    /// Duplications allowed per agreement tag.
    pub duplicate: u8,
    /// Single-bit corruptions allowed over the whole run.
    pub corrupt: u8,
    /// Initiator retransmissions allowed over the whole run.
    pub retransmits: u8,
    /// Whether horizon expiries are explored.
    pub expiry: bool,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            loss: 1,
            duplicate: 1,
            corrupt: 1,
            retransmits: 2,
            expiry: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    /// Both sides agreed but on different payloads.
    UnequalAgreement,
    /// An endpoint agreed without the verification its role requires.
    SilentSuccess(NodeId),
    /// The initiator agreed while the responder did not.
    InitiatorAheadOfResponder,
    /// The responder agreed, the initiator aborted, and the initiator's abort
    /// was not caused by its own horizon (so it could not know).
    UndetectedDivergence,
    /// An aborted endpoint's committed state differs from its checkpoint.
    RollbackMismatch(NodeId),
}

#[derive(Clone, Debug, Default)]
pub struct ExploreReport {
    pub states: usize,
    pub transitions: usize,
    pub both_agreed: usize,
    pub both_aborted: usize,
    /// States where the responder agreed and the initiator aborted.
    pub divergent: usize,
    pub violations: Vec<(Violation, String)>,
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct State {
    a: Endpoint,
    b: Endpoint,
    net: Vec<Frame>,
    loss: [u8; 4],
    dup: [u8; 4],
    corrupt: u8,
    retransmits: u8,
    a_expired: bool,
}

impl State {
    fn normalize(&mut self) {
        self.a.normalize();
        self.b.normalize();
        for f in &mut self.net {
            f.seq = 0;
            f.retransmit_count = 0;
        }
        self.net.sort();
    }
}

const A: NodeId = NodeId(0);
const B: NodeId = NodeId(1);
const NOW: u64 = 0;
const LATE: u64 = 1;

/// Explore every interleaving of one TIK/TYK/TIK2/TYK2 exchange.
pub fn explore(bounds: Bounds) -> ExploreReport {
    let cfg = LinkConfig {
        horizon: LATE,
        retry: RetryPolicy::All,
    };
    let mut a = Endpoint::new(A, [B], cfg).expect("nonzero horizon");
    let b = Endpoint::new(B, [A], cfg).expect("nonzero horizon");
    let (txn, tik) = a.initiate(B, b"payload".to_vec(), NOW).expect("peer exists");
    let mut init = State {
        a,
        b,
        net: vec![tik],
        loss: [bounds.loss; 4],
        dup: [bounds.duplicate; 4],
        corrupt: bounds.corrupt,
        retransmits: bounds.retransmits,
        a_expired: false,
    };

    init.normalize();
    let mut report = ExploreReport::default();
    let mut seen: HashSet<State> = HashSet::new();
    let mut queue = VecDeque::new();
    seen.insert(init.clone());
    queue.push_back(init);
    while let Some(s) = queue.pop_front() {
        report.states += 1;
        check(&s, txn.id, &mut report);
        for mut next in successors(&s, txn.id, bounds) {
            report.transitions += 1;
            next.normalize();
            if seen.insert(next.clone()) {
                queue.push_back(next);
            }
        }
    }
    report
}

fn check(s: &State, txn: TxnId, report: &mut ExploreReport) {
    let ia = s.a.transaction(txn).expect("initiator session");
    let rb = s.b.transaction(txn);
    let pa = ia.phase;
    let pb = rb.map_or(Phase::Idle, |t| t.phase);
    let mut flag = |v: Violation| {
        report
            .violations
            .push((v, format!("initiator {pa}, responder {pb}, {} in flight", s.net.len())))
    };
    if pa == Phase::Agreed && !s.a.reflected(txn) {
        flag(Violation::SilentSuccess(A));
    }
    if pb == Phase::Agreed && !s.b.confirmed(txn) {
        flag(Violation::SilentSuccess(B));
    }
    if pa == Phase::Agreed && pb != Phase::Agreed {
        flag(Violation::InitiatorAheadOfResponder);
    }
    if pa == Phase::Agreed && pb == Phase::Agreed && rb.map(|t| t.digest) != Some(ia.digest) {
        flag(Violation::UnequalAgreement);
    }
    if pb == Phase::Agreed && pa == Phase::Aborted && !s.a_expired {
        flag(Violation::UndetectedDivergence);
    }
    if pa == Phase::Aborted && s.a.app().state() != ia.checkpoint.state {
        flag(Violation::RollbackMismatch(A));
    }
    if let Some(t) = rb {
        if pb == Phase::Aborted && s.b.app().state() != t.checkpoint.state {
            flag(Violation::RollbackMismatch(B));
        }
    }
    match (pa, pb) {
        (Phase::Agreed, Phase::Agreed) => report.both_agreed += 1,
        (Phase::Aborted, Phase::Aborted) => report.both_aborted += 1,
        (Phase::Aborted, Phase::Agreed) => report.divergent += 1,
        _ => {}
    }
}

fn successors(s: &State, txn: TxnId, bounds: Bounds) -> Vec<State> {
    let mut out = Vec::new();
    for (i, f) in s.net.iter().enumerate() {
        if i > 0 && s.net[i - 1] == *f {
            continue;
        }
        let t = f.tag.index();
        {
            let mut n = s.clone();
            let f = n.net.remove(i);
            deliver(&mut n, &f);
            out.push(n);
        }
        if s.loss[t] > 0 {
            let mut n = s.clone();
            n.loss[t] -= 1;
            n.net.remove(i);
            out.push(n);
        }
        if s.dup[t] > 0 {
            let mut n = s.clone();
            n.dup[t] -= 1;
            n.net.push(f.clone());
            out.push(n);
        }
        if s.corrupt > 0 {
            if let Some(g) = corrupted(f) {
                let mut n = s.clone();
                n.corrupt -= 1;
                n.net[i] = g;
                out.push(n);
            }
        }
    }
    if s.retransmits > 0 {
        let mut n = s.clone();
        if let Some(f) = n.a.retransmit_now(txn) {
            n.retransmits -= 1;
            n.net.push(f);
            out.push(n);
        }
    }
    if bounds.expiry {
        if s.a.transaction(txn).is_some_and(|t| !t.phase.is_terminal()) {
            let mut n = s.clone();
            let r = n.a.on_horizon_expiry(txn, LATE, false);
            n.net.extend(r.frames);
            n.a_expired = true;
            out.push(n);
        }
        if s.b.transaction(txn).is_some_and(|t| !t.phase.is_terminal()) {
            let mut n = s.clone();
            let r = n.b.on_horizon_expiry(txn, LATE, false);
            n.net.extend(r.frames);
            out.push(n);
        }
    }
    out
}

fn deliver(s: &mut State, f: &Frame) {
    let r = if f.dst == A {
        s.a.on_frame(f, NOW)
    } else {
        s.b.on_frame(f, NOW)
    };
    s.net.extend(r.frames);
}

/// Flip the lowest bit of the frame's payload or reflected digest.
fn corrupted(f: &Frame) -> Option<Frame> {
    let mut g = f.clone();
    match f.tag {
        AgreementTag::Tik => g.payload[0] ^= 1,
        _ => g.reflection_digest = Some(super::Digest(f.reflection_digest?.0 ^ 1)),
    }
    Some(g)
}
