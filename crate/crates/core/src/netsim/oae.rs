//! The bilateral protocol as a simulator reactor.

use super::engine::{payload_for, Net, Reactor};
use super::scenario::{Flow, Scenario};
use crate::causal::{Direction, History, Role};
use crate::ids::{NodeId, TxnId};
use crate::link::{Endpoint, LinkConfig, LinkEvent, Phase, Reaction};
use crate::trace::{EventKind, TraceEvent};
use std::collections::BTreeSet;

pub struct OaeReactor {
    endpoints: Vec<Endpoint>,
    history: History,
    flagged: BTreeSet<TxnId>,
    /// Causal bookkeeping errors; always empty unless the reactor is broken.
    pub causal_errors: Vec<String>,
}

impl OaeReactor {
    pub fn new(scenario: &Scenario, net_nodes: impl Iterator<Item = (NodeId, Vec<NodeId>)>) -> Self {
        let cfg = LinkConfig {
            horizon: scenario.horizon,
            retry: scenario.retry,
        };
        let endpoints = net_nodes
            .map(|(n, peers)| Endpoint::new(n, peers, cfg).expect("validated horizon"))
            .collect();
        OaeReactor {
            endpoints,
            history: History::new(),
            flagged: BTreeSet::new(),
            causal_errors: Vec::new(),
        }
    }

    pub fn endpoint(&self, n: NodeId) -> &Endpoint {
        &self.endpoints[n.0 as usize]
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    fn react(&mut self, net: &mut Net, node: NodeId, r: Reaction) {
        let slot = net.slot();
        for ev in r.events {
            let e = match ev {
                LinkEvent::PhaseChange { txn, to, .. } => TraceEvent::new(slot, EventKind::PhaseChange).txn(txn).at(node).phase(to),
                LinkEvent::Committed { txn, role, digest, bits } => {
                    if role == Role::Initiator {
                        if let Err(e) = self.history.collapse_exchange(txn.exchange(), Direction::InitiatorToResponder) {
                            self.causal_errors.push(e.to_string());
                        }
                    }
                    TraceEvent::new(slot, EventKind::Commit).txn(txn).at(node).digest(digest).bits(bits)
                }
                LinkEvent::Aborted { txn, role, reason, bits } => {
                    if role == Role::Initiator {
                        if let Err(e) = self.history.abort_exchange(txn.exchange()) {
                            self.causal_errors.push(e.to_string());
                        }
                    }
                    TraceEvent::new(slot, EventKind::Abort).txn(txn).at(node).bits(bits).reason(reason.as_str())
                }
                LinkEvent::RolledBack { txn, checkpoint } => TraceEvent::new(slot, EventKind::Rollback)
                    .txn(txn)
                    .at(node)
                    .digest(checkpoint.state),
                LinkEvent::DivergenceDetected { txn } => {
                    self.flagged.insert(txn);
                    TraceEvent::new(slot, EventKind::DivergenceDetected).txn(txn).at(node)
                }
                LinkEvent::Rejected { txn, reason } => TraceEvent::new(slot, EventKind::FrameRejected).txn(txn).at(node).reason(reason),
                LinkEvent::Retransmit { .. } | LinkEvent::RelayRetry { .. } => continue,
            };
            net.emit(e);
        }
        for f in r.frames {
            net.send(f);
        }
    }
}

impl Reactor for OaeReactor {
    fn issue(&mut self, net: &mut Net, flow_index: usize, flow: &Flow, i: u32) {
        let slot = net.slot();
        let payload = payload_for(net.scenario().seed, flow_index, i, net.scenario().payload_bytes);
        let ep = &mut self.endpoints[flow.from.0 as usize];
        let (txn, tik) = ep.initiate(flow.to, payload, slot).expect("validated flow");
        if let Err(e) = self.history.open_exchange(flow.from, flow.to, txn.id.exchange()) {
            self.causal_errors.push(e.to_string());
        }
        let e = TraceEvent::new(slot, EventKind::TxnStart)
            .txn(txn.id)
            .at(flow.from)
            .peer(flow.to)
            .bits(tik.payload_bits())
            .digest(txn.digest);
        net.emit(e);
        let e = TraceEvent::new(slot, EventKind::PhaseChange)
            .txn(txn.id)
            .at(flow.from)
            .phase(Phase::Tentative);
        net.emit(e);
        net.send(tik);
    }

    fn on_frame(&mut self, net: &mut Net, frame: crate::link::Frame) {
        let node = frame.dst;
        let r = self.endpoints[node.0 as usize].on_frame(&frame, net.slot());
        self.react(net, node, r);
    }

    fn next_timer(&self) -> Option<u64> {
        self.endpoints.iter().filter_map(Endpoint::next_timer).min()
    }

    fn on_timers(&mut self, net: &mut Net) {
        let slot = net.slot();
        for k in 0..self.endpoints.len() {
            if self.endpoints[k].next_timer().is_some_and(|t| t <= slot) {
                let node = self.endpoints[k].node();
                let r = {
                    let net_ref: &Net = net;
                    self.endpoints[k].poll_timers(slot, &|peer| net_ref.relay_available(node, peer))
                };
                self.react(net, node, r);
            }
        }
    }

    /// Flag every responder-agreed, initiator-aborted exchange the initiator
    /// never heard about.
    fn finish(&mut self, net: &mut Net) {
        let slot = net.slot();
        let mut late = Vec::new();
        for ep in &self.endpoints {
            for (t, role) in ep.transactions() {
                if role != Role::Initiator || t.phase != Phase::Aborted || self.flagged.contains(&t.id) {
                    continue;
                }
                let peer = &self.endpoints[t.responder.0 as usize];
                if peer.transaction(t.id).is_some_and(|r| r.phase == Phase::Agreed) {
                    late.push((t.id, t.initiator));
                }
            }
        }
        for (txn, node) in late {
            self.flagged.insert(txn);
            let e = TraceEvent::new(slot, EventKind::DivergenceDetected)
                .txn(txn)
                .at(node)
                .reason("audit");
            net.emit(e);
        }
    }
}
