//! Slotted event loop shared by every protocol.

use super::routing::relay_route;
use super::scenario::{Flow, Scenario};
use super::topology::Topology;
use crate::ids::{NodeId, TxnId};
use crate::link::{digest, AgreementTag, Frame};
use crate::trace::{EventKind, TraceEvent};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Clone, Debug)]
struct InFlight {
    frame: Frame,
    path: Vec<NodeId>,
    /// Index in `path` of the hop's sending node.
    hop: usize,
    sent: u64,
    draw_seq: u64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Draw {
    Loss = 1,
    Corrupt = 2,
}

/// The network as seen by a protocol reactor: routing, delay, faults and
/// the trace.
pub struct Net {
    topo: Topology,
    scenario: Scenario,
    slot: u64,
    queue: BTreeMap<(u64, u64), InFlight>,
    order: u64,
    draws: BTreeMap<((NodeId, NodeId), u64), u64>,
    relayed: BTreeSet<TxnId>,
    trace: Vec<TraceEvent>,
}

impl Net {
    fn new(scenario: &Scenario, topo: Topology) -> Self {
        Net {
            topo,
            scenario: scenario.clone(),
            slot: 0,
            queue: BTreeMap::new(),
            order: 0,
            draws: BTreeMap::new(),
            relayed: BTreeSet::new(),
            trace: Vec::new(),
        }
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn emit(&mut self, e: TraceEvent) {
        self.trace.push(e);
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    /// The link is up at `slot`.
    pub fn live_at(&self, a: NodeId, b: NodeId, slot: u64) -> bool {
        self.topo.is_link(a, b) && !self.scenario.link.partitions.iter().any(|p| p.covers(a, b, slot))
    }

    pub fn live(&self, a: NodeId, b: NodeId) -> bool {
        self.live_at(a, b, self.slot)
    }

    /// Path a frame from `src` to `dst` would take now.
    pub fn route(&self, src: NodeId, dst: NodeId) -> Option<Vec<NodeId>> {
        relay_route(&self.topo, &|a, b| self.live(a, b), src, dst)
    }

    /// Whether a relay retry makes sense: the direct link is down and some
    /// other live path exists.
    pub fn relay_available(&self, src: NodeId, dst: NodeId) -> bool {
        self.scenario.relay && !self.live(src, dst) && self.route(src, dst).is_some()
    }

    /// Send along the relay route when relaying is enabled, else direct.
    pub fn send(&mut self, frame: Frame) {
        let direct = vec![frame.src, frame.dst];
        let path = if self.scenario.relay {
            self.route(frame.src, frame.dst).unwrap_or(direct)
        } else {
            direct
        };
        self.send_path(frame, path);
    }

    /// Send over the direct link only.
    pub fn send_direct(&mut self, frame: Frame) {
        let path = vec![frame.src, frame.dst];
        self.send_path(frame, path);
    }

    fn send_path(&mut self, frame: Frame, path: Vec<NodeId>) {
        if path.len() > 2 && self.relayed.insert(frame.txn_id) {
            let e = TraceEvent::new(self.slot, EventKind::RelayUsed)
                .txn(frame.txn_id)
                .at(path[1]);
            self.emit(e);
        }
        self.put_on_hop(InFlight {
            frame,
            path,
            hop: 0,
            sent: 0,
            draw_seq: 0,
        });
    }

    fn put_on_hop(&mut self, mut f: InFlight) {
        let (from, to) = (f.path[f.hop], f.path[f.hop + 1]);
        let n = self.draws.entry(((from, to), self.slot)).or_insert(0);
        f.draw_seq = *n;
        *n += 1;
        f.sent = self.slot;
        let e = frame_event(self.slot, EventKind::FrameSent, &f.frame, (from, to));
        self.emit(e);
        let at = self.slot + self.scenario.link.delay;
        self.queue.insert((at, self.order), f);
        self.order += 1;
    }

    fn next_arrival(&self) -> Option<u64> {
        self.queue.keys().next().map(|k| k.0)
    }

    /// Take every frame due now off its edge. Relayed frames are forwarded;
    /// frames that reached their destination are returned in arrival order.
    fn deliver_due(&mut self) -> Vec<Frame> {
        let mut out = Vec::new();
        while let Some((&(at, ord), _)) = self.queue.first_key_value() {
            if at > self.slot {
                break;
            }
            let mut f = self.queue.remove(&(at, ord)).expect("present");
            let (from, to) = (f.path[f.hop], f.path[f.hop + 1]);
            let hop = (from, to);
            if !self.live_at(from, to, f.sent) || !self.live(from, to) {
                let e = frame_event(self.slot, EventKind::FrameDropped, &f.frame, hop).reason("partition");
                self.emit(e);
                continue;
            }
            let loss = self.scenario.link.loss;
            if loss > 0.0 && self.draw(Draw::Loss, hop, f.sent, f.draw_seq) < loss {
                let e = frame_event(self.slot, EventKind::FrameDropped, &f.frame, hop).reason("loss");
                self.emit(e);
                continue;
            }
            let corrupt = self.scenario.link.corrupt;
            if corrupt > 0.0 && self.draw(Draw::Corrupt, hop, f.sent, f.draw_seq) < corrupt {
                flip_bit(&mut f.frame);
            }
            let e = frame_event(self.slot, EventKind::FrameDelivered, &f.frame, hop);
            self.emit(e);
            if f.hop + 2 == f.path.len() {
                out.push(f.frame);
            } else {
                f.hop += 1;
                self.put_on_hop(f);
            }
        }
        out
    }

    /// Uniform draw fixed by `(seed, kind, edge, send slot, per-slot sequence)`.
    fn draw(&self, kind: Draw, hop: (NodeId, NodeId), slot: u64, seq: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.scenario.seed);
        let stream = ((hop.0 .0 as u64) << 34) ^ ((hop.1 .0 as u64) << 2) ^ kind as u64;
        rng.set_stream(stream);
        rng.set_word_pos((((slot as u128) << 32) | seq as u128) << 2);
        rng.gen::<f64>()
    }
}

fn flip_bit(f: &mut Frame) {
    if let Some(b) = f.payload.first_mut() {
        *b ^= 1;
    } else if let Some(d) = f.reflection_digest.as_mut() {
        d.0 ^= 1;
    }
}

fn frame_event(slot: u64, kind: EventKind, f: &Frame, hop: (NodeId, NodeId)) -> TraceEvent {
    let mut e = TraceEvent::new(slot, kind).txn(f.txn_id).bits(f.payload_bits());
    e.hop = Some(hop);
    e.src = Some(f.src);
    e.dst = Some(f.dst);
    e.seq = Some(f.seq);
    e.retransmit = Some(f.retransmit_count);
    e.tag = Some(f.tag);
    e.verdict = f.verdict;
    e.digest = match f.tag {
        AgreementTag::Tik => Some(digest(&f.payload)),
        _ => f.reflection_digest,
    };
    e
}

/// Deterministic payload for workload item `i` of flow `flow`.
pub fn payload_for(seed: u64, flow: usize, i: u32, len: u32) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((flow as u64) << 32) | i as u64);
    let mut buf = vec![0u8; len as usize];
    rng.fill(&mut buf[..]);
    buf
}

/// A protocol driven by the event loop.
pub trait Reactor {
    /// Issue item `i` of `flow` (index `flow_index` in the scenario).
    fn issue(&mut self, net: &mut Net, flow_index: usize, flow: &Flow, i: u32);
    /// A frame reached its end-to-end destination.
    fn on_frame(&mut self, net: &mut Net, frame: Frame);
    /// Earliest slot with timer work.
    fn next_timer(&self) -> Option<u64> {
        None
    }
    fn on_timers(&mut self, _net: &mut Net) {}
    /// A partitioned link came back up.
    fn on_heal(&mut self, _net: &mut Net, _a: NodeId, _b: NodeId) {}
    /// The run drained; last chance to emit audit records.
    fn finish(&mut self, _net: &mut Net) {}
}

/// Execute `scenario` with `reactor` and return the trace.
pub fn run_with(scenario: &Scenario, topo: Topology, reactor: &mut dyn Reactor) -> Vec<TraceEvent> {
    let mut net = Net::new(scenario, topo);
    let mut start = TraceEvent::new(0, EventKind::RunStart).reason(scenario.protocol.as_str());
    start.links = Some(net.topo.links());
    net.emit(start);

    let mut boundaries: BTreeSet<u64> = BTreeSet::new();
    for p in &scenario.link.partitions {
        boundaries.insert(p.start);
        if let Some(e) = p.end {
            boundaries.insert(e);
        }
    }
    let mut cursor: Vec<u32> = vec![0; scenario.flows.len()];
    let mut slot = 0;
    let mut last = 0;
    loop {
        net.slot = slot;
        if boundaries.remove(&slot) {
            for p in &scenario.link.partitions {
                if p.start == slot {
                    let e = TraceEvent::new(slot, EventKind::PartitionStart).at(p.a).peer(p.b);
                    net.emit(e);
                }
                if p.end == Some(slot) {
                    let e = TraceEvent::new(slot, EventKind::PartitionEnd).at(p.a).peer(p.b);
                    net.emit(e);
                    if net.live(p.a, p.b) {
                        reactor.on_heal(&mut net, p.a, p.b);
                    }
                }
            }
        }
        for f in net.deliver_due() {
            reactor.on_frame(&mut net, f);
        }
        for (k, flow) in scenario.flows.iter().enumerate() {
            while cursor[k] < flow.count && flow.issue_slot(cursor[k]) == slot {
                reactor.issue(&mut net, k, flow, cursor[k]);
                cursor[k] += 1;
            }
        }
        if reactor.next_timer().is_some_and(|t| t <= slot) {
            reactor.on_timers(&mut net);
        }
        last = last.max(slot);

        let next_issue = scenario
            .flows
            .iter()
            .enumerate()
            .filter(|(k, f)| cursor[*k] < f.count)
            .map(|(k, f)| f.issue_slot(cursor[k]))
            .min();
        let busy = [net.next_arrival(), next_issue, reactor.next_timer()]
            .into_iter()
            .flatten()
            .min();
        let boundary = boundaries.range(slot + 1..).next().copied();
        let next = match (busy, boundary) {
            (Some(b), Some(p)) => b.min(p),
            (Some(b), None) => b,
            (None, Some(p)) if p < scenario.duration => p,
            _ => break,
        };
        slot = next.max(slot + 1);
    }
    net.slot = last;
    reactor.finish(&mut net);
    net.emit(TraceEvent::new(last, EventKind::RunEnd));
    net.trace
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_reproducible_and_local() {
        let s = Scenario::from_toml_str(
            r#"
            duration = 10
            seed = 9
            [topology]
            kind = "triangle"
            [workload]
            horizon = 4
            [[workload.flows]]
            from = "a"
            to = "b"
            "#,
        )
        .unwrap();
        let topo = Topology::build(&s.topology).unwrap();
        let net = Net::new(&s, topo);
        let hop = (NodeId(0), NodeId(1));
        let x = net.draw(Draw::Loss, hop, 5, 0);
        assert_eq!(x, net.draw(Draw::Loss, hop, 5, 0));
        assert_ne!(x, net.draw(Draw::Loss, hop, 5, 1));
        assert_ne!(x, net.draw(Draw::Corrupt, hop, 5, 0));
        assert_ne!(x, net.draw(Draw::Loss, (NodeId(1), NodeId(0)), 5, 0));
    }

    #[test]
    fn payloads_are_deterministic() {
        assert_eq!(payload_for(1, 0, 3, 8), payload_for(1, 0, 3, 8));
        assert_ne!(payload_for(1, 0, 3, 8), payload_for(1, 0, 4, 8));
        assert_eq!(payload_for(1, 0, 3, 8).len(), 8);
    }
}
