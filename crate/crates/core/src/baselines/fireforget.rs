use crate::ids::{NodeId, TxnId};
use crate::link::{digest, AgreementTag, Frame};
use crate::netsim::{payload_for, Flow, Net, Reactor};
use crate::trace::{EventKind, TraceEvent};
use std::collections::{BTreeMap, BTreeSet};

/// Completion is signalled the moment the frame leaves the sender.
#[derive(Clone, Debug, Default)]
pub struct FireForget {
    counters: BTreeMap<NodeId, u32>,
    seq: u64,
    /// Per sender: transactions marked complete at send. Never revoked.
    pub complete: BTreeMap<NodeId, BTreeSet<TxnId>>,
    /// Per receiver: transactions actually delivered and applied.
    pub applied: BTreeMap<NodeId, BTreeSet<TxnId>>,
}

impl Reactor for FireForget {
    fn issue(&mut self, net: &mut Net, flow_index: usize, flow: &Flow, i: u32) {
        let slot = net.slot();
        let c = self.counters.entry(flow.from).or_insert(0);
        *c += 1;
        let id = TxnId::new(flow.from, *c);
        let payload = payload_for(net.scenario().seed, flow_index, i, net.scenario().payload_bytes);
        let d = digest(&payload);
        let bits = payload.len() as u64 * 8;
        self.seq += 1;
        let frame = Frame {
            src: flow.from,
            dst: flow.to,
            seq: self.seq,
            retransmit_count: 0,
            reflection_digest: None,
            tag: AgreementTag::Tik,
            verdict: None,
            txn_id: id,
            payload,
        };
        net.emit(
            TraceEvent::new(slot, EventKind::TxnStart)
                .txn(id)
                .at(flow.from)
                .peer(flow.to)
                .bits(bits)
                .digest(d),
        );
        self.complete.entry(flow.from).or_default().insert(id);
        net.emit(
            TraceEvent::new(slot, EventKind::Commit)
                .txn(id)
                .at(flow.from)
                .bits(bits)
                .digest(d)
                .reason("complete at send"),
        );
        net.send_direct(frame);
    }

    fn on_frame(&mut self, net: &mut Net, frame: Frame) {
        self.applied.entry(frame.dst).or_default().insert(frame.txn_id);
        net.emit(
            TraceEvent::new(net.slot(), EventKind::Applied)
                .txn(frame.txn_id)
                .at(frame.dst)
                .bits(frame.payload_bits())
                .digest(digest(&frame.payload)),
        );
    }
}
