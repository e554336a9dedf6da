use crate::causal::TensorClock;
use crate::ids::{NodeId, TxnId};
use crate::link::{digest, AgreementTag, Digest, Frame};
use crate::netsim::{payload_for, Flow, Net, Reactor};
use crate::trace::{EventKind, TraceEvent};
use std::collections::BTreeMap;

/// A timestamped write as stored and gossiped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LwwEntry {
    pub write: TxnId,
    pub key: u32,
    pub ts: i64,
    pub writer: NodeId,
    pub value: Digest,
}

impl LwwEntry {
    fn rank(&self) -> (i64, NodeId) {
        (self.ts, self.writer)
    }

    fn encode(&self, value: &[u8]) -> Vec<u8> {
        let mut b = Vec::with_capacity(24 + value.len());
        b.extend_from_slice(&self.key.to_le_bytes());
        b.extend_from_slice(&self.ts.to_le_bytes());
        b.extend_from_slice(&self.writer.0.to_le_bytes());
        b.extend_from_slice(&self.write.0.to_le_bytes());
        b.extend_from_slice(value);
        b
    }

    fn decode(b: &[u8]) -> Option<(LwwEntry, &[u8])> {
        if b.len() < 24 {
            return None;
        }
        let key = u32::from_le_bytes(b[0..4].try_into().ok()?);
        let ts = i64::from_le_bytes(b[4..12].try_into().ok()?);
        let writer = NodeId(u32::from_le_bytes(b[12..16].try_into().ok()?));
        let write = TxnId(u64::from_le_bytes(b[16..24].try_into().ok()?));
        let value = &b[24..];
        Some((
            LwwEntry {
                write,
                key,
                ts,
                writer,
                value: digest(value),
            },
            value,
        ))
    }
}

#[derive(Clone, Debug)]
pub struct LwwReplica {
    pub store: BTreeMap<u32, LwwEntry>,
    /// Timestamp offset of this replica's local clock, in slots.
    pub skew: i64,
}

impl LwwReplica {
    pub fn new(skew: i64) -> Self {
        LwwReplica {
            store: BTreeMap::new(),
            skew,
        }
    }

    /// Keep the larger `(timestamp, writer)`; return the write that lost, if any.
    pub fn merge(&mut self, incoming: LwwEntry) -> Option<(LwwEntry, LwwEntry)> {
        match self.store.get(&incoming.key).copied() {
            None => {
                self.store.insert(incoming.key, incoming);
                None
            }
            Some(old) if old.write == incoming.write => None,
            Some(old) => {
                if incoming.rank() > old.rank() {
                    self.store.insert(incoming.key, incoming);
                    Some((old, incoming))
                } else {
                    Some((incoming, old))
                }
            }
        }
    }
}

/// Last-writer-wins replication with an omniscient causality auditor.
///
/// Each write is stamped with the writer's vector clock; a replica's clock
/// absorbs the stamp of every write it receives. A merge that discards a
/// write the survivor does not causally follow is a silent loss.
#[derive(Clone, Debug)]
pub struct Lww {
    pub replicas: Vec<LwwReplica>,
    clocks: Vec<TensorClock>,
    stamps: BTreeMap<TxnId, BTreeMap<NodeId, u64>>,
    values: BTreeMap<TxnId, Vec<u8>>,
    counters: BTreeMap<NodeId, u32>,
    seq: u64,
}

impl Lww {
    pub fn new(nodes: usize) -> Self {
        Lww {
            replicas: (0..nodes).map(|_| LwwReplica::new(0)).collect(),
            clocks: (0..nodes as u32).map(|i| TensorClock::new(NodeId(i))).collect(),
            stamps: BTreeMap::new(),
            values: BTreeMap::new(),
            counters: BTreeMap::new(),
            seq: 0,
        }
    }

    fn ensure_skew(&mut self, net: &Net) {
        for (n, &s) in &net.scenario().skew {
            if let Some(r) = self.replicas.get_mut(n.0 as usize) {
                r.skew = s;
            }
        }
    }

    fn apply(&mut self, net: &mut Net, node: NodeId, entry: LwwEntry) {
        let Some((lost, kept)) = self.replicas[node.0 as usize].merge(entry) else {
            return;
        };
        let follows = match (self.stamps.get(&lost.write), self.stamps.get(&kept.write)) {
            (Some(l), Some(k)) => crate::causal::dominates(k, l),
            _ => false,
        };
        if !follows {
            net.emit(
                TraceEvent::new(net.slot(), EventKind::CorruptionDetected)
                    .txn(lost.write)
                    .at(node)
                    .digest(lost.value)
                    .reason(format!("key {} lost to concurrent write {}", lost.key, kept.write)),
            );
        }
    }

    fn gossip(&mut self, net: &mut Net, to: NodeId, entry: LwwEntry) {
        let value = self.values.get(&entry.write).cloned().unwrap_or_default();
        self.seq += 1;
        net.send_direct(Frame {
            src: entry.writer,
            dst: to,
            seq: self.seq,
            retransmit_count: 0,
            reflection_digest: None,
            tag: AgreementTag::Tik,
            verdict: None,
            txn_id: entry.write,
            payload: entry.encode(&value),
        });
    }
}

impl Reactor for Lww {
    fn issue(&mut self, net: &mut Net, flow_index: usize, flow: &Flow, i: u32) {
        self.ensure_skew(net);
        let slot = net.slot();
        let r = flow.from;
        let c = self.counters.entry(r).or_insert(0);
        *c += 1;
        let id = TxnId::new(r, *c);
        self.clocks[r.0 as usize].tick();
        self.stamps.insert(id, self.clocks[r.0 as usize].vector().clone());
        let value = payload_for(net.scenario().seed, flow_index, i, net.scenario().payload_bytes);
        let entry = LwwEntry {
            write: id,
            key: flow.key,
            ts: slot as i64 + self.replicas[r.0 as usize].skew,
            writer: r,
            value: digest(&value),
        };
        let bits = value.len() as u64 * 8;
        self.values.insert(id, value);
        net.emit(
            TraceEvent::new(slot, EventKind::TxnStart)
                .txn(id)
                .at(r)
                .peer(flow.to)
                .bits(bits)
                .digest(entry.value),
        );
        net.emit(
            TraceEvent::new(slot, EventKind::Commit)
                .txn(id)
                .at(r)
                .bits(bits)
                .digest(entry.value)
                .reason(format!("key {} ts {}", entry.key, entry.ts)),
        );
        self.apply(net, r, entry);
        self.gossip(net, flow.to, entry);
    }

    fn on_frame(&mut self, net: &mut Net, frame: Frame) {
        let node = frame.dst;
        let Some((entry, value)) = LwwEntry::decode(&frame.payload) else {
            net.emit(
                TraceEvent::new(net.slot(), EventKind::FrameRejected)
                    .txn(frame.txn_id)
                    .at(node)
                    .reason("undecodable write"),
            );
            return;
        };
        if let Some(stamp) = self.stamps.get(&entry.write).cloned() {
            self.clocks[node.0 as usize].merge(&stamp);
        }
        net.emit(
            TraceEvent::new(net.slot(), EventKind::Applied)
                .txn(entry.write)
                .at(node)
                .bits(value.len() as u64 * 8)
                .digest(entry.value),
        );
        self.apply(net, node, entry);
    }

    /// Anti-entropy: both sides push their whole store across the healed link.
    fn on_heal(&mut self, net: &mut Net, a: NodeId, b: NodeId) {
        for (from, to) in [(a, b), (b, a)] {
            let entries: Vec<LwwEntry> = self.replicas[from.0 as usize].store.values().copied().collect();
            for e in entries {
                self.seq += 1;
                let value = self.values.get(&e.write).cloned().unwrap_or_default();
                net.send_direct(Frame {
                    src: from,
                    dst: to,
                    seq: self.seq,
                    retransmit_count: 0,
                    reflection_digest: None,
                    tag: AgreementTag::Tik,
                    verdict: None,
                    txn_id: e.write,
                    payload: e.encode(&value),
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(w: u64, ts: i64, writer: u32) -> LwwEntry {
        LwwEntry {
            write: TxnId(w),
            key: 0,
            ts,
            writer: NodeId(writer),
            value: Digest(w),
        }
    }

    #[test]
    fn larger_timestamp_wins_and_writer_breaks_ties() {
        let mut r = LwwReplica::new(0);
        assert_eq!(r.merge(entry(1, 5, 0)), None);
        assert_eq!(r.merge(entry(2, 3, 1)), Some((entry(2, 3, 1), entry(1, 5, 0))));
        assert_eq!(r.merge(entry(3, 5, 1)), Some((entry(1, 5, 0), entry(3, 5, 1))));
        assert_eq!(r.store[&0].write, TxnId(3));
        assert_eq!(r.merge(entry(3, 5, 1)), None);
    }

    #[test]
    fn encoding_round_trips() {
        let e = LwwEntry {
            write: TxnId::new(NodeId(2), 7),
            key: 9,
            ts: -4,
            writer: NodeId(2),
            value: digest(b"abc"),
        };
        let wire = e.encode(b"abc");
        let (d, v) = LwwEntry::decode(&wire).unwrap();
        assert_eq!((d, v), (e, &b"abc"[..]));
    }
}
