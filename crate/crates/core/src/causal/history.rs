use super::{dominates, join_into, CausalError, CausalRelation, Direction, EventId, TensorClock};
use crate::ids::{ExchangeId, NodeId};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};

/// Which half of an exchange an event is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Initiator,
    Responder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExchangeStatus {
    Open,
    Committed(Direction),
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeRecord {
    pub id: ExchangeId,
    pub initiator: EventId,
    pub responder: EventId,
    pub status: ExchangeStatus,
}

/// One node of the event graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub id: EventId,
    /// Direct happened-before predecessors.
    pub preds: Vec<EventId>,
    pub exchange: Option<(ExchangeId, Role)>,
    /// Vector timestamp including this event.
    stamp: BTreeMap<NodeId, u64>,
}

impl EventRecord {
    pub fn stamp(&self) -> &BTreeMap<NodeId, u64> {
        &self.stamp
    }
}

/// Event graph built from per-node tensor clocks.
///
/// Events are kept in creation order. Every edge points from an earlier to a
/// later event, except the edge a commit adds between the two halves of an
/// exchange, which were created together; the graph therefore stays acyclic.
#[derive(Clone, Debug, Default)]
pub struct History {
    events: Vec<EventRecord>,
    index: HashMap<EventId, usize>,
    clocks: BTreeMap<NodeId, TensorClock>,
    last: BTreeMap<NodeId, EventId>,
    /// Extra predecessors for a node's next event (from a commit join).
    pending: BTreeMap<NodeId, BTreeSet<EventId>>,
    exchanges: BTreeMap<ExchangeId, ExchangeRecord>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn event(&self, id: EventId) -> Option<&EventRecord> {
        self.index.get(&id).map(|&i| &self.events[i])
    }

    pub fn exchanges(&self) -> impl Iterator<Item = &ExchangeRecord> {
        self.exchanges.values()
    }

    pub fn exchange(&self, xid: ExchangeId) -> Option<&ExchangeRecord> {
        self.exchanges.get(&xid)
    }

    pub fn clock(&self, node: NodeId) -> Option<&TensorClock> {
        self.clocks.get(&node)
    }

    /// A purely local event on `node`.
    pub fn local(&mut self, node: NodeId) -> EventId {
        self.create(node, Vec::new(), None)
    }

    /// A send event; pass the returned id to [`History::receive`].
    pub fn send(&mut self, node: NodeId) -> EventId {
        self.local(node)
    }

    pub fn receive(&mut self, node: NodeId, from: EventId) -> Result<EventId, CausalError> {
        if !self.index.contains_key(&from) {
            return Err(CausalError::UnknownEvent(from));
        }
        Ok(self.create(node, vec![from], None))
    }

    /// Open `xid` between two nodes, creating its paired endpoint events.
    pub fn open_exchange(
        &mut self,
        initiator: NodeId,
        responder: NodeId,
        xid: ExchangeId,
    ) -> Result<(EventId, EventId), CausalError> {
        if initiator == responder {
            return Err(CausalError::SelfExchange(initiator));
        }
        if self.exchanges.contains_key(&xid) {
            return Err(CausalError::ExchangeReused(xid));
        }
        {
            let (a, b) = self.clock_pair(initiator, responder);
            TensorClock::open_exchange(a, b, xid)?;
        }
        let ea = self.create(initiator, Vec::new(), Some((xid, Role::Initiator)));
        let eb = self.create(responder, Vec::new(), Some((xid, Role::Responder)));
        self.exchanges.insert(
            xid,
            ExchangeRecord {
                id: xid,
                initiator: ea,
                responder: eb,
                status: ExchangeStatus::Open,
            },
        );
        Ok((ea, eb))
    }

    /// Commit `xid`, ordering its halves along `direction`.
    pub fn collapse_exchange(&mut self, xid: ExchangeId, direction: Direction) -> Result<(), CausalError> {
        let rec = match self.exchanges.get(&xid) {
            Some(r) if r.status == ExchangeStatus::Open => r.clone(),
            _ => return Err(CausalError::ExchangeNotOpen(xid)),
        };
        let (ni, nr) = (rec.initiator.node, rec.responder.node);
        {
            let (a, b) = self.clock_pair(ni, nr);
            TensorClock::collapse_exchange(a, b, xid, direction)?;
        }
        let (src, dst) = match direction {
            Direction::InitiatorToResponder => (rec.initiator, rec.responder),
            Direction::ResponderToInitiator => (rec.responder, rec.initiator),
        };
        let src_stamp = self.events[self.index[&src]].stamp.clone();
        let dst_idx = self.index[&dst];
        self.events[dst_idx].preds.push(src);
        // Everything at or downstream of `dst` now also follows `src`. Such
        // events were created no earlier than `dst`.
        for ev in &mut self.events[dst_idx..] {
            if ev.stamp.get(&dst.node).copied().unwrap_or(0) >= dst.seq {
                join_into(&mut ev.stamp, &src_stamp);
            }
        }
        // Both endpoints leave the exchange having heard from each other,
        // including whatever each had heard but not yet recorded.
        let heard = |h: &Self, n: NodeId| -> BTreeSet<EventId> {
            let mut s = h.pending.get(&n).cloned().unwrap_or_default();
            s.extend(h.last.get(&n).copied());
            s
        };
        let (from_r, from_i) = (heard(self, nr), heard(self, ni));
        self.pending.entry(ni).or_default().extend(from_r);
        self.pending.entry(nr).or_default().extend(from_i);
        self.exchanges.get_mut(&xid).expect("checked above").status = ExchangeStatus::Committed(direction);
        Ok(())
    }

    /// Abort `xid`. Its halves stay unordered and resolve to concurrent.
    pub fn abort_exchange(&mut self, xid: ExchangeId) -> Result<(), CausalError> {
        let rec = match self.exchanges.get(&xid) {
            Some(r) if r.status == ExchangeStatus::Open => r.clone(),
            _ => return Err(CausalError::ExchangeNotOpen(xid)),
        };
        {
            let (a, b) = self.clock_pair(rec.initiator.node, rec.responder.node);
            TensorClock::abort_exchange(a, b, xid)?;
        }
        self.exchanges.get_mut(&xid).expect("checked above").status = ExchangeStatus::Aborted;
        Ok(())
    }

    /// The four-valued relation between two distinct recorded events.
    pub fn compare(&self, a: EventId, b: EventId) -> Result<CausalRelation, CausalError> {
        if a == b {
            return Err(CausalError::SameEvent(a));
        }
        let ra = self.event(a).ok_or(CausalError::UnknownEvent(a))?;
        let rb = self.event(b).ok_or(CausalError::UnknownEvent(b))?;
        if let (Some((xa, _)), Some((xb, _))) = (ra.exchange, rb.exchange) {
            if xa == xb && self.exchanges[&xa].status == ExchangeStatus::Open {
                return Ok(CausalRelation::Indefinite);
            }
        }
        if rb.stamp.get(&a.node).copied().unwrap_or(0) >= a.seq {
            Ok(CausalRelation::Before)
        } else if ra.stamp.get(&b.node).copied().unwrap_or(0) >= b.seq {
            Ok(CausalRelation::After)
        } else {
            Ok(CausalRelation::Concurrent)
        }
    }

    /// `true` if `a`'s timestamp is dominated by `b`'s.
    pub fn stamp_le(&self, a: EventId, b: EventId) -> Option<bool> {
        Some(dominates(&self.event(b)?.stamp, &self.event(a)?.stamp))
    }

    fn clock_pair(&mut self, a: NodeId, b: NodeId) -> (&mut TensorClock, &mut TensorClock) {
        self.clocks.entry(a).or_insert_with(|| TensorClock::new(a));
        self.clocks.entry(b).or_insert_with(|| TensorClock::new(b));
        let mut it = self.clocks.iter_mut().filter(|(k, _)| **k == a || **k == b);
        let (k1, c1) = it.next().expect("inserted");
        let (_, c2) = it.next().expect("inserted");
        if *k1 == a {
            (c1, c2)
        } else {
            (c2, c1)
        }
    }

    fn create(&mut self, node: NodeId, extra: Vec<EventId>, exchange: Option<(ExchangeId, Role)>) -> EventId {
        let mut preds: Vec<EventId> = Vec::new();
        if let Some(&prev) = self.last.get(&node) {
            preds.push(prev);
        }
        if let Some(p) = self.pending.remove(&node) {
            preds.extend(p);
        }
        preds.extend(extra);
        preds.sort();
        preds.dedup();

        let clock = self.clocks.entry(node).or_insert_with(|| TensorClock::new(node));
        for p in &preds {
            let i = self.index[p];
            clock.merge(&self.events[i].stamp);
        }
        let id = clock.tick();
        let stamp = clock.vector().clone();
        self.index.insert(id, self.events.len());
        self.events.push(EventRecord {
            id,
            preds,
            exchange,
            stamp,
        });
        self.last.insert(node, id);
        id
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: NodeId = NodeId(0);
    const B: NodeId = NodeId(1);
    const C: NodeId = NodeId(2);

    #[test]
    fn disconnected_events_are_concurrent() {
        let mut h = History::new();
        let a = h.local(A);
        let b = h.local(B);
        assert_eq!(h.compare(a, b).unwrap(), CausalRelation::Concurrent);
    }

    #[test]
    fn message_orders_send_before_receive() {
        let mut h = History::new();
        let s = h.send(A);
        let r = h.receive(B, s).unwrap();
        assert_eq!(h.compare(s, r).unwrap(), CausalRelation::Before);
        assert_eq!(h.compare(r, s).unwrap(), CausalRelation::After);
    }

    #[test]
    fn chain_is_transitive() {
        let mut h = History::new();
        let a = h.send(A);
        let m = h.receive(B, a).unwrap();
        let m2 = h.send(B);
        let b = h.receive(C, m2).unwrap();
        assert_eq!(h.compare(m, b).unwrap(), CausalRelation::Before);
        assert_eq!(h.compare(a, b).unwrap(), CausalRelation::Before);
    }

    #[test]
    fn open_exchange_pair_is_indefinite_until_collapse() {
        let mut h = History::new();
        let (ea, eb) = h.open_exchange(A, B, ExchangeId(7)).unwrap();
        assert_eq!(h.compare(ea, eb).unwrap(), CausalRelation::Indefinite);
        assert_eq!(h.compare(eb, ea).unwrap(), CausalRelation::Indefinite);
        h.collapse_exchange(ExchangeId(7), Direction::InitiatorToResponder).unwrap();
        assert_eq!(h.compare(ea, eb).unwrap(), CausalRelation::Before);
        assert_eq!(h.compare(eb, ea).unwrap(), CausalRelation::After);
    }

    #[test]
    fn collapse_propagates_to_downstream_events() {
        let mut h = History::new();
        let (ea, eb) = h.open_exchange(A, B, ExchangeId(1)).unwrap();
        let later_b = h.send(B);
        let on_c = h.receive(C, later_b).unwrap();
        assert_eq!(h.compare(ea, on_c).unwrap(), CausalRelation::Concurrent);
        h.collapse_exchange(ExchangeId(1), Direction::InitiatorToResponder).unwrap();
        assert_eq!(h.compare(ea, later_b).unwrap(), CausalRelation::Before);
        assert_eq!(h.compare(ea, on_c).unwrap(), CausalRelation::Before);
        assert_eq!(h.compare(eb, on_c).unwrap(), CausalRelation::Before);
    }

    #[test]
    fn abort_resolves_to_concurrent() {
        let mut h = History::new();
        let (ea, eb) = h.open_exchange(A, B, ExchangeId(3)).unwrap();
        h.abort_exchange(ExchangeId(3)).unwrap();
        assert_eq!(h.compare(ea, eb).unwrap(), CausalRelation::Concurrent);
        assert!(h.abort_exchange(ExchangeId(3)).is_err());
    }

    #[test]
    fn responder_to_initiator_direction() {
        let mut h = History::new();
        let (ea, eb) = h.open_exchange(A, B, ExchangeId(2)).unwrap();
        h.collapse_exchange(ExchangeId(2), Direction::ResponderToInitiator).unwrap();
        assert_eq!(h.compare(ea, eb).unwrap(), CausalRelation::After);
    }

    #[test]
    fn commit_joins_both_endpoints() {
        let mut h = History::new();
        let (ea, eb) = h.open_exchange(A, B, ExchangeId(4)).unwrap();
        h.collapse_exchange(ExchangeId(4), Direction::InitiatorToResponder).unwrap();
        let next_a = h.local(A);
        assert_eq!(h.compare(eb, next_a).unwrap(), CausalRelation::Before);
        assert_eq!(h.compare(ea, next_a).unwrap(), CausalRelation::Before);
    }

    #[test]
    fn errors() {
        let mut h = History::new();
        let a = h.local(A);
        assert_eq!(h.compare(a, a), Err(CausalError::SameEvent(a)));
        let ghost = EventId { node: C, seq: 9 };
        assert_eq!(h.compare(a, ghost), Err(CausalError::UnknownEvent(ghost)));
        h.open_exchange(A, B, ExchangeId(1)).unwrap();
        assert_eq!(
            h.open_exchange(B, C, ExchangeId(1)),
            Err(CausalError::ExchangeReused(ExchangeId(1)))
        );
        assert_eq!(
            h.collapse_exchange(ExchangeId(5), Direction::InitiatorToResponder),
            Err(CausalError::ExchangeNotOpen(ExchangeId(5)))
        );
        assert_eq!(h.open_exchange(A, A, ExchangeId(8)), Err(CausalError::SelfExchange(A)));
    }
}
