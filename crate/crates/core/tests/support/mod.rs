#![allow(dead_code)]

use leibniz_link::causal::{CausalRelation, Direction, EventId, ExchangeStatus, History};
use leibniz_link::ids::{ExchangeId, NodeId};
use leibniz_link::netsim::Scenario;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

/// Ground truth for the four-valued relation: reachability over the recorded
/// predecessor edges, plus the open-exchange registry.
pub fn oracle_relation(h: &History, a: EventId, b: EventId) -> CausalRelation {
    let ra = h.event(a).expect("known event");
    let rb = h.event(b).expect("known event");
    if let (Some((xa, _)), Some((xb, _))) = (ra.exchange, rb.exchange) {
        if xa == xb && h.exchange(xa).map(|x| x.status) == Some(ExchangeStatus::Open) {
            return CausalRelation::Indefinite;
        }
    }
    let succ = successors(h);
    if reaches(&succ, a, b) {
        CausalRelation::Before
    } else if reaches(&succ, b, a) {
        CausalRelation::After
    } else {
        CausalRelation::Concurrent
    }
}

pub fn successors(h: &History) -> BTreeMap<EventId, Vec<EventId>> {
    let mut succ: BTreeMap<EventId, Vec<EventId>> = BTreeMap::new();
    for e in h.events() {
        succ.entry(e.id).or_default();
        for p in &e.preds {
            succ.entry(*p).or_default().push(e.id);
        }
    }
    succ
}

pub fn reaches(succ: &BTreeMap<EventId, Vec<EventId>>, from: EventId, to: EventId) -> bool {
    let mut seen = BTreeSet::from([from]);
    let mut queue = VecDeque::from([from]);
    while let Some(x) = queue.pop_front() {
        for &y in &succ[&x] {
            if y == to {
                return true;
            }
            if seen.insert(y) {
                queue.push_back(y);
            }
        }
    }
    false
}

/// The exchange id shared by two events if they are the halves of one exchange.
pub fn paired_exchange(h: &History, a: EventId, b: EventId) -> Option<ExchangeId> {
    match (h.event(a)?.exchange, h.event(b)?.exchange) {
        (Some((xa, _)), Some((xb, _))) if xa == xb => Some(xa),
        _ => None,
    }
}

/// A seeded random history of at most `max_events` events and
/// `max_exchanges` exchanges over 2 to 5 nodes.
pub fn random_history(seed: u64, max_events: usize, max_exchanges: usize) -> History {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = rng.gen_range(2..=5u32);
    let target = rng.gen_range(2..=max_events);
    let mut h = History::new();
    let mut sends: Vec<EventId> = Vec::new();
    let mut open: Vec<ExchangeId> = Vec::new();
    let mut next_xid = 1u64;
    while h.len() < target {
        let n = NodeId(rng.gen_range(0..nodes));
        match rng.gen_range(0..6) {
            0 => {
                h.local(n);
            }
            1 => sends.push(h.send(n)),
            2 if !sends.is_empty() => {
                let from = sends[rng.gen_range(0..sends.len())];
                if from.node != n {
                    h.receive(n, from).expect("send was recorded");
                }
            }
            3 if (next_xid as usize) <= max_exchanges && h.len() + 2 <= target => {
                let mut m = NodeId(rng.gen_range(0..nodes));
                if m == n {
                    m = NodeId((n.0 + 1) % nodes);
                }
                let xid = ExchangeId(next_xid);
                next_xid += 1;
                h.open_exchange(n, m, xid).expect("fresh exchange");
                open.push(xid);
            }
            4 if !open.is_empty() => {
                let xid = open.swap_remove(rng.gen_range(0..open.len()));
                let dir = if rng.gen_bool(0.5) {
                    Direction::InitiatorToResponder
                } else {
                    Direction::ResponderToInitiator
                };
                h.collapse_exchange(xid, dir).expect("exchange open");
            }
            5 if !open.is_empty() => {
                let xid = open.swap_remove(rng.gen_range(0..open.len()));
                h.abort_exchange(xid).expect("exchange open");
            }
            _ => {}
        }
    }
    h
}

/// Mismatches between `compare` and the oracle over all distinct pairs.
pub fn mismatches(h: &History) -> Vec<(EventId, EventId, CausalRelation, CausalRelation)> {
    let ids: Vec<EventId> = h.events().iter().map(|e| e.id).collect();
    let succ = successors(h);
    let mut reach: BTreeMap<EventId, BTreeSet<EventId>> = BTreeMap::new();
    for &a in &ids {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([a]);
        while let Some(x) = queue.pop_front() {
            for &y in &succ[&x] {
                if seen.insert(y) {
                    queue.push_back(y);
                }
            }
        }
        reach.insert(a, seen);
    }
    let mut out = Vec::new();
    for &a in &ids {
        for &b in &ids {
            if a == b {
                continue;
            }
            let want = match paired_exchange(h, a, b) {
                Some(x) if h.exchange(x).map(|r| r.status) == Some(ExchangeStatus::Open) => CausalRelation::Indefinite,
                _ if reach[&a].contains(&b) => CausalRelation::Before,
                _ if reach[&b].contains(&a) => CausalRelation::After,
                _ => CausalRelation::Concurrent,
            };
            let got = h.compare(a, b).expect("distinct known events");
            if got != want {
                out.push((a, b, got, want));
            }
        }
    }
    out
}

pub fn scenario(toml: &str) -> Scenario {
    Scenario::from_toml_str(toml).expect("test scenario is valid")
}

/// Triangle scenario with `count` exchanges from `from` to `to`.
pub fn triangle(from: &str, to: &str, count: u32, extra_link: &str, extra_workload: &str) -> Scenario {
    scenario(&format!(
        "name = \"t\"\nprotocol = \"oae\"\nseed = 1\nduration = {}\n[topology]\nkind = \"triangle\"\n[link]\n{extra_link}\n[workload]\nhorizon = 12\n{extra_workload}\n[[workload.flows]]\nfrom = \"{from}\"\nto = \"{to}\"\ncount = {count}\ninterval = 5\n",
        count as u64 * 5 + 10
    ))
}
