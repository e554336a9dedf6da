//! Four-valued causal algebra.
//!
//! A 2-bit causal encoding has four cells. Lamport's happened-before relation
//! and vector clocks use three of them (`01`, `10`, `00`); the fourth (`11`)
//! marks two events coupled by a bilateral exchange that has not yet committed,
//! so neither is ordered before the other.
//!
//! [`TensorClock`] is a vector clock extended with a registry of open
//! exchanges. [`History`] records the event graph produced by a set of clocks
//! and answers [`History::compare`] queries.

mod history;

pub use history::{EventRecord, ExchangeRecord, ExchangeStatus, History, Role};

use crate::ids::{ExchangeId, NodeId};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

/// Relation between an ordered pair of distinct events.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CausalRelation {
    /// `a -> b`, encoding `01`.
    Before,
    /// `b -> a`, encoding `10`.
    After,
    /// `a || b`, encoding `00`.
    Concurrent,
    /// `a <-> b`, encoding `11`.
    Indefinite,
}

impl CausalRelation {
    pub const ALL: [CausalRelation; 4] = [
        CausalRelation::Before,
        CausalRelation::After,
        CausalRelation::Concurrent,
        CausalRelation::Indefinite,
    ];

    /// The 2-bit cell of this relation.
    pub fn bits(self) -> u8 {
        match self {
            CausalRelation::Before => 0b01,
            CausalRelation::After => 0b10,
            CausalRelation::Concurrent => 0b00,
            CausalRelation::Indefinite => 0b11,
        }
    }

    pub fn from_bits(bits: u8) -> Option<Self> {
        match bits {
            0b01 => Some(CausalRelation::Before),
            0b10 => Some(CausalRelation::After),
            0b00 => Some(CausalRelation::Concurrent),
            0b11 => Some(CausalRelation::Indefinite),
            _ => None,
        }
    }

    /// The relation seen from the other event of the pair.
    pub fn converse(self) -> Self {
        match self {
            CausalRelation::Before => CausalRelation::After,
            CausalRelation::After => CausalRelation::Before,
            other => other,
        }
    }
}

impl fmt::Display for CausalRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CausalRelation::Before => "before",
            CausalRelation::After => "after",
            CausalRelation::Concurrent => "concurrent",
            CausalRelation::Indefinite => "indefinite",
        };
        f.write_str(s)
    }
}

/// A local event: `seq` is the owner's counter after the tick that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventId {
    pub node: NodeId,
    pub seq: u64,
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.node, self.seq)
    }
}

/// Which way causality flows when an exchange commits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    InitiatorToResponder,
    ResponderToInitiator,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CausalError {
    #[error("exchange {0} was already used in this run")]
    ExchangeReused(ExchangeId),
    #[error("exchange {0} is not open")]
    ExchangeNotOpen(ExchangeId),
    #[error("an exchange needs two distinct endpoints, got {0} twice")]
    SelfExchange(NodeId),
    #[error("relation is defined on distinct events, got {0} twice")]
    SameEvent(EventId),
    #[error("unknown event {0}")]
    UnknownEvent(EventId),
}

/// Vector clock plus the set of exchanges whose reflecting phase is pending.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorClock {
    owner: NodeId,
    vector: BTreeMap<NodeId, u64>,
    open: BTreeSet<ExchangeId>,
    retired: BTreeSet<ExchangeId>,
}

impl TensorClock {
    pub fn new(owner: NodeId) -> Self {
        TensorClock {
            owner,
            vector: BTreeMap::new(),
            open: BTreeSet::new(),
            retired: BTreeSet::new(),
        }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    /// Counter for `node`; absent entries read as zero.
    pub fn get(&self, node: NodeId) -> u64 {
        self.vector.get(&node).copied().unwrap_or(0)
    }

    pub fn vector(&self) -> &BTreeMap<NodeId, u64> {
        &self.vector
    }

    pub fn open_exchanges(&self) -> &BTreeSet<ExchangeId> {
        &self.open
    }

    pub fn is_open(&self, xid: ExchangeId) -> bool {
        self.open.contains(&xid)
    }

    /// Advance the owner's component and name the new event.
    pub fn tick(&mut self) -> EventId {
        let c = self.vector.entry(self.owner).or_insert(0);
        *c += 1;
        EventId {
            node: self.owner,
            seq: *c,
        }
    }

    /// Elementwise max with another vector.
    pub fn merge(&mut self, other: &BTreeMap<NodeId, u64>) {
        join_into(&mut self.vector, other);
    }

    /// `true` if every component of `self` is at least the matching one in `other`.
    pub fn dominates(&self, other: &TensorClock) -> bool {
        dominates(&self.vector, &other.vector)
    }

    /// Register `xid` as open on both endpoints.
    pub fn open_exchange(
        a: &mut TensorClock,
        b: &mut TensorClock,
        xid: ExchangeId,
    ) -> Result<(), CausalError> {
        if a.owner == b.owner {
            return Err(CausalError::SelfExchange(a.owner));
        }
        if a.knows(xid) || b.knows(xid) {
            return Err(CausalError::ExchangeReused(xid));
        }
        a.open.insert(xid);
        b.open.insert(xid);
        Ok(())
    }

    /// Commit `xid`: retire it on both sides and join both vectors.
    ///
    /// The direction is recorded by the event graph ([`History`]); at the
    /// clock level the join already carries the source endpoint's component
    /// into the destination.
    pub fn collapse_exchange(
        a: &mut TensorClock,
        b: &mut TensorClock,
        xid: ExchangeId,
        _direction: Direction,
    ) -> Result<(), CausalError> {
        Self::retire(a, b, xid)?;
        let mut joined = a.vector.clone();
        join_into(&mut joined, &b.vector);
        a.vector = joined.clone();
        b.vector = joined;
        Ok(())
    }

    /// Abort `xid`: retire it without joining. No direction emerges.
    pub fn abort_exchange(
        a: &mut TensorClock,
        b: &mut TensorClock,
        xid: ExchangeId,
    ) -> Result<(), CausalError> {
        Self::retire(a, b, xid)
    }

    fn retire(a: &mut TensorClock, b: &mut TensorClock, xid: ExchangeId) -> Result<(), CausalError> {
        if !a.open.contains(&xid) || !b.open.contains(&xid) {
            return Err(CausalError::ExchangeNotOpen(xid));
        }
        a.open.remove(&xid);
        b.open.remove(&xid);
        a.retired.insert(xid);
        b.retired.insert(xid);
        Ok(())
    }

    fn knows(&self, xid: ExchangeId) -> bool {
        self.open.contains(&xid) || self.retired.contains(&xid)
    }
}

pub(crate) fn join_into(dst: &mut BTreeMap<NodeId, u64>, src: &BTreeMap<NodeId, u64>) {
    for (&node, &c) in src {
        let e = dst.entry(node).or_insert(0);
        if c > *e {
            *e = c;
        }
    }
}

pub(crate) fn dominates(big: &BTreeMap<NodeId, u64>, small: &BTreeMap<NodeId, u64>) -> bool {
    small
        .iter()
        .all(|(n, &c)| big.get(n).copied().unwrap_or(0) >= c)
}
