//! Identifier newtypes shared across the crate.

use serde::{Deserialize, Serialize};
use std::fmt;

/// A node (cell, endpoint, replica) in a topology.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Identifier of a bilateral transaction.
///
/// Packs the originating node into the high 32 bits and a per-node counter
/// into the low 32 bits, so endpoints can allocate ids without coordination.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TxnId(pub u64);

impl TxnId {
    pub fn new(origin: NodeId, counter: u32) -> Self {
        TxnId(((origin.0 as u64) << 32) | counter as u64)
    }

    pub fn origin(self) -> NodeId {
        NodeId((self.0 >> 32) as u32)
    }

    pub fn counter(self) -> u32 {
        self.0 as u32
    }

    /// The causal exchange opened on behalf of this transaction.
    pub fn exchange(self) -> ExchangeId {
        ExchangeId(self.0)
    }
}

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.origin().0, self.counter())
    }
}

/// Identifier of a causal exchange tracked by tensor clocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExchangeId(pub u64);

impl fmt::Display for ExchangeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}
