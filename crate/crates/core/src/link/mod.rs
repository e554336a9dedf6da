//! Bilateral transaction state machine.
//!
//! One transaction is a four-frame exchange:
//!
//! ```text
//!  initiator                      responder
//!  Idle -> Tentative  --TIK(payload)-->  Idle -> Reflecting
//!                     <--TYK(digest)---
//!  Tentative -> Reflecting (digest ok)
//!                     --TIK2(commit)-->  Reflecting -> Agreed
//!                     <--TYK2(commit)--
//!  Reflecting -> Agreed
//! ```
//!
//! A mismatching reflection makes the initiator send `TIK2(abort)` and abort.
//! Either side aborts when its temporal horizon expires and rolls back to the
//! checkpoint taken when the transaction started.

mod endpoint;
pub mod explore;

pub use endpoint::{AbortReason, AppState, Checkpoint, Endpoint, LinkConfig, LinkEvent, Reaction, RetryPolicy};

use crate::ids::{NodeId, TxnId};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::hash::Hasher;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Idle,
    Tentative,
    Reflecting,
    Agreed,
    Aborted,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Agreed | Phase::Aborted)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Idle => "idle",
            Phase::Tentative => "tentative",
            Phase::Reflecting => "reflecting",
            Phase::Agreed => "agreed",
            Phase::Aborted => "aborted",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Agreement-sublayer message kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AgreementTag {
    Tik,
    Tyk,
    Tik2,
    Tyk2,
}

impl AgreementTag {
    pub const ALL: [AgreementTag; 4] = [AgreementTag::Tik, AgreementTag::Tyk, AgreementTag::Tik2, AgreementTag::Tyk2];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgreementTag::Tik => "TIK",
            AgreementTag::Tyk => "TYK",
            AgreementTag::Tik2 => "TIK2",
            AgreementTag::Tyk2 => "TYK2",
        }
    }
}

impl fmt::Display for AgreementTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Commit,
    Abort,
}

/// 64-bit payload digest. Equal digests are treated as equal payloads.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub u64);

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({:016x})", self.0)
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        u64::from_str_radix(&s, 16)
            .map(Digest)
            .map_err(serde::de::Error::custom)
    }
}

/// FNV-1a over the payload bytes.
///
/// Each step is a bijection of the running state for a fixed input byte, so
/// two payloads of equal length that differ in a single byte never collide.
pub fn digest(payload: &[u8]) -> Digest {
    let mut h = fnv::FnvHasher::default();
    h.write(payload);
    Digest(h.finish())
}

/// Sublayers a frame field can belong to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Sublayer {
    /// L2.2: bilateral frame exchange.
    Link,
    /// L2.4: reliable delivery.
    Transport,
    /// L2.5: knowledge-balance verification.
    Reflection,
    /// L2.6: bilateral commitment.
    Agreement,
    /// L2.8: atomicity boundaries.
    Transaction,
    /// L2.9: semantic content.
    Application,
}

impl Sublayer {
    pub fn label(self) -> &'static str {
        match self {
            Sublayer::Link => "L2.2",
            Sublayer::Transport => "L2.4",
            Sublayer::Reflection => "L2.5",
            Sublayer::Agreement => "L2.6",
            Sublayer::Transaction => "L2.8",
            Sublayer::Application => "L2.9",
        }
    }
}

/// The wire unit.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Frame {
    pub src: NodeId,
    pub dst: NodeId,
    pub seq: u64,
    pub retransmit_count: u32,
    pub reflection_digest: Option<Digest>,
    pub tag: AgreementTag,
    pub verdict: Option<Verdict>,
    pub txn_id: TxnId,
    pub payload: Vec<u8>,
}

impl Frame {
    /// Field-to-sublayer attribution, in declaration order.
    pub const FIELDS: [(&'static str, Sublayer); 9] = [
        ("src", Sublayer::Link),
        ("dst", Sublayer::Link),
        ("seq", Sublayer::Link),
        ("retransmit_count", Sublayer::Transport),
        ("reflection_digest", Sublayer::Reflection),
        ("tag", Sublayer::Agreement),
        ("verdict", Sublayer::Agreement),
        ("txn_id", Sublayer::Transaction),
        ("payload", Sublayer::Application),
    ];

    /// Payload size in bits.
    pub fn payload_bits(&self) -> u64 {
        self.payload.len() as u64 * 8
    }

    /// Check the per-tag shape of the frame.
    pub fn validate(&self) -> Result<(), MalformedFrame> {
        let bad = |why: &'static str| Err(MalformedFrame { tag: self.tag, why });
        match self.tag {
            AgreementTag::Tik => {
                if self.payload.is_empty() {
                    return bad("TIK without payload");
                }
                if self.reflection_digest.is_some() {
                    return bad("TIK carrying a reflection digest");
                }
                if self.verdict.is_some() {
                    return bad("TIK carrying a verdict");
                }
            }
            AgreementTag::Tyk => {
                if self.reflection_digest.is_none() {
                    return bad("TYK without reflection digest");
                }
                if !self.payload.is_empty() || self.verdict.is_some() {
                    return bad("TYK must carry only the digest");
                }
            }
            AgreementTag::Tik2 | AgreementTag::Tyk2 => {
                if self.verdict.is_none() {
                    return bad("verdict frame without verdict");
                }
                if !self.payload.is_empty() {
                    return bad("verdict frame carrying payload");
                }
            }
        }
        if self.src == self.dst {
            return bad("frame addressed to its sender");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed {tag} frame: {why}")]
pub struct MalformedFrame {
    pub tag: AgreementTag,
    pub why: &'static str,
}

/// One bilateral exchange as seen by one endpoint.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transaction {
    pub id: TxnId,
    pub initiator: NodeId,
    pub responder: NodeId,
    pub payload: Vec<u8>,
    /// Digest of the payload this endpoint sent (initiator) or received (responder).
    pub digest: Digest,
    pub phase: Phase,
    pub start: u64,
    pub deadline: u64,
    pub checkpoint: Checkpoint,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("{node} has no link to {peer}")]
    NoSuchPeer { node: NodeId, peer: NodeId },
    #[error("payload must not be empty")]
    EmptyPayload,
    #[error("horizon must be at least one slot")]
    ZeroHorizon,
}
