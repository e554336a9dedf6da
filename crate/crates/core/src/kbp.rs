//! Knowledge-balance registers for a bilateral link.
//!
//! An elementary system has a 2-bit ontic state (four values). An agent with
//! maximal knowledge pins exactly one of those bits' worth: its epistemic
//! state is a 2-element subset of the four values. For `n` elementary systems
//! the ontic space has `4^n` values and a maximal-knowledge state has support
//! of size `2^n`.
//!
//! A link is modelled as two elementary systems, one per transmit direction.
//! The full 4-bit [`OnticState`] is only ever materialised by the simulator's
//! auditor; endpoints see an [`EndpointRegister`] that pins their own 2 bits
//! and leaves the peer's 2 bits unknown.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KbpError {
    #[error("unsupported number of elementary systems: {0} (expected 1 or 2)")]
    UnsupportedSystems(u32),
    #[error("empty support: contradictory knowledge")]
    EmptySupport,
    #[error("ontic value {value} outside a space of {size} states")]
    OutOfSpace { value: u8, size: usize },
    #[error("map is not a bijection on {size} ontic states")]
    NotBijective { size: usize },
    #[error("permutation acts on {perm} states but the state lives in {state}")]
    SpaceMismatch { perm: usize, state: usize },
}

fn space_size(n_systems: u32) -> Result<usize, KbpError> {
    match n_systems {
        1 => Ok(4),
        2 => Ok(16),
        other => Err(KbpError::UnsupportedSystems(other)),
    }
}

/// The imagined full state of `n` elementary systems.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OnticState {
    value: u8,
    n_systems: u32,
}

impl OnticState {
    pub fn new(value: u8, n_systems: u32) -> Result<Self, KbpError> {
        let size = space_size(n_systems)?;
        if value as usize >= size {
            return Err(KbpError::OutOfSpace { value, size });
        }
        Ok(OnticState { value, n_systems })
    }

    /// A single link: bits 3..2 are the A-to-B direction, bits 1..0 B-to-A.
    pub fn link(a_dir: u8, b_dir: u8) -> Self {
        OnticState {
            value: ((a_dir & 0b11) << 2) | (b_dir & 0b11),
            n_systems: 2,
        }
    }

    pub fn value(self) -> u8 {
        self.value
    }
}

/// Set of ontic values an agent considers possible, as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EpistemicState {
    support: u16,
    n_systems: u32,
}

impl fmt::Debug for EpistemicState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl EpistemicState {
    pub fn from_values(values: &[u8], n_systems: u32) -> Result<Self, KbpError> {
        let size = space_size(n_systems)?;
        let mut support = 0u16;
        for &v in values {
            if v as usize >= size {
                return Err(KbpError::OutOfSpace { value: v, size });
            }
            support |= 1 << v;
        }
        Ok(EpistemicState { support, n_systems })
    }

    pub(crate) fn from_mask(support: u16, n_systems: u32) -> Self {
        EpistemicState { support, n_systems }
    }

    pub fn n_systems(&self) -> u32 {
        self.n_systems
    }

    pub fn len(&self) -> usize {
        self.support.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.support == 0
    }

    pub fn contains(&self, value: u8) -> bool {
        value < 16 && self.support & (1 << value) != 0
    }

    pub fn iter(&self) -> impl Iterator<Item = u8> + '_ {
        (0..16u8).filter(move |v| self.contains(*v))
    }

    pub fn intersect(&self, other: &EpistemicState) -> EpistemicState {
        EpistemicState {
            support: self.support & other.support,
            n_systems: self.n_systems,
        }
    }
}

/// `true` iff the state claims no more than half the ontic bits.
pub fn is_kbp_valid(state: &EpistemicState, n_systems: u32) -> Result<bool, KbpError> {
    space_size(n_systems)?;
    if state.is_empty() {
        return Err(KbpError::EmptySupport);
    }
    Ok(state.len() >= 1 << n_systems)
}

/// `true` iff the state is valid and knows exactly half the ontic bits.
pub fn is_maximal(state: &EpistemicState, n_systems: u32) -> Result<bool, KbpError> {
    Ok(is_kbp_valid(state, n_systems)? && state.len() == 1 << n_systems)
}

/// Counts of maximal-knowledge states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StateCounts {
    pub single: usize,
    pub product: usize,
    pub entangled: usize,
}

/// Enumerate maximal-knowledge states by scanning the ontic power set.
///
/// For one system: supports of size 2 in a 4-state space. For two systems:
/// supports of size 4 in the 16-state space that are either a Cartesian
/// product of two single-system maximal states, or the graph of a bijection
/// between the two systems' values (perfectly correlated).
pub fn enumerate_maximal_states(n_systems: u32) -> Result<StateCounts, KbpError> {
    let size = space_size(n_systems)?;
    let mut counts = StateCounts {
        single: 0,
        product: 0,
        entangled: 0,
    };
    for mask in 1u32..(1u32 << size) {
        let state = EpistemicState::from_mask(mask as u16, n_systems);
        if !is_maximal(&state, n_systems)? {
            continue;
        }
        match n_systems {
            1 => counts.single += 1,
            _ => {
                if is_product(&state) {
                    counts.product += 1;
                } else if is_bijection_graph(&state) {
                    counts.entangled += 1;
                }
            }
        }
    }
    if n_systems == 2 {
        counts.single = enumerate_maximal_states(1)?.single;
    }
    Ok(counts)
}

// value = (first << 2) | second
fn marginals(state: &EpistemicState) -> (u8, u8) {
    let (mut first, mut second) = (0u8, 0u8);
    for v in state.iter() {
        first |= 1 << (v >> 2);
        second |= 1 << (v & 0b11);
    }
    (first, second)
}

fn is_product(state: &EpistemicState) -> bool {
    let (first, second) = marginals(state);
    first.count_ones() == 2
        && second.count_ones() == 2
        && (0..4u8)
            .filter(|x| first & (1 << x) != 0)
            .all(|x| (0..4u8).filter(|y| second & (1 << y) != 0).all(|y| state.contains((x << 2) | y)))
}

fn is_bijection_graph(state: &EpistemicState) -> bool {
    let (first, second) = marginals(state);
    state.len() == 4 && first == 0b1111 && second == 0b1111
}

/// A bijection on an ontic space.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Permutation {
    map: Vec<u8>,
}

impl Permutation {
    pub fn new(map: Vec<u8>) -> Result<Self, KbpError> {
        let size = map.len();
        let mut seen = vec![false; size];
        for &v in &map {
            let i = v as usize;
            if i >= size || seen[i] {
                return Err(KbpError::NotBijective { size });
            }
            seen[i] = true;
        }
        Ok(Permutation { map })
    }

    pub fn identity(size: usize) -> Self {
        Permutation {
            map: (0..size as u8).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn apply(&self, value: u8) -> u8 {
        self.map[value as usize]
    }

    /// `self` after `first`: `x -> self(first(x))`.
    pub fn after(&self, first: &Permutation) -> Permutation {
        Permutation {
            map: first.map.iter().map(|&x| self.map[x as usize]).collect(),
        }
    }

    /// All permutations of `size` elements in lexicographic order.
    pub fn all(size: usize) -> Vec<Permutation> {
        fn go(prefix: &mut Vec<u8>, used: &mut Vec<bool>, out: &mut Vec<Permutation>) {
            if prefix.len() == used.len() {
                out.push(Permutation { map: prefix.clone() });
                return;
            }
            for v in 0..used.len() {
                if !used[v] {
                    used[v] = true;
                    prefix.push(v as u8);
                    go(prefix, used, out);
                    prefix.pop();
                    used[v] = false;
                }
            }
        }
        let mut out = Vec::new();
        go(&mut Vec::new(), &mut vec![false; size], &mut out);
        out
    }
}

/// Map a support elementwise through a reversible rewrite.
pub fn apply_rewrite(state: &EpistemicState, perm: &Permutation) -> Result<EpistemicState, KbpError> {
    let size = space_size(state.n_systems)?;
    if perm.len() != size {
        return Err(KbpError::SpaceMismatch {
            perm: perm.len(),
            state: size,
        });
    }
    let mut out = 0u16;
    for v in state.iter() {
        out |= 1 << perm.apply(v);
    }
    Ok(EpistemicState::from_mask(out, state.n_systems))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkEnd {
    A,
    B,
}

/// What one endpoint can know about its link.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EndpointRegister {
    pub end: LinkEnd,
    pub epi: EpistemicState,
}

impl EndpointRegister {
    /// The endpoint's own 2 direction bits.
    pub fn own_bits(&self) -> u8 {
        let v = self.epi.iter().next().expect("register support is never empty");
        match self.end {
            LinkEnd::A => v >> 2,
            LinkEnd::B => v & 0b11,
        }
    }
}

/// Pin the endpoint's own direction bits and leave the peer's free.
pub fn project_endpoint_view(ontic: OnticState, end: LinkEnd) -> EndpointRegister {
    let v = ontic.value;
    let mut support = 0u16;
    for free in 0..4u8 {
        let candidate = match end {
            LinkEnd::A => (v & 0b1100) | free,
            LinkEnd::B => (free << 2) | (v & 0b0011),
        };
        support |= 1 << candidate;
    }
    EndpointRegister {
        end,
        epi: EpistemicState::from_mask(support, 2),
    }
}
