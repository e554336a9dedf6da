use crate::ids::NodeId;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TopologySpec {
    Triangle,
    Complete {
        n: u32,
    },
    /// 8-neighbour grid. Wraps into a torus unless `wrap = false`.
    Grid {
        width: u32,
        height: u32,
        #[serde(default = "yes")]
        wrap: bool,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("grid needs width and height of at least 2, got {0}x{1}")]
    GridTooSmall(u32, u32),
    #[error("complete graph needs at least 3 nodes, got {0}")]
    CompleteTooSmall(u32),
}

/// Compass ports of a grid cell, in port-index order.
pub const COMPASS: [(&str, i64, i64); 8] = [
    ("N", 0, -1),
    ("NE", 1, -1),
    ("E", 1, 0),
    ("SE", 1, 1),
    ("S", 0, 1),
    ("SW", -1, 1),
    ("W", -1, 0),
    ("NW", -1, -1),
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    spec: TopologySpec,
    names: Vec<String>,
    adj: BTreeMap<NodeId, BTreeSet<NodeId>>,
    /// Port index to neighbour. Grid cells have the eight compass ports
    /// (absent on a planar boundary); other kinds number neighbours by id.
    ports: BTreeMap<NodeId, Vec<Option<NodeId>>>,
}

impl Topology {
    pub fn build(spec: &TopologySpec) -> Result<Self, TopologyError> {
        let mut t = Topology {
            spec: spec.clone(),
            names: Vec::new(),
            adj: BTreeMap::new(),
            ports: BTreeMap::new(),
        };
        match *spec {
            TopologySpec::Triangle => {
                t.names = ["a", "b", "c"].map(String::from).to_vec();
                t.complete(3);
            }
            TopologySpec::Complete { n } => {
                if n < 3 {
                    return Err(TopologyError::CompleteTooSmall(n));
                }
                t.names = (0..n).map(|i| format!("n{i}")).collect();
                t.complete(n);
            }
            TopologySpec::Grid { width, height, wrap } => {
                if width < 2 || height < 2 {
                    return Err(TopologyError::GridTooSmall(width, height));
                }
                t.grid(width, height, wrap);
            }
        }
        Ok(t)
    }

    fn complete(&mut self, n: u32) {
        for i in 0..n {
            let others: BTreeSet<NodeId> = (0..n).filter(|&j| j != i).map(NodeId).collect();
            self.ports.insert(NodeId(i), others.iter().copied().map(Some).collect());
            self.adj.insert(NodeId(i), others);
        }
    }

    fn grid(&mut self, w: u32, h: u32, wrap: bool) {
        let (wi, hi) = (w as i64, h as i64);
        for y in 0..hi {
            for x in 0..wi {
                let id = NodeId((y * wi + x) as u32);
                self.names.push(format!("n{}", id.0));
                let mut ports = Vec::with_capacity(8);
                let mut nbrs = BTreeSet::new();
                for (_, dx, dy) in COMPASS {
                    let (mut nx, mut ny) = (x + dx, y + dy);
                    if wrap {
                        nx = nx.rem_euclid(wi);
                        ny = ny.rem_euclid(hi);
                    }
                    if nx < 0 || ny < 0 || nx >= wi || ny >= hi || (nx, ny) == (x, y) {
                        ports.push(None);
                        continue;
                    }
                    let nb = NodeId((ny * wi + nx) as u32);
                    ports.push(Some(nb));
                    nbrs.insert(nb);
                }
                self.ports.insert(id, ports);
                self.adj.insert(id, nbrs);
            }
        }
    }

    pub fn spec(&self) -> &TopologySpec {
        &self.spec
    }

    pub fn is_grid(&self) -> bool {
        matches!(self.spec, TopologySpec::Grid { .. })
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.adj.keys().copied()
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.adj.contains_key(&n)
    }

    pub fn neighbors(&self, n: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adj.get(&n).into_iter().flatten().copied()
    }

    pub fn degree(&self, n: NodeId) -> usize {
        self.adj.get(&n).map_or(0, BTreeSet::len)
    }

    pub fn ports(&self, n: NodeId) -> &[Option<NodeId>] {
        self.ports.get(&n).map_or(&[], Vec::as_slice)
    }

    pub fn is_link(&self, a: NodeId, b: NodeId) -> bool {
        self.adj.get(&a).is_some_and(|s| s.contains(&b))
    }

    /// Undirected links as `(low, high)` pairs.
    pub fn links(&self) -> Vec<(NodeId, NodeId)> {
        self.adj
            .iter()
            .flat_map(|(&a, s)| s.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
            .collect()
    }

    /// Third vertices of the triangles containing the link `a`-`b`.
    pub fn shared_triangles(&self, a: NodeId, b: NodeId) -> Vec<NodeId> {
        match (self.adj.get(&a), self.adj.get(&b)) {
            (Some(x), Some(y)) if x.contains(&b) => x.intersection(y).copied().collect(),
            _ => Vec::new(),
        }
    }

    pub fn name(&self, n: NodeId) -> String {
        self.names.get(n.0 as usize).cloned().unwrap_or_else(|| n.to_string())
    }

    /// Resolve a node by name (`a`, `n4`) or decimal id.
    pub fn lookup(&self, name: &str) -> Option<NodeId> {
        if let Some(i) = self.names.iter().position(|s| s == name) {
            return Some(NodeId(i as u32));
        }
        name.parse::<u32>().ok().map(NodeId).filter(|n| self.contains(*n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_shape() {
        let t = Topology::build(&TopologySpec::Triangle).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.links(), vec![(NodeId(0), NodeId(1)), (NodeId(0), NodeId(2)), (NodeId(1), NodeId(2))]);
        assert_eq!(t.lookup("b"), Some(NodeId(1)));
        assert_eq!(t.shared_triangles(NodeId(1), NodeId(2)), vec![NodeId(0)]);
    }

    #[test]
    fn size_errors() {
        assert_eq!(
            Topology::build(&TopologySpec::Grid { width: 1, height: 4, wrap: true }),
            Err(TopologyError::GridTooSmall(1, 4))
        );
        assert_eq!(
            Topology::build(&TopologySpec::Complete { n: 2 }),
            Err(TopologyError::CompleteTooSmall(2))
        );
    }

    #[test]
    fn planar_grid_corner_has_three_neighbours() {
        let t = Topology::build(&TopologySpec::Grid { width: 3, height: 3, wrap: false }).unwrap();
        assert_eq!(t.degree(NodeId(0)), 3);
        assert_eq!(t.degree(NodeId(4)), 8);
        assert_eq!(t.ports(NodeId(0)).iter().flatten().count(), 3);
    }

    #[test]
    fn links_are_symmetric() {
        for spec in [
            TopologySpec::Triangle,
            TopologySpec::Complete { n: 5 },
            TopologySpec::Grid { width: 4, height: 3, wrap: true },
            TopologySpec::Grid { width: 4, height: 3, wrap: false },
        ] {
            let t = Topology::build(&spec).unwrap();
            for a in t.nodes() {
                for b in t.neighbors(a) {
                    assert!(t.is_link(b, a), "{spec:?} {a} {b}");
                }
            }
        }
    }
}
