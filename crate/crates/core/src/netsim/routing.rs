//! Relay selection around partitioned links.

use super::topology::Topology;
use crate::ids::NodeId;
use std::collections::{BTreeMap, VecDeque};

/// Path from `src` to `dst` over live links, both ends included.
///
/// The direct link wins when live. Otherwise the lowest-id third vertex of a
/// shared triangle, then the shortest live path of any length (breadth-first,
/// neighbours visited in id order), then `None`.
pub fn relay_route(
    topo: &Topology,
    live: &dyn Fn(NodeId, NodeId) -> bool,
    src: NodeId,
    dst: NodeId,
) -> Option<Vec<NodeId>> {
    if src == dst || !topo.contains(src) || !topo.contains(dst) {
        return None;
    }
    if topo.is_link(src, dst) && live(src, dst) {
        return Some(vec![src, dst]);
    }
    let mut common: Vec<NodeId> = topo
        .neighbors(src)
        .filter(|&w| topo.is_link(w, dst))
        .collect();
    common.sort();
    if let Some(w) = common.into_iter().find(|&w| live(src, w) && live(w, dst)) {
        return Some(vec![src, w, dst]);
    }
    let mut parent: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut queue = VecDeque::from([src]);
    parent.insert(src, src);
    while let Some(u) = queue.pop_front() {
        if u == dst {
            break;
        }
        for v in topo.neighbors(u) {
            if !parent.contains_key(&v) && live(u, v) {
                parent.insert(v, u);
                queue.push_back(v);
            }
        }
    }
    if !parent.contains_key(&dst) {
        return None;
    }
    let mut path = vec![dst];
    let mut cur = dst;
    while cur != src {
        cur = parent[&cur];
        path.push(cur);
    }
    path.reverse();
    Some(path)
}

/// Relay preference for one port of a node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PortPlan {
    pub port: usize,
    pub neighbor: NodeId,
    /// Next hops to try, best first. The neighbour itself means the direct port.
    pub order: Vec<NodeId>,
}

/// Per-port relay preferences of `node`, from local knowledge only: its own
/// ports' liveness and the liveness its neighbours advertise for their links.
///
/// Relays for a port are the vertices sharing a triangle with it; on a grid
/// these are the two compass-adjacent ports. A relay is used only if it
/// advertises its own direct link to the destination as live, so every relay
/// hop ends at the destination and the preferences cannot form a loop.
/// Candidates are ranked by node id, then port index.
pub fn heal_port_dag(topo: &Topology, node: NodeId, live: &dyn Fn(NodeId, NodeId) -> bool) -> Vec<PortPlan> {
    let ports = topo.ports(node);
    let mut plans = Vec::new();
    for (p, nb) in ports.iter().enumerate() {
        let Some(d) = *nb else { continue };
        let mut cands: Vec<(NodeId, usize)> = if topo.is_grid() {
            let k = ports.len();
            [(p + k - 1) % k, (p + 1) % k]
                .into_iter()
                .filter_map(|q| ports[q].map(|w| (w, q)))
                .filter(|&(w, _)| w != d && topo.is_link(w, d))
                .collect()
        } else {
            topo.shared_triangles(node, d)
                .into_iter()
                .filter_map(|w| ports.iter().position(|x| *x == Some(w)).map(|q| (w, q)))
                .collect()
        };
        cands.sort();
        cands.dedup_by_key(|c| c.0);
        let mut order = Vec::new();
        if live(node, d) {
            order.push(d);
        }
        order.extend(
            cands
                .into_iter()
                .filter(|&(w, _)| live(node, w) && live(w, d))
                .map(|(w, _)| w),
        );
        plans.push(PortPlan {
            port: p,
            neighbor: d,
            order,
        });
    }
    plans
}
