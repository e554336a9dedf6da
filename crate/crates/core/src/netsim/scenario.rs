//! Declarative experiment input, read from TOML.

use super::topology::{Topology, TopologySpec};
use crate::ids::NodeId;
use crate::link::RetryPolicy;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Oae,
    Fireforget,
    Lww,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Oae, Protocol::Fireforget, Protocol::Lww];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Oae => "oae",
            Protocol::Fireforget => "fireforget",
            Protocol::Lww => "lww",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Protocol::ALL.into_iter().find(|p| p.as_str() == s)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A link partitioned over `[start, end)` slots; no `end` means forever.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Partition {
    pub a: NodeId,
    pub b: NodeId,
    pub start: u64,
    pub end: Option<u64>,
}

impl Partition {
    pub fn covers(&self, x: NodeId, y: NodeId, slot: u64) -> bool {
        ((self.a, self.b) == (x, y) || (self.a, self.b) == (y, x))
            && slot >= self.start
            && self.end.is_none_or(|e| slot < e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinkModel {
    /// Slots per hop.
    pub delay: u64,
    /// Per-frame, per-hop drop probability.
    pub loss: f64,
    /// Per-frame, per-hop probability of one flipped bit.
    pub corrupt: f64,
    pub partitions: Vec<Partition>,
}

/// `count` items from `from` to `to`, one every `interval` slots from `start`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Flow {
    pub from: NodeId,
    pub to: NodeId,
    pub count: u32,
    pub interval: u64,
    pub start: u64,
    /// Replicated key written by LWW runs.
    pub key: u32,
}

impl Flow {
    pub fn issue_slot(&self, i: u32) -> u64 {
        self.start + self.interval * i as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub protocol: Protocol,
    pub seed: u64,
    /// Workload items are issued in slots `0..duration`; the run then drains.
    pub duration: u64,
    pub topology: TopologySpec,
    pub link: LinkModel,
    pub horizon: u64,
    pub payload_bytes: u32,
    pub relay: bool,
    pub retry: RetryPolicy,
    pub flows: Vec<Flow>,
    /// LWW timestamp offset per node, in slots.
    pub skew: BTreeMap<NodeId, i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("invalid scenario:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<FieldError>),
}

impl ScenarioError {
    pub fn fields(&self) -> Vec<String> {
        match self {
            ScenarioError::Invalid(v) => v.iter().map(|e| e.path.clone()).collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum NodeRef {
    Id(u32),
    Name(String),
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeRef::Id(i) => write!(f, "{i}"),
            NodeRef::Name(s) => write!(f, "'{s}'"),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    protocol: Option<Protocol>,
    seed: Option<u64>,
    duration: Option<u64>,
    topology: Option<TopologySpec>,
    link: Option<RawLink>,
    workload: Option<RawWorkload>,
    #[serde(default)]
    skew: BTreeMap<String, i64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    delay: Option<u64>,
    loss: Option<f64>,
    corrupt: Option<f64>,
    #[serde(default)]
    partitions: Vec<RawPartition>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPartition {
    a: NodeRef,
    b: NodeRef,
    start: Option<u64>,
    end: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWorkload {
    horizon: Option<u64>,
    payload_bytes: Option<u32>,
    relay: Option<bool>,
    retry: Option<RetryPolicy>,
    #[serde(default)]
    flows: Vec<RawFlow>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFlow {
    from: NodeRef,
    to: NodeRef,
    count: Option<u32>,
    interval: Option<u64>,
    start: Option<u64>,
    key: Option<u32>,
}

struct Problems(Vec<FieldError>);

impl Problems {
    fn add(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(FieldError {
            path: path.into(),
            message: message.into(),
        });
    }

    fn node(&mut self, topo: Option<&Topology>, path: String, r: &NodeRef) -> NodeId {
        let Some(t) = topo else { return NodeId(0) };
        let found = match r {
            NodeRef::Id(i) => Some(NodeId(*i)).filter(|n| t.contains(*n)),
            NodeRef::Name(s) => t.lookup(s),
        };
        found.unwrap_or_else(|| {
            self.add(path, format!("unknown node {r}"));
            NodeId(0)
        })
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut s = Scenario::from_toml_str(&text)?;
        if s.name.is_empty() {
            s.name = path
                .file_stem()
                .map(|x| x.to_string_lossy().into_owned())
                .unwrap_or_default();
        }
        Ok(s)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        let mut p = Problems(Vec::new());

        let protocol = raw.protocol.unwrap_or(Protocol::Oae);
        let duration = raw.duration.unwrap_or_else(|| {
            p.add("duration", "required");
            0
        });
        let spec = raw.topology.unwrap_or_else(|| {
            p.add("topology", "required");
            TopologySpec::Triangle
        });
        let topo = match Topology::build(&spec) {
            Ok(t) => Some(t),
            Err(e) => {
                p.add("topology", e.to_string());
                None
            }
        };

        let rl = raw.link.unwrap_or(RawLink {
            delay: None,
            loss: None,
            corrupt: None,
            partitions: Vec::new(),
        });
        let delay = rl.delay.unwrap_or(1);
        if delay == 0 {
            p.add("link.delay", "must be at least 1");
        }
        let mut prob = |path: &str, v: Option<f64>| {
            let v = v.unwrap_or(0.0);
            if !(0.0..=1.0).contains(&v) {
                p.add(path, format!("must be in [0, 1], got {v}"));
            }
            v
        };
        let loss = prob("link.loss", rl.loss);
        let corrupt = prob("link.corrupt", rl.corrupt);
        let mut partitions = Vec::new();
        for (i, rp) in rl.partitions.iter().enumerate() {
            let base = format!("link.partitions[{i}]");
            let a = p.node(topo.as_ref(), format!("{base}.a"), &rp.a);
            let b = p.node(topo.as_ref(), format!("{base}.b"), &rp.b);
            if let Some(t) = &topo {
                if a != b && !t.is_link(a, b) {
                    p.add(&base, format!("{} and {} are not linked", rp.a, rp.b));
                }
            }
            let start = rp.start.unwrap_or(0);
            if rp.end.is_some_and(|e| e <= start) {
                p.add(format!("{base}.end"), "must be after start");
            }
            partitions.push(Partition {
                a,
                b,
                start,
                end: rp.end,
            });
        }

        let mut horizon = 0;
        let mut payload_bytes = 8;
        let mut relay = true;
        let mut retry = RetryPolicy::All;
        let mut flows = Vec::new();
        match raw.workload {
            None => p.add("workload", "required"),
            Some(w) => {
                horizon = w.horizon.unwrap_or_else(|| {
                    p.add("workload.horizon", "required");
                    0
                });
                if w.horizon == Some(0) {
                    p.add("workload.horizon", "must be at least 1");
                }
                payload_bytes = w.payload_bytes.unwrap_or(8);
                if payload_bytes == 0 {
                    p.add("workload.payload_bytes", "must be at least 1");
                }
                relay = w.relay.unwrap_or(true);
                retry = w.retry.unwrap_or(RetryPolicy::All);
                if w.flows.is_empty() {
                    p.add("workload.flows", "at least one flow is required");
                }
                for (i, rf) in w.flows.iter().enumerate() {
                    let base = format!("workload.flows[{i}]");
                    let from = p.node(topo.as_ref(), format!("{base}.from"), &rf.from);
                    let to = p.node(topo.as_ref(), format!("{base}.to"), &rf.to);
                    if topo.is_some() && from == to {
                        p.add(&base, "from and to must differ");
                    }
                    if let Some(t) = &topo {
                        if from != to && !t.is_link(from, to) {
                            p.add(&base, format!("{} and {} are not linked", rf.from, rf.to));
                        }
                    }
                    let f = Flow {
                        from,
                        to,
                        count: rf.count.unwrap_or(1),
                        interval: rf.interval.unwrap_or(1),
                        start: rf.start.unwrap_or(0),
                        key: rf.key.unwrap_or(0),
                    };
                    if f.interval == 0 {
                        p.add(format!("{base}.interval"), "must be at least 1");
                    }
                    if f.count > 0 && f.issue_slot(f.count - 1) >= duration {
                        p.add(
                            format!("{base}.count"),
                            format!("last item at slot {} is not before duration {duration}", f.issue_slot(f.count - 1)),
                        );
                    }
                    flows.push(f);
                }
            }
        }

        let mut skew = BTreeMap::new();
        for (k, v) in &raw.skew {
            let r = match k.parse::<u32>() {
                Ok(i) => NodeRef::Id(i),
                Err(_) => NodeRef::Name(k.clone()),
            };
            let n = p.node(topo.as_ref(), format!("skew.{k}"), &r);
            skew.insert(n, *v);
        }

        if !p.0.is_empty() {
            return Err(ScenarioError::Invalid(p.0));
        }
        Ok(Scenario {
            name: raw.name.unwrap_or_default(),
            protocol,
            seed: raw.seed.unwrap_or(0),
            duration,
            topology: spec,
            link: LinkModel {
                delay,
                loss,
                corrupt,
                partitions,
            },
            horizon,
            payload_bytes,
            relay,
            retry,
            flows,
            skew,
        })
    }

    /// Total workload items.
    pub fn workload_size(&self) -> u64 {
        self.flows.iter().map(|f| f.count as u64).sum()
    }
}
