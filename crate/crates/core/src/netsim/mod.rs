//! Deterministic slotted network simulator.
//!
//! Time is an integer slot. Every frame crosses each hop in `link.delay`
//! slots; loss and corruption are decided per frame per hop by a seeded draw
//! keyed on the edge, the send slot and the frame's position among the
//! frames entering that edge in that slot.

mod engine;
pub mod metrics;
mod oae;
pub mod routing;
pub mod scenario;
pub mod topology;

pub use engine::{payload_for, run_with, Net, Reactor};
pub use metrics::Metrics;
pub use oae::OaeReactor;
pub use routing::{heal_port_dag, relay_route, PortPlan};
pub use scenario::{Flow, LinkModel, Partition, Protocol, Scenario, ScenarioError};
pub use topology::{Topology, TopologyError, TopologySpec};

use crate::baselines::{FireForget, Lww};
use crate::trace::TraceEvent;

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trace: Vec<TraceEvent>,
    pub metrics: Metrics,
    /// Internal bookkeeping failures (causal registry misuse); empty on a sound run.
    pub internal_errors: Vec<String>,
}

/// Run the scenario with the protocol it selects.
pub fn run(scenario: &Scenario) -> Result<RunOutput, TopologyError> {
    let topo = Topology::build(&scenario.topology)?;
    let mut internal_errors = Vec::new();
    let trace = match scenario.protocol {
        Protocol::Oae => {
            let nodes: Vec<_> = topo.nodes().map(|n| (n, topo.neighbors(n).collect())).collect();
            let mut r = OaeReactor::new(scenario, nodes.into_iter());
            let trace = run_with(scenario, topo, &mut r);
            internal_errors = r.causal_errors;
            trace
        }
        Protocol::Fireforget => run_with(scenario, topo, &mut FireForget::default()),
        Protocol::Lww => {
            let n = topo.len();
            run_with(scenario, topo, &mut Lww::new(n))
        }
    };
    let metrics = Metrics::from_trace(scenario, &trace);
    Ok(RunOutput {
        trace,
        metrics,
        internal_errors,
    })
}
