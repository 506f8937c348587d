// SPDX-License-Identifier: Apache-2.0
//! Deterministic simulator for router forwarding state under flat routing,
//! map-and-encap, MPLS, stateful (S,G) multicast and BIER.

pub mod bier;
pub mod cli;
pub mod harness;
pub mod multicast;
pub mod packet;
pub mod topogen;
pub mod topology;
pub mod unicast;
pub mod workload;

pub use harness::{run, Mode, RunOutput, Scenario};
pub use topology::{Role, RouterId, Topology, TopologySpec};
