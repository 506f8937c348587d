// SPDX-License-Identifier: Apache-2.0
//! Synthetic topologies with unit link costs.

use std::fmt;

use crate::topology::{Role, TopologySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TopologyKind {
    /// `size` routers in a chain; the two ends are edges.
    Line,
    /// One core hub with `size - 1` edge leaves.
    Star,
    /// `size` x `size` mesh; border routers are edges.
    Grid,
    /// `size` edge routers, each dual-homed onto a core ring.
    FatEdge,
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TopologyKind::Line => "line",
            TopologyKind::Star => "star",
            TopologyKind::Grid => "grid",
            TopologyKind::FatEdge => "fat-edge",
        })
    }
}

/// Builds the topology spec. `size` must be at least 1.
pub fn generate(kind: TopologyKind, size: u32) -> TopologySpec {
    assert!(size >= 1, "topology size must be at least 1");
    let mut s = TopologySpec::default();
    if size == 1 && kind != TopologyKind::FatEdge {
        s.router(0, Role::Edge);
        return s;
    }
    match kind {
        TopologyKind::Line => {
            for i in 0..size {
                let role = if i == 0 || i == size - 1 { Role::Edge } else { Role::Core };
                s.router(i, role);
            }
            for i in 1..size {
                s.link(i - 1, i, 1);
            }
        }
        TopologyKind::Star => {
            s.router(0, Role::Core);
            for leaf in 1..size {
                s.router(leaf, Role::Edge).link(0, leaf, 1);
            }
        }
        TopologyKind::Grid => {
            let id = |row: u32, col: u32| row * size + col;
            for row in 0..size {
                for col in 0..size {
                    let border = row == 0 || col == 0 || row == size - 1 || col == size - 1;
                    s.router(id(row, col), if border { Role::Edge } else { Role::Core });
                }
            }
            for row in 0..size {
                for col in 0..size {
                    if col + 1 < size {
                        s.link(id(row, col), id(row, col + 1), 1);
                    }
                    if row + 1 < size {
                        s.link(id(row, col), id(row + 1, col), 1);
                    }
                }
            }
        }
        TopologyKind::FatEdge => {
            let cores = size.div_ceil(4).max(2);
            for c in 0..cores {
                s.router(c, Role::Core);
            }
            for c in 0..cores {
                let next = (c + 1) % cores;
                if cores > 2 || c == 0 {
                    s.link(c, next, 1);
                }
            }
            for i in 0..size {
                let e = cores + i;
                s.router(e, Role::Edge);
                s.link(e, i % cores, 1).link(e, (i + 1) % cores, 1);
            }
        }
    }
    s
}
