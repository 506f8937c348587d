// SPDX-License-Identifier: Apache-2.0
//! Network graph model and deterministic shortest-path next hops.
//!
//! Every forwarding plane in this crate derives its tables from the
//! [`RoutingTables`] computed here. Equal-cost ties are broken towards the
//! neighbor with the smallest [`RouterId`], so all downstream tables are
//! reproducible.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::cmp::Reverse;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RouterId(pub u32);

impl fmt::Display for RouterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Core,
    Edge,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Core => "core",
            Role::Edge => "edge",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouterSpec {
    pub id: RouterId,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub a: RouterId,
    pub b: RouterId,
    #[serde(default = "default_cost")]
    pub cost: u32,
}

fn default_cost() -> u32 {
    1
}

/// Unvalidated router and link lists, as found in a scenario file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub routers: Vec<RouterSpec>,
    pub links: Vec<LinkSpec>,
}

impl TopologySpec {
    pub fn router(&mut self, id: u32, role: Role) -> &mut Self {
        self.routers.push(RouterSpec { id: RouterId(id), role });
        self
    }

    pub fn link(&mut self, a: u32, b: u32, cost: u32) -> &mut Self {
        self.links.push(LinkSpec { a: RouterId(a), b: RouterId(b), cost });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("topology has no routers")]
    Empty,
    #[error("router {0} declared more than once")]
    DuplicateRouter(RouterId),
    #[error("more than one link between {0} and {1}")]
    DuplicateLink(RouterId, RouterId),
    #[error("self-loop on router {0}")]
    SelfLoop(RouterId),
    #[error("link {0}-{1} has zero cost")]
    ZeroCost(RouterId, RouterId),
    #[error("topology is disconnected: router {0} unreachable from {1}")]
    Disconnected(RouterId, RouterId),
    #[error("topology has no edge routers")]
    NoEdgeRouters,
    #[error("unknown router {0}")]
    UnknownRouter(RouterId),
}

/// A validated, connected, undirected graph. Immutable after [`Topology::build`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    roles: BTreeMap<RouterId, Role>,
    adjacency: BTreeMap<RouterId, BTreeMap<RouterId, u32>>,
    link_count: usize,
}

impl Topology {
    pub fn build(spec: &TopologySpec) -> Result<Self, TopologyError> {
        if spec.routers.is_empty() {
            return Err(TopologyError::Empty);
        }
        let mut roles = BTreeMap::new();
        let mut adjacency: BTreeMap<RouterId, BTreeMap<RouterId, u32>> = BTreeMap::new();
        for r in &spec.routers {
            if roles.insert(r.id, r.role).is_some() {
                return Err(TopologyError::DuplicateRouter(r.id));
            }
            adjacency.insert(r.id, BTreeMap::new());
        }
        for l in &spec.links {
            if l.a == l.b {
                return Err(TopologyError::SelfLoop(l.a));
            }
            for end in [l.a, l.b] {
                if !roles.contains_key(&end) {
                    return Err(TopologyError::UnknownRouter(end));
                }
            }
            if l.cost == 0 {
                return Err(TopologyError::ZeroCost(l.a, l.b));
            }
            let (lo, hi) = if l.a < l.b { (l.a, l.b) } else { (l.b, l.a) };
            if adjacency[&lo].contains_key(&hi) {
                return Err(TopologyError::DuplicateLink(lo, hi));
            }
            adjacency.get_mut(&lo).unwrap().insert(hi, l.cost);
            adjacency.get_mut(&hi).unwrap().insert(lo, l.cost);
        }
        if !roles.values().any(|r| *r == Role::Edge) {
            return Err(TopologyError::NoEdgeRouters);
        }

        let topo = Topology {
            roles,
            adjacency,
            link_count: spec.links.len(),
        };
        let root = *topo.roles.keys().next().unwrap();
        let mut seen = BTreeSet::from([root]);
        let mut stack = vec![root];
        while let Some(r) = stack.pop() {
            for n in topo.adjacency[&r].keys() {
                if seen.insert(*n) {
                    stack.push(*n);
                }
            }
        }
        if let Some(missing) = topo.roles.keys().find(|r| !seen.contains(r)) {
            return Err(TopologyError::Disconnected(*missing, root));
        }
        Ok(topo)
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn link_count(&self) -> usize {
        self.link_count
    }

    pub fn contains(&self, r: RouterId) -> bool {
        self.roles.contains_key(&r)
    }

    pub fn role(&self, r: RouterId) -> Option<Role> {
        self.roles.get(&r).copied()
    }

    /// Routers in ascending id order.
    pub fn routers(&self) -> impl Iterator<Item = RouterId> + '_ {
        self.roles.keys().copied()
    }

    /// Edge routers in ascending id order.
    pub fn edge_routers(&self) -> impl Iterator<Item = RouterId> + '_ {
        self.roles
            .iter()
            .filter(|(_, role)| **role == Role::Edge)
            .map(|(r, _)| *r)
    }

    /// Neighbors of `r` with link costs, in ascending id order.
    pub fn neighbors(&self, r: RouterId) -> impl Iterator<Item = (RouterId, u32)> + '_ {
        self.adjacency
            .get(&r)
            .into_iter()
            .flat_map(|m| m.iter().map(|(n, c)| (*n, *c)))
    }

    pub fn link_cost(&self, a: RouterId, b: RouterId) -> Option<u32> {
        self.adjacency.get(&a)?.get(&b).copied()
    }

    /// Reconstructs a spec equivalent to this topology (links listed once, low id first).
    pub fn to_spec(&self) -> TopologySpec {
        let routers = self
            .roles
            .iter()
            .map(|(id, role)| RouterSpec { id: *id, role: *role })
            .collect();
        let links = self
            .adjacency
            .iter()
            .flat_map(|(a, ns)| {
                ns.iter()
                    .filter(move |(b, _)| *a < **b)
                    .map(move |(b, c)| LinkSpec { a: *a, b: *b, cost: *c })
            })
            .collect();
        TopologySpec { routers, links }
    }

    /// Minimum path cost from `source` to every router.
    pub fn distances(&self, source: RouterId) -> Result<BTreeMap<RouterId, u64>, TopologyError> {
        if !self.contains(source) {
            return Err(TopologyError::UnknownRouter(source));
        }
        let mut dist: BTreeMap<RouterId, u64> = BTreeMap::new();
        let mut heap = BinaryHeap::from([Reverse((0u64, source))]);
        while let Some(Reverse((d, r))) = heap.pop() {
            if dist.contains_key(&r) {
                continue;
            }
            dist.insert(r, d);
            for (n, c) in self.neighbors(r) {
                if !dist.contains_key(&n) {
                    heap.push(Reverse((d + c as u64, n)));
                }
            }
        }
        Ok(dist)
    }

    /// Next hops from `source` to every destination.
    ///
    /// Among all neighbors that start some minimum-cost path, the one with the
    /// smallest id wins.
    pub fn shortest_paths(&self, source: RouterId) -> Result<NextHopTable, TopologyError> {
        let dist = self.distances(source)?;
        let mut order: Vec<(u64, RouterId)> = dist.iter().map(|(r, d)| (*d, *r)).collect();
        order.sort_unstable();

        // min over the union of first-hop sets equals min over predecessors' minima
        let mut first_hop: BTreeMap<RouterId, RouterId> = BTreeMap::new();
        first_hop.insert(source, source);
        for &(d, r) in order.iter().skip(1) {
            let best = self
                .neighbors(r)
                .filter(|(p, c)| dist[p] + *c as u64 == d)
                .map(|(p, _)| if p == source { r } else { first_hop[&p] })
                .min()
                .expect("reachable router has a shortest-path predecessor");
            first_hop.insert(r, best);
        }
        Ok(NextHopTable {
            source,
            next_hops: first_hop,
            distances: dist,
        })
    }
}

/// Next hop from one source router to every destination. The source maps to itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NextHopTable {
    source: RouterId,
    next_hops: BTreeMap<RouterId, RouterId>,
    distances: BTreeMap<RouterId, u64>,
}

impl NextHopTable {
    pub fn source(&self) -> RouterId {
        self.source
    }

    pub fn next_hop(&self, dest: RouterId) -> Option<RouterId> {
        self.next_hops.get(&dest).copied()
    }

    pub fn distance(&self, dest: RouterId) -> Option<u64> {
        self.distances.get(&dest).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (RouterId, RouterId)> + '_ {
        self.next_hops.iter().map(|(d, n)| (*d, *n))
    }
}

/// One [`NextHopTable`] per router: the unicast routing state of the domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingTables {
    tables: BTreeMap<RouterId, NextHopTable>,
}

impl RoutingTables {
    pub fn compute(topo: &Topology) -> Self {
        let tables = topo
            .routers()
            .map(|r| (r, topo.shortest_paths(r).expect("router is in topology")))
            .collect();
        RoutingTables { tables }
    }

    pub fn table(&self, r: RouterId) -> Result<&NextHopTable, TopologyError> {
        self.tables.get(&r).ok_or(TopologyError::UnknownRouter(r))
    }

    pub fn next_hop(&self, from: RouterId, to: RouterId) -> Result<RouterId, TopologyError> {
        self.table(from)?
            .next_hop(to)
            .ok_or(TopologyError::UnknownRouter(to))
    }

    /// Hop-by-hop path obtained by following each router's own next hop.
    pub fn path_to(&self, source: RouterId, dest: RouterId) -> Result<Vec<RouterId>, TopologyError> {
        self.table(dest)?;
        let mut path = vec![source];
        let mut at = source;
        while at != dest {
            at = self.next_hop(at, dest)?;
            path.push(at);
            // next hops strictly decrease distance, so this cannot trigger
            assert!(path.len() <= self.tables.len(), "forwarding loop towards {dest}");
        }
        Ok(path)
    }
}
