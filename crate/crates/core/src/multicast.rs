// SPDX-License-Identifier: Apache-2.0
//! Stateful source-specific multicast.
//!
//! Receivers join hop by hop along the receiver-rooted shortest path towards
//! the source edge, installing (S,G) entries with an incoming interface (the
//! RPF neighbor) and a set of outgoing interfaces. Leaves prune entries whose
//! outgoing set becomes empty. Interfaces are modeled as neighbor router ids.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{RouterId, RoutingTables, TopologyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupId(pub u32);

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// (S,G): the source is identified by its attached edge router.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SgKey {
    pub source: RouterId,
    pub group: GroupId,
}

impl fmt::Display for SgKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.source, self.group)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Iif {
    /// The source is attached here.
    Local,
    Neighbor(RouterId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Oif {
    LocalDeliver,
    Neighbor(RouterId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SgEntry {
    pub iif: Iif,
    pub oifs: BTreeSet<Oif>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MulticastError {
    #[error("unknown router {0}")]
    UnknownRouter(RouterId),
    #[error("{receiver} has not joined {sg}")]
    NotJoined { sg: SgKey, receiver: RouterId },
    #[error("no {sg} state at {router}")]
    NoState { sg: SgKey, router: RouterId },
    #[error("RPF check failed for {sg} at {router}: arrived from {arrived:?}, expected {expected:?}")]
    RpfFailure {
        sg: SgKey,
        router: RouterId,
        arrived: Iif,
        expected: Iif,
    },
    #[error("multicast copy exceeded {0} hops")]
    ForwardingLoop(usize),
}

impl From<TopologyError> for MulticastError {
    fn from(e: TopologyError) -> Self {
        match e {
            TopologyError::UnknownRouter(r) => MulticastError::UnknownRouter(r),
            other => panic!("unexpected topology error {other}"),
        }
    }
}

/// Per-router (S,G) forwarding state.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SgState {
    routers: BTreeMap<RouterId, BTreeMap<SgKey, SgEntry>>,
}

impl SgState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entry(&self, router: RouterId, sg: SgKey) -> Option<&SgEntry> {
        self.routers.get(&router)?.get(&sg)
    }

    pub fn sg_state_count(&self, router: RouterId) -> usize {
        self.routers.get(&router).map_or(0, BTreeMap::len)
    }

    pub fn total_entries(&self) -> usize {
        self.routers.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.routers.is_empty()
    }

    /// Routers holding state for `sg`.
    pub fn tree(&self, sg: SgKey) -> BTreeSet<RouterId> {
        self.routers
            .iter()
            .filter(|(_, m)| m.contains_key(&sg))
            .map(|(r, _)| *r)
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (RouterId, SgKey, &SgEntry)> {
        self.routers
            .iter()
            .flat_map(|(r, m)| m.iter().map(move |(k, e)| (*r, *k, e)))
    }

    /// Walks from `receiver_edge` towards the source, grafting the branch.
    /// Stops at the first router that already forwards to the previous hop.
    pub fn join(&mut self, routing: &RoutingTables, sg: SgKey, receiver_edge: RouterId) -> Result<(), MulticastError> {
        let path = routing.path_to(receiver_edge, sg.source)?;
        for (i, hop) in path.iter().enumerate() {
            let downstream = if i == 0 { Oif::LocalDeliver } else { Oif::Neighbor(path[i - 1]) };
            let iif = path.get(i + 1).map_or(Iif::Local, |up| Iif::Neighbor(*up));
            let entry = self
                .routers
                .entry(*hop)
                .or_default()
                .entry(sg)
                .or_insert_with(|| SgEntry { iif, oifs: BTreeSet::new() });
            debug_assert_eq!(entry.iif, iif, "RPF neighbor is a function of the router");
            if !entry.oifs.insert(downstream) {
                break;
            }
        }
        Ok(())
    }

    /// Removes local delivery at `receiver_edge` and prunes upstream while
    /// entries lose their last outgoing interface.
    pub fn leave(&mut self, routing: &RoutingTables, sg: SgKey, receiver_edge: RouterId) -> Result<(), MulticastError> {
        routing.table(receiver_edge)?;
        routing.table(sg.source)?;
        let not_joined = MulticastError::NotJoined { sg, receiver: receiver_edge };
        let mut at = receiver_edge;
        let mut remove = Oif::LocalDeliver;
        loop {
            let table = self.routers.get_mut(&at).ok_or(not_joined.clone())?;
            let entry = table.get_mut(&sg).ok_or(not_joined.clone())?;
            if !entry.oifs.remove(&remove) {
                return Err(not_joined);
            }
            if !entry.oifs.is_empty() {
                return Ok(());
            }
            let iif = entry.iif;
            table.remove(&sg);
            if table.is_empty() {
                self.routers.remove(&at);
            }
            match iif {
                Iif::Local => return Ok(()),
                Iif::Neighbor(up) => {
                    remove = Oif::Neighbor(at);
                    at = up;
                }
            }
        }
    }

    /// Replicates a packet of `sg` arriving at `at`. `arrived_from` is
    /// [`Iif::Local`] when the packet is injected by the attached source.
    pub fn forward(&self, sg: SgKey, at: RouterId, arrived_from: Iif) -> Result<Vec<Oif>, MulticastError> {
        let entry = self.entry(at, sg).ok_or(MulticastError::NoState { sg, router: at })?;
        if entry.iif != arrived_from {
            return Err(MulticastError::RpfFailure {
                sg,
                router: at,
                arrived: arrived_from,
                expected: entry.iif,
            });
        }
        Ok(entry.oifs.iter().copied().collect())
    }

    /// Injects one packet at the source edge and returns every router that
    /// delivered locally, once per copy, sorted. A source edge without state
    /// delivers nothing.
    pub fn deliver(&self, sg: SgKey, max_hops: usize) -> Result<Vec<RouterId>, MulticastError> {
        let mut delivered = Vec::new();
        if self.entry(sg.source, sg).is_none() {
            return Ok(delivered);
        }
        let mut queue = VecDeque::from([(sg.source, Iif::Local, 0usize)]);
        while let Some((at, from, depth)) = queue.pop_front() {
            if depth > max_hops {
                return Err(MulticastError::ForwardingLoop(depth));
            }
            for oif in self.forward(sg, at, from)? {
                match oif {
                    Oif::LocalDeliver => delivered.push(at),
                    Oif::Neighbor(n) => queue.push_back((n, Iif::Neighbor(at), depth + 1)),
                }
            }
        }
        delivered.sort();
        Ok(delivered)
    }
}

/// Ground truth: sources and receiver edges of every active group.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Membership {
    groups: BTreeMap<GroupId, GroupMembers>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroupMembers {
    pub sources: BTreeSet<RouterId>,
    pub receivers: BTreeSet<RouterId>,
}

impl Membership {
    pub fn group(&self, g: GroupId) -> Option<&GroupMembers> {
        self.groups.get(&g)
    }

    pub fn groups(&self) -> impl Iterator<Item = (GroupId, &GroupMembers)> {
        self.groups.iter().map(|(g, m)| (*g, m))
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn contains(&self, g: GroupId) -> bool {
        self.groups.contains_key(&g)
    }

    /// Adds `source` to `g`, creating the group if needed. Returns false if
    /// the source was already present.
    pub fn add_source(&mut self, g: GroupId, source: RouterId) -> bool {
        self.groups.entry(g).or_default().sources.insert(source)
    }

    pub fn add_receiver(&mut self, g: GroupId, receiver: RouterId) -> Option<bool> {
        Some(self.groups.get_mut(&g)?.receivers.insert(receiver))
    }

    pub fn remove_receiver(&mut self, g: GroupId, receiver: RouterId) -> Option<bool> {
        Some(self.groups.get_mut(&g)?.receivers.remove(&receiver))
    }

    pub fn remove_group(&mut self, g: GroupId) -> Option<GroupMembers> {
        self.groups.remove(&g)
    }

    /// Active (S,G) pairs.
    pub fn sg_pairs(&self) -> impl Iterator<Item = SgKey> + '_ {
        self.groups
            .iter()
            .flat_map(|(g, m)| m.sources.iter().map(move |s| SgKey { source: *s, group: *g }))
    }
}
