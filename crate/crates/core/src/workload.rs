// SPDX-License-Identifier: Apache-2.0
//! Replayable workloads: end-site growth and multicast group churn.
//!
//! [`generate`] turns seeded parameters into a [`Schedule`]; [`SimState::apply`]
//! replays events against every enabled forwarding plane, keeping the
//! [`Membership`] ground truth, the (S,G) state and the BIER overlays in step.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bier::{BierDomain, BierError};
use crate::multicast::{GroupId, Membership, MulticastError, SgKey, SgState};
use crate::topology::{Role, RouterId, RoutingTables, Topology};
use crate::unicast::{AddressPlan, EndSite, SiteId, UnicastError, UnicastPlane};

/// Name of the generator recorded in schedule metadata.
pub const RNG_ALGORITHM: &str = "chacha8";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    AddSite { site: SiteId, edge: RouterId },
    /// Creates the group on first use; later events add further sources.
    AddGroup { group: GroupId, source: RouterId },
    Join { group: GroupId, receiver: RouterId },
    Leave { group: GroupId, receiver: RouterId },
    RemoveGroup { group: GroupId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Event {
    pub time: u64,
    pub kind: EventKind,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            EventKind::AddSite { site, edge } => write!(f, "{} add_site {site} {edge}", self.time),
            EventKind::AddGroup { group, source } => write!(f, "{} add_group {group} {source}", self.time),
            EventKind::Join { group, receiver } => write!(f, "{} join {group} {receiver}", self.time),
            EventKind::Leave { group, receiver } => write!(f, "{} leave {group} {receiver}", self.time),
            EventKind::RemoveGroup { group } => write!(f, "{} remove_group {group}", self.time),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkloadError {
    #[error("invalid workload parameters: {0}")]
    InvalidParams(String),
    #[error("schedule line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl FromStr for Event {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let fields: Vec<&str> = s.split_whitespace().collect();
        let num = |i: usize| -> Result<u64, String> {
            fields
                .get(i)
                .ok_or_else(|| format!("missing field {}", i + 1))?
                .parse::<u64>()
                .map_err(|e| format!("field {}: {e}", i + 1))
        };
        let id = |i: usize| -> Result<u32, String> {
            u32::try_from(num(i)?).map_err(|_| format!("field {} out of range", i + 1))
        };
        let arity = |n: usize| {
            if fields.len() == n {
                Ok(())
            } else {
                Err(format!("expected {n} fields, got {}", fields.len()))
            }
        };
        let time = num(0)?;
        let kind = match fields.get(1).copied() {
            Some("add_site") => {
                arity(4)?;
                EventKind::AddSite { site: SiteId(id(2)?), edge: RouterId(id(3)?) }
            }
            Some("add_group") => {
                arity(4)?;
                EventKind::AddGroup { group: GroupId(id(2)?), source: RouterId(id(3)?) }
            }
            Some("join") => {
                arity(4)?;
                EventKind::Join { group: GroupId(id(2)?), receiver: RouterId(id(3)?) }
            }
            Some("leave") => {
                arity(4)?;
                EventKind::Leave { group: GroupId(id(2)?), receiver: RouterId(id(3)?) }
            }
            Some("remove_group") => {
                arity(3)?;
                EventKind::RemoveGroup { group: GroupId(id(2)?) }
            }
            Some(other) => return Err(format!("unknown event kind {other:?}")),
            None => return Err("missing event kind".into()),
        };
        Ok(Event { time, kind })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadParams {
    pub seed: u64,
    pub n_groups: usize,
    pub members_min: usize,
    pub members_max: usize,
    pub churn_events: usize,
    pub n_sites: usize,
    pub sources_per_group: usize,
    pub events_per_tick: usize,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        WorkloadParams {
            seed: 1,
            n_groups: 0,
            members_min: 1,
            members_max: 1,
            churn_events: 0,
            n_sites: 0,
            sources_per_group: 1,
            events_per_tick: 1,
        }
    }
}

impl WorkloadParams {
    pub fn validate(&self, edge_count: usize) -> Result<(), WorkloadError> {
        let bad = |m: String| Err(WorkloadError::InvalidParams(m));
        if self.members_min > self.members_max {
            return bad(format!("members_min {} > members_max {}", self.members_min, self.members_max));
        }
        if self.members_max > edge_count {
            return bad(format!("members_max {} exceeds {edge_count} edge routers", self.members_max));
        }
        if self.sources_per_group == 0 || self.sources_per_group > edge_count {
            return bad(format!("sources_per_group must be in 1..={edge_count}"));
        }
        if self.events_per_tick == 0 {
            return bad("events_per_tick must be at least 1".into());
        }
        if self.n_sites > 1 << 16 {
            return bad("n_sites exceeds the generated identifier space (65536)".into());
        }
        Ok(())
    }
}

/// Time-ordered events plus the parameters that produced them, if any.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Schedule {
    pub events: Vec<Event>,
    pub params: Option<WorkloadParams>,
}

impl Schedule {
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn last_tick(&self) -> u64 {
        self.events.last().map_or(0, |e| e.time)
    }

    /// Line-oriented text: `tick kind args...`, `#` comments.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# fwdstate schedule v1\n");
        if let Some(p) = &self.params {
            out.push_str(&format!(
                "# generator {RNG_ALGORITHM} params {}\n",
                serde_json::to_string(p).expect("params serialize")
            ));
        }
        for e in &self.events {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, WorkloadError> {
        let mut events: Vec<Event> = Vec::new();
        let mut params = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |msg: String| WorkloadError::Parse { line: i + 1, msg };
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(json) = comment.trim().strip_prefix(&format!("generator {RNG_ALGORITHM} params ")) {
                    params = Some(serde_json::from_str(json).map_err(|e| err(e.to_string()))?);
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let ev: Event = line.parse().map_err(err)?;
            if events.last().is_some_and(|prev| prev.time > ev.time) {
                return Err(err("events out of time order".into()));
            }
            events.push(ev);
        }
        Ok(Schedule { events, params })
    }
}

/// Generates a schedule. Sources and receivers are drawn uniformly from the
/// edge routers; the same topology, parameters and seed give the same schedule.
///
/// Order: site additions, then each group's `AddGroup` events followed by its
/// joins, then churn. A churn step is a single join or leave on a random live
/// group; one step in ten instead turns a group over (leaves for every member,
/// `RemoveGroup`, and a fresh group with new members).
pub fn generate(topo: &Topology, params: &WorkloadParams) -> Result<Schedule, WorkloadError> {
    let edges: Vec<RouterId> = topo.edge_routers().collect();
    params.validate(edges.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut kinds = Vec::new();

    for k in 0..params.n_sites {
        let edge = edges[rng.gen_range(0..edges.len())];
        kinds.push(EventKind::AddSite { site: SiteId(k as u32), edge });
    }

    let mut live: BTreeMap<GroupId, BTreeSet<RouterId>> = BTreeMap::new();
    let mut next_group = 0u32;
    let mut new_group = |rng: &mut ChaCha8Rng, kinds: &mut Vec<EventKind>, live: &mut BTreeMap<GroupId, BTreeSet<RouterId>>| {
        let group = GroupId(next_group);
        next_group += 1;
        for i in index::sample(rng, edges.len(), params.sources_per_group) {
            kinds.push(EventKind::AddGroup { group, source: edges[i] });
        }
        let m = rng.gen_range(params.members_min..=params.members_max);
        let mut members = BTreeSet::new();
        for i in index::sample(rng, edges.len(), m) {
            kinds.push(EventKind::Join { group, receiver: edges[i] });
            members.insert(edges[i]);
        }
        live.insert(group, members);
    };

    for _ in 0..params.n_groups {
        new_group(&mut rng, &mut kinds, &mut live);
    }

    for _ in 0..params.churn_events {
        if live.is_empty() || rng.gen_range(0..10) == 0 {
            if !live.is_empty() {
                let victim = *live.keys().nth(rng.gen_range(0..live.len())).unwrap();
                for receiver in live.remove(&victim).unwrap() {
                    kinds.push(EventKind::Leave { group: victim, receiver });
                }
                kinds.push(EventKind::RemoveGroup { group: victim });
            }
            new_group(&mut rng, &mut kinds, &mut live);
            continue;
        }
        let group = *live.keys().nth(rng.gen_range(0..live.len())).unwrap();
        let members = live.get_mut(&group).unwrap();
        let outsiders: Vec<RouterId> = edges.iter().filter(|e| !members.contains(e)).copied().collect();
        let leave = !members.is_empty() && (outsiders.is_empty() || rng.gen_bool(0.5));
        if leave {
            let receiver = *members.iter().nth(rng.gen_range(0..members.len())).unwrap();
            members.remove(&receiver);
            kinds.push(EventKind::Leave { group, receiver });
        } else {
            let receiver = outsiders[rng.gen_range(0..outsiders.len())];
            members.insert(receiver);
            kinds.push(EventKind::Join { group, receiver });
        }
    }

    let per_tick = params.events_per_tick as u64;
    let events = kinds
        .into_iter()
        .enumerate()
        .map(|(i, kind)| Event { time: i as u64 / per_tick, kind })
        .collect();
    Ok(Schedule {
        events,
        params: Some(params.clone()),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error(transparent)]
    Unicast(#[from] UnicastError),
    #[error(transparent)]
    Multicast(#[from] MulticastError),
    #[error(transparent)]
    Bier(#[from] BierError),
    #[error("router {0} is not an edge router")]
    NotEdge(RouterId),
    #[error("unknown group {0}")]
    UnknownGroup(GroupId),
    #[error("{router} already sources group {group}")]
    DuplicateSource { group: GroupId, router: RouterId },
    #[error("{receiver} is not a member of group {group}")]
    NotMember { group: GroupId, receiver: RouterId },
    #[error("group {0} still has receivers")]
    GroupNotEmpty(GroupId),
}

/// Which planes a [`SimState`] maintains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Planes {
    pub unicast: bool,
    pub stateful: bool,
    pub bier: bool,
    pub bsl: usize,
    /// BFER set; defaults to every edge router.
    pub bfers: Option<BTreeSet<RouterId>>,
}

impl Default for Planes {
    fn default() -> Self {
        Planes {
            unicast: true,
            stateful: true,
            bier: true,
            bsl: crate::bier::DEFAULT_BSL,
            bfers: None,
        }
    }
}

/// Everything a replay mutates.
#[derive(Debug, Clone)]
pub struct SimState {
    topo: Topology,
    routing: RoutingTables,
    pub unicast: Option<UnicastPlane>,
    pub membership: Membership,
    pub sg: Option<SgState>,
    pub bier: Option<BierDomain>,
}

impl SimState {
    pub fn new(topo: &Topology, plan: AddressPlan, planes: &Planes) -> Result<Self, SimError> {
        let routing = RoutingTables::compute(topo);
        let unicast = if planes.unicast {
            Some(UnicastPlane::build(topo, &routing, plan)?)
        } else {
            None
        };
        let bier = if planes.bier {
            let bfers: Vec<RouterId> = match &planes.bfers {
                Some(set) => set.iter().copied().collect(),
                None => topo.edge_routers().collect(),
            };
            Some(BierDomain::build(topo, &routing, bfers, planes.bsl)?)
        } else {
            None
        };
        Ok(SimState {
            topo: topo.clone(),
            routing,
            unicast,
            membership: Membership::default(),
            sg: planes.stateful.then(SgState::new),
            bier,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn routing(&self) -> &RoutingTables {
        &self.routing
    }

    fn require_edge(&self, r: RouterId) -> Result<(), SimError> {
        match self.topo.role(r) {
            Some(Role::Edge) => Ok(()),
            Some(Role::Core) => Err(SimError::NotEdge(r)),
            None => Err(UnicastError::UnknownRouter(r).into()),
        }
    }

    pub fn apply(&mut self, kind: &EventKind) -> Result<(), SimError> {
        match *kind {
            EventKind::AddSite { site, edge } => {
                self.require_edge(edge)?;
                if let Some(u) = &mut self.unicast {
                    u.add_site(EndSite::generated(site, edge))?;
                }
            }
            EventKind::AddGroup { group, source } => {
                self.require_edge(source)?;
                if let Some(b) = &self.bier {
                    b.position(source)?;
                }
                if self.membership.group(group).is_some_and(|m| m.sources.contains(&source)) {
                    return Err(SimError::DuplicateSource { group, router: source });
                }
                self.membership.add_source(group, source);
                let receivers: Vec<RouterId> =
                    self.membership.group(group).unwrap().receivers.iter().copied().collect();
                if let Some(sg) = &mut self.sg {
                    for r in &receivers {
                        sg.join(&self.routing, SgKey { source, group }, *r)?;
                    }
                }
                if let Some(b) = &mut self.bier {
                    let positions = receivers.iter().map(|r| b.position(*r)).collect::<Result<Vec<_>, _>>()?;
                    let overlay = b.overlay_mut(source)?;
                    overlay.add_group(group)?;
                    for p in positions {
                        overlay.add_egress(group, p)?;
                    }
                }
            }
            EventKind::Join { group, receiver } => {
                self.require_edge(receiver)?;
                let position = match &self.bier {
                    Some(b) => Some(b.position(receiver)?),
                    None => None,
                };
                let members = self.membership.group(group).ok_or(SimError::UnknownGroup(group))?;
                if members.receivers.contains(&receiver) {
                    return Ok(());
                }
                let sources: Vec<RouterId> = members.sources.iter().copied().collect();
                self.membership.add_receiver(group, receiver);
                if let Some(sg) = &mut self.sg {
                    for s in &sources {
                        sg.join(&self.routing, SgKey { source: *s, group }, receiver)?;
                    }
                }
                if let (Some(b), Some(p)) = (&mut self.bier, position) {
                    for s in &sources {
                        b.overlay_mut(*s)?.add_egress(group, p)?;
                    }
                }
            }
            EventKind::Leave { group, receiver } => {
                let members = self.membership.group(group).ok_or(SimError::UnknownGroup(group))?;
                if !members.receivers.contains(&receiver) {
                    return Err(SimError::NotMember { group, receiver });
                }
                let sources: Vec<RouterId> = members.sources.iter().copied().collect();
                self.membership.remove_receiver(group, receiver);
                if let Some(sg) = &mut self.sg {
                    for s in &sources {
                        sg.leave(&self.routing, SgKey { source: *s, group }, receiver)?;
                    }
                }
                if let Some(b) = &mut self.bier {
                    let p = b.position(receiver)?;
                    for s in &sources {
                        b.overlay_mut(*s)?.remove_egress(group, p)?;
                    }
                }
            }
            EventKind::RemoveGroup { group } => {
                let members = self.membership.group(group).ok_or(SimError::UnknownGroup(group))?;
                if !members.receivers.is_empty() {
                    return Err(SimError::GroupNotEmpty(group));
                }
                let removed = self.membership.remove_group(group).unwrap();
                if let Some(b) = &mut self.bier {
                    for s in removed.sources {
                        b.overlay_mut(s)?.remove_group(group)?;
                    }
                }
            }
        }
        Ok(())
    }
}
