// SPDX-License-Identifier: Apache-2.0
//! Unicast forwarding planes over a provider / end-site address model.
//!
//! Three designs share one [`UnicastPlane`]:
//!
//! - **flat**: every router carries a route for every end-site identifier
//!   prefix and every provider locator prefix.
//! - **map-and-encap**: routers carry provider locators only. Edge routers
//!   hold a [`MappingTable`] from identifier prefixes to the locator of the
//!   egress edge, push an outer locator header at ingress and strip it at
//!   egress.
//! - **MPLS**: the ingress edge classifies the destination into a FEC (the
//!   egress router) and pushes a label; transit routers swap labels without
//!   touching any prefix table; the egress pops and delivers.
//!
//! Each provider attaches to the simulated domain through exactly one edge
//! router, so a provider locator names one egress.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;
use std::ops::AddAssign;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::packet::Packet;
use crate::topology::{Role, RouterId, RoutingTables, Topology};

/// An IPv4 prefix with all host bits zero. Length 0 is the default route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Prefix {
    addr: u32,
    len: u8,
}

fn mask(len: u8) -> u32 {
    if len == 0 {
        0
    } else {
        u32::MAX << (32 - len as u32)
    }
}

#[allow(clippy::len_without_is_empty)]
impl Prefix {
    pub fn new(addr: u32, len: u8) -> Result<Self, PrefixError> {
        if len > 32 {
            return Err(PrefixError::Length(len));
        }
        if addr & !mask(len) != 0 {
            return Err(PrefixError::HostBits(Ipv4Addr::from(addr), len));
        }
        Ok(Prefix { addr, len })
    }

    /// Builds a prefix, zeroing any host bits of `addr`.
    pub fn truncating(addr: u32, len: u8) -> Self {
        let len = len.min(32);
        Prefix {
            addr: addr & mask(len),
            len,
        }
    }

    pub fn addr(&self) -> u32 {
        self.addr
    }

    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn is_default(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, addr: u32) -> bool {
        addr & mask(self.len) == self.addr
    }

    pub fn overlaps(&self, other: &Prefix) -> bool {
        let shorter = self.len.min(other.len);
        self.addr & mask(shorter) == other.addr & mask(shorter)
    }
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", Ipv4Addr::from(self.addr), self.len)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PrefixError {
    #[error("prefix length {0} exceeds 32")]
    Length(u8),
    #[error("{0}/{1} has host bits set")]
    HostBits(Ipv4Addr, u8),
    #[error("cannot parse prefix {0:?}")]
    Syntax(String),
}

impl FromStr for Prefix {
    type Err = PrefixError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let syntax = || PrefixError::Syntax(s.to_string());
        let (addr, len) = s.split_once('/').ok_or_else(syntax)?;
        let addr: Ipv4Addr = addr.parse().map_err(|_| syntax())?;
        let len: u8 = len.parse().map_err(|_| syntax())?;
        Prefix::new(u32::from(addr), len)
    }
}

impl TryFrom<String> for Prefix {
    type Error = PrefixError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Prefix> for String {
    fn from(p: Prefix) -> String {
        p.to_string()
    }
}

/// Longest-prefix-match table, indexed by prefix length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LpmTable<T> {
    by_len: BTreeMap<u8, BTreeMap<u32, T>>,
    len: usize,
}

impl<T> Default for LpmTable<T> {
    fn default() -> Self {
        LpmTable {
            by_len: BTreeMap::new(),
            len: 0,
        }
    }
}

impl<T> LpmTable<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prefix: Prefix, value: T) -> Option<T> {
        let old = self.by_len.entry(prefix.len).or_default().insert(prefix.addr, value);
        if old.is_none() {
            self.len += 1;
        }
        old
    }

    pub fn remove(&mut self, prefix: &Prefix) -> Option<T> {
        let slot = self.by_len.get_mut(&prefix.len)?;
        let old = slot.remove(&prefix.addr);
        if old.is_some() {
            self.len -= 1;
            if slot.is_empty() {
                self.by_len.remove(&prefix.len);
            }
        }
        old
    }

    pub fn get(&self, prefix: &Prefix) -> Option<&T> {
        self.by_len.get(&prefix.len)?.get(&prefix.addr)
    }

    pub fn lookup(&self, addr: u32) -> Option<(Prefix, &T)> {
        self.by_len.iter().rev().find_map(|(len, slot)| {
            let key = addr & mask(*len);
            slot.get(&key).map(|v| (Prefix { addr: key, len: *len }, v))
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Entries ordered by (length, address).
    pub fn iter(&self) -> impl Iterator<Item = (Prefix, &T)> + '_ {
        self.by_len.iter().flat_map(|(len, slot)| {
            slot.iter().map(move |(addr, v)| (Prefix { addr: *addr, len: *len }, v))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SiteId(pub u32);

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProviderId(pub u32);

impl fmt::Display for ProviderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An end site with a provider-independent identifier prefix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndSite {
    pub id: SiteId,
    pub prefix: Prefix,
    pub edge: RouterId,
}

impl EndSite {
    /// A site with the conventional generated identifier prefix.
    pub fn generated(id: SiteId, edge: RouterId) -> Self {
        EndSite {
            id,
            prefix: site_prefix(id),
            edge,
        }
    }

    /// An address inside the identifier prefix.
    pub fn host_addr(&self) -> u32 {
        if self.prefix.len >= 32 {
            self.prefix.addr
        } else {
            self.prefix.addr | 1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provider {
    pub id: ProviderId,
    pub locator: Prefix,
    pub routers: BTreeSet<RouterId>,
}

/// Identifier prefix for generated site `id`: a /24 carved out of 10.0.0.0/8.
pub fn site_prefix(id: SiteId) -> Prefix {
    assert!(id.0 < 1 << 16, "generated site ids must fit in 10.0.0.0/8");
    Prefix::truncating(0x0a00_0000 | (id.0 << 8), 24)
}

/// Locator prefix for generated provider `index`: a /16 counted up from 100.64.0.0.
pub fn provider_locator(index: u32) -> Prefix {
    assert!(index < 1 << 14, "generated provider index out of range");
    Prefix::truncating(0x6440_0000u32.wrapping_add(index << 16), 16)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UnicastError {
    #[error("site {0} is attached to {1}, which is not an edge router")]
    UnattachedSite(SiteId, RouterId),
    #[error("duplicate site {0}")]
    DuplicateSite(SiteId),
    #[error("unknown site {0}")]
    UnknownSite(SiteId),
    #[error("duplicate provider {0}")]
    DuplicateProvider(ProviderId),
    #[error("prefix {0} overlaps {1}")]
    OverlappingPrefix(Prefix, Prefix),
    #[error("router {0} belongs to no provider")]
    RouterWithoutProvider(RouterId),
    #[error("router {0} belongs to more than one provider")]
    RouterInMultipleProviders(RouterId),
    #[error("provider {0} owns {1} edge routers, expected exactly one")]
    ProviderEdgeCount(ProviderId, usize),
    #[error("unknown router {0}")]
    UnknownRouter(RouterId),
    #[error("no route at {0} for {1}")]
    NoRoute(RouterId, Ipv4Addr),
    #[error("no mapping at {0} for {1}")]
    NoMapping(RouterId, Ipv4Addr),
    #[error("no label binding at {0}: {1}")]
    NoLabelBinding(RouterId, String),
    #[error("forwarding loop after {0} hops")]
    ForwardingLoop(usize),
}

/// Registered providers and end sites.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AddressPlan {
    providers: BTreeMap<ProviderId, Provider>,
    sites: BTreeMap<SiteId, EndSite>,
}

impl AddressPlan {
    pub fn new(providers: Vec<Provider>, sites: Vec<EndSite>) -> Result<Self, UnicastError> {
        let mut plan = AddressPlan::default();
        for p in providers {
            if let Some(other) = plan.providers.values().find(|o| o.locator.overlaps(&p.locator)) {
                return Err(UnicastError::OverlappingPrefix(p.locator, other.locator));
            }
            if plan.providers.contains_key(&p.id) {
                return Err(UnicastError::DuplicateProvider(p.id));
            }
            plan.providers.insert(p.id, p);
        }
        for s in sites {
            plan.add_site(s)?;
        }
        Ok(plan)
    }

    /// One provider per edge router; each core router joins the provider of
    /// its nearest edge (lowest id on ties).
    pub fn per_edge_providers(topo: &Topology) -> Self {
        let edges: Vec<RouterId> = topo.edge_routers().collect();
        let mut owned: BTreeMap<RouterId, BTreeSet<RouterId>> =
            edges.iter().map(|e| (*e, BTreeSet::from([*e]))).collect();
        let dist: BTreeMap<RouterId, BTreeMap<RouterId, u64>> = edges
            .iter()
            .map(|e| (*e, topo.distances(*e).expect("edge is in topology")))
            .collect();
        for r in topo.routers().filter(|r| topo.role(*r) == Some(Role::Core)) {
            let nearest = edges
                .iter()
                .min_by_key(|e| (dist[*e][&r], **e))
                .expect("topology has an edge router");
            owned.get_mut(nearest).unwrap().insert(r);
        }
        let providers = edges
            .iter()
            .enumerate()
            .map(|(i, e)| Provider {
                id: ProviderId(i as u32),
                locator: provider_locator(i as u32),
                routers: owned.remove(e).unwrap(),
            })
            .collect();
        AddressPlan::new(providers, Vec::new()).expect("generated locators are disjoint")
    }

    pub fn providers(&self) -> impl Iterator<Item = &Provider> {
        self.providers.values()
    }

    pub fn sites(&self) -> impl Iterator<Item = &EndSite> {
        self.sites.values()
    }

    pub fn site(&self, id: SiteId) -> Option<&EndSite> {
        self.sites.get(&id)
    }

    pub fn site_count(&self) -> usize {
        self.sites.len()
    }

    pub fn provider_count(&self) -> usize {
        self.providers.len()
    }

    /// Registers a site. Its prefix must not overlap any site or locator.
    pub fn add_site(&mut self, site: EndSite) -> Result<(), UnicastError> {
        if self.sites.contains_key(&site.id) {
            return Err(UnicastError::DuplicateSite(site.id));
        }
        let clash = self
            .sites
            .values()
            .map(|s| s.prefix)
            .chain(self.providers.values().map(|p| p.locator))
            .find(|p| p.overlaps(&site.prefix));
        if let Some(p) = clash {
            return Err(UnicastError::OverlappingPrefix(site.prefix, p));
        }
        self.sites.insert(site.id, site);
        Ok(())
    }

    pub fn move_site(&mut self, id: SiteId, edge: RouterId) -> Result<(), UnicastError> {
        let site = self.sites.get_mut(&id).ok_or(UnicastError::UnknownSite(id))?;
        site.edge = edge;
        Ok(())
    }

    /// Checks attachments and provider ownership against `topo`.
    /// Returns the egress edge of every provider.
    pub fn validate(&self, topo: &Topology) -> Result<BTreeMap<ProviderId, RouterId>, UnicastError> {
        let mut owner: BTreeMap<RouterId, ProviderId> = BTreeMap::new();
        let mut egress = BTreeMap::new();
        for p in self.providers.values() {
            let mut edges = Vec::new();
            for r in &p.routers {
                match topo.role(*r) {
                    None => return Err(UnicastError::UnknownRouter(*r)),
                    Some(Role::Edge) => edges.push(*r),
                    Some(Role::Core) => {}
                }
                if owner.insert(*r, p.id).is_some() {
                    return Err(UnicastError::RouterInMultipleProviders(*r));
                }
            }
            if edges.len() != 1 {
                return Err(UnicastError::ProviderEdgeCount(p.id, edges.len()));
            }
            egress.insert(p.id, edges[0]);
        }
        if let Some(r) = topo.routers().find(|r| !owner.contains_key(r)) {
            return Err(UnicastError::RouterWithoutProvider(r));
        }
        for s in self.sites.values() {
            self.check_attached(topo, s)?;
        }
        Ok(egress)
    }

    fn check_attached(&self, topo: &Topology, s: &EndSite) -> Result<(), UnicastError> {
        match topo.role(s.edge) {
            Some(Role::Edge) => Ok(()),
            _ => Err(UnicastError::UnattachedSite(s.id, s.edge)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FibTarget {
    Local,
    NextHop(RouterId),
}

/// Per-router prefix tables.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PerRouter<T> {
    routers: BTreeMap<RouterId, T>,
}

impl<T: Default> PerRouter<T> {
    fn for_routers(routers: impl Iterator<Item = RouterId>) -> Self {
        PerRouter {
            routers: routers.map(|r| (r, T::default())).collect(),
        }
    }
}

impl<T> PerRouter<T> {
    pub fn get(&self, r: RouterId) -> Option<&T> {
        self.routers.get(&r)
    }

    fn get_mut(&mut self, r: RouterId) -> Option<&mut T> {
        self.routers.get_mut(&r)
    }

    pub fn iter(&self) -> impl Iterator<Item = (RouterId, &T)> {
        self.routers.iter().map(|(r, t)| (*r, t))
    }
}

pub type Fib = PerRouter<LpmTable<FibTarget>>;
/// Identifier prefix to egress locator, held at edge routers only.
pub type MappingTable = PerRouter<LpmTable<Prefix>>;
/// Identifier prefix to egress router (the FEC), held at edge routers only.
pub type FecTable = PerRouter<LpmTable<RouterId>>;

impl<V> PerRouter<LpmTable<V>> {
    pub fn entries(&self, r: RouterId) -> usize {
        self.get(r).map_or(0, LpmTable::len)
    }
}

fn target_towards(routing: &RoutingTables, at: RouterId, dest: RouterId) -> FibTarget {
    if at == dest {
        FibTarget::Local
    } else {
        FibTarget::NextHop(routing.next_hop(at, dest).expect("validated routers"))
    }
}

fn locator_fib(topo: &Topology, routing: &RoutingTables, plan: &AddressPlan, egress: &BTreeMap<ProviderId, RouterId>) -> Fib {
    let mut fib = Fib::for_routers(topo.routers());
    for (r, table) in fib.routers.iter_mut() {
        for p in plan.providers() {
            table.insert(p.locator, target_towards(routing, *r, egress[&p.id]));
        }
    }
    fib
}

/// Flat FIB: one route per end-site identifier plus one per provider locator, at every router.
pub fn build_flat_fib(topo: &Topology, routing: &RoutingTables, plan: &AddressPlan) -> Result<Fib, UnicastError> {
    let egress = plan.validate(topo)?;
    let mut fib = locator_fib(topo, routing, plan, &egress);
    for (r, table) in fib.routers.iter_mut() {
        for s in plan.sites() {
            table.insert(s.prefix, target_towards(routing, *r, s.edge));
        }
    }
    Ok(fib)
}

/// Locator-only FIB plus edge mapping tables.
pub fn build_mapencap_tables(
    topo: &Topology,
    routing: &RoutingTables,
    plan: &AddressPlan,
) -> Result<(Fib, MappingTable), UnicastError> {
    let egress = plan.validate(topo)?;
    let fib = locator_fib(topo, routing, plan, &egress);
    let mut mapping = MappingTable::for_routers(topo.edge_routers());
    let owner = router_provider(plan);
    for table in mapping.routers.values_mut() {
        for s in plan.sites() {
            table.insert(s.prefix, plan.providers[&owner[&s.edge]].locator);
        }
    }
    Ok((fib, mapping))
}

fn router_provider(plan: &AddressPlan) -> BTreeMap<RouterId, ProviderId> {
    plan.providers()
        .flat_map(|p| p.routers.iter().map(move |r| (*r, p.id)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(pub u32);

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

/// Labels 0-15 are reserved.
const FIRST_LABEL: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelAction {
    Swap { out: Label, next_hop: RouterId },
    Pop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FecAction {
    Push { label: Label, next_hop: RouterId },
    /// Ingress is the egress.
    Deliver,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouterLabels {
    incoming: BTreeMap<Label, LabelAction>,
    fec: BTreeMap<RouterId, FecAction>,
    next_label: u32,
}

impl Default for RouterLabels {
    fn default() -> Self {
        RouterLabels {
            incoming: BTreeMap::new(),
            fec: BTreeMap::new(),
            next_label: FIRST_LABEL,
        }
    }
}

impl RouterLabels {
    fn allocate(&mut self) -> Label {
        let l = Label(self.next_label);
        self.next_label += 1;
        l
    }

    pub fn incoming(&self, label: Label) -> Option<LabelAction> {
        self.incoming.get(&label).copied()
    }

    pub fn fec(&self, egress: RouterId) -> Option<FecAction> {
        self.fec.get(&egress).copied()
    }

    pub fn len(&self) -> usize {
        self.incoming.len() + self.fec.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelEntry {
    Fec { router: RouterId, egress: RouterId, action: FecAction },
    Incoming { router: RouterId, label: Label, action: LabelAction },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelTables {
    routers: BTreeMap<RouterId, RouterLabels>,
    lsps: BTreeSet<(RouterId, RouterId)>,
}

impl LabelTables {
    pub fn router(&self, r: RouterId) -> Option<&RouterLabels> {
        self.routers.get(&r)
    }

    pub fn entries(&self, r: RouterId) -> usize {
        self.routers.get(&r).map_or(0, RouterLabels::len)
    }

    pub fn lsp_count(&self) -> usize {
        self.lsps.len()
    }

    /// Installs the LSP from `ingress` to `egress` along the shortest path and
    /// returns the entries added. Re-establishing an existing LSP adds nothing.
    pub fn establish_lsp(
        &mut self,
        routing: &RoutingTables,
        ingress: RouterId,
        egress: RouterId,
    ) -> Result<Vec<LabelEntry>, UnicastError> {
        let path = routing.path_to(ingress, egress).map_err(|e| match e {
            crate::topology::TopologyError::UnknownRouter(r) => UnicastError::UnknownRouter(r),
            other => panic!("unexpected routing error {other}"),
        })?;
        if !self.lsps.insert((ingress, egress)) {
            return Ok(Vec::new());
        }
        let mut delta = Vec::with_capacity(path.len());
        if path.len() == 1 {
            let action = FecAction::Deliver;
            self.routers.entry(ingress).or_default().fec.insert(egress, action);
            delta.push(LabelEntry::Fec { router: ingress, egress, action });
            return Ok(delta);
        }
        // downstream allocation: each hop after the ingress picks the label it expects
        let labels: Vec<Label> = path[1..]
            .iter()
            .map(|r| self.routers.entry(*r).or_default().allocate())
            .collect();
        let action = FecAction::Push { label: labels[0], next_hop: path[1] };
        self.routers.entry(ingress).or_default().fec.insert(egress, action);
        delta.push(LabelEntry::Fec { router: ingress, egress, action });
        for (i, r) in path[1..].iter().enumerate() {
            let action = match (labels.get(i + 1), path.get(i + 2)) {
                (Some(out), Some(next_hop)) => LabelAction::Swap { out: *out, next_hop: *next_hop },
                _ => LabelAction::Pop,
            };
            self.routers.get_mut(r).unwrap().incoming.insert(labels[i], action);
            delta.push(LabelEntry::Incoming { router: *r, label: labels[i], action });
        }
        Ok(delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnicastMode {
    Flat,
    MapEncap,
    Mpls,
}

impl UnicastMode {
    pub const ALL: [UnicastMode; 3] = [UnicastMode::Flat, UnicastMode::MapEncap, UnicastMode::Mpls];

    pub fn as_str(self) -> &'static str {
        match self {
            UnicastMode::Flat => "flat",
            UnicastMode::MapEncap => "mapencap",
            UnicastMode::Mpls => "mpls",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ForwardingDecision {
    Deliver { site: SiteId, packet: Packet },
    Send { next_hop: RouterId, packet: Packet },
}

/// Table accesses performed by one router.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Lookups {
    /// Longest-prefix-match lookups in a FIB or FEC classifier.
    pub prefix: u64,
    pub mapping: u64,
    pub label: u64,
}

impl AddAssign for Lookups {
    fn add_assign(&mut self, o: Lookups) {
        self.prefix += o.prefix;
        self.mapping += o.mapping;
        self.label += o.label;
    }
}

pub type LookupCounters = BTreeMap<RouterId, Lookups>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hop {
    pub router: RouterId,
    pub lookups: Lookups,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnicastTrace {
    pub hops: Vec<Hop>,
    pub site: SiteId,
}

impl UnicastTrace {
    pub fn routers(&self) -> Vec<RouterId> {
        self.hops.iter().map(|h| h.router).collect()
    }

    /// Hops strictly between ingress and egress.
    pub fn transit(&self) -> &[Hop] {
        if self.hops.len() <= 2 {
            &[]
        } else {
            &self.hops[1..self.hops.len() - 1]
        }
    }
}

/// Forwarding state for all three unicast designs over one topology.
///
/// Tables are rebuilt or patched only between workload events.
#[derive(Debug, Clone)]
pub struct UnicastPlane {
    topo: Topology,
    routing: RoutingTables,
    plan: AddressPlan,
    egress: BTreeMap<ProviderId, RouterId>,
    owner: BTreeMap<RouterId, ProviderId>,
    flat: Fib,
    locators: Fib,
    mapping: MappingTable,
    fec: FecTable,
    labels: LabelTables,
    local_sites: PerRouter<LpmTable<SiteId>>,
}

impl UnicastPlane {
    pub fn build(topo: &Topology, routing: &RoutingTables, plan: AddressPlan) -> Result<Self, UnicastError> {
        let egress = plan.validate(topo)?;
        let flat = build_flat_fib(topo, routing, &plan)?;
        let (locators, mapping) = build_mapencap_tables(topo, routing, &plan)?;
        let mut labels = LabelTables::default();
        let edges: Vec<RouterId> = topo.edge_routers().collect();
        for ingress in &edges {
            for egress in &edges {
                labels.establish_lsp(routing, *ingress, *egress)?;
            }
        }
        let mut plane = UnicastPlane {
            topo: topo.clone(),
            routing: routing.clone(),
            owner: router_provider(&plan),
            egress,
            flat,
            locators,
            mapping,
            fec: FecTable::for_routers(topo.edge_routers()),
            labels,
            local_sites: PerRouter::for_routers(topo.routers()),
            plan,
        };
        let sites: Vec<EndSite> = plane.plan.sites().cloned().collect();
        for s in &sites {
            plane.install_edge_state(s);
        }
        Ok(plane)
    }

    fn install_edge_state(&mut self, s: &EndSite) {
        for table in self.fec.routers.values_mut() {
            table.insert(s.prefix, s.edge);
        }
        self.local_sites.get_mut(s.edge).unwrap().insert(s.prefix, s.id);
    }

    pub fn plan(&self) -> &AddressPlan {
        &self.plan
    }

    pub fn flat_fib(&self) -> &Fib {
        &self.flat
    }

    /// The locator-only FIB used by map-and-encap and as the MPLS IGP table.
    pub fn locator_fib(&self) -> &Fib {
        &self.locators
    }

    pub fn mapping(&self) -> &MappingTable {
        &self.mapping
    }

    pub fn fec(&self) -> &FecTable {
        &self.fec
    }

    pub fn labels(&self) -> &LabelTables {
        &self.labels
    }

    /// Adds one site, patching every table in place.
    pub fn add_site(&mut self, site: EndSite) -> Result<(), UnicastError> {
        self.plan.check_attached(&self.topo, &site)?;
        self.plan.add_site(site.clone())?;
        for (r, table) in self.flat.routers.iter_mut() {
            table.insert(site.prefix, target_towards(&self.routing, *r, site.edge));
        }
        let locator = self.plan.providers[&self.owner[&site.edge]].locator;
        for table in self.mapping.routers.values_mut() {
            table.insert(site.prefix, locator);
        }
        self.install_edge_state(&site);
        Ok(())
    }

    /// Re-homes a site onto another edge router.
    pub fn move_site(&mut self, id: SiteId, edge: RouterId) -> Result<(), UnicastError> {
        let old = self.plan.site(id).cloned().ok_or(UnicastError::UnknownSite(id))?;
        let moved = EndSite { edge, ..old.clone() };
        self.plan.check_attached(&self.topo, &moved)?;
        self.plan.move_site(id, edge)?;
        for (r, table) in self.flat.routers.iter_mut() {
            table.insert(moved.prefix, target_towards(&self.routing, *r, edge));
        }
        let locator = self.plan.providers[&self.owner[&edge]].locator;
        for table in self.mapping.routers.values_mut() {
            table.insert(moved.prefix, locator);
        }
        self.local_sites.get_mut(old.edge).unwrap().remove(&old.prefix);
        self.install_edge_state(&moved);
        Ok(())
    }

    /// Per-router (fib, mapping, label) entry counts for `mode`.
    pub fn state_counts(&self, mode: UnicastMode, r: RouterId) -> (usize, usize, usize) {
        match mode {
            UnicastMode::Flat => (self.flat.entries(r), 0, 0),
            UnicastMode::MapEncap => (self.locators.entries(r), self.mapping.entries(r), 0),
            UnicastMode::Mpls => (self.locators.entries(r), self.fec.entries(r), self.labels.entries(r)),
        }
    }

    fn local_site(&self, at: RouterId, addr: u32) -> Result<SiteId, UnicastError> {
        self.local_sites
            .get(at)
            .and_then(|t| t.lookup(addr))
            .map(|(_, s)| *s)
            .ok_or(UnicastError::NoRoute(at, Ipv4Addr::from(addr)))
    }

    fn fib_step(
        &self,
        fib: &Fib,
        at: RouterId,
        addr: u32,
        lookups: &mut Lookups,
    ) -> Result<FibTarget, UnicastError> {
        lookups.prefix += 1;
        fib.get(at)
            .ok_or(UnicastError::UnknownRouter(at))?
            .lookup(addr)
            .map(|(_, t)| *t)
            .ok_or(UnicastError::NoRoute(at, Ipv4Addr::from(addr)))
    }

    /// One forwarding step at router `at`.
    pub fn forward(
        &self,
        mode: UnicastMode,
        packet: Packet,
        at: RouterId,
        counters: &mut LookupCounters,
    ) -> Result<ForwardingDecision, UnicastError> {
        self.forward_at(mode, packet, at, counters.entry(at).or_default())
    }

    fn forward_at(
        &self,
        mode: UnicastMode,
        mut packet: Packet,
        at: RouterId,
        lookups: &mut Lookups,
    ) -> Result<ForwardingDecision, UnicastError> {
        if !self.topo.contains(at) {
            return Err(UnicastError::UnknownRouter(at));
        }
        match mode {
            UnicastMode::Flat => match self.fib_step(&self.flat, at, packet.dst, lookups)? {
                FibTarget::Local => {
                    let site = self.local_site(at, packet.dst)?;
                    Ok(ForwardingDecision::Deliver { site, packet })
                }
                FibTarget::NextHop(next_hop) => Ok(ForwardingDecision::Send { next_hop, packet }),
            },
            UnicastMode::MapEncap => {
                if packet.outer.is_none() {
                    let mapping = self
                        .mapping
                        .get(at)
                        .ok_or(UnicastError::NoMapping(at, Ipv4Addr::from(packet.dst)))?;
                    lookups.mapping += 1;
                    let (_, locator) = mapping
                        .lookup(packet.dst)
                        .ok_or(UnicastError::NoMapping(at, Ipv4Addr::from(packet.dst)))?;
                    if self.egress[&self.owner[&at]] == at && locator == &self.plan.providers[&self.owner[&at]].locator {
                        let site = self.local_site(at, packet.dst)?;
                        return Ok(ForwardingDecision::Deliver { site, packet });
                    }
                    packet.outer = Some(locator.addr());
                }
                let outer = packet.outer.expect("outer header present");
                match self.fib_step(&self.locators, at, outer, lookups)? {
                    FibTarget::NextHop(next_hop) => Ok(ForwardingDecision::Send { next_hop, packet }),
                    FibTarget::Local => {
                        packet.outer = None;
                        let site = self.local_site(at, packet.dst)?;
                        Ok(ForwardingDecision::Deliver { site, packet })
                    }
                }
            }
            UnicastMode::Mpls => {
                let table = self.labels.router(at);
                match packet.label {
                    None => {
                        let fec = self
                            .fec
                            .get(at)
                            .ok_or_else(|| UnicastError::NoLabelBinding(at, format!("no FEC classifier for {}", Ipv4Addr::from(packet.dst))))?;
                        lookups.prefix += 1;
                        let (_, egress) = fec
                            .lookup(packet.dst)
                            .ok_or(UnicastError::NoRoute(at, Ipv4Addr::from(packet.dst)))?;
                        lookups.label += 1;
                        match table.and_then(|t| t.fec(*egress)) {
                            Some(FecAction::Deliver) => {
                                let site = self.local_site(at, packet.dst)?;
                                Ok(ForwardingDecision::Deliver { site, packet })
                            }
                            Some(FecAction::Push { label, next_hop }) => {
                                packet.label = Some(label);
                                Ok(ForwardingDecision::Send { next_hop, packet })
                            }
                            None => Err(UnicastError::NoLabelBinding(at, format!("no LSP to {egress}"))),
                        }
                    }
                    Some(label) => {
                        lookups.label += 1;
                        match table.and_then(|t| t.incoming(label)) {
                            Some(LabelAction::Swap { out, next_hop }) => {
                                packet.label = Some(out);
                                Ok(ForwardingDecision::Send { next_hop, packet })
                            }
                            Some(LabelAction::Pop) => {
                                packet.label = None;
                                let site = self.local_site(at, packet.dst)?;
                                Ok(ForwardingDecision::Deliver { site, packet })
                            }
                            None => Err(UnicastError::NoLabelBinding(at, format!("unknown label {label}"))),
                        }
                    }
                }
            }
        }
    }

    /// Forwards `packet` from `ingress` until delivery, recording per-hop lookups.
    pub fn trace(
        &self,
        mode: UnicastMode,
        packet: Packet,
        ingress: RouterId,
        counters: &mut LookupCounters,
    ) -> Result<UnicastTrace, UnicastError> {
        let mut hops = Vec::new();
        let mut at = ingress;
        let mut packet = packet;
        loop {
            if hops.len() > self.topo.len() {
                return Err(UnicastError::ForwardingLoop(hops.len()));
            }
            let mut lookups = Lookups::default();
            let decision = self.forward_at(mode, packet, at, &mut lookups)?;
            *counters.entry(at).or_default() += lookups;
            hops.push(Hop { router: at, lookups });
            match decision {
                ForwardingDecision::Deliver { site, .. } => return Ok(UnicastTrace { hops, site }),
                ForwardingDecision::Send { next_hop, packet: p } => {
                    at = next_hop;
                    packet = p;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::TopologySpec;
    use proptest::prelude::*;

    fn r(i: u32) -> RouterId {
        RouterId(i)
    }

    /// A(0, edge) - B(1, core) - C(2, edge)
    fn line() -> (Topology, RoutingTables) {
        let mut s = TopologySpec::default();
        s.router(0, Role::Edge).router(1, Role::Core).router(2, Role::Edge);
        s.link(0, 1, 1).link(1, 2, 1);
        let t = Topology::build(&s).unwrap();
        let rt = RoutingTables::compute(&t);
        (t, rt)
    }

    /// Ring of four cores with three single-edge providers hanging off it.
    fn three_providers() -> (Topology, RoutingTables) {
        let mut s = TopologySpec::default();
        for i in 0..4 {
            s.router(i, Role::Core);
        }
        for i in 4..7 {
            s.router(i, Role::Edge);
        }
        s.link(0, 1, 1).link(1, 2, 1).link(2, 3, 1).link(3, 0, 1);
        s.link(4, 0, 1).link(5, 1, 1).link(6, 2, 1);
        let t = Topology::build(&s).unwrap();
        let rt = RoutingTables::compute(&t);
        (t, rt)
    }

    fn with_sites(topo: &Topology, n: u32) -> AddressPlan {
        let mut plan = AddressPlan::per_edge_providers(topo);
        let edges: Vec<RouterId> = topo.edge_routers().collect();
        for i in 0..n {
            plan.add_site(EndSite::generated(SiteId(i), edges[i as usize % edges.len()])).unwrap();
        }
        plan
    }

    #[test]
    fn prefix_basics() {
        let p: Prefix = "10.1.0.0/16".parse().unwrap();
        assert!(p.contains(u32::from(Ipv4Addr::new(10, 1, 200, 3))));
        assert!(!p.contains(u32::from(Ipv4Addr::new(10, 2, 0, 0))));
        assert!(p.overlaps(&"10.0.0.0/8".parse().unwrap()));
        assert!(!p.overlaps(&"10.2.0.0/16".parse().unwrap()));
        assert_eq!(p.to_string(), "10.1.0.0/16");
        assert!("10.1.0.1/16".parse::<Prefix>().is_err());
        assert!("10.1.0.0/33".parse::<Prefix>().is_err());
        let d: Prefix = "0.0.0.0/0".parse().unwrap();
        assert!(d.is_default() && d.contains(u32::MAX));
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, "\"10.1.0.0/16\"");
    }

    #[test]
    fn flat_fib_counts() {
        let (t, rt) = line();
        let plan = AddressPlan::new(
            vec![Provider {
                id: ProviderId(0),
                locator: provider_locator(0),
                routers: [r(0), r(1)].into(),
            }, Provider {
                id: ProviderId(1),
                locator: provider_locator(1),
                routers: [r(2)].into(),
            }],
            vec![],
        )
        .unwrap();
        let fib = build_flat_fib(&t, &rt, &plan).unwrap();
        assert!(t.routers().all(|x| fib.entries(x) == 2));

        let (t, rt) = three_providers();
        let plan = with_sites(&t, 100);
        let fib = build_flat_fib(&t, &rt, &plan).unwrap();
        for x in 0..4 {
            assert_eq!(fib.entries(r(x)), 103);
        }
    }

    #[test]
    fn single_provider_zero_sites_one_entry() {
        let mut s = TopologySpec::default();
        s.router(0, Role::Core).router(1, Role::Edge).link(0, 1, 1);
        let t = Topology::build(&s).unwrap();
        let rt = RoutingTables::compute(&t);
        let plan = AddressPlan::per_edge_providers(&t);
        assert_eq!(plan.provider_count(), 1);
        let fib = build_flat_fib(&t, &rt, &plan).unwrap();
        assert_eq!(fib.entries(r(0)), 1);
        assert_eq!(fib.entries(r(1)), 1);
    }

    #[test]
    fn mapencap_core_holds_locators_only() {
        let (t, rt) = three_providers();
        let (fib, mapping) = build_mapencap_tables(&t, &rt, &with_sites(&t, 100)).unwrap();
        for x in 0..4 {
            assert_eq!(fib.entries(r(x)), 3);
            assert_eq!(mapping.entries(r(x)), 0);
        }
        for x in 4..7 {
            assert_eq!(mapping.entries(r(x)), 100);
        }
        let (fib, mapping) = build_mapencap_tables(&t, &rt, &with_sites(&t, 0)).unwrap();
        assert_eq!(fib.entries(r(0)), 3);
        assert!(t.routers().all(|x| mapping.entries(x) == 0));
    }

    #[test]
    fn adding_a_site_grows_flat_by_one_and_leaves_core_locators() {
        let (t, rt) = three_providers();
        let mut plane = UnicastPlane::build(&t, &rt, with_sites(&t, 10)).unwrap();
        let before: Vec<_> = t.routers().map(|x| (plane.flat_fib().entries(x), plane.locator_fib().entries(x))).collect();
        plane.add_site(EndSite::generated(SiteId(10), r(5))).unwrap();
        for (i, x) in t.routers().enumerate() {
            assert_eq!(plane.flat_fib().entries(x), before[i].0 + 1);
            assert_eq!(plane.locator_fib().entries(x), before[i].1);
        }
        // incremental patch equals a rebuild
        let rebuilt = UnicastPlane::build(&t, &rt, plane.plan().clone()).unwrap();
        assert_eq!(rebuilt.flat_fib(), plane.flat_fib());
        assert_eq!(rebuilt.mapping(), plane.mapping());
        assert_eq!(rebuilt.fec(), plane.fec());
    }

    #[test]
    fn site_move_touches_only_mapping() {
        let (t, rt) = three_providers();
        let mut plane = UnicastPlane::build(&t, &rt, with_sites(&t, 9)).unwrap();
        let fib = plane.locator_fib().clone();
        let mapping = plane.mapping().clone();
        let old_edge = plane.plan().site(SiteId(0)).unwrap().edge;
        let new_edge = if old_edge == r(4) { r(5) } else { r(4) };
        plane.move_site(SiteId(0), new_edge).unwrap();
        assert_eq!(plane.locator_fib(), &fib);
        assert_ne!(plane.mapping(), &mapping);
        let rebuilt = UnicastPlane::build(&t, &rt, plane.plan().clone()).unwrap();
        assert_eq!(rebuilt.mapping(), plane.mapping());
        assert_eq!(rebuilt.flat_fib(), plane.flat_fib());
        let site = plane.plan().site(SiteId(0)).unwrap().clone();
        let mut c = LookupCounters::new();
        for mode in UnicastMode::ALL {
            let tr = plane.trace(mode, Packet::to(site.host_addr()), r(6), &mut c).unwrap();
            assert_eq!(tr.site, SiteId(0));
            assert_eq!(*tr.routers().last().unwrap(), new_edge);
        }
    }

    #[test]
    fn unattached_site_rejected() {
        let (t, rt) = line();
        let mut plan = AddressPlan::per_edge_providers(&t);
        plan.add_site(EndSite::generated(SiteId(0), r(1))).unwrap();
        assert_eq!(
            build_flat_fib(&t, &rt, &plan).unwrap_err(),
            UnicastError::UnattachedSite(SiteId(0), r(1))
        );
        assert!(build_mapencap_tables(&t, &rt, &plan).is_err());
    }

    #[test]
    fn plan_validation() {
        let (t, _) = line();
        let loc = provider_locator(0);
        assert!(matches!(
            AddressPlan::new(
                vec![
                    Provider { id: ProviderId(0), locator: loc, routers: [r(0)].into() },
                    Provider { id: ProviderId(1), locator: loc, routers: [r(2)].into() },
                ],
                vec![]
            ),
            Err(UnicastError::OverlappingPrefix(..))
        ));
        let two_edges = AddressPlan::new(
            vec![Provider { id: ProviderId(0), locator: loc, routers: [r(0), r(1), r(2)].into() }],
            vec![],
        )
        .unwrap();
        assert_eq!(two_edges.validate(&t), Err(UnicastError::ProviderEdgeCount(ProviderId(0), 2)));
        let missing = AddressPlan::new(
            vec![Provider { id: ProviderId(0), locator: loc, routers: [r(0)].into() }],
            vec![],
        )
        .unwrap();
        assert!(matches!(missing.validate(&t), Err(UnicastError::RouterWithoutProvider(_))));
        let mut plan = AddressPlan::per_edge_providers(&t);
        plan.add_site(EndSite::generated(SiteId(0), r(0))).unwrap();
        let clash = EndSite { id: SiteId(1), prefix: "10.0.0.0/8".parse().unwrap(), edge: r(2) };
        assert!(matches!(plan.add_site(clash), Err(UnicastError::OverlappingPrefix(..))));
        assert_eq!(
            plan.add_site(EndSite::generated(SiteId(0), r(2))),
            Err(UnicastError::DuplicateSite(SiteId(0)))
        );
    }

    #[test]
    fn mapencap_trace_on_line() {
        let (t, rt) = line();
        let mut plan = AddressPlan::per_edge_providers(&t);
        plan.add_site(EndSite::generated(SiteId(7), r(2))).unwrap();
        let plane = UnicastPlane::build(&t, &rt, plan).unwrap();
        let dst = plane.plan().site(SiteId(7)).unwrap().host_addr();
        let c_locator = plane.plan().providers().find(|p| p.routers.contains(&r(2))).unwrap().locator;
        let mut c = LookupCounters::new();

        let d = plane.forward(UnicastMode::MapEncap, Packet::to(dst), r(0), &mut c).unwrap();
        let ForwardingDecision::Send { next_hop, packet } = d else { panic!("{d:?}") };
        assert_eq!(next_hop, r(1));
        assert_eq!(packet.outer, Some(c_locator.addr()));
        assert_eq!(c[&r(0)], Lookups { prefix: 1, mapping: 1, label: 0 });

        let d = plane.forward(UnicastMode::MapEncap, packet, r(1), &mut c).unwrap();
        let ForwardingDecision::Send { next_hop, packet } = d else { panic!("{d:?}") };
        assert_eq!(next_hop, r(2));
        assert_eq!(c[&r(1)], Lookups { prefix: 1, mapping: 0, label: 0 });

        let d = plane.forward(UnicastMode::MapEncap, packet, r(2), &mut c).unwrap();
        let ForwardingDecision::Deliver { site, packet } = d else { panic!("{d:?}") };
        assert_eq!(site, SiteId(7));
        assert_eq!(packet.outer, None);
        assert_eq!(packet.dst, dst);
    }

    #[test]
    fn mapencap_at_core_without_outer_header_has_no_mapping() {
        let (t, rt) = line();
        let mut plan = AddressPlan::per_edge_providers(&t);
        plan.add_site(EndSite::generated(SiteId(0), r(2))).unwrap();
        let plane = UnicastPlane::build(&t, &rt, plan).unwrap();
        let dst = plane.plan().site(SiteId(0)).unwrap().host_addr();
        assert!(matches!(
            plane.forward(UnicastMode::MapEncap, Packet::to(dst), r(1), &mut LookupCounters::new()),
            Err(UnicastError::NoMapping(..))
        ));
        assert!(matches!(
            plane.forward(UnicastMode::Flat, Packet::to(0x0b00_0001), r(0), &mut LookupCounters::new()),
            Err(UnicastError::NoRoute(..))
        ));
    }

    #[test]
    fn deliver_at_destination_edge() {
        let (t, rt) = line();
        let mut plan = AddressPlan::per_edge_providers(&t);
        plan.add_site(EndSite::generated(SiteId(0), r(0))).unwrap();
        let plane = UnicastPlane::build(&t, &rt, plan).unwrap();
        let dst = plane.plan().site(SiteId(0)).unwrap().host_addr();
        for mode in UnicastMode::ALL {
            let d = plane.forward(mode, Packet::to(dst), r(0), &mut LookupCounters::new()).unwrap();
            assert!(matches!(d, ForwardingDecision::Deliver { site: SiteId(0), .. }), "{mode:?}");
        }
    }

    #[test]
    fn mpls_transit_does_no_prefix_lookups() {
        let (t, rt) = line();
        let mut plan = AddressPlan::per_edge_providers(&t);
        plan.add_site(EndSite::generated(SiteId(0), r(2))).unwrap();
        let plane = UnicastPlane::build(&t, &rt, plan).unwrap();
        let dst = plane.plan().site(SiteId(0)).unwrap().host_addr();
        let mut c = LookupCounters::new();
        let tr = plane.trace(UnicastMode::Mpls, Packet::to(dst), r(0), &mut c).unwrap();
        assert_eq!(tr.routers(), vec![r(0), r(1), r(2)]);
        assert_eq!(c[&r(1)].prefix, 0);
        assert_eq!(c[&r(1)].label, 1);
        assert_eq!(c[&r(0)].prefix, 1);
    }

    #[test]
    fn establish_lsp_on_line() {
        let (_, rt) = line();
        let mut lt = LabelTables::default();
        let delta = lt.establish_lsp(&rt, r(0), r(2)).unwrap();
        assert_eq!(delta.len(), 3);
        let FecAction::Push { label: l1, next_hop } = lt.router(r(0)).unwrap().fec(r(2)).unwrap() else {
            panic!()
        };
        assert_eq!(next_hop, r(1));
        let LabelAction::Swap { out: l2, next_hop } = lt.router(r(1)).unwrap().incoming(l1).unwrap() else {
            panic!()
        };
        assert_eq!(next_hop, r(2));
        assert_eq!(lt.router(r(2)).unwrap().incoming(l2), Some(LabelAction::Pop));
        // idempotent
        let snapshot = lt.clone();
        assert!(lt.establish_lsp(&rt, r(0), r(2)).unwrap().is_empty());
        assert_eq!(lt, snapshot);
        // path length - 1 incoming entries
        assert_eq!(lt.entries(r(1)) + lt.entries(r(2)), 2);
    }

    #[test]
    fn establish_lsp_to_self() {
        let (_, rt) = line();
        let mut lt = LabelTables::default();
        let delta = lt.establish_lsp(&rt, r(0), r(0)).unwrap();
        assert_eq!(
            delta,
            vec![LabelEntry::Fec { router: r(0), egress: r(0), action: FecAction::Deliver }]
        );
        assert_eq!(lt.entries(r(1)), 0);
        assert_eq!(lt.establish_lsp(&rt, r(0), r(9)), Err(UnicastError::UnknownRouter(r(9))));
    }

    #[test]
    fn all_modes_deliver_to_the_same_site() {
        let (t, rt) = three_providers();
        let plane = UnicastPlane::build(&t, &rt, with_sites(&t, 12)).unwrap();
        let mut c = LookupCounters::new();
        for s in plane.plan().sites() {
            for ingress in t.edge_routers() {
                let flat = plane.trace(UnicastMode::Flat, Packet::to(s.host_addr()), ingress, &mut c).unwrap();
                assert_eq!(flat.site, s.id);
                assert_eq!(flat.routers(), rt.path_to(ingress, s.edge).unwrap());
                for mode in [UnicastMode::MapEncap, UnicastMode::Mpls] {
                    let tr = plane.trace(mode, Packet::to(s.host_addr()), ingress, &mut c).unwrap();
                    assert_eq!(tr.site, flat.site);
                    assert_eq!(tr.routers(), flat.routers());
                }
            }
        }
        for x in 0..4 {
            assert_eq!(c.get(&r(x)).map_or(0, |l| l.mapping), 0);
        }
    }

    fn brute_lpm(entries: &[(Prefix, u32)], addr: u32) -> Option<(Prefix, u32)> {
        entries
            .iter()
            .filter(|(p, _)| p.contains(addr))
            .max_by_key(|(p, _)| p.len())
            .copied()
    }

    proptest! {
        #[test]
        fn lpm_matches_brute_force(
            raw in prop::collection::vec((any::<u32>(), 0u8..=32), 0..64),
            probes in prop::collection::vec(any::<u32>(), 1..32),
        ) {
            let mut table = LpmTable::new();
            let mut entries: Vec<(Prefix, u32)> = Vec::new();
            for (i, (addr, len)) in raw.into_iter().enumerate() {
                let p = Prefix::truncating(addr, len);
                if entries.iter().any(|(q, _)| *q == p) {
                    continue;
                }
                table.insert(p, i as u32);
                entries.push((p, i as u32));
            }
            prop_assert_eq!(table.len(), entries.len());
            // probe both random addresses and addresses inside stored prefixes
            let inside = entries.iter().map(|(p, _)| p.addr() | (!mask(p.len()) & 0x5555_5555));
            for addr in probes.into_iter().chain(inside) {
                let got = table.lookup(addr).map(|(p, v)| (p, *v));
                prop_assert_eq!(got, brute_lpm(&entries, addr));
            }
        }
    }
}
