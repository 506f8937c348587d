// SPDX-License-Identifier: Apache-2.0
//! Experiment runner: replays a scenario through every selected forwarding
//! mode, snapshots per-router state counts and probes delivery.
//!
//! Scaling numbers are only meaningful from a correct forwarding plane, so
//! every snapshot is accompanied by probes: one packet per active group per
//! multicast mode, and one packet per registered site per unicast mode.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bier::DEFAULT_BSL;
use crate::multicast::{GroupId, SgKey};
use crate::packet::Packet;
use crate::topology::{Role, RouterId, Topology, TopologySpec};
use crate::unicast::{AddressPlan, EndSite, LookupCounters, Provider, UnicastMode};
use crate::workload::{generate, Planes, Schedule, SimState, WorkloadParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Flat,
    #[serde(rename = "mapencap")]
    MapEncap,
    Mpls,
    StatefulMcast,
    Bier,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Flat, Mode::MapEncap, Mode::Mpls, Mode::StatefulMcast, Mode::Bier];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Flat => "flat",
            Mode::MapEncap => "mapencap",
            Mode::Mpls => "mpls",
            Mode::StatefulMcast => "stateful_mcast",
            Mode::Bier => "bier",
        }
    }

    pub fn unicast(self) -> Option<UnicastMode> {
        match self {
            Mode::Flat => Some(UnicastMode::Flat),
            Mode::MapEncap => Some(UnicastMode::MapEncap),
            Mode::Mpls => Some(UnicastMode::Mpls),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?} (expected one of flat, mapencap, mpls, stateful_mcast, bier)"))
    }
}

/// Deliberate corruption used to check that the delivery gate trips.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Fault {
    /// Removes `bfer`'s bit from the F-BM of its BIFT entry at `router`.
    ClearFbmBit { router: RouterId, bfer: RouterId },
}

fn default_modes() -> Vec<Mode> {
    Mode::ALL.to_vec()
}

fn default_bsl() -> usize {
    DEFAULT_BSL
}

fn default_interval() -> u64 {
    10
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub topology: TopologySpec,
    /// Defaults to one provider per edge router.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub providers: Option<Vec<Provider>>,
    /// Sites present before the schedule starts.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sites: Vec<EndSite>,
    #[serde(default)]
    pub workload: WorkloadParams,
    /// Schedule fixture to replay instead of generating one, relative to the
    /// scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule_file: Option<PathBuf>,
    #[serde(default = "default_modes")]
    pub modes: Vec<Mode>,
    #[serde(default = "default_bsl")]
    pub bsl: usize,
    /// BFER set override; must include every edge router.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bfers: Option<Vec<RouterId>>,
    #[serde(default = "default_interval")]
    pub snapshot_interval: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<Fault>,
    #[serde(skip)]
    pub schedule: Option<Schedule>,
}

impl Scenario {
    pub fn new(topology: TopologySpec) -> Self {
        Scenario {
            topology,
            providers: None,
            sites: Vec::new(),
            workload: WorkloadParams::default(),
            schedule_file: None,
            modes: default_modes(),
            bsl: DEFAULT_BSL,
            bfers: None,
            snapshot_interval: default_interval(),
            fault: None,
            schedule: None,
        }
    }

    /// Reads a JSON scenario and any schedule fixture it references.
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path).map_err(|e| RunError::Io(path.to_path_buf(), e.to_string()))?;
        let mut sc: Scenario =
            serde_json::from_str(&text).map_err(|e| RunError::Validation(format!("{}: {e}", path.display())))?;
        if let Some(rel) = &sc.schedule_file {
            let full = path.parent().unwrap_or(Path::new(".")).join(rel);
            let text = fs::read_to_string(&full).map_err(|e| RunError::Io(full.clone(), e.to_string()))?;
            sc.schedule =
                Some(Schedule::parse(&text).map_err(|e| RunError::Validation(format!("{}: {e}", full.display())))?);
        }
        Ok(sc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn has(&self, m: Mode) -> bool {
        self.modes.contains(&m)
    }

    /// Checks every cross-reference and produces the replay inputs.
    pub fn prepare(&self) -> Result<Prepared, RunError> {
        let invalid = |m: String| RunError::Validation(m);
        let topo = Topology::build(&self.topology).map_err(|e| invalid(format!("topology: {e}")))?;
        if self.modes.is_empty() {
            return Err(invalid("no modes selected".into()));
        }
        let unique: BTreeSet<Mode> = self.modes.iter().copied().collect();
        if unique.len() != self.modes.len() {
            return Err(invalid("modes listed more than once".into()));
        }
        if self.bsl == 0 {
            return Err(invalid("bsl must be at least 1".into()));
        }
        if self.snapshot_interval == 0 {
            return Err(invalid("snapshot_interval must be at least 1".into()));
        }
        let mut plan = match &self.providers {
            Some(p) => AddressPlan::new(p.clone(), Vec::new()).map_err(|e| invalid(format!("providers: {e}")))?,
            None => AddressPlan::per_edge_providers(&topo),
        };
        for s in &self.sites {
            plan.add_site(s.clone()).map_err(|e| invalid(format!("sites: {e}")))?;
        }
        plan.validate(&topo).map_err(|e| invalid(format!("address plan: {e}")))?;

        let bfers = match &self.bfers {
            None => None,
            Some(list) => {
                let set: BTreeSet<RouterId> = list.iter().copied().collect();
                if let Some(r) = set.iter().find(|r| !topo.contains(**r)) {
                    return Err(invalid(format!("bfers: unknown router {r}")));
                }
                if let Some(e) = topo.edge_routers().find(|e| !set.contains(e)) {
                    return Err(invalid(format!("bfers: edge router {e} must be a BFER")));
                }
                Some(set)
            }
        };
        let schedule = match &self.schedule {
            Some(s) => s.clone(),
            None => generate(&topo, &self.workload).map_err(|e| invalid(e.to_string()))?,
        };
        if let Some(Fault::ClearFbmBit { router, bfer }) = &self.fault {
            if !topo.contains(*router) || topo.role(*bfer) != Some(Role::Edge) {
                return Err(invalid("fault references unknown routers".into()));
            }
        }
        let planes = Planes {
            unicast: self.modes.iter().any(|m| m.unicast().is_some()),
            stateful: self.has(Mode::StatefulMcast),
            bier: self.has(Mode::Bier),
            bsl: self.bsl,
            bfers,
        };
        Ok(Prepared { topo, plan, schedule, planes })
    }
}

/// A validated scenario ready to replay.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub topo: Topology,
    pub plan: AddressPlan,
    pub schedule: Schedule,
    pub planes: Planes,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("tick {tick}: {msg}")]
    Replay { tick: u64, msg: String },
    #[error("{0}: {1}")]
    Io(PathBuf, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouterCounts {
    pub router: RouterId,
    pub role: Role,
    pub fib: usize,
    pub mapping: usize,
    pub labels: usize,
    pub sg: usize,
    pub bift: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSnapshot {
    pub tick: u64,
    /// Ascending router id.
    pub routers: Vec<RouterCounts>,
}

impl StateSnapshot {
    pub fn max_sg(&self, role: Role) -> usize {
        self.routers.iter().filter(|r| r.role == role).map(|r| r.sg).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryRow {
    pub tick: u64,
    pub group: GroupId,
    pub mode: Mode,
    pub ok: bool,
    /// BFERs that delivered locally, once per copy.
    pub delivered: Vec<RouterId>,
    pub expected: Vec<RouterId>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DeliveryReport {
    /// Ordered by tick, group, then mode.
    pub rows: Vec<DeliveryRow>,
}

impl DeliveryReport {
    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(|r| r.ok)
    }

    pub fn failures(&self) -> impl Iterator<Item = &DeliveryRow> {
        self.rows.iter().filter(|r| !r.ok)
    }
}

/// Unicast probe results and lookup instrumentation, per mode.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UnicastReport {
    pub probes: u64,
    pub failures: Vec<String>,
    pub counters: BTreeMap<UnicastMode, LookupCounters>,
    /// Prefix lookups at hops strictly between ingress and egress.
    pub transit_prefix_lookups: BTreeMap<UnicastMode, u64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub snapshots: Vec<StateSnapshot>,
    pub delivery: DeliveryReport,
    pub unicast: UnicastReport,
    pub schedule: Schedule,
}

impl RunOutput {
    pub fn all_ok(&self) -> bool {
        self.delivery.all_ok() && self.unicast.failures.is_empty()
    }
}

/// Replays the scenario, snapshotting at ticks 0, I, 2I, ... up to the
/// first multiple of I at or after the last event.
pub fn run(scenario: &Scenario) -> Result<RunOutput, RunError> {
    let prepared = scenario.prepare()?;
    let mut state = SimState::new(&prepared.topo, prepared.plan.clone(), &prepared.planes)
        .map_err(|e| RunError::Validation(e.to_string()))?;
    if let (Some(Fault::ClearFbmBit { router, bfer }), Some(b)) = (&scenario.fault, state.bier.as_mut()) {
        b.clear_fbm_bit(*router, *bfer)
            .map_err(|e| RunError::Validation(format!("fault: {e}")))?;
    }

    let interval = scenario.snapshot_interval;
    let last = prepared.schedule.last_tick();
    let final_tick = last.div_ceil(interval) * interval;
    let unicast_modes: Vec<UnicastMode> = scenario.modes.iter().filter_map(|m| m.unicast()).collect();
    let mut multicast_modes: Vec<Mode> = scenario
        .modes
        .iter()
        .copied()
        .filter(|m| matches!(m, Mode::StatefulMcast | Mode::Bier))
        .collect();
    multicast_modes.sort();

    let mut out = RunOutput {
        snapshots: Vec::new(),
        delivery: DeliveryReport::default(),
        unicast: UnicastReport::default(),
        schedule: prepared.schedule.clone(),
    };
    let mut events = prepared.schedule.events.iter().peekable();
    let mut tick = 0;
    loop {
        while let Some(ev) = events.next_if(|e| e.time <= tick) {
            state.apply(&ev.kind).map_err(|e| RunError::Replay {
                tick: ev.time,
                msg: format!("{ev}: {e}"),
            })?;
        }
        out.snapshots.push(snapshot(&state, tick, &unicast_modes));
        probe_multicast(&state, tick, &multicast_modes, &mut out.delivery);
        probe_unicast(&state, &unicast_modes, &mut out.unicast);
        if tick >= final_tick {
            break;
        }
        tick += interval;
    }
    Ok(out)
}

fn snapshot(state: &SimState, tick: u64, unicast_modes: &[UnicastMode]) -> StateSnapshot {
    let topo = state.topology();
    // fib and mapping come from the first selected mode in flat, mapencap, mpls order
    let primary = UnicastMode::ALL.into_iter().find(|m| unicast_modes.contains(m));
    let routers = topo
        .routers()
        .map(|r| {
            let (fib, mapping) = match (primary, &state.unicast) {
                (Some(m), Some(u)) => {
                    let (f, m, _) = u.state_counts(m, r);
                    (f, m)
                }
                _ => (0, 0),
            };
            let labels = match &state.unicast {
                Some(u) if unicast_modes.contains(&UnicastMode::Mpls) => u.labels().entries(r),
                _ => 0,
            };
            RouterCounts {
                router: r,
                role: topo.role(r).unwrap(),
                fib,
                mapping,
                labels,
                sg: state.sg.as_ref().map_or(0, |s| s.sg_state_count(r)),
                bift: state.bier.as_ref().map_or(0, |b| b.bift_size(r)),
            }
        })
        .collect();
    StateSnapshot { tick, routers }
}

fn probe_multicast(state: &SimState, tick: u64, modes: &[Mode], report: &mut DeliveryReport) {
    let max_hops = state.topology().len();
    for (group, members) in state.membership.groups() {
        let expected: Vec<RouterId> = members.receivers.iter().copied().collect();
        for mode in modes {
            let mut row = DeliveryRow {
                tick,
                group,
                mode: *mode,
                ok: true,
                delivered: Vec::new(),
                expected: expected.clone(),
                error: None,
            };
            for (i, source) in members.sources.iter().enumerate() {
                let got = match mode {
                    Mode::StatefulMcast => state
                        .sg
                        .as_ref()
                        .expect("stateful plane enabled")
                        .deliver(SgKey { source: *source, group }, max_hops)
                        .map_err(|e| e.to_string()),
                    Mode::Bier => state
                        .bier
                        .as_ref()
                        .expect("bier plane enabled")
                        .deliver_group(*source, group)
                        .map_err(|e| e.to_string()),
                    _ => unreachable!("unicast mode in multicast probe"),
                };
                match got {
                    Ok(delivered) => {
                        let matches = delivered == expected;
                        if i == 0 || (row.ok && !matches) {
                            row.delivered = delivered;
                        }
                        row.ok &= matches;
                    }
                    Err(e) => {
                        row.ok = false;
                        row.delivered.clear();
                        row.error = Some(format!("source {source}: {e}"));
                        break;
                    }
                }
            }
            report.rows.push(row);
        }
    }
}

fn probe_unicast(state: &SimState, modes: &[UnicastMode], report: &mut UnicastReport) {
    let Some(plane) = &state.unicast else { return };
    let edges: Vec<RouterId> = state.topology().edge_routers().collect();
    for mode in modes {
        let counters = report.counters.entry(*mode).or_default();
        let transit = report.transit_prefix_lookups.entry(*mode).or_default();
        for (i, site) in plane.plan().sites().enumerate() {
            let ingress = edges[(i + 1) % edges.len()];
            report.probes += 1;
            match plane.trace(*mode, Packet::to(site.host_addr()).with_payload(i as u64), ingress, counters) {
                Ok(trace) => {
                    *transit += trace.transit().iter().map(|h| h.lookups.prefix).sum::<u64>();
                    let egress = trace.hops.last().map(|h| h.router);
                    if trace.site != site.id || egress != Some(site.edge) {
                        report.failures.push(format!(
                            "{}: site {} from {ingress} delivered to site {} at {:?}",
                            mode.as_str(),
                            site.id,
                            trace.site,
                            egress
                        ));
                    }
                }
                Err(e) => report
                    .failures
                    .push(format!("{}: site {} from {ingress}: {e}", mode.as_str(), site.id)),
            }
        }
    }
}

fn join_ids(ids: &[RouterId]) -> String {
    ids.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(";")
}

pub const STATE_HEADER: [&str; 8] = ["tick", "router", "role", "fib", "mapping", "labels", "sg", "bift"];
pub const DELIVERY_HEADER: [&str; 6] = ["tick", "group", "mode", "ok", "delivered", "expected"];

pub fn write_state_csv<W: io::Write>(w: W, snapshots: &[StateSnapshot]) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(STATE_HEADER)?;
    for s in snapshots {
        for r in &s.routers {
            wr.write_record([
                s.tick.to_string(),
                r.router.to_string(),
                r.role.as_str().to_string(),
                r.fib.to_string(),
                r.mapping.to_string(),
                r.labels.to_string(),
                r.sg.to_string(),
                r.bift.to_string(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn write_delivery_csv<W: io::Write>(w: W, report: &DeliveryReport) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(DELIVERY_HEADER)?;
    for r in &report.rows {
        let delivered = match &r.error {
            Some(_) => "error".to_string(),
            None => join_ids(&r.delivered),
        };
        wr.write_record([
            r.tick.to_string(),
            r.group.to_string(),
            r.mode.as_str().to_string(),
            r.ok.to_string(),
            delivered,
            join_ids(&r.expected),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Writes `state.csv` and `delivery.csv` into `dir`, creating it if needed.
pub fn emit_csv(snapshots: &[StateSnapshot], report: &DeliveryReport, dir: &Path) -> Result<(), RunError> {
    let io_err = |p: &Path, e: &dyn fmt::Display| RunError::Io(p.to_path_buf(), e.to_string());
    fs::create_dir_all(dir).map_err(|e| io_err(dir, &e))?;
    let state = dir.join("state.csv");
    let f = fs::File::create(&state).map_err(|e| io_err(&state, &e))?;
    write_state_csv(f, snapshots).map_err(|e| io_err(&state, &e))?;
    emit_delivery_csv(report, dir)
}

pub fn emit_delivery_csv(report: &DeliveryReport, dir: &Path) -> Result<(), RunError> {
    let path = dir.join("delivery.csv");
    fs::create_dir_all(dir).map_err(|e| RunError::Io(dir.to_path_buf(), e.to_string()))?;
    let f = fs::File::create(&path).map_err(|e| RunError::Io(path.clone(), e.to_string()))?;
    write_delivery_csv(f, report).map_err(|e| RunError::Io(path, e.to_string()))
}
