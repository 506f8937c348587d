// SPDX-License-Identifier: Apache-2.0
//! Independent oracles shared by the integration and acceptance targets.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use fwdstate::bier::{BierDomain, BierHeader, BierNextHop, BitString};
use fwdstate::multicast::{Iif, Oif, SgEntry, SgKey, SgState};
use fwdstate::topology::{Role, RouterId, RoutingTables, TopologySpec};
use rand::seq::SliceRandom;
use rand::Rng;

/// A connected topology with `1..=max_nodes` routers, sparse ids, costs in
/// `1..=4` and at least one edge router.
pub fn random_spec<R: Rng>(rng: &mut R, max_nodes: usize) -> TopologySpec {
    let n = rng.gen_range(1..=max_nodes);
    let mut pool: Vec<u32> = (0..(n as u32) * 4).collect();
    pool.shuffle(rng);
    let mut ids = pool[..n].to_vec();
    ids.sort_unstable();
    let mut spec = TopologySpec::default();
    let edge_at = rng.gen_range(0..n);
    for (i, id) in ids.iter().enumerate() {
        let role = if i == edge_at || rng.gen_bool(0.5) { Role::Edge } else { Role::Core };
        spec.router(*id, role);
    }
    let mut pairs = BTreeSet::new();
    let mut order = ids.clone();
    order.shuffle(rng);
    for i in 1..n {
        let j = rng.gen_range(0..i);
        pairs.insert((order[i].min(order[j]), order[i].max(order[j])));
    }
    for _ in 0..rng.gen_range(0..=n) {
        let a = ids[rng.gen_range(0..n)];
        let b = ids[rng.gen_range(0..n)];
        if a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
    }
    for (a, b) in pairs {
        spec.link(a, b, rng.gen_range(1..=4));
    }
    spec
}

/// All-pairs shortest distances.
pub fn floyd_warshall(spec: &TopologySpec) -> BTreeMap<(u32, u32), u64> {
    let ids: Vec<u32> = spec.routers.iter().map(|r| r.id.0).collect();
    let mut d = BTreeMap::new();
    for &a in &ids {
        for &b in &ids {
            d.insert((a, b), if a == b { 0 } else { u64::MAX / 4 });
        }
    }
    for l in &spec.links {
        d.insert((l.a.0, l.b.0), l.cost as u64);
        d.insert((l.b.0, l.a.0), l.cost as u64);
    }
    for &k in &ids {
        for &i in &ids {
            for &j in &ids {
                let via = d[&(i, k)] + d[&(k, j)];
                if via < d[&(i, j)] {
                    d.insert((i, j), via);
                }
            }
        }
    }
    d
}

/// Bit owner table for a BFER set: ids follow ascending router id.
pub fn bit_owners(bfers: &BTreeSet<RouterId>, bsl: usize) -> BTreeMap<(u32, u32), RouterId> {
    bfers
        .iter()
        .enumerate()
        .map(|(k, r)| (((k / bsl) as u32, (k % bsl) as u32 + 1), *r))
        .collect()
}

/// Flood result: deliveries (one entry per copy) and links traversed.
#[derive(Debug, Default)]
pub struct Flood {
    pub delivered: Vec<RouterId>,
    pub transmissions: usize,
}

/// Replicates by grouping target BFERs on their unicast next hop at every
/// router, without consulting any BIER table.
pub fn flood(
    routing: &RoutingTables,
    owners: &BTreeMap<(u32, u32), RouterId>,
    si: u32,
    at: RouterId,
    bits: &BTreeSet<u32>,
    out: &mut Flood,
) {
    let mut by_hop: BTreeMap<RouterId, BTreeSet<u32>> = BTreeMap::new();
    for b in bits {
        let target = owners[&(si, *b)];
        if target == at {
            out.delivered.push(at);
        } else {
            by_hop.entry(routing.next_hop(at, target).unwrap()).or_default().insert(*b);
        }
    }
    for (nh, sub) in by_hop {
        out.transmissions += 1;
        flood(routing, owners, si, nh, &sub, out);
    }
}

/// Walks the domain hop by hop, counting link transmissions.
pub fn walk_bier(domain: &BierDomain, bfir: RouterId, header: &BierHeader, limit: usize) -> Flood {
    let mut out = Flood::default();
    let mut queue = vec![(bfir, header.clone())];
    while let Some((at, h)) = queue.pop() {
        assert!(out.transmissions <= limit, "copy storm");
        for (nh, copy) in domain.forward(&h, at).unwrap() {
            match nh {
                BierNextHop::Local => out.delivered.push(at),
                BierNextHop::Neighbor(n) => {
                    out.transmissions += 1;
                    queue.push((n, copy));
                }
            }
        }
    }
    out.delivered.sort();
    out
}

pub fn header(si: u32, bsl: usize, bits: &BTreeSet<u32>) -> BierHeader {
    BierHeader { si, bits: BitString::from_positions(bsl, bits.iter().copied()) }
}

/// The (S,G) state implied by a membership: the union of reverse shortest
/// paths from each receiver to the source.
pub fn reconstruct(
    routing: &RoutingTables,
    members: &BTreeMap<SgKey, BTreeSet<RouterId>>,
) -> BTreeMap<(RouterId, SgKey), SgEntry> {
    let mut state: BTreeMap<(RouterId, SgKey), SgEntry> = BTreeMap::new();
    for (sg, receivers) in members {
        for r in receivers {
            let path = routing.path_to(*r, sg.source).unwrap();
            for (k, router) in path.iter().enumerate() {
                let iif = match path.get(k + 1) {
                    Some(up) => Iif::Neighbor(*up),
                    None => Iif::Local,
                };
                let e = state
                    .entry((*router, *sg))
                    .or_insert_with(|| SgEntry { iif, oifs: BTreeSet::new() });
                assert_eq!(e.iif, iif, "reverse paths disagree on the upstream of {router}");
                if k == 0 {
                    e.oifs.insert(Oif::LocalDeliver);
                } else {
                    e.oifs.insert(Oif::Neighbor(path[k - 1]));
                }
            }
        }
    }
    state
}

pub fn sg_snapshot(state: &SgState) -> BTreeMap<(RouterId, SgKey), SgEntry> {
    state.iter().map(|(r, sg, e)| ((r, sg), e.clone())).collect()
}
