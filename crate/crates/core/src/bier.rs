// SPDX-License-Identifier: Apache-2.0
//! BIER data plane: BFR-id assignment, set-identifier partitioning, BIFT
//! construction from the unicast next hops, BFIR encapsulation and bitstring
//! forwarding with F-BM filtering.
//!
//! Bit positions are 1-based. A BFR-id `n` maps to set identifier
//! `(n - 1) / bsl` and bit `(n - 1) % bsl + 1`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::multicast::GroupId;
use crate::topology::{RouterId, RoutingTables, Topology};

pub const DEFAULT_BSL: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BfrId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BitPosition {
    pub si: u32,
    pub bit: u32,
}

impl fmt::Display for BitPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.si, self.bit)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BierError {
    #[error("no edge routers to number")]
    NoEdgeRouters,
    #[error("bitstring length must be at least 1")]
    InvalidBsl,
    #[error("unknown router {0}")]
    UnknownRouter(RouterId),
    #[error("router {0} is not a BFER")]
    NotBfer(RouterId),
    #[error("router {router} has no BIFT entry for bit {position}")]
    MissingBiftEntry { router: RouterId, position: BitPosition },
    #[error("bitstring length {got} does not match domain length {expected}")]
    BslMismatch { expected: usize, got: usize },
    #[error("unknown group {0}")]
    UnknownGroup(GroupId),
    #[error("group {0} already present")]
    DuplicateGroup(GroupId),
    #[error("BIER copy exceeded {0} hops")]
    ForwardingLoop(usize),
}

/// Fixed-length bit vector; positions run from 1 to `len`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitString {
    words: Vec<u64>,
    len: usize,
}

impl BitString {
    pub fn new(len: usize) -> Self {
        BitString {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn from_positions(len: usize, bits: impl IntoIterator<Item = u32>) -> Self {
        let mut s = Self::new(len);
        for b in bits {
            s.set(b);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn slot(&self, bit: u32) -> (usize, u64) {
        assert!(bit >= 1 && bit as usize <= self.len, "bit {bit} outside 1..={}", self.len);
        let i = bit as usize - 1;
        (i / 64, 1u64 << (i % 64))
    }

    pub fn set(&mut self, bit: u32) {
        let (w, m) = self.slot(bit);
        self.words[w] |= m;
    }

    pub fn clear(&mut self, bit: u32) {
        let (w, m) = self.slot(bit);
        self.words[w] &= !m;
    }

    pub fn get(&self, bit: u32) -> bool {
        let (w, m) = self.slot(bit);
        self.words[w] & m != 0
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn and(&self, other: &BitString) -> BitString {
        assert_eq!(self.len, other.len);
        BitString {
            words: self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect(),
            len: self.len,
        }
    }

    pub fn or_assign(&mut self, other: &BitString) {
        assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn and_not_assign(&mut self, other: &BitString) {
        assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= !b;
        }
    }

    /// Set positions, ascending.
    pub fn ones(&self) -> impl Iterator<Item = u32> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, w)| {
            let mut w = *w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let tz = w.trailing_zeros();
                w &= w - 1;
                Some((wi * 64) as u32 + tz + 1)
            })
        })
    }

    /// Hex with bit 1 as the least significant bit, `ceil(len / 4)` digits.
    pub fn to_hex(&self) -> String {
        let digits = self.len.div_ceil(4).max(1);
        (0..digits)
            .rev()
            .map(|d| {
                let nibble = (self.words[d / 16] >> ((d % 16) * 4)) & 0xf;
                char::from_digit(nibble as u32, 16).unwrap()
            })
            .collect()
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BierHeader {
    pub si: u32,
    pub bits: BitString,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BierNextHop {
    Local,
    Neighbor(RouterId),
}

impl fmt::Display for BierNextHop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BierNextHop::Local => f.write_str("local"),
            BierNextHop::Neighbor(r) => write!(f, "{r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BiftEntry {
    pub next_hop: BierNextHop,
    pub fbm: BitString,
}

/// One router's BIFT, keyed by (SI, bit).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Bift {
    entries: BTreeMap<BitPosition, BiftEntry>,
}

impl Bift {
    pub fn get(&self, pos: BitPosition) -> Option<&BiftEntry> {
        self.entries.get(&pos)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (BitPosition, &BiftEntry)> {
        self.entries.iter().map(|(p, e)| (*p, e))
    }
}

/// Numbers BFERs 1..N in ascending router id order.
pub fn assign_bfr_ids(
    bfers: impl IntoIterator<Item = RouterId>,
) -> Result<BTreeMap<RouterId, BfrId>, BierError> {
    let sorted: BTreeSet<RouterId> = bfers.into_iter().collect();
    if sorted.is_empty() {
        return Err(BierError::NoEdgeRouters);
    }
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, r)| (r, BfrId(i as u32 + 1)))
        .collect())
}

pub fn id_to_si_bit(id: BfrId, bsl: usize) -> BitPosition {
    assert!(id.0 >= 1 && bsl >= 1, "BFR-ids and bitstring lengths start at 1");
    let zero_based = id.0 - 1;
    BitPosition {
        si: zero_based / bsl as u32,
        bit: zero_based % bsl as u32 + 1,
    }
}

/// Builds every router's BIFT from the unicast next hops towards each BFER.
pub fn build_bift(
    topo: &Topology,
    routing: &RoutingTables,
    ids: &BTreeMap<RouterId, BfrId>,
    bsl: usize,
) -> Result<BTreeMap<RouterId, Bift>, BierError> {
    if bsl == 0 {
        return Err(BierError::InvalidBsl);
    }
    if let Some(r) = ids.keys().find(|r| !topo.contains(**r)) {
        return Err(BierError::UnknownRouter(*r));
    }
    let mut out = BTreeMap::new();
    for router in topo.routers() {
        let routes: Vec<(BitPosition, BierNextHop)> = ids
            .iter()
            .map(|(bfer, id)| {
                let nh = if *bfer == router {
                    BierNextHop::Local
                } else {
                    BierNextHop::Neighbor(routing.next_hop(router, *bfer).expect("routers validated"))
                };
                (id_to_si_bit(*id, bsl), nh)
            })
            .collect();
        let mut fbms: BTreeMap<(u32, BierNextHop), BitString> = BTreeMap::new();
        for (pos, nh) in &routes {
            fbms.entry((pos.si, *nh))
                .or_insert_with(|| BitString::new(bsl))
                .set(pos.bit);
        }
        let entries = routes
            .into_iter()
            .map(|(pos, next_hop)| {
                let fbm = fbms[&(pos.si, next_hop)].clone();
                (pos, BiftEntry { next_hop, fbm })
            })
            .collect();
        out.insert(router, Bift { entries });
    }
    Ok(out)
}

/// Group to egress bit positions, as held by one BFIR.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OverlayTable {
    groups: BTreeMap<GroupId, BTreeSet<BitPosition>>,
}

impl OverlayTable {
    pub fn add_group(&mut self, group: GroupId) -> Result<(), BierError> {
        if self.groups.contains_key(&group) {
            return Err(BierError::DuplicateGroup(group));
        }
        self.groups.insert(group, BTreeSet::new());
        Ok(())
    }

    pub fn remove_group(&mut self, group: GroupId) -> Result<BTreeSet<BitPosition>, BierError> {
        self.groups.remove(&group).ok_or(BierError::UnknownGroup(group))
    }

    pub fn contains_group(&self, group: GroupId) -> bool {
        self.groups.contains_key(&group)
    }

    pub fn add_egress(&mut self, group: GroupId, pos: BitPosition) -> Result<bool, BierError> {
        Ok(self.groups.get_mut(&group).ok_or(BierError::UnknownGroup(group))?.insert(pos))
    }

    pub fn remove_egress(&mut self, group: GroupId, pos: BitPosition) -> Result<bool, BierError> {
        Ok(self.groups.get_mut(&group).ok_or(BierError::UnknownGroup(group))?.remove(&pos))
    }

    pub fn egress(&self, group: GroupId) -> Option<&BTreeSet<BitPosition>> {
        self.groups.get(&group)
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// One header per SI in use, each carrying the OR of that SI's egress bits.
    pub fn encapsulate(&self, group: GroupId, bsl: usize) -> Result<Vec<BierHeader>, BierError> {
        let egress = self.groups.get(&group).ok_or(BierError::UnknownGroup(group))?;
        let mut by_si: BTreeMap<u32, BitString> = BTreeMap::new();
        for pos in egress {
            by_si.entry(pos.si).or_insert_with(|| BitString::new(bsl)).set(pos.bit);
        }
        Ok(by_si.into_iter().map(|(si, bits)| BierHeader { si, bits }).collect())
    }
}

/// A BIER domain: numbering, BIFTs and the per-BFIR overlay tables.
///
/// The BIFTs depend only on the topology, the BFER set and the BSL; group
/// state lives exclusively in the overlays.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BierDomain {
    bsl: usize,
    ids: BTreeMap<RouterId, BfrId>,
    positions: BTreeMap<BitPosition, RouterId>,
    bifts: BTreeMap<RouterId, Bift>,
    overlays: BTreeMap<RouterId, OverlayTable>,
    max_hops: usize,
}

impl BierDomain {
    pub fn build(
        topo: &Topology,
        routing: &RoutingTables,
        bfers: impl IntoIterator<Item = RouterId>,
        bsl: usize,
    ) -> Result<Self, BierError> {
        let ids = assign_bfr_ids(bfers)?;
        let bifts = build_bift(topo, routing, &ids, bsl)?;
        let positions = ids.iter().map(|(r, id)| (id_to_si_bit(*id, bsl), *r)).collect();
        let overlays = ids.keys().map(|r| (*r, OverlayTable::default())).collect();
        Ok(BierDomain {
            bsl,
            ids,
            positions,
            bifts,
            overlays,
            max_hops: topo.len(),
        })
    }

    pub fn bsl(&self) -> usize {
        self.bsl
    }

    pub fn ids(&self) -> &BTreeMap<RouterId, BfrId> {
        &self.ids
    }

    pub fn bfer_count(&self) -> usize {
        self.ids.len()
    }

    pub fn position(&self, bfer: RouterId) -> Result<BitPosition, BierError> {
        self.ids
            .get(&bfer)
            .map(|id| id_to_si_bit(*id, self.bsl))
            .ok_or(BierError::NotBfer(bfer))
    }

    pub fn bfer_at(&self, pos: BitPosition) -> Option<RouterId> {
        self.positions.get(&pos).copied()
    }

    /// Set identifiers with at least one BFER.
    pub fn set_identifiers(&self) -> BTreeSet<u32> {
        self.positions.keys().map(|p| p.si).collect()
    }

    pub fn bift(&self, r: RouterId) -> Option<&Bift> {
        self.bifts.get(&r)
    }

    pub fn bifts(&self) -> &BTreeMap<RouterId, Bift> {
        &self.bifts
    }

    pub fn bift_size(&self, r: RouterId) -> usize {
        self.bifts.get(&r).map_or(0, Bift::len)
    }

    pub fn overlay(&self, bfir: RouterId) -> Option<&OverlayTable> {
        self.overlays.get(&bfir)
    }

    pub fn overlay_mut(&mut self, bfir: RouterId) -> Result<&mut OverlayTable, BierError> {
        self.overlays.get_mut(&bfir).ok_or(BierError::NotBfer(bfir))
    }

    /// Fault injection: drops `bfer`'s bit from the F-BM of its entry at `router`.
    pub fn clear_fbm_bit(&mut self, router: RouterId, bfer: RouterId) -> Result<(), BierError> {
        let pos = self.position(bfer)?;
        let entry = self
            .bifts
            .get_mut(&router)
            .ok_or(BierError::UnknownRouter(router))?
            .entries
            .get_mut(&pos)
            .ok_or(BierError::MissingBiftEntry { router, position: pos })?;
        entry.fbm.clear(pos.bit);
        Ok(())
    }

    /// Replicates `header` at router `at`.
    ///
    /// Set bits are visited low to high. Each visited bit emits one copy
    /// masked by its entry's F-BM, and the F-BM is then cleared from the
    /// working bitstring, so no bit is emitted twice.
    pub fn forward(&self, header: &BierHeader, at: RouterId) -> Result<Vec<(BierNextHop, BierHeader)>, BierError> {
        if header.bits.len() != self.bsl {
            return Err(BierError::BslMismatch {
                expected: self.bsl,
                got: header.bits.len(),
            });
        }
        let bift = self.bifts.get(&at).ok_or(BierError::UnknownRouter(at))?;
        let mut working = header.bits.clone();
        let mut out = Vec::new();
        for bit in header.bits.ones() {
            if !working.get(bit) {
                continue;
            }
            let position = BitPosition { si: header.si, bit };
            let entry = bift
                .get(position)
                .ok_or(BierError::MissingBiftEntry { router: at, position })?;
            let bits = working.and(&entry.fbm);
            working.and_not_assign(&entry.fbm);
            // a corrupted F-BM may not cover its own bit; never revisit it
            working.clear(bit);
            if !bits.is_zero() {
                out.push((entry.next_hop, BierHeader { si: header.si, bits }));
            }
            if working.is_zero() {
                break;
            }
        }
        Ok(out)
    }

    /// Forwards `header` from `bfir` through the domain and returns every
    /// BFER that received a local copy, once per copy, sorted.
    pub fn deliver(&self, bfir: RouterId, header: &BierHeader) -> Result<Vec<RouterId>, BierError> {
        let mut delivered = Vec::new();
        let mut queue = VecDeque::from([(bfir, header.clone(), 0usize)]);
        while let Some((at, h, depth)) = queue.pop_front() {
            if depth > self.max_hops {
                return Err(BierError::ForwardingLoop(depth));
            }
            for (nh, copy) in self.forward(&h, at)? {
                match nh {
                    BierNextHop::Local => delivered.push(at),
                    BierNextHop::Neighbor(n) => queue.push_back((n, copy, depth + 1)),
                }
            }
        }
        delivered.sort();
        Ok(delivered)
    }

    /// Encapsulates at `bfir` and delivers every per-SI copy.
    pub fn deliver_group(&self, bfir: RouterId, group: GroupId) -> Result<Vec<RouterId>, BierError> {
        let overlay = self.overlays.get(&bfir).ok_or(BierError::NotBfer(bfir))?;
        let mut delivered = Vec::new();
        for header in overlay.encapsulate(group, self.bsl)? {
            delivered.extend(self.deliver(bfir, &header)?);
        }
        delivered.sort();
        Ok(delivered)
    }
}

/// Debug trace line: `router -> [(nexthop, bitstring-hex), ...]`.
pub fn format_trace(router: RouterId, copies: &[(BierNextHop, BierHeader)]) -> String {
    let body: Vec<String> = copies
        .iter()
        .map(|(nh, h)| format!("({nh}, {})", h.bits.to_hex()))
        .collect();
    format!("{router} -> [{}]", body.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{Role, TopologySpec};
    use proptest::prelude::*;

    fn r(i: u32) -> RouterId {
        RouterId(i)
    }

    fn build(spec: &TopologySpec) -> (Topology, RoutingTables) {
        let t = Topology::build(spec).unwrap();
        let rt = RoutingTables::compute(&t);
        (t, rt)
    }

    /// A(0, edge) - B(1, core) - C(2, edge)
    fn line_domain(bsl: usize) -> BierDomain {
        let mut s = TopologySpec::default();
        s.router(0, Role::Edge).router(1, Role::Core).router(2, Role::Edge);
        s.link(0, 1, 1).link(1, 2, 1);
        let (t, rt) = build(&s);
        BierDomain::build(&t, &rt, t.edge_routers().collect::<Vec<_>>(), bsl).unwrap()
    }

    fn bits(bsl: usize, b: &[u32]) -> BitString {
        BitString::from_positions(bsl, b.iter().copied())
    }

    #[test]
    fn bitstring_ops() {
        let mut s = BitString::new(70);
        s.set(1);
        s.set(65);
        s.set(70);
        assert_eq!(s.ones().collect::<Vec<_>>(), vec![1, 65, 70]);
        assert_eq!(s.count_ones(), 3);
        s.clear(65);
        assert!(!s.get(65));
        assert_eq!(bits(4, &[1, 3]).to_hex(), "5");
        assert_eq!(bits(8, &[2]).to_hex(), "02");
        assert_eq!(bits(8, &[1, 8]).to_hex(), "81");
        assert_eq!(bits(256, &[256]).to_hex().len(), 64);
        assert!(bits(4, &[]).is_zero());
    }

    #[test]
    fn bfr_id_assignment() {
        let ids = assign_bfr_ids([r(7), r(3), r(9)]).unwrap();
        assert_eq!(ids, BTreeMap::from([(r(3), BfrId(1)), (r(7), BfrId(2)), (r(9), BfrId(3))]));
        assert_eq!(assign_bfr_ids([r(4)]).unwrap()[&r(4)], BfrId(1));
        let many = assign_bfr_ids((0..50).map(|i| r(i * 3))).unwrap();
        let got: Vec<u32> = many.values().map(|b| b.0).collect();
        assert_eq!(got, (1..=50).collect::<Vec<_>>());
        assert_eq!(assign_bfr_ids([]), Err(BierError::NoEdgeRouters));
    }

    #[test]
    fn si_bit_formula() {
        assert_eq!(id_to_si_bit(BfrId(1), 4), BitPosition { si: 0, bit: 1 });
        assert_eq!(id_to_si_bit(BfrId(5), 4), BitPosition { si: 1, bit: 1 });
        assert_eq!(id_to_si_bit(BfrId(10), 4), BitPosition { si: 2, bit: 2 });
        let sis: BTreeSet<u32> = (1..=10).map(|i| id_to_si_bit(BfrId(i), 4).si).collect();
        assert_eq!(sis, BTreeSet::from([0, 1, 2]));
        assert_eq!(id_to_si_bit(BfrId(256), 256), BitPosition { si: 0, bit: 256 });
        assert_eq!(id_to_si_bit(BfrId(257), 256), BitPosition { si: 1, bit: 1 });
    }

    #[test]
    fn line_bift() {
        let d = line_domain(4);
        let p1 = BitPosition { si: 0, bit: 1 };
        let p2 = BitPosition { si: 0, bit: 2 };
        let b = d.bift(r(1)).unwrap();
        assert_eq!(b.get(p1).unwrap(), &BiftEntry { next_hop: BierNextHop::Neighbor(r(0)), fbm: bits(4, &[1]) });
        assert_eq!(b.get(p2).unwrap(), &BiftEntry { next_hop: BierNextHop::Neighbor(r(2)), fbm: bits(4, &[2]) });
        let a = d.bift(r(0)).unwrap();
        assert_eq!(a.get(p1).unwrap(), &BiftEntry { next_hop: BierNextHop::Local, fbm: bits(4, &[1]) });
        assert_eq!(a.get(p2).unwrap(), &BiftEntry { next_hop: BierNextHop::Neighbor(r(1)), fbm: bits(4, &[2]) });
        for x in 0..3 {
            assert_eq!(d.bift_size(r(x)), 2);
        }
    }

    #[test]
    fn single_router_domain() {
        let mut s = TopologySpec::default();
        s.router(4, Role::Edge);
        let (t, rt) = build(&s);
        let d = BierDomain::build(&t, &rt, [r(4)], 4).unwrap();
        let b = d.bift(r(4)).unwrap();
        assert_eq!(b.len(), 1);
        let (_, e) = b.iter().next().unwrap();
        assert_eq!(e, &BiftEntry { next_hop: BierNextHop::Local, fbm: bits(4, &[1]) });
    }

    #[test]
    fn star_center_has_single_bit_fbms() {
        let mut s = TopologySpec::default();
        s.router(0, Role::Core);
        for leaf in 1..=3 {
            s.router(leaf, Role::Edge).link(0, leaf, 1);
        }
        let (t, rt) = build(&s);
        let d = BierDomain::build(&t, &rt, t.edge_routers().collect::<Vec<_>>(), 8).unwrap();
        let fbms: BTreeSet<Vec<u32>> = d
            .bift(r(0))
            .unwrap()
            .iter()
            .map(|(_, e)| e.fbm.ones().collect())
            .collect();
        assert_eq!(fbms, BTreeSet::from([vec![1], vec![2], vec![3]]));
    }

    #[test]
    fn forward_on_line() {
        let d = line_domain(4);
        let h = BierHeader { si: 0, bits: bits(4, &[1, 2]) };
        let out = d.forward(&h, r(1)).unwrap();
        assert_eq!(
            out,
            vec![
                (BierNextHop::Neighbor(r(0)), BierHeader { si: 0, bits: bits(4, &[1]) }),
                (BierNextHop::Neighbor(r(2)), BierHeader { si: 0, bits: bits(4, &[2]) }),
            ]
        );
        let out = d.forward(&h, r(0)).unwrap();
        assert_eq!(
            out,
            vec![
                (BierNextHop::Local, BierHeader { si: 0, bits: bits(4, &[1]) }),
                (BierNextHop::Neighbor(r(1)), BierHeader { si: 0, bits: bits(4, &[2]) }),
            ]
        );
        assert!(d.forward(&BierHeader { si: 0, bits: bits(4, &[]) }, r(1)).unwrap().is_empty());
        assert_eq!(d.deliver(r(0), &h).unwrap(), vec![r(0), r(2)]);
    }

    #[test]
    fn forward_errors() {
        let d = line_domain(4);
        let wrong_len = BierHeader { si: 0, bits: bits(8, &[1]) };
        assert_eq!(d.forward(&wrong_len, r(0)), Err(BierError::BslMismatch { expected: 4, got: 8 }));
        let unused_bit = BierHeader { si: 0, bits: bits(4, &[3]) };
        assert_eq!(
            d.forward(&unused_bit, r(1)),
            Err(BierError::MissingBiftEntry { router: r(1), position: BitPosition { si: 0, bit: 3 } })
        );
    }

    #[test]
    fn encapsulation_per_si() {
        let mut o = OverlayTable::default();
        let g = GroupId(1);
        o.add_group(g).unwrap();
        assert!(o.encapsulate(g, 4).unwrap().is_empty());
        o.add_egress(g, BitPosition { si: 0, bit: 1 }).unwrap();
        o.add_egress(g, BitPosition { si: 0, bit: 3 }).unwrap();
        let hs = o.encapsulate(g, 4).unwrap();
        assert_eq!(hs, vec![BierHeader { si: 0, bits: bits(4, &[1, 3]) }]);
        assert_eq!(hs[0].bits.to_hex(), "5");
        o.add_egress(g, BitPosition { si: 1, bit: 2 }).unwrap();
        assert_eq!(o.encapsulate(g, 4).unwrap().len(), 2);
        assert_eq!(o.encapsulate(GroupId(9), 4), Err(BierError::UnknownGroup(GroupId(9))));
        assert_eq!(o.add_group(g), Err(BierError::DuplicateGroup(g)));
    }

    #[test]
    fn trace_format() {
        let d = line_domain(4);
        let h = BierHeader { si: 0, bits: bits(4, &[1, 2]) };
        assert_eq!(format_trace(r(1), &d.forward(&h, r(1)).unwrap()), "1 -> [(0, 1), (2, 2)]");
        assert_eq!(format_trace(r(0), &d.forward(&h, r(0)).unwrap()), "0 -> [(local, 1), (1, 2)]");
    }

    #[test]
    fn corrupted_fbm_terminates_and_loses_the_bit() {
        let mut d = line_domain(4);
        d.clear_fbm_bit(r(1), r(2)).unwrap();
        let h = BierHeader { si: 0, bits: bits(4, &[1, 2]) };
        assert_eq!(d.deliver(r(0), &h).unwrap(), vec![r(0)]);
    }

    fn random_topology() -> impl Strategy<Value = TopologySpec> {
        (2u32..=8)
            .prop_flat_map(|n| {
                (
                    Just(n),
                    prop::collection::vec((0u32..1000, 1u32..=3), (n - 1) as usize),
                    prop::collection::vec((0..n, 0..n, 1u32..=3), 0..8),
                    prop::collection::vec(any::<bool>(), n as usize),
                )
            })
            .prop_map(|(n, tree, extra, edge)| {
                let mut s = TopologySpec::default();
                for i in 0..n {
                    let role = if edge[i as usize] || i == 0 { Role::Edge } else { Role::Core };
                    s.router(i, role);
                }
                let mut seen = BTreeSet::new();
                for (i, (parent, cost)) in tree.into_iter().enumerate() {
                    let child = i as u32 + 1;
                    let parent = parent % child;
                    seen.insert((parent, child));
                    s.link(parent, child, cost);
                }
                for (a, b, c) in extra {
                    let key = (a.min(b), a.max(b));
                    if a != b && seen.insert(key) {
                        s.link(key.0, key.1, c);
                    }
                }
                s
            })
    }

    proptest! {
        #[test]
        fn per_hop_bit_conservation(spec in random_topology(), seed in any::<u64>(), bsl in prop::sample::select(vec![4usize, 8])) {
            let (t, rt) = build(&spec);
            let d = BierDomain::build(&t, &rt, t.edge_routers().collect::<Vec<_>>(), bsl).unwrap();
            for si in d.set_identifiers() {
                let mut input = BitString::new(bsl);
                for (pos, _) in d.positions.range(BitPosition { si, bit: 0 }..BitPosition { si: si + 1, bit: 0 }) {
                    if (seed >> (pos.bit % 64)) & 1 == 1 {
                        input.set(pos.bit);
                    }
                }
                let h = BierHeader { si, bits: input.clone() };
                for at in t.routers() {
                    let out = d.forward(&h, at).unwrap();
                    let mut union = BitString::new(bsl);
                    for (i, (_, a)) in out.iter().enumerate() {
                        for (_, b) in &out[i + 1..] {
                            prop_assert!(a.bits.and(&b.bits).is_zero());
                        }
                        union.or_assign(&a.bits);
                    }
                    prop_assert_eq!(&union, &input);
                }
            }
        }

        #[test]
        fn fbm_partitions_reachable_bits(spec in random_topology(), bsl in prop::sample::select(vec![4usize, 8])) {
            let (t, rt) = build(&spec);
            let d = BierDomain::build(&t, &rt, t.edge_routers().collect::<Vec<_>>(), bsl).unwrap();
            for bift in d.bifts().values() {
                prop_assert_eq!(bift.len(), d.bfer_count());
                let mut groups: BTreeMap<(u32, BierNextHop), BTreeSet<u32>> = BTreeMap::new();
                for (pos, e) in bift.iter() {
                    prop_assert!(e.fbm.get(pos.bit));
                    groups.entry((pos.si, e.next_hop)).or_default().insert(pos.bit);
                }
                for (pos, e) in bift.iter() {
                    let expect: Vec<u32> = groups[&(pos.si, e.next_hop)].iter().copied().collect();
                    prop_assert_eq!(e.fbm.ones().collect::<Vec<_>>(), expect);
                }
            }
        }
    }
}
