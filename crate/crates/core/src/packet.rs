// SPDX-License-Identifier: Apache-2.0
//! Simulator-internal packet model: a payload id plus a header stack.

use crate::bier::BierHeader;
use crate::unicast::Label;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub payload: u64,
    /// Inner destination: an end-site identifier address.
    pub dst: u32,
    /// Outer locator header pushed by a map-and-encap ingress.
    pub outer: Option<u32>,
    pub label: Option<Label>,
    pub bier: Option<BierHeader>,
}

impl Packet {
    pub fn to(dst: u32) -> Self {
        Packet {
            payload: 0,
            dst,
            outer: None,
            label: None,
            bier: None,
        }
    }

    pub fn with_payload(mut self, payload: u64) -> Self {
        self.payload = payload;
        self
    }
}
