//! Link-cost model for ring all-reduce under a process layout.
//!
//! A ring all-reduce over `P` ranks takes `2(P-1)` steps, each moving
//! `bytes / P`. Step `s` is charged to hop `s mod P` (rank `s mod P` to its
//! successor), the path taken by the chunk that starts at rank 0. A hop is
//! intra-node iff both ends sit on the same node.

use crate::collective::Layout;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkClass {
    IntraNode,
    InterNode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkCost {
    pub latency: f64,
    pub per_byte: f64,
}

impl LinkCost {
    pub fn transfer(&self, bytes: f64) -> f64 {
        self.latency + bytes * self.per_byte
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkCostModel {
    pub intra: LinkCost,
    pub inter: LinkCost,
    /// Forward + backward seconds per training sample.
    pub compute_per_sample: f64,
}

impl LinkCostModel {
    pub fn new(intra: LinkCost, inter: LinkCost, compute_per_sample: f64) -> Result<Self> {
        let all = [intra.latency, intra.per_byte, inter.latency, inter.per_byte, compute_per_sample];
        if all.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
            return Err(Error::InvalidArgument("link costs must be finite and non-negative".into()));
        }
        if inter.per_byte < intra.per_byte || inter.latency < intra.latency {
            return Err(Error::InvalidArgument(
                "inter-node latency and per-byte cost must be at least the intra-node ones".into(),
            ));
        }
        Ok(LinkCostModel {
            intra,
            inter,
            compute_per_sample,
        })
    }

    /// No communication cost at all.
    pub fn compute_only(compute_per_sample: f64) -> Self {
        let free = LinkCost { latency: 0.0, per_byte: 0.0 };
        LinkCostModel {
            intra: free,
            inter: free,
            compute_per_sample,
        }
    }

    /// NVLink-class links inside a node, a 25 Gb/s fabric between nodes.
    pub fn cluster_like(compute_per_sample: f64) -> Self {
        LinkCostModel {
            intra: LinkCost {
                latency: 5e-6,
                per_byte: 1.0 / 25e9,
            },
            inter: LinkCost {
                latency: 2e-5,
                per_byte: 8.0 / 25e9,
            },
            compute_per_sample,
        }
    }

    pub fn cost(&self, class: LinkClass) -> LinkCost {
        match class {
            LinkClass::IntraNode => self.intra,
            LinkClass::InterNode => self.inter,
        }
    }
}

/// Class of hop `i -> i+1 mod P` for every rank `i`.
pub fn ring_hops(layout: &Layout) -> Vec<LinkClass> {
    let p = layout.world();
    (0..p)
        .map(|i| {
            if layout.same_node(i, (i + 1) % p) {
                LinkClass::IntraNode
            } else {
                LinkClass::InterNode
            }
        })
        .collect()
}

/// Simulated seconds for one ring all-reduce of `bytes`.
pub fn simulate_allreduce_time(layout: &Layout, bytes: u64, model: &LinkCostModel) -> f64 {
    let p = layout.world();
    if p == 1 {
        return 0.0;
    }
    let hops = ring_hops(layout);
    let chunk = bytes as f64 / p as f64;
    (0..2 * (p - 1))
        .map(|s| model.cost(hops[s % p]).transfer(chunk))
        .sum()
}
