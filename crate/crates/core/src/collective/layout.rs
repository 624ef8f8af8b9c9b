use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Placement of `nodes * slots_per_node` worker processes. Ranks fill a node
/// before moving to the next one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Layout {
    pub nodes: usize,
    pub slots_per_node: usize,
}

impl Layout {
    pub fn new(nodes: usize, slots_per_node: usize) -> Result<Self> {
        if nodes == 0 || slots_per_node == 0 {
            return Err(Error::InvalidArgument(format!(
                "layout needs at least one node and one slot, got {nodes}x{slots_per_node}"
            )));
        }
        Ok(Layout { nodes, slots_per_node })
    }

    pub fn single() -> Self {
        Layout { nodes: 1, slots_per_node: 1 }
    }

    pub fn world(&self) -> usize {
        self.nodes * self.slots_per_node
    }

    /// `(node, slot)` of a rank.
    pub fn place(&self, rank: usize) -> (usize, usize) {
        (rank / self.slots_per_node, rank % self.slots_per_node)
    }

    pub fn same_node(&self, a: usize, b: usize) -> bool {
        self.place(a).0 == self.place(b).0
    }

    /// The layout with nodes and slots swapped.
    pub fn transpose(&self) -> Layout {
        Layout {
            nodes: self.slots_per_node,
            slots_per_node: self.nodes,
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.nodes, self.slots_per_node)
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("layout {s:?} is not of the form NxS"));
        let (n, k) = s.trim().split_once(['x', 'X']).ok_or_else(bad)?;
        Layout::new(n.parse().map_err(|_| bad())?, k.parse().map_err(|_| bad())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_place() {
        let l: Layout = "2x3".parse().unwrap();
        assert_eq!(l.world(), 6);
        assert_eq!(l.to_string(), "2x3");
        assert_eq!(l.place(4), (1, 1));
        assert!(l.same_node(0, 2) && !l.same_node(2, 3));
        assert_eq!(l.transpose(), Layout { nodes: 3, slots_per_node: 2 });
        for bad in ["", "2", "0x3", "ax2", "2x"] {
            assert!(bad.parse::<Layout>().is_err(), "{bad}");
        }
    }
}
