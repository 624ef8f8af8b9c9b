//! Process layouts, ring all-reduce and its cost model.

mod cost;
mod layout;
mod ring;

pub use cost::{ring_hops, simulate_allreduce_time, LinkClass, LinkCost, LinkCostModel};
pub use layout::Layout;
pub use ring::{
    frame_header, read_frame, reference_mean, rendezvous, ring_allreduce, write_frame, FrameError, Opcode,
    WorkerGroup, DEFAULT_TIMEOUT, FRAME_MAGIC,
};
