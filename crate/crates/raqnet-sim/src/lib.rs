//! Deterministic simulator of a topology-aware structured peer-to-peer
//! overlay with virtual-server load balancing.
//!
//! The crate is organized around the experiment pipeline:
//!
//! * [`topology`] builds a transit-stub underlay and answers network
//!   distance queries, either exactly or through embedded coordinates.
//! * [`overlay`] maintains the partitioned search space, per-node routing
//!   tables, and query routing.
//! * [`workload`] samples node capacities and virtual-server loads.
//! * [`loadbalance`] runs probe rounds, classifies nodes, and moves
//!   virtual servers from heavy nodes toward nearby light ones.
//! * [`metrics`] reduces transfer logs into cost, benefit, and
//!   distribution summaries.
//! * [`harness`] ties it all together behind a config file and writes CSV
//!   outputs. The `raqnet-sim` binary is a thin CLI over it.

pub mod error;
pub mod harness;
pub mod loadbalance;
pub mod metrics;
pub mod overlay;
pub mod topology;
pub mod workload;

pub use error::SimError;

/// Deterministic sub-seed derivation: one master seed fans out into
/// independent per-subsystem (or per-entity) streams, so changing one
/// experiment knob never perturbs the random draws of another.
///
/// Splitmix64 finalizer over `master` xor a spread `stream` index.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
