//! Persistent stores: the per-user episodic tier and the shared graph tier.

mod ltm;
mod mtm;

pub use ltm::LtmGraph;
pub use mtm::MtmStore;
