pub mod data;
pub mod flow;
pub mod harness;
pub mod isc;
pub mod metrics;
pub mod nn;
pub mod refine;
pub mod registry;
pub mod rng;
