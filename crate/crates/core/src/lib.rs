pub mod cli;
pub mod ensemble;
pub mod error;
pub mod fields;
pub mod metrics;
pub mod models;
pub mod numerics;
pub mod rng;
pub mod spatial;
pub mod synth;
