pub mod cli;
pub mod data;
pub mod embedding;
pub mod error;
pub mod fm;
pub mod harness;
pub mod interpret;
pub mod mlp;
pub mod model;
pub mod rng;
pub mod synth;
