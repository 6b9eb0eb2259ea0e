//! Evidence compression by ensemble decoding of a compression model and a
//! target model, with an evaluation harness and CLI.

pub mod backend;
pub mod cli;
pub mod decoder;
pub mod harness;
pub mod logprobs;
pub mod metrics;
pub mod types;
pub mod vocab;
