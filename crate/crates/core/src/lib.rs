pub mod benchgen;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod gateway;
pub mod grounding;
pub mod learner;
pub mod models;
pub mod proposer;
pub mod relaxation;
pub mod rng;

pub use error::{Error, Result};
