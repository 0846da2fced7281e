pub mod artifact;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod graph;
pub mod inference;
pub mod labels;
pub mod model;
pub mod oracle;
pub mod params;
pub mod pipeline;
pub mod training;
pub mod verification;

pub use error::{Error, Result};
