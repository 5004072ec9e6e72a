pub mod confidence;
pub mod environment;
pub mod error;
pub mod estimation;
pub mod glm;
pub mod harness;
pub mod learner;
pub mod mdp;
pub mod planner;

pub use error::{Error, Result};
