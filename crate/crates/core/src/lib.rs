pub mod apt;
pub mod envs;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod mdp;
pub mod nn;
pub mod sac;
pub mod tasksim;
pub mod toy;

pub use error::{Error, Result};
