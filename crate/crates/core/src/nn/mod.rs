//! Dense networks, reverse-mode gradients, Adam and Gaussian policy heads.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod mlp;
pub mod policy;
pub mod tape;

pub use adam::AdamState;
pub use mlp::{Activation, BoundMlp, Dense, MlpParams};
pub use policy::{GaussianPolicy, PolicySample, Squash};
pub use tape::{Gradients, Mat, Tape, Var};
