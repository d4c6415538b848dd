//! Importance-sampling off-policy evaluation with a prototype-based
//! behavior-policy model, plus the tabular MDP tooling and sepsis simulator
//! it is exercised on.

pub mod behavior;
pub mod classifier;
pub mod error;
pub mod mdp;
pub mod metrics;
pub mod net;
pub mod ope;
pub mod prototype;
pub mod sepsis;
pub mod trajectory;

pub use behavior::ActionModel;
pub use error::{Error, Result};
pub use mdp::{StochasticPolicy, TabularMdp};
pub use prototype::{PrototypeModel, TrainConfig};
pub use trajectory::{Termination, Trajectory, TrajectoryDataset};
