//! Planar non-prehensile pushing with a hybrid discrete-continuous actor-critic.

pub mod baselines;
pub mod env;
pub mod error;
pub mod hacman;
pub mod harness;
pub mod netcore;
pub mod pointcloud;

pub use baselines::{Agent, AgentKind, BaselineKind, ObservationMode};
pub use env::{ActionCommand, EnvConfig, EnvState, PlanarPushEnv, TaskVariant, TransitionResult};
pub use error::{Error, Result};
pub use harness::{Checkpoint, RunConfig};
pub use hacman::{ActorMap, CriticMap, HacmanAgent, HacmanOptions, TrainConfig};
pub use pointcloud::{PointCloud, Polygon, RigidTransform2D, Seg, Vec2};
