//! Learning acceleration fields of multibody systems from trajectory data.
//!
//! The crate bundles everything needed to run the experiments end to end:
//!
//! * [`dynamics`]: analytic right-hand sides of five benchmark systems,
//!   including a constrained slider-crank solved through its KKT system.
//! * [`integrate`]: fixed-step explicit integrators, rollouts and
//!   coordinate projection for the constrained mechanism.
//! * [`diffest`]: acceleration targets from sampled velocities using a
//!   spectral differentiator with Gibbs mitigation blended with finite
//!   differences near the ends.
//! * [`net`]: a small MLP with hand-written backpropagation and Adam.
//! * [`fnode`]: dataset assembly, acceleration-supervised training,
//!   learned rollouts and error metrics.
//! * [`mpc`]: linearization and a receding-horizon LQ controller for the
//!   cart-pole.
//! * [`systems`]: ground-truth trajectories for each benchmark.
//! * [`io`], [`config`]: CSV trajectories, checkpoints and run configs.
//! * [`verify`]: the numerical property suites behind `fnode verify`.

pub mod config;
pub mod diffest;
pub mod dynamics;
pub mod error;
pub mod fnode;
pub mod integrate;
pub mod io;
pub mod mpc;
pub mod net;
pub mod systems;
pub mod verify;

pub use config::{Benchmark, RunConfig};
pub use diffest::{DiffConfig, DiffMethod};
pub use dynamics::{AugmentedState, KktSolution, SystemParams};
pub use error::{Error, Result};
pub use fnode::{FnodeDataset, FnodeModel, TrainConfig};
pub use integrate::{Integrator, Scheme, Trajectory};
pub use mpc::{LinearModel, MpcConfig};
pub use net::{Activation, Init, Mlp};
