//! Exact reference implementation of Markov projection for discrete flow
//! matching on the torus `Z_m^d`, with a tau-leaping-free exact sampler for
//! piecewise-frozen scores, loss functionals and divergence metrics.

pub mod bounds;
pub mod coupling;
pub mod engine;
pub mod error;
pub mod kernels;
pub mod lattice;
pub mod losses;
pub mod metrics;
pub mod ode;
pub mod sampler;

pub use coupling::{Coupling, CouplingFile, CouplingSpec, ReweightedCoupling, MAX_EXACT_STATES};
pub use engine::{bridge_score, ExactEngine, Posterior, ProjectedGenerator, ScoreField, ScoreTable, ETA_MIN};
pub use error::{Error, Result};
pub use kernels::{Dynamics, DynamicsKind, TransitionKernel};
pub use lattice::{hamming, JumpFamily, JumpOp, LatticeSpec, NeighborTable, State};
pub use metrics::{chi_square_test, kl, tv, EmpiricalDist, MarginalDist};
pub use sampler::{algorithm_law, build_grid, run_paths, simulate_path, GridScore, PathSample, ScoreModel, TimeGrid};
pub use losses::{train_tabular, LossProblem, LossReport, Preconditioner, TabularScore, TrainOptions};
