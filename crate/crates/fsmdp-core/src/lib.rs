//! Factored State MDP learning laboratory.
//!
//! Implements episodic reinforcement learning in factored-state MDPs where
//! only marginal transition probabilities over basis-function scopes are
//! tracked: confidence sets around empirical estimates, optimistic parameter
//! tables, a variable-elimination separation oracle, an ellipsoid
//! cutting-plane planner, and the outer optimism-driven episode loop —
//! together with independent brute-force oracles that certify each optimized
//! component on enumerable instances.

pub mod basis;
pub mod elimination;
pub mod env;
pub mod error;
pub mod estimation;
pub mod learner;
pub mod model;
pub mod optimism;
pub mod oracle;
pub mod planner;
pub mod simplex;
pub mod space;

pub use basis::{BasisFunction, BasisSet, WeightMatrix};
pub use env::{Environment, InitialDistribution, JointTransitionSpec, RewardComponentSpec, TransitionCluster};
pub use error::{FsmdpError, Result};
pub use estimation::ConfidenceState;
pub use model::{FsmdpModel, ProblemStructure};
pub use optimism::{OptimisticTables, Sign};
pub use space::{counting_factor, enumerate_assignments, project, Assignment, FactoredSpace, Scope, ScopeIndexer};
