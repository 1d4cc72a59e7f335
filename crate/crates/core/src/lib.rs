//! Solver library for history-dependent mixed variational problems with
//! Lagrange multipliers.
//!
//! The pieces fit together bottom-up:
//!
//! * [`saddle`] — static saddle-point instances solved by projection-Uzawa
//!   iteration, with structural-constant verification.
//! * [`history`] — memory-kernel time stepping that reduces the evolution
//!   problem to one static solve per node.
//! * [`mesh`] / [`fem2d`] — P1 finite elements for the 2D viscoelastic
//!   bilateral-contact model with Tresca friction.
//! * [`convergence`] — data-perturbation families, paired-solve error
//!   tables, Mosco-set checks and stability ratios.
//! * [`optim`] — derivative-free parameter identification over a closed box.

pub mod convergence;
pub mod error;
pub mod fem2d;
pub mod history;
pub mod linalg;
pub mod mesh;
pub mod optim;
pub mod saddle;

pub use error::{Error, Result};
pub use fem2d::{AssembledInstance, ContactModel, Loads, Material};
pub use history::{EvolutionProblem, MemoryKernel, TimeGrid, TimeScheme, Trajectory};
pub use mesh::{BoundaryTags, Mesh};
pub use optim::{CostSpec, CostTemplate, ParameterBox, ParameterPoint};
pub use saddle::{
    CouplingForm, MultiplierSet, PrimalOperator, SaddleSolution, StaticMixedInstance, StepRule,
    UzawaParams,
};

/// Builds the global thread pool with at most `threads` workers; `None`
/// keeps the default. Harmless if a pool already exists.
pub fn configure_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}
