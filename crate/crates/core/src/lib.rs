// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bvp;
pub mod decomposition;
pub mod dynamics;
pub mod error;
pub mod figures;
pub mod fixtures;
pub mod integrable;
pub mod lie_algebra;
pub mod ode;
pub mod optimize;
pub mod policy;
pub mod seeding;
pub mod stability;

pub use decomposition::{ABDecomposition, CentralizerSplit, DecompositionKind, PseudoCartanSplit};
pub use dynamics::{Brachistochrone, PhaseState, Trajectory};
pub use error::{Error, Result};
pub use lie_algebra::{HermitianMatrix, LieBasis, UnitaryMatrix};
pub use policy::NumericPolicy;
