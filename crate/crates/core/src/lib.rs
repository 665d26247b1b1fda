//! Projection-operator quantization of constrained canonical systems in
//! truncated Fock spaces.
//!
//! The crate is organised bottom-up:
//!
//! * [`operator`] and [`fock`]: dense operators, truncated ladders, tensor
//!   embeddings, Hermitian eigensolver and matrix exponential.
//! * [`expr`]: a small operator-expression language (`"0.5*(P^2+Q^2)"`,
//!   `":P^2+Q^2: - 2"`) used by configuration front-ends.
//! * [`coherent`]: canonical coherent states over arbitrary fiducial vectors.
//! * [`constraint`] and [`reduce`]: spectral constraint projectors,
//!   constrained reproducing kernels and the rescaled small-`delta` limit.
//! * [`product`]: N-fold and infinite product kernels, convergence
//!   classification of label sequences.
//! * [`dynamics`]: propagators with constraints, energy renormalisation and
//!   fiducial selection.
//! * [`oracle`]: closed-form kernels for the four soluble examples.

pub mod coherent;
pub mod constraint;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod fock;
pub mod operator;
pub mod oracle;
pub mod product;
pub mod quadrature;
pub mod reduce;

pub use coherent::{CoherentLabel, CoherentStates, FiducialVector};
pub use constraint::{ConstraintKind, ConstraintProjector, ConstraintSet};
pub use error::{Error, ErrorClass, Result};
pub use fock::{FockSpace, SpaceOptions};
pub use operator::{OperatorMatrix, C64};
