//! leop: pocket-conditioned 3D molecular optimization by equivariant
//! diffusion with explicit binding-affinity guidance.
//!
//! The engine trains an equivariant denoiser and an affinity head on
//! synthetic protein-ligand complexes, then generates decorated or linked
//! molecules whose atom positions, atom types, and bond types are steered
//! along affinity gradients.
//!
//! Module map:
//! - [`chemdata`]: domain types, PDB/SDF parsing, fake-atom padding, toy
//!   complex generation, and the geometric affinity oracle.
//! - [`schedule`]: variance-preserving noise schedules and derived step
//!   quantities.
//! - [`diffusion`]: forward noising kernels and exact posteriors for
//!   coordinates (Gaussian) and categories (categorical).
//! - [`autodiff`]: matrix-level reverse-mode differentiation tape.
//! - [`egnn`]: the equivariant denoiser with dual-graph message passing
//!   and the categorical prediction heads.
//! - [`weights`]: the versioned weights file format.
//! - [`training`]: composite loss assembly and stochastic optimization.
//! - [`affinity`]: the affinity head, its training, and the three
//!   guidance transformations.
//! - [`sampler`]: reverse-process generation, fake-atom stripping, and
//!   scaffold hopping.
//! - [`metrics`]: validity, LogP, Lipinski, high-affinity fraction, and
//!   run reports.
//! - [`cli`]: command-line entry points wiring everything into
//!   reproducible runs.

pub mod affinity;
pub mod autodiff;
pub mod chemdata;
pub mod cli;
pub mod diffusion;
pub mod egnn;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod training;
pub mod weights;
