//! Pseudospectral pluriclosed flow on flat complex tori.
//!
//! Fields live on a rectangular periodic grid ([`lattice`], [`spectral`],
//! [`field`]). [`hermitian`] holds the Chern-connection geometry, [`flow`]
//! the flow right-hand sides and integrators, [`gk`] the commuting
//! generalized Kähler scalar flow and [`diagnostics`] the identity and
//! monotonicity monitors. [`config`], [`io`] and [`run`] drive runs from a
//! config file.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod field;
pub mod flow;
pub mod gk;
pub mod hermitian;
pub mod io;
mod lanes;
pub mod lattice;
pub mod linalg;
pub mod oracle;
pub mod run;
pub mod spectral;
pub mod tensor;

pub use error::{PcfError, PositivityError, Result};
pub use field::{Field, MatrixField, Reduction, ScalarField, VectorField};
pub use hermitian::MetricField;
pub use lattice::ComplexLattice;
pub use spectral::{Grid, Kind};
