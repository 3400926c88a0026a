//! Stochastic phase and isostable coordinates for planar diffusions.
//!
//! A model `dX = f(X) dt + g(X) dW` is discretized on a rectangular grid, the
//! slowest eigenmodes of its backward (Kolmogorov) operator are computed, and
//! from them the asymptotic phase `ψ`, the isostable coordinate `Σ`, the
//! zero-isostable curve `Σ₀` and the effective vector field `F` are built.
//! Ensembles of Euler–Maruyama paths check that the mean observables decay at
//! the predicted rates.
//!
//! ```
//! use isostable::{builtin_model, assemble_backward, classify, leading_spectrum, Grid};
//! use num_complex::Complex64;
//!
//! let spec = builtin_model("heteroclinic", &Default::default())?;
//! let grid = Grid::new(spec.domain(), 41, 41)?;
//! let op = assemble_backward(&spec, &grid)?;
//! let spectrum = leading_spectrum(&op, 12, Complex64::new(0.05, 0.0))?;
//! let roles = classify(&spectrum, spectrum.tol_zero(), 3.0)?;
//! assert!(roles.mu() < 0.0 && roles.omega() > 0.0);
//! # Ok::<(), isostable::Error>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod arnoldi;
pub mod banded;
pub mod effective;
pub mod ensemble;
mod error;
pub mod expr;
pub mod fields;
pub mod grid;
pub mod io;
pub mod model;
pub mod operator;
pub mod oracle;
pub mod pipeline;
pub mod spectral;

pub use effective::{constraint_residuals, effective_vector_field, field_line, VectorField};
pub use ensemble::{
    fit_complex_decay, fit_decay_rate, mean_observable_decay, mean_observables_decay, simulate_paths, simulate_paths_with, EnsembleStats,
    SimulationConfig,
};
pub use error::{Error, ErrorKind, Result};
pub use fields::{gradient, isochron, isostable_field, phase_field, zero_level_set, Contour};
pub use grid::{Grid, ScalarField};
pub use model::{builtin_model, linear_model, Boundary, Domain, ModelConfig, ModelSpec};
pub use operator::{assemble_backward, assemble_forward, Direction, SparseOperator};
pub use oracle::{ou_effective_field, ou_eigendata, ou_sigma0_radius, OuCanonical};
pub use pipeline::{reproduce_table, run_pipeline, RunOptions};
pub use spectral::{
    biorthogonality_check, classify, leading_spectrum, leading_spectrum_with, null_density, stationary_density, Method,
    SpectralOptions, SpectralRoles, Spectrum,
};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/operators.md")]
    mod operators {}
    #[doc = include_str!("../../../book/src/spectrum.md")]
    mod spectrum {}
    #[doc = include_str!("../../../book/src/fields.md")]
    mod fields {}
    #[doc = include_str!("../../../book/src/effective-field.md")]
    mod effective_field {}
    #[doc = include_str!("../../../book/src/ensemble.md")]
    mod ensemble {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/reference-checks.md")]
    mod reference_checks {}
}
