//! algforge: a symbolic/numeric workbench for algebroids and second-order
//! (higher) algebroids presented in local coordinates.
//!
//! Everything symbolic is exact: polynomials over arbitrary-precision
//! rationals, with graded (weighted) charts and jet prolongation as the
//! basic machinery.  Geometric objects are realized concretely:
//!
//! * [`expr`] — sparse multivariate polynomials over `BigRational`,
//!   jet symbols, total derivatives, a small text grammar;
//! * [`graded`] — graded coordinate charts, jet charts with bi-weights,
//!   weighted homogeneity, function/transition lifts, order reduction;
//! * [`comorphism`] — vector-bundle comorphisms (base map against the
//!   arrows, fiberwise-linear matrix over the target base), composition,
//!   duals, morphism checks, restriction to subbundles, tangent functor;
//! * [`algebroid`] — general algebroids as structure-function triples,
//!   brackets, the canonical comorphism of an algebroid, axiom checks;
//! * [`higher`] — second-order algebroids in normal form, the prolongation
//!   of an almost-Lie algebroid, lifts of sections, axiom checks;
//! * [`liegroup`] — reductions of higher tangent bundles of Lie groups:
//!   the canonical comorphism over a Lie algebra, graded subalgebroids and
//!   quotients;
//! * [`mechanics`] — second-order variational calculus along admissible
//!   curves: Euler–Lagrange residuals, boundary terms, Euler–Poincaré
//!   reduction, exact integration-by-parts checks, an RK4 integrator;
//! * [`model`] — TOML model files and report types shared with the CLI.

pub mod algebroid;
pub mod comorphism;
pub mod expr;
pub mod graded;
pub mod higher;
pub mod liegroup;
pub mod mechanics;
pub mod model;
