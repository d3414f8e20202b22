//! Numerical Weil-Petersson geometry of branched coverings of the Riemann
//! sphere by compact hyperbolic Riemann surfaces.
//!
//! The reference implementation works with hyperelliptic coverings
//! `y^2 = prod (x - e_m)`, `beta = x` of degree 2. It provides:
//!
//! * a two-sheeted chart mesh of the covering surface ([`mesh`]),
//! * hyperbolic uniformization by solving the Liouville equation
//!   `d_z d_zbar log g = g` ([`liouville`]),
//! * deformation fields of metric families: horizontal lifts, Beltrami
//!   differentials, harmonic representatives, phi-potentials ([`family`]),
//! * discrete `dbar`, its metric adjoint, Laplacians and Green operators
//!   ([`elliptic`]),
//! * the Weil-Petersson Gram matrix and both curvature formulas together
//!   with a finite-difference Kähler curvature oracle ([`wp`], [`curvature`]),
//! * an automatic-differentiation verification lab on the Poincaré disk
//!   where every pointwise identity is checked in closed form ([`disk`]).

pub mod config;
pub mod curvature;
pub mod disk;
pub mod elliptic;
pub mod error;
pub mod family;
pub mod fem;
pub mod liouville;
pub mod mesh;
pub mod report;
pub mod sparse;
pub mod stencil;
pub mod target;
pub mod wp;

pub use config::BranchConfiguration;
pub use error::Error;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;

/// Convenience constructor.
pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}
