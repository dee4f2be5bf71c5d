//! Crowd motion under a hard density cap `rho <= 1` with diffusion, in one space
//! dimension.
//!
//! The evolution alternates a Fokker-Planck step `d_t rho - rho'' + (rho u)' = 0`
//! with the Wasserstein-2 projection onto `{rho <= 1}`. The projection is computed
//! exactly through quantile functions, and the pressure is recovered from the
//! optimal displacement. Around this core sit an exact min-cost-flow transport
//! oracle, Variant schemes (Gaussian-convolution splitting on the circle and the
//! JKO step), trajectory diagnostics, and a file-driven runner.

pub mod cli;
pub mod config;
pub mod error;
pub mod fokker_planck;
pub mod grid;
pub mod io;
pub mod isotonic;
pub mod oracle;
pub mod projection;
pub mod quantile;
pub mod schemes;
pub mod transport;

pub use error::{Error, Result};
pub use grid::{make_density, Domain, DomainKind, Grid, GridDensity, Profile};
pub use quantile::{from_quantile, to_quantile, QuantileFn};
