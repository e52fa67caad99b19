//! Helmholtz spectra `ψ'' + λ φ ψ = 0` by the Prüfer angle method, the
//! imaging constants of the spectral transfer matrix, and the focusing they
//! predict for classical trajectory fans, Gaussian wave packets and charged
//! particles in a pulsed solenoid.

pub mod ode_core;
pub mod potential_expr;
pub mod prufer_spectral;
pub mod transfer_optics;
pub mod congruence_sim;
pub mod quantum_image;
pub mod solenoid_sim;
pub mod validation;

pub use potential_expr::{parse_potential, Coefficient, PotentialSpec};
pub use prufer_spectral::{find_eigenvalue, spectrum, SpectralOptions, SpectralResult};
pub use transfer_optics::{evolution_matrix, TransferMatrix};
