//! Simulation and analysis toolkit for a levitated-nanoparticle
//! accelerometer sensitized by a trap-frequency quench.
//!
//! The crate is organised bottom-up:
//!
//! * [`params`] : physical configuration and derived scalars
//! * [`profile`] : quench intensity model and its least-squares fit
//! * [`dynamics`] : Gaussian moment equations and sudden-quench closed forms
//! * [`metrology`] : quantum Fisher information, sensitivity and T_opt
//! * [`shots`] : single-shot synthesis, folded-normal and sinusoid fits
//! * [`allan`] : acceleration conversion and overlapping Allan deviation
//! * [`heating`] : gas and laser-phase-noise heating, heating-rate inference
//! * [`uncertainty`] : first-order error propagation

pub mod error;
pub mod lsq;
pub mod params;
pub mod profile;
pub mod dynamics;
pub mod metrology;
pub mod shots;
pub mod allan;
pub mod heating;
pub mod uncertainty;

pub use dynamics::{GaussianState, Trajectory};
pub use error::{Error, Result};
pub use metrology::{optimal_sensitivity, OptimalPoint};
pub use params::{derive, static_displacement, DerivedScalars, PhysicalParams};
pub use profile::{ProfileShape, QuenchProfile};
