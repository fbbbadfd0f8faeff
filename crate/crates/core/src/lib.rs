//! Simulation and analysis toolkit for a tin-vacancy electron spin coupled to
//! a ¹³C nuclear spin in diamond.
//!
//! The crate is organised by task:
//!
//! * [`levels`]: fine-structure and hyperfine Hamiltonians, transition
//!   frequencies, effective gyromagnetic ratios, nuclear Rabi enhancement.
//! * [`pumping`]: optical-pumping rate models and initialization fidelity.
//! * [`pulse`]: two-level pulse dynamics, Ornstein–Uhlenbeck dephasing,
//!   coherence fits and the two-tone field calibration.
//! * [`benchmarking`]: single-qubit randomized benchmarking.
//! * [`fitkit`]: weighted nonlinear least squares and error propagation.
//!
//! Frequencies are linear unless a name says otherwise; rate equations take
//! angular rates (see [`pumping::AngularRate`]).

pub mod benchmarking;
pub mod calibration;
pub mod error;
pub mod fitkit;
pub mod levels;
pub mod pulse;
pub mod pumping;
pub mod rng;

pub use error::{Error, Result};
