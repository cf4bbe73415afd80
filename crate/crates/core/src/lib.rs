//! Hybrid EMT-TS co-simulation engine.
//!
//! The crate couples a micro-second-step electromagnetic-transient (EMT)
//! model of an MMC-based HVdc link and its surrounding ac buffer areas with
//! a milli-second-step phasor transient-stability (TS) model of the external
//! grid. The pieces:
//!
//! - [`grid`] — network file parsing, admittance assembly, Newton power flow
//! - [`buffer`] — VAR-injection voltage-sensitivity buffer-area selection
//! - [`ts`] — fixed-step phasor dynamics of the external system
//! - [`emt`] — three-phase instantaneous-waveform simulation of the buffer
//!   networks, the dc line and the averaged-arm MMC converters
//! - [`hybrid`] — the multi-rate orchestrator, waveform/phasor conversion,
//!   the equivalent-source baseline mode and run comparison
//! - [`signal`] — phasor extraction, symmetric components, band energies

pub mod buffer;
pub mod emt;
pub mod grid;
pub mod hybrid;
pub mod signal;
pub mod ts;
