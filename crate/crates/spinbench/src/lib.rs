//! Spin-dynamics workbench for coupled electron-nuclear spin systems in
//! low-symmetry crystals.
//!
//! The library covers the full chain from a parameterized spin Hamiltonian to
//! quantities measured in pulsed magnetic-resonance experiments:
//!
//! * [`spin_core`] — domain types, physical constants, the (D1, D2, b) lab
//!   frame, and generation of magnetically inequivalent subsites by C2
//!   symmetry about the b axis.
//! * [`hamiltonian`] — construction of the electron-nuclear spin Hamiltonian
//!   at a given static field and its ordered eigensystem.
//! * [`spectra`] — transition dipole moments, allowed/forbidden
//!   classification, resonance-field searches at fixed microwave frequency,
//!   and angular rotation patterns.
//! * [`dynamics`] — Boltzmann populations, effective g factors and Zeeman
//!   temperatures, the direct-process spin-lattice relaxation model, and the
//!   flip-flop decoherence model.
//! * [`pulsesim`] — density-matrix simulation of transition-selective pulse
//!   sequences (Rabi nutation, Hahn echo, inversion recovery, Davies ENDOR,
//!   nuclear coherence transfer).
//! * [`fitting`] — damped least-squares extraction of relaxation and
//!   decoherence parameters from decay traces and temperature series.
//! * [`output`] — deterministic CSV/SVG serialization helpers shared by the
//!   command-line front end.
//!
//! Unit conventions, used everywhere without exception: energies are stored
//! as frequencies in MHz, magnetic fields in mT, temperatures in K, pulse
//! durations in ns, delay/decay times in µs unless a type says otherwise.

pub mod constants;
pub mod dynamics;
pub mod fitting;
pub mod hamiltonian;
pub mod output;
pub mod pulsesim;
pub mod spectra;
pub mod spin_core;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A domain invariant was violated while constructing a type.
    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },

    /// A numeric precondition on an operation failed.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// A pulse carrier does not match any transition within its bandwidth.
    #[error(
        "off-resonant pulse at {carrier_mhz} MHz: nearest transition is \
         {lower}->{upper} at {nearest_mhz} MHz ({detuning_mhz} MHz away, \
         bandwidth {bandwidth_mhz} MHz)"
    )]
    OffResonantPulse {
        carrier_mhz: f64,
        nearest_mhz: f64,
        detuning_mhz: f64,
        bandwidth_mhz: f64,
        lower: usize,
        upper: usize,
    },

    /// A least-squares fit did not converge or its input was unusable.
    #[error("fit failed: {0}")]
    Fit(String),

    #[error("malformed {what}: {why}")]
    Format { what: &'static str, why: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(what: &'static str, why: impl Into<String>) -> Self {
        Error::Invalid { what, why: why.into() }
    }

    pub(crate) fn pre(why: impl Into<String>) -> Self {
        Error::Precondition(why.into())
    }
}
