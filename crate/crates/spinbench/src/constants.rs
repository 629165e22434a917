//! Physical constants expressed as frequencies, following EPR practice.
//!
//! Storing every energy as a frequency removes all ℏ bookkeeping: the
//! electron Zeeman interaction is `mu_B/h · B · g` in MHz when B is in mT,
//! and thermal factors use `k_B/h` in MHz/K directly.

use serde::{Deserialize, Serialize};

/// CODATA value of µ_B/h in GHz/T (numerically equal to MHz/mT).
pub const BOHR_MAGNETON_GHZ_PER_T: f64 = 13.996244936;

/// CODATA value of µ_N/h in MHz/T.
pub const NUCLEAR_MAGNETON_MHZ_PER_T: f64 = 7.622593230;

/// CODATA value of k_B/h in GHz/K.
pub const BOLTZMANN_GHZ_PER_K: f64 = 20.836619123;

/// Unit-conversion constants of the workbench.
///
/// The defaults are the CODATA values above; overriding them is supported so
/// that archival data sets computed with older constants can be reproduced
/// bit-for-bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// µ_B/h in GHz/T.
    pub bohr_magneton_ghz_per_t: f64,
    /// µ_N/h in MHz/T.
    pub nuclear_magneton_mhz_per_t: f64,
    /// k_B/h in GHz/K.
    pub boltzmann_ghz_per_k: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants {
            bohr_magneton_ghz_per_t: BOHR_MAGNETON_GHZ_PER_T,
            nuclear_magneton_mhz_per_t: NUCLEAR_MAGNETON_MHZ_PER_T,
            boltzmann_ghz_per_k: BOLTZMANN_GHZ_PER_K,
        }
    }
}

impl PhysicalConstants {
    /// µ_B/h in MHz/mT (numerically identical to GHz/T).
    pub fn bohr_magneton_mhz_per_mt(&self) -> f64 {
        self.bohr_magneton_ghz_per_t
    }

    /// µ_N/h in MHz/mT.
    pub fn nuclear_magneton_mhz_per_mt(&self) -> f64 {
        self.nuclear_magneton_mhz_per_t * 1e-3
    }

    /// k_B/h in MHz/K.
    pub fn boltzmann_mhz_per_k(&self) -> f64 {
        self.boltzmann_ghz_per_k * 1e3
    }

    /// Temperature equivalent h·ν/k_B of a transition frequency in GHz.
    pub fn frequency_to_temperature_k(&self, freq_ghz: f64) -> f64 {
        freq_ghz / self.boltzmann_ghz_per_k
    }
}
