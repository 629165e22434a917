//! Thermal populations, effective g factors and Zeeman temperatures, the
//! direct-process spin-lattice relaxation model and the flip-flop
//! decoherence model.
//!
//! The SLR model is 1/T₁e = A·coth(ΔE/2k_BT): a single-phonon direct
//! process, the only relaxation channel retained at sub-Kelvin temperatures.
//! The flip-flop model is
//!
//! ```text
//! 1/T₂ = Σ_i C / [(1 + e^{T_i/T})(1 + e^{-T_i/T})] + D
//! ```
//!
//! where the sum runs over the effective Zeeman temperatures T_i = g_i µ_B
//! B/k_B of the subsite subensembles, C scales the indirect electron
//! flip-flop contribution and D is the temperature-independent residual
//! rate. Both evaluations use exp-of-negative-argument forms: T_i/T reaches
//! ~73 at the coldest working points and the naive expressions overflow.

use nalgebra::{Matrix3, Vector3};

use crate::constants::PhysicalConstants;
use crate::{Error, Result};

/// Thermal occupation probabilities per eigenstate, normalized to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationVector(Vec<f64>);

impl PopulationVector {
    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for PopulationVector {
    type Output = f64;

    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

/// Boltzmann populations p_k ∝ exp(-h·E_k/(k_B·T)) for energies in MHz.
pub fn boltzmann_populations(
    energies_mhz: &[f64],
    temperature_k: f64,
    constants: &PhysicalConstants,
) -> Result<PopulationVector> {
    if temperature_k <= 0.0 || !temperature_k.is_finite() {
        return Err(Error::pre(format!(
            "temperature must be > 0 K, got {temperature_k}"
        )));
    }
    if energies_mhz.is_empty() {
        return Err(Error::pre("empty energy list"));
    }
    let kt_mhz = constants.boltzmann_mhz_per_k() * temperature_k;
    let e_min = energies_mhz.iter().copied().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = energies_mhz.iter().map(|e| (-(e - e_min) / kt_mhz).exp()).collect();
    let z: f64 = weights.iter().sum();
    Ok(PopulationVector(weights.into_iter().map(|w| w / z).collect()))
}

/// Orientation-dependent effective g factor √(nᵀ·g·gᵀ·n).
pub fn effective_g(g_matrix: &Matrix3<f64>, direction: &Vector3<f64>) -> f64 {
    let v = g_matrix.transpose() * direction;
    v.norm()
}

/// Effective Zeeman temperature T = g·µ_B·B/k_B in K for a field in mT.
pub fn effective_zeeman_temperature(
    g_eff: f64,
    field_mt: f64,
    constants: &PhysicalConstants,
) -> Result<f64> {
    if field_mt < 0.0 {
        return Err(Error::pre(format!("field must be >= 0 mT, got {field_mt}")));
    }
    Ok(g_eff * constants.bohr_magneton_mhz_per_mt() * field_mt / constants.boltzmann_mhz_per_k())
}

/// Direct-process spin-lattice relaxation: 1/T₁e = A·coth(ΔE/2k_BT).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlrModel {
    /// Temperature-independent prefactor A in s⁻¹.
    pub slr_prefactor_per_s: f64,
    /// Electron transition energy ΔE as a frequency in GHz.
    pub transition_energy_ghz: f64,
}

impl SlrModel {
    pub fn new(slr_prefactor_per_s: f64, transition_energy_ghz: f64) -> Result<Self> {
        if slr_prefactor_per_s <= 0.0 {
            return Err(Error::invalid("SLR model", "prefactor must be > 0"));
        }
        if transition_energy_ghz <= 0.0 {
            return Err(Error::invalid("SLR model", "transition energy must be > 0"));
        }
        Ok(SlrModel { slr_prefactor_per_s, transition_energy_ghz })
    }
}

/// coth evaluated through expm1 of the negative-free argument; returns
/// exactly 1 for x > 50 where the correction underflows anyway.
fn coth_stable(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x > 50.0 {
        1.0
    } else {
        1.0 + 2.0 / (2.0 * x).exp_m1()
    }
}

/// SLR rate in s⁻¹ at temperature `t_k`.
pub fn slr_rate(model: &SlrModel, t_k: f64, constants: &PhysicalConstants) -> Result<f64> {
    if t_k <= 0.0 || !t_k.is_finite() {
        return Err(Error::pre(format!("temperature must be > 0 K, got {t_k}")));
    }
    let x = model.transition_energy_ghz / (2.0 * constants.boltzmann_ghz_per_k * t_k);
    Ok(model.slr_prefactor_per_s * coth_stable(x))
}

/// Flip-flop decoherence model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipFlopModel {
    /// Indirect flip-flop strength C in ms⁻¹.
    pub coupling_c_per_ms: f64,
    /// Residual rate D in ms⁻¹.
    pub residual_d_per_ms: f64,
    /// Effective Zeeman temperatures of the four subensembles in K.
    pub zeeman_temperatures_k: [f64; 4],
}

impl FlipFlopModel {
    pub fn new(
        coupling_c_per_ms: f64,
        residual_d_per_ms: f64,
        zeeman_temperatures_k: [f64; 4],
    ) -> Result<Self> {
        if coupling_c_per_ms < 0.0 {
            return Err(Error::invalid("flip-flop model", "C must be >= 0"));
        }
        if residual_d_per_ms < 0.0 {
            return Err(Error::invalid("flip-flop model", "D must be >= 0"));
        }
        if zeeman_temperatures_k.iter().any(|&t| t <= 0.0) {
            return Err(Error::invalid(
                "flip-flop model",
                "all Zeeman temperatures must be > 0",
            ));
        }
        Ok(FlipFlopModel { coupling_c_per_ms, residual_d_per_ms, zeeman_temperatures_k })
    }
}

/// One term of the flip-flop sum: C/[(1+e^x)(1+e^{-x})] with x = T_i/T,
/// evaluated as C·e^{-x}/(1+e^{-x})² so that large x underflows to 0 instead
/// of overflowing.
pub fn flipflop_summand(coupling_c: f64, x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x > 700.0 {
        return 0.0;
    }
    let e = (-x).exp();
    coupling_c * e / ((1.0 + e) * (1.0 + e))
}

/// The same summand through the algebraically equal form C/(2+2·cosh x);
/// kept as an independent cross-check of [`flipflop_summand`].
pub fn flipflop_summand_cosh(coupling_c: f64, x: f64) -> f64 {
    if x > 700.0 {
        return 0.0;
    }
    coupling_c / (2.0 + 2.0 * x.cosh())
}

/// Flip-flop decoherence rate 1/T₂ in ms⁻¹ at temperature `t_k`.
pub fn flipflop_rate(model: &FlipFlopModel, t_k: f64) -> Result<f64> {
    if t_k <= 0.0 || !t_k.is_finite() {
        return Err(Error::pre(format!("temperature must be > 0 K, got {t_k}")));
    }
    let sum: f64 = model
        .zeeman_temperatures_k
        .iter()
        .map(|&ti| flipflop_summand(model.coupling_c_per_ms, ti / t_k))
        .sum();
    Ok(sum + model.residual_d_per_ms)
}

/// A sampled model curve over temperature, for export and plotting.
#[derive(Debug, Clone)]
pub struct TemperatureSweep {
    pub temperatures_k: Vec<f64>,
    /// Model rate at each temperature; s⁻¹ for SLR, ms⁻¹ for flip-flop.
    pub rates: Vec<f64>,
    /// The corresponding time constant in µs.
    pub times_us: Vec<f64>,
}

/// Evaluate the SLR model on a temperature grid.
pub fn slr_sweep(
    model: &SlrModel,
    temperatures_k: &[f64],
    constants: &PhysicalConstants,
) -> Result<TemperatureSweep> {
    let rates: Result<Vec<f64>> =
        temperatures_k.iter().map(|&t| slr_rate(model, t, constants)).collect();
    let rates = rates?;
    let times_us = rates.iter().map(|r| 1e6 / r).collect();
    Ok(TemperatureSweep { temperatures_k: temperatures_k.to_vec(), rates, times_us })
}

/// Evaluate the flip-flop model on a temperature grid.
pub fn flipflop_sweep(model: &FlipFlopModel, temperatures_k: &[f64]) -> Result<TemperatureSweep> {
    let rates: Result<Vec<f64>> =
        temperatures_k.iter().map(|&t| flipflop_rate(model, t)).collect();
    let rates = rates?;
    let times_us = rates.iter().map(|r| 1e3 / r).collect();
    Ok(TemperatureSweep { temperatures_k: temperatures_k.to_vec(), rates, times_us })
}
