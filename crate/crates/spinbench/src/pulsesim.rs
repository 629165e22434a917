//! Density-matrix simulation of transition-selective pulse sequences on the
//! full hyperfine level structure.
//!
//! Pulses are modeled as two-level rotations on the eigenstate pair closest
//! in frequency to the pulse carrier (selective-pulse model). A pulse with
//! on-resonance Rabi frequency Ω and detuning Δ applies the generalized Rabi
//! rotation with angle 2π·√(Ω²+Δ²)·t about the tilted axis; pulses whose
//! carrier lies further than Ω from every transition are rejected. Full
//! time-domain Hamiltonian integration is deliberately out of scope: the
//! sequences simulated here use pulses that are transition-selective by
//! design, and the two-level rotation is exact for them.
//!
//! Relaxation is phenomenological and is applied only during `Delay` events
//! (pulse durations are far shorter than every coherence time handled here):
//! populations relax toward the Boltzmann distribution with T₁e, and each
//! off-diagonal element decays under the stretched (Mims) envelope of its
//! coherence type. The envelope bookkeeping sums a coherence's accumulated
//! delay time before exponentiating — for an element that has already spent
//! time t as a coherence, a further delay τ multiplies it by
//! exp[-((t+τ)/T₂)^m + (t/T₂)^m] — so a two-pulse echo at total delay 2τ
//! carries exactly exp[-(2τ/T₂)^m], and time parked in a nuclear coherence
//! is charged to T₂n rather than T₂e. Each element's clock advances only
//! while that element holds amplitude.
//!
//! Not modeled: instantaneous and spectral diffusion (excitation-bandwidth
//! reduction enters only through the pulse amplitude a caller selects) and
//! ESEEM-style envelope modulation.

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::dynamics::boltzmann_populations;
use crate::hamiltonian::{diagonalize, EigenSystem};
use crate::spin_core::SpinSystem;
use crate::{Error, Result};

type CMat = DMatrix<Complex64>;

/// Off-diagonal amplitudes below this threshold do not advance a coherence
/// clock during delays.
const COHERENCE_AMP_FLOOR: f64 = 1e-14;

/// Drive channel of a pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "MW")]
    Mw,
    #[serde(rename = "RF")]
    Rf,
}

/// One rectangular pulse: carrier, duration, phase and on-resonance Rabi
/// frequency of the addressed transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseEvent {
    pub channel: Channel,
    pub carrier_mhz: f64,
    pub duration_ns: f64,
    pub phase_rad: f64,
    pub amplitude_mhz: f64,
}

impl PulseEvent {
    pub fn validate(&self) -> Result<()> {
        if self.duration_ns <= 0.0 {
            return Err(Error::invalid("pulse", "duration must be > 0 ns"));
        }
        if self.amplitude_mhz < 0.0 {
            return Err(Error::invalid("pulse", "amplitude must be >= 0 MHz"));
        }
        Ok(())
    }

    /// Rotation angle 2π·Ω·t in radians when driven on resonance.
    pub fn nominal_angle_rad(&self) -> f64 {
        std::f64::consts::TAU * self.amplitude_mhz * self.duration_ns * 1e-3
    }
}

/// One step of a pulse sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SequenceEvent {
    Pulse(PulseEvent),
    Delay { duration_ns: f64 },
    Acquire,
}

/// Which scalar of which events a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    PulseDuration,
    PulseCarrier,
    DelayDuration,
}

/// Sweep declaration: the listed events all take the swept value.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub parameter: SweepParameter,
    pub event_indices: Vec<usize>,
    pub values: Vec<f64>,
}

/// An ordered event list with exactly one `Acquire` and a sweep declaration.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    events: Vec<SequenceEvent>,
    sweep: Sweep,
}

impl PulseSequence {
    pub fn new(events: Vec<SequenceEvent>, sweep: Sweep) -> Result<Self> {
        let acquires = events.iter().filter(|e| matches!(e, SequenceEvent::Acquire)).count();
        if acquires != 1 {
            return Err(Error::invalid(
                "pulse sequence",
                format!("exactly one acquire event is required, found {acquires}"),
            ));
        }
        if sweep.values.is_empty() {
            return Err(Error::invalid("pulse sequence", "sweep grid is empty"));
        }
        if sweep.event_indices.is_empty() {
            return Err(Error::invalid("pulse sequence", "sweep targets no event"));
        }
        for e in &events {
            if let SequenceEvent::Pulse(p) = e {
                p.validate()?;
            }
            if let SequenceEvent::Delay { duration_ns } = e {
                if *duration_ns < 0.0 {
                    return Err(Error::invalid("pulse sequence", "negative delay"));
                }
            }
        }
        for &idx in &sweep.event_indices {
            let ok = match events.get(idx) {
                Some(SequenceEvent::Pulse(_)) => matches!(
                    sweep.parameter,
                    SweepParameter::PulseDuration | SweepParameter::PulseCarrier
                ),
                Some(SequenceEvent::Delay { .. }) => {
                    matches!(sweep.parameter, SweepParameter::DelayDuration)
                }
                _ => false,
            };
            if !ok {
                return Err(Error::invalid(
                    "pulse sequence",
                    format!("swept parameter {:?} does not exist on event {idx}", sweep.parameter),
                ));
            }
        }
        Ok(PulseSequence { events, sweep })
    }

    pub fn events(&self) -> &[SequenceEvent] {
        &self.events
    }

    pub fn sweep(&self) -> &Sweep {
        &self.sweep
    }

    /// Events with the swept value substituted in.
    pub fn events_at(&self, value: f64) -> Vec<SequenceEvent> {
        let mut events = self.events.clone();
        for &idx in &self.sweep.event_indices {
            match (&mut events[idx], self.sweep.parameter) {
                (SequenceEvent::Pulse(p), SweepParameter::PulseDuration) => p.duration_ns = value,
                (SequenceEvent::Pulse(p), SweepParameter::PulseCarrier) => p.carrier_mhz = value,
                (SequenceEvent::Delay { duration_ns }, SweepParameter::DelayDuration) => {
                    *duration_ns = value
                }
                _ => unreachable!("validated at construction"),
            }
        }
        events
    }

    // ---- canned sequences used throughout the experiments ----

    /// Rabi nutation: one pulse of swept length, then acquire.
    pub fn rabi_nutation(
        channel: Channel,
        carrier_mhz: f64,
        amplitude_mhz: f64,
        lengths_ns: Vec<f64>,
    ) -> Result<Self> {
        let pulse = PulseEvent {
            channel,
            carrier_mhz,
            duration_ns: 1.0,
            phase_rad: 0.0,
            amplitude_mhz,
        };
        PulseSequence::new(
            vec![SequenceEvent::Pulse(pulse), SequenceEvent::Acquire],
            Sweep {
                parameter: SweepParameter::PulseDuration,
                event_indices: vec![0],
                values: lengths_ns,
            },
        )
    }

    /// Two-pulse Hahn echo π/2 — τ — π — τ — echo with both delays swept
    /// together.
    pub fn hahn_echo(carrier_mhz: f64, amplitude_mhz: f64, taus_ns: Vec<f64>) -> Result<Self> {
        let pi_ns = 500.0 / amplitude_mhz;
        let mk = |duration_ns: f64| {
            SequenceEvent::Pulse(PulseEvent {
                channel: Channel::Mw,
                carrier_mhz,
                duration_ns,
                phase_rad: 0.0,
                amplitude_mhz,
            })
        };
        PulseSequence::new(
            vec![
                mk(pi_ns / 2.0),
                SequenceEvent::Delay { duration_ns: 1.0 },
                mk(pi_ns),
                SequenceEvent::Delay { duration_ns: 1.0 },
                SequenceEvent::Acquire,
            ],
            Sweep {
                parameter: SweepParameter::DelayDuration,
                event_indices: vec![1, 3],
                values: taus_ns,
            },
        )
    }

    /// Inversion recovery π — τ_var — π/2 — τ_e — π — τ_e — echo with the
    /// recovery delay swept.
    pub fn inversion_recovery(
        carrier_mhz: f64,
        amplitude_mhz: f64,
        tau_echo_ns: f64,
        recovery_ns: Vec<f64>,
    ) -> Result<Self> {
        let pi_ns = 500.0 / amplitude_mhz;
        let mk = |duration_ns: f64| {
            SequenceEvent::Pulse(PulseEvent {
                channel: Channel::Mw,
                carrier_mhz,
                duration_ns,
                phase_rad: 0.0,
                amplitude_mhz,
            })
        };
        PulseSequence::new(
            vec![
                mk(pi_ns),
                SequenceEvent::Delay { duration_ns: 1.0 },
                mk(pi_ns / 2.0),
                SequenceEvent::Delay { duration_ns: tau_echo_ns },
                mk(pi_ns),
                SequenceEvent::Delay { duration_ns: tau_echo_ns },
                SequenceEvent::Acquire,
            ],
            Sweep {
                parameter: SweepParameter::DelayDuration,
                event_indices: vec![1],
                values: recovery_ns,
            },
        )
    }

    /// Davies ENDOR π_e — τ — π_rf — τ — π/2_e — τ — π_e — τ — echo with the
    /// RF carrier swept.
    pub fn davies_endor(
        mw_carrier_mhz: f64,
        mw_amplitude_mhz: f64,
        rf_amplitude_mhz: f64,
        tau_ns: f64,
        rf_grid_mhz: Vec<f64>,
    ) -> Result<Self> {
        let mw_pi = 500.0 / mw_amplitude_mhz;
        let rf_pi = 500.0 / rf_amplitude_mhz;
        let mw = |duration_ns: f64| {
            SequenceEvent::Pulse(PulseEvent {
                channel: Channel::Mw,
                carrier_mhz: mw_carrier_mhz,
                duration_ns,
                phase_rad: 0.0,
                amplitude_mhz: mw_amplitude_mhz,
            })
        };
        PulseSequence::new(
            vec![
                mw(mw_pi),
                SequenceEvent::Delay { duration_ns: tau_ns },
                SequenceEvent::Pulse(PulseEvent {
                    channel: Channel::Rf,
                    carrier_mhz: 1.0,
                    duration_ns: rf_pi,
                    phase_rad: 0.0,
                    amplitude_mhz: rf_amplitude_mhz,
                }),
                SequenceEvent::Delay { duration_ns: tau_ns },
                mw(mw_pi / 2.0),
                SequenceEvent::Delay { duration_ns: tau_ns },
                mw(mw_pi),
                SequenceEvent::Delay { duration_ns: tau_ns },
                SequenceEvent::Acquire,
            ],
            Sweep {
                parameter: SweepParameter::PulseCarrier,
                event_indices: vec![2],
                values: rf_grid_mhz,
            },
        )
    }

    /// Electron-coherence storage in a nuclear coherence: π/2_e — τ_e —
    /// (π_rf, π_mw′) — 2τ_n — (π_mw′, π_rf) — π_e — τ_e — echo, sweeping the
    /// nuclear storage time. `rf_carrier` must address a transition sharing
    /// its lower level with the upper level of the electron pair, and
    /// `mw_store_carrier` the electron transition that closes the transfer.
    #[allow(clippy::too_many_arguments)]
    pub fn nuclear_storage(
        mw_carrier_mhz: f64,
        mw_store_carrier_mhz: f64,
        rf_carrier_mhz: f64,
        mw_amplitude_mhz: f64,
        rf_amplitude_mhz: f64,
        tau_e_ns: f64,
        storage_ns: Vec<f64>,
    ) -> Result<Self> {
        let mw_pi = 500.0 / mw_amplitude_mhz;
        let rf_pi = 500.0 / rf_amplitude_mhz;
        let mw = |carrier_mhz: f64, duration_ns: f64| {
            SequenceEvent::Pulse(PulseEvent {
                channel: Channel::Mw,
                carrier_mhz,
                duration_ns,
                phase_rad: 0.0,
                amplitude_mhz: mw_amplitude_mhz,
            })
        };
        let rf = SequenceEvent::Pulse(PulseEvent {
            channel: Channel::Rf,
            carrier_mhz: rf_carrier_mhz,
            duration_ns: rf_pi,
            phase_rad: 0.0,
            amplitude_mhz: rf_amplitude_mhz,
        });
        PulseSequence::new(
            vec![
                mw(mw_carrier_mhz, mw_pi / 2.0),
                SequenceEvent::Delay { duration_ns: tau_e_ns },
                rf,
                mw(mw_store_carrier_mhz, mw_pi),
                SequenceEvent::Delay { duration_ns: 1.0 },
                mw(mw_store_carrier_mhz, mw_pi),
                rf,
                mw(mw_carrier_mhz, mw_pi),
                SequenceEvent::Delay { duration_ns: tau_e_ns },
                SequenceEvent::Acquire,
            ],
            Sweep {
                parameter: SweepParameter::DelayDuration,
                event_indices: vec![4],
                values: storage_ns,
            },
        )
    }
}

/// Phenomenological relaxation parameters applied during delays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxationSpec {
    /// Electron population lifetime in seconds.
    pub t1e_s: f64,
    /// Electron coherence time in µs.
    pub t2e_us: f64,
    /// Nuclear coherence time in µs.
    pub t2n_us: f64,
    /// Mims stretch exponent applied to both coherence envelopes.
    pub stretch_m: f64,
}

impl RelaxationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.t1e_s <= 0.0 || self.t2e_us <= 0.0 || self.t2n_us <= 0.0 {
            return Err(Error::invalid("relaxation", "all times must be > 0"));
        }
        if !(self.stretch_m > 0.0 && self.stretch_m <= 2.0) {
            return Err(Error::invalid("relaxation", "stretch exponent must lie in (0, 2]"));
        }
        Ok(())
    }
}

/// Result of converting a transition moment and drive field into a Rabi
/// frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RabiDrive {
    pub omega_mhz: f64,
    /// False when the transition moment vanishes and the pair cannot be
    /// driven at any power.
    pub drivable: bool,
}

impl RabiDrive {
    /// π-pulse duration 1/(2Ω) in ns, when drivable.
    pub fn pi_duration_ns(&self) -> Option<f64> {
        self.drivable.then(|| 500.0 / self.omega_mhz)
    }
}

/// Rabi frequency Ω = moment·(µ_B/h)·B₁ for a transition moment in µ_B units
/// and a drive amplitude in mT.
pub fn rabi_frequency(
    moment_mub: f64,
    b1_mt: f64,
    constants: &PhysicalConstants,
) -> Result<RabiDrive> {
    if b1_mt < 0.0 {
        return Err(Error::pre(format!("drive field must be >= 0 mT, got {b1_mt}")));
    }
    if moment_mub < 0.0 {
        return Err(Error::pre("transition moment must be >= 0"));
    }
    let omega_mhz = moment_mub * constants.bohr_magneton_mhz_per_mt() * b1_mt;
    Ok(RabiDrive { omega_mhz, drivable: omega_mhz > 0.0 })
}

/// How a pulse whose carrier matches no transition within its bandwidth is
/// handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffResonancePolicy {
    /// Fail the run, naming the nearest transition.
    Error,
    /// Treat the pulse as the identity. Used for ENDOR frequency sweeps,
    /// where most of the swept grid is intentionally off-resonant.
    Identity,
}

/// Classification of density-matrix elements by the labels of their states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CoherenceKind {
    /// ΔM_S ≠ 0: decays with T₂e.
    Electron,
    /// ΔM_S = 0, ΔM_I ≠ 0: decays with T₂n.
    Nuclear,
}

/// Signal trace over a swept grid.
#[derive(Debug, Clone)]
pub struct SignalTrace {
    pub swept_values: Vec<f64>,
    /// Signed echo amplitude 2·Im ρ(lower, upper) of the readout pair; the
    /// sign distinguishes inverted from recovered signals.
    pub signals: Vec<f64>,
    /// |2·ρ(lower, upper)| of the readout pair.
    pub magnitudes: Vec<f64>,
    /// Eigenstate pair read out at acquire (from the last pulse).
    pub readout_pair: (usize, usize),
}

/// Snapshot of the simulation state after one event, for diagnostics and
/// invariant checks.
#[derive(Debug, Clone)]
pub struct StateSnapshot {
    pub rho: CMat,
}

/// The pulse-sequence engine for one subsite at one static field point.
pub struct SequenceEngine {
    eigen: EigenSystem,
    equilibrium: Vec<f64>,
    /// (lower, upper, frequency MHz) for all pairs, lower < upper.
    transitions: Vec<(usize, usize, f64)>,
    kinds: Vec<CoherenceKind>, // indexed like a packed upper triangle
    relaxation: Option<RelaxationSpec>,
    policy: OffResonancePolicy,
    dim: usize,
}

fn tri_index(dim: usize, a: usize, b: usize) -> usize {
    // a < b
    a * dim + b
}

impl SequenceEngine {
    pub fn new(
        system: &SpinSystem,
        b_mt: &Vector3<f64>,
        relaxation: Option<RelaxationSpec>,
        temperature_k: f64,
        constants: &PhysicalConstants,
    ) -> Result<Self> {
        if let Some(r) = &relaxation {
            r.validate()?;
        }
        let eigen = diagonalize(system, b_mt, constants)?;
        let equilibrium =
            boltzmann_populations(&eigen.energies, temperature_k, constants)?
                .probabilities()
                .to_vec();
        let dim = eigen.dim();
        let mut transitions = Vec::new();
        let mut kinds = vec![CoherenceKind::Electron; dim * dim];
        for a in 0..dim {
            for b in (a + 1)..dim {
                transitions.push((a, b, eigen.transition_frequency(a, b)));
                let (la, lb) = (eigen.labels[a], eigen.labels[b]);
                kinds[tri_index(dim, a, b)] = if la.m_s_doubled != lb.m_s_doubled {
                    CoherenceKind::Electron
                } else {
                    CoherenceKind::Nuclear
                };
            }
        }
        Ok(SequenceEngine {
            eigen,
            equilibrium,
            transitions,
            kinds,
            relaxation,
            policy: OffResonancePolicy::Error,
            dim,
        })
    }

    pub fn with_off_resonance_policy(mut self, policy: OffResonancePolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn eigensystem(&self) -> &EigenSystem {
        &self.eigen
    }

    /// Initial state: Boltzmann populations on the diagonal.
    pub fn initial_state(&self) -> CMat {
        let mut rho = CMat::zeros(self.dim, self.dim);
        for (k, &p) in self.equilibrium.iter().enumerate() {
            rho[(k, k)] = Complex64::new(p, 0.0);
        }
        rho
    }

    /// Transition nearest in frequency to `carrier_mhz`.
    pub fn nearest_transition(&self, carrier_mhz: f64) -> (usize, usize, f64) {
        *self
            .transitions
            .iter()
            .min_by(|a, b| {
                (a.2 - carrier_mhz).abs().partial_cmp(&(b.2 - carrier_mhz).abs()).unwrap()
            })
            .expect("at least one pair")
    }

    fn apply_pulse(&self, rho: &mut CMat, pulse: &PulseEvent) -> Result<Option<(usize, usize)>> {
        pulse.validate()?;
        let (lo, up, freq) = self.nearest_transition(pulse.carrier_mhz);
        let detuning = pulse.carrier_mhz - freq;
        if detuning.abs() > pulse.amplitude_mhz {
            match self.policy {
                OffResonancePolicy::Identity => return Ok(None),
                OffResonancePolicy::Error => {
                    return Err(Error::OffResonantPulse {
                        carrier_mhz: pulse.carrier_mhz,
                        nearest_mhz: freq,
                        detuning_mhz: detuning,
                        bandwidth_mhz: pulse.amplitude_mhz,
                        lower: lo,
                        upper: up,
                    });
                }
            }
        }
        // generalized Rabi rotation on the (lo, up) pair
        let omega = pulse.amplitude_mhz;
        let omega_eff = (omega * omega + detuning * detuning).sqrt();
        let theta = std::f64::consts::TAU * omega_eff * pulse.duration_ns * 1e-3;
        let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
        let (dn, on) = if omega_eff > 0.0 {
            (detuning / omega_eff, omega / omega_eff)
        } else {
            (0.0, 0.0)
        };
        let e_phase = Complex64::new(0.0, pulse.phase_rad).exp();
        let mut u = CMat::identity(self.dim, self.dim);
        u[(lo, lo)] = Complex64::new(c, s * dn);
        u[(up, up)] = Complex64::new(c, -s * dn);
        u[(lo, up)] = Complex64::new(0.0, -s * on) * e_phase;
        u[(up, lo)] = Complex64::new(0.0, -s * on) * e_phase.conj();
        *rho = &u * &*rho * u.adjoint();
        Ok(Some((lo, up)))
    }

    fn apply_delay(&self, rho: &mut CMat, acc_us: &mut DMatrix<f64>, duration_ns: f64) {
        let Some(relax) = &self.relaxation else {
            return;
        };
        if duration_ns == 0.0 {
            return;
        }
        let tau_us = duration_ns * 1e-3;
        // populations relax toward Boltzmann with T1e
        let decay = (-(tau_us * 1e-6) / relax.t1e_s).exp();
        for k in 0..self.dim {
            let eq = self.equilibrium[k];
            let p = rho[(k, k)].re;
            rho[(k, k)] = Complex64::new(eq + (p - eq) * decay, 0.0);
        }
        // coherences decay under the stretched envelope of their kind
        let m = relax.stretch_m;
        for a in 0..self.dim {
            for b in (a + 1)..self.dim {
                if rho[(a, b)].norm() <= COHERENCE_AMP_FLOOR {
                    continue;
                }
                let t2 = match self.kinds[tri_index(self.dim, a, b)] {
                    CoherenceKind::Electron => relax.t2e_us,
                    CoherenceKind::Nuclear => relax.t2n_us,
                };
                let t_prev = acc_us[(a, b)];
                let t_now = t_prev + tau_us;
                let factor = (-(t_now / t2).powf(m) + (t_prev / t2).powf(m)).exp();
                rho[(a, b)] *= factor;
                rho[(b, a)] = rho[(a, b)].conj();
                acc_us[(a, b)] = t_now;
                acc_us[(b, a)] = t_now;
            }
        }
    }

    /// Run one event list, invoking `observe` with the state after every
    /// event; returns the acquired (signal, magnitude, readout pair).
    pub fn run_events_observed(
        &self,
        events: &[SequenceEvent],
        mut observe: impl FnMut(&CMat),
    ) -> Result<(f64, f64, (usize, usize))> {
        let mut rho = self.initial_state();
        let mut acc = DMatrix::zeros(self.dim, self.dim);
        let mut last_pair: Option<(usize, usize)> = None;
        let mut acquired = None;
        for ev in events {
            match ev {
                SequenceEvent::Pulse(p) => {
                    if let Some(pair) = self.apply_pulse(&mut rho, p)? {
                        last_pair = Some(pair);
                    }
                }
                SequenceEvent::Delay { duration_ns } => {
                    self.apply_delay(&mut rho, &mut acc, *duration_ns);
                }
                SequenceEvent::Acquire => {
                    let pair = last_pair.ok_or_else(|| {
                        Error::pre("acquire before any resonant pulse; no readout pair")
                    })?;
                    let el = rho[(pair.0, pair.1)];
                    acquired = Some((2.0 * el.im, 2.0 * el.norm(), pair));
                }
            }
            observe(&rho);
        }
        acquired.ok_or_else(|| Error::pre("sequence has no acquire event"))
    }

    pub fn run_events(&self, events: &[SequenceEvent]) -> Result<(f64, f64, (usize, usize))> {
        self.run_events_observed(events, |_| {})
    }

    /// Simulate a swept sequence. Grid points are independent and run in
    /// parallel; the trace is assembled in grid order.
    pub fn run_sequence(&self, sequence: &PulseSequence) -> Result<SignalTrace> {
        type Acquired = (f64, f64, (usize, usize));
        let results: Result<Vec<Acquired>> = sequence
            .sweep()
            .values
            .par_iter()
            .map(|&v| self.run_events(&sequence.events_at(v)))
            .collect();
        let results = results?;
        Ok(SignalTrace {
            swept_values: sequence.sweep().values.clone(),
            signals: results.iter().map(|r| r.0).collect(),
            magnitudes: results.iter().map(|r| r.1).collect(),
            readout_pair: results.first().map(|r| r.2).unwrap_or((0, 1)),
        })
    }
}

/// Run a swept pulse sequence for `system` at field `b_mt`.
///
/// Every pulse must address a transition within its Rabi bandwidth;
/// otherwise the run fails naming the nearest transition.
pub fn run_sequence(
    system: &SpinSystem,
    b_mt: &Vector3<f64>,
    sequence: &PulseSequence,
    relaxation: Option<RelaxationSpec>,
    temperature_k: f64,
    constants: &PhysicalConstants,
) -> Result<SignalTrace> {
    SequenceEngine::new(system, b_mt, relaxation, temperature_k, constants)?
        .run_sequence(sequence)
}

/// Davies ENDOR spectrum: echo amplitude versus RF frequency.
///
/// The electron transition `mw_pair` is inverted, a swept-frequency RF π
/// pulse is applied, and the echo is read out on the same electron pair.
/// Off-resonant RF grid points leave the state untouched, which yields the
/// inverted-echo baseline.
#[allow(clippy::too_many_arguments)]
pub fn davies_endor(
    system: &SpinSystem,
    b_mt: &Vector3<f64>,
    mw_pair: (usize, usize),
    rf_grid_mhz: Vec<f64>,
    relaxation: Option<RelaxationSpec>,
    temperature_k: f64,
    params: &DaviesParams,
    constants: &PhysicalConstants,
) -> Result<SignalTrace> {
    let engine = SequenceEngine::new(system, b_mt, relaxation, temperature_k, constants)?
        .with_off_resonance_policy(OffResonancePolicy::Identity);
    let (lo, up) = mw_pair;
    if up >= engine.dim || lo >= up {
        return Err(Error::pre(format!("invalid microwave transition ({lo}, {up})")));
    }
    let mw_carrier = engine.eigen.transition_frequency(lo, up);
    let seq = PulseSequence::davies_endor(
        mw_carrier,
        params.mw_amplitude_mhz,
        params.rf_amplitude_mhz,
        params.tau_ns,
        rf_grid_mhz,
    )?;
    engine.run_sequence(&seq)
}

/// Fixed knobs of the Davies ENDOR sequence.
#[derive(Debug, Clone, Copy)]
pub struct DaviesParams {
    /// Inter-pulse delay τ in ns.
    pub tau_ns: f64,
    pub mw_amplitude_mhz: f64,
    pub rf_amplitude_mhz: f64,
}

impl Default for DaviesParams {
    fn default() -> Self {
        DaviesParams { tau_ns: 2000.0, mw_amplitude_mhz: 9.615384615, rf_amplitude_mhz: 0.471698113 }
    }
}

// ---------------------------------------------------------------------------
// sequence files
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum EventFile {
    Pulse {
        channel: Channel,
        #[serde(rename = "frequency_MHz")]
        frequency_mhz: f64,
        #[serde(default)]
        duration_ns: Option<f64>,
        /// "pi", "pi/2" or a numeric multiple of π.
        #[serde(default)]
        angle: Option<String>,
        #[serde(default)]
        phase_rad: f64,
        #[serde(rename = "amplitude_MHz")]
        amplitude_mhz: f64,
    },
    Delay {
        duration_ns: f64,
    },
    Acquire,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum SweepGridFile {
    Values { values: Vec<f64> },
    Linspace { start: f64, stop: f64, points: usize },
}

#[derive(Debug, Serialize, Deserialize)]
struct SweepFile {
    parameter: SweepParameter,
    events: Vec<usize>,
    #[serde(flatten)]
    grid: SweepGridFile,
}

#[derive(Debug, Serialize, Deserialize)]
struct SequenceFile {
    events: Vec<EventFile>,
    sweep: SweepFile,
}

fn parse_angle(spec: &str) -> Result<f64> {
    // accepted: "pi", "pi/2", "pi/4", "2pi", "3pi/2" ...
    let s = spec.trim().replace(' ', "");
    let (num, den) = match s.split_once('/') {
        Some((n, d)) => (n, d.parse::<f64>().map_err(|_| bad_angle(spec))?),
        None => (s.as_str(), 1.0),
    };
    let coeff = match num.strip_suffix("pi") {
        Some("") => 1.0,
        Some(c) => c.parse::<f64>().map_err(|_| bad_angle(spec))?,
        None => return Err(bad_angle(spec)),
    };
    if den == 0.0 {
        return Err(bad_angle(spec));
    }
    Ok(coeff / den * std::f64::consts::PI)
}

fn bad_angle(spec: &str) -> Error {
    Error::Format { what: "pulse angle", why: format!("cannot parse {spec:?}") }
}

/// Parse a JSON sequence document. A pulse gives either an explicit
/// `duration_ns` or an `angle` hint, in which case the duration follows from
/// the amplitude (a π pulse lasts 1/(2Ω)).
pub fn parse_sequence(text: &str) -> Result<PulseSequence> {
    let file: SequenceFile = serde_json::from_str(text)?;
    let mut events = Vec::with_capacity(file.events.len());
    for e in file.events {
        events.push(match e {
            EventFile::Pulse { channel, frequency_mhz, duration_ns, angle, phase_rad, amplitude_mhz } => {
                let duration_ns = match (duration_ns, angle) {
                    (Some(d), None) => d,
                    (None, Some(a)) => {
                        if amplitude_mhz <= 0.0 {
                            return Err(Error::Format {
                                what: "sequence",
                                why: "angle hint requires a positive amplitude".into(),
                            });
                        }
                        let theta = parse_angle(&a)?;
                        theta / (std::f64::consts::TAU * amplitude_mhz) * 1e3
                    }
                    (Some(_), Some(_)) => {
                        return Err(Error::Format {
                            what: "sequence",
                            why: "give either duration_ns or angle, not both".into(),
                        })
                    }
                    (None, None) => {
                        return Err(Error::Format {
                            what: "sequence",
                            why: "pulse needs duration_ns or angle".into(),
                        })
                    }
                };
                SequenceEvent::Pulse(PulseEvent {
                    channel,
                    carrier_mhz: frequency_mhz,
                    duration_ns,
                    phase_rad,
                    amplitude_mhz,
                })
            }
            EventFile::Delay { duration_ns } => SequenceEvent::Delay { duration_ns },
            EventFile::Acquire => SequenceEvent::Acquire,
        });
    }
    let values = match file.sweep.grid {
        SweepGridFile::Values { values } => values,
        SweepGridFile::Linspace { start, stop, points } => {
            if points < 2 {
                return Err(Error::Format { what: "sweep", why: "need at least 2 points".into() });
            }
            (0..points)
                .map(|k| start + (stop - start) * k as f64 / (points - 1) as f64)
                .collect()
        }
    };
    PulseSequence::new(
        events,
        Sweep { parameter: file.sweep.parameter, event_indices: file.sweep.events, values },
    )
}

/// Load a sequence from a JSON file.
pub fn load_sequence(path: impl AsRef<std::path::Path>) -> Result<PulseSequence> {
    parse_sequence(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin_core::Spin;
    use nalgebra::{Matrix3, Vector3};

    fn consts() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    fn two_level() -> (SpinSystem, Vector3<f64>, f64) {
        let sys = SpinSystem::electron_only(
            Spin::HALF,
            Matrix3::from_diagonal(&Vector3::new(2.0, 2.0, 2.0)),
            "two-level",
        )
        .unwrap();
        let b = Vector3::new(0.0, 0.0, 341.520174);
        let freq = 2.0 * consts().bohr_magneton_mhz_per_mt() * b.z;
        (sys, b, freq)
    }

    #[test]
    fn rabi_frequency_inversions() {
        let c = consts();
        // Ω for a 52 ns π pulse and for a 1060 ns RF π pulse
        let drive = rabi_frequency(1.0, (500.0 / 52.0) / c.bohr_magneton_mhz_per_mt(), &c).unwrap();
        assert!(drive.drivable);
        assert!((drive.omega_mhz - 500.0 / 52.0).abs() < 1e-9);
        assert!((drive.pi_duration_ns().unwrap() - 52.0).abs() < 1e-9);
        let drive = rabi_frequency(1.0, (500.0 / 1060.0) / c.bohr_magneton_mhz_per_mt(), &c).unwrap();
        assert!((drive.pi_duration_ns().unwrap() - 1060.0).abs() < 1e-6);
        // zero moment: not drivable
        let drive = rabi_frequency(0.0, 5.0, &c).unwrap();
        assert_eq!(drive.omega_mhz, 0.0);
        assert!(!drive.drivable);
        assert!(drive.pi_duration_ns().is_none());
    }

    #[test]
    fn rabi_trace_has_first_zero_at_pi() {
        let (sys, b, freq) = two_level();
        let lengths: Vec<f64> = (1..=30).map(|k| 5.2 * k as f64).collect();
        let seq =
            PulseSequence::rabi_nutation(Channel::Mw, freq, 500.0 / 52.0, lengths.clone()).unwrap();
        let trace = run_sequence(&sys, &b, &seq, None, 0.1, &consts()).unwrap();
        // signal ∝ sin(2πΩt): zero at t = 52 ns, extremes at 26 and 78 ns
        let idx52 = lengths.iter().position(|&l| (l - 52.0).abs() < 1e-9).unwrap();
        assert!(trace.signals[idx52].abs() < 1e-9, "signal at π: {}", trace.signals[idx52]);
        let idx26 = lengths.iter().position(|&l| (l - 26.0).abs() < 1e-9).unwrap();
        assert!(trace.signals[idx26] > 0.0);
        let p0 = boltzmann_populations(&[0.0, freq], 0.1, &consts()).unwrap();
        let dp = p0[0] - p0[1];
        for (k, &l) in lengths.iter().enumerate() {
            let expected = dp * (std::f64::consts::TAU * (500.0 / 52.0) * l * 1e-3).sin();
            assert!((trace.signals[k] - expected).abs() < 1e-9, "at {l} ns");
        }
    }

    #[test]
    fn two_pi_pulses_restore_the_pair() {
        let (sys, b, freq) = two_level();
        let engine = SequenceEngine::new(&sys, &b, None, 0.2, &consts()).unwrap();
        let pulse = PulseEvent {
            channel: Channel::Mw,
            carrier_mhz: freq,
            duration_ns: 52.0,
            phase_rad: 0.7,
            amplitude_mhz: 500.0 / 52.0,
        };
        // start from a state with coherence on the pair
        let half = PulseEvent { duration_ns: 26.0, ..pulse };
        let mut rho = engine.initial_state();
        engine.apply_pulse(&mut rho, &half).unwrap();
        let before = rho.clone();
        engine.apply_pulse(&mut rho, &pulse).unwrap();
        engine.apply_pulse(&mut rho, &pulse).unwrap();
        let diff = (&rho - &before).iter().map(|c| c.norm()).fold(0.0f64, f64::max);
        assert!(diff < 1e-10, "ππ deviates from identity by {diff}");
    }

    #[test]
    fn off_resonant_pulse_is_an_error_naming_the_nearest_transition() {
        let (sys, b, freq) = two_level();
        let seq = PulseSequence::rabi_nutation(Channel::Mw, freq + 100.0, 9.6, vec![52.0]).unwrap();
        let err = run_sequence(&sys, &b, &seq, None, 0.1, &consts()).unwrap_err();
        match err {
            Error::OffResonantPulse { nearest_mhz, lower, upper, .. } => {
                assert!((nearest_mhz - freq).abs() < 1e-6);
                assert_eq!((lower, upper), (0, 1));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn inversion_recovery_closed_form() {
        let (sys, b, freq) = two_level();
        let relax =
            RelaxationSpec { t1e_s: 10.0, t2e_us: 1e9, t2n_us: 1e9, stretch_m: 1.0 };
        let taus_ns: Vec<f64> = (0..=20).map(|k| 2.5e9 * k as f64).collect(); // 0..50 s
        let seq =
            PulseSequence::inversion_recovery(freq, 500.0 / 52.0, 100.0, taus_ns.clone()).unwrap();
        let trace = run_sequence(&sys, &b, &seq, Some(relax), 0.1, &consts()).unwrap();
        // reference: the same π/2—τ_e—π—τ_e readout on the equilibrium state
        // (no inversion pulse), so envelope and sign factors cancel exactly
        let ref_seq = PulseSequence::hahn_echo(freq, 500.0 / 52.0, vec![100.0]).unwrap();
        let ref_trace = run_sequence(&sys, &b, &ref_seq, Some(relax), 0.1, &consts()).unwrap();
        let s_ref = ref_trace.signals[0];
        assert!(s_ref != 0.0);
        for (k, &tau_ns) in taus_ns.iter().enumerate() {
            let expected = 1.0 - 2.0 * (-(tau_ns * 1e-9) / 10.0).exp();
            let got = trace.signals[k] / s_ref;
            assert!((got - expected).abs() < 1e-9, "τ={tau_ns} ns: {got} vs {expected}");
        }
    }

    #[test]
    fn hahn_echo_reproduces_mims_envelope() {
        let (sys, b, freq) = two_level();
        let relax = RelaxationSpec { t1e_s: 1e6, t2e_us: 100.0, t2n_us: 1e9, stretch_m: 1.1 };
        let taus_ns: Vec<f64> = (1..=40).map(|k| 5000.0 * k as f64).collect();
        let seq = PulseSequence::hahn_echo(freq, 500.0 / 52.0, taus_ns.clone()).unwrap();
        let trace = run_sequence(&sys, &b, &seq, Some(relax), 0.1, &consts()).unwrap();
        let p0 = boltzmann_populations(&[0.0, freq], 0.1, &consts()).unwrap();
        let dp = p0[0] - p0[1];
        for (k, &tau_ns) in taus_ns.iter().enumerate() {
            let two_tau_us = 2.0 * tau_ns * 1e-3;
            let expected = dp * (-(two_tau_us / 100.0).powf(1.1)).exp();
            assert!(
                (trace.magnitudes[k] - expected).abs() < 1e-9,
                "2τ = {two_tau_us} µs: {} vs {expected}",
                trace.magnitudes[k]
            );
        }
    }

    #[test]
    fn sequence_validation() {
        let pulse = SequenceEvent::Pulse(PulseEvent {
            channel: Channel::Mw,
            carrier_mhz: 100.0,
            duration_ns: 10.0,
            phase_rad: 0.0,
            amplitude_mhz: 1.0,
        });
        // no acquire
        assert!(PulseSequence::new(
            vec![pulse],
            Sweep {
                parameter: SweepParameter::PulseDuration,
                event_indices: vec![0],
                values: vec![1.0]
            }
        )
        .is_err());
        // sweep target kind mismatch
        assert!(PulseSequence::new(
            vec![pulse, SequenceEvent::Acquire],
            Sweep {
                parameter: SweepParameter::DelayDuration,
                event_indices: vec![0],
                values: vec![1.0]
            }
        )
        .is_err());
        // sweeping the acquire event
        assert!(PulseSequence::new(
            vec![pulse, SequenceEvent::Acquire],
            Sweep {
                parameter: SweepParameter::PulseDuration,
                event_indices: vec![1],
                values: vec![1.0]
            }
        )
        .is_err());
    }

    #[test]
    fn angle_hints() {
        assert!((parse_angle("pi").unwrap() - std::f64::consts::PI).abs() < 1e-15);
        assert!((parse_angle("pi/2").unwrap() - std::f64::consts::PI / 2.0).abs() < 1e-15);
        assert!((parse_angle("3pi/2").unwrap() - 4.712388980).abs() < 1e-8);
        assert!((parse_angle("2pi").unwrap() - std::f64::consts::TAU).abs() < 1e-15);
        assert!(parse_angle("deg90").is_err());
        assert!(parse_angle("pi/0").is_err());
    }

    #[test]
    fn sequence_file_round_trip() {
        let text = r#"{
            "events": [
                {"type": "pulse", "channel": "MW", "frequency_MHz": 9560.0,
                 "angle": "pi/2", "amplitude_MHz": 9.615384615384615},
                {"type": "delay", "duration_ns": 1000.0},
                {"type": "pulse", "channel": "MW", "frequency_MHz": 9560.0,
                 "angle": "pi", "amplitude_MHz": 9.615384615384615},
                {"type": "delay", "duration_ns": 1000.0},
                {"type": "acquire"}
            ],
            "sweep": {"parameter": "delay_duration", "events": [1, 3],
                      "start": 1000.0, "stop": 50000.0, "points": 50}
        }"#;
        let seq = parse_sequence(text).unwrap();
        assert_eq!(seq.events().len(), 5);
        assert_eq!(seq.sweep().values.len(), 50);
        match &seq.events()[0] {
            SequenceEvent::Pulse(p) => assert!((p.duration_ns - 26.0).abs() < 1e-9),
            other => panic!("expected pulse, got {other:?}"),
        }
        match &seq.events()[2] {
            SequenceEvent::Pulse(p) => assert!((p.duration_ns - 52.0).abs() < 1e-9),
            other => panic!("expected pulse, got {other:?}"),
        }
    }
}
