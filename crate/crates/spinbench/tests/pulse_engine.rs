//! Integration checks of the pulse engine against an independent
//! brute-force propagation oracle, plus density-matrix invariants on the
//! experiment sequences.
//!
//! The oracle rebuilds every pulse unitary by exponentiating the two-level
//! generator through an eigendecomposition (no closed-form rotation), picks
//! the resonant pair with its own search, and conjugates the density matrix
//! step by step.

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;
use spinbench::constants::PhysicalConstants;
use spinbench::hamiltonian::{diagonalize, hermitian_eigen, EigenSystem};
use spinbench::pulsesim::{
    davies_endor, run_sequence, Channel, DaviesParams, OffResonancePolicy, PulseEvent,
    PulseSequence, RelaxationSpec, SequenceEngine, SequenceEvent,
};
use spinbench::spin_core::{load_spin_system, Spin, SpinSystem};

type CMat = DMatrix<Complex64>;

fn consts() -> PhysicalConstants {
    PhysicalConstants::default()
}

fn demo_system() -> SpinSystem {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/demo_er167_diag.json");
    load_spin_system(path).expect("demo parameter file")
}

fn demo_field() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, 341.520174)
}

/// Find the eigenstate index with the given doubled (M_S, M_I) labels.
fn state(es: &EigenSystem, msd: i32, mid: i32) -> usize {
    es.labels
        .iter()
        .position(|l| l.m_s_doubled == msd && l.m_i_doubled == mid)
        .expect("label present")
}

// ---------------------------------------------------------------------------
// the oracle
// ---------------------------------------------------------------------------

/// Matrix exponential U = exp(-i·2π·t·H) by scaling-and-squaring of the
/// Taylor series; shares no code with the engine's closed-form rotation.
fn expm_unitary(h: &CMat, t_us: f64) -> CMat {
    let dim = h.nrows();
    let a = h * Complex64::new(0.0, -std::f64::consts::TAU * t_us);
    let norm = a.iter().map(|c| c.norm()).fold(0.0f64, f64::max) * dim as f64;
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let a = a / Complex64::new(2f64.powi(squarings), 0.0);
    let mut term = CMat::identity(dim, dim);
    let mut sum = CMat::identity(dim, dim);
    for k in 1..=24 {
        term = &term * &a / Complex64::new(k as f64, 0.0);
        sum += &term;
    }
    let mut u = sum;
    for _ in 0..squarings {
        u = &u * &u;
    }
    u
}

struct Oracle {
    eigen: EigenSystem,
    rho: CMat,
    last_pair: Option<(usize, usize)>,
}

impl Oracle {
    fn new(system: &SpinSystem, b: &Vector3<f64>, temperature_k: f64) -> Oracle {
        let eigen = diagonalize(system, b, &consts()).unwrap();
        let pops =
            spinbench::dynamics::boltzmann_populations(&eigen.energies, temperature_k, &consts())
                .unwrap();
        let dim = eigen.dim();
        let mut rho = CMat::zeros(dim, dim);
        for k in 0..dim {
            rho[(k, k)] = Complex64::new(pops[k], 0.0);
        }
        Oracle { eigen, rho, last_pair: None }
    }

    /// Nearest-pair search, written independently of the engine.
    fn find_pair(&self, carrier: f64) -> (usize, usize, f64) {
        let dim = self.eigen.dim();
        let mut best = (0, 1, f64::INFINITY);
        for a in 0..dim {
            for b in (a + 1)..dim {
                let f = self.eigen.energies[b] - self.eigen.energies[a];
                if (f - carrier).abs() < (best.2 - carrier).abs() {
                    best = (a, b, f);
                }
            }
        }
        best
    }

    fn pulse(&mut self, p: &PulseEvent) {
        let (a, b, f) = self.find_pair(p.carrier_mhz);
        let detuning = p.carrier_mhz - f;
        if detuning.abs() > p.amplitude_mhz {
            return; // identity policy
        }
        let dim = self.eigen.dim();
        let mut gen = CMat::zeros(dim, dim);
        gen[(a, a)] = Complex64::new(-detuning / 2.0, 0.0);
        gen[(b, b)] = Complex64::new(detuning / 2.0, 0.0);
        let half = Complex64::new(0.0, p.phase_rad).exp() * (p.amplitude_mhz / 2.0);
        gen[(a, b)] = half;
        gen[(b, a)] = half.conj();
        let u = expm_unitary(&gen, p.duration_ns * 1e-3);
        self.rho = &u * &self.rho * u.adjoint();
        self.last_pair = Some((a, b));
    }

    fn acquire(&self) -> f64 {
        let (a, b) = self.last_pair.expect("pulse before acquire");
        2.0 * self.rho[(a, b)].im
    }

    /// Relaxation-free propagation of one event list.
    fn run(&mut self, events: &[SequenceEvent]) -> f64 {
        let mut out = f64::NAN;
        for ev in events {
            match ev {
                SequenceEvent::Pulse(p) => self.pulse(p),
                SequenceEvent::Delay { .. } => {}
                SequenceEvent::Acquire => out = self.acquire(),
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// oracle comparisons
// ---------------------------------------------------------------------------

#[test]
fn engine_matches_expm_oracle_on_random_pulse_trains() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1009);
    let system = demo_system();
    let b = demo_field();
    let engine = SequenceEngine::new(&system, &b, None, 0.15, &consts()).unwrap();
    let eigen = engine.eigensystem().clone();
    let dim = eigen.dim();

    for trial in 0..25 {
        let n_pulses = rng.gen_range(1..=6);
        let mut events = Vec::new();
        for _ in 0..n_pulses {
            let a = rng.gen_range(0..dim - 1);
            let bidx = rng.gen_range(a + 1..dim);
            let f = eigen.transition_frequency(a, bidx);
            let amplitude = rng.gen_range(0.5..20.0);
            events.push(SequenceEvent::Pulse(PulseEvent {
                channel: Channel::Mw,
                carrier_mhz: f + rng.gen_range(-0.3..0.3) * amplitude,
                duration_ns: rng.gen_range(5.0..500.0),
                phase_rad: rng.gen_range(0.0..std::f64::consts::TAU),
                amplitude_mhz: amplitude,
            }));
        }
        events.push(SequenceEvent::Acquire);

        let (signal, _, _) = engine.run_events(&events).unwrap();
        let mut oracle = Oracle::new(&system, &b, 0.15);
        let expected = oracle.run(&events);
        assert!(
            (signal - expected).abs() < 1e-9,
            "trial {trial}: engine {signal} vs oracle {expected}"
        );
    }
}

#[test]
fn davies_endor_against_oracle_and_baseline() {
    let system = demo_system();
    let b = demo_field();
    let params = DaviesParams {
        tau_ns: 1500.0,
        mw_amplitude_mhz: 500.0 / 52.0,
        rf_amplitude_mhz: 500.0 / 1060.0,
    };
    let eigen = diagonalize(&system, &b, &consts()).unwrap();
    let a = state(&eigen, -1, -7);
    let bu = state(&eigen, 1, -7);
    let c = state(&eigen, 1, -5);
    let mw_pair = (a.min(bu), a.max(bu));
    let nmr_mhz = eigen.transition_frequency(bu.min(c), bu.max(c));

    // RF grid: far-off points plus the exact resonance
    let rf_grid = vec![nmr_mhz - 40.0, nmr_mhz - 20.0, nmr_mhz, nmr_mhz + 20.0, nmr_mhz + 40.0];
    let trace =
        davies_endor(&system, &b, mw_pair, rf_grid.clone(), None, 0.15, &params, &consts())
            .unwrap();

    // oracle propagation of the identical event lists
    let mw_carrier = eigen.transition_frequency(mw_pair.0, mw_pair.1);
    let seq = PulseSequence::davies_endor(
        mw_carrier,
        params.mw_amplitude_mhz,
        params.rf_amplitude_mhz,
        params.tau_ns,
        rf_grid.clone(),
    )
    .unwrap();
    for (k, &rf) in rf_grid.iter().enumerate() {
        let mut oracle = Oracle::new(&system, &b, 0.15);
        let expected = oracle.run(&seq.events_at(rf));
        assert!(
            (trace.signals[k] - expected).abs() < 1e-9,
            "rf {rf}: engine {} vs oracle {expected}",
            trace.signals[k]
        );
    }

    // far-off-resonance baseline equals the inverted echo with no RF pulse
    let mut inverted = Vec::new();
    for ev in seq.events_at(nmr_mhz) {
        match ev {
            SequenceEvent::Pulse(p) if p.channel == Channel::Rf => {}
            other => inverted.push(other),
        }
    }
    let engine = SequenceEngine::new(&system, &b, None, 0.15, &consts())
        .unwrap()
        .with_off_resonance_policy(OffResonancePolicy::Identity);
    let (baseline, _, _) = engine.run_events(&inverted).unwrap();
    for k in [0usize, 1, 3, 4] {
        assert!(
            (trace.signals[k] - baseline).abs() < 1e-12,
            "off-resonant point {k} deviates from the inverted-echo baseline"
        );
    }

    // the on-resonance π pulse produces the maximal echo change
    let deviation: Vec<f64> = trace.signals.iter().map(|s| (s - baseline).abs()).collect();
    let max_k = (0..rf_grid.len())
        .max_by(|&x, &y| deviation[x].partial_cmp(&deviation[y]).unwrap())
        .unwrap();
    assert_eq!(max_k, 2, "echo change maximal at the NMR resonance");
    assert!(deviation[2] > 0.5 * baseline.abs(), "resonant echo change is substantial");
}

// ---------------------------------------------------------------------------
// density-matrix invariants with relaxation enabled
// ---------------------------------------------------------------------------

fn check_physical(rho: &CMat, context: &str) {
    let dim = rho.nrows();
    let herm = (rho - rho.adjoint()).iter().map(|c| c.norm()).fold(0.0f64, f64::max);
    assert!(herm < 1e-10, "{context}: hermiticity {herm}");
    let tr: Complex64 = (0..dim).map(|k| rho[(k, k)]).sum();
    assert!((tr.re - 1.0).abs() < 1e-10 && tr.im.abs() < 1e-12, "{context}: trace {tr}");
    let (vals, _) = hermitian_eigen(rho);
    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(min > -1e-10, "{context}: negative eigenvalue {min}");
}

#[test]
fn experiment_sequences_keep_the_state_physical_under_relaxation() {
    let system = demo_system();
    let b = demo_field();
    let eigen = diagonalize(&system, &b, &consts()).unwrap();
    let a = state(&eigen, -1, -7);
    let bu = state(&eigen, 1, -7);
    let c = state(&eigen, 1, -5);
    let d = state(&eigen, -1, -5);
    let f_ab = eigen.transition_frequency(a.min(bu), a.max(bu));
    let f_bc = eigen.transition_frequency(bu.min(c), bu.max(c));
    let f_cd = eigen.transition_frequency(c.min(d), c.max(d));
    let relax = RelaxationSpec { t1e_s: 1.0, t2e_us: 100.0, t2n_us: 800.0, stretch_m: 1.1 };
    let engine = SequenceEngine::new(&system, &b, Some(relax), 0.12, &consts()).unwrap();
    let amp = 500.0 / 52.0;

    let sequences: Vec<(&str, PulseSequence)> = vec![
        (
            "rabi",
            PulseSequence::rabi_nutation(Channel::Mw, f_ab, amp, vec![26.0, 52.0, 130.0])
                .unwrap(),
        ),
        ("hahn", PulseSequence::hahn_echo(f_ab, amp, vec![10_000.0, 50_000.0]).unwrap()),
        (
            "inversion recovery",
            PulseSequence::inversion_recovery(f_ab, amp, 800.0, vec![1e6, 1e8]).unwrap(),
        ),
        (
            "davies",
            PulseSequence::davies_endor(f_ab, amp, 500.0 / 1060.0, 1500.0, vec![f_bc]).unwrap(),
        ),
        (
            "nuclear storage",
            PulseSequence::nuclear_storage(
                f_ab,
                f_cd,
                f_bc,
                amp,
                500.0 / 1060.0,
                2000.0,
                vec![50_000.0, 200_000.0],
            )
            .unwrap(),
        ),
    ];
    for (name, seq) in &sequences {
        for &v in &seq.sweep().values {
            let events = seq.events_at(v);
            let mut step = 0;
            engine
                .run_events_observed(&events, |rho| {
                    step += 1;
                    check_physical(rho, &format!("{name} @ {v}, event {step}"));
                })
                .unwrap();
        }
    }
}

#[test]
fn nuclear_storage_decays_with_t2n_not_t2e() {
    let system = demo_system();
    let b = demo_field();
    let eigen = diagonalize(&system, &b, &consts()).unwrap();
    let a = state(&eigen, -1, -7);
    let bu = state(&eigen, 1, -7);
    let c = state(&eigen, 1, -5);
    let d = state(&eigen, -1, -5);
    let f_ab = eigen.transition_frequency(a.min(bu), a.max(bu));
    let f_bc = eigen.transition_frequency(bu.min(c), bu.max(c));
    let f_cd = eigen.transition_frequency(c.min(d), c.max(d));

    let t2e = 60.0;
    let t2n = 50_000.0;
    let m = 1.1;
    let relax = RelaxationSpec { t1e_s: 1e9, t2e_us: t2e, t2n_us: t2n, stretch_m: m };
    // storage delays far beyond t2e: survival proves the coherence is parked
    // on the nuclear clock
    let storage_ns: Vec<f64> = (1..=12).map(|k| 2.5e6 * k as f64).collect();
    let seq = PulseSequence::nuclear_storage(
        f_ab,
        f_cd,
        f_bc,
        500.0 / 52.0,
        500.0 / 1060.0,
        2000.0,
        storage_ns.clone(),
    )
    .unwrap();
    let trace = run_sequence(&system, &b, &seq, Some(relax), 0.12, &consts()).unwrap();
    let ref_mag = trace.magnitudes[0];
    let ref_tau_us = storage_ns[0] * 1e-3;
    assert!(ref_mag > 0.0);
    for (k, &s_ns) in storage_ns.iter().enumerate() {
        let tau_us = s_ns * 1e-3;
        let expected = (-(tau_us / t2n).powf(m) + (ref_tau_us / t2n).powf(m)).exp();
        let got = trace.magnitudes[k] / ref_mag;
        assert!(
            (got - expected).abs() < 1e-6,
            "storage {tau_us} µs: {got} vs {expected}"
        );
        // nothing electron-like: at 30 ms the electron envelope would be
        // ~exp[-(500)^1.1] ≈ 0
        assert!(trace.magnitudes[k] > 0.1 * ref_mag);
    }
}

#[test]
fn purity_is_conserved_without_relaxation_and_lost_with_it() {
    let system = SpinSystem::electron_only(
        Spin::HALF,
        nalgebra::Matrix3::from_diagonal(&Vector3::new(2.0, 2.0, 2.0)),
        "iso",
    )
    .unwrap();
    let b = Vector3::new(0.0, 0.0, 341.520174);
    let freq = 2.0 * consts().bohr_magneton_mhz_per_mt() * b.z;
    let events = vec![
        SequenceEvent::Pulse(PulseEvent {
            channel: Channel::Mw,
            carrier_mhz: freq,
            duration_ns: 26.0,
            phase_rad: 0.3,
            amplitude_mhz: 500.0 / 52.0,
        }),
        SequenceEvent::Delay { duration_ns: 50_000.0 },
        SequenceEvent::Acquire,
    ];
    let purity = |rho: &CMat| (rho * rho).diagonal().iter().map(|c| c.re).sum::<f64>();

    let engine = SequenceEngine::new(&system, &b, None, 0.1, &consts()).unwrap();
    let p0 = purity(&engine.initial_state());
    let mut purities = Vec::new();
    engine.run_events_observed(&events, |rho| purities.push(purity(rho))).unwrap();
    for p in &purities {
        assert!((p - p0).abs() < 1e-12, "purity changed without relaxation");
    }

    let relax = RelaxationSpec { t1e_s: 1.0, t2e_us: 40.0, t2n_us: 40.0, stretch_m: 1.0 };
    let engine = SequenceEngine::new(&system, &b, Some(relax), 0.1, &consts()).unwrap();
    let mut purities = Vec::new();
    engine.run_events_observed(&events, |rho| purities.push(purity(rho))).unwrap();
    assert!(purities[1] < purities[0] - 1e-6, "the delay must degrade purity");
}
