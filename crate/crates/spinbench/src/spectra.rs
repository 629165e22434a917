//! EPR transition moments, allowed/forbidden classification, resonance-field
//! searches at fixed microwave frequency, and angular rotation patterns.
//!
//! The transition moment between eigenstates α and β for microwave
//! polarization ê⊥ is γ = |⟨α| (S·g)·ê⊥ |β⟩| in units of µ_B. Resonance
//! fields are found by scanning every eigenstate pair's transition frequency
//! on a field grid and refining each bracketed crossing of the microwave
//! frequency by bisection; transition frequencies are non-monotonic in B for
//! mixed hyperfine systems, so no analytic inversion is attempted.

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::hamiltonian::{
    build_hamiltonian_with_ops, eigensystem, hermitian_eigenvalues, EigenSystem, SpinOperators,
};
use crate::spin_core::{Orientation, RotationPlane, SpinSystem};
use crate::{Error, Result};

/// Default field-grid step for resonance searches (mT).
pub const DEFAULT_GRID_STEP_MT: f64 = 0.5;

/// Default dipole-moment floor below which lines are dropped (µ_B).
pub const DEFAULT_MOMENT_FLOOR: f64 = 1e-4;

/// Bisection target on |transition frequency - microwave frequency| (MHz).
pub const RESONANCE_FREQ_TOL_MHZ: f64 = 1e-3;

/// Selection-rule class of a transition by dominant labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransitionKind {
    /// |ΔM_S| = 1, ΔM_I = 0.
    Allowed,
    /// |ΔM_S| = 1, |ΔM_I| = 1.
    Forbidden,
    /// |ΔM_S| = 1, |ΔM_I| > 1.
    Other,
}

impl std::fmt::Display for TransitionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransitionKind::Allowed => write!(f, "allowed"),
            TransitionKind::Forbidden => write!(f, "forbidden"),
            TransitionKind::Other => write!(f, "other"),
        }
    }
}

/// One eigenstate pair with its frequency, moment and classification.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub lower_index: usize,
    pub upper_index: usize,
    /// E_upper - E_lower in MHz.
    pub frequency_mhz: f64,
    /// |⟨α|(S·g)·ê⊥|β⟩| in units of µ_B.
    pub dipole_moment: f64,
    pub kind: TransitionKind,
    /// M_I(upper) - M_I(lower) from dominant labels (an integer).
    pub delta_mi: i32,
}

fn check_e_perp(e_perp: &Vector3<f64>, b_dir: &Vector3<f64>) -> Result<()> {
    if (e_perp.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::pre(format!(
            "microwave polarization must be a unit vector (norm {})",
            e_perp.norm()
        )));
    }
    let bn = b_dir.norm();
    if bn > 0.0 && e_perp.dot(b_dir).abs() / bn > 1e-9 {
        return Err(Error::pre(format!(
            "microwave polarization must be perpendicular to the static field \
             (dot product {})",
            e_perp.dot(b_dir) / bn
        )));
    }
    Ok(())
}

/// The operator (S·g)·ê⊥ rotated into the eigenbasis; moments are the
/// magnitudes of its off-diagonal elements.
fn moment_matrix(
    es: &EigenSystem,
    system: &SpinSystem,
    e_perp: &Vector3<f64>,
) -> DMatrix<Complex64> {
    let ops = SpinOperators::for_system(system);
    let op = ops.electron_along(&(system.g_matrix() * e_perp));
    es.states.adjoint() * op * &es.states
}

/// Transition dipole moment |⟨α_i|(S·g)·ê⊥|α_j⟩| in µ_B units.
///
/// `b_dir` is the static-field direction; `e_perp` must be a unit vector
/// perpendicular to it (tolerance 1e-9 on the dot product).
pub fn transition_dipole(
    es: &EigenSystem,
    i: usize,
    j: usize,
    system: &SpinSystem,
    e_perp: &Vector3<f64>,
    b_dir: &Vector3<f64>,
) -> Result<f64> {
    if i == j {
        return Err(Error::pre("transition requires two distinct states"));
    }
    check_e_perp(e_perp, b_dir)?;
    let m = moment_matrix(es, system, e_perp);
    Ok(m[(i, j)].norm())
}

/// All |ΔM_S| = 1 transitions (by dominant labels) with moment at or above
/// `moment_floor`, classified by ΔM_I. Sorted by frequency.
pub fn enumerate_transitions(
    es: &EigenSystem,
    system: &SpinSystem,
    e_perp: &Vector3<f64>,
    b_dir: &Vector3<f64>,
    moment_floor: f64,
) -> Result<Vec<Transition>> {
    if moment_floor < 0.0 {
        return Err(Error::pre("moment floor must be >= 0"));
    }
    check_e_perp(e_perp, b_dir)?;
    let m = moment_matrix(es, system, e_perp);
    let dim = es.dim();
    let mut out = Vec::new();
    for i in 0..dim {
        for j in (i + 1)..dim {
            let (li, lj) = (es.labels[i], es.labels[j]);
            if (lj.m_s_doubled - li.m_s_doubled).abs() != 2 {
                continue;
            }
            let moment = m[(i, j)].norm();
            if moment < moment_floor {
                continue;
            }
            let delta_mi = (lj.m_i_doubled - li.m_i_doubled) / 2;
            let kind = match delta_mi.abs() {
                0 => TransitionKind::Allowed,
                1 => TransitionKind::Forbidden,
                _ => TransitionKind::Other,
            };
            out.push(Transition {
                lower_index: i,
                upper_index: j,
                frequency_mhz: es.transition_frequency(i, j),
                dipole_moment: moment,
                kind,
                delta_mi,
            });
        }
    }
    out.sort_by(|a, b| a.frequency_mhz.partial_cmp(&b.frequency_mhz).unwrap());
    Ok(out)
}

/// Knobs for the resonance-field search.
#[derive(Debug, Clone, Copy)]
pub struct ResonanceOptions {
    pub grid_step_mt: f64,
    pub moment_floor: f64,
    /// Microwave polarization; defaults to the in-plane normal of the
    /// orientation when `None`.
    pub e_perp: Option<Vector3<f64>>,
}

impl Default for ResonanceOptions {
    fn default() -> Self {
        ResonanceOptions {
            grid_step_mt: DEFAULT_GRID_STEP_MT,
            moment_floor: DEFAULT_MOMENT_FLOOR,
            e_perp: None,
        }
    }
}

/// One stick: a resonance field with the transition it belongs to.
#[derive(Debug, Clone)]
pub struct StickEntry {
    pub field_mt: f64,
    pub transition: Transition,
    pub subsite: String,
    /// Orientation angle for in-plane sweeps, when known.
    pub angle_deg: Option<f64>,
}

/// Resonance fields of one or more subsites at fixed microwave frequency.
#[derive(Debug, Clone, Default)]
pub struct StickSpectrum {
    /// Entries sorted by resonance field.
    pub entries: Vec<StickEntry>,
    pub warnings: Vec<String>,
}

impl StickSpectrum {
    pub fn merge(parts: impl IntoIterator<Item = StickSpectrum>) -> StickSpectrum {
        let mut entries = Vec::new();
        let mut warnings = Vec::new();
        for p in parts {
            entries.extend(p.entries);
            warnings.extend(p.warnings);
        }
        entries.sort_by(|a, b| a.field_mt.partial_cmp(&b.field_mt).unwrap());
        StickSpectrum { entries, warnings }
    }
}

fn sorted_energies(
    system: &SpinSystem,
    ops: &SpinOperators,
    b: &Vector3<f64>,
    constants: &PhysicalConstants,
) -> Vec<f64> {
    let h = build_hamiltonian_with_ops(system, b, constants, ops);
    hermitian_eigenvalues(&h)
}

/// Field-swept stick spectrum of a single subsite.
///
/// Every eigenstate pair's transition frequency is scanned on a uniform grid
/// over `field_range_mt`; each bracketed crossing of `mw_frequency_ghz` is
/// refined by bisection until the frequency mismatch is below
/// [`RESONANCE_FREQ_TOL_MHZ`]. Warnings are recorded when two roots of the
/// same pair are closer than one grid step, since further crossings may then
/// be hidden between grid nodes.
pub fn resonance_fields(
    system: &SpinSystem,
    orientation: &Orientation,
    mw_frequency_ghz: f64,
    field_range_mt: (f64, f64),
    options: &ResonanceOptions,
    constants: &PhysicalConstants,
) -> Result<StickSpectrum> {
    let (b_lo, b_hi) = field_range_mt;
    if !(b_lo >= 0.0 && b_hi > b_lo) {
        return Err(Error::pre(format!(
            "field range must be ordered and non-negative, got ({b_lo}, {b_hi}) mT"
        )));
    }
    if options.grid_step_mt <= 0.0 {
        return Err(Error::pre("grid step must be > 0"));
    }
    if mw_frequency_ghz <= 0.0 {
        return Err(Error::pre("microwave frequency must be > 0"));
    }
    let dir = orientation.direction();
    let e_perp = options.e_perp.unwrap_or_else(|| orientation.default_mw_polarization());
    check_e_perp(&e_perp, &dir)?;

    let angle_deg = match orientation {
        Orientation::InPlane { angle_deg, .. } => Some(*angle_deg),
        Orientation::Direction(_) => None,
    };

    let mw_mhz = mw_frequency_ghz * 1e3;
    let ops = SpinOperators::for_system(system);
    let dim = system.dimension();

    // frequency-mismatch tables on the grid
    let n_steps = ((b_hi - b_lo) / options.grid_step_mt).ceil() as usize;
    let grid: Vec<f64> = (0..=n_steps)
        .map(|k| (b_lo + k as f64 * options.grid_step_mt).min(b_hi))
        .collect();
    let energy_table: Vec<Vec<f64>> = grid
        .iter()
        .map(|&b| sorted_energies(system, &ops, &(dir * b), constants))
        .collect();

    let mismatch = |energies: &[f64], i: usize, j: usize| energies[j] - energies[i] - mw_mhz;

    let mut roots: Vec<(f64, usize, usize)> = Vec::new();
    let mut warnings = Vec::new();
    for i in 0..dim {
        for j in (i + 1)..dim {
            let mut pair_roots: Vec<f64> = Vec::new();
            for k in 1..grid.len() {
                let f_lo = mismatch(&energy_table[k - 1], i, j);
                let f_hi = mismatch(&energy_table[k], i, j);
                if f_lo == 0.0 && k == 1 {
                    pair_roots.push(grid[0]);
                    continue;
                }
                if f_lo * f_hi > 0.0 {
                    continue;
                }
                // bisection; sorted eigenvalues are continuous in B, so this
                // always terminates at the tolerance
                let (mut lo, mut hi) = (grid[k - 1], grid[k]);
                let (mut flo, _fhi) = (f_lo, f_hi);
                let mut root = None;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    let em = sorted_energies(system, &ops, &(dir * mid), constants);
                    let fm = mismatch(&em, i, j);
                    if fm.abs() < RESONANCE_FREQ_TOL_MHZ {
                        root = Some(mid);
                        break;
                    }
                    if flo * fm <= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                        flo = fm;
                    }
                }
                match root {
                    Some(r) => {
                        // a root sitting on a grid node brackets in both
                        // neighboring intervals: keep one copy
                        let dup = pair_roots
                            .last()
                            .is_some_and(|&p| r - p < 1e-2 * options.grid_step_mt);
                        if !dup {
                            pair_roots.push(r);
                        }
                    }
                    None => warnings.push(format!(
                        "bisection for pair ({i},{j}) stalled in [{lo}, {hi}] mT; \
                         line skipped"
                    )),
                }
            }
            for w in pair_roots.windows(2) {
                if w[1] - w[0] < options.grid_step_mt {
                    warnings.push(format!(
                        "pair ({i},{j}) has roots {:.4} and {:.4} mT closer than the \
                         grid step; crossings may have been missed",
                        w[0], w[1]
                    ));
                }
            }
            roots.extend(pair_roots.into_iter().map(|r| (r, i, j)));
        }
    }

    // evaluate moment and classification at each root field
    let mut entries = Vec::new();
    for (field, i, j) in roots {
        let b = dir * field;
        let h = build_hamiltonian_with_ops(system, &b, constants, &ops);
        let es = eigensystem(&h, system, &b, constants)?;
        let m = moment_matrix(&es, system, &e_perp);
        let moment = m[(i, j)].norm();
        if moment < options.moment_floor {
            continue;
        }
        let (li, lj) = (es.labels[i], es.labels[j]);
        let delta_mi = (lj.m_i_doubled - li.m_i_doubled) / 2;
        let kind = if (lj.m_s_doubled - li.m_s_doubled).abs() == 2 {
            match delta_mi.abs() {
                0 => TransitionKind::Allowed,
                1 => TransitionKind::Forbidden,
                _ => TransitionKind::Other,
            }
        } else {
            TransitionKind::Other
        };
        entries.push(StickEntry {
            field_mt: field,
            transition: Transition {
                lower_index: i,
                upper_index: j,
                frequency_mhz: es.transition_frequency(i, j),
                dipole_moment: moment,
                kind,
                delta_mi,
            },
            subsite: system.site_label().to_string(),
            angle_deg,
        });
    }
    entries.sort_by(|a, b| a.field_mt.partial_cmp(&b.field_mt).unwrap());
    Ok(StickSpectrum { entries, warnings })
}

/// Angular variation of the stick spectrum within a rotation plane.
#[derive(Debug, Clone)]
pub struct RotationPattern {
    pub plane: RotationPlane,
    /// Strictly increasing angle grid in degrees.
    pub angles_deg: Vec<f64>,
    /// One merged spectrum (all subsites) per angle.
    pub spectra: Vec<StickSpectrum>,
}

impl RotationPattern {
    pub fn entries(&self) -> impl Iterator<Item = &StickEntry> {
        self.spectra.iter().flat_map(|s| s.entries.iter())
    }
}

/// Compute per-angle resonance fields for every subsite in `systems`.
///
/// Angle points are independent and evaluated in parallel; the result is
/// assembled in grid order so output is deterministic.
pub fn rotation_pattern(
    systems: &[SpinSystem],
    plane: RotationPlane,
    angles_deg: &[f64],
    mw_frequency_ghz: f64,
    field_range_mt: (f64, f64),
    options: &ResonanceOptions,
    constants: &PhysicalConstants,
) -> Result<RotationPattern> {
    if systems.is_empty() {
        return Err(Error::pre("at least one spin system is required"));
    }
    if angles_deg.is_empty() {
        return Err(Error::pre("angle grid is empty"));
    }
    for w in angles_deg.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::pre(format!(
                "angle grid must be strictly increasing, got {} after {}",
                w[1], w[0]
            )));
        }
    }
    if angles_deg[0] < 0.0 || *angles_deg.last().unwrap() >= 180.0 {
        return Err(Error::pre("angles must lie within [0, 180) degrees"));
    }

    let spectra: Result<Vec<StickSpectrum>> = angles_deg
        .par_iter()
        .map(|&angle| {
            let orientation = Orientation::in_plane(plane, angle);
            let parts: Result<Vec<StickSpectrum>> = systems
                .iter()
                .map(|sys| {
                    resonance_fields(
                        sys,
                        &orientation,
                        mw_frequency_ghz,
                        field_range_mt,
                        options,
                        constants,
                    )
                })
                .collect();
            let mut merged = StickSpectrum::merge(parts?);
            merged.warnings = merged
                .warnings
                .into_iter()
                .map(|w| format!("angle {angle} deg: {w}"))
                .collect();
            Ok(merged)
        })
        .collect();

    Ok(RotationPattern { plane, angles_deg: angles_deg.to_vec(), spectra: spectra? })
}

/// Apparent g value of a resonance line: hν/(µ_B·B).
pub fn apparent_g(mw_frequency_ghz: f64, field_mt: f64, constants: &PhysicalConstants) -> f64 {
    mw_frequency_ghz * 1e3 / (constants.bohr_magneton_mhz_per_mt() * field_mt)
}
