//! Domain types for one paramagnetic center: spin quantum numbers,
//! interaction matrices, the orthogonal (D1, D2, b) lab frame, and the C2
//! symmetry operation that generates magnetically inequivalent subsites.
//!
//! The lab frame is the optical-extinction frame: x = D1, y = D2, z = b.
//! All interaction matrices are expressed in this frame. Everything here is
//! immutable after construction, so values can be shared freely across
//! threads.

use std::fmt;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Relative tolerance for the symmetry/tracelessness checks on interaction
/// matrices.
pub const MATRIX_SYMMETRY_TOL: f64 = 1e-9;

/// Half-integer spin quantum number, stored as twice its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Spin(u16);

impl Spin {
    pub const ZERO: Spin = Spin(0);
    pub const HALF: Spin = Spin(1);

    /// Construct from twice the spin (e.g. 7 for I = 7/2).
    pub fn from_doubled(doubled: u16) -> Self {
        Spin(doubled)
    }

    /// Construct from a floating-point value that must be a non-negative
    /// multiple of 1/2.
    pub fn try_from_f64(value: f64) -> Result<Self> {
        let doubled = value * 2.0;
        if !(0.0..=u16::MAX as f64).contains(&doubled) || doubled.fract() != 0.0 {
            return Err(Error::invalid(
                "spin quantum number",
                format!("{value} is not a non-negative half-integer"),
            ));
        }
        Ok(Spin(doubled as u16))
    }

    pub fn doubled(self) -> u16 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 2.0
    }

    /// Number of projection states 2j+1.
    pub fn multiplicity(self) -> usize {
        usize::from(self.0) + 1
    }

    /// Projections m = j, j-1, ..., -j as doubled integers.
    pub fn doubled_projections(self) -> impl Iterator<Item = i32> {
        let top = i32::from(self.0);
        (0..=top).map(move |k| top - 2 * k)
    }
}

impl fmt::Display for Spin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_multiple_of(2) {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

/// One dopant subsite: spins, interaction matrices and site metadata.
///
/// `g_matrix` is dimensionless, `hyperfine_matrix` and `quadrupole_matrix`
/// are in MHz, `g_n` is the dimensionless nuclear g factor. The hyperfine and
/// quadrupole matrices must be symmetric; the quadrupole matrix must also be
/// traceless.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinSystem {
    electron_spin: Spin,
    nuclear_spin: Spin,
    g_matrix: Matrix3<f64>,
    hyperfine_matrix: Matrix3<f64>,
    quadrupole_matrix: Matrix3<f64>,
    g_n: f64,
    site_label: String,
}

fn frobenius(m: &Matrix3<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_symmetric(m: &Matrix3<f64>, what: &'static str) -> Result<()> {
    let scale = 1.0 + frobenius(m);
    let asym = (m - m.transpose()).amax();
    if asym > MATRIX_SYMMETRY_TOL * scale {
        return Err(Error::invalid(
            what,
            format!("matrix is not symmetric (max asymmetry {asym:.3e})"),
        ));
    }
    Ok(())
}

impl SpinSystem {
    /// Validate and build a spin system.
    pub fn new(
        electron_spin: Spin,
        nuclear_spin: Spin,
        g_matrix: Matrix3<f64>,
        hyperfine_matrix: Matrix3<f64>,
        quadrupole_matrix: Matrix3<f64>,
        g_n: f64,
        site_label: impl Into<String>,
    ) -> Result<Self> {
        check_symmetric(&hyperfine_matrix, "hyperfine matrix")?;
        check_symmetric(&quadrupole_matrix, "quadrupole matrix")?;
        let qtrace = quadrupole_matrix.trace().abs();
        if qtrace > MATRIX_SYMMETRY_TOL * (1.0 + frobenius(&quadrupole_matrix)) {
            return Err(Error::invalid(
                "quadrupole matrix",
                format!("matrix is not traceless (trace {qtrace:.3e} MHz)"),
            ));
        }
        Ok(SpinSystem {
            electron_spin,
            nuclear_spin,
            g_matrix,
            hyperfine_matrix,
            quadrupole_matrix,
            g_n,
            site_label: site_label.into(),
        })
    }

    /// Electron-only system (I = 0) with no hyperfine or quadrupole coupling.
    pub fn electron_only(
        electron_spin: Spin,
        g_matrix: Matrix3<f64>,
        site_label: impl Into<String>,
    ) -> Result<Self> {
        SpinSystem::new(
            electron_spin,
            Spin::ZERO,
            g_matrix,
            Matrix3::zeros(),
            Matrix3::zeros(),
            0.0,
            site_label,
        )
    }

    pub fn electron_spin(&self) -> Spin {
        self.electron_spin
    }

    pub fn nuclear_spin(&self) -> Spin {
        self.nuclear_spin
    }

    pub fn g_matrix(&self) -> &Matrix3<f64> {
        &self.g_matrix
    }

    pub fn hyperfine_matrix(&self) -> &Matrix3<f64> {
        &self.hyperfine_matrix
    }

    pub fn quadrupole_matrix(&self) -> &Matrix3<f64> {
        &self.quadrupole_matrix
    }

    pub fn g_n(&self) -> f64 {
        self.g_n
    }

    pub fn site_label(&self) -> &str {
        &self.site_label
    }

    /// Hilbert-space dimension (2S+1)(2I+1).
    pub fn dimension(&self) -> usize {
        self.electron_spin.multiplicity() * self.nuclear_spin.multiplicity()
    }

    /// Same parameters under a different label.
    pub fn relabeled(&self, site_label: impl Into<String>) -> Self {
        let mut s = self.clone();
        s.site_label = site_label.into();
        s
    }
}

/// Named rotation planes of the (D1, D2, b) frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RotationPlane {
    /// Plane spanned by b and D1; angle measured from b towards D1.
    #[serde(rename = "bD1")]
    BD1,
    /// Plane spanned by D1 and D2; angle measured from D1 towards D2.
    #[serde(rename = "D1D2")]
    D1D2,
    /// Plane spanned by b and D2; angle measured from b towards D2.
    #[serde(rename = "bD2")]
    BD2,
}

impl RotationPlane {
    /// Unit vector at `angle_deg` within the plane.
    pub fn direction(self, angle_deg: f64) -> Vector3<f64> {
        let (s, c) = angle_deg.to_radians().sin_cos();
        match self {
            RotationPlane::BD1 => Vector3::new(s, 0.0, c),
            RotationPlane::D1D2 => Vector3::new(c, s, 0.0),
            RotationPlane::BD2 => Vector3::new(0.0, s, c),
        }
    }

    /// In-plane normal to the direction at `angle_deg` (the direction at
    /// `angle_deg + 90°`). This is the default microwave polarization for
    /// in-plane field sweeps.
    pub fn in_plane_normal(self, angle_deg: f64) -> Vector3<f64> {
        self.direction(angle_deg + 90.0)
    }
}

impl fmt::Display for RotationPlane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RotationPlane::BD1 => write!(f, "bD1"),
            RotationPlane::D1D2 => write!(f, "D1D2"),
            RotationPlane::BD2 => write!(f, "bD2"),
        }
    }
}

/// Static-field orientation in the lab frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Orientation {
    /// Explicit unit vector.
    Direction(Vector3<f64>),
    /// Angle within a named rotation plane.
    InPlane { plane: RotationPlane, angle_deg: f64 },
}

impl Orientation {
    /// Build from a not-necessarily-normalized vector.
    pub fn from_vector(v: Vector3<f64>) -> Result<Self> {
        let n = v.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::invalid("orientation", "direction must be a nonzero finite vector"));
        }
        Ok(Orientation::Direction(v / n))
    }

    pub fn in_plane(plane: RotationPlane, angle_deg: f64) -> Self {
        Orientation::InPlane { plane, angle_deg }
    }

    /// Unit direction vector. Unit norm holds to 1e-12 by construction.
    pub fn direction(&self) -> Vector3<f64> {
        match *self {
            Orientation::Direction(v) => v,
            Orientation::InPlane { plane, angle_deg } => plane.direction(angle_deg),
        }
    }

    /// Default microwave polarization direction: perpendicular to the field,
    /// within the rotation plane when one is named, otherwise within the
    /// plane spanned by the field and the b axis (D1 when the field is along
    /// b itself).
    pub fn default_mw_polarization(&self) -> Vector3<f64> {
        match *self {
            Orientation::InPlane { plane, angle_deg } => plane.in_plane_normal(angle_deg),
            Orientation::Direction(n) => {
                let b = Vector3::z();
                let mut e = b - n * n.dot(&b);
                if e.norm() < 1e-9 {
                    let d1 = Vector3::x();
                    e = d1 - n * n.dot(&d1);
                }
                e / e.norm()
            }
        }
    }
}

/// Static field vector in mT for an orientation and magnitude.
pub fn field_vector(orientation: &Orientation, magnitude_mt: f64) -> Result<Vector3<f64>> {
    if magnitude_mt < 0.0 || !magnitude_mt.is_finite() {
        return Err(Error::pre(format!(
            "field magnitude must be finite and >= 0, got {magnitude_mt} mT"
        )));
    }
    Ok(orientation.direction() * magnitude_mt)
}

/// 180° rotation about the crystal b axis (z in the lab frame).
pub fn c2_rotation_about_b() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0))
}

/// Conjugate an interaction matrix by the C2 rotation: R·M·Rᵀ.
pub fn c2_conjugate(m: &Matrix3<f64>) -> Matrix3<f64> {
    let r = c2_rotation_about_b();
    r * m * r.transpose()
}

/// A base subsite and its C2 partner.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsiteFamily {
    pub base: SpinSystem,
    pub partner: SpinSystem,
}

impl SubsiteFamily {
    pub fn systems(&self) -> [&SpinSystem; 2] {
        [&self.base, &self.partner]
    }
}

/// Derive the magnetically inequivalent partner of `base` by conjugating all
/// interaction matrices with the 180° rotation about b.
pub fn make_subsite_family(base: &SpinSystem) -> Result<SubsiteFamily> {
    let partner = SpinSystem::new(
        base.electron_spin,
        base.nuclear_spin,
        c2_conjugate(&base.g_matrix),
        c2_conjugate(&base.hyperfine_matrix),
        c2_conjugate(&base.quadrupole_matrix),
        base.g_n,
        format!("{} (C2 partner)", base.site_label),
    )?;
    Ok(SubsiteFamily { base: base.clone(), partner })
}

/// On-disk schema for a spin-system parameter file.
///
/// Matrices are row-major 9-element arrays. The optional free-text fields
/// record where the numbers come from and which sign conventions they use;
/// they are carried through verbatim.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpinSystemFile {
    pub electron_spin: f64,
    pub nuclear_spin: f64,
    pub g: [f64; 9],
    #[serde(rename = "A_MHz")]
    pub a_mhz: [f64; 9],
    #[serde(rename = "Q_MHz")]
    pub q_mhz: [f64; 9],
    pub g_n: f64,
    pub site_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convention: Option<String>,
}

impl SpinSystemFile {
    pub fn to_system(&self) -> Result<SpinSystem> {
        SpinSystem::new(
            Spin::try_from_f64(self.electron_spin)?,
            Spin::try_from_f64(self.nuclear_spin)?,
            Matrix3::from_row_slice(&self.g),
            Matrix3::from_row_slice(&self.a_mhz),
            Matrix3::from_row_slice(&self.q_mhz),
            self.g_n,
            self.site_label.clone(),
        )
    }

    pub fn from_system(system: &SpinSystem) -> Self {
        let flat = |m: &Matrix3<f64>| {
            let mut out = [0.0; 9];
            for r in 0..3 {
                for c in 0..3 {
                    out[3 * r + c] = m[(r, c)];
                }
            }
            out
        };
        SpinSystemFile {
            electron_spin: system.electron_spin.value(),
            nuclear_spin: system.nuclear_spin.value(),
            g: flat(&system.g_matrix),
            a_mhz: flat(&system.hyperfine_matrix),
            q_mhz: flat(&system.quadrupole_matrix),
            g_n: system.g_n,
            site_label: system.site_label.clone(),
            provenance: None,
            convention: None,
        }
    }
}

/// Load a spin system from a JSON parameter file.
pub fn load_spin_system(path: impl AsRef<Path>) -> Result<SpinSystem> {
    let text = std::fs::read_to_string(path)?;
    let file: SpinSystemFile = serde_json::from_str(&text)?;
    file.to_system()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::matrix;

    fn diag(a: f64, b: f64, c: f64) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(a, b, c))
    }

    #[test]
    fn spin_arithmetic() {
        let s = Spin::try_from_f64(3.5).unwrap();
        assert_eq!(s.doubled(), 7);
        assert_eq!(s.multiplicity(), 8);
        assert_eq!(s.to_string(), "7/2");
        assert_eq!(
            s.doubled_projections().collect::<Vec<_>>(),
            vec![7, 5, 3, 1, -1, -3, -5, -7]
        );
        assert_eq!(Spin::try_from_f64(0.0).unwrap(), Spin::ZERO);
        assert!(Spin::try_from_f64(0.3).is_err());
        assert!(Spin::try_from_f64(-0.5).is_err());
    }

    #[test]
    fn hilbert_dimension_16_for_er167() {
        let sys = SpinSystem::new(
            Spin::HALF,
            Spin::from_doubled(7),
            diag(2.0, 2.0, 2.0),
            diag(100.0, 100.0, 100.0),
            Matrix3::zeros(),
            -0.1618,
            "test",
        )
        .unwrap();
        assert_eq!(sys.dimension(), 16);
    }

    #[test]
    fn asymmetric_hyperfine_rejected() {
        let mut a = diag(10.0, 20.0, 30.0);
        a[(0, 1)] = 5.0; // no matching (1,0) entry
        let r = SpinSystem::new(
            Spin::HALF,
            Spin::HALF,
            diag(2.0, 2.0, 2.0),
            a,
            Matrix3::zeros(),
            0.0,
            "bad",
        );
        assert!(r.is_err());
    }

    #[test]
    fn traceful_quadrupole_rejected() {
        let r = SpinSystem::new(
            Spin::HALF,
            Spin::from_doubled(7),
            diag(2.0, 2.0, 2.0),
            Matrix3::zeros(),
            diag(1.0, 1.0, 1.0),
            0.0,
            "bad",
        );
        assert!(r.is_err());
    }

    #[test]
    fn c2_partner_isotropic_g_unchanged() {
        let base = SpinSystem::electron_only(Spin::HALF, diag(2.0, 2.0, 2.0), "iso").unwrap();
        let fam = make_subsite_family(&base).unwrap();
        assert_eq!(fam.partner.g_matrix(), base.g_matrix());
    }

    #[test]
    fn c2_partner_diagonal_g_unchanged() {
        let base = SpinSystem::electron_only(Spin::HALF, diag(2.0, 4.0, 8.0), "diag").unwrap();
        let fam = make_subsite_family(&base).unwrap();
        assert_eq!(fam.partner.g_matrix(), base.g_matrix());
    }

    #[test]
    fn c2_partner_flips_d1b_entry() {
        // Conjugation with R = diag(-1,-1,1) flips exactly the xz/yz blocks.
        let g = matrix![
            2.0, 0.0, 0.5;
            0.0, 2.0, 0.0;
            0.5, 0.0, 2.0
        ];
        let base = SpinSystem::electron_only(Spin::HALF, g, "offdiag").unwrap();
        let fam = make_subsite_family(&base).unwrap();
        let pg = fam.partner.g_matrix();
        assert_eq!(pg[(0, 2)], -0.5);
        assert_eq!(pg[(2, 0)], -0.5);
        assert_eq!(pg[(0, 0)], 2.0);
        assert_eq!(pg[(2, 2)], 2.0);
    }

    #[test]
    fn c2_is_an_involution() {
        let m = matrix![
            1.0, 2.0, 3.0;
            2.0, 5.0, -1.0;
            3.0, -1.0, 0.5
        ];
        let back = c2_conjugate(&c2_conjugate(&m));
        assert!((back - m).amax() < 1e-12);
    }

    #[test]
    fn field_vector_along_b() {
        let v = field_vector(&Orientation::in_plane(RotationPlane::BD1, 0.0), 781.0).unwrap();
        assert!((v - Vector3::new(0.0, 0.0, 781.0)).norm() < 1e-9);
    }

    #[test]
    fn field_vector_57_deg_in_bd1() {
        let v = field_vector(&Orientation::in_plane(RotationPlane::BD1, 57.0), 781.0).unwrap();
        let th = 57f64.to_radians();
        assert!((v.x - 781.0 * th.sin()).abs() < 1e-9);
        assert!(v.y.abs() < 1e-12);
        assert!((v.z - 781.0 * th.cos()).abs() < 1e-9);
    }

    #[test]
    fn field_vector_zero_magnitude() {
        let v = field_vector(&Orientation::in_plane(RotationPlane::D1D2, 33.0), 0.0).unwrap();
        assert_eq!(v, Vector3::zeros());
        assert!(field_vector(&Orientation::in_plane(RotationPlane::D1D2, 0.0), -1.0).is_err());
    }

    #[test]
    fn orientation_directions_are_unit() {
        for plane in [RotationPlane::BD1, RotationPlane::D1D2, RotationPlane::BD2] {
            for k in 0..36 {
                let o = Orientation::in_plane(plane, 5.0 * k as f64);
                assert!((o.direction().norm() - 1.0).abs() < 1e-12);
                // the default polarization is perpendicular to the field
                assert!(o.direction().dot(&o.default_mw_polarization()).abs() < 1e-12);
            }
        }
        let o = Orientation::from_vector(Vector3::new(1.0, 2.0, -2.0)).unwrap();
        assert!((o.direction().norm() - 1.0).abs() < 1e-12);
        assert!(o.direction().dot(&o.default_mw_polarization()).abs() < 1e-12);
        // field along b falls back to D1 for the polarization
        let ob = Orientation::from_vector(Vector3::z()).unwrap();
        assert!((ob.default_mw_polarization() - Vector3::x()).norm() < 1e-12);
    }

    #[test]
    fn parameter_file_round_trip() {
        let g = matrix![
            3.07, -3.124, 3.396;
            -3.124, 8.156, -5.756;
            3.396, -5.756, 5.787
        ];
        let sys = SpinSystem::new(
            Spin::HALF,
            Spin::from_doubled(7),
            g,
            g * -104.4,
            diag(-30.0, -10.0, 40.0),
            -0.1618,
            "site I subsite 1",
        )
        .unwrap();
        let file = SpinSystemFile::from_system(&sys);
        let json = serde_json::to_string(&file).unwrap();
        let parsed: SpinSystemFile = serde_json::from_str(&json).unwrap();
        let back = parsed.to_system().unwrap();
        assert_eq!(back, sys);
    }
}
