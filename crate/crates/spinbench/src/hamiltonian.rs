//! Spin Hamiltonian construction and diagonalization.
//!
//! The Hamiltonian of one subsite at static field **B** (mT) is, in MHz,
//!
//! ```text
//! H = (µ_B/h) B·g·S  +  I·A·S  +  I·Q·I  -  (µ_N/h) g_n B·I
//! ```
//!
//! built from Kronecker-product spin operators on the (2S+1)(2I+1) product
//! space. The problem sizes here are tiny (16×16 for S=1/2, I=7/2), so a
//! dense direct Hermitian eigensolver is used throughout.

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;

use crate::constants::PhysicalConstants;
use crate::spin_core::{Spin, SpinSystem};
use crate::{Error, Result};

/// Eigenvalue gaps below this (MHz) are treated as degenerate and flagged.
pub const DEGENERACY_TOL_MHZ: f64 = 1e-6;

type CMat = DMatrix<Complex64>;

fn czero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// Angular-momentum matrices (Jx, Jy, Jz) for a single spin j in the
/// |j, m⟩ basis ordered m = j, j-1, ..., -j.
pub fn single_spin_matrices(j: Spin) -> [CMat; 3] {
    let dim = j.multiplicity();
    let jv = j.value();
    let mut jx = CMat::zeros(dim, dim);
    let mut jy = CMat::zeros(dim, dim);
    let mut jz = CMat::zeros(dim, dim);
    for (row, md) in j.doubled_projections().enumerate() {
        let m = f64::from(md) / 2.0;
        jz[(row, row)] = Complex64::new(m, 0.0);
        // raising element ⟨m|J+|m-1⟩ connects column row+1 to row
        if row + 1 < dim {
            let mlow = m - 1.0;
            let amp = (jv * (jv + 1.0) - mlow * (mlow + 1.0)).sqrt();
            jx[(row, row + 1)] += Complex64::new(amp / 2.0, 0.0);
            jx[(row + 1, row)] += Complex64::new(amp / 2.0, 0.0);
            jy[(row, row + 1)] += Complex64::new(0.0, -amp / 2.0);
            jy[(row + 1, row)] += Complex64::new(0.0, amp / 2.0);
        }
    }
    [jx, jy, jz]
}

/// Electron and nuclear spin operators on the product space, as Kronecker
/// products with identities.
#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub sx: CMat,
    pub sy: CMat,
    pub sz: CMat,
    pub ix: CMat,
    pub iy: CMat,
    pub iz: CMat,
    dim: usize,
}

impl SpinOperators {
    pub fn new(electron: Spin, nuclear: Spin) -> Self {
        let [sx1, sy1, sz1] = single_spin_matrices(electron);
        let [ix1, iy1, iz1] = single_spin_matrices(nuclear);
        let es = CMat::identity(electron.multiplicity(), electron.multiplicity());
        let ns = CMat::identity(nuclear.multiplicity(), nuclear.multiplicity());
        let dim = electron.multiplicity() * nuclear.multiplicity();
        SpinOperators {
            sx: sx1.kronecker(&ns),
            sy: sy1.kronecker(&ns),
            sz: sz1.kronecker(&ns),
            ix: es.kronecker(&ix1),
            iy: es.kronecker(&iy1),
            iz: es.kronecker(&iz1),
            dim,
        }
    }

    pub fn for_system(system: &SpinSystem) -> Self {
        SpinOperators::new(system.electron_spin(), system.nuclear_spin())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn electron(&self) -> [&CMat; 3] {
        [&self.sx, &self.sy, &self.sz]
    }

    pub fn nuclear(&self) -> [&CMat; 3] {
        [&self.ix, &self.iy, &self.iz]
    }

    /// Contraction of the electron operators with a vector: v·S.
    pub fn electron_along(&self, v: &Vector3<f64>) -> CMat {
        &self.sx * Complex64::new(v.x, 0.0)
            + &self.sy * Complex64::new(v.y, 0.0)
            + &self.sz * Complex64::new(v.z, 0.0)
    }
}

/// H in MHz for `system` at static field `b_mt` (mT, lab frame).
pub fn build_hamiltonian(
    system: &SpinSystem,
    b_mt: &Vector3<f64>,
    constants: &PhysicalConstants,
) -> CMat {
    let ops = SpinOperators::for_system(system);
    build_hamiltonian_with_ops(system, b_mt, constants, &ops)
}

/// Same as [`build_hamiltonian`] but reusing precomputed operators, for
/// field sweeps.
pub fn build_hamiltonian_with_ops(
    system: &SpinSystem,
    b_mt: &Vector3<f64>,
    constants: &PhysicalConstants,
    ops: &SpinOperators,
) -> CMat {
    let dim = ops.dim();
    let mut h = CMat::zeros(dim, dim);

    // electron Zeeman: µ_B (B·g)·S
    let be = system.g_matrix().transpose() * b_mt * constants.bohr_magneton_mhz_per_mt();
    for (coef, op) in [be.x, be.y, be.z].into_iter().zip(ops.electron()) {
        if coef != 0.0 {
            h += op * Complex64::new(coef, 0.0);
        }
    }

    // hyperfine I·A·S and quadrupole I·Q·I
    let a = system.hyperfine_matrix();
    let q = system.quadrupole_matrix();
    let nuc = ops.nuclear();
    let ele = ops.electron();
    for i in 0..3 {
        for j in 0..3 {
            if a[(i, j)] != 0.0 {
                h += nuc[i] * ele[j] * Complex64::new(a[(i, j)], 0.0);
            }
            if q[(i, j)] != 0.0 {
                h += nuc[i] * nuc[j] * Complex64::new(q[(i, j)], 0.0);
            }
        }
    }

    // nuclear Zeeman: -µ_N g_n B·I
    let cn = -constants.nuclear_magneton_mhz_per_mt() * system.g_n();
    for (coef, op) in [cn * b_mt.x, cn * b_mt.y, cn * b_mt.z].into_iter().zip(nuc) {
        if coef != 0.0 {
            h += op * Complex64::new(coef, 0.0);
        }
    }
    h
}

/// Trace of H evaluated analytically term by term: the Zeeman and hyperfine
/// terms are traceless, so only the quadrupole survives, as
/// tr(Q)·(2S+1)(2I+1)·I(I+1)/3.
pub fn analytic_trace_mhz(system: &SpinSystem) -> f64 {
    let i = system.nuclear_spin().value();
    system.quadrupole_matrix().trace() * system.dimension() as f64 * i * (i + 1.0) / 3.0
}

/// Off-diagonal Frobenius norm used as the Jacobi convergence measure.
fn off_diagonal_norm(a: &CMat) -> f64 {
    let dim = a.nrows();
    let mut s = 0.0;
    for p in 0..dim {
        for q in (p + 1)..dim {
            s += 2.0 * a[(p, q)].norm_sqr();
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi eigendecomposition of a Hermitian matrix.
///
/// The dimensions here are tiny (16 for S=1/2, I=7/2), so the quadratically
/// convergent Jacobi iteration is both fast enough and unconditionally
/// robust, including on sparse inputs such as density matrices with a single
/// coherent pair, where tridiagonalization-based routines can misbehave.
/// Each rotation reduces the complex pair (p, q) to the classic real 2x2
/// problem by factoring out the phase of a_pq.
fn jacobi_hermitian(h: &CMat, want_vectors: bool) -> (Vec<f64>, Option<CMat>) {
    let dim = h.nrows();
    let mut a = h.clone();
    // fold numerical asymmetry away so the iteration sees an exactly
    // Hermitian matrix
    for p in 0..dim {
        a[(p, p)] = Complex64::new(a[(p, p)].re, 0.0);
        for q in (p + 1)..dim {
            let m = (a[(p, q)] + a[(q, p)].conj()) * 0.5;
            a[(p, q)] = m;
            a[(q, p)] = m.conj();
        }
    }
    let mut v = want_vectors.then(|| CMat::identity(dim, dim));
    let scale = a.iter().map(|c| c.norm()).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let tol = 1e-15 * scale * dim as f64;

    for _sweep in 0..60 {
        if off_diagonal_norm(&a) <= tol {
            break;
        }
        for p in 0..dim {
            for q in (p + 1)..dim {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r <= tol / dim as f64 {
                    continue;
                }
                let phase = apq / r; // e^{iφ}
                let tau = (a[(q, q)].re - a[(p, p)].re) / (2.0 * r);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let s_ph = phase * s; // s·e^{iφ}
                let s_ph_c = s_ph.conj();

                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                a[(p, p)] = Complex64::new(app - t * r, 0.0);
                a[(q, q)] = Complex64::new(aqq + t * r, 0.0);
                a[(p, q)] = Complex64::new(0.0, 0.0);
                a[(q, p)] = Complex64::new(0.0, 0.0);
                for k in 0..dim {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    let new_kp = akp * c - akq * s_ph_c;
                    let new_kq = akp * s_ph + akq * c;
                    a[(k, p)] = new_kp;
                    a[(p, k)] = new_kp.conj();
                    a[(k, q)] = new_kq;
                    a[(q, k)] = new_kq.conj();
                }
                if let Some(v) = v.as_mut() {
                    for k in 0..dim {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = vkp * c - vkq * s_ph_c;
                        v[(k, q)] = vkp * s_ph + vkq * c;
                    }
                }
            }
        }
    }
    let vals: Vec<f64> = (0..dim).map(|k| a[(k, k)].re).collect();
    (vals, v)
}

/// Plain sorted Hermitian eigendecomposition: ascending eigenvalues and the
/// matching unitary of column eigenvectors.
pub fn hermitian_eigen(h: &CMat) -> (DVector<f64>, CMat) {
    let dim = h.nrows();
    let (vals, vecs) = jacobi_hermitian(h, true);
    let vecs = vecs.expect("vectors requested");
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
    let energies = DVector::from_iterator(dim, order.iter().map(|&k| vals[k]));
    let mut states = CMat::zeros(dim, dim);
    for (col, &k) in order.iter().enumerate() {
        states.set_column(col, &vecs.column(k));
    }
    (energies, states)
}

/// Ascending eigenvalues only; cheaper than [`hermitian_eigen`] inside field
/// sweeps.
pub fn hermitian_eigenvalues(h: &CMat) -> Vec<f64> {
    let (mut vals, _) = jacobi_hermitian(h, false);
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vals
}

/// Dominant product-basis character of one eigenstate, as doubled quantum
/// numbers (2·M_S, 2·M_I).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StateLabel {
    pub m_s_doubled: i32,
    pub m_i_doubled: i32,
}

impl StateLabel {
    pub fn m_s(&self) -> f64 {
        f64::from(self.m_s_doubled) / 2.0
    }

    pub fn m_i(&self) -> f64 {
        f64::from(self.m_i_doubled) / 2.0
    }
}

/// Ordered eigensystem of one subsite at one field point.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    /// Eigenfrequencies in MHz, ascending.
    pub energies: Vec<f64>,
    /// Unitary matrix of column eigenvectors matching `energies`.
    pub states: CMat,
    /// Per-state dominant (M_S, M_I) assignment; a bijection onto the
    /// product basis.
    pub labels: Vec<StateLabel>,
    /// Indices of states whose eigenvalues are closer than
    /// [`DEGENERACY_TOL_MHZ`], grouped. Labels inside these groups are
    /// ambiguous.
    pub degenerate_groups: Vec<Vec<usize>>,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    /// Transition frequency E_upper - E_lower in MHz (>= 0 for j > i).
    pub fn transition_frequency(&self, i: usize, j: usize) -> f64 {
        self.energies[j] - self.energies[i]
    }

    /// True when any eigenvalue pair is closer than the degeneracy
    /// tolerance, making dominant-character labels arbitrary within the
    /// affected groups.
    pub fn has_ambiguous_labels(&self) -> bool {
        !self.degenerate_groups.is_empty()
    }
}

/// The label basis: product states |M_S, M_I⟩ quantized along the effective
/// electron field direction, with the nucleus quantized along the effective
/// nuclear field of the highest-M_S manifold.
///
/// One common nuclear axis (rather than a per-manifold one) keeps M_I labels
/// comparable across electron manifolds: when the hyperfine field dominates
/// the nuclear Zeeman field, the per-manifold axes are nearly antiparallel
/// and cross-manifold ΔM_I would otherwise lose its meaning.
struct LabelBasis {
    /// One vector per (m_s, m_i) pair, in lockstep with `labels`.
    vectors: Vec<DVector<Complex64>>,
    labels: Vec<StateLabel>,
}

fn single_spin_axis_basis(j: Spin, axis: &Vector3<f64>) -> Vec<DVector<Complex64>> {
    // eigenvectors of n·J ordered by ascending m
    let [jx, jy, jz] = single_spin_matrices(j);
    let njop = jx * Complex64::new(axis.x, 0.0)
        + jy * Complex64::new(axis.y, 0.0)
        + jz * Complex64::new(axis.z, 0.0);
    let (_vals, vecs) = hermitian_eigen(&njop);
    (0..j.multiplicity()).map(|k| vecs.column(k).into_owned()).collect()
}

fn unit_or(v: Vector3<f64>, fallback: Vector3<f64>) -> Vector3<f64> {
    let n = v.norm();
    if n > 1e-12 {
        v / n
    } else {
        fallback
    }
}

impl LabelBasis {
    fn new(system: &SpinSystem, b_mt: &Vector3<f64>, constants: &PhysicalConstants) -> Self {
        let s = system.electron_spin();
        let i = system.nuclear_spin();
        let z = Vector3::z();

        // electron quantization axis: direction of g·B (the field seen by S)
        let ge = system.g_matrix().transpose() * b_mt;
        let n_e = unit_or(ge, z);
        let evecs = single_spin_axis_basis(s, &n_e);

        let mut vectors = Vec::with_capacity(system.dimension());
        let mut labels = Vec::with_capacity(system.dimension());
        // ascending m ordering from single_spin_axis_basis
        let s_proj: Vec<i32> = {
            let mut p: Vec<i32> = s.doubled_projections().collect();
            p.reverse();
            p
        };
        let i_proj: Vec<i32> = {
            let mut p: Vec<i32> = i.doubled_projections().collect();
            p.reverse();
            p
        };

        // nuclear effective field of the reference manifold M_S = +S:
        // S·(Aᵀ n_e) - µ_N g_n B, all in MHz
        let hyp = system.hyperfine_matrix().transpose() * n_e * s.value();
        let zee = b_mt * (constants.nuclear_magneton_mhz_per_mt() * system.g_n());
        let n_n = unit_or(hyp - zee, n_e);
        let nvecs = single_spin_axis_basis(i, &n_n);

        for (es_idx, &msd) in s_proj.iter().enumerate() {
            for (ni_idx, &mid) in i_proj.iter().enumerate() {
                let mut v = DVector::zeros(system.dimension());
                let ev = &evecs[es_idx];
                let nv = &nvecs[ni_idx];
                let ndim = i.multiplicity();
                for (a, &ec) in ev.iter().enumerate() {
                    if ec == czero() {
                        continue;
                    }
                    for (b, &nc) in nv.iter().enumerate() {
                        v[a * ndim + b] = ec * nc;
                    }
                }
                vectors.push(v);
                labels.push(StateLabel { m_s_doubled: msd, m_i_doubled: mid });
            }
        }
        LabelBasis { vectors, labels }
    }
}

/// Diagonalize a Hermitian spin Hamiltonian and assign dominant-character
/// labels using the product basis of `system` at field `b_mt`.
///
/// Labels are assigned bijectively: overlaps |⟨M_S,M_I|ψ_k⟩|² are ranked
/// globally and consumed greedily so that every eigenstate gets a distinct
/// (M_S, M_I). Near-degenerate eigenvalue groups are reported in
/// `degenerate_groups` rather than resolved silently.
pub fn eigensystem(
    h: &CMat,
    system: &SpinSystem,
    b_mt: &Vector3<f64>,
    constants: &PhysicalConstants,
) -> Result<EigenSystem> {
    let dim = system.dimension();
    if h.nrows() != dim || h.ncols() != dim {
        return Err(Error::pre(format!(
            "hamiltonian is {}x{} but the system dimension is {dim}",
            h.nrows(),
            h.ncols()
        )));
    }
    let scale = h.iter().map(|c| c.norm()).fold(0.0f64, f64::max).max(1.0);
    let herm = (h - h.adjoint()).iter().map(|c| c.norm()).fold(0.0f64, f64::max);
    if herm > 1e-10 * scale {
        return Err(Error::pre(format!(
            "hamiltonian is not Hermitian (max deviation {herm:.3e} at scale {scale:.3e})"
        )));
    }

    let (energies, states) = hermitian_eigen(h);

    // degeneracy groups: chains of gaps below tolerance
    let mut degenerate_groups = Vec::new();
    let mut group = vec![0usize];
    for k in 1..dim {
        if energies[k] - energies[k - 1] < DEGENERACY_TOL_MHZ {
            group.push(k);
        } else {
            if group.len() > 1 {
                degenerate_groups.push(group.clone());
            }
            group = vec![k];
        }
    }
    if group.len() > 1 {
        degenerate_groups.push(group);
    }

    // bijective dominant-character assignment
    let basis = LabelBasis::new(system, b_mt, constants);
    let mut overlaps: Vec<(f64, usize, usize)> = Vec::with_capacity(dim * dim);
    for k in 0..dim {
        let col = states.column(k);
        for (p, bv) in basis.vectors.iter().enumerate() {
            let o: Complex64 = bv.iter().zip(col.iter()).map(|(b, c)| b.conj() * c).sum();
            overlaps.push((o.norm_sqr(), k, p));
        }
    }
    overlaps.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut labels = vec![None; dim];
    let mut used_state = vec![false; dim];
    let mut used_basis = vec![false; dim];
    for (_, k, p) in overlaps {
        if !used_state[k] && !used_basis[p] {
            used_state[k] = true;
            used_basis[p] = true;
            labels[k] = Some(basis.labels[p]);
        }
    }
    let labels = labels.into_iter().map(Option::unwrap).collect();

    Ok(EigenSystem {
        energies: energies.iter().copied().collect(),
        states,
        labels,
        degenerate_groups,
    })
}

/// Build and diagonalize in one step.
pub fn diagonalize(
    system: &SpinSystem,
    b_mt: &Vector3<f64>,
    constants: &PhysicalConstants,
) -> Result<EigenSystem> {
    let h = build_hamiltonian(system, b_mt, constants);
    eigensystem(&h, system, b_mt, constants)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin_core::{make_subsite_family, Orientation, RotationPlane};
    use nalgebra::{matrix, Matrix3};

    fn consts() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    fn diag3(a: f64, b: f64, c: f64) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(a, b, c))
    }

    fn er167_like() -> SpinSystem {
        let g = matrix![
            3.070, -3.124, 3.396;
            -3.124, 8.156, -5.756;
            3.396, -5.756, 5.787
        ];
        SpinSystem::new(
            Spin::HALF,
            Spin::from_doubled(7),
            g,
            g * -104.4,
            matrix![
                -20.0, 4.0, 6.0;
                4.0, -14.0, 9.0;
                6.0, 9.0, 34.0
            ],
            -0.1618,
            "er167-like",
        )
        .unwrap()
    }

    fn commutator(a: &CMat, b: &CMat) -> CMat {
        a * b - b * a
    }

    fn max_norm(m: &CMat) -> f64 {
        m.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn angular_momentum_commutation() {
        let ops = SpinOperators::new(Spin::HALF, Spin::from_doubled(7));
        let i = Complex64::new(0.0, 1.0);
        // [Sx,Sy] = i Sz and cyclic
        assert!(max_norm(&(commutator(&ops.sx, &ops.sy) - &ops.sz * i)) < 1e-12);
        assert!(max_norm(&(commutator(&ops.sy, &ops.sz) - &ops.sx * i)) < 1e-12);
        assert!(max_norm(&(commutator(&ops.sz, &ops.sx) - &ops.sy * i)) < 1e-12);
        assert!(max_norm(&(commutator(&ops.ix, &ops.iy) - &ops.iz * i)) < 1e-12);
        assert!(max_norm(&(commutator(&ops.iy, &ops.iz) - &ops.ix * i)) < 1e-12);
        assert!(max_norm(&(commutator(&ops.iz, &ops.ix) - &ops.iy * i)) < 1e-12);
        // electron and nuclear operators commute
        for s in ops.electron() {
            for n in ops.nuclear() {
                assert!(max_norm(&commutator(s, n)) < 1e-12);
            }
        }
    }

    #[test]
    fn casimir_values() {
        let ops = SpinOperators::new(Spin::HALF, Spin::from_doubled(7));
        let s2 = &ops.sx * &ops.sx + &ops.sy * &ops.sy + &ops.sz * &ops.sz;
        let i2 = &ops.ix * &ops.ix + &ops.iy * &ops.iy + &ops.iz * &ops.iz;
        let id = CMat::identity(16, 16);
        assert!(max_norm(&(s2 - &id * Complex64::new(0.75, 0.0))) < 1e-12);
        assert!(max_norm(&(i2 - &id * Complex64::new(3.5 * 4.5, 0.0))) < 1e-12);
    }

    #[test]
    fn zeeman_splitting_isotropic_g2() {
        // I=0, g=2, 350 mT along b: H = diag(±½·9797.3715 MHz)
        let sys =
            SpinSystem::electron_only(Spin::HALF, diag3(2.0, 2.0, 2.0), "iso").unwrap();
        let h = build_hamiltonian(&sys, &Vector3::new(0.0, 0.0, 350.0), &consts());
        assert_eq!(h.nrows(), 2);
        let split = 2.0 * 13.996244936 * 350.0;
        assert!((h[(0, 0)].re - split / 2.0).abs() < 1e-6, "{}", h[(0, 0)]);
        assert!((h[(1, 1)].re + split / 2.0).abs() < 1e-6);
        assert!(h[(0, 1)].norm() < 1e-12);
        let es = eigensystem(&h, &sys, &Vector3::new(0.0, 0.0, 350.0), &consts()).unwrap();
        let gap = es.transition_frequency(0, 1);
        assert!((gap - 9797.3715).abs() < 1e-3, "gap {gap}");
    }

    #[test]
    fn dimension_16_for_i_7_2() {
        let sys = er167_like();
        let h = build_hamiltonian(&sys, &Vector3::new(100.0, 50.0, 300.0), &consts());
        assert_eq!(h.nrows(), 16);
        assert_eq!(h.ncols(), 16);
    }

    #[test]
    fn kramers_degeneracy_at_zero_field_without_hyperfine() {
        // B=0, A=0: H = I·Q·I ⊗ electron identity. Every distinct quadrupole
        // level appears with twice its nuclear multiplicity.
        let base = er167_like();
        let sys = SpinSystem::new(
            base.electron_spin(),
            base.nuclear_spin(),
            *base.g_matrix(),
            Matrix3::zeros(),
            *base.quadrupole_matrix(),
            base.g_n(),
            "quadrupole only",
        )
        .unwrap();
        let es = diagonalize(&sys, &Vector3::zeros(), &consts()).unwrap();

        // independent nuclear-only oracle on the 8-dimensional space
        let nuc_only = SpinSystem::new(
            Spin::ZERO,
            base.nuclear_spin(),
            Matrix3::zeros(),
            Matrix3::zeros(),
            *base.quadrupole_matrix(),
            base.g_n(),
            "nuclear only",
        )
        .unwrap();
        let nuc = diagonalize(&nuc_only, &Vector3::zeros(), &consts()).unwrap();
        let mut doubled: Vec<f64> = nuc.energies.iter().flat_map(|&e| [e, e]).collect();
        doubled.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in es.energies.iter().zip(&doubled) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        // electron degeneracy of every level is exactly 2
        for pair in es.energies.chunks(2) {
            assert!((pair[0] - pair[1]).abs() < 1e-8);
        }
        assert!(es.has_ambiguous_labels());
    }

    #[test]
    fn generic_field_lifts_all_degeneracies() {
        let sys = er167_like();
        let b = Orientation::in_plane(RotationPlane::BD1, 57.0).direction() * 781.0;
        let es = diagonalize(&sys, &b, &consts()).unwrap();
        assert_eq!(es.energies.len(), 16);
        for k in 1..16 {
            assert!(es.energies[k] > es.energies[k - 1] + DEGENERACY_TOL_MHZ);
        }
        assert!(!es.has_ambiguous_labels());
        // labels form a bijection
        let mut seen = std::collections::HashSet::new();
        for l in &es.labels {
            assert!(seen.insert((l.m_s_doubled, l.m_i_doubled)));
        }
    }

    #[test]
    fn eigenvectors_are_unitary_and_satisfy_residual() {
        let sys = er167_like();
        let b = Vector3::new(300.0, -150.0, 640.0);
        let h = build_hamiltonian(&sys, &b, &consts());
        let es = eigensystem(&h, &sys, &b, &consts()).unwrap();
        let u = &es.states;
        let gram = u.adjoint() * u - CMat::identity(16, 16);
        assert!(max_norm(&gram) < 1e-10, "unitarity {}", max_norm(&gram));

        let spread = es.energies[15] - es.energies[0];
        for k in 0..16 {
            let v = u.column(k).into_owned();
            let resid = &h * &v - &v * Complex64::new(es.energies[k], 0.0);
            let rn = resid.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
            assert!(rn < 1e-8 * spread, "residual {rn} at k={k}");
        }
    }

    #[test]
    fn diagonal_hamiltonian_eigensystem_is_sorted_diagonal() {
        // diagonal A and g along b with B on the b axis keeps H diagonal in
        // the product basis
        let sys = SpinSystem::new(
            Spin::HALF,
            Spin::HALF,
            diag3(2.0, 2.0, 2.0),
            diag3(0.0, 0.0, 140.0),
            Matrix3::zeros(),
            1.0,
            "diag",
        )
        .unwrap();
        let b = Vector3::new(0.0, 0.0, 350.0);
        let h = build_hamiltonian(&sys, &b, &consts());
        for r in 0..4 {
            for c in 0..4 {
                if r != c {
                    assert!(h[(r, c)].norm() < 1e-12);
                }
            }
        }
        let es = eigensystem(&h, &sys, &b, &consts()).unwrap();
        let mut diag: Vec<f64> = (0..4).map(|k| h[(k, k)].re).collect();
        diag.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in es.energies.iter().zip(&diag) {
            assert!((a - b).abs() < 1e-10);
        }
        // states are permutation of identity columns
        for k in 0..4 {
            let col = es.states.column(k);
            let mut big = 0;
            for r in 0..4 {
                if col[r].norm() > 0.5 {
                    big += 1;
                    assert!((col[r].norm() - 1.0).abs() < 1e-10);
                }
            }
            assert_eq!(big, 1);
        }
    }

    #[test]
    fn field_reversal_symmetry() {
        let sys = er167_like();
        let b = Vector3::new(123.0, 456.0, 389.0);
        let ep = diagonalize(&sys, &b, &consts()).unwrap();
        let em = diagonalize(&sys, &(-b), &consts()).unwrap();
        for (a, b) in ep.energies.iter().zip(&em.energies) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn splittings_scale_linearly_without_hyperfine() {
        let sys = SpinSystem::electron_only(
            Spin::HALF,
            matrix![
                2.0, 0.3, 0.0;
                0.3, 4.0, -0.7;
                0.0, -0.7, 8.0
            ],
            "aniso",
        )
        .unwrap();
        let b = Vector3::new(100.0, 70.0, 240.0);
        let e1 = diagonalize(&sys, &b, &consts()).unwrap();
        let e2 = diagonalize(&sys, &(b * 2.0), &consts()).unwrap();
        let s1 = e1.transition_frequency(0, 1);
        let s2 = e2.transition_frequency(0, 1);
        assert!((s2 / s1 - 2.0).abs() < 1e-10);
    }

    #[test]
    fn trace_matches_analytic_value() {
        let sys = er167_like();
        let b = Vector3::new(50.0, 431.0, 220.0);
        let h = build_hamiltonian(&sys, &b, &consts());
        let tr: Complex64 = (0..16).map(|k| h[(k, k)]).sum();
        let scale = h.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
        assert!(tr.im.abs() < 1e-10 * scale);
        assert!((tr.re - analytic_trace_mhz(&sys)).abs() < 1e-8 * scale.max(1.0));
    }

    #[test]
    fn subsite_partner_spectrum_matches_along_b_and_in_d1d2() {
        let fam = make_subsite_family(&er167_like()).unwrap();
        for orient in [
            Orientation::in_plane(RotationPlane::BD1, 0.0),
            Orientation::in_plane(RotationPlane::D1D2, 25.0),
            Orientation::in_plane(RotationPlane::D1D2, 140.0),
        ] {
            let b = orient.direction() * 781.0;
            let e1 = diagonalize(&fam.base, &b, &consts()).unwrap();
            let e2 = diagonalize(&fam.partner, &b, &consts()).unwrap();
            for (a, c) in e1.energies.iter().zip(&e2.energies) {
                assert!((a - c).abs() < 1e-7, "{a} vs {c} at {orient:?}");
            }
        }
    }

    #[test]
    fn rejects_non_hermitian_input() {
        let sys = SpinSystem::electron_only(Spin::HALF, diag3(2.0, 2.0, 2.0), "x").unwrap();
        let mut h = build_hamiltonian(&sys, &Vector3::new(0.0, 0.0, 100.0), &consts());
        h[(0, 1)] = Complex64::new(5.0, 0.0);
        h[(1, 0)] = Complex64::new(-5.0, 0.0);
        assert!(eigensystem(&h, &sys, &Vector3::new(0.0, 0.0, 100.0), &consts()).is_err());
    }
}
