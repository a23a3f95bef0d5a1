//! Spin-1 algebra and open-system propagation of a single NV centre.
//!
//! Basis order is |+1>, |0>, |-1> (indices 0, 1, 2). Time is in µs, fields in
//! µT, angular frequencies in rad/µs.

use nalgebra::{Matrix3, SMatrix, SymmetricEigen, Vector3};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{RapidError, Result};

pub type C64 = Complex64;
pub type ComplexMat3 = Matrix3<C64>;
type Super = SMatrix<C64, 9, 9>;

/// Electron gyromagnetic ratio, rad/(µs·µT): 28 GHz/T = 0.028 MHz/µT.
pub const GAMMA_E: f64 = 2.0 * std::f64::consts::PI * 0.028;

pub const IDX_PLUS: usize = 0;
pub const IDX_ZERO: usize = 1;
pub const IDX_MINUS: usize = 2;

const ZERO: C64 = C64::new(0.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

pub fn dagger(m: &ComplexMat3) -> ComplexMat3 {
    m.adjoint()
}

/// Hermitian part (M + M†)/2.
pub fn symmetrize(m: &ComplexMat3) -> ComplexMat3 {
    (m + m.adjoint()).scale(0.5)
}

pub fn hermiticity_error(m: &ComplexMat3) -> f64 {
    (m - m.adjoint()).norm()
}

pub fn trace(m: &ComplexMat3) -> C64 {
    m[(0, 0)] + m[(1, 1)] + m[(2, 2)]
}

pub fn commutator(a: &ComplexMat3, b: &ComplexMat3) -> ComplexMat3 {
    a * b - b * a
}

/// Eigen-decomposition of a Hermitian matrix; eigenvalues ascending.
pub fn hermitian_eigen(m: &ComplexMat3) -> (Vector3<f64>, ComplexMat3) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = Vector3::from_fn(|i, _| eig.eigenvalues[order[i]]);
    let vecs = ComplexMat3::from_fn(|r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

pub fn basis_ket(idx: usize) -> Vector3<C64> {
    let mut v = Vector3::zeros();
    v[idx] = C64::new(1.0, 0.0);
    v
}

pub fn projector(idx: usize) -> ComplexMat3 {
    let mut m = ComplexMat3::zeros();
    m[(idx, idx)] = C64::new(1.0, 0.0);
    m
}

#[derive(Clone, Debug)]
pub struct SpinOperators {
    pub sx: ComplexMat3,
    pub sy: ComplexMat3,
    pub sz: ComplexMat3,
}

pub fn spin1_operators() -> SpinOperators {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let a = C64::new(r, 0.0);
    let b = C64::new(0.0, r);
    SpinOperators {
        sx: ComplexMat3::new(ZERO, a, ZERO, a, ZERO, a, ZERO, a, ZERO),
        sy: ComplexMat3::new(ZERO, -b, ZERO, b, ZERO, -b, ZERO, b, ZERO),
        sz: ComplexMat3::from_diagonal(&Vector3::new(C64::new(1.0, 0.0), ZERO, C64::new(-1.0, 0.0))),
    }
}

/// Trace-one Hermitian positive state of one spin.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    pub mat: ComplexMat3,
}

impl DensityMatrix {
    pub fn from_matrix(mat: ComplexMat3) -> Self {
        Self { mat }
    }

    pub fn pure(psi: &Vector3<C64>) -> Self {
        let n = psi.norm();
        let v = psi.unscale(n);
        Self { mat: &v * v.adjoint() }
    }

    pub fn basis(idx: usize) -> Self {
        Self { mat: projector(idx) }
    }

    pub fn maximally_mixed() -> Self {
        Self { mat: ComplexMat3::identity().unscale(3.0) }
    }

    /// Equal superposition of |0> and |-1> with relative phase `phase`.
    pub fn sensing_superposition(phase: f64) -> Self {
        let mut psi = Vector3::zeros();
        psi[IDX_ZERO] = C64::new(1.0, 0.0);
        psi[IDX_MINUS] = C64::from_polar(1.0, phase);
        Self::pure(&psi)
    }

    pub fn trace(&self) -> C64 {
        trace(&self.mat)
    }

    pub fn hermiticity_error(&self) -> f64 {
        hermiticity_error(&self.mat)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigen(&self.mat).0[0]
    }

    pub fn population(&self, idx: usize) -> f64 {
        self.mat[(idx, idx)].re
    }

    pub fn is_physical(&self, tol_trace: f64, tol_herm: f64, tol_eig: f64) -> bool {
        (self.trace() - C64::new(1.0, 0.0)).norm() < tol_trace
            && self.hermiticity_error() < tol_herm
            && self.min_eigenvalue() > -tol_eig
    }

    fn check(self) -> Result<Self> {
        let min_eig = self.min_eigenvalue();
        if min_eig < -1e-6 || !min_eig.is_finite() {
            return Err(RapidError::NonPhysicalState { min_eig });
        }
        Ok(self)
    }

    /// Random mixed state from a Ginibre draw; used by property tests.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let g = ComplexMat3::from_fn(|_, _| {
            C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
        });
        let m = &g * g.adjoint();
        let t = trace(&m);
        Self { mat: m.unscale(t.re) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecoherenceRates {
    /// Γ₁ = 1/T₁, 1/µs
    pub gamma1: f64,
    /// Γ_φ = 1/T₂, 1/µs
    pub gamma_phi: f64,
}

impl DecoherenceRates {
    pub fn from_times(t1: f64, t2: f64) -> Self {
        let inv = |t: f64| if t.is_finite() && t > 0.0 { 1.0 / t } else { 0.0 };
        Self { gamma1: inv(t1), gamma_phi: inv(t2) }
    }

    pub fn none() -> Self {
        Self { gamma1: 0.0, gamma_phi: 0.0 }
    }

    /// Decay rate of the coherence between levels `i` and `j` (diagonal generator).
    pub fn coherence_decay(&self, i: usize, j: usize) -> f64 {
        let s: [f64; 3] = [1.0, 0.0, -1.0];
        let k = [0.5 * self.gamma1, self.gamma1, 0.5 * self.gamma1];
        self.gamma_phi * (s[i] - s[j]).powi(2) + 0.5 * (k[i] + k[j])
    }

    fn jump_operators(&self) -> Vec<ComplexMat3> {
        let mut ops = Vec::new();
        if self.gamma_phi > 0.0 {
            ops.push(spin1_operators().sz.scale((2.0 * self.gamma_phi).sqrt()));
        }
        if self.gamma1 > 0.0 {
            let a = (0.5 * self.gamma1).sqrt();
            for (to, from) in [(IDX_ZERO, IDX_PLUS), (IDX_ZERO, IDX_MINUS), (IDX_PLUS, IDX_ZERO), (IDX_MINUS, IDX_ZERO)] {
                let mut m = ComplexMat3::zeros();
                m[(to, from)] = C64::new(a, 0.0);
                ops.push(m);
            }
        }
        ops
    }
}

/// One sensing interval's continuous control.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSegment {
    /// Drive amplitudes (Ω_x, Ω_y), rad/µs.
    pub u: [f64; 2],
    /// Duration, µs.
    pub duration: f64,
    /// Instants of ideal π pulses within [0, duration], µs.
    pub pi_pulse_times: Vec<f64>,
}

impl ControlSegment {
    pub fn free(duration: f64) -> Self {
        Self { u: [0.0, 0.0], duration, pi_pulse_times: Vec::new() }
    }

    /// CPMG timing: n pulses at (k - 1/2)·T/n.
    pub fn cpmg(duration: f64, n_pulses: usize, u: [f64; 2]) -> Self {
        let times = (0..n_pulses).map(|k| (k as f64 + 0.5) * duration / n_pulses as f64).collect();
        Self { u, duration, pi_pulse_times: times }
    }

    pub fn is_valid(&self, u_max: f64) -> bool {
        self.duration > 0.0
            && self.u.iter().all(|x| x.abs() <= u_max)
            && self.pi_pulse_times.windows(2).all(|w| w[0] < w[1])
            && self.pi_pulse_times.iter().all(|&t| (0.0..=self.duration).contains(&t))
    }
}

/// Rotating-frame Hamiltonian: detuning·S_z² + γ_e·b_z·S_z + Ω_x S_x + Ω_y S_y.
pub fn build_hamiltonian(b_z: f64, u: [f64; 2], detuning: f64) -> ComplexMat3 {
    let s = spin1_operators();
    let sz2 = s.sz * s.sz;
    sz2.scale(detuning) + s.sz.scale(GAMMA_E * b_z) + s.sx.scale(u[0]) + s.sy.scale(u[1])
}

fn is_diagonal(h: &ComplexMat3) -> bool {
    (0..3).all(|r| (0..3).all(|c| r == c || h[(r, c)] == ZERO))
}

fn dissipator(rates: &DecoherenceRates) -> Super {
    let id = ComplexMat3::identity();
    let mut l = Super::zeros();
    for op in rates.jump_operators() {
        let ld = op.adjoint() * op;
        l += op.conjugate().kronecker(&op) - id.kronecker(&ld).scale(0.5) - ld.transpose().kronecker(&id).scale(0.5);
    }
    l
}

thread_local! {
    static DISSIPATOR: std::cell::RefCell<Option<(DecoherenceRates, Super)>> = const { std::cell::RefCell::new(None) };
}

fn liouvillian(h: &ComplexMat3, rates: &DecoherenceRates) -> Super {
    // Column-stacking: vec(A ρ B) = (Bᵀ ⊗ A) vec(ρ).
    let id = ComplexMat3::identity();
    let coherent = (id.kronecker(h) - h.transpose().kronecker(&id)).scale(-1.0) * I;
    DISSIPATOR.with(|cell| {
        let mut slot = cell.borrow_mut();
        match &*slot {
            Some((r, d)) if r == rates => coherent + d,
            _ => {
                let d = dissipator(rates);
                *slot = Some((*rates, d));
                coherent + d
            }
        }
    })
}

fn vec_of(m: &ComplexMat3) -> SMatrix<C64, 9, 1> {
    SMatrix::<C64, 9, 1>::from_fn(|k, _| m[(k % 3, k / 3)])
}

fn unvec(v: &SMatrix<C64, 9, 1>) -> ComplexMat3 {
    ComplexMat3::from_fn(|r, c| v[c * 3 + r])
}

/// Exact propagator for a diagonal Hamiltonian: coherences rotate and decay
/// independently and populations follow the symmetric relaxation rate equations.
fn propagate_diagonal(rho: &ComplexMat3, h_diag: [f64; 3], rates: &DecoherenceRates, t: f64) -> ComplexMat3 {
    let mut out = *rho;
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                let d = rates.coherence_decay(i, j);
                out[(i, j)] = rho[(i, j)] * C64::from_polar((-d * t).exp(), -(h_diag[i] - h_diag[j]) * t);
            }
        }
    }
    let g = rates.gamma1;
    let (pp, p0, pm) = (rho[(0, 0)].re, rho[(1, 1)].re, rho[(2, 2)].re);
    let x = (pp - pm) * (-0.5 * g * t).exp();
    let tot = pp + p0 + pm;
    let z = tot / 3.0 + (p0 - tot / 3.0) * (-1.5 * g * t).exp();
    out[(0, 0)] = C64::new(0.5 * (tot - z + x), 0.0);
    out[(1, 1)] = C64::new(z, 0.0);
    out[(2, 2)] = C64::new(0.5 * (tot - z - x), 0.0);
    out
}

/// One-substep propagation map, chosen exactly for the generator at hand.
enum StepMap {
    Diagonal([f64; 3]),
    Dense(Super),
}

impl StepMap {
    fn new(h: &ComplexMat3, rates: &DecoherenceRates, dt: f64) -> Self {
        if is_diagonal(h) {
            StepMap::Diagonal([h[(0, 0)].re, h[(1, 1)].re, h[(2, 2)].re])
        } else {
            StepMap::Dense((liouvillian(h, rates) * C64::new(dt, 0.0)).exp())
        }
    }

    fn apply(&self, rho: &ComplexMat3, rates: &DecoherenceRates, dt: f64) -> ComplexMat3 {
        match self {
            StepMap::Diagonal(d) => propagate_diagonal(rho, *d, rates, dt),
            StepMap::Dense(p) => unvec(&(p * vec_of(rho))),
        }
    }
}

/// Dense 9×9 matrix-exponential propagation, used as the reference integrator.
pub fn lindblad_propagate_dense(rho: &DensityMatrix, h: &ComplexMat3, rates: &DecoherenceRates, t: f64, dt: f64) -> Result<DensityMatrix> {
    if t <= 0.0 {
        return Ok(rho.clone());
    }
    let n = (t / dt).ceil().max(1.0) as usize;
    let h_step = t / n as f64;
    let p = (liouvillian(h, rates) * C64::new(h_step, 0.0)).exp();
    let mut v = vec_of(&rho.mat);
    for _ in 0..n {
        v = p * v;
    }
    DensityMatrix::from_matrix(symmetrize(&unvec(&v))).check()
}

/// Integrates dρ/dt = −i[H,ρ] + D[ρ] for time `t` under a constant Hamiltonian.
pub fn lindblad_propagate(rho: &DensityMatrix, h: &ComplexMat3, rates: &DecoherenceRates, t: f64) -> Result<DensityMatrix> {
    if t <= 0.0 {
        return Ok(rho.clone());
    }
    if is_diagonal(h) {
        let d = [h[(0, 0)].re, h[(1, 1)].re, h[(2, 2)].re];
        let m = propagate_diagonal(&rho.mat, d, rates, t);
        return DensityMatrix::from_matrix(symmetrize(&m)).check();
    }
    let l = liouvillian(h, rates);
    let v = expm_action(&l, vec_of(&rho.mat), t);
    DensityMatrix::from_matrix(symmetrize(&unvec(&v))).check()
}

/// exp(L·t)·v by scaled Taylor series; cheaper than forming the full
/// exponential when only one state is propagated.
fn expm_action(l: &Super, v: SMatrix<C64, 9, 1>, t: f64) -> SMatrix<C64, 9, 1> {
    let norm = (0..9).map(|c| l.column(c).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max);
    let parts = (norm * t).ceil().max(1.0) as usize;
    let h = t / parts as f64;
    // row-major copy for a tight inner loop
    let m: [[C64; 9]; 9] = std::array::from_fn(|r| std::array::from_fn(|c| l[(r, c)] * h));
    let mut acc: [C64; 9] = std::array::from_fn(|k| v[k]);
    for _ in 0..parts {
        let mut term = acc;
        for k in 1..40 {
            let inv = 1.0 / k as f64;
            let mut next = [ZERO; 9];
            let mut size = 0.0;
            for r in 0..9 {
                let mut z = ZERO;
                for c in 0..9 {
                    z += m[r][c] * term[c];
                }
                next[r] = z * inv;
                size += next[r].norm_sqr();
            }
            term = next;
            for r in 0..9 {
                acc[r] += term[r];
            }
            if size < 1e-36 {
                break;
            }
        }
    }
    SMatrix::<C64, 9, 1>::from_fn(|k, _| acc[k])
}

/// Ideal π rotation about x in the {|0>, |-1>} subspace (global phase dropped).
pub fn apply_pi_pulse(rho: &DensityMatrix) -> DensityMatrix {
    let p = [IDX_PLUS, IDX_MINUS, IDX_ZERO];
    DensityMatrix { mat: ComplexMat3::from_fn(|r, c| rho.mat[(p[r], p[c])]) }
}

/// Unitary conjugation ρ → U ρ U†.
pub fn conjugate(rho: &DensityMatrix, u: &ComplexMat3) -> DensityMatrix {
    DensityMatrix { mat: symmetrize(&(u * rho.mat * u.adjoint())) }
}

/// Number of sub-steps a segment of length `duration` uses at step `dt`.
pub fn substep_count(duration: f64, dt: f64) -> usize {
    ((duration / dt) - 1e-9).ceil().max(1.0) as usize
}

/// One sensing interval: piecewise-constant field per sub-step, interleaved with
/// instantaneous π pulses at the segment's pulse times.
pub fn cptp_step(
    rho: &DensityMatrix,
    seg: &ControlSegment,
    b_trajectory: &[f64],
    rates: &DecoherenceRates,
    dt: f64,
    detuning: f64,
) -> Result<DensityMatrix> {
    let n = substep_count(seg.duration, dt);
    assert_eq!(b_trajectory.len(), n, "field trajectory length must equal the sub-step count");
    let mut m = rho.mat;
    let mut pulses = seg.pi_pulse_times.iter().peekable();
    for (k, &b) in b_trajectory.iter().enumerate() {
        let t0 = k as f64 * dt;
        let t1 = ((k + 1) as f64 * dt).min(seg.duration);
        let h = build_hamiltonian(b, seg.u, detuning);
        let mut cursor = t0;
        let mut map: Option<(f64, StepMap)> = None;
        let advance = |m: &mut ComplexMat3, len: f64, map: &mut Option<(f64, StepMap)>| {
            if len <= 0.0 {
                return;
            }
            match map {
                Some((l, p)) if *l == len => *m = p.apply(m, rates, len),
                _ => {
                    let p = StepMap::new(&h, rates, len);
                    *m = p.apply(m, rates, len);
                    *map = Some((len, p));
                }
            }
        };
        while let Some(&&tp) = pulses.peek() {
            if tp > t1 && k + 1 < n {
                break;
            }
            advance(&mut m, tp - cursor, &mut map);
            m = apply_pi_pulse(&DensityMatrix { mat: m }).mat;
            cursor = tp;
            pulses.next();
        }
        advance(&mut m, t1 - cursor, &mut map);
    }
    DensityMatrix::from_matrix(symmetrize(&m)).check()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn spin_algebra() {
        let s = spin1_operators();
        assert!((commutator(&s.sx, &s.sy) - s.sz * I).norm() < 1e-12);
        assert!((commutator(&s.sy, &s.sz) - s.sx * I).norm() < 1e-12);
        assert!((commutator(&s.sz, &s.sx) - s.sy * I).norm() < 1e-12);
        assert!((trace(&(s.sz * s.sz)).re - 2.0).abs() < 1e-15);
        assert!((s.sz * basis_ket(IDX_ZERO)).norm() == 0.0);
    }

    #[test]
    fn unit_field_hamiltonian() {
        let h = build_hamiltonian(1.0, [0.0, 0.0], 0.0);
        let expect = ComplexMat3::from_diagonal(&Vector3::new(C64::new(GAMMA_E, 0.0), ZERO, C64::new(-GAMMA_E, 0.0)));
        assert!((h - expect).norm() < 1e-15);
        assert!(build_hamiltonian(0.0, [0.0, 0.0], 0.0).norm() == 0.0);
    }

    #[test]
    fn diagonal_path_matches_dense() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let rates = DecoherenceRates { gamma1: 0.01, gamma_phi: 0.05 };
        for _ in 0..20 {
            let rho = DensityMatrix::random(&mut rng);
            let h = build_hamiltonian(rng.random_range(-2.0..2.0), [0.0, 0.0], rng.random_range(-1.0..1.0));
            let a = lindblad_propagate(&rho, &h, &rates, 3.7).unwrap();
            let b = lindblad_propagate_dense(&rho, &h, &rates, 3.7, 0.5).unwrap();
            assert!((a.mat - b.mat).norm() < 1e-11);
        }
    }

    #[test]
    fn driven_path_matches_dense() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let rates = DecoherenceRates { gamma1: 0.002, gamma_phi: 0.005 };
        for _ in 0..20 {
            let rho = DensityMatrix::random(&mut rng);
            let u = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
            let h = build_hamiltonian(rng.random_range(-2.0..2.0), u, 0.0);
            let a = lindblad_propagate(&rho, &h, &rates, 40.0).unwrap();
            let b = lindblad_propagate_dense(&rho, &h, &rates, 40.0, 40.0).unwrap();
            assert!((a.mat - b.mat).norm() < 1e-11);
        }
    }

    #[test]
    fn pi_pulse_properties() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let rho = DensityMatrix::random(&mut rng);
        let twice = apply_pi_pulse(&apply_pi_pulse(&rho));
        assert!((twice.mat - rho.mat).norm() < 1e-12);
        let flipped = apply_pi_pulse(&DensityMatrix::basis(IDX_ZERO));
        assert!((flipped.mat - projector(IDX_MINUS)).norm() < 1e-15);
        let once = apply_pi_pulse(&rho);
        assert!((once.mat[(IDX_ZERO, IDX_MINUS)] - rho.mat[(IDX_ZERO, IDX_MINUS)].conj()).norm() < 1e-15);
    }

    #[test]
    fn ground_state_is_dark_under_dephasing() {
        let rho = DensityMatrix::basis(IDX_ZERO);
        let rates = DecoherenceRates { gamma1: 0.0, gamma_phi: 0.3 };
        let out = lindblad_propagate(&rho, &ComplexMat3::zeros(), &rates, 10.0).unwrap();
        assert!((out.mat - rho.mat).norm() < 1e-9);
    }
}
