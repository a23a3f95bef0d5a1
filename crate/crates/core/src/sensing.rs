//! One sensing step of a single NV: reset, π/2 preparation into the {0, −1}
//! subspace, free evolution under signal, drive, decoupling pulses and
//! decoherence, then a closing π/2 about a chosen axis and η-limited readout.
//!
//! Two evolution modes are offered. The trajectory mode samples the noisy field
//! and integrates it sub-step by sub-step. The ensemble mode propagates the
//! signal-only field and applies the Gaussian filter-function attenuation of
//! the noise to the sensing coherence; it is exact for an undriven step and is
//! what the Monte-Carlo studies use.

use num_complex::Complex64 as C64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::measurement::{basis_rotation, outcome_probs_fast};
use crate::quantum::{
    apply_pi_pulse, build_hamiltonian, cptp_step, dagger, lindblad_propagate, ControlSegment, ComplexMat3, DecoherenceRates,
    DensityMatrix, GAMMA_E, IDX_MINUS, IDX_ZERO,
};
use crate::signal::{sample_field_trajectory, Envelope, FieldModel, NoiseConfig, NoiseState};

/// Gyromagnetic ratio for fields in nT, rad/(µs·nT).
pub const GAMMA_NT: f64 = GAMMA_E * 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorPhysics {
    /// µs
    pub t1: f64,
    /// µs
    pub t2: f64,
    pub eta: f64,
    /// rad/µs
    pub detuning: f64,
}

impl Default for SensorPhysics {
    fn default() -> Self {
        Self { t1: 5000.0, t2: 200.0, eta: 0.1, detuning: 0.0 }
    }
}

impl SensorPhysics {
    pub fn rates(&self) -> DecoherenceRates {
        DecoherenceRates::from_times(self.t1, self.t2)
    }
}

/// Controls of one sensing step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    /// (Ω_x, Ω_y), rad/µs
    pub u: [f64; 2],
    /// µs
    pub duration: f64,
    pub n_pi: usize,
    /// mean photons per shot
    pub mean_photons: f64,
    /// closing-pulse axis, rad
    pub beta: f64,
}

impl StepControl {
    pub fn ramsey(duration: f64, mean_photons: f64) -> Self {
        Self { u: [0.0, 0.0], duration, n_pi: 0, mean_photons, beta: 0.0 }
    }

    pub fn segment(&self) -> ControlSegment {
        ControlSegment::cpmg(self.duration, self.n_pi, self.u)
    }
}

/// min(T/64, τ_c/10).
pub fn default_dt(duration: f64, tau_c: f64) -> f64 {
    let base = duration / 64.0;
    if tau_c > 0.0 {
        base.min(tau_c / 10.0)
    } else {
        base
    }
}

/// Intervals between decoupling pulses with the sign of the toggling frame.
pub fn toggling_pieces(duration: f64, n_pi: usize) -> Vec<(f64, f64, f64)> {
    let mut edges = vec![0.0];
    edges.extend(ControlSegment::cpmg(duration, n_pi, [0.0, 0.0]).pi_pulse_times);
    edges.push(duration);
    edges
        .windows(2)
        .enumerate()
        .map(|(i, w)| (w[0], w[1], if i % 2 == 0 { 1.0 } else { -1.0 }))
        .collect()
}

/// ∫_a^b ∫_c^d e^{−|t−s|/τ} ds dt for the given pair of intervals.
fn exp_kernel_integral(p: (f64, f64), q: (f64, f64), tau: f64) -> f64 {
    let (a, b) = p;
    let (c, d) = q;
    if (a, b) == (c, d) {
        let l = b - a;
        return 2.0 * tau * l - 2.0 * tau * tau * (1.0 - (-l / tau).exp());
    }
    let (lo, hi) = if b <= c { ((a, b), (c, d)) } else { ((c, d), (a, b)) };
    let e = |x: f64| (-x / tau).exp();
    tau * tau * (e(hi.0 - lo.1) - e(hi.0 - lo.0) - e(hi.1 - lo.1) + e(hi.1 - lo.0))
}

/// Phase variance of the sensing coherence accumulated from noise, rad².
///
/// White noise is held constant over each sub-step of length `dt`; coloured
/// noise enters through the exponential covariance of the OU process.
pub fn noise_phase_variance(noise: &NoiseConfig, duration: f64, n_pi: usize, dt: f64) -> f64 {
    let pieces = toggling_pieces(duration, n_pi);
    let white = noise.sigma_w2 * dt * duration;
    let mut coloured = 0.0;
    let var = noise.stationary_var();
    if var > 0.0 {
        for p in &pieces {
            for q in &pieces {
                coloured += p.2 * q.2 * exp_kernel_integral((p.0, p.1), (q.0, q.1), noise.tau_c);
            }
        }
        coloured *= var;
    }
    GAMMA_NT * GAMMA_NT * (white + coloured)
}

/// Mean signal field at sensor `k` over [t_a, t_b] (absolute times), nT.
pub fn mean_signal_field(field: &FieldModel, k: usize, t_a: f64, t_b: f64, psi: f64) -> f64 {
    let len = t_b - t_a;
    if !field.signal_present || field.xi.amplitude_a == 0.0 || len <= 0.0 {
        return field.env_offset;
    }
    match field.envelope {
        Envelope::Constant => {
            let omega = 2.0 * std::f64::consts::PI * field.xi.carrier_offset_fc;
            let x = omega * len;
            let avg = if x.abs() < 1e-8 {
                C64::from_polar(1.0, omega * (t_a + 0.5 * len))
            } else {
                (C64::from_polar(1.0, omega * t_b) - C64::from_polar(1.0, omega * t_a)) / C64::new(0.0, x)
            };
            let amp = field.coupling(k) * C64::from_polar(field.xi.amplitude_a, field.xi.phase_phi + psi);
            (amp * avg).re + field.env_offset
        }
        Envelope::Bpsk { .. } => {
            let n = 64;
            let h = len / n as f64;
            (0..n).map(|i| field.signal_field(k, t_a + (i as f64 + 0.5) * h, psi)).sum::<f64>() / n as f64
        }
    }
}

/// Parts a driven piece is split into. Replacing the field by its piece
/// average is exact without drive; the error grows with the field excursion
/// times the drive angle, and that product is kept near 0.05 rad.
fn drive_parts(field: &FieldModel, len: f64, drive: f64) -> usize {
    if !field.signal_present || field.xi.amplitude_a == 0.0 {
        return 1;
    }
    let angle = (drive * len).min(1.0);
    match field.envelope {
        Envelope::Constant => {
            let excursion = 2.0 * std::f64::consts::PI * field.xi.carrier_offset_fc.abs() * len;
            ((excursion * angle / 0.05).ceil() as usize).clamp(1, 16)
        }
        Envelope::Bpsk { .. } => ((16.0 * angle).ceil() as usize).clamp(1, 16),
    }
}

/// State right before readout, noise averaged.
pub fn ensemble_state(
    phys: &SensorPhysics,
    field: &FieldModel,
    sensor: usize,
    t_start: f64,
    ctrl: &StepControl,
    psi: f64,
) -> Result<DensityMatrix> {
    let rates = phys.rates();
    let driven = ctrl.u != [0.0, 0.0];
    let mut rho = DensityMatrix::sensing_superposition(0.0);
    let pieces = toggling_pieces(ctrl.duration, ctrl.n_pi);
    for (i, &(a, b, _)) in pieces.iter().enumerate() {
        let parts = if driven { drive_parts(field, b - a, ctrl.u[0].hypot(ctrl.u[1])) } else { 1 };
        let h = (b - a) / parts as f64;
        for j in 0..parts {
            let ta = a + j as f64 * h;
            let bz = mean_signal_field(field, sensor, t_start + ta, t_start + ta + h, psi) * 1e-3;
            let ham = build_hamiltonian(bz, ctrl.u, phys.detuning);
            rho = lindblad_propagate(&rho, &ham, &rates, h)?;
        }
        if i + 1 < pieces.len() {
            rho = apply_pi_pulse(&rho);
        }
    }
    let dt = default_dt(ctrl.duration, field.noise.tau_c);
    let chi = 0.5 * noise_phase_variance(&field.noise, ctrl.duration, ctrl.n_pi, dt);
    if chi > 0.0 {
        let f = (-chi).exp();
        let mut m = rho.mat;
        for (r, c) in [(IDX_ZERO, IDX_MINUS), (IDX_MINUS, IDX_ZERO)] {
            m[(r, c)] *= f;
        }
        rho = DensityMatrix::from_matrix(m);
    }
    Ok(rho)
}

/// State right before readout for one sampled noise realization.
#[allow(clippy::too_many_arguments)]
pub fn trajectory_state<R: Rng + ?Sized>(
    phys: &SensorPhysics,
    field: &FieldModel,
    sensor: usize,
    t_start: f64,
    ctrl: &StepControl,
    state: &mut NoiseState,
    dt: f64,
    rng: &mut R,
) -> Result<DensityMatrix> {
    let traj: Vec<f64> = sample_field_trajectory(field, sensor, t_start, ctrl.duration, dt, state, rng)
        .into_iter()
        .map(|b| b * 1e-3)
        .collect();
    let rho = DensityMatrix::sensing_superposition(0.0);
    cptp_step(&rho, &ctrl.segment(), &traj, &phys.rates(), dt, phys.detuning)
}

/// Closing-pulse unitary for readout axis `beta`.
pub fn closing_pulse(beta: f64) -> ComplexMat3 {
    dagger(&basis_rotation(beta))
}

/// Closing axis that puts the readout of `rho` at its steepest point: the
/// negated argument of the {0, −1} coherence.
pub fn locked_basis(rho: &DensityMatrix) -> f64 {
    let c = rho.mat[(IDX_ZERO, IDX_MINUS)];
    if c.norm() < 1e-15 {
        0.0
    } else {
        -c.arg()
    }
}

/// Spin-outcome probabilities of one step (noise averaged).
pub fn step_probs(
    phys: &SensorPhysics,
    field: &FieldModel,
    sensor: usize,
    t_start: f64,
    ctrl: &StepControl,
    psi: f64,
) -> Result<[f64; 3]> {
    let rho = ensemble_state(phys, field, sensor, t_start, ctrl, psi)?;
    Ok(outcome_probs_fast(&rho, phys.eta, &closing_pulse(ctrl.beta)))
}

/// Sign of the toggling frame at the end of a step; odd pulse counts swap the
/// roles of |0⟩ and |−1⟩.
pub fn parity(n_pi: usize) -> f64 {
    if n_pi % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Effective integrated phase weight ∫ sign(t) dt of a step, µs.
pub fn net_toggling_time(duration: f64, n_pi: usize) -> f64 {
    toggling_pieces(duration, n_pi).iter().map(|(a, b, s)| s * (b - a)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::SignalParams;

    fn quiet_field(a: f64) -> FieldModel {
        FieldModel::single(SignalParams::new(a, 0.0, 0.0, 0.0), NoiseConfig::quiet())
    }

    #[test]
    fn ramsey_phase_matches_closed_form() {
        let phys = SensorPhysics { t1: f64::INFINITY, t2: f64::INFINITY, eta: 1.0, detuning: 0.0 };
        let field = quiet_field(10.0);
        let ctrl = StepControl::ramsey(100.0, 30.0);
        let rho = ensemble_state(&phys, &field, 0, 0.0, &ctrl, 0.0).unwrap();
        let c = rho.mat[(IDX_ZERO, IDX_MINUS)];
        let expect = 0.5 * C64::from_polar(1.0, -GAMMA_NT * 10.0 * 100.0);
        assert!((c - expect).norm() < 1e-12);
    }

    #[test]
    fn locked_basis_sits_midway() {
        let phys = SensorPhysics::default();
        let ctrl = StepControl::ramsey(120.0, 30.0);
        let rho = ensemble_state(&phys, &quiet_field(40.0), 0, 0.0, &ctrl, 0.0).unwrap();
        let beta = locked_basis(&rho);
        let p0 = |b: f64| outcome_probs_fast(&rho, phys.eta, &closing_pulse(b))[1];
        let hi = p0(beta + std::f64::consts::FRAC_PI_2);
        let lo = p0(beta - std::f64::consts::FRAC_PI_2);
        assert!((p0(beta) - 0.5 * (hi + lo)).abs() < 1e-12);
        assert!((hi - lo).abs() > 0.01);
    }

    #[test]
    fn echo_cancels_static_field() {
        let phys = SensorPhysics { t1: f64::INFINITY, t2: f64::INFINITY, eta: 1.0, detuning: 0.0 };
        let ctrl = StepControl { n_pi: 2, ..StepControl::ramsey(80.0, 30.0) };
        let rho = ensemble_state(&phys, &quiet_field(25.0), 0, 0.0, &ctrl, 0.0).unwrap();
        assert!((rho.mat[(IDX_ZERO, IDX_MINUS)] - C64::new(0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn kernel_integral_matches_quadrature() {
        let tau = 0.7;
        let p = (0.0, 1.3);
        let q = (2.0, 2.9);
        let n = 400;
        let quad = |p: (f64, f64), q: (f64, f64)| {
            let hp = (p.1 - p.0) / n as f64;
            let hq = (q.1 - q.0) / n as f64;
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let t = p.0 + (i as f64 + 0.5) * hp;
                    let u = q.0 + (j as f64 + 0.5) * hq;
                    s += (-(t - u).abs() / tau).exp();
                }
            }
            s * hp * hq
        };
        assert!((exp_kernel_integral(p, q, tau) - quad(p, q)).abs() < 1e-4);
        assert!((exp_kernel_integral(q, p, tau) - quad(p, q)).abs() < 1e-4);
        assert!((exp_kernel_integral(p, p, tau) - quad(p, p)).abs() < 1e-3);
    }

    #[test]
    fn toggling_pieces_cover_interval() {
        let p = toggling_pieces(10.0, 4);
        assert_eq!(p.len(), 5);
        assert!((p[0].1 - 1.25).abs() < 1e-12 && (p[4].0 - 8.75).abs() < 1e-12);
        assert!(net_toggling_time(10.0, 2).abs() < 1e-12);
        assert_eq!(net_toggling_time(10.0, 0), 10.0);
    }
}
