//! Covert signal synthesis, per-sensor field projection and noise processes.
//!
//! Fields are in nT, times in µs, frequencies in MHz.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Unknown signal parameters (A, f_c, φ, θ).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalParams {
    /// nT
    pub amplitude_a: f64,
    /// rotating-frame carrier offset, MHz
    pub carrier_offset_fc: f64,
    /// rad
    pub phase_phi: f64,
    /// angle of arrival, rad
    pub aoa_theta: f64,
}

impl SignalParams {
    pub const DIM: usize = 4;

    pub fn new(amplitude_a: f64, carrier_offset_fc: f64, phase_phi: f64, aoa_theta: f64) -> Self {
        Self { amplitude_a, carrier_offset_fc, phase_phi, aoa_theta }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.amplitude_a, self.carrier_offset_fc, self.phase_phi, self.aoa_theta]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn with(&self, idx: usize, value: f64) -> Self {
        let mut a = self.to_array();
        a[idx] = value;
        Self::from_array(a)
    }

    /// Same parameters with the signal switched off (null hypothesis).
    pub fn silent(&self) -> Self {
        Self { amplitude_a: 0.0, ..*self }
    }
}

/// Wraps an angle into [−π, π).
pub fn wrap_phase(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// white-noise variance per sub-step sample, nT²
    pub sigma_w2: f64,
    /// coloured-noise power parameter, nT²·µs
    pub sigma_n2: f64,
    /// correlation time, µs
    pub tau_c: f64,
}

impl NoiseConfig {
    pub fn stationary_var(&self) -> f64 {
        if self.tau_c > 0.0 {
            self.sigma_n2 / (2.0 * self.tau_c)
        } else {
            0.0
        }
    }

    pub fn total_var(&self) -> f64 {
        self.sigma_w2 + self.stationary_var()
    }

    pub fn quiet() -> Self {
        Self { sigma_w2: 0.0, sigma_n2: 0.0, tau_c: 1.0 }
    }
}

/// Input SNR in dB: (A²/2) / (σ_w² + σ_n²/2τ_c).
pub fn snr_db(amplitude: f64, noise: &NoiseConfig) -> f64 {
    10.0 * ((0.5 * amplitude * amplitude) / noise.total_var()).log10()
}

/// Amplitude that realizes a given input SNR.
pub fn amplitude_for_snr(snr_db: f64, noise: &NoiseConfig) -> f64 {
    (2.0 * noise.total_var() * 10f64.powf(snr_db / 10.0)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OUState {
    pub value: f64,
    pub tau_c: f64,
    pub stationary_var: f64,
}

impl OUState {
    pub fn stationary<R: Rng + ?Sized>(noise: &NoiseConfig, rng: &mut R) -> Self {
        let var = noise.stationary_var();
        let z: f64 = rng.sample(StandardNormal);
        Self { value: var.sqrt() * z, tau_c: noise.tau_c, stationary_var: var }
    }

    pub fn at_rest(noise: &NoiseConfig) -> Self {
        Self { value: 0.0, tau_c: noise.tau_c, stationary_var: noise.stationary_var() }
    }
}

/// Exact AR(1) update of the Ornstein–Uhlenbeck process over `dt`.
pub fn ou_step<R: Rng + ?Sized>(state: OUState, dt: f64, rng: &mut R) -> OUState {
    let decay = (-dt / state.tau_c).exp();
    let z: f64 = rng.sample(StandardNormal);
    let sd = (state.stationary_var * (1.0 - decay * decay)).sqrt();
    OUState { value: state.value * decay + sd * z, ..state }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultipathComponent {
    pub attenuation_gamma: f64,
    pub phase_shift: f64,
    pub projection: [f64; 2],
}

/// Σ Γ_i α_i e^{iΔφ_i}, a complex multiplier on the baseband signal.
pub fn multipath_offset(components: &[MultipathComponent]) -> C64 {
    components
        .iter()
        .map(|c| C64::new(c.projection[0], c.projection[1]) * C64::from_polar(c.attenuation_gamma, c.phase_shift))
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub n_sensors: usize,
    /// element spacing in wavelengths
    pub spacing_d: f64,
    /// per-sensor crystallographic projection factors α_k (re, im)
    pub projections: Vec<[f64; 2]>,
}

impl ArrayGeometry {
    pub fn ula(n_sensors: usize, spacing_d: f64) -> Self {
        Self { n_sensors, spacing_d, projections: vec![[1.0, 0.0]; n_sensors] }
    }

    pub fn single() -> Self {
        Self::ula(1, 0.5)
    }

    pub fn projection(&self, k: usize) -> C64 {
        let p = self.projections.get(k).copied().unwrap_or([1.0, 0.0]);
        C64::new(p[0], p[1])
    }

    /// Phase of element k's steering entry, −2π(k)d sinθ (k from 0).
    pub fn steering_phase(&self, k: usize, theta: f64) -> f64 {
        -2.0 * PI * k as f64 * self.spacing_d * theta.sin()
    }
}

/// [a(θ)]_k = exp(−i2π(k−1) d sinθ).
pub fn steering_vector(theta: f64, geom: &ArrayGeometry) -> Vec<C64> {
    (0..geom.n_sensors).map(|k| C64::from_polar(1.0, geom.steering_phase(k, theta))).collect()
}

/// Baseband envelope u(t), |u| ≤ 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Envelope {
    Constant,
    /// Binary phase keying with the given symbol period (µs) and ±1 symbols.
    Bpsk { symbol_period: f64, symbols: Vec<f64> },
}

impl Envelope {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Envelope::Constant => 1.0,
            Envelope::Bpsk { symbol_period, symbols } => {
                if symbols.is_empty() {
                    return 1.0;
                }
                let idx = (t / symbol_period).floor().max(0.0) as usize % symbols.len();
                symbols[idx]
            }
        }
    }
}

/// s(t) = A·exp(i(2π f_c t + φ + ψ(t)))·u(t), nT.
pub fn baseband_signal(xi: &SignalParams, t: f64, envelope: &Envelope, psi_phase_noise: f64) -> C64 {
    let phase = 2.0 * PI * xi.carrier_offset_fc * t + xi.phase_phi + psi_phase_noise;
    C64::from_polar(xi.amplitude_a, phase) * envelope.eval(t)
}

/// B_k = Re{s·α_k} + B_env + w + n.
pub fn project_field(s: C64, alpha_k: C64, env_offset: f64, w: f64, n: f64) -> f64 {
    (s * alpha_k).re + env_offset + w + n
}

/// Everything that determines the field seen by the sensors.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldModel {
    pub xi: SignalParams,
    pub noise: NoiseConfig,
    pub geometry: ArrayGeometry,
    pub multipath: Vec<MultipathComponent>,
    pub envelope: Envelope,
    /// Wiener phase-noise diffusion, rad²/µs
    pub phase_diffusion: f64,
    pub env_offset: f64,
    /// false: null hypothesis, the signal term is omitted
    pub signal_present: bool,
}

impl FieldModel {
    pub fn single(xi: SignalParams, noise: NoiseConfig) -> Self {
        Self {
            xi,
            noise,
            geometry: ArrayGeometry::single(),
            multipath: Vec::new(),
            envelope: Envelope::Constant,
            phase_diffusion: 0.0,
            env_offset: 0.0,
            signal_present: true,
        }
    }

    /// Complex coupling of the baseband signal into sensor k.
    pub fn coupling(&self, k: usize) -> C64 {
        self.geometry.projection(k) * C64::from_polar(1.0, self.geometry.steering_phase(k, self.xi.aoa_theta))
            + multipath_offset(&self.multipath)
    }

    /// Noise-free field at sensor k and time t, nT.
    pub fn signal_field(&self, k: usize, t: f64, psi: f64) -> f64 {
        if !self.signal_present {
            return self.env_offset;
        }
        project_field(baseband_signal(&self.xi, t, &self.envelope, psi), self.coupling(k), self.env_offset, 0.0, 0.0)
    }
}

/// Mutable noise state carried across the sub-steps of one sensor.
#[derive(Clone, Copy, Debug)]
pub struct NoiseState {
    pub ou: OUState,
    pub psi: f64,
}

impl NoiseState {
    pub fn new<R: Rng + ?Sized>(noise: &NoiseConfig, rng: &mut R) -> Self {
        Self { ou: OUState::stationary(noise, rng), psi: 0.0 }
    }
}

/// Field samples for one sensor over `duration`, one per sub-step (midpoint), nT.
pub fn sample_field_trajectory<R: Rng + ?Sized>(
    model: &FieldModel,
    sensor: usize,
    t_start: f64,
    duration: f64,
    dt: f64,
    state: &mut NoiseState,
    rng: &mut R,
) -> Vec<f64> {
    let n = crate::quantum::substep_count(duration, dt);
    let sw = model.noise.sigma_w2.sqrt();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let t0 = k as f64 * dt;
        let h = ((k + 1) as f64 * dt).min(duration) - t0;
        let w = sw * rng.sample::<f64, _>(StandardNormal);
        let s = model.signal_field(sensor, t_start + t0 + 0.5 * h, state.psi);
        out.push(s + w + state.ou.value);
        state.ou = ou_step(state.ou, h, rng);
        if model.phase_diffusion > 0.0 {
            state.psi += (model.phase_diffusion * h).sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
    }
    out
}
