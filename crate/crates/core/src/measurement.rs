//! POVM readout, photon statistics and likelihoods.

use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{RapidError, Result};
use crate::quantum::{dagger, hermitian_eigen, projector, trace, ComplexMat3, DensityMatrix, IDX_MINUS, IDX_ZERO};

/// Relative fluorescence of each outcome, indexed like the spin basis (+1, 0, −1).
pub const BRIGHTNESS: [f64; 3] = [0.7, 1.0, 0.7];
pub const DEFAULT_S_MAX: f64 = 30.0;
/// Outcome labels in basis-index order.
pub const OUTCOME_LABELS: [i8; 3] = [1, 0, -1];

pub fn label_to_index(m: i8) -> usize {
    match m {
        1 => 0,
        0 => 1,
        _ => 2,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PovmSet {
    pub elements: [ComplexMat3; 3],
    pub eta: f64,
    pub basis_rotation: ComplexMat3,
}

impl PovmSet {
    pub fn completeness_error(&self) -> f64 {
        let s: ComplexMat3 = self.elements.iter().sum();
        (s - ComplexMat3::identity()).norm()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.elements.iter().map(|e| hermitian_eigen(e).0[0]).fold(f64::INFINITY, f64::min)
    }
}

/// Π_m = R(η|m⟩⟨m| + (1−η)I/3)R†.
pub fn povm_build(eta: f64, basis_rotation: ComplexMat3) -> PovmSet {
    let r = basis_rotation;
    let rd = dagger(&r);
    let mixed = ComplexMat3::identity().scale((1.0 - eta) / 3.0);
    let elements = std::array::from_fn(|m| r * (projector(m).scale(eta) + mixed) * rd);
    PovmSet { elements, eta, basis_rotation: r }
}

/// Readout frame for a closing π/2 pulse in the {0, −1} subspace about the
/// in-plane axis at angle `beta`.
///
/// With the state (|0⟩+e^{iϕ}|−1⟩)/√2 the ideal bright probability is
/// ½(1 + sin(ϕ − β)), so the slope is steepest at ϕ = β.
pub fn basis_rotation(beta: f64) -> ComplexMat3 {
    let c = std::f64::consts::FRAC_1_SQRT_2;
    let mut u = ComplexMat3::identity();
    u[(IDX_ZERO, IDX_ZERO)] = C64::new(c, 0.0);
    u[(IDX_MINUS, IDX_MINUS)] = C64::new(c, 0.0);
    u[(IDX_ZERO, IDX_MINUS)] = C64::new(0.0, -c) * C64::from_polar(1.0, -beta);
    u[(IDX_MINUS, IDX_ZERO)] = C64::new(0.0, -c) * C64::from_polar(1.0, beta);
    // the POVM frame R is the inverse of the closing pulse
    dagger(&u)
}

/// p_m = Tr(Π_m ρ), clipped and renormalised.
pub fn outcome_probs(rho: &DensityMatrix, povm: &PovmSet) -> [f64; 3] {
    let mut p: [f64; 3] = std::array::from_fn(|m| trace(&(povm.elements[m] * rho.mat)).re.max(0.0));
    let s: f64 = p.iter().sum();
    if s > 0.0 {
        p.iter_mut().for_each(|x| *x /= s);
    } else {
        p = [1.0 / 3.0; 3];
    }
    p
}

/// Same as [`outcome_probs`] for the common η-mixed POVM without building it.
pub fn outcome_probs_fast(rho: &DensityMatrix, eta: f64, closing: &ComplexMat3) -> [f64; 3] {
    let r = closing * rho.mat * dagger(closing);
    let mut p: [f64; 3] = std::array::from_fn(|m| (eta * r[(m, m)].re + (1.0 - eta) / 3.0).max(0.0));
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutRecord {
    pub outcome_m: i8,
    pub photons_y: u64,
    pub mean_photons_s: f64,
}

/// Poisson means S·c_m for each outcome.
pub fn photon_means(mean_photons_s: f64) -> [f64; 3] {
    BRIGHTNESS.map(|c| mean_photons_s * c)
}

fn poisson_draw<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

fn categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Single shot: m ~ Categorical(p), y ~ Poisson(S·c_m).
pub fn sample_readout<R: Rng + ?Sized>(probs: &[f64; 3], mean_photons_s: f64, rng: &mut R) -> ReadoutRecord {
    let idx = categorical(probs, rng);
    let y = poisson_draw(mean_photons_s * BRIGHTNESS[idx], rng);
    ReadoutRecord { outcome_m: OUTCOME_LABELS[idx], photons_y: y, mean_photons_s }
}

/// ln Poisson(y; μ).
pub fn poisson_log_pmf(y: u64, mean: f64) -> f64 {
    if mean <= 0.0 {
        return if y == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let ln_fact: f64 = (2..=y).map(|k| (k as f64).ln()).sum();
    y as f64 * mean.ln() - mean - ln_fact
}

/// ln p(m|H) + ln Poisson(y; μ_m).
pub fn shot_log_likelihood(record: &ReadoutRecord, probs_h: &[f64; 3], mean_photons: &[f64; 3]) -> Result<f64> {
    let idx = label_to_index(record.outcome_m);
    let p = probs_h[idx];
    let lp = poisson_log_pmf(record.photons_y, mean_photons[idx]);
    if p <= 0.0 || !lp.is_finite() {
        return Err(RapidError::DegenerateLikelihood { outcome: record.outcome_m });
    }
    Ok(p.ln() + lp)
}

/// Log-likelihood ratio ln p(record|H₁) − ln p(record|H₀) for one shot.
pub fn shot_log_ratio(record: &ReadoutRecord, probs_h1: &[f64; 3], probs_h0: &[f64; 3]) -> Result<f64> {
    let means = photon_means(record.mean_photons_s);
    Ok(shot_log_likelihood(record, probs_h1, &means)? - shot_log_likelihood(record, probs_h0, &means)?)
}

/// Observable distribution of one repetition: the spin outcome is resolved
/// only when at least one photon arrives, otherwise the shot is dark.
/// Returns (bright +1, bright 0, bright −1, dark).
pub fn observed_distribution(probs: &[f64; 3], mean_photons_s: f64) -> [f64; 4] {
    let dark: [f64; 3] = std::array::from_fn(|m| (-mean_photons_s * BRIGHTNESS[m]).exp());
    [
        probs[0] * (1.0 - dark[0]),
        probs[1] * (1.0 - dark[1]),
        probs[2] * (1.0 - dark[2]),
        probs.iter().zip(dark).map(|(p, d)| p * d).sum(),
    ]
}

/// Counts from repeating one sensing step `shots` times.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepReadout {
    /// bright shots per outcome (+1, 0, −1)
    pub counts: [u64; 3],
    pub dark: u64,
}

impl StepReadout {
    pub fn shots(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.dark
    }

    fn as_array(&self) -> [u64; 4] {
        [self.counts[0], self.counts[1], self.counts[2], self.dark]
    }
}

/// Multinomial draw over the four observable categories.
pub fn sample_step_readout<R: Rng + ?Sized>(probs: &[f64; 3], mean_photons_s: f64, shots: u64, rng: &mut R) -> StepReadout {
    let q = observed_distribution(probs, mean_photons_s);
    let mut left = shots;
    let mut mass = 1.0;
    let mut out = [0u64; 4];
    for i in 0..3 {
        if left == 0 {
            break;
        }
        let p = if mass > 0.0 { (q[i] / mass).clamp(0.0, 1.0) } else { 0.0 };
        let k = Binomial::new(left, p).map(|b| b.sample(rng)).unwrap_or(0);
        out[i] = k;
        left -= k;
        mass -= q[i];
    }
    out[3] = left;
    StepReadout { counts: [out[0], out[1], out[2]], dark: out[3] }
}

/// Log-likelihood of a step readout up to terms independent of the state.
/// Returns −∞ when an observed category has zero probability.
pub fn step_log_likelihood(readout: &StepReadout, probs: &[f64; 3], mean_photons_s: f64) -> f64 {
    let q = observed_distribution(probs, mean_photons_s);
    let mut ll = 0.0;
    for (n, p) in readout.as_array().iter().zip(q) {
        if *n > 0 {
            if p <= 0.0 {
                return f64::NEG_INFINITY;
            }
            ll += *n as f64 * p.ln();
        }
    }
    ll
}

/// Alternative reading of the excitation budget as a fraction of a saturated
/// photon yield.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PhotonNormalization {
    MeanPhotons,
    ExcitationFraction { photons_at_saturation: f64 },
}

impl PhotonNormalization {
    pub fn mean_photons(&self, s: f64) -> f64 {
        match self {
            PhotonNormalization::MeanPhotons => s,
            PhotonNormalization::ExcitationFraction { photons_at_saturation } => s * photons_at_saturation,
        }
    }
}
