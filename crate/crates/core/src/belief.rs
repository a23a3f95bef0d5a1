//! Gaussian belief over the signal parameters with Fisher-additive updates.

use nalgebra::{Matrix4, SymmetricEigen};

use crate::information::InfoMatrix;
use crate::signal::wrap_phase;

/// Length of the policy input: four means and ten covariance entries.
pub const STATE_DIM: usize = 14;

#[derive(Clone, Debug, PartialEq)]
pub struct BeliefState {
    /// (A nT, f_c MHz, φ rad, θ rad)
    pub mu_hat: [f64; 4],
    pub sigma_hat: Matrix4<f64>,
}

impl BeliefState {
    pub fn new(mu_hat: [f64; 4], sigma_diag: [f64; 4]) -> Self {
        Self { mu_hat, sigma_hat: Matrix4::from_diagonal(&sigma_diag.into()) }
    }

    /// Upper triangle, row by row.
    pub fn vech_sigma(&self) -> [f64; 10] {
        let mut out = [0.0; 10];
        let mut k = 0;
        for i in 0..4 {
            for j in i..4 {
                out[k] = self.sigma_hat[(i, j)];
                k += 1;
            }
        }
        out
    }

    pub fn encode(&self) -> [f64; STATE_DIM] {
        let mut s = [0.0; STATE_DIM];
        s[..4].copy_from_slice(&self.mu_hat);
        s[4..].copy_from_slice(&self.vech_sigma());
        s
    }

    pub fn weighted_trace(&self, w: &InfoMatrix) -> f64 {
        (w * self.sigma_hat).trace()
    }
}

fn floor_psd(m: &Matrix4<f64>) -> Matrix4<f64> {
    let s = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(s);
    if eig.eigenvalues.iter().all(|&e| e >= 0.0) {
        return s;
    }
    let d = Matrix4::from_diagonal(&eig.eigenvalues.map(|e| e.max(0.0)));
    let r = eig.eigenvectors * d * eig.eigenvectors.transpose();
    (r + r.transpose()) * 0.5
}

/// Σ' = (Σ⁻¹ + I_n)⁻¹ computed as Σ(1 + I_nΣ)⁻¹, μ' = μ + Σ'·score.
///
/// `info` is the Fisher information of the whole step readout at μ̂ and
/// `score` the gradient of its log-likelihood there.
pub fn belief_update(b: &BeliefState, info: &InfoMatrix, score: &[f64; 4]) -> BeliefState {
    if info.iter().all(|v| *v == 0.0) && score.iter().all(|v| *v == 0.0) {
        return b.clone();
    }
    let s = b.sigma_hat;
    let a = Matrix4::identity() + info * s;
    let inv = a
        .try_inverse()
        .or_else(|| (a + Matrix4::identity() * 1e-9).try_inverse())
        .unwrap_or_else(Matrix4::identity);
    let sigma = floor_psd(&(s * inv));
    let step = sigma * nalgebra::Vector4::from(*score);
    let mut mu = b.mu_hat;
    for i in 0..4 {
        mu[i] += step[i];
    }
    BeliefState { mu_hat: mu, sigma_hat: sigma }
}

/// Keeps the amplitude non-negative by absorbing its sign into the phase.
pub fn canonicalize(b: &mut BeliefState) {
    if b.mu_hat[0] < 0.0 {
        b.mu_hat[0] = -b.mu_hat[0];
        b.mu_hat[2] += std::f64::consts::PI;
    }
    b.mu_hat[2] = wrap_phase(b.mu_hat[2]);
}

/// r = Tr(WΣ_prev) − Tr(WΣ_next).
pub fn reward(prev: &BeliefState, next: &BeliefState, w: &InfoMatrix) -> f64 {
    prev.weighted_trace(w) - next.weighted_trace(w)
}
