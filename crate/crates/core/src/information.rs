//! Symmetric logarithmic derivatives, quantum/classical Fisher information and
//! the weighted Cramér–Rao functional.

use nalgebra::{DMatrix, Matrix4, SymmetricEigen};

use crate::error::{RapidError, Result};
use crate::quantum::{dagger, hermitian_eigen, symmetrize, trace, ComplexMat3, DensityMatrix, C64};
use crate::signal::SignalParams;

pub type InfoMatrix = Matrix4<f64>;

/// Central-difference steps for (A, f_c, φ, θ); a zero step marks a parameter as inactive.
pub const FD_STEPS: [f64; 4] = [0.01, 1e-4, 1e-4, 1e-4];
pub const SLD_EPS: f64 = 1e-10;
pub const QCRB_LAMBDA: f64 = 1e-9;
pub const MAX_CONDITION: f64 = 1e12;

/// Solves ∂ρ = ½(Lρ + ρL) in the eigenbasis of ρ; kernel directions are zeroed.
pub fn sld_solve(rho: &DensityMatrix, drho: &ComplexMat3) -> ComplexMat3 {
    let (p, v) = hermitian_eigen(&rho.mat);
    let d = dagger(&v) * drho * v;
    let l = ComplexMat3::from_fn(|i, j| {
        let s = p[i] + p[j];
        if s > SLD_EPS {
            d[(i, j)] * (2.0 / s)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    symmetrize(&(v * l * dagger(&v)))
}

/// Frobenius norm of ∂ρ − ½{L, ρ}.
pub fn sld_residual(rho: &DensityMatrix, drho: &ComplexMat3, l: &ComplexMat3) -> f64 {
    (drho - (l * rho.mat + rho.mat * l).scale(0.5)).norm()
}

fn central_diff<T, F>(f: &F, xi: &SignalParams, idx: usize, h: f64) -> Result<(T, T)>
where
    F: Fn(&SignalParams) -> Result<T>,
{
    let x = xi.to_array()[idx];
    Ok((f(&xi.with(idx, x + h))?, f(&xi.with(idx, x - h))?))
}

/// J_ij = ½Tr(ρ{L_i, L_j}) with ∂ρ from central differences.
pub fn qfim<F>(state_fn: F, xi: &SignalParams, fd_steps: &[f64; 4]) -> Result<InfoMatrix>
where
    F: Fn(&SignalParams) -> Result<DensityMatrix>,
{
    let rho = state_fn(xi)?;
    let mut slds: [Option<ComplexMat3>; 4] = [None; 4];
    for (i, &h) in fd_steps.iter().enumerate() {
        if h == 0.0 {
            continue;
        }
        let (up, down) = central_diff(&state_fn, xi, i, h)?;
        let drho = symmetrize(&(up.mat - down.mat).unscale(2.0 * h));
        slds[i] = Some(sld_solve(&rho, &drho));
    }
    Ok(qfim_from_slds(&rho, &slds))
}

pub fn qfim_from_slds(rho: &DensityMatrix, slds: &[Option<ComplexMat3>; 4]) -> InfoMatrix {
    let mut j = InfoMatrix::zeros();
    for a in 0..4 {
        for b in a..4 {
            if let (Some(la), Some(lb)) = (&slds[a], &slds[b]) {
                let v = 0.5 * trace(&(rho.mat * (la * lb + lb * la))).re;
                j[(a, b)] = v;
                j[(b, a)] = v;
            }
        }
    }
    j
}

/// Entrywise sum over sensors.
pub fn qfim_total(per_sensor: &[InfoMatrix]) -> InfoMatrix {
    per_sensor.iter().fold(InfoMatrix::zeros(), |acc, j| acc + j)
}

/// Fisher information of a discrete outcome distribution: Σ (∂_i p)(∂_j p)/p.
///
/// Poisson photon factors whose means do not depend on the parameters add
/// nothing, so callers pass the distribution of the parameter-dependent
/// observables only.
pub fn classical_fim<F>(probs_fn: F, xi: &SignalParams, fd_steps: &[f64; 4]) -> Result<InfoMatrix>
where
    F: Fn(&SignalParams) -> Result<Vec<f64>>,
{
    let p = probs_fn(xi)?;
    let mut derivs: [Option<Vec<f64>>; 4] = Default::default();
    for (i, &h) in fd_steps.iter().enumerate() {
        if h == 0.0 {
            continue;
        }
        let (up, down) = central_diff(&probs_fn, xi, i, h)?;
        derivs[i] = Some(up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * h)).collect());
    }
    Ok(fim_from_derivatives(&p, &derivs))
}

pub fn fim_from_derivatives(p: &[f64], derivs: &[Option<Vec<f64>>; 4]) -> InfoMatrix {
    let mut out = InfoMatrix::zeros();
    for a in 0..4 {
        for b in a..4 {
            if let (Some(da), Some(db)) = (&derivs[a], &derivs[b]) {
                let v: f64 = p
                    .iter()
                    .enumerate()
                    .filter(|(_, &pk)| pk > 1e-300)
                    .map(|(k, &pk)| da[k] * db[k] / pk)
                    .sum();
                out[(a, b)] = v;
                out[(b, a)] = v;
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FisherModelParams {
    pub kappa: f64,
    pub t2_eff: f64,
}

/// I = κ·t·‖u‖²·e^{−t/T₂eff}.
pub fn fisher_model(u: &[f64], t: f64, params: &FisherModelParams) -> f64 {
    let u2: f64 = u.iter().map(|x| x * x).sum();
    params.kappa * t * u2 * (-t / params.t2_eff).exp()
}

/// min(T₂(1+N_π)^{2/3}, 2T₁).
pub fn t2_eff(base_t2: f64, n_pi_pulses: usize, t1: f64) -> f64 {
    (base_t2 * (1.0 + n_pi_pulses as f64).powf(2.0 / 3.0)).min(2.0 * t1)
}

/// Least-squares κ for samples (‖u‖², t, observed Fisher).
pub fn fit_kappa(samples: &[(f64, f64, f64)], t2_eff: f64) -> f64 {
    let (num, den) = samples.iter().fold((0.0, 0.0), |(n, d), &(u2, t, y)| {
        let x = t * u2 * (-t / t2_eff).exp();
        (n + x * y, d + x * x)
    });
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Indices where the weight has a non-zero row.
pub fn weighted_support(w: &InfoMatrix) -> Vec<usize> {
    (0..4).filter(|&i| (0..4).any(|j| w[(i, j)] != 0.0)).collect()
}

/// Tr(W(J+λI)⁻¹), restricted to the parameters W actually weighs.
pub fn qcrb_wmse(j: &InfoMatrix, w: &InfoMatrix, lambda: f64) -> Result<f64> {
    let idx = weighted_support(w);
    if idx.is_empty() {
        return Ok(0.0);
    }
    let n = idx.len();
    let js = DMatrix::from_fn(n, n, |a, b| j[(idx[a], idx[b])] + if a == b { lambda } else { 0.0 });
    let ws = DMatrix::from_fn(n, n, |a, b| w[(idx[a], idx[b])]);
    let eig = SymmetricEigen::new(js.clone()).eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &e| (l.min(e), h.max(e.abs())));
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(RapidError::SingularInformation { cond });
    }
    let inv = js.cholesky().ok_or(RapidError::SingularInformation { cond })?.inverse();
    Ok((ws * inv).trace())
}

/// Diagonal weight from per-parameter entries.
pub fn diag_weight(d: [f64; 4]) -> InfoMatrix {
    InfoMatrix::from_diagonal(&nalgebra::Vector4::from(d))
}
