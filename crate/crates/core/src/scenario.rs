//! Single-sensor scenario: physics, nominal signal, resources and the
//! per-step quantities every stage consumes (outcome distributions, Fisher
//! information, likelihood scores).

use serde::{Deserialize, Serialize};

use crate::baseline::{ConstraintSet, Protocol};
use crate::error::Result;
use crate::information::{classical_fim, fim_from_derivatives, qfim_from_slds, sld_solve, InfoMatrix, FD_STEPS};
use crate::measurement::{observed_distribution, outcome_probs_fast, StepReadout};
use crate::quantum::{symmetrize, ComplexMat3, DensityMatrix};
use crate::sensing::{closing_pulse, ensemble_state, step_probs, SensorPhysics, StepControl};
use crate::signal::{FieldModel, NoiseConfig, SignalParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub phys: SensorPhysics,
    pub noise: NoiseConfig,
    /// design point ξ₀, also the true signal unless a study overrides it
    pub xi: SignalParams,
    pub n_steps: usize,
    /// readout repetitions of each sensing step
    pub shots_per_step: u64,
    /// decoupling pulses per step
    pub n_pi: usize,
    pub constraints: ConstraintSet,
    /// which of (A, f_c, φ, θ) are unknown
    pub active: [bool; 4],
    /// diagonal of the estimation weight W
    pub weight_diag: [f64; 4],
}

impl Default for Scenario {
    fn default() -> Self {
        let xi = SignalParams::new(10.0, 2e-4, 0.5, 0.0);
        Self {
            phys: SensorPhysics::default(),
            noise: NoiseConfig { sigma_w2: 10.0, sigma_n2: 10.0, tau_c: 1.0 },
            xi,
            n_steps: 50,
            shots_per_step: 1000,
            n_pi: 0,
            constraints: ConstraintSet::default(),
            active: [true, false, true, false],
            weight_diag: [1.0 / (xi.amplitude_a * xi.amplitude_a), 0.0, 1.0, 0.0],
        }
    }
}

/// Everything the optimizers and filters need from one sensing step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepEval {
    /// observable distribution under H₁ at the evaluation point
    pub q1: [f64; 4],
    /// observable distribution under H₀
    pub q0: [f64; 4],
    /// per-shot quantum Fisher information of the pre-readout state
    pub qfim: InfoMatrix,
}

impl StepEval {
    /// Expected log-likelihood ratio of one shot, KL(q₁‖q₀).
    pub fn kl(&self) -> f64 {
        self.q1
            .iter()
            .zip(&self.q0)
            .filter(|(a, _)| **a > 0.0)
            .map(|(a, b)| if *b > 0.0 { a * (a / b).ln() } else { f64::INFINITY })
            .sum()
    }
}

/// Cached pre-readout states of one step; readout settings can change
/// without re-propagating.
#[derive(Clone, Debug, PartialEq)]
pub struct StepStates {
    pub rho1: DensityMatrix,
    pub rho0: DensityMatrix,
    pub qfim: InfoMatrix,
}

impl StepStates {
    pub fn eval(&self, eta: f64, ctrl: &StepControl) -> StepEval {
        let u = closing_pulse(ctrl.beta);
        let obs = |r: &DensityMatrix| observed_distribution(&outcome_probs_fast(r, eta, &u), ctrl.mean_photons);
        StepEval { q1: obs(&self.rho1), q0: obs(&self.rho0), qfim: self.qfim }
    }
}

impl Scenario {
    pub fn weight(&self) -> InfoMatrix {
        crate::information::diag_weight(self.weight_diag)
    }

    /// Each sensing step occupies a fixed slot of length T_tot/N_s.
    pub fn slot(&self) -> f64 {
        self.constraints.t_tot / self.n_steps as f64
    }

    pub fn step_start(&self, n: usize) -> f64 {
        n as f64 * self.slot()
    }

    pub fn field(&self, xi: &SignalParams, present: bool) -> FieldModel {
        let mut f = FieldModel::single(*xi, self.noise);
        f.signal_present = present;
        f
    }

    /// Finite-difference steps restricted to the active parameters. The
    /// carrier step is shrunk so the phase it induces over the horizon stays small.
    pub fn fd_steps(&self) -> [f64; 4] {
        let mut h = FD_STEPS;
        h[1] = h[1].min(1e-3 / (2.0 * std::f64::consts::PI * self.constraints.t_tot));
        for i in 0..4 {
            if !self.active[i] {
                h[i] = 0.0;
            }
        }
        h
    }

    pub fn probs(&self, xi: &SignalParams, n: usize, ctrl: &StepControl, present: bool) -> Result<[f64; 3]> {
        step_probs(&self.phys, &self.field(xi, present), 0, self.step_start(n), ctrl, 0.0)
    }

    pub fn observed(&self, xi: &SignalParams, n: usize, ctrl: &StepControl, present: bool) -> Result<[f64; 4]> {
        Ok(observed_distribution(&self.probs(xi, n, ctrl, present)?, ctrl.mean_photons))
    }

    pub fn state(&self, xi: &SignalParams, n: usize, ctrl: &StepControl, present: bool) -> Result<DensityMatrix> {
        ensemble_state(&self.phys, &self.field(xi, present), 0, self.step_start(n), ctrl, 0.0)
    }

    /// Pre-readout states under H₁ and H₀ plus the per-shot QFIM.
    pub fn step_states(&self, xi: &SignalParams, n: usize, ctrl: &StepControl) -> Result<StepStates> {
        let rho1 = self.state(xi, n, ctrl, true)?;
        let rho0 = self.state(xi, n, ctrl, false)?;
        let h = self.fd_steps();
        let mut slds: [Option<ComplexMat3>; 4] = [None; 4];
        for i in 0..4 {
            if h[i] == 0.0 {
                continue;
            }
            let x = xi.to_array()[i];
            let up = self.state(&xi.with(i, x + h[i]), n, ctrl, true)?;
            let dn = self.state(&xi.with(i, x - h[i]), n, ctrl, true)?;
            let drho = symmetrize(&(up.mat - dn.mat).unscale(2.0 * h[i]));
            slds[i] = Some(sld_solve(&rho1, &drho));
        }
        let qfim = qfim_from_slds(&rho1, &slds);
        Ok(StepStates { rho1, rho0, qfim })
    }

    pub fn step_eval(&self, xi: &SignalParams, n: usize, ctrl: &StepControl) -> Result<StepEval> {
        Ok(self.step_states(xi, n, ctrl)?.eval(self.phys.eta, ctrl))
    }

    /// Per-shot classical Fisher information of the observable outcome.
    pub fn step_cfim(&self, xi: &SignalParams, n: usize, ctrl: &StepControl) -> Result<InfoMatrix> {
        classical_fim(|x| Ok(self.observed(x, n, ctrl, true)?.to_vec()), xi, &self.fd_steps())
    }

    /// Per-shot Fisher information and the score of a step readout at `xi`.
    pub fn step_information(&self, xi: &SignalParams, n: usize, ctrl: &StepControl, readout: &StepReadout) -> Result<(InfoMatrix, [f64; 4])> {
        let h = self.fd_steps();
        let q = self.observed(xi, n, ctrl, true)?;
        let mut derivs: [Option<Vec<f64>>; 4] = Default::default();
        let mut score = [0.0; 4];
        let counts = [readout.counts[0], readout.counts[1], readout.counts[2], readout.dark];
        for i in 0..4 {
            if h[i] == 0.0 {
                continue;
            }
            let x = xi.to_array()[i];
            let up = self.observed(&xi.with(i, x + h[i]), n, ctrl, true)?;
            let dn = self.observed(&xi.with(i, x - h[i]), n, ctrl, true)?;
            let d: Vec<f64> = up.iter().zip(&dn).map(|(a, b)| (a - b) / (2.0 * h[i])).collect();
            score[i] = counts.iter().zip(&d).zip(&q).filter(|(_, p)| **p > 1e-300).map(|((c, dk), p)| *c as f64 * dk / p).sum();
            derivs[i] = Some(d);
        }
        Ok((fim_from_derivatives(&q, &derivs), score))
    }

    /// Σ_n shots·J_n for a protocol at `xi`.
    pub fn protocol_qfim(&self, xi: &SignalParams, protocol: &Protocol) -> Result<InfoMatrix> {
        let mut j = InfoMatrix::zeros();
        for (n, s) in protocol.steps.iter().enumerate() {
            j += self.step_eval(xi, n, s)?.qfim * self.shots_per_step as f64;
        }
        Ok(j)
    }
}
