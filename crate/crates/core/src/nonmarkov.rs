//! Coloured-noise study: Ramsey, CPMG-8 and a per-noise-level tuned design
//! across correlation times, plus the rank statistics used to read it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::baseline::Protocol;
use crate::error::Result;
use crate::information::InfoMatrix;
use crate::rapid::{run_episode, Controller, RapidEnv};
use crate::rng::StreamId;
use crate::scenario::Scenario;
use crate::sensing::{locked_basis, StepControl};
use crate::signal::{wrap_phase, NoiseConfig, SignalParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonMarkovConfig {
    /// τ_c is set per point; the rest of `noise` is kept
    pub scenario: Scenario,
    /// τ_c / T₂ values
    pub tau_ratios: Vec<f64>,
    pub ramsey_duration: f64,
    pub cpmg_pulses: usize,
    pub cpmg_duration: f64,
    /// pulse counts the tuned design may choose from
    pub pulse_menu: Vec<usize>,
    /// candidate interrogation times, µs
    pub duration_grid: Vec<f64>,
    pub phase_prior_var: f64,
    pub n_trials: usize,
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1).max(1) as f64)).collect()
}

impl Default for NonMarkovConfig {
    fn default() -> Self {
        let mut sc = Scenario::default();
        // A tone whose half period fits one CPMG-8 pulse interval. A single
        // readout quadrature cannot tell φ from its mirror image about the
        // design's filter phase; the prior sits between the mirror points of
        // both fixed designs.
        sc.xi = SignalParams::new(150.0, 0.025, 3.0 * std::f64::consts::PI / 8.0, 0.0);
        sc.noise = NoiseConfig { sigma_w2: 0.0, sigma_n2: 6.5e6, tau_c: 1.0 };
        sc.active = [false, false, true, false];
        sc.weight_diag = [0.0, 0.0, 1.0, 0.0];
        sc.shots_per_step = 160_000;
        let slot = sc.slot();
        Self {
            scenario: sc,
            tau_ratios: log_grid(0.01, 5.0, 12),
            ramsey_duration: 50.0,
            cpmg_pulses: 8,
            cpmg_duration: 160.0,
            pulse_menu: vec![0, 1, 2, 4, 8, 16],
            duration_grid: log_grid(2.0, 0.95 * slot, 32),
            phase_prior_var: 0.09,
            n_trials: 200,
        }
    }
}

impl NonMarkovConfig {
    pub fn at_ratio(&self, ratio: f64) -> Scenario {
        let mut sc = self.scenario.clone();
        sc.noise.tau_c = ratio * sc.phys.t2;
        sc
    }

    /// Executor for a repeated step; every method closes on the belief-locked
    /// axis so only the timing differs between them.
    pub fn env(&self, sc: &Scenario, step: StepControl) -> RapidEnv {
        let mut env = RapidEnv::new(sc.clone(), Protocol { steps: vec![step; sc.n_steps] });
        env.prior_var[2] = self.phase_prior_var;
        env
    }
}

/// Posterior weighted trace Tr(W(Σ₀⁻¹ + N_s·shots·J)⁻¹) of repeating `step`,
/// with J the readout Fisher information at the locked axis.
pub fn design_cost(sc: &Scenario, prior_var: &[f64; 4], step: &StepControl) -> Result<f64> {
    let xi = sc.xi;
    let locked = StepControl { beta: locked_basis(&sc.state(&xi, 0, step, true)?), ..*step };
    let j = sc.step_cfim(&xi, 0, &locked)?;
    let mut precision = j * (sc.n_steps as f64 * sc.shots_per_step as f64);
    for i in 0..4 {
        if prior_var[i] > 0.0 {
            precision[(i, i)] += 1.0 / prior_var[i];
        } else {
            precision[(i, i)] = 1.0;
        }
    }
    let cov = precision.try_inverse().unwrap_or_else(InfoMatrix::identity);
    let mut w = sc.weight();
    for i in 0..4 {
        if prior_var[i] == 0.0 {
            w[(i, i)] = 0.0;
        }
    }
    Ok((w * cov).trace())
}

/// Exhaustive search of the single-step design over pulse count and duration.
pub fn tune_design(cfg: &NonMarkovConfig, sc: &Scenario) -> Result<StepControl> {
    let prior = cfg.env(sc, StepControl::ramsey(cfg.ramsey_duration, sc.constraints.s_max)).prior_var;
    let s = sc.constraints.s_max;
    let mut best = (f64::INFINITY, StepControl::ramsey(cfg.ramsey_duration, s));
    for &n_pi in &cfg.pulse_menu {
        for &t in &cfg.duration_grid {
            if n_pi > 0 && t / ((n_pi + 1) as f64) < sc.constraints.t_min {
                continue;
            }
            let step = StepControl { n_pi, ..StepControl::ramsey(t, s) };
            let c = design_cost(sc, &prior, &step)?;
            if c < best.0 {
                best = (c, step);
            }
        }
    }
    Ok(best.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonMarkovRow {
    pub tau_ratio: f64,
    pub method: String,
    pub rmse: f64,
    pub rmse_se: f64,
    /// interrogation time over T₂
    pub duration_ratio: f64,
    pub n_pi: usize,
}

fn weighted_rmse(env: &RapidEnv, ctrl: Controller, n_trials: usize, seed: u64, tag: &str) -> Result<(f64, f64)> {
    let w = env.scenario.weight_diag;
    let sq: Vec<f64> = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let stream = StreamId::new(seed, tag).trial(i as u64);
            let truth = env.sample_truth(&mut stream.substep(2).rng());
            let tr = run_episode(env, ctrl, &truth, stream)?;
            let est = tr.final_belief().mu_hat;
            let t = truth.to_array();
            let mut e2 = 0.0;
            for k in 0..4 {
                let d = if k == 2 { wrap_phase(est[k] - t[k]) } else { est[k] - t[k] };
                e2 += w[k] * d * d;
            }
            Ok(e2)
        })
        .collect::<Result<_>>()?;
    let n = sq.len().max(1) as f64;
    let mse = sq.iter().sum::<f64>() / n;
    let var = sq.iter().map(|e| (e - mse).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let rmse = mse.sqrt();
    Ok((rmse, if rmse > 0.0 { (var / n).sqrt() / (2.0 * rmse) } else { 0.0 }))
}

/// Every method at every correlation time. Trials share truth and readout
/// streams across methods at a given point.
pub fn run_nonmarkov(cfg: &NonMarkovConfig, seed: u64) -> Result<Vec<NonMarkovRow>> {
    let mut rows = Vec::new();
    for (p, &ratio) in cfg.tau_ratios.iter().enumerate() {
        let sc = cfg.at_ratio(ratio);
        let s = sc.constraints.s_max;
        let tuned = tune_design(cfg, &sc)?;
        let designs = [
            ("ramsey", StepControl::ramsey(cfg.ramsey_duration, s)),
            ("cpmg8", StepControl { n_pi: cfg.cpmg_pulses, ..StepControl::ramsey(cfg.cpmg_duration, s) }),
            ("rapid", tuned),
        ];
        let tag = format!("nonmarkov-{p}");
        for (name, step) in designs {
            let env = cfg.env(&sc, step);
            let (rmse, se) = weighted_rmse(&env, Controller::Frozen, cfg.n_trials, seed, &tag)?;
            rows.push(NonMarkovRow {
                tau_ratio: ratio,
                method: name.into(),
                rmse,
                rmse_se: se,
                duration_ratio: step.duration / sc.phys.t2,
                n_pi: step.n_pi,
            });
        }
    }
    Ok(rows)
}

/// max/min RMSE of one method across the sweep.
pub fn flatness(rows: &[NonMarkovRow], method: &str) -> f64 {
    let v: Vec<f64> = rows.iter().filter(|r| r.method == method).map(|r| r.rmse).collect();
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    hi / lo
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (average ranks for ties) with the two-sided
/// p-value of the t approximation.
pub fn spearman(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let sxy: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 || n < 3.0 {
        return (0.0, 1.0);
    }
    let rho = sxy / (sxx * syy).sqrt();
    if rho.abs() >= 1.0 {
        return (rho.signum(), 0.0);
    }
    let t = rho * ((n - 2.0) / (1.0 - rho * rho)).sqrt();
    let p = StudentsT::new(0.0, 1.0, n - 2.0).map(|d| 2.0 * (1.0 - d.cdf(t.abs()))).unwrap_or(1.0);
    (rho, p)
}

pub fn write_nonmarkov_csv(path: &std::path::Path, rows: &[NonMarkovRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
