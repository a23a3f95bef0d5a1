//! Carrier tracking through frequency hops: a belief filter over the local
//! (phase, frequency) state driven by quantum readouts, and a classical
//! Kalman tracker on demodulated field windows.

use std::f64::consts::PI;

use nalgebra::{Matrix2, RowVector2, Vector2};
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{belief_update, BeliefState};
use crate::error::Result;
use crate::measurement::sample_step_readout;
use crate::rng::StreamId;
use crate::scenario::Scenario;
use crate::sensing::{default_dt, locked_basis, StepControl};
use crate::signal::{sample_field_trajectory, wrap_phase, FieldModel, NoiseState, SignalParams};

const F: usize = 1;
const PHASE: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingConfig {
    /// amplitude, noise, physics and resources; `xi.carrier_offset_fc` is the initial carrier
    pub scenario: Scenario,
    pub hop_steps: Vec<usize>,
    /// MHz, applied at the matching hop step
    pub hop_sizes: Vec<f64>,
    /// random-walk variance of the carrier assumed by every tracker, MHz² per step
    pub process_var_f: f64,
    /// rad² per step
    pub process_var_phase: f64,
    pub prior_var_f: f64,
    pub prior_var_phase: f64,
    /// pulse count of the fixed decoupling baseline
    pub dd_pulses: usize,
    /// pulse counts the adaptive tracker may retune to
    pub pulse_menu: Vec<usize>,
    /// classical demodulation window, µs
    pub classical_window: f64,
    pub n_trials: usize,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        let mut sc = Scenario::default();
        // a quarter cycle of carrier advance per slot, so successive steps see
        // alternating quadratures
        sc.xi = SignalParams::new(60.0, 0.025 + 0.25 / sc.slot(), 0.0, 0.0);
        sc.active = [false, true, true, false];
        sc.weight_diag = [0.0, 1.0, 0.0, 0.0];
        sc.shots_per_step = 20_000;
        Self {
            scenario: sc,
            hop_steps: vec![17, 34],
            hop_sizes: vec![5e-4, -5e-4],
            process_var_f: 1e-9,
            process_var_phase: 1e-4,
            prior_var_f: 1e-8,
            prior_var_phase: 0.25,
            dd_pulses: 8,
            pulse_menu: vec![2, 4, 8],
            classical_window: 160.0,
            n_trials: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tracker {
    Rapid,
    StaticDd,
    Kalman,
}

impl Tracker {
    pub fn name(&self) -> &'static str {
        match self {
            Tracker::Rapid => "rapid",
            Tracker::StaticDd => "static_dd",
            Tracker::Kalman => "kft",
        }
    }
}

/// Carrier and phase at the start of every step, phase continuous across hops.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackTruth {
    pub freq: Vec<f64>,
    pub phase: Vec<f64>,
}

impl TrackingConfig {
    pub fn truth(&self, initial_phase: f64) -> TrackTruth {
        let sc = &self.scenario;
        let mut f = sc.xi.carrier_offset_fc;
        let mut phase = initial_phase;
        let (mut fs, mut ps) = (Vec::new(), Vec::new());
        for n in 0..sc.n_steps {
            for (h, d) in self.hop_steps.iter().zip(&self.hop_sizes) {
                if *h == n {
                    f += d;
                }
            }
            fs.push(f);
            ps.push(wrap_phase(phase));
            phase += 2.0 * PI * f * sc.slot();
        }
        TrackTruth { freq: fs, phase: ps }
    }

    /// State transition over one slot for (phase, frequency).
    pub fn transition(&self) -> Matrix2<f64> {
        Matrix2::new(1.0, 2.0 * PI * self.scenario.slot(), 0.0, 1.0)
    }

    pub fn process_cov(&self) -> Matrix2<f64> {
        Matrix2::new(self.process_var_phase, 0.0, 0.0, self.process_var_f)
    }

    /// CPMG with the pulse interval matched to a half period of `freq`.
    fn matched_step(&self, n_pi: usize, freq: f64) -> StepControl {
        let sc = &self.scenario;
        let t = (n_pi as f64 / (2.0 * freq.abs().max(1e-9))).clamp(sc.constraints.t_min * (n_pi + 1) as f64, 0.95 * sc.slot());
        StepControl { n_pi, ..StepControl::ramsey(t, sc.constraints.s_max) }
    }
}

fn local(sc: &Scenario, freq: f64, phase: f64) -> SignalParams {
    SignalParams::new(sc.xi.amplitude_a, freq, phase, 0.0)
}

/// Belief over (phase, f) stored at the scenario's parameter slots.
fn predict(cfg: &TrackingConfig, b: &BeliefState) -> BeliefState {
    let (f, q) = (cfg.transition(), cfg.process_cov());
    let m = Vector2::new(b.mu_hat[PHASE], b.mu_hat[F]);
    let s = Matrix2::new(b.sigma_hat[(PHASE, PHASE)], b.sigma_hat[(PHASE, F)], b.sigma_hat[(F, PHASE)], b.sigma_hat[(F, F)]);
    let (m2, s2) = (f * m, f * s * f.transpose() + q);
    let mut out = b.clone();
    out.mu_hat[PHASE] = wrap_phase(m2[0]);
    out.mu_hat[F] = m2[1];
    for (i, a) in [PHASE, F].iter().enumerate() {
        for (j, c) in [PHASE, F].iter().enumerate() {
            out.sigma_hat[(*a, *c)] = s2[(i, j)];
        }
    }
    out
}

/// Squared carrier error after each step's update, for one trial.
pub fn track_quantum(cfg: &TrackingConfig, adaptive: bool, truth: &TrackTruth, stream: StreamId) -> Result<Vec<f64>> {
    let sc = &cfg.scenario;
    let mut rng = stream.substep(0).rng();
    let mut prior = [0.0; 4];
    prior[F] = cfg.prior_var_f;
    prior[PHASE] = cfg.prior_var_phase;
    let mut belief = BeliefState::new(local(sc, sc.xi.carrier_offset_fc, sc.xi.phase_phi).to_array(), prior);
    let shots = sc.shots_per_step as f64;
    let mut out = Vec::with_capacity(sc.n_steps);
    for n in 0..sc.n_steps {
        if n > 0 {
            belief = predict(cfg, &belief);
        }
        let est = SignalParams::from_array(belief.mu_hat);
        let step = if adaptive {
            let mut best = (f64::INFINITY, cfg.matched_step(cfg.dd_pulses, est.carrier_offset_fc));
            for &n_pi in &cfg.pulse_menu {
                let base = cfg.matched_step(n_pi, est.carrier_offset_fc);
                let cand = StepControl { beta: locked_basis(&sc.state(&est, 0, &base, true)?), ..base };
                let j = sc.step_cfim(&est, 0, &cand)?;
                let post = belief_update(&belief, &(j * shots), &[0.0; 4]);
                let cost = post.sigma_hat[(F, F)];
                if cost < best.0 {
                    best = (cost, cand);
                }
            }
            best.1
        } else {
            cfg.matched_step(cfg.dd_pulses, sc.xi.carrier_offset_fc)
        };
        let actual = local(sc, truth.freq[n], truth.phase[n]);
        let probs = sc.probs(&actual, 0, &step, true)?;
        let y = sample_step_readout(&probs, step.mean_photons, sc.shots_per_step, &mut rng);
        let (info, score) = sc.step_information(&est, 0, &step, &y)?;
        belief = belief_update(&belief, &(info * shots), &score);
        belief.mu_hat[PHASE] = wrap_phase(belief.mu_hat[PHASE]);
        out.push((belief.mu_hat[F] - truth.freq[n]).powi(2));
    }
    Ok(out)
}

/// Linear Kalman filter over (phase, f) with wrapped phase innovations.
#[derive(Clone, Debug, PartialEq)]
pub struct KalmanTracker {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

impl KalmanTracker {
    pub fn predict(&mut self, f: &Matrix2<f64>, q: &Matrix2<f64>) {
        self.mean = f * self.mean;
        self.cov = f * self.cov * f.transpose() + q;
    }

    pub fn update(&mut self, h: &RowVector2<f64>, z: f64, r: f64) {
        let innov = wrap_phase(z - (h * self.mean)[0]);
        let s = (h * self.cov * h.transpose())[0] + r;
        let k = self.cov * h.transpose() / s;
        self.mean += k * innov;
        self.cov = (Matrix2::identity() - k * h) * self.cov;
        self.cov = (self.cov + self.cov.transpose()) * 0.5;
    }
}

/// Steady-state predicted covariance of the discrete Riccati recursion,
/// by fixed-point iteration.
pub fn riccati_steady_state(f: &Matrix2<f64>, h: &RowVector2<f64>, q: &Matrix2<f64>, r: f64) -> Matrix2<f64> {
    let mut p = *q;
    for _ in 0..100_000 {
        let s = (h * p * h.transpose())[0] + r;
        let k = p * h.transpose() / s;
        let post = (Matrix2::identity() - k * h) * p;
        let next = f * post * f.transpose() + q;
        if (next - p).abs().max() <= 1e-15 * p.abs().max().max(1e-300) {
            return next;
        }
        p = next;
    }
    p
}

/// Filtered covariance matching a steady predicted covariance.
pub fn riccati_filtered(p: &Matrix2<f64>, h: &RowVector2<f64>, r: f64) -> Matrix2<f64> {
    let s = (h * p * h.transpose())[0] + r;
    let k = p * h.transpose() / s;
    (Matrix2::identity() - k * h) * p
}

/// Classical tracker: each window of raw field samples is demodulated at the
/// predicted carrier, and the phase of the result is the measurement. Its
/// noise variance is estimated from the window's own residuals.
pub fn track_classical(cfg: &TrackingConfig, truth: &TrackTruth, stream: StreamId) -> Vec<f64> {
    let sc = &cfg.scenario;
    let mut rng = stream.substep(3).rng();
    let mut noise = NoiseState::new(&sc.noise, &mut rng);
    let (f_mat, q) = (cfg.transition(), cfg.process_cov());
    let mut kf = KalmanTracker {
        mean: Vector2::new(sc.xi.phase_phi, sc.xi.carrier_offset_fc),
        cov: Matrix2::new(cfg.prior_var_phase, 0.0, 0.0, cfg.prior_var_f),
    };
    let w_max = cfg.classical_window.min(sc.slot());
    let mut out = Vec::with_capacity(sc.n_steps);
    for n in 0..sc.n_steps {
        if n > 0 {
            kf.predict(&f_mat, &q);
        }
        let f_hat = kf.mean[1];
        // whole half periods of the predicted carrier, so the image at −2f̂ cancels
        let half = 0.5 / f_hat.abs().max(1e-9);
        let w = if half < w_max { (w_max / half).floor() * half } else { w_max };
        let dt = default_dt(w, sc.noise.tau_c);
        // window field in the local frame: phase at the window start is truth.phase[n]
        let model = FieldModel::single(local(sc, truth.freq[n], truth.phase[n]), sc.noise);
        let samples = sample_field_trajectory(&model, 0, 0.0, w, dt, &mut noise, &mut rng);
        let mut z = C64::new(0.0, 0.0);
        for (k, y) in samples.iter().enumerate() {
            let t = (k as f64 + 0.5) * dt;
            z += C64::from_polar(*y, -2.0 * PI * f_hat * t);
        }
        z *= 2.0 / samples.len() as f64;
        let resid: f64 = samples
            .iter()
            .enumerate()
            .map(|(k, y)| {
                let t = (k as f64 + 0.5) * dt;
                (y - (z * C64::from_polar(1.0, 2.0 * PI * f_hat * t)).re).powi(2)
            })
            .sum::<f64>()
            / samples.len() as f64;
        let r = (2.0 * resid / samples.len() as f64 / z.norm_sqr().max(1e-300)).max(1e-9);
        // demodulated phase ≈ ϑ + πw(f − f̂): linear in (ϑ, f) once f̂ is added back
        let h = RowVector2::new(1.0, PI * w);
        let z_phase = z.arg() + PI * w * f_hat;
        kf.update(&h, z_phase, r);
        kf.mean[0] = wrap_phase(kf.mean[0]);
        out.push((kf.mean[1] - truth.freq[n]).powi(2));
        // noise state continues through the idle part of the slot
        let idle = sc.slot() - w;
        if idle > 0.0 {
            noise.ou = crate::signal::ou_step(noise.ou, idle, &mut rng);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingRow {
    pub step: usize,
    pub method: String,
    pub mse_fc: f64,
    pub hop: bool,
}

/// Per-step mean-square carrier error of one tracker over independent trials.
pub fn tracking_mse(cfg: &TrackingConfig, tracker: Tracker, seed: u64) -> Result<Vec<f64>> {
    let runs: Vec<Vec<f64>> = (0..cfg.n_trials)
        .into_par_iter()
        .map(|i| {
            let stream = StreamId::new(seed, "tracking").trial(i as u64);
            let phase0 = cfg.scenario.xi.phase_phi + cfg.prior_var_phase.sqrt() * stream.substep(2).rng().sample::<f64, _>(StandardNormal);
            let truth = cfg.truth(phase0);
            match tracker {
                Tracker::Rapid => track_quantum(cfg, true, &truth, stream),
                Tracker::StaticDd => track_quantum(cfg, false, &truth, stream),
                Tracker::Kalman => Ok(track_classical(cfg, &truth, stream)),
            }
        })
        .collect::<Result<_>>()?;
    let n = cfg.scenario.n_steps;
    Ok((0..n).map(|k| runs.iter().map(|r| r[k]).sum::<f64>() / runs.len().max(1) as f64).collect())
}

/// Steps after `hop` until the MSE is back within `factor` of its mean over
/// the `window` steps before the hop; None if it never returns.
pub fn reacquisition_steps(mse: &[f64], hop: usize, window: usize, factor: f64) -> Option<usize> {
    let lo = hop.saturating_sub(window);
    if lo == hop {
        return None;
    }
    let pre = mse[lo..hop].iter().sum::<f64>() / (hop - lo) as f64;
    mse[hop..].iter().position(|m| *m <= factor * pre)
}

pub fn write_tracking_csv(path: &std::path::Path, rows: &[TrackingRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truth_is_phase_continuous_across_hops() {
        let cfg = TrackingConfig::default();
        let t = cfg.truth(0.3);
        let slot = cfg.scenario.slot();
        for n in 1..t.phase.len() {
            let expect = wrap_phase(t.phase[n - 1] + 2.0 * PI * t.freq[n - 1] * slot);
            assert!(wrap_phase(t.phase[n] - expect).abs() < 1e-9);
        }
        assert!((t.freq[17] - t.freq[16] - 5e-4).abs() < 1e-15);
    }

    #[test]
    fn reacquisition_counts_from_the_hop() {
        let mse = [1.0, 1.0, 1.0, 9.0, 5.0, 1.5, 1.0];
        assert_eq!(reacquisition_steps(&mse, 3, 3, 2.0), Some(2));
        assert_eq!(reacquisition_steps(&[1.0, 9.0, 9.0], 1, 1, 2.0), None);
    }
}
