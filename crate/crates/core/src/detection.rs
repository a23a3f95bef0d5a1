//! Detection and estimation studies: the generalized likelihood-ratio
//! statistic, ROC curves, SNR-at-target search, RMSE sweeps and Bayesian risk.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::Protocol;
use crate::error::{RapidError, Result};
use crate::measurement::{step_log_likelihood, StepReadout};
use crate::rapid::{run_episode, Controller, EpisodeTrace, RapidEnv};
use crate::rng::StreamId;
use crate::scenario::Scenario;
use crate::sensing::{default_dt, StepControl};
use crate::signal::{amplitude_for_snr, sample_field_trajectory, wrap_phase, NoiseState, SignalParams};

/// Reported alongside every detection result.
pub const DESK_P_FA: f64 = 1e-2;
pub const DESK_H0_TRIALS: usize = 10_000;

/// A sensing strategy under test: an executor plus its controller.
#[derive(Clone, Debug)]
pub struct Detector<'a> {
    pub name: String,
    pub env: RapidEnv,
    pub ctrl: Controller<'a>,
}

impl Detector<'static> {
    /// Fixed interrogation time, full photon budget, fixed readout axis.
    pub fn static_design(sc: &Scenario, duration: f64) -> Self {
        let base = Protocol::fixed(sc.n_steps, duration, sc.n_pi, sc.constraints.s_max);
        let mut env = RapidEnv::new(sc.clone(), base);
        env.lock_basis = false;
        Self { name: "static".into(), env, ctrl: Controller::Frozen }
    }

    /// Tuned baseline executed with the belief-locked readout axis.
    pub fn rapid_baseline(sc: &Scenario, base: Protocol) -> Self {
        Self { name: "rapid".into(), env: RapidEnv::new(sc.clone(), base), ctrl: Controller::Frozen }
    }
}

/// Σ_n [log p(y_n | H₁, ξ̂) − log p(y_n | H₀)] with ξ̂ the final belief mean.
/// A zero-probability outcome under H₁ yields −∞ (an H₀ decision).
pub fn log_lr_statistic(sc: &Scenario, trace: &EpisodeTrace) -> Result<f64> {
    let xi_hat = SignalParams::from_array(trace.final_belief().mu_hat);
    let mut total = 0.0;
    for (n, (step, y)) in trace.executed.steps.iter().zip(&trace.readouts).enumerate() {
        let l1 = step_log_likelihood(y, &sc.probs(&xi_hat, n, step, true)?, step.mean_photons);
        let l0 = step_log_likelihood(y, &sc.probs(&xi_hat, n, step, false)?, step.mean_photons);
        if l1 == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        total += l1 - l0;
    }
    Ok(if total.is_nan() { f64::NEG_INFINITY } else { total })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialOutcome {
    pub statistic: f64,
    pub truth: SignalParams,
    pub estimate: SignalParams,
}

impl TrialOutcome {
    /// (ξ̂ − ξ) with the phase error wrapped.
    pub fn error(&self) -> [f64; 4] {
        let (e, t) = (self.estimate.to_array(), self.truth.to_array());
        let mut d: [f64; 4] = std::array::from_fn(|i| e[i] - t[i]);
        d[2] = wrap_phase(d[2]);
        d
    }

    pub fn weighted_sq_error(&self, w: &[f64; 4]) -> f64 {
        self.error().iter().zip(w).map(|(d, wi)| wi * d * d).sum()
    }
}

/// One episode at the given amplitude (0 under H₀). Trial `i` of a given
/// `tag` sees the same phase draw and readout noise for every detector.
pub fn run_trial(det: &Detector, amplitude: f64, tag: &str, seed: u64, i: usize) -> Result<TrialOutcome> {
    let stream = StreamId::new(seed, tag).trial(i as u64);
    let truth = det.env.sample_truth(&mut stream.substep(2).rng()).with(0, amplitude);
    let trace = run_episode(&det.env, det.ctrl, &truth, stream)?;
    Ok(TrialOutcome {
        statistic: log_lr_statistic(&det.env.scenario, &trace)?,
        truth,
        estimate: SignalParams::from_array(trace.final_belief().mu_hat),
    })
}

pub fn run_trials(det: &Detector, amplitude: f64, tag: &str, seed: u64, n: usize) -> Result<Vec<TrialOutcome>> {
    (0..n).into_par_iter().map(|i| run_trial(det, amplitude, tag, seed, i)).collect()
}

fn statistics(trials: &[TrialOutcome]) -> Vec<f64> {
    trials.iter().map(|t| t.statistic).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// (p_fa, p_d), sorted by increasing p_fa
    pub points: Vec<(f64, f64)>,
    pub thresholds: Vec<f64>,
    pub n_h0: usize,
    pub n_h1: usize,
}

impl RocCurve {
    /// Decide H₁ when the statistic is ≥ the threshold; one point per distinct value.
    pub fn from_statistics(h0: &[f64], h1: &[f64]) -> Self {
        let mut thr: Vec<f64> = h0.iter().chain(h1).copied().collect();
        thr.sort_by(|a, b| b.total_cmp(a));
        thr.dedup();
        let frac = |v: &[f64], t: f64| v.iter().filter(|x| **x >= t).count() as f64 / v.len().max(1) as f64;
        let mut points = vec![(0.0, 0.0)];
        let mut thresholds = vec![f64::INFINITY];
        for t in thr {
            points.push((frac(h0, t), frac(h1, t)));
            thresholds.push(t);
        }
        points.push((1.0, 1.0));
        thresholds.push(f64::NEG_INFINITY);
        Self { points, thresholds, n_h0: h0.len(), n_h1: h1.len() }
    }

    pub fn auc(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1].0 - w[0].0) * 0.5 * (w[1].1 + w[0].1)).sum()
    }
}

/// Threshold whose empirical false-alarm rate (statistic strictly above it)
/// does not exceed `p_fa`.
pub fn threshold_for_pfa(h0: &[f64], p_fa: f64) -> f64 {
    let mut s = h0.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let k = ((p_fa * s.len() as f64).floor() as usize).min(s.len() - 1);
    s[k]
}

pub fn detection_rate(h1: &[f64], threshold: f64) -> f64 {
    h1.iter().filter(|x| **x > threshold).count() as f64 / h1.len().max(1) as f64
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(p_hat: f64, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let z2 = z * z;
    let centre = (p_hat + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p_hat * (1.0 - p_hat) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub snr_db: f64,
    pub p_d: f64,
    /// Wilson lower bound at the conservative (higher) threshold
    pub p_d_lo: f64,
    /// Wilson upper bound at the liberal (lower) threshold
    pub p_d_hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    pub method: String,
    pub snr_db: f64,
    /// 95% interval; infinite when a bound leaves the bracket
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub threshold: f64,
    pub p_fa: f64,
    pub n_h0: usize,
    pub n_h1: usize,
    pub evaluated: Vec<SensitivityPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConfig {
    pub lo_db: f64,
    pub hi_db: f64,
    pub resolution_db: f64,
    pub p_d_target: f64,
    pub p_fa: f64,
    pub n_h0: usize,
    pub n_h1: usize,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self { lo_db: -10.0, hi_db: 20.0, resolution_db: 0.5, p_d_target: 0.9, p_fa: DESK_P_FA, n_h0: DESK_H0_TRIALS, n_h1: 400 }
    }
}

/// Smallest grid index in [lo, hi] satisfying a monotone predicate.
fn first_true(lo: i64, hi: i64, mut pred: impl FnMut(i64) -> Result<bool>) -> Result<Option<i64>> {
    if pred(lo)? {
        return Ok(Some(lo));
    }
    if !pred(hi)? {
        return Ok(None);
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > 1 {
        let m = (a + b) / 2;
        if pred(m)? {
            b = m;
        } else {
            a = m;
        }
    }
    Ok(Some(b))
}

/// SNR at which P_D reaches the target at the threshold giving the target
/// P_FA, found by bisection on a fixed dB grid. H₁ trials share random
/// numbers across SNR values, so the empirical P_D is monotone in practice.
pub fn snr_at_target(det: &Detector, cfg: &SensitivityConfig, seed: u64) -> Result<Sensitivity> {
    let h0 = statistics(&run_trials(det, 0.0, "detect-h0", seed, cfg.n_h0)?);
    snr_at_target_with_h0(det, &h0, cfg, seed)
}

pub fn snr_at_target_with_h0(det: &Detector, h0: &[f64], cfg: &SensitivityConfig, seed: u64) -> Result<Sensitivity> {
    let threshold = threshold_for_pfa(h0, cfg.p_fa);
    // order-statistic band of the threshold
    let k = cfg.p_fa * h0.len() as f64;
    let spread = 1.96 * k.sqrt() / h0.len() as f64;
    let thr_hi = threshold_for_pfa(h0, (cfg.p_fa - spread).max(0.0));
    let thr_lo = threshold_for_pfa(h0, (cfg.p_fa + spread).min(1.0));
    let steps = ((cfg.hi_db - cfg.lo_db) / cfg.resolution_db).round() as i64;
    let snr_of = |i: i64| cfg.lo_db + i as f64 * cfg.resolution_db;
    let mut memo: BTreeMap<i64, SensitivityPoint> = BTreeMap::new();
    let mut eval = |i: i64| -> Result<SensitivityPoint> {
        if let Some(p) = memo.get(&i) {
            return Ok(p.clone());
        }
        let a = amplitude_for_snr(snr_of(i), &det.env.scenario.noise);
        let h1 = statistics(&run_trials(det, a, "detect-h1", seed, cfg.n_h1)?);
        let p = SensitivityPoint {
            snr_db: snr_of(i),
            p_d: detection_rate(&h1, threshold),
            p_d_lo: wilson_interval(detection_rate(&h1, thr_hi), h1.len(), 1.96).0,
            p_d_hi: wilson_interval(detection_rate(&h1, thr_lo), h1.len(), 1.96).1,
        };
        memo.insert(i, p.clone());
        Ok(p)
    };
    let t = cfg.p_d_target;
    let centre = first_true(0, steps, |i| Ok(eval(i)?.p_d >= t))?;
    let Some(centre) = centre else {
        let (lo, hi) = (eval(0)?, eval(steps)?);
        return Err(RapidError::TargetUnreachable { p_lo: lo.p_d, p_hi: hi.p_d });
    };
    let upper = first_true(0, steps, |i| Ok(eval(i)?.p_d_lo >= t))?;
    let lower = first_true(0, steps, |i| Ok(eval(i)?.p_d_hi >= t))?;
    let ci_hi = upper.map_or(f64::INFINITY, snr_of);
    let ci_lo = match lower {
        Some(0) => f64::NEG_INFINITY,
        Some(i) => snr_of(i - 1),
        None => snr_of(steps),
    };
    let ci_lo = if centre == 0 { f64::NEG_INFINITY } else { ci_lo };
    Ok(Sensitivity {
        method: det.name.clone(),
        snr_db: snr_of(centre),
        ci_lo,
        ci_hi,
        threshold,
        p_fa: cfg.p_fa,
        n_h0: h0.len(),
        n_h1: cfg.n_h1,
        evaluated: memo.into_values().collect(),
    })
}

/// Root-mean-square errors of one method at one SNR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmseRow {
    pub method: String,
    pub snr_db: f64,
    pub rmse_amplitude: f64,
    pub rmse_phase: f64,
    /// √E[(ξ̂−ξ)ᵀW(ξ̂−ξ)]
    pub rmse_weighted: f64,
    /// standard error of the weighted mean-square error, propagated to the RMSE
    pub se_weighted: f64,
    /// √Tr(W(J + Σ₀⁻¹)⁻¹) over the active parameters
    pub floor: f64,
    pub n_trials: usize,
}

pub fn rmse_row(method: &str, snr_db: f64, trials: &[TrialOutcome], w: &[f64; 4], floor: f64) -> RmseRow {
    let n = trials.len() as f64;
    let se: Vec<f64> = trials.iter().map(|t| t.weighted_sq_error(w)).collect();
    let mse = se.iter().sum::<f64>() / n;
    let var = se.iter().map(|x| (x - mse).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let rmse = mse.sqrt();
    let comp = |i: usize| (trials.iter().map(|t| t.error()[i].powi(2)).sum::<f64>() / n).sqrt();
    RmseRow {
        method: method.into(),
        snr_db,
        rmse_amplitude: comp(0),
        rmse_phase: comp(2),
        rmse_weighted: rmse,
        se_weighted: if rmse > 0.0 { (var / n).sqrt() / (2.0 * rmse) } else { 0.0 },
        floor,
        n_trials: trials.len(),
    }
}

/// Bayesian information bound for a belief-mean estimator: protocol QFIM at
/// the truth plus the prior precision, on the active parameters.
pub fn bayesian_floor(det: &Detector, truth: &SignalParams) -> Result<f64> {
    let sc = &det.env.scenario;
    let j = sc.protocol_qfim(truth, &det.env.base)?;
    let idx: Vec<usize> = (0..4).filter(|&i| sc.active[i] && det.env.prior_var[i] > 0.0).collect();
    let k = idx.len();
    let m = nalgebra::DMatrix::from_fn(k, k, |r, c| {
        j[(idx[r], idx[c])] + if r == c { 1.0 / det.env.prior_var[idx[r]] } else { 0.0 }
    });
    let inv = m.try_inverse().ok_or(RapidError::SingularInformation { cond: f64::INFINITY })?;
    Ok((0..k).map(|r| sc.weight_diag[idx[r]] * inv[(r, r)]).sum::<f64>().sqrt())
}

/// Least-squares quadrature fit of a known-frequency tone to raw field
/// samples taken over the same interrogation windows as `windows`.
pub fn matched_filter_estimate(sc: &Scenario, windows: &Protocol, truth: &SignalParams, stream: StreamId) -> SignalParams {
    let field = sc.field(truth, truth.amplitude_a != 0.0);
    let omega = 2.0 * std::f64::consts::PI * truth.carrier_offset_fc;
    let mut rng = stream.substep(3).rng();
    let mut state = NoiseState::new(&sc.noise, &mut rng);
    let mut gram = Matrix2::<f64>::zeros();
    let mut proj = Vector2::<f64>::zeros();
    for (n, step) in windows.steps.iter().enumerate() {
        let t0 = sc.step_start(n);
        let dt = default_dt(step.duration, sc.noise.tau_c);
        let samples = sample_field_trajectory(&field, 0, t0, step.duration, dt, &mut state, &mut rng);
        for (k, y) in samples.iter().enumerate() {
            let t = t0 + (k as f64 + 0.5) * dt;
            let basis = Vector2::new((omega * t).cos(), (omega * t).sin());
            gram += basis * basis.transpose();
            proj += basis * *y;
        }
    }
    let coef = gram.try_inverse().map(|g| g * proj).unwrap_or_else(Vector2::zeros);
    let amp = coef[0].hypot(coef[1]);
    let phase = if amp > 0.0 { (-coef[1]).atan2(coef[0]) } else { 0.0 };
    truth.with(0, amp).with(2, phase)
}

/// Total log-likelihood of a recorded episode under H₁ at `xi`.
pub fn episode_log_likelihood(sc: &Scenario, steps: &[StepControl], readouts: &[StepReadout], xi: &SignalParams) -> Result<f64> {
    let mut ll = 0.0;
    for (n, (c, y)) in steps.iter().zip(readouts).enumerate() {
        ll += step_log_likelihood(y, &sc.probs(xi, n, c, true)?, c.mean_photons);
    }
    Ok(ll)
}

/// Maximum-likelihood estimate of the active parameters by Fisher scoring
/// with step halving, started from `init`.
pub fn fisher_scoring(sc: &Scenario, steps: &[StepControl], readouts: &[StepReadout], init: &SignalParams, iterations: usize) -> Result<SignalParams> {
    let idx: Vec<usize> = (0..4).filter(|&i| sc.active[i]).collect();
    let k = idx.len();
    let mut xi = *init;
    let mut ll = episode_log_likelihood(sc, steps, readouts, &xi)?;
    for _ in 0..iterations {
        let mut info = nalgebra::DMatrix::<f64>::zeros(k, k);
        let mut score = nalgebra::DVector::<f64>::zeros(k);
        for (n, (c, y)) in steps.iter().zip(readouts).enumerate() {
            let (j, s) = sc.step_information(&xi, n, c, y)?;
            let shots = y.shots() as f64;
            for r in 0..k {
                score[r] += s[idx[r]];
                for q in 0..k {
                    info[(r, q)] += shots * j[(idx[r], idx[q])];
                }
            }
        }
        let ridge = 1e-9 * info.diagonal().amax().max(1e-300);
        let Some(inv) = (info + nalgebra::DMatrix::identity(k, k) * ridge).try_inverse() else { break };
        let delta = inv * score;
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..8 {
            let mut x = xi.to_array();
            for r in 0..k {
                x[idx[r]] += step * delta[r];
            }
            let cand = SignalParams::from_array(x);
            let l = episode_log_likelihood(sc, steps, readouts, &cand)?;
            if l >= ll {
                moved = (l - ll) > 1e-10 * ll.abs().max(1.0);
                xi = cand;
                ll = l;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    if xi.amplitude_a < 0.0 {
        xi = xi.with(0, -xi.amplitude_a).with(2, xi.phase_phi + std::f64::consts::PI);
    }
    Ok(xi.with(2, wrap_phase(xi.phase_phi)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    /// −E[Λ] under H₁ (lower is better)
    pub detection_term: f64,
    pub detection_se: f64,
    /// E[(ξ̂−ξ)ᵀW(ξ̂−ξ)]
    pub estimation_term: f64,
    pub estimation_se: f64,
    pub alpha: f64,
    pub beta: f64,
    pub total: f64,
    pub total_se: f64,
}

/// Nested Monte-Carlo risk: `n_outer` truths from the prior, `n_inner`
/// readout realizations each.
pub fn bayesian_risk(det: &Detector, n_outer: usize, n_inner: usize, alpha: f64, beta: f64, seed: u64) -> Result<RiskReport> {
    let w = det.env.scenario.weight_diag;
    let per_truth: Vec<(f64, f64)> = (0..n_outer)
        .into_par_iter()
        .map(|o| -> Result<(f64, f64)> {
            let truth = det.env.sample_truth(&mut StreamId::new(seed, "risk-truth").trial(o as u64).rng());
            let (mut d, mut e) = (0.0, 0.0);
            for i in 0..n_inner {
                let stream = StreamId::new(seed, "risk").trial((o * n_inner + i) as u64);
                let trace = run_episode(&det.env, det.ctrl, &truth, stream)?;
                let out = TrialOutcome {
                    statistic: log_lr_statistic(&det.env.scenario, &trace)?,
                    truth,
                    estimate: SignalParams::from_array(trace.final_belief().mu_hat),
                };
                d -= out.statistic.max(-1e12);
                e += out.weighted_sq_error(&w);
            }
            Ok((d / n_inner as f64, e / n_inner as f64))
        })
        .collect::<Result<_>>()?;
    let n = per_truth.len() as f64;
    let mean_se = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / n;
        let s2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        (m, (s2 / n).sqrt())
    };
    let det_v: Vec<f64> = per_truth.iter().map(|p| p.0).collect();
    let est_v: Vec<f64> = per_truth.iter().map(|p| p.1).collect();
    let tot_v: Vec<f64> = per_truth.iter().map(|p| alpha * p.0 + beta * p.1).collect();
    let (dm, ds) = mean_se(&det_v);
    let (em, es) = mean_se(&est_v);
    let (_, ts) = mean_se(&tot_v);
    Ok(RiskReport {
        detection_term: dm,
        detection_se: ds,
        estimation_term: em,
        estimation_se: es,
        alpha,
        beta,
        total: alpha * dm + beta * em,
        total_se: ts,
    })
}
