//! Detection/estimation trade-off: one tuned design per weight α against
//! the fixed static design, at a fixed SNR.

use serde::{Deserialize, Serialize};

use crate::baseline::{psngd_run, ObjectiveWeights, Protocol, Stage1Config};
use crate::detection::{run_trials, threshold_for_pfa, Detector, TrialOutcome, DESK_P_FA};
use crate::error::Result;
use crate::scenario::Scenario;
use crate::signal::amplitude_for_snr;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoConfig {
    pub snr_db: f64,
    pub alphas: Vec<f64>,
    pub p_fa: f64,
    pub n_h0: usize,
    pub n_h1: usize,
    pub static_duration: f64,
    pub stage1: Stage1Config,
}

impl Default for ParetoConfig {
    fn default() -> Self {
        Self {
            snr_db: -2.0,
            alphas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            p_fa: DESK_P_FA,
            n_h0: 2000,
            n_h1: 400,
            static_duration: 50.0,
            stage1: Stage1Config::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub method: String,
    pub alpha: f64,
    pub p_d: f64,
    pub rmse: f64,
    pub threshold: f64,
    /// rapid minus static, paired over H₁ trials
    pub p_d_gain: f64,
    pub p_d_gain_se: f64,
    /// static minus rapid weighted mean-square error, paired
    pub mse_gain: f64,
    pub mse_gain_se: f64,
}

impl ParetoPoint {
    /// Neither coordinate is worse than static beyond two paired standard errors.
    pub fn weakly_dominates_static(&self) -> bool {
        self.p_d_gain >= -2.0 * self.p_d_gain_se && self.mse_gain >= -2.0 * self.mse_gain_se
    }
}

/// Scenario at the sweep SNR. Fixing the SNR fixes the amplitude, so only
/// the phase is estimated.
pub fn pareto_scenario(base: &Scenario, snr_db: f64) -> Scenario {
    let mut sc = base.clone();
    sc.xi = sc.xi.with(0, amplitude_for_snr(snr_db, &sc.noise));
    sc.active = [false, false, true, false];
    sc.weight_diag = [0.0, 0.0, 1.0, 0.0];
    sc
}

struct Measured {
    threshold: f64,
    detected: Vec<f64>,
    sq_err: Vec<f64>,
}

fn measure(det: &Detector, cfg: &ParetoConfig, seed: u64) -> Result<Measured> {
    let sc = &det.env.scenario;
    let h0: Vec<f64> = run_trials(det, 0.0, "pareto-h0", seed, cfg.n_h0)?.iter().map(|t| t.statistic).collect();
    let h1: Vec<TrialOutcome> = run_trials(det, sc.xi.amplitude_a, "pareto-h1", seed, cfg.n_h1)?;
    let threshold = threshold_for_pfa(&h0, cfg.p_fa);
    Ok(Measured {
        threshold,
        detected: h1.iter().map(|t| if t.statistic > threshold { 1.0 } else { 0.0 }).collect(),
        sq_err: h1.iter().map(|t| t.weighted_sq_error(&sc.weight_diag)).collect(),
    })
}

fn paired(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len().max(1) as f64;
    let m = d.iter().sum::<f64>() / n;
    let v = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (v / n).sqrt())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Static point first, then one tuned point per α. Stage 1 is rerun per α
/// from the uniform initial protocol.
pub fn pareto_sweep(base: &Scenario, cfg: &ParetoConfig, seed: u64) -> Result<Vec<ParetoPoint>> {
    let sc = pareto_scenario(base, cfg.snr_db);
    let stat = measure(&Detector::static_design(&sc, cfg.static_duration), cfg, seed)?;
    let mut out = vec![ParetoPoint {
        method: "static".into(),
        alpha: f64::NAN,
        p_d: mean(&stat.detected),
        rmse: mean(&stat.sq_err).sqrt(),
        threshold: stat.threshold,
        p_d_gain: 0.0,
        p_d_gain_se: 0.0,
        mse_gain: 0.0,
        mse_gain_se: 0.0,
    }];
    let x0 = Protocol::initial(sc.n_steps, sc.n_pi, &sc.constraints);
    for &alpha in &cfg.alphas {
        let w = ObjectiveWeights { alpha, beta: 1.0 - alpha };
        let (design, _) = psngd_run(&x0, &sc, &sc.xi, &w, &cfg.stage1)?;
        let m = measure(&Detector::rapid_baseline(&sc, design), cfg, seed)?;
        let (pg, pgs) = paired(&m.detected, &stat.detected);
        let (mg, mgs) = paired(&stat.sq_err, &m.sq_err);
        out.push(ParetoPoint {
            method: "rapid".into(),
            alpha,
            p_d: mean(&m.detected),
            rmse: mean(&m.sq_err).sqrt(),
            threshold: m.threshold,
            p_d_gain: pg,
            p_d_gain_se: pgs,
            mse_gain: mg,
            mse_gain_se: mgs,
        });
    }
    Ok(out)
}

/// Points not dominated by another (higher P_D and lower RMSE, one strictly).
pub fn non_dominated(points: &[(f64, f64)]) -> Vec<bool> {
    points
        .iter()
        .map(|&(pd, r)| !points.iter().any(|&(q, s)| q >= pd && s <= r && (q > pd || s < r)))
        .collect()
}

pub fn write_pareto_csv(path: &std::path::Path, rows: &[ParetoPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
