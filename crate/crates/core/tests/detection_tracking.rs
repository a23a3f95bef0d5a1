//! Detection statistics, sensitivity search, error floors, risk and tracking.

use nalgebra::{Matrix2, RowVector2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use rapid_core::detection::{
    bayesian_floor, bayesian_risk, log_lr_statistic, rmse_row, run_trials, snr_at_target_with_h0, Detector, RocCurve, SensitivityConfig,
    TrialOutcome,
};
use rapid_core::rapid::run_episode;
use rapid_core::rng::StreamId;
use rapid_core::scenario::Scenario;
use rapid_core::signal::amplitude_for_snr;
use rapid_core::tracking::{reacquisition_steps, riccati_filtered, riccati_steady_state, tracking_mse, KalmanTracker, Tracker, TrackingConfig};

fn stats(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (s2 / n).sqrt())
}

fn statistics(t: &[TrialOutcome]) -> Vec<f64> {
    t.iter().map(|o| o.statistic).collect()
}

/// With ξ̂ held at a value chosen before seeing the data, the statistic is a
/// plain log-likelihood ratio and its mean under H₀ is −KL ≤ 0.
#[test]
fn fixed_alternative_ratio_is_negative_under_the_null() {
    let sc = Scenario::default();
    let det = Detector::static_design(&sc, 50.0);
    let stats_h0: Vec<f64> = (0..1000)
        .into_par_iter()
        .map(|i| {
            let stream = StreamId::new(5, "kl-h0").trial(i as u64);
            let truth = det.env.sample_truth(&mut stream.substep(2).rng()).with(0, 0.0);
            let mut trace = run_episode(&det.env, det.ctrl, &truth, stream).unwrap();
            trace.beliefs.last_mut().unwrap().mu_hat = sc.xi.to_array();
            log_lr_statistic(&sc, &trace).unwrap()
        })
        .collect();
    let (m, se) = stats(&stats_h0);
    assert!(m <= 0.0, "mean {m} ± {se}");
}

/// The plug-in statistic fits ξ̂ to the same data, so under H₀ it sits above
/// zero on average; it must still separate the hypotheses.
#[test]
fn plug_in_statistic_ranks_signal_above_noise() {
    let sc = Scenario::default();
    let det = Detector::static_design(&sc, 50.0);
    let h0 = statistics(&run_trials(&det, 0.0, "glrt-h0", 5, 1000).unwrap());
    assert!(h0.iter().all(|s| !s.is_nan()));
    let h1 = statistics(&run_trials(&det, amplitude_for_snr(0.0, &sc.noise), "glrt-h1", 5, 1000).unwrap());
    let finite = |v: &[f64]| v.iter().copied().filter(|s| s.is_finite()).collect::<Vec<_>>();
    let ((m0, se0), (m1, se1)) = (stats(&finite(&h0)), stats(&finite(&h1)));
    assert!(m1 - m0 > 3.0 * (se0 * se0 + se1 * se1).sqrt(), "H0 {m0}±{se0}, H1 {m1}±{se1}");
}

#[test]
fn strong_signal_separates_from_zero() {
    let sc = Scenario::default();
    let det = Detector::static_design(&sc, 50.0);
    let a = amplitude_for_snr(15.0, &sc.noise);
    let h1 = statistics(&run_trials(&det, a, "glrt-h1", 6, 400).unwrap());
    let (m, se) = stats(&h1);
    assert!(m > 5.0 * se, "mean {m}, se {se}");
}

#[test]
fn roc_improves_with_snr() {
    let sc = Scenario::default();
    let det = Detector::static_design(&sc, 50.0);
    let h0 = statistics(&run_trials(&det, 0.0, "roc-h0", 7, 300).unwrap());
    let auc = |snr: f64| {
        let h1 = statistics(&run_trials(&det, amplitude_for_snr(snr, &sc.noise), "roc-h1", 7, 300).unwrap());
        let roc = RocCurve::from_statistics(&h0, &h1);
        assert!(roc.points.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1));
        assert_eq!(roc.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(roc.points.last(), Some(&(1.0, 1.0)));
        roc.auc()
    };
    let (weak, strong) = (auc(-15.0), auc(15.0));
    assert!((0.0..=1.0).contains(&weak) && strong <= 1.0);
    assert!(strong > weak, "AUC at +15 dB {strong} vs −15 dB {weak}");
}

#[test]
fn sensitivity_search_is_monotone_in_the_target() {
    let sc = Scenario::default();
    let det = Detector::static_design(&sc, 50.0);
    let h0 = statistics(&run_trials(&det, 0.0, "detect-h0", 8, 1000).unwrap());
    let cfg = |t: f64| SensitivityConfig { p_d_target: t, p_fa: 0.05, n_h0: 1000, n_h1: 100, ..SensitivityConfig::default() };
    let lo = snr_at_target_with_h0(&det, &h0, &cfg(0.5), 8).unwrap();
    let hi = snr_at_target_with_h0(&det, &h0, &cfg(0.9), 8).unwrap();
    assert!(hi.snr_db >= lo.snr_db, "{} < {}", hi.snr_db, lo.snr_db);

    let easy = SensitivityConfig { lo_db: 30.0, hi_db: 40.0, ..cfg(0.9) };
    assert_eq!(snr_at_target_with_h0(&det, &h0, &easy, 8).unwrap().snr_db, 30.0);
}

#[test]
fn estimation_error_respects_the_information_floor() {
    let sc = Scenario::default();
    let det = Detector::static_design(&sc, 50.0);
    for snr in [-5.0, 5.0] {
        let a = amplitude_for_snr(snr, &sc.noise);
        let trials = run_trials(&det, a, "floor", 9, 400).unwrap();
        let floor = bayesian_floor(&det, &sc.xi.with(0, a)).unwrap();
        let row = rmse_row("static", snr, &trials, &sc.weight_diag, floor);
        assert!(row.rmse_weighted >= 0.9 * floor, "{snr} dB: rmse {} floor {floor}", row.rmse_weighted);
    }
}

#[test]
fn risk_total_is_the_weighted_sum() {
    let sc = Scenario::default();
    let det = Detector::static_design(&sc, 50.0);
    let (alpha, beta) = (0.3, 0.7);
    let r = bayesian_risk(&det, 20, 5, alpha, beta, 10).unwrap();
    assert!((r.total - (alpha * r.detection_term + beta * r.estimation_term)).abs() <= 1e-12 * r.total.abs().max(1.0));
    assert!(r.estimation_term >= 0.0 && r.detection_se >= 0.0 && r.total_se >= 0.0);
}

/// Linear-Gaussian (phase, frequency) data with the filter's own model: the
/// empirical frequency MSE settles at the Riccati prediction.
#[test]
fn kalman_tracker_reaches_the_riccati_error() {
    let slot = 200.0;
    let f = Matrix2::new(1.0, 2.0 * std::f64::consts::PI * slot, 0.0, 1.0);
    let q = Matrix2::new(1e-4, 0.0, 0.0, 1e-9);
    let h = RowVector2::new(1.0, 0.0);
    let r = 0.01;
    let p_pred = riccati_steady_state(&f, &h, &q, r);
    let predicted = riccati_filtered(&p_pred, &h, r)[(1, 1)];
    let (n_trials, n_steps, tail) = (1000, 300, 100);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut acc = 0.0;
    for _ in 0..n_trials {
        let mut x = Vector2::new(0.0, 0.0);
        let mut kf = KalmanTracker { mean: Vector2::zeros(), cov: Matrix2::new(1e-2, 0.0, 0.0, 1e-7) };
        for k in 0..n_steps {
            if k > 0 {
                let w = Vector2::new(q[(0, 0)].sqrt() * rng.sample::<f64, _>(StandardNormal), q[(1, 1)].sqrt() * rng.sample::<f64, _>(StandardNormal));
                x = f * x + w;
                kf.predict(&f, &q);
            }
            let z = x[0] + r.sqrt() * rng.sample::<f64, _>(StandardNormal);
            kf.update(&h, z, r);
            if k >= n_steps - tail {
                acc += (kf.mean[1] - x[1]).powi(2);
            }
        }
    }
    let mse = acc / (n_trials * tail) as f64;
    assert!((mse / predicted - 1.0).abs() < 0.2, "MSE {mse:.3e} vs Riccati {predicted:.3e}");
}

#[test]
fn trackers_react_to_hops_and_rapid_recovers_first() {
    let cfg = TrackingConfig::default();
    let mut reacq = Vec::new();
    for tracker in [Tracker::Rapid, Tracker::StaticDd, Tracker::Kalman] {
        let mse = tracking_mse(&cfg, tracker, 42).unwrap();
        for &hop in &cfg.hop_steps {
            let before = mse[hop - 3..hop].iter().sum::<f64>() / 3.0;
            assert!(mse[hop] > before, "{}: no spike at step {hop}", tracker.name());
        }
        reacq.push(cfg.hop_steps.iter().map(|&h| reacquisition_steps(&mse, h, 5, 2.0).unwrap_or(usize::MAX)).collect::<Vec<_>>());
    }
    for (r, s) in reacq[0].iter().zip(&reacq[1]) {
        assert!(r <= s, "rapid {r} vs static-dd {s}");
    }
}
