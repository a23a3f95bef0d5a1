//! Warm- against cold-start training, and the trained policy against the
//! frozen baseline it started from.

use serde::{Deserialize, Serialize};

use crate::baseline::{project_constraints, Protocol};
use crate::error::Result;
use crate::rapid::{crossing_episode, run_policy, train_stage2, Controller, CurveRow, DeviationBox, RapidEnv, Stage2Config, StartMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningConfig {
    pub stage2: Stage2Config,
    pub eval_episodes: usize,
    /// trailing window of the reward curve used for the crossing
    pub window: usize,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self { stage2: Stage2Config::default(), eval_episodes: 200, window: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningReport {
    pub warm_curve: Vec<CurveRow>,
    pub cold_curve: Vec<CurveRow>,
    /// mean episode reward of the frozen baseline: the crossing target
    pub baseline_reward: f64,
    pub frozen_trace: f64,
    pub frozen_trace_se: f64,
    pub trained_trace: f64,
    pub trained_trace_se: f64,
    /// trained minus frozen final Tr(WΣ), paired by episode
    pub paired_diff: f64,
    pub paired_diff_se: f64,
    /// 1-based; `curve.len() + 1` if the curve never reaches the target
    pub warm_crossing: usize,
    pub cold_crossing: usize,
}

impl LearningReport {
    pub fn speedup(&self) -> f64 {
        self.cold_crossing as f64 / self.warm_crossing as f64
    }

    /// Cold start never reached the baseline, so the speedup is a lower bound.
    pub fn cold_censored(&self) -> bool {
        self.cold_crossing > self.cold_curve.len()
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

/// Cold-start environment: the uniform initial protocol, projected, with the
/// wide deviation box.
pub fn cold_env(warm: &RapidEnv) -> Result<RapidEnv> {
    let sc = &warm.scenario;
    let base = project_constraints(&Protocol::initial(sc.n_steps, sc.n_pi, &sc.constraints), &sc.constraints)?;
    let mut env = RapidEnv::new(sc.clone(), base);
    env.prior_var = warm.prior_var;
    env.lock_basis = warm.lock_basis;
    env.bounds = DeviationBox::wide();
    Ok(env)
}

/// `env` carries the tuned baseline; both starts train from the same seed.
pub fn run_learning(env: &RapidEnv, cfg: &LearningConfig, seed: u64) -> Result<LearningReport> {
    let w = env.scenario.weight();
    let frozen = run_policy(env, Controller::Frozen, cfg.eval_episodes, seed)?;
    let frozen_reward: Vec<f64> = frozen.iter().map(|t| t.total_reward()).collect();
    let frozen_tr: Vec<f64> = frozen.iter().map(|t| t.final_belief().weighted_trace(&w)).collect();

    let (policy, warm_curve) = train_stage2(env, &cfg.stage2, StartMode::Warm, seed)?;
    let (_, cold_curve) = train_stage2(&cold_env(env)?, &cfg.stage2, StartMode::Cold, seed)?;

    let trained = run_policy(env, Controller::Deterministic(&policy), cfg.eval_episodes, seed)?;
    let trained_tr: Vec<f64> = trained.iter().map(|t| t.final_belief().weighted_trace(&w)).collect();
    let diff: Vec<f64> = trained_tr.iter().zip(&frozen_tr).map(|(a, b)| a - b).collect();

    let (baseline_reward, _) = mean_se(&frozen_reward);
    let (frozen_trace, frozen_trace_se) = mean_se(&frozen_tr);
    let (trained_trace, trained_trace_se) = mean_se(&trained_tr);
    let (paired_diff, paired_diff_se) = mean_se(&diff);
    Ok(LearningReport {
        warm_crossing: crossing_episode(&warm_curve, cfg.window, baseline_reward),
        cold_crossing: crossing_episode(&cold_curve, cfg.window, baseline_reward),
        warm_curve,
        cold_curve,
        baseline_reward,
        frozen_trace,
        frozen_trace_se,
        trained_trace,
        trained_trace_se,
        paired_diff,
        paired_diff_se,
    })
}
