//! Run configuration, manifests and the study runners behind the CLI.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::array::{aoa_rmse, loglog_slope, write_scaling_csv, ArrayMethod, ArrayScenario, ScalingRow};
use crate::baseline::{psngd_run, ObjectiveWeights, Protocol, Stage1Config};
use crate::detection::{
    bayesian_floor, matched_filter_estimate, rmse_row, run_trials, snr_at_target, Detector, RmseRow, RocCurve, SensitivityConfig,
    TrialOutcome,
};
use crate::error::{RapidError, Result};
use crate::learning::{run_learning, LearningConfig};
use crate::nonmarkov::{flatness, run_nonmarkov, spearman, write_nonmarkov_csv, NonMarkovConfig};
use crate::pareto::{pareto_sweep, write_pareto_csv, ParetoConfig};
use crate::rapid::RapidEnv;
use crate::rng::StreamId;
use crate::scenario::Scenario;
use crate::signal::amplitude_for_snr;
use crate::tracking::{reacquisition_steps, tracking_mse, write_tracking_csv, Tracker, TrackingConfig, TrackingRow};

pub const CONFIG_VERSION: u32 = 1;
pub const CODE_VERSION: &str = concat!("rapid-core ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RocStudy {
    pub snr_db: f64,
    pub static_duration: f64,
    pub n_h0: usize,
    pub n_h1: usize,
}

impl Default for RocStudy {
    fn default() -> Self {
        Self { snr_db: -5.0, static_duration: 50.0, n_h0: 2000, n_h1: 2000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RmseStudy {
    pub snr_grid: Vec<f64>,
    pub static_duration: f64,
    pub n_trials: usize,
}

impl Default for RmseStudy {
    fn default() -> Self {
        Self { snr_grid: (0..7).map(|i| -15.0 + 5.0 * i as f64).collect(), static_duration: 50.0, n_trials: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingStudy {
    pub array: ArrayScenario,
    pub sensors: Vec<usize>,
    pub n_trials: usize,
}

impl Default for ScalingStudy {
    fn default() -> Self {
        Self { array: ArrayScenario::default(), sensors: vec![2, 4, 8, 16], n_trials: 100 }
    }
}

/// Everything a run depends on. A config file may give any subset of the
/// fields; the rest take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    pub seed: u64,
    /// multiplies every Monte-Carlo trial and training-episode count
    pub budget: f64,
    pub scenario: Scenario,
    pub stage1: Stage1Config,
    pub roc: RocStudy,
    pub sensitivity: SensitivityConfig,
    pub rmse: RmseStudy,
    pub nonmarkov: NonMarkovConfig,
    pub pareto: ParetoConfig,
    pub learning: LearningConfig,
    pub scaling: ScalingStudy,
    pub tracking: TrackingConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 42,
            budget: 1.0,
            scenario: Scenario::default(),
            stage1: Stage1Config::default(),
            roc: RocStudy::default(),
            sensitivity: SensitivityConfig::default(),
            rmse: RmseStudy::default(),
            nonmarkov: NonMarkovConfig::default(),
            pareto: ParetoConfig::default(),
            learning: LearningConfig::default(),
            scaling: ScalingStudy::default(),
            tracking: TrackingConfig::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> RapidError {
    RapidError::Config(msg.into())
}

/// Sets `path` (dot separated) in a JSON tree. The path must already exist.
pub fn set_dotted(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, key) in parts.iter().enumerate() {
        let next = match node {
            Value::Object(map) => map.get_mut(*key),
            Value::Array(items) => key.parse::<usize>().ok().and_then(|k| items.get_mut(k)),
            _ => None,
        };
        node = next.ok_or_else(|| config_err(format!("unknown field `{}`", parts[..=i].join("."))))?;
    }
    *node = value;
    Ok(())
}

/// `key=value`; the value is read as JSON, falling back to a bare string.
pub fn parse_assignment(s: &str) -> Result<(String, Value)> {
    let (k, v) = s.split_once('=').ok_or_else(|| config_err(format!("override `{s}` is not key=value")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

fn scaled(n: usize, budget: f64, floor: usize) -> usize {
    ((n as f64 * budget).round() as usize).max(floor)
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn with_overrides(&self, overrides: &[(String, Value)]) -> Result<Self> {
        let mut tree = serde_json::to_value(self).map_err(|e| config_err(e.to_string()))?;
        for (k, v) in overrides {
            set_dotted(&mut tree, k, v.clone())?;
        }
        serde_json::from_value(tree).map_err(|e| config_err(e.to_string()))
    }

    /// Trial and episode counts after the budget multiplier.
    pub fn effective(&self) -> Self {
        let b = self.budget;
        let mut c = self.clone();
        c.budget = 1.0;
        c.roc.n_h0 = scaled(c.roc.n_h0, b, 20);
        c.roc.n_h1 = scaled(c.roc.n_h1, b, 20);
        c.sensitivity.n_h0 = scaled(c.sensitivity.n_h0, b, 100);
        c.sensitivity.n_h1 = scaled(c.sensitivity.n_h1, b, 20);
        c.rmse.n_trials = scaled(c.rmse.n_trials, b, 4);
        c.nonmarkov.n_trials = scaled(c.nonmarkov.n_trials, b, 4);
        c.pareto.n_h0 = scaled(c.pareto.n_h0, b, 100);
        c.pareto.n_h1 = scaled(c.pareto.n_h1, b, 20);
        c.learning.stage2.sac.k2 = scaled(c.learning.stage2.sac.k2, b, c.learning.stage2.warmup_episodes + 2);
        c.learning.eval_episodes = scaled(c.learning.eval_episodes, b, 4);
        c.scaling.n_trials = scaled(c.scaling.n_trials, b, 4);
        c.tracking.n_trials = scaled(c.tracking.n_trials, b, 4);
        c
    }

    /// Rejects values no study can run with.
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(config_err(msg.to_string())) };
        check(self.version == CONFIG_VERSION, &format!("config version {} unsupported (expected {CONFIG_VERSION})", self.version))?;
        check(self.budget.is_finite() && self.budget > 0.0, "budget must be positive")?;
        for (name, sc) in [
            ("scenario", &self.scenario),
            ("nonmarkov.scenario", &self.nonmarkov.scenario),
            ("tracking.scenario", &self.tracking.scenario),
            ("scaling.array.sensor", &self.scaling.array.sensor),
        ] {
            check(sc.n_steps >= 1, &format!("{name}.n_steps must be at least 1"))?;
            check(sc.shots_per_step >= 1, &format!("{name}.shots_per_step must be at least 1"))?;
            check(sc.phys.t1 > 0.0 && sc.phys.t2 > 0.0, &format!("{name}.phys: T1 and T2 must be positive"))?;
            check(sc.phys.eta > 0.0 && sc.phys.eta <= 1.0, &format!("{name}.phys.eta must lie in (0, 1]"))?;
            check(sc.noise.sigma_w2 >= 0.0 && sc.noise.sigma_n2 >= 0.0, &format!("{name}.noise variances must be non-negative"))?;
            check(sc.noise.tau_c > 0.0, &format!("{name}.noise.tau_c must be positive"))?;
            let c = &sc.constraints;
            check(c.t_min > 0.0 && c.u_max > 0.0 && c.s_max > 0.0, &format!("{name}.constraints must be positive"))?;
            check(
                c.t_tot >= sc.n_steps as f64 * c.t_min,
                &format!("{name}: {} steps of {} us exceed t_tot {}", sc.n_steps, c.t_min, c.t_tot),
            )?;
        }
        for p in [self.sensitivity.p_fa, self.pareto.p_fa] {
            check(p > 0.0 && p < 1.0, "false-alarm targets must lie in (0, 1)")?;
        }
        check(self.sensitivity.lo_db < self.sensitivity.hi_db, "sensitivity bracket is empty")?;
        check(self.pareto.alphas.iter().all(|a| (0.0..=1.0).contains(a)), "pareto.alphas must lie in [0, 1]")?;
        check(self.nonmarkov.tau_ratios.iter().all(|r| *r > 0.0), "nonmarkov.tau_ratios must be positive")?;
        check(!self.rmse.snr_grid.is_empty(), "rmse.snr_grid is empty")?;
        check(self.scaling.sensors.iter().all(|n| (2..=32).contains(n)), "scaling.sensors must lie in 2..=32")?;
        check(self.tracking.hop_steps.len() == self.tracking.hop_sizes.len(), "tracking hop steps and sizes differ in length")?;
        Ok(())
    }

    /// Fields outside the default-parameter table's values or ranges; these
    /// are recorded in the manifest rather than rejected.
    pub fn departures(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut flag = |ok: bool, what: String| {
            if !ok {
                out.push(what);
            }
        };
        for (name, sc) in [
            ("scenario", &self.scenario),
            ("nonmarkov.scenario", &self.nonmarkov.scenario),
            ("tracking.scenario", &self.tracking.scenario),
            ("scaling.array.sensor", &self.scaling.array.sensor),
        ] {
            let a = sc.xi.amplitude_a;
            flag((1.0..=100.0).contains(&a), format!("{name}.xi.amplitude_a = {a} nT (range 1-100)"));
            flag(sc.n_steps == 50, format!("{name}.n_steps = {} (default 50)", sc.n_steps));
            flag(sc.phys.t1 == 5000.0, format!("{name}.phys.t1 = {} us (default 5000)", sc.phys.t1));
            flag(sc.phys.t2 == 200.0, format!("{name}.phys.t2 = {} us (default 200)", sc.phys.t2));
            flag(sc.phys.eta == 0.1, format!("{name}.phys.eta = {} (default 0.1)", sc.phys.eta));
            flag(sc.noise.sigma_w2 == 10.0, format!("{name}.noise.sigma_w2 = {} nT^2 (default 10)", sc.noise.sigma_w2));
            flag(sc.noise.tau_c == 1.0, format!("{name}.noise.tau_c = {} us (default 1)", sc.noise.tau_c));
            flag(sc.constraints.t_min == 0.1, format!("{name}.constraints.t_min = {} us (default 0.1)", sc.constraints.t_min));
        }
        for (name, snr) in [("roc.snr_db", self.roc.snr_db), ("pareto.snr_db", self.pareto.snr_db)] {
            flag((-15.0..=15.0).contains(&snr), format!("{name} = {snr} dB (range -15 to 15)"));
        }
        for s in &self.rmse.snr_grid {
            flag((-15.0..=15.0).contains(s), format!("rmse.snr_grid contains {s} dB (range -15 to 15)"));
        }
        flag(self.sensitivity.p_fa == 1e-3, format!("sensitivity.p_fa = {} (target 1e-3)", self.sensitivity.p_fa));
        flag(self.pareto.p_fa == 1e-3, format!("pareto.p_fa = {} (target 1e-3)", self.pareto.p_fa));
        out
    }

    /// SHA-256 over the canonical JSON of the configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    /// Unix seconds; left empty unless requested so output trees stay comparable
    pub started_unix: Option<u64>,
    pub finished_unix: Option<u64>,
    pub status: String,
    pub departures: Vec<String>,
    pub outputs: Vec<String>,
}

fn now_unix() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| RapidError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Study {
    Roc,
    Rmse,
    NonMarkov,
    Pareto,
    Learn,
    Scaling,
    Tracking,
}

impl Study {
    pub const ALL: [Study; 7] = [Study::Roc, Study::Rmse, Study::NonMarkov, Study::Pareto, Study::Learn, Study::Scaling, Study::Tracking];

    pub fn name(&self) -> &'static str {
        match self {
            Study::Roc => "roc",
            Study::Rmse => "rmse",
            Study::NonMarkov => "nonmarkov",
            Study::Pareto => "pareto",
            Study::Learn => "learn",
            Study::Scaling => "scaling",
            Study::Tracking => "tracking",
        }
    }
}

/// Output directory plus the Stage-1 design shared by the studies that need it.
pub struct Runner {
    pub cfg: ScenarioConfig,
    pub out_dir: PathBuf,
    stage1: OnceLock<Protocol>,
}

impl Runner {
    /// `cfg` is used as given; apply the budget with `effective` first.
    pub fn new(cfg: ScenarioConfig, out_dir: impl Into<PathBuf>) -> Self {
        Self { cfg, out_dir: out_dir.into(), stage1: OnceLock::new() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn stage1(&self) -> Result<Protocol> {
        if let Some(p) = self.stage1.get() {
            return Ok(p.clone());
        }
        let sc = &self.cfg.scenario;
        let x0 = Protocol::initial(sc.n_steps, sc.n_pi, &sc.constraints);
        let (x, _) = psngd_run(&x0, sc, &sc.xi, &ObjectiveWeights::default(), &self.cfg.stage1)?;
        Ok(self.stage1.get_or_init(|| x).clone())
    }

    /// Runs the studies and returns the files written, relative to the output directory.
    pub fn run(&self, studies: &[Study]) -> Result<Vec<String>> {
        std::fs::create_dir_all(&self.out_dir)?;
        let mut files = Vec::new();
        for s in studies {
            files.extend(match s {
                Study::Roc => self.run_roc_study()?,
                Study::Rmse => self.run_rmse_study()?,
                Study::NonMarkov => self.run_nonmarkov_study()?,
                Study::Pareto => self.run_pareto_study()?,
                Study::Learn => self.run_learning_study()?,
                Study::Scaling => self.run_scaling_study()?,
                Study::Tracking => self.run_tracking_study()?,
            });
        }
        Ok(files)
    }

    pub fn run_roc_study(&self) -> Result<Vec<String>> {
        let (cfg, seed) = (&self.cfg, self.cfg.seed);
        let sc = &cfg.scenario;
        let dets = [Detector::static_design(sc, cfg.roc.static_duration), Detector::rapid_baseline(sc, self.stage1()?)];
        let amp = amplitude_for_snr(cfg.roc.snr_db, &sc.noise);
        let mut sens = Vec::new();
        for (det, file) in dets.iter().zip(["roc_static.csv", "roc_adaptive.csv"]) {
            let h0: Vec<f64> = run_trials(det, 0.0, "roc-h0", seed, cfg.roc.n_h0)?.iter().map(|t| t.statistic).collect();
            let h1: Vec<f64> = run_trials(det, amp, "roc-h1", seed, cfg.roc.n_h1)?.iter().map(|t| t.statistic).collect();
            let roc = RocCurve::from_statistics(&h0, &h1);
            let mut w = csv::Writer::from_path(self.path(file))?;
            w.write_record(["threshold", "p_fa", "p_d"])?;
            for (t, (pfa, pd)) in roc.thresholds.iter().zip(&roc.points) {
                w.write_record([t.to_string(), pfa.to_string(), pd.to_string()])?;
            }
            w.flush()?;
            sens.push(serde_json::json!({
                "method": det.name,
                "roc_snr_db": cfg.roc.snr_db,
                "auc": roc.auc(),
                "sensitivity": snr_at_target(det, &cfg.sensitivity, seed)?,
            }));
        }
        write_json(
            &self.path("sensitivity.json"),
            &serde_json::json!({ "p_d_target": cfg.sensitivity.p_d_target, "p_fa": cfg.sensitivity.p_fa, "methods": sens }),
        )?;
        Ok(vec!["roc_static.csv".into(), "roc_adaptive.csv".into(), "sensitivity.json".into()])
    }

    pub fn run_rmse_study(&self) -> Result<Vec<String>> {
        let (cfg, seed) = (&self.cfg, self.cfg.seed);
        let sc = &cfg.scenario;
        let stat = Detector::static_design(sc, cfg.rmse.static_duration);
        let dets = [stat, Detector::rapid_baseline(sc, self.stage1()?)];
        let w = sc.weight_diag;
        let mut rows: Vec<RmseRow> = Vec::new();
        for (p, &snr) in cfg.rmse.snr_grid.iter().enumerate() {
            let amp = amplitude_for_snr(snr, &sc.noise);
            let tag = format!("rmse-{p}");
            let truth = sc.xi.with(0, amp);
            for det in &dets {
                let trials = run_trials(det, amp, &tag, seed, cfg.rmse.n_trials)?;
                rows.push(rmse_row(&det.name, snr, &trials, &w, bayesian_floor(det, &truth)?));
            }
            // raw-field receiver over the static windows, same truths and streams
            let env = &dets[0].env;
            let classical: Vec<TrialOutcome> = (0..cfg.rmse.n_trials)
                .map(|i| {
                    let stream = StreamId::new(seed, &tag).trial(i as u64);
                    let truth = env.sample_truth(&mut stream.substep(2).rng()).with(0, amp);
                    let estimate = matched_filter_estimate(sc, &env.base, &truth, stream);
                    TrialOutcome { statistic: 0.0, truth, estimate }
                })
                .collect();
            rows.push(rmse_row("classical", snr, &classical, &w, f64::NAN));
        }
        let mut wtr = csv::Writer::from_path(self.path("rmse.csv"))?;
        for r in &rows {
            wtr.serialize(r)?;
        }
        wtr.flush()?;
        Ok(vec!["rmse.csv".into()])
    }

    pub fn run_nonmarkov_study(&self) -> Result<Vec<String>> {
        let rows = run_nonmarkov(&self.cfg.nonmarkov, self.cfg.seed)?;
        write_nonmarkov_csv(&self.path("nonmarkov.csv"), &rows)?;
        let rapid: Vec<_> = rows.iter().filter(|r| r.method == "rapid").collect();
        let (rho, p) = spearman(&rapid.iter().map(|r| r.tau_ratio).collect::<Vec<_>>(), &rapid.iter().map(|r| r.duration_ratio).collect::<Vec<_>>());
        write_json(
            &self.path("nonmarkov.json"),
            &serde_json::json!({
                "flatness": { "ramsey": flatness(&rows, "ramsey"), "cpmg8": flatness(&rows, "cpmg8"), "rapid": flatness(&rows, "rapid") },
                "duration_trend": { "spearman_rho": rho, "p_value": p },
            }),
        )?;
        Ok(vec!["nonmarkov.csv".into(), "nonmarkov.json".into()])
    }

    pub fn run_pareto_study(&self) -> Result<Vec<String>> {
        let pts = pareto_sweep(&self.cfg.scenario, &self.cfg.pareto, self.cfg.seed)?;
        write_pareto_csv(&self.path("pareto.csv"), &pts)?;
        Ok(vec!["pareto.csv".into()])
    }

    pub fn run_learning_study(&self) -> Result<Vec<String>> {
        let env = RapidEnv::new(self.cfg.scenario.clone(), self.stage1()?);
        let r = run_learning(&env, &self.cfg.learning, self.cfg.seed)?;
        let mut w = csv::Writer::from_path(self.path("learning.csv"))?;
        w.write_record(["episode", "warm_reward", "cold_reward", "baseline_reward"])?;
        for (a, b) in r.warm_curve.iter().zip(&r.cold_curve) {
            w.write_record([a.episode.to_string(), a.mean_reward.to_string(), b.mean_reward.to_string(), r.baseline_reward.to_string()])?;
        }
        w.flush()?;
        write_json(
            &self.path("learning.json"),
            &serde_json::json!({
                "baseline_reward": r.baseline_reward,
                "frozen_trace": r.frozen_trace,
                "frozen_trace_se": r.frozen_trace_se,
                "trained_trace": r.trained_trace,
                "trained_trace_se": r.trained_trace_se,
                "paired_diff": r.paired_diff,
                "paired_diff_se": r.paired_diff_se,
                "warm_crossing": r.warm_crossing,
                "cold_crossing": r.cold_crossing,
                "cold_censored": r.cold_censored(),
                "episodes": r.warm_curve.len(),
            }),
        )?;
        Ok(vec!["learning.csv".into(), "learning.json".into()])
    }

    pub fn run_scaling_study(&self) -> Result<Vec<String>> {
        let s = &self.cfg.scaling;
        let mut rows: Vec<ScalingRow> = Vec::new();
        let mut slopes = serde_json::Map::new();
        for m in [ArrayMethod::Coherent, ArrayMethod::Incoherent, ArrayMethod::Classical] {
            let mine: Vec<ScalingRow> = s.sensors.iter().map(|&n| aoa_rmse(&s.array, m, n, s.n_trials, self.cfg.seed)).collect::<Result<_>>()?;
            let (slope, se) = loglog_slope(&mine);
            slopes.insert(m.name().into(), serde_json::json!({ "slope": slope, "slope_se": se }));
            rows.extend(mine);
        }
        write_scaling_csv(&self.path("scaling.csv"), &rows)?;
        write_json(&self.path("scaling.json"), &serde_json::json!({ "sensors": s.sensors, "slopes": slopes }))?;
        Ok(vec!["scaling.csv".into(), "scaling.json".into()])
    }

    pub fn run_tracking_study(&self) -> Result<Vec<String>> {
        let t = &self.cfg.tracking;
        let mut rows = Vec::new();
        let mut summary = Vec::new();
        for tracker in [Tracker::Rapid, Tracker::StaticDd, Tracker::Kalman] {
            let mse = tracking_mse(t, tracker, self.cfg.seed)?;
            let reacq: Vec<Option<usize>> = t.hop_steps.iter().map(|&h| reacquisition_steps(&mse, h, 5, 2.0)).collect();
            summary.push(serde_json::json!({ "method": tracker.name(), "reacquisition_steps": reacq }));
            rows.extend(mse.iter().enumerate().map(|(k, m)| TrackingRow {
                step: k,
                method: tracker.name().into(),
                mse_fc: *m,
                hop: t.hop_steps.contains(&k),
            }));
        }
        write_tracking_csv(&self.path("tracking.csv"), &rows)?;
        write_json(
            &self.path("tracking.json"),
            &serde_json::json!({ "hop_steps": t.hop_steps, "hop_sizes_mhz": t.hop_sizes, "methods": summary }),
        )?;
        Ok(vec!["tracking.csv".into(), "tracking.json".into()])
    }
}

/// Runs `studies` under a manifest that is written first and finalized last.
pub fn run_with_manifest(cfg: &ScenarioConfig, command: &str, studies: &[Study], out_dir: &Path, timestamps: bool) -> Result<RunManifest> {
    cfg.validate()?;
    let eff = cfg.effective();
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = RunManifest {
        command: command.into(),
        config_hash: eff.hash(),
        code_version: CODE_VERSION.into(),
        seed: eff.seed,
        started_unix: timestamps.then(now_unix),
        finished_unix: None,
        status: "running".into(),
        departures: eff.departures(),
        outputs: Vec::new(),
    };
    let path = out_dir.join("manifest.json");
    write_json(&path, &manifest)?;
    write_json(&out_dir.join("config.json"), &eff)?;
    let result = Runner::new(eff, out_dir).run(studies);
    manifest.finished_unix = timestamps.then(now_unix);
    match result {
        Ok(mut files) => {
            files.push("config.json".into());
            files.sort();
            manifest.outputs = files;
            manifest.status = "complete".into();
            write_json(&path, &manifest)?;
            Ok(manifest)
        }
        Err(e) => {
            manifest.status = format!("failed: {e}");
            write_json(&path, &manifest)?;
            Err(e)
        }
    }
}
