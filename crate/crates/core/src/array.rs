//! Angle-of-arrival estimation with a uniform linear array of sensors:
//! MUSIC on per-sensor phase snapshots, and a coherent joint filter that
//! pools every sensor's readouts into one likelihood for (φ, θ).

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix2, SymmetricEigen, Vector2};
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::Protocol;
use crate::detection::fisher_scoring;
use crate::error::{RapidError, Result};
use crate::measurement::{sample_step_readout, step_log_likelihood, StepReadout};
use crate::rapid::{run_episode, Controller, RapidEnv};
use crate::rng::StreamId;
use crate::scenario::Scenario;
use crate::sensing::{default_dt, locked_basis, StepControl};
use crate::signal::{sample_field_trajectory, steering_vector, ArrayGeometry, FieldModel, NoiseState, SignalParams};

/// Pseudo-spectrum grid, degrees.
pub const MUSIC_GRID_DEG: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct MusicSpectrum {
    /// rad
    pub grid: Vec<f64>,
    pub power: Vec<f64>,
    /// arg max on the grid, rad
    pub grid_theta: f64,
    /// continuous maximum next to the grid peak, rad
    pub estimated_theta: f64,
}

/// MUSIC for a single source. `snapshots` is N × M.
pub fn music(snapshots: &DMatrix<C64>, geom: &ArrayGeometry) -> Result<MusicSpectrum> {
    let n = snapshots.nrows();
    let m = snapshots.ncols().max(1);
    let r = (snapshots * snapshots.adjoint()).unscale(m as f64);
    let eig = SymmetricEigen::new(r);
    let top = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let rank = eig.eigenvalues.iter().filter(|&&e| e > 1e-10 * top.max(1e-300) && top > 0.0).count();
    if rank < 1 || !top.is_finite() {
        return Err(RapidError::RankDeficient { rank, sources: 1 });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let noise: Vec<_> = order[1..].iter().map(|&i| eig.eigenvectors.column(i).clone_owned()).collect();

    let steps = (180.0 / MUSIC_GRID_DEG).round() as usize;
    let grid: Vec<f64> = (0..=steps).map(|i| (-90.0 + i as f64 * MUSIC_GRID_DEG).to_radians()).collect();
    let pseudo = |th: f64| {
        let a = steering_vector(th, geom);
        let proj: f64 = noise
            .iter()
            .map(|e| e.iter().zip(&a).map(|(x, y)| x.conj() * y).sum::<C64>().norm_sqr())
            .sum();
        1.0 / proj.max(1e-300)
    };
    let power: Vec<f64> = grid.iter().map(|&th| pseudo(th)).collect();
    let best = (0..power.len()).max_by(|&a, &b| power[a].total_cmp(&power[b])).unwrap_or(0);
    // golden-section search between the neighbouring grid points
    let half = MUSIC_GRID_DEG.to_radians();
    let (mut lo, mut hi) = (grid[best] - half, grid[best] + half);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut x1, mut x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut f1, mut f2) = (pseudo(x1), pseudo(x2));
    for _ in 0..40 {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = pseudo(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = pseudo(x2);
        }
    }
    let mid = 0.5 * (lo + hi);
    let est = if pseudo(mid) >= power[best] { mid } else { grid[best] };
    Ok(MusicSpectrum { grid_theta: grid[best], estimated_theta: est, grid, power })
}

/// Array study setup. Each sensor runs the single-sensor model of `sensor`
/// with its own local phase φ + ψ_k(θ); only φ and θ are unknown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayScenario {
    /// physics, signal amplitude and carrier shared by all sensors
    pub sensor: Scenario,
    pub spacing_d: f64,
    /// readout shots per step summed over the array
    pub total_shots: u64,
    /// interrogation time of every step, µs
    pub duration: f64,
    pub theta0: f64,
    pub theta_prior_var: f64,
    pub phase_prior_var: f64,
    /// rad per link of unsynchronized sensor references
    pub reference_jitter: f64,
    /// synthetic snapshots per sensor for incoherent MUSIC
    pub snapshots_per_sensor: usize,
}

impl Default for ArrayScenario {
    fn default() -> Self {
        let mut sensor = Scenario::default();
        sensor.xi = sensor.xi.with(0, 30.0);
        sensor.active = [false, false, true, false];
        sensor.weight_diag = [0.0, 0.0, 1.0, 0.0];
        Self {
            sensor,
            spacing_d: 0.5,
            total_shots: 8000,
            duration: 150.0,
            theta0: 0.3,
            theta_prior_var: 0.02 * 0.02,
            phase_prior_var: 0.25,
            reference_jitter: 0.5,
            snapshots_per_sensor: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayTruth {
    pub phase: f64,
    pub theta: f64,
}

impl ArrayScenario {
    pub fn geometry(&self, n_sensors: usize) -> ArrayGeometry {
        ArrayGeometry::ula(n_sensors, self.spacing_d)
    }

    pub fn protocol(&self) -> Protocol {
        let s = self.sensor.constraints.s_max;
        Protocol { steps: vec![StepControl::ramsey(self.duration, s); self.sensor.n_steps] }
    }

    pub fn shots_per_sensor(&self, n_sensors: usize) -> u64 {
        (self.total_shots / n_sensors.max(1) as u64).max(1)
    }

    pub fn sample_truth<R: Rng + ?Sized>(&self, rng: &mut R) -> ArrayTruth {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        ArrayTruth {
            phase: self.sensor.xi.phase_phi + self.phase_prior_var.sqrt() * z1,
            theta: self.theta0 + self.theta_prior_var.sqrt() * z2,
        }
    }

    /// Sensor k's own single-sensor scenario, with shots split evenly and
    /// the design phase moved to the sensor's prior mean.
    fn sensor_env(&self, geom: &ArrayGeometry, k: usize) -> RapidEnv {
        let mut sc = self.sensor.clone();
        sc.shots_per_step = self.shots_per_sensor(geom.n_sensors);
        sc.xi = sc.xi.with(2, local_phase(geom, k, sc.xi.phase_phi, self.theta0));
        let slope = steering_slope(geom, k, self.theta0);
        let mut env = RapidEnv::new(sc, self.protocol());
        env.prior_var[2] = self.phase_prior_var + slope * slope * self.theta_prior_var;
        env
    }
}

fn local_phase(geom: &ArrayGeometry, k: usize, phase: f64, theta: f64) -> f64 {
    phase + geom.steering_phase(k, theta)
}

/// ∂ψ_k/∂θ
fn steering_slope(geom: &ArrayGeometry, k: usize, theta: f64) -> f64 {
    -2.0 * PI * k as f64 * geom.spacing_d * theta.cos()
}

/// Per-sensor phase estimates, each sensor running its own adaptive loop.
/// Sensor references are not synchronized: every link adds an independent
/// offset, so the reported phases carry a random walk along the array.
pub fn incoherent_phases(asc: &ArrayScenario, n_sensors: usize, truth: &ArrayTruth, stream: StreamId) -> Result<Vec<(f64, f64)>> {
    let geom = asc.geometry(n_sensors);
    let mut jitter_rng = stream.substep(5).rng();
    let mut offset = 0.0;
    let mut out = Vec::with_capacity(n_sensors);
    for k in 0..n_sensors {
        if k > 0 {
            offset += asc.reference_jitter * jitter_rng.sample::<f64, _>(StandardNormal);
        }
        let env = asc.sensor_env(&geom, k);
        let local = env.scenario.xi.with(2, local_phase(&geom, k, truth.phase, truth.theta));
        let tr = run_episode(&env, Controller::Frozen, &local, stream.sensor(k as u64))?;
        let fin = tr.final_belief();
        let start = SignalParams::from_array(fin.mu_hat);
        let mle = fisher_scoring(&env.scenario, &tr.executed.steps, &tr.readouts, &start, 8)?;
        out.push((mle.phase_phi + offset, fin.sigma_hat[(2, 2)].sqrt()));
    }
    Ok(out)
}

/// Incoherent estimate: MUSIC on snapshots drawn from each sensor's phase posterior.
pub fn incoherent_estimate(asc: &ArrayScenario, n_sensors: usize, truth: &ArrayTruth, stream: StreamId) -> Result<f64> {
    let phases = incoherent_phases(asc, n_sensors, truth, stream)?;
    let m = asc.snapshots_per_sensor * n_sensors;
    let mut rng = stream.substep(6).rng();
    let snaps = DMatrix::from_fn(n_sensors, m, |k, _| {
        let z: f64 = rng.sample(StandardNormal);
        C64::from_polar(1.0, phases[k].0 + phases[k].1 * z)
    });
    Ok(music(&snaps, &asc.geometry(n_sensors))?.estimated_theta)
}

/// Readouts of a coherent array episode, indexed [step][sensor].
#[derive(Clone, Debug, PartialEq)]
pub struct ArrayRecord {
    pub steps: Vec<Vec<StepControl>>,
    pub readouts: Vec<Vec<StepReadout>>,
    /// joint filter estimate (φ, θ) after the last step
    pub filtered: (f64, f64),
}

fn sensor_scenario(asc: &ArrayScenario, n_sensors: usize) -> Scenario {
    let mut sc = asc.sensor.clone();
    sc.shots_per_step = asc.shots_per_sensor(n_sensors);
    sc
}

/// Joint Fisher information and score over (φ, θ) of one step, summed over sensors.
fn joint_step(
    sc: &Scenario,
    geom: &ArrayGeometry,
    n: usize,
    steps: &[StepControl],
    readouts: &[StepReadout],
    est: (f64, f64),
) -> Result<(Matrix2<f64>, Vector2<f64>)> {
    let mut info = Matrix2::zeros();
    let mut score = Vector2::zeros();
    for k in 0..geom.n_sensors {
        let xi = sc.xi.with(2, local_phase(geom, k, est.0, est.1));
        let (j, s) = sc.step_information(&xi, n, &steps[k], &readouts[k])?;
        let jac = Vector2::new(1.0, steering_slope(geom, k, est.1));
        info += jac * jac.transpose() * (j[(2, 2)] * readouts[k].shots() as f64);
        score += jac * s[2];
    }
    Ok((info, score))
}

fn joint_log_likelihood(sc: &Scenario, geom: &ArrayGeometry, rec: &ArrayRecord, est: (f64, f64)) -> Result<f64> {
    let mut ll = 0.0;
    for (n, (steps, ys)) in rec.steps.iter().zip(&rec.readouts).enumerate() {
        for k in 0..geom.n_sensors {
            let xi = sc.xi.with(2, local_phase(geom, k, est.0, est.1));
            ll += step_log_likelihood(&ys[k], &sc.probs(&xi, n, &steps[k], true)?, steps[k].mean_photons);
        }
    }
    Ok(ll)
}

/// Coherent episode: one Gaussian filter over (φ, θ) fed by every sensor,
/// with each sensor's readout axis locked at the joint estimate.
pub fn simulate_coherent(asc: &ArrayScenario, n_sensors: usize, truth: &ArrayTruth, stream: StreamId) -> Result<ArrayRecord> {
    let geom = asc.geometry(n_sensors);
    let sc = sensor_scenario(asc, n_sensors);
    let base = asc.protocol();
    let mut rngs: Vec<_> = (0..n_sensors).map(|k| stream.sensor(k as u64).substep(0).rng()).collect();
    let mut mu = Vector2::new(sc.xi.phase_phi, asc.theta0);
    let mut sigma = Matrix2::new(asc.phase_prior_var, 0.0, 0.0, asc.theta_prior_var);
    let mut rec = ArrayRecord { steps: Vec::new(), readouts: Vec::new(), filtered: (0.0, 0.0) };
    for n in 0..sc.n_steps {
        let mut steps = Vec::with_capacity(n_sensors);
        let mut ys = Vec::with_capacity(n_sensors);
        for k in 0..n_sensors {
            let guess = sc.xi.with(2, local_phase(&geom, k, mu[0], mu[1]));
            let step = StepControl { beta: locked_basis(&sc.state(&guess, n, &base.steps[n], true)?), ..base.steps[n] };
            let actual = sc.xi.with(2, local_phase(&geom, k, truth.phase, truth.theta));
            let probs = sc.probs(&actual, n, &step, true)?;
            ys.push(sample_step_readout(&probs, step.mean_photons, sc.shots_per_step, &mut rngs[k]));
            steps.push(step);
        }
        let (info, score) = joint_step(&sc, &geom, n, &steps, &ys, (mu[0], mu[1]))?;
        let a = Matrix2::identity() + info * sigma;
        if let Some(inv) = a.try_inverse() {
            sigma = sigma * inv;
            sigma = (sigma + sigma.transpose()) * 0.5;
            mu += sigma * score;
        }
        rec.steps.push(steps);
        rec.readouts.push(ys);
    }
    rec.filtered = (mu[0], mu[1]);
    Ok(rec)
}

/// Maximum of the pooled likelihood by Fisher scoring from the filter estimate.
pub fn refine_joint(asc: &ArrayScenario, n_sensors: usize, rec: &ArrayRecord, iterations: usize) -> Result<(f64, f64)> {
    let geom = asc.geometry(n_sensors);
    let sc = sensor_scenario(asc, n_sensors);
    let mut est = rec.filtered;
    let mut ll = joint_log_likelihood(&sc, &geom, rec, est)?;
    for _ in 0..iterations {
        let mut info = Matrix2::zeros();
        let mut score = Vector2::zeros();
        for n in 0..rec.steps.len() {
            let (j, s) = joint_step(&sc, &geom, n, &rec.steps[n], &rec.readouts[n], est)?;
            info += j;
            score += s;
        }
        let Some(inv) = info.try_inverse() else { break };
        let delta = inv * score;
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..8 {
            let cand = (est.0 + step * delta[0], est.1 + step * delta[1]);
            let l = joint_log_likelihood(&sc, &geom, rec, cand)?;
            if l >= ll {
                moved = l - ll > 1e-10 * ll.abs().max(1.0);
                est = cand;
                ll = l;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(est)
}

pub fn coherent_estimate(asc: &ArrayScenario, n_sensors: usize, truth: &ArrayTruth, stream: StreamId) -> Result<f64> {
    let rec = simulate_coherent(asc, n_sensors, truth, stream)?;
    Ok(refine_joint(asc, n_sensors, &rec, 8)?.1)
}

/// Classical array: raw field samples over the same windows, one snapshot
/// per interleaved group of windows from a least-squares quadrature fit.
pub fn classical_estimate(asc: &ArrayScenario, n_sensors: usize, truth: &ArrayTruth, stream: StreamId) -> Result<f64> {
    let geom = asc.geometry(n_sensors);
    let sc = &asc.sensor;
    let mut model = FieldModel::single(sc.xi.with(2, truth.phase).with(3, truth.theta), sc.noise);
    model.geometry = geom.clone();
    let omega = 2.0 * PI * sc.xi.carrier_offset_fc;
    let groups = (sc.n_steps / 3).max(1);
    let mut snaps = DMatrix::<C64>::zeros(n_sensors, groups);
    for k in 0..n_sensors {
        let mut rng = stream.sensor(k as u64).substep(3).rng();
        let mut state = NoiseState::new(&sc.noise, &mut rng);
        let mut gram = vec![Matrix2::<f64>::zeros(); groups];
        let mut proj = vec![Vector2::<f64>::zeros(); groups];
        for n in 0..sc.n_steps {
            let t0 = sc.step_start(n);
            let dt = default_dt(asc.duration, sc.noise.tau_c);
            let samples = sample_field_trajectory(&model, k, t0, asc.duration, dt, &mut state, &mut rng);
            let g = n % groups;
            for (i, y) in samples.iter().enumerate() {
                let t = t0 + (i as f64 + 0.5) * dt;
                let basis = Vector2::new((omega * t).cos(), (omega * t).sin());
                gram[g] += basis * basis.transpose();
                proj[g] += basis * *y;
            }
        }
        for g in 0..groups {
            let c = gram[g].try_inverse().map(|m| m * proj[g]).unwrap_or_else(Vector2::zeros);
            snaps[(k, g)] = C64::new(c[0], -c[1]);
        }
    }
    Ok(music(&snaps, &geom)?.estimated_theta)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArrayMethod {
    Coherent,
    Incoherent,
    Classical,
}

impl ArrayMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ArrayMethod::Coherent => "coherent",
            ArrayMethod::Incoherent => "incoherent",
            ArrayMethod::Classical => "classical",
        }
    }

    pub fn estimate(&self, asc: &ArrayScenario, n_sensors: usize, truth: &ArrayTruth, stream: StreamId) -> Result<f64> {
        match self {
            ArrayMethod::Coherent => coherent_estimate(asc, n_sensors, truth, stream),
            ArrayMethod::Incoherent => incoherent_estimate(asc, n_sensors, truth, stream),
            ArrayMethod::Classical => classical_estimate(asc, n_sensors, truth, stream),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n_sensors: usize,
    pub method: String,
    pub rmse_rad: f64,
    pub rmse_se: f64,
}

/// AoA RMSE of one method at one array size. Trial `i` shares its truth
/// and noise streams across methods.
pub fn aoa_rmse(asc: &ArrayScenario, method: ArrayMethod, n_sensors: usize, n_trials: usize, seed: u64) -> Result<ScalingRow> {
    let sq: Vec<f64> = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let stream = StreamId::new(seed, "array").trial(i as u64);
            let truth = asc.sample_truth(&mut stream.substep(2).rng());
            let est = method.estimate(asc, n_sensors, &truth, stream)?;
            Ok((est - truth.theta).powi(2))
        })
        .collect::<Result<_>>()?;
    let n = sq.len().max(1) as f64;
    let mse = sq.iter().sum::<f64>() / n;
    let var = sq.iter().map(|e| (e - mse).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let rmse = mse.sqrt();
    let se = if rmse > 0.0 { (var / n).sqrt() / (2.0 * rmse) } else { 0.0 };
    Ok(ScalingRow { n_sensors, method: method.name().into(), rmse_rad: rmse, rmse_se: se })
}

/// Slope of ln RMSE against ln N by weighted least squares, with its
/// standard error from the per-point RMSE errors.
pub fn loglog_slope(rows: &[ScalingRow]) -> (f64, f64) {
    let pts: Vec<(f64, f64, f64)> = rows
        .iter()
        .filter(|r| r.rmse_rad > 0.0)
        .map(|r| {
            let sd = (r.rmse_se / r.rmse_rad).max(1e-12);
            ((r.n_sensors as f64).ln(), r.rmse_rad.ln(), 1.0 / (sd * sd))
        })
        .collect();
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    if pts.len() < 2 || sw == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let xm = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let ym = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - xm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - xm) * (p.1 - ym)).sum();
    (sxy / sxx, (1.0 / sxx).sqrt())
}

pub fn write_scaling_csv(path: &std::path::Path, rows: &[ScalingRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["n_sensors", "method", "rmse_rad", "rmse_se", "fitted_slope"])?;
    let mut methods: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
    methods.dedup();
    for r in rows {
        w.write_record([r.n_sensors.to_string(), r.method.clone(), r.rmse_rad.to_string(), r.rmse_se.to_string(), String::new()])?;
    }
    for m in methods {
        let sub: Vec<ScalingRow> = rows.iter().filter(|r| r.method == m).cloned().collect();
        let (slope, se) = loglog_slope(&sub);
        w.write_record([String::from("slope"), m.to_string(), String::new(), se.to_string(), slope.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
