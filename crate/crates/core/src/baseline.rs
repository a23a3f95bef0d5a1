//! Stage 1: deterministic objective, constraint projection and projected
//! natural-gradient descent over the sensing protocol.

use std::path::Path;

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{RapidError, Result};
use crate::information::{qcrb_wmse, t2_eff, InfoMatrix, QCRB_LAMBDA};
use crate::scenario::{Scenario, StepEval, StepStates};
use crate::sensing::StepControl;
use crate::signal::SignalParams;

/// Coordinates per step: Ω_x, Ω_y, T, S.
pub const COORDS_PER_STEP: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    /// rad/µs
    pub u_max: f64,
    /// Σ T‖u‖², rad²/µs
    pub u_tot_max: f64,
    /// µs
    pub t_min: f64,
    /// µs
    pub t_tot: f64,
    /// photons
    pub s_max: f64,
    /// µs
    pub base_t2: f64,
    /// µs
    pub t1: f64,
}

impl Default for ConstraintSet {
    fn default() -> Self {
        Self {
            u_max: 2.0 * std::f64::consts::PI * 20.0,
            u_tot_max: 0.05,
            t_min: 0.1,
            t_tot: 10_000.0,
            s_max: crate::measurement::DEFAULT_S_MAX,
            base_t2: 200.0,
            t1: 5000.0,
        }
    }
}

impl ConstraintSet {
    pub fn t2_eff(&self, n_pi: usize) -> f64 {
        t2_eff(self.base_t2, n_pi, self.t1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub steps: Vec<StepControl>,
}

impl Protocol {
    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn total_time(&self) -> f64 {
        self.steps.iter().map(|s| s.duration).sum()
    }

    pub fn energy(&self) -> f64 {
        self.steps.iter().map(|s| s.duration * (s.u[0] * s.u[0] + s.u[1] * s.u[1])).sum()
    }

    pub fn coords(&self) -> Vec<f64> {
        self.steps.iter().flat_map(|s| [s.u[0], s.u[1], s.duration, s.mean_photons]).collect()
    }

    pub fn with_coords(&self, c: &[f64]) -> Self {
        let steps = self
            .steps
            .iter()
            .zip(c.chunks(COORDS_PER_STEP))
            .map(|(s, v)| StepControl { u: [v[0], v[1]], duration: v[2], mean_photons: v[3], ..*s })
            .collect();
        Self { steps }
    }

    /// Equal-duration start: T = min(T₂/2, T_tot/N_s), u at 10% of u_max, S at S_max/2.
    pub fn initial(n_steps: usize, n_pi: usize, c: &ConstraintSet) -> Self {
        let t = (0.5 * c.base_t2).min(c.t_tot / n_steps as f64);
        let u = 0.1 * c.u_max;
        let step = StepControl { u: [u, u], duration: t, n_pi, mean_photons: 0.5 * c.s_max, beta: 0.0 };
        Self { steps: vec![step; n_steps] }
    }

    /// Undriven Ramsey steps of equal length T₂/2 at full photon budget.
    pub fn uniform_ramsey(n_steps: usize, c: &ConstraintSet) -> Self {
        let t = (0.5 * c.base_t2).min(c.t_tot / n_steps as f64);
        Self { steps: vec![StepControl::ramsey(t, c.s_max); n_steps] }
    }

    /// Same duration and photon number for every step, no drive.
    pub fn fixed(n_steps: usize, duration: f64, n_pi: usize, mean_photons: f64) -> Self {
        let s = StepControl { n_pi, ..StepControl::ramsey(duration, mean_photons) };
        Self { steps: vec![s; n_steps] }
    }
}

/// Audit of every resource constraint.
pub fn is_feasible(x: &Protocol, c: &ConstraintSet, tol: f64) -> bool {
    x.steps.iter().all(|s| {
        s.u.iter().all(|v| v.abs() <= c.u_max * (1.0 + tol))
            && s.duration >= c.t_min * (1.0 - tol)
            && s.duration <= c.t2_eff(s.n_pi) * (1.0 + tol)
            && s.mean_photons >= 0.0
            && s.mean_photons <= c.s_max * (1.0 + tol)
    }) && x.energy() <= c.u_tot_max * (1.0 + tol)
        && x.total_time() <= c.t_tot * (1.0 + tol)
}

/// Box clamps, then alternating energy and time rescaling.
pub fn project_constraints(x: &Protocol, c: &ConstraintSet) -> Result<Protocol> {
    project_with_prefix(x, 0, c)
}

/// Projection that leaves the first `pinned` steps untouched (already
/// executed) and fits the rest into what remains of the budgets.
pub fn project_with_prefix(x: &Protocol, pinned: usize, c: &ConstraintSet) -> Result<Protocol> {
    let n = x.n_steps();
    let pinned = pinned.min(n);
    let fixed_time: f64 = x.steps[..pinned].iter().map(|s| s.duration).sum();
    if fixed_time + (n - pinned) as f64 * c.t_min > c.t_tot * (1.0 + 1e-12) {
        return Err(RapidError::InfeasibleBudget { n_steps: n, t_min: c.t_min, t_tot: c.t_tot });
    }
    let energy_of = |s: &StepControl| s.duration * (s.u[0] * s.u[0] + s.u[1] * s.u[1]);
    let fixed_energy: f64 = x.steps[..pinned].iter().map(energy_of).sum();
    let mut steps = x.steps.clone();
    for s in &mut steps[pinned..] {
        *s = StepControl {
            u: s.u.map(|v| v.clamp(-c.u_max, c.u_max)),
            duration: s.duration.clamp(c.t_min, c.t2_eff(s.n_pi)),
            mean_photons: s.mean_photons.clamp(0.0, c.s_max),
            ..*s
        };
    }
    const SLACK: f64 = 1e-12;
    for _ in 0..8 {
        let mut changed = false;
        let free = &mut steps[pinned..];
        let energy: f64 = free.iter().map(energy_of).sum();
        if fixed_energy + energy > c.u_tot_max * (1.0 + SLACK) {
            let f = ((c.u_tot_max - fixed_energy).max(0.0) / energy).sqrt();
            free.iter_mut().for_each(|s| s.u = s.u.map(|v| v * f));
            changed = true;
        }
        let total: f64 = free.iter().map(|s| s.duration).sum();
        if fixed_time + total > c.t_tot * (1.0 + SLACK) {
            let f = (c.t_tot - fixed_time) / total;
            free.iter_mut().for_each(|s| s.duration = (s.duration * f).max(c.t_min));
            changed = true;
        }
        if !changed {
            break;
        }
    }
    Ok(Protocol { steps })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    /// detection weight α
    pub alpha: f64,
    /// estimation weight β
    pub beta: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 0.5 }
    }
}

/// Per-step contributions: shots·KL(q₁‖q₀) and shots·J_n, with the states kept
/// so photon-number changes need no re-propagation.
#[derive(Clone, Debug)]
struct StepParts {
    kl: f64,
    qfim: InfoMatrix,
    q1: [f64; 4],
    states: StepStates,
}

fn parts_from_states(sc: &Scenario, states: StepStates, s: &StepControl) -> StepParts {
    let e: StepEval = states.eval(sc.phys.eta, s);
    let shots = sc.shots_per_step as f64;
    StepParts { kl: shots * e.kl(), qfim: e.qfim * shots, q1: e.q1, states }
}

fn step_parts(sc: &Scenario, xi0: &SignalParams, n: usize, s: &StepControl) -> Result<StepParts> {
    Ok(parts_from_states(sc, sc.step_states(xi0, n, s)?, s))
}

fn combine(sc: &Scenario, w: &ObjectiveWeights, kl: f64, j: &InfoMatrix) -> Result<f64> {
    let est = if w.beta != 0.0 { w.beta * qcrb_wmse(j, &sc.weight(), QCRB_LAMBDA)? } else { 0.0 };
    Ok(-w.alpha * kl + est)
}

/// J_det = −α·log Λ(E[y]) + β·Tr(W J_total⁻¹), with the likelihood ratio
/// evaluated at the expected outcome frequencies under H₁.
pub fn objective_det(x: &Protocol, sc: &Scenario, xi0: &SignalParams, w: &ObjectiveWeights) -> Result<f64> {
    let parts = all_parts(x, sc, xi0)?;
    let (kl, j) = totals(&parts);
    combine(sc, w, kl, &j)
}

fn all_parts(x: &Protocol, sc: &Scenario, xi0: &SignalParams) -> Result<Vec<StepParts>> {
    x.steps.par_iter().enumerate().map(|(n, s)| step_parts(sc, xi0, n, s)).collect()
}

fn totals(parts: &[StepParts]) -> (f64, InfoMatrix) {
    parts.iter().fold((0.0, InfoMatrix::zeros()), |(k, j), p| (k + p.kl, j + p.qfim))
}

/// Finite-difference steps for (Ω_x, Ω_y, T, S).
pub const PROTOCOL_FD: [f64; 4] = [1e-5, 1e-5, 1e-2, 1e-2];

/// Central-difference gradient together with the protocol-space metric blocks.
pub struct GradientInfo {
    pub grad: Vec<f64>,
    /// per step, the outcome-distribution Fisher metric over that step's coordinates
    pub metric: Vec<Matrix4<f64>>,
}

pub fn grad_objective(x: &Protocol, sc: &Scenario, xi0: &SignalParams, w: &ObjectiveWeights) -> Result<GradientInfo> {
    let parts = all_parts(x, sc, xi0)?;
    let (kl, j) = totals(&parts);
    let coords = x.coords();
    let shots = sc.shots_per_step as f64;
    let per_coord: Vec<(f64, [f64; 4])> = (0..coords.len())
        .into_par_iter()
        .map(|i| -> Result<(f64, [f64; 4])> {
            let n = i / COORDS_PER_STEP;
            let k = i % COORDS_PER_STEP;
            let h = PROTOCOL_FD[k];
            let eval = |sign: f64| -> Result<(f64, [f64; 4])> {
                let mut c = coords[n * COORDS_PER_STEP..(n + 1) * COORDS_PER_STEP].to_vec();
                c[k] += sign * h;
                let s = StepControl { u: [c[0], c[1]], duration: c[2], mean_photons: c[3], ..x.steps[n] };
                let p = if k == 3 { parts_from_states(sc, parts[n].states.clone(), &s) } else { step_parts(sc, xi0, n, &s)? };
                let f = combine(sc, w, kl - parts[n].kl + p.kl, &(j - parts[n].qfim + p.qfim))?;
                Ok((f, p.q1))
            };
            let (fp, qp) = eval(1.0)?;
            let (fm, qm) = eval(-1.0)?;
            Ok(((fp - fm) / (2.0 * h), std::array::from_fn(|k| (qp[k] - qm[k]) / (2.0 * h))))
        })
        .collect::<Result<_>>()?;
    let grad = per_coord.iter().map(|(g, _)| *g).collect();
    let metric = (0..x.n_steps())
        .map(|n| {
            let q = parts[n].q1;
            Matrix4::from_fn(|a, b| {
                let da = per_coord[n * COORDS_PER_STEP + a].1;
                let db = per_coord[n * COORDS_PER_STEP + b].1;
                shots * (0..4).filter(|&k| q[k] > 1e-300).map(|k| da[k] * db[k] / q[k]).sum::<f64>()
            })
        })
        .collect();
    Ok(GradientInfo { grad, metric })
}

/// (M + λ_m I)⁻¹ g with M block diagonal; an indefinite block falls back to g/λ_m.
pub fn natural_precondition(g: &[f64], metric: &[Matrix4<f64>], metric_reg: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(g.len());
    for (n, m) in metric.iter().enumerate() {
        let gb = Vector4::from_column_slice(&g[n * COORDS_PER_STEP..(n + 1) * COORDS_PER_STEP]);
        let a = m + Matrix4::identity() * metric_reg;
        let d = match a.cholesky() {
            Some(ch) => ch.solve(&gb),
            None => gb / metric_reg,
        };
        out.extend(d.iter());
    }
    out
}

/// Natural unit of every coordinate: the drive amplitude that spends the whole
/// energy budget, the step's coherence limit, and the photon ceiling.
pub fn coordinate_scales(x: &Protocol, c: &ConstraintSet) -> Vec<f64> {
    let u = if c.u_tot_max.is_finite() && c.u_tot_max > 0.0 { (c.u_tot_max / c.t_tot).sqrt().min(c.u_max) } else { c.u_max };
    x.steps.iter().flat_map(|s| [u, u, c.t2_eff(s.n_pi), c.s_max]).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Config {
    /// K₁
    pub k1: usize,
    /// η₀ in η_j = η₀/√j
    pub eta0: f64,
    /// λ_m
    pub metric_reg: f64,
    pub backtrack_factor: f64,
    pub backtrack_tries: usize,
    /// stop when the projected-gradient norm falls below this
    pub tol: f64,
    /// or below this fraction of its initial value
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self { k1: 300, eta0: 5.0, metric_reg: 0.1, backtrack_factor: 0.5, backtrack_tries: 20, tol: 1e-12, rel_tol: 1e-3, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub step_size: f64,
    pub feasible: u8,
}

/// Norm of the gradient mapping x − P(x − g) in scaled coordinates; zero
/// exactly at constrained stationary points.
pub fn projected_grad_norm(x: &Protocol, g: &[f64], c: &ConstraintSet) -> Result<f64> {
    let d = coordinate_scales(x, c);
    let xc = x.coords();
    let moved: Vec<f64> = xc.iter().zip(g).zip(&d).map(|((a, b), s)| a - b * s * s).collect();
    let p = project_constraints(&x.with_coords(&moved), c)?.coords();
    Ok(xc.iter().zip(&p).zip(&d).map(|((a, b), s)| ((a - b) / s).powi(2)).sum::<f64>().sqrt())
}

/// Projected stochastic natural-gradient descent with backtracking; returns
/// the best iterate and the trace. Steps are taken in scaled coordinates.
pub fn psngd_run(x0: &Protocol, sc: &Scenario, xi0: &SignalParams, w: &ObjectiveWeights, cfg: &Stage1Config) -> Result<(Protocol, Vec<TraceRow>)> {
    let c = &sc.constraints;
    let mut x = project_constraints(x0, c)?;
    let mut f = objective_det(&x, sc, xi0, w)?;
    let mut trace = Vec::new();
    let mut last_step = 0.0;
    for j in 1..=cfg.k1 {
        let gi = grad_objective(&x, sc, xi0, w)?;
        let gnorm = projected_grad_norm(&x, &gi.grad, c)?;
        trace.push(TraceRow { iteration: j - 1, objective: f, grad_norm: gnorm, step_size: last_step, feasible: is_feasible(&x, c, 1e-9) as u8 });
        let g0 = trace[0].grad_norm;
        if gnorm < cfg.tol || gnorm <= cfg.rel_tol * g0 {
            break;
        }
        let scales = coordinate_scales(&x, c);
        let gs: Vec<f64> = gi.grad.iter().zip(&scales).map(|(g, s)| g * s).collect();
        let ms: Vec<Matrix4<f64>> = gi
            .metric
            .iter()
            .enumerate()
            .map(|(n, m)| {
                let d = Matrix4::from_diagonal(&Vector4::from_column_slice(&scales[n * COORDS_PER_STEP..(n + 1) * COORDS_PER_STEP]));
                d * m * d
            })
            .collect();
        let d = natural_precondition(&gs, &ms, cfg.metric_reg);
        let mut eta = cfg.eta0 / (j as f64).sqrt();
        last_step = 0.0;
        for _ in 0..cfg.backtrack_tries {
            let cand: Vec<f64> = x.coords().iter().zip(&d).zip(&scales).map(|((a, b), s)| a - eta * b * s).collect();
            let xn = project_constraints(&x.with_coords(&cand), c)?;
            let fnew = objective_det(&xn, sc, xi0, w)?;
            if fnew <= f {
                x = xn;
                f = fnew;
                last_step = eta;
                break;
            }
            eta *= cfg.backtrack_factor;
        }
    }
    Ok((x, trace))
}

pub fn write_trace_csv(rows: &[TraceRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| RapidError::Io(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| RapidError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
