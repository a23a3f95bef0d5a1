//! Soft actor-critic with twin critics, a squashed-Gaussian actor and a
//! uniform replay buffer.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::belief::STATE_DIM;
use crate::error::{RapidError, Result};
use crate::nn::{Adam, Mlp};

/// (Δu_x, Δu_y, ΔT, ΔS, Δbasis), each normalized to [−1, 1].
pub const ACTION_DIM: usize = 5;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const SQUASH_EPS: f64 = 1e-6;
const LN_2PI: f64 = 1.8378770664093453;
pub const DIVERGENCE_LIMIT: f64 = 1e6;
pub const CHECKPOINT_MAGIC: &[u8; 9] = b"RAPIDPOL1";

#[derive(Clone, Debug, PartialEq)]
pub struct Actor {
    pub net: Mlp,
}

/// Pre-squash Gaussian parameters for one state.
struct Heads {
    mean: [f64; ACTION_DIM],
    log_std: [f64; ACTION_DIM],
    /// false where the log-std was clamped (no gradient flows)
    free: [bool; ACTION_DIM],
}

fn heads(out: &[f64]) -> Heads {
    let mut h = Heads { mean: [0.0; ACTION_DIM], log_std: [0.0; ACTION_DIM], free: [true; ACTION_DIM] };
    for i in 0..ACTION_DIM {
        h.mean[i] = out[i];
        let ls = out[ACTION_DIM + i];
        h.log_std[i] = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
        h.free[i] = (LOG_STD_MIN..=LOG_STD_MAX).contains(&ls);
    }
    h
}

/// tanh(z) and log π for a fixed standard-normal draw.
fn squash(h: &Heads, eps: &[f64; ACTION_DIM]) -> ([f64; ACTION_DIM], f64) {
    let mut a = [0.0; ACTION_DIM];
    let mut logp = 0.0;
    for i in 0..ACTION_DIM {
        let z = h.mean[i] + h.log_std[i].exp() * eps[i];
        a[i] = z.tanh();
        logp += -0.5 * eps[i] * eps[i] - h.log_std[i] - 0.5 * LN_2PI - (1.0 - a[i] * a[i] + SQUASH_EPS).ln();
    }
    (a, logp)
}

pub fn draw_noise<R: Rng + ?Sized>(rng: &mut R) -> [f64; ACTION_DIM] {
    std::array::from_fn(|_| rng.sample(StandardNormal))
}

impl Actor {
    pub fn sizes(hidden: &[usize]) -> Vec<usize> {
        let mut s = vec![STATE_DIM];
        s.extend_from_slice(hidden);
        s.push(2 * ACTION_DIM);
        s
    }

    /// Random network with unit initial spread.
    pub fn cold<R: Rng + ?Sized>(hidden: &[usize], rng: &mut R) -> Self {
        Self { net: Mlp::new(&Self::sizes(hidden), rng) }
    }

    /// Output layer shrunk so the mean deviation starts near zero with a narrow spread.
    pub fn warm<R: Rng + ?Sized>(hidden: &[usize], rng: &mut R) -> Self {
        let mut net = Mlp::new(&Self::sizes(hidden), rng);
        let (w, b) = net.output_layer_mut();
        w.iter_mut().for_each(|v| *v *= 1e-3);
        for (i, v) in b.iter_mut().enumerate() {
            *v = if i < ACTION_DIM { 0.0 } else { -4.0 };
        }
        Self { net }
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: &[f64], rng: &mut R) -> ([f64; ACTION_DIM], f64) {
        let eps = draw_noise(rng);
        self.sample_with(s, &eps)
    }

    pub fn sample_with(&self, s: &[f64], eps: &[f64; ACTION_DIM]) -> ([f64; ACTION_DIM], f64) {
        squash(&heads(&self.net.forward(s)), eps)
    }

    /// tanh of the mean head: the deterministic action.
    pub fn mean_action(&self, s: &[f64]) -> [f64; ACTION_DIM] {
        heads(&self.net.forward(s)).mean.map(f64::tanh)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: [f64; ACTION_DIM],
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    pub capacity: usize,
    storage: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, storage: Vec::new(), next: 0 }
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<&Transition> {
        (0..batch).map(|_| &self.storage[rng.random_range(0..self.storage.len())]).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacConfig {
    pub temperature_tau: f64,
    pub discount_gamma: f64,
    pub target_smoothing_rho: f64,
    pub lr_q: f64,
    pub lr_pi: f64,
    pub batch: usize,
    pub gradient_steps: usize,
    /// training episodes
    pub k2: usize,
    pub hidden: Vec<usize>,
    pub buffer_capacity: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            temperature_tau: 0.05,
            discount_gamma: 0.99,
            target_smoothing_rho: 0.995,
            lr_q: 3e-4,
            lr_pi: 1e-4,
            batch: 256,
            gradient_steps: 10,
            k2: 200,
            hidden: vec![64, 64],
            buffer_capacity: 100_000,
        }
    }
}

fn critic_input(s: &[f64], a: &[f64; ACTION_DIM]) -> Vec<f64> {
    let mut x = s.to_vec();
    x.extend_from_slice(a);
    x
}

/// Mean squared Bellman error and its parameter gradient.
pub fn critic_loss_grad(q: &Mlp, batch: &[&Transition], targets: &[f64]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; q.params.len()];
    let mut loss = 0.0;
    let nb = batch.len() as f64;
    for (t, y) in batch.iter().zip(targets) {
        let (out, tape) = q.forward_tape(&critic_input(&t.s, &t.a));
        let e = out[0] - y;
        loss += e * e / nb;
        q.backward(&tape, &[2.0 * e / nb], &mut grad);
    }
    (loss, grad)
}

/// E[τ·log π(a|s) − min(Q₁, Q₂)(s, a)] with reparameterized actions, and its
/// gradient; returns (loss, grad, mean log π).
pub fn actor_loss_grad(actor: &Actor, q1: &Mlp, q2: &Mlp, batch: &[&Transition], eps: &[[f64; ACTION_DIM]], tau: f64) -> (f64, Vec<f64>, f64) {
    let mut grad = vec![0.0; actor.net.params.len()];
    let mut scratch1 = vec![0.0; q1.params.len()];
    let mut scratch2 = vec![0.0; q2.params.len()];
    let nb = batch.len() as f64;
    let (mut loss, mut mean_logp) = (0.0, 0.0);
    for (t, e) in batch.iter().zip(eps) {
        let (out, tape) = actor.net.forward_tape(&t.s);
        let h = heads(&out);
        let (a, logp) = squash(&h, e);
        let x = critic_input(&t.s, &a);
        let (v1, tp1) = q1.forward_tape(&x);
        let (v2, tp2) = q2.forward_tape(&x);
        let dq = if v1[0] <= v2[0] { q1.backward(&tp1, &[1.0], &mut scratch1) } else { q2.backward(&tp2, &[1.0], &mut scratch2) };
        loss += (tau * logp - v1[0].min(v2[0])) / nb;
        mean_logp += logp / nb;
        let mut g_out = vec![0.0; 2 * ACTION_DIM];
        for i in 0..ACTION_DIM {
            let ai = a[i];
            let dl_da = tau * 2.0 * ai / (1.0 - ai * ai + SQUASH_EPS) - dq[STATE_DIM + i];
            let dl_dz = dl_da * (1.0 - ai * ai);
            g_out[i] = dl_dz / nb;
            if h.free[i] {
                g_out[ACTION_DIM + i] = (dl_dz * h.log_std[i].exp() * e[i] - tau) / nb;
            }
        }
        actor.net.backward(&tape, &g_out, &mut grad);
    }
    (loss, grad, mean_logp)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Losses {
    pub actor: f64,
    pub critic: f64,
    pub entropy: f64,
}

#[derive(Clone, Debug)]
pub struct SacAgent {
    pub actor: Actor,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    opt_actor: Adam,
    opt_q1: Adam,
    opt_q2: Adam,
    pub cfg: SacConfig,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(actor: Actor, cfg: SacConfig, rng: &mut R) -> Self {
        let mut qs = vec![STATE_DIM + ACTION_DIM];
        qs.extend_from_slice(&cfg.hidden);
        qs.push(1);
        let q1 = Mlp::new(&qs, rng);
        let q2 = Mlp::new(&qs, rng);
        Self {
            opt_actor: Adam::new(actor.net.params.len(), cfg.lr_pi),
            opt_q1: Adam::new(q1.params.len(), cfg.lr_q),
            opt_q2: Adam::new(q2.params.len(), cfg.lr_q),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            actor,
            cfg,
        }
    }

    /// y = r + γ(1 − done)(min Q̄(s′, a′) − τ log π(a′|s′)).
    pub fn targets(&self, batch: &[&Transition], eps: &[[f64; ACTION_DIM]]) -> Vec<f64> {
        batch
            .iter()
            .zip(eps)
            .map(|(t, e)| {
                if t.done {
                    return t.r;
                }
                let (a, logp) = self.actor.sample_with(&t.s_next, e);
                let x = critic_input(&t.s_next, &a);
                let q = self.q1_target.forward(&x)[0].min(self.q2_target.forward(&x)[0]);
                t.r + self.cfg.discount_gamma * (q - self.cfg.temperature_tau * logp)
            })
            .collect()
    }

    pub fn soft_update(&mut self) {
        let rho = self.cfg.target_smoothing_rho;
        for (t, s) in [(&mut self.q1_target, &self.q1), (&mut self.q2_target, &self.q2)] {
            t.params.iter_mut().zip(&s.params).for_each(|(a, b)| *a = rho * *a + (1.0 - rho) * b);
        }
    }

    pub fn update<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<Losses> {
        let batch = buffer.sample(self.cfg.batch, rng);
        let eps_next: Vec<_> = (0..batch.len()).map(|_| draw_noise(rng)).collect();
        let y = self.targets(&batch, &eps_next);
        let (l1, g1) = critic_loss_grad(&self.q1, &batch, &y);
        let (l2, g2) = critic_loss_grad(&self.q2, &batch, &y);
        self.opt_q1.step(&mut self.q1.params, &g1);
        self.opt_q2.step(&mut self.q2.params, &g2);
        let eps: Vec<_> = (0..batch.len()).map(|_| draw_noise(rng)).collect();
        let (la, ga, logp) = actor_loss_grad(&self.actor, &self.q1, &self.q2, &batch, &eps, self.cfg.temperature_tau);
        self.opt_actor.step(&mut self.actor.net.params, &ga);
        self.soft_update();
        let critic = 0.5 * (l1 + l2);
        for (what, v) in [("critic loss", critic), ("actor loss", la)] {
            if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT {
                return Err(RapidError::DivergenceDetected { what: what.into(), value: v });
            }
        }
        Ok(Losses { actor: la, critic, entropy: -logp })
    }
}

/// Magic, layer count, layer sizes (u64), then parameters, all little-endian.
pub fn save_checkpoint(actor: &Actor, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(CHECKPOINT_MAGIC)?;
    f.write_all(&(actor.net.sizes.len() as u64).to_le_bytes())?;
    for s in &actor.net.sizes {
        f.write_all(&(*s as u64).to_le_bytes())?;
    }
    for p in &actor.net.params {
        f.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Actor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = || RapidError::Io(format!("{}: not a policy checkpoint", path.display()));
    if bytes.len() < 17 || &bytes[..9] != CHECKPOINT_MAGIC {
        return Err(bad());
    }
    let word = |i: usize| -> Result<[u8; 8]> { bytes.get(i..i + 8).and_then(|s| s.try_into().ok()).ok_or_else(bad) };
    let n_layers = u64::from_le_bytes(word(9)?) as usize;
    let mut pos = 17;
    let mut sizes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        sizes.push(u64::from_le_bytes(word(pos)?) as usize);
        pos += 8;
    }
    let n = Mlp::n_params(&sizes);
    if bytes.len() != pos + 8 * n {
        return Err(bad());
    }
    let params = (0..n).map(|k| word(pos + 8 * k).map(f64::from_le_bytes)).collect::<Result<_>>()?;
    Ok(Actor { net: Mlp { sizes, params } })
}
