//! Design-mode constraint handling: logistic squashing for free designs,
//! Gumbel-softmax relaxation of the economic hybrid sets, and
//! straight-through hard sampling.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grad::{rows_loss_and_grad, GradError};
use crate::kinematics::{DhRow, JointVector, FREE_LENGTH_MAX};
use crate::objective::{CollisionWorld, LossWeights};
use crate::scene::Scene;

pub const TEMPERATURE_START: f64 = 3.0;
pub const TEMPERATURE_END: f64 = 0.01;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `lo + (hi − lo)·σ(raw)`.
pub fn squash_free(raw: f64, lo: f64, hi: f64) -> f64 {
    debug_assert!(lo < hi);
    lo + (hi - lo) * sigmoid(raw)
}

pub fn squash_free_derivative(raw: f64, lo: f64, hi: f64) -> f64 {
    let s = sigmoid(raw);
    (hi - lo) * s * (1.0 - s)
}

/// Inverse of [`squash_free`], with the target pulled slightly inside the
/// bounds so that the raw value stays finite.
pub fn unsquash_free(value: f64, lo: f64, hi: f64) -> f64 {
    let u = ((value - lo) / (hi - lo)).clamp(1e-6, 1.0 - 1e-6);
    (u / (1.0 - u)).ln()
}

/// Bounds of the free-mode `(d, a, α)` columns.
pub const FREE_BOUNDS: [(f64, f64); 3] = [(0.0, FREE_LENGTH_MAX), (-FREE_LENGTH_MAX, FREE_LENGTH_MAX), (-PI, PI)];

/// Free-mode rows from raw unconstrained values (three per row).
pub fn free_rows(raw: &[f64]) -> Vec<DhRow> {
    raw.chunks(3)
        .map(|r| {
            DhRow::new(
                squash_free(r[0], FREE_BOUNDS[0].0, FREE_BOUNDS[0].1),
                squash_free(r[1], FREE_BOUNDS[1].0, FREE_BOUNDS[1].1),
                squash_free(r[2], FREE_BOUNDS[2].0, FREE_BOUNDS[2].1),
            )
        })
        .collect()
}

pub fn free_raw(rows: &[DhRow]) -> Vec<f64> {
    rows.iter()
        .flat_map(|r| {
            let v = r.to_array();
            [0, 1, 2].map(|c| unsquash_free(v[c], FREE_BOUNDS[c].0, FREE_BOUNDS[c].1))
        })
        .collect()
}

/// Chain rule from row gradients to raw gradients.
pub fn free_backward(raw: &[f64], d_rows: &[[f64; 3]]) -> Vec<f64> {
    raw.iter()
        .enumerate()
        .map(|(i, &x)| {
            let (lo, hi) = FREE_BOUNDS[i % 3];
            d_rows[i / 3][i % 3] * squash_free_derivative(x, lo, hi)
        })
        .collect()
}

/// `−log(−log u)` per class.
pub fn gumbel_noise<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<f64> {
    (0..k)
        .map(|_| {
            let u: f64 = rng.random();
            let u = u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
            -(-u.ln()).ln()
        })
        .collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Vector–Jacobian product of softmax: `y ⊙ (dy − ⟨y, dy⟩)`.
pub fn softmax_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    y.iter().zip(dy).map(|(yi, di)| yi * (di - dot)).collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct GumbelSample {
    pub soft: Vec<f64>,
    /// One-hot of `argmax(soft)` when sampled hard.
    pub hard: Option<Vec<f64>>,
}

impl GumbelSample {
    /// The weights used for values: hard if present, otherwise soft.
    pub fn weights(&self) -> &[f64] {
        self.hard.as_deref().unwrap_or(&self.soft)
    }
}

pub fn gumbel_softmax_with_noise(logits: &[f64], noise: &[f64], tau: f64, hard: bool) -> GumbelSample {
    debug_assert!(tau > 0.0 && logits.len() >= 2 && logits.len() == noise.len());
    let z: Vec<f64> = logits.iter().zip(noise).map(|(l, g)| (l + g) / tau).collect();
    let soft = softmax(&z);
    let hard = hard.then(|| {
        let mut h = vec![0.0; soft.len()];
        h[argmax(&soft)] = 1.0;
        h
    });
    GumbelSample { soft, hard }
}

pub fn gumbel_softmax<R: Rng + ?Sized>(logits: &[f64], tau: f64, rng: &mut R, hard: bool) -> GumbelSample {
    let noise = gumbel_noise(rng, logits.len());
    gumbel_softmax_with_noise(logits, &noise, tau, hard)
}

/// Gradient with respect to the logits of a quantity whose gradient with
/// respect to the sample weights is `d_weights`. Straight-through: always
/// routed through the soft weights.
pub fn gumbel_softmax_backward(sample: &GumbelSample, tau: f64, d_weights: &[f64]) -> Vec<f64> {
    softmax_backward(&sample.soft, d_weights).into_iter().map(|x| x / tau).collect()
}

/// Economic length magnitude `0.1 + 0.3·σ(x)` in `[0.1, 0.4]`.
pub fn economic_branch(x: f64) -> f64 {
    0.1 + 0.3 * sigmoid(x)
}

pub fn economic_branch_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    0.3 * s * (1.0 - s)
}

/// `Σ w_c·value_c`.
pub fn economic_value(class_weights: &[f64], class_values: &[f64]) -> f64 {
    class_weights.iter().zip(class_values).map(|(w, v)| w * v).sum()
}

pub fn d_class_values(branch: f64) -> [f64; 2] {
    [0.0, branch]
}

pub fn a_class_values(branch: f64) -> [f64; 3] {
    [0.0, -branch, branch]
}

pub const ALPHA_CLASS_VALUES: [f64; 3] = [0.0, FRAC_PI_2, -FRAC_PI_2];

/// Linear schedule from 3 at step 0 to 0.01 at `total_steps`.
pub fn temperature(step: usize, total_steps: usize) -> f64 {
    if total_steps == 0 {
        return TEMPERATURE_END;
    }
    let f = (step.min(total_steps)) as f64 / total_steps as f64;
    TEMPERATURE_START + (TEMPERATURE_END - TEMPERATURE_START) * f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationState {
    pub class_logits: Vec<Vec<f64>>,
    pub temperature: f64,
    pub hard: bool,
}

impl RelaxationState {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature > 0.0) {
            return Err("temperature must be positive".into());
        }
        if self.class_logits.iter().flatten().any(|x| !x.is_finite()) {
            return Err("logits must be finite".into());
        }
        Ok(())
    }
}

/// Latent layout per row.
const D_LOGITS: std::ops::Range<usize> = 0..2;
const D_CONT: usize = 2;
const A_LOGITS: std::ops::Range<usize> = 3..6;
const A_CONT: usize = 6;
const ALPHA_LOGITS: std::ops::Range<usize> = 7..10;
pub const ECONOMIC_LATENTS_PER_ROW: usize = 10;
const NOISE_PER_ROW: usize = 8;

/// Economic-mode relaxation: per row, logits over `{0, branch}` for `d`,
/// `{0, −branch, +branch}` for `a`, `{0, π/2, −π/2}` for `α`, and one
/// continuous magnitude each for `d` and `a`. Gumbel noise is drawn once
/// and kept fixed, so the objective is a deterministic function of the
/// latents.
#[derive(Debug, Clone, PartialEq)]
pub struct EconomicRelaxation {
    pub latents: Vec<f64>,
    pub noise: Vec<f64>,
}

struct RowSample {
    d: GumbelSample,
    a: GumbelSample,
    alpha: GumbelSample,
}

/// Logit margin given to the class of an initial design.
const INIT_LOGIT: f64 = 2.0;

impl EconomicRelaxation {
    /// Latents centered on a valid economic design.
    pub fn from_rows<R: Rng + ?Sized>(rows: &[DhRow], rng: &mut R) -> Self {
        let mut latents = vec![0.0; rows.len() * ECONOMIC_LATENTS_PER_ROW];
        for (i, r) in rows.iter().enumerate() {
            let l = &mut latents[i * ECONOMIC_LATENTS_PER_ROW..(i + 1) * ECONOMIC_LATENTS_PER_ROW];
            let cont = |v: f64| unsquash_free(v.abs(), 0.1, 0.4);
            let d_class = usize::from(r.d != 0.0);
            l[D_LOGITS.start + d_class] = INIT_LOGIT;
            l[D_CONT] = if r.d != 0.0 { cont(r.d) } else { 0.0 };
            let a_class = if r.a == 0.0 { 0 } else if r.a < 0.0 { 1 } else { 2 };
            l[A_LOGITS.start + a_class] = INIT_LOGIT;
            l[A_CONT] = if r.a != 0.0 { cont(r.a) } else { 0.0 };
            let al_class = ALPHA_CLASS_VALUES.iter().position(|v| *v == r.alpha).unwrap_or(0);
            l[ALPHA_LOGITS.start + al_class] = INIT_LOGIT;
        }
        let noise = gumbel_noise(rng, rows.len() * NOISE_PER_ROW);
        EconomicRelaxation { latents, noise }
    }

    pub fn dof(&self) -> usize {
        self.latents.len() / ECONOMIC_LATENTS_PER_ROW
    }

    fn sample_row(&self, i: usize, tau: f64, hard: bool) -> RowSample {
        let l = &self.latents[i * ECONOMIC_LATENTS_PER_ROW..(i + 1) * ECONOMIC_LATENTS_PER_ROW];
        let g = &self.noise[i * NOISE_PER_ROW..(i + 1) * NOISE_PER_ROW];
        RowSample {
            d: gumbel_softmax_with_noise(&l[D_LOGITS], &g[0..2], tau, hard),
            a: gumbel_softmax_with_noise(&l[A_LOGITS], &g[2..5], tau, hard),
            alpha: gumbel_softmax_with_noise(&l[ALPHA_LOGITS], &g[5..8], tau, hard),
        }
    }

    pub fn rows(&self, tau: f64, hard: bool) -> Vec<DhRow> {
        (0..self.dof())
            .map(|i| {
                let l = &self.latents[i * ECONOMIC_LATENTS_PER_ROW..];
                let s = self.sample_row(i, tau, hard);
                DhRow::new(
                    economic_value(s.d.weights(), &d_class_values(economic_branch(l[D_CONT]))),
                    economic_value(s.a.weights(), &a_class_values(economic_branch(l[A_CONT]))),
                    economic_value(s.alpha.weights(), &ALPHA_CLASS_VALUES),
                )
            })
            .collect()
    }

    /// Hard classes (argmax of perturbed logits, independent of τ): always a
    /// member of the economic hybrid sets.
    pub fn harden(&self) -> Vec<DhRow> {
        self.rows(1.0, true)
    }

    /// Gradient on the latents given gradients on the produced rows.
    pub fn backward(&self, tau: f64, hard: bool, d_rows: &[[f64; 3]]) -> Vec<f64> {
        let mut out = vec![0.0; self.latents.len()];
        for (i, dr) in d_rows.iter().enumerate() {
            let base = i * ECONOMIC_LATENTS_PER_ROW;
            let l = &self.latents[base..base + ECONOMIC_LATENTS_PER_ROW];
            let s = self.sample_row(i, tau, hard);
            let (bd, ba) = (economic_branch(l[D_CONT]), economic_branch(l[A_CONT]));

            let dw: Vec<f64> = d_class_values(bd).iter().map(|v| v * dr[0]).collect();
            for (k, g) in gumbel_softmax_backward(&s.d, tau, &dw).into_iter().enumerate() {
                out[base + D_LOGITS.start + k] = g;
            }
            out[base + D_CONT] = dr[0] * s.d.weights()[1] * economic_branch_derivative(l[D_CONT]);

            let dw: Vec<f64> = a_class_values(ba).iter().map(|v| v * dr[1]).collect();
            for (k, g) in gumbel_softmax_backward(&s.a, tau, &dw).into_iter().enumerate() {
                out[base + A_LOGITS.start + k] = g;
            }
            let wa = s.a.weights();
            out[base + A_CONT] = dr[1] * (wa[2] - wa[1]) * economic_branch_derivative(l[A_CONT]);

            let dw: Vec<f64> = ALPHA_CLASS_VALUES.iter().map(|v| v * dr[2]).collect();
            for (k, g) in gumbel_softmax_backward(&s.alpha, tau, &dw).into_iter().enumerate() {
                out[base + ALPHA_LOGITS.start + k] = g;
            }
        }
        out
    }

    /// Objective value and latent gradient of the relaxed design.
    pub fn loss_and_grad(
        &self,
        scene: &Scene,
        world: &CollisionWorld,
        q: &[JointVector],
        w: &LossWeights,
        tau: f64,
        hard: bool,
    ) -> Result<(f64, Vec<f64>, Vec<Vec<f64>>), GradError> {
        let rows = self.rows(tau, hard);
        let g = rows_loss_and_grad(scene, world, &rows, q, w)?;
        let d_latent = self.backward(tau, hard, &g.d_params);
        Ok((g.value, d_latent, g.d_q))
    }
}
