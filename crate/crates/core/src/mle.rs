//! Maximum-likelihood fitting by mini-batch SGD on the log-loss of
//! predicted expected responses.
//!
//! Both families are optimized over unconstrained coordinates. For Beta3 the
//! abilities and difficulties are carried as log-odds `u = logit θ`,
//! `v = logit δ`, which turns the ICC into `logistic(a (u - v))` and keeps
//! `θ, δ ∈ (0, 1)` by construction. For 2PL-ND the coordinates are the
//! parameters themselves.

use rand::seq::SliceRandom;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::icc::{logistic, logit};
use crate::params::{Family, ModelParams};
use crate::response::{Observation, ResponseMatrix};
use crate::rng::{self, Rng};

/// Largest log-odds magnitude a Beta3 ability or difficulty may take.
/// `logistic(13.8)` is just inside the `1 - 1e-6` bound.
pub const MAX_LOGIT: f64 = 13.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    /// `c / sqrt(t)` at iteration `t = 1, 2, ...`
    AdaptiveInvSqrt { c: f64 },
    Constant { eta: f64 },
}

impl LrSchedule {
    pub fn rate(&self, t: usize) -> f64 {
        match *self {
            LrSchedule::AdaptiveInvSqrt { c } => c / (t as f64).sqrt(),
            LrSchedule::Constant { eta } => eta,
        }
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::AdaptiveInvSqrt { c: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr_schedule: LrSchedule,
    pub clip_epsilon: f64,
    pub seed: u64,
    pub family: Family,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            iterations: 2500,
            batch_size: 2000,
            lr_schedule: LrSchedule::default(),
            clip_epsilon: 1e-3,
            seed: 0,
            family: Family::Beta3,
        }
    }
}

impl MleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::invalid("iterations", "must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 0.1) {
            return Err(Error::invalid(
                "clip_epsilon",
                format!("{} is outside (0, 0.1)", self.clip_epsilon),
            ));
        }
        let rate = match self.lr_schedule {
            LrSchedule::AdaptiveInvSqrt { c } => c,
            LrSchedule::Constant { eta } => eta,
        };
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::invalid("lr_schedule", "rate must be positive"));
        }
        Ok(())
    }
}

/// Correct/incorrect counts per respondent and per item, used to draw
/// informative Beta3 starting points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountInit {
    pub correct_per_respondent: Vec<u32>,
    pub incorrect_per_respondent: Vec<u32>,
    pub correct_per_item: Vec<u32>,
    pub incorrect_per_item: Vec<u32>,
}

/// Counts responses at or above `threshold` as correct. Zero counts are
/// lifted to one so every induced Beta is proper.
pub fn count_statistics(data: &ResponseMatrix, threshold: f64) -> CountInit {
    let mut c = CountInit {
        correct_per_respondent: vec![0; data.num_respondents()],
        incorrect_per_respondent: vec![0; data.num_respondents()],
        correct_per_item: vec![0; data.num_items()],
        incorrect_per_item: vec![0; data.num_items()],
    };
    for o in data.observations() {
        if o.response >= threshold {
            c.correct_per_respondent[o.respondent] += o.multiplicity;
            c.correct_per_item[o.item] += o.multiplicity;
        } else {
            c.incorrect_per_respondent[o.respondent] += o.multiplicity;
            c.incorrect_per_item[o.item] += o.multiplicity;
        }
    }
    for v in [
        &mut c.correct_per_respondent,
        &mut c.incorrect_per_respondent,
        &mut c.correct_per_item,
        &mut c.incorrect_per_item,
    ] {
        for x in v.iter_mut() {
            *x = (*x).max(1);
        }
    }
    c
}

/// Draws starting parameters.
///
/// Beta3: `θᵢ ~ Beta(m⁺ᵢ, m⁻ᵢ)`, `δⱼ ~ Beta(n⁻ⱼ, n⁺ⱼ)` (items answered
/// correctly by most respondents start easy), `aⱼ ~ N(1, 1)`.
/// 2PL-ND: `θᵢ, δⱼ ~ N(0, 1)`, `aⱼ ~ N(1, 1)`.
pub fn initialize_params(counts: &CountInit, family: Family, rng: &mut Rng) -> ModelParams {
    let (u, v, a) = init_coordinates(counts, family, rng);
    coordinates_to_params(family, &u, &v, &a)
}

fn init_coordinates(counts: &CountInit, family: Family, rng: &mut Rng) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let std_normal = Normal::new(0.0_f64, 1.0).expect("valid normal");
    let disc = Normal::new(1.0, 1.0).expect("valid normal");
    let m = counts.correct_per_respondent.len();
    let n = counts.correct_per_item.len();
    let (u, v) = match family {
        Family::Beta3 => {
            let draw = |pos: u32, neg: u32, rng: &mut Rng| {
                let b = Beta::new(f64::from(pos), f64::from(neg)).expect("counts are >= 1");
                logit(b.sample(rng)).clamp(-MAX_LOGIT, MAX_LOGIT)
            };
            let u: Vec<f64> = (0..m)
                .map(|i| {
                    draw(
                        counts.correct_per_respondent[i],
                        counts.incorrect_per_respondent[i],
                        rng,
                    )
                })
                .collect();
            let v: Vec<f64> = (0..n)
                .map(|j| draw(counts.incorrect_per_item[j], counts.correct_per_item[j], rng))
                .collect();
            (u, v)
        }
        Family::TwoPlNd => {
            let u = (0..m).map(|_| std_normal.sample(rng)).collect();
            let v = (0..n).map(|_| std_normal.sample(rng)).collect();
            (u, v)
        }
    };
    let a = (0..n).map(|_| disc.sample(rng)).collect();
    (u, v, a)
}

fn coordinates_to_params(family: Family, u: &[f64], v: &[f64], a: &[f64]) -> ModelParams {
    let (abilities, difficulties) = match family {
        Family::Beta3 => (
            u.iter().map(|&x| logistic(x)).collect(),
            v.iter().map(|&x| logistic(x)).collect(),
        ),
        Family::TwoPlNd => (u.to_vec(), v.to_vec()),
    };
    ModelParams::new(family, abilities, difficulties, a.to_vec())
        .expect("optimizer coordinates are finite and bounded")
}

/// Mean soft-label cross-entropy `-[p ln p̂ + (1-p) ln(1-p̂)]`.
///
/// Predictions must already be clipped away from 0 and 1.
pub fn log_loss(predicted: &[f64], observed: &[f64]) -> Result<f64> {
    if predicted.len() != observed.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: observed.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::InsufficientData("log-loss of an empty sample".into()));
    }
    let total: f64 = predicted
        .iter()
        .zip(observed)
        .map(|(&q, &p)| cross_entropy(q, p))
        .sum();
    Ok(total / predicted.len() as f64)
}

#[inline]
fn cross_entropy(q: f64, p: f64) -> f64 {
    // 0·ln(0) terms vanish; written out so binary responses never hit NaN.
    let mut l = 0.0;
    if p > 0.0 {
        l -= p * q.ln();
    }
    if p < 1.0 {
        l -= (1.0 - p) * (-q).ln_1p();
    }
    l
}

/// Unconstrained optimizer state: `u` per respondent, `v` and `a` per item.
#[derive(Debug, Clone, PartialEq)]
pub struct MleState {
    pub family: Family,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleGradient {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
}

impl MleState {
    pub fn to_params(&self) -> ModelParams {
        coordinates_to_params(self.family, &self.u, &self.v, &self.a)
    }

    fn prediction(&self, o: &Observation) -> f64 {
        logistic(self.a[o.item] * (self.u[o.respondent] - self.v[o.item]))
    }

    /// Weighted mean clipped log-loss over `batch` and its exact gradient.
    /// Clipped predictions contribute no gradient.
    pub fn loss_and_gradient(&self, batch: &[Observation], clip: f64) -> (f64, MleGradient) {
        let mut g = MleGradient {
            u: vec![0.0; self.u.len()],
            v: vec![0.0; self.v.len()],
            a: vec![0.0; self.a.len()],
        };
        let total_w: f64 = batch.iter().map(Observation::weight).sum();
        let mut loss = 0.0;
        for o in batch {
            let (i, j) = (o.respondent, o.item);
            let diff = self.u[i] - self.v[j];
            let q = logistic(self.a[j] * diff);
            let w = o.weight() / total_w;
            let qc = q.clamp(clip, 1.0 - clip);
            loss += w * cross_entropy(qc, o.response);
            if q > clip && q < 1.0 - clip {
                let dz = w * (q - o.response);
                g.u[i] += dz * self.a[j];
                g.v[j] -= dz * self.a[j];
                g.a[j] += dz * diff;
            }
        }
        (loss, g)
    }

    /// Weighted mean clipped log-loss over `obs`.
    pub fn loss(&self, obs: &[Observation], clip: f64) -> f64 {
        let total_w: f64 = obs.iter().map(Observation::weight).sum();
        obs.iter()
            .map(|o| o.weight() * cross_entropy(self.prediction(o).clamp(clip, 1.0 - clip), o.response))
            .sum::<f64>()
            / total_w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleFit {
    pub params: ModelParams,
    /// Mini-batch loss before each update, one entry per iteration.
    pub loss_trace: Vec<f64>,
    pub final_state: MleState,
}

/// Runs `cfg.iterations` SGD steps on shuffled mini-batches.
pub fn fit_mle(data: &ResponseMatrix, cfg: &MleConfig) -> Result<MleFit> {
    cfg.validate()?;
    let mut rng = rng::seeded(cfg.seed);
    let counts = count_statistics(data, 0.5);
    let (u, v, a) = init_coordinates(&counts, cfg.family, &mut rng);
    let mut state = MleState {
        family: cfg.family,
        u,
        v,
        a,
    };

    let obs = data.observations();
    let batch_size = cfg.batch_size.min(obs.len());
    let mut order: Vec<usize> = (0..obs.len()).collect();
    let mut cursor = obs.len();
    let mut batch = Vec::with_capacity(batch_size);
    let mut loss_trace = Vec::with_capacity(cfg.iterations);

    for t in 1..=cfg.iterations {
        if cursor >= obs.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + batch_size).min(obs.len());
        batch.clear();
        batch.extend(order[cursor..end].iter().map(|&k| obs[k]));
        cursor = end;

        let (loss, g) = state.loss_and_gradient(&batch, cfg.clip_epsilon);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss at iteration {t}")));
        }
        loss_trace.push(loss);

        let lr = cfg.lr_schedule.rate(t);
        let bounded = cfg.family == Family::Beta3;
        for (x, d) in state.u.iter_mut().zip(&g.u) {
            *x -= lr * d;
            if bounded {
                *x = x.clamp(-MAX_LOGIT, MAX_LOGIT);
            }
        }
        for (x, d) in state.v.iter_mut().zip(&g.v) {
            *x -= lr * d;
            if bounded {
                *x = x.clamp(-MAX_LOGIT, MAX_LOGIT);
            }
        }
        for (x, d) in state.a.iter_mut().zip(&g.a) {
            *x -= lr * d;
        }
    }

    if state.a.iter().chain(&state.u).chain(&state.v).any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite parameter after fitting".into()));
    }
    Ok(MleFit {
        params: state.to_params(),
        loss_trace,
        final_state: state,
    })
}

/// Expected responses of fitted parameters for `(respondent, item)` pairs.
pub fn predict(params: &ModelParams, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    params.predict(pairs)
}
