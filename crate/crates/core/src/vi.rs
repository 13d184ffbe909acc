//! Coordinate-ascent variational inference for the Beta response model.
//!
//! Abilities and difficulties get logit-normal variational posteriors
//! (`θ = logistic(μ + σ z)`), discriminations get normal posteriors. Each
//! outer iteration first maximizes the local bound over the ability and
//! difficulty posteriors with the discrimination posteriors frozen,
//!
//! ```text
//! L₁ = Σᵢⱼ E_q[log p(pᵢⱼ | θᵢ, δⱼ)] + Σᵢ E_q[log p(θᵢ) - log q(θᵢ)] + Σⱼ E_q[log p(δⱼ) - log q(δⱼ)]
//! ```
//!
//! then maximizes the global bound over the discrimination posteriors with
//! the local posteriors frozen,
//!
//! ```text
//! L₂ = Σᵢⱼ E_q[log p(pᵢⱼ | aⱼ)] + Σⱼ E_q[log p(aⱼ) - log q(aⱼ)]
//! ```
//!
//! The likelihood in `L₂` runs over every observed pair. Expectations are
//! Monte-Carlo estimates under the reparameterization trick; every phase is
//! optimized with Adam. Priors are `θ, δ ~ Beta(1, 1)` and
//! `a ~ N(1, σ₀²)`.

use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::digamma;

use crate::adam::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::icc::logistic;
use crate::mle::MAX_LOGIT;
use crate::params::{Family, ModelParams};
use crate::response::{Observation, ResponseMatrix};
use crate::rng::{self, derive_seed, Rng};

const HALF_LN_2PI_E: f64 = 1.418_938_533_204_672_7;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
/// Latent draws are kept within this log-odds range so `θ̃` stays strictly
/// inside `(0, 1)` in double precision.
const MAX_DRAW_LOGIT: f64 = 30.0;
/// Cap on `|a · ln(ratio)|`, keeping Beta shapes inside `[e^-50, e^50]`.
const MAX_SHAPE_EXPONENT: f64 = 50.0;
const LOG_SIGMA_RANGE: (f64, f64) = (-8.0, 4.0);
const CHUNK: usize = 1024;
const WINDOW: usize = 10;
/// Draws used to compare the bound at phase entry and exit under common
/// random numbers.
const EVAL_SAMPLES: usize = 32;
const EVAL_STREAM: u64 = 0x6576_616c;

/// Logit-normal distribution: `logistic(X)` with `X ~ N(μ, σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitNormalQ {
    pub mu: f64,
    pub log_sigma: f64,
}

impl LogitNormalQ {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite() && mu.is_finite()) {
            return Err(Error::invalid("sigma", format!("{sigma} is not a positive real")));
        }
        Ok(Self { mu, log_sigma: sigma.ln() })
    }

    pub fn sigma(&self) -> f64 {
        self.log_sigma.exp()
    }

    /// `logistic(μ + σ z)` for a standard-normal `z`.
    pub fn sample_with(&self, z: f64) -> f64 {
        logistic((self.mu + self.sigma() * z).clamp(-MAX_DRAW_LOGIT, MAX_DRAW_LOGIT))
    }

    pub fn median(&self) -> f64 {
        logistic(self.mu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalQ {
    pub mu: f64,
    pub log_sigma: f64,
}

impl NormalQ {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite() && mu.is_finite()) {
            return Err(Error::invalid("sigma", format!("{sigma} is not a positive real")));
        }
        Ok(Self { mu, log_sigma: sigma.ln() })
    }

    pub fn sigma(&self) -> f64 {
        self.log_sigma.exp()
    }

    pub fn mean(&self) -> f64 {
        self.mu
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViConfig {
    pub outer_iterations: usize,
    pub inner_max_steps: usize,
    /// Relative change between consecutive 10-step moving averages of the
    /// bound that counts as converged.
    pub inner_tolerance: f64,
    pub mc_samples: usize,
    pub adam: AdamConfig,
    pub sigma0: f64,
    pub clip_epsilon: f64,
    pub seed: u64,
    /// Take exactly one Adam step on the discrimination posteriors per outer
    /// iteration instead of running them to convergence.
    pub single_global_step: bool,
}

impl Default for ViConfig {
    fn default() -> Self {
        Self {
            outer_iterations: 10,
            inner_max_steps: 500,
            inner_tolerance: 1e-4,
            mc_samples: 5,
            adam: AdamConfig::default(),
            sigma0: 1.0,
            clip_epsilon: 1e-3,
            seed: 0,
            single_global_step: false,
        }
    }
}

impl ViConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("outer_iterations", self.outer_iterations),
            ("inner_max_steps", self.inner_max_steps),
            ("mc_samples", self.mc_samples),
        ] {
            if v < 1 {
                return Err(Error::invalid(field, "must be at least 1"));
            }
        }
        if !(self.inner_tolerance > 0.0) {
            return Err(Error::invalid("inner_tolerance", "must be positive"));
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(Error::invalid("sigma0", "must be positive"));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 0.1) {
            return Err(Error::invalid("clip_epsilon", "must lie in (0, 0.1)"));
        }
        if !(self.adam.step_size > 0.0) {
            return Err(Error::invalid("adam.step_size", "must be positive"));
        }
        Ok(())
    }
}

/// Bound values at the end of one outer iteration, as measured at the exit
/// of each phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboPoint {
    pub local: f64,
    pub global: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSet {
    pub ability_q: Vec<LogitNormalQ>,
    pub difficulty_q: Vec<LogitNormalQ>,
    pub discrimination_q: Vec<NormalQ>,
    pub elbo_trace: Vec<ElboPoint>,
}

impl PosteriorSet {
    /// Starting point: `μ ~ N(0, 0.1²)`, `σ = 1` for abilities and
    /// difficulties; `N(1, 1)` for every discrimination.
    pub fn initial(num_respondents: usize, num_items: usize, rng: &mut Rng) -> Self {
        let jitter = Normal::new(0.0, 0.1).expect("valid normal");
        let mut draw = |_| LogitNormalQ { mu: jitter.sample(rng), log_sigma: 0.0 };
        let ability_q = (0..num_respondents).map(&mut draw).collect();
        let difficulty_q = (0..num_items).map(&mut draw).collect();
        Self {
            ability_q,
            difficulty_q,
            discrimination_q: vec![NormalQ { mu: 1.0, log_sigma: 0.0 }; num_items],
            elbo_trace: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.difficulty_q.len() != self.discrimination_q.len() {
            return Err(Error::LengthMismatch {
                left: self.difficulty_q.len(),
                right: self.discrimination_q.len(),
            });
        }
        let finite = self
            .ability_q
            .iter()
            .chain(&self.difficulty_q)
            .all(|q| q.mu.is_finite() && q.log_sigma.is_finite())
            && self.discrimination_q.iter().all(|q| q.mu.is_finite() && q.log_sigma.is_finite());
        if !finite {
            return Err(Error::invalid("posterior", "non-finite variational parameter"));
        }
        Ok(())
    }

    pub fn num_respondents(&self) -> usize {
        self.ability_q.len()
    }

    pub fn num_items(&self) -> usize {
        self.difficulty_q.len()
    }
}

/// Standard-normal noise for one Monte-Carlo estimate: `samples` draws of
/// every latent variable, stored sample-major.
#[derive(Debug, Clone, PartialEq)]
pub struct McNoise {
    samples: usize,
    theta: Vec<f64>,
    delta: Vec<f64>,
    disc: Vec<f64>,
}

impl McNoise {
    pub fn draw(num_respondents: usize, num_items: usize, samples: usize, rng: &mut Rng) -> Self {
        let mut take = |len: usize| -> Vec<f64> {
            (0..len).map(|_| StandardNormal.sample(rng)).collect()
        };
        let theta = take(samples * num_respondents);
        let delta = take(samples * num_items);
        let disc = take(samples * num_items);
        Self { samples, theta, delta, disc }
    }

    pub fn samples(&self) -> usize {
        self.samples
    }
}

/// Reparameterized draws and the derivative of each draw's logit with
/// respect to its log-sigma (`σ z`).
struct Draws {
    m: usize,
    n: usize,
    theta: Vec<f64>,
    theta_c: Vec<f64>,
    ln_theta: Vec<f64>,
    ln_theta_c: Vec<f64>,
    theta_dls: Vec<f64>,
    delta: Vec<f64>,
    delta_c: Vec<f64>,
    ln_delta: Vec<f64>,
    ln_delta_c: Vec<f64>,
    delta_dls: Vec<f64>,
    disc: Vec<f64>,
    disc_dls: Vec<f64>,
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

struct LatentDraws {
    p: Vec<f64>,
    pc: Vec<f64>,
    ln_p: Vec<f64>,
    ln_pc: Vec<f64>,
    dls: Vec<f64>,
}

fn logit_normal_draws(q: &[LogitNormalQ], z: &[f64]) -> LatentDraws {
    let k = q.len();
    let mut d = LatentDraws {
        p: Vec::with_capacity(z.len()),
        pc: Vec::with_capacity(z.len()),
        ln_p: Vec::with_capacity(z.len()),
        ln_pc: Vec::with_capacity(z.len()),
        dls: Vec::with_capacity(z.len()),
    };
    for (idx, &zz) in z.iter().enumerate() {
        let qi = q[idx % k];
        let s = qi.sigma();
        let raw = qi.mu + s * zz;
        let x = raw.clamp(-MAX_DRAW_LOGIT, MAX_DRAW_LOGIT);
        d.p.push(logistic(x));
        d.pc.push(logistic(-x));
        d.ln_p.push(-softplus(-x));
        d.ln_pc.push(-softplus(x));
        d.dls.push(if raw == x { s * zz } else { 0.0 });
    }
    d
}

impl Draws {
    fn new(
        ability: &[LogitNormalQ],
        difficulty: &[LogitNormalQ],
        disc: &[NormalQ],
        noise: &McNoise,
    ) -> Self {
        let t = logit_normal_draws(ability, &noise.theta);
        let d = logit_normal_draws(difficulty, &noise.delta);
        let n = disc.len();
        let mut a = Vec::with_capacity(noise.disc.len());
        let mut a_dls = Vec::with_capacity(noise.disc.len());
        for (idx, &z) in noise.disc.iter().enumerate() {
            let q = disc[idx % n];
            let s = q.sigma();
            a.push(q.mu + s * z);
            a_dls.push(s * z);
        }
        Self {
            m: ability.len(),
            n,
            theta: t.p,
            theta_c: t.pc,
            ln_theta: t.ln_p,
            ln_theta_c: t.ln_pc,
            theta_dls: t.dls,
            delta: d.p,
            delta_c: d.pc,
            ln_delta: d.ln_p,
            ln_delta_c: d.ln_pc,
            delta_dls: d.dls,
            disc: a,
            disc_dls: a_dls,
        }
    }
}

/// Log-likelihood of one response and its derivatives with respect to the
/// exponents `a·ln(θ/δ)` and `a·ln((1-θ)/(1-δ))`.
#[inline]
fn response_terms(ln_p: f64, ln_pc: f64, ln_ratio_a: f64, ln_ratio_b: f64, a: f64) -> (f64, f64, f64) {
    let ea = a * ln_ratio_a;
    let eb = a * ln_ratio_b;
    let ca = ea.clamp(-MAX_SHAPE_EXPONENT, MAX_SHAPE_EXPONENT);
    let cb = eb.clamp(-MAX_SHAPE_EXPONENT, MAX_SHAPE_EXPONENT);
    let alpha = ca.exp();
    let beta = cb.exp();
    let psi_ab = digamma(alpha + beta);
    let ll = (alpha - 1.0) * ln_p + (beta - 1.0) * ln_pc - ln_beta(alpha, beta);
    let d_ea = if ca == ea { alpha * (ln_p - digamma(alpha) + psi_ab) } else { 0.0 };
    let d_eb = if cb == eb { beta * (ln_pc - digamma(beta) + psi_ab) } else { 0.0 };
    (ll, d_ea, d_eb)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Block {
    Local,
    Global,
}

/// Observation with its response pre-clipped and logged.
#[derive(Debug, Clone, Copy)]
struct PreparedObs {
    respondent: usize,
    item: usize,
    ln_p: f64,
    ln_pc: f64,
    weight: f64,
}

fn prepare(data: &ResponseMatrix, clip: f64) -> Vec<PreparedObs> {
    data.observations()
        .iter()
        .map(|o: &Observation| {
            let p = o.response.clamp(clip, 1.0 - clip);
            PreparedObs {
                respondent: o.respondent,
                item: o.item,
                ln_p: p.ln(),
                ln_pc: (-p).ln_1p(),
                weight: f64::from(o.multiplicity),
            }
        })
        .collect()
}

/// Sum of the Monte-Carlo likelihood over all observations and samples
/// (already divided by the sample count) plus its gradient.
///
/// Local layout: `[μ_θ (M), lnσ_θ (M), μ_δ (N), lnσ_δ (N)]`.
/// Global layout: `[μ_a (N), lnσ_a (N)]`.
fn likelihood_pass(obs: &[PreparedObs], draws: &Draws, samples: usize, block: Block) -> (f64, Vec<f64>) {
    let (m, n) = (draws.m, draws.n);
    let dim = match block {
        Block::Local => 2 * m + 2 * n,
        Block::Global => 2 * n,
    };
    let partials: Vec<(f64, Vec<f64>)> = obs
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut value = 0.0;
            let mut g = vec![0.0; dim];
            for o in chunk {
                let (i, j) = (o.respondent, o.item);
                for s in 0..samples {
                    let ti = s * m + i;
                    let dj = s * n + j;
                    let a = draws.disc[dj];
                    let lra = draws.ln_theta[ti] - draws.ln_delta[dj];
                    let lrb = draws.ln_theta_c[ti] - draws.ln_delta_c[dj];
                    let (ll, d_ea, d_eb) = response_terms(o.ln_p, o.ln_pc, lra, lrb, a);
                    value += o.weight * ll;
                    match block {
                        Block::Local => {
                            // d ln θ / dx = 1 - θ and d ln(1-θ) / dx = -θ for x = logit θ
                            let gx_t = o.weight
                                * a
                                * (d_ea * draws.theta_c[ti] - d_eb * draws.theta[ti]);
                            let gx_d = o.weight
                                * a
                                * (d_eb * draws.delta[dj] - d_ea * draws.delta_c[dj]);
                            g[i] += gx_t;
                            g[m + i] += gx_t * draws.theta_dls[ti];
                            g[2 * m + j] += gx_d;
                            g[2 * m + n + j] += gx_d * draws.delta_dls[dj];
                        }
                        Block::Global => {
                            let ga = o.weight * (d_ea * lra + d_eb * lrb);
                            g[j] += ga;
                            g[n + j] += ga * draws.disc_dls[dj];
                        }
                    }
                }
            }
            (value, g)
        })
        .collect();
    let scale = 1.0 / samples as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; dim];
    for (v, g) in partials {
        value += v;
        for (acc, x) in grad.iter_mut().zip(&g) {
            *acc += x;
        }
    }
    grad.iter_mut().for_each(|x| *x *= scale);
    (value * scale, grad)
}

/// Decomposition of a bound estimate. `total()` is the bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    pub likelihood: f64,
    /// `Σ E_q[log p(·)]` over the block's latent variables.
    pub log_prior: f64,
    /// `Σ -E_q[log q(·)]` over the block's latent variables.
    pub entropy: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.likelihood + self.log_prior + self.entropy
    }
}

/// Gradient of the local bound with respect to the ability and difficulty
/// variational parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGradient {
    pub ability_mu: Vec<f64>,
    pub ability_log_sigma: Vec<f64>,
    pub difficulty_mu: Vec<f64>,
    pub difficulty_log_sigma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalGradient {
    pub discrimination_mu: Vec<f64>,
    pub discrimination_log_sigma: Vec<f64>,
}

/// Entropy of a logit-normal: normal entropy (closed form) plus the
/// Monte-Carlo expected log-Jacobian `E[ln θ + ln(1-θ)]`.
fn logit_normal_entropy_terms(
    q: &[LogitNormalQ],
    p: &[f64],
    pc: &[f64],
    ln_p: &[f64],
    ln_pc: &[f64],
    dls: &[f64],
    samples: usize,
    g_mu: &mut [f64],
    g_ls: &mut [f64],
) -> f64 {
    let k = q.len();
    let scale = 1.0 / samples as f64;
    let mut value: f64 = q.iter().map(|qi| HALF_LN_2PI_E + qi.log_sigma).sum();
    for (idx, ((&a, &b), (&la, &lb))) in p.iter().zip(pc).zip(ln_p.iter().zip(ln_pc)).enumerate() {
        let i = idx % k;
        value += scale * (la + lb);
        // d/dx [ln θ + ln(1-θ)] = (1-θ) - θ
        let gx = scale * (b - a);
        g_mu[i] += gx;
        g_ls[i] += gx * dls[idx];
    }
    g_ls.iter_mut().for_each(|x| *x += 1.0);
    value
}

fn local_terms(
    obs: &[PreparedObs],
    ability: &[LogitNormalQ],
    difficulty: &[LogitNormalQ],
    disc: &[NormalQ],
    noise: &McNoise,
) -> (ElboTerms, Vec<f64>) {
    let draws = Draws::new(ability, difficulty, disc, noise);
    let (m, n, s) = (ability.len(), difficulty.len(), noise.samples);
    let (likelihood, mut g) = likelihood_pass(obs, &draws, s, Block::Local);
    let (g_theta, g_delta) = g.split_at_mut(2 * m);
    let (gt_mu, gt_ls) = g_theta.split_at_mut(m);
    let (gd_mu, gd_ls) = g_delta.split_at_mut(n);
    let ent_t = logit_normal_entropy_terms(
        ability,
        &draws.theta,
        &draws.theta_c,
        &draws.ln_theta,
        &draws.ln_theta_c,
        &draws.theta_dls,
        s,
        gt_mu,
        gt_ls,
    );
    let ent_d = logit_normal_entropy_terms(
        difficulty,
        &draws.delta,
        &draws.delta_c,
        &draws.ln_delta,
        &draws.ln_delta_c,
        &draws.delta_dls,
        s,
        gd_mu,
        gd_ls,
    );
    // Beta(1, 1) priors have zero log-density on (0, 1).
    let terms = ElboTerms { likelihood, log_prior: 0.0, entropy: ent_t + ent_d };
    (terms, g)
}

/// `E_q[log N(a; 1, σ₀²)]` for `q = N(μ, σ²)`.
pub fn discrimination_prior_term(q: &NormalQ, sigma0: f64) -> f64 {
    let s2 = q.sigma().powi(2);
    -HALF_LN_2PI - sigma0.ln() - ((q.mu - 1.0).powi(2) + s2) / (2.0 * sigma0 * sigma0)
}

fn global_terms(
    obs: &[PreparedObs],
    ability: &[LogitNormalQ],
    difficulty: &[LogitNormalQ],
    disc: &[NormalQ],
    noise: &McNoise,
    sigma0: f64,
) -> (ElboTerms, Vec<f64>) {
    let draws = Draws::new(ability, difficulty, disc, noise);
    let n = disc.len();
    let (likelihood, mut g) = likelihood_pass(obs, &draws, noise.samples, Block::Global);
    let mut log_prior = 0.0;
    let mut entropy = 0.0;
    let inv_var0 = 1.0 / (sigma0 * sigma0);
    for (j, q) in disc.iter().enumerate() {
        log_prior += discrimination_prior_term(q, sigma0);
        entropy += HALF_LN_2PI_E + q.log_sigma;
        g[j] -= (q.mu - 1.0) * inv_var0;
        g[n + j] += 1.0 - q.sigma().powi(2) * inv_var0;
    }
    (ElboTerms { likelihood, log_prior, entropy }, g)
}

/// Local bound `L₁` and its gradient for fixed noise. With the same noise
/// the estimate is a deterministic, differentiable function of the
/// variational parameters.
pub fn local_objective(
    data: &ResponseMatrix,
    q: &PosteriorSet,
    noise: &McNoise,
    clip_epsilon: f64,
) -> (ElboTerms, LocalGradient) {
    let obs = prepare(data, clip_epsilon);
    let (terms, g) = local_terms(&obs, &q.ability_q, &q.difficulty_q, &q.discrimination_q, noise);
    let (m, n) = (q.num_respondents(), q.num_items());
    let grad = LocalGradient {
        ability_mu: g[..m].to_vec(),
        ability_log_sigma: g[m..2 * m].to_vec(),
        difficulty_mu: g[2 * m..2 * m + n].to_vec(),
        difficulty_log_sigma: g[2 * m + n..].to_vec(),
    };
    (terms, grad)
}

/// Global bound `L₂` and its gradient for fixed noise.
pub fn global_objective(
    data: &ResponseMatrix,
    q: &PosteriorSet,
    noise: &McNoise,
    sigma0: f64,
    clip_epsilon: f64,
) -> (ElboTerms, GlobalGradient) {
    let obs = prepare(data, clip_epsilon);
    let (terms, g) =
        global_terms(&obs, &q.ability_q, &q.difficulty_q, &q.discrimination_q, noise, sigma0);
    let n = q.num_items();
    let grad = GlobalGradient {
        discrimination_mu: g[..n].to_vec(),
        discrimination_log_sigma: g[n..].to_vec(),
    };
    (terms, grad)
}

/// Monte-Carlo estimate of `L₁` with `cfg.mc_samples` draws.
pub fn elbo_local(data: &ResponseMatrix, q: &PosteriorSet, cfg: &ViConfig, rng: &mut Rng) -> f64 {
    let noise = McNoise::draw(q.num_respondents(), q.num_items(), cfg.mc_samples, rng);
    local_objective(data, q, &noise, cfg.clip_epsilon).0.total()
}

/// Monte-Carlo estimate of `L₂` with `cfg.mc_samples` draws.
pub fn elbo_global(data: &ResponseMatrix, q: &PosteriorSet, cfg: &ViConfig, rng: &mut Rng) -> f64 {
    let noise = McNoise::draw(q.num_respondents(), q.num_items(), cfg.mc_samples, rng);
    global_objective(data, q, &noise, cfg.sigma0, cfg.clip_epsilon).0.total()
}

/// Stops once consecutive non-overlapping 10-step averages agree within a
/// relative tolerance.
struct Convergence {
    tol: f64,
    history: Vec<f64>,
}

impl Convergence {
    fn push(&mut self, v: f64) -> bool {
        self.history.push(v);
        let h = &self.history;
        if h.len() < 2 * WINDOW {
            return false;
        }
        let now: f64 = h[h.len() - WINDOW..].iter().sum::<f64>() / WINDOW as f64;
        let prev: f64 = h[h.len() - 2 * WINDOW..h.len() - WINDOW].iter().sum::<f64>() / WINDOW as f64;
        (now - prev).abs() <= self.tol * prev.abs().max(f64::MIN_POSITIVE)
    }

    fn smoothed(&self) -> f64 {
        let h = &self.history;
        let k = h.len().min(WINDOW);
        h[h.len() - k..].iter().sum::<f64>() / k as f64
    }
}

/// What happened during one phase of one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub steps: usize,
    /// Bound before the first update and after the last one, both estimated
    /// with the same fixed set of draws.
    pub entry: f64,
    pub exit: f64,
    /// Moving average of the last ten per-step estimates.
    pub exit_smoothed: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub local: PhaseRecord,
    pub global: PhaseRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViFit {
    pub posteriors: PosteriorSet,
    pub outer: Vec<OuterRecord>,
}

fn check_finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite {what} bound")))
    }
}

/// Adam ascent on the ability and difficulty posteriors. The
/// discrimination posteriors are only read.
pub fn run_local_phase(
    data: &ResponseMatrix,
    ability: &mut [LogitNormalQ],
    difficulty: &mut [LogitNormalQ],
    disc: &[NormalQ],
    cfg: &ViConfig,
    step_counter: &mut u64,
) -> Result<PhaseRecord> {
    let obs = prepare(data, cfg.clip_epsilon);
    local_phase(&obs, ability, difficulty, disc, cfg, step_counter)
}

/// Adam ascent on the discrimination posteriors with abilities and
/// difficulties held fixed.
pub fn run_global_phase(
    data: &ResponseMatrix,
    ability: &[LogitNormalQ],
    difficulty: &[LogitNormalQ],
    disc: &mut [NormalQ],
    cfg: &ViConfig,
    step_counter: &mut u64,
) -> Result<PhaseRecord> {
    let obs = prepare(data, cfg.clip_epsilon);
    global_phase(&obs, ability, difficulty, disc, cfg, step_counter)
}

fn eval_noise(cfg: &ViConfig, m: usize, n: usize, step_counter: u64) -> McNoise {
    let seed = derive_seed(derive_seed(cfg.seed, step_counter), EVAL_STREAM);
    McNoise::draw(m, n, EVAL_SAMPLES, &mut rng::seeded(seed))
}

fn step_noise(cfg: &ViConfig, m: usize, n: usize, step_counter: &mut u64) -> McNoise {
    *step_counter += 1;
    let mut rng = rng::seeded(derive_seed(cfg.seed, *step_counter));
    McNoise::draw(m, n, cfg.mc_samples, &mut rng)
}

fn local_phase(
    obs: &[PreparedObs],
    ability: &mut [LogitNormalQ],
    difficulty: &mut [LogitNormalQ],
    disc: &[NormalQ],
    cfg: &ViConfig,
    step_counter: &mut u64,
) -> Result<PhaseRecord> {
    let (m, n) = (ability.len(), difficulty.len());
    let mut adam = Adam::new(cfg.adam, 2 * m + 2 * n);
    let mut conv = Convergence { tol: cfg.inner_tolerance, history: Vec::new() };
    let mut flat = vec![0.0; 2 * m + 2 * n];
    let probe = eval_noise(cfg, m, n, *step_counter);
    let entry = local_terms(obs, ability, difficulty, disc, &probe).0.total();
    check_finite(entry, "local")?;
    let mut converged = false;
    let mut steps = 0;
    while steps < cfg.inner_max_steps {
        let noise = step_noise(cfg, m, n, step_counter);
        let (terms, g) = local_terms(obs, ability, difficulty, disc, &noise);
        let value = terms.total();
        check_finite(value, "local")?;
        steps += 1;
        for (k, q) in ability.iter().enumerate() {
            flat[k] = q.mu;
            flat[m + k] = q.log_sigma;
        }
        for (k, q) in difficulty.iter().enumerate() {
            flat[2 * m + k] = q.mu;
            flat[2 * m + n + k] = q.log_sigma;
        }
        adam.ascend(&mut flat, &g);
        for (k, q) in ability.iter_mut().enumerate() {
            q.mu = flat[k].clamp(-MAX_LOGIT, MAX_LOGIT);
            q.log_sigma = flat[m + k].clamp(LOG_SIGMA_RANGE.0, LOG_SIGMA_RANGE.1);
        }
        for (k, q) in difficulty.iter_mut().enumerate() {
            q.mu = flat[2 * m + k].clamp(-MAX_LOGIT, MAX_LOGIT);
            q.log_sigma = flat[2 * m + n + k].clamp(LOG_SIGMA_RANGE.0, LOG_SIGMA_RANGE.1);
        }
        if conv.push(value) {
            converged = true;
            break;
        }
    }
    let exit = local_terms(obs, ability, difficulty, disc, &probe).0.total();
    Ok(PhaseRecord { steps, entry, exit, exit_smoothed: conv.smoothed(), converged })
}

fn global_phase(
    obs: &[PreparedObs],
    ability: &[LogitNormalQ],
    difficulty: &[LogitNormalQ],
    disc: &mut [NormalQ],
    cfg: &ViConfig,
    step_counter: &mut u64,
) -> Result<PhaseRecord> {
    let (m, n) = (ability.len(), difficulty.len());
    let max_steps = if cfg.single_global_step { 1 } else { cfg.inner_max_steps };
    let mut adam = Adam::new(cfg.adam, 2 * n);
    let mut conv = Convergence { tol: cfg.inner_tolerance, history: Vec::new() };
    let mut flat = vec![0.0; 2 * n];
    let probe = eval_noise(cfg, m, n, *step_counter);
    let entry = global_terms(obs, ability, difficulty, disc, &probe, cfg.sigma0).0.total();
    check_finite(entry, "global")?;
    let mut converged = false;
    let mut steps = 0;
    while steps < max_steps {
        let noise = step_noise(cfg, m, n, step_counter);
        let (terms, g) = global_terms(obs, ability, difficulty, disc, &noise, cfg.sigma0);
        let value = terms.total();
        check_finite(value, "global")?;
        steps += 1;
        for (k, q) in disc.iter().enumerate() {
            flat[k] = q.mu;
            flat[n + k] = q.log_sigma;
        }
        adam.ascend(&mut flat, &g);
        for (k, q) in disc.iter_mut().enumerate() {
            q.mu = flat[k];
            q.log_sigma = flat[n + k].clamp(LOG_SIGMA_RANGE.0, LOG_SIGMA_RANGE.1);
        }
        if conv.push(value) {
            converged = true;
            break;
        }
    }
    let exit = global_terms(obs, ability, difficulty, disc, &probe, cfg.sigma0).0.total();
    Ok(PhaseRecord { steps, entry, exit, exit_smoothed: conv.smoothed(), converged })
}

/// Fits variational posteriors by coordinate ascent.
pub fn fit_vi(data: &ResponseMatrix, cfg: &ViConfig) -> Result<PosteriorSet> {
    fit_vi_detailed(data, cfg).map(|f| f.posteriors)
}

/// [`fit_vi`] plus per-phase diagnostics.
pub fn fit_vi_detailed(data: &ResponseMatrix, cfg: &ViConfig) -> Result<ViFit> {
    cfg.validate()?;
    let obs = prepare(data, cfg.clip_epsilon);
    let mut rng = rng::seeded(derive_seed(cfg.seed, 0));
    let mut q = PosteriorSet::initial(data.num_respondents(), data.num_items(), &mut rng);
    let mut step_counter = 0u64;
    let mut outer = Vec::with_capacity(cfg.outer_iterations);
    for _ in 0..cfg.outer_iterations {
        let local = local_phase(
            &obs,
            &mut q.ability_q,
            &mut q.difficulty_q,
            &q.discrimination_q,
            cfg,
            &mut step_counter,
        )?;
        let global = global_phase(
            &obs,
            &q.ability_q,
            &q.difficulty_q,
            &mut q.discrimination_q,
            cfg,
            &mut step_counter,
        )?;
        q.elbo_trace.push(ElboPoint { local: local.exit, global: global.exit });
        outer.push(OuterRecord { local, global });
    }
    Ok(ViFit { posteriors: q, outer })
}

/// Point summaries: logit-normal medians `logistic(μ)` for abilities and
/// difficulties, posterior means for discriminations.
pub fn posterior_point_estimates(q: &PosteriorSet) -> Result<ModelParams> {
    q.validate()?;
    ModelParams::new(
        Family::Beta3,
        q.ability_q.iter().map(LogitNormalQ::median).collect(),
        q.difficulty_q.iter().map(LogitNormalQ::median).collect(),
        q.discrimination_q.iter().map(NormalQ::mean).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::response::ResponseMatrix;

    #[test]
    fn point_estimates() {
        assert_eq!(LogitNormalQ::new(0.0, 1.0).unwrap().median(), 0.5);
        let q = LogitNormalQ::new(9f64.ln(), 0.5).unwrap();
        assert!((q.median() - 0.9).abs() < 1e-12);
        assert!((LogitNormalQ::new(2.1972, 0.5).unwrap().median() - 0.9).abs() < 1e-4);
        assert_eq!(NormalQ::new(-0.4, 0.2).unwrap().mean(), -0.4);
        let set = PosteriorSet {
            ability_q: vec![LogitNormalQ::new(0.0, 1.0).unwrap()],
            difficulty_q: vec![q],
            discrimination_q: vec![NormalQ::new(-0.4, 0.2).unwrap()],
            elbo_trace: vec![],
        };
        let p = posterior_point_estimates(&set).unwrap();
        assert_eq!(p.abilities(), &[0.5]);
        assert_eq!(p.discriminations(), &[-0.4]);
    }

    #[test]
    fn samples_stay_inside_the_unit_interval() {
        let q = LogitNormalQ::new(13.8, 50.0).unwrap();
        for z in [-10.0, -1.0, 0.0, 1.0, 10.0] {
            let t = q.sample_with(z);
            assert!(t > 0.0 && t < 1.0, "{t}");
        }
    }

    #[test]
    fn uniform_prior_contributes_nothing_and_point_mass_likelihood_is_uniform() {
        let data = ResponseMatrix::from_triples([(0, 0, 0.5)]).unwrap();
        let tight = LogitNormalQ { mu: 0.0, log_sigma: -8.0 };
        let q = PosteriorSet {
            ability_q: vec![tight],
            difficulty_q: vec![tight],
            discrimination_q: vec![NormalQ { mu: 1.0, log_sigma: -8.0 }],
            elbo_trace: vec![],
        };
        let mut rng = rng::seeded(1);
        let noise = McNoise::draw(1, 1, 50, &mut rng);
        let (terms, _) = local_objective(&data, &q, &noise, 1e-3);
        assert_eq!(terms.log_prior, 0.0);
        // θ ≈ δ ≈ 0.5 and a ≈ 1 give Beta(1, 1), density 1 at 0.5
        assert!(terms.likelihood.abs() < 1e-3, "{}", terms.likelihood);
    }

    #[test]
    fn global_bound_vanishes_at_the_prior_without_data() {
        let q = NormalQ { mu: 1.0, log_sigma: 0.0 };
        let v = discrimination_prior_term(&q, 1.0) + HALF_LN_2PI_E + q.log_sigma;
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn wider_prior_penalizes_less() {
        let q = NormalQ::new(-0.5, 0.3).unwrap();
        let terms: Vec<f64> =
            [0.5, 1.0, 2.0].iter().map(|&s| discrimination_prior_term(&q, s).abs()).collect();
        assert!(terms[0] > terms[1] && terms[1] > terms[2], "{terms:?}");
    }

    #[test]
    fn mc_variance_shrinks_with_more_samples() {
        let data =
            ResponseMatrix::from_triples([(0, 0, 0.8), (0, 1, 0.3), (1, 0, 0.6), (1, 1, 0.1)]).unwrap();
        let mut rng = rng::seeded(3);
        // Moderate spreads: with σ = 1 everywhere the estimator is too
        // heavy-tailed for sample variances to be stable.
        let lq = |mu| LogitNormalQ { mu, log_sigma: 0.3f64.ln() };
        let q = PosteriorSet {
            ability_q: vec![lq(0.4), lq(-0.2)],
            difficulty_q: vec![lq(-0.5), lq(0.6)],
            discrimination_q: vec![NormalQ { mu: 1.0, log_sigma: 0.2f64.ln() }; 2],
            elbo_trace: vec![],
        };
        let variance = |samples: usize, rng: &mut Rng| {
            let cfg = ViConfig { mc_samples: samples, ..ViConfig::default() };
            let v: Vec<f64> = (0..1000).map(|_| elbo_local(&data, &q, &cfg, rng)).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        let v1 = variance(1, &mut rng);
        let v5 = variance(5, &mut rng);
        let v25 = variance(25, &mut rng);
        // ~1/S scaling: ratios near 5 with sampling slack
        assert!(v1 / v5 > 3.0 && v1 / v5 < 8.0, "{v1} {v5}");
        assert!(v5 / v25 > 3.0 && v5 / v25 < 8.0, "{v5} {v25}");
    }

    #[test]
    fn config_validation() {
        assert!(ViConfig::default().validate().is_ok());
        let bad = ViConfig { mc_samples: 0, ..ViConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Invalid { field: "mc_samples", .. })));
        let bad = ViConfig { sigma0: 0.0, ..ViConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn local_phase_leaves_discriminations_alone() {
        let data =
            ResponseMatrix::from_triples([(0, 0, 0.9), (0, 1, 0.2), (1, 0, 0.7), (1, 1, 0.4)]).unwrap();
        let cfg = ViConfig { inner_max_steps: 30, ..ViConfig::default() };
        let mut q = PosteriorSet::initial(2, 2, &mut rng::seeded(0));
        q.discrimination_q[1] = NormalQ { mu: -0.3, log_sigma: -0.7 };
        let before = q.discrimination_q.clone();
        let ability_before = q.ability_q.clone();
        let mut counter = 0;
        run_local_phase(&data, &mut q.ability_q, &mut q.difficulty_q, &q.discrimination_q, &cfg, &mut counter)
            .unwrap();
        assert_eq!(before, q.discrimination_q);
        assert_ne!(ability_before, q.ability_q);
    }
}
