//! Synthetic data: responses drawn from the Beta model with known
//! parameters, simulated classifier panels, and label-noise injection.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::icc::{self, BOUND_EPS};
use crate::params::{Family, ModelParams};
use crate::response::{Observation, ResponseMatrix};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaPrior {
    pub a: f64,
    pub b: f64,
}

impl Default for BetaPrior {
    fn default() -> Self {
        Self { a: 1.0, b: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalPrior {
    pub mu: f64,
    pub sigma: f64,
}

impl Default for NormalPrior {
    fn default() -> Self {
        Self { mu: 1.0, sigma: 1.0 }
    }
}

fn default_one() -> usize {
    1
}

fn default_density() -> f64 {
    1.0
}

/// Recipe for a synthetic response dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub respondents: usize,
    pub items: usize,
    #[serde(default)]
    pub ability_prior: BetaPrior,
    #[serde(default)]
    pub difficulty_prior: BetaPrior,
    #[serde(default)]
    pub discrimination_prior: NormalPrior,
    #[serde(default = "default_one")]
    pub responses_per_pair: usize,
    #[serde(default = "default_density")]
    pub observation_density: f64,
    #[serde(default)]
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(respondents: usize, items: usize, seed: u64) -> Self {
        Self {
            respondents,
            items,
            ability_prior: BetaPrior::default(),
            difficulty_prior: BetaPrior::default(),
            discrimination_prior: NormalPrior::default(),
            responses_per_pair: 1,
            observation_density: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.respondents < 1 {
            return Err(Error::invalid("respondents", "must be at least 1"));
        }
        if self.items < 1 {
            return Err(Error::invalid("items", "must be at least 1"));
        }
        for (field, p) in [
            ("ability_prior", self.ability_prior),
            ("difficulty_prior", self.difficulty_prior),
        ] {
            if !(p.a > 0.0 && p.b > 0.0 && p.a.is_finite() && p.b.is_finite()) {
                return Err(Error::invalid(field, "Beta shapes must be positive"));
            }
        }
        let d = self.discrimination_prior;
        if !(d.mu.is_finite() && d.sigma >= 0.0 && d.sigma.is_finite()) {
            return Err(Error::invalid(
                "discrimination_prior",
                "needs finite mu and sigma >= 0",
            ));
        }
        if self.responses_per_pair < 1 {
            return Err(Error::invalid("responses_per_pair", "must be at least 1"));
        }
        if !(self.observation_density > 0.0 && self.observation_density <= 1.0) {
            return Err(Error::invalid(
                "observation_density",
                format!("{} is outside (0, 1]", self.observation_density),
            ));
        }
        Ok(())
    }
}

/// Draws parameters from the priors, then responses from the Beta model.
///
/// Each `(respondent, item)` pair is kept with probability
/// `observation_density`; the mask is redrawn until every respondent and
/// item is observed at least once.
pub fn sample_dataset(spec: &GeneratorSpec) -> Result<(ResponseMatrix, ModelParams)> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let clamp = |x: f64| x.clamp(BOUND_EPS, 1.0 - BOUND_EPS);
    let ab = Beta::new(spec.ability_prior.a, spec.ability_prior.b).expect("validated");
    let db = Beta::new(spec.difficulty_prior.a, spec.difficulty_prior.b).expect("validated");
    let an = Normal::new(spec.discrimination_prior.mu, spec.discrimination_prior.sigma)
        .expect("validated");
    let abilities: Vec<f64> = (0..spec.respondents).map(|_| clamp(ab.sample(&mut rng))).collect();
    let difficulties: Vec<f64> = (0..spec.items).map(|_| clamp(db.sample(&mut rng))).collect();
    let discriminations: Vec<f64> = (0..spec.items).map(|_| an.sample(&mut rng)).collect();
    let truth = ModelParams::new(Family::Beta3, abilities, difficulties, discriminations)?;

    let mask = retention_mask(spec.respondents, spec.items, spec.observation_density, &mut rng);
    let data = sample_responses(&truth, &mask, spec.responses_per_pair, &mut rng)?;
    Ok((data, truth))
}

fn retention_mask(m: usize, n: usize, density: f64, rng: &mut Rng) -> Vec<(usize, usize)> {
    loop {
        let mut rows = vec![false; m];
        let mut cols = vec![false; n];
        let mut kept = Vec::new();
        for i in 0..m {
            for j in 0..n {
                if density >= 1.0 || rng.random::<f64>() < density {
                    rows[i] = true;
                    cols[j] = true;
                    kept.push((i, j));
                }
            }
        }
        if rows.iter().all(|&r| r) && cols.iter().all(|&c| c) {
            return kept;
        }
    }
}

/// Draws `per_pair` responses `p ~ Beta(α, β)` for each listed pair of a
/// Beta3 parameter set.
pub fn sample_responses(
    truth: &ModelParams,
    pairs: &[(usize, usize)],
    per_pair: usize,
    rng: &mut Rng,
) -> Result<ResponseMatrix> {
    if truth.family() != Family::Beta3 {
        return Err(Error::FamilyMismatch {
            expected: "beta3",
            found: truth.family().as_str(),
        });
    }
    let mut obs = Vec::with_capacity(pairs.len() * per_pair);
    for &(i, j) in pairs {
        let (alpha, beta) = icc::shape_raw(
            truth.abilities()[i],
            truth.difficulties()[j],
            truth.discriminations()[j],
        );
        let dist = Beta::new(alpha, beta).map_err(|e| {
            Error::Numerical(format!("Beta({alpha}, {beta}) for pair ({i}, {j}): {e}"))
        })?;
        for _ in 0..per_pair {
            let p = dist.sample(rng);
            if !p.is_finite() {
                return Err(Error::Numerical(format!(
                    "Beta({alpha}, {beta}) produced {p}"
                )));
            }
            obs.push(Observation::new(i, j, p.clamp(0.0, 1.0)));
        }
    }
    ResponseMatrix::new(truth.num_respondents(), truth.num_items(), obs)
}

/// Class-probability outputs of a panel of classifiers on labelled
/// instances.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierResponseSet {
    classifier_ids: Vec<String>,
    instance_ids: Vec<String>,
    num_classes: usize,
    labels: Vec<usize>,
    /// Row-major `[classifier][instance][class]`.
    probs: Vec<f64>,
}

impl ClassifierResponseSet {
    /// Validates labels and that each probability vector sums to one within
    /// `1e-9`.
    pub fn new(
        classifier_ids: Vec<String>,
        instance_ids: Vec<String>,
        num_classes: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
    ) -> Result<Self> {
        Self::with_tolerance(classifier_ids, instance_ids, num_classes, labels, probs, 1e-9)
    }

    /// As [`ClassifierResponseSet::new`] with a caller-chosen simplex
    /// tolerance; vectors within tolerance are renormalized.
    pub fn with_tolerance(
        classifier_ids: Vec<String>,
        instance_ids: Vec<String>,
        num_classes: usize,
        labels: Vec<usize>,
        mut probs: Vec<f64>,
        tolerance: f64,
    ) -> Result<Self> {
        let (m, n, k) = (classifier_ids.len(), instance_ids.len(), num_classes);
        if k < 2 {
            return Err(Error::invalid("num_classes", "need at least two classes"));
        }
        if labels.len() != n {
            return Err(Error::LengthMismatch { left: labels.len(), right: n });
        }
        if probs.len() != m * n * k {
            return Err(Error::LengthMismatch { left: probs.len(), right: m * n * k });
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::IndexOutOfRange { what: "label", index: y, len: k });
        }
        for (row, chunk) in probs.chunks_mut(k).enumerate() {
            if chunk.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::invalid(
                    "probability",
                    format!("row {row} has a value outside [0, 1]"),
                ));
            }
            let s: f64 = chunk.iter().sum();
            if (s - 1.0).abs() > tolerance {
                return Err(Error::invalid(
                    "probability",
                    format!("row {row} sums to {s}, not 1"),
                ));
            }
            if s != 1.0 {
                chunk.iter_mut().for_each(|p| *p /= s);
            }
        }
        Ok(Self { classifier_ids, instance_ids, num_classes, labels, probs })
    }

    pub fn num_classifiers(&self) -> usize {
        self.classifier_ids.len()
    }

    pub fn num_instances(&self) -> usize {
        self.instance_ids.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn classifier_ids(&self) -> &[String] {
        &self.classifier_ids
    }

    pub fn instance_ids(&self) -> &[String] {
        &self.instance_ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Probability vector of classifier `i` on instance `j`.
    pub fn probs(&self, i: usize, j: usize) -> &[f64] {
        let k = self.num_classes;
        let start = (i * self.num_instances() + j) * k;
        &self.probs[start..start + k]
    }

    /// Same predictions scored against different labels.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Self::new(
            self.classifier_ids.clone(),
            self.instance_ids.clone(),
            self.num_classes,
            labels,
            self.probs.clone(),
        )
    }

    /// Probability each classifier assigned to each instance's labelled class.
    pub fn correct_class_response(&self, i: usize, j: usize) -> f64 {
        self.probs(i, j)[self.labels[j]]
    }
}

/// Reduces classifier outputs to responses: `pᵢⱼ` is the probability
/// classifier `i` gave to the labelled class of instance `j`.
pub fn to_response_matrix(c: &ClassifierResponseSet) -> Result<ResponseMatrix> {
    let mut obs = Vec::with_capacity(c.num_classifiers() * c.num_instances());
    for i in 0..c.num_classifiers() {
        for j in 0..c.num_instances() {
            obs.push(Observation::new(i, j, c.correct_class_response(i, j)));
        }
    }
    ResponseMatrix::new(c.num_classifiers(), c.num_instances(), obs)
}

/// Flips exactly `round(fraction · N)` distinct labels chosen uniformly at
/// random, each to a uniformly chosen different class.
///
/// The flipped instances are a prefix of one seeded permutation, so for a
/// fixed seed larger fractions flip a superset of the instances flipped by
/// smaller ones.
pub fn inject_label_noise(
    labels: &[usize],
    fraction: f64,
    num_classes: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<bool>)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid("fraction", format!("{fraction} is outside [0, 1]")));
    }
    if num_classes < 2 {
        return Err(Error::invalid("num_classes", "need at least two classes"));
    }
    let n = labels.len();
    let flips = (fraction * n as f64).round() as usize;
    let mut rng = rng::seeded(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut out = labels.to_vec();
    let mut mask = vec![false; n];
    for &j in &order[..flips] {
        let y = labels[j];
        let r = if num_classes == 2 { 0 } else { rng.random_range(0..num_classes - 1) };
        out[j] = if num_classes == 2 { 1 - y } else if r >= y { r + 1 } else { r };
        mask[j] = true;
    }
    Ok((out, mask))
}

/// One member of a simulated classifier panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PanelMember {
    /// Sees each instance's true margin through Gaussian noise whose scale
    /// shrinks as `skill → 1`, then emits `softmax(scores / temperature)`.
    Skilled {
        name: String,
        skill: f64,
        temperature: f64,
    },
    /// Uniform probabilities on every instance.
    Constant { name: String },
    /// All mass on the positive (last) class.
    AlwaysPositive { name: String },
    /// All mass on the negative (first) class.
    AlwaysNegative { name: String },
}

impl PanelMember {
    pub fn name(&self) -> &str {
        match self {
            PanelMember::Skilled { name, .. }
            | PanelMember::Constant { name }
            | PanelMember::AlwaysPositive { name }
            | PanelMember::AlwaysNegative { name } => name,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        !matches!(self, PanelMember::Skilled { .. })
    }

    pub fn skilled(name: &str, skill: f64, temperature: f64) -> Self {
        PanelMember::Skilled { name: name.into(), skill, temperature }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelSpec {
    pub members: Vec<PanelMember>,
}

impl PanelSpec {
    /// Nine skilled classifiers of graded quality and calibration plus the
    /// constant, always-positive and always-negative members.
    pub fn twelve() -> Self {
        let skilled = [
            ("naive_bayes", 0.55, 1.6),
            ("mlp", 0.85, 0.6),
            ("adaboost", 0.75, 3.0),
            ("logistic_regression", 0.80, 1.0),
            ("knn", 0.78, 0.5),
            ("lda", 0.70, 1.0),
            ("qda", 0.50, 0.8),
            ("decision_tree", 0.65, 0.3),
            ("random_forest", 0.82, 1.4),
        ];
        let mut members: Vec<PanelMember> = skilled
            .iter()
            .map(|&(n, s, t)| PanelMember::skilled(n, s, t))
            .collect();
        members.push(PanelMember::Constant { name: "constant".into() });
        members.push(PanelMember::AlwaysPositive { name: "always_positive".into() });
        members.push(PanelMember::AlwaysNegative { name: "always_negative".into() });
        Self { members }
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::invalid("members", "panel is empty"));
        }
        for m in &self.members {
            if let PanelMember::Skilled { skill, temperature, .. } = m {
                if !(*skill > 0.0 && *skill < 1.0) {
                    return Err(Error::invalid("skill", format!("{skill} is outside (0, 1)")));
                }
                if !(*temperature > 0.0 && temperature.is_finite()) {
                    return Err(Error::invalid("temperature", "must be positive"));
                }
            }
        }
        Ok(())
    }
}

fn softmax_into(scores: &[f64], out: &mut Vec<f64>) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let start = out.len();
    let mut total = 0.0;
    for &s in scores {
        let e = (s - max).exp();
        total += e;
        out.push(e);
    }
    out[start..].iter_mut().for_each(|p| *p /= total);
}

/// Simulates a panel's class probabilities on `num_instances` instances
/// with balanced labels.
///
/// Each instance gets a distance `d ~ |N(0, 1)|` from the decision
/// boundary. A skilled member scores the labelled class `d` and the others
/// `0`, adds `N(0, ((1 - skill)/skill)²)` noise to every score, and applies
/// a softmax at its temperature.
pub fn simulate_classifier_panel(
    num_instances: usize,
    num_classes: usize,
    panel: &PanelSpec,
    seed: u64,
) -> Result<ClassifierResponseSet> {
    panel.validate()?;
    if num_classes < 2 {
        return Err(Error::invalid("num_classes", "need at least two classes"));
    }
    if num_instances < 1 {
        return Err(Error::invalid("instances", "must be at least 1"));
    }
    let mut rng = rng::seeded(seed);
    let mut labels: Vec<usize> = (0..num_instances).map(|j| j % num_classes).collect();
    labels.shuffle(&mut rng);
    let std_normal = Normal::new(0.0_f64, 1.0).expect("valid normal");
    let margins: Vec<f64> = (0..num_instances).map(|_| std_normal.sample(&mut rng).abs()).collect();

    let k = num_classes;
    let mut probs = Vec::with_capacity(panel.members.len() * num_instances * k);
    let mut scores = vec![0.0; k];
    for member in &panel.members {
        for j in 0..num_instances {
            match member {
                PanelMember::Skilled { skill, temperature, .. } => {
                    let noise = (1.0 - skill) / skill;
                    for (c, s) in scores.iter_mut().enumerate() {
                        let signal = if c == labels[j] { margins[j] } else { 0.0 };
                        *s = (signal + noise * std_normal.sample(&mut rng)) / temperature;
                    }
                    softmax_into(&scores, &mut probs);
                }
                PanelMember::Constant { .. } => {
                    probs.extend(std::iter::repeat_n(1.0 / k as f64, k));
                }
                PanelMember::AlwaysPositive { .. } => {
                    probs.extend((0..k).map(|c| if c == k - 1 { 1.0 } else { 0.0 }));
                }
                PanelMember::AlwaysNegative { .. } => {
                    probs.extend((0..k).map(|c| if c == 0 { 1.0 } else { 0.0 }));
                }
            }
        }
    }
    ClassifierResponseSet::new(
        panel.members.iter().map(|m| m.name().to_string()).collect(),
        (0..num_instances).map(|j| format!("x{j}")).collect(),
        k,
        labels,
        probs,
    )
}
