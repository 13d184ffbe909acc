use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::holdout::{stratified_holdout, HoldoutPlan, Split};
use crate::eval::wilcoxon::{wilcoxon_signed_rank, Wilcoxon};
use crate::mle::{fit_mle, log_loss, MleConfig};
use crate::params::Family;
use crate::rng::derive_seed;
use crate::synth::{inject_label_noise, to_response_matrix, ClassifierResponseSet};
use crate::vi::{fit_vi, posterior_point_estimates, PosteriorSet, ViConfig};

/// Items whose posterior-mean discrimination is below `threshold`, sorted by
/// that mean (ascending, ties by item index).
pub fn flag_noisy_items(posteriors: &PosteriorSet, threshold: f64) -> Vec<(usize, f64)> {
    let mut flagged: Vec<(usize, f64)> = posteriors
        .discrimination_q
        .iter()
        .enumerate()
        .map(|(j, q)| (j, q.mean()))
        .filter(|&(_, m)| m < threshold)
        .collect();
    flagged.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
    flagged
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRow {
    pub fraction: f64,
    pub flipped: usize,
    /// Posterior-median ability per classifier.
    pub abilities: Vec<f64>,
    /// Accuracy per classifier against the noisy labels.
    pub accuracies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseScan {
    pub classifier_ids: Vec<String>,
    pub rows: Vec<ScanRow>,
}

/// Stream used to derive the label-noise seed from the fit seed.
const NOISE_STREAM: u64 = 0x006e_6f69_7365;

/// Refits the panel with increasing fractions of flipped labels.
///
/// Noise for every fraction comes from one seed derived from `cfg.seed`, so
/// the flipped sets are nested, and every fit uses `cfg` unchanged.
pub fn ability_noise_scan(
    panel: &ClassifierResponseSet,
    fractions: &[f64],
    cfg: &ViConfig,
) -> Result<NoiseScan> {
    cfg.validate()?;
    for &f in fractions {
        if !(0.0..1.0).contains(&f) {
            return Err(Error::invalid("fractions", format!("{f} is outside [0, 1)")));
        }
    }
    let noise_seed = derive_seed(cfg.seed, NOISE_STREAM);
    let k = panel.num_classes();
    let rows = fractions
        .par_iter()
        .map(|&fraction| {
            let (labels, mask) = inject_label_noise(panel.labels(), fraction, k, noise_seed)?;
            let noisy = panel.with_labels(labels)?;
            let q = fit_vi(&to_response_matrix(&noisy)?, cfg)?;
            let params = posterior_point_estimates(&q)?;
            Ok(ScanRow {
                fraction,
                flipped: mask.iter().filter(|m| **m).count(),
                abilities: params.abilities().to_vec(),
                accuracies: accuracies(&noisy),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NoiseScan {
        classifier_ids: panel.classifier_ids().to_vec(),
        rows,
    })
}

fn accuracies(c: &ClassifierResponseSet) -> Vec<f64> {
    let n = c.num_instances() as f64;
    (0..c.num_classifiers())
        .map(|i| {
            let hits = c
                .labels()
                .iter()
                .enumerate()
                .filter(|&(j, &y)| {
                    let p = c.probs(i, j);
                    // ties resolve to the highest class, as in the metrics table
                    let pred = (0..p.len()).fold(0, |b, k| if p[k] >= p[b] { k } else { b });
                    pred == y
                })
                .count();
            hits as f64 / n
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossSummary {
    pub mean: f64,
    /// Sample standard deviation over repetitions.
    pub std: f64,
}

impl LossSummary {
    fn of(x: &[f64]) -> Self {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let std = if x.len() > 1 {
            (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct ComparisonConfig {
    pub beta3: MleConfig,
    pub two_pl: MleConfig,
    /// Significance level for [`Comparison::significant`].
    pub alpha: f64,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            beta3: MleConfig { family: Family::Beta3, ..MleConfig::default() },
            two_pl: MleConfig { family: Family::TwoPlNd, ..MleConfig::default() },
            alpha: 0.05,
        }
    }
}

/// Paired test log-losses of two fitting configurations over shared splits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub left: LossSummary,
    pub right: LossSummary,
    pub left_losses: Vec<f64>,
    pub right_losses: Vec<f64>,
    #[serde(skip)]
    pub test: Wilcoxon,
    pub p_value: f64,
    pub alpha: f64,
}

impl Comparison {
    pub fn significant(&self) -> bool {
        self.p_value < self.alpha
    }

    /// Whether the left configuration has the lower mean loss and the
    /// difference is significant.
    pub fn left_wins(&self) -> bool {
        self.significant() && self.left.mean < self.right.mean
    }
}

fn test_loss(split: &Split, cfg: &MleConfig, seed: u64) -> Result<f64> {
    let fit = fit_mle(&split.train, &MleConfig { seed, ..*cfg })?;
    let mut predicted = Vec::new();
    let mut observed = Vec::new();
    for o in &split.test {
        let q = fit
            .params
            .expected(o.respondent, o.item)?
            .clamp(cfg.clip_epsilon, 1.0 - cfg.clip_epsilon);
        for _ in 0..o.multiplicity {
            predicted.push(q);
            observed.push(o.response);
        }
    }
    log_loss(&predicted, &observed)
}

/// Fits `left` and `right` on the same holdout splits and compares their
/// test log-losses with a paired Wilcoxon signed-rank test.
///
/// The fit seed of repetition `r` is derived from the repetition's seed and
/// the configuration's own seed, so both configurations share splits but
/// not initial draws unless their seeds coincide.
pub fn compare_fits(
    data: &crate::response::ResponseMatrix,
    plan: &HoldoutPlan,
    left: &MleConfig,
    right: &MleConfig,
    alpha: f64,
) -> Result<Comparison> {
    left.validate()?;
    right.validate()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha", format!("{alpha} is outside (0, 1)")));
    }
    let splits = stratified_holdout(data, plan)?;
    let losses = splits
        .par_iter()
        .enumerate()
        .map(|(r, split)| {
            let rep_seed = plan.repetition_seed(r);
            let l = test_loss(split, left, derive_seed(rep_seed, left.seed))?;
            let rr = test_loss(split, right, derive_seed(rep_seed, right.seed))?;
            Ok((l, rr))
        })
        .collect::<Result<Vec<_>>>()?;
    let (left_losses, right_losses): (Vec<f64>, Vec<f64>) = losses.into_iter().unzip();
    let test = wilcoxon_signed_rank(&left_losses, &right_losses)?;
    Ok(Comparison {
        left: LossSummary::of(&left_losses),
        right: LossSummary::of(&right_losses),
        left_losses,
        right_losses,
        test,
        p_value: test.p_value,
        alpha,
    })
}

/// Beta3 (left) against 2PL-ND (right) on one dataset.
pub fn compare_models(
    data: &crate::response::ResponseMatrix,
    plan: &HoldoutPlan,
    cfg: &ComparisonConfig,
) -> Result<Comparison> {
    if cfg.beta3.family != Family::Beta3 || cfg.two_pl.family != Family::TwoPlNd {
        return Err(Error::invalid("family", "comparison expects a beta3 and a 2plnd configuration"));
    }
    compare_fits(data, plan, &cfg.beta3, &cfg.two_pl, cfg.alpha)
}

/// One comparison row per dataset, in input order.
pub fn compare_datasets(
    datasets: &[crate::response::ResponseMatrix],
    plan: &HoldoutPlan,
    cfg: &ComparisonConfig,
) -> Result<Vec<Comparison>> {
    datasets.iter().map(|d| compare_models(d, plan, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vi::{LogitNormalQ, NormalQ};

    fn posteriors(means: &[f64]) -> PosteriorSet {
        PosteriorSet {
            ability_q: vec![LogitNormalQ::new(0.0, 1.0).unwrap()],
            difficulty_q: means.iter().map(|_| LogitNormalQ::new(0.0, 1.0).unwrap()).collect(),
            discrimination_q: means.iter().map(|&m| NormalQ::new(m, 0.5).unwrap()).collect(),
            elbo_trace: Vec::new(),
        }
    }

    #[test]
    fn flags_are_sorted_and_thresholded() {
        let q = posteriors(&[0.5, -0.2, -1.0, 1.0, -0.2]);
        assert_eq!(flag_noisy_items(&q, 0.0), vec![(2, -1.0), (1, -0.2), (4, -0.2)]);
        assert!(flag_noisy_items(&posteriors(&[1.0; 4]), 0.0).is_empty());
        assert_eq!(flag_noisy_items(&q, f64::INFINITY).len(), 5);
    }

    #[test]
    fn identical_configurations_tie() {
        let truth = crate::synth::GeneratorSpec::new(6, 30, 4);
        let (data, _) = crate::synth::sample_dataset(&truth).unwrap();
        let plan = HoldoutPlan { repetitions: 6, ..HoldoutPlan::default() };
        let cfg = MleConfig { iterations: 20, batch_size: 50, ..MleConfig::default() };
        let c = compare_fits(&data, &plan, &cfg, &cfg, 0.05).unwrap();
        assert_eq!(c.p_value, 1.0);
        assert_eq!(c.left.mean, c.right.mean);
        assert!(!c.significant());
    }

    #[test]
    fn comparison_rejects_swapped_families() {
        let (data, _) = crate::synth::sample_dataset(&crate::synth::GeneratorSpec::new(3, 5, 1)).unwrap();
        let cfg = ComparisonConfig {
            beta3: MleConfig { family: Family::TwoPlNd, ..MleConfig::default() },
            ..ComparisonConfig::default()
        };
        assert!(compare_models(&data, &HoldoutPlan::default(), &cfg).is_err());
    }
}
