use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::response::{Observation, ResponseMatrix};
use crate::rng::{self, derive_seed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoldoutPlan {
    pub repetitions: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for HoldoutPlan {
    fn default() -> Self {
        Self {
            repetitions: 30,
            train_fraction: 0.9,
            seed: 0,
        }
    }
}

impl HoldoutPlan {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 1 {
            return Err(Error::invalid("repetitions", "must be at least 1"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid(
                "train_fraction",
                format!("{} is outside (0, 1)", self.train_fraction),
            ));
        }
        Ok(())
    }

    /// Seed of repetition `rep`; fits inside that repetition derive from it.
    pub fn repetition_seed(&self, rep: usize) -> u64 {
        derive_seed(self.seed, rep as u64)
    }
}

/// One train/test partition of a response matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: ResponseMatrix,
    pub test: Vec<Observation>,
    /// Positions in the source observation list, ascending.
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

fn keep_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n)
}

/// Relocation rounds down so an item seen twice keeps one test observation.
fn relocate_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).floor() as usize).clamp(1, n)
}

/// Repeated holdout stratified by respondent.
///
/// Each respondent's observations are split `train_fraction` / rest. Items
/// that end up with no training observation get `train_fraction` of their
/// observations (rounded down, at least one) moved back into the training side, so every respondent and
/// every item is covered by the training matrix. Observations are the unit
/// of splitting; multiplicities travel with them.
pub fn stratified_holdout(data: &ResponseMatrix, plan: &HoldoutPlan) -> Result<Vec<Split>> {
    plan.validate()?;
    (0..plan.repetitions)
        .map(|rep| split_once(data, plan.train_fraction, plan.repetition_seed(rep)))
        .collect()
}

fn split_once(data: &ResponseMatrix, fraction: f64, seed: u64) -> Result<Split> {
    let mut rng = rng::seeded(seed);
    let obs = data.observations();
    let mut in_train = vec![false; obs.len()];
    for mut idx in data.indices_by_respondent() {
        idx.shuffle(&mut rng);
        let k = keep_count(idx.len(), fraction);
        for &o in &idx[..k] {
            in_train[o] = true;
        }
    }
    for idx in data.indices_by_item() {
        if idx.iter().any(|&o| in_train[o]) {
            continue;
        }
        let mut idx = idx;
        idx.shuffle(&mut rng);
        let k = relocate_count(idx.len(), fraction);
        for &o in &idx[..k] {
            in_train[o] = true;
        }
    }
    let (train_indices, test_indices): (Vec<usize>, Vec<usize>) =
        (0..obs.len()).partition(|&o| in_train[o]);
    if test_indices.is_empty() {
        return Err(Error::InsufficientData(
            "every observation is needed for training coverage; the test split is empty".into(),
        ));
    }
    let train = ResponseMatrix::new(
        data.num_respondents(),
        data.num_items(),
        train_indices.iter().map(|&o| obs[o]).collect(),
    )?;
    let test = test_indices.iter().map(|&o| obs[o]).collect();
    Ok(Split {
        train,
        test,
        train_indices,
        test_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(m: usize, n: usize) -> ResponseMatrix {
        ResponseMatrix::from_triples(
            (0..m).flat_map(|i| (0..n).map(move |j| (i, j, ((i + j) % 3) as f64 / 2.0))),
        )
        .unwrap()
    }

    #[test]
    fn ten_observations_split_nine_to_one() {
        let data = grid(30, 10);
        let plan = HoldoutPlan { repetitions: 3, ..HoldoutPlan::default() };
        for s in stratified_holdout(&data, &plan).unwrap() {
            let mut per_respondent = [0usize; 30];
            for o in &s.test {
                per_respondent[o.respondent] += 1;
            }
            assert!(per_respondent.iter().all(|&c| c == 1));
            assert_eq!(s.train.len(), 270);
        }
    }

    #[test]
    fn item_missing_from_train_is_relocated() {
        // respondent 0 answers items 0..9; item 9 is answered by nobody else
        let mut triples: Vec<(usize, usize, f64)> = (0..10).map(|j| (0, j, 1.0)).collect();
        triples.extend((0..9).map(|j| (1, j, 0.0)));
        let data = ResponseMatrix::from_triples(triples).unwrap();
        let plan = HoldoutPlan { repetitions: 20, seed: 3, ..HoldoutPlan::default() };
        for s in stratified_holdout(&data, &plan).unwrap() {
            let covered: std::collections::HashSet<usize> =
                s.train.observations().iter().map(|o| o.item).collect();
            assert_eq!(covered.len(), 10);
        }
    }

    #[test]
    fn empty_test_side_is_reported() {
        let data = grid(2, 1);
        let err = stratified_holdout(&data, &HoldoutPlan::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
    }

    #[test]
    fn plan_validation() {
        let bad = HoldoutPlan { train_fraction: 1.0, ..HoldoutPlan::default() };
        assert!(matches!(bad.validate(), Err(Error::Invalid { field: "train_fraction", .. })));
        let bad = HoldoutPlan { repetitions: 0, ..HoldoutPlan::default() };
        assert!(bad.validate().is_err());
    }
}
