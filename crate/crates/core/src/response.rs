//! Observed responses.

use crate::error::{Error, Result};

/// One observed response `p ∈ [0, 1]` of a respondent to an item.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub respondent: usize,
    pub item: usize,
    pub response: f64,
    /// How many times this exact triple was observed. Acts as a weight in
    /// every loss.
    pub multiplicity: u32,
}

impl Observation {
    pub fn new(respondent: usize, item: usize, response: f64) -> Self {
        Self {
            respondent,
            item,
            response,
            multiplicity: 1,
        }
    }

    pub(crate) fn weight(&self) -> f64 {
        f64::from(self.multiplicity)
    }
}

/// Sparse respondent × item response data.
///
/// Every respondent and every item occurs in at least one observation, all
/// indices are in bounds and all responses lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    num_respondents: usize,
    num_items: usize,
    observations: Vec<Observation>,
}

impl ResponseMatrix {
    pub fn new(
        num_respondents: usize,
        num_items: usize,
        observations: Vec<Observation>,
    ) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::InsufficientData("no observations".into()));
        }
        let mut seen_r = vec![false; num_respondents];
        let mut seen_i = vec![false; num_items];
        for o in &observations {
            if o.respondent >= num_respondents {
                return Err(Error::IndexOutOfRange {
                    what: "respondent",
                    index: o.respondent,
                    len: num_respondents,
                });
            }
            if o.item >= num_items {
                return Err(Error::IndexOutOfRange {
                    what: "item",
                    index: o.item,
                    len: num_items,
                });
            }
            if !(0.0..=1.0).contains(&o.response) {
                return Err(Error::invalid(
                    "response",
                    format!("{} is outside [0, 1]", o.response),
                ));
            }
            if o.multiplicity == 0 {
                return Err(Error::invalid("multiplicity", "must be at least 1"));
            }
            seen_r[o.respondent] = true;
            seen_i[o.item] = true;
        }
        if let Some(i) = seen_r.iter().position(|s| !s) {
            return Err(Error::InsufficientData(format!(
                "respondent {i} has no observations"
            )));
        }
        if let Some(j) = seen_i.iter().position(|s| !s) {
            return Err(Error::InsufficientData(format!("item {j} has no observations")));
        }
        Ok(Self {
            num_respondents,
            num_items,
            observations,
        })
    }

    /// Builds a matrix from `(respondent, item, response)` triples, sizing it
    /// from the largest indices present.
    pub fn from_triples(triples: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let observations: Vec<Observation> = triples
            .into_iter()
            .map(|(i, j, p)| Observation::new(i, j, p))
            .collect();
        let m = observations.iter().map(|o| o.respondent + 1).max().unwrap_or(0);
        let n = observations.iter().map(|o| o.item + 1).max().unwrap_or(0);
        Self::new(m, n, observations)
    }

    pub fn num_respondents(&self) -> usize {
        self.num_respondents
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Observation indices grouped by respondent.
    pub fn indices_by_respondent(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_respondents];
        for (k, o) in self.observations.iter().enumerate() {
            out[o.respondent].push(k);
        }
        out
    }

    /// Observation indices grouped by item.
    pub fn indices_by_item(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_items];
        for (k, o) in self.observations.iter().enumerate() {
            out[o.item].push(k);
        }
        out
    }

    /// Keeps the observations at `indices`, preserving the index space.
    /// Fails if the subset no longer covers every respondent and item.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let obs = indices.iter().map(|&k| self.observations[k]).collect();
        Self::new(self.num_respondents, self.num_items, obs)
    }
}
