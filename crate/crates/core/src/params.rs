//! Point estimates for either model family.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::icc::{self, Ability, Difficulty, Discrimination};

/// Which ICC a parameter set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Beta response model with abilities and difficulties on `(0, 1)`.
    Beta3,
    /// Logistic 2PL baseline on unbounded scales.
    #[serde(rename = "2plnd")]
    TwoPlNd,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Beta3 => "beta3",
            Family::TwoPlNd => "2plnd",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta3" => Ok(Family::Beta3),
            "2plnd" => Ok(Family::TwoPlNd),
            other => Err(Error::invalid("family", format!("unknown family {other:?}"))),
        }
    }
}

/// Abilities per respondent plus difficulty and discrimination per item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ModelParams {
    family: Family,
    abilities: Vec<f64>,
    difficulties: Vec<f64>,
    discriminations: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    family: Family,
    abilities: Vec<f64>,
    difficulties: Vec<f64>,
    discriminations: Vec<f64>,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = Error;
    fn try_from(r: RawParams) -> Result<Self> {
        ModelParams::new(r.family, r.abilities, r.difficulties, r.discriminations)
    }
}

impl From<ModelParams> for RawParams {
    fn from(p: ModelParams) -> Self {
        RawParams {
            family: p.family,
            abilities: p.abilities,
            difficulties: p.difficulties,
            discriminations: p.discriminations,
        }
    }
}

impl ModelParams {
    pub fn new(
        family: Family,
        abilities: Vec<f64>,
        difficulties: Vec<f64>,
        discriminations: Vec<f64>,
    ) -> Result<Self> {
        if difficulties.len() != discriminations.len() {
            return Err(Error::LengthMismatch {
                left: difficulties.len(),
                right: discriminations.len(),
            });
        }
        for &a in &discriminations {
            Discrimination::new(a)?;
        }
        match family {
            Family::Beta3 => {
                for &t in &abilities {
                    Ability::new(t)?;
                }
                for &d in &difficulties {
                    Difficulty::new(d)?;
                }
            }
            Family::TwoPlNd => {
                if let Some(&v) = abilities.iter().chain(&difficulties).find(|v| !v.is_finite()) {
                    return Err(Error::OutOfRange {
                        what: "ability or difficulty",
                        value: v,
                    });
                }
            }
        }
        Ok(Self {
            family,
            abilities,
            difficulties,
            discriminations,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn num_respondents(&self) -> usize {
        self.abilities.len()
    }

    pub fn num_items(&self) -> usize {
        self.difficulties.len()
    }

    /// Raw ability values: on `(0, 1)` for Beta3, unbounded for 2PL-ND.
    pub fn abilities(&self) -> &[f64] {
        &self.abilities
    }

    pub fn difficulties(&self) -> &[f64] {
        &self.difficulties
    }

    pub fn discriminations(&self) -> &[f64] {
        &self.discriminations
    }

    /// Expected response of respondent `i` to item `j`.
    pub fn expected(&self, i: usize, j: usize) -> Result<f64> {
        let theta = *self.abilities.get(i).ok_or(Error::IndexOutOfRange {
            what: "respondent",
            index: i,
            len: self.abilities.len(),
        })?;
        let delta = *self.difficulties.get(j).ok_or(Error::IndexOutOfRange {
            what: "item",
            index: j,
            len: self.difficulties.len(),
        })?;
        let a = self.discriminations[j];
        Ok(match self.family {
            Family::Beta3 => icc::expected_response(theta, delta, a),
            Family::TwoPlNd => icc::logistic(a * (theta - delta)),
        })
    }

    /// Expected responses for each `(respondent, item)` pair.
    pub fn predict(&self, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        pairs.iter().map(|&(i, j)| self.expected(i, j)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_predictions() {
        let p = ModelParams::new(Family::Beta3, vec![0.3, 0.7], vec![0.7], vec![2.5]).unwrap();
        assert_eq!(p.predict(&[(1, 0)]).unwrap(), vec![0.5]);
        let q = ModelParams::new(Family::TwoPlNd, vec![-1.2], vec![-1.2], vec![0.8]).unwrap();
        assert_eq!(q.predict(&[(0, 0)]).unwrap(), vec![0.5]);
        assert!(q.predict(&[]).unwrap().is_empty());
    }

    #[test]
    fn out_of_range_pairs() {
        let p = ModelParams::new(Family::Beta3, vec![0.3], vec![0.7], vec![1.0]).unwrap();
        assert!(matches!(
            p.predict(&[(0, 1)]),
            Err(Error::IndexOutOfRange { what: "item", .. })
        ));
        assert!(matches!(
            p.predict(&[(2, 0)]),
            Err(Error::IndexOutOfRange { what: "respondent", .. })
        ));
    }

    #[test]
    fn validation() {
        assert!(ModelParams::new(Family::Beta3, vec![1.0], vec![0.5], vec![1.0]).is_err());
        assert!(ModelParams::new(Family::TwoPlNd, vec![3.0], vec![-4.0], vec![1.0]).is_ok());
        assert!(ModelParams::new(Family::TwoPlNd, vec![0.0], vec![0.0, 1.0], vec![1.0]).is_err());
    }
}
