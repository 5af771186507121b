//! Moral-foundation labels, questionnaire subscales and per-foundation scorecards.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Group label for the conventional-violation control class.
pub const SOCIAL_NORM: &str = "social_norm";
/// Group label for non-moral text.
pub const NONMORAL: &str = "nonmoral";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Foundation {
    Care,
    Fairness,
    Loyalty,
    Authority,
    #[serde(alias = "purity")]
    Sanctity,
}

impl Foundation {
    pub const ALL: [Foundation; 5] = [
        Foundation::Care,
        Foundation::Fairness,
        Foundation::Loyalty,
        Foundation::Authority,
        Foundation::Sanctity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Foundation::Care => "care",
            Foundation::Fairness => "fairness",
            Foundation::Loyalty => "loyalty",
            Foundation::Authority => "authority",
            Foundation::Sanctity => "sanctity",
        }
    }
}

impl fmt::Display for Foundation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Foundation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "care" => Ok(Foundation::Care),
            "fairness" => Ok(Foundation::Fairness),
            "loyalty" => Ok(Foundation::Loyalty),
            "authority" => Ok(Foundation::Authority),
            "sanctity" | "purity" => Ok(Foundation::Sanctity),
            other => Err(Error::validation(format!("unknown foundation `{other}`"))),
        }
    }
}

/// Questionnaire subscale. Fairness is split into two subscales that are
/// averaged back together in the scorecard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subscale {
    Care,
    Equality,
    Proportionality,
    Loyalty,
    Authority,
    #[serde(alias = "sanctity")]
    Purity,
}

impl Subscale {
    pub const ALL: [Subscale; 6] = [
        Subscale::Care,
        Subscale::Equality,
        Subscale::Proportionality,
        Subscale::Loyalty,
        Subscale::Authority,
        Subscale::Purity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Subscale::Care => "care",
            Subscale::Equality => "equality",
            Subscale::Proportionality => "proportionality",
            Subscale::Loyalty => "loyalty",
            Subscale::Authority => "authority",
            Subscale::Purity => "purity",
        }
    }

    /// The foundation this subscale's mean contributes to.
    pub fn foundation(self) -> Foundation {
        match self {
            Subscale::Care => Foundation::Care,
            Subscale::Equality | Subscale::Proportionality => Foundation::Fairness,
            Subscale::Loyalty => Foundation::Loyalty,
            Subscale::Authority => Foundation::Authority,
            Subscale::Purity => Foundation::Sanctity,
        }
    }
}

impl fmt::Display for Subscale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Foundation-level scores on the 1..5 Likert scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoundationScorecard {
    pub care: f64,
    pub fairness: f64,
    pub loyalty: f64,
    pub authority: f64,
    pub sanctity: f64,
    pub equality: f64,
    pub proportionality: f64,
}

impl FoundationScorecard {
    /// Builds a scorecard from subscale means ordered as [`Subscale::ALL`].
    pub fn from_subscales(means: [f64; 6]) -> Self {
        let [care, equality, proportionality, loyalty, authority, purity] = means;
        Self {
            care,
            fairness: 0.5 * (equality + proportionality),
            loyalty,
            authority,
            sanctity: purity,
            equality,
            proportionality,
        }
    }

    pub fn get(&self, f: Foundation) -> f64 {
        match f {
            Foundation::Care => self.care,
            Foundation::Fairness => self.fairness,
            Foundation::Loyalty => self.loyalty,
            Foundation::Authority => self.authority,
            Foundation::Sanctity => self.sanctity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("care", self.care),
            ("fairness", self.fairness),
            ("loyalty", self.loyalty),
            ("authority", self.authority),
            ("sanctity", self.sanctity),
            ("equality", self.equality),
            ("proportionality", self.proportionality),
        ];
        for (name, v) in fields {
            if !(1.0..=5.0).contains(&v) {
                return Err(Error::validation(format!(
                    "scorecard field `{name}` = {v} outside [1, 5]"
                )));
            }
        }
        let expected = 0.5 * (self.equality + self.proportionality);
        if (self.fairness - expected).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "scorecard fairness {} != mean(equality, proportionality) {expected}",
                self.fairness
            )));
        }
        Ok(())
    }
}
