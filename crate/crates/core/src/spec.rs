//! Declarative utility specifications.
//!
//! A [`UtilitySpec`] lists the alternatives, the attribute columns and the
//! coefficients that bind attributes to alternatives. Coefficients are either
//! fixed (estimated as a single population value, collected in `alpha`) or
//! random (drawn per individual from a latent normal, collected in `beta_n`).
//! Random coefficients enter utility through a monotone transform chosen by
//! their [`CoefficientKind`].
//!
//! Specs are written as TOML:
//!
//! ```toml
//! alternatives = ["gas", "electric", "hybrid"]
//! attributes = ["price", "opcost"]
//!
//! [[coefficients]]
//! name = "price"
//! kind = "lognormal_negative"
//! attribute = "price"
//!
//! [[coefficients]]
//! name = "asc_electric"
//! kind = "fixed"
//! alternatives = ["electric"]   # no `attribute`: alternative-specific constant
//! ```

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Distribution family of a coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientKind {
    Fixed,
    #[serde(alias = "normal")]
    RandomNormal,
    #[serde(alias = "lognormal_positive")]
    RandomLognormalPositive,
    #[serde(alias = "lognormal_negative")]
    RandomLognormalNegative,
}

impl CoefficientKind {
    pub fn is_random(self) -> bool {
        !matches!(self, CoefficientKind::Fixed)
    }

    /// Map a latent normal value onto the coefficient scale.
    ///
    /// Fixed coefficients have no latent value; they pass through unchanged.
    #[inline]
    pub fn transform(self, latent: f64) -> f64 {
        match self {
            CoefficientKind::Fixed | CoefficientKind::RandomNormal => latent,
            CoefficientKind::RandomLognormalPositive => latent.exp(),
            CoefficientKind::RandomLognormalNegative => -latent.exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    pub name: String,
    pub kind: CoefficientKind,
    /// Bound attribute column. `None` marks an alternative-specific constant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
    /// Alternatives the coefficient enters. `None` means generic (all).
    #[serde(default, rename = "alternatives", skip_serializing_if = "Option::is_none")]
    pub applies_to: Option<Vec<String>>,
}

impl CoefficientSpec {
    pub fn is_constant(&self) -> bool {
        self.attribute.is_none()
    }
}

/// Where a coefficient's value lives in the parameter vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// Index into `alpha`.
    Fixed(usize),
    /// Index into `beta_n`.
    Random(usize),
}

/// A coefficient resolved against the alternative and attribute lists.
#[derive(Debug, Clone)]
pub(crate) struct Term {
    pub slot: Slot,
    /// Attribute column, or `None` for a constant.
    pub attribute: Option<usize>,
    pub applies: Vec<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct UtilitySpec {
    alternatives: Vec<String>,
    attributes: Vec<String>,
    coefficients: Vec<CoefficientSpec>,
    #[serde(skip)]
    terms: Vec<Term>,
    #[serde(skip)]
    random_kinds: Vec<CoefficientKind>,
    #[serde(skip)]
    fixed_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    alternatives: Vec<String>,
    attributes: Vec<String>,
    coefficients: Vec<CoefficientSpec>,
}

impl TryFrom<RawSpec> for UtilitySpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        UtilitySpec::new(raw.alternatives, raw.attributes, raw.coefficients)
    }
}

impl From<UtilitySpec> for RawSpec {
    fn from(spec: UtilitySpec) -> Self {
        RawSpec {
            alternatives: spec.alternatives,
            attributes: spec.attributes,
            coefficients: spec.coefficients,
        }
    }
}

impl PartialEq for UtilitySpec {
    fn eq(&self, other: &Self) -> bool {
        self.alternatives == other.alternatives
            && self.attributes == other.attributes
            && self.coefficients == other.coefficients
    }
}

impl UtilitySpec {
    pub fn new(
        alternatives: Vec<String>,
        attributes: Vec<String>,
        coefficients: Vec<CoefficientSpec>,
    ) -> Result<Self> {
        if alternatives.len() < 2 {
            return Err(Error::spec("at least two alternatives are required"));
        }
        ensure_unique("alternative", &alternatives)?;
        ensure_unique("attribute", &attributes)?;
        if coefficients.is_empty() {
            return Err(Error::spec("at least one coefficient is required"));
        }
        let names: Vec<String> = coefficients.iter().map(|c| c.name.clone()).collect();
        ensure_unique("coefficient", &names)?;

        let mut terms = Vec::with_capacity(coefficients.len());
        let mut random_kinds = Vec::new();
        let mut fixed_count = 0;
        let mut has_constant = vec![false; alternatives.len()];

        for coef in &coefficients {
            let attribute = match &coef.attribute {
                Some(attr) => Some(attributes.iter().position(|a| a == attr).ok_or_else(|| {
                    Error::spec(format!(
                        "coefficient `{}` binds unknown attribute `{attr}`",
                        coef.name
                    ))
                })?),
                None => None,
            };
            let applies = match &coef.applies_to {
                None => vec![true; alternatives.len()],
                Some(list) => {
                    if list.is_empty() {
                        return Err(Error::spec(format!(
                            "coefficient `{}` applies to no alternative",
                            coef.name
                        )));
                    }
                    let mut mask = vec![false; alternatives.len()];
                    for alt in list {
                        let idx = alternatives.iter().position(|a| a == alt).ok_or_else(|| {
                            Error::spec(format!(
                                "coefficient `{}` references unknown alternative `{alt}`",
                                coef.name
                            ))
                        })?;
                        mask[idx] = true;
                    }
                    mask
                }
            };
            if attribute.is_none() {
                if coef.kind != CoefficientKind::Fixed {
                    return Err(Error::spec(format!(
                        "constant `{}` must be of kind fixed",
                        coef.name
                    )));
                }
                if applies.iter().filter(|&&a| a).count() != 1 {
                    return Err(Error::spec(format!(
                        "constant `{}` must apply to exactly one alternative",
                        coef.name
                    )));
                }
                for (flag, &a) in has_constant.iter_mut().zip(&applies) {
                    *flag |= a;
                }
            }
            let slot = if coef.kind.is_random() {
                random_kinds.push(coef.kind);
                Slot::Random(random_kinds.len() - 1)
            } else {
                fixed_count += 1;
                Slot::Fixed(fixed_count - 1)
            };
            terms.push(Term {
                slot,
                attribute,
                applies,
            });
        }

        if has_constant.iter().all(|&c| c) {
            return Err(Error::spec(
                "every alternative carries a constant; one must be left as the normalization base",
            ));
        }

        Ok(UtilitySpec {
            alternatives,
            attributes,
            coefficients,
            terms,
            random_kinds,
            fixed_count,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawSpec = toml::from_str(text)?;
        raw.try_into()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&RawSpec::from(self.clone())).expect("spec serializes to TOML")
    }

    pub fn alternatives(&self) -> &[String] {
        &self.alternatives
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn coefficients(&self) -> &[CoefficientSpec] {
        &self.coefficients
    }

    pub fn n_alternatives(&self) -> usize {
        self.alternatives.len()
    }

    pub fn n_attributes(&self) -> usize {
        self.attributes.len()
    }

    /// Number of random coefficients (length of `beta_n` and `zeta`).
    pub fn n_random(&self) -> usize {
        self.random_kinds.len()
    }

    /// Number of fixed coefficients (length of `alpha`).
    pub fn n_fixed(&self) -> usize {
        self.fixed_count
    }

    /// Kinds of the random coefficients in `beta_n` order.
    pub fn random_kinds(&self) -> &[CoefficientKind] {
        &self.random_kinds
    }

    pub(crate) fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn slot_of(&self, name: &str) -> Option<Slot> {
        self.coefficients
            .iter()
            .position(|c| c.name == name)
            .map(|i| self.terms[i].slot)
    }

    pub fn alternative_index(&self, id: &str) -> Option<usize> {
        self.alternatives.iter().position(|a| a == id)
    }

    /// Names of the random coefficients in `beta_n` order.
    pub fn random_names(&self) -> Vec<&str> {
        self.named_slots(|s| matches!(s, Slot::Random(_)))
    }

    /// Names of the fixed coefficients in `alpha` order.
    pub fn fixed_names(&self) -> Vec<&str> {
        self.named_slots(|s| matches!(s, Slot::Fixed(_)))
    }

    fn named_slots(&self, keep: impl Fn(Slot) -> bool) -> Vec<&str> {
        self.coefficients
            .iter()
            .zip(&self.terms)
            .filter(|(_, t)| keep(t.slot))
            .map(|(c, _)| c.name.as_str())
            .collect()
    }

    /// Hex SHA-256 of the canonical JSON form; identifies the spec in model artifacts.
    pub fn hash(&self) -> String {
        let canonical =
            serde_json::to_vec(&RawSpec::from(self.clone())).expect("spec serializes to JSON");
        hex::encode(Sha256::digest(&canonical))
    }
}

fn ensure_unique(what: &str, items: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for item in items {
        if !seen.insert(item.as_str()) {
            return Err(Error::spec(format!("duplicate {what} `{item}`")));
        }
    }
    Ok(())
}
