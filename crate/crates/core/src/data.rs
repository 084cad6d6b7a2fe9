//! In-memory choice data and model parameters.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::spec::UtilitySpec;

/// One choice task: attribute values for every alternative, which
/// alternatives were offered and which one was picked.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceSituation {
    /// Row-major `alternatives × attributes`.
    values: Vec<f64>,
    available: Vec<bool>,
    chosen: usize,
}

impl ChoiceSituation {
    pub fn new(spec: &UtilitySpec, values: Vec<f64>, available: Vec<bool>, chosen: usize) -> Result<Self> {
        let j = spec.n_alternatives();
        check_len("situation attribute values", j * spec.n_attributes(), values.len())?;
        check_len("situation availability", j, available.len())?;
        if chosen >= j {
            return Err(Error::data(format!("chosen alternative index {chosen} out of range")));
        }
        if !available[chosen] {
            return Err(Error::data("chosen alternative is not available"));
        }
        if available.iter().filter(|&&a| a).count() < 2 {
            return Err(Error::data("fewer than two alternatives available"));
        }
        Ok(ChoiceSituation {
            values,
            available,
            chosen,
        })
    }

    /// Situation with every alternative available.
    pub fn all_available(spec: &UtilitySpec, values: Vec<f64>, chosen: usize) -> Result<Self> {
        Self::new(spec, values, vec![true; spec.n_alternatives()], chosen)
    }

    #[inline]
    pub fn value(&self, alternative: usize, attribute: usize, n_attributes: usize) -> f64 {
        self.values[alternative * n_attributes + attribute]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn available(&self) -> &[bool] {
        &self.available
    }

    pub fn chosen(&self) -> usize {
        self.chosen
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub id: String,
    /// Household or respondent key; folds never split a group.
    pub group: String,
    pub situations: Vec<ChoiceSituation>,
}

/// A panel of individuals bound to the spec their situations were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    spec: Arc<UtilitySpec>,
    individuals: Vec<Individual>,
}

impl Dataset {
    pub fn new(spec: Arc<UtilitySpec>, individuals: Vec<Individual>) -> Result<Self> {
        let width = spec.n_alternatives() * spec.n_attributes();
        for ind in &individuals {
            if ind.situations.is_empty() {
                return Err(Error::data(format!("individual `{}` has no choice situations", ind.id)));
            }
            for s in &ind.situations {
                check_len("situation attribute values", width, s.values.len())?;
                check_len("situation availability", spec.n_alternatives(), s.available.len())?;
            }
        }
        let ds = Dataset { spec, individuals };
        if ds.n_situations() == 0 {
            return Err(Error::data("dataset contains no choice situations"));
        }
        Ok(ds)
    }

    /// Individuals with no observed choices. Their likelihood is identically
    /// one, so a chain on this dataset samples the hierarchical prior.
    pub fn without_observations(spec: Arc<UtilitySpec>, n_individuals: usize) -> Self {
        let individuals = (0..n_individuals)
            .map(|i| Individual {
                id: format!("p{i}"),
                group: format!("p{i}"),
                situations: Vec::new(),
            })
            .collect();
        Dataset { spec, individuals }
    }

    pub fn spec(&self) -> &Arc<UtilitySpec> {
        &self.spec
    }

    pub fn individuals(&self) -> &[Individual] {
        &self.individuals
    }

    pub fn n_individuals(&self) -> usize {
        self.individuals.len()
    }

    pub fn n_situations(&self) -> usize {
        self.individuals.iter().map(|i| i.situations.len()).sum()
    }

    pub fn situations(&self) -> impl Iterator<Item = &ChoiceSituation> {
        self.individuals.iter().flat_map(|i| i.situations.iter())
    }

    /// Distinct group keys in order of first appearance.
    pub fn group_keys(&self) -> Vec<&str> {
        let mut seen = std::collections::HashSet::new();
        self.individuals
            .iter()
            .filter(|i| seen.insert(i.group.as_str()))
            .map(|i| i.group.as_str())
            .collect()
    }

    pub(crate) fn subset(&self, individuals: Vec<Individual>) -> Self {
        Dataset {
            spec: Arc::clone(&self.spec),
            individuals,
        }
    }
}

/// Population parameters: fixed coefficients `alpha`, latent mean `zeta`
/// and latent covariance `omega` of the random coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub alpha: DVector<f64>,
    pub zeta: DVector<f64>,
    pub omega: DMatrix<f64>,
}

pub(crate) const SYMMETRY_TOL: f64 = 1e-10;

impl ModelParams {
    pub fn new(alpha: DVector<f64>, zeta: DVector<f64>, omega: DMatrix<f64>) -> Self {
        ModelParams { alpha, zeta, omega }
    }

    /// `alpha = 0`, `zeta = 0`, `omega = I`.
    pub fn neutral(spec: &UtilitySpec) -> Self {
        let p = spec.n_random();
        ModelParams {
            alpha: DVector::zeros(spec.n_fixed()),
            zeta: DVector::zeros(p),
            omega: DMatrix::identity(p, p),
        }
    }

    pub fn check_dims(&self, spec: &UtilitySpec) -> Result<()> {
        check_len("alpha", spec.n_fixed(), self.alpha.len())?;
        check_len("zeta", spec.n_random(), self.zeta.len())?;
        check_len("omega rows", spec.n_random(), self.omega.nrows())?;
        check_len("omega cols", spec.n_random(), self.omega.ncols())
    }

    /// Dimensions, symmetry and positive definiteness of `omega`.
    pub fn validate(&self, spec: &UtilitySpec) -> Result<()> {
        self.check_dims(spec)?;
        check_finite(&self.alpha, "alpha")?;
        check_finite(&self.zeta, "zeta")?;
        linalg::check_symmetric(&self.omega, SYMMETRY_TOL)?;
        linalg::cholesky(&self.omega).map(|_| ())
    }
}

fn check_finite(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::numerical(format!("{what} has non-finite entries")))
    }
}
