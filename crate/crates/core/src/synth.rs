//! Synthetic panels drawn from a known mixed-logit model.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{ChoiceSituation, Dataset, Individual, ModelParams};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model;
use crate::rng::{RngStream, DATA_STREAM};
use crate::samplers;
use crate::spec::UtilitySpec;

/// Generating model of a synthetic dataset.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub spec: Arc<UtilitySpec>,
    pub params: ModelParams,
    pub seed: u64,
}

/// Distribution of every attribute value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum AttributeLaw {
    #[default]
    StandardNormal,
    Normal { mean: f64, sd: f64 },
    Uniform { low: f64, high: f64 },
}

impl AttributeLaw {
    fn sampler(self) -> Result<Box<dyn Fn(&mut dyn rand::RngCore) -> f64>> {
        Ok(match self {
            AttributeLaw::StandardNormal => Box::new(|rng| rng.sample(StandardNormal)),
            AttributeLaw::Normal { mean, sd } => {
                let d = Normal::new(mean, sd).map_err(|e| Error::domain(format!("attribute law: {e}")))?;
                Box::new(move |rng| d.sample(rng))
            }
            AttributeLaw::Uniform { low, high } => {
                let d = Uniform::new(low, high).map_err(|e| Error::domain(format!("attribute law: {e}")))?;
                Box::new(move |rng| d.sample(rng))
            }
        })
    }
}

/// Draw a panel: attributes from `law`, one `beta_n ~ N(zeta, omega)` per
/// individual, choices from the logit probabilities. Every individual is
/// its own group.
pub fn generate_synthetic(
    truth: &GroundTruth,
    individuals: usize,
    situations_per_individual: usize,
    law: AttributeLaw,
) -> Result<Dataset> {
    if individuals == 0 || situations_per_individual == 0 {
        return Err(Error::domain("synthetic data needs at least one individual and one situation"));
    }
    let spec = &truth.spec;
    truth.params.check_dims(spec)?;
    let factor = linalg::psd_factor(&truth.params.omega)?;
    let attr = law.sampler()?;
    let mut rng = RngStream::new(truth.seed, DATA_STREAM).rng();
    let j = spec.n_alternatives();
    let width = j * spec.n_attributes();
    let alpha = truth.params.alpha.as_slice();

    let mut out = Vec::with_capacity(individuals);
    for n in 0..individuals {
        let beta = samplers::sample_mvn_factored(&truth.params.zeta, &factor, &mut rng);
        let coefs = model::transform_latent(beta.as_slice(), spec.random_kinds())?;
        let mut situations = Vec::with_capacity(situations_per_individual);
        for _ in 0..situations_per_individual {
            let values: Vec<f64> = (0..width).map(|_| attr(&mut rng)).collect();
            let probe = ChoiceSituation::all_available(spec, values, 0)?;
            let v = model::systematic_utility(spec, alpha, &coefs, &probe)?;
            let probs = model::choice_probabilities(&v, probe.available())?;
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = j - 1;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            situations.push(ChoiceSituation::all_available(spec, probe.values().to_vec(), chosen)?);
        }
        let id = format!("n{n:05}");
        out.push(Individual {
            group: id.clone(),
            id,
            situations,
        });
    }
    Dataset::new(Arc::clone(spec), out)
}
