//! Estimation approaches behind a common trait, registered by name.
//!
//! | name            | starts from        | early stopping |
//! |-----------------|--------------------|----------------|
//! | `direct`        | prior, no sampling | n/a            |
//! | `nonconjugate`  | `zeta=0, omega=I`  | no             |
//! | `bda`           | prior              | no             |
//! | `esbda`         | prior              | yes            |

use std::sync::Arc;

use crate::data::Dataset;
use crate::engine::{Executor, GibbsConfig, PosteriorSummary};
use crate::error::{Error, Result};
use crate::esbda::{
    self, CelScorer, EarlyStopConfig, PriorModel, StopReport, ValidationTrace,
};

/// Inputs shared by every approach at one modelling level.
pub struct TransferTask<'a> {
    pub train: &'a Dataset,
    pub validation: Option<&'a Dataset>,
    pub prior: Option<&'a PriorModel>,
    pub gibbs: &'a GibbsConfig,
    pub stop: &'a EarlyStopConfig,
    pub executor: &'a Executor,
}

#[derive(Debug, Clone)]
pub struct SimulatorRun {
    pub simulator: String,
    /// Point model used for prediction.
    pub model: PriorModel,
    /// `None` when no estimation took place.
    pub summary: Option<PosteriorSummary>,
    pub trace: ValidationTrace,
    pub stop: Option<StopReport>,
    pub epochs_run: usize,
}

pub trait Simulator: Send + Sync {
    fn name(&self) -> &'static str;

    fn description(&self) -> &'static str;

    fn needs_prior(&self) -> bool;

    fn run(&self, task: &TransferTask<'_>) -> Result<SimulatorRun>;
}

fn require_prior<'a>(task: &TransferTask<'a>, who: &str) -> Result<&'a PriorModel> {
    task.prior
        .ok_or_else(|| Error::data(format!("simulator `{who}` needs a prior model")))
}

fn run_bayesian(
    name: &'static str,
    task: &TransferTask<'_>,
    prior: Option<&PriorModel>,
    stop: EarlyStopConfig,
) -> Result<SimulatorRun> {
    let init = match prior {
        Some(p) => esbda::init_from_prior(p, task.train)?,
        None => esbda::init_nonconjugate(task.train),
    };
    let mut scorer = CelScorer {
        train: Some(task.train),
        validation: task.validation,
        draws: task.gibbs.draws,
        seed: task.gibbs.seed,
    };
    let run = esbda::run_esbda_with(task.train, init, &mut scorer, task.gibbs, &stop, task.executor)?;
    let model = PriorModel::from_summary(Arc::clone(task.train.spec()), &run.summary, name)?;
    Ok(SimulatorRun {
        simulator: name.to_string(),
        model,
        epochs_run: run.epochs_run(),
        summary: Some(run.summary),
        trace: run.trace,
        stop: run.stop,
    })
}

/// Evaluate the previously estimated model without re-estimation.
pub struct DirectApplication;

impl Simulator for DirectApplication {
    fn name(&self) -> &'static str {
        "direct"
    }

    fn description(&self) -> &'static str {
        "previously estimated model applied as-is"
    }

    fn needs_prior(&self) -> bool {
        true
    }

    fn run(&self, task: &TransferTask<'_>) -> Result<SimulatorRun> {
        let prior = require_prior(task, self.name())?;
        if prior.spec.as_ref() != task.train.spec().as_ref() {
            return Err(Error::SpecHashMismatch {
                expected: task.train.spec().hash(),
                artifact: prior.spec.hash(),
            });
        }
        Ok(SimulatorRun {
            simulator: self.name().to_string(),
            model: prior.clone(),
            summary: None,
            trace: ValidationTrace::default(),
            stop: None,
            epochs_run: 0,
        })
    }
}

/// Hierarchical Bayes from neutral starting values.
pub struct Nonconjugate;

impl Simulator for Nonconjugate {
    fn name(&self) -> &'static str {
        "nonconjugate"
    }

    fn description(&self) -> &'static str {
        "hierarchical Bayes from neutral starting values"
    }

    fn needs_prior(&self) -> bool {
        false
    }

    fn run(&self, task: &TransferTask<'_>) -> Result<SimulatorRun> {
        run_bayesian(self.name(), task, None, EarlyStopConfig::disabled())
    }
}

/// Hierarchical Bayes started at the prior, run to the epoch cap.
pub struct Bda;

impl Simulator for Bda {
    fn name(&self) -> &'static str {
        "bda"
    }

    fn description(&self) -> &'static str {
        "hierarchical Bayes started at the prior model"
    }

    fn needs_prior(&self) -> bool {
        true
    }

    fn run(&self, task: &TransferTask<'_>) -> Result<SimulatorRun> {
        let prior = require_prior(task, self.name())?;
        run_bayesian(self.name(), task, Some(prior), EarlyStopConfig::disabled())
    }
}

/// Hierarchical Bayes started at the prior with early stopping on
/// validation CEL.
pub struct Esbda;

impl Simulator for Esbda {
    fn name(&self) -> &'static str {
        "esbda"
    }

    fn description(&self) -> &'static str {
        "prior-started hierarchical Bayes with early stopping"
    }

    fn needs_prior(&self) -> bool {
        true
    }

    fn run(&self, task: &TransferTask<'_>) -> Result<SimulatorRun> {
        let prior = require_prior(task, self.name())?;
        if task.validation.is_none() {
            return Err(Error::data("simulator `esbda` needs a validation set"));
        }
        run_bayesian(self.name(), task, Some(prior), *task.stop)
    }
}

/// Simulators in registration order, looked up by name.
#[derive(Clone, Default)]
pub struct SimulatorRegistry {
    entries: Vec<Arc<dyn Simulator>>,
}

impl SimulatorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Direct application, nonconjugate, BDA and ESBDA.
    pub fn standard() -> Self {
        let mut r = Self::new();
        for s in [
            Arc::new(DirectApplication) as Arc<dyn Simulator>,
            Arc::new(Nonconjugate),
            Arc::new(Bda),
            Arc::new(Esbda),
        ] {
            r.register(s).expect("built-in names are unique");
        }
        r
    }

    pub fn register(&mut self, simulator: Arc<dyn Simulator>) -> Result<()> {
        if self.get(simulator.name()).is_some() {
            return Err(Error::spec(format!("simulator `{}` is already registered", simulator.name())));
        }
        self.entries.push(simulator);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn Simulator>> {
        self.entries.iter().find(|s| s.name() == name).cloned()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|s| s.name()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<dyn Simulator>> {
        self.entries.iter()
    }

    /// Registry restricted to `names`, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let mut out = Self::new();
        for n in names {
            let s = self
                .get(n)
                .ok_or_else(|| Error::spec(format!("unknown simulator `{n}` (known: {})", self.names().join(", "))))?;
            out.register(s)?;
        }
        Ok(out)
    }
}
