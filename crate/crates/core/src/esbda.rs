//! Prior injection, validation tracking and early stopping.
//!
//! A transfer run starts the chain at a previously estimated model, scores
//! the trailing window of retained draws on held-out data at every
//! checkpoint, and stops once `patience` epochs pass without a new best
//! validation CEL. The returned estimate is the window at the best
//! checkpoint, not at the stopping epoch.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ModelParams, SYMMETRY_TOL};
use crate::engine::{
    self, ChainState, Executor, GibbsConfig, MonitorSignal, PosteriorSummary, RetainedDraw, Termination,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::metrics::MetricsPair;
use crate::model;
use crate::rng::{RngStream, EVALUATION_STREAM};
use crate::spec::UtilitySpec;

/// A previously estimated model used as the starting point of a transfer.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorModel {
    pub spec: Arc<UtilitySpec>,
    pub params: ModelParams,
    /// Free text: which level or dataset produced the model.
    pub provenance: String,
}

impl PriorModel {
    /// `omega` must be symmetric positive semidefinite. A singular `omega`
    /// can be evaluated but not used to start a chain.
    pub fn new(spec: Arc<UtilitySpec>, params: ModelParams, provenance: impl Into<String>) -> Result<Self> {
        params.check_dims(&spec)?;
        linalg::check_symmetric(&params.omega, SYMMETRY_TOL)?;
        linalg::psd_factor(&params.omega)?;
        Ok(PriorModel {
            spec,
            params,
            provenance: provenance.into(),
        })
    }

    /// Point model from a posterior summary (posterior means).
    pub fn from_summary(spec: Arc<UtilitySpec>, summary: &PosteriorSummary, provenance: impl Into<String>) -> Result<Self> {
        Self::new(spec, summary.point_estimate(), provenance)
    }
}

/// Start a chain at the prior: every individual's latent vector equals the
/// prior mean.
pub fn init_from_prior(prior: &PriorModel, data: &Dataset) -> Result<ChainState> {
    if prior.spec.as_ref() != data.spec().as_ref() {
        return Err(Error::SpecHashMismatch {
            expected: data.spec().hash(),
            artifact: prior.spec.hash(),
        });
    }
    prior.params.validate(&prior.spec)?;
    Ok(ChainState::new(prior.params.clone(), data.n_individuals()))
}

/// Start without a prior: `zeta = 0`, `omega = I`, `alpha = 0`.
pub fn init_nonconjugate(data: &Dataset) -> ChainState {
    ChainState::new(ModelParams::neutral(data.spec()), data.n_individuals())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStopConfig {
    /// Epochs without improvement before stopping (k). `None` disables
    /// early stopping.
    pub patience: Option<usize>,
    /// Earliest epoch at which a stop may trigger.
    pub min_epochs: usize,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        EarlyStopConfig {
            patience: Some(200),
            min_epochs: 0,
        }
    }
}

impl EarlyStopConfig {
    pub fn disabled() -> Self {
        EarlyStopConfig {
            patience: None,
            min_epochs: 0,
        }
    }

    pub fn validate(&self, thin: usize) -> Result<()> {
        if let Some(k) = self.patience {
            if k < thin || k % thin != 0 {
                return Err(Error::domain(format!(
                    "patience {k} must be a positive multiple of the checkpoint interval {thin}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub epoch: usize,
    pub train_cel: Option<f64>,
    pub validation_cel: Option<f64>,
    /// This checkpoint set a new best validation CEL.
    pub best_so_far: bool,
}

/// Per-checkpoint CEL history with best-so-far bookkeeping.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationTrace {
    pub points: Vec<TracePoint>,
    pub best_epoch: Option<usize>,
    pub best_cel: Option<f64>,
}

impl ValidationTrace {
    /// Append a checkpoint. Returns true when it is a strict improvement, so
    /// ties keep the earliest epoch.
    pub fn record(&mut self, epoch: usize, train_cel: Option<f64>, validation_cel: Option<f64>) -> bool {
        let improved = match (validation_cel, self.best_cel) {
            (Some(v), None) => !v.is_nan(),
            (Some(v), Some(best)) => v < best,
            (None, _) => false,
        };
        if improved {
            self.best_epoch = Some(epoch);
            self.best_cel = validation_cel;
        }
        self.points.push(TracePoint {
            epoch,
            train_cel,
            validation_cel,
            best_so_far: improved,
        });
        improved
    }

    pub fn last_epoch(&self) -> Option<usize> {
        self.points.last().map(|p| p.epoch)
    }

    /// Trace CSV: `epoch,train_cel,validation_cel,best_so_far`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_cel,validation_cel,best_so_far\n");
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.epoch,
                fmt(p.train_cel),
                fmt(p.validation_cel),
                u8::from(p.best_so_far)
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Stop once the latest checkpoint is at least `patience` epochs past the
/// best one (and past `min_epochs`).
pub fn should_stop(trace: &ValidationTrace, config: &EarlyStopConfig) -> StopDecision {
    let (Some(k), Some(current), Some(best)) = (config.patience, trace.last_epoch(), trace.best_epoch) else {
        return StopDecision::Continue;
    };
    if current >= best + k && current >= config.min_epochs {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    }
}

/// Mean parameters of a window of retained draws.
pub fn window_point(draws: &[RetainedDraw]) -> Option<ModelParams> {
    let first = draws.first()?;
    let n = draws.len() as f64;
    let mut alpha = DVector::zeros(first.alpha.len());
    let mut zeta = DVector::zeros(first.zeta.len());
    let mut omega = DMatrix::zeros(first.omega.nrows(), first.omega.ncols());
    for d in draws {
        alpha += &d.alpha;
        zeta += &d.zeta;
        omega += &d.omega;
    }
    Some(ModelParams::new(alpha / n, zeta / n, omega / n))
}

/// Simulated CEL of `params` on `data` with common random numbers: the
/// generator is re-seeded from `seed` on every call.
pub fn evaluate_params(params: &ModelParams, data: &Dataset, draws: usize, seed: u64) -> Result<MetricsPair> {
    if data.n_situations() == 0 {
        return Err(Error::data("evaluation set has no choice situations"));
    }
    let mut rng = RngStream::new(seed, EVALUATION_STREAM).rng();
    let probs = model::simulated_chosen_probabilities(params, data, draws, &mut rng)?;
    MetricsPair::from_probabilities(&probs)
}

/// CEL at a checkpoint: the mean of the trailing draw window, or the
/// current state if nothing has been retained yet.
pub fn checkpoint_evaluate(
    state: &ChainState,
    window: &[RetainedDraw],
    data: &Dataset,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let params = window_point(window).unwrap_or_else(|| state.params.clone());
    evaluate_params(&params, data, draws, seed).map(|m| m.cel)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointScore {
    pub train: Option<f64>,
    pub validation: Option<f64>,
}

/// Scores a checkpoint; the default is simulated CEL on held-out data.
pub trait CheckpointScorer {
    fn score(&mut self, state: &ChainState, window: &[RetainedDraw]) -> Result<CheckpointScore>;

    fn has_validation(&self) -> bool;
}

/// Simulated CEL on an optional training set and an optional validation set.
pub struct CelScorer<'a> {
    pub train: Option<&'a Dataset>,
    pub validation: Option<&'a Dataset>,
    pub draws: usize,
    pub seed: u64,
}

impl CheckpointScorer for CelScorer<'_> {
    fn score(&mut self, state: &ChainState, window: &[RetainedDraw]) -> Result<CheckpointScore> {
        let eval = |d: Option<&Dataset>| {
            d.map(|d| checkpoint_evaluate(state, window, d, self.draws, self.seed))
                .transpose()
        };
        Ok(CheckpointScore {
            train: eval(self.train)?,
            validation: eval(self.validation)?,
        })
    }

    fn has_validation(&self) -> bool {
        self.validation.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopReport {
    /// Epoch at which early stopping triggered (T).
    pub stop_epoch: usize,
    /// Epoch whose checkpoint is returned (T − k).
    pub output_epoch: usize,
    pub best_validation_cel: f64,
}

/// Chain state and draw window saved at the best checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub state: ChainState,
    pub window: Vec<RetainedDraw>,
}

#[derive(Debug, Clone)]
pub struct EsbdaRun {
    pub summary: PosteriorSummary,
    pub trace: ValidationTrace,
    /// Set when early stopping triggered.
    pub stop: Option<StopReport>,
    pub final_state: ChainState,
    pub best: Option<Checkpoint>,
}

impl EsbdaRun {
    pub fn epochs_run(&self) -> usize {
        self.final_state.epoch
    }
}

/// Run a chain from `init`, scoring every checkpoint with `scorer` and
/// rolling back to the best checkpoint when early stopping triggers.
pub fn run_esbda_with(
    train: &Dataset,
    init: ChainState,
    scorer: &mut dyn CheckpointScorer,
    gibbs: &GibbsConfig,
    stop: &EarlyStopConfig,
    executor: &Executor,
) -> Result<EsbdaRun> {
    stop.validate(gibbs.thin)?;
    if stop.patience.is_some() && !scorer.has_validation() {
        return Err(Error::data("early stopping needs a validation set"));
    }
    let spec = train.spec().clone();
    let window = gibbs.summary_window;
    let mut trace = ValidationTrace::default();
    let mut best: Option<Checkpoint> = None;

    let mut monitor = |state: &ChainState, draws: &[RetainedDraw]| -> Result<MonitorSignal> {
        let win = engine::trailing(draws, window);
        let score = scorer.score(state, win)?;
        if trace.record(state.epoch, score.train, score.validation) {
            best = Some(Checkpoint {
                state: state.clone(),
                window: win.to_vec(),
            });
        }
        Ok(match should_stop(&trace, stop) {
            StopDecision::Stop => MonitorSignal::Stop,
            StopDecision::Continue => MonitorSignal::Continue,
        })
    };
    let outcome = engine::run_chain(train, gibbs, init, executor, &mut monitor)?;

    let (summary, stop_report) = match (outcome.termination, &best) {
        (Termination::Monitor, Some(cp)) => (
            engine::summarize_posterior(&spec, &cp.window, window)?,
            Some(StopReport {
                stop_epoch: outcome.state.epoch,
                output_epoch: cp.state.epoch,
                best_validation_cel: trace.best_cel.unwrap_or(f64::NAN),
            }),
        ),
        _ if outcome.draws.is_empty() => (
            engine::summarize_posterior(&spec, &[RetainedDraw::of(&outcome.state)], 1)?,
            None,
        ),
        _ => (engine::summarize_posterior(&spec, &outcome.draws, window)?, None),
    };
    Ok(EsbdaRun {
        summary,
        trace,
        stop: stop_report,
        final_state: outcome.state,
        best,
    })
}

/// Transfer `prior` (or start from scratch when `None`) to `train`, early
/// stopping on simulated validation CEL.
pub fn run_esbda(
    train: &Dataset,
    validation: &Dataset,
    prior: Option<&PriorModel>,
    gibbs: &GibbsConfig,
    stop: &EarlyStopConfig,
    executor: &Executor,
) -> Result<EsbdaRun> {
    if validation.n_situations() == 0 {
        return Err(Error::data("validation set has no choice situations"));
    }
    let init = match prior {
        Some(p) => init_from_prior(p, train)?,
        None => init_nonconjugate(train),
    };
    let mut scorer = CelScorer {
        train: Some(train),
        validation: Some(validation),
        draws: gibbs.draws,
        seed: gibbs.seed,
    };
    run_esbda_with(train, init, &mut scorer, gibbs, stop, executor)
}

/// Evaluate the prior model as-is on `data`.
pub fn direct_application(prior: &PriorModel, data: &Dataset, draws: usize, seed: u64) -> Result<MetricsPair> {
    if prior.spec.as_ref() != data.spec().as_ref() {
        return Err(Error::SpecHashMismatch {
            expected: data.spec().hash(),
            artifact: prior.spec.hash(),
        });
    }
    evaluate_params(&prior.params, data, draws, seed)
}
