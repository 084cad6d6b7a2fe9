//! Hierarchical Bayes sampler for the mixed logit.
//!
//! One epoch sweeps the four conditional posteriors in order:
//!
//! 1. each `beta_n | alpha, zeta, omega` by Metropolis-Hastings,
//! 2. `zeta | omega, beta` from `N(mean(beta), omega / N)`,
//! 3. `omega | zeta, beta` from `IW(K + N, K·I + N·S)`,
//!    with `S = Σ (beta_n - zeta)(beta_n - zeta)ᵀ / N`,
//! 4. `alpha | beta` by Metropolis-Hastings under a flat prior.
//!
//! Draws are retained every `thin` epochs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ModelParams};
use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::model::Workspace;
use crate::rng::{RngStream, POPULATION_STREAM};
use crate::samplers::{self, LatentPrior, MhTuning};
use crate::spec::{CoefficientKind, UtilitySpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GibbsConfig {
    pub max_epochs: usize,
    /// Retention and checkpoint interval (T1).
    pub thin: usize,
    /// Progress-report interval (T2).
    pub plot_interval: usize,
    /// Inverse-Wishart prior degrees of freedom; `None` uses the number of
    /// random coefficients.
    pub prior_dof: Option<usize>,
    /// Simulation draws for unconditional probabilities (R).
    pub draws: usize,
    /// Retained draws averaged into a posterior summary (W).
    pub summary_window: usize,
    pub seed: u64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            max_epochs: 10_000,
            thin: 10,
            plot_interval: 20,
            prior_dof: None,
            draws: 100,
            summary_window: 50,
            seed: 0,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self, spec: &UtilitySpec) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::domain("thinning interval must be at least 1"));
        }
        if self.draws == 0 {
            return Err(Error::domain("draw count must be at least 1"));
        }
        if self.summary_window == 0 {
            return Err(Error::domain("summary window must be at least 1"));
        }
        if self.prior_dof(spec) < spec.n_random() {
            return Err(Error::domain("inverse-Wishart prior dof must be at least p"));
        }
        Ok(())
    }

    pub fn prior_dof(&self, spec: &UtilitySpec) -> usize {
        self.prior_dof.unwrap_or(spec.n_random()).max(1)
    }
}

/// Worker pool for the individual layer. Results never depend on the pool
/// size because every individual draws from its own stream.
#[derive(Debug, Default)]
pub struct Executor {
    pool: Option<rayon::ThreadPool>,
}

impl Executor {
    pub fn sequential() -> Self {
        Executor { pool: None }
    }

    pub fn with_workers(workers: usize) -> Result<Self> {
        if workers <= 1 {
            return Ok(Self::sequential());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::domain(format!("cannot build worker pool: {e}")))?;
        Ok(Executor { pool: Some(pool) })
    }

    pub fn is_parallel(&self) -> bool {
        self.pool.is_some()
    }

    pub(crate) fn run<T: Send>(&self, f: impl FnOnce(bool) -> T + Send) -> T {
        match &self.pool {
            Some(pool) => pool.install(|| f(true)),
            None => f(false),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub params: ModelParams,
    /// Latent coefficients, one vector per individual.
    pub betas: Vec<DVector<f64>>,
    pub tuning: MhTuning,
    pub epoch: usize,
}

impl ChainState {
    /// Every individual starts at `params.zeta`.
    pub fn new(params: ModelParams, n_individuals: usize) -> Self {
        let betas = vec![params.zeta.clone(); n_individuals];
        let tuning = MhTuning::new(params.alpha.len());
        ChainState {
            params,
            betas,
            tuning,
            epoch: 0,
        }
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        let spec = data.spec();
        self.params.validate(spec)?;
        check_len("latent rows", data.n_individuals(), self.betas.len())?;
        for b in &self.betas {
            check_len("latent vector", spec.n_random(), b.len())?;
        }
        Ok(())
    }

    fn betas_matrix(&self) -> DMatrix<f64> {
        let p = self.params.zeta.len();
        DMatrix::from_fn(self.betas.len(), p, |n, j| self.betas[n][j])
    }
}

/// Layer 2: `zeta ~ N(mean(beta), omega / N)`.
pub fn update_zeta<R: Rng + ?Sized>(
    betas: &[DVector<f64>],
    omega: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if betas.is_empty() {
        return Err(Error::domain("zeta update needs at least one individual"));
    }
    let n = betas.len() as f64;
    let p = omega.nrows();
    let mut mean = DVector::zeros(p);
    for b in betas {
        mean += b;
    }
    mean /= n;
    samplers::sample_mvn(&mean, &(omega / n), rng)
}

/// Layer 3: `omega ~ IW(K + N, K·I + N·S)`.
pub fn update_omega<R: Rng + ?Sized>(
    betas: &[DVector<f64>],
    zeta: &DVector<f64>,
    prior_dof: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if betas.is_empty() {
        return Err(Error::domain("omega update needs at least one individual"));
    }
    let p = zeta.len();
    if prior_dof < p.max(1) {
        return Err(Error::domain("inverse-Wishart prior dof must be at least p"));
    }
    let mut scale = DMatrix::identity(p, p) * prior_dof as f64;
    for b in betas {
        let d = b - zeta;
        scale += &d * d.transpose();
    }
    samplers::sample_inverse_wishart((prior_dof + betas.len()) as f64, &scale, rng)
}

/// One full sweep of the four layers.
pub fn gibbs_epoch(
    state: &ChainState,
    data: &Dataset,
    config: &GibbsConfig,
    executor: &Executor,
) -> Result<ChainState> {
    let spec = data.spec().as_ref();
    let epoch = state.epoch + 1;
    let p = spec.n_random();
    let mut next = state.clone();
    next.epoch = epoch;
    let mut pop_rng = RngStream::new(config.seed, POPULATION_STREAM).at(epoch as u64);

    if p > 0 {
        let prior = LatentPrior::new(&state.params.zeta, &state.params.omega)?;
        let alpha = &state.params.alpha;
        let rho = state.tuning.rho;
        let seed = config.seed;
        let update = |(n, (beta, ind)): (usize, (&DVector<f64>, &crate::data::Individual))| {
            let mut rng = RngStream::individual(seed, n).at(epoch as u64);
            let mut ws = Workspace::new(spec);
            samplers::mh_update_individual_with(spec, beta, ind, alpha, &prior, rho, &mut ws, &mut rng)
        };
        let results: Vec<(DVector<f64>, bool)> = executor.run(|parallel| {
            if parallel {
                state
                    .betas
                    .par_iter()
                    .zip(data.individuals().par_iter())
                    .enumerate()
                    .map(update)
                    .collect()
            } else {
                state
                    .betas
                    .iter()
                    .zip(data.individuals().iter())
                    .enumerate()
                    .map(update)
                    .collect()
            }
        });
        let mut accepted = 0;
        for (slot, (beta, acc)) in next.betas.iter_mut().zip(results) {
            *slot = beta;
            accepted += acc as u64;
        }
        next.tuning.beta_accepted += accepted;
        next.tuning.beta_proposed += state.betas.len() as u64;

        next.params.zeta = update_zeta(&next.betas, &state.params.omega, &mut pop_rng)?;
        next.params.omega = update_omega(&next.betas, &next.params.zeta, config.prior_dof(spec), &mut pop_rng)?;
        linalg::cholesky(&next.params.omega)
            .map_err(|_| Error::numerical(format!("omega lost positive definiteness at epoch {epoch}")))?;
    }

    if spec.n_fixed() > 0 {
        let (alpha, accepted) = executor.run(|parallel| {
            samplers::mh_update_alpha(&next.params.alpha, data, &next.betas, &next.tuning, parallel, &mut pop_rng)
        });
        next.params.alpha = alpha;
        next.tuning.alpha_accepted += accepted as u32;
        next.tuning.alpha_proposed += 1;
    }

    next.tuning.end_epoch(&next.params.alpha);
    Ok(next)
}

/// Parameters retained at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct RetainedDraw {
    pub epoch: usize,
    pub alpha: DVector<f64>,
    pub zeta: DVector<f64>,
    pub omega: DMatrix<f64>,
    /// `N × p`, one row per individual.
    pub betas: DMatrix<f64>,
}

impl RetainedDraw {
    pub fn of(state: &ChainState) -> Self {
        RetainedDraw {
            epoch: state.epoch,
            alpha: state.params.alpha.clone(),
            zeta: state.params.zeta.clone(),
            omega: state.params.omega.clone(),
            betas: state.betas_matrix(),
        }
    }
}

pub type RetainedDraws = Vec<RetainedDraw>;

/// The trailing `window` draws.
pub fn trailing(draws: &[RetainedDraw], window: usize) -> &[RetainedDraw] {
    &draws[draws.len().saturating_sub(window)..]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MonitorSignal {
    Continue,
    Stop,
}

/// Observer invoked every `thin` epochs after the draw is retained.
pub trait ChainMonitor {
    fn observe(&mut self, state: &ChainState, draws: &[RetainedDraw]) -> Result<MonitorSignal>;
}

impl<F> ChainMonitor for F
where
    F: FnMut(&ChainState, &[RetainedDraw]) -> Result<MonitorSignal>,
{
    fn observe(&mut self, state: &ChainState, draws: &[RetainedDraw]) -> Result<MonitorSignal> {
        self(state, draws)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxEpochs,
    Monitor,
}

#[derive(Debug, Clone)]
pub struct ChainOutcome {
    pub draws: RetainedDraws,
    pub state: ChainState,
    pub termination: Termination,
}

/// A chain that failed part way; `partial` holds everything retained before
/// the failure.
#[derive(Debug)]
pub struct ChainFailure {
    pub error: Error,
    pub partial: ChainOutcome,
}

impl From<ChainFailure> for Error {
    fn from(f: ChainFailure) -> Self {
        f.error
    }
}

/// Run epochs from `init` until `max_epochs` or until the monitor stops the
/// chain. `init.epoch` is respected, so a chain can be resumed.
pub fn run_chain(
    data: &Dataset,
    config: &GibbsConfig,
    init: ChainState,
    executor: &Executor,
    monitor: &mut dyn ChainMonitor,
) -> Result<ChainOutcome, ChainFailure> {
    let spec = data.spec();
    let fail = |error: Error, draws: RetainedDraws, state: ChainState| ChainFailure {
        error,
        partial: ChainOutcome {
            draws,
            state,
            termination: Termination::MaxEpochs,
        },
    };
    if let Err(e) = config.validate(spec).and_then(|_| init.validate(data)) {
        return Err(fail(e, Vec::new(), init));
    }

    let mut state = init;
    let mut draws = Vec::new();
    while state.epoch < config.max_epochs {
        state = match gibbs_epoch(&state, data, config, executor) {
            Ok(next) => next,
            Err(e) => return Err(fail(e, draws, state)),
        };
        if config.plot_interval > 0 && state.epoch.is_multiple_of(config.plot_interval) {
            log::debug!(
                "epoch {} rho {:.4} rho_alpha {:.4}",
                state.epoch,
                state.tuning.rho,
                state.tuning.rho_alpha
            );
        }
        if !state.epoch.is_multiple_of(config.thin) {
            continue;
        }
        draws.push(RetainedDraw::of(&state));
        match monitor.observe(&state, &draws) {
            Ok(MonitorSignal::Continue) => {}
            Ok(MonitorSignal::Stop) => {
                return Ok(ChainOutcome {
                    draws,
                    state,
                    termination: Termination::Monitor,
                })
            }
            Err(e) => {
                let epoch = state.epoch;
                return Err(fail(
                    Error::Aborted {
                        epoch,
                        reason: e.to_string(),
                    },
                    draws,
                    state,
                ));
            }
        }
    }
    Ok(ChainOutcome {
        draws,
        state,
        termination: Termination::MaxEpochs,
    })
}

/// Run without a monitor.
pub fn run_chain_unmonitored(
    data: &Dataset,
    config: &GibbsConfig,
    init: ChainState,
    executor: &Executor,
) -> Result<ChainOutcome> {
    let mut monitor = |_: &ChainState, _: &[RetainedDraw]| Ok(MonitorSignal::Continue);
    run_chain(data, config, init, executor, &mut monitor).map_err(Error::from)
}

/// Posterior mean and standard deviation of one quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

impl Stat {
    /// Mean and sample standard deviation (n − 1 denominator; 0 for one value).
    pub fn of(values: impl IntoIterator<Item = f64>) -> Stat {
        let mut n = 0.0;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for x in values {
            n += 1.0;
            let d = x - mean;
            mean += d / n;
            m2 += d * (x - mean);
        }
        let sd = if n > 1.0 { (m2 / (n - 1.0)).sqrt() } else { 0.0 };
        Stat { mean, sd }
    }
}

/// Statistics of one coefficient across the summary window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEstimate {
    pub name: String,
    pub kind: CoefficientKind,
    /// Fixed: `alpha`. Random: latent mean `zeta`.
    pub mean: Stat,
    /// Random only: latent standard deviation `sqrt(omega_jj)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Stat>,
    /// Coefficient on the utility scale: `alpha` for fixed coefficients,
    /// transformed individual draws for random ones.
    pub simulated: Stat,
}

/// Summary of the trailing window of retained draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub draw_count: usize,
    pub first_epoch: usize,
    pub last_epoch: usize,
    /// In spec order.
    pub coefficients: Vec<CoefficientEstimate>,
    pub alpha_mean: Vec<f64>,
    pub zeta_mean: Vec<f64>,
    /// Row-major mean of the `omega` draws.
    pub omega_mean: Vec<Vec<f64>>,
}

impl PosteriorSummary {
    pub fn coefficient(&self, name: &str) -> Option<&CoefficientEstimate> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    /// Mean parameters, used as a point model for prediction and transfer.
    pub fn point_estimate(&self) -> ModelParams {
        let p = self.zeta_mean.len();
        ModelParams {
            alpha: DVector::from_column_slice(&self.alpha_mean),
            zeta: DVector::from_column_slice(&self.zeta_mean),
            omega: DMatrix::from_fn(p, p, |i, j| self.omega_mean[i][j]),
        }
    }
}

/// Summarize the last `min(window, available)` retained draws.
pub fn summarize_posterior(
    spec: &UtilitySpec,
    draws: &[RetainedDraw],
    window: usize,
) -> Result<PosteriorSummary> {
    if draws.is_empty() || window == 0 {
        return Err(Error::domain("no retained draws to summarize"));
    }
    let win = trailing(draws, window);
    let p = spec.n_random();
    let q = spec.n_fixed();
    for d in win {
        check_len("retained alpha", q, d.alpha.len())?;
        check_len("retained zeta", p, d.zeta.len())?;
    }
    let kinds = spec.random_kinds();

    let mut omega_mean = DMatrix::<f64>::zeros(p, p);
    for d in win {
        omega_mean += &d.omega;
    }
    omega_mean /= win.len() as f64;

    let mut coefficients = Vec::with_capacity(spec.coefficients().len());
    for coef in spec.coefficients() {
        let est = match spec.slot_of(&coef.name).expect("coefficient in spec") {
            crate::spec::Slot::Fixed(i) => {
                let s = Stat::of(win.iter().map(|d| d.alpha[i]));
                CoefficientEstimate {
                    name: coef.name.clone(),
                    kind: coef.kind,
                    mean: s,
                    sigma: None,
                    simulated: s,
                }
            }
            crate::spec::Slot::Random(j) => CoefficientEstimate {
                name: coef.name.clone(),
                kind: coef.kind,
                mean: Stat::of(win.iter().map(|d| d.zeta[j])),
                sigma: Some(Stat::of(win.iter().map(|d| d.omega[(j, j)].sqrt()))),
                simulated: Stat::of(
                    win.iter()
                        .flat_map(|d| d.betas.column(j).iter().map(|&b| kinds[j].transform(b)).collect::<Vec<_>>()),
                ),
            },
        };
        coefficients.push(est);
    }

    let mean_of = |f: &dyn Fn(&RetainedDraw) -> &DVector<f64>, len: usize| -> Vec<f64> {
        (0..len)
            .map(|i| win.iter().map(|d| f(d)[i]).sum::<f64>() / win.len() as f64)
            .collect()
    };

    Ok(PosteriorSummary {
        draw_count: win.len(),
        first_epoch: win[0].epoch,
        last_epoch: win[win.len() - 1].epoch,
        coefficients,
        alpha_mean: mean_of(&|d| &d.alpha, q),
        zeta_mean: mean_of(&|d| &d.zeta, p),
        omega_mean: (0..p).map(|i| (0..p).map(|j| omega_mean[(i, j)]).collect()).collect(),
    })
}
