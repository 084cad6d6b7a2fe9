//! Random-number primitives and Metropolis-Hastings kernels.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Individual};
use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::model::{self, Workspace};
use crate::spec::UtilitySpec;

pub const TARGET_ACCEPTANCE: f64 = 0.30;
const ACCEPTANCE_BAND: f64 = 0.01;
const STEP_MIN: f64 = 1e-6;
const STEP_MAX: f64 = 1e2;
/// Epochs between step-size updates for the single `alpha` proposal.
pub const ALPHA_ADAPT_WINDOW: u32 = 10;
/// Epochs between refreshes of the `alpha` proposal variances.
pub const ALPHA_SCALE_WINDOW: u32 = 100;

/// Proposal scales and acceptance bookkeeping for the MH layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhTuning {
    /// Step multiplier for individual latent proposals (covariance `rho²·Ω`).
    pub rho: f64,
    /// Step multiplier for `alpha` proposals.
    pub rho_alpha: f64,
    /// Per-component proposal variance for `alpha`.
    pub alpha_var: Vec<f64>,
    pub beta_accepted: u64,
    pub beta_proposed: u64,
    pub alpha_accepted: u32,
    pub alpha_proposed: u32,
    alpha_moments: Vec<(f64, f64)>,
    alpha_moment_count: u32,
}

impl MhTuning {
    pub fn new(n_fixed: usize) -> Self {
        MhTuning {
            rho: 0.1,
            rho_alpha: 1.0,
            alpha_var: vec![0.1; n_fixed],
            beta_accepted: 0,
            beta_proposed: 0,
            alpha_accepted: 0,
            alpha_proposed: 0,
            alpha_moments: vec![(0.0, 0.0); n_fixed],
            alpha_moment_count: 0,
        }
    }

    /// Close an epoch: adapt step sizes from the acceptance counts gathered
    /// since the last adaptation and refresh the `alpha` proposal variances.
    pub fn end_epoch(&mut self, alpha: &DVector<f64>) {
        if self.beta_proposed > 0 {
            let rate = self.beta_accepted as f64 / self.beta_proposed as f64;
            self.rho = adapt_step_size(self.rho, rate);
            self.beta_accepted = 0;
            self.beta_proposed = 0;
        }
        if self.alpha_proposed >= ALPHA_ADAPT_WINDOW {
            let rate = self.alpha_accepted as f64 / self.alpha_proposed as f64;
            self.rho_alpha = adapt_step_size(self.rho_alpha, rate);
            self.alpha_accepted = 0;
            self.alpha_proposed = 0;
        }
        if alpha.is_empty() {
            return;
        }
        // Welford accumulation of alpha draws; variances replace the
        // proposal scale once a window is complete.
        self.alpha_moment_count += 1;
        let n = self.alpha_moment_count as f64;
        for ((mean, m2), &a) in self.alpha_moments.iter_mut().zip(alpha.iter()) {
            let delta = a - *mean;
            *mean += delta / n;
            *m2 += delta * (a - *mean);
        }
        if self.alpha_moment_count >= ALPHA_SCALE_WINDOW {
            for (var, (_, m2)) in self.alpha_var.iter_mut().zip(&self.alpha_moments) {
                let v = m2 / (n - 1.0);
                if v > 0.0 && v.is_finite() {
                    *var = v.clamp(1e-8, 1e2);
                }
            }
            self.alpha_moments.iter_mut().for_each(|m| *m = (0.0, 0.0));
            self.alpha_moment_count = 0;
        }
    }
}

/// Multiplicative step-size adaptation towards 30% acceptance.
pub fn adapt_step_size(scale: f64, rate: f64) -> f64 {
    let next = if rate < TARGET_ACCEPTANCE - ACCEPTANCE_BAND {
        scale * 0.98
    } else if rate > TARGET_ACCEPTANCE + ACCEPTANCE_BAND {
        scale * 1.02
    } else {
        scale
    };
    next.clamp(STEP_MIN, STEP_MAX)
}

fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Draw from `N(mean, cov)` for a positive-semidefinite `cov`.
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    check_len("covariance", mean.len(), cov.nrows())?;
    let factor = linalg::psd_factor(cov)?;
    Ok(sample_mvn_factored(mean, &factor, rng))
}

/// Draw from `N(mean, L Lᵀ)` given the factor `L`.
pub fn sample_mvn_factored<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    factor: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let z = standard_normal_vector(mean.len(), rng);
    mean + factor * z
}

/// Draw from the inverse-Wishart with density
/// `∝ |Ω|^{-(dof+p+1)/2} exp(-tr(scale·Ω⁻¹)/2)`, so `E[Ω] = scale/(dof-p-1)`.
///
/// Bartlett construction: with `scale = C Cᵀ` and `A` the Bartlett factor of a
/// standard Wishart, `Ω = (C A⁻ᵀ)(C A⁻ᵀ)ᵀ`.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(
    dof: f64,
    scale: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if p == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if !(dof > (p as f64) - 1.0) {
        return Err(Error::domain(format!(
            "inverse-Wishart needs dof > p - 1 (dof = {dof}, p = {p})"
        )));
    }
    linalg::check_symmetric(scale, 1e-10 * scale.amax().max(1.0))?;
    let c = linalg::cholesky(scale)?;
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(dof - i as f64)
            .map_err(|e| Error::numerical(format!("chi-squared: {e}")))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    if (0..p).any(|i| a[(i, i)] <= 0.0) {
        return Err(Error::numerical("degenerate Bartlett factor"));
    }
    let a_inv = linalg::invert_lower(&a);
    let m = c * a_inv.transpose();
    let mut omega = &m * m.transpose();
    linalg::symmetrize(&mut omega);
    Ok(omega)
}

/// Result of one Metropolis-Hastings step.
#[derive(Debug, Clone, PartialEq)]
pub struct MhStep {
    pub value: DVector<f64>,
    pub log_target: f64,
    pub accepted: bool,
}

/// Random-walk MH step with proposal `current + step·z`, `z ~ N(0, I)`.
///
/// `log_target` is evaluated at the proposal only; the caller supplies the
/// current value's log target. Non-finite proposal targets are rejected.
pub fn random_walk_step<R, F>(
    current: &DVector<f64>,
    current_log_target: f64,
    step: &DMatrix<f64>,
    mut log_target: F,
    rng: &mut R,
) -> MhStep
where
    R: Rng + ?Sized,
    F: FnMut(&DVector<f64>) -> f64,
{
    let z = standard_normal_vector(current.len(), rng);
    let proposal = current + step * z;
    let proposal_log_target = log_target(&proposal);
    let log_ratio = acceptance_log_ratio(proposal_log_target, current_log_target);
    let accepted = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
    if accepted {
        MhStep {
            value: proposal,
            log_target: proposal_log_target,
            accepted,
        }
    } else {
        MhStep {
            value: current.clone(),
            log_target: current_log_target,
            accepted,
        }
    }
}

/// `log(target(proposal)/target(current))`, `-inf` when undefined.
pub fn acceptance_log_ratio(proposal_log_target: f64, current_log_target: f64) -> f64 {
    if proposal_log_target == current_log_target {
        return 0.0;
    }
    let r = proposal_log_target - current_log_target;
    if r.is_nan() {
        f64::NEG_INFINITY
    } else {
        r
    }
}

/// Normal mixing distribution in factored form, shared by all individuals
/// within one sweep.
#[derive(Debug, Clone)]
pub struct LatentPrior {
    pub zeta: DVector<f64>,
    /// Lower Cholesky factor of `omega`.
    pub chol: DMatrix<f64>,
}

impl LatentPrior {
    pub fn new(zeta: &DVector<f64>, omega: &DMatrix<f64>) -> Result<Self> {
        check_len("omega", zeta.len(), omega.nrows())?;
        Ok(LatentPrior {
            zeta: zeta.clone(),
            chol: linalg::cholesky(omega)?,
        })
    }

    /// `log φ(beta | zeta, omega)` up to an additive constant.
    pub fn log_density(&self, beta: &DVector<f64>) -> f64 {
        let w = linalg::solve_lower(&self.chol, &(beta - &self.zeta));
        -0.5 * w.norm_squared()
    }
}

/// One MH update of an individual's latent coefficients against
/// `L(y_n | alpha, beta_n) φ(beta_n | zeta, omega)`.
pub fn mh_update_individual<R: Rng + ?Sized>(
    spec: &UtilitySpec,
    beta: &DVector<f64>,
    individual: &Individual,
    alpha: &DVector<f64>,
    prior: &LatentPrior,
    rho: f64,
    rng: &mut R,
) -> (DVector<f64>, bool) {
    let mut ws = Workspace::new(spec);
    mh_update_individual_with(spec, beta, individual, alpha, prior, rho, &mut ws, rng)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn mh_update_individual_with<R: Rng + ?Sized>(
    spec: &UtilitySpec,
    beta: &DVector<f64>,
    individual: &Individual,
    alpha: &DVector<f64>,
    prior: &LatentPrior,
    rho: f64,
    ws: &mut Workspace,
    rng: &mut R,
) -> (DVector<f64>, bool) {
    let alpha = alpha.as_slice();
    let mut target = |b: &DVector<f64>| {
        model::panel_log_likelihood_with(spec, individual, alpha, b.as_slice(), ws) + prior.log_density(b)
    };
    let current = target(beta);
    let step = &prior.chol * rho;
    let out = random_walk_step(beta, current, &step, target, rng);
    (out.value, out.accepted)
}

/// Sum of panel log-likelihoods over all individuals. Terms are computed in
/// parallel when a pool is active but always summed in individual order.
pub fn dataset_log_likelihood(
    data: &Dataset,
    alpha: &DVector<f64>,
    betas: &[DVector<f64>],
    parallel: bool,
) -> f64 {
    let spec = data.spec().as_ref();
    let alpha = alpha.as_slice();
    let term = |(ind, beta): (&Individual, &DVector<f64>)| {
        let mut ws = Workspace::new(spec);
        model::panel_log_likelihood_with(spec, ind, alpha, beta.as_slice(), &mut ws)
    };
    if parallel {
        let terms: Vec<f64> = data.individuals().par_iter().zip(betas.par_iter()).map(term).collect();
        terms.iter().sum()
    } else {
        data.individuals().iter().zip(betas.iter()).map(term).sum()
    }
}

/// One MH update of the fixed coefficients under a flat prior.
pub fn mh_update_alpha<R: Rng + ?Sized>(
    alpha: &DVector<f64>,
    data: &Dataset,
    betas: &[DVector<f64>],
    tuning: &MhTuning,
    parallel: bool,
    rng: &mut R,
) -> (DVector<f64>, bool) {
    if alpha.is_empty() {
        return (alpha.clone(), true);
    }
    let step = DMatrix::from_diagonal(&DVector::from_iterator(
        alpha.len(),
        tuning.alpha_var.iter().map(|v| tuning.rho_alpha * v.sqrt()),
    ));
    let current = dataset_log_likelihood(data, alpha, betas, parallel);
    let out = random_walk_step(
        alpha,
        current,
        &step,
        |a| dataset_log_likelihood(data, a, betas, parallel),
        rng,
    );
    (out.value, out.accepted)
}
