//! Predictive metrics, significance marks and behavioural screening.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::engine::PosteriorSummary;
use crate::error::{Error, Result};

/// Probabilities below this are clamped before taking logs.
pub const PROBABILITY_FLOOR: f64 = 1e-300;

/// Cross-entropy loss: mean negative log probability of the chosen
/// alternatives, in nats per observation.
pub fn cel(chosen: &[f64]) -> Result<f64> {
    if chosen.is_empty() {
        return Err(Error::domain("cross-entropy of an empty set"));
    }
    let mut total = 0.0;
    for &p in chosen {
        if !(p > 0.0 && p <= 1.0 + 1e-12) {
            return Err(Error::domain(format!("probability {p} outside (0, 1]")));
        }
        total += p.ln();
    }
    Ok(-total / chosen.len() as f64)
}

/// Geometric mean of the chosen probabilities, `exp(-cel)`.
pub fn gmpca(chosen: &[f64]) -> Result<f64> {
    cel(chosen).map(|c| (-c).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsPair {
    pub cel: f64,
    pub gmpca: f64,
}

impl MetricsPair {
    pub fn from_cel(cel: f64) -> Self {
        MetricsPair {
            cel,
            gmpca: (-cel).exp(),
        }
    }

    /// Metrics with probabilities clamped at [`PROBABILITY_FLOOR`].
    pub fn from_probabilities(chosen: &[f64]) -> Result<Self> {
        let clamped: Vec<f64> = chosen.iter().map(|p| p.max(PROBABILITY_FLOOR)).collect();
        cel(&clamped).map(Self::from_cel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Significance {
    None,
    P05,
    P01,
    P001,
}

impl Significance {
    pub fn stars(self) -> &'static str {
        match self {
            Significance::None => "",
            Significance::P05 => "*",
            Significance::P01 => "**",
            Significance::P001 => "***",
        }
    }
}

impl fmt::Display for Significance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.stars())
    }
}

/// Two-sided z-test of the posterior mean against zero.
pub fn significance_stars(mean: f64, sd: f64) -> Significance {
    if mean == 0.0 || !mean.is_finite() {
        return Significance::None;
    }
    if sd <= 0.0 {
        return Significance::P001;
    }
    let z = mean.abs() / sd;
    if z > 3.2905 {
        Significance::P001
    } else if z > 2.5758 {
        Significance::P01
    } else if z > 1.9600 {
        Significance::P05
    } else {
        Significance::None
    }
}

/// Monetary-ratio deviation marks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RatioFlag {
    Ok,
    /// At least two orders of magnitude.
    TwoOrders,
    /// At least three orders of magnitude.
    ThreeOrders,
}

impl RatioFlag {
    pub fn mark(self) -> &'static str {
        match self {
            RatioFlag::Ok => "",
            RatioFlag::TwoOrders => "!",
            RatioFlag::ThreeOrders => "!!",
        }
    }

    /// Classify a log10 deviation. Deviations within 1e-9 below a
    /// threshold count as reaching it, absorbing rounding in the ratios.
    pub fn from_deviation(deviation: f64) -> Self {
        const EPS: f64 = 1e-9;
        if deviation.is_nan() || deviation >= 3.0 - EPS {
            RatioFlag::ThreeOrders
        } else if deviation >= 2.0 - EPS {
            RatioFlag::TwoOrders
        } else {
            RatioFlag::Ok
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyEntry {
    pub name: String,
    pub sign_error: bool,
    pub ratio: f64,
    pub reference_ratio: f64,
    /// `|log10(ratio / reference_ratio)|`.
    pub deviation: f64,
    pub flag: RatioFlag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub cost: String,
    /// A zero cost mean on either side makes every ratio undefined.
    pub degenerate: bool,
    pub entries: Vec<ConsistencyEntry>,
}

impl ConsistencyReport {
    pub fn entry(&self, name: &str) -> Option<&ConsistencyEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn flagged(&self) -> impl Iterator<Item = &ConsistencyEntry> {
        self.entries.iter().filter(|e| e.sign_error || e.flag != RatioFlag::Ok)
    }
}

fn simulated_mean(summary: &PosteriorSummary, name: &str) -> Result<f64> {
    summary
        .coefficient(name)
        .map(|c| c.simulated.mean)
        .ok_or_else(|| Error::spec(format!("coefficient `{name}` not in summary")))
}

/// Compare a candidate model's monetary ratios and signs with a reference.
pub fn behavioral_consistency(
    candidate: &PosteriorSummary,
    reference: &PosteriorSummary,
    cost: &str,
) -> Result<ConsistencyReport> {
    let cand_cost = simulated_mean(candidate, cost)?;
    let ref_cost = simulated_mean(reference, cost)?;
    let degenerate = cand_cost == 0.0 || ref_cost == 0.0;
    let mut entries = Vec::with_capacity(candidate.coefficients.len());
    for coef in &candidate.coefficients {
        let c = coef.simulated.mean;
        let r = simulated_mean(reference, &coef.name)?;
        let sign_error = c * r < 0.0;
        let (ratio, reference_ratio, deviation) = if degenerate {
            (f64::NAN, f64::NAN, f64::INFINITY)
        } else {
            let ratio = c / cand_cost;
            let reference_ratio = r / ref_cost;
            let deviation = if ratio == 0.0 && reference_ratio == 0.0 {
                0.0
            } else {
                (ratio.abs().log10() - reference_ratio.abs().log10()).abs()
            };
            (ratio, reference_ratio, deviation)
        };
        entries.push(ConsistencyEntry {
            name: coef.name.clone(),
            sign_error,
            ratio,
            reference_ratio,
            deviation,
            flag: if degenerate {
                RatioFlag::ThreeOrders
            } else {
                RatioFlag::from_deviation(deviation)
            },
        });
    }
    Ok(ConsistencyReport {
        cost: cost.to_string(),
        degenerate,
        entries,
    })
}

/// Time coefficient over cost coefficient, per time coefficient.
pub fn value_of_time(
    summary: &PosteriorSummary,
    time: &[&str],
    cost: &str,
) -> Result<Vec<(String, f64)>> {
    let cost_mean = simulated_mean(summary, cost)?;
    if cost_mean == 0.0 {
        return Err(Error::domain("cost coefficient mean is zero"));
    }
    time.iter()
        .map(|&name| Ok((name.to_string(), simulated_mean(summary, name)? / cost_mean)))
        .collect()
}
