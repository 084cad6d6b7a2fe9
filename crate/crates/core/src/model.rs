//! Utility, logit probability and likelihood evaluation.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{ChoiceSituation, Dataset, Individual, ModelParams};
use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::spec::{CoefficientKind, Slot, UtilitySpec};

/// Apply each random coefficient's transform to its latent value.
pub fn transform_latent(latent: &[f64], kinds: &[CoefficientKind]) -> Result<Vec<f64>> {
    check_len("latent vector", kinds.len(), latent.len())?;
    Ok(latent.iter().zip(kinds).map(|(&b, k)| k.transform(b)).collect())
}

pub(crate) fn transform_into(latent: &[f64], kinds: &[CoefficientKind], out: &mut [f64]) {
    for ((o, &b), k) in out.iter_mut().zip(latent).zip(kinds) {
        *o = k.transform(b);
    }
}

/// Systematic utility of every alternative. Unavailable alternatives get
/// `-inf`; they are excluded from the probability denominator by mask, not
/// by value.
pub fn systematic_utility(
    spec: &UtilitySpec,
    alpha: &[f64],
    random: &[f64],
    situation: &ChoiceSituation,
) -> Result<Vec<f64>> {
    check_len("alpha", spec.n_fixed(), alpha.len())?;
    check_len("transformed random coefficients", spec.n_random(), random.len())?;
    check_len(
        "situation attribute values",
        spec.n_alternatives() * spec.n_attributes(),
        situation.values().len(),
    )?;
    let mut v = vec![0.0; spec.n_alternatives()];
    utility_into(spec, alpha, random, situation, &mut v);
    Ok(v)
}

#[inline]
pub(crate) fn utility_into(
    spec: &UtilitySpec,
    alpha: &[f64],
    random: &[f64],
    situation: &ChoiceSituation,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let n_attr = spec.n_attributes();
    for term in spec.terms() {
        let coef = match term.slot {
            Slot::Fixed(i) => alpha[i],
            Slot::Random(i) => random[i],
        };
        for (alt, v) in out.iter_mut().enumerate() {
            if !term.applies[alt] {
                continue;
            }
            *v += match term.attribute {
                Some(a) => coef * situation.value(alt, a, n_attr),
                None => coef,
            };
        }
    }
    for (v, &avail) in out.iter_mut().zip(situation.available()) {
        if !avail {
            *v = f64::NEG_INFINITY;
        }
    }
}

/// Logit probabilities over the available alternatives.
pub fn choice_probabilities(utilities: &[f64], available: &[bool]) -> Result<Vec<f64>> {
    check_len("availability", utilities.len(), available.len())?;
    let max = max_available(utilities, available)
        .ok_or_else(|| Error::domain("no alternative is available"))?;
    if !max.is_finite() {
        return Err(Error::domain("utilities must be finite on available alternatives"));
    }
    let mut probs: Vec<f64> = utilities
        .iter()
        .zip(available)
        .map(|(&v, &a)| if a { (v - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(probs)
}

fn max_available(utilities: &[f64], available: &[bool]) -> Option<f64> {
    utilities
        .iter()
        .zip(available)
        .filter(|(_, &a)| a)
        .map(|(&v, _)| v)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |m| m.max(v))))
}

/// `ln P(chosen)` via log-sum-exp with max subtraction.
#[inline]
pub(crate) fn log_chosen_probability(utilities: &[f64], available: &[bool], chosen: usize) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (&v, &a) in utilities.iter().zip(available) {
        if a && v > max {
            max = v;
        }
    }
    let mut sum = 0.0;
    for (&v, &a) in utilities.iter().zip(available) {
        if a {
            sum += (v - max).exp();
        }
    }
    utilities[chosen] - max - sum.ln()
}

/// Scratch buffers for repeated likelihood evaluation.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    pub random: Vec<f64>,
    pub utilities: Vec<f64>,
}

impl Workspace {
    pub fn new(spec: &UtilitySpec) -> Self {
        Workspace {
            random: vec![0.0; spec.n_random()],
            utilities: vec![0.0; spec.n_alternatives()],
        }
    }
}

pub(crate) fn panel_log_likelihood_with(
    spec: &UtilitySpec,
    individual: &Individual,
    alpha: &[f64],
    latent: &[f64],
    ws: &mut Workspace,
) -> f64 {
    transform_into(latent, spec.random_kinds(), &mut ws.random);
    individual
        .situations
        .iter()
        .map(|s| {
            utility_into(spec, alpha, &ws.random, s, &mut ws.utilities);
            log_chosen_probability(&ws.utilities, s.available(), s.chosen())
        })
        .sum()
}

/// Log of the probability of the individual's full sequence of choices.
pub fn panel_log_likelihood(
    spec: &UtilitySpec,
    individual: &Individual,
    alpha: &[f64],
    latent: &[f64],
) -> Result<f64> {
    check_len("alpha", spec.n_fixed(), alpha.len())?;
    check_len("latent vector", spec.n_random(), latent.len())?;
    let mut ws = Workspace::new(spec);
    Ok(panel_log_likelihood_with(spec, individual, alpha, latent, &mut ws))
}

/// Probability of the individual's full sequence of choices given their
/// latent coefficients. Accumulated in log space.
pub fn panel_likelihood(
    spec: &UtilitySpec,
    individual: &Individual,
    alpha: &[f64],
    latent: &[f64],
) -> Result<f64> {
    panel_log_likelihood(spec, individual, alpha, latent).map(f64::exp)
}

/// Mixed-logit probabilities, simulated with `draws` latent draws from
/// `N(zeta, omega)`.
pub fn unconditional_choice_probability<R: Rng + ?Sized>(
    params: &ModelParams,
    spec: &UtilitySpec,
    situation: &ChoiceSituation,
    draws: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if draws == 0 {
        return Err(Error::domain("draw count must be at least 1"));
    }
    params.check_dims(spec)?;
    let factor = linalg::psd_factor(&params.omega)?;
    let mut sim = Simulator::new(spec, params, &factor);
    let mut acc = vec![0.0; spec.n_alternatives()];
    for _ in 0..draws {
        sim.draw(rng);
        sim.probabilities(situation, &mut acc);
    }
    acc.iter_mut().for_each(|p| *p /= draws as f64);
    Ok(acc)
}

/// Simulated probability of the chosen alternative for every situation in
/// `data`, in dataset order.
pub fn simulated_chosen_probabilities<R: Rng + ?Sized>(
    params: &ModelParams,
    data: &Dataset,
    draws: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if draws == 0 {
        return Err(Error::domain("draw count must be at least 1"));
    }
    let spec = data.spec();
    params.check_dims(spec)?;
    let factor = linalg::psd_factor(&params.omega)?;
    let mut sim = Simulator::new(spec, params, &factor);
    let mut out = Vec::with_capacity(data.n_situations());
    for s in data.situations() {
        let mut total = 0.0;
        for _ in 0..draws {
            sim.draw(rng);
            total += sim.chosen_probability(s);
        }
        out.push(total / draws as f64);
    }
    Ok(out)
}

struct Simulator<'a> {
    spec: &'a UtilitySpec,
    params: &'a ModelParams,
    factor: &'a nalgebra::DMatrix<f64>,
    z: DVector<f64>,
    latent: DVector<f64>,
    ws: Workspace,
}

impl<'a> Simulator<'a> {
    fn new(spec: &'a UtilitySpec, params: &'a ModelParams, factor: &'a nalgebra::DMatrix<f64>) -> Self {
        let p = spec.n_random();
        Simulator {
            spec,
            params,
            factor,
            z: DVector::zeros(p),
            latent: DVector::zeros(p),
            ws: Workspace::new(spec),
        }
    }

    fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for z in self.z.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        self.latent.copy_from(&self.params.zeta);
        self.latent.gemv(1.0, self.factor, &self.z, 1.0);
        transform_into(self.latent.as_slice(), self.spec.random_kinds(), &mut self.ws.random);
    }

    fn fill_utilities(&mut self, s: &ChoiceSituation) {
        utility_into(self.spec, self.params.alpha.as_slice(), &self.ws.random, s, &mut self.ws.utilities);
    }

    fn probabilities(&mut self, s: &ChoiceSituation, acc: &mut [f64]) {
        self.fill_utilities(s);
        let max = self
            .ws
            .utilities
            .iter()
            .zip(s.available())
            .filter(|(_, &a)| a)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (&v, &a) in self.ws.utilities.iter().zip(s.available()) {
            if a {
                total += (v - max).exp();
            }
        }
        for ((p, &v), &a) in acc.iter_mut().zip(&self.ws.utilities).zip(s.available()) {
            if a {
                *p += (v - max).exp() / total;
            }
        }
    }

    fn chosen_probability(&mut self, s: &ChoiceSituation) -> f64 {
        self.fill_utilities(s);
        log_chosen_probability(&self.ws.utilities, s.available(), s.chosen()).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::CoefficientSpec;
    use rand::SeedableRng;
    use std::sync::Arc;

    fn two_alt_cost_spec(kind: CoefficientKind) -> UtilitySpec {
        UtilitySpec::new(
            vec!["a".into(), "b".into()],
            vec!["cost".into()],
            vec![CoefficientSpec {
                name: "cost".into(),
                kind,
                attribute: Some("cost".into()),
                applies_to: None,
            }],
        )
        .unwrap()
    }

    #[test]
    fn transform_examples() {
        use CoefficientKind::*;
        assert_eq!(transform_latent(&[0.5], &[RandomNormal]).unwrap(), vec![0.5]);
        assert_eq!(transform_latent(&[0.0], &[RandomLognormalNegative]).unwrap(), vec![-1.0]);
        let two = transform_latent(&[2f64.ln()], &[RandomLognormalPositive]).unwrap();
        assert!((two[0] - 2.0).abs() < 1e-15);
        assert!(matches!(
            transform_latent(&[0.0, 1.0], &[RandomNormal]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn generic_cost_utility() {
        let spec = two_alt_cost_spec(CoefficientKind::Fixed);
        let s = ChoiceSituation::all_available(&spec, vec![10.0, 5.0], 0).unwrap();
        let v = systematic_utility(&spec, &[-0.16], &[], &s).unwrap();
        assert!((v[0] + 1.6).abs() < 1e-12);
        assert!((v[1] + 0.8).abs() < 1e-12);
    }

    #[test]
    fn constants_only_utility() {
        let spec = UtilitySpec::new(
            vec!["drive".into(), "pt".into(), "cycle".into(), "walk".into()],
            vec!["time".into()],
            vec![
                CoefficientSpec {
                    name: "time".into(),
                    kind: CoefficientKind::Fixed,
                    attribute: Some("time".into()),
                    applies_to: None,
                },
                CoefficientSpec {
                    name: "c_walk".into(),
                    kind: CoefficientKind::Fixed,
                    attribute: None,
                    applies_to: Some(vec!["walk".into()]),
                },
            ],
        )
        .unwrap();
        let s = ChoiceSituation::all_available(&spec, vec![0.0; 4], 3).unwrap();
        let v = systematic_utility(&spec, &[-1.0, 3.5], &[], &s).unwrap();
        assert_eq!(v, vec![0.0, 0.0, 0.0, 3.5]);
    }

    #[test]
    fn unavailable_alternative_gets_zero_probability() {
        let p = choice_probabilities(&[1.0, 2.0, 3.0], &[true, false, true]).unwrap();
        assert_eq!(p[1], 0.0);
        let e = (-2.0f64).exp();
        assert!((p[0] - e / (1.0 + e)).abs() < 1e-15);
        assert!(choice_probabilities(&[1.0, 2.0], &[false, false]).is_err());
    }

    #[test]
    fn extreme_utilities_are_stable() {
        let p = choice_probabilities(&[700.0, -700.0, 699.0], &[true; 3]).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn panel_product_rule() {
        // Two situations; utilities give chosen probabilities 0.5 and 0.2.
        let spec = two_alt_cost_spec(CoefficientKind::Fixed);
        // beta * (x_a - x_b) = ln(p/(1-p)) with beta = 1
        let d1 = 0.0;
        let d2 = (0.2f64 / 0.8).ln();
        let ind = Individual {
            id: "n".into(),
            group: "n".into(),
            situations: vec![
                ChoiceSituation::all_available(&spec, vec![d1, 0.0], 0).unwrap(),
                ChoiceSituation::all_available(&spec, vec![d2, 0.0], 0).unwrap(),
            ],
        };
        let l = panel_likelihood(&spec, &ind, &[1.0], &[]).unwrap();
        assert!((l - 0.1).abs() < 1e-14);
    }

    #[test]
    fn degenerate_mixture_equals_point_logit() {
        let spec = Arc::new(two_alt_cost_spec(CoefficientKind::RandomNormal));
        let s = ChoiceSituation::all_available(&spec, vec![1.0, -0.5], 1).unwrap();
        let params = ModelParams::new(
            DVector::zeros(0),
            DVector::from_element(1, 0.7),
            nalgebra::DMatrix::zeros(1, 1),
        );
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let sim = unconditional_choice_probability(&params, &spec, &s, 50, &mut rng).unwrap();
        let v = systematic_utility(&spec, &[], &[0.7], &s).unwrap();
        let point = choice_probabilities(&v, s.available()).unwrap();
        for (a, b) in sim.iter().zip(&point) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
