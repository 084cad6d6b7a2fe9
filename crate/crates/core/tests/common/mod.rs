#![allow(dead_code)]

use std::sync::Arc;

use mixlogit::{CoefficientKind, CoefficientSpec, UtilitySpec};

pub fn coef(name: &str, kind: CoefficientKind, attribute: Option<&str>, alts: Option<&[&str]>) -> CoefficientSpec {
    CoefficientSpec {
        name: name.into(),
        kind,
        attribute: attribute.map(Into::into),
        applies_to: alts.map(|a| a.iter().map(|s| s.to_string()).collect()),
    }
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Three alternatives, one normal coefficient on `x`, one fixed coefficient
/// on `w`.
pub fn one_random_one_fixed() -> Arc<UtilitySpec> {
    Arc::new(
        UtilitySpec::new(
            strings(&["a", "b", "c"]),
            strings(&["x", "w"]),
            vec![
                coef("b_x", CoefficientKind::RandomNormal, Some("x"), None),
                coef("a_w", CoefficientKind::Fixed, Some("w"), None),
            ],
        )
        .unwrap(),
    )
}

/// Two alternatives, a single normal coefficient on `x`.
pub fn single_random() -> Arc<UtilitySpec> {
    Arc::new(
        UtilitySpec::new(
            strings(&["a", "b"]),
            strings(&["x"]),
            vec![coef("b_x", CoefficientKind::RandomNormal, Some("x"), None)],
        )
        .unwrap(),
    )
}

/// Vehicle-purchase specification: three lognormal, two normal and two
/// fixed generic coefficients.
pub fn vehicle() -> Arc<UtilitySpec> {
    use CoefficientKind::*;
    Arc::new(
        UtilitySpec::new(
            strings(&["electric_car", "hybrid_car", "gas_car"]),
            strings(&["price", "opcost", "range", "electric", "hybrid", "high", "midhigh"]),
            vec![
                coef("price", RandomLognormalNegative, Some("price"), None),
                coef("opcost", RandomLognormalNegative, Some("opcost"), None),
                coef("range", RandomLognormalPositive, Some("range"), None),
                coef("electric", RandomNormal, Some("electric"), None),
                coef("hybrid", RandomNormal, Some("hybrid"), None),
                coef("high", Fixed, Some("high"), None),
                coef("midhigh", Fixed, Some("midhigh"), None),
            ],
        )
        .unwrap(),
    )
}

/// Independent softmax: plain exponentials over a max shift.
pub fn naive_softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Gauss-Hermite nodes and weights for `∫ e^{-x²} f(x) dx`, by Newton
/// iteration on the orthonormal Hermite recurrence.
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut out = vec![(0.0, 0.0); n];
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-0.16667),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * out[0].0,
            3 => 1.91 * z - 0.91 * out[1].0,
            _ => 2.0 * z - out[i - 2].0,
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j as f64 + 1.0)).sqrt() * p2 - (j as f64 / (j as f64 + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-14 {
                break;
            }
        }
        let w = 2.0 / (pp * pp);
        out[i] = (z, w);
        out[n - 1 - i] = (-z, w);
    }
    out
}

/// `E[f(b)]` for `b ~ N(mean, var)` by Gauss-Hermite quadrature.
pub fn normal_expectation(mean: f64, var: f64, nodes: &[(f64, f64)], f: impl Fn(f64) -> f64) -> f64 {
    let s = (2.0 * var).sqrt();
    nodes.iter().map(|&(x, w)| w * f(mean + s * x)).sum::<f64>() / std::f64::consts::PI.sqrt()
}
