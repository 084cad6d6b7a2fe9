#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use mixlogit::engine::{CoefficientEstimate, PosteriorSummary, Stat};
use mixlogit::esbda::PriorModel;
use mixlogit::io::{self, ModelArtifact};
use mixlogit::synth::{generate_synthetic, AttributeLaw, GroundTruth};
use mixlogit::{CoefficientKind, Dataset, ModelParams, UtilitySpec};

pub const SPEC_TOML: &str = r#"
alternatives = ["a", "b", "c"]
attributes = ["x", "w"]

[[coefficients]]
name = "b_x"
kind = "random_normal"
attribute = "x"

[[coefficients]]
name = "a_w"
kind = "fixed"
attribute = "w"
"#;

pub fn spec() -> Arc<UtilitySpec> {
    Arc::new(UtilitySpec::from_toml_str(SPEC_TOML).unwrap())
}

/// Parameters for a spec with one fixed and one random coefficient.
pub fn params(spec: &Arc<UtilitySpec>, alpha: f64, zeta: f64, omega: f64) -> ModelParams {
    prior(spec, alpha, zeta, omega).params
}

pub fn prior(spec: &Arc<UtilitySpec>, alpha: f64, zeta: f64, omega: f64) -> PriorModel {
    ModelArtifact {
        version: io::ARTIFACT_VERSION,
        spec_hash: spec.hash(),
        alpha: vec![alpha],
        zeta: vec![zeta],
        omega: vec![vec![omega]],
        provenance: "fixture".into(),
        seed: None,
    }
    .into_prior(Arc::clone(spec))
    .unwrap()
}

pub fn synthetic(spec: &Arc<UtilitySpec>, params: ModelParams, seed: u64, n: usize, t: usize) -> Dataset {
    let truth = GroundTruth {
        spec: Arc::clone(spec),
        params,
        seed,
    };
    generate_synthetic(&truth, n, t, AttributeLaw::StandardNormal).unwrap()
}

/// Write the spec, a truth artifact and source/target datasets for a
/// two-level plan into `dir`.
pub fn write_fixture(dir: &Path) -> PathBuf {
    let spec = spec();
    std::fs::write(dir.join("spec.toml"), SPEC_TOML).unwrap();
    let truth = prior(&spec, 0.8, -0.5, 0.5);
    io::save_model(&truth, None, dir.join("truth.json")).unwrap();
    let source = synthetic(&spec, truth.params.clone(), 1, 120, 6);
    io::save_dataset(&source, dir.join("level0.csv")).unwrap();
    let target = synthetic(&spec, params(&spec, 0.6, -0.2, 0.4), 2, 45, 6);
    io::save_dataset(&target, dir.join("level1.csv")).unwrap();
    let plan = r#"
spec = "spec.toml"
cost_coefficient = "a_w"
time_coefficients = ["b_x"]
split_seed = 5

[[levels]]
name = "level-0"
data = "level0.csv"

[[levels]]
name = "level-1"
data = "level1.csv"
folds = { train = 15, validation = 15, test = 15 }
"#;
    let path = dir.join("plan.toml");
    std::fs::write(&path, plan).unwrap();
    path
}

pub fn mixlogit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixlogit"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Hand-built summary with the given simulated means; fixed coefficients.
pub fn summary_of(values: &[(&str, f64)]) -> PosteriorSummary {
    PosteriorSummary {
        draw_count: 1,
        first_epoch: 10,
        last_epoch: 10,
        coefficients: values
            .iter()
            .map(|&(name, m)| CoefficientEstimate {
                name: name.into(),
                kind: CoefficientKind::Fixed,
                mean: Stat { mean: m, sd: 0.0 },
                sigma: None,
                simulated: Stat { mean: m, sd: 0.0 },
            })
            .collect(),
        alpha_mean: values.iter().map(|v| v.1).collect(),
        zeta_mean: Vec::new(),
        omega_mean: Vec::new(),
    }
}
