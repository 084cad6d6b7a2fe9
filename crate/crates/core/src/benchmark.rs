//! Multi-level transfer benchmark.
//!
//! Level 0 is estimated from scratch. Each following level runs every
//! registered approach with the previous level's ESBDA estimate as its
//! prior, and is scored on its validation and test folds.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::{Executor, GibbsConfig, PosteriorSummary};
use crate::error::{Error, Result};
use crate::esbda::{self, EarlyStopConfig, PriorModel, StopReport, ValidationTrace};
use crate::io::{self, DatasetSchema, FoldCounts};
use crate::metrics::{self, ConsistencyReport, MetricsPair, RatioFlag};
use crate::simulators::{Nonconjugate, Simulator, SimulatorRegistry, TransferTask};
use crate::spec::UtilitySpec;

/// Name of the approach whose estimate seeds the next level.
pub const CHOSEN_SIMULATOR: &str = "esbda";

/// Benchmark plan file (TOML). Paths are relative to the plan file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelPlan {
    pub spec: PathBuf,
    #[serde(default)]
    pub cost_coefficient: Option<String>,
    #[serde(default)]
    pub time_coefficients: Vec<String>,
    /// Approaches to run at levels below 0; all registered when absent.
    #[serde(default)]
    pub simulators: Option<Vec<String>>,
    #[serde(default)]
    pub split_seed: u64,
    pub levels: Vec<LevelEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelEntry {
    pub name: String,
    pub data: PathBuf,
    /// Group counts per fold. Absent: the whole file is the training set.
    #[serde(default)]
    pub folds: Option<FoldCounts>,
}

impl LevelPlan {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let plan: LevelPlan = toml::from_str(text)?;
        if plan.levels.is_empty() {
            return Err(Error::data("benchmark plan lists no levels"));
        }
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Load the spec and every level's data, splitting folds.
    pub fn resolve(&self, base: &Path) -> Result<(Arc<UtilitySpec>, Vec<BenchmarkLevel>)> {
        let spec = Arc::new(UtilitySpec::load(base.join(&self.spec))?);
        let schema = DatasetSchema::default();
        let mut levels = Vec::with_capacity(self.levels.len());
        for entry in &self.levels {
            let loaded = io::load_dataset(base.join(&entry.data), &schema, Arc::clone(&spec))?;
            let level = match entry.folds {
                None => BenchmarkLevel {
                    name: entry.name.clone(),
                    train: loaded.dataset,
                    validation: None,
                    test: None,
                },
                Some(counts) => {
                    let folds = io::grouped_split(&loaded.dataset, counts, self.split_seed)?;
                    let nonempty = |d: Dataset| (d.n_situations() > 0).then_some(d);
                    BenchmarkLevel {
                        name: entry.name.clone(),
                        train: folds.train,
                        validation: nonempty(folds.validation),
                        test: nonempty(folds.test),
                    }
                }
            };
            levels.push(level);
        }
        Ok((spec, levels))
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkLevel {
    pub name: String,
    pub train: Dataset,
    pub validation: Option<Dataset>,
    pub test: Option<Dataset>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkSettings {
    pub gibbs: GibbsConfig,
    pub stop: EarlyStopConfig,
    pub cost_coefficient: Option<String>,
    pub time_coefficients: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSize {
    pub individuals: usize,
    pub situations: usize,
}

impl FoldSize {
    fn of(d: &Dataset) -> Self {
        FoldSize {
            individuals: d.n_individuals(),
            situations: d.n_situations(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproachResult {
    pub simulator: String,
    pub estimated: bool,
    pub epochs_run: usize,
    pub stop: Option<StopReport>,
    /// Estimates; for direct application, those of the applied model.
    pub summary: Option<PosteriorSummary>,
    pub validation: Option<MetricsPair>,
    pub test: Option<MetricsPair>,
    pub consistency: Option<ConsistencyReport>,
    pub value_of_time: Vec<(String, f64)>,
    #[serde(skip)]
    pub trace: ValidationTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub name: String,
    pub train: FoldSize,
    pub validation: Option<FoldSize>,
    pub test: Option<FoldSize>,
    /// Level whose ESBDA estimate served as the prior.
    pub prior_from: Option<String>,
    pub results: Vec<ApproachResult>,
}

impl LevelReport {
    pub fn result(&self, simulator: &str) -> Option<&ApproachResult> {
        self.results.iter().find(|r| r.simulator == simulator)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub seed: u64,
    pub levels: Vec<LevelReport>,
}

fn metrics_on(model: &PriorModel, data: Option<&Dataset>, gibbs: &GibbsConfig) -> Result<Option<MetricsPair>> {
    data.map(|d| esbda::evaluate_params(&model.params, d, gibbs.draws, gibbs.seed))
        .transpose()
}

/// Run the level plan. Approaches run sequentially; each chain uses the
/// executor for its individual layer.
pub fn run_benchmark(
    levels: &[BenchmarkLevel],
    registry: &SimulatorRegistry,
    settings: &BenchmarkSettings,
    executor: &Executor,
) -> Result<BenchmarkReport> {
    let Some(level0) = levels.first() else {
        return Err(Error::data("benchmark plan lists no levels"));
    };
    if levels.len() > 1 && registry.get(CHOSEN_SIMULATOR).is_none() {
        return Err(Error::data(format!(
            "simulator `{CHOSEN_SIMULATOR}` must be registered to chain levels"
        )));
    }
    for level in &levels[1..] {
        if level.validation.is_none() || level.test.is_none() {
            return Err(Error::data(format!("level `{}` is missing a validation or test fold", level.name)));
        }
    }

    let mut reports = Vec::with_capacity(levels.len());
    let gibbs0 = GibbsConfig {
        seed: settings.gibbs.seed,
        ..settings.gibbs.clone()
    };
    let task = TransferTask {
        train: &level0.train,
        validation: level0.validation.as_ref(),
        prior: None,
        gibbs: &gibbs0,
        stop: &settings.stop,
        executor,
    };
    log::info!("level `{}`: nonconjugate estimation", level0.name);
    let base = registry
        .get("nonconjugate")
        .unwrap_or_else(|| Arc::new(Nonconjugate) as Arc<dyn Simulator>)
        .run(&task)?;
    let mut prior = base.model.clone();
    let mut reference = base.summary.clone().expect("nonconjugate estimates");
    let base_result = ApproachResult {
        simulator: base.simulator.clone(),
        estimated: true,
        epochs_run: base.epochs_run,
        stop: base.stop,
        validation: metrics_on(&base.model, level0.validation.as_ref(), &gibbs0)?,
        test: metrics_on(&base.model, level0.test.as_ref(), &gibbs0)?,
        consistency: None,
        value_of_time: value_of_time(&reference, settings)?,
        summary: Some(reference.clone()),
        trace: base.trace,
    };
    reports.push(LevelReport {
        name: level0.name.clone(),
        train: FoldSize::of(&level0.train),
        validation: level0.validation.as_ref().map(FoldSize::of),
        test: level0.test.as_ref().map(FoldSize::of),
        prior_from: None,
        results: vec![base_result],
    });

    for (index, level) in levels.iter().enumerate().skip(1) {
        let gibbs = GibbsConfig {
            seed: settings.gibbs.seed.wrapping_add(index as u64),
            ..settings.gibbs.clone()
        };
        let task = TransferTask {
            train: &level.train,
            validation: level.validation.as_ref(),
            prior: Some(&prior),
            gibbs: &gibbs,
            stop: &settings.stop,
            executor,
        };
        let mut results = Vec::new();
        let mut chosen: Option<(PriorModel, PosteriorSummary)> = None;
        for sim in registry.iter() {
            log::info!("level `{}`: {}", level.name, sim.name());
            let run = sim.run(&task)?;
            let summary = run.summary.clone().unwrap_or_else(|| reference.clone());
            let consistency = match &settings.cost_coefficient {
                Some(cost) => Some(metrics::behavioral_consistency(&summary, &reference, cost)?),
                None => None,
            };
            if run.simulator == CHOSEN_SIMULATOR {
                chosen = Some((run.model.clone(), summary.clone()));
            }
            results.push(ApproachResult {
                simulator: run.simulator.clone(),
                estimated: run.summary.is_some(),
                epochs_run: run.epochs_run,
                stop: run.stop,
                validation: metrics_on(&run.model, level.validation.as_ref(), &gibbs)?,
                test: metrics_on(&run.model, level.test.as_ref(), &gibbs)?,
                consistency,
                value_of_time: value_of_time(&summary, settings)?,
                summary: Some(summary),
                trace: run.trace,
            });
        }
        reports.push(LevelReport {
            name: level.name.clone(),
            train: FoldSize::of(&level.train),
            validation: level.validation.as_ref().map(FoldSize::of),
            test: level.test.as_ref().map(FoldSize::of),
            prior_from: Some(levels[index - 1].name.clone()),
            results,
        });
        let (model, summary) = chosen.expect("chosen simulator is registered");
        prior = PriorModel { provenance: level.name.clone(), ..model };
        reference = summary;
    }

    Ok(BenchmarkReport {
        seed: settings.gibbs.seed,
        levels: reports,
    })
}

fn value_of_time(summary: &PosteriorSummary, settings: &BenchmarkSettings) -> Result<Vec<(String, f64)>> {
    match &settings.cost_coefficient {
        Some(cost) if !settings.time_coefficients.is_empty() => {
            let names: Vec<&str> = settings.time_coefficients.iter().map(String::as_str).collect();
            match metrics::value_of_time(summary, &names, cost) {
                Ok(v) => Ok(v),
                Err(Error::Domain(_)) => Ok(Vec::new()),
                Err(e) => Err(e),
            }
        }
        _ => Ok(Vec::new()),
    }
}

fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}

/// Estimates table in the layout of a coefficient-by-approach comparison:
/// mean with significance stars, posterior SD, and consistency marks
/// (`e` sign error, `!`/`!!` monetary-ratio deviation).
pub fn render_level_table(level: &LevelReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "== {} ==", level.name);
    let mut header = format!("{:<28}", "");
    for r in &level.results {
        let label = match r.stop {
            Some(s) => format!("{} (@{})", r.simulator, s.output_epoch),
            None => r.simulator.clone(),
        };
        let _ = write!(header, " | {label:>23}");
    }
    let _ = writeln!(out, "{header}");
    let _ = writeln!(out, "{:<28} |{}", "", " Mean          StDv      |".repeat(level.results.len()));

    let Some(first) = level.results.iter().find_map(|r| r.summary.as_ref()) else {
        return out;
    };
    let mut rows: Vec<(String, Box<dyn Fn(&PosteriorSummary) -> Option<(f64, f64)>>, Option<String>)> = Vec::new();
    for c in &first.coefficients {
        let name = c.name.clone();
        if c.sigma.is_some() {
            let n1 = name.clone();
            rows.push((format!("mu_{name}"), Box::new(move |s| s.coefficient(&n1).map(|c| (c.mean.mean, c.mean.sd))), None));
            let n2 = name.clone();
            rows.push((
                format!("sigma_{name}"),
                Box::new(move |s| s.coefficient(&n2).and_then(|c| c.sigma).map(|st| (st.mean, st.sd))),
                None,
            ));
            let n3 = name.clone();
            rows.push((
                format!("simulated_{name}"),
                Box::new(move |s| s.coefficient(&n3).map(|c| (c.simulated.mean, c.simulated.sd))),
                Some(name),
            ));
        } else {
            let n1 = name.clone();
            rows.push((name.clone(), Box::new(move |s| s.coefficient(&n1).map(|c| (c.mean.mean, c.mean.sd))), Some(name)));
        }
    }
    for (label, get, screened) in &rows {
        let mut line = format!("{label:<28}");
        for r in &level.results {
            let cell = r.summary.as_ref().and_then(get);
            match cell {
                Some((mean, sd)) => {
                    let mut mark = metrics::significance_stars(mean, sd).stars().to_string();
                    if let (Some(name), Some(cons)) = (screened, &r.consistency) {
                        if let Some(e) = cons.entry(name) {
                            if e.sign_error {
                                mark.push('e');
                            }
                            if e.flag != RatioFlag::Ok {
                                mark.push_str(e.flag.mark());
                            }
                        }
                    }
                    let _ = write!(line, " | {:>9}{:<5} {:>8}", fmt4(mean), mark, fmt4(sd));
                }
                None => {
                    let _ = write!(line, " | {:>23}", "-");
                }
            }
        }
        let _ = writeln!(out, "{line}");
    }
    for (label, pick) in [
        ("Validation set", (|r: &ApproachResult| r.validation) as fn(&ApproachResult) -> Option<MetricsPair>),
        ("Test set", |r: &ApproachResult| r.test),
    ] {
        let mut line = format!("{:<28}", format!("{label} (CEL, GMPCA)"));
        for r in &level.results {
            match pick(r) {
                Some(m) => {
                    let _ = write!(line, " | {:>9}      {:>8}", fmt4(m.cel), fmt4(m.gmpca));
                }
                None => {
                    let _ = write!(line, " | {:>23}", "-");
                }
            }
        }
        let _ = writeln!(out, "{line}");
    }
    let mut line = format!("{:<28}", "Epochs run");
    for r in &level.results {
        let _ = write!(line, " | {:>23}", if r.estimated { r.epochs_run.to_string() } else { "-".into() });
    }
    let _ = writeln!(out, "{line}");
    out
}

/// `level,simulator,set,cel,gmpca` rows for every evaluated fold.
pub fn metrics_csv(report: &BenchmarkReport) -> String {
    let mut out = String::from("level,simulator,set,cel,gmpca\n");
    for level in &report.levels {
        for r in &level.results {
            for (set, m) in [("validation", r.validation), ("test", r.test)] {
                if let Some(m) = m {
                    let _ = writeln!(out, "{},{},{},{},{}", level.name, r.simulator, set, m.cel, m.gmpca);
                }
            }
        }
    }
    out
}

/// Write `report.json`, `metrics.csv`, `tables.txt` and one trace CSV per
/// estimated approach under `traces/`.
pub fn write_report(report: &BenchmarkReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("traces"))?;
    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    io::write_atomic(dir.join("report.json"), &json)?;
    io::write_atomic(dir.join("metrics.csv"), metrics_csv(report).as_bytes())?;
    let tables: String = report.levels.iter().map(render_level_table).collect::<Vec<_>>().join("\n");
    io::write_atomic(dir.join("tables.txt"), tables.as_bytes())?;
    for level in &report.levels {
        for r in &level.results {
            if r.estimated {
                let name = format!("{}_{}.csv", sanitize(&level.name), r.simulator);
                io::write_atomic(dir.join("traces").join(name), r.trace.to_csv().as_bytes())?;
            }
        }
    }
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_parses() {
        let plan = LevelPlan::from_toml_str(
            r#"
            spec = "spec.toml"
            cost_coefficient = "cost"
            [[levels]]
            name = "level-0"
            data = "l0.csv"
            [[levels]]
            name = "level-1"
            data = "l1.csv"
            folds = { train = 5, validation = 5, test = 5 }
            "#,
        )
        .unwrap();
        assert_eq!(plan.levels.len(), 2);
        assert_eq!(plan.levels[1].folds.unwrap().validation, 5);
        assert!(LevelPlan::from_toml_str("spec = \"s\"\nlevels = []\n").is_err());
        assert!(LevelPlan::from_toml_str("spec = \"s\"\nbogus = 1\nlevels = []\n").is_err());
    }
}
