//! Dataset ingestion, fold splitting and model persistence.
//!
//! Datasets are long-format CSV: one row per alternative per choice
//! situation, with 0/1 `chosen` and (optional) `available` columns and one
//! numeric column per spec attribute.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{ChoiceSituation, Dataset, Individual, SYMMETRY_TOL};
use crate::error::{Error, Result};
use crate::esbda::PriorModel;
use crate::linalg;
use crate::rng::{RngStream, DATA_STREAM};
use crate::spec::UtilitySpec;

/// Column names for the long layout. Attribute columns are named after the
/// spec's attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSchema {
    pub individual: String,
    /// Falls back to the individual id when the column is absent.
    pub group: String,
    pub situation: String,
    pub alternative: String,
    pub chosen: String,
    /// All alternatives count as available when the column is absent.
    pub available: String,
}

impl Default for DatasetSchema {
    fn default() -> Self {
        DatasetSchema {
            individual: "individual".into(),
            group: "group".into(),
            situation: "situation".into(),
            alternative: "alternative".into(),
            chosen: "chosen".into(),
            available: "available".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    /// Situations in the file, before dropping.
    pub raw_situations: usize,
    /// Situations without a valid chosen alternative or with fewer than two
    /// available alternatives.
    pub dropped_situations: usize,
}

struct SituationRows {
    values: Vec<f64>,
    available: Vec<bool>,
    present: Vec<bool>,
    chosen: Vec<usize>,
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &DatasetSchema, spec: Arc<UtilitySpec>) -> Result<LoadedDataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    read_dataset(file, schema, spec)
}

pub fn read_dataset<R: std::io::Read>(reader: R, schema: &DatasetSchema, spec: Arc<UtilitySpec>) -> Result<LoadedDataset> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| column(name).ok_or_else(|| Error::data(format!("missing column `{name}`")));

    let c_ind = required(&schema.individual)?;
    let c_sit = required(&schema.situation)?;
    let c_alt = required(&schema.alternative)?;
    let c_chosen = required(&schema.chosen)?;
    let c_group = column(&schema.group);
    let c_avail = column(&schema.available);
    let c_attrs = spec
        .attributes()
        .iter()
        .map(|a| required(a))
        .collect::<Result<Vec<_>>>()?;

    let j = spec.n_alternatives();
    let n_attr = spec.n_attributes();
    let mut individuals: Vec<(String, String, Vec<(String, SituationRows)>)> = Vec::new();
    let mut ind_index: HashMap<String, usize> = HashMap::new();
    let mut sit_index: HashMap<(usize, String), usize> = HashMap::new();

    for (line, record) in csv.records().enumerate() {
        let record = record?;
        let row = line + 2;
        let field = |c: usize| record.get(c).unwrap_or("");
        let ind_id = field(c_ind).to_string();
        let group = c_group.map(|c| field(c).to_string()).unwrap_or_else(|| ind_id.clone());
        let alt_id = field(c_alt);
        let alt = spec
            .alternative_index(alt_id)
            .ok_or_else(|| Error::data(format!("row {row}: unknown alternative `{alt_id}`")))?;
        let chosen = parse_flag(field(c_chosen), &schema.chosen, row)?;
        let available = match c_avail {
            Some(c) => parse_flag(field(c), &schema.available, row)?,
            None => true,
        };

        let ii = *ind_index.entry(ind_id.clone()).or_insert_with(|| {
            individuals.push((ind_id.clone(), group.clone(), Vec::new()));
            individuals.len() - 1
        });
        if individuals[ii].1 != group {
            return Err(Error::data(format!(
                "row {row}: individual `{ind_id}` appears in groups `{}` and `{group}`",
                individuals[ii].1
            )));
        }
        let sit_id = field(c_sit).to_string();
        let si = *sit_index.entry((ii, sit_id.clone())).or_insert_with(|| {
            individuals[ii].2.push((
                sit_id.clone(),
                SituationRows {
                    values: vec![0.0; j * n_attr],
                    available: vec![false; j],
                    present: vec![false; j],
                    chosen: Vec::new(),
                },
            ));
            individuals[ii].2.len() - 1
        });
        let rows = &mut individuals[ii].2[si].1;
        if rows.present[alt] {
            return Err(Error::data(format!(
                "row {row}: duplicate alternative `{alt_id}` for individual `{ind_id}`, situation `{sit_id}`"
            )));
        }
        rows.present[alt] = true;
        rows.available[alt] = available;
        if chosen {
            rows.chosen.push(alt);
        }
        for (k, &c) in c_attrs.iter().enumerate() {
            let raw = field(c);
            rows.values[alt * n_attr + k] = raw.parse::<f64>().map_err(|_| {
                Error::data(format!("row {row}: non-numeric value `{raw}` in column `{}`", spec.attributes()[k]))
            })?;
        }
    }

    let mut raw_situations = 0;
    let mut dropped = 0;
    let mut out = Vec::with_capacity(individuals.len());
    for (id, group, sits) in individuals {
        let mut situations = Vec::with_capacity(sits.len());
        for (sit_id, rows) in sits {
            raw_situations += 1;
            if rows.chosen.len() > 1 {
                return Err(Error::data(format!(
                    "individual `{id}`, situation `{sit_id}`: more than one chosen alternative"
                )));
            }
            match rows.chosen.first() {
                Some(&c) if rows.available[c] && rows.available.iter().filter(|&&a| a).count() >= 2 => {
                    situations.push(ChoiceSituation::new(&spec, rows.values, rows.available, c)?);
                }
                _ => dropped += 1,
            }
        }
        if !situations.is_empty() {
            out.push(Individual { id, group, situations });
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} of {raw_situations} choice situations without a valid choice");
    }
    Ok(LoadedDataset {
        dataset: Dataset::new(spec, out)?,
        raw_situations,
        dropped_situations: dropped,
    })
}

fn parse_flag(raw: &str, column: &str, row: usize) -> Result<bool> {
    match raw {
        "1" | "1.0" | "true" => Ok(true),
        "0" | "0.0" | "false" => Ok(false),
        _ => Err(Error::data(format!("row {row}: `{raw}` in column `{column}` is not 0/1"))),
    }
}

/// Write `dataset` in the long layout with the default schema. Situation
/// ids are renumbered from 1 within each individual.
pub fn write_dataset<W: std::io::Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let spec = dataset.spec();
    let schema = DatasetSchema::default();
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = vec![
        schema.individual.as_str(),
        schema.group.as_str(),
        schema.situation.as_str(),
        schema.alternative.as_str(),
        schema.chosen.as_str(),
        schema.available.as_str(),
    ];
    header.extend(spec.attributes().iter().map(String::as_str));
    csv.write_record(&header)?;
    let n_attr = spec.n_attributes();
    for ind in dataset.individuals() {
        for (t, s) in ind.situations.iter().enumerate() {
            let sit = (t + 1).to_string();
            for (alt, name) in spec.alternatives().iter().enumerate() {
                let mut rec = vec![
                    ind.id.clone(),
                    ind.group.clone(),
                    sit.clone(),
                    name.clone(),
                    u8::from(s.chosen() == alt).to_string(),
                    u8::from(s.available()[alt]).to_string(),
                ];
                rec.extend((0..n_attr).map(|k| s.value(alt, k, n_attr).to_string()));
                csv.write_record(&rec)?;
            }
        }
    }
    csv.flush()?;
    Ok(())
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(dataset, &mut buf)?;
    write_atomic(path, &buf)
}

/// Write via a temporary sibling file and rename.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let name = path
        .file_name()
        .ok_or_else(|| Error::data(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Folds {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Fold sizes in groups. `None` for the training count takes every group
/// not assigned to validation or test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldCounts {
    pub train: Option<usize>,
    pub validation: usize,
    pub test: usize,
}

/// Shuffle group keys with `seed` and assign them contiguously to the
/// train, validation and test folds. Groups never straddle folds.
pub fn grouped_split(dataset: &Dataset, counts: FoldCounts, seed: u64) -> Result<Folds> {
    let mut keys: Vec<&str> = dataset.group_keys();
    let total = keys.len();
    let held_out = counts.validation + counts.test;
    let train = counts.train.unwrap_or(total.saturating_sub(held_out));
    if train + held_out > total {
        return Err(Error::data(format!(
            "fold counts {train}+{}+{} exceed the {total} available groups",
            counts.validation, counts.test
        )));
    }
    keys.shuffle(&mut RngStream::new(seed, DATA_STREAM).rng());
    let fold_of: HashMap<&str, usize> = keys
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let fold = if i < train {
                0
            } else if i < train + counts.validation {
                1
            } else if i < train + held_out {
                2
            } else {
                3
            };
            (k, fold)
        })
        .collect();
    let mut parts: [Vec<Individual>; 3] = Default::default();
    for ind in dataset.individuals() {
        let f = fold_of[ind.group.as_str()];
        if f < 3 {
            parts[f].push(ind.clone());
        }
    }
    let [tr, va, te] = parts;
    Ok(Folds {
        train: dataset.subset(tr),
        validation: dataset.subset(va),
        test: dataset.subset(te),
    })
}

pub const ARTIFACT_VERSION: u32 = 1;

/// On-disk form of a model: parameters plus the hash of the spec they
/// belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub version: u32,
    pub spec_hash: String,
    pub alpha: Vec<f64>,
    pub zeta: Vec<f64>,
    /// Row-major.
    pub omega: Vec<Vec<f64>>,
    pub provenance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ModelArtifact {
    pub fn from_prior(prior: &PriorModel, seed: Option<u64>) -> Self {
        let p = prior.params.omega.nrows();
        ModelArtifact {
            version: ARTIFACT_VERSION,
            spec_hash: prior.spec.hash(),
            alpha: prior.params.alpha.iter().copied().collect(),
            zeta: prior.params.zeta.iter().copied().collect(),
            omega: (0..p).map(|i| (0..p).map(|j| prior.params.omega[(i, j)]).collect()).collect(),
            provenance: prior.provenance.clone(),
            seed,
        }
    }

    /// Validate against `spec` and convert.
    pub fn into_prior(self, spec: Arc<UtilitySpec>) -> Result<PriorModel> {
        if self.version != ARTIFACT_VERSION {
            return Err(Error::Artifact(format!("unsupported artifact version {}", self.version)));
        }
        let expected = spec.hash();
        if self.spec_hash != expected {
            return Err(Error::SpecHashMismatch {
                expected,
                artifact: self.spec_hash,
            });
        }
        let p = self.zeta.len();
        if self.omega.len() != p || self.omega.iter().any(|r| r.len() != p) {
            return Err(Error::Artifact(format!("omega must be {p}x{p}")));
        }
        let omega = nalgebra::DMatrix::from_fn(p, p, |i, j| self.omega[i][j]);
        linalg::check_symmetric(&omega, SYMMETRY_TOL).map_err(|e| Error::Artifact(e.to_string()))?;
        let params = crate::data::ModelParams::new(
            nalgebra::DVector::from_vec(self.alpha),
            nalgebra::DVector::from_vec(self.zeta),
            omega,
        );
        PriorModel::new(spec, params, self.provenance)
    }
}

pub fn save_model(prior: &PriorModel, seed: Option<u64>, path: impl AsRef<Path>) -> Result<()> {
    let artifact = ModelArtifact::from_prior(prior, seed);
    let mut bytes = serde_json::to_vec_pretty(&artifact)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn load_model(path: impl AsRef<Path>, spec: Arc<UtilitySpec>) -> Result<PriorModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Artifact(format!("cannot read {}: {e}", path.display())))?;
    let artifact: ModelArtifact = serde_json::from_str(&text)?;
    artifact.into_prior(spec)
}
