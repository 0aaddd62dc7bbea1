//! Files: data CSVs, simulation truth, fit configuration and fit artifacts.
//!
//! Layout of a fit directory:
//!
//! | file | content |
//! |---|---|
//! | `config.toml` | the configuration file as given |
//! | `fit.json` | effective configuration, names, ids, per-chain status |
//! | `draws_chain{k}.csv` | kept draws of chain `k`, constrained scale |
//! | `sampler_stats.csv` | per-draw sampler statistics of every chain |
//! | `selection.json` | chain log weights and the selected chain |
//! | `class_draws.csv` | sampled labels on the selected chain |
//! | `class_probs.csv` | posterior class probabilities and MAP class |
//! | `summary.csv` | posterior mean, SD and 95% interval |
//! | `loo.json`, `waic.json` | criteria with pointwise contributions |
//!
//! Floats are written in the shortest form that parses back to the same
//! value.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{FitConfig, FitResult, ParamSummary};
use crate::model::{LatentEffects, LongitudinalRecord, SubjectData};
use crate::modelsel::CriterionResult;
use crate::sampler::ChainWeightReport;
use crate::simulate::{ScenarioConfig, SimulatedDataset};

pub const LONGITUDINAL_FILE: &str = "longitudinal.csv";
pub const SURVIVAL_FILE: &str = "survival.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const FIT_FILE: &str = "fit.json";
pub const STATS_FILE: &str = "sampler_stats.csv";
pub const SELECTION_FILE: &str = "selection.json";
pub const CLASS_DRAWS_FILE: &str = "class_draws.csv";
pub const CLASS_PROBS_FILE: &str = "class_probs.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const LOO_FILE: &str = "loo.json";
pub const WAIC_FILE: &str = "waic.json";

pub fn draws_file(chain: usize) -> String {
    format!("draws_chain{chain}.csv")
}

/// Shortest round-trip text of `x`; scientific notation for very large or
/// small magnitudes. Non-finite values print as `inf`, `-inf`, `NaN`.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x.is_finite() && a != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Data(format!("{what}: cannot parse `{s}` as a number")))
}

/// Serde helpers that keep infinities and NaN through JSON by writing them
/// as strings.
pub mod nonfinite {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn to_repr(x: f64) -> Repr {
        if x.is_finite() {
            Repr::Num(x)
        } else {
            Repr::Text(x.to_string())
        }
    }

    fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(x) => Ok(x),
            Repr::Text(s) => s.parse().map_err(|_| E::custom(format!("not a number: {s}"))),
        }
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*x).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod opt_vec {
        use super::*;

        pub fn serialize<S: Serializer>(x: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
            x.as_ref()
                .map(|v| v.iter().map(|x| to_repr(*x)).collect::<Vec<_>>())
                .serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<f64>>, D::Error> {
            let raw: Option<Vec<Repr>> = Option::deserialize(d)?;
            raw.map(|v| v.into_iter().map(from_repr::<D::Error>).collect::<Result<Vec<_>, _>>())
                .transpose()
        }
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| missing(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn missing(path: &Path, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::Data(format!("{} does not exist", path.display()))
    } else {
        Error::Io(e)
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| missing(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

/// Covariate names shared by every subject, sorted.
fn covariate_names(subjects: &[SubjectData]) -> Vec<String> {
    match subjects.first() {
        Some(s) => s
            .covariates
            .keys()
            .filter(|k| subjects.iter().all(|o| o.covariates.contains_key(*k)))
            .cloned()
            .collect(),
        None => Vec::new(),
    }
}

/// Write `longitudinal.csv` and `survival.csv` into `dir`. Covariates are
/// repeated on every longitudinal row.
pub fn write_dataset(dir: &Path, subjects: &[SubjectData]) -> Result<()> {
    let covs = covariate_names(subjects);
    let mut w = csv_writer(&dir.join(LONGITUDINAL_FILE))?;
    let mut header = vec!["id".to_string(), "time".into(), "value".into()];
    header.extend(covs.iter().cloned());
    w.write_record(&header)?;
    for s in subjects {
        let cov_text: Vec<String> = covs.iter().map(|c| fmt_f64(s.covariates[c])).collect();
        for r in &s.records {
            let mut row = vec![s.id.clone(), fmt_f64(r.time), fmt_f64(r.value)];
            row.extend(cov_text.iter().cloned());
            w.write_record(&row)?;
        }
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join(SURVIVAL_FILE))?;
    let mut header = vec!["id".to_string(), "event_time".into(), "event".into()];
    header.extend(covs.iter().cloned());
    w.write_record(&header)?;
    for s in subjects {
        let mut row = vec![
            s.id.clone(),
            fmt_f64(s.event_time),
            if s.event { "1" } else { "0" }.to_string(),
        ];
        row.extend(covs.iter().map(|c| fmt_f64(s.covariates[c])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

struct Columns {
    index: HashMap<String, usize>,
    extra: Vec<(String, usize)>,
}

impl Columns {
    fn new(headers: &csv::StringRecord, required: &[&str], file: &Path) -> Result<Self> {
        let mut index = HashMap::new();
        for (k, h) in headers.iter().enumerate() {
            if index.insert(h.to_string(), k).is_some() {
                return Err(Error::Data(format!("{}: duplicate column `{h}`", file.display())));
            }
        }
        for r in required {
            if !index.contains_key(*r) {
                return Err(Error::Data(format!("{}: missing column `{r}`", file.display())));
            }
        }
        let extra = headers
            .iter()
            .enumerate()
            .filter(|(_, h)| !required.contains(h))
            .map(|(k, h)| (h.to_string(), k))
            .collect();
        Ok(Self { index, extra })
    }

    fn get<'r>(&self, row: &'r csv::StringRecord, name: &str) -> &'r str {
        row.get(self.index[name]).unwrap_or("")
    }
}

/// Read subjects from the two data CSVs. Subject order follows the survival
/// file. A covariate may appear in either file; values given in both, or on
/// several longitudinal rows, must agree.
pub fn read_dataset(longitudinal: &Path, survival: &Path) -> Result<Vec<SubjectData>> {
    let mut subjects: Vec<SubjectData> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();

    let mut rdr = csv_reader(survival)?;
    let cols = Columns::new(rdr.headers()?, &["id", "event_time", "event"], survival)?;
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let at = |what: &str| format!("{} row {}: {what}", survival.display(), line + 1);
        let id = cols.get(&row, "id").to_string();
        if id.is_empty() {
            return Err(Error::Data(at("empty id")));
        }
        let event = match cols.get(&row, "event") {
            "1" | "true" | "TRUE" => true,
            "0" | "false" | "FALSE" => false,
            other => return Err(Error::Data(at(&format!("event must be 0 or 1, got `{other}`")))),
        };
        let mut covariates = BTreeMap::new();
        for (name, k) in &cols.extra {
            covariates.insert(name.clone(), parse_f64(row.get(*k).unwrap_or(""), &at(name))?);
        }
        if by_id.insert(id.clone(), subjects.len()).is_some() {
            return Err(Error::Data(at(&format!("duplicate id `{id}`"))));
        }
        subjects.push(SubjectData {
            id,
            records: Vec::new(),
            event_time: parse_f64(cols.get(&row, "event_time"), &at("event_time"))?,
            event,
            covariates,
        });
    }

    let mut rdr = csv_reader(longitudinal)?;
    let cols = Columns::new(rdr.headers()?, &["id", "time", "value"], longitudinal)?;
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let at = |what: &str| format!("{} row {}: {what}", longitudinal.display(), line + 1);
        let id = cols.get(&row, "id");
        let &i = by_id
            .get(id)
            .ok_or_else(|| Error::Data(at(&format!("id `{id}` has no survival record"))))?;
        let s = &mut subjects[i];
        s.records.push(LongitudinalRecord {
            time: parse_f64(cols.get(&row, "time"), &at("time"))?,
            value: parse_f64(cols.get(&row, "value"), &at("value"))?,
        });
        for (name, k) in &cols.extra {
            let v = parse_f64(row.get(*k).unwrap_or(""), &at(name))?;
            match s.covariates.get(name) {
                Some(old) if *old != v => {
                    return Err(Error::Data(at(&format!(
                        "covariate `{name}` of subject `{id}` is {v} here but {old} elsewhere"
                    ))))
                }
                Some(_) => {}
                None => {
                    s.covariates.insert(name.clone(), v);
                }
            }
        }
    }
    for s in &mut subjects {
        s.records.sort_by(|a, b| a.time.total_cmp(&b.time));
        s.validate()?;
    }
    Ok(subjects)
}

/// Read `longitudinal.csv` and `survival.csv` from `dir`.
pub fn read_dataset_dir(dir: &Path) -> Result<Vec<SubjectData>> {
    read_dataset(&dir.join(LONGITUDINAL_FILE), &dir.join(SURVIVAL_FILE))
}

/// Generating configuration and latent truth of a simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub scenario: ScenarioConfig,
    pub subject_ids: Vec<String>,
    pub labels: Vec<u32>,
    pub random_effects: LatentEffects,
}

impl Truth {
    pub fn new(scenario: &ScenarioConfig, data: &SimulatedDataset) -> Self {
        Self {
            scenario: scenario.clone(),
            subject_ids: data.subjects.iter().map(|s| s.id.clone()).collect(),
            labels: data.true_labels.clone(),
            random_effects: data.true_random_effects.clone(),
        }
    }

    /// True labels in the order of `ids`.
    pub fn labels_for(&self, ids: &[String]) -> Result<Vec<u32>> {
        let pos: HashMap<&str, usize> = self
            .subject_ids
            .iter()
            .enumerate()
            .map(|(k, id)| (id.as_str(), k))
            .collect();
        ids.iter()
            .map(|id| {
                pos.get(id.as_str())
                    .map(|&k| self.labels[k])
                    .ok_or_else(|| Error::Data(format!("subject `{id}` is not in the truth file")))
            })
            .collect()
    }
}

pub fn write_truth(path: &Path, truth: &Truth) -> Result<()> {
    write_json(path, truth)
}

pub fn read_truth(path: &Path) -> Result<Truth> {
    read_json(path)
}

/// Parse a fit configuration, returning it with the original text.
pub fn read_fit_config(path: &Path) -> Result<(FitConfig, String)> {
    let text = fs::read_to_string(path).map_err(|e| missing(path, e))?;
    let config: FitConfig = toml::from_str(&text)?;
    Ok((config, text))
}

/// Writes into a temporary sibling of `target` and renames it into place on
/// [`OutputDir::commit`]. `target` must not exist or be an empty directory.
pub struct OutputDir {
    tmp: tempfile::TempDir,
    target: PathBuf,
}

impl OutputDir {
    pub fn create(target: &Path) -> Result<Self> {
        if target.exists() {
            let empty = target.is_dir() && fs::read_dir(target)?.next().is_none();
            if !empty {
                return Err(Error::Config(format!(
                    "output directory {} exists and is not empty",
                    target.display()
                )));
            }
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent)?;
        let tmp = tempfile::Builder::new().prefix(".jlcm-out-").tempdir_in(&parent)?;
        Ok(Self {
            tmp,
            target: target.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        self.tmp.path()
    }

    pub fn commit(self) -> Result<PathBuf> {
        if self.target.is_dir() {
            fs::remove_dir(&self.target)?;
        }
        let tmp = self.tmp.keep();
        fs::rename(&tmp, &self.target)?;
        Ok(self.target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStatus {
    pub chain_id: usize,
    pub failure: Option<String>,
    #[serde(with = "nonfinite")]
    pub step_size: f64,
    pub post_warmup_divergences: usize,
    pub post_warmup_iterations: usize,
    pub n_draws: usize,
}

/// Contents of `fit.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub config: FitConfig,
    pub parameter_names: Vec<String>,
    pub subject_ids: Vec<String>,
    pub selected_chain: usize,
    pub chains: Vec<ChainStatus>,
}

/// One row of `sampler_stats.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerStatRow {
    pub chain: usize,
    pub draw: usize,
    pub lp: f64,
    pub accept_stat: f64,
    pub step_size: f64,
    pub tree_depth: usize,
    pub n_leapfrog: usize,
    pub divergent: u8,
}

/// Everything written for one fit, as read back.
#[derive(Debug, Clone, PartialEq)]
pub struct FitArtifacts {
    pub meta: FitMetadata,
    /// Per chain, draws by parameters on the constrained scale.
    pub draws: Vec<Vec<Vec<f64>>>,
    pub stats: Vec<SamplerStatRow>,
    pub selection: ChainWeightReport,
    /// Draws by subjects.
    pub class_draws: Vec<Vec<u32>>,
    pub class_probs: Vec<Vec<f64>>,
    pub map: Vec<u32>,
    pub summary: Vec<ParamSummary>,
    pub loo: CriterionResult,
    pub waic: CriterionResult,
}

impl FitArtifacts {
    pub fn n_classes(&self) -> usize {
        self.meta.config.model.n_classes
    }

    pub fn criterion(&self, name: &str) -> Result<&CriterionResult> {
        match name {
            "loo" => Ok(&self.loo),
            "waic" => Ok(&self.waic),
            other => Err(Error::Config(format!("unknown criterion `{other}`; use loo or waic"))),
        }
    }
}

fn write_matrix(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|x| fmt_f64(*x)))?;
    }
    w.flush()?;
    Ok(())
}

fn read_matrix(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv_reader(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for row in rdr.records() {
        let row = row?;
        rows.push(
            row.iter()
                .map(|s| parse_f64(s, &path.display().to_string()))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok((header, rows))
}

/// Write every artifact of `result` into `dir`. `config_text` is echoed
/// verbatim as `config.toml` when given.
pub fn write_fit(
    dir: &Path,
    config: &FitConfig,
    config_text: Option<&str>,
    result: &FitResult,
) -> Result<()> {
    if let Some(text) = config_text {
        fs::write(dir.join(CONFIG_FILE), text)?;
    }
    let meta = FitMetadata {
        config: config.clone(),
        parameter_names: result.parameter_names.clone(),
        subject_ids: result.subject_ids.clone(),
        selected_chain: result.selection.selected_chain,
        chains: result
            .chains
            .iter()
            .map(|c| ChainStatus {
                chain_id: c.chain_id,
                failure: c.failure.clone(),
                step_size: c.step_size,
                post_warmup_divergences: c.post_warmup_divergences,
                post_warmup_iterations: c.post_warmup_iterations,
                n_draws: c.n_draws(),
            })
            .collect(),
    };
    write_json(&dir.join(FIT_FILE), &meta)?;

    for (k, draws) in result.constrained.iter().enumerate() {
        write_matrix(&dir.join(draws_file(k)), &result.parameter_names, draws)?;
    }

    let mut w = csv_writer(&dir.join(STATS_FILE))?;
    for c in &result.chains {
        for j in 0..c.n_draws() {
            w.serialize(SamplerStatRow {
                chain: c.chain_id,
                draw: j,
                lp: c.lp[j],
                accept_stat: c.accept_stat[j],
                step_size: c.step_size,
                tree_depth: c.tree_depth[j],
                n_leapfrog: c.n_leapfrog[j],
                divergent: c.divergent[j] as u8,
            })?;
        }
    }
    w.flush()?;

    write_json(&dir.join(SELECTION_FILE), &result.selection)?;

    let mut w = csv_writer(&dir.join(CLASS_DRAWS_FILE))?;
    w.write_record(&result.subject_ids)?;
    for row in &result.labels.labels {
        w.write_record(row.iter().map(|g| g.to_string()))?;
    }
    w.flush()?;

    let g = config.model.n_classes;
    let mut w = csv_writer(&dir.join(CLASS_PROBS_FILE))?;
    let mut header = vec!["id".to_string()];
    header.extend((1..=g).map(|k| format!("p{k}")));
    header.push("map".into());
    w.write_record(&header)?;
    for ((id, p), m) in result.subject_ids.iter().zip(&result.class_probs).zip(&result.map) {
        let mut row = vec![id.clone()];
        row.extend(p.iter().map(|x| fmt_f64(*x)));
        row.push(m.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join(SUMMARY_FILE))?;
    w.write_record(["parameter", "mean", "sd", "q2.5", "q97.5"])?;
    for s in &result.summary {
        w.write_record([
            s.name.clone(),
            fmt_f64(s.mean),
            fmt_f64(s.sd),
            fmt_f64(s.q025),
            fmt_f64(s.q975),
        ])?;
    }
    w.flush()?;

    write_json(&dir.join(LOO_FILE), &result.loo)?;
    write_json(&dir.join(WAIC_FILE), &result.waic)?;
    Ok(())
}

/// Read a fit directory written by [`write_fit`].
pub fn read_fit(dir: &Path) -> Result<FitArtifacts> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("fit directory {} does not exist", dir.display())));
    }
    let meta: FitMetadata = read_json(&dir.join(FIT_FILE))?;
    let mut draws = Vec::with_capacity(meta.chains.len());
    for c in &meta.chains {
        let (header, rows) = read_matrix(&dir.join(draws_file(c.chain_id)))?;
        if header != meta.parameter_names {
            return Err(Error::Data(format!(
                "{}: columns do not match the parameter names",
                draws_file(c.chain_id)
            )));
        }
        draws.push(rows);
    }

    let mut stats = Vec::new();
    for row in csv_reader(&dir.join(STATS_FILE))?.deserialize() {
        stats.push(row?);
    }

    let mut rdr = csv_reader(&dir.join(CLASS_DRAWS_FILE))?;
    let ids: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    if ids != meta.subject_ids {
        return Err(Error::Data(format!("{CLASS_DRAWS_FILE}: columns do not match subject ids")));
    }
    let mut class_draws = Vec::new();
    for row in rdr.records() {
        class_draws.push(
            row?.iter()
                .map(|s| s.parse::<u32>().map_err(|_| Error::Data(format!("bad label `{s}`"))))
                .collect::<Result<Vec<_>>>()?,
        );
    }

    let mut rdr = csv_reader(&dir.join(CLASS_PROBS_FILE))?;
    let g = meta.config.model.n_classes;
    let mut class_probs = Vec::new();
    let mut map = Vec::new();
    for row in rdr.records() {
        let row = row?;
        if row.len() != g + 2 {
            return Err(Error::Data(format!("{CLASS_PROBS_FILE}: expected {} columns", g + 2)));
        }
        class_probs.push(
            (1..=g)
                .map(|k| parse_f64(&row[k], CLASS_PROBS_FILE))
                .collect::<Result<Vec<_>>>()?,
        );
        map.push(
            row[g + 1]
                .parse::<u32>()
                .map_err(|_| Error::Data(format!("{CLASS_PROBS_FILE}: bad MAP class")))?,
        );
    }

    let mut rdr = csv_reader(&dir.join(SUMMARY_FILE))?;
    let mut summary = Vec::new();
    for row in rdr.records() {
        let row = row?;
        if row.len() != 5 {
            return Err(Error::Data(format!("{SUMMARY_FILE}: expected 5 columns")));
        }
        let num = |k: usize| parse_f64(&row[k], SUMMARY_FILE);
        summary.push(ParamSummary {
            name: row[0].to_string(),
            mean: num(1)?,
            sd: num(2)?,
            q025: num(3)?,
            q975: num(4)?,
        });
    }

    Ok(FitArtifacts {
        draws,
        stats,
        selection: read_json(&dir.join(SELECTION_FILE))?,
        class_draws,
        class_probs,
        map,
        summary,
        loo: read_json(&dir.join(LOO_FILE))?,
        waic: read_json(&dir.join(WAIC_FILE))?,
        meta,
    })
}
