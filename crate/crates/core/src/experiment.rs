//! End-to-end experiment runner: manifest → audio → MFCC → models →
//! distance matrix → evaluation report.
//!
//! Features and fitted models are cached on disk under their content hash,
//! so reruns that change only later stages (distance method, Monte-Carlo
//! sample count) skip extraction and fitting.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::{euclidean, mean_feature, MeanFeature};
use crate::bof_model::{
    fit_gmm, kl_marginal, kl_mc, DistanceConfig, GmmModel, DEFAULT_COMPONENTS, DEFAULT_MC_SAMPLES,
    KMEANS_ITERATIONS, MAX_ITERATIONS, TOLERANCE,
};
use crate::dataset::{load_manifest, materialize, DatasetManifest, UnitPolicy};
use crate::error::{Error, Result};
use crate::eval::{
    chance_baseline, evaluate, report_table, DistanceMatrix, EvalReport, DEFAULT_CHANCE_TRIALS,
};
use crate::features::{mfcc, FeatureSequence, HOP, LOG_FLOOR, LOW_HZ, N_COEFFS, N_FILTERS, WINDOW};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BofMc,
    BofMarginal,
    Average,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::BofMc => "bof_mc",
            Method::BofMarginal => "bof_marginal",
            Method::Average => "average",
        }
    }

    pub fn uses_models(self) -> bool {
        !matches!(self, Method::Average)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bof_mc" => Ok(Method::BofMc),
            "bof_marginal" => Ok(Method::BofMarginal),
            "average" => Ok(Method::Average),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected bof_mc, bof_marginal or average)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub manifest: PathBuf,
    pub unit_policy: UnitPolicy,
    pub normalize: bool,
    pub include_c0: bool,
    pub method: Method,
    pub components: usize,
    /// Only meaningful for `bof_mc`; `None` means the default.
    pub mc_samples: Option<usize>,
    /// Required for the model-based methods.
    pub rng_seed: Option<u64>,
    pub chance_trials: usize,
    pub output_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Defaults: whole recordings, normalization on, coefficient 0 kept,
    /// Monte-Carlo BOF with 50 components.
    pub fn new(manifest: impl Into<PathBuf>) -> Self {
        Self {
            manifest: manifest.into(),
            unit_policy: UnitPolicy::WholeRecording,
            normalize: true,
            include_c0: true,
            method: Method::BofMc,
            components: DEFAULT_COMPONENTS,
            mc_samples: None,
            rng_seed: None,
            chance_trials: DEFAULT_CHANCE_TRIALS,
            output_dir: None,
            cache_dir: None,
        }
    }

    /// Parse a flat `key = value` file. Blank lines and `#` comments are
    /// ignored. Relative paths are taken relative to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_kv(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.manifest);
        cfg.output_dir.as_mut().map(rebase);
        cfg.cache_dir.as_mut().map(rebase);
        Ok(cfg)
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::new("");
        let mut saw_manifest = false;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            saw_manifest |= key == "manifest";
            cfg.set(key, value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        if !saw_manifest {
            return Err(Error::Config("manifest is required".into()));
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "yes" | "1" | "on" => Ok(true),
                "false" | "no" | "0" | "off" => Ok(false),
                _ => Err(Error::Config(format!(
                    "{key}: expected a boolean, got {v:?}"
                ))),
            }
        }
        fn number<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: expected a number, got {v:?}")))
        }
        match key {
            "manifest" => self.manifest = PathBuf::from(value),
            "unit_policy" => self.unit_policy = value.parse()?,
            "normalize" => self.normalize = flag(key, value)?,
            "include_c0" => self.include_c0 = flag(key, value)?,
            "method" => self.method = value.parse()?,
            "components" | "m" => self.components = number(key, value)?,
            "mc_samples" => self.mc_samples = Some(number(key, value)?),
            "rng_seed" | "seed" => self.rng_seed = Some(number(key, value)?),
            "chance_trials" => self.chance_trials = number(key, value)?,
            "output_dir" => self.output_dir = Some(PathBuf::from(value)),
            "cache_dir" => self.cache_dir = Some(PathBuf::from(value)),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.mc_samples.is_some() && self.method != Method::BofMc {
            return Err(Error::Config(format!(
                "mc_samples applies only to bof_mc, not {}",
                self.method
            )));
        }
        if self.mc_samples == Some(0) {
            return Err(Error::Config("mc_samples must be at least 1".into()));
        }
        if self.method.uses_models() && self.rng_seed.is_none() {
            return Err(Error::Config(format!("{} requires rng_seed", self.method)));
        }
        if self.components == 0 {
            return Err(Error::Config("components must be at least 1".into()));
        }
        if self.chance_trials == 0 {
            return Err(Error::Config("chance_trials must be at least 1".into()));
        }
        Ok(())
    }

    pub fn mc_samples(&self) -> usize {
        self.mc_samples.unwrap_or(DEFAULT_MC_SAMPLES)
    }

    pub fn seed(&self) -> u64 {
        self.rng_seed.unwrap_or(0)
    }

    /// Settings that affect results, as recorded in reports.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("manifest", self.manifest.display().to_string());
        put("unit_policy", self.unit_policy.to_string());
        put("normalize", self.normalize.to_string());
        put("include_c0", self.include_c0.to_string());
        put("method", self.method.to_string());
        if self.method.uses_models() {
            put("components", self.components.to_string());
        }
        if self.method == Method::BofMc {
            put("mc_samples", self.mc_samples().to_string());
        }
        if let Some(s) = self.rng_seed {
            put("rng_seed", s.to_string());
        }
        put("chance_trials", self.chance_trials.to_string());
        m
    }
}

/// On-disk store of encoded artifacts keyed by content hash. Files are
/// written to a temporary name and renamed into place, so a reader never
/// sees a partial entry. With no directory every lookup misses.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    dir: Option<PathBuf>,
}

impl Cache {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self { dir }
    }

    fn path(&self, kind: &str, key: &[u8; 32]) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(kind).join(format!("{}.bin", hex(key))))
    }

    pub fn get(&self, kind: &str, key: &[u8; 32]) -> Option<Vec<u8>> {
        std::fs::read(self.path(kind, key)?).ok()
    }

    pub fn put(&self, kind: &str, key: &[u8; 32], bytes: &[u8]) -> Result<()> {
        let Some(path) = self.path(kind, key) else {
            return Ok(());
        };
        let dir = path.parent().expect("cache entries live in a directory");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tmp = dir.join(format!(
            ".{}.{}.{:?}.tmp",
            hex(key),
            std::process::id(),
            std::thread::current().id()
        ));
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

fn f64_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Hash of a feature sequence's shape and values.
pub fn feature_hash(features: &FeatureSequence) -> [u8; 32] {
    digest(&[
        &(features.dim() as u64).to_le_bytes(),
        &f64_bytes(features.as_slice()),
    ])
}

/// EM seed for one item: derived from the run seed and the item's features,
/// so it does not depend on item order or scheduling.
pub fn item_seed(run_seed: u64, features: &FeatureSequence) -> u64 {
    let d = digest(&[b"fit", &run_seed.to_le_bytes(), &feature_hash(features)]);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// MFCC for every materialized item, reusing cached sequences.
pub fn extract_features(
    audio: &[(String, crate::audio_io::SampleBuffer)],
    include_c0: bool,
    cache: &Cache,
) -> Result<Vec<FeatureSequence>> {
    let params =
        format!("mfcc:{WINDOW}:{HOP}:{N_FILTERS}:{N_COEFFS}:{LOW_HZ}:{LOG_FLOOR}:c0={include_c0}");
    audio
        .par_iter()
        .map(|(id, buf)| {
            let key = digest(&[
                params.as_bytes(),
                &buf.sample_rate().to_le_bytes(),
                &f64_bytes(buf.samples()),
            ]);
            if let Some(bytes) = cache.get("features", &key) {
                if let Ok(seq) = FeatureSequence::read_binary(&bytes[..], buf.source_id()) {
                    return Ok(seq.with_segment_index(buf.segment_index()));
                }
            }
            let seq = mfcc(buf, include_c0).map_err(|e| e.at_stage("features", id))?;
            let mut bytes = Vec::new();
            seq.write_binary(&mut bytes).expect("write to Vec");
            cache.put("features", &key, &bytes)?;
            Ok(seq)
        })
        .collect()
}

/// Fit one mixture per item, reusing cached models.
pub fn fit_models(
    ids: &[String],
    features: &[FeatureSequence],
    components: usize,
    run_seed: u64,
    cache: &Cache,
) -> Result<Vec<GmmModel>> {
    let params = format!("gmm:{components}:{MAX_ITERATIONS}:{TOLERANCE}:{KMEANS_ITERATIONS}");
    ids.par_iter()
        .zip(features)
        .map(|(id, seq)| {
            let seed = item_seed(run_seed, seq);
            let key = digest(&[params.as_bytes(), &seed.to_le_bytes(), &feature_hash(seq)]);
            if let Some(bytes) = cache.get("models", &key) {
                if let Ok(model) = GmmModel::read_binary(&bytes[..]) {
                    return Ok(model);
                }
            }
            let model = fit_gmm(seq, components, seed).map_err(|e| e.at_stage("fit", id))?;
            let mut bytes = Vec::new();
            model.write_binary(&mut bytes).expect("write to Vec");
            cache.put("models", &key, &bytes)?;
            Ok(model)
        })
        .collect()
}

/// Symmetrized divergence estimates can come out slightly negative for
/// near-identical items; they are clamped to zero.
fn clamp(v: f64) -> f64 {
    v.max(0.0)
}

pub fn bof_mc_matrix(
    ids: &[String],
    models: &[GmmModel],
    mc_samples: usize,
    seed: u64,
) -> Result<DistanceMatrix> {
    let cfg = DistanceConfig::monte_carlo(mc_samples, seed);
    DistanceMatrix::from_fn(ids.to_vec(), |i, j| {
        kl_mc(&models[i], &models[j], &cfg)
            .map(clamp)
            .map_err(|e| e.at_stage("distance", format!("{} / {}", ids[i], ids[j])))
    })
}

pub fn bof_marginal_matrix(
    ids: &[String],
    models: &[GmmModel],
    features: &[FeatureSequence],
) -> Result<DistanceMatrix> {
    DistanceMatrix::from_fn(ids.to_vec(), |i, j| {
        kl_marginal(&models[i], &models[j], &features[i], &features[j])
            .map(clamp)
            .map_err(|e| e.at_stage("distance", format!("{} / {}", ids[i], ids[j])))
    })
}

pub fn average_matrix(ids: &[String], means: &[MeanFeature]) -> Result<DistanceMatrix> {
    DistanceMatrix::from_fn(ids.to_vec(), |i, j| euclidean(&means[i], &means[j]))
}

pub fn mean_features(ids: &[String], features: &[FeatureSequence]) -> Result<Vec<MeanFeature>> {
    ids.iter()
        .zip(features)
        .map(|(id, f)| mean_feature(f).map_err(|e| e.at_stage("average", id)))
        .collect()
}

/// Everything a run produced, for callers that need more than the report.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: DatasetManifest,
    pub matrix: DistanceMatrix,
    pub report: EvalReport,
}

/// Run the whole pipeline and, if an output directory is configured, write
/// `<dataset>-<method>.json` and a text table next to it.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<EvalReport> {
    run_experiment_full(cfg).map(|o| o.report)
}

pub fn run_experiment_full(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let manifest = load_manifest(&cfg.manifest, cfg.unit_policy)?;
    let cache = Cache::new(cfg.cache_dir.clone());
    let ids = manifest.ids();
    let labels = manifest.labels();

    let audio = materialize(&manifest, cfg.normalize)?;
    let features = extract_features(&audio, cfg.include_c0, &cache)?;
    drop(audio);

    let matrix = match cfg.method {
        Method::Average => average_matrix(&ids, &mean_features(&ids, &features)?)?,
        Method::BofMc => {
            let models = fit_models(&ids, &features, cfg.components, cfg.seed(), &cache)?;
            bof_mc_matrix(&ids, &models, cfg.mc_samples(), cfg.seed())?
        }
        Method::BofMarginal => {
            let models = fit_models(&ids, &features, cfg.components, cfg.seed(), &cache)?;
            bof_marginal_matrix(&ids, &models, &features)?
        }
    };

    let chance = chance_baseline(&labels, cfg.chance_trials, cfg.seed())?;
    let report = evaluate(&matrix, &labels)?
        .with_chance(chance)
        .with_config(cfg.echo());

    if let Some(dir) = &cfg.output_dir {
        write_report(dir, &manifest.name, cfg.method, &report)?;
    }
    Ok(RunOutput {
        manifest,
        matrix,
        report,
    })
}

/// Write `<name>-<method>.json` and `<name>-<method>.txt` into `dir`.
pub fn write_report(
    dir: &Path,
    name: &str,
    method: Method,
    report: &EvalReport,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join(format!("{name}-{method}.json"));
    std::fs::write(&json, report.to_json()).map_err(|e| Error::io(&json, e))?;
    let txt = dir.join(format!("{name}-{method}.txt"));
    let table = report_table(
        &[(name.to_string(), report.chance.as_ref(), vec![Some(report)])],
        &[method_column(method)],
    );
    std::fs::write(&txt, table).map_err(|e| Error::io(&txt, e))?;
    Ok(json)
}

pub fn method_column(method: Method) -> &'static str {
    match method {
        Method::Average => "Average",
        Method::BofMc => "BOF",
        Method::BofMarginal => "BOF (marginal)",
    }
}

/// Listing written alongside per-item artifacts by the staged commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactIndex {
    pub dataset: String,
    pub unit_policy: UnitPolicy,
    pub config: BTreeMap<String, String>,
    pub items: Vec<IndexedItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedItem {
    pub item_id: String,
    pub class_label: String,
    pub file: String,
}

pub const INDEX_FILE: &str = "index.json";

impl ArtifactIndex {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            what: "artifact index",
            reason: e.to_string(),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(INDEX_FILE);
        let text = serde_json::to_string_pretty(self).expect("index serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|i| i.item_id.clone()).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.items.iter().map(|i| i.class_label.clone()).collect()
    }
}

/// File-name-safe form of an item id.
pub fn file_stem(item_id: &str) -> String {
    item_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.#".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Distance matrix plus the labels needed to evaluate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceFile {
    pub dataset: String,
    pub labels: Vec<String>,
    pub config: BTreeMap<String, String>,
    pub matrix: DistanceMatrix,
}

impl DistanceFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: Self = serde_json::from_str(&text).map_err(|e| Error::Format {
            what: "distance file",
            reason: e.to_string(),
        })?;
        // Re-validate: the file may have been edited.
        let matrix =
            DistanceMatrix::new(file.matrix.ids().to_vec(), file.matrix.values().to_vec())?;
        Ok(Self { matrix, ..file })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("distance file serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
