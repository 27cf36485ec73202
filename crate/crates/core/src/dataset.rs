//! Dataset manifests: which audio belongs to which class, recording and
//! location, and how recordings turn into evaluation items.
//!
//! A manifest is a CSV file with the header
//! `item_id,audio_path,class_label,recording_id,location_id,segment_index`.
//! Rows normally describe whole recordings and leave `segment_index` empty.
//! Under the segmented policy each such row expands into one item per unit
//! (`<item_id>#<index>`); rows that already carry a `segment_index` name a
//! pre-cut unit file and are taken as they are.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio_io::{self, SampleBuffer};
use crate::error::{Error, ManifestIssue, Result};

pub const COLUMNS: [&str; 6] = [
    "item_id",
    "audio_path",
    "class_label",
    "recording_id",
    "location_id",
    "segment_index",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UnitPolicy {
    WholeRecording,
    Segmented { unit_seconds: f64 },
}

impl fmt::Display for UnitPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnitPolicy::WholeRecording => f.write_str("whole"),
            UnitPolicy::Segmented { unit_seconds } => write!(f, "segmented:{unit_seconds}"),
        }
    }
}

impl FromStr for UnitPolicy {
    type Err = Error;

    /// `whole` or `segmented:<seconds>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "whole" || s == "whole_recording" {
            return Ok(UnitPolicy::WholeRecording);
        }
        let secs = s
            .strip_prefix("segmented:")
            .or_else(|| s.strip_prefix("segmented="))
            .ok_or_else(|| Error::Config(format!("unknown unit policy {s:?}")))?;
        let unit_seconds: f64 = secs
            .parse()
            .map_err(|_| Error::Config(format!("bad unit length {secs:?}")))?;
        if !(unit_seconds > 0.0 && unit_seconds.is_finite()) {
            return Err(Error::Config(format!(
                "unit length must be positive, got {secs}"
            )));
        }
        Ok(UnitPolicy::Segmented { unit_seconds })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub item_id: String,
    pub audio_path: PathBuf,
    pub class_label: String,
    pub recording_id: String,
    pub location_id: String,
    pub segment_index: Option<usize>,
    /// True when this unit was cut from its recording at load time, false
    /// for whole recordings and pre-cut unit files.
    pub derived: bool,
    /// CSV line the entry came from.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub items: Vec<ManifestEntry>,
    pub unit_policy: UnitPolicy,
}

#[derive(Debug, Deserialize)]
struct Row {
    item_id: String,
    audio_path: String,
    class_label: String,
    recording_id: String,
    location_id: String,
    segment_index: Option<usize>,
}

fn issue(line: usize, message: impl Into<String>) -> ManifestIssue {
    ManifestIssue {
        row: Some(line),
        message: message.into(),
    }
}

/// Read and validate a manifest. Relative audio paths are resolved against
/// the manifest's directory. Every problem found is reported, each with its
/// line number.
pub fn load_manifest(path: impl AsRef<Path>, policy: UnitPolicy) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let fail = |issues: Vec<ManifestIssue>| Error::Manifest {
        path: path.to_path_buf(),
        issues,
    };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| fail(vec![issue(1, e.to_string())]))?
        .clone();
    let missing: Vec<&str> = COLUMNS
        .iter()
        .copied()
        .filter(|c| !headers.iter().any(|h| h == *c))
        .collect();
    if !missing.is_empty() {
        return Err(fail(vec![issue(
            1,
            format!("missing columns: {}", missing.join(", ")),
        )]));
    }

    let base = path.parent().unwrap_or(Path::new("."));
    let mut issues = Vec::new();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = record
            .as_ref()
            .ok()
            .and_then(|r| r.position())
            .map_or(i + 2, |p| p.line() as usize);
        let parsed = record.and_then(|r| r.deserialize::<Row>(Some(&headers)));
        match parsed {
            Ok(row) => rows.push((line, row)),
            Err(e) => issues.push(issue(line, e.to_string())),
        }
    }

    let mut items = Vec::new();
    let mut ids = HashSet::new();
    for (line, row) in rows {
        for (field, value) in [
            ("item_id", &row.item_id),
            ("audio_path", &row.audio_path),
            ("class_label", &row.class_label),
            ("recording_id", &row.recording_id),
            ("location_id", &row.location_id),
        ] {
            if value.is_empty() {
                issues.push(issue(line, format!("empty {field}")));
            }
        }
        if !ids.insert(row.item_id.clone()) {
            issues.push(issue(line, format!("duplicate item_id {:?}", row.item_id)));
        }
        let audio = base.join(&row.audio_path);
        if !audio.is_file() {
            issues.push(issue(
                line,
                format!("audio file not found: {}", audio.display()),
            ));
            continue;
        }
        let entry = ManifestEntry {
            item_id: row.item_id,
            audio_path: audio,
            class_label: row.class_label,
            recording_id: row.recording_id,
            location_id: row.location_id,
            segment_index: row.segment_index,
            derived: false,
            line,
        };
        match (policy, entry.segment_index) {
            (UnitPolicy::WholeRecording, Some(_)) => issues.push(issue(
                line,
                "segment_index is set but the policy is whole-recording",
            )),
            (UnitPolicy::WholeRecording, None) | (UnitPolicy::Segmented { .. }, Some(_)) => {
                items.push(entry)
            }
            (UnitPolicy::Segmented { unit_seconds }, None) => {
                match audio_io::probe(&entry.audio_path) {
                    Ok(info) => {
                        let unit = audio_io::unit_length(unit_seconds, info.sample_rate).max(1);
                        let count = audio_io::segment_count(info.frames as usize, unit);
                        if count == 0 {
                            log::warn!(
                                "line {line}: {} ({:.1} s) yields no {unit_seconds} s units",
                                entry.item_id,
                                info.duration_seconds()
                            );
                        }
                        for s in 0..count {
                            let id = format!("{}#{s}", entry.item_id);
                            if !ids.insert(id.clone()) {
                                issues.push(issue(line, format!("duplicate item_id {id:?}")));
                            }
                            items.push(ManifestEntry {
                                item_id: id,
                                segment_index: Some(s),
                                derived: true,
                                ..entry.clone()
                            });
                        }
                    }
                    Err(e) => issues.push(issue(line, e.to_string())),
                }
            }
        }
    }

    let mut units = HashSet::new();
    for e in &items {
        if let Some(s) = e.segment_index {
            if !units.insert((e.recording_id.as_str(), s)) {
                issues.push(issue(
                    e.line,
                    format!("recording {:?} has segment {s} twice", e.recording_id),
                ));
            }
        }
    }

    let mut per_class: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &items {
        *per_class.entry(&e.class_label).or_default() += 1;
    }
    if issues.is_empty() {
        if per_class.len() < 2 {
            issues.push(ManifestIssue {
                row: None,
                message: format!("need at least 2 classes, found {}", per_class.len()),
            });
        }
        for (label, count) in &per_class {
            if *count < 2 {
                let lines: Vec<String> = items
                    .iter()
                    .filter(|e| e.class_label == *label)
                    .map(|e| e.line.to_string())
                    .collect();
                issues.push(ManifestIssue {
                    row: None,
                    message: format!(
                        "class {label:?} has {count} item(s) under policy {policy} (lines {})",
                        lines.join(", ")
                    ),
                });
            }
        }
    }
    if !issues.is_empty() {
        issues.sort_by_key(|i| i.row.unwrap_or(usize::MAX));
        return Err(fail(issues));
    }

    let name = path
        .file_stem()
        .map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned());
    Ok(DatasetManifest {
        name,
        items,
        unit_policy: policy,
    })
}

impl DatasetManifest {
    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|e| e.item_id.clone()).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.items.iter().map(|e| e.class_label.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Decode every item. Recordings are decoded once, optionally peak
/// normalized, and cut into units when the manifest was expanded under the
/// segmented policy. Output follows manifest order.
pub fn materialize(
    manifest: &DatasetManifest,
    normalize: bool,
) -> Result<Vec<(String, SampleBuffer)>> {
    let mut groups: Vec<(PathBuf, Vec<usize>)> = Vec::new();
    let mut group_of: HashMap<(&Path, bool), usize> = HashMap::new();
    for (i, e) in manifest.items.iter().enumerate() {
        // Whole files and pre-cut units are decoded individually.
        let key = (e.audio_path.as_path(), e.derived);
        match group_of.get(&key) {
            Some(&g) if e.derived => groups[g].1.push(i),
            _ => {
                group_of.insert(key, groups.len());
                groups.push((e.audio_path.clone(), vec![i]));
            }
        }
    }

    let decoded: Vec<Vec<(usize, SampleBuffer)>> = groups
        .par_iter()
        .map(|(path, members)| {
            let first = &manifest.items[members[0]];
            let buf = audio_io::decode(path).map_err(|e| e.at_stage("decode", &first.item_id))?;
            let buf = if normalize {
                audio_io::normalize(&buf)
            } else {
                buf
            };
            let UnitPolicy::Segmented { unit_seconds } = manifest.unit_policy else {
                return Ok(vec![(members[0], buf)]);
            };
            if !first.derived {
                return Ok(vec![(members[0], buf)]);
            }
            let units = audio_io::segment(&buf, unit_seconds)
                .map_err(|e| e.at_stage("segment", &first.item_id))?;
            members
                .iter()
                .map(|&i| {
                    let entry = &manifest.items[i];
                    let s = entry.segment_index.expect("derived units carry an index");
                    units.get(s).cloned().map(|u| (i, u)).ok_or_else(|| {
                        Error::Format {
                            what: "audio",
                            reason: format!(
                                "{} decodes to {} units, segment {s} missing",
                                path.display(),
                                units.len()
                            ),
                        }
                        .at_stage("segment", &entry.item_id)
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut out: Vec<Option<SampleBuffer>> = vec![None; manifest.len()];
    for (i, buf) in decoded.into_iter().flatten() {
        out[i] = Some(buf);
    }
    Ok(manifest
        .items
        .iter()
        .zip(out)
        .map(|(e, b)| (e.item_id.clone(), b.expect("every item materialized")))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLeakage {
    pub class_label: String,
    pub items: usize,
    pub recordings: usize,
    pub locations: usize,
    pub same_class_pairs: usize,
    pub shared_recording_pairs: usize,
    /// Fraction of same-class item pairs that come from one recording.
    pub leakage_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageSummary {
    pub dataset: String,
    pub unit_policy: UnitPolicy,
    pub items: usize,
    pub classes: Vec<ClassLeakage>,
    pub mean_recordings_per_class: f64,
    pub mean_locations_per_class: f64,
}

impl LeakageSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

fn pairs(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

pub fn leakage_summary(manifest: &DatasetManifest) -> LeakageSummary {
    let mut by_class: BTreeMap<&str, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in &manifest.items {
        by_class.entry(&e.class_label).or_default().push(e);
    }
    let classes: Vec<ClassLeakage> = by_class
        .into_iter()
        .map(|(label, entries)| {
            let mut per_recording: HashMap<&str, usize> = HashMap::new();
            for e in &entries {
                *per_recording.entry(&e.recording_id).or_default() += 1;
            }
            let locations: BTreeSet<&str> =
                entries.iter().map(|e| e.location_id.as_str()).collect();
            let same_class_pairs = pairs(entries.len());
            let shared_recording_pairs = per_recording.values().map(|&c| pairs(c)).sum();
            ClassLeakage {
                class_label: label.to_string(),
                items: entries.len(),
                recordings: per_recording.len(),
                locations: locations.len(),
                same_class_pairs,
                shared_recording_pairs,
                leakage_fraction: if same_class_pairs == 0 {
                    0.0
                } else {
                    shared_recording_pairs as f64 / same_class_pairs as f64
                },
            }
        })
        .collect();
    let n = classes.len().max(1) as f64;
    LeakageSummary {
        dataset: manifest.name.clone(),
        unit_policy: manifest.unit_policy,
        items: manifest.len(),
        mean_recordings_per_class: classes.iter().map(|c| c.recordings as f64).sum::<f64>() / n,
        mean_locations_per_class: classes.iter().map(|c| c.locations as f64).sum::<f64>() / n,
        classes,
    }
}
