//! Dataset manifests, stratified splitting, stage relabeling, class-balance
//! reporting and the synthetic scene generator.

mod synthetic;

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use synthetic::{
    generate_synthetic, generate_synthetic_with, render_scene, BoxMeta, Defect, Degradation, SceneMeta,
    SyntheticConfig, MIN_SCENE_SIZE, REFERENCE_CLASS_COUNTS,
};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const DEFAULT_VAL_FRACTION: f64 = 0.2;
/// Above this max/min class ratio [`class_report`] emits a balance warning.
pub const IMBALANCE_WARNING_RATIO: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClassLabel {
    Safe,
    Unsafe,
    Unusable,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::Safe, ClassLabel::Unsafe, ClassLabel::Unusable];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Safe => "SAFE",
            ClassLabel::Unsafe => "UNSAFE",
            ClassLabel::Unusable => "UNUSABLE",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClassLabel::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown class label `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Synthetic,
    Ingested,
    Reviewed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    /// Relative to the manifest root.
    pub path: PathBuf,
    pub label: ClassLabel,
    pub origin: Origin,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ManifestHeader {
    format_version: u32,
    paths: String,
}

/// Per-class counts indexed by [`ClassLabel::index`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts(pub [usize; 3]);

impl ClassCounts {
    pub fn get(&self, label: ClassLabel) -> usize {
        self.0[label.index()]
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub format_version: u32,
    pub records: Vec<SampleRecord>,
    pub warnings: Vec<String>,
}

fn check_relative(path: &Path) -> bool {
    path.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir)) && path.components().next().is_some()
}

impl DatasetManifest {
    /// Builds a manifest after checking ids and path shapes. Files are not
    /// touched; see [`DatasetManifest::validate_files`].
    pub fn new(root: impl Into<PathBuf>, records: Vec<SampleRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            if r.id.is_empty() {
                return Err(Error::ManifestParse { line: i + 2, reason: "empty record id".into() });
            }
            if !check_relative(&r.path) {
                return Err(Error::ManifestParse {
                    line: i + 2,
                    reason: format!("record `{}` path {} is not under the manifest root", r.id, r.path.display()),
                });
            }
        }
        let mut m = DatasetManifest { root: root.into(), format_version: MANIFEST_FORMAT_VERSION, records, warnings: vec![] };
        m.warnings = m.structural_warnings();
        Ok(m)
    }

    fn structural_warnings(&self) -> Vec<String> {
        if self.records.is_empty() {
            vec!["manifest has no records".into()]
        } else {
            vec![]
        }
    }

    pub fn counts(&self) -> ClassCounts {
        let mut c = ClassCounts::default();
        for r in &self.records {
            c.0[r.label.index()] += 1;
        }
        c
    }

    pub fn resolve(&self, record: &SampleRecord) -> PathBuf {
        self.root.join(&record.path)
    }

    pub fn validate_files(&self) -> Result<()> {
        for r in &self.records {
            let p = self.resolve(r);
            if !p.is_file() {
                return Err(Error::MissingFile { id: r.id.clone(), path: p });
            }
        }
        Ok(())
    }

    /// Writes the header and one JSON record per line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        let header = ManifestHeader { format_version: self.format_version, paths: "relative-to-manifest-dir".into() };
        serde_json::to_writer(&mut out, &header)?;
        out.push(b'\n');
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.push(b'\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    /// Saves to `root/manifest.jsonl`.
    pub fn save_in_root(&self) -> Result<PathBuf> {
        let path = self.root.join(MANIFEST_FILE);
        self.save(&path)?;
        Ok(path)
    }

    fn with_records(&self, records: Vec<SampleRecord>) -> DatasetManifest {
        let mut m = DatasetManifest { records, warnings: vec![], ..self.clone() };
        m.warnings = m.structural_warnings();
        m
    }
}

/// Loads a manifest; the root is the manifest's directory. Every referenced
/// file must exist.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(f).lines();
    let header_line = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::ManifestParse { line: 1, reason: "missing header line".into() }),
    };
    let header: ManifestHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::ManifestParse { line: 1, reason: format!("bad header: {e}") })?;
    if header.format_version != MANIFEST_FORMAT_VERSION {
        return Err(Error::ManifestParse {
            line: 1,
            reason: format!(
                "manifest format version {} is not supported (expected {MANIFEST_FORMAT_VERSION})",
                header.format_version
            ),
        });
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: SampleRecord =
            serde_json::from_str(&line).map_err(|e| Error::ManifestParse { line: i + 2, reason: e.to_string() })?;
        records.push(r);
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let m = DatasetManifest::new(root, records)?;
    m.validate_files()?;
    Ok(m)
}

/// Per-class shuffle then `max(1, floor(n * val_fraction))` records of each
/// class go to validation. Classes with no records are skipped. Both parts
/// keep the manifest order.
pub fn split_stratified(m: &DatasetManifest, val_fraction: f64, seed: u64) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("validation fraction must be in (0, 1), got {val_fraction}")));
    }
    let mut to_val = vec![false; m.records.len()];
    for label in ClassLabel::ALL {
        let mut idx: Vec<usize> = (0..m.records.len()).filter(|&i| m.records[i].label == label).collect();
        match idx.len() {
            0 => continue,
            1 => {
                return Err(Error::InvalidArgument(format!(
                    "class {label} has 1 record; stratified splitting needs at least 2"
                )))
            }
            _ => {}
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(label.index() as u64);
        idx.shuffle(&mut rng);
        // the epsilon keeps e.g. 180 * (1/6) from flooring to 29
        let n_val = ((idx.len() as f64 * val_fraction + 1e-9).floor() as usize).max(1);
        for &i in &idx[..n_val] {
            to_val[i] = true;
        }
    }
    let (mut train, mut val) = (vec![], vec![]);
    for (r, v) in m.records.iter().zip(to_val) {
        if v { &mut val } else { &mut train }.push(r.clone());
    }
    Ok((m.with_records(train), m.with_records(val)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Stage {
    /// USABLE vs UNUSABLE.
    Usability,
    /// SAFE vs UNSAFE on usable images.
    Safety,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::Usability => 1,
            Stage::Safety => 2,
        }
    }

    /// Class names by output index.
    pub fn labels(self) -> [StageLabel; 2] {
        match self {
            Stage::Usability => [StageLabel::Usable, StageLabel::Unusable],
            Stage::Safety => [StageLabel::Safe, StageLabel::Unsafe],
        }
    }

    /// Binary label for a three-way class, or `None` if the class has no
    /// label at this stage.
    pub fn label_for(self, class: ClassLabel) -> Option<StageLabel> {
        match (self, class) {
            (Stage::Usability, ClassLabel::Unusable) => Some(StageLabel::Unusable),
            (Stage::Usability, _) => Some(StageLabel::Usable),
            (Stage::Safety, ClassLabel::Safe) => Some(StageLabel::Safe),
            (Stage::Safety, ClassLabel::Unsafe) => Some(StageLabel::Unsafe),
            (Stage::Safety, ClassLabel::Unusable) => None,
        }
    }
}

impl TryFrom<u8> for Stage {
    type Error = Error;

    fn try_from(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Stage::Usability),
            2 => Ok(Stage::Safety),
            _ => Err(Error::InvalidArgument(format!("stage must be 1 or 2, got {n}"))),
        }
    }
}

impl From<Stage> for u8 {
    fn from(s: Stage) -> u8 {
        s.number()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StageLabel {
    Usable,
    Unusable,
    Safe,
    Unsafe,
}

impl StageLabel {
    pub fn stage(self) -> Stage {
        match self {
            StageLabel::Usable | StageLabel::Unusable => Stage::Usability,
            StageLabel::Safe | StageLabel::Unsafe => Stage::Safety,
        }
    }

    /// Output index of this label in its stage's network.
    pub fn index(self) -> usize {
        match self {
            StageLabel::Usable | StageLabel::Safe => 0,
            StageLabel::Unusable | StageLabel::Unsafe => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StageLabel::Usable => "USABLE",
            StageLabel::Unusable => "UNUSABLE",
            StageLabel::Safe => "SAFE",
            StageLabel::Unsafe => "UNSAFE",
        }
    }
}

impl fmt::Display for StageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageRecord {
    pub record: SampleRecord,
    pub label: StageLabel,
}

/// Binary-labeled view of a manifest for one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageView {
    pub stage: Stage,
    pub root: PathBuf,
    pub records: Vec<StageRecord>,
    pub warnings: Vec<String>,
}

impl StageView {
    pub fn counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for r in &self.records {
            c[r.label.index()] += 1;
        }
        c
    }
}

pub fn relabel_for_stage(m: &DatasetManifest, stage: Stage) -> StageView {
    let records: Vec<StageRecord> = m
        .records
        .iter()
        .filter_map(|r| stage.label_for(r.label).map(|label| StageRecord { record: r.clone(), label }))
        .collect();
    let mut warnings = vec![];
    if records.is_empty() {
        warnings.push(format!("stage {} view is empty", stage.number()));
    }
    StageView { stage, root: m.root.clone(), records, warnings }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassReport {
    pub counts: ClassCounts,
    /// Largest over smallest class count; infinite if any class is empty.
    pub imbalance_ratio: f64,
    pub warning: Option<String>,
}

pub fn class_report(m: &DatasetManifest) -> ClassReport {
    let counts = m.counts();
    let max = *counts.0.iter().max().unwrap();
    let min = *counts.0.iter().min().unwrap();
    let ratio = if min == 0 { f64::INFINITY } else { max as f64 / min as f64 };
    let warning = if min == 0 {
        let empty: Vec<&str> = ClassLabel::ALL.iter().filter(|l| counts.get(**l) == 0).map(|l| l.as_str()).collect();
        Some(format!("classes without records: {}", empty.join(", ")))
    } else if ratio > IMBALANCE_WARNING_RATIO {
        Some(format!("class imbalance ratio {ratio:.3} exceeds {IMBALANCE_WARNING_RATIO}"))
    } else {
        None
    };
    ClassReport { counts, imbalance_ratio: ratio, warning }
}
