//! Ingestion of BUSI-layout image folders, patch tiling and stratified splits.
//!
//! A BUSI tree looks like
//!
//! ```text
//! <root>/benign/benign (1).png
//! <root>/benign/benign (1)_mask.png
//! <root>/benign/benign (1)_mask_1.png
//! <root>/normal/normal (1).png
//! ```
//!
//! Sample ids are the image file stems (`benign (1)`).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageGrid, ValueRange};
use crate::mask::Mask;

pub const DEFAULT_PATCH_SIZE: usize = 450;
pub const DEFAULT_STRIDE: usize = 225;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Benign,
    Malignant,
    Normal,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::Benign, ClassLabel::Malignant, ClassLabel::Normal];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Benign => "benign",
            ClassLabel::Malignant => "malignant",
            ClassLabel::Normal => "normal",
        }
    }

    /// Class implied by a BUSI id such as `malignant (3)`.
    pub fn from_id(id: &str) -> Option<ClassLabel> {
        let prefix = id.split_whitespace().next()?;
        prefix.parse().ok()
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
        match s {
            "benign" => Ok(ClassLabel::Benign),
            "malignant" => Ok(ClassLabel::Malignant),
            "normal" => Ok(ClassLabel::Normal),
            other => Err(Error::param(format!("unknown class label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSelection {
    /// Pixelwise union of every tracing.
    #[default]
    Union,
    /// A single tracing by index (for ablations).
    Tracing(usize),
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: ImageGrid,
    /// `masks[0]` is the union of all tracings; when more than one tracing was
    /// supplied the originals follow in file order.
    pub masks: Vec<Mask>,
    pub class_label: ClassLabel,
}

impl Sample {
    pub fn tracing_count(&self) -> usize {
        match self.masks.len() {
            0 => 0,
            1 => 1,
            n => n - 1,
        }
    }

    pub fn reference_mask(&self, selection: MaskSelection) -> Option<&Mask> {
        match selection {
            MaskSelection::Union => self.masks.first(),
            MaskSelection::Tracing(i) if self.masks.len() == 1 && i == 0 => self.masks.first(),
            MaskSelection::Tracing(i) if self.masks.len() > 1 => self.masks.get(i + 1),
            MaskSelection::Tracing(_) => None,
        }
    }
}

/// Reads one image and its tracings. Several tracings are merged by union.
pub fn load_sample(image_path: &Path, mask_paths: &[PathBuf], class_label: ClassLabel) -> Result<Sample> {
    let image = ImageGrid::load_png(image_path)?;
    let id = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut tracings = Vec::with_capacity(mask_paths.len());
    for path in mask_paths {
        let mask = Mask::load_png(path)?;
        if mask.shape() != image.shape() {
            return Err(Error::Shape(format!(
                "mask {} is {}x{} but image {} is {}x{}",
                path.display(),
                mask.height(),
                mask.width(),
                image_path.display(),
                image.height(),
                image.width()
            )));
        }
        tracings.push(mask);
    }
    Ok(Sample {
        id,
        image,
        masks: merge_tracings(tracings)?,
        class_label,
    })
}

pub(crate) fn merge_tracings(tracings: Vec<Mask>) -> Result<Vec<Mask>> {
    if tracings.len() <= 1 {
        return Ok(tracings);
    }
    let mut merged = tracings[0].clone();
    for t in &tracings[1..] {
        merged = merged.union(t)?;
    }
    let mut masks = Vec::with_capacity(tracings.len() + 1);
    masks.push(merged);
    masks.extend(tracings);
    Ok(masks)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusiEntry {
    pub id: String,
    pub class_label: ClassLabel,
    pub image_path: PathBuf,
    pub mask_paths: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct BusiScan {
    pub entries: Vec<BusiEntry>,
    /// Files that do not fit the layout (orphan masks, foreign names).
    pub offending: Vec<PathBuf>,
    /// Non-fatal observations, e.g. a lesion class image without any mask.
    pub warnings: Vec<String>,
}

/// Walks `<root>/{benign,malignant,normal}` and pairs images with their masks.
/// Entries are sorted by id.
pub fn scan_busi(root: &Path) -> Result<BusiScan> {
    let mut scan = BusiScan::default();
    let mut found_class_dir = false;
    for class in ClassLabel::ALL {
        let dir = root.join(class.as_str());
        if !dir.is_dir() {
            continue;
        }
        found_class_dir = true;
        let mut images: BTreeMap<String, PathBuf> = BTreeMap::new();
        let mut masks: BTreeMap<String, Vec<(usize, PathBuf)>> = BTreeMap::new();
        let read = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for item in read {
            let path = item.map_err(|e| Error::io(&dir, e))?.path();
            if !path.is_file() {
                continue;
            }
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let Some(stem) = name.strip_suffix(".png") else {
                scan.offending.push(path);
                continue;
            };
            if !stem.starts_with(class.as_str()) {
                scan.offending.push(path);
                continue;
            }
            match stem.find("_mask") {
                Some(pos) => {
                    let (id, suffix) = stem.split_at(pos);
                    let index = match &suffix["_mask".len()..] {
                        "" => 0,
                        rest => match rest.strip_prefix('_').and_then(|n| n.parse::<usize>().ok()) {
                            Some(n) => n,
                            None => {
                                scan.offending.push(path);
                                continue;
                            }
                        },
                    };
                    masks.entry(id.to_string()).or_default().push((index, path));
                }
                None => {
                    images.insert(stem.to_string(), path);
                }
            }
        }
        for (id, list) in &masks {
            if !images.contains_key(id) {
                scan.offending.extend(list.iter().map(|(_, p)| p.clone()));
            }
        }
        for (id, image_path) in images {
            let mut list = masks.remove(&id).unwrap_or_default();
            list.sort();
            if list.is_empty() && class != ClassLabel::Normal {
                scan.warnings
                    .push(format!("{id}: no mask found, kept with an empty mask list"));
            }
            scan.entries.push(BusiEntry {
                id,
                class_label: class,
                image_path,
                mask_paths: list.into_iter().map(|(_, p)| p).collect(),
            });
        }
    }
    if !found_class_dir {
        return Err(Error::param(format!(
            "{} has none of the benign/malignant/normal class folders",
            root.display()
        )));
    }
    scan.entries.sort_by(|a, b| a.id.cmp(&b.id));
    scan.offending.sort();
    Ok(scan)
}

pub fn load_busi_entry(entry: &BusiEntry) -> Result<Sample> {
    let mut sample = load_sample(&entry.image_path, &entry.mask_paths, entry.class_label)?;
    sample.id = entry.id.clone();
    Ok(sample)
}

#[derive(Debug, Clone)]
pub struct Patch {
    pub image: ImageGrid,
    /// `(row, col)` of the top-left pixel in the (padded) parent.
    pub origin: (usize, usize),
    pub parent: String,
}

#[derive(Debug, Clone)]
pub struct PatchSet {
    pub patch_size: usize,
    pub stride: usize,
    /// Parent shape before padding.
    pub source_shape: (usize, usize),
    /// Parent shape after reflect padding (at least `patch_size` per axis).
    pub padded_shape: (usize, usize),
    pub patches: Vec<Patch>,
}

/// Start offsets of tiles along one axis of length `len`: multiples of
/// `stride`, with the last tile moved back so it ends flush with the border.
pub fn tile_origins(len: usize, patch_size: usize, stride: usize) -> Vec<usize> {
    let len = len.max(patch_size);
    let last = len - patch_size;
    let mut out: Vec<usize> = (0..).map(|k| k * stride).take_while(|&o| o < last).collect();
    out.push(last);
    out
}

/// Tiles `image` into overlapping square patches. Images smaller than
/// `patch_size` along an axis are reflect-padded first.
pub fn crop_patches(image: &ImageGrid, parent: &str, patch_size: usize, stride: usize) -> Result<PatchSet> {
    if patch_size == 0 || stride == 0 {
        return Err(Error::param(format!(
            "patch_size and stride must be positive (got {patch_size}, {stride})"
        )));
    }
    let padded = image.reflect_pad_to(patch_size, patch_size);
    let rows = tile_origins(padded.height(), patch_size, stride);
    let cols = tile_origins(padded.width(), patch_size, stride);
    let mut patches = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            patches.push(Patch {
                image: padded.crop(r, c, patch_size, patch_size)?,
                origin: (r, c),
                parent: parent.to_string(),
            });
        }
    }
    Ok(PatchSet {
        patch_size,
        stride,
        source_shape: image.shape(),
        padded_shape: padded.shape(),
        patches,
    })
}

/// Affine map from storage range `[0,1]` to model range `[-1,1]`.
pub fn to_model_range(image: &ImageGrid) -> Result<ImageGrid> {
    if image.range() != ValueRange::Unit {
        return Err(Error::param("to_model_range expects a unit-range image"));
    }
    image.map(ValueRange::Symmetric, |v| 2.0 * v - 1.0)
}

pub fn from_model_range(image: &ImageGrid) -> Result<ImageGrid> {
    if image.range() != ValueRange::Symmetric {
        return Err(Error::param("from_model_range expects a symmetric-range image"));
    }
    image.map(ValueRange::Unit, |v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.80,
            validation: 0.05,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
            return Err(Error::param(format!("split ratios must lie in [0,1]: {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!("split ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Per-class `(train, validation, test)` counts. Validation and test are
    /// rounded (half away from zero); test keeps at least one sample when its
    /// ratio is positive; the remainder goes to train.
    pub fn class_counts(&self, n: usize) -> (usize, usize, usize) {
        let mut test = (self.test * n as f64).round() as usize;
        if self.test > 0.0 {
            test = test.max(1);
        }
        let mut val = (self.validation * n as f64).round() as usize;
        test = test.min(n.saturating_sub(1));
        val = val.min(n.saturating_sub(1 + test));
        (n - test - val, val, test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "validation" => Ok(SplitName::Validation),
            "test" => Ok(SplitName::Test),
            other => Err(Error::param(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub ratios: SplitRatios,
}

impl DatasetSplit {
    pub fn split_of(&self, id: &str) -> Option<SplitName> {
        let has = |v: &Vec<String>| v.binary_search_by(|x| x.as_str().cmp(id)).is_ok();
        if has(&self.train) {
            Some(SplitName::Train)
        } else if has(&self.validation) {
            Some(SplitName::Validation)
        } else if has(&self.test) {
            Some(SplitName::Test)
        } else {
            None
        }
    }

    pub fn ids(&self, split: SplitName) -> &[String] {
        match split {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }

    /// `id<TAB>split` lines sorted by id.
    pub fn to_manifest(&self) -> String {
        let mut rows: Vec<(&str, SplitName)> = self
            .train
            .iter()
            .map(|id| (id.as_str(), SplitName::Train))
            .chain(self.validation.iter().map(|id| (id.as_str(), SplitName::Validation)))
            .chain(self.test.iter().map(|id| (id.as_str(), SplitName::Test)))
            .collect();
        rows.sort();
        rows.iter().map(|(id, s)| format!("{id}\t{}\n", s.as_str())).collect()
    }

    /// Parses a manifest. Seed and ratios are not part of the file and are
    /// left at their defaults.
    pub fn from_manifest(text: &str) -> Result<Self> {
        let mut split = DatasetSplit {
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
            seed: 0,
            ratios: SplitRatios::default(),
        };
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let (id, name) = line
                .split_once('\t')
                .ok_or_else(|| Error::param(format!("manifest line {}: expected `id<TAB>split`", n + 1)))?;
            match name.parse()? {
                SplitName::Train => split.train.push(id.to_string()),
                SplitName::Validation => split.validation.push(id.to_string()),
                SplitName::Test => split.test.push(id.to_string()),
            }
        }
        split.train.sort();
        split.validation.sort();
        split.test.sort();
        Ok(split)
    }
}

/// Splits parent ids into train/validation/test keeping class proportions.
/// Deterministic for a fixed seed and independent of input order.
pub fn stratified_split(samples: &[(String, ClassLabel)], ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    ratios.validate()?;
    let mut by_class: BTreeMap<ClassLabel, Vec<&str>> = BTreeMap::new();
    for (id, class) in samples {
        by_class.entry(*class).or_default().push(id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        seed,
        ratios,
    };
    for (class, mut ids) in by_class {
        if ids.len() < 3 {
            return Err(Error::param(format!(
                "class {class} has {} samples, at least 3 are required",
                ids.len()
            )));
        }
        ids.sort_unstable();
        ids.dedup();
        ids.shuffle(&mut rng);
        let (_, n_val, n_test) = ratios.class_counts(ids.len());
        split.test.extend(ids[..n_test].iter().map(|s| s.to_string()));
        split
            .validation
            .extend(ids[n_test..n_test + n_val].iter().map(|s| s.to_string()));
        split.train.extend(ids[n_test + n_val..].iter().map(|s| s.to_string()));
    }
    split.train.sort();
    split.validation.sort();
    split.test.sort();
    Ok(split)
}
