//! One function per CLI stage. Each reads its inputs from the dataset roots
//! or the run directory and writes its artifacts through [`write_artifact`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use echoanat_core::cyclegan::checkpoint::encode_checkpoint;
use echoanat_core::cyclegan::train::write_loss_csv;
use echoanat_core::cyclegan::{load_checkpoint, translate, LossRecord, TrainState};
use echoanat_core::datasets::{
    crop_patches, load_busi_entry, scan_busi, stratified_split, tile_origins, to_model_range, BusiEntry,
    ClassLabel, DatasetSplit, SplitName,
};
use echoanat_core::metrics::{
    distribution_svg, records_from_csv, records_to_csv, summarize, GroupSummary, LesionMetrics, ReferenceKind,
    StdKind,
};
use echoanat_core::nn::Tensor;
use echoanat_core::segmentation::{morphgac_run, seed_from_mask, GacInput, GacRun, InitSpec};
use echoanat_core::synthdata::{class_counts_for_total, generate_with_counts};
use echoanat_core::{Error as CoreError, ImageGrid, Mask};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{PipelineError, Result};
use crate::run::{write_artifact, RunDir};

pub fn run_dir(cfg: &RunConfig) -> RunDir {
    RunDir::new(&cfg.run.dir)
}

/// Scans a BUSI tree, failing with the list of files that do not fit.
pub fn scan_dataset(root: &Path) -> Result<Vec<BusiEntry>> {
    RunConfig::require_dir(root, "dataset root")?;
    let scan = scan_busi(root)?;
    if !scan.offending.is_empty() {
        let listing = scan
            .offending
            .iter()
            .map(|p| format!("  {}", p.display()))
            .collect::<Vec<_>>()
            .join("\n");
        return Err(PipelineError::Layout {
            root: root.to_path_buf(),
            listing,
        });
    }
    for w in &scan.warnings {
        log::warn!("{w}");
    }
    Ok(scan.entries)
}

fn read_manifest(run: &RunDir) -> Result<DatasetSplit> {
    let path = run.manifest();
    let text = std::fs::read_to_string(&path)
        .map_err(|_| PipelineError::Missing(format!("{} not found; run `prepare` first", path.display())))?;
    Ok(DatasetSplit::from_manifest(&text)?)
}

fn entries_in_split(cfg: &RunConfig, split: SplitName) -> Result<Vec<BusiEntry>> {
    let manifest = read_manifest(&run_dir(cfg))?;
    let entries = scan_dataset(&cfg.dataset.root)?;
    Ok(entries
        .into_iter()
        .filter(|e| manifest.split_of(&e.id) == Some(split))
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct PrepareSummary {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub patches: usize,
}

/// Writes the stratified split manifest and the patch index.
pub fn prepare(cfg: &RunConfig, force: bool) -> Result<PrepareSummary> {
    let entries = scan_dataset(&cfg.dataset.root)?;
    let labelled: Vec<(String, ClassLabel)> = entries.iter().map(|e| (e.id.clone(), e.class_label)).collect();
    let split = stratified_split(&labelled, cfg.split.ratios(), cfg.split.seed)?;
    let run = run_dir(cfg);
    write_artifact(&run.manifest(), split.to_manifest().as_bytes(), force)?;

    let geometry = cfg.tiling();
    let mut index = String::from("parent\tsplit\trow\tcol\tsize\n");
    let mut patches = 0;
    for e in &entries {
        let (h, w) = ImageGrid::load_png(&e.image_path)?.shape();
        let split_name = split.split_of(&e.id).map(SplitName::as_str).unwrap_or("none");
        for r in tile_origins(h, geometry.patch_size, geometry.stride) {
            for c in tile_origins(w, geometry.patch_size, geometry.stride) {
                let _ = writeln!(index, "{}\t{split_name}\t{r}\t{c}\t{}", e.id, geometry.patch_size);
                patches += 1;
            }
        }
    }
    write_artifact(&run.patch_index(), index.as_bytes(), force)?;
    Ok(PrepareSummary {
        train: split.train.len(),
        validation: split.validation.len(),
        test: split.test.len(),
        patches,
    })
}

/// Renders both synthetic domains into BUSI trees at the dataset roots.
pub fn synth(cfg: &RunConfig, force: bool) -> Result<usize> {
    let data = generate_with_counts(class_counts_for_total(cfg.synth.count), &cfg.synth.phantom, cfg.synth.seed)?;
    let mut written = 0;
    for (root, samples) in [(&cfg.dataset.root, &data.us), (&cfg.dataset.anatomy_root, &data.anatomy)] {
        for s in samples {
            let dir = root.join(s.class_label.as_str());
            write_artifact(&dir.join(format!("{}.png", s.id)), &s.image.encode_png()?, force)?;
            if let Some(mask) = s.masks.first() {
                write_artifact(&dir.join(format!("{}_mask.png", s.id)), &mask.encode_png()?, force)?;
            }
            written += 1;
        }
    }
    Ok(written)
}

/// Network-resolution model-range tensors from every patch of `image`.
pub fn training_tensors(image: &ImageGrid, cfg: &RunConfig) -> Result<Vec<Tensor>> {
    let arch = cfg.arch();
    let geometry = cfg.tiling();
    let image = match (image.channels(), arch.generator.channels) {
        (1, 3) => image.to_rgb(),
        (3, 1) => image.luminance(),
        _ => image.clone(),
    };
    let set = crop_patches(&image, "", geometry.patch_size, geometry.stride)?;
    set.patches
        .iter()
        .map(|p| {
            let small = if geometry.patch_size == arch.resolution {
                p.image.clone()
            } else {
                p.image.resize(arch.resolution, arch.resolution)?
            };
            Ok(Tensor::from_image(&to_model_range(&small)?))
        })
        .collect()
}

/// Image files of a domain: a BUSI tree if it has class folders, otherwise
/// every non-mask PNG in the directory. Sorted by path.
pub fn domain_images(root: &Path) -> Result<Vec<PathBuf>> {
    RunConfig::require_dir(root, "image directory")?;
    if ClassLabel::ALL.iter().any(|c| root.join(c.as_str()).is_dir()) {
        return Ok(scan_dataset(root)?.into_iter().map(|e| e.image_path).collect());
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| PipelineError::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "png")
                && !p.file_stem().is_some_and(|s| s.to_string_lossy().contains("_mask"))
        })
        .collect();
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub epochs_run: u64,
    pub epoch: u64,
    pub step: u64,
    pub us_patches: usize,
    pub pa_patches: usize,
    pub last: Option<LossRecord>,
}

#[derive(Serialize)]
struct FailureReport<'a> {
    epoch: u64,
    step: u64,
    error: &'a str,
}

/// Trains (or resumes) the translation model up to `training.epochs`.
/// `--force` discards previous training output.
pub fn train(cfg: &RunConfig, force: bool) -> Result<TrainSummary> {
    let run = run_dir(cfg);
    if force && run.train_dir().exists() {
        std::fs::remove_dir_all(run.train_dir()).map_err(|e| PipelineError::io(run.train_dir(), e))?;
    }
    // echo the config; only the epoch budget may change between resumes
    if let Ok(old) = std::fs::read_to_string(run.config_echo()) {
        let mut previous = RunConfig::from_toml(&old, Path::new("/"), &run.config_echo())?;
        previous.training.epochs = cfg.training.epochs;
        if previous != *cfg {
            return Err(PipelineError::Invalid(format!(
                "configuration differs from {}; pass --force to restart training",
                run.config_echo().display()
            )));
        }
    }
    std::fs::create_dir_all(run.train_dir()).map_err(|e| PipelineError::io(run.train_dir(), e))?;
    std::fs::write(run.config_echo(), cfg.to_toml()).map_err(|e| PipelineError::io(run.config_echo(), e))?;

    let mut us = Vec::new();
    for e in entries_in_split(cfg, SplitName::Train)? {
        us.extend(training_tensors(&ImageGrid::load_png(&e.image_path)?, cfg)?);
    }
    let mut pa = Vec::new();
    for p in domain_images(&cfg.dataset.anatomy_root)? {
        pa.extend(training_tensors(&ImageGrid::load_png(&p)?, cfg)?);
    }

    let mut state = if run.latest_checkpoint().exists() {
        let s = load_checkpoint(&run.latest_checkpoint())?;
        log::info!("resuming from epoch {} step {}", s.epoch, s.step);
        s
    } else {
        TrainState::new(cfg.arch(), cfg.train_config(), cfg.training.seed)?
    };
    let start = state.epoch;
    while state.epoch < cfg.training.epochs {
        if let Err(err) = state.train_epoch(&us, &pa) {
            if matches!(err, CoreError::NonFiniteLoss { .. }) {
                let report = FailureReport {
                    epoch: state.epoch,
                    step: state.step,
                    error: &err.to_string(),
                };
                let json = serde_json::to_string_pretty(&report).expect("serialisable");
                std::fs::write(run.failure_report(), json).map_err(|e| PipelineError::io(run.failure_report(), e))?;
            }
            return Err(err.into());
        }
        let bytes = encode_checkpoint(&state)?;
        if state.epoch % cfg.training.checkpoint_every == 0 {
            write_artifact(&run.epoch_checkpoint(state.epoch), &bytes, true)?;
        }
        write_artifact(&run.latest_checkpoint(), &bytes, true)?;
        let mut csv = Vec::new();
        write_loss_csv(state.history(), &mut csv).map_err(|e| PipelineError::io(run.loss_csv(), e))?;
        write_artifact(&run.loss_csv(), &csv, true)?;
        if let Some(r) = state.history().last() {
            log::info!(
                "epoch {} step {}: D_PA {:.3} D_US {:.3} G {:.3} cycle {:.3} opposite {:.3}",
                state.epoch,
                r.step,
                r.adv_d_pa,
                r.adv_d_us,
                r.adv_g,
                r.cycle,
                r.opposite
            );
        }
    }
    Ok(TrainSummary {
        epochs_run: state.epoch - start,
        epoch: state.epoch,
        step: state.step,
        us_patches: us.len(),
        pa_patches: pa.len(),
        last: state.history().last().copied(),
    })
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TranslateSummary {
    pub written: Vec<PathBuf>,
    pub failed: Vec<(PathBuf, String)>,
}

/// Expands directories into their sorted PNG files, keeping the order of
/// explicitly listed files.
fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            out.extend(domain_images(p)?);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// Translates each input to `<stem>_pa.png`. Unreadable inputs are skipped
/// and reported in [`TranslateSummary::failed`].
pub fn translate_images(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    inputs: &[PathBuf],
    out_dir: Option<&Path>,
    force: bool,
) -> Result<TranslateSummary> {
    let run = run_dir(cfg);
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| run.latest_checkpoint());
    if !ckpt.exists() {
        return Err(PipelineError::Missing(format!("checkpoint {} not found; run `train` first", ckpt.display())));
    }
    let state = load_checkpoint(&ckpt)?;
    let inputs = if inputs.is_empty() {
        entries_in_split(cfg, SplitName::Test)?.into_iter().map(|e| e.image_path).collect()
    } else {
        expand_inputs(inputs)?
    };
    let out_dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| run.translate_dir());
    let geometry = cfg.tiling();
    let mut summary = TranslateSummary::default();
    for input in inputs {
        let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let result = ImageGrid::load_png(&input)
            .and_then(|img| translate(&state.bundle, state.step, &img, geometry))
            .and_then(|pa| pa.encode_png());
        match result {
            Ok(bytes) => {
                let target = out_dir.join(format!("{stem}_pa.png"));
                write_artifact(&target, &bytes, force)?;
                summary.written.push(target);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", input.display());
                summary.failed.push((input, e.to_string()));
            }
        }
    }
    Ok(summary)
}

/// Active-contour segmentation of one image from a seed.
pub fn segment_image(image: &ImageGrid, init: &InitSpec, cfg: &RunConfig) -> Result<GacRun> {
    Ok(morphgac_run(GacInput::Image(image), init, &cfg.segmentation, 0)?)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SegmentSummary {
    pub segmented: usize,
    /// Test images without a reference lesion to seed from.
    pub skipped: Vec<String>,
}

/// Segments every test-split lesion twice, on its translation and on the
/// source image, seeding from the reference mask.
pub fn segment(cfg: &RunConfig, force: bool) -> Result<SegmentSummary> {
    let run = run_dir(cfg);
    let mut summary = SegmentSummary::default();
    for entry in entries_in_split(cfg, SplitName::Test)? {
        let sample = load_busi_entry(&entry)?;
        let reference = match sample.reference_mask(cfg.dataset.mask_selection) {
            Some(m) if !m.is_empty() => m,
            _ => {
                summary.skipped.push(entry.id.clone());
                continue;
            }
        };
        let translated_path = run.translated(&entry.id);
        if !translated_path.exists() {
            return Err(PipelineError::Missing(format!(
                "{} not found; run `translate` first",
                translated_path.display()
            )));
        }
        let seed = seed_from_mask(reference)?;
        let pa = segment_image(&ImageGrid::load_png(&translated_path)?, &seed, cfg)?;
        write_artifact(&run.pa_masks().join(format!("{}.png", entry.id)), &pa.mask.encode_png()?, force)?;
        let us = segment_image(&sample.image, &seed, cfg)?;
        write_artifact(&run.us_masks().join(format!("{}.png", entry.id)), &us.mask.encode_png()?, force)?;
        summary.segmented += 1;
    }
    Ok(summary)
}

/// `<id>.png` masks in a directory, keyed by id; `_mask` suffixes are
/// stripped so BUSI-style reference folders work too.
pub fn masks_in(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    RunConfig::require_dir(dir, "mask directory")?;
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for item in std::fs::read_dir(&d).map_err(|e| PipelineError::io(&d, e))? {
            let path = item.map_err(|e| PipelineError::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            if path.extension().is_none_or(|x| x != "png") {
                continue;
            }
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let id = stem.strip_suffix("_mask").unwrap_or(&stem).to_string();
            out.insert(id, path);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct EvaluateSources {
    /// Segmentations to score (defaults to the run's translated-image masks).
    pub masks: Option<PathBuf>,
    /// Hand-traced references (defaults to the dataset's masks).
    pub manual: Option<PathBuf>,
    /// Re-segmented references (defaults to the run's source-image masks).
    pub reseg: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub records: Vec<LesionMetrics>,
    pub summary: GroupSummary,
    pub unmatched: Vec<String>,
}

/// Scores segmentations against both reference kinds.
pub fn evaluate(cfg: &RunConfig, sources: &EvaluateSources, force: bool) -> Result<Evaluation> {
    let run = run_dir(cfg);
    let segmented = masks_in(sources.masks.as_deref().unwrap_or(&run.pa_masks()))?;
    let mut classes: BTreeMap<String, ClassLabel> = BTreeMap::new();
    let mut manual: BTreeMap<String, Mask> = BTreeMap::new();
    match &sources.manual {
        Some(dir) => {
            for (id, p) in masks_in(dir)? {
                manual.insert(id, Mask::load_png(&p)?);
            }
        }
        None => {
            for e in scan_dataset(&cfg.dataset.root)? {
                if !segmented.contains_key(&e.id) {
                    continue;
                }
                classes.insert(e.id.clone(), e.class_label);
                let sample = load_busi_entry(&e)?;
                if let Some(m) = sample.reference_mask(cfg.dataset.mask_selection) {
                    manual.insert(e.id, m.clone());
                }
            }
        }
    }
    let reseg_dir = sources.reseg.clone().unwrap_or_else(|| run.us_masks());
    let reseg = if reseg_dir.is_dir() { masks_in(&reseg_dir)? } else { BTreeMap::new() };

    let mut records = Vec::new();
    let mut unmatched = Vec::new();
    for (id, path) in &segmented {
        let class = match classes.get(id).copied().or_else(|| ClassLabel::from_id(id)) {
            Some(c) => c,
            None => {
                unmatched.push(id.clone());
                continue;
            }
        };
        let mask = Mask::load_png(path)?;
        let mut matched = false;
        if let Some(reference) = manual.get(id) {
            records.push(LesionMetrics::compute(
                id,
                class,
                ReferenceKind::Manual,
                &mask,
                reference,
                cfg.report.largest_component,
            )?);
            matched = true;
        }
        if let Some(p) = reseg.get(id) {
            records.push(LesionMetrics::compute(
                id,
                class,
                ReferenceKind::Reseg,
                &mask,
                &Mask::load_png(p)?,
                cfg.report.largest_component,
            )?);
            matched = true;
        }
        if !matched {
            unmatched.push(id.clone());
        }
    }
    if !unmatched.is_empty() {
        log::warn!("no reference for: {}", unmatched.join(", "));
    }
    for r in records.iter().filter(|r| r.degenerate) {
        log::warn!("{} ({}): empty mask, center error undefined", r.id, r.reference_kind.as_str());
    }
    if records.is_empty() {
        return Err(CoreError::Parameter("no segmentation has a matching reference mask".into()).into());
    }
    let summary = summarize(&records, cfg.report.std)?;
    write_artifact(&run.metrics_csv(), records_to_csv(&records).as_bytes(), force)?;
    let json = serde_json::to_string_pretty(&summary).expect("serialisable");
    write_artifact(&run.summary_json(), json.as_bytes(), force)?;
    Ok(Evaluation {
        records,
        summary,
        unmatched,
    })
}

/// Smallest and largest discriminator loss over the last `fraction` of the
/// history.
pub fn discriminator_window(history: &[LossRecord], fraction: f64) -> Option<(f64, f64)> {
    if history.is_empty() {
        return None;
    }
    let n = ((history.len() as f64 * fraction).ceil() as usize).clamp(1, history.len());
    let tail = &history[history.len() - n..];
    let lo = tail.iter().map(|r| r.adv_d_pa.min(r.adv_d_us)).fold(f64::INFINITY, f64::min);
    let hi = tail.iter().map(|r| r.adv_d_pa.max(r.adv_d_us)).fold(f64::NEG_INFINITY, f64::max);
    Some((lo, hi))
}

/// Markdown report with the summary table, plus the distribution plot.
pub fn report(cfg: &RunConfig, force: bool) -> Result<PathBuf> {
    let run = run_dir(cfg);
    let text = std::fs::read_to_string(run.metrics_csv())
        .map_err(|_| PipelineError::Missing(format!("{} not found; run `evaluate` first", run.metrics_csv().display())))?;
    let records = records_from_csv(&text)?;
    let summary = summarize(&records, cfg.report.std)?;
    let mut md = String::from("# Segmentation agreement\n\n");
    md.push_str(&summary.to_markdown());
    let lesions = records.iter().filter(|r| r.reference_kind == ReferenceKind::Manual).count();
    let std = match cfg.report.std {
        StdKind::Population => "population (divide by n)",
        StdKind::Sample => "sample (divide by n - 1)",
    };
    let _ = writeln!(md, "\n{lesions} lesion(s) scored; standard deviations are {std}.");
    if let Ok(loss_text) = std::fs::read_to_string(run.loss_csv()) {
        let history = echoanat_core::cyclegan::train::read_loss_csv(&loss_text)?;
        if let (Some(last), Some((lo, hi))) = (history.last(), discriminator_window(&history, 0.1)) {
            let _ = write!(
                md,
                "\n## Training\n\n{} steps. Final losses: D_PA {:.4}, D_US {:.4}, G {:.4}, cycle {:.4}, opposite {:.4}.\n\
                 Discriminator losses over the last 10% of steps range from {lo:.4} to {hi:.4}.\n",
                last.step, last.adv_d_pa, last.adv_d_us, last.adv_g, last.cycle, last.opposite
            );
        }
    }
    md.push_str("\n![distribution](distribution.svg)\n");
    write_artifact(&run.report_md(), md.as_bytes(), force)?;
    write_artifact(&run.report_svg(), distribution_svg(&records).as_bytes(), force)?;
    Ok(run.report_md())
}
