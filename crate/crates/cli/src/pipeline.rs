//! detect → stitch → classify → fuse → evaluate.

use std::path::PathBuf;

use anyhow::{anyhow, bail, ensure, Context, Result};
use b2n_core::chipper::{concentric_crop, extract_chip, lift, plan_grid};
use b2n_core::fusion::apply_fusion;
use b2n_core::io::{from_json_str, read_json, ClassifierScoresFile, DetectionFile};
use b2n_core::{Detection, ImageBuffer, ScoreKey};
use serde::Deserialize;

use crate::commands::{
    build_report, open_image, read_annotations, read_detections, read_grid, read_model, read_transform, lift_all,
    stitch_detections, write_detections, write_report,
};
use crate::external::{exec_command, run_exec};
use crate::{PipelineArgs, StageError, StageExt};

#[derive(Debug, Clone, PartialEq)]
pub enum DetectionSource {
    Files(Vec<PathBuf>),
    Exec(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierSource {
    /// `s_c` already present on the detections.
    Embedded,
    /// Scores aligned with the stitched detections.
    File(PathBuf),
    Exec(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub detections: DetectionSource,
    pub grid: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub geo: Option<PathBuf>,
    pub chip_size: u32,
    pub overlap: f64,
    pub classifier: ClassifierSource,
    pub crop: u32,
    pub model: Option<PathBuf>,
    pub gt: PathBuf,
    pub iou: f64,
    pub nms_iou: f64,
    pub report: PathBuf,
    pub csv: Option<PathBuf>,
    pub detections_out: Option<PathBuf>,
}

impl TryFrom<PipelineArgs> for PipelineConfig {
    type Error = anyhow::Error;

    fn try_from(a: PipelineArgs) -> Result<Self> {
        let detections = match (&a.detector, a.detections.is_empty()) {
            (Some(spec), true) => {
                let cmd = exec_command(spec).ok_or_else(|| anyhow!("--detector must be exec:<command>"))?;
                DetectionSource::Exec(cmd.to_string())
            }
            (None, false) => DetectionSource::Files(a.detections.clone()),
            _ => bail!("give either --detections or --detector"),
        };
        let classifier = match a.classifier.as_str() {
            "embedded" => ClassifierSource::Embedded,
            s => match exec_command(s) {
                Some(cmd) => ClassifierSource::Exec(cmd.to_string()),
                None if s.starts_with("exec:") => bail!("empty classifier command"),
                None => ClassifierSource::File(PathBuf::from(s)),
            },
        };
        let needs_image = matches!(detections, DetectionSource::Exec(_)) || matches!(classifier, ClassifierSource::Exec(_));
        ensure!(!needs_image || a.image.is_some(), "external detector and classifier commands need --image");
        ensure!(a.iou > 0.0 && a.iou <= 1.0, "--iou must be in (0, 1], got {}", a.iou);
        ensure!(a.nms_iou > 0.0 && a.nms_iou <= 1.0, "--nms-iou must be in (0, 1], got {}", a.nms_iou);
        ensure!(a.crop > 0, "--crop must be positive");
        Ok(Self {
            detections,
            grid: a.grid,
            image: a.image,
            geo: a.geo,
            chip_size: a.chip_size,
            overlap: a.overlap,
            classifier,
            crop: a.crop,
            model: a.model,
            gt: a.gt,
            iou: a.iou,
            nms_iou: a.nms_iou,
            report: a.report,
            csv: a.csv,
            detections_out: a.detections_out,
        })
    }
}

fn png_bytes(img: &ImageBuffer) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    img.write_png(&mut out)?;
    Ok(out)
}

fn detect(cfg: &PipelineConfig, image: Option<&ImageBuffer>) -> Result<Vec<Detection>> {
    match &cfg.detections {
        DetectionSource::Files(paths) => {
            let grid = cfg.grid.as_deref().map(read_grid).transpose()?;
            let mut all = Vec::new();
            for p in paths {
                let dets = read_detections(p)?;
                all.extend(match &grid {
                    Some(g) => lift_all(&dets, g).with_context(|| format!("lifting {}", p.display()))?,
                    None => dets,
                });
            }
            Ok(all)
        }
        DetectionSource::Exec(cmd) => {
            let img = image.expect("checked when the config was built");
            let transform = read_transform(cfg.geo.as_deref())?;
            let grid = plan_grid(img.width(), img.height(), cfg.chip_size, cfg.overlap, &transform)?;
            let mut all = Vec::new();
            for chip in &grid.chips {
                let out = run_exec(cmd, &png_bytes(&extract_chip(img, chip))?)?;
                let text = String::from_utf8(out).with_context(|| format!("detector output for {}", chip.id))?;
                let file: DetectionFile = from_json_str(&text).with_context(|| format!("detector output for {}", chip.id))?;
                all.extend(lift(&file.to_detections()?, chip));
            }
            Ok(all)
        }
    }
}

#[derive(Deserialize)]
struct CropScore {
    s_c: f64,
}

fn classify(cfg: &PipelineConfig, image: Option<&ImageBuffer>, mut dets: Vec<Detection>) -> Result<Vec<Detection>> {
    match &cfg.classifier {
        ClassifierSource::Embedded => {}
        ClassifierSource::File(path) => {
            let f: ClassifierScoresFile = read_json(path).with_context(|| format!("reading {}", path.display()))?;
            ensure!(
                f.scores.len() == dets.len(),
                "{} classifier scores for {} stitched detections",
                f.scores.len(),
                dets.len()
            );
            for (d, s) in dets.iter_mut().zip(f.scores) {
                d.s_c = Some(s);
            }
        }
        ClassifierSource::Exec(cmd) => {
            let img = image.expect("checked when the config was built");
            let transform = read_transform(cfg.geo.as_deref())?;
            for (i, d) in dets.iter_mut().enumerate() {
                let center = transform.world_to_pixel(d.bbox.center());
                let crop = concentric_crop(img, center, cfg.crop);
                let out = run_exec(cmd, &png_bytes(&crop)?)?;
                let parsed: CropScore = serde_json::from_slice(&out).with_context(|| format!("classifier output for detection {i}"))?;
                d.s_c = Some(parsed.s_c);
            }
        }
    }
    Ok(dets)
}

pub fn run(cfg: &PipelineConfig) -> Result<(), StageError> {
    let image = cfg.image.as_deref().map(open_image).transpose().stage("detect")?;
    let raw = detect(cfg, image.as_ref()).stage("detect")?;
    let stitched = stitch_detections(&raw, cfg.nms_iou).stage("stitch")?;
    let classified = classify(cfg, image.as_ref(), stitched).stage("classify")?;
    let (scored, key) = match &cfg.model {
        Some(path) => {
            let fused = read_model(path).and_then(|m| Ok(apply_fusion(&m, &classified)?)).stage("fuse")?;
            (fused, ScoreKey::Fused)
        }
        None => (classified, ScoreKey::Detector),
    };
    if let Some(out) = &cfg.detections_out {
        write_detections(out, &scored).stage("fuse")?;
    }
    let report = read_annotations(&cfg.gt)
        .and_then(|anns| build_report(&scored, &anns, cfg.iou, key, b2n_core::evaluator::DEFAULT_FP_PER_TP))
        .stage("evaluate")?;
    write_report(&report, &cfg.report, cfg.csv.as_deref()).stage("evaluate")
}
