use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use b2n_core::chipper::{extract_chip, lift, plan_grid};
use b2n_core::colorxfer::{apply_color_map, fit_color_map_images};
use b2n_core::evaluator::{ap50, match_detections, max_recall_at_imprecision, pr_curve};
use b2n_core::fusion::{apply_fusion, fit_fusion, Bandwidth, FusionConfig};
use b2n_core::io::{
    read_json, write_json, AnnotationFile, DetectionFile, FusionModelFile, GeoSidecar, GridFile, Report,
    ScorePairFile, Versioned,
};
use b2n_core::nms::suppress;
use b2n_core::simharness::{build_mixture, simulate as sim, MixtureSource, SimProfile};
use b2n_core::{AffineGeoTransform, AnnotationSet, ChipGrid, Detection, ImageBuffer, ScoreKey};

use crate::{ChipArgs, ColormatchArgs, EvaluateArgs, FuseArgs, MixArgs, ScoreArgs, SimulateArgs, StitchArgs};

pub(crate) fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let file: DetectionFile = read_json(path).with_context(|| format!("reading detections {}", path.display()))?;
    Ok(file.to_detections()?)
}

pub(crate) fn write_detections(path: &Path, dets: &[Detection]) -> Result<()> {
    write_json(path, &DetectionFile::from_detections(dets)).with_context(|| format!("writing {}", path.display()))
}

pub(crate) fn read_annotations(path: &Path) -> Result<AnnotationSet> {
    let file: AnnotationFile = read_json(path).with_context(|| format!("reading ground truth {}", path.display()))?;
    Ok(file.to_set()?)
}

pub(crate) fn read_transform(path: Option<&Path>) -> Result<AffineGeoTransform> {
    match path {
        None => Ok(AffineGeoTransform::identity()),
        Some(p) => {
            let side: GeoSidecar = read_json(p).with_context(|| format!("reading geotransform {}", p.display()))?;
            Ok(side.transform)
        }
    }
}

pub(crate) fn read_grid(path: &Path) -> Result<ChipGrid> {
    let file: GridFile = read_json(path).with_context(|| format!("reading chip grid {}", path.display()))?;
    Ok(file.grid)
}

pub(crate) fn open_image(path: &Path) -> Result<ImageBuffer> {
    ImageBuffer::open(path).with_context(|| format!("reading image {}", path.display()))
}

/// PNG files in a directory, sorted by name.
pub(crate) fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    Ok(out)
}

pub(crate) fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Chip-pixel detections lifted through their chip's transform.
pub(crate) fn lift_all(dets: &[Detection], grid: &ChipGrid) -> Result<Vec<Detection>> {
    dets.iter()
        .map(|d| {
            let id = d.source_chip.as_deref().ok_or_else(|| anyhow!("detection without a chip id"))?;
            let chip = grid.chip(id).ok_or_else(|| anyhow!("unknown chip {id:?}"))?;
            Ok(lift(std::slice::from_ref(d), chip).remove(0))
        })
        .collect()
}

pub(crate) fn stitch_detections(dets: &[Detection], iou: f64) -> Result<Vec<Detection>> {
    ensure!(iou > 0.0 && iou <= 1.0, "NMS IoU must be in (0, 1], got {iou}");
    Ok(suppress(dets, iou, ScoreKey::Detector))
}

pub(crate) fn build_report(
    dets: &[Detection],
    anns: &AnnotationSet,
    iou: f64,
    key: ScoreKey,
    fp_per_tp: f64,
) -> Result<Report> {
    ensure!(iou > 0.0 && iou <= 1.0, "IoU threshold must be in (0, 1], got {iou}");
    ensure!(fp_per_tp >= 0.0, "fp-per-tp must be non-negative");
    if let Some(i) = dets.iter().position(|d| d.score(key).is_none()) {
        bail!("detection {i} has no {key:?} score");
    }
    let m = match_detections(dets, &anns.gt, iou, key);
    let points = pr_curve(&m.records, m.n_gt)?;
    let ap = ap50(&m.records, m.n_gt)?;
    let mr = max_recall_at_imprecision(&m.records, m.n_gt, fp_per_tp)?;
    let name = match key {
        ScoreKey::Detector => "s_d",
        ScoreKey::Classifier => "s_c",
        ScoreKey::Fused => "fused",
    };
    Ok(Report::new(name, iou, m.n_gt, dets.len(), ap, mr, &points))
}

pub(crate) fn write_report(report: &Report, json: &Path, csv: Option<&Path>) -> Result<()> {
    write_json(json, report).with_context(|| format!("writing {}", json.display()))?;
    let csv = csv.map(Path::to_path_buf).unwrap_or_else(|| json.with_extension("csv"));
    fs::write(&csv, report.pr_csv()).with_context(|| format!("writing {}", csv.display()))
}

pub fn chip(a: ChipArgs) -> Result<()> {
    let img = open_image(&a.image)?;
    let transform = read_transform(a.geo.as_deref())?;
    let grid = plan_grid(img.width(), img.height(), a.chip_size, a.overlap, &transform)?;
    fs::create_dir_all(&a.out_dir)?;
    for c in &grid.chips {
        extract_chip(&img, c).save_png(a.out_dir.join(format!("{}.png", c.id)))?;
        write_json(a.out_dir.join(format!("{}.geo.json", c.id)), &GeoSidecar::new(c.transform))?;
    }
    write_json(a.out_dir.join("grid.json"), &GridFile::new(grid))?;
    Ok(())
}

pub fn stitch(a: StitchArgs) -> Result<()> {
    let grid = a.grid.as_deref().map(read_grid).transpose()?;
    let mut all = Vec::new();
    for p in &a.inputs {
        let dets = read_detections(p)?;
        all.extend(match &grid {
            Some(g) => lift_all(&dets, g).with_context(|| format!("lifting {}", p.display()))?,
            None => dets,
        });
    }
    write_detections(&a.out, &stitch_detections(&all, a.iou)?)
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let dets = read_detections(&a.pred)?;
    let anns = read_annotations(&a.gt)?;
    let report = build_report(&dets, &anns, a.iou, a.score.into(), a.fp_per_tp)?;
    write_report(&report, &a.report, a.csv.as_deref())
}

fn parse_pair(s: &str, sep: char, what: &str) -> Result<(f64, f64)> {
    let (l, r) = s.split_once(sep).ok_or_else(|| anyhow!("{what} must look like a{sep}b, got {s:?}"))?;
    Ok((l.trim().parse().with_context(|| format!("{what}: {l:?}"))?, r.trim().parse().with_context(|| format!("{what}: {r:?}"))?))
}

pub fn fuse(a: FuseArgs) -> Result<()> {
    let (lo, hi) = parse_pair(&a.domain, ':', "domain")?;
    ensure!(lo < hi, "domain must have lo < hi");
    let bandwidth = match &a.bandwidth {
        None => Bandwidth::Silverman,
        Some(s) => {
            let (h_x, h_y) = parse_pair(s, ',', "bandwidth")?;
            Bandwidth::Fixed { h_x, h_y }
        }
    };
    let neg: ScorePairFile = read_json(&a.neg_val).with_context(|| format!("reading {}", a.neg_val.display()))?;
    let pos: Option<ScorePairFile> = match &a.pos_val {
        Some(p) => Some(read_json(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    let pos_pairs = pos.map(|p| p.to_pairs());
    let cfg = FusionConfig { grid_size: a.grid, domain: (lo, hi), bandwidth };
    let model = fit_fusion(&neg.to_pairs(), pos_pairs.as_deref(), &cfg)?;
    write_json(&a.model_out, &FusionModelFile::new(model))?;
    Ok(())
}

pub(crate) fn read_model(path: &Path) -> Result<b2n_core::FusionModel> {
    let f: FusionModelFile = read_json(path).with_context(|| format!("reading fusion model {}", path.display()))?;
    Ok(f.model)
}

pub fn score(a: ScoreArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    let dets = read_detections(&a.input)?;
    write_detections(&a.out, &apply_fusion(&model, &dets)?)
}

fn images_in(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let v = list_pngs(path)?;
        ensure!(!v.is_empty(), "no PNG files in {}", path.display());
        Ok(v)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

pub fn colormatch(a: ColormatchArgs) -> Result<()> {
    let contents = images_in(&a.content)?;
    match (&a.style, &a.style_dir) {
        (Some(style), None) if contents.len() == 1 && !a.content.is_dir() => {
            let (c, s) = (open_image(&contents[0])?, open_image(style)?);
            let map = fit_color_map_images(&c, &s, a.ridge)?;
            apply_color_map(&map, &c).save_png(&a.out)?;
        }
        _ => {
            let styles = match (&a.style, &a.style_dir) {
                (_, Some(dir)) => images_in(dir)?,
                (Some(s), None) => vec![s.clone()],
                (None, None) => bail!("--style or --style-dir is required"),
            };
            fs::create_dir_all(&a.out)?;
            let style_imgs = styles.iter().map(|p| open_image(p)).collect::<Result<Vec<_>>>()?;
            for cp in &contents {
                let c = open_image(cp)?;
                for (sp, s) in styles.iter().zip(&style_imgs) {
                    let map = fit_color_map_images(&c, s, a.ridge)?;
                    let name = format!("{}__{}.png", stem(cp), stem(sp));
                    apply_color_map(&map, &c).save_png(a.out.join(name))?;
                }
            }
        }
    }
    Ok(())
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let anns = read_annotations(&a.gt)?;
    let mut profile: SimProfile = read_json(&a.profile).with_context(|| format!("reading profile {}", a.profile.display()))?;
    if let Some(seed) = a.seed {
        profile.seed = seed;
    }
    let dets: Vec<Detection> = sim(&anns, a.area_mpx, &profile)?;
    write_detections(&a.out, &dets)
}

fn source_files(path: &Path) -> Result<Vec<String>> {
    if path.is_dir() {
        let mut v: Vec<String> = fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .map(|p| p.to_string_lossy().into_owned())
            .collect();
        v.sort();
        Ok(v)
    } else {
        let text = fs::read_to_string(path).with_context(|| format!("reading file list {}", path.display()))?;
        Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
    }
}

pub fn mix(a: MixArgs) -> Result<()> {
    let sources = a
        .sources
        .iter()
        .map(|s| {
            let (tag, path) = s.split_once('=').ok_or_else(|| anyhow!("--source must be CODE=path, got {s:?}"))?;
            let path = PathBuf::from(path);
            Ok(MixtureSource { tag: tag.parse()?, files: source_files(&path)?, path: path.to_string_lossy().into_owned() })
        })
        .collect::<Result<Vec<_>>>()?;
    let counts = a
        .counts
        .split(',')
        .map(|c| c.trim().parse::<usize>().with_context(|| format!("bad count {c:?}")))
        .collect::<Result<Vec<_>>>()?;
    let manifest = build_mixture(&sources, &counts, a.seed, a.with_replacement)?;
    write_json(&a.manifest_out, &Versioned::new(&manifest))?;
    Ok(())
}
