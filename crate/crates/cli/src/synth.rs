use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, ensure, Context, Result};
use b2n_core::io::{read_json, write_json, AnnotationFile, GtRecord, SCHEMA};
use b2n_core::synthcompositor::represent::{CannyRep, IdentityRep, LaplacianRep, MaskRep, Representation};
use b2n_core::synthcompositor::reskin::{reskin as reskin_scene, Generator, IdentityGenerator, StubGenerator};
use b2n_core::synthcompositor::{
    build_scene, CompositeScene, PaintPattern, PlacementMode, PlacementPolicy, Pose, Provenance, SceneRecipe, Sprite,
};
use b2n_core::{AnnotationSet, GeoBox, ImageBuffer, Point};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::commands::{list_pngs, open_image, stem};
use crate::external::{exec_command, ExecGenerator};
use crate::{CompositeArgs, PaintArg, PolicyArg, RepArgs, RepMode, ReskinArgs};

/// Annotation file written next to each composited scene.
#[derive(Debug, Serialize)]
struct SceneFile<'a> {
    schema: &'static str,
    image_id: String,
    background: String,
    gt: Vec<GtRecord>,
    background_gt: Vec<GtRecord>,
    provenance: &'a [Provenance],
}

fn records(boxes: &[GeoBox]) -> Vec<GtRecord> {
    boxes.iter().map(|b| GtRecord { bbox: b.to_array(), class: b.class_label.clone() }).collect()
}

#[derive(Debug, Default, Deserialize)]
struct SpriteMeta {
    #[serde(default, rename = "class")]
    class: Option<String>,
    #[serde(default)]
    pose: Pose,
}

/// `X.png` with optional `X.shadow.png` and `X.json` metadata.
fn load_sprites(dir: &Path, default_class: &str) -> Result<Vec<Sprite>> {
    let mut out = Vec::new();
    for p in list_pngs(dir)? {
        let id = stem(&p);
        if id.ends_with(".shadow") {
            continue;
        }
        let rgba = open_image(&p)?;
        let rgba = match rgba.channels() {
            4 => rgba,
            _ => bail!("sprite {} has no alpha channel", p.display()),
        };
        let shadow_path = dir.join(format!("{id}.shadow.png"));
        let shadow = shadow_path.is_file().then(|| open_image(&shadow_path)).transpose()?;
        let meta_path = dir.join(format!("{id}.json"));
        let meta: SpriteMeta = if meta_path.is_file() {
            serde_json::from_str(&fs::read_to_string(&meta_path)?).with_context(|| format!("reading {}", meta_path.display()))?
        } else {
            SpriteMeta::default()
        };
        let class = meta.class.unwrap_or_else(|| default_class.to_string());
        out.push(Sprite::new(id, rgba, shadow, meta.pose, class)?);
    }
    ensure!(!out.is_empty(), "no sprites in {}", dir.display());
    Ok(out)
}

/// `X.png` with optional `X.json` annotations in pixel coordinates.
fn load_backgrounds(dir: &Path) -> Result<Vec<(ImageBuffer, AnnotationSet)>> {
    let mut out = Vec::new();
    for p in list_pngs(dir)? {
        let id = stem(&p);
        let ann_path = p.with_extension("json");
        let anns = if ann_path.is_file() {
            let f: AnnotationFile = read_json(&ann_path).with_context(|| format!("reading {}", ann_path.display()))?;
            f.to_set()?
        } else {
            AnnotationSet::new(id, vec![], Point::new(0.0, 0.0))?
        };
        out.push((open_image(&p)?.to_rgb(), anns));
    }
    ensure!(!out.is_empty(), "no backgrounds in {}", dir.display());
    Ok(out)
}

fn paint_patterns(args: &[PaintArg]) -> Vec<PaintPattern> {
    args.iter()
        .map(|p| match p {
            PaintArg::Gray => PaintPattern::NeutralGray,
            PaintArg::Noise => PaintPattern::GaussianNoise { sigma: 12.0 },
            PaintArg::Camo => PaintPattern::Camouflage {
                palette: vec![[74, 83, 60], [112, 104, 78], [48, 52, 41], [140, 136, 118]],
                blob_scale: 6.0,
            },
        })
        .collect()
}

pub fn composite(a: CompositeArgs) -> Result<()> {
    let library = load_backgrounds(&a.backgrounds)?;
    let sprites = load_sprites(&a.sprites, &a.class)?;
    let mode = match a.policy {
        PolicyArg::Random => PlacementMode::Random,
        PolicyArg::Rows => {
            PlacementMode::Rows { spacing_px: a.spacing, jitter_px: a.jitter, orientation_deg: a.orientation }
        }
    };
    let recipe = SceneRecipe {
        target_class: a.class.clone(),
        objects: a.objects,
        policy: PlacementPolicy { mode, max_attempts: a.max_attempts },
        paints: paint_patterns(&a.paint),
        blur_sigma: a.blur,
        harmonize: !a.no_harmonize,
    };
    fs::create_dir_all(&a.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    for i in 0..a.count {
        let scene = build_scene(&library, &sprites, &recipe, &mut rng)?;
        let name = format!("scene_{i:04}");
        scene.image.save_png(a.out.join(format!("{name}.png")))?;
        let file = SceneFile {
            schema: SCHEMA,
            image_id: name.clone(),
            background: scene.background_id.clone(),
            gt: records(&scene.annotations),
            background_gt: records(&scene.background_annotations),
            provenance: &scene.provenance,
        };
        write_json(a.out.join(format!("{name}.json")), &file)?;
    }
    Ok(())
}

fn representation(mode: RepMode, args: Option<&RepArgs>) -> Result<Box<dyn Representation + Send + Sync>> {
    Ok(match mode {
        RepMode::Identity => Box::new(IdentityRep),
        RepMode::Laplacian => Box::new(LaplacianRep),
        RepMode::Canny => Box::new(match args {
            Some(a) => CannyRep { low: a.low, high: a.high, sigma: a.sigma },
            None => CannyRep::default(),
        }),
        RepMode::Mask => {
            let path = args
                .and_then(|a| a.polygons.as_ref())
                .ok_or_else(|| anyhow!("mask representation needs --polygons"))?;
            let raw: Vec<Vec<[f64; 2]>> =
                serde_json::from_str(&fs::read_to_string(path)?).with_context(|| format!("reading {}", path.display()))?;
            Box::new(MaskRep { polygons: raw.into_iter().map(|poly| poly.into_iter().map(|[x, y]| (x, y)).collect()).collect() })
        }
    })
}

pub fn rep(a: RepArgs) -> Result<()> {
    let img = open_image(&a.input)?;
    let r = representation(a.mode, Some(&a))?;
    r.represent(&img)?.save_png(&a.out)?;
    Ok(())
}

fn generator(spec: &str) -> Result<Box<dyn Generator + Send + Sync>> {
    Ok(match spec {
        "stub" => Box::new(StubGenerator::default()),
        "identity" => Box::new(IdentityGenerator),
        other => match exec_command(other) {
            Some(cmd) => Box::new(ExecGenerator { command: cmd.to_string() }),
            None => bail!("unknown generator {other:?}; expected stub, identity or exec:<command>"),
        },
    })
}

/// Reskins every PNG of a directory (or a single file). Annotation JSON next
/// to an image is copied unchanged.
pub fn reskin(a: ReskinArgs) -> Result<()> {
    ensure!(a.rep != RepMode::Mask, "reskin supports laplacian, canny and identity representations");
    let rep = representation(a.rep, None)?;
    let generator = generator(&a.generator)?;
    let inputs = if a.input.is_dir() { list_pngs(&a.input)? } else { vec![a.input.clone()] };
    fs::create_dir_all(&a.out)?;
    let one = |p: &std::path::PathBuf| -> Result<()> {
        let scene = CompositeScene::new(open_image(p)?, vec![]);
        let out = reskin_scene(&scene, rep.as_ref(), generator.as_ref()).with_context(|| format!("reskinning {}", p.display()))?;
        out.image.save_png(a.out.join(format!("{}.png", stem(p))))?;
        let ann = p.with_extension("json");
        if ann.is_file() {
            fs::copy(&ann, a.out.join(format!("{}.json", stem(p))))?;
        }
        Ok(())
    };
    if generator.concurrency_safe() {
        inputs.par_iter().map(one).collect::<Vec<_>>().into_iter().collect()
    } else {
        inputs.iter().try_for_each(one)
    }
}
