//! Procedural bi-temporal scene generator with templated ground-truth
//! captions. Scenes are built from a small palette of land-use classes so
//! the mock segmenter/detector can recover them by color alone; the edit
//! script is stored as metadata and every caption is a pure function of it.

use crate::data::{BiTemporalSample, Split};
use crate::error::{Error, Result};
use crate::nn::fnv1a;
use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha12Rng};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const BARELAND_COLOR: [u8; 3] = [168, 148, 112];
pub const CLASS_NAMES: [&str; 3] = ["building", "road", "vegetation"];
pub const CLASS_COLORS: [[u8; 3]; 3] = [
    [52, 86, 196],   // building: blue rectangle
    [126, 126, 126], // road: gray stripe
    [58, 142, 66],   // vegetation: green blob
];

/// Fixed sentences attached to pairs without semantic change.
pub const NO_CHANGE_CAPTIONS: [&str; 5] = [
    "the scene is the same as before",
    "there is no difference between the two scenes",
    "the two scenes seem identical",
    "no change has occurred",
    "almost nothing has changed",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeClass {
    Building,
    Road,
    Vegetation,
}

impl ShapeClass {
    pub fn index(self) -> usize {
        match self {
            ShapeClass::Building => 0,
            ShapeClass::Road => 1,
            ShapeClass::Vegetation => 2,
        }
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES[self.index()]
    }

    pub fn color(self) -> [u8; 3] {
        CLASS_COLORS[self.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    Rect { x: u32, y: u32, w: u32, h: u32 },
    HStripe { y: u32, h: u32 },
    VStripe { x: u32, w: u32 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
}

impl Geometry {
    pub fn contains(&self, px: u32, py: u32) -> bool {
        match *self {
            Geometry::Rect { x, y, w, h } => px >= x && px < x + w && py >= y && py < y + h,
            Geometry::HStripe { y, h } => py >= y && py < y + h,
            Geometry::VStripe { x, w } => px >= x && px < x + w,
            Geometry::Ellipse { cx, cy, rx, ry } => {
                let dx = (px as f64 + 0.5 - cx) / rx;
                let dy = (py as f64 + 0.5 - cy) / ry;
                dx * dx + dy * dy <= 1.0
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneShape {
    pub class: ShapeClass,
    pub geometry: Geometry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum SceneEdit {
    Add { shape: SceneShape },
    /// Removes the shape at this index of the epoch-A shape list.
    Remove { index: usize },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EditScript {
    pub edits: Vec<SceneEdit>,
}

impl EditScript {
    pub fn is_no_change(&self) -> bool {
        self.edits.is_empty()
    }
}

/// One clause of a change caption: a class appearing or disappearing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaptionClause {
    Appear(ShapeClass),
    Disappear(ShapeClass),
}

impl CaptionClause {
    /// Five paraphrase variants per clause; variant k feeds caption k.
    fn render(&self, variant: usize) -> String {
        match self {
            CaptionClause::Appear(c) => {
                let n = c.name();
                match variant {
                    0 => format!("a {n} appears on the bareland"),
                    1 => format!("a new {n} appears on the bareland"),
                    2 => format!("a {n} is built on the bareland"),
                    3 => format!("one {n} appears in the scene"),
                    _ => format!("there is a new {n} on the bareland"),
                }
            }
            CaptionClause::Disappear(c) => {
                let n = c.name();
                match variant {
                    0 => format!("the {n} is removed"),
                    1 => format!("the {n} disappears from the scene"),
                    2 => format!("a {n} is removed from the scene"),
                    3 => format!("the {n} is gone"),
                    _ => format!("one {n} disappears"),
                }
            }
        }
    }
}

/// Clauses described by a script, in edit order.
pub fn script_clauses(script: &EditScript, shapes_a: &[SceneShape]) -> Vec<CaptionClause> {
    script
        .edits
        .iter()
        .map(|e| match e {
            SceneEdit::Add { shape } => CaptionClause::Appear(shape.class),
            SceneEdit::Remove { index } => CaptionClause::Disappear(shapes_a[*index].class),
        })
        .collect()
}

/// The five reference captions for a pair; a pure function of the script.
pub fn captions_for(script: &EditScript, shapes_a: &[SceneShape]) -> Vec<String> {
    if script.is_no_change() {
        return NO_CHANGE_CAPTIONS.iter().map(|s| s.to_string()).collect();
    }
    let clauses = script_clauses(script, shapes_a);
    (0..5)
        .map(|variant| {
            clauses
                .iter()
                .map(|c| c.render(variant))
                .collect::<Vec<_>>()
                .join(" and ")
        })
        .collect()
}

/// Per-pair ground truth stored in the dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub id: String,
    pub shapes_a: Vec<SceneShape>,
    pub script: EditScript,
}

impl SceneMeta {
    pub fn shapes_b(&self) -> Vec<SceneShape> {
        let removed: Vec<usize> = self
            .script
            .edits
            .iter()
            .filter_map(|e| match e {
                SceneEdit::Remove { index } => Some(*index),
                _ => None,
            })
            .collect();
        let mut shapes: Vec<SceneShape> = self
            .shapes_a
            .iter()
            .enumerate()
            .filter(|(i, _)| !removed.contains(i))
            .map(|(_, s)| *s)
            .collect();
        for e in &self.script.edits {
            if let SceneEdit::Add { shape } = e {
                shapes.push(*shape);
            }
        }
        shapes
    }
}

pub struct SynthDataset {
    pub samples: Vec<BiTemporalSample>,
    pub scenes: Vec<SceneMeta>,
    pub seed: u64,
    pub size: u32,
}

pub fn render_scene(shapes: &[SceneShape], size: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(size, size, Rgb(BARELAND_COLOR));
    // roads first so compact shapes sit on top (shapes never overlap anyway)
    let mut order: Vec<&SceneShape> = shapes.iter().collect();
    order.sort_by_key(|s| if s.class == ShapeClass::Road { 0 } else { 1 });
    for shape in order {
        let color = Rgb(shape.class.color());
        for py in 0..size {
            for px in 0..size {
                if shape.geometry.contains(px, py) {
                    img.put_pixel(px, py, color);
                }
            }
        }
    }
    img
}

fn rasterize(shape: &SceneShape, size: u32) -> Vec<bool> {
    let mut mask = vec![false; (size * size) as usize];
    for py in 0..size {
        for px in 0..size {
            if shape.geometry.contains(px, py) {
                mask[(py * size + px) as usize] = true;
            }
        }
    }
    mask
}

/// True when the shape (dilated by `gap` pixels) stays clear of `occupied`.
fn placement_ok(shape: &SceneShape, occupied: &[bool], size: u32, gap: i64) -> bool {
    for py in 0..size as i64 {
        for px in 0..size as i64 {
            if !shape.geometry.contains(px as u32, py as u32) {
                continue;
            }
            for dy in -gap..=gap {
                for dx in -gap..=gap {
                    let (nx, ny) = (px + dx, py + dy);
                    if nx < 0 || ny < 0 || nx >= size as i64 || ny >= size as i64 {
                        continue;
                    }
                    if occupied[(ny * size as i64 + nx) as usize] {
                        return false;
                    }
                }
            }
        }
    }
    true
}

fn occupy(shape: &SceneShape, occupied: &mut [bool], size: u32) {
    for (i, v) in rasterize(shape, size).into_iter().enumerate() {
        if v {
            occupied[i] = true;
        }
    }
}

fn random_shape(rng: &mut ChaCha12Rng, size: u32, allow_road: bool) -> SceneShape {
    let class = loop {
        let c = match rng.gen_range(0..3) {
            0 => ShapeClass::Building,
            1 => ShapeClass::Road,
            _ => ShapeClass::Vegetation,
        };
        if c != ShapeClass::Road || allow_road {
            break c;
        }
    };
    let s = size as f64;
    let geometry = match class {
        ShapeClass::Building => {
            let w = rng.gen_range((0.12 * s) as u32..((0.28 * s) as u32).max(2)).max(2);
            let h = rng.gen_range((0.12 * s) as u32..((0.28 * s) as u32).max(2)).max(2);
            let x = rng.gen_range(0..size - w);
            let y = rng.gen_range(0..size - h);
            Geometry::Rect { x, y, w, h }
        }
        ShapeClass::Road => {
            let t = rng.gen_range((0.06 * s) as u32..((0.12 * s) as u32).max(2)).max(2);
            if rng.gen_bool(0.5) {
                Geometry::HStripe {
                    y: rng.gen_range(0..size - t),
                    h: t,
                }
            } else {
                Geometry::VStripe {
                    x: rng.gen_range(0..size - t),
                    w: t,
              }
            }
        }
        ShapeClass::Vegetation => {
            let rx = rng.gen_range(0.07 * s..0.15 * s);
            let ry = rng.gen_range(0.07 * s..0.15 * s);
            let cx = rng.gen_range(rx..s - rx);
            let cy = rng.gen_range(ry..s - ry);
            Geometry::Ellipse { cx, cy, rx, ry }
        }
    };
    SceneShape { class, geometry }
}

const PLACEMENT_RETRIES: usize = 60;
const SHAPE_GAP: i64 = 2;

fn place_shape(
    rng: &mut ChaCha12Rng,
    occupied: &mut Vec<bool>,
    size: u32,
    allow_road: bool,
) -> Result<SceneShape> {
    for _ in 0..PLACEMENT_RETRIES {
        let shape = random_shape(rng, size, allow_road);
        if placement_ok(&shape, occupied, size, SHAPE_GAP) {
            occupy(&shape, occupied, size);
            return Ok(shape);
        }
    }
    Err(Error::Generation(format!(
        "could not place a shape without overlap after {PLACEMENT_RETRIES} retries"
    )))
}

/// Generate `n` deterministic bi-temporal pairs of side `size`, all assigned
/// to the given split. Identical arguments give bit-identical datasets.
pub fn generate(seed: u64, n: usize, size: u32, split: Split) -> Result<SynthDataset> {
    if n < 1 {
        return Err(Error::Input("synthetic dataset needs n >= 1".into()));
    }
    if size < 16 {
        return Err(Error::Input("synthetic image size must be >= 16".into()));
    }
    let mut samples = Vec::with_capacity(n);
    let mut scenes = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("{split}_{i:06}");
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ fnv1a(&id));
        let mut occupied = vec![false; (size * size) as usize];

        let n_base = rng.gen_range(1..=3);
        let mut shapes_a = Vec::new();
        for _ in 0..n_base {
            let allow_road = !shapes_a
                .iter()
                .any(|s: &SceneShape| s.class == ShapeClass::Road);
            shapes_a.push(place_shape(&mut rng, &mut occupied, size, allow_road)?);
        }

        let mut script = EditScript::default();
        if !rng.gen_bool(0.3) {
            let n_edits = rng.gen_range(1..=2usize);
            let mut removed: Vec<usize> = Vec::new();
            for _ in 0..n_edits {
                let can_remove = removed.len() < shapes_a.len();
                if can_remove && rng.gen_bool(0.5) {
                    let candidates: Vec<usize> = (0..shapes_a.len())
                        .filter(|i| !removed.contains(i))
                        .collect();
                    let index = candidates[rng.gen_range(0..candidates.len())];
                    removed.push(index);
                    script.edits.push(SceneEdit::Remove { index });
                } else {
                    let allow_road = !shapes_a.iter().any(|s| s.class == ShapeClass::Road)
                        && !script.edits.iter().any(|e| {
                            matches!(e, SceneEdit::Add { shape } if shape.class == ShapeClass::Road)
                        });
                    let shape = place_shape(&mut rng, &mut occupied, size, allow_road)?;
                    script.edits.push(SceneEdit::Add { shape });
                }
            }
        }

        let meta = SceneMeta {
            id: id.clone(),
            shapes_a: shapes_a.clone(),
            script: script.clone(),
        };
        let image_a = render_scene(&shapes_a, size);
        let image_b = render_scene(&meta.shapes_b(), size);
        let captions = captions_for(&script, &shapes_a);
        let sample = BiTemporalSample {
            id,
            split,
            image_a,
            image_b,
            captions,
        };
        sample.validate()?;
        samples.push(sample);
        scenes.push(meta);
    }
    Ok(SynthDataset {
        samples,
        scenes,
        seed,
        size,
    })
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    version: u32,
    seed: u64,
    size: u32,
    counts: std::collections::BTreeMap<String, usize>,
    scenes: Vec<SceneMeta>,
}

#[derive(Serialize, Deserialize)]
struct CaptionsFile {
    images: Vec<CaptionEntry>,
}

#[derive(Serialize, Deserialize)]
struct CaptionEntry {
    filename: String,
    split: String,
    sentences: Vec<SentenceEntry>,
}

#[derive(Serialize, Deserialize)]
struct SentenceEntry {
    raw: String,
}

/// Write the dataset in the on-disk layout used by the loader:
/// `images/A/<id>.png`, `images/B/<id>.png`, `captions.json` and
/// `manifest.json` (split counts plus per-pair ground truth).
pub fn write_dataset(ds: &SynthDataset, root: &Path) -> Result<()> {
    std::fs::create_dir_all(root.join("images/A"))?;
    std::fs::create_dir_all(root.join("images/B"))?;
    let mut entries = Vec::new();
    let mut counts = std::collections::BTreeMap::new();
    for s in &ds.samples {
        let filename = format!("{}.png", s.id);
        s.image_a.save(root.join("images/A").join(&filename))?;
        s.image_b.save(root.join("images/B").join(&filename))?;
        *counts.entry(s.split.to_string()).or_insert(0) += 1;
        entries.push(CaptionEntry {
            filename,
            split: s.split.to_string(),
            sentences: s
                .captions
                .iter()
                .map(|c| SentenceEntry { raw: c.clone() })
                .collect(),
        });
    }
    let captions = CaptionsFile { images: entries };
    std::fs::write(
        root.join("captions.json"),
        serde_json::to_string_pretty(&captions)?,
    )?;
    let manifest = ManifestFile {
        version: 1,
        seed: ds.seed,
        size: ds.size,
        counts,
        scenes: ds.scenes.clone(),
    };
    std::fs::write(
        root.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Read scene ground truth back from a dataset directory.
pub fn read_scenes(root: &Path) -> Result<Vec<SceneMeta>> {
    let text = std::fs::read_to_string(root.join("manifest.json"))?;
    let manifest: ManifestFile = serde_json::from_str(&text)?;
    Ok(manifest.scenes)
}

pub(crate) fn read_manifest_counts(
    root: &Path,
) -> Result<Option<std::collections::BTreeMap<String, usize>>> {
    let path = root.join("manifest.json");
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path)?;
    let manifest: ManifestFile = serde_json::from_str(&text)?;
    Ok(Some(manifest.counts))
}
