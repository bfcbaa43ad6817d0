//! Procedural image-caption pairs with an exact misalignment oracle.
//!
//! A scene places one to three objects of distinct shapes on a 4x4 grid of
//! 8x8-pixel cells. Its caption mentions every object by shape, optionally
//! adding the object's color and which half of the canvas (top/bottom,
//! left/right) it sits in. Each such assertion is a [`Fact`].
//!
//! Augmentations act on pixels and, in parallel, on scene semantics: crop
//! removes objects whose cell center falls outside the window and re-maps the
//! remaining centers into the resized view, flip mirrors them, grayscale makes
//! colors unobservable, brightness jitter changes nothing observable. The
//! alignment score of a caption against a view is the fraction of its facts
//! that still hold.

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const CANVAS: usize = 32;
pub const GRID: usize = 4;
pub const CELL: usize = CANVAS / GRID;
pub const CHANNELS: usize = 3;
pub const IMAGE_LEN: usize = CHANNELS * CANVAS * CANVAS;
pub const MAX_LEN: usize = 16;
pub const MASK_PROB: f64 = 0.15;

pub const PAD: usize = 0;
pub const MASK: usize = 1;
/// First id that is neither padding nor `[MASK]`.
pub const FIRST_WORD: usize = 2;

pub const VOCAB: [&str; 32] = [
    "[PAD]", "[MASK]", "square", "circle", "triangle", "red", "green", "blue", "yellow", "left",
    "right", "top", "bottom", "a", "and", "the", "on", "at", "with", "of", "photo", "there", "is",
    "in", "shape", "shapes", "one", "two", "three", "picture", "small", "big",
];
pub const VOCAB_SIZE: usize = VOCAB.len();

const TOK_AND: usize = 14;
const TOK_A: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Square,
    Circle,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Top,
    Bottom,
}

pub const SHAPES: [Shape; 3] = [Shape::Square, Shape::Circle, Shape::Triangle];
pub const COLORS: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::Yellow];

impl Shape {
    pub fn token(self) -> usize {
        2 + self as usize
    }
}

impl Color {
    pub fn token(self) -> usize {
        5 + self as usize
    }

    pub fn rgb(self) -> [f64; 3] {
        match self {
            Color::Red => [1.0, 0.0, 0.0],
            Color::Green => [0.0, 1.0, 0.0],
            Color::Blue => [0.0, 0.0, 1.0],
            Color::Yellow => [1.0, 1.0, 0.0],
        }
    }
}

impl Side {
    pub fn token(self) -> usize {
        9 + self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: Color,
    pub row: usize,
    pub col: usize,
}

impl SceneObject {
    /// Cell center in pixel coordinates `(x, y)`.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.col * CELL) as f64 + CELL as f64 / 2.0,
            (self.row * CELL) as f64 + CELL as f64 / 2.0,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.objects.len()) {
            return Err(Error::InvalidValue(format!("{} objects in scene", self.objects.len())));
        }
        for (k, o) in self.objects.iter().enumerate() {
            if o.row >= GRID || o.col >= GRID {
                return Err(Error::InvalidValue(format!("object {k} outside the grid")));
            }
            for p in &self.objects[..k] {
                if (p.row, p.col) == (o.row, o.col) {
                    return Err(Error::InvalidValue("two objects share a cell".into()));
                }
                if p.shape == o.shape {
                    return Err(Error::InvalidValue("two objects share a shape".into()));
                }
            }
        }
        Ok(())
    }

    /// Deterministic `3 x 32 x 32` rendering on a black background.
    pub fn render(&self) -> Array3<f64> {
        let mut img = Array3::zeros((CHANNELS, CANVAS, CANVAS));
        for o in &self.objects {
            let rgb = o.color.rgb();
            for dy in 0..CELL {
                for dx in 0..CELL {
                    if covers(o.shape, dx, dy) {
                        let (y, x) = (o.row * CELL + dy, o.col * CELL + dx);
                        for c in 0..CHANNELS {
                            img[[c, y, x]] = rgb[c];
                        }
                    }
                }
            }
        }
        img
    }
}

/// Whether pixel `(dx, dy)` of an 8x8 cell belongs to the shape.
fn covers(shape: Shape, dx: usize, dy: usize) -> bool {
    let inner = (1..7).contains(&dx) && (1..7).contains(&dy);
    match shape {
        Shape::Square => inner,
        Shape::Circle => {
            let (fx, fy) = (dx as f64 + 0.5 - 4.0, dy as f64 + 0.5 - 4.0);
            fx * fx + fy * fy <= 9.0
        }
        Shape::Triangle => {
            // apex up, base on row 6
            inner && {
                let half = (dy as f64 - 1.0) / 2.0 + 0.5;
                (dx as f64 + 0.5 - 4.0).abs() <= half
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Attribute {
    Present,
    Color(Color),
    Position(Side),
}

/// "The object of this shape exists / has this color / sits on this side."
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fact {
    pub shape: Shape,
    pub attribute: Attribute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    pub tokens: Vec<usize>,
    pub facts: Vec<Fact>,
}

impl Caption {
    /// Recovers a caption and its facts from token ids.
    pub fn from_tokens(tokens: Vec<usize>) -> Result<Self> {
        let facts = parse_facts(&tokens)?;
        Ok(Self { tokens, facts })
    }

    pub fn text(&self) -> String {
        self.tokens
            .iter()
            .map(|&t| VOCAB.get(t).copied().unwrap_or("?"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Tokens right-padded with [`PAD`] to [`MAX_LEN`].
    pub fn padded(&self) -> Vec<usize> {
        pad_tokens(&self.tokens)
    }
}

pub fn pad_tokens(tokens: &[usize]) -> Vec<usize> {
    let mut v = tokens.to_vec();
    v.resize(MAX_LEN.max(tokens.len()), PAD);
    v
}

/// Reads mentions of the form `[color] shape [top|bottom] [left|right]`,
/// skipping glue words.
pub fn parse_facts(tokens: &[usize]) -> Result<Vec<Fact>> {
    let mut facts = Vec::new();
    let mut pending_color: Option<Color> = None;
    let mut current: Option<Shape> = None;
    for &t in tokens {
        if let Some(shape) = SHAPES.iter().copied().find(|s| s.token() == t) {
            facts.push(Fact {
                shape,
                attribute: Attribute::Present,
            });
            if let Some(color) = pending_color.take() {
                facts.push(Fact {
                    shape,
                    attribute: Attribute::Color(color),
                });
            }
            current = Some(shape);
        } else if let Some(color) = COLORS.iter().copied().find(|c| c.token() == t) {
            pending_color = Some(color);
            current = None;
        } else if (9..=12).contains(&t) {
            let side = [Side::Left, Side::Right, Side::Top, Side::Bottom][t - 9];
            let shape = current.ok_or_else(|| Error::Parse(format!("side word {t} without a shape")))?;
            facts.push(Fact {
                shape,
                attribute: Attribute::Position(side),
            });
        } else if t >= VOCAB_SIZE {
            return Err(Error::TokenOutOfRange { token: t, vocab: VOCAB_SIZE });
        }
    }
    if pending_color.is_some() {
        return Err(Error::Parse("color word without a shape".into()));
    }
    Ok(facts)
}

fn describe(scene: &Scene, r: &mut rng::LabRng) -> Caption {
    let mut order: Vec<usize> = (0..scene.objects.len()).collect();
    order.shuffle(r);
    let mut tokens = vec![TOK_A];
    for (k, &idx) in order.iter().enumerate() {
        let o = scene.objects[idx];
        if k > 0 {
            tokens.push(TOK_AND);
        }
        if r.gen_bool(0.7) {
            tokens.push(o.color.token());
        }
        tokens.push(o.shape.token());
        if r.gen_bool(0.5) {
            tokens.push(if o.row < GRID / 2 { Side::Top } else { Side::Bottom }.token());
        }
        if r.gen_bool(0.5) {
            tokens.push(if o.col < GRID / 2 { Side::Left } else { Side::Right }.token());
        }
    }
    Caption::from_tokens(tokens).expect("generated captions parse")
}

/// Deterministic scene and caption from `seed`.
pub fn gen_pair(seed: u64) -> (Scene, Caption) {
    let mut r = rng::stream(seed, &[0x5CE7E]);
    let count = r.gen_range(1..=3usize);
    let mut shapes = SHAPES.to_vec();
    shapes.shuffle(&mut r);
    let cells = rand::seq::index::sample(&mut r, GRID * GRID, count);
    let objects = cells
        .iter()
        .zip(shapes)
        .map(|(cell, shape)| SceneObject {
            shape,
            color: COLORS[r.gen_range(0..COLORS.len())],
            row: cell / GRID,
            col: cell % GRID,
        })
        .collect();
    let scene = Scene { objects };
    let caption = describe(&scene, &mut r);
    (scene, caption)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AugOp {
    /// Window `[x0, x0 + w) x [y0, y0 + h)`, resized back to the full canvas.
    Crop { x0: usize, y0: usize, w: usize, h: usize },
    HorizontalFlip,
    /// Brightness factor applied to every channel alike.
    ColorJitter { brightness: f64 },
    Grayscale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub ops: Vec<AugOp>,
    pub alignment_score: f64,
}

/// What remains observable of an object after augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewObject {
    pub shape: Shape,
    pub color: Option<Color>,
    pub center: (f64, f64),
}

/// Scene semantics after a sequence of augmentations.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneView {
    pub objects: Vec<ViewObject>,
}

impl SceneView {
    pub fn of(scene: &Scene) -> Self {
        Self {
            objects: scene
                .objects
                .iter()
                .map(|o| ViewObject {
                    shape: o.shape,
                    color: Some(o.color),
                    center: o.center(),
                })
                .collect(),
        }
    }

    pub fn apply(mut self, op: &AugOp) -> Self {
        let full = CANVAS as f64;
        match *op {
            AugOp::Crop { x0, y0, w, h } => {
                let (x0, y0, w, h) = (x0 as f64, y0 as f64, w as f64, h as f64);
                self.objects.retain(|o| {
                    let (x, y) = o.center;
                    x >= x0 && x < x0 + w && y >= y0 && y < y0 + h
                });
                for o in &mut self.objects {
                    let (x, y) = o.center;
                    o.center = ((x - x0) * full / w, (y - y0) * full / h);
                }
            }
            AugOp::HorizontalFlip => {
                for o in &mut self.objects {
                    o.center.0 = full - o.center.0;
                }
            }
            AugOp::Grayscale => {
                for o in &mut self.objects {
                    o.color = None;
                }
            }
            AugOp::ColorJitter { .. } => {}
        }
        self
    }

    pub fn holds(&self, fact: &Fact) -> bool {
        let half = CANVAS as f64 / 2.0;
        let Some(o) = self.objects.iter().find(|o| o.shape == fact.shape) else {
            return false;
        };
        match fact.attribute {
            Attribute::Present => true,
            Attribute::Color(c) => o.color == Some(c),
            Attribute::Position(Side::Left) => o.center.0 < half,
            Attribute::Position(Side::Right) => o.center.0 > half,
            Attribute::Position(Side::Top) => o.center.1 < half,
            Attribute::Position(Side::Bottom) => o.center.1 > half,
        }
    }
}

/// Fraction of caption facts that hold in `view` (1 for a fact-free caption).
pub fn alignment_score(view: &SceneView, caption: &Caption) -> f64 {
    if caption.facts.is_empty() {
        return 1.0;
    }
    let held = caption.facts.iter().filter(|f| view.holds(f)).count();
    held as f64 / caption.facts.len() as f64
}

pub fn apply_ops(scene: &Scene, ops: &[AugOp]) -> SceneView {
    ops.iter().fold(SceneView::of(scene), |v, op| v.apply(op))
}

/// Applies the pixel side of `op` to an image.
pub fn apply_pixels(img: &Array3<f64>, op: &AugOp) -> Array3<f64> {
    match *op {
        AugOp::Crop { x0, y0, w, h } => Array3::from_shape_fn((CHANNELS, CANVAS, CANVAS), |(c, y, x)| {
            let sy = y0 + (y * h + h / 2) / CANVAS;
            let sx = x0 + (x * w + w / 2) / CANVAS;
            img[[c, sy.min(y0 + h - 1), sx.min(x0 + w - 1)]]
        }),
        AugOp::HorizontalFlip => Array3::from_shape_fn((CHANNELS, CANVAS, CANVAS), |(c, y, x)| {
            img[[c, y, CANVAS - 1 - x]]
        }),
        AugOp::ColorJitter { brightness } => img.mapv(|v| (v * brightness).clamp(0.0, 1.0)),
        AugOp::Grayscale => {
            let mut out = img.clone();
            for y in 0..CANVAS {
                for x in 0..CANVAS {
                    let l = 0.299 * img[[0, y, x]] + 0.587 * img[[1, y, x]] + 0.114 * img[[2, y, x]];
                    for c in 0..CHANNELS {
                        out[[c, y, x]] = l;
                    }
                }
            }
            out
        }
    }
}

/// Samples each augmentation with probability 0.5 in the fixed order
/// crop, flip, jitter, grayscale.
pub fn sample_ops(seed: u64) -> Vec<AugOp> {
    let mut r = rng::stream(seed, &[0xA06]);
    let mut ops = Vec::new();
    if r.gen_bool(0.5) {
        ops.push(sample_crop(&mut r));
    }
    if r.gen_bool(0.5) {
        ops.push(AugOp::HorizontalFlip);
    }
    if r.gen_bool(0.5) {
        ops.push(AugOp::ColorJitter {
            brightness: r.gen_range(0.6..1.4),
        });
    }
    if r.gen_bool(0.5) {
        ops.push(AugOp::Grayscale);
    }
    ops
}

/// Random window covering at least half the canvas, aspect ratio in [3/4, 4/3].
fn sample_crop(r: &mut rng::LabRng) -> AugOp {
    let full = CANVAS as f64;
    loop {
        let area = r.gen_range(0.5..1.0) * full * full;
        let aspect = r.gen_range((0.75f64).ln()..(4.0f64 / 3.0).ln()).exp();
        let w = (area * aspect).sqrt().round() as usize;
        let h = (area / aspect).sqrt().round() as usize;
        if w == 0 || h == 0 || w > CANVAS || h > CANVAS || 2 * w * h < CANVAS * CANVAS {
            continue;
        }
        let x0 = r.gen_range(0..=CANVAS - w);
        let y0 = r.gen_range(0..=CANVAS - h);
        return AugOp::Crop { x0, y0, w, h };
    }
}

/// Augmented pixels for `scene`, the ops applied and the oracle score of
/// `caption` against the augmented view.
pub fn augment_with(scene: &Scene, caption: &Caption, ops: Vec<AugOp>) -> (Array3<f64>, AugmentationRecord) {
    let pixels = ops.iter().fold(scene.render(), |img, op| apply_pixels(&img, op));
    let alignment_score = alignment_score(&apply_ops(scene, &ops), caption);
    (
        pixels,
        AugmentationRecord {
            ops,
            alignment_score,
        },
    )
}

pub fn augment(scene: &Scene, caption: &Caption, seed: u64) -> (Array3<f64>, AugmentationRecord) {
    augment_with(scene, caption, sample_ops(seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub seed: u64,
    pub scene: Scene,
    pub caption: Vec<usize>,
    /// Set when the caption was swapped in from another pair.
    pub noisy: bool,
    /// Oracle score of the caption against the unaugmented scene.
    pub alignment: f64,
}

impl PairRecord {
    pub fn caption(&self) -> Result<Caption> {
        Caption::from_tokens(self.caption.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub pairs: Vec<PairRecord>,
}

impl Dataset {
    /// `count` clean pairs, pair `i` generated from a seed derived from `(seed, i)`.
    pub fn generate(count: usize, seed: u64) -> Self {
        let pairs = (0..count)
            .map(|i| {
                let s = rng::stream_seed(seed, &[i as u64]);
                let (scene, caption) = gen_pair(s);
                PairRecord {
                    seed: s,
                    scene,
                    caption: caption.tokens,
                    noisy: false,
                    alignment: 1.0,
                }
            })
            .collect();
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn noisy_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.noisy).count()
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for p in &self.pairs {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: std::io::BufRead>(r: R) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: PairRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            rec.scene.validate()?;
            rec.caption()?;
            pairs.push(rec);
        }
        Ok(Self { pairs })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(f)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Swaps captions for exactly `round(rate * n)` pairs chosen without
/// replacement, cycling them among the chosen pairs so that no pair keeps its
/// own caption. A lone chosen pair takes the caption of a random other pair.
pub fn inject_noise(dataset: &Dataset, rate: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidValue(format!("noise rate must be in [0, 1], got {rate}")));
    }
    let n = dataset.len();
    let k = (rate * n as f64).round() as usize;
    let mut out = dataset.clone();
    if k == 0 || n < 2 {
        return Ok(out);
    }
    let mut r = rng::stream(seed, &[0x4015E]);
    let mut chosen = rand::seq::index::sample(&mut r, n, k).into_vec();
    chosen.shuffle(&mut r);
    let donors: Vec<usize> = if k == 1 {
        let other = (chosen[0] + r.gen_range(1..n)) % n;
        vec![other]
    } else {
        (0..k).map(|t| chosen[(t + 1) % k]).collect()
    };
    for (&target, &donor) in chosen.iter().zip(&donors) {
        let caption = dataset.pairs[donor].caption.clone();
        let parsed = Caption::from_tokens(caption.clone())?;
        let rec = &mut out.pairs[target];
        rec.alignment = alignment_score(&SceneView::of(&rec.scene), &parsed);
        rec.caption = caption;
        rec.noisy = true;
    }
    Ok(out)
}

/// How a selected token was corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskKind {
    Mask,
    Random,
    Unchanged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    pub tokens: Vec<Vec<usize>>,
    /// `(sequence, position)` of every selected token.
    pub positions: Vec<(usize, usize)>,
    /// Original ids at the selected positions.
    pub targets: Vec<usize>,
    pub kinds: Vec<MaskKind>,
}

/// Selects each non-pad token with probability 0.15 and replaces it with
/// `[MASK]` (80%), a random word (10%) or leaves it (10%).
pub fn mask_tokens(sequences: &[Vec<usize>], seed: u64) -> MaskedBatch {
    let mut r = rng::stream(seed, &[0x3A5C]);
    let mut batch = MaskedBatch {
        tokens: sequences.to_vec(),
        positions: Vec::new(),
        targets: Vec::new(),
        kinds: Vec::new(),
    };
    for (b, seq) in batch.tokens.iter_mut().enumerate() {
        for (t, tok) in seq.iter_mut().enumerate() {
            if *tok == PAD || !r.gen_bool(MASK_PROB) {
                continue;
            }
            batch.positions.push((b, t));
            batch.targets.push(*tok);
            let u: f64 = r.gen();
            let kind = if u < 0.8 {
                *tok = MASK;
                MaskKind::Mask
            } else if u < 0.9 {
                *tok = r.gen_range(FIRST_WORD..VOCAB_SIZE);
                MaskKind::Random
            } else {
                MaskKind::Unchanged
            };
            batch.kinds.push(kind);
        }
    }
    batch
}

/// Flattens a `3 x 32 x 32` image in channel-major order.
pub fn flatten(img: &Array3<f64>) -> Vec<f64> {
    img.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_layout() {
        assert_eq!(VOCAB_SIZE, 32);
        assert_eq!(VOCAB[Shape::Triangle.token()], "triangle");
        assert_eq!(VOCAB[Color::Yellow.token()], "yellow");
        assert_eq!(VOCAB[Side::Bottom.token()], "bottom");
        assert_eq!(VOCAB[TOK_AND], "and");
        assert_eq!(VOCAB[TOK_A], "a");
    }

    #[test]
    fn gen_pair_is_deterministic_and_valid() {
        for seed in 0..200 {
            let (scene, caption) = gen_pair(seed);
            assert_eq!(gen_pair(seed), (scene.clone(), caption.clone()));
            scene.validate().unwrap();
            assert!(caption.tokens.len() <= MAX_LEN);
            assert_eq!(alignment_score(&SceneView::of(&scene), &caption), 1.0);
        }
    }

    #[test]
    fn render_is_deterministic_and_colored() {
        let (scene, _) = gen_pair(3);
        let img = scene.render();
        assert_eq!(img, scene.render());
        let o = scene.objects[0];
        let (y, x) = (o.row * CELL + 4, o.col * CELL + 4);
        let rgb = o.color.rgb();
        for c in 0..3 {
            assert_eq!(img[[c, y, x]], rgb[c]);
        }
    }

    #[test]
    fn no_ops_means_identical_pixels_and_full_score() {
        let (scene, caption) = gen_pair(11);
        let (pixels, rec) = augment_with(&scene, &caption, vec![]);
        assert_eq!(pixels, scene.render());
        assert_eq!(rec.alignment_score, 1.0);
    }

    #[test]
    fn grayscale_voids_color_only_caption() {
        let scene = Scene {
            objects: vec![SceneObject { shape: Shape::Circle, color: Color::Blue, row: 0, col: 0 }],
        };
        // a color-only assertion about the circle
        let caption = Caption {
            tokens: vec![Color::Blue.token(), Shape::Circle.token()],
            facts: vec![Fact { shape: Shape::Circle, attribute: Attribute::Color(Color::Blue) }],
        };
        let (_, rec) = augment_with(&scene, &caption, vec![AugOp::Grayscale]);
        assert_eq!(rec.alignment_score, 0.0);
    }

    #[test]
    fn crop_losing_one_of_two_objects() {
        let scene = Scene {
            objects: vec![
                SceneObject { shape: Shape::Square, color: Color::Red, row: 0, col: 0 },
                SceneObject { shape: Shape::Triangle, color: Color::Green, row: 3, col: 3 },
            ],
        };
        let caption = Caption::from_tokens(vec![TOK_A, Shape::Square.token(), TOK_AND, Shape::Triangle.token()]).unwrap();
        let crop = AugOp::Crop { x0: 0, y0: 0, w: 24, h: 24 };
        let (_, rec) = augment_with(&scene, &caption, vec![crop]);
        assert_eq!(rec.alignment_score, 0.5);
    }

    #[test]
    fn flip_inverts_horizontal_facts() {
        let scene = Scene {
            objects: vec![SceneObject { shape: Shape::Square, color: Color::Red, row: 3, col: 1 }],
        };
        let caption = Caption::from_tokens(vec![Shape::Square.token(), Side::Bottom.token(), Side::Left.token()]).unwrap();
        let view = apply_ops(&scene, &[AugOp::HorizontalFlip]);
        assert_eq!(alignment_score(&view, &caption), 2.0 / 3.0);
    }

    #[test]
    fn pixel_flip_and_crop() {
        let (scene, _) = gen_pair(5);
        let img = scene.render();
        let flipped = apply_pixels(&apply_pixels(&img, &AugOp::HorizontalFlip), &AugOp::HorizontalFlip);
        assert_eq!(flipped, img);
        let whole = apply_pixels(&img, &AugOp::Crop { x0: 0, y0: 0, w: 32, h: 32 });
        assert_eq!(whole, img);
        let gray = apply_pixels(&img, &AugOp::Grayscale);
        assert!(gray.index_axis(ndarray::Axis(0), 0) == gray.index_axis(ndarray::Axis(0), 1));
    }

    #[test]
    fn crops_cover_half_the_canvas() {
        for seed in 0..500 {
            for op in sample_ops(seed) {
                if let AugOp::Crop { x0, y0, w, h } = op {
                    assert!(2 * w * h >= CANVAS * CANVAS);
                    assert!(x0 + w <= CANVAS && y0 + h <= CANVAS);
                }
            }
        }
    }

    #[test]
    fn parse_rejects_dangling_words() {
        assert!(parse_facts(&[Color::Red.token()]).is_err());
        assert!(parse_facts(&[Side::Left.token()]).is_err());
        assert!(parse_facts(&[40]).is_err());
    }

    #[test]
    fn noise_counts() {
        let ds = Dataset::generate(50, 1);
        assert_eq!(inject_noise(&ds, 0.0, 0).unwrap(), ds);
        let all = inject_noise(&ds, 1.0, 0).unwrap();
        assert_eq!(all.noisy_count(), 50);
        // a cyclic shift among the chosen pairs: every pair got someone else's caption
        let one = inject_noise(&ds, 0.02, 3).unwrap();
        assert_eq!(one.noisy_count(), 1);
        assert!(inject_noise(&ds, 1.5, 0).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let ds = inject_noise(&Dataset::generate(20, 4), 0.25, 4).unwrap();
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        let back = Dataset::read_jsonl(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn masking_is_seeded_and_skips_padding() {
        let seqs = vec![pad_tokens(&[13, 5, 2, 14, 3]); 40];
        let a = mask_tokens(&seqs, 9);
        assert_eq!(a, mask_tokens(&seqs, 9));
        for &(b, t) in &a.positions {
            assert_ne!(seqs[b][t], PAD);
        }
        for (k, &(b, t)) in a.positions.iter().enumerate() {
            match a.kinds[k] {
                MaskKind::Mask => assert_eq!(a.tokens[b][t], MASK),
                MaskKind::Unchanged => assert_eq!(a.tokens[b][t], seqs[b][t]),
                MaskKind::Random => assert!(a.tokens[b][t] >= FIRST_WORD),
            }
            assert_eq!(a.targets[k], seqs[b][t]);
        }
    }
}
