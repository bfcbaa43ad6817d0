//! Tiny dual encoders with hand-written backprop, an MLM head, and the
//! momentum teacher for the image tower.
//!
//! Image tower: flattened pixels -> tanh hidden layer -> embedding -> linear
//! projection into the shared space -> L2 normalization.
//!
//! Text tower: token embedding table -> mean over non-pad positions -> linear
//! layer (the sentence state `s`) -> linear projection -> L2 normalization.
//! The hidden state of token `t` in sentence `b` is `E[tok] + s_b`; the MLM
//! head is a linear map from that state to vocabulary logits.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{l2_normalize, l2_normalize_backward, EmbeddingBatch, Modality};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_len: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub shared_dim: usize,
    pub vocab: usize,
    pub max_len: usize,
    pub pad_id: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_len: 3 * 32 * 32,
            hidden: 128,
            embed_dim: 64,
            shared_dim: 32,
            vocab: crate::synthdata::VOCAB_SIZE,
            max_len: crate::synthdata::MAX_LEN,
            pad_id: crate::synthdata::PAD,
        }
    }
}

/// Read and write access to a fixed, named list of weight matrices.
pub trait ParamSet {
    fn tensors(&self) -> Vec<(&'static str, &Array2<f64>)>;
    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Array2<f64>)>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    fn sq_norm(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>()).sum()
    }
}

fn uniform(shape: (usize, usize), fan_in: usize, rng: &mut rng::LabRng) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_simple_fn(shape, || rng.gen_range(-bound..bound))
}

fn bias_sum(grad: &Array2<f64>) -> Array2<f64> {
    grad.sum_axis(Axis(0)).insert_axis(Axis(0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTower {
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
    pub proj: Array2<f64>,
    pub proj_b: Array2<f64>,
}

impl ParamSet for ImageTower {
    fn tensors(&self) -> Vec<(&'static str, &Array2<f64>)> {
        vec![
            ("image.w1", &self.w1),
            ("image.b1", &self.b1),
            ("image.w2", &self.w2),
            ("image.b2", &self.b2),
            ("image.proj", &self.proj),
            ("image.proj_b", &self.proj_b),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Array2<f64>)> {
        vec![
            ("image.w1", &mut self.w1),
            ("image.b1", &mut self.b1),
            ("image.w2", &mut self.w2),
            ("image.b2", &mut self.b2),
            ("image.proj", &mut self.proj),
            ("image.proj_b", &mut self.proj_b),
        ]
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ImageCache {
    x: Array2<f64>,
    h: Array2<f64>,
    f: Array2<f64>,
    p: Array2<f64>,
}

impl ImageTower {
    pub fn init(cfg: &ModelConfig, rng: &mut rng::LabRng) -> Self {
        Self {
            w1: uniform((cfg.image_len, cfg.hidden), cfg.image_len, rng),
            b1: uniform((1, cfg.hidden), cfg.image_len, rng),
            w2: uniform((cfg.hidden, cfg.embed_dim), cfg.hidden, rng),
            b2: uniform((1, cfg.embed_dim), cfg.hidden, rng),
            proj: uniform((cfg.embed_dim, cfg.shared_dim), cfg.embed_dim, rng),
            proj_b: uniform((1, cfg.shared_dim), cfg.embed_dim, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array2::zeros(self.b1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array2::zeros(self.b2.raw_dim()),
            proj: Array2::zeros(self.proj.raw_dim()),
            proj_b: Array2::zeros(self.proj_b.raw_dim()),
        }
    }

    pub fn input_len(&self) -> usize {
        self.w1.nrows()
    }

    /// Forward pass keeping activations; rows of `images` are flattened pixels.
    pub fn forward(&self, images: ArrayView2<f64>) -> Result<(Array2<f64>, ImageCache)> {
        if images.ncols() != self.input_len() {
            return Err(Error::ShapeMismatch(format!(
                "image length {} but encoder expects {}",
                images.ncols(),
                self.input_len()
            )));
        }
        let h = (images.dot(&self.w1) + &self.b1).mapv(f64::tanh);
        let f = h.dot(&self.w2) + &self.b2;
        let p = f.dot(&self.proj) + &self.proj_b;
        let z = l2_normalize(p.view())?;
        Ok((
            z,
            ImageCache {
                x: images.to_owned(),
                h,
                f,
                p,
            },
        ))
    }

    /// Parameter gradients given `dL/dz` for the normalized outputs.
    pub fn backward(&self, cache: &ImageCache, dz: ArrayView2<f64>) -> ImageTower {
        let dp = l2_normalize_backward(cache.p.view(), dz);
        let df = dp.dot(&self.proj.t());
        let dh = df.dot(&self.w2.t());
        let da = dh * cache.h.mapv(|v| 1.0 - v * v);
        ImageTower {
            w1: cache.x.t().dot(&da),
            b1: bias_sum(&da),
            w2: cache.h.t().dot(&df),
            b2: bias_sum(&df),
            proj: cache.f.t().dot(&dp),
            proj_b: bias_sum(&dp),
        }
    }

    /// Momentum update `self <- m * self + (1 - m) * student` of every tensor.
    pub fn ema_from(&mut self, student: &ImageTower, m: f64) -> Result<()> {
        ema(self.tensors_mut(), student.tensors(), m)
    }

    /// [`ImageTower::ema_from`] restricted to the encoder layers, leaving the projection.
    pub fn ema_encoder_from(&mut self, student: &ImageTower, m: f64) -> Result<()> {
        let n = ENCODER_TENSORS;
        ema(
            self.tensors_mut().into_iter().take(n).collect(),
            student.tensors().into_iter().take(n).collect(),
            m,
        )
    }

    /// Embeddings from this tower's encoder layers followed by the given projection.
    pub fn forward_with_projection(
        &self,
        images: ArrayView2<f64>,
        proj: &Array2<f64>,
        proj_b: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        if images.ncols() != self.input_len() {
            return Err(Error::ShapeMismatch(format!(
                "image length {} but encoder expects {}",
                images.ncols(),
                self.input_len()
            )));
        }
        let h = (images.dot(&self.w1) + &self.b1).mapv(f64::tanh);
        let f = h.dot(&self.w2) + &self.b2;
        l2_normalize((f.dot(proj) + proj_b).view())
    }
}

/// `w1, b1, w2, b2` come first in [`ImageTower::tensors`]; the projection follows.
const ENCODER_TENSORS: usize = 4;

fn ema(
    teacher: Vec<(&'static str, &mut Array2<f64>)>,
    student: Vec<(&'static str, &Array2<f64>)>,
    m: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::InvalidValue(format!("momentum must be in [0, 1], got {m}")));
    }
    for ((name, t), (_, s)) in teacher.into_iter().zip(student) {
        if t.dim() != s.dim() {
            return Err(Error::ShapeMismatch(format!(
                "{name}: teacher {:?} vs student {:?}",
                t.dim(),
                s.dim()
            )));
        }
        ndarray::Zip::from(t).and(s).for_each(|t, &s| *t = m * *t + (1.0 - m) * s);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextTower {
    pub tok_emb: Array2<f64>,
    pub w: Array2<f64>,
    pub b: Array2<f64>,
    pub proj: Array2<f64>,
    pub proj_b: Array2<f64>,
}

impl ParamSet for TextTower {
    fn tensors(&self) -> Vec<(&'static str, &Array2<f64>)> {
        vec![
            ("text.tok_emb", &self.tok_emb),
            ("text.w", &self.w),
            ("text.b", &self.b),
            ("text.proj", &self.proj),
            ("text.proj_b", &self.proj_b),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Array2<f64>)> {
        vec![
            ("text.tok_emb", &mut self.tok_emb),
            ("text.w", &mut self.w),
            ("text.b", &mut self.b),
            ("text.proj", &mut self.proj),
            ("text.proj_b", &mut self.proj_b),
        ]
    }
}

/// Per-token hidden states `E[tok] + s_b`, shaped `(batch, max_len, embed_dim)`.
#[derive(Debug, Clone)]
pub struct TextCache {
    tokens: Vec<Vec<usize>>,
    counts: Vec<usize>,
    pooled: Array2<f64>,
    sentence: Array2<f64>,
    p: Array2<f64>,
    pub hidden: Array3<f64>,
}

impl TextTower {
    pub fn init(cfg: &ModelConfig, rng: &mut rng::LabRng) -> Self {
        Self {
            // a lookup table has a fan-in of one
            tok_emb: uniform((cfg.vocab, cfg.embed_dim), 1, rng),
            w: uniform((cfg.embed_dim, cfg.embed_dim), cfg.embed_dim, rng),
            b: uniform((1, cfg.embed_dim), cfg.embed_dim, rng),
            proj: uniform((cfg.embed_dim, cfg.shared_dim), cfg.embed_dim, rng),
            proj_b: uniform((1, cfg.shared_dim), cfg.embed_dim, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tok_emb: Array2::zeros(self.tok_emb.raw_dim()),
            w: Array2::zeros(self.w.raw_dim()),
            b: Array2::zeros(self.b.raw_dim()),
            proj: Array2::zeros(self.proj.raw_dim()),
            proj_b: Array2::zeros(self.proj_b.raw_dim()),
        }
    }

    pub fn vocab(&self) -> usize {
        self.tok_emb.nrows()
    }

    /// Forward pass over padded token sequences of equal length.
    pub fn forward(&self, tokens: &[Vec<usize>], pad_id: usize) -> Result<(Array2<f64>, TextCache)> {
        let vocab = self.vocab();
        let dim = self.tok_emb.ncols();
        let batch = tokens.len();
        let len = tokens.first().map_or(0, Vec::len);
        let mut pooled = Array2::zeros((batch, dim));
        let mut counts = Vec::with_capacity(batch);
        for (b, seq) in tokens.iter().enumerate() {
            if seq.len() != len {
                return Err(Error::ShapeMismatch(format!(
                    "sequence {b} has length {} but {len} expected",
                    seq.len()
                )));
            }
            let mut count = 0;
            for &tok in seq {
                if tok >= vocab {
                    return Err(Error::TokenOutOfRange { token: tok, vocab });
                }
                if tok != pad_id {
                    pooled.row_mut(b).scaled_add(1.0, &self.tok_emb.row(tok));
                    count += 1;
                }
            }
            if count == 0 {
                return Err(Error::EmptySequence(b));
            }
            pooled.row_mut(b).mapv_inplace(|v| v / count as f64);
            counts.push(count);
        }
        let sentence = pooled.dot(&self.w) + &self.b;
        let p = sentence.dot(&self.proj) + &self.proj_b;
        let z = l2_normalize(p.view())?;
        let mut hidden = Array3::zeros((batch, len, dim));
        for (b, seq) in tokens.iter().enumerate() {
            for (t, &tok) in seq.iter().enumerate() {
                let mut h = hidden.index_axis_mut(Axis(0), b);
                let mut h = h.row_mut(t);
                h.assign(&self.tok_emb.row(tok));
                h += &sentence.row(b);
            }
        }
        Ok((
            z,
            TextCache {
                tokens: tokens.to_vec(),
                counts,
                pooled,
                sentence,
                p,
                hidden,
            },
        ))
    }

    /// Parameter gradients from `dL/dz` and, optionally, `dL/dhidden`.
    pub fn backward(
        &self,
        cache: &TextCache,
        dz: ArrayView2<f64>,
        dhidden: Option<&Array3<f64>>,
        pad_id: usize,
    ) -> TextTower {
        let dp = l2_normalize_backward(cache.p.view(), dz);
        let mut ds = dp.dot(&self.proj.t());
        let mut g = self.zeros_like();
        if let Some(dh) = dhidden {
            for (b, seq) in cache.tokens.iter().enumerate() {
                // every position has a hidden state, pads included
                for (t, &tok) in seq.iter().enumerate() {
                    let row = dh.index_axis(Axis(0), b);
                    let row = row.row(t);
                    ds.row_mut(b).scaled_add(1.0, &row);
                    g.tok_emb.row_mut(tok).scaled_add(1.0, &row);
                }
            }
        }
        let dpooled = ds.dot(&self.w.t());
        for (b, seq) in cache.tokens.iter().enumerate() {
            let scale = 1.0 / cache.counts[b] as f64;
            for &tok in seq.iter().filter(|&&t| t != pad_id) {
                g.tok_emb.row_mut(tok).scaled_add(scale, &dpooled.row(b));
            }
        }
        g.w = cache.pooled.t().dot(&ds);
        g.b = bias_sum(&ds);
        g.proj = cache.sentence.t().dot(&dp);
        g.proj_b = bias_sum(&dp);
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlmHead {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

impl ParamSet for MlmHead {
    fn tensors(&self) -> Vec<(&'static str, &Array2<f64>)> {
        vec![("mlm.w", &self.w), ("mlm.b", &self.b)]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Array2<f64>)> {
        vec![("mlm.w", &mut self.w), ("mlm.b", &mut self.b)]
    }
}

impl MlmHead {
    pub fn init(cfg: &ModelConfig, rng: &mut rng::LabRng) -> Self {
        Self {
            w: uniform((cfg.embed_dim, cfg.vocab), cfg.embed_dim, rng),
            b: uniform((1, cfg.vocab), cfg.embed_dim, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array2::zeros(self.b.raw_dim()),
        }
    }

    fn gather(hidden: &Array3<f64>, positions: &[(usize, usize)]) -> Result<Array2<f64>> {
        let (batch, len, dim) = hidden.dim();
        let mut rows = Array2::zeros((positions.len(), dim));
        for (k, &(b, t)) in positions.iter().enumerate() {
            if b >= batch || t >= len {
                return Err(Error::PositionOutOfRange(format!(
                    "({b}, {t}) in a {batch}x{len} batch"
                )));
            }
            rows.row_mut(k).assign(&hidden.index_axis(Axis(0), b).row(t));
        }
        Ok(rows)
    }

    /// One logit row per masked `(sequence, position)`, in mask order.
    pub fn logits(&self, hidden: &Array3<f64>, positions: &[(usize, usize)]) -> Result<Array2<f64>> {
        let rows = Self::gather(hidden, positions)?;
        Ok(rows.dot(&self.w) + &self.b)
    }

    /// Head gradients and `dL/dhidden` given `dL/dlogits`.
    pub fn backward(
        &self,
        hidden: &Array3<f64>,
        positions: &[(usize, usize)],
        dlogits: ArrayView2<f64>,
    ) -> Result<(MlmHead, Array3<f64>)> {
        let rows = Self::gather(hidden, positions)?;
        let drows = dlogits.dot(&self.w.t());
        let mut dhidden = Array3::zeros(hidden.raw_dim());
        for (k, &(b, t)) in positions.iter().enumerate() {
            let mut slot = dhidden.index_axis_mut(Axis(0), b);
            let mut slot = slot.row_mut(t);
            slot += &drows.row(k);
        }
        Ok((
            MlmHead {
                w: rows.t().dot(&dlogits),
                b: dlogits.sum_axis(Axis(0)).insert_axis(Axis(0)),
            },
            dhidden,
        ))
    }
}

/// All student weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub image: ImageTower,
    pub text: TextTower,
    pub mlm: MlmHead,
}

impl ParamSet for EncoderParams {
    fn tensors(&self) -> Vec<(&'static str, &Array2<f64>)> {
        let mut v = self.image.tensors();
        v.extend(self.text.tensors());
        v.extend(self.mlm.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Array2<f64>)> {
        let mut v = self.image.tensors_mut();
        v.extend(self.text.tensors_mut());
        v.extend(self.mlm.tensors_mut());
        v
    }
}

impl EncoderParams {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization from `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut r = rng::stream(seed, &[0x1417]);
        Self {
            image: ImageTower::init(cfg, &mut r),
            text: TextTower::init(cfg, &mut r),
            mlm: MlmHead::init(cfg, &mut r),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            image: self.image.zeros_like(),
            text: self.text.zeros_like(),
            mlm: self.mlm.zeros_like(),
        }
    }
}

/// Normalized image embeddings for a batch of flattened images.
pub fn encode_image(tower: &ImageTower, images: ArrayView2<f64>) -> Result<EmbeddingBatch> {
    let (z, _) = tower.forward(images)?;
    let n = z.nrows();
    EmbeddingBatch::from_normalized(z, vec![Modality::Image; n], (0..n).collect())
}

/// Normalized sentence embeddings and per-token hidden states.
pub fn encode_text(
    tower: &TextTower,
    tokens: &[Vec<usize>],
    pad_id: usize,
) -> Result<(EmbeddingBatch, Array3<f64>)> {
    let (z, cache) = tower.forward(tokens, pad_id)?;
    let n = z.nrows();
    Ok((
        EmbeddingBatch::from_normalized(z, vec![Modality::Text; n], (0..n).collect())?,
        cache.hidden,
    ))
}

pub fn mlm_logits(head: &MlmHead, hidden: &Array3<f64>, positions: &[(usize, usize)]) -> Result<Array2<f64>> {
    head.logits(hidden, positions)
}

/// Student weights plus the momentum teacher's image encoder.
///
/// The teacher owns the encoder layers of the image tower; the projection
/// into the shared space is the student's, as are the text tower and MLM
/// head. Only [`ModelPair::ema_update`] writes to the teacher.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPair {
    pub student: EncoderParams,
    teacher_image: ImageTower,
}

impl ModelPair {
    /// Teacher starts as an exact copy of the student image tower.
    pub fn new(student: EncoderParams) -> Self {
        let teacher_image = student.image.clone();
        Self {
            student,
            teacher_image,
        }
    }

    /// The projection tensors of `teacher_image` are ignored.
    pub fn from_parts(student: EncoderParams, teacher_image: ImageTower) -> Result<Self> {
        for ((name, t), (_, s)) in teacher_image.tensors().into_iter().zip(student.image.tensors()) {
            if t.dim() != s.dim() {
                return Err(Error::ShapeMismatch(format!("{name}: teacher {:?} vs student {:?}", t.dim(), s.dim())));
            }
        }
        let mut pair = Self {
            student,
            teacher_image,
        };
        pair.sync_projection();
        Ok(pair)
    }

    fn sync_projection(&mut self) {
        self.teacher_image.proj.assign(&self.student.image.proj);
        self.teacher_image.proj_b.assign(&self.student.image.proj_b);
    }

    /// The teacher as a complete tower: its encoder layers with the student projection.
    pub fn teacher_image(&self) -> ImageTower {
        let mut t = self.teacher_image.clone();
        t.proj.assign(&self.student.image.proj);
        t.proj_b.assign(&self.student.image.proj_b);
        t
    }

    /// Teacher embeddings of a batch of flattened images.
    pub fn teacher_forward(&self, images: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.teacher_image
            .forward_with_projection(images, &self.student.image.proj, &self.student.image.proj_b)
    }

    /// `teacher <- m * teacher + (1 - m) * student` on the encoder layers.
    pub fn ema_update(&mut self, m: f64) -> Result<()> {
        self.teacher_image.ema_encoder_from(&self.student.image, m)?;
        self.sync_projection();
        Ok(())
    }

    /// Euclidean distance between teacher and student encoder weights.
    pub fn teacher_gap(&self) -> f64 {
        self.teacher_image
            .tensors()
            .into_iter()
            .zip(self.student.image.tensors())
            .take(ENCODER_TENSORS)
            .map(|((_, t), (_, s))| (t - s).mapv(|v| v * v).sum())
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            image_len: 6,
            hidden: 5,
            embed_dim: 4,
            shared_dim: 3,
            vocab: 7,
            max_len: 4,
            pad_id: 0,
        }
    }

    #[test]
    fn zero_image_through_zero_projection_gives_bias_direction() {
        let cfg = small_cfg();
        let mut p = EncoderParams::init(&cfg, 1);
        p.image.proj.fill(0.0);
        p.image.proj_b = array![[3.0, 0.0, 4.0]];
        let z = encode_image(&p.image, Array2::zeros((2, 6)).view()).unwrap();
        for row in z.vectors().outer_iter() {
            assert!((row[0] - 0.6).abs() < 1e-15 && row[1] == 0.0 && (row[2] - 0.8).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_images_identical_embeddings() {
        let cfg = small_cfg();
        let p = EncoderParams::init(&cfg, 2);
        let x = array![[0.1, 0.5, 0.0, 1.0, 0.3, 0.2], [0.1, 0.5, 0.0, 1.0, 0.3, 0.2]];
        let z = encode_image(&p.image, x.view()).unwrap();
        assert_eq!(z.vectors().row(0), z.vectors().row(1));
        for row in z.vectors().outer_iter() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-12);
        }
        assert!(encode_image(&p.image, Array2::zeros((1, 5)).view()).is_err());
    }

    #[test]
    fn text_pooling_properties() {
        let cfg = small_cfg();
        let p = EncoderParams::init(&cfg, 3);
        let (single, hidden) = encode_text(&p.text, &[vec![4, 0, 0, 0]], 0).unwrap();
        // one token: pooled vector is that token's embedding
        let s = p.text.tok_emb.row(4).insert_axis(Axis(0)).dot(&p.text.w) + &p.text.b;
        let raw = s.dot(&p.text.proj) + &p.text.proj_b;
        let expected = l2_normalize(raw.view()).unwrap();
        for (a, b) in single.vectors().iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(hidden.dim(), (1, 4, 4));

        let (a, _) = encode_text(&p.text, &[vec![1, 2, 3, 0]], 0).unwrap();
        let (b, _) = encode_text(&p.text, &[vec![3, 1, 2, 0]], 0).unwrap();
        for (x, y) in a.vectors().iter().zip(b.vectors().iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(matches!(
            encode_text(&p.text, &[vec![7, 0, 0, 0]], 0),
            Err(Error::TokenOutOfRange { token: 7, vocab: 7 })
        ));
        assert!(matches!(encode_text(&p.text, &[vec![0; 4]], 0), Err(Error::EmptySequence(0))));
    }

    #[test]
    fn mlm_logits_shapes() {
        let cfg = small_cfg();
        let p = EncoderParams::init(&cfg, 4);
        let (_, hidden) = encode_text(&p.text, &[vec![1, 2, 3, 0], vec![5, 6, 0, 0]], 0).unwrap();
        assert_eq!(mlm_logits(&p.mlm, &hidden, &[]).unwrap().dim(), (0, 7));
        let one = mlm_logits(&p.mlm, &hidden, &[(1, 0)]).unwrap();
        let direct = hidden.index_axis(Axis(0), 1).row(0).insert_axis(Axis(0)).dot(&p.mlm.w) + &p.mlm.b;
        assert_eq!(one, direct);
        assert_eq!(mlm_logits(&p.mlm, &hidden, &[(0, 0), (0, 2), (1, 1)]).unwrap().nrows(), 3);
        assert!(matches!(
            mlm_logits(&p.mlm, &hidden, &[(2, 0)]),
            Err(Error::PositionOutOfRange(_))
        ));
    }

    #[test]
    fn ema_endpoints() {
        let cfg = small_cfg();
        let mut pair = ModelPair::new(EncoderParams::init(&cfg, 5));
        pair.student = EncoderParams::init(&cfg, 6);
        let before = pair.teacher_image();
        pair.ema_update(1.0).unwrap();
        assert_eq!(pair.teacher_image().w1, before.w1);
        assert_eq!(pair.teacher_image().b2, before.b2);
        pair.ema_update(0.0).unwrap();
        assert_eq!(pair.teacher_image(), pair.student.image);
        assert!(pair.ema_update(1.5).is_err());

        let mut t = ImageTower::init(&cfg, &mut rng::rng_from(0));
        let mut s = t.clone();
        t.w1.fill(1.0);
        s.w1.fill(0.0);
        t.ema_from(&s, 0.994).unwrap();
        assert!(t.w1.iter().all(|&v| v == 0.994));
    }

    #[test]
    fn teacher_starts_as_copy() {
        let pair = ModelPair::new(EncoderParams::init(&small_cfg(), 9));
        assert_eq!(pair.teacher_gap(), 0.0);
    }

    #[test]
    fn teacher_shares_the_student_projection() {
        let cfg = small_cfg();
        let mut pair = ModelPair::new(EncoderParams::init(&cfg, 3));
        pair.student.image.proj.fill(0.5);
        assert_eq!(pair.teacher_image().proj, pair.student.image.proj);
        let x = Array2::from_elem((2, cfg.image_len), 0.3);
        let (z, _) = pair.teacher_image().forward(x.view()).unwrap();
        assert_eq!(pair.teacher_forward(x.view()).unwrap(), z);
        assert_eq!(pair.teacher_gap(), 0.0);
    }
}
