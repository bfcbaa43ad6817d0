//! Objectives with closed-form gradients.
//!
//! Every function returns a [`LossResult`]: the scalar value and one gradient
//! matrix per differentiable input, keyed by name. Scalars such as the
//! temperature are reported as `1x1` matrices. Teacher-side inputs are treated
//! as constants and never receive a gradient.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::geometry::{DistanceMatrix, EmbeddingBatch, Modality, SimilarityMatrix};
use crate::rng;

pub const TAU_MIN: f64 = 0.01;
pub const TAU_MAX: f64 = 100.0;

/// Softmax temperature of the teacher rows in the KL baseline.
pub const KL_TEACHER_TEMP: f64 = 0.04;
/// Softmax temperature of the student rows in the KL baseline.
pub const KL_STUDENT_TEMP: f64 = 0.1;
/// EMA momentum of the KL baseline's teacher center.
pub const KL_CENTER_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub gradients: BTreeMap<String, Array2<f64>>,
}

impl LossResult {
    pub fn new(value: f64) -> Self {
        Self {
            value,
            gradients: BTreeMap::new(),
        }
    }

    pub fn with_grad(mut self, name: &str, grad: Array2<f64>) -> Self {
        self.gradients.insert(name.to_string(), grad);
        self
    }

    pub fn grad(&self, name: &str) -> Option<&Array2<f64>> {
        self.gradients.get(name)
    }

    /// Gradient with respect to the temperature, 0 if the loss has none.
    pub fn tau_grad(&self) -> f64 {
        self.grad("tau").map_or(0.0, |g| g[[0, 0]])
    }

    /// Adds `weight * other` into `self`, summing gradients with matching names.
    pub fn accumulate(&mut self, other: &LossResult, weight: f64) {
        self.value += weight * other.value;
        for (name, g) in &other.gradients {
            match self.gradients.get_mut(name) {
                Some(acc) => acc.scaled_add(weight, g),
                None => {
                    self.gradients.insert(name.clone(), g * weight);
                }
            }
        }
    }
}

/// Learnable softmax temperature, stored as `log(tau)` and kept inside
/// `[TAU_MIN, TAU_MAX]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature {
    log_tau: f64,
}

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidValue(format!("temperature must be positive, got {tau}")));
        }
        Ok(Self::from_log(tau.ln()))
    }

    /// Builds from `log(tau)`, projecting into the allowed range.
    pub fn from_log(log_tau: f64) -> Self {
        let mut t = Self { log_tau };
        t.project();
        t
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    pub fn log_tau(&self) -> f64 {
        self.log_tau
    }

    /// Gradient-descent step on `log(tau)` followed by projection.
    pub fn step(&mut self, delta_log_tau: f64) {
        self.log_tau += delta_log_tau;
        self.project();
    }

    pub fn project(&mut self) {
        self.log_tau = self.log_tau.clamp(TAU_MIN.ln(), TAU_MAX.ln());
    }
}

fn scalar(v: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), v)
}

fn require_square(s: &Array2<f64>) -> Result<usize> {
    let (rows, cols) = s.dim();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    Ok(rows)
}

fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    max + row.fold(0.0, |acc, &v| acc + (v - max).exp()).ln()
}

fn softmax_row(row: ArrayView1<f64>) -> Array1<f64> {
    let lse = log_sum_exp(row);
    row.mapv(|v| (v - lse).exp())
}

/// `-(1/N) sum_i log softmax(S_i / tau)_i` with gradients `"s"` and `"tau"`.
pub fn info_nce(s: &SimilarityMatrix, tau: Temperature) -> Result<LossResult> {
    let n = require_square(&s.0)?;
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    let t = tau.tau();
    let logits = &s.0 / t;
    let mut value = 0.0;
    // dL/dlogits
    let mut dlogits = Array2::zeros((n, n));
    for (i, row) in logits.outer_iter().enumerate() {
        let lse = log_sum_exp(row);
        value += lse - row[i];
        let mut d = dlogits.row_mut(i);
        for (j, &l) in row.iter().enumerate() {
            d[j] = ((l - lse).exp() - if i == j { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    value /= n as f64;
    let dtau = -(&dlogits * &s.0).sum() / (t * t);
    Ok(LossResult::new(value)
        .with_grad("s", dlogits / t)
        .with_grad("tau", scalar(dtau)))
}

/// Symmetric CLIP loss `(info_nce(S) + info_nce(S^T)) / 2`, gradients `"s"` and `"tau"`.
pub fn clip_loss(s: &SimilarityMatrix, tau: Temperature) -> Result<LossResult> {
    let rows = info_nce(s, tau)?;
    let cols = info_nce(&s.transpose(), tau)?;
    let ds = 0.5 * (&rows.gradients["s"] + &cols.gradients["s"].t());
    Ok(LossResult::new(0.5 * (rows.value + cols.value))
        .with_grad("s", ds)
        .with_grad("tau", scalar(0.5 * (rows.tau_grad() + cols.tau_grad()))))
}

/// CLIP loss over augmented-image/text similarities, gradients `"s_prime"` and `"tau"`.
///
/// Any schedule weight is applied by the caller.
pub fn augmented_clip_loss(s_prime: &SimilarityMatrix, tau: Temperature) -> Result<LossResult> {
    let mut r = clip_loss(s_prime, tau)?;
    let g = r.gradients.remove("s").expect("clip_loss reports s");
    r.gradients.insert("s_prime".into(), g);
    Ok(r)
}

/// Positive and negative index sets over a unified batch.
///
/// Row `i` always belongs to its own positive set and never to its negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct PairIndexSets {
    positives: Vec<Vec<usize>>,
    negatives: Vec<Vec<usize>>,
}

impl PairIndexSets {
    pub fn new(positives: Vec<Vec<usize>>, negatives: Vec<Vec<usize>>) -> Result<Self> {
        let n = positives.len();
        if negatives.len() != n {
            return Err(Error::InvalidPairSets(format!(
                "{n} positive sets but {} negative sets",
                negatives.len()
            )));
        }
        for (i, (pos, neg)) in positives.iter().zip(&negatives).enumerate() {
            if !pos.contains(&i) {
                return Err(Error::InvalidPairSets(format!("row {i} missing from its positives")));
            }
            if let Some(&bad) = pos.iter().chain(neg).find(|&&k| k >= n) {
                return Err(Error::InvalidPairSets(format!("index {bad} >= {n} in row {i}")));
            }
            if let Some(&both) = neg.iter().find(|k| pos.contains(k)) {
                return Err(Error::InvalidPairSets(format!(
                    "index {both} is both positive and negative for row {i}"
                )));
            }
        }
        Ok(Self {
            positives,
            negatives,
        })
    }

    /// Rows sharing a group id are mutual positives; all other rows are negatives.
    pub fn from_groups(group_id: &[usize]) -> Self {
        let (positives, negatives) = (0..group_id.len())
            .map(|i| {
                (0..group_id.len()).partition(|&k| group_id[k] == group_id[i])
            })
            .unzip();
        Self {
            positives,
            negatives,
        }
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    pub fn positives(&self, i: usize) -> &[usize] {
        &self.positives[i]
    }

    pub fn negatives(&self, i: usize) -> &[usize] {
        &self.negatives[i]
    }

    pub fn is_disjoint(&self) -> bool {
        self.positives
            .iter()
            .zip(&self.negatives)
            .all(|(p, n)| n.iter().all(|k| !p.contains(k)))
    }
}

/// Multi-positive contrastive loss over a unified batch with kernel
/// `w(a, b) = exp(a . b / tau)`; gradients `"z"` (per embedding row) and `"tau"`.
pub fn mp_nce(batch: &EmbeddingBatch, sets: &PairIndexSets, tau: Temperature) -> Result<LossResult> {
    mp_nce_weighted(batch, sets, tau, 1.0)
}

/// [`mp_nce`] with every term whose anchor or positive is an augmented image
/// scaled by `aug_weight`.
///
/// The value is the mean over anchors of the mean over `p in P_i \ {i}` of
/// `-log(w_ip / (w_ip + sum_n w_in))`.
pub fn mp_nce_weighted(
    batch: &EmbeddingBatch,
    sets: &PairIndexSets,
    tau: Temperature,
    aug_weight: f64,
) -> Result<LossResult> {
    let m = batch.len();
    if sets.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "{m} embeddings but pair sets for {} rows",
            sets.len()
        )));
    }
    let t = tau.tau();
    let z = batch.vectors();
    let gram = z.dot(&z.t());
    let modality = batch.modality();
    let is_aug = |k: usize| modality[k] == Modality::AugmentedImage;

    let mut value = 0.0;
    let mut dlogits = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        let positives: Vec<usize> = sets.positives(i).iter().copied().filter(|&p| p != i).collect();
        let negatives = sets.negatives(i);
        if positives.is_empty() {
            return Err(Error::EmptyPositives(i));
        }
        if negatives.is_empty() {
            return Err(Error::EmptyNegatives(i));
        }
        let row = gram.row(i);
        let neg_max = negatives
            .iter()
            .map(|&k| row[k] / t)
            .fold(f64::NEG_INFINITY, f64::max);
        let neg_exp: Vec<f64> = negatives.iter().map(|&k| (row[k] / t - neg_max).exp()).collect();
        let neg_sum: f64 = neg_exp.iter().sum();

        for &p in &positives {
            let w = if is_aug(i) || is_aug(p) { aug_weight } else { 1.0 };
            if w == 0.0 {
                continue;
            }
            let coef = w / (m as f64 * positives.len() as f64);
            let lp = row[p] / t;
            let c = lp.max(neg_max);
            let pos_e = (lp - c).exp();
            let scale = (neg_max - c).exp();
            let denom = pos_e + scale * neg_sum;
            value += coef * (c + denom.ln() - lp);
            dlogits[[i, p]] += coef * (pos_e / denom - 1.0);
            for (&k, &e) in negatives.iter().zip(&neg_exp) {
                dlogits[[i, k]] += coef * scale * e / denom;
            }
        }
    }
    let dtau = -(&dlogits * &gram).sum() / (t * t);
    let dgram = dlogits / t;
    let dz = dgram.dot(z) + dgram.t().dot(z);
    Ok(LossResult::new(value)
        .with_grad("z", dz)
        .with_grad("tau", scalar(dtau)))
}

/// Index quadruple for one log-ratio comparison: pair `(a, b)` measured
/// relative to the reference pair `(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogRatioIndex {
    pub i: usize,
    pub j: usize,
    pub a: usize,
    pub b: usize,
}

/// `|log(ns/ds) - log(nt/dt)|` and its partials with respect to the student
/// numerator and denominator.
fn log_ratio_scalar(ns: f64, ds: f64, nt: f64, dt: f64) -> (f64, f64, f64) {
    let r = (ns / ds).ln() - (nt / dt).ln();
    let sign = if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    };
    (r.abs(), sign / ns, -sign / ds)
}

/// Single log-ratio term; gradient `"d_student"` only.
pub fn log_ratio_term(
    d_student: &DistanceMatrix,
    d_teacher: &DistanceMatrix,
    idx: LogRatioIndex,
) -> Result<LossResult> {
    if d_student.shape() != d_teacher.shape() {
        return Err(Error::ShapeMismatch(format!(
            "student {:?} vs teacher {:?}",
            d_student.shape(),
            d_teacher.shape()
        )));
    }
    let ns = d_student.get(idx.a, idx.b)?;
    let ds = d_student.get(idx.i, idx.j)?;
    let nt = d_teacher.get(idx.a, idx.b)?;
    let dt = d_teacher.get(idx.i, idx.j)?;
    let (value, gn, gd) = log_ratio_scalar(ns, ds, nt, dt);
    let mut grad = Array2::zeros(d_student.shape());
    grad[[idx.a, idx.b]] += gn;
    grad[[idx.i, idx.j]] += gd;
    Ok(LossResult::new(value).with_grad("d_student", grad))
}

/// Student and teacher distance matrices for one batch, indexed `[text, image]`.
///
/// The teacher matrices are built from teacher image embeddings against the
/// (shared) text embeddings and act as constants.
#[derive(Debug, Clone, Copy)]
pub struct DistillInputs<'a> {
    pub student_orig: &'a DistanceMatrix,
    pub student_aug: &'a DistanceMatrix,
    pub teacher_orig: &'a DistanceMatrix,
    pub teacher_aug: &'a DistanceMatrix,
}

impl DistillInputs<'_> {
    fn batch_size(&self) -> Result<usize> {
        let (n, cols) = self.student_orig.shape();
        if n != cols {
            return Err(Error::NotSquare { rows: n, cols });
        }
        for (name, m) in [
            ("student_aug", self.student_aug),
            ("teacher_orig", self.teacher_orig),
            ("teacher_aug", self.teacher_aug),
        ] {
            if m.shape() != (n, n) {
                return Err(Error::ShapeMismatch(format!(
                    "{name} is {:?}, expected {n}x{n}",
                    m.shape()
                )));
            }
        }
        Ok(n)
    }
}

/// All `N(N-1)` ordered pairs `(i, j)` with `i != j`, or a seeded sample of
/// `max_pairs` of them (without replacement) when there are more.
pub fn ordered_pairs(n: usize, max_pairs: usize, seed: u64) -> Vec<(usize, usize)> {
    let total = n * n.saturating_sub(1);
    let decode = |k: usize| {
        let i = k / (n - 1);
        let r = k % (n - 1);
        (i, if r >= i { r + 1 } else { r })
    };
    if total <= max_pairs || max_pairs == 0 {
        return (0..total).map(decode).collect();
    }
    let mut picked = sample(&mut rng::rng_from(seed), total, max_pairs).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(decode).collect()
}

/// Positive-pair misalignment: `mean_i l(i, i; i', i)`. Gradients
/// `"d_student_orig"` and `"d_student_aug"`.
pub fn distill_pos(inputs: DistillInputs<'_>) -> Result<LossResult> {
    let n = inputs.batch_size()?;
    let (so, sa) = (inputs.student_orig.values(), inputs.student_aug.values());
    let (to, ta) = (inputs.teacher_orig.values(), inputs.teacher_aug.values());
    let mut g_orig = Array2::zeros((n, n));
    let mut g_aug = Array2::zeros((n, n));
    let mut value = 0.0;
    for i in 0..n {
        let (v, gn, gd) = log_ratio_scalar(sa[[i, i]], so[[i, i]], ta[[i, i]], to[[i, i]]);
        value += v;
        g_aug[[i, i]] += gn;
        g_orig[[i, i]] += gd;
    }
    let inv = 1.0 / n as f64;
    Ok(LossResult::new(value * inv)
        .with_grad("d_student_orig", g_orig * inv)
        .with_grad("d_student_aug", g_aug * inv))
}

/// Negative-pair misalignment over all ordered pairs: `mean_{i!=j} l(i, i; j', i)`.
pub fn distill_neg(inputs: DistillInputs<'_>) -> Result<LossResult> {
    let n = inputs.batch_size()?;
    distill_neg_over(inputs, &ordered_pairs(n, 0, 0))
}

/// [`distill_neg`] averaged over the given `(i, j)` pairs.
pub fn distill_neg_over(inputs: DistillInputs<'_>, pairs: &[(usize, usize)]) -> Result<LossResult> {
    let n = inputs.batch_size()?;
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    check_pairs(n, pairs)?;
    let (so, sa) = (inputs.student_orig.values(), inputs.student_aug.values());
    let (to, ta) = (inputs.teacher_orig.values(), inputs.teacher_aug.values());
    let mut g_orig = Array2::zeros((n, n));
    let mut g_aug = Array2::zeros((n, n));
    let mut value = 0.0;
    for &(i, j) in pairs {
        // text i against augmented image j, relative to the matching pair (i, i)
        let (v, gn, gd) = log_ratio_scalar(sa[[i, j]], so[[i, i]], ta[[i, j]], to[[i, i]]);
        value += v;
        g_aug[[i, j]] += gn;
        g_orig[[i, i]] += gd;
    }
    let inv = 1.0 / pairs.len() as f64;
    Ok(LossResult::new(value * inv)
        .with_grad("d_student_orig", g_orig * inv)
        .with_grad("d_student_aug", g_aug * inv))
}

/// Noisy-pair misalignment over all ordered pairs: `mean_{i!=j} l(i, i; j, j)`.
/// Gradient `"d_student_orig"`.
pub fn distill_noisy(student_orig: &DistanceMatrix, teacher_orig: &DistanceMatrix) -> Result<LossResult> {
    distill_noisy_over(student_orig, teacher_orig, &ordered_pairs(student_orig.shape().0, 0, 0))
}

pub fn distill_noisy_over(
    student_orig: &DistanceMatrix,
    teacher_orig: &DistanceMatrix,
    pairs: &[(usize, usize)],
) -> Result<LossResult> {
    let (n, cols) = student_orig.shape();
    if n != cols {
        return Err(Error::NotSquare { rows: n, cols });
    }
    if teacher_orig.shape() != (n, n) {
        return Err(Error::ShapeMismatch(format!(
            "teacher {:?} vs student {n}x{n}",
            teacher_orig.shape()
        )));
    }
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    check_pairs(n, pairs)?;
    let (so, to) = (student_orig.values(), teacher_orig.values());
    let mut g = Array2::zeros((n, n));
    let mut value = 0.0;
    for &(i, j) in pairs {
        let (v, gn, gd) = log_ratio_scalar(so[[j, j]], so[[i, i]], to[[j, j]], to[[i, i]]);
        value += v;
        g[[j, j]] += gn;
        g[[i, i]] += gd;
    }
    let inv = 1.0 / pairs.len() as f64;
    Ok(LossResult::new(value * inv).with_grad("d_student_orig", g * inv))
}

fn check_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::InvalidValue("no pairs to average over".into()));
    }
    for &(i, j) in pairs {
        if i >= n || j >= n || i == j {
            return Err(Error::IndexOutOfRange {
                row: i,
                col: j,
                rows: n,
                cols: n,
            });
        }
    }
    Ok(())
}

/// The three distillation terms side by side, plus their sum.
#[derive(Debug, Clone)]
pub struct DistillBreakdown {
    pub pos: LossResult,
    pub neg: LossResult,
    pub noisy: LossResult,
    pub total: LossResult,
}

/// `L_pos + L_neg + L_noisy` with exact pair expectations.
pub fn distill_total(inputs: DistillInputs<'_>) -> Result<LossResult> {
    let n = inputs.batch_size()?;
    Ok(distill_breakdown(inputs, &ordered_pairs(n, 0, 0))?.total)
}

/// Computes each distillation term over `pairs` and their sum.
pub fn distill_breakdown(inputs: DistillInputs<'_>, pairs: &[(usize, usize)]) -> Result<DistillBreakdown> {
    let pos = distill_pos(inputs)?;
    let neg = distill_neg_over(inputs, pairs)?;
    let noisy = distill_noisy_over(inputs.student_orig, inputs.teacher_orig, pairs)?;
    let mut total = LossResult::new(0.0);
    total.accumulate(&pos, 1.0);
    total.accumulate(&neg, 1.0);
    total.accumulate(&noisy, 1.0);
    Ok(DistillBreakdown {
        pos,
        neg,
        noisy,
        total,
    })
}

/// Mean cross-entropy over masked positions; gradient `"logits"`.
///
/// An empty mask gives 0 with an empty gradient.
pub fn mlm_loss(logits: ArrayView2<f64>, targets: &[usize]) -> Result<LossResult> {
    let (count, vocab) = logits.dim();
    if targets.len() != count {
        return Err(Error::ShapeMismatch(format!(
            "{count} logit rows but {} targets",
            targets.len()
        )));
    }
    if let Some(&target) = targets.iter().find(|&&t| t >= vocab) {
        return Err(Error::TargetOutOfRange { target, vocab });
    }
    if count == 0 {
        return Ok(LossResult::new(0.0).with_grad("logits", Array2::zeros((0, vocab))));
    }
    let mut grad = Array2::zeros((count, vocab));
    let mut value = 0.0;
    for (k, (row, &target)) in logits.outer_iter().zip(targets).enumerate() {
        let lse = log_sum_exp(row);
        value += lse - row[target];
        let mut g = grad.row_mut(k);
        Zip::from(&mut g).and(&row).for_each(|g, &l| *g = (l - lse).exp());
        g[target] -= 1.0;
    }
    let inv = 1.0 / count as f64;
    Ok(LossResult::new(value * inv).with_grad("logits", grad * inv))
}

/// EMA center subtracted from teacher similarities in the KL baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct KlCenter(pub Array1<f64>);

impl KlCenter {
    pub fn zeros(len: usize) -> Self {
        Self(Array1::zeros(len))
    }

    /// `c <- 0.9 c + 0.1 mean_rows(S_teacher)`.
    pub fn update(&mut self, s_teacher: &SimilarityMatrix) -> Result<()> {
        let (_, cols) = s_teacher.shape();
        if cols != self.0.len() {
            return Err(Error::ShapeMismatch(format!(
                "center of {} vs {cols} columns",
                self.0.len()
            )));
        }
        let mean = s_teacher.0.mean_axis(ndarray::Axis(0)).expect("non-empty");
        self.0 = &self.0 * KL_CENTER_MOMENTUM + &(mean * (1.0 - KL_CENTER_MOMENTUM));
        Ok(())
    }
}

/// Row-wise `KL(softmax((S_t - c)/0.04) || softmax(S_s/0.1))`, mean over rows.
/// Gradient `"s_student"`.
pub fn kl_distill_baseline(
    s_student: &SimilarityMatrix,
    s_teacher: &SimilarityMatrix,
    center: &KlCenter,
) -> Result<LossResult> {
    let (rows, cols) = s_student.shape();
    if s_teacher.shape() != (rows, cols) || center.0.len() != cols {
        return Err(Error::ShapeMismatch(format!(
            "student {:?}, teacher {:?}, center {}",
            s_student.shape(),
            s_teacher.shape(),
            center.0.len()
        )));
    }
    if rows == 0 {
        return Err(Error::InvalidValue("empty similarity matrix".into()));
    }
    let mut grad = Array2::zeros((rows, cols));
    let mut value = 0.0;
    for r in 0..rows {
        let t_logits = (&s_teacher.0.row(r) - &center.0) / KL_TEACHER_TEMP;
        let s_logits = s_student.0.row(r).mapv(|v| v / KL_STUDENT_TEMP);
        let t_lse = log_sum_exp(t_logits.view());
        let s_lse = log_sum_exp(s_logits.view());
        let q = softmax_row(s_logits.view());
        for c in 0..cols {
            let log_p = t_logits[c] - t_lse;
            let p = log_p.exp();
            if p > 0.0 {
                value += p * (log_p - (s_logits[c] - s_lse));
            }
            grad[[r, c]] = (q[c] - p) / KL_STUDENT_TEMP;
        }
    }
    let inv = 1.0 / rows as f64;
    Ok(LossResult::new(value * inv).with_grad("s_student", grad * inv))
}

/// `L_C + alpha * L_D + beta * L_MLM`, gradients combined linearly by name.
pub fn mcd_total(lc: &LossResult, ld: &LossResult, lmlm: &LossResult, alpha: f64, beta: f64) -> LossResult {
    let mut total = LossResult::new(0.0);
    total.accumulate(lc, 1.0);
    total.accumulate(ld, alpha);
    total.accumulate(lmlm, beta);
    total
}
