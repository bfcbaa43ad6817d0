//! The training step for every objective, the run loop and checkpointing.
//!
//! One step of the distillation objective:
//!
//! 1. sample one augmented view per image;
//! 2. student forward on images, augmented images and texts; teacher forward
//!    on images and augmented images;
//! 3. unified `[I; T; I']` batch where rows of the same pair are positives;
//! 4. multi-positive contrastive loss, augmented-view terms weighted by `1 - alpha`;
//! 5. log-ratio distillation between student and teacher distances (teacher constant);
//! 6. MLM on a masked copy of the captions;
//! 7. `total = L_C + alpha * L_D + beta * L_MLM`;
//! 8. optimizer step on the student and `log(tau)`;
//! 9. teacher EMA with `m(t)`;
//! 10. schedule advance.

use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{Objective, OptimizerKind, TrainConfig};
use crate::error::{Error, Result};
use crate::geometry::{
    distance_grad_to_similarity, distance_with_floor, similarity_of, EmbeddingBatch, Modality, SimilarityMatrix,
};
use crate::losses::{
    augmented_clip_loss, clip_loss, distill_breakdown, kl_distill_baseline, mlm_loss, mp_nce_weighted,
    ordered_pairs, DistillInputs, KlCenter, LossResult, PairIndexSets, Temperature,
};
use crate::model::{EncoderParams, ImageTower, ModelConfig, ModelPair, ParamSet};
use crate::rng;
use crate::schedules::{alpha_at, aug_nce_weight, momentum_at, ScheduleState};
use crate::synthdata::{self, AugmentationRecord, Dataset, MaskedBatch};

const TAG_BATCH: u64 = 0xBA7C;
const TAG_AUG: u64 = 0xA116;
const TAG_MASK: u64 = 0x3A5C;
const TAG_PAIRS: u64 = 0x9A1B;
const TAG_TRAIN_DATA: u64 = 0x7DA7;
const TAG_NOISE: u64 = 0x4015;
const TAG_EVAL_DATA: u64 = 0xE7A1;

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

pub const METRICS_HEADER: &str = "step,loss_total,loss_c,loss_pos,loss_neg,loss_noisy,loss_mlm,alpha,m,aug_w,grad_norm";

/// Noisy training split and clean evaluation split, both derived from `cfg.seed`.
pub fn synthetic_splits(cfg: &TrainConfig) -> Result<(Dataset, Dataset)> {
    let clean = Dataset::generate(cfg.train_pairs, rng::stream_seed(cfg.seed, &[TAG_TRAIN_DATA]));
    let train = synthdata::inject_noise(&clean, cfg.noise_rate, rng::stream_seed(cfg.seed, &[TAG_NOISE]))?;
    let eval = Dataset::generate(cfg.eval_pairs, rng::stream_seed(cfg.seed, &[TAG_EVAL_DATA]));
    Ok((train, eval))
}

/// Inputs of one step.
#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub images: Array2<f64>,
    pub aug_images: Array2<f64>,
    /// Padded caption tokens.
    pub tokens: Vec<Vec<usize>>,
    pub masked: MaskedBatch,
    pub records: Vec<AugmentationRecord>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn stack(rows: &[Vec<f64>]) -> Array2<f64> {
    let width = rows.first().map_or(0, Vec::len);
    Array2::from_shape_vec((rows.len(), width), rows.concat()).expect("rows of equal length")
}

/// Draws `cfg.batch_size` distinct pairs for `step` and their augmented views.
pub fn prepare_batch(dataset: &Dataset, cfg: &TrainConfig, step: u64) -> Result<Batch> {
    if dataset.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "dataset of {} pairs is smaller than batch_size {}",
            dataset.len(),
            cfg.batch_size
        )));
    }
    let mut r = rng::stream(cfg.seed, &[TAG_BATCH, step]);
    let indices = rand::seq::index::sample(&mut r, dataset.len(), cfg.batch_size).into_vec();
    let mut images = Vec::with_capacity(indices.len());
    let mut augmented = Vec::with_capacity(indices.len());
    let mut tokens = Vec::with_capacity(indices.len());
    let mut records = Vec::with_capacity(indices.len());
    for (k, &i) in indices.iter().enumerate() {
        let pair = &dataset.pairs[i];
        let caption = pair.caption()?;
        let clean = pair.scene.render();
        let ops = if cfg.augment && cfg.objective.uses_augmentation() {
            synthdata::sample_ops(rng::stream_seed(cfg.seed, &[TAG_AUG, step, k as u64]))
        } else {
            Vec::new()
        };
        let (aug, record) = synthdata::augment_with(&pair.scene, &caption, ops);
        images.push(synthdata::flatten(&clean));
        augmented.push(synthdata::flatten(&aug));
        tokens.push(caption.padded());
        records.push(record);
    }
    let masked = synthdata::mask_tokens(&tokens, rng::stream_seed(cfg.seed, &[TAG_MASK, step]));
    Ok(Batch {
        indices,
        images: stack(&images),
        aug_images: stack(&augmented),
        tokens,
        masked,
        records,
    })
}

/// Per-step metrics. Terms an objective does not compute are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub loss_total: f64,
    pub loss_c: f64,
    pub loss_pos: Option<f64>,
    pub loss_neg: Option<f64>,
    pub loss_noisy: Option<f64>,
    pub loss_mlm: Option<f64>,
    /// KL baseline distillation term; not part of the CSV log.
    pub loss_kl: Option<f64>,
    pub alpha: f64,
    pub m: f64,
    pub aug_w: f64,
    pub grad_norm: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

impl StepReport {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.loss_total,
            self.loss_c,
            opt(self.loss_pos),
            opt(self.loss_neg),
            opt(self.loss_noisy),
            opt(self.loss_mlm),
            self.alpha,
            self.m,
            self.aug_w,
            self.grad_norm
        )
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        [self.loss_total, self.loss_c, self.alpha, self.m, self.aug_w, self.grad_norm]
            .into_iter()
            .chain([self.loss_pos, self.loss_neg, self.loss_noisy, self.loss_mlm, self.loss_kl].into_iter().flatten())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }
}

/// Teacher-side embeddings of one batch.
#[derive(Debug, Clone)]
pub struct TeacherTargets {
    pub text: Array2<f64>,
    pub images: Array2<f64>,
    pub aug_images: Array2<f64>,
}

/// Gradient of the total loss with respect to every trainable quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: EncoderParams,
    pub log_tau: f64,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        (self.params.sq_norm() + self.log_tau * self.log_tau).sqrt()
    }
}

fn add_into<P: ParamSet>(dst: &mut P, src: &P) {
    for ((_, d), (_, s)) in dst.tensors_mut().into_iter().zip(src.tensors()) {
        *d += s;
    }
}

#[derive(Debug, Clone, PartialEq)]
enum OptimizerState {
    Sgd,
    /// Moments for every student tensor followed by `log(tau)` as a 1x1 tensor.
    Adam { m: Vec<Array2<f64>>, v: Vec<Array2<f64>>, t: u64 },
}

/// Student, teacher, temperature, schedule and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    pair: ModelPair,
    tau: Temperature,
    schedule: ScheduleState,
    center: KlCenter,
    optimizer: OptimizerState,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        Self::with_model_config(cfg, ModelConfig::default())
    }

    pub fn with_model_config(cfg: &TrainConfig, model_cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let student = EncoderParams::init(&model_cfg, cfg.seed);
        let optimizer = match cfg.optimizer {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adam => {
                let mut zeros: Vec<Array2<f64>> = student
                    .tensors()
                    .into_iter()
                    .map(|(_, t)| Array2::zeros(t.raw_dim()))
                    .collect();
                zeros.push(Array2::zeros((1, 1)));
                OptimizerState::Adam {
                    m: zeros.clone(),
                    v: zeros,
                    t: 0,
                }
            }
        };
        Ok(Self {
            cfg: cfg.clone(),
            model_cfg,
            pair: ModelPair::new(student),
            tau: Temperature::new(cfg.init_tau)?,
            schedule: ScheduleState::with_params(0, cfg.total_steps, cfg.m0, cfg.beta)?,
            center: KlCenter::zeros(cfg.batch_size),
            optimizer,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model_cfg
    }

    pub fn pair(&self) -> &ModelPair {
        &self.pair
    }

    /// Mutable student weights, for tests that probe the loss surface.
    pub fn student_mut(&mut self) -> &mut EncoderParams {
        &mut self.pair.student
    }

    pub fn temperature(&self) -> Temperature {
        self.tau
    }

    pub fn set_temperature(&mut self, tau: Temperature) {
        self.tau = tau;
    }

    pub fn schedule(&self) -> &ScheduleState {
        &self.schedule
    }

    pub fn kl_center(&self) -> &KlCenter {
        &self.center
    }

    /// Image tower used at inference time, per `inference_encoder`.
    pub fn inference_image_tower(&self) -> std::borrow::Cow<'_, ImageTower> {
        match self.cfg.inference_encoder {
            crate::config::EncoderChoice::Student => std::borrow::Cow::Borrowed(&self.pair.student.image),
            crate::config::EncoderChoice::Teacher => std::borrow::Cow::Owned(self.pair.teacher_image()),
        }
    }

    /// Loss report and analytic gradients at the current state, without updating anything.
    pub fn loss_and_gradients(&self, batch: &Batch) -> Result<(StepReport, Gradients)> {
        self.evaluate(batch, None).map(|(report, grads, _)| (report, grads))
    }

    /// Student text embeddings of the batch captions.
    pub fn text_embeddings(&self, batch: &Batch) -> Result<Array2<f64>> {
        Ok(self.pair.student.text.forward(&batch.tokens, self.model_cfg.pad_id)?.0)
    }

    /// Teacher-side embeddings for `batch` under the current weights.
    pub fn teacher_targets(&self, batch: &Batch) -> Result<TeacherTargets> {
        Ok(TeacherTargets {
            text: self.text_embeddings(batch)?,
            images: self.pair.teacher_forward(batch.images.view())?,
            aug_images: self.pair.teacher_forward(batch.aug_images.view())?,
        })
    }

    /// Like [`Trainer::loss_and_gradients`], but the teacher side uses the
    /// given embeddings instead of recomputing them. The analytic gradients
    /// treat the teacher side as constant, so this is the function they
    /// differentiate.
    pub fn loss_with_teacher(&self, batch: &Batch, teacher: &TeacherTargets) -> Result<(StepReport, Gradients)> {
        self.evaluate(batch, Some(teacher)).map(|(report, grads, _)| (report, grads))
    }

    fn evaluate(
        &self,
        batch: &Batch,
        frozen: Option<&TeacherTargets>,
    ) -> Result<(StepReport, Gradients, Option<SimilarityMatrix>)> {
        let student = &self.pair.student;
        let pad = self.model_cfg.pad_id;
        let objective = self.cfg.objective;
        let eps = self.cfg.eps_dist;
        let alpha = alpha_at(&self.schedule);
        let m = momentum_at(&self.schedule);
        let aug_w = match objective {
            Objective::Clip | Objective::ClipAug => 1.0,
            Objective::Mcd | Objective::KlDistill => aug_nce_weight(&self.schedule),
        };
        let beta = self.schedule.beta;
        let tau = self.tau;
        let n = batch.len();

        let (zi, ci) = student.image.forward(batch.images.view())?;
        let (zt, ct) = student.text.forward(&batch.tokens, pad)?;
        let mut dzi = Array2::zeros(zi.raw_dim());
        let mut dzt = Array2::zeros(zt.raw_dim());
        let mut aug = None;
        let mut dzia = None;
        let mut dtau = 0.0;

        let mut report = StepReport {
            step: self.schedule.step,
            loss_total: 0.0,
            loss_c: 0.0,
            loss_pos: None,
            loss_neg: None,
            loss_noisy: None,
            loss_mlm: None,
            loss_kl: None,
            alpha,
            m,
            aug_w,
            grad_norm: 0.0,
        };
        let mut teacher_s_aug = None;
        let mut text_grads = student.text.zeros_like();
        let mut mlm_grads = student.mlm.zeros_like();

        // Backprop of a loss on S = A B^T into both factors.
        let through_sim = |ds: &Array2<f64>, a: &Array2<f64>, b: &Array2<f64>, da: &mut Array2<f64>, db: &mut Array2<f64>| {
            da.scaled_add(1.0, &ds.dot(b));
            db.scaled_add(1.0, &ds.t().dot(a));
        };

        match objective {
            Objective::Clip | Objective::ClipAug => {
                let s = similarity_of(zt.view(), zi.view())?;
                let r = clip_loss(&s, tau)?;
                through_sim(grad(&r, "s")?, &zt, &zi, &mut dzt, &mut dzi);
                dtau += r.tau_grad();
                report.loss_c = r.value;
                if objective == Objective::ClipAug {
                    let (zia, cia) = student.image.forward(batch.aug_images.view())?;
                    let mut d = Array2::zeros(zia.raw_dim());
                    let s2 = similarity_of(zt.view(), zia.view())?;
                    let r2 = augmented_clip_loss(&s2, tau)?;
                    through_sim(grad(&r2, "s_prime")?, &zt, &zia, &mut dzt, &mut d);
                    dtau += r2.tau_grad();
                    report.loss_c += r2.value;
                    aug = Some((zia, cia));
                    dzia = Some(d);
                }
                report.loss_total = report.loss_c;
            }
            Objective::Mcd | Objective::KlDistill => {
                let (zia, cia) = student.image.forward(batch.aug_images.view())?;
                let mut d_aug = Array2::zeros(zia.raw_dim());

                let groups: Vec<usize> = (0..3).flat_map(|_| 0..n).collect();
                let modality: Vec<Modality> = [Modality::Image, Modality::Text, Modality::AugmentedImage]
                    .into_iter()
                    .flat_map(|md| std::iter::repeat(md).take(n))
                    .collect();
                let unified = ndarray::concatenate(ndarray::Axis(0), &[zi.view(), zt.view(), zia.view()])
                    .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
                let unified = EmbeddingBatch::from_normalized(unified, modality, groups.clone())?;
                let sets = PairIndexSets::from_groups(&groups);
                let rc = mp_nce_weighted(&unified, &sets, tau, aug_w)?;
                let dz = grad(&rc, "z")?;
                dzi += &dz.slice(s![0..n, ..]);
                dzt += &dz.slice(s![n..2 * n, ..]);
                d_aug += &dz.slice(s![2 * n..3 * n, ..]);
                dtau += rc.tau_grad();
                report.loss_c = rc.value;

                // stop-gradient: the teacher side is a constant target
                let computed;
                let teacher = match frozen {
                    Some(t) => t,
                    None => {
                        computed = TeacherTargets {
                            text: zt.clone(),
                            images: self.pair.teacher_forward(batch.images.view())?,
                            aug_images: self.pair.teacher_forward(batch.aug_images.view())?,
                        };
                        &computed
                    }
                };
                let (zt_teacher, tzi, tzia) = (&teacher.text, &teacher.images, &teacher.aug_images);
                let s_aug = similarity_of(zt.view(), zia.view())?;
                let t_aug = similarity_of(zt_teacher.view(), tzia.view())?;

                let distill_value = if objective == Objective::Mcd {
                    let s_orig = similarity_of(zt.view(), zi.view())?;
                    let t_orig = similarity_of(zt_teacher.view(), tzi.view())?;
                    let (so, sa) = (distance_with_floor(&s_orig, eps), distance_with_floor(&s_aug, eps));
                    let (to, ta) = (distance_with_floor(&t_orig, eps), distance_with_floor(&t_aug, eps));
                    let pairs = ordered_pairs(
                        n,
                        self.cfg.max_pairs,
                        rng::stream_seed(self.cfg.seed, &[TAG_PAIRS, self.schedule.step]),
                    );
                    let br = distill_breakdown(
                        DistillInputs {
                            student_orig: &so,
                            student_aug: &sa,
                            teacher_orig: &to,
                            teacher_aug: &ta,
                        },
                        &pairs,
                    )?;
                    let ds_orig =
                        distance_grad_to_similarity(&s_orig, grad(&br.total, "d_student_orig")?.view(), eps) * alpha;
                    let ds_aug =
                        distance_grad_to_similarity(&s_aug, grad(&br.total, "d_student_aug")?.view(), eps) * alpha;
                    through_sim(&ds_orig, &zt, &zi, &mut dzt, &mut dzi);
                    through_sim(&ds_aug, &zt, &zia, &mut dzt, &mut d_aug);
                    report.loss_pos = Some(br.pos.value);
                    report.loss_neg = Some(br.neg.value);
                    report.loss_noisy = Some(br.noisy.value);
                    br.total.value
                } else {
                    let r = kl_distill_baseline(&s_aug, &t_aug, &self.center)?;
                    let ds = grad(&r, "s_student")? * alpha;
                    through_sim(&ds, &zt, &zia, &mut dzt, &mut d_aug);
                    report.loss_kl = Some(r.value);
                    teacher_s_aug = Some(t_aug);
                    r.value
                };

                let masked = &batch.masked;
                let (_, cm) = student.text.forward(&masked.tokens, pad)?;
                let logits = student.mlm.logits(&cm.hidden, &masked.positions)?;
                let rm = mlm_loss(logits.view(), &masked.targets)?;
                if !masked.positions.is_empty() {
                    let dlogits = grad(&rm, "logits")? * beta;
                    let (g, dhidden) = student.mlm.backward(&cm.hidden, &masked.positions, dlogits.view())?;
                    mlm_grads = g;
                    let zeros = Array2::zeros((n, self.model_cfg.shared_dim));
                    text_grads = student.text.backward(&cm, zeros.view(), Some(&dhidden), pad);
                }
                report.loss_mlm = Some(rm.value);
                report.loss_total = report.loss_c + alpha * distill_value + beta * rm.value;
                aug = Some((zia, cia));
                dzia = Some(d_aug);
            }
        }

        let mut image_grads = student.image.backward(&ci, dzi.view());
        if let (Some((_, cia)), Some(d)) = (&aug, &dzia) {
            add_into(&mut image_grads, &student.image.backward(cia, d.view()));
        }
        add_into(&mut text_grads, &student.text.backward(&ct, dzt.view(), None, pad));
        let grads = Gradients {
            params: EncoderParams {
                image: image_grads,
                text: text_grads,
                mlm: mlm_grads,
            },
            // d/dlog(tau) = tau * d/dtau
            log_tau: tau.tau() * dtau,
        };
        report.grad_norm = grads.norm();
        if !report.is_finite() || !grads.params.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: report.step,
                detail: format!("{report:?}"),
            });
        }
        Ok((report, grads, teacher_s_aug))
    }

    /// One full optimization step on `batch`.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepReport> {
        let (report, grads, teacher_s_aug) = self.evaluate(batch, None)?;
        self.apply(&grads);
        self.pair.ema_update(report.m)?;
        if let Some(t) = teacher_s_aug {
            self.center.update(&t)?;
        }
        self.schedule.advance();
        Ok(report)
    }

    fn apply(&mut self, grads: &Gradients) {
        let lr = self.cfg.learning_rate;
        let mut params: Vec<&mut Array2<f64>> =
            self.pair.student.tensors_mut().into_iter().map(|(_, t)| t).collect();
        let mut log_tau = Array2::from_elem((1, 1), self.tau.log_tau());
        params.push(&mut log_tau);
        let mut gs: Vec<ArrayView2<f64>> = grads.params.tensors().into_iter().map(|(_, g)| g.view()).collect();
        let g_tau = Array2::from_elem((1, 1), grads.log_tau);
        gs.push(g_tau.view());

        match &mut self.optimizer {
            OptimizerState::Sgd => {
                for (p, g) in params.into_iter().zip(gs) {
                    p.scaled_add(-lr, &g);
                }
            }
            OptimizerState::Adam { m, v, t } => {
                *t += 1;
                let c1 = 1.0 - ADAM_B1.powi(*t as i32);
                let c2 = 1.0 - ADAM_B2.powi(*t as i32);
                for (((p, g), m), v) in params.into_iter().zip(gs).zip(m.iter_mut()).zip(v.iter_mut()) {
                    ndarray::Zip::from(p).and(&g).and(m).and(v).for_each(|p, &g, m, v| {
                        *m = ADAM_B1 * *m + (1.0 - ADAM_B1) * g;
                        *v = ADAM_B2 * *v + (1.0 - ADAM_B2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                    });
                }
            }
        }
        self.tau = Temperature::from_log(log_tau[[0, 0]]);
    }

    /// Runs steps until the schedule reaches `total_steps`, writing one CSV
    /// line per step (after a header) and saving checkpoints every
    /// `checkpoint_every` steps and at the end.
    pub fn train<W: Write>(
        &mut self,
        dataset: &Dataset,
        mut metrics: Option<&mut W>,
        checkpoint: Option<&Path>,
    ) -> Result<Vec<StepReport>> {
        if dataset.is_empty() {
            return Err(Error::Config("training dataset is empty".into()));
        }
        if let Some(w) = metrics.as_deref_mut() {
            writeln!(w, "{METRICS_HEADER}")?;
        }
        let mut reports = Vec::new();
        while self.schedule.step < self.schedule.total_steps {
            let batch = prepare_batch(dataset, &self.cfg, self.schedule.step)?;
            let report = self.train_step(&batch)?;
            if let Some(w) = metrics.as_deref_mut() {
                writeln!(w, "{}", report.csv_line())?;
            }
            reports.push(report);
            if let Some(path) = checkpoint {
                let every = self.cfg.checkpoint_every;
                if every > 0 && self.schedule.step % every == 0 && self.schedule.step < self.schedule.total_steps {
                    self.save_checkpoint(path)?;
                }
            }
        }
        if let Some(w) = metrics {
            w.flush()?;
        }
        if let Some(path) = checkpoint {
            self.save_checkpoint(path)?;
        }
        Ok(reports)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors: Vec<(String, Array2<f64>)> = Vec::new();
        for (name, t) in self.pair.student.tensors() {
            tensors.push((format!("student.{name}"), t.clone()));
        }
        for (name, t) in self.pair.teacher_image().tensors() {
            tensors.push((format!("teacher.{name}"), t.clone()));
        }
        tensors.push(("log_tau".into(), Array2::from_elem((1, 1), self.tau.log_tau())));
        tensors.push(("kl_center".into(), self.center.0.clone().insert_axis(ndarray::Axis(0))));
        if let OptimizerState::Adam { m, v, t } = &self.optimizer {
            let names = self.adam_names();
            for (name, x) in names.iter().zip(m) {
                tensors.push((format!("adam.m.{name}"), x.clone()));
            }
            for (name, x) in names.iter().zip(v) {
                tensors.push((format!("adam.v.{name}"), x.clone()));
            }
            tensors.push(("adam.t".into(), Array2::from_elem((1, 1), *t as f64)));
        }
        Checkpoint {
            schedule: self.schedule,
            seed: self.cfg.seed,
            config: self.cfg.to_file_string(),
            tensors,
        }
    }

    fn adam_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.pair.student.tensors().into_iter().map(|(n, _)| n.to_string()).collect();
        names.push("log_tau".into());
        names
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        Self::from_checkpoint_with(ckpt, ModelConfig::default())
    }

    /// Rebuilds a trainer; every tensor must be present with the shape
    /// implied by the stored config and `model_cfg`.
    pub fn from_checkpoint_with(ckpt: &Checkpoint, model_cfg: ModelConfig) -> Result<Self> {
        let cfg = TrainConfig::parse_str(&ckpt.config)
            .map_err(|e| Error::CorruptCheckpoint(format!("stored config: {e}")))?;
        if cfg.seed != ckpt.seed || cfg.total_steps != ckpt.schedule.total_steps {
            return Err(Error::CorruptCheckpoint("header disagrees with stored config".into()));
        }
        let mut t = Self::with_model_config(&cfg, model_cfg)?;
        for (name, dst) in t.pair.student.tensors_mut() {
            let src = ckpt.get_shaped(&format!("student.{name}"), dst.dim())?;
            dst.assign(src);
        }
        let mut teacher = t.pair.student.image.clone();
        for (name, dst) in teacher.tensors_mut() {
            let src = ckpt.get_shaped(&format!("teacher.{name}"), dst.dim())?;
            dst.assign(src);
        }
        t.pair = ModelPair::from_parts(t.pair.student.clone(), teacher)?;
        t.tau = Temperature::from_log(ckpt.get_shaped("log_tau", (1, 1))?[[0, 0]]);
        t.center = KlCenter(ckpt.get_shaped("kl_center", (1, cfg.batch_size))?.row(0).to_owned());
        let names = t.adam_names();
        if let OptimizerState::Adam { m, v, t: count } = &mut t.optimizer {
            for ((name, m), v) in names.iter().zip(m.iter_mut()).zip(v.iter_mut()) {
                m.assign(ckpt.get_shaped(&format!("adam.m.{name}"), m.dim())?);
                v.assign(ckpt.get_shaped(&format!("adam.v.{name}"), v.dim())?);
            }
            *count = ckpt.get_shaped("adam.t", (1, 1))?[[0, 0]] as u64;
        }
        t.schedule = ckpt.schedule;
        Ok(t)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn grad<'a>(r: &'a LossResult, name: &str) -> Result<&'a Array2<f64>> {
    r.grad(name)
        .ok_or_else(|| Error::InvalidValue(format!("loss result has no '{name}' gradient")))
}

/// Trains from scratch on `dataset`; returns the trained state and every report.
pub fn run_training<W: Write>(
    cfg: &TrainConfig,
    dataset: &Dataset,
    metrics: Option<&mut W>,
    checkpoint: Option<&Path>,
) -> Result<(Trainer, Vec<StepReport>)> {
    let mut trainer = Trainer::new(cfg)?;
    let reports = trainer.train(dataset, metrics, checkpoint)?;
    Ok((trainer, reports))
}
