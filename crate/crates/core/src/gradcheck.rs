//! Central finite-difference checks of every analytic gradient.

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Objective, TrainConfig};
use crate::error::Result;
use crate::geometry::{l2_normalize_backward, DistanceMatrix, EmbeddingBatch, Modality, SimilarityMatrix};
use crate::losses::{
    augmented_clip_loss, clip_loss, distill_neg, distill_noisy, distill_pos, distill_total, info_nce,
    kl_distill_baseline, log_ratio_term, mlm_loss, mp_nce_weighted, DistillInputs, KlCenter, LogRatioIndex, LossResult,
    PairIndexSets, Temperature,
};
use crate::model::{EncoderParams, ModelConfig, ParamSet};
use crate::rng::{self, LabRng};
use crate::trainer::{prepare_batch, synthetic_splits, Trainer};

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor. Central differences carry roundoff of about
/// `eps * |f| / h`, near 1e-10 here, so entries smaller than this floor are
/// effectively compared with an absolute tolerance of `REL_TOL * REL_FLOOR`.
pub const REL_FLOOR: f64 = 1e-5;
pub const DEFAULT_INSTANCES: usize = 20;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub instances: usize,
    pub entries: usize,
    pub worst_rel_err: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.worst_rel_err <= REL_TOL
    }
}

struct Tally {
    entries: usize,
    worst: f64,
}

impl Tally {
    fn new() -> Self {
        Self { entries: 0, worst: 0.0 }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        self.entries += 1;
        let e = rel_err(analytic, numeric);
        // NaN must never pass
        self.worst = if e.is_nan() { f64::INFINITY } else { self.worst.max(e) };
    }

    /// Compares `analytic` against central differences of `f` around `x`.
    fn matrix(&mut self, x: &Array2<f64>, analytic: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) {
        assert_eq!(x.dim(), analytic.dim(), "gradient shape");
        let mut probe = x.clone();
        for idx in ndarray::indices(x.dim()) {
            let orig = probe[idx];
            probe[idx] = orig + FD_STEP;
            let up = f(&probe);
            probe[idx] = orig - FD_STEP;
            let down = f(&probe);
            probe[idx] = orig;
            self.record(analytic[idx], (up - down) / (2.0 * FD_STEP));
        }
    }

    fn scalar(&mut self, x: f64, analytic: f64, f: impl Fn(f64) -> f64) {
        let numeric = (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP);
        self.record(analytic, numeric);
    }

    fn finish(self, name: &str, instances: usize) -> CheckResult {
        CheckResult {
            name: name.to_string(),
            instances,
            entries: self.entries,
            worst_rel_err: self.worst,
        }
    }
}

fn uniform(r: &mut LabRng, shape: (usize, usize), lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || r.gen_range(lo..hi))
}

fn rand_tau(r: &mut LabRng) -> Temperature {
    Temperature::new(r.gen_range(0.2..2.0)).expect("positive")
}

fn g(r: &LossResult, name: &str) -> Array2<f64> {
    r.grad(name).unwrap_or_else(|| panic!("missing gradient '{name}'")).clone()
}

fn check_similarity_loss(
    name: &str,
    seed: u64,
    instances: usize,
    key: &str,
    loss: fn(&SimilarityMatrix, Temperature) -> Result<LossResult>,
) -> Result<CheckResult> {
    let mut t = Tally::new();
    for k in 0..instances {
        let mut r = rng::stream(seed, &[0x51, k as u64]);
        let n = r.gen_range(2..7);
        let s = uniform(&mut r, (n, n), -1.0, 1.0);
        let tau = rand_tau(&mut r);
        let res = loss(&SimilarityMatrix(s.clone()), tau)?;
        t.matrix(&s, &g(&res, key), |x| loss(&SimilarityMatrix(x.clone()), tau).expect("valid").value);
        t.scalar(tau.tau(), res.tau_grad(), |v| {
            loss(&SimilarityMatrix(s.clone()), Temperature::new(v).expect("positive"))
                .expect("valid")
                .value
        });
    }
    Ok(t.finish(name, instances))
}

fn check_mp_nce(seed: u64, instances: usize) -> Result<CheckResult> {
    let mut t = Tally::new();
    for k in 0..instances {
        let mut r = rng::stream(seed, &[0x52, k as u64]);
        let n = r.gen_range(2..5);
        let dim = r.gen_range(2..6);
        let raw = uniform(&mut r, (3 * n, dim), -1.0, 1.0);
        let tau = rand_tau(&mut r);
        let aug_w = r.gen_range(0.0..1.0);
        let groups: Vec<usize> = (0..3).flat_map(|_| 0..n).collect();
        let modality: Vec<Modality> = [Modality::Image, Modality::Text, Modality::AugmentedImage]
            .into_iter()
            .flat_map(|m| std::iter::repeat(m).take(n))
            .collect();
        let sets = PairIndexSets::from_groups(&groups);
        let eval = |x: &Array2<f64>, tau: Temperature| {
            let b = EmbeddingBatch::with_tags(x.view(), modality.clone(), groups.clone()).expect("nonzero rows");
            mp_nce_weighted(&b, &sets, tau, aug_w).expect("valid")
        };
        let res = eval(&raw, tau);
        // the loss sees normalized rows; check through the normalization
        let dx = l2_normalize_backward(raw.view(), g(&res, "z").view());
        t.matrix(&raw, &dx, |x| eval(x, tau).value);
        t.scalar(tau.tau(), res.tau_grad(), |v| eval(&raw, Temperature::new(v).expect("positive")).value);
    }
    Ok(t.finish("mp_nce", instances))
}

fn rand_distances(r: &mut LabRng, n: usize) -> Array2<f64> {
    uniform(r, (n, n), 0.3, 3.0)
}

fn dm(x: &Array2<f64>) -> DistanceMatrix {
    DistanceMatrix::new(x.clone()).expect("positive distances")
}

fn check_log_ratio(seed: u64, instances: usize) -> Result<CheckResult> {
    let mut t = Tally::new();
    for k in 0..instances {
        let mut r = rng::stream(seed, &[0x53, k as u64]);
        let n = r.gen_range(2..5);
        let ds = rand_distances(&mut r, n);
        let dt = dm(&rand_distances(&mut r, n));
        let idx = LogRatioIndex {
            i: r.gen_range(0..n),
            j: r.gen_range(0..n),
            a: r.gen_range(0..n),
            b: r.gen_range(0..n),
        };
        let res = log_ratio_term(&dm(&ds), &dt, idx)?;
        t.matrix(&ds, &g(&res, "d_student"), |x| log_ratio_term(&dm(x), &dt, idx).expect("valid").value);
    }
    Ok(t.finish("log_ratio_term", instances))
}

fn check_distill(
    name: &str,
    seed: u64,
    instances: usize,
    loss: fn(DistillInputs<'_>) -> Result<LossResult>,
) -> Result<CheckResult> {
    let mut t = Tally::new();
    for k in 0..instances {
        let mut r = rng::stream(seed, &[0x54, k as u64]);
        let n = r.gen_range(2..6);
        let so = rand_distances(&mut r, n);
        let sa = rand_distances(&mut r, n);
        let to = dm(&rand_distances(&mut r, n));
        let ta = dm(&rand_distances(&mut r, n));
        let eval = |so: &Array2<f64>, sa: &Array2<f64>| {
            let (so, sa) = (dm(so), dm(sa));
            loss(DistillInputs {
                student_orig: &so,
                student_aug: &sa,
                teacher_orig: &to,
                teacher_aug: &ta,
            })
            .expect("valid")
        };
        let res = eval(&so, &sa);
        t.matrix(&so, &g(&res, "d_student_orig"), |x| eval(x, &sa).value);
        let ga = res.grad("d_student_aug").cloned().unwrap_or_else(|| Array2::zeros((n, n)));
        t.matrix(&sa, &ga, |x| eval(&so, x).value);
    }
    Ok(t.finish(name, instances))
}

fn noisy_as_distill(inputs: DistillInputs<'_>) -> Result<LossResult> {
    distill_noisy(inputs.student_orig, inputs.teacher_orig)
}

fn check_mlm(seed: u64, instances: usize) -> Result<CheckResult> {
    let mut t = Tally::new();
    for k in 0..instances {
        let mut r = rng::stream(seed, &[0x55, k as u64]);
        let count = r.gen_range(1..6);
        let vocab = r.gen_range(2..12);
        let logits = uniform(&mut r, (count, vocab), -3.0, 3.0);
        let targets: Vec<usize> = (0..count).map(|_| r.gen_range(0..vocab)).collect();
        let res = mlm_loss(logits.view(), &targets)?;
        t.matrix(&logits, &g(&res, "logits"), |x| mlm_loss(x.view(), &targets).expect("valid").value);
    }
    Ok(t.finish("mlm_loss", instances))
}

fn check_kl(seed: u64, instances: usize) -> Result<CheckResult> {
    let mut t = Tally::new();
    for k in 0..instances {
        let mut r = rng::stream(seed, &[0x56, k as u64]);
        let rows = r.gen_range(1..5);
        let cols = r.gen_range(2..6);
        let ss = uniform(&mut r, (rows, cols), -1.0, 1.0);
        let st = SimilarityMatrix(uniform(&mut r, (rows, cols), -1.0, 1.0));
        let center = KlCenter(uniform(&mut r, (1, cols), -0.2, 0.2).row(0).to_owned());
        let res = kl_distill_baseline(&SimilarityMatrix(ss.clone()), &st, &center)?;
        t.matrix(&ss, &g(&res, "s_student"), |x| {
            kl_distill_baseline(&SimilarityMatrix(x.clone()), &st, &center)
                .expect("valid")
                .value
        });
    }
    Ok(t.finish("kl_distill_baseline", instances))
}

fn small_model() -> ModelConfig {
    ModelConfig {
        image_len: 10,
        hidden: 6,
        embed_dim: 5,
        shared_dim: 4,
        vocab: 9,
        max_len: 5,
        pad_id: 0,
    }
}

/// Checks every encoder parameter against `sum(G * z_image) + sum(G' * z_text)
/// + sum(H * hidden) + sum(K * mlm_logits)` for random weights `G, G', H, K`.
fn check_encoders(seed: u64, instances: usize) -> Result<CheckResult> {
    let cfg = small_model();
    let mut t = Tally::new();
    for k in 0..instances {
        let mut r = rng::stream(seed, &[0x57, k as u64]);
        let params = EncoderParams::init(&cfg, rng::stream_seed(seed, &[0x58, k as u64]));
        let n = r.gen_range(2..5);
        let images = uniform(&mut r, (n, cfg.image_len), 0.0, 1.0);
        let tokens: Vec<Vec<usize>> = (0..n)
            .map(|_| {
                let len = r.gen_range(1..=cfg.max_len);
                (0..cfg.max_len)
                    .map(|p| if p < len { r.gen_range(1..cfg.vocab) } else { cfg.pad_id })
                    .collect()
            })
            .collect();
        let positions: Vec<(usize, usize)> = (0..3).map(|_| (r.gen_range(0..n), 0)).collect();
        let gi = uniform(&mut r, (n, cfg.shared_dim), -1.0, 1.0);
        let gt = uniform(&mut r, (n, cfg.shared_dim), -1.0, 1.0);
        let h = Array3::from_shape_simple_fn((n, cfg.max_len, cfg.embed_dim), || r.gen_range(-1.0..1.0));
        let kk = uniform(&mut r, (positions.len(), cfg.vocab), -1.0, 1.0);

        let objective = |p: &EncoderParams| -> f64 {
            let (zi, _) = p.image.forward(images.view()).expect("valid");
            let (zt, cache) = p.text.forward(&tokens, cfg.pad_id).expect("valid");
            let logits = p.mlm.logits(&cache.hidden, &positions).expect("valid");
            (&zi * &gi).sum() + (&zt * &gt).sum() + (&cache.hidden * &h).sum() + (&logits * &kk).sum()
        };

        let (_, ci) = params.image.forward(images.view())?;
        let (_, ct) = params.text.forward(&tokens, cfg.pad_id)?;
        let (mlm_grads, dhidden_mlm) = params.mlm.backward(&ct.hidden, &positions, kk.view())?;
        let dhidden = &h + &dhidden_mlm;
        let grads = EncoderParams {
            image: params.image.backward(&ci, gi.view()),
            text: params.text.backward(&ct, gt.view(), Some(&dhidden), cfg.pad_id),
            mlm: mlm_grads,
        };
        let analytic: Vec<Array2<f64>> = grads.tensors().into_iter().map(|(_, a)| a.clone()).collect();
        for (slot, a) in analytic.iter().enumerate() {
            let x = params.tensors()[slot].1.clone();
            t.matrix(&x, a, |probe| {
                let mut p = params.clone();
                p.tensors_mut()[slot].1.assign(probe);
                objective(&p)
            });
        }
    }
    Ok(t.finish("encoder_backprop", instances))
}

/// Total training loss of each objective against a sample of student
/// weights and `log(tau)`, evaluated a few steps into a run so that the
/// teacher differs from the student. Teacher-side text embeddings are held
/// at their unperturbed values (stop-gradient).
fn check_train_step(objective: Objective, seed: u64, instances: usize, probes: usize) -> Result<CheckResult> {
    let mut t = Tally::new();
    for k in 0..instances {
        let cfg = TrainConfig {
            batch_size: 5,
            total_steps: 6,
            train_pairs: 30,
            eval_pairs: 10,
            learning_rate: 0.05,
            objective,
            seed: rng::stream_seed(seed, &[0x59, k as u64]),
            ..TrainConfig::default()
        };
        let (train, _) = synthetic_splits(&cfg)?;
        let mut trainer = Trainer::new(&cfg)?;
        for step in 0..3 {
            trainer.train_step(&prepare_batch(&train, &cfg, step)?)?;
        }
        let batch = prepare_batch(&train, &cfg, 3)?;
        let (_, grads) = trainer.loss_and_gradients(&batch)?;
        let mut r = rng::stream(cfg.seed, &[0x5A]);
        let names: Vec<&'static str> = grads.params.tensors().into_iter().map(|(n, _)| n).collect();
        let frozen = trainer.teacher_targets(&batch)?;
        let total = |tr: &Trainer| tr.loss_with_teacher(&batch, &frozen).expect("finite").0.loss_total;
        for _ in 0..probes {
            let slot = r.gen_range(0..names.len());
            let (rows, cols) = grads.params.tensors()[slot].1.dim();
            let idx = (r.gen_range(0..rows), r.gen_range(0..cols));
            let analytic = grads.params.tensors()[slot].1[idx];
            let x = trainer.pair().student.tensors()[slot].1[idx];
            t.scalar(x, analytic, |v| {
                let mut probe = trainer.clone();
                probe.student_mut().tensors_mut()[slot].1[idx] = v;
                total(&probe)
            });
        }
        let log_tau = trainer.temperature().log_tau();
        t.scalar(log_tau, grads.log_tau, |v| {
            let mut probe = trainer.clone();
            probe.set_temperature(Temperature::from_log(v));
            total(&probe)
        });
    }
    Ok(t.finish(&format!("train_step_{objective}"), instances))
}

/// Runs every check with `instances` seeded random instances each.
pub fn run_suite(seed: u64, instances: usize) -> Result<Vec<CheckResult>> {
    let mut out = vec![
        check_similarity_loss("info_nce", seed, instances, "s", info_nce)?,
        check_similarity_loss("clip_loss", seed, instances, "s", clip_loss)?,
        check_similarity_loss("augmented_clip_loss", seed, instances, "s_prime", augmented_clip_loss)?,
        check_mp_nce(seed, instances)?,
        check_log_ratio(seed, instances)?,
        check_distill("distill_pos", seed, instances, distill_pos)?,
        check_distill("distill_neg", seed, instances, distill_neg)?,
        check_distill("distill_noisy", seed, instances, noisy_as_distill)?,
        check_distill("distill_total", seed, instances, distill_total)?,
        check_mlm(seed, instances)?,
        check_kl(seed, instances)?,
        check_encoders(seed, instances)?,
    ];
    for objective in Objective::ALL {
        out.push(check_train_step(objective, seed, instances, 8)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_floor() {
        assert_eq!(rel_err(0.0, 0.0), 0.0);
        assert_eq!(rel_err(1.0, 1.0), 0.0);
        assert!((rel_err(1e-9, 0.0) - 1e-4).abs() < 1e-15);
        assert!((rel_err(2.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let mut t = Tally::new();
        let x = Array2::from_elem((2, 2), 0.5);
        t.matrix(&x, &Array2::zeros((2, 2)), |x| x.sum());
        assert!(t.finish("bogus", 1).worst_rel_err > 0.9);
    }

}
