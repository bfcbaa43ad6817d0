use mcd_lab::evalsuite::{retrieval_eval, spearman};
use mcd_lab::geometry::{distance_with_floor, l2_normalize, similarity_of, DistanceMatrix, SimilarityMatrix, EPS_DIST};
use mcd_lab::losses::{
    distill_total, info_nce, kl_distill_baseline, log_ratio_term, mlm_loss, DistillInputs, KlCenter, LogRatioIndex,
    Temperature,
};
use mcd_lab::model::{EncoderParams, ModelConfig, ModelPair};
use mcd_lab::schedules::{alpha_at, momentum_at, ScheduleState};
use mcd_lab::synthdata::{self, alignment_score, SceneView};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn sized_matrix(lo: f64, hi: f64) -> impl Strategy<Value = Array2<f64>> {
    (2usize..7, 2usize..7).prop_flat_map(move |(r, c)| matrix(r, c, lo, hi))
}

fn square(lo: f64, hi: f64) -> impl Strategy<Value = Array2<f64>> {
    (2usize..7).prop_flat_map(move |n| matrix(n, n, lo, hi))
}

/// Raw rows bounded away from zero so normalization is well defined.
fn unit_rows(n: usize, d: usize) -> impl Strategy<Value = Array2<f64>> {
    matrix(n, d, -1.0, 1.0).prop_filter_map("row too short", |m| l2_normalize((m + 1e-3).view()).ok())
}

fn ranks_brute(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let below = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn pearson_brute(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn squared_distance_matches_cosine_proxy(z in unit_rows(2, 5)) {
        let (x, y) = (z.row(0), z.row(1));
        let sq: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b).powi(2)).sum();
        prop_assert!((sq - 2.0 * (1.0 - x.dot(&y))).abs() < 1e-9);
    }

    #[test]
    fn similarity_transposes(a in unit_rows(4, 3), b in unit_rows(5, 3)) {
        let ab = similarity_of(a.view(), b.view()).unwrap();
        let ba = similarity_of(b.view(), a.view()).unwrap();
        for ((i, j), v) in ab.0.indexed_iter() {
            prop_assert!((v - ba.0[[j, i]]).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_is_idempotent(z in unit_rows(4, 6)) {
        let again = l2_normalize(z.view()).unwrap();
        prop_assert!((&again - &z).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn info_nce_ignores_row_shifts(s in square(-1.0, 1.0), shift in prop::collection::vec(-3.0f64..3.0, 7), tau in 0.05f64..2.0) {
        let n = s.nrows();
        let shifted = Array2::from_shape_fn((n, n), |(i, j)| s[[i, j]] + shift[i]);
        let tau = Temperature::new(tau).unwrap();
        let a = info_nce(&SimilarityMatrix(s), tau).unwrap().value;
        let b = info_nce(&SimilarityMatrix(shifted), tau).unwrap().value;
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn log_ratio_ignores_global_rescaling(
        ds in matrix(4, 4, 0.01, 4.0),
        dt in matrix(4, 4, 0.01, 4.0),
        ks in 0.01f64..100.0,
        kt in 0.01f64..100.0,
        idx in (0usize..4, 0usize..4, 0usize..4, 0usize..4),
    ) {
        let idx = LogRatioIndex { i: idx.0, j: idx.1, a: idx.2, b: idx.3 };
        let (s, t) = (DistanceMatrix::new(ds).unwrap(), DistanceMatrix::new(dt).unwrap());
        let base = log_ratio_term(&s, &t, idx).unwrap().value;
        let scaled_s = log_ratio_term(&s.scaled(ks).unwrap(), &t, idx).unwrap().value;
        let scaled_t = log_ratio_term(&s, &t.scaled(kt).unwrap(), idx).unwrap().value;
        prop_assert!((base - scaled_s).abs() < 1e-9);
        prop_assert!((base - scaled_t).abs() < 1e-9);
    }

    #[test]
    fn distill_vanishes_when_teacher_matches(so in square(-1.0, 1.0), sa_seed in any::<u64>()) {
        let n = so.nrows();
        let sa = Array2::from_shape_fn((n, n), |(i, j)| ((sa_seed >> ((i * n + j) % 60)) & 0xff) as f64 / 255.0 - 0.5);
        let d_o = distance_with_floor(&SimilarityMatrix(so), EPS_DIST);
        let d_a = distance_with_floor(&SimilarityMatrix(sa), EPS_DIST);
        let v = distill_total(DistillInputs {
            student_orig: &d_o,
            student_aug: &d_a,
            teacher_orig: &d_o.clone(),
            teacher_aug: &d_a.clone(),
        })
        .unwrap()
        .value;
        prop_assert_eq!(v, 0.0);
    }

    #[test]
    fn mlm_loss_is_nonnegative(logits in sized_matrix(-20.0, 20.0), picks in prop::collection::vec(any::<prop::sample::Index>(), 7)) {
        let targets: Vec<usize> = (0..logits.nrows()).map(|r| picks[r].index(logits.ncols())).collect();
        prop_assert!(mlm_loss(logits.view(), &targets).unwrap().value >= 0.0);
    }

    #[test]
    fn kl_baseline_is_nonnegative(s in square(-1.0, 1.0), t in square(-1.0, 1.0), c in prop::collection::vec(-0.5f64..0.5, 7)) {
        let n = s.nrows().min(t.nrows());
        let s = s.slice(ndarray::s![..n, ..n]).to_owned();
        let t = t.slice(ndarray::s![..n, ..n]).to_owned();
        let center = KlCenter(Array1::from_vec(c[..n].to_vec()));
        let v = kl_distill_baseline(&SimilarityMatrix(s), &SimilarityMatrix(t), &center).unwrap().value;
        prop_assert!(v >= -1e-12, "{v}");
    }

    #[test]
    fn retrieval_is_invariant_to_relabeling(
        images in unit_rows(12, 4),
        texts in unit_rows(12, 4),
        perm in Just((0..12usize).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let pi = images.select(ndarray::Axis(0), &perm);
        let pt = texts.select(ndarray::Axis(0), &perm);
        let a = retrieval_eval(images.view(), texts.view()).unwrap();
        let b = retrieval_eval(pi.view(), pt.view()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn spearman_matches_brute_force(
        data in prop::collection::vec((0u8..6, -1.0f64..1.0), 3..40),
    ) {
        // small integer range on one side forces ties
        let a: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
        let b: Vec<f64> = data.iter().map(|d| d.1).collect();
        let expected = pearson_brute(&ranks_brute(&a), &ranks_brute(&b));
        let got = spearman(&a, &b).unwrap();
        if expected.is_finite() {
            prop_assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
        } else {
            prop_assert_eq!(got, 0.0);
        }
    }

    #[test]
    fn captions_fit_their_own_scene(seed in any::<u64>(), other in any::<u64>()) {
        let (scene, caption) = synthdata::gen_pair(seed);
        prop_assert_eq!(synthdata::gen_pair(seed), (scene.clone(), caption.clone()));
        prop_assert_eq!(alignment_score(&SceneView::of(&scene), &caption), 1.0);
        let (other_scene, _) = synthdata::gen_pair(other);
        prop_assert!(alignment_score(&SceneView::of(&other_scene), &caption) <= 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn schedules_are_monotone(total in 1u64..3000) {
        let mut prev = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for t in 0..=total {
            let s = ScheduleState::new(total).unwrap().at(t).unwrap();
            let cur = (momentum_at(&s), alpha_at(&s));
            prop_assert!(cur.0 >= prev.0 && cur.1 >= prev.1);
            prop_assert_eq!(cur, (momentum_at(&s), alpha_at(&s)));
            prev = cur;
        }
    }

    #[test]
    fn teacher_follows_student_at_zero_momentum(seed in any::<u64>()) {
        let cfg = ModelConfig { image_len: 12, hidden: 6, embed_dim: 5, shared_dim: 4, vocab: 9, max_len: 5, pad_id: 0 };
        let mut pair = ModelPair::new(EncoderParams::init(&cfg, seed));
        pair.student = EncoderParams::init(&cfg, seed.wrapping_add(1));
        pair.ema_update(0.0).unwrap();
        let x = Array2::from_shape_fn((3, 12), |(i, j)| ((i * 12 + j) as f64 * 0.37).sin());
        let (z, _) = pair.student.image.forward(x.view()).unwrap();
        prop_assert_eq!(pair.teacher_forward(x.view()).unwrap(), z.clone());
        prop_assert_eq!(pair.teacher_forward(x.view()).unwrap(), z);
    }
}
