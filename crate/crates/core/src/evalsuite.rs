//! Retrieval recall, misalignment rank correlation, template zero-shot
//! classification and the multi-objective comparison.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::config::{Objective, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{ImageTower, TextTower};
use crate::rng;
use crate::synthdata::{self, Dataset, COLORS, PAD, SHAPES};
use crate::trainer::{run_training, synthetic_splits, Trainer};

pub const MIN_EVAL_PAIRS: usize = 10;
pub const COMPARISON_HEADER: &str = "objective,seed,recall1_i2t,recall1_t2i,recall5_i2t,recall5_t2i,rho";
const TAG_EVAL_AUG: u64 = 0xE5A6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recall {
    pub at1: f64,
    pub at5: f64,
    pub at10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub pairs: usize,
    pub i2t: Recall,
    pub t2i: Recall,
    pub median_rank_i2t: f64,
    pub median_rank_t2i: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub spearman_rho: f64,
    pub samples: usize,
}

/// 1-based rank of candidate `truth` in `scores` (higher is better); ties go
/// to the lower index.
fn rank_of(scores: &[f64], truth: usize) -> usize {
    let t = scores[truth];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(k, &s)| s > t || (s == t && k < truth))
        .count()
}

fn median(mut v: Vec<usize>) -> f64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

fn recall(ranks: &[usize]) -> Recall {
    let frac = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64;
    Recall {
        at1: frac(1),
        at5: frac(5),
        at10: frac(10),
    }
}

/// Recall@{1,5,10} in both directions for matched rows of unit-norm
/// image and text embeddings, ranking by cosine similarity.
pub fn retrieval_eval(images: ArrayView2<f64>, texts: ArrayView2<f64>) -> Result<RetrievalReport> {
    let n = images.nrows();
    if texts.nrows() != n {
        return Err(Error::ShapeMismatch(format!("{n} images vs {} texts", texts.nrows())));
    }
    if n < MIN_EVAL_PAIRS {
        return Err(Error::TooFewPairs {
            needed: MIN_EVAL_PAIRS,
            got: n,
        });
    }
    if images.ncols() != texts.ncols() {
        return Err(Error::DimMismatch {
            left: images.ncols(),
            right: texts.ncols(),
        });
    }
    // sim[i][t]: image i against text t
    let sim = images.dot(&texts.t());
    let i2t: Vec<usize> = (0..n).map(|i| rank_of(sim.row(i).as_slice().expect("contiguous"), i)).collect();
    let sim_t = sim.t().as_standard_layout().into_owned();
    let t2i: Vec<usize> = (0..n).map(|t| rank_of(sim_t.row(t).as_slice().expect("contiguous"), t)).collect();
    Ok(RetrievalReport {
        pairs: n,
        i2t: recall(&i2t),
        t2i: recall(&t2i),
        median_rank_i2t: median(i2t),
        median_rank_t2i: median(t2i),
    })
}

/// Ranks with ties replaced by their average rank (1-based).
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman correlation with average-rank ties; 0 when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} samples", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::InvalidValue("spearman needs at least two samples".into()));
    }
    Ok(pearson(&average_ranks(a), &average_ranks(b)))
}

/// Rank correlation between model distances and oracle misalignment
/// `1 - alignment_score`.
pub fn misalignment_correlation(model_distance: &[f64], alignment_scores: &[f64]) -> Result<AlignmentReport> {
    let mut distinct: Vec<f64> = alignment_scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::DegenerateOracle(format!(
            "{} distinct alignment scores, need at least 3",
            distinct.len()
        )));
    }
    let misalignment: Vec<f64> = alignment_scores.iter().map(|s| 1.0 - s).collect();
    Ok(AlignmentReport {
        spearman_rho: spearman(model_distance, &misalignment)?,
        samples: model_distance.len(),
    })
}

fn image_embeddings(tower: &ImageTower, images: &[Vec<f64>]) -> Result<Array2<f64>> {
    let width = images.first().map_or(0, Vec::len);
    let x = Array2::from_shape_vec((images.len(), width), images.concat())
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok(tower.forward(x.view())?.0)
}

fn caption_embeddings(tower: &TextTower, captions: &[Vec<usize>]) -> Result<Array2<f64>> {
    let padded: Vec<Vec<usize>> = captions.iter().map(|c| synthdata::pad_tokens(c)).collect();
    Ok(tower.forward(&padded, PAD)?.0)
}

/// Retrieval over the clean images and captions of `eval`.
pub fn evaluate_retrieval(image: &ImageTower, text: &TextTower, eval: &Dataset) -> Result<RetrievalReport> {
    if eval.len() < MIN_EVAL_PAIRS {
        return Err(Error::TooFewPairs {
            needed: MIN_EVAL_PAIRS,
            got: eval.len(),
        });
    }
    let images: Vec<Vec<f64>> = eval.pairs.iter().map(|p| synthdata::flatten(&p.scene.render())).collect();
    let captions: Vec<Vec<usize>> = eval.pairs.iter().map(|p| p.caption.clone()).collect();
    retrieval_eval(
        image_embeddings(image, &images)?.view(),
        caption_embeddings(text, &captions)?.view(),
    )
}

/// Model distance `2(1 - cos)` between each seeded augmented eval image and
/// its caption, correlated against the oracle.
pub fn evaluate_misalignment(image: &ImageTower, text: &TextTower, eval: &Dataset, seed: u64) -> Result<AlignmentReport> {
    let mut images = Vec::with_capacity(eval.len());
    let mut scores = Vec::with_capacity(eval.len());
    for (i, p) in eval.pairs.iter().enumerate() {
        let caption = p.caption()?;
        let (img, record) = synthdata::augment(&p.scene, &caption, rng::stream_seed(seed, &[TAG_EVAL_AUG, i as u64]));
        images.push(synthdata::flatten(&img));
        scores.push(record.alignment_score);
    }
    let captions: Vec<Vec<usize>> = eval.pairs.iter().map(|p| p.caption.clone()).collect();
    let zi = image_embeddings(image, &images)?;
    let zt = caption_embeddings(text, &captions)?;
    let distance: Vec<f64> = zi
        .outer_iter()
        .zip(zt.outer_iter())
        .map(|(a, b)| 2.0 * (1.0 - a.dot(&b)))
        .collect();
    misalignment_correlation(&distance, &scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub accuracy: f64,
    pub samples: usize,
    pub classes: usize,
}

/// Classifies single-object eval scenes among the prompts "a <color> <shape>".
pub fn zero_shot(image: &ImageTower, text: &TextTower, eval: &Dataset) -> Result<ZeroShotReport> {
    let classes: Vec<(usize, usize)> = COLORS
        .iter()
        .flat_map(|c| SHAPES.iter().map(move |s| (c.token(), s.token())))
        .collect();
    let a = synthdata::VOCAB.iter().position(|&w| w == "a").expect("'a' in vocabulary");
    let prompts: Vec<Vec<usize>> = classes.iter().map(|&(c, s)| vec![a, c, s]).collect();
    let singles: Vec<_> = eval.pairs.iter().filter(|p| p.scene.objects.len() == 1).collect();
    if singles.is_empty() {
        return Err(Error::TooFewPairs { needed: 1, got: 0 });
    }
    let images: Vec<Vec<f64>> = singles.iter().map(|p| synthdata::flatten(&p.scene.render())).collect();
    let zi = image_embeddings(image, &images)?;
    let zc = caption_embeddings(text, &prompts)?;
    let sim = zi.dot(&zc.t());
    let mut correct = 0;
    for (row, p) in sim.outer_iter().zip(&singles) {
        let best = (0..classes.len())
            .fold(0, |b, k| if row[k] > row[b] { k } else { b });
        let o = &p.scene.objects[0];
        if classes[best] == (o.color.token(), o.shape.token()) {
            correct += 1;
        }
    }
    Ok(ZeroShotReport {
        accuracy: correct as f64 / singles.len() as f64,
        samples: singles.len(),
        classes: classes.len(),
    })
}

/// Everything the CLI's `eval` prints for one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub retrieval: RetrievalReport,
    pub alignment: AlignmentReport,
    pub zero_shot: ZeroShotReport,
}

pub fn evaluate(trainer: &Trainer, eval: &Dataset) -> Result<EvalSummary> {
    let image = trainer.inference_image_tower();
    let text = &trainer.pair().student.text;
    Ok(EvalSummary {
        retrieval: evaluate_retrieval(&image, text, eval)?,
        alignment: evaluate_misalignment(&image, text, eval, trainer.config().seed)?,
        zero_shot: zero_shot(&image, text, eval)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub objective: Objective,
    pub seed: u64,
    pub recall1_i2t: f64,
    pub recall1_t2i: f64,
    pub recall5_i2t: f64,
    pub recall5_t2i: f64,
    pub rho: f64,
}

impl ComparisonRow {
    fn metrics(&self) -> [f64; 5] {
        [self.recall1_i2t, self.recall1_t2i, self.recall5_i2t, self.recall5_t2i, self.rho]
    }
}

/// Per-run rows in (objective, seed) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl Comparison {
    /// Rows of `objective` (first listing only, in seed order).
    pub fn rows_for(&self, objective: Objective) -> Vec<&ComparisonRow> {
        self.rows.iter().filter(|r| r.objective == objective).collect()
    }

    /// Objectives in first-appearance order, listed once per appearance in the grid.
    fn objective_blocks(&self) -> Vec<(Objective, Vec<&ComparisonRow>)> {
        let mut blocks: Vec<(Objective, Vec<&ComparisonRow>)> = Vec::new();
        let mut last: Option<Objective> = None;
        for r in &self.rows {
            if last != Some(r.objective) || blocks.last().map_or(false, |(_, rows)| rows.iter().any(|x| x.seed == r.seed)) {
                blocks.push((r.objective, Vec::new()));
            }
            blocks.last_mut().expect("pushed").1.push(r);
            last = Some(r.objective);
        }
        blocks
    }

    /// Mean and standard deviation of each metric over the seeds of `objective`.
    pub fn summary(&self, objective: Objective) -> Option<([f64; 5], [f64; 5])> {
        let rows = self.rows_for(objective);
        if rows.is_empty() {
            return None;
        }
        let mut mean = [0.0; 5];
        let mut std = [0.0; 5];
        for k in 0..5 {
            let v: Vec<f64> = rows.iter().map(|r| r.metrics()[k]).collect();
            (mean[k], std[k]) = mean_std(&v);
        }
        Some((mean, std))
    }

    /// Header, one row per run, then `mean` and `std` rows per listed objective.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{COMPARISON_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!("{},{}", r.objective, r.seed));
            for v in r.metrics() {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        for (objective, rows) in self.objective_blocks() {
            let cols: Vec<(f64, f64)> = (0..5)
                .map(|k| mean_std(&rows.iter().map(|r| r.metrics()[k]).collect::<Vec<_>>()))
                .collect();
            for (label, pick) in [("mean", 0), ("std", 1)] {
                out.push_str(&format!("{objective},{label}"));
                for c in &cols {
                    out.push_str(&format!(",{}", if pick == 0 { c.0 } else { c.1 }));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Worker count from `MCD_LAB_THREADS` (positive integer, default 1).
pub fn threads_from_env() -> Result<usize> {
    match std::env::var("MCD_LAB_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("MCD_LAB_THREADS must be a positive integer, got '{v}'"))),
        },
    }
}

/// Trains and evaluates one (objective, seed) cell of the grid.
pub fn run_cell(base: &TrainConfig, objective: Objective, seed: u64) -> Result<ComparisonRow> {
    let cfg = TrainConfig {
        objective,
        seed,
        ..base.clone()
    };
    let (train, eval) = synthetic_splits(&cfg)?;
    let (trainer, _) = run_training::<std::io::Sink>(&cfg, &train, None, None)?;
    let image = trainer.inference_image_tower();
    let text = &trainer.pair().student.text;
    let r = evaluate_retrieval(&image, text, &eval)?;
    let a = evaluate_misalignment(&image, text, &eval, seed)?;
    Ok(ComparisonRow {
        objective,
        seed,
        recall1_i2t: r.i2t.at1,
        recall1_t2i: r.t2i.at1,
        recall5_i2t: r.i2t.at5,
        recall5_t2i: r.t2i.at5,
        rho: a.spearman_rho,
    })
}

/// Trains every objective on every seed with identical data per seed.
/// Cells are distributed over `threads` workers; results do not depend on it.
pub fn compare_objectives(
    base: &TrainConfig,
    objectives: &[Objective],
    seeds: &[u64],
    threads: usize,
) -> Result<Comparison> {
    if objectives.is_empty() {
        return Err(Error::Config("no objectives to compare".into()));
    }
    if seeds.len() < 3 {
        return Err(Error::Config(format!("need at least 3 seeds, got {}", seeds.len())));
    }
    let cells: Vec<(Objective, u64)> = objectives
        .iter()
        .flat_map(|&o| seeds.iter().map(move |&s| (o, s)))
        .collect();
    let results: Mutex<Vec<Option<Result<ComparisonRow>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1).min(cells.len()) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(objective, seed)) = cells.get(k) else { break };
                let row = run_cell(base, objective, seed);
                results.lock().expect("worker panicked")[k] = Some(row);
            });
        }
    });
    let rows = results
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_break_ties_by_index() {
        assert_eq!(rank_of(&[0.5, 0.5, 0.5], 0), 1);
        assert_eq!(rank_of(&[0.5, 0.5, 0.5], 2), 3);
        assert_eq!(rank_of(&[0.1, 0.9, 0.5], 0), 3);
    }

    #[test]
    fn perfect_alignment_recalls_everything() {
        let z = crate::geometry::l2_normalize(
            Array2::from_shape_fn((12, 4), |(i, j)| ((i * 7 + j * 3) % 13) as f64 - 6.0).view(),
        )
        .unwrap();
        let r = retrieval_eval(z.view(), z.view()).unwrap();
        assert_eq!(r.i2t.at1, 1.0);
        assert_eq!(r.t2i.at1, 1.0);
        assert_eq!(r.median_rank_i2t, 1.0);
    }

    #[test]
    fn too_few_pairs() {
        let z = Array2::<f64>::eye(9);
        assert!(matches!(
            retrieval_eval(z.view(), z.view()),
            Err(Error::TooFewPairs { needed: 10, got: 9 })
        ));
    }

    #[test]
    fn average_ranks_split_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn spearman_known_values() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(spearman(&a, &[2.0, 4.0, 6.0, 8.0, 100.0]).unwrap(), 1.0);
        assert_eq!(spearman(&a, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        // d = (0, 0, -1, 1, 0): 1 - 6*2 / (5*24)
        assert!((spearman(&a, &[1.0, 2.0, 4.0, 3.0, 5.0]).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn degenerate_oracle() {
        let d = [0.1, 0.2, 0.3, 0.4];
        assert!(matches!(
            misalignment_correlation(&d, &[1.0; 4]),
            Err(Error::DegenerateOracle(_))
        ));
        assert!(misalignment_correlation(&d, &[1.0, 0.5, 1.0, 0.5]).is_err());
        let s = [1.0, 0.5, 0.0, 0.25];
        let exact: Vec<f64> = s.iter().map(|v| 1.0 - v).collect();
        assert_eq!(misalignment_correlation(&exact, &s).unwrap().spearman_rho, 1.0);
    }

    #[test]
    fn csv_has_summary_rows() {
        let row = |objective, seed, v: f64| ComparisonRow {
            objective,
            seed,
            recall1_i2t: v,
            recall1_t2i: v,
            recall5_i2t: v,
            recall5_t2i: v,
            rho: v,
        };
        let c = Comparison {
            rows: vec![
                row(Objective::Clip, 0, 0.1),
                row(Objective::Clip, 1, 0.3),
                row(Objective::Mcd, 0, 0.5),
                row(Objective::Mcd, 1, 0.5),
            ],
        };
        let csv = c.to_csv();
        assert_eq!(csv.lines().count(), 1 + 4 + 4);
        assert!(csv.contains("clip,mean,0.2,"));
        assert!(csv.contains("mcd,std,0,"));
        let (mean, _) = c.summary(Objective::Clip).unwrap();
        assert!((mean[0] - 0.2).abs() < 1e-15);
    }
}
