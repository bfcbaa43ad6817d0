//! Embedding-space primitives: row normalization, cosine-similarity matrices
//! and the squared-Euclidean distance proxy `D = 2(1 - S)`.

use ndarray::{Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};

/// Lower clamp applied to distances before any logarithm.
pub const EPS_DIST: f64 = 1e-6;

/// Rows with a norm at or below this are rejected by [`l2_normalize`].
pub const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Image,
    Text,
    AugmentedImage,
}

/// Rows of unit-norm vectors, each tagged with its modality and the index of
/// the image-text pair it came from.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch {
    vectors: Array2<f64>,
    modality: Vec<Modality>,
    group_id: Vec<usize>,
}

impl EmbeddingBatch {
    /// Normalizes `raw` and tags every row with `modality`; row `i` gets group `i`.
    pub fn new(raw: ArrayView2<f64>, modality: Modality) -> Result<Self> {
        let n = raw.nrows();
        Self::with_tags(raw, vec![modality; n], (0..n).collect())
    }

    pub fn with_tags(
        raw: ArrayView2<f64>,
        modality: Vec<Modality>,
        group_id: Vec<usize>,
    ) -> Result<Self> {
        if raw.nrows() == 0 {
            return Err(Error::InvalidValue("embedding batch needs at least one row".into()));
        }
        if modality.len() != raw.nrows() || group_id.len() != raw.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows but {} modality tags and {} group ids",
                raw.nrows(),
                modality.len(),
                group_id.len()
            )));
        }
        Ok(Self {
            vectors: l2_normalize(raw)?,
            modality,
            group_id,
        })
    }

    /// Wraps vectors that are already unit norm (checked to 1e-6).
    pub fn from_normalized(
        vectors: Array2<f64>,
        modality: Vec<Modality>,
        group_id: Vec<usize>,
    ) -> Result<Self> {
        if vectors.nrows() == 0 {
            return Err(Error::InvalidValue("embedding batch needs at least one row".into()));
        }
        if modality.len() != vectors.nrows() || group_id.len() != vectors.nrows() {
            return Err(Error::ShapeMismatch("tag count differs from row count".into()));
        }
        for (i, row) in vectors.outer_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidValue(format!("row {i} has norm {norm}, expected 1")));
            }
        }
        Ok(Self {
            vectors,
            modality,
            group_id,
        })
    }

    /// Stacks batches row-wise, keeping their tags.
    pub fn concat(parts: &[&EmbeddingBatch]) -> Result<Self> {
        let dim = parts
            .first()
            .map(|p| p.dim())
            .ok_or_else(|| Error::InvalidValue("nothing to concatenate".into()))?;
        for p in parts {
            if p.dim() != dim {
                return Err(Error::DimMismatch {
                    left: dim,
                    right: p.dim(),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|p| p.vectors.view()).collect();
        let vectors = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Ok(Self {
            vectors,
            modality: parts.iter().flat_map(|p| p.modality.iter().copied()).collect(),
            group_id: parts.iter().flat_map(|p| p.group_id.iter().copied()).collect(),
        })
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn modality(&self) -> &[Modality] {
        &self.modality
    }

    pub fn group_id(&self) -> &[usize] {
        &self.group_id
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

/// Cosine similarities, `values[[i, j]] = text_i . image_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(pub Array2<f64>);

impl SimilarityMatrix {
    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn transpose(&self) -> SimilarityMatrix {
        SimilarityMatrix(self.0.t().to_owned())
    }
}

/// Distances `2(1 - S)`, every entry finite and strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(Array2<f64>);

impl DistanceMatrix {
    /// Accepts arbitrary distances as long as each is finite and positive.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        for ((row, col), &value) in values.indexed_iter() {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::InvalidDistance { row, col, value });
            }
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn get(&self, row: usize, col: usize) -> Result<f64> {
        let (rows, cols) = self.0.dim();
        self.0
            .get((row, col))
            .copied()
            .ok_or(Error::IndexOutOfRange {
                row,
                col,
                rows,
                cols,
            })
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.0 * factor)
    }
}

/// Divides every row by its Euclidean norm.
pub fn l2_normalize(raw: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = raw.to_owned();
    for (row, mut r) in out.outer_iter_mut().enumerate() {
        let norm = r.dot(&r).sqrt();
        if !(norm > MIN_NORM) {
            return Err(Error::ZeroVector { row, norm });
        }
        r.mapv_inplace(|v| v / norm);
    }
    Ok(out)
}

/// Pulls a gradient with respect to the normalized rows back to the raw rows.
///
/// For `y = x / |x|`, `dL/dx = (g - y (y . g)) / |x|`.
pub fn l2_normalize_backward(raw: ArrayView2<f64>, grad_normalized: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(raw.raw_dim());
    Zip::from(out.rows_mut())
        .and(raw.rows())
        .and(grad_normalized.rows())
        .for_each(|mut o, x, g| {
            let norm = x.dot(&x).sqrt();
            let proj = x.dot(&g) / norm;
            for ((o, &xv), &gv) in o.iter_mut().zip(x.iter()).zip(g.iter()) {
                *o = (gv - xv / norm * proj) / norm;
            }
        });
    out
}

/// `S[i][j] = texts_i . images_j`.
pub fn similarity_matrix(texts: &EmbeddingBatch, images: &EmbeddingBatch) -> Result<SimilarityMatrix> {
    similarity_of(texts.vectors().view(), images.vectors().view())
}

/// Same as [`similarity_matrix`] on bare row-normalized matrices.
pub fn similarity_of(texts: ArrayView2<f64>, images: ArrayView2<f64>) -> Result<SimilarityMatrix> {
    if texts.ncols() != images.ncols() {
        return Err(Error::DimMismatch {
            left: texts.ncols(),
            right: images.ncols(),
        });
    }
    Ok(SimilarityMatrix(texts.dot(&images.t())))
}

/// `D = max(2(1 - S), EPS_DIST)` elementwise.
pub fn distance_from_similarity(s: &SimilarityMatrix) -> DistanceMatrix {
    distance_with_floor(s, EPS_DIST)
}

/// `D = max(2(1 - S), eps)` elementwise; `eps` must be positive.
pub fn distance_with_floor(s: &SimilarityMatrix, eps: f64) -> DistanceMatrix {
    assert!(eps > 0.0, "distance floor must be positive");
    DistanceMatrix(s.0.mapv(|v| (2.0 * (1.0 - v)).max(eps)))
}

/// Chain rule through [`distance_with_floor`]: `dD/dS = -2`, or 0 where clamped.
pub fn distance_grad_to_similarity(s: &SimilarityMatrix, grad_d: ArrayView2<f64>, eps: f64) -> Array2<f64> {
    let mut out = Array2::zeros(grad_d.raw_dim());
    Zip::from(&mut out)
        .and(&s.0)
        .and(grad_d)
        .for_each(|o, &sv, &g| {
            *o = if 2.0 * (1.0 - sv) > eps { -2.0 * g } else { 0.0 };
        });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn normalize_examples() {
        let out = l2_normalize(array![[3.0, 4.0], [1.0, 0.0]].view()).unwrap();
        assert!(close(out[[0, 0]], 0.6, 1e-15) && close(out[[0, 1]], 0.8, 1e-15));
        assert_eq!(out.row(1).to_vec(), vec![1.0, 0.0]);
        let out = l2_normalize(array![[2.0, 2.0, 2.0, 2.0]].view()).unwrap();
        assert!(out.iter().all(|&v| close(v, 0.5, 1e-15)));
    }

    #[test]
    fn zero_row_rejected() {
        let err = l2_normalize(array![[1.0, 0.0], [0.0, 0.0]].view()).unwrap_err();
        assert!(matches!(err, Error::ZeroVector { row: 1, .. }));
        assert!(l2_normalize(array![[1e-13, 0.0]].view()).is_err());
    }

    #[test]
    fn similarity_examples() {
        let e = |v: Array2<f64>| EmbeddingBatch::new(v.view(), Modality::Text).unwrap();
        let x = e(array![[1.0, 0.0]]);
        let y = e(array![[0.0, 1.0]]);
        let z = e(array![[-1.0, 0.0]]);
        assert_eq!(similarity_matrix(&x, &x).unwrap().0, array![[1.0]]);
        assert_eq!(similarity_matrix(&x, &y).unwrap().0, array![[0.0]]);
        assert_eq!(similarity_matrix(&x, &z).unwrap().0, array![[-1.0]]);
        let w = e(array![[1.0, 0.0, 0.0]]);
        assert!(matches!(
            similarity_matrix(&x, &w),
            Err(Error::DimMismatch { left: 2, right: 3 })
        ));
    }

    #[test]
    fn distance_examples() {
        let d = distance_from_similarity(&SimilarityMatrix(array![[1.0, 0.0, -1.0]]));
        assert_eq!(d.values(), &array![[EPS_DIST, 2.0, 4.0]]);
    }

    #[test]
    fn distance_matrix_rejects_below_floor() {
        assert!(DistanceMatrix::new(array![[1.0, 0.0]]).is_err());
        assert!(DistanceMatrix::new(array![[1.0, -2.0]]).is_err());
        assert!(DistanceMatrix::new(array![[1.0, f64::NAN]]).is_err());
        assert!(DistanceMatrix::new(array![[1.0, 2.0]]).is_ok());
    }

    #[test]
    fn concat_keeps_tags() {
        let a = EmbeddingBatch::new(array![[1.0, 1.0]].view(), Modality::Image).unwrap();
        let b = EmbeddingBatch::new(array![[1.0, 2.0], [0.0, 3.0]].view(), Modality::Text).unwrap();
        let c = EmbeddingBatch::concat(&[&a, &b]).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.modality(), &[Modality::Image, Modality::Text, Modality::Text]);
        assert_eq!(c.group_id(), &[0, 0, 1]);
    }

    #[test]
    fn normalize_backward_matches_finite_differences() {
        let raw = array![[0.3, -1.2, 0.7], [2.0, 0.1, -0.4]];
        let weights = array![[0.5, -0.25, 1.5], [-1.0, 0.75, 0.2]];
        let f = |x: &Array2<f64>| (&l2_normalize(x.view()).unwrap() * &weights).sum();
        let g = l2_normalize_backward(raw.view(), weights.view());
        let h = 1e-6;
        for idx in [(0, 0), (0, 2), (1, 1), (1, 2)] {
            let mut p = raw.clone();
            p[idx] += h;
            let mut m = raw.clone();
            m[idx] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!(close(fd, g[idx], 1e-8), "{idx:?}: {fd} vs {}", g[idx]);
        }
    }
}
