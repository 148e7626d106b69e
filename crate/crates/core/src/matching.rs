//! Face similarity matrices and maximum-similarity one-to-one assignment.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masks::BBox;
use crate::numerics::{cosine, norm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Face {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub embedding: Vec<f64>,
}

/// Faces detected in one image. Embeddings share a length and are nonzero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawFaceSet")]
pub struct FaceSet {
    faces: Vec<Face>,
}

#[derive(Deserialize)]
struct RawFaceSet {
    faces: Vec<Face>,
}

impl TryFrom<RawFaceSet> for FaceSet {
    type Error = Error;

    fn try_from(raw: RawFaceSet) -> Result<Self> {
        FaceSet::new(raw.faces)
    }
}

impl FaceSet {
    pub fn new(faces: Vec<Face>) -> Result<Self> {
        if let Some(first) = faces.first() {
            let dim = first.embedding.len();
            for (i, f) in faces.iter().enumerate() {
                if f.embedding.len() != dim {
                    return Err(Error::Shape(format!(
                        "face {i} has embedding length {}, expected {dim}",
                        f.embedding.len()
                    )));
                }
                let n = norm(&f.embedding);
                if n == 0.0 || !n.is_finite() {
                    return Err(Error::DegenerateEmbedding(format!("face {i} has embedding norm {n}")));
                }
            }
        }
        Ok(Self { faces })
    }

    /// Faces with placeholder boxes, for callers that only have embeddings.
    pub fn from_embeddings(embeddings: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            embeddings
                .into_iter()
                .map(|embedding| Face {
                    bbox: BBox::new(0, 0, 1, 1),
                    embedding,
                })
                .collect(),
        )
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn embeddings(&self) -> Vec<Vec<f64>> {
        self.faces.iter().map(|f| f.embedding.clone()).collect()
    }

    pub fn dim(&self) -> Option<usize> {
        self.faces.first().map(|f| f.embedding.len())
    }
}

/// Dense row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged similarity matrix".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        if self.cols == 0 {
            return vec![Vec::new(); self.rows];
        }
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// `(pred index, src index)`, sorted by pred index.
    pub pairs: Vec<(usize, usize)>,
    pub similarities: Vec<f64>,
    pub total: f64,
}

impl MatchResult {
    pub fn empty() -> Self {
        Self {
            pairs: Vec::new(),
            similarities: Vec::new(),
            total: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn similarity_matrix(pred: &FaceSet, src: &FaceSet) -> Result<SimilarityMatrix> {
    if let (Some(a), Some(b)) = (pred.dim(), src.dim()) {
        if a != b {
            return Err(Error::Shape(format!("embedding lengths differ: {a} vs {b}")));
        }
    }
    let mut data = Vec::with_capacity(pred.len() * src.len());
    for p in pred.faces() {
        for s in src.faces() {
            data.push(cosine(&p.embedding, &s.embedding)?);
        }
    }
    SimilarityMatrix::new(pred.len(), src.len(), data)
}

/// Assignment of size `min(rows, cols)` maximizing the summed similarity.
pub fn hungarian_max(s: &SimilarityMatrix) -> Result<MatchResult> {
    if let Some(i) = s.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "similarity entry ({}, {}) is not finite",
            i / s.cols.max(1),
            i % s.cols.max(1)
        )));
    }
    if s.rows == 0 || s.cols == 0 {
        return Ok(MatchResult::empty());
    }
    let n = s.rows.max(s.cols);
    let max_entry = s.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Padded rows/columns cost 0 and are dropped after solving.
    let mut cost = vec![0.0; n * n];
    for i in 0..s.rows {
        for j in 0..s.cols {
            cost[i * n + j] = max_entry - s.get(i, j);
        }
    }
    let assignment = solve_min_cost(&cost, n);

    let mut result = MatchResult::empty();
    for (i, &j) in assignment.iter().enumerate().take(s.rows) {
        if j < s.cols {
            let sim = s.get(i, j);
            result.pairs.push((i, j));
            result.similarities.push(sim);
            result.total += sim;
        }
    }
    Ok(result)
}

/// Kuhn-Munkres with row/column potentials on a square `n x n` cost matrix,
/// O(n^3). Returns the column assigned to each row.
fn solve_min_cost(cost: &[f64], n: usize) -> Vec<usize> {
    let inf = f64::INFINITY;
    // 1-based with a sentinel column 0, as in the classic formulation.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if row_of[j] > 0 {
            assignment[row_of[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Similarity matrix plus assignment in one call.
pub fn match_faces(pred: &FaceSet, src: &FaceSet) -> Result<MatchResult> {
    hungarian_max(&similarity_matrix(pred, src)?)
}
