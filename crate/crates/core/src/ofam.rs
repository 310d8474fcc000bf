//! Object feature aggregation.
//!
//! Every unit (spatial position) of the backbone map is assigned to the
//! object(s) with the highest segmentation score at that unit. Each
//! object's feature vector is then the score-weighted mean of the unit
//! vectors it won. Objects that win no unit get a zero column and are
//! flagged absent, so the output is always `C x C'`.
//!
//! Aggregation runs offline on fixed inputs: nothing here is taped.

use crate::error::{OtsError, Result};
use crate::numcore::Matrix;

/// Segmentation scores, objects x units. Entries are nonnegative.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    matrix: Matrix,
}

impl ScoreMap {
    pub fn new(matrix: Matrix) -> Result<Self> {
        if matrix.rows() == 0 || matrix.cols() == 0 {
            return Err(OtsError::shape("ScoreMap", "needs at least one object and one unit"));
        }
        if let Some(v) = matrix.as_slice().iter().find(|v| **v < 0.0) {
            return Err(OtsError::Config(format!(
                "score maps must be nonnegative, found {v}"
            )));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn object_count(&self) -> usize {
        self.matrix.rows()
    }

    pub fn unit_count(&self) -> usize {
        self.matrix.cols()
    }
}

/// Backbone features, channels x units.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    matrix: Matrix,
}

impl FeatureMap {
    pub fn new(matrix: Matrix) -> Result<Self> {
        if matrix.rows() == 0 || matrix.cols() == 0 {
            return Err(OtsError::shape("FeatureMap", "needs at least one channel and one unit"));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn channel_count(&self) -> usize {
        self.matrix.rows()
    }

    pub fn unit_count(&self) -> usize {
        self.matrix.cols()
    }

    /// Feature vector of unit `i`.
    pub fn unit(&self, i: usize) -> Vec<f64> {
        self.matrix.column(i)
    }
}

/// 0/1 winner mask, objects x units.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    matrix: Matrix,
}

impl BinaryMask {
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn is_set(&self, object: usize, unit: usize) -> bool {
        self.matrix.get(object, unit) != 0.0
    }
}

/// Per-object feature vectors, channels x objects.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectFeatures {
    matrix: Matrix,
    present: Vec<bool>,
}

impl ObjectFeatures {
    /// Pairs a feature matrix with its presence flags; absent columns must be zero.
    pub fn new(matrix: Matrix, present: Vec<bool>) -> Result<Self> {
        if present.len() != matrix.cols() {
            return Err(OtsError::shape(
                "ObjectFeatures",
                format!("{} presence flags for {} objects", present.len(), matrix.cols()),
            ));
        }
        for (j, &p) in present.iter().enumerate() {
            if !p && (0..matrix.rows()).any(|r| matrix.get(r, j) != 0.0) {
                return Err(OtsError::Config(format!(
                    "object {j} is flagged absent but has a nonzero column"
                )));
            }
        }
        Ok(Self { matrix, present })
    }

    /// Flags inferred from nonzero columns.
    pub fn from_matrix(matrix: Matrix) -> Self {
        let present = (0..matrix.cols())
            .map(|j| (0..matrix.rows()).any(|r| matrix.get(r, j) != 0.0))
            .collect();
        Self { matrix, present }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn present(&self) -> &[bool] {
        &self.present
    }

    pub fn channel_count(&self) -> usize {
        self.matrix.rows()
    }

    pub fn object_count(&self) -> usize {
        self.matrix.cols()
    }

    pub fn present_count(&self) -> usize {
        self.present.iter().filter(|p| **p).count()
    }
}

/// Marks, per unit, every object whose score equals the unit's maximum.
pub fn compute_mask(scores: &ScoreMap) -> BinaryMask {
    let s = scores.matrix();
    let (objects, units) = s.shape();
    let mut mask = Matrix::zeros(objects, units);
    for i in 0..units {
        let max = (0..objects).map(|j| s.get(j, i)).fold(f64::NEG_INFINITY, f64::max);
        for j in 0..objects {
            if s.get(j, i) == max {
                mask.set(j, i, 1.0);
            }
        }
    }
    BinaryMask { matrix: mask }
}

/// Score-weighted mean of the unit vectors each object won.
pub fn aggregate(
    features: &FeatureMap,
    scores: &ScoreMap,
    mask: &BinaryMask,
) -> Result<ObjectFeatures> {
    let units = features.unit_count();
    if scores.unit_count() != units || mask.matrix.cols() != units {
        return Err(OtsError::shape(
            "aggregate",
            format!(
                "features have {units} units, scores {}, mask {}",
                scores.unit_count(),
                mask.matrix.cols()
            ),
        ));
    }
    if mask.matrix.rows() != scores.object_count() {
        return Err(OtsError::shape(
            "aggregate",
            format!(
                "mask has {} objects, scores {}",
                mask.matrix.rows(),
                scores.object_count()
            ),
        ));
    }

    let channels = features.channel_count();
    let objects = scores.object_count();
    let f = features.matrix();
    let s = scores.matrix();

    // weights[j][i] = M[j,i] * S[j,i] / sum_i M[j,i] * S[j,i]
    let mut weights = Matrix::zeros(objects, units);
    let mut present = vec![false; objects];
    for j in 0..objects {
        let total: f64 = (0..units).filter(|&i| mask.is_set(j, i)).map(|i| s.get(j, i)).sum();
        if total > 0.0 {
            present[j] = true;
            for i in 0..units {
                if mask.is_set(j, i) {
                    weights.set(j, i, s.get(j, i) / total);
                }
            }
        }
    }

    // F (C x N) times W^T (N x C') gives the C x C' means; absent columns stay zero.
    let out = f.matmul(&weights.transpose())?;
    debug_assert_eq!(out.rows(), channels);
    Ok(ObjectFeatures {
        matrix: out,
        present,
    })
}

/// Mask then aggregate.
pub fn ofam(features: &FeatureMap, scores: &ScoreMap) -> Result<ObjectFeatures> {
    if features.unit_count() != scores.unit_count() {
        return Err(OtsError::shape(
            "ofam",
            format!(
                "feature map has {} units but score map has {}",
                features.unit_count(),
                scores.unit_count()
            ),
        ));
    }
    let mask = compute_mask(scores);
    aggregate(features, scores, &mask)
}
