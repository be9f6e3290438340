//! Point clouds, rotations, neighbor graphs and scalar/vector feature maps.

mod features;
pub mod io;
mod knn;
mod rotation;
mod shapes;

pub use features::{edge_vectors, extract_initial_features};
pub use knn::{knn_graph, KnnGraph};
pub use rotation::{apply_rotation, random_rotation, signed_permutation_rotation, Rotation};
pub use shapes::{synthesize_shapes, ShapeClass, NUM_SHAPE_CLASSES};

use crate::error::{ensure_param, Result};
use crate::tensor::Tensor;

/// A finite, non-empty set of 3-D points with an optional class label.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
    pub label: Option<usize>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>, label: Option<usize>) -> Result<Self> {
        ensure_param!(!points.is_empty(), "point cloud must contain at least one point");
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(crate::Error::param(format!("point {i} has a non-finite coordinate")));
        }
        Ok(PointCloud { points, label })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Reorders points so that new point `i` is old point `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        ensure_param!(perm.len() == self.len(), "permutation length mismatch");
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            ensure_param!(p < perm.len() && !seen[p], "not a permutation");
            seen[p] = true;
        }
        Ok(PointCloud {
            points: perm.iter().map(|&i| self.points[i]).collect(),
            label: self.label,
        })
    }
}

/// Paired invariant scalars and equivariant vectors over `N` sites.
///
/// `scalars` is `p × N`. `vectors` is `q × 3N` with the coordinates of
/// channel `c` at site `s` in columns `3s..3s+3`; this is the `3 × q × N`
/// tensor with coordinates moved next to the site index.
#[derive(Clone, Debug, PartialEq)]
pub struct SVFeature {
    pub scalars: Tensor,
    pub vectors: Tensor,
}

impl SVFeature {
    pub fn new(scalars: Tensor, vectors: Tensor) -> Result<Self> {
        ensure_param!(
            scalars.rows() + vectors.rows() > 0,
            "feature needs scalar or vector channels"
        );
        ensure_param!(
            vectors.cols() == 3 * scalars.cols(),
            "scalars cover {} sites but vectors cover {} columns",
            scalars.cols(),
            vectors.cols()
        );
        Ok(SVFeature { scalars, vectors })
    }

    pub fn sites(&self) -> usize {
        self.scalars.cols()
    }

    pub fn scalar_channels(&self) -> usize {
        self.scalars.rows()
    }

    pub fn vector_channels(&self) -> usize {
        self.vectors.rows()
    }

    pub fn vector(&self, channel: usize, site: usize) -> [f64; 3] {
        let r = self.vectors.row(channel);
        [r[3 * site], r[3 * site + 1], r[3 * site + 2]]
    }

    /// `R ∘ X`: rotates every vector, leaves scalars untouched.
    pub fn rotated(&self, rot: &Rotation) -> SVFeature {
        SVFeature {
            scalars: self.scalars.clone(),
            vectors: rotate_vectors(&self.vectors, rot),
        }
    }
}

/// Applies `rot` to every coordinate triple of a `q × 3N` vector tensor.
pub fn rotate_vectors(v: &Tensor, rot: &Rotation) -> Tensor {
    let mut out = v.clone();
    for r in 0..v.rows() {
        let src = v.row(r);
        let dst = out.row_mut(r);
        for s in 0..src.len() / 3 {
            let p = rot.apply([src[3 * s], src[3 * s + 1], src[3 * s + 2]]);
            dst[3 * s..3 * s + 3].copy_from_slice(&p);
        }
    }
    out
}
