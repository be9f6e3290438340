use super::{KnnGraph, PointCloud, SVFeature};
use crate::error::{ensure_param, Result};
use crate::svcore::{coordinate_frame, invariant_projection, LinearParams};
use crate::tensor::Tensor;

/// Edge vectors `[o_i ; o_ij − o_i]` as a `2 × 3(k·n)` vector tensor.
///
/// Edges are ordered node-major: edge `i·k + t` joins point `i` to its
/// `t`-th neighbor.
pub fn edge_vectors(cloud: &PointCloud, graph: &KnnGraph) -> Result<Tensor> {
    ensure_param!(
        graph.nodes() == cloud.len(),
        "graph has {} nodes, cloud has {} points",
        graph.nodes(),
        cloud.len()
    );
    let pts = cloud.points();
    let edges = graph.flat().len();
    let mut v = Tensor::zeros(2, 3 * edges);
    for (e, &j) in graph.flat().iter().enumerate() {
        let i = e / graph.k();
        ensure_param!(j < pts.len(), "neighbor index {j} out of range");
        for a in 0..3 {
            v[(0, 3 * e + a)] = pts[i][a];
            v[(1, 3 * e + a)] = pts[j][a] - pts[i][a];
        }
    }
    Ok(v)
}

/// First-layer features: per edge, vectors `[o_i ; o_ij − o_i]` and the six
/// invariant scalars obtained by projecting them onto their learned frame.
pub fn extract_initial_features(
    cloud: &PointCloud,
    graph: &KnnGraph,
    frame_params: &LinearParams,
) -> Result<SVFeature> {
    ensure_param!(
        frame_params.weight.shape() == (2, 3),
        "extraction frame must be 2×3, got {:?}",
        frame_params.weight.shape()
    );
    let vectors = edge_vectors(cloud, graph)?;
    let frame = coordinate_frame(&vectors, frame_params)?;
    let scalars = invariant_projection(&frame, &vectors)?;
    SVFeature::new(scalars, vectors)
}
