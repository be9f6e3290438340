use std::collections::BinaryHeap;

use super::PointCloud;
use crate::error::{ensure_param, Result};
use crate::tensor::sum3;

/// `k` nearest neighbors of every point, self excluded.
///
/// Row `i` lists neighbor indices by ascending squared distance, ties broken
/// by ascending index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnnGraph {
    k: usize,
    neighbors: Vec<usize>,
}

impl KnnGraph {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn nodes(&self) -> usize {
        self.neighbors.len() / self.k
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    /// Neighbor index of every edge in node-major order.
    pub fn flat(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn from_rows(k: usize, neighbors: Vec<usize>) -> Result<Self> {
        ensure_param!(k >= 1 && neighbors.len() % k == 0, "neighbor table is not n×k");
        let n = neighbors.len() / k;
        for (e, &j) in neighbors.iter().enumerate() {
            ensure_param!(j < n && j != e / k, "invalid neighbor {j} for node {}", e / k);
        }
        Ok(KnnGraph { k, neighbors })
    }
}

/// Squared distance computed identically for any signed permutation of the axes.
#[inline]
pub(crate) fn squared_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    sum3(d[0] * d[0], d[1] * d[1], d[2] * d[2])
}

pub fn knn_graph(cloud: &PointCloud, k: usize) -> Result<KnnGraph> {
    let n = cloud.len();
    ensure_param!(
        k >= 1 && k < n,
        "k = {k} out of range for {n} points (need 1 ≤ k ≤ n−1)"
    );
    let pts = cloud.points();
    let mut neighbors = Vec::with_capacity(n * k);
    // max-heap keyed on (distance bits, index): non-negative floats order like their bits
    let mut heap: BinaryHeap<(u64, usize)> = BinaryHeap::with_capacity(k + 1);
    for (i, p) in pts.iter().enumerate() {
        heap.clear();
        for (j, q) in pts.iter().enumerate() {
            if i == j {
                continue;
            }
            let key = (squared_distance(p, q).to_bits(), j);
            if heap.len() < k {
                heap.push(key);
            } else if key < *heap.peek().expect("heap holds k entries") {
                heap.pop();
                heap.push(key);
            }
        }
        let start = neighbors.len();
        neighbors.extend(heap.drain().map(|(_, j)| j));
        let row = &mut neighbors[start..];
        row.sort_by_key(|&j| (squared_distance(p, &pts[j]).to_bits(), j));
    }
    Ok(KnnGraph { k, neighbors })
}
