use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec3::{self, Vec3};

/// Directed k-nearest-neighbour graph stored as a flat `n * k` index table.
///
/// Each row is sorted by distance, ties broken by the smaller index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnGraph {
    k: usize,
    neighbors: Vec<usize>,
}

impl KnnGraph {
    pub fn from_rows(k: usize, neighbors: Vec<usize>) -> Result<Self> {
        if k == 0 || !neighbors.len().is_multiple_of(k) {
            return Err(Error::invalid(format!(
                "{} neighbour entries do not form rows of {k}",
                neighbors.len()
            )));
        }
        Ok(Self { k, neighbors })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of query points.
    pub fn len(&self) -> usize {
        self.neighbors.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn flat(&self) -> &[usize] {
        &self.neighbors
    }
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Appends the indices of the `k` smallest `(distance, index)` pairs, sorted.
fn push_k_smallest(cands: &mut Vec<(f64, usize)>, k: usize, out: &mut Vec<usize>) {
    if k < cands.len() {
        cands.select_nth_unstable_by(k - 1, by_distance_then_index);
        cands.truncate(k);
    }
    cands.sort_unstable_by(by_distance_then_index);
    out.extend(cands.iter().map(|&(_, i)| i));
}

fn check_k(k: usize, n: usize, include_self: bool) -> Result<()> {
    let max = if include_self { n } else { n.saturating_sub(1) };
    if k == 0 || k > max {
        return Err(Error::invalid(format!(
            "k = {k} out of range for {n} points (include_self = {include_self})"
        )));
    }
    Ok(())
}

/// Exact brute-force kNN under Euclidean distance.
pub fn knn(points: &[Vec3], k: usize, include_self: bool) -> Result<KnnGraph> {
    let n = points.len();
    check_k(k, n, include_self)?;
    let mut neighbors = Vec::with_capacity(n * k);
    let mut cands = Vec::with_capacity(n);
    for (i, p) in points.iter().enumerate() {
        cands.clear();
        cands.extend(
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| include_self || j != i)
                .map(|(j, q)| (vec3::dist2(*p, *q), j)),
        );
        push_k_smallest(&mut cands, k, &mut neighbors);
    }
    Ok(KnnGraph { k, neighbors })
}

/// kNN over the rows of a row-major `n x dim` feature matrix.
pub fn knn_rows(data: &[f64], dim: usize, k: usize, include_self: bool) -> Result<KnnGraph> {
    if dim == 0 || !data.len().is_multiple_of(dim) {
        return Err(Error::invalid("feature buffer is not a whole number of rows"));
    }
    let n = data.len() / dim;
    check_k(k, n, include_self)?;
    let mut neighbors = Vec::with_capacity(n * k);
    // Squared distances are symmetric bit for bit, so each pair is computed once.
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        let xi = &data[i * dim..(i + 1) * dim];
        for j in i + 1..n {
            let xj = &data[j * dim..(j + 1) * dim];
            let d: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut cands = Vec::with_capacity(n);
    for i in 0..n {
        cands.clear();
        cands.extend(
            dist[i * n..(i + 1) * n]
                .iter()
                .enumerate()
                .filter(|&(j, _)| include_self || j != i)
                .map(|(j, &d)| (d, j)),
        );
        push_k_smallest(&mut cands, k, &mut neighbors);
    }
    Ok(KnnGraph { k, neighbors })
}

/// For every query, its `k` nearest points in a separate reference set.
pub fn knn_query(queries: &[Vec3], reference: &[Vec3], k: usize) -> Result<KnnGraph> {
    check_k(k, reference.len(), true)?;
    let mut neighbors = Vec::with_capacity(queries.len() * k);
    let mut cands = Vec::with_capacity(reference.len());
    for q in queries {
        cands.clear();
        cands.extend(reference.iter().enumerate().map(|(j, r)| (vec3::dist2(*q, *r), j)));
        push_k_smallest(&mut cands, k, &mut neighbors);
    }
    Ok(KnnGraph { k, neighbors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_example() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        let g = knn(&pts, 1, false).unwrap();
        assert_eq!(g.flat(), &[1, 0, 1]);
    }

    #[test]
    fn tie_goes_to_smaller_index() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
        let g = knn(&pts, 1, false).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        let with_self = knn(&pts, 2, true).unwrap();
        assert_eq!(with_self.neighbors(0), &[0, 1]);
    }

    #[test]
    fn k_bounds() {
        let pts = [[0.0; 3], [1.0; 3]];
        assert!(knn(&pts, 2, false).is_err());
        assert!(knn(&pts, 2, true).is_ok());
        assert!(knn(&pts, 0, true).is_err());
    }

    #[test]
    fn rows_match_points() {
        let pts = [[0.0, 0.5, 1.0], [2.0, 0.1, 0.0], [0.3, 0.3, 0.3], [1.0, 1.0, 1.0]];
        let flat: Vec<f64> = pts.iter().flatten().copied().collect();
        assert_eq!(knn(&pts, 2, false).unwrap(), knn_rows(&flat, 3, 2, false).unwrap());
    }
}
