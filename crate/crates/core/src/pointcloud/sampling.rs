use rand::RngExt;

use super::{PointCloud, TriMesh};
use crate::error::{Error, Result};
use crate::rng::{rng_for, TAG_SURFACE};
use crate::vec3::{self, Vec3};

/// Candidates drawn per requested point before FPS thins them out.
const OVERSAMPLE: usize = 4;

/// Greedy farthest point sampling starting from `start`.
///
/// Each step picks the point whose distance to the selected set is largest;
/// ties go to the smallest index.
pub fn farthest_point_sample(points: &[Vec3], n: usize, start: usize) -> Result<Vec<usize>> {
    farthest_point_sample_with_radii(points, n, start).map(|(idx, _)| idx)
}

/// Like [`farthest_point_sample`], also returning the squared covering
/// radius at which each point after the first was chosen.
pub fn farthest_point_sample_with_radii(
    points: &[Vec3],
    n: usize,
    start: usize,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if n == 0 || n > points.len() {
        return Err(Error::invalid(format!(
            "sample count {n} outside 1..={}",
            points.len()
        )));
    }
    if start >= points.len() {
        return Err(Error::invalid(format!("start index {start} out of range")));
    }
    let mut min_d: Vec<f64> = points.iter().map(|p| vec3::dist2(*p, points[start])).collect();
    min_d[start] = f64::NEG_INFINITY;
    let mut selected = Vec::with_capacity(n);
    let mut radii = Vec::with_capacity(n.saturating_sub(1));
    selected.push(start);
    while selected.len() < n {
        let mut best = 0;
        for (j, &d) in min_d.iter().enumerate() {
            if d > min_d[best] {
                best = j;
            }
        }
        radii.push(min_d[best]);
        selected.push(best);
        let pb = points[best];
        min_d[best] = f64::NEG_INFINITY;
        for (d, p) in min_d.iter_mut().zip(points) {
            if *d != f64::NEG_INFINITY {
                *d = d.min(vec3::dist2(*p, pb));
            }
        }
    }
    Ok((selected, radii))
}

fn sample_triangle(tri: [Vec3; 3], mut u: f64, mut v: f64) -> Vec3 {
    if u + v > 1.0 {
        u = 1.0 - u;
        v = 1.0 - v;
    }
    let [a, b, c] = tri;
    vec3::add(
        a,
        vec3::add(vec3::scale(vec3::sub(b, a), u), vec3::scale(vec3::sub(c, a), v)),
    )
}

/// Area-weighted random oversampling of the mesh surface, thinned to `n`
/// points by farthest point sampling from index 0.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let areas: Vec<f64> = (0..mesh.faces().len())
        .map(|f| if mesh.is_degenerate(f) { 0.0 } else { mesh.face_area(f) })
        .collect();
    let mut cumulative = Vec::with_capacity(areas.len());
    let mut total = 0.0;
    for a in &areas {
        total += a;
        cumulative.push(total);
    }
    if total <= 0.0 {
        return Err(Error::invalid("mesh has no non-degenerate faces"));
    }
    let mut rng = rng_for(seed, &[TAG_SURFACE]);
    let candidates: Vec<Vec3> = (0..n * OVERSAMPLE)
        .map(|_| {
            let target = rng.random_range(0.0..total);
            let face = cumulative
                .partition_point(|&c| c <= target)
                .min(areas.len() - 1);
            let (u, v) = (rng.random::<f64>(), rng.random::<f64>());
            sample_triangle(mesh.triangle(face), u, v)
        })
        .collect();
    let keep = farthest_point_sample(&candidates, n, 0)?;
    PointCloud::new(keep.iter().map(|&i| candidates[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_picks_far_end() {
        let pts = [[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert_eq!(farthest_point_sample(&pts, 2, 0).unwrap(), vec![0, 2]);
    }

    #[test]
    fn exhaustion_is_a_permutation() {
        let pts: Vec<Vec3> = (0..7).map(|i| [i as f64, (i * i) as f64, 0.0]).collect();
        let mut idx = farthest_point_sample(&pts, 7, 3).unwrap();
        assert_eq!(idx[0], 3);
        idx.sort();
        assert_eq!(idx, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn duplicates_are_never_reselected() {
        let pts = [[0.0; 3]; 4];
        let idx = farthest_point_sample(&pts, 4, 2).unwrap();
        assert_eq!(idx, vec![2, 0, 1, 3]);
    }

    #[test]
    fn range_errors() {
        let pts = [[0.0; 3], [1.0; 3]];
        assert!(farthest_point_sample(&pts, 0, 0).is_err());
        assert!(farthest_point_sample(&pts, 3, 0).is_err());
        assert!(farthest_point_sample(&pts, 1, 2).is_err());
    }

    fn unit_square() -> TriMesh {
        TriMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn planar_samples_stay_planar_and_repeat() {
        let a = sample_surface(&unit_square(), 4, 11).unwrap();
        assert_eq!(a.len(), 4);
        assert!(a.points().iter().all(|p| p[2] == 0.0));
        assert_eq!(a, sample_surface(&unit_square(), 4, 11).unwrap());
    }

    #[test]
    fn all_degenerate_faces_fail() {
        let m = TriMesh::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(sample_surface(&m, 3, 0).is_err());
    }
}
