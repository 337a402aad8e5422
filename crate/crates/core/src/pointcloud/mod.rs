//! Point-cloud storage, exact neighborhood queries, sampling statistics and
//! local covariance analysis.

mod kdtree;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};
pub use kdtree::KdTree;

/// An ordered, immutable set of distinct 2D or 3D points with a spatial index.
#[derive(Debug, Clone)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
    index: KdTree,
}

impl PointCloud {
    /// Builds a cloud from a flat coordinate buffer (`dim` values per point).
    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidCloud(format!(
                "dimension must be 2 or 3, got {dim}"
            )));
        }
        if coords.len() % dim != 0 {
            return Err(Error::InvalidCloud(format!(
                "coordinate count {} is not a multiple of {dim}",
                coords.len()
            )));
        }
        if let Some(pos) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidCloud(format!(
                "non-finite coordinate in point {}",
                pos / dim
            )));
        }
        let index = KdTree::build(&coords, dim);
        let cloud = PointCloud { dim, coords, index };
        if let Some((first, second)) = cloud.find_duplicate() {
            return Err(Error::DegenerateCloud { first, second });
        }
        Ok(cloud)
    }

    pub fn from_points2(points: &[[f64; 2]]) -> Result<Self> {
        Self::from_flat(2, points.iter().flatten().copied().collect())
    }

    pub fn from_points3(points: &[[f64; 3]]) -> Result<Self> {
        Self::from_flat(3, points.iter().flatten().copied().collect())
    }

    fn find_duplicate(&self) -> Option<(usize, usize)> {
        (0..self.len()).find_map(|i| {
            self.index
                .knn(&self.coords, self.point(i), 2)
                .into_iter()
                .find(|&(j, d)| j != i && d == 0.0)
                .map(|(j, _)| (i.min(j), i.max(j)))
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// First two coordinates of point `i`.
    pub fn point2(&self, i: usize) -> [f64; 2] {
        let p = self.point(i);
        [p[0], p[1]]
    }

    /// Point `i` padded with zeros to three coordinates.
    pub fn point3(&self, i: usize) -> [f64; 3] {
        let p = self.point(i);
        [p[0], p[1], if self.dim == 3 { p[2] } else { 0.0 }]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    /// Axis-aligned bounding box as `(min, max)` per coordinate.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for p in self.iter() {
            for a in 0..self.dim {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }

    /// `k` nearest points as `(index, distance)`, ties broken by lower index.
    pub fn knn(&self, center: &[f64], k: usize) -> Vec<(usize, f64)> {
        self.index.knn(&self.coords, center, k)
    }

    /// Points with distance `<= radius` as `(index, distance)`.
    pub fn within(&self, center: &[f64], radius: f64) -> Vec<(usize, f64)> {
        self.index.within(&self.coords, center, radius)
    }

    /// Distance from `center` to the closest cloud point.
    pub fn nearest_distance(&self, center: &[f64]) -> f64 {
        self.knn(center, 1).first().map_or(f64::INFINITY, |p| p.1)
    }

    /// Neighborhood of `center` under the given strategy.
    pub fn neighborhood(&self, center: &[f64], strategy: NeighborStrategy) -> Result<Neighborhood> {
        if center.len() != self.dim {
            return Err(Error::Interface(format!(
                "query has {} coordinates, cloud has dimension {}",
                center.len(),
                self.dim
            )));
        }
        let (found, radius_used) = match strategy {
            NeighborStrategy::Radius(radius) => {
                if !(radius > 0.0) {
                    return Err(Error::Parameter(format!(
                        "radius must be positive, got {radius}"
                    )));
                }
                (self.within(center, radius), radius)
            }
            NeighborStrategy::Knn(k) => {
                if k == 0 || k > self.len() {
                    return Err(Error::Parameter(format!(
                        "k must lie in 1..={}, got {k}",
                        self.len()
                    )));
                }
                let found = self.knn(center, k);
                let r = found.last().map_or(0.0, |p| p.1);
                (found, r)
            }
        };
        if found.is_empty() {
            return Err(Error::EmptyNeighborhood {
                center: center.to_vec(),
                radius: radius_used,
            });
        }
        let (members, distances) = found.into_iter().unzip();
        Ok(Neighborhood {
            center: center.to_vec(),
            members,
            distances,
            strategy,
            radius_used,
        })
    }
}

/// How a neighborhood is selected around a query point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborStrategy {
    /// All points within the given radius.
    Radius(f64),
    /// The `k` nearest points.
    Knn(usize),
}

#[derive(Debug, Clone)]
pub struct Neighborhood {
    pub center: Vec<f64>,
    /// Member indices sorted by `(distance, index)`.
    pub members: Vec<usize>,
    pub distances: Vec<f64>,
    pub strategy: NeighborStrategy,
    /// The radius for radius queries, the k-th distance for knn queries.
    pub radius_used: f64,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudStats {
    /// Largest nearest-neighbor distance; a proxy for the fill distance.
    pub fill_estimate: f64,
    /// Half the minimum pairwise distance.
    pub separation: f64,
    pub quasi_uniform_ratio: f64,
    pub c_qu_bound: f64,
    pub quasi_uniform: bool,
}

/// Default bound on `fill / separation` for the quasi-uniform flag.
pub const DEFAULT_C_QU: f64 = 8.0;

pub fn cloud_stats(pc: &PointCloud) -> Result<CloudStats> {
    cloud_stats_with_bound(pc, DEFAULT_C_QU)
}

pub fn cloud_stats_with_bound(pc: &PointCloud, c_qu_bound: f64) -> Result<CloudStats> {
    if pc.len() < 2 {
        return Err(Error::InvalidCloud(format!(
            "need at least 2 points, got {}",
            pc.len()
        )));
    }
    let mut min_nn = f64::INFINITY;
    let mut max_nn: f64 = 0.0;
    for i in 0..pc.len() {
        let nn = pc.knn(pc.point(i), 2);
        let (j, d) = nn
            .into_iter()
            .find(|&(j, _)| j != i)
            .expect("cloud has at least two points");
        if d == 0.0 {
            return Err(Error::DegenerateCloud {
                first: i.min(j),
                second: i.max(j),
            });
        }
        min_nn = min_nn.min(d);
        max_nn = max_nn.max(d);
    }
    let separation = 0.5 * min_nn;
    let ratio = max_nn / separation;
    Ok(CloudStats {
        fill_estimate: max_nn,
        separation,
        quasi_uniform_ratio: ratio,
        c_qu_bound,
        quasi_uniform: ratio <= c_qu_bound,
    })
}

/// Mean-centered, `1/n`-normalized second-moment matrix with its eigen-structure.
#[derive(Debug, Clone)]
pub struct CovarianceAnalysis {
    pub mean: Vec<f64>,
    pub matrix: DMatrix<f64>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Unit eigenvectors matching `eigenvalues`; sign fixed so the first
    /// non-negligible component is positive.
    pub eigenvectors: Vec<Vec<f64>>,
    /// True when the smallest eigenvalue is zero up to round-off.
    pub degenerate: bool,
}

impl CovarianceAnalysis {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Covariance of an explicit list of points (all of the same dimension).
pub fn covariance_of_points<'a, I>(points: I) -> Result<CovarianceAnalysis>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let pts: Vec<&[f64]> = points.into_iter().collect();
    let n = pts.len();
    let dim = pts.first().map_or(0, |p| p.len());
    if n < dim + 1 || dim == 0 {
        return Err(Error::DegenerateNeighborhood(format!(
            "covariance needs at least dim + 1 points, got {n}"
        )));
    }
    let mut mean = vec![0.0; dim];
    for p in &pts {
        for a in 0..dim {
            mean[a] += p[a];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut matrix = DMatrix::zeros(dim, dim);
    for p in &pts {
        for a in 0..dim {
            for b in 0..dim {
                matrix[(a, b)] += (p[a] - mean[a]) * (p[b] - mean[b]);
            }
        }
    }
    matrix /= n as f64;
    Ok(analyze_symmetric(mean, matrix))
}

pub(crate) fn analyze_symmetric(mean: Vec<f64>, matrix: DMatrix<f64>) -> CovarianceAnalysis {
    let dim = matrix.nrows();
    let eig = SymmetricEigen::new(matrix.clone());
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut eigenvalues = Vec::with_capacity(dim);
    let mut eigenvectors = Vec::with_capacity(dim);
    for &k in &order {
        let mut lambda = eig.eigenvalues[k];
        if lambda.abs() <= 1e-14 * scale {
            lambda = 0.0;
        }
        eigenvalues.push(lambda);
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        if let Some(first) = v.iter().find(|c| c.abs() > 1e-12) {
            if *first < 0.0 {
                v.iter_mut().for_each(|c| *c = -*c);
            }
        }
        eigenvectors.push(v);
    }
    let degenerate = eigenvalues.last().is_some_and(|&l| l <= 0.0);
    CovarianceAnalysis {
        mean,
        matrix,
        eigenvalues,
        eigenvectors,
        degenerate,
    }
}

/// Covariance of the neighborhood members.
pub fn covariance(pc: &PointCloud, nbhd: &Neighborhood) -> Result<CovarianceAnalysis> {
    covariance_of_points(nbhd.members.iter().map(|&i| pc.point(i)))
}

/// Neighborhood radius multiplier for an interior cone of half-angle `theta`.
pub fn c_delta(theta: f64) -> Result<f64> {
    if !(theta > 0.0 && theta < std::f64::consts::FRAC_PI_2) {
        return Err(Error::Domain(format!(
            "cone angle must lie in (0, pi/2), got {theta}"
        )));
    }
    let s = theta.sin();
    Ok(128.0 * (1.0 + s) * (1.0 + s) / (3.0 * s * s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid(n: usize, spacing: f64) -> PointCloud {
        let mut pts = Vec::new();
        for j in 0..n {
            for i in 0..n {
                pts.push([i as f64 * spacing, j as f64 * spacing]);
            }
        }
        PointCloud::from_points2(&pts).unwrap()
    }

    #[test]
    fn two_point_stats() {
        let pc = PointCloud::from_points2(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let s = cloud_stats(&pc).unwrap();
        assert_eq!(s.separation, 0.5);
        assert_eq!(s.fill_estimate, 1.0);
    }

    #[test]
    fn grid_stats_match_pairwise_scan() {
        let pc = grid(5, 0.3);
        // brute-force oracle
        let mut min_pair = f64::INFINITY;
        let mut max_nn: f64 = 0.0;
        for i in 0..pc.len() {
            let mut nn = f64::INFINITY;
            for j in 0..pc.len() {
                if i != j {
                    let d = kdtree::dist2(pc.point(i), pc.point(j)).sqrt();
                    min_pair = min_pair.min(d);
                    nn = nn.min(d);
                }
            }
            max_nn = max_nn.max(nn);
        }
        let s = cloud_stats(&pc).unwrap();
        assert_relative_eq!(s.separation, 0.5 * min_pair);
        assert_relative_eq!(s.fill_estimate, max_nn);
        assert_relative_eq!(s.separation, 0.15, epsilon = 1e-12);
        assert_relative_eq!(s.fill_estimate, 0.3, epsilon = 1e-12);
        assert!(s.quasi_uniform);
    }

    #[test]
    fn stats_scale_homogeneously() {
        let a = cloud_stats(&grid(4, 1.0)).unwrap();
        let b = cloud_stats(&grid(4, 2.0)).unwrap();
        assert_relative_eq!(b.separation, 2.0 * a.separation);
        assert_relative_eq!(b.fill_estimate, 2.0 * a.fill_estimate);
    }

    #[test]
    fn rejects_small_and_duplicate_clouds() {
        let one = PointCloud::from_points2(&[[0.0, 0.0]]).unwrap();
        assert!(matches!(cloud_stats(&one), Err(Error::InvalidCloud(_))));
        let dup = PointCloud::from_points2(&[[0.0, 0.0], [1.0, 1.0], [0.0, 0.0]]);
        assert!(matches!(
            dup,
            Err(Error::DegenerateCloud {
                first: 0,
                second: 2
            })
        ));
        assert!(PointCloud::from_flat(2, vec![0.0, f64::NAN]).is_err());
        assert!(PointCloud::from_flat(4, vec![0.0; 8]).is_err());
    }

    #[test]
    fn knn_one_returns_the_point_itself() {
        let pc = grid(6, 0.5);
        for i in [0, 7, 35] {
            let nb = pc
                .neighborhood(pc.point(i), NeighborStrategy::Knn(1))
                .unwrap();
            assert_eq!(nb.members, vec![i]);
            assert_eq!(nb.radius_used, 0.0);
        }
    }

    #[test]
    fn radius_neighborhood_on_unit_grid() {
        let pc = grid(3, 1.0);
        let nb = pc
            .neighborhood(&[1.0, 1.0], NeighborStrategy::Radius(1.5))
            .unwrap();
        let mut m = nb.members.clone();
        m.sort();
        assert_eq!(m, (0..9).collect::<Vec<_>>());
        assert!(matches!(
            pc.neighborhood(&[10.0, 10.0], NeighborStrategy::Radius(0.5)),
            Err(Error::EmptyNeighborhood { .. })
        ));
    }

    #[test]
    fn four_point_covariance() {
        let pc =
            PointCloud::from_points2(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]).unwrap();
        let nb = pc
            .neighborhood(&[0.0, 0.0], NeighborStrategy::Knn(4))
            .unwrap();
        let c = covariance(&pc, &nb).unwrap();
        assert_relative_eq!(c.matrix[(0, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(c.matrix[(1, 1)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(c.matrix[(0, 1)], 0.0, epsilon = 1e-15);
        assert!(!c.degenerate);
    }

    #[test]
    fn collinear_covariance_is_degenerate() {
        let pts: [&[f64]; 3] = [&[-1.0, 0.0], &[0.0, 0.0], &[1.0, 0.0]];
        let c = covariance_of_points(pts).unwrap();
        assert_eq!(c.eigenvalues[1], 0.0);
        assert!(c.degenerate);
        assert_relative_eq!(c.eigenvalues[0], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn c_delta_values() {
        assert_relative_eq!(
            c_delta(std::f64::consts::FRAC_PI_6).unwrap(),
            384.0,
            epsilon = 1e-9
        );
        let near = c_delta(std::f64::consts::FRAC_PI_2 - 1e-9).unwrap();
        assert_relative_eq!(near, 512.0 / 3.0, epsilon = 1e-6);
        assert!(
            c_delta(std::f64::consts::FRAC_PI_6).unwrap()
                > c_delta(std::f64::consts::FRAC_PI_3).unwrap()
        );
        assert!(matches!(c_delta(0.0), Err(Error::Domain(_))));
        assert!(matches!(c_delta(2.0), Err(Error::Domain(_))));
    }

    fn cloud_strategy() -> impl Strategy<Value = Vec<[f64; 2]>> {
        prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 8..40)
            .prop_map(|v| v.into_iter().map(|(x, y)| [x, y]).collect())
    }

    proptest! {
        #[test]
        fn neighborhoods_match_brute_force(
            pts in cloud_strategy(),
            cx in -10.0f64..10.0,
            cy in -10.0f64..10.0,
            k in 1usize..8,
            r in 0.5f64..8.0,
        ) {
            let Ok(pc) = PointCloud::from_points2(&pts) else { return Ok(()); };
            let c = [cx, cy];
            let mut all: Vec<(f64, usize)> = (0..pc.len())
                .map(|i| (kdtree::dist2(pc.point(i), &c), i))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let knn = pc.neighborhood(&c, NeighborStrategy::Knn(k)).unwrap();
            let want: Vec<usize> = all.iter().take(k).map(|p| p.1).collect();
            prop_assert_eq!(knn.members, want);
            let inside: Vec<usize> = all.iter().filter(|p| p.0 <= r * r).map(|p| p.1).collect();
            match pc.neighborhood(&c, NeighborStrategy::Radius(r)) {
                Ok(nb) => prop_assert_eq!(nb.members, inside),
                Err(Error::EmptyNeighborhood { .. }) => prop_assert!(inside.is_empty()),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }

        #[test]
        fn covariance_translation_rotation(
            pts in cloud_strategy(),
            tx in -5.0f64..5.0,
            ty in -5.0f64..5.0,
            angle in 0.0f64..6.28,
        ) {
            let base = covariance_of_points(pts.iter().map(|p| &p[..])).unwrap();
            let moved: Vec<[f64; 2]> = pts.iter().map(|p| [p[0] + tx, p[1] + ty]).collect();
            let shifted = covariance_of_points(moved.iter().map(|p| &p[..])).unwrap();
            let scale = base.matrix.amax().max(1.0);
            prop_assert!((&base.matrix - &shifted.matrix).amax() <= 1e-10 * scale);
            let (s, c) = angle.sin_cos();
            let rot: Vec<[f64; 2]> = pts.iter().map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]).collect();
            let rotated = covariance_of_points(rot.iter().map(|p| &p[..])).unwrap();
            let r = nalgebra::DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
            let expect = &r * &base.matrix * r.transpose();
            prop_assert!((&expect - &rotated.matrix).amax() <= 1e-10 * scale);
            // orthonormal eigenvectors
            let v0 = &rotated.eigenvectors[0];
            let v1 = &rotated.eigenvectors[1];
            prop_assert!((v0[0] * v1[0] + v0[1] * v1[1]).abs() < 1e-10);
            prop_assert!(((v0[0] * v0[0] + v0[1] * v0[1]) - 1.0).abs() < 1e-10);
        }

        #[test]
        fn largest_eigenvalue_bounded_by_radius_squared(
            pts in cloud_strategy(),
            r in 2.0f64..12.0,
        ) {
            let Ok(pc) = PointCloud::from_points2(&pts) else { return Ok(()); };
            let Ok(nb) = pc.neighborhood(&[0.0, 0.0], NeighborStrategy::Radius(r)) else { return Ok(()); };
            if nb.len() >= 3 {
                let c = covariance(&pc, &nb).unwrap();
                prop_assert!(c.eigenvalues[0] <= r * r * (1.0 + 1e-12));
            }
        }
    }
}
