//! Harmonic parameterization of point-cloud surfaces.
//!
//! Each point gets a local frame from the PCA of its neighborhood. The surface
//! is fitted as a height function over the tangent plane, and the
//! Laplace-Beltrami operator is assembled from MLS derivatives of that fit.
//! Two Dirichlet problems then give the planar coordinates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mls::{
    mls_system, KernelKind, MlsConfig, Support, WeightKernel, GAUSS_SUPPORT_RATIO,
    KNN_SUPPORT_MARGIN,
};
use crate::pointcloud::{
    cloud_stats, covariance_of_points, NeighborStrategy, Neighborhood, PointCloud,
};
use crate::solvers::angular_gap;
use crate::sparse::SparseBuilder;
use crate::surface::ParamPair;
use crate::{Error, Result};

type V3 = [f64; 3];

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn unit(a: V3) -> V3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub origin: V3,
    pub normal: V3,
    pub tangents: [V3; 2],
    pub members: Vec<usize>,
    /// Tangent-plane coordinates of `members` relative to `origin`.
    pub projected: Vec<[f64; 2]>,
    /// Heights of `members` along `normal`.
    pub heights: Vec<f64>,
    /// Every member lies within the separation distance of the tangent plane.
    pub admissible: bool,
}

impl LocalFrame {
    /// Same frame with the normal reversed (tangent order swapped to keep
    /// the frame right-handed).
    pub fn flipped(&self) -> LocalFrame {
        let mut f = self.clone();
        f.normal = self.normal.map(|c| -c);
        f.tangents = [self.tangents[1], self.tangents[0]];
        f.projected = self.projected.iter().map(|p| [p[1], p[0]]).collect();
        f.heights = self.heights.iter().map(|h| -h).collect();
        f
    }
}

fn frame_with_tolerance(
    pc: &PointCloud,
    p: usize,
    strategy: NeighborStrategy,
    q: f64,
) -> Result<LocalFrame> {
    let frame_err = |reason: String| Error::Frame { index: p, reason };
    let origin = pc.point3(p);
    let nb = pc.neighborhood(&origin, strategy)?;
    if nb.len() < 6 {
        return Err(frame_err(format!(
            "neighborhood has {} points, need 6",
            nb.len()
        )));
    }
    let cov = covariance_of_points(nb.members.iter().map(|&i| pc.point(i)))
        .map_err(|e| frame_err(e.to_string()))?;
    let ev = &cov.eigenvalues;
    if !(ev[1] > 1e-12 * ev[0]) {
        return Err(frame_err("neighborhood is collinear".into()));
    }
    let t1: V3 = [
        cov.eigenvectors[0][0],
        cov.eigenvectors[0][1],
        cov.eigenvectors[0][2],
    ];
    let n: V3 = unit([
        cov.eigenvectors[2][0],
        cov.eigenvectors[2][1],
        cov.eigenvectors[2][2],
    ]);
    let t1 = unit(sub(t1, n.map(|c| c * dot(t1, n))));
    let t2 = cross(n, t1);
    let mut projected = Vec::with_capacity(nb.len());
    let mut heights = Vec::with_capacity(nb.len());
    for &i in &nb.members {
        let d = sub(pc.point3(i), origin);
        projected.push([dot(d, t1), dot(d, t2)]);
        heights.push(dot(d, n));
    }
    let admissible = heights.iter().all(|h| h.abs() < q);
    Ok(LocalFrame {
        origin,
        normal: n,
        tangents: [t1, t2],
        members: nb.members,
        projected,
        heights,
        admissible,
    })
}

/// Frame at point `p` from the PCA of its neighborhood.
pub fn local_frame(pc: &PointCloud, p: usize, strategy: NeighborStrategy) -> Result<LocalFrame> {
    if pc.dim() != 3 {
        return Err(Error::Interface("local frames need a 3D cloud".into()));
    }
    if p >= pc.len() {
        return Err(Error::Interface(format!("point {p} out of range")));
    }
    frame_with_tolerance(pc, p, strategy, cloud_stats(pc)?.separation)
}

/// Frames at every point with normals oriented consistently by propagation
/// along the neighborhood graph.
pub fn oriented_frames(pc: &PointCloud, strategy: NeighborStrategy) -> Result<Vec<LocalFrame>> {
    if pc.dim() != 3 {
        return Err(Error::Interface("local frames need a 3D cloud".into()));
    }
    let q = cloud_stats(pc)?.separation;
    let mut frames: Vec<LocalFrame> = (0..pc.len())
        .into_par_iter()
        .map(|i| frame_with_tolerance(pc, i, strategy, q))
        .collect::<Result<_>>()?;
    let mut visited = vec![false; pc.len()];
    for root in 0..pc.len() {
        if visited[root] {
            continue;
        }
        visited[root] = true;
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(i) = queue.pop_front() {
            let members = frames[i].members.clone();
            let ni = frames[i].normal;
            for j in members {
                if !visited[j] {
                    visited[j] = true;
                    if dot(frames[j].normal, ni) < 0.0 {
                        frames[j] = frames[j].flipped();
                    }
                    queue.push_back(j);
                }
            }
        }
    }
    Ok(frames)
}

/// Sparse Laplace-Beltrami rows, one per point; each row sums to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LbOperator {
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl LbOperator {
    pub fn apply(&self, field: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, w)| w * field[j]).sum())
            .collect()
    }
}

fn strategy_of(config: &MlsConfig) -> Result<NeighborStrategy> {
    match config.support {
        Support::Knn { k } => Ok(NeighborStrategy::Knn(k)),
        _ => Err(Error::Parameter("surface operators use knn support".into())),
    }
}

fn lb_row(frame: &LocalFrame, kernel: &WeightKernel) -> Result<Vec<(usize, f64)>> {
    let local = PointCloud::from_points2(&frame.projected)?;
    let distances: Vec<f64> = frame.projected.iter().map(|p| p[0].hypot(p[1])).collect();
    let radius = distances.iter().cloned().fold(0.0, f64::max);
    let nb = Neighborhood {
        center: vec![0.0, 0.0],
        members: (0..frame.members.len()).collect(),
        distances,
        strategy: NeighborStrategy::Knn(frame.members.len()),
        radius_used: radius,
    };
    let sys = mls_system(
        &local,
        [0.0, 0.0],
        kernel,
        &nb,
        KNN_SUPPORT_MARGIN * radius,
        false,
    )?;
    let c = sys.coefficients(&frame.heights);
    let s = sys.delta;
    let hx = [c[1] / s, c[2] / s];
    let hxx = [
        [2.0 * c[3] / (s * s), c[4] / (s * s)],
        [c[4] / (s * s), 2.0 * c[5] / (s * s)],
    ];
    let g = 1.0 + hx[0] * hx[0] + hx[1] * hx[1];
    let ginv = |i: usize, j: usize| (if i == j { 1.0 } else { 0.0 }) - hx[i] * hx[j] / g;
    // Delta u = g^ij u_ij - (g^ij h_ij / g) h_k u_k
    let trace: f64 = (0..2)
        .flat_map(|i| (0..2).map(move |j| (i, j)))
        .map(|(i, j)| ginv(i, j) * hxx[i][j])
        .sum();
    let k1 = -trace / g * hx[0];
    let k2 = -trace / g * hx[1];
    let [sxx, sxy, syy] = sys.second_rows();
    let mut row: Vec<(usize, f64)> = (0..frame.members.len())
        .map(|m| {
            let d1 = sys.a[1][m] / s;
            let d2 = sys.a[2][m] / s;
            let w = ginv(0, 0) * sxx[m]
                + 2.0 * ginv(0, 1) * sxy[m]
                + ginv(1, 1) * syy[m]
                + k1 * d1
                + k2 * d2;
            (frame.members[m], w)
        })
        .collect();
    let total: f64 = row.iter().map(|r| r.1).sum();
    let center = row
        .iter()
        .position(|r| r.0 == frame.members[0])
        .expect("center is a member");
    row[center].1 -= total;
    Ok(row)
}

fn surface_kernel(config: &MlsConfig) -> Result<WeightKernel> {
    Ok(match config.kernel {
        KernelKind::Gauss => match config.gauss_h {
            Some(h) => WeightKernel::gauss(h)?,
            None => WeightKernel::ScaledGauss {
                ratio: GAUSS_SUPPORT_RATIO,
            },
        },
        KernelKind::Wendland => WeightKernel::Wendland,
        KernelKind::Cubic => WeightKernel::Cubic,
    })
}

fn operator_from_frames(frames: &[LocalFrame], kernel: &WeightKernel) -> Result<LbOperator> {
    let rows = frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            lb_row(f, kernel).map_err(|e| Error::Frame {
                index: i,
                reason: format!("height fit failed: {e}"),
            })
        })
        .collect::<Result<_>>()?;
    Ok(LbOperator { rows })
}

pub fn laplace_beltrami(pc: &PointCloud, config: &MlsConfig) -> Result<LbOperator> {
    let frames = oriented_frames(pc, strategy_of(config)?)?;
    operator_from_frames(&frames, &surface_kernel(config)?)
}

/// Dirichlet data for the parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BoundarySpec {
    /// Prescribed planar positions of given points (e.g. from a known chart).
    Values {
        indices: Vec<usize>,
        values: Vec<[f64; 2]>,
    },
    /// Detected boundary loop mapped to the unit circle by arc length.
    Disk,
    /// Detected boundary loop mapped to the unit square perimeter by arc
    /// length, corners at quarter lengths.
    Rect,
}

/// Points whose projected neighbors leave an angular gap above `max_gap`.
pub fn detect_surface_boundary(frames: &[LocalFrame], max_gap: f64) -> Result<Vec<usize>> {
    let out: Vec<usize> = frames
        .iter()
        .enumerate()
        .filter(|(_, f)| angular_gap(&f.projected[1..]) > max_gap)
        .map(|(i, _)| i)
        .collect();
    if out.len() < 3 {
        return Err(Error::BoundaryDetection(format!(
            "found only {} boundary points",
            out.len()
        )));
    }
    if out.len() == frames.len() {
        return Err(Error::BoundaryDetection(
            "every point classified as boundary".into(),
        ));
    }
    Ok(out)
}

/// Orders boundary points into a loop by nearest-neighbor chaining, oriented
/// counter-clockwise about the mean normal.
pub fn boundary_loop(
    pc: &PointCloud,
    boundary: &[usize],
    frames: &[LocalFrame],
) -> Result<Vec<usize>> {
    let mut rest: Vec<usize> = boundary.to_vec();
    rest.sort_unstable();
    let mut order = vec![rest.remove(0)];
    let mut longest: f64 = 0.0;
    let mut total = 0.0;
    while !rest.is_empty() {
        let last = pc.point3(*order.last().expect("nonempty"));
        let (k, d) = rest
            .iter()
            .enumerate()
            .map(|(k, &j)| {
                (
                    k,
                    dot(sub(pc.point3(j), last), sub(pc.point3(j), last)).sqrt(),
                )
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty");
        longest = longest.max(d);
        total += d;
        order.push(rest.remove(k));
    }
    let closing = {
        let d = sub(
            pc.point3(order[0]),
            pc.point3(*order.last().expect("nonempty")),
        );
        dot(d, d).sqrt()
    };
    let mean_step = (total + closing) / order.len() as f64;
    if closing > 10.0 * mean_step || longest > 10.0 * mean_step {
        return Err(Error::BoundaryDetection(
            "boundary points do not form a single loop".into(),
        ));
    }
    let mut normal = [0.0; 3];
    for f in frames {
        normal = [
            normal[0] + f.normal[0],
            normal[1] + f.normal[1],
            normal[2] + f.normal[2],
        ];
    }
    let c = order.iter().fold([0.0; 3], |acc, &i| {
        let p = pc.point3(i);
        [acc[0] + p[0], acc[1] + p[1], acc[2] + p[2]]
    });
    let c = c.map(|v| v / order.len() as f64);
    let mut area = [0.0; 3];
    for k in 0..order.len() {
        let a = sub(pc.point3(order[k]), c);
        let b = sub(pc.point3(order[(k + 1) % order.len()]), c);
        let x = cross(a, b);
        area = [area[0] + x[0], area[1] + x[1], area[2] + x[2]];
    }
    if dot(area, normal) < 0.0 {
        order[1..].reverse();
    }
    Ok(order)
}

fn arc_parameters(pc: &PointCloud, order: &[usize]) -> Vec<f64> {
    let mut s = vec![0.0; order.len()];
    let mut acc = 0.0;
    for k in 1..order.len() {
        let d = sub(pc.point3(order[k]), pc.point3(order[k - 1]));
        acc += dot(d, d).sqrt();
        s[k] = acc;
    }
    let d = sub(
        pc.point3(order[0]),
        pc.point3(*order.last().expect("nonempty")),
    );
    let total = acc + dot(d, d).sqrt();
    s.iter().map(|v| v / total).collect()
}

fn square_perimeter(t: f64) -> [f64; 2] {
    let u = 4.0 * t;
    match u as usize {
        0 => [u, 0.0],
        1 => [1.0, u - 1.0],
        2 => [3.0 - u, 1.0],
        _ => [0.0, (4.0 - u).max(0.0)],
    }
}

/// Harmonic parameterization with a graded result.
pub fn conformal_parameterize(
    pc: &PointCloud,
    boundary: &BoundarySpec,
    config: &MlsConfig,
) -> Result<ParamPair> {
    let plane = harmonic_coordinates(pc, boundary, config)?;
    ParamPair::new(pc.clone(), plane, config)
}

/// The planar coordinates of the harmonic parameterization.
pub fn harmonic_coordinates(
    pc: &PointCloud,
    boundary: &BoundarySpec,
    config: &MlsConfig,
) -> Result<PointCloud> {
    if pc.dim() != 3 {
        return Err(Error::Interface("parameterization needs a 3D cloud".into()));
    }
    let frames = oriented_frames(pc, strategy_of(config)?)?;
    let (indices, values) = match boundary {
        BoundarySpec::Values { indices, values } => {
            if indices.len() != values.len() || indices.is_empty() {
                return Err(Error::Interface(
                    "boundary indices and values must be nonempty and equal in length".into(),
                ));
            }
            if let Some(&bad) = indices.iter().find(|&&i| i >= pc.len()) {
                return Err(Error::Interface(format!(
                    "boundary index {bad} out of range"
                )));
            }
            (indices.clone(), values.clone())
        }
        BoundarySpec::Disk | BoundarySpec::Rect => {
            let detected = detect_surface_boundary(&frames, 0.6 * std::f64::consts::PI)?;
            let order = boundary_loop(pc, &detected, &frames)?;
            let t = arc_parameters(pc, &order);
            let values = t
                .iter()
                .map(|&t| match boundary {
                    BoundarySpec::Disk => {
                        let a = std::f64::consts::TAU * t;
                        [a.cos(), a.sin()]
                    }
                    _ => square_perimeter(t),
                })
                .collect();
            (order, values)
        }
    };
    let op = operator_from_frames(&frames, &surface_kernel(config)?)?;
    let n = pc.len();
    let mut fixed = vec![None; n];
    for (k, &i) in indices.iter().enumerate() {
        if fixed[i].replace(k).is_some() {
            return Err(Error::Interface(format!("boundary index {i} repeated")));
        }
    }
    let mut builder = SparseBuilder::new(n, n);
    let mut rhs = vec![vec![0.0; n], vec![0.0; n]];
    for i in 0..n {
        match fixed[i] {
            Some(k) => {
                builder.push(i, i, 1.0);
                rhs[0][i] = values[k][0];
                rhs[1][i] = values[k][1];
            }
            None => {
                for &(j, w) in &op.rows[i] {
                    builder.push(i, j, w);
                }
            }
        }
    }
    let out = builder.build()?.solve(&rhs)?;
    let pts: Vec<[f64; 2]> = (0..n)
        .map(|i| [out.solutions[0][i], out.solutions[1][i]])
        .collect();
    PointCloud::from_points2(&pts)
}

/// Least-squares similarity `z -> a z + b` (complex `a`) taking `from` to
/// `to`; returns the largest residual.
pub fn similarity_residual(from: &[[f64; 2]], to: &[[f64; 2]]) -> Result<f64> {
    use num_complex::Complex64 as C;
    if from.len() != to.len() || from.is_empty() {
        return Err(Error::Interface(
            "point sets must be nonempty and equal in size".into(),
        ));
    }
    let n = from.len() as f64;
    let z: Vec<C> = from.iter().map(|p| C::new(p[0], p[1])).collect();
    let w: Vec<C> = to.iter().map(|p| C::new(p[0], p[1])).collect();
    let zm = z.iter().sum::<C>() / n;
    let wm = w.iter().sum::<C>() / n;
    let num: C = z
        .iter()
        .zip(&w)
        .map(|(z, w)| (z - zm).conj() * (w - wm))
        .sum();
    let den: f64 = z.iter().map(|z| (z - zm).norm_sqr()).sum();
    let a = num / den;
    Ok(z.iter()
        .zip(&w)
        .map(|(z, w)| (a * (z - zm) + wm - w).norm())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sheet(n: usize, f: impl Fn(f64, f64) -> V3) -> (PointCloud, Vec<[f64; 2]>) {
        let mut pts = Vec::new();
        let mut uv = Vec::new();
        for j in 0..=n {
            for i in 0..=n {
                let (x, y) = (i as f64 / n as f64, j as f64 / n as f64);
                pts.push(f(x, y));
                uv.push([x, y]);
            }
        }
        (PointCloud::from_points3(&pts).unwrap(), uv)
    }

    fn interior(uv: &[[f64; 2]], margin: f64) -> impl Iterator<Item = usize> + '_ {
        (0..uv.len()).filter(move |&i| uv[i].iter().all(|&c| c > margin && c < 1.0 - margin))
    }

    #[test]
    fn planar_frame() {
        let (pc, _) = sheet(10, |x, y| [x, y, 0.0]);
        let f = local_frame(&pc, 60, NeighborStrategy::Knn(25)).unwrap();
        assert!((f.normal[2].abs() - 1.0).abs() < 1e-12);
        assert!(f.admissible);
        for (k, &m) in f.members.iter().enumerate() {
            let d = sub(pc.point3(m), f.origin);
            let r = f.projected[k][0].hypot(f.projected[k][1]);
            assert!((r - d[0].hypot(d[1])).abs() < 1e-12);
        }
        for t in f.tangents {
            assert!(dot(t, f.normal).abs() < 1e-12 && (dot(t, t) - 1.0).abs() < 1e-12);
        }
        assert!(dot(f.tangents[0], f.tangents[1]).abs() < 1e-12);
    }

    #[test]
    fn flat_laplacian() {
        let (pc, uv) = sheet(16, |x, y| [x, y, 0.0]);
        let op = laplace_beltrami(&pc, &MlsConfig::default()).unwrap();
        for r in &op.rows {
            assert!(r.iter().map(|w| w.1).sum::<f64>().abs() < 1e-9);
        }
        let sq: Vec<f64> = uv.iter().map(|p| p[0] * p[0]).collect();
        let lin: Vec<f64> = uv.iter().map(|p| 2.0 * p[0] - 3.0 * p[1] + 1.0).collect();
        let (a, b) = (op.apply(&sq), op.apply(&lin));
        for i in interior(&uv, 0.2) {
            assert!((a[i] - 2.0).abs() < 1e-6, "{}", a[i]);
            assert!(b[i].abs() < 1e-8, "{}", b[i]);
        }
    }

    #[test]
    fn cylinder_laplacian() {
        let (pc, uv) = sheet(20, |x, y| [y.cos(), y.sin(), x]);
        let op = laplace_beltrami(&pc, &MlsConfig::default()).unwrap();
        let f: Vec<f64> = uv.iter().map(|p| p[1].cos()).collect();
        let lf = op.apply(&f);
        let worst = interior(&uv, 0.2)
            .map(|i| (lf[i] + f[i]).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.05, "{worst}");
        let nrm = local_frame(&pc, 210, NeighborStrategy::Knn(25))
            .unwrap()
            .normal;
        let p = pc.point3(210);
        assert!(dot(nrm, [p[0], p[1], 0.0]).abs().acos() < 0.05);
    }

    #[test]
    fn folded_sheet_is_not_admissible() {
        let mut pts = Vec::new();
        for j in 0..10 {
            for i in 0..10 {
                pts.push([i as f64 * 0.1, j as f64 * 0.1, 0.0]);
                pts.push([i as f64 * 0.1 + 0.05, j as f64 * 0.1 + 0.05, 0.12]);
            }
        }
        let pc = PointCloud::from_points3(&pts).unwrap();
        let f = local_frame(&pc, 90, NeighborStrategy::Knn(25)).unwrap();
        assert!(!f.admissible);
    }

    #[test]
    fn flat_parameterization_is_a_similarity() {
        let (pc, uv) = sheet(12, |x, y| [2.0 * x + 1.0, 2.0 * y, 0.5]);
        let pair = conformal_parameterize(&pc, &BoundarySpec::Rect, &MlsConfig::default()).unwrap();
        let plane: Vec<[f64; 2]> = (0..pc.len()).map(|i| pair.plane.point2(i)).collect();
        assert!(similarity_residual(&uv, &plane).unwrap() < 1e-6);
        assert!(pair.e_grade < 1e-8, "{}", pair.e_grade);
    }
}
