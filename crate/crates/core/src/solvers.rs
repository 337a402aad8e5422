//! Recovery of a planar map from a prescribed Beltrami coefficient.
//!
//! Two PDE formulations (the Beltrami equation itself and the equivalent
//! divergence-form system) and two discretizations (strong-form collocation
//! and element-free Galerkin) are supported. Nodal unknowns are MLS
//! coefficients; the returned map is the MLS approximant at the cloud points.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beltrami2d::PlanarMap;
use crate::mls::{Flavor, Mls, MlsConfig, ShapeRow};
use crate::pointcloud::PointCloud;
use crate::sparse::{SolveOutcome, SparseBuilder};
use crate::{Complex64, Error, Result};

/// Largest admissible `|mu|`.
pub const MU_LIMIT: f64 = 1.0 - 1e-9;

/// Penalty weight for essential conditions in the weak form, relative to the
/// mean diagonal of the stiffness matrix.
pub const EFG_PENALTY: f64 = 1e6;

const QUAD_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    Beltrami,
    Glaplace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    Collocation,
    Efg,
}

impl Formulation {
    pub const ALL: [Formulation; 2] = [Formulation::Beltrami, Formulation::Glaplace];

    pub fn name(self) -> &'static str {
        match self {
            Formulation::Beltrami => "beltrami",
            Formulation::Glaplace => "glaplace",
        }
    }
}

impl Discretization {
    pub const ALL: [Discretization; 2] = [Discretization::Collocation, Discretization::Efg];

    pub fn name(self) -> &'static str {
        match self {
            Discretization::Collocation => "collocation",
            Discretization::Efg => "efg",
        }
    }
}

impl std::str::FromStr for Formulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beltrami" => Ok(Formulation::Beltrami),
            "glaplace" => Ok(Formulation::Glaplace),
            _ => Err(Error::Catalog {
                name: s.into(),
                valid: vec!["beltrami", "glaplace"],
            }),
        }
    }
}

impl std::str::FromStr for Discretization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "collocation" => Ok(Discretization::Collocation),
            "efg" => Ok(Discretization::Efg),
            _ => Err(Error::Catalog {
                name: s.into(),
                valid: vec!["collocation", "efg"],
            }),
        }
    }
}

/// Coefficients `(a, b, c)` of the divergence-form system for a given `mu`.
pub fn laplace_coeffs(mu: Complex64) -> Result<(f64, f64, f64)> {
    let m2 = mu.norm_sqr();
    if !(m2 < 1.0) {
        return Err(Error::NotQuasiConformal { modulus: m2.sqrt() });
    }
    let d = 1.0 - m2;
    Ok((
        (1.0 + m2 - 2.0 * mu.re) / d,
        -2.0 * mu.im / d,
        (1.0 + m2 + 2.0 * mu.re) / d,
    ))
}

#[derive(Debug, Clone)]
pub struct QcProblem<'a> {
    pub cloud: &'a PointCloud,
    pub mu: Vec<Complex64>,
    pub boundary: Vec<usize>,
    pub boundary_values: Vec<[f64; 2]>,
    pub formulation: Formulation,
    pub discretization: Discretization,
}

impl<'a> QcProblem<'a> {
    pub fn new(
        cloud: &'a PointCloud,
        mu: Vec<Complex64>,
        boundary: Vec<usize>,
        boundary_values: Vec<[f64; 2]>,
        formulation: Formulation,
        discretization: Discretization,
    ) -> Result<Self> {
        let p = QcProblem {
            cloud,
            mu,
            boundary,
            boundary_values,
            formulation,
            discretization,
        };
        p.validate()?;
        Ok(p)
    }

    /// Dirichlet data taken from an exact map on the given boundary indices.
    pub fn with_exact_boundary(
        cloud: &'a PointCloud,
        mu: Vec<Complex64>,
        boundary: Vec<usize>,
        exact: impl Fn([f64; 2]) -> [f64; 2],
        formulation: Formulation,
        discretization: Discretization,
    ) -> Result<Self> {
        if let Some(&bad) = boundary.iter().find(|&&b| b >= cloud.len()) {
            return Err(Error::Interface(format!(
                "boundary index {bad} out of range"
            )));
        }
        let values = boundary.iter().map(|&b| exact(cloud.point2(b))).collect();
        Self::new(cloud, mu, boundary, values, formulation, discretization)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.cloud.len();
        if self.cloud.dim() != 2 {
            return Err(Error::Interface("QC solves need a planar cloud".into()));
        }
        if self.mu.len() != n {
            return Err(Error::Interface(format!(
                "mu has {} values for {n} points",
                self.mu.len()
            )));
        }
        if self.boundary.is_empty() {
            return Err(Error::Interface("boundary set is empty".into()));
        }
        if self.boundary.len() != self.boundary_values.len() {
            return Err(Error::Interface(
                "boundary indices and values differ in length".into(),
            ));
        }
        let mut seen = vec![false; n];
        for &b in &self.boundary {
            if b >= n {
                return Err(Error::Interface(format!("boundary index {b} out of range")));
            }
            if std::mem::replace(&mut seen[b], true) {
                return Err(Error::Interface(format!("boundary index {b} repeated")));
            }
        }
        if self.boundary.len() == n {
            return Err(Error::Interface("no interior points".into()));
        }
        if let Some(m) = self.mu.iter().map(|m| m.norm()).find(|m| !(*m < MU_LIMIT)) {
            return Err(Error::NotQuasiConformal { modulus: m });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub assembly_time: f64,
    pub solve_time: f64,
    pub n_unknowns: usize,
    pub n_rows: usize,
    pub iterative: bool,
}

#[derive(Debug, Clone)]
pub struct QcSolution<'a> {
    /// MLS approximant of the solution at the cloud points.
    pub map: PlanarMap<'a>,
    /// Nodal coefficients solved for.
    pub nodal: Vec<[f64; 2]>,
    pub residual_norm: f64,
    /// Largest deviation of the approximant from the Dirichlet data.
    pub boundary_residual: f64,
    pub solve_report: SolveReport,
}

/// Solver knobs beyond the problem statement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub mls: MlsConfig,
    /// Derivative flavor of the shape functions.
    pub flavor: Flavor,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            mls: MlsConfig::default(),
            flavor: Flavor::Diffuse,
        }
    }
}

pub fn solve_qc_map<'a>(
    problem: &QcProblem<'a>,
    options: &SolverOptions,
) -> Result<QcSolution<'a>> {
    problem.validate()?;
    let pc = problem.cloud;
    let mls = Mls::new(pc, &options.mls)?;
    let start = Instant::now();
    let nodes = mls.shape_rows(options.flavor)?;
    let assembled = match (problem.formulation, problem.discretization) {
        (Formulation::Beltrami, Discretization::Collocation) => {
            beltrami_collocation(problem, &nodes)?
        }
        (Formulation::Glaplace, Discretization::Collocation) => {
            glaplace_collocation(problem, &mls, &nodes)?
        }
        (f, Discretization::Efg) => efg(problem, &mls, &nodes, f, options.flavor)?,
    };
    let assembly_time = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let matrix = assembled.builder.build()?;
    let outcome: SolveOutcome = if assembled.least_squares {
        matrix.solve_least_squares(&assembled.rhs)?
    } else {
        matrix.solve(&assembled.rhs)?
    };
    let solve_time = start.elapsed().as_secs_f64();

    let n = pc.len();
    let nodal: Vec<[f64; 2]> = match assembled.layout {
        Layout::Stacked => (0..n)
            .map(|i| [outcome.solutions[0][i], outcome.solutions[0][n + i]])
            .collect(),
        Layout::TwoRhs => (0..n)
            .map(|i| [outcome.solutions[0][i], outcome.solutions[1][i]])
            .collect(),
    };
    let u: Vec<f64> = nodal.iter().map(|z| z[0]).collect();
    let v: Vec<f64> = nodal.iter().map(|z| z[1]).collect();
    let targets: Vec<[f64; 2]> = nodes
        .iter()
        .map(|r| [r.apply(&u).0, r.apply(&v).0])
        .collect();
    let boundary_residual = problem
        .boundary
        .iter()
        .zip(&problem.boundary_values)
        .map(|(&b, g)| ((targets[b][0] - g[0]).powi(2) + (targets[b][1] - g[1]).powi(2)).sqrt())
        .fold(0.0, f64::max);
    let residual_norm = outcome.relative_residual;
    Ok(QcSolution {
        map: PlanarMap::new(pc, targets)?,
        nodal,
        residual_norm,
        boundary_residual,
        solve_report: SolveReport {
            assembly_time,
            solve_time,
            n_unknowns: matrix.ncols()
                * if assembled.layout == Layout::TwoRhs {
                    2
                } else {
                    1
                },
            n_rows: matrix.nrows(),
            iterative: outcome.iterative,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    /// One system in `[u; v]`.
    Stacked,
    /// One matrix shared by `u` and `v`.
    TwoRhs,
}

struct Assembled {
    builder: SparseBuilder,
    rhs: Vec<Vec<f64>>,
    least_squares: bool,
    layout: Layout,
}

/// Real and imaginary residual rows of `f_zbar - mu f_z` (times two) at one
/// point, as coefficients of `u` and `v` over the row members.
fn beltrami_rows(row: &ShapeRow, mu: Complex64) -> [(Vec<f64>, Vec<f64>); 2] {
    let (s, t) = (mu.re, mu.im);
    // re: u_x - v_y - s (u_x + v_y) + t (v_x - u_y)
    // im: v_x + u_y - t (u_x + v_y) - s (v_x - u_y)
    let m = row.members.len();
    let mut re = (vec![0.0; m], vec![0.0; m]);
    let mut im = (vec![0.0; m], vec![0.0; m]);
    for k in 0..m {
        let (dx, dy) = (row.d1[k], row.d2[k]);
        re.0[k] = (1.0 - s) * dx - t * dy;
        re.1[k] = -(1.0 + s) * dy + t * dx;
        im.0[k] = (1.0 + s) * dy - t * dx;
        im.1[k] = (1.0 - s) * dx - t * dy;
    }
    [re, im]
}

fn beltrami_collocation(problem: &QcProblem<'_>, nodes: &[ShapeRow]) -> Result<Assembled> {
    let n = problem.cloud.len();
    let nb = problem.boundary.len();
    let mut builder = SparseBuilder::new(2 * n + 2 * nb, 2 * n);
    let mut rhs = vec![0.0; 2 * n + 2 * nb];
    for (i, row) in nodes.iter().enumerate() {
        let [re, im] = beltrami_rows(row, problem.mu[i]);
        for (k, &j) in row.members.iter().enumerate() {
            builder.push(2 * i, j, re.0[k]);
            builder.push(2 * i, n + j, re.1[k]);
            builder.push(2 * i + 1, j, im.0[k]);
            builder.push(2 * i + 1, n + j, im.1[k]);
        }
    }
    for (r, (&b, g)) in problem
        .boundary
        .iter()
        .zip(&problem.boundary_values)
        .enumerate()
    {
        let row = &nodes[b];
        let (ru, rv) = (2 * n + 2 * r, 2 * n + 2 * r + 1);
        for (k, &j) in row.members.iter().enumerate() {
            builder.push(ru, j, row.phi[k]);
            builder.push(rv, n + j, row.phi[k]);
        }
        rhs[ru] = g[0];
        rhs[rv] = g[1];
    }
    Ok(Assembled {
        builder,
        rhs: vec![rhs],
        least_squares: true,
        layout: Layout::Stacked,
    })
}

fn coefficient_fields(mu: &[Complex64]) -> Result<[Vec<f64>; 3]> {
    let mut out = [
        Vec::with_capacity(mu.len()),
        Vec::with_capacity(mu.len()),
        Vec::with_capacity(mu.len()),
    ];
    for &m in mu {
        let (a, b, c) = laplace_coeffs(m)?;
        debug_assert!((a * c - b * b - 1.0).abs() < 1e-9 * a.max(c));
        out[0].push(a);
        out[1].push(b);
        out[2].push(c);
    }
    Ok(out)
}

fn glaplace_collocation(
    problem: &QcProblem<'_>,
    mls: &Mls<'_>,
    nodes: &[ShapeRow],
) -> Result<Assembled> {
    let n = problem.cloud.len();
    let [fa, fb, fc] = coefficient_fields(&problem.mu)?;
    let mut is_boundary = vec![None; n];
    for (r, &b) in problem.boundary.iter().enumerate() {
        is_boundary[b] = Some(r);
    }
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Vec<(usize, f64)>> {
            let node = &nodes[i];
            if is_boundary[i].is_some() {
                return Ok(node
                    .members
                    .iter()
                    .copied()
                    .zip(node.phi.iter().copied())
                    .collect());
            }
            let sys = mls.system_at(i, false)?;
            let jet = |f: &[f64]| -> (f64, f64, f64) {
                let c = sys.coefficients(&sys.gather(f));
                (c[0], c[1] / sys.delta, c[2] / sys.delta)
            };
            let (_, ax, _) = jet(&fa);
            let (_, bx, by) = jet(&fb);
            let (_, _, cy) = jet(&fc);
            let (a, b, c) = (fa[i], fb[i], fc[i]);
            let [sxx, sxy, syy] = sys.second_rows();
            let (ga, gb) = (ax + by, bx + cy);
            let d1: Vec<f64> = sys.a[1].iter().map(|v| v / sys.delta).collect();
            let d2: Vec<f64> = sys.a[2].iter().map(|v| v / sys.delta).collect();
            Ok(sys
                .members
                .iter()
                .enumerate()
                .map(|(k, &j)| {
                    (
                        j,
                        a * sxx[k] + 2.0 * b * sxy[k] + c * syy[k] + ga * d1[k] + gb * d2[k],
                    )
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut builder = SparseBuilder::new(n, n);
    let mut ru = vec![0.0; n];
    let mut rv = vec![0.0; n];
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row {
            builder.push(i, j, v);
        }
        if let Some(r) = is_boundary[i] {
            ru[i] = problem.boundary_values[r][0];
            rv[i] = problem.boundary_values[r][1];
        }
    }
    Ok(Assembled {
        builder,
        rhs: vec![ru, rv],
        least_squares: false,
        layout: Layout::TwoRhs,
    })
}

/// Gauss points and weights of the background quadrature.
pub fn quadrature_points(pc: &PointCloud, cell: f64, reach: f64) -> Result<Vec<([f64; 2], f64)>> {
    if !(cell > 0.0) {
        return Err(Error::Parameter(format!(
            "quadrature cell size must be positive, got {cell}"
        )));
    }
    let (lo, hi) = pc.bounding_box();
    let nx = ((hi[0] - lo[0]) / cell - 1e-9).ceil().max(1.0) as usize;
    let ny = ((hi[1] - lo[1]) / cell - 1e-9).ceil().max(1.0) as usize;
    let (hx, hy) = ((hi[0] - lo[0]) / nx as f64, (hi[1] - lo[1]) / ny as f64);
    let g = 0.5 / 3f64.sqrt();
    let mut out = Vec::with_capacity(4 * nx * ny);
    for cy in 0..ny {
        for cx in 0..nx {
            let center = [
                lo[0] + (cx as f64 + 0.5) * hx,
                lo[1] + (cy as f64 + 0.5) * hy,
            ];
            if pc.nearest_distance(&center) > reach {
                continue;
            }
            for (sx, sy) in [(-g, -g), (g, -g), (-g, g), (g, g)] {
                out.push(([center[0] + sx * hx, center[1] + sy * hy], 0.25 * hx * hy));
            }
        }
    }
    Ok(out)
}

/// Mean distance from a point to its nearest neighbour.
pub fn mean_spacing(pc: &PointCloud) -> f64 {
    let total: f64 = (0..pc.len())
        .into_par_iter()
        .map(|i| pc.knn(pc.point(i), 2).get(1).map_or(0.0, |&(_, d)| d))
        .sum();
    total / pc.len() as f64
}

fn efg(
    problem: &QcProblem<'_>,
    mls: &Mls<'_>,
    nodes: &[ShapeRow],
    formulation: Formulation,
    flavor: Flavor,
) -> Result<Assembled> {
    let pc = problem.cloud;
    let n = pc.len();
    let reach = mls.neighborhood(pc.point2(0))?.1;
    let spacing = mean_spacing(pc);
    let quad = quadrature_points(pc, spacing, reach)?;
    let mu_re: Vec<f64> = problem.mu.iter().map(|m| m.re).collect();
    let mu_im: Vec<f64> = problem.mu.iter().map(|m| m.im).collect();
    let stacked = formulation == Formulation::Beltrami;
    let size = if stacked { 2 * n } else { n };

    let mut builder = SparseBuilder::new(size, size);
    let mut compacted = 0;
    for chunk in quad.chunks(QUAD_CHUNK) {
        let local: Vec<Vec<(usize, usize, f64)>> = chunk
            .par_iter()
            .map(|&(x, w)| -> Result<Vec<(usize, usize, f64)>> {
                let row = mls.shape_row(x, flavor)?;
                let mu = Complex64::new(row.apply(&mu_re).0, row.apply(&mu_im).0);
                let m = row.members.len();
                let mut out = Vec::with_capacity(if stacked { 4 * m * m } else { m * m });
                match formulation {
                    Formulation::Glaplace => {
                        let (a, b, c) = laplace_coeffs(mu)?;
                        for p in 0..m {
                            let (px, py) = (row.d1[p], row.d2[p]);
                            let (qx, qy) = (a * px + b * py, b * px + c * py);
                            for q in 0..m {
                                out.push((
                                    row.members[p],
                                    row.members[q],
                                    w * (qx * row.d1[q] + qy * row.d2[q]),
                                ));
                            }
                        }
                    }
                    Formulation::Beltrami => {
                        if !(mu.norm() < MU_LIMIT) {
                            return Err(Error::NotQuasiConformal { modulus: mu.norm() });
                        }
                        let [re, im] = beltrami_rows(&row, mu);
                        // column index into [u; v] and coefficient per residual
                        let cols: Vec<(usize, f64, f64)> = (0..m)
                            .map(|k| (row.members[k], re.0[k], im.0[k]))
                            .chain((0..m).map(|k| (n + row.members[k], re.1[k], im.1[k])))
                            .collect();
                        for &(i, ri, ii) in &cols {
                            for &(j, rj, ij) in &cols {
                                out.push((i, j, w * (ri * rj + ii * ij)));
                            }
                        }
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;

        for block in local {
            for (i, j, v) in block {
                builder.push(i, j, v);
            }
        }
        if builder.len() > 2 * compacted.max(1 << 20) {
            builder.compact();
            compacted = builder.len();
        }
    }
    builder.compact();
    let diag = builder.diagonal();
    let penalty = EFG_PENALTY * diag.iter().sum::<f64>() / size as f64;
    let nrhs = if stacked { 1 } else { 2 };
    let mut rhs = vec![vec![0.0; size]; nrhs];
    for (&b, g) in problem.boundary.iter().zip(&problem.boundary_values) {
        let row = &nodes[b];
        for comp in 0..2 {
            let (offset, r) = if stacked { (comp * n, 0) } else { (0, comp) };
            for (k, &i) in row.members.iter().enumerate() {
                rhs[r][offset + i] += penalty * row.phi[k] * g[comp];
            }
            if !stacked && comp == 1 {
                continue;
            }
            for (k, &i) in row.members.iter().enumerate() {
                for (l, &j) in row.members.iter().enumerate() {
                    builder.push(offset + i, offset + j, penalty * row.phi[k] * row.phi[l]);
                }
            }
        }
    }
    let layout = if stacked {
        Layout::Stacked
    } else {
        Layout::TwoRhs
    };
    Ok(Assembled {
        builder,
        rhs,
        least_squares: false,
        layout,
    })
}

/// `sum |g1 - g0| / sum |g0|`, or the mean of `|g1 - g0|` when `g0` vanishes.
pub fn relative_error(g1: &PlanarMap<'_>, g0: &PlanarMap<'_>) -> Result<f64> {
    relative_error_values(&g1.targets, &g0.targets)
}

pub fn relative_error_values(g1: &[[f64; 2]], g0: &[[f64; 2]]) -> Result<f64> {
    if g1.len() != g0.len() {
        return Err(Error::Interface(format!(
            "maps have {} and {} points",
            g1.len(),
            g0.len()
        )));
    }
    if g0.is_empty() {
        return Err(Error::Interface("maps are empty".into()));
    }
    let norm = |a: [f64; 2]| a[0].hypot(a[1]);
    let num: f64 = g1
        .iter()
        .zip(g0)
        .map(|(a, b)| norm([a[0] - b[0], a[1] - b[1]]))
        .sum();
    let den: f64 = g0.iter().map(|&b| norm(b)).sum();
    Ok(if den == 0.0 {
        num / g0.len() as f64
    } else {
        num / den
    })
}

/// Indices of points on the outer boundary of a planar cloud.
///
/// A point is on the boundary when the directions to its `k` nearest
/// neighbours leave an angular gap larger than `max_gap`, or when it is a
/// convex hull vertex.
pub fn detect_boundary(pc: &PointCloud, k: usize, max_gap: f64) -> Result<Vec<usize>> {
    if pc.dim() != 2 {
        return Err(Error::Interface(
            "boundary detection needs a planar cloud".into(),
        ));
    }
    if pc.len() < 4 || k < 3 {
        return Err(Error::BoundaryDetection(format!(
            "need at least 4 points and k >= 3 (k = {k})"
        )));
    }
    let k = k.min(pc.len() - 1);
    let hull = convex_hull(pc);
    let mut flag = vec![false; pc.len()];
    for &i in &hull {
        flag[i] = true;
    }
    let gaps: Vec<bool> = (0..pc.len())
        .into_par_iter()
        .map(|i| {
            let p = pc.point2(i);
            let offsets: Vec<[f64; 2]> = pc
                .knn(&p, k + 1)
                .into_iter()
                .filter(|&(j, _)| j != i)
                .map(|(j, _)| {
                    let q = pc.point2(j);
                    [q[0] - p[0], q[1] - p[1]]
                })
                .collect();
            let gap = angular_gap(&offsets);
            gap > max_gap
        })
        .collect();
    let out: Vec<usize> = (0..pc.len()).filter(|&i| flag[i] || gaps[i]).collect();
    if out.len() == pc.len() {
        return Err(Error::BoundaryDetection(
            "every point classified as boundary".into(),
        ));
    }
    Ok(out)
}

/// Largest angle between consecutive directions of the given offsets.
pub fn angular_gap(offsets: &[[f64; 2]]) -> f64 {
    if offsets.is_empty() {
        return std::f64::consts::TAU;
    }
    let mut angles: Vec<f64> = offsets.iter().map(|d| d[1].atan2(d[0])).collect();
    angles.sort_by(f64::total_cmp);
    let wrap = angles[0] + std::f64::consts::TAU - angles[angles.len() - 1];
    angles.windows(2).map(|w| w[1] - w[0]).fold(wrap, f64::max)
}

/// Convex hull vertices (monotone chain), counter-clockwise, collinear points
/// on hull edges included.
pub fn convex_hull(pc: &PointCloud) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pc.len()).collect();
    idx.sort_by(|&a, &b| {
        let (p, q) = (pc.point2(a), pc.point2(b));
        p[0].total_cmp(&q[0]).then(p[1].total_cmp(&q[1]))
    });
    let cross = |o: usize, a: usize, b: usize| {
        let (o, a, b) = (pc.point2(o), pc.point2(a), pc.point2(b));
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let scale = {
        let (lo, hi) = pc.bounding_box();
        (hi[0] - lo[0]).max(hi[1] - lo[1]).powi(2)
    };
    let tol = 1e-12 * scale;
    let chain = |iter: &mut dyn Iterator<Item = usize>| {
        let mut h: Vec<usize> = Vec::new();
        for i in iter {
            while h.len() >= 2 && cross(h[h.len() - 2], h[h.len() - 1], i) < -tol {
                h.pop();
            }
            h.push(i);
        }
        h
    };
    let mut lower = chain(&mut idx.iter().copied());
    let mut upper = chain(&mut idx.iter().rev().copied());
    lower.pop();
    upper.pop();
    lower.extend(upper);
    let mut seen = std::collections::BTreeSet::new();
    lower.retain(|i| seen.insert(*i));
    lower
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beltrami2d::analytic_bc;

    fn grid(n: usize) -> PointCloud {
        let mut pts = Vec::new();
        for j in 0..=n {
            for i in 0..=n {
                pts.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }
        PointCloud::from_points2(&pts).unwrap()
    }

    fn edge(pc: &PointCloud) -> Vec<usize> {
        (0..pc.len())
            .filter(|&i| {
                let p = pc.point2(i);
                p.iter()
                    .any(|&c| c.abs() < 1e-12 || (c - 1.0).abs() < 1e-12)
            })
            .collect()
    }

    #[test]
    fn laplace_coefficients() {
        assert_eq!(
            laplace_coeffs(Complex64::new(0.0, 0.0)).unwrap(),
            (1.0, 0.0, 1.0)
        );
        let (a, b, c) = laplace_coeffs(Complex64::new(0.5, 0.0)).unwrap();
        assert!((a - 1.0 / 3.0).abs() < 1e-15 && b == 0.0 && (c - 3.0).abs() < 1e-15);
        assert!(matches!(
            laplace_coeffs(Complex64::new(0.6, 0.8)),
            Err(Error::NotQuasiConformal { .. })
        ));
    }

    #[test]
    fn relative_error_conventions() {
        let a = [[1.0, 2.0], [3.0, -1.0]];
        assert_eq!(relative_error_values(&a, &a).unwrap(), 0.0);
        let z = [[0.0, 0.0]; 2];
        assert_eq!(relative_error_values(&[[1.0, 0.0]; 2], &z).unwrap(), 1.0);
        let b = [[1.5, 2.0], [3.0, -0.5]];
        let e1 = relative_error_values(&b, &a).unwrap();
        let dbl = |x: &[[f64; 2]]| {
            x.iter()
                .map(|p| [2.0 * p[0], 2.0 * p[1]])
                .collect::<Vec<_>>()
        };
        let e2 = relative_error_values(&dbl(&b), &dbl(&a)).unwrap();
        assert!((e1 - e2).abs() < 1e-15);
        assert!(relative_error_values(&a, &a[..1]).is_err());
    }

    #[test]
    fn grid_boundary_detection_is_exact() {
        let pc = grid(12);
        let got = detect_boundary(&pc, 8, 0.6 * std::f64::consts::PI).unwrap();
        assert_eq!(got, edge(&pc));
        assert_eq!(convex_hull(&pc).len(), 48);
    }

    #[test]
    fn affine_maps_are_recovered() {
        let pc = grid(10);
        let bnd = edge(&pc);
        let k = Complex64::new(0.3, -0.2);
        for form in Formulation::ALL {
            for disc in Discretization::ALL {
                let exact = |p: [f64; 2]| {
                    let z = Complex64::new(p[0], p[1]);
                    let w = z + k * z.conj();
                    [w.re, w.im]
                };
                let prob = QcProblem::with_exact_boundary(
                    &pc,
                    vec![k; pc.len()],
                    bnd.clone(),
                    exact,
                    form,
                    disc,
                )
                .unwrap();
                let sol = solve_qc_map(&prob, &SolverOptions::default()).unwrap();
                let worst = (0..pc.len())
                    .map(|i| {
                        let e = exact(pc.point2(i));
                        (sol.map.targets[i][0] - e[0])
                            .abs()
                            .max((sol.map.targets[i][1] - e[1]).abs())
                    })
                    .fold(0.0, f64::max);
                match (form, disc) {
                    (_, Discretization::Collocation) => {
                        assert!(worst < 1e-8, "{form:?}/{disc:?}: {worst:e}")
                    }
                    (Formulation::Beltrami, Discretization::Efg) => {
                        assert!(worst < 1e-6, "{worst:e}")
                    }
                    // point penalties leave boundary flux terms in the Galerkin rows
                    (Formulation::Glaplace, Discretization::Efg) => {
                        assert!(worst < 5e-2, "{worst:e}");
                        assert!(sol.boundary_residual < 1e-5, "{:e}", sol.boundary_residual);
                    }
                }
            }
        }
    }

    #[test]
    fn first_example_collocation_accuracy() {
        let pc = grid(24);
        let bnd = edge(&pc);
        let f = |p: [f64; 2]| [p[0].exp(), (p[0] * p[0] + 1.0) * p[1]];
        let mu: Vec<Complex64> = pc
            .iter()
            .map(|p| {
                analytic_bc([[p[0].exp(), 0.0], [2.0 * p[0] * p[1], p[0] * p[0] + 1.0]]).unwrap()
            })
            .collect();
        let exact = PlanarMap::from_fn(&pc, f).unwrap();
        for form in Formulation::ALL {
            let prob = QcProblem::with_exact_boundary(
                &pc,
                mu.clone(),
                bnd.clone(),
                f,
                form,
                Discretization::Collocation,
            )
            .unwrap();
            let sol = solve_qc_map(&prob, &SolverOptions::default()).unwrap();
            let e = relative_error(&sol.map, &exact).unwrap();
            assert!(e < 3e-4, "{form:?}: {e:e}");
        }
    }
}
