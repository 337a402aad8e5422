//! Builtin analytic maps, charts and cloud generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beltrami2d::{analytic_bc, Jacobian};
use crate::pointcloud::PointCloud;
use crate::{Complex64, Error, Result};

/// Names accepted by [`builtin_instance`].
pub const CATALOG: [&str; 8] = [
    "table1_fn",
    "f1",
    "f2",
    "f3",
    "fig2_map",
    "phi1_phi2",
    "perturbed_grid",
    "mesh_vertices",
];

/// Point counts of the irregular-cloud example.
pub const MESH_SIZES: [usize; 4] = [1047, 1807, 4132, 7185];

/// Jitter amplitude of perturbed grids, relative to the spacing.
pub const JITTER: f64 = 0.2;

/// `(x^2 + 1) sin y` with its gradient.
pub fn table1_fn(p: [f64; 2]) -> (f64, [f64; 2]) {
    let [x, y] = p;
    (
        (x * x + 1.0) * y.sin(),
        [2.0 * x * y.sin(), (x * x + 1.0) * y.cos()],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyticMap {
    /// `[e^x, (x^2 + 1) y]`
    F1,
    /// `[sin x, (x^2 + 1) sin y]`
    F2,
    /// A quartic polynomial in `z`.
    F3,
    /// `[e^x, (x^2 + 1) sin y]`
    Fig2,
}

fn f3_terms(z: Complex64) -> (Complex64, Complex64) {
    let a = z + Complex64::new(0.0, 0.5);
    let b = z - Complex64::new(0.45, 0.4);
    let c = z - Complex64::new(0.4, 0.35);
    let value = 0.4 * a * a + 0.008 * b * b * b + 0.032 * c * c * c * c;
    let deriv = 0.8 * a + 0.024 * b * b + 0.128 * c * c * c;
    (value, deriv)
}

impl AnalyticMap {
    pub fn eval(self, p: [f64; 2]) -> [f64; 2] {
        let [x, y] = p;
        match self {
            AnalyticMap::F1 => [x.exp(), (x * x + 1.0) * y],
            AnalyticMap::F2 => [x.sin(), (x * x + 1.0) * y.sin()],
            AnalyticMap::F3 => {
                let w = f3_terms(Complex64::new(x, y)).0;
                [w.re, w.im]
            }
            AnalyticMap::Fig2 => [x.exp(), (x * x + 1.0) * y.sin()],
        }
    }

    /// `[[u_x, u_y], [v_x, v_y]]`.
    pub fn jacobian(self, p: [f64; 2]) -> Jacobian {
        let [x, y] = p;
        match self {
            AnalyticMap::F1 => [[x.exp(), 0.0], [2.0 * x * y, x * x + 1.0]],
            AnalyticMap::F2 => [[x.cos(), 0.0], [2.0 * x * y.sin(), (x * x + 1.0) * y.cos()]],
            AnalyticMap::F3 => {
                let d = f3_terms(Complex64::new(x, y)).1;
                [[d.re, -d.im], [d.im, d.re]]
            }
            AnalyticMap::Fig2 => [[x.exp(), 0.0], [2.0 * x * y.sin(), (x * x + 1.0) * y.cos()]],
        }
    }

    pub fn bc(self, p: [f64; 2]) -> Result<Complex64> {
        analytic_bc(self.jacobian(p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chart {
    /// `[cosh x cos y, cosh x sin y, x]`
    Phi1,
    /// `[cos y, sin y, x]`
    Phi2,
}

impl Chart {
    pub fn eval(self, p: [f64; 2]) -> [f64; 3] {
        let [x, y] = p;
        match self {
            Chart::Phi1 => [x.cosh() * y.cos(), x.cosh() * y.sin(), x],
            Chart::Phi2 => [y.cos(), y.sin(), x],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudKind {
    /// `(n + 1)^2` vertices of a regular grid on the unit square.
    Grid,
    /// Grid with seeded jitter; boundary points slide along their edge.
    PerturbedGrid,
    /// Seeded best-candidate interior samples plus evenly spaced boundary
    /// points; the resolution is the total point count.
    MeshVertices,
}

/// A cloud on the unit square with its boundary indices and nominal spacing.
#[derive(Debug, Clone)]
pub struct Sample {
    pub cloud: PointCloud,
    pub boundary: Vec<usize>,
    pub h: f64,
}

fn on_edge(p: [f64; 2]) -> bool {
    p.iter().any(|&c| c == 0.0 || c == 1.0)
}

pub fn grid(n: usize) -> Result<Sample> {
    if n < 2 {
        return Err(Error::Parameter(format!("grid needs n >= 2, got {n}")));
    }
    let mut pts = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            pts.push([i as f64 / n as f64, j as f64 / n as f64]);
        }
    }
    let boundary = (0..pts.len()).filter(|&k| on_edge(pts[k])).collect();
    Ok(Sample {
        cloud: PointCloud::from_points2(&pts)?,
        boundary,
        h: 1.0 / n as f64,
    })
}

pub fn perturbed_grid(n: usize, seed: u64) -> Result<Sample> {
    if n < 2 {
        return Err(Error::Parameter(format!("grid needs n >= 2, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = JITTER / n as f64;
    let mut pts = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            let (ex, ey) = (i == 0 || i == n, j == 0 || j == n);
            let dx: f64 = rng.gen_range(-a..=a);
            let dy: f64 = rng.gen_range(-a..=a);
            let x = i as f64 / n as f64 + if ex { 0.0 } else { dx };
            let y = j as f64 / n as f64 + if ey { 0.0 } else { dy };
            pts.push([x, y]);
        }
    }
    let boundary = (0..pts.len()).filter(|&k| on_edge(pts[k])).collect();
    Ok(Sample {
        cloud: PointCloud::from_points2(&pts)?,
        boundary,
        h: 1.0 / n as f64,
    })
}

/// Bucketed nearest-distance queries for incremental sampling.
struct Buckets {
    cell: f64,
    side: usize,
    cells: Vec<Vec<[f64; 2]>>,
}

impl Buckets {
    fn new(cell: f64) -> Self {
        let side = (1.0 / cell).ceil() as usize + 1;
        Buckets {
            cell,
            side,
            cells: vec![Vec::new(); side * side],
        }
    }

    fn key(&self, p: [f64; 2]) -> (usize, usize) {
        let f = |c: f64| ((c / self.cell).floor().max(0.0) as usize).min(self.side - 1);
        (f(p[0]), f(p[1]))
    }

    fn insert(&mut self, p: [f64; 2]) {
        let (i, j) = self.key(p);
        self.cells[j * self.side + i].push(p);
    }

    fn nearest(&self, p: [f64; 2]) -> f64 {
        let (ci, cj) = self.key(p);
        let mut best = f64::INFINITY;
        for ring in 0..self.side {
            if best <= (ring as f64 - 1.0).max(0.0) * self.cell {
                break;
            }
            let lo_i = ci.saturating_sub(ring);
            let lo_j = cj.saturating_sub(ring);
            let hi_i = (ci + ring).min(self.side - 1);
            let hi_j = (cj + ring).min(self.side - 1);
            for j in lo_j..=hi_j {
                for i in lo_i..=hi_i {
                    if i.abs_diff(ci) != ring && j.abs_diff(cj) != ring {
                        continue;
                    }
                    for q in &self.cells[j * self.side + i] {
                        best = best.min((p[0] - q[0]).hypot(p[1] - q[1]));
                    }
                }
            }
        }
        best
    }
}

/// Irregular cloud of `count` points resembling triangulation vertices.
pub fn mesh_vertices(count: usize, seed: u64) -> Result<Sample> {
    if count < 64 {
        return Err(Error::Parameter(format!(
            "mesh clouds need at least 64 points, got {count}"
        )));
    }
    let m = ((count as f64).sqrt().round() as usize).max(3) - 1;
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(count);
    for k in 0..m {
        let t = k as f64 / m as f64;
        pts.extend([[t, 0.0], [1.0, t], [1.0 - t, 1.0], [0.0, 1.0 - t]]);
    }
    let nb = pts.len();
    let spacing = 1.0 / m as f64;
    let mut buckets = Buckets::new(spacing);
    pts.iter().for_each(|&p| buckets.insert(p));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const CANDIDATES: usize = 16;
    while pts.len() < count {
        let mut best = ([0.0, 0.0], -1.0);
        for _ in 0..CANDIDATES {
            let c = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            if c[0] <= 0.0 || c[1] <= 0.0 {
                continue;
            }
            let d = buckets.nearest(c);
            if d > best.1 {
                best = (c, d);
            }
        }
        if best.1 > 0.0 {
            buckets.insert(best.0);
            pts.push(best.0);
        }
    }
    Ok(Sample {
        cloud: PointCloud::from_points2(&pts)?,
        boundary: (0..nb).collect(),
        h: 1.0 / (count as f64).sqrt(),
    })
}

pub fn sample(kind: CloudKind, resolution: usize, seed: u64) -> Result<Sample> {
    match kind {
        CloudKind::Grid => grid(resolution),
        CloudKind::PerturbedGrid => perturbed_grid(resolution, seed),
        CloudKind::MeshVertices => mesh_vertices(resolution, seed),
    }
}

/// Surfaces `S1 = phi1(P)` and `S2 = phi2(f(P))` with their exact charts.
#[derive(Debug, Clone)]
pub struct SurfaceInstance {
    pub s1: PointCloud,
    pub s2: PointCloud,
    pub chart1: Vec<[f64; 2]>,
    pub chart2: Vec<[f64; 2]>,
}

impl SurfaceInstance {
    pub fn new(plane: &PointCloud, map: AnalyticMap) -> Result<Self> {
        let chart1: Vec<[f64; 2]> = (0..plane.len()).map(|i| plane.point2(i)).collect();
        let chart2: Vec<[f64; 2]> = chart1.iter().map(|&p| map.eval(p)).collect();
        let s1: Vec<[f64; 3]> = chart1.iter().map(|&p| Chart::Phi1.eval(p)).collect();
        let s2: Vec<[f64; 3]> = chart2.iter().map(|&p| Chart::Phi2.eval(p)).collect();
        Ok(SurfaceInstance {
            s1: PointCloud::from_points3(&s1)?,
            s2: PointCloud::from_points3(&s2)?,
            chart1,
            chart2,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub name: String,
    pub resolution: usize,
    pub sample: Sample,
    pub map: Option<AnalyticMap>,
    /// Carries the scalar benchmark function.
    pub scalar: bool,
    pub surfaces: Option<SurfaceInstance>,
}

impl Instance {
    /// Exact BC of the instance map at every cloud point.
    pub fn exact_bc(&self) -> Result<Vec<Complex64>> {
        let map = self
            .map
            .ok_or_else(|| Error::Interface(format!("instance {} has no map", self.name)))?;
        let pc = &self.sample.cloud;
        (0..pc.len()).map(|i| map.bc(pc.point2(i))).collect()
    }
}

/// Default cloud and map of a catalog entry.
pub fn catalog_entry(name: &str) -> Result<(CloudKind, Option<AnalyticMap>)> {
    Ok(match name {
        "table1_fn" => (CloudKind::Grid, None),
        "f1" => (CloudKind::Grid, Some(AnalyticMap::F1)),
        "f2" | "perturbed_grid" => (CloudKind::PerturbedGrid, Some(AnalyticMap::F2)),
        "f3" => (CloudKind::Grid, Some(AnalyticMap::F3)),
        "mesh_vertices" => (CloudKind::MeshVertices, Some(AnalyticMap::F3)),
        "fig2_map" | "phi1_phi2" => (CloudKind::Grid, Some(AnalyticMap::Fig2)),
        _ => {
            return Err(Error::Catalog {
                name: name.into(),
                valid: CATALOG.to_vec(),
            })
        }
    })
}

/// Builds a catalog instance; `cloud` overrides the entry's default sampling.
pub fn builtin_instance(
    name: &str,
    resolution: usize,
    seed: u64,
    cloud: Option<CloudKind>,
) -> Result<Instance> {
    let (default_kind, map) = catalog_entry(name)?;
    let sample = sample(cloud.unwrap_or(default_kind), resolution, seed)?;
    if let Some(map) = map {
        for i in 0..sample.cloud.len() {
            let p = sample.cloud.point2(i);
            let m = map.bc(p)?.norm();
            if !(m < 1.0) {
                return Err(Error::NotQuasiConformal { modulus: m });
            }
        }
    }
    let surfaces = if name == "phi1_phi2" {
        Some(SurfaceInstance::new(
            &sample.cloud,
            map.expect("catalog map"),
        )?)
    } else {
        None
    };
    Ok(Instance {
        name: name.into(),
        resolution,
        sample,
        map,
        scalar: name == "table1_fn",
        surfaces,
    })
}
