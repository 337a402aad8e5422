//! Beltrami coefficients of maps from planar clouds into 3D, conformality
//! grades of parameterizations and Beltrami representations of surface maps.

use nalgebra::{Matrix3, Matrix3x2, Vector2, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beltrami2d::{
    analytic_bc, orient_like, pcbc, shape_coefficient, t_coefficient, BeltramiField, Jacobian,
    PlanarMap,
};
use crate::mls::{Flavor, Mls, MlsConfig, MlsSystem};
use crate::pointcloud::{cloud_stats, covariance_of_points, PointCloud};
use crate::{Error, Result};

/// A map from a planar cloud into 3D.
#[derive(Debug, Clone)]
pub struct SurfaceMap<'a> {
    pub source: &'a PointCloud,
    pub targets: Vec<[f64; 3]>,
}

impl<'a> SurfaceMap<'a> {
    pub fn new(source: &'a PointCloud, targets: Vec<[f64; 3]>) -> Result<Self> {
        if source.dim() != 2 {
            return Err(Error::Interface(
                "surface maps need a 2D source cloud".into(),
            ));
        }
        if targets.len() != source.len() {
            return Err(Error::Interface(format!(
                "{} targets for {} source points",
                targets.len(),
                source.len()
            )));
        }
        if targets.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Interface("map targets must be finite".into()));
        }
        Ok(SurfaceMap { source, targets })
    }

    pub fn from_fn(source: &'a PointCloud, f: impl Fn([f64; 2]) -> [f64; 3]) -> Result<Self> {
        let targets = (0..source.len()).map(|i| f(source.point2(i))).collect();
        Self::new(source, targets)
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        self.targets.iter().map(|t| t[c]).collect()
    }
}

fn dot3(x: [f64; 3], y: [f64; 3]) -> f64 {
    x[0] * y[0] + x[1] * y[1] + x[2] * y[2]
}

/// `(E - G + 2iF) / (E + G + 2 sqrt(EG - F^2))` with the extra terms built
/// from the correction vectors `b1`, `b2`. Returns the value and whether the
/// radicand was clamped.
fn metric_bc(a1: [f64; 3], a2: [f64; 3], b1: [f64; 3], b2: [f64; 3]) -> (Option<Complex64>, bool) {
    let (e, f, g) = (dot3(a1, a1), dot3(a1, a2), dot3(a2, a2));
    let (eb, fb, gb) = (dot3(b1, b1), dot3(b1, b2), dot3(b2, b2));
    let num = Complex64::new(e - g + eb - gb, 2.0 * (f + fb));
    let mut rad = e * g - f * f + (eb * gb - fb * fb);
    let clamped = rad < 0.0;
    if clamped {
        rad = 0.0;
    }
    let den = e + g + eb + gb + 2.0 * rad.sqrt();
    if !(den > 1e-300) {
        return (None, clamped);
    }
    (Some(num / den), clamped)
}

/// Coefficient of a map into 3D from its two tangent vectors.
pub fn metric_bc_from_tangents(d1: [f64; 3], d2: [f64; 3]) -> Option<Complex64> {
    metric_bc(d1, d2, [0.0; 3], [0.0; 3]).0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceBc {
    pub field: BeltramiField,
    /// Points whose metric radicand was negative and clamped to zero.
    pub clamped: Vec<usize>,
    /// Standard flavor only: per-point `||mu| - |mu_full||`, where `mu_full`
    /// uses complete standard derivatives of the global approximant.
    pub consistency: Option<Vec<f64>>,
}

impl SurfaceBc {
    pub fn max_consistency_gap(&self) -> Option<f64> {
        self.consistency.as_ref().map(|c| {
            c.iter()
                .copied()
                .filter(|v| v.is_finite())
                .fold(0.0, f64::max)
        })
    }
}

/// Diffuse tangents `a_j` and correction vectors `b_j = q^T (d_j A) F`.
fn tangent_rows(sys: &MlsSystem, fields: &[Vec<f64>; 3]) -> [[f64; 3]; 4] {
    let mut out = [[0.0; 3]; 4];
    for c in 0..3 {
        let vals = sys.gather(&fields[c]);
        let coef = sys.coefficients(&vals);
        out[0][c] = coef[1] / sys.delta;
        out[1][c] = coef[2] / sys.delta;
        if let Some(da) = sys.da.as_ref() {
            out[2][c] = da[0][0].iter().zip(&vals).map(|(x, y)| x * y).sum();
            out[3][c] = da[1][0].iter().zip(&vals).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// Surface Beltrami coefficient at every source point.
///
/// The standard flavor adds the correction terms built from `q^T (d_j A) F`
/// alone; the value from complete standard derivatives is compared through
/// `consistency`.
pub fn surface_bc(map: &SurfaceMap<'_>, flavor: Flavor, config: &MlsConfig) -> Result<SurfaceBc> {
    let mls = Mls::new(map.source, config)?;
    let fields = [map.component(0), map.component(1), map.component(2)];
    let rows: Vec<(Option<Complex64>, bool, f64)> = (0..map.source.len())
        .into_par_iter()
        .map(|i| {
            let sys = mls.system_at(i, flavor == Flavor::Standard)?;
            let [a1, a2, b1, b2] = tangent_rows(&sys, &fields);
            Ok(match flavor {
                Flavor::Diffuse => {
                    let (mu, clamped) = metric_bc(a1, a2, [0.0; 3], [0.0; 3]);
                    (mu, clamped, f64::NAN)
                }
                Flavor::Standard => {
                    let (mu, clamped) = metric_bc(a1, a2, b1, b2);
                    let t1 = std::array::from_fn(|c| a1[c] + b1[c]);
                    let t2 = std::array::from_fn(|c| a2[c] + b2[c]);
                    let gap = match (mu, metric_bc_from_tangents(t1, t2)) {
                        (Some(a), Some(b)) => (a.norm() - b.norm()).abs(),
                        _ => f64::NAN,
                    };
                    (mu, clamped, gap)
                }
            })
        })
        .collect::<Result<_>>()?;
    let clamped = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.1)
        .map(|(i, _)| i)
        .collect();
    let consistency = (flavor == Flavor::Standard).then(|| rows.iter().map(|r| r.2).collect());
    Ok(SurfaceBc {
        field: BeltramiField::from_values(rows.into_iter().map(|r| r.0).collect(), flavor),
        clamped,
        consistency,
    })
}

/// Largest `||surface_bc| - |pcbc||` (diffuse) for a map whose third
/// component is ignored by the planar coefficient.
pub fn planar_reduction_gap(map: &SurfaceMap<'_>, config: &MlsConfig) -> Result<f64> {
    let planar = PlanarMap::new(
        map.source,
        map.targets.iter().map(|t| [t[0], t[1]]).collect(),
    )?;
    let a = surface_bc(map, Flavor::Diffuse, config)?.field;
    let b = pcbc(&planar, Flavor::Diffuse, config)?;
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x.norm() - y.norm()).abs())
        .fold(0.0, f64::max))
}

/// A surface cloud with a planar parameter cloud; point `i` of one
/// corresponds to point `i` of the other.
#[derive(Debug, Clone)]
pub struct ParamPair {
    pub surface: PointCloud,
    pub plane: PointCloud,
    pub e_grade: f64,
}

impl ParamPair {
    pub fn new(surface: PointCloud, plane: PointCloud, config: &MlsConfig) -> Result<Self> {
        let mut pair = ParamPair::ungraded(surface, plane)?;
        pair.e_grade = conformality_grade(&pair, config)?.e_grade;
        Ok(pair)
    }

    /// Pair without computing the grade (`e_grade` is NaN).
    pub fn ungraded(surface: PointCloud, plane: PointCloud) -> Result<Self> {
        if surface.dim() != 3 || plane.dim() != 2 {
            return Err(Error::Interface(
                "parameter pair needs a 3D surface and a 2D plane cloud".into(),
            ));
        }
        if surface.len() != plane.len() {
            return Err(Error::Interface(format!(
                "surface has {} points, plane has {}",
                surface.len(),
                plane.len()
            )));
        }
        Ok(ParamPair {
            surface,
            plane,
            e_grade: f64::NAN,
        })
    }

    /// The inverse parameterization as a map plane -> surface.
    pub fn inverse_map(&self) -> SurfaceMap<'_> {
        SurfaceMap {
            source: &self.plane,
            targets: (0..self.surface.len())
                .map(|i| self.surface.point3(i))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeReport {
    pub e_grade: f64,
    pub diffuse_sup: f64,
    pub standard_sup: f64,
    /// Points excluded from the maximum because their coefficient was undefined.
    pub excluded: usize,
}

pub fn conformality_grade(param: &ParamPair, config: &MlsConfig) -> Result<GradeReport> {
    let map = param.inverse_map();
    let d = surface_bc(&map, Flavor::Diffuse, config)?;
    let s = surface_bc(&map, Flavor::Standard, config)?;
    Ok(GradeReport {
        e_grade: d.field.sup_norm.max(s.field.sup_norm),
        diffuse_sup: d.field.sup_norm,
        standard_sup: s.field.sup_norm,
        excluded: d.field.invalid_count() + s.field.invalid_count(),
    })
}

fn check_bijection(map: &[usize], n: usize) -> Result<()> {
    if map.len() != n {
        return Err(Error::Interface(format!(
            "map has {} entries for {n} points",
            map.len()
        )));
    }
    let mut seen = vec![false; n];
    for &j in map {
        if j >= n || std::mem::replace(&mut seen[j], true) {
            return Err(Error::Interface("surface map is not a bijection".into()));
        }
    }
    Ok(())
}

/// Beltrami representation of the bijection `P1[i] -> P2[map[i]]`, indexed
/// by the points of `P1`.
pub fn pcbr(
    map: &[usize],
    param1: &ParamPair,
    param2: &ParamPair,
    flavor: Flavor,
    config: &MlsConfig,
) -> Result<BeltramiField> {
    if param1.surface.len() != param2.surface.len() {
        return Err(Error::Interface("surface clouds differ in size".into()));
    }
    check_bijection(map, param1.surface.len())?;
    let projected = PlanarMap::new(
        &param1.plane,
        map.iter().map(|&j| param2.plane.point2(j)).collect(),
    )?;
    pcbc(&projected, flavor, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCovariancePrediction {
    pub t: Complex64,
    pub predicted_ratio: f64,
    pub measured_ratio: f64,
    pub mu: Complex64,
    pub zeta: Complex64,
    /// Unit solution of `grad phi1 * w = v_{1,2}` in the least-squares sense.
    pub w: [f64; 2],
    pub predicted_axes: [Vec<f64>; 2],
    pub measured_axes: [Vec<f64>; 2],
    /// Third eigenvalues of the source and image covariances.
    pub third_eigenvalues: [f64; 2],
    /// False when `lambda_{1,1} / lambda_{1,2} - 1` is below the fill distance.
    pub reliable: bool,
}

fn mat32(j: [[f64; 2]; 3]) -> Matrix3x2<f64> {
    Matrix3x2::new(j[0][0], j[0][1], j[1][0], j[1][1], j[2][0], j[2][1])
}

/// Covariance prediction at `p` for the index map `P1[i] -> P2[i]`.
pub fn surface_covariance_prediction(
    param1: &ParamPair,
    param2: &ParamPair,
    p: usize,
    flavor: Flavor,
    config: &MlsConfig,
) -> Result<SurfaceCovariancePrediction> {
    let n = param1.surface.len();
    if param2.surface.len() != n {
        return Err(Error::Interface("surface clouds differ in size".into()));
    }
    let mls = Mls::new(&param1.plane, config)?;
    let x = param1.plane.point2(p);
    let sys = mls.system(x, flavor == Flavor::Standard)?;
    let grad =
        |values: &[f64]| -> Result<[f64; 2]> { Ok(sys.jet(&sys.gather(values), flavor)?.grad()) };
    let comp = |pc: &PointCloud, c: usize| -> Vec<f64> { (0..n).map(|i| pc.point(i)[c]).collect() };

    let mut j_phi = [[0.0; 2]; 3];
    let mut j_f = [[0.0; 2]; 3];
    for c in 0..3 {
        j_phi[c] = grad(&comp(&param1.surface, c))?;
        j_f[c] = grad(&comp(&param2.surface, c))?;
    }
    let planar: Jacobian = [
        grad(&comp(&param2.plane, 0))?,
        grad(&comp(&param2.plane, 1))?,
    ];
    let mu = analytic_bc(planar)?;

    let (nb, _) = mls.neighborhood(x)?;
    let m1 = covariance_of_points(nb.members.iter().map(|&i| param1.surface.point(i)))?;
    let m2 = covariance_of_points(nb.members.iter().map(|&i| param2.surface.point(i)))?;
    let (l11, l12, l13) = (m1.eigenvalues[0], m1.eigenvalues[1], m1.eigenvalues[2]);
    if !(l12 > 0.0) || !(m2.eigenvalues[1] > 0.0) {
        return Err(Error::DegenerateNeighborhood(
            "surface neighborhood covariance is rank deficient".into(),
        ));
    }
    let jp = mat32(j_phi);
    let jtj_inv = (jp.transpose() * jp)
        .try_inverse()
        .ok_or(Error::DegenerateJacobian)?;
    let w_raw = jtj_inv * (jp.transpose() * Vector3::from_column_slice(&m1.eigenvectors[1]));
    let wn = w_raw.norm();
    if !(wn > 0.0) {
        return Err(Error::DegenerateJacobian);
    }
    let w = [w_raw[0] / wn, w_raw[1] / wn];
    let t = t_coefficient(l11, l12, w, mu);
    let tn = t.norm();
    let predicted_ratio = ((1.0 + tn) / (1.0 - tn)).powi(2);
    let sigma = shape_coefficient(l11, l12, w);

    let normal = jp.column(0).cross(&jp.column(1)).normalize();
    let proj = Matrix3::identity() - normal * normal.transpose();
    let shifted =
        Matrix3::from_fn(|r, c| m1.matrix[(r, c)]) + (l11 * l12).sqrt() * Matrix3::identity();
    let df = mat32(j_f) * jtj_inv * jp.transpose();
    let theta1 = t.arg() / 2.0;
    let mut predicted_axes: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut measured_axes: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for k in 0..2 {
        let th = theta1 + k as f64 * std::f64::consts::FRAC_PI_2;
        let u = proj * (shifted * (jp * Vector2::new(th.cos(), th.sin())));
        let img = df * u;
        let norm = img.norm();
        if !(norm > 0.0) {
            return Err(Error::DegenerateJacobian);
        }
        predicted_axes[k] = (img / norm).iter().copied().collect();
        measured_axes[k] = orient_like(&m2.eigenvectors[k], &predicted_axes[k]);
    }
    let h1 = cloud_stats(&param1.plane)?.fill_estimate;
    Ok(SurfaceCovariancePrediction {
        t,
        predicted_ratio,
        measured_ratio: m2.eigenvalues[0] / m2.eigenvalues[1],
        mu,
        zeta: mu - sigma,
        w,
        predicted_axes,
        measured_axes,
        third_eigenvalues: [l13, m2.eigenvalues[2]],
        reliable: l11 / l12 - 1.0 >= h1,
    })
}
