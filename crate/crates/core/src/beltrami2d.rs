//! Beltrami coefficients of planar maps, analytic and point-cloud flavors,
//! and the local distortion statistics they predict.

use nalgebra::{DMatrix, Matrix2, Vector2};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mls::{Flavor, Mls, MlsConfig};
use crate::pointcloud::{cloud_stats, covariance_of_points, CovarianceAnalysis, PointCloud};
use crate::{Error, Result};

/// Jacobian `[[u_x, u_y], [v_x, v_y]]`.
pub type Jacobian = [[f64; 2]; 2];

const DENOMINATOR_EPS: f64 = 1e-14;

/// A planar point-cloud map: one 2D target per source point.
#[derive(Debug, Clone)]
pub struct PlanarMap<'a> {
    pub source: &'a PointCloud,
    pub targets: Vec<[f64; 2]>,
}

impl<'a> PlanarMap<'a> {
    pub fn new(source: &'a PointCloud, targets: Vec<[f64; 2]>) -> Result<Self> {
        if source.dim() != 2 {
            return Err(Error::Interface(
                "planar maps need a 2D source cloud".into(),
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
        Ok(PlanarMap { source, targets })
    }

    pub fn from_fn(source: &'a PointCloud, f: impl Fn([f64; 2]) -> [f64; 2]) -> Result<Self> {
        let targets = (0..source.len()).map(|i| f(source.point2(i))).collect();
        Self::new(source, targets)
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        self.targets.iter().map(|t| t[c]).collect()
    }
}

/// Per-point complex coefficient with validity flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeltramiField {
    pub values: Vec<Complex64>,
    pub valid: Vec<bool>,
    pub flavor: Flavor,
    pub sup_norm: f64,
    pub pcqc: bool,
}

impl BeltramiField {
    pub fn from_values(values: Vec<Option<Complex64>>, flavor: Flavor) -> Self {
        let valid: Vec<bool> = values.iter().map(Option::is_some).collect();
        let values: Vec<Complex64> = values
            .into_iter()
            .map(|v| v.unwrap_or(Complex64::new(f64::NAN, f64::NAN)))
            .collect();
        let sup_norm = values
            .iter()
            .zip(&valid)
            .filter(|(_, ok)| **ok)
            .fold(0.0f64, |m, (v, _)| m.max(v.norm()));
        let pcqc = valid.iter().all(|&ok| ok) && values.iter().all(|v| v.norm() < 1.0);
        BeltramiField {
            values,
            valid,
            flavor,
            sup_norm,
            pcqc,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn invalid_count(&self) -> usize {
        self.valid.iter().filter(|v| !**v).count()
    }

    /// Largest `|self - reference|` over points valid in `self`.
    pub fn sup_error(&self, reference: &[Complex64]) -> f64 {
        self.values
            .iter()
            .zip(&self.valid)
            .zip(reference)
            .filter(|((_, ok), _)| **ok)
            .fold(0.0f64, |m, ((v, _), r)| m.max((v - r).norm()))
    }
}

/// `mu` from first partials, or `None` when `f_z` vanishes.
pub fn bc_from_partials(ux: f64, uy: f64, vx: f64, vy: f64) -> Option<Complex64> {
    let num = Complex64::new(ux - vy, vx + uy);
    let den = Complex64::new(ux + vy, vx - uy);
    let scale = ux.abs() + uy.abs() + vx.abs() + vy.abs();
    if den.norm() <= DENOMINATOR_EPS * scale.max(f64::MIN_POSITIVE) || !den.norm().is_normal() {
        return None;
    }
    Some(num / den)
}

/// Beltrami coefficient of a map with the given Jacobian.
pub fn analytic_bc(grad: Jacobian) -> Result<Complex64> {
    bc_from_partials(grad[0][0], grad[0][1], grad[1][0], grad[1][1])
        .ok_or(Error::DegenerateJacobian)
}

/// MLS Jacobian estimates at every source point, `None` where the fit fails.
pub fn jacobians(map: &PlanarMap<'_>, flavor: Flavor, config: &MlsConfig) -> Result<Vec<Jacobian>> {
    let mls = Mls::new(map.source, config)?;
    let u = map.component(0);
    let v = map.component(1);
    let jets = mls.jets_at_points(&[&u, &v], flavor)?;
    Ok(jets
        .into_iter()
        .map(|j| [[j[0].d1, j[0].d2], [j[1].d1, j[1].d2]])
        .collect())
}

/// Point-cloud Beltrami coefficient at every source point.
pub fn pcbc(map: &PlanarMap<'_>, flavor: Flavor, config: &MlsConfig) -> Result<BeltramiField> {
    let jac = jacobians(map, flavor, config)?;
    Ok(BeltramiField::from_values(
        jac.into_iter().map(|g| analytic_bc(g).ok()).collect(),
        flavor,
    ))
}

/// Coefficient of `f o g^-1` from those of `f`, `g` and `g_z`.
pub fn compose_bc(mu_f: Complex64, mu_g: Complex64, g_z: Complex64) -> Result<Complex64> {
    let den = Complex64::new(1.0, 0.0) - mu_f * mu_g.conj();
    if den.norm() <= 1e-15 {
        return Err(Error::DegenerateComposition);
    }
    if g_z.norm() == 0.0 {
        return Err(Error::DegenerateComposition);
    }
    Ok((mu_f - mu_g) / den * (g_z / g_z.conj()))
}

/// Maximal dilation `(1 + |mu|) / (1 - |mu|)`.
pub fn dilation(mu: Complex64) -> Result<f64> {
    let m = mu.norm();
    if !(m < 1.0) {
        return Err(Error::NotQuasiConformal { modulus: m });
    }
    Ok((1.0 + m) / (1.0 - m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleDistortion {
    pub max_change: f64,
    pub per_center: Vec<f64>,
    /// Pairs skipped because a mapped difference vector vanished.
    pub degenerate_pairs: usize,
}

fn angle_between(a: [f64; 2], b: [f64; 2]) -> Option<f64> {
    let cross = a[0] * b[1] - a[1] * b[0];
    let dot = a[0] * b[0] + a[1] * b[1];
    if (a[0] == 0.0 && a[1] == 0.0) || (b[0] == 0.0 && b[1] == 0.0) {
        return None;
    }
    Some(cross.abs().atan2(dot))
}

/// Largest change of the angle `p1 p0 p2` over all neighbor pairs of each center.
pub fn angle_distortion(map: &PlanarMap<'_>, config: &MlsConfig) -> Result<AngleDistortion> {
    let mls = Mls::new(map.source, config)?;
    let pc = map.source;
    let rows: Vec<(f64, usize)> = (0..pc.len())
        .into_par_iter()
        .map(|c| {
            let (nb, _) = mls.neighborhood(pc.point2(c))?;
            let p0 = pc.point2(c);
            let f0 = map.targets[c];
            let others: Vec<usize> = nb.members.iter().copied().filter(|&i| i != c).collect();
            let mut worst: f64 = 0.0;
            let mut skipped = 0;
            for (a, &i) in others.iter().enumerate() {
                for &j in &others[a + 1..] {
                    let (pi, pj) = (pc.point2(i), pc.point2(j));
                    let src = angle_between(
                        [pi[0] - p0[0], pi[1] - p0[1]],
                        [pj[0] - p0[0], pj[1] - p0[1]],
                    );
                    let (fi, fj) = (map.targets[i], map.targets[j]);
                    let dst = angle_between(
                        [fi[0] - f0[0], fi[1] - f0[1]],
                        [fj[0] - f0[0], fj[1] - f0[1]],
                    );
                    match (src, dst) {
                        (Some(s), Some(d)) => worst = worst.max((s - d).abs()),
                        _ => skipped += 1,
                    }
                }
            }
            Ok((worst, skipped))
        })
        .collect::<Result<_>>()?;
    let per_center: Vec<f64> = rows.iter().map(|r| r.0).collect();
    Ok(AngleDistortion {
        max_change: per_center.iter().copied().fold(0.0, f64::max),
        per_center,
        degenerate_pairs: rows.iter().map(|r| r.1).sum(),
    })
}

/// Coefficient of the Cholesky normalizer of a neighborhood with the given
/// covariance eigen-structure.
pub fn shape_coefficient(lambda1: f64, lambda2: f64, minor: [f64; 2]) -> Complex64 {
    let (s1, s2) = (lambda1.sqrt(), lambda2.sqrt());
    let v = Complex64::new(minor[0], minor[1]);
    (s1 - s2) / (s1 + s2) * v * v
}

/// Predicted coefficient of `f o g^-1` at the normalized neighborhood.
pub fn t_coefficient(lambda1: f64, lambda2: f64, minor: [f64; 2], mu: Complex64) -> Complex64 {
    let (s1, s2) = (lambda1.sqrt(), lambda2.sqrt());
    let v = Complex64::new(minor[0], minor[1]);
    let num = (s1 + s2) * mu - (s1 - s2) * v * v;
    let den = Complex64::new(s1 + s2, 0.0) - (s1 - s2) * v.conj() * v.conj() * mu;
    num / den
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariancePrediction {
    pub t: Complex64,
    pub predicted_ratio: f64,
    pub theta: f64,
    pub u0: [f64; 2],
    pub sigma: Complex64,
    pub zeta: Complex64,
    /// Unit major-axis direction of the image neighborhood.
    pub predicted_axis: Vec<f64>,
    /// False when `|zeta|` is below the reliability threshold.
    pub axis_reliable: bool,
    pub mu: Complex64,
}

/// Prediction from a source covariance, a coefficient and a Jacobian.
pub fn predict_from_covariance(
    m1: &CovarianceAnalysis,
    mu: Complex64,
    jacobian: Jacobian,
    zeta_threshold: f64,
) -> Result<CovariancePrediction> {
    if m1.dim() != 2 {
        return Err(Error::Interface(
            "planar prediction needs a 2D covariance".into(),
        ));
    }
    let (l1, l2) = (m1.eigenvalues[0], m1.eigenvalues[1]);
    if !(l2 > 0.0) {
        return Err(Error::DegenerateNeighborhood(
            "source covariance has a zero eigenvalue".into(),
        ));
    }
    if !(mu.norm() < 1.0) {
        return Err(Error::NotQuasiConformal { modulus: mu.norm() });
    }
    let minor = [m1.eigenvectors[1][0], m1.eigenvectors[1][1]];
    let sigma = shape_coefficient(l1, l2, minor);
    let t = t_coefficient(l1, l2, minor, mu);
    let tn = t.norm();
    let predicted_ratio = ((1.0 + tn) / (1.0 - tn)).powi(2);
    let theta = t.arg() / 2.0;
    let u0 = [theta.cos(), theta.sin()];
    let m = Matrix2::new(
        m1.matrix[(0, 0)] + (l1 * l2).sqrt(),
        m1.matrix[(0, 1)],
        m1.matrix[(1, 0)],
        m1.matrix[(1, 1)] + (l1 * l2).sqrt(),
    );
    let grad = Matrix2::new(
        jacobian[0][0],
        jacobian[0][1],
        jacobian[1][0],
        jacobian[1][1],
    );
    let axis = grad * m * Vector2::new(u0[0], u0[1]);
    let norm = axis.norm();
    if !(norm > 0.0) {
        return Err(Error::DegenerateJacobian);
    }
    let zeta = mu - sigma;
    Ok(CovariancePrediction {
        t,
        predicted_ratio,
        theta,
        u0,
        sigma,
        zeta,
        predicted_axis: vec![axis[0] / norm, axis[1] / norm],
        axis_reliable: zeta.norm() >= zeta_threshold,
        mu,
    })
}

/// Observed eigen-structure of the image neighborhood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredCovariance {
    pub ratio: f64,
    /// Leading unit eigenvector, oriented to agree with the predicted axis.
    pub axis: Vec<f64>,
    pub eigenvalues: Vec<f64>,
}

/// Orients `v` so that `v . reference >= 0`; ties go to a positive first component.
pub fn orient_like(v: &[f64], reference: &[f64]) -> Vec<f64> {
    let dot: f64 = v.iter().zip(reference).map(|(a, b)| a * b).sum();
    let flip = if dot != 0.0 {
        dot < 0.0
    } else {
        v.iter().find(|c| **c != 0.0).is_some_and(|c| *c < 0.0)
    };
    v.iter().map(|c| if flip { -c } else { *c }).collect()
}

pub fn measure_image(points: &[&[f64]], predicted_axis: &[f64]) -> Result<MeasuredCovariance> {
    let m2 = covariance_of_points(points.iter().copied())?;
    let n = m2.eigenvalues.len();
    let minor = if n == 3 {
        m2.eigenvalues[1]
    } else {
        m2.eigenvalues[n - 1]
    };
    if !(minor > 0.0) {
        return Err(Error::DegenerateNeighborhood(
            "image covariance has a zero eigenvalue".into(),
        ));
    }
    Ok(MeasuredCovariance {
        ratio: m2.eigenvalues[0] / minor,
        axis: orient_like(&m2.eigenvectors[0], predicted_axis),
        eigenvalues: m2.eigenvalues.clone(),
    })
}

/// Covariance prediction at source point `p`, with the measured counterpart.
pub fn covariance_prediction(
    map: &PlanarMap<'_>,
    p: usize,
    flavor: Flavor,
    config: &MlsConfig,
) -> Result<(CovariancePrediction, MeasuredCovariance)> {
    let pc = map.source;
    let mls = Mls::new(pc, config)?;
    let x = pc.point2(p);
    let sys = mls.system(x, flavor == Flavor::Standard)?;
    let u = sys.jet(&sys.gather(&map.component(0)), flavor)?;
    let v = sys.jet(&sys.gather(&map.component(1)), flavor)?;
    let jac = [[u.d1, u.d2], [v.d1, v.d2]];
    let mu = analytic_bc(jac)?;
    let (nb, _) = mls.neighborhood(x)?;
    let m1 = covariance_of_points(nb.members.iter().map(|&i| pc.point(i)))?;
    let h = cloud_stats(pc)?.fill_estimate;
    let pred = predict_from_covariance(&m1, mu, jac, 10.0 * h)?;
    let image: Vec<&[f64]> = nb.members.iter().map(|&i| &map.targets[i][..]).collect();
    let measured = measure_image(&image, &pred.predicted_axis)?;
    Ok((pred, measured))
}

/// Affine map `g(x) = (U^T)^-1 (x - p0) + p0` with `M1 = U^T U`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineNormalizer {
    pub center: Vec<f64>,
    /// Upper-triangular Cholesky factor with positive diagonal.
    pub u: DMatrix<f64>,
    /// `(U^T)^-1`, the linear part of `g`.
    pub linear: DMatrix<f64>,
}

impl AffineNormalizer {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = nalgebra::DVector::from_iterator(
            x.len(),
            x.iter().zip(&self.center).map(|(a, b)| a - b),
        );
        let y = &self.linear * d;
        y.iter().zip(&self.center).map(|(a, b)| a + b).collect()
    }

    /// Jacobian of the planar normalizer.
    pub fn jacobian(&self) -> Jacobian {
        [
            [self.linear[(0, 0)], self.linear[(0, 1)]],
            [self.linear[(1, 0)], self.linear[(1, 1)]],
        ]
    }
}

pub fn cholesky_normalizer(m1: &CovarianceAnalysis) -> Result<AffineNormalizer> {
    let chol =
        m1.matrix.clone().cholesky().ok_or_else(|| {
            Error::Factorization("covariance matrix is not positive definite".into())
        })?;
    let l = chol.l();
    let linear = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Factorization("Cholesky factor is singular".into()))?;
    Ok(AffineNormalizer {
        center: m1.mean.clone(),
        u: l.transpose(),
        linear,
    })
}
