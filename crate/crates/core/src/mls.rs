//! Moving least squares on planar clouds: weight kernels, the quadratic
//! basis, local fits, diffuse and standard derivatives and shape functions.
//!
//! Local fits use the basis evaluated at `(p - x) / s`, where `x` is the
//! query point and `s` the support radius, so the normal matrix stays well
//! scaled at every resolution.

use nalgebra::{DMatrix, SMatrix, SVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::pointcloud::{c_delta, cloud_stats, NeighborStrategy, Neighborhood, PointCloud};
use crate::{Error, Result};

/// Fits with a normal-matrix condition estimate above this are rejected.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Support radius multiplier applied to the k-th neighbor distance.
pub const KNN_SUPPORT_MARGIN: f64 = 1.1;

/// Support radius over Gauss width for knn supports without an explicit width.
pub const GAUSS_SUPPORT_RATIO: f64 = 6.0;

type Mat6 = SMatrix<f64, 6, 6>;
type Vec6 = SVector<f64, 6>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Gauss,
    Wendland,
    Cubic,
}

impl KernelKind {
    pub const ALL: [KernelKind; 3] = [KernelKind::Gauss, KernelKind::Wendland, KernelKind::Cubic];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Gauss => "gauss",
            KernelKind::Wendland => "wendland",
            KernelKind::Cubic => "cubic",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss" => Ok(KernelKind::Gauss),
            "wendland" => Ok(KernelKind::Wendland),
            "cubic" => Ok(KernelKind::Cubic),
            _ => Err(Error::Catalog {
                name: s.to_string(),
                valid: vec!["gauss", "wendland", "cubic"],
            }),
        }
    }
}

/// Radial weight profile `w(d) = W(d^2)` with `d = |x - p| / delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightKernel {
    /// `W(x) = exp(-delta^2 x / h^2)`, truncated at `d = 1`.
    Gauss { h: f64 },
    /// Gauss profile with width tied to the support, `h = delta / ratio`.
    ScaledGauss { ratio: f64 },
    /// `W(x) = (1 - x)^4 (1 + 4x)`.
    Wendland,
    /// Piecewise cubic in `x` with a branch at `x = 1/2`.
    Cubic,
}

impl WeightKernel {
    pub fn gauss(h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Parameter(format!(
                "gauss kernel needs h > 0, got {h}"
            )));
        }
        Ok(WeightKernel::Gauss { h })
    }

    pub fn kind(&self) -> KernelKind {
        match self {
            WeightKernel::Gauss { .. } | WeightKernel::ScaledGauss { .. } => KernelKind::Gauss,
            WeightKernel::Wendland => KernelKind::Wendland,
            WeightKernel::Cubic => KernelKind::Cubic,
        }
    }

    /// `(W(x), W'(x))` at `x = d^2`; zero outside `[0, 1)`.
    pub fn profile(&self, x: f64, delta: f64) -> (f64, f64) {
        if !(0.0..1.0).contains(&x) {
            return (0.0, 0.0);
        }
        match *self {
            WeightKernel::Gauss { h } => {
                let a = delta * delta / (h * h);
                let w = (-a * x).exp();
                (w, -a * w)
            }
            WeightKernel::ScaledGauss { ratio } => {
                let a = ratio * ratio;
                let w = (-a * x).exp();
                (w, -a * w)
            }
            WeightKernel::Wendland => {
                let t = 1.0 - x;
                let t3 = t * t * t;
                (t3 * t * (1.0 + 4.0 * x), -20.0 * x * t3)
            }
            WeightKernel::Cubic => {
                if x < 0.5 {
                    (
                        2.0 / 3.0 - 4.0 * x * x + 4.0 * x * x * x,
                        -8.0 * x + 12.0 * x * x,
                    )
                } else {
                    let t = 1.0 - x;
                    (4.0 / 3.0 * t * t * t, -4.0 * t * t)
                }
            }
        }
    }
}

/// Weight and its derivative with respect to the normalized distance `d`.
pub fn weight_eval(kernel: &WeightKernel, d: f64, delta: f64) -> Result<(f64, f64)> {
    if !(d >= 0.0) {
        return Err(Error::Domain(format!(
            "normalized distance must be >= 0, got {d}"
        )));
    }
    if !(delta > 0.0) {
        return Err(Error::Parameter(format!(
            "support radius must be positive, got {delta}"
        )));
    }
    if let WeightKernel::Gauss { h } = kernel {
        if !(*h > 0.0) {
            return Err(Error::Parameter(format!(
                "gauss kernel needs h > 0, got {h}"
            )));
        }
    }
    if let WeightKernel::ScaledGauss { ratio } = kernel {
        if !(*ratio > 0.0) {
            return Err(Error::Parameter(format!(
                "gauss kernel needs a positive width ratio, got {ratio}"
            )));
        }
    }
    let (w, dw) = kernel.profile(d * d, delta);
    Ok((w, 2.0 * d * dw))
}

/// `q`, `dq/dx1`, `dq/dx2` for the quadratic basis `[1, x1, x2, x1^2, x1 x2, x2^2]`.
pub fn basis_eval(x: [f64; 2]) -> ([f64; 6], [f64; 6], [f64; 6]) {
    let [a, b] = x;
    (
        [1.0, a, b, a * a, a * b, b * b],
        [0.0, 1.0, 0.0, 2.0 * a, b, 0.0],
        [0.0, 0.0, 1.0, 0.0, a, 2.0 * b],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    Diffuse,
    Standard,
}

impl Flavor {
    pub const BOTH: [Flavor; 2] = [Flavor::Diffuse, Flavor::Standard];

    pub fn name(self) -> &'static str {
        match self {
            Flavor::Diffuse => "diffuse",
            Flavor::Standard => "standard",
        }
    }
}

impl std::str::FromStr for Flavor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffuse" => Ok(Flavor::Diffuse),
            "standard" => Ok(Flavor::Standard),
            _ => Err(Error::Catalog {
                name: s.to_string(),
                valid: vec!["diffuse", "standard"],
            }),
        }
    }
}

/// How the support radius of each local fit is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Support {
    /// The `k` nearest points; radius `KNN_SUPPORT_MARGIN` times the k-th distance.
    Knn { k: usize },
    /// Fixed radius `factor * separation`.
    Radius { factor: f64 },
    /// Fixed radius `c_delta(theta) * fill_estimate`.
    Cone { theta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlsConfig {
    pub kernel: KernelKind,
    pub support: Support,
    /// Gauss width. Defaults to `delta / GAUSS_SUPPORT_RATIO` for knn
    /// supports and to the separation distance otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gauss_h: Option<f64>,
}

impl Default for MlsConfig {
    fn default() -> Self {
        MlsConfig {
            kernel: KernelKind::Gauss,
            support: Support::Knn { k: 25 },
            gauss_h: None,
        }
    }
}

impl MlsConfig {
    pub fn knn(kernel: KernelKind, k: usize) -> Self {
        MlsConfig {
            kernel,
            support: Support::Knn { k },
            gauss_h: None,
        }
    }

    pub fn radius(kernel: KernelKind, factor: f64) -> Self {
        MlsConfig {
            kernel,
            support: Support::Radius { factor },
            gauss_h: None,
        }
    }
}

/// Value and first derivatives of a local fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlsJet {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub flavor: Flavor,
    pub condition_estimate: f64,
}

impl MlsJet {
    pub fn grad(&self) -> [f64; 2] {
        [self.d1, self.d2]
    }
}

/// Assembled local fit at one query point.
#[derive(Debug, Clone)]
pub struct MlsSystem {
    pub center: [f64; 2],
    pub members: Vec<usize>,
    /// Support radius; also the coordinate scale of the shifted basis.
    pub delta: f64,
    /// Basis rows `q((p_i - x) / delta)`, one per member.
    pub q: Vec<[f64; 6]>,
    pub weights: Vec<f64>,
    /// `(Q^T W Q)^-1 Q^T W`, stored as 6 rows of length `members.len()`.
    pub a: [Vec<f64>; 6],
    /// Derivatives of `a` along each coordinate, when requested.
    pub da: Option<[[Vec<f64>; 6]; 2]>,
    pub condition_estimate: f64,
}

/// Shape function values and gradients at one point, sparse over `members`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeRow {
    pub members: Vec<usize>,
    pub phi: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl ShapeRow {
    /// `(value, d1, d2)` of the approximant of `field` (indexed by cloud point).
    pub fn apply(&self, field: &[f64]) -> (f64, f64, f64) {
        let mut out = (0.0, 0.0, 0.0);
        for (k, &i) in self.members.iter().enumerate() {
            out.0 += self.phi[k] * field[i];
            out.1 += self.d1[k] * field[i];
            out.2 += self.d2[k] * field[i];
        }
        out
    }
}

impl MlsSystem {
    fn row_dot(row: &[f64], values: &[f64]) -> f64 {
        row.iter().zip(values).map(|(a, b)| a * b).sum()
    }

    /// Fitted coefficients (in the scaled, shifted basis) for member values.
    pub fn coefficients(&self, values: &[f64]) -> [f64; 6] {
        std::array::from_fn(|r| Self::row_dot(&self.a[r], values))
    }

    /// Jet of the field sampled at the members (same order as `members`).
    pub fn jet(&self, values: &[f64], flavor: Flavor) -> Result<MlsJet> {
        let c = self.coefficients(values);
        let mut d1 = c[1] / self.delta;
        let mut d2 = c[2] / self.delta;
        if flavor == Flavor::Standard {
            let da = self.da.as_ref().ok_or_else(|| {
                Error::Interface("standard jet needs a system built with derivatives".into())
            })?;
            d1 += Self::row_dot(&da[0][0], values);
            d2 += Self::row_dot(&da[1][0], values);
        }
        Ok(MlsJet {
            value: c[0],
            d1,
            d2,
            flavor,
            condition_estimate: self.condition_estimate,
        })
    }

    /// Diffuse second derivatives `(u_xx, u_xy, u_yy)`.
    pub fn second_derivatives(&self, values: &[f64]) -> [f64; 3] {
        let c = self.coefficients(values);
        let s2 = self.delta * self.delta;
        [2.0 * c[3] / s2, c[4] / s2, 2.0 * c[5] / s2]
    }

    pub fn shape_row(&self, flavor: Flavor) -> Result<ShapeRow> {
        let mut d1: Vec<f64> = self.a[1].iter().map(|v| v / self.delta).collect();
        let mut d2: Vec<f64> = self.a[2].iter().map(|v| v / self.delta).collect();
        if flavor == Flavor::Standard {
            let da = self.da.as_ref().ok_or_else(|| {
                Error::Interface(
                    "standard shape derivatives need a system built with derivatives".into(),
                )
            })?;
            d1.iter_mut().zip(&da[0][0]).for_each(|(d, c)| *d += c);
            d2.iter_mut().zip(&da[1][0]).for_each(|(d, c)| *d += c);
        }
        Ok(ShapeRow {
            members: self.members.clone(),
            phi: self.a[0].clone(),
            d1,
            d2,
        })
    }

    /// Diffuse second-derivative weights `[xx, xy, yy]` over the members.
    pub fn second_rows(&self) -> [Vec<f64>; 3] {
        let s2 = self.delta * self.delta;
        [
            self.a[3].iter().map(|v| 2.0 * v / s2).collect(),
            self.a[4].iter().map(|v| v / s2).collect(),
            self.a[5].iter().map(|v| 2.0 * v / s2).collect(),
        ]
    }

    pub fn gather(&self, field: &[f64]) -> Vec<f64> {
        self.members.iter().map(|&i| field[i]).collect()
    }
}

/// Assembles the local fit at `x` over the given neighborhood and support radius.
pub fn mls_system(
    pc: &PointCloud,
    x: [f64; 2],
    kernel: &WeightKernel,
    nbhd: &Neighborhood,
    delta: f64,
    with_derivs: bool,
) -> Result<MlsSystem> {
    if pc.dim() != 2 {
        return Err(Error::Interface("MLS fits need a planar cloud".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::Parameter(format!(
            "support radius must be positive, got {delta}"
        )));
    }
    let singular = |condition: f64| Error::SingularFit {
        point: x.to_vec(),
        condition,
    };
    let n = nbhd.members.len();
    let mut q = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut dweights = Vec::with_capacity(if with_derivs { n } else { 0 });
    let mut active = 0;
    for &i in &nbhd.members {
        let p = pc.point2(i);
        let y = [(p[0] - x[0]) / delta, (p[1] - x[1]) / delta];
        let r2 = y[0] * y[0] + y[1] * y[1];
        let (w, dw) = kernel.profile(r2, delta);
        if w > 0.0 {
            active += 1;
        }
        q.push(basis_eval(y).0);
        weights.push(w);
        if with_derivs {
            // d/dx_j W(|x - p|^2 / delta^2) = W' * 2 (x_j - p_j) / delta^2
            dweights.push([-2.0 * dw * y[0] / delta, -2.0 * dw * y[1] / delta]);
        }
    }
    if active < 6 {
        return Err(singular(f64::INFINITY));
    }
    // Column-equilibrated QR of sqrt(W) Q keeps the fit accurate where the
    // normal matrix is badly scaled.
    let mut b = DMatrix::zeros(n, 6);
    for (k, (row, &w)) in q.iter().zip(&weights).enumerate() {
        let sw = w.sqrt();
        for c in 0..6 {
            b[(k, c)] = sw * row[c];
        }
    }
    let scale: [f64; 6] = std::array::from_fn(|c| {
        let norm = b.column(c).norm();
        if norm > 0.0 {
            1.0 / norm
        } else {
            1.0
        }
    });
    for c in 0..6 {
        b.column_mut(c).scale_mut(scale[c]);
    }
    let qr = b.qr();
    let r = Mat6::from_fn(|i, j| qr.r()[(i, j)]);
    let sv = r.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin > 0.0 {
        (smax / smin).powi(2)
    } else {
        f64::INFINITY
    };
    if !(condition <= CONDITION_LIMIT) {
        return Err(singular(condition));
    }
    let rinv = r.try_inverse().ok_or_else(|| singular(condition))?;
    let d = Mat6::from_diagonal(&Vec6::from_row_slice(&scale));
    let minv = d * rinv * rinv.transpose() * d;
    // A = D R^-1 Q_r^T sqrt(W); the columns M^-1 q_k feed the derivative terms
    let qm = qr.q();
    let left = d * rinv;
    let mut a: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; n]);
    let mut cols = Vec::with_capacity(if with_derivs { n } else { 0 });
    for (k, row) in q.iter().enumerate() {
        let sw = weights[k].sqrt();
        let col = left * Vec6::from_fn(|c, _| qm[(k, c)]);
        for r in 0..6 {
            a[r][k] = col[r] * sw;
        }
        if with_derivs {
            cols.push(minv * Vec6::from_row_slice(row));
        }
    }
    let da = if with_derivs {
        let mut out: [[Vec<f64>; 6]; 2] =
            std::array::from_fn(|_| std::array::from_fn(|_| vec![0.0; n]));
        for j in 0..2 {
            // dA = -M^-1 Q^T dW Q A + M^-1 Q^T dW
            let mut bj = Mat6::zeros();
            for (row, dw) in q.iter().zip(&dweights) {
                let v = Vec6::from_row_slice(row);
                bj += dw[j] * v * v.transpose();
            }
            let mb = minv * bj;
            for k in 0..n {
                let a_col = Vec6::from_fn(|r, _| a[r][k]);
                let term = mb * a_col;
                for r in 0..6 {
                    out[j][r][k] = cols[k][r] * dweights[k][j] - term[r];
                }
            }
        }
        Some(out)
    } else {
        None
    };
    Ok(MlsSystem {
        center: x,
        members: nbhd.members.clone(),
        delta,
        q,
        weights,
        a,
        da,
        condition_estimate: condition,
    })
}

/// Cloud-bound MLS evaluator with a resolved kernel and support rule.
#[derive(Debug, Clone)]
pub struct Mls<'a> {
    pc: &'a PointCloud,
    kernel: WeightKernel,
    support: Support,
    fixed_delta: Option<f64>,
}

impl<'a> Mls<'a> {
    pub fn new(pc: &'a PointCloud, config: &MlsConfig) -> Result<Self> {
        if pc.dim() != 2 {
            return Err(Error::Interface("MLS fits need a planar cloud".into()));
        }
        let knn = matches!(config.support, Support::Knn { .. });
        let needs_stats = !knn;
        let stats = if needs_stats {
            Some(cloud_stats(pc)?)
        } else {
            None
        };
        let kernel = match config.kernel {
            KernelKind::Gauss => match (config.gauss_h, stats) {
                (Some(h), _) => WeightKernel::gauss(h)?,
                (None, Some(stats)) => WeightKernel::gauss(stats.separation)?,
                (None, None) => WeightKernel::ScaledGauss {
                    ratio: GAUSS_SUPPORT_RATIO,
                },
            },
            KernelKind::Wendland => WeightKernel::Wendland,
            KernelKind::Cubic => WeightKernel::Cubic,
        };
        let fixed_delta = match config.support {
            Support::Knn { k } => {
                if k < 6 || k > pc.len() {
                    return Err(Error::Parameter(format!(
                        "knn support needs 6 <= k <= {}, got {k}",
                        pc.len()
                    )));
                }
                None
            }
            Support::Radius { factor } => {
                if !(factor > 0.0) {
                    return Err(Error::Parameter(format!(
                        "radius factor must be positive, got {factor}"
                    )));
                }
                Some(factor * stats.expect("stats computed").separation)
            }
            Support::Cone { theta } => {
                Some(c_delta(theta)? * stats.expect("stats computed").fill_estimate)
            }
        };
        Ok(Mls {
            pc,
            kernel,
            support: config.support,
            fixed_delta,
        })
    }

    /// Evaluator with an explicit kernel and fixed support radius.
    pub fn with_radius(pc: &'a PointCloud, kernel: WeightKernel, delta: f64) -> Result<Self> {
        if pc.dim() != 2 {
            return Err(Error::Interface("MLS fits need a planar cloud".into()));
        }
        if !(delta > 0.0) {
            return Err(Error::Parameter(format!(
                "support radius must be positive, got {delta}"
            )));
        }
        Ok(Mls {
            pc,
            kernel,
            support: Support::Radius { factor: f64::NAN },
            fixed_delta: Some(delta),
        })
    }

    pub fn cloud(&self) -> &'a PointCloud {
        self.pc
    }

    pub fn kernel(&self) -> WeightKernel {
        self.kernel
    }

    /// Neighborhood used for the fit at `x`, with its support radius.
    pub fn neighborhood(&self, x: [f64; 2]) -> Result<(Neighborhood, f64)> {
        match (self.support, self.fixed_delta) {
            (_, Some(delta)) => Ok((
                self.pc.neighborhood(&x, NeighborStrategy::Radius(delta))?,
                delta,
            )),
            (Support::Knn { k }, None) => {
                let nb = self.pc.neighborhood(&x, NeighborStrategy::Knn(k))?;
                let delta = KNN_SUPPORT_MARGIN * nb.radius_used;
                Ok((nb, delta))
            }
            _ => unreachable!("fixed radius resolved at construction"),
        }
    }

    pub fn system(&self, x: [f64; 2], with_derivs: bool) -> Result<MlsSystem> {
        let (nb, delta) = self.neighborhood(x)?;
        mls_system(self.pc, x, &self.kernel, &nb, delta, with_derivs)
    }

    pub fn system_at(&self, i: usize, with_derivs: bool) -> Result<MlsSystem> {
        self.system(self.pc.point2(i), with_derivs)
    }

    pub fn diffuse_jet(&self, field: &[f64], x: [f64; 2]) -> Result<MlsJet> {
        let sys = self.system(x, false)?;
        sys.jet(&sys.gather(field), Flavor::Diffuse)
    }

    pub fn standard_jet(&self, field: &[f64], x: [f64; 2]) -> Result<MlsJet> {
        let sys = self.system(x, true)?;
        sys.jet(&sys.gather(field), Flavor::Standard)
    }

    pub fn jet(&self, field: &[f64], x: [f64; 2], flavor: Flavor) -> Result<MlsJet> {
        match flavor {
            Flavor::Diffuse => self.diffuse_jet(field, x),
            Flavor::Standard => self.standard_jet(field, x),
        }
    }

    /// Global approximant value at `x`.
    pub fn approximant(&self, field: &[f64], x: [f64; 2]) -> Result<f64> {
        let sys = self.system(x, false)?;
        Ok(MlsSystem::row_dot(&sys.a[0], &sys.gather(field)))
    }

    pub fn shape_functions(&self, x: [f64; 2]) -> Result<ShapeRow> {
        self.system(x, false)?.shape_row(Flavor::Diffuse)
    }

    pub fn shape_row(&self, x: [f64; 2], flavor: Flavor) -> Result<ShapeRow> {
        self.system(x, flavor == Flavor::Standard)?
            .shape_row(flavor)
    }

    /// Jets of several fields at every cloud point, computed in parallel.
    pub fn jets_at_points(&self, fields: &[&[f64]], flavor: Flavor) -> Result<Vec<Vec<MlsJet>>> {
        (0..self.pc.len())
            .into_par_iter()
            .map(|i| {
                let sys = self.system_at(i, flavor == Flavor::Standard)?;
                fields
                    .iter()
                    .map(|f| sys.jet(&sys.gather(f), flavor))
                    .collect()
            })
            .collect()
    }

    /// Shape rows at every cloud point, computed in parallel.
    pub fn shape_rows(&self, flavor: Flavor) -> Result<Vec<ShapeRow>> {
        (0..self.pc.len())
            .into_par_iter()
            .map(|i| {
                self.system_at(i, flavor == Flavor::Standard)?
                    .shape_row(flavor)
            })
            .collect()
    }
}

/// Dense weighted least-squares solve through an SVD, used as an independent
/// reference for the closed-form fit.
pub fn weighted_lstsq_reference(
    q: &[[f64; 6]],
    weights: &[f64],
    values: &[f64],
) -> Option<[f64; 6]> {
    let n = q.len();
    let mut m = DMatrix::zeros(n, 6);
    let mut b = DMatrix::zeros(n, 1);
    for k in 0..n {
        let s = weights[k].sqrt();
        for c in 0..6 {
            m[(k, c)] = s * q[k][c];
        }
        b[(k, 0)] = s * values[k];
    }
    let sol = m.svd(true, true).solve(&b, 1e-14).ok()?;
    Some(std::array::from_fn(|i| sol[(i, 0)]))
}
