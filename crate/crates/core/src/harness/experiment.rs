//! Convergence experiments, slope fitting and the weight-function benchmark.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::instances::{builtin_instance, table1_fn, CloudKind, Instance};
use crate::beltrami2d::{angle_distortion, covariance_prediction, pcbc, PlanarMap};
use crate::mls::{Flavor, KernelKind, Mls, MlsConfig};
use crate::parameterization::{conformal_parameterize, BoundarySpec};
use crate::pointcloud::PointCloud;
use crate::solvers::{
    relative_error, solve_qc_map, Discretization, Formulation, QcProblem, SolverOptions,
};
use crate::surface::{pcbr, surface_covariance_prediction};
use crate::{Complex64, Error, Result};

/// Quantities an experiment can measure at each resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// Value and gradient errors of the scalar benchmark function.
    Derivatives,
    /// Sup error of diffuse and standard PCBCs against the exact BC.
    Pcbc,
    /// Sup norm of the diffuse PCBC.
    PcbcNorm,
    /// Eigen-ratio and major-axis prediction errors at the center point.
    Covariance,
    /// Largest local angle change.
    AngleDistortion,
    /// Map and BC errors of maps recovered from the exact BC.
    Solve,
    /// Parameterization, PCBR and covariance errors on the surface pair.
    Surface,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverCase {
    pub formulation: Formulation,
    pub discretization: Discretization,
}

impl SolverCase {
    pub fn all() -> Vec<SolverCase> {
        Formulation::ALL
            .iter()
            .flat_map(|&f| {
                Discretization::ALL.iter().map(move |&d| SolverCase {
                    formulation: f,
                    discretization: d,
                })
            })
            .collect()
    }
}

fn default_seed() -> u64 {
    1
}

fn default_solvers() -> Vec<SolverCase> {
    SolverCase::all()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    /// Catalog entry.
    pub instance: String,
    /// Overrides the catalog's default sampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud: Option<CloudKind>,
    /// Grid intervals `n`, or point counts for mesh clouds; strictly increasing.
    pub resolutions: Vec<usize>,
    #[serde(default)]
    pub mls: MlsConfig,
    pub quantities: Vec<Quantity>,
    #[serde(default = "default_solvers")]
    pub solvers: Vec<SolverCase>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn new(name: &str, instance: &str, resolutions: &[usize], quantities: &[Quantity]) -> Self {
        ExperimentSpec {
            name: name.into(),
            instance: instance.into(),
            cloud: None,
            resolutions: resolutions.to_vec(),
            mls: MlsConfig::default(),
            quantities: quantities.to_vec(),
            solvers: SolverCase::all(),
            seed: default_seed(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        super::instances::catalog_entry(&self.instance)?;
        if self.resolutions.is_empty() {
            return Err(Error::Parameter("no resolutions given".into()));
        }
        if self.resolutions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter(
                "resolutions must be strictly increasing".into(),
            ));
        }
        if self.quantities.is_empty() {
            return Err(Error::Parameter("no quantities requested".into()));
        }
        if self.quantities.contains(&Quantity::Solve) && self.solvers.is_empty() {
            return Err(Error::Parameter(
                "solve quantity needs at least one solver".into(),
            ));
        }
        // exercises the support and kernel checks on a tiny cloud
        let probe = super::instances::grid(6)?;
        Mls::new(&probe.cloud, &self.mls)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub resolution: usize,
    pub points: usize,
    /// Nominal spacing used as `h` in the slope fits.
    pub h: f64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub resolution: usize,
    pub quantity: Quantity,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub spec: ExperimentSpec,
    pub rows: Vec<ReportRow>,
    /// Convergence rate per metric: minus the least-squares slope of
    /// `log e` against `log h`.
    pub slopes: BTreeMap<String, f64>,
    pub per_interval_slopes: BTreeMap<String, Vec<f64>>,
    pub failures: Vec<Failure>,
    /// Seconds per resolution; excluded from [`ConvergenceReport::deterministic_json`].
    #[serde(default)]
    pub runtimes: BTreeMap<usize, f64>,
}

impl ConvergenceReport {
    pub fn metric(&self, name: &str) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.metrics.get(name).copied().unwrap_or(f64::NAN))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// JSON without timings; identical across runs of the same spec.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.runtimes.clear();
        let mut value = serde_json::to_value(&copy)?;
        if let Some(obj) = value.as_object_mut() {
            obj.remove("runtimes");
        }
        Ok(serde_json::to_string_pretty(&value)?)
    }
}

/// Convergence rate `-d log e / d log h` by least squares; needs at least
/// three positive errors.
pub fn fit_slope(h: &[f64], e: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = h
        .iter()
        .zip(e)
        .filter(|(h, e)| **h > 0.0 && **e > 0.0 && e.is_finite())
        .map(|(h, e)| (-h.ln(), e.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| -sxy / sxx)
}

/// Rates between consecutive rows.
pub fn interval_slopes(h: &[f64], e: &[f64]) -> Vec<f64> {
    h.windows(2)
        .zip(e.windows(2))
        .map(|(h, e)| -(e[1].ln() - e[0].ln()) / (h[0].ln() - h[1].ln()))
        .collect()
}

fn center_index(pc: &PointCloud) -> usize {
    pc.knn(&[0.5, 0.5], 1)[0].0
}

fn complex_relative_error(a: &[Complex64], b: &[Complex64]) -> Result<f64> {
    let a: Vec<[f64; 2]> = a.iter().map(|z| [z.re, z.im]).collect();
    let b: Vec<[f64; 2]> = b.iter().map(|z| [z.re, z.im]).collect();
    crate::solvers::relative_error_values(&a, &b)
}

fn axis_angle(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (d.abs() / (na * nb)).min(1.0).acos()
}

fn measure(
    q: Quantity,
    spec: &ExperimentSpec,
    inst: &Instance,
    out: &mut BTreeMap<String, f64>,
) -> Result<()> {
    let pc = &inst.sample.cloud;
    let cfg = &spec.mls;
    let need_map = || {
        inst.map
            .ok_or_else(|| Error::Interface(format!("instance {} has no map", inst.name)))
    };
    match q {
        Quantity::Derivatives => {
            if !inst.scalar {
                return Err(Error::Interface(format!(
                    "instance {} has no scalar function",
                    inst.name
                )));
            }
            for (flavor, stats) in derivative_errors(pc, cfg)? {
                out.insert(format!("deriv_mean/{}", flavor.name()), stats.0);
                out.insert(format!("deriv_sup/{}", flavor.name()), stats.1);
            }
        }
        Quantity::Pcbc | Quantity::PcbcNorm => {
            let map = need_map()?;
            let pm = PlanarMap::from_fn(pc, |p| map.eval(p))?;
            if q == Quantity::PcbcNorm {
                out.insert(
                    "pcbc_norm".into(),
                    pcbc(&pm, Flavor::Diffuse, cfg)?.sup_norm,
                );
            } else {
                let exact = inst.exact_bc()?;
                for flavor in Flavor::BOTH {
                    out.insert(
                        format!("pcbc/{}", flavor.name()),
                        pcbc(&pm, flavor, cfg)?.sup_error(&exact),
                    );
                }
            }
        }
        Quantity::Covariance => {
            let map = need_map()?;
            let pm = PlanarMap::from_fn(pc, |p| map.eval(p))?;
            let (pred, meas) = covariance_prediction(&pm, center_index(pc), Flavor::Diffuse, cfg)?;
            out.insert(
                "cov_ratio".into(),
                (pred.predicted_ratio - meas.ratio).abs(),
            );
            out.insert(
                "cov_axis".into(),
                axis_angle(&pred.predicted_axis, &meas.axis),
            );
        }
        Quantity::AngleDistortion => {
            let map = need_map()?;
            let pm = PlanarMap::from_fn(pc, |p| map.eval(p))?;
            out.insert(
                "angle_change".into(),
                angle_distortion(&pm, cfg)?.max_change,
            );
        }
        Quantity::Solve => {
            let map = need_map()?;
            let exact = PlanarMap::from_fn(pc, |p| map.eval(p))?;
            let mu = inst.exact_bc()?;
            let options = SolverOptions {
                mls: *cfg,
                flavor: Flavor::Diffuse,
            };
            for case in &spec.solvers {
                let key = format!("{}/{}", case.formulation.name(), case.discretization.name());
                let problem = QcProblem::with_exact_boundary(
                    pc,
                    mu.clone(),
                    inst.sample.boundary.clone(),
                    |p| map.eval(p),
                    case.formulation,
                    case.discretization,
                )?;
                let sol = solve_qc_map(&problem, &options)?;
                out.insert(format!("map/{key}"), relative_error(&sol.map, &exact)?);
                for flavor in Flavor::BOTH {
                    let field = pcbc(&sol.map, flavor, cfg)?;
                    out.insert(
                        format!("bc/{key}/{}", flavor.name()),
                        complex_relative_error(&field.values, &mu)?,
                    );
                }
            }
        }
        Quantity::Surface => surface_metrics(spec, inst, out)?,
    }
    Ok(())
}

fn surface_metrics(
    spec: &ExperimentSpec,
    inst: &Instance,
    out: &mut BTreeMap<String, f64>,
) -> Result<()> {
    let surf = inst
        .surfaces
        .as_ref()
        .ok_or_else(|| Error::Interface(format!("instance {} has no surfaces", inst.name)))?;
    let cfg = &spec.mls;
    let boundary = &inst.sample.boundary;
    let spec_for = |chart: &[[f64; 2]]| BoundarySpec::Values {
        indices: boundary.clone(),
        values: boundary.iter().map(|&i| chart[i]).collect(),
    };
    let p1 = conformal_parameterize(&surf.s1, &spec_for(&surf.chart1), cfg)?;
    let p2 = conformal_parameterize(&surf.s2, &spec_for(&surf.chart2), cfg)?;
    let sup = |plane: &PointCloud, chart: &[[f64; 2]]| {
        (0..plane.len())
            .map(|i| {
                let q = plane.point2(i);
                (q[0] - chart[i][0]).abs().max((q[1] - chart[i][1]).abs())
            })
            .fold(0.0, f64::max)
    };
    out.insert("param/s1".into(), sup(&p1.plane, &surf.chart1));
    out.insert("param/s2".into(), sup(&p2.plane, &surf.chart2));
    out.insert("grade/s1".into(), p1.e_grade);
    out.insert("grade/s2".into(), p2.e_grade);
    let identity: Vec<usize> = (0..p1.surface.len()).collect();
    let exact = inst.exact_bc()?;
    for flavor in Flavor::BOTH {
        out.insert(
            format!("pcbr/{}", flavor.name()),
            pcbr(&identity, &p1, &p2, flavor, cfg)?.sup_error(&exact),
        );
    }
    let projected = PlanarMap::new(
        &p1.plane,
        (0..p2.plane.len()).map(|i| p2.plane.point2(i)).collect(),
    )?;
    out.insert(
        "surface_angle".into(),
        angle_distortion(&projected, cfg)?.max_change,
    );
    let c = center_index(&inst.sample.cloud);
    let cp = surface_covariance_prediction(&p1, &p2, c, Flavor::Diffuse, cfg)?;
    out.insert(
        "surface_ratio".into(),
        (cp.predicted_ratio - cp.measured_ratio).abs(),
    );
    out.insert("third/m1".into(), cp.third_eigenvalues[0].abs());
    out.insert("third/m2".into(), cp.third_eigenvalues[1].abs());
    for k in 0..2 {
        out.insert(
            format!("surface_axis/{}", k + 1),
            axis_angle(&cp.predicted_axes[k], &cp.measured_axes[k]),
        );
    }
    Ok(())
}

pub fn run_convergence(spec: &ExperimentSpec) -> Result<ConvergenceReport> {
    spec.validate()?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut runtimes = BTreeMap::new();
    for &res in &spec.resolutions {
        let start = Instant::now();
        let inst = match builtin_instance(&spec.instance, res, spec.seed, spec.cloud) {
            Ok(inst) => inst,
            Err(e) => {
                for &q in &spec.quantities {
                    failures.push(Failure {
                        resolution: res,
                        quantity: q,
                        message: e.to_string(),
                    });
                }
                continue;
            }
        };
        let mut metrics = BTreeMap::new();
        for &q in &spec.quantities {
            if let Err(e) = measure(q, spec, &inst, &mut metrics) {
                failures.push(Failure {
                    resolution: res,
                    quantity: q,
                    message: e.to_string(),
                });
            }
        }
        runtimes.insert(res, start.elapsed().as_secs_f64());
        rows.push(ReportRow {
            resolution: res,
            points: inst.sample.cloud.len(),
            h: inst.sample.h,
            metrics,
        });
    }
    let names: std::collections::BTreeSet<String> = rows
        .iter()
        .flat_map(|r| r.metrics.keys().cloned())
        .collect();
    let mut slopes = BTreeMap::new();
    let mut per_interval = BTreeMap::new();
    for name in names {
        let (h, e): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter_map(|r| r.metrics.get(&name).map(|&e| (r.h, e)))
            .unzip();
        if let Some(s) = fit_slope(&h, &e) {
            slopes.insert(name.clone(), s);
        }
        if h.len() >= 2 {
            per_interval.insert(name, interval_slopes(&h, &e));
        }
    }
    Ok(ConvergenceReport {
        spec: spec.clone(),
        rows,
        slopes,
        per_interval_slopes: per_interval,
        failures,
        runtimes,
    })
}

/// `(mean, sup)` of the largest per-quantity error over value and both
/// derivatives of the scalar benchmark function, per flavor.
pub fn derivative_errors(pc: &PointCloud, cfg: &MlsConfig) -> Result<Vec<(Flavor, (f64, f64))>> {
    let mls = Mls::new(pc, cfg)?;
    let values: Vec<f64> = (0..pc.len()).map(|i| table1_fn(pc.point2(i)).0).collect();
    let mut out = Vec::new();
    for flavor in Flavor::BOTH {
        let jets = mls.jets_at_points(&[&values], flavor)?;
        let mut mean = [0.0; 3];
        let mut sup = [0.0f64; 3];
        for (i, jet) in jets.iter().enumerate() {
            let (v, g) = table1_fn(pc.point2(i));
            let j = jet[0];
            let err = [
                (j.value - v).abs(),
                (j.d1 - g[0]).abs(),
                (j.d2 - g[1]).abs(),
            ];
            for c in 0..3 {
                mean[c] += err[c] / jets.len() as f64;
                sup[c] = sup[c].max(err[c]);
            }
        }
        let max = |a: [f64; 3]| a.iter().copied().fold(0.0, f64::max);
        out.push((flavor, (max(mean), max(sup))));
    }
    Ok(out)
}

/// Weight benchmark sizes as grid intervals.
pub const WEIGHT_BENCH_SIZES: [usize; 6] = [24, 32, 48, 64, 96, 128];

/// Support radius over separation distance in the weight benchmark.
pub const WEIGHT_BENCH_RADIUS: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightsRow {
    pub n: usize,
    pub points: usize,
    pub kernel: KernelKind,
    pub flavor: Flavor,
    pub mean_error: f64,
    pub sup_error: f64,
}

pub fn weights_bench(sizes: &[usize]) -> Result<Vec<WeightsRow>> {
    let mut rows = Vec::new();
    for &n in sizes {
        let g = super::instances::grid(n)?;
        for kernel in KernelKind::ALL {
            let cfg = MlsConfig::radius(kernel, WEIGHT_BENCH_RADIUS);
            for (flavor, (mean, sup)) in derivative_errors(&g.cloud, &cfg)? {
                rows.push(WeightsRow {
                    n,
                    points: g.cloud.len(),
                    kernel,
                    flavor,
                    mean_error: mean,
                    sup_error: sup,
                });
            }
        }
    }
    Ok(rows)
}

pub fn weights_csv(rows: &[WeightsRow]) -> String {
    let mut s = String::from("n,points,kernel,flavor,mean_error,sup_error\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{:e},{:e}\n",
            r.n,
            r.points,
            r.kernel.name(),
            r.flavor.name(),
            r.mean_error,
            r.sup_error
        ));
    }
    s
}
