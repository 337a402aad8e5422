use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pcqc::beltrami2d::{pcbc, PlanarMap};
use pcqc::harness::io::{read_boundary, read_cloud, read_field, write_cloud, write_field, Field};
use pcqc::harness::{
    run_convergence, weights_bench, weights_csv, ExperimentSpec, WEIGHT_BENCH_SIZES,
};
use pcqc::mls::{Flavor, KernelKind, MlsConfig};
use pcqc::parameterization::{conformal_parameterize, BoundarySpec};
use pcqc::pointcloud::PointCloud;
use pcqc::solvers::{solve_qc_map, Discretization, Formulation, QcProblem, SolverOptions};
use pcqc::surface::{surface_bc, SurfaceMap};
use pcqc::{Error, ErrorClass, Result};

#[derive(Parser)]
#[command(
    name = "pcqc",
    version,
    about = "Quasi-conformal geometry on point clouds"
)]
struct Cli {
    /// Seed for randomized instances; overrides the seed in experiment specs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file (default: stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Copy)]
struct FitArgs {
    /// Neighbors per local fit.
    #[arg(long, default_value_t = 25)]
    k: usize,
    #[arg(long, default_value = "gauss")]
    kernel: KernelKind,
}

impl FitArgs {
    fn config(self) -> MlsConfig {
        MlsConfig::knn(self.kernel, self.k)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Domain {
    Rect,
    Disk,
}

#[derive(Subcommand)]
enum Command {
    /// Beltrami coefficient of a planar map given as a vec2 field on a PC2 cloud.
    Bc {
        cloud: PathBuf,
        map: PathBuf,
        #[arg(long, default_value = "diffuse")]
        flavor: Flavor,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Beltrami coefficient of a map from a PC2 cloud into 3D (vec3 field).
    BcSurface {
        cloud: PathBuf,
        map: PathBuf,
        #[arg(long, default_value = "diffuse")]
        flavor: Flavor,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Recover a map from a prescribed Beltrami coefficient.
    Solve {
        cloud: PathBuf,
        mu: PathBuf,
        #[arg(long, default_value = "beltrami")]
        formulation: Formulation,
        #[arg(long, default_value = "collocation")]
        method: Discretization,
        /// Dirichlet data as a BOUNDARY file.
        #[arg(long)]
        boundary: PathBuf,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Harmonic parameterization of a PC3 surface cloud.
    Parameterize {
        cloud: PathBuf,
        #[arg(long, value_enum, default_value = "disk")]
        boundary: Domain,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Run a convergence experiment described by a JSON spec.
    Convergence { spec: PathBuf },
    /// Derivative errors of the weight functions as CSV.
    WeightsBench {
        /// Grid intervals to run (default: the full table).
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

fn load_cloud(path: &Path, dim: usize) -> Result<PointCloud> {
    let pc = read_cloud(open(path)?)?;
    if pc.dim() != dim {
        return Err(Error::Interface(format!(
            "{} holds a {}D cloud, expected {dim}D",
            path.display(),
            pc.dim()
        )));
    }
    Ok(pc)
}

fn load_field(path: &Path, len: usize) -> Result<Field> {
    let field = read_field(open(path)?)?;
    if field.len() != len {
        return Err(Error::Interface(format!(
            "{} has {} rows but the cloud has {len} points",
            path.display(),
            field.len()
        )));
    }
    Ok(field)
}

fn emit(out: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            write(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            write(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    }
    let out = cli.out.as_deref();
    match cli.command {
        Command::Bc {
            cloud,
            map,
            flavor,
            fit,
        } => {
            let pc = load_cloud(&cloud, 2)?;
            let targets = load_field(&map, pc.len())?.vec2()?;
            let pm = PlanarMap::new(&pc, targets)?;
            let field = pcbc(&pm, flavor, &fit.config())?;
            if field.invalid_count() > 0 {
                eprintln!(
                    "{} points have no valid coefficient (written as NaN)",
                    field.invalid_count()
                );
            }
            emit(out, |w| write_field(w, &Field::from_complex(&field.values)))
        }
        Command::BcSurface {
            cloud,
            map,
            flavor,
            fit,
        } => {
            let pc = load_cloud(&cloud, 2)?;
            let targets = load_field(&map, pc.len())?.vec3()?;
            let sm = SurfaceMap::new(&pc, targets)?;
            let bc = surface_bc(&sm, flavor, &fit.config())?;
            if !bc.clamped.is_empty() {
                eprintln!("{} points had a clamped metric radicand", bc.clamped.len());
            }
            emit(out, |w| {
                write_field(w, &Field::from_complex(&bc.field.values))
            })
        }
        Command::Solve {
            cloud,
            mu,
            formulation,
            method,
            boundary,
            fit,
        } => {
            let pc = load_cloud(&cloud, 2)?;
            let mu = load_field(&mu, pc.len())?.complex()?;
            let data = read_boundary(open(&boundary)?)?;
            let problem = QcProblem::new(&pc, mu, data.indices, data.values, formulation, method)?;
            let options = SolverOptions {
                mls: fit.config(),
                flavor: Flavor::Diffuse,
            };
            let sol = solve_qc_map(&problem, &options)?;
            eprintln!(
                "residual {:.3e}, boundary residual {:.3e}, {} unknowns",
                sol.residual_norm, sol.boundary_residual, sol.solve_report.n_unknowns
            );
            emit(out, |w| write_field(w, &Field::from_vec2(&sol.map.targets)))
        }
        Command::Parameterize {
            cloud,
            boundary,
            fit,
        } => {
            let pc = load_cloud(&cloud, 3)?;
            let spec = match boundary {
                Domain::Rect => BoundarySpec::Rect,
                Domain::Disk => BoundarySpec::Disk,
            };
            let pair = conformal_parameterize(&pc, &spec, &fit.config())?;
            eprintln!("e_grade {:.6e}", pair.e_grade);
            emit(out, |w| write_cloud(w, &pair.plane))
        }
        Command::Convergence { spec } => {
            let mut spec: ExperimentSpec = serde_json::from_reader(open(&spec)?)?;
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            let report = run_convergence(&spec)?;
            for f in &report.failures {
                eprintln!(
                    "resolution {} {:?}: {}",
                    f.resolution, f.quantity, f.message
                );
            }
            let json = report.to_json()?;
            emit(out, |w| Ok(writeln!(w, "{json}")?))
        }
        Command::WeightsBench { sizes } => {
            let sizes = sizes.unwrap_or_else(|| WEIGHT_BENCH_SIZES.to_vec());
            let rows = weights_bench(&sizes)?;
            let csv = weights_csv(&rows);
            emit(out, |w| Ok(w.write_all(csv.as_bytes())?))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Input => 2,
                ErrorClass::Numerical => 3,
                ErrorClass::Precondition => 4,
            })
        }
    }
}
