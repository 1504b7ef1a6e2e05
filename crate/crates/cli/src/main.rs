use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::Command;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use geotomo::experiments::{run_experiment, write_outputs, RunInfo, PRESETS};
use geotomo::forward::{ray_transform_analytic, ray_transform_euclid_with, ray_transform_geodesic};
use geotomo::io::{read_boundary_csv, write_boundary_csv, write_field_csv};
use geotomo::recon::{add_relative_uniform_noise, relative_l2_error};
use geotomo::transport::MinNormSettings;
use geotomo::{
    landweber, AdjointKind, Backprojector, Denominator, ExperimentSpec, OperatorOptions, Operators, PdeAdjoint, Phantom, PolarGrid,
    Quadrature, ReconConfig, RefractiveMedium,
};

#[derive(Parser)]
#[command(name = "geotomo", version, about = "Attenuated geodesic ray transforms of vector fields on the unit disc")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Ray transform of a phantom, written as boundary CSV.
    Forward(ForwardArgs),
    /// Adjoint of boundary data from CSV, written as field CSV.
    Adjoint(AdjointArgs),
    /// Landweber reconstruction of a phantom from its (noisy) transform.
    Reconstruct(ReconstructArgs),
    /// Run a preset experiment and write its tables, fields and manifest.
    Run(RunArgs),
}

#[derive(Args)]
struct GridArgs {
    /// Number of rings R.
    #[arg(short = 'R', long, default_value_t = 34)]
    radii: usize,
    /// Number of angles P (even).
    #[arg(short = 'P', long, default_value_t = 106)]
    angles: usize,
    /// Number of directions Q.
    #[arg(short = 'Q', long, default_value_t = 106)]
    directions: usize,
}

impl GridArgs {
    fn grid(&self) -> Result<PolarGrid> {
        Ok(PolarGrid::new(self.radii, self.angles, self.directions)?)
    }
}

#[derive(Args)]
struct MediumArgs {
    /// euclid, paper-slow or paper-mild.
    #[arg(long, default_value = "euclid")]
    medium: String,
    /// Constant attenuation.
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    /// Subintervals per straight chord.
    #[arg(short = 'T', long, default_value_t = 200)]
    subintervals: usize,
    /// Geodesic parameter step.
    #[arg(long, default_value_t = 0.01)]
    dtau: f64,
}

impl MediumArgs {
    fn medium(&self) -> Result<RefractiveMedium> {
        Ok(RefractiveMedium::by_name(&self.medium, self.alpha)?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Integral,
    Pde,
}

impl From<Method> for AdjointKind {
    fn from(m: Method) -> Self {
        match m {
            Method::Integral => AdjointKind::Integral,
            Method::Pde => AdjointKind::Pde,
        }
    }
}

#[derive(Args)]
struct ForwardArgs {
    /// f1, f2 or f3.
    #[arg(long, default_value = "f1")]
    phantom: String,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    medium: MediumArgs,
    /// Integrate the analytic phantom instead of its grid samples.
    #[arg(long)]
    exact: bool,
    /// Use the plain sample average along chords instead of the trapezoid.
    #[arg(long)]
    paper_verbatim: bool,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AdjointArgs {
    /// Boundary CSV with columns p,q,mu,phi,value.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    medium: MediumArgs,
    #[arg(long, value_enum, default_value = "integral")]
    method: Method,
    /// Viscosity of the PDE adjoint.
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    /// Evaluate the geodesic denominator at the start node instead of the exit.
    #[arg(long)]
    paper_verbatim: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long, default_value = "f1")]
    phantom: String,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    medium: MediumArgs,
    /// Medium assumed by the reconstruction (default: the data medium).
    #[arg(long)]
    model: Option<String>,
    /// Relative noise level.
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    omega: f64,
    #[arg(long, default_value_t = 5000)]
    max_iters: usize,
    #[arg(long, value_enum, default_value = "integral")]
    method: Method,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    #[arg(long)]
    nesterov: bool,
    /// Output directory for errors.csv and field.csv.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// One of the preset experiment names.
    experiment: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed for every noise level.
    #[arg(long)]
    seed: Option<u64>,
    /// TOML file overriding fields of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Cmd::Forward(a) => forward(a),
        Cmd::Adjoint(a) => adjoint(a),
        Cmd::Reconstruct(a) => reconstruct(a),
        Cmd::Run(a) => run(a),
    }
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn forward(a: ForwardArgs) -> Result<()> {
    let grid = a.grid.grid()?;
    let medium = a.medium.medium()?;
    let phantom = Phantom::by_name(&a.phantom)?;
    let data = if a.exact {
        ray_transform_analytic(|x, v| v.copy_from_slice(&phantom.eval(x)), 1, &medium, &grid, a.medium.subintervals, a.medium.dtau)?
    } else if medium.is_euclidean() {
        let quadrature = if a.paper_verbatim { Quadrature::PaperVerbatim } else { Quadrature::Trapezoid };
        ray_transform_euclid_with(&phantom.field(&grid), medium.alpha_0(), &grid, a.medium.subintervals, quadrature)?
    } else {
        ray_transform_geodesic(&phantom.field(&grid), &medium, &grid, a.medium.dtau)?
    };
    write_boundary_csv(output(&a.out)?, &data, &grid)?;
    Ok(())
}

fn adjoint(a: AdjointArgs) -> Result<()> {
    let grid = a.grid.grid()?;
    let medium = a.medium.medium()?;
    let file = File::open(&a.data).with_context(|| format!("opening {}", a.data.display()))?;
    let data = read_boundary_csv(BufReader::new(file), &grid)?;
    let field = match a.method {
        Method::Integral => {
            let denominator = if a.paper_verbatim { Denominator::PaperVerbatim } else { Denominator::Geometric };
            Backprojector::for_medium(&grid, 1, &medium, a.medium.dtau, denominator)?.apply(&data)?
        }
        Method::Pde => {
            if !medium.is_euclidean() {
                bail!("the PDE adjoint is available for the euclid medium only");
            }
            PdeAdjoint::with_settings(&grid, 1, medium.alpha_0(), a.epsilon, MinNormSettings::default())?.apply(&data)?
        }
    };
    write_field_csv(output(&a.out)?, &field, &grid)?;
    Ok(())
}

fn reconstruct(a: ReconstructArgs) -> Result<()> {
    let grid = a.grid.grid()?;
    let truth = a.medium.medium()?;
    let model = match &a.model {
        Some(name) => RefractiveMedium::by_name(name, a.medium.alpha)?,
        None => truth.clone(),
    };
    let phantom = Phantom::by_name(&a.phantom)?;
    let exact = phantom.field(&grid);
    let clean = ray_transform_analytic(|x, v| v.copy_from_slice(&phantom.eval(x)), 1, &truth, &grid, a.medium.subintervals, a.medium.dtau)?;
    let data = add_relative_uniform_noise(&clean, &grid, a.delta, a.seed)?;
    let options = OperatorOptions {
        subintervals: a.medium.subintervals,
        dtau: a.medium.dtau,
        epsilon: a.epsilon,
        ..OperatorOptions::default()
    };
    let ops = Operators::build(&grid, 1, &model, a.method.into(), &options)?;
    let config = ReconConfig {
        omega: a.omega,
        max_iters: a.max_iters,
        nesterov: a.nesterov,
        adjoint_kind: a.method.into(),
        ..ReconConfig::default()
    };
    let out = landweber(&data, &ops, &config, Some(&exact))?;

    std::fs::create_dir_all(&a.out)?;
    let mut w = BufWriter::new(File::create(a.out.join("errors.csv"))?);
    writeln!(w, "iteration,error,residual")?;
    for (k, e) in out.errors.iter().enumerate() {
        match out.residuals.get(k) {
            Some(r) => writeln!(w, "{k},{e},{r}")?,
            None => writeln!(w, "{k},{e},")?,
        }
    }
    w.flush()?;
    write_field_csv(BufWriter::new(File::create(a.out.join("field.csv"))?), &out.field, &grid)?;
    let final_error = relative_l2_error(&out.field, &exact, &grid)?;
    println!(
        "relative error {final_error:.6} at iteration {} of {} ({:?})",
        out.iteration, out.iterations, out.stop
    );
    Ok(())
}

fn commit() -> String {
    Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

fn run(a: RunArgs) -> Result<()> {
    let mut spec = ExperimentSpec::preset(&a.experiment).with_context(|| format!("available experiments: {}", PRESETS.join(", ")))?;
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        spec = spec.with_overrides(&text)?;
    }
    if let Some(seed) = a.seed {
        spec = spec.with_seed(seed);
    }
    let output = run_experiment(&spec)?;
    let info = RunInfo {
        commit: commit(),
        threads: rayon::current_num_threads(),
    };
    let paths = write_outputs(&output, &a.out, &info)?;
    for c in &output.checks {
        println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    println!("wrote {} files to {}", paths.len(), a.out.display());
    Ok(())
}
