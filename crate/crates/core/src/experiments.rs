//! Phantoms and the harness that reproduces the reconstruction tables and
//! figures. Every experiment is a list of independent cells; results come
//! back in cell order and are written as CSV plus a JSON run manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::{relative_duality_defect, Backprojector, InnerProducts};
use crate::error::{Error, Result};
use crate::forward::{ray_transform_analytic, Quadrature, RayTransform};
use crate::geometry::RefractiveMedium;
use crate::grid::{PolarGrid, TensorField};
use crate::io::write_field_csv;
use crate::recon::{add_relative_uniform_noise, landweber, OperatorOptions, Operators, ReconConfig, StopReason};
use crate::transport::{AdjointKind, PdeAdjoint};

/// The analytic test fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phantom {
    /// `(x1 + x2, x1 - x2)`, divergence free.
    F1,
    /// `(x1^2 - 2 x2^2, -2 x1 x2)`.
    F2,
    /// `(x1, -x2)`.
    F3,
}

impl Phantom {
    pub const ALL: [Phantom; 3] = [Phantom::F1, Phantom::F2, Phantom::F3];

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "f1" => Ok(Phantom::F1),
            "f2" => Ok(Phantom::F2),
            "f3" => Ok(Phantom::F3),
            _ => Err(Error::UnknownPhantom(name.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phantom::F1 => "f1",
            Phantom::F2 => "f2",
            Phantom::F3 => "f3",
        }
    }

    pub fn eval(self, x: [f64; 2]) -> [f64; 2] {
        let [a, b] = x;
        match self {
            Phantom::F1 => [a + b, a - b],
            Phantom::F2 => [a * a - 2.0 * b * b, -2.0 * a * b],
            Phantom::F3 => [a, -b],
        }
    }

    /// Samples on the grid nodes.
    pub fn field(self, grid: &PolarGrid) -> TensorField {
        TensorField::from_fn(grid, 1, |x, v| v.copy_from_slice(&self.eval(x)))
    }
}

/// Evaluates the named phantom at `x`.
pub fn phantom(name: &str, x: [f64; 2]) -> Result<[f64; 2]> {
    Ok(Phantom::by_name(name)?.eval(x))
}

/// What an experiment computes and which checks apply to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Reconstruction error over grids and attenuations.
    GridSweep,
    /// Reconstruction error over the direction count `Q`.
    DirectionSweep,
    /// Reconstruction from refracted data with and without the refractive model.
    Refraction,
    /// Duality defects of the integral and PDE adjoints.
    DualitySweep,
    /// Reconstruction from noisy data.
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseLevel {
    pub delta: f64,
    pub seed: u64,
}

/// Full description of an experiment. Presets exist for the published
/// tables and figures; any field can be overridden from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub kind: ExperimentKind,
    pub phantom: String,
    /// Medium that generates the data. Reconstructions use it too, and the
    /// refraction experiment additionally uses `n = 1`.
    pub medium: String,
    pub alphas: Vec<f64>,
    /// `(R, P, Q)` triples.
    pub grids: Vec<[usize; 3]>,
    pub noise: Vec<NoiseLevel>,
    pub adjoints: Vec<AdjointKind>,
    /// Viscosities for the duality sweep.
    pub epsilons: Vec<f64>,
    pub recon: ReconConfig,
    pub operators: OperatorOptions,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "table1".into(),
            kind: ExperimentKind::GridSweep,
            phantom: "f1".into(),
            medium: "euclid".into(),
            alphas: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            grids: TABLE1_PAIRS.iter().map(|&(r, p)| [r, p, p]).collect(),
            noise: vec![NoiseLevel { delta: 0.0, seed: 0 }],
            adjoints: vec![AdjointKind::Integral],
            epsilons: Vec::new(),
            recon: ReconConfig::default(),
            operators: OperatorOptions::default(),
        }
    }
}

/// `(R, P)` pairs with `R P = 3600`.
pub const TABLE1_PAIRS: [(usize, usize); 8] = [(20, 180), (30, 120), (34, 106), (40, 90), (60, 60), (90, 40), (120, 30), (180, 20)];
/// Direction counts of the `Q` sweep on the `(34, 106)` grid.
pub const TABLE3_DIRECTIONS: [usize; 11] = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 106];
pub const PRESETS: [&str; 6] = ["table1", "table3", "table4", "fig-errdual", "fig-noise", "table-time"];

const BEST_GRID: [usize; 3] = [34, 106, 106];

impl ExperimentSpec {
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self {
            name: name.to_string(),
            ..Self::default()
        };
        let spec = match name {
            "table1" => base,
            "table3" => Self {
                kind: ExperimentKind::DirectionSweep,
                grids: TABLE3_DIRECTIONS.iter().map(|&q| [34, 106, q]).collect(),
                ..base
            },
            "table4" => Self {
                kind: ExperimentKind::Refraction,
                phantom: "f3".into(),
                medium: "paper-mild".into(),
                alphas: vec![0.01, 0.02],
                grids: vec![BEST_GRID],
                noise: vec![NoiseLevel { delta: 0.0, seed: 0 }, NoiseLevel { delta: 0.01, seed: 0 }],
                recon: ReconConfig {
                    omega: 0.01,
                    nesterov: true,
                    ..ReconConfig::default()
                },
                ..base
            },
            "fig-errdual" => Self {
                kind: ExperimentKind::DualitySweep,
                phantom: "f2".into(),
                alphas: vec![0.0],
                grids: vec![BEST_GRID],
                adjoints: vec![AdjointKind::Integral, AdjointKind::Pde],
                epsilons: vec![0.1, 0.01, 1e-3, 1e-4, 0.0],
                ..base
            },
            "fig-noise" => Self {
                kind: ExperimentKind::Noise,
                phantom: "f2".into(),
                alphas: vec![0.0],
                grids: vec![BEST_GRID],
                noise: [0.0, 0.1, 0.2].iter().map(|&delta| NoiseLevel { delta, seed: 0 }).collect(),
                ..base
            },
            "table-time" => Self {
                kind: ExperimentKind::Noise,
                phantom: "f2".into(),
                alphas: vec![0.0],
                grids: vec![BEST_GRID],
                noise: [0.03, 0.1].iter().map(|&delta| NoiseLevel { delta, seed: 0 }).collect(),
                adjoints: vec![AdjointKind::Integral, AdjointKind::Pde],
                ..base
            },
            _ => return Err(Error::UnknownExperiment(name.to_string())),
        };
        Ok(spec)
    }

    /// Replaces the fields present in `toml_text`, keeping the rest.
    pub fn with_overrides(&self, toml_text: &str) -> Result<Self> {
        let overrides: toml::Table = toml_text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut base = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, overrides);
        let spec: Self = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Uses `seed` for every noise level.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.noise.iter_mut().for_each(|n| n.seed = seed);
        self
    }

    pub fn validate(&self) -> Result<()> {
        Phantom::by_name(&self.phantom)?;
        let medium = RefractiveMedium::by_name(&self.medium, 0.0)?;
        if self.alphas.is_empty() || self.grids.is_empty() || self.noise.is_empty() || self.adjoints.is_empty() {
            return Err(Error::Config("alphas, grids, noise and adjoints must be non-empty".into()));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a >= 0.0)) {
            return Err(Error::Config(format!("attenuation {a} must be >= 0")));
        }
        if let Some(n) = self.noise.iter().find(|n| !(n.delta >= 0.0)) {
            return Err(Error::Config(format!("noise level {} must be >= 0", n.delta)));
        }
        for &[r, p, q] in &self.grids {
            PolarGrid::new(r, p, q)?;
        }
        self.recon.validate()?;
        let uses_pde = self.kind == ExperimentKind::DualitySweep || self.adjoints.contains(&AdjointKind::Pde);
        if uses_pde && !medium.is_euclidean() {
            return Err(Error::Config("the PDE adjoint needs the euclid medium".into()));
        }
        if self.kind == ExperimentKind::DualitySweep && self.epsilons.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::Config("viscosities must be >= 0".into()));
        }
        Ok(())
    }

    fn models(&self) -> Vec<String> {
        if self.kind == ExperimentKind::Refraction && self.medium != "euclid" {
            vec!["euclid".into(), self.medium.clone()]
        } else {
            vec![self.medium.clone()]
        }
    }
}

fn merge(base: &mut toml::Table, overrides: toml::Table) {
    for (key, value) in overrides {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

/// One reconstruction cell.
#[derive(Debug, Clone, Serialize)]
pub struct ReconRow {
    pub r: usize,
    pub p: usize,
    pub q: usize,
    pub alpha: f64,
    pub delta: f64,
    pub seed: u64,
    /// Medium assumed by the reconstruction.
    pub model: String,
    pub adjoint: AdjointKind,
    pub error: f64,
    /// Iteration that produced the reported field.
    pub best_iteration: usize,
    pub iterations: usize,
    pub stop: StopReason,
    #[serde(skip)]
    pub seconds: f64,
    #[serde(skip)]
    pub field: TensorField,
}

impl ReconRow {
    pub fn grid(&self) -> [usize; 3] {
        [self.r, self.p, self.q]
    }

    /// File-name friendly identifier of the cell.
    pub fn key(&self) -> String {
        format!(
            "r{}_p{}_q{}_a{}_d{}_{}_{}",
            self.r,
            self.p,
            self.q,
            self.alpha,
            self.delta,
            self.model,
            match self.adjoint {
                AdjointKind::Integral => "integral",
                AdjointKind::Pde => "pde",
            }
        )
    }
}

/// Duality defect of one adjoint.
#[derive(Debug, Clone, Serialize)]
pub struct DefectRow {
    pub r: usize,
    pub p: usize,
    pub q: usize,
    pub alpha: f64,
    pub adjoint: AdjointKind,
    /// Viscosity, empty for the integral adjoint.
    pub epsilon: Option<f64>,
    pub defect: f64,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    grid: [usize; 3],
    alpha: f64,
    noise: NoiseLevel,
    model: usize,
    adjoint: AdjointKind,
}

/// Runs every reconstruction cell of a sweep, refraction or noise experiment.
/// Data are integrals of the analytic phantom along the rays of the data
/// medium, so they are not in the range of the discrete operator.
pub fn run_reconstructions(spec: &ExperimentSpec) -> Result<Vec<ReconRow>> {
    spec.validate()?;
    if spec.kind == ExperimentKind::DualitySweep {
        return Err(Error::Config("a duality sweep has no reconstructions".into()));
    }
    let models = spec.models();
    let mut cells = Vec::new();
    for &grid in &spec.grids {
        for &alpha in &spec.alphas {
            for &noise in &spec.noise {
                for model in 0..models.len() {
                    for &adjoint in &spec.adjoints {
                        cells.push(Cell {
                            grid,
                            alpha,
                            noise,
                            model,
                            adjoint,
                        });
                    }
                }
            }
        }
    }
    cells.par_iter().map(|c| run_cell(spec, &models[c.model], c)).collect()
}

fn run_cell(spec: &ExperimentSpec, model: &str, cell: &Cell) -> Result<ReconRow> {
    let start = Instant::now();
    let [r, p, q] = cell.grid;
    let grid = PolarGrid::new(r, p, q)?;
    let phantom = Phantom::by_name(&spec.phantom)?;
    let truth = RefractiveMedium::by_name(&spec.medium, cell.alpha)?;
    let exact = phantom.field(&grid);
    let clean = ray_transform_analytic(
        |x, v| v.copy_from_slice(&phantom.eval(x)),
        1,
        &truth,
        &grid,
        spec.operators.subintervals,
        spec.operators.dtau,
    )?;
    let data = add_relative_uniform_noise(&clean, &grid, cell.noise.delta, cell.noise.seed)?;
    let medium = RefractiveMedium::by_name(model, cell.alpha)?;
    let ops = Operators::build(&grid, 1, &medium, cell.adjoint, &spec.operators)?;
    let config = ReconConfig {
        adjoint_kind: cell.adjoint,
        ..spec.recon
    };
    let out = landweber(&data, &ops, &config, Some(&exact))?;
    Ok(ReconRow {
        r,
        p,
        q,
        alpha: cell.alpha,
        delta: cell.noise.delta,
        seed: cell.noise.seed,
        model: model.to_string(),
        adjoint: cell.adjoint,
        error: out.best_error().expect("exact field given"),
        best_iteration: out.iteration,
        iterations: out.iterations,
        stop: out.stop,
        seconds: start.elapsed().as_secs_f64(),
        field: out.field,
    })
}

/// Duality defects of the integral adjoint and of the PDE adjoint for every
/// viscosity, on the phantom samples of each grid and attenuation.
pub fn run_errdual_sweep(spec: &ExperimentSpec) -> Result<Vec<DefectRow>> {
    spec.validate()?;
    let phantom = Phantom::by_name(&spec.phantom)?;
    let mut cells = Vec::new();
    for &grid in &spec.grids {
        for &alpha in &spec.alphas {
            cells.push((grid, alpha, None));
            for &eps in &spec.epsilons {
                cells.push((grid, alpha, Some(eps)));
            }
        }
    }
    cells
        .par_iter()
        .map(|&([r, p, q], alpha, epsilon)| {
            let grid = PolarGrid::new(r, p, q)?;
            let f = phantom.field(&grid);
            let forward = RayTransform::euclid(&grid, 1, alpha, spec.operators.subintervals, Quadrature::Trapezoid)?;
            let inner = InnerProducts::euclidean(&grid, 1);
            let start = Instant::now();
            let (adjoint, defect) = match epsilon {
                None => {
                    let bp = Backprojector::euclid(&grid, 1, alpha)?;
                    (AdjointKind::Integral, relative_duality_defect(&f, |f| forward.apply(f), |h| bp.apply(h), &inner)?)
                }
                Some(eps) => {
                    let pde = PdeAdjoint::with_settings(&grid, 1, alpha, eps, spec.operators.min_norm)?;
                    (AdjointKind::Pde, relative_duality_defect(&f, |f| forward.apply(f), |h| pde.apply(h), &inner)?)
                }
            };
            Ok(DefectRow {
                r,
                p,
                q,
                alpha,
                adjoint,
                epsilon,
                defect,
                seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

/// Outcome of a qualitative check on an experiment's results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

fn series_text(values: impl Iterator<Item = f64>) -> String {
    values.map(|v| format!("{v:.4e}")).collect::<Vec<_>>().join(", ")
}

fn pairs_text(pairs: &[(f64, f64)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}: {v:.4e}")).collect::<Vec<_>>().join(", ")
}

fn cell_error(rows: &[ReconRow], grid: [usize; 3], alpha: f64) -> Option<f64> {
    rows.iter().find(|r| r.grid() == grid && r.alpha == alpha).map(|r| r.error)
}

/// The `(34, 106)` grid is within 0.01 of the best grid for every attenuation,
/// and its error grows with the attenuation.
pub fn check_table1(rows: &[ReconRow]) -> Vec<Check> {
    let mut alphas: Vec<f64> = rows.iter().map(|r| r.alpha).collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let mut checks = Vec::new();
    for &a in &alphas {
        let min = rows.iter().filter(|r| r.alpha == a).map(|r| r.error).fold(f64::INFINITY, f64::min);
        if let Some(e) = cell_error(rows, BEST_GRID, a) {
            checks.push(Check::new(
                &format!("(34,106) near the best grid at alpha={a}"),
                e <= min + 0.01,
                format!("error {e:.4e}, column minimum {min:.4e}"),
            ));
        }
    }
    let series: Vec<f64> = alphas.iter().filter_map(|&a| cell_error(rows, BEST_GRID, a)).collect();
    if series.len() >= 2 {
        checks.push(Check::new(
            "(34,106) error increases with alpha",
            series.windows(2).all(|w| w[0] < w[1]),
            series_text(series.iter().copied()),
        ));
    }
    checks
}

/// `Q = 106` is best at `alpha = 0`, and `Q = 30` is within 0.05 of it at
/// `alpha = 0.2`.
pub fn check_table3(rows: &[ReconRow]) -> Vec<Check> {
    let mut checks = Vec::new();
    if let Some(best) = cell_error(rows, BEST_GRID, 0.0) {
        let min = rows.iter().filter(|r| r.alpha == 0.0).map(|r| r.error).fold(f64::INFINITY, f64::min);
        checks.push(Check::new("Q=106 is best at alpha=0", best <= min, format!("Q=106 {best:.4e}, minimum {min:.4e}")));
    }
    if let (Some(a), Some(b)) = (cell_error(rows, [34, 106, 30], 0.2), cell_error(rows, BEST_GRID, 0.2)) {
        checks.push(Check::new(
            "Q=30 comparable to Q=106 at alpha=0.2",
            (a - b).abs() <= 0.05,
            format!("Q=30 {a:.4e}, Q=106 {b:.4e}"),
        ));
    }
    checks
}

/// The refractive model has at most a third of the Euclidean model's error.
pub fn check_refraction(rows: &[ReconRow]) -> Vec<Check> {
    let mut checks = Vec::new();
    for flat in rows.iter().filter(|r| r.model == "euclid") {
        let refr = rows
            .iter()
            .find(|r| r.model != "euclid" && r.grid() == flat.grid() && r.alpha == flat.alpha && r.delta == flat.delta);
        if let Some(refr) = refr {
            checks.push(Check::new(
                &format!("refraction pays at delta={} alpha={}", flat.delta, flat.alpha),
                refr.error <= flat.error / 3.0,
                format!("with {:.4e}, without {:.4e}, ratio {:.2}", refr.error, flat.error, flat.error / refr.error),
            ));
        }
    }
    checks
}

/// Errors grow with the noise level, up to a slack of 0.01.
pub fn check_noise(rows: &[ReconRow]) -> Vec<Check> {
    let mut by_adjoint: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        by_adjoint.entry(r.key_without_noise()).or_default().push((r.delta, r.error));
    }
    by_adjoint
        .into_iter()
        .filter(|(_, s)| s.len() >= 2)
        .map(|(key, mut s)| {
            s.sort_by(|a, b| a.0.total_cmp(&b.0));
            let ok = s.windows(2).all(|w| w[0].1 <= w[1].1 + 0.01);
            Check::new(&format!("error grows with noise for {key}"), ok, pairs_text(&s))
        })
        .collect()
}

impl ReconRow {
    fn key_without_noise(&self) -> String {
        format!("r{}_p{}_q{}_a{}_{}_{:?}", self.r, self.p, self.q, self.alpha, self.model, self.adjoint)
    }
}

/// The integral adjoint has the smallest defect, the PDE defect approaches
/// its `epsilon = 0` value monotonically, and large viscosity is worse than
/// small viscosity.
pub fn check_errdual(rows: &[DefectRow]) -> Vec<Check> {
    let mut checks = Vec::new();
    let integral = rows.iter().find(|r| r.epsilon.is_none()).map(|r| r.defect);
    let mut pde: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.epsilon.map(|e| (e, r.defect))).collect();
    pde.sort_by(|a, b| b.0.total_cmp(&a.0));
    let zero = pde.iter().find(|(e, _)| *e == 0.0).map(|p| p.1);
    if let (Some(i), Some(z)) = (integral, zero) {
        checks.push(Check::new("integral defect <= eps=0 defect", i <= z, format!("integral {i:.4e}, eps=0 {z:.4e}")));
        let min = rows.iter().map(|r| r.defect).fold(f64::INFINITY, f64::min);
        checks.push(Check::new("integral defect is the minimum", i <= min, format!("integral {i:.4e}, minimum {min:.4e}")));
    }
    if let Some(z) = zero {
        let gaps: Vec<f64> = pde.iter().map(|(_, d)| (d - z).abs()).collect();
        checks.push(Check::new(
            "defect approaches eps=0 monotonically",
            gaps.windows(2).all(|w| w[1] <= w[0]),
            pairs_text(&pde),
        ));
    }
    if let (Some(big), Some(small)) = (pde.first(), pde.iter().rev().find(|(e, _)| *e > 0.0)) {
        if big.0 > small.0 {
            checks.push(Check::new(
                "large viscosity is worse than small viscosity",
                big.1 > small.1,
                format!("eps={} {:.4e}, eps={} {:.4e}", big.0, big.1, small.0, small.1),
            ));
        }
    }
    checks
}

/// Rows of either experiment family.
#[derive(Debug, Clone)]
pub enum Rows {
    Recon(Vec<ReconRow>),
    Defects(Vec<DefectRow>),
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub spec: ExperimentSpec,
    pub rows: Rows,
    pub checks: Vec<Check>,
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let (rows, checks) = match spec.kind {
        ExperimentKind::DualitySweep => {
            let rows = run_errdual_sweep(spec)?;
            let checks = check_errdual(&rows);
            (Rows::Defects(rows), checks)
        }
        kind => {
            let rows = run_reconstructions(spec)?;
            let checks = match kind {
                ExperimentKind::GridSweep => check_table1(&rows),
                ExperimentKind::DirectionSweep => check_table3(&rows),
                ExperimentKind::Refraction => check_refraction(&rows),
                _ => check_noise(&rows),
            };
            (Rows::Recon(rows), checks)
        }
    };
    Ok(ExperimentOutput {
        spec: spec.clone(),
        rows,
        checks,
    })
}

/// Provenance recorded in the run manifest.
#[derive(Debug, Clone, Serialize)]
pub struct RunInfo {
    pub commit: String,
    pub threads: usize,
}

#[derive(Serialize)]
struct Timing {
    cell: String,
    seconds: f64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    name: &'a str,
    spec: &'a ExperimentSpec,
    commit: &'a str,
    threads: usize,
    version: &'a str,
    checks: &'a [Check],
    timings: Vec<Timing>,
}

/// Writes `<name>.csv`, one `<name>_field_<cell>.csv` per reconstruction and
/// `<name>_meta.json`. Returns the written paths.
pub fn write_outputs(output: &ExperimentOutput, dir: &Path, info: &RunInfo) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let name = &output.spec.name;
    let mut written = Vec::new();
    let table = dir.join(format!("{name}.csv"));
    let mut w = csv::Writer::from_path(&table)?;
    let timings = match &output.rows {
        Rows::Recon(rows) => {
            rows.iter().try_for_each(|r| w.serialize(r))?;
            w.flush()?;
            written.push(table);
            let mut timings = Vec::new();
            for row in rows {
                let grid = PolarGrid::new(row.r, row.p, row.q)?;
                let path = dir.join(format!("{name}_field_{}.csv", row.key()));
                write_field_csv(BufWriter::new(File::create(&path)?), &row.field, &grid)?;
                written.push(path);
                timings.push(Timing {
                    cell: row.key(),
                    seconds: row.seconds,
                });
            }
            timings
        }
        Rows::Defects(rows) => {
            rows.iter().try_for_each(|r| w.serialize(r))?;
            w.flush()?;
            written.push(table);
            rows.iter()
                .map(|r| Timing {
                    cell: match r.epsilon {
                        None => format!("r{}_p{}_q{}_a{}_integral", r.r, r.p, r.q, r.alpha),
                        Some(e) => format!("r{}_p{}_q{}_a{}_pde_eps{e}", r.r, r.p, r.q, r.alpha),
                    },
                    seconds: r.seconds,
                })
                .collect()
        }
    };
    let manifest = Manifest {
        name,
        spec: &output.spec,
        commit: &info.commit,
        threads: info.threads,
        version: env!("CARGO_PKG_VERSION"),
        checks: &output.checks,
        timings,
    };
    let meta = dir.join(format!("{name}_meta.json"));
    serde_json::to_writer_pretty(BufWriter::new(File::create(&meta)?), &manifest)?;
    written.push(meta);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_values() {
        assert_eq!(phantom("f1", [1.0, 0.0]).unwrap(), [1.0, 1.0]);
        assert_eq!(phantom("f2", [0.0, 0.0]).unwrap(), [0.0, 0.0]);
        assert_eq!(phantom("f3", [0.3, -0.4]).unwrap(), [0.3, 0.4]);
        assert!(matches!(phantom("f4", [0.0, 0.0]), Err(Error::UnknownPhantom(_))));
    }

    #[test]
    fn presets_are_valid() {
        for name in PRESETS {
            ExperimentSpec::preset(name).unwrap().validate().unwrap();
        }
        assert!(matches!(ExperimentSpec::preset("table9"), Err(Error::UnknownExperiment(_))));
    }

    #[test]
    fn overrides_replace_nested_fields_only() {
        let spec = ExperimentSpec::preset("table1").unwrap();
        let text = "alphas = [0.0]\ngrids = [[6, 20, 20]]\n[recon]\nomega = 0.05\n";
        let o = spec.with_overrides(text).unwrap();
        assert_eq!(o.alphas, vec![0.0]);
        assert_eq!(o.grids, vec![[6, 20, 20]]);
        assert_eq!(o.recon.omega, 0.05);
        assert_eq!(o.recon.max_iters, spec.recon.max_iters);
        assert_eq!(o.phantom, "f1");
        assert!(matches!(spec.with_overrides("omgea = 1"), Err(Error::Config(_))));
        assert!(spec.with_overrides("phantom = \"f9\"").is_err());
    }

    fn tiny_spec(kind: ExperimentKind) -> ExperimentSpec {
        ExperimentSpec {
            name: "tiny".into(),
            kind,
            alphas: vec![0.0, 0.1],
            grids: vec![[6, 20, 20]],
            recon: ReconConfig {
                max_iters: 40,
                ..ReconConfig::default()
            },
            ..ExperimentSpec::default()
        }
    }

    #[test]
    fn runs_are_reproducible_and_written() {
        let spec = ExperimentSpec {
            noise: vec![NoiseLevel { delta: 0.05, seed: 3 }],
            ..tiny_spec(ExperimentKind::GridSweep)
        };
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        let (Rows::Recon(ra), Rows::Recon(rb)) = (&a.rows, &b.rows) else { panic!("reconstruction rows expected") };
        assert_eq!(ra.len(), 2);
        for (x, y) in ra.iter().zip(rb) {
            assert_eq!(x.error.to_bits(), y.error.to_bits());
            assert_eq!(x.field, y.field);
        }
        let dir = tempfile::tempdir().unwrap();
        let info = RunInfo {
            commit: "abc".into(),
            threads: 1,
        };
        let paths = write_outputs(&a, dir.path(), &info).unwrap();
        assert_eq!(paths.len(), 4);
        let table = std::fs::read_to_string(dir.path().join("tiny.csv")).unwrap();
        assert!(table.starts_with("r,p,q,alpha,delta,seed,model,adjoint,error,best_iteration,iterations,stop\n6,20,20,0.0,0.05,3,euclid,integral,"));
        let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("tiny_meta.json")).unwrap()).unwrap();
        assert_eq!(meta["commit"], "abc");
        assert_eq!(meta["spec"]["grids"][0][1], 20);
    }

    #[test]
    fn refraction_runs_both_models() {
        let spec = ExperimentSpec {
            medium: "paper-mild".into(),
            alphas: vec![0.01],
            ..tiny_spec(ExperimentKind::Refraction)
        };
        let rows = run_reconstructions(&spec).unwrap();
        let models: Vec<&str> = rows.iter().map(|r| r.model.as_str()).collect();
        assert_eq!(models, ["euclid", "paper-mild"]);
        assert_eq!(check_refraction(&rows).len(), 1);
    }

    #[test]
    fn pde_needs_flat_medium() {
        let spec = ExperimentSpec {
            medium: "paper-mild".into(),
            adjoints: vec![AdjointKind::Pde],
            ..tiny_spec(ExperimentKind::Noise)
        };
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }

    fn row(grid: [usize; 3], alpha: f64, error: f64) -> ReconRow {
        ReconRow {
            r: grid[0],
            p: grid[1],
            q: grid[2],
            alpha,
            delta: 0.0,
            seed: 0,
            model: "euclid".into(),
            adjoint: AdjointKind::Integral,
            error,
            best_iteration: 0,
            iterations: 0,
            stop: StopReason::MaxIterations,
            seconds: 0.0,
            field: TensorField::zeros(&PolarGrid::new(2, 4, 4).unwrap(), 1),
        }
    }

    #[test]
    fn table_checks_compare_the_right_cells() {
        let rows = vec![
            row([34, 106, 106], 0.0, 0.02),
            row([40, 90, 90], 0.0, 0.015),
            row([34, 106, 106], 0.1, 0.05),
            row([40, 90, 90], 0.1, 0.03),
        ];
        let checks = check_table1(&rows);
        assert_eq!(checks.iter().map(|c| c.passed).collect::<Vec<_>>(), [true, false, true]);
        let rows = vec![row([34, 106, 106], 0.0, 0.02), row([34, 106, 90], 0.0, 0.01)];
        assert!(!check_table3(&rows)[0].passed);
    }

    #[test]
    fn errdual_checks_follow_the_series() {
        let d = |epsilon: Option<f64>, defect: f64| DefectRow {
            r: 2,
            p: 4,
            q: 4,
            alpha: 0.0,
            adjoint: if epsilon.is_some() { AdjointKind::Pde } else { AdjointKind::Integral },
            epsilon,
            defect,
            seconds: 0.0,
        };
        let rows = vec![d(None, 1e-3), d(Some(0.1), 0.5), d(Some(0.01), 0.1), d(Some(0.0), 0.01)];
        assert!(check_errdual(&rows).iter().all(|c| c.passed));
        let rows = vec![d(None, 1e-3), d(Some(0.1), 0.5), d(Some(0.01), 0.6), d(Some(0.0), 0.01)];
        assert!(!check_errdual(&rows).iter().all(|c| c.passed));
    }
}
