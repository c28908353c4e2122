//! TOML run configuration and its translation into solver inputs.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use chbc_core::potentials::DEFAULT_VALIDATION_RANGE;
use chbc_core::{
    build_interval_mesh, build_square_mesh, AdmissibleSet, Bound, CostWeights, Discretization, Field, NewtonOptions,
    OptimizeOptions, Potential, PotentialPair, SpaceTimeControl, TimeGrid, TrackingData,
};

use crate::error::{CliError, CliResult};
use crate::profile::{read_control_csv, BulkProfile};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub mesh: MeshSection,
    pub time: TimeSection,
    #[serde(default)]
    pub potentials: PotentialsSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default)]
    pub tracking: TrackingSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    pub dimension: usize,
    pub n: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    #[serde(alias = "T")]
    pub final_time: f64,
    pub steps: usize,
}

/// `"regular"` or polynomial coefficients in increasing degree.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum PotentialSpec {
    Named(String),
    Coefficients(Vec<f64>),
}

impl Default for PotentialSpec {
    fn default() -> Self {
        PotentialSpec::Named("regular".into())
    }
}

impl PotentialSpec {
    fn build(&self) -> CliResult<Potential> {
        match self {
            PotentialSpec::Named(name) if name.trim() == "regular" => Ok(Potential::regular()),
            PotentialSpec::Named(name) => Err(CliError::Config(format!(
                "unknown potential '{name}'; use \"regular\" or a coefficient list"
            ))),
            PotentialSpec::Coefficients(c) => Ok(Potential::polynomial(c.clone())?),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialsSection {
    pub bulk: PotentialSpec,
    pub boundary: PotentialSpec,
    pub eta: f64,
    pub c_compat: f64,
    pub validation_range: [f64; 2],
    pub validation_samples: usize,
}

impl Default for PotentialsSection {
    fn default() -> Self {
        Self {
            bulk: PotentialSpec::default(),
            boundary: PotentialSpec::default(),
            eta: 1.0,
            c_compat: 0.0,
            validation_range: [DEFAULT_VALIDATION_RANGE.0, DEFAULT_VALIDATION_RANGE.1],
            validation_samples: 601,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSection {
    pub profile: String,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self { profile: "zero".into() }
    }
}

/// A box bound: a number (TOML `inf`/`-inf` allowed) or a control CSV path.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum BoundSpec {
    Value(f64),
    File(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSection {
    /// `"zero"`, `"constant(c)"` or a control CSV path.
    pub initial: String,
    pub u_min: BoundSpec,
    pub u_max: BoundSpec,
    pub m0: f64,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            initial: "zero".into(),
            u_min: BoundSpec::Value(f64::NEG_INFINITY),
            u_max: BoundSpec::Value(f64::INFINITY),
            m0: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingSection {
    /// Bulk target profile, or `"uncontrolled"` for the state at the initial control.
    pub z_q: String,
    /// Defaults to the trace of `z_q`.
    pub z_sigma: Option<String>,
    /// Defaults to the final level of `z_q`.
    pub z_omega: Option<String>,
    /// Defaults to the trace of `z_omega`.
    pub z_gamma: Option<String>,
    pub b_q: f64,
    pub b_sigma: f64,
    pub b_omega: f64,
    pub b_gamma: f64,
    pub b0: f64,
}

impl Default for TrackingSection {
    fn default() -> Self {
        Self {
            z_q: "zero".into(),
            z_sigma: None,
            z_omega: None,
            z_gamma: None,
            b_q: 1.0,
            b_sigma: 0.0,
            b_omega: 0.0,
            b_gamma: 0.0,
            b0: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub newton_abs_tol: f64,
    pub newton_rel_tol: f64,
    pub newton_max_iter: usize,
    pub newton_max_backtracks: usize,
    pub opt_tol: f64,
    pub opt_max_iter: usize,
    pub projection_tol: f64,
    pub projection_max_sweeps: usize,
    pub fd_epsilon: f64,
    pub grad_check_samples: usize,
    pub grad_check_tol: f64,
    pub random_pairs: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let newton = NewtonOptions::default();
        let opt = OptimizeOptions::default();
        Self {
            newton_abs_tol: newton.abs_tol,
            newton_rel_tol: newton.rel_tol,
            newton_max_iter: newton.max_iter,
            newton_max_backtracks: newton.max_backtracks,
            opt_tol: opt.tol,
            opt_max_iter: opt.max_iter,
            projection_tol: opt.projection_tol,
            projection_max_sweeps: opt.projection_sweeps,
            fd_epsilon: 1e-4,
            grad_check_samples: 3,
            grad_check_tol: 1e-4,
            random_pairs: 20,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: PathBuf,
    /// Snapshot stride in time steps; 0 writes only the first and last level.
    pub snapshot_every: usize,
    pub vtk: bool,
    pub export_operators: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("output"),
            snapshot_every: 0,
            vtk: true,
            export_operators: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Everything a subcommand needs, validated.
#[derive(Debug)]
pub struct Problem {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub disc: Discretization,
    pub pots: PotentialPair,
    pub validation_range: (f64, f64),
    pub grid: TimeGrid,
    pub y0_profile: BulkProfile,
    pub y0: Field,
    pub u_init: SpaceTimeControl,
    pub set: AdmissibleSet,
    pub weights: CostWeights,
    pub newton: NewtonOptions,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Problem {
    /// Builds meshes, potentials and data. Tracking targets are resolved
    /// separately by [`Problem::tracking_data`] since they may need a solve.
    pub fn from_config(
        config: RunConfig,
        config_path: &Path,
        output_override: Option<PathBuf>,
        seed_override: Option<u64>,
    ) -> CliResult<Self> {
        let base_dir = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let disc = match config.mesh.dimension {
            1 => build_interval_mesh(config.mesh.n)?,
            2 => build_square_mesh(config.mesh.n)?,
            d => return Err(CliError::Config(format!("mesh.dimension must be 1 or 2, got {d}"))),
        };
        let grid = TimeGrid::new(config.time.final_time, config.time.steps)?;
        let p = &config.potentials;
        let validation_range = (p.validation_range[0], p.validation_range[1]);
        let pots = PotentialPair::new(p.bulk.build()?, p.boundary.build()?, p.eta, p.c_compat, validation_range)?;

        let y0_profile = BulkProfile::parse(&config.initial.profile, &base_dir)?;
        let y0 = y0_profile.sample(&disc)?;

        let c = &config.control;
        let u_init = control_from_spec(&c.initial, &base_dir, &disc, &grid)?;
        let lower = bound_from_spec(&c.u_min, &base_dir, &disc, &grid)?;
        let upper = bound_from_spec(&c.u_max, &base_dir, &disc, &grid)?;
        let set = AdmissibleSet::new(lower, upper, c.m0)?;
        set.check(&disc, &grid)?;

        let t = &config.tracking;
        let weights = CostWeights {
            b_q: t.b_q,
            b_sigma: t.b_sigma,
            b_omega: t.b_omega,
            b_gamma: t.b_gamma,
            b0: t.b0,
        };
        let s = &config.solver;
        let newton = NewtonOptions {
            abs_tol: s.newton_abs_tol,
            rel_tol: s.newton_rel_tol,
            max_iter: s.newton_max_iter,
            max_backtracks: s.newton_max_backtracks,
        };
        newton.validate()?;
        if s.fd_epsilon.is_nan() || s.fd_epsilon <= 0.0 || s.grad_check_tol.is_nan() || s.grad_check_tol <= 0.0 {
            return Err(CliError::Config("solver.fd_epsilon and solver.grad_check_tol must be positive".into()));
        }
        let seed = seed_override.or(config.seed).unwrap_or(0);
        let output_dir = output_override.unwrap_or_else(|| config.output.directory.clone());
        Ok(Self {
            config,
            base_dir,
            disc,
            pots,
            validation_range,
            grid,
            y0_profile,
            y0,
            u_init,
            set,
            weights,
            newton,
            seed,
            output_dir,
        })
    }

    pub fn optimize_options(&self) -> OptimizeOptions {
        let s = &self.config.solver;
        OptimizeOptions {
            tol: s.opt_tol,
            max_iter: s.opt_max_iter,
            projection_tol: s.projection_tol,
            projection_sweeps: s.projection_max_sweeps,
            newton: self.newton,
            ..Default::default()
        }
    }

    /// Tracking data with the given weights. `"uncontrolled"` targets are the
    /// state at the initial control, which costs one solve.
    pub fn tracking_data(&self, weights: CostWeights) -> CliResult<TrackingData> {
        weights.validate()?;
        let t = &self.config.tracking;
        let names = [Some(&t.z_q), t.z_sigma.as_ref(), t.z_omega.as_ref(), t.z_gamma.as_ref()];
        let uncontrolled = names.iter().flatten().any(|s| s.trim() == "uncontrolled");
        let reference = if uncontrolled {
            Some(chbc_core::solve_state(
                &self.disc,
                &self.pots,
                &self.y0,
                &self.u_init,
                &self.grid,
                self.newton,
            )?)
        } else {
            None
        };
        let d = &self.disc;
        let levels = self.grid.steps() + 1;
        let bulk_series = |spec: &str| -> CliResult<Vec<Field>> {
            match BulkProfile::parse(spec, &self.base_dir)? {
                BulkProfile::Uncontrolled => Ok(reference.as_ref().expect("reference solved").y.clone()),
                p => Ok(vec![p.sample(d)?; levels]),
            }
        };
        let z_q = bulk_series(&t.z_q)?;
        let z_sigma = match &t.z_sigma {
            Some(s) => bulk_series(s)?,
            None => z_q.clone(),
        }
        .iter()
        .map(|z| d.trace(z))
        .collect::<chbc_core::Result<Vec<_>>>()?;
        let z_omega = match &t.z_omega {
            Some(s) => bulk_series(s)?.pop().expect("at least one level"),
            None => z_q.last().cloned().expect("at least one level"),
        };
        let z_gamma = match &t.z_gamma {
            Some(s) => d.trace(&bulk_series(s)?.pop().expect("at least one level"))?,
            None => d.trace(&z_omega)?,
        };
        let data = TrackingData {
            z_q,
            z_sigma,
            z_omega,
            z_gamma,
            weights,
        };
        data.check(d, &self.grid)?;
        Ok(data)
    }
}

fn control_from_spec(spec: &str, base: &Path, d: &Discretization, grid: &TimeGrid) -> CliResult<SpaceTimeControl> {
    let s = spec.trim();
    if s == "zero" {
        return Ok(SpaceTimeControl::zeros(d, grid));
    }
    if let Some(c) = crate::profile::parse_call(s, "constant") {
        let args = c?;
        if args.len() != 1 {
            return Err(CliError::Config(format!("constant(c) takes one argument: '{s}'")));
        }
        return Ok(SpaceTimeControl::constant(d, grid, args[0]));
    }
    read_control_csv(&base.join(s), d, grid)
}

fn bound_from_spec(spec: &BoundSpec, base: &Path, d: &Discretization, grid: &TimeGrid) -> CliResult<Bound> {
    match spec {
        BoundSpec::Value(v) => Ok(Bound::Scalar(*v)),
        BoundSpec::File(s) => match s.trim() {
            "inf" | "+inf" => Ok(Bound::Scalar(f64::INFINITY)),
            "-inf" => Ok(Bound::Scalar(f64::NEG_INFINITY)),
            path => Ok(Bound::Field(read_control_csv(&base.join(path), d, grid)?)),
        },
    }
}
