//! Run configuration: one TOML file, every section optional and defaulting
//! to the reference chamber setup. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use therminv_core::aem::{AemSettings, DEFAULT_AEM_SAMPLES};
use therminv_core::inference::{
    McmcSettings, PriorSpec, DEFAULT_BURN_IN, DEFAULT_N_STATES, DEFAULT_WALK,
};
use therminv_core::measurement::{
    chamber_sensors, minute_grid, read_manifest, Sensor, VarianceForm, DEFAULT_POSITION_DELTA,
    DEFAULT_REPEATS, DEFAULT_SIGMA_SENSOR,
};
use therminv_core::model::{
    BoundarySchedule, Geometry, MaterialLayer, PhysicalParameters, PhysicalSetup, ReferenceScales,
};
use therminv_core::solver1d::{Mesh1D, SolverControls};
use therminv_core::solver2d::{DfOptions, Mesh2D, MeshSpec};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Robin,
    /// Top face held at the chamber temperature; only R_l is estimated.
    DirichletTop,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parameters {
    pub h_t: f64,
    pub r_l: f64,
    /// Lateral coefficient of the complete model; defaults to `r_l`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_l: Option<f64>,
}

impl Default for Parameters {
    fn default() -> Self {
        let p = PhysicalParameters::a_priori();
        Parameters {
            h_t: p.h_t,
            r_l: p.r_l,
            h_l: None,
        }
    }
}

impl Parameters {
    pub fn physical(&self) -> PhysicalParameters {
        PhysicalParameters {
            h_t: self.h_t,
            r_l: self.r_l,
        }
    }

    pub fn lateral(&self) -> f64 {
        self.h_l.unwrap_or(self.r_l)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub k0: f64,
    pub k1: f64,
    pub c0: f64,
    pub c1: f64,
    pub thickness: f64,
}

impl From<MaterialLayer> for Layer {
    fn from(m: MaterialLayer) -> Self {
        Layer {
            k0: m.k0,
            k1: m.k1,
            c0: m.c0,
            c1: m.c1,
            thickness: m.thickness,
        }
    }
}

impl Layer {
    fn build(&self) -> CliResult<MaterialLayer> {
        Ok(MaterialLayer::new(
            self.k0,
            self.k1,
            self.c0,
            self.c1,
            self.thickness,
        )?)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Materials {
    pub wood: Layer,
    pub insulator: Layer,
    pub aluminum: Layer,
}

impl Default for Materials {
    fn default() -> Self {
        Materials {
            wood: MaterialLayer::wood_fiber().into(),
            insulator: MaterialLayer::insulator().into(),
            aluminum: MaterialLayer::aluminum().into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub l0x: f64,
    pub l0y: f64,
    pub l0z: f64,
    pub layer_boundaries: Vec<f64>,
    pub aluminum_thickness: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let g = Geometry::chamber();
        GeometryConfig {
            l0x: g.l0x,
            l0y: g.l0y,
            l0z: g.l0z,
            layer_boundaries: g.layer_boundaries,
            aluminum_thickness: g.aluminum_thickness,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scales {
    /// Reference temperature (°C).
    pub temperature: f64,
    /// Experiment duration (s).
    pub time: f64,
    /// Reference length (m).
    pub length: f64,
}

impl Default for Scales {
    fn default() -> Self {
        let s = ReferenceScales::chamber();
        Scales {
            temperature: s.temperature,
            time: s.time,
            length: s.length,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    /// Initial sample temperature (°C).
    pub t_ini: f64,
    /// Chamber program as `[t_s, T_C]` breakpoints.
    pub points: Vec<(f64, f64)>,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            t_ini: 20.0,
            points: BoundarySchedule::chamber().breakpoints().to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Solver1d {
    pub nodes: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step: f64,
}

impl Default for Solver1d {
    fn default() -> Self {
        let c = SolverControls::default();
        Solver1d {
            nodes: 101,
            abs_tol: c.abs_tol,
            rel_tol: c.rel_tol,
            max_step: c.max_step,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Solver2d {
    /// Bulk cell size (m).
    pub interior: f64,
    pub tape_cells: usize,
    pub grading: f64,
    /// Time step (s).
    pub dt: f64,
    /// Keep every n-th step in full-field output.
    pub save_every: usize,
    /// Turn the consistency warning into an error.
    pub strict: bool,
}

impl Default for Solver2d {
    fn default() -> Self {
        let m = MeshSpec::default();
        Solver2d {
            interior: m.interior,
            tape_cells: m.tape_cells,
            grading: m.grading,
            dt: 10.0,
            save_every: 6,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Measurement {
    /// Observation spacing (s).
    pub step_s: f64,
    pub sigma_sensor: f64,
    /// Sensor placement uncertainty (m).
    pub position_delta: f64,
    pub variance: VarianceForm,
    /// Repeats and noise used by `synthesize`.
    pub repeats: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for Measurement {
    fn default() -> Self {
        Measurement {
            step_s: 60.0,
            sigma_sensor: DEFAULT_SIGMA_SENSOR,
            position_delta: DEFAULT_POSITION_DELTA,
            variance: VarianceForm::Population,
            repeats: DEFAULT_REPEATS,
            noise_sigma: DEFAULT_SIGMA_SENSOR,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aem {
    pub n_samples: usize,
    pub seed: u64,
    pub hl_factor: f64,
    pub prior: PriorSpec,
}

impl Default for Aem {
    fn default() -> Self {
        Aem {
            n_samples: DEFAULT_AEM_SAMPLES,
            seed: 1,
            hl_factor: 1.0,
            prior: PriorSpec::chamber_gaussian(),
        }
    }
}

fn default_mcmc() -> McmcSettings {
    McmcSettings {
        n_states: DEFAULT_N_STATES,
        burn_in: DEFAULT_BURN_IN,
        walk: DEFAULT_WALK,
        seed: 1,
    }
}

fn default_prior() -> PriorSpec {
    PriorSpec::chamber_uniform()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: Mode,
    /// Sensor manifest, relative to the config file. Surface and mid-wood sensors if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensors: Option<PathBuf>,
    #[serde(default)]
    pub parameters: Parameters,
    #[serde(default)]
    pub materials: Materials,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub scales: Scales,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub solver1d: Solver1d,
    #[serde(default)]
    pub solver2d: Solver2d,
    #[serde(default)]
    pub measurement: Measurement,
    #[serde(default = "default_prior")]
    pub prior: PriorSpec,
    #[serde(default = "default_mcmc")]
    pub mcmc: McmcSettings,
    #[serde(default)]
    pub aem: Aem,
}

/// Validated configuration with the derived solver objects.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub raw: RunConfig,
    pub setup: PhysicalSetup,
    pub sensors: Vec<Sensor>,
    pub mesh1d: Mesh1D,
    pub controls: SolverControls,
    pub mesh_spec: MeshSpec,
    pub df: DfOptions,
    pub times_s: Vec<f64>,
}

pub fn read_sensors(path: &Path) -> CliResult<Vec<Sensor>> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(read_manifest(file)?)
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg =
            Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(s) = &cfg.sensors {
            if s.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.sensors = Some(base.join(s));
            }
        }
        Ok(cfg)
    }

    pub fn resolve(self, strict: bool) -> CliResult<Resolved> {
        let setup = PhysicalSetup {
            wood: self.materials.wood.build()?,
            insulator: self.materials.insulator.build()?,
            aluminum: self.materials.aluminum.build()?,
            geometry: Geometry {
                l0x: self.geometry.l0x,
                l0y: self.geometry.l0y,
                l0z: self.geometry.l0z,
                layer_boundaries: self.geometry.layer_boundaries.clone(),
                aluminum_thickness: self.geometry.aluminum_thickness,
            },
            scales: ReferenceScales::new(
                self.scales.temperature,
                self.scales.time,
                self.scales.length,
            )?,
            schedule: BoundarySchedule::new(self.schedule.points.clone())?,
            t_ini: self.schedule.t_ini,
        };
        setup.validate()?;
        let sensors = match &self.sensors {
            Some(path) => read_sensors(path)?,
            None => chamber_sensors(),
        };
        for s in &sensors {
            if !(0.0..=setup.geometry.l0x).contains(&s.x) {
                return Err(CliError::Config(format!(
                    "sensor {} at x = {} m is outside the sample",
                    s.id, s.x
                )));
            }
        }
        let chi_interface = setup.geometry.interface_position() / setup.scales.length;
        let mesh1d = Mesh1D::uniform(self.solver1d.nodes, chi_interface)?;
        let controls = SolverControls {
            abs_tol: self.solver1d.abs_tol,
            rel_tol: self.solver1d.rel_tol,
            max_step: self.solver1d.max_step,
        };
        controls.validate()?;
        let mesh_spec = MeshSpec {
            interior: self.solver2d.interior,
            tape_cells: self.solver2d.tape_cells,
            grading: self.solver2d.grading,
        };
        let df = DfOptions {
            dt: self.solver2d.dt,
            horizon: setup.scales.time,
            save_every: self.solver2d.save_every,
            strict: strict || self.solver2d.strict,
        };
        df.n_steps()?;
        let m = &self.measurement;
        if !(m.step_s > 0.0 && m.step_s <= setup.scales.time) {
            return Err(CliError::Config(format!(
                "measurement.step_s = {} is out of range",
                m.step_s
            )));
        }
        let times_s = if m.step_s == 60.0 {
            minute_grid(setup.scales.time)
        } else {
            let n = (setup.scales.time / m.step_s).floor() as usize;
            (0..=n).map(|k| k as f64 * m.step_s).collect()
        };
        self.prior.validate()?;
        self.mcmc.validate()?;
        self.aem_settings(None).validate()?;
        Ok(Resolved {
            raw: self,
            setup,
            sensors,
            mesh1d,
            controls,
            mesh_spec,
            df,
            times_s,
        })
    }

    pub fn aem_settings(&self, seed: Option<u64>) -> AemSettings {
        AemSettings {
            n_samples: self.aem.n_samples,
            seed: seed.unwrap_or(self.aem.seed),
            hl_factor: self.aem.hl_factor,
            prior: self.aem.prior,
        }
    }
}

impl Resolved {
    pub fn mesh2d(&self) -> CliResult<Mesh2D> {
        Ok(Mesh2D::build(&self.setup.geometry, &self.mesh_spec)?)
    }

    pub fn sensor_ids(&self) -> Vec<String> {
        self.sensors.iter().map(|s| s.id.clone()).collect()
    }

    pub fn sensors_x(&self) -> Vec<f64> {
        self.sensors.iter().map(|s| s.x).collect()
    }

    pub fn dirichlet(&self) -> bool {
        self.raw.mode == Mode::DirichletTop
    }

    /// The complete model has no prescribed-temperature variant.
    pub fn require_robin(&self, what: &str) -> CliResult<()> {
        if self.dirichlet() {
            return Err(CliError::Config(format!("{what} needs mode = \"robin\"")));
        }
        Ok(())
    }
}
