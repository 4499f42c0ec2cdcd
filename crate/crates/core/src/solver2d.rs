//! Complete (x, y) model: wood fiber over insulator, aluminum tape along
//! both lateral faces over the full height, Robin exchange on every outer
//! face.
//!
//! Cell-centred finite volumes on a graded tensor mesh, harmonic face
//! conductances, DuFort-Frankel time stepping with properties frozen at the
//! current level. The thin, highly conductive edge columns are advanced by
//! backward Euler inside the same step (see [`DuFortFrankel`]). The
//! three-level scheme is started by one backward Euler step; a fully
//! implicit solver is kept as a reference.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::BandedMatrix;
use crate::model::{BoundarySchedule, Geometry, MaterialLayer, PhysicalSetup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Material {
    Wood,
    Insulator,
    Aluminum,
}

impl Material {
    pub fn index(self) -> usize {
        match self {
            Material::Wood => 1,
            Material::Insulator => 2,
            Material::Aluminum => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshSpec {
    /// Target cell size in the bulk (m).
    pub interior: f64,
    /// Cells across the aluminum tape.
    pub tape_cells: usize,
    /// Growth ratio of the cells leaving the tape.
    pub grading: f64,
}

impl Default for MeshSpec {
    fn default() -> Self {
        MeshSpec {
            interior: 2e-3,
            tape_cells: 3,
            grading: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh2D {
    pub x_faces: Vec<f64>,
    pub y_faces: Vec<f64>,
    /// Cell centres along x (m).
    pub x_nodes: Vec<f64>,
    /// Cell centres along y (m).
    pub y_nodes: Vec<f64>,
    /// Row-major `[i * ny + j]`.
    pub material_map: Vec<Material>,
    /// First insulator row.
    pub interface_row: usize,
}

fn centres(faces: &[f64]) -> Vec<f64> {
    faces.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

fn uniform_faces(start: f64, end: f64, target: f64) -> Vec<f64> {
    let n = ((end - start) / target - 1e-9).ceil().max(1.0) as usize;
    (0..=n)
        .map(|k| start + (end - start) * k as f64 / n as f64)
        .collect()
}

impl Mesh2D {
    pub fn build(geometry: &Geometry, spec: &MeshSpec) -> Result<Self> {
        geometry.validate()?;
        if !(spec.interior > 0.0) || !(spec.grading >= 1.0) {
            return Err(Error::Config(format!("invalid mesh spec {spec:?}")));
        }
        let b = &geometry.layer_boundaries;
        let mut x_faces = uniform_faces(b[0], b[1], spec.interior);
        let interface_row = x_faces.len() - 1;
        let ins = uniform_faces(b[1], b[2], spec.interior);
        x_faces.extend_from_slice(&ins[1..]);

        let w = geometry.l0y;
        let t = geometry.aluminum_thickness;
        let y_faces = if t > 0.0 {
            if spec.tape_cells < 3 {
                return Err(Error::Config("the tape needs at least 3 cells".into()));
            }
            let mut half = vec![0.0];
            let tc = t / spec.tape_cells as f64;
            for k in 1..=spec.tape_cells {
                half.push(k as f64 * tc);
            }
            let mut size = tc;
            loop {
                size *= spec.grading;
                if size >= spec.interior || spec.grading == 1.0 {
                    break;
                }
                let last = *half.last().unwrap();
                if last + size > 0.5 * w {
                    break;
                }
                half.push(last + size);
            }
            let edge = *half.last().unwrap();
            if edge >= 0.5 * w {
                return Err(Error::Config(
                    "tape refinement does not fit in the width".into(),
                ));
            }
            let centre = uniform_faces(edge, w - edge, spec.interior);
            let mut faces = half.clone();
            faces.extend_from_slice(&centre[1..centre.len() - 1]);
            faces.extend(half.iter().rev().map(|v| w - v));
            faces
        } else {
            uniform_faces(0.0, w, spec.interior)
        };

        let x_nodes = centres(&x_faces);
        let y_nodes = centres(&y_faces);
        let mut material_map = Vec::with_capacity(x_nodes.len() * y_nodes.len());
        for &x in &x_nodes {
            for &y in &y_nodes {
                let m = if y < t || y > w - t {
                    Material::Aluminum
                } else if x < b[1] {
                    Material::Wood
                } else {
                    Material::Insulator
                };
                material_map.push(m);
            }
        }
        Ok(Mesh2D {
            x_faces,
            y_faces,
            x_nodes,
            y_nodes,
            material_map,
            interface_row,
        })
    }

    pub fn nx(&self) -> usize {
        self.x_nodes.len()
    }

    pub fn ny(&self) -> usize {
        self.y_nodes.len()
    }

    pub fn len(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn dx(&self, i: usize) -> f64 {
        self.x_faces[i + 1] - self.x_faces[i]
    }

    #[inline]
    pub fn dy(&self, j: usize) -> f64 {
        self.y_faces[j + 1] - self.y_faces[j]
    }

    #[inline]
    pub fn material(&self, i: usize, j: usize) -> Material {
        self.material_map[i * self.ny() + j]
    }
}

/// Inputs of a complete-model run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteProblem {
    pub wood: MaterialLayer,
    pub insulator: MaterialLayer,
    pub aluminum: MaterialLayer,
    pub geometry: Geometry,
    pub schedule: BoundarySchedule,
    /// Reference temperature of the property laws (°C).
    pub t_ref: f64,
    pub h_t: f64,
    pub h_l: f64,
    pub t_ini: f64,
}

impl CompleteProblem {
    pub fn from_setup(setup: &PhysicalSetup, h_t: f64, h_l: f64) -> Self {
        CompleteProblem {
            wood: setup.wood,
            insulator: setup.insulator,
            aluminum: setup.aluminum,
            geometry: setup.geometry.clone(),
            schedule: setup.schedule.clone(),
            t_ref: setup.scales.temperature,
            h_t,
            h_l,
            t_ini: setup.t_ini,
        }
    }

    pub fn layer(&self, m: Material) -> &MaterialLayer {
        match m {
            Material::Wood => &self.wood,
            Material::Insulator => &self.insulator,
            Material::Aluminum => &self.aluminum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h_t >= 0.0) || !(self.h_l >= 0.0) {
            return Err(Error::Config(format!(
                "surface coefficients must be >= 0, got h_t = {}, h_l = {}",
                self.h_t, self.h_l
            )));
        }
        if !self.t_ini.is_finite() {
            return Err(Error::Config("initial temperature must be finite".into()));
        }
        self.geometry.validate()
    }
}

fn robin_conductance(area: f64, half: f64, k: f64, h: f64) -> f64 {
    if h <= 0.0 {
        0.0
    } else if h.is_infinite() {
        area * k / half
    } else {
        area / (half / k + 1.0 / h)
    }
}

/// Per-level coefficients: capacities `c·V` and face conductances.
#[derive(Debug, Clone, Default)]
struct Coefficients {
    k: Vec<f64>,
    cap: Vec<f64>,
    /// Face between rows i and i+1, `[i * ny + j]`.
    gx: Vec<f64>,
    /// Face between columns j and j+1, `[i * (ny - 1) + j]`.
    gy: Vec<f64>,
    top: Vec<f64>,
    bottom: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
}

impl Coefficients {
    fn evaluate(
        &mut self,
        problem: &CompleteProblem,
        mesh: &Mesh2D,
        temps: &[f64],
        step: usize,
    ) -> Result<()> {
        let (nx, ny) = (mesh.nx(), mesh.ny());
        let n = nx * ny;
        self.k.resize(n, 0.0);
        self.cap.resize(n, 0.0);
        for i in 0..nx {
            for j in 0..ny {
                let c = i * ny + j;
                let layer = problem.layer(mesh.material_map[c]);
                let t = temps[c];
                let k = layer.conductivity(t, problem.t_ref);
                let cv = layer.capacity(t, problem.t_ref);
                if !(k > 0.0 && cv > 0.0) {
                    return Err(Error::Evaluation {
                        node: c,
                        message: format!(
                            "properties k = {k:.4e}, c = {cv:.4e} invalid at T = {t:.3} °C (step {step})"
                        ),
                    });
                }
                self.k[c] = k;
                self.cap[c] = cv * mesh.dx(i) * mesh.dy(j);
            }
        }
        self.gx.resize((nx - 1) * ny, 0.0);
        for i in 0..nx - 1 {
            let (hp, hn) = (0.5 * mesh.dx(i), 0.5 * mesh.dx(i + 1));
            for j in 0..ny {
                let (p, q) = (i * ny + j, (i + 1) * ny + j);
                self.gx[p] = mesh.dy(j) / (hp / self.k[p] + hn / self.k[q]);
            }
        }
        self.gy.resize(nx * (ny - 1), 0.0);
        for i in 0..nx {
            let a = mesh.dx(i);
            for j in 0..ny - 1 {
                let (p, q) = (i * ny + j, i * ny + j + 1);
                self.gy[i * (ny - 1) + j] =
                    a / (0.5 * mesh.dy(j) / self.k[p] + 0.5 * mesh.dy(j + 1) / self.k[q]);
            }
        }
        self.top.resize(ny, 0.0);
        self.bottom.resize(ny, 0.0);
        for j in 0..ny {
            self.top[j] = robin_conductance(mesh.dy(j), 0.5 * mesh.dx(0), self.k[j], problem.h_t);
            let last = (nx - 1) * ny + j;
            self.bottom[j] =
                robin_conductance(mesh.dy(j), 0.5 * mesh.dx(nx - 1), self.k[last], problem.h_t);
        }
        self.left.resize(nx, 0.0);
        self.right.resize(nx, 0.0);
        for i in 0..nx {
            self.left[i] =
                robin_conductance(mesh.dx(i), 0.5 * mesh.dy(0), self.k[i * ny], problem.h_l);
            self.right[i] = robin_conductance(
                mesh.dx(i),
                0.5 * mesh.dy(ny - 1),
                self.k[i * ny + ny - 1],
                problem.h_l,
            );
        }
        Ok(())
    }

    /// Sum of conductances of cell (i, j) and the conductance-weighted
    /// neighbour temperatures (ambient included).
    #[inline]
    fn gather(
        &self,
        mesh_ny: usize,
        nx: usize,
        i: usize,
        j: usize,
        temps: &[f64],
        t_inf: f64,
    ) -> (f64, f64) {
        let ny = mesh_ny;
        let c = i * ny + j;
        let mut sg = 0.0;
        let mut sf = 0.0;
        if i > 0 {
            let g = self.gx[c - ny];
            sg += g;
            sf += g * temps[c - ny];
        } else {
            sg += self.top[j];
            sf += self.top[j] * t_inf;
        }
        if i + 1 < nx {
            let g = self.gx[c];
            sg += g;
            sf += g * temps[c + ny];
        } else {
            sg += self.bottom[j];
            sf += self.bottom[j] * t_inf;
        }
        if j > 0 {
            let g = self.gy[i * (ny - 1) + j - 1];
            sg += g;
            sf += g * temps[c - 1];
        } else {
            sg += self.left[i];
            sf += self.left[i] * t_inf;
        }
        if j + 1 < ny {
            let g = self.gy[i * (ny - 1) + j];
            sg += g;
            sf += g * temps[c + 1];
        } else {
            sg += self.right[i];
            sf += self.right[i] * t_inf;
        }
        (sg, sf)
    }
}

/// One backward Euler step with coefficients frozen at `temps`.
/// Solved for the increment so an equilibrium state stays exact.
fn implicit_step(
    problem: &CompleteProblem,
    mesh: &Mesh2D,
    coef: &Coefficients,
    temps: &[f64],
    dt: f64,
    t_new: f64,
) -> Result<Vec<f64>> {
    let (nx, ny) = (mesh.nx(), mesh.ny());
    let n = nx * ny;
    let t_inf = problem.schedule.temperature(t_new);
    let mut a = BandedMatrix::zeros(n, ny, ny);
    let mut rhs = vec![0.0; n];
    for i in 0..nx {
        for j in 0..ny {
            let c = i * ny + j;
            let mut diag = coef.cap[c] / dt;
            let mut r = 0.0;
            let mut couple = |other: usize, g: f64| {
                diag += g;
                a.set(c, other, -g);
                r += g * (temps[other] - temps[c]);
            };
            if i > 0 {
                couple(c - ny, coef.gx[c - ny]);
            }
            if i + 1 < nx {
                couple(c + ny, coef.gx[c]);
            }
            if j > 0 {
                couple(c - 1, coef.gy[i * (ny - 1) + j - 1]);
            }
            if j + 1 < ny {
                couple(c + 1, coef.gy[i * (ny - 1) + j]);
            }
            let mut gb = 0.0;
            if i == 0 {
                gb += coef.top[j];
            }
            if i + 1 == nx {
                gb += coef.bottom[j];
            }
            if j == 0 {
                gb += coef.left[i];
            }
            if j + 1 == ny {
                gb += coef.right[i];
            }
            diag += gb;
            rhs[c] = r + gb * (t_inf - temps[c]);
            a.set(c, c, diag);
        }
    }
    let lu = a.factorize()?;
    lu.solve_in_place(&mut rhs);
    Ok(rhs.iter().zip(temps).map(|(d, t)| t + d).collect())
}

/// DuFort-Frankel consistency measure `max α Δt² (2/Δx² + 2/Δy²) / t_c` over
/// the bulk wood and insulator at the interior resolution, `t_c` being the
/// longer of the run horizon and the chamber program.
pub fn consistency_measure(
    problem: &CompleteProblem,
    spec: &MeshSpec,
    dt: f64,
    horizon: f64,
) -> f64 {
    let program = problem.schedule.breakpoints().last().map_or(0.0, |b| b.0);
    let horizon = horizon.max(program);
    let (lo, hi) = (
        problem.schedule.curve().min_value().min(problem.t_ini),
        problem.schedule.curve().max_value().max(problem.t_ini),
    );
    let mut worst: f64 = 0.0;
    for layer in [&problem.wood, &problem.insulator] {
        for t in [lo, hi] {
            let alpha = layer.conductivity(t, problem.t_ref) / layer.capacity(t, problem.t_ref);
            let term = alpha * dt * dt * 4.0 / (spec.interior * spec.interior) / horizon;
            worst = worst.max(term);
        }
    }
    worst
}

pub const CONSISTENCY_LIMIT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DfOptions {
    pub dt: f64,
    pub horizon: f64,
    /// Store a snapshot every `save_every` steps.
    pub save_every: usize,
    /// Escalate a consistency warning to an error.
    pub strict: bool,
}

impl DfOptions {
    pub fn chamber(setup: &PhysicalSetup) -> Self {
        DfOptions {
            dt: 10.0,
            horizon: setup.scales.time,
            save_every: 6,
            strict: false,
        }
    }

    pub fn n_steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !(self.horizon > 0.0) || self.save_every == 0 {
            return Err(Error::Config(format!("invalid time stepping {self:?}")));
        }
        let n = self.horizon / self.dt;
        let r = n.round();
        if (n - r).abs() > 1e-6 * n.max(1.0) {
            return Err(Error::Config(format!(
                "horizon {} s is not a multiple of dt = {} s",
                self.horizon, self.dt
            )));
        }
        Ok(r as usize)
    }
}

/// Three-level stepper: DuFort-Frankel in the bulk, backward Euler in the
/// edge columns (tape and graded cells) where `Δt² ΣG / C` would exceed the
/// consistency limit. There the three-level update degenerates into an
/// undamped wave equation and no longer obeys the maximum principle.
pub struct DuFortFrankel<'a> {
    problem: &'a CompleteProblem,
    mesh: &'a Mesh2D,
    dt: f64,
    time_scale: f64,
    prev: Vec<f64>,
    cur: Vec<f64>,
    next: Vec<f64>,
    steps: usize,
    coef: Coefficients,
    // explicit columns are lo..hi, None until the first step
    split: Option<(usize, usize)>,
}

impl<'a> DuFortFrankel<'a> {
    pub fn new(problem: &'a CompleteProblem, mesh: &'a Mesh2D, opts: &DfOptions) -> Result<Self> {
        problem.validate()?;
        let dt = opts.dt;
        if !(dt > 0.0) || !(opts.horizon > 0.0) {
            return Err(Error::Config(format!("invalid time stepping {opts:?}")));
        }
        let program = problem.schedule.breakpoints().last().map_or(0.0, |b| b.0);
        let init = vec![problem.t_ini; mesh.len()];
        Ok(DuFortFrankel {
            problem,
            mesh,
            dt,
            time_scale: opts.horizon.max(program),
            prev: init.clone(),
            cur: init,
            next: vec![0.0; mesh.len()],
            steps: 0,
            coef: Coefficients::default(),
            split: None,
        })
    }

    /// Starts from an arbitrary cell field (°C, `[i * ny + j]`) instead of
    /// the uniform `t_ini`.
    pub fn with_initial(
        problem: &'a CompleteProblem,
        mesh: &'a Mesh2D,
        opts: &DfOptions,
        initial: &[f64],
    ) -> Result<Self> {
        if initial.len() != mesh.len() || initial.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "initial field needs {} finite values, got {}",
                mesh.len(),
                initial.len()
            )));
        }
        let mut df = Self::new(problem, mesh, opts)?;
        df.prev.copy_from_slice(initial);
        df.cur.copy_from_slice(initial);
        Ok(df)
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.cur
    }

    /// Columns `lo..hi` advanced by the explicit update (known after the
    /// first step).
    pub fn explicit_columns(&self) -> Option<(usize, usize)> {
        self.split
    }

    fn partition(&self) -> (usize, usize) {
        let (nx, ny) = (self.mesh.nx(), self.mesh.ny());
        let limit = CONSISTENCY_LIMIT * self.time_scale;
        let stiff: Vec<bool> = (0..ny)
            .map(|j| {
                (0..nx).any(|i| {
                    let (sg, _) = self.coef.gather(ny, nx, i, j, &self.cur, 0.0);
                    self.dt * self.dt * sg / self.coef.cap[i * ny + j] > limit
                })
            })
            .collect();
        let half = ny / 2;
        let lo = (0..half).rev().find(|&j| stiff[j]).map_or(0, |j| j + 1);
        let hi = (half..ny).find(|&j| stiff[j]).unwrap_or(ny);
        if lo >= hi {
            (0, 0)
        } else {
            (lo, hi)
        }
    }

    pub fn step(&mut self) -> Result<()> {
        let (nx, ny) = (self.mesh.nx(), self.mesh.ny());
        self.coef
            .evaluate(self.problem, self.mesh, &self.cur, self.steps)?;
        let (lo, hi) = match self.split {
            Some(s) => s,
            None => {
                let s = self.partition();
                log::debug!("explicit columns {}..{} of {ny}", s.0, s.1);
                self.split = Some(s);
                s
            }
        };
        let t_new = self.time() + self.dt;
        let as_divergence = |step: usize| {
            move |e: Error| match e {
                Error::Solver { message, .. } => Error::Divergence { step, message },
                other => other,
            }
        };
        if self.steps == 0 || lo == hi {
            let t1 = implicit_step(
                self.problem,
                self.mesh,
                &self.coef,
                &self.cur,
                self.dt,
                t_new,
            )
            .map_err(as_divergence(self.steps + 1))?;
            self.next.copy_from_slice(&t1);
        } else {
            let t_inf = self.problem.schedule.temperature(self.time());
            let two_dt = 2.0 * self.dt;
            for i in 0..nx {
                for j in lo..hi {
                    let c = i * ny + j;
                    let (sg, sf) = self.coef.gather(ny, nx, i, j, &self.cur, t_inf);
                    let m = self.coef.cap[c] / two_dt;
                    self.next[c] = ((m - 0.5 * sg) * self.prev[c] + sf) / (m + 0.5 * sg);
                }
            }
            let t_inf_new = self.problem.schedule.temperature(t_new);
            for cols in [0..lo, hi..ny] {
                self.implicit_block(cols, t_inf_new)
                    .map_err(as_divergence(self.steps + 1))?;
            }
        }
        if let Some(bad) = self.next.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: self.steps + 1,
                message: format!("non-finite temperature in cell {bad}"),
            });
        }
        std::mem::swap(&mut self.prev, &mut self.cur);
        std::mem::swap(&mut self.cur, &mut self.next);
        self.steps += 1;
        Ok(())
    }

    /// Backward Euler over columns `cols`, explicit neighbours already at
    /// the new level. Solved for the increment.
    fn implicit_block(&mut self, cols: std::ops::Range<usize>, t_inf: f64) -> Result<()> {
        let w = cols.len();
        if w == 0 {
            return Ok(());
        }
        let (nx, ny) = (self.mesh.nx(), self.mesh.ny());
        let coef = &self.coef;
        let (cur, next) = (&self.cur, &mut self.next);
        let inside = |j: usize| cols.contains(&j);
        let mut a = BandedMatrix::zeros(nx * w, w, w);
        let mut rhs = vec![0.0; nx * w];
        for i in 0..nx {
            for j in cols.clone() {
                let c = i * ny + j;
                let l = i * w + (j - cols.start);
                let mut diag = coef.cap[c] / self.dt;
                let mut r = 0.0;
                let mut couple = |other: usize, other_l: Option<usize>, g: f64| {
                    diag += g;
                    match other_l {
                        Some(ol) => {
                            a.set(l, ol, -g);
                            r += g * (cur[other] - cur[c]);
                        }
                        None => r += g * (next[other] - cur[c]),
                    }
                };
                if i > 0 {
                    couple(c - ny, Some(l - w), coef.gx[c - ny]);
                }
                if i + 1 < nx {
                    couple(c + ny, Some(l + w), coef.gx[c]);
                }
                if j > 0 {
                    let ol = inside(j - 1).then(|| l - 1);
                    couple(c - 1, ol, coef.gy[i * (ny - 1) + j - 1]);
                }
                if j + 1 < ny {
                    let ol = inside(j + 1).then(|| l + 1);
                    couple(c + 1, ol, coef.gy[i * (ny - 1) + j]);
                }
                let mut gb = 0.0;
                if i == 0 {
                    gb += coef.top[j];
                }
                if i + 1 == nx {
                    gb += coef.bottom[j];
                }
                if j == 0 {
                    gb += coef.left[i];
                }
                if j + 1 == ny {
                    gb += coef.right[i];
                }
                a.set(l, l, diag + gb);
                rhs[l] = r + gb * (t_inf - cur[c]);
            }
        }
        let lu = a.factorize()?;
        lu.solve_in_place(&mut rhs);
        for i in 0..nx {
            for j in cols.clone() {
                let c = i * ny + j;
                next[c] = cur[c] + rhs[i * w + (j - cols.start)];
            }
        }
        Ok(())
    }
}

/// Snapshots of a complete-model run in °C.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field2D {
    pub mesh: Mesh2D,
    pub problem: CompleteProblem,
    /// Snapshot times (s), uniform.
    pub times: Vec<f64>,
    /// `values[k][i * ny + j]`.
    pub values: Vec<Vec<f64>>,
}

impl Field2D {
    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[k][i * self.mesh.ny() + j]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_s", "x_m", "y_m", "T_C"])?;
        for (k, t) in self.times.iter().enumerate() {
            for (i, x) in self.mesh.x_nodes.iter().enumerate() {
                for (j, y) in self.mesh.y_nodes.iter().enumerate() {
                    w.write_record([
                        t.to_string(),
                        x.to_string(),
                        y.to_string(),
                        self.value(i, j, k).to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn sample(&self, x: f64, y: f64, k: usize) -> Result<f64> {
        sample_temperature(
            &self.problem,
            &self.mesh,
            &self.values[k],
            self.times[k],
            x,
            y,
        )
    }
}

fn check_guard(problem: &CompleteProblem, spec: Option<&MeshSpec>, opts: &DfOptions) -> Result<()> {
    let spec = spec.copied().unwrap_or_default();
    let m = consistency_measure(problem, &spec, opts.dt, opts.horizon);
    if m > CONSISTENCY_LIMIT {
        let msg = format!(
            "DuFort-Frankel consistency measure {m:.3e} exceeds {CONSISTENCY_LIMIT:.0e} at dt = {} s",
            opts.dt
        );
        if opts.strict {
            return Err(Error::Config(msg));
        }
        log::warn!("{msg}");
    }
    Ok(())
}

/// Runs the DuFort-Frankel scheme over `[0, horizon]`.
pub fn solve_complete(
    problem: &CompleteProblem,
    mesh: &Mesh2D,
    opts: &DfOptions,
) -> Result<Field2D> {
    let n_steps = opts.n_steps()?;
    check_guard(problem, None, opts)?;
    let mut df = DuFortFrankel::new(problem, mesh, opts)?;
    let mut times = vec![0.0];
    let mut values = vec![df.temperatures().to_vec()];
    for _ in 0..n_steps {
        df.step()?;
        if df.steps() % opts.save_every == 0 || df.steps() == n_steps {
            times.push(df.time());
            values.push(df.temperatures().to_vec());
        }
    }
    Ok(Field2D {
        mesh: mesh.clone(),
        problem: problem.clone(),
        times,
        values,
    })
}

/// Backward Euler with coefficients lagged one step.
pub fn solve_complete_implicit(
    problem: &CompleteProblem,
    mesh: &Mesh2D,
    opts: &DfOptions,
) -> Result<Field2D> {
    problem.validate()?;
    let n_steps = opts.n_steps()?;
    let mut coef = Coefficients::default();
    let mut temps = vec![problem.t_ini; mesh.len()];
    let mut times = vec![0.0];
    let mut values = vec![temps.clone()];
    for s in 0..n_steps {
        coef.evaluate(problem, mesh, &temps, s)?;
        temps = implicit_step(
            problem,
            mesh,
            &coef,
            &temps,
            opts.dt,
            (s + 1) as f64 * opts.dt,
        )?;
        if (s + 1) % opts.save_every == 0 || s + 1 == n_steps {
            times.push((s + 1) as f64 * opts.dt);
            values.push(temps.clone());
        }
    }
    Ok(Field2D {
        mesh: mesh.clone(),
        problem: problem.clone(),
        times,
        values,
    })
}

/// Temperature at (x, y): bilinear between cell centres, surface values at
/// x = 0 and x = L0x reconstructed from the Robin relation, nearest centre
/// beyond the outermost columns.
pub fn sample_temperature(
    problem: &CompleteProblem,
    mesh: &Mesh2D,
    temps: &[f64],
    t: f64,
    x: f64,
    y: f64,
) -> Result<f64> {
    let lx = *mesh.x_faces.last().unwrap();
    let ly = *mesh.y_faces.last().unwrap();
    let tol = 1e-12;
    if !(-tol..=lx + tol).contains(&x) || !(-tol..=ly + tol).contains(&y) {
        return Err(Error::Domain(format!(
            "point ({x}, {y}) is outside the sample"
        )));
    }
    let ny = mesh.ny();
    let nx = mesh.nx();
    let t_inf = problem.schedule.temperature(t);
    let yc = &mesh.y_nodes;
    let (j0, j1, wy) = if y <= yc[0] {
        (0, 0, 0.0)
    } else if y >= yc[ny - 1] {
        (ny - 1, ny - 1, 0.0)
    } else {
        let k = yc.partition_point(|&v| v <= y).clamp(1, ny - 1);
        (k - 1, k, (y - yc[k - 1]) / (yc[k] - yc[k - 1]))
    };
    let column = |j: usize| -> f64 {
        let xc = &mesh.x_nodes;
        let surface = |i: usize| {
            let layer = problem.layer(mesh.material(i, j));
            let tp = temps[i * ny + j];
            let k = layer.conductivity(tp, problem.t_ref);
            let d = 0.5 * mesh.dx(i);
            let h = problem.h_t;
            if h.is_infinite() {
                t_inf
            } else {
                (k / d * tp + h * t_inf) / (k / d + h)
            }
        };
        if x <= xc[0] {
            let ts = surface(0);
            let w = x / xc[0];
            ts + w * (temps[j] - ts)
        } else if x >= xc[nx - 1] {
            let ts = surface(nx - 1);
            let w = (lx - x) / (lx - xc[nx - 1]);
            ts + w * (temps[(nx - 1) * ny + j] - ts)
        } else {
            let k = xc.partition_point(|&v| v <= x).clamp(1, nx - 1);
            let w = (x - xc[k - 1]) / (xc[k] - xc[k - 1]);
            let a = temps[(k - 1) * ny + j];
            let b = temps[k * ny + j];
            a + w * (b - a)
        }
    };
    let a = column(j0);
    Ok(if j1 == j0 {
        a
    } else {
        a + wy * (column(j1) - a)
    })
}

/// Sensor series of a DuFort-Frankel run sampled at `sample_times` (s) by
/// linear interpolation between steps. Returns `[sensor][time]` in °C.
pub fn solve_complete_at_sensors(
    problem: &CompleteProblem,
    mesh: &Mesh2D,
    opts: &DfOptions,
    sensors: &[(f64, f64)],
    sample_times: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let n_steps = opts.n_steps()?;
    check_guard(problem, None, opts)?;
    if sample_times.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::Domain("sample times must be ascending".into()));
    }
    if sample_times
        .iter()
        .any(|&t| t < 0.0 || t > opts.horizon + 1e-9)
    {
        return Err(Error::Domain(
            "sample times must lie within the horizon".into(),
        ));
    }
    let mut out = vec![Vec::with_capacity(sample_times.len()); sensors.len()];
    let mut df = DuFortFrankel::new(problem, mesh, opts)?;
    let sample_now = |df: &DuFortFrankel| -> Result<Vec<f64>> {
        sensors
            .iter()
            .map(|&(x, y)| sample_temperature(problem, mesh, df.temperatures(), df.time(), x, y))
            .collect()
    };
    let mut before = sample_now(&df)?;
    let mut t_before = 0.0;
    let mut next = 0;
    while next < sample_times.len() && sample_times[next] <= 0.0 {
        for (s, v) in out.iter_mut().zip(&before) {
            s.push(*v);
        }
        next += 1;
    }
    while next < sample_times.len() && df.steps() < n_steps {
        df.step()?;
        let t_after = df.time();
        let after = sample_now(&df)?;
        while next < sample_times.len() && sample_times[next] <= t_after + 1e-9 {
            let w = ((sample_times[next] - t_before) / (t_after - t_before)).clamp(0.0, 1.0);
            for ((s, a), b) in out.iter_mut().zip(&before).zip(&after) {
                s.push(a + w * (b - a));
            }
            next += 1;
        }
        before = after;
        t_before = t_after;
    }
    if next < sample_times.len() {
        return Err(Error::Domain(
            "sample times beyond the computed horizon".into(),
        ));
    }
    Ok(out)
}

/// Face fluxes (W/m², positive along +x / +y) averaged to cell centres.
fn centre_fluxes(
    problem: &CompleteProblem,
    mesh: &Mesh2D,
    temps: &[f64],
    t: f64,
    coef: &Coefficients,
) -> (Vec<f64>, Vec<f64>) {
    let (nx, ny) = (mesh.nx(), mesh.ny());
    let t_inf = problem.schedule.temperature(t);
    let mut jx = vec![0.0; nx * ny];
    let mut jy = vec![0.0; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            let c = i * ny + j;
            let a = mesh.dy(j);
            let q_in = if i > 0 {
                coef.gx[c - ny] * (temps[c - ny] - temps[c]) / a
            } else {
                coef.top[j] * (t_inf - temps[c]) / a
            };
            let q_out = if i + 1 < nx {
                coef.gx[c] * (temps[c] - temps[c + ny]) / a
            } else {
                coef.bottom[j] * (temps[c] - t_inf) / a
            };
            jx[c] = 0.5 * (q_in + q_out);
            let b = mesh.dx(i);
            let r_in = if j > 0 {
                coef.gy[i * (ny - 1) + j - 1] * (temps[c - 1] - temps[c]) / b
            } else {
                coef.left[i] * (t_inf - temps[c]) / b
            };
            let r_out = if j + 1 < ny {
                coef.gy[i * (ny - 1) + j] * (temps[c] - temps[c + 1]) / b
            } else {
                coef.right[i] * (temps[c] - t_inf) / b
            };
            jy[c] = 0.5 * (r_in + r_out);
        }
    }
    (jx, jy)
}

/// Rectangular observation window (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Window {
    /// Sensor column: from the top face down to the inner sensor, over the
    /// central quarter of the width around the sensor line.
    pub fn sensor_column(geometry: &Geometry, x_inner: f64) -> Self {
        let (mid, half) = (0.5 * geometry.l0y, 0.125 * geometry.l0y);
        Window {
            x: (0.0, x_inner),
            y: (mid - half, mid + half),
        }
    }

    /// Whole wood fiber between the tapes.
    pub fn wood(geometry: &Geometry) -> Self {
        Window {
            x: (0.0, geometry.layer_boundaries[1]),
            y: (
                geometry.aluminum_thickness,
                geometry.l0y - geometry.aluminum_thickness,
            ),
        }
    }
}

/// Volume-weighted `(Σ|j_x|, Σ|j_y|)` over the cells of `window`.
fn flux_sums(
    problem: &CompleteProblem,
    mesh: &Mesh2D,
    temps: &[f64],
    t: f64,
    window: &Window,
) -> Result<(f64, f64)> {
    let mut coef = Coefficients::default();
    coef.evaluate(problem, mesh, temps, 0)?;
    let (jx, jy) = centre_fluxes(problem, mesh, temps, t, &coef);
    let ny = mesh.ny();
    let (mut sx, mut sy) = (0.0, 0.0);
    for (i, &x) in mesh.x_nodes.iter().enumerate() {
        if x < window.x.0 || x > window.x.1 {
            continue;
        }
        for (j, &y) in mesh.y_nodes.iter().enumerate() {
            if y < window.y.0 || y > window.y.1 {
                continue;
            }
            let v = mesh.dx(i) * mesh.dy(j);
            sx += jx[i * ny + j].abs() * v;
            sy += jy[i * ny + j].abs() * v;
        }
    }
    Ok((sx, sy))
}

/// `Σ|j_x| / (Σ|j_x| + Σ|j_y|)` over the cells of `window`, volume
/// weighted; 1 when no heat flows.
pub fn flux_ratio_snapshot(
    problem: &CompleteProblem,
    mesh: &Mesh2D,
    temps: &[f64],
    t: f64,
    window: &Window,
) -> Result<f64> {
    let (sx, sy) = flux_sums(problem, mesh, temps, t, window)?;
    Ok(if sx + sy == 0.0 { 1.0 } else { sx / (sx + sy) })
}

pub fn flux_ratio(field: &Field2D, window: &Window) -> Result<Vec<f64>> {
    field
        .times
        .iter()
        .zip(&field.values)
        .map(|(&t, v)| flux_ratio_snapshot(&field.problem, &field.mesh, v, t, window))
        .collect()
}

/// Share of the x-direction flux over the whole run: the window sums are
/// accumulated over all snapshots before taking the ratio, so quiet
/// periods weigh little.
pub fn flux_share(field: &Field2D, window: &Window) -> Result<f64> {
    let (mut sx, mut sy) = (0.0, 0.0);
    for (&t, v) in field.times.iter().zip(&field.values) {
        let (a, b) = flux_sums(&field.problem, &field.mesh, v, t, window)?;
        sx += a;
        sy += b;
    }
    Ok(if sx + sy == 0.0 { 1.0 } else { sx / (sx + sy) })
}

/// Mean conductive flux (W/m², positive towards +x) across the
/// wood/insulator interface.
pub fn interface_flux_snapshot(
    problem: &CompleteProblem,
    mesh: &Mesh2D,
    temps: &[f64],
) -> Result<f64> {
    let mut coef = Coefficients::default();
    coef.evaluate(problem, mesh, temps, 0)?;
    let ny = mesh.ny();
    let i = mesh.interface_row - 1;
    let mut q = 0.0;
    let mut len = 0.0;
    for j in 0..ny {
        let c = i * ny + j;
        q += coef.gx[c] * (temps[c] - temps[c + ny]);
        len += mesh.dy(j);
    }
    Ok(q / len)
}

pub fn interface_flux(field: &Field2D) -> Result<Vec<f64>> {
    field
        .values
        .iter()
        .map(|v| interface_flux_snapshot(&field.problem, &field.mesh, v))
        .collect()
}

/// Area-weighted mean aluminum temperature minus the chamber temperature.
pub fn aluminum_deviation_snapshot(
    mesh: &Mesh2D,
    schedule: &BoundarySchedule,
    temps: &[f64],
    t: f64,
) -> f64 {
    let ny = mesh.ny();
    let (mut s, mut a) = (0.0, 0.0);
    for i in 0..mesh.nx() {
        for j in 0..ny {
            if mesh.material(i, j) == Material::Aluminum {
                let area = mesh.dx(i) * mesh.dy(j);
                s += temps[i * ny + j] * area;
                a += area;
            }
        }
    }
    if a == 0.0 {
        return 0.0;
    }
    s / a - schedule.temperature(t)
}

pub fn aluminum_deviation(field: &Field2D, schedule: &BoundarySchedule) -> Vec<f64> {
    field
        .times
        .iter()
        .zip(&field.values)
        .map(|(&t, v)| aluminum_deviation_snapshot(&field.mesh, schedule, v, t))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub times: Vec<f64>,
    pub flux_ratio: Vec<f64>,
    pub interface_flux: Vec<f64>,
    pub aluminum_deviation: Vec<f64>,
}

impl Diagnostics {
    pub fn from_field(field: &Field2D, window: &Window) -> Result<Self> {
        Ok(Diagnostics {
            times: field.times.clone(),
            flux_ratio: flux_ratio(field, window)?,
            interface_flux: interface_flux(field)?,
            aluminum_deviation: aluminum_deviation(field, &field.problem.schedule),
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_s", "flux_ratio", "interface_flux_Wm2", "alu_deviation_C"])?;
        for k in 0..self.times.len() {
            w.write_record([
                self.times[k].to_string(),
                self.flux_ratio[k].to_string(),
                self.interface_flux[k].to_string(),
                self.aluminum_deviation[k].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
