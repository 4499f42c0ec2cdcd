//! Lumped two-layer model solved by the method of lines.
//!
//! Conservative finite volumes on a uniform node-centred mesh: half cells at
//! the two faces, a shared node on the wood/insulator interface, face
//! conductivities evaluated at the mean of the two adjacent nodes. In
//! flux units of the wood conductivity intercept every node obeys
//! `M(u) du/dτ = F_{i+1/2} - F_{i-1/2} + S`, with the capacity `M` and the
//! lateral source `S` accumulated from the adjacent half cells.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DimensionlessConfig, ParameterPoint};
use crate::ode::{self, OdeOptions, OdeStats, OdeSystem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh1D {
    pub n_nodes: usize,
    pub chi: Vec<f64>,
    pub interface_index: usize,
}

impl Mesh1D {
    /// Uniform mesh with a node on `chi_interface`.
    pub fn uniform(n_nodes: usize, chi_interface: f64) -> Result<Self> {
        if n_nodes < 3 {
            return Err(Error::Config(format!(
                "need at least 3 nodes, got {n_nodes}"
            )));
        }
        if !(chi_interface > 0.0 && chi_interface < 1.0) {
            return Err(Error::Config(format!(
                "interface position {chi_interface} is outside (0, 1)"
            )));
        }
        let cells = (n_nodes - 1) as f64;
        let pos = chi_interface * cells;
        let idx = pos.round();
        if (pos - idx).abs() > 1e-9 || idx < 1.0 || idx > cells - 1.0 {
            return Err(Error::Config(format!(
                "no node of a {n_nodes}-node mesh falls on the interface chi = {chi_interface}"
            )));
        }
        Ok(Mesh1D {
            n_nodes,
            chi: (0..n_nodes).map(|i| i as f64 / cells).collect(),
            interface_index: idx as usize,
        })
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.n_nodes - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverControls {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step: f64,
}

impl Default for SolverControls {
    fn default() -> Self {
        SolverControls {
            abs_tol: 1e-3,
            rel_tol: 1e-3,
            max_step: 0.02,
        }
    }
}

impl SolverControls {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0 && self.max_step > 0.0) {
            return Err(Error::Config(format!(
                "solver tolerances and max_step must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub(crate) fn ode_options(&self) -> OdeOptions {
        OdeOptions {
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            max_step: self.max_step,
            ..OdeOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field1D {
    pub mesh: Mesh1D,
    pub times: Vec<f64>,
    /// `values[node][time]`.
    pub values: Vec<Vec<f64>>,
}

impl Field1D {
    pub fn from_snapshots(mesh: Mesh1D, times: Vec<f64>, snapshots: &[Vec<f64>]) -> Self {
        let mut values = vec![Vec::with_capacity(times.len()); mesh.n_nodes];
        for snap in snapshots {
            for (node, v) in snap.iter().enumerate() {
                values[node].push(*v);
            }
        }
        Field1D {
            mesh,
            times,
            values,
        }
    }

    pub fn snapshot(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[k]).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["tau", "chi", "u"])?;
        for (k, tau) in self.times.iter().enumerate() {
            for (node, chi) in self.mesh.chi.iter().enumerate() {
                w.write_record([
                    tau.to_string(),
                    chi.to_string(),
                    self.values[node][k].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Spatial gradient ∂u/∂χ at node `i`, time index `k`. Central in the
    /// interior, second-order one-sided at the ends.
    pub fn gradient_at_node(&self, i: usize, k: usize) -> f64 {
        let h = self.mesh.spacing();
        let v = |j: usize| self.values[j][k];
        let n = self.mesh.n_nodes;
        if i == 0 {
            (-3.0 * v(0) + 4.0 * v(1) - v(2)) / (2.0 * h)
        } else if i == n - 1 {
            (3.0 * v(n - 1) - 4.0 * v(n - 2) + v(n - 3)) / (2.0 * h)
        } else {
            (v(i + 1) - v(i - 1)) / (2.0 * h)
        }
    }
}

fn bracket(grid: &[f64], x: f64) -> (usize, f64) {
    let n = grid.len();
    if n == 1 {
        return (0, 0.0);
    }
    let k = grid.partition_point(|&g| g <= x).clamp(1, n - 1);
    let (a, b) = (grid[k - 1], grid[k]);
    let w = if b > a { (x - a) / (b - a) } else { 0.0 };
    (k - 1, w)
}

fn lerp(a: f64, b: f64, w: f64) -> f64 {
    if w == 0.0 {
        a
    } else if w == 1.0 {
        b
    } else {
        a + (b - a) * w
    }
}

/// Bilinear interpolation in (χ, τ); exact on nodes and output times.
pub fn sample_at(field: &Field1D, chi: f64, tau: f64) -> Result<f64> {
    let t_first = field.times.first().copied().unwrap_or(0.0);
    let t_last = field.times.last().copied().unwrap_or(0.0);
    let tol = 1e-12;
    if !(-tol..=1.0 + tol).contains(&chi) {
        return Err(Error::Domain(format!("chi = {chi} is outside [0, 1]")));
    }
    if field.times.is_empty() || !(t_first - tol..=t_last + tol).contains(&tau) {
        return Err(Error::Domain(format!(
            "tau = {tau} is outside the computed range [{t_first}, {t_last}]"
        )));
    }
    let (i, wx) = bracket(&field.mesh.chi, chi.clamp(0.0, 1.0));
    let (k, wt) = bracket(&field.times, tau.clamp(t_first, t_last));
    let at_time = |kk: usize| {
        if field.mesh.n_nodes == 1 {
            field.values[0][kk]
        } else {
            lerp(field.values[i][kk], field.values[i + 1][kk], wx)
        }
    };
    if field.times.len() == 1 {
        return Ok(at_time(0));
    }
    Ok(lerp(at_time(k), at_time(k + 1), wt))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Layer {
    Wood,
    Insulator,
}

/// Property evaluation of the lumped operator in wood-flux units.
pub(crate) struct Lumped<'a> {
    pub cfg: &'a DimensionlessConfig,
    pub p: ParameterPoint,
    pub mesh: &'a Mesh1D,
    pub h: f64,
}

impl<'a> Lumped<'a> {
    pub fn new(cfg: &'a DimensionlessConfig, p: ParameterPoint, mesh: &'a Mesh1D) -> Result<Self> {
        p.validate()?;
        if (mesh.chi[mesh.interface_index] - cfg.chi_interface).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "mesh interface node at chi = {} does not match configured interface {}",
                mesh.chi[mesh.interface_index], cfg.chi_interface
            )));
        }
        Ok(Lumped {
            cfg,
            p,
            mesh,
            h: mesh.spacing(),
        })
    }

    pub fn dirichlet(&self) -> bool {
        self.p.is_dirichlet()
    }

    /// Layer of the face between node `i` and `i + 1`.
    #[inline]
    pub fn face_layer(&self, i: usize) -> Layer {
        if i < self.mesh.interface_index {
            Layer::Wood
        } else {
            Layer::Insulator
        }
    }

    #[inline]
    pub fn capacity(&self, layer: Layer, u: f64) -> f64 {
        let c = self.cfg;
        match layer {
            Layer::Wood => (1.0 + c.zeta11 * u) / c.fo1,
            Layer::Insulator => c.kappa21 * (1.0 + c.zeta21 * u) / c.fo2,
        }
    }

    #[inline]
    pub fn capacity_slope(&self, layer: Layer) -> f64 {
        let c = self.cfg;
        match layer {
            Layer::Wood => c.zeta11 / c.fo1,
            Layer::Insulator => c.kappa21 * c.zeta21 / c.fo2,
        }
    }

    #[inline]
    pub fn conductivity(&self, layer: Layer, u: f64) -> f64 {
        let c = self.cfg;
        match layer {
            Layer::Wood => 1.0 + c.kappa11 * u,
            Layer::Insulator => c.kappa21 * (1.0 + c.kappa21_slope * u),
        }
    }

    #[inline]
    pub fn conductivity_slope(&self, layer: Layer) -> f64 {
        let c = self.cfg;
        match layer {
            Layer::Wood => c.kappa11,
            Layer::Insulator => c.kappa21 * c.kappa21_slope,
        }
    }

    /// Layers of the half cells adjacent to node `i` (one or two).
    pub fn node_layers(&self, i: usize) -> impl Iterator<Item = Layer> + '_ {
        let n = self.mesh.n_nodes;
        let left = (i > 0).then(|| self.face_layer(i - 1));
        let right = (i + 1 < n).then(|| self.face_layer(i));
        left.into_iter().chain(right)
    }

    /// Wood volume fraction weight of node `i` (sum of wood half cells).
    pub fn wood_weight(&self, i: usize) -> f64 {
        self.node_layers(i).filter(|l| *l == Layer::Wood).count() as f64 * 0.5 * self.h
    }

    /// Capacity times control volume at node `i`.
    pub fn node_mass(&self, i: usize, u: f64) -> Result<f64> {
        let mut m = 0.0;
        for layer in self.node_layers(i) {
            let c = self.capacity(layer, u);
            if !(c > 0.0) {
                return Err(Error::Evaluation {
                    node: i,
                    message: format!("effective capacity {c:.4e} is not positive at u = {u:.4}"),
                });
            }
            m += 0.5 * self.h * c;
        }
        Ok(m)
    }

    pub fn node_mass_slope(&self, i: usize) -> f64 {
        self.node_layers(i)
            .map(|l| 0.5 * self.h * self.capacity_slope(l))
            .sum()
    }

    /// Conductive flux `K ∂u/∂χ` through face `i`.
    #[inline]
    pub fn face_flux(&self, i: usize, ua: f64, ub: f64) -> f64 {
        let layer = self.face_layer(i);
        self.conductivity(layer, 0.5 * (ua + ub)) * (ub - ua) / self.h
    }

    /// Boundary values replaced in Dirichlet mode.
    pub fn effective_state<'b>(&self, tau: f64, u: &'b [f64], buf: &'b mut Vec<f64>) -> &'b [f64] {
        if self.dirichlet() {
            buf.clear();
            buf.extend_from_slice(u);
            let ub = self.cfg.u_inf_at(tau);
            buf[0] = ub;
            let last = buf.len() - 1;
            buf[last] = ub;
            buf
        } else {
            u
        }
    }

    /// Net conservative balance `F_{i+1/2} - F_{i-1/2} + S_i` (including
    /// boundary exchange) for every node.
    pub fn balance(&self, tau: f64, u: &[f64], out: &mut [f64]) {
        let n = self.mesh.n_nodes;
        let uinf = self.cfg.u_inf_at(tau);
        let src = self.p.bi_l * self.cfg.r;
        for v in out.iter_mut() {
            *v = 0.0;
        }
        for i in 0..n - 1 {
            let f = self.face_flux(i, u[i], u[i + 1]);
            out[i] += f;
            out[i + 1] -= f;
        }
        for (i, o) in out.iter_mut().enumerate() {
            let w = self.wood_weight(i);
            if w > 0.0 {
                *o += w * src * (uinf - u[i]);
            }
        }
        if !self.dirichlet() {
            out[0] += self.p.bi_t * (uinf - u[0]);
            out[n - 1] += self.p.bi_t * (uinf - u[n - 1]);
        }
    }
}

/// Right-hand side of the semi-discrete lumped model.
pub fn assemble_rhs(
    u_nodes: &[f64],
    tau: f64,
    cfg: &DimensionlessConfig,
    p: ParameterPoint,
    mesh: &Mesh1D,
) -> Result<Vec<f64>> {
    if u_nodes.len() != mesh.n_nodes {
        return Err(Error::Config(format!(
            "state has {} values for a {}-node mesh",
            u_nodes.len(),
            mesh.n_nodes
        )));
    }
    let op = Lumped::new(cfg, p, mesh)?;
    let mut out = vec![0.0; mesh.n_nodes];
    LumpedSystem { op }.rhs(tau, u_nodes, &mut out)?;
    Ok(out)
}

struct LumpedSystem<'a> {
    op: Lumped<'a>,
}

impl OdeSystem for LumpedSystem<'_> {
    fn dim(&self) -> usize {
        self.op.mesh.n_nodes
    }

    fn bandwidth(&self) -> (usize, usize) {
        (1, 1)
    }

    fn rhs(&self, tau: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let mut buf = Vec::new();
        let u = self.op.effective_state(tau, y, &mut buf);
        self.op.balance(tau, u, dy);
        for (i, d) in dy.iter_mut().enumerate() {
            *d /= self.op.node_mass(i, u[i])?;
        }
        if self.op.dirichlet() {
            dy[0] = 0.0;
            let last = dy.len() - 1;
            dy[last] = 0.0;
        }
        Ok(())
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.op.cfg.u_inf.breakpoints().collect()
    }
}

/// Prepends τ = 0 when missing and checks the requested grid.
pub(crate) fn normalize_output_times(output_times: &[f64]) -> Result<Vec<f64>> {
    if output_times
        .iter()
        .any(|t| !(0.0..=1.0 + 1e-12).contains(t))
    {
        return Err(Error::Domain("output times must lie in [0, 1]".into()));
    }
    if output_times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain(
            "output times must be strictly increasing".into(),
        ));
    }
    let mut times = Vec::with_capacity(output_times.len() + 1);
    if output_times.first() != Some(&0.0) {
        times.push(0.0);
    }
    times.extend_from_slice(output_times);
    Ok(times)
}

#[derive(Debug, Clone)]
pub struct LumpedSolution {
    pub field: Field1D,
    pub stats: OdeStats,
}

/// Integrates the lumped model from the uniform initial state `u_ini`.
pub fn solve_lumped(
    cfg: &DimensionlessConfig,
    p: ParameterPoint,
    mesh: &Mesh1D,
    controls: &SolverControls,
    output_times: &[f64],
) -> Result<Field1D> {
    Ok(solve_lumped_with_stats(cfg, p, mesh, controls, output_times)?.field)
}

pub fn solve_lumped_with_stats(
    cfg: &DimensionlessConfig,
    p: ParameterPoint,
    mesh: &Mesh1D,
    controls: &SolverControls,
    output_times: &[f64],
) -> Result<LumpedSolution> {
    controls.validate()?;
    let times = normalize_output_times(output_times)?;
    let op = Lumped::new(cfg, p, mesh)?;
    let dirichlet = op.dirichlet();
    let sys = LumpedSystem { op };
    let mut y0 = vec![cfg.u_ini; mesh.n_nodes];
    if dirichlet {
        y0[0] = cfg.u_inf_at(0.0);
        y0[mesh.n_nodes - 1] = cfg.u_inf_at(0.0);
    }
    let sol = ode::integrate(&sys, 0.0, &y0, &times, &controls.ode_options())?;
    let mut states = sol.states;
    if dirichlet {
        for (s, &tau) in states.iter_mut().zip(&times) {
            let ub = cfg.u_inf_at(tau);
            s[0] = ub;
            let last = s.len() - 1;
            s[last] = ub;
        }
    }
    // The initial snapshot is the initial condition, untouched.
    if !dirichlet {
        states[0] = vec![cfg.u_ini; mesh.n_nodes];
    }
    Ok(LumpedSolution {
        field: Field1D::from_snapshots(mesh.clone(), times, &states),
        stats: sol.stats,
    })
}
