//! Forward sensitivities of the lumped model and practical identifiability
//! diagnostics.
//!
//! The discrete model `M(u) u̇ = R(u; p)` is differentiated exactly, so
//! `s = ∂u/∂p` obeys `M ṡ = ∂R/∂u·s + ∂R/∂p - (∂M/∂u·s + ∂M/∂p) u̇`. The
//! four unknowns (u, θ, ψ, φ) of each node are interleaved so the coupled
//! Jacobian stays banded.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DimensionlessConfig, ParameterPoint, PhysicalParameters, PhysicalSetup};
use crate::ode::{self, OdeSystem};
use crate::solver1d::{
    normalize_output_times, sample_at, Field1D, Layer, Lumped, Mesh1D, SolverControls,
};

const NV: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityFields {
    /// ∂u/∂Bi_t
    pub theta: Field1D,
    /// ∂u/∂Bi_l
    pub psi: Field1D,
    /// ∂u/∂Fo_1
    pub phi: Field1D,
}

impl SensitivityFields {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["tau", "chi", "theta", "psi", "phi"])?;
        let mesh = &self.theta.mesh;
        for (k, tau) in self.theta.times.iter().enumerate() {
            for (i, chi) in mesh.chi.iter().enumerate() {
                w.write_record([
                    tau.to_string(),
                    chi.to_string(),
                    self.theta.values[i][k].to_string(),
                    self.psi.values[i][k].to_string(),
                    self.phi.values[i][k].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

struct CoupledSystem<'a> {
    op: Lumped<'a>,
}

impl CoupledSystem<'_> {
    fn unpack(&self, tau: f64, y: &[f64]) -> [Vec<f64>; NV] {
        let n = self.op.mesh.n_nodes;
        let mut parts: [Vec<f64>; NV] =
            std::array::from_fn(|v| (0..n).map(|i| y[NV * i + v]).collect());
        if self.op.dirichlet() {
            let ub = self.op.cfg.u_inf_at(tau);
            parts[0][0] = ub;
            parts[0][n - 1] = ub;
            for part in parts.iter_mut().skip(1) {
                part[0] = 0.0;
                part[n - 1] = 0.0;
            }
            parts[1].iter_mut().for_each(|v| *v = 0.0);
        }
        parts
    }
}

impl OdeSystem for CoupledSystem<'_> {
    fn dim(&self) -> usize {
        NV * self.op.mesh.n_nodes
    }

    fn bandwidth(&self) -> (usize, usize) {
        (2 * NV - 1, 2 * NV - 1)
    }

    fn rhs(&self, tau: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let op = &self.op;
        let cfg = op.cfg;
        let n = op.mesh.n_nodes;
        let h = op.h;
        let [u, th, ps, ph] = self.unpack(tau, y);
        let uinf = cfg.u_inf_at(tau);
        let src = op.p.bi_l * cfg.r;
        let dirichlet = op.dirichlet();

        let mut bal = vec![0.0; n];
        op.balance(tau, &u, &mut bal);
        let mut mass = vec![0.0; n];
        let mut udot = vec![0.0; n];
        for i in 0..n {
            mass[i] = op.node_mass(i, u[i])?;
            udot[i] = bal[i] / mass[i];
        }

        // ∂R/∂u · s for the three sensitivities at once.
        let sens = [&th, &ps, &ph];
        let mut dr = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for f in 0..n - 1 {
            let layer = op.face_layer(f);
            let ubar = 0.5 * (u[f] + u[f + 1]);
            let k = op.conductivity(layer, ubar);
            let dk = op.conductivity_slope(layer);
            let g = (u[f + 1] - u[f]) / h;
            for (s, out) in sens.iter().zip(dr.iter_mut()) {
                let df = dk * 0.5 * (s[f] + s[f + 1]) * g + k * (s[f + 1] - s[f]) / h;
                out[f] += df;
                out[f + 1] -= df;
            }
        }
        for i in 0..n {
            let w = op.wood_weight(i);
            for (s, out) in sens.iter().zip(dr.iter_mut()) {
                out[i] -= w * src * s[i];
            }
        }
        if !dirichlet {
            for (s, out) in sens.iter().zip(dr.iter_mut()) {
                out[0] -= op.p.bi_t * s[0];
                out[n - 1] -= op.p.bi_t * s[n - 1];
            }
        }

        for i in 0..n {
            let w = op.wood_weight(i);
            let dm = op.node_mass_slope(i);
            // ∂R/∂Bi_t
            let dr_bit = if !dirichlet && (i == 0 || i == n - 1) {
                uinf - u[i]
            } else {
                0.0
            };
            let dr_bil = w * cfg.r * (uinf - u[i]);
            let dm_fo1 = -w * op.capacity(Layer::Wood, u[i]) / cfg.fo1;

            dy[NV * i] = udot[i];
            dy[NV * i + 1] = (dr[0][i] + dr_bit - dm * th[i] * udot[i]) / mass[i];
            dy[NV * i + 2] = (dr[1][i] + dr_bil - dm * ps[i] * udot[i]) / mass[i];
            dy[NV * i + 3] = (dr[2][i] - (dm * ph[i] + dm_fo1) * udot[i]) / mass[i];
        }
        if dirichlet {
            for v in 0..NV {
                dy[v] = 0.0;
                dy[NV * (n - 1) + v] = 0.0;
            }
            for i in 0..n {
                dy[NV * i + 1] = 0.0;
            }
        }
        Ok(())
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.op.cfg.u_inf.breakpoints().collect()
    }
}

/// Integrates the state together with θ, ψ and φ.
pub fn solve_sensitivities(
    cfg: &DimensionlessConfig,
    p: ParameterPoint,
    mesh: &Mesh1D,
    controls: &SolverControls,
    output_times: &[f64],
) -> Result<(Field1D, SensitivityFields)> {
    controls.validate()?;
    let times = normalize_output_times(output_times)?;
    let op = Lumped::new(cfg, p, mesh)?;
    let n = mesh.n_nodes;
    let mut y0 = vec![0.0; NV * n];
    for i in 0..n {
        y0[NV * i] = cfg.u_ini;
    }
    let dirichlet = op.dirichlet();
    if dirichlet {
        y0[0] = cfg.u_inf_at(0.0);
        y0[NV * (n - 1)] = cfg.u_inf_at(0.0);
    }
    let sys = CoupledSystem { op };
    let sol = ode::integrate(&sys, 0.0, &y0, &times, &controls.ode_options())?;
    let split: Vec<[Vec<f64>; NV]> = sol
        .states
        .iter()
        .zip(&times)
        .map(|(s, &tau)| sys.unpack(tau, s))
        .collect();
    let field = |v: usize| {
        let snaps: Vec<Vec<f64>> = split.iter().map(|parts| parts[v].clone()).collect();
        Field1D::from_snapshots(mesh.clone(), times.clone(), &snaps)
    };
    let mut u = field(0);
    for row in u.values.iter_mut() {
        row[0] = if dirichlet { row[0] } else { cfg.u_ini };
    }
    Ok((
        u,
        SensitivityFields {
            theta: field(1),
            psi: field(2),
            phi: field(3),
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherMatrix {
    pub f11: f64,
    pub f12: f64,
    pub f22: f64,
}

/// Measurement standard deviation of one sensor over time (s, °C).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaProfile {
    pub times_s: Vec<f64>,
    pub sigma_c: Vec<f64>,
}

impl SigmaProfile {
    pub fn constant(sigma_c: f64) -> Self {
        SigmaProfile {
            times_s: vec![0.0],
            sigma_c: vec![sigma_c],
        }
    }

    /// Linear interpolation with constant extrapolation.
    pub fn at(&self, t_s: f64) -> f64 {
        let t = &self.times_s;
        if t.len() == 1 || t_s <= t[0] {
            return self.sigma_c[0];
        }
        if t_s >= t[t.len() - 1] {
            return self.sigma_c[t.len() - 1];
        }
        let k = t.partition_point(|&x| x <= t_s);
        let w = (t_s - t[k - 1]) / (t[k] - t[k - 1]);
        self.sigma_c[k - 1] + w * (self.sigma_c[k] - self.sigma_c[k - 1])
    }
}

/// Sensor time series of a field, sensors concatenated in order.
pub fn stacked_series(field: &Field1D, sensors_chi: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(sensors_chi.len() * field.times.len());
    for &chi in sensors_chi {
        for &tau in &field.times {
            out.push(sample_at(field, chi, tau)?);
        }
    }
    Ok(out)
}

fn trapezoid(t: &[f64], f: &[f64]) -> f64 {
    t.windows(2)
        .zip(f.windows(2))
        .map(|(tw, fw)| 0.5 * (tw[1] - tw[0]) * (fw[0] + fw[1]))
        .sum()
}

/// `F_ab = Σ_j ∫ s_a s_b / σ² dt` over physical time, σ made dimensionless
/// by the reference temperature.
pub fn fisher_matrix(
    sens: &SensitivityFields,
    sensors_chi: &[f64],
    sigma: &[SigmaProfile],
    t_ref: f64,
    time_scale: f64,
) -> Result<FisherMatrix> {
    if sigma.len() != sensors_chi.len() {
        return Err(Error::Domain(format!(
            "{} sigma profiles for {} sensors",
            sigma.len(),
            sensors_chi.len()
        )));
    }
    let times = &sens.theta.times;
    let t_s: Vec<f64> = times.iter().map(|tau| tau * time_scale).collect();
    let mut fm = FisherMatrix {
        f11: 0.0,
        f12: 0.0,
        f22: 0.0,
    };
    for (&chi, prof) in sensors_chi.iter().zip(sigma) {
        let mut i11 = Vec::with_capacity(times.len());
        let mut i12 = Vec::with_capacity(times.len());
        let mut i22 = Vec::with_capacity(times.len());
        for (&tau, &t) in times.iter().zip(&t_s) {
            let s = prof.at(t) / t_ref;
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Domain(format!(
                    "sigma must be positive, got {} at t = {t} s",
                    prof.at(t)
                )));
            }
            let a = sample_at(&sens.theta, chi, tau)?;
            let b = sample_at(&sens.psi, chi, tau)?;
            let w = 1.0 / (s * s);
            i11.push(a * a * w);
            i12.push(a * b * w);
            i22.push(b * b * w);
        }
        fm.f11 += trapezoid(&t_s, &i11);
        fm.f12 += trapezoid(&t_s, &i12);
        fm.f22 += trapezoid(&t_s, &i22);
    }
    Ok(fm)
}

/// `(η_t, η_l) = (1/√F11, 1/√F22)`.
pub fn error_indicators(f: &FisherMatrix) -> Result<(f64, f64)> {
    if !(f.f11 > 0.0) {
        return Err(Error::Unidentifiable(format!("Bi_t has F11 = {}", f.f11)));
    }
    if !(f.f22 > 0.0) {
        return Err(Error::Unidentifiable(format!("Bi_l has F22 = {}", f.f22)));
    }
    Ok((1.0 / f.f11.sqrt(), 1.0 / f.f22.sqrt()))
}

pub fn correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "series lengths {} and {} (need equal, >= 2)",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub pair: String,
    pub sensors: String,
    pub coefficient: f64,
}

/// Rows of the correlation table: (θ,ψ) per sensor, then (θ,ψ), (θ,φ) and
/// (ψ,φ) over all sensors stacked.
pub fn correlation_table(
    sens: &SensitivityFields,
    sensors_chi: &[f64],
) -> Result<Vec<CorrelationRow>> {
    let mut rows = Vec::new();
    for (j, &chi) in sensors_chi.iter().enumerate() {
        rows.push(CorrelationRow {
            pair: "theta,psi".into(),
            sensors: format!("{}", j + 1),
            coefficient: correlation(
                &stacked_series(&sens.theta, &[chi])?,
                &stacked_series(&sens.psi, &[chi])?,
            )?,
        });
    }
    let all = (1..=sensors_chi.len())
        .map(|j| j.to_string())
        .collect::<Vec<_>>()
        .join("+");
    let th = stacked_series(&sens.theta, sensors_chi)?;
    let ps = stacked_series(&sens.psi, sensors_chi)?;
    let ph = stacked_series(&sens.phi, sensors_chi)?;
    for (pair, a, b) in [
        ("theta,psi", &th, &ps),
        ("theta,phi", &th, &ph),
        ("psi,phi", &ps, &ph),
    ] {
        rows.push(CorrelationRow {
            pair: pair.into(),
            sensors: all.clone(),
            coefficient: correlation(a, b)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaPoint {
    pub h_t: f64,
    pub r_l: f64,
    pub eta_t: f64,
    pub eta_l: f64,
}

/// Error indicators over a grid of physical parameters.
#[allow(clippy::too_many_arguments)]
pub fn eta_map(
    setup: &PhysicalSetup,
    h_t_values: &[f64],
    r_l_values: &[f64],
    sensors_chi: &[f64],
    sigma: &[SigmaProfile],
    mesh: &Mesh1D,
    controls: &SolverControls,
    output_times: &[f64],
) -> Result<Vec<EtaPoint>> {
    let grid: Vec<(f64, f64)> = h_t_values
        .iter()
        .flat_map(|&h| r_l_values.iter().map(move |&r| (h, r)))
        .collect();
    grid.par_iter()
        .map(|&(h_t, r_l)| {
            let cfg = setup.dimensionless(h_t, r_l)?;
            let p = setup
                .scaling()
                .to_dimensionless(PhysicalParameters { h_t, r_l });
            let (_, sens) = solve_sensitivities(&cfg, p, mesh, controls, output_times)?;
            let f = fisher_matrix(
                &sens,
                sensors_chi,
                sigma,
                setup.scales.temperature,
                setup.scales.time,
            )?;
            let (eta_t, eta_l) = error_indicators(&f)?;
            Ok(EtaPoint {
                h_t,
                r_l,
                eta_t,
                eta_l,
            })
        })
        .collect()
}
