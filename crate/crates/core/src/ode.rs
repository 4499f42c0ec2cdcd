//! Adaptive linearly implicit integrator for stiff banded systems.
//!
//! Second-order Rosenbrock pair with a third-order error estimate
//! (the classic `ode23s` formulas), finite-difference banded Jacobian and
//! continuous output. Breakpoints of the forcing are hit exactly.

use crate::error::{Error, Result};
use crate::linalg::BandedMatrix;

pub trait OdeSystem {
    fn dim(&self) -> usize;

    /// Lower and upper bandwidth of the Jacobian.
    fn bandwidth(&self) -> (usize, usize);

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;

    /// Times where the right-hand side is not smooth in `t`.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step: f64,
    /// Initial step, chosen automatically when `None`.
    pub initial_step: Option<f64>,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            abs_tol: 1e-3,
            rel_tol: 1e-3,
            max_step: f64::INFINITY,
            initial_step: None,
            max_steps: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    pub jacobians: usize,
}

#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    /// `states[k]` is the solution at `times[k]`.
    pub states: Vec<Vec<f64>>,
    pub stats: OdeStats,
}

const D: f64 = 0.292_893_218_813_452_5; // 1 / (2 + sqrt 2)
const E32: f64 = 7.414_213_562_373_095; // 6 + sqrt 2

struct Work<'a, S: OdeSystem> {
    sys: &'a S,
    stats: OdeStats,
}

impl<S: OdeSystem> Work<'_, S> {
    fn f(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        self.stats.rhs_evals += 1;
        self.sys.rhs(t, y, dy)?;
        if dy.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver {
                tau: t,
                message: "non-finite right-hand side".into(),
            });
        }
        Ok(())
    }

    fn jacobian(&mut self, t: f64, y: &[f64], f0: &[f64]) -> Result<BandedMatrix> {
        self.stats.jacobians += 1;
        let n = y.len();
        let (kl, ku) = self.sys.bandwidth();
        let groups = (kl + ku + 1).min(n.max(1));
        let mut jac = BandedMatrix::zeros(n, kl, ku);
        let mut yp = y.to_vec();
        let mut fp = vec![0.0; n];
        let sqrt_eps = f64::EPSILON.sqrt();
        let mut deltas = vec![0.0; n];
        for g in 0..groups {
            for j in (g..n).step_by(groups) {
                let del = sqrt_eps * y[j].abs().max(1e-2);
                yp[j] = y[j] + del;
                deltas[j] = yp[j] - y[j];
            }
            self.f(t, &yp, &mut fp)?;
            for j in (g..n).step_by(groups) {
                let lo = j.saturating_sub(ku);
                let hi = (j + kl + 1).min(n);
                for i in lo..hi {
                    jac.set(i, j, (fp[i] - f0[i]) / deltas[j]);
                }
                yp[j] = y[j];
            }
        }
        Ok(jac)
    }
}

/// Integrates `y' = f(t, y)` from `t0` and returns the state at each of the
/// ascending `output_times` (all `>= t0`).
pub fn integrate<S: OdeSystem>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    output_times: &[f64],
    opts: &OdeOptions,
) -> Result<OdeSolution> {
    let n = sys.dim();
    if y0.len() != n {
        return Err(Error::Config(format!(
            "initial state has length {} but the system has dimension {n}",
            y0.len()
        )));
    }
    if !(opts.abs_tol > 0.0 && opts.rel_tol > 0.0) {
        return Err(Error::Config(
            "integration tolerances must be positive".into(),
        ));
    }
    if !(opts.max_step > 0.0) {
        return Err(Error::Config("max_step must be positive".into()));
    }
    if output_times.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::Config("output times must be ascending".into()));
    }
    if output_times.first().is_some_and(|&t| t < t0) {
        return Err(Error::Config(
            "output times must not precede the initial time".into(),
        ));
    }

    let mut work = Work {
        sys,
        stats: OdeStats::default(),
    };
    let mut states: Vec<Vec<f64>> = Vec::with_capacity(output_times.len());
    let mut next_out = 0;
    while next_out < output_times.len() && output_times[next_out] == t0 {
        states.push(y0.to_vec());
        next_out += 1;
    }
    let t_end = match output_times.last() {
        Some(&t) => t,
        None => {
            return Ok(OdeSolution {
                times: vec![],
                states,
                stats: work.stats,
            })
        }
    };
    if next_out == output_times.len() {
        return Ok(OdeSolution {
            times: output_times.to_vec(),
            states,
            stats: work.stats,
        });
    }

    let mut tstops: Vec<f64> = sys
        .breakpoints()
        .into_iter()
        .filter(|&b| b > t0 && b < t_end)
        .collect();
    tstops.sort_by(f64::total_cmp);
    tstops.push(t_end);
    let mut stop_idx = 0;

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut f0 = vec![0.0; n];
    work.f(t, &y, &mut f0)?;

    let threshold = opts.abs_tol / opts.rel_tol;
    let span = t_end - t0;
    let hmax = opts.max_step.min(span);
    let mut h = match opts.initial_step {
        Some(h) => h.min(hmax),
        None => {
            let rh = f0
                .iter()
                .zip(&y)
                .map(|(f, yv)| f.abs() / yv.abs().max(threshold))
                .fold(0.0, f64::max)
                * 1.25
                / opts.rel_tol.powf(1.0 / 3.0);
            let mut h = hmax;
            if h * rh > 1.0 {
                h = 1.0 / rh;
            }
            h
        }
    };

    let mut fdt = vec![0.0; n];
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut f1 = vec![0.0; n];
    let mut f2 = vec![0.0; n];
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut steps = 0usize;
    let mut need_jac = true;
    let mut jac = BandedMatrix::zeros(n, 0, 0);

    while t < t_end {
        let t_stop = tstops[stop_idx];
        let hmin = 16.0 * f64::EPSILON * t.abs().max(1e-300);
        h = h.min(hmax).max(hmin);
        let mut last_in_segment = false;
        if 1.1 * h >= t_stop - t {
            h = t_stop - t;
            last_in_segment = true;
        }

        if need_jac {
            let dt = f64::EPSILON.sqrt() * t.abs().max(h).max(1e-8);
            let tt = t + dt;
            work.f(tt, &y, &mut fdt)?;
            for i in 0..n {
                fdt[i] = (fdt[i] - f0[i]) / (tt - t);
            }
            jac = work.jacobian(t, &y, &f0)?;
            need_jac = false;
        }

        let mut w = jac.clone();
        w.to_identity_minus(h * D);
        let lu = w.factorize().map_err(|e| match e {
            Error::Solver { message, .. } => Error::Solver { tau: t, message },
            other => other,
        })?;

        let stage = (|| -> Result<f64> {
            for i in 0..n {
                k1[i] = f0[i] + h * D * fdt[i];
            }
            lu.solve_in_place(&mut k1);
            for i in 0..n {
                ytmp[i] = y[i] + 0.5 * h * k1[i];
            }
            work.f(t + 0.5 * h, &ytmp, &mut f1)?;
            for i in 0..n {
                k2[i] = f1[i] - k1[i];
            }
            lu.solve_in_place(&mut k2);
            for i in 0..n {
                k2[i] += k1[i];
                ynew[i] = y[i] + h * k2[i];
            }
            if ynew.iter().any(|v| !v.is_finite()) {
                return Err(Error::Solver {
                    tau: t,
                    message: "non-finite stage value".into(),
                });
            }
            let t_new = if last_in_segment { t_stop } else { t + h };
            work.f(t_new, &ynew, &mut f2)?;
            for i in 0..n {
                k3[i] = f2[i] - E32 * (k2[i] - f1[i]) - 2.0 * (k1[i] - f0[i]) + h * D * fdt[i];
            }
            lu.solve_in_place(&mut k3);
            let mut err: f64 = 0.0;
            for i in 0..n {
                let e = h / 6.0 * (k1[i] - 2.0 * k2[i] + k3[i]);
                let scale = opts.abs_tol + opts.rel_tol * y[i].abs().max(ynew[i].abs());
                err = err.max(e.abs() / scale);
            }
            Ok(err)
        })();

        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::Solver {
                tau: t,
                message: format!("exceeded {} steps", opts.max_steps),
            });
        }

        let err = match stage {
            Ok(e) if e.is_finite() => e,
            _ => f64::INFINITY,
        };
        if err > 1.0 {
            work.stats.rejected += 1;
            if h <= hmin {
                return Err(Error::Solver {
                    tau: t,
                    message: format!("step size underflow (h = {h:.3e})"),
                });
            }
            let fac = if err.is_finite() {
                (0.8 * err.powf(-1.0 / 3.0)).clamp(0.1, 0.5)
            } else {
                0.5
            };
            h = (h * fac).max(hmin);
            if h <= hmin && err.is_infinite() {
                return Err(Error::Solver {
                    tau: t,
                    message: "right-hand side evaluation failed repeatedly".into(),
                });
            }
            continue;
        }

        work.stats.accepted += 1;
        let t_new = if last_in_segment { t_stop } else { t + h };
        // Continuous extension over the step.
        while next_out < output_times.len() && output_times[next_out] <= t_new {
            let tout = output_times[next_out];
            if tout == t_new {
                states.push(ynew.clone());
            } else {
                let s = (tout - t) / h;
                let a1 = s * (1.0 - s) / (1.0 - 2.0 * D);
                let a2 = s * (s - 2.0 * D) / (1.0 - 2.0 * D);
                states.push(
                    (0..n)
                        .map(|i| y[i] + h * (a1 * k1[i] + a2 * k2[i]))
                        .collect(),
                );
            }
            next_out += 1;
        }

        t = t_new;
        std::mem::swap(&mut y, &mut ynew);
        std::mem::swap(&mut f0, &mut f2);
        need_jac = true;
        if last_in_segment {
            stop_idx += 1;
            if stop_idx >= tstops.len() {
                break;
            }
        }
        let fac = if err == 0.0 {
            5.0
        } else {
            (0.8 * err.powf(-1.0 / 3.0)).min(5.0)
        };
        h *= fac;
    }

    while next_out < output_times.len() {
        states.push(y.clone());
        next_out += 1;
    }

    Ok(OdeSolution {
        times: output_times.to_vec(),
        states,
        stats: work.stats,
    })
}
