//! Checks shared by the module tests and the acceptance target.

use std::time::Instant;

use therminv_core::inference::{chain_stats, run_mcmc, Chain, McmcSettings, PriorSpec};
use therminv_core::model::{
    DimensionlessConfig, ParameterPoint, PhysicalParameters, PhysicalSetup, PiecewiseLinear,
};
use therminv_core::sensitivity::{
    correlation_table, solve_sensitivities, CorrelationRow, SensitivityFields,
};
use therminv_core::solver1d::{solve_lumped, Field1D, Mesh1D, SolverControls};

use super::{homogeneous_config, robin_slab};

pub fn grid(n: usize) -> Vec<f64> {
    (0..=n).map(|k| k as f64 / n as f64).collect()
}

/// Robin slab against its series solution: worst error relative to the
/// temperature step once `Fo·τ > 0.05`, and the solve time.
pub fn series_oracle() -> (f64, f64) {
    let (fo, bi, u0, uinf) = (1.0, 10.0, 1.0, 1.5);
    let cfg = homogeneous_config(fo, bi, u0, PiecewiseLinear::constant(uinf));
    let mesh = Mesh1D::uniform(101, 0.5).unwrap();
    let p = ParameterPoint {
        bi_t: bi,
        bi_l: 0.0,
    };
    let times = grid(200);
    let start = Instant::now();
    let f = solve_lumped(&cfg, p, &mesh, &SolverControls::default(), &times).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let mut worst: f64 = 0.0;
    for (k, tau) in f.times.iter().enumerate() {
        if fo * tau <= 0.05 {
            continue;
        }
        for (i, chi) in mesh.chi.iter().enumerate() {
            let exact = robin_slab(*chi, *tau, fo, bi, u0, uinf, 50);
            worst = worst.max((f.values[i][k] - exact).abs() / (uinf - u0));
        }
    }
    (worst, elapsed)
}

fn smooth_case() -> DimensionlessConfig {
    homogeneous_config(
        0.5,
        10.0,
        1.0,
        PhysicalSetup::chamber()
            .dimensionless(8.0, 0.5)
            .unwrap()
            .u_inf,
    )
}

fn reference_controls() -> SolverControls {
    SolverControls {
        abs_tol: 1e-10,
        rel_tol: 1e-10,
        max_step: 0.01,
    }
}

/// Max-norm error at τ = 0.4 on the nodes of the coarsest mesh.
fn spatial_error(n: usize, reference: &[f64], ref_n: usize, coarse_n: usize) -> f64 {
    let cfg = smooth_case();
    let mesh = Mesh1D::uniform(n, 0.5).unwrap();
    let f = solve_lumped(&cfg, cfg.parameters(), &mesh, &reference_controls(), &[0.4]).unwrap();
    let step_ref = (ref_n - 1) / (coarse_n - 1);
    let step = (n - 1) / (coarse_n - 1);
    (0..coarse_n)
        .map(|j| (f.values[j * step][1] - reference[j * step_ref]).abs())
        .fold(0.0, f64::max)
}

/// Observed order between 21 and 41 nodes against a 161-node reference.
pub fn convergence_order() -> f64 {
    let cfg = smooth_case();
    let ref_mesh = Mesh1D::uniform(161, 0.5).unwrap();
    let reference = solve_lumped(
        &cfg,
        cfg.parameters(),
        &ref_mesh,
        &reference_controls(),
        &[0.4],
    )
    .unwrap()
    .snapshot(1);
    let e1 = spatial_error(21, &reference, 161, 21);
    let e2 = spatial_error(41, &reference, 161, 21);
    (e1 / e2).log2()
}

fn tight() -> SolverControls {
    SolverControls {
        abs_tol: 1e-8,
        rel_tol: 1e-8,
        max_step: 0.01,
    }
}

fn worst_relative(sens: &Field1D, fd: &[Vec<f64>]) -> f64 {
    let max = sens
        .values
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst: f64 = 0.0;
    for (row, fd_row) in sens.values.iter().zip(fd) {
        for (s, d) in row.iter().zip(fd_row) {
            if s.abs() > 0.01 * max {
                worst = worst.max((s - d).abs() / s.abs());
            }
        }
    }
    worst
}

fn central_difference<F: Fn(f64) -> (DimensionlessConfig, ParameterPoint)>(
    build: F,
    value: f64,
    mesh: &Mesh1D,
    times: &[f64],
) -> Vec<Vec<f64>> {
    let eps = 1e-3;
    let (cp, pp) = build(value * (1.0 + eps));
    let (cm, pm) = build(value * (1.0 - eps));
    let up = solve_lumped(&cp, pp, mesh, &tight(), times).unwrap();
    let um = solve_lumped(&cm, pm, mesh, &tight(), times).unwrap();
    up.values
        .iter()
        .zip(&um.values)
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y) / (2.0 * eps * value))
                .collect()
        })
        .collect()
}

/// Worst relative errors of (θ, ψ, φ) and the wall time of the coupled solve.
pub fn gradient_check() -> ([f64; 3], f64) {
    let cfg = PhysicalSetup::chamber().dimensionless(8.0, 0.5).unwrap();
    let mesh = Mesh1D::uniform(101, 0.5).unwrap();
    let times = grid(100);
    let p = cfg.parameters();
    let start = Instant::now();
    let (_, sens) = solve_sensitivities(&cfg, p, &mesh, &tight(), &times).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let fd_t = central_difference(
        |v| {
            (
                cfg.clone(),
                ParameterPoint {
                    bi_t: v,
                    bi_l: p.bi_l,
                },
            )
        },
        p.bi_t,
        &mesh,
        &times,
    );
    let fd_l = central_difference(
        |v| {
            (
                cfg.clone(),
                ParameterPoint {
                    bi_t: p.bi_t,
                    bi_l: v,
                },
            )
        },
        p.bi_l,
        &mesh,
        &times,
    );
    let fd_f = central_difference(
        |v| {
            let mut c = cfg.clone();
            c.fo1 = v;
            (c, p)
        },
        cfg.fo1,
        &mesh,
        &times,
    );
    (
        [
            worst_relative(&sens.theta, &fd_t),
            worst_relative(&sens.psi, &fd_l),
            worst_relative(&sens.phi, &fd_f),
        ],
        elapsed,
    )
}

/// Sensitivities of the chamber setup at the a-priori point, 1-minute grid.
pub fn apriori_sensitivities() -> SensitivityFields {
    let cfg = PhysicalSetup::chamber().dimensionless(8.0, 0.5).unwrap();
    let mesh = Mesh1D::uniform(101, 0.5).unwrap();
    let times = grid(1200);
    solve_sensitivities(
        &cfg,
        cfg.parameters(),
        &mesh,
        &SolverControls::default(),
        &times,
    )
    .unwrap()
    .1
}

pub fn apriori_correlations() -> Vec<CorrelationRow> {
    correlation_table(&apriori_sensitivities(), &[0.0, 0.25]).unwrap()
}

/// Standard error of a chain mean by non-overlapping batch means.
pub fn batch_se(v: &[f64]) -> f64 {
    let batches = 50;
    let len = v.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| v[b * len..(b + 1) * len].iter().sum::<f64>() / len as f64)
        .collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

#[derive(Debug, Clone, Copy)]
pub struct Moment {
    pub estimate: f64,
    pub target: f64,
    pub se: f64,
}

impl Moment {
    /// Distance to the target in standard errors.
    pub fn z(&self) -> f64 {
        (self.estimate - self.target).abs() / self.se
    }
}

pub fn chamber_box() -> PriorSpec {
    PriorSpec::chamber_uniform()
}

/// Chain of 10⁵ states on an independent Gaussian likelihood well inside the
/// uniform box. Returns (mean, std) moments of h_t then R_l.
pub fn gaussian_target(seed: u64) -> [Moment; 4] {
    let mu = [15.0, 0.5];
    let s = [2.0, 0.05];
    let mut target = |p: PhysicalParameters| {
        -0.5 * (((p.h_t - mu[0]) / s[0]).powi(2) + ((p.r_l - mu[1]) / s[1]).powi(2))
    };
    let settings = McmcSettings {
        n_states: 100_000,
        burn_in: 1_000,
        walk: [2.4 * s[0] / 39.0, 2.4 * s[1] / 0.99],
        seed,
    };
    let chain = run_mcmc(
        &mut target,
        &chamber_box(),
        &settings,
        Some(PhysicalParameters {
            h_t: mu[0],
            r_l: mu[1],
        }),
    )
    .unwrap();
    let stats = chain_stats(&chain, settings.burn_in, 10, None).unwrap();
    let used = &chain.states[settings.burn_in..];
    let mut out = Vec::new();
    for (k, (m, sd)) in [
        (stats.mean.h_t, stats.std.h_t),
        (stats.mean.r_l, stats.std.r_l),
    ]
    .into_iter()
    .enumerate()
    {
        let v: Vec<f64> = used
            .iter()
            .map(|p| if k == 0 { p.h_t } else { p.r_l })
            .collect();
        let sq: Vec<f64> = v.iter().map(|x| (x - m).powi(2)).collect();
        out.push(Moment {
            estimate: m,
            target: mu[k],
            se: batch_se(&v),
        });
        out.push(Moment {
            estimate: sd,
            target: s[k],
            se: batch_se(&sq) / (2.0 * sd),
        });
    }
    [out[0], out[1], out[2], out[3]]
}

/// Zero log-likelihood: the chain must sample the uniform box. Returns the
/// h_t and R_l means.
pub fn flat_target(seed: u64) -> [Moment; 2] {
    let prior = chamber_box();
    let settings = McmcSettings {
        n_states: 100_000,
        burn_in: 1_000,
        walk: [0.5, 0.5],
        seed,
    };
    let chain = run_mcmc(&mut |_p: PhysicalParameters| 0.0, &prior, &settings, None).unwrap();
    let used = &chain.states[settings.burn_in..];
    let h: Vec<f64> = used.iter().map(|p| p.h_t).collect();
    let r: Vec<f64> = used.iter().map(|p| p.r_l).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    [
        Moment {
            estimate: mean(&h),
            target: 20.5,
            se: batch_se(&h),
        },
        Moment {
            estimate: mean(&r),
            target: 0.505,
            se: batch_se(&r),
        },
    ]
}

/// Two chains with the same seed on a cheap rugged target.
pub fn twin_chains(seed: u64) -> (Chain, Chain) {
    let run = || {
        let settings = McmcSettings {
            n_states: 20_000,
            burn_in: 100,
            walk: [0.01, 0.01],
            seed,
        };
        let mut target = |p: PhysicalParameters| {
            -(p.h_t - 10.0).abs() - 30.0 * (p.r_l - 0.3).powi(2) + (3.0 * p.h_t).sin()
        };
        run_mcmc(&mut target, &chamber_box(), &settings, None).unwrap()
    };
    (run(), run())
}
