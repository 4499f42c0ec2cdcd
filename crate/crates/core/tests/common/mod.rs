//! Independent reference solutions shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

pub mod checks;

use therminv_core::model::{DimensionlessConfig, PhysicalSetup, PiecewiseLinear};

/// Roots of `λ tan λ = bi` on `(nπ, nπ + π/2)`, by bisection.
pub fn robin_eigenvalues(bi: f64, terms: usize) -> Vec<f64> {
    (0..terms)
        .map(|n| {
            let mut lo = n as f64 * PI + 1e-14;
            let mut hi = n as f64 * PI + PI / 2.0 - 1e-14;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid * mid.tan() - bi > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        })
        .collect()
}

/// Slab `χ ∈ [0, 1]` obeying `u_τ = fo u_χχ`, symmetric Robin faces with
/// `u_χ = ±bi (u - u_inf)` and uniform initial state `u_ini`.
pub fn robin_slab(
    chi: f64,
    tau: f64,
    fo: f64,
    bi: f64,
    u_ini: f64,
    u_inf: f64,
    terms: usize,
) -> f64 {
    let a = 0.5;
    let xi = chi - a;
    let sum: f64 = robin_eigenvalues(bi * a, terms)
        .into_iter()
        .map(|l| {
            let c = 4.0 * l.sin() / (2.0 * l + (2.0 * l).sin());
            c * (l * xi / a).cos() * (-l * l * fo * tau / (a * a)).exp()
        })
        .sum();
    u_inf + (u_ini - u_inf) * sum
}

/// Single constant-property material filling the slab, no lateral source.
pub fn homogeneous_config(
    fo: f64,
    bi: f64,
    u_ini: f64,
    u_inf: PiecewiseLinear,
) -> DimensionlessConfig {
    let mut cfg = PhysicalSetup::chamber().dimensionless(8.0, 0.0).unwrap();
    cfg.fo1 = fo;
    cfg.fo2 = fo;
    cfg.kappa21 = 1.0;
    cfg.kappa11 = 0.0;
    cfg.kappa21_slope = 0.0;
    cfg.zeta11 = 0.0;
    cfg.zeta21 = 0.0;
    cfg.bi_t = bi;
    cfg.bi_l = 0.0;
    cfg.u_ini = u_ini;
    cfg.u_inf = u_inf;
    cfg
}

/// Trapezoid on a fine uniform grid of a closure.
pub fn trapezoid<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = 0.5 * (f(a) + f(b));
    for k in 1..n {
        s += f(a + k as f64 * h);
    }
    s * h
}
