mod common;

use common::checks::{self, batch_se};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use therminv_core::error::Error;
use therminv_core::inference::{
    acceptance_factor, chain_stats, gaussian_log_likelihood, propose, run_mcmc, LogLikelihood,
    LumpedLikelihood, McmcSettings, ParamPrior, PriorSpec, DEFAULT_BINS,
};
use therminv_core::measurement::{SensorDataset, SensorSeries};
use therminv_core::model::{PhysicalParameters, PhysicalSetup};
use therminv_core::solver1d::{Mesh1D, SolverControls};

#[test]
fn gaussian_target_moments() {
    for m in checks::gaussian_target(2024) {
        println!(
            "estimate {:.5} target {:.5} ({:.2} SE)",
            m.estimate,
            m.target,
            m.z()
        );
        assert!(m.z() < 3.0);
    }
}

#[test]
fn flat_likelihood_recovers_the_prior_mean() {
    for m in checks::flat_target(7) {
        println!(
            "mean {:.4} vs {:.4} ({:.2} SE)",
            m.estimate,
            m.target,
            m.z()
        );
        assert!(m.z() < 3.0);
    }
}

#[test]
fn same_seed_same_chain() {
    let (a, b) = checks::twin_chains(99);
    assert_eq!(a, b);
    let (c, _) = checks::twin_chains(100);
    assert_ne!(a.states, c.states);
}

#[test]
fn three_level_target_is_sampled_in_proportion() {
    // piecewise-constant likelihood on three equal slices of the h_t range
    let weights: [f64; 3] = [0.2, 0.3, 0.5];
    let slice = |h: f64| (((h - 1.0) / 13.0) as usize).min(2);
    let mut target = |p: PhysicalParameters| weights[slice(p.h_t)].ln();
    let settings = McmcSettings {
        n_states: 200_000,
        burn_in: 1_000,
        walk: [0.3, 0.3],
        seed: 3,
    };
    let chain = run_mcmc(&mut target, &PriorSpec::chamber_uniform(), &settings, None).unwrap();
    let used = &chain.states[settings.burn_in..];
    for (k, w) in weights.iter().enumerate() {
        let ind: Vec<f64> = used
            .iter()
            .map(|p| f64::from(u8::from(slice(p.h_t) == k)))
            .collect();
        let freq = ind.iter().sum::<f64>() / ind.len() as f64;
        let se = batch_se(&ind);
        println!(
            "slice {k}: {freq:.4} vs {w} ({:.2} SE)",
            (freq - w).abs() / se
        );
        assert!((freq - w).abs() < 3.0 * se.max(1e-3));
    }
}

#[test]
fn proposals_stay_in_the_box_and_are_centred() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = PhysicalParameters { h_t: 8.0, r_l: 0.5 };
    assert_eq!(propose(p, [0.0, 0.0], &mut rng), p);
    let w = [0.2, 0.01];
    let n = 100_000;
    let (mut sh, mut sr) = (0.0, 0.0);
    for _ in 0..n {
        let q = propose(p, w, &mut rng);
        assert!((q.h_t - p.h_t).abs() <= w[0] && (q.r_l - p.r_l).abs() <= w[1]);
        sh += q.h_t;
        sr += q.r_l;
    }
    let se = |wk: f64| wk / 3f64.sqrt() / (n as f64).sqrt();
    assert!((sh / n as f64 - p.h_t).abs() < 3.0 * se(w[0]));
    assert!((sr / n as f64 - p.r_l).abs() < 3.0 * se(w[1]));
}

#[test]
fn acceptance_factor_examples() {
    assert_eq!(acceptance_factor(-10.0, -12.0), 1.0);
    assert!((acceptance_factor(-12.0, -10.0) - (-2f64).exp()).abs() < 1e-15);
    assert_eq!(acceptance_factor(f64::NEG_INFINITY, -10.0), 0.0);
    assert_eq!(acceptance_factor(-10.0, f64::NEG_INFINITY), 1.0);
}

fn one_sample_dataset(setup: &PhysicalSetup, t: f64) -> SensorDataset {
    SensorDataset {
        times_s: vec![t],
        sensors: vec![SensorSeries {
            id: "x2".into(),
            x: 0.04,
            chi: 0.04 / setup.scales.length,
            temperature: vec![0.0],
            sigma: vec![0.3],
        }],
    }
}

#[test]
fn likelihood_examples() {
    let setup = PhysicalSetup::chamber();
    let cfg = setup.dimensionless(8.0, 0.5).unwrap();
    let mesh = Mesh1D::uniform(101, 0.5).unwrap();
    let p = PhysicalParameters::a_priori();
    let mut data = one_sample_dataset(&setup, 3.0 * 3600.0);
    let model = {
        let l = LumpedLikelihood::new(
            &data,
            &cfg,
            setup.scaling(),
            &mesh,
            SolverControls::default(),
            None,
        )
        .unwrap();
        l.predict(p).unwrap()[0][0]
    };
    let eval = |data: &SensorDataset| {
        let mut l = LumpedLikelihood::new(
            data,
            &cfg,
            setup.scaling(),
            &mesh,
            SolverControls::default(),
            None,
        )
        .unwrap();
        l.log_likelihood(p)
    };
    data.sensors[0].temperature[0] = model;
    assert_eq!(eval(&data), 0.0);
    data.sensors[0].temperature[0] = model + 0.3;
    assert!((eval(&data) + 0.5).abs() < 1e-9);
    data.sensors[0].sigma[0] = 0.6;
    assert!((eval(&data) + 0.125).abs() < 1e-9);
}

#[test]
fn dirichlet_chain_moves_only_the_lateral_conductance() {
    let setup = PhysicalSetup::chamber();
    let cfg = setup.dimensionless(8.0, 0.5).unwrap();
    let mesh = Mesh1D::uniform(41, 0.5).unwrap();
    let times: Vec<f64> = (0..=20).map(|k| k as f64 * 3600.0).collect();
    let mut data = SensorDataset {
        times_s: times.clone(),
        sensors: vec![SensorSeries {
            id: "x2".into(),
            x: 0.04,
            chi: 0.25,
            temperature: vec![0.0; times.len()],
            sigma: vec![0.3; times.len()],
        }],
    };
    let truth = PhysicalParameters { h_t: 8.0, r_l: 0.3 };
    let pred = LumpedLikelihood::new(
        &data,
        &cfg,
        setup.scaling(),
        &mesh,
        SolverControls::default(),
        None,
    )
    .unwrap()
    .dirichlet()
    .predict(truth)
    .unwrap();
    data.sensors[0].temperature = pred[0].clone();
    let mut l = LumpedLikelihood::new(
        &data,
        &cfg,
        setup.scaling(),
        &mesh,
        SolverControls::default(),
        None,
    )
    .unwrap()
    .dirichlet();
    let prior = PriorSpec {
        h_t: ParamPrior::Point { value: 8.0 },
        r_l: ParamPrior::Uniform { lo: 0.01, hi: 1.0 },
    };
    let settings = McmcSettings {
        n_states: 400,
        burn_in: 200,
        walk: [0.0, 0.02],
        seed: 5,
    };
    let chain = run_mcmc(
        &mut l,
        &prior,
        &settings,
        Some(PhysicalParameters { h_t: 8.0, r_l: 0.5 }),
    )
    .unwrap();
    assert!(chain.states.iter().all(|p| p.h_t == 8.0));
    let stats = chain_stats(&chain, settings.burn_in, DEFAULT_BINS, Some(&prior)).unwrap();
    println!("Dirichlet R_l {:.4} ± {:.4}", stats.mean.r_l, stats.std.r_l);
    assert!((stats.mean.r_l - truth.r_l).abs() < 0.05);
    assert_eq!(l.failures, 0);
}

#[test]
fn invalid_chain_requests() {
    let prior = PriorSpec::chamber_uniform();
    let settings = McmcSettings {
        n_states: 10,
        burn_in: 2,
        walk: [0.1, 0.1],
        seed: 0,
    };
    let outside = PhysicalParameters {
        h_t: 50.0,
        r_l: 0.5,
    };
    assert!(matches!(
        run_mcmc(
            &mut |_p: PhysicalParameters| 0.0,
            &prior,
            &settings,
            Some(outside)
        ),
        Err(Error::Domain(_))
    ));
    let chain = run_mcmc(&mut |_p: PhysicalParameters| 0.0, &prior, &settings, None).unwrap();
    assert_eq!(chain.len(), 10);
    assert!(matches!(
        chain_stats(&chain, 10, 5, None),
        Err(Error::Domain(_))
    ));
    let mut buf = Vec::new();
    chain.write_csv(&mut buf).unwrap();
    assert!(buf.starts_with(b"state,h_t,R_l,log_post,accepted\n"));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn larger_residuals_lower_the_likelihood(
        r in prop::collection::vec(-3.0f64..3.0, 1..20),
        s in 0.05f64..1.0,
        k in 0usize..20,
        bump in 1e-3f64..1.0,
    ) {
        let sigma = vec![s; r.len()];
        let k = k % r.len();
        let mut bigger = r.clone();
        bigger[k] = r[k].signum() * (r[k].abs() + bump) + if r[k] == 0.0 { bump } else { 0.0 };
        prop_assert!(gaussian_log_likelihood(&bigger, &sigma) < gaussian_log_likelihood(&r, &sigma));
    }

    #[test]
    fn shifting_the_posterior_changes_no_decision(c in -1e3f64..1e3, seed in 0u64..1000) {
        let settings = McmcSettings { n_states: 500, burn_in: 0, walk: [0.02, 0.02], seed };
        let f = |p: PhysicalParameters| -0.5 * ((p.h_t - 12.0) / 3.0).powi(2) - 0.5 * ((p.r_l - 0.4) / 0.1).powi(2);
        let prior = PriorSpec::chamber_uniform();
        let a = run_mcmc(&mut |p| f(p), &prior, &settings, None).unwrap();
        let b = run_mcmc(&mut |p| f(p) + c, &prior, &settings, None).unwrap();
        prop_assert_eq!(a.accepted, b.accepted);
        prop_assert_eq!(a.states, b.states);
    }
}
