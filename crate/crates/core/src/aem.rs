//! Approximation error model: statistics of the lumped-minus-complete
//! discrepancy at the sensors over prior draws.
//!
//! The stored mean `e = T_lumped − T_complete` is negative when the lumped
//! model lags the complete one. The likelihood compares the data with the
//! corrected prediction `u − e`, and inflates the variance to
//! `σ̃² = σ² + s_e²`.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::PriorSpec;
use crate::measurement::SensorDataset;
use crate::model::{PhysicalParameters, PhysicalSetup};
use crate::solver1d::{sample_at, solve_lumped, Mesh1D, SolverControls};
use crate::solver2d::{solve_complete_at_sensors, CompleteProblem, DfOptions, Mesh2D};

pub const DEFAULT_AEM_SAMPLES: usize = 1000;
/// Largest tolerated share of failed sample pairs.
pub const MAX_SKIPPED_FRACTION: f64 = 0.1;

/// Lumped and complete predictions at the sensors, `[sensor][time]` in °C.
pub trait ModelPair: Sync {
    fn lumped(&self, p: PhysicalParameters) -> Result<Vec<Vec<f64>>>;
    fn complete(&self, p: PhysicalParameters, h_l: f64) -> Result<Vec<Vec<f64>>>;
}

/// The chamber sample: lumped solver against the 2D DuFort-Frankel model.
#[derive(Debug, Clone)]
pub struct ChamberPair {
    pub setup: PhysicalSetup,
    /// Sensor depths (m); the complete model is read on the mid-width line.
    pub sensors_x: Vec<f64>,
    pub times_s: Vec<f64>,
    pub mesh1d: Mesh1D,
    pub controls: SolverControls,
    pub mesh2d: Mesh2D,
    pub df: DfOptions,
}

impl ModelPair for ChamberPair {
    fn lumped(&self, p: PhysicalParameters) -> Result<Vec<Vec<f64>>> {
        let cfg = self.setup.dimensionless(p.h_t, p.r_l)?;
        let scales = &self.setup.scales;
        let taus: Vec<f64> = self.times_s.iter().map(|t| t / scales.time).collect();
        let field = solve_lumped(&cfg, cfg.parameters(), &self.mesh1d, &self.controls, &taus)?;
        self.sensors_x
            .iter()
            .map(|&x| {
                taus.iter()
                    .map(|&tau| Ok(sample_at(&field, x / scales.length, tau)? * scales.temperature))
                    .collect()
            })
            .collect()
    }

    fn complete(&self, p: PhysicalParameters, h_l: f64) -> Result<Vec<Vec<f64>>> {
        let problem = CompleteProblem::from_setup(&self.setup, p.h_t, h_l);
        let y = 0.5 * self.setup.geometry.l0y;
        let sensors: Vec<(f64, f64)> = self.sensors_x.iter().map(|&x| (x, y)).collect();
        solve_complete_at_sensors(&problem, &self.mesh2d, &self.df, &sensors, &self.times_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AemSettings {
    pub n_samples: usize,
    pub seed: u64,
    /// `h_l = factor · R_l` for the complete model.
    pub hl_factor: f64,
    pub prior: PriorSpec,
}

impl AemSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::Config(format!(
                "the error model needs at least 2 samples, got {}",
                self.n_samples
            )));
        }
        if !(self.hl_factor.is_finite() && self.hl_factor >= 0.0) {
            return Err(Error::Config(format!(
                "invalid h_l factor {}",
                self.hl_factor
            )));
        }
        self.prior.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AemModel {
    pub sensor_ids: Vec<String>,
    pub times_s: Vec<f64>,
    /// Mean of `T_lumped − T_complete`, `[sensor][time]` (°C).
    pub e: Vec<Vec<f64>>,
    /// Sample standard deviation of the same (°C).
    pub s_e: Vec<Vec<f64>>,
    /// Pairs that entered the statistics.
    pub n_samples: usize,
    pub n_skipped: usize,
    pub seed: u64,
    pub hl_factor: f64,
    pub prior: PriorSpec,
}

/// JSON sidecar of the CSV artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AemSidecar {
    pub sensor_ids: Vec<String>,
    pub n_samples: usize,
    pub n_skipped: usize,
    pub seed: u64,
    pub hl_factor: f64,
    pub prior: PriorSpec,
}

#[derive(Debug, Deserialize)]
struct AemRow {
    sensor_id: String,
    t_s: f64,
    #[serde(rename = "e_C")]
    e: f64,
    #[serde(rename = "s_e_C")]
    s_e: f64,
}

impl AemModel {
    pub fn sidecar(&self) -> AemSidecar {
        AemSidecar {
            sensor_ids: self.sensor_ids.clone(),
            n_samples: self.n_samples,
            n_skipped: self.n_skipped,
            seed: self.seed,
            hl_factor: self.hl_factor,
            prior: self.prior,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sensor_id", "t_s", "e_C", "s_e_C"])?;
        for (s, id) in self.sensor_ids.iter().enumerate() {
            for (k, t) in self.times_s.iter().enumerate() {
                w.write_record([
                    id.clone(),
                    t.to_string(),
                    self.e[s][k].to_string(),
                    self.s_e[s][k].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read, S: Read>(csv_in: R, sidecar_in: S) -> Result<Self> {
        let side: AemSidecar = serde_json::from_reader(sidecar_in)?;
        let n = side.sensor_ids.len();
        let mut times: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut e = vec![Vec::new(); n];
        let mut s_e = vec![Vec::new(); n];
        let mut rdr = csv::Reader::from_reader(csv_in);
        for row in rdr.deserialize() {
            let row: AemRow = row.map_err(|err| Error::Ingestion(format!("error model: {err}")))?;
            let s = side
                .sensor_ids
                .iter()
                .position(|id| *id == row.sensor_id)
                .ok_or_else(|| {
                    Error::Ingestion(format!("error model: unknown sensor {}", row.sensor_id))
                })?;
            if !(row.s_e >= 0.0) || !row.e.is_finite() {
                return Err(Error::Ingestion(format!(
                    "error model: invalid row for {}",
                    row.sensor_id
                )));
            }
            times[s].push(row.t_s);
            e[s].push(row.e);
            s_e[s].push(row.s_e);
        }
        if times.iter().any(|t| *t != times[0]) || times[0].is_empty() {
            return Err(Error::Ingestion(
                "error model sensors do not share a time grid".into(),
            ));
        }
        Ok(AemModel {
            sensor_ids: side.sensor_ids,
            times_s: times.swap_remove(0),
            e,
            s_e,
            n_samples: side.n_samples,
            n_skipped: side.n_skipped,
            seed: side.seed,
            hl_factor: side.hl_factor,
            prior: side.prior,
        })
    }

    /// Sensors and times must match the dataset exactly.
    pub fn check_grid(&self, data: &SensorDataset) -> Result<()> {
        let ids: Vec<&str> = data.sensors.iter().map(|s| s.id.as_str()).collect();
        let own: Vec<&str> = self.sensor_ids.iter().map(String::as_str).collect();
        if ids != own {
            return Err(Error::Domain(format!(
                "error model sensors {own:?} differ from the data {ids:?}"
            )));
        }
        if self.times_s.len() != data.times_s.len()
            || self
                .times_s
                .iter()
                .zip(&data.times_s)
                .any(|(a, b)| (a - b).abs() > 1e-6)
        {
            return Err(Error::Domain(
                "error model and data time grids differ".into(),
            ));
        }
        Ok(())
    }
}

/// Draws `n_samples` prior points, runs both models on each and reduces the
/// discrepancies in sample order. Pairs are evaluated in parallel.
pub fn build_aem(
    pair: &dyn ModelPair,
    sensor_ids: &[String],
    times_s: &[f64],
    settings: &AemSettings,
) -> Result<AemModel> {
    settings.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let draws = (0..settings.n_samples)
        .map(|_| settings.prior.sample(&mut rng))
        .collect::<Result<Vec<_>>>()?;
    let shape_ok = |v: &Vec<Vec<f64>>| {
        v.len() == sensor_ids.len() && v.iter().all(|s| s.len() == times_s.len())
    };
    let errors: Vec<Result<Vec<Vec<f64>>>> = draws
        .par_iter()
        .map(|&p| {
            let lumped = pair.lumped(p)?;
            let complete = pair.complete(p, settings.hl_factor * p.r_l)?;
            if !shape_ok(&lumped) || !shape_ok(&complete) {
                return Err(Error::Domain(
                    "model output is not on the observation grid".into(),
                ));
            }
            Ok(lumped
                .iter()
                .zip(&complete)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect())
        })
        .collect();
    let mut ok = Vec::with_capacity(errors.len());
    let mut skipped = 0;
    for (k, r) in errors.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push(v),
            Err(e) if e.is_numerical() => {
                log::warn!("error model sample {k} at {:?} skipped: {e}", draws[k]);
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if skipped as f64 > MAX_SKIPPED_FRACTION * settings.n_samples as f64 || ok.len() < 2 {
        return Err(Error::AemBuild(format!(
            "{skipped} of {} sample pairs failed",
            settings.n_samples
        )));
    }
    let n = ok.len() as f64;
    let (ns, nt) = (sensor_ids.len(), times_s.len());
    let mut e = vec![vec![0.0; nt]; ns];
    let mut s_e = vec![vec![0.0; nt]; ns];
    for sample in &ok {
        for s in 0..ns {
            for k in 0..nt {
                e[s][k] += sample[s][k];
            }
        }
    }
    e.iter_mut().flatten().for_each(|v| *v /= n);
    for sample in &ok {
        for s in 0..ns {
            for k in 0..nt {
                s_e[s][k] += (sample[s][k] - e[s][k]).powi(2);
            }
        }
    }
    s_e.iter_mut()
        .flatten()
        .for_each(|v| *v = (*v / (n - 1.0)).sqrt());
    Ok(AemModel {
        sensor_ids: sensor_ids.to_vec(),
        times_s: times_s.to_vec(),
        e,
        s_e,
        n_samples: ok.len(),
        n_skipped: skipped,
        seed: settings.seed,
        hl_factor: settings.hl_factor,
        prior: settings.prior,
    })
}

/// Values `[sensor][time]`.
pub type Series = Vec<Vec<f64>>;

/// Corrects data-minus-lumped residuals for the model discrepancy:
/// returns `(r + e, sqrt(σ² + s_e²))`. A residual equal to `−e` is exactly
/// what the complete model would leave, and maps to zero.
pub fn apply_aem(
    residual: &[Vec<f64>],
    sigma: &[Vec<f64>],
    aem: &AemModel,
) -> Result<(Series, Series)> {
    let aligned = |v: &[Vec<f64>]| {
        v.len() == aem.e.len() && v.iter().zip(&aem.e).all(|(a, b)| a.len() == b.len())
    };
    if !aligned(residual) || !aligned(sigma) {
        return Err(Error::Domain(
            "residuals are not on the error model grid".into(),
        ));
    }
    let corrected = residual
        .iter()
        .zip(&aem.e)
        .map(|(r, e)| r.iter().zip(e).map(|(a, b)| a + b).collect())
        .collect();
    let inflated = sigma
        .iter()
        .zip(&aem.s_e)
        .map(|(s, se)| {
            s.iter()
                .zip(se)
                .map(|(a, b)| (a * a + b * b).sqrt())
                .collect()
        })
        .collect();
    Ok((corrected, inflated))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::ParamPrior;

    fn model(e: f64, s_e: f64) -> AemModel {
        AemModel {
            sensor_ids: vec!["a".into()],
            times_s: vec![0.0, 60.0],
            e: vec![vec![e; 2]],
            s_e: vec![vec![s_e; 2]],
            n_samples: 2,
            n_skipped: 0,
            seed: 0,
            hl_factor: 1.0,
            prior: PriorSpec {
                h_t: ParamPrior::Point { value: 8.0 },
                r_l: ParamPrior::Point { value: 0.5 },
            },
        }
    }

    #[test]
    fn apply_examples() {
        let r = vec![vec![0.1, -0.2]];
        let s = vec![vec![0.3, 0.3]];
        let (c, t) = apply_aem(&r, &s, &model(0.0, 0.0)).unwrap();
        assert_eq!((c, t), (r.clone(), s.clone()));
        let (c, t) = apply_aem(&[vec![-0.7; 2]], &s, &model(0.7, 0.4)).unwrap();
        assert!(c[0].iter().all(|v| v.abs() < 1e-15));
        assert!(t[0].iter().all(|v| (v - 0.5).abs() < 1e-15));
        assert!(apply_aem(&[vec![0.0; 3]], &s, &model(0.0, 0.0)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let m = model(-0.25, 0.125);
        let mut csv_buf = Vec::new();
        m.write_csv(&mut csv_buf).unwrap();
        let side = serde_json::to_vec(&m.sidecar()).unwrap();
        let back = AemModel::read(csv_buf.as_slice(), side.as_slice()).unwrap();
        assert_eq!(back, m);
    }
}
