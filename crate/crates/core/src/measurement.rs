//! Observation pipeline: repeated chamber series, best estimates, the
//! uncertainty budget and synthetic data generation.
//!
//! File formats (UTF-8, comma separated, `.` decimal separator):
//! - sensor manifest `sensor_id,x_m`
//! - one file per repeat `t_s,sensor_id,T_C` (extra columns are ignored)
//! - assembled dataset `t_s,sensor_id,T_C,sigma_C`

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ReferenceScales;
use crate::solver1d::{sample_at, Field1D};
use crate::solver2d::Field2D;

/// Sensor repeatability, °C.
pub const DEFAULT_SIGMA_SENSOR: f64 = 0.3;
/// Sensor placement uncertainty, m.
pub const DEFAULT_POSITION_DELTA: f64 = 5e-3;
pub const DEFAULT_REPEATS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensor {
    pub id: String,
    /// Depth below the top face (m).
    pub x: f64,
}

/// Surface sensor and mid-wood sensor.
pub fn chamber_sensors() -> Vec<Sensor> {
    vec![
        Sensor {
            id: "x1".into(),
            x: 0.0,
        },
        Sensor {
            id: "x2".into(),
            x: 0.04,
        },
    ]
}

/// One sample per minute over `horizon_s`.
pub fn minute_grid(horizon_s: f64) -> Vec<f64> {
    let n = (horizon_s / 60.0).round() as usize;
    (0..=n).map(|k| k as f64 * 60.0).collect()
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    sensor_id: String,
    x_m: f64,
}

pub fn read_manifest<R: Read>(input: R) -> Result<Vec<Sensor>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out: Vec<Sensor> = Vec::new();
    for row in rdr.deserialize() {
        let row: ManifestRow =
            row.map_err(|e| Error::Ingestion(format!("sensor manifest: {e}")))?;
        if !row.x_m.is_finite() {
            return Err(Error::Ingestion(format!(
                "sensor {} has a non-finite position",
                row.sensor_id
            )));
        }
        if out.iter().any(|s| s.id == row.sensor_id) {
            return Err(Error::Ingestion(format!(
                "duplicate sensor id {}",
                row.sensor_id
            )));
        }
        out.push(Sensor {
            id: row.sensor_id,
            x: row.x_m,
        });
    }
    if out.is_empty() {
        return Err(Error::Ingestion("sensor manifest is empty".into()));
    }
    Ok(out)
}

pub fn write_manifest<W: Write>(sensors: &[Sensor], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sensor_id", "x_m"])?;
    for s in sensors {
        w.write_record([s.id.clone(), s.x.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `N_e` repeats of the same experiment on a shared time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatSet {
    pub sensors: Vec<Sensor>,
    pub times_s: Vec<f64>,
    /// `repeats[r][sensor][time]` in °C.
    pub repeats: Vec<Vec<Vec<f64>>>,
    /// Fan speed in % of the maximum, when known.
    pub fan_speed: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct RepeatRow {
    t_s: f64,
    sensor_id: String,
    #[serde(rename = "T_C")]
    t_c: f64,
}

impl RepeatSet {
    pub fn n_repeats(&self) -> usize {
        self.repeats.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats.is_empty() {
            return Err(Error::Ingestion("no repeats".into()));
        }
        check_times(&self.times_s)?;
        for (r, rep) in self.repeats.iter().enumerate() {
            if rep.len() != self.sensors.len() {
                return Err(Error::Ingestion(format!(
                    "repeat {r} has {} sensors",
                    rep.len()
                )));
            }
            for (s, series) in rep.iter().enumerate() {
                if series.len() != self.times_s.len() {
                    return Err(Error::Ingestion(format!(
                        "repeat {r}, sensor {} is not on the shared time grid",
                        self.sensors[s].id
                    )));
                }
                if series.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Ingestion(format!(
                        "repeat {r}, sensor {} has non-finite values",
                        self.sensors[s].id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Parses one repeat file per reader. Time grids must match exactly
    /// across sensors and repeats; nothing is resampled.
    pub fn read_csv<R: Read>(sensors: Vec<Sensor>, inputs: Vec<R>) -> Result<Self> {
        let index: HashMap<&str, usize> = sensors
            .iter()
            .enumerate()
            .map(|(k, s)| (s.id.as_str(), k))
            .collect();
        let mut times: Option<Vec<f64>> = None;
        let mut repeats = Vec::with_capacity(inputs.len());
        for (r, input) in inputs.into_iter().enumerate() {
            let mut per_sensor: Vec<(Vec<f64>, Vec<f64>)> =
                vec![(Vec::new(), Vec::new()); sensors.len()];
            let mut rdr = csv::Reader::from_reader(input);
            for row in rdr.deserialize() {
                let row: RepeatRow =
                    row.map_err(|e| Error::Ingestion(format!("repeat {r}: {e}")))?;
                let k = *index.get(row.sensor_id.as_str()).ok_or_else(|| {
                    Error::Ingestion(format!("repeat {r}: unknown sensor {}", row.sensor_id))
                })?;
                per_sensor[k].0.push(row.t_s);
                per_sensor[k].1.push(row.t_c);
            }
            let mut rep = Vec::with_capacity(sensors.len());
            for (k, (t, v)) in per_sensor.into_iter().enumerate() {
                match &times {
                    None => {
                        check_times(&t)
                            .map_err(|e| Error::Ingestion(format!("repeat {r}: {e}")))?;
                        times = Some(t);
                    }
                    Some(grid) if *grid != t => {
                        return Err(Error::Ingestion(format!(
                            "repeat {r}, sensor {}: time grid differs from the first series",
                            sensors[k].id
                        )));
                    }
                    Some(_) => {}
                }
                rep.push(v);
            }
            repeats.push(rep);
        }
        let set = RepeatSet {
            sensors,
            times_s: times.unwrap_or_default(),
            repeats,
            fan_speed: None,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn write_repeat_csv<W: Write>(&self, r: usize, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_s", "sensor_id", "T_C"])?;
        for (n, t) in self.times_s.iter().enumerate() {
            for (s, sensor) in self.sensors.iter().enumerate() {
                w.write_record([
                    t.to_string(),
                    sensor.id.clone(),
                    self.repeats[r][s][n].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn check_times(t: &[f64]) -> Result<()> {
    if t.is_empty() {
        return Err(Error::Ingestion("empty time grid".into()));
    }
    if t.iter().any(|v| !v.is_finite()) || t.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Ingestion(
            "times must be finite and strictly ascending".into(),
        ));
    }
    Ok(())
}

/// Mean over repeats, `[sensor][time]`. Accumulated as deviations from the
/// first repeat, so identical repeats give back their value bit for bit.
pub fn best_estimate(repeats: &RepeatSet) -> Vec<Vec<f64>> {
    let n = repeats.n_repeats() as f64;
    (0..repeats.sensors.len())
        .map(|s| {
            (0..repeats.times_s.len())
                .map(|k| {
                    let first = repeats.repeats[0][s][k];
                    first + repeats.repeats.iter().map(|r| r[s][k] - first).sum::<f64>() / n
                })
                .collect()
        })
        .collect()
}

/// Normalisation of the spread between repeats.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceForm {
    /// `1/N_e`, the default.
    #[default]
    Population,
    /// `1/(N_e - 1)`.
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomUncertainty {
    /// `[sensor][time]` in °C.
    pub sigma: Vec<Vec<f64>>,
    /// Set when a single repeat was supplied and σ_~ is zero by convention.
    pub single_repeat: bool,
}

/// `σ_~ = sqrt(s²/N_e)` with `s²` the spread of the repeats around their
/// mean.
pub fn random_uncertainty(repeats: &RepeatSet, form: VarianceForm) -> RandomUncertainty {
    let n = repeats.n_repeats();
    let mean = best_estimate(repeats);
    if n < 2 {
        log::warn!("a single repeat carries no random uncertainty; sigma_random set to 0");
        return RandomUncertainty {
            sigma: mean.iter().map(|s| vec![0.0; s.len()]).collect(),
            single_repeat: true,
        };
    }
    let denom = match form {
        VarianceForm::Population => n as f64,
        VarianceForm::Sample => (n - 1) as f64,
    };
    let sigma = mean
        .iter()
        .enumerate()
        .map(|(s, m)| {
            m.iter()
                .enumerate()
                .map(|(k, mk)| {
                    let ss: f64 = repeats.repeats.iter().map(|r| (r[s][k] - mk).powi(2)).sum();
                    (ss / denom).sqrt() / (n as f64).sqrt()
                })
                .collect()
        })
        .collect();
    RandomUncertainty {
        sigma,
        single_repeat: false,
    }
}

/// `σ_χ(t) = |∂T/∂x| δ` at the sensor, from a lumped field. Gradients are
/// nodal finite differences, linearly interpolated between nodes.
pub fn position_uncertainty(
    field: &Field1D,
    chi: f64,
    delta_m: f64,
    scales: &ReferenceScales,
) -> Result<Vec<f64>> {
    let n = field.mesh.n_nodes;
    if !(0.0..=1.0).contains(&chi) {
        return Err(Error::Domain(format!("chi = {chi} is outside [0, 1]")));
    }
    let h = field.mesh.spacing();
    let pos = chi / h;
    let i0 = (pos.floor() as usize).min(n - 2);
    let w = pos - i0 as f64;
    let to_dim = scales.temperature / scales.length * delta_m.abs();
    Ok((0..field.times.len())
        .map(|k| {
            let g0 = field.gradient_at_node(i0, k);
            let g = if w < 1e-9 {
                g0
            } else if w > 1.0 - 1e-9 {
                field.gradient_at_node(i0 + 1, k)
            } else {
                g0 + w * (field.gradient_at_node(i0 + 1, k) - g0)
            };
            g.abs() * to_dim
        })
        .collect())
}

/// Root-sum-square of the three components.
pub fn total_uncertainty_value(sigma_s: f64, sigma_random: f64, sigma_position: f64) -> f64 {
    (sigma_s * sigma_s + sigma_random * sigma_random + sigma_position * sigma_position).sqrt()
}

pub fn total_uncertainty(sigma_s: f64, sigma_random: &[f64], sigma_position: &[f64]) -> Vec<f64> {
    assert_eq!(
        sigma_random.len(),
        sigma_position.len(),
        "uncertainty series lengths differ"
    );
    sigma_random
        .iter()
        .zip(sigma_position)
        .map(|(&r, &p)| total_uncertainty_value(sigma_s, r, p))
        .collect()
}

/// One sensor of an assembled dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSeries {
    pub id: String,
    pub x: f64,
    pub chi: f64,
    /// Best estimate, °C.
    pub temperature: Vec<f64>,
    /// Total standard deviation, °C.
    pub sigma: Vec<f64>,
}

/// Observations ready for the likelihood. All sensors share `times_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorDataset {
    pub times_s: Vec<f64>,
    pub sensors: Vec<SensorSeries>,
}

#[derive(Debug, Deserialize)]
struct DatasetRow {
    t_s: f64,
    sensor_id: String,
    #[serde(rename = "T_C")]
    t_c: f64,
    #[serde(rename = "sigma_C")]
    sigma_c: f64,
}

impl SensorDataset {
    pub fn validate(&self) -> Result<()> {
        check_times(&self.times_s)?;
        if self.sensors.is_empty() {
            return Err(Error::Ingestion("dataset has no sensors".into()));
        }
        let n = self.times_s.len();
        for s in &self.sensors {
            if s.temperature.len() != n || s.sigma.len() != n {
                return Err(Error::Ingestion(format!(
                    "sensor {} is not on the time grid",
                    s.id
                )));
            }
            if s.temperature.iter().any(|v| !v.is_finite()) {
                return Err(Error::Ingestion(format!(
                    "sensor {} has non-finite temperatures",
                    s.id
                )));
            }
            if let Some(bad) = s.sigma.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(Error::Ingestion(format!(
                    "sensor {} has sigma = {bad}; must be > 0",
                    s.id
                )));
            }
        }
        Ok(())
    }

    pub fn chis(&self) -> Vec<f64> {
        self.sensors.iter().map(|s| s.chi).collect()
    }

    pub fn n_samples(&self) -> usize {
        self.sensors.len() * self.times_s.len()
    }

    /// Mean of all σ.
    pub fn mean_sigma(&self) -> f64 {
        let sum: f64 = self.sensors.iter().flat_map(|s| s.sigma.iter()).sum();
        sum / self.n_samples() as f64
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_s", "sensor_id", "T_C", "sigma_C"])?;
        for (k, t) in self.times_s.iter().enumerate() {
            for s in &self.sensors {
                w.write_record([
                    t.to_string(),
                    s.id.clone(),
                    s.temperature[k].to_string(),
                    s.sigma[k].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a dataset; positions come from the manifest, `length` is the
    /// reference length used for `χ = x / L`.
    pub fn read_csv<R: Read>(sensors: &[Sensor], length: f64, input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        for col in ["t_s", "sensor_id", "T_C", "sigma_C"] {
            if !headers.iter().any(|h| h == col) {
                return Err(Error::Ingestion(format!(
                    "dataset is missing the `{col}` column"
                )));
            }
        }
        let index: HashMap<&str, usize> = sensors
            .iter()
            .enumerate()
            .map(|(k, s)| (s.id.as_str(), k))
            .collect();
        let mut cols: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = vec![Default::default(); sensors.len()];
        for row in rdr.deserialize() {
            let row: DatasetRow = row.map_err(|e| Error::Ingestion(format!("dataset: {e}")))?;
            let k = *index.get(row.sensor_id.as_str()).ok_or_else(|| {
                Error::Ingestion(format!("dataset: unknown sensor {}", row.sensor_id))
            })?;
            cols[k].0.push(row.t_s);
            cols[k].1.push(row.t_c);
            cols[k].2.push(row.sigma_c);
        }
        let times = cols[0].0.clone();
        let mut series = Vec::with_capacity(sensors.len());
        for (s, (t, temp, sig)) in sensors.iter().zip(cols) {
            if t != times {
                return Err(Error::Ingestion(format!(
                    "sensor {} is not on the shared time grid",
                    s.id
                )));
            }
            series.push(SensorSeries {
                id: s.id.clone(),
                x: s.x,
                chi: s.x / length,
                temperature: temp,
                sigma: sig,
            });
        }
        let ds = SensorDataset {
            times_s: times,
            sensors: series,
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Best estimates plus `σ = sqrt(σ_s² + σ_~² + σ_χ²)`. `sigma_position` is
/// `[sensor][time]`.
pub fn assemble_dataset(
    repeats: &RepeatSet,
    sigma_s: f64,
    sigma_position: &[Vec<f64>],
    form: VarianceForm,
    length: f64,
) -> Result<SensorDataset> {
    repeats.validate()?;
    if sigma_position.len() != repeats.sensors.len()
        || sigma_position
            .iter()
            .any(|s| s.len() != repeats.times_s.len())
    {
        return Err(Error::Domain(
            "position uncertainty is not on the observation grid".into(),
        ));
    }
    let mean = best_estimate(repeats);
    let random = random_uncertainty(repeats, form);
    let sensors = repeats
        .sensors
        .iter()
        .enumerate()
        .map(|(s, sensor)| SensorSeries {
            id: sensor.id.clone(),
            x: sensor.x,
            chi: sensor.x / length,
            temperature: mean[s].clone(),
            sigma: total_uncertainty(sigma_s, &random.sigma[s], &sigma_position[s]),
        })
        .collect();
    let ds = SensorDataset {
        times_s: repeats.times_s.clone(),
        sensors,
    };
    ds.validate()?;
    Ok(ds)
}

/// A model that can be read at a sensor depth and time (°C).
pub trait Truth {
    fn sample(&self, x: f64, t_s: f64) -> Result<f64>;
}

pub struct LumpedTruth<'a> {
    pub field: &'a Field1D,
    pub scales: &'a ReferenceScales,
}

impl Truth for LumpedTruth<'_> {
    fn sample(&self, x: f64, t_s: f64) -> Result<f64> {
        let u = sample_at(self.field, x / self.scales.length, t_s / self.scales.time)?;
        Ok(u * self.scales.temperature)
    }
}

/// 2D field read along the line `y`, linear in time between snapshots.
pub struct CompleteTruth<'a> {
    pub field: &'a Field2D,
    pub y: f64,
}

impl Truth for CompleteTruth<'_> {
    fn sample(&self, x: f64, t_s: f64) -> Result<f64> {
        let times = &self.field.times;
        let (first, last) = (times[0], times[times.len() - 1]);
        if !(first - 1e-9..=last + 1e-9).contains(&t_s) {
            return Err(Error::Domain(format!(
                "t = {t_s} s is outside [{first}, {last}]"
            )));
        }
        let k = times
            .partition_point(|&v| v <= t_s)
            .clamp(1, times.len().max(2) - 1);
        if times.len() == 1 {
            return self.field.sample(x, self.y, 0);
        }
        let w = ((t_s - times[k - 1]) / (times[k] - times[k - 1])).clamp(0.0, 1.0);
        let a = self.field.sample(x, self.y, k - 1)?;
        if w == 0.0 {
            return Ok(a);
        }
        let b = self.field.sample(x, self.y, k)?;
        Ok(a + w * (b - a))
    }
}

/// Per-sample noise standard deviation (°C).
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    Constant(f64),
    /// `[sensor][time]`.
    PerSample(Vec<Vec<f64>>),
}

impl NoiseModel {
    fn at(&self, s: usize, k: usize) -> f64 {
        match self {
            NoiseModel::Constant(v) => *v,
            NoiseModel::PerSample(v) => v[s][k],
        }
    }

    fn validate(&self, n_sensors: usize, n_times: usize) -> Result<()> {
        let ok = match self {
            NoiseModel::Constant(v) => v.is_finite() && *v >= 0.0,
            NoiseModel::PerSample(v) => {
                v.len() == n_sensors
                    && v.iter()
                        .all(|s| s.len() == n_times && s.iter().all(|x| x.is_finite() && *x >= 0.0))
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(
                "noise model must be finite, non-negative and on the observation grid".into(),
            ))
        }
    }
}

/// Adds independent Gaussian noise to truth samples `[sensor][time]`.
/// Draw order is repeat, sensor, time.
pub fn synthesize_from_samples(
    truth: &[Vec<f64>],
    sensors: &[Sensor],
    times_s: &[f64],
    noise: &NoiseModel,
    n_repeats: usize,
    seed: u64,
) -> Result<RepeatSet> {
    if n_repeats == 0 {
        return Err(Error::Config("at least one repeat is required".into()));
    }
    if truth.len() != sensors.len() || truth.iter().any(|s| s.len() != times_s.len()) {
        return Err(Error::Domain(
            "truth samples are not on the observation grid".into(),
        ));
    }
    noise.validate(sensors.len(), times_s.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let repeats = (0..n_repeats)
        .map(|_| {
            truth
                .iter()
                .enumerate()
                .map(|(s, series)| {
                    series
                        .iter()
                        .enumerate()
                        .map(|(k, v)| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            v + noise.at(s, k) * z
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let set = RepeatSet {
        sensors: sensors.to_vec(),
        times_s: times_s.to_vec(),
        repeats,
        fan_speed: None,
    };
    set.validate()?;
    Ok(set)
}

/// Samples `truth` at the sensors and adds noise.
pub fn synthesize_observations(
    truth: &dyn Truth,
    sensors: &[Sensor],
    times_s: &[f64],
    noise: &NoiseModel,
    n_repeats: usize,
    seed: u64,
) -> Result<RepeatSet> {
    let samples = sensors
        .iter()
        .map(|s| {
            times_s
                .iter()
                .map(|&t| truth.sample(s.x, t))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    synthesize_from_samples(&samples, sensors, times_s, noise, n_repeats, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(values: &[f64]) -> RepeatSet {
        RepeatSet {
            sensors: vec![Sensor {
                id: "s1".into(),
                x: 0.0,
            }],
            times_s: vec![0.0],
            repeats: values.iter().map(|v| vec![vec![*v]]).collect(),
            fan_speed: None,
        }
    }

    #[test]
    fn best_estimates() {
        assert_eq!(best_estimate(&set(&[20.0]))[0][0], 20.0);
        assert!((best_estimate(&set(&[19.9, 20.0, 20.1]))[0][0] - 20.0).abs() < 1e-12);
        assert!((best_estimate(&set(&[19.8, 20.0, 20.5]))[0][0] - 20.1).abs() < 1e-12);
    }

    #[test]
    fn random_uncertainty_forms() {
        let r = random_uncertainty(&set(&[19.9, 20.0, 20.1]), VarianceForm::Population);
        let expected = (0.02f64 / 3.0).sqrt() / 3f64.sqrt();
        assert!((r.sigma[0][0] - expected).abs() <= 1e-12 * expected);
        assert!(!r.single_repeat);
        let s = random_uncertainty(&set(&[19.9, 20.0, 20.1]), VarianceForm::Sample);
        assert!((s.sigma[0][0] - 0.1 / 3f64.sqrt()).abs() < 1e-12);
        let one = random_uncertainty(&set(&[20.0]), VarianceForm::Population);
        assert!(one.single_repeat);
        assert_eq!(one.sigma[0][0], 0.0);
    }

    #[test]
    fn total_examples() {
        assert_eq!(total_uncertainty_value(0.3, 0.0, 0.0), 0.3);
        let v = total_uncertainty_value(0.3, 0.0, 0.2);
        assert!((v - 0.13f64.sqrt()).abs() <= 1e-12 * v);
    }

    #[test]
    fn zero_noise_reproduces_truth() {
        let sensors = vec![Sensor {
            id: "a".into(),
            x: 0.0,
        }];
        let truth = vec![vec![20.0, 21.5, 22.25]];
        let r = synthesize_from_samples(
            &truth,
            &sensors,
            &[0.0, 60.0, 120.0],
            &NoiseModel::Constant(0.0),
            3,
            1,
        )
        .unwrap();
        for rep in &r.repeats {
            assert_eq!(rep, &truth);
        }
    }
}
