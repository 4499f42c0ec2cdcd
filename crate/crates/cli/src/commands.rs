//! Subcommand implementations. Every command writes into one output
//! directory; wall-clock dependent values only appear in the `meta` block of
//! the JSON files so that reruns with the same config and seeds reproduce
//! every other byte.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};
use therminv_core::aem::{build_aem, AemModel, ChamberPair};
use therminv_core::inference::{
    chain_stats, run_mcmc, LumpedLikelihood, McmcSettings, DEFAULT_BINS,
};
use therminv_core::measurement::{
    assemble_dataset, position_uncertainty, synthesize_from_samples, write_manifest, CompleteTruth,
    NoiseModel, RepeatSet, SensorDataset, Truth,
};
use therminv_core::model::{DimensionlessConfig, PhysicalParameters};
use therminv_core::sensitivity::{
    correlation_table, error_indicators, fisher_matrix, solve_sensitivities, SigmaProfile,
};
use therminv_core::solver1d::{sample_at, solve_lumped_with_stats, Field1D};
use therminv_core::solver2d::{
    flux_share, solve_complete, solve_complete_at_sensors, CompleteProblem, Diagnostics, Window,
};
use therminv_core::Error;

use crate::config::{read_sensors, Parameters, Resolved};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelKind {
    Lumped,
    Complete,
}

impl ModelKind {
    fn name(self) -> &'static str {
        match self {
            ModelKind::Lumped => "lumped",
            ModelKind::Complete => "complete",
        }
    }
}

/// Output directory plus the bookkeeping for the `meta` block.
pub struct Output {
    dir: PathBuf,
    command: &'static str,
    started: Instant,
}

impl Output {
    pub fn new(dir: &Path, command: &'static str) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            command,
            started: Instant::now(),
        })
    }

    fn create(&self, name: &str) -> CliResult<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(BufWriter::new(f))
    }

    fn csv<F>(&self, name: &str, write: F) -> CliResult<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> therminv_core::Result<()>,
    {
        let mut w = self.create(name)?;
        write(&mut w)?;
        w.flush().map_err(|e| CliError::io(&self.dir.join(name), e))
    }

    /// Writes `body` with a `meta` object added; `extra_meta` holds run
    /// dependent values such as timings.
    fn json<T: Serialize>(&self, name: &str, body: &T, extra_meta: Value) -> CliResult<()> {
        let mut v = serde_json::to_value(body)?;
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut meta = json!({
            "tool": "therminv",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "unix_time_s": now,
            "elapsed_s": self.started.elapsed().as_secs_f64(),
        });
        if let (Some(m), Value::Object(extra)) = (meta.as_object_mut(), extra_meta) {
            m.extend(extra);
        }
        if let Some(obj) = v.as_object_mut() {
            obj.insert("meta".into(), meta);
        }
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, &v)?;
        writeln!(w)
            .and_then(|_| w.flush())
            .map_err(|e| CliError::io(&self.dir.join(name), e))
    }
}

/// Tidy `t_s, sensor_id, <column>` table of `[sensor][time]` values.
fn write_series<W: Write>(
    out: W,
    ids: &[String],
    times: &[f64],
    columns: &[(&str, &[Vec<f64>])],
) -> therminv_core::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t_s", "sensor_id"];
    header.extend(columns.iter().map(|c| c.0));
    w.write_record(&header)?;
    for (k, t) in times.iter().enumerate() {
        for (s, id) in ids.iter().enumerate() {
            let mut row = vec![t.to_string(), id.clone()];
            row.extend(columns.iter().map(|c| c.1[s][k].to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

struct LumpedRun {
    field: Field1D,
    /// `[sensor][time]`, °C.
    sensors: Vec<Vec<f64>>,
    steps: usize,
    rejected: usize,
}

fn run_lumped(r: &Resolved, p: PhysicalParameters) -> CliResult<LumpedRun> {
    let cfg: DimensionlessConfig = r.setup.dimensionless(p.h_t, p.r_l)?;
    let mut q = cfg.parameters();
    if r.dirichlet() {
        q.bi_t = f64::INFINITY;
    }
    let scales = &r.setup.scales;
    let taus: Vec<f64> = r.times_s.iter().map(|t| t / scales.time).collect();
    let sol = solve_lumped_with_stats(&cfg, q, &r.mesh1d, &r.controls, &taus)?;
    let sensors = r
        .sensors
        .iter()
        .map(|s| {
            taus.iter()
                .map(|&tau| {
                    Ok(sample_at(&sol.field, s.x / scales.length, tau)? * scales.temperature)
                })
                .collect::<therminv_core::Result<Vec<f64>>>()
        })
        .collect::<therminv_core::Result<Vec<_>>>()?;
    Ok(LumpedRun {
        field: sol.field,
        sensors,
        steps: sol.stats.accepted,
        rejected: sol.stats.rejected,
    })
}

fn complete_at_sensors(r: &Resolved, p: &Parameters) -> CliResult<Vec<Vec<f64>>> {
    r.require_robin("the complete model")?;
    let problem = CompleteProblem::from_setup(&r.setup, p.h_t, p.lateral());
    let y = 0.5 * r.setup.geometry.l0y;
    let xy: Vec<(f64, f64)> = r.sensors.iter().map(|s| (s.x, y)).collect();
    Ok(solve_complete_at_sensors(
        &problem,
        &r.mesh2d()?,
        &r.df,
        &xy,
        &r.times_s,
    )?)
}

/// σ_χ `[sensor][time]` from the lumped model at the configured parameters.
fn position_sigma(r: &Resolved) -> CliResult<Vec<Vec<f64>>> {
    let run = run_lumped(r, r.raw.parameters.physical())?;
    let scales = &r.setup.scales;
    r.sensors
        .iter()
        .map(|s| {
            Ok(position_uncertainty(
                &run.field,
                s.x / scales.length,
                r.raw.measurement.position_delta,
                scales,
            )?)
        })
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Column of the flux diagnostics: down to the deepest sensor, or half the
/// wood layer when every sensor sits on the surface.
fn diagnostics_window(r: &Resolved) -> Window {
    let deepest = r.sensors.iter().map(|s| s.x).fold(0.0, f64::max);
    let x = if deepest > 0.0 {
        deepest
    } else {
        0.5 * r.setup.geometry.interface_position()
    };
    Window::sensor_column(&r.setup.geometry, x)
}

pub fn simulate(r: &Resolved, model: ModelKind, params: Parameters, out: &Output) -> CliResult<()> {
    let ids = r.sensor_ids();
    match model {
        ModelKind::Lumped => {
            let run = run_lumped(r, params.physical())?;
            out.csv("field.csv", |w| run.field.write_csv(w))?;
            out.csv("sensors.csv", |w| {
                write_series(w, &ids, &r.times_s, &[("T_C", &run.sensors)])
            })?;
            let peaks: Vec<Value> = ids
                .iter()
                .zip(&run.sensors)
                .map(|(id, v)| json!({"sensor_id": id, "max_C": v.iter().cloned().fold(f64::MIN, f64::max)}))
                .collect();
            out.json(
                "summary.json",
                &json!({
                    "model": model.name(),
                    "mode": r.raw.mode,
                    "parameters": params,
                    "nodes": r.mesh1d.n_nodes,
                    "steps_accepted": run.steps,
                    "steps_rejected": run.rejected,
                    "sensors": peaks,
                }),
                json!({}),
            )
        }
        ModelKind::Complete => {
            r.require_robin("the complete model")?;
            let problem = CompleteProblem::from_setup(&r.setup, params.h_t, params.lateral());
            let mesh = r.mesh2d()?;
            let field = solve_complete(&problem, &mesh, &r.df)?;
            let y = 0.5 * r.setup.geometry.l0y;
            let truth = CompleteTruth { field: &field, y };
            let series = r
                .sensors
                .iter()
                .map(|s| r.times_s.iter().map(|&t| truth.sample(s.x, t)).collect())
                .collect::<therminv_core::Result<Vec<Vec<f64>>>>()?;
            let window = diagnostics_window(r);
            let diag = Diagnostics::from_field(&field, &window)?;
            out.csv("field.csv", |w| field.write_csv(w))?;
            out.csv("diagnostics.csv", |w| diag.write_csv(w))?;
            out.csv("sensors.csv", |w| {
                write_series(w, &ids, &r.times_s, &[("T_C", &series)])
            })?;
            out.json(
                "summary.json",
                &json!({
                    "model": model.name(),
                    "parameters": params,
                    "cells": [mesh.nx(), mesh.ny()],
                    "window": window,
                    "x_flux_share": flux_share(&field, &window)?,
                    "interface_flux_peak_Wm2": max_abs(&diag.interface_flux),
                    "aluminum_deviation_peak_C": max_abs(&diag.aluminum_deviation),
                }),
                json!({}),
            )
        }
    }
}

pub fn sensitivity(r: &Resolved, params: Parameters, out: &Output) -> CliResult<()> {
    let p = params.physical();
    let cfg = r.setup.dimensionless(p.h_t, p.r_l)?;
    let mut q = r.setup.scaling().to_dimensionless(p);
    if r.dirichlet() {
        q.bi_t = f64::INFINITY;
    }
    let scales = &r.setup.scales;
    let taus: Vec<f64> = r.times_s.iter().map(|t| t / scales.time).collect();
    let (_, sens) = solve_sensitivities(&cfg, q, &r.mesh1d, &r.controls, &taus)?;
    out.csv("sensitivities.csv", |w| sens.write_csv(w))?;

    let chis: Vec<f64> = r.sensors.iter().map(|s| s.x / scales.length).collect();
    let rows = match correlation_table(&sens, &chis) {
        Ok(rows) => rows,
        Err(Error::UndefinedCorrelation(msg)) => {
            log::warn!("correlation table skipped: {msg}");
            Vec::new()
        }
        Err(e) => return Err(e.into()),
    };
    out.csv("correlations.csv", |w| {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["pair", "sensors", "coefficient"])?;
        for row in &rows {
            w.write_record([
                row.pair.clone(),
                row.sensors.clone(),
                row.coefficient.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;

    let sigma = vec![SigmaProfile::constant(r.raw.measurement.sigma_sensor); chis.len()];
    let fisher = fisher_matrix(&sens, &chis, &sigma, scales.temperature, scales.time)?;
    let eta = match error_indicators(&fisher) {
        Ok((t, l)) => json!({"eta_t": t, "eta_l": l}),
        Err(Error::Unidentifiable(msg)) => {
            log::warn!("error indicators undefined: {msg}");
            json!({"eta_t": null, "eta_l": null, "unidentifiable": msg})
        }
        Err(e) => return Err(e.into()),
    };
    out.json(
        "fisher.json",
        &json!({
            "parameters": params,
            "sensors": r.sensors,
            "sigma_C": r.raw.measurement.sigma_sensor,
            "fisher": fisher,
            "indicators": eta,
        }),
        json!({}),
    )
}

fn chamber_pair(r: &Resolved) -> CliResult<ChamberPair> {
    r.require_robin("the approximation error model")?;
    Ok(ChamberPair {
        setup: r.setup.clone(),
        sensors_x: r.sensors_x(),
        times_s: r.times_s.clone(),
        mesh1d: r.mesh1d.clone(),
        controls: r.controls,
        mesh2d: r.mesh2d()?,
        df: r.df,
    })
}

fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn aem(r: &Resolved, seed: Option<u64>, out: &Output) -> CliResult<()> {
    let pair = chamber_pair(r)?;
    let settings = r.raw.aem_settings(seed);
    let model = build_aem(&pair, &r.sensor_ids(), &r.times_s, &settings)?;
    out.csv("aem.csv", |w| model.write_csv(w))?;
    let peaks: Vec<Value> = model
        .sensor_ids
        .iter()
        .enumerate()
        .map(|(s, id)| json!({"sensor_id": id, "max_abs_e_C": max_abs(&model.e[s]), "max_s_e_C": max_abs(&model.s_e[s])}))
        .collect();
    out.json("aem.json", &model.sidecar(), json!({"peaks": peaks}))
}

fn load_aem(path: &Path) -> CliResult<AemModel> {
    let side = sidecar_path(path);
    let csv_in = File::open(path).map_err(|e| CliError::io(path, e))?;
    let json_in = File::open(&side).map_err(|e| CliError::io(&side, e))?;
    Ok(AemModel::read(csv_in, json_in)?)
}

/// `sensors.csv` + `dataset.csv` from a data directory. The directory's own
/// manifest wins over the configured one.
fn load_dataset(r: &Resolved, dir: &Path) -> CliResult<SensorDataset> {
    let manifest = dir.join("sensors.csv");
    let sensors = if manifest.exists() {
        read_sensors(&manifest)?
    } else {
        r.sensors.clone()
    };
    let path = dir.join("dataset.csv");
    let f = File::open(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(SensorDataset::read_csv(&sensors, r.setup.scales.length, f)?)
}

pub fn estimate(
    r: &Resolved,
    data_dir: &Path,
    aem_path: Option<&Path>,
    seed: Option<u64>,
    out: &Output,
) -> CliResult<()> {
    let data = load_dataset(r, data_dir)?;
    let aem = aem_path.map(load_aem).transpose()?;
    let p0 = r.raw.parameters.physical();
    let cfg = r.setup.dimensionless(p0.h_t, p0.r_l)?;
    let mut like = LumpedLikelihood::new(
        &data,
        &cfg,
        r.setup.scaling(),
        &r.mesh1d,
        r.controls,
        aem.as_ref(),
    )?;
    if r.dirichlet() {
        like = like.dirichlet();
    }
    let settings = McmcSettings {
        seed: seed.unwrap_or(r.raw.mcmc.seed),
        ..r.raw.mcmc
    };
    let chain = run_mcmc(&mut like, &r.raw.prior, &settings, Some(p0))?;
    let stats = chain_stats(&chain, settings.burn_in, DEFAULT_BINS, Some(&r.raw.prior))?;
    let res = like.residuals(stats.mean)?;
    let ids: Vec<String> = data.sensors.iter().map(|s| s.id.clone()).collect();
    out.csv("chain.csv", |w| chain.write_csv(w))?;
    out.csv("residuals.csv", |w| res.write_csv(&ids, &data.times_s, w))?;
    out.json(
        "summary.json",
        &json!({
            "mode": r.raw.mode,
            "settings": settings,
            "prior": r.raw.prior,
            "initial": p0,
            "aem": aem.is_some(),
            "stats": stats,
            "residuals": {
                "mean_C": res.mean(true),
                "max_abs_C": res.max_abs(true),
                "raw_mean_C": res.mean(false),
                "mean_sigma_C": data.mean_sigma(),
            },
            "solves": like.solves,
            "failed_solves": like.failures,
        }),
        json!({}),
    )
}

/// Parameters from `--params`: either `{h_t, r_l[, h_l]}` or an `estimate`
/// summary, whose posterior mean is used.
pub fn read_params(path: &Path) -> CliResult<Parameters> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let body = v.pointer("/stats/mean").cloned().unwrap_or(v);
    serde_json::from_value(body).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn validate(r: &Resolved, params: Parameters, out: &Output) -> CliResult<()> {
    let t1 = Instant::now();
    let lumped = run_lumped(r, params.physical())?.sensors;
    let lumped_s = t1.elapsed().as_secs_f64();
    let t2 = Instant::now();
    let complete = complete_at_sensors(r, &params)?;
    let complete_s = t2.elapsed().as_secs_f64();
    let diff: Vec<Vec<f64>> = lumped
        .iter()
        .zip(&complete)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
        .collect();
    let ids = r.sensor_ids();
    out.csv("residuals.csv", |w| {
        write_series(
            w,
            &ids,
            &r.times_s,
            &[
                ("lumped_C", &lumped),
                ("complete_C", &complete),
                ("difference_C", &diff),
            ],
        )
    })?;
    let per_sensor: Vec<Value> = ids
        .iter()
        .zip(&diff)
        .map(|(id, d)| json!({"sensor_id": id, "max_abs_C": max_abs(d), "mean_C": d.iter().sum::<f64>() / d.len() as f64}))
        .collect();
    let worst = diff.iter().map(|d| max_abs(d)).fold(0.0, f64::max);
    out.json(
        "report.json",
        &json!({
            "parameters": params,
            "sensors": per_sensor,
            "max_abs_C": worst,
        }),
        json!({"timing": {
            "lumped_s": lumped_s,
            "complete_s": complete_s,
            "ratio": complete_s / lumped_s,
        }}),
    )
}

/// Writes the files `estimate --data` reads, plus the raw repeats.
fn write_data_dir(r: &Resolved, repeats: &RepeatSet, out: &Output) -> CliResult<SensorDataset> {
    let sigma_pos = position_sigma(r)?;
    let m = &r.raw.measurement;
    let data = assemble_dataset(
        repeats,
        m.sigma_sensor,
        &sigma_pos,
        m.variance,
        r.setup.scales.length,
    )?;
    out.csv("sensors.csv", |w| write_manifest(&repeats.sensors, w))?;
    out.csv("dataset.csv", |w| data.write_csv(w))?;
    Ok(data)
}

pub fn synthesize(
    r: &Resolved,
    model: ModelKind,
    params: Parameters,
    seed: Option<u64>,
    out: &Output,
) -> CliResult<()> {
    let truth = match model {
        ModelKind::Lumped => run_lumped(r, params.physical())?.sensors,
        ModelKind::Complete => complete_at_sensors(r, &params)?,
    };
    let m = &r.raw.measurement;
    let seed = seed.unwrap_or(m.seed);
    let repeats = synthesize_from_samples(
        &truth,
        &r.sensors,
        &r.times_s,
        &NoiseModel::Constant(m.noise_sigma),
        m.repeats,
        seed,
    )?;
    for k in 0..repeats.n_repeats() {
        out.csv(&format!("repeat_{}.csv", k + 1), |w| {
            repeats.write_repeat_csv(k, w)
        })?;
    }
    let ids = r.sensor_ids();
    out.csv("truth.csv", |w| {
        write_series(w, &ids, &r.times_s, &[("T_C", &truth)])
    })?;
    let data = write_data_dir(r, &repeats, out)?;
    out.json(
        "synthesize.json",
        &json!({
            "model": model.name(),
            "parameters": params,
            "repeats": m.repeats,
            "noise_sigma_C": m.noise_sigma,
            "seed": seed,
            "mean_sigma_C": data.mean_sigma(),
        }),
        json!({}),
    )
}

/// `repeat_*.csv` files of a directory in name order.
fn repeat_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("repeat_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Config(format!(
            "no repeat_*.csv files in {}",
            dir.display()
        )));
    }
    Ok(files)
}

pub fn ingest(r: &Resolved, data_dir: &Path, out: &Output) -> CliResult<()> {
    let manifest = data_dir.join("sensors.csv");
    let sensors = if manifest.exists() {
        read_sensors(&manifest)?
    } else {
        r.sensors.clone()
    };
    let files = repeat_files(data_dir)?;
    let readers = files
        .iter()
        .map(|p| File::open(p).map_err(|e| CliError::io(p, e)))
        .collect::<CliResult<Vec<_>>>()?;
    let repeats = RepeatSet::read_csv(sensors, readers)?;
    if repeats.times_s != r.times_s || repeats.sensors != r.sensors {
        return Err(CliError::Core(Error::Ingestion(
            "repeats must match the configured sensors and observation grid".into(),
        )));
    }
    let data = write_data_dir(r, &repeats, out)?;
    let names: Vec<String> = files.iter().map(|p| p.display().to_string()).collect();
    out.json(
        "ingest.json",
        &json!({
            "repeats": repeats.n_repeats(),
            "samples": data.n_samples(),
            "mean_sigma_C": data.mean_sigma(),
        }),
        json!({"inputs": names}),
    )
}
