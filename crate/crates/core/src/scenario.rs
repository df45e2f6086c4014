//! Scenario orchestration behind the `becimp` binary.
//!
//! Every scenario writes into its own output directory, finishes with
//! plot-ready files from [`emit_plot_data`] and writes `manifest.json` last.
//! Scan scenarios run their points concurrently, one subdirectory each.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::analytics::{self, thomas_fermi_profile};
use crate::config::{RunConfig, Scenario};
use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::io::{self, ManifestInfo, Matrix, MatrixFormats, RunStatus};
use crate::observables::{
    self, detect_shock, disturbance_centroid, dominant_frequency, effective_mass_ratio, max_density_gradient,
    persistent_tracks, reflects_and_recollides, track_minima, variational_width, width_series, ObservableSeries,
    TrackOptions,
};
use crate::solver::{evolve_observed, EvolveOptions, ModelParams, QuenchSchedule, SnapshotSeries, Species};
use crate::stationary::{classify_imprint, decay_onset, relax_coupled, zeno_durability_experiment, RelaxationReport};

/// Gradient factor and time window of the shock detector.
pub const SHOCK_FACTOR: f64 = 5.0;
pub const SHOCK_WINDOW: f64 = 0.1;

/// Outcome of one scenario run.
#[derive(Debug)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub summary: Value,
    pub files: Vec<PathBuf>,
    pub manifest: PathBuf,
}

/// Accumulates files and flags while a scenario runs.
struct Sink {
    dir: PathBuf,
    formats: MatrixFormats,
    files: Vec<PathBuf>,
    status: RunStatus,
    convergence: BTreeMap<String, bool>,
    notes: Vec<String>,
    steps: usize,
}

impl Sink {
    fn new(dir: &Path, cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            formats: MatrixFormats {
                text: cfg.write_text,
                binary: cfg.write_binary,
            },
            files: Vec::new(),
            status: RunStatus::Ok,
            convergence: BTreeMap::new(),
            notes: Vec::new(),
            steps: 0,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn csv(&mut self, name: &str, header: &[&str], columns: &[&[f64]]) -> Result<()> {
        let p = self.path(name);
        io::write_csv(&p, header, columns)?;
        self.files.push(p);
        Ok(())
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        io::write_text(&p, text)?;
        self.files.push(p);
        Ok(())
    }

    fn json(&mut self, name: &str, value: &Value) -> Result<()> {
        self.text(
            name,
            &(serde_json::to_string_pretty(value).expect("json serializes") + "\n"),
        )
    }

    fn converged(&mut self, label: &str, ok: bool) {
        self.convergence.insert(label.to_string(), ok);
        if !ok {
            self.status = self.status.combine(RunStatus::Unconverged);
            self.notes.push(format!("{label}: relaxation did not converge"));
        }
    }

    /// Folds a finished child sink (a scan point) into this one.
    fn absorb(&mut self, prefix: &str, child: Sink) {
        self.files.extend(child.files);
        self.status = self.status.combine(child.status);
        self.steps += child.steps;
        for (k, v) in child.convergence {
            self.convergence.insert(format!("{prefix}/{k}"), v);
        }
        self.notes
            .extend(child.notes.into_iter().map(|n| format!("{prefix}: {n}")));
    }
}

/// Runs the configured scenario into `out`.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<RunOutcome> {
    let started = Instant::now();
    let mut sink = Sink::new(out, cfg)?;
    sink.text("config_resolved.txt", &cfg.to_text())?;

    let mut summary = match cfg.scenario {
        Scenario::Relax => run_relax(cfg, &mut sink)?,
        Scenario::Tof => run_tof(cfg, &mut sink)?,
        Scenario::Quench if cfg.scan_g_ib.is_empty() => quench_point(cfg, &cfg.params, &mut sink)?,
        Scenario::Quench => run_quench_scan(cfg, &mut sink)?,
        Scenario::MassScan => run_mass_scan(cfg, &mut sink)?,
        Scenario::CouplingScan => run_coupling_scan(cfg, &mut sink)?,
        Scenario::ZenoDecay => run_zeno(cfg, &mut sink)?,
        Scenario::Analyze => run_analyze(cfg, &mut sink)?,
    };
    if let Value::Object(m) = &mut summary {
        m.insert("scenario".into(), json!(cfg.scenario.as_str()));
        m.insert("status".into(), json!(sink.status.as_str()));
    }
    sink.json("summary.json", &summary)?;
    let plots = emit_plot_data(&sink.dir)?;
    sink.files.extend(plots);

    let info = ManifestInfo {
        config: cfg.resolved().clone(),
        wall_time_s: started.elapsed().as_secs_f64(),
        n_points: cfg.n_points,
        half_width: cfg.half_width,
        steps: sink.steps,
        convergence: sink.convergence.clone(),
        status: sink.status,
        notes: sink.notes.clone(),
    };
    let manifest = io::write_manifest(&sink.dir, &info, &sink.files)?;
    Ok(RunOutcome {
        status: sink.status,
        summary,
        files: sink.files,
        manifest,
    })
}

fn grid_of(cfg: &RunConfig) -> Result<Arc<Grid1D>> {
    Grid1D::shared(cfg.n_points, cfg.half_width)
}

/// Relaxes `params` and the uncoupled reference side by side.
fn relax_pair(
    cfg: &RunConfig,
    grid: &Arc<Grid1D>,
    params: &ModelParams,
) -> Result<(RelaxationReport, RelaxationReport)> {
    let reference = params.with_g_ib(0.0);
    let (a, b) = rayon::join(
        || relax_coupled(params, grid, &cfg.relax),
        || relax_coupled(&reference, grid, &cfg.relax),
    );
    Ok((a?, b?))
}

fn write_relaxed(sink: &mut Sink, with: &RelaxationReport, without: &RelaxationReport) -> Result<()> {
    let grid = with.final_state.grid();
    let n_b = with.final_state.psi_b.density().into_values();
    let n_i = with.final_state.psi_i.density().into_values();
    let n_ref = without.final_state.psi_b.density().into_values();
    let dn: Vec<f64> = n_b.iter().zip(&n_ref).map(|(a, b)| a - b).collect();
    sink.csv(
        "relaxed_fields.csv",
        &["z", "n_B", "n_I", "n_B_ref", "dn_B"],
        &[grid.nodes(), &n_b, &n_i, &n_ref, &dn],
    )?;
    let tau: Vec<f64> = with.energy_trace.iter().map(|e| e.tau).collect();
    let e_b: Vec<f64> = with.energy_trace.iter().map(|e| e.e_b).collect();
    let e_i: Vec<f64> = with.energy_trace.iter().map(|e| e.e_i).collect();
    sink.csv("relax_energy.csv", &["tau", "E_B", "E_I"], &[&tau, &e_b, &e_i])
}

fn relax_summary(with: &RelaxationReport, without: &RelaxationReport) -> Map<String, Value> {
    let state = &with.final_state;
    let centre = state.grid().n_points() / 2;
    let n_b = state.psi_b.density();
    let e = with.final_energy().expect("trace is never empty");
    let mut m = Map::new();
    m.insert("g_b".into(), json!(with.params.g_b));
    m.insert("g_ib".into(), json!(with.params.g_ib));
    m.insert("coupling_ib".into(), json!(with.params.coupling_ib()));
    m.insert("coupling_bi".into(), json!(with.params.coupling_bi()));
    m.insert("alpha".into(), json!(with.params.alpha));
    m.insert("e_b".into(), json!(e.e_b));
    m.insert("e_i".into(), json!(e.e_i));
    m.insert("iterations".into(), json!(with.iterations));
    m.insert("converged".into(), json!(with.converged));
    m.insert("reference_converged".into(), json!(without.converged));
    m.insert("n_b_centre".into(), json!(n_b.values()[centre]));
    m.insert("n_b_peak".into(), json!(n_b.max()));
    m.insert(
        "n_b_ref_centre".into(),
        json!(without.final_state.psi_b.density().values()[centre]),
    );
    if with.params.g_b > 0.0 {
        if let Ok(tf) = thomas_fermi_profile(with.params.g_b) {
            m.insert("thomas_fermi_peak".into(), json!(tf.peak()));
            m.insert("thomas_fermi_mu".into(), json!(tf.mu));
        }
    }
    m.insert(
        "impurity_width".into(),
        json!((state.psi_i.moment(2) / state.psi_i.norm2()).sqrt()),
    );
    m.insert(
        "m_eff_ratio".into(),
        effective_mass_ratio(&state.psi_i, with.params.alpha).map_or(Value::Null, |r| json!(r)),
    );
    m
}

fn run_relax(cfg: &RunConfig, sink: &mut Sink) -> Result<Value> {
    let grid = grid_of(cfg)?;
    let (with, without) = relax_pair(cfg, &grid, &cfg.params)?;
    sink.converged("coupled", with.converged);
    sink.converged("reference", without.converged);
    sink.steps = with.iterations + without.iterations;
    write_relaxed(sink, &with, &without)?;
    let mut m = relax_summary(&with, &without);
    match classify_imprint(&with, &without) {
        Ok(d) => {
            m.insert(
                "imprint".into(),
                json!({
                    "n_bumps": d.n_bumps,
                    "n_dips": d.n_dips,
                    "fragmented": d.fragmented,
                    "interior_gaps": d.interior_gaps,
                }),
            );
        }
        Err(e) => {
            m.insert("imprint".into(), Value::Null);
            sink.notes.push(format!("imprint not classified: {e}"));
        }
    }
    let imprint = m["imprint"].clone();
    sink.json("imprint.json", &imprint)?;
    Ok(Value::Object(m))
}

fn evolve_options(cfg: &RunConfig) -> EvolveOptions {
    EvolveOptions {
        t_final: cfg.t_final,
        dt: cfg.dt,
        snapshot_stride: cfg.snapshot_stride,
        zeno: false,
    }
}

fn series_parameters(cfg: &RunConfig, params: &ModelParams) -> BTreeMap<String, String> {
    let mut p = cfg.resolved().clone();
    p.insert("params.g_ib".into(), params.g_ib.to_string());
    p.insert("params.alpha".into(), params.alpha.to_string());
    p.insert("resolved.coupling_ib".into(), params.coupling_ib().to_string());
    p.insert("resolved.coupling_bi".into(), params.coupling_bi().to_string());
    p
}

fn density_difference(series: &SnapshotSeries, reference: &[Vec<f64>]) -> Vec<Vec<f64>> {
    series
        .densities(Species::Condensate)
        .into_iter()
        .zip(reference)
        .map(|(row, r)| row.iter().zip(r).map(|(a, b)| a - b).collect())
        .collect()
}

fn record_failure(sink: &mut Sink, label: &str, failure: &Option<Error>) {
    if let Some(e) = failure {
        sink.status = sink.status.combine(RunStatus::BlowUp);
        sink.notes.push(format!("{label}: {e}; outputs are partial"));
    }
}

fn run_tof(cfg: &RunConfig, sink: &mut Sink) -> Result<Value> {
    let grid = grid_of(cfg)?;
    let params = &cfg.params;
    let (with, without) = relax_pair(cfg, &grid, params)?;
    sink.converged("coupled", with.converged);
    sink.converged("reference", without.converged);
    write_relaxed(sink, &with, &without)?;

    let reference = params.with_g_ib(0.0);
    let opts = evolve_options(cfg);
    let schedule = QuenchSchedule::time_of_flight(params, cfg.t_final)?;
    let schedule_ref = QuenchSchedule::time_of_flight(&reference, cfg.t_final)?;
    let (a, b) = rayon::join(
        || evolve_observed(&with.final_state, params, &schedule, &opts, |_| {}),
        || evolve_observed(&without.final_state, &reference, &schedule_ref, &opts, |_| {}),
    );
    let (run, run_ref) = (a?, b?);
    record_failure(sink, "coupled expansion", &run.failure);
    record_failure(sink, "reference expansion", &run_ref.failure);
    sink.steps = with.iterations + without.iterations + run.series.steps + run_ref.series.steps;

    let ref_rows = run_ref.series.densities(Species::Condensate);
    let rows = run.series.len().min(ref_rows.len());
    let mut depleted = density_difference(&run.series, &ref_rows);
    depleted.truncate(rows);
    let written = io::write_snapshot_series(
        &run.series,
        &sink.dir,
        cfg.dt * cfg.snapshot_stride as f64,
        &series_parameters(cfg, params),
        &[("density_depleted", depleted)],
        sink.formats,
    )?;
    sink.files.extend(written);

    let w_b = width_series(&run.series, Species::Condensate)?;
    let w_i = width_series(&run.series, Species::Impurity)?;
    sink.csv(
        "widths.csv",
        &["t", "width_B", "width_I"],
        &[&w_b.times, &w_b.values, &w_i.values],
    )?;

    let mut m = relax_summary(&with, &without);
    let last_i = run.series.psi_i.last().expect("series starts with t = 0").density();
    m.insert("t_end".into(), json!(run.series.times.last()));
    m.insert(
        "impurity_fringes_final".into(),
        json!(observables::count_fringes(last_i.values())),
    );
    m.insert("width_b_final".into(), json!(w_b.values.last()));
    m.insert("width_i_final".into(), json!(w_i.values.last()));
    m.insert("snapshots".into(), json!(run.series.len()));
    Ok(Value::Object(m))
}

/// `A0` of the Gaussian-odd ansatz with the same `<z^2>` (`<z^2> = 1.5 A0^2`).
fn ansatz_width(series: &SnapshotSeries) -> f64 {
    let f = &series.psi_i[0];
    (f.moment(2) / f.norm2() / 1.5).sqrt()
}

fn quench_point(cfg: &RunConfig, params: &ModelParams, sink: &mut Sink) -> Result<Value> {
    let grid = grid_of(cfg)?;
    let (with, without) = relax_pair(cfg, &grid, params)?;
    sink.converged("coupled", with.converged);
    sink.converged("reference", without.converged);
    write_relaxed(sink, &with, &without)?;

    let opts = evolve_options(cfg);
    let schedule = QuenchSchedule::interspecies_quench(params, cfg.t_final, cfg.quench_g_after)?;
    let dz = grid.dz();
    let mut gradients: Vec<(f64, f64)> = Vec::new();
    let run = evolve_observed(&with.final_state, params, &schedule, &opts, |s| {
        if s.time < 2.0 * SHOCK_WINDOW {
            gradients.push((s.time, max_density_gradient(s.psi_b.density().values(), dz)));
        }
    })?;
    record_failure(sink, "quench evolution", &run.failure);
    sink.steps = with.iterations + without.iterations + run.series.steps;
    let series = &run.series;

    let n_ref = without.final_state.psi_b.density().into_values();
    let ref_rows = vec![n_ref.clone(); series.len()];
    let written = io::write_snapshot_series(
        series,
        &sink.dir,
        cfg.dt * cfg.snapshot_stride as f64,
        &series_parameters(cfg, params),
        &[("density_depleted", density_difference(series, &ref_rows))],
        sink.formats,
    )?;
    sink.files.extend(written);

    // gray solitons
    let tracks = track_minima(series, &TrackOptions::default());
    let min_duration = soliton_min_duration(cfg.t_final);
    let persistent = persistent_tracks(&tracks, min_duration);
    let (mut ids, mut tt, mut zz) = (Vec::new(), Vec::new(), Vec::new());
    for (id, t) in persistent.iter().enumerate() {
        for (time, z) in t.positions.times.iter().zip(&t.positions.values) {
            ids.push(id as f64);
            tt.push(*time);
            zz.push(*z);
        }
    }
    sink.csv("soliton_tracks.csv", &["track", "t", "z"], &[&ids, &tt, &zz])?;
    let track_info: Vec<Value> = persistent
        .iter()
        .map(|t| {
            json!({
                "t_start": t.positions.times[0],
                "t_end": t.positions.times.last(),
                "z_start": t.positions.values[0],
                "lost": t.lost,
                "frequency": dominant_frequency(&t.positions).ok(),
            })
        })
        .collect();

    // breathing
    let w_b = width_series(series, Species::Condensate)?;
    let w_i = width_series(series, Species::Impurity)?;
    sink.csv(
        "widths.csv",
        &["t", "width_B", "width_I"],
        &[&w_b.times, &w_b.values, &w_i.values],
    )?;
    let a0 = ansatz_width(series);
    let variational = variational_width(a0, params.alpha, &series.times)?;
    sink.csv(
        "variational_width.csv",
        &["t", "A_closed_form", "A_integrated"],
        &[
            &variational.closed_form.times,
            &variational.closed_form.values,
            &variational.integrated.values,
        ],
    )?;
    let breathing = dominant_frequency(&w_i).ok();
    let breathing_variational = dominant_frequency(&variational.integrated).ok();

    // shock and disturbance propagation
    let reference_gradient = max_density_gradient(&n_ref, dz);
    let shock = detect_shock(&gradients, reference_gradient, SHOCK_FACTOR, SHOCK_WINDOW);
    let centroid_values: Vec<f64> = series
        .psi_b
        .iter()
        .map(|f| disturbance_centroid(f.density().values(), &n_ref, grid.nodes()))
        .collect();
    let centroid = ObservableSeries::new("disturbance_centroid", series.times.clone(), centroid_values)?;
    sink.csv(
        "disturbance_centroid.csv",
        &["t", "z_centroid"],
        &[&centroid.times, &centroid.values],
    )?;
    let (gt, gv): (Vec<f64>, Vec<f64>) = gradients.iter().copied().unzip();
    sink.csv("max_gradient.csv", &["t", "max_abs_dn_dz"], &[&gt, &gv])?;

    let last_i = series.psi_i.last().expect("series starts with t = 0").density();
    let mut m = relax_summary(&with, &without);
    m.insert("g_after".into(), json!(cfg.quench_g_after));
    m.insert("t_end".into(), json!(series.times.last()));
    m.insert("snapshots".into(), json!(series.len()));
    m.insert("track_min_duration".into(), json!(min_duration));
    m.insert("all_tracks".into(), json!(tracks.len()));
    m.insert("n_solitons".into(), json!(persistent.len()));
    m.insert("soliton_tracks".into(), Value::Array(track_info));
    m.insert("breathing_frequency".into(), json!(breathing));
    m.insert("variational_a0".into(), json!(a0));
    m.insert("variational_frequency".into(), json!(breathing_variational));
    m.insert("variational_ode_discrepancy".into(), json!(variational.max_discrepancy));
    m.insert(
        "shock".into(),
        json!({
            "reference_gradient": shock.reference_gradient,
            "peak_gradient": shock.peak_gradient,
            "factor": shock.factor,
            "window": shock.window,
            "trip_time": shock.trip_time,
            "tripped": shock.tripped(),
        }),
    );
    m.insert("disturbance_reflects".into(), json!(reflects_and_recollides(&centroid)));
    m.insert(
        "impurity_fringes_final".into(),
        json!(observables::count_fringes(last_i.values())),
    );
    Ok(Value::Object(m))
}

/// A track counts as a soliton once it has been followed for most of one
/// trap oscillation at `omega_z / sqrt(2)`, or half the run if shorter.
pub fn soliton_min_duration(t_final: f64) -> f64 {
    let period = 2.0 * std::f64::consts::PI * 2f64.sqrt();
    (0.75 * period).min(0.5 * t_final)
}

fn point_label(prefix: &str, v: f64) -> String {
    format!("{prefix}_{v}")
}

/// Runs `point` for every scan value in its own subdirectory, concurrently.
fn run_points(
    cfg: &RunConfig,
    sink: &mut Sink,
    prefix: &str,
    values: &[f64],
    point: impl Fn(&RunConfig, f64, &mut Sink) -> Result<Value> + Sync,
) -> Result<Vec<Value>> {
    let results: Vec<Result<(String, Sink, Value)>> = values
        .par_iter()
        .map(|&v| {
            let label = point_label(prefix, v);
            let mut child = Sink::new(&sink.dir.join(&label), cfg)?;
            let mut summary = point(cfg, v, &mut child)?;
            if let Value::Object(m) = &mut summary {
                m.insert("status".into(), json!(child.status.as_str()));
            }
            child.json("summary.json", &summary)?;
            let plots = emit_plot_data(&child.dir)?;
            child.files.extend(plots);
            Ok((label, child, summary))
        })
        .collect();
    let mut summaries = Vec::with_capacity(results.len());
    for r in results {
        let (label, child, summary) = r?;
        sink.absorb(&label, child);
        summaries.push(summary);
    }
    Ok(summaries)
}

fn field(v: &Value, key: &str) -> f64 {
    v[key].as_f64().unwrap_or(f64::NAN)
}

fn mean_track_frequency(v: &Value) -> f64 {
    let freqs: Vec<f64> = v["soliton_tracks"]
        .as_array()
        .map(|a| a.iter().filter_map(|t| t["frequency"].as_f64()).collect())
        .unwrap_or_default();
    if freqs.is_empty() {
        f64::NAN
    } else {
        freqs.iter().sum::<f64>() / freqs.len() as f64
    }
}

fn run_quench_scan(cfg: &RunConfig, sink: &mut Sink) -> Result<Value> {
    let values = cfg.scan_g_ib.clone();
    let points = run_points(cfg, sink, "g_ib", &values, |cfg, g, child| {
        quench_point(cfg, &cfg.params.with_g_ib(g), child)
    })?;
    let col = |k: &str| points.iter().map(|p| field(p, k)).collect::<Vec<f64>>();
    let tracks: Vec<f64> = col("n_solitons");
    let freq: Vec<f64> = points.iter().map(mean_track_frequency).collect();
    sink.csv(
        "scan.csv",
        &[
            "g_IB",
            "n_solitons",
            "soliton_frequency",
            "breathing_frequency",
            "impurity_fringes_final",
        ],
        &[
            &values,
            &tracks,
            &freq,
            &col("breathing_frequency"),
            &col("impurity_fringes_final"),
        ],
    )?;
    Ok(json!({ "points": points }))
}

fn run_mass_scan(cfg: &RunConfig, sink: &mut Sink) -> Result<Value> {
    let values = cfg.scan_alpha.clone();
    let points = run_points(cfg, sink, "alpha", &values, |cfg, a, child| {
        let params = ModelParams {
            alpha: a,
            ..cfg.params.clone()
        };
        quench_point(cfg, &params, child)
    })?;
    let col = |k: &str| points.iter().map(|p| field(p, k)).collect::<Vec<f64>>();
    let freq: Vec<f64> = points.iter().map(mean_track_frequency).collect();
    sink.csv(
        "scan.csv",
        &[
            "alpha",
            "n_solitons",
            "soliton_frequency",
            "breathing_frequency",
            "impurity_fringes_final",
        ],
        &[
            &values,
            &col("n_solitons"),
            &freq,
            &col("breathing_frequency"),
            &col("impurity_fringes_final"),
        ],
    )?;
    Ok(json!({ "points": points }))
}

/// Slope magnitude of `y(x)` between the scan points closest to `x0` and `x1`.
fn rate_between(x: &[f64], y: &[f64], x0: f64, x1: f64) -> Option<f64> {
    let at = |target: f64| x.iter().position(|&v| (v - target).abs() < 1e-9).map(|i| y[i]);
    Some(((at(x1)? - at(x0)?) / (x1 - x0)).abs())
}

fn run_coupling_scan(cfg: &RunConfig, sink: &mut Sink) -> Result<Value> {
    let values = cfg.scan_g_ib.clone();
    let grid = grid_of(cfg)?;
    let points = run_points(cfg, sink, "g_ib", &values, |cfg, g, child| {
        let params = cfg.params.with_g_ib(g);
        let report = relax_coupled(&params, &grid, &cfg.relax)?;
        child.converged("coupled", report.converged);
        child.steps = report.iterations;
        let n_b = report.final_state.psi_b.density().into_values();
        let n_i = report.final_state.psi_i.density().into_values();
        child.csv("relaxed_fields.csv", &["z", "n_B", "n_I"], &[grid.nodes(), &n_b, &n_i])?;
        let e = report.final_energy().expect("trace is never empty");
        Ok(json!({
            "g_ib": g,
            "coupling_ib": params.coupling_ib(),
            "coupling_bi": params.coupling_bi(),
            "e_b": e.e_b,
            "e_i": e.e_i,
            "converged": report.converged,
            "m_eff_ratio": effective_mass_ratio(&report.final_state.psi_i, params.alpha).ok(),
        }))
    })?;
    let ratio: Vec<f64> = points.iter().map(|p| field(p, "m_eff_ratio")).collect();
    let converged: Vec<f64> = points
        .iter()
        .map(|p| {
            if p["converged"].as_bool() == Some(true) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    sink.csv(
        "scan.csv",
        &["g_IB", "m_eff_ratio", "converged"],
        &[&values, &ratio, &converged],
    )?;
    for p in &points {
        sink.convergence.insert(
            format!("g_ib_{}", field(p, "g_ib")),
            p["converged"].as_bool() == Some(true),
        );
    }

    let (sx, sy): (Vec<f64>, Vec<f64>) = values
        .iter()
        .zip(&ratio)
        .filter(|(g, r)| g.abs() <= 10.0 && r.is_finite())
        .map(|(g, r)| (*g, *r))
        .unzip();
    let fit = observables::fit_quadratic(&sx, &sy).ok();
    let low = rate_between(&values, &ratio, 0.0, 20.0);
    let high = rate_between(&values, &ratio, 80.0, 100.0);
    Ok(json!({
        "points": points,
        "small_coupling_fit": fit.map(|f| json!({"c0": f.c0, "c1": f.c1, "c2": f.c2, "r_squared": f.r_squared})),
        "rate_0_20": low,
        "rate_80_100": high,
        "saturation_ratio": match (low, high) { (Some(l), Some(h)) if l > 0.0 => Some(h / l), _ => None },
    }))
}

fn run_zeno(cfg: &RunConfig, sink: &mut Sink) -> Result<Value> {
    let grid = grid_of(cfg)?;
    let free = cfg.durability;
    let projected = crate::stationary::DurabilityOptions {
        zeno: true,
        tau_max: cfg.tau_max_projected,
        ..free
    };
    let (a, b) = rayon::join(
        || zeno_durability_experiment(&grid, &free),
        || zeno_durability_experiment(&grid, &projected),
    );
    let (trace, trace_zeno) = (a?, b?);
    sink.steps = ((free.tau_max + projected.tau_max) / free.dtau).round() as usize;
    let split = |t: &[(f64, f64)]| -> (Vec<f64>, Vec<f64>) { t.iter().copied().unzip() };
    let (tau, e) = split(&trace);
    let (tau_z, e_z) = split(&trace_zeno);
    sink.csv("energy_trace_free.csv", &["tau", "E_I"], &[&tau, &e])?;
    sink.csv("energy_trace_zeno.csv", &["tau", "E_I"], &[&tau_z, &e_z])?;
    let last = |v: &[f64]| v.last().copied().unwrap_or(f64::NAN);
    let max_dev = e_z.iter().map(|v| (v - 1.5).abs()).fold(0.0, f64::max);
    Ok(json!({
        "alpha": free.alpha,
        "dtau": free.dtau,
        "seed_amplitude": free.seed_amplitude,
        "free_final_energy": last(&e),
        "free_decay_onset": decay_onset(&trace, 1.0),
        "zeno_final_energy": last(&e_z),
        "zeno_max_deviation": max_dev,
        "zeno_tau_max": projected.tau_max,
    }))
}

fn run_analyze(cfg: &RunConfig, sink: &mut Sink) -> Result<Value> {
    let report = analytics::analyze(&cfg.phys, &cfg.constants).map_err(|e| Error::Config(e.to_string()))?;
    sink.text("analytics.txt", &report.to_text())?;
    let json = report.to_json();
    sink.json("analytics.json", &json)?;
    sink.notes.extend(report.warnings.iter().cloned());
    Ok(json)
}

fn read_matrix_any(dir: &Path, stem: &str) -> Result<Option<Vec<Vec<f64>>>> {
    let bin = dir.join(format!("{stem}.bin"));
    if bin.exists() {
        let m = io::read_binary_matrix(&bin)?;
        return Ok(Some((0..m.rows).map(|i| m.row(i).to_vec()).collect()));
    }
    let csv = dir.join(format!("{stem}.csv"));
    if csv.exists() {
        return Ok(Some(io::read_text_matrix(&csv)?));
    }
    Ok(None)
}

fn header_value(header: &str, key: &str) -> Option<String> {
    header
        .lines()
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == key)
        .map(|(_, v)| v.trim().to_string())
}

/// Derives plot files from the raw outputs in `run_dir`:
///
/// - `fig1_density_cut.csv` (`z, n_B, n_I`) from a relaxation,
/// - `spacetime_<field>.csv` (first row `t` then the nodes, one row per
///   snapshot) from a snapshot series,
/// - `fig5_energy_trace.csv` (`i_tau, E_I`) from a durability run,
/// - `fig6_effective_mass.csv` (`g_IB, m_eff_ratio`) from a coupling scan.
pub fn emit_plot_data(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut found = false;

    let relaxed = run_dir.join("relaxed_fields.csv");
    if relaxed.exists() {
        found = true;
        let (header, cols) = io::read_csv(&relaxed)?;
        let col = |name: &str| -> Result<&Vec<f64>> {
            header
                .iter()
                .position(|h| h == name)
                .map(|i| &cols[i])
                .ok_or_else(|| Error::Format {
                    path: relaxed.clone(),
                    reason: format!("missing column {name}"),
                })
        };
        let p = run_dir.join("fig1_density_cut.csv");
        io::write_csv(&p, &["z", "n_B", "n_I"], &[col("z")?, col("n_B")?, col("n_I")?])?;
        written.push(p);
    }

    let header_path = run_dir.join(io::SNAPSHOT_HEADER);
    if header_path.exists() {
        found = true;
        let header = fs::read_to_string(&header_path)?;
        let bad = |reason: &str| Error::Format {
            path: header_path.clone(),
            reason: reason.to_string(),
        };
        let times: Vec<f64> = header_value(&header, "times")
            .ok_or_else(|| bad("no times"))?
            .split(',')
            .map(|s| s.parse::<f64>().map_err(|_| bad("bad time value")))
            .collect::<Result<_>>()?;
        let n: usize = header_value(&header, "n_points")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("no n_points"))?;
        let l: f64 = header_value(&header, "half_width")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("no half_width"))?;
        let grid = Grid1D::new(n, l)?;
        for stem in ["density_bec", "density_impurity", "density_depleted"] {
            let Some(rows) = read_matrix_any(run_dir, stem)? else {
                if stem == "density_depleted" {
                    continue;
                }
                return Err(Error::MissingInput(run_dir.join(format!("{stem}.bin"))));
            };
            let p = run_dir.join(format!("spacetime_{stem}.csv"));
            io::write_atomic(&p, |w| {
                use std::io::Write;
                let nodes: Vec<String> = grid.nodes().iter().map(|z| z.to_string()).collect();
                writeln!(w, "t,{}", nodes.join(","))?;
                for (t, row) in times.iter().zip(&rows) {
                    let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                    writeln!(w, "{t},{}", vals.join(","))?;
                }
                Ok(())
            })?;
            written.push(p);
        }
    }

    let free = run_dir.join("energy_trace_free.csv");
    if free.exists() {
        found = true;
        let (_, cols) = io::read_csv(&free)?;
        let p = run_dir.join("fig5_energy_trace.csv");
        io::write_csv(&p, &["i_tau", "E_I"], &[&cols[0], &cols[1]])?;
        written.push(p);
    }

    let scan = run_dir.join("scan.csv");
    if scan.exists() {
        found = true;
        let (header, cols) = io::read_csv(&scan)?;
        if header.first().map(String::as_str) == Some("g_IB")
            && header.get(1).map(String::as_str) == Some("m_eff_ratio")
        {
            let p = run_dir.join("fig6_effective_mass.csv");
            io::write_csv(&p, &["g_IB", "m_eff_ratio"], &[&cols[0], &cols[1]])?;
            written.push(p);
        }
    }

    if !found && !run_dir.join("analytics.json").exists() {
        return Err(Error::MissingInput(run_dir.join("relaxed_fields.csv")));
    }
    Ok(written)
}

/// Reads a binary density matrix written by a run.
pub fn load_density_matrix(run_dir: &Path, stem: &str) -> Result<Matrix> {
    io::read_binary_matrix(&run_dir.join(format!("{stem}.bin")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(pairs: &[(&str, &str)]) -> RunConfig {
        let mut all = vec![
            ("grid.n_points", "256"),
            ("grid.half_width", "10"),
            ("relax.tol", "1e-6"),
            ("relax.max_iters", "20000"),
            ("run.t_final", "0.5"),
            ("run.dt", "1e-3"),
            ("run.snapshot_stride", "50"),
        ];
        all.extend_from_slice(pairs);
        RunConfig::from_pairs(&all).unwrap()
    }

    #[test]
    fn relax_writes_manifest_last() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(&[("scenario", "relax"), ("params.g_ib", "5")]);
        let out = run(&cfg, dir.path()).unwrap();
        assert_eq!(out.status, RunStatus::Ok);
        assert!(dir.path().join("fig1_density_cut.csv").exists());
        let doc = io::verify_manifest(dir.path()).unwrap();
        assert!(doc["files"]["fig1_density_cut.csv"].is_string());
        assert!(doc["files"]["summary.json"].is_string());
        assert!(out.summary["imprint"].is_object());
    }

    #[test]
    fn tof_matrix_shape() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(&[("scenario", "tof"), ("params.g_ib", "5")]);
        run(&cfg, dir.path()).unwrap();
        let m = load_density_matrix(dir.path(), "density_bec").unwrap();
        // t_final / (dt stride) + 1
        assert_eq!((m.rows, m.cols), (11, 256));
        assert!((m.dt_snapshot - 0.05).abs() < 1e-15);
        let text = io::read_text_matrix(&dir.path().join("density_depleted.csv")).unwrap();
        let bin = load_density_matrix(dir.path(), "density_depleted").unwrap();
        for (i, row) in text.iter().enumerate() {
            assert_eq!(row.as_slice(), bin.row(i));
        }
        assert!(dir.path().join("spacetime_density_impurity.csv").exists());
    }

    #[test]
    fn unconverged_relaxation_is_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(&[
            ("scenario", "relax"),
            ("relax.max_iters", "200"),
            ("relax.tol", "1e-14"),
        ]);
        let out = run(&cfg, dir.path()).unwrap();
        assert_eq!(out.status, RunStatus::Unconverged);
        assert_eq!(out.status.exit_code(), 4);
        assert!(dir.path().join("manifest.json").exists());
    }

    #[test]
    fn blow_up_keeps_partial_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(&[
            ("scenario", "quench"),
            ("params.g_b", "-1e300"),
            ("relax.max_iters", "100"),
            ("run.dt", "1e-3"),
            ("run.t_final", "0.05"),
            ("run.snapshot_stride", "1"),
        ]);
        let out = run(&cfg, dir.path());
        // the relaxation itself may already fail on such input
        match out {
            Ok(o) => {
                assert_eq!(o.status, RunStatus::BlowUp);
                assert!(dir.path().join("manifest.json").exists());
            }
            Err(e) => assert!(matches!(e, Error::NonFinite { .. }), "{e}"),
        }
    }

    #[test]
    fn coupling_scan_aggregates() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(&[("scenario", "coupling_scan"), ("scan.g_ib", "-2, 0, 2")]);
        let out = run(&cfg, dir.path()).unwrap();
        let (h, cols) = io::read_csv(&dir.path().join("fig6_effective_mass.csv")).unwrap();
        assert_eq!(h, vec!["g_IB", "m_eff_ratio"]);
        assert_eq!(cols[0], vec![-2.0, 0.0, 2.0]);
        assert!((cols[1][1] - 1.0 / 3.0).abs() < 1e-3);
        assert!(dir.path().join("g_ib_2/relaxed_fields.csv").exists());
        assert!(out.summary["small_coupling_fit"].is_object());
        io::verify_manifest(dir.path()).unwrap();
    }

    #[test]
    fn analyze_report() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(&[("scenario", "analyze")]);
        let out = run(&cfg, dir.path()).unwrap();
        assert_eq!(out.summary["entries"]["gamma"]["mismatch"], json!(true));
        assert!(dir.path().join("analytics.txt").exists());
    }

    #[test]
    fn plot_data_needs_inputs() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(emit_plot_data(dir.path()), Err(Error::MissingInput(_))));
    }
}
