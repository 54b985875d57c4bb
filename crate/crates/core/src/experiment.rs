//! Monte Carlo sweeps: every scheme on the same channel draws, one axis
//! varied at a time, with per-row records and per-cell summaries.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::generate_channels;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::rates::PhaseVector;
use crate::schemes::{solve_scheme, SchemeId};

/// Normal quantile used for the reported confidence half-widths.
pub const Z95: f64 = 1.96;

pub const DEFAULT_DRAWS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Far-user rate target in bits/s/Hz.
    RateThresholdFar,
    /// Number of surface elements.
    RisElements,
    /// x coordinate of the surface in meters.
    RisXPosition,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::RateThresholdFar => "rate_threshold_far",
            Axis::RisElements => "ris_elements",
            Axis::RisXPosition => "ris_x_position",
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &SystemConfig, value: f64) -> Result<SystemConfig> {
        let mut cfg = base.clone();
        match self {
            Axis::RateThresholdFar => cfg.rate_thresholds[1] = value,
            Axis::RisElements => {
                if !(value >= 0.0 && value.fract() == 0.0) {
                    return Err(Error::Config(format!("{value} is not an element count")));
                }
                cfg.n_ris_elements = value as usize;
            }
            Axis::RisXPosition => cfg.pos_ris[0] = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn default_schemes() -> Vec<SchemeId> {
    SchemeId::ALL.to_vec()
}

fn default_draws() -> usize {
    DEFAULT_DRAWS
}

/// One sweep as read from a spec file. The seed is `system.rng_seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub axis: Axis,
    pub values: Vec<f64>,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<SchemeId>,
    #[serde(default = "default_draws")]
    pub n_channel_draws: usize,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses the global pool.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub system: SystemConfig,
}

impl ExperimentSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("name must be a non-empty file stem");
        }
        if self.values.is_empty() {
            return bad("axis values are empty");
        }
        if self.values.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("axis values must be strictly increasing");
        }
        if self.schemes.is_empty() {
            return bad("scheme list is empty");
        }
        let mut seen = self.schemes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.schemes.len() {
            return bad("scheme list has duplicates");
        }
        if self.n_channel_draws == 0 {
            return bad("n_channel_draws must be at least 1");
        }
        self.system.validate()?;
        for &v in &self.values {
            self.axis.apply(&self.system, v)?;
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.system.rng_seed
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Infeasible,
    NumericalFailure,
}

/// One (scheme, axis value, draw) outcome. Wall time is kept out of the
/// serialized table so that repeated runs compare byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scheme: SchemeId,
    pub axis_value: f64,
    pub draw: usize,
    pub seed: u64,
    pub status: RowStatus,
    pub energy_watts: Option<f64>,
    pub best_delta: Option<f64>,
    pub ao_iterations: Option<usize>,
    pub converged: Option<bool>,
    pub audit_passed: Option<bool>,
    pub channel_digest: String,
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Serialize)]
struct TimingRow {
    scheme: SchemeId,
    axis_value: f64,
    draw: usize,
    wall_time_s: f64,
}

/// Channel and initial-phase generator for draw `draw`. The stream depends on
/// the draw only, so every axis value sees the same fading realization, and a
/// smaller surface sees a prefix of a larger one.
pub fn draw_rng(seed: u64, draw: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw as u64);
    rng
}

fn run_cell(spec: &ExperimentSpec, value: f64, draw: usize) -> Result<Vec<ResultRow>> {
    let cfg = spec.axis.apply(&spec.system, value)?;
    let p = cfg.params();
    let mut rng = draw_rng(spec.seed(), draw);
    let ch = generate_channels(&p, &mut rng)?;
    let theta0 = PhaseVector::random(p.n_ris, &mut rng);
    let digest = ch.digest();
    let mut rows = Vec::with_capacity(spec.schemes.len());
    for &scheme in &spec.schemes {
        let t = Instant::now();
        let out = solve_scheme(scheme, &ch, &p, &theta0);
        let mut row = ResultRow {
            scheme,
            axis_value: value,
            draw,
            seed: spec.seed(),
            status: RowStatus::Ok,
            energy_watts: None,
            best_delta: None,
            ao_iterations: None,
            converged: None,
            audit_passed: None,
            channel_digest: digest.clone(),
            wall_time_s: 0.0,
        };
        match out {
            Ok(res) => match &res.result.best {
                Some(run) => {
                    row.energy_watts = Some(run.energy);
                    row.best_delta = Some(run.delta);
                    row.ao_iterations = Some(run.trace.len() - 1);
                    row.converged = Some(run.converged);
                    row.audit_passed = res.audit.as_ref().map(|a| a.passed());
                }
                None => row.status = RowStatus::Infeasible,
            },
            Err(e) if e.is_numerical_failure() => {
                log::warn!("{scheme} at {}={value}, draw {draw}: {e}", spec.axis.name());
                row.status = RowStatus::NumericalFailure;
            }
            Err(e) => return Err(e),
        }
        row.wall_time_s = t.elapsed().as_secs_f64();
        rows.push(row);
    }
    log::info!("{}: {}={value} draw {draw} done", spec.name, spec.axis.name());
    Ok(rows)
}

/// Solve every cell of the sweep without touching the filesystem. Rows come
/// out ordered by axis value, then draw, then scheme list order.
pub fn run_rows(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let cells: Vec<(f64, usize)> = spec
        .values
        .iter()
        .flat_map(|&v| (0..spec.n_channel_draws).map(move |d| (v, d)))
        .collect();
    let work = || -> Result<Vec<Vec<ResultRow>>> { cells.par_iter().map(|&(v, d)| run_cell(spec, v, d)).collect() };
    let nested = if spec.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(spec.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work)?
    } else {
        work()?
    };
    Ok(nested.into_iter().flatten().collect())
}

/// Mean energy and spread for one (scheme, axis value) cell. Infeasible and
/// failed draws are excluded from the mean and counted separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub scheme: SchemeId,
    pub axis_value: f64,
    pub n_draws: usize,
    pub n_feasible: usize,
    pub n_numerical_failure: usize,
    pub mean_energy: Option<f64>,
    /// Half-width `1.96 s / sqrt(n)` with the sample standard deviation.
    pub ci95: Option<f64>,
    pub infeasible_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub axis: Axis,
    pub schemes: Vec<SchemeId>,
    pub values: Vec<f64>,
    /// Ordered by axis value, then scheme list order.
    pub cells: Vec<SummaryCell>,
}

impl Summary {
    pub fn cell(&self, scheme: SchemeId, value: f64) -> Option<&SummaryCell> {
        self.cells.iter().find(|c| c.scheme == scheme && c.axis_value == value)
    }

    /// Mean energies of `scheme` along the axis.
    pub fn series(&self, scheme: SchemeId) -> Vec<Option<f64>> {
        self.values
            .iter()
            .map(|&v| self.cell(scheme, v).and_then(|c| c.mean_energy))
            .collect()
    }
}

pub fn summarize_cell(scheme: SchemeId, axis_value: f64, rows: &[&ResultRow]) -> SummaryCell {
    let energies: Vec<f64> = rows.iter().filter_map(|r| r.energy_watts).collect();
    let n = energies.len();
    let mean = (n > 0).then(|| energies.iter().sum::<f64>() / n as f64);
    let ci95 = mean.map(|m| {
        if n < 2 {
            0.0
        } else {
            let var = energies.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            Z95 * var.sqrt() / (n as f64).sqrt()
        }
    });
    let infeasible = rows.iter().filter(|r| r.status == RowStatus::Infeasible).count();
    SummaryCell {
        scheme,
        axis_value,
        n_draws: rows.len(),
        n_feasible: n,
        n_numerical_failure: rows.iter().filter(|r| r.status == RowStatus::NumericalFailure).count(),
        mean_energy: mean,
        ci95,
        infeasible_fraction: if rows.is_empty() { 0.0 } else { infeasible as f64 / rows.len() as f64 },
    }
}

/// Group rows by (axis value, scheme). Schemes and values are listed in
/// order of first appearance.
pub fn summarize(axis: Axis, rows: &[ResultRow]) -> Summary {
    let mut schemes = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for r in rows {
        if !schemes.contains(&r.scheme) {
            schemes.push(r.scheme);
        }
        if !values.contains(&r.axis_value) {
            values.push(r.axis_value);
        }
    }
    let mut cells = Vec::with_capacity(values.len() * schemes.len());
    for &v in &values {
        for &s in &schemes {
            let group: Vec<&ResultRow> = rows.iter().filter(|r| r.scheme == s && r.axis_value == v).collect();
            cells.push(summarize_cell(s, v, &group));
        }
    }
    Summary {
        axis,
        schemes,
        values,
        cells,
    }
}

fn opt_field(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Plot-ready CSV: the axis value, one mean-energy column per scheme, then
/// the matching `_ci95` and `_infeasible` columns. Empty cells stay blank.
pub fn emit_plot_data(summary: &Summary, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec![summary.axis.name().to_string()];
    header.extend(summary.schemes.iter().map(|s| s.name().to_string()));
    header.extend(summary.schemes.iter().map(|s| format!("{}_ci95", s.name())));
    header.extend(summary.schemes.iter().map(|s| format!("{}_infeasible", s.name())));
    w.write_record(&header).map_err(csv_err)?;
    for &v in &summary.values {
        let cells: Vec<Option<&SummaryCell>> = summary.schemes.iter().map(|&s| summary.cell(s, v)).collect();
        let mut rec = vec![v.to_string()];
        rec.extend(cells.iter().map(|c| opt_field(c.and_then(|c| c.mean_energy))));
        rec.extend(cells.iter().map(|c| opt_field(c.and_then(|c| c.ci95))));
        rec.extend(cells.iter().map(|c| opt_field(c.map(|c| c.infeasible_fraction))));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// One parsed line of a plot file.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotRow {
    pub axis_value: f64,
    pub mean: Vec<Option<f64>>,
    pub ci95: Vec<Option<f64>>,
    pub infeasible: Vec<Option<f64>>,
}

/// Read back a file written by [`emit_plot_data`]: the header, then rows.
pub fn read_plot_data(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<PlotRow>)> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let k = (header.len().saturating_sub(1)) / 3;
    if header.len() != 3 * k + 1 {
        return Err(Error::Config(format!("plot header has {} columns", header.len())));
    }
    let parse = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| Error::Config(format!("bad number {s:?}")))
        }
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let f: Vec<Option<f64>> = rec.iter().map(parse).collect::<Result<_>>()?;
        rows.push(PlotRow {
            axis_value: f[0].ok_or_else(|| Error::Config("missing axis value".into()))?,
            mean: f[1..1 + k].to_vec(),
            ci95: f[1 + k..1 + 2 * k].to_vec(),
            infeasible: f[1 + 2 * k..].to_vec(),
        });
    }
    Ok((header, rows))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// What [`run_experiment`] wrote and computed.
#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub rows: Vec<ResultRow>,
    pub summary: Summary,
    pub results_path: PathBuf,
    pub summary_path: PathBuf,
    pub plot_path: PathBuf,
    pub timings_path: PathBuf,
}

impl ExperimentReport {
    pub fn numerical_failures(&self) -> usize {
        self.rows.iter().filter(|r| r.status == RowStatus::NumericalFailure).count()
    }
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    experiment: &'a str,
    n_channel_draws: usize,
    seed: u64,
    ci_method: &'static str,
    infeasible_handling: &'static str,
    summary: &'a Summary,
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(&it)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Run the sweep and write `results.jsonl`, `timings.jsonl`, `summary.json`
/// and `<name>.csv` under the output directory.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    fs::create_dir_all(&spec.output_dir)?;
    let results_path = spec.output_dir.join("results.jsonl");
    // fail before the long part if the directory is not writable
    fs::write(&results_path, "")?;

    let rows = run_rows(spec)?;
    let summary = summarize(spec.axis, &rows);

    write_jsonl(&results_path, &rows)?;
    let timings_path = spec.output_dir.join("timings.jsonl");
    write_jsonl(
        &timings_path,
        rows.iter().map(|r| TimingRow {
            scheme: r.scheme,
            axis_value: r.axis_value,
            draw: r.draw,
            wall_time_s: r.wall_time_s,
        }),
    )?;
    let summary_path = spec.output_dir.join("summary.json");
    let file = SummaryFile {
        experiment: &spec.name,
        n_channel_draws: spec.n_channel_draws,
        seed: spec.seed(),
        ci_method: "normal approximation, 1.96 * sample sd / sqrt(feasible draws)",
        infeasible_handling: "excluded from means, reported as a fraction",
        summary: &summary,
    };
    fs::write(&summary_path, serde_json::to_string_pretty(&file)? + "\n")?;
    let plot_path = spec.output_dir.join(format!("{}.csv", spec.name));
    emit_plot_data(&summary, &plot_path)?;

    Ok(ExperimentReport {
        rows,
        summary,
        results_path,
        summary_path,
        plot_path,
        timings_path,
    })
}

/// Read a `results.jsonl` table.
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
