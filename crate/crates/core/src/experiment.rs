//! Seeded experiment runs: phantom → measurements → phasors → propagation
//! → refinement → metrics, with CSV rows and `meta.json` provenance.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::{extract_phasors, DEFAULT_RELIABILITY_FLOOR};
use crate::field::{centered_origin, BoundaryMode, Grid, Mask, ShiftSet};
use crate::forward::simulate_shifted_with;
use crate::metrics::{error_vs_hop, phase_error, HopBin};
use crate::noise::{NoiseModel, NoiseSpec};
use crate::phantoms::{generate, AmplitudeSource, PhantomSpec, PhaseProfile};
use crate::propagate::{propagate_bfs, propagate_wavefront, AveragingMode, PropagationResult};
use crate::refine::{refine_pipeline, DEFAULT_LAMBDA};
use crate::shiftgraph::{plan_2d, SweepNoise};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    Bfs,
    #[default]
    Wavefront,
}

/// Every field has a default, and the resolved config is echoed into
/// `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub phantom: PhaseProfile,
    pub amplitude: AmplitudeSource,
    pub height: usize,
    pub width: usize,
    /// Number of shift magnitudes handed to the planner (1, 2, 4 or 8).
    pub shift_count: usize,
    /// Explicit shifts; overrides `shift_count` when present.
    pub shifts: Option<ShiftSet>,
    pub noise: NoiseModel,
    pub snr_db: Option<f64>,
    pub read_sigma_fraction: f64,
    pub seeds: Vec<u64>,
    pub averaging: AveragingMode,
    pub engine: Engine,
    pub refine: bool,
    pub lambda: f64,
    pub reliability_floor: f64,
    pub boundary: BoundaryMode,
    /// Reference pixel; the grid center when absent.
    pub reference: Option<(usize, usize)>,
    /// Restrict the error metric to pixels whose true amplitude exceeds
    /// this value; all pixels when absent.
    pub mask_threshold: Option<f64>,
    /// Write per-seed SRWF artifacts under `seed_<n>/`.
    pub save_fields: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            phantom: PhaseProfile::from_name("quadratic").expect("builtin"),
            amplitude: AmplitudeSource::Uniform,
            height: 128,
            width: 128,
            shift_count: 2,
            shifts: None,
            noise: NoiseModel::PoissonGaussian,
            snr_db: Some(22.0),
            read_sigma_fraction: 0.01,
            seeds: vec![0],
            averaging: AveragingMode::Mean,
            engine: Engine::Wavefront,
            refine: true,
            lambda: DEFAULT_LAMBDA,
            reliability_floor: DEFAULT_RELIABILITY_FLOOR,
            boundary: BoundaryMode::Circular,
            reference: None,
            mask_threshold: None,
            save_fields: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn noiseless(mut self) -> Self {
        self.noise = NoiseModel::None;
        self.snr_db = None;
        self
    }

    pub fn resolved_shifts(&self) -> Result<ShiftSet> {
        match &self.shifts {
            Some(s) => Ok(s.clone()),
            None => plan_2d(self.height, self.width, self.shift_count),
        }
    }

    pub fn noise_spec(&self, seed: u64) -> Result<NoiseSpec> {
        Ok(match self.noise {
            NoiseModel::None => NoiseSpec::none().with_seed(seed),
            NoiseModel::Gaussian => NoiseSpec::gaussian(self.required_snr()?, seed),
            NoiseModel::PoissonGaussian => NoiseSpec::poisson_gaussian(self.required_snr()?, self.read_sigma_fraction, seed),
        })
    }

    fn required_snr(&self) -> Result<f64> {
        self.snr_db
            .ok_or_else(|| Error::InvalidParameter("noise model needs snr_db".into()))
    }

    /// `magnitudes × directions × 4`.
    pub fn n_meas(&self, shifts: &ShiftSet) -> usize {
        4 * shifts.len()
    }

    pub fn snr_label(&self) -> String {
        match (self.noise, self.snr_db) {
            (NoiseModel::None, _) | (_, None) => "inf".into(),
            (_, Some(s)) => format!("{s}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub mean_abs_error: f64,
    pub std: f64,
    pub refined_error: Option<f64>,
    pub refined_std: Option<f64>,
    pub achieved_snr_db: f64,
    pub max_hop: Option<u32>,
    pub reached_fraction: f64,
    pub per_hop: Vec<HopBin>,
    pub iterations: u32,
}

/// One CSV row: a single scalar with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CsvRow {
    pub metric: String,
    pub phantom: String,
    pub shifts: String,
    pub snr_db: String,
    pub n_meas: usize,
    pub seed: u64,
    pub value: f64,
    pub status: String,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub rows: Vec<CsvRow>,
    pub results: Vec<std::result::Result<SeedResult, String>>,
    /// Wall-clock seconds per seed; kept out of the CSV so rows stay
    /// reproducible.
    pub timings: Vec<(u64, f64)>,
}

impl RunOutput {
    pub fn all_ok(&self) -> bool {
        self.results.iter().all(|r| r.is_ok())
    }

    pub fn successes(&self) -> impl Iterator<Item = &SeedResult> {
        self.results.iter().filter_map(|r| r.as_ref().ok())
    }

    pub fn mean_error(&self) -> Option<f64> {
        mean(self.successes().map(|r| r.mean_abs_error))
    }

    pub fn mean_refined_error(&self) -> Option<f64> {
        mean(self.successes().filter_map(|r| r.refined_error))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = it.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Everything the pipeline produced for one seed.
pub struct SeedArtifacts {
    pub result: SeedResult,
    pub truth: crate::field::PhaseMap,
    pub propagation: PropagationResult,
    pub refined: Option<crate::refine::Refined>,
}

pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedArtifacts> {
    let phantom = generate(&PhantomSpec {
        profile: config.phantom.clone(),
        height: config.height,
        width: config.width,
        amplitude: config.amplitude.clone(),
        seed,
    })?;
    let shifts = config.resolved_shifts()?;
    let noise = config.noise_spec(seed)?;
    let stack = simulate_shifted_with(&phantom.field, &shifts, &noise, config.boundary)?;
    let phasors = extract_phasors(&stack, config.reliability_floor)?;
    let reference = config.reference.unwrap_or(centered_origin(config.height, config.width));
    let propagation = match config.engine {
        Engine::Bfs => propagate_bfs(&phasors, reference, config.averaging)?,
        Engine::Wavefront => propagate_wavefront(&phasors, reference, config.averaging)?,
    };
    let mask = config.mask_threshold.map(|t| amplitude_mask(&phantom.amplitude, t));
    let report = phase_error(&propagation.phasors, &phantom.phase, mask.as_ref())?;
    let per_hop = error_vs_hop(&propagation.phasors, &phantom.phase, &propagation.hops)?;
    let refined = if config.refine {
        Some(refine_pipeline(&propagation, &phasors, config.lambda)?)
    } else {
        None
    };
    let refined_report = refined
        .as_ref()
        .map(|r| phase_error(&r.wrapped.phasors(), &phantom.phase, mask.as_ref()))
        .transpose()?;
    let n = (config.height * config.width) as f64;
    let result = SeedResult {
        seed,
        mean_abs_error: report.mean_abs_error,
        std: report.std,
        refined_error: refined_report.as_ref().map(|r| r.mean_abs_error),
        refined_std: refined_report.as_ref().map(|r| r.std),
        achieved_snr_db: stack.achieved_snr_db,
        max_hop: propagation.max_hop(),
        reached_fraction: propagation.reached() as f64 / n,
        per_hop,
        iterations: propagation.iterations,
    };
    Ok(SeedArtifacts {
        result,
        truth: phantom.phase,
        propagation,
        refined,
    })
}

fn rows_for(config: &ExperimentConfig, shifts_label: &str, n_meas: usize, seed: u64, outcome: &std::result::Result<SeedResult, String>) -> Vec<CsvRow> {
    let row = |metric: &str, value: f64, status: &str| CsvRow {
        metric: metric.into(),
        phantom: config.phantom.name().into(),
        shifts: shifts_label.into(),
        snr_db: config.snr_label(),
        n_meas,
        seed,
        value,
        status: status.into(),
    };
    match outcome {
        Err(msg) => vec![row("phase_error", f64::NAN, &format!("error: {msg}"))],
        Ok(r) => {
            let mut rows = vec![
                row("phase_error", r.mean_abs_error, "ok"),
                row("phase_error_std", r.std, "ok"),
            ];
            if let (Some(e), Some(s)) = (r.refined_error, r.refined_std) {
                rows.push(row("phase_error_ls", e, "ok"));
                rows.push(row("phase_error_ls_std", s, "ok"));
            }
            rows.push(row("achieved_snr_db", r.achieved_snr_db, "ok"));
            rows.push(row("max_hop", r.max_hop.map_or(f64::NAN, f64::from), "ok"));
            rows.push(row("reached_fraction", r.reached_fraction, "ok"));
            for b in &r.per_hop {
                rows.push(row(&format!("hop_error_{}", b.hop), b.mean_error, "ok"));
            }
            rows
        }
    }
}

fn write_seed_artifacts(dir: &Path, art: &SeedArtifacts) -> Result<()> {
    use crate::field::srwf;
    fs::create_dir_all(dir)?;
    art.propagation.save(dir)?;
    srwf::write_real(dir.join("truth.srwf"), art.truth.grid())?;
    if let Some(r) = &art.refined {
        srwf::write_real(dir.join("phase_ls.srwf"), r.wrapped.grid())?;
    }
    Ok(())
}

/// Runs every seed concurrently. A failing seed is recorded, not fatal.
pub fn run(config: &ExperimentConfig, out: Option<&Path>) -> Result<RunOutput> {
    let shifts = config.resolved_shifts()?;
    config.noise_spec(0)?.validate()?;
    let label = shifts.label();
    let n_meas = config.n_meas(&shifts);
    let outcomes: Vec<(u64, std::result::Result<SeedArtifacts, String>, f64)> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let t0 = Instant::now();
            let r = run_seed(config, seed).map_err(|e| e.to_string());
            (seed, r, t0.elapsed().as_secs_f64())
        })
        .collect();
    let mut rows = Vec::new();
    let mut results = Vec::new();
    let mut timings = Vec::new();
    for (seed, outcome, secs) in outcomes {
        if let (Some(dir), Ok(art)) = (out, &outcome) {
            if config.save_fields {
                write_seed_artifacts(&dir.join(format!("seed_{seed}")), art)?;
            }
        }
        let result = outcome.map(|a| a.result);
        if let Err(msg) = &result {
            log::warn!("seed {seed} failed: {msg}");
        }
        rows.extend(rows_for(config, &label, n_meas, seed, &result));
        results.push(result);
        timings.push((seed, secs));
    }
    let output = RunOutput { rows, results, timings };
    if let Some(dir) = out {
        write_outputs(dir, config, &shifts, &output)?;
    }
    Ok(output)
}

#[derive(Serialize)]
struct RunMeta<'a> {
    package: &'static str,
    version: &'static str,
    config: &'a ExperimentConfig,
    shifts: &'a ShiftSet,
    n_meas: usize,
    fill_strategy: &'static str,
}

fn write_outputs(dir: &Path, config: &ExperimentConfig, shifts: &ShiftSet, output: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = RunMeta {
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config,
        shifts,
        n_meas: config.n_meas(shifts),
        fill_strategy: "estimate",
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    write_csv(&dir.join("results.csv"), &output.rows)?;
    let mut t = String::from("seed,seconds\n");
    for (seed, secs) in &output.timings {
        t.push_str(&format!("{seed},{secs}\n"));
    }
    fs::write(dir.join("timings.csv"), t)?;
    Ok(())
}

pub fn write_csv(path: &Path, rows: &[CsvRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

#[derive(Clone, Debug, PartialEq)]
pub enum SweepAxis {
    Snr(Vec<f64>),
    /// Measurement counts; each must be `8 × shift_count` for a planner
    /// count of 1, 2, 4 or 8.
    NMeas(Vec<usize>),
}

/// Cross product of sweep points and the config's seeds, each point
/// with its own config.
pub fn sweep(config: &ExperimentConfig, axis: &SweepAxis, out: Option<&Path>) -> Result<Vec<(ExperimentConfig, RunOutput)>> {
    let points: Vec<ExperimentConfig> = match axis {
        SweepAxis::Snr(values) => values
            .iter()
            .map(|&s| ExperimentConfig {
                snr_db: Some(s),
                ..config.clone()
            })
            .collect(),
        SweepAxis::NMeas(values) => values
            .iter()
            .map(|&m| {
                if m % 8 != 0 || ![1, 2, 4, 8].contains(&(m / 8)) {
                    return Err(Error::InvalidParameter(format!("n_meas {m} is not 8, 16, 32 or 64")));
                }
                Ok(ExperimentConfig {
                    shift_count: m / 8,
                    shifts: None,
                    ..config.clone()
                })
            })
            .collect::<Result<_>>()?,
    };
    let runs: Vec<(ExperimentConfig, RunOutput)> = points
        .into_par_iter()
        .map(|c| {
            let r = run(&c, None)?;
            Ok((c, r))
        })
        .collect::<Result<_>>()?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let rows: Vec<CsvRow> = runs.iter().flat_map(|(_, r)| r.rows.clone()).collect();
        write_csv(&dir.join("sweep.csv"), &rows)?;
        let configs: Vec<&ExperimentConfig> = runs.iter().map(|(c, _)| c).collect();
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&configs)?)?;
    }
    Ok(runs)
}

/// Monte-Carlo line error for every second shift `t` in `1..n` paired
/// with `s`, as CSV rows (`shifts = "s;t"`).
pub fn t_shift_sweep(n: u64, s: u64, noise: SweepNoise) -> Result<Vec<CsvRow>> {
    let rows = crate::shiftgraph::pair_sweep(n, s, Some(noise))?;
    let mut out = Vec::with_capacity(rows.len() * 2);
    for r in rows {
        let base = CsvRow {
            metric: String::new(),
            phantom: "line".into(),
            shifts: format!("{s};{}", r.t),
            snr_db: "inf".into(),
            n_meas: 0,
            seed: noise.seed,
            value: 0.0,
            status: "ok".into(),
        };
        out.push(CsvRow {
            metric: "max_hop".into(),
            value: r.max_hop.map_or(f64::NAN, f64::from),
            ..base.clone()
        });
        out.push(CsvRow {
            metric: "line_error".into(),
            value: r.error.unwrap_or(f64::NAN),
            ..base
        });
    }
    Ok(out)
}

/// Amplitude-threshold mask helper used by the CLI.
pub fn amplitude_mask(amplitude: &Grid<f64>, threshold: f64) -> Mask {
    amplitude.map(|&a| a > threshold)
}
