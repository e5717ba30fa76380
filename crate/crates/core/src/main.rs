//! `shiftwave` command-line driver.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use shiftwave::experiment::{self, Engine, ExperimentConfig, SweepAxis};
use shiftwave::extract::{extract_phasors, PhasorGrid, DEFAULT_RELIABILITY_FLOOR};
use shiftwave::field::{centered_origin, srwf, PhaseMap, ShiftSet};
use shiftwave::forward::{simulate_shifted_with, MeasurementStack};
use shiftwave::optics::{refocus_sweep, PropagationParams, DEFAULT_SWEEP_PADDING};
use shiftwave::phantoms::{generate, PhantomSpec, PhaseProfile};
use shiftwave::propagate::{propagate_bfs, propagate_wavefront, AveragingMode};
use shiftwave::refine::{refine_ls, unwrap_differences, DEFAULT_LAMBDA};
use shiftwave::shiftgraph::{self, SweepNoise};

#[derive(Parser)]
#[command(name = "shiftwave", version, about = "Shifted self-reference phase-shifting interferometry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan shifts and report hop statistics.
    Plan(PlanArgs),
    /// Generate a phantom and its measurement stack.
    Simulate(SimulateArgs),
    /// Extract phasors from a stack and propagate from the reference.
    Reconstruct(ReconstructArgs),
    /// Least-squares refinement of a propagated estimate.
    Refine(RefineArgs),
    /// Full pipeline over every configured seed.
    Run(RunArgs),
    /// Cross-product runs along one axis.
    Sweep(SweepArgs),
    /// Sharpness sweep of a complex field over propagation distance.
    Refocus(RefocusArgs),
    /// Exhaustive and randomized shift-graph theory checks.
    VerifyTheory(VerifyArgs),
}

#[derive(Args)]
struct PlanArgs {
    /// Line length; plans a 1D pair or evaluates `--shifts`.
    #[arg(long)]
    n: Option<u64>,
    /// Emit the optimal co-prime pair for `--n`.
    #[arg(long)]
    pairs: bool,
    /// Comma-separated magnitudes to evaluate.
    #[arg(long, value_delimiter = ',')]
    shifts: Vec<u64>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Planner magnitude count for a 2D grid (1, 2, 4, 8).
    #[arg(long, default_value_t = 2)]
    count: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Overrides layered on top of `--config` (or the defaults).
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// quadratic, random, peaks or flat.
    #[arg(long)]
    phantom: Option<String>,
    /// Square grid side.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    shift_count: Option<usize>,
    /// Explicit axis magnitudes, each used horizontally and vertically.
    #[arg(long, value_delimiter = ',')]
    shifts: Vec<u32>,
    /// none, gaussian or poisson-gaussian.
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long)]
    read_sigma_fraction: Option<f64>,
    /// Comma-separated seeds, or `a..b` (exclusive).
    #[arg(long)]
    seeds: Option<String>,
    /// mean, pairwise or off.
    #[arg(long)]
    averaging: Option<String>,
    /// bfs or wavefront.
    #[arg(long)]
    engine: Option<String>,
    #[arg(long)]
    no_refine: bool,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    reliability_floor: Option<f64>,
    /// circular or zero-fill.
    #[arg(long)]
    boundary: Option<String>,
    #[arg(long)]
    mask_threshold: Option<f64>,
    #[arg(long)]
    save_fields: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Seed when the config lists several.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Directory written by `simulate` (or a bare stack directory).
    #[arg(long)]
    stack: PathBuf,
    #[arg(long, default_value = "mean")]
    averaging: String,
    #[arg(long, default_value = "wavefront")]
    engine: String,
    /// `row,col`; the grid center by default.
    #[arg(long, value_delimiter = ',')]
    reference: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_RELIABILITY_FLOOR)]
    reliability_floor: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RefineArgs {
    /// Phasor directory written by `reconstruct`.
    #[arg(long)]
    phasors: PathBuf,
    /// Wrapped estimate (`phase.srwf`).
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// snr, n-meas or t-shift.
    #[arg(long)]
    axis: String,
    /// Sweep points for the snr and n-meas axes.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    /// Line length for the t-shift axis.
    #[arg(long, default_value_t = 512)]
    n: u64,
    /// Fixed first shift for the t-shift axis.
    #[arg(long, default_value_t = 16)]
    s: u64,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Averaging for the t-shift axis. Without averaging the error tracks
    /// hop distance alone.
    #[arg(long = "line-averaging", default_value = "off")]
    line_averaging: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RefocusArgs {
    /// Complex SRWF field.
    #[arg(long)]
    field: PathBuf,
    /// Meters.
    #[arg(long)]
    wavelength: f64,
    /// Meters per pixel.
    #[arg(long)]
    pitch: f64,
    #[arg(long, allow_hyphen_values = true)]
    z_min: f64,
    #[arg(long, allow_hyphen_values = true)]
    z_max: f64,
    #[arg(long)]
    z_step: f64,
    #[arg(long, default_value_t = DEFAULT_SWEEP_PADDING)]
    padding: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Largest line length in the exhaustive co-prime suite.
    #[arg(long, default_value_t = 256)]
    exhaustive_n: u64,
    /// Largest line length for the optimal-pair and random suites.
    #[arg(long, default_value_t = 4096)]
    max_n: u64,
    #[arg(long, default_value_t = 10_000)]
    cases: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_kebab<T: DeserializeOwned>(what: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .with_context(|| format!("unknown {what} `{value}`"))
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = text.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if b <= a {
            bail!("empty seed range {text}");
        }
        return Ok((a..b).collect());
    }
    text.split(',').map(|s| Ok(s.trim().parse()?)).collect()
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(p) = &self.phantom {
            c.phantom = PhaseProfile::from_name(p)?;
        }
        if let Some(n) = self.size {
            (c.height, c.width) = (n, n);
        }
        if let Some(h) = self.height {
            c.height = h;
        }
        if let Some(w) = self.width {
            c.width = w;
        }
        if let Some(k) = self.shift_count {
            c.shift_count = k;
            c.shifts = None;
        }
        if !self.shifts.is_empty() {
            c.shifts = Some(ShiftSet::axis_pairs(&self.shifts)?);
        }
        if let Some(n) = &self.noise {
            c.noise = parse_kebab("noise model", n)?;
        }
        if let Some(s) = self.snr_db {
            c.snr_db = Some(s);
        }
        if let Some(f) = self.read_sigma_fraction {
            c.read_sigma_fraction = f;
        }
        if let Some(s) = &self.seeds {
            c.seeds = parse_seeds(s)?;
        }
        if let Some(a) = &self.averaging {
            c.averaging = AveragingMode::from_name(a)?;
        }
        if let Some(e) = &self.engine {
            c.engine = parse_kebab("engine", e)?;
        }
        if self.no_refine {
            c.refine = false;
        }
        if let Some(l) = self.lambda {
            c.lambda = l;
        }
        if let Some(f) = self.reliability_floor {
            c.reliability_floor = f;
        }
        if let Some(b) = &self.boundary {
            c.boundary = parse_kebab("boundary mode", b)?;
        }
        if self.mask_threshold.is_some() {
            c.mask_threshold = self.mask_threshold;
        }
        if self.save_fields {
            c.save_fields = true;
        }
        Ok(c)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

#[derive(Serialize)]
struct PlanReport {
    n: Option<u64>,
    height: Option<usize>,
    width: Option<usize>,
    shifts: Option<ShiftSet>,
    magnitudes: Vec<u64>,
    max_hop: Option<u32>,
    hop_lower_bound: Option<u32>,
    connected: bool,
}

fn cmd_plan(args: &PlanArgs) -> Result<bool> {
    let report = if let Some(n) = args.n {
        let magnitudes = if args.pairs || args.shifts.is_empty() {
            let (s, t) = shiftgraph::optimal_pair(n)?;
            vec![s, t]
        } else {
            args.shifts.clone()
        };
        let mags: Vec<usize> = magnitudes.iter().map(|&m| m as usize).collect();
        let hop = shiftgraph::max_hop(n as usize, &mags)?;
        PlanReport {
            n: Some(n),
            height: None,
            width: None,
            shifts: None,
            magnitudes,
            max_hop: hop,
            hop_lower_bound: Some(shiftgraph::hop_lower_bound(n)?),
            connected: hop.is_some(),
        }
    } else {
        let (Some(h), Some(w)) = (args.height, args.width) else {
            bail!("plan needs --n or --height and --width");
        };
        let set = if args.shifts.is_empty() {
            shiftgraph::plan_2d(h, w, args.count)?
        } else {
            let mags: Vec<u32> = args.shifts.iter().map(|&m| u32::try_from(m)).collect::<Result<_, _>>()?;
            ShiftSet::axis_pairs(&mags)?
        };
        let hop = shiftgraph::max_hop_2d(h, w, &set)?;
        let magnitudes = set.axis_magnitudes().horizontal.iter().map(|&m| m as u64).collect();
        PlanReport {
            n: None,
            height: Some(h),
            width: Some(w),
            magnitudes,
            max_hop: hop,
            hop_lower_bound: None,
            connected: hop.is_some(),
            shifts: Some(set),
        }
    };
    println!("{:<6} {:>6} {:>6}", "shift", "dy", "dx");
    match &report.shifts {
        Some(set) => {
            for (k, s) in set.iter().enumerate() {
                println!("{k:<6} {:>6} {:>6}", s.dy(), s.dx());
            }
        }
        None => {
            for (k, m) in report.magnitudes.iter().enumerate() {
                println!("{k:<6} {:>6} {m:>6}", 0);
            }
        }
    }
    match report.max_hop {
        Some(h) => println!("max hop: {h}"),
        None => println!("max hop: unbounded"),
    }
    if let Some(b) = report.hop_lower_bound {
        println!("hop lower bound: {b}");
    }
    if report.connected {
        println!("connected");
    } else {
        println!("WARNING: DISCONNECTED (some nodes are unreachable from the reference)");
    }
    if let Some(out) = &args.out {
        write_json(&out.join("meta.json"), &report)?;
    }
    Ok(true)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<bool> {
    let config = args.config.resolve()?;
    let seed = args.seed.unwrap_or(config.seeds.first().copied().unwrap_or(0));
    let phantom = generate(&PhantomSpec {
        profile: config.phantom.clone(),
        height: config.height,
        width: config.width,
        amplitude: config.amplitude.clone(),
        seed,
    })?;
    let shifts = config.resolved_shifts()?;
    let stack = simulate_shifted_with(&phantom.field, &shifts, &config.noise_spec(seed)?, config.boundary)?;
    stack.save(args.out.join("stack"))?;
    srwf::write_complex(args.out.join("field.srwf"), &phantom.field)?;
    srwf::write_real(args.out.join("truth.srwf"), phantom.phase.grid())?;
    write_json(&args.out.join("config.json"), &config)?;
    println!("{} frames, achieved SNR {:.3} dB", stack.measurement_count(), stack.achieved_snr_db);
    Ok(true)
}

fn cmd_reconstruct(args: &ReconstructArgs) -> Result<bool> {
    let dir = if args.stack.join("stack").is_dir() {
        args.stack.join("stack")
    } else {
        args.stack.clone()
    };
    let stack = MeasurementStack::load(&dir)?;
    let phasors = extract_phasors(&stack, args.reliability_floor)?;
    let (h, w) = stack.shape();
    let reference = match args.reference.as_slice() {
        [] => centered_origin(h, w),
        [r, c] => (*r, *c),
        _ => bail!("--reference takes row,col"),
    };
    let mode = AveragingMode::from_name(&args.averaging)?;
    let result = match parse_kebab::<Engine>("engine", &args.engine)? {
        Engine::Bfs => propagate_bfs(&phasors, reference, mode)?,
        Engine::Wavefront => propagate_wavefront(&phasors, reference, mode)?,
    };
    phasors.save(args.out.join("phasors"))?;
    result.save(&args.out)?;
    println!(
        "reached {}/{} pixels, max hop {:?}",
        result.reached(),
        h * w,
        result.max_hop()
    );
    Ok(true)
}

fn cmd_refine(args: &RefineArgs) -> Result<bool> {
    let grid = PhasorGrid::load(&args.phasors)?;
    let estimate = PhaseMap::wrapped(srwf::read_real(&args.estimate)?)?;
    let diffs = unwrap_differences(&grid, &estimate)?;
    let refined = refine_ls(&diffs, args.lambda)?;
    fs::create_dir_all(&args.out)?;
    srwf::write_real(args.out.join("phase_ls_unwrapped.srwf"), refined.grid())?;
    srwf::write_real(args.out.join("phase_ls.srwf"), refined.to_wrapped().grid())?;
    Ok(true)
}

fn print_summary(config: &ExperimentConfig, out: &experiment::RunOutput) {
    let ok = out.successes().count();
    print!("{} seeds ok / {}", ok, config.seeds.len());
    if let Some(e) = out.mean_error() {
        print!(", mean error {e:.6} rad");
    }
    if let Some(e) = out.mean_refined_error() {
        print!(", refined {e:.6} rad");
    }
    println!();
}

fn cmd_run(args: &RunArgs) -> Result<bool> {
    let config = args.config.resolve()?;
    let out = experiment::run(&config, Some(&args.out))?;
    print_summary(&config, &out);
    Ok(out.all_ok())
}

fn cmd_sweep(args: &SweepArgs) -> Result<bool> {
    if args.axis == "t-shift" {
        let noise = SweepNoise {
            sigma: args.sigma,
            trials: args.trials,
            seed: args.seed,
            averaging: AveragingMode::from_name(&args.line_averaging)?,
        };
        let rows = experiment::t_shift_sweep(args.n, args.s, noise)?;
        fs::create_dir_all(&args.out)?;
        experiment::write_csv(&args.out.join("sweep.csv"), &rows)?;
        #[derive(Serialize)]
        struct Meta {
            axis: &'static str,
            n: u64,
            s: u64,
            sigma: f64,
            trials: usize,
            seed: u64,
            averaging: AveragingMode,
        }
        write_json(
            &args.out.join("meta.json"),
            &Meta {
                axis: "t-shift",
                n: args.n,
                s: args.s,
                sigma: args.sigma,
                trials: args.trials,
                seed: args.seed,
                averaging: noise.averaging,
            },
        )?;
        let best = rows
            .iter()
            .filter(|r| r.metric == "line_error" && r.value.is_finite())
            .min_by(|a, b| a.value.total_cmp(&b.value));
        if let Some(b) = best {
            println!("lowest error {:.6} at shifts {}", b.value, b.shifts);
        }
        return Ok(true);
    }
    let config = args.config.resolve()?;
    if args.values.is_empty() {
        bail!("--values is required for the {} axis", args.axis);
    }
    let axis = match args.axis.as_str() {
        "snr" => SweepAxis::Snr(args.values.clone()),
        "n-meas" => SweepAxis::NMeas(
            args.values
                .iter()
                .map(|&v| {
                    if v.fract() != 0.0 || v < 0.0 {
                        bail!("n-meas values must be whole numbers, got {v}");
                    }
                    Ok(v as usize)
                })
                .collect::<Result<_>>()?,
        ),
        other => bail!("unknown sweep axis `{other}`"),
    };
    let runs = experiment::sweep(&config, &axis, Some(&args.out))?;
    let mut all_ok = true;
    for (c, r) in &runs {
        print!("snr {} shifts {}: ", c.snr_label(), c.resolved_shifts()?.label());
        print_summary(c, r);
        all_ok &= r.all_ok();
    }
    Ok(all_ok)
}

fn cmd_refocus(args: &RefocusArgs) -> Result<bool> {
    if !(args.z_step > 0.0) || args.z_max < args.z_min {
        bail!("need z_step > 0 and z_max ≥ z_min");
    }
    let field = srwf::read_complex(&args.field)?;
    let steps = ((args.z_max - args.z_min) / args.z_step + 1e-9).floor() as usize;
    let zs: Vec<f64> = (0..=steps).map(|i| args.z_min + i as f64 * args.z_step).collect();
    let params = PropagationParams::new(args.wavelength, args.pitch, 0.0).with_padding(args.padding);
    let result = refocus_sweep(&field, &params, &zs)?;
    fs::create_dir_all(&args.out)?;
    let mut w = csv::Writer::from_path(args.out.join("sharpness.csv"))?;
    w.write_record(["z", "sharpness"])?;
    for (z, s) in &result.table {
        w.write_record([z.to_string(), s.to_string()])?;
    }
    w.flush()?;
    let best = shiftwave::optics::propagate_free_space(&field, &params.at(result.best_z))?;
    srwf::write_complex(args.out.join("best.srwf"), &best)?;
    write_json(&args.out.join("meta.json"), &(params, &zs, result.best_z))?;
    println!("best z {}", result.best_z);
    Ok(true)
}

fn cmd_verify(args: &VerifyArgs) -> Result<bool> {
    let suites = [
        ("optimal pair reaches the hop bound", shiftgraph::check_optimal_pairs(8..=args.max_n)),
        ("co-prime pairs connect (exhaustive)", shiftgraph::check_coprime_exhaustive(args.exhaustive_n)),
        (
            "co-prime pairs connect (random)",
            shiftgraph::check_coprime_random(args.cases, args.max_n, args.seed),
        ),
        ("residue coverage iff co-prime", shiftgraph::check_residue_coverage(64)),
        (
            "no pair beats the hop bound",
            shiftgraph::check_lower_bound_random(args.cases, args.max_n, args.seed),
        ),
    ];
    let mut ok = true;
    for (name, check) in &suites {
        let verdict = if check.passed() { "PASS" } else { "FAIL" };
        println!("{verdict} {name}: {} cases, {} failures", check.cases, check.failures.len());
        for f in check.failures.iter().take(5) {
            println!("    {f}");
        }
        ok &= check.passed();
    }
    Ok(ok)
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SHIFTWAVE_THREADS") {
        let n: usize = v.parse().with_context(|| format!("SHIFTWAVE_THREADS={v}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> std::process::ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = init_threads().and_then(|_| match &cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Refine(a) => cmd_refine(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Refocus(a) => cmd_refocus(a),
        Command::VerifyTheory(a) => cmd_verify(a),
    });
    match outcome {
        Ok(true) => std::process::ExitCode::SUCCESS,
        Ok(false) => std::process::ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::from(2)
        }
    }
}
