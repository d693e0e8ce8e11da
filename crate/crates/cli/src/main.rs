//! `aq`: simulate, calibrate, fit, summarize and check arsenic survey models.
//!
//! Every subcommand that writes results stages them in a hidden sibling
//! directory and renames it into place once complete, together with a
//! `manifest.json` holding input digests, the seed and stage timings.

mod manifest;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use aq_core::config::ModelSpec;
use aq_core::data_io::{
    load_calibration, load_survey, simulate_blanket, simulate_panel, write_calibration, write_survey, Region, Schema,
    SimulationSettings,
};
use aq_core::measurement::{confusion_table, fit_calibration, simulate_pairs, CalibrationModel, DETECTION_LIMIT};
use aq_core::pipeline::{build_blanket, build_resampled, BlanketGeometry, ResampledGeometry};
use aq_core::sampler::PosteriorDraws;
use aq_core::summaries::{
    individual_predictions, laplacian_scale, linspace, mixing_coefficient_curve, ppc_subsample, predictive_change,
    spline_change_curve, trend_report, write_bands, PanelStatistics,
};

use manifest::{Manifest, Staging};

/// Share of parameters allowed above the R-hat warning level.
const RHAT_WARN: f64 = 1.05;
const RHAT_WARN_FRACTION: f64 = 0.01;
const EXIT_RHAT_WARNING: u8 = 2;

#[derive(Parser)]
#[command(name = "aq", version, about = "Bayesian spatiotemporal models of groundwater arsenic surveys")]
struct Cli {
    /// Global seed (falls back to AQ_SEED); overrides `sampler.seed` in the config.
    #[arg(long, global = true, env = "AQ_SEED")]
    seed: Option<u64>,
    /// Worker threads for the sampler (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a synthetic dataset from the generative model.
    #[command(after_long_help = config_help())]
    Simulate(SimulateArgs),
    /// Fit the field-kit calibration from lab/kit pairs.
    Calibrate(CalibrateArgs),
    /// Fit the resampled-panel model.
    #[command(after_long_help = config_help())]
    FitResampled(FitResampledArgs),
    /// Fit the blanket-survey model.
    #[command(after_long_help = config_help())]
    FitBlanket(FitBlanketArgs),
    /// Predictions, exceedance, mixing curves and trends from a fit.
    Summarize(SummarizeArgs),
    /// Posterior predictive check of a blanket fit against a panel.
    Ppc(PpcArgs),
    /// Configuration utilities.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Subcommand)]
enum ConfigAction {
    /// Write the default configuration with every key documented.
    #[command(after_long_help = config_help())]
    Init {
        /// Destination (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

fn config_help() -> String {
    format!("Config file keys and defaults (--config):\n\n{}", ModelSpec::default().to_config_text())
}

#[derive(Args)]
struct Output {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Replace an existing output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimKind {
    Blanket,
    Resampled,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    output: Output,
    #[arg(long, value_enum, default_value = "blanket")]
    kind: SimKind,
    /// Model and sampler settings (see `aq config init`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Survey-1 wells (blanket) or panel wells (resampled).
    #[arg(long, default_value_t = 100)]
    n1: usize,
    #[arg(long, default_value_t = 100)]
    n2: usize,
    /// Panel wells drawn from survey 2 (blanket only).
    #[arg(long, default_value_t = 50)]
    n_panel: usize,
    /// Lab/kit pairs in the simulated calibration file.
    #[arg(long, default_value_t = 944)]
    n_calibration: usize,
    #[arg(long, default_value_t = 9100.0)]
    east_m: f64,
    #[arg(long, default_value_t = 6700.0)]
    north_m: f64,
    #[arg(long, default_value_t = 0.0)]
    min_separation_m: f64,
    /// Seed of well placement (defaults to the global seed).
    #[arg(long)]
    layout_seed: Option<u64>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    output: Output,
    /// Calibration CSV (`lab_ugL,kit_level`).
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct FitResampledArgs {
    #[command(flatten)]
    output: Output,
    /// Panel CSV.
    #[arg(long)]
    panel: PathBuf,
    /// Model and sampler settings (see `aq config init`).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct FitBlanketArgs {
    #[command(flatten)]
    output: Output,
    /// Survey-1 CSV (lab readings).
    #[arg(long)]
    survey1: PathBuf,
    /// Survey-2 CSV (field-kit readings).
    #[arg(long)]
    survey2: PathBuf,
    /// Calibration model JSON written by `calibrate`.
    #[arg(long)]
    calibration: PathBuf,
    /// Model and sampler settings (see `aq config init`).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    #[command(flatten)]
    output: Output,
    /// Directory written by `fit-blanket` or `fit-resampled`.
    #[arg(long)]
    fit: PathBuf,
    /// Survey-2 CSV of a blanket fit (for well ids, coordinates and depths).
    #[arg(long)]
    survey2: Option<PathBuf>,
    /// Exceedance thresholds in µg/L.
    #[arg(long, value_delimiter = ',', default_value = "10,50,100")]
    thresholds: Vec<f64>,
    /// Also write grid and band CSVs for each figure.
    #[arg(long)]
    plot_data: bool,
}

#[derive(Args)]
struct PpcArgs {
    #[command(flatten)]
    output: Output,
    /// Directory written by `fit-blanket`.
    #[arg(long)]
    fit: PathBuf,
    /// Survey-2 CSV the fit was made with.
    #[arg(long)]
    survey2: PathBuf,
    /// Observed panel CSV.
    #[arg(long)]
    panel: PathBuf,
    /// Wells per predictive subsample (default: panel size).
    #[arg(long)]
    subsample: Option<usize>,
    /// Also write the predictive draws of each statistic.
    #[arg(long)]
    plot_data: bool,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Msg(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

type Result<T> = std::result::Result<T, CliError>;

fn msg(e: impl std::fmt::Display) -> CliError {
    CliError::Msg(e.to_string())
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Outcome of a successful run; `Warn` maps to a distinct exit status.
enum Status {
    Ok,
    Warn(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Warn(w)) => {
            eprintln!("warning: {w}");
            ExitCode::from(EXIT_RHAT_WARNING)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<Status> {
    let seed = cli.seed;
    match cli.command {
        Command::Simulate(a) => simulate(a, seed),
        Command::Calibrate(a) => calibrate(a, seed),
        Command::FitResampled(a) => fit_resampled(a, seed),
        Command::FitBlanket(a) => fit_blanket(a, seed),
        Command::Summarize(a) => summarize(a, seed),
        Command::Ppc(a) => ppc(a, seed),
        Command::Config {
            action: ConfigAction::Init { out, force },
        } => config_init(out, force),
    }
}

fn load_spec(path: Option<&Path>, seed: Option<u64>) -> Result<(ModelSpec, String)> {
    let mut spec = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_at(p))?;
            ModelSpec::parse(&text).map_err(|e| CliError::Msg(format!("{}: {e}", p.display())))?
        }
        None => ModelSpec::default(),
    };
    if let Some(s) = seed {
        spec.sampler.seed = s;
    }
    let text = spec.to_config_text();
    Ok((spec, text))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_at(path))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(msg)?;
    w.write_all(b"\n").map_err(io_at(path))?;
    w.flush().map_err(io_at(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(io_at(path))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| CliError::Msg(format!("{}: {e}", path.display())))
}

fn nominal_calibration() -> CalibrationModel {
    let c: Vec<f64> = [5.0f64, 17.0, 37.0, 75.0, 150.0, 250.0, 400.0, 750.0]
        .iter()
        .map(|t| 3.0 * t.ln())
        .collect();
    CalibrationModel::new(&c, -3.0).expect("valid nominal calibration")
}

fn simulate(a: SimulateArgs, seed: Option<u64>) -> Result<Status> {
    let (spec, config_text) = load_spec(a.config.as_deref(), seed)?;
    let seed = spec.sampler.seed;
    let mut m = Manifest::new("simulate", seed, config_text);
    if let Some(p) = &a.config {
        m.add_input(p)?;
    }
    let stage = Staging::begin(&a.output.out, a.output.force)?;
    let dir = stage.path();
    let region = Region {
        east_m: a.east_m,
        north_m: a.north_m,
        holes: Vec::new(),
        min_separation_m: a.min_separation_m,
    };
    let layout_seed = a.layout_seed.unwrap_or(seed);
    let t = Instant::now();
    match a.kind {
        SimKind::Blanket => {
            let settings = SimulationSettings {
                n1: a.n1,
                n2: a.n2,
                region,
                layout_seed,
                calibration: nominal_calibration(),
                n_panel: a.n_panel,
                fixed_truth: None,
            };
            let sim = simulate_blanket(&spec, seed, &settings).map_err(msg)?;
            write_survey(create(&dir.join("survey1.csv"))?, &sim.survey1.records, Schema::Survey1).map_err(msg)?;
            write_survey(create(&dir.join("survey2.csv"))?, &sim.survey2.records, Schema::Survey2).map_err(msg)?;
            write_survey(create(&dir.join("panel.csv"))?, &sim.panel.records, Schema::Panel).map_err(msg)?;

            // lab values log-normal above the detection limit
            use rand::SeedableRng;
            use rand_distr::{Distribution, Normal};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xca11);
            let normal = Normal::new(4.0, 1.3).expect("valid normal");
            let mut ys = Vec::with_capacity(a.n_calibration);
            while ys.len() < a.n_calibration {
                let x: f64 = normal.sample(&mut rng);
                if x >= DETECTION_LIMIT.ln() {
                    ys.push(x.exp());
                }
            }
            let pairs = simulate_pairs(&settings.calibration, &ys, &mut rng);
            write_calibration(create(&dir.join("calibration.csv"))?, &pairs).map_err(msg)?;
            write_json(&dir.join("truth.json"), &sim.truth)?;
            write_json(&dir.join("calibration_truth.json"), &settings.calibration)?;
        }
        SimKind::Resampled => {
            let (ds, truth) = simulate_panel(&spec, seed, a.n1, &region, layout_seed).map_err(msg)?;
            write_survey(create(&dir.join("panel.csv"))?, &ds.records, Schema::Panel).map_err(msg)?;
            write_json(&dir.join("truth.json"), &truth)?;
        }
    }
    m.time("simulate", t);
    stage.commit(m)?;
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct CalibrationReport {
    n_pairs: usize,
    log_likelihood: f64,
    iterations: usize,
    grad_norm: f64,
    /// cutpoints then slope
    standard_errors: Vec<f64>,
    /// rows: category implied by the lab value at the fitted model's
    /// thresholds; columns: observed kit category
    confusion: Vec<Vec<usize>>,
}

fn calibrate(a: CalibrateArgs, seed: Option<u64>) -> Result<Status> {
    let mut m = Manifest::new("calibrate", seed.unwrap_or_default(), String::new());
    m.add_input(&a.input)?;
    let pairs = load_calibration(&a.input).map_err(|e| CliError::Msg(format!("{}: {e}", a.input.display())))?;
    let t = Instant::now();
    let fit = fit_calibration(&pairs).map_err(|e| CliError::Msg(format!("calibration fit failed: {e}")))?;
    m.time("fit", t);
    let stage = Staging::begin(&a.output.out, a.output.force)?;
    write_json(&stage.path().join("calibration.json"), &fit.model)?;
    let report = CalibrationReport {
        n_pairs: pairs.len(),
        log_likelihood: fit.log_likelihood,
        iterations: fit.iterations,
        grad_norm: fit.grad_norm,
        standard_errors: fit.standard_errors.clone(),
        confusion: confusion_table(&fit.model, &pairs).iter().map(|r| r.to_vec()).collect(),
    };
    write_json(&stage.path().join("calibration_report.json"), &report)?;
    stage.commit(m)?;
    Ok(Status::Ok)
}

/// Writes draws and diagnostics; returns a warning when too many
/// parameters have a high R-hat.
fn write_fit(dir: &Path, out: &Path, draws: &PosteriorDraws, m: &mut Manifest) -> Result<Status> {
    let t = Instant::now();
    draws.write_csv(create(&dir.join("draws.csv"))?).map_err(msg)?;
    let diag = draws.diagnostics();
    write_json(&dir.join("diagnostics.json"), &diag)?;
    write_json(&dir.join("chains.json"), &draws.chain_info())?;
    m.time("write", t);
    let frac = diag.fraction_above(RHAT_WARN);
    if frac > RHAT_WARN_FRACTION {
        return Ok(Status::Warn(format!(
            "R-hat above {RHAT_WARN} on {:.1}% of parameters; results written to {}",
            100.0 * frac,
            out.display()
        )));
    }
    Ok(Status::Ok)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
enum FitGeometry {
    Blanket(BlanketGeometry),
    Resampled(ResampledGeometry),
}

fn fit_resampled(a: FitResampledArgs, seed: Option<u64>) -> Result<Status> {
    let (spec, text) = load_spec(a.config.as_deref(), seed)?;
    let mut m = Manifest::new("fit-resampled", spec.sampler.seed, text);
    m.add_input(&a.panel)?;
    if let Some(p) = &a.config {
        m.add_input(p)?;
    }
    let stage = Staging::begin(&a.output.out, a.output.force)?;
    let t = Instant::now();
    let panel = load_survey(&a.panel, Schema::Panel).map_err(|e| CliError::Msg(format!("{}: {e}", a.panel.display())))?;
    let problem = build_resampled(&spec, &panel).map_err(msg)?;
    m.time("build", t);
    let t = Instant::now();
    let draws = problem.fit(&spec.sampler).map_err(msg)?;
    m.time("sample", t);
    write_json(&stage.path().join("geometry.json"), &FitGeometry::Resampled(problem.geometry.clone()))?;
    let status = write_fit(stage.path(), &a.output.out, &draws, &mut m)?;
    stage.commit(m)?;
    Ok(status)
}

fn fit_blanket(a: FitBlanketArgs, seed: Option<u64>) -> Result<Status> {
    let (spec, text) = load_spec(a.config.as_deref(), seed)?;
    let mut m = Manifest::new("fit-blanket", spec.sampler.seed, text);
    for p in [&a.survey1, &a.survey2, &a.calibration] {
        m.add_input(p)?;
    }
    if let Some(p) = &a.config {
        m.add_input(p)?;
    }
    let stage = Staging::begin(&a.output.out, a.output.force)?;
    let t = Instant::now();
    let s1 = load_survey(&a.survey1, Schema::Survey1).map_err(|e| CliError::Msg(format!("{}: {e}", a.survey1.display())))?;
    let s2 = load_survey(&a.survey2, Schema::Survey2).map_err(|e| CliError::Msg(format!("{}: {e}", a.survey2.display())))?;
    let cal: CalibrationModel = read_json(&a.calibration)?;
    let problem = build_blanket(&spec, &s1, &s2, &cal).map_err(msg)?;
    m.time("build", t);
    let t = Instant::now();
    let draws = problem.fit(&spec.sampler).map_err(msg)?;
    m.time("sample", t);
    write_json(&stage.path().join("geometry.json"), &FitGeometry::Blanket(problem.geometry.clone()))?;
    let status = write_fit(stage.path(), &a.output.out, &draws, &mut m)?;
    stage.commit(m)?;
    Ok(status)
}

struct LoadedFit {
    geometry: FitGeometry,
    draws: PosteriorDraws,
    spec: ModelSpec,
}

fn load_fit(dir: &Path, m: &mut Manifest) -> Result<LoadedFit> {
    let draws_path = dir.join("draws.csv");
    m.add_input(&draws_path)?;
    let draws = PosteriorDraws::read_csv(BufReader::new(File::open(&draws_path).map_err(io_at(&draws_path))?))
        .map_err(|e| CliError::Msg(format!("{}: {e}", draws_path.display())))?;
    let geometry: FitGeometry = read_json(&dir.join("geometry.json"))?;
    let fit_manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    let spec = ModelSpec::parse(&fit_manifest.config).map_err(msg)?;
    Ok(LoadedFit { geometry, draws, spec })
}

fn summarize(a: SummarizeArgs, seed: Option<u64>) -> Result<Status> {
    let mut m = Manifest::new("summarize", 0, String::new());
    let fit = load_fit(&a.fit, &mut m)?;
    let seed = seed.unwrap_or(fit.spec.sampler.seed);
    m.seed = seed;
    m.config = fit.spec.to_config_text();
    let stage = Staging::begin(&a.output.out, a.output.force)?;
    let dir = stage.path().to_path_buf();
    let t = Instant::now();
    match &fit.geometry {
        FitGeometry::Blanket(g) => {
            let path = a
                .survey2
                .as_ref()
                .ok_or_else(|| CliError::Msg("--survey2 is required to summarize a blanket fit".into()))?;
            m.add_input(path)?;
            let s2 = load_survey(path, Schema::Survey2).map_err(|e| CliError::Msg(format!("{}: {e}", path.display())))?;
            if s2.records.len() != g.n2 {
                return Err(CliError::Msg(format!(
                    "layout mismatch: fit has {} survey-2 wells, {} has {}",
                    g.n2,
                    path.display(),
                    s2.records.len()
                )));
            }
            let ids: Vec<String> = s2.records.iter().map(|r| r.well_id.clone()).collect();
            let depths: Vec<f64> = s2.records.iter().map(|r| r.depth).collect();
            let report = individual_predictions(&fit.draws, &a.thresholds).map_err(msg)?;
            report.write_csv(create(&dir.join("exceedance.csv"))?, Some(&ids)).map_err(msg)?;
            let trend = trend_report(&fit.draws, &depths, g.d0, seed).map_err(msg)?;
            write_json(&dir.join("trend.json"), &trend)?;
            let theta_grid = linspace(0.0, 1000f64.ln(), 60);
            let curve = mixing_coefficient_curve(&fit.draws, fit.spec.mixing, &theta_grid).map_err(msg)?;
            write_bands(create(&dir.join("mixing_curve.csv"))?, "theta", &curve).map_err(msg)?;
            if a.plot_data {
                let plot = dir.join("plot");
                fs::create_dir(&plot).map_err(io_at(&plot))?;
                // per-well exceedance map
                let mut w = csv::Writer::from_writer(create(&plot.join("exceedance_map.csv"))?);
                let mut header = vec!["well_id".to_string(), "east_m".into(), "north_m".into()];
                header.extend(a.thresholds.iter().map(|t| format!("p_exceed_{t}")));
                w.write_record(&header).map_err(msg)?;
                for (r, p) in s2.records.iter().zip(&report.wells) {
                    let mut row = vec![r.well_id.clone(), r.east.to_string(), r.north.to_string()];
                    row.extend(p.exceedance.iter().map(|v| v.to_string()));
                    w.write_record(&row).map_err(msg)?;
                }
                w.flush().map_err(msg)?;
                // predictive change over the observed range of δ at two levels
                let delta = fit.draws.block_range("delta").map_err(msg)?;
                let means: Vec<f64> = delta.map(|j| aq_core::stats::mean(&fit.draws.column(j))).collect();
                let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let grid = linspace(lo, hi, 41);
                for level in [100.0f64, 250.0] {
                    for (noise, tag) in [(false, "mean"), (true, "noisy")] {
                        let b = predictive_change(&fit.draws, fit.spec.mixing, level.ln(), &grid, noise, seed)
                            .map_err(msg)?;
                        let name = format!("predictive_change_{level}_{tag}.csv");
                        write_bands(create(&plot.join(name))?, "delta", &b).map_err(msg)?;
                    }
                }
                let h: Vec<f64> = linspace(0.0, 100.0, 21);
                let mut w = csv::Writer::from_writer(create(&plot.join("laplacian_scale.csv"))?);
                w.write_record(["h_m", "factor"]).map_err(msg)?;
                for h in h {
                    let f = laplacian_scale(h, g.standardization.east_extent, g.laplacian_divisor);
                    w.write_record([h.to_string(), f.to_string()]).map_err(msg)?;
                }
                w.flush().map_err(msg)?;
            }
        }
        FitGeometry::Resampled(g) => {
            let lo = g.knots[0];
            let hi = *g.knots.last().expect("at least two knots");
            let grid = linspace(lo, hi, 60);
            let curve = spline_change_curve(&fit.draws, &g.knots, &grid, &a.thresholds, 20, seed).map_err(msg)?;
            write_bands(create(&dir.join("spline_change.csv"))?, "theta", &curve.change).map_err(msg)?;
            curve
                .write_exceedance_csv(create(&dir.join("spline_exceedance.csv"))?)
                .map_err(msg)?;
            let mut scalars = serde_json::Map::new();
            for name in ["mu", "alpha", "rho", "beta_depth", "sigma_s", "sigma_l", "beta_lin"] {
                let v = fit.draws.scalar(name).map_err(msg)?;
                let iv = aq_core::summaries::Interval::of(&v, 0.95);
                scalars.insert(name.into(), serde_json::to_value(iv).map_err(msg)?);
            }
            write_json(&dir.join("parameters.json"), &scalars)?;
            if a.plot_data {
                let plot = dir.join("plot");
                fs::create_dir(&plot).map_err(io_at(&plot))?;
                write_bands(create(&plot.join("spline.csv"))?, "theta", &curve.change).map_err(msg)?;
                curve
                    .write_exceedance_csv(create(&plot.join("spline_exceedance.csv"))?)
                    .map_err(msg)?;
            }
        }
    }
    m.time("summarize", t);
    stage.commit(m)?;
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct PpcSummary {
    subsample_size: usize,
    observed: PanelStatistics,
    p_values: std::collections::BTreeMap<String, f64>,
}

fn ppc(a: PpcArgs, seed: Option<u64>) -> Result<Status> {
    let mut m = Manifest::new("ppc", 0, String::new());
    let fit = load_fit(&a.fit, &mut m)?;
    let seed = seed.unwrap_or(fit.spec.sampler.seed);
    m.seed = seed;
    m.config = fit.spec.to_config_text();
    let FitGeometry::Blanket(g) = &fit.geometry else {
        return Err(CliError::Msg("ppc needs a blanket fit".into()));
    };
    m.add_input(&a.survey2)?;
    m.add_input(&a.panel)?;
    let s2 = load_survey(&a.survey2, Schema::Survey2).map_err(|e| CliError::Msg(format!("{}: {e}", a.survey2.display())))?;
    let panel = load_survey(&a.panel, Schema::Panel).map_err(|e| CliError::Msg(format!("{}: {e}", a.panel.display())))?;
    let wells = panel.panel_wells().map_err(msg)?;
    if s2.records.len() != g.n2 {
        return Err(CliError::Msg(format!(
            "layout mismatch: fit has {} survey-2 wells, {} has {}",
            g.n2,
            a.survey2.display(),
            s2.records.len()
        )));
    }
    let depths: Vec<f64> = s2.records.iter().map(|r| r.depth).collect();
    let observed = PanelStatistics::observed(&wells);
    let size = a.subsample.unwrap_or(wells.len());
    let stage = Staging::begin(&a.output.out, a.output.force)?;
    let t = Instant::now();
    let report = ppc_subsample(&fit.draws, size, &depths, g.d0, &observed, seed).map_err(msg)?;
    m.time("ppc", t);
    let summary = PpcSummary {
        subsample_size: size,
        observed,
        p_values: report
            .statistics
            .iter()
            .map(|s| (s.name.clone(), s.p_value))
            .collect(),
    };
    write_json(&stage.path().join("ppc.json"), &summary)?;
    if a.plot_data {
        report.write_csv(create(&stage.path().join("ppc_draws.csv"))?).map_err(msg)?;
    }
    stage.commit(m)?;
    Ok(Status::Ok)
}

fn config_init(out: Option<PathBuf>, force: bool) -> Result<Status> {
    let text = ModelSpec::default().to_config_text();
    match out {
        None => print!("{text}"),
        Some(p) => {
            if p.exists() && !force {
                return Err(CliError::Msg(format!("{} exists; pass --force to overwrite", p.display())));
            }
            fs::write(&p, text).map_err(io_at(&p))?;
        }
    }
    Ok(Status::Ok)
}
