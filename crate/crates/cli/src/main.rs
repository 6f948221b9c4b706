use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use calibwiz_core::calibration::{
    initialize_calibration, optimize_bundle, BundleConfig, CalibrationState, Corner,
    ImageObservations, ObservationSet, StateFile,
};
use calibwiz_core::corner::{CornerConditions, CornerModel};
use calibwiz_core::geometry::{IntrinsicParams, ModelKind, Pose};
use calibwiz_core::planner::{
    normalized_weights, precompute_base, precompute_weighted_base, search_next_pose, PlannerConfig,
    PoseObjective, PoseSearchSpace, SearchMethod,
};
use calibwiz_core::synth::{run_experiment, summarize, ExperimentConfig, Scheme};
use calibwiz_core::umap::{render_map, StatKind};

#[derive(Parser)]
#[command(name = "calibwiz", version, about = "Guided planar-target camera calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP session service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Calibrate from an observation file and print the result.
    Calibrate {
        #[arg(long)]
        obs: PathBuf,
        #[arg(long, default_value = "pinhole-k1k2")]
        model: ModelKind,
        /// Weight corners by their autocorrelation; predicted when the file
        /// carries no weights.
        #[arg(long)]
        weighted: bool,
        /// Blur assumed for predicted weights.
        #[arg(long, default_value_t = 1.0)]
        blur: f64,
        /// Write the calibration state here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Propose the next pose for a saved calibration state.
    Suggest {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        weighted: bool,
        #[arg(long, default_value_t = 1.0)]
        blur: f64,
        #[arg(long, default_value_t = 3000)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "annealing")]
        method: Method,
    },
    /// Run a synthetic experiment and write one CSV row per trial and step.
    Simulate {
        #[arg(long, default_value = "random")]
        scheme: String,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        images: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON experiment config; flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write per-step statistics as JSON.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Render the uncertainty map of a saved state.
    Map {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "trace")]
        stat: StatKind,
        /// Also write the raw float sidecar.
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Method {
    Annealing,
    Evolution,
}

#[derive(Serialize)]
struct CalibrationReport {
    theta: IntrinsicParams,
    rms: f64,
    trace_sigma: f64,
    sigma: Vec<Vec<f64>>,
    images: usize,
    iterations: usize,
    converged: bool,
}

#[derive(Serialize)]
struct Suggestion {
    pose: Pose,
    objective: f64,
    current_trace: f64,
    evaluations: usize,
}

fn calibrate(obs: &ObservationSet, model: ModelKind, weighted: bool, blur: f64) -> Result<(CalibrationState, CalibrationReport)> {
    let init = initialize_calibration(obs, model)?;
    let (mut state, mut report) = optimize_bundle(&init, obs, &BundleConfig::default())?;
    let mut used = obs.clone();
    if weighted {
        if !obs.has_weights() {
            let cm = CornerModel::build_default()?;
            let cond = CornerConditions { model: &cm, sigma: blur, contrast: 255.0 };
            for (im, pose) in used.images.iter_mut().zip(&state.poses) {
                let w = normalized_weights(&state.theta, pose, &obs.target, &cond)
                    .context("a corner is behind the camera at the estimated pose")?;
                for c in &mut im.corners {
                    let m = w[c.j];
                    c.w = Some([m[(0, 0)], m[(0, 1)], m[(1, 1)]]);
                }
            }
        }
        let start = CalibrationState::evaluate(state.theta, state.poses.clone(), &used, true)?;
        (state, report) = optimize_bundle(&start, &used, &BundleConfig { weighted: true, ..Default::default() })?;
    }
    let out = CalibrationReport {
        theta: state.theta,
        rms: state.rms,
        trace_sigma: state.trace_sigma(),
        sigma: calibwiz_core::calibration::rows_of(&state.sigma),
        images: obs.images.len(),
        iterations: report.iterations,
        converged: report.converged,
    };
    Ok((state, out))
}

/// Observation layout implied by a state file; positions are unused.
fn skeleton(file: &StateFile) -> ObservationSet {
    let mut obs = ObservationSet::new(file.image_size, file.target);
    for indices in file.corner_indices() {
        obs.images.push(ImageObservations::new(indices.into_iter().map(|j| Corner::new(j, 0.0, 0.0)).collect()));
    }
    obs
}

fn suggest(file: &StateFile, weighted: bool, blur: f64, cfg: PlannerConfig) -> Result<Suggestion> {
    let state = file.to_state()?;
    let model = if weighted { Some(CornerModel::build_default()?) } else { None };
    let cond = model.as_ref().map(|m| CornerConditions { model: m, sigma: blur, contrast: 255.0 });
    let base = match &cond {
        Some(c) => precompute_weighted_base(&state, &skeleton(file), c)?,
        None => precompute_base(&state),
    };
    let cfg = PlannerConfig { use_corner_model: weighted, ..cfg };
    let objective = PoseObjective::new(&base, state.theta, file.target, file.image_size, &cfg, cond);
    let space = PoseSearchSpace::default_for(&state.theta, &file.target, file.image_size);
    let r = search_next_pose(&objective, &space, &cfg, None)?;
    Ok(Suggestion { pose: r.pose, objective: r.objective, current_trace: state.trace_sigma(), evaluations: r.evaluations })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve { port, host } => {
            let addr: SocketAddr = format!("{host}:{port}").parse().context("invalid listen address")?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(calibwiz_service::serve(addr, calibwiz_service::AppState::new()))?;
        }
        Command::Calibrate { obs, model, weighted, blur, out } => {
            let set = ObservationSet::load(&obs).with_context(|| format!("reading {}", obs.display()))?;
            let (state, report) = calibrate(&set, model, weighted, blur)?;
            if let Some(path) = out {
                StateFile::new(&state, &set).save(&path)?;
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Suggest { state, weighted, blur, budget, seed, method } => {
            let file = StateFile::load(&state).with_context(|| format!("reading {}", state.display()))?;
            let method = match method {
                Method::Annealing => SearchMethod::SimulatedAnnealing,
                Method::Evolution => SearchMethod::EvolutionStrategy,
            };
            let cfg = PlannerConfig { budget, seed, method, border_margin: 5.0, ..Default::default() };
            println!("{}", serde_json::to_string_pretty(&suggest(&file, weighted, blur, cfg)?)?);
        }
        Command::Simulate { scheme, trials, out, noise, images, seed, config, summary } => {
            let mut cfg: ExperimentConfig = match config {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => ExperimentConfig::default(),
            };
            cfg.scheme = scheme.parse::<Scheme>()?;
            cfg.trials = trials.unwrap_or(cfg.trials);
            cfg.noise_sigma = noise.unwrap_or(cfg.noise_sigma);
            cfg.images_per_trial = images.unwrap_or(cfg.images_per_trial);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let table = run_experiment(&cfg)?;
            table.save_csv(&out)?;
            for f in &table.failures {
                eprintln!("trial {} failed: {}", f.trial, f.message);
            }
            if let Some(path) = summary {
                let stats = summarize(&table, &cfg.ground_truth)?;
                std::fs::write(&path, serde_json::to_string_pretty(&stats)?)?;
            }
            eprintln!("{} rows, {} failed trials -> {}", table.rows.len(), table.failures.len(), out.display());
        }
        Command::Map { state, out, stat, sidecar } => {
            let file = StateFile::load(&state).with_context(|| format!("reading {}", state.display()))?;
            let st = file.to_state()?;
            let map = render_map(&st.theta, &st.sigma, file.image_size, stat)?;
            if map.valid_count() == 0 {
                bail!("no pixel could be backprojected");
            }
            map.write_pgm(&out)?;
            if let Some(p) = sidecar {
                map.write_sidecar(&p)?;
            }
            if let Some((lo, hi)) = map.min_max() {
                eprintln!("{stat:?} range [{lo:.6e}, {hi:.6e}] -> {}", out.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
