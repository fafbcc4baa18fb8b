//! Command-line pipeline: simulate datasets, train regressors, fit images,
//! and benchmark every method against the same shots.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use atomfit::cnn::{self, NetworkSpec, RegressorModel};
use atomfit::error::{Error, Result};
use atomfit::evaluate::{
    chi_square, param_error_stats, run_benchmark, ParamErrorStats, REPORT_FORMAT_VERSION,
};
use atomfit::imaging::{od_from_triple, DEFAULT_T_FLOOR, GaussianParams};
use atomfit::io::{
    load_background_library, load_dataset, load_model, save_dataset, save_model, DatasetMode,
    RunConfig, LIBRARY_SUBDIR,
};
use atomfit::lsfit::{fit_2d, fit_3x1d, FitResult};
use atomfit::simulator::{build_dataset, synth_library, LabeledShot};

#[derive(Parser)]
#[command(name = "atomfit", version, about = "Absorption-image simulation, fitting, and benchmarking")]
struct Cli {
    /// Base RNG seed for anything stochastic.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Run-configuration JSON; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads for parallel fitting; 0 means one per core.
    /// Benchmark timings are always taken on a single thread.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Ml1,
    Ml3,
}

impl From<ModeArg> for DatasetMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ml1 => DatasetMode::Ml1,
            ModeArg::Ml3 => DatasetMode::Ml3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    #[value(name = "3x1dls")]
    Slice3x1d,
    #[value(name = "2dls")]
    Full2d,
    Ml1,
    Ml3,
}

impl MethodArg {
    fn name(self) -> &'static str {
        match self {
            MethodArg::Slice3x1d => "3x1dls",
            MethodArg::Full2d => "2dls",
            MethodArg::Ml1 => "ml1",
            MethodArg::Ml3 => "ml3",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic background library into <out>/backgrounds.
    SynthBg,

    /// Simulate a labeled dataset (frames + manifest) into <out>.
    Simulate {
        /// Background library directory; defaults to <out>/backgrounds.
        #[arg(long)]
        library: Option<PathBuf>,
        /// Intended training mode recorded in the manifest.
        #[arg(long, value_enum, default_value_t = ModeArg::Ml3)]
        mode: ModeArg,
    },

    /// Train a regressor on a simulated dataset.
    Train {
        /// Dataset directory (holding dataset.json); defaults to <out>.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Override the mode recorded in the manifest.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Model manifest path; defaults to <out>/model_<mode>.json.
        #[arg(long)]
        model_out: Option<PathBuf>,
    },

    /// Fit every shot of a dataset with one method.
    Fit {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Trained model (required for ml1/ml3).
        #[arg(long)]
        model: Option<PathBuf>,
    },

    /// Fit a dataset and score the results: chi-square per shot plus
    /// parameter-error statistics against the manifest truth.
    Evaluate {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },

    /// Full comparison of all methods on one dataset (accuracy + latency).
    Bench {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        ml1_model: Option<PathBuf>,
        #[arg(long)]
        ml3_model: Option<PathBuf>,
    },

    /// Continue training an existing model on a (drifted) dataset.
    FineTune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        /// Defaults to <out>/model_tuned.json.
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    match &cli.config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

fn dataset_dir(cli: &Cli, dataset: &Option<PathBuf>) -> PathBuf {
    dataset.clone().unwrap_or_else(|| cli.out.clone())
}

/// JSON wrapper shared by fit/evaluate outputs so every artifact carries
/// its format version and producing config hash.
#[derive(Serialize)]
struct Envelope<T: Serialize> {
    format_version: u32,
    config_hash: String,
    method: String,
    #[serde(flatten)]
    body: T,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    std::fs::write(path, json)?;
    Ok(())
}

#[derive(Serialize)]
struct ShotFit {
    index: usize,
    params: GaussianParams,
    converged: bool,
    iterations: usize,
    residual_ss: f64,
    elapsed_s: f64,
}

fn fit_shot(
    method: MethodArg,
    shot: &LabeledShot,
    config: &RunConfig,
    model: Option<&RegressorModel>,
) -> Result<ShotFit> {
    let to_record = |r: FitResult, index: usize| ShotFit {
        index,
        params: r.params,
        converged: r.converged,
        iterations: r.iterations,
        residual_ss: r.residual_ss,
        elapsed_s: r.elapsed.as_secs_f64(),
    };
    match method {
        MethodArg::Slice3x1d => {
            let od = od_from_triple(&shot.triple, DEFAULT_T_FLOOR)?;
            Ok(to_record(fit_3x1d(&od, &config.fit)?, 0))
        }
        MethodArg::Full2d => {
            let od = od_from_triple(&shot.triple, DEFAULT_T_FLOOR)?;
            Ok(to_record(fit_2d(&od, &config.fit, None)?, 0))
        }
        MethodArg::Ml1 | MethodArg::Ml3 => {
            let model = model.ok_or_else(|| {
                Error::Config(format!("--model is required for method {}", method.name()))
            })?;
            let t0 = std::time::Instant::now();
            let params = cnn::forward_shot(model, shot)?;
            Ok(ShotFit {
                index: 0,
                params,
                converged: true,
                iterations: 0,
                residual_ss: f64::NAN,
                elapsed_s: t0.elapsed().as_secs_f64(),
            })
        }
    }
}

fn load_method_model(method: MethodArg, model: &Option<PathBuf>) -> Result<Option<RegressorModel>> {
    match (method, model) {
        (MethodArg::Ml1 | MethodArg::Ml3, Some(path)) => {
            let m = load_model(path)?;
            let want = if method == MethodArg::Ml1 { 1 } else { 3 };
            if m.spec.input_channels != want {
                return Err(Error::ChannelMismatch { got: m.spec.input_channels, want });
            }
            Ok(Some(m))
        }
        (MethodArg::Ml1 | MethodArg::Ml3, None) => Err(Error::Config(format!(
            "--model is required for method {}",
            method.name()
        ))),
        _ => Ok(None),
    }
}

fn fit_all(
    method: MethodArg,
    shots: &[LabeledShot],
    config: &RunConfig,
    model: Option<&RegressorModel>,
) -> Result<Vec<ShotFit>> {
    let mut fits: Vec<ShotFit> = shots
        .par_iter()
        .map(|s| fit_shot(method, s, config, model))
        .collect::<Result<_>>()?;
    for (i, f) in fits.iter_mut().enumerate() {
        f.index = i;
    }
    Ok(fits)
}

fn train_mode_spec(mode: DatasetMode) -> NetworkSpec {
    match mode {
        DatasetMode::Ml1 => NetworkSpec::ml1(),
        DatasetMode::Ml3 => NetworkSpec::ml3(),
    }
}

fn mode_name(mode: DatasetMode) -> &'static str {
    match mode {
        DatasetMode::Ml1 => "ml1",
        DatasetMode::Ml3 => "ml3",
    }
}

fn run(cli: &Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let config = load_config(cli)?;
    config.validate()?;
    let hash = config.hash();
    std::fs::create_dir_all(&cli.out)?;

    match &cli.command {
        Command::SynthBg => {
            let dir = cli.out.join(LIBRARY_SUBDIR);
            let library = synth_library(
                &config.synth_bg,
                config.width,
                config.height,
                config.library_entries,
                cli.seed,
            )?;
            atomfit::io::save_background_library(&dir, &library)?;
            println!("wrote {} background pairs to {}", library.len(), dir.display());
        }

        Command::Simulate { library, mode } => {
            let lib_dir = library.clone().unwrap_or_else(|| cli.out.join(LIBRARY_SUBDIR));
            let library = load_background_library(&lib_dir)?;
            let shots = build_dataset(&library, &config.ranges, config.shots, cli.seed)?;
            let manifest = save_dataset(
                &cli.out,
                &library,
                &shots,
                &config.ranges,
                (*mode).into(),
                cli.seed,
                &hash,
            )?;
            println!(
                "wrote {} shots ({}x{}) and manifest to {}",
                manifest.shot_count,
                manifest.width,
                manifest.height,
                cli.out.display()
            );
        }

        Command::Train { dataset, mode, model_out } => {
            let dir = dataset_dir(cli, dataset);
            let (manifest, _, shots) = load_dataset(&dir)?;
            let mode = mode.map(DatasetMode::from).unwrap_or(manifest.mode);
            let spec = train_mode_spec(mode);
            let (mut model, curve) = cnn::train(
                &spec,
                &shots,
                &manifest.ranges,
                config.train_split,
                &config.train,
                cli.seed,
            )?;
            model.provenance.dataset_id = manifest.config_hash.clone();
            let out = model_out
                .clone()
                .unwrap_or_else(|| cli.out.join(format!("model_{}.json", mode_name(mode))));
            save_model(&out, &model)?;
            write_json(
                &cli.out.join(format!("curve_{}.json", mode_name(mode))),
                &Envelope {
                    format_version: REPORT_FORMAT_VERSION,
                    config_hash: hash.clone(),
                    method: mode_name(mode).into(),
                    body: serde_json::json!({ "epochs": curve }),
                },
            )?;
            let final_val = curve.last().map(|e| e.val_loss).unwrap_or(f64::NAN);
            println!("wrote {} (final validation loss {final_val:.5})", out.display());
        }

        Command::Fit { method, dataset, model } => {
            let dir = dataset_dir(cli, dataset);
            let (_, _, shots) = load_dataset(&dir)?;
            let model = load_method_model(*method, model)?;
            let fits = fit_all(*method, &shots, &config, model.as_ref())?;
            let out = cli.out.join(format!("fit_{}.json", method.name()));
            write_json(
                &out,
                &Envelope {
                    format_version: REPORT_FORMAT_VERSION,
                    config_hash: hash.clone(),
                    method: method.name().into(),
                    body: serde_json::json!({ "fits": fits }),
                },
            )?;
            println!("wrote {} ({} shots)", out.display(), fits.len());
        }

        Command::Evaluate { method, dataset, model } => {
            let dir = dataset_dir(cli, dataset);
            let (_, _, shots) = load_dataset(&dir)?;
            let model = load_method_model(*method, model)?;
            let fits = fit_all(*method, &shots, &config, model.as_ref())?;

            #[derive(Serialize)]
            struct ShotScore {
                index: usize,
                reduced_chi_square: f64,
                dof: usize,
            }
            let scores: Vec<ShotScore> = shots
                .par_iter()
                .zip(&fits)
                .map(|(shot, fit)| {
                    let od = od_from_triple(&shot.triple, DEFAULT_T_FLOOR)?;
                    let chi = chi_square(&od, &fit.params)?;
                    Ok(ShotScore {
                        index: fit.index,
                        reduced_chi_square: chi.reduced(),
                        dof: chi.dof,
                    })
                })
                .collect::<Result<_>>()?;
            let pairs: Vec<(GaussianParams, GaussianParams)> =
                shots.iter().zip(&fits).map(|(s, f)| (f.params, s.truth)).collect();
            let errors: ParamErrorStats = param_error_stats(&pairs)?;

            let out = cli.out.join(format!("evaluate_{}.json", method.name()));
            write_json(
                &out,
                &Envelope {
                    format_version: REPORT_FORMAT_VERSION,
                    config_hash: hash.clone(),
                    method: method.name().into(),
                    body: serde_json::json!({
                        "shots": scores,
                        "param_errors": errors,
                        "fits": fits,
                    }),
                },
            )?;
            println!("wrote {} ({} shots)", out.display(), shots.len());
        }

        Command::Bench { dataset, ml1_model, ml3_model } => {
            let dir = dataset_dir(cli, dataset);
            let (_, _, shots) = load_dataset(&dir)?;
            let ml1 = ml1_model.as_ref().map(|p| load_model(p)).transpose()?;
            let ml3 = ml3_model.as_ref().map(|p| load_model(p)).transpose()?;
            let (report, flat) = run_benchmark(
                &shots,
                &config.fit,
                ml1.as_ref(),
                ml3.as_ref(),
                config.bench_warmup,
                cli.seed,
                &hash,
            )?;
            write_json(&cli.out.join("bench.json"), &report)?;
            write_flat_csv(&cli.out.join("bench.csv"), &flat)?;
            for m in &report.methods {
                println!(
                    "{:>7}: median chi2/dof {:8.4}  median time {:9.3} ms  ({} shots)",
                    m.method,
                    m.median_reduced_chi_square,
                    m.median_time_s * 1e3,
                    m.n
                );
            }
            println!("wrote {} and bench.csv", cli.out.join("bench.json").display());
        }

        Command::FineTune { model, dataset, epochs, model_out } => {
            let dir = dataset_dir(cli, dataset);
            let (manifest, _, shots) = load_dataset(&dir)?;
            let base = load_model(model)?;
            let before = cnn::evaluate_loss(&base, &shots)?;
            let (mut tuned, _) = cnn::fine_tune(&base, &shots, *epochs, &config.train, cli.seed)?;
            tuned.provenance.dataset_id = manifest.config_hash.clone();
            let after = cnn::evaluate_loss(&tuned, &shots)?;
            let out = model_out.clone().unwrap_or_else(|| cli.out.join("model_tuned.json"));
            save_model(&out, &tuned)?;
            println!(
                "wrote {} (loss on dataset: {before:.5} before, {after:.5} after)",
                out.display()
            );
        }
    }
    Ok(())
}

/// Flat per-image-per-method table for external plotting. Times in
/// seconds; parameters in pixels/OD/radians, canonical form.
fn write_flat_csv(path: &Path, rows: &[atomfit::evaluate::FlatRecord]) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = String::from(
        "shot,method,reduced_chi_square,time_s,converged,\
         est_x0,est_y0,est_sigma_x,est_sigma_y,est_rho,est_b,est_theta,\
         true_x0,true_y0,true_sigma_x,true_sigma_y,true_rho,true_b,true_theta\n",
    );
    for r in rows {
        let e = r.estimate.to_array();
        let t = r.truth.to_array();
        write!(out, "{},{},{},{},{}", r.shot, r.method, r.reduced_chi_square, r.time_s, r.converged)
            .expect("string write");
        for v in e.iter().chain(t.iter()) {
            write!(out, ",{v}").expect("string write");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
