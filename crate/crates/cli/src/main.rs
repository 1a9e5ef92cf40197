mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use pscnet_core::data::{limit_shorter_side, load_dataset, pnm, synth_dataset, SynthConfig};
use pscnet_core::model::pad_to_stride;
use pscnet_core::train::{evaluate, train_from};
use pscnet_core::verify::{self, Fault, VerifyOptions};
use pscnet_core::{checkpoint, AnnotatedScene, DensityRaster, ModelParams, Pscnet};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "pscnet", version, about = "Crowd counting with pyramidal scale and global context modules")]
struct Cli {
    /// Worker thread cap; results do not depend on it.
    #[arg(long, global = true, env = "PSCNET_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a dataset directory; writes best.ckpt, last.ckpt and train.log.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report MAE and RMSE of a checkpoint over a dataset directory.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Needed only for non-default gate forms or unusual widths.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write the density raster of one image and print its count.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write a max-normalized 8-bit PGM of the density.
        #[arg(long)]
        vis: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Generate a synthetic dot-crowd dataset.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write into a non-empty directory.
        #[arg(long)]
        force: bool,
    },
    /// Run the acceptance suites; exits nonzero if any fails.
    Verify {
        /// Suite name substring, module name or number.
        #[arg(long)]
        filter: Option<String>,
        #[arg(long, value_enum)]
        fault: Option<FaultArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    /// Scale channel normalization by C instead of sqrt(C).
    GcmNormScale,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    match cli.command {
        Command::Train { config, data, out } => train(config.as_deref(), &data, &out),
        Command::Eval { model, data, config } => eval(&model, &data, config.as_deref()),
        Command::Predict {
            model,
            image,
            out,
            vis,
            config,
        } => predict(&model, &image, &out, vis.as_deref(), config.as_deref()),
        Command::Synth {
            n,
            size,
            out,
            seed,
            force,
        } => synth(n, size, &out, seed, force),
        Command::Verify { filter, fault } => verify(filter, fault),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => {
            eprintln!("warning: no --config given, using defaults");
            Ok(RunConfig::default())
        }
    }
}

fn load_scenes(dir: &Path) -> Result<Vec<AnnotatedScene>> {
    if !dir.is_dir() {
        bail!("data directory {} does not exist", dir.display());
    }
    let ds = load_dataset(dir)?;
    if ds.clamped_points > 0 {
        eprintln!("warning: {} annotation points clamped into image bounds", ds.clamped_points);
    }
    Ok(ds.scenes)
}

fn train(config: Option<&Path>, data: &Path, out: &Path) -> Result<ExitCode> {
    let cfg = load_config(config)?;
    let scenes = load_scenes(data)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let log_path = out.join("train.log");
    let mut log = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let model = Pscnet::new(cfg.model());
    let params = model.init_params(cfg.train.seed)?;
    let mut log_err = None;
    let outcome = train_from(&model, params, &scenes, &cfg.train, |line| {
        println!("{line}");
        if let Err(e) = writeln!(log, "{line}") {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(anyhow!("writing {}: {e}", log_path.display()));
    }
    checkpoint::write(&out.join("best.ckpt"), &outcome.best)?;
    checkpoint::write(&out.join("last.ckpt"), &outcome.last)?;
    match outcome.best_val_mae {
        Some(m) => println!("best step={} val_mae={m:.6}", outcome.best_step),
        None => println!("best step={} (no validation split)", outcome.best_step),
    }
    Ok(ExitCode::SUCCESS)
}

/// Loads a checkpoint into the model described by `config`, or, without a
/// config, into the first standard width whose parameter shapes all match.
fn load_model(path: &Path, config: Option<&Path>) -> Result<(Pscnet, ModelParams<f32>)> {
    let ckpt = checkpoint::read(path)?;
    if let Some(c) = config {
        let model = Pscnet::new(RunConfig::load(c)?.model());
        let params = fit(&model, &ckpt)?;
        return Ok((model, params));
    }
    let mut first_err = None;
    for ws in [0.125, 0.25, 0.5, 1.0, 0.0625] {
        let model = Pscnet::new(RunConfig { width_scale: ws, ..Default::default() }.model());
        match fit(&model, &ckpt) {
            Ok(p) => return Ok((model, p)),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    Err(first_err
        .unwrap_or_else(|| anyhow!("no candidate width"))
        .context(format!("{} matches no standard width; pass --config", path.display())))
}

fn fit(model: &Pscnet, ckpt: &ModelParams<f32>) -> Result<ModelParams<f32>> {
    let mut params = model.init_params(0)?;
    params.load_from(ckpt)?;
    if let Some(missing) = params.names().find(|n| !ckpt.contains(n)) {
        bail!("checkpoint lacks tensor {missing}");
    }
    Ok(params)
}

fn eval(model_path: &Path, data: &Path, config: Option<&Path>) -> Result<ExitCode> {
    let (model, params) = load_model(model_path, config)?;
    let max_side = match config {
        Some(c) => RunConfig::load(c)?.train.max_shorter_side,
        None => RunConfig::default().train.max_shorter_side,
    };
    let scenes = load_scenes(data)?;
    let report = evaluate(&model, &params, &scenes, max_side)?;
    print!("{}", report.table());
    println!("{}", report.json_line());
    Ok(ExitCode::SUCCESS)
}

fn predict(model_path: &Path, image: &Path, out: &Path, vis: Option<&Path>, config: Option<&Path>) -> Result<ExitCode> {
    let (model, params) = load_model(model_path, config)?;
    let max_side = match config {
        Some(c) => RunConfig::load(c)?.train.max_shorter_side,
        None => RunConfig::default().train.max_shorter_side,
    };
    let img = pnm::read_rgb(image)?;
    let scene = limit_shorter_side(&AnnotatedScene::new(image.display().to_string(), img, Vec::new())?, max_side)?;
    let padded = pad_to_stride(&scene.image, &[])?;
    let density = model.predict(&params, &padded.image)?;
    let (kept, _) = padded.crop_density(&density)?;
    let raster = DensityRaster::from_density(&kept)?;
    raster.write(out)?;
    if let Some(v) = vis {
        pnm::write_gray_bytes(v, raster.height, raster.width, &raster.visualization())?;
    }
    println!("count={:.6}", raster.sum());
    Ok(ExitCode::SUCCESS)
}

fn synth(n: usize, size: usize, out: &Path, seed: u64, force: bool) -> Result<ExitCode> {
    if n == 0 {
        bail!("--n must be at least 1");
    }
    if out.exists() {
        let non_empty = fs::read_dir(out)
            .with_context(|| format!("reading {}", out.display()))?
            .next()
            .is_some();
        if non_empty && !force {
            bail!("{} is not empty; pass --force to write into it", out.display());
        }
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let cfg = SynthConfig {
        n_scenes: n,
        size,
        seed,
        ..Default::default()
    };
    let scenes = synth_dataset(&cfg)?;
    pscnet_core::data::synth::write_dataset(out, &scenes)?;
    println!("wrote {n} scenes to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn verify(filter: Option<String>, fault: Option<FaultArg>) -> Result<ExitCode> {
    let opts = VerifyOptions {
        filter,
        fault: fault.map(|FaultArg::GcmNormScale| Fault::GcmNormScale),
    };
    let results = verify::run(&opts, |r| println!("{}", r.line()));
    if results.is_empty() {
        bail!("no suite matches the filter");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
