//! `velreg`: register, warp and evaluate NVF1 volumes from the shell.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};
use velreg::field::{jacobian, warp_labels, warp_volume};
use velreg::loss::total_loss;
use velreg::metrics::{dice, neg_jacobian_ratio, ssim, MetricsReport};
use velreg::model::write_checkpoint;
use velreg::nvf::{self, Dtype};
use velreg::optim::gradcheck::{gradcheck, DEFAULT_SIZE};
use velreg::register::{load_config, register_pair_with, write_trace, RegistrationConfig};
use velreg::synth::{gen_pair, SynthSpec};
use velreg::{Dims, Error, Volume};

#[derive(Parser, Debug)]
#[command(
    name = "velreg",
    version,
    about = "Diffeomorphic registration with neural velocity fields"
)]
struct Cli {
    /// Cap on worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimize a displacement aligning --moving to --fixed.
    Register(RegisterArgs),
    /// Apply a displacement to a volume.
    Warp(WarpArgs),
    /// Write Dice, negative-Jacobian ratio, SSIM and loss terms as JSON.
    Evaluate(EvaluateArgs),
    /// Report the fraction of folded voxels of a displacement.
    Jacobian(JacobianArgs),
    /// Generate a synthetic pair with a known ground-truth warp.
    Synth(SynthArgs),
    /// Check every gradient stage against finite differences.
    Gradcheck(GradcheckArgs),
    /// Wrap a headerless little-endian f32 file as an NVF1 volume.
    ImportRaw(ImportRawArgs),
}

#[derive(Args, Debug)]
struct RegisterArgs {
    /// Moving image (NVF1, scalar).
    #[arg(long)]
    moving: PathBuf,
    /// Fixed image (NVF1, scalar).
    #[arg(long)]
    fixed: PathBuf,
    /// Output displacement; trace, config and checkpoint are written beside it.
    #[arg(long)]
    out: PathBuf,
    /// Initial displacement (NVF1, 3 channels) for a residual run.
    #[arg(long)]
    init: Option<PathBuf>,
    /// TOML configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured iteration count.
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Args, Debug)]
struct WarpArgs {
    /// Volume to resample.
    #[arg(long)]
    input: PathBuf,
    /// Displacement (NVF1, 3 channels).
    #[arg(long)]
    disp: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Treat the input as a label volume and use nearest-neighbour sampling.
    #[arg(long)]
    labels: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    fixed: PathBuf,
    /// Moving image already warped by --disp.
    #[arg(long)]
    warped: PathBuf,
    #[arg(long)]
    disp: PathBuf,
    #[arg(long, requires = "warped_labels")]
    fixed_labels: Option<PathBuf>,
    #[arg(long, requires = "fixed_labels")]
    warped_labels: Option<PathBuf>,
    /// Loss weights are read from this TOML configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Metrics JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct JacobianArgs {
    #[arg(long)]
    disp: PathBuf,
    /// Optional determinant volume.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Directory for the five volumes and manifest.json.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], default_values_t = [48usize, 48, 48])]
    dims: Vec<usize>,
    #[arg(long, default_value_t = SynthSpec::default().max_speed)]
    max_speed: f64,
    #[arg(long, default_value_t = SynthSpec::default().n_bumps)]
    n_bumps: usize,
    #[arg(long, default_value_t = SynthSpec::default().texture_scale)]
    texture_scale: f64,
    #[arg(long, default_value_t = SynthSpec::default().n_labels)]
    n_labels: usize,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Edge length of the cubic test problem (8 to 16).
    #[arg(long, default_value_t = DEFAULT_SIZE)]
    size: usize,
}

#[derive(Args, Debug)]
struct ImportRawArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], required = true)]
    dims: Vec<usize>,
    #[arg(long, num_args = 3, value_names = ["SX", "SY", "SZ"], default_values_t = [1.0f32, 1.0, 1.0])]
    spacing: Vec<f32>,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Lib(Error),
    /// Checks ran but did not pass.
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical { .. } => 2,
        Error::Io { .. } => 3,
        _ => 1,
    }
}

/// `<out>` with its extension replaced by `suffix`.
fn beside(out: &Path, suffix: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn cmd_register(a: &RegisterArgs) -> Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(p) => load_config(p)?,
        None => RegistrationConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.iters {
        cfg.iterations = n;
    }
    cfg.validate()?;
    let moving = nvf::load_volume::<f64>(&a.moving)?;
    let fixed = nvf::load_volume::<f64>(&a.fixed)?;
    let init = a.init.as_ref().map(nvf::load_field::<f64>).transpose()?;
    let cascaded = init.is_some();
    let resolved = cfg.resolved(cascaded);
    write_text(&beside(&a.out, "config.toml"), &resolved.to_toml_string())?;

    let log_every = cfg.log_every;
    let res = register_pair_with(&moving, &fixed, &cfg, init.as_ref(), |row| {
        if log_every > 0 && row.iter % log_every == 0 {
            eprintln!(
                "iter {:>5}  sim {:.6}  jdet {:.3e}  smooth {:.3e}  total {:.6}  {:.1}s",
                row.iter, row.loss.sim, row.loss.jdet, row.loss.smooth, row.loss.total, row.seconds
            );
        }
    })?;
    let disp = res.displacement.clone().with_spacing(fixed.spacing())?;
    nvf::save_field(&disp, &a.out)?;
    write_trace(&res.trace, beside(&a.out, "trace.csv"))?;
    write_checkpoint(
        &res.model,
        res.coarse_dims,
        &cfg.arch,
        &beside(&a.out, "ckpt.toml"),
        &beside(&a.out, "ckpt.bin"),
    )?;
    let l = res.final_loss;
    println!(
        "sim = {}\njdet = {}\nsmooth = {}\ntotal = {}",
        l.sim, l.jdet, l.smooth, l.total
    );
    println!(
        "iterations = {}\nwall_time_s = {:.3}",
        res.iterations, res.wall_time_s
    );
    Ok(())
}

fn cmd_warp(a: &WarpArgs) -> Result<(), Failure> {
    let (header, _) = nvf::read_file(&a.input)?;
    let disp = nvf::load_field::<f64>(&a.disp)?;
    match (a.labels, header.dtype) {
        (true, Dtype::U32) => {
            let labels = nvf::load_labels(&a.input)?;
            nvf::save_labels(&warp_labels(&labels, &disp)?, &a.out)?;
        }
        (false, Dtype::F32) => {
            let v = nvf::load_volume::<f64>(&a.input)?;
            nvf::save_volume(&warp_volume(&v, &disp)?, &a.out)?;
        }
        (true, Dtype::F32) => {
            return Err(Error::Validation(format!(
                "--labels given but {} holds floating-point intensities",
                a.input.display()
            ))
            .into())
        }
        (false, Dtype::U32) => {
            return Err(Error::Validation(format!(
                "{} holds labels; pass --labels for nearest-neighbour warping",
                a.input.display()
            ))
            .into())
        }
    }
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<(), Failure> {
    let weights = match &a.config {
        Some(p) => load_config(p)?.weights(),
        None => RegistrationConfig::default().weights(),
    };
    let fixed = nvf::load_volume::<f64>(&a.fixed)?;
    let warped = nvf::load_volume::<f64>(&a.warped)?;
    let disp = nvf::load_field::<f64>(&a.disp)?;
    let labels = match (&a.fixed_labels, &a.warped_labels) {
        (Some(f), Some(w)) => Some((nvf::load_labels(f)?, nvf::load_labels(w)?)),
        _ => None,
    };
    let start = Instant::now();
    let scores = labels.as_ref().map(|(f, w)| dice(w, f, None)).transpose()?;
    let ratio = neg_jacobian_ratio(&disp)?;
    let s = ssim(&warped, &fixed)?;
    let loss = total_loss(&warped, &fixed, &disp, &weights)?;
    let report = MetricsReport::new(
        scores.as_ref(),
        ratio,
        s,
        &loss,
        start.elapsed().as_secs_f64(),
    );
    write_text(&a.out, &report.to_json())?;
    Ok(())
}

fn cmd_jacobian(a: &JacobianArgs) -> Result<(), Failure> {
    let disp = nvf::load_field::<f64>(&a.disp)?;
    let ratio = neg_jacobian_ratio(&disp)?;
    if let Some(out) = &a.out {
        let jac = jacobian(&disp)?;
        let det = Volume::new(disp.dims(), disp.spacing(), jac.determinants().to_vec())?;
        nvf::save_volume(&det, out)?;
    }
    println!("neg_jac_ratio = {ratio}");
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::new(), |mut s, b| {
            write!(s, "{b:02x}").unwrap();
            s
        })
}

fn cmd_synth(a: &SynthArgs) -> Result<(), Failure> {
    let spec = SynthSpec {
        dims: [a.dims[0], a.dims[1], a.dims[2]],
        seed: a.seed,
        n_bumps: a.n_bumps,
        max_speed: a.max_speed,
        texture_scale: a.texture_scale,
        n_labels: a.n_labels,
    };
    let pair = gen_pair(&spec)?;
    fs::create_dir_all(&a.out_dir).map_err(|source| Error::Io {
        path: a.out_dir.clone(),
        source,
    })?;
    let files = [
        ("moving.nvf", nvf::encode_volume(&pair.moving)),
        ("fixed.nvf", nvf::encode_volume(&pair.fixed)),
        ("moving_labels.nvf", nvf::encode_labels(&pair.moving_labels)),
        ("fixed_labels.nvf", nvf::encode_labels(&pair.fixed_labels)),
        ("gt_disp.nvf", nvf::encode_field(&pair.ground_truth)),
    ];
    let mut sums = serde_json::Map::new();
    for (name, bytes) in &files {
        let path = a.out_dir.join(name);
        fs::write(&path, bytes).map_err(|source| Error::Io { path, source })?;
        sums.insert((*name).into(), sha256_hex(bytes).into());
    }
    let manifest = serde_json::json!({ "spec": spec, "sha256": sums });
    write_text(
        &a.out_dir.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    let base = dice(&pair.moving_labels, &pair.fixed_labels, None)?;
    println!("baseline_dice = {}", base.mean.unwrap_or(f64::NAN));
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<(), Failure> {
    let report = gradcheck(a.seed, a.size)?;
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Numerical("gradient check above threshold".into()))
    }
}

fn cmd_import_raw(a: &ImportRawArgs) -> Result<(), Failure> {
    let dims = Dims::new(a.dims[0], a.dims[1], a.dims[2]);
    let v = nvf::import_raw_f32::<f32>(&a.input, dims, [a.spacing[0], a.spacing[1], a.spacing[2]])?;
    nvf::save_volume(&v, &a.out)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot set up {n} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Register(a) => cmd_register(a),
        Command::Warp(a) => cmd_warp(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Jacobian(a) => cmd_jacobian(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::ImportRaw(a) => cmd_import_raw(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
