//! `xrds`: toy data generation, training, evaluation and one-shot super-resolution.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.

mod config;
mod images;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand};
use xrds::model::XrdsModel;
use xrds::toyscenes::{make_dataset, SceneSpec, Split};
use xrds::trainer::{evaluate, train};
use xrds::{FeatureMap, XrdsError};

use images::PngEncoding;

#[derive(Parser)]
#[command(name = "xrds", version, about = "Auxiliary-feature guided super-resolution for Monte Carlo renderings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a procedural toy dataset and its manifest
    GenData(GenDataArgs),
    /// Train a model from a config file and overrides
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split, with bicubic rows
    Eval(EvalArgs),
    /// Super-resolve one image
    Sr(SrArgs),
}

fn scale_parser() -> impl TypedValueParser<Value = usize> {
    PossibleValuesParser::new(["1", "2", "4", "8"]).map(|s| s.parse::<usize>().unwrap())
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of scenes (split 80/10/10 into train/val/test)
    #[arg(long, default_value_t = 64)]
    n_scenes: usize,
    /// Output directory (must not exist or be empty)
    #[arg(long)]
    out: PathBuf,
    /// Super-resolution factor
    #[arg(long, default_value = "4", value_parser = scale_parser())]
    scale: usize,
    /// Samples per pixel of the low-resolution rendering
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u32).range(1..))]
    spp_lr: u32,
    /// Samples per pixel of the aux buffers (4000 or more: noise-free)
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..))]
    spp_aux: u32,
    /// Base seed; scene i uses seed XOR i
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// High-resolution height (multiple of 8)
    #[arg(long, default_value_t = 256)]
    height: usize,
    /// High-resolution width (multiple of 8)
    #[arg(long, default_value_t = 256)]
    width: usize,
    /// Albedo texture octaves
    #[arg(long, default_value_t = 5)]
    octaves: usize,
    /// Gaussian bumps in the normal map
    #[arg(long, default_value_t = 24)]
    bumps: usize,
    /// Inject rare 10x outlier pixels into the low-resolution rendering
    #[arg(long, default_value_t = false)]
    fireflies: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML config with [train] and [model] sections
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in defaults the config file is layered on (desk, paper, micro)
    #[arg(long, default_value = "desk", value_parser = PossibleValuesParser::new(["desk", "paper", "micro"]))]
    profile: String,
    /// Override one key, e.g. --override train.lr=0 (repeatable; wins over the file)
    #[arg(long = "override", short = 'o', value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Print the resolved config and exit
    #[arg(long, default_value_t = false)]
    print_config: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset manifest
    #[arg(long)]
    manifest: PathBuf,
    /// Split to evaluate
    #[arg(long, default_value = "test", value_parser = PossibleValuesParser::new(["train", "val", "test"]))]
    split: String,
    /// JSON report path
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
}

#[derive(Args)]
struct SrArgs {
    /// Checkpoint file
    #[arg(long)]
    checkpoint: PathBuf,
    /// Low-resolution radiance: raw f32 (CHW) or sRGB PNG
    #[arg(long)]
    lr: PathBuf,
    /// Albedo: raw f32 (CHW) or sRGB PNG
    #[arg(long)]
    albedo: PathBuf,
    /// Normal: raw f32 (CHW) or PNG with v/255*2-1 encoding
    #[arg(long)]
    normal: PathBuf,
    /// Size of a raw low-resolution input as HxW
    #[arg(long, value_name = "HxW")]
    lr_size: Option<String>,
    /// Output stem; writes <out>.f32 (linear) and <out>.png (sRGB preview)
    #[arg(long)]
    out: PathBuf,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<XrdsError> for Failure {
    fn from(e: XrdsError) -> Self {
        Self {
            code: if e.is_validation() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn write_atomic(path: &Path, bytes: &[u8]) -> CmdResult {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Failure {
        code: 1,
        message: format!("cannot write {}: {e}", tmp.display()),
    })?;
    fs::rename(&tmp, path).map_err(|e| Failure {
        code: 1,
        message: format!("cannot write {}: {e}", path.display()),
    })
}

fn gen_data(a: GenDataArgs) -> CmdResult {
    if a.n_scenes == 0 {
        return Err(Failure::usage("--n-scenes must be at least 1"));
    }
    let spec = SceneSpec {
        height: a.height,
        width: a.width,
        octaves: a.octaves,
        bumps: a.bumps,
        fireflies: a.fireflies,
        ..SceneSpec::default()
    };
    spec.validate().map_err(|e| Failure::usage(format!("--height/--width: {e}")))?;
    if !a.height.is_multiple_of(a.scale) || !a.width.is_multiple_of(a.scale) {
        return Err(Failure::usage("--scale must divide --height and --width"));
    }
    if a.out.exists() {
        let empty = fs::read_dir(&a.out).map(|mut d| d.next().is_none()).unwrap_or(false);
        if !empty {
            return Err(Failure::usage(format!("--out {} exists and is not empty", a.out.display())));
        }
        fs::remove_dir(&a.out).map_err(|e| Failure::usage(format!("--out {}: {e}", a.out.display())))?;
    }
    let staging = PathBuf::from(format!("{}.partial-{}", a.out.display(), std::process::id()));
    let result = make_dataset(a.n_scenes, &spec, &staging, a.scale, a.spp_lr, a.spp_aux, a.seed);
    if let Err(e) = result {
        let _ = fs::remove_dir_all(&staging);
        return Err(e.into());
    }
    fs::rename(&staging, &a.out).map_err(|e| Failure {
        code: 1,
        message: format!("cannot move dataset into {}: {e}", a.out.display()),
    })?;
    println!("{}", a.out.join(xrds::toyscenes::MANIFEST_FILE).display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> CmdResult {
    if let Some(path) = &a.config {
        if !path.is_file() {
            return Err(Failure::usage(format!("--config {} does not exist", path.display())));
        }
    }
    let cfg = config::resolve(&a.profile, a.config.as_deref(), &a.overrides).map_err(Failure::usage)?;
    if a.print_config {
        print!("{}", config::render(&cfg));
        return Ok(());
    }
    let outcome = train(&cfg)?;
    eprintln!(
        "trained {} steps; best val PSNR {:.3} dB; log {}",
        outcome.steps,
        outcome.best_val_psnr,
        outcome.log_path.display()
    );
    println!("{}", outcome.best_checkpoint.display());
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> CmdResult {
    let split: Split = a.split.parse().map_err(|e: XrdsError| Failure::usage(e.to_string()))?;
    for (flag, p) in [("--checkpoint", &a.checkpoint), ("--manifest", &a.manifest)] {
        if !p.is_file() {
            return Err(Failure::usage(format!("{flag} {} does not exist", p.display())));
        }
    }
    let report = evaluate(&a.checkpoint, &a.manifest, split)?;
    write_atomic(&a.out, report.to_json()?.as_bytes())?;
    print!("{}", report.to_table());
    Ok(())
}

fn parse_size(s: &str) -> Result<(usize, usize), Failure> {
    let bad = || Failure::usage(format!("--lr-size `{s}` must look like HxW"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
}

fn read_input(path: &Path, flag: &str, size: Option<(usize, usize)>, enc: PngEncoding) -> Result<FeatureMap, Failure> {
    if !path.is_file() {
        return Err(Failure::usage(format!("{flag} {} does not exist", path.display())));
    }
    if images::is_png(path) {
        return images::read_png(path, enc).map_err(|m| Failure::usage(format!("{flag}: {m}")));
    }
    let (h, w) = size.ok_or_else(|| Failure::usage(format!("{flag}: raw input needs --lr-size")))?;
    images::read_raw(path, h, w, flag).map_err(Failure::usage)
}

fn sr_cmd(a: SrArgs) -> CmdResult {
    if !a.checkpoint.is_file() {
        return Err(Failure::usage(format!("--checkpoint {} does not exist", a.checkpoint.display())));
    }
    let model = XrdsModel::load(&a.checkpoint)?;
    let s = model.scale();
    let lr_size = a.lr_size.as_deref().map(parse_size).transpose()?;
    let lr = read_input(&a.lr, "--lr", lr_size, PngEncoding::Srgb)?;
    let hr_size = Some((lr.height() * s, lr.width() * s));
    let albedo = read_input(&a.albedo, "--albedo", hr_size, PngEncoding::Srgb)?;
    let normal = read_input(&a.normal, "--normal", hr_size, PngEncoding::SignedUnit)?;
    for (flag, map) in [("--albedo", &albedo), ("--normal", &normal)] {
        if map.height() != s * lr.height() || map.width() != s * lr.width() {
            return Err(Failure::usage(format!(
                "{flag}: expected 3x{}x{} for a 3x{}x{} lr image at scale {s}, got 3x{}x{}",
                s * lr.height(),
                s * lr.width(),
                lr.height(),
                lr.width(),
                map.height(),
                map.width()
            )));
        }
    }
    let aux = FeatureMap::stack_channels(&[&albedo, &normal])?;
    let sr = model.predict(&lr, &aux)?;
    let stem = if a.out.extension().is_some_and(|e| e == "f32" || e == "png") {
        a.out.with_extension("")
    } else {
        a.out.clone()
    };
    let png = images::encode_png(&sr).map_err(|m| Failure { code: 1, message: m })?;
    let raw_path = stem.with_extension("f32");
    let png_path = stem.with_extension("png");
    write_atomic(&raw_path, &images::encode_raw(&sr))?;
    write_atomic(&png_path, &png)?;
    println!("{}", raw_path.display());
    println!("{}", png_path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Sr(a) => sr_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
