//! Command-line front end: `train`, `translate`, `eval`, `gradcheck` and
//! `selftest`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::data::{self, CropMode, Dataset, DatasetConfig};
use crate::error::{Error, Result};
use crate::eval::{self, Direction};
use crate::models::default_res_blocks;
use crate::objectives::LossMode;
use crate::trainer::{load_checkpoint, FitOptions, TrainConfig, Trainer};
use crate::verify;

pub const SEED_ENV: &str = "THERMALCYCLE_SEED";

#[derive(Debug, Parser)]
#[command(name = "thermalcycle", version, about = "Unpaired RGB-to-thermal translation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train both generators and discriminators on an unpaired dataset.
    Train(TrainArgs),
    /// Translate one image or every image in a directory.
    Translate(TranslateArgs),
    /// Score a checkpoint on the paired test split.
    Eval(EvalArgs),
    /// Compare reverse-mode gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Run the built-in verification suite.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root holding trainA/ (RGB) and trainB/ (thermal).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for checkpoints and the loss log.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Flat `key = value` file applied before command-line flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub dry_run: bool,
    /// Suppress per-iteration progress.
    #[arg(long)]
    pub quiet: bool,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub lambda_cycle: Option<f32>,
    #[arg(long)]
    pub lambda_identity: Option<f32>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub res_blocks: Option<usize>,
    #[arg(long)]
    pub pool: Option<usize>,
    #[arg(long)]
    pub loss: Option<LossMode>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub base_filters: Option<usize>,
    #[arg(long)]
    pub disc_filters: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub log_every: Option<usize>,
    #[arg(long)]
    pub crop: Option<CropMode>,
    #[arg(long)]
    pub hflip: Option<bool>,
    #[arg(long)]
    pub vflip: Option<bool>,
    #[arg(long)]
    pub rotate: Option<bool>,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// An image file or a directory of images.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `ab` for RGB to thermal, `ba` for thermal to RGB.
    #[arg(long, default_value = "ab")]
    pub direction: Direction,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset root holding testA/ and testB/ with matching file names.
    #[arg(long)]
    pub data: PathBuf,
    /// Report path; a text summary is written next to it with a `.txt` extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Case name, or `all`.
    #[arg(long, default_value = "all")]
    pub op: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Error raised when a check subcommand finds failures.
fn checks_failed(n: usize, what: &str) -> Error {
    Error::InvalidArgument(format!("{n} {what} failed"))
}

/// Resolves the training configuration: defaults, then the seed from the
/// environment, then the config file, then explicit flags. When neither the
/// file nor the flags set the residual block count it follows the image size.
pub fn resolve_train_config(args: &TrainArgs, env_seed: Option<&str>) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(s) = env_seed {
        cfg.set("seed", s)
            .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{s}`")))?;
    }
    let mut res_blocks_explicit = args.res_blocks.is_some();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.overlay_text(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        res_blocks_explicit |= text
            .lines()
            .filter_map(|l| l.split_once('='))
            .any(|(k, _)| k.trim() == "n_res_blocks");
    }
    macro_rules! flag {
        ($field:ident, $value:expr) => {
            if let Some(v) = $value {
                cfg.$field = v;
            }
        };
    }
    flag!(epochs, args.epochs);
    flag!(batch, args.batch);
    flag!(lr, args.lr);
    flag!(lambda_cycle, args.lambda_cycle);
    flag!(lambda_identity, args.lambda_identity);
    flag!(image_size, args.image_size);
    flag!(n_res_blocks, args.res_blocks);
    flag!(pool_capacity, args.pool);
    flag!(loss_mode, args.loss);
    flag!(seed, args.seed);
    flag!(workers, args.workers);
    flag!(base_filters, args.base_filters);
    flag!(disc_filters, args.disc_filters);
    flag!(checkpoint_every, args.checkpoint_every);
    flag!(log_every, args.log_every);
    flag!(crop, args.crop);
    flag!(hflip, args.hflip);
    flag!(vflip, args.vflip);
    flag!(rotate, args.rotate);
    if !res_blocks_explicit {
        cfg.n_res_blocks = default_res_blocks(cfg.image_size);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::Dataset(format!("{what} directory not found: {}", path.display())))
    }
}

fn train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = resolve_train_config(args, env_seed.as_deref())?;
    if args.dry_run {
        write!(out, "{}", cfg.to_text()).map_err(|e| Error::io("<stdout>", e))?;
        return Ok(());
    }
    let root = args
        .data
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("train requires --data <root>".into()))?;
    require_dir(root, "data")?;
    let out_dir = args
        .out
        .clone()
        .ok_or_else(|| Error::InvalidArgument("train requires --out <dir>".into()))?;
    let dataset = Dataset::open(cfg.dataset(root))?;
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let cfg_path = out_dir.join("config.txt");
    std::fs::write(&cfg_path, cfg.to_text()).map_err(|e| Error::io(&cfg_path, e))?;
    let mut trainer = Trainer::new(cfg)?;
    let opts = FitOptions {
        out_dir: Some(out_dir.clone()),
        verbose: !args.quiet,
    };
    let records = trainer.fit(&dataset, &opts)?;
    let trend = eval::loss_trend(&records);
    if let Some(last) = records.last() {
        writeln!(
            out,
            "trained {} epochs: generator {:.4}, discriminator {:.4}; generator falling: {}, discriminator rising: {}",
            last.epoch, last.generator_loss, last.discriminator_loss, trend.g_decreased, trend.d_increased
        )
        .map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}

fn translate(args: &TranslateArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let inputs = if args.input.is_dir() {
        data::list_images(&args.input)?
    } else if args.input.is_file() {
        vec![args.input.clone()]
    } else {
        return Err(Error::InvalidArgument(format!("input not found: {}", args.input.display())));
    };
    if inputs.is_empty() {
        return Err(Error::Dataset(format!("no PNG/JPEG images in {}", args.input.display())));
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    for path in &inputs {
        let img = data::load_image(path)?;
        let img = data::geometry_normalize(&img, ckpt.config.crop, ckpt.config.image_size)?;
        let result = eval::translate(&ckpt, &img, args.direction)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let dest = args.out.join(format!("{stem}.png"));
        data::save_png(&result, &dest)?;
        writeln!(out, "{} -> {}", path.display(), dest.display()).map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}

fn evaluate(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    require_dir(&args.data, "data")?;
    let mut ds = DatasetConfig::evaluation(&args.data, ckpt.config.image_size);
    ds.crop = ckpt.config.crop;
    let dataset = Dataset::open(ds)?;
    let report = eval::evaluate(&ckpt, &dataset)?;
    report.write(&args.out)?;
    write!(out, "{}", report.summary()).map_err(|e| Error::io("<stdout>", e))
}

fn gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<()> {
    let results = if args.op == "all" {
        verify::run_all(args.seed)?
    } else {
        vec![verify::run_case(&args.op, args.seed)?]
    };
    let mut failed = 0;
    for r in &results {
        let status = if r.passed() { "pass" } else { "FAIL" };
        failed += usize::from(!r.passed());
        writeln!(
            out,
            "{:<26} max_rel_error={:.3e} checked={} {status}",
            r.name, r.report.max_rel_error, r.report.checked
        )
        .map_err(|e| Error::io("<stdout>", e))?;
    }
    if failed > 0 {
        return Err(checks_failed(failed, "gradient checks"));
    }
    Ok(())
}

fn selftest(args: &SelftestArgs, out: &mut dyn Write) -> Result<()> {
    let checks = verify::selftest(args.seed)?;
    let mut failed = 0;
    for c in &checks {
        failed += usize::from(!c.passed);
        let status = if c.passed { "pass" } else { "FAIL" };
        writeln!(out, "{:<32} {status} {}", c.name, c.detail).map_err(|e| Error::io("<stdout>", e))?;
    }
    if failed > 0 {
        return Err(checks_failed(failed, "self-test checks"));
    }
    Ok(())
}

/// Runs a parsed command, writing normal output to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Train(a) => train(a, out),
        Command::Translate(a) => translate(a, out),
        Command::Eval(a) => evaluate(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::Selftest(a) => selftest(a, out),
    }
}

/// One-line error report: `error kind=<tag> message=<text>`.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace('\n', " ");
    format!("error kind={} message={msg}", e.kind())
}

/// Parses `argv`, runs the command and returns the process exit status:
/// 0 on success, 1 on a runtime error, 2 on bad usage.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return 0;
            }
            let rendered = e.render().to_string();
            eprint!("{rendered}");
            if !rendered.contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return 2;
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(&cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            let _ = lock.flush();
            eprintln!("{}", error_line(&e));
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("thermalcycle").chain(args.iter().copied())).unwrap()
    }

    fn train_args(args: &[&str]) -> TrainArgs {
        let mut v = vec!["train"];
        v.extend_from_slice(args);
        match parse(&v).command {
            Command::Train(a) => a,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn defaults_resolve_to_reported_values() {
        let cfg = resolve_train_config(&train_args(&[]), None).unwrap();
        assert_eq!(cfg, TrainConfig::default());
    }

    #[test]
    fn flags_override_file_and_env() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.txt");
        std::fs::write(&file, "epochs = 5\nseed = 9\n").unwrap();
        let f = file.to_str().unwrap();
        let cfg = resolve_train_config(&train_args(&["--config", f, "--epochs", "7"]), Some("3")).unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.seed, 9);
        let cfg = resolve_train_config(&train_args(&[]), Some("3")).unwrap();
        assert_eq!(cfg.seed, 3);
        assert!(resolve_train_config(&train_args(&[]), Some("x")).is_err());
    }

    #[test]
    fn res_blocks_follow_image_size_unless_set() {
        let cfg = resolve_train_config(&train_args(&["--image-size", "128"]), None).unwrap();
        assert_eq!(cfg.n_res_blocks, 6);
        let cfg = resolve_train_config(&train_args(&["--image-size", "128", "--res-blocks", "2"]), None).unwrap();
        assert_eq!(cfg.n_res_blocks, 2);
    }

    #[test]
    fn unknown_config_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.txt");
        std::fs::write(&file, "momentum = 0.5\n").unwrap();
        let err = resolve_train_config(&train_args(&["--config", file.to_str().unwrap()]), None).unwrap_err();
        assert_eq!(err.kind(), "config");
    }

    #[test]
    fn missing_data_dir_names_the_path() {
        let cli = parse(&["train", "--data", "/nonexistent/thermal-data", "--out", "/tmp/x"]);
        let err = execute(&cli, &mut Vec::new()).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/thermal-data"), "{err}");
        let line = error_line(&err);
        assert!(line.starts_with("error kind=dataset message="), "{line}");
        assert!(!line.contains('\n'));
    }

    #[test]
    fn bad_flags_exit_with_usage_status() {
        assert_eq!(run(["thermalcycle", "train", "--epochs", "many"]), 2);
        assert_eq!(run(["thermalcycle", "frobnicate"]), 2);
    }
}
