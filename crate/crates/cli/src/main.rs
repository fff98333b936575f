use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dde_core::eval::{confusion_with_ignore, metrics, pr_curve, select_threshold, Objective, PrCurve};
use dde_core::pipeline::{config_base, resolve, run_pipeline, ConfigFile, RunLedger, Stage, ThresholdSetting};
use dde_core::predictor::ThresholdFile;
use dde_core::raster::{read_raster, SceneRaster};
use dde_core::synth::{generate, SynthSpec};
use dde_core::{Error, Result};

/// Marine debris density maps from multi-date scene stacks.
#[derive(Parser)]
#[command(name = "dde", version)]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the scene manifest (queries and downloads for catalog sources).
    Acquire(RunArgs),
    /// Run through probability prediction.
    Predict(RunArgs),
    /// Run through masking and the MDM raster.
    Mdm(RunArgs),
    /// Run through hexagonal binning.
    Hexbin(RunArgs),
    /// Run through the SVG map.
    Render(RunArgs),
    /// Run the full pipeline.
    Run(RunArgs),
    /// Segmentation metrics and threshold selection.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Write a synthetic scene set and a ready-to-run config.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Preset name (`opt`, `hp`) or a value in (0, 1).
    #[arg(long)]
    threshold: Option<String>,
    #[arg(long)]
    hex_width_m: Option<f64>,
    #[arg(long)]
    trim: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    land_polygons: Option<PathBuf>,
    #[arg(long)]
    min_obs: Option<u32>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Confusion-matrix metrics of a class raster against a reference raster.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Class labels; defaults to every value present in either raster.
        #[arg(long, value_delimiter = ',')]
        labels: Vec<i64>,
        /// Reference label to leave out of the counts.
        #[arg(long)]
        ignore: Option<i64>,
        /// Label reported as the debris class in the table.
        #[arg(long, default_value_t = 1)]
        debris_label: i64,
        /// Write the metrics as JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Precision-recall curve of probability rasters and the `{opt, hp}` thresholds.
    Thresholds {
        /// Probability rasters, paired in order with `--reference`.
        #[arg(long, num_args = 1.., required = true)]
        probs: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        reference: Vec<PathBuf>,
        /// Reference label counted as positive.
        #[arg(long, default_value_t = 1)]
        positive: i64,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0.95)]
        min_precision: f64,
        /// Thresholds JSON output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Curve CSV output.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long, default_value_t = 5)]
    dates: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 1000.0)]
    hex_width_m: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Acquire(a) => run(a, Stage::Acquire),
        Command::Predict(a) => run(a, Stage::Predict),
        Command::Mdm(a) => run(a, Stage::Mdm),
        Command::Hexbin(a) => run(a, Stage::Hexbin),
        Command::Render(a) | Command::Run(a) => run(a, Stage::Render),
        Command::Eval(e) => eval(e),
        Command::Synth(s) => synth(s),
    }
}

fn run(args: RunArgs, until: Stage) -> Result<()> {
    let mut file = ConfigFile::read(&args.config)?;
    if let Some(t) = args.threshold {
        file.threshold = match t.parse::<f64>() {
            Ok(v) => ThresholdSetting::Value(v),
            Err(_) => ThresholdSetting::Preset(t),
        };
    }
    if let Some(w) = args.hex_width_m {
        file.hexbin.width_m = w;
    }
    if let Some(t) = args.trim {
        file.hexbin.trim = t;
    }
    if let Some(k) = args.top_k {
        file.hexbin.top_k = k;
    }
    if let Some(p) = args.land_polygons {
        // Relative to the working directory, unlike paths inside the config.
        file.masks.land_polygons = Some(std::path::absolute(&p).map_err(|e| Error::Argument(e.to_string()))?);
    }
    if let Some(n) = args.min_obs {
        file.min_obs = n;
    }
    if args.workers.is_some() {
        file.workers = args.workers;
    }
    let cfg = resolve(file, config_base(&args.config))?;
    let result = run_pipeline(&cfg, Some(until));
    let ledger_path = cfg.run_dir().join(dde_core::pipeline::LEDGER_FILE);
    if let Ok(ledger) = RunLedger::load(&ledger_path) {
        print_ledger(&ledger);
    }
    result?;
    println!("run directory: {}", cfg.run_dir().display());
    Ok(())
}

fn print_ledger(ledger: &RunLedger) {
    println!("run {} (config {})", ledger.run_id, &ledger.config_hash[..12]);
    for s in &ledger.stages {
        let status = serde_json::to_value(s.status).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        println!("  {:<8} {:<9} {:>8.3}s", s.name, status, s.wall_time_s);
    }
}

/// Integer class plane of a single-band raster; nodata becomes `None`.
fn class_plane(scene: &SceneRaster, path: &Path) -> Result<Vec<Option<i64>>> {
    let band = scene
        .bands
        .first()
        .ok_or(Error::EmptyRaster)?;
    band.data
        .iter()
        .map(|&v| {
            if scene.is_nodata(v) || v.is_nan() {
                Ok(None)
            } else if v.fract() == 0.0 {
                Ok(Some(v as i64))
            } else {
                Err(Error::Format(format!("{}: non-integer class value {v}", path.display())))
            }
        })
        .collect()
}

fn read_pair(a: &Path, b: &Path) -> Result<(SceneRaster, SceneRaster)> {
    let (ra, rb) = (read_raster(a)?, read_raster(b)?);
    if ra.grid.shape() != rb.grid.shape() {
        return Err(Error::Alignment(format!(
            "{} is {:?} but {} is {:?}",
            a.display(),
            ra.grid.shape(),
            b.display(),
            rb.grid.shape()
        )));
    }
    Ok((ra, rb))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn eval(command: EvalCommand) -> Result<()> {
    match command {
        EvalCommand::Metrics {
            pred,
            reference,
            labels,
            ignore,
            debris_label,
            json,
        } => {
            let (p, r) = read_pair(&pred, &reference)?;
            let (p, r) = (class_plane(&p, &pred)?, class_plane(&r, &reference)?);
            // Pixels with nodata on either side are left out.
            let (p, r): (Vec<i64>, Vec<i64>) = p
                .into_iter()
                .zip(r)
                .filter_map(|(a, b)| Some((a?, b?)))
                .unzip();
            let labels = if labels.is_empty() {
                let mut all: Vec<i64> = p.iter().chain(&r).copied().filter(|l| Some(*l) != ignore).collect();
                all.sort_unstable();
                all.dedup();
                all
            } else {
                labels
            };
            let m = metrics(&confusion_with_ignore(&p, &r, &labels, ignore)?)?;
            print!("{}", m.to_table(debris_label));
            if let Some(path) = json {
                write_text(&path, &serde_json::to_string_pretty(&m).expect("metrics serialise"))?;
            }
            Ok(())
        }
        EvalCommand::Thresholds {
            probs,
            reference,
            positive,
            steps,
            min_precision,
            out,
            curve,
        } => {
            if probs.len() != reference.len() {
                return Err(Error::Argument(format!(
                    "{} probability rasters but {} reference rasters",
                    probs.len(),
                    reference.len()
                )));
            }
            let mut scores = Vec::new();
            let mut truth = Vec::new();
            for (pp, rp) in probs.iter().zip(&reference) {
                let (p, r) = read_pair(pp, rp)?;
                let band = p.bands.first().ok_or(Error::EmptyRaster)?;
                for (&v, lab) in band.data.iter().zip(class_plane(&r, rp)?) {
                    if let (false, Some(l)) = (p.is_nodata(v) || v.is_nan(), lab) {
                        scores.push(v);
                        truth.push(l == positive);
                    }
                }
            }
            let c = pr_curve(&scores, &truth, steps)?;
            let opt = select_threshold(&c, Objective::MaxF1)?;
            let hp = select_threshold(&c, Objective::MinPrecision(min_precision))?;
            let file = ThresholdFile {
                opt: opt.value,
                hp: hp.value,
            };
            let text = serde_json::to_string_pretty(&file).expect("thresholds serialise");
            println!("{text}");
            if let Some(path) = out {
                write_text(&path, &text)?;
            }
            if let Some(path) = curve {
                write_text(&path, &curve_csv(&c))?;
            }
            Ok(())
        }
    }
}

fn curve_csv(c: &PrCurve) -> String {
    let mut s = String::from("threshold,precision,recall,f1\n");
    for p in &c.points {
        s.push_str(&format!("{},{},{},{}\n", p.threshold, p.precision, p.recall, p.f1));
    }
    s
}

fn synth(args: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        size: args.size,
        dates: args.dates,
        seed: args.seed,
        hex_width_m: args.hex_width_m,
        ..SynthSpec::default()
    };
    let scene = generate(&args.out, &spec)?;
    println!("{}", scene.config_path.display());
    Ok(())
}
