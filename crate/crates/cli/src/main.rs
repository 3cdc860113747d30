use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use heightbins::metrics::EvalReport;
use heightbins::pipeline::ablate::{self, Grid};
use heightbins::pipeline::{self, gradcheck, Dataset, RunConfig};
use heightbins::synth::{self, RasterKind, RasterPatch, Split, SynthSpec};
use heightbins::{Error, Result};

/// Adaptive-bin height estimation: synthetic data, training, evaluation.
#[derive(Parser)]
#[command(name = "heightbins", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus and its manifest.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
    },
    /// Train with early stopping; checkpoints go to the config's output_dir.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on one split of the config's manifest.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Also write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Predict a height raster from an image raster.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pixel `ROW,COL` whose bin probabilities are dumped.
        #[arg(long, value_parser = parse_pixel)]
        pixel: Option<(usize, usize)>,
        /// Destination of the bin-probability dump (stdout when omitted).
        #[arg(long, requires = "pixel")]
        probs: Option<PathBuf>,
    },
    /// Finite-difference check of every primitive and the full loss.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train and evaluate every setting of an ablation grid.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: String,
        /// Also write the rows as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_pixel(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(',')
        .ok_or_else(|| format!("expected ROW,COL, got `{s}`"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| format!("`{v}` is not a pixel index"))
    };
    Ok((parse(r)?, parse(c)?))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HEIGHTBINS_LOG", "error"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            emit_error("usage", 2, first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            emit_error(e.code(), code, &e.to_string());
            ExitCode::from(code as u8)
        }
    }
}

/// One JSON object on one line of stderr.
fn emit_error(code: &str, exit: i32, message: &str) {
    let line = serde_json::json!({ "error": code, "exit_code": exit, "message": message });
    eprintln!("{line}");
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth { spec, out, count } => cmd_synth(&spec, &out, count),
        Cmd::Train { config } => cmd_train(&config),
        Cmd::Eval {
            config,
            checkpoint,
            split,
            report,
        } => cmd_eval(&config, &checkpoint, &split, report.as_deref()),
        Cmd::Infer {
            checkpoint,
            input,
            out,
            pixel,
            probs,
        } => cmd_infer(&checkpoint, &input, &out, pixel, probs.as_deref()),
        Cmd::Gradcheck { config } => cmd_gradcheck(config.as_deref()),
        Cmd::Ablate { config, grid, out } => cmd_ablate(&config, &grid, out.as_deref()),
    }
}

fn cmd_synth(spec_path: &Path, out: &Path, count: usize) -> Result<()> {
    let text = std::fs::read_to_string(spec_path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", spec_path.display())))?;
    let spec: SynthSpec = serde_json::from_str(&text)
        .map_err(|e| Error::config(format!("{}: {e}", spec_path.display())))?;
    let manifest = synth::write_corpus(&spec, out, count)?;
    println!(
        "wrote {} patches and {}",
        manifest.entries.len(),
        out.join("manifest.json").display()
    );
    Ok(())
}

fn cmd_train(config: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    if cfg.output_dir.is_none() {
        return Err(Error::config("output_dir is required for train"));
    }
    let data = Dataset::load(cfg.manifest_path()?)?;
    let mut print = |r: &pipeline::EpochRecord| println!("{}", r.to_line());
    let outcome = pipeline::train(&cfg, &data, Some(&mut print))?;
    let dir = cfg.output_dir.as_ref().expect("checked above");
    println!(
        "stop={} epochs={} steps={} best_val_rmse={} checkpoint={}",
        serde_json::to_value(outcome.stop).expect("serializes").as_str().unwrap_or("?"),
        outcome.epochs.len(),
        outcome.step_losses.len(),
        outcome
            .best_val_rmse
            .map_or("undefined".to_string(), |v| format!("{v:.6}")),
        dir.join("best.ckpt").display()
    );
    Ok(())
}

fn print_report(report: &EvalReport, json_out: Option<&Path>) -> Result<()> {
    println!("{}", report.to_text());
    println!("{}", report.to_json());
    if let Some(p) = json_out {
        std::fs::write(p, report.to_json())?;
    }
    Ok(())
}

fn cmd_eval(config: &Path, checkpoint: &Path, split: &str, json_out: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let split: Split = split.parse()?;
    let data = Dataset::load(cfg.manifest_path()?)?;
    let (model, params, _) = pipeline::load_checkpoint(checkpoint)?;
    let samples = data.subset(split);
    if samples.is_empty() {
        return Err(Error::Data(format!("split {split:?} has no samples")));
    }
    if samples[0].size != model.image_size {
        return Err(Error::Data(format!(
            "patches are {}x{}, checkpoint expects {}x{}",
            samples[0].size, samples[0].size, model.image_size, model.image_size
        )));
    }
    let report = pipeline::evaluate(&model, &params, &samples, cfg.connectivity)?;
    print_report(&report, json_out)
}

fn cmd_infer(
    checkpoint: &Path,
    input: &Path,
    out: &Path,
    pixel: Option<(usize, usize)>,
    probs: Option<&Path>,
) -> Result<()> {
    let (model, params, _) = pipeline::load_checkpoint(checkpoint)?;
    let image = synth::read_raster(input)?;
    if image.kind != RasterKind::Image {
        return Err(Error::Data(format!("{} is not an image raster", input.display())));
    }
    let s = model.image_size;
    if image.width != s || image.height != s || image.channels != model.cfg.input_channels {
        return Err(Error::Data(format!(
            "image is {}x{}x{}, checkpoint expects {}x{s}x{s}",
            image.channels, image.width, image.height, model.cfg.input_channels
        )));
    }
    let pred = pipeline::predict(&model, &params, &image.to_f64())?;
    let values = pred.height.iter().map(|&v| v as f32).collect();
    let raster = RasterPatch::new(s, s, 1, image.gsd, RasterKind::Height, values)?;
    synth::write_raster(&raster, out)?;
    println!("wrote {}", out.display());

    if let Some((row, col)) = pixel {
        if row >= s || col >= s {
            return Err(Error::Data(format!("pixel ({row},{col}) outside {s}x{s} image")));
        }
        let (hr, hc) = (row / pred.factor, col / pred.factor);
        let head = &pred.head;
        let dump = serde_json::json!({
            "row": row,
            "col": col,
            "head_row": hr,
            "head_col": hc,
            "height": pred.height[row * s + col],
            "p_fg": pred.p_fg.as_ref().map(|p| p[row * s + col]),
            "edges": head.bins.edges,
            "centers": head.bins.centers,
            "probabilities": head.pixel_probabilities(hr, hc),
        });
        let text = serde_json::to_string_pretty(&dump)?;
        match probs {
            Some(p) => std::fs::write(p, text)?,
            None => println!("{text}"),
        }
    }
    Ok(())
}

fn cmd_gradcheck(config: Option<&Path>) -> Result<()> {
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let started = std::time::Instant::now();
    let report = gradcheck::run(&cfg.loss)?;
    for line in &report.lines {
        println!("{}", line.to_line());
    }
    let worst = report.worst().map_or(0.0, |l| l.max_rel_error);
    println!(
        "checks={} worst_rel_error={worst:.3e} tolerance={:.0e} seconds={:.2}",
        report.lines.len(),
        gradcheck::TOLERANCE,
        started.elapsed().as_secs_f64()
    );
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<String> = report
            .lines
            .iter()
            .filter(|l| !l.passed())
            .map(|l| format!("{}@seed{}", l.name, l.seed))
            .collect();
        Err(Error::Gradcheck(failed.join(",")))
    }
}

fn cmd_ablate(config: &Path, grid: &str, out: Option<&Path>) -> Result<()> {
    let grid: Grid = grid.parse()?;
    let cfg = RunConfig::load(config)?;
    let data = Dataset::load(cfg.manifest_path()?)?;
    let rows = ablate::run_grid(&cfg, grid, &data, |row| {
        log::info!("{}: {}", row.setting, row.report.to_text());
    })?;
    println!("{}", ablate::format_table(grid, &rows));
    if let Some(p) = out {
        std::fs::write(p, serde_json::to_string_pretty(&rows)?)?;
    }
    Ok(())
}
