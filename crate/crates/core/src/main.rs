use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};

use camcomp::calibrate::fit_color_matrix;
use camcomp::composite::{composite_object, RenderedObject};
use camcomp::evalkit::{direction_reports, feature_swap, reports_csv, reports_table};
use camcomp::formats::{self, BitDepth};
use camcomp::histnet::NetworkWeights;
use camcomp::pipesim::{generate_dataset, sample_pipelines, synthetic_scene, PipelineRanges};
use camcomp::trainer::{train_with, TrainConfig, METRICS_HEADER};
use camcomp::{Error, Execution, Result};

#[derive(Parser)]
#[command(name = "camcomp", version, about = "RAW/JPEG color translation and object compositing")]
struct Cli {
    /// Run on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    Raw2jpeg,
    Jpeg2raw,
    Cycle,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a 3x4 color matrix to calibration patches.
    Calibrate {
        /// Patch table: raw R G B then reference R G B per line.
        #[arg(long)]
        patches: PathBuf,
        /// Black level as R,G,B.
        #[arg(long, value_parser = parse_triple, default_value = "0,0,0")]
        black: [f64; 3],
        #[arg(long)]
        out: PathBuf,
    },
    /// Render canonical images through simulated camera pipelines.
    Simulate {
        /// Directory of 16-bit canonical PNG images.
        #[arg(long)]
        raw_dir: PathBuf,
        #[arg(long)]
        pipelines: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic canonical scenes as 16-bit PNGs.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 80)]
        width: usize,
        #[arg(long, default_value_t = 80)]
        height: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train both translators on a simulated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// TOML file with training config fields; omitted fields keep defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Metrics log; defaults to the weights path with `.metrics.csv`.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Translate one image.
    Translate {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        direction: Direction,
        /// Photo supplying the shared feature for raw2jpeg, or `self`.
        #[arg(long)]
        condition: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Insert a rendered object into a photo.
    Composite {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        photo: PathBuf,
        /// Object colors in the canonical space (16-bit PNG).
        #[arg(long)]
        object: PathBuf,
        /// Grayscale mask; 255 is full coverage.
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write raw_pred.png, blended_raw.png and jpeg_pred.png here.
        #[arg(long)]
        dump_intermediates: Option<PathBuf>,
    },
    /// Evaluate all three directions on a dataset.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Exchange the shared features of two photos.
    Swap {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn parse_triple(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected three comma-separated numbers, got {s:?}"))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn usage_error(subcommand: &str, message: &str) -> Error {
    let mut cmd = Cli::command();
    let usage = cmd.find_subcommand_mut(subcommand).map(|c| c.render_usage().to_string()).unwrap_or_default();
    Error::Config(format!("{message}\n\n{usage}"))
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::default() };
    match cli.command {
        Command::Calibrate { patches, black, out } => {
            let set = formats::read_patches(&patches, black)?;
            let fit = fit_color_matrix(&set)?;
            formats::write_text(&out, &formats::color_matrix_to_string(&fit, black))?;
            println!("fitted {} patches, RMS residual {:.6}", set.raw_colors.len(), fit.rms_residual);
        }
        Command::Simulate { raw_dir, pipelines, seed, out } => {
            let paths = formats::list_pngs(&raw_dir)?;
            if paths.is_empty() {
                return Err(Error::Contract(format!("no PNG images in {}", raw_dir.display())));
            }
            let images = paths.iter().map(|p| formats::read_image(p)).collect::<Result<Vec<_>>>()?;
            let ranges = PipelineRanges::default();
            let samples = generate_dataset(&images, pipelines, seed, &ranges, exec)?;
            formats::write_dataset(&out, &samples, &sample_pipelines(pipelines, seed, &ranges), seed)?;
            println!("wrote {} pairs to {}", samples.len(), out.display());
        }
        Command::Synth { count, width, height, seed, out } => {
            create_dir(&out)?;
            for i in 0..count {
                let img = synthetic_scene(width, height, seed.wrapping_add(i as u64));
                formats::write_image(&out.join(formats::raw_file_name(i)), &img, BitDepth::Sixteen)?;
            }
        }
        Command::Train { data, config, out, metrics } => {
            let config = match config {
                Some(path) => TrainConfig::from_toml(&formats::read_text(&path)?)?,
                None => TrainConfig::default(),
            };
            let samples = formats::read_dataset(&data)?;
            let metrics = metrics.unwrap_or_else(|| out.with_extension("metrics.csv"));
            formats::write_text(&metrics, &format!("{METRICS_HEADER}\n"))?;
            let mut log = OpenOptions::new().append(true).open(&metrics).map_err(|e| Error::Io { path: metrics.clone(), source: e })?;
            let outcome = train_with(&samples, &config, exec, |row| {
                println!("{row}");
                writeln!(log, "{row}").map_err(|e| Error::Io { path: metrics.clone(), source: e })
            })?;
            formats::save_weights(&out, &outcome.weights)?;
            println!("best validation at step {}; weights written to {}", outcome.best_step, out.display());
        }
        Command::Translate { weights, input, direction, condition, out } => {
            let w = formats::load_weights(&weights, None)?;
            let img = formats::read_image(&input)?;
            let (result, depth) = match direction {
                Direction::Jpeg2raw => (w.jpeg_to_raw(&img)?.0, BitDepth::Sixteen),
                Direction::Cycle => (w.cycle(&img)?, BitDepth::Eight),
                Direction::Raw2jpeg => {
                    let shared = match (w.arch.use_sharing, condition.as_deref()) {
                        (false, _) => None,
                        (true, None) => {
                            return Err(usage_error("translate", "raw2jpeg needs --condition IMG or --condition self"))
                        }
                        (true, Some("self")) => w.shared_feature(&img)?,
                        (true, Some(path)) => w.shared_feature(&formats::read_image(Path::new(path))?)?,
                    };
                    (w.raw_to_jpeg(&img, shared.as_ref())?, BitDepth::Eight)
                }
            };
            formats::write_image(&out, &result, depth)?;
        }
        Command::Composite { weights, photo, object, mask, out, dump_intermediates } => {
            let w = formats::load_weights(&weights, None)?;
            let photo = formats::read_image(&photo)?;
            let object = RenderedObject::new(formats::read_image(&object)?, formats::read_mask(&mask)?)?;
            let r = composite_object(&photo, &object, &w)?;
            formats::write_image(&out, &r.final_image, BitDepth::Eight)?;
            if let Some(dir) = dump_intermediates {
                create_dir(&dir)?;
                formats::write_image(&dir.join("raw_pred.png"), &r.raw_pred, BitDepth::Sixteen)?;
                formats::write_image(&dir.join("blended_raw.png"), &r.blended_raw, BitDepth::Sixteen)?;
                formats::write_image(&dir.join("jpeg_pred.png"), &r.jpeg_pred, BitDepth::Eight)?;
            }
        }
        Command::Eval { weights, data, report } => {
            let w = formats::load_weights(&weights, None)?;
            let samples = formats::read_dataset(&data)?;
            let reports = direction_reports(&w, &samples, true, exec)?;
            formats::write_text(&report, &reports_csv(&reports))?;
            print!("{}", reports_table(&reports));
        }
        Command::Swap { weights, a, b, out_dir } => {
            let w: NetworkWeights = formats::load_weights(&weights, None)?;
            let (a, b) = (formats::read_image(&a)?, formats::read_image(&b)?);
            let (a_swapped, b_swapped) = feature_swap(&a, &b, &w)?;
            create_dir(&out_dir)?;
            formats::write_image(&out_dir.join("a_swapped.png"), &a_swapped, BitDepth::Eight)?;
            formats::write_image(&out_dir.join("b_swapped.png"), &b_swapped, BitDepth::Eight)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
