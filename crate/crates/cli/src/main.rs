use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rfe_core::baseline::{coverage, fuse, reproject};
use rfe_core::checkpoint::Checkpoint;
use rfe_core::dataset::Dataset;
use rfe_core::geometry::camera_path;
use rfe_core::metrics::MetricReport;
use rfe_core::oracle::{arc_cameras, OracleScene};
use rfe_core::raster::DepthMap;
use rfe_core::render::{render_view, RenderConfig};
use rfe_core::segment::{segment_view, ResidualMode};
use rfe_core::train::{train, LogRecord, Preset, TrainConfig};
use rfe_core::{Error, Result};

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

/// Depth-supervised dynamic radiance fields from multi-view RGB-D frames.
#[derive(Parser, Debug)]
#[command(name = "rfe", version)]
struct Cli {
    /// Worker threads (falls back to RFE_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the synthetic oracle scene into a dataset directory.
    GenScene {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        cams: usize,
        /// Comma-separated time values.
        #[arg(long, default_value = "-2,-1,0,1,2", allow_hyphen_values = true)]
        t_values: String,
        /// Fraction of depth pixels zeroed at random.
        #[arg(long, default_value_t = 0.0)]
        dropout: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        width: u32,
        #[arg(long, default_value_t = 48)]
        height: u32,
    },
    /// Train a coarse/fine model pair and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = PresetArg::Desk)]
        preset: PresetArg,
        #[arg(long)]
        no_depth_loss: bool,
        #[arg(long)]
        no_time: bool,
        /// Camera whose frames are excluded from training.
        #[arg(long)]
        holdout: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the preset's iteration count.
        #[arg(long)]
        iterations: Option<usize>,
        /// Training log (NDJSON); defaults to `<out>.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Render frames along the path from -> via -> to.
    RenderPath {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        from: String,
        #[arg(long)]
        via: String,
        #[arg(long)]
        to: String,
        #[arg(long)]
        steps: usize,
        #[arg(long, allow_hyphen_values = true)]
        t: f64,
        #[arg(long)]
        out: PathBuf,
        /// Replace each blended rotation by its nearest rotation.
        #[arg(long)]
        orthonormalize: bool,
    },
    /// Score a rendered view against a dataset frame.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        camera: String,
        #[arg(long, allow_hyphen_values = true)]
        t: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse the other cameras' frames into a point cloud and reproject it.
    Baseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        holdout: String,
        #[arg(long, allow_hyphen_values = true)]
        t: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the fused cloud as ASCII PLY.
        #[arg(long)]
        ply: bool,
    },
    /// Render the density added between two time values.
    Segment {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        camera: String,
        #[arg(long, allow_hyphen_values = true)]
        t_base: f64,
        #[arg(long, allow_hyphen_values = true)]
        t_phase: f64,
        #[arg(long)]
        out: PathBuf,
        /// Render removed matter instead of added matter.
        #[arg(long)]
        removed: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            report("usage", first.trim_start_matches("error: "));
            return ExitCode::from(EXIT_VALIDATION);
        }
    };
    if let Err(e) = configure_threads(cli.threads) {
        report(e.kind(), &e.to_string());
        return ExitCode::from(EXIT_VALIDATION);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(e.kind(), &e.to_string());
            ExitCode::from(if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_NUMERIC
            })
        }
    }
}

fn report(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{line}");
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("RFE_THREADS") {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                Error::Validation(format!("RFE_THREADS must be a positive integer, got '{v}'"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::Validation("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Validation(format!("cannot configure threads: {e}")))?;
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenScene {
            out,
            cams,
            t_values,
            dropout,
            seed,
            width,
            height,
        } => {
            if cams == 0 {
                return Err(Error::Validation("--cams must be at least 1".into()));
            }
            if width == 0 || height == 0 {
                return Err(Error::Validation("image size must be positive".into()));
            }
            let ts = parse_list(&t_values)?;
            let cameras = arc_cameras(cams, width, height);
            let ds = OracleScene::desk().write_dataset(&cameras, &ts, dropout, seed, &out)?;
            println!("wrote {} frames to {}", ds.frames.len(), out.display());
            Ok(())
        }
        Command::Train {
            data,
            out,
            preset,
            no_depth_loss,
            no_time,
            holdout,
            seed,
            iterations,
            log,
        } => {
            let mut ds = Dataset::load(&data)?;
            if let Some(id) = &holdout {
                ds = ds.split_holdout(id)?.0;
            }
            let mut config = TrainConfig::preset(match preset {
                PresetArg::Desk => Preset::Desk,
                PresetArg::Paper => Preset::Paper,
            });
            config.seed = seed;
            config.use_depth_loss = !no_depth_loss;
            config.use_time = !no_time;
            if let Some(n) = iterations {
                config.iterations = n;
            }
            let log_path = log.unwrap_or_else(|| suffixed(&out, ".log.jsonl"));
            let file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
            let mut writer = BufWriter::new(file);
            let start = std::time::Instant::now();
            let mut write_err = None;
            let outcome = train(&ds, &config, |r| {
                let rec = LogRecord::new(r, start.elapsed().as_millis() as u64);
                let line = serde_json::to_string(&rec).expect("log record serializes");
                if let Err(e) = writeln!(writer, "{line}") {
                    write_err.get_or_insert(e);
                }
            })?;
            writer.flush().map_err(|e| Error::io(&log_path, e))?;
            if let Some(e) = write_err {
                return Err(Error::io(&log_path, e));
            }
            let ckpt = Checkpoint {
                models: outcome.models,
                depth_supervised: config.use_depth_loss,
                n_coarse: config.n_coarse,
                n_fine: config.n_fine,
                cameras: ds.cameras.clone(),
            };
            ckpt.save(&out)?;
            if let Some(last) = outcome.log.last() {
                println!("iterations {} final loss {:.6}", config.iterations, last.total);
            }
            Ok(())
        }
        Command::RenderPath {
            ckpt,
            from,
            via,
            to,
            steps,
            t,
            out,
            orthonormalize,
        } => {
            let ck = Checkpoint::load(&ckpt)?;
            let path = camera_path(
                ck.camera(&from)?,
                ck.camera(&via)?,
                ck.camera(&to)?,
                steps,
                orthonormalize,
            )?;
            create_dir(&out)?;
            let config = render_config(&ck);
            for (k, cam) in path.iter().enumerate() {
                let view = render_view(&ck.models, cam, t, &config)?;
                view.rgb.save_png(&out.join(format!("frame_{k:04}.png")))?;
                view.depth.save_png16(&out.join(format!("depth_{k:04}.png")))?;
            }
            println!("wrote {} frames to {}", path.len(), out.display());
            Ok(())
        }
        Command::Eval {
            ckpt,
            data,
            camera,
            t,
            out,
        } => {
            let ck = Checkpoint::load(&ckpt)?;
            let ds = Dataset::load(&data)?;
            let cam = ds.camera(&camera)?;
            let frame = ds.frame(&camera, t)?;
            let view = render_view(&ck.models, cam, t, &render_config(&ck))?;
            let report =
                MetricReport::compute(&camera, t, &view.rgb, &frame.color, &view.depth, &frame.depth)?;
            write_text(&out, &report.to_json())?;
            println!("{}", serde_json::to_string(&report).expect("report serializes"));
            Ok(())
        }
        Command::Baseline {
            data,
            holdout,
            t,
            out,
            ply,
        } => {
            let ds = Dataset::load(&data)?;
            let target = ds.camera(&holdout)?;
            let gt = ds.frame(&holdout, t)?;
            let frames: Vec<_> = ds
                .frames
                .iter()
                .filter(|f| f.camera_id != holdout && f.t == t)
                .collect();
            if frames.is_empty() {
                return Err(Error::Validation(format!("no other camera has a frame at t = {t}")));
            }
            let cams = frames
                .iter()
                .map(|f| ds.camera(&f.camera_id))
                .collect::<Result<Vec<_>>>()?;
            let cloud = fuse(&frames, &cams)?;
            let (rgb, depth) = reproject(&cloud, target);
            create_dir(&out)?;
            rgb.save_png(&out.join("baseline_rgb.png"))?;
            depth.save_png16(&out.join("baseline_depth.png"))?;
            if ply {
                cloud.write_ply(&out.join("cloud.ply"))?;
            }
            let report = MetricReport::compute(&holdout, t, &rgb, &gt.color, &depth, &gt.depth)?;
            write_text(&out.join("metrics.json"), &report.to_json())?;
            println!(
                "{} points, coverage {:.3}, {}",
                cloud.len(),
                coverage(&depth),
                serde_json::to_string(&report).expect("report serializes")
            );
            Ok(())
        }
        Command::Segment {
            ckpt,
            camera,
            t_base,
            t_phase,
            out,
            removed,
        } => {
            let ck = Checkpoint::load(&ckpt)?;
            let cam = ck.camera(&camera)?;
            let mode = if removed {
                ResidualMode::Removed
            } else {
                ResidualMode::Added
            };
            let view = segment_view(&ck.models, cam, t_base, t_phase, &render_config(&ck), mode)?;
            create_dir(&out)?;
            view.segmented.rgb.save_png(&out.join("segmented.png"))?;
            view.phase.rgb.save_png(&out.join("phase.png"))?;
            view.base.rgb.save_png(&out.join("base.png"))?;
            let alpha = DepthMap {
                width: cam.width,
                height: cam.height,
                data: view.segmented.opacity.clone(),
            };
            alpha.to_preview(1.0).save_png(&out.join("segmented_opacity.png"))?;
            let mean = view.segmented.opacity.iter().sum::<f64>() / view.segmented.opacity.len() as f64;
            println!("mean segmented opacity {mean:.4}");
            Ok(())
        }
    }
}

fn render_config(ck: &Checkpoint) -> RenderConfig {
    RenderConfig {
        n_coarse: ck.n_coarse,
        n_fine: ck.n_fine,
        ..RenderConfig::default()
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    let values = s
        .split(',')
        .map(|p| {
            let p = p.trim();
            p.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Validation(format!("'{p}' is not a finite number")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(Error::Validation("at least one time value is required".into()));
    }
    Ok(values)
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
