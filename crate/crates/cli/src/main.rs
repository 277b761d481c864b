mod commands;
mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kapao::io::Config;

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "kapao", version, about = "Keypoint and pose object grids: encode, decode, fuse, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Hyperparameter sources shared by every subcommand. Precedence is flag,
/// then `--set`, then `--config`, then the built-in defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Flat `key = value` hyperparameter file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set tau_fd=40`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    tau_cp: Option<f64>,
    #[arg(long, global = true)]
    tau_ck: Option<f64>,
    #[arg(long, global = true)]
    tau_bp: Option<f64>,
    #[arg(long, global = true)]
    tau_bk: Option<f64>,
    #[arg(long, global = true)]
    tau_fd: Option<f64>,
    #[arg(long, global = true)]
    tau_fc: Option<f64>,
    /// Keypoint-object box size, px.
    #[arg(long = "b-s", global = true)]
    b_s: Option<f64>,
    #[arg(long, global = true)]
    height: Option<u32>,
    #[arg(long, global = true)]
    width: Option<u32>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<Config, CliError> {
        let mut c = Config::default();
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::validation("config", format!("--set expects KEY=VALUE, got '{kv}'")))?;
            c.apply(k.trim(), v.trim())?;
        }
        let flags = [
            ("tau_cp", self.tau_cp),
            ("tau_ck", self.tau_ck),
            ("tau_bp", self.tau_bp),
            ("tau_bk", self.tau_bk),
            ("tau_fd", self.tau_fd),
            ("tau_fc", self.tau_fc),
            ("b_s", self.b_s),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                c.apply(k, &v.to_string())?;
            }
        }
        if let Some(h) = self.height {
            c.height = h;
        }
        if let Some(w) = self.width {
            c.width = w;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// Exact inverse encoding of the annotations.
    None,
    /// Coarse pose-object keypoints, precise keypoint objects.
    Asymmetric,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate seeded synthetic scenes (annotation JSON), optionally with grid files.
    Synth {
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        min_persons: usize,
        #[arg(long, default_value_t = 10)]
        max_persons: usize,
        #[arg(long)]
        min_scale: Option<f64>,
        #[arg(long)]
        max_scale: Option<f64>,
        #[arg(long, default_value_t = 0.1)]
        occlusion: f64,
        /// Annotation JSON output (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write one simulated-network grid file per scene here.
        #[arg(long)]
        grids_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = NoiseKind::None)]
        noise: NoiseKind,
        #[arg(long, default_value_t = 8.0)]
        pose_sigma: f64,
        #[arg(long, default_value_t = 1.0)]
        local_sigma: f64,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Encode one image's annotations into a grid file.
    Encode {
        #[arg(long)]
        annotations: PathBuf,
        /// Image to encode; required when the file holds several images.
        #[arg(long)]
        image_id: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Write training targets and the loss mask instead of inverse-encoded logits.
        #[arg(long)]
        targets: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Decode a grid file into thresholded detections (JSON).
    Decode {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run decode, NMS and fusion on a grid file; writes result JSON.
    Fuse {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value_t = 0)]
        image_id: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the per-stage timing record here.
        #[arg(long)]
        timing: Option<PathBuf>,
        /// Overlap measure used by NMS.
        #[arg(long, value_enum, default_value_t = OverlapArg::Ciou)]
        overlap: OverlapArg,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate results against annotations (AP/AR summary JSON, optional PR CSV).
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        /// Detections kept per image; 0 keeps all.
        #[arg(long, default_value_t = 20)]
        max_dets: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Per-stage latency percentiles over grid files or directories of them.
    Bench {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Timed runs per file; the per-file median is used.
        #[arg(long, default_value_t = 3)]
        repeat: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Re-encode scenes across keypoint box sizes and report representability.
    SweepBs {
        /// Annotation JSON; seeded synthetic scenes are used when absent.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        scenes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverlapArg {
    Ciou,
    Iou,
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Synth {
            count,
            seed,
            min_persons,
            max_persons,
            min_scale,
            max_scale,
            occlusion,
            out,
            grids_dir,
            noise,
            pose_sigma,
            local_sigma,
            cfg,
        } => commands::synth(
            &cfg.resolve()?,
            &commands::SynthArgs {
                count,
                seed,
                min_persons,
                max_persons,
                min_scale,
                max_scale,
                occlusion,
                out,
                grids_dir,
                noise,
                pose_sigma,
                local_sigma,
            },
        ),
        Command::Encode {
            annotations,
            image_id,
            out,
            targets,
            cfg,
        } => commands::encode(&cfg.resolve()?, &annotations, image_id, &out, targets),
        Command::Decode { grid, out, cfg } => commands::decode(&cfg.resolve()?, &grid, out.as_deref()),
        Command::Fuse {
            grid,
            image_id,
            out,
            timing,
            overlap,
            cfg,
        } => commands::fuse(&cfg.resolve()?, &grid, image_id, out.as_deref(), timing.as_deref(), overlap),
        Command::Eval {
            results,
            annotations,
            max_dets,
            csv,
            out,
            cfg,
        } => commands::eval(&cfg.resolve()?, &results, &annotations, max_dets, csv.as_deref(), out.as_deref()),
        Command::Bench { inputs, repeat, out, cfg } => commands::bench(&cfg.resolve()?, &inputs, repeat, out.as_deref()),
        Command::SweepBs {
            annotations,
            scenes,
            seed,
            out,
            cfg,
        } => commands::sweep_bs(&cfg.resolve()?, annotations.as_deref(), scenes, seed, out.as_deref()),
    }
}

fn run<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{e}");
            let msg = e.kind().as_str().unwrap_or("invalid arguments");
            eprintln!("{}", serde_json::json!({ "error": { "kind": "usage", "code": "usage", "message": msg } }));
            return 1;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

fn main() {
    std::process::exit(run(std::env::args_os()));
}
