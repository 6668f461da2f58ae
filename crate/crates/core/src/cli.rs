//! Command-line front end. Every subcommand reads files and writes either a
//! file (`--out`) or standard output.
//!
//! Exit codes: 0 success, 1 domain error (constraint violations, too little
//! depth data, oracle size limit), 2 usage or input-format error. Errors
//! print one line starting with `percept-place: error[<kind>]:`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::balance_sim::{run_sim, SimConfig};
use crate::depth::{estimate_depth, load_depth_image, DepthError};
use crate::eval_metrics::{read_detections, read_ground_truth, threshold_sweep_parallel, BBox};
use crate::oracle::{best_assignment, OracleReport};
use crate::selection::select;
use crate::stats::{confidence_interval, read_samples, ConfidenceLevel};
use crate::topology::{parse_topology, validate, Topology};

pub const PROGRAM: &str = "percept-place";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    DomainError = 1,
    UsageError = 2,
}

impl ExitStatus {
    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Parser)]
#[command(name = PROGRAM, version, about = "Sensor placement, load-balance simulation and perception evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Assign sensors to devices with the best-fit selection algorithm.
    Select {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report placement-constraint violations of a topology.
    Validate {
        #[arg(long)]
        topology: PathBuf,
    },
    /// Exhaustively search the best assignment (at most 6 sensors and 6 devices).
    Oracle {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the load-balancing simulation and write per-node metrics as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// AP/mAP over IoU thresholds 0.01..=1.00.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long = "ground-truth")]
        ground_truth: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for the threshold sweep.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
        jobs: u16,
    },
    /// Estimate object depth (meters) from the centre window of a box.
    Depth {
        #[arg(long)]
        image: PathBuf,
        /// x,y,w,h in pixels.
        #[arg(long = "box", value_parser = parse_box)]
        bbox: BBox,
        /// Averaging window as WxH.
        #[arg(long, value_parser = parse_region, default_value = "20x20")]
        region: (u32, u32),
    },
    /// Confidence interval of frame-rate samples.
    Stats {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
    },
}

fn parse_box(s: &str) -> Result<BBox, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("expected x,y,w,h numbers, got {s:?}"))?;
    match parts[..] {
        [x, y, w, h] if parts.iter().all(|v| v.is_finite()) && w >= 0.0 && h >= 0.0 => {
            Ok(BBox::new(x, y, w, h))
        }
        _ => Err(format!("expected x,y,w,h with w, h >= 0, got {s:?}")),
    }
}

fn parse_region(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w: u32 = w
        .trim()
        .parse()
        .map_err(|_| format!("bad width in {s:?}"))?;
    let h: u32 = h
        .trim()
        .parse()
        .map_err(|_| format!("bad height in {s:?}"))?;
    if w == 0 || h == 0 {
        return Err("region must be at least 1x1".into());
    }
    Ok((w, h))
}

#[derive(Debug)]
struct Failure {
    status: ExitStatus,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn usage(kind: &'static str, message: impl ToString) -> Self {
        Self {
            status: ExitStatus::UsageError,
            kind,
            message: message.to_string(),
        }
    }

    fn domain(kind: &'static str, message: impl ToString) -> Self {
        Self {
            status: ExitStatus::DomainError,
            kind,
            message: message.to_string(),
        }
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::usage("io", format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<fs::File, Failure> {
    fs::File::open(path).map_err(|e| Failure::usage("io", format!("{}: {e}", path.display())))
}

fn load_topology(path: &Path) -> Result<Topology, Failure> {
    parse_topology(&read_text(path)?)
        .map_err(|e| Failure::usage("format", format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, stdout: &mut dyn Write, content: &str) -> Result<(), Failure> {
    match out {
        Some(p) => {
            fs::write(p, content).map_err(|e| Failure::usage("io", format!("{}: {e}", p.display())))
        }
        None => stdout
            .write_all(content.as_bytes())
            .map_err(|e| Failure::usage("io", e)),
    }
}

fn execute(cmd: Command, stdout: &mut dyn Write) -> Result<ExitStatus, Failure> {
    match cmd {
        Command::Select { topology, out } => {
            let t = load_topology(&topology)?;
            emit(out.as_deref(), stdout, &select(&t).to_json())?;
        }
        Command::Validate { topology } => {
            let t = load_topology(&topology)?;
            let violations = validate(&t);
            let mut text = String::new();
            for v in &violations {
                text.push_str(&format!("{v}\n"));
            }
            if violations.is_empty() {
                text.push_str("ok\n");
            }
            emit(None, stdout, &text)?;
            if !violations.is_empty() {
                return Ok(ExitStatus::DomainError);
            }
        }
        Command::Oracle { topology, out } => {
            let t = load_topology(&topology)?;
            let (assignment, score) =
                best_assignment(&t).map_err(|e| Failure::domain("oracle", e))?;
            let report = OracleReport {
                configurations: assignment.configurations,
                score,
            };
            emit(out.as_deref(), stdout, &report.to_json())?;
        }
        Command::Simulate { config, out } => {
            let cfg = SimConfig::from_toml(&read_text(&config)?)
                .map_err(|e| Failure::usage("format", format!("{}: {e}", config.display())))?;
            let metrics = run_sim(&cfg).map_err(|e| Failure::usage("format", e))?;
            emit(out.as_deref(), stdout, &metrics.to_csv())?;
        }
        Command::Eval {
            detections,
            ground_truth,
            out,
            jobs,
        } => {
            let dets = read_detections(open(&detections)?, &detections.display().to_string())
                .map_err(|e| Failure::usage("format", e))?;
            let gts = read_ground_truth(open(&ground_truth)?, &ground_truth.display().to_string())
                .map_err(|e| Failure::usage("format", e))?;
            let report = threshold_sweep_parallel(&dets, &gts, usize::from(jobs));
            emit(out.as_deref(), stdout, &report.to_csv())?;
        }
        Command::Depth {
            image,
            bbox,
            region,
        } => {
            let img = load_depth_image(&image).map_err(|e| match e {
                DepthError::Io { .. } => Failure::usage("io", e),
                _ => Failure::usage("format", format!("{}: {e}", image.display())),
            })?;
            let d = estimate_depth(&img, &bbox, region.0, region.1).map_err(|e| match e {
                DepthError::InsufficientData { .. } => Failure::domain("depth", e),
                DepthError::CenterOutside { .. } => Failure::domain("domain", e),
                _ => Failure::usage("usage", e),
            })?;
            emit(None, stdout, &format!("{d:.6}\n"))?;
        }
        Command::Stats { samples, level } => {
            let level = ConfidenceLevel::from_f64(level).map_err(|e| Failure::usage("usage", e))?;
            let values = read_samples(open(&samples)?)
                .map_err(|e| Failure::usage("format", format!("{}: {e}", samples.display())))?;
            let ci =
                confidence_interval(&values, level).map_err(|e| Failure::domain("stats", e))?;
            let text = format!(
                "{ci}\nmean={:.6}\nhalf_width={:.6}\nstd_dev={:.6}\nn={}\nlevel={:.2}\n",
                ci.mean,
                ci.half_width,
                ci.std_dev,
                ci.n,
                ci.level.value()
            );
            emit(None, stdout, &text)?;
        }
    }
    Ok(ExitStatus::Success)
}

fn diagnostic(stderr: &mut dyn Write, kind: &str, message: &str) {
    let message = message.split_whitespace().collect::<Vec<_>>().join(" ");
    let _ = writeln!(stderr, "{PROGRAM}: error[{kind}]: {message}");
}

/// Runs the CLI with `argv` (including the program name).
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> ExitStatus
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = stdout.write_all(rendered.as_bytes());
                return ExitStatus::Success;
            }
            let first = rendered
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            diagnostic(stderr, "usage", first);
            let _ = stderr.write_all(rendered.as_bytes());
            return ExitStatus::UsageError;
        }
    };
    match execute(cli.command, stdout) {
        Ok(status) => status,
        Err(f) => {
            diagnostic(stderr, f.kind, &f.message);
            f.status
        }
    }
}
