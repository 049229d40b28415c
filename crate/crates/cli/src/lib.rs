//! Batch front end over the `exokit` library.
//!
//! Results go to standard output, diagnostics to standard error. Exit codes:
//! 0 success, 1 domain error (validation, infeasible input), 2 usage error,
//! 3 I/O error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use exokit::anthropometry::{check_hand, hand_length_range, SliderParams};
use exokit::episode_store::{
    export_training, read_episode, write_episode, write_training_binary, write_training_text,
    EpisodeError, EpisodeManifest, FingerMode, DEFAULT_EXECUTE, DEFAULT_HORIZON,
};
use exokit::hand_model::{parse_chain, PassiveThumbConfig};
use exokit::keyvalue::KeyValues;
use exokit::retarget::CalibrationTable;
use exokit::stream_ingest::{parse_frame_index, parse_pose_log, scan_stream, write_encoder_text};
use exokit::sync_align::{build_episode, resample_poses, DEFAULT_MAX_STALE_US, DEFAULT_POSE_RATE_HZ};
use exokit::thumb_coupling::{
    coupling_from_key_values, CouplingGeometry, ThumbModel, DEFAULT_MAX_ITER, DEFAULT_SV_TOL,
    DEFAULT_TOL,
};
use exokit::wiggle::{coverage_fraction, fit_ellipsoid, PointCloud};
use exokit::{Pose, Vector3, FINGER_CHANNELS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Domain(_) => EXIT_DOMAIN,
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_IO,
        }
    }
}

fn domain(e: impl std::fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

fn io_at(path: impl AsRef<Path>) -> impl FnOnce(io::Error) -> CliError {
    let path = path.as_ref().to_path_buf();
    move |source| CliError::Io { path, source }
}

#[derive(Parser, Debug)]
#[command(name = "exokit", version, about = "Hand exoskeleton kinematics and demonstration pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Slider fit bounds and hand-length compatibility (millimeters)
    #[command(subcommand)]
    Anthro(AnthroCommand),
    /// Covariance-ellipsoid summary of a point cloud
    #[command(subcommand)]
    Wiggle(WiggleCommand),
    /// Self-motion manifold of the thumb coupling
    #[command(subcommand)]
    Manifold(ManifoldCommand),
    /// Binary encoder stream decoding
    #[command(subcommand)]
    Ingest(IngestCommand),
    /// Align video, pose and encoder streams into an episode directory
    #[command(subcommand)]
    Sync(SyncCommand),
    /// Validate and normalize a calibration table
    Calibrate(CalibrateArgs),
    /// Map an encoder stream to actuator commands
    Retarget(RetargetArgs),
    /// Export training samples from an episode
    Export(ExportArgs),
}

#[derive(Args, Debug)]
struct SliderArgs {
    /// Key-value file with L_min, d_max, d_curl, delta and r (overrides flags)
    #[arg(long)]
    params: Option<PathBuf>,
    /// Minimum ring-to-fingercot distance [mm]
    #[arg(long = "L-min")]
    l_min: Option<f64>,
    /// Maximum distance permitted by slider travel [mm]
    #[arg(long = "d-max")]
    d_max: Option<f64>,
    /// Slider length consumed by full flexion [mm]
    #[arg(long = "d-curl")]
    d_curl: Option<f64>,
    /// Maximum ring offset above the webbing [mm]
    #[arg(long)]
    delta: Option<f64>,
    /// Middle-finger to hand-length ratio
    #[arg(long)]
    r: Option<f64>,
    /// Round printed lengths to whole millimeters
    #[arg(long = "round-mm")]
    round_mm: bool,
}

#[derive(Subcommand, Debug)]
enum AnthroCommand {
    /// Print the compatible hand-length range
    Range(SliderArgs),
    /// Check one hand length against the range
    Check {
        /// Hand length [mm]
        #[arg(long)]
        hand: f64,
        #[command(flatten)]
        slider: SliderArgs,
    },
}

#[derive(Subcommand, Debug)]
enum WiggleCommand {
    /// Fit a k-sigma ellipsoid and report its axes, volume and coverage
    Fit {
        /// Point-cloud text file
        #[arg(long)]
        input: PathBuf,
        /// Scale factor on the standard deviations
        #[arg(long, default_value_t = 2.0)]
        k: f64,
    },
}

#[derive(Args, Debug)]
struct ManifoldArgs {
    /// Passive-hand chain file
    #[arg(long)]
    chain: PathBuf,
    /// Coupling geometry key-value file
    #[arg(long)]
    geometry: PathBuf,
    /// θ₂ [deg]
    #[arg(long = "theta2-deg", default_value_t = 0.0, allow_negative_numbers = true)]
    theta2_deg: f64,
    /// θ₄ [deg]
    #[arg(long = "theta4-deg", default_value_t = 0.0, allow_negative_numbers = true)]
    theta4_deg: f64,
    /// Initial exoskeleton pose `px py pz qw qx qy qz` (meters); identity if absent
    #[arg(long, allow_hyphen_values = true)]
    pose: Option<String>,
}

#[derive(Subcommand, Debug)]
enum ManifoldCommand {
    /// Project onto the manifold and print its local dimension
    Rank {
        #[command(flatten)]
        model: ManifoldArgs,
        /// Relative singular-value threshold
        #[arg(long = "sv-tol", default_value_t = DEFAULT_SV_TOL)]
        sv_tol: f64,
    },
    /// Random walk on the manifold; one `px py pz qw qx qy qz` row per sample
    Sample {
        #[command(flatten)]
        model: ManifoldArgs,
        /// Number of samples
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Step length in twist coordinates
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        /// RNG seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; standard output if absent
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum IngestCommand {
    /// Decode frames from a binary encoder stream and print diagnostics
    Scan {
        /// Binary stream file
        #[arg(long)]
        input: PathBuf,
        /// Write decoded frames as `seq t_us v0..v5` rows
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum SyncCommand {
    /// Build and write an episode directory
    Build {
        /// Frame index (`frame_no t_us` rows)
        #[arg(long)]
        frames: PathBuf,
        /// Binary encoder stream
        #[arg(long)]
        encoders: PathBuf,
        /// Pose log (`t_us px py pz qw qx qy qz` rows)
        #[arg(long)]
        poses: PathBuf,
        /// Episode directory to create
        #[arg(long)]
        out: PathBuf,
        /// Pose resampling rate [Hz]
        #[arg(long, default_value_t = DEFAULT_POSE_RATE_HZ)]
        rate: f64,
        /// Largest accepted association age [µs]
        #[arg(long = "max-stale-us", default_value_t = DEFAULT_MAX_STALE_US)]
        max_stale_us: u64,
        /// Episode identifier; the directory name if absent
        #[arg(long = "episode-id")]
        episode_id: Option<String>,
    },
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// `joint <i> <raw> <command>` rows in any order
    #[arg(long)]
    input: PathBuf,
    /// Normalized table output
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RetargetArgs {
    /// Calibration table
    #[arg(long)]
    table: PathBuf,
    /// Binary encoder stream; `-` reads standard input
    #[arg(long)]
    input: PathBuf,
    /// `seq t_us c0..c5` rows; standard output if absent
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ExportFormat {
    Text,
    Binary,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum FingerArg {
    Absolute,
    Relative,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// Episode directory
    #[arg(long)]
    episode: PathBuf,
    /// Calibration table
    #[arg(long)]
    table: PathBuf,
    /// Actions per sample
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: usize,
    /// Actions executed before replanning
    #[arg(long, default_value_t = DEFAULT_EXECUTE)]
    execute: usize,
    #[arg(long, value_enum, default_value_t = ExportFormat::Text)]
    format: ExportFormat,
    /// Finger commands as absolute values or relative to the first step
    #[arg(long, value_enum, default_value_t = FingerArg::Absolute)]
    fingers: FingerArg,
    /// Output file; standard output if absent
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs one command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind::*;
            let text = e.render().to_string();
            return match e.kind() {
                DisplayHelp | DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Anthro(AnthroCommand::Range(s)) => {
            let (lo, hi) = hand_length_range(&slider_params(&s)?).map_err(domain)?;
            emit(out, &format!("H_min={} H_max={}\n", mm(lo, s.round_mm), mm(hi, s.round_mm)))
        }
        Command::Anthro(AnthroCommand::Check { hand, slider }) => {
            let v = check_hand(hand, &slider_params(&slider)?).map_err(domain)?;
            let r = slider.round_mm;
            emit(
                out,
                &format!(
                    "compatible={} H_min={} H_max={} margin_low={} margin_high={}\n",
                    v.compatible,
                    mm(v.h_min, r),
                    mm(v.h_max, r),
                    mm(v.margin_low, r),
                    mm(v.margin_high, r)
                ),
            )
        }
        Command::Wiggle(WiggleCommand::Fit { input, k }) => {
            let cloud = PointCloud::parse(&read_text(&input)?).map_err(domain)?;
            let e = fit_ellipsoid(&cloud, k).map_err(domain)?;
            emit(out, &e.report(Some(coverage_fraction(&cloud, &e))).to_text())
        }
        Command::Manifold(ManifoldCommand::Rank { model, sv_tol }) => {
            let (thumb, q, pose) = manifold_start(&model, err)?;
            let dim = thumb.nullspace_dimension(&pose, &q, sv_tol).map_err(domain)?;
            emit(out, &format!("nullspace_dim={dim}\n"))
        }
        Command::Manifold(ManifoldCommand::Sample {
            model,
            n,
            step,
            seed,
            output,
        }) => {
            let (thumb, q, pose) = manifold_start(&model, err)?;
            let (poses, failure) = match thumb.sample_self_motion(&pose, &q, n, step, seed) {
                Ok(p) => (p, None),
                Err(w) => (w.poses, Some(w.source)),
            };
            let mut text = String::new();
            for p in &poses {
                let t = p.translation();
                let q = p.wxyz();
                let _ = writeln!(text, "{} {} {} {} {} {} {}", t.x, t.y, t.z, q[0], q[1], q[2], q[3]);
            }
            write_output(output.as_deref(), text.as_bytes(), out)?;
            match failure {
                Some(e) => Err(CliError::Domain(format!(
                    "walk stopped after {} samples: {e}",
                    poses.len()
                ))),
                None => Ok(()),
            }
        }
        Command::Ingest(IngestCommand::Scan { input, output }) => {
            let (frames, diag) = scan_stream(&read_bytes(&input)?);
            if let Some(path) = output {
                write_file(&path, write_encoder_text(&frames).as_bytes())?;
            }
            emit(out, &format!("{diag}\n"))
        }
        Command::Sync(SyncCommand::Build {
            frames,
            encoders,
            poses,
            out: dest,
            rate,
            max_stale_us,
            episode_id,
        }) => {
            let index = parse_frame_index(&read_text(&frames)?).map_err(domain)?;
            let (enc, diag) = scan_stream(&read_bytes(&encoders)?);
            note(err, &format!("encoders: {diag}"));
            let log = parse_pose_log(&read_text(&poses)?).map_err(domain)?;
            if log.renormalized > 0 {
                note(err, &format!("warning: renormalized {} pose quaternions", log.renormalized));
            }
            let resampled = resample_poses(&log.samples, rate).map_err(domain)?;
            let (records, report) =
                build_episode(&index, &enc, &resampled, max_stale_us).map_err(domain)?;
            let id = episode_id.unwrap_or_else(|| {
                dest.file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "episode".into())
            });
            let mut manifest = EpisodeManifest::new(&id, records[0].t_us, records.len());
            manifest.rate_hz = rate;
            write_episode(&records, &manifest, &dest).map_err(|e| episode_error(e, &dest))?;
            emit(out, &format!("{report}\n"))
        }
        Command::Calibrate(CalibrateArgs { input, output }) => {
            let table = CalibrationTable::parse(&read_text(&input)?).map_err(domain)?;
            if let Some(path) = output {
                write_file(&path, table.to_text().as_bytes())?;
            }
            let mut text = String::new();
            for j in 0..FINGER_CHANNELS {
                let w = table.waypoints(j).map_err(domain)?;
                let (lo, hi) = table.command_envelope(j).map_err(domain)?;
                let _ = writeln!(
                    text,
                    "joint={j} waypoints={} raw_min={} raw_max={} command_min={lo} command_max={hi}",
                    w.len(),
                    w[0].0,
                    w[w.len() - 1].0
                );
            }
            emit(out, &text)
        }
        Command::Retarget(RetargetArgs { table, input, output }) => {
            let table = CalibrationTable::parse(&read_text(&table)?).map_err(domain)?;
            let bytes = if input.as_os_str() == "-" {
                let mut buf = Vec::new();
                io::stdin().read_to_end(&mut buf).map_err(io_at("<stdin>"))?;
                buf
            } else {
                read_bytes(&input)?
            };
            let (frames, diag) = scan_stream(&bytes);
            note(err, &format!("{diag}"));
            let mut text = String::new();
            for f in &frames {
                let _ = write!(text, "{} {}", f.seq, f.t_us);
                for c in table.apply_table(f) {
                    let _ = write!(text, " {c}");
                }
                text.push('\n');
            }
            write_output(output.as_deref(), text.as_bytes(), out)
        }
        Command::Export(a) => {
            let episode = read_episode(&a.episode).map_err(|e| episode_error(e, &a.episode))?;
            let table = CalibrationTable::parse(&read_text(&a.table)?).map_err(domain)?;
            let mode = match a.fingers {
                FingerArg::Absolute => FingerMode::Absolute,
                FingerArg::Relative => FingerMode::RelativeToFirst,
            };
            if a.horizon > u16::MAX as usize {
                return Err(CliError::Usage(format!("horizon {} exceeds {}", a.horizon, u16::MAX)));
            }
            let samples = export_training(&episode.records, &table, a.horizon, a.execute, mode)
                .map_err(|e| episode_error(e, &a.episode))?;
            note(err, &format!("samples={}", samples.len()));
            let bytes = match a.format {
                ExportFormat::Text => write_training_text(&samples).into_bytes(),
                ExportFormat::Binary => write_training_binary(&samples),
            };
            write_output(a.output.as_deref(), &bytes, out)
        }
    }
}

fn slider_params(s: &SliderArgs) -> Result<SliderParams, CliError> {
    if let Some(path) = &s.params {
        let kv = KeyValues::parse(&read_text(path)?).map_err(domain)?;
        return SliderParams::from_key_values(&kv).map_err(domain);
    }
    match (s.l_min, s.d_max, s.d_curl, s.delta, s.r) {
        (Some(l_min), Some(d_max), Some(d_curl), Some(delta), Some(r)) => {
            SliderParams::new(l_min, d_max, d_curl, delta, r).map_err(domain)
        }
        _ => Err(CliError::Usage(
            "give --params or all of --L-min --d-max --d-curl --delta --r".into(),
        )),
    }
}

fn mm(v: f64, round: bool) -> f64 {
    if round {
        v.round()
    } else {
        v
    }
}

fn manifold_start(
    a: &ManifoldArgs,
    err: &mut dyn Write,
) -> Result<(ThumbModel, PassiveThumbConfig, Pose), CliError> {
    let chain = parse_chain(&read_text(&a.chain)?).map_err(domain)?;
    let kv = KeyValues::parse(&read_text(&a.geometry)?).map_err(domain)?;
    let geometry = CouplingGeometry::from_key_values(&kv).map_err(domain)?;
    let coupling = coupling_from_key_values(&kv, &chain).map_err(domain)?;
    let thumb = ThumbModel::new(chain, coupling, geometry).map_err(domain)?;
    let q = PassiveThumbConfig::new(a.theta2_deg.to_radians(), a.theta4_deg.to_radians());
    let guess = match &a.pose {
        None => Pose::identity(),
        Some(text) => parse_pose(text)?,
    };
    let proj = thumb
        .project_to_manifold(&guess, &q, DEFAULT_TOL, DEFAULT_MAX_ITER)
        .map_err(domain)?;
    note(err, &format!("projected in {} iterations", proj.iterations));
    Ok((thumb, q, proj.pose))
}

fn parse_pose(text: &str) -> Result<Pose, CliError> {
    let v: Vec<f64> = text
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("bad pose `{text}`")))?;
    if v.len() != 7 {
        return Err(CliError::Usage(format!("pose needs 7 numbers, got {}", v.len())));
    }
    Pose::from_wxyz(Vector3::new(v[0], v[1], v[2]), [v[3], v[4], v[5], v[6]]).map_err(domain)
}

fn episode_error(e: EpisodeError, path: &Path) -> CliError {
    match e {
        EpisodeError::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        EpisodeError::DestinationExists(p) => CliError::Io {
            path: p,
            source: io::Error::from(io::ErrorKind::AlreadyExists),
        },
        other => domain(other),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(io_at(path))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(io_at(path))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(io_at(path))
}

fn write_output(path: Option<&Path>, bytes: &[u8], out: &mut dyn Write) -> Result<(), CliError> {
    match path {
        Some(p) => write_file(p, bytes),
        None => out.write_all(bytes).map_err(io_at("<stdout>")),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(io_at("<stdout>"))
}

fn note(err: &mut dyn Write, text: &str) {
    let _ = writeln!(err, "{text}");
}
