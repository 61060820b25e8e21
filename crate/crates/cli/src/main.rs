use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use haptic_cone::acoustics::{focal_spot_width, focus_phases, scan, scan_maximum, write_scan_csv, ScanGrid};
use haptic_cone::experiment::{evaluate_trial, run_sets, ExperimentError};
use haptic_cone::export::export_run;
use haptic_cone::tracking::Trajectory;
use haptic_cone::{SampledTrajectory, SimulationConfig, Vec3};
use haptic_cone_server::{ServerSettings, TrialServer};

#[derive(Parser)]
#[command(name = "haptic-cone", version, about = "Haptic-cone hand guidance simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full protocol with the simulated participant and export results.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Scan the acoustic field around a focus and write it as CSV.
    FieldDump {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Focus as x,y,z in mm.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = [0.0, 0.0, 300.0])]
        focus: Vec<f64>,
        /// Half side of the scanned cube (mm).
        #[arg(long, default_value_t = 10.0)]
        half: f64,
        #[arg(long, default_value_t = 0.5)]
        step: f64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the goal positions.
    Goals {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Summarise a JSON-lines trajectory, optionally scoring it against a goal.
    Replay {
        trajectory: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        goal: Option<u8>,
    },
    /// Serve trials to browser clients over WebSocket.
    Serve {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        log_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(config: &Option<PathBuf>) -> Result<SimulationConfig> {
    match config {
        Some(p) => SimulationConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(SimulationConfig::default()),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.1}"))
}

fn run(config: &Option<PathBuf>, seed: u64, out: &Path) -> Result<ExitCode> {
    let cfg = load(config)?;
    let protocol = cfg.protocol()?;
    let run = match run_sets(&cfg.participant(), &protocol, seed) {
        Ok(r) => r,
        Err(ExperimentError::Invariant(msg)) => {
            eprintln!("invariant violated: {msg}");
            return Ok(ExitCode::from(2));
        }
        Err(e) => return Err(e.into()),
    };
    export_run(&run, &protocol.goals, out, cfg.experiment.trajectory_stride)?;
    let s = &run.summary;
    println!("{:>4} {:<8} {:>6} {:>10} {:>9} {:>8}", "goal", "label", "rate", "eps_xyz", "eps_xy", "time");
    for g in &s.goals {
        println!(
            "{:>4} {:<8} {:>6.2} {:>10} {:>9} {:>8}",
            g.goal_id,
            g.label,
            g.completion_rate,
            fmt_opt(g.median_eps_xyz),
            fmt_opt(g.median_eps_xy),
            fmt_opt(g.median_duration)
        );
    }
    println!(
        " all {:<8} {:>6.2} {:>10} {:>9} {:>8}",
        "",
        s.completion_rate,
        fmt_opt(s.median_eps_xyz),
        fmt_opt(s.median_eps_xy),
        fmt_opt(s.median_duration)
    );
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn field_dump(config: &Option<PathBuf>, focus: &[f64], half: f64, step: f64, out: &Option<PathBuf>) -> Result<()> {
    if focus.len() != 3 {
        bail!("--focus takes x,y,z");
    }
    let cfg = load(config)?;
    let array = cfg.build_array()?;
    let focus = Vec3::new(focus[0], focus[1], focus[2]);
    let phases = focus_phases(&array, focus, &cfg.medium)?;
    let samples = scan(&array, &phases, &cfg.medium, &ScanGrid::cube(focus, half, step))?;
    match out {
        Some(p) => write_scan_csv(&samples, BufWriter::new(File::create(p)?))?,
        None => write_scan_csv(&samples, std::io::stdout().lock())?,
    }
    if let Some(max) = scan_maximum(&samples) {
        eprintln!(
            "{} points, maximum at ({:.2}, {:.2}, {:.2}), {:.2} mm from focus",
            samples.len(),
            max.point.x,
            max.point.y,
            max.point.z,
            (max.point - focus).norm()
        );
    }
    match focal_spot_width(&array, focus, &cfg.medium) {
        Ok(w) => eprintln!("lateral FWHM {w:.2} mm"),
        Err(e) => eprintln!("lateral FWHM unavailable: {e}"),
    }
    Ok(())
}

fn goals(config: &Option<PathBuf>, json: bool) -> Result<()> {
    let protocol = load(config)?.protocol()?;
    if json {
        println!("{}", serde_json::to_string_pretty(&protocol.goals)?);
        return Ok(());
    }
    let start = protocol.workspace.start_point;
    println!("start ({:.1}, {:.1}, {:.1})", start.x, start.y, start.z);
    for g in &protocol.goals {
        let cone = protocol.cone_for(g)?;
        println!(
            "{:>3} {:<7} ({:>7.1}, {:>7.1}, {:>6.1}) {:?} path {:.1} mm",
            g.id,
            g.label,
            g.position.x,
            g.position.y,
            g.position.z,
            g.kind,
            cone.path_length()
        );
    }
    Ok(())
}

fn replay(path: &Path, config: &Option<PathBuf>, goal: Option<u8>) -> Result<()> {
    let traj = SampledTrajectory::read_jsonl(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))?;
    let (Some(first), Some(last)) = (traj.samples().first(), traj.last()) else {
        bail!("{} has no samples", path.display());
    };
    let length: f64 = traj.samples().windows(2).map(|w| (w[1].position - w[0].position).norm()).sum();
    let duration = last.timestamp - first.timestamp;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "samples {}", traj.len())?;
    writeln!(stdout, "duration {duration:.3} s")?;
    writeln!(stdout, "path length {length:.1} mm")?;
    let end = traj.position_at(last.timestamp);
    writeln!(stdout, "final ({:.2}, {:.2}, {:.2})", end.x, end.y, end.z)?;
    if let Some(id) = goal {
        let protocol = load(config)?.protocol()?;
        let g = protocol.goals.iter().find(|g| g.id == id).with_context(|| format!("no goal {id}"))?;
        let m = evaluate_trial(&protocol.cone_for(g)?, end, last.timestamp, true);
        writeln!(stdout, "goal {id} eps_xyz {:.2} mm eps_xy {:.2} mm", m.eps_xyz, m.eps_xy)?;
    }
    Ok(())
}

async fn serve(host: &str, port: u16, config: &Option<PathBuf>, log_dir: Option<PathBuf>, seed: u64) -> Result<()> {
    let settings = ServerSettings::new(load(config)?, seed)?;
    let server = TrialServer::bind(&format!("{host}:{port}"), settings, log_dir).await?;
    log::info!("listening on ws://{}", server.local_addr()?);
    server.run().await?;
    Ok(())
}

fn main() -> Result<ExitCode> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, seed, out } => return run(&config, seed, &out),
        Command::FieldDump { config, focus, half, step, out } => field_dump(&config, &focus, half, step, &out)?,
        Command::Goals { config, json } => goals(&config, json)?,
        Command::Replay { trajectory, config, goal } => replay(&trajectory, &config, goal)?,
        Command::Serve { port, host, config, log_dir, seed } => {
            tokio::runtime::Runtime::new()?.block_on(serve(&host, port, &config, log_dir, seed))?
        }
    }
    Ok(ExitCode::SUCCESS)
}
