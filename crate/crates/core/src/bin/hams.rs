use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use hams_sim::config::{PlatformKind, SystemConfig};
use hams_sim::failure::{sample_points, sweep, sweep_all, total_events, verdicts_to_csv};
use hams_sim::workload::generate::{generate, GenSpec, WorkloadKind};
use hams_sim::workload::metrics::{records_to_csv, reports_from_csv, reports_to_csv, MetricsReport};
use hams_sim::workload::mmap::mmap_baseline;
use hams_sim::workload::plots::emit_plots;
use hams_sim::workload::trace::{load_trace, serialize_trace, split_pages, TraceRecord};
use hams_sim::system::Platform;
use hams_sim::Error;

#[derive(Parser)]
#[command(name = "hams", version, about = "Memory-over-storage platform simulator")]
struct Cli {
    /// TOML configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Trace file (`<tick> <L|S> 0x<addr> <size>` per line).
    #[arg(long, global = true)]
    trace: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one platform over the trace.
    Simulate {
        /// Overrides the platform selected by the config.
        #[arg(long)]
        platform: Option<PlatformKind>,
    },
    /// Write a synthetic trace.
    Generate(GenArgs),
    /// Inject power failures and check recovery.
    CrashSweep {
        #[arg(long)]
        platform: Option<PlatformKind>,
        /// Enumerate every event instead of sampling.
        #[arg(long)]
        all: bool,
        /// Sampled crash points.
        #[arg(long, default_value_t = 200)]
        points: usize,
    },
    /// Run all four platforms and the mmap comparator over the trace.
    Compare,
    /// Turn a report CSV into chart tables.
    EmitPlots {
        /// Report CSV; defaults to `<out>/compare.csv`.
        #[arg(long)]
        reports: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "rndRd")]
    kind: WorkloadKind,
    #[arg(long, default_value_t = 1 << 30)]
    footprint: u64,
    #[arg(long, default_value_t = 10_000)]
    count: usize,
    #[arg(long, default_value_t = 4096)]
    access_bytes: u32,
    #[arg(long, default_value_t = 0.5)]
    read_ratio: f64,
    /// Picoseconds between consecutive records.
    #[arg(long, default_value_t = 0)]
    interarrival_ps: u64,
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Error {
    let context = context.into();
    move |source| Error::Io { context, source }
}

fn write_out(dir: &Path, name: &str, body: &str) -> Result<PathBuf, Error> {
    fs::create_dir_all(dir).map_err(io_err(format!("create {}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, body).map_err(io_err(format!("write {}", path.display())))?;
    Ok(path)
}

fn load_config(cli: &Cli) -> Result<SystemConfig, Error> {
    Ok(match &cli.config {
        Some(p) => SystemConfig::load(p)?,
        None => SystemConfig::default(),
    })
}

fn load_cli_trace(cli: &Cli, cfg: &SystemConfig) -> Result<(Vec<TraceRecord>, String), Error> {
    let path = cli
        .trace
        .as_ref()
        .ok_or_else(|| Error::Usage("--trace is required for this subcommand".into()))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trace".into());
    Ok((load_trace(path, cfg.mos.page_size_bytes)?, name))
}

fn simulate(cfg: &SystemConfig, trace: &[TraceRecord], name: &str) -> Result<(MetricsReport, String), Error> {
    let mut p = Platform::new(cfg, split_pages(trace, cfg.mos.page_size_bytes))?;
    p.run()?;
    Ok((p.report(name), records_to_csv(p.records())))
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = load_config(&cli)?;
    match &cli.cmd {
        Cmd::Simulate { platform } => {
            if let Some(k) = platform {
                cfg = cfg.with_platform(*k);
            }
            let (trace, name) = load_cli_trace(&cli, &cfg)?;
            let (report, requests) = simulate(&cfg, &trace, &name)?;
            write_out(&cli.out, "report.csv", &reports_to_csv(std::slice::from_ref(&report)))?;
            write_out(&cli.out, "requests.csv", &requests)?;
            print!("{}", report.summary());
        }
        Cmd::Generate(g) => {
            if g.footprint > cfg.mos.flash_bytes {
                return Err(Error::Usage("footprint exceeds the flash capacity".into()));
            }
            let spec = GenSpec {
                access_bytes: g.access_bytes,
                read_ratio: g.read_ratio,
                interarrival: hams_sim::sim::SimTime::from_ps(g.interarrival_ps),
                ..GenSpec::new(g.kind, g.footprint, g.count, cli.seed)
            };
            let text = serialize_trace(&generate(&spec));
            let path = match &cli.trace {
                Some(p) => {
                    fs::write(p, &text).map_err(io_err(format!("write {}", p.display())))?;
                    p.clone()
                }
                None => write_out(&cli.out, &format!("{}.trace", g.kind), &text)?,
            };
            println!("wrote {} records to {}", spec.count, path.display());
        }
        Cmd::CrashSweep { platform, all, points } => {
            if let Some(k) = platform {
                cfg = cfg.with_platform(*k);
            }
            let (trace, _) = load_cli_trace(&cli, &cfg)?;
            let trace = split_pages(&trace, cfg.mos.page_size_bytes);
            let noop = |_: &mut Platform| {};
            let verdicts = if *all {
                sweep_all(&cfg, &trace, &noop)?
            } else {
                let total = total_events(&cfg, &trace, &noop)?;
                sweep(&cfg, &trace, &noop, &sample_points(total, *points, cli.seed))?
            };
            write_out(&cli.out, "crash_sweep.csv", &verdicts_to_csv(&verdicts))?;
            let bad = verdicts.iter().filter(|v| !v.ok()).count();
            println!("{} crash points on {}, {bad} unsound", verdicts.len(), cfg.kind());
            if bad > 0 {
                return Err(Error::Unsound(bad));
            }
        }
        Cmd::Compare => {
            let (trace, name) = load_cli_trace(&cli, &cfg)?;
            let mut reports = PlatformKind::ALL
                .par_iter()
                .map(|&k| simulate(&cfg.clone().with_platform(k), &trace, &name).map(|r| r.0))
                .collect::<Result<Vec<_>, _>>()?;
            reports.push(mmap_baseline(&cfg, &trace, cfg.mmap.overhead_us, &name));
            write_out(&cli.out, "compare.csv", &reports_to_csv(&reports))?;
            for r in &reports {
                print!("{}", r.summary());
            }
        }
        Cmd::EmitPlots { reports } => {
            let path = reports.clone().unwrap_or_else(|| cli.out.join("compare.csv"));
            let text = fs::read_to_string(&path).map_err(io_err(format!("read {}", path.display())))?;
            let parsed = reports_from_csv(&text)
                .map_err(|e| Error::Usage(format!("{}: not a report CSV: {e}", path.display())))?;
            let bundle = emit_plots(&parsed);
            write_out(&cli.out, "breakdown.csv", &bundle.breakdown_csv)?;
            write_out(&cli.out, "bars.csv", &bundle.bars_csv)?;
            println!("wrote breakdown.csv and bars.csv for {} rows", parsed.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
