use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use transit_access::config::StudyConfig;
use transit_access::delay::FillUnobserved;
use transit_access::indices::PercentileDirection;
use transit_access::pipeline::{self, PipelineError, StudyContext};
use transit_access::router::{Percentile, VariantKind};
use transit_access::street::DesertMetric;
use transit_access::synth::{self, SynthParams};

#[derive(Parser)]
#[command(name = "transit-access", version, about = "School accessibility under scheduled and actual transit operations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the actual-operations GTFS feed for each day, plus delay stats.
    BuildActual(Common),
    /// Travel-time matrices (and lucky-catch events for the actual variant).
    Matrix(Common),
    /// ECO / OGL / TOGL indices, district percentiles, Gini, binned tables.
    Indices(Common),
    /// Cell polygons with index properties.
    Geojson(Common),
    /// Markdown summary.
    Report(Common),
    /// Every stage, then a run manifest.
    All(Common),
    /// Write a synthetic city study to a directory.
    Synth(SynthArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Only this day (must be in the configured list).
    #[arg(long)]
    day: Option<NaiveDate>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<VariantKind>,
    #[arg(long, value_parser = parse_percentile)]
    percentile: Option<Percentile>,
    /// Bootstrap seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    strict_window_exclusion: bool,
    #[arg(long, value_parser = parse_fill)]
    fill_unobserved: Option<FillUnobserved>,
    #[arg(long, value_parser = parse_desert)]
    desert_metric: Option<DesertMetric>,
    #[arg(long, value_parser = parse_direction)]
    percentile_direction: Option<PercentileDirection>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 1244)]
    cells: usize,
    #[arg(long, default_value_t = 9)]
    schools: usize,
    #[arg(long, default_value_t = 46)]
    bus_routes: usize,
    #[arg(long, default_value_t = 4)]
    rail_lines: usize,
    #[arg(long, default_value_t = 5)]
    days: usize,
}

fn parse_variant(s: &str) -> Result<VariantKind, String> {
    s.parse().map_err(|_| format!("expected scheduled or actual, got {s:?}"))
}

fn parse_percentile(s: &str) -> Result<Percentile, String> {
    s.parse().map_err(|_| format!("expected p25 or p50, got {s:?}"))
}

fn parse_fill(s: &str) -> Result<FillUnobserved, String> {
    match s {
        "scheduled" => Ok(FillUnobserved::Scheduled),
        "route-median" => Ok(FillUnobserved::RouteMedian),
        _ => Err(format!("expected scheduled or route-median, got {s:?}")),
    }
}

fn parse_desert(s: &str) -> Result<DesertMetric, String> {
    match s {
        "radius" => Ok(DesertMetric::Radius),
        "network" => Ok(DesertMetric::Network),
        _ => Err(format!("expected radius or network, got {s:?}")),
    }
}

fn parse_direction(s: &str) -> Result<PercentileDirection, String> {
    s.parse().map_err(|_| format!("expected attains or below, got {s:?}"))
}

impl Common {
    fn load(&self) -> Result<StudyConfig, PipelineError> {
        let mut cfg = StudyConfig::load(&self.config)?;
        if let Some(p) = self.percentile {
            cfg.router.percentile = p;
        }
        if self.strict_window_exclusion {
            cfg.router.strict_window_exclusion = true;
        }
        if let Some(s) = self.seed {
            cfg.indices.seed = s;
        }
        if let Some(f) = self.fill_unobserved {
            cfg.delay.fill_unobserved = f;
        }
        if let Some(m) = self.desert_metric {
            cfg.desert.metric = m;
        }
        if let Some(d) = self.percentile_direction {
            cfg.indices.percentile_direction = d;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn base(&self) -> &Path {
        self.config.parent().unwrap_or(Path::new("."))
    }
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        log::warn!("{w}");
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let first = NaiveDate::from_ymd_opt(2025, 12, 22).expect("valid date");
            let params = SynthParams {
                seed: a.seed,
                cells: a.cells,
                schools: a.schools,
                bus_routes: a.bus_routes,
                rail_lines: a.rail_lines,
                days: (0..a.days as i64).map(|i| first + chrono::Duration::days(i)).collect(),
                ..SynthParams::default()
            };
            let cfg = synth::generate(&params, &a.out).with_context(|| format!("writing synthetic study to {}", a.out.display()))?;
            println!("{}", cfg.display());
        }
        Command::All(c) => {
            let cfg = c.load()?;
            let m = pipeline::cmd_all(cfg, c.base())?;
            log::info!("{} outputs, {} warnings", m.outputs.len(), m.warnings.len());
        }
        Command::Indices(c) => {
            let cfg = c.load()?;
            let cells = transit_access::street::load_cells(&cfg.inputs.cells).map_err(|e| PipelineError::Input { path: cfg.inputs.cells.clone(), message: e.to_string() })?;
            let (_, w) = pipeline::cmd_indices(&cfg, &cells)?;
            warn_all(&w);
        }
        Command::BuildActual(c) => {
            let ctx = StudyContext::load(c.load()?)?;
            warn_all(&ctx.warnings);
            warn_all(&pipeline::cmd_build_actual(&ctx, c.day)?);
        }
        Command::Matrix(c) => {
            let ctx = StudyContext::load(c.load()?)?;
            warn_all(&ctx.warnings);
            warn_all(&pipeline::cmd_matrix(&ctx, c.variant, c.day)?);
        }
        Command::Geojson(c) => pipeline::cmd_geojson(&StudyContext::load(c.load()?)?)?,
        Command::Report(c) => pipeline::cmd_report(&StudyContext::load(c.load()?)?)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = std::env::var("TRANSIT_ACCESS_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("TRANSIT_ACCESS_THREADS ignored: {e}");
        }
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<PipelineError>().map_or(1, PipelineError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
