use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use floquet_dtc::analysis::DEFAULT_WINDOW_PERIODS;
use floquet_dtc::device_model::{zigzag_report, DEFAULT_LEVELS};
use floquet_dtc::dynamics::StrobeRecord;
use floquet_dtc::runner::{analyze_record, default_out_dir, run_scenario, Config, Preset, Scenario};
use floquet_dtc::Result;

#[derive(Parser)]
#[command(name = "dtc", version, about = "Floquet spin-chain simulator and time-crystal analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Fig2,
    Fig3,
    Fig4,
    Custom,
}

impl From<ScenarioArg> for Preset {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Fig2 => Preset::Fig2,
            ScenarioArg::Fig3 => Preset::Fig3,
            ScenarioArg::Fig4 => Preset::Fig4,
            ScenarioArg::Custom => Preset::Custom,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write series, spectra and a manifest.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "custom")]
        scenario: ScenarioArg,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        noise: Option<Switch>,
        #[arg(long)]
        dt_ns: Option<f64>,
    },
    /// Spectrum, windowed peaks and lifetime of a series CSV.
    Analyze {
        #[arg(long)]
        series: PathBuf,
        #[arg(long, default_value_t = DEFAULT_WINDOW_PERIODS)]
        window: usize,
        /// Write the JSON result here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detunings, dispersive ratios and effective ZZ per bond.
    Device {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_LEVELS)]
        levels: usize,
        /// Directory for zigzag.csv and zigzag.json; stdout JSON otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            scenario,
            out,
            workers,
            seed,
            noise,
            dt_ns,
        } => {
            let mut config = load_config(&config)?;
            if let Some(s) = seed {
                config.seed = s;
            }
            let mut s = Scenario::from_config(&config, scenario.into(), noise.map(|n| matches!(n, Switch::On)))?;
            if let Some(dt) = dt_ns {
                s.dt_ns = dt;
            }
            let out = out.unwrap_or_else(|| default_out_dir(&s.name));
            let manifest = run_scenario(&s, &out, workers.or(config.workers))?;
            let failed = manifest.runs.iter().filter(|r| r.error.is_some()).count();
            eprintln!(
                "{}: {} runs ({} failed) written to {}",
                s.name,
                manifest.runs.len(),
                failed,
                out.display()
            );
            for cp in &manifest.critical_points {
                match cp.epsilon0 {
                    Some(e) => eprintln!("t2 = {} ns: eps0 = {e:.4}", cp.t2_ns),
                    None => eprintln!("t2 = {} ns: {}", cp.t2_ns, cp.error.as_deref().unwrap_or("no fit")),
                }
            }
        }
        Command::Analyze { series, window, out } => {
            let record = StrobeRecord::read_csv(File::open(&series)?)?;
            let result = analyze_record(&record, window)?;
            match out {
                Some(path) => {
                    let mut w = BufWriter::new(File::create(path)?);
                    serde_json::to_writer_pretty(&mut w, &result)?;
                    w.flush()?;
                }
                None => {
                    serde_json::to_writer_pretty(io::stdout().lock(), &result)?;
                    println!();
                }
            }
        }
        Command::Device { config, levels, out } => {
            let config = load_config(&config)?;
            let report = zigzag_report(&config.device.to_params()?, levels)?;
            match out {
                Some(dir) => {
                    fs::create_dir_all(&dir)?;
                    report.write_csv(File::create(dir.join("zigzag.csv"))?)?;
                    report.write_json(File::create(dir.join("zigzag.json"))?)?;
                }
                None => {
                    report.write_json(io::stdout().lock())?;
                    println!();
                }
            }
            for b in report.bonds.iter().filter(|b| b.flagged) {
                eprintln!("bond {}: |detuning|/g = {:.1} is not dispersive", b.bond, b.ratio);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
