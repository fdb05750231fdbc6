use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use loadcast::data::{gen_synthetic, write_csv, ScenarioConfig, Window};
use loadcast::pipeline::{
    emit_report, evaluate, load_report, run_backtest, select, PipelineConfig,
};
use loadcast::{Error, Result};

#[derive(Parser)]
#[command(
    name = "forecast",
    version,
    about = "Day-ahead load forecasting backtests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a backtest and write the report files.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// MAE of every expert in a report over a window.
    Evaluate {
        #[arg(long)]
        report: PathBuf,
        /// `start:end`, dates or timestamps.
        #[arg(long)]
        window: String,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy expert selection on the validation window.
    Select {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 30)]
        max_size: usize,
    },
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { config } => {
            let cfg = PipelineConfig::load(&config)?;
            if cfg.roster.is_empty() {
                log::warn!("the roster is empty; the report will contain no experts");
            }
            let report = run_backtest(&cfg)?;
            emit_report(&report, &cfg, &cfg.output_dir)?;
            log::info!(
                "{} days in {:.1}s",
                report.runtime.days,
                report.runtime.seconds
            );
            println!(
                "{}",
                std::fs::read_to_string(cfg.output_dir.join("metrics.json"))?.trim_end()
            );
        }
        Command::Evaluate { report, window } => {
            let window = Window::parse(&window)?;
            let r = load_report(&report)?;
            let m = evaluate(&r, &window)?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        Command::Synth {
            scenario,
            seed,
            out,
        } => {
            let text = std::fs::read_to_string(&scenario)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", scenario.display())))?;
            let cfg: ScenarioConfig = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("invalid scenario: {e}")))?;
            let ds = gen_synthetic(&cfg, seed)?;
            write_csv(&ds, BufWriter::new(File::create(&out)?))?;
        }
        Command::Select { config, max_size } => {
            let cfg = PipelineConfig::load(&config)?;
            let sel = select(&cfg, max_size)?;
            let json = serde_json::to_string_pretty(&sel)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            std::fs::write(cfg.output_dir.join("selection.json"), json.clone() + "\n")?;
            println!("{json}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
