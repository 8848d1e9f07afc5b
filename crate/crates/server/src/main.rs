use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dpvs::eval::{recompute_metrics, run_experiment, synth_taxlike_data, taxlike_schema, write_outputs, ExperimentConfig};
use dpvs_server::ServerConfig;

#[derive(Parser)]
#[command(name = "dpvs", version, about = "Differentially private validation server and experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a JSON config.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Recompute metrics.csv and summary.json from a stored raw.json.
    Metrics {
        raw: PathBuf,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Write a synthetic tax-like dataset and its schema.
    GenData {
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Schema path; defaults to the CSV path with a .schema.json suffix.
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Start the HTTP server.
    Serve { config: PathBuf },
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::from_json_file(&config).map_err(|e| format!("{}: {e}", config.display()))?;
            let run = run_experiment(&cfg).map_err(|e| e.to_string())?;
            write_outputs(&run, &out).map_err(|e| e.to_string())?;
            eprintln!(
                "{} releases ({} failed), {} metric rows written to {}",
                run.manifest.releases,
                run.manifest.failed_releases,
                run.manifest.records,
                out.display()
            );
        }
        Command::Metrics { raw, out } => {
            let (records, _) = recompute_metrics(&raw, &out).map_err(|e| format!("{}: {e}", raw.display()))?;
            eprintln!("{} metric rows written to {}", records.len(), out.display());
        }
        Command::GenData { n, seed, out, schema } => {
            let table = synth_taxlike_data(n, seed).map_err(|e| e.to_string())?;
            table.write_csv(&out).map_err(|e| e.to_string())?;
            let schema_path = schema.unwrap_or_else(|| out.with_extension("schema.json"));
            let text = serde_json::to_string_pretty(&taxlike_schema()).map_err(|e| e.to_string())?;
            std::fs::write(&schema_path, text + "\n").map_err(|e| e.to_string())?;
            eprintln!("wrote {} rows to {} and schema to {}", n, out.display(), schema_path.display());
        }
        Command::Serve { config } => {
            let cfg = ServerConfig::from_json_file(&config).map_err(|e| e.to_string())?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            rt.block_on(dpvs_server::serve(cfg)).map_err(|e| e.to_string())?;
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
