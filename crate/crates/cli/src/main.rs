use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use paretoprompt::campaign::{self, BackendKind, CampaignError, ErrorClass, ExperimentConfig, ExportFormat, Overrides};
use paretoprompt::eval::TaskDataset;

/// Evolutionary search over (model, prompt) pairs, minimizing error rate and
/// token usage.
#[derive(Debug, Parser)]
#[command(name = "paretoprompt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Backend {
    Simulated,
    Http,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run independent evolutions and write one result file per run.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        backend: Option<Backend>,
        /// Chat-completions endpoint for the http backend. The bearer token is
        /// read from PARETOPROMPT_API_KEY unless the config names another
        /// variable.
        #[arg(long)]
        url: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Suppress per-generation summaries.
        #[arg(long, short)]
        quiet: bool,
    },
    /// Merge the final fronts of all runs in a directory.
    Aggregate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a summary table of a global front.
    Report {
        #[arg(long)]
        front: PathBuf,
    },
    /// Write a global front as CSV or JSON to stdout or a file.
    Export {
        #[arg(long)]
        front: PathBuf,
        #[arg(long, value_enum)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a BIG-bench task file into a dataset file.
    Import {
        #[arg(long)]
        bigbench: PathBuf,
        #[arg(long)]
        task_id: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

const EXIT_CONFIG: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_BACKEND: u8 = 5;
const EXIT_DATA: u8 = 6;

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => EXIT_CONFIG,
        ErrorClass::Io => EXIT_IO,
        ErrorClass::Backend => EXIT_BACKEND,
        ErrorClass::Data => EXIT_DATA,
    }
}

fn write_out(path: &PathBuf, text: &str) -> Result<(), CampaignError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| CampaignError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| CampaignError::Io {
        path: path.clone(),
        source,
    })
}

fn execute(cli: Cli) -> Result<(), CampaignError> {
    match cli.command {
        Command::Run {
            config,
            runs,
            seed,
            backend,
            url,
            out,
            quiet,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.apply(&Overrides {
                runs,
                seed,
                backend: backend.map(|b| match b {
                    Backend::Simulated => BackendKind::Simulated,
                    Backend::Http => BackendKind::Http,
                }),
                url,
                out_dir: out,
            })?;
            let written = campaign::run_campaign(&cfg, |run, snap| {
                if !quiet {
                    println!("run {run:>3} {}", campaign::summarize_generation(snap));
                }
            })?;
            for p in written {
                println!("wrote {}", p.display());
            }
        }
        Command::Aggregate { input, out } => {
            let front = campaign::aggregate_dir(&input, &out)?;
            println!(
                "global front: {} members from {} runs -> {}",
                front.members.len(),
                front.run_ids.len(),
                out.display()
            );
        }
        Command::Report { front } => {
            let front = campaign::load_front(&front)?;
            print!("{}", campaign::report(&front)?);
        }
        Command::Export { front, format, out } => {
            let front = campaign::load_front(&front)?;
            let text = campaign::export(
                &front,
                match format {
                    Format::Csv => ExportFormat::Csv,
                    Format::Json => ExportFormat::Json,
                },
            );
            match out {
                Some(p) => write_out(&p, &text)?,
                None => print!("{text}"),
            }
        }
        Command::Import { bigbench, task_id, out } => {
            let text = std::fs::read_to_string(&bigbench).map_err(|source| CampaignError::Io {
                path: bigbench.clone(),
                source,
            })?;
            let ds = TaskDataset::from_bigbench_json(&text, task_id.as_deref())?;
            write_out(&out, &ds.to_json_string())?;
            println!("imported {} instances of `{}`", ds.len(), ds.task_id);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut shown = e.to_string();
            eprintln!("error: {shown}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                let text = s.to_string();
                if !shown.contains(&text) {
                    eprintln!("  caused by: {text}");
                    shown = text;
                }
                src = s.source();
            }
            ExitCode::from(exit_code(e.class()))
        }
    }
}
