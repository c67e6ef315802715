use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hieralign::alignment::parse_grid;
use hieralign::dataio::Frame;
use hieralign::pipeline::{cmd_report, cmd_run, cmd_sweep, cmd_synth, PipelineConfig, SyntheticSpec};
use hieralign::{Error, Result};

#[derive(Parser)]
#[command(name = "hieralign", version, about = "Hierarchically aligned demand forecasting")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train, align, ensemble, score and write a report.
    Run(RunArgs),
    /// Score every λ of a grid against held-out actuals.
    Sweep(RunArgs),
    /// Render the tables of one run, or several side by side.
    Report {
        dir: PathBuf,
        /// Further run directories shown as extra columns.
        #[arg(long, num_args = 1..)]
        compare: Vec<PathBuf>,
    },
    /// Write a synthetic panel in M5 file format.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Take the generator settings from a config's [synthetic] table.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        items: Option<usize>,
        #[arg(long)]
        stores: Option<usize>,
        #[arg(long)]
        days: Option<usize>,
        #[arg(long)]
        intermittency: Option<f64>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// validation or evaluation
    #[arg(long)]
    frame: Option<String>,
    /// `lo:hi:step` or a comma-separated list.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut c = PipelineConfig::load(&self.config)?;
        if let Some(f) = &self.frame {
            c.frame = f.parse::<Frame>()?;
        }
        if let Some(g) = &self.grid {
            c.alignment.grid = parse_grid(g)?;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(o) = &self.out {
            c.out = Some(o.clone());
        }
        Ok(c)
    }
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        hieralign::set_threads(n)?;
    }
    match cli.command {
        Command::Run(args) => {
            let report = cmd_run(&args.config()?)?;
            println!("lambda* = {}", report.lambda_star);
            println!("neighborhood = {:?}", report.neighborhood);
            println!("WRMSSE = {:.6}", report.wrmsse);
        }
        Command::Sweep(args) => {
            let rows = cmd_sweep(&args.config()?, None)?;
            println!("lambda,alignment_rmse,wrmsse");
            for r in rows {
                let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                println!("{},{},{}", r.lambda, fmt(r.alignment_rmse), fmt(r.wrmsse_total));
            }
        }
        Command::Report { dir, compare } => {
            print!("{}", cmd_report(&dir, &compare)?);
        }
        Command::Synth {
            out,
            seed,
            config,
            items,
            stores,
            days,
            intermittency,
        } => {
            let mut spec = match config {
                Some(p) => PipelineConfig::load(&p)?.synthetic.unwrap_or_default(),
                None => SyntheticSpec::default(),
            };
            spec.items = items.unwrap_or(spec.items);
            spec.stores = stores.unwrap_or(spec.stores);
            spec.days = days.unwrap_or(spec.days);
            spec.intermittency = intermittency.unwrap_or(spec.intermittency);
            let dir = cmd_synth(&spec, seed, &out)?;
            println!("wrote {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
