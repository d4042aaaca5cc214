use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qbarrier_cli::{
    bench, bundled_corpus, cmd_sample, cmd_synth, cmd_verify, CliError, Overrides, Suite,
};

#[derive(Parser)]
#[command(
    name = "qbarrier",
    version,
    about = "Barrier certificates for quantum circuits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Overrides the job seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Solver command; `{file}` and `{timeout}` are substituted.
    #[arg(long)]
    solver_cmd: Option<String>,
    /// Seconds per solver query.
    #[arg(long)]
    timeout: Option<f64>,
    /// Concurrent solver queries.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            solver_cmd: self.solver_cmd.clone(),
            timeout: self.timeout,
            jobs: self.jobs,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize and verify a certificate for a job.
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default `qbarrier-out/<name>`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Verify a certificate (or the certificate in a run report).
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        certificate: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a benchmark suite over the corpus.
    Bench {
        #[arg(long)]
        suite: Suite,
        #[arg(long, default_value_t = 10)]
        repetitions: usize,
        /// Directory of `.cfg` jobs (default: the bundled corpus).
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "qbarrier-bench")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write sampled states of a region as CSV.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value = "init")]
        region: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Synth {
            config,
            out,
            common,
        } => {
            let r = cmd_synth(&config, &common.overrides(), out.as_deref())?;
            print!("{}", r.summary());
            Ok(r.exit_code())
        }
        Command::Verify {
            config,
            certificate,
            out,
            common,
        } => {
            let r = cmd_verify(&config, &certificate, &common.overrides(), out.as_deref())?;
            println!("{}: {} ({:.3} s)", r.job, r.verdict, r.seconds);
            for c in &r.conditions {
                println!("  {:<10} {}", c.condition, c.verdict);
            }
            Ok(r.exit_code())
        }
        Command::Bench {
            suite,
            repetitions,
            corpus,
            out,
            common,
        } => {
            let corpus = corpus.unwrap_or_else(bundled_corpus);
            let r = bench::cmd_bench(&corpus, suite, repetitions, &common.overrides(), &out)?;
            print!("{}", r.table);
            println!("per-run results: {}", r.csv.display());
            Ok(0)
        }
        Command::Sample {
            config,
            count,
            region,
            out,
            common,
        } => {
            let n = cmd_sample(&config, &region, count, &common.overrides(), &out)?;
            println!("wrote {n} states to {}", out.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("qbarrier: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
