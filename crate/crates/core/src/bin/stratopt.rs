use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stratopt::commands::{filter_manifest, render_report, report};
use stratopt::config::{Mode, Overrides, Preset, RunConfig};
use stratopt::guiding_agent::TerminatedBy;
use stratopt::session::{self, SessionError};

#[derive(Parser)]
#[command(name = "stratopt", version, about = "Multi-level program optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize one C program.
    Optimize(RunArgs),
    /// Split the budget across three single-level sessions and keep the best.
    Portfolio(RunArgs),
    /// Summarize one or more run directories.
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        /// Write the structured report here.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Write speedup histogram buckets here.
        #[arg(long)]
        histogram: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        bucket_width: f64,
    },
    /// List benchmark problems whose solutions vary enough in runtime.
    Filter {
        /// CSV with columns problem_id,program_id,runtime.
        manifest: PathBuf,
        #[arg(long, default_value_t = 10)]
        min_programs: usize,
        #[arg(long, default_value_t = 0.10)]
        threshold: f64,
    },
    /// Check a config file and print it with defaults filled in.
    ValidateConfig { config: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    program: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(short = 'b', long)]
    budget: Option<u64>,
    #[arg(short = 'n', long)]
    samples: Option<u32>,
    #[arg(short = 'k', long)]
    refine: Option<u32>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Seconds.
    #[arg(long)]
    wall_clock: Option<f64>,
    #[arg(long)]
    preset: Option<Preset>,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, SessionError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).map_err(|e| SessionError::Config(e.to_string()))?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            budget: self.budget,
            samples: self.samples,
            refine: self.refine,
            mode: self.mode,
            model: self.model.clone(),
            run_dir: self.run_dir.clone(),
            wall_clock: self.wall_clock,
            preset: self.preset,
        });
        Ok(cfg)
    }

    fn program_text(&self) -> Result<String, SessionError> {
        std::fs::read_to_string(&self.program)
            .map_err(|e| SessionError::Config(format!("{}: {e}", self.program.display())))
    }
}

fn fail(e: &SessionError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn optimize(args: &RunArgs) -> ExitCode {
    let run = || -> Result<_, SessionError> {
        let cfg = args.config()?;
        let text = args.program_text()?;
        session::optimize(&text, &cfg)
    };
    match run() {
        Ok(r) => {
            println!(
                "speedup {:.3} (t_correct {:.2}), from {} program, {} of {} budget used, ended by {}",
                r.speedup,
                r.report.t_correct,
                r.final_from_level.name,
                r.ledger.spent(),
                r.ledger.total(),
                r.terminated_by.as_str()
            );
            if r.terminated_by == TerminatedBy::ProviderAbort {
                ExitCode::from(5)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => fail(&e),
    }
}

fn portfolio(args: &RunArgs) -> ExitCode {
    let run = || -> Result<_, SessionError> {
        let cfg = args.config()?;
        let text = args.program_text()?;
        session::portfolio(&text, &cfg)
    };
    match run() {
        Ok(p) => {
            for s in &p.sessions {
                match (s.skipped, s.speedup) {
                    (true, _) => println!("{:<9} budget 0, skipped", s.level),
                    (false, Some(sp)) => println!("{:<9} budget {}, speedup {:.3}", s.level, s.budget, sp),
                    (false, None) => println!("{:<9} budget {}, no result", s.level, s.budget),
                }
            }
            println!("selected {} with speedup {:.3}", p.selected, p.speedup);
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Optimize(a) => optimize(&a),
        Command::Portfolio(a) => portfolio(&a),
        Command::Report {
            run_dirs,
            json,
            histogram,
            bucket_width,
        } => {
            let doc = report(&run_dirs, bucket_width);
            print!("{}", render_report(&doc));
            let write = |path: &PathBuf, value: serde_json::Value| {
                std::fs::write(path, serde_json::to_string_pretty(&value).unwrap())
                    .map_err(|e| eprintln!("error: {}: {e}", path.display()))
            };
            if let Some(p) = &json {
                if write(p, serde_json::to_value(&doc).unwrap()).is_err() {
                    return ExitCode::FAILURE;
                }
            }
            if let Some(p) = &histogram {
                if write(p, serde_json::to_value(&doc.histograms).unwrap()).is_err() {
                    return ExitCode::FAILURE;
                }
            }
            ExitCode::SUCCESS
        }
        Command::Filter {
            manifest,
            min_programs,
            threshold,
        } => {
            let text = match std::fs::read_to_string(&manifest) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {}: {e}", manifest.display());
                    return ExitCode::from(2);
                }
            };
            let r = filter_manifest(&text, min_programs, threshold);
            for id in &r.eligible {
                println!("{id}");
            }
            eprintln!("{}", r.summary());
            ExitCode::SUCCESS
        }
        Command::ValidateConfig { config } => {
            match RunConfig::load(&config).and_then(|c| c.validate().map(|_| c)) {
                Ok(c) => {
                    print!("{}", c.to_toml());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
