use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use knobtune::optimizers::Method;
use knobtune::pipeline::{self, AdapterSettings, EnvConfig, RunConfig};
use knobtune::sampling::Strategy;
use knobtune::Error;

#[derive(Parser, Debug)]
#[command(name = "knobtune", version, about = "Black-box configuration tuning pipeline")]
struct Cli {
    /// Run configuration (JSON); command-line flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    env: Option<EnvKind>,
    /// Benchmark command for `--env external`.
    #[arg(long, global = true)]
    adapter_command: Option<String>,
    /// Seconds before an external evaluation is abandoned.
    #[arg(long, global = true)]
    adapter_timeout: Option<f64>,
    /// Simulator noise coefficient of variation.
    #[arg(long, global = true)]
    noise_cv: Option<f64>,
    /// Parameter manifest (the bundled one when omitted).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Parameter range factor.
    #[arg(long, global = true)]
    prf: Option<f64>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum EnvKind {
    Sim,
    External,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Lhs,
    SymmetricLhs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a symmetric LHS + random-subset design and evaluate it.
    Sample {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        rss: Option<usize>,
    },
    /// Rank parameters with a random forest and write a reduced manifest.
    Select {
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        outcomes: PathBuf,
        #[arg(long)]
        coverage: Option<f64>,
        /// Keep at most this many of the covering parameters.
        #[arg(long)]
        top: Option<usize>,
    },
    /// Run one optimizer for several repetitions.
    Tune {
        #[arg(long)]
        optimizer: Option<Method>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
        /// Continue runs from their checkpoints.
        #[arg(long)]
        resume: bool,
    },
    /// Re-evaluate best configurations.
    EvaluateBest {
        #[arg(required = true)]
        best: Vec<PathBuf>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Compare measurement tables of several methods.
    Compare {
        #[arg(required = true)]
        tables: Vec<PathBuf>,
        /// Directory with run logs, for the max-trace CSV.
        #[arg(long)]
        runs: Option<PathBuf>,
    },
    /// Share of valid configurations per range factor and subset size.
    Validity {
        #[arg(long, value_delimiter = ',', default_values_t = vec![2.0, 10.0, 100.0])]
        prfs: Vec<f64>,
        /// Random subset sizes; 0 varies every parameter.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0])]
        rss: Vec<usize>,
        #[arg(long, value_enum, default_value_t = StrategyArg::Lhs)]
        strategy: StrategyArg,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
}

fn build_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(m) = &cli.manifest {
        cfg.manifest = Some(m.clone());
    }
    if let Some(p) = cli.prf {
        cfg.prf = p;
    }
    match cli.env {
        Some(EnvKind::External) => {
            let command = cli.adapter_command.clone().or_else(|| match &cfg.env {
                EnvConfig::External(a) => Some(a.command.clone()),
                EnvConfig::Simulator(_) => None,
            });
            let command = command
                .ok_or_else(|| Error::InvalidArgument("--env external needs --adapter-command".into()))?;
            let (timeout_secs, workdir) = match &cfg.env {
                EnvConfig::External(a) => (a.timeout_secs, a.workdir.clone()),
                EnvConfig::Simulator(_) => (600.0, None),
            };
            cfg.env = EnvConfig::External(AdapterSettings {
                command,
                timeout_secs,
                workdir,
            });
        }
        Some(EnvKind::Sim) => {
            if !matches!(cfg.env, EnvConfig::Simulator(_)) {
                cfg.env = EnvConfig::default();
            }
        }
        None => {}
    }
    match &mut cfg.env {
        EnvConfig::External(a) => {
            if let Some(c) = &cli.adapter_command {
                a.command = c.clone();
            }
            if let Some(t) = cli.adapter_timeout {
                a.timeout_secs = t;
            }
        }
        EnvConfig::Simulator(s) => {
            if let Some(n) = cli.noise_cv {
                s.noise_cv = n;
            }
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = build_config(&cli)?;
    match cli.command {
        Command::Sample { n, rss } => {
            if let Some(n) = n {
                cfg.sample_count = n;
            }
            if let Some(r) = rss {
                cfg.rss = r;
            }
            let s = pipeline::cmd_sample(&cfg)?;
            println!(
                "sampled {} configurations, {} valid ({:.1}%)",
                s.n,
                s.valid,
                100.0 * s.validity_rate
            );
            println!("design: {}\noutcomes: {}", s.design.display(), s.outcomes.display());
        }
        Command::Select {
            design,
            outcomes,
            coverage,
            top,
        } => {
            if let Some(c) = coverage {
                cfg.coverage = c;
            }
            if top.is_some() {
                cfg.top = top;
            }
            let s = pipeline::cmd_select(&cfg, &design, &outcomes)?;
            println!("selected {} parameters: {}", s.selected.len(), s.selected.join(", "));
            println!("ranking: {}\nmanifest: {}", s.ranking.display(), s.manifest.display());
        }
        Command::Tune {
            optimizer,
            steps,
            repetitions,
            checkpoint_every,
            resume,
        } => {
            if let Some(o) = optimizer {
                cfg.optimizer = o;
            }
            if let Some(s) = steps {
                cfg.steps = s;
            }
            if let Some(r) = repetitions {
                cfg.repetitions = r;
            }
            if let Some(c) = checkpoint_every {
                cfg.checkpoint_every = c;
            }
            let s = pipeline::cmd_tune(&cfg, resume)?;
            for r in &s.runs {
                println!(
                    "{}-{}: best {:.3} (default {:.3}, {:+.1}%) -> {}",
                    s.method,
                    r.repetition,
                    r.best_throughput,
                    r.default_throughput,
                    (r.best_throughput / r.default_throughput - 1.0) * 100.0,
                    r.best.display()
                );
            }
            println!("evaluations: {}", s.total_evaluations());
        }
        Command::EvaluateBest { best, repeats } => {
            if let Some(r) = repeats {
                cfg.repeats = r;
            }
            for path in pipeline::cmd_evaluate_best(&cfg, &best)? {
                println!("{}", path.display());
            }
        }
        Command::Compare { tables, runs } => {
            let s = pipeline::cmd_compare(&cfg, &tables, runs.as_deref())?;
            for m in &s.methods {
                println!(
                    "{:<7} n={:<3} mean {:>9.3}  sd {:>7.3}  improvement {:+.1}%{}",
                    m.method.to_string(),
                    m.n,
                    m.mean,
                    m.sd,
                    m.improvement_pct,
                    if m.invalid > 0 { format!("  ({} invalid)", m.invalid) } else { String::new() }
                );
            }
            for t in &s.tests {
                println!("{} vs {}: t = {:.3}, df = {}, p = {:.4}", t.a, t.b, t.t, t.df, t.p);
            }
        }
        Command::Validity {
            prfs,
            rss,
            strategy,
            n,
            seeds,
        } => {
            let strategy = match strategy {
                StrategyArg::Lhs => Strategy::Lhs,
                StrategyArg::SymmetricLhs => Strategy::SymmetricLhs,
            };
            let subsets: Vec<Option<usize>> = rss.iter().map(|&r| (r > 0).then_some(r)).collect();
            let rows = pipeline::cmd_validity(&cfg, &prfs, &subsets, strategy, n, seeds)?;
            for &prf in &prfs {
                for &r in &rss {
                    let rates: Vec<f64> = rows
                        .iter()
                        .filter(|row| row.prf == prf && row.rss == r)
                        .map(|row| row.rate)
                        .collect();
                    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
                    let label = if r == 0 { "all".to_string() } else { r.to_string() };
                    println!("prf {prf:>6}  rss {label:>4}  valid {:>5.1}%", 100.0 * mean);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
