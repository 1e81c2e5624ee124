//! `wctnas`: oracle training, architecture search, evaluation and
//! reporting from the command line.
//!
//! Every command resolves one [`config::RunConfig`] (defaults, then the
//! `--config` file, then flags) and writes it to
//! `<out>/<command>.config.json` before doing any work.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod report;
pub mod workspace;

use config::{parse_image_size, RunConfig, SyntheticSizes};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "wctnas",
    version,
    about = "Evolutionary search for WCT style-transfer decoders"
)]
pub struct Cli {
    #[command(flatten)]
    pub shared: Shared,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default)]
pub struct Shared {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// `N` or `HxW`; both must be multiples of 16.
    #[arg(long, global = true, value_parser = parse_image_size)]
    pub image_size: Option<[usize; 2]>,
    /// Use N seeded synthetic training images and N validation pairs
    /// instead of the data directories.
    #[arg(long, global = true)]
    pub synthetic: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train the supervisory oracle and cache its validation outputs.
    TrainOracle {
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Aging-evolution search; resumes an existing history.
    Search {
        #[arg(long)]
        population: Option<usize>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        tournament: Option<usize>,
        /// Candidate training steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Random-search baseline over uniform genomes.
    RandomSearch {
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Score a checkpoint (default: the oracle) on the validation pairs.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Stylize one content image with one style image.
    Stylize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        style: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Trajectories, figures and comparison tables from history files.
    Report {
        #[arg(required = true)]
        histories: Vec<PathBuf>,
        /// Oracle cache used for metrics.csv.
        #[arg(long)]
        oracle_dir: Option<PathBuf>,
    },
    /// Write synthetic PNG sets into the configured data directories.
    SynthData {
        #[arg(long)]
        count: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::TrainOracle { .. } => "train-oracle",
            Command::Search { .. } => "search",
            Command::RandomSearch { .. } => "random-search",
            Command::Eval { .. } => "eval",
            Command::Stylize { .. } => "stylize",
            Command::Report { .. } => "report",
            Command::SynthData { .. } => "synth-data",
        }
    }
}

/// Bad flags or an invalid configuration.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Defaults, then the config file, then flags.
pub fn resolve_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let s = &cli.shared;
    let mut cfg = match &s.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = s.seed {
        cfg.seed = v;
    }
    if let Some(v) = &s.out {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = s.workers {
        cfg.search.workers = v;
    }
    if let Some(v) = s.image_size {
        cfg.image_size = v;
    }
    if let Some(n) = s.synthetic {
        let seed = cfg.data.synthetic.map(|x| x.seed).unwrap_or(0);
        cfg.data.synthetic = Some(SyntheticSizes {
            train: n,
            pairs: n,
            seed,
        });
    }
    match &cli.command {
        Command::TrainOracle { steps: Some(v) } => cfg.oracle_train.steps = *v,
        Command::Search {
            population,
            budget,
            tournament,
            steps,
        } => {
            if let Some(v) = population {
                cfg.search.population = *v;
                // keep the default tournament valid for small populations
                if tournament.is_none() {
                    cfg.search.tournament = cfg.search.tournament.min(*v);
                }
            }
            if let Some(v) = budget {
                cfg.search.budget = *v;
            }
            if let Some(v) = tournament {
                cfg.search.tournament = *v;
            }
            if let Some(v) = steps {
                cfg.train.steps = *v;
            }
        }
        Command::RandomSearch { draws, steps } => {
            if let Some(v) = draws {
                cfg.random_draws = *v;
            }
            if let Some(v) = steps {
                cfg.train.steps = *v;
            }
        }
        Command::Report {
            oracle_dir: Some(d),
            ..
        } => cfg.oracle_dir = Some(d.clone()),
        _ => {}
    }
    cfg.resolve()
}

pub fn execute(cli: &Cli) -> anyhow::Result<()> {
    let cfg = resolve_config(cli).map_err(|e| UsageError(format!("{e:#}")))?;
    cfg.echo(cli.command.name())?;
    match &cli.command {
        Command::TrainOracle { .. } => commands::train_oracle(&cfg),
        Command::Search { .. } => commands::search(&cfg),
        Command::RandomSearch { .. } => commands::random_search(&cfg),
        Command::Eval { checkpoint } => commands::eval(&cfg, checkpoint.as_deref()),
        Command::Stylize {
            checkpoint,
            content,
            style,
            output,
        } => commands::stylize(&cfg, checkpoint, content, style, output),
        Command::Report { histories, .. } => report::report(&cfg, histories),
        Command::SynthData { count } => commands::synth_data(&cfg, *count),
    }
}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    let numerical = err.chain().any(|c| {
        c.downcast_ref::<nas_core::Error>()
            .is_some_and(nas_core::Error::is_numerical)
    });
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_DATA
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("wctnas").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_defaults() {
        let cli = parse(&[
            "search",
            "--seed",
            "9",
            "--workers",
            "2",
            "--population",
            "3",
            "--budget",
            "5",
            "--image-size",
            "16x32",
            "--synthetic",
            "4",
        ]);
        let cfg = resolve_config(&cli).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.search.seed, 9);
        assert_eq!(cfg.search.workers, 2);
        assert_eq!(cfg.search.population, 3);
        assert_eq!(cfg.search.tournament, 3);
        assert_eq!(cfg.search.budget, 5);
        assert_eq!(cfg.image_size, [16, 32]);
        assert_eq!(cfg.data.synthetic.unwrap().pairs, 4);
    }

    #[test]
    fn usage_errors_map_to_exit_one() {
        let cli = parse(&["search", "--budget", "2"]);
        let err = execute(&cli).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_USAGE);
        assert_eq!(run(["wctnas", "no-such-command"]), EXIT_USAGE);
    }

    #[test]
    fn numerical_errors_map_to_exit_three() {
        let e = anyhow::Error::from(nas_core::Error::Diverged { step: 4 }).context("training");
        assert_eq!(exit_code(&e), EXIT_NUMERICAL);
        let d = anyhow::Error::from(nas_core::Error::InvalidArgument("x".into()));
        assert_eq!(exit_code(&d), EXIT_DATA);
    }
}
