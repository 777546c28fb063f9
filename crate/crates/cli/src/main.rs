use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

use causalcat::pipeline::{
    format_prediction, parse_override, run_compare, run_evaluate, run_predict, run_stats,
    run_train, CompareMode, NamedFlags, PipelineError, RunConfig, TrainComposition,
};
use clap::{Args, Parser, Subcommand};

/// Six-way causal categorization of mental-health posts.
///
/// Every config key can also be set as `--dotted.key VALUE` (or
/// `--set dotted.key=VALUE`). Precedence: named flags > dotted keys > config
/// file > defaults.
#[derive(Debug, Parser)]
#[command(name = "causalcat", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Run seed for the dev split, balancing and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Config override `KEY=VALUE` with a dotted key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-class word-length tables for every configured split.
    Stats,
    /// Train a model and write its checkpoint and run manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled test file.
    Evaluate(EvaluateArgs),
    /// Compare evaluation reports and test for significant differences.
    Compare(CompareArgs),
    /// Classify posts, one per line.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// `logreg`, `cnn_lstm`, or an encoder backend id.
    #[arg(long)]
    model: Option<String>,
    /// Encoder checkpoint directory or cache reference.
    #[arg(long)]
    checkpoint: Option<String>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_parser = parse_composition)]
    train_composition: Option<TrainComposition>,
    /// Oversampling spec, e.g. `c1,c2,c3:120` or `none`.
    #[arg(long)]
    balance: Option<String>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Trained checkpoint directory.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled test file; defaults to `data.sdcnl_test`.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Report groups: each argument is one model's report files, comma-separated.
    #[arg(required = true, num_args = 2..)]
    groups: Vec<String>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<CompareMode>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Trained checkpoint directory.
    #[arg(long)]
    checkpoint: PathBuf,
    /// One post per line; stdin when absent.
    #[arg(long)]
    input: Option<PathBuf>,
}

fn parse_composition(s: &str) -> Result<TrainComposition, String> {
    s.parse()
        .map_err(|e: causalcat::pipeline::ConfigError| e.to_string())
}

fn parse_mode(s: &str) -> Result<CompareMode, String> {
    s.parse()
        .map_err(|e: causalcat::pipeline::ConfigError| e.to_string())
}

/// Rewrites `--a.b VALUE` and `--a.b=VALUE` into `--set a.b=VALUE`.
fn expand_dotted(args: Vec<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let dotted = arg
            .strip_prefix("--")
            .filter(|rest| rest.split('=').next().is_some_and(|k| k.contains('.')))
            .map(str::to_string);
        match dotted {
            Some(rest) if rest.contains('=') => out.extend(["--set".to_string(), rest]),
            Some(key) => {
                let value = it.next().unwrap_or_default();
                out.extend(["--set".to_string(), format!("{key}={value}")]);
            }
            None => out.push(arg),
        }
    }
    out
}

fn resolve(cli: &Cli, extra: Vec<String>, flags: NamedFlags) -> Result<RunConfig, PipelineError> {
    let overrides = cli
        .overrides
        .iter()
        .chain(&extra)
        .map(|o| parse_override(o))
        .collect::<Result<Vec<_>, _>>()?;
    let flags = NamedFlags {
        out: cli.out.clone(),
        seed: cli.seed,
        ..flags
    };
    Ok(RunConfig::resolve(
        cli.config.as_deref(),
        &overrides,
        &flags,
    )?)
}

fn read_input(path: Option<&PathBuf>) -> Result<String, PipelineError> {
    match path {
        Some(p) => std::fs::read_to_string(p).map_err(|source| PipelineError::Io {
            path: p.display().to_string(),
            source,
        }),
        None => {
            let mut s = String::new();
            std::io::stdin()
                .read_to_string(&mut s)
                .map_err(|source| PipelineError::Io {
                    path: "<stdin>".into(),
                    source,
                })?;
            Ok(s)
        }
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match &cli.command {
        Command::Stats => {
            let cfg = resolve(&cli, Vec::new(), NamedFlags::default())?;
            let outcome = run_stats(&cfg)?;
            for (split, table) in &outcome.tables {
                println!("{split}\n{table}");
            }
            log::info!(
                "wrote {} files under {}",
                outcome.files.len(),
                cfg.out.display()
            );
        }
        Command::Train(a) => {
            let flags = NamedFlags {
                model: a.model.clone(),
                checkpoint: a.checkpoint.clone(),
                max_len: a.max_len,
                learning_rate: a.lr,
                batch_size: a.batch,
                epochs: a.epochs,
                train_composition: a.train_composition,
                balance: a.balance.clone(),
                ..Default::default()
            };
            let cfg = resolve(&cli, Vec::new(), flags)?;
            let outcome = run_train(&cfg)?;
            let h = outcome.classifier.history();
            println!(
                "trained {} for {} epoch(s); best epoch {} with dev accuracy {:.4}",
                outcome.classifier.kind(),
                h.epochs.len().saturating_sub(1),
                h.best_epoch,
                h.best_dev_accuracy()
            );
            println!("checkpoint: {}", outcome.checkpoint.display());
        }
        Command::Evaluate(a) => {
            let cfg = resolve(&cli, Vec::new(), NamedFlags::default())?;
            let outcome = run_evaluate(&cfg, &a.checkpoint, a.input.as_deref())?;
            print!("{}", outcome.text);
        }
        Command::Compare(a) => {
            let mut extra = Vec::new();
            if let Some(mode) = a.mode {
                let name = match mode {
                    CompareMode::Auto => "auto",
                    CompareMode::Paired => "paired",
                    CompareMode::Unpaired => "unpaired",
                    CompareMode::Bootstrap => "bootstrap",
                };
                extra.push(format!("eval.mode={name}"));
            }
            if let Some(alpha) = a.alpha {
                extra.push(format!("eval.alpha={alpha}"));
            }
            let cfg = resolve(&cli, extra, NamedFlags::default())?;
            let groups: Vec<Vec<PathBuf>> = a
                .groups
                .iter()
                .map(|g| {
                    g.split(',')
                        .filter(|p| !p.is_empty())
                        .map(PathBuf::from)
                        .collect()
                })
                .collect();
            let outcome = run_compare(&cfg, &groups)?;
            print!("{}", outcome.text);
        }
        Command::Predict(a) => {
            let input = read_input(a.input.as_ref())?;
            for p in run_predict(&a.checkpoint, &input)? {
                println!("{}", format_prediction(&p));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse_from(expand_dotted(std::env::args().collect())) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn dotted_flags_become_overrides() {
        assert_eq!(
            expand_dotted(s(&[
                "causalcat",
                "--logreg.epochs",
                "3",
                "--data.dev_fraction=0.2",
                "--lr",
                "0.1"
            ])),
            s(&[
                "causalcat",
                "--set",
                "logreg.epochs=3",
                "--set",
                "data.dev_fraction=0.2",
                "--lr",
                "0.1"
            ])
        );
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
