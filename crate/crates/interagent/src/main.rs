use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use interagent::config::Config;
use interagent::formats::TrajectoryFile;
use interagent::pipeline;

#[derive(Parser, Debug)]
#[command(name = "interagent", version, about = "Text-conditioned two-humanoid diffusion control")]
struct Cli {
    /// Built-in defaults to start from: desk or full.
    #[arg(long, default_value = "desk")]
    profile: String,
    /// Flat `key = value` file applied over the profile.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Individual `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Single-threaded execution.
    #[arg(long)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Track procedural references with the scripted expert and write a dataset.
    Collect {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the diffusion model on a dataset.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Continue from the checkpoint and its optimizer state.
        #[arg(long)]
        resume: bool,
        /// Loss log (tab-separated); defaults to `<checkpoint>.loss.tsv`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Stop after this many steps of the current run.
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Closed-loop control of both agents from a text command.
    Rollout {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "text")]
        text: String,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value = "rollout.iads")]
        out: PathBuf,
    },
    /// Control agent 2 in response to a replayed agent 1.
    React {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        fixed: PathBuf,
        #[arg(long = "text")]
        text: String,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value = "react.iads")]
        out: PathBuf,
    },
    /// Physical plausibility metrics of a trajectory file.
    Eval { file: PathBuf },
}

fn config(cli: &Cli) -> Result<Config> {
    let mut cfg = Config::profile(&cli.profile)?;
    if let Some(p) = &cli.config {
        cfg.apply_file(p)?;
    }
    for o in &cli.overrides {
        let (k, v) = o.split_once('=').with_context(|| format!("override '{o}' is not KEY=VALUE"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = config(&cli)?;
    let out = io::stdout();
    let mut out = out.lock();
    match cli.command {
        Command::Collect { out: path } => {
            let path = path.unwrap_or_else(|| cfg.dataset.clone());
            let (file, summary) = pipeline::collect(&cfg, cli.deterministic)?;
            file.save(&path)?;
            writeln!(out, "{summary}")?;
            writeln!(out, "wrote {}", path.display())?;
        }
        Command::Train { dataset, checkpoint, resume, log, max_steps } => {
            let dataset = dataset.unwrap_or_else(|| cfg.dataset.clone());
            let checkpoint = checkpoint.unwrap_or_else(|| cfg.checkpoint.clone());
            let data = TrajectoryFile::load(&dataset, &cfg.body_spec())?;
            let log_path = log.unwrap_or_else(|| {
                let mut s = checkpoint.as_os_str().to_owned();
                s.push(".loss.tsv");
                s.into()
            });
            let file = if resume {
                File::options().append(true).create(true).open(&log_path)
            } else {
                File::create(&log_path)
            }
            .with_context(|| format!("opening {}", log_path.display()))?;
            let mut log = BufWriter::new(file);
            let summary = pipeline::train(&cfg, &data, &checkpoint, resume, max_steps, &mut log)?;
            log.flush()?;
            if let (Some(first), Some(last)) = (summary.initial(), summary.losses.last()) {
                writeln!(out, "steps = {}..{}", summary.resumed_from, last.step + 1)?;
                writeln!(out, "initial_loss = {first}\nfinal_loss = {}", last.loss)?;
            }
            writeln!(out, "wrote {} and {}", checkpoint.display(), log_path.display())?;
        }
        Command::Rollout { checkpoint, text, steps, out: path } => {
            let checkpoint = checkpoint.unwrap_or_else(|| cfg.checkpoint.clone());
            let file = pipeline::rollout(&cfg, &checkpoint, &text, steps.unwrap_or(cfg.rollout_steps))?;
            file.save(&path)?;
            write!(out, "{}", pipeline::eval(&file)?.to_text())?;
            writeln!(out, "sampler_calls = {}", file.meta("sampler_calls").unwrap_or("?"))?;
            writeln!(out, "wrote {}", path.display())?;
        }
        Command::React { checkpoint, fixed, text, steps, out: path } => {
            let checkpoint = checkpoint.unwrap_or_else(|| cfg.checkpoint.clone());
            let fixed = TrajectoryFile::load(&fixed, &cfg.body_spec())?;
            let file = pipeline::react(&cfg, &checkpoint, &fixed, &text, steps.unwrap_or(cfg.rollout_steps))?;
            file.save(&path)?;
            write!(out, "{}", pipeline::eval(&file)?.to_text())?;
            writeln!(out, "wrote {}", path.display())?;
        }
        Command::Eval { file } => {
            let data = TrajectoryFile::load(&file, &cfg.body_spec())?;
            write!(out, "{}", pipeline::eval(&data)?.to_text())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
