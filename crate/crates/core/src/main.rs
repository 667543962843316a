use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aircombat::evalcli::{self, BlueModel, EvalConfig, ModelKind, Scenario};
use aircombat::netlib::SampleMode;
use aircombat::training::{Checkpoint, CurriculumStage, MixedStrategy, RunConfig, Stage, Trainer};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "aircombat", version, about = "Hierarchical multi-agent air combat training and evaluation")]
struct Cli {
    /// Seed override for training and evaluation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parallel episode workers.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Run directory for checkpoints, metrics and reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run curriculum training iterations.
    Train {
        /// TOML run configuration; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Train only this stage (L1, L2, L3, L4 or commander).
        #[arg(long)]
        stage: Option<Stage>,
        /// Continue from the run directory's checkpoint.
        #[arg(long)]
        resume: bool,
        /// Number of iterations to run.
        #[arg(long)]
        iterations: Option<u64>,
    },
    /// Evaluate a checkpoint and print a results table.
    Eval(EvalArgs),
    /// Evaluate and write every trajectory as JSON lines.
    Export {
        #[command(flatten)]
        eval: EvalArgs,
        /// Trajectory output file.
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Summarize a metrics file.
    Report {
        /// Metrics file; defaults to the run directory's.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    /// Commanders over maneuver policies.
    Hierarchical,
    /// Full-observability baseline.
    Fc,
}

#[derive(Clone, Copy, ValueEnum)]
enum LowMode {
    Stochastic,
    Deterministic,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Checkpoint file; defaults to the run directory's.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Team sizes such as 3v3; defaults to the training sizes.
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long, default_value_t = 1_000)]
    episodes: usize,
    /// Red mix as attack,engage,defend weights.
    #[arg(long, default_value = "0.7,0.2,0.1")]
    mix: MixedStrategy,
    #[arg(long, value_enum, default_value = "hierarchical")]
    model: ModelArg,
    /// Sampling of the low-level policies.
    #[arg(long, value_enum, default_value = "stochastic")]
    low_mode: LowMode,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { ref config, stage, resume, iterations } => train(&cli, config.as_deref(), stage, resume, iterations),
        Command::Eval(ref args) => eval(&cli, args, None),
        Command::Export { eval: ref args, ref trajectories } => {
            let path = trajectories.clone().unwrap_or_else(|| cli.out.join("trajectories.jsonl"));
            eval(&cli, args, Some(&path))
        }
        Command::Report { ref metrics } => report(&cli, metrics.as_deref()),
    }
}

fn train(cli: &Cli, config: Option<&Path>, stage: Option<Stage>, resume: bool, iterations: Option<u64>) -> Result<()> {
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let ckpt_path = cli.out.join("checkpoint.bin");
    let metrics_path = cli.out.join("metrics.jsonl");
    let mut trainer = if resume {
        if config.is_some() {
            bail!("--config cannot be combined with --resume; the checkpoint carries its configuration");
        }
        let ckpt = Checkpoint::load(&ckpt_path).with_context(|| format!("loading {}", ckpt_path.display()))?;
        Trainer::from_checkpoint(ckpt)?
    } else {
        let mut cfg = match config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                RunConfig::from_toml(&text).with_context(|| format!("in {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        Trainer::new(cfg)?
    };
    if let Some(w) = cli.workers {
        if w == 0 {
            bail!("--workers must be >= 1");
        }
        trainer.config.workers = w;
    }
    let echo = trainer.config.to_toml();
    print!("{echo}");
    fs::write(cli.out.join("config.toml"), &echo)?;

    let metrics_file =
        if resume { OpenOptions::new().create(true).append(true).open(&metrics_path) } else { File::create(&metrics_path) }
            .with_context(|| format!("opening {}", metrics_path.display()))?;
    let mut metrics = BufWriter::new(metrics_file);

    let limit = iterations.or(trainer.config.iterations);
    let mut done = 0u64;
    while limit.is_none_or(|n| done < n) {
        if limit.is_none() && finished(&trainer, stage) {
            break;
        }
        for rec in trainer.iterate(stage)? {
            writeln!(metrics, "{}", serde_json::to_string(&rec)?)?;
            eprintln!(
                "iter {:>5} {:<10} {:<16} samples {:>9} step reward {:+.5}",
                rec.iteration,
                rec.stage.to_string(),
                rec.policy,
                rec.samples,
                rec.update.mean_step_reward
            );
        }
        metrics.flush()?;
        trainer.checkpoint().save(&ckpt_path)?;
        done += 1;
    }
    trainer.checkpoint().save(&ckpt_path)?;
    Ok(())
}

/// Budget of the pinned stage, or of the whole curriculum, consumed.
fn finished(trainer: &Trainer, pinned: Option<Stage>) -> bool {
    let target = pinned.unwrap_or(Stage::Commander);
    let budget = CurriculumStage::of(target, &trainer.config.curriculum).budget;
    trainer.cursor.stage == target && trainer.cursor.stage_samples >= budget
}

fn eval(cli: &Cli, args: &EvalArgs, export: Option<&Path>) -> Result<()> {
    let path = args.checkpoint.clone().unwrap_or_else(|| cli.out.join("checkpoint.bin"));
    let ckpt = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
    let run = &ckpt.config;
    let scenario = args.scenario.unwrap_or(Scenario { blue: run.env.n_blue, red: run.env.n_red });
    let cfg = EvalConfig {
        rewards: run.rewards,
        episodes: args.episodes,
        mix: args.mix,
        seed: cli.seed.unwrap_or(run.seed),
        workers: cli.workers.unwrap_or(run.workers).max(1),
        low_mode: match args.low_mode {
            LowMode::Stochastic => SampleMode::Stochastic,
            LowMode::Deterministic => SampleMode::Deterministic,
        },
        max_option_duration: run.curriculum.option_duration,
        ..EvalConfig::new(&run.env, scenario)
    };
    let blue = match args.model {
        ModelArg::Hierarchical => BlueModel::Hierarchical { bank: &ckpt.bank, kind: ModelKind::hierarchical(run.spo.surrogate) },
        ModelArg::Fc => {
            let slot = ckpt.bank.fc.as_ref().context("checkpoint has no FC policy (train with curriculum.train_fc = true)")?;
            BlueModel::Fc(evalcli::fc_baseline_wrapper(slot)?)
        }
    };
    let report = match export {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
            let r = evalcli::evaluate_into(blue, &ckpt.bank, &cfg, Some(&mut w))?;
            w.flush()?;
            r
        }
        None => evalcli::evaluate(blue, &ckpt.bank, &cfg)?,
    };
    print!("{}", evalcli::format_table(std::slice::from_ref(&report)));
    fs::create_dir_all(&cli.out)?;
    fs::write(cli.out.join("eval_report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    if let Some(p) = export {
        let again = evalcli::retabulate(BufReader::new(File::open(p)?))?;
        if again != report {
            bail!("re-tabulated export disagrees with the live report");
        }
    }
    Ok(())
}

fn report(cli: &Cli, metrics: Option<&Path>) -> Result<()> {
    let path = metrics.map(Path::to_path_buf).unwrap_or_else(|| cli.out.join("metrics.jsonl"));
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let out = evalcli::report(&text)?;
    fs::create_dir_all(&cli.out)?;
    fs::write(cli.out.join("summary.txt"), &out.summary)?;
    fs::write(cli.out.join("series.csv"), &out.series)?;
    print!("{}", out.summary);
    Ok(())
}
