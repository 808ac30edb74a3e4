use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nfa_core::experiment::{preset, run, run_suite, ExperimentConfig, RunOutput, ScaleOverrides, PRESETS, SEED_ENV};

#[derive(Parser)]
#[command(name = "nfa-lab", version, about = "Feature-alignment experiments on small MLPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset or a config file and write its artifacts.
    Run(RunArgs),
    /// List built-in presets.
    ListPresets,
    /// Parse and check a config file without running it.
    Validate { file: PathBuf },
    /// Run self-check suites; exits nonzero if any check fails.
    Oracle {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<String>,
    /// JSON or TOML config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Size overrides such as `n=256,k=256,d=256`.
    #[arg(long)]
    scale: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cmd: Command) -> nfa_core::Result<ExitCode> {
    match cmd {
        Command::ListPresets => {
            for (name, about) in PRESETS {
                println!("{name:<6} {about}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { file } => {
            let cfg = ExperimentConfig::from_path(&file)?;
            cfg.validate()?;
            println!("{}: ok ({}, hash {})", file.display(), cfg.name, &cfg.hash()[..12]);
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle { suite, seed } => {
            let results = run_suite(&suite, seed)?;
            let mut failed = 0;
            for r in &results {
                let tag = if r.passed { "PASS" } else { "FAIL" };
                failed += usize::from(!r.passed);
                println!("{tag} {:<10} {:<36} {:.3e} (tol {:.1e}) {}", r.suite, r.name, r.value, r.tolerance, r.detail);
            }
            println!("{} checks, {failed} failed", results.len());
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Run(args) => run_cmd(args),
    }
}

fn run_cmd(args: RunArgs) -> nfa_core::Result<ExitCode> {
    if let Some(t) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| nfa_core::Error::Config(format!("thread pool: {e}")))?;
    }
    let mut configs = match (&args.preset, &args.config) {
        (Some(p), _) => preset(p)?,
        (None, Some(f)) => vec![ExperimentConfig::from_path(f)?],
        (None, None) => unreachable!("clap requires one of --preset/--config"),
    };
    let scale = args.scale.as_deref().map(ScaleOverrides::parse).transpose()?;
    for c in &mut configs {
        if let Some(s) = &scale {
            c.apply_scale(s);
        }
        c.apply_seed_env()?;
        c.validate()?;
    }
    if std::env::var_os(SEED_ENV).is_some() {
        eprintln!("{SEED_ENV} set: using seeds {:?}", configs[0].seeds);
    }
    let several = configs.len() > 1;
    for c in &configs {
        let dir = if several { args.out.join(&c.name) } else { args.out.clone() };
        let start = Instant::now();
        let report = run(c, &dir)?;
        println!("{} -> {} ({:.1}s, {} files)", c.name, dir.display(), start.elapsed().as_secs_f64(), report.files.len());
        summarize(&report.output);
    }
    Ok(ExitCode::SUCCESS)
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |x| format!("{x:.4}"))
}

fn summarize(output: &RunOutput) {
    match output {
        RunOutput::Train(cells) => {
            for c in cells {
                let a = c.final_alignment(0);
                let loss = c.log.last(0).map(|r| r.train_loss);
                let note = c.error.as_deref().map(|e| format!("  [{e}]")).unwrap_or_default();
                println!(
                    "  {:<24} uc {} c {} loss {}{note}",
                    c.stem(),
                    fmt(a.and_then(|a| a.uc_nfa)),
                    fmt(a.and_then(|a| a.c_nfa)),
                    loss.map_or_else(|| "nan".into(), |v| format!("{v:.3e}")),
                );
            }
        }
        RunOutput::Balance(rows) => {
            for r in rows {
                println!("  gamma {:.3} seed {} predicted {} observed {}", r.gamma, r.seed, fmt(r.predicted), fmt(r.observed));
            }
        }
        RunOutput::FirstOrder(rows) => {
            for r in rows {
                println!("  {:?} alpha {} seed {} predicted {} observed {}", r.task, r.alpha, r.seed, fmt(r.predicted), fmt(r.observed));
            }
        }
    }
}
