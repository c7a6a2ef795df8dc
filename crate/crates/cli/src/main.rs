use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use polidist::checkpoint::Checkpoint;
use polidist::config::RunConfig;
use polidist::diagnostics::{
    diversity_report, export_curves_svg, export_heatmap, transfer_panels, visitation_heatmaps, PolicyMode,
};
use polidist::env::layouts::{canonical, BUILTIN_IDS, BUILTIN_SIZE};
use polidist::env::{EnvConfig, GridSpec, MultiRoomEnv};
use polidist::io::atomic_write;
use polidist::rng::stream;
use polidist::trainers::Trainer;
use polidist::transfer::{run_transfer, summary_table, write_run_artifacts, RunOptions, TransferError};
use polidist::verify::{run_suite, Suite};

const EXIT_VERIFY: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Error plus the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait ExitContext<T> {
    fn usage(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitContext<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_USAGE,
            error: e.into(),
        })
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_RUNTIME,
            error: e.into(),
        })
    }
}

#[derive(Parser)]
#[command(
    name = "polidist",
    version,
    about = "Train, transfer and inspect latent-conditioned policy distributions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write curve.csv, log.jsonl and checkpoint.json
    /// into the config's output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override a config field, e.g. `train.total_updates=10`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run (or resume) the transfer experiment in the config's transfer
    /// section and print the per-arm summary.
    Transfer {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Cells trained in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Do not train source models; use existing checkpoints only.
        #[arg(long)]
        skip_source: bool,
    },
    /// Per-latent state-visitation heatmaps (CSV and PPM) for a gridworld.
    Heatmap {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Built-in grid id; multi-room ids are rejected.
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = BUILTIN_SIZE)]
        size: usize,
        #[arg(long)]
        max_steps: Option<usize>,
        /// Custom layout file instead of a built-in id.
        #[arg(long)]
        layout_file: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        n_z: usize,
        #[arg(long, default_value_t = 10)]
        rollouts: usize,
        #[arg(long, value_enum, default_value_t = Mode::Sampled)]
        mode: Mode,
        #[arg(long, default_value_t = 8)]
        scale: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// One SVG of learning curves per (target, retrain algorithm) panel of
    /// a transfer directory.
    Curves {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a built-in correctness oracle and print its JSON report.
    Verify {
        #[arg(value_parser = parse_suite)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Built-in gridworld layouts.
    Layouts {
        #[command(subcommand)]
        action: LayoutsAction,
    },
}

#[derive(Subcommand)]
enum LayoutsAction {
    /// Write every built-in layout as `<id>.txt`.
    Export {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = BUILTIN_SIZE)]
        size: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sampled,
    Greedy,
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    Suite::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Suite::ALL.iter().map(|s| s.as_str()).collect();
        format!("unknown suite `{s}` (expected one of {})", names.join(", "))
    })
}

fn seed_or_env(seed: Option<u64>) -> Result<u64, Failure> {
    if let Some(s) = seed {
        return Ok(s);
    }
    match std::env::var(polidist::config::SEED_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| anyhow!("{}=`{v}` is not an unsigned integer", polidist::config::SEED_VAR))
            .usage(),
        Err(_) => Ok(0),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    atomic_write(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .runtime()
}

fn cmd_train(config: &Path, overrides: &[String]) -> Result<(), Failure> {
    let cfg = RunConfig::load(config, overrides).usage()?;
    let seed = cfg.resolve_seed().usage()?;
    let env = cfg.build_env().usage()?;
    let (obs_dim, actions) = cfg.env_dims().usage()?;
    let base = cfg.model.for_env(obs_dim, actions);
    let mut trainer = Trainer::new(&env, cfg.train.clone(), &base, seed).runtime()?;
    let records = trainer.run(|_, _| Ok(())).runtime()?;
    let last = records.last().map_or(f64::NAN, |r| r.mean_cumulative_reward);
    write_run_artifacts(&cfg.output_dir, cfg.env.id(), &cfg.train, seed, trainer.model, &records).runtime()?;
    println!(
        "trained {} on {} for {} updates (seed {seed}); final mean return {last:.4}; artifacts in {}",
        cfg.train.algorithm,
        cfg.env.id(),
        records.len(),
        cfg.output_dir.display()
    );
    Ok(())
}

fn cmd_transfer(config: &Path, overrides: &[String], jobs: usize, skip_source: bool) -> Result<(), Failure> {
    let cfg = RunConfig::load(config, overrides).usage()?;
    let seed = cfg.resolve_seed().usage()?;
    let plan = cfg.transfer_plan(seed).usage()?;
    let opts = RunOptions {
        jobs: jobs.max(1),
        skip_source,
        max_cells: None,
    };
    let report = match run_transfer(&plan, &cfg.output_dir, &opts) {
        Ok(r) => r,
        Err(e @ (TransferError::Plan(_) | TransferError::Manifest(_))) => return Err(e).usage(),
        Err(e) => return Err(e).runtime(),
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if report.executed.is_empty() && report.all_complete() {
        println!("all arms complete");
    }
    if let Some(rows) = &report.summary {
        print!("{}", summary_table(rows));
    }
    if !report.failed.is_empty() {
        for (cell, err) in &report.failed {
            eprintln!("failed: {cell}: {err}");
        }
        return Err(anyhow!(
            "{} of {} cells failed",
            report.failed.len(),
            plan.cells().len()
        ))
        .runtime();
    }
    if report.summary.is_none() {
        println!("{} cells run, experiment incomplete", report.executed.len());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_heatmap(
    checkpoint: &Path,
    env: &str,
    size: usize,
    max_steps: Option<usize>,
    layout_file: Option<PathBuf>,
    n_z: usize,
    rollouts: usize,
    mode: Mode,
    scale: usize,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), Failure> {
    if layout_file.is_none() && MultiRoomEnv::parse_id(env).is_some() {
        return Err(anyhow!(
            "heatmaps need a fully observable gridworld; `{env}` is a multi-room task whose layout and \
             position indexing change between episodes"
        ))
        .usage();
    }
    let env_cfg = EnvConfig::Grid {
        id: env.to_string(),
        size,
        max_steps,
        layout_file,
    };
    let built = env_cfg.build().usage()?;
    let spec: &GridSpec = built.as_grid().ok_or_else(|| anyhow!("not a grid env")).usage()?;
    let ck = Checkpoint::load(checkpoint).usage()?;
    let seed = seed_or_env(seed)?;
    let mode = match mode {
        Mode::Sampled => PolicyMode::Sampled,
        Mode::Greedy => PolicyMode::Greedy,
    };
    let maps = visitation_heatmaps(spec, &ck.model, n_z, rollouts, mode, &mut stream(seed, "heatmap")).usage()?;
    for (i, h) in maps.iter().enumerate() {
        export_heatmap(h, spec, out, i, scale).runtime()?;
    }
    let diversity = diversity_report(spec, &ck.model, n_z, &mut stream(seed, "diversity")).runtime()?;
    let mut text = serde_json::to_string_pretty(&diversity).expect("report serializes");
    text.push('\n');
    write_file(&out.join("diversity.json"), text.as_bytes())?;
    println!(
        "wrote {} heatmaps to {}; {} distinct greedy trajectories over {n_z} latents",
        maps.len(),
        out.display(),
        diversity.distinct_greedy_trajectories
    );
    Ok(())
}

fn cmd_curves(dir: &Path, out: &Path) -> Result<(), Failure> {
    let panels = transfer_panels(dir).usage()?;
    if panels.is_empty() {
        return Err(anyhow!("no complete arms under {}", dir.display())).usage();
    }
    for p in &panels {
        let path = out.join(format!("{}.svg", p.name));
        export_curves_svg(&p.name, &p.curves, &path).runtime()?;
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_verify(suite: Suite, seed: u64, report: Option<&Path>) -> Result<(), Failure> {
    let outcome = run_suite(suite, seed);
    let mut text = serde_json::to_string_pretty(&serde_json::json!({
        "suite": suite.as_str(),
        "passed": outcome.passed,
        "report": outcome.report,
    }))
    .expect("report serializes");
    text.push('\n');
    print!("{text}");
    if let Some(path) = report {
        write_file(path, text.as_bytes())?;
    }
    if outcome.passed {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_VERIFY,
            error: anyhow!("{suite} failed"),
        })
    }
}

fn cmd_layouts_export(out: &Path, size: usize) -> Result<(), Failure> {
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .runtime()?;
    for id in BUILTIN_IDS {
        let spec = canonical(id, size).usage()?;
        write_file(&out.join(format!("{id}.txt")), spec.to_text().as_bytes())?;
    }
    println!("wrote {} layouts to {}", BUILTIN_IDS.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train { config, overrides } => cmd_train(&config, &overrides),
        Command::Transfer {
            config,
            overrides,
            jobs,
            skip_source,
        } => cmd_transfer(&config, &overrides, jobs, skip_source),
        Command::Heatmap {
            checkpoint,
            env,
            size,
            max_steps,
            layout_file,
            n_z,
            rollouts,
            mode,
            scale,
            seed,
            out,
        } => cmd_heatmap(
            &checkpoint,
            &env,
            size,
            max_steps,
            layout_file,
            n_z,
            rollouts,
            mode,
            scale,
            seed,
            &out,
        ),
        Command::Curves { dir, out } => cmd_curves(&dir, &out),
        Command::Verify { suite, seed, report } => cmd_verify(suite, seed, report.as_deref()),
        Command::Layouts {
            action: LayoutsAction::Export { out, size },
        } => cmd_layouts_export(&out, size),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
