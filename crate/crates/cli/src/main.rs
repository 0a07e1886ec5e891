//! `cheaptalk` command-line front end.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cheaptalk::analysis::nash_deviation_metrics;
use cheaptalk::config::{parse_config, ExperimentConfig};
use cheaptalk::equilibria::enumerate_with_report;
use cheaptalk::figures::{render_figure, FigureKind, FigureSpec};
use cheaptalk::io::{
    emit_aggregates, emit_equilibria, read_records, write_equilibria, RecordWriter,
};
use cheaptalk::sweep::{
    aggregate, run_sweep_with_sink, Benchmarks, CellKey, RunKey, RunOutcome, RunRecord,
};
use cheaptalk::{run_simulation, GameSpec, LearnerParams, Role, SimConfig, WORKERS_ENV};

#[derive(Parser, Debug)]
#[command(
    name = "cheaptalk",
    version,
    about = "Reinforcement learners playing a discretized cheap-talk game"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Experiment config (TOML); baseline defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Simulation seed for `run`, base seed for `sweep`; ignored by the
    /// deterministic subcommands.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory (see each subcommand).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; overrides the config and the environment.
    #[arg(long, global = true, env = WORKERS_ENV)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One simulation; writes a single JSON-lines record with policies
    /// (to stdout without --out).
    Run {
        #[arg(long)]
        bias: Option<f64>,
    },
    /// Replicated runs over the configured grids; --out is a directory
    /// receiving runs.jsonl, aggregates.csv and, on failures, missing.jsonl.
    Sweep {
        /// Store final policies in every record (needed by `analyze`).
        #[arg(long)]
        store_policies: bool,
    },
    /// Partitional equilibria as CSV for each bias (to stdout without --out).
    Enumerate {
        /// Biases to enumerate; defaults to the sweep bias grid.
        #[arg(long, value_delimiter = ',')]
        bias: Vec<f64>,
    },
    /// Recomputes metrics from stored policies, fails unless they match the
    /// stored ones bit for bit, and re-aggregates; --out is a directory.
    Analyze {
        #[arg(required = true)]
        records: Vec<PathBuf>,
    },
    /// Figure data (CSV) and image (SVG) from aggregate files; --out is the
    /// base path, or a directory when KIND is `all`.
    Plot {
        /// Figure kind, or `all`.
        kind: String,
        #[arg(required = true)]
        aggregates: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let cfg = match &g.config {
        Some(path) => parse_config(path)?,
        None => ExperimentConfig::default(),
    };
    match cli.command {
        Command::Run { bias } => cmd_run(g, &cfg, bias),
        Command::Sweep { store_policies } => cmd_sweep(g, &cfg, store_policies),
        Command::Enumerate { bias } => cmd_enumerate(g, &cfg, bias),
        Command::Analyze { records } => cmd_analyze(g, &cfg, &records),
        Command::Plot { kind, aggregates } => cmd_plot(g, &kind, aggregates),
    }
}

fn workers(g: &Global, cfg: &ExperimentConfig) -> Option<usize> {
    g.workers.or(cfg.sweep.workers)
}

fn cmd_run(g: &Global, cfg: &ExperimentConfig, bias: Option<f64>) -> Result<()> {
    let game = match bias {
        Some(b) => cfg.game.with_bias(b),
        None => cfg.game.clone(),
    };
    let spec = GameSpec::new(&game)?;
    let sim = SimConfig {
        seed: g.seed.unwrap_or(cfg.sim.seed),
        ..cfg.sim
    };
    let params: LearnerParams = cfg.learner;
    let result = run_simulation(
        &spec,
        &params.for_role(&spec, Role::Sender),
        &params.for_role(&spec, Role::Receiver),
        &sim,
    )?;
    let outcome = RunOutcome::evaluate(
        &spec,
        RunKey::default(),
        params.alpha,
        params.lambda,
        &result,
        true,
    )?;
    let line = serde_json::to_string(&outcome.record)?;
    match &g.out {
        Some(path) => std::fs::write(path, format!("{line}\n"))
            .with_context(|| format!("writing {}", path.display()))?,
        None => println!("{line}"),
    }
    let m = &outcome.record.metrics;
    eprintln!(
        "converged={} periods={} U_S={:.6} U_R={:.6} MI={:.4} eps_nash={}",
        result.converged,
        result.periods_elapsed,
        m.u_sender,
        m.u_receiver,
        m.mutual_info,
        m.is_eps_nash
    );
    Ok(())
}

fn out_dir(g: &Global, default: &str) -> Result<PathBuf> {
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from(default));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn cmd_sweep(g: &Global, cfg: &ExperimentConfig, store_policies: bool) -> Result<()> {
    let mut sweep = cfg.sweep_config();
    if let Some(seed) = g.seed {
        sweep.base_seed = seed;
    }
    sweep.workers = workers(g, cfg);
    sweep.store_policies |= store_policies;
    sweep.validate()?;

    let dir = out_dir(g, "sweep_out")?;
    let mut writer = RecordWriter::create(dir.join("runs.jsonl"))?;
    let n_cells = sweep.n_cells();
    let mut done = 0;
    let out = run_sweep_with_sink(&sweep, |cell| {
        for r in cell.runs {
            writer.write(&r.record)?;
        }
        writer.flush()?;
        done += 1;
        if let Some(a) = cell.aggregate {
            eprintln!(
                "[{done}/{n_cells}] bias={} alpha={} lambda={} converged={}/{} eps_nash={:.3}",
                a.bias, a.alpha, a.lambda, a.n_converged, a.n_runs, a.eps_nash_freq
            );
        }
        Ok(())
    })?;
    writer.finish()?;
    emit_aggregates(&out.aggregates, dir.join("aggregates.csv"))?;

    if !out.missing.is_empty() {
        let path = dir.join("missing.jsonl");
        let mut text = String::new();
        for m in &out.missing {
            text.push_str(&serde_json::to_string(m)?);
            text.push('\n');
        }
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        bail!("{} runs failed; see {}", out.missing.len(), path.display());
    }
    Ok(())
}

fn cmd_enumerate(g: &Global, cfg: &ExperimentConfig, biases: Vec<f64>) -> Result<()> {
    let biases = if biases.is_empty() {
        cfg.sweep_config().bias_grid
    } else {
        biases
    };
    let workers = workers(g, cfg);
    let mut games = Vec::with_capacity(biases.len());
    for b in biases {
        let spec = GameSpec::new(&cfg.game.with_bias(b))?;
        let report = enumerate_with_report(&spec, workers);
        if !report.infeasible.is_empty() {
            eprintln!(
                "bias={b}: skipped {} partitions with more blocks than messages",
                report.infeasible.len()
            );
        }
        games.push((spec, report.equilibria));
    }
    match &g.out {
        Some(path) => emit_equilibria(&games, path)?,
        None => {
            let stdout = std::io::stdout();
            write_equilibria(stdout.lock(), Path::new("<stdout>"), &games)?;
        }
    }
    Ok(())
}

fn same_metrics(a: &RunRecord, b: &cheaptalk::analysis::Metrics) -> bool {
    let m = &a.metrics;
    [
        (m.u_sender, b.u_sender),
        (m.u_receiver, b.u_receiver),
        (m.mutual_info, b.mutual_info),
        (m.max_subopt_sender, b.max_subopt_sender),
        (m.max_subopt_receiver, b.max_subopt_receiver),
        (m.gain_sender, b.gain_sender),
        (m.gain_receiver, b.gain_receiver),
    ]
    .iter()
    .all(|(x, y)| x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()))
        && m.is_eps_nash == b.is_eps_nash
}

fn cmd_analyze(g: &Global, cfg: &ExperimentConfig, inputs: &[PathBuf]) -> Result<()> {
    let mut specs: BTreeMap<u64, GameSpec> = BTreeMap::new();
    let mut cells: BTreeMap<CellKey, Vec<RunOutcome>> = BTreeMap::new();
    let mut mismatches = 0usize;
    for path in inputs {
        for (i, record) in read_records(path)?.into_iter().enumerate() {
            let spec = match specs.get(&record.bias.to_bits()) {
                Some(s) => s.clone(),
                None => {
                    let s = GameSpec::new(&cfg.game.with_bias(record.bias))?;
                    specs.insert(record.bias.to_bits(), s.clone());
                    s
                }
            };
            if spec.config().fingerprint() != record.game_fingerprint {
                bail!(
                    "{} record {}: game fingerprint differs from the config's game at bias {}",
                    path.display(),
                    i + 1,
                    record.bias
                );
            }
            let (Some(s), Some(r)) = (&record.policy_sender, &record.policy_receiver) else {
                bail!("{} record {}: no stored policies", path.display(), i + 1);
            };
            let metrics = nash_deviation_metrics(s, r, &spec)?;
            if !same_metrics(&record, &metrics) {
                mismatches += 1;
                eprintln!(
                    "{} record {}: recomputed metrics differ",
                    path.display(),
                    i + 1
                );
            }
            cells
                .entry(record.key.cell)
                .or_default()
                .push(RunOutcome::from_record(record, &spec)?);
        }
    }

    let dir = out_dir(g, "analysis_out")?;
    let mut aggregates = Vec::with_capacity(cells.len());
    for runs in cells.values_mut() {
        runs.sort_by_key(|r| r.record.key);
        let spec = &specs[&runs[0].record.bias.to_bits()];
        aggregates.push(aggregate(runs, spec, &Benchmarks::compute(spec))?);
    }
    emit_aggregates(&aggregates, dir.join("aggregates.csv"))?;
    let n_runs: usize = cells.values().map(Vec::len).sum();
    eprintln!(
        "{n_runs} records, {} cells, {mismatches} metric mismatches",
        cells.len()
    );
    if mismatches > 0 {
        bail!("{mismatches} records do not reproduce their stored metrics");
    }
    Ok(())
}

fn cmd_plot(g: &Global, kind: &str, inputs: Vec<PathBuf>) -> Result<()> {
    let kinds: Vec<FigureKind> = if kind == "all" {
        FigureKind::ALL.to_vec()
    } else {
        vec![kind.parse()?]
    };
    let base = g.out.clone().unwrap_or_else(|| PathBuf::from("figures"));
    if kind == "all" {
        std::fs::create_dir_all(&base).with_context(|| format!("creating {}", base.display()))?;
    }
    let mut stdout = std::io::stdout().lock();
    for k in kinds {
        let output = if kind == "all" {
            base.join(k.name())
        } else {
            base.clone()
        };
        let files = render_figure(&FigureSpec {
            kind: k,
            inputs: inputs.clone(),
            output,
        })?;
        writeln!(
            stdout,
            "{}\n{}",
            files.data.display(),
            files.image.display()
        )?;
    }
    Ok(())
}
