//! `shiftlab`: synthetic shifted data, pretraining, fine-tuning, the
//! evaluation protocol, and reports.
//!
//! Exit codes: 0 success, 1 compute failure (including failed or missing
//! cells), 2 invalid input.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use shiftlab_core::config::RunConfig;
use shiftlab_core::data::{generate_task, load_bundle, save_bundle, TaskBundle};
use shiftlab_core::pipeline::{
    evaluate, finetune, initial_model, metric_values, pretrain_arch, run_protocol, GridPoint, HeadScenario,
    LossPoint, RunOptions, Strategy,
};
use shiftlab_core::report::{build_report, load_results, summary_text, write_report, write_results};
use shiftlab_core::stats::{cost_savings, format_count, format_dollars_k, reference_table, CostReport};
use shiftlab_core::Error;

const LOG_ENV: &str = "SHIFTLAB_LOG";

#[derive(Parser)]
#[command(name = "shiftlab", version, about = "Representation learning under distribution shift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated strategies to keep, e.g. `supervised,remedis`.
    #[arg(long)]
    strategy: Option<String>,
    /// Load a bundle written by `gen-data` instead of generating one.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Domain {
    In,
    Out,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a task bundle and its fingerprint.
    GenData(Common),
    /// Supervised and contrastive pretraining; writes checkpoints and loss
    /// histories.
    Pretrain(Common),
    /// One fine-tuning cell, for debugging grids.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Start from this encoder checkpoint instead of pretraining.
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "in")]
        domain: Domain,
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        wd: Option<f64>,
    },
    /// Full protocol; writes metric rows, timings and the manifest.
    Protocol(Common),
    /// Aggregate a results directory into tables, a summary and charts.
    Report {
        results: PathBuf,
        /// Defaults to `<results>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report settings and cost specs; defaults to the run's own config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Annotation cost model: the published table, or savings at a given
    /// fraction of labels needed.
    Cost {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fraction of labels still needed, in [0, 1].
        #[arg(long)]
        fraction: Option<f64>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_)
            | Error::InvalidArgument(_)
            | Error::Format(_)
            | Error::Json(_)
            | Error::Csv(_)
            | Error::Empty(_)
            | Error::Provenance(_) => 2,
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

type CliResult = Result<(), Failure>;

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(filter) = &common.strategy {
        let keep: Vec<Strategy> = filter.split(',').map(|s| Strategy::parse(s.trim())).collect::<Result<_, _>>()?;
        cfg.protocol.strategies.retain(|s| keep.contains(s));
        if cfg.protocol.strategies.is_empty() {
            return Err(invalid(format!("--strategy {filter} leaves no configured strategy")));
        }
    }
    if let Some(0) = common.workers {
        return Err(invalid("--workers must be positive"));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn bundle(common: &Common, cfg: &RunConfig) -> Result<TaskBundle, Failure> {
    match &common.data {
        Some(dir) => Ok(load_bundle(dir)?),
        None => {
            let d = &cfg.data;
            Ok(generate_task(cfg.seed, &d.base, &d.shift, d.secondary_shift.as_ref())?)
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    std::fs::write(path, text).map_err(Error::from)?;
    Ok(())
}

fn gen_data(common: &Common) -> CliResult {
    let cfg = load_config(common)?;
    let b = bundle(common, &cfg)?;
    save_bundle(&b, &common.out)?;
    info!("bundle written to {}", common.out.display());
    println!("{}", common.out.join("fingerprint.json").display());
    Ok(())
}

fn pretrain(common: &Common) -> CliResult {
    let cfg = load_config(common)?;
    let b = bundle(common, &cfg)?;
    let opts = RunOptions { workers: common.workers, checkpoint_dir: Some(common.out.clone()) };
    for &arch in &cfg.protocol.archs {
        let dir = common.out.join(arch.as_str());
        std::fs::create_dir_all(&dir).map_err(Error::from)?;
        let pre = pretrain_arch(&cfg.protocol, &b, arch, cfg.seed, &opts)?;
        for (name, enc) in [("random", &pre.random), ("supervised", &pre.supervised), ("remedis", &pre.remedis)] {
            if let Some(e) = enc {
                e.save(&dir.join(format!("{name}.ckpt")), 0)?;
            }
        }
        write_json(&dir.join("pretrain.json"), &pre.summary)?;
        info!("{}: supervised held-out accuracy {:.4}", arch.as_str(), pre.summary.supervised_heldout_accuracy);
    }
    println!("{}", common.out.display());
    Ok(())
}

#[derive(Serialize)]
struct FinetuneReport {
    strategy: String,
    arch: String,
    domain: String,
    fraction: f64,
    point: GridPoint,
    train_size: usize,
    best_step: u64,
    best_val_metric: f64,
    evaluations: Vec<(u64, f64)>,
    history: Vec<LossPoint>,
    test: Vec<(String, f64)>,
}

fn finetune_cell(
    common: &Common,
    encoder: Option<&Path>,
    domain: Domain,
    fraction: f64,
    lr: Option<f64>,
    wd: Option<f64>,
) -> CliResult {
    let cfg = load_config(common)?;
    let b = bundle(common, &cfg)?;
    let strategy = cfg.protocol.strategies[0];
    let arch = cfg.protocol.archs[0];
    let grid = cfg.protocol.id_grid.points()?;
    let point = GridPoint {
        learning_rate: lr.unwrap_or(grid[0].learning_rate),
        weight_decay: wd.unwrap_or(grid[0].weight_decay),
    };
    let pretrained;
    let loaded;
    let enc = match encoder {
        Some(p) => {
            loaded = shiftlab_core::models::Encoder::load(p)?;
            &loaded
        }
        None => {
            let spec = shiftlab_core::pipeline::ProtocolSpec { strategies: vec![strategy], ..cfg.protocol.clone() };
            pretrained = pretrain_arch(&spec, &b, arch, cfg.seed, &RunOptions::default())?;
            pretrained.encoder(strategy).ok_or_else(|| invalid("no encoder for strategy"))?
        }
    };
    let ds = match domain {
        Domain::In => &b.d_in,
        Domain::Out => &b.d_out,
    };
    let init = initial_model(HeadScenario::PretrainedRandomHead, enc, None, ds.classes, &cfg.protocol.finetune, cfg.seed)?;
    let out = finetune(init, &ds.train, &ds.val, fraction, point, &cfg.protocol.finetune, cfg.seed)?;
    let test = metric_values(&evaluate(&out.model, &ds.test)?, cfg.protocol.top_k)?;
    std::fs::create_dir_all(&common.out).map_err(Error::from)?;
    let report = FinetuneReport {
        strategy: strategy.as_str().into(),
        arch: arch.as_str().into(),
        domain: match domain {
            Domain::In => "in".into(),
            Domain::Out => "out".into(),
        },
        fraction,
        point,
        train_size: out.train_size,
        best_step: out.best_step,
        best_val_metric: out.best_val_metric,
        evaluations: out.evaluations,
        history: out.history,
        test,
    };
    write_json(&common.out.join("finetune.json"), &report)?;
    for (name, v) in &report.test {
        println!("{name} {v:.4}");
    }
    Ok(())
}

fn protocol(common: &Common) -> CliResult {
    let cfg = load_config(common)?;
    let b = bundle(common, &cfg)?;
    let opts = RunOptions { workers: common.workers, checkpoint_dir: None };
    let result = run_protocol(&cfg.protocol, &b, cfg.seed, &opts)?;
    let hash = write_results(&common.out, &result, Some(&cfg))?;
    info!("{} metric rows, manifest sha256:{hash}", result.rows.len());
    println!("{}", common.out.display());
    if !result.failures.is_empty() {
        for f in &result.failures {
            warn!("failed cell {}/{}/{}@{}#{}: {}", f.strategy, f.arch, f.scenario, f.fraction, f.repeat, f.error);
        }
        return Err(Failure { code: 1, message: format!("{} cells failed", result.failures.len()) });
    }
    Ok(())
}

fn report(results: &Path, out: Option<&Path>, config: Option<&Path>) -> CliResult {
    let res = load_results(results)?;
    let cfg = match config {
        Some(p) => Some(RunConfig::load(p)?),
        None => res.config.clone(),
    }
    .unwrap_or_default();
    let rep = build_report(&res, &cfg.report, &cfg.costs)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| results.join("report"));
    write_report(&rep, &dir)?;
    print!("{}", summary_text(&rep));
    if !rep.is_complete() {
        return Err(Failure { code: 1, message: format!("{} cells missing; report marks them", rep.missing.len()) });
    }
    Ok(())
}

fn print_cost(r: &CostReport) {
    println!(
        "{}: fraction needed {:.3}, saves {} samples, {} hours, {}",
        r.task,
        r.fraction_needed,
        format_count(r.samples_saved as f64),
        format_count(r.hours_saved),
        format_dollars_k(r.dollars_saved)
    );
}

fn cost(config: Option<&Path>, fraction: Option<f64>) -> CliResult {
    let specs = match config {
        Some(p) => RunConfig::load(p)?.costs,
        None => Vec::new(),
    };
    let table = reference_table();
    match fraction {
        Some(f) => {
            let specs = if specs.is_empty() { table.iter().map(|r| r.spec.clone()).collect() } else { specs };
            for s in &specs {
                print_cost(&cost_savings(s, f)?);
            }
        }
        None if !specs.is_empty() => {
            for s in &specs {
                s.validate()?;
                println!(
                    "{}: {} images, {} hours, {}",
                    s.task,
                    format_count(s.images as f64),
                    format_count(s.total_hours()),
                    format_dollars_k(s.total_dollars())
                );
            }
        }
        None => {
            println!("{:<4} {:>8} {:>7} {:>7} {:>9} {:>7} {:>7}", "task", "images", "hours", "total", "saved", "hours", "$saved");
            for row in &table {
                let s = &row.spec;
                let saved = s.savings_for_count(row.shown_saved_count, 1.0 - row.shown_saved_percent as f64 / 100.0);
                println!(
                    "{:<4} {:>8} {:>7} {:>7} {:>9} {:>7} {:>7}",
                    s.task,
                    format_count(s.images as f64),
                    format_count(s.total_hours()),
                    format_dollars_k(s.total_dollars()),
                    format_count(saved.samples_saved as f64),
                    format_count(saved.hours_saved),
                    format_dollars_k(saved.dollars_saved)
                );
            }
            for row in &table {
                for d in row.discrepancies() {
                    println!("note: {d}");
                }
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::GenData(c) => gen_data(&c),
        Command::Pretrain(c) => pretrain(&c),
        Command::Finetune { common, encoder, domain, fraction, lr, wd } => {
            finetune_cell(&common, encoder.as_deref(), domain, fraction, lr, wd)
        }
        Command::Protocol(c) => protocol(&c),
        Command::Report { results, out, config } => report(&results, out.as_deref(), config.as_deref()),
        Command::Cost { config, fraction } => cost(config.as_deref(), fraction),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
