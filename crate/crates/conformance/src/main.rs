//! Command-line front end: replay a stream against a model, align a single
//! trace, or generate synthetic logs.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use conformance::alignment::SynchronousProduct;
use conformance::engine::{self, EngineConfig, Topic, Variant};
use conformance::fastpath::CachePolicy;
use conformance::petri::{load_model, write_model};
use conformance::search::{shortest_path, GoalMode, Heuristic};
use conformance::streamsim::{
    compress_timeline, generate_synthetic, load_log, replay, write_csv_log, LogFormat,
    ProcessTree, SpeedMode,
};

#[derive(Parser)]
#[command(name = "prefixalign", version, about = "Streaming prefix-alignment conformance checking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay an event log through the partitioned engine and write
    /// alignments and metrics.
    Replay(ReplayArgs),
    /// Compute one optimal (prefix-)alignment and print it.
    Align(AlignArgs),
    /// Generate a synthetic log and matching model from a process tree.
    Generate(GenerateArgs),
}

fn parse_heuristic(s: &str) -> Result<Heuristic, String> {
    match s {
        "zero" => Ok(Heuristic::Zero),
        "unmatched" => Ok(Heuristic::UnmatchedLabelBound),
        other => Err(format!("unknown heuristic {other:?} (zero|unmatched)")),
    }
}

#[derive(Args)]
struct ReplayArgs {
    /// Reference model (PNML).
    #[arg(long, env = "PREFIXALIGN_MODEL")]
    model: PathBuf,
    /// Event log; CSV `case,activity,timestamp` or XES by extension.
    #[arg(long, env = "PREFIXALIGN_LOG", conflicts_with = "tree")]
    log: Option<PathBuf>,
    /// Synthesize the log from a process tree spec instead of loading one.
    #[arg(long, env = "PREFIXALIGN_TREE")]
    tree: Option<String>,
    /// Cases to synthesize (with --tree).
    #[arg(long, default_value_t = 100)]
    cases: usize,
    /// Per-event noise probability (with --tree).
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, env = "PREFIXALIGN_VARIANT", default_value = "dsc")]
    variant: Variant,
    #[arg(long, env = "PREFIXALIGN_PARTITIONS", default_value_t = 3)]
    partitions: usize,
    #[arg(long, env = "PREFIXALIGN_WORKERS", default_value_t = 3)]
    workers: usize,
    /// Prefix cache capacity; 0 disables caching even under ca/dsc.
    #[arg(long, env = "PREFIXALIGN_CACHE_CAPACITY", default_value_t = 100)]
    cache_capacity: usize,
    #[arg(long, env = "PREFIXALIGN_CACHE_POLICY", default_value = "tinylfu")]
    cache_policy: CachePolicy,
    #[arg(long, env = "PREFIXALIGN_HEURISTIC", default_value = "zero", value_parser = parse_heuristic)]
    heuristic: Heuristic,
    /// Wall-clock replay duration in seconds (real-time mode).
    #[arg(long, env = "PREFIXALIGN_DURATION_SECS", default_value_t = 10.0)]
    duration_secs: f64,
    /// Push events as fast as possible instead of on the compressed timeline.
    #[arg(long, env = "PREFIXALIGN_MAX_SPEED", default_value_t = false)]
    max_speed: bool,
    #[arg(long, env = "PREFIXALIGN_SEED", default_value_t = 42)]
    seed: u64,
    /// Output directory for alignments.jsonl and the metrics CSVs.
    #[arg(long, env = "PREFIXALIGN_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
    /// Consumer-lag sampling period in milliseconds; omit to disable.
    #[arg(long, env = "PREFIXALIGN_LAG_SAMPLE_MS")]
    lag_sample_ms: Option<u64>,
}

#[derive(Args)]
struct AlignArgs {
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated activity names.
    #[arg(long)]
    trace: String,
    /// Require the model to reach its final marking (full alignment);
    /// default is a prefix-alignment.
    #[arg(long, default_value_t = false)]
    full: bool,
    #[arg(long, default_value = "zero", value_parser = parse_heuristic)]
    heuristic: Heuristic,
}

#[derive(Args)]
struct GenerateArgs {
    /// Process tree, e.g. `seq(a, xor(b, c))`; operators seq/xor/par/loop.
    #[arg(long)]
    tree: String,
    #[arg(long, default_value_t = 100)]
    cases: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// CSV log output path.
    #[arg(long)]
    out_log: PathBuf,
    /// Model (PNML) output path; derived from the tree. Optional.
    #[arg(long)]
    out_model: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Replay(args) => cmd_replay(args),
        Command::Align(args) => cmd_align(args),
        Command::Generate(args) => cmd_generate(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn log_format_for(path: &std::path::Path) -> LogFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("xes") => LogFormat::Xes,
        _ => LogFormat::Csv,
    }
}

fn cmd_replay(args: ReplayArgs) -> Result<(), String> {
    let model = Arc::new(load_model(&args.model).map_err(|e| e.to_string())?);
    let log = match (&args.log, &args.tree) {
        (Some(path), None) => {
            load_log(path, log_format_for(path)).map_err(|e| e.to_string())?
        }
        (None, Some(spec)) => {
            let tree = ProcessTree::parse(spec).map_err(|e| e.to_string())?;
            generate_synthetic(&tree, args.cases, args.noise, args.seed)
                .map_err(|e| e.to_string())?
        }
        _ => return Err("exactly one of --log or --tree is required".into()),
    };

    let cfg = EngineConfig {
        variant: args.variant,
        workers: args.workers,
        heuristic: args.heuristic,
        cache_capacity: args.cache_capacity,
        cache_policy: args.cache_policy,
        lag_sample_period: args.lag_sample_ms.map(Duration::from_millis),
        ..EngineConfig::default()
    };

    let topic = Topic::new(args.partitions);
    let schedule = compress_timeline(&log, Duration::from_secs_f64(args.duration_secs));
    let mode = if args.max_speed {
        SpeedMode::MaxSpeed
    } else {
        SpeedMode::RealTime
    };

    let output = std::thread::scope(|scope| {
        let producer = scope.spawn(|| replay(&schedule, &log, &topic, mode));
        let run = engine::run(&topic, model.clone(), &cfg);
        producer
            .join()
            .expect("producer panicked")
            .map_err(|e| e.to_string())?;
        run.map_err(|e| e.to_string())
    })?;

    std::fs::create_dir_all(&args.out_dir).map_err(|e| e.to_string())?;
    let jsonl_path = args.out_dir.join("alignments.jsonl");
    let mut jsonl = String::new();
    for result in &output.results {
        jsonl.push_str(&result.to_json_line(&model));
        jsonl.push('\n');
    }
    std::fs::write(&jsonl_path, jsonl).map_err(|e| e.to_string())?;
    engine::export_metrics(&output.metrics, &args.out_dir).map_err(|e| e.to_string())?;

    let counters = &output.metrics.counters;
    let events = output.results.len();
    let mean_latency_ms = if events == 0 {
        0.0
    } else {
        output.metrics.latencies_ms.iter().sum::<f64>() / events as f64
    };
    let final_lag: u64 = (0..args.partitions).map(|p| topic.lag(p)).sum();
    println!("variant          {}", args.variant.as_str());
    println!("events_consumed  {events}");
    println!("events_skipped   {}", counters.get("events_skipped").copied().unwrap_or(0));
    println!("mean_latency_ms  {mean_latency_ms:.4}");
    println!("cache_hits       {}", counters.get("cache_hits").copied().unwrap_or(0));
    println!("ds_applied       {}", counters.get("ds_applied").copied().unwrap_or(0));
    println!("searches         {}", counters.get("searches").copied().unwrap_or(0));
    println!("final_lag        {final_lag}");
    println!("outputs          {}", args.out_dir.display());
    Ok(())
}

fn cmd_align(args: AlignArgs) -> Result<(), String> {
    let model = Arc::new(load_model(&args.model).map_err(|e| e.to_string())?);
    let trace: Vec<String> = args
        .trace
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    let spn = SynchronousProduct::build(model.clone(), &trace);
    let mode = if args.full { GoalMode::Full } else { GoalMode::Prefix };
    let alignment = shortest_path(&spn, mode, args.heuristic).map_err(|e| e.to_string())?;
    println!("{}", alignment.render(&model));
    println!("cost: {}", alignment.total_cost);
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<(), String> {
    let tree = ProcessTree::parse(&args.tree).map_err(|e| e.to_string())?;
    let log = generate_synthetic(&tree, args.cases, args.noise, args.seed)
        .map_err(|e| e.to_string())?;
    write_csv_log(&log, &args.out_log).map_err(|e| e.to_string())?;
    if let Some(path) = &args.out_model {
        let net = tree.to_wfnet();
        std::fs::write(path, write_model(&net)).map_err(|e| e.to_string())?;
    }
    println!(
        "wrote {} events across {} cases to {}",
        log.events.len(),
        args.cases,
        args.out_log.display()
    );
    Ok(())
}
