//! `graffe` command-line entry point.
//!
//! Exit codes: 0 on success, 1 when a run completes but a check fails, 2 on
//! usage, configuration or input errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use graffe::config::apply_overrides;
use graffe::diffusion::{NoiseSchedule, ScheduleKind};
use graffe::evaluator::{cv_probe_graph, embed, linear_probe_node, ProbeConfig, ProbeReport};
use graffe::numeric::{Precision, Scalar, Tensor};
use graffe::theory::experiments::{checkpoint_series, default_t_grid, heldout_rows};
use graffe::theory::suite::{run_suite, SuiteConfig};
use graffe::theory::{condition_comparison, loss_accuracy_correlation};
use graffe::trainer::{load_model, read_precision, Checkpoint, Trainer};
use graffe::{Dataset, Error, Task, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "graffe", version, about = "Diffusion-conditioned graph representation learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write checkpoints, the loss trace and the config.
    Train(TrainArgs),
    /// Write frozen-encoder embeddings of a dataset.
    Embed(EvalArgs),
    /// Linear-probe frozen embeddings.
    Probe(ProbeArgs),
    /// Run a verification suite.
    Verify(VerifyArgs),
    /// Write the alpha/sigma table of a noise schedule.
    ScheduleDump(ScheduleArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON config file; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted `key=value` override, applied after the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Defaults used for keys the config leaves out.
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory; defaults to the one recorded in the checkpoint.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Probe settings as JSON, with dotted `--set` overrides.
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, value_enum)]
    suite: SuiteArg,
    #[command(flatten)]
    config: ConfigArgs,
    /// Noise draws per step for held-out losses.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScheduleArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long = "T", value_name = "STEPS")]
    steps: usize,
    /// Output directory; the table goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    Node,
    Graph,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SuiteArg {
    /// Randomized checks of the loss minima and information bounds.
    Theorems,
    /// Held-out loss of representation, label and unconditioned models.
    Conditions,
    /// Rank correlation of -log loss with probe accuracy over checkpoints.
    Correlation,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Linear,
    Quad,
    Sigmoid,
    Inverted,
}

impl From<KindArg> for ScheduleKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Linear => ScheduleKind::Linear,
            KindArg::Quad => ScheduleKind::Quad,
            KindArg::Sigmoid => ScheduleKind::Sigmoid,
            KindArg::Inverted => ScheduleKind::Inverted,
        }
    }
}

/// How a run ended short of success.
#[derive(Debug)]
enum Failure {
    /// Bad invocation, config or input: exit 2.
    Usage(anyhow::Error),
    /// The run completed but a check failed, or the computation errored: exit 1.
    Domain(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numeric(_) | Error::Eval(_) | Error::Theory(_) => Failure::Domain(e.into()),
            _ => Failure::Usage(e.into()),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

#[derive(Debug, Serialize)]
struct OutputEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest {
    command: String,
    args: Vec<String>,
    version: &'static str,
    seed: Option<u64>,
    config: serde_json::Value,
    outputs: Vec<OutputEntry>,
    passed: bool,
}

fn prepare_out(dir: &Path) -> Outcome<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .map_err(usage)?;
    let probe = dir.join(".graffe-write-test");
    std::fs::write(&probe, b"")
        .with_context(|| format!("output directory {} is not writable", dir.display()))
        .map_err(usage)?;
    let _ = std::fs::remove_file(probe);
    Ok(())
}

fn write(dir: &Path, name: &str, body: impl AsRef<[u8]>) -> Outcome<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| Failure::from(Error::io(&path, e)))?;
    Ok(path)
}

fn write_manifest(
    dir: &Path,
    command: &str,
    seed: Option<u64>,
    config: serde_json::Value,
    outputs: &[PathBuf],
    passed: bool,
) -> Outcome<()> {
    let entries = outputs
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).map_err(|e| Failure::from(Error::io(p, e)))?;
            Ok(OutputEntry {
                path: p.strip_prefix(dir).unwrap_or(p).display().to_string(),
                bytes: bytes.len() as u64,
                sha256: Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect(),
            })
        })
        .collect::<Outcome<Vec<_>>>()?;
    let manifest = Manifest {
        command: command.to_string(),
        args: std::env::args().skip(1).collect(),
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config,
        outputs: entries,
        passed,
    };
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(dir, "run-manifest.json", body)?;
    Ok(())
}

fn read_text(path: &Path) -> Outcome<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::from(Error::io(path, e)))
}

fn train_config(args: &ConfigArgs, task: Option<TaskArg>) -> Outcome<TrainConfig> {
    let base = match (&args.config, task) {
        (Some(path), _) => {
            let mut value: serde_json::Value =
                serde_json::from_str(&read_text(path)?).map_err(|e| usage(anyhow!("{}: {e}", path.display())))?;
            if let (Some(t), Some(obj)) = (task, value.as_object_mut()) {
                let data = obj.entry("data").or_insert_with(|| serde_json::json!({}));
                if let Some(d) = data.as_object_mut() {
                    d.entry("task").or_insert_with(|| serde_json::to_value(task_of(t)).expect("task serializes"));
                }
            }
            TrainConfig::from_json(&value.to_string())?
        }
        (None, t) => TrainConfig::defaults_for(t.map_or(Task::Node, task_of)),
    };
    let cfg = base.apply_overrides(args.overrides.iter().map(String::as_str))?;
    cfg.validate()?;
    Ok(cfg)
}

fn task_of(t: TaskArg) -> Task {
    match t {
        TaskArg::Node => Task::Node,
        TaskArg::Graph => Task::Graph,
    }
}

fn json_config<T: Default + Serialize + serde::de::DeserializeOwned>(args: &ConfigArgs) -> Outcome<T> {
    let base: T = match &args.config {
        Some(path) => serde_json::from_str(&read_text(path)?).map_err(|e| usage(anyhow!("{}: {e}", path.display())))?,
        None => T::default(),
    };
    Ok(apply_overrides(&base, args.overrides.iter().map(String::as_str))?)
}

fn train(args: &TrainArgs) -> Outcome<bool> {
    let cfg = train_config(&args.config, args.task)?;
    let data = Dataset::load(&cfg.data)?;
    prepare_out(&args.out)?;
    let mut outputs = match cfg.trainer.precision {
        Precision::F32 => Trainer::<f32>::new(cfg.clone(), &data)?.train_to_dir(&args.out)?,
        Precision::F64 => Trainer::<f64>::new(cfg.clone(), &data)?.train_to_dir(&args.out)?,
    };
    outputs.push(write(&args.out, "config.json", cfg.to_json())?);
    let value = serde_json::to_value(&cfg).expect("config serializes");
    write_manifest(&args.out, "train", Some(cfg.trainer.seed), value, &outputs, true)?;
    Ok(true)
}

/// The model's embeddings of the checkpoint's (or the given) dataset.
fn embeddings<S: Scalar>(
    ck: &Checkpoint<S>,
    model: &graffe::Graffe<S>,
    data_dir: Option<&Path>,
) -> Outcome<(Dataset, Tensor<f64>)> {
    let mut data_cfg = ck.config.data.clone();
    if let Some(d) = data_dir {
        data_cfg.path = Some(d.to_path_buf());
    }
    let data = Dataset::load(&data_cfg)?;
    let z = embed(model, &data)?;
    Ok((data, z))
}

fn load_embeddings(args: &EvalArgs) -> Outcome<(TrainConfig, Dataset, Tensor<f64>)> {
    let data = args.data.as_deref();
    match read_precision(&args.checkpoint)? {
        Precision::F32 => {
            let (ck, model) = load_model::<f32>(&args.checkpoint)?;
            let (d, z) = embeddings(&ck, &model, data)?;
            Ok((ck.config, d, z))
        }
        Precision::F64 => {
            let (ck, model) = load_model::<f64>(&args.checkpoint)?;
            let (d, z) = embeddings(&ck, &model, data)?;
            Ok((ck.config, d, z))
        }
    }
}

fn tensor_csv(z: &Tensor<f64>) -> String {
    let mut s = (0..z.cols()).map(|c| format!("z{c}")).collect::<Vec<_>>().join(",");
    s.push('\n');
    for r in 0..z.rows() {
        s.push_str(&z.row(r).iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    s
}

fn embed_cmd(args: &EvalArgs) -> Outcome<bool> {
    let (cfg, _, z) = load_embeddings(args)?;
    prepare_out(&args.out)?;
    let out = write(&args.out, "embeddings.csv", tensor_csv(&z))?;
    let value = serde_json::json!({ "checkpoint": args.checkpoint, "train": cfg });
    write_manifest(&args.out, "embed", Some(cfg.trainer.seed), value, &[out], true)?;
    Ok(true)
}

fn probe(args: &ProbeArgs) -> Outcome<bool> {
    let probe_cfg: ProbeConfig = json_config(&args.config)?;
    let (cfg, data, z) = load_embeddings(&args.eval)?;
    prepare_out(&args.eval.out)?;
    let mut report: ProbeReport = match &data {
        Dataset::Node(g) => linear_probe_node(&z, g, &probe_cfg)?,
        Dataset::Graphs(gs) => {
            let labels = gs
                .iter()
                .map(|g| g.graph_label.ok_or_else(|| usage(anyhow!("graph dataset has unlabelled graphs"))))
                .collect::<Outcome<Vec<_>>>()?;
            cv_probe_graph(&z, &labels, &probe_cfg)?
        }
    };
    report.checkpoint = Some(args.eval.checkpoint.display().to_string());
    println!("accuracy {:.2} ± {:.2} over {} runs", report.mean, report.std, report.runs.len());
    let outputs = [
        write(&args.eval.out, "probe.json", report.to_json())?,
        write(&args.eval.out, "probe.csv", format!("{}\n{}\n", ProbeReport::CSV_HEADER, report.csv_row()))?,
    ];
    let value = serde_json::json!({ "probe": probe_cfg, "train": cfg });
    write_manifest(&args.eval.out, "probe", Some(probe_cfg.base_seed), value, &outputs, true)?;
    Ok(true)
}

fn verify(args: &VerifyArgs) -> Outcome<bool> {
    match args.suite {
        SuiteArg::Theorems => verify_theorems(args),
        SuiteArg::Conditions => verify_conditions(args),
        SuiteArg::Correlation => verify_correlation(args),
    }
}

fn verify_theorems(args: &VerifyArgs) -> Outcome<bool> {
    let cfg: SuiteConfig = json_config(&args.config)?;
    prepare_out(&args.out)?;
    let result = run_suite(&cfg)?;
    let outputs = result.write_to(&args.out)?;
    for (name, reports) in &result.sections {
        let passed = reports.iter().filter(|r| r.pass).count();
        println!("{name}: {passed}/{} pass", reports.len());
    }
    for (name, r) in result.failures() {
        eprintln!("FAIL {name}/{}: left {} right {} slack {}", r.check, r.left, r.right, r.slack);
    }
    let passed = result.all_pass();
    let value = serde_json::to_value(&cfg).expect("config serializes");
    write_manifest(&args.out, "verify theorems", Some(cfg.seed), value, &outputs, passed)?;
    Ok(passed)
}

fn node_graph(cfg: &TrainConfig) -> Outcome<graffe::graph::Graph> {
    match Dataset::load(&cfg.data)? {
        Dataset::Node(g) => Ok(g),
        Dataset::Graphs(_) => Err(usage(anyhow!("this suite needs a node dataset"))),
    }
}

fn verify_conditions(args: &VerifyArgs) -> Outcome<bool> {
    let cfg = train_config(&args.config, None)?;
    let graph = node_graph(&cfg)?;
    prepare_out(&args.out)?;
    let schedule = NoiseSchedule::new(cfg.diffusion.schedule, cfg.diffusion.steps).map_err(Error::from)?;
    let grid = default_t_grid(&schedule);
    let curves = match cfg.trainer.precision {
        Precision::F32 => condition_comparison::<f32>(&cfg, &graph, &grid, args.repeats)?,
        Precision::F64 => condition_comparison::<f64>(&cfg, &graph, &grid, args.repeats)?,
    };
    let (v, l, r) = curves.means();
    println!(
        "mean held-out loss over {} nodes: vanilla {v:.6} label {l:.6} representation {r:.6}",
        heldout_rows(&graph).len()
    );
    let passed = curves.ordered();
    let outputs = [
        write(&args.out, "conditions.csv", curves.to_csv())?,
        write(&args.out, "conditions.json", serde_json::to_string_pretty(&curves).expect("curves serialize"))?,
    ];
    let value = serde_json::to_value(&cfg).expect("config serializes");
    write_manifest(&args.out, "verify conditions", Some(cfg.trainer.seed), value, &outputs, passed)?;
    Ok(passed)
}

/// Rank correlation above which the loss/accuracy check passes.
const MIN_RHO: f64 = 0.5;

fn correlation_points<S: Scalar>(
    cfg: &TrainConfig,
    graph: &graffe::graph::Graph,
    repeats: usize,
) -> Outcome<Vec<graffe::theory::experiments::SeriesPoint>> {
    let data = Dataset::Node(graph.clone());
    let mut tr = Trainer::<S>::new(cfg.clone(), &data)?;
    let mut cks = Vec::new();
    tr.train(|ck| {
        cks.push(ck.clone());
        Ok(())
    })?;
    Ok(checkpoint_series(&cks, graph, &ProbeConfig::default(), repeats)?)
}

fn verify_correlation(args: &VerifyArgs) -> Outcome<bool> {
    let cfg = train_config(&args.config, None)?;
    let graph = node_graph(&cfg)?;
    prepare_out(&args.out)?;
    let points = match cfg.trainer.precision {
        Precision::F32 => correlation_points::<f32>(&cfg, &graph, args.repeats)?,
        Precision::F64 => correlation_points::<f64>(&cfg, &graph, args.repeats)?,
    };
    let report = loss_accuracy_correlation(&points);
    match report.rho {
        Some(rho) => println!("spearman rho {rho:.4} over {} checkpoints", points.len()),
        None => println!("spearman rho undefined over {} checkpoints", points.len()),
    }
    let passed = report.rho.is_some_and(|r| r > MIN_RHO);
    let outputs = [
        write(&args.out, "correlation.csv", report.to_csv())?,
        write(&args.out, "correlation.json", serde_json::to_string_pretty(&report).expect("report serializes"))?,
    ];
    let value = serde_json::to_value(&cfg).expect("config serializes");
    write_manifest(&args.out, "verify correlation", Some(cfg.trainer.seed), value, &outputs, passed)?;
    Ok(passed)
}

fn schedule_dump(args: &ScheduleArgs) -> Outcome<bool> {
    let schedule = NoiseSchedule::new(args.kind.into(), args.steps).map_err(usage)?;
    let csv = schedule.to_csv();
    match &args.out {
        None => print!("{csv}"),
        Some(dir) => {
            prepare_out(dir)?;
            let out = write(dir, "schedule.csv", csv)?;
            let value = serde_json::json!({ "kind": schedule.kind(), "steps": args.steps });
            write_manifest(dir, "schedule-dump", None, value, &[out], true)?;
        }
    }
    Ok(true)
}

/// Sizes the global rayon pool from `GRAFFE_THREADS`.
fn configure_threads() -> Outcome<()> {
    let Ok(raw) = std::env::var("GRAFFE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(anyhow!("GRAFFE_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(usage)
}

fn run(cli: &Cli) -> Outcome<bool> {
    configure_threads()?;
    match &cli.command {
        Command::Train(a) => train(a),
        Command::Embed(a) => embed_cmd(a),
        Command::Probe(a) => probe(a),
        Command::Verify(a) => verify(a),
        Command::ScheduleDump(a) => schedule_dump(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
