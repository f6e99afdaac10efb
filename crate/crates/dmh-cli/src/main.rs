//! `dmh` — instance management, policy benchmarking, training and
//! evaluation for the dynamic material handling simulator.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use dmh::crl::{self, AgentVariant, PolicyArtifact, TrainLogRecord, TrainerConfig};
use dmh::engine::EngineConfig;
use dmh::instance::{
    generate_instance, load_instance, mutate_instance, save_instance, GeneratorParams, Instance,
    MutationParams,
};
use dmh::layout::Layout;

use dmh_cli::bench::{run_benchmark, PolicySpec};
use dmh_cli::report::{emit_detail, emit_report, ingest_external};

#[derive(Parser)]
#[command(name = "dmh", version, about = "Dynamic material handling benchmark suite")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate problem instances from seeds
    Generate(GenerateArgs),
    /// Derive unseen instances by mutating existing ones
    Mutate(MutateArgs),
    /// Benchmark policies on instances and write CSV reports
    Run(RunArgs),
    /// Train an agent and save the policy artifact
    Train(TrainArgs),
    /// Evaluate a saved policy artifact
    Eval(EvalArgs),
    /// Pretty-print an instance, layout, or policy artifact
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Seed range `a..b` (inclusive) or comma list `a,b,c`
    #[arg(long)]
    seeds: String,
    /// Output directory for instance files
    #[arg(long, default_value = "data")]
    out_dir: PathBuf,
    /// File name prefix; files are `<prefix><NN>.json`
    #[arg(long, default_value = "instance")]
    prefix: String,
    /// Number of the first generated instance
    #[arg(long, default_value_t = 1)]
    start_index: usize,
    #[arg(long, default_value_t = 40)]
    tasks: usize,
    #[arg(long, default_value_t = 2)]
    vehicles: usize,
    /// Layout JSON file (defaults to the bundled layout)
    #[arg(long)]
    layout: Option<PathBuf>,
}

#[derive(Args)]
struct MutateArgs {
    /// Seed range or comma list, one seed per source instance
    #[arg(long)]
    seeds: String,
    /// Source instance files, in order
    #[arg(long, num_args = 1.., required = true)]
    from: Vec<PathBuf>,
    #[arg(long, default_value = "data")]
    out_dir: PathBuf,
    #[arg(long, default_value = "instance")]
    prefix: String,
    /// Number of the first mutated instance (defaults to continuing after
    /// the sources)
    #[arg(long)]
    start_index: Option<usize>,
    /// Fraction of task arrivals perturbed
    #[arg(long, default_value_t = 0.3)]
    arrival_fraction: f64,
    /// Fraction of task routes resampled
    #[arg(long, default_value_t = 0.2)]
    route_fraction: f64,
    #[arg(long)]
    layout: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Policy names (fcfs, edd, nvf, std, random) or artifact paths
    #[arg(long = "policy", num_args = 1.., required = true)]
    policies: Vec<String>,
    #[arg(long = "instances", num_args = 1.., required = true)]
    instances: Vec<PathBuf>,
    #[arg(long, default_value_t = 30)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Aggregate report CSV path
    #[arg(long)]
    out: PathBuf,
    /// Per-trial sidecar CSV path
    #[arg(long)]
    detail: Option<PathBuf>,
    /// External per-trial metrics CSV to merge into the report
    #[arg(long)]
    external: Option<PathBuf>,
    /// Tardiness threshold for constraint satisfaction
    #[arg(long, default_value_t = 50.0)]
    epsilon: f64,
    /// Evaluate trials sequentially instead of across a thread pool
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    layout: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long = "instances", num_args = 1.., required = true)]
    instances: Vec<PathBuf>,
    /// Trainer config JSON (TrainerConfig field names); flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Agent variant: rcpom, rcpo-ns, l-sac, sac
    #[arg(long, default_value = "rcpom")]
    agent: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Policy artifact output path
    #[arg(long)]
    out: PathBuf,
    /// Training log output path (CSV)
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    total_steps: Option<usize>,
    #[arg(long)]
    eval_interval: Option<usize>,
    #[arg(long)]
    eval_trials: Option<usize>,
    #[arg(long)]
    layout: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    artifact: PathBuf,
    #[arg(long = "instances", num_args = 1.., required = true)]
    instances: Vec<PathBuf>,
    #[arg(long, default_value_t = 30)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    detail: Option<PathBuf>,
    #[arg(long, default_value_t = 50.0)]
    epsilon: f64,
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    layout: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    /// Instance JSON, layout JSON, or policy artifact
    file: PathBuf,
}

enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes; anything else is usage.
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Mutate(args) => cmd_mutate(args),
        Command::Run(args) => cmd_run(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Inspect(args) => cmd_inspect(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

/// Parses `a..b` (inclusive) or a comma-separated list.
fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    let bad = |t: &str| CliError::Usage(format!("invalid seed specification `{t}`"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad(text))?;
        let b: u64 = b.trim().parse().map_err(|_| bad(text))?;
        if a > b {
            return Err(bad(text));
        }
        Ok((a..=b).collect())
    } else {
        text.split(',')
            .map(|s| s.trim().parse().map_err(|_| bad(text)))
            .collect()
    }
}

fn load_layout(path: &Option<PathBuf>) -> Result<(Arc<Layout>, String), CliError> {
    match path {
        None => Ok((Arc::new(Layout::bundled_default()), "bundled-default".into())),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Data(format!("cannot read layout {}: {e}", p.display())))?;
            let layout = Layout::load(&text)
                .map_err(|e| CliError::Data(format!("invalid layout {}: {e}", p.display())))?;
            Ok((Arc::new(layout), p.display().to_string()))
        }
    }
}

fn load_instances(paths: &[PathBuf]) -> Result<Vec<Instance>, CliError> {
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| {
                CliError::Data(format!("cannot read instance {}: {e}", p.display()))
            })?;
            load_instance(&text)
                .map_err(|e| CliError::Data(format!("invalid instance {}: {e}", p.display())))
        })
        .collect()
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Data(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, contents)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let seeds = parse_seeds(&args.seeds)?;
    let (layout, layout_ref) = load_layout(&args.layout)?;
    let params = GeneratorParams {
        task_count: args.tasks,
        vehicle_count: args.vehicles,
        ..Default::default()
    };
    for (i, &seed) in seeds.iter().enumerate() {
        let name = format!("{}{:02}", args.prefix, args.start_index + i);
        let inst = generate_instance(&params, &layout, &layout_ref, &name, seed)
            .map_err(|e| CliError::Data(format!("generation failed for seed {seed}: {e}")))?;
        let path = args.out_dir.join(format!("{name}.json"));
        write_file(&path, &save_instance(&inst))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_mutate(args: MutateArgs) -> Result<(), CliError> {
    let seeds = parse_seeds(&args.seeds)?;
    if seeds.len() != args.from.len() {
        return Err(CliError::Usage(format!(
            "{} seeds for {} source instances",
            seeds.len(),
            args.from.len()
        )));
    }
    let (layout, _) = load_layout(&args.layout)?;
    let sources = load_instances(&args.from)?;
    let start = args.start_index.unwrap_or(sources.len() + 1);
    let params = MutationParams {
        arrival_fraction: args.arrival_fraction,
        route_fraction: args.route_fraction,
        ..Default::default()
    };
    for (i, (src, &seed)) in sources.iter().zip(&seeds).enumerate() {
        let name = format!("{}{:02}", args.prefix, start + i);
        let mut inst = mutate_instance(src, &layout, &params, seed)
            .map_err(|e| CliError::Data(format!("mutation failed for {}: {e}", src.name)))?;
        inst.name = name.clone();
        let path = args.out_dir.join(format!("{name}.json"));
        write_file(&path, &save_instance(&inst))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn load_policy_spec(name: &str, config: &EngineConfig, vehicle_count: usize) -> Result<PolicySpec, CliError> {
    if let Some(spec) = PolicySpec::parse_builtin(name) {
        return Ok(spec);
    }
    let path = Path::new(name);
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "unknown policy `{name}` (expected fcfs/edd/nvf/std/random or an artifact path)"
        )));
    }
    let artifact = PolicyArtifact::load(path)
        .map_err(|e| CliError::Data(format!("cannot load artifact {name}: {e}")))?;
    artifact
        .check_feature_hash(crl::eval::runtime_feature_hash(config, vehicle_count))
        .map_err(|e| CliError::Data(e.to_string()))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| name.to_string());
    Ok(PolicySpec::Nn {
        name: stem,
        artifact: Arc::new(artifact),
    })
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    if args.trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    let (layout, _) = load_layout(&args.layout)?;
    let instances = load_instances(&args.instances)?;
    if instances.is_empty() {
        return Err(CliError::Usage("no instances given".into()));
    }
    let config = EngineConfig::default();
    let vehicle_count = instances[0].vehicles.len();
    let mut policies = Vec::new();
    for name in &args.policies {
        policies.push(load_policy_spec(name, &config, vehicle_count)?);
    }
    let (mut rows, details) = run_benchmark(
        &policies,
        &instances,
        &layout,
        &config,
        args.epsilon,
        args.trials,
        args.seed,
        !args.sequential,
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    if let Some(external) = &args.external {
        let text = std::fs::read_to_string(external)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", external.display())))?;
        let extra = ingest_external(&text, args.epsilon)
            .map_err(|e| CliError::Data(format!("{}: {e}", external.display())))?;
        rows.extend(extra);
        rows.sort_by(|a, b| (&a.instance, &a.policy).cmp(&(&b.instance, &b.policy)));
    }
    write_file(
        &args.out,
        &emit_report(&rows).map_err(|e| CliError::Data(e.to_string()))?,
    )?;
    println!("wrote {}", args.out.display());
    if let Some(detail_path) = &args.detail {
        write_file(
            detail_path,
            &emit_detail(&details).map_err(|e| CliError::Data(e.to_string()))?,
        )?;
        println!("wrote {}", detail_path.display());
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let (layout, _) = load_layout(&args.layout)?;
    let instances = load_instances(&args.instances)?;
    let mut config: TrainerConfig = match &args.config {
        None => TrainerConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("invalid config {}: {e}", p.display())))?
        }
    };
    let variant = AgentVariant::parse(&args.agent)
        .ok_or_else(|| CliError::Usage(format!("unknown agent variant `{}`", args.agent)))?;
    variant.apply(&mut config);
    if let Some(v) = args.total_steps {
        config.total_steps = v;
    }
    if let Some(v) = args.eval_interval {
        config.eval_interval = v;
    }
    if let Some(v) = args.eval_trials {
        config.eval_trials = v;
    }
    let engine_config = EngineConfig::default();
    let outcome = crl::train(&config, &instances, &layout, &engine_config, args.seed)
        .map_err(|e| CliError::Data(e.to_string()))?;
    outcome
        .artifact
        .save(&args.out)
        .map_err(|e| CliError::Data(format!("cannot save artifact: {e}")))?;
    println!(
        "trained {} for {} steps over {} episodes; best checkpoint at step {}",
        variant.name(),
        config.total_steps,
        outcome.episodes,
        outcome.best_step
    );
    println!("wrote {}", args.out.display());
    if let Some(log_path) = &args.log {
        let mut text = String::from(TrainLogRecord::HEADER);
        text.push('\n');
        for r in &outcome.log {
            text.push_str(&r.to_line());
            text.push('\n');
        }
        write_file(log_path, &text)?;
        println!("wrote {}", log_path.display());
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    if args.trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    let (layout, _) = load_layout(&args.layout)?;
    let instances = load_instances(&args.instances)?;
    if instances.is_empty() {
        return Err(CliError::Usage("no instances given".into()));
    }
    let config = EngineConfig::default();
    let spec = load_policy_spec(
        &args.artifact.display().to_string(),
        &config,
        instances[0].vehicles.len(),
    )?;
    if matches!(spec, PolicySpec::Rule(_) | PolicySpec::Random) {
        return Err(CliError::Usage(
            "--artifact must be a policy artifact file".into(),
        ));
    }
    let (rows, details) = run_benchmark(
        &[spec],
        &instances,
        &layout,
        &config,
        args.epsilon,
        args.trials,
        args.seed,
        !args.sequential,
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    write_file(
        &args.out,
        &emit_report(&rows).map_err(|e| CliError::Data(e.to_string()))?,
    )?;
    println!("wrote {}", args.out.display());
    if let Some(detail_path) = &args.detail {
        write_file(
            detail_path,
            &emit_detail(&details).map_err(|e| CliError::Data(e.to_string()))?,
        )?;
        println!("wrote {}", detail_path.display());
    }
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<(), CliError> {
    let path = &args.file;
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    if let Ok(artifact) = PolicyArtifact::load(path) {
        println!("policy artifact {}", path.display());
        println!("  layer dims: {:?}", artifact.dims);
        println!("  feature hash: {:#018x}", artifact.feature_hash);
        println!(
            "  gamma {} alpha {} lambda {} seed {}",
            artifact.gamma, artifact.alpha, artifact.lambda, artifact.seed
        );
        return Ok(());
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::Data(format!("{} is not text or an artifact", path.display())))?;
    if let Ok(inst) = load_instance(&text) {
        println!("instance {} (layout {})", inst.name, inst.layout_ref);
        println!(
            "  {} tasks, {} vehicles, {} scheduled breakdowns, seed {}",
            inst.tasks.len(),
            inst.vehicles.len(),
            inst.breakdowns.len(),
            inst.seed_of_origin
        );
        for (i, t) in inst.tasks.iter().enumerate() {
            println!(
                "  task {i:2}: {} -> {} arrival {:.2} expiry {:.2}",
                t.pickup, t.delivery, t.arrival, t.expiry
            );
        }
        for (i, v) in inst.vehicles.iter().enumerate() {
            println!(
                "  vehicle {i}: velocity {} repair {} parking {}",
                v.velocity, v.repair_time, v.parking
            );
        }
        return Ok(());
    }
    if let Ok(layout) = Layout::load(&text) {
        let sites: Vec<_> = layout.sites().collect();
        println!("layout with {} sites", sites.len());
        for (_, site) in sites {
            println!("  {} ({:?}) at ({}, {})", site.id, site.kind, site.x, site.y);
        }
        return Ok(());
    }
    Err(CliError::Data(format!(
        "{} is not a recognizable instance, layout, or artifact",
        path.display()
    )))
}
