//! `flowmppi` command-line entry points.

mod dumps;

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowmppi_core::bench::{run_bench, BenchConfig, Provenance};
use flowmppi_core::config::FileConfig;
use flowmppi_core::data::{
    extract_training_pairs, parse_trajectory_file, read_pairs, synth_mix, write_pairs, DatasetManifest,
};
use flowmppi_core::flow::{train, FlowModel, Normalization, TrainingPair};
use flowmppi_core::metrics::format_table;
use flowmppi_core::rng::mix;
use flowmppi_core::sim::{run_episode, scenario_at, ClosedLoop, Scenario};
use flowmppi_core::{Error, PlannerConfig, PlannerMode, Result};

#[derive(Parser)]
#[command(
    name = "flowmppi",
    version,
    about = "Reward-guided flow matching priors for MPPI crowd navigation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a flow model and write a checkpoint and loss curve.
    Train(TrainArgs),
    /// Build training pairs and write them as a binary shard.
    PrepareData(PrepareArgs),
    /// Dump guided sample batches for one scenario state.
    Sample(SampleArgs),
    /// Run one planning step and dump the result.
    Plan(PlanArgs),
    /// Run one closed-loop episode and write its JSON-lines log.
    Simulate(SimulateArgs),
    /// Run every method on a seeded scenario suite.
    Bench(BenchArgs),
    /// Write plot-ready data files for every figure.
    ExportPlotData(ExportArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// TOML config file; defaults are used for anything missing.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<FileConfig> {
        match &self.config {
            Some(p) => FileConfig::load(p),
            None => Ok(FileConfig::default()),
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// Synthetic mix with this many pairs per kind.
    #[arg(long, conflicts_with_all = ["manifest", "shards"])]
    synth: Option<usize>,
    /// Dataset manifest of `frame agent x y` files.
    #[arg(long, conflicts_with = "shards")]
    manifest: Option<PathBuf>,
    /// Binary shard written by `prepare-data`.
    #[arg(long)]
    shards: Option<PathBuf>,
    /// Window stride when extracting pairs from a manifest.
    #[arg(long, default_value_t = 1)]
    window_stride: usize,
    /// Seed of the synthetic mix.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Loss curve CSV (default: next to the checkpoint).
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Stop after this many seconds.
    #[arg(long)]
    time_budget: Option<f64>,
}

#[derive(Args)]
struct PrepareArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Master seed of the scenario suite.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scenario index within the suite.
    #[arg(long, default_value_t = 0)]
    scenario: usize,
}

impl ScenarioArgs {
    fn scenario(&self, cfg: &FileConfig) -> Result<Scenario> {
        scenario_at(&cfg.generator, self.seed, self.scenario)
    }

    fn planner_seed(&self) -> u64 {
        mix(self.seed, self.scenario as u64)
    }
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[command(flatten)]
    scen: ScenarioArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Advance the closed loop (cfm-mppi) this many steps first.
    #[arg(long, default_value_t = 10)]
    at_step: usize,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also dump the unguided flow prior and the Gaussian MPPI prior.
    #[arg(long)]
    prior: bool,
    /// One batch per w_CBF in the configured set.
    #[arg(long)]
    wcbf_sweep: bool,
    /// Warm starts from the current MPPI solution at tau = 0, 0.3, 0.6, 0.9.
    #[arg(long)]
    warm_sweep: bool,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[command(flatten)]
    scen: ScenarioArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    mode: Option<PlannerMode>,
    #[arg(long, default_value_t = 0)]
    at_step: usize,
    /// JSON output (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[command(flatten)]
    scen: ScenarioArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    mode: Option<PlannerMode>,
    /// Record planner wall-clock time (makes logs run-dependent).
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',', default_values_t = PlannerMode::ALL.to_vec())]
    methods: Vec<PlannerMode>,
    #[arg(long, default_value_t = 50)]
    scenarios: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Leave planning time at zero for byte-reproducible output.
    #[arg(long)]
    no_timing: bool,
    /// Also write every episode log.
    #[arg(long)]
    logs: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[command(flatten)]
    scen: ScenarioArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    at_step: usize,
    /// Bench JSON report to convert into the table file.
    #[arg(long)]
    bench_json: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn load_model(path: Option<&Path>, mode_needs: bool) -> Result<Option<FlowModel<f32>>> {
    match path {
        Some(p) => FlowModel::load(p).map(Some),
        None if mode_needs => Err(Error::Config("this mode needs --checkpoint".into())),
        None => Ok(None),
    }
}

fn load_pairs(cfg: &FileConfig, d: &DataArgs) -> Result<Vec<TrainingPair>> {
    if let Some(n) = d.synth {
        return synth_mix(n, d.data_seed, &cfg.synth);
    }
    if let Some(m) = &d.manifest {
        let manifest = DatasetManifest::load(m)?;
        let mut records = Vec::new();
        for src in &manifest.sources {
            records.extend(parse_trajectory_file(src, &manifest)?);
        }
        let (pairs, skipped) = extract_training_pairs(
            &records,
            cfg.arch.horizon,
            cfg.arch.history,
            cfg.arch.dt,
            d.window_stride,
        )?;
        eprintln!(
            "{} pairs from {} tracks ({} too short)",
            pairs.len(),
            records.len(),
            skipped
        );
        return Ok(pairs);
    }
    if let Some(s) = &d.shards {
        return read_pairs(BufReader::new(fs::File::open(s)?));
    }
    Err(Error::Config("give one of --synth, --manifest or --shards".into()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = a.cfg.load()?;
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if a.time_budget.is_some() {
        cfg.train.time_budget_s = a.time_budget;
    }
    let pairs = load_pairs(&cfg, &a.data)?;
    let norm = Normalization::fit(&pairs)?;
    let mut model = FlowModel::<f32>::new(cfg.arch, norm, cfg.train.seed)?;
    let report = train(&mut model, &pairs, &cfg.train)?;
    model.save(&a.out)?;
    let csv = a.loss_csv.clone().unwrap_or_else(|| a.out.with_extension("loss.csv"));
    write_text(&csv, &report.to_csv())?;
    let last = report.curve.last();
    eprintln!(
        "trained {} steps on {} pairs in {:.1}s, final loss {}",
        report.steps_run,
        pairs.len(),
        report.elapsed_s,
        last.map_or("n/a".into(), |p| format!("{:.4}", p.total))
    );
    Ok(())
}

fn cmd_prepare(a: &PrepareArgs) -> Result<()> {
    let cfg = a.cfg.load()?;
    let pairs = load_pairs(&cfg, &a.data)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_pairs(BufWriter::new(fs::File::create(&a.out)?), &pairs)?;
    eprintln!("wrote {} pairs to {}", pairs.len(), a.out.display());
    Ok(())
}

/// Closed loop advanced `steps` steps under `planner`.
fn advance<'a>(
    scenario: &'a Scenario,
    planner: &PlannerConfig,
    model: Option<&FlowModel<f32>>,
    cfg: &FileConfig,
    steps: usize,
) -> Result<ClosedLoop<'a>> {
    let mut l = ClosedLoop::new(scenario, planner, model, &cfg.sim)?;
    for _ in 0..steps {
        if l.finished() {
            break;
        }
        l.step()?;
    }
    Ok(l)
}

fn planner_cfg(cfg: &FileConfig, mode: PlannerMode, seed: u64, timing: bool) -> PlannerConfig {
    PlannerConfig {
        mode,
        seed,
        record_timing: timing,
        ..cfg.planner.clone()
    }
}

fn cmd_sample(a: &SampleArgs) -> Result<()> {
    let cfg = a.cfg.load()?;
    let model = FlowModel::load(&a.checkpoint)?;
    let scenario = a.scen.scenario(&cfg)?;
    let pc = planner_cfg(&cfg, PlannerMode::CfmMppi, a.scen.planner_seed(), false);
    let l = advance(&scenario, &pc, Some(&model), &cfg, a.at_step)?;
    fs::create_dir_all(&a.out_dir)?;
    let seed = mix(a.scen.planner_seed(), 1 << 32);
    let mut files = vec![("batch.json".to_string(), dumps::guided(&l, &model, &pc, seed)?)];
    if a.prior {
        files.push(("prior_cfm.json".into(), dumps::unguided(&l, &model, &pc, seed)?));
        files.push(("prior_gaussian.json".into(), dumps::gaussian(&l, &pc, seed)?));
    }
    if a.wcbf_sweep {
        for (w, d) in dumps::wcbf_sweep(&l, &model, &pc, seed)? {
            files.push((format!("wcbf_{w}.json"), d));
        }
    }
    if a.warm_sweep {
        for (tau, d) in dumps::warm_sweep(&l, &model, &pc, seed)? {
            files.push((format!("warm_{tau:.1}.json"), d));
        }
    }
    for (name, d) in files {
        write_text(&a.out_dir.join(&name), &dumps::to_json(&d))?;
        eprintln!("wrote {}", a.out_dir.join(&name).display());
    }
    Ok(())
}

fn cmd_plan(a: &PlanArgs) -> Result<()> {
    let cfg = a.cfg.load()?;
    let mode = a.mode.unwrap_or(cfg.planner.mode);
    let model = load_model(a.checkpoint.as_deref(), mode.needs_model())?;
    let scenario = a.scen.scenario(&cfg)?;
    let pc = planner_cfg(&cfg, mode, a.scen.planner_seed(), true);
    let mut l = advance(&scenario, &pc, model.as_ref(), &cfg, a.at_step)?;
    let world = l.world()?;
    let (_, out) = l.step()?;
    let text = dumps::to_json(&dumps::plan(&world, &out, &pc.mppi)?);
    match &a.out {
        Some(p) => write_text(p, &text),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let cfg = a.cfg.load()?;
    let mode = a.mode.unwrap_or(cfg.planner.mode);
    let model = load_model(a.checkpoint.as_deref(), mode.needs_model())?;
    let scenario = a.scen.scenario(&cfg)?;
    let pc = planner_cfg(&cfg, mode, a.scen.planner_seed(), a.timing);
    let log = run_episode(&scenario, &pc, model.as_ref(), &cfg.sim)?;
    write_text(&a.out, &log.to_jsonl())?;
    let s = &log.summary;
    eprintln!(
        "{mode}: {} steps, final distance {:.3} m, reached {}",
        s.steps, s.final_distance, s.reached
    );
    match &s.failure {
        Some(f) => Err(Error::Config(format!("episode aborted: {f}"))),
        None => Ok(()),
    }
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let cfg = a.cfg.load()?;
    let needs = a.methods.iter().any(|m| m.needs_model());
    let model = load_model(a.checkpoint.as_deref(), needs)?;
    let bc = BenchConfig {
        scenarios: a.scenarios,
        master_seed: a.seed,
        methods: a.methods.clone(),
        generator: cfg.generator,
        sim: cfg.sim,
        planner: PlannerConfig {
            record_timing: !a.no_timing,
            ..cfg.planner.clone()
        },
    };
    fs::create_dir_all(&a.out_dir)?;
    let logs = a.logs.then(|| a.out_dir.join("logs"));
    let report = run_bench(&bc, model.as_ref(), logs.as_deref())?;
    write_text(&a.out_dir.join("table.csv"), &report.to_csv())?;
    write_text(&a.out_dir.join("report.json"), &report.to_json())?;
    println!("{}", format_table(&report.rows));
    let failed: Vec<_> = report.episodes.iter().filter(|e| e.failure.is_some()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{} episodes aborted with planner errors",
            failed.len()
        )))
    }
}

fn cmd_export(a: &ExportArgs) -> Result<()> {
    let cfg = a.cfg.load()?;
    let model = FlowModel::load(&a.checkpoint)?;
    let scenario = a.scen.scenario(&cfg)?;
    fs::create_dir_all(&a.out_dir)?;
    let out = |name: &str, text: String| -> Result<()> {
        write_text(&a.out_dir.join(name), &text)?;
        eprintln!("wrote {}", a.out_dir.join(name).display());
        Ok(())
    };

    let mut runs = Vec::new();
    for mode in PlannerMode::ALL {
        let pc = planner_cfg(&cfg, mode, a.scen.planner_seed(), false);
        runs.push((mode, run_episode(&scenario, &pc, Some(&model), &cfg.sim)?));
    }
    out("fig_trajectories.json", dumps::to_json(&dumps::trajectories(&runs)))?;

    let pc = planner_cfg(&cfg, PlannerMode::CfmMppi, a.scen.planner_seed(), false);
    let l = advance(&scenario, &pc, Some(&model), &cfg, a.at_step)?;
    let seed = mix(a.scen.planner_seed(), 1 << 32);
    let priors = vec![
        ("cfm-guided", dumps::guided(&l, &model, &pc, seed)?),
        ("cfm-unguided", dumps::unguided(&l, &model, &pc, seed)?),
        ("gaussian", dumps::gaussian(&l, &pc, seed)?),
    ];
    out("fig_priors.json", dumps::to_json(&priors))?;
    out(
        "fig_wcbf.json",
        dumps::to_json(&dumps::wcbf_sweep(&l, &model, &pc, seed)?),
    )?;
    out(
        "fig_warm_start.json",
        dumps::to_json(&dumps::warm_sweep(&l, &model, &pc, seed)?),
    )?;

    if let Some(p) = &a.bench_json {
        let text = fs::read_to_string(p)?;
        let report: flowmppi_core::bench::BenchReport = serde_json::from_str(&text)?;
        out("table.csv", report.to_csv())?;
    }
    let prov = Provenance::new(&cfg, Some(&model), a.scen.seed, false);
    out("provenance.txt", prov.comment_lines())?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::PrepareData(a) => cmd_prepare(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::ExportPlotData(a) => cmd_export(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
