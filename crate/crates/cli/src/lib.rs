//! `plume-scout` command-line front end.

pub mod report;
pub mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use plume_scout::agent::{load_checkpoint, C51Agent, StateEncoder};
use plume_scout::harness::{
    env_config, evaluate_policy, run_random_baseline, run_training, sweep, write_sweep, EvalStats, Method,
    RunConfig, SweepAxes,
};
use plume_scout::{Env, ScenarioFile};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] plume_scout::Error),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("{0}")]
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use plume_scout::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Diverged(_) => EXIT_DIVERGED,
            CliError::Io { .. } => EXIT_IO,
            CliError::Core(e) => match e {
                E::Numeric(_) => EXIT_DIVERGED,
                E::Io(_) => EXIT_IO,
                E::ContractViolation(_) => 1,
                _ => EXIT_USAGE,
            },
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

#[derive(Debug, Parser)]
#[command(name = "plume-scout", version, about = "Budgeted multi-drone sensing with data assimilation and C51 learners")]
pub struct Cli {
    /// More diagnostics on stderr (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a scenario JSON file.
    MakeScenario(MakeScenarioArgs),
    /// Train independent learners over one or more seeds.
    Train(TrainArgs),
    /// Evaluate saved agent checkpoints.
    Eval(EvalArgs),
    /// Random-flight baseline statistics.
    Baseline(BaselineArgs),
    /// Cartesian sweep over alpha, budget, fleet size and method.
    Sweep(SweepArgs),
    /// Render SVG charts and markdown tables from result CSVs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct MakeScenarioArgs {
    #[arg(long, default_value = "paperlike", value_parser = ["paperlike"])]
    pub preset: String,
    /// Grid shape as ROWSxCOLS; plume sources are rescaled into it.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<(usize, usize)>,
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Shared per-drone flight budget in metres.
    #[arg(long)]
    pub budget: Option<f64>,
    /// Background ensemble seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short = 'o', long = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Overrides the scenario's budget (metres per drone).
    #[arg(long)]
    pub budget: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub steps: u64,
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3, 4, 5])]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 1000)]
    pub eval_period: u64,
    #[arg(long, default_value_t = 10)]
    pub eval_episodes: usize,
    #[arg(long, default_value_t = 1000)]
    pub warmup: u64,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Draw a fresh background for each training seed.
    #[arg(long)]
    pub redraw_background: bool,
    #[arg(long, env = "PLUME_SCOUT_WORKERS", default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 2)]
    pub agents: usize,
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// A seed directory holding agent_<i>.ckpt files, or a run directory of them.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to the scenario recorded in the run's manifest.json.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub budget: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub agents: usize,
    #[arg(long)]
    pub budget: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',')]
    pub alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub budgets: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub agents_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "da-diff")]
    pub methods: Vec<Method>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// learning_curve.csv or summary.csv files.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected ROWSxCOLS, got '{s}'"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad grid dimension '{v}': {e}"));
    let (r, c) = (parse(r)?, parse(c)?);
    if r == 0 || c == 0 {
        return Err("grid dimensions must be positive".into());
    }
    Ok((r, c))
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: plume_scout::Error| e.to_string())
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::MakeScenario(a) => make_scenario(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Baseline(a) => baseline(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Report(a) => report_cmd(a),
    }
}

/// Creates `dir`, refusing a non-empty one unless `force`. Failing to create
/// the requested location is a usage error, not a runtime I/O failure.
fn prepare_out_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.is_file() {
        return Err(CliError::Usage(format!("--out {} is a file, expected a directory", dir.display())));
    }
    if dir.is_dir() {
        let non_empty = fs::read_dir(dir).map_err(io_err(dir.display().to_string()))?.next().is_some();
        if non_empty && !force {
            return Err(CliError::Usage(format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
        return Ok(());
    }
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Usage(format!("cannot create output directory {}: {e}", dir.display())))
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist", path.display())))
    }
}

fn load_scenario(path: &Path) -> CliResult<(ScenarioFile, PathBuf)> {
    require_file(path, "scenario")?;
    Ok(ScenarioFile::load(path)?)
}

fn make_scenario(a: MakeScenarioArgs) -> CliResult<()> {
    let mut file = ScenarioFile::paperlike();
    if let Some((rows, cols)) = a.grid {
        let (old_r, old_c) = (file.grid.rows, file.grid.cols);
        let rescale = |k: usize, old: usize, new: usize| {
            if old > 1 && new > 1 {
                ((k as f64) * (new - 1) as f64 / (old - 1) as f64).round() as usize
            } else {
                0
            }
        };
        if let plume_scout::scenario_file::TruthSection::Plume(p) = &mut file.truth {
            for s in &mut p.sources {
                s.row = rescale(s.row, old_r, rows);
                s.col = rescale(s.col, old_c, cols);
            }
        }
        file.grid.rows = rows;
        file.grid.cols = cols;
    }
    if let Some(s) = a.spacing {
        file.grid.spacing_m = s;
    }
    if let Some(alpha) = a.alpha {
        file.covariance.alpha = alpha;
    }
    if let Some(b) = a.budget {
        file.episode.budget_m = plume_scout::scenario_file::BudgetSpec::Shared(b);
    }
    if let Some(seed) = a.seed {
        file.background.seed = seed;
    }
    file.validate()?;
    if a.out.exists() && !a.force {
        return Err(CliError::Usage(format!("{} exists; pass --force to overwrite", a.out.display())));
    }
    let json = file.to_json()?;
    fs::write(&a.out, json + "\n")
        .map_err(|e| CliError::Usage(format!("cannot write scenario to {}: {e}", a.out.display())))?;
    log::info!("wrote {} ({}x{} grid)", a.out.display(), file.grid.rows, file.grid.cols);
    Ok(())
}

fn run_config(run: &RunArgs, scenario: ScenarioFile, dir: PathBuf, agents: usize, method: Method) -> RunConfig {
    let mut cfg = RunConfig::new(scenario, agents, method);
    cfg.scenario_dir = dir;
    cfg.budget_m = run.budget;
    cfg.alpha = run.alpha;
    cfg.total_steps = run.steps;
    cfg.seeds = run.seeds.clone();
    cfg.eval_period = run.eval_period;
    cfg.eval_episodes = run.eval_episodes;
    cfg.warmup_steps = run.warmup;
    cfg.redraw_background = run.redraw_background;
    cfg.workers = run.workers;
    if let Some(lr) = run.lr {
        cfg.agent.adam.lr = lr;
    }
    cfg
}

fn train(a: TrainArgs) -> CliResult<()> {
    let (scenario, dir) = load_scenario(&a.run.scenario)?;
    let cfg = run_config(&a.run, scenario, dir, a.agents, a.method);
    cfg.validate()?;
    prepare_out_dir(&a.run.out, a.run.force)?;
    let run = run_training(&cfg)?;
    run.write(&a.run.out)?;
    log::info!("{} seeds done in {:.1}s", run.seeds.len(), run.wall_clock_s);
    if run.diverged() {
        let failed: Vec<String> = run
            .seeds
            .iter()
            .filter(|s| s.status != plume_scout::harness::SeedStatus::Completed)
            .map(|s| s.seed.to_string())
            .collect();
        return Err(CliError::Diverged(format!("training diverged for seed(s) {}", failed.join(", "))));
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct EpisodeRow<'a> {
    source: &'a str,
    episode: usize,
    final_mae: f64,
    step_mean_mae: f64,
    team_return: f64,
    steps: usize,
}

fn write_episode_csv(path: &Path, stats: &[(String, EvalStats)]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Core(e.into()))?;
    for (source, s) in stats {
        for (episode, m) in s.episodes.iter().enumerate() {
            w.serialize(EpisodeRow {
                source,
                episode,
                final_mae: m.final_mae,
                step_mean_mae: m.step_mean_mae,
                team_return: m.team_return,
                steps: m.steps,
            })
            .map_err(|e| CliError::Core(e.into()))?;
        }
    }
    w.flush().map_err(io_err(path.display().to_string()))
}

fn agent_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for i in 0.. {
        let p = dir.join(format!("agent_{i}.ckpt"));
        if !p.is_file() {
            break;
        }
        files.push(p);
    }
    Ok(files)
}

/// Seed directories (or the directory itself) that hold agent checkpoints.
fn checkpoint_sets(root: &Path) -> CliResult<Vec<(String, Vec<PathBuf>)>> {
    if !root.is_dir() {
        return Err(CliError::Usage(format!("checkpoint directory {} does not exist", root.display())));
    }
    let own = agent_files(root)?;
    if !own.is_empty() {
        return Ok(vec![(root.display().to_string(), own)]);
    }
    let mut sets = Vec::new();
    let mut entries: Vec<_> = fs::read_dir(root)
        .map_err(io_err(root.display().to_string()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for dir in entries {
        let files = agent_files(&dir)?;
        if !files.is_empty() {
            let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            sets.push((name, files));
        }
    }
    if sets.is_empty() {
        return Err(CliError::Usage(format!("no agent_<i>.ckpt files under {}", root.display())));
    }
    Ok(sets)
}

/// Scenario from `--scenario`, else from the nearest run manifest.
fn eval_scenario(a: &EvalArgs) -> CliResult<(ScenarioFile, PathBuf)> {
    if let Some(path) = &a.scenario {
        return load_scenario(path);
    }
    for dir in [a.checkpoint.as_path(), a.checkpoint.parent().unwrap_or(Path::new("."))] {
        let manifest = dir.join("manifest.json");
        if manifest.is_file() {
            let text = fs::read_to_string(&manifest).map_err(io_err(manifest.display().to_string()))?;
            let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Core(e.into()))?;
            let file: ScenarioFile =
                serde_json::from_value(value["resolved_scenario"].clone()).map_err(|e| CliError::Core(e.into()))?;
            let base = value["config"]["scenario_dir"].as_str().map(PathBuf::from).unwrap_or_else(|| ".".into());
            return Ok((file, base));
        }
    }
    Err(CliError::Usage("no --scenario given and no manifest.json next to the checkpoints".into()))
}

fn eval(a: EvalArgs) -> CliResult<()> {
    let sets = checkpoint_sets(&a.checkpoint)?;
    let (mut file, base) = eval_scenario(&a)?;
    if let Some(b) = a.budget {
        file.episode.budget_m = plume_scout::scenario_file::BudgetSpec::Shared(b);
    }
    if a.episodes == 0 {
        return Err(CliError::Usage("--episodes must be positive".into()));
    }
    let scenario = Arc::new(file.build(&base)?);
    prepare_out_dir(&a.out, a.force)?;
    let mut results = Vec::new();
    for (name, files) in sets {
        let agents: Vec<C51Agent> = files
            .iter()
            .map(|p| load_checkpoint(p))
            .collect::<plume_scout::Result<_>>()
            .map_err(|e| match e {
                plume_scout::Error::Io(source) => CliError::Io { context: name.clone(), source },
                other => other.into(),
            })?;
        let env = Env::new(scenario.clone(), env_config(&file, agents.len())?)?;
        let enc = StateEncoder::new(&scenario.background, agents.len())?;
        for (i, agent) in agents.iter().enumerate() {
            if agent.online.input_dim() != enc.dim() || agent.online.num_actions() != scenario.grid().n() {
                return Err(CliError::Usage(format!(
                    "{name}/agent_{i}: checkpoint does not fit this scenario ({} inputs, {} actions; expected {}, {})",
                    agent.online.input_dim(),
                    agent.online.num_actions(),
                    enc.dim(),
                    scenario.grid().n()
                )));
            }
        }
        let stats = evaluate_policy(&agents, &env, a.episodes, a.seed, a.epsilon)?;
        eprintln!("{name}: final MAE {:.4} ± {:.4} over {} episodes", stats.final_mae_mean(), stats.final_mae_std(), a.episodes);
        results.push((name, stats));
    }
    write_episode_csv(&a.out.join("eval.csv"), &results)
}

fn baseline(a: BaselineArgs) -> CliResult<()> {
    let (scenario, dir) = load_scenario(&a.scenario)?;
    let mut cfg = RunConfig::new(scenario, a.agents, Method::Random);
    cfg.scenario_dir = dir;
    cfg.budget_m = a.budget;
    cfg.alpha = a.alpha;
    cfg.seeds = vec![a.seed];
    cfg.validate()?;
    if a.episodes == 0 {
        return Err(CliError::Usage("--episodes must be positive".into()));
    }
    prepare_out_dir(&a.out, a.force)?;
    let scenario = Arc::new(cfg.build_scenario(a.seed)?);
    let env = Env::new(scenario.clone(), cfg.env_config()?)?;
    let stats = run_random_baseline(&env, a.episodes, a.seed)?;
    eprintln!(
        "random baseline: final MAE {:.4} ± {:.4} over {} episodes (background MAE {:.4})",
        stats.final_mae_mean(),
        stats.final_mae_std(),
        a.episodes,
        scenario.background_mae
    );
    write_episode_csv(&a.out.join("baseline.csv"), &[("random".to_string(), stats)])
}

fn run_sweep(a: SweepArgs) -> CliResult<()> {
    let (scenario, dir) = load_scenario(&a.run.scenario)?;
    let n = a.agents_list.first().copied().unwrap_or(2);
    let cfg = run_config(&a.run, scenario, dir, n, a.methods[0]);
    let axes = SweepAxes {
        alphas: a.alphas.clone(),
        budgets_m: a.budgets.clone(),
        num_agents: a.agents_list.clone(),
        methods: a.methods.clone(),
    };
    cfg.validate()?;
    prepare_out_dir(&a.run.out, a.run.force)?;
    let result = sweep(&cfg, &axes)?;
    write_sweep(&result, &a.run.out)?;
    let diverged = result.cells.iter().flat_map(|(_, s)| s).filter(|s| s.status != plume_scout::harness::SeedStatus::Completed).count();
    if diverged > 0 {
        return Err(CliError::Diverged(format!("{diverged} sweep run(s) diverged; see sweep.csv")));
    }
    Ok(())
}

fn report_cmd(a: ReportArgs) -> CliResult<()> {
    let mut rendered = Vec::new();
    for input in &a.input {
        require_file(input, "input")?;
        let text = fs::read_to_string(input).map_err(io_err(input.display().to_string()))?;
        let r = report::render(&text).map_err(|e| CliError::Usage(format!("{}: {e}", input.display())))?;
        if r.rows == 0 {
            log::warn!("{} has no data rows; the chart has axes only", input.display());
            eprintln!("warning: {} has no data rows", input.display());
        }
        let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into());
        rendered.push((stem, r));
    }
    prepare_out_dir(&a.out, a.force)?;
    for (stem, r) in rendered {
        let chart = match r.kind {
            report::ReportKind::LearningCurve => format!("{stem}.svg"),
            report::ReportKind::Summary => format!("{stem}_budget.svg"),
        };
        for (name, body) in [(chart, r.svg), (format!("{stem}.md"), r.markdown)] {
            let path = a.out.join(name);
            fs::write(&path, body).map_err(io_err(path.display().to_string()))?;
        }
    }
    Ok(())
}
