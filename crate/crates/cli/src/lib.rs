//! Command implementations behind the `gridarena` binary.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use gridarena::agents::{assess_scenario, run_episode, Agent, ConstantTopologyAgent, DoNothingAgent, GreedyAgent};
use gridarena::grid::apply_action;
use gridarena::oracle::{enumerate_topologies, solve_oracle, ActionDictionary, DEFAULT_TOPOLOGY_CAP};
use gridarena::report::{action_depth_trace, action_usage, overload_histogram, score_report};
use gridarena::scenario::{self, GenerationConfig};
use gridarena::{load_case, Action, EpisodeRecord, GridCase, Mode, OracleRecord, RuleParams, Scenario, Topology};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 1;
pub const EXIT_GAME_OVER: u8 = 2;
pub const EXIT_BUDGET: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "gridarena", version, about = "Topology-control arena for transmission grids")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an agent over one or more scenarios and write episode records.
    Run(RunArgs),
    /// Generate synthetic scenarios.
    Generate(GenerateArgs),
    /// Calibrate thermal limits from do-nothing runs and write a new case.
    Calibrate(CalibrateArgs),
    /// Compute the oracle upper bound and its action course per scenario.
    Oracle(OracleArgs),
    /// Build the normalized leaderboard from episode and oracle records.
    Score(ScoreArgs),
    /// Emit analysis tables from episode records.
    Report(ReportArgs),
    /// Label scenarios by difficulty and pick a diverse subset.
    Select(SelectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Easy,
    Hard,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Easy => Mode::Easy,
            ModeArg::Hard => Mode::Hard,
        }
    }
}

#[derive(Debug, Args)]
pub struct CaseArg {
    /// Case file; the built-in 14-bus case when omitted.
    #[arg(long)]
    pub case: Option<PathBuf>,
}

impl CaseArg {
    fn load(&self) -> Result<GridCase> {
        match &self.case {
            Some(p) => Ok(load_case(p)?),
            None => Ok(GridCase::ieee14()),
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub case: CaseArg,
    /// A scenario directory or a directory of scenario directories.
    #[arg(long)]
    pub scenario_dir: PathBuf,
    /// `dn`, `greedy` or `dn-tau:<file>` (JSON list of actions from the
    /// reference topology).
    #[arg(long, default_value = "dn")]
    pub agent: String,
    #[arg(long, value_enum, default_value = "hard")]
    pub mode: ModeArg,
    /// Seconds of agent time per episode; 10 × the do-nothing episode
    /// runtime when omitted.
    #[arg(long)]
    pub time_budget: Option<f64>,
    /// Seed for stochastic agents; the shipped agents are deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Greedy candidate actions (JSON list); the default oracle dictionary
    /// plus every single line switch when omitted.
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    /// Keep wall-clock time in the records (makes output non-reproducible).
    #[arg(long)]
    pub record_timing: bool,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub case: CaseArg,
    /// TOML generation parameters; defaults for missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Timesteps per scenario (288 per day).
    #[arg(long, default_value_t = 288)]
    pub horizon: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; one sub-directory per scenario.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub case: CaseArg,
    #[arg(long)]
    pub scenarios: PathBuf,
    /// Comma-separated line ids; the West corridor of the 14-bus case by
    /// default.
    #[arg(long, value_delimiter = ',', default_value = "5,10,13")]
    pub target_lines: Vec<u32>,
    #[arg(long, default_value_t = 0.03)]
    pub rate: f64,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub case: CaseArg,
    #[arg(long)]
    pub scenario_dir: PathBuf,
    /// JSON list of unitary actions; the default 14-bus dictionary when
    /// omitted.
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    /// Ignore cooldowns (looser bound, smaller graph).
    #[arg(long)]
    pub relaxed: bool,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Rules for the reward chains. Only easy mode yields an exact,
    /// replayable upper bound; hard-mode chains may trip lines and give a
    /// heuristic value.
    #[arg(long, value_enum, default_value = "easy")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = DEFAULT_TOPOLOGY_CAP)]
    pub max_topologies: usize,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Episode record files (JSON lines).
    #[arg(long, num_args = 1.., required = true)]
    pub records: Vec<PathBuf>,
    /// Do-nothing records, normally from an easy-mode run.
    #[arg(long)]
    pub dn_record: PathBuf,
    #[arg(long)]
    pub oracle_record: PathBuf,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    OverloadHistogram,
    ActionUsage,
    ActionDepth,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub records: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: ReportKind,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub case: CaseArg,
    #[arg(long)]
    pub scenario_dir: PathBuf,
    #[arg(long)]
    pub count: usize,
    /// Constant-topology baselines: one per dictionary action.
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

/// Runs a parsed command and returns the process exit code.
pub fn execute(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Generate(a) => cmd_generate(&a).map(|_| EXIT_OK),
        Command::Calibrate(a) => cmd_calibrate(&a).map(|_| EXIT_OK),
        Command::Oracle(a) => cmd_oracle(&a).map(|_| EXIT_OK),
        Command::Score(a) => cmd_score(&a).map(|_| EXIT_OK),
        Command::Report(a) => cmd_report(&a).map(|_| EXIT_OK),
        Command::Select(a) => cmd_select(&a).map(|_| EXIT_OK),
    }
}

fn open_out(path: &Path) -> Result<Box<dyn Write>> {
    if path.as_os_str() == "-" {
        return Ok(Box::new(io::stdout().lock()));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(Box::new(io::BufWriter::new(f)))
}

fn write_jsonl<T: Serialize>(out: &mut dyn Write, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut *out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads one JSON document per non-empty line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.with_context(|| format!("cannot read {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).with_context(|| format!("{}: line {}", path.display(), i + 1))?;
        out.push(item);
    }
    Ok(out)
}

fn read_actions(path: &Path) -> Result<Vec<Action>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot open {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{}: expected a JSON list of actions", path.display()))
}

fn load_dictionary(case: &GridCase, path: Option<&Path>) -> Result<ActionDictionary> {
    match path {
        Some(p) => {
            let actions = read_actions(p)?;
            ActionDictionary::new(case, actions).with_context(|| format!("{}: invalid dictionary", p.display()))
        }
        None => Ok(ActionDictionary::new(case, gridarena::oracle::ieee14_default_actions())
            .context("the default dictionary targets the built-in 14-bus case; pass --dictionary")?),
    }
}

fn load_scenarios(case: &GridCase, dir: &Path) -> Result<Vec<Arc<Scenario>>> {
    let scenarios = scenario::read_scenarios(dir, case)?;
    if scenarios.is_empty() {
        bail!("{}: no scenario directories (with a `meta` file) found", dir.display());
    }
    Ok(scenarios.into_iter().map(Arc::new).collect())
}

/// Greedy default: oracle dictionary plus every single line switch.
pub fn default_greedy_candidates(case: &GridCase) -> Result<Vec<Action>> {
    let mut actions = load_dictionary(case, None)?.actions().to_vec();
    for line in case.lines() {
        let a = Action::SwitchLine { line: line.id };
        if !actions.contains(&a) {
            actions.push(a);
        }
    }
    Ok(actions)
}

fn make_agent(spec: &str, case: &GridCase, dictionary: Option<&Path>) -> Result<Box<dyn Agent>> {
    if spec == "dn" {
        return Ok(Box::new(DoNothingAgent));
    }
    if spec == "greedy" {
        let candidates = match dictionary {
            Some(p) => load_dictionary(case, Some(p))?.actions().to_vec(),
            None => default_greedy_candidates(case)?,
        };
        return Ok(Box::new(GreedyAgent::new(candidates)));
    }
    if let Some(file) = spec.strip_prefix("dn-tau:") {
        let path = Path::new(file);
        let mut target = Topology::reference(case);
        for a in read_actions(path)? {
            target = apply_action(case, &target, &a).with_context(|| format!("{}: action `{a}`", path.display()))?;
        }
        let label = format!("dn-tau:{}", path.file_stem().map_or_else(|| file.into(), |s| s.to_string_lossy()));
        return Ok(Box::new(ConstantTopologyAgent::new(target, label)));
    }
    bail!("unknown agent `{spec}` (expected dn, greedy or dn-tau:<file>)")
}

/// Wall-clock time of a full do-nothing episode.
fn dn_runtime(case: &Arc<GridCase>, scenario: &Arc<Scenario>, mode: Mode) -> Result<Duration> {
    let start = Instant::now();
    run_episode(&mut DoNothingAgent, case.clone(), scenario.clone(), mode, None)?;
    Ok(start.elapsed())
}

pub fn cmd_run(args: &RunArgs) -> Result<u8> {
    let case = Arc::new(args.case.load()?);
    let scenarios = load_scenarios(&case, &args.scenario_dir)?;
    let mode = Mode::from(args.mode);
    if let Some(b) = args.time_budget {
        if !(b >= 0.0 && b.is_finite()) {
            bail!("--time-budget must be a non-negative number of seconds, got {b}");
        }
    }
    let mut records = Vec::with_capacity(scenarios.len());
    for s in &scenarios {
        let mut agent = make_agent(&args.agent, &case, args.dictionary.as_deref())?;
        let budget = match args.time_budget {
            Some(b) => Duration::from_secs_f64(b),
            None => dn_runtime(&case, s, mode)? * 10,
        };
        let mut record = run_episode(agent.as_mut(), case.clone(), s.clone(), mode, Some(budget))
            .with_context(|| format!("scenario `{}`", s.id))?;
        if !args.record_timing {
            record.time_consumed_s = None;
        }
        records.push(record);
    }
    write_jsonl(open_out(&args.out)?.as_mut(), &records)?;
    Ok(if records.iter().any(|r| r.budget_exceeded) {
        EXIT_BUDGET
    } else if records.iter().any(|r| r.game_over_step.is_some()) {
        EXIT_GAME_OVER
    } else {
        EXIT_OK
    })
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let case = args.case.load()?;
    let config: GenerationConfig = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot open {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("{}: invalid generation config", p.display()))?
        }
        None => GenerationConfig::default(),
    };
    let scenarios = scenario::generate_set(&case, &config, args.count, args.horizon, args.seed)?;
    for s in &scenarios {
        scenario::write_scenario(&args.out.join(&s.id), &case, s)?;
    }
    Ok(())
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<()> {
    let case = args.case.load()?;
    let scenarios: Vec<Scenario> = scenario::read_scenarios(&args.scenarios, &case)?;
    let calibrated = scenario::calibrate_thermal_limits(&case, &scenarios, &args.target_lines, args.rate)?;
    let mut out = open_out(&args.out)?;
    out.write_all(calibrated.to_case_string().as_bytes())?;
    out.flush()?;
    Ok(())
}

pub fn cmd_oracle(args: &OracleArgs) -> Result<()> {
    let case = Arc::new(args.case.load()?);
    let scenarios = load_scenarios(&case, &args.scenario_dir)?;
    let dictionary = load_dictionary(&case, args.dictionary.as_deref())?;
    let space = enumerate_topologies(&case, &dictionary, args.max_topologies)?;
    let mut records: Vec<OracleRecord> = Vec::with_capacity(scenarios.len());
    for s in &scenarios {
        let r = solve_oracle(
            &case,
            s,
            &space,
            args.mode.into(),
            RuleParams::default(),
            args.relaxed,
            args.cache_dir.as_deref(),
        )
        .with_context(|| format!("scenario `{}`", s.id))?;
        records.push(r);
    }
    write_jsonl(open_out(&args.out)?.as_mut(), &records)
}

pub fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let mut records: Vec<EpisodeRecord> = Vec::new();
    for p in &args.records {
        records.extend(read_jsonl::<EpisodeRecord>(p)?);
    }
    let dn: Vec<EpisodeRecord> = read_jsonl(&args.dn_record)?;
    let oracle: Vec<OracleRecord> = read_jsonl(&args.oracle_record)?;
    let report = score_report(&records, &dn, &oracle)?;
    report.write_csv(open_out(&args.out)?)?;
    Ok(())
}

pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    let mut records: Vec<EpisodeRecord> = Vec::new();
    for p in &args.records {
        records.extend(read_jsonl::<EpisodeRecord>(p)?);
    }
    let out = open_out(&args.out)?;
    match args.kind {
        ReportKind::OverloadHistogram => overload_histogram(&records, out)?,
        ReportKind::ActionUsage => action_usage(&records, out)?,
        ReportKind::ActionDepth => action_depth_trace(&records, out)?,
    }
    Ok(())
}

pub fn cmd_select(args: &SelectArgs) -> Result<()> {
    let case = Arc::new(args.case.load()?);
    let scenarios = load_scenarios(&case, &args.scenario_dir)?;
    let targets = load_dictionary(&case, args.dictionary.as_deref())?.single_action_topologies(&case);
    let pool = scenarios
        .iter()
        .map(|s| assess_scenario(&case, s, &targets).with_context(|| format!("scenario `{}`", s.id)))
        .collect::<Result<Vec<_>>>()?;
    let picked = scenario::select_scenarios(&pool, args.count)?;
    write_jsonl(open_out(&args.out)?.as_mut(), &picked)
}
