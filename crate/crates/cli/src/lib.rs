//! Command implementations behind the `dekl` binary.
//!
//! Every command returns the JSON document it prints; the binary decides
//! where it goes and maps [`CliError`] to an exit code.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use dekl::ground::{ground, load_data, load_dataset, DataNodeGraph, Grounding, ScoreVector};
use dekl::ilp::{compile, emit_lp, solve, violations, SolveError, SolverConfig};
use dekl::lclang::{parse, Domain, ParseError};
use dekl::program::{init_params, Program, ProgramError, ProgramSpec, Strategy};
use dekl::train::ParameterStore;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: files, flags, configuration or data.
    #[error("{0}")]
    User(String),
    /// The problem has no solution or the solver gave up.
    #[error("{0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Solver(_) => 2,
        }
    }
}

fn user(e: impl std::fmt::Display) -> CliError {
    CliError::User(e.to_string())
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<ProgramError> for CliError {
    fn from(e: ProgramError) -> Self {
        match e {
            ProgramError::Solve { .. } => CliError::Solver(e.to_string()),
            other => CliError::User(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dekl", version, about = "Concept graphs and logical constraints: exact ILP inference and constraint-aware training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Write the JSON result here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a declaration file and check schema and constraints.
    Validate {
        #[arg(long)]
        dsl: PathBuf,
    },
    /// Lower the grounded constraints of one sample to a 0-1 ILP.
    Compile {
        #[command(flatten)]
        input: InferInput,
        /// Also write the model in LP format.
        #[arg(long)]
        emit_lp: Option<PathBuf>,
    },
    /// Solve the ILP of one sample and report the assignment.
    Infer {
        #[command(flatten)]
        input: InferInput,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Train a model as described by a config file.
    Train {
        #[command(flatten)]
        run: RunFlags,
    },
    /// Evaluate trained parameters on the test split of a config file.
    Eval {
        #[command(flatten)]
        run: RunFlags,
    },
}

#[derive(Debug, Args)]
pub struct InferInput {
    #[arg(long)]
    pub dsl: PathBuf,
    /// One sample as JSON.
    #[arg(long)]
    pub data: PathBuf,
    /// Scores as `{node: {concept: p}}`.
    #[arg(long, required_unless_present = "uniform", conflicts_with = "uniform")]
    pub scores: Option<PathBuf>,
    /// Score every decision 0.5.
    #[arg(long)]
    pub uniform: bool,
}

#[derive(Debug, Args)]
pub struct SolverFlags {
    /// Branch-and-bound node budget.
    #[arg(long)]
    pub node_limit: Option<u64>,
    #[arg(long)]
    pub time_limit_ms: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunFlags {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_lambda: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Run configuration. Relative paths are resolved against the file's directory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dsl: PathBuf,
    #[serde(default)]
    pub train: Option<PathBuf>,
    #[serde(default)]
    pub dev: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Parameters written by `train` and read by `eval`.
    pub params: PathBuf,
    /// Optional starting point for `train`, e.g. a pre-trained model.
    #[serde(default)]
    pub init_params: Option<PathBuf>,
    /// Where `train` writes its epoch log and test report.
    #[serde(default)]
    pub metrics: Option<PathBuf>,
    #[serde(default)]
    pub poi: Vec<String>,
    #[serde(default)]
    pub strategy: Option<Strategy>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub lr_lambda: Option<f64>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub solver: Option<SolverConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read(path)?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.dsl);
        fix(&mut cfg.params);
        for p in [&mut cfg.train, &mut cfg.dev, &mut cfg.test, &mut cfg.init_params, &mut cfg.metrics].into_iter().flatten() {
            fix(p);
        }
        Ok(cfg)
    }

    /// Program settings, with command-line flags taking precedence.
    pub fn spec(&self, flags: &RunFlags) -> Result<ProgramSpec, CliError> {
        let strategy = flags
            .strategy
            .or(self.strategy)
            .ok_or_else(|| CliError::User("no strategy given in the config or with --strategy".into()))?;
        let mut spec = ProgramSpec::new(strategy);
        spec.poi = self.poi.clone();
        spec.lambda = flags.lambda.or(self.lambda);
        spec.lr = flags.lr.or(self.lr).unwrap_or(spec.lr);
        spec.lr_lambda = flags.lr_lambda.or(self.lr_lambda);
        spec.epochs = flags.epochs.or(self.epochs).unwrap_or(0);
        spec.seed = flags.seed.or(self.seed).unwrap_or(0);
        spec.jobs = flags.jobs.or(self.jobs).unwrap_or(0);
        spec.solver = self.solver.clone().unwrap_or_default();
        Ok(spec)
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::User(format!("{}: {e}", path.display())))
}

fn write(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::User(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, content).map_err(|e| CliError::User(format!("{}: {e}", path.display())))
}

fn parse_kind(e: &ParseError) -> &'static str {
    match e {
        ParseError::Syntax { .. } => "syntax",
        ParseError::Schema { .. } => "schema",
        ParseError::UnknownConcept { .. } => "unknown_concept",
        ParseError::UnboundVariable { .. } => "unbound_variable",
        ParseError::BadPath { .. } => "bad_path",
        ParseError::Invalid { .. } => "invalid",
    }
}

pub fn load_domain(path: &Path) -> Result<Domain, CliError> {
    parse(&read(path)?).map_err(|e| CliError::User(format!("{}:{e}", path.display())))
}

/// `validate`: the JSON report and whether the file is clean.
pub fn cmd_validate(dsl: &Path) -> Result<(Value, bool), CliError> {
    let src = read(dsl)?;
    match parse(&src) {
        Ok(domain) => {
            let report = domain.report();
            let warnings: Vec<String> = report.warnings().map(|w| w.message.clone()).collect();
            for w in &warnings {
                log::warn!("{}: {w}", dsl.display());
            }
            let v = json!({
                "ok": true,
                "concepts": domain.graph.concepts().len(),
                "decision_concepts": domain.graph.decision_concepts().map(|c| c.name.clone()).collect::<Vec<_>>(),
                "constraints": domain.constraints.iter().map(|c| json!({"id": c.id, "line": c.line})).collect::<Vec<_>>(),
                "warnings": warnings,
            });
            Ok((v, true))
        }
        Err(e) => {
            let (line, col) = e.position().unwrap_or((0, 0));
            let message = e.to_string();
            let message = message.splitn(3, ':').nth(2).map(str::trim).unwrap_or(&message).to_string();
            let v = json!({
                "ok": false,
                "error": {"kind": parse_kind(&e), "line": line, "col": col, "message": message},
            });
            Ok((v, false))
        }
    }
}

struct Instance {
    dng: DataNodeGraph,
    grounding: Grounding,
    scores: ScoreVector,
}

fn instance(input: &InferInput) -> Result<Instance, CliError> {
    let domain = load_domain(&input.dsl)?;
    let dng = load_data(&read(&input.data)?, &domain.graph).map_err(user)?;
    let grounding = ground(&domain.graph, &domain.constraints, &dng).map_err(user)?;
    let scores = match &input.scores {
        Some(path) => {
            let map: BTreeMap<String, BTreeMap<String, f64>> =
                serde_json::from_str(&read(path)?).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
            ScoreVector::from_nested(&grounding.index, &map).map_err(user)?
        }
        None => ScoreVector::uniform(grounding.index.len()),
    };
    Ok(Instance { dng, grounding, scores })
}

/// `compile`: model summary, plus the LP text when `emit_lp` is given.
pub fn cmd_compile(input: &InferInput, emit_lp_path: Option<&Path>) -> Result<Value, CliError> {
    let inst = instance(input)?;
    let model = compile(&inst.grounding, &inst.scores).map_err(user)?;
    log::info!(
        "{} nodes, {} grounded constraints, {} variables, {} rows",
        inst.dng.len(),
        inst.grounding.constraints.len(),
        model.num_vars(),
        model.rows.len()
    );
    if let Some(path) = emit_lp_path {
        write(path, &emit_lp(&model))?;
    }
    Ok(serde_json::to_value(&model).expect("model serializes"))
}

/// `infer`: the optimal assignment per node and concept.
pub fn cmd_infer(input: &InferInput, solver: &SolverConfig) -> Result<Value, CliError> {
    let inst = instance(input)?;
    let model = compile(&inst.grounding, &inst.scores).map_err(user)?;
    let a = solve(&model, solver)?;
    let decisions = &a.values[..model.num_decision];
    Ok(json!({
        "assignment": inst.grounding.index.to_nested(decisions),
        "objective": a.objective,
        "verified": a.verified,
        "violations": violations(&inst.grounding, decisions),
    }))
}

fn load_split(path: Option<&PathBuf>, domain: &Domain, what: &str) -> Result<Vec<DataNodeGraph>, CliError> {
    let path = path.ok_or_else(|| CliError::User(format!("the config names no {what} data")))?;
    load_dataset(&read(path)?, &domain.graph).map_err(|e| CliError::User(format!("{}: {e}", path.display())))
}

fn load_params(path: &Path) -> Result<ParameterStore, CliError> {
    ParameterStore::from_json(&read(path)?).map_err(|e| CliError::User(format!("{}: {e}", path.display())))
}

/// `train`: writes the parameters and, if configured, the metrics file.
pub fn cmd_train(flags: &RunFlags) -> Result<Value, CliError> {
    let cfg = RunConfig::load(&flags.config)?;
    let domain = load_domain(&cfg.dsl)?;
    let spec = cfg.spec(flags)?;
    let train = load_split(cfg.train.as_ref(), &domain, "train")?;
    let dev = cfg.dev.as_ref().map(|p| load_split(Some(p), &domain, "dev")).transpose()?;
    let mut params = match &cfg.init_params {
        Some(p) => load_params(p)?,
        None => init_params(&domain, &train, spec.seed),
    };
    let program = Program::new(domain, spec)?;
    let epochs = program.train(&mut params, &train, dev.as_deref())?;
    let test = match &cfg.test {
        Some(p) => Some(program.test(&params, &load_split(Some(p), &program.domain, "test")?)?),
        None => None,
    };
    write(&cfg.params, &(params.to_json() + "\n"))?;
    let mut result = json!({"strategy": program.spec.strategy, "epochs": epochs});
    if let Some(t) = test {
        result["test"] = serde_json::to_value(t).expect("report serializes");
    }
    if let Some(m) = &cfg.metrics {
        write(m, &(serde_json::to_string_pretty(&result).expect("json") + "\n"))?;
    }
    Ok(result)
}

/// `eval`: test-split metrics of the saved parameters.
pub fn cmd_eval(flags: &RunFlags) -> Result<Value, CliError> {
    let cfg = RunConfig::load(&flags.config)?;
    let domain = load_domain(&cfg.dsl)?;
    let spec = cfg.spec(flags)?;
    let params = load_params(&cfg.params)?;
    let test = load_split(cfg.test.as_ref(), &domain, "test")?;
    let program = Program::new(domain, spec)?;
    Ok(serde_json::to_value(program.test(&params, &test)?).expect("report serializes"))
}

/// Runs one parsed command line and returns the JSON to print.
/// `validate` on a broken file yields its report together with an error.
pub fn run(cli: &Cli) -> Result<Value, (Option<Value>, CliError)> {
    let plain = |r: Result<Value, CliError>| r.map_err(|e| (None, e));
    match &cli.command {
        Command::Validate { dsl } => match cmd_validate(dsl) {
            Ok((v, true)) => Ok(v),
            Ok((v, false)) => {
                let e = &v["error"];
                let msg = format!("{}:{}:{}: {}", dsl.display(), e["line"], e["col"], e["message"].as_str().unwrap_or("invalid"));
                Err((Some(v), CliError::User(msg)))
            }
            Err(e) => Err((None, e)),
        },
        Command::Compile { input, emit_lp } => plain(cmd_compile(input, emit_lp.as_deref())),
        Command::Infer { input, solver } => {
            let mut cfg = SolverConfig::default();
            if let Some(n) = solver.node_limit {
                cfg.node_limit = n;
            }
            cfg.time_limit_ms = solver.time_limit_ms;
            plain(cmd_infer(input, &cfg))
        }
        Command::Train { run } => plain(cmd_train(run)),
        Command::Eval { run } => plain(cmd_eval(run)),
    }
}

/// Prints or saves `value`.
pub fn emit(value: &Value, out: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("json") + "\n";
    match out {
        Some(p) => write(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
