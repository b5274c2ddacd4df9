//! `lrt`: batch front end for register-tiling experiments.
//!
//! Exit codes: 0 success, 2 validation error, 3 infeasible, 4 search budget
//! exhausted before optimality was proven.

use std::fs;
use std::io::Write;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use lrt_core::baseline;
use lrt_core::codegen;
use lrt_core::dfg::{ingest, LoadedInstance, ProblemInstance};
use lrt_core::model::{self, SolutionDoc, TilingSolution};
use lrt_core::oracle::{self, OracleCaps, OracleError};
use lrt_core::solver::{self, SearchConfig, SolveStatus};
use lrt_core::stats::{self, CorpusConfig, StatsRow};

const TIME_BUDGET_ENV: &str = "LRT_TIME_BUDGET_MS";

#[derive(Debug, Parser)]
#[command(name = "lrt", version, about = "Spill-minimizing register tiling for loop bodies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Find a minimum-spill tiling with branch and bound.
    Solve(SolveArgs),
    /// Find the optimum by exhaustive enumeration (at most 7 nodes).
    Oracle(InstanceArgs),
    /// Naive and register-pipelining load counts.
    Baseline(BaselineArgs),
    /// SCC count, original pressure and classification as CSV.
    Stats(StatsArgs),
    /// Evaluate a solution document.
    Cost(SolutionArgs),
    /// Emit the unrolled pseudo-instruction stream of a solution.
    Codegen(CodegenArgs),
    /// Solve across a range of unroll factors.
    Sweep(SweepArgs),
}

/// Instance file plus overrides; flags take precedence over the document.
#[derive(Debug, Args, Serialize)]
struct InstanceArgs {
    #[arg(long)]
    instance: String,
    /// Register limit (overrides `registers`).
    #[arg(long)]
    registers: Option<u32>,
    /// Unroll factor (overrides `unroll`).
    #[arg(long)]
    unroll: Option<u32>,
    /// Largest tile width (overrides `max_width`).
    #[arg(long)]
    max_width: Option<u32>,
}

#[derive(Debug, Args, Serialize)]
struct SearchArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Wall-clock budget; defaults to $LRT_TIME_BUDGET_MS.
    #[arg(long)]
    time_budget_ms: Option<u64>,
    /// Maximum search nodes, 0 for unlimited.
    #[arg(long, default_value_t = 0)]
    node_budget: u64,
    #[arg(long)]
    no_symmetry_breaking: bool,
}

#[derive(Debug, Args, Serialize)]
struct SolveArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Debug, Args, Serialize)]
struct BaselineArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Registers for promoted states; defaults to limit minus the largest comp.
    #[arg(long)]
    budget: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
struct StatsArgs {
    /// Instance files to classify.
    #[arg(long = "instance")]
    instances: Vec<String>,
    /// Classify a generated corpus: `seed,count`.
    #[arg(long, value_parser = parse_seed_count)]
    generate: Option<(u64, usize)>,
    /// Register limit applied to every instance.
    #[arg(long)]
    registers: Option<u32>,
}

#[derive(Debug, Args, Serialize)]
struct SolutionArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long)]
    solution: String,
}

#[derive(Debug, Args, Serialize)]
struct CodegenArgs {
    #[command(flatten)]
    target: SolutionArgs,
    /// Emit even when the solution is infeasible.
    #[arg(long)]
    force: bool,
    /// Structured output instead of pseudo-IR text.
    #[arg(long)]
    emit_json: bool,
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    #[arg(long)]
    instance: String,
    #[arg(long)]
    registers: Option<u32>,
    /// Inclusive range `a..b`.
    #[arg(long, value_parser = parse_range)]
    unroll: (u32, u32),
    /// Largest tile width; defaults to each unroll factor.
    #[arg(long)]
    max_width: Option<u32>,
    #[command(flatten)]
    search: SearchArgs,
}

fn parse_seed_count(s: &str) -> Result<(u64, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected seed,count")?;
    Ok((
        a.trim().parse().map_err(|e| format!("seed: {e}"))?,
        b.trim().parse().map_err(|e| format!("count: {e}"))?,
    ))
}

fn parse_range(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s.split_once("..").ok_or("expected a..b")?;
    let a: u32 = a.trim().parse().map_err(|e| format!("start: {e}"))?;
    let b: u32 = b.trim().parse().map_err(|e| format!("end: {e}"))?;
    if a == 0 || a > b {
        return Err(format!("need 1 <= a <= b, got {a}..{b}"));
    }
    Ok((a, b))
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    subcommand: &'static str,
    inputs: Vec<String>,
    flags: &'a Command,
    seed: u64,
    wall_ms: u128,
    tool_version: &'static str,
}

/// Failure of a subcommand, mapped to an exit code.
#[derive(Debug)]
enum Failure {
    Validation(String),
    Infeasible(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Infeasible(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Validation(_) => "validation",
            Failure::Infeasible(_) => "infeasible",
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Infeasible(m) => m,
        }
    }
}

/// What a subcommand produced.
enum Output {
    Json(Value, u8),
    /// Text for stdout; the manifest goes to stderr.
    Text(String),
}

fn validation(e: impl std::fmt::Display) -> Failure {
    Failure::Validation(e.to_string())
}

fn read(path: &str) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Validation(format!("{path}: {e}")))
}

fn load(args: &InstanceArgs) -> Result<LoadedInstance, Failure> {
    let mut loaded =
        ingest(&read(&args.instance)?).map_err(|e| Failure::Validation(format!("{}: {e}", args.instance)))?;
    loaded.instance = loaded
        .instance
        .with_overrides(args.registers, args.unroll, args.max_width)
        .map_err(validation)?;
    Ok(loaded)
}

fn load_solution(path: &str, inst: &ProblemInstance) -> Result<TilingSolution, Failure> {
    let doc = SolutionDoc::parse(&read(path)?).map_err(|e| Failure::Validation(format!("{path}: {e}")))?;
    doc.to_solution(&inst.graph)
        .map_err(|e| Failure::Validation(format!("{path}: {e}")))
}

fn search_config(args: &SearchArgs) -> Result<SearchConfig, Failure> {
    let budget_ms = match args.time_budget_ms {
        Some(ms) => Some(ms),
        None => match std::env::var(TIME_BUDGET_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|e| Failure::Validation(format!("{TIME_BUDGET_ENV}={v}: {e}")))?,
            ),
            Err(_) => None,
        },
    };
    Ok(SearchConfig {
        seed: args.seed,
        time_budget: budget_ms.map(Duration::from_millis),
        node_budget: args.node_budget,
        symmetry_breaking: !args.no_symmetry_breaking,
    })
}

fn status_code(status: SolveStatus) -> u8 {
    match status {
        SolveStatus::Optimal => 0,
        SolveStatus::Infeasible => 3,
        SolveStatus::FeasibleUnproven => 4,
    }
}

fn instance_json(inst: &ProblemInstance) -> Value {
    json!({
        "name": inst.name,
        "registers": inst.limit,
        "unroll": inst.unroll,
        "max_width": inst.max_width,
        "nodes": inst.node_count(),
    })
}

fn run_solve(args: &SolveArgs) -> Result<Output, Failure> {
    let inst = load(&args.instance)?.instance;
    let out = solver::solve(&inst, &search_config(&args.search)?).map_err(validation)?;
    let mut result = out.to_json(&inst);
    result["instance"] = instance_json(&inst);
    Ok(Output::Json(result, status_code(out.status)))
}

fn run_oracle(args: &InstanceArgs) -> Result<Output, Failure> {
    let inst = load(args)?.instance;
    match oracle::brute_force(&inst, OracleCaps::default()) {
        Ok(res) => {
            let mut result = res.to_json(&inst);
            result["instance"] = instance_json(&inst);
            Ok(Output::Json(result, 0))
        }
        Err(e @ OracleError::NoFeasibleSolution { .. }) => Err(Failure::Infeasible(e.to_string())),
        Err(e) => Err(validation(e)),
    }
}

fn run_baseline(args: &BaselineArgs) -> Result<Output, Failure> {
    let inst = load(&args.instance)?.instance;
    let budget = args
        .budget
        .unwrap_or_else(|| u64::from(inst.limit.saturating_sub(inst.graph.max_comp())));
    let report = baseline::register_pipelining(&inst.graph, budget);
    Ok(Output::Json(
        json!({ "instance": instance_json(&inst), "report": report }),
        0,
    ))
}

fn run_stats(args: &StatsArgs) -> Result<Output, Failure> {
    let mut rows = Vec::new();
    for path in &args.instances {
        let loaded = load(&InstanceArgs {
            instance: path.clone(),
            registers: args.registers,
            unroll: None,
            max_width: None,
        })?;
        rows.push(StatsRow::new(path.clone(), &loaded.raw, &loaded.instance));
    }
    if let Some((seed, count)) = args.generate {
        let docs = stats::generate_corpus(&CorpusConfig {
            seed,
            count,
            ..CorpusConfig::default()
        });
        for (k, doc) in docs.iter().enumerate() {
            let mut loaded = doc.validate().map_err(validation)?;
            if args.registers.is_some() {
                loaded.instance = loaded
                    .instance
                    .with_overrides(args.registers, None, None)
                    .map_err(validation)?;
            }
            rows.push(StatsRow::new(k.to_string(), &loaded.raw, &loaded.instance));
        }
    }
    if rows.is_empty() {
        return Err(Failure::Validation("stats needs --instance or --generate".into()));
    }
    let mut buf = Vec::new();
    stats::write_csv(&rows, &mut buf).map_err(validation)?;
    Ok(Output::Text(String::from_utf8(buf).expect("csv is utf-8")))
}

fn run_cost(args: &SolutionArgs) -> Result<Output, Failure> {
    let inst = load(&args.instance)?.instance;
    let sol = load_solution(&args.solution, &inst)?;
    let cost = model::cost(&sol, &inst);
    let feasibility = model::feasible(&sol, &inst);
    let profile = model::pressure(&sol, &inst);
    Ok(Output::Json(
        json!({
            "instance": instance_json(&inst),
            "spill": cost.spill.to_string(),
            "cost": cost,
            "pressure": profile.points,
            "feasible": feasibility.feasible,
            "violation": feasibility.violation.map(|v| v.to_string()),
        }),
        0,
    ))
}

fn run_codegen(args: &CodegenArgs) -> Result<Output, Failure> {
    let inst = load(&args.target.instance)?.instance;
    let sol = load_solution(&args.target.solution, &inst)?;
    let program = match codegen::generate(&sol, &inst, args.force) {
        Ok(p) => p,
        Err(e @ codegen::CodegenError::Infeasible(_)) => return Err(Failure::Infeasible(e.to_string())),
        Err(e) => return Err(validation(e)),
    };
    let program = codegen::assign_registers(program, inst.limit);
    if args.emit_json {
        Ok(Output::Json(
            json!({
                "instance": instance_json(&inst),
                "program": program,
                "text": program.to_text(),
                "loads": program.load_count(),
            }),
            0,
        ))
    } else {
        Ok(Output::Text(program.to_text()))
    }
}

fn run_sweep(args: &SweepArgs) -> Result<Output, Failure> {
    let base = load(&InstanceArgs {
        instance: args.instance.clone(),
        registers: args.registers,
        unroll: None,
        max_width: None,
    })?
    .instance;
    let cfg = search_config(&args.search)?;
    let (lo, hi) = args.unroll;
    let results: Vec<Result<(Value, SolveStatus), Failure>> = (lo..=hi)
        .into_par_iter()
        .map(|u| {
            let inst = base
                .with_overrides(None, Some(u), Some(args.max_width.unwrap_or(u).min(u)))
                .map_err(validation)?;
            let out = solver::solve(&inst, &cfg).map_err(validation)?;
            let best = out.best.as_ref();
            Ok((
                json!({
                    "unroll": u,
                    "max_width": inst.max_width,
                    "status": out.status,
                    "spill": best.map(|b| b.cost.spill.to_string()),
                    "spill_f64": best.map(|b| b.cost.spill_f64()),
                    "uspill": best.map(|b| b.cost.uspill),
                    "solution": best.map(|b| SolutionDoc::from_solution(&b.solution, &inst.graph)),
                    "stats": out.stats,
                }),
                out.status,
            ))
        })
        .collect();
    let mut rows = Vec::new();
    let mut code = 0;
    for r in results {
        let (row, status) = r?;
        code = code.max(status_code(status));
        rows.push(row);
    }
    Ok(Output::Json(
        json!({ "instance": base.name, "registers": base.limit, "sweep": rows }),
        code,
    ))
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::Oracle(_) => "oracle",
            Command::Baseline(_) => "baseline",
            Command::Stats(_) => "stats",
            Command::Cost(_) => "cost",
            Command::Codegen(_) => "codegen",
            Command::Sweep(_) => "sweep",
        }
    }

    fn inputs(&self) -> Vec<String> {
        match self {
            Command::Solve(a) => vec![a.instance.instance.clone()],
            Command::Oracle(a) => vec![a.instance.clone()],
            Command::Baseline(a) => vec![a.instance.instance.clone()],
            Command::Stats(a) => a.instances.clone(),
            Command::Cost(a) => vec![a.instance.instance.clone(), a.solution.clone()],
            Command::Codegen(a) => vec![a.target.instance.instance.clone(), a.target.solution.clone()],
            Command::Sweep(a) => vec![a.instance.clone()],
        }
    }

    fn seed(&self) -> u64 {
        match self {
            Command::Solve(a) => a.search.seed,
            Command::Sweep(a) => a.search.seed,
            Command::Stats(StatsArgs {
                generate: Some((seed, _)),
                ..
            }) => *seed,
            _ => 0,
        }
    }

    fn run(&self) -> Result<Output, Failure> {
        match self {
            Command::Solve(a) => run_solve(a),
            Command::Oracle(a) => run_oracle(a),
            Command::Baseline(a) => run_baseline(a),
            Command::Stats(a) => run_stats(a),
            Command::Cost(a) => run_cost(a),
            Command::Codegen(a) => run_codegen(a),
            Command::Sweep(a) => run_sweep(a),
        }
    }
}

/// Writes to stdout, ignoring a reader that has gone away.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{}", e.render());
            let err = json!({ "error": { "kind": "usage", "message": e.kind().to_string() } });
            eprintln!("{err}");
            return ExitCode::from(2);
        }
    };

    let started = Instant::now();
    let result = cli.command.run();
    let manifest = RunManifest {
        subcommand: cli.command.name(),
        inputs: cli.command.inputs(),
        flags: &cli.command,
        seed: cli.command.seed(),
        wall_ms: started.elapsed().as_millis(),
        tool_version: env!("CARGO_PKG_VERSION"),
    };
    match result {
        Ok(Output::Json(mut value, code)) => {
            value["manifest"] = serde_json::to_value(&manifest).expect("manifest serializes");
            emit(&format!("{}\n", serde_json::to_string_pretty(&value).expect("json output")));
            ExitCode::from(code)
        }
        Ok(Output::Text(text)) => {
            emit(&text);
            eprintln!("{}", json!({ "manifest": manifest }));
            ExitCode::SUCCESS
        }
        Err(f) => {
            let err = json!({
                "error": { "kind": f.kind(), "message": f.message() },
                "manifest": manifest,
            });
            eprintln!("{err}");
            ExitCode::from(f.code())
        }
    }
}
