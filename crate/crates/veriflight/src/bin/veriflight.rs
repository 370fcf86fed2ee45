//! Command-line front end: run episodes and suites, validate and query the
//! knowledge base, audit records, and render reports.

use clap::{Parser, Subcommand};
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use veriflight::graph::{build_graph, retrieve, Embedder, Query, Subgraph, DEFAULT_KB};
use veriflight::metrics::{
    builtin_suite, comparison_table, report_csv, run_suite, SuiteReport, SuiteSpec, SUITE_IDS,
};
use veriflight::planner::{
    Catalog, EndpointConfig, ExternalPlanner, HttpChatBackend, Planner, ScriptedPlanner,
    TranscriptLog,
};
use veriflight::sim::{
    audit_episode, read_episode_jsonl, run_episode, write_episode_jsonl, Outcome, Toggles,
};
use veriflight::world::Scenario;

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "veriflight", version, about = "Safe pursuit-evasion decision stack")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode from a scenario file and write its record.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Enable the barrier verifier.
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        cbf: bool,
        /// Enable knowledge-graph retrieval.
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        rag: bool,
        #[arg(long, default_value = "scripted")]
        planner: String,
        /// Output record path (JSON lines).
        #[arg(long, default_value = "episode.jsonl")]
        out: PathBuf,
    },
    /// Run a built-in suite id (S1, S2a, S2b, S2c, S4) or a suite spec file.
    Suite {
        suite: String,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
        #[arg(long, default_value = "scripted")]
        planner: String,
        /// Output directory for the report, CSV, and raw records.
        #[arg(long, default_value = "suite-out")]
        out: PathBuf,
    },
    /// Knowledge-base tools.
    Kb {
        #[command(subcommand)]
        command: KbCommand,
    },
    /// Replay-check an episode record file.
    Audit { record: PathBuf },
    /// Render a suite report JSON as a comparison table.
    Report { report: PathBuf },
}

#[derive(Subcommand)]
enum KbCommand {
    /// Structural validation; prints partition counts.
    Validate {
        /// KB file; the bundled default when omitted.
        #[arg(long)]
        kb: Option<PathBuf>,
    },
    /// Layered retrieval query.
    Query {
        #[arg(long)]
        kb: Option<PathBuf>,
        #[arg(long, default_value = "policy")]
        target: String,
        #[arg(long)]
        layer1: String,
        #[arg(long)]
        layer2: Option<String>,
        #[arg(long)]
        layer3: Option<String>,
        #[arg(long)]
        layer4: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { scenario, seed, cbf, rag, planner, out } => {
            cmd_run(&scenario, seed, Toggles { use_cbf: cbf, use_rag: rag }, &planner, &out)
        }
        Command::Suite { suite, episodes, seed_base, planner, out } => {
            cmd_suite(&suite, episodes, seed_base, &planner, &out)
        }
        Command::Kb { command } => match command {
            KbCommand::Validate { kb } => cmd_kb_validate(kb.as_deref()),
            KbCommand::Query { kb, target, layer1, layer2, layer3, layer4 } => {
                cmd_kb_query(kb.as_deref(), &target, layer1, layer2, layer3, layer4)
            }
        },
        Command::Audit { record } => cmd_audit(&record),
        Command::Report { report } => cmd_report(&report),
    }
}

fn make_planner(kind: &str, dim: usize) -> Result<Box<dyn Planner>, String> {
    match kind {
        "scripted" => Ok(Box::new(ScriptedPlanner::new(dim))),
        "external" => {
            let cfg = EndpointConfig::from_env().map_err(|e| e.to_string())?;
            let max_retries = cfg.max_retries;
            let transcript = TranscriptLog::create(Path::new("planner-transcript.jsonl"))
                .map_err(|e| format!("cannot open transcript log: {e}"))?;
            Ok(Box::new(ExternalPlanner {
                catalog: Catalog::standard(dim),
                backend: Box::new(HttpChatBackend::new(cfg)),
                max_retries,
                transcript: Some(transcript),
            }))
        }
        other => Err(format!("unknown planner {other:?}; expected scripted or external")),
    }
}

fn load_scenario(path: &Path) -> Result<Scenario, String> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read scenario file {}: {e}", path.display()))?;
    let scenario: Scenario =
        serde_json::from_str(&text).map_err(|e| format!("scenario parse error: {e}"))?;
    scenario.validate().map_err(|e| e.to_string())?;
    Ok(scenario)
}

fn usage_err(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_USAGE)
}

fn runtime_err(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_RUNTIME)
}

fn cmd_run(scenario_path: &Path, seed: u64, toggles: Toggles, planner_kind: &str, out: &Path) -> ExitCode {
    let scenario = match load_scenario(scenario_path) {
        Ok(s) => s,
        Err(e) => return usage_err(&e),
    };
    let planner = match make_planner(planner_kind, scenario.dimension) {
        Ok(p) => p,
        Err(e) => return usage_err(&e),
    };
    let record = match run_episode(&scenario, planner.as_ref(), toggles, seed) {
        Ok(r) => r,
        Err(e) => return runtime_err(&e.to_string()),
    };
    let mut file = match fs::File::create(out) {
        Ok(f) => f,
        Err(e) => return runtime_err(&format!("cannot write {}: {e}", out.display())),
    };
    if let Err(e) = write_episode_jsonl(&record, &mut file) {
        return runtime_err(&e.to_string());
    }
    match record.outcome {
        Outcome::Captured => println!(
            "Captured in {} steps, {} danger steps",
            record.total_steps, record.danger_steps
        ),
        Outcome::Timeout => println!(
            "Timeout after {} steps, {} danger steps",
            record.total_steps, record.danger_steps
        ),
    }
    ExitCode::SUCCESS
}

fn cmd_suite(
    suite: &str,
    episodes: Option<usize>,
    seed_base: u64,
    planner_kind: &str,
    out: &Path,
) -> ExitCode {
    let spec: SuiteSpec = if SUITE_IDS.contains(&suite) {
        builtin_suite(suite, seed_base, episodes).expect("listed id must build")
    } else if Path::new(suite).exists() {
        match fs::read_to_string(suite)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string()))
        {
            Ok(s) => s,
            Err(e) => return usage_err(&format!("suite spec {suite}: {e}")),
        }
    } else {
        return usage_err(&format!(
            "unknown suite {suite:?}; valid ids: {}",
            SUITE_IDS.join(", ")
        ));
    };
    let dim = spec.configs.first().map(|c| c.scenario.dimension).unwrap_or(2);
    let planner = match make_planner(planner_kind, dim) {
        Ok(p) => p,
        Err(e) => return usage_err(&e),
    };
    let outputs = match run_suite(&spec, planner.as_ref()) {
        Ok(o) => o,
        Err(e) => return runtime_err(&e.to_string()),
    };
    if let Err(e) = fs::create_dir_all(out) {
        return runtime_err(&format!("cannot create {}: {e}", out.display()));
    }
    let report_json = serde_json::to_string_pretty(&outputs.report).expect("report serializes");
    let write = |name: &str, text: &str| -> Result<(), String> {
        fs::write(out.join(name), text).map_err(|e| format!("cannot write {name}: {e}"))
    };
    if let Err(e) = write(&format!("report_{}.json", spec.id), &report_json)
        .and_then(|_| write(&format!("report_{}.csv", spec.id), &report_csv(&outputs.report)))
    {
        return runtime_err(&e);
    }
    for (name, records) in &outputs.records {
        let path = out.join(format!("records_{}_{}.jsonl", spec.id, name));
        let mut file = match fs::File::create(&path) {
            Ok(f) => f,
            Err(e) => return runtime_err(&format!("cannot write {}: {e}", path.display())),
        };
        for r in records {
            if let Err(e) = write_episode_jsonl(r, &mut file) {
                return runtime_err(&e.to_string());
            }
        }
    }
    for r in &outputs.report.results {
        println!(
            "{} {}: success {:.4} safe {:.4} zero-danger {:.4}",
            spec.id, r.config, r.success_rate, r.safe_rate, r.zero_danger_rate
        );
    }
    ExitCode::SUCCESS
}

fn read_kb(path: Option<&Path>) -> Result<String, String> {
    match path {
        Some(p) => fs::read_to_string(p).map_err(|e| format!("cannot read KB file {}: {e}", p.display())),
        None => Ok(DEFAULT_KB.to_string()),
    }
}

fn cmd_kb_validate(path: Option<&Path>) -> ExitCode {
    let text = match read_kb(path) {
        Ok(t) => t,
        Err(e) => return usage_err(&e),
    };
    match build_graph(&text) {
        Ok(g) => {
            for (sg, n) in g.node_counts() {
                println!("{sg}: {n} nodes");
            }
            for (kind, n) in g.edge_counts() {
                println!("{kind:?}: {n} edges");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("invalid knowledge base: {e}");
            ExitCode::from(EXIT_CHECK_FAILED)
        }
    }
}

fn cmd_kb_query(
    path: Option<&Path>,
    target: &str,
    layer1: String,
    layer2: Option<String>,
    layer3: Option<String>,
    layer4: Option<String>,
) -> ExitCode {
    let text = match read_kb(path) {
        Ok(t) => t,
        Err(e) => return usage_err(&e),
    };
    let graph = match build_graph(&text) {
        Ok(g) => g,
        Err(e) => return usage_err(&format!("invalid knowledge base: {e}")),
    };
    let target = match target {
        "policy" => Subgraph::Policy,
        "control" => Subgraph::Control,
        other => return usage_err(&format!("target must be policy or control, got {other:?}")),
    };
    let mut components = vec![layer1];
    for c in [layer2, layer3, layer4].into_iter().flatten() {
        components.push(c);
    }
    let query = Query::new(components);
    let embedder = Embedder::from_env();
    match retrieve(&graph, &query, target, &embedder) {
        Ok(p) => {
            for (node, phi) in p.nodes.iter().zip(&p.scores) {
                println!("{node}  phi={phi:.6}");
            }
            println!("objective {:.6}", p.objective);
            ExitCode::SUCCESS
        }
        Err(e) => runtime_err(&format!("retrieval failed: {e}")),
    }
}

fn cmd_audit(record_path: &Path) -> ExitCode {
    let file = match fs::File::open(record_path) {
        Ok(f) => f,
        Err(e) => return usage_err(&format!("cannot read record file {}: {e}", record_path.display())),
    };
    let record = match read_episode_jsonl(&mut BufReader::new(file)) {
        Ok(r) => r,
        Err(e) => return usage_err(&format!("record parse error: {e}")),
    };
    match audit_episode(&record) {
        Ok(()) => {
            println!("audit ok: {} steps, {} danger steps", record.total_steps, record.danger_steps);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("audit failed: {e}");
            ExitCode::from(EXIT_CHECK_FAILED)
        }
    }
}

fn cmd_report(report_path: &Path) -> ExitCode {
    let text = match fs::read_to_string(report_path) {
        Ok(t) => t,
        Err(e) => return usage_err(&format!("cannot read report file {}: {e}", report_path.display())),
    };
    let report: SuiteReport = match serde_json::from_str(&text) {
        Ok(r) => r,
        Err(e) => return usage_err(&format!("report parse error: {e}")),
    };
    print!("{}", comparison_table(&report));
    ExitCode::SUCCESS
}
