//! `ensemblage`: run, validate and replay multi-agent deliberations.
//!
//! Exit codes: 0 success, 2 validation failure, 3 backend or engine
//! failure, 4 gate rejection (so pipelines can branch on refusals).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ensemblage::backend::MockBackend;
use ensemblage::config::{
    execute_run, load_corpora_jsonl, load_run_spec, validate_run_spec, RunError, RunOverrides,
    RunStatus,
};
use ensemblage::metrics::{compare, diversity_report, HDD_SAMPLE_SIZE};
use ensemblage::moderator::{self, Decision};
use ensemblage::persona::{load_dataset, render_persona, PersonaQuery};
use ensemblage::rng::SeededRng;
use ensemblage::trace::{render_transcript, DeliberationTrace};

const EXIT_OK: u8 = 0;
const EXIT_VALIDATION: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_GATE_REJECT: u8 = 4;

#[derive(Parser)]
#[command(
    name = "ensemblage",
    about = "Simulated social ensembles: persona-bearing LLM agents deliberating in configurable structures",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a run spec against every engine invariant without any network
    /// I/O; reports all findings at once.
    Validate {
        /// Path to a run spec (JSON).
        spec: PathBuf,
    },
    /// Execute a run spec: optional gate, structure, moderator; writes the
    /// trace and prints the final response.
    Run {
        /// Path to a run spec (JSON).
        spec: PathBuf,
        /// Force the deterministic mock backend (no network).
        #[arg(long)]
        mock: bool,
        /// Override the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the spec's trace output path.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Override the spec's dataset path.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Override the spec's codebook path.
        #[arg(long)]
        codebook: Option<PathBuf>,
        /// Disable stage-parallel execution.
        #[arg(long)]
        sequential: bool,
    },
    /// Render a trace file as a human-readable transcript.
    Replay {
        /// Path to a trace (JSON).
        trace: PathBuf,
    },
    /// Ask a steerable moderator to accept or reject a task against a
    /// value set; prints {"decision", "rationale"} as JSON.
    Gate(GateArgs),
    /// Compute lexical diversity (TTR at n=1..5, HD-D) for corpora read
    /// from a JSON-lines file ({"label", "text"} per line).
    Diversity {
        /// Path to the corpora (JSON lines).
        corpora: PathBuf,
        /// Write the report as JSON here (plain-text table prints either way).
        #[arg(long)]
        output: Option<PathBuf>,
        /// HD-D sample size.
        #[arg(long, default_value_t = HDD_SAMPLE_SIZE)]
        sample_size: usize,
    },
    /// Persona dataset utilities.
    #[command(subcommand)]
    Persona(PersonaCommand),
}

#[derive(Args)]
struct GateArgs {
    /// The task to judge.
    #[arg(long)]
    task: String,
    /// Value set text.
    #[arg(long, conflicts_with = "values_file")]
    values: Option<String>,
    /// Read the value set from a file.
    #[arg(long)]
    values_file: Option<PathBuf>,
    /// Model id for the gate call.
    #[arg(long, default_value = "gpt-4o")]
    model: String,
    /// Judge with the deterministic mock backend (always accepts).
    #[arg(long)]
    mock: bool,
    /// Live provider name (credentials via ENSEMBLAGE_API_KEY_<PROVIDER>).
    #[arg(long, default_value = "openai")]
    provider: String,
}

#[derive(Subcommand)]
enum PersonaCommand {
    /// Draw a persona (probability-weighted) and print its rendered text.
    Sample {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        /// Filter rows first, e.g. "ideology == 'Liberal' AND age >= 40".
        #[arg(long, conflicts_with = "ideology")]
        query: Option<String>,
        /// Ideology shortcut label (e.g. liberal, conservative, random).
        #[arg(long)]
        ideology: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the human-readable mapping of dataset variables.
    Describe {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Validate { spec } => cmd_validate(&spec),
        Command::Run {
            spec,
            mock,
            seed,
            output,
            dataset,
            codebook,
            sequential,
        } => {
            let overrides = RunOverrides {
                force_mock: mock,
                seed,
                output,
                dataset,
                codebook,
                sequential,
            };
            cmd_run(&spec, overrides)
        }
        Command::Replay { trace } => cmd_replay(&trace),
        Command::Gate(args) => cmd_gate(args),
        Command::Diversity {
            corpora,
            output,
            sample_size,
        } => cmd_diversity(&corpora, output, sample_size),
        Command::Persona(cmd) => cmd_persona(cmd),
    };
    ExitCode::from(code)
}

fn base_dir(spec_path: &Path) -> PathBuf {
    spec_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn cmd_validate(spec_path: &Path) -> u8 {
    let spec = match load_run_spec(spec_path) {
        Ok(spec) => spec,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_VALIDATION;
        }
    };
    let diags = validate_run_spec(&spec, &base_dir(spec_path));
    if diags.is_empty() {
        println!("ok: {} validates", spec_path.display());
        EXIT_OK
    } else {
        eprintln!("{}: {} finding(s)", spec_path.display(), diags.len());
        for d in &diags {
            eprintln!("  {}: {}", d.path, d.message);
        }
        EXIT_VALIDATION
    }
}

fn cmd_run(spec_path: &Path, overrides: RunOverrides) -> u8 {
    let spec = match load_run_spec(spec_path) {
        Ok(spec) => spec,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_VALIDATION;
        }
    };
    match execute_run(&spec, &base_dir(spec_path), &overrides, None) {
        Ok(outcome) => {
            if let Some(path) = &outcome.trace_path {
                eprintln!("trace written to {}", path.display());
            }
            match outcome.status {
                RunStatus::Completed => {
                    println!("{}", outcome.final_response);
                    EXIT_OK
                }
                RunStatus::GateRejected => {
                    let rationale = outcome
                        .trace
                        .gate
                        .as_ref()
                        .map(|g| g.rationale.clone())
                        .unwrap_or_default();
                    eprintln!("gate rejected the task: {rationale}");
                    EXIT_GATE_REJECT
                }
            }
        }
        Err(RunError::Validation(diags)) => {
            eprintln!("{}: {} finding(s)", spec_path.display(), diags.len());
            for d in &diags {
                eprintln!("  {}: {}", d.path, d.message);
            }
            EXIT_VALIDATION
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_BACKEND
        }
    }
}

fn cmd_replay(trace_path: &Path) -> u8 {
    let text = match std::fs::read_to_string(trace_path) {
        Ok(text) => text,
        Err(e) => {
            eprintln!("error: reading {}: {e}", trace_path.display());
            return EXIT_VALIDATION;
        }
    };
    let trace = match DeliberationTrace::from_json(&text) {
        Ok(trace) => trace,
        Err(e) => {
            eprintln!("error: parsing {}: {e}", trace_path.display());
            return EXIT_VALIDATION;
        }
    };
    match render_transcript(&trace) {
        Ok(transcript) => {
            println!("{transcript}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_VALIDATION
        }
    }
}

fn cmd_gate(args: GateArgs) -> u8 {
    let values = match (&args.values, &args.values_file) {
        (Some(text), _) => text.clone(),
        (None, Some(path)) => match std::fs::read_to_string(path) {
            Ok(text) => text,
            Err(e) => {
                eprintln!("error: reading {}: {e}", path.display());
                return EXIT_VALIDATION;
            }
        },
        (None, None) => {
            eprintln!("error: one of --values or --values-file is required");
            return EXIT_VALIDATION;
        }
    };
    let result = if args.mock {
        let backend = MockBackend::scripted(
            Default::default(),
            Some("Rationale: mock backend; accepting by default.\nDecision: ACCEPT".into()),
        );
        moderator::gate(&values, &args.task, &backend, &args.model)
    } else {
        match ensemblage::backend::OpenAiCompatBackend::from_env(&args.provider) {
            Ok(backend) => moderator::gate(&values, &args.task, &backend, &args.model),
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_BACKEND;
            }
        }
    };
    match result {
        Ok((decision, _turn)) => {
            let json = serde_json::json!({
                "decision": decision.decision,
                "rationale": decision.rationale,
            });
            println!(
                "{}",
                serde_json::to_string_pretty(&json).expect("serializes")
            );
            if decision.decision == Decision::Reject {
                EXIT_GATE_REJECT
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_BACKEND
        }
    }
}

fn cmd_diversity(corpora_path: &Path, output: Option<PathBuf>, sample_size: usize) -> u8 {
    let corpora = match load_corpora_jsonl(corpora_path) {
        Ok(corpora) => corpora,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_VALIDATION;
        }
    };
    let mut reports = Vec::new();
    for corpus in &corpora {
        match diversity_report(corpus, sample_size) {
            Ok(report) => reports.push(report),
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_VALIDATION;
            }
        }
    }
    if let Some(path) = &output {
        match serde_json::to_string_pretty(&reports) {
            Ok(json) => {
                if let Err(e) = std::fs::write(path, json) {
                    eprintln!("error: writing {}: {e}", path.display());
                    return EXIT_VALIDATION;
                }
                eprintln!("report written to {}", path.display());
            }
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_VALIDATION;
            }
        }
    }
    if reports.len() >= 2 {
        match compare(&reports) {
            Ok(comparison) => print!("{}", comparison.to_text_table()),
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_VALIDATION;
            }
        }
    } else {
        for report in &reports {
            println!(
                "{}: tokens {}, ttr_1 {:.4}, hdd {:.4}",
                report.label, report.token_count, report.ttr["1"], report.hdd
            );
        }
    }
    EXIT_OK
}

fn cmd_persona(cmd: PersonaCommand) -> u8 {
    match cmd {
        PersonaCommand::Sample {
            dataset,
            codebook,
            query,
            ideology,
            seed,
        } => {
            let dataset = match load_dataset(&dataset, &codebook) {
                Ok(d) => d,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_VALIDATION;
                }
            };
            let mut rng = SeededRng::new(seed);
            let record = if let Some(label) = ideology {
                dataset.ideology_shortcut(&label, &mut rng)
            } else if let Some(query_text) = query {
                PersonaQuery::parse(&query_text)
                    .and_then(|q| dataset.filter(&q))
                    .and_then(|subset| subset.sample_weighted(&mut rng).cloned())
            } else {
                dataset.sample_weighted(&mut rng).cloned()
            };
            match record.and_then(|r| render_persona(&r, &dataset.codebook)) {
                Ok(text) => {
                    println!("{text}");
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_VALIDATION
                }
            }
        }
        PersonaCommand::Describe { dataset, codebook } => match load_dataset(&dataset, &codebook) {
            Ok(d) => {
                println!("{}", d.describe_variables());
                EXIT_OK
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_VALIDATION
            }
        },
    }
}
