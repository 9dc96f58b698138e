//! `memedebate`: batch debate runs, evaluation, agreement and inspection.
//!
//! Exit codes: 0 success, 1 runtime error or failed samples, 2 usage error,
//! 3 configuration error, 4 data error.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use memedebate_core::agents::{ChatRole, ChatTurn};
use memedebate_core::agreement::{load_annotations, krippendorff_alpha, AgreementError, SetDistance};
use memedebate_core::corpus::{check_images, label_distribution, load_manifest, CorpusError, LoadMode};
use memedebate_core::domain::Split;
use memedebate_core::metrics::{evaluate, LabelSets};
use memedebate_core::protocol::{
    read_predictions, write_predictions, AgentOutcome, AgentTrack, DebateTranscript, Engine, ProtocolError,
    RunConfig, TranscriptStore,
};

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 3;
const EXIT_DATA: u8 = 4;

#[derive(Parser)]
#[command(name = "memedebate", version, about = "Multi-agent debate over memes for depressive-symptom labelling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    Validation,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
            SplitArg::Validation => Split::Validation,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DistanceArg {
    Masi,
    Jaccard,
}

#[derive(Subcommand)]
enum Command {
    /// Run the debate over every sample of a manifest.
    Run {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Line-delimited sample manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// Only run samples of this split.
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        /// Reuse stored transcripts whose fingerprint matches the current config.
        #[arg(long)]
        resume: bool,
        /// Output directory for transcripts/, predictions.jsonl and summary.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a predictions file against the gold labels of a manifest.
    Eval {
        /// Manifest with gold labels on every sample.
        #[arg(long)]
        gold: PathBuf,
        /// Predictions file as written by `run`.
        #[arg(long)]
        predictions: PathBuf,
        /// Only evaluate samples of this split.
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        /// Directory for report.json and report.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Krippendorff's alpha over line-delimited {unit_id, annotator_id, labels} records.
    Agree {
        #[arg(long)]
        annotations: PathBuf,
        /// Set distance used as the disagreement function.
        #[arg(long, value_enum, default_value = "masi")]
        distance: DistanceArg,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Validate a manifest and print its label distribution.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
        /// Require gold labels on every sample.
        #[arg(long)]
        gold: bool,
        /// Also check that every image file exists.
        #[arg(long)]
        check_images: bool,
    },
    /// Pretty-print a transcript and check its stored consensus.
    Inspect {
        transcript: PathBuf,
        /// Show only this round.
        #[arg(long)]
        round: Option<u32>,
        /// Show only this agent.
        #[arg(long)]
        agent: Option<String>,
    },
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn fail(code: u8) -> impl FnOnce(anyhow::Error) -> Failure {
    move |error| Failure { code, error }
}

type CmdResult = Result<ExitCode, Failure>;

fn manifest_error(e: CorpusError) -> Failure {
    let code = match e {
        CorpusError::Read { .. } | CorpusError::Invalid { .. } => EXIT_DATA,
        _ => EXIT_RUNTIME,
    };
    Failure {
        code,
        error: e.into(),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(fail(EXIT_RUNTIME))
}

fn cmd_run(config: &Path, manifest: &Path, split: Option<SplitArg>, resume: bool, out: &Path) -> CmdResult {
    let run = RunConfig::load(config).map_err(|e| fail(EXIT_CONFIG)(e.into()))?;
    let engine = Engine::from_run_config(&run).map_err(|e| {
        let code = match e {
            ProtocolError::Config(_) | ProtocolError::Agent { .. } | ProtocolError::Prompt(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        fail(code)(e.into())
    })?;
    let manifest = load_manifest(manifest, split.map(Split::from), LoadMode::Inference).map_err(manifest_error)?;

    fs::create_dir_all(out)
        .with_context(|| format!("cannot create {}", out.display()))
        .map_err(fail(EXIT_RUNTIME))?;
    let store_dir = run.protocol.cache_dir.clone().unwrap_or_else(|| out.join("transcripts"));
    let store = TranscriptStore::new(store_dir);
    let report = engine.run_manifest(&manifest, &store, resume);

    let predictions: Vec<_> = report.transcripts().map(DebateTranscript::prediction).collect();
    let predictions_path = out.join("predictions.jsonl");
    write_predictions(&predictions_path, &predictions).map_err(|e| fail(EXIT_RUNTIME)(e.into()))?;
    let summary = serde_json::to_string_pretty(&report.summary).expect("summary serializes") + "\n";
    write_file(&out.join("summary.json"), &summary)?;

    for outcome in &report.outcomes {
        if let Err(message) = &outcome.result {
            eprintln!("sample {}: {message}", outcome.sample_id);
        }
    }
    let s = &report.summary;
    println!(
        "{} attempted, {} succeeded, {} failed; {} agent calls, {} cache hits ({} consensus recomputed), {} agent failures, {:.2}s",
        s.attempted,
        s.succeeded,
        s.failed,
        s.agent_invocations,
        s.cache_hits,
        s.consensus_recomputed,
        s.agent_failures,
        s.wall_time_secs
    );
    println!("transcripts: {}", store.dir().display());
    println!("predictions: {}", predictions_path.display());
    Ok(if s.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_RUNTIME)
    })
}

fn cmd_eval(gold: &Path, predictions: &Path, split: Option<SplitArg>, out: Option<&Path>) -> CmdResult {
    let manifest = load_manifest(gold, split.map(Split::from), LoadMode::Evaluation).map_err(manifest_error)?;
    let records = read_predictions(predictions).map_err(|e| fail(EXIT_DATA)(e.into()))?;
    let gold: LabelSets = manifest
        .samples
        .iter()
        .map(|s| (s.id.clone(), s.labels.clone().unwrap_or_default()))
        .collect();
    let pred: LabelSets = records.into_iter().map(|r| (r.sample_id, r.labels)).collect();
    let report = evaluate(&gold, &pred).map_err(|e| fail(EXIT_DATA)(e.into()))?;

    let text = report.render_text();
    print!("{text}");
    if let Some(dir) = out {
        fs::create_dir_all(dir)
            .with_context(|| format!("cannot create {}", dir.display()))
            .map_err(fail(EXIT_RUNTIME))?;
        let json = serde_json::to_string_pretty(&report.to_json()).expect("report serializes") + "\n";
        write_file(&dir.join("report.json"), &json)?;
        write_file(&dir.join("report.txt"), &text)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_agree(path: &Path, distance: DistanceArg, as_json: bool) -> CmdResult {
    let records = load_annotations(path).map_err(|e| {
        let code = match e {
            AgreementError::Read { .. } | AgreementError::Parse { .. } => EXIT_DATA,
            _ => EXIT_RUNTIME,
        };
        fail(code)(e.into())
    })?;
    let distance = match distance {
        DistanceArg::Masi => SetDistance::Masi,
        DistanceArg::Jaccard => SetDistance::Jaccard,
    };
    let report = krippendorff_alpha(&records, distance).map_err(|e| fail(EXIT_DATA)(e.into()))?;
    if as_json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        println!("alpha: {:.3}", report.alpha);
        println!("observed disagreement: {:.6}", report.observed_disagreement);
        println!("expected disagreement: {:.6}", report.expected_disagreement);
        println!("usable units: {}", report.usable_units);
        println!("excluded units: {}", report.excluded_units);
        println!("distance: {}", report.distance);
        println!("estimator: {}", report.estimator);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(path: &Path, gold: bool, images: bool) -> CmdResult {
    let mode = if gold { LoadMode::Evaluation } else { LoadMode::Inference };
    let manifest = match load_manifest(path, None, mode) {
        Ok(m) => m,
        Err(CorpusError::Invalid { path, findings }) => {
            eprintln!("{}: {} problem(s)", path.display(), findings.len());
            for f in &findings {
                eprintln!("  {f}");
            }
            return Ok(ExitCode::from(EXIT_DATA));
        }
        Err(e) => return Err(manifest_error(e)),
    };
    if images {
        let missing = check_images(&manifest);
        if !missing.is_empty() {
            eprintln!("{}: {} missing image(s)", path.display(), missing.len());
            for f in &missing {
                eprintln!("  {f}");
            }
            return Ok(ExitCode::from(EXIT_DATA));
        }
    }
    println!("{}: {} samples, valid", path.display(), manifest.len());
    print!("{}", label_distribution(&manifest).render_table());
    Ok(ExitCode::SUCCESS)
}

/// Splits an agent's turns by round using the recorded invocation counts.
/// The system turn is returned separately.
fn turns_by_round(track: &AgentTrack) -> (Option<&ChatTurn>, Vec<&[ChatTurn]>) {
    let (system, rest) = match track.turns.first() {
        Some(t) if t.role == ChatRole::System => (Some(t), &track.turns[1..]),
        _ => (None, &track.turns[..]),
    };
    let mut rounds = Vec::new();
    let mut start = 0;
    for record in &track.rounds {
        let mut end = start;
        for _ in 0..record.invocations {
            if end < rest.len() {
                end += 1;
            }
            if end < rest.len() && rest[end].role == ChatRole::Assistant {
                end += 1;
            }
        }
        rounds.push(&rest[start..end]);
        start = end;
    }
    (system, rounds)
}

fn print_turn(turn: &ChatTurn) {
    let image = turn.image.as_deref().map(|i| format!(" [image: {i}]")).unwrap_or_default();
    println!("    [{}]{image}", turn.role.as_str());
    for line in turn.content.lines() {
        println!("      {line}");
    }
}

fn cmd_inspect(path: &Path, round: Option<u32>, agent: Option<&str>) -> CmdResult {
    let transcript = DebateTranscript::load(path).map_err(|e| fail(EXIT_DATA)(e.into()))?;
    if let Some(a) = agent {
        if !transcript.agents.iter().any(|t| t.agent_id.as_str() == a) {
            return Err(fail(EXIT_DATA)(anyhow!("transcript has no agent `{a}`")));
        }
    }
    if let Some(r) = round {
        if r > transcript.final_round() {
            return Err(fail(EXIT_DATA)(anyhow!(
                "transcript has rounds 0..={}, not {r}",
                transcript.final_round()
            )));
        }
    }

    let p = &transcript.params;
    println!("sample: {}", transcript.sample_id);
    println!("agents: {}, discussion rounds: {}, threshold: {}", p.agents, p.rounds, p.threshold);
    for track in &transcript.agents {
        if agent.is_some_and(|a| a != track.agent_id.as_str()) {
            continue;
        }
        println!("\nagent {} ({})", track.agent_id, track.aspect);
        let (system, by_round) = turns_by_round(track);
        if let (Some(system), None) = (system, round) {
            print_turn(system);
        }
        for (record, turns) in track.rounds.iter().zip(by_round) {
            if round.is_some_and(|r| r != record.round) {
                continue;
            }
            println!("  round {}: {} call(s), {} reminder(s)", record.round, record.invocations, record.reminders);
            for turn in turns {
                print_turn(turn);
            }
            match &record.outcome {
                AgentOutcome::Ok { response } => {
                    let preds: Vec<String> = response
                        .predictions
                        .iter()
                        .map(|(l, c)| format!("{l} {:.2}", c.value()))
                        .collect();
                    println!("    response: {}", if preds.is_empty() { "none".into() } else { preds.join(", ") });
                }
                AgentOutcome::Failed { reason } => println!("    FAILED: {reason}"),
            }
            for w in &record.warnings {
                println!("    warning: {w}");
            }
        }
    }

    println!("\nconsensus scores:");
    for (label, score) in &transcript.consensus.scores {
        println!("  {label:<4} {score:.4}");
    }
    let labels: BTreeSet<String> = transcript.consensus.final_labels.iter().map(|l| l.to_string()).collect();
    println!("final labels: {}", labels.into_iter().collect::<Vec<_>>().join(", "));

    match transcript.verify() {
        Ok(()) => {
            println!("consistency: ok");
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => Err(fail(EXIT_DATA)(anyhow!("transcript is corrupt: {e}"))),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            config,
            manifest,
            split,
            resume,
            out,
        } => cmd_run(config, manifest, *split, *resume, out),
        Command::Eval {
            gold,
            predictions,
            split,
            out,
        } => cmd_eval(gold, predictions, *split, out.as_deref()),
        Command::Agree {
            annotations,
            distance,
            json,
        } => cmd_agree(annotations, *distance, *json),
        Command::Validate {
            manifest,
            gold,
            check_images,
        } => cmd_validate(manifest, *gold, *check_images),
        Command::Inspect { transcript, round, agent } => cmd_inspect(transcript, *round, agent.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
