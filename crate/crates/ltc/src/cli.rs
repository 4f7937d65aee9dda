//! Command-line entry point: mine, learn, solve, evaluate, report, replay.
//!
//! Exit codes: 0 success, 2 config error, 3 stage error, 4 prompt-audit
//! violation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ltc_core::mining::Pool;
use ltc_core::skills::empty_document;

use crate::agent::LlmAgent;
use crate::config::{Config, ConfigError};
use crate::dataset::Dataset;
use crate::gateway::{AuditViolation, Gateway};
use crate::manifest::{dataset_digest, RunManifest};
use crate::memstore;
use crate::miner::{run_mine, Miner};
use crate::onboarding::{scope_name, LearnCondition, LearnRunner};
use crate::solver::SolveRunner;
use crate::{evaluate, gitio, report, runstore};

#[derive(Parser)]
#[command(
    name = "ltc",
    about = "Mine a repository's history into a time-split curriculum, distil repository skills, resolve held-out tasks, and score organicity",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CommonOpts {
    /// Config file (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set learn_quota=8 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Backend id for pipeline calls (defaults to gateway.default_backend).
    #[arg(long)]
    backend: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Mine a repository into a strictly time-split task dataset.
    Mine {
        #[arg(long)]
        repo: PathBuf,
        /// Optional git commit range (e.g. v1.0..HEAD).
        #[arg(long)]
        range: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run the onboarding loop over the learning pool.
    Learn {
        /// seq-all | seq-bycat | par-all | par-bycat
        #[arg(long)]
        condition: String,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Repository path override (defaults to the dataset's).
        #[arg(long)]
        repo: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Resolve the held-out test tasks.
    Solve {
        /// skill | baseline
        #[arg(long)]
        condition: String,
        #[arg(long)]
        dataset: PathBuf,
        /// Learn-run output directory (required for the skill condition).
        #[arg(long)]
        memory: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        repo: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Score a skill/baseline run pair and emit reports.
    Evaluate {
        #[arg(long = "skill-run")]
        skill_run: PathBuf,
        #[arg(long = "baseline-run")]
        baseline_run: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Judge backend ids, comma separated (defaults to config).
        #[arg(long)]
        judges: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Re-render summary.md from persisted artifacts (no gateway).
    Report {
        /// A reports/<run_pair> directory produced by evaluate.
        #[arg(long)]
        reports: PathBuf,
    },
    /// Re-derive skill documents from their update logs and verify the
    /// stored snapshots byte-for-byte.
    Replay {
        /// A learn-run output directory.
        #[arg(long)]
        memory: PathBuf,
        /// Restrict to one scope (e.g. all or cat-testing).
        #[arg(long)]
        scope: Option<String>,
    },
}

#[derive(Debug)]
pub struct CliFailure {
    pub exit_code: i32,
    pub error: anyhow::Error,
}

impl std::fmt::Display for CliFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

fn classify(error: anyhow::Error) -> CliFailure {
    let exit_code = if error
        .chain()
        .any(|cause| cause.downcast_ref::<AuditViolation>().is_some())
    {
        4
    } else if error
        .chain()
        .any(|cause| cause.downcast_ref::<ConfigError>().is_some())
    {
        2
    } else {
        3
    };
    CliFailure { exit_code, error }
}

pub fn run(cli: Cli) -> Result<(), CliFailure> {
    let result = match cli.command {
        Command::Mine {
            repo,
            range,
            out,
            common,
        } => cmd_mine(&repo, range.as_deref(), &out, &common),
        Command::Learn {
            condition,
            dataset,
            out,
            repo,
            common,
        } => cmd_learn(&condition, &dataset, &out, repo.as_deref(), &common),
        Command::Solve {
            condition,
            dataset,
            memory,
            out,
            repo,
            common,
        } => cmd_solve(
            &condition,
            &dataset,
            memory.as_deref(),
            &out,
            repo.as_deref(),
            &common,
        ),
        Command::Evaluate {
            skill_run,
            baseline_run,
            dataset,
            judges,
            out,
            common,
        } => cmd_evaluate(
            &skill_run,
            &baseline_run,
            &dataset,
            judges.as_deref(),
            &out,
            &common,
        ),
        Command::Report { reports } => cmd_report(&reports),
        Command::Replay { memory, scope } => cmd_replay(&memory, scope.as_deref()),
    };
    result.map_err(classify)
}

fn load_config(common: &CommonOpts) -> Result<Config> {
    let mut config = Config::load(common.config.as_deref())?;
    for raw in &common.overrides {
        let (key, value) = raw
            .split_once('=')
            .ok_or_else(|| ConfigError::Value {
                key: raw.clone(),
                message: "expected KEY=VALUE".into(),
            })?;
        config.apply_override(key.trim(), value.trim())?;
    }
    Ok(config)
}

fn backend_id(config: &Config, common: &CommonOpts, gateway: &Gateway) -> Result<String> {
    let id = common
        .backend
        .clone()
        .unwrap_or_else(|| config.gateway.default_backend.clone());
    if !gateway.has_backend(&id) {
        return Err(ConfigError::Backend {
            id: id.clone(),
            message: "backend is not configured; add a [backends.<id>] section".into(),
        }
        .into());
    }
    Ok(id)
}

fn cmd_mine(repo: &Path, range: Option<&str>, out: &Path, common: &CommonOpts) -> Result<()> {
    let config = load_config(common)?;
    if !gitio::is_repository(repo) {
        bail!("{} is not a readable git repository", repo.display());
    }
    let gateway = config.build_gateway()?;
    let backend = backend_id(&config, common, &gateway)?;
    std::fs::create_dir_all(out)?;
    gateway.set_transcript_path(Some(out.join("transcripts.jsonl")));

    let mut manifest = RunManifest::begin("mine", config.snapshot());
    let miner = Miner {
        gateway: &gateway,
        backend_id: backend,
        config: &config.miner,
    };
    let outcome = run_mine(repo, range, out, &miner)?;
    manifest.repo_head = Some(outcome.repo_head.clone());
    manifest.dataset_digest = Some(dataset_digest(out)?);
    manifest.note("counts", &outcome.counts);
    manifest.note("warnings", &outcome.warnings);
    manifest.note("audit", gateway.audit_counters());
    manifest.finish(out)?;

    println!(
        "mined {} learn + {} test tasks into {} (scanned {}, post-prefilter {}, accepted {})",
        outcome.counts.sampled_learn,
        outcome.counts.sampled_test,
        out.display(),
        outcome.counts.scanned,
        outcome.counts.post_prefilter,
        outcome.counts.accepted,
    );
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

/// Clones the target repository into the run directory so worktrees never
/// touch the original.
fn clone_for_run(repo: &Path, out: &Path, run_id: &str) -> Result<PathBuf> {
    if !gitio::is_repository(repo) {
        bail!("{} is not a readable git repository", repo.display());
    }
    let clone = out.join("runs").join(run_id).join("repo-clone");
    std::fs::create_dir_all(clone.parent().unwrap())?;
    gitio::clone_local(repo, &clone)?;
    Ok(clone)
}

fn resolve_repo(explicit: Option<&Path>, dataset: &Dataset) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&dataset.manifest.repo_path))
}

fn cmd_learn(
    condition: &str,
    dataset_dir: &Path,
    out: &Path,
    repo: Option<&Path>,
    common: &CommonOpts,
) -> Result<()> {
    let condition: LearnCondition = condition.parse().map_err(|m: String| anyhow!(m))?;
    let config = load_config(common)?;
    let dataset = Dataset::load(dataset_dir)?;
    let repo = resolve_repo(repo, &dataset);
    let gateway = config.build_gateway()?;
    let backend = backend_id(&config, common, &gateway)?;

    let mut manifest = RunManifest::begin("learn", config.snapshot());
    manifest.dataset_digest = Some(dataset_digest(dataset_dir)?);
    let run_id = manifest.run_id.clone();
    gateway.set_transcript_path(Some(runstore::transcripts_path(out, &run_id)));

    let clone = clone_for_run(&repo, out, &run_id)?;
    manifest.repo_head = Some(gitio::head_commit(&clone)?);

    let runner = LearnRunner {
        gateway: &gateway,
        agent: &LlmAgent,
        backend_id: backend,
        repo: clone,
        out_dir: out.to_path_buf(),
        run_id: run_id.clone(),
        options: config.learning.clone(),
    };
    let learn_tasks = dataset.pool(Pool::Learn);
    if learn_tasks.is_empty() {
        bail!("dataset has no learning tasks");
    }
    let summary = runner.learn(&learn_tasks, condition)?;

    let counters = gateway.audit_counters();
    if counters.scanned != counters.stage_tagged {
        bail!(
            "audit completeness violated: {} of {} learn/solve requests scanned",
            counters.scanned,
            counters.stage_tagged
        );
    }
    manifest.note("condition", condition.name());
    manifest.note("scopes", &summary.scopes);
    manifest.note("flagged_tasks", &summary.flagged_tasks);
    manifest.note("merge_fallbacks", summary.merge_fallbacks);
    manifest.note("audit", counters);
    manifest.finish(out)?;

    println!(
        "learned condition {} over {} tasks; scopes: {}",
        condition.name(),
        learn_tasks.len(),
        summary
            .scopes
            .iter()
            .map(|(s, v)| format!("{s} (v{v})"))
            .collect::<Vec<_>>()
            .join(", "),
    );
    Ok(())
}

fn cmd_solve(
    condition: &str,
    dataset_dir: &Path,
    memory: Option<&Path>,
    out: &Path,
    repo: Option<&Path>,
    common: &CommonOpts,
) -> Result<()> {
    if !matches!(condition, "skill" | "baseline") {
        bail!("--condition must be skill or baseline, got {condition:?}");
    }
    let config = load_config(common)?;
    let dataset = Dataset::load(dataset_dir)?;
    let repo = resolve_repo(repo, &dataset);
    let gateway = config.build_gateway()?;
    let backend = backend_id(&config, common, &gateway)?;

    // Stage order: the skill condition needs a completed learn run.
    let mut learn_condition: Option<String> = None;
    let mut memory_map = BTreeMap::new();
    if condition == "skill" {
        let memory_dir = memory.context(
            "--memory <learn-out-dir> is required for the skill condition; run `ltc learn` first",
        )?;
        let learn_manifest = RunManifest::load(memory_dir).with_context(|| {
            format!(
                "{} is not a completed learn run; run `ltc learn` first",
                memory_dir.display()
            )
        })?;
        if learn_manifest.stage != "learn" {
            bail!(
                "{} holds a {:?} run, not a learn run",
                memory_dir.display(),
                learn_manifest.stage
            );
        }
        let name = learn_manifest
            .outcome
            .get("condition")
            .and_then(|v| v.as_str())
            .context("learn manifest lacks its condition")?
            .to_string();
        let parsed: LearnCondition = name.parse().map_err(|m: String| anyhow!(m))?;
        learn_condition = Some(name);

        for task in dataset.pool(Pool::Test) {
            let scope = scope_name(parsed.assignment, &task.category);
            let scope_dir = memstore::scope_dir(memory_dir, &learn_manifest.run_id, &scope);
            let doc = match memstore::final_version(&scope_dir) {
                Ok(v) => memstore::load_doc(&scope_dir, v)?,
                Err(_) => {
                    eprintln!(
                        "warning: no learned memory for scope {scope}; task {} solves with an empty document",
                        task.task_id
                    );
                    empty_document()
                }
            };
            memory_map.insert(task.task_id.clone(), doc);
        }
    } else if memory.is_some() {
        bail!("--memory is only meaningful for the skill condition");
    }

    let mut manifest = RunManifest::begin("solve", config.snapshot());
    manifest.dataset_digest = Some(dataset_digest(dataset_dir)?);
    let run_id = manifest.run_id.clone();
    gateway.set_transcript_path(Some(runstore::transcripts_path(out, &run_id)));
    let clone = clone_for_run(&repo, out, &run_id)?;
    manifest.repo_head = Some(gitio::head_commit(&clone)?);

    let runner = SolveRunner {
        gateway: &gateway,
        agent: &LlmAgent,
        backend_id: backend,
        repo: clone,
        out_dir: out.to_path_buf(),
        run_id: run_id.clone(),
        options: config.solver.clone(),
        prompt_budget_chars: config.learning.prompt_budget_chars,
    };
    let test_tasks = dataset.pool(Pool::Test);
    if test_tasks.is_empty() {
        bail!("dataset has no test tasks");
    }
    let summary = runner.run_condition(&test_tasks, &memory_map)?;

    let counters = gateway.audit_counters();
    manifest.note("condition", condition);
    if let Some(name) = learn_condition {
        manifest.note("learn_condition", name);
    }
    manifest.note("solved", &summary.solved);
    manifest.note("failed", &summary.failed);
    manifest.note("audit", counters);
    manifest.finish(out)?;

    println!(
        "solved {}/{} test tasks under the {condition} condition",
        summary.solved.len(),
        test_tasks.len(),
    );
    for (task, err) in &summary.failed {
        eprintln!("warning: task {task} failed: {err}");
    }
    Ok(())
}

fn cmd_evaluate(
    skill_run: &Path,
    baseline_run: &Path,
    dataset_dir: &Path,
    judges: Option<&str>,
    out: &Path,
    common: &CommonOpts,
) -> Result<()> {
    let config = load_config(common)?;
    for (dir, condition) in [(skill_run, "skill"), (baseline_run, "baseline")] {
        if !dir.join(crate::manifest::RUN_MANIFEST_FILE).exists() {
            bail!(
                "{} is not a completed solve run; run `ltc solve --condition {condition}` first",
                dir.display()
            );
        }
    }
    let dataset = Dataset::load(dataset_dir)?;
    let gateway = config.build_gateway()?;
    let judges: Vec<String> = judges
        .map(|csv| csv.split(',').map(|s| s.trim().to_string()).collect())
        .unwrap_or_else(|| config.evaluate.judges.clone());
    for judge in &judges {
        if !gateway.has_backend(judge) {
            return Err(ConfigError::Backend {
                id: judge.clone(),
                message: "judge backend is not configured".into(),
            }
            .into());
        }
    }
    if judges.is_empty() {
        eprintln!("warning: no judges configured; emitting deterministic metrics only");
    }

    let mut manifest = RunManifest::begin("evaluate", config.snapshot());
    manifest.dataset_digest = Some(dataset_digest(dataset_dir)?);
    gateway.set_transcript_path(Some(runstore::transcripts_path(out, &manifest.run_id)));

    let inputs = evaluate::RunPairInputs {
        dataset,
        skill_dir: skill_run.to_path_buf(),
        baseline_dir: baseline_run.to_path_buf(),
        judges,
        both_orders: config.evaluate.both_orders,
        seed: config.miner.seed,
    };
    let outcome = evaluate::run_evaluate(&inputs, &gateway, out)?;

    manifest.note("run_pair", &outcome.run_pair);
    manifest.note("setting", &outcome.aggregate.setting);
    manifest.note("warnings", &outcome.warnings);
    manifest.note("audit", gateway.audit_counters());
    manifest.finish(out)?;

    println!(
        "evaluated {} → {}",
        outcome.run_pair,
        outcome.report_dir.join("summary.md").display()
    );
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn cmd_report(reports: &Path) -> Result<()> {
    // Offline by construction: no gateway is ever built here.
    let summary = report::rerender_from_dir(reports)
        .with_context(|| format!("re-rendering reports in {}", reports.display()))?;
    println!("{summary}");
    Ok(())
}

fn cmd_replay(memory: &Path, scope: Option<&str>) -> Result<()> {
    let manifest = RunManifest::load(memory).with_context(|| {
        format!("{} is not a learn run directory", memory.display())
    })?;
    if manifest.stage != "learn" {
        bail!("{} holds a {:?} run, not a learn run", memory.display(), manifest.stage);
    }
    let scopes = match scope {
        Some(s) => vec![s.to_string()],
        None => memstore::list_scopes(memory, &manifest.run_id)?,
    };
    if scopes.is_empty() {
        bail!("learn run has no memory scopes to replay");
    }
    let mut failures = 0;
    for scope in &scopes {
        let dir = memstore::scope_dir(memory, &manifest.run_id, scope);
        let check = memstore::replay_scope(&dir, scope)?;
        if check.matches() {
            println!("replay {scope}: OK (v{} reproduced byte-for-byte)", check.final_version);
        } else {
            failures += 1;
            println!("replay {scope}: MISMATCH at v{}", check.final_version);
        }
    }
    if failures > 0 {
        bail!("{failures} scope(s) failed replay verification");
    }
    Ok(())
}
