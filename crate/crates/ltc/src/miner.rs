//! The five-stage dataset construction pipeline: scan and prefilter the
//! non-merge history, LLM-assess survivors, cluster rationales into a
//! category taxonomy, tag and temporally split the accepted commits, and
//! synthesize leakage-scanned task queries.

use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;

use ltc_core::diff::parse_patch;
use ltc_core::leakage;
use ltc_core::mining::{
    estimate_tokens, prefilter, Category, CategoryTaxonomy, CommitRecord, Pool, Quality, TaskSpec,
    OTHER_CATEGORY,
};
use ltc_core::sampling::{split_and_sample, SampleItem, SamplingConfig};

use crate::config::MinerConfig;
use crate::dataset::{self, DatasetManifest, RejectionRecord, StageCounts};
use crate::gateway::{ChatRequest, Gateway, Role};
use crate::gitio;

/// Character budget for diff text embedded in prompts.
const PROMPT_DIFF_BUDGET: usize = 12_000;

/// Scans the full non-merge history of a repository into unassessed
/// commit records, ascending by author time. Root commits get the empty
/// tree as their parent snapshot.
pub fn scan_history(
    repo: &Path,
    range: Option<&str>,
    token_divisor: u32,
) -> Result<Vec<CommitRecord>> {
    if !gitio::is_repository(repo) {
        bail!("{} is not a readable git repository", repo.display());
    }
    let raw = gitio::log_non_merge(repo, range)?;
    if raw.is_empty() {
        bail!("{} has no commits in the requested range", repo.display());
    }
    let mut records = Vec::with_capacity(raw.len());
    for commit in raw {
        let parent = commit
            .parents
            .first()
            .cloned()
            .unwrap_or_else(|| gitio::EMPTY_TREE.to_string());
        let diff_text = gitio::diff_between(repo, &parent, &commit.id)?;
        let patch = parse_patch(&diff_text)
            .with_context(|| format!("parsing diff of commit {}", commit.id))?;
        records.push(CommitRecord {
            commit_id: commit.id,
            parent_id: parent,
            author_time: commit.author_time,
            message: commit.message,
            diff_token_estimate: estimate_tokens(diff_text.len(), token_divisor),
            patch,
            quality: Quality::Unassessed,
            category: None,
        });
    }
    Ok(records)
}

pub struct Miner<'a> {
    pub gateway: &'a Gateway,
    pub backend_id: String,
    pub config: &'a MinerConfig,
}

#[derive(Debug)]
pub struct MineOutcome {
    pub counts: StageCounts,
    pub warnings: Vec<String>,
    pub repo_head: String,
}

impl Miner<'_> {
    fn request(&self, tag: &str) -> ChatRequest {
        ChatRequest::new(self.backend_id.clone(), &[tag])
    }

    /// One structured retry: if `validate` rejects the first reply, the
    /// model sees its own reply plus the validator's complaint and gets
    /// one more chance.
    fn complete_validated<T>(
        &self,
        base: ChatRequest,
        validate: impl Fn(&str) -> Result<T, String>,
    ) -> Result<Result<T, String>> {
        let reply = self.gateway.complete(&base)?;
        match validate(&reply) {
            Ok(v) => Ok(Ok(v)),
            Err(first_problem) => {
                let retry = base
                    .clone()
                    .message(Role::Assistant, reply)
                    .message(
                        Role::User,
                        format!("That reply was malformed ({first_problem}). Follow the required format exactly."),
                    );
                let second = self.gateway.complete(&retry)?;
                match validate(&second) {
                    Ok(v) => Ok(Ok(v)),
                    Err(problem) => Ok(Err(problem)),
                }
            }
        }
    }

    /// Stage (i) part two: does this commit exhibit substantive, learnable
    /// development patterns? Gateway failures leave the record unassessed.
    pub fn assess_quality(&self, record: CommitRecord) -> Result<CommitRecord> {
        debug_assert!(matches!(record.quality, Quality::Unassessed));
        let prompt = format!(
            "Assess whether this commit exhibits substantive, learnable development patterns \
             (architecture choices, internal API usage, conventions) rather than trivia.\n\
             Reply with a fenced json block: {{\"verdict\": \"accept\"|\"reject\", \"rationale\": \"...\"}}\n\n\
             Commit message:\n{}\n\nDiff:\n{}",
            record.message,
            clip(record.patch.source_text(), PROMPT_DIFF_BUDGET),
        );
        let base = self
            .request("quality_assess")
            .message(Role::User, prompt);
        let verdict = self.complete_validated(base, |reply| {
            let value = extract_json_object(reply).ok_or("no json object found")?;
            let verdict = value
                .get("verdict")
                .and_then(|v| v.as_str())
                .ok_or("missing verdict")?;
            let rationale = value
                .get("rationale")
                .and_then(|v| v.as_str())
                .unwrap_or("")
                .to_string();
            match verdict {
                "accept" => Ok(Quality::Accepted { rationale }),
                "reject" => Ok(Quality::RejectedLlm { rationale }),
                other => Err(format!("unknown verdict {other:?}")),
            }
        })?;
        let quality = verdict.unwrap_or(Quality::RejectedLlm {
            rationale: "unparseable".to_string(),
        });
        Ok(CommitRecord { quality, ..record })
    }

    /// Stage (ii): model-mediated clustering of a seeded rationale sample
    /// into a labeled taxonomy of 2..=k_target categories (plus "other").
    pub fn build_taxonomy(&self, rationales: &[String]) -> Result<(CategoryTaxonomy, Vec<String>)> {
        if rationales.is_empty() {
            bail!("cannot build a taxonomy from zero rationales");
        }
        let mut warnings = Vec::new();
        let sample = sample_rationales(
            rationales,
            self.config.rationale_sample_size,
            self.config.seed,
        );
        let listing: String = sample
            .iter()
            .enumerate()
            .map(|(i, r)| format!("{}. {}\n", i + 1, r))
            .collect();
        let prompt = format!(
            "Cluster these commit-assessment rationales into at most {} core development \
             categories. Reply with a fenced json block:\n\
             {{\"categories\": [{{\"label\": \"kebab-case\", \"description\": \"...\", \"exemplars\": [1, 4]}}]}}\n\
             where exemplars lists rationale numbers.\n\nRationales:\n{listing}",
            self.config.k_target
        );
        let base = self.request("taxonomy").message(Role::User, prompt);
        let parsed = self.complete_validated(base, |reply| {
            let value = extract_json_object(reply).ok_or("no json object found")?;
            let list = value
                .get("categories")
                .and_then(|v| v.as_array())
                .ok_or("missing categories array")?;
            if list.is_empty() {
                return Err("empty categories array".into());
            }
            let mut categories = Vec::new();
            for item in list {
                let label = item
                    .get("label")
                    .and_then(|v| v.as_str())
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .ok_or("category without label")?
                    .to_string();
                let description = item
                    .get("description")
                    .and_then(|v| v.as_str())
                    .unwrap_or("")
                    .to_string();
                let exemplars: Vec<String> = item
                    .get("exemplars")
                    .and_then(|v| v.as_array())
                    .map(|arr| {
                        arr.iter()
                            .filter_map(|e| match e {
                                serde_json::Value::Number(n) => n
                                    .as_u64()
                                    .and_then(|i| sample.get(i as usize - 1))
                                    .map(|s| s.to_string()),
                                serde_json::Value::String(s) => Some(s.clone()),
                                _ => None,
                            })
                            .collect()
                    })
                    .unwrap_or_default();
                categories.push(Category {
                    label,
                    description,
                    exemplar_rationales: exemplars,
                });
            }
            Ok(categories)
        })?;
        let mut categories = match parsed {
            Ok(c) => c,
            Err(problem) => bail!("taxonomy reply unparseable after retry: {problem}"),
        };

        // Dedupe labels, keep first occurrence.
        let mut seen = std::collections::BTreeSet::new();
        categories.retain(|c| seen.insert(c.label.clone()));

        if categories.len() > self.config.k_target as usize {
            warnings.push(format!(
                "taxonomy reply had {} categories; truncated to k_target={}",
                categories.len(),
                self.config.k_target
            ));
            categories.truncate(self.config.k_target as usize);
        }
        // Every category needs at least one exemplar; backfill from the sample.
        for c in &mut categories {
            if c.exemplar_rationales.is_empty() {
                c.exemplar_rationales.push(sample[0].clone());
            }
        }
        // "other" must exist as the tagging fallback; a single-category
        // reply degenerates to label + other.
        if !categories.iter().any(|c| c.label == OTHER_CATEGORY) {
            categories.push(Category {
                label: OTHER_CATEGORY.to_string(),
                description: "Changes that fit no other category".to_string(),
                exemplar_rationales: vec![sample[0].clone()],
            });
        }
        let taxonomy = CategoryTaxonomy { categories };
        taxonomy.validate().map_err(|e| anyhow::anyhow!(e.to_string()))?;
        Ok((taxonomy, warnings))
    }

    /// Stage (iii): one primary category per accepted commit. Unknown
    /// labels map to "other" with a warning.
    pub fn tag_category(
        &self,
        record: CommitRecord,
        taxonomy: &CategoryTaxonomy,
    ) -> Result<(CommitRecord, Vec<String>)> {
        let Quality::Accepted { rationale } = &record.quality else {
            bail!("tag_category requires an accepted record");
        };
        let mut warnings = Vec::new();
        let labels = taxonomy.labels().join(", ");
        let prompt = format!(
            "Assign exactly one category to this commit. Valid labels: {labels}.\n\
             Reply with the label alone on the first line.\n\n\
             Commit title:\n{}\n\nAssessment rationale:\n{rationale}\n\nPatch:\n{}",
            record.message.lines().next().unwrap_or(""),
            clip(record.patch.source_text(), PROMPT_DIFF_BUDGET),
        );
        let base = self.request("tagging").message(Role::User, prompt);
        let picked = self.complete_validated(base, |reply| {
            let label = reply
                .lines()
                .map(str::trim)
                .find(|l| !l.is_empty())
                .ok_or("empty reply")?;
            Ok(label.trim_matches(['"', '`', '.']).to_string())
        })?;
        let category = match picked {
            Ok(label) => {
                let canonical = taxonomy
                    .labels()
                    .iter()
                    .find(|l| l.eq_ignore_ascii_case(&label))
                    .map(|l| l.to_string());
                match canonical {
                    Some(l) => l,
                    None => {
                        warnings.push(format!(
                            "commit {}: unknown category {label:?} mapped to \"{OTHER_CATEGORY}\"",
                            &record.commit_id[..12.min(record.commit_id.len())]
                        ));
                        OTHER_CATEGORY.to_string()
                    }
                }
            }
            Err(_) => {
                warnings.push(format!(
                    "commit {}: unparseable category reply mapped to \"{OTHER_CATEGORY}\"",
                    &record.commit_id[..12.min(record.commit_id.len())]
                ));
                OTHER_CATEGORY.to_string()
            }
        };
        Ok((
            CommitRecord {
                category: Some(category),
                ..record
            },
            warnings,
        ))
    }

    /// Stage (v): issue-style query that must survive the leakage scan.
    /// One regeneration with the violations listed; a second failure
    /// excludes the task.
    pub fn synthesize_query(
        &self,
        record: &CommitRecord,
        pool: Pool,
    ) -> Result<QueryOutcome> {
        let base_prompt = format!(
            "Write a short issue-style request for the change this commit makes. Describe the \
             what and the why only. Strictly omit implementation details: no file paths, no \
             function or identifier names, no solution steps. Reply with the request text alone.\n\n\
             Commit message:\n{}\n\nDiff:\n{}",
            record.message,
            clip(record.patch.source_text(), PROMPT_DIFF_BUDGET),
        );
        let base = self.request("query_synth").message(Role::User, base_prompt);

        let first = self.gateway.complete(&base)?;
        let first_query = clean_query(&first);
        let hits = leakage::scan_query(&first_query, &record.patch);
        if hits.is_empty() {
            return Ok(QueryOutcome::Query(first_query));
        }

        let violations: Vec<String> = hits.iter().map(|h| h.needle.clone()).collect();
        let retry = base
            .message(Role::Assistant, first)
            .message(
                Role::User,
                format!(
                    "Your request leaked implementation details; these strings must not appear: {}. \
                     Rewrite the request without them.",
                    violations.join(", ")
                ),
            );
        let second = self.gateway.complete(&retry)?;
        let second_query = clean_query(&second);
        let hits = leakage::scan_query(&second_query, &record.patch);
        if hits.is_empty() {
            Ok(QueryOutcome::Query(second_query))
        } else {
            Ok(QueryOutcome::Excluded {
                violations: hits.iter().map(|h| h.needle.clone()).collect(),
                pool,
            })
        }
    }
}

#[derive(Debug)]
pub enum QueryOutcome {
    Query(String),
    Excluded { violations: Vec<String>, pool: Pool },
}

pub fn task_id_for(commit_id: &str) -> String {
    format!("task-{}", &commit_id[..12.min(commit_id.len())])
}

/// Runs the full pipeline and writes the dataset directory.
pub fn run_mine(
    repo: &Path,
    range: Option<&str>,
    out_dir: &Path,
    miner: &Miner,
) -> Result<MineOutcome> {
    let config = miner.config;
    let mut warnings: Vec<String> = Vec::new();
    let mut rejections: Vec<RejectionRecord> = Vec::new();
    let mut counts = StageCounts::default();

    // Stage (i): scan + programmatic prefilter.
    let records = scan_history(repo, range, config.token_divisor)?;
    counts.scanned = records.len() as u64;
    let prefilter_rules = config.prefilter();
    let mut survivors = Vec::new();
    for record in records {
        let record = prefilter(record, &prefilter_rules);
        match &record.quality {
            Quality::RejectedPrefilter { reason } => {
                counts.prefilter_rejected += 1;
                rejections.push(RejectionRecord {
                    commit_id: record.commit_id.clone(),
                    stage: "prefilter".into(),
                    reason: reason.clone(),
                });
            }
            _ => survivors.push(record),
        }
    }
    counts.post_prefilter = survivors.len() as u64;

    // Stage (i) continued: LLM quality assessment. A failing backend
    // leaves the record unassessed and reported; it never silently
    // becomes a verdict.
    let mut accepted = Vec::new();
    for record in survivors {
        let commit_id = record.commit_id.clone();
        match miner.assess_quality(record) {
            Ok(assessed) => match &assessed.quality {
                Quality::Accepted { .. } => accepted.push(assessed),
                Quality::RejectedLlm { rationale } => {
                    counts.llm_rejected += 1;
                    rejections.push(RejectionRecord {
                        commit_id: assessed.commit_id.clone(),
                        stage: "quality".into(),
                        reason: rationale.clone(),
                    });
                }
                _ => unreachable!("assess_quality always assigns a verdict"),
            },
            Err(e) if !crate::gateway::is_audit_violation(&e) => {
                counts.gateway_failures += 1;
                warnings.push(format!("commit {commit_id} left unassessed: {e}"));
            }
            Err(e) => return Err(e),
        }
    }
    counts.accepted = accepted.len() as u64;
    if accepted.is_empty() {
        bail!("no commits survived quality assessment");
    }

    // Stage (ii): taxonomy over the accepted rationales.
    let rationales: Vec<String> = accepted
        .iter()
        .filter_map(|r| match &r.quality {
            Quality::Accepted { rationale } => Some(rationale.clone()),
            _ => None,
        })
        .collect();
    let (taxonomy, mut tax_warnings) = miner.build_taxonomy(&rationales)?;
    warnings.append(&mut tax_warnings);

    // Stage (iii): tagging. Accepted records must end up with a category;
    // a failing backend maps to "other" with a warning.
    let mut tagged = Vec::new();
    for record in accepted {
        let fallback = CommitRecord {
            category: Some(OTHER_CATEGORY.to_string()),
            ..record.clone()
        };
        match miner.tag_category(record, &taxonomy) {
            Ok((record, mut tag_warnings)) => {
                warnings.append(&mut tag_warnings);
                tagged.push(record);
            }
            Err(e) if !crate::gateway::is_audit_violation(&e) => {
                counts.gateway_failures += 1;
                warnings.push(format!(
                    "commit {} tagged \"{OTHER_CATEGORY}\" after backend failure: {e}",
                    fallback.commit_id
                ));
                tagged.push(fallback);
            }
            Err(e) => return Err(e),
        }
    }
    counts.tagged = tagged.len() as u64;

    // Stage (iv): strict temporal split + stratified downsampling.
    let items: Vec<SampleItem> = tagged
        .iter()
        .map(|r| SampleItem {
            commit_id: r.commit_id.clone(),
            author_time: r.author_time,
            category: r.category.clone().unwrap_or_else(|| OTHER_CATEGORY.into()),
        })
        .collect();
    let split = split_and_sample(
        &items,
        config.cutoff().map_err(|e| anyhow::anyhow!(e.to_string()))?,
        SamplingConfig {
            learn_quota: config.learn_quota,
            test_quota: config.test_quota,
        },
    )
    .map_err(|e| anyhow::anyhow!("split failed: {e}"))?;
    warnings.extend(split.warnings.iter().cloned());
    counts.sampled_learn = split.learn.len() as u64;
    counts.sampled_test = split.test.len() as u64;

    // Stage (v): synthetic queries with the leakage scan.
    let by_id: std::collections::BTreeMap<&str, &CommitRecord> = tagged
        .iter()
        .map(|r| (r.commit_id.as_str(), r))
        .collect();
    let mut tasks: Vec<TaskSpec> = Vec::new();
    let mut learn_ids = Vec::new();
    let mut test_ids = Vec::new();
    for (pool, ids, kept) in [
        (Pool::Learn, &split.learn, &mut learn_ids),
        (Pool::Test, &split.test, &mut test_ids),
    ] {
        for commit_id in ids {
            let record = by_id[commit_id.as_str()];
            let outcome = match miner.synthesize_query(record, pool) {
                Ok(outcome) => outcome,
                Err(e) if !crate::gateway::is_audit_violation(&e) => {
                    counts.gateway_failures += 1;
                    QueryOutcome::Excluded {
                        violations: vec![format!("backend failure: {e}")],
                        pool,
                    }
                }
                Err(e) => return Err(e),
            };
            match outcome {
                QueryOutcome::Query(query) => {
                    let task_id = task_id_for(commit_id);
                    kept.push(task_id.clone());
                    tasks.push(TaskSpec {
                        task_id,
                        commit_id: commit_id.clone(),
                        pool,
                        category: record
                            .category
                            .clone()
                            .unwrap_or_else(|| OTHER_CATEGORY.into()),
                        query,
                        snapshot_ref: record.parent_id.clone(),
                        oracle_patch: record.patch.clone(),
                    });
                }
                QueryOutcome::Excluded { violations, .. } => {
                    counts.query_excluded += 1;
                    let detail = format!("query leaked after retry: {}", violations.join(", "));
                    warnings.push(format!("excluded {commit_id}: {detail}"));
                    rejections.push(RejectionRecord {
                        commit_id: commit_id.clone(),
                        stage: "query".into(),
                        reason: detail,
                    });
                }
            }
        }
    }
    if test_ids.is_empty() {
        bail!("every test task was excluded by the leakage scan");
    }

    let repo_head = gitio::head_commit(repo)?;
    let manifest = DatasetManifest {
        repo_path: repo.display().to_string(),
        repo_head: repo_head.clone(),
        taxonomy,
        counts: counts.clone(),
        config: serde_json::to_value(config)?,
        seed: config.seed,
        boundary: split.boundary,
        learn_tasks: learn_ids,
        test_tasks: test_ids,
        warnings: warnings.clone(),
    };
    dataset::write_dataset(out_dir, &manifest, &tasks, &rejections)?;

    Ok(MineOutcome {
        counts,
        warnings,
        repo_head,
    })
}

fn sample_rationales(rationales: &[String], sample_size: usize, seed: u64) -> Vec<String> {
    let take = sample_size.min(rationales.len()).max(1);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, rationales.len(), take);
    let mut indices: Vec<usize> = picked.into_iter().collect();
    indices.sort_unstable();
    indices.into_iter().map(|i| rationales[i].clone()).collect()
}

fn clip(text: &str, budget: usize) -> String {
    if text.len() <= budget {
        return text.to_string();
    }
    let mut cut = budget;
    while !text.is_char_boundary(cut) {
        cut -= 1;
    }
    format!("{}\n… (diff truncated)", &text[..cut])
}

fn clean_query(reply: &str) -> String {
    let trimmed = reply.trim();
    // Models sometimes wrap the text in a fence anyway.
    if let Some(inner) = trimmed
        .strip_prefix("```")
        .and_then(|r| r.split_once('\n'))
        .map(|(_, rest)| rest)
        .and_then(|rest| rest.strip_suffix("```"))
    {
        return inner.trim().to_string();
    }
    trimmed.to_string()
}

/// First json object found in a reply: a fenced ```json block, any fenced
/// block that parses, or the whole reply.
pub(crate) fn extract_json_object(reply: &str) -> Option<serde_json::Value> {
    if let Some(block) = ltc_core::skills::fenced_block(reply, "json") {
        if let Ok(v) = serde_json::from_str(block) {
            return Some(v);
        }
    }
    let mut rest = reply;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let Some(nl) = after.find('\n') else { break };
        let body = &after[nl + 1..];
        let Some(end) = body.find("```") else { break };
        if let Ok(v) = serde_json::from_str::<serde_json::Value>(&body[..end]) {
            return Some(v);
        }
        rest = &body[end + 3..];
    }
    serde_json::from_str(reply.trim()).ok()
}
