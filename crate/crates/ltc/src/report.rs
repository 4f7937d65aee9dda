//! Markdown and JSON report emission: three tables (deterministic
//! metrics, overall pairwise win rates, dimension-level breakdown) plus
//! coverage and agreement footers. Display values are rounded
//! half-away-from-zero; the exact rationals live in metrics.json.

use std::cmp::Ordering;
use std::path::Path;

use anyhow::Result;
use serde::{Deserialize, Serialize};

use ltc_core::aggregate::{AggregateReport, Dimension, JudgeVerdict, TaskMetrics};
use ltc_core::metrics::Rational;

/// metrics.json: exact per-task values plus the aggregate.
#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsFile {
    pub setting: String,
    pub run_pair: String,
    pub tasks: Vec<TaskMetrics>,
    pub aggregate: AggregateReport,
}

/// Display for a fraction-valued rational (e.g. file IoU in [0,1]).
fn pct_of_fraction(r: Rational) -> String {
    format!("{}%", r.to_percent())
}

/// Display for a percentage-valued rational (e.g. win rates already ×100).
fn pct(r: Rational) -> String {
    format!("{}%", r.round_half_away())
}

/// "**skill** / base" with the better display bolded; equal displays get
/// no bold.
fn metric_pair(skill: String, base: String, skill_better: Option<bool>) -> String {
    if skill == base {
        return format!("{skill} / {base}");
    }
    match skill_better {
        Some(true) => format!("**{skill}** / {base}"),
        Some(false) => format!("{skill} / **{base}**"),
        None => format!("{skill} / {base}"),
    }
}

fn better_high(a: Rational, b: Rational) -> Option<bool> {
    match a.cmp(&b) {
        Ordering::Greater => Some(true),
        Ordering::Less => Some(false),
        Ordering::Equal => None,
    }
}

fn better_low(a: Rational, b: Rational) -> Option<bool> {
    better_high(b, a)
}

pub fn render_summary(report: &AggregateReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("# Evaluation summary — `{}`\n\n", report.setting));

    // Deterministic code metrics (one run pair = one row).
    out.push_str("## Deterministic code metrics\n\n");
    out.push_str("File IoU measures localisation accuracy (higher is better), Steps measures solve efficiency (lower is better), Line Deviation measures patch bloat (closer to 0 is better). Bold marks the better result in each pair.\n\n");
    out.push_str("| Setting | File IoU (Skill / Base) | Steps (Skill / Base) | Line Dev. (Skill / Base) |\n");
    out.push_str("|---|---|---|---|\n");
    let iou = metric_pair(
        pct_of_fraction(report.skill.file_iou),
        pct_of_fraction(report.baseline.file_iou),
        better_high(report.skill.file_iou, report.baseline.file_iou),
    );
    let steps = metric_pair(
        report.skill.steps.to_decimal_string(1),
        report.baseline.steps.to_decimal_string(1),
        better_low(report.skill.steps, report.baseline.steps),
    );
    let dev = metric_pair(
        report.skill.line_deviation.to_decimal_string(2),
        report.baseline.line_deviation.to_decimal_string(2),
        better_low(report.skill.line_deviation.abs(), report.baseline.line_deviation.abs()),
    );
    out.push_str(&format!("| `{}` | {iou} | {steps} | {dev} |\n\n", report.setting));

    // Overall pairwise win rates per judge.
    out.push_str("## Overall pairwise win rates (%)\n\n");
    out.push_str("Win rate of the skill-conditioned agent over judged cells; bold marks rates above 50%.\n\n");
    out.push_str("| Setting |");
    for judge in report.per_judge.keys() {
        out.push_str(&format!(" {judge} |"));
    }
    out.push_str("\n|---|");
    for _ in report.per_judge.keys() {
        out.push_str("---|");
    }
    out.push('\n');
    out.push_str(&format!("| `{}` |", report.setting));
    for stats in report.per_judge.values() {
        let overall = stats.get(&Dimension::Overall);
        let cell = match overall {
            Some(s) => {
                let shown = pct(s.win_pct);
                if s.win_pct.round_half_away() > 50 {
                    format!("**{shown}**")
                } else {
                    shown
                }
            }
            None => "—".to_string(),
        };
        out.push_str(&format!(" {cell} |"));
    }
    out.push_str("\n\n");

    // Dimension-level breakdown averaged over judges.
    out.push_str("## Dimension-level breakdown\n\n");
    out.push_str("Averaged over judges. Bold marks a skill win rate above the baseline's.\n\n");
    out.push_str("| Dimension | Skill Win | Base Win | Tie |\n|---|---|---|---|\n");
    for dim in Dimension::QUESTIONS {
        let Some(row) = report.dimension_breakdown.get(&dim) else {
            continue;
        };
        let skill_disp = pct(row.skill_pct);
        let skill_cell = if row.skill_pct.round_half_away() > row.base_pct.round_half_away() {
            format!("**{skill_disp}**")
        } else {
            skill_disp
        };
        out.push_str(&format!(
            "| {} | {skill_cell} | {} | {} |\n",
            dim.label(),
            pct(row.base_pct),
            pct(row.tie_pct),
        ));
    }
    out.push('\n');

    out.push_str(&format!(
        "- Inter-judge agreement: {}% of fully judged cells\n",
        report.agreement.to_percent()
    ));
    out.push_str(&format!(
        "- Judge coverage: {}% of cells judged\n",
        report.coverage.to_percent()
    ));
    out.push_str(&format!(
        "- Flagged cells (unparseable replies recorded as ties): {}\n",
        report.flagged_cells
    ));
    out.push_str(&format!(
        "- Tasks: {} skill / {} baseline\n",
        report.skill.task_count, report.baseline.task_count
    ));
    out
}

/// Writes metrics.json, judge.jsonl, and summary.md into the run-pair
/// report directory.
pub fn write_reports(
    dir: &Path,
    metrics_file: &MetricsFile,
    verdicts: &[JudgeVerdict],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(metrics_file)?,
    )?;
    let mut jsonl = String::new();
    for v in verdicts {
        jsonl.push_str(&serde_json::to_string(v)?);
        jsonl.push('\n');
    }
    std::fs::write(dir.join("judge.jsonl"), jsonl)?;
    std::fs::write(
        dir.join("summary.md"),
        render_summary(&metrics_file.aggregate),
    )?;
    Ok(())
}

/// Re-renders summary.md from persisted artifacts; used by `ltc report`,
/// which must never touch a gateway.
pub fn rerender_from_dir(dir: &Path) -> Result<String> {
    let metrics: MetricsFile =
        serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json"))?)?;
    let mut verdicts: Vec<JudgeVerdict> = Vec::new();
    let judge_path = dir.join("judge.jsonl");
    if judge_path.exists() {
        for line in std::fs::read_to_string(&judge_path)?.lines() {
            if !line.trim().is_empty() {
                verdicts.push(serde_json::from_str(line)?);
            }
        }
    }
    // Re-aggregate from the raw rows rather than trusting the stored
    // aggregate; the two must agree for a well-formed report directory.
    let aggregate =
        ltc_core::aggregate::aggregate(&metrics.tasks, &verdicts, &metrics.setting)
            .map_err(|e| anyhow::anyhow!("re-aggregation failed: {e}"))?;
    let summary = render_summary(&aggregate);
    std::fs::write(dir.join("summary.md"), &summary)?;
    Ok(summary)
}
