//! Aggregation of per-task metrics and judge verdicts into a run-pair
//! report: metric means, win/loss/tie percentages per judge and dimension,
//! and inter-judge agreement. All values are exact rationals; display
//! rounding happens at render time.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::metrics::Rational;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Skill,
    Baseline,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Skill => write!(f, "skill"),
            Condition::Baseline => write!(f, "baseline"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricFlag {
    BinaryFilesPresent,
    TruncatedTrajectory,
}

/// Deterministic metrics for one task under one condition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task_id: String,
    pub condition: Condition,
    pub file_iou: Rational,
    pub steps: u64,
    pub line_deviation: Rational,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub flags: BTreeSet<MetricFlag>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dimension {
    Q1,
    Q2,
    Q3,
    Q4,
    Overall,
}

impl Dimension {
    pub const ALL: [Dimension; 5] = [
        Dimension::Q1,
        Dimension::Q2,
        Dimension::Q3,
        Dimension::Q4,
        Dimension::Overall,
    ];

    pub const QUESTIONS: [Dimension; 4] = [
        Dimension::Q1,
        Dimension::Q2,
        Dimension::Q3,
        Dimension::Q4,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Dimension::Q1 => "Q1: Scope Alignment",
            Dimension::Q2 => "Q2: Logic Similarity",
            Dimension::Q3 => "Q3: Redundancy & Halluc.",
            Dimension::Q4 => "Q4: Code Style",
            Dimension::Overall => "Overall",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dimension::Q1 => write!(f, "Q1"),
            Dimension::Q2 => write!(f, "Q2"),
            Dimension::Q3 => write!(f, "Q3"),
            Dimension::Q4 => write!(f, "Q4"),
            Dimension::Overall => write!(f, "overall"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresentationOrder {
    SkillFirst,
    BaselineFirst,
}

/// Outcome of one judged cell. `Missing` records a cell the gateway
/// failed on; aggregation excludes it from percentages and reports
/// coverage instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellResult {
    Skill,
    Baseline,
    Tie,
    Missing,
}

/// One judge decision for one (task, dimension, presentation order) cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub task_id: String,
    pub judge_id: String,
    pub dimension: Dimension,
    pub winner: CellResult,
    pub rationale: String,
    pub presentation_order: PresentationOrder,
    /// Set when the verdict fell back to a tie after unparseable replies.
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub flagged: bool,
}

/// Win/loss/tie bookkeeping for one judge and dimension. Percentages are
/// over judged (non-missing) cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WinStats {
    pub wins: u64,
    pub losses: u64,
    pub ties: u64,
    pub missing: u64,
    pub win_pct: Rational,
    pub loss_pct: Rational,
    pub tie_pct: Rational,
}

impl WinStats {
    fn from_counts(wins: u64, losses: u64, ties: u64, missing: u64) -> WinStats {
        let judged = (wins + losses + ties) as i128;
        let pct = |n: u64| {
            if judged == 0 {
                Rational::ZERO
            } else {
                Rational::new(n as i128 * 100, judged)
            }
        };
        WinStats {
            wins,
            losses,
            ties,
            missing,
            win_pct: pct(wins),
            loss_pct: pct(losses),
            tie_pct: pct(ties),
        }
    }

    pub fn total_cells(&self) -> u64 {
        self.wins + self.losses + self.ties + self.missing
    }
}

/// Per-condition metric means.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub task_count: u64,
    pub file_iou: Rational,
    pub steps: Rational,
    pub line_deviation: Rational,
}

/// Skill/base/tie percentages for one dimension, averaged over judges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionRow {
    pub skill_pct: Rational,
    pub base_pct: Rational,
    pub tie_pct: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateReport {
    /// The experimental condition label, e.g. "seq-all".
    pub setting: String,
    pub skill: MetricMeans,
    pub baseline: MetricMeans,
    /// judge id → dimension → stats.
    pub per_judge: BTreeMap<String, BTreeMap<Dimension, WinStats>>,
    /// Q1–Q4 win/loss/tie percentages averaged over judges.
    pub dimension_breakdown: BTreeMap<Dimension, DimensionRow>,
    /// Fraction of fully-judged (task, dimension, order) cells on which
    /// every judge named the same winner.
    pub agreement: Rational,
    /// Judged cells over expected cells, across all judges.
    pub coverage: Rational,
    pub flagged_cells: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AggregateError {
    NoMetrics,
    MissingCondition(Condition),
}

impl fmt::Display for AggregateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggregateError::NoMetrics => write!(f, "no task metrics to aggregate"),
            AggregateError::MissingCondition(c) => {
                write!(f, "no task metrics for the {c} condition")
            }
        }
    }
}

impl core::error::Error for AggregateError {}

fn means_for(metrics: &[&TaskMetrics]) -> MetricMeans {
    let ious: Vec<Rational> = metrics.iter().map(|m| m.file_iou).collect();
    let steps: Vec<Rational> = metrics
        .iter()
        .map(|m| Rational::from_int(m.steps as i128))
        .collect();
    let devs: Vec<Rational> = metrics.iter().map(|m| m.line_deviation).collect();
    MetricMeans {
        task_count: metrics.len() as u64,
        file_iou: Rational::mean(&ious),
        steps: Rational::mean(&steps),
        line_deviation: Rational::mean(&devs),
    }
}

/// Folds per-task metrics and judge verdicts into the run-pair report.
/// Order-invariant over both input lists.
pub fn aggregate(
    metrics: &[TaskMetrics],
    verdicts: &[JudgeVerdict],
    setting: &str,
) -> Result<AggregateReport, AggregateError> {
    if metrics.is_empty() {
        return Err(AggregateError::NoMetrics);
    }
    let skill_rows: Vec<&TaskMetrics> = metrics
        .iter()
        .filter(|m| m.condition == Condition::Skill)
        .collect();
    let base_rows: Vec<&TaskMetrics> = metrics
        .iter()
        .filter(|m| m.condition == Condition::Baseline)
        .collect();
    if skill_rows.is_empty() {
        return Err(AggregateError::MissingCondition(Condition::Skill));
    }
    if base_rows.is_empty() {
        return Err(AggregateError::MissingCondition(Condition::Baseline));
    }

    // Counts per (judge, dimension).
    let mut counts: BTreeMap<(String, Dimension), (u64, u64, u64, u64)> = BTreeMap::new();
    let mut flagged_cells = 0u64;
    for v in verdicts {
        let slot = counts
            .entry((v.judge_id.clone(), v.dimension))
            .or_insert((0, 0, 0, 0));
        match v.winner {
            CellResult::Skill => slot.0 += 1,
            CellResult::Baseline => slot.1 += 1,
            CellResult::Tie => slot.2 += 1,
            CellResult::Missing => slot.3 += 1,
        }
        if v.flagged {
            flagged_cells += 1;
        }
    }
    let mut per_judge: BTreeMap<String, BTreeMap<Dimension, WinStats>> = BTreeMap::new();
    for ((judge, dim), (w, l, t, m)) in counts {
        per_judge
            .entry(judge)
            .or_default()
            .insert(dim, WinStats::from_counts(w, l, t, m));
    }

    // Dimension rows: Q1–Q4 percentages averaged over judges.
    let mut dimension_breakdown = BTreeMap::new();
    for dim in Dimension::QUESTIONS {
        let mut wins = Vec::new();
        let mut losses = Vec::new();
        let mut ties = Vec::new();
        for stats in per_judge.values() {
            if let Some(s) = stats.get(&dim) {
                wins.push(s.win_pct);
                losses.push(s.loss_pct);
                ties.push(s.tie_pct);
            }
        }
        if !wins.is_empty() {
            dimension_breakdown.insert(
                dim,
                DimensionRow {
                    skill_pct: Rational::mean(&wins),
                    base_pct: Rational::mean(&losses),
                    tie_pct: Rational::mean(&ties),
                },
            );
        }
    }

    // Inter-judge agreement over (task, dimension, order) cells that every
    // judge actually judged.
    let judges: BTreeSet<&str> = verdicts.iter().map(|v| v.judge_id.as_str()).collect();
    let mut cells: BTreeMap<(&str, Dimension, PresentationOrder), BTreeMap<&str, CellResult>> =
        BTreeMap::new();
    for v in verdicts {
        if v.winner != CellResult::Missing {
            cells
                .entry((v.task_id.as_str(), v.dimension, v.presentation_order))
                .or_default()
                .insert(v.judge_id.as_str(), v.winner);
        }
    }
    let (mut agree_num, mut agree_den) = (0i128, 0i128);
    if judges.len() >= 2 {
        for results in cells.values() {
            if results.len() == judges.len() {
                agree_den += 1;
                let mut iter = results.values();
                let first = iter.next().unwrap();
                if iter.all(|r| r == first) {
                    agree_num += 1;
                }
            }
        }
    }
    let agreement = if agree_den == 0 {
        Rational::ZERO
    } else {
        Rational::new(agree_num, agree_den)
    };

    let total_cells: u64 = verdicts.len() as u64;
    let judged_cells: u64 = verdicts
        .iter()
        .filter(|v| v.winner != CellResult::Missing)
        .count() as u64;
    let coverage = if total_cells == 0 {
        Rational::ONE
    } else {
        Rational::new(judged_cells as i128, total_cells as i128)
    };

    Ok(AggregateReport {
        setting: setting.to_string(),
        skill: means_for(&skill_rows),
        baseline: means_for(&base_rows),
        per_judge,
        dimension_breakdown,
        agreement,
        coverage,
        flagged_cells,
    })
}
