//! Pairwise multi-dimension judge protocol.
//!
//! Each (task, dimension) cell is judged in both presentation orders with
//! the candidates anonymized as A and B, so position bias is measurable
//! instead of hidden. Judges see the task query, both candidate patches,
//! and the oracle patch — never trajectories.

use anyhow::Result;
use rand::Rng;

use ltc_core::aggregate::{CellResult, Dimension, JudgeVerdict, PresentationOrder};
use ltc_core::diff::Patch;
use ltc_core::mining::TaskSpec;

use crate::gateway::{ChatRequest, Gateway, Role};

fn dimension_question(dimension: Dimension) -> &'static str {
    match dimension {
        Dimension::Q1 => "Q1 scope alignment: which patch more accurately modifies the files and functions the oracle modifies?",
        Dimension::Q2 => "Q2 logic similarity: which patch is closer to the oracle's core implementation logic?",
        Dimension::Q3 => "Q3 redundancy and hallucination: which patch is more concise, without over-engineering or reinventing existing utilities?",
        Dimension::Q4 => "Q4 code style: which patch better matches the repository's native conventions as evidenced by the oracle?",
        Dimension::Overall => "Overall: considering scope, logic, conciseness, and style together, which patch is the better change?",
    }
}

fn cell_prompt(
    task: &TaskSpec,
    first: &Patch,
    second: &Patch,
    oracle: &Patch,
    dimension: Dimension,
) -> String {
    let show = |p: &Patch| {
        let text = p.source_text();
        if text.trim().is_empty() {
            "(empty patch)".to_string()
        } else {
            text.to_string()
        }
    };
    format!(
        "Two anonymous candidate patches (A and B) address the same task; the expert oracle \
         patch is included for reference.\n\n{}\n\nAnswer with a single token on the first \
         line: A, B, or TIE. Add a one-sentence rationale on the next line.\n\n\
         ## Task\n{}\n\n## Patch A\n{}\n\n## Patch B\n{}\n\n## Oracle patch\n{}\n",
        dimension_question(dimension),
        task.query,
        show(first),
        show(second),
        show(oracle),
    )
}

/// First token of the reply: A / B / TIE (case-insensitive).
fn parse_winner(reply: &str) -> Option<(char, String)> {
    let mut lines = reply.trim().lines();
    let first = lines.next()?.trim();
    let token: String = first
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect::<String>()
        .to_ascii_uppercase();
    let rationale = lines.collect::<Vec<_>>().join("\n").trim().to_string();
    match token.as_str() {
        "A" => Some(('A', rationale)),
        "B" => Some(('B', rationale)),
        "TIE" => Some(('T', rationale)),
        _ => None,
    }
}

fn de_anonymize(letter: char, order: PresentationOrder) -> CellResult {
    match (letter, order) {
        ('T', _) => CellResult::Tie,
        ('A', PresentationOrder::SkillFirst) => CellResult::Skill,
        ('B', PresentationOrder::SkillFirst) => CellResult::Baseline,
        ('A', PresentationOrder::BaselineFirst) => CellResult::Baseline,
        ('B', PresentationOrder::BaselineFirst) => CellResult::Skill,
        _ => CellResult::Tie,
    }
}

/// Judges one task across Q1–Q4 and overall. With `both_orders` the cell
/// runs once per presentation order (the randomized order merely decides
/// which is issued first); otherwise only the randomized order runs.
/// Unparseable replies retry once then record a flagged tie; gateway
/// failures record the cell as missing.
#[allow(clippy::too_many_arguments)]
pub fn judge_pair(
    task: &TaskSpec,
    skill_patch: &Patch,
    baseline_patch: &Patch,
    oracle_patch: &Patch,
    gateway: &Gateway,
    judge_id: &str,
    both_orders: bool,
    rng: &mut impl Rng,
) -> Result<Vec<JudgeVerdict>> {
    let mut verdicts = Vec::new();
    let first_order = if rng.gen_bool(0.5) {
        PresentationOrder::SkillFirst
    } else {
        PresentationOrder::BaselineFirst
    };
    let orders: Vec<PresentationOrder> = if both_orders {
        match first_order {
            PresentationOrder::SkillFirst => {
                vec![PresentationOrder::SkillFirst, PresentationOrder::BaselineFirst]
            }
            PresentationOrder::BaselineFirst => {
                vec![PresentationOrder::BaselineFirst, PresentationOrder::SkillFirst]
            }
        }
    } else {
        vec![first_order]
    };

    for dimension in Dimension::ALL {
        for order in &orders {
            let (first, second) = match order {
                PresentationOrder::SkillFirst => (skill_patch, baseline_patch),
                PresentationOrder::BaselineFirst => (baseline_patch, skill_patch),
            };
            let base = ChatRequest::new(judge_id.to_string(), &["judge"])
                .tag(format!("task:{}", task.task_id))
                .message(
                    Role::User,
                    cell_prompt(task, first, second, oracle_patch, dimension),
                );

            let mut winner: Option<(CellResult, String, bool)> = None;
            let mut gateway_failed = false;
            let mut request = base;
            for attempt in 0..2 {
                match gateway.complete(&request) {
                    Ok(reply) => match parse_winner(&reply) {
                        Some((letter, rationale)) => {
                            winner = Some((de_anonymize(letter, *order), rationale, false));
                            break;
                        }
                        None if attempt == 0 => {
                            request = request.message(Role::Assistant, reply).message(
                                Role::User,
                                "Answer with exactly one token on the first line: A, B, or TIE.",
                            );
                        }
                        None => {
                            winner = Some((CellResult::Tie, "unparseable reply".into(), true));
                        }
                    },
                    Err(crate::gateway::GatewayError::Audit(v)) => return Err(v.into()),
                    Err(_) => {
                        gateway_failed = true;
                        break;
                    }
                }
            }

            let (result, rationale, flagged) = match winner {
                Some(w) => w,
                None if gateway_failed => (CellResult::Missing, String::new(), false),
                None => (CellResult::Tie, "unparseable reply".into(), true),
            };
            verdicts.push(JudgeVerdict {
                task_id: task.task_id.clone(),
                judge_id: judge_id.to_string(),
                dimension,
                winner: result,
                rationale,
                presentation_order: *order,
                flagged,
            });
        }
    }
    Ok(verdicts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ExhaustionPolicy, ScriptEntry, ScriptedBackend};
    use ltc_core::diff::parse_patch;
    use ltc_core::mining::Pool;
    use rand::SeedableRng;
    use std::sync::Arc;

    fn task() -> TaskSpec {
        TaskSpec {
            task_id: "t1".into(),
            commit_id: "c1".into(),
            pool: Pool::Test,
            category: "testing".into(),
            query: "make it work".into(),
            snapshot_ref: "p".into(),
            oracle_patch: parse_patch("--- a/f\n+++ b/f\n@@ -1 +1 @@\n-a\n+b\n").unwrap(),
        }
    }

    fn always_a_gateway(id: &str) -> Gateway {
        let gw = Gateway::new(None);
        gw.register_backend(
            id,
            Arc::new(ScriptedBackend::new(
                vec![ScriptEntry {
                    tags: ["judge".to_string()].into(),
                    reply: "A\nfirst one looks better".into(),
                    ..Default::default()
                }],
                ExhaustionPolicy::Error,
            )),
        );
        gw
    }

    #[test]
    fn always_a_splits_fifty_fifty_across_orders() {
        let gw = always_a_gateway("judge1");
        let t = task();
        let patch = t.oracle_patch.clone();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let verdicts =
            judge_pair(&t, &patch, &patch, &t.oracle_patch, &gw, "judge1", true, &mut rng).unwrap();
        assert_eq!(verdicts.len(), 10, "5 dimensions x 2 orders");
        for dim in Dimension::ALL {
            let of_dim: Vec<_> = verdicts.iter().filter(|v| v.dimension == dim).collect();
            let skill = of_dim.iter().filter(|v| v.winner == CellResult::Skill).count();
            let base = of_dim
                .iter()
                .filter(|v| v.winner == CellResult::Baseline)
                .count();
            assert_eq!((skill, base), (1, 1), "position bias fully exposed for {dim}");
        }
    }

    #[test]
    fn tie_reply_maps_to_tie() {
        let gw = Gateway::new(None);
        gw.register_backend(
            "j",
            Arc::new(ScriptedBackend::new(
                vec![ScriptEntry {
                    reply: "TIE\nboth equal".into(),
                    ..Default::default()
                }],
                ExhaustionPolicy::RepeatLast,
            )),
        );
        let t = task();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let verdicts = judge_pair(
            &t,
            &t.oracle_patch,
            &t.oracle_patch,
            &t.oracle_patch,
            &gw,
            "j",
            false,
            &mut rng,
        )
        .unwrap();
        assert_eq!(verdicts.len(), 5);
        assert!(verdicts.iter().all(|v| v.winner == CellResult::Tie && !v.flagged));
    }

    #[test]
    fn unparseable_twice_is_flagged_tie() {
        let gw = Gateway::new(None);
        gw.register_backend(
            "j",
            Arc::new(ScriptedBackend::new(
                vec![ScriptEntry {
                    reply: "I cannot decide between these two patches".into(),
                    ..Default::default()
                }],
                ExhaustionPolicy::RepeatLast,
            )),
        );
        let t = task();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let verdicts = judge_pair(
            &t,
            &t.oracle_patch,
            &t.oracle_patch,
            &t.oracle_patch,
            &gw,
            "j",
            false,
            &mut rng,
        )
        .unwrap();
        assert!(verdicts.iter().all(|v| v.winner == CellResult::Tie && v.flagged));
    }

    #[test]
    fn gateway_failure_records_missing_cells() {
        let gw = Gateway::new(None); // no backend registered
        let t = task();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let verdicts = judge_pair(
            &t,
            &t.oracle_patch,
            &t.oracle_patch,
            &t.oracle_patch,
            &gw,
            "j",
            true,
            &mut rng,
        )
        .unwrap();
        assert_eq!(verdicts.len(), 10);
        assert!(verdicts.iter().all(|v| v.winner == CellResult::Missing));
    }

    #[test]
    fn de_anonymization_is_order_inverse() {
        assert_eq!(de_anonymize('A', PresentationOrder::SkillFirst), CellResult::Skill);
        assert_eq!(de_anonymize('A', PresentationOrder::BaselineFirst), CellResult::Baseline);
        assert_eq!(de_anonymize('B', PresentationOrder::SkillFirst), CellResult::Baseline);
        assert_eq!(de_anonymize('B', PresentationOrder::BaselineFirst), CellResult::Skill);
    }
}
