//! The gateway-driven agent loop. Tool results travel as plain messages;
//! there is no provider tool-calling wire protocol.

use super::tools::{self, ToolRequest};
use super::{AgentContext, AgentOutcome, AgentRunner, ToolCallRecord};
use crate::gateway::{ChatRequest, Role};

/// Documented test hook: when set, its value is smuggled into the system
/// prompt so the gateway audit can be exercised end to end.
pub const INJECT_ORACLE_ENV: &str = "LTC_INJECT_ORACLE_LINE";

const MAX_CONSECUTIVE_PARSE_FAILURES: u32 = 3;

const TOOL_PROTOCOL: &str = r#"Reply with exactly one tool call in a fenced block:

```tool
{"tool": "<name>", "args": { ... }}
```

Tools:
- read_file: {"path": "...", "start_line"?: n, "max_lines"?: n}
- search: {"query": "...", "regex"?: false}
- list_dir: {"path": "..."}
- edit_file: {"path": "...", "find": "...", "replace": "..."} — the find text must match exactly one location
- finish: {"summary"?: "..."} — call when the change is complete"#;

pub struct LlmAgent;

impl LlmAgent {
    fn system_prompt(ctx: &AgentContext) -> String {
        let mut prompt = format!(
            "You are a software engineer resolving a task in a repository checkout. \
             Explore with the tools, make the change, then finish.\n\n{TOOL_PROTOCOL}\n\n## Task\n{}\n",
            ctx.query
        );
        if !ctx.rendered_memory.is_empty() {
            prompt.push('\n');
            prompt.push_str(ctx.rendered_memory);
        }
        if let Ok(injected) = std::env::var(INJECT_ORACLE_ENV) {
            prompt.push('\n');
            prompt.push_str(&injected);
        }
        prompt
    }
}

impl AgentRunner for LlmAgent {
    fn run(&self, ctx: &AgentContext) -> anyhow::Result<AgentOutcome> {
        let mut request = ChatRequest::new(ctx.backend_id, &[]);
        for tag in ctx.audit_tags() {
            request = request.tag(tag);
        }
        request = request.message(Role::System, Self::system_prompt(ctx));

        let mut outcome = AgentOutcome::default();
        let mut parse_failures = 0u32;
        loop {
            if outcome.tool_calls.len() as u32 >= ctx.step_budget {
                outcome.truncated = true;
                break;
            }
            let reply = ctx.gateway.complete(&request)?;
            request = request.message(Role::Assistant, reply.clone());

            let tool_request = match tools::parse_tool_reply(&reply) {
                Ok(req) => {
                    parse_failures = 0;
                    req
                }
                Err(problem) => {
                    parse_failures += 1;
                    if parse_failures >= MAX_CONSECUTIVE_PARSE_FAILURES {
                        outcome.truncated = true;
                        break;
                    }
                    request = request.message(
                        Role::User,
                        format!("{problem}. Reply with exactly one ```tool block."),
                    );
                    continue;
                }
            };

            let index = outcome.tool_calls.len() as u32 + 1;
            let args_json = tool_request.args_json();
            if let ToolRequest::Finish { summary } = &tool_request {
                outcome.tool_calls.push(ToolCallRecord {
                    index,
                    tool: "finish".into(),
                    args_digest: super::short_digest(&args_json),
                    result_digest: super::short_digest(summary.as_deref().unwrap_or("")),
                });
                break;
            }

            // Tool failures surface to the agent; the trajectory continues.
            let result_text = match tools::execute(ctx.worktree, &tool_request) {
                Ok(text) => text,
                Err(err) => format!("error: {err}"),
            };
            outcome.tool_calls.push(ToolCallRecord {
                index,
                tool: tool_request.tool_name().to_string(),
                args_digest: super::short_digest(&args_json),
                result_digest: super::short_digest(&result_text),
            });
            request = request.message(
                Role::User,
                format!(
                    "Result of {} (call {index}):\n{result_text}",
                    tool_request.tool_name()
                ),
            );
        }
        Ok(outcome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ExhaustionPolicy, Gateway, ScriptedBackend};
    use std::sync::Arc;

    fn tool_reply(json: &str) -> String {
        format!("```tool\n{json}\n```")
    }

    #[test]
    fn loop_executes_edit_then_finish() {
        let wt = tempfile::tempdir().unwrap();
        std::fs::write(wt.path().join("main.py"), "VALUE = 1\n").unwrap();

        let gateway = Gateway::new(None);
        gateway.register_backend(
            "main",
            Arc::new(ScriptedBackend::queue(
                [
                    tool_reply(r#"{"tool": "edit_file", "args": {"path": "main.py", "find": "VALUE = 1", "replace": "VALUE = 2"}}"#),
                    tool_reply(r#"{"tool": "finish", "args": {"summary": "done"}}"#),
                ],
                ExhaustionPolicy::Error,
            )),
        );
        let ctx = AgentContext {
            task_id: "t1",
            query: "bump the value",
            rendered_memory: "",
            worktree: wt.path(),
            step_budget: 10,
            backend_id: "main",
            stage_tag: "learn_attempt",
            extra_tags: vec![],
            gateway: &gateway,
        };
        let outcome = LlmAgent.run(&ctx).unwrap();
        assert_eq!(outcome.tool_calls.len(), 2);
        assert_eq!(outcome.tool_calls[0].tool, "edit_file");
        assert_eq!(outcome.tool_calls[1].tool, "finish");
        assert!(!outcome.truncated);
        assert_eq!(
            std::fs::read_to_string(wt.path().join("main.py")).unwrap(),
            "VALUE = 2\n"
        );
    }

    #[test]
    fn budget_exhaustion_truncates() {
        let wt = tempfile::tempdir().unwrap();
        std::fs::write(wt.path().join("f.txt"), "x\n").unwrap();
        let gateway = Gateway::new(None);
        gateway.register_backend(
            "main",
            Arc::new(ScriptedBackend::new(
                vec![crate::gateway::ScriptEntry {
                    reply: tool_reply(r#"{"tool": "read_file", "args": {"path": "f.txt"}}"#),
                    ..Default::default()
                }],
                ExhaustionPolicy::RepeatLast,
            )),
        );
        let ctx = AgentContext {
            task_id: "t1",
            query: "loop forever",
            rendered_memory: "",
            worktree: wt.path(),
            step_budget: 3,
            backend_id: "main",
            stage_tag: "solve",
            extra_tags: vec![],
            gateway: &gateway,
        };
        let outcome = LlmAgent.run(&ctx).unwrap();
        assert!(outcome.truncated);
        assert_eq!(outcome.tool_calls.len(), 3);
    }

    #[test]
    fn unparseable_replies_get_bounded_retries() {
        let wt = tempfile::tempdir().unwrap();
        let gateway = Gateway::new(None);
        gateway.register_backend(
            "main",
            Arc::new(ScriptedBackend::queue(
                ["not a tool call", "still not", "nope"],
                ExhaustionPolicy::RepeatLast,
            )),
        );
        let ctx = AgentContext {
            task_id: "t1",
            query: "q",
            rendered_memory: "",
            worktree: wt.path(),
            step_budget: 10,
            backend_id: "main",
            stage_tag: "solve",
            extra_tags: vec![],
            gateway: &gateway,
        };
        let outcome = LlmAgent.run(&ctx).unwrap();
        assert!(outcome.truncated);
        assert!(outcome.tool_calls.is_empty());
    }

    #[test]
    fn memory_section_appears_only_when_nonempty() {
        let wt = tempfile::tempdir().unwrap();
        let ctx = AgentContext {
            task_id: "t1",
            query: "q",
            rendered_memory: "",
            worktree: wt.path(),
            step_budget: 1,
            backend_id: "main",
            stage_tag: "solve",
            extra_tags: vec!["baseline".into()],
            gateway: &Gateway::new(None),
        };
        let prompt = LlmAgent::system_prompt(&ctx);
        assert!(!prompt.contains(ltc_core::skills::RENDER_HEADER));
    }
}
