//! Programmed agent for unit tests: executes a fixed tool sequence per
//! task without touching the gateway.

use std::collections::BTreeMap;

use super::tools::{self, ToolRequest};
use super::{AgentContext, AgentOutcome, AgentRunner, ToolCallRecord};

#[derive(Default)]
pub struct ScriptedAgent {
    scripts: BTreeMap<String, Vec<ToolRequest>>,
}

impl ScriptedAgent {
    pub fn new() -> ScriptedAgent {
        ScriptedAgent::default()
    }

    pub fn with_task(mut self, task_id: &str, calls: Vec<ToolRequest>) -> ScriptedAgent {
        self.scripts.insert(task_id.to_string(), calls);
        self
    }
}

impl AgentRunner for ScriptedAgent {
    fn run(&self, ctx: &AgentContext) -> anyhow::Result<AgentOutcome> {
        let calls = self.scripts.get(ctx.task_id).cloned().unwrap_or_default();
        let mut outcome = AgentOutcome::default();
        for request in calls {
            if outcome.tool_calls.len() as u32 >= ctx.step_budget {
                outcome.truncated = true;
                break;
            }
            let index = outcome.tool_calls.len() as u32 + 1;
            let args_json = request.args_json();
            let result = match &request {
                ToolRequest::Finish { summary } => summary.clone().unwrap_or_default(),
                other => match tools::execute(ctx.worktree, other) {
                    Ok(text) => text,
                    Err(err) => format!("error: {err}"),
                },
            };
            outcome.tool_calls.push(ToolCallRecord {
                index,
                tool: request.tool_name().to_string(),
                args_digest: super::short_digest(&args_json),
                result_digest: super::short_digest(&result),
            });
            if matches!(request, ToolRequest::Finish { .. }) {
                break;
            }
        }
        Ok(outcome)
    }
}
