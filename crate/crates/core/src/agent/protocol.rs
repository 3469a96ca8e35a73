use serde_json::{json, Map, Value};

use super::{AgentAction, AgentError, AgentMode, AgentState, ReasoningTrace};
use crate::gateway::{ChatMessage, ChatRequest, Completion, Provider, Purpose, ToolSchema};

pub const INITIAL_SEARCH: &str = "initial_search";
pub const CONTENT_SEARCH: &str = "content_search";
pub const CONFIRM_INTENT: &str = "confirm_intent";
pub const FINAL_RESPONSE: &str = "final_response";

const FORCED_NOTE: &str = "The search limit for this question has been reached. Answer now by calling final_response, using only the sources retrieved so far.";

fn reflections() -> Map<String, Value> {
    let field = |d: &str| json!({ "type": "string", "description": d });
    let mut m = Map::new();
    m.insert("query_reflection".into(), field("What the student is asking and what they most likely need."));
    m.insert(
        "search_content_reflection".into(),
        field("Whether the content retrieved so far is relevant and sufficient."),
    );
    m.insert("action_reasoning".into(), field("Which action to take next and why."));
    m
}

fn schema(name: &str, description: &str, extra: Value, required: &[&str]) -> ToolSchema {
    let mut props = reflections();
    if let Value::Object(e) = extra {
        props.extend(e);
    }
    let mut req = vec!["query_reflection", "search_content_reflection", "action_reasoning"];
    req.extend_from_slice(required);
    ToolSchema {
        name: name.into(),
        description: description.into(),
        parameters: json!({ "type": "object", "properties": props, "required": req }),
    }
}

/// The four action tools. TexDoC's content search has no image queries.
pub fn tool_schemas(mode: AgentMode) -> Vec<ToolSchema> {
    let list = |d: &str| json!({ "type": "array", "items": { "type": "string" }, "description": d });
    let mut content = json!({ "text_queries": list("Search queries for textbook passages.") });
    if mode.has_images() {
        content["image_queries"] = list("Search queries for textbook figures.");
    }
    vec![
        schema(
            INITIAL_SEARCH,
            "Quick lookup returning the three best textbook passages.",
            json!({ "query": { "type": "string" } }),
            &["query"],
        ),
        schema(
            CONTENT_SEARCH,
            if mode.has_images() {
                "Thorough search returning up to ten passages and five figures."
            } else {
                "Thorough search returning up to ten passages."
            },
            content,
            &["text_queries"],
        ),
        schema(
            CONFIRM_INTENT,
            "Ask the student a clarifying question.",
            json!({ "question": { "type": "string" } }),
            &["question"],
        ),
        schema(
            FINAL_RESPONSE,
            "Answer the student using the retrieved sources.",
            json!({ "content": { "type": "string" } }),
            &["content"],
        ),
    ]
}

pub struct StepRequest<'a> {
    pub system_prompt: &'a str,
    /// Offer only `final_response`.
    pub forced: bool,
    pub history_budget: usize,
}

/// A parsed model step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub trace: ReasoningTrace,
    pub action: AgentAction,
    /// Tool name and raw arguments as sent by the model.
    pub tool: String,
    pub arguments: String,
    /// Image queries removed because the mode has no image pipeline.
    pub stripped_image_queries: usize,
}

fn string_field(args: &Map<String, Value>, key: &str) -> String {
    args.get(key).and_then(Value::as_str).unwrap_or_default().to_string()
}

fn required_string(args: &Map<String, Value>, key: &str) -> Result<String, String> {
    match args.get(key).and_then(Value::as_str).map(str::trim) {
        Some(s) if !s.is_empty() => Ok(s.to_string()),
        _ => Err(format!("missing or empty `{key}`")),
    }
}

fn string_list(args: &Map<String, Value>, key: &str) -> Result<Vec<String>, String> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().map(|s| s.trim().to_string()).ok_or_else(|| format!("`{key}` must hold strings")))
            .filter(|r| !matches!(r, Ok(s) if s.is_empty()))
            .collect(),
        Some(_) => Err(format!("`{key}` must be an array")),
    }
}

fn parse(completion: &Completion, offered: &[ToolSchema]) -> Result<(String, String, ReasoningTrace, AgentAction), String> {
    let call = completion.tool_calls.first().ok_or("no tool call in reply")?;
    if !offered.iter().any(|t| t.name == call.name) {
        return Err(format!("tool `{}` was not offered", call.name));
    }
    let args: Map<String, Value> = match serde_json::from_str(&call.arguments) {
        Ok(Value::Object(m)) => m,
        Ok(_) => return Err("arguments are not a JSON object".into()),
        Err(e) => return Err(format!("arguments are not valid JSON: {e}")),
    };
    let trace = ReasoningTrace {
        query_reflection: string_field(&args, "query_reflection"),
        search_content_reflection: string_field(&args, "search_content_reflection"),
        action_reasoning: string_field(&args, "action_reasoning"),
    };
    let action = match call.name.as_str() {
        INITIAL_SEARCH => AgentAction::InitialSearch { query: required_string(&args, "query")? },
        CONTENT_SEARCH => {
            let text_queries = string_list(&args, "text_queries")?;
            let image_queries = string_list(&args, "image_queries")?;
            if text_queries.is_empty() && image_queries.is_empty() {
                return Err("content_search without any query".into());
            }
            AgentAction::ContentSearch { text_queries, image_queries }
        }
        CONFIRM_INTENT => AgentAction::ConfirmIntent { question: required_string(&args, "question")? },
        FINAL_RESPONSE => AgentAction::FinalResponse { content: required_string(&args, "content")? },
        other => return Err(format!("unknown tool `{other}`")),
    };
    Ok((call.name.clone(), call.arguments.clone(), trace, action))
}

/// Asks the model for one reasoning trace and one action. A reply that does
/// not follow the protocol gets one corrective reprompt.
pub async fn step(state: &AgentState, provider: &dyn Provider, req: &StepRequest<'_>) -> Result<StepOutput, AgentError> {
    if state.iteration >= state.max_iterations {
        return Err(AgentError::IterationLimit);
    }
    let tools: Vec<ToolSchema> = tool_schemas(state.mode)
        .into_iter()
        .filter(|t| !req.forced || t.name == FINAL_RESPONSE)
        .collect();
    let mut messages = vec![ChatMessage::system(req.system_prompt)];
    messages.extend(state.messages(req.history_budget));
    if req.forced {
        messages.push(ChatMessage::system(FORCED_NOTE));
    }
    let purpose = if req.forced { Purpose::ForcedFinal } else { Purpose::AgentStep };
    let mut request = ChatRequest::new(purpose, messages).with_tools(tools, true);

    let mut failure = String::new();
    for attempt in 0..2 {
        if attempt == 1 {
            request.messages.push(ChatMessage::system(format!(
                "Your previous reply could not be used: {failure}. Reply by calling exactly one of the offered tools with valid arguments."
            )));
        }
        let completion = provider.chat(&request).await?;
        match parse(&completion, &request.tools) {
            Ok((tool, arguments, trace, mut action)) => {
                let mut stripped = 0;
                if let AgentAction::ContentSearch { image_queries, .. } = &mut action {
                    if !state.mode.has_images() && !image_queries.is_empty() {
                        stripped = image_queries.len();
                        tracing::warn!(count = stripped, "image queries dropped in text-only mode");
                        image_queries.clear();
                    }
                }
                return Ok(StepOutput { trace, action, tool, arguments, stripped_image_queries: stripped });
            }
            Err(e) => {
                tracing::warn!(attempt, error = %e, "unusable agent step");
                failure = e;
            }
        }
    }
    Err(AgentError::Protocol(failure))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockMatch, MockProvider, MockReply, MockScript};

    fn req() -> StepRequest<'static> {
        StepRequest { system_prompt: "sys", forced: false, history_budget: 100_000 }
    }

    fn state(mode: AgentMode) -> AgentState {
        let mut s = AgentState::new(mode, 6);
        s.history.push(super::super::HistoryEntry::User { content: "What is synapsis?".into() });
        s
    }

    fn mock(replies: Vec<MockReply>) -> MockProvider {
        MockProvider::new(MockScript::new(0, 4).route(MockMatch::Any, replies))
    }

    #[tokio::test]
    async fn scripted_initial_search() {
        let m = mock(vec![MockReply::tool(
            INITIAL_SEARCH,
            json!({"query_reflection": "q", "search_content_reflection": "s", "action_reasoning": "a", "query": "synapsis"}),
        )]);
        let out = step(&state(AgentMode::MuDoC), &m, &req()).await.unwrap();
        assert_eq!(out.action, AgentAction::InitialSearch { query: "synapsis".into() });
        assert_eq!(out.trace.query_reflection, "q");
        assert_eq!(out.trace.action_reasoning, "a");
    }

    #[tokio::test]
    async fn texdoc_strips_image_queries() {
        let m = mock(vec![MockReply::tool(
            CONTENT_SEARCH,
            json!({"text_queries": ["meiosis"], "image_queries": ["meiosis diagram"]}),
        )]);
        let out = step(&state(AgentMode::TexDoC), &m, &req()).await.unwrap();
        assert_eq!(
            out.action,
            AgentAction::ContentSearch { text_queries: vec!["meiosis".into()], image_queries: vec![] }
        );
        assert_eq!(out.stripped_image_queries, 1);
        assert_eq!(out.trace, ReasoningTrace::default());
    }

    #[tokio::test]
    async fn malformed_twice_is_protocol_error() {
        let m = mock(vec![MockReply::text("just chatting"), MockReply::raw_tool(FINAL_RESPONSE, "{not json")]);
        assert!(matches!(step(&state(AgentMode::MuDoC), &m, &req()).await, Err(AgentError::Protocol(_))));
        assert_eq!(m.chat_calls(), 2);
    }

    #[tokio::test]
    async fn one_reprompt_recovers() {
        let m = mock(vec![
            MockReply::tool(FINAL_RESPONSE, json!({"content": ""})),
            MockReply::tool(FINAL_RESPONSE, json!({"content": "Answer."})),
        ]);
        let out = step(&state(AgentMode::MuDoC), &m, &req()).await.unwrap();
        assert_eq!(out.action, AgentAction::FinalResponse { content: "Answer.".into() });
    }

    #[tokio::test]
    async fn forced_step_offers_only_final_response() {
        let m = mock(vec![
            MockReply::tool(CONTENT_SEARCH, json!({"text_queries": ["x"]})),
            MockReply::tool(CONTENT_SEARCH, json!({"text_queries": ["x"]})),
        ]);
        let r = StepRequest { forced: true, ..req() };
        assert!(matches!(step(&state(AgentMode::MuDoC), &m, &r).await, Err(AgentError::Protocol(_))));
        assert_eq!(m.purposes(), vec![Purpose::ForcedFinal, Purpose::ForcedFinal]);
    }

    #[test]
    fn texdoc_schema_has_no_image_queries() {
        let tools = tool_schemas(AgentMode::TexDoC);
        let cs = tools.iter().find(|t| t.name == CONTENT_SEARCH).unwrap();
        assert!(cs.parameters["properties"].get("image_queries").is_none());
        let tools = tool_schemas(AgentMode::MuDoC);
        let cs = tools.iter().find(|t| t.name == CONTENT_SEARCH).unwrap();
        assert!(cs.parameters["properties"].get("image_queries").is_some());
        assert_eq!(tools.len(), 4);
    }
}
