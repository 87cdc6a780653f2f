//! Wire protocol between agent policies and the environment.
//!
//! Assistant messages carry an optional leading `<think>…</think>` segment,
//! free prose, and any number of tool calls serialized as one-line JSON
//! objects inside `<tool_call>…</tool_call>` tags:
//!
//! ```text
//! <tool_call>{"name": "<function-name>", "arguments": {...}}</tool_call>
//! ```
//!
//! This module owns the ten-tool schema set, message parsing and
//! serialization, and the rendering of the system prompt and tool
//! observations.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const CALL_OPEN: &str = "<tool_call>";
pub const CALL_CLOSE: &str = "</tool_call>";

/// Canonical tool names, in prompt order.
pub const TOOL_NAMES: [&str; 10] = [
    "find_files",
    "read_file",
    "write_file",
    "run_sh",
    "upgrade_gradle",
    "find_files_with_text",
    "remove_dependency",
    "ask_for_help",
    "dependency_upgrade",
    "validate_and_build",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub type_name: &'static str,
    pub required: bool,
    pub description: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToolSchema {
    pub name: &'static str,
    pub description: &'static str,
    pub params: &'static [ParamSpec],
}

const fn param(name: &'static str, required: bool, description: &'static str) -> ParamSpec {
    ParamSpec {
        name,
        type_name: "string",
        required,
        description,
    }
}

static SCHEMAS: [ToolSchema; 10] = [
    ToolSchema {
        name: "find_files",
        description: "Find files by name or pattern.",
        params: &[param("file_path", true, "glob or filename to search")],
    },
    ToolSchema {
        name: "read_file",
        description: "Read contents of a file.",
        params: &[param("file_path", true, "file name or path to read")],
    },
    ToolSchema {
        name: "write_file",
        description: "Write contents to an existing file while preserving structure and comments.",
        params: &[
            param("file_path", true, "file name or path to write"),
            param(
                "updated_contents",
                true,
                "complete new contents of the file",
            ),
        ],
    },
    ToolSchema {
        name: "run_sh",
        description: "Execute shell commands and return stdout/stderr.",
        params: &[param("cmd", true, "shell command to execute")],
    },
    ToolSchema {
        name: "upgrade_gradle",
        description: "Upgrade Gradle when builds fail due to deprecated versions.",
        params: &[],
    },
    ToolSchema {
        name: "find_files_with_text",
        description: "Search for files containing a specific string.",
        params: &[
            param("search_text", true, "literal text to search for"),
            param(
                "glob_file_pattern",
                false,
                "optional glob restricting the searched files",
            ),
        ],
    },
    ToolSchema {
        name: "remove_dependency",
        description: "Remove a dependency from product-spec.json.",
        params: &[param(
            "dependency_name",
            true,
            "name of the dependency to remove",
        )],
    },
    ToolSchema {
        name: "ask_for_help",
        description: "Query internal knowledge base for troubleshooting advice.",
        params: &[param(
            "troubleshooting_question",
            true,
            "question to ask the knowledge base",
        )],
    },
    ToolSchema {
        name: "dependency_upgrade",
        description: "Run mint dependency update to upgrade libraries.",
        params: &[
            param(
                "dependency_to_upgrade",
                true,
                "name of the dependency to upgrade",
            ),
            param(
                "version_to_upgrade_to",
                false,
                "optional explicit target version",
            ),
        ],
    },
    ToolSchema {
        name: "validate_and_build",
        description: "Run a full build and return results.",
        params: &[],
    },
];

/// The ten registered tool schemas.
pub fn schemas() -> &'static [ToolSchema] {
    &SCHEMAS
}

pub fn schema(name: &str) -> Option<&'static ToolSchema> {
    SCHEMAS.iter().find(|s| s.name == name)
}

/// A parsed agent action: tool name plus a JSON argument object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    #[serde(default)]
    pub arguments: serde_json::Map<String, Value>,
}

impl ToolCall {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            arguments: serde_json::Map::new(),
        }
    }

    pub fn with_arg(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.arguments.insert(key.to_string(), value.into());
        self
    }
}

/// A tool-call block whose body could not be parsed. The surrounding message
/// is still processed; well-formed blocks after it parse normally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalformedBlock {
    /// Byte offset of the opening tag in the raw message.
    pub offset: usize,
    pub body: String,
    pub error: String,
}

/// One assistant message split into thinking, prose, and tool calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssistantMessage {
    pub thinking: Option<String>,
    pub visible_text: String,
    pub tool_calls: Vec<ToolCall>,
    #[serde(default)]
    pub malformed: Vec<MalformedBlock>,
    pub raw: String,
}

fn parse_call_body(body: &str) -> Result<ToolCall, String> {
    let value: Value = serde_json::from_str(body).map_err(|e| e.to_string())?;
    let Value::Object(mut obj) = value else {
        return Err("tool call body is not a JSON object".to_string());
    };
    let name = match obj.remove("name") {
        Some(Value::String(s)) => s,
        Some(_) => return Err("\"name\" must be a string".to_string()),
        None => return Err("missing \"name\" field".to_string()),
    };
    let arguments = match obj.remove("arguments") {
        None | Some(Value::Null) => serde_json::Map::new(),
        Some(Value::Object(map)) => map,
        Some(_) => return Err("\"arguments\" must be an object".to_string()),
    };
    Ok(ToolCall { name, arguments })
}

/// Split a raw assistant string into thinking, visible text, and tool calls.
///
/// At most one think block is recognized, and only in leading position; later
/// think markup is ordinary visible text. Tool-call blocks are extracted in
/// document order. A block whose body fails to parse is recorded in
/// `malformed` with its byte offset and does not stop the scan.
pub fn parse_assistant(raw: &str) -> AssistantMessage {
    let mut thinking = None;
    let mut visible = String::new();
    let mut tool_calls = Vec::new();
    let mut malformed = Vec::new();

    let mut cursor = 0usize;
    let lead_ws = raw.len() - raw.trim_start().len();
    if raw[lead_ws..].starts_with(THINK_OPEN) {
        if let Some(close) = raw[lead_ws..].find(THINK_CLOSE) {
            let inner = &raw[lead_ws + THINK_OPEN.len()..lead_ws + close];
            thinking = Some(inner.trim().to_string());
            cursor = lead_ws + close + THINK_CLOSE.len();
        }
    }

    while let Some(open_rel) = raw[cursor..].find(CALL_OPEN) {
        let open = cursor + open_rel;
        let body_start = open + CALL_OPEN.len();
        let Some(close_rel) = raw[body_start..].find(CALL_CLOSE) else {
            break;
        };
        let body_end = body_start + close_rel;
        visible.push_str(&raw[cursor..open]);
        let body = raw[body_start..body_end].trim();
        match parse_call_body(body) {
            Ok(call) => tool_calls.push(call),
            Err(error) => malformed.push(MalformedBlock {
                offset: open,
                body: body.to_string(),
                error,
            }),
        }
        cursor = body_end + CALL_CLOSE.len();
    }
    visible.push_str(&raw[cursor..]);

    AssistantMessage {
        thinking,
        visible_text: visible.trim().to_string(),
        tool_calls,
        malformed,
        raw: raw.to_string(),
    }
}

/// The one-line JSON body of a tool call, without the surrounding tags.
pub fn serialize_tool_call_body(call: &ToolCall) -> String {
    let body = serde_json::json!({ "name": call.name, "arguments": call.arguments });
    serde_json::to_string(&body).expect("static shape")
}

/// One-line wire form of a tool call, including the surrounding tags.
pub fn serialize_tool_call(call: &ToolCall) -> String {
    format!("{CALL_OPEN}{}{CALL_CLOSE}", serialize_tool_call_body(call))
}

/// Canonical textual form of a parsed message: think block, visible text,
/// then tool-call blocks, newline separated. Parsing the output again yields
/// an equal message, so serialize-then-parse is a fixpoint. Malformed blocks
/// are dropped.
pub fn serialize_assistant(msg: &AssistantMessage) -> String {
    let mut out = String::new();
    if let Some(thinking) = &msg.thinking {
        out.push_str(THINK_OPEN);
        out.push_str(thinking);
        out.push_str(THINK_CLOSE);
    }
    if !msg.visible_text.is_empty() {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&msg.visible_text);
    }
    for call in &msg.tool_calls {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&serialize_tool_call(call));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("unknown tool: {0}")]
    UnknownTool(String),
    #[error("tool {tool} is missing required parameter {param}")]
    MissingParameter { tool: String, param: String },
}

/// A tool call checked against its schema. Parameters outside the schema are
/// preserved on the call and listed in `extra_params`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedCall {
    pub call: ToolCall,
    pub extra_params: Vec<String>,
}

impl ValidatedCall {
    pub fn name(&self) -> &str {
        &self.call.name
    }
}

/// Check a call against the registered schemas: the tool must exist and every
/// required parameter must be present and non-null. Values are kept as the
/// scalars the agent sent; tools stringify them on use.
pub fn validate_call(call: &ToolCall) -> Result<ValidatedCall, ValidationError> {
    let Some(schema) = schema(&call.name) else {
        return Err(ValidationError::UnknownTool(call.name.clone()));
    };
    for spec in schema.params {
        if !spec.required {
            continue;
        }
        match call.arguments.get(spec.name) {
            None | Some(Value::Null) => {
                return Err(ValidationError::MissingParameter {
                    tool: call.name.clone(),
                    param: spec.name.to_string(),
                })
            }
            Some(_) => {}
        }
    }
    let extra_params = call
        .arguments
        .keys()
        .filter(|key| schema.params.iter().all(|p| p.name != key.as_str()))
        .cloned()
        .collect();
    Ok(ValidatedCall {
        call: call.clone(),
        extra_params,
    })
}

fn render_tool_signatures() -> String {
    let mut out = String::from("<tools>\n");
    for schema in schemas() {
        out.push_str(schema.name);
        out.push_str(": ");
        out.push_str(schema.description);
        out.push('\n');
        if schema.params.is_empty() {
            out.push_str("Parameters: {}\n");
        } else {
            out.push_str("Parameters: {");
            for (idx, p) in schema.params.iter().enumerate() {
                if idx > 0 {
                    out.push_str(", ");
                }
                let opt = if p.required { "" } else { ", optional" };
                out.push_str(&format!(
                    "{} ({}{}): {}",
                    p.name, p.type_name, opt, p.description
                ));
            }
            out.push_str("}\n");
        }
        out.push('\n');
    }
    out.push_str("</tools>");
    out
}

/// Render the system prompt for one problem: role preamble, repository and
/// error context, the recommended fix, standing instructions, the ten tool
/// signatures, and the tool-call format block. Inputs are interpolated
/// verbatim.
pub fn render_system_prompt(error_text: &str, fix_text: &str, repo_name: &str) -> String {
    format!(
        "You are a fully automated software agent tasked with independently fixing a build \
         issue with a software project.\n\
         \n\
         Repository: {repo_name}\n\
         \n\
         Build Error:\n\
         {error_text}\n\
         \n\
         Recommended Fix:\n\
         {fix_text}\n\
         Apply the fix using the tools provided to fix the problem. Use the validate_and_build \
         tool to verify the result of your work and act based on the results.\n\
         \n\
         Important Instructions:\n\
         - DO NOT respond with suggestions, ask questions, or engage in a conversation.\n\
         - DO NOT ask for confirmation or approval to apply the fix or perform any actions.\n\
         - Never give up. Keep making decisions based on the information you have and keep \
         taking action until the problem is fixed.\n\
         \n\
         Available Tools:\n\
         {tools}\n\
         \n\
         Tool Call Format:\n\
         Each tool invocation returns a JSON object wrapped in {open}{close} tags.\n\
         \n\
         {open}{{\"name\": \"<function-name>\", \"arguments\": {{...}}}}{close}",
        tools = render_tool_signatures(),
        open = CALL_OPEN,
        close = CALL_CLOSE,
    )
}

/// The user turn that accompanies the system prompt.
pub fn render_user_message(fix_text: &str) -> String {
    format!("Fix: {fix_text}")
}

/// Outcome status of one tool execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolStatus {
    Ok,
    Error,
    Tooltimeout,
}

impl std::fmt::Display for ToolStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ToolStatus::Ok => write!(f, "ok"),
            ToolStatus::Error => write!(f, "error"),
            ToolStatus::Tooltimeout => write!(f, "tooltimeout"),
        }
    }
}

/// The environment's observation reply for one tool call.
///
/// `Tooltimeout` is only ever produced by the timeout supervisor when a tool
/// process is killed for exceeding its wall-clock budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub tool_name: String,
    pub status: ToolStatus,
    pub content: String,
}

impl ToolResult {
    pub fn ok(tool_name: &str, content: impl Into<String>) -> Self {
        Self {
            tool_name: tool_name.to_string(),
            status: ToolStatus::Ok,
            content: content.into(),
        }
    }

    pub fn error(tool_name: &str, content: impl Into<String>) -> Self {
        Self {
            tool_name: tool_name.to_string(),
            status: ToolStatus::Error,
            content: content.into(),
        }
    }

    pub fn timeout(tool_name: &str, content: impl Into<String>) -> Self {
        Self {
            tool_name: tool_name.to_string(),
            status: ToolStatus::Tooltimeout,
            content: content.into(),
        }
    }
}

/// Deterministic textual observation fed back as the next tool-role message.
pub fn render_tool_result(result: &ToolResult) -> String {
    format!(
        "tool: {}\nstatus: {}\n{}",
        result.tool_name, result.status, result.content
    )
}
