//! Uniform chat-completion layer for the five model roles: answering, triple
//! extraction, query regeneration, relevance checking, and reference
//! (knowledge-model) generation.
//!
//! Every outbound call renders a role-specific template, is keyed by a
//! stable hash of the slot values, and lands exactly once in the exchange
//! trace. The trace is a replayable record: a [`FixtureBackend`] built from
//! it reproduces the run response-for-response.

mod backend;
mod template;

pub use backend::{
    ChatBackend, ChatRequest, ChatResponse, FixtureBackend, FixtureRecord, HttpBackend,
    HttpEndpoint,
};
pub use template::PromptTemplate;

use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// The model roles the pipeline calls out to.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LlmRole {
    Answer,
    TripleExtract,
    QueryGen,
    Relevance,
    Knowledge(String),
}

impl fmt::Display for LlmRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LlmRole::Answer => write!(f, "answer"),
            LlmRole::TripleExtract => write!(f, "triple_extract"),
            LlmRole::QueryGen => write!(f, "query_gen"),
            LlmRole::Relevance => write!(f, "relevance"),
            LlmRole::Knowledge(name) => write!(f, "knowledge:{name}"),
        }
    }
}

/// One completed call, logged verbatim for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub role: String,
    pub turn: usize,
    pub key: String,
    pub prompt: String,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
}

/// Backend, template, and call parameters bound to one role.
pub struct RoleBinding {
    pub backend: Arc<dyn ChatBackend>,
    pub template: PromptTemplate,
    pub system: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl RoleBinding {
    pub fn new(backend: Arc<dyn ChatBackend>, template: PromptTemplate) -> Self {
        RoleBinding {
            backend,
            template,
            system: None,
            temperature: 0.0,
            max_tokens: 512,
        }
    }
}

/// Built-in template text for a role (knowledge models share one).
pub fn default_template(role: &LlmRole) -> &'static str {
    match role {
        LlmRole::Answer => include_str!("../../templates/answer.txt"),
        LlmRole::TripleExtract => include_str!("../../templates/triple_extract.txt"),
        LlmRole::QueryGen => include_str!("../../templates/query_gen.txt"),
        LlmRole::Relevance => include_str!("../../templates/relevance.txt"),
        LlmRole::Knowledge(_) => include_str!("../../templates/reference_gen.txt"),
    }
}

struct TraceLog {
    entries: Vec<ChatExchange>,
    file: Option<File>,
}

pub struct Gateway {
    answer: RoleBinding,
    triple_extract: RoleBinding,
    query_gen: RoleBinding,
    relevance: RoleBinding,
    knowledge: Vec<(String, RoleBinding)>,
    max_concurrency: usize,
    trace: Mutex<TraceLog>,
}

impl Gateway {
    pub fn new(
        answer: RoleBinding,
        triple_extract: RoleBinding,
        query_gen: RoleBinding,
        relevance: RoleBinding,
        knowledge: Vec<(String, RoleBinding)>,
        max_concurrency: usize,
        trace_path: Option<&Path>,
    ) -> Result<Self> {
        let file = match trace_path {
            Some(p) => Some(File::create(p).map_err(|e| Error::io(p.display().to_string(), e))?),
            None => None,
        };
        Ok(Gateway {
            answer,
            triple_extract,
            query_gen,
            relevance,
            knowledge,
            max_concurrency: max_concurrency.max(1),
            trace: Mutex::new(TraceLog {
                entries: Vec::new(),
                file,
            }),
        })
    }

    /// All-fixture gateway with the built-in templates; the workhorse for
    /// deterministic tests.
    pub fn fixture(backend: Arc<FixtureBackend>, knowledge_models: &[&str]) -> Self {
        let bind = |role: &LlmRole| {
            RoleBinding::new(
                backend.clone() as Arc<dyn ChatBackend>,
                PromptTemplate::parse(default_template(role)).expect("built-in template parses"),
            )
        };
        let knowledge = knowledge_models
            .iter()
            .map(|&name| {
                (
                    name.to_string(),
                    bind(&LlmRole::Knowledge(name.to_string())),
                )
            })
            .collect();
        Gateway {
            answer: bind(&LlmRole::Answer),
            triple_extract: bind(&LlmRole::TripleExtract),
            query_gen: bind(&LlmRole::QueryGen),
            relevance: bind(&LlmRole::Relevance),
            knowledge,
            max_concurrency: 1,
            trace: Mutex::new(TraceLog {
                entries: Vec::new(),
                file: None,
            }),
        }
    }

    pub fn knowledge_model_names(&self) -> Vec<String> {
        self.knowledge.iter().map(|(n, _)| n.clone()).collect()
    }

    /// Copy of the exchange trace so far, in completion order.
    pub fn exchanges(&self) -> Vec<ChatExchange> {
        self.trace.lock().unwrap().entries.clone()
    }

    fn binding(&self, role: &LlmRole) -> Result<&RoleBinding> {
        match role {
            LlmRole::Answer => Ok(&self.answer),
            LlmRole::TripleExtract => Ok(&self.triple_extract),
            LlmRole::QueryGen => Ok(&self.query_gen),
            LlmRole::Relevance => Ok(&self.relevance),
            LlmRole::Knowledge(name) => self
                .knowledge
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, b)| b)
                .ok_or_else(|| Error::Config(format!("unregistered knowledge model {name:?}"))),
        }
    }

    fn call(&self, role: &LlmRole, turn: usize, slots: &[(&str, &str)]) -> Result<String> {
        let binding = self.binding(role)?;
        let prompt = binding.template.render(slots)?;
        let key = slot_key(slots);
        let request = ChatRequest {
            role: role.to_string(),
            turn,
            key: key.clone(),
            prompt: prompt.clone(),
            system: binding.system.clone(),
            temperature: binding.temperature,
            max_tokens: binding.max_tokens,
        };
        let response = binding.backend.complete(&request)?;
        let exchange = ChatExchange {
            role: role.to_string(),
            turn,
            key,
            prompt,
            response: response.text.clone(),
            latency_ms: response.latency_ms,
            prompt_tokens: response.prompt_tokens,
            completion_tokens: response.completion_tokens,
        };
        let mut trace = self.trace.lock().unwrap();
        if let Some(file) = trace.file.as_mut() {
            let line = serde_json::to_string(&exchange).expect("exchange serializes");
            let _ = writeln!(file, "{line}");
        }
        trace.entries.push(exchange);
        Ok(response.text)
    }

    /// Answer the question over the current reference texts (rank order).
    pub fn generate_answer(&self, question: &str, refs: &[String], turn: usize) -> Result<String> {
        if question.trim().is_empty() {
            return Err(Error::InvalidInput("empty question".into()));
        }
        let rendered_refs = render_references(refs);
        let text = self.call(
            &LlmRole::Answer,
            turn,
            &[("question", question), ("references", &rendered_refs)],
        )?;
        let text = text.trim();
        if text.is_empty() {
            return Err(Error::Backend {
                role: LlmRole::Answer.to_string(),
                msg: "empty answer".into(),
            });
        }
        Ok(text.to_string())
    }

    /// Extract (head, relation, tail) string triples from free text.
    pub fn extract_triples(
        &self,
        text: &str,
        turn: usize,
    ) -> Result<Vec<(String, String, String)>> {
        let response = self.call(&LlmRole::TripleExtract, turn, &[("document", text)])?;
        Ok(parse_triples(&response))
    }

    /// Query for the upcoming retrieval turn. Turn 1 is the question itself,
    /// with no model call; later turns regenerate, falling back to the
    /// question when the model returns nothing.
    pub fn next_query(
        &self,
        question: &str,
        refs: &[String],
        answer: &str,
        next_turn: usize,
    ) -> Result<String> {
        if next_turn <= 1 {
            return Ok(question.to_string());
        }
        let rendered_refs = render_references(refs);
        let response = self.call(
            &LlmRole::QueryGen,
            next_turn,
            &[
                ("question", question),
                ("references", &rendered_refs),
                ("answer", answer),
            ],
        )?;
        let trimmed = response.trim();
        if trimmed.is_empty() {
            Ok(question.to_string())
        } else {
            Ok(trimmed.to_string())
        }
    }

    /// Binary relevance verdict for a document against the question and its
    /// entities. Unparseable responses count as not relevant.
    pub fn relevance_check(
        &self,
        document: &str,
        question: &str,
        entity_labels: &[String],
        turn: usize,
    ) -> Result<bool> {
        let entities = entity_labels.join("; ");
        let response = self.call(
            &LlmRole::Relevance,
            turn,
            &[
                ("document", document),
                ("question", question),
                ("entities", &entities),
            ],
        )?;
        Ok(parse_verdict(&response))
    }

    /// One pseudo-reference from a knowledge model. Backend failures skip
    /// the document with a warning; the pipeline keeps going.
    pub fn generate_reference(&self, model_name: &str, query: &str, turn: usize) -> Option<String> {
        let role = LlmRole::Knowledge(model_name.to_string());
        match self.call(&role, turn, &[("question", query)]) {
            Ok(text) => {
                let trimmed = text.trim();
                if trimmed.is_empty() {
                    log::warn!("knowledge model {model_name} returned an empty document; skipped");
                    None
                } else {
                    Some(trimmed.to_string())
                }
            }
            Err(err) => {
                log::warn!("knowledge model {model_name} failed ({err}); document skipped");
                None
            }
        }
    }

    /// Fan out reference generation, at most `max_concurrency` calls in
    /// flight. Results keep the request order.
    pub fn generate_references(
        &self,
        requests: &[(String, String)],
        turn: usize,
    ) -> Vec<Option<String>> {
        let mut results: Vec<Option<String>> = Vec::new();
        results.resize_with(requests.len(), || None);
        if self.max_concurrency <= 1 {
            for ((model, query), slot) in requests.iter().zip(results.iter_mut()) {
                *slot = self.generate_reference(model, query, turn);
            }
            return results;
        }
        for (req_chunk, res_chunk) in requests
            .chunks(self.max_concurrency)
            .zip(results.chunks_mut(self.max_concurrency))
        {
            std::thread::scope(|scope| {
                for ((model, query), slot) in req_chunk.iter().zip(res_chunk.iter_mut()) {
                    scope.spawn(move || {
                        *slot = self.generate_reference(model, query, turn);
                    });
                }
            });
        }
        results
    }
}

/// Numbered reference block used by the answer and query-gen prompts.
pub fn render_references(refs: &[String]) -> String {
    refs.iter()
        .enumerate()
        .map(|(i, text)| format!("[{}] {}", i + 1, text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Stable hash of a slot-value set; the fixture lookup key.
pub fn slot_key(slots: &[(&str, &str)]) -> String {
    let mut sorted: Vec<&(&str, &str)> = slots.iter().collect();
    sorted.sort();
    let mut hasher = Sha256::new();
    for (name, value) in sorted {
        hasher.update(name.as_bytes());
        hasher.update([0x1f]);
        hasher.update(value.as_bytes());
        hasher.update([0x1e]);
    }
    hasher
        .finalize()
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Parse lines of the form `(head, relation, tail)`; malformed lines drop.
pub fn parse_triples(text: &str) -> Vec<(String, String, String)> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        let (Some(open), Some(close)) = (line.find('('), line.rfind(')')) else {
            continue;
        };
        if close <= open {
            continue;
        }
        let parts: Vec<&str> = line[open + 1..close].split(',').map(str::trim).collect();
        if parts.len() == 3 && parts.iter().all(|p| !p.is_empty()) {
            out.push((
                parts[0].to_string(),
                parts[1].to_string(),
                parts[2].to_string(),
            ));
        }
    }
    out
}

/// First yes/no token decides; no token means False.
pub fn parse_verdict(text: &str) -> bool {
    for token in text.split(|c: char| !c.is_alphanumeric()) {
        match token.to_lowercase().as_str() {
            "true" | "yes" => return true,
            "false" | "no" => return false,
            _ => {}
        }
    }
    false
}
