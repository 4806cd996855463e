//! Dataset evaluation: normalized exact-match and token-overlap F1, turn
//! distribution, and per-model reference usage over pipeline runs.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::DecisionReason;
use crate::error::{Error, Result};
use crate::pipeline::{AnswerRecord, Pipeline};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QAItem {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
}

/// Load a JSON-lines dataset of `{id, question, answers: [...]}` records.
///
/// Common benchmark field spellings adapt on the fly: `_id`/`qid` for the
/// id, `query` for the question, and `answer`/`possible_answers` (a string,
/// a list, or a JSON-encoded list in a string) for the gold answers.
pub fn load_dataset(path: &Path) -> Result<Vec<QAItem>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut items = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg,
        };
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let item = adapt_item(&value, lineno + 1)
            .ok_or_else(|| parse_err("expected {id, question, answers: [...]}".into()))?;
        if item.answers.is_empty() {
            return Err(parse_err("item has no gold answers".into()));
        }
        items.push(item);
    }
    Ok(items)
}

fn adapt_item(value: &serde_json::Value, lineno: usize) -> Option<QAItem> {
    let obj = value.as_object()?;
    let question = obj
        .get("question")
        .or_else(|| obj.get("query"))?
        .as_str()?
        .to_string();
    let id = obj
        .get("id")
        .or_else(|| obj.get("_id"))
        .or_else(|| obj.get("qid"))
        .map(|v| match v {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        })
        .unwrap_or_else(|| format!("line-{lineno}"));
    let raw = obj
        .get("answers")
        .or_else(|| obj.get("answer"))
        .or_else(|| obj.get("possible_answers"))?;
    let answers = answers_from(raw)?;
    Some(QAItem {
        id,
        question,
        answers,
    })
}

fn answers_from(value: &serde_json::Value) -> Option<Vec<String>> {
    match value {
        serde_json::Value::String(s) => {
            // Some dumps ship the alias list as a JSON-encoded string.
            if let Ok(serde_json::Value::Array(arr)) = serde_json::from_str(s) {
                arr.iter().map(|v| v.as_str().map(str::to_string)).collect()
            } else {
                Some(vec![s.clone()])
            }
        }
        serde_json::Value::Array(arr) => arr
            .iter()
            .map(|v| v.as_str().map(str::to_string))
            .collect(),
        _ => None,
    }
}

/// Lowercase, strip punctuation, drop the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(s: &str) -> String {
    s.to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .split_whitespace()
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Exact match after normalization, against any gold answer.
pub fn exact_match(pred: &str, golds: &[String]) -> bool {
    let pred = normalize_answer(pred);
    golds.iter().any(|g| normalize_answer(g) == pred)
}

/// Token-overlap F1 on normalized token multisets, max over gold answers.
pub fn f1(pred: &str, golds: &[String]) -> f64 {
    let pred = normalize_answer(pred);
    golds
        .iter()
        .map(|g| token_f1(&pred, &normalize_answer(g)))
        .fold(0.0, f64::max)
}

fn token_f1(pred: &str, gold: &str) -> f64 {
    let pred_tokens: Vec<&str> = pred.split_whitespace().collect();
    let gold_tokens: Vec<&str> = gold.split_whitespace().collect();
    if pred_tokens.is_empty() || gold_tokens.is_empty() {
        return (pred_tokens.is_empty() && gold_tokens.is_empty()) as u32 as f64;
    }
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold_tokens {
        *gold_counts.entry(t).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for t in &pred_tokens {
        if let Some(c) = gold_counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred_tokens.len() as f64;
    let recall = overlap as f64 / gold_tokens.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    pub answer: String,
    pub em: bool,
    pub f1: f64,
    pub final_turn: usize,
    pub stop_reason: DecisionReason,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ModelUsage {
    /// Candidate documents the model produced.
    pub candidates: usize,
    /// Candidates that passed the relevance check.
    pub relevant: usize,
    /// Documents that made it into a final reference set.
    pub accepted: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub items: Vec<ItemResult>,
    pub mean_em: f64,
    pub mean_f1: f64,
    /// Final-turn counts; sums to the item count.
    pub turn_histogram: BTreeMap<usize, usize>,
    /// Final-turn fractions of the item count.
    pub turn_fractions: BTreeMap<usize, f64>,
    pub model_usage: BTreeMap<String, ModelUsage>,
}

/// Run the pipeline over the dataset items (up to `limit`) and aggregate.
/// `workers` bounds concurrent items; aggregation is order-insensitive and
/// runs in item order regardless.
pub fn evaluate(
    pipeline: &Pipeline,
    items: &[QAItem],
    limit: Option<usize>,
    workers: usize,
) -> Result<EvalReport> {
    let n = limit.unwrap_or(items.len()).min(items.len());
    let items = &items[..n];
    let records = run_all(pipeline, items, workers.max(1))?;
    Ok(aggregate(items, &records))
}

fn run_all(pipeline: &Pipeline, items: &[QAItem], workers: usize) -> Result<Vec<AnswerRecord>> {
    let mut slots: Vec<Option<Result<AnswerRecord>>> = Vec::new();
    slots.resize_with(items.len(), || None);
    if workers <= 1 {
        for (item, slot) in items.iter().zip(slots.iter_mut()) {
            *slot = Some(pipeline.run(&item.question));
        }
    } else {
        for (item_chunk, slot_chunk) in items.chunks(workers).zip(slots.chunks_mut(workers)) {
            std::thread::scope(|scope| {
                for (item, slot) in item_chunk.iter().zip(slot_chunk.iter_mut()) {
                    scope.spawn(move || {
                        *slot = Some(pipeline.run(&item.question));
                    });
                }
            });
        }
    }
    slots
        .into_iter()
        .map(|s| s.expect("every item ran"))
        .collect()
}

fn aggregate(items: &[QAItem], records: &[AnswerRecord]) -> EvalReport {
    let mut results = Vec::with_capacity(items.len());
    let mut turn_histogram: BTreeMap<usize, usize> = BTreeMap::new();
    let mut model_usage: BTreeMap<String, ModelUsage> = BTreeMap::new();
    let mut em_sum = 0.0;
    let mut f1_sum = 0.0;

    for (item, record) in items.iter().zip(records) {
        let em = exact_match(&record.final_answer, &item.answers);
        let f1_score = f1(&record.final_answer, &item.answers);
        let final_turn = record.turns.len().saturating_sub(1);
        em_sum += em as u32 as f64;
        f1_sum += f1_score;
        *turn_histogram.entry(final_turn).or_insert(0) += 1;

        for turn in &record.turns {
            for doc in &turn.candidates {
                let usage = model_usage.entry(doc.source_model.clone()).or_default();
                usage.candidates += 1;
                if doc.relevance {
                    usage.relevant += 1;
                }
            }
        }
        if let Some(last) = record.turns.last() {
            for doc in &last.accepted_refs {
                model_usage
                    .entry(doc.source_model.clone())
                    .or_default()
                    .accepted += 1;
            }
        }

        results.push(ItemResult {
            id: item.id.clone(),
            answer: record.final_answer.clone(),
            em,
            f1: f1_score,
            final_turn,
            stop_reason: record.stop_reason,
        });
    }

    let n = items.len().max(1) as f64;
    let turn_fractions = turn_histogram
        .iter()
        .map(|(&t, &c)| (t, c as f64 / n))
        .collect();
    EvalReport {
        items: results,
        mean_em: em_sum / n,
        mean_f1: f1_sum / n,
        turn_histogram,
        turn_fractions,
        model_usage,
    }
}

impl EvalReport {
    /// Write the report as a record stream: one line per item, then a
    /// summary line.
    pub fn write_records(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for item in &self.items {
            let mut value = serde_json::to_value(item).expect("item serializes");
            value["type"] = "item".into();
            out.push_str(&value.to_string());
            out.push('\n');
        }
        let summary = serde_json::json!({
            "type": "summary",
            "mean_em": self.mean_em,
            "mean_f1": self.mean_f1,
            "turn_histogram": self.turn_histogram,
            "turn_fractions": self.turn_fractions,
            "model_usage": self.model_usage,
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Human-readable summary table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "items: {}\nmean EM: {:.4}\nmean F1: {:.4}\n",
            self.items.len(),
            self.mean_em,
            self.mean_f1
        ));
        out.push_str("final turn distribution:\n");
        for (turn, count) in &self.turn_histogram {
            out.push_str(&format!(
                "  t = {turn}: {count} ({:.4})\n",
                self.turn_fractions[turn]
            ));
        }
        if !self.model_usage.is_empty() {
            out.push_str("reference usage by knowledge model (candidates / relevant / accepted):\n");
            for (model, usage) in &self.model_usage {
                out.push_str(&format!(
                    "  {model}: {} / {} / {}\n",
                    usage.candidates, usage.relevant, usage.accepted
                ));
            }
        }
        out
    }
}
