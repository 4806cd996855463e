//! The closed answer-retrieve-filter loop.
//!
//! Each turn answers the question over the accepted references, extracts
//! evidence triples from the answer, scores their consistency with the
//! knowledge graph, and either stops or gathers more references: the next
//! query (the raw question on the first retrieval, a regenerated one later)
//! is entity-augmented, every knowledge model produces one candidate per
//! query variant, and candidates pass a relevance check plus a triple-based
//! factual ranking before at most `k + turn` of them join the reference set.

use serde::{Deserialize, Serialize};

use crate::augment::{augment_query, related_entities, AugmentConfig};
use crate::controller::{decide, DecisionReason, StopDecision, ThresholdSchedule};
use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::kg::{map_triple, EntityLinker, KnowledgeGraph, Triple};
use crate::kge::{answer_reliability, relative_triple_score, ComplExModel, Reliability};
use crate::sim::SimilarityProvider;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryVariant {
    Plain,
    Kg,
}

/// One pseudo-reference with provenance and filter verdicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDoc {
    pub text: String,
    pub source_model: String,
    pub query_variant: QueryVariant,
    pub relevance: bool,
    /// Mean relative triple score of the document's verifiable triples;
    /// absent when nothing in the document could be verified.
    pub factual_score: Option<f64>,
    pub turn_added: usize,
}

/// One extracted triple with its mapping and score, kept for the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleRecord {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub mapped: Option<Triple>,
    pub relative_score: Option<f64>,
}

/// Everything that happened in one turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationState {
    pub turn: usize,
    /// Query that gathered this turn's new references (absent at turn 0).
    pub query: Option<String>,
    pub query_kg: Option<String>,
    /// Deduplicated candidates with their filter verdicts.
    pub candidates: Vec<ReferenceDoc>,
    pub answer: String,
    pub triples: Vec<TripleRecord>,
    pub reliability: Reliability,
    pub decision: StopDecision,
    /// Cumulative accepted reference set at this turn.
    pub accepted_refs: Vec<ReferenceDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    /// Base reference budget; turn t keeps at most `k + t` new documents.
    pub k: usize,
    pub knowledge_models: Vec<String>,
    pub augment: AugmentConfig,
    /// Training seed echoed into run records, when the model was trained
    /// in-process.
    pub seed: Option<u64>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            k: 5,
            knowledge_models: Vec::new(),
            augment: AugmentConfig::default(),
            seed: None,
        }
    }
}

/// Effective configuration echoed into every run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfigEcho {
    pub schedule: ThresholdSchedule,
    pub options: PipelineOptions,
}

/// Result of one question: final answer plus the full per-turn trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub question: String,
    pub final_answer: String,
    pub stop_reason: DecisionReason,
    pub turns: Vec<IterationState>,
    pub config: RunConfigEcho,
}

pub struct Pipeline {
    pub kg: KnowledgeGraph,
    pub model: ComplExModel,
    pub sim: Box<dyn SimilarityProvider>,
    pub linker: Box<dyn EntityLinker>,
    pub gateway: Gateway,
    pub schedule: ThresholdSchedule,
    pub options: PipelineOptions,
}

impl Pipeline {
    pub fn new(
        kg: KnowledgeGraph,
        model: ComplExModel,
        sim: Box<dyn SimilarityProvider>,
        linker: Box<dyn EntityLinker>,
        gateway: Gateway,
        schedule: ThresholdSchedule,
        options: PipelineOptions,
    ) -> Result<Self> {
        schedule.validate()?;
        if options.knowledge_models.is_empty() {
            return Err(Error::Config("no knowledge models registered".into()));
        }
        let registered = gateway.knowledge_model_names();
        for name in &options.knowledge_models {
            if !registered.contains(name) {
                return Err(Error::Config(format!(
                    "knowledge model {name:?} has no gateway binding"
                )));
            }
        }
        if model.n_entities() != kg.entity_count() || model.n_relations() != kg.relation_count() {
            return Err(Error::Data(
                "embedding tables do not match the graph vocabulary".into(),
            ));
        }
        Ok(Pipeline {
            kg,
            model,
            sim,
            linker,
            gateway,
            schedule,
            options,
        })
    }

    fn config_echo(&self) -> RunConfigEcho {
        RunConfigEcho {
            schedule: self.schedule,
            options: self.options.clone(),
        }
    }

    /// Extract and score the evidence triples of a piece of text.
    fn score_text_triples(&self, text: &str, turn: usize) -> Result<Vec<TripleRecord>> {
        let raw = self.gateway.extract_triples(text, turn)?;
        let mut records = Vec::with_capacity(raw.len());
        for (head, relation, tail) in raw {
            let mapped = map_triple(&head, &relation, &tail, &self.kg, self.sim.as_ref());
            let relative_score = match &mapped {
                Some(t) => relative_triple_score(&self.model, &self.kg, t)?.score(),
                None => None,
            };
            records.push(TripleRecord {
                head,
                relation,
                tail,
                mapped,
                relative_score,
            });
        }
        Ok(records)
    }

    /// One candidate per (knowledge model, query variant) that succeeded,
    /// plain variants first, deduplicated by (model, text).
    pub fn generate_candidates(
        &self,
        query: &str,
        query_kg: &str,
        turn: usize,
    ) -> Vec<ReferenceDoc> {
        let mut requests = Vec::new();
        let mut variants = Vec::new();
        for variant in [QueryVariant::Plain, QueryVariant::Kg] {
            let q = match variant {
                QueryVariant::Plain => query,
                QueryVariant::Kg => query_kg,
            };
            for model in &self.options.knowledge_models {
                requests.push((model.clone(), q.to_string()));
                variants.push(variant);
            }
        }
        let results = self.gateway.generate_references(&requests, turn);
        let mut docs: Vec<ReferenceDoc> = Vec::new();
        for (((model, _), variant), text) in requests.iter().zip(variants).zip(results) {
            let Some(text) = text else { continue };
            if docs
                .iter()
                .any(|d| d.source_model == *model && d.text == text)
            {
                continue;
            }
            docs.push(ReferenceDoc {
                text,
                source_model: model.clone(),
                query_variant: variant,
                relevance: false,
                factual_score: None,
                turn_added: turn,
            });
        }
        docs
    }

    /// Fill relevance and factual verdicts in place, then return the kept
    /// documents: relevant ones ranked by ascending factual score (lower is
    /// more consistent), unverifiable ones after scored ones, ties in
    /// candidate order, truncated to `budget`.
    pub fn filter_references(
        &self,
        candidates: &mut [ReferenceDoc],
        question: &str,
        question_entities: &[String],
        budget: usize,
        turn: usize,
    ) -> Result<Vec<ReferenceDoc>> {
        let mut relevant_idx = Vec::new();
        for (i, doc) in candidates.iter_mut().enumerate() {
            doc.relevance =
                self.gateway
                    .relevance_check(&doc.text, question, question_entities, turn)?;
            if doc.relevance {
                relevant_idx.push(i);
            }
        }
        for &i in &relevant_idx {
            let records = self.score_text_triples(&candidates[i].text, turn)?;
            let scores: Vec<f64> = records.iter().filter_map(|r| r.relative_score).collect();
            candidates[i].factual_score = if scores.is_empty() {
                None
            } else {
                Some(scores.iter().sum::<f64>() / scores.len() as f64)
            };
        }
        // Stable order: scored ascending, then unverifiable, ties by
        // candidate position.
        relevant_idx.sort_by(|&a, &b| {
            match (candidates[a].factual_score, candidates[b].factual_score) {
                (Some(x), Some(y)) => x.partial_cmp(&y).unwrap().then(a.cmp(&b)),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => a.cmp(&b),
            }
        });
        Ok(relevant_idx
            .into_iter()
            .take(budget)
            .map(|i| candidates[i].clone())
            .collect())
    }

    /// Run the closed loop for one question.
    pub fn run(&self, question: &str) -> Result<AnswerRecord> {
        let question_entities: Vec<String> = self
            .linker
            .link(question, &self.kg)
            .into_iter()
            .map(|e| self.kg.entity_label(e).to_string())
            .collect();

        let mut refs: Vec<ReferenceDoc> = Vec::new();
        let mut turns: Vec<IterationState> = Vec::new();
        let mut pending_query: Option<String> = None;
        let mut pending_query_kg: Option<String> = None;
        let mut pending_candidates: Vec<ReferenceDoc> = Vec::new();
        let mut turn = 0usize;

        loop {
            let ref_texts: Vec<String> = refs.iter().map(|d| d.text.clone()).collect();
            let answer = self.gateway.generate_answer(question, &ref_texts, turn)?;
            let triples = self.score_text_triples(&answer, turn)?;
            let mapped: Vec<Option<Triple>> = triples.iter().map(|r| r.mapped).collect();
            let reliability = answer_reliability(&self.model, &self.kg, &mapped)?;
            let decision = decide(&self.schedule, turn, &reliability)?;

            turns.push(IterationState {
                turn,
                query: pending_query.take(),
                query_kg: pending_query_kg.take(),
                candidates: std::mem::take(&mut pending_candidates),
                answer: answer.clone(),
                triples,
                reliability,
                decision,
                accepted_refs: refs.clone(),
            });

            if decision.stop {
                return Ok(AnswerRecord {
                    question: question.to_string(),
                    final_answer: answer,
                    stop_reason: decision.reason,
                    turns,
                    config: self.config_echo(),
                });
            }

            let next_turn = turn + 1;
            let query = self
                .gateway
                .next_query(question, &ref_texts, &answer, next_turn)?;
            let ents = related_entities(
                &query,
                &self.kg,
                &self.model,
                self.sim.as_ref(),
                self.linker.as_ref(),
                &self.options.augment,
            )?;
            let query_kg = augment_query(&query, &ents, &self.kg);
            let mut candidates = self.generate_candidates(&query, &query_kg, next_turn);
            let selected = self.filter_references(
                &mut candidates,
                question,
                &question_entities,
                self.options.k + next_turn,
                next_turn,
            )?;
            refs.extend(selected);
            pending_query = Some(query);
            pending_query_kg = Some(query_kg);
            pending_candidates = candidates;
            turn = next_turn;
        }
    }
}
