//! Related-entity search and query augmentation.
//!
//! Starting from the entities linked in a query, gather one-hop neighbors
//! along the most query-similar relation and embedding-predicted tails along
//! the top-k query-similar relations, then prepend the union's labels to the
//! query.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kg::{EntityId, EntityLinker, KnowledgeGraph};
use crate::kge::ComplExModel;
use crate::sim::SimilarityProvider;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Relations kept for embedding-based tail prediction.
    pub topk_relations: usize,
    /// One-hop tails taken per query entity, in tail-id order.
    pub max_tails_per_entity: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            topk_relations: 3,
            max_tails_per_entity: 3,
        }
    }
}

/// The three related-entity sets, each deduplicated in first-seen order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelatedEntities {
    pub query_linked: Vec<EntityId>,
    pub local_neighbors: Vec<EntityId>,
    pub global_predicted: Vec<EntityId>,
}

impl RelatedEntities {
    pub fn empty() -> Self {
        RelatedEntities {
            query_linked: Vec::new(),
            local_neighbors: Vec::new(),
            global_predicted: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.query_linked.is_empty()
            && self.local_neighbors.is_empty()
            && self.global_predicted.is_empty()
    }

    /// Union preserving first-seen order across linked, local, global.
    pub fn union(&self) -> Vec<EntityId> {
        let mut out = Vec::new();
        for &e in self
            .query_linked
            .iter()
            .chain(&self.local_neighbors)
            .chain(&self.global_predicted)
        {
            if !out.contains(&e) {
                out.push(e);
            }
        }
        out
    }
}

fn push_unique(list: &mut Vec<EntityId>, e: EntityId) {
    if !list.contains(&e) {
        list.push(e);
    }
}

/// Relation similarity string: entity label, space, relation label.
fn relation_text(kg: &KnowledgeGraph, e: EntityId, r: crate::kg::RelationId) -> String {
    format!("{} {}", kg.entity_label(e), kg.relation_label(r))
}

/// Related-entity search around the query's linked entities.
///
/// For each linked entity: the single most query-similar relation supplies
/// up to `max_tails_per_entity` graph tails (tail-id order); the
/// `topk_relations` most similar relations are rescored with the embedding
/// model, and the best-scoring predicted tail over the full vocabulary joins
/// the global set. Similarity ties break to the lower relation id; score
/// ties keep the more similar relation.
pub fn related_entities(
    query: &str,
    kg: &KnowledgeGraph,
    model: &ComplExModel,
    sim: &dyn SimilarityProvider,
    linker: &dyn EntityLinker,
    cfg: &AugmentConfig,
) -> Result<RelatedEntities> {
    let query_linked = linker.link(query, kg);
    let mut local_neighbors = Vec::new();
    let mut global_predicted = Vec::new();
    let all_entities: Vec<EntityId> = (0..kg.entity_count() as u32).map(EntityId).collect();

    for &e in &query_linked {
        let rels = kg.relations_around(e)?;
        if rels.is_empty() {
            continue;
        }
        // Similarity of each relation to the query, in relation-id order.
        let sims: Vec<f64> = rels
            .iter()
            .map(|&r| sim.sim(&relation_text(kg, e, r), query))
            .collect();

        // Best relation: highest similarity, ties to lower relation id.
        let mut best = 0usize;
        for i in 1..rels.len() {
            if sims[i] > sims[best] {
                best = i;
            }
        }
        for &tail in kg
            .tails(e, rels[best])
            .iter()
            .take(cfg.max_tails_per_entity)
        {
            push_unique(&mut local_neighbors, tail);
        }

        // Top-k relations by similarity (stable on relation-id order), then
        // the predicted tail with the best embedding score.
        let mut ranked: Vec<usize> = (0..rels.len()).collect();
        ranked.sort_by(|&a, &b| sims[b].partial_cmp(&sims[a]).unwrap());
        let mut best_pred: Option<(f64, EntityId)> = None;
        for &i in ranked.iter().take(cfg.topk_relations) {
            let tail = model.predict_tail(e, rels[i], &all_entities)?;
            let score = model.score(e, rels[i], tail)?;
            if best_pred.map_or(true, |(bs, _)| score > bs) {
                best_pred = Some((score, tail));
            }
        }
        if let Some((_, tail)) = best_pred {
            push_unique(&mut global_predicted, tail);
        }
    }

    Ok(RelatedEntities {
        query_linked,
        local_neighbors,
        global_predicted,
    })
}

/// Prepend the related entities' labels to the query; an empty entity set
/// leaves the query unchanged.
pub fn augment_query(query: &str, ents: &RelatedEntities, kg: &KnowledgeGraph) -> String {
    let union = ents.union();
    if union.is_empty() {
        return query.to_string();
    }
    let labels: Vec<&str> = union.iter().map(|&e| kg.entity_label(e)).collect();
    format!("Related entities: {}\n{}", labels.join("; "), query)
}
