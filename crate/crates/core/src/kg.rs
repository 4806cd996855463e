//! Triple store: load, index, and query a knowledge graph from TSV files,
//! plus deterministic alias-based entity linking over free text.
//!
//! The graph is immutable after load and safe to share across threads.
//! Entity identity is the case-folded label: two spellings that fold to the
//! same string are the same entity, with the first-seen spelling kept as the
//! canonical label.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::SimilarityProvider;

/// Dense entity index, contiguous from 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

/// Dense relation index, contiguous from 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

/// One (head, relation, tail) fact. The unit of evidence everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: u32, relation: u32, tail: u32) -> Self {
        Triple {
            head: EntityId(head),
            relation: RelationId(relation),
            tail: EntityId(tail),
        }
    }
}

/// Immutable, indexed knowledge graph.
#[derive(Debug)]
pub struct KnowledgeGraph {
    entity_labels: Vec<String>,
    relation_labels: Vec<String>,
    relation_lookup: HashMap<String, u32>,
    /// Case-folded label/alias -> entity, collisions already resolved.
    alias_map: HashMap<String, u32>,
    triples: Vec<Triple>,
    by_head: Vec<Vec<(RelationId, EntityId)>>,
    by_head_rel: HashMap<(u32, u32), Vec<EntityId>>,
}

impl KnowledgeGraph {
    pub fn entity_count(&self) -> usize {
        self.entity_labels.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relation_labels.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    /// All triples, sorted by (head, relation, tail).
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity_label(&self, e: EntityId) -> &str {
        &self.entity_labels[e.0 as usize]
    }

    pub fn relation_label(&self, r: RelationId) -> &str {
        &self.relation_labels[r.0 as usize]
    }

    pub fn entity_labels(&self) -> &[String] {
        &self.entity_labels
    }

    pub fn relation_labels(&self) -> &[String] {
        &self.relation_labels
    }

    /// Exact case-folded lookup of a label or alias.
    pub fn find_entity(&self, text: &str) -> Option<EntityId> {
        self.alias_map.get(&fold(text)).map(|&id| EntityId(id))
    }

    /// Exact case-folded lookup of a relation label.
    pub fn find_relation(&self, text: &str) -> Option<RelationId> {
        self.relation_lookup.get(&fold(text)).map(|&id| RelationId(id))
    }

    /// All (relation, tail) pairs outgoing from `e`, sorted by (relation id, tail id).
    pub fn neighbors(&self, e: EntityId) -> Result<&[(RelationId, EntityId)]> {
        self.by_head
            .get(e.0 as usize)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::Data(format!("unknown entity id {}", e.0)))
    }

    /// Tails of (head, relation), sorted by tail id. Empty when no such edge.
    pub fn tails(&self, head: EntityId, relation: RelationId) -> &[EntityId] {
        self.by_head_rel
            .get(&(head.0, relation.0))
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    /// Distinct relations outgoing from `e`, in id order.
    pub fn relations_around(&self, e: EntityId) -> Result<Vec<RelationId>> {
        let nbrs = self.neighbors(e)?;
        let mut rels: Vec<RelationId> = nbrs.iter().map(|&(r, _)| r).collect();
        rels.dedup();
        Ok(rels)
    }

    /// Write `entities.tsv` and `relations.tsv` (`id<TAB>label`) into `dir`.
    pub fn dump_vocab(&self, dir: &Path) -> Result<()> {
        let write = |name: &str, labels: &[String]| -> Result<()> {
            let mut out = String::new();
            for (id, label) in labels.iter().enumerate() {
                out.push_str(&format!("{id}\t{label}\n"));
            }
            let path = dir.join(name);
            fs::write(&path, out).map_err(|e| Error::io(path.display().to_string(), e))
        };
        write("entities.tsv", &self.entity_labels)?;
        write("relations.tsv", &self.relation_labels)
    }
}

fn fold(s: &str) -> String {
    s.to_lowercase()
}

/// Load a graph from a tab-separated triples file plus an optional
/// `alias<TAB>canonical_label` file. Lines starting with `#` are comments;
/// blank lines are skipped.
pub fn load_kg(triples_path: &Path, aliases_path: Option<&Path>) -> Result<KnowledgeGraph> {
    let text = fs::read_to_string(triples_path)
        .map_err(|e| Error::io(triples_path.display().to_string(), e))?;

    let mut entity_labels: Vec<String> = Vec::new();
    let mut entity_lookup: HashMap<String, u32> = HashMap::new();
    let mut relation_labels: Vec<String> = Vec::new();
    let mut relation_lookup: HashMap<String, u32> = HashMap::new();
    let mut seen: HashSet<Triple> = HashSet::new();
    let mut triples: Vec<Triple> = Vec::new();

    let mut intern_entity = |label: &str| -> u32 {
        let key = fold(label);
        if let Some(&id) = entity_lookup.get(&key) {
            return id;
        }
        let id = entity_labels.len() as u32;
        entity_labels.push(label.to_string());
        entity_lookup.insert(key, id);
        id
    };
    let mut intern_relation = |label: &str| -> u32 {
        let key = fold(label);
        if let Some(&id) = relation_lookup.get(&key) {
            return id;
        }
        let id = relation_labels.len() as u32;
        relation_labels.push(label.to_string());
        relation_lookup.insert(key, id);
        id
    };

    let path_str = triples_path.display().to_string();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path_str.clone(),
                line: lineno,
                msg: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let (h, r, t) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
        if h.is_empty() || r.is_empty() || t.is_empty() {
            return Err(Error::Parse {
                path: path_str.clone(),
                line: lineno,
                msg: "empty field".to_string(),
            });
        }
        let triple = Triple::new(intern_entity(h), intern_relation(r), intern_entity(t));
        if seen.insert(triple) {
            triples.push(triple);
        }
    }
    triples.sort();

    // Occurrence counts (head or tail) drive alias collision resolution.
    let mut occurrences = vec![0usize; entity_labels.len()];
    for t in &triples {
        occurrences[t.head.0 as usize] += 1;
        occurrences[t.tail.0 as usize] += 1;
    }

    let mut alias_map: HashMap<String, u32> = entity_lookup.clone();
    if let Some(apath) = aliases_path {
        let atext = fs::read_to_string(apath)
            .map_err(|e| Error::io(apath.display().to_string(), e))?;
        let apath_str = apath.display().to_string();
        for (lineno, raw) in atext.lines().enumerate() {
            let lineno = lineno + 1;
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() != 2 {
                return Err(Error::Parse {
                    path: apath_str.clone(),
                    line: lineno,
                    msg: format!("expected 2 tab-separated fields, got {}", fields.len()),
                });
            }
            let (alias, canonical) = (fields[0].trim(), fields[1].trim());
            if alias.is_empty() || canonical.is_empty() {
                return Err(Error::Parse {
                    path: apath_str.clone(),
                    line: lineno,
                    msg: "empty field".to_string(),
                });
            }
            let Some(&target) = entity_lookup.get(&fold(canonical)) else {
                return Err(Error::Parse {
                    path: apath_str.clone(),
                    line: lineno,
                    msg: format!("alias {alias:?} refers to unknown label {canonical:?}"),
                });
            };
            let key = fold(alias);
            match alias_map.get(&key) {
                None => {
                    alias_map.insert(key, target);
                }
                Some(&existing) if existing != target => {
                    // Collision: keep the better-attested entity; tie -> lower id.
                    let keep = pick_collision_winner(existing, target, &occurrences);
                    alias_map.insert(key, keep);
                }
                _ => {}
            }
        }
    }

    // Inverted indexes.
    let mut by_head: Vec<Vec<(RelationId, EntityId)>> = vec![Vec::new(); entity_labels.len()];
    let mut by_head_rel: HashMap<(u32, u32), Vec<EntityId>> = HashMap::new();
    for t in &triples {
        by_head[t.head.0 as usize].push((t.relation, t.tail));
        by_head_rel
            .entry((t.head.0, t.relation.0))
            .or_default()
            .push(t.tail);
    }
    for v in &mut by_head {
        v.sort();
    }
    for v in by_head_rel.values_mut() {
        v.sort();
    }

    Ok(KnowledgeGraph {
        entity_labels,
        relation_labels,
        relation_lookup,
        alias_map,
        triples,
        by_head,
        by_head_rel,
    })
}

fn pick_collision_winner(a: u32, b: u32, occurrences: &[usize]) -> u32 {
    let (oa, ob) = (occurrences[a as usize], occurrences[b as usize]);
    if oa > ob {
        a
    } else if ob > oa {
        b
    } else {
        a.min(b)
    }
}

/// Pluggable entity linker; the default is the deterministic alias matcher.
pub trait EntityLinker: Send + Sync {
    fn link(&self, text: &str, kg: &KnowledgeGraph) -> Vec<EntityId>;
}

/// Case-folded substring matcher on word boundaries, longest match first.
pub struct AliasLinker;

impl EntityLinker for AliasLinker {
    fn link(&self, text: &str, kg: &KnowledgeGraph) -> Vec<EntityId> {
        link_entities(text, kg)
    }
}

/// Entities whose label or alias occurs in the case-folded text on word
/// boundaries. Longest matches win, spans never overlap, output is in span
/// order, deduplicated keeping the first occurrence.
pub fn link_entities(text: &str, kg: &KnowledgeGraph) -> Vec<EntityId> {
    let folded = fold(text);
    let bytes_is_word_boundary = |folded: &str, start: usize, end: usize| -> bool {
        let before_ok = folded[..start]
            .chars()
            .next_back()
            .map_or(true, |c| !c.is_alphanumeric());
        let after_ok = folded[end..]
            .chars()
            .next()
            .map_or(true, |c| !c.is_alphanumeric());
        before_ok && after_ok
    };

    // Collect every boundary-valid occurrence of every key.
    let mut matches: Vec<(usize, usize, u32)> = Vec::new();
    for (key, &entity) in &kg.alias_map {
        if key.is_empty() {
            continue;
        }
        for (start, m) in folded.match_indices(key.as_str()) {
            let end = start + m.len();
            if bytes_is_word_boundary(&folded, start, end) {
                matches.push((start, end, entity));
            }
        }
    }

    // Longest-match-first greedy tiling; ties by start, then entity id.
    matches.sort_by(|a, b| {
        (b.1 - b.0)
            .cmp(&(a.1 - a.0))
            .then(a.0.cmp(&b.0))
            .then(a.2.cmp(&b.2))
    });
    let mut accepted: Vec<(usize, usize, u32)> = Vec::new();
    for m in matches {
        if accepted.iter().all(|a| m.1 <= a.0 || m.0 >= a.1) {
            accepted.push(m);
        }
    }
    accepted.sort_by_key(|m| m.0);

    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (_, _, entity) in accepted {
        if seen.insert(entity) {
            out.push(EntityId(entity));
        }
    }
    out
}

/// Map an extracted string triple onto graph ids. Head and tail use exact
/// case-folded label/alias lookup; the relation falls back to the similarity
/// provider at threshold 0.5 when no exact label matches. `None` marks the
/// triple unverifiable.
pub fn map_triple(
    head: &str,
    relation: &str,
    tail: &str,
    kg: &KnowledgeGraph,
    sim: &dyn SimilarityProvider,
) -> Option<Triple> {
    let h = kg.find_entity(head)?;
    let t = kg.find_entity(tail)?;
    let r = match kg.find_relation(relation) {
        Some(r) => r,
        None => {
            let mut best: Option<(f64, u32)> = None;
            for (id, label) in kg.relation_labels.iter().enumerate() {
                let s = sim.sim(relation, label);
                let better = match best {
                    None => true,
                    Some((bs, bid)) => s > bs || (s == bs && (id as u32) < bid),
                };
                if better {
                    best = Some((s, id as u32));
                }
            }
            match best {
                Some((s, id)) if s >= 0.5 => RelationId(id),
                _ => return None,
            }
        }
    };
    Some(Triple {
        head: h,
        relation: r,
        tail: t,
    })
}
