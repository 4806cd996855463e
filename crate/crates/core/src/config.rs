//! TOML run configuration and pipeline assembly.
//!
//! Sections: `[kg]`, `[kge]`, `[controller]`, `[augment]`, `[gateway]`,
//! `[pipeline]`, `[eval]`. Relative paths resolve against the config file's
//! directory. Flag overrides beat file values.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::controller::{default_theta0, ThresholdSchedule};
use crate::error::{Error, Result};
use crate::gateway::{
    default_template, ChatBackend, FixtureBackend, Gateway, HttpBackend, HttpEndpoint, LlmRole,
    PromptTemplate, RoleBinding,
};
use crate::kg::{load_kg, AliasLinker};
use crate::kge::{load_checkpoint, train, ComplExModel, TrainConfig};
use crate::pipeline::{Pipeline, PipelineOptions};
use crate::sim::TrigramTfidf;

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub kg: KgSection,
    #[serde(default)]
    pub kge: KgeSection,
    pub controller: ControllerSection,
    #[serde(default)]
    pub augment: AugmentSection,
    pub gateway: GatewaySection,
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct KgSection {
    pub triples: PathBuf,
    #[serde(default)]
    pub aliases: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct KgeSection {
    /// Load this checkpoint instead of training in-process.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_negatives")]
    pub negatives_per_positive: usize,
    #[serde(default = "default_l2")]
    pub l2_weight: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_dim() -> usize {
    100
}
fn default_learning_rate() -> f64 {
    0.05
}
fn default_epochs() -> usize {
    200
}
fn default_negatives() -> usize {
    5
}
fn default_l2() -> f64 {
    1e-3
}
fn default_batch_size() -> usize {
    128
}
fn default_seed() -> u64 {
    42
}

impl Default for KgeSection {
    fn default() -> Self {
        KgeSection {
            checkpoint: None,
            dim: default_dim(),
            learning_rate: default_learning_rate(),
            epochs: default_epochs(),
            negatives_per_positive: default_negatives(),
            l2_weight: default_l2(),
            batch_size: default_batch_size(),
            seed: default_seed(),
        }
    }
}

impl KgeSection {
    pub fn train_config(&self, seed_override: Option<u64>) -> TrainConfig {
        TrainConfig {
            dim: self.dim,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            negatives_per_positive: self.negatives_per_positive,
            l2_weight: self.l2_weight,
            batch_size: self.batch_size,
            seed: seed_override.unwrap_or(self.seed),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    /// Explicit base threshold; when absent the (qa_model, dataset) table
    /// must resolve it.
    #[serde(default)]
    pub theta0: Option<f64>,
    #[serde(default = "default_schedule_c")]
    pub c: f64,
    #[serde(default = "default_max_turns")]
    pub max_turns: usize,
}

fn default_schedule_c() -> f64 {
    128.0
}
fn default_max_turns() -> usize {
    2
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    #[serde(default = "default_topk_relations")]
    pub topk_relations: usize,
    #[serde(default = "default_max_tails")]
    pub max_tails_per_entity: usize,
    #[serde(default = "default_similarity")]
    pub similarity: String,
}

fn default_topk_relations() -> usize {
    3
}
fn default_max_tails() -> usize {
    3
}
fn default_similarity() -> String {
    "lexical".into()
}

impl Default for AugmentSection {
    fn default() -> Self {
        AugmentSection {
            topk_relations: default_topk_relations(),
            max_tails_per_entity: default_max_tails(),
            similarity: default_similarity(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GatewaySection {
    /// `fixture` or `http`.
    pub backend: String,
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    /// Exchange trace file (JSON lines), appended as calls complete.
    #[serde(default)]
    pub trace: Option<PathBuf>,
    /// Directory of prompt template files overriding the built-ins
    /// (answer.txt, triple_extract.txt, query_gen.txt, relevance.txt,
    /// reference_gen.txt).
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    #[serde(default)]
    pub http: Option<HttpSection>,
    /// Model ids per role for the http backend.
    #[serde(default)]
    pub models: RoleModels,
}

fn default_concurrency() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct HttpSection {
    pub base_url: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    30
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RoleModels {
    #[serde(default)]
    pub answer: Option<String>,
    #[serde(default)]
    pub triple_extract: Option<String>,
    #[serde(default)]
    pub query_gen: Option<String>,
    #[serde(default)]
    pub relevance: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    #[serde(default = "default_k")]
    pub k: usize,
    pub knowledge_models: Vec<String>,
    /// Answering model name, used with `dataset` to resolve theta0.
    #[serde(default)]
    pub qa_model: Option<String>,
    #[serde(default)]
    pub dataset: Option<String>,
}

fn default_k() -> usize {
    5
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_workers() -> usize {
    1
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            workers: default_workers(),
        }
    }
}

/// Flag-level overrides; all beat file values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub theta0: Option<f64>,
    pub max_turns: Option<usize>,
    pub seed: Option<u64>,
    pub trace: Option<PathBuf>,
}

impl ConfigFile {
    /// Parse a config file and resolve its relative paths against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut cfg: ConfigFile =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        resolve(&mut cfg.kg.triples);
        if let Some(p) = cfg.kg.aliases.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.kge.checkpoint.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.gateway.fixtures.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.gateway.trace.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.gateway.templates_dir.as_mut() {
            resolve(p);
        }
        Ok(cfg)
    }

    /// Resolve the base threshold: override, then file value, then the
    /// (qa_model, dataset) defaults table.
    pub fn resolve_theta0(&self, overrides: &Overrides) -> Result<f64> {
        if let Some(t) = overrides.theta0 {
            return Ok(t);
        }
        if let Some(t) = self.controller.theta0 {
            return Ok(t);
        }
        if let (Some(model), Some(dataset)) =
            (&self.pipeline.qa_model, &self.pipeline.dataset)
        {
            if let Some(t) = default_theta0(model, dataset) {
                return Ok(t);
            }
            return Err(Error::Config(format!(
                "no default theta0 for ({model}, {dataset}); set controller.theta0 or --theta0"
            )));
        }
        Err(Error::Config(
            "theta0 unresolved: set controller.theta0, --theta0, or pipeline.qa_model + pipeline.dataset".into(),
        ))
    }

    fn template_for(&self, role: &LlmRole) -> Result<PromptTemplate> {
        let text = match &self.gateway.templates_dir {
            Some(dir) => {
                let file = match role {
                    LlmRole::Answer => "answer.txt",
                    LlmRole::TripleExtract => "triple_extract.txt",
                    LlmRole::QueryGen => "query_gen.txt",
                    LlmRole::Relevance => "relevance.txt",
                    LlmRole::Knowledge(_) => "reference_gen.txt",
                };
                let p = dir.join(file);
                std::fs::read_to_string(&p).map_err(|e| Error::io(p.display().to_string(), e))?
            }
            None => default_template(role).to_string(),
        };
        PromptTemplate::parse(&text)
    }

    fn binding_for(
        &self,
        role: &LlmRole,
        fixture: Option<&Arc<FixtureBackend>>,
    ) -> Result<RoleBinding> {
        let template = self.template_for(role)?;
        let backend: Arc<dyn ChatBackend> = match fixture {
            Some(shared) => shared.clone(),
            None => {
                let http = self.gateway.http.as_ref().ok_or_else(|| {
                    Error::Config("gateway.backend = \"http\" requires a [gateway.http] section".into())
                })?;
                let model = match role {
                    LlmRole::Answer => self.gateway.models.answer.clone(),
                    LlmRole::TripleExtract => self.gateway.models.triple_extract.clone(),
                    LlmRole::QueryGen => self.gateway.models.query_gen.clone(),
                    LlmRole::Relevance => self.gateway.models.relevance.clone(),
                    LlmRole::Knowledge(name) => Some(name.clone()),
                }
                .ok_or_else(|| {
                    Error::Config(format!("no model id configured for role {role}"))
                })?;
                Arc::new(HttpBackend::new(HttpEndpoint {
                    base_url: http.base_url.clone(),
                    model,
                    api_key_env: http.api_key_env.clone(),
                    timeout_secs: http.timeout_secs,
                    max_attempts: 3,
                    initial_backoff_ms: 250,
                })?)
            }
        };
        Ok(RoleBinding::new(backend, template))
    }

    pub fn build_gateway(&self, overrides: &Overrides) -> Result<Gateway> {
        let fixture = match self.gateway.backend.as_str() {
            "fixture" => {
                let path = self.gateway.fixtures.as_ref().ok_or_else(|| {
                    Error::Config("gateway.backend = \"fixture\" requires gateway.fixtures".into())
                })?;
                Some(Arc::new(FixtureBackend::from_file(path)?))
            }
            "http" => None,
            other => {
                return Err(Error::Config(format!(
                    "unknown gateway backend {other:?} (expected \"fixture\" or \"http\")"
                )))
            }
        };
        let knowledge = self
            .pipeline
            .knowledge_models
            .iter()
            .map(|name| {
                Ok((
                    name.clone(),
                    self.binding_for(&LlmRole::Knowledge(name.clone()), fixture.as_ref())?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let trace = overrides.trace.clone().or_else(|| self.gateway.trace.clone());
        Gateway::new(
            self.binding_for(&LlmRole::Answer, fixture.as_ref())?,
            self.binding_for(&LlmRole::TripleExtract, fixture.as_ref())?,
            self.binding_for(&LlmRole::QueryGen, fixture.as_ref())?,
            self.binding_for(&LlmRole::Relevance, fixture.as_ref())?,
            knowledge,
            self.gateway.max_concurrency,
            trace.as_deref(),
        )
    }

    /// Load data, obtain a model (checkpoint or in-process training), and
    /// assemble the full pipeline.
    pub fn build_pipeline(&self, overrides: &Overrides) -> Result<Pipeline> {
        let kg = load_kg(&self.kg.triples, self.kg.aliases.as_deref())?;

        let (model, seed_echo): (ComplExModel, Option<u64>) = match &self.kge.checkpoint {
            Some(ckpt) => {
                let (model, entities, relations) = load_checkpoint(ckpt)?;
                if entities != kg.entity_labels() || relations != kg.relation_labels() {
                    return Err(Error::Data(format!(
                        "checkpoint {} vocabulary does not match the graph",
                        ckpt.display()
                    )));
                }
                (model, None)
            }
            None => {
                let train_cfg = self.kge.train_config(overrides.seed);
                let seed = train_cfg.seed;
                (train(&kg, &train_cfg)?.model, Some(seed))
            }
        };

        if self.augment.similarity != "lexical" {
            return Err(Error::Config(format!(
                "unsupported augment.similarity {:?}; this build ships \"lexical\"",
                self.augment.similarity
            )));
        }
        let sim = TrigramTfidf::from_kg(&kg);

        let schedule = ThresholdSchedule::new(
            self.resolve_theta0(overrides)?,
            self.controller.c,
            overrides.max_turns.unwrap_or(self.controller.max_turns),
        )?;

        let options = PipelineOptions {
            k: self.pipeline.k,
            knowledge_models: self.pipeline.knowledge_models.clone(),
            augment: AugmentConfig {
                topk_relations: self.augment.topk_relations,
                max_tails_per_entity: self.augment.max_tails_per_entity,
            },
            seed: seed_echo,
        };

        Pipeline::new(
            kg,
            model,
            Box::new(sim),
            Box::new(AliasLinker),
            self.build_gateway(overrides)?,
            schedule,
            options,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, contents: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        p
    }

    fn minimal_pack(dir: &Path) -> PathBuf {
        write_file(dir, "kg.tsv", "x\tr\ty\n");
        write_file(
            dir,
            "fixtures.jsonl",
            r#"{"role": "answer", "turn": null, "key": "*", "response": "y"}
{"role": "triple_extract", "turn": null, "key": "*", "response": "(x, r, y)"}
"#,
        );
        write_file(
            dir,
            "run.toml",
            r#"
[kg]
triples = "kg.tsv"

[kge]
dim = 4
epochs = 3

[controller]
theta0 = 1.0

[gateway]
backend = "fixture"
fixtures = "fixtures.jsonl"

[pipeline]
knowledge_models = ["m1"]
"#,
        )
    }

    #[test]
    fn config_loads_and_builds_pipeline() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = minimal_pack(dir.path());
        let cfg = ConfigFile::load(&cfg_path).unwrap();
        assert!(cfg.kg.triples.is_absolute() || cfg.kg.triples.starts_with(dir.path()));
        let pipeline = cfg.build_pipeline(&Overrides::default()).unwrap();
        let record = pipeline.run("what is x?").unwrap();
        assert_eq!(record.final_answer, "y");
    }

    #[test]
    fn theta0_resolution_order() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = minimal_pack(dir.path());
        let mut cfg = ConfigFile::load(&cfg_path).unwrap();

        // Flag override wins over the file value.
        let ov = Overrides {
            theta0: Some(9.0),
            ..Overrides::default()
        };
        assert_eq!(cfg.resolve_theta0(&ov).unwrap(), 9.0);
        assert_eq!(cfg.resolve_theta0(&Overrides::default()).unwrap(), 1.0);

        // Without a file value, fall back to the (model, dataset) table.
        cfg.controller.theta0 = None;
        assert!(cfg.resolve_theta0(&Overrides::default()).is_err());
        cfg.pipeline.qa_model = Some("GLM4-9b".into());
        cfg.pipeline.dataset = Some("HotpotQA".into());
        assert_eq!(cfg.resolve_theta0(&Overrides::default()).unwrap(), 10.0);
        cfg.pipeline.dataset = Some("unknown".into());
        assert!(cfg.resolve_theta0(&Overrides::default()).is_err());
    }

    #[test]
    fn unknown_backend_and_missing_fixtures_fail() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = minimal_pack(dir.path());
        let mut cfg = ConfigFile::load(&cfg_path).unwrap();
        cfg.gateway.backend = "carrier-pigeon".into();
        assert!(cfg.build_gateway(&Overrides::default()).is_err());
        cfg.gateway.backend = "fixture".into();
        cfg.gateway.fixtures = None;
        assert!(cfg.build_gateway(&Overrides::default()).is_err());
    }

    #[test]
    fn seed_override_changes_trained_model_echo() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = minimal_pack(dir.path());
        let cfg = ConfigFile::load(&cfg_path).unwrap();
        let p = cfg
            .build_pipeline(&Overrides {
                seed: Some(7),
                ..Overrides::default()
            })
            .unwrap();
        assert_eq!(p.options.seed, Some(7));
    }

    #[test]
    fn templates_dir_overrides_built_ins() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = minimal_pack(dir.path());
        let tdir = dir.path().join("templates");
        std::fs::create_dir(&tdir).unwrap();
        write_file(&tdir, "answer.txt", "custom-answer {question}|{references}");
        write_file(&tdir, "triple_extract.txt", "custom-extract {document}");
        write_file(&tdir, "query_gen.txt", "custom-query {question} {references} {answer}");
        write_file(&tdir, "relevance.txt", "custom-rel {document} {question} {entities}");
        write_file(&tdir, "reference_gen.txt", "custom-ref {question}");
        let mut cfg = ConfigFile::load(&cfg_path).unwrap();
        cfg.gateway.templates_dir = Some(tdir);
        let pipeline = cfg.build_pipeline(&Overrides::default()).unwrap();
        pipeline.run("what is x?").unwrap();
        let prompt = &pipeline.gateway.exchanges()[0].prompt;
        assert_eq!(prompt, "custom-answer what is x?|");
    }
}
