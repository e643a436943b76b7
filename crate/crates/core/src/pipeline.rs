//! Offline stages: ingest, classify, schema, extract, graph, index.
//!
//! Each stage records the digests of its inputs and outputs in
//! `manifest.json`; a stage whose recorded digests still match is skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::catalog::{filter_categories, load_catalog, CatalogFormat, CategoryPath, ProductStore};
use crate::config::{ArtifactPaths, PipelineConfig};
use crate::extraction::{AttributeStore, Extractor};
use crate::graph::build_graph;
use crate::prompts::{PromptKind, PromptSet};
use crate::provider::StructuredClient;
use crate::retrieval::{build_dense_index, build_sparse_index};
use crate::schema::{
    classify_with_known, load_alias_overrides, save_suggestions, standardize, SchemaRegistry,
    SchemaService, UNCLASSIFIED,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Classify,
    Schema,
    Extract,
    Graph,
    Index,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingest,
        Stage::Classify,
        Stage::Schema,
        Stage::Extract,
        Stage::Graph,
        Stage::Index,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Classify => "classify",
            Stage::Schema => "schema",
            Stage::Extract => "extract",
            Stage::Graph => "graph",
            Stage::Index => "index",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("stage {stage} failed: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    fn new(stage: Stage, message: impl fmt::Display) -> Self {
        PipelineError {
            stage,
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ran,
    UpToDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub status: StageStatus,
    /// Too many per-item failures (see `extraction.failure_threshold`).
    pub degraded: bool,
    pub detail: Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub stages: Vec<StageReport>,
}

impl PipelineReport {
    pub fn degraded(&self) -> bool {
        self.stages.iter().any(|s| s.degraded)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub complete: bool,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<Stage, StageRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Manifest {
        std::fs::read_to_string(path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default()
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("manifest serializes") + "\n")
    }
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> std::io::Result<String> {
    Ok(digest_bytes(&std::fs::read(path)?))
}

fn failure_degraded(failed: usize, attempted: usize, threshold: f64) -> bool {
    attempted > 0 && failed as f64 / attempted as f64 > threshold
}

/// Runs `f` over `items` with up to `parallelism` workers, keeping input order.
pub(crate) fn parallel_map<T: Sync, R: Send, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    F: Fn(&T) -> R + Sync,
{
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..parallelism.max(1).min(items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                out.lock().unwrap()[i] = Some(r);
            });
        }
    });
    out.into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect()
}

struct StageRun {
    outputs: Vec<(&'static str, std::path::PathBuf)>,
    complete: bool,
    degraded: bool,
    detail: Value,
}

/// Offline pipeline bound to a config and a model client.
pub struct Pipeline<'a> {
    config: &'a PipelineConfig,
    client: &'a StructuredClient,
    prompts: PromptSet,
    paths: ArtifactPaths,
}

impl<'a> Pipeline<'a> {
    pub fn new(config: &'a PipelineConfig, client: &'a StructuredClient) -> Result<Self, PipelineError> {
        let prompts = match &config.paths.prompts_dir {
            Some(dir) => PromptSet::with_overrides(dir).map_err(|e| PipelineError::new(Stage::Ingest, e))?,
            None => PromptSet::default(),
        };
        Ok(Pipeline {
            config,
            client,
            prompts,
            paths: config.artifacts(),
        })
    }

    pub fn paths(&self) -> &ArtifactPaths {
        &self.paths
    }

    /// Runs every stage in order, skipping those already up to date.
    pub fn run_all(&self, force: bool) -> Result<PipelineReport, PipelineError> {
        let mut report = PipelineReport::default();
        for stage in Stage::ALL {
            report.stages.push(self.run_stage(stage, force)?);
        }
        Ok(report)
    }

    pub fn run_stage(&self, stage: Stage, force: bool) -> Result<StageReport, PipelineError> {
        let err = |e: &dyn fmt::Display| PipelineError::new(stage, e);
        std::fs::create_dir_all(&self.paths.work_dir).map_err(|e| err(&e))?;
        let inputs = self.inputs(stage)?;
        let mut manifest = Manifest::load(&self.paths.manifest);
        if !force && self.is_up_to_date(&manifest, stage, &inputs) {
            log::info!("{stage}: up to date");
            return Ok(StageReport {
                stage,
                status: StageStatus::UpToDate,
                degraded: false,
                detail: Value::Null,
            });
        }
        log::info!("{stage}: running");
        let run = match stage {
            Stage::Ingest => self.ingest(),
            Stage::Classify => self.classify(),
            Stage::Schema => self.schema(),
            Stage::Extract => self.extract(),
            Stage::Graph => self.graph(),
            Stage::Index => self.index(),
        }?;
        let mut outputs = BTreeMap::new();
        for (name, path) in &run.outputs {
            outputs.insert(name.to_string(), file_digest(path).map_err(|e| err(&e))?);
        }
        manifest.stages.insert(
            stage,
            StageRecord {
                complete: run.complete,
                inputs,
                outputs,
            },
        );
        manifest.save(&self.paths.manifest).map_err(|e| err(&e))?;
        Ok(StageReport {
            stage,
            status: StageStatus::Ran,
            degraded: run.degraded,
            detail: run.detail,
        })
    }

    fn is_up_to_date(&self, manifest: &Manifest, stage: Stage, inputs: &BTreeMap<String, String>) -> bool {
        let Some(record) = manifest.stages.get(&stage) else {
            return false;
        };
        record.complete
            && &record.inputs == inputs
            && self.output_paths(stage).iter().all(|(name, path)| {
                file_digest(path).ok().as_ref() == record.outputs.get(*name)
            })
    }

    fn output_paths(&self, stage: Stage) -> Vec<(&'static str, std::path::PathBuf)> {
        let p = &self.paths;
        match stage {
            Stage::Ingest => vec![("ingested", p.ingested.clone())],
            Stage::Classify => vec![("products", p.products.clone())],
            Stage::Schema => vec![
                ("registry", p.registry.clone()),
                ("merge_suggestions", p.merge_suggestions.clone()),
            ],
            Stage::Extract => vec![("attributes", p.attributes.clone())],
            Stage::Graph => vec![("graph", p.graph.clone())],
            Stage::Index => vec![
                ("sparse_index", p.sparse_index.clone()),
                ("dense_index", p.dense_index.clone()),
            ],
        }
    }

    /// Digests of everything a stage reads, including relevant settings.
    fn inputs(&self, stage: Stage) -> Result<BTreeMap<String, String>, PipelineError> {
        let c = self.config;
        let p = &self.paths;
        let mut out = BTreeMap::new();
        let mut file = |name: &str, path: &Path, required: bool| -> Result<(), PipelineError> {
            match file_digest(path) {
                Ok(d) => {
                    out.insert(name.to_string(), d);
                    Ok(())
                }
                Err(_) if !required => Ok(()),
                Err(e) => Err(PipelineError::new(
                    stage,
                    format!("missing input {name} at {}: {e}", path.display()),
                )),
            }
        };
        let settings: Value = match stage {
            Stage::Ingest => {
                let catalog = c
                    .paths
                    .catalog
                    .as_deref()
                    .ok_or_else(|| PipelineError::new(stage, "paths.catalog is not configured"))?;
                file("catalog", catalog, true)?;
                json!({ "filter": c.catalog })
            }
            Stage::Classify => {
                file("ingested", &p.ingested, true)?;
                json!({ "prompt": self.prompts.version(PromptKind::Classify) })
            }
            Stage::Schema => {
                file("products", &p.products, true)?;
                if let Some(o) = &c.paths.alias_overrides {
                    file("alias_overrides", o, true)?;
                }
                json!({ "prompt": self.prompts.version(PromptKind::Schema) })
            }
            Stage::Extract => {
                file("products", &p.products, true)?;
                file("registry", &p.registry, true)?;
                json!({ "prompt": self.prompts.version(PromptKind::Extract) })
            }
            Stage::Graph => {
                file("products", &p.products, true)?;
                file("registry", &p.registry, true)?;
                file("attributes", &p.attributes, true)?;
                Value::Null
            }
            Stage::Index => {
                file("products", &p.products, true)?;
                json!({
                    "embedding_dimension": c.retrieval.embedding_dimension,
                    "embedding_seed": c.retrieval.embedding_seed,
                })
            }
        };
        if !settings.is_null() {
            out.insert("settings".into(), digest_bytes(settings.to_string().as_bytes()));
        }
        Ok(out)
    }

    fn load_products(&self, stage: Stage) -> Result<ProductStore, PipelineError> {
        load_catalog(&self.paths.products, CatalogFormat::Jsonl)
            .map(|(s, _)| s)
            .map_err(|e| PipelineError::new(stage, e))
    }

    fn load_registry(&self, stage: Stage) -> Result<SchemaRegistry, PipelineError> {
        SchemaRegistry::load(&self.paths.registry).map_err(|e| PipelineError::new(stage, e))
    }

    fn ingest(&self) -> Result<StageRun, PipelineError> {
        let stage = Stage::Ingest;
        let path = self.config.paths.catalog.as_deref().expect("checked in inputs");
        let (store, report) = load_catalog(path, CatalogFormat::from_path(path)).map_err(|e| PipelineError::new(stage, e))?;
        let kept = filter_categories(&store, &self.config.catalog);
        kept.write_jsonl(&self.paths.ingested)
            .map_err(|e| PipelineError::new(stage, e))?;
        Ok(StageRun {
            outputs: self.output_paths(stage),
            complete: true,
            degraded: false,
            detail: json!({
                "loaded": report.loaded,
                "rejected_rows": report.rejected_rows,
                "duplicates_dropped": report.duplicates_dropped,
                "filtered_out": store.len() - kept.len(),
                "kept": kept.len(),
            }),
        })
    }

    fn classify(&self) -> Result<StageRun, PipelineError> {
        let stage = Stage::Classify;
        let (store, _) = load_catalog(&self.paths.ingested, CatalogFormat::Jsonl).map_err(|e| PipelineError::new(stage, e))?;
        let mut known: BTreeSet<CategoryPath> = BTreeSet::new();
        for path in store.category_index().keys() {
            known.insert(path.parent());
            known.insert(path.clone());
        }
        let todo = store.uncategorized();
        let results = parallel_map(&todo, self.config.extraction.parallelism, |r| {
            classify_with_known(r, self.client, &known, &self.prompts)
        });
        let mut labels = BTreeMap::new();
        let mut failed = 0;
        let mut new_categories = BTreeSet::new();
        for (record, result) in todo.iter().zip(results) {
            let path = match result {
                Ok(c) => {
                    if c.new {
                        new_categories.insert(c.path.to_string());
                    }
                    c.path
                }
                Err(e) => {
                    log::warn!("{e}; labelling {} as {UNCLASSIFIED}", record.product_id);
                    failed += 1;
                    CategoryPath::super_only(UNCLASSIFIED)
                }
            };
            labels.insert(record.product_id.clone(), path);
        }
        store
            .with_categories(&labels)
            .write_jsonl(&self.paths.products)
            .map_err(|e| PipelineError::new(stage, e))?;
        Ok(StageRun {
            outputs: self.output_paths(stage),
            complete: failed == 0,
            degraded: failure_degraded(failed, todo.len(), self.config.extraction.failure_threshold),
            detail: json!({
                "classified": todo.len() - failed,
                "failed": failed,
                "new_categories": new_categories,
            }),
        })
    }

    fn schema(&self) -> Result<StageRun, PipelineError> {
        let stage = Stage::Schema;
        let store = self.load_products(stage)?;
        // Previously generated schemas are reused; only unseen paths cost a call.
        let registry = if self.paths.registry.exists() {
            self.load_registry(stage)?
        } else {
            SchemaRegistry::new()
        };
        let service = SchemaService::new(registry);
        let paths: Vec<&CategoryPath> = store
            .category_index()
            .keys()
            .filter(|p| p.super_category != UNCLASSIFIED)
            .collect();
        let mut failed = Vec::new();
        for path in &paths {
            if let Err(e) = service.ensure_schema(path, self.client, &self.prompts) {
                log::warn!("{e}");
                failed.push(path.to_string());
            }
        }
        let overrides = match &self.config.paths.alias_overrides {
            Some(p) => load_alias_overrides(p).map_err(|e| PipelineError::new(stage, e))?,
            None => BTreeMap::new(),
        };
        let out = standardize(&service.snapshot(), &overrides);
        out.registry
            .save(&self.paths.registry)
            .map_err(|e| PipelineError::new(stage, e))?;
        save_suggestions(&self.paths.merge_suggestions, &out.suggestions).map_err(|e| PipelineError::new(stage, e))?;
        Ok(StageRun {
            outputs: self.output_paths(stage),
            complete: failed.is_empty(),
            degraded: failure_degraded(failed.len(), paths.len(), self.config.extraction.failure_threshold),
            detail: json!({
                "schemas": out.registry.len(),
                "version": out.registry.version,
                "aliases": out.registry.alias_table().len(),
                "suggestions": out.suggestions.len(),
                "failed": failed,
            }),
        })
    }

    fn extract(&self) -> Result<StageRun, PipelineError> {
        let stage = Stage::Extract;
        let catalog = self.load_products(stage)?;
        let registry = self.load_registry(stage)?;
        let service = SchemaService::new(registry.clone());
        let store = AttributeStore::open(&self.paths.attributes).map_err(|e| PipelineError::new(stage, e))?;
        let extractor = Extractor {
            catalog: &catalog,
            schemas: &service,
            client: self.client,
            store: &store,
            prompts: &self.prompts,
        };
        let report = extractor.extract_batch(self.config.extraction.parallelism);
        store.compact().map_err(|e| PipelineError::new(stage, e))?;
        if *service.snapshot() != registry {
            // Extraction generated schemas for categories the schema stage missed.
            service
                .snapshot()
                .save(&self.paths.registry)
                .map_err(|e| PipelineError::new(stage, e))?;
        }
        Ok(StageRun {
            outputs: self.output_paths(stage),
            complete: report.failed == 0,
            degraded: report.failure_ratio() > self.config.extraction.failure_threshold,
            detail: serde_json::to_value(&report).expect("report serializes"),
        })
    }

    fn graph(&self) -> Result<StageRun, PipelineError> {
        let stage = Stage::Graph;
        let catalog = self.load_products(stage)?;
        let version = self.load_registry(stage)?.version;
        let store = AttributeStore::open(&self.paths.attributes).map_err(|e| PipelineError::new(stage, e))?;
        let sets = store.snapshot();
        let current: Vec<_> = sets
            .iter()
            .filter(|s| s.schema_version == version && catalog.contains(&s.product_id))
            .map(|s| &**s)
            .collect();
        let graph = build_graph(current.iter().copied());
        graph
            .save(&self.paths.graph)
            .map_err(|e| PipelineError::new(stage, e))?;
        Ok(StageRun {
            outputs: self.output_paths(stage),
            complete: true,
            degraded: false,
            detail: json!({
                "products": graph.products().len(),
                "attributes": graph.attributes().len(),
                "edges": graph.edge_count(),
                "without_attributes": catalog.len() - current.len(),
            }),
        })
    }

    fn index(&self) -> Result<StageRun, PipelineError> {
        let stage = Stage::Index;
        let catalog = self.load_products(stage)?;
        let sparse = build_sparse_index(&catalog);
        sparse
            .save(&self.paths.sparse_index)
            .map_err(|e| PipelineError::new(stage, e))?;
        let dense = build_dense_index(&catalog, &self.config.retrieval.embedder());
        dense
            .save(&self.paths.dense_index)
            .map_err(|e| PipelineError::new(stage, e))?;
        Ok(StageRun {
            outputs: self.output_paths(stage),
            complete: true,
            degraded: false,
            detail: json!({
                "documents": sparse.len(),
                "dimension": dense.dimension(),
            }),
        })
    }
}
