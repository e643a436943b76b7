//! Online query path over offline artifacts: retrieve, extract on demand,
//! build the local subgraph, rank.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{load_catalog, product_text, CatalogFormat, ProductRecord, ProductStore};
use crate::config::{ArtifactPaths, PipelineConfig};
use crate::eval::{judge_pair, Judgments, RunSet};
use crate::extraction::{AttributeSet, AttributeStore, ExtractionError, Extractor};
use crate::graph::{AttributeGraph, GraphError, LocalSubgraph};
use crate::pipeline::{file_digest, parallel_map, Manifest, Stage};
use crate::prompts::{PromptKind, PromptSet};
use crate::provider::StructuredClient;
use crate::ranking::{
    build_rank_payload, build_raw_payload, rank_fallback, rank_graph, rank_raw, raw_product_blocks,
    structured_product_blocks, token_report, value_credit, RankError, RankedList, Ranker, ScoreSource,
};
use crate::retrieval::{clamp_k, CandidateSet, DenseIndex, IvfConfig, IvfIndex, Method, RetrievalError, SparseIndex};
use crate::schema::{SchemaRegistry, SchemaService};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown product {0}")]
    NotFound(String),
    #[error("artifact {path}: {reason}")]
    Artifact { path: String, reason: String },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
}

fn artifact_err(path: &Path, reason: impl std::fmt::Display) -> EngineError {
    EngineError::Artifact {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct JudgeSummary {
    pub judged: usize,
    pub failed: usize,
}

impl JudgeSummary {
    pub fn failure_ratio(&self) -> f64 {
        let total = self.judged + self.failed;
        if total == 0 {
            0.0
        } else {
            self.failed as f64 / total as f64
        }
    }
}

enum DenseBackend {
    Exact(DenseIndex),
    Ivf(IvfIndex),
}

impl DenseBackend {
    fn index(&self) -> &DenseIndex {
        match self {
            DenseBackend::Exact(d) => d,
            DenseBackend::Ivf(i) => i.base(),
        }
    }

    fn search_product(&self, id: &str, k: usize) -> Result<CandidateSet, RetrievalError> {
        match self {
            DenseBackend::Exact(d) => d.search_product(id, k),
            DenseBackend::Ivf(i) => i.search_product(id, k),
        }
    }
}

/// One similarity request. Unset fields take the configured defaults.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub k: Option<usize>,
    pub ranker: Option<Ranker>,
    pub method: Option<Method>,
}

impl Query {
    pub fn new(query_id: impl Into<String>) -> Self {
        Query {
            query_id: query_id.into(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub retrieval_ms: f64,
    pub extraction_ms: f64,
    pub ranking_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarItem {
    pub product_id: String,
    pub score: u8,
    pub source: ScoreSource,
    pub retrieval_score: f64,
    /// Query attributes whose values the candidate matches.
    pub matched: Vec<String>,
    /// Query attributes the candidate has with a different value.
    pub differing: Vec<String>,
    /// Query attributes the candidate lacks.
    pub absent: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarResponse {
    pub query_id: String,
    pub ranker: Ranker,
    pub degraded: bool,
    pub items: Vec<SimilarItem>,
    pub timing: Timing,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1000.0
}

/// Loaded artifacts plus the model client. Safe to share across threads.
pub struct Engine {
    config: PipelineConfig,
    products: ProductStore,
    schemas: SchemaService,
    attributes: AttributeStore,
    graph: RwLock<Arc<AttributeGraph>>,
    graph_writer: Mutex<()>,
    sparse: SparseIndex,
    dense: DenseBackend,
    client: Arc<StructuredClient>,
    prompts: PromptSet,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("products", &self.products.len())
            .field("graph_edges", &self.graph().edge_count())
            .finish()
    }
}

/// Fails when an artifact changed after the pipeline recorded its digest.
/// The attribute store is a cache that online extraction appends to, so it
/// is not checked.
fn verify_manifest(paths: &ArtifactPaths) -> Result<(), EngineError> {
    if !paths.manifest.exists() {
        return Ok(());
    }
    let manifest = Manifest::load(&paths.manifest);
    let checks = [
        (Stage::Classify, "products", &paths.products),
        (Stage::Schema, "registry", &paths.registry),
        (Stage::Graph, "graph", &paths.graph),
        (Stage::Index, "sparse_index", &paths.sparse_index),
        (Stage::Index, "dense_index", &paths.dense_index),
    ];
    for (stage, name, path) in checks {
        let Some(recorded) = manifest.stages.get(&stage).and_then(|r| r.outputs.get(name)) else {
            continue;
        };
        let actual = file_digest(path).map_err(|e| artifact_err(path, e))?;
        if &actual != recorded {
            return Err(artifact_err(path, "does not match the pipeline manifest; rerun the pipeline"));
        }
    }
    Ok(())
}

impl Engine {
    /// Loads every artifact, failing on anything missing or inconsistent.
    pub fn open(config: PipelineConfig, client: impl Into<Arc<StructuredClient>>) -> Result<Self, EngineError> {
        let client = client.into();
        let paths = config.artifacts();
        for path in [
            &paths.products,
            &paths.registry,
            &paths.attributes,
            &paths.graph,
            &paths.sparse_index,
            &paths.dense_index,
        ] {
            if !path.exists() {
                return Err(artifact_err(path, "missing; run the pipeline first"));
            }
        }
        verify_manifest(&paths)?;
        let prompts = match &config.paths.prompts_dir {
            Some(dir) => PromptSet::with_overrides(dir).map_err(|e| artifact_err(dir, e))?,
            None => PromptSet::default(),
        };
        let (products, _) =
            load_catalog(&paths.products, CatalogFormat::Jsonl).map_err(|e| artifact_err(&paths.products, e))?;
        let registry = SchemaRegistry::load(&paths.registry).map_err(|e| artifact_err(&paths.registry, e))?;
        let attributes = AttributeStore::open(&paths.attributes).map_err(|e| artifact_err(&paths.attributes, e))?;
        let graph = AttributeGraph::load(&paths.graph).map_err(|e| artifact_err(&paths.graph, e))?;
        let sparse = SparseIndex::load(&paths.sparse_index).map_err(|e| artifact_err(&paths.sparse_index, e))?;
        let dense = DenseIndex::load(&paths.dense_index).map_err(|e| artifact_err(&paths.dense_index, e))?;

        if dense.dimension() != config.retrieval.embedding_dimension {
            return Err(artifact_err(
                &paths.dense_index,
                format!(
                    "dimension {} but retrieval.embedding_dimension is {}",
                    dense.dimension(),
                    config.retrieval.embedding_dimension
                ),
            ));
        }
        if !dense.doc_ids().iter().map(String::as_str).eq(products.ids()) {
            return Err(artifact_err(&paths.dense_index, "indexed products differ from the catalog"));
        }
        if sparse.len() != products.len() {
            return Err(artifact_err(&paths.sparse_index, "indexed products differ from the catalog"));
        }
        if let Some(stray) = graph.products().iter().find(|p| !products.contains(p)) {
            return Err(artifact_err(&paths.graph, format!("product {stray} is not in the catalog")));
        }

        let dense = if config.retrieval.ann {
            DenseBackend::Ivf(IvfIndex::build(dense, IvfConfig::default()))
        } else {
            DenseBackend::Exact(dense)
        };
        Ok(Engine {
            config,
            products,
            schemas: SchemaService::new(registry),
            attributes,
            graph: RwLock::new(Arc::new(graph)),
            graph_writer: Mutex::new(()),
            sparse,
            dense,
            client,
            prompts,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn products(&self) -> &ProductStore {
        &self.products
    }

    pub fn graph(&self) -> Arc<AttributeGraph> {
        self.graph.read().unwrap().clone()
    }

    pub fn registry(&self) -> Arc<SchemaRegistry> {
        self.schemas.snapshot()
    }

    pub fn attribute_store(&self) -> &AttributeStore {
        &self.attributes
    }

    pub fn dense_index(&self) -> &DenseIndex {
        self.dense.index()
    }

    pub fn client(&self) -> &StructuredClient {
        &self.client
    }

    fn record(&self, id: &str) -> Result<&ProductRecord, EngineError> {
        self.products.get(id).ok_or_else(|| EngineError::NotFound(id.to_string()))
    }

    fn extractor(&self) -> Extractor<'_> {
        Extractor {
            catalog: &self.products,
            schemas: &self.schemas,
            client: &self.client,
            store: &self.attributes,
            prompts: &self.prompts,
        }
    }

    /// Top-k candidates for a catalog product, excluding itself.
    pub fn retrieve(&self, query_id: &str, k: usize, method: Method) -> Result<CandidateSet, EngineError> {
        let record = self.record(query_id)?;
        let k = clamp_k(k);
        Ok(match method {
            Method::Dense => self.dense.search_product(query_id, k)?,
            Method::Sparse => self.sparse.search(query_id, &product_text(record), k, Some(query_id)),
        })
    }

    /// Extracts attributes for products that lack a current cache entry or a
    /// graph node, then swaps in a graph that includes them. Failed products
    /// join the graph without edges and are retried on the next request.
    fn ensure_attributes(&self, ids: &[&str]) -> usize {
        let version = self.schemas.version();
        let graph = self.graph();
        let todo: Vec<&str> = ids
            .iter()
            .copied()
            .filter(|id| self.attributes.get_current(id, version).is_none() || !graph.contains_product(id))
            .collect();
        if todo.is_empty() {
            return 0;
        }
        let extractor = self.extractor();
        let results = parallel_map(&todo, self.config.extraction.parallelism, |id| extractor.get_or_extract(id));
        let _writer = self.graph_writer.lock().unwrap();
        let mut next = (*self.graph()).clone();
        let mut extracted = 0;
        for (id, result) in todo.iter().zip(results) {
            match result {
                Ok(set) => {
                    extracted += 1;
                    next.set_product_attributes(id, set.pairs.iter().map(|(a, v)| (a.as_str(), v.as_str())));
                }
                Err(e) => {
                    log::warn!("online extraction failed: {e}");
                    if !next.contains_product(id) {
                        next.add_product(id);
                    }
                }
            }
        }
        *self.graph.write().unwrap() = Arc::new(next);
        extracted
    }

    fn schema_order(&self, record: &ProductRecord) -> Vec<String> {
        record
            .category_path()
            .map(|p| self.schemas.snapshot().resolve_schema(&p).names())
            .unwrap_or_default()
    }

    fn subgraph(&self, query: &ProductRecord, candidates: &CandidateSet) -> Result<LocalSubgraph, EngineError> {
        Ok(self
            .graph()
            .local_subgraph(&query.product_id, &candidates.ids())?
            .with_schema_order(self.schema_order(query)))
    }

    fn rank_timed(&self, query: &Query) -> Result<(RankedList, CandidateSet, Timing), EngineError> {
        let start = Instant::now();
        let record = self.record(&query.query_id)?;
        let k = query.k.unwrap_or(self.config.retrieval.k);
        let method = query.method.unwrap_or(self.config.retrieval.method);
        let ranker = query.ranker.unwrap_or(self.config.ranking.ranker);
        let mut timing = Timing::default();

        let t = Instant::now();
        let candidates = self.retrieve(&query.query_id, k, method)?;
        timing.retrieval_ms = ms(t);
        if candidates.entries.is_empty() {
            let list = RankedList {
                query_id: query.query_id.clone(),
                ranker,
                degraded: false,
                items: Vec::new(),
                token_stats: None,
            };
            timing.total_ms = ms(start);
            return Ok((list, candidates, timing));
        }

        let cand_records: Vec<&ProductRecord> = candidates
            .entries
            .iter()
            .map(|c| self.record(&c.product_id))
            .collect::<Result<_, _>>()?;
        let list = match ranker {
            Ranker::Raw => {
                let t = Instant::now();
                let list = rank_raw(record, &cand_records, &candidates, &self.client, &self.prompts)?;
                timing.ranking_ms = ms(t);
                list
            }
            Ranker::Graph | Ranker::Fallback => {
                let t = Instant::now();
                let ids: Vec<&str> = std::iter::once(record.product_id.as_str())
                    .chain(candidates.entries.iter().map(|c| c.product_id.as_str()))
                    .collect();
                self.ensure_attributes(&ids);
                timing.extraction_ms = ms(t);

                let t = Instant::now();
                let sub = self.subgraph(record, &candidates)?;
                let list = if ranker == Ranker::Graph {
                    let mut list = rank_graph(&sub, &candidates, &self.client, &self.prompts)?;
                    let structured =
                        build_rank_payload(&sub, &candidates, self.prompts.version(PromptKind::RankGraph))?;
                    let raw = build_raw_payload(record, &cand_records, self.prompts.version(PromptKind::RankRaw))?;
                    list.token_stats = Some(token_report(
                        &structured_product_blocks(&structured),
                        &raw_product_blocks(&raw),
                    ));
                    list
                } else {
                    rank_fallback(&sub, &candidates)?
                };
                timing.ranking_ms = ms(t);
                list
            }
        };
        timing.total_ms = ms(start);
        Ok((list, candidates, timing))
    }

    /// Ranked candidates for a query.
    pub fn rank(&self, query: &Query) -> Result<RankedList, EngineError> {
        Ok(self.rank_timed(query)?.0)
    }

    /// Ranked candidates with attribute-match summaries and stage timings.
    pub fn similar(&self, query: &Query) -> Result<SimilarResponse, EngineError> {
        let (list, candidates, timing) = self.rank_timed(query)?;
        let graph = self.graph();
        let query_attrs = graph.neighbors(&list.query_id);
        let items = list
            .items
            .iter()
            .map(|item| {
                let cand = graph.neighbors(&item.product_id);
                let (mut matched, mut differing, mut absent) = (Vec::new(), Vec::new(), Vec::new());
                for (a, qv) in &query_attrs {
                    match cand.get(a) {
                        Some(cv) if value_credit(qv, cv) == 1.0 => matched.push(a.to_string()),
                        Some(_) => differing.push(a.to_string()),
                        None => absent.push(a.to_string()),
                    }
                }
                SimilarItem {
                    product_id: item.product_id.clone(),
                    score: item.score,
                    source: item.source,
                    retrieval_score: candidates.score_of(&item.product_id).unwrap_or(0.0),
                    matched,
                    differing,
                    absent,
                    rationale: item.rationale.clone(),
                }
            })
            .collect();
        Ok(SimilarResponse {
            query_id: list.query_id,
            ranker: list.ranker,
            degraded: list.degraded,
            items,
            timing,
        })
    }

    /// Current attribute set for a product, extracting it on a cache miss.
    pub fn attributes(&self, product_id: &str) -> Result<Arc<AttributeSet>, EngineError> {
        self.record(product_id)?;
        self.ensure_attributes(&[product_id]);
        Ok(self.extractor().get_or_extract(product_id)?)
    }

    /// Judges the top `top` items of every list in `systems` that `judgments`
    /// does not already cover, adding the results.
    pub fn judge_runs(
        &self,
        systems: &BTreeMap<String, RunSet>,
        top: usize,
        judge: &str,
        judgments: &mut Judgments,
    ) -> JudgeSummary {
        let pairs: Vec<(String, String)> = systems
            .values()
            .flat_map(|run| run.iter().flat_map(|(q, ids)| ids.iter().take(top).map(|c| (q.clone(), c.clone()))))
            .filter(|(q, c)| judgments.get(q, c).is_none())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let results = parallel_map(&pairs, self.config.extraction.parallelism, |(q, c)| {
            let (Some(qr), Some(cr)) = (self.products.get(q), self.products.get(c)) else {
                return Err(format!("judging {q}/{c}: unknown product"));
            };
            let qa = self.attributes(q).ok();
            let ca = self.attributes(c).ok();
            judge_pair(qr, qa.as_deref(), cr, ca.as_deref(), &self.client, &self.prompts, judge).map_err(|e| e.to_string())
        });
        let mut summary = JudgeSummary::default();
        for r in results {
            match r {
                Ok(j) => {
                    judgments.insert(j);
                    summary.judged += 1;
                }
                Err(e) => {
                    log::warn!("{e}");
                    summary.failed += 1;
                }
            }
        }
        summary
    }

    /// Attribute values keyed by name, as held in the graph.
    pub fn graph_attributes(&self, product_id: &str) -> BTreeMap<String, String> {
        self.graph()
            .neighbors(product_id)
            .into_iter()
            .map(|(a, v)| (a.to_string(), v.to_string()))
            .collect()
    }
}
