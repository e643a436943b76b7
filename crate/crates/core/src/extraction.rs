//! Attribute-value extraction and the persistent attribute cache.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::SystemTime;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::catalog::{product_text, ProductRecord, ProductStore};
use crate::prompts::{PromptError, PromptKind, PromptSet};
use crate::provider::{GenerateError, ResponseSchema, StructuredClient};
use crate::schema::{AttributeDef, SchemaRegistry, SchemaService};
use crate::text::{is_placeholder_value, normalize_value};

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("extraction for {product_id} failed: {source}")]
    Provider {
        product_id: String,
        #[source]
        source: GenerateError,
    },
    #[error("unknown product {0}")]
    NotFound(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("attribute store: {0}")]
    Store(String),
}

/// Extracted attribute → value map for one product.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSet {
    pub product_id: String,
    pub schema_version: u64,
    pub pairs: BTreeMap<String, String>,
    #[serde(default)]
    pub discovered: BTreeSet<String>,
    /// In-memory only; the cache file carries no timestamps so reruns are
    /// byte-identical.
    #[serde(skip)]
    pub extracted_at: Option<SystemTime>,
}

impl AttributeSet {
    pub fn new(product_id: impl Into<String>, schema_version: u64) -> Self {
        AttributeSet {
            product_id: product_id.into(),
            schema_version,
            pairs: BTreeMap::new(),
            discovered: BTreeSet::new(),
            extracted_at: None,
        }
    }

    /// Builder for fixtures: every pair is a schema pair.
    pub fn with_pairs<I, K, V>(mut self, pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        self.pairs.extend(pairs.into_iter().map(|(k, v)| (k.into(), v.into())));
        self
    }
}

pub fn extraction_schema() -> ResponseSchema {
    ResponseSchema::new(
        "extract_attributes",
        json!({
            "type": "object",
            "additionalProperties": {"type": ["string", "number", "boolean", "null"]}
        }),
    )
}

fn render_defs(defs: &[AttributeDef]) -> String {
    if defs.is_empty() {
        return "(no predefined attributes; report the key attributes you find)".to_string();
    }
    defs.iter()
        .map(|d| {
            if d.description.is_empty() {
                format!("- {}", d.canonical_name)
            } else {
                format!("- {}: {}", d.canonical_name, d.description)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn value_text(v: &Value) -> Option<String> {
    let s = match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        Value::Bool(true) => "yes".to_string(),
        Value::Bool(false) => "no".to_string(),
        _ => return None,
    };
    let s = normalize_value(&s);
    (!is_placeholder_value(&s)).then_some(s)
}

/// Turns a raw extraction payload into an [`AttributeSet`]: keys are
/// canonicalized through the registry, keys outside the schema are marked
/// discovered, and empty or placeholder values are dropped. When two raw keys
/// canonicalize to the same name the first (in key order) wins.
pub fn attribute_set_from_payload(
    product_id: &str,
    payload: &Value,
    defs: &[AttributeDef],
    registry: &SchemaRegistry,
) -> AttributeSet {
    let schema_names: BTreeSet<&str> = defs.iter().map(|d| d.canonical_name.as_str()).collect();
    let mut set = AttributeSet::new(product_id, registry.version);
    for (raw_key, raw_value) in payload.as_object().into_iter().flatten() {
        let key = registry.canonicalize(raw_key);
        if key.is_empty() || set.pairs.contains_key(&key) {
            continue;
        }
        let Some(value) = value_text(raw_value) else {
            continue;
        };
        if !schema_names.contains(key.as_str()) {
            set.discovered.insert(key.clone());
        }
        set.pairs.insert(key, value);
    }
    set
}

/// Extracts attribute values for one product using the given schema.
pub fn extract_attributes(
    record: &ProductRecord,
    defs: &[AttributeDef],
    client: &StructuredClient,
    registry: &SchemaRegistry,
    prompts: &PromptSet,
) -> Result<AttributeSet, ExtractionError> {
    let category = record
        .category_path()
        .map(|p| p.to_string())
        .unwrap_or_else(|| "unknown".to_string());
    let text = product_text(record);
    let prompt = prompts.render(
        PromptKind::Extract,
        &[
            ("attributes", &render_defs(defs)),
            ("product_id", &record.product_id),
            ("category", &category),
            ("product_text", &text),
        ],
    )?;
    let out = client
        .generate_structured(&prompt, &extraction_schema())
        .map_err(|source| ExtractionError::Provider {
            product_id: record.product_id.clone(),
            source,
        })?;
    let mut set = attribute_set_from_payload(&record.product_id, &out.payload, defs, registry);
    set.extracted_at = Some(SystemTime::now());
    Ok(set)
}

/// Cache of attribute sets keyed by product id, optionally backed by a JSONL
/// file. Writes append a line; [`AttributeStore::compact`] rewrites the file
/// sorted by product id with one line per product.
#[derive(Debug, Default)]
pub struct AttributeStore {
    entries: RwLock<BTreeMap<String, Arc<AttributeSet>>>,
    path: Option<PathBuf>,
    writer: Mutex<Option<BufWriter<File>>>,
}

impl AttributeStore {
    pub fn in_memory() -> Self {
        AttributeStore::default()
    }

    pub fn from_sets<I: IntoIterator<Item = AttributeSet>>(sets: I) -> Self {
        let entries = sets
            .into_iter()
            .map(|s| (s.product_id.clone(), Arc::new(s)))
            .collect();
        AttributeStore {
            entries: RwLock::new(entries),
            ..Default::default()
        }
    }

    /// Opens (or creates) a file-backed store. Later lines for the same
    /// product replace earlier ones.
    pub fn open(path: &Path) -> Result<Self, ExtractionError> {
        let entries = if path.exists() {
            read_sets(path)?
                .into_iter()
                .map(|s| (s.product_id.clone(), Arc::new(s)))
                .collect()
        } else {
            BTreeMap::new()
        };
        Ok(AttributeStore {
            entries: RwLock::new(entries),
            path: Some(path.to_path_buf()),
            writer: Mutex::new(None),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, product_id: &str) -> Option<Arc<AttributeSet>> {
        self.entries.read().unwrap().get(product_id).cloned()
    }

    /// Cached set for a product if it was extracted at `version`.
    pub fn get_current(&self, product_id: &str, version: u64) -> Option<Arc<AttributeSet>> {
        self.get(product_id).filter(|s| s.schema_version == version)
    }

    /// All sets in product id order.
    pub fn snapshot(&self) -> Vec<Arc<AttributeSet>> {
        self.entries.read().unwrap().values().cloned().collect()
    }

    /// Stores a set, replacing any previous entry for the product.
    pub fn put(&self, set: AttributeSet) -> Result<Arc<AttributeSet>, ExtractionError> {
        let set = Arc::new(set);
        let mut writer = self.writer.lock().unwrap();
        if let Some(path) = &self.path {
            if writer.is_none() {
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| ExtractionError::Store(e.to_string()))?;
                *writer = Some(BufWriter::new(f));
            }
            let w = writer.as_mut().expect("writer opened above");
            let line = serde_json::to_string(&*set).expect("attribute sets serialize");
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|e| ExtractionError::Store(e.to_string()))?;
        }
        self.entries
            .write()
            .unwrap()
            .insert(set.product_id.clone(), set.clone());
        Ok(set)
    }

    /// Rewrites the backing file with one line per product, sorted.
    pub fn compact(&self) -> Result<(), ExtractionError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut writer = self.writer.lock().unwrap();
        *writer = None;
        self.save_to(path)
    }

    /// Writes all entries to `path` (atomically via a temporary file).
    pub fn save_to(&self, path: &Path) -> Result<(), ExtractionError> {
        let store_err = |e: std::io::Error| ExtractionError::Store(e.to_string());
        let tmp = path.with_extension("tmp");
        {
            let mut out = BufWriter::new(File::create(&tmp).map_err(store_err)?);
            for set in self.entries.read().unwrap().values() {
                serde_json::to_writer(&mut out, &**set).expect("attribute sets serialize");
                out.write_all(b"\n").map_err(store_err)?;
            }
            out.flush().map_err(store_err)?;
        }
        std::fs::rename(&tmp, path).map_err(store_err)
    }
}

fn read_sets(path: &Path) -> Result<Vec<AttributeSet>, ExtractionError> {
    let f = File::open(path).map_err(|e| ExtractionError::Store(e.to_string()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| ExtractionError::Store(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let set: AttributeSet = serde_json::from_str(&line).map_err(|e| {
            ExtractionError::Store(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        out.push(set);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub product_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchReport {
    pub attempted: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub skipped_cached: usize,
    pub failures: Vec<BatchFailure>,
}

impl BatchReport {
    pub fn failure_ratio(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.failed as f64 / self.attempted as f64
        }
    }
}

/// Default failure ratio above which a batch run counts as degraded.
pub const DEFAULT_FAILURE_THRESHOLD: f64 = 0.2;

/// Everything extraction needs, bundled for the batch and online paths.
#[derive(Clone, Copy)]
pub struct Extractor<'a> {
    pub catalog: &'a ProductStore,
    pub schemas: &'a SchemaService,
    pub client: &'a StructuredClient,
    pub store: &'a AttributeStore,
    pub prompts: &'a PromptSet,
}

impl Extractor<'_> {
    /// Schema definitions for a record, generating schemas for unseen
    /// categories on the fly. Falls back to whatever resolves if generation
    /// fails.
    fn defs_for(&self, record: &ProductRecord) -> Vec<AttributeDef> {
        let Some(path) = record.category_path() else {
            return Vec::new();
        };
        match self.schemas.ensure_schema(&path, self.client, self.prompts) {
            Ok(resolved) => resolved.defs,
            Err(e) => {
                log::warn!("{}: schema generation failed ({e}); using inherited attributes", record.product_id);
                self.schemas.snapshot().resolve_schema(&path).defs
            }
        }
    }

    fn extract_and_store(&self, record: &ProductRecord) -> Result<Arc<AttributeSet>, ExtractionError> {
        let defs = self.defs_for(record);
        let registry = self.schemas.snapshot();
        let set = extract_attributes(record, &defs, self.client, &registry, self.prompts)?;
        self.store.put(set)
    }

    /// Returns the cached set at the current schema version, extracting and
    /// caching it on a miss.
    pub fn get_or_extract(&self, product_id: &str) -> Result<Arc<AttributeSet>, ExtractionError> {
        let record = self
            .catalog
            .get(product_id)
            .ok_or_else(|| ExtractionError::NotFound(product_id.to_string()))?;
        if let Some(hit) = self.store.get_current(product_id, self.schemas.version()) {
            return Ok(hit);
        }
        self.extract_and_store(record)
    }

    /// Extracts every product lacking a current cache entry, with up to
    /// `parallelism` concurrent extractions. Individual failures are recorded
    /// and do not stop the batch.
    pub fn extract_batch(&self, parallelism: usize) -> BatchReport {
        let parallelism = parallelism.max(1);
        let version = self.schemas.version();
        let todo: Vec<&ProductRecord> = self
            .catalog
            .iter()
            .filter(|r| self.store.get_current(&r.product_id, version).is_none())
            .collect();
        let mut report = BatchReport {
            attempted: todo.len(),
            skipped_cached: self.catalog.len() - todo.len(),
            ..Default::default()
        };

        let next = AtomicUsize::new(0);
        let failures = Mutex::new(Vec::new());
        std::thread::scope(|s| {
            for _ in 0..parallelism.min(todo.len().max(1)) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(record) = todo.get(i) else { break };
                    if let Err(e) = self.extract_and_store(record) {
                        log::warn!("{e}");
                        failures.lock().unwrap().push(BatchFailure {
                            product_id: record.product_id.clone(),
                            reason: e.to_string(),
                        });
                    }
                });
            }
        });

        let mut failures = failures.into_inner().unwrap();
        failures.sort_by(|a, b| a.product_id.cmp(&b.product_id));
        report.failed = failures.len();
        report.succeeded = report.attempted - report.failed;
        report.failures = failures;
        if let Err(e) = self.store.compact() {
            log::error!("compacting attribute store failed: {e}");
        }
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::CategoryPath;
    use crate::provider::{FnProvider, ModelProvider, ProviderError, ProviderSettings, Request, ScriptedProvider};
    use crate::schema::{AttributeLevel, CategorySchema, SchemaOrigin};

    fn defs(names: &[&str]) -> Vec<AttributeDef> {
        names.iter().map(|n| AttributeDef::new(n, AttributeLevel::Super, "")).collect()
    }

    fn client(p: Arc<dyn ModelProvider>) -> StructuredClient {
        StructuredClient::new(p, ProviderSettings::immediate())
    }

    fn kangaroo() -> ProductRecord {
        ProductRecord::new(
            "K1",
            "kangaroo Home Security System | 5-Piece Kit | Compatible with Alexa and Google Home | App-Based | Pet-Friendly",
        )
        .with_category("Home", Some("Security Systems"))
    }

    fn extract(payload: Value) -> AttributeSet {
        let p = Arc::new(ScriptedProvider::sequence(vec![payload]));
        extract_attributes(
            &kangaroo(),
            &defs(&["brand", "piece count"]),
            &client(p),
            &SchemaRegistry::new(),
            &PromptSet::default(),
        )
        .unwrap()
    }

    #[test]
    fn schema_pairs_pass_through() {
        let s = extract(json!({"brand": "Kangaroo", "piece count": "5"}));
        assert_eq!(s.pairs.len(), 2);
        assert_eq!(s.pairs["brand"], "Kangaroo");
        assert!(s.discovered.is_empty());
        assert_eq!(s.schema_version, 1);
    }

    #[test]
    fn extra_attribute_is_discovered() {
        let s = extract(json!({"brand": "Kangaroo", "piece count": "5", "Pet Friendly": "yes"}));
        assert_eq!(s.pairs["pet friendly"], "yes");
        assert_eq!(s.discovered, BTreeSet::from(["pet friendly".to_string()]));
    }

    #[test]
    fn empty_and_placeholder_values_dropped() {
        let s = extract(json!({"brand": "", "piece count": "  5  pieces ", "color": null, "model": "N/A", "app based": true}));
        assert!(!s.pairs.contains_key("brand"));
        assert!(!s.pairs.contains_key("color"));
        assert!(!s.pairs.contains_key("model"));
        assert_eq!(s.pairs["piece count"], "5 pieces");
        assert_eq!(s.pairs["app based"], "yes");
    }

    #[test]
    fn keys_canonicalized_through_aliases() {
        let mut reg = SchemaRegistry::new();
        reg.register(CategorySchema {
            category_path: CategoryPath::super_only("Electronics"),
            attributes: defs(&["drive capacity", "hard drive capacity"]),
            origin: SchemaOrigin::Curated,
        })
        .unwrap();
        let reg = crate::schema::standardize(&reg, &BTreeMap::new()).registry;
        let d = reg.resolve_schema(&CategoryPath::super_only("Electronics")).defs;
        let set = attribute_set_from_payload("x", &json!({"Hard Drive Capacity": "1TB"}), &d, &reg);
        assert_eq!(set.pairs.keys().collect::<Vec<_>>(), vec!["drive capacity"]);
        assert!(set.discovered.is_empty());
        assert_eq!(set.schema_version, 2);
    }

    #[test]
    fn provider_failure_carries_product_id() {
        let p = Arc::new(FnProvider::new(|_| Err(ProviderError::Timeout)));
        let err = extract_attributes(&kangaroo(), &[], &client(p), &SchemaRegistry::new(), &PromptSet::default())
            .unwrap_err();
        assert!(err.to_string().contains("K1"));
    }

    #[test]
    fn prompt_lists_descriptions() {
        let seen = Arc::new(Mutex::new(String::new()));
        let s2 = seen.clone();
        let p = Arc::new(FnProvider::new(move |r: &Request| {
            *s2.lock().unwrap() = r.prompt.clone();
            Ok(json!({}))
        }));
        let d = vec![AttributeDef::new("brand", AttributeLevel::Super, "manufacturer name")];
        extract_attributes(&kangaroo(), &d, &client(p), &SchemaRegistry::new(), &PromptSet::default()).unwrap();
        let prompt = seen.lock().unwrap().clone();
        assert!(prompt.contains("- brand: manufacturer name"));
        assert!(prompt.contains("Product ID: K1"));
        assert!(prompt.contains("Category: Home > Security Systems"));
    }

    fn catalog(n: usize) -> ProductStore {
        ProductStore::from_records((0..n).map(|i| ProductRecord::new(format!("P{i:02}"), format!("Product {i}")))).0
    }

    /// Answers every extraction with the product id found in the prompt.
    fn echo_provider(fail_for: Option<&'static str>) -> Arc<FnProvider> {
        Arc::new(FnProvider::new(move |r: &Request| {
            let id = r
                .prompt
                .lines()
                .find_map(|l| l.strip_prefix("Product ID: "))
                .unwrap()
                .to_string();
            if Some(id.as_str()) == fail_for {
                return Err(ProviderError::Rejected("boom".into()));
            }
            Ok(json!({"brand": format!("brand-{id}")}))
        }))
    }

    #[test]
    fn batch_skips_cached_and_isolates_failures() {
        let cat = catalog(10);
        let store = AttributeStore::in_memory();
        for id in ["P00", "P01", "P02", "P03"] {
            store.put(AttributeSet::new(id, 1)).unwrap();
        }
        let schemas = SchemaService::new(SchemaRegistry::new());
        let prompts = PromptSet::default();
        let client = client(echo_provider(Some("P07")));
        let ex = Extractor { catalog: &cat, schemas: &schemas, client: &client, store: &store, prompts: &prompts };
        let report = ex.extract_batch(3);
        assert_eq!(report.attempted, 6);
        assert_eq!(report.skipped_cached, 4);
        assert_eq!(report.succeeded, 5);
        assert_eq!(report.failed, 1);
        assert_eq!(report.failures[0].product_id, "P07");
        assert!((report.failure_ratio() - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn rerun_after_success_is_noop() {
        let cat = catalog(10);
        let store = AttributeStore::in_memory();
        let schemas = SchemaService::new(SchemaRegistry::new());
        let prompts = PromptSet::default();
        let provider = echo_provider(None);
        let client = client(provider.clone());
        let ex = Extractor { catalog: &cat, schemas: &schemas, client: &client, store: &store, prompts: &prompts };
        assert_eq!(ex.extract_batch(4).succeeded, 10);
        let again = ex.extract_batch(4);
        assert_eq!((again.attempted, again.skipped_cached), (0, 10));
        assert_eq!(provider.calls(), 10);
    }

    #[test]
    fn batch_output_file_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cat = catalog(25);
        let mut files = Vec::new();
        for (i, par) in [1usize, 8].iter().enumerate() {
            let path = dir.path().join(format!("attrs{i}.jsonl"));
            let store = AttributeStore::open(&path).unwrap();
            let schemas = SchemaService::new(SchemaRegistry::new());
            let prompts = PromptSet::default();
            let client = client(echo_provider(None));
            let ex = Extractor { catalog: &cat, schemas: &schemas, client: &client, store: &store, prompts: &prompts };
            ex.extract_batch(*par);
            files.push(std::fs::read(&path).unwrap());
        }
        assert_eq!(files[0], files[1]);
        let first = String::from_utf8(files[0].clone()).unwrap();
        assert_eq!(
            first.lines().next().unwrap(),
            r#"{"product_id":"P00","schema_version":1,"pairs":{"brand":"brand-P00"},"discovered":["brand"]}"#
        );
    }

    #[test]
    fn get_or_extract_hits_cache_without_calls() {
        let cat = catalog(2);
        let store = AttributeStore::in_memory();
        let cached = AttributeSet::new("P00", 1).with_pairs([("brand", "X")]);
        store.put(cached.clone()).unwrap();
        let schemas = SchemaService::new(SchemaRegistry::new());
        let prompts = PromptSet::default();
        let provider = Arc::new(ScriptedProvider::strict());
        let client = client(provider.clone());
        let ex = Extractor { catalog: &cat, schemas: &schemas, client: &client, store: &store, prompts: &prompts };
        assert_eq!(*ex.get_or_extract("P00").unwrap(), cached);
        assert_eq!(provider.calls(), 0);
        assert!(matches!(ex.get_or_extract("nope"), Err(ExtractionError::NotFound(_))));
    }

    #[test]
    fn get_or_extract_fills_cache_and_respects_version() {
        let cat = catalog(2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        let store = AttributeStore::open(&path).unwrap();
        store.put(AttributeSet::new("P00", 1).with_pairs([("brand", "old")])).unwrap();
        let mut reg = SchemaRegistry::new();
        reg.version = 2;
        let schemas = SchemaService::new(reg);
        let prompts = PromptSet::default();
        let provider = echo_provider(None);
        let client = client(provider.clone());
        let ex = Extractor { catalog: &cat, schemas: &schemas, client: &client, store: &store, prompts: &prompts };

        let got = ex.get_or_extract("P00").unwrap();
        assert_eq!(got.pairs["brand"], "brand-P00");
        assert_eq!(got.schema_version, 2);
        assert_eq!(provider.calls(), 1);
        ex.get_or_extract("P00").unwrap();
        assert_eq!(provider.calls(), 1);

        let reopened = AttributeStore::open(&path).unwrap();
        assert_eq!(reopened.get("P00").unwrap().pairs["brand"], "brand-P00");
    }

    #[test]
    fn corrupt_store_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        std::fs::write(&path, "{\"product_id\":\"x\",\"schema_version\":1,\"pairs\":{}}\n{bad\n").unwrap();
        let err = AttributeStore::open(&path).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }
}
