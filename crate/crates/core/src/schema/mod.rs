//! Hierarchical attribute schemas.
//!
//! A super-category schema lists broad attributes; a sub-category schema adds
//! specific ones and inherits the rest. Schemas are generated through the
//! model provider, standardized by alias merging, and kept in a versioned
//! [`SchemaRegistry`].

mod standardize;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::catalog::{product_text, CategoryPath, ProductRecord};
use crate::prompts::{PromptKind, PromptSet};
use crate::provider::{GenerateError, ResponseSchema, StructuredClient};
use crate::text::normalize_name;

pub use standardize::{
    load_alias_overrides, save_suggestions, standardize, token_jaccard, MergeSuggestion,
    Standardized,
};

/// Soft target for super-level attribute counts.
pub const SUPER_TARGET: (usize, usize) = (8, 10);
/// Soft target for additional sub-level attribute counts.
pub const SUB_TARGET: (usize, usize) = (6, 8);

/// Super-category assigned when classification fails.
pub const UNCLASSIFIED: &str = "unclassified";

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("classification of {product_id} failed: {source}")]
    Classification {
        product_id: String,
        #[source]
        source: GenerateError,
    },
    #[error("classification of {0} returned an empty super-category")]
    EmptyClassification(String),
    #[error("schema generation for {path} failed: {source}")]
    Generation {
        path: CategoryPath,
        #[source]
        source: GenerateError,
    },
    #[error("category path has an empty super-category")]
    EmptySuper,
    #[error("schema {path} violates an invariant: {reason}")]
    Invalid { path: CategoryPath, reason: String },
    #[error(transparent)]
    Prompt(#[from] crate::prompts::PromptError),
    #[error("registry file {path}: {reason}")]
    File { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeLevel {
    Super,
    Sub,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDef {
    pub canonical_name: String,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub aliases: BTreeSet<String>,
    pub level: AttributeLevel,
    #[serde(default)]
    pub description: String,
}

impl AttributeDef {
    pub fn new(name: &str, level: AttributeLevel, description: &str) -> Self {
        AttributeDef {
            canonical_name: normalize_name(name),
            aliases: BTreeSet::new(),
            level,
            description: description.trim().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemaOrigin {
    Generated,
    Curated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySchema {
    pub category_path: CategoryPath,
    pub attributes: Vec<AttributeDef>,
    pub origin: SchemaOrigin,
}

impl CategorySchema {
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.canonical_name.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names().any(|n| n == name)
    }
}

/// Result of resolving a category path against the registry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedSchema {
    pub defs: Vec<AttributeDef>,
    pub needs_generation: bool,
}

impl ResolvedSchema {
    pub fn names(&self) -> Vec<String> {
        self.defs.iter().map(|d| d.canonical_name.clone()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SchemaRegistry {
    pub version: u64,
    schemas: BTreeMap<CategoryPath, CategorySchema>,
    alias_table: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct RegistryFile {
    version: u64,
    schemas: Vec<CategorySchema>,
    alias_table: BTreeMap<String, String>,
}

impl SchemaRegistry {
    pub fn new() -> Self {
        SchemaRegistry {
            version: 1,
            ..Default::default()
        }
    }

    pub fn schemas(&self) -> impl Iterator<Item = &CategorySchema> {
        self.schemas.values()
    }

    pub fn schema(&self, path: &CategoryPath) -> Option<&CategorySchema> {
        self.schemas.get(path)
    }

    pub fn len(&self) -> usize {
        self.schemas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schemas.is_empty()
    }

    pub fn alias_table(&self) -> &BTreeMap<String, String> {
        &self.alias_table
    }

    /// Normalizes a name and maps it through the alias table.
    pub fn canonicalize(&self, name: &str) -> String {
        let n = normalize_name(name);
        self.alias_table.get(&n).cloned().unwrap_or(n)
    }

    pub fn known_categories(&self) -> impl Iterator<Item = &CategoryPath> {
        self.schemas.keys()
    }

    pub fn super_categories(&self) -> BTreeSet<&str> {
        self.schemas.keys().map(|p| p.super_category.as_str()).collect()
    }

    /// Looks a category up ignoring case and whitespace differences, returning
    /// the registered spelling.
    pub fn find_category(&self, super_category: &str, sub: Option<&str>) -> Option<&CategoryPath> {
        let key = |s: &str| normalize_name(s);
        let want_super = key(super_category);
        let want_sub = sub.map(key);
        self.schemas.keys().find(|p| {
            key(&p.super_category) == want_super && p.sub_category.as_deref().map(key) == want_sub
        })
    }

    /// Adds or replaces a schema after checking its invariants.
    pub fn register(&mut self, schema: CategorySchema) -> Result<(), SchemaError> {
        self.check(&schema)?;
        self.schemas.insert(schema.category_path.clone(), schema);
        Ok(())
    }

    fn check(&self, schema: &CategorySchema) -> Result<(), SchemaError> {
        let path = &schema.category_path;
        let invalid = |reason: String| SchemaError::Invalid {
            path: path.clone(),
            reason,
        };
        if path.super_category.trim().is_empty() {
            return Err(SchemaError::EmptySuper);
        }
        let mut seen = BTreeSet::new();
        for def in &schema.attributes {
            if def.canonical_name.is_empty() || def.canonical_name != normalize_name(&def.canonical_name) {
                return Err(invalid(format!("name {:?} is not normalized", def.canonical_name)));
            }
            if def.aliases.contains(&def.canonical_name) {
                return Err(invalid(format!("{} lists itself as an alias", def.canonical_name)));
            }
            if !seen.insert(def.canonical_name.as_str()) {
                return Err(invalid(format!("duplicate attribute {}", def.canonical_name)));
            }
        }
        if !path.is_super() {
            if let Some(parent) = self.schemas.get(&path.parent()) {
                if let Some(dup) = schema.names().find(|n| parent.contains(n)) {
                    return Err(invalid(format!("re-declares inherited attribute {dup}")));
                }
            }
        }
        Ok(())
    }

    /// Super-level attributes followed by sub-level ones. A missing sub schema
    /// (or a missing super schema) sets `needs_generation`.
    pub fn resolve_schema(&self, path: &CategoryPath) -> ResolvedSchema {
        let Some(parent) = self.schemas.get(&path.parent()) else {
            return ResolvedSchema {
                defs: Vec::new(),
                needs_generation: true,
            };
        };
        let mut defs = parent.attributes.clone();
        let mut needs_generation = false;
        if !path.is_super() {
            match self.schemas.get(path) {
                Some(sub) => defs.extend(sub.attributes.iter().cloned()),
                None => needs_generation = true,
            }
        }
        ResolvedSchema {
            defs,
            needs_generation,
        }
    }

    pub fn load(path: &Path) -> Result<Self, SchemaError> {
        let file_err = |reason: String| SchemaError::File {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        let file: RegistryFile = serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))?;
        let mut reg = SchemaRegistry {
            version: file.version,
            schemas: BTreeMap::new(),
            alias_table: file.alias_table,
        };
        // Supers first so sub-level inheritance checks see their parents.
        let mut schemas = file.schemas;
        schemas.sort_by(|a, b| {
            (a.category_path.sub_category.is_some(), &a.category_path)
                .cmp(&(b.category_path.sub_category.is_some(), &b.category_path))
        });
        for s in schemas {
            reg.register(s)?;
        }
        Ok(reg)
    }

    pub fn save(&self, path: &Path) -> Result<(), SchemaError> {
        let file = RegistryFile {
            version: self.version,
            schemas: self.schemas.values().cloned().collect(),
            alias_table: self.alias_table.clone(),
        };
        let text = serde_json::to_string_pretty(&file).expect("registry serializes");
        std::fs::write(path, text + "\n").map_err(|e| SchemaError::File {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub(crate) fn set_contents(
        &mut self,
        schemas: BTreeMap<CategoryPath, CategorySchema>,
        alias_table: BTreeMap<String, String>,
    ) {
        self.schemas = schemas;
        self.alias_table = alias_table;
    }

    pub(crate) fn schema_map(&self) -> &BTreeMap<CategoryPath, CategorySchema> {
        &self.schemas
    }
}

/// Outcome of category classification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classification {
    pub path: CategoryPath,
    /// True when the predicted category is not in the registry.
    pub new: bool,
}

pub fn classification_schema() -> ResponseSchema {
    ResponseSchema::new(
        "classify_category",
        json!({
            "type": "object",
            "required": ["super"],
            "properties": {
                "super": {"type": "string"},
                "sub": {"type": ["string", "null"]}
            }
        }),
    )
}

/// Predicts the category of a record, snapping to registered spellings when
/// the prediction matches a known category.
pub fn classify_category(
    record: &ProductRecord,
    client: &StructuredClient,
    registry: &SchemaRegistry,
    prompts: &PromptSet,
) -> Result<Classification, SchemaError> {
    let known: BTreeSet<CategoryPath> = registry.known_categories().cloned().collect();
    classify_with_known(record, client, &known, prompts)
}

/// Like [`classify_category`], with the known categories given directly
/// (for example the categories already present in a catalog).
pub fn classify_with_known(
    record: &ProductRecord,
    client: &StructuredClient,
    known: &BTreeSet<CategoryPath>,
    prompts: &PromptSet,
) -> Result<Classification, SchemaError> {
    let listed: Vec<String> = known
        .iter()
        .filter(|p| !p.is_super())
        .map(ToString::to_string)
        .collect();
    let listed = if listed.is_empty() {
        "(none registered yet)".to_string()
    } else {
        listed.join("\n")
    };
    let text = product_text(record);
    let prompt = prompts.render(
        PromptKind::Classify,
        &[
            ("known_categories", &listed),
            ("product_id", &record.product_id),
            ("product_text", &text),
        ],
    )?;
    let out = client
        .generate_structured(&prompt, &classification_schema())
        .map_err(|source| SchemaError::Classification {
            product_id: record.product_id.clone(),
            source,
        })?;
    let sup = out.payload["super"].as_str().unwrap_or("").trim().to_string();
    if sup.is_empty() {
        return Err(SchemaError::EmptyClassification(record.product_id.clone()));
    }
    let sub = out.payload["sub"]
        .as_str()
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string);

    let key = |s: &str| normalize_name(s);
    let found = known.iter().find(|p| {
        key(&p.super_category) == key(&sup) && p.sub_category.as_deref().map(key) == sub.as_deref().map(key)
    });
    if let Some(found) = found {
        return Ok(Classification {
            path: found.clone(),
            new: false,
        });
    }
    // Snap the super-category even when the sub-category is new.
    let sup = known
        .iter()
        .map(|p| p.super_category.as_str())
        .find(|s| key(s) == key(&sup))
        .map(str::to_string)
        .unwrap_or(sup);
    Ok(Classification {
        path: CategoryPath::new(&sup, sub.as_deref()),
        new: true,
    })
}

pub fn schema_generation_schema() -> ResponseSchema {
    ResponseSchema::new(
        "attribute_schema",
        json!({
            "type": "object",
            "required": ["attributes"],
            "properties": {
                "attributes": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["name", "description"],
                        "properties": {
                            "name": {"type": "string"},
                            "description": {"type": "string"}
                        }
                    }
                }
            }
        }),
    )
}

/// Asks the provider for a category's attribute list. Names are normalized
/// and canonicalized; duplicates and attributes inherited from the
/// super-category are dropped.
pub fn generate_schema(
    path: &CategoryPath,
    client: &StructuredClient,
    registry: &SchemaRegistry,
    prompts: &PromptSet,
) -> Result<CategorySchema, SchemaError> {
    if path.super_category.trim().is_empty() {
        return Err(SchemaError::EmptySuper);
    }
    let (level, target) = if path.is_super() {
        (AttributeLevel::Super, SUPER_TARGET)
    } else {
        (AttributeLevel::Sub, SUB_TARGET)
    };
    let inherited: BTreeSet<String> = if path.is_super() {
        BTreeSet::new()
    } else {
        registry
            .schema(&path.parent())
            .map(|s| s.names().map(str::to_string).collect())
            .unwrap_or_default()
    };
    let inherited_line = if inherited.is_empty() {
        String::new()
    } else {
        format!(
            "Products already inherit these attributes, do not repeat them: {}.",
            inherited.iter().cloned().collect::<Vec<_>>().join(", ")
        )
    };
    let category = path.to_string();
    let level_name = match level {
        AttributeLevel::Super => "super-category",
        AttributeLevel::Sub => "sub-category",
    };
    let target_text = format!("{}-{}", target.0, target.1);
    let prompt = prompts.render(
        PromptKind::Schema,
        &[
            ("category", &category),
            ("level", level_name),
            ("inherited", &inherited_line),
            ("target", &target_text),
        ],
    )?;
    let out = client
        .generate_structured(&prompt, &schema_generation_schema())
        .map_err(|source| SchemaError::Generation {
            path: path.clone(),
            source,
        })?;

    let mut seen = BTreeSet::new();
    let mut attributes = Vec::new();
    for item in out.payload["attributes"].as_array().into_iter().flatten() {
        let raw = item["name"].as_str().unwrap_or_default();
        let name = registry.canonicalize(raw);
        if name.is_empty() || inherited.contains(&name) || !seen.insert(name.clone()) {
            log::debug!("{path}: dropping attribute {raw:?}");
            continue;
        }
        let description = item["description"].as_str().unwrap_or_default();
        attributes.push(AttributeDef::new(&name, level, description));
    }
    if attributes.len() < target.0 || attributes.len() > target.1 {
        log::info!(
            "{path}: generated {} attributes, outside the {}-{} target",
            attributes.len(),
            target.0,
            target.1
        );
    }
    Ok(CategorySchema {
        category_path: path.clone(),
        attributes,
        origin: SchemaOrigin::Generated,
    })
}

type Inflight = Arc<OnceLock<Result<(), String>>>;

/// Shared registry with serialized mutation and single-flight on-the-fly
/// schema generation for unseen categories.
#[derive(Debug, Default)]
pub struct SchemaService {
    registry: RwLock<Arc<SchemaRegistry>>,
    inflight: Mutex<HashMap<CategoryPath, Inflight>>,
}

impl SchemaService {
    pub fn new(registry: SchemaRegistry) -> Self {
        SchemaService {
            registry: RwLock::new(Arc::new(registry)),
            inflight: Mutex::new(HashMap::new()),
        }
    }

    /// Current registry snapshot.
    pub fn snapshot(&self) -> Arc<SchemaRegistry> {
        self.registry.read().unwrap().clone()
    }

    pub fn version(&self) -> u64 {
        self.snapshot().version
    }

    /// Applies a mutation under the writer lock.
    pub fn update<F, T>(&self, f: F) -> T
    where
        F: FnOnce(&mut SchemaRegistry) -> T,
    {
        let mut guard = self.registry.write().unwrap();
        let mut next = (**guard).clone();
        let out = f(&mut next);
        *guard = Arc::new(next);
        out
    }

    /// Resolves a path, generating missing super/sub schemas first. Concurrent
    /// callers asking for the same unseen path share one generation.
    pub fn ensure_schema(
        &self,
        path: &CategoryPath,
        client: &StructuredClient,
        prompts: &PromptSet,
    ) -> Result<ResolvedSchema, SchemaError> {
        let resolved = self.snapshot().resolve_schema(path);
        if !resolved.needs_generation {
            return Ok(resolved);
        }
        if self.snapshot().schema(&path.parent()).is_none() {
            self.generate_once(&path.parent(), client, prompts)?;
        }
        if !path.is_super() && self.snapshot().schema(path).is_none() {
            self.generate_once(path, client, prompts)?;
        }
        Ok(self.snapshot().resolve_schema(path))
    }

    fn generate_once(
        &self,
        path: &CategoryPath,
        client: &StructuredClient,
        prompts: &PromptSet,
    ) -> Result<(), SchemaError> {
        let cell = self
            .inflight
            .lock()
            .unwrap()
            .entry(path.clone())
            .or_default()
            .clone();
        let result = cell.get_or_init(|| {
            if self.snapshot().schema(path).is_some() {
                return Ok(());
            }
            let schema = generate_schema(path, client, &self.snapshot(), prompts)
                .map_err(|e| e.to_string())?;
            log::info!("generated schema for unseen category {path}");
            // Adding a schema for a new path leaves existing extractions valid,
            // so the registry version is not bumped here.
            self.update(|reg| reg.register(schema)).map_err(|e| e.to_string())
        });
        match result {
            Ok(()) => Ok(()),
            Err(reason) => {
                self.inflight.lock().unwrap().remove(path);
                Err(SchemaError::Invalid {
                    path: path.clone(),
                    reason: reason.clone(),
                })
            }
        }
    }
}
