//! Product catalog ingestion, category filtering and the concatenated text view.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Separator used by the TSV adapter for the bullets column.
pub const BULLET_SEPARATOR: char = '‖';
/// Separator between super- and sub-category in the TSV `category` column.
pub const CATEGORY_SEPARATOR: &str = " > ";

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("failed to read catalog {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed tsv header: {0}")]
    Header(String),
}

/// One catalog entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductRecord {
    pub product_id: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub bullets: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub super_category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_category: Option<String>,
    #[serde(default = "default_locale")]
    pub locale: String,
}

fn default_locale() -> String {
    "US".to_string()
}

impl ProductRecord {
    pub fn new(product_id: impl Into<String>, title: impl Into<String>) -> Self {
        ProductRecord {
            product_id: product_id.into(),
            title: title.into(),
            description: String::new(),
            bullets: Vec::new(),
            super_category: None,
            sub_category: None,
            locale: default_locale(),
        }
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    pub fn with_bullets<I, S>(mut self, bullets: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.bullets = bullets.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_category(mut self, super_category: &str, sub_category: Option<&str>) -> Self {
        self.super_category = Some(super_category.to_string());
        self.sub_category = sub_category.map(str::to_string);
        self
    }

    /// The record's category path, if it carries a super-category.
    pub fn category_path(&self) -> Option<CategoryPath> {
        let sup = self.super_category.as_deref()?.trim();
        if sup.is_empty() {
            return None;
        }
        let sub = self
            .sub_category
            .as_deref()
            .map(str::trim)
            .filter(|s| !s.is_empty());
        Some(CategoryPath::new(sup, sub))
    }

    fn is_valid(&self) -> bool {
        !self.product_id.trim().is_empty() && !self.title.trim().is_empty()
    }
}

/// A (super, optional sub) category pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CategoryPath {
    pub super_category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_category: Option<String>,
}

impl CategoryPath {
    pub fn new(super_category: &str, sub_category: Option<&str>) -> Self {
        CategoryPath {
            super_category: super_category.to_string(),
            sub_category: sub_category.map(str::to_string),
        }
    }

    pub fn super_only(super_category: &str) -> Self {
        Self::new(super_category, None)
    }

    /// The super-level path this path inherits from.
    pub fn parent(&self) -> CategoryPath {
        CategoryPath::super_only(&self.super_category)
    }

    pub fn is_super(&self) -> bool {
        self.sub_category.is_none()
    }
}

impl fmt::Display for CategoryPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.sub_category {
            Some(sub) => write!(f, "{}{}{}", self.super_category, CATEGORY_SEPARATOR, sub),
            None => f.write_str(&self.super_category),
        }
    }
}

/// Deterministic concatenation of title, description and bullets, one per
/// line, skipping empty fields.
pub fn product_text(record: &ProductRecord) -> String {
    let mut parts: Vec<&str> = Vec::with_capacity(2 + record.bullets.len());
    parts.push(record.title.as_str());
    if !record.description.is_empty() {
        parts.push(record.description.as_str());
    }
    parts.extend(record.bullets.iter().map(String::as_str).filter(|b| !b.is_empty()));
    parts.join("\n")
}

/// Immutable collection of products with a category index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProductStore {
    records: BTreeMap<String, ProductRecord>,
    category_index: BTreeMap<CategoryPath, BTreeSet<String>>,
}

impl ProductStore {
    /// Builds a store from records; later duplicates of a product id are dropped.
    /// Returns the store and the number of dropped duplicates.
    pub fn from_records<I: IntoIterator<Item = ProductRecord>>(records: I) -> (Self, usize) {
        let mut map = BTreeMap::new();
        let mut dropped = 0;
        for r in records {
            if map.contains_key(&r.product_id) {
                dropped += 1;
                continue;
            }
            map.insert(r.product_id.clone(), r);
        }
        let mut store = ProductStore {
            records: map,
            category_index: BTreeMap::new(),
        };
        store.rebuild_index();
        (store, dropped)
    }

    fn rebuild_index(&mut self) {
        self.category_index = Self::index_of(&self.records);
    }

    fn index_of(
        records: &BTreeMap<String, ProductRecord>,
    ) -> BTreeMap<CategoryPath, BTreeSet<String>> {
        let mut index: BTreeMap<CategoryPath, BTreeSet<String>> = BTreeMap::new();
        for r in records.values() {
            if let Some(path) = r.category_path() {
                index.entry(path).or_default().insert(r.product_id.clone());
            }
        }
        index
    }

    /// True when the category index matches a fresh rebuild.
    pub fn index_is_consistent(&self) -> bool {
        self.category_index == Self::index_of(&self.records)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, product_id: &str) -> Option<&ProductRecord> {
        self.records.get(product_id)
    }

    pub fn contains(&self, product_id: &str) -> bool {
        self.records.contains_key(product_id)
    }

    /// Records in ascending product id order.
    pub fn iter(&self) -> impl Iterator<Item = &ProductRecord> {
        self.records.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    pub fn category_index(&self) -> &BTreeMap<CategoryPath, BTreeSet<String>> {
        &self.category_index
    }

    /// Products lacking a super-category; these need classification.
    pub fn uncategorized(&self) -> Vec<&ProductRecord> {
        self.records
            .values()
            .filter(|r| r.category_path().is_none())
            .collect()
    }

    /// Returns a copy with category labels replaced for the given ids.
    pub fn with_categories(&self, labels: &BTreeMap<String, CategoryPath>) -> ProductStore {
        let mut records = self.records.clone();
        for (id, path) in labels {
            if let Some(r) = records.get_mut(id) {
                r.super_category = Some(path.super_category.clone());
                r.sub_category = path.sub_category.clone();
            }
        }
        let mut store = ProductStore {
            records,
            category_index: BTreeMap::new(),
        };
        store.rebuild_index();
        store
    }

    /// Writes the store as JSON lines in product id order.
    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for r in self.records.values() {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CatalogFormat {
    Jsonl,
    Tsv,
}

impl CatalogFormat {
    /// Guesses the format from a file extension, defaulting to JSON lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("tab") => CatalogFormat::Tsv,
            _ => CatalogFormat::Jsonl,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub loaded: usize,
    pub rejected_rows: usize,
    pub duplicates_dropped: usize,
}

/// Loads a catalog file. Invalid rows are counted in the report, not fatal.
pub fn load_catalog(
    path: &Path,
    format: CatalogFormat,
) -> Result<(ProductStore, IngestReport), CatalogError> {
    let io_err = |source| CatalogError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let (rows, rejected) = match format {
        CatalogFormat::Jsonl => read_jsonl(BufReader::new(file)).map_err(io_err)?,
        CatalogFormat::Tsv => read_tsv(file)?,
    };
    let (store, duplicates_dropped) = ProductStore::from_records(rows);
    let report = IngestReport {
        loaded: store.len(),
        rejected_rows: rejected,
        duplicates_dropped,
    };
    Ok((store, report))
}

fn read_jsonl<R: BufRead>(reader: R) -> std::io::Result<(Vec<ProductRecord>, usize)> {
    let mut rows = Vec::new();
    let mut rejected = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ProductRecord>(&line) {
            Ok(r) if r.is_valid() => rows.push(r),
            Ok(r) => {
                log::debug!("line {}: rejecting {:?}: empty id or title", lineno + 1, r.product_id);
                rejected += 1;
            }
            Err(e) => {
                log::debug!("line {}: rejecting row: {e}", lineno + 1);
                rejected += 1;
            }
        }
    }
    Ok((rows, rejected))
}

fn read_tsv(file: File) -> Result<(Vec<ProductRecord>, usize), CatalogError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| CatalogError::Header(e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let id_col = col("product_id").ok_or_else(|| CatalogError::Header("missing product_id".into()))?;
    let title_col = col("title").ok_or_else(|| CatalogError::Header("missing title".into()))?;
    let desc_col = col("description");
    let bullets_col = col("bullets");
    let category_col = col("category");
    let locale_col = col("locale");

    let mut rows = Vec::new();
    let mut rejected = 0;
    for row in reader.records() {
        let row = match row {
            Ok(row) => row,
            Err(e) => {
                log::debug!("rejecting tsv row: {e}");
                rejected += 1;
                continue;
            }
        };
        let field = |c: Option<usize>| c.and_then(|c| row.get(c)).unwrap_or("").trim().to_string();
        let mut record = ProductRecord::new(field(Some(id_col)), field(Some(title_col)));
        record.description = field(desc_col);
        record.bullets = field(bullets_col)
            .split(BULLET_SEPARATOR)
            .map(str::trim)
            .filter(|b| !b.is_empty())
            .map(str::to_string)
            .collect();
        let category = field(category_col);
        if !category.is_empty() {
            let mut parts = category.splitn(2, CATEGORY_SEPARATOR.trim()).map(str::trim);
            record.super_category = parts.next().filter(|s| !s.is_empty()).map(str::to_string);
            record.sub_category = parts.next().filter(|s| !s.is_empty()).map(str::to_string);
        }
        let locale = field(locale_col);
        if !locale.is_empty() {
            record.locale = locale;
        }
        if record.is_valid() {
            rows.push(record);
        } else {
            rejected += 1;
        }
    }
    Ok((rows, rejected))
}

/// Category exclusion rules applied after ingest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterPolicy {
    #[serde(default)]
    pub excluded_category_names: BTreeSet<String>,
    #[serde(default = "default_min_category_size")]
    pub min_category_size: usize,
}

fn default_min_category_size() -> usize {
    500
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            excluded_category_names: BTreeSet::new(),
            min_category_size: default_min_category_size(),
        }
    }
}

impl FilterPolicy {
    /// A policy that keeps everything.
    pub fn permissive() -> Self {
        FilterPolicy {
            excluded_category_names: BTreeSet::new(),
            min_category_size: 0,
        }
    }

    fn is_excluded_name(&self, name: &str) -> bool {
        self.excluded_category_names
            .iter()
            .any(|e| e.trim().eq_ignore_ascii_case(name.trim()))
    }
}

/// Drops products in excluded or undersized categories. Products without a
/// category are kept so they can be classified later.
pub fn filter_categories(store: &ProductStore, policy: &FilterPolicy) -> ProductStore {
    let kept = store.iter().filter(|r| {
        let Some(path) = r.category_path() else {
            return true;
        };
        if policy.is_excluded_name(&path.super_category)
            || path.sub_category.as_deref().is_some_and(|s| policy.is_excluded_name(s))
        {
            return false;
        }
        let size = store.category_index.get(&path).map_or(0, BTreeSet::len);
        size >= policy.min_category_size
    });
    ProductStore::from_records(kept.cloned()).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str, suffix: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_three_unique_rows() {
        let f = write_tmp(
            concat!(
                r#"{"product_id":"P1","title":"One","locale":"US"}"#, "\n",
                r#"{"product_id":"P2","title":"Two","description":"d","bullets":["a"],"locale":"US"}"#, "\n",
                r#"{"product_id":"P3","title":"Three","super_category":"Home","locale":"US"}"#, "\n",
            ),
            ".jsonl",
        );
        let (store, report) = load_catalog(f.path(), CatalogFormat::Jsonl).unwrap();
        assert_eq!(store.len(), 3);
        assert_eq!(report, IngestReport { loaded: 3, rejected_rows: 0, duplicates_dropped: 0 });
    }

    #[test]
    fn duplicate_ids_keep_first() {
        let f = write_tmp(
            concat!(
                r#"{"product_id":"P1","title":"first"}"#, "\n",
                r#"{"product_id":"P1","title":"second"}"#, "\n",
            ),
            ".jsonl",
        );
        let (store, report) = load_catalog(f.path(), CatalogFormat::Jsonl).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(report.duplicates_dropped, 1);
        assert_eq!(store.get("P1").unwrap().title, "first");
    }

    #[test]
    fn empty_title_rejected() {
        let f = write_tmp(
            concat!(
                r#"{"product_id":"P1","title":""}"#, "\n",
                r#"{"product_id":"P2","title":"ok"}"#, "\n",
                "not json\n",
                r#"{"title":"no id"}"#, "\n",
            ),
            ".jsonl",
        );
        let (store, report) = load_catalog(f.path(), CatalogFormat::Jsonl).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(report.rejected_rows, 3);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_catalog(Path::new("/nonexistent/catalog.jsonl"), CatalogFormat::Jsonl)
            .unwrap_err();
        assert!(matches!(err, CatalogError::Io { .. }));
    }

    #[test]
    fn tsv_adapter() {
        let f = write_tmp(
            "product_id\ttitle\tdescription\tbullets\tcategory\n\
             P1\tPhone\tA phone\tfast‖small\tElectronics > Smartphones\n\
             P2\t\tno title\t\t\n\
             P3\tCable\t\t\tElectronics\n",
            ".tsv",
        );
        assert_eq!(CatalogFormat::from_path(f.path()), CatalogFormat::Tsv);
        let (store, report) = load_catalog(f.path(), CatalogFormat::Tsv).unwrap();
        assert_eq!(report.loaded, 2);
        assert_eq!(report.rejected_rows, 1);
        let p1 = store.get("P1").unwrap();
        assert_eq!(p1.bullets, vec!["fast", "small"]);
        assert_eq!(
            p1.category_path(),
            Some(CategoryPath::new("Electronics", Some("Smartphones")))
        );
        assert_eq!(
            store.get("P3").unwrap().category_path(),
            Some(CategoryPath::super_only("Electronics"))
        );
    }

    fn rec(id: &str, sub: Option<&str>) -> ProductRecord {
        let r = ProductRecord::new(id, format!("title {id}"));
        match sub {
            Some(s) => r.with_category("Super", Some(s)),
            None => r,
        }
    }

    #[test]
    fn filter_removes_small_categories() {
        let (store, _) = ProductStore::from_records(vec![
            rec("1", Some("A")),
            rec("2", Some("B")),
            rec("3", Some("B")),
            rec("4", None),
        ]);
        let policy = FilterPolicy { min_category_size: 2, ..FilterPolicy::permissive() };
        let out = filter_categories(&store, &policy);
        let ids: Vec<_> = out.ids().collect();
        assert_eq!(ids, vec!["2", "3", "4"]);
    }

    #[test]
    fn filter_excludes_named_categories() {
        let mut records: Vec<_> = (0..4).map(|i| rec(&format!("b{i}"), Some("Books"))).collect();
        records.push(rec("x", Some("Toys")));
        let (store, _) = ProductStore::from_records(records);
        let mut policy = FilterPolicy::permissive();
        policy.excluded_category_names.insert("Books".into());
        let out = filter_categories(&store, &policy);
        assert_eq!(out.len(), 1);
        assert!(out.contains("x"));
    }

    #[test]
    fn permissive_filter_is_identity() {
        let (store, _) = ProductStore::from_records(vec![rec("1", Some("A")), rec("2", None)]);
        assert_eq!(filter_categories(&store, &FilterPolicy::permissive()), store);
    }

    #[test]
    fn product_text_concatenation() {
        let r = ProductRecord::new("p", "A").with_description("B").with_bullets(["C"]);
        assert_eq!(product_text(&r), "A\nB\nC");
        assert_eq!(product_text(&ProductRecord::new("p", "A")), "A");
        let r = ProductRecord::new("p", "A").with_bullets(["x", "y"]);
        assert_eq!(product_text(&r), "A\nx\ny");
    }

    #[test]
    fn with_categories_updates_index() {
        let (store, _) = ProductStore::from_records(vec![rec("1", None)]);
        assert_eq!(store.uncategorized().len(), 1);
        let mut labels = BTreeMap::new();
        labels.insert("1".to_string(), CategoryPath::new("Home", Some("Vacuums")));
        let out = store.with_categories(&labels);
        assert!(out.uncategorized().is_empty());
        assert!(out.index_is_consistent());
        assert_eq!(out.category_index().len(), 1);
    }
}
