//! Deterministic synthetic catalogs with known attribute ground truth, and a
//! provider that answers every prompt kind from that ground truth.
//!
//! Products come in families sharing a base attribute assignment; each
//! variant changes a few values. Raw texts state every attribute value inside
//! marketing filler, sized to roughly 700 approx-tokens, while the attribute
//! rendering is roughly 300.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::catalog::{CategoryPath, ProductRecord};
use crate::provider::{ModelProvider, ProviderError, Request};
use crate::ranking::count_tokens;

/// Share of query attribute values a candidate must match exactly to count
/// as relevant.
pub const RELEVANCE_MATCH_FRACTION: f64 = 0.7;

struct SubDef {
    name: &'static str,
    noun: &'static str,
    attributes: [&'static str; 6],
}

struct SuperDef {
    name: &'static str,
    attributes: [&'static str; 8],
    brands: [&'static str; 6],
    subs: &'static [SubDef],
}

const TAXONOMY: &[SuperDef] = &[
    SuperDef {
        name: "Electronics",
        attributes: ["brand", "model", "color", "connectivity", "power source", "housing finish", "weight", "dimensions"],
        brands: ["Vireo", "Altura", "Kestrel", "Nimbus", "Corvid", "Lumen"],
        subs: &[
            SubDef {
                name: "Headphones",
                noun: "Headphones",
                attributes: ["driver size", "frequency response", "noise cancellation", "battery life", "ear cushion", "microphone type"],
            },
            SubDef {
                name: "Speakers",
                noun: "Bluetooth Speaker",
                attributes: ["output power", "speaker configuration", "water resistance", "playback time", "bass technology", "pairing range"],
            },
            SubDef {
                name: "Chargers",
                noun: "Fast Charger",
                attributes: ["output wattage", "port layout", "cable type", "charging protocol", "input voltage", "safety features"],
            },
        ],
    },
    SuperDef {
        name: "Home & Kitchen",
        attributes: ["brand", "model", "color", "material", "capacity", "dishwasher safe", "dimensions", "weight"],
        brands: ["Hearthly", "Copperline", "Maison Vale", "Brightpan", "Oakhurst", "Tidewell"],
        subs: &[
            SubDef {
                name: "Cookware",
                noun: "Cookware Set",
                attributes: ["handle design", "lid type", "compatible cooktops", "coating", "oven safe temperature", "piece count"],
            },
            SubDef {
                name: "Coffee Makers",
                noun: "Coffee Maker",
                attributes: ["brew strength settings", "carafe type", "filter type", "programmable timer", "water reservoir", "heating plate"],
            },
            SubDef {
                name: "Storage",
                noun: "Food Storage Containers",
                attributes: ["closure type", "stackability", "shape", "lid seal", "compartment count", "food contact rating"],
            },
        ],
    },
    SuperDef {
        name: "Sports & Outdoors",
        attributes: ["brand", "model", "color", "material", "weight", "packed size", "intended use", "season rating"],
        brands: ["Ridgeway", "Summit Fox", "Trailcraft", "Northbound", "Alpenglow", "Basecamp"],
        subs: &[
            SubDef {
                name: "Tents",
                noun: "Camping Tent",
                attributes: ["occupancy rating", "floor area", "pole construction", "rainfly coverage", "door count", "setup style"],
            },
            SubDef {
                name: "Backpacks",
                noun: "Hiking Backpack",
                attributes: ["volume", "frame type", "hip belt", "hydration compatibility", "pocket count", "torso fit"],
            },
        ],
    },
];

const EXTRAS: [&str; 5] = ["country of origin", "package contents", "care instructions", "certification", "included accessories"];

const VOCAB: &[&str] = &[
    "reinforced", "lightweight", "premium", "matte", "brushed", "textured", "dual", "layered", "compact", "extended",
    "adjustable", "removable", "sealed", "vented", "padded", "contoured", "modular", "integrated", "tempered", "woven",
    "recycled", "graphite", "titanium", "aluminum", "silicone", "ceramic", "nylon", "polyester", "bamboo", "walnut",
    "copper", "steel", "glass", "rubber", "fabric", "mesh", "leather", "foam", "carbon", "alloy",
    "frame", "panel", "shell", "core", "base", "edge", "grip", "strap", "seal", "coating",
    "finish", "channel", "chamber", "valve", "spring", "hinge", "mount", "clip", "ring", "dock",
    "high-density", "low-profile", "quick-release", "all-weather", "anti-slip", "heat-resistant", "shock-absorbing", "tool-free", "multi-angle", "double-wall",
    "with", "and", "for", "over", "under", "across", "around", "inside", "plus", "featuring",
    "standard", "advanced", "classic", "pro", "ultra", "everyday", "travel", "studio", "outdoor", "family",
    "slate", "ivory", "crimson", "olive", "midnight", "sand", "charcoal", "teal", "amber", "frost",
];

const UNITS: [&str; 10] = ["mm", "cm", "in", "oz", "lb", "g", "W", "V", "hours", "ft"];

const FILLER: &[&str] = &[
    "Designed for everyday reliability, it fits neatly into busy routines at home or on the go.",
    "Every unit is inspected before shipping so it arrives ready to use straight out of the box.",
    "Our support team is available around the clock to answer questions and help with setup.",
    "Thoughtful details make it easy to clean, easy to store, and easy to live with for years.",
    "Customers often tell us it quickly became the item they reach for first, day after day.",
    "The packaging is made from recycled cardboard and printed with soy-based inks.",
    "It makes a thoughtful gift for birthdays, holidays, housewarmings, and graduations.",
    "We tested it through hundreds of hours of real-world use to make sure it holds up.",
    "A clean, understated look means it blends in with modern and traditional spaces alike.",
    "Simple controls keep things intuitive, so there is no manual to study before getting started.",
    "Backed by our satisfaction promise: if it is not right for you, we will make it right.",
    "Small improvements in this edition came straight from feedback shared by our community.",
    "Whether you are a beginner or an experienced enthusiast, it adapts to the way you work.",
    "Materials were selected to balance durability, comfort, and a pleasant feel in the hand.",
    "Compact proportions save space without giving up the features that matter most.",
    "It pairs well with the rest of our collection, so you can build a set over time.",
    "Regular firmware and design updates keep the lineup current with new standards.",
    "Assembly takes only a few minutes and no special tools are required.",
    "We publish detailed specifications so you can compare options with confidence.",
    "Please review the sizing information carefully before placing your order.",
    "Independent reviewers highlighted its value, consistency, and attention to detail.",
    "The finish resists fingerprints and everyday scuffs, keeping it looking new longer.",
    "Thousands of households already rely on it, and the ratings speak for themselves.",
    "Replacement parts are available separately should you ever need them.",
];

/// Ground truth for one synthetic product.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub category: CategoryPath,
    pub family: usize,
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaTruth {
    pub category: CategoryPath,
    pub attributes: Vec<(String, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub products: BTreeMap<String, TruthEntry>,
    pub schemas: Vec<SchemaTruth>,
}

impl GroundTruth {
    /// Fraction of the query's attributes whose values the candidate matches
    /// exactly.
    pub fn match_fraction(&self, query_id: &str, candidate_id: &str) -> f64 {
        let (Some(q), Some(c)) = (self.products.get(query_id), self.products.get(candidate_id)) else {
            return 0.0;
        };
        if q.attributes.is_empty() {
            return 0.0;
        }
        let hits = q
            .attributes
            .iter()
            .filter(|(a, v)| c.attributes.get(*a) == Some(*v))
            .count();
        hits as f64 / q.attributes.len() as f64
    }

    pub fn is_relevant(&self, query_id: &str, candidate_id: &str) -> bool {
        self.match_fraction(query_id, candidate_id) >= RELEVANCE_MATCH_FRACTION
    }

    pub fn schema(&self, path: &CategoryPath) -> Option<&SchemaTruth> {
        self.schemas.iter().find(|s| &s.category == path)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("truth serializes") + "\n")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub products: usize,
    pub seed: u64,
    /// Products per family on average.
    pub family_size: usize,
    /// Most attribute changes a variant makes relative to its family base.
    pub max_changes: usize,
    pub uncategorized_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            products: 100,
            seed: 7,
            family_size: 12,
            max_changes: 8,
            uncategorized_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCatalog {
    pub records: Vec<ProductRecord>,
    pub truth: GroundTruth,
}

fn fnv(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn phrase(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(6..=13);
    let mut words: Vec<&str> = (0..n).map(|_| *VOCAB.choose(rng).expect("vocab")).collect();
    words[0] = VOCAB[rng.random_range(0..70)];
    let mut s = words.join(" ");
    if rng.random_bool(0.5) {
        let whole = rng.random_range(1..400);
        let frac = rng.random_range(0..10);
        s.push_str(&format!(", {whole}.{frac} {}", UNITS.choose(rng).expect("units")));
    }
    s
}

/// Candidate values for an attribute; stable for a given seed regardless of
/// catalog size.
fn value_pool(seed: u64, path: &CategoryPath, attribute: &str, brands: &[&str]) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv(&format!("{path}/{attribute}")));
    match attribute {
        "brand" => brands.iter().map(|b| b.to_string()).collect(),
        "model" => (0..12)
            .map(|_| {
                let a = (b'A' + rng.random_range(0..26u8)) as char;
                let b = (b'A' + rng.random_range(0..26u8)) as char;
                format!("{a}{b}-{}", rng.random_range(100..1000))
            })
            .collect(),
        _ => (0..6).map(|_| phrase(&mut rng)).collect(),
    }
}

fn title_case(s: &str) -> String {
    s.split(' ')
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(f) => f.to_uppercase().chain(c).collect(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn render_record(id: &str, entry: &TruthEntry, noun: &str, rng: &mut ChaCha8Rng, categorized: bool) -> ProductRecord {
    let a = &entry.attributes;
    let get = |k: &str| a.get(k).cloned().unwrap_or_default();
    let title = format!(
        "{} {} {} | {} | {}",
        get("brand"),
        get("model"),
        noun,
        title_case(&get("color")),
        title_case(a.iter().nth(3).map(|(_, v)| v.as_str()).unwrap_or_default())
    );

    let mut sentences: Vec<String> = a
        .iter()
        .filter(|(k, _)| !matches!(k.as_str(), "brand" | "model"))
        .map(|(k, v)| format!("The {k} is {v}."))
        .collect();
    sentences.shuffle(rng);
    let attr_sentences = sentences.len();

    let bullets: Vec<String> = sentences
        .drain(..attr_sentences.min(5))
        .map(|s| s.trim_end_matches('.').to_string())
        .collect();
    let target = rng.random_range(720..800);
    let mut description = format!("Meet the {} {} from {}.", get("model"), noun.to_lowercase(), get("brand"));
    let mut filler: Vec<&str> = FILLER.to_vec();
    filler.shuffle(rng);
    let mut filler = filler.into_iter().cycle();
    let mut pending = sentences.into_iter();
    let mut so_far = count_tokens(&title) + bullets.iter().map(|b| count_tokens(b)).sum::<usize>() + count_tokens(&description);
    loop {
        let next = pending.next();
        if next.is_none() && so_far >= target {
            break;
        }
        let mut piece = match next {
            Some(s) if rng.random_bool(0.6) => format!("{s} {}", filler.next().expect("cycle")),
            Some(s) => s,
            None => filler.next().expect("cycle").to_string(),
        };
        so_far += count_tokens(&piece);
        piece.insert(0, ' ');
        description.push_str(&piece);
    }

    let record = ProductRecord::new(id, title)
        .with_description(description)
        .with_bullets(bullets);
    if categorized {
        record.with_category(
            &entry.category.super_category,
            entry.category.sub_category.as_deref(),
        )
    } else {
        record
    }
}

/// Generates a catalog and its ground truth.
pub fn generate(config: &SynthConfig) -> SyntheticCatalog {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut schemas = Vec::new();
    let mut leaves: Vec<(CategoryPath, &SuperDef, &SubDef)> = Vec::new();
    for sup in TAXONOMY {
        let sp = CategoryPath::super_only(sup.name);
        schemas.push(SchemaTruth {
            category: sp,
            attributes: sup.attributes.iter().map(|a| (a.to_string(), format!("The product's {a}."))).collect(),
        });
        for sub in sup.subs {
            let path = CategoryPath::new(sup.name, Some(sub.name));
            schemas.push(SchemaTruth {
                category: path.clone(),
                attributes: sub.attributes.iter().map(|a| (a.to_string(), format!("The {a} of the {}.", sub.noun.to_lowercase()))).collect(),
            });
            leaves.push((path, sup, sub));
        }
    }

    let families = config.products.div_ceil(config.family_size.max(1)).max(1);
    let mut bases = Vec::with_capacity(families);
    for f in 0..families {
        let (path, sup, sub) = &leaves[f % leaves.len()];
        let mut attrs = BTreeMap::new();
        for name in sup.attributes.iter().chain(sub.attributes.iter()) {
            let pool = value_pool(config.seed, path, name, &sup.brands);
            attrs.insert(name.to_string(), pool.choose(&mut rng).expect("pool").clone());
        }
        let extra_count = rng.random_range(1..=3);
        let mut extras = EXTRAS.to_vec();
        extras.shuffle(&mut rng);
        for name in extras.into_iter().take(extra_count) {
            let pool = value_pool(config.seed, path, name, &sup.brands);
            attrs.insert(name.to_string(), pool.choose(&mut rng).expect("pool").clone());
        }
        bases.push((path.clone(), *sup, *sub, attrs));
    }

    let mut records = Vec::with_capacity(config.products);
    let mut products = BTreeMap::new();
    for i in 0..config.products {
        let family = rng.random_range(0..families);
        let (path, sup, sub, base) = &bases[family];
        let mut attrs = base.clone();
        let changes = rng.random_range(0..=config.max_changes.min(attrs.len()));
        let mut names: Vec<String> = attrs.keys().cloned().collect();
        names.shuffle(&mut rng);
        for name in names.into_iter().take(changes) {
            let pool = value_pool(config.seed, path, &name, &sup.brands);
            let current = attrs[&name].clone();
            let others: Vec<&String> = pool.iter().filter(|v| **v != current).collect();
            if let Some(v) = others.choose(&mut rng) {
                attrs.insert(name, (*v).clone());
            }
        }
        let id = format!("SYN{i:05}");
        let entry = TruthEntry {
            category: path.clone(),
            family,
            attributes: attrs,
        };
        let categorized = !rng.random_bool(config.uncategorized_fraction.clamp(0.0, 1.0));
        records.push(render_record(&id, &entry, sub.noun, &mut rng, categorized));
        products.insert(id, entry);
    }
    SyntheticCatalog {
        records,
        truth: GroundTruth { products, schemas },
    }
}

fn line_value<'a>(prompt: &'a str, prefix: &str) -> Option<&'a str> {
    prompt.lines().find_map(|l| l.strip_prefix(prefix)).map(str::trim)
}

/// Answers classification, schema, extraction, ranking and judge prompts from
/// ground truth. Extraction drops a small deterministic share of values to
/// mimic imperfect extraction.
#[derive(Debug, Clone)]
pub struct SimulatedProvider {
    truth: Arc<GroundTruth>,
    extraction_drop_rate: f64,
}

impl SimulatedProvider {
    pub fn new(truth: GroundTruth) -> Self {
        SimulatedProvider {
            truth: Arc::new(truth),
            extraction_drop_rate: 0.03,
        }
    }

    pub fn with_extraction_drop_rate(mut self, rate: f64) -> Self {
        self.extraction_drop_rate = rate;
        self
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    fn product(&self, id: Option<&str>) -> Result<(&str, &TruthEntry), ProviderError> {
        let id = id.ok_or_else(|| ProviderError::Rejected("prompt names no product".into()))?;
        self.truth
            .products
            .get_key_value(id)
            .map(|(k, v)| (k.as_str(), v))
            .ok_or_else(|| ProviderError::Rejected(format!("unknown product {id}")))
    }

    fn dropped(&self, id: &str, attribute: &str) -> bool {
        (fnv(&format!("{id}\u{0}{attribute}")) % 10_000) as f64 / 10_000.0 < self.extraction_drop_rate
    }
}

impl ModelProvider for SimulatedProvider {
    fn complete(&self, request: &Request) -> Result<Value, ProviderError> {
        let prompt = request.prompt.as_str();
        match request.schema.name.as_str() {
            "classify_category" => {
                let (_, p) = self.product(line_value(prompt, "Product ID:"))?;
                Ok(json!({"super": p.category.super_category, "sub": p.category.sub_category}))
            }
            "attribute_schema" => {
                let start = prompt
                    .find("category \"")
                    .ok_or_else(|| ProviderError::Rejected("no category in prompt".into()))?;
                let rest = &prompt[start + 10..];
                let name = &rest[..rest.find('"').unwrap_or(rest.len())];
                let path = match name.split_once(crate::catalog::CATEGORY_SEPARATOR) {
                    Some((s, sub)) => CategoryPath::new(s, Some(sub)),
                    None => CategoryPath::super_only(name),
                };
                let attrs: Vec<Value> = self
                    .truth
                    .schema(&path)
                    .map(|s| {
                        s.attributes
                            .iter()
                            .map(|(n, d)| json!({"name": n, "description": d}))
                            .collect()
                    })
                    .unwrap_or_default();
                Ok(json!({ "attributes": attrs }))
            }
            "extract_attributes" => {
                let (id, p) = self.product(line_value(prompt, "Product ID:"))?;
                let pairs: serde_json::Map<String, Value> = p
                    .attributes
                    .iter()
                    .filter(|(a, _)| !self.dropped(id, a))
                    .map(|(a, v)| (a.clone(), Value::String(v.clone())))
                    .collect();
                Ok(Value::Object(pairs))
            }
            "rank_scores" => {
                let (q, _) = self.product(line_value(prompt, "Query product:"))?;
                let scores: Vec<Value> = prompt
                    .lines()
                    .filter_map(|l| l.strip_prefix("Candidate ID:"))
                    .map(str::trim)
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .map(|c| json!({"product_id": c, "score": (100.0 * self.truth.match_fraction(q, c)).round()}))
                    .collect();
                Ok(json!({ "scores": scores }))
            }
            "judge_score" => {
                let (q, _) = self.product(line_value(prompt, "Query product:"))?;
                let (c, _) = self.product(line_value(prompt, "Candidate product:"))?;
                Ok(json!({"score": (100.0 * self.truth.match_fraction(q, c)).round()}))
            }
            other => Err(ProviderError::Rejected(format!("no simulation for {other}"))),
        }
    }
}
