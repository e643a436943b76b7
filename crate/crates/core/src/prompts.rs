//! Versioned prompt templates.
//!
//! Templates are text assets with a `version:` header, a `---` separator and a
//! body containing `{{slot}}` placeholders. The built-in set ships with the
//! crate; a directory of same-named files overrides individual templates.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PromptKind {
    Classify,
    Schema,
    Extract,
    RankGraph,
    RankRaw,
    Judge,
}

impl PromptKind {
    pub const ALL: [PromptKind; 6] = [
        PromptKind::Classify,
        PromptKind::Schema,
        PromptKind::Extract,
        PromptKind::RankGraph,
        PromptKind::RankRaw,
        PromptKind::Judge,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            PromptKind::Classify => "classify.txt",
            PromptKind::Schema => "schema.txt",
            PromptKind::Extract => "extract.txt",
            PromptKind::RankGraph => "rank_graph.txt",
            PromptKind::RankRaw => "rank_raw.txt",
            PromptKind::Judge => "judge.txt",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            PromptKind::Classify => include_str!("../prompts/classify.txt"),
            PromptKind::Schema => include_str!("../prompts/schema.txt"),
            PromptKind::Extract => include_str!("../prompts/extract.txt"),
            PromptKind::RankGraph => include_str!("../prompts/rank_graph.txt"),
            PromptKind::RankRaw => include_str!("../prompts/rank_raw.txt"),
            PromptKind::Judge => include_str!("../prompts/judge.txt"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("template {0}: missing \"version:\" header or \"---\" separator")]
    Header(String),
    #[error("template {template}: no value for slot {{{{{slot}}}}}")]
    MissingSlot { template: String, slot: String },
    #[error("reading template {0}: {1}")]
    Io(String, String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub version: String,
    pub body: String,
}

impl Template {
    pub fn parse(name: &str, source: &str) -> Result<Self, PromptError> {
        let header_err = || PromptError::Header(name.to_string());
        let (head, body) = source.split_once("\n---\n").ok_or_else(header_err)?;
        let version = head
            .lines()
            .find_map(|l| l.strip_prefix("version:"))
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .ok_or_else(header_err)?;
        Ok(Template {
            version: version.to_string(),
            body: body.trim_end_matches('\n').to_string(),
        })
    }

    /// Substitutes every `{{slot}}`. Each slot in the body must be supplied.
    pub fn render(&self, slots: &[(&str, &str)]) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.body.len() + 256);
        let mut rest = self.body.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let Some(end) = after.find("}}") else {
                out.push_str(&rest[start..]);
                rest = "";
                break;
            };
            let slot = &after[..end];
            let value = slots
                .iter()
                .find(|(k, _)| *k == slot)
                .map(|(_, v)| *v)
                .ok_or_else(|| PromptError::MissingSlot {
                    template: self.version.clone(),
                    slot: slot.to_string(),
                })?;
            out.push_str(value);
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

/// The full set of templates used by the pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    templates: BTreeMap<PromptKind, Template>,
}

impl Default for PromptSet {
    fn default() -> Self {
        let templates = PromptKind::ALL
            .iter()
            .map(|&k| {
                let t = Template::parse(k.file_name(), k.builtin())
                    .expect("built-in prompt templates are well-formed");
                (k, t)
            })
            .collect();
        PromptSet { templates }
    }
}

impl PromptSet {
    /// Built-in templates, overridden by any same-named files in `dir`.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut set = PromptSet::default();
        for kind in PromptKind::ALL {
            let path = dir.join(kind.file_name());
            if path.exists() {
                let src = std::fs::read_to_string(&path)
                    .map_err(|e| PromptError::Io(path.display().to_string(), e.to_string()))?;
                set.templates.insert(kind, Template::parse(kind.file_name(), &src)?);
            }
        }
        Ok(set)
    }

    pub fn get(&self, kind: PromptKind) -> &Template {
        &self.templates[&kind]
    }

    pub fn version(&self, kind: PromptKind) -> &str {
        &self.get(kind).version
    }

    pub fn render(&self, kind: PromptKind, slots: &[(&str, &str)]) -> Result<String, PromptError> {
        self.get(kind).render(slots)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_versions() {
        let set = PromptSet::default();
        assert_eq!(set.version(PromptKind::Classify), "classify/v1");
        assert_eq!(set.version(PromptKind::Schema), "schema/v1");
        assert_eq!(set.version(PromptKind::Extract), "extract/v1");
        assert_eq!(set.version(PromptKind::RankGraph), "rank-graph/v1");
        assert_eq!(set.version(PromptKind::RankRaw), "rank-raw/v1");
        assert_eq!(set.version(PromptKind::Judge), "judge/v1");
    }

    #[test]
    fn render_fills_slots() {
        let t = Template::parse("t", "version: t/1\n---\nHello {{name}}, {{name}}! {{x}}\n").unwrap();
        assert_eq!(t.render(&[("name", "Ann"), ("x", "{{y}}")]).unwrap(), "Hello Ann, Ann! {{y}}");
        assert!(matches!(t.render(&[("name", "a")]), Err(PromptError::MissingSlot { .. })));
    }

    #[test]
    fn header_required() {
        assert!(Template::parse("t", "no header").is_err());
        assert!(Template::parse("t", "version:\n---\nbody").is_err());
    }

    #[test]
    fn overrides_from_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("judge.txt"), "version: judge/v9\n---\n{{query}}").unwrap();
        let set = PromptSet::with_overrides(dir.path()).unwrap();
        assert_eq!(set.version(PromptKind::Judge), "judge/v9");
        assert_eq!(set.version(PromptKind::Extract), "extract/v1");
    }
}
