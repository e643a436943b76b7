use std::collections::{BTreeMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{fingerprint, ModelProvider, ProviderError, Request, ResponseSchema};

/// One recorded exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub fingerprint: String,
    pub payload: Value,
}

/// An ordered collection of exchanges, stored as JSON lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn from_entries<I: IntoIterator<Item = TranscriptEntry>>(entries: I) -> Self {
        Transcript {
            entries: entries.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Merges another transcript into this one; existing fingerprints win.
    pub fn merge(&mut self, other: Transcript) {
        let mut seen: std::collections::BTreeSet<String> =
            self.entries.iter().map(|e| e.fingerprint.clone()).collect();
        for e in other.entries {
            if seen.insert(e.fingerprint.clone()) {
                self.entries.push(e);
            }
        }
        self.entries.sort_by(|a, b| a.fingerprint.cmp(&b.fingerprint));
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}:{}: {e}", path.display(), i + 1),
                )
            })?;
            entries.push(entry);
        }
        Ok(Transcript { entries })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}

/// Test double answering from canned payloads keyed by request fingerprint,
/// or from a fixed sequence regardless of fingerprint.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    transcript: Mutex<BTreeMap<String, Value>>,
    sequence: Option<Mutex<VecDeque<Value>>>,
    strict: bool,
    calls: AtomicU64,
    unscripted: AtomicU64,
}

impl ScriptedProvider {
    /// Unmatched requests fail with [`ProviderError::Unscripted`].
    pub fn strict() -> Self {
        ScriptedProvider {
            strict: true,
            ..Default::default()
        }
    }

    /// Unmatched requests fail with a retryable transport error, so callers
    /// exercise their degradation paths.
    pub fn lenient() -> Self {
        ScriptedProvider::default()
    }

    /// Answers requests with `payloads` in order; strict once exhausted.
    pub fn sequence(payloads: Vec<Value>) -> Self {
        ScriptedProvider {
            sequence: Some(Mutex::new(payloads.into())),
            strict: true,
            ..Default::default()
        }
    }

    pub fn from_transcript(transcript: Transcript, strict: bool) -> Self {
        let map = transcript
            .entries
            .into_iter()
            .map(|e| (e.fingerprint, e.payload))
            .collect();
        ScriptedProvider {
            transcript: Mutex::new(map),
            strict,
            ..Default::default()
        }
    }

    pub fn is_strict(&self) -> bool {
        self.strict
    }

    pub fn script(&self, prompt: &str, schema: &ResponseSchema, payload: Value) {
        self.insert(fingerprint(prompt, schema), payload);
    }

    pub fn insert(&self, fingerprint: String, payload: Value) {
        self.transcript.lock().unwrap().insert(fingerprint, payload);
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn unscripted_calls(&self) -> u64 {
        self.unscripted.load(Ordering::Relaxed)
    }

    fn miss(&self, fp: String) -> ProviderError {
        self.unscripted.fetch_add(1, Ordering::Relaxed);
        if self.strict {
            ProviderError::Unscripted(fp)
        } else {
            ProviderError::Transport(format!("no scripted response for {fp}"))
        }
    }
}

impl ModelProvider for ScriptedProvider {
    fn complete(&self, request: &Request) -> Result<Value, ProviderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let fp = request.fingerprint();
        if let Some(seq) = &self.sequence {
            return seq.lock().unwrap().pop_front().ok_or_else(|| self.miss(fp));
        }
        let found = self.transcript.lock().unwrap().get(&fp).cloned();
        found.ok_or_else(|| self.miss(fp))
    }
}

type Handler = dyn Fn(&Request) -> Result<Value, ProviderError> + Send + Sync;

/// Provider backed by a closure; used for fault injection and simulation.
pub struct FnProvider {
    handler: Box<Handler>,
    calls: AtomicU64,
}

impl std::fmt::Debug for FnProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnProvider").field("calls", &self.calls()).finish()
    }
}

impl FnProvider {
    pub fn new<F>(handler: F) -> Self
    where
        F: Fn(&Request) -> Result<Value, ProviderError> + Send + Sync + 'static,
    {
        FnProvider {
            handler: Box::new(handler),
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl ModelProvider for FnProvider {
    fn complete(&self, request: &Request) -> Result<Value, ProviderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        (self.handler)(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn transcript_file_round_trip() {
        let t = Transcript::from_entries(vec![
            TranscriptEntry { fingerprint: "a".into(), payload: json!({"x": 1}) },
            TranscriptEntry { fingerprint: "b".into(), payload: json!([1, 2]) },
        ]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        t.save(&path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "{\"fingerprint\":\"a\",\"payload\":{\"x\":1}}\n{\"fingerprint\":\"b\",\"payload\":[1,2]}\n"
        );
        assert_eq!(Transcript::load(&path).unwrap(), t);
    }

    #[test]
    fn corrupt_transcript_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(&path, "{\"fingerprint\":\"a\",\"payload\":1}\n{oops\n").unwrap();
        let err = Transcript::load(&path).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn sequence_mode_ignores_fingerprints() {
        let s = ResponseSchema::new("s", json!({}));
        let p = ScriptedProvider::sequence(vec![json!(1), json!(2)]);
        assert_eq!(p.complete(&Request::new("x", s.clone())).unwrap(), json!(1));
        assert_eq!(p.complete(&Request::new("y", s.clone())).unwrap(), json!(2));
        assert!(matches!(
            p.complete(&Request::new("z", s)),
            Err(ProviderError::Unscripted(_))
        ));
    }

    #[test]
    fn lenient_miss_is_retryable() {
        let s = ResponseSchema::new("s", json!({}));
        let err = ScriptedProvider::lenient().complete(&Request::new("x", s)).unwrap_err();
        assert!(err.is_retryable());
    }
}
