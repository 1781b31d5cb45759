//! Offline backends for tests and hermetic runs.
//!
//! A fixture file is a JSON list of entries:
//!
//! ```json
//! [
//!   { "match": { "exact_hash": "<sha256 of prompt>" }, "purpose": "classify", "response": "medium" },
//!   { "match": { "keyword": "surrender" }, "purpose": "classify", "response": "low" },
//!   { "match": { "all_of": ["ducks_advantage", "reclaim"] }, "response": "high" },
//!   { "match": { "sequence": ["Story so far:", "stands up"] }, "response": "TRIGGERED" },
//!   { "match": "any", "purpose": "gm_turn", "responses": ["...", "..."] },
//!   { "match": "any", "purpose": "player_turn", "error": "refusal" }
//! ]
//! ```
//!
//! Exact-hash entries win over all others; the remaining entries are tried
//! in file order. `purpose` is optional and restricts the entry. With
//! `responses`, the pick is a function of the request seed and prompt hash.

use std::path::Path;
use std::sync::atomic::{AtomicU32, Ordering};

use serde::{Deserialize, Serialize};

use super::{Backend, OracleError, OracleRequest, Purpose};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    ExactHash(String),
    Keyword(String),
    AllOf(Vec<String>),
    /// Every substring appears, each after the end of the previous one.
    Sequence(Vec<String>),
    Any,
}

impl Matcher {
    fn matches(&self, prompt: &str, hash: &str) -> bool {
        match self {
            Matcher::ExactHash(h) => h.eq_ignore_ascii_case(hash),
            Matcher::Keyword(k) => prompt.contains(k.as_str()),
            Matcher::AllOf(ks) => ks.iter().all(|k| prompt.contains(k.as_str())),
            Matcher::Sequence(ks) => {
                let mut rest = prompt;
                ks.iter().all(|k| match rest.find(k.as_str()) {
                    Some(i) => {
                        rest = &rest[i + k.len()..];
                        true
                    }
                    None => false,
                })
            }
            Matcher::Any => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockFailure {
    Refusal,
    Transient,
    Auth,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureEntry {
    #[serde(rename = "match")]
    pub matcher: Matcher,
    #[serde(default)]
    pub purpose: Option<Purpose>,
    #[serde(default)]
    pub response: Option<String>,
    #[serde(default)]
    pub responses: Vec<String>,
    #[serde(default)]
    pub error: Option<MockFailure>,
    /// Fail transiently this many times before answering.
    #[serde(default)]
    pub transient_failures: u32,
    #[serde(skip)]
    failures_seen: AtomicU32,
}

impl Clone for FixtureEntry {
    fn clone(&self) -> Self {
        Self {
            matcher: self.matcher.clone(),
            purpose: self.purpose,
            response: self.response.clone(),
            responses: self.responses.clone(),
            error: self.error,
            transient_failures: self.transient_failures,
            failures_seen: AtomicU32::new(0),
        }
    }
}

impl FixtureEntry {
    pub fn new(matcher: Matcher, purpose: Option<Purpose>, response: impl Into<String>) -> Self {
        Self {
            matcher,
            purpose,
            response: Some(response.into()),
            responses: Vec::new(),
            error: None,
            transient_failures: 0,
            failures_seen: AtomicU32::new(0),
        }
    }

    pub fn keyword(purpose: Purpose, keyword: &str, response: &str) -> Self {
        Self::new(Matcher::Keyword(keyword.into()), Some(purpose), response)
    }

    pub fn any(purpose: Purpose, response: &str) -> Self {
        Self::new(Matcher::Any, Some(purpose), response)
    }

    pub fn exact(prompt: &str, response: &str) -> Self {
        Self::new(Matcher::ExactHash(crate::hash::sha256_hex(prompt)), None, response)
    }

    pub fn failing(matcher: Matcher, purpose: Option<Purpose>, failure: MockFailure) -> Self {
        Self {
            response: None,
            error: Some(failure),
            ..Self::new(matcher, purpose, "")
        }
    }

    pub fn choices(purpose: Purpose, responses: &[&str]) -> Self {
        Self {
            response: None,
            responses: responses.iter().map(|s| s.to_string()).collect(),
            ..Self::new(Matcher::Any, Some(purpose), "")
        }
    }

    fn validate(&self) -> Result<(), String> {
        let outcomes = self.response.is_some() as u8 + (!self.responses.is_empty()) as u8 + self.error.is_some() as u8;
        if outcomes != 1 {
            return Err(format!(
                "fixture entry {:?} needs exactly one of response, responses or error",
                self.matcher
            ));
        }
        Ok(())
    }

    fn applies(&self, req: &OracleRequest, hash: &str) -> bool {
        self.purpose.is_none_or(|p| p == req.purpose) && self.matcher.matches(&req.filled_prompt, hash)
    }

    fn answer(&self, req: &OracleRequest, hash: &str) -> Result<String, OracleError> {
        if self.failures_seen.load(Ordering::SeqCst) < self.transient_failures {
            self.failures_seen.fetch_add(1, Ordering::SeqCst);
            return Err(OracleError::Transient("scripted transient failure".into()));
        }
        if let Some(failure) = self.error {
            return Err(match failure {
                MockFailure::Refusal => OracleError::Refusal("scripted refusal".into()),
                MockFailure::Transient => OracleError::Transient("scripted transient failure".into()),
                MockFailure::Auth => OracleError::Auth("scripted auth failure".into()),
            });
        }
        if let Some(r) = &self.response {
            return Ok(r.clone());
        }
        let h = u64::from_str_radix(&hash[..16], 16).expect("hex digest");
        let pick = h.wrapping_add(req.sampling.seed.unwrap_or(0)) % self.responses.len() as u64;
        Ok(self.responses[pick as usize].clone())
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    entries: Vec<FixtureEntry>,
    fallback: Option<String>,
}

impl MockBackend {
    /// Unmatched prompts fail with [`OracleError::NoFixture`].
    pub fn strict(entries: Vec<FixtureEntry>) -> Result<Self, String> {
        for e in &entries {
            e.validate()?;
        }
        Ok(Self {
            entries,
            fallback: None,
        })
    }

    /// Unmatched prompts get `fallback`.
    pub fn lenient(entries: Vec<FixtureEntry>, fallback: impl Into<String>) -> Result<Self, String> {
        let mut m = Self::strict(entries)?;
        m.fallback = Some(fallback.into());
        Ok(m)
    }

    pub fn from_json(text: &str) -> Result<Vec<FixtureEntry>, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    /// Loads every `*.json` file in `dir`, in file-name order.
    pub fn load_dir(dir: &Path) -> Result<Self, String> {
        let mut files: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| format!("{}: {e}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let mut entries = Vec::new();
        for f in files {
            let text = std::fs::read_to_string(&f).map_err(|e| format!("{}: {e}", f.display()))?;
            entries.extend(Self::from_json(&text).map_err(|e| format!("{}: {e}", f.display()))?);
        }
        Self::strict(entries)
    }

    pub fn push(&mut self, entry: FixtureEntry) -> Result<(), String> {
        entry.validate()?;
        self.entries.push(entry);
        Ok(())
    }
}

impl Backend for MockBackend {
    fn call(&self, req: &OracleRequest) -> Result<String, OracleError> {
        let hash = req.prompt_hash();
        let exact = self
            .entries
            .iter()
            .find(|e| matches!(e.matcher, Matcher::ExactHash(_)) && e.applies(req, &hash));
        let entry = exact.or_else(|| {
            self.entries
                .iter()
                .find(|e| !matches!(e.matcher, Matcher::ExactHash(_)) && e.applies(req, &hash))
        });
        match (entry, &self.fallback) {
            (Some(e), _) => e.answer(req, &hash),
            (None, Some(f)) => Ok(f.clone()),
            (None, None) => Err(OracleError::NoFixture {
                purpose: req.purpose,
                hash,
            }),
        }
    }

    fn name(&self) -> &str {
        "mock"
    }
}
