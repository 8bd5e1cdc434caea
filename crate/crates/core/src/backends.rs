//! Entity extraction, sentiment scoring and reply generation.
//!
//! Each service sits behind a trait. The stubs here are pure functions of
//! their input and the loaded assets, so whole simulations run offline.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::assets::{content_lines, fill, AssetError, Templates};
use crate::domain::{Condition, Topic};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Food,
    Place,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub kind: EntityKind,
    /// Canonical spelling from the dictionary.
    pub name: String,
}

/// Lowercased word tokens; apostrophes and hyphens stay inside words.
fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '’' || c == '-'))
        .map(|w| w.trim_matches(|c| c == '\'' || c == '’' || c == '-').replace('’', "'"))
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntityDictionary {
    kind: EntityKind,
    entries: BTreeMap<Vec<String>, String>,
}

impl EntityDictionary {
    pub fn parse(kind: EntityKind, text: &str) -> Result<Self, AssetError> {
        let asset = match kind {
            EntityKind::Food => "food dictionary",
            EntityKind::Place => "place dictionary",
        };
        let mut entries = BTreeMap::new();
        for (line, raw) in content_lines(text) {
            let name = raw.trim();
            let key = tokens(name);
            if key.is_empty() {
                return Err(AssetError::Syntax { asset, line, reason: "entry has no word characters".into() });
            }
            entries.entry(key).or_insert_with(|| name.to_string());
        }
        if entries.is_empty() {
            return Err(AssetError::Invalid { asset, reason: "no entries".into() });
        }
        Ok(Self { kind, entries })
    }

    pub fn kind(&self) -> EntityKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Canonical spelling of `name` if it is an entry.
    pub fn canonical(&self, name: &str) -> Option<&str> {
        self.entries.get(&tokens(name)).map(String::as_str)
    }
}

/// Dictionary lookup over one or more dictionaries, longest match first.
#[derive(Clone, Debug)]
pub struct EntityExtractor {
    entries: BTreeMap<Vec<String>, Entity>,
    longest: usize,
}

impl EntityExtractor {
    /// Earlier dictionaries win when the same name appears in several.
    pub fn new<'a>(dicts: impl IntoIterator<Item = &'a EntityDictionary>) -> Self {
        let mut entries = BTreeMap::new();
        for d in dicts {
            for (key, name) in &d.entries {
                entries.entry(key.clone()).or_insert_with(|| Entity { kind: d.kind, name: name.clone() });
            }
        }
        let longest = entries.keys().map(Vec::len).max().unwrap_or(0);
        Self { entries, longest }
    }

    /// All dictionary hits in reading order, longest match at each position,
    /// no overlaps.
    pub fn extract(&self, text: &str) -> Vec<Entity> {
        let words = tokens(text);
        let mut out = Vec::new();
        let mut i = 0;
        while i < words.len() {
            let max = self.longest.min(words.len() - i);
            let hit = (1..=max).rev().find_map(|n| self.entries.get(&words[i..i + n]).map(|e| (n, e)));
            match hit {
                Some((n, e)) => {
                    out.push(e.clone());
                    i += n;
                }
                None => i += 1,
            }
        }
        out
    }
}

/// Signed word lexicon: `word +1` / `word -1` per line.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    weights: BTreeMap<String, i32>,
}

impl Lexicon {
    pub fn parse(text: &str) -> Result<Self, AssetError> {
        let mut weights = BTreeMap::new();
        for (line, raw) in content_lines(text) {
            let mut parts = raw.split_whitespace();
            let (Some(word), Some(weight), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(AssetError::Syntax { asset: "lexicon", line, reason: "expected `<word> <+1|-1>`".into() });
            };
            let weight: i32 = weight.trim_start_matches('+').parse().map_err(|_| AssetError::Syntax {
                asset: "lexicon",
                line,
                reason: alloc::format!("bad weight {weight:?}"),
            })?;
            weights.insert(word.to_lowercase(), weight.signum());
        }
        Ok(Self { weights })
    }

    /// `(positive - negative) / (positive + negative)` over lexicon hits; 0 without hits.
    pub fn score(&self, text: &str) -> f64 {
        let (mut pos, mut neg) = (0u32, 0u32);
        for w in tokens(text) {
            match self.weights.get(&w) {
                Some(1) => pos += 1,
                Some(-1) => neg += 1,
                _ => {}
            }
        }
        if pos + neg == 0 {
            0.0
        } else {
            (f64::from(pos) - f64::from(neg)) / f64::from(pos + neg)
        }
    }
}

pub trait Analyzer {
    fn extract_entities(&self, text: &str) -> Result<Vec<Entity>, BackendError>;
    /// Score in `[-1, 1]`.
    fn sentiment(&self, text: &str) -> Result<f64, BackendError>;
}

#[derive(Clone, Debug)]
pub struct StubAnalyzer {
    extractor: EntityExtractor,
    lexicon: Lexicon,
}

impl StubAnalyzer {
    pub fn new(food: &EntityDictionary, place: &EntityDictionary, lexicon: Lexicon) -> Self {
        Self { extractor: EntityExtractor::new([food, place]), lexicon }
    }
}

impl Analyzer for StubAnalyzer {
    fn extract_entities(&self, text: &str) -> Result<Vec<Entity>, BackendError> {
        Ok(self.extractor.extract(text))
    }

    fn sentiment(&self, text: &str) -> Result<f64, BackendError> {
        Ok(self.lexicon.score(text))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Agent,
    User,
}

/// Whose information a context line carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Own,
    Partner,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextTurn {
    pub speaker: Speaker,
    pub body: String,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ContextError {
    #[error("partner content in a non-sharing generation context")]
    PartnerContent,
}

pub const MAX_REPLY_CODE_POINTS: usize = 200;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationContext {
    pub topic: Topic,
    pub turns: Vec<ContextTurn>,
    pub preamble: String,
}

impl GenerationContext {
    /// Keeps the last `window` turns. In the non-sharing condition any
    /// partner-sourced line is rejected outright.
    pub fn new(
        topic: Topic,
        mut turns: Vec<ContextTurn>,
        preamble: impl Into<String>,
        condition: Condition,
        window: usize,
    ) -> Result<Self, ContextError> {
        if condition == Condition::NonSharing && turns.iter().any(|t| t.provenance == Provenance::Partner) {
            return Err(ContextError::PartnerContent);
        }
        if turns.len() > window {
            turns.drain(..turns.len() - window);
        }
        Ok(Self { topic, turns, preamble: preamble.into() })
    }

    pub fn last_user_text(&self) -> Option<&str> {
        self.turns.iter().rev().find(|t| t.speaker == Speaker::User).map(|t| t.body.as_str())
    }
}

pub trait Generator {
    fn generate(&self, ctx: &GenerationContext) -> Result<String, BackendError>;
}

impl<G: Generator + ?Sized> Generator for &G {
    fn generate(&self, ctx: &GenerationContext) -> Result<String, BackendError> {
        (**self).generate(ctx)
    }
}

/// Template-composed replies keyed on the last user message.
#[derive(Clone, Debug)]
pub struct StubGenerator {
    extractor: EntityExtractor,
    lexicon: Lexicon,
    entity: String,
    positive: String,
    negative: String,
    neutral: String,
    fallback: String,
}

impl StubGenerator {
    pub fn new(templates: &Templates, food: &EntityDictionary, place: &EntityDictionary, lexicon: Lexicon) -> Self {
        let get = |k: &str| templates.get(k).unwrap_or("I see.").to_string();
        Self {
            extractor: EntityExtractor::new([food, place]),
            lexicon,
            entity: get("generate.entity"),
            positive: get("generate.positive"),
            negative: get("generate.negative"),
            neutral: get("generate.neutral"),
            fallback: get("acknowledge"),
        }
    }
}

impl Generator for StubGenerator {
    fn generate(&self, ctx: &GenerationContext) -> Result<String, BackendError> {
        let text = match ctx.last_user_text().filter(|t| !t.trim().is_empty()) {
            None => self.fallback.clone(),
            Some(user) => match self.extractor.extract(user).first() {
                Some(e) => fill(&self.entity, "", &e.name, ""),
                None => {
                    let s = self.lexicon.score(user);
                    if s > 0.0 {
                        self.positive.clone()
                    } else if s < 0.0 {
                        self.negative.clone()
                    } else {
                        self.neutral.clone()
                    }
                }
            },
        };
        Ok(truncate_code_points(&text, MAX_REPLY_CODE_POINTS))
    }
}

pub fn truncate_code_points(text: &str, max: usize) -> String {
    match text.char_indices().nth(max) {
        Some((idx, _)) => text[..idx].to_string(),
        None => text.to_string(),
    }
}

/// Always fails; stands in for an unreachable remote model.
#[derive(Clone, Copy, Debug, Default)]
pub struct UnavailableGenerator;

impl Generator for UnavailableGenerator {
    fn generate(&self, _ctx: &GenerationContext) -> Result<String, BackendError> {
        Err(BackendError::Unavailable("generator disabled".into()))
    }
}
