//! Plain-text configuration assets and the bundled English defaults.
//!
//! All formats are UTF-8, one entry per line, with `#` starting a comment line.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::backends::{EntityDictionary, EntityKind, Lexicon};
use crate::dialogue::{PredefinedReplyTable, QuestionBank};

pub const DEFAULT_FOOD: &str = include_str!("../assets/food.txt");
pub const DEFAULT_PLACE: &str = include_str!("../assets/place.txt");
pub const DEFAULT_LEXICON: &str = include_str!("../assets/lexicon.txt");
pub const DEFAULT_REPLIES: &str = include_str!("../assets/replies.txt");
pub const DEFAULT_TEMPLATES: &str = include_str!("../assets/templates.txt");

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum AssetError {
    #[error("{asset} line {line}: {reason}")]
    Syntax { asset: &'static str, line: usize, reason: String },
    #[error("{asset}: {reason}")]
    Invalid { asset: &'static str, reason: String },
}

/// Non-empty, non-comment lines with their 1-based line numbers.
pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

/// Keyed template lists: `key = text`, repeated keys append.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Templates {
    entries: BTreeMap<String, Vec<String>>,
    /// Every `(key, index)` in file order.
    order: Vec<(String, usize)>,
}

impl Templates {
    pub fn parse(text: &str) -> Result<Self, AssetError> {
        let mut t = Templates::default();
        for (line, raw) in content_lines(text) {
            let (key, value) = raw.split_once('=').ok_or_else(|| AssetError::Syntax {
                asset: "templates",
                line,
                reason: "expected `key = text`".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(AssetError::Syntax { asset: "templates", line, reason: "empty key or text".into() });
            }
            let list = t.entries.entry(key.to_string()).or_default();
            t.order.push((key.to_string(), list.len()));
            list.push(value.to_string());
        }
        Ok(t)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).and_then(|v| v.first()).map(String::as_str)
    }

    /// Every `(key, text)` whose key equals `prefix` or starts with `prefix.`,
    /// in file order.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.order
            .iter()
            .filter(move |(k, _)| {
                k.as_str() == prefix || (k.starts_with(prefix) && k.as_bytes().get(prefix.len()) == Some(&b'.'))
            })
            .map(move |(k, i)| (k.as_str(), self.entries[k][*i].as_str()))
    }

    pub fn require(&self, keys: &[&str]) -> Result<(), AssetError> {
        match keys.iter().find(|k| self.get(k).is_none()) {
            Some(missing) => Err(AssetError::Invalid { asset: "templates", reason: alloc::format!("missing key {missing}") }),
            None => Ok(()),
        }
    }
}

/// Substitutes `{name}`, `{content}` and `{place}` placeholders.
pub fn fill(template: &str, name: &str, content: &str, place: &str) -> String {
    template.replace("{name}", name).replace("{content}", content).replace("{place}", place)
}

/// Every dialogue asset the engine needs.
#[derive(Clone, Debug)]
pub struct Assets {
    pub templates: Templates,
    pub questions: QuestionBank,
    pub replies: PredefinedReplyTable,
    pub food: EntityDictionary,
    pub place: EntityDictionary,
    pub lexicon: Lexicon,
}

/// Raw asset texts; any `None` uses the bundled default.
#[derive(Clone, Debug, Default)]
pub struct AssetSources<'a> {
    pub templates: Option<&'a str>,
    pub replies: Option<&'a str>,
    pub food: Option<&'a str>,
    pub place: Option<&'a str>,
    pub lexicon: Option<&'a str>,
}

impl Assets {
    pub fn load(src: AssetSources<'_>) -> Result<Self, AssetError> {
        let templates = Templates::parse(src.templates.unwrap_or(DEFAULT_TEMPLATES))?;
        templates.require(&[
            "share.sleep.bed",
            "share.sleep.wake",
            "share.meal",
            "share.location.today",
            "share.location.earlier",
            "share.impression",
            "share.plan",
            "memory",
            "comprehension.food",
            "comprehension.place",
            "acknowledge",
            "reminder",
            "generate.entity",
            "generate.positive",
            "generate.negative",
            "generate.neutral",
        ])?;
        let questions = QuestionBank::from_templates(&templates)?;
        Ok(Self {
            questions,
            replies: PredefinedReplyTable::parse(src.replies.unwrap_or(DEFAULT_REPLIES))?,
            food: EntityDictionary::parse(EntityKind::Food, src.food.unwrap_or(DEFAULT_FOOD))?,
            place: EntityDictionary::parse(EntityKind::Place, src.place.unwrap_or(DEFAULT_PLACE))?,
            lexicon: Lexicon::parse(src.lexicon.unwrap_or(DEFAULT_LEXICON))?,
            templates,
        })
    }
}

impl Default for Assets {
    fn default() -> Self {
        Self::load(AssetSources::default()).expect("bundled assets are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_assets_load() {
        let a = Assets::default();
        assert!(a.food.len() >= 100);
        assert!(a.place.len() >= 100);
        assert_eq!(a.templates.get("share.meal"), Some("I heard that {name} also had {content}."));
    }

    #[test]
    fn prefix_lookup_keeps_file_order() {
        let t = Templates::parse("# c\na.x = one\na = zero\na.x = two\nab = no\n").unwrap();
        let got: Vec<_> = t.with_prefix("a").collect();
        assert_eq!(got, [("a.x", "one"), ("a", "zero"), ("a.x", "two")]);
        assert_eq!(t.get("a.x"), Some("one"));
    }

    #[test]
    fn malformed_line_reports_position() {
        let err = Templates::parse("ok = fine\n\nbroken line\n").unwrap_err();
        assert_eq!(err, AssetError::Syntax { asset: "templates", line: 3, reason: "expected `key = text`".into() });
    }

    #[test]
    fn fill_replaces_placeholders() {
        assert_eq!(fill("{name} had {content} {place}", "Mike", "pasta", "at home"), "Mike had pasta at home");
    }
}
