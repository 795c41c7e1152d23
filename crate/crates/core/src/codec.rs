//! Prompted source strings, target strings, and their inverse.
//!
//! ```text
//! source := "<entity>" NAME ("<entity>" NAME)* "<text>" TEXT
//! target := "(" PAIR ("," PAIR)* ")"
//! PAIR   := "(" NAME "):(" PAYLOAD ")"
//! ```
//!
//! `PAYLOAD` is a mention surface string or the literal `NULL` for a prompted
//! type with no mention. Several mentions of one type repeat the pair in
//! text order.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{char_slice, Mention};
use crate::error::{Error, Result};
use crate::schema::{NameStyle, Registry};

pub const ENTITY: &str = "<entity>";
pub const TEXT: &str = "<text>";
pub const NULL: &str = "NULL";

/// Longest type-name candidate considered when counting unknown pairs.
const MAX_UNKNOWN_NAME: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Payload {
    Text(String),
    Null,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TypedPair {
    pub type_id: String,
    pub payload: Payload,
}

impl TypedPair {
    pub fn text(type_id: impl Into<String>, payload: impl Into<String>) -> Self {
        Self { type_id: type_id.into(), payload: Payload::Text(payload.into()) }
    }

    pub fn null(type_id: impl Into<String>) -> Self {
        Self { type_id: type_id.into(), payload: Payload::Null }
    }

    pub fn is_null(&self) -> bool {
        self.payload == Payload::Null
    }

    pub fn surface(&self) -> Option<&str> {
        match &self.payload {
            Payload::Text(s) => Some(s),
            Payload::Null => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    Strict,
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Parsed {
    pub pairs: Vec<TypedPair>,
    /// Pairs whose type is unknown or not among the allowed types.
    pub dropped: usize,
    /// Number of `(name):(` anchors found, known or not.
    pub anchors: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Grounding {
    pub mentions: Vec<Mention>,
    pub ungroundable: Vec<TypedPair>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptedExample {
    pub prompts: Vec<String>,
    pub source: String,
    pub target: String,
}

/// Renders and parses sources and targets against one registry.
#[derive(Debug, Clone)]
pub struct Codec {
    registry: Arc<Registry>,
    style: NameStyle,
    bracketed: bool,
    by_name: HashMap<String, String>,
}

impl Codec {
    pub fn new(registry: Arc<Registry>, style: NameStyle) -> Self {
        let by_name = registry
            .entity_types()
            .iter()
            .map(|e| (registry.display_name(e, style).to_string(), e.id.clone()))
            .collect();
        Self { registry, style, bracketed: false, by_name }
    }

    /// Renders source names as `<entity><time>` instead of `<entity>time`.
    pub fn with_brackets(mut self, on: bool) -> Self {
        self.bracketed = on;
        self
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn style(&self) -> NameStyle {
        self.style
    }

    pub fn name_of(&self, type_id: &str) -> Result<&str> {
        let e = self.registry.require_entity(type_id)?;
        Ok(self.registry.display_name(e, self.style))
    }

    pub fn type_of(&self, name: &str) -> Option<&str> {
        self.by_name.get(name).map(String::as_str)
    }

    fn check_prompts(&self, prompts: &[impl AsRef<str>]) -> Result<()> {
        if prompts.is_empty() {
            return Err(Error::invalid("prompt list is empty"));
        }
        for (i, p) in prompts.iter().enumerate() {
            self.registry.require_entity(p.as_ref())?;
            if prompts[..i].iter().any(|q| q.as_ref() == p.as_ref()) {
                return Err(Error::Duplicate { kind: "prompt", id: p.as_ref().to_string() });
            }
        }
        Ok(())
    }

    pub fn serialize_input(&self, prompts: &[impl AsRef<str>], text: &str) -> Result<String> {
        self.check_prompts(prompts)?;
        if text.contains(ENTITY) || text.contains(TEXT) {
            return Err(Error::invalid("text contains a reserved sentinel"));
        }
        let mut out = String::with_capacity(text.len() + 16 * prompts.len());
        for p in prompts {
            out.push_str(ENTITY);
            let name = self.name_of(p.as_ref())?;
            if self.bracketed {
                out.push('<');
                out.push_str(name);
                out.push('>');
            } else {
                out.push_str(name);
            }
        }
        out.push_str(TEXT);
        out.push_str(text);
        Ok(out)
    }

    /// One pair per prompted mention in text order, `NULL` for prompted types
    /// without mentions. In strict mode a mention of an unprompted type is an
    /// error; otherwise it is left out.
    pub fn serialize_target(&self, prompts: &[impl AsRef<str>], mentions: &[Mention], strict: bool) -> Result<String> {
        self.check_prompts(prompts)?;
        if strict {
            if let Some(m) = mentions.iter().find(|m| !prompts.iter().any(|p| p.as_ref() == m.type_id)) {
                return Err(Error::invalid(format!("mention type `{}` is not prompted", m.type_id)));
            }
        }
        let mut sorted: Vec<&Mention> = mentions.iter().collect();
        sorted.sort_by_key(|m| (m.start, m.end));
        let mut out = String::from("(");
        for p in prompts {
            let name = self.name_of(p.as_ref())?;
            let mut any = false;
            for m in sorted.iter().filter(|m| m.type_id == p.as_ref()) {
                push_pair(&mut out, name, &m.text);
                any = true;
            }
            if !any {
                push_pair(&mut out, name, NULL);
            }
        }
        out.push(')');
        Ok(out)
    }

    pub fn make_example(&self, prompts: Vec<String>, text: &str, mentions: &[Mention]) -> Result<PromptedExample> {
        let source = self.serialize_input(&prompts, text)?;
        let target = self.serialize_target(&prompts, mentions, false)?;
        Ok(PromptedExample { prompts, source, target })
    }

    pub fn parse_target(&self, generated: &str, allowed: &[impl AsRef<str>], mode: ParseMode) -> Result<Parsed> {
        if allowed.is_empty() {
            return Err(Error::invalid("allowed type list is empty"));
        }
        match mode {
            ParseMode::Strict => self.parse_strict(generated, allowed),
            ParseMode::Lenient => Ok(self.parse_lenient(generated, allowed)),
        }
    }

    /// Known name anchored at byte `at` (`(` NAME `):(`), as (type id, byte
    /// length of the whole anchor).
    fn known_anchor(&self, s: &str, at: usize) -> Option<(&str, usize)> {
        let rest = s[at..].strip_prefix('(')?;
        let close = rest.find("):(")?;
        let name = &rest[..close];
        self.type_of(name).map(|id| (id, close + 4))
    }

    /// Any paren-free name anchored at byte `at`.
    fn any_anchor(&self, s: &str, at: usize) -> Option<(Option<&str>, usize)> {
        if let Some((id, len)) = self.known_anchor(s, at) {
            return Some((Some(id), len));
        }
        let rest = s[at..].strip_prefix('(')?;
        let close = rest.find("):(")?;
        let name = &rest[..close];
        let ok = !name.is_empty() && name.chars().count() <= MAX_UNKNOWN_NAME && !name.contains(['(', ')']);
        ok.then_some((None, close + 4))
    }

    fn parse_strict(&self, s: &str, allowed: &[impl AsRef<str>]) -> Result<Parsed> {
        let err = |pos: usize, msg: &str| Error::Grammar { position: s[..pos.min(s.len())].chars().count(), message: msg.to_string() };
        if !s.starts_with('(') {
            return Err(err(0, "expected `(`"));
        }
        let mut pos = 1;
        let mut pairs = Vec::new();
        loop {
            let (type_id, len) = self.known_anchor(s, pos).ok_or_else(|| err(pos, "expected `(` NAME `):(`"))?;
            if !allowed.iter().any(|a| a.as_ref() == type_id) {
                return Err(err(pos, &format!("type `{type_id}` was not prompted")));
            }
            let start = pos + len;
            // Payload ends at the first `),` followed by a known anchor, or at
            // a terminal `))`.
            let mut end = None;
            let mut terminal = false;
            for (i, _) in s[start..].match_indices(')') {
                let at = start + i;
                if s[at..].starts_with("),") && self.known_anchor(s, at + 2).is_some() {
                    end = Some(at);
                    break;
                }
                if &s[at..] == "))" {
                    end = Some(at);
                    terminal = true;
                    break;
                }
            }
            let end = end.ok_or_else(|| err(s.len(), "unterminated pair"))?;
            let payload = &s[start..end];
            if payload.is_empty() {
                return Err(err(start, "empty payload"));
            }
            pairs.push(pair(type_id, payload));
            if terminal {
                break;
            }
            pos = end + 2;
        }
        let anchors = pairs.len();
        Ok(Parsed { pairs, dropped: 0, anchors })
    }

    fn parse_lenient(&self, s: &str, allowed: &[impl AsRef<str>]) -> Parsed {
        let mut anchors: Vec<(usize, Option<&str>, usize)> = Vec::new();
        let mut at = 0;
        while let Some(i) = s[at..].find('(') {
            let p = at + i;
            match self.any_anchor(s, p) {
                Some((id, len)) => {
                    anchors.push((p, id, len));
                    at = p + len;
                }
                None => at = p + 1,
            }
        }
        let mut out = Parsed { anchors: anchors.len(), ..Parsed::default() };
        for (k, &(p, id, len)) in anchors.iter().enumerate() {
            let start = p + len;
            let payload = match anchors.get(k + 1) {
                Some(&(next, ..)) => {
                    let seg = &s[start..next];
                    let seg = seg.strip_suffix(',').unwrap_or(seg);
                    seg.strip_suffix(')').unwrap_or(seg)
                }
                None => match s[start..].find("))") {
                    Some(i) => &s[start..start + i],
                    None => s[start..].strip_suffix(')').unwrap_or(&s[start..]),
                },
            };
            match id {
                Some(t) if allowed.iter().any(|a| a.as_ref() == t) && !payload.is_empty() => {
                    out.pairs.push(pair(t, payload));
                }
                _ => out.dropped += 1,
            }
        }
        out
    }
}

fn push_pair(out: &mut String, name: &str, payload: &str) {
    if out.len() > 1 {
        out.push(',');
    }
    out.push('(');
    out.push_str(name);
    out.push_str("):(");
    out.push_str(payload);
    out.push(')');
}

fn pair(type_id: &str, payload: &str) -> TypedPair {
    if payload == NULL {
        TypedPair::null(type_id)
    } else {
        TypedPair::text(type_id, payload)
    }
}

/// Character offsets of every (possibly overlapping) occurrence of `needle`.
fn occurrences<'a>(text: &'a [char], needle: &[char]) -> impl Iterator<Item = usize> + 'a {
    let n = needle.len();
    let needle = needle.to_vec();
    (0..(text.len() + 1).saturating_sub(n)).filter(move |&i| n > 0 && text[i..i + n] == needle[..])
}

/// Grounds each non-`NULL` payload at its leftmost occurrence not already
/// claimed by an earlier pair. Pairs with no free occurrence are returned as
/// ungroundable.
pub fn ground_pairs(text: &str, pairs: &[TypedPair]) -> Grounding {
    let chars: Vec<char> = text.chars().collect();
    let mut claimed: Vec<(usize, usize)> = Vec::new();
    let mut out = Grounding::default();
    for p in pairs {
        let Some(surface) = p.surface() else { continue };
        let needle: Vec<char> = surface.chars().collect();
        let n = needle.len();
        match occurrences(&chars, &needle).find(|&i| !claimed.contains(&(i, i + n))) {
            Some(i) => {
                claimed.push((i, i + n));
                let text = char_slice(text, i, i + n).expect("occurrence in bounds").to_string();
                out.mentions.push(Mention { type_id: p.type_id.clone(), text, start: i, end: i + n });
            }
            None => out.ungroundable.push(p.clone()),
        }
    }
    out
}

/// Everything after the `<text>` sentinel.
pub fn source_text(source: &str) -> Option<&str> {
    source.split_once(TEXT).map(|(_, t)| t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic_registry;

    const TOM: &str = "Tom will go to the zoo tomorrow.";

    fn codec() -> Codec {
        Codec::new(Arc::new(synthetic_registry()), NameStyle::Alias)
    }

    fn tom_mentions() -> Vec<Mention> {
        vec![Mention::new("name", "Tom", 0, 3), Mention::new("location", "zoo", 19, 22), Mention::new("time", "tomorrow", 23, 31)]
    }

    #[test]
    fn source_strings() {
        let c = codec();
        assert_eq!(
            c.serialize_input(&["time", "location"], TOM).unwrap(),
            "<entity>time<entity>location<text>Tom will go to the zoo tomorrow."
        );
        assert_eq!(c.serialize_input(&["name"], TOM).unwrap(), "<entity>name<text>Tom will go to the zoo tomorrow.");
        assert!(c.serialize_input(&[] as &[&str], TOM).is_err());
        assert!(c.serialize_input(&["xyz"], TOM).is_err());
        assert!(c.serialize_input(&["name", "name"], TOM).is_err());
        assert!(c.serialize_input(&["name"], "a<text>b").is_err());
    }

    #[test]
    fn bracketed_rendering() {
        let c = codec().with_brackets(true);
        assert_eq!(c.serialize_input(&["time", "location"], "x").unwrap(), "<entity><time><entity><location><text>x");
    }

    #[test]
    fn prompt_names_render_in_the_registry_language() {
        let c = Codec::new(Arc::new(Registry::bundled()), NameStyle::Prompt);
        assert_eq!(c.serialize_input(&["location"], "北京").unwrap(), "<entity>地点<text>北京");
    }

    #[test]
    fn target_strings() {
        let c = codec();
        let m = tom_mentions();
        assert_eq!(c.serialize_target(&["time", "location"], &m, false).unwrap(), "((time):(tomorrow),(location):(zoo))");
        assert_eq!(c.serialize_target(&["name"], &m, false).unwrap(), "((name):(Tom))");
        assert_eq!(c.serialize_target(&["company"], &[], true).unwrap(), "((company):(NULL))");
        let two = vec![Mention::new("time", "9am", 3, 6), Mention::new("time", "noon", 10, 14)];
        assert_eq!(c.serialize_target(&["time"], &two, true).unwrap(), "((time):(9am),(time):(noon))");
        assert!(c.serialize_target(&["name"], &m, true).is_err());
    }

    #[test]
    fn strict_parse() {
        let c = codec();
        let p = c.parse_target("((time):(tomorrow),(location):(zoo))", &["time", "location"], ParseMode::Strict).unwrap();
        assert_eq!(p.pairs, vec![TypedPair::text("time", "tomorrow"), TypedPair::text("location", "zoo")]);
        let p = c.parse_target("((name):(NULL))", &["name"], ParseMode::Strict).unwrap();
        assert_eq!(p.pairs, vec![TypedPair::null("name")]);
        let err = c.parse_target("((time):(x)", &["time"], ParseMode::Strict).unwrap_err();
        assert!(matches!(err, Error::Grammar { position: 11, .. }), "{err}");
        assert!(c.parse_target("((time):(x))", &["name"], ParseMode::Strict).is_err());
        assert!(c.parse_target("((time):())", &["time"], ParseMode::Strict).is_err());
        assert!(c.parse_target("x", &[] as &[&str], ParseMode::Strict).is_err());
    }

    #[test]
    fn strict_payload_may_contain_delimiters() {
        let c = codec();
        let p = c.parse_target("((time):(a), b),(location):(z)o))", &["time", "location"], ParseMode::Strict).unwrap();
        assert_eq!(p.pairs, vec![TypedPair::text("time", "a), b"), TypedPair::text("location", "z)o")]);
    }

    #[test]
    fn lenient_parse() {
        let c = codec();
        let p = c.parse_target("((time):(a, b),(location):(zoo))", &["time", "location"], ParseMode::Lenient).unwrap();
        assert_eq!(p.pairs, vec![TypedPair::text("time", "a, b"), TypedPair::text("location", "zoo")]);
        assert_eq!(p.dropped, 0);

        let p = c.parse_target("((planet):(mars),(time):(now),(name):(Bo))", &["time"], ParseMode::Lenient).unwrap();
        assert_eq!(p.pairs, vec![TypedPair::text("time", "now")]);
        assert_eq!(p.dropped, 2);

        let p = c.parse_target("garbage ((time):(tomor", &["time"], ParseMode::Lenient).unwrap();
        assert_eq!(p.pairs, vec![TypedPair::text("time", "tomor")]);

        let p = c.parse_target("no anchors at all", &["time"], ParseMode::Lenient).unwrap();
        assert_eq!((p.pairs.len(), p.anchors), (0, 0));
    }

    #[test]
    fn grounding() {
        let g = ground_pairs(TOM, &[TypedPair::text("location", "zoo")]);
        assert_eq!(g.mentions, vec![Mention::new("location", "zoo", 19, 22)]);

        let g = ground_pairs("to to", &[TypedPair::text("time", "to"), TypedPair::text("time", "to")]);
        assert_eq!(g.mentions.iter().map(|m| (m.start, m.end)).collect::<Vec<_>>(), [(0, 2), (3, 5)]);

        let g = ground_pairs(TOM, &[TypedPair::text("location", "mars"), TypedPair::null("time")]);
        assert!(g.mentions.is_empty());
        assert_eq!(g.ungroundable, vec![TypedPair::text("location", "mars")]);

        let g = ground_pairs("去北京", &[TypedPair::text("location", "北京")]);
        assert_eq!(g.mentions, vec![Mention::new("location", "北京", 1, 3)]);
    }

    #[test]
    fn source_text_recovers_the_sentence() {
        let c = codec();
        let s = c.serialize_input(&["time"], TOM).unwrap();
        assert_eq!(source_text(&s), Some(TOM));
    }
}
