use std::path::Path;

use super::{AnnotatedSentence, Mention};
use crate::error::{Error, Result};
use crate::schema::Registry;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConllOptions {
    /// Inserted between tokens when rebuilding the sentence text. Empty for
    /// character-tokenized Chinese corpora.
    pub joiner: String,
    /// Reject `I-` tags that do not continue an open entity of the same type.
    pub strict: bool,
}

impl Default for ConllOptions {
    fn default() -> Self {
        Self { joiner: String::new(), strict: false }
    }
}

impl ConllOptions {
    pub fn spaced() -> Self {
        Self { joiner: " ".into(), strict: false }
    }

    pub fn strict(mut self) -> Self {
        self.strict = true;
        self
    }
}

pub fn load_conll(path: impl AsRef<Path>, dataset_id: &str, registry: &Registry, opts: &ConllOptions) -> Result<Vec<AnnotatedSentence>> {
    parse_conll(&std::fs::read_to_string(path)?, dataset_id, registry, opts)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Prefix {
    Begin,
    Inside,
    Outside,
}

struct Open {
    type_id: String,
    start: usize,
    tokens: Vec<String>,
}

struct Builder<'a> {
    opts: &'a ConllOptions,
    text: String,
    chars: usize,
    tokens: usize,
    mentions: Vec<Mention>,
    open: Option<Open>,
}

impl<'a> Builder<'a> {
    fn new(opts: &'a ConllOptions) -> Self {
        Self { opts, text: String::new(), chars: 0, tokens: 0, mentions: Vec::new(), open: None }
    }

    fn close(&mut self) {
        if let Some(o) = self.open.take() {
            let surface = o.tokens.join(&self.opts.joiner);
            let end = o.start + surface.chars().count();
            self.mentions.push(Mention { type_id: o.type_id, text: surface, start: o.start, end });
        }
    }

    fn push_token(&mut self, token: &str) -> usize {
        if self.tokens > 0 {
            self.text.push_str(&self.opts.joiner);
            self.chars += self.opts.joiner.chars().count();
        }
        let start = self.chars;
        self.text.push_str(token);
        self.chars += token.chars().count();
        self.tokens += 1;
        start
    }

    fn finish(mut self, dataset_id: &str) -> Option<AnnotatedSentence> {
        self.close();
        (self.tokens > 0).then(|| AnnotatedSentence {
            text: self.text,
            mentions: self.mentions,
            dataset_id: dataset_id.to_string(),
        })
    }
}

/// Parses two-column token/tag text. BIO is the primary scheme; `S-`, `E-`
/// and `M-` (BIOES/BMES) are accepted as begin/inside variants.
pub fn parse_conll(input: &str, dataset_id: &str, registry: &Registry, opts: &ConllOptions) -> Result<Vec<AnnotatedSentence>> {
    registry.dataset(dataset_id)?;
    let input = input.strip_prefix('\u{feff}').unwrap_or(input);
    let mut out = Vec::new();
    let mut b = Builder::new(opts);
    for (i, raw) in input.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            if let Some(s) = std::mem::replace(&mut b, Builder::new(opts)).finish(dataset_id) {
                out.push(s);
            }
            continue;
        }
        let cols: Vec<&str> = raw.split([' ', '\t']).filter(|c| !c.is_empty()).collect();
        let (token, tag) = match cols.as_slice() {
            [token, .., tag] => (*token, *tag),
            _ => {
                return Err(Error::Parse { line, column: 1, message: "expected `token tag`".into() });
            }
        };
        let (prefix, label) = match tag.split_once('-') {
            None if tag == "O" => (Prefix::Outside, ""),
            Some(("B" | "S", l)) => (Prefix::Begin, l),
            Some(("I" | "M" | "E", l)) => (Prefix::Inside, l),
            _ => {
                return Err(Error::Parse { line, column: raw.find(tag).unwrap_or(0) + 1, message: format!("malformed tag `{tag}`") });
            }
        };
        let type_id = if prefix == Prefix::Outside {
            None
        } else {
            let e = registry
                .resolve_tag(dataset_id, label)?
                .ok_or_else(|| Error::UnknownTag { dataset: dataset_id.into(), tag: label.into(), line })?;
            Some(e.id.clone())
        };
        let start = b.push_token(token);
        match (prefix, type_id) {
            (Prefix::Outside, _) => b.close(),
            (Prefix::Inside, Some(t)) if b.open.as_ref().is_some_and(|o| o.type_id == t) => {
                b.open.as_mut().expect("checked").tokens.push(token.to_string());
            }
            (Prefix::Inside, Some(_)) if opts.strict => {
                return Err(Error::DanglingInside { tag: tag.to_string(), line });
            }
            (_, Some(t)) => {
                b.close();
                b.open = Some(Open { type_id: t, start, tokens: vec![token.to_string()] });
            }
            (_, None) => unreachable!("non-O tags always resolve a type"),
        }
        // Single-token scheme markers end their entity immediately.
        if tag.starts_with("S-") || tag.starts_with("E-") {
            b.close();
        }
    }
    if let Some(s) = b.finish(dataset_id) {
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic_registry;

    fn registry() -> Registry {
        Registry::bundled()
    }

    #[test]
    fn spaced_english_tokens() {
        let s = parse_conll("Tom B-PER\nwill O\n", "msra", &registry(), &ConllOptions::spaced()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].text, "Tom will");
        assert_eq!(s[0].mentions, vec![Mention::new("name", "Tom", 0, 3)]);
    }

    #[test]
    fn chinese_bio_merge() {
        let s = parse_conll("北 B-LOC\n京 I-LOC\n", "msra", &registry(), &ConllOptions::default()).unwrap();
        assert_eq!(s[0].mentions, vec![Mention::new("location", "北京", 0, 2)]);
    }

    #[test]
    fn unknown_tag_is_an_error() {
        let err = parse_conll("x B-XYZ\n", "msra", &registry(), &ConllOptions::default()).unwrap_err();
        assert!(matches!(err, Error::UnknownTag { line: 1, .. }));
    }

    #[test]
    fn dangling_inside_strict_vs_lenient() {
        let input = "a O\nb I-PER\nc I-PER\n";
        let err = parse_conll(input, "msra", &registry(), &ConllOptions::default().strict()).unwrap_err();
        assert!(matches!(err, Error::DanglingInside { line: 2, .. }));
        let s = parse_conll(input, "msra", &registry(), &ConllOptions::default()).unwrap();
        assert_eq!(s[0].mentions, vec![Mention::new("name", "bc", 1, 3)]);
    }

    #[test]
    fn blank_lines_separate_sentences_and_tabs_work() {
        let input = "北\tB-LOC\n京\tI-LOC\n\n\n张\tB-PER\n三\tI-PER\n去\tO\n";
        let s = parse_conll(input, "msra", &registry(), &ConllOptions::default()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].text, "张三去");
        assert_eq!(s[1].mentions[0].type_id, "name");
    }

    #[test]
    fn bmes_and_dataset_specific_tags() {
        let input = "张 B-NAME\n三 E-NAME\n在 O\n华 B-ORG\n为 E-ORG\n";
        let s = parse_conll(input, "resume", &registry(), &ConllOptions::default()).unwrap();
        assert_eq!(s[0].mentions, vec![Mention::new("name", "张三", 0, 2), Mention::new("company", "华为", 3, 5)]);
    }

    #[test]
    fn adjacent_begins_split_entities() {
        let s = parse_conll("a B-LOC\nb B-LOC\n", "msra", &registry(), &ConllOptions::default()).unwrap();
        assert_eq!(s[0].mentions.len(), 2);
    }

    #[test]
    fn entity_ids_work_as_tags() {
        let r = synthetic_registry();
        let s = parse_conll("Tom B-name\n", "synth_news", &r, &ConllOptions::spaced()).unwrap();
        assert_eq!(s[0].mentions[0].type_id, "name");
    }
}
