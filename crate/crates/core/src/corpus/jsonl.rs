use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{char_slice, check_mentions, AnnotatedSentence, Mention};
use crate::error::{Error, Result};
use crate::schema::Registry;

#[derive(Serialize, Deserialize)]
struct Record {
    text: String,
    #[serde(default)]
    entities: Vec<Span>,
}

#[derive(Serialize, Deserialize)]
struct Span {
    #[serde(rename = "type")]
    type_id: String,
    start: usize,
    end: usize,
}

pub fn load_jsonl(path: impl AsRef<Path>, dataset_id: &str, registry: &Registry, strict: bool) -> Result<Vec<AnnotatedSentence>> {
    parse_jsonl(&std::fs::read_to_string(path)?, dataset_id, registry, strict)
}

/// One `{"text", "entities":[{"type","start","end"}]}` object per line.
/// `type` may be an entity id or one of the dataset's annotation tags.
/// Overlapping spans are an error in strict mode; otherwise the later span
/// is dropped.
pub fn parse_jsonl(input: &str, dataset_id: &str, registry: &Registry, strict: bool) -> Result<Vec<AnnotatedSentence>> {
    let spec = registry.dataset(dataset_id)?;
    let input = input.strip_prefix('\u{feff}').unwrap_or(input);
    let mut out = Vec::new();
    for (i, raw) in input.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(raw).map_err(|e| Error::from_json(e, i))?;
        let len = rec.text.chars().count();
        let mut mentions = Vec::with_capacity(rec.entities.len());
        for span in rec.entities {
            let type_id = if spec.entity_ids.contains(&span.type_id) {
                span.type_id
            } else {
                registry
                    .resolve_tag(dataset_id, &span.type_id)?
                    .ok_or_else(|| Error::UnknownTag { dataset: dataset_id.into(), tag: span.type_id.clone(), line })?
                    .id
                    .clone()
            };
            let text = char_slice(&rec.text, span.start, span.end)
                .filter(|_| span.start < span.end)
                .ok_or(Error::OutOfBounds { line, start: span.start, end: span.end, len })?;
            mentions.push(Mention { type_id, text: text.to_string(), start: span.start, end: span.end });
        }
        mentions.sort_by_key(|m| (m.start, m.end));
        if strict {
            check_mentions(&rec.text, &mentions, line, true)?;
        } else {
            let mut kept: Vec<Mention> = Vec::with_capacity(mentions.len());
            for m in mentions {
                if kept.last().is_none_or(|p| m.start >= p.end) {
                    kept.push(m);
                }
            }
            mentions = kept;
        }
        out.push(AnnotatedSentence { text: rec.text, mentions, dataset_id: dataset_id.to_string() });
    }
    Ok(out)
}

pub fn to_jsonl(sentences: &[AnnotatedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        let rec = Record {
            text: s.text.clone(),
            entities: s.mentions.iter().map(|m| Span { type_id: m.type_id.clone(), start: m.start, end: m.end }).collect(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl(path: impl AsRef<Path>, sentences: &[AnnotatedSentence]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(to_jsonl(sentences).as_bytes())?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic_registry;

    #[test]
    fn tomorrow_example() {
        let r = synthetic_registry();
        let line = r#"{"text":"Tom will go to the zoo tomorrow.","entities":[{"type":"time","start":23,"end":31}]}"#;
        let s = parse_jsonl(line, "synth_news", &r, true).unwrap();
        assert_eq!(s[0].mentions, vec![Mention::new("time", "tomorrow", 23, 31)]);
    }

    #[test]
    fn empty_entities() {
        let r = synthetic_registry();
        let s = parse_jsonl("{\"text\":\"nothing here\",\"entities\":[]}\n\n", "synth_news", &r, true).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s[0].mentions.is_empty());
    }

    #[test]
    fn out_of_bounds() {
        let r = synthetic_registry();
        let line = r#"{"text":"Tom","entities":[{"type":"name","start":0,"end":4}]}"#;
        assert!(matches!(parse_jsonl(line, "synth_news", &r, false), Err(Error::OutOfBounds { line: 1, .. })));
    }

    #[test]
    fn overlap_strict_and_lenient() {
        let r = synthetic_registry();
        let line = r#"{"text":"New York","entities":[{"type":"location","start":0,"end":8},{"type":"name","start":4,"end":8}]}"#;
        assert!(matches!(parse_jsonl(line, "synth_news", &r, true), Err(Error::Overlap { .. })));
        let s = parse_jsonl(line, "synth_news", &r, false).unwrap();
        assert_eq!(s[0].mentions.len(), 1);
    }

    #[test]
    fn malformed_json_reports_line() {
        let r = synthetic_registry();
        let input = "{\"text\":\"a\"}\n{\"text\": }\n";
        assert!(matches!(parse_jsonl(input, "synth_news", &r, true), Err(Error::Parse { line: 2, .. })));
    }
}
