use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotatedSentence, Mention};
use crate::error::{Error, Result};
use crate::schema::{DatasetSpec, Registry, SplitPolicy};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub entity_id: String,
    pub fillers: Vec<String>,
}

/// Template grammar. Slot names are upper-case identifiers (`NAME`, `CITY2`)
/// that appear verbatim in templates; every other character is literal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grammar {
    pub dataset_id: String,
    pub templates: Vec<String>,
    pub slots: BTreeMap<String, Slot>,
}

enum Piece<'a> {
    Lit(&'a str),
    Slot(&'a str),
}

fn pieces<'a>(template: &'a str, slots: &BTreeMap<String, Slot>) -> Vec<Piece<'a>> {
    let bytes = template.as_bytes();
    let mut out = Vec::new();
    let mut lit = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_uppercase() {
            let mut j = i;
            while j < bytes.len() && (bytes[j].is_ascii_uppercase() || bytes[j].is_ascii_digit() || bytes[j] == b'_') {
                j += 1;
            }
            let word = &template[i..j];
            if slots.contains_key(word) {
                if lit < i {
                    out.push(Piece::Lit(&template[lit..i]));
                }
                out.push(Piece::Slot(word));
                lit = j;
            }
            i = j;
        } else {
            i += 1;
        }
    }
    if lit < template.len() {
        out.push(Piece::Lit(&template[lit..]));
    }
    out
}

impl Grammar {
    pub fn validate(&self, registry: &Registry) -> Result<()> {
        if self.templates.is_empty() {
            return Err(Error::invalid(format!("grammar `{}` has no templates", self.dataset_id)));
        }
        let members = registry.dataset(&self.dataset_id).ok().map(|d| &d.entity_ids);
        for (key, slot) in &self.slots {
            registry.require_entity(&slot.entity_id)?;
            if members.is_some_and(|m| !m.contains(&slot.entity_id)) {
                return Err(Error::DanglingReference { dataset: self.dataset_id.clone(), entity: slot.entity_id.clone() });
            }
            if slot.fillers.is_empty() || slot.fillers.iter().any(|f| f.is_empty()) {
                return Err(Error::invalid(format!("slot `{key}` needs non-empty fillers")));
            }
        }
        Ok(())
    }

    /// The type a filler word takes in this grammar, if any.
    pub fn filler_types(&self) -> BTreeMap<&str, &str> {
        let mut out = BTreeMap::new();
        for slot in self.slots.values() {
            for f in &slot.fillers {
                out.insert(f.as_str(), slot.entity_id.as_str());
            }
        }
        out
    }

    /// News-wire style; private type `company`.
    pub fn news() -> Self {
        grammar(
            "synth_news",
            &[
                "NAME will go to the PLACE TIME.",
                "NAME joined COMPANY in CITY TIME.",
                "COMPANY opened a new office in CITY.",
                "TIME, NAME left COMPANY.",
                "Shares of COMPANY fell TIME.",
                "NAME met NAME2 in CITY.",
                "COMPANY hired NAME as its new chief.",
                "NAME said COMPANY will expand to CITY TIME.",
                "The weather in CITY was mild TIME.",
                "The market was quiet.",
                "Analysts expect more growth.",
            ],
            &[
                ("NAME", "name", &["Tom", "Alice", "Bob", "Maria", "Chen Wei", "Li Na", "Omar", "Jordan", "Grace", "Ivan", "Sofia", "Ken"]),
                ("NAME2", "name", &["Sam", "Lucy", "Peter", "Anna", "Wang Fang", "Hugo"]),
                ("PLACE", "location", &["zoo", "park", "museum", "beach", "library", "station", "market"]),
                ("CITY", "location", &["Paris", "Berlin", "Tokyo", "London", "Beijing", "Cairo", "Lima", "Phoenix", "Oslo"]),
                ("TIME", "time", &["tomorrow", "today", "on Monday", "last week", "in May", "next year", "yesterday", "at noon"]),
                ("COMPANY", "company", &["Apple", "Acme Corp", "Globex", "Initech", "Hooli", "Umbrella Inc", "Stark Labs", "Tencent"]),
            ],
        )
    }

    /// Retail style; private type `product`.
    pub fn shop() -> Self {
        grammar(
            "synth_shop",
            &[
                "NAME bought a PRODUCT in CITY.",
                "The PRODUCT sold out TIME.",
                "NAME returned the PRODUCT TIME.",
                "A new PRODUCT arrives in CITY TIME.",
                "NAME loves the PRODUCT.",
                "NAME ordered a PRODUCT and a PRODUCT2 TIME.",
                "Delivery to CITY takes two days.",
                "NAME will pick up the PRODUCT at the PLACE.",
                "Free shipping on all orders.",
                "The store closes early.",
            ],
            &[
                ("NAME", "name", &["Tom", "Alice", "Bob", "Maria", "Paris", "Li Na", "Emma", "Noah", "Zoe", "Raj"]),
                ("PRODUCT", "product", &["laptop", "blender", "Apple", "kettle", "tablet", "camera", "desk lamp", "rice cooker"]),
                ("PRODUCT2", "product", &["mouse", "charger", "teapot", "backpack", "phone case"]),
                ("PLACE", "location", &["mall", "station", "market", "airport"]),
                ("CITY", "location", &["Berlin", "Tokyo", "Madrid", "Beijing", "Seoul", "Lima", "Dubai"]),
                ("TIME", "time", &["tomorrow", "today", "on Friday", "last night", "in June", "this morning", "yesterday"]),
            ],
        )
    }

    /// Cinema style; private type `movie`.
    pub fn film() -> Self {
        grammar(
            "synth_film",
            &[
                "NAME starred in MOVIE.",
                "MOVIE was filmed in CITY.",
                "NAME watched MOVIE TIME.",
                "MOVIE opens in CITY TIME.",
                "NAME directed MOVIE in CITY.",
                "Critics loved MOVIE.",
                "NAME flew to CITY TIME.",
                "The theater was full.",
            ],
            &[
                ("NAME", "name", &["Tom", "Alice", "Maria", "Ken", "Ava", "Leo", "Mia", "Yuki"]),
                ("MOVIE", "movie", &["Phoenix", "Red Harbor", "Silent River", "The Last Train", "Blue Moon", "Iron Garden", "Night Owl"]),
                ("CITY", "location", &["Paris", "Rome", "Tokyo", "Jordan", "Cairo", "Vienna", "Seoul"]),
                ("TIME", "time", &["tomorrow", "today", "on Sunday", "last year", "in July", "tonight", "yesterday"]),
            ],
        )
    }
}

fn grammar(dataset_id: &str, templates: &[&str], slots: &[(&str, &str, &[&str])]) -> Grammar {
    Grammar {
        dataset_id: dataset_id.to_string(),
        templates: templates.iter().map(|s| s.to_string()).collect(),
        slots: slots
            .iter()
            .map(|(k, e, f)| {
                (k.to_string(), Slot { entity_id: e.to_string(), fillers: f.iter().map(|s| s.to_string()).collect() })
            })
            .collect(),
    }
}

/// The three desk-scale grammars: shared `name`/`location`/`time` plus one
/// private type each.
pub fn default_grammars() -> Vec<Grammar> {
    vec![Grammar::news(), Grammar::shop(), Grammar::film()]
}

/// The six entity types used by the synthetic corpora, with one dataset per
/// default grammar.
pub fn synthetic_registry() -> Registry {
    let bundled = Registry::bundled();
    let grammars = default_grammars();
    let mut ids: Vec<String> = Vec::new();
    let mut datasets = Vec::new();
    for g in &grammars {
        let mut entity_ids: Vec<String> = Vec::new();
        for canonical in ["name", "location", "time"] {
            if g.slots.values().any(|s| s.entity_id == canonical) {
                entity_ids.push(canonical.to_string());
            }
        }
        for s in g.slots.values() {
            if !entity_ids.contains(&s.entity_id) {
                entity_ids.push(s.entity_id.clone());
            }
        }
        for e in &entity_ids {
            if !ids.contains(e) {
                ids.push(e.clone());
            }
        }
        datasets.push(DatasetSpec {
            id: g.dataset_id.clone(),
            entity_ids,
            split_policy: SplitPolicy::Provided,
            tags: BTreeMap::new(),
        });
    }
    let types = ids.iter().map(|id| bundled.entity(id).expect("bundled type").clone()).collect();
    Registry::new(types, datasets).expect("synthetic registry is valid")
}

/// Generates `n` sentences; a pure function of `(grammar, n, seed)`.
pub fn synth_generate(grammar: &Grammar, registry: &Registry, n: usize, seed: u64) -> Result<Vec<AnnotatedSentence>> {
    if n == 0 {
        return Err(Error::invalid("synth_generate needs n >= 1"));
    }
    grammar.validate(registry)?;
    let parsed: Vec<Vec<Piece>> = grammar.templates.iter().map(|t| pieces(t, &grammar.slots)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let template = &parsed[rng.random_range(0..parsed.len())];
        let mut text = String::new();
        let mut chars = 0;
        let mut mentions = Vec::new();
        for piece in template {
            match piece {
                Piece::Lit(s) => {
                    text.push_str(s);
                    chars += s.chars().count();
                }
                Piece::Slot(key) => {
                    let slot = &grammar.slots[*key];
                    let filler = &slot.fillers[rng.random_range(0..slot.fillers.len())];
                    let len = filler.chars().count();
                    mentions.push(Mention::new(slot.entity_id.clone(), filler.clone(), chars, chars + len));
                    text.push_str(filler);
                    chars += len;
                }
            }
        }
        out.push(AnnotatedSentence { text, mentions, dataset_id: grammar.dataset_id.clone() });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::check_mentions;

    fn single_template() -> Grammar {
        grammar(
            "synth_news",
            &["NAME visits LOC on TIME"],
            &[("NAME", "name", &["Tom"]), ("LOC", "location", &["Rome", "Oslo"]), ("TIME", "time", &["Monday"])],
        )
    }

    #[test]
    fn three_slot_template() {
        let r = synthetic_registry();
        let s = synth_generate(&single_template(), &r, 1, 7).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].mentions.len(), 3);
        check_mentions(&s[0].text, &s[0].mentions, 0, true).unwrap();
        assert_eq!(s[0].dataset_id, "synth_news");
    }

    #[test]
    fn zero_count_is_an_error() {
        assert!(synth_generate(&single_template(), &synthetic_registry(), 0, 7).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let r = synthetic_registry();
        for g in default_grammars() {
            assert_eq!(synth_generate(&g, &r, 50, 3).unwrap(), synth_generate(&g, &r, 50, 3).unwrap());
        }
    }

    #[test]
    fn unknown_entity_is_rejected() {
        let mut g = single_template();
        g.slots.get_mut("NAME").unwrap().entity_id = "xyz".into();
        assert!(matches!(synth_generate(&g, &synthetic_registry(), 1, 0), Err(Error::UnknownEntity(_))));
    }

    #[test]
    fn uppercase_words_that_are_not_slots_stay_literal() {
        let g = grammar("synth_news", &["CEO NAME"], &[("NAME", "name", &["Tom"])]);
        let s = synth_generate(&g, &synthetic_registry(), 1, 0).unwrap();
        assert_eq!(s[0].text, "CEO Tom");
        assert_eq!(s[0].mentions, vec![Mention::new("name", "Tom", 4, 7)]);
    }

    #[test]
    fn registry_shape() {
        let r = synthetic_registry();
        assert_eq!(r.entity_types().len(), 6);
        let ids: Vec<&str> = r.entities_of("synth_shop").unwrap().iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["name", "location", "time", "product"]);
    }

    #[test]
    fn grammars_share_ambiguous_fillers() {
        let g = default_grammars();
        let (news, shop, film) = (g[0].filler_types(), g[1].filler_types(), g[2].filler_types());
        assert_eq!((news["Apple"], shop["Apple"]), ("company", "product"));
        assert_eq!((news["Paris"], shop["Paris"]), ("location", "name"));
        assert_eq!((news["Phoenix"], film["Phoenix"]), ("location", "movie"));
        assert_eq!((news["Jordan"], film["Jordan"]), ("name", "location"));
    }
}
