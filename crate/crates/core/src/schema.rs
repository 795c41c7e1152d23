//! Dataset and entity-type registry.
//!
//! The registry is a JSON document:
//!
//! ```json
//! {"entity_types": [{"id", "dataset_tag", "prompt_name", "alias", "group", "granularity"}],
//!  "datasets": [{"id", "entity_ids": [...], "split_policy": {...}, "tags": {...}}]}
//! ```
//!
//! `tags` is optional and maps a dataset's own annotation tags to entity ids
//! where they differ from the entity's `dataset_tag` (for example `ORG` means
//! `company` in one corpus and `organization` in another).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BUNDLED: &str = include_str!("../data/registry.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Name,
    Location,
    Organisation,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Coarse,
    Fine,
    UltraFine,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityType {
    pub id: String,
    pub dataset_tag: String,
    pub prompt_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alias: Option<String>,
    pub group: Group,
    pub granularity: Granularity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitPolicy {
    /// The corpus ships its own train/dev/test files.
    Provided,
    /// Dev and test are sampled without replacement; the rest is train.
    Sample { n_dev: usize, n_test: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub id: String,
    pub entity_ids: Vec<String>,
    pub split_policy: SplitPolicy,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
}

/// Which display string represents an entity type in prompts and targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NameStyle {
    /// The registry's `prompt_name` (Chinese for the bundled registry).
    #[default]
    Prompt,
    /// The English `alias`, falling back to `prompt_name` when absent.
    Alias,
}

impl FromStr for NameStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prompt" => Ok(NameStyle::Prompt),
            "alias" => Ok(NameStyle::Alias),
            other => Err(Error::invalid(format!("unknown name style `{other}`"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RegistryDoc {
    entity_types: Vec<EntityType>,
    datasets: Vec<DatasetSpec>,
}

/// Validated, immutable registry of entity types and datasets.
#[derive(Debug, Clone)]
pub struct Registry {
    entity_types: Vec<EntityType>,
    datasets: Vec<DatasetSpec>,
    by_id: HashMap<String, usize>,
    dataset_index: HashMap<String, usize>,
}

impl PartialEq for Registry {
    fn eq(&self, other: &Self) -> bool {
        self.entity_types == other.entity_types && self.datasets == other.datasets
    }
}

impl Registry {
    pub fn new(entity_types: Vec<EntityType>, datasets: Vec<DatasetSpec>) -> Result<Self> {
        let mut by_id = HashMap::new();
        let mut names = BTreeSet::new();
        let mut aliases = BTreeSet::new();
        for (i, e) in entity_types.iter().enumerate() {
            if by_id.insert(e.id.clone(), i).is_some() {
                return Err(Error::Duplicate { kind: "entity id", id: e.id.clone() });
            }
            if !names.insert(e.prompt_name.as_str()) {
                return Err(Error::Duplicate { kind: "prompt name", id: e.prompt_name.clone() });
            }
            if let Some(a) = &e.alias {
                if !aliases.insert(a.as_str()) {
                    return Err(Error::Duplicate { kind: "alias", id: a.clone() });
                }
            }
            if e.id.is_empty() || e.prompt_name.is_empty() {
                return Err(Error::invalid("entity id and prompt_name must be non-empty"));
            }
        }
        let mut dataset_index = HashMap::new();
        let mut used = BTreeSet::new();
        for (i, d) in datasets.iter().enumerate() {
            if dataset_index.insert(d.id.clone(), i).is_some() {
                return Err(Error::Duplicate { kind: "dataset id", id: d.id.clone() });
            }
            if d.entity_ids.is_empty() {
                return Err(Error::invalid(format!("dataset `{}` declares no entity types", d.id)));
            }
            let mut seen = BTreeSet::new();
            for id in &d.entity_ids {
                if !by_id.contains_key(id) {
                    return Err(Error::DanglingReference { dataset: d.id.clone(), entity: id.clone() });
                }
                if !seen.insert(id.as_str()) {
                    return Err(Error::Duplicate { kind: "dataset entity", id: format!("{}:{id}", d.id) });
                }
                used.insert(id.as_str());
            }
            for target in d.tags.values() {
                if !seen.contains(target.as_str()) {
                    return Err(Error::DanglingReference { dataset: d.id.clone(), entity: target.clone() });
                }
            }
        }
        if let Some(orphan) = entity_types.iter().find(|e| !used.contains(e.id.as_str())) {
            return Err(Error::OrphanEntity(orphan.id.clone()));
        }
        Ok(Self { entity_types, datasets, by_id, dataset_index })
    }

    /// The registry of the eight public Chinese corpora and their 37 types.
    pub fn bundled() -> Self {
        Self::from_json_str(BUNDLED).expect("bundled registry is valid")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let s = s.strip_prefix('\u{feff}').unwrap_or(s);
        let doc: RegistryDoc = serde_json::from_str(s).map_err(|e| Error::from_json(e, 0))?;
        Self::new(doc.entity_types, doc.datasets)
    }

    pub fn to_json_string(&self) -> String {
        let doc = RegistryDoc { entity_types: self.entity_types.clone(), datasets: self.datasets.clone() };
        serde_json::to_string_pretty(&doc).expect("registry serializes")
    }

    /// Same entity types with extra datasets appended (e.g. synthetic corpora).
    pub fn with_datasets(&self, extra: impl IntoIterator<Item = DatasetSpec>) -> Result<Self> {
        let mut datasets = self.datasets.clone();
        datasets.extend(extra);
        Self::new(self.entity_types.clone(), datasets)
    }

    pub fn entity_types(&self) -> &[EntityType] {
        &self.entity_types
    }

    pub fn datasets(&self) -> &[DatasetSpec] {
        &self.datasets
    }

    pub fn entity(&self, id: &str) -> Option<&EntityType> {
        self.by_id.get(id).map(|&i| &self.entity_types[i])
    }

    pub fn require_entity(&self, id: &str) -> Result<&EntityType> {
        self.entity(id).ok_or_else(|| Error::UnknownEntity(id.to_string()))
    }

    pub fn dataset(&self, id: &str) -> Result<&DatasetSpec> {
        self.dataset_index
            .get(id)
            .map(|&i| &self.datasets[i])
            .ok_or_else(|| Error::UnknownDataset(id.to_string()))
    }

    /// The dataset's entity types in declaration order, which is also the
    /// canonical prompt order.
    pub fn entities_of(&self, dataset_id: &str) -> Result<Vec<&EntityType>> {
        let d = self.dataset(dataset_id)?;
        Ok(d.entity_ids.iter().map(|id| &self.entity_types[self.by_id[id]]).collect())
    }

    /// Resolves an annotation tag as used inside `dataset_id`: explicit tag
    /// overrides first, then the dataset's entities by `dataset_tag`, then by id.
    pub fn resolve_tag(&self, dataset_id: &str, tag: &str) -> Result<Option<&EntityType>> {
        let d = self.dataset(dataset_id)?;
        if let Some(id) = d.tags.get(tag) {
            return Ok(self.entity(id));
        }
        let members = || d.entity_ids.iter().map(|id| &self.entity_types[self.by_id[id]]);
        Ok(members().find(|e| e.dataset_tag == tag).or_else(|| members().find(|e| e.id == tag)))
    }

    pub fn display_name<'a>(&'a self, e: &'a EntityType, style: NameStyle) -> &'a str {
        match style {
            NameStyle::Prompt => &e.prompt_name,
            NameStyle::Alias => e.alias.as_deref().unwrap_or(&e.prompt_name),
        }
    }
}

/// Reads and validates a registry file.
pub fn load_registry(path: impl AsRef<Path>) -> Result<Registry> {
    Registry::from_json_str(&std::fs::read_to_string(path)?)
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::Name => "name",
            Group::Location => "location",
            Group::Organisation => "organisation",
            Group::Other => "other",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(es: &[&EntityType]) -> Vec<String> {
        es.iter().map(|e| format!("{}→{}", e.dataset_tag, e.prompt_name)).collect()
    }

    #[test]
    fn bundled_registry_has_37_types_over_8_datasets() {
        let r = Registry::bundled();
        assert_eq!(r.entity_types().len(), 37);
        assert_eq!(r.datasets().len(), 8);
        let mut counts: Vec<usize> = r.datasets().iter().map(|d| d.entity_ids.len()).collect();
        counts.sort();
        assert_eq!(counts, vec![2, 3, 4, 4, 6, 8, 10, 17]);
    }

    #[test]
    fn entities_of_follows_declaration_order() {
        let r = Registry::bundled();
        assert_eq!(ids(&r.entities_of("msra").unwrap()), ["LOC→地点", "PER→名称", "ORG→组织"]);
        assert_eq!(ids(&r.entities_of("ecommerce").unwrap()), ["HP→品牌", "HC→商品"]);
        assert!(matches!(r.entities_of("nope"), Err(Error::UnknownDataset(_))));
    }

    #[test]
    fn tags_resolve_per_dataset() {
        let r = Registry::bundled();
        assert_eq!(r.resolve_tag("msra", "ORG").unwrap().unwrap().id, "organization");
        assert_eq!(r.resolve_tag("resume", "ORG").unwrap().unwrap().id, "company");
        assert_eq!(r.resolve_tag("resume", "LOC").unwrap().unwrap().id, "birthplace");
        assert_eq!(r.resolve_tag("cluener", "address").unwrap().unwrap().id, "location");
        assert!(r.resolve_tag("msra", "XYZ").unwrap().is_none());
    }

    #[test]
    fn singleton_registry_is_valid() {
        let json = r#"{"entity_types":[{"id":"x","dataset_tag":"X","prompt_name":"x","group":"other","granularity":"coarse"}],
                      "datasets":[{"id":"d","entity_ids":["x"],"split_policy":{"kind":"provided"}}]}"#;
        let r = Registry::from_json_str(json).unwrap();
        assert_eq!(r.entity_types().len(), 1);
    }

    #[test]
    fn dangling_reference_is_rejected() {
        let json = r#"{"entity_types":[{"id":"loc","dataset_tag":"LOC","prompt_name":"l","group":"location","granularity":"coarse"}],
                      "datasets":[{"id":"msra","entity_ids":["loc","xyz"],"split_policy":{"kind":"provided"}}]}"#;
        assert!(matches!(Registry::from_json_str(json), Err(Error::DanglingReference { entity, .. }) if entity == "xyz"));
    }

    #[test]
    fn duplicates_and_orphans_are_rejected() {
        let e = |id: &str, name: &str| EntityType {
            id: id.into(),
            dataset_tag: id.into(),
            prompt_name: name.into(),
            alias: None,
            group: Group::Other,
            granularity: Granularity::Coarse,
        };
        let d = |ids: &[&str]| DatasetSpec {
            id: "d".into(),
            entity_ids: ids.iter().map(|s| s.to_string()).collect(),
            split_policy: SplitPolicy::Provided,
            tags: BTreeMap::new(),
        };
        assert!(matches!(Registry::new(vec![e("a", "n"), e("a", "m")], vec![d(&["a"])]), Err(Error::Duplicate { .. })));
        assert!(matches!(Registry::new(vec![e("a", "n"), e("b", "n")], vec![d(&["a", "b"])]), Err(Error::Duplicate { .. })));
        assert!(matches!(Registry::new(vec![e("a", "n"), e("b", "m")], vec![d(&["a"])]), Err(Error::OrphanEntity(_))));
        assert!(matches!(Registry::new(vec![e("a", "n")], vec![d(&["a", "a"])]), Err(Error::Duplicate { .. })));
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = Registry::from_json_str("{\n  \"entity_types\": [,\n}").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn serialize_reload_is_identity() {
        let r = Registry::bundled();
        let again = Registry::from_json_str(&r.to_json_string()).unwrap();
        assert_eq!(r, again);
        assert_eq!(r.to_json_string(), again.to_json_string());
    }

    #[test]
    fn load_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        std::fs::write(&p, Registry::bundled().to_json_string()).unwrap();
        assert_eq!(load_registry(&p).unwrap(), Registry::bundled());
    }
}
