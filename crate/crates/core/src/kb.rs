//! The tracker-company knowledge base.
//!
//! Each [`TrackerEntity`] owns a set of registrable domains and Java package
//! prefixes and may name a parent company. Loading validates the whole
//! document up front (unique ids and claims, resolvable parents, no ownership
//! cycles, consistent acquisition records) so that every query afterwards is
//! infallible apart from unknown ids.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Warning};
use crate::ingest::normalize_host;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Acquisition {
    pub target_id: String,
    pub year: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackerEntity {
    pub entity_id: String,
    pub display_name: String,
    /// Whether the company collects and links user data across first parties.
    /// Non-trackers (CDNs, hosting) stay in the KB for diagnostics only.
    pub is_tracker: bool,
    #[serde(default)]
    pub domains: BTreeSet<String>,
    #[serde(default)]
    pub library_prefixes: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jurisdiction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub founded: Option<i32>,
    #[serde(default)]
    pub acquisitions: Vec<Acquisition>,
}

impl TrackerEntity {
    /// A tracker with no parent and no evidence; mainly for building fixtures.
    pub fn new(entity_id: impl Into<String>) -> Self {
        let entity_id = entity_id.into();
        TrackerEntity {
            display_name: entity_id.clone(),
            entity_id,
            is_tracker: true,
            domains: BTreeSet::new(),
            library_prefixes: BTreeSet::new(),
            parent_id: None,
            jurisdiction: None,
            founded: None,
            acquisitions: Vec::new(),
        }
    }

    pub fn with_domains<I, S>(mut self, domains: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.domains.extend(domains.into_iter().map(Into::into));
        self
    }

    pub fn with_prefixes<I, S>(mut self, prefixes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.library_prefixes
            .extend(prefixes.into_iter().map(Into::into));
        self
    }

    pub fn with_parent(mut self, parent: impl Into<String>) -> Self {
        self.parent_id = Some(parent.into());
        self
    }

    pub fn non_tracker(mut self) -> Self {
        self.is_tracker = false;
        self
    }
}

const ENTITY_FIELDS: &[&str] = &[
    "entity_id",
    "display_name",
    "is_tracker",
    "domains",
    "library_prefixes",
    "parent_id",
    "jurisdiction",
    "founded",
    "acquisitions",
];

#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    entities: BTreeMap<String, TrackerEntity>,
    domain_index: BTreeMap<String, String>,
    prefix_index: BTreeMap<String, String>,
    warnings: Vec<Warning>,
}

impl PartialEq for KnowledgeBase {
    fn eq(&self, other: &Self) -> bool {
        self.entities == other.entities
            && self.domain_index == other.domain_index
            && self.prefix_index == other.prefix_index
    }
}

#[derive(Serialize)]
struct KbDocument<'a> {
    entities: Vec<&'a TrackerEntity>,
}

pub fn load_kb(path: impl AsRef<Path>) -> Result<KnowledgeBase> {
    KnowledgeBase::load(path)
}

impl KnowledgeBase {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Parses a KB document (`{"entities": [...]}`). Unknown fields are
    /// ignored and reported through [`KnowledgeBase::warnings`].
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: serde_json::Value = serde_json::from_str(text)?;
        let obj = doc
            .as_object()
            .ok_or_else(|| Error::KnowledgeBase("document must be a JSON object".into()))?;

        let mut warnings = Vec::new();
        for key in obj.keys().filter(|k| k.as_str() != "entities") {
            warnings.push(Warning::new(
                "kb",
                format!("ignored unknown top-level field {key:?}"),
            ));
        }
        let list = match obj.get("entities") {
            Some(serde_json::Value::Array(list)) => list.as_slice(),
            Some(_) => return Err(Error::KnowledgeBase("`entities` must be an array".into())),
            None => return Err(Error::KnowledgeBase("missing `entities` array".into())),
        };

        let mut entities = Vec::with_capacity(list.len());
        for (i, value) in list.iter().enumerate() {
            if let Some(fields) = value.as_object() {
                let id = fields
                    .get("entity_id")
                    .and_then(|v| v.as_str())
                    .unwrap_or("<unnamed>");
                for key in fields
                    .keys()
                    .filter(|k| !ENTITY_FIELDS.contains(&k.as_str()))
                {
                    warnings.push(Warning::new(
                        format!("kb entity {id:?}"),
                        format!("ignored unknown field {key:?}"),
                    ));
                }
            }
            let entity: TrackerEntity = serde_json::from_value(value.clone())
                .map_err(|e| Error::KnowledgeBase(format!("entity #{}: {e}", i + 1)))?;
            entities.push(entity);
        }

        let mut kb = Self::from_entities(entities)?;
        warnings.append(&mut kb.warnings);
        kb.warnings = warnings;
        Ok(kb)
    }

    pub fn from_entities(entities: impl IntoIterator<Item = TrackerEntity>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for mut entity in entities {
            if entity.entity_id.trim().is_empty() {
                return Err(Error::KnowledgeBase("empty entity_id".into()));
            }
            entity.domains = normalize_domains(&entity)?;
            entity.library_prefixes = normalize_prefixes(&entity)?;
            let id = entity.entity_id.clone();
            if map.insert(id.clone(), entity).is_some() {
                return Err(Error::KnowledgeBase(format!("duplicate entity_id {id:?}")));
            }
        }

        let domain_index = build_index(&map, |e| &e.domains, "domain")?;
        let prefix_index = build_index(&map, |e| &e.library_prefixes, "library prefix")?;
        check_parents(&map)?;
        check_acquisitions(&map)?;

        let warnings = lint_display_names(&map);
        Ok(KnowledgeBase {
            entities: map,
            domain_index,
            prefix_index,
            warnings,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = KbDocument {
            entities: self.entities.values().collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn warnings(&self) -> &[Warning] {
        &self.warnings
    }

    pub fn entity(&self, id: &str) -> Option<&TrackerEntity> {
        self.entities.get(id)
    }

    pub fn entities(&self) -> impl Iterator<Item = &TrackerEntity> {
        self.entities.values()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entities.contains_key(id)
    }

    pub fn display_name<'a>(&'a self, id: &'a str) -> &'a str {
        self.entities
            .get(id)
            .map_or(id, |e| e.display_name.as_str())
    }

    pub fn domain_index(&self) -> &BTreeMap<String, String> {
        &self.domain_index
    }

    pub fn prefix_index(&self) -> &BTreeMap<String, String> {
        &self.prefix_index
    }

    fn parent_of(&self, id: &str) -> Option<&str> {
        self.entities.get(id).and_then(|e| e.parent_id.as_deref())
    }

    /// Follows parent links to the root. An entity without a parent is its
    /// own ultimate parent.
    pub fn ultimate_parent<'a>(&'a self, id: &str) -> Result<&'a str> {
        let (mut current, _) = self
            .entities
            .get_key_value(id)
            .ok_or_else(|| Error::UnknownEntity(id.to_string()))?;
        // Load rejects cycles, so this terminates within len() steps.
        while let Some(parent) = self.parent_of(current) {
            current = self
                .entities
                .get_key_value(parent)
                .map(|(k, _)| k)
                .expect("validated parent");
        }
        Ok(current.as_str())
    }

    /// True when `ancestor` appears on the parent chain above `id`
    /// (excluding `id` itself).
    pub fn is_owned_by(&self, id: &str, ancestor: &str) -> bool {
        let mut current = self.parent_of(id);
        while let Some(p) = current {
            if p == ancestor {
                return true;
            }
            current = self.parent_of(p);
        }
        false
    }

    /// Exact lookup of a registrable domain.
    pub fn match_host(&self, domain: &str) -> Option<&str> {
        self.domain_index.get(domain).map(String::as_str)
    }

    /// Attributes a full hostname by trying the host itself and then each
    /// parent domain on label boundaries, longest first. For a registrable
    /// domain this is the same as [`KnowledgeBase::match_host`].
    pub fn resolve_host(&self, host: &str) -> Option<&str> {
        let mut candidate = host;
        loop {
            if let Some(id) = self.match_host(candidate) {
                return Some(id);
            }
            match candidate.split_once('.') {
                Some((_, rest)) if !rest.is_empty() => candidate = rest,
                _ => return None,
            }
        }
    }

    /// Longest library prefix that matches `package` on whole-label
    /// boundaries: `com.flurry` matches `com.flurry.android` but not
    /// `com.flurrytools`.
    pub fn match_library(&self, package: &str) -> Option<&str> {
        let package = package.trim();
        let mut candidate = package;
        loop {
            if let Some(id) = self.prefix_index.get(candidate) {
                return Some(id);
            }
            match candidate.rsplit_once('.') {
                Some((head, _)) if !head.is_empty() => candidate = head,
                _ => return None,
            }
        }
    }

    /// A copy of this KB in which each listed entity no longer has a parent
    /// (its own subtree moves with it). Acquisition records pointing at the
    /// severed entities are dropped.
    pub fn severed<S: AsRef<str>>(&self, ids: &[S]) -> Self {
        let cut: HashSet<&str> = ids.iter().map(AsRef::as_ref).collect();
        let mut kb = self.clone();
        for entity in kb.entities.values_mut() {
            if cut.contains(entity.entity_id.as_str()) {
                entity.parent_id = None;
            }
            entity
                .acquisitions
                .retain(|a| !cut.contains(a.target_id.as_str()));
        }
        kb
    }
}

fn normalize_domains(entity: &TrackerEntity) -> Result<BTreeSet<String>> {
    entity
        .domains
        .iter()
        .map(|d| {
            normalize_host(d)
                .map_err(|e| Error::KnowledgeBase(format!("entity {:?}: {e}", entity.entity_id)))
        })
        .collect()
}

fn normalize_prefixes(entity: &TrackerEntity) -> Result<BTreeSet<String>> {
    entity
        .library_prefixes
        .iter()
        .map(|p| {
            let p = p.trim();
            if p.is_empty() || p.split('.').any(str::is_empty) {
                Err(Error::KnowledgeBase(format!(
                    "entity {:?}: malformed library prefix {p:?}",
                    entity.entity_id
                )))
            } else {
                Ok(p.to_string())
            }
        })
        .collect()
}

fn build_index(
    entities: &BTreeMap<String, TrackerEntity>,
    keys: impl Fn(&TrackerEntity) -> &BTreeSet<String>,
    what: &str,
) -> Result<BTreeMap<String, String>> {
    let mut index: BTreeMap<String, String> = BTreeMap::new();
    for (id, entity) in entities {
        for key in keys(entity) {
            if let Some(prev) = index.insert(key.clone(), id.clone()) {
                return Err(Error::KnowledgeBase(format!(
                    "{what} {key:?} claimed by both {prev:?} and {id:?}"
                )));
            }
        }
    }
    Ok(index)
}

fn check_parents(entities: &BTreeMap<String, TrackerEntity>) -> Result<()> {
    for (id, entity) in entities {
        if let Some(parent) = &entity.parent_id {
            if !entities.contains_key(parent) {
                return Err(Error::KnowledgeBase(format!(
                    "entity {id:?} has unknown parent_id {parent:?}"
                )));
            }
        }
    }

    // Colour-marking walk: 0 unvisited, 1 on the current path, 2 known acyclic.
    let mut state: BTreeMap<&str, u8> = entities.keys().map(|k| (k.as_str(), 0)).collect();
    for start in entities.keys() {
        let mut path: Vec<&str> = Vec::new();
        let mut current = Some(start.as_str());
        while let Some(id) = current {
            match state[id] {
                2 => break,
                1 => {
                    let from = path.iter().position(|p| *p == id).unwrap_or(0);
                    let mut cycle: Vec<&str> = path[from..].to_vec();
                    cycle.push(id);
                    return Err(Error::KnowledgeBase(format!(
                        "parent cycle: {}",
                        cycle.join(" -> ")
                    )));
                }
                _ => {}
            }
            state.insert(id, 1);
            path.push(id);
            current = entities[id].parent_id.as_deref();
        }
        for id in path {
            state.insert(id, 2);
        }
    }
    Ok(())
}

fn check_acquisitions(entities: &BTreeMap<String, TrackerEntity>) -> Result<()> {
    for (id, entity) in entities {
        for acq in &entity.acquisitions {
            if !entities.contains_key(&acq.target_id) {
                return Err(Error::KnowledgeBase(format!(
                    "entity {id:?} lists acquisition of unknown {:?}",
                    acq.target_id
                )));
            }
            let mut current = entities[&acq.target_id].parent_id.as_deref();
            let mut owned = false;
            while let Some(p) = current {
                if p == id {
                    owned = true;
                    break;
                }
                current = entities[p].parent_id.as_deref();
            }
            if !owned {
                return Err(Error::KnowledgeBase(format!(
                    "entity {id:?} lists acquisition of {:?}, whose parent chain does not lead to it",
                    acq.target_id
                )));
            }
        }
    }
    Ok(())
}

fn lint_display_names(entities: &BTreeMap<String, TrackerEntity>) -> Vec<Warning> {
    let mut seen: BTreeMap<String, &str> = BTreeMap::new();
    let mut warnings = Vec::new();
    for (id, entity) in entities {
        let key: String = entity
            .display_name
            .chars()
            .filter(|c| !c.is_whitespace())
            .flat_map(char::to_lowercase)
            .collect();
        if let Some(prev) = seen.get(&key) {
            warnings.push(Warning::new(
                format!("kb entity {id:?}"),
                format!(
                    "display name {:?} nearly duplicates entity {prev:?}",
                    entity.display_name
                ),
            ));
        } else {
            seen.insert(key, id);
        }
    }
    warnings
}
