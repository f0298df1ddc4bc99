//! Feature-vector schema: the frozen, versioned list of feature ids (and
//! their group tags) for a part type. Assembly validates computed values
//! against the schema so every part of one type yields an identically
//! ordered vector, and a silently missing measurement is an error rather
//! than a misaligned column.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    Positioning,
    Dimensional,
    Form,
    Surface,
    Relational,
    DeviationStat,
    Learned,
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FeatureGroup::Positioning => "positioning",
            FeatureGroup::Dimensional => "dimensional",
            FeatureGroup::Form => "form",
            FeatureGroup::Surface => "surface",
            FeatureGroup::Relational => "relational",
            FeatureGroup::DeviationStat => "deviation_stat",
            FeatureGroup::Learned => "learned",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaEntry {
    pub id: String,
    pub group: FeatureGroup,
}

/// Ordered feature list for one part type. The serialized form is the single
/// source of truth for column order in every downstream artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub part_type: String,
    pub version: u32,
    pub entries: Vec<SchemaEntry>,
}

impl FeatureSchema {
    pub fn new(part_type: impl Into<String>, version: u32) -> Self {
        FeatureSchema { part_type: part_type.into(), version, entries: Vec::new() }
    }

    pub fn push(&mut self, id: impl Into<String>, group: FeatureGroup) {
        self.entries.push(SchemaEntry { id: id.into(), group });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    /// Duplicate ids make column order ambiguous.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::SchemaMismatch(format!(
                    "duplicate feature id '{}' in schema for '{}'",
                    e.id, self.part_type
                )));
            }
        }
        Ok(())
    }

    /// Order-sensitive fingerprint over version, part type, ids and groups.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write(self.part_type.as_bytes());
        h.write(&self.version.to_le_bytes());
        for e in &self.entries {
            h.write(e.id.as_bytes());
            h.write(e.group.to_string().as_bytes());
        }
        h.finish()
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::SchemaMismatch(format!("schema serialization failed: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: FeatureSchema =
            toml::from_str(&text).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }
}

/// FNV-1a, 64-bit. Stable across platforms and runs; used for schema and
/// config fingerprints recorded in manifests.
pub struct Fnv1a(u64);

impl Fnv1a {
    pub fn new() -> Self {
        Fnv1a(0xcbf29ce484222325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

/// One part's features in schema order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureVector {
    pub part_type: String,
    pub schema_version: u32,
    pub ids: Vec<String>,
    pub groups: Vec<FeatureGroup>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.ids.iter().position(|i| i == id).map(|k| self.values[k])
    }

    /// Indices of features in one group, in schema order.
    pub fn group_indices(&self, group: FeatureGroup) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .filter_map(|(i, g)| (*g == group).then_some(i))
            .collect()
    }
}

/// Validates computed values against the schema and emits them in schema
/// order. Any schema id absent from `values` is an error naming that id;
/// ids not in the schema, and non-finite values, are errors too.
pub fn assemble_features(
    schema: &FeatureSchema,
    values: &BTreeMap<String, f64>,
) -> Result<FeatureVector> {
    schema.validate()?;
    let mut out = Vec::with_capacity(schema.entries.len());
    let mut groups = Vec::with_capacity(schema.entries.len());
    let mut ids = Vec::with_capacity(schema.entries.len());
    for entry in &schema.entries {
        let v = *values.get(&entry.id).ok_or_else(|| {
            Error::MissingFeature(format!(
                "feature '{}' required by schema '{}' v{} was not computed",
                entry.id, schema.part_type, schema.version
            ))
        })?;
        if !v.is_finite() {
            return Err(Error::SchemaMismatch(format!(
                "feature '{}' is not finite ({v})",
                entry.id
            )));
        }
        ids.push(entry.id.clone());
        groups.push(entry.group);
        out.push(v);
    }
    for id in values.keys() {
        if !schema.entries.iter().any(|e| &e.id == id) {
            return Err(Error::SchemaMismatch(format!(
                "computed feature '{id}' is not in schema '{}' v{}",
                schema.part_type, schema.version
            )));
        }
    }
    Ok(FeatureVector {
        part_type: schema.part_type.clone(),
        schema_version: schema.version,
        ids,
        groups,
        values: out,
    })
}
