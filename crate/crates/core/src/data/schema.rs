//! Label schema: host regrouping and subtype class lists.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::SCHEMA_FORMAT_VERSION;

const DEFAULT_SCHEMA: &str = include_str!("../../data/default_schema.toml");

/// Parsed HA/NA subtype pair after merges, e.g. `("H5", "N1")`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subtype {
    pub ha: String,
    pub na: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSchema {
    pub version: u32,
    pub host_categories: Vec<String>,
    pub ha_classes: Vec<String>,
    pub na_classes: Vec<String>,
    #[serde(default)]
    pub subtype_merge: BTreeMap<String, String>,
    #[serde(default)]
    pub host_map: BTreeMap<String, String>,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
}

impl PartialEq for LabelSchema {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version
            && self.host_categories == other.host_categories
            && self.ha_classes == other.ha_classes
            && self.na_classes == other.na_classes
            && self.subtype_merge == other.subtype_merge
            && self.host_map == other.host_map
    }
}

fn norm_key(s: &str) -> String {
    s.trim().to_lowercase()
}

impl LabelSchema {
    /// The bundled 25-category schema.
    pub fn default_schema() -> Self {
        Self::from_toml_str(DEFAULT_SCHEMA).expect("bundled schema is valid")
    }

    pub fn new(
        host_categories: Vec<String>,
        ha_classes: Vec<String>,
        na_classes: Vec<String>,
        host_map: BTreeMap<String, String>,
        subtype_merge: BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut s = LabelSchema {
            version: SCHEMA_FORMAT_VERSION,
            host_categories,
            ha_classes,
            na_classes,
            subtype_merge,
            host_map,
            lookup: HashMap::new(),
        };
        s.finish()?;
        Ok(s)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut s: LabelSchema =
            toml::from_str(text).map_err(|e| Error::Config(format!("label schema: {e}")))?;
        s.finish()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    fn finish(&mut self) -> Result<()> {
        if self.version != SCHEMA_FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported schema version {}", self.version)));
        }
        for (what, list) in [
            ("host_categories", &self.host_categories),
            ("ha_classes", &self.ha_classes),
            ("na_classes", &self.na_classes),
        ] {
            if list.is_empty() {
                return Err(Error::Config(format!("{what} is empty")));
            }
            let mut seen = HashSet::new();
            for name in list {
                if !seen.insert(name) {
                    return Err(Error::Config(format!("duplicate entry {name:?} in {what}")));
                }
            }
        }
        let mut lookup = HashMap::new();
        for (i, c) in self.host_categories.iter().enumerate() {
            lookup.insert(norm_key(c), i);
        }
        for (raw, cat) in &self.host_map {
            let idx = self
                .host_index(cat)
                .ok_or_else(|| Error::Config(format!("host_map target {cat:?} is not a host category")))?;
            lookup.insert(norm_key(raw), idx);
        }
        for (from, to) in &self.subtype_merge {
            if !self.ha_classes.contains(to) && !self.na_classes.contains(to) {
                return Err(Error::Config(format!("merge target {to:?} for {from} is not a class")));
            }
        }
        self.lookup = lookup;
        Ok(())
    }

    /// Category for a raw host name, or `None` if the schema does not map it.
    pub fn map_host(&self, raw: &str) -> Option<&str> {
        self.lookup
            .get(&norm_key(raw))
            .map(|&i| self.host_categories[i].as_str())
    }

    pub fn host_index(&self, category: &str) -> Option<usize> {
        self.host_categories.iter().position(|c| c == category)
    }

    pub fn ha_index(&self, class: &str) -> Option<usize> {
        self.ha_classes.iter().position(|c| c == class)
    }

    pub fn na_index(&self, class: &str) -> Option<usize> {
        self.na_classes.iter().position(|c| c == class)
    }

    /// Head sizes `(host, ha, na)`.
    pub fn class_counts(&self) -> [usize; 3] {
        [self.host_categories.len(), self.ha_classes.len(), self.na_classes.len()]
    }

    pub fn head_classes(&self, head: usize) -> &[String] {
        match head {
            0 => &self.host_categories,
            1 => &self.ha_classes,
            _ => &self.na_classes,
        }
    }

    /// Parses strings like `"H5N1"`, applying merges. Fails with a label error
    /// on anything else, including subtypes outside the class lists.
    pub fn parse_subtype(&self, raw: &str) -> Result<Subtype> {
        let (h, n) = split_subtype(raw).ok_or_else(|| Error::Label(format!("unparsable subtype {raw:?}")))?;
        let ha = self.resolve(&format!("H{h}"));
        let na = self.resolve(&format!("N{n}"));
        if self.ha_index(&ha).is_none() {
            return Err(Error::Label(format!("HA subtype {ha} of {raw:?} is not in the schema")));
        }
        if self.na_index(&na).is_none() {
            return Err(Error::Label(format!("NA subtype {na} of {raw:?} is not in the schema")));
        }
        Ok(Subtype { ha, na })
    }

    fn resolve(&self, name: &str) -> String {
        self.subtype_merge.get(name).cloned().unwrap_or_else(|| name.to_string())
    }
}

/// `"H5N1"` → `(5, 1)`, case-insensitive, surrounding whitespace ignored.
pub fn split_subtype(raw: &str) -> Option<(u32, u32)> {
    let s = raw.trim().to_ascii_uppercase();
    let rest = s.strip_prefix('H')?;
    let npos = rest.find('N')?;
    let (h, n) = (&rest[..npos], &rest[npos + 1..]);
    let digits = |x: &str| !x.is_empty() && x.len() <= 3 && x.bytes().all(|b| b.is_ascii_digit());
    if !digits(h) || !digits(n) {
        return None;
    }
    Some((h.parse().ok()?, n.parse().ok()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_schema_has_25_hosts_and_merges() {
        let s = LabelSchema::default_schema();
        assert_eq!(s.host_categories.len(), 25);
        assert_eq!(s.map_host("  Mallard "), Some("Anatidae"));
        assert_eq!(s.map_host("HUMAN"), Some("Human"));
        assert_eq!(s.map_host("host"), None);
        assert_eq!(s.parse_subtype("h5n1").unwrap(), Subtype { ha: "H5".into(), na: "N1".into() });
        assert_eq!(s.parse_subtype("H17N10").unwrap(), Subtype { ha: "H_other".into(), na: "N_other".into() });
        assert!(matches!(s.parse_subtype("H5Nx"), Err(Error::Label(_))));
        assert!(matches!(s.parse_subtype("H19N1"), Err(Error::Label(_))));
        assert!(matches!(s.parse_subtype("mixed"), Err(Error::Label(_))));
    }

    #[test]
    fn toml_round_trip() {
        let s = LabelSchema::default_schema();
        let back = LabelSchema::from_toml_str(&s.to_toml()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.map_host("dog"), Some("Canidae"));
    }

    #[test]
    fn invalid_schemas_are_rejected() {
        let bad_target = r#"
            version = 1
            host_categories = ["A"]
            ha_classes = ["H1"]
            na_classes = ["N1"]
            [host_map]
            "x" = "B"
        "#;
        assert!(matches!(LabelSchema::from_toml_str(bad_target), Err(Error::Config(_))));
        let unknown_key = r#"
            version = 1
            host_categories = ["A"]
            ha_classes = ["H1"]
            na_classes = ["N1"]
            colour = "red"
        "#;
        assert!(LabelSchema::from_toml_str(unknown_key).is_err());
    }

    #[test]
    fn subtype_splitting() {
        assert_eq!(split_subtype("H0N0"), Some((0, 0)));
        assert_eq!(split_subtype(" h10n7 "), Some((10, 7)));
        assert_eq!(split_subtype("H5"), None);
        assert_eq!(split_subtype("HN1"), None);
    }
}
