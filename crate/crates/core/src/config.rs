//! Key-value text configuration: `key = value` lines, `#` comments.
//! CLI overrides are folded into the same map, so a run's config snapshot is
//! always the single source of truth for its content hash.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::category::Category;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigMap {
    pub values: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<ConfigMap> {
        let mut values = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Validation(format!(
                "config line {} is not `key = value`: `{line}`",
                idx + 1
            )))?;
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(ConfigMap { values })
    }

    pub fn from_file(path: &Path) -> Result<ConfigMap> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Validation(format!("config is missing required key `{key}`")))
    }

    pub fn get_path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    pub fn require_existing_path(&self, key: &str) -> Result<PathBuf> {
        let path = PathBuf::from(self.require(key)?);
        if !path.exists() {
            return Err(Error::Validation(format!(
                "config `{key}` points to missing file {}",
                path.display()
            )));
        }
        Ok(path)
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                Error::Validation(format!("config `{key}` is not an integer: `{v}`"))
            }),
        }
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.get_u64(key, default as u64)? as usize)
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                Error::Validation(format!("config `{key}` is not a number: `{v}`"))
            }),
        }
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(v) => Err(Error::Validation(format!(
                "config `{key}` is not a boolean: `{v}`"
            ))),
        }
    }

    /// Parse a category list: `all` or a comma-separated list of keys.
    pub fn get_categories(&self, key: &str) -> Result<Vec<Category>> {
        match self.get(key) {
            None | Some("all") => Ok(crate::category::ALL_CATEGORIES.to_vec()),
            Some(list) => {
                let mut categories = vec![Category::Base];
                for part in list.split(',') {
                    let part = part.trim();
                    if part.is_empty() {
                        continue;
                    }
                    let cat = Category::from_key(part).ok_or_else(|| {
                        Error::Validation(format!("unknown category `{part}` in `{key}`"))
                    })?;
                    if !categories.contains(&cat) {
                        categories.push(cat);
                    }
                }
                if categories.len() < 2 {
                    return Err(Error::Validation(
                        "category list needs at least one non-base category".into(),
                    ));
                }
                Ok(categories)
            }
        }
    }

    /// Canonical JSON of the map; its SHA-256 names the run.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&self.values).expect("string map serializes")
    }

    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_comments_and_blanks() {
        let cfg = ConfigMap::parse("# comment\ntask = qa\n\nseed = 7\nout = runs/a b\n").unwrap();
        assert_eq!(cfg.get("task"), Some("qa"));
        assert_eq!(cfg.get_u64("seed", 0).unwrap(), 7);
        assert_eq!(cfg.get("out"), Some("runs/a b"));
    }

    #[test]
    fn rejects_lines_without_equals() {
        assert!(ConfigMap::parse("task qa").is_err());
    }

    #[test]
    fn category_lists_parse_and_keep_base_first() {
        let cfg = ConfigMap::parse("categories = male,low_income").unwrap();
        let cats = cfg.get_categories("categories").unwrap();
        assert_eq!(
            cats,
            vec![Category::Base, Category::Male, Category::LowIncome]
        );
        let all = ConfigMap::parse("categories = all")
            .unwrap()
            .get_categories("categories")
            .unwrap();
        assert_eq!(all.len(), 21);
    }

    #[test]
    fn hash_is_stable_and_order_independent() {
        let a = ConfigMap::parse("a = 1\nb = 2").unwrap();
        let b = ConfigMap::parse("b = 2\na = 1").unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
    }
}
