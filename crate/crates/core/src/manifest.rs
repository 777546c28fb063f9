//! Plain-text `key = value` run manifests. Keys keep insertion order so two
//! manifests from identical runs diff cleanly.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Keys that differ between otherwise identical runs.
pub const VOLATILE_KEYS: &[&str] = &["created_at"];

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot access manifest {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("manifest is missing key `{0}`")]
    MissingKey(String),
    #[error("manifest key `{key}` has unparseable value `{value}`")]
    BadValue { key: String, value: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets `key`, replacing an existing value in place.
    pub fn set(&mut self, key: &str, value: impl fmt::Display) -> &mut Self {
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, ManifestError> {
        self.get(key)
            .ok_or_else(|| ManifestError::MissingKey(key.to_string()))
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<T, ManifestError> {
        let v = self.require(key)?;
        v.parse().map_err(|_| ManifestError::BadValue {
            key: key.to_string(),
            value: v.to_string(),
        })
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Copy without the keys listed in [`VOLATILE_KEYS`].
    pub fn without_volatile(&self) -> Manifest {
        Manifest {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| !VOLATILE_KEYS.contains(&k.as_str()))
                .cloned()
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        std::fs::write(path, self.to_string()).map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        text.parse()
    }
}

impl fmt::Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

impl FromStr for Manifest {
    type Err = ManifestError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut m = Manifest::new();
        for (n, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (k, v) = trimmed
                .split_once('=')
                .ok_or_else(|| ManifestError::Malformed {
                    line: n + 1,
                    reason: "expected `key = value`".into(),
                })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(ManifestError::Malformed {
                    line: n + 1,
                    reason: "empty key".into(),
                });
            }
            m.set(k, v.trim());
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_keeps_order() {
        let mut m = Manifest::new();
        m.set("backend_id", "distilbert")
            .set("learning_rate", 5e-5)
            .set("epochs", 4);
        let back: Manifest = m.to_string().parse().unwrap();
        assert_eq!(back, m);
        assert_eq!(back.entries()[1].0, "learning_rate");
        assert_eq!(back.parse_value::<f64>("learning_rate").unwrap(), 5e-5);
    }

    #[test]
    fn set_replaces_in_place() {
        let mut m = Manifest::new();
        m.set("a", 1).set("b", 2).set("a", 3);
        assert_eq!(m.to_string(), "a = 3\nb = 2\n");
    }

    #[test]
    fn values_may_contain_equals() {
        let m: Manifest = "ref = a=b\n# note\n\n".parse().unwrap();
        assert_eq!(m.get("ref"), Some("a=b"));
    }

    #[test]
    fn malformed_and_missing() {
        assert!(matches!(
            "nope".parse::<Manifest>(),
            Err(ManifestError::Malformed { line: 1, .. })
        ));
        let m: Manifest = "x = y".parse().unwrap();
        assert!(matches!(m.require("z"), Err(ManifestError::MissingKey(_))));
        assert!(matches!(
            m.parse_value::<u32>("x"),
            Err(ManifestError::BadValue { .. })
        ));
    }

    #[test]
    fn volatile_keys_are_dropped() {
        let mut a = Manifest::new();
        a.set("seed", 1).set("created_at", "t1");
        let mut b = Manifest::new();
        b.set("seed", 1).set("created_at", "t2");
        assert_eq!(a.without_volatile(), b.without_volatile());
    }
}
