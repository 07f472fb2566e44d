//! Replica location service: the authoritative map from logical file names
//! to physical replicas across sites.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vdl::{InvalidName, LogicalFileName};

/// Identifier of a grid site. Nonempty, no whitespace.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct SiteId(String);

impl SiteId {
    pub fn new(value: impl Into<String>) -> Result<Self, InvalidName> {
        let value = value.into();
        if value.is_empty() {
            return Err(InvalidName("site id is empty".into()));
        }
        if value.chars().any(char::is_whitespace) {
            return Err(InvalidName(format!("site id `{value}` contains whitespace")));
        }
        Ok(SiteId(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for SiteId {
    type Err = InvalidName;

    fn from_str(s: &str) -> Result<Self, InvalidName> {
        SiteId::new(s)
    }
}

impl<'de> Deserialize<'de> for SiteId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        SiteId::new(raw).map_err(serde::de::Error::custom)
    }
}

/// One physical copy of a logical file.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Replica {
    pub lfn: LogicalFileName,
    pub site: SiteId,
    pub pfn: String,
}

/// Map from logical file name to its replica set. Absent key means no
/// replicas; empty sets are never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplicaCatalog {
    entries: BTreeMap<LogicalFileName, BTreeSet<(SiteId, String)>>,
}

#[derive(Debug, Error)]
pub enum ReplicaError {
    #[error("IoError: {0}")]
    Io(#[from] std::io::Error),
    #[error("FormatError at line {line}: {message}")]
    Format { line: u32, message: String },
}

impl ReplicaCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Idempotent set insert.
    pub fn register(&mut self, lfn: LogicalFileName, site: SiteId, pfn: impl Into<String>) {
        self.entries
            .entry(lfn)
            .or_default()
            .insert((site, pfn.into()));
    }

    /// All replicas of `lfn`; empty when unknown.
    pub fn lookup(&self, lfn: &LogicalFileName) -> BTreeSet<(SiteId, String)> {
        self.entries.get(lfn).cloned().unwrap_or_default()
    }

    pub fn has_replica(&self, lfn: &LogicalFileName) -> bool {
        self.entries.contains_key(lfn)
    }

    /// Remove every replica of `lfn` held at `site`; the key is dropped when
    /// its set becomes empty. Unknown files are a no-op.
    pub fn unregister(&mut self, lfn: &LogicalFileName, site: &SiteId) {
        if let Some(set) = self.entries.get_mut(lfn) {
            set.retain(|(s, _)| s != site);
            if set.is_empty() {
                self.entries.remove(lfn);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Replica> + '_ {
        self.entries.iter().flat_map(|(lfn, set)| {
            set.iter().map(move |(site, pfn)| Replica {
                lfn: lfn.clone(),
                site: site.clone(),
                pfn: pfn.clone(),
            })
        })
    }

    /// One `<lfn> <site> <pfn>` line per replica, sorted.
    pub fn save(&self, path: &Path) -> Result<(), ReplicaError> {
        let mut text = String::new();
        for replica in self.iter() {
            text.push_str(replica.lfn.as_str());
            text.push(' ');
            text.push_str(replica.site.as_str());
            text.push(' ');
            text.push_str(&replica.pfn);
            text.push('\n');
        }
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ReplicaError> {
        let text = fs::read_to_string(path)?;
        let mut catalog = Self::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx as u32 + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, char::is_whitespace);
            let (lfn, site, pfn) = match (parts.next(), parts.next(), parts.next()) {
                (Some(lfn), Some(site), Some(pfn)) if !pfn.trim().is_empty() => (lfn, site, pfn),
                _ => {
                    return Err(ReplicaError::Format {
                        line: line_no,
                        message: "expected `<lfn> <site> <pfn>`".into(),
                    })
                }
            };
            let lfn = LogicalFileName::new(lfn).map_err(|e| ReplicaError::Format {
                line: line_no,
                message: e.to_string(),
            })?;
            let site = SiteId::new(site).map_err(|e| ReplicaError::Format {
                line: line_no,
                message: e.to_string(),
            })?;
            catalog.register(lfn, site, pfn.trim_end());
        }
        Ok(catalog)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lfn(s: &str) -> LogicalFileName {
        LogicalFileName::new(s).unwrap()
    }

    fn site(s: &str) -> SiteId {
        SiteId::new(s).unwrap()
    }

    #[test]
    fn register_then_lookup() {
        let mut rc = ReplicaCatalog::new();
        rc.register(lfn("eg02_BigJets_1.fz"), site("ufl-hpc"), "/data/eg02_BigJets_1.fz");
        let replicas = rc.lookup(&lfn("eg02_BigJets_1.fz"));
        assert!(replicas.contains(&(site("ufl-hpc"), "/data/eg02_BigJets_1.fz".to_string())));
    }

    #[test]
    fn register_is_idempotent() {
        let mut rc = ReplicaCatalog::new();
        rc.register(lfn("f"), site("a"), "/p");
        let snapshot = rc.clone();
        rc.register(lfn("f"), site("a"), "/p");
        assert_eq!(rc, snapshot);
    }

    #[test]
    fn multiple_sites_accumulate() {
        let mut rc = ReplicaCatalog::new();
        rc.register(lfn("f"), site("a"), "/pa");
        rc.register(lfn("f"), site("b"), "/pb");
        assert_eq!(rc.lookup(&lfn("f")).len(), 2);
    }

    #[test]
    fn unknown_lookup_is_empty() {
        assert!(ReplicaCatalog::new().lookup(&lfn("nothing")).is_empty());
    }

    #[test]
    fn unregister_drops_site_and_empty_keys() {
        let mut rc = ReplicaCatalog::new();
        rc.register(lfn("f"), site("a"), "/pa");
        rc.register(lfn("f"), site("b"), "/pb");
        rc.unregister(&lfn("f"), &site("a"));
        assert_eq!(
            rc.lookup(&lfn("f")),
            BTreeSet::from([(site("b"), "/pb".to_string())])
        );
        rc.unregister(&lfn("f"), &site("b"));
        assert!(rc.lookup(&lfn("f")).is_empty());
        assert!(!rc.has_replica(&lfn("f")));
        // no-op on unknown lfn
        rc.unregister(&lfn("ghost"), &site("a"));
        assert!(rc.is_empty());
    }

    #[test]
    fn save_load_round_trip() {
        let mut rc = ReplicaCatalog::new();
        rc.register(lfn("a.fz"), site("x"), "/data/a.fz");
        rc.register(lfn("a.fz"), site("y"), "/mirror/a.fz");
        rc.register(lfn("b.ntpl"), site("x"), "/data/b.ntpl");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replicas.rls");
        rc.save(&path).unwrap();
        assert_eq!(ReplicaCatalog::load(&path).unwrap(), rc);
    }

    #[test]
    fn load_rejects_short_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.rls");
        std::fs::write(&path, "only two\n").unwrap();
        let err = ReplicaCatalog::load(&path).unwrap_err();
        assert!(matches!(err, ReplicaError::Format { line: 1, .. }));
    }

    fn replica_strategy() -> impl Strategy<Value = Replica> {
        (
            proptest::string::string_regex("[a-z0-9._]{1,10}").unwrap(),
            proptest::string::string_regex("[a-z0-9-]{1,8}").unwrap(),
            proptest::string::string_regex("/[a-z0-9/._-]{0,16}").unwrap(),
        )
            .prop_map(|(l, s, p)| Replica {
                lfn: LogicalFileName::new(l).unwrap(),
                site: SiteId::new(s).unwrap(),
                pfn: p,
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn register_unregister_inverse_when_absent(
            seed in proptest::collection::vec(replica_strategy(), 0..12),
            fresh in replica_strategy(),
        ) {
            let mut rc = ReplicaCatalog::new();
            for r in &seed {
                rc.register(r.lfn.clone(), r.site.clone(), r.pfn.clone());
            }
            // force absence of the probe replica's site entries
            rc.unregister(&fresh.lfn, &fresh.site);
            let before = rc.clone();
            rc.register(fresh.lfn.clone(), fresh.site.clone(), fresh.pfn.clone());
            prop_assert!(rc.lookup(&fresh.lfn).contains(&(fresh.site.clone(), fresh.pfn.clone())));
            rc.unregister(&fresh.lfn, &fresh.site);
            prop_assert_eq!(rc, before);
        }

        #[test]
        fn persistence_round_trip(seed in proptest::collection::vec(replica_strategy(), 0..20)) {
            let mut rc = ReplicaCatalog::new();
            for r in &seed {
                rc.register(r.lfn.clone(), r.site.clone(), r.pfn.clone());
            }
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("rc.rls");
            rc.save(&path).unwrap();
            prop_assert_eq!(ReplicaCatalog::load(&path).unwrap(), rc);
        }
    }
}
