//! Table schemas, column groups, tablets, and the persisted catalog.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use logbase_core::advisor::{self, Column, Partitioning, WorkloadTrace};
use logbase_core::TabletId;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::sync_dir;

pub const CATALOG_FILE: &str = "catalog.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub width: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnGroupDef {
    pub name: String,
    pub columns: Vec<String>,
}

/// A table: its non-key columns and how they are split into column groups.
/// Every group implicitly carries the primary key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub key_width: u32,
    pub columns: Vec<ColumnDef>,
    pub groups: Vec<ColumnGroupDef>,
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.len() <= 64 && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

impl TableSchema {
    /// A table stored as one opaque column group.
    pub fn single_group(table: &str, group: &str) -> Self {
        TableSchema {
            name: table.to_string(),
            key_width: 8,
            columns: Vec::new(),
            groups: vec![ColumnGroupDef { name: group.to_string(), columns: Vec::new() }],
        }
    }

    /// Groups given only by name, with no column metadata.
    pub fn with_groups(table: &str, groups: &[&str]) -> Self {
        TableSchema {
            name: table.to_string(),
            key_width: 8,
            columns: Vec::new(),
            groups: groups.iter().map(|g| ColumnGroupDef { name: g.to_string(), columns: Vec::new() }).collect(),
        }
    }

    /// Uses the partition advisor to derive groups named `g0`, `g1`, ...
    pub fn from_advice(table: &str, key_width: u32, columns: Vec<ColumnDef>, trace: &WorkloadTrace) -> Result<Self> {
        let mut schema = TableSchema { name: table.to_string(), key_width, columns, groups: Vec::new() };
        let advice = schema.advise_partitioning(trace)?;
        schema.groups = advice
            .groups
            .into_iter()
            .enumerate()
            .map(|(i, columns)| ColumnGroupDef { name: format!("g{i}"), columns })
            .collect();
        if schema.groups.is_empty() {
            schema.groups.push(ColumnGroupDef { name: "g0".into(), columns: Vec::new() });
        }
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSchema(msg));
        if !valid_name(&self.name) {
            return bad(format!("table name {:?} must be 1-64 chars of [A-Za-z0-9_-]", self.name));
        }
        if self.groups.is_empty() {
            return bad("a table needs at least one column group".into());
        }
        let mut seen_groups = std::collections::BTreeSet::new();
        for g in &self.groups {
            if !valid_name(&g.name) {
                return bad(format!("group name {:?} must be 1-64 chars of [A-Za-z0-9_-]", g.name));
            }
            if !seen_groups.insert(&g.name) {
                return bad(format!("duplicate group {:?}", g.name));
            }
        }
        if self.columns.is_empty() {
            if self.groups.iter().any(|g| !g.columns.is_empty()) {
                return bad("groups list columns but the table declares none".into());
            }
            return Ok(());
        }
        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        for g in &self.groups {
            for c in &g.columns {
                if !self.columns.iter().any(|d| &d.name == c) {
                    return bad(format!("group {:?} lists unknown column {c:?}", g.name));
                }
                if let Some(other) = owner.insert(c, &g.name) {
                    return bad(format!("column {c:?} is in both {other:?} and {:?}", g.name));
                }
            }
        }
        if let Some(missing) = self.columns.iter().find(|c| !owner.contains_key(c.name.as_str())) {
            return bad(format!("column {:?} is not in any group", missing.name));
        }
        Ok(())
    }

    pub fn group_index(&self, group: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == group)
    }

    fn advisor_columns(&self) -> Vec<Column> {
        self.columns.iter().map(|c| Column { name: c.name.clone(), width: c.width }).collect()
    }

    /// Cheapest column grouping for `trace` by exhaustive enumeration.
    pub fn advise_partitioning(&self, trace: &WorkloadTrace) -> Result<Partitioning> {
        Ok(advisor::advise_partitioning(&self.advisor_columns(), self.key_width, trace)?)
    }

    /// Cost of the schema's current grouping under `trace`.
    pub fn grouping_cost(&self, trace: &WorkloadTrace) -> Result<u128> {
        let groups: Vec<Vec<String>> = self.groups.iter().map(|g| g.columns.clone()).collect();
        Ok(advisor::grouping_cost(&self.advisor_columns(), self.key_width, trace, &groups)?)
    }
}

/// A key range `[low, high)` of a table; `high = None` is unbounded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabletDef {
    pub id: TabletId,
    pub table: String,
    pub low: Vec<u8>,
    pub high: Option<Vec<u8>>,
}

impl TabletDef {
    pub fn contains(&self, key: &[u8]) -> bool {
        key >= self.low.as_slice() && self.high.as_deref().is_none_or(|h| key < h)
    }

    /// Whether `[start, end)` overlaps this tablet.
    pub fn overlaps(&self, start: &[u8], end: Option<&[u8]>) -> bool {
        let below_high = self.high.as_deref().is_none_or(|h| start < h);
        let above_low = end.is_none_or(|e| e > self.low.as_slice());
        below_high && above_low
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEntry {
    pub schema: TableSchema,
    pub tablets: Vec<TabletDef>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub tables: BTreeMap<String, TableEntry>,
    pub next_tablet: TabletId,
}

impl Catalog {
    pub fn load(dir: &Path) -> Result<Catalog> {
        let path = dir.join(CATALOG_FILE);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| Error::Corrupt(format!("catalog: {e}"))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Catalog::default()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(self).map_err(|e| Error::Corrupt(e.to_string()))?;
        write_atomic(dir, CATALOG_FILE, &bytes)
    }

    /// Adds a table split into tablets at `split_keys` (which must ascend).
    pub fn add_table(&mut self, schema: TableSchema, split_keys: &[Vec<u8>]) -> Result<&TableEntry> {
        schema.validate()?;
        if self.tables.contains_key(&schema.name) {
            return Err(Error::TableExists(schema.name));
        }
        if split_keys.windows(2).any(|w| w[0] >= w[1]) || split_keys.first().is_some_and(|k| k.is_empty()) {
            return Err(Error::InvalidSchema("split keys must be non-empty and strictly ascending".into()));
        }
        let mut bounds = vec![Vec::new()];
        bounds.extend(split_keys.iter().cloned());
        let mut tablets = Vec::new();
        for (i, low) in bounds.iter().enumerate() {
            tablets.push(TabletDef {
                id: self.next_tablet,
                table: schema.name.clone(),
                low: low.clone(),
                high: bounds.get(i + 1).cloned(),
            });
            self.next_tablet += 1;
        }
        let name = schema.name.clone();
        self.tables.insert(name.clone(), TableEntry { schema, tablets });
        Ok(&self.tables[&name])
    }
}

/// Writes `name` in `dir` via a temporary file and rename, syncing both.
pub(crate) fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let tmp = dir.join(format!("{name}.tmp"));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, dir.join(name))?;
    sync_dir(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cols(names: &[&str]) -> Vec<ColumnDef> {
        names.iter().map(|n| ColumnDef { name: n.to_string(), width: 10 }).collect()
    }

    #[test]
    fn validation_rules() {
        let mut s = TableSchema {
            name: "t".into(),
            key_width: 8,
            columns: cols(&["a", "b"]),
            groups: vec![
                ColumnGroupDef { name: "g0".into(), columns: vec!["a".into()] },
                ColumnGroupDef { name: "g1".into(), columns: vec!["b".into()] },
            ],
        };
        s.validate().unwrap();
        s.groups[1].columns.push("a".into());
        assert!(s.validate().is_err());
        s.groups[1].columns = vec![];
        assert!(s.validate().is_err(), "b uncovered");
        assert!(TableSchema::single_group("bad name", "g").validate().is_err());
    }

    #[test]
    fn advice_builds_groups() {
        let trace = WorkloadTrace::new().query(["a", "b"], 1).query(["c"], 1);
        let s = TableSchema::from_advice("t", 8, cols(&["a", "b", "c"]), &trace).unwrap();
        assert_eq!(s.groups.len(), 2);
        assert_eq!(s.groups[0].columns, vec!["a".to_string(), "b".to_string()]);
        assert_eq!(s.grouping_cost(&trace).unwrap(), s.advise_partitioning(&trace).unwrap().cost);
    }

    #[test]
    fn tablets_partition_the_key_space() {
        let mut c = Catalog::default();
        let e = c.add_table(TableSchema::single_group("t", "g"), &[b"m".to_vec(), b"t".to_vec()]).unwrap();
        assert_eq!(e.tablets.len(), 3);
        for key in [&b""[..], b"a", b"m", b"s", b"t", b"zzz"] {
            assert_eq!(e.tablets.iter().filter(|t| t.contains(key)).count(), 1, "{key:?}");
        }
        assert!(e.tablets[0].overlaps(b"a", Some(b"b")));
        assert!(!e.tablets[0].overlaps(b"m", None));
        assert!(!e.tablets[1].overlaps(b"a", Some(b"m")));
        assert!(matches!(c.add_table(TableSchema::single_group("t", "g"), &[]), Err(Error::TableExists(_))));
    }

    #[test]
    fn catalog_persists() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Catalog::default();
        c.add_table(TableSchema::with_groups("t", &["a", "b"]), &[]).unwrap();
        c.save(dir.path()).unwrap();
        assert_eq!(Catalog::load(dir.path()).unwrap(), c);
    }
}
