//! Domain types, dataset splits and the line-delimited file formats.
//!
//! Files:
//! - `tables.json`: one JSON object mapping `table_id` to
//!   `{caption, header, column_types, rows}`.
//! - `instances.jsonl`: one `{id, table_id, statement, label, difficulty, split}` per line.
//! - augmented instances and salience profiles are also line-delimited JSON.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TABLES_FILE: &str = "tables.json";
pub const INSTANCES_FILE: &str = "instances.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Text,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub table_id: String,
    pub caption: String,
    pub header: Vec<String>,
    pub column_types: Vec<ColumnType>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    /// A table with no header and no rows; encodes to zero table tokens.
    pub fn empty() -> Self {
        Table {
            table_id: String::new(),
            caption: String::new(),
            header: Vec::new(),
            column_types: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.header.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = &str> + '_ {
        self.rows.iter().map(move |r| r[col].as_str())
    }

    /// Parsed numeric view of a column. Errors if any cell is not a finite number.
    pub fn numeric_column(&self, col: usize) -> Result<Vec<f64>> {
        self.column(col)
            .map(|cell| {
                parse_numeric(cell).ok_or_else(|| {
                    Error::Integrity(format!(
                        "table {}: cell {cell:?} in column {:?} is not a finite number",
                        self.table_id, self.header[col]
                    ))
                })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let width = self.header.len();
        if self.column_types.len() != width {
            return Err(Error::Integrity(format!(
                "table {}: {} column types for {} header columns",
                self.table_id,
                self.column_types.len(),
                width
            )));
        }
        for (r, row) in self.rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Integrity(format!(
                    "table {}: row {} has {} cells, header has {}",
                    self.table_id,
                    r + 1,
                    row.len(),
                    width
                )));
            }
        }
        for (c, ty) in self.column_types.iter().enumerate() {
            if *ty == ColumnType::Numeric {
                self.numeric_column(c)?;
            }
        }
        Ok(())
    }
}

/// Parses a cell as a finite decimal number.
pub fn parse_numeric(cell: &str) -> Option<f64> {
    let t = cell.trim();
    // reject spellings like "inf" and "nan" that f64::from_str accepts
    if t.is_empty() || !t.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E')) {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Simple,
    Complex,
}

/// 1 = entailed, 0 = refuted.
pub type Label = u8;

pub const ENTAILED: Label = 1;
pub const REFUTED: Label = 0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub id: String,
    pub table_id: String,
    pub statement: Vec<String>,
    pub label: Label,
    pub difficulty: Difficulty,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalienceProfile {
    pub instance_id: String,
    pub scores: Vec<f64>,
    pub probe_prob_unmasked: f64,
}

/// A training record derived from an original instance.
///
/// The original itself is represented with `replaced_index = None`,
/// `replacement = None` and weight exactly 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedInstance {
    pub source_id: String,
    pub statement: Vec<String>,
    pub label: Label,
    pub replaced_index: Option<usize>,
    pub replacement: Option<String>,
    pub weight: f64,
}

impl AugmentedInstance {
    pub fn original(instance: &LabeledInstance) -> Self {
        AugmentedInstance {
            source_id: instance.id.clone(),
            statement: instance.statement.clone(),
            label: instance.label,
            replaced_index: None,
            replacement: None,
            weight: 1.0,
        }
    }

    pub fn is_original(&self) -> bool {
        self.replaced_index.is_none()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub tables: BTreeMap<String, Table>,
    pub instances: Vec<LabeledInstance>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &LabeledInstance> + '_ {
        self.instances.iter().filter(move |i| i.split == split)
    }

    pub fn table_of(&self, instance: &LabeledInstance) -> &Table {
        &self.tables[&instance.table_id]
    }

    pub fn instance_index(&self) -> HashMap<&str, &LabeledInstance> {
        self.instances.iter().map(|i| (i.id.as_str(), i)).collect()
    }

    /// Checks every dataset invariant.
    pub fn validate(&self) -> Result<()> {
        for (id, table) in &self.tables {
            if id != &table.table_id {
                return Err(Error::Integrity(format!(
                    "table stored under {id:?} carries id {:?}",
                    table.table_id
                )));
            }
            table.validate()?;
        }
        let mut ids = HashSet::new();
        let mut split_of_table: HashMap<&str, Split> = HashMap::new();
        for inst in &self.instances {
            validate_instance(inst)?;
            if !ids.insert(inst.id.as_str()) {
                return Err(Error::Integrity(format!("duplicate instance id {:?}", inst.id)));
            }
            if !self.tables.contains_key(&inst.table_id) {
                return Err(Error::Integrity(format!(
                    "instance {} references unknown table {:?}",
                    inst.id, inst.table_id
                )));
            }
            match split_of_table.get(inst.table_id.as_str()) {
                Some(&s) if s != inst.split => {
                    return Err(Error::Integrity(format!(
                        "table {} appears in both {} and {} splits",
                        inst.table_id, s, inst.split
                    )));
                }
                Some(_) => {}
                None => {
                    split_of_table.insert(inst.table_id.as_str(), inst.split);
                }
            }
        }
        Ok(())
    }
}

fn validate_instance(inst: &LabeledInstance) -> Result<()> {
    if inst.statement.is_empty() {
        return Err(Error::Integrity(format!("instance {} has an empty statement", inst.id)));
    }
    if inst.label > 1 {
        return Err(Error::Integrity(format!(
            "instance {} has label {}, expected 0 or 1",
            inst.id, inst.label
        )));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct TableRecord {
    caption: String,
    header: Vec<String>,
    column_types: Vec<ColumnType>,
    rows: Vec<Vec<String>>,
}

pub fn load_dataset(tables_path: &Path, instances_path: &Path) -> Result<Dataset> {
    let raw = fs::read_to_string(tables_path).map_err(|e| Error::io(tables_path, e))?;
    let tables = if raw.trim().is_empty() {
        BTreeMap::new()
    } else {
        let records: BTreeMap<String, TableRecord> =
            serde_json::from_str(&raw).map_err(|e| Error::Parse {
                file: tables_path.display().to_string(),
                line: e.line(),
                message: e.to_string(),
            })?;
        records
            .into_iter()
            .map(|(id, r)| {
                let table = Table {
                    table_id: id.clone(),
                    caption: r.caption,
                    header: r.header,
                    column_types: r.column_types,
                    rows: r.rows,
                };
                (id, table)
            })
            .collect()
    };
    let instances = read_jsonl(instances_path)?;
    let dataset = Dataset { tables, instances };
    dataset.validate()?;
    Ok(dataset)
}

/// Writes `tables.json` and `instances.jsonl` into `dir`.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    dataset.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let records: BTreeMap<&str, TableRecord> = dataset
        .tables
        .iter()
        .map(|(id, t)| {
            (
                id.as_str(),
                TableRecord {
                    caption: t.caption.clone(),
                    header: t.header.clone(),
                    column_types: t.column_types.clone(),
                    rows: t.rows.clone(),
                },
            )
        })
        .collect();
    let mut text = serde_json::to_string(&records).expect("table records serialize");
    text.push('\n');
    let tables_path = dir.join(TABLES_FILE);
    fs::write(&tables_path, text).map_err(|e| Error::io(&tables_path, e))?;
    write_jsonl(&dir.join(INSTANCES_FILE), &dataset.instances)
}

pub fn load_dataset_dir(dir: &Path) -> Result<Dataset> {
    load_dataset(&dir.join(TABLES_FILE), &dir.join(INSTANCES_FILE))
}

/// Reads one JSON record per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                file: path.display().to_string(),
                line: n + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("record serializes");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn load_profiles(path: &Path) -> Result<Vec<SalienceProfile>> {
    let profiles: Vec<SalienceProfile> = read_jsonl(path)?;
    for p in &profiles {
        if p.scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::Integrity(format!(
                "salience profile {} has a score outside [0, 1]",
                p.instance_id
            )));
        }
    }
    Ok(profiles)
}

pub fn load_augmented(path: &Path) -> Result<Vec<AugmentedInstance>> {
    let records: Vec<AugmentedInstance> = read_jsonl(path)?;
    for r in &records {
        if !(r.weight > 0.0 && r.weight <= 1.0) {
            return Err(Error::Integrity(format!(
                "augmented record from {} has weight {} outside (0, 1]",
                r.source_id, r.weight
            )));
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SplitCounts {
    pub instances: usize,
    pub tables: usize,
    pub simple: usize,
    pub complex: usize,
    pub entailed: usize,
    pub refuted: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SplitStats {
    pub train: SplitCounts,
    pub val: SplitCounts,
    pub test: SplitCounts,
    pub total: SplitCounts,
}

impl SplitStats {
    pub fn get(&self, split: Split) -> &SplitCounts {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

pub fn split_stats(dataset: &Dataset) -> SplitStats {
    let mut stats = SplitStats::default();
    let mut tables: BTreeMap<Split, BTreeSet<&str>> = BTreeMap::new();
    for inst in &dataset.instances {
        let c = match inst.split {
            Split::Train => &mut stats.train,
            Split::Val => &mut stats.val,
            Split::Test => &mut stats.test,
        };
        c.instances += 1;
        match inst.difficulty {
            Difficulty::Simple => c.simple += 1,
            Difficulty::Complex => c.complex += 1,
        }
        if inst.label == ENTAILED {
            c.entailed += 1;
        } else {
            c.refuted += 1;
        }
        tables.entry(inst.split).or_default().insert(&inst.table_id);
    }
    stats.train.tables = tables.get(&Split::Train).map_or(0, |s| s.len());
    stats.val.tables = tables.get(&Split::Val).map_or(0, |s| s.len());
    stats.test.tables = tables.get(&Split::Test).map_or(0, |s| s.len());
    for c in [stats.train, stats.val, stats.test] {
        stats.total.instances += c.instances;
        stats.total.tables += c.tables;
        stats.total.simple += c.simple;
        stats.total.complex += c.complex;
        stats.total.entailed += c.entailed;
        stats.total.refuted += c.refuted;
    }
    stats
}


#[cfg(test)]
mod tests {
    use super::fixtures::small_dataset;
    use super::*;

    #[test]
    fn empty_files_load_as_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(TABLES_FILE), "").unwrap();
        fs::write(dir.path().join(INSTANCES_FILE), "").unwrap();
        let d = load_dataset_dir(dir.path()).unwrap();
        assert_eq!(d.instances.len(), 0);
        assert_eq!(d.tables.len(), 0);
    }

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&Dataset::default(), dir.path()).unwrap();
        let d = load_dataset_dir(dir.path()).unwrap();
        assert_eq!(d, Dataset::default());
        assert_eq!(split_stats(&d), SplitStats::default());
    }

    #[test]
    fn fixture_round_trips_field_by_field() {
        let d = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&d, dir.path()).unwrap();
        let back = load_dataset_dir(dir.path()).unwrap();
        assert_eq!(back.tables.len(), 3);
        assert_eq!(back.instances.len(), 5);
        for (a, b) in d.instances.iter().zip(&back.instances) {
            assert_eq!(a, b);
        }
        for (id, t) in &d.tables {
            assert_eq!(&back.tables[id], t);
        }
        // decimal text survives exactly
        assert_eq!(back.tables["t1"].rows[1][1], "7.5");
    }

    #[test]
    fn split_overlap_is_rejected() {
        let mut d = small_dataset();
        d.instances[4].table_id = "t1".into();
        let err = d.validate().unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "{err}");

        let dir = tempfile::tempdir().unwrap();
        save_dataset(&small_dataset(), dir.path()).unwrap();
        let path = dir.path().join(INSTANCES_FILE);
        let text = fs::read_to_string(&path).unwrap().replace("\"t3\"", "\"t1\"");
        fs::write(&path, text).unwrap();
        assert!(matches!(load_dataset_dir(dir.path()), Err(Error::Integrity(_))));
    }

    #[test]
    fn dangling_table_and_ragged_rows_are_rejected() {
        let mut d = small_dataset();
        d.instances[0].table_id = "nope".into();
        assert!(matches!(d.validate(), Err(Error::Integrity(_))));

        let mut d = small_dataset();
        d.tables.get_mut("t1").unwrap().rows[0].pop();
        assert!(matches!(d.validate(), Err(Error::Integrity(_))));
    }

    #[test]
    fn non_numeric_cell_refuses_to_save() {
        let mut d = small_dataset();
        d.tables.get_mut("t1").unwrap().rows[0][1] = "twelve".into();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(save_dataset(&d, dir.path()), Err(Error::Integrity(_))));
        assert!(!dir.path().join(TABLES_FILE).exists());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&small_dataset(), dir.path()).unwrap();
        let path = dir.path().join(INSTANCES_FILE);
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("{not json}\n");
        fs::write(&path, text).unwrap();
        match load_dataset_dir(dir.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn stats_count_the_fixture() {
        let s = split_stats(&small_dataset());
        assert_eq!(s.train.instances, 3);
        assert_eq!(s.val.instances, 1);
        assert_eq!(s.test.instances, 1);
        assert_eq!(s.total.simple, 2);
        assert_eq!(s.total.complex, 3);
        assert_eq!(s.train.tables, 1);
        assert_eq!(s.total.tables, 3);
        for split in Split::ALL {
            let c = s.get(split);
            assert_eq!(c.simple + c.complex, c.instances);
        }
    }

    #[test]
    fn numeric_parsing_rejects_words() {
        assert_eq!(parse_numeric("12"), Some(12.0));
        assert_eq!(parse_numeric("-0.5"), Some(-0.5));
        assert_eq!(parse_numeric("inf"), None);
        assert_eq!(parse_numeric("NaN"), None);
        assert_eq!(parse_numeric("1e400"), None);
        assert_eq!(parse_numeric(""), None);
    }
}
