//! Synthetic tables and statements whose labels come from executing a
//! logical form against the table.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{ColumnType, Dataset, Difficulty, LabeledInstance, Split, Table, ENTAILED, REFUTED};
use crate::error::{Error, Result};
use crate::text::tokenize_cell;

const KEY_HEADERS: &[&str] = &["name", "player", "team", "driver", "club"];

const KEYS: &[&str] = &[
    "alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi", "ivan", "judy", "karl",
    "liam", "mallory", "nina", "oscar", "peggy", "quinn", "rupert", "sybil", "trent", "uma",
    "victor", "walter", "xena", "yusuf", "zoe", "arthur", "bianca", "cedric", "delia", "edgar",
    "fiona", "gideon", "hazel", "igor", "jasper", "kira", "lorenzo", "marta", "nils",
];

const TEXT_COLUMNS: &[(&str, &[&str])] = &[
    (
        "city",
        &["paris", "tokyo", "lima", "oslo", "cairo", "dublin", "madrid", "quito", "seoul", "vienna"],
    ),
    (
        "country",
        &["france", "japan", "peru", "norway", "egypt", "ireland", "spain", "chile", "korea", "austria"],
    ),
    (
        "position",
        &["forward", "defender", "goalkeeper", "midfielder", "striker", "winger"],
    ),
];

const NUMERIC_HEADERS: &[&str] = &["score", "goals", "points", "wins", "losses", "games", "assists", "age"];

const CAPTION_WORDS: &[&str] = &["season", "league", "tournament", "standings", "results", "cup", "series"];

/// Largest value drawn for a numeric cell.
const MAX_NUMERIC: i64 = 40;
/// Resampling budget when a sampled form cannot be corrupted.
const RETRY_LIMIT: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub train_tables: usize,
    pub val_tables: usize,
    pub test_tables: usize,
    pub rows_min: usize,
    pub rows_max: usize,
    /// Text columns including the key column.
    pub text_columns: usize,
    pub numeric_columns: usize,
    pub statements_min: usize,
    pub statements_max: usize,
    pub refute_fraction: f64,
    /// Share of statements drawn as single-cell lookups.
    pub lookup_fraction: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            train_tables: 200,
            val_tables: 40,
            test_tables: 40,
            rows_min: 3,
            rows_max: 6,
            text_columns: 2,
            numeric_columns: 2,
            statements_min: 10,
            statements_max: 10,
            refute_fraction: 0.5,
            lookup_fraction: 0.5,
            seed: 7,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("gen config: {m}")));
        if self.train_tables == 0 || self.val_tables == 0 || self.test_tables == 0 {
            return bad("table counts must be positive");
        }
        if self.rows_min == 0 || self.rows_min > self.rows_max {
            return bad("need 1 <= rows_min <= rows_max");
        }
        if self.rows_max > KEYS.len() {
            return bad("rows_max exceeds the key word list");
        }
        if self.text_columns == 0 || self.text_columns > 1 + TEXT_COLUMNS.len() {
            return bad("text_columns must be in 1..=4 (the key column counts)");
        }
        if self.numeric_columns == 0 || self.numeric_columns > NUMERIC_HEADERS.len() {
            return bad("numeric_columns must be in 1..=8");
        }
        if self.statements_min == 0 || self.statements_min > self.statements_max {
            return bad("need 1 <= statements_min <= statements_max");
        }
        if !(self.refute_fraction > 0.0 && self.refute_fraction < 1.0) {
            return bad("refute_fraction must be in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.lookup_fraction) {
            return bad("lookup_fraction must be in [0, 1]");
        }
        if self.rows_max as i64 > MAX_NUMERIC {
            return bad("rows_max too large for distinct numeric values");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOp {
    Eq,
    Gt,
    Lt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Filter {
    pub column: String,
    pub op: FilterOp,
    pub literal: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Highest,
    Lowest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareOp {
    More,
    Fewer,
}

impl CompareOp {
    fn flipped(self) -> Self {
        match self {
            CompareOp::More => CompareOp::Fewer,
            CompareOp::Fewer => CompareOp::More,
        }
    }
}

/// Rows are addressed by the cell in the table's first (key) column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogicalForm {
    Lookup { row_key: String, column: String },
    Count { filter: Filter },
    Sum { column: String },
    Max { column: String },
    Min { column: String },
    Superlative { column: String, direction: Direction },
    Compare { left_key: String, right_key: String, column: String, op: CompareOp },
}

impl LogicalForm {
    pub fn difficulty(&self) -> Difficulty {
        match self {
            LogicalForm::Lookup { .. } => Difficulty::Simple,
            _ => Difficulty::Complex,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Value {
    Number(f64),
    Text(String),
    Bool(bool),
}

impl Value {
    fn from_cell(cell: &str, ty: ColumnType) -> Value {
        match ty {
            ColumnType::Numeric => Value::Number(numeric(cell)),
            ColumnType::Text => Value::Text(cell.to_string()),
        }
    }

    fn render(&self) -> String {
        match self {
            Value::Number(v) => format_number(*v),
            Value::Text(s) => s.clone(),
            Value::Bool(b) => b.to_string(),
        }
    }
}

fn numeric(cell: &str) -> f64 {
    crate::datamodel::parse_numeric(cell).expect("validated numeric cell")
}

fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn column(table: &Table, name: &str) -> Result<(usize, ColumnType)> {
    let c = table
        .column_index(name)
        .ok_or_else(|| Error::Integrity(format!("table {} has no column {name:?}", table.table_id)))?;
    Ok((c, table.column_types[c]))
}

fn numeric_column(table: &Table, name: &str) -> Result<Vec<f64>> {
    let (c, ty) = column(table, name)?;
    if ty != ColumnType::Numeric {
        return Err(Error::Type(format!("aggregation over text column {name:?}")));
    }
    table.numeric_column(c)
}

fn row_by_key(table: &Table, key: &str) -> Result<usize> {
    table
        .rows
        .iter()
        .position(|r| r.first().map(String::as_str) == Some(key))
        .ok_or_else(|| Error::Integrity(format!("table {} has no row keyed {key:?}", table.table_id)))
}

fn arg_extreme(values: &[f64], direction: Direction) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        best = match best {
            None => Some(i),
            Some(b) => {
                let better = match direction {
                    Direction::Highest => *v > values[b],
                    Direction::Lowest => *v < values[b],
                };
                Some(if better { i } else { b })
            }
        };
    }
    best
}

/// Runs a logical form against a table.
pub fn execute(form: &LogicalForm, table: &Table) -> Result<Value> {
    match form {
        LogicalForm::Lookup { row_key, column: col } => {
            let r = row_by_key(table, row_key)?;
            let (c, ty) = column(table, col)?;
            Ok(Value::from_cell(&table.rows[r][c], ty))
        }
        LogicalForm::Count { filter } => {
            let (c, ty) = column(table, &filter.column)?;
            let mut n = 0usize;
            for row in &table.rows {
                let cell = &row[c];
                let hit = match (ty, filter.op) {
                    (ColumnType::Text, FilterOp::Eq) => cell == &filter.literal,
                    (ColumnType::Text, _) => {
                        return Err(Error::Type(format!(
                            "ordered filter over text column {:?}",
                            filter.column
                        )))
                    }
                    (ColumnType::Numeric, op) => {
                        let lit = crate::datamodel::parse_numeric(&filter.literal).ok_or_else(|| {
                            Error::Type(format!("non-numeric literal {:?}", filter.literal))
                        })?;
                        let v = numeric(cell);
                        match op {
                            FilterOp::Eq => v == lit,
                            FilterOp::Gt => v > lit,
                            FilterOp::Lt => v < lit,
                        }
                    }
                };
                n += usize::from(hit);
            }
            Ok(Value::Number(n as f64))
        }
        LogicalForm::Sum { column } => Ok(Value::Number(numeric_column(table, column)?.iter().sum())),
        LogicalForm::Max { column } => {
            let vals = numeric_column(table, column)?;
            vals.iter()
                .copied()
                .reduce(f64::max)
                .map(Value::Number)
                .ok_or_else(|| Error::Type("max over an empty column".into()))
        }
        LogicalForm::Min { column } => {
            let vals = numeric_column(table, column)?;
            vals.iter()
                .copied()
                .reduce(f64::min)
                .map(Value::Number)
                .ok_or_else(|| Error::Type("min over an empty column".into()))
        }
        LogicalForm::Superlative { column, direction } => {
            let vals = numeric_column(table, column)?;
            let r = arg_extreme(&vals, *direction)
                .ok_or_else(|| Error::Type("superlative over an empty column".into()))?;
            Ok(Value::Text(table.rows[r][0].clone()))
        }
        LogicalForm::Compare { left_key, right_key, column, op } => {
            if left_key == right_key {
                return Err(Error::Integrity("compare needs two distinct rows".into()));
            }
            let vals = numeric_column(table, column)?;
            let (a, b) = (vals[row_by_key(table, left_key)?], vals[row_by_key(table, right_key)?]);
            Ok(Value::Bool(match op {
                CompareOp::More => a > b,
                CompareOp::Fewer => a < b,
            }))
        }
    }
}

/// A form together with the value a statement asserts for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub form: LogicalForm,
    pub claimed: Value,
}

impl Claim {
    pub fn holds(&self, table: &Table) -> Result<bool> {
        Ok(execute(&self.form, table)? == self.claimed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub statement: Vec<String>,
    pub label: u8,
    pub difficulty: Difficulty,
    pub claim: Claim,
    /// The uncorrupted verbalization; equal to `statement` when entailed.
    pub entailed_statement: Vec<String>,
}

fn words(parts: &[&str]) -> Vec<String> {
    parts.iter().flat_map(|p| tokenize_cell(p)).collect()
}

fn verbalize(form: &LogicalForm, claimed: &Value) -> Vec<String> {
    let v = claimed.render();
    match form {
        LogicalForm::Lookup { row_key, column } => words(&["the", column, "of", row_key, "is", &v]),
        LogicalForm::Count { filter } => match filter.op {
            FilterOp::Eq => words(&[&v, "rows", "have", &filter.column, &filter.literal]),
            FilterOp::Gt => words(&[&v, "rows", "have", &filter.column, "above", &filter.literal]),
            FilterOp::Lt => words(&[&v, "rows", "have", &filter.column, "below", &filter.literal]),
        },
        LogicalForm::Sum { column } => words(&["the", "total", column, "is", &v]),
        LogicalForm::Max { column } => words(&["the", "highest", column, "is", &v]),
        LogicalForm::Min { column } => words(&["the", "lowest", column, "is", &v]),
        LogicalForm::Superlative { column, direction } => {
            let d = match direction {
                Direction::Highest => "highest",
                Direction::Lowest => "lowest",
            };
            words(&[&v, "has", "the", d, column])
        }
        LogicalForm::Compare { left_key, right_key, column, op } => {
            let o = match op {
                CompareOp::More => "more",
                CompareOp::Fewer => "fewer",
            };
            words(&[left_key, "has", o, column, "than", right_key])
        }
    }
}

fn pick_other<R: Rng>(candidates: &[String], current: &str, rng: &mut R) -> Option<String> {
    let mut others: Vec<&String> = candidates.iter().filter(|c| c.as_str() != current).collect();
    others.sort();
    others.dedup();
    others.choose(rng).map(|s| (*s).clone())
}

fn text_domain(header: &str) -> Option<&'static [&'static str]> {
    TEXT_COLUMNS.iter().find(|(h, _)| *h == header).map(|(_, d)| *d)
}

/// Verbalizes a form. With `corrupt`, exactly one value in the statement is
/// replaced by a different in-domain value so the claim no longer holds.
pub fn realize<R: Rng>(form: &LogicalForm, table: &Table, corrupt: bool, rng: &mut R) -> Result<Realization> {
    let truth = execute(form, table)?;
    let (claim_true, claimed_true) = match form {
        LogicalForm::Compare { op, .. } => {
            // state the comparison the way it actually holds
            let form = if truth == Value::Bool(true) {
                form.clone()
            } else {
                let mut f = form.clone();
                if let LogicalForm::Compare { op: o, .. } = &mut f {
                    *o = op.flipped();
                }
                f
            };
            (form, Value::Bool(true))
        }
        _ => (form.clone(), truth.clone()),
    };
    let entailed_statement = verbalize(&claim_true, &claimed_true);
    let difficulty = form.difficulty();
    if !corrupt {
        return Ok(Realization {
            statement: entailed_statement.clone(),
            label: ENTAILED,
            difficulty,
            claim: Claim { form: claim_true, claimed: claimed_true },
            entailed_statement,
        });
    }

    let impossible = || Error::CorruptionImpossible(format!("{form:?} on table {}", table.table_id));
    let claim = match &claim_true {
        LogicalForm::Compare { left_key, right_key, column, op } => Claim {
            form: LogicalForm::Compare {
                left_key: left_key.clone(),
                right_key: right_key.clone(),
                column: column.clone(),
                op: op.flipped(),
            },
            claimed: Value::Bool(true),
        },
        LogicalForm::Lookup { column: col, .. } => {
            let (c, ty) = column(table, col)?;
            let current = claimed_true.render();
            let in_column: Vec<String> = table.column(c).map(str::to_string).collect();
            let alt = pick_other(&in_column, &current, rng).or_else(|| match ty {
                ColumnType::Text => text_domain(col).and_then(|d| {
                    let d: Vec<String> = d.iter().map(|s| s.to_string()).collect();
                    pick_other(&d, &current, rng)
                }),
                ColumnType::Numeric => None,
            });
            let alt = alt.ok_or_else(impossible)?;
            Claim { form: claim_true.clone(), claimed: Value::from_cell(&alt, ty) }
        }
        LogicalForm::Max { column: col } | LogicalForm::Min { column: col } => {
            let (c, _) = column(table, col)?;
            let in_column: Vec<String> = table.column(c).map(str::to_string).collect();
            let alt = pick_other(&in_column, &claimed_true.render(), rng).ok_or_else(impossible)?;
            Claim { form: claim_true.clone(), claimed: Value::Number(numeric(&alt)) }
        }
        LogicalForm::Superlative { .. } => {
            let keys: Vec<String> = table.column(0).map(str::to_string).collect();
            let alt = pick_other(&keys, &claimed_true.render(), rng).ok_or_else(impossible)?;
            Claim { form: claim_true.clone(), claimed: Value::Text(alt) }
        }
        LogicalForm::Count { .. } => {
            let Value::Number(n) = claimed_true else { unreachable!("count yields a number") };
            let options: Vec<String> = (0..=table.n_rows())
                .map(|v| v.to_string())
                .collect();
            let alt = pick_other(&options, &format_number(n), rng).ok_or_else(impossible)?;
            Claim { form: claim_true.clone(), claimed: Value::Number(numeric(&alt)) }
        }
        LogicalForm::Sum { .. } => {
            let Value::Number(s) = claimed_true else { unreachable!("sum yields a number") };
            let options: Vec<String> = (-3i64..=3)
                .map(|d| s + d as f64)
                .filter(|v| *v >= 0.0 && *v != s)
                .map(format_number)
                .collect();
            let alt = pick_other(&options, &format_number(s), rng).ok_or_else(impossible)?;
            Claim { form: claim_true.clone(), claimed: Value::Number(numeric(&alt)) }
        }
    };
    debug_assert!(!claim.holds(table)?);
    Ok(Realization {
        statement: verbalize(&claim.form, &claim.claimed),
        label: REFUTED,
        difficulty,
        claim,
        entailed_statement,
    })
}

/// Draws one table. Numeric columns are redrawn until their values are distinct.
pub fn generate_table<R: Rng>(config: &GenConfig, table_id: &str, rng: &mut R) -> Table {
    let n_rows = rng.gen_range(config.rows_min..=config.rows_max);
    let key_header = *KEY_HEADERS.choose(rng).expect("non-empty");
    let keys: Vec<&str> = KEYS.choose_multiple(rng, n_rows).copied().collect();

    let mut columns: Vec<(String, ColumnType, Vec<String>)> = Vec::new();
    for (header, domain) in TEXT_COLUMNS.choose_multiple(rng, config.text_columns - 1) {
        // a few values per table so equality filters match several rows
        let pool: Vec<&str> = domain.choose_multiple(rng, 3).copied().collect();
        let cells = (0..n_rows).map(|_| pool.choose(rng).expect("non-empty").to_string()).collect();
        columns.push((header.to_string(), ColumnType::Text, cells));
    }
    for header in NUMERIC_HEADERS.choose_multiple(rng, config.numeric_columns) {
        let cells = loop {
            let vals: Vec<i64> = (0..n_rows).map(|_| rng.gen_range(1..=MAX_NUMERIC)).collect();
            let mut sorted = vals.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() == vals.len() {
                break vals.iter().map(|v| v.to_string()).collect();
            }
        };
        columns.push((header.to_string(), ColumnType::Numeric, cells));
    }
    columns.shuffle(rng);

    let mut header = vec![key_header.to_string()];
    let mut column_types = vec![ColumnType::Text];
    for (h, t, _) in &columns {
        header.push(h.clone());
        column_types.push(*t);
    }
    let rows = (0..n_rows)
        .map(|r| {
            let mut row = vec![keys[r].to_string()];
            row.extend(columns.iter().map(|(_, _, cells)| cells[r].clone()));
            row
        })
        .collect();
    let caption = format!(
        "{} {}",
        CAPTION_WORDS.choose(rng).expect("non-empty"),
        CAPTION_WORDS.choose(rng).expect("non-empty")
    );
    Table {
        table_id: table_id.to_string(),
        caption,
        header,
        column_types,
        rows,
    }
}

/// Samples a form that is well-typed for the table.
pub fn sample_form<R: Rng>(table: &Table, lookup_fraction: f64, rng: &mut R) -> LogicalForm {
    let numeric_cols: Vec<&String> = table
        .header
        .iter()
        .zip(&table.column_types)
        .filter(|(_, t)| **t == ColumnType::Numeric)
        .map(|(h, _)| h)
        .collect();
    let text_cols: Vec<&String> = table
        .header
        .iter()
        .zip(&table.column_types)
        .skip(1)
        .filter(|(_, t)| **t == ColumnType::Text)
        .map(|(h, _)| h)
        .collect();
    let keys: Vec<&String> = table.rows.iter().map(|r| &r[0]).collect();
    let n_rows = table.n_rows();

    if rng.gen_bool(lookup_fraction) {
        let col = table.header[rng.gen_range(1..table.n_cols())].clone();
        let row_key = (*keys.choose(rng).expect("rows")).clone();
        return LogicalForm::Lookup { row_key, column: col };
    }
    loop {
        let num = (*numeric_cols.choose(rng).expect("numeric column")).clone();
        match rng.gen_range(0..6) {
            0 => {
                let filter = if !text_cols.is_empty() && rng.gen_bool(0.5) {
                    let col = (*text_cols.choose(rng).expect("text column")).clone();
                    let c = table.column_index(&col).expect("column");
                    let literal = table.rows[rng.gen_range(0..n_rows)][c].clone();
                    Filter { column: col, op: FilterOp::Eq, literal }
                } else {
                    let c = table.column_index(&num).expect("column");
                    let literal = table.rows[rng.gen_range(0..n_rows)][c].clone();
                    let op = if rng.gen_bool(0.5) { FilterOp::Gt } else { FilterOp::Lt };
                    Filter { column: num, op, literal }
                };
                return LogicalForm::Count { filter };
            }
            1 => return LogicalForm::Sum { column: num },
            2 => return LogicalForm::Max { column: num },
            3 => return LogicalForm::Min { column: num },
            4 => {
                let direction = if rng.gen_bool(0.5) { Direction::Highest } else { Direction::Lowest };
                return LogicalForm::Superlative { column: num, direction };
            }
            _ if n_rows >= 2 => {
                let pair: Vec<&&String> = keys.choose_multiple(rng, 2).collect();
                let op = if rng.gen_bool(0.5) { CompareOp::More } else { CompareOp::Fewer };
                return LogicalForm::Compare {
                    left_key: (*pair[0]).clone(),
                    right_key: (*pair[1]).clone(),
                    column: num,
                    op,
                };
            }
            _ => continue,
        }
    }
}

/// One line of the audit sidecar: the claim behind an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub instance_id: String,
    pub claim: Claim,
    pub entailed_statement: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub dataset: Dataset,
    pub audit: Vec<AuditRecord>,
}

/// Substream-seeded RNG for the `ordinal`-th table of a run.
pub fn table_rng(seed: u64, ordinal: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ordinal);
    rng
}

fn generate_for_table(
    config: &GenConfig,
    split: Split,
    index: usize,
    ordinal: u64,
) -> Result<(Table, Vec<LabeledInstance>, Vec<AuditRecord>)> {
    let mut rng = table_rng(config.seed, ordinal);
    let table_id = format!("{}-{:04}", split.name(), index);
    let table = generate_table(config, &table_id, &mut rng);
    let n = rng.gen_range(config.statements_min..=config.statements_max);
    let mut instances = Vec::with_capacity(n);
    let mut audit = Vec::with_capacity(n);
    for s in 0..n {
        let mut attempt = 0;
        let real = loop {
            let form = sample_form(&table, config.lookup_fraction, &mut rng);
            let corrupt = rng.gen_bool(config.refute_fraction);
            match realize(&form, &table, corrupt, &mut rng) {
                Ok(r) => break r,
                Err(Error::CorruptionImpossible(msg)) => {
                    attempt += 1;
                    if attempt >= RETRY_LIMIT {
                        return Err(Error::CorruptionImpossible(msg));
                    }
                }
                Err(e) => return Err(e),
            }
        };
        let id = format!("{table_id}-{s:02}");
        instances.push(LabeledInstance {
            id: id.clone(),
            table_id: table_id.clone(),
            statement: real.statement,
            label: real.label,
            difficulty: real.difficulty,
            split,
        });
        audit.push(AuditRecord {
            instance_id: id,
            claim: real.claim,
            entailed_statement: real.entailed_statement,
        });
    }
    Ok((table, instances, audit))
}

/// Generates all three splits. Each table draws from its own substream, so
/// the tables can be produced in parallel without changing the output.
pub fn generate_dataset(config: &GenConfig) -> Result<GeneratedData> {
    use rayon::prelude::*;

    config.validate()?;
    let mut jobs = Vec::new();
    let mut ordinal = 0u64;
    for (split, count) in [
        (Split::Train, config.train_tables),
        (Split::Val, config.val_tables),
        (Split::Test, config.test_tables),
    ] {
        for index in 0..count {
            jobs.push((split, index, ordinal));
            ordinal += 1;
        }
    }
    let parts: Vec<_> = jobs
        .par_iter()
        .map(|&(split, index, ord)| generate_for_table(config, split, index, ord))
        .collect::<Result<_>>()?;

    let mut dataset = Dataset::default();
    let mut audit = Vec::new();
    for (table, instances, records) in parts {
        dataset.tables.insert(table.table_id.clone(), table);
        dataset.instances.extend(instances);
        audit.extend(records);
    }
    dataset.validate()?;
    Ok(GeneratedData { dataset, audit })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(values: &[i64]) -> Table {
        Table {
            table_id: "t".into(),
            caption: "c".into(),
            header: vec!["name".into(), "city".into(), "score".into()],
            column_types: vec![ColumnType::Text, ColumnType::Text, ColumnType::Numeric],
            rows: values
                .iter()
                .enumerate()
                .map(|(i, v)| vec![KEYS[i].to_string(), "paris".to_string(), v.to_string()])
                .collect(),
        }
    }

    #[test]
    fn minimal_table() {
        let cfg = GenConfig {
            rows_min: 1,
            rows_max: 1,
            text_columns: 1,
            numeric_columns: 1,
            ..GenConfig::default()
        };
        let t = generate_table(&cfg, "x", &mut table_rng(1, 0));
        assert_eq!(t.n_rows(), 1);
        assert_eq!(t.n_cols(), 2);
        t.validate().unwrap();
        assert_eq!(t.column_types, vec![ColumnType::Text, ColumnType::Numeric]);
        assert!(crate::datamodel::parse_numeric(&t.rows[0][1]).is_some());
    }

    #[test]
    fn tables_are_deterministic_per_seed() {
        let cfg = GenConfig::default();
        let a = generate_table(&cfg, "x", &mut table_rng(3, 5));
        let b = generate_table(&cfg, "x", &mut table_rng(3, 5));
        assert_eq!(a, b);
    }

    #[test]
    fn row_counts_stay_in_range() {
        let cfg = GenConfig { rows_min: 3, rows_max: 6, seed: 7, ..GenConfig::default() };
        let mut seen = std::collections::BTreeSet::new();
        for i in 0..100 {
            let t = generate_table(&cfg, "x", &mut table_rng(cfg.seed, i));
            assert!((3..=6).contains(&t.n_rows()));
            seen.insert(t.n_rows());
            for c in 0..t.n_cols() {
                if t.column_types[c] == ColumnType::Numeric {
                    let mut v = t.numeric_column(c).unwrap();
                    v.sort_by(f64::total_cmp);
                    v.dedup();
                    assert_eq!(v.len(), t.n_rows(), "numeric values must be distinct");
                }
            }
        }
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn count_with_no_match_is_zero() {
        let t = table(&[3, 5, 7]);
        let form = LogicalForm::Count {
            filter: Filter { column: "score".into(), op: FilterOp::Gt, literal: "100".into() },
        };
        assert_eq!(execute(&form, &t).unwrap(), Value::Number(0.0));
        let form = LogicalForm::Count {
            filter: Filter { column: "city".into(), op: FilterOp::Eq, literal: "paris".into() },
        };
        assert_eq!(execute(&form, &t).unwrap(), Value::Number(3.0));
    }

    #[test]
    fn sum_claims() {
        let t = table(&[3, 5, 7]);
        let form = LogicalForm::Sum { column: "score".into() };
        assert_eq!(execute(&form, &t).unwrap(), Value::Number(15.0));
        let yes = Claim { form: form.clone(), claimed: Value::Number(15.0) };
        let no = Claim { form, claimed: Value::Number(14.0) };
        assert!(yes.holds(&t).unwrap());
        assert!(!no.holds(&t).unwrap());
    }

    #[test]
    fn max_min_superlative_compare() {
        let t = table(&[2, 9, 4]);
        assert_eq!(execute(&LogicalForm::Max { column: "score".into() }, &t).unwrap(), Value::Number(9.0));
        assert_eq!(execute(&LogicalForm::Min { column: "score".into() }, &t).unwrap(), Value::Number(2.0));
        let sup = LogicalForm::Superlative { column: "score".into(), direction: Direction::Highest };
        assert_eq!(execute(&sup, &t).unwrap(), Value::Text("bob".into()));
        let cmp = LogicalForm::Compare {
            left_key: "alice".into(),
            right_key: "bob".into(),
            column: "score".into(),
            op: CompareOp::Fewer,
        };
        assert_eq!(execute(&cmp, &t).unwrap(), Value::Bool(true));
    }

    #[test]
    fn aggregation_over_text_is_a_type_error() {
        let t = table(&[1, 2]);
        let err = execute(&LogicalForm::Sum { column: "city".into() }, &t).unwrap_err();
        assert!(matches!(err, Error::Type(_)));
        let form = LogicalForm::Count {
            filter: Filter { column: "city".into(), op: FilterOp::Gt, literal: "3".into() },
        };
        assert!(matches!(execute(&form, &t), Err(Error::Type(_))));
    }

    #[test]
    fn lookup_realizations() {
        let mut t = table(&[12, 30, 5]);
        t.rows[0][1] = "oslo".into();
        let form = LogicalForm::Lookup { row_key: "alice".into(), column: "score".into() };
        let mut rng = table_rng(0, 0);
        let r = realize(&form, &t, false, &mut rng).unwrap();
        assert_eq!(r.statement, vec!["the", "score", "of", "alice", "is", "12"]);
        assert_eq!(r.label, ENTAILED);
        assert_eq!(r.difficulty, Difficulty::Simple);
        assert!(r.claim.holds(&t).unwrap());

        let r = realize(&form, &t, true, &mut rng).unwrap();
        assert_eq!(r.label, REFUTED);
        assert!(!r.claim.holds(&t).unwrap());
        let v = &r.statement[5];
        assert!(v == "30" || v == "5", "replacement {v} must come from the column");
        assert_eq!(&r.statement[..5], &r.entailed_statement[..5]);
    }

    #[test]
    fn aggregations_are_complex() {
        let t = table(&[1, 2, 3]);
        let r = realize(&LogicalForm::Sum { column: "score".into() }, &t, false, &mut table_rng(0, 0)).unwrap();
        assert_eq!(r.difficulty, Difficulty::Complex);
        assert_eq!(r.statement, vec!["the", "total", "score", "is", "6"]);
    }

    #[test]
    fn single_row_lookup_cannot_be_corrupted() {
        let t = table(&[4]);
        let form = LogicalForm::Lookup { row_key: "alice".into(), column: "score".into() };
        let err = realize(&form, &t, true, &mut table_rng(0, 0)).unwrap_err();
        assert!(matches!(err, Error::CorruptionImpossible(_)));
    }

    #[test]
    fn compare_is_stated_truthfully_then_flipped() {
        let t = table(&[2, 9]);
        let form = LogicalForm::Compare {
            left_key: "alice".into(),
            right_key: "bob".into(),
            column: "score".into(),
            op: CompareOp::More,
        };
        let mut rng = table_rng(0, 0);
        let good = realize(&form, &t, false, &mut rng).unwrap();
        assert_eq!(good.statement, vec!["alice", "has", "fewer", "score", "than", "bob"]);
        let bad = realize(&form, &t, true, &mut rng).unwrap();
        assert_eq!(bad.statement, vec!["alice", "has", "more", "score", "than", "bob"]);
        assert!(!bad.claim.holds(&t).unwrap());
    }

    #[test]
    fn tiny_config_counts() {
        let cfg = GenConfig {
            train_tables: 1,
            val_tables: 1,
            test_tables: 1,
            statements_min: 2,
            statements_max: 2,
            ..GenConfig::default()
        };
        let g = generate_dataset(&cfg).unwrap();
        assert_eq!(g.dataset.instances.len(), 6);
        assert_eq!(g.dataset.tables.len(), 3);
        assert_eq!(g.audit.len(), 6);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            GenConfig { refute_fraction: 0.0, ..GenConfig::default() },
            GenConfig { refute_fraction: 1.0, ..GenConfig::default() },
            GenConfig { train_tables: 0, ..GenConfig::default() },
            GenConfig { rows_min: 5, rows_max: 4, ..GenConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(generate_dataset(&cfg), Err(Error::Config(_))));
        }
    }
}
