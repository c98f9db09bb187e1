//! Vocabulary and the coordinate-annotated input encoding.
//!
//! Layout: `[CLS] statement [SEP] header-cells row-1-cells ... [PAD]*`.
//! Header cells carry `row_id = 0` and `col_id = 1..=C`; data rows carry
//! `row_id = 1..=R`. Every position before `[SEP]` (inclusive) has zero
//! row, column and rank coordinates.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::datamodel::{ColumnType, Dataset, Split, Table};
use crate::error::{Error, Result};
use crate::text::tokenize_cell;

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const SEP: u32 = 2;
pub const MASK: u32 = 3;
pub const UNK: u32 = 4;
pub const NUM_RESERVED: usize = 5;

pub const RESERVED_TOKENS: [&str; NUM_RESERVED] = ["[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from an ordered list of non-reserved tokens.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        all.extend(tokens.into_iter().map(Into::into));
        let mut ids = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Integrity(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocab { tokens: all, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or("[UNK]", String::as_str)
    }

    pub fn is_reserved(id: u32) -> bool {
        (id as usize) < NUM_RESERVED
    }

    /// Line `n` (0-based) holds the token with id `n + 5`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for t in &self.tokens[NUM_RESERVED..] {
            text.push_str(t);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocab::from_tokens(raw.lines().map(str::to_string))
    }
}

fn table_tokens(table: &Table) -> impl Iterator<Item = String> + '_ {
    table
        .header
        .iter()
        .chain(table.rows.iter().flatten())
        .flat_map(|c| tokenize_cell(c))
        .chain(crate::text::tokenize(&table.caption))
}

/// Vocabulary over train statements and train tables, ordered by
/// frequency (descending) then lexicographically.
pub fn build_vocab(dataset: &Dataset) -> Result<Vocab> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut seen_tables = std::collections::BTreeSet::new();
    for inst in dataset.split(Split::Train) {
        for t in &inst.statement {
            *counts.entry(t.clone()).or_default() += 1;
        }
        if seen_tables.insert(inst.table_id.as_str()) {
            for t in table_tokens(dataset.table_of(inst)) {
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    for r in RESERVED_TOKENS {
        counts.remove(r);
    }
    let mut entries: Vec<(String, usize)> = counts.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocab::from_tokens(entries.into_iter().map(|(t, _)| t))
}

/// Dense ascending ranks: the smallest value gets 1, equal values share a rank.
pub fn numeric_ranks(cells: &[String]) -> Result<Vec<u32>> {
    let values: Vec<f64> = cells
        .iter()
        .map(|c| {
            crate::datamodel::parse_numeric(c).ok_or_else(|| Error::Parse {
                file: "<cell>".into(),
                line: 0,
                message: format!("cell {c:?} is not numeric"),
            })
        })
        .collect::<Result<_>>()?;
    let mut distinct = values.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    Ok(values
        .iter()
        .map(|v| distinct.partition_point(|d| d < v) as u32 + 1)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInput {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u32>,
    pub row_ids: Vec<u32>,
    pub col_ids: Vec<u32>,
    pub rank_ids: Vec<u32>,
    pub position_ids: Vec<u32>,
    /// Number of positions before padding.
    pub attention_len: usize,
}

impl EncodedInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Position of statement token `i` in the stream.
    pub fn statement_position(i: usize) -> usize {
        i + 1
    }

    /// Drops everything past `attention_len`.
    pub fn trimmed(mut self) -> EncodedInput {
        let n = self.attention_len;
        for s in [
            &mut self.token_ids,
            &mut self.segment_ids,
            &mut self.row_ids,
            &mut self.col_ids,
            &mut self.rank_ids,
            &mut self.position_ids,
        ] {
            s.truncate(n);
        }
        self
    }

    /// Pads every stream with zeros up to `len`.
    pub fn padded_to(&self, len: usize) -> EncodedInput {
        let mut out = self.clone();
        let n = out.token_ids.len();
        if len > n {
            for s in [
                &mut out.token_ids,
                &mut out.segment_ids,
                &mut out.row_ids,
                &mut out.col_ids,
                &mut out.rank_ids,
            ] {
                s.resize(len, 0);
            }
            out.position_ids.extend(n as u32..len as u32);
        }
        out
    }
}

struct Position {
    token: u32,
    segment: u32,
    row: u32,
    col: u32,
    rank: u32,
}

/// Encodes a statement/table pair. Whole trailing table rows are dropped to
/// fit `max_len`; statement tokens are never truncated.
pub fn encode(statement: &[String], table: &Table, vocab: &Vocab, max_len: usize) -> Result<EncodedInput> {
    let ids: Vec<u32> = statement.iter().map(|t| vocab.id(t)).collect();
    encode_ids(&ids, table, vocab, max_len)
}

/// Same as [`encode`] for a statement already mapped to ids (used for masking).
pub fn encode_ids(statement: &[u32], table: &Table, vocab: &Vocab, max_len: usize) -> Result<EncodedInput> {
    if statement.len() + 2 > max_len {
        return Err(Error::StatementTooLong { len: statement.len(), max_len });
    }
    let mut positions = Vec::with_capacity(max_len);
    let plain = |token| Position { token, segment: 0, row: 0, col: 0, rank: 0 };
    positions.push(plain(CLS));
    positions.extend(statement.iter().map(|&t| plain(t)));
    positions.push(plain(SEP));

    let mut ranks: Vec<Option<Vec<u32>>> = Vec::with_capacity(table.n_cols());
    for (c, ty) in table.column_types.iter().enumerate() {
        ranks.push(match ty {
            ColumnType::Numeric => {
                let cells: Vec<String> = table.column(c).map(str::to_string).collect();
                Some(numeric_ranks(&cells)?)
            }
            ColumnType::Text => None,
        });
    }

    let header = std::iter::once((0u32, &table.header));
    let data = table.rows.iter().enumerate().map(|(r, row)| (r as u32 + 1, row));
    for (row_id, cells) in header.chain(data) {
        let mut row_positions = Vec::new();
        for (c, cell) in cells.iter().enumerate() {
            let rank = match (&ranks[c], row_id) {
                (Some(r), row) if row > 0 => r[row as usize - 1],
                _ => 0,
            };
            for tok in tokenize_cell(cell) {
                row_positions.push(Position {
                    token: vocab.id(&tok),
                    segment: 1,
                    row: row_id,
                    col: c as u32 + 1,
                    rank,
                });
            }
        }
        if positions.len() + row_positions.len() > max_len {
            break;
        }
        positions.extend(row_positions);
    }

    let attention_len = positions.len();
    let mut out = EncodedInput {
        token_ids: positions.iter().map(|p| p.token).collect(),
        segment_ids: positions.iter().map(|p| p.segment).collect(),
        row_ids: positions.iter().map(|p| p.row).collect(),
        col_ids: positions.iter().map(|p| p.col).collect(),
        rank_ids: positions.iter().map(|p| p.rank).collect(),
        position_ids: (0..attention_len as u32).collect(),
        attention_len,
    };
    out = out.padded_to(max_len);
    Ok(out)
}
