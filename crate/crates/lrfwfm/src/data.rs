//! Dataset ingestion: delimiter-separated rows in, encoded samples out.
//!
//! A dataset file holds one sample per line: the label first, then one cell
//! per schema field in schema order. Multi-value cells separate values with
//! `|`; an empty cell means missing. Vocabulary building replaces features
//! seen fewer than `min_count` times in the training rows with the per-field
//! rare id 0, and numeric cells are bucketed through a squared-log rule
//! before they enter the vocabulary.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::schema::{FieldDef, FieldKind, FieldSchema, Role};

pub const DEFAULT_MIN_COUNT: u32 = 10;

/// One active feature of an encoded sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureRef {
    /// Field index in schema order.
    pub field: u16,
    /// Dense id within the field's vocabulary (0 = rare bucket).
    pub id: u32,
    /// Per-field weights sum to 1; a q-value multi field carries 1/q each.
    pub weight: f64,
}

/// Encoded labeled row. Entries are grouped by field in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub label: f64,
    pub entries: Vec<FeatureRef>,
}

/// Entries covering a contiguous field range; context fragments cover fields
/// `0..m_c`, item fragments cover `m_c..m`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Fragment {
    pub entries: Vec<FeatureRef>,
}

/// One ranking request: a shared context block plus the candidate items.
#[derive(Debug, Clone)]
pub struct Auction {
    pub context: Fragment,
    pub items: Vec<Fragment>,
}

impl Sample {
    /// Split into (context fragment, item fragment) at the schema boundary.
    pub fn split_fragments(&self, num_context: usize) -> (Fragment, Fragment) {
        let mut ctx = Fragment::default();
        let mut item = Fragment::default();
        for e in &self.entries {
            if (e.field as usize) < num_context {
                ctx.entries.push(*e);
            } else {
                item.entries.push(*e);
            }
        }
        (ctx, item)
    }

    /// Rebuild a full sample from fragments (the label is not meaningful).
    pub fn join_fragments(context: &Fragment, item: &Fragment) -> Sample {
        let mut entries = context.entries.clone();
        entries.extend_from_slice(&item.entries);
        Sample { label: 0.0, entries }
    }
}

/// Bucket a numeric value. Total on all inputs:
/// missing (or NaN) and negatives land in reserved bins 0 and 1, small values
/// pass through, and the tail is compressed by the floor of the squared
/// natural log.
pub fn bin_numeric(x: Option<f64>) -> u32 {
    match x {
        None => 0,
        Some(x) if x.is_nan() => 0,
        Some(x) if x < 0.0 => 1,
        Some(x) if x <= 2.0 => 2 + x.floor() as u32,
        Some(x) => {
            let b = x.ln().powi(2).floor();
            // Clamp the pathological tail (inf) instead of overflowing.
            5 + b.min((u32::MAX - 5) as f64) as u32
        }
    }
}

/// Raw dataset kept as unsplit lines; cells are re-parsed per pass.
#[derive(Debug)]
pub struct RawDataset {
    pub lines: Vec<String>,
    delimiter: char,
}

impl RawDataset {
    pub fn new(lines: Vec<String>, delimiter: char) -> RawDataset {
        RawDataset { lines, delimiter }
    }

    pub fn load(path: &Path, delimiter: char) -> Result<RawDataset> {
        let file = File::open(path)
            .map_err(|e| Error::Data(format!("cannot open dataset {}: {e}", path.display())))?;
        let mut lines = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if !line.is_empty() {
                lines.push(line);
            }
        }
        if lines.is_empty() {
            return Err(Error::Data(format!("dataset {} is empty", path.display())));
        }
        Ok(RawDataset { lines, delimiter })
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Split a line into (label cell, field cells), validating the column
    /// count against the schema.
    pub fn cells<'a>(&self, line: &'a str, row: usize, m: usize) -> Result<(&'a str, Vec<&'a str>)> {
        let mut parts = line.split(self.delimiter);
        let label = parts
            .next()
            .ok_or_else(|| Error::Data(format!("row {row}: empty line")))?;
        let cells: Vec<&str> = parts.collect();
        if cells.len() != m {
            return Err(Error::Data(format!(
                "row {row}: expected {m} field columns after the label, found {}",
                cells.len()
            )));
        }
        Ok((label, cells))
    }
}

/// Deterministic 80/10/10 split of row indices.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split(num_rows: usize, seed: u64) -> Result<Split> {
    if num_rows == 0 {
        return Err(Error::Data("cannot split an empty dataset".into()));
    }
    let mut idx: Vec<usize> = (0..num_rows).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_train = (num_rows as f64 * 0.8).floor() as usize;
    let n_val = (num_rows as f64 * 0.1).floor() as usize;
    let train = idx[..n_train].to_vec();
    let validation = idx[n_train..n_train + n_val].to_vec();
    let test = idx[n_train + n_val..].to_vec();
    Ok(Split { train, validation, test })
}

/// The token a cell contributes to its field's vocabulary. Numeric cells are
/// binned first so the vocabulary is over bin numbers.
fn cell_tokens(cell: &str, kind: FieldKind) -> Result<Vec<String>> {
    match kind {
        FieldKind::CategoricalSingle => {
            if cell.is_empty() {
                Ok(vec![])
            } else {
                Ok(vec![cell.to_string()])
            }
        }
        FieldKind::CategoricalMulti => {
            Ok(cell.split('|').filter(|t| !t.is_empty()).map(str::to_string).collect())
        }
        FieldKind::NumericBinned => {
            let parsed = if cell.is_empty() {
                None
            } else {
                Some(cell.parse::<f64>().map_err(|_| {
                    Error::Data(format!("cannot parse numeric cell `{cell}`"))
                })?)
            };
            Ok(vec![bin_numeric(parsed).to_string()])
        }
    }
}

/// Count features over the training rows and assign dense ids.
///
/// Features occurring at least `min_count` times get their own id; everything
/// else (including features first seen at transform time) maps to the rare
/// id 0. Ids are assigned in sorted token order so they do not depend on row
/// order: lexicographic for categorical fields, numeric for bin numbers,
/// which keeps the reserved bins ahead of the value bins.
pub fn build_vocab(
    data: &RawDataset,
    train_rows: &[usize],
    schema: &FieldSchema,
    min_count: u32,
) -> Result<FieldSchema> {
    if train_rows.is_empty() {
        return Err(Error::Data("cannot build a vocabulary from an empty training set".into()));
    }
    let m = schema.num_fields();
    let mut counts: Vec<HashMap<String, u32>> = vec![HashMap::new(); m];
    for &row in train_rows {
        let (_, cells) = data.cells(&data.lines[row], row, m)?;
        for ((cell, def), field_counts) in
            cells.iter().zip(schema.fields()).zip(counts.iter_mut())
        {
            for token in cell_tokens(cell, def.kind)? {
                if token.contains('\t') {
                    return Err(Error::Data(format!(
                        "row {row}: token `{token}` contains a tab"
                    )));
                }
                *field_counts.entry(token).or_insert(0) += 1;
            }
        }
    }

    let mut built = schema.clone();
    for (f, field_counts) in counts.iter_mut().enumerate() {
        let kind = schema.field(f).kind;
        let mut kept: Vec<String> = field_counts
            .drain()
            .filter(|(_, c)| *c >= min_count)
            .map(|(t, _)| t)
            .collect();
        if kind == FieldKind::NumericBinned {
            kept.sort_by_key(|t| t.parse::<u32>().unwrap_or(u32::MAX));
        } else {
            kept.sort_unstable();
        }
        let def: &mut FieldDef = built.field_mut(f);
        def.tokens.clear();
        for (i, token) in kept.into_iter().enumerate() {
            def.tokens.insert(token, (i + 1) as u32);
        }
        def.vocab_size = def.tokens.len() as u32 + 1;
    }
    Ok(built)
}

/// Encode one raw line against a built schema.
///
/// Single-value fields contribute one entry of weight 1 (missing cells fall
/// into the rare bucket), multi-value fields contribute q entries of weight
/// 1/q, and numeric fields are binned then looked up.
pub fn encode_row(data: &RawDataset, row: usize, schema: &FieldSchema) -> Result<Sample> {
    if !schema.vocab_built() {
        return Err(Error::Data("vocabulary has not been built for this schema".into()));
    }
    let m = schema.num_fields();
    let (label_cell, cells) = data.cells(&data.lines[row], row, m)?;
    let label: f64 = label_cell
        .parse()
        .map_err(|_| Error::Data(format!("row {row}: cannot parse label `{label_cell}`")))?;

    let mut entries = Vec::with_capacity(m);
    for (f, cell) in cells.iter().enumerate() {
        let def = schema.field(f);
        let tokens = cell_tokens(cell, def.kind)
            .map_err(|e| Error::Data(format!("row {row}, field `{}`: {e}", def.name)))?;
        if tokens.is_empty() {
            // Missing single-value or empty multi-value cell: rare id, weight 1.
            entries.push(FeatureRef { field: f as u16, id: 0, weight: 1.0 });
            continue;
        }
        let w = 1.0 / tokens.len() as f64;
        for token in tokens {
            entries.push(FeatureRef { field: f as u16, id: def.id_of(&token), weight: w });
        }
    }
    Ok(Sample { label, entries })
}

pub fn encode_rows(data: &RawDataset, rows: &[usize], schema: &FieldSchema) -> Result<Vec<Sample>> {
    rows.iter().map(|&r| encode_row(data, r, schema)).collect()
}

// ---- MovieLens 1M adapter ---------------------------------------------------

/// Convert the MovieLens 1M `.dat` files into the canonical dataset format.
///
/// Ratings are joined with the user and movie tables; the unix timestamp is
/// expanded into year, month, day-of-week and hour-of-day columns. The output
/// is a (schema, lines) pair where each line is
/// `rating<TAB>user<TAB>gender<TAB>age<TAB>occupation<TAB>zip<TAB>year<TAB>
/// month<TAB>dow<TAB>hour<TAB>movie<TAB>genres`.
pub fn ingest_movielens_1m(dir: &Path) -> Result<(FieldSchema, Vec<String>)> {
    let read = |name: &str| -> Result<Vec<String>> {
        let path = dir.join(name);
        let bytes = std::fs::read(&path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        // The 1M archive is latin-1 encoded; movie titles contain bytes that
        // are not valid UTF-8.
        let text: String = bytes.iter().map(|&b| b as char).collect();
        Ok(text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect())
    };

    let mut users: HashMap<String, [String; 4]> = HashMap::new();
    for line in read("users.dat")? {
        let p: Vec<&str> = line.split("::").collect();
        if p.len() != 5 {
            return Err(Error::Data(format!("malformed users.dat line: `{line}`")));
        }
        users.insert(
            p[0].to_string(),
            [p[1].to_string(), p[2].to_string(), p[3].to_string(), p[4].to_string()],
        );
    }

    let mut movies: HashMap<String, String> = HashMap::new();
    for line in read("movies.dat")? {
        let p: Vec<&str> = line.split("::").collect();
        if p.len() != 3 {
            return Err(Error::Data(format!("malformed movies.dat line: `{line}`")));
        }
        movies.insert(p[0].to_string(), p[2].to_string());
    }

    let mut lines = Vec::new();
    for line in read("ratings.dat")? {
        let p: Vec<&str> = line.split("::").collect();
        if p.len() != 4 {
            return Err(Error::Data(format!("malformed ratings.dat line: `{line}`")));
        }
        let (user, movie, rating, ts) = (p[0], p[1], p[2], p[3]);
        let u = users
            .get(user)
            .ok_or_else(|| Error::Data(format!("rating references unknown user {user}")))?;
        let genres = movies
            .get(movie)
            .ok_or_else(|| Error::Data(format!("rating references unknown movie {movie}")))?;
        let ts: i64 = ts
            .parse()
            .map_err(|_| Error::Data(format!("bad timestamp `{ts}`")))?;
        let (year, month, dow, hour) = expand_timestamp(ts)?;
        lines.push(format!(
            "{rating}\t{user}\t{}\t{}\t{}\t{}\t{year}\t{month}\t{dow}\t{hour}\t{movie}\t{genres}",
            u[0], u[1], u[2], u[3]
        ));
    }
    if lines.is_empty() {
        return Err(Error::Data("ratings.dat produced no rows".into()));
    }
    Ok((movielens_schema()?, lines))
}

/// Expand a unix timestamp into (year, month, day-of-week, hour-of-day), UTC.
pub fn expand_timestamp(ts: i64) -> Result<(i32, u32, u32, u32)> {
    use chrono::{Datelike, Timelike};
    let dt = chrono::DateTime::from_timestamp(ts, 0)
        .ok_or_else(|| Error::Data(format!("timestamp {ts} out of range")))?;
    Ok((dt.year(), dt.month(), dt.weekday().num_days_from_monday(), dt.hour()))
}

/// The 11-field MovieLens schema: user and time columns are context, the
/// movie and its genres are the item.
pub fn movielens_schema() -> Result<FieldSchema> {
    let ctx = |name: &str| FieldDef::new(name, Role::Context, FieldKind::CategoricalSingle);
    FieldSchema::new(vec![
        ctx("user_id"),
        ctx("gender"),
        ctx("age"),
        ctx("occupation"),
        ctx("zip"),
        ctx("year"),
        ctx("month"),
        ctx("day_of_week"),
        ctx("hour"),
        FieldDef::new("movie_id", Role::Item, FieldKind::CategoricalSingle),
        FieldDef::new("genres", Role::Item, FieldKind::CategoricalMulti),
    ])
}
