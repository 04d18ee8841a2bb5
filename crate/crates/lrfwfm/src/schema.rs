//! Field schema: ordered fields split into a context prefix and an item
//! suffix, each with a kind and (once built) a vocabulary.
//!
//! Two text formats live here. The schema file declares fields before any
//! data is seen; the vocabulary file is written after vocabulary building and
//! bundles the schema with the token-to-id maps so a trained model can encode
//! new rows.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Context,
    Item,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Context => write!(f, "context"),
            Role::Item => write!(f, "item"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    CategoricalSingle,
    CategoricalMulti,
    NumericBinned,
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FieldKind::CategoricalSingle => "categorical-single",
            FieldKind::CategoricalMulti => "categorical-multi",
            FieldKind::NumericBinned => "numeric-binned",
        };
        write!(f, "{s}")
    }
}

/// One column of the dataset.
///
/// `tokens` maps raw feature strings (or bin numbers rendered as strings for
/// numeric fields) to dense ids starting at 1. Id 0 is reserved for the rare
/// bucket of every field and never appears in the map. `vocab_size` counts
/// the rare bucket, so it equals `tokens.len() + 1` once built.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDef {
    pub name: String,
    pub role: Role,
    pub kind: FieldKind,
    pub vocab_size: u32,
    pub tokens: BTreeMap<String, u32>,
}

impl FieldDef {
    pub fn new(name: impl Into<String>, role: Role, kind: FieldKind) -> FieldDef {
        FieldDef { name: name.into(), role, kind, vocab_size: 0, tokens: BTreeMap::new() }
    }

    /// Dense id for a raw token: the mapped id, or the rare id 0.
    pub fn id_of(&self, token: &str) -> u32 {
        self.tokens.get(token).copied().unwrap_or(0)
    }

    pub fn has_vocab(&self) -> bool {
        self.vocab_size >= 1
    }
}

/// Ordered field list; context fields come first.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSchema {
    fields: Vec<FieldDef>,
    num_context: usize,
}

impl FieldSchema {
    pub fn new(fields: Vec<FieldDef>) -> Result<FieldSchema> {
        let m = fields.len();
        if m < 2 {
            return Err(Error::Data(format!("schema needs at least 2 fields, got {m}")));
        }
        let num_context = fields.iter().take_while(|f| f.role == Role::Context).count();
        if num_context == 0 || num_context == m {
            return Err(Error::Data(
                "schema needs at least one context field and one item field".into(),
            ));
        }
        if fields[num_context..].iter().any(|f| f.role == Role::Context) {
            return Err(Error::Data(
                "context fields must form a contiguous prefix of the schema".into(),
            ));
        }
        let mut names: Vec<&str> = fields.iter().map(|f| f.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != m {
            return Err(Error::Data("field names must be unique".into()));
        }
        Ok(FieldSchema { fields, num_context })
    }

    /// Total number of fields, m.
    pub fn num_fields(&self) -> usize {
        self.fields.len()
    }

    /// Number of context fields, m_c. Fields 0..m_c are context.
    pub fn num_context(&self) -> usize {
        self.num_context
    }

    pub fn num_item(&self) -> usize {
        self.fields.len() - self.num_context
    }

    pub fn fields(&self) -> &[FieldDef] {
        &self.fields
    }

    pub fn field(&self, i: usize) -> &FieldDef {
        &self.fields[i]
    }

    pub(crate) fn field_mut(&mut self, i: usize) -> &mut FieldDef {
        &mut self.fields[i]
    }

    /// True once every field has a vocabulary.
    pub fn vocab_built(&self) -> bool {
        self.fields.iter().all(|f| f.has_vocab())
    }

    /// Sum of per-field vocabulary sizes: the global feature count n.
    pub fn total_features(&self) -> u64 {
        self.fields.iter().map(|f| f.vocab_size as u64).sum()
    }

    /// Base offset of each field in the global feature index space.
    pub fn feature_offsets(&self) -> Vec<u32> {
        let mut offsets = Vec::with_capacity(self.fields.len());
        let mut acc = 0u32;
        for f in &self.fields {
            offsets.push(acc);
            acc += f.vocab_size;
        }
        offsets
    }

    /// Placeholder schema for models loaded from the binary format, which
    /// stores only counts. Field names, kinds and token maps are unknown;
    /// encoding rows against such a schema fails until a vocabulary file is
    /// attached.
    pub fn placeholder(m: usize, m_c: usize, vocab_sizes: &[u32]) -> Result<FieldSchema> {
        if vocab_sizes.len() != m || m_c == 0 || m_c >= m {
            return Err(Error::Format(format!(
                "invalid shape: m={m}, m_c={m_c}, {} vocab sizes",
                vocab_sizes.len()
            )));
        }
        let fields = vocab_sizes
            .iter()
            .enumerate()
            .map(|(i, &vs)| {
                let role = if i < m_c { Role::Context } else { Role::Item };
                let mut def = FieldDef::new(format!("f{i}"), role, FieldKind::CategoricalSingle);
                def.vocab_size = vs;
                def
            })
            .collect();
        FieldSchema::new(fields)
    }

    // ---- schema declaration file ------------------------------------------

    /// Parse the key-value schema declaration format:
    ///
    /// ```text
    /// [field]
    /// name = user_id
    /// role = context
    /// kind = categorical-single
    /// ```
    ///
    /// Numeric fields also carry `bins = ln2`, the only binning rule.
    pub fn parse_declaration(text: &str) -> Result<FieldSchema> {
        let mut fields: Vec<FieldDef> = Vec::new();
        let mut current: Option<BTreeMap<String, String>> = None;

        let flush = |kv: Option<BTreeMap<String, String>>| -> Result<Option<FieldDef>> {
            let Some(kv) = kv else { return Ok(None) };
            let get = |key: &str| {
                kv.get(key)
                    .cloned()
                    .ok_or_else(|| Error::Format(format!("schema field is missing `{key}`")))
            };
            let name = get("name")?;
            let role = match get("role")?.as_str() {
                "context" => Role::Context,
                "item" => Role::Item,
                other => return Err(Error::Format(format!("unknown role `{other}`"))),
            };
            let kind = match get("kind")?.as_str() {
                "categorical-single" => FieldKind::CategoricalSingle,
                "categorical-multi" => FieldKind::CategoricalMulti,
                "numeric-binned" => FieldKind::NumericBinned,
                other => return Err(Error::Format(format!("unknown kind `{other}`"))),
            };
            if kind == FieldKind::NumericBinned {
                match kv.get("bins").map(String::as_str) {
                    Some("ln2") => {}
                    Some(other) => {
                        return Err(Error::Format(format!("unknown binning rule `{other}`")))
                    }
                    None => {
                        return Err(Error::Format(format!(
                            "numeric field `{name}` needs `bins = ln2`"
                        )))
                    }
                }
            }
            Ok(Some(FieldDef::new(name, role, kind)))
        };

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == "[field]" {
                if let Some(def) = flush(current.take())? {
                    fields.push(def);
                }
                current = Some(BTreeMap::new());
            } else if let Some((key, value)) = line.split_once('=') {
                let section = current.as_mut().ok_or_else(|| {
                    Error::Format(format!("line {}: key outside a [field] section", lineno + 1))
                })?;
                section.insert(key.trim().to_string(), value.trim().to_string());
            } else {
                return Err(Error::Format(format!("line {}: cannot parse `{line}`", lineno + 1)));
            }
        }
        if let Some(def) = flush(current.take())? {
            fields.push(def);
        }
        FieldSchema::new(fields)
    }

    pub fn load_declaration(path: &Path) -> Result<FieldSchema> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read schema {}: {e}", path.display())))?;
        FieldSchema::parse_declaration(&text)
    }

    pub fn declaration_text(&self) -> String {
        let mut out = String::new();
        for f in &self.fields {
            out.push_str("[field]\n");
            out.push_str(&format!("name = {}\n", f.name));
            out.push_str(&format!("role = {}\n", f.role));
            out.push_str(&format!("kind = {}\n", f.kind));
            if f.kind == FieldKind::NumericBinned {
                out.push_str("bins = ln2\n");
            }
            out.push('\n');
        }
        out
    }

    // ---- vocabulary file ---------------------------------------------------

    /// Serialize schema plus vocabularies. Tab-separated; one `field` line per
    /// field followed by its `t <token> <id>` lines.
    pub fn vocab_text(&self) -> String {
        let mut out = String::from("lrfwfm-vocab\t1\n");
        for f in &self.fields {
            out.push_str(&format!(
                "field\t{}\t{}\t{}\t{}\n",
                f.name, f.role, f.kind, f.vocab_size
            ));
            for (token, id) in &f.tokens {
                out.push_str(&format!("t\t{token}\t{id}\n"));
            }
        }
        out
    }

    pub fn parse_vocab(text: &str) -> Result<FieldSchema> {
        let mut lines = text.lines();
        if lines.next() != Some("lrfwfm-vocab\t1") {
            return Err(Error::Format("not a vocabulary file (bad header)".into()));
        }
        let mut fields: Vec<FieldDef> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            match parts.as_slice() {
                ["field", name, role, kind, size] => {
                    let role = match *role {
                        "context" => Role::Context,
                        "item" => Role::Item,
                        other => return Err(Error::Format(format!("unknown role `{other}`"))),
                    };
                    let kind = match *kind {
                        "categorical-single" => FieldKind::CategoricalSingle,
                        "categorical-multi" => FieldKind::CategoricalMulti,
                        "numeric-binned" => FieldKind::NumericBinned,
                        other => return Err(Error::Format(format!("unknown kind `{other}`"))),
                    };
                    let mut def = FieldDef::new(*name, role, kind);
                    def.vocab_size = size
                        .parse()
                        .map_err(|_| Error::Format(format!("bad vocab size `{size}`")))?;
                    fields.push(def);
                }
                ["t", token, id] => {
                    let def = fields.last_mut().ok_or_else(|| {
                        Error::Format(format!("line {}: token before any field", lineno + 2))
                    })?;
                    let id: u32 = id
                        .parse()
                        .map_err(|_| Error::Format(format!("bad token id `{id}`")))?;
                    def.tokens.insert((*token).to_string(), id);
                }
                _ => {
                    return Err(Error::Format(format!(
                        "line {}: cannot parse vocabulary line",
                        lineno + 2
                    )))
                }
            }
        }
        let schema = FieldSchema::new(fields)?;
        for f in schema.fields() {
            if f.vocab_size as usize != f.tokens.len() + 1 {
                return Err(Error::Format(format!(
                    "field `{}` declares vocab size {} but carries {} tokens",
                    f.name,
                    f.vocab_size,
                    f.tokens.len()
                )));
            }
        }
        Ok(schema)
    }

    pub fn save_vocab(&self, path: &Path) -> Result<()> {
        fs::write(path, self.vocab_text())
            .map_err(|e| Error::Data(format!("cannot write vocabulary {}: {e}", path.display())))
    }

    pub fn load_vocab(path: &Path) -> Result<FieldSchema> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read vocabulary {}: {e}", path.display())))?;
        FieldSchema::parse_vocab(&text)
    }

    /// Check that this schema's shape matches another (used when attaching a
    /// vocabulary file to a model loaded from the binary format).
    pub fn shape_matches(&self, other: &FieldSchema) -> bool {
        self.num_fields() == other.num_fields()
            && self.num_context() == other.num_context()
            && self
                .fields
                .iter()
                .zip(other.fields())
                .all(|(a, b)| a.vocab_size == b.vocab_size)
    }
}
