//! Columnar model for categorical datasets with a binary outcome.
//!
//! Attribute values are dictionary-encoded: a [`Record`] stores one `u32`
//! index per attribute and the string vocabularies live in the [`Schema`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Max spread of supplied probabilities tolerated inside one covariate profile.
pub const PROFILE_P_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    /// Vocabulary in first-seen order.
    pub values: Vec<String>,
}

impl Attribute {
    pub fn arity(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub attributes: Vec<Attribute>,
    pub outcome_column: String,
    #[serde(default)]
    pub probability_column: Option<String>,
}

impl Schema {
    pub fn new(
        attributes: Vec<Attribute>,
        outcome_column: impl Into<String>,
        probability_column: Option<String>,
    ) -> Result<Self> {
        let schema = Schema {
            attributes,
            outcome_column: outcome_column.into(),
            probability_column,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for attr in &self.attributes {
            if !seen.insert(attr.name.as_str()) {
                return Err(Error::schema(format!("duplicate attribute '{}'", attr.name)));
            }
            if attr.values.is_empty() {
                return Err(Error::schema(format!("attribute '{}' has no values", attr.name)));
            }
            let distinct: HashSet<_> = attr.values.iter().collect();
            if distinct.len() != attr.values.len() {
                return Err(Error::schema(format!(
                    "attribute '{}' has duplicate values",
                    attr.name
                )));
            }
        }
        if seen.contains(self.outcome_column.as_str()) {
            return Err(Error::schema(format!(
                "outcome column '{}' is also an attribute",
                self.outcome_column
            )));
        }
        if let Some(p) = &self.probability_column {
            if seen.contains(p.as_str()) || *p == self.outcome_column {
                return Err(Error::schema(format!(
                    "probability column '{p}' collides with another column"
                )));
            }
        }
        Ok(())
    }

    pub fn arity(&self) -> usize {
        self.attributes.len()
    }

    pub fn arities(&self) -> Vec<usize> {
        self.attributes.iter().map(Attribute::arity).collect()
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn value_index(&self, attribute: usize, value: &str) -> Option<u32> {
        self.attributes[attribute]
            .values
            .iter()
            .position(|v| v == value)
            .map(|i| i as u32)
    }

    /// Human-readable `name=value` pairs for a profile.
    pub fn describe_profile(&self, values: &[u32]) -> BTreeMap<String, String> {
        self.attributes
            .iter()
            .zip(values)
            .map(|(a, &v)| (a.name.clone(), a.values[v as usize].clone()))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: Schema = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub values: Vec<u32>,
    pub y: bool,
    pub p: Option<f64>,
}

impl Record {
    pub fn new(values: Vec<u32>, y: bool) -> Self {
        Record { values, y, p: None }
    }

    pub fn with_p(values: Vec<u32>, y: bool, p: f64) -> Self {
        Record {
            values,
            y,
            p: Some(p),
        }
    }
}

/// What the per-record probability means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProbSemantics {
    #[default]
    None,
    /// Ground-truth conditional `P(Y=1 | x)`.
    TrueP,
    /// Prediction of a model trained on unbiased data.
    UnbiasedPred,
    /// Prediction of a model trained on biased data.
    BiasedPred,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub records: Vec<Record>,
    pub prob_semantics: ProbSemantics,
}

pub fn is_open_unit(p: f64) -> bool {
    p > 0.0 && p < 1.0
}

impl Dataset {
    pub fn new(schema: Schema, records: Vec<Record>, prob_semantics: ProbSemantics) -> Result<Self> {
        let arities = schema.arities();
        for (i, r) in records.iter().enumerate() {
            if r.values.len() != arities.len() {
                return Err(Error::schema(format!(
                    "record {i} has {} values, schema has {} attributes",
                    r.values.len(),
                    arities.len()
                )));
            }
            if let Some((j, _)) = r
                .values
                .iter()
                .zip(&arities)
                .enumerate()
                .find(|(_, (&v, &a))| v as usize >= a)
            {
                return Err(Error::schema(format!(
                    "record {i}: value index out of range for attribute '{}'",
                    schema.attributes[j].name
                )));
            }
            if let Some(p) = r.p {
                if !is_open_unit(p) {
                    return Err(Error::schema(format!(
                        "record {i}: probability {p} outside (0, 1)"
                    )));
                }
            }
        }
        Ok(Dataset {
            schema,
            records,
            prob_semantics,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has_probabilities(&self) -> bool {
        self.records.iter().all(|r| r.p.is_some())
    }

    pub fn positives(&self) -> usize {
        self.records.iter().filter(|r| r.y).count()
    }

    /// `(y, p)` pairs; errors if any record lacks a probability.
    pub fn outcomes(&self) -> Result<Vec<(bool, f64)>> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.p.map(|p| (r.y, p))
                    .ok_or_else(|| Error::precondition(format!("record {i} has no probability")))
            })
            .collect()
    }

    /// Same records, new schema/semantics label. Used when attaching
    /// predictions.
    pub fn with_probabilities(&self, probs: &[f64], semantics: ProbSemantics) -> Result<Dataset> {
        if probs.len() != self.records.len() {
            return Err(Error::invalid("probability vector length mismatch"));
        }
        let mut schema = self.schema.clone();
        if schema.probability_column.is_none() {
            schema.probability_column = Some("p".to_owned());
        }
        let records = self
            .records
            .iter()
            .zip(probs)
            .map(|(r, &p)| Record::with_p(r.values.clone(), r.y, p))
            .collect();
        Dataset::new(schema, records, semantics)
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            prob_semantics: self.prob_semantics,
        }
    }

    /// Number of distinct attribute-value tuples.
    pub fn distinct_profiles(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.values.as_slice())
            .collect::<HashSet<_>>()
            .len()
    }
}

/// Rectangular subgroup `S_1 × … × S_Q`, one sorted value-index set per
/// attribute. Any empty `S_j` makes the whole subgroup empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Subgroup {
    sets: Vec<Vec<u32>>,
}

impl Subgroup {
    pub fn from_sets(mut sets: Vec<Vec<u32>>) -> Self {
        for s in &mut sets {
            s.sort_unstable();
            s.dedup();
        }
        Subgroup { sets }
    }

    pub fn full(schema: &Schema) -> Self {
        Subgroup {
            sets: schema
                .attributes
                .iter()
                .map(|a| (0..a.arity() as u32).collect())
                .collect(),
        }
    }

    pub fn empty(schema: &Schema) -> Self {
        Subgroup {
            sets: vec![Vec::new(); schema.arity()],
        }
    }

    /// Builds a subgroup from `{attribute: [values]}`; attributes not named
    /// are unconstrained.
    pub fn from_named(schema: &Schema, named: &BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut sub = Subgroup::full(schema);
        for (name, values) in named {
            let j = schema
                .attribute_index(name)
                .ok_or_else(|| Error::schema(format!("unknown attribute '{name}'")))?;
            let set = values
                .iter()
                .map(|v| {
                    schema.value_index(j, v).ok_or_else(|| {
                        Error::schema(format!("attribute '{name}' has no value '{v}'"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            sub.sets[j] = set;
        }
        Ok(Subgroup::from_sets(sub.sets))
    }

    /// `{attribute: [values]}` for every attribute, in schema order.
    pub fn to_named(&self, schema: &Schema) -> Vec<(String, Vec<String>)> {
        schema
            .attributes
            .iter()
            .zip(&self.sets)
            .map(|(a, s)| {
                (
                    a.name.clone(),
                    s.iter().map(|&v| a.values[v as usize].clone()).collect(),
                )
            })
            .collect()
    }

    pub fn to_json_value(&self, schema: &Schema) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .to_named(schema)
            .into_iter()
            .map(|(k, v)| (k, serde_json::Value::from(v)))
            .collect();
        serde_json::Value::Object(map)
    }

    pub fn from_json_value(schema: &Schema, value: &serde_json::Value) -> Result<Self> {
        let named: BTreeMap<String, Vec<String>> = serde_json::from_value(value.clone())?;
        Subgroup::from_named(schema, &named)
    }

    pub fn sets(&self) -> &[Vec<u32>] {
        &self.sets
    }

    pub fn set(&self, attribute: usize) -> &[u32] {
        &self.sets[attribute]
    }

    pub fn replace(&self, attribute: usize, values: Vec<u32>) -> Subgroup {
        let mut sets = self.sets.clone();
        sets[attribute] = values;
        Subgroup::from_sets(sets)
    }

    pub fn arity(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.iter().any(Vec::is_empty)
    }

    pub fn contains(&self, values: &[u32]) -> bool {
        self.sets
            .iter()
            .zip(values)
            .all(|(s, v)| s.binary_search(v).is_ok())
    }

    pub fn conforms(&self, schema: &Schema) -> Result<()> {
        if self.sets.len() != schema.arity() {
            return Err(Error::schema(format!(
                "subgroup has {} attributes, schema has {}",
                self.sets.len(),
                schema.arity()
            )));
        }
        for (s, a) in self.sets.iter().zip(&schema.attributes) {
            if s.iter().any(|&v| v as usize >= a.arity()) {
                return Err(Error::schema(format!(
                    "subgroup value out of range for attribute '{}'",
                    a.name
                )));
            }
        }
        Ok(())
    }

    /// Per-attribute membership masks, for tight loops.
    pub fn masks(&self, arities: &[usize]) -> Vec<Vec<bool>> {
        self.sets
            .iter()
            .zip(arities)
            .map(|(s, &a)| {
                let mut m = vec![false; a];
                for &v in s {
                    m[v as usize] = true;
                }
                m
            })
            .collect()
    }
}

/// Row indices of `D_S`, in dataset order.
pub fn member_indices(d: &Dataset, s: &Subgroup) -> Result<Vec<usize>> {
    s.conforms(&d.schema)?;
    Ok(d.records
        .iter()
        .enumerate()
        .filter(|(_, r)| s.contains(&r.values))
        .map(|(i, _)| i)
        .collect())
}

/// `D_S`: the records whose profile lies in `s`, stable order.
pub fn subgroup_members(d: &Dataset, s: &Subgroup) -> Result<Dataset> {
    let idx = member_indices(d, s)?;
    Ok(d.select(&idx))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileStats {
    pub n: u64,
    pub y: u64,
    pub p: f64,
}

/// Aggregates `n(x)`, `y(x)`, `p(x)` per covariate profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTable {
    pub profiles: BTreeMap<Vec<u32>, ProfileStats>,
}

impl ProfileTable {
    /// Number of unique profiles, `M`.
    pub fn m(&self) -> usize {
        self.profiles.len()
    }

    pub fn total(&self) -> u64 {
        self.profiles.values().map(|s| s.n).sum()
    }
}

pub fn build_profile_table(d: &Dataset) -> Result<ProfileTable> {
    // (stats, min p, max p)
    let mut acc: BTreeMap<Vec<u32>, (ProfileStats, f64, f64)> = BTreeMap::new();
    for (i, r) in d.records.iter().enumerate() {
        let p = r
            .p
            .ok_or_else(|| Error::precondition(format!("record {i} has no probability")))?;
        let e = acc.entry(r.values.clone()).or_insert((
            ProfileStats { n: 0, y: 0, p },
            p,
            p,
        ));
        e.0.n += 1;
        e.0.y += u64::from(r.y);
        e.1 = e.1.min(p);
        e.2 = e.2.max(p);
        if e.2 - e.1 > PROFILE_P_TOLERANCE {
            return Err(Error::precondition(format!(
                "profile {:?} carries differing probabilities ({} vs {})",
                d.schema.describe_profile(&r.values),
                e.1,
                e.2
            )));
        }
    }
    Ok(ProfileTable {
        profiles: acc.into_iter().map(|(k, (s, _, _))| (k, s)).collect(),
    })
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, Default)]
pub struct ColumnRoles {
    /// Defaults to `y`.
    pub outcome: Option<String>,
    /// Defaults to `p` when such a column exists.
    pub probability: Option<String>,
    /// Defaults to every remaining column, in file order.
    pub attributes: Option<Vec<String>>,
    /// Fixed vocabularies; values outside them are rejected.
    pub schema: Option<Schema>,
    pub semantics: Option<ProbSemantics>,
}

pub fn load_dataset(path: impl AsRef<Path>, roles: &ColumnRoles) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, roles)
}

pub fn read_csv<R: Read>(reader: R, roles: &ColumnRoles) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Row {
            row: 1,
            message: "empty file or missing header".into(),
        });
    }
    let col = |name: &str| header.iter().position(|h| h == name);

    let outcome_name = roles
        .outcome
        .clone()
        .or_else(|| roles.schema.as_ref().map(|s| s.outcome_column.clone()))
        .unwrap_or_else(|| "y".to_owned());
    let outcome_col = col(&outcome_name).ok_or_else(|| Error::Row {
        row: 1,
        message: format!("missing outcome column '{outcome_name}'"),
    })?;

    let prob_name = match &roles.probability {
        Some(name) => {
            if col(name).is_none() {
                return Err(Error::Row {
                    row: 1,
                    message: format!("missing probability column '{name}'"),
                });
            }
            Some(name.clone())
        }
        None => roles
            .schema
            .as_ref()
            .and_then(|s| s.probability_column.clone())
            .filter(|n| col(n).is_some())
            .or_else(|| col("p").map(|_| "p".to_owned())),
    };
    let prob_col = prob_name.as_deref().and_then(col);

    let attr_names: Vec<String> = match (&roles.attributes, &roles.schema) {
        (Some(names), _) => names.clone(),
        (None, Some(schema)) => schema.attributes.iter().map(|a| a.name.clone()).collect(),
        (None, None) => header
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != outcome_col && Some(i) != prob_col)
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let attr_cols = attr_names
        .iter()
        .map(|n| {
            col(n).ok_or_else(|| Error::Row {
                row: 1,
                message: format!("missing attribute column '{n}'"),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let fixed = roles.schema.as_ref();
    let mut vocab: Vec<Vec<String>> = match fixed {
        Some(s) => s.attributes.iter().map(|a| a.values.clone()).collect(),
        None => vec![Vec::new(); attr_names.len()],
    };
    let mut lookup: Vec<HashMap<String, u32>> = vocab
        .iter()
        .map(|vs| vs.iter().enumerate().map(|(i, v)| (v.clone(), i as u32)).collect())
        .collect();

    let mut records = Vec::new();
    for (k, row) in rdr.records().enumerate() {
        let row_no = k + 2;
        let row = row?;
        let field = |c: usize| row.get(c).unwrap_or("");
        let y = match field(outcome_col) {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Row {
                    row: row_no,
                    message: format!("outcome must be 0 or 1, got '{other}'"),
                })
            }
        };
        let p = match prob_col {
            Some(c) => {
                let raw = field(c);
                let p: f64 = raw.trim().parse().map_err(|_| Error::Row {
                    row: row_no,
                    message: format!("unparseable probability '{raw}'"),
                })?;
                if !is_open_unit(p) {
                    return Err(Error::Row {
                        row: row_no,
                        message: format!("probability {raw} outside the open interval (0, 1)"),
                    });
                }
                Some(p)
            }
            None => None,
        };
        let mut values = Vec::with_capacity(attr_cols.len());
        for (j, &c) in attr_cols.iter().enumerate() {
            let raw = field(c);
            let idx = match lookup[j].get(raw) {
                Some(&i) => i,
                None if fixed.is_some() => {
                    return Err(Error::Row {
                        row: row_no,
                        message: format!("value '{raw}' not in vocabulary of '{}'", attr_names[j]),
                    })
                }
                None => {
                    let i = vocab[j].len() as u32;
                    vocab[j].push(raw.to_owned());
                    lookup[j].insert(raw.to_owned(), i);
                    i
                }
            };
            values.push(idx);
        }
        records.push(Record { values, y, p });
    }
    if records.is_empty() && fixed.is_none() && !attr_names.is_empty() {
        return Err(Error::Row {
            row: 2,
            message: "no data rows".into(),
        });
    }

    let schema = Schema::new(
        attr_names
            .into_iter()
            .zip(vocab)
            .map(|(name, values)| Attribute { name, values })
            .collect(),
        outcome_name,
        prob_name,
    )?;
    let semantics = match (prob_col, roles.semantics) {
        (None, _) => ProbSemantics::None,
        (Some(_), Some(s)) => s,
        (Some(_), None) => ProbSemantics::TrueP,
    };
    Ok(Dataset {
        schema,
        records,
        prob_semantics: semantics,
    })
}

/// Formats like C's `%.17g`: 17 significant digits, trailing zeros removed.
pub fn format_g17(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..17).contains(&exp) {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let decimals = (16 - exp) as usize;
    strip_zeros(&format!("{:.*}", decimals, x)).to_owned()
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Canonical CSV: header, attributes in schema order, outcome, then the
/// probability column when the schema names one.
pub fn write_csv<W: Write>(d: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let mut header: Vec<&str> = d.schema.attributes.iter().map(|a| a.name.as_str()).collect();
    header.push(&d.schema.outcome_column);
    if let Some(p) = &d.schema.probability_column {
        header.push(p);
    }
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for (i, r) in d.records.iter().enumerate() {
        row.clear();
        for (a, &v) in d.schema.attributes.iter().zip(&r.values) {
            row.push(a.values[v as usize].clone());
        }
        row.push(if r.y { "1" } else { "0" }.to_owned());
        if d.schema.probability_column.is_some() {
            let p = r
                .p
                .ok_or_else(|| Error::precondition(format!("record {i} has no probability")))?;
            row.push(format_g17(p));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(d, std::io::BufWriter::new(file))
}

pub fn to_csv_string(d: &Dataset) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(d, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}
