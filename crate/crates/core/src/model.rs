//! Domain types shared by every other module: source datasets, the
//! hierarchical target schema, and per-attribute value profiles.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hierarchy label used when a target attribute has no supercategory or category.
pub const UNCATEGORIZED: &str = "(uncategorized)";

/// Values treated as missing, compared case-insensitively after trimming.
const NULL_TOKENS: [&str; 4] = ["na", "n/a", "null", "none"];

/// Fraction of non-null values that must parse as numbers for a numeric type.
const NUMERIC_FRACTION: f64 = 0.9;
const ENUM_MIN_CARDINALITY: usize = 20;
const ENUM_FRACTION: f64 = 0.1;
const TOP_VALUE_BINS: usize = 20;
pub const NUMERIC_BINS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("malformed table: {0}")]
    MalformedTable(String),
    #[error("duplicate attribute `{name}` (normalized `{normalized}`)")]
    DuplicateAttribute { name: String, normalized: String },
    #[error("schema parse error at {context}: {message}")]
    SchemaParseError { context: String, message: String },
    #[error("schema contains no attributes")]
    EmptySchema,
}

/// Canonical form used wherever attribute names or values are compared:
/// lowercase, runs of non-alphanumerics collapsed to `_`, outer `_` trimmed.
pub fn normalize_name(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_sep = false;
    for ch in raw.chars() {
        if ch.is_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.extend(ch.to_lowercase());
        } else {
            pending_sep = true;
        }
    }
    out
}

pub fn is_null(raw: &str) -> bool {
    let trimmed = raw.trim();
    trimmed.is_empty() || NULL_TOKENS.iter().any(|t| trimmed.eq_ignore_ascii_case(t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Enumeration,
    Number,
    Integer,
    Text,
    Boolean,
    Unknown,
}

impl ValueType {
    pub fn is_numeric(self) -> bool {
        matches!(self, ValueType::Number | ValueType::Integer)
    }

    /// Accepts the canonical names plus a few common aliases.
    pub fn parse(raw: &str) -> Option<Self> {
        Some(match raw.trim().to_ascii_lowercase().as_str() {
            "enumeration" | "enum" | "categorical" => ValueType::Enumeration,
            "number" | "float" | "double" | "real" => ValueType::Number,
            "integer" | "int" => ValueType::Integer,
            "text" | "string" | "str" => ValueType::Text,
            "boolean" | "bool" => ValueType::Boolean,
            "unknown" | "" => ValueType::Unknown,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub stddev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub label: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueProfile {
    /// Distinct non-null values in first-occurrence order.
    pub unique_values: Vec<String>,
    pub value_counts: BTreeMap<String, u64>,
    pub total_count: u64,
    pub null_count: u64,
    pub inferred_type: ValueType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric_stats: Option<NumericStats>,
    pub histogram: Vec<HistogramBin>,
}

impl ValueProfile {
    pub fn non_null_count(&self) -> u64 {
        self.total_count - self.null_count
    }

    /// Unique values ordered by descending count, then value.
    pub fn values_by_frequency(&self) -> Vec<&str> {
        let mut values: Vec<(&str, u64)> = self
            .value_counts
            .iter()
            .map(|(v, c)| (v.as_str(), *c))
            .collect();
        values.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        values.into_iter().map(|(v, _)| v).collect()
    }

    /// Parsed numeric values with multiplicity, skipping non-numeric entries.
    pub fn numeric_values(&self) -> Vec<(f64, u64)> {
        self.value_counts
            .iter()
            .filter_map(|(v, c)| parse_number(v).map(|x| (x, *c)))
            .collect()
    }
}

pub(crate) fn parse_number(raw: &str) -> Option<f64> {
    raw.trim().parse::<f64>().ok().filter(|x| x.is_finite())
}

fn is_integral(raw: &str) -> bool {
    raw.trim().parse::<i64>().is_ok()
}

const BOOLEAN_TOKENS: [&str; 6] = ["true", "false", "yes", "no", "t", "f"];

/// Summarizes a column. Nulls follow [`is_null`]; values are trimmed.
pub fn profile_attribute<S: AsRef<str>>(values: &[S]) -> ValueProfile {
    let mut unique_values = Vec::new();
    let mut value_counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut null_count = 0u64;

    for raw in values {
        let raw = raw.as_ref();
        if is_null(raw) {
            null_count += 1;
            continue;
        }
        let value = raw.trim();
        match value_counts.get_mut(value) {
            Some(count) => *count += 1,
            None => {
                value_counts.insert(value.to_string(), 1);
                unique_values.push(value.to_string());
            }
        }
    }

    let total_count = values.len() as u64;
    let non_null = total_count - null_count;

    let mut numeric_count = 0u64;
    let mut all_integral = true;
    for (value, count) in &value_counts {
        if parse_number(value).is_some() {
            numeric_count += count;
            all_integral &= is_integral(value);
        }
    }

    let inferred_type = if non_null == 0 {
        ValueType::Unknown
    } else if numeric_count as f64 >= NUMERIC_FRACTION * non_null as f64 {
        if all_integral {
            ValueType::Integer
        } else {
            ValueType::Number
        }
    } else if value_counts
        .keys()
        .all(|v| BOOLEAN_TOKENS.iter().any(|t| v.eq_ignore_ascii_case(t)))
    {
        ValueType::Boolean
    } else if unique_values.len()
        <= ENUM_MIN_CARDINALITY.max((ENUM_FRACTION * total_count as f64).floor() as usize)
    {
        ValueType::Enumeration
    } else {
        ValueType::Text
    };

    let mut profile = ValueProfile {
        unique_values,
        value_counts,
        total_count,
        null_count,
        inferred_type,
        numeric_stats: None,
        histogram: Vec::new(),
    };

    if inferred_type.is_numeric() {
        let numbers = profile.numeric_values();
        profile.numeric_stats = Some(numeric_stats(&numbers));
        profile.histogram = numeric_histogram(&numbers, NUMERIC_BINS);
    } else {
        profile.histogram = profile
            .values_by_frequency()
            .into_iter()
            .take(TOP_VALUE_BINS)
            .map(|v| HistogramBin {
                label: v.to_string(),
                count: profile.value_counts[v],
            })
            .collect();
    }
    profile
}

fn numeric_stats(numbers: &[(f64, u64)]) -> NumericStats {
    let n: u64 = numbers.iter().map(|(_, c)| c).sum();
    let nf = n as f64;
    let mean = numbers.iter().map(|(x, c)| x * *c as f64).sum::<f64>() / nf;
    let var = numbers
        .iter()
        .map(|(x, c)| (x - mean).powi(2) * *c as f64)
        .sum::<f64>()
        / nf;
    NumericStats {
        min: numbers.iter().map(|(x, _)| *x).fold(f64::INFINITY, f64::min),
        max: numbers.iter().map(|(x, _)| *x).fold(f64::NEG_INFINITY, f64::max),
        mean,
        stddev: var.sqrt(),
    }
}

/// Equal-width bins over `[lo, hi]`; the last bin is closed on the right.
pub fn bin_index(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let idx = ((x - lo) / (hi - lo) * bins as f64).floor() as usize;
    idx.min(bins - 1)
}

pub fn bin_labels(lo: f64, hi: f64, bins: usize) -> Vec<String> {
    if hi <= lo {
        return vec![format!("[{lo}, {hi}]")];
    }
    let width = (hi - lo) / bins as f64;
    (0..bins)
        .map(|i| {
            let a = lo + width * i as f64;
            let b = if i + 1 == bins { hi } else { lo + width * (i + 1) as f64 };
            let close = if i + 1 == bins { ']' } else { ')' };
            format!("[{}, {}{close}", round_label(a), round_label(b))
        })
        .collect()
}

fn round_label(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn numeric_histogram(numbers: &[(f64, u64)], bins: usize) -> Vec<HistogramBin> {
    let lo = numbers.iter().map(|(x, _)| *x).fold(f64::INFINITY, f64::min);
    let hi = numbers.iter().map(|(x, _)| *x).fold(f64::NEG_INFINITY, f64::max);
    let labels = bin_labels(lo, hi, bins);
    let mut counts = vec![0u64; labels.len()];
    for (x, c) in numbers {
        counts[bin_index(*x, lo, hi, labels.len())] += c;
    }
    labels
        .into_iter()
        .zip(counts)
        .map(|(label, count)| HistogramBin { label, count })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceAttribute {
    pub name: String,
    pub profile: ValueProfile,
    /// Raw cells in row order, kept so a dataset can be written back out.
    pub values: Vec<String>,
}

impl SourceAttribute {
    pub fn new(name: impl Into<String>, values: Vec<String>) -> Self {
        let profile = profile_attribute(&values);
        Self {
            name: name.into(),
            profile,
            values,
        }
    }

    pub fn normalized_name(&self) -> String {
        normalize_name(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDataset {
    pub name: String,
    pub attributes: Vec<SourceAttribute>,
}

impl SourceDataset {
    pub fn new(name: impl Into<String>, attributes: Vec<SourceAttribute>) -> Result<Self, ModelError> {
        if attributes.is_empty() {
            return Err(ModelError::MalformedTable("no attributes".into()));
        }
        check_unique(attributes.iter().map(|a| a.name.as_str()))?;
        Ok(Self {
            name: name.into(),
            attributes,
        })
    }

    pub fn attribute(&self, name: &str) -> Option<&SourceAttribute> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn row_count(&self) -> usize {
        self.attributes.first().map_or(0, |a| a.values.len())
    }

    /// Writes the dataset as comma-separated text with a header row.
    pub fn to_delimited(&self) -> Vec<u8> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = self.attributes.iter().map(|a| a.name.as_str()).collect();
        writer.write_record(&header).expect("in-memory write");
        for row in 0..self.row_count() {
            writer
                .write_record(self.attributes.iter().map(|a| a.values[row].as_str()))
                .expect("in-memory write");
        }
        writer.into_inner().expect("in-memory flush")
    }
}

fn check_unique<'a>(names: impl Iterator<Item = &'a str>) -> Result<(), ModelError> {
    let mut seen = HashSet::new();
    for name in names {
        let normalized = normalize_name(name);
        if !seen.insert(normalized.clone()) {
            return Err(ModelError::DuplicateAttribute {
                name: name.to_string(),
                normalized,
            });
        }
    }
    Ok(())
}

fn detect_delimiter(first_line: &str) -> u8 {
    let mut best = (b',', first_line.matches(',').count());
    for delim in [b'\t', b';'] {
        let count = first_line.matches(delim as char).count();
        if count > best.1 {
            best = (delim, count);
        }
    }
    best.0
}

/// Parses delimiter-separated text with a header row into a [`SourceDataset`].
///
/// Short rows are padded with nulls; rows longer than the header are rejected.
pub fn ingest_source(bytes: &[u8], name: &str) -> Result<SourceDataset, ModelError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| ModelError::MalformedTable(format!("input is not UTF-8: {e}")))?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let first_line = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| ModelError::MalformedTable("missing header row".into()))?;
    let delimiter = detect_delimiter(first_line);

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| ModelError::MalformedTable(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(ModelError::MalformedTable("missing header row".into()));
    }
    if let Some(idx) = headers.iter().position(|h| h.is_empty()) {
        return Err(ModelError::MalformedTable(format!(
            "empty header name in column {}",
            idx + 1
        )));
    }
    check_unique(headers.iter().map(String::as_str))?;

    let mut columns: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| ModelError::MalformedTable(e.to_string()))?;
        if record.len() > headers.len() {
            return Err(ModelError::MalformedTable(format!(
                "row {} has {} fields but the header has {}",
                line + 2,
                record.len(),
                headers.len()
            )));
        }
        for (idx, column) in columns.iter_mut().enumerate() {
            column.push(record.get(idx).unwrap_or("").to_string());
        }
    }

    let attributes = headers
        .into_iter()
        .zip(columns)
        .map(|(h, values)| SourceAttribute::new(h, values))
        .collect();
    SourceDataset::new(name, attributes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetAttribute {
    pub name: String,
    pub supercategory: String,
    pub category: String,
    #[serde(default)]
    pub description: String,
    pub value_type: ValueType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enum_values: Option<Vec<String>>,
    /// Present when the target was loaded from a table rather than a schema document.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ValueProfile>,
}

impl TargetAttribute {
    /// The target's known values: profiled uniques for tabular targets,
    /// enumeration values for schema targets.
    pub fn values(&self) -> &[String] {
        if let Some(profile) = &self.profile {
            &profile.unique_values
        } else {
            self.enum_values.as_deref().unwrap_or(&[])
        }
    }

    pub fn normalized_name(&self) -> String {
        normalize_name(&self.name)
    }

    /// A profile for distribution comparison. Schema targets get a
    /// uniform profile over their enumeration values.
    pub fn value_profile(&self) -> ValueProfile {
        match &self.profile {
            Some(p) => p.clone(),
            None => profile_attribute(self.enum_values.as_deref().unwrap_or(&[])),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSchema {
    pub name: String,
    pub attributes: Vec<TargetAttribute>,
}

impl TargetSchema {
    pub fn attribute(&self, name: &str) -> Option<&TargetAttribute> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    /// Supercategory → category → attribute count.
    pub fn hierarchy(&self) -> BTreeMap<String, BTreeMap<String, usize>> {
        let mut tree: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for attr in &self.attributes {
            *tree
                .entry(attr.supercategory.clone())
                .or_default()
                .entry(attr.category.clone())
                .or_default() += 1;
        }
        tree
    }

    fn sort(&mut self) {
        self.attributes.sort_by(|a, b| {
            (&a.supercategory, &a.category, &a.name).cmp(&(&b.supercategory, &b.category, &b.name))
        });
    }
}

#[derive(Deserialize)]
struct RawTargetAttribute {
    name: Option<String>,
    supercategory: Option<String>,
    category: Option<String>,
    description: Option<String>,
    value_type: Option<String>,
    enum_values: Option<Vec<serde_json::Value>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawSchema {
    List(Vec<serde_json::Value>),
    Named {
        name: Option<String>,
        attributes: Vec<serde_json::Value>,
    },
}

fn hierarchy_field(raw: Option<String>) -> String {
    match raw.map(|s| s.trim().to_string()) {
        Some(s) if !s.is_empty() => s,
        _ => UNCATEGORIZED.to_string(),
    }
}

/// Parses a JSON target schema: either a top-level list of attribute
/// objects or an object with `name` and `attributes`.
pub fn parse_target_schema(bytes: &[u8]) -> Result<TargetSchema, ModelError> {
    let raw: RawSchema = serde_json::from_slice(bytes).map_err(|e| ModelError::SchemaParseError {
        context: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let (name, items) = match raw {
        RawSchema::List(items) => (None, items),
        RawSchema::Named { name, attributes } => (name, attributes),
    };
    if items.is_empty() {
        return Err(ModelError::EmptySchema);
    }

    let mut attributes = Vec::with_capacity(items.len());
    for (idx, item) in items.into_iter().enumerate() {
        let ctx = |field: &str| format!("attribute {idx} field `{field}`");
        let raw: RawTargetAttribute =
            serde_json::from_value(item).map_err(|e| ModelError::SchemaParseError {
                context: format!("attribute {idx}"),
                message: e.to_string(),
            })?;
        let name = raw
            .name
            .map(|n| n.trim().to_string())
            .filter(|n| !n.is_empty())
            .ok_or_else(|| ModelError::SchemaParseError {
                context: ctx("name"),
                message: "missing or empty name".into(),
            })?;
        let enum_values: Option<Vec<String>> = raw.enum_values.map(|vals| {
            vals.into_iter()
                .map(|v| match v {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                })
                .collect()
        });
        let value_type = match raw.value_type.as_deref() {
            Some(vt) => ValueType::parse(vt).ok_or_else(|| ModelError::SchemaParseError {
                context: ctx("value_type"),
                message: format!("unknown value type `{vt}`"),
            })?,
            None if enum_values.as_ref().is_some_and(|v| !v.is_empty()) => ValueType::Enumeration,
            None => ValueType::Unknown,
        };
        if value_type == ValueType::Enumeration && enum_values.as_ref().is_none_or(|v| v.is_empty()) {
            return Err(ModelError::SchemaParseError {
                context: ctx("enum_values"),
                message: format!("enumeration attribute `{name}` has no enum_values"),
            });
        }
        attributes.push(TargetAttribute {
            name,
            supercategory: hierarchy_field(raw.supercategory),
            category: hierarchy_field(raw.category),
            description: raw.description.unwrap_or_default(),
            value_type,
            enum_values,
            profile: None,
        });
    }

    let mut seen = HashMap::new();
    for (idx, attr) in attributes.iter().enumerate() {
        if let Some(prev) = seen.insert(attr.name.clone(), idx) {
            return Err(ModelError::SchemaParseError {
                context: format!("attribute {idx} field `name`"),
                message: format!("duplicate attribute name `{}` (first at {prev})", attr.name),
            });
        }
    }

    let mut schema = TargetSchema {
        name: name.unwrap_or_else(|| "target".to_string()),
        attributes,
    };
    schema.sort();
    Ok(schema)
}

/// Wraps a tabular dataset as a target with the default hierarchy.
pub fn target_from_dataset(dataset: SourceDataset) -> TargetSchema {
    let mut schema = TargetSchema {
        name: dataset.name,
        attributes: dataset
            .attributes
            .into_iter()
            .map(|a| TargetAttribute {
                name: a.name,
                supercategory: UNCATEGORIZED.to_string(),
                category: UNCATEGORIZED.to_string(),
                description: String::new(),
                value_type: a.profile.inferred_type,
                enum_values: (a.profile.inferred_type == ValueType::Enumeration)
                    .then(|| a.profile.unique_values.clone()),
                profile: Some(a.profile),
            })
            .collect(),
    };
    schema.sort();
    schema
}

/// Loads a target from either a JSON schema document or a delimited table.
pub fn load_target(bytes: &[u8], name: &str) -> Result<TargetSchema, ModelError> {
    let starts_like_json = bytes
        .iter()
        .find(|b| !b.is_ascii_whitespace())
        .is_some_and(|b| *b == b'[' || *b == b'{');
    if starts_like_json {
        let mut schema = parse_target_schema(bytes)?;
        if schema.name == "target" {
            schema.name = name.to_string();
        }
        Ok(schema)
    } else {
        ingest_source(bytes, name).map(target_from_dataset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_names() {
        assert_eq!(normalize_name("FIGO_stage"), "figo_stage");
        assert_eq!(normalize_name("  Age at  Diagnosis (years) "), "age_at_diagnosis_years");
        assert_eq!(normalize_name("__x--y__"), "x_y");
        assert_eq!(normalize_name("!!"), "");
    }

    #[test]
    fn null_tokens() {
        for v in ["", "  ", "NA", "n/a", "Null", "NONE"] {
            assert!(is_null(v), "{v:?}");
        }
        assert!(!is_null("0"));
        assert!(!is_null("nan"));
    }

    #[test]
    fn ingests_two_column_table() {
        let ds = ingest_source(b"age,sex\n30,M\n40,F\n50,F\n", "demo").unwrap();
        assert_eq!(ds.attributes.len(), 2);
        assert!(ds.attributes.iter().all(|a| a.profile.total_count == 3));
        assert_eq!(ds.attributes[0].profile.inferred_type, ValueType::Integer);
    }

    #[test]
    fn empty_input_is_malformed() {
        assert!(matches!(ingest_source(b"", "x"), Err(ModelError::MalformedTable(_))));
        assert!(matches!(ingest_source(b"\n\n", "x"), Err(ModelError::MalformedTable(_))));
    }

    #[test]
    fn duplicate_headers_rejected() {
        assert!(matches!(
            ingest_source(b"id,id\n1,2\n", "x"),
            Err(ModelError::DuplicateAttribute { .. })
        ));
        assert!(matches!(
            ingest_source(b"Tumor Stage,tumor_stage\n1,2\n", "x"),
            Err(ModelError::DuplicateAttribute { .. })
        ));
    }

    #[test]
    fn detects_tab_and_semicolon() {
        let ds = ingest_source(b"a\tb\n1\t2\n", "x").unwrap();
        assert_eq!(ds.attributes.len(), 2);
        let ds = ingest_source(b"a;b;c\n1;2;3\n", "x").unwrap();
        assert_eq!(ds.attributes.len(), 3);
    }

    #[test]
    fn short_rows_padded_long_rows_rejected() {
        let ds = ingest_source(b"a,b\n1\n2,3\n", "x").unwrap();
        assert_eq!(ds.attributes[1].profile.null_count, 1);
        assert!(matches!(
            ingest_source(b"a,b\n1,2,3\n", "x"),
            Err(ModelError::MalformedTable(_))
        ));
    }

    #[test]
    fn profile_of_empty_list() {
        let p = profile_attribute::<&str>(&[]);
        assert_eq!(p.total_count, 0);
        assert_eq!(p.inferred_type, ValueType::Unknown);
        assert!(p.numeric_stats.is_none());
    }

    #[test]
    fn profile_of_enumeration() {
        let p = profile_attribute(&["IA", "IB", "IA"]);
        assert_eq!(p.unique_values, vec!["IA", "IB"]);
        assert_eq!(p.value_counts["IA"], 2);
        assert_eq!(p.value_counts["IB"], 1);
        assert_eq!(p.inferred_type, ValueType::Enumeration);
        assert_eq!(p.histogram[0], HistogramBin { label: "IA".into(), count: 2 });
    }

    #[test]
    fn profile_of_numbers_with_null() {
        let p = profile_attribute(&["1.5", "2.5", "3.5", ""]);
        assert_eq!(p.inferred_type, ValueType::Number);
        assert_eq!(p.null_count, 1);
        // Re-aggregate independently of the profiler.
        let raw = [1.5f64, 2.5, 3.5];
        let mut sum = 0.0;
        for x in raw {
            sum += x;
        }
        let stats = p.numeric_stats.unwrap();
        assert_eq!(stats.mean, sum / raw.len() as f64);
        assert_eq!(stats.mean, 2.5);
        assert_eq!(stats.min, 1.5);
        assert_eq!(stats.max, 3.5);
        assert_eq!(p.histogram.len(), NUMERIC_BINS);
        assert_eq!(p.histogram.iter().map(|b| b.count).sum::<u64>(), 3);
    }

    #[test]
    fn numeric_threshold_is_ninety_percent() {
        let mut vals: Vec<String> = (0..9).map(|i| i.to_string()).collect();
        vals.push("x".into());
        assert_eq!(profile_attribute(&vals).inferred_type, ValueType::Integer);
        vals.push("y".into());
        assert_ne!(profile_attribute(&vals).inferred_type, ValueType::Integer);
    }

    #[test]
    fn text_when_cardinality_high() {
        let vals: Vec<String> = (0..50).map(|i| format!("patient note {i}")).collect();
        assert_eq!(profile_attribute(&vals).inferred_type, ValueType::Text);
    }

    #[test]
    fn boolean_inferred() {
        assert_eq!(profile_attribute(&["yes", "No", "YES"]).inferred_type, ValueType::Boolean);
    }

    #[test]
    fn schema_with_single_category() {
        let json = br#"[
            {"name":"figo_stage","supercategory":"clinical","category":"diagnosis","value_type":"enumeration","enum_values":["Stage IA","Stage IB"]},
            {"name":"age_at_diagnosis","supercategory":"clinical","category":"diagnosis","value_type":"integer"}
        ]"#;
        let schema = parse_target_schema(json).unwrap();
        let tree = schema.hierarchy();
        assert_eq!(tree.len(), 1);
        assert_eq!(tree["clinical"].len(), 1);
        assert_eq!(schema.attributes[0].name, "age_at_diagnosis");
    }

    #[test]
    fn enumeration_without_values_rejected() {
        let json = br#"[{"name":"x","value_type":"enumeration"}]"#;
        let err = parse_target_schema(json).unwrap_err();
        assert!(matches!(err, ModelError::SchemaParseError { ref context, .. } if context.contains("enum_values")));
    }

    #[test]
    fn schema_errors() {
        assert_eq!(parse_target_schema(b"[]").unwrap_err(), ModelError::EmptySchema);
        assert!(matches!(
            parse_target_schema(b"[{\"name\": }]"),
            Err(ModelError::SchemaParseError { .. })
        ));
        assert!(matches!(
            parse_target_schema(br#"[{"name":"a"},{"name":"a"}]"#),
            Err(ModelError::SchemaParseError { .. })
        ));
        assert!(matches!(
            parse_target_schema(br#"[{"name":"a","value_type":"blob"}]"#),
            Err(ModelError::SchemaParseError { .. })
        ));
    }

    #[test]
    fn missing_hierarchy_defaults() {
        let schema = parse_target_schema(br#"[{"name":"a"}]"#).unwrap();
        assert_eq!(schema.attributes[0].supercategory, UNCATEGORIZED);
        assert_eq!(schema.attributes[0].category, UNCATEGORIZED);
        assert_eq!(schema.attributes[0].value_type, ValueType::Unknown);
    }

    #[test]
    fn tabular_target_wrapped() {
        let t = load_target(b"stage,age\nIA,30\nIB,40\n", "other").unwrap();
        assert_eq!(t.attributes.len(), 2);
        assert!(t.attributes.iter().all(|a| a.supercategory == UNCATEGORIZED));
        let stage = t.attribute("stage").unwrap();
        assert_eq!(stage.values(), &["IA".to_string(), "IB".to_string()]);
    }

    #[test]
    fn dataset_round_trips_through_delimited_text() {
        let ds = ingest_source(b"a,b c,d\n1,\"x, y\",\n2,z,NA\n", "rt").unwrap();
        let again = ingest_source(&ds.to_delimited(), "rt").unwrap();
        assert_eq!(ds, again);
    }
}
