//! Schema-driven tabular ingestion, feature encoding, splits, and synthetic
//! data generators.
//!
//! A [`DatasetSchema`] names the target column and its positive value, the
//! sensitive columns with their discretizers, and the feature columns. The
//! loader parses a CSV against the schema and produces a [`TabularDataset`]:
//! standardized numerics, one-hot categoricals, binary labels, and one
//! sensitive key per row (the joined tuple of discretized sensitive values).
//!
//! Encoding statistics live in a [`FeatureManifest`]. Fitting happens on the
//! rows being loaded unless a stored manifest is supplied, which is how
//! training-time statistics are applied to held-out files. Datasets keep
//! their raw cells, so writing one back to CSV and reloading it under the
//! same schema reproduces the encoded features bit-exactly.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{LabelVector, LossVector, SensitiveKeyVector};
use crate::numeric::{derive_seed, CompensatedSum};

const SPLIT_SEED_TAG: u64 = 0x73_70_6c_69_74; // "split"
const SYNTH_SEED_TAG: u64 = 0x73_79_6e_74_68; // "synth"
const ATOM_SEED_TAG: u64 = 0x61_74_6f_6d; // "atom"

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t == "?"
}

/// How a sensitive column collapses to a discrete token.
#[derive(Debug, Clone, PartialEq)]
pub enum Discretizer {
    /// Numeric cut: value < cut maps to "low", value >= cut to "high".
    ThresholdLowHigh(f64),
    /// Ascending edges; a value maps to "b{i}" where i counts edges <= value.
    Bins(Vec<f64>),
    /// The trimmed cell itself is the token.
    Passthrough,
}

impl Discretizer {
    /// Number of distinct tokens the discretizer can emit, when the schema
    /// alone determines it.
    pub fn cardinality(&self) -> Option<usize> {
        match self {
            Discretizer::ThresholdLowHigh(_) => Some(2),
            Discretizer::Bins(edges) => Some(edges.len() + 1),
            Discretizer::Passthrough => None,
        }
    }

    fn token(&self, cell: &str) -> String {
        if is_missing(cell) {
            return "unknown".to_string();
        }
        match self {
            Discretizer::Passthrough => cell.trim().to_string(),
            Discretizer::ThresholdLowHigh(cut) => match cell.trim().parse::<f64>() {
                Ok(v) if v < *cut => "low".to_string(),
                Ok(_) => "high".to_string(),
                Err(_) => "unknown".to_string(),
            },
            Discretizer::Bins(edges) => match cell.trim().parse::<f64>() {
                Ok(v) => {
                    let idx = edges.iter().filter(|e| v >= **e).count();
                    format!("b{idx}")
                }
                Err(_) => "unknown".to_string(),
            },
        }
    }
}

/// Target column and the cell value counted as class 1; every other parsed
/// value is class 0, and missing targets drop the row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub column: String,
    pub positive: String,
}

/// One sensitive column: exactly one of `threshold` / `bins`, or neither for
/// passthrough.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitiveColumn {
    pub column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<Vec<f64>>,
}

impl SensitiveColumn {
    pub fn discretizer(&self) -> Result<Discretizer> {
        match (&self.threshold, &self.bins) {
            (Some(_), Some(_)) => Err(Error::Schema(format!(
                "sensitive column {:?} sets both threshold and bins",
                self.column
            ))),
            (Some(cut), None) => {
                if !cut.is_finite() {
                    return Err(Error::Schema(format!(
                        "sensitive column {:?} has a non-finite threshold",
                        self.column
                    )));
                }
                Ok(Discretizer::ThresholdLowHigh(*cut))
            }
            (None, Some(edges)) => {
                if edges.is_empty()
                    || edges.iter().any(|e| !e.is_finite())
                    || edges.windows(2).any(|w| w[0] >= w[1])
                {
                    return Err(Error::Schema(format!(
                        "sensitive column {:?} needs finite strictly ascending bin edges",
                        self.column
                    )));
                }
                Ok(Discretizer::Bins(edges.clone()))
            }
            (None, None) => Ok(Discretizer::Passthrough),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub column: String,
    pub kind: FeatureKind,
}

/// Declarative description of how a CSV becomes a dataset. Serialized as a
/// TOML document with `[target]`, `[[sensitive]]`, and `[[feature]]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub schema_version: u32,
    pub name: String,
    pub target: TargetSpec,
    #[serde(default, rename = "sensitive", skip_serializing_if = "Vec::is_empty")]
    pub sensitive: Vec<SensitiveColumn>,
    #[serde(rename = "feature")]
    pub features: Vec<FeatureColumn>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub drop: Vec<String>,
}

impl DatasetSchema {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let schema: DatasetSchema =
            toml::from_str(text).map_err(|e| Error::TomlParse(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != 1 {
            return Err(Error::Schema(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        if self.features.is_empty() {
            return Err(Error::Schema("schema declares no feature columns".into()));
        }
        let mut seen = BTreeSet::new();
        for f in &self.features {
            if f.column == self.target.column {
                return Err(Error::Schema(format!(
                    "target column {:?} cannot also be a feature",
                    f.column
                )));
            }
            if !seen.insert(f.column.as_str()) {
                return Err(Error::Schema(format!(
                    "feature column {:?} listed twice",
                    f.column
                )));
            }
        }
        for s in &self.sensitive {
            s.discretizer()?;
            if s.column == self.target.column {
                return Err(Error::Schema(format!(
                    "target column {:?} cannot also be sensitive",
                    s.column
                )));
            }
        }
        for d in &self.drop {
            if *d == self.target.column
                || self.features.iter().any(|f| f.column == *d)
                || self.sensitive.iter().any(|s| s.column == *d)
            {
                return Err(Error::Schema(format!(
                    "drop column {d:?} conflicts with a used column"
                )));
            }
        }
        Ok(())
    }

    /// Product of per-column discretizer cardinalities, when every sensitive
    /// column determines its own. Observed T never exceeds this.
    pub fn sensitive_cardinality_bound(&self) -> Option<usize> {
        if self.sensitive.is_empty() {
            return Some(0);
        }
        let mut product = 1usize;
        for s in &self.sensitive {
            let d = s.discretizer().ok()?;
            product *= d.cardinality()?;
        }
        Some(product)
    }
}

/// A ready-made schema bundled with the crate.
pub fn builtin_schema(name: &str) -> Result<DatasetSchema> {
    let text = match name {
        "candc" => include_str!("../schemas/candc.schema.toml"),
        "income" => include_str!("../schemas/income.schema.toml"),
        "german" => include_str!("../schemas/german.schema.toml"),
        "compas5" => include_str!("../schemas/compas5.schema.toml"),
        "two_group" => include_str!("../schemas/two_group.schema.toml"),
        other => {
            return Err(Error::Schema(format!(
                "no builtin schema named {other:?}; bundled: candc, income, german, compas5, two_group"
            )))
        }
    };
    DatasetSchema::from_toml_str(text)
}

/// Encoding statistics for one feature column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncodedColumn {
    /// Standardized numeric: (value - mean) / std, missing imputed to the
    /// mean. `std` is the population standard deviation of the fitted rows,
    /// replaced by 1 for constant columns.
    Numeric { name: String, mean: f64, std: f64 },
    /// One-hot over the sorted fitted levels; unseen levels encode to all
    /// zeros.
    Categorical { name: String, levels: Vec<String> },
}

/// Per-column encoding statistics in schema feature order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub columns: Vec<EncodedColumn>,
}

impl FeatureManifest {
    /// Total encoded width.
    pub fn width(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match c {
                EncodedColumn::Numeric { .. } => 1,
                EncodedColumn::Categorical { levels, .. } => levels.len(),
            })
            .sum()
    }

    /// One name per encoded slot: the column name for numerics,
    /// "column=level" for one-hot slots.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.width());
        for c in &self.columns {
            match c {
                EncodedColumn::Numeric { name, .. } => names.push(name.clone()),
                EncodedColumn::Categorical { name, levels } => {
                    for level in levels {
                        names.push(format!("{name}={level}"));
                    }
                }
            }
        }
        names
    }
}

/// Raw cells as read (header plus rows that survived target parsing).
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Encoded dataset: features, labels, sensitive keys, the manifest that
/// produced the features, and the raw cells for lossless export.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    raw: RawTable,
    features: Vec<Vec<f64>>,
    labels: LabelVector,
    sensitive_keys: Option<SensitiveKeyVector>,
    manifest: FeatureManifest,
}

impl TabularDataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        false // loaders reject datasets with zero usable rows
    }

    pub fn feature_count(&self) -> usize {
        self.manifest.width()
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i]
    }

    pub fn labels(&self) -> &LabelVector {
        &self.labels
    }

    pub fn sensitive_keys(&self) -> Option<&SensitiveKeyVector> {
        self.sensitive_keys.as_ref()
    }

    pub fn manifest(&self) -> &FeatureManifest {
        &self.manifest
    }

    /// Verbatim cells of one raw column, in row order. Lets callers audit
    /// columns the schema does not encode (for example externally computed
    /// per-row losses).
    pub fn raw_column(&self, name: &str) -> Result<Vec<String>> {
        let idx = column_index(&self.raw.header, name)?;
        Ok(self.raw.rows.iter().map(|r| r[idx].clone()).collect())
    }

    /// Rows selected by index, sharing the parent's manifest.
    pub fn subset(&self, indices: &[usize]) -> Result<TabularDataset> {
        if indices.is_empty() {
            return Err(Error::EmptyInput("dataset subset"));
        }
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!(
                    "subset index {i} out of range for {} rows",
                    self.len()
                )));
            }
        }
        let features = indices.iter().map(|&i| self.features[i].clone()).collect();
        let labels =
            LabelVector::new(indices.iter().map(|&i| self.labels.as_slice()[i]).collect())?;
        let sensitive_keys = match &self.sensitive_keys {
            None => None,
            Some(k) => Some(SensitiveKeyVector::new(
                indices.iter().map(|&i| k.keys()[i].clone()).collect(),
            )?),
        };
        let rows = indices.iter().map(|&i| self.raw.rows[i].clone()).collect();
        Ok(TabularDataset {
            raw: RawTable {
                header: self.raw.header.clone(),
                rows,
            },
            features,
            labels,
            sensitive_keys,
            manifest: self.manifest.clone(),
        })
    }
}

/// Row accounting from a load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadSummary {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub rows_dropped_bad_target: usize,
    /// Columns in the file other than the target.
    pub raw_attribute_count: usize,
    /// Distinct sensitive keys (T); 0 when the schema has no sensitive
    /// columns.
    pub sensitive_cardinality: usize,
    pub missing_cells_imputed: usize,
}

/// Load a CSV under the schema, fitting encoding statistics on its rows.
pub fn load_csv(
    path: impl AsRef<Path>,
    schema: &DatasetSchema,
) -> Result<(TabularDataset, LoadSummary)> {
    let table = read_table(path)?;
    encode_table(table, schema, None)
}

/// Load a CSV under the schema, applying previously fitted statistics
/// (training-time means, stds, and category levels).
pub fn load_csv_with_manifest(
    path: impl AsRef<Path>,
    schema: &DatasetSchema,
    manifest: &FeatureManifest,
) -> Result<(TabularDataset, LoadSummary)> {
    let table = read_table(path)?;
    encode_table(table, schema, Some(manifest))
}

/// Write the dataset's raw cells back to CSV (header then rows, UTF-8,
/// newline-terminated). Reloading under the same schema reproduces the
/// encoded features bit-exactly.
pub fn write_csv(dataset: &TabularDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(&dataset.raw.header)?;
    for row in &dataset.raw.rows {
        writer.write_record(row)?;
    }
    writer.flush()?;
    Ok(())
}

fn read_table(path: impl AsRef<Path>) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        rows.push(record.iter().map(|c| c.to_string()).collect());
    }
    Ok(RawTable { header, rows })
}

fn column_index(header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

fn encode_table(
    table: RawTable,
    schema: &DatasetSchema,
    manifest: Option<&FeatureManifest>,
) -> Result<(TabularDataset, LoadSummary)> {
    schema.validate()?;
    let header = &table.header;
    let target_idx = column_index(header, &schema.target.column)?;
    let sensitive_idx: Vec<(usize, Discretizer)> = schema
        .sensitive
        .iter()
        .map(|s| Ok((column_index(header, &s.column)?, s.discretizer()?)))
        .collect::<Result<_>>()?;
    let feature_idx: Vec<(usize, &FeatureColumn)> = schema
        .features
        .iter()
        .map(|f| Ok((column_index(header, &f.column)?, f)))
        .collect::<Result<_>>()?;
    for d in &schema.drop {
        // Dropped columns must exist so a schema typo is caught, even though
        // they are simply never encoded.
        column_index(header, d)?;
    }

    let rows_read = table.rows.len();
    let mut kept_rows = Vec::new();
    let mut labels = Vec::new();
    let mut dropped = 0usize;
    for row in table.rows {
        if row.len() != header.len() {
            return Err(Error::Schema(format!(
                "row has {} cells, header has {}",
                row.len(),
                header.len()
            )));
        }
        let cell = &row[target_idx];
        if is_missing(cell) {
            dropped += 1;
            continue;
        }
        labels.push(u8::from(cell.trim() == schema.target.positive));
        kept_rows.push(row);
    }
    if kept_rows.is_empty() {
        return Err(Error::EmptyInput("no rows with a usable target"));
    }

    let fitted;
    let manifest = match manifest {
        Some(m) => {
            if m.columns.len() != schema.features.len() {
                return Err(Error::Schema(format!(
                    "manifest has {} columns, schema declares {} features",
                    m.columns.len(),
                    schema.features.len()
                )));
            }
            m
        }
        None => {
            fitted = fit_manifest(&kept_rows, &feature_idx)?;
            &fitted
        }
    };

    let mut missing = 0usize;
    let mut features = Vec::with_capacity(kept_rows.len());
    for row in &kept_rows {
        let mut encoded = Vec::with_capacity(manifest.width());
        for ((idx, _), column) in feature_idx.iter().zip(&manifest.columns) {
            let cell = row[*idx].as_str();
            match column {
                EncodedColumn::Numeric { mean, std, .. } => {
                    let value = if is_missing(cell) {
                        missing += 1;
                        *mean
                    } else {
                        match cell.trim().parse::<f64>() {
                            Ok(v) if v.is_finite() => v,
                            _ => {
                                missing += 1;
                                *mean
                            }
                        }
                    };
                    encoded.push((value - mean) / std);
                }
                EncodedColumn::Categorical { levels, .. } => {
                    let token = if is_missing(cell) {
                        missing += 1;
                        "unknown".to_string()
                    } else {
                        cell.trim().to_string()
                    };
                    let hit = levels.binary_search(&token).ok();
                    for i in 0..levels.len() {
                        encoded.push(if hit == Some(i) { 1.0 } else { 0.0 });
                    }
                }
            }
        }
        debug_assert_eq!(encoded.len(), manifest.width());
        features.push(encoded);
    }

    let sensitive_keys = if sensitive_idx.is_empty() {
        None
    } else {
        let keys: Vec<String> = kept_rows
            .iter()
            .map(|row| {
                sensitive_idx
                    .iter()
                    .map(|(idx, d)| d.token(&row[*idx]))
                    .collect::<Vec<_>>()
                    .join("|")
            })
            .collect();
        Some(SensitiveKeyVector::new(keys)?)
    };

    let summary = LoadSummary {
        rows_read,
        rows_kept: kept_rows.len(),
        rows_dropped_bad_target: dropped,
        raw_attribute_count: header.len() - 1,
        sensitive_cardinality: sensitive_keys
            .as_ref()
            .map_or(0, |k| k.distinct_count()),
        missing_cells_imputed: missing,
    };
    let dataset = TabularDataset {
        raw: RawTable {
            header: header.clone(),
            rows: kept_rows,
        },
        features,
        labels: LabelVector::new(labels)?,
        sensitive_keys,
        manifest: manifest.clone(),
    };
    Ok((dataset, summary))
}

fn fit_manifest(
    rows: &[Vec<String>],
    feature_idx: &[(usize, &FeatureColumn)],
) -> Result<FeatureManifest> {
    let mut columns = Vec::with_capacity(feature_idx.len());
    for (idx, spec) in feature_idx {
        match spec.kind {
            FeatureKind::Numeric => {
                let mut values = Vec::new();
                for row in rows {
                    let cell = row[*idx].as_str();
                    if is_missing(cell) {
                        continue;
                    }
                    if let Ok(v) = cell.trim().parse::<f64>() {
                        if v.is_finite() {
                            values.push(v);
                        }
                    }
                }
                let (mean, std) = if values.is_empty() {
                    (0.0, 1.0)
                } else {
                    let mean = crate::numeric::weighted_mean(&values, None);
                    let mut acc = CompensatedSum::new();
                    for v in &values {
                        let d = v - mean;
                        acc.add(d * d);
                    }
                    let var = acc.total() / values.len() as f64;
                    let std = var.sqrt();
                    (mean, if std < 1e-12 { 1.0 } else { std })
                };
                columns.push(EncodedColumn::Numeric {
                    name: spec.column.clone(),
                    mean,
                    std,
                });
            }
            FeatureKind::Categorical => {
                let mut levels: BTreeSet<String> = BTreeSet::new();
                for row in rows {
                    let cell = row[*idx].as_str();
                    if is_missing(cell) {
                        levels.insert("unknown".to_string());
                    } else {
                        levels.insert(cell.trim().to_string());
                    }
                }
                columns.push(EncodedColumn::Categorical {
                    name: spec.column.clone(),
                    levels: levels.into_iter().collect(),
                });
            }
        }
    }
    Ok(FeatureManifest { columns })
}

/// Seeded shuffle split. The test half gets round(n * test_fraction) rows,
/// clamped so both halves are nonempty; both halves share the parent's
/// manifest.
pub fn split_train_test(
    dataset: &TabularDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(TabularDataset, TabularDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = dataset.len();
    if n < 2 {
        return Err(Error::invalid("splitting needs at least 2 rows"));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SPLIT_SEED_TAG));
    // Fisher-Yates, explicit so the byte layout of splits never depends on
    // library shuffle internals.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let test_idx = &order[..n_test];
    let train_idx = &order[n_test..];
    let mut train_sorted = train_idx.to_vec();
    let mut test_sorted = test_idx.to_vec();
    // Keep original row order inside each half: downstream batch stratification
    // reshuffles anyway and sorted indices make splits reproducible to read.
    train_sorted.sort_unstable();
    test_sorted.sort_unstable();
    Ok((dataset.subset(&train_sorted)?, dataset.subset(&test_sorted)?))
}

/// Run `metric` over `splits` derived train/test splits and average the
/// results. Split i uses a seed derived from (seed, i).
pub fn mean_over_splits(
    dataset: &TabularDataset,
    test_fraction: f64,
    splits: usize,
    seed: u64,
    metric: impl Fn(&TabularDataset, &TabularDataset) -> Result<f64>,
) -> Result<f64> {
    if splits == 0 {
        return Err(Error::invalid("need at least one split"));
    }
    let mut acc = CompensatedSum::new();
    for i in 0..splits {
        let (train, test) = split_train_test(dataset, test_fraction, derive_seed(seed, i as u64))?;
        let value = metric(&train, &test)?;
        if !value.is_finite() {
            return Err(Error::NonFinite("split metric"));
        }
        acc.add(value);
    }
    Ok(acc.total() / splits as f64)
}

/// Schema for [`synth_two_group`] datasets: two numeric features, the group
/// column both categorical feature and passthrough sensitive attribute.
pub fn two_group_schema() -> DatasetSchema {
    builtin_schema("two_group").expect("bundled schema parses")
}

/// Two-group synthetic classification task.
///
/// Each sample draws a group (minority with probability `minority_fraction`)
/// and a latent balanced label; features are two unit-variance Gaussians
/// centered at +1/-1 by the latent label. The observed label flips with
/// probability 0.1 for the majority and 0.1 + `noise_gap` for the minority,
/// so a positive gap makes minority labels strictly noisier and minority
/// losses higher for any calibrated model.
pub fn synth_two_group(
    n: usize,
    minority_fraction: f64,
    noise_gap: f64,
    seed: u64,
) -> Result<TabularDataset> {
    if n < 10 {
        return Err(Error::invalid("two-group synthesis needs n >= 10"));
    }
    if !(minority_fraction > 0.0 && minority_fraction <= 0.5) {
        return Err(Error::invalid(format!(
            "minority fraction must lie in (0, 0.5], got {minority_fraction}"
        )));
    }
    if !(0.0..=0.4).contains(&noise_gap) || !noise_gap.is_finite() {
        return Err(Error::invalid(format!(
            "noise gap must lie in [0, 0.4] so flip rates stay below 1/2, got {noise_gap}"
        )));
    }
    const BASE_FLIP: f64 = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SYNTH_SEED_TAG));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let minority = rng.gen::<f64>() < minority_fraction;
        let latent = rng.gen::<f64>() < 0.5;
        let center = if latent { 1.0 } else { -1.0 };
        let x1: f64 = center + normal.sample(&mut rng);
        let x2: f64 = center + normal.sample(&mut rng);
        let flip_prob = if minority {
            BASE_FLIP + noise_gap
        } else {
            BASE_FLIP
        };
        let flipped = rng.gen::<f64>() < flip_prob;
        let label = latent ^ flipped;
        rows.push(vec![
            format!("{x1}"),
            format!("{x2}"),
            if minority { "min" } else { "maj" }.to_string(),
            if label { "1" } else { "0" }.to_string(),
        ]);
    }
    let table = RawTable {
        header: vec![
            "x1".to_string(),
            "x2".to_string(),
            "group".to_string(),
            "label".to_string(),
        ],
        rows,
    };
    let (dataset, _) = encode_table(table, &two_group_schema(), None)?;
    Ok(dataset)
}

/// i.i.d. draws from a discrete loss distribution given as (value, mass)
/// atoms. Values must lie in [0, 1]; masses are normalized after a 1e-9
/// sum-to-one check. Returns a uniform loss vector with bound 1.
pub fn synth_discrete_loss_population(
    atoms: &[(f64, f64)],
    n: usize,
    seed: u64,
) -> Result<LossVector> {
    let (values, masses) = validate_atoms(atoms)?;
    if n == 0 {
        return Err(Error::EmptyInput("sample size"));
    }
    let mut cumulative = Vec::with_capacity(masses.len());
    let mut acc = 0.0;
    for m in &masses {
        acc += m;
        cumulative.push(acc);
    }
    *cumulative.last_mut().expect("nonempty") = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, ATOM_SEED_TAG));
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen();
        let idx = cumulative.partition_point(|c| *c <= u).min(values.len() - 1);
        samples.push(values[idx]);
    }
    LossVector::uniform(samples, 1.0)
}

/// The same atoms as an exact weighted population, suitable for the
/// exhaustive oracle.
pub fn population_of_atoms(atoms: &[(f64, f64)]) -> Result<LossVector> {
    let (values, masses) = validate_atoms(atoms)?;
    LossVector::weighted(values, masses, 1.0)
}

fn validate_atoms(atoms: &[(f64, f64)]) -> Result<(Vec<f64>, Vec<f64>)> {
    if atoms.is_empty() {
        return Err(Error::EmptyInput("atom list"));
    }
    for (v, m) in atoms {
        if !v.is_finite() || *v < 0.0 || *v > 1.0 {
            return Err(Error::invalid(format!("atom value {v} outside [0, 1]")));
        }
        if !m.is_finite() || *m < 0.0 {
            return Err(Error::invalid(format!("atom mass {m} negative")));
        }
    }
    let total: f64 = crate::numeric::compensated_sum(atoms.iter().map(|(_, m)| *m));
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "atom masses must sum to 1 within 1e-9, got {total}"
        )));
    }
    let values: Vec<f64> = atoms.iter().map(|(v, _)| *v).collect();
    let masses: Vec<f64> = atoms.iter().map(|(_, m)| m / total).collect();
    Ok((values, masses))
}
