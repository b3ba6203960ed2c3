//! Dataset ingestion and partitioning across simulated devices.
//!
//! The pipeline is: load a CSV (one-hot encoding categorical columns),
//! normalize every feature vector into the unit ball, append the bias
//! feature, partition rows across devices (iid or by a categorical
//! attribute), and split each device 80/10/10 into train/val/test. All
//! steps are deterministic given the seed.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, LABEL_PARTITION, LABEL_SPLIT};

/// Fraction of each device's samples used for validation and for test.
const VAL_FRACTION_DENOM: usize = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("csv parse error at row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One labeled sample. Labels use the sign convention `{-1, +1}`; kernels
/// that want `{0, 1}` convert at their own boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: i8,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: i8) -> Self {
        assert!(label == 1 || label == -1, "label must be -1 or +1");
        Self { features, label }
    }

    /// Label in the `{0, 1}` convention.
    pub fn label01(&self) -> f64 {
        if self.label > 0 {
            1.0
        } else {
            0.0
        }
    }
}

/// Which columns mean what in an input CSV.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Column holding the binary label.
    pub label_column: String,
    /// Columns to one-hot encode. Every other non-label column must parse
    /// as a real number.
    pub categorical_columns: Vec<String>,
    /// If set, only these columns become features (the rest are still
    /// parsed, and categorical ones remain available for partitioning).
    pub feature_columns: Option<Vec<String>>,
    /// Columns excluded from the feature vector, e.g. a partition key.
    pub drop_columns: Vec<String>,
}

/// An encoded table: every row is a feature vector plus a `{-1, +1}` label.
/// Original categorical values are retained per row so the partitioner can
/// group by attribute even when that attribute is not a feature.
#[derive(Clone, Debug)]
pub struct RawTable {
    pub feature_names: Vec<String>,
    pub samples: Vec<Sample>,
    pub cat_names: Vec<String>,
    /// `cat_values[row][i]` is the original value of `cat_names[i]`.
    pub cat_values: Vec<Vec<String>>,
    /// Rows dropped because a field was missing (empty).
    pub dropped_rows: usize,
    /// Distinct label values, sorted; `label_levels[0]` maps to -1.
    pub label_levels: [String; 2],
}

impl RawTable {
    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }
}

/// How rows are assigned to devices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionMode {
    /// Seeded shuffle, then round-robin deal (device sizes differ by <= 1).
    IidEven,
    /// All rows sharing a value of this categorical column go to one
    /// device, devices ordered by sorted attribute value.
    ByAttribute(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FederationSpec {
    /// Number of devices M.
    pub devices: usize,
    pub mode: PartitionMode,
    pub seed: u64,
}

/// One device's data. `train`/`val`/`test` are disjoint; `batch_size` is
/// the mini-batch size X_m with `1 <= X_m <= train.len()`.
#[derive(Clone, Debug)]
pub struct DeviceDataset {
    pub device_id: usize,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub batch_size: usize,
}

impl DeviceDataset {
    pub fn total_samples(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }
}

/// A complete simulated federation, devices sorted by id, all feature
/// vectors of equal dimension.
#[derive(Clone, Debug)]
pub struct Federation {
    pub devices: Vec<DeviceDataset>,
    pub dim: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeviceManifest {
    pub device_id: usize,
    pub samples: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub batch_size: usize,
}

/// Audit record of how a table was partitioned.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub devices: Vec<DeviceManifest>,
    pub total_samples: usize,
    pub dropped_rows: usize,
}

/// Load and encode a CSV file. See [`load_csv_from_reader`].
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<RawTable, DataError> {
    let file = std::fs::File::open(path)?;
    load_csv_from_reader(file, schema)
}

/// Load and encode CSV text.
///
/// Rows with a missing (empty) field are dropped and counted. A literal
/// `?` is kept as an ordinary categorical level, matching how the public
/// census-income files use it. The label column must have exactly two
/// distinct values; the lexicographically smaller one maps to -1.
pub fn load_csv_from_reader<R: Read>(reader: R, schema: &CsvSchema) -> Result<RawTable, DataError> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers: Vec<String> = csv_reader
        .headers()
        .map_err(|e| DataError::Parse { row: 1, message: e.to_string() })?
        .iter()
        .map(str::to_owned)
        .collect();
    if headers.is_empty() {
        return Err(DataError::Parse { row: 1, message: "empty file or missing header row".into() });
    }

    let label_idx = find_column(&headers, &schema.label_column)?;
    let cat_indices: Vec<usize> = schema
        .categorical_columns
        .iter()
        .map(|name| find_column(&headers, name))
        .collect::<Result<_, _>>()?;
    if let Some(wanted) = &schema.feature_columns {
        for name in wanted {
            find_column(&headers, name)?;
        }
    }

    // First pass: read rows, drop incomplete ones, collect level sets.
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut dropped_rows = 0usize;
    for (i, record) in csv_reader.records().enumerate() {
        let row_number = i + 2; // 1-based, after the header row
        let record = record.map_err(|e| DataError::Parse { row: row_number, message: e.to_string() })?;
        if record.len() != headers.len() {
            return Err(DataError::Parse {
                row: row_number,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let fields: Vec<String> = record.iter().map(str::to_owned).collect();
        if fields.iter().any(|f| f.is_empty()) {
            dropped_rows += 1;
            continue;
        }
        rows.push(fields);
    }

    let mut label_levels: Vec<String> = rows.iter().map(|r| r[label_idx].clone()).collect();
    label_levels.sort();
    label_levels.dedup();
    if label_levels.len() != 2 {
        return Err(DataError::Config(format!(
            "label column '{}' has {} distinct values, expected exactly 2",
            schema.label_column,
            label_levels.len()
        )));
    }

    let mut cat_levels: Vec<Vec<String>> = Vec::with_capacity(cat_indices.len());
    for &idx in &cat_indices {
        let mut levels: Vec<String> = rows.iter().map(|r| r[idx].clone()).collect();
        levels.sort();
        levels.dedup();
        cat_levels.push(levels);
    }

    // Which header columns contribute features, in header order.
    let is_feature = |name: &str| -> bool {
        if name == schema.label_column {
            return false;
        }
        if schema.drop_columns.iter().any(|d| d == name) {
            return false;
        }
        match &schema.feature_columns {
            Some(wanted) => wanted.iter().any(|w| w == name),
            None => true,
        }
    };

    let mut feature_names = Vec::new();
    for (col, name) in headers.iter().enumerate() {
        if !is_feature(name) {
            continue;
        }
        match cat_indices.iter().position(|&c| c == col) {
            Some(cat_pos) => {
                for level in &cat_levels[cat_pos] {
                    feature_names.push(format!("{name}={level}"));
                }
            }
            None => feature_names.push(name.clone()),
        }
    }

    // Second pass: encode.
    let mut samples = Vec::with_capacity(rows.len());
    let mut cat_values = Vec::with_capacity(rows.len());
    for (i, fields) in rows.iter().enumerate() {
        let row_number = i + 2;
        let mut features = Vec::with_capacity(feature_names.len());
        for (col, name) in headers.iter().enumerate() {
            if !is_feature(name) {
                continue;
            }
            match cat_indices.iter().position(|&c| c == col) {
                Some(cat_pos) => {
                    for level in &cat_levels[cat_pos] {
                        features.push(if &fields[col] == level { 1.0 } else { 0.0 });
                    }
                }
                None => {
                    let value: f64 = fields[col].parse().map_err(|_| DataError::Parse {
                        row: row_number,
                        message: format!("column '{name}' value '{}' is not numeric", fields[col]),
                    })?;
                    features.push(value);
                }
            }
        }
        let label = if fields[label_idx] == label_levels[1] { 1 } else { -1 };
        samples.push(Sample::new(features, label));
        cat_values.push(cat_indices.iter().map(|&c| fields[c].clone()).collect());
    }

    Ok(RawTable {
        feature_names,
        samples,
        cat_names: schema.categorical_columns.clone(),
        cat_values,
        dropped_rows,
        label_levels: [label_levels[0].clone(), label_levels[1].clone()],
    })
}

fn find_column(headers: &[String], name: &str) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| DataError::Config(format!("column '{name}' not found in CSV header")))
}

/// Scale a vector down onto the unit sphere if its L2 norm exceeds 1.
pub fn normalize_vector(features: &mut [f64]) {
    let norm = features.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1.0 {
        for x in features.iter_mut() {
            *x /= norm;
        }
    }
}

/// Bring every row of the table into the unit ball. Rows already inside
/// are untouched, so the operation is idempotent.
pub fn normalize_unit_ball(table: &mut RawTable) {
    for sample in &mut table.samples {
        normalize_vector(&mut sample.features);
    }
}

/// Append the intercept feature: `x -> (x/sqrt(2), 1/sqrt(2))`, which keeps
/// augmented rows inside the unit ball.
pub fn append_bias(table: &mut RawTable) {
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    for sample in &mut table.samples {
        for x in sample.features.iter_mut() {
            *x *= inv_sqrt2;
        }
        sample.features.push(inv_sqrt2);
    }
    table.feature_names.push("__bias".into());
}

/// Assign table rows to devices. The returned datasets hold everything in
/// `train`; see [`split_train_val_test`].
pub fn partition(table: &RawTable, spec: &FederationSpec) -> Result<Vec<DeviceDataset>, DataError> {
    if spec.devices == 0 {
        return Err(DataError::Config("device count must be at least 1".into()));
    }
    let groups: Vec<Vec<usize>> = match &spec.mode {
        PartitionMode::IidEven => {
            if spec.devices > table.samples.len() {
                return Err(DataError::Config(format!(
                    "cannot split {} rows across {} devices",
                    table.samples.len(),
                    spec.devices
                )));
            }
            let mut order: Vec<usize> = (0..table.samples.len()).collect();
            order.shuffle(&mut stream(spec.seed, &[LABEL_PARTITION]));
            let mut groups = vec![Vec::new(); spec.devices];
            for (i, row) in order.into_iter().enumerate() {
                groups[i % spec.devices].push(row);
            }
            groups
        }
        PartitionMode::ByAttribute(attr) => {
            let cat_pos = table
                .cat_names
                .iter()
                .position(|c| c == attr)
                .ok_or_else(|| {
                    DataError::Config(format!("partition attribute '{attr}' is not a declared categorical column"))
                })?;
            let mut by_value: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (row, values) in table.cat_values.iter().enumerate() {
                by_value.entry(values[cat_pos].as_str()).or_default().push(row);
            }
            if by_value.len() != spec.devices {
                return Err(DataError::Config(format!(
                    "attribute '{attr}' has {} distinct values but the federation has {} devices",
                    by_value.len(),
                    spec.devices
                )));
            }
            by_value.into_values().collect()
        }
    };

    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(device_id, rows)| {
            let train: Vec<Sample> = rows.iter().map(|&r| table.samples[r].clone()).collect();
            let batch_size = train.len().max(1);
            DeviceDataset { device_id, train, val: Vec::new(), test: Vec::new(), batch_size }
        })
        .collect())
}

/// Redistribute a device's samples into 80/10/10 train/val/test. Validation
/// and test sizes are floored; the remainder stays in train. Deterministic
/// given `seed` and the device id.
pub fn split_train_val_test(device: DeviceDataset, seed: u64) -> Result<DeviceDataset, DataError> {
    let mut all = device.train;
    all.extend(device.val);
    all.extend(device.test);
    let n = all.len();
    if n == 0 {
        return Err(DataError::Config(format!("device {} has no samples to split", device.device_id)));
    }
    all.shuffle(&mut stream(seed, &[LABEL_SPLIT, device.device_id as u64]));

    let n_val = n / VAL_FRACTION_DENOM;
    let n_test = n / VAL_FRACTION_DENOM;
    let n_train = n - n_val - n_test;

    let mut iter = all.into_iter();
    let train: Vec<Sample> = iter.by_ref().take(n_train).collect();
    let val: Vec<Sample> = iter.by_ref().take(n_val).collect();
    let test: Vec<Sample> = iter.collect();

    let batch_size = device.batch_size.min(train.len()).max(1);
    Ok(DeviceDataset { device_id: device.device_id, train, val, test, batch_size })
}

impl Federation {
    /// Partition, split, and fix mini-batch sizes in one pass.
    pub fn build(table: &RawTable, spec: &FederationSpec, batch_size: usize) -> Result<Self, DataError> {
        let devices = partition(table, spec)?
            .into_iter()
            .map(|mut dev| {
                dev.batch_size = batch_size.max(1);
                split_train_val_test(dev, spec.seed)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(devices)
    }

    /// Wrap pre-built devices, checking dimensions and sorting by id.
    pub fn new(mut devices: Vec<DeviceDataset>) -> Result<Self, DataError> {
        if devices.is_empty() {
            return Err(DataError::Config("federation needs at least one device".into()));
        }
        devices.sort_by_key(|d| d.device_id);
        let dim = devices[0]
            .train
            .first()
            .or_else(|| devices[0].val.first())
            .or_else(|| devices[0].test.first())
            .map(|s| s.features.len())
            .ok_or_else(|| DataError::Config("device 0 has no samples".into()))?;
        for dev in &devices {
            if dev.train.is_empty() {
                return Err(DataError::Config(format!("device {} has an empty train split", dev.device_id)));
            }
            for sample in dev.train.iter().chain(&dev.val).chain(&dev.test) {
                if sample.features.len() != dim {
                    return Err(DataError::Config(format!(
                        "device {} has a sample of dimension {}, expected {}",
                        dev.device_id,
                        sample.features.len(),
                        dim
                    )));
                }
            }
            if dev.batch_size < 1 || dev.batch_size > dev.train.len() {
                return Err(DataError::Config(format!(
                    "device {} batch size {} outside [1, {}]",
                    dev.device_id,
                    dev.batch_size,
                    dev.train.len()
                )));
            }
        }
        Ok(Self { devices, dim })
    }

    pub fn device_count(&self) -> usize {
        self.devices.len()
    }

    pub fn batch_sizes(&self) -> Vec<usize> {
        self.devices.iter().map(|d| d.batch_size).collect()
    }

    pub fn manifest(&self) -> PartitionManifest {
        let devices: Vec<DeviceManifest> = self
            .devices
            .iter()
            .map(|d| DeviceManifest {
                device_id: d.device_id,
                samples: d.total_samples(),
                train: d.train.len(),
                val: d.val.len(),
                test: d.test.len(),
                batch_size: d.batch_size,
            })
            .collect();
        let total_samples = devices.iter().map(|d| d.samples).sum();
        PartitionManifest { devices, total_samples, dropped_rows: 0 }
    }
}
