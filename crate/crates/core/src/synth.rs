//! Deterministic synthetic corpora shaped like the two evaluation
//! datasets: a census-income table (14 mixed columns, ~24% positive rate,
//! 16 education levels with realistic marginals) and a distributed-sensor
//! table (23 sensors, 100 numeric features, balanced binary label).
//!
//! Labels are drawn from a ground-truth logistic model over the generated
//! attributes, so linear classifiers can learn well above the majority
//! rate, and the education column correlates with the label, which makes
//! the by-attribute partition genuinely non-iid.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::datasets::CsvSchema;
use crate::rng::stream;

/// Default row count of the census-income table.
pub const ADULT_ROWS: usize = 32_561;
/// Default row count of the sensor table (23 sensors x 1,899 rows).
pub const VEHICLE_ROWS: usize = 43_677;
/// Education levels one partition maps onto 16 devices.
pub const ADULT_EDUCATION_LEVELS: usize = 16;
/// Sensor count of the sensor table.
pub const VEHICLE_SENSORS: usize = 23;

/// Latent-score temperature; larger means noisier labels.
const LABEL_TEMPERATURE: f64 = 0.55;
/// Target positive-label rate of the census-income table.
const ADULT_POSITIVE_RATE: f64 = 0.2408;

// (level, education-num, share of rows) with shares from the public
// census-income table.
const EDUCATION: [(&str, u32, f64); ADULT_EDUCATION_LEVELS] = [
    ("Preschool", 1, 51.0),
    ("1st-4th", 2, 168.0),
    ("5th-6th", 3, 333.0),
    ("7th-8th", 4, 646.0),
    ("9th", 5, 514.0),
    ("10th", 6, 933.0),
    ("11th", 7, 1175.0),
    ("12th", 8, 433.0),
    ("HS-grad", 9, 10501.0),
    ("Some-college", 10, 7291.0),
    ("Assoc-voc", 11, 1382.0),
    ("Assoc-acdm", 12, 1067.0),
    ("Bachelors", 13, 5355.0),
    ("Masters", 14, 1723.0),
    ("Prof-school", 15, 576.0),
    ("Doctorate", 16, 413.0),
];

const WORKCLASS: [(&str, f64); 8] = [
    ("?", 0.056),
    ("Federal-gov", 0.029),
    ("Local-gov", 0.064),
    ("Never-worked", 0.001),
    ("Private", 0.697),
    ("Self-emp-inc", 0.034),
    ("Self-emp-not-inc", 0.078),
    ("State-gov", 0.041),
];

// (level, share, latent-score weight)
const MARITAL: [(&str, f64, f64); 7] = [
    ("Divorced", 0.136, -0.6),
    ("Married-AF-spouse", 0.001, 1.2),
    ("Married-civ-spouse", 0.460, 1.6),
    ("Married-spouse-absent", 0.012, -0.6),
    ("Never-married", 0.330, -0.7),
    ("Separated", 0.031, -0.6),
    ("Widowed", 0.030, -0.5),
];

const OCCUPATION: [(&str, f64, f64); 15] = [
    ("?", 0.057, -0.5),
    ("Adm-clerical", 0.116, -0.1),
    ("Armed-Forces", 0.001, 0.0),
    ("Craft-repair", 0.126, 0.1),
    ("Exec-managerial", 0.125, 1.1),
    ("Farming-fishing", 0.031, -0.6),
    ("Handlers-cleaners", 0.042, -0.8),
    ("Machine-op-inspct", 0.061, -0.4),
    ("Other-service", 0.101, -1.0),
    ("Priv-house-serv", 0.005, -1.5),
    ("Prof-specialty", 0.127, 0.9),
    ("Protective-serv", 0.020, 0.3),
    ("Sales", 0.112, 0.4),
    ("Tech-support", 0.028, 0.5),
    ("Transport-moving", 0.048, -0.1),
];

const RELATIONSHIP: [(&str, f64); 6] = [
    ("Husband", 0.405),
    ("Not-in-family", 0.255),
    ("Other-relative", 0.031),
    ("Own-child", 0.155),
    ("Unmarried", 0.106),
    ("Wife", 0.048),
];

const RACE: [(&str, f64); 5] = [
    ("Amer-Indian-Eskimo", 0.010),
    ("Asian-Pac-Islander", 0.031),
    ("Black", 0.096),
    ("Other", 0.009),
    ("White", 0.854),
];

const COUNTRY: [(&str, f64); 10] = [
    ("?", 0.018),
    ("Canada", 0.004),
    ("Cuba", 0.003),
    ("El-Salvador", 0.003),
    ("Germany", 0.004),
    ("India", 0.003),
    ("Mexico", 0.020),
    ("Philippines", 0.006),
    ("Puerto-Rico", 0.004),
    ("United-States", 0.935),
];

/// Schema for the census-income table: all eight categorical columns plus
/// the six numeric ones feed the features.
pub fn adult_schema() -> CsvSchema {
    CsvSchema {
        label_column: "income".into(),
        categorical_columns: [
            "workclass",
            "education",
            "marital-status",
            "occupation",
            "relationship",
            "race",
            "sex",
            "native-country",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
        feature_columns: None,
        drop_columns: Vec::new(),
    }
}

/// Same schema restricted to the categorical features, the configuration
/// used for the logistic-regression task.
pub fn adult_categorical_schema() -> CsvSchema {
    let mut schema = adult_schema();
    schema.feature_columns = Some(schema.categorical_columns.clone());
    schema
}

/// Schema for the sensor table. The sensor id stays out of the features
/// but remains available as the partition attribute.
pub fn vehicle_schema() -> CsvSchema {
    CsvSchema {
        label_column: "class".into(),
        categorical_columns: vec!["sensor_id".into()],
        feature_columns: None,
        drop_columns: vec!["sensor_id".into()],
    }
}

/// Generate the census-income-like table as CSV text.
pub fn adult_like_csv(rows: usize, seed: u64) -> String {
    assert!(rows >= ADULT_EDUCATION_LEVELS, "need at least one row per education level");
    let mut rng = stream(seed, &[0xAD01]);

    // Exact education allocation so every level (and so every device of the
    // by-attribute partition) is present.
    let weights: Vec<f64> = EDUCATION.iter().map(|e| e.2).collect();
    let counts = allocate(rows, &weights);
    let mut education_of_row: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(idx, &n)| std::iter::repeat(idx).take(n))
        .collect();
    education_of_row.shuffle(&mut rng);

    struct Row {
        age: u32,
        workclass: usize,
        fnlwgt: u64,
        education: usize,
        marital: usize,
        occupation: usize,
        relationship: usize,
        race: usize,
        sex_male: bool,
        capital_gain: u64,
        capital_loss: u64,
        hours: u32,
        country: usize,
        score: f64,
    }

    let mut drawn: Vec<Row> = Vec::with_capacity(rows);
    for &education in &education_of_row {
        let age = (38.0 + 13.0 * normal(&mut rng)).clamp(17.0, 90.0).round() as u32;
        let workclass = weighted(&mut rng, &WORKCLASS.map(|w| w.1));
        let fnlwgt = (11.0 + 0.7 * normal(&mut rng)).exp().round().clamp(1.0, 2e6) as u64;
        let marital = weighted(&mut rng, &MARITAL.map(|w| w.1));
        let occupation = weighted(&mut rng, &OCCUPATION.map(|w| w.1));
        let relationship = weighted(&mut rng, &RELATIONSHIP.map(|w| w.1));
        let race = weighted(&mut rng, &RACE.map(|w| w.1));
        let sex_male = rng.gen::<f64>() < 0.67;
        let capital_gain = if rng.gen::<f64>() < 0.08 {
            (7.5 + 1.2 * normal(&mut rng)).exp().round().clamp(1.0, 99_999.0) as u64
        } else {
            0
        };
        let capital_loss = if rng.gen::<f64>() < 0.05 {
            (1800.0 + 400.0 * normal(&mut rng)).round().clamp(100.0, 4_356.0) as u64
        } else {
            0
        };
        let hours = (40.0 + 12.0 * normal(&mut rng)).clamp(1.0, 99.0).round() as u32;
        let country = weighted(&mut rng, &COUNTRY.map(|w| w.1));

        let score = 0.6 * (EDUCATION[education].1 as f64 - 9.0)
            + MARITAL[marital].2
            + OCCUPATION[occupation].2
            + if sex_male { 0.3 } else { -0.3 }
            + 0.03 * (age as f64 - 38.0).clamp(-20.0, 20.0)
            + 0.03 * (hours as f64 - 40.0);

        drawn.push(Row {
            age,
            workclass,
            fnlwgt,
            education,
            marital,
            occupation,
            relationship,
            race,
            sex_male,
            capital_gain,
            capital_loss,
            hours,
            country,
            score,
        });
    }

    // Pick the intercept so the mean positive probability hits the target
    // rate, then draw labels.
    let scores: Vec<f64> = drawn.iter().map(|r| r.score).collect();
    let intercept = calibrate_intercept(&scores, ADULT_POSITIVE_RATE);

    let mut out = String::with_capacity(rows * 96);
    out.push_str(
        "age,workclass,fnlwgt,education,education-num,marital-status,occupation,relationship,race,sex,capital-gain,capital-loss,hours-per-week,native-country,income\n",
    );
    for row in &drawn {
        let p = sigmoid((row.score - intercept) / LABEL_TEMPERATURE);
        let positive = rng.gen::<f64>() < p;
        let (edu_name, edu_num, _) = EDUCATION[row.education];
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.age,
            WORKCLASS[row.workclass].0,
            row.fnlwgt,
            edu_name,
            edu_num,
            MARITAL[row.marital].0,
            OCCUPATION[row.occupation].0,
            RELATIONSHIP[row.relationship].0,
            RACE[row.race].0,
            if row.sex_male { "Male" } else { "Female" },
            row.capital_gain,
            row.capital_loss,
            row.hours,
            COUNTRY[row.country].0,
            if positive { ">50K" } else { "<=50K" },
        ));
    }
    out
}

/// Generate the sensor-network-like table as CSV text: 100 numeric
/// features per row, a balanced binary class separated along a hidden
/// direction, and a small per-sensor mean shift.
pub fn vehicle_like_csv(rows: usize, seed: u64) -> String {
    assert!(rows >= VEHICLE_SENSORS, "need at least one row per sensor");
    let mut rng = stream(seed, &[0x7E41]);
    let dims = 100usize;
    let separation = 1.2;

    let mut direction: Vec<f64> = (0..dims).map(|_| normal(&mut rng)).collect();
    let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut direction {
        *x /= norm;
    }
    let sensor_shift: Vec<Vec<f64>> =
        (0..VEHICLE_SENSORS).map(|_| (0..dims).map(|_| 0.3 * normal(&mut rng)).collect()).collect();

    let counts = allocate(rows, &vec![1.0; VEHICLE_SENSORS]);
    let mut sensor_of_row: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(idx, &n)| std::iter::repeat(idx).take(n))
        .collect();
    sensor_of_row.shuffle(&mut rng);

    let mut out = String::with_capacity(rows * dims * 10);
    out.push_str("sensor_id");
    for i in 0..dims {
        out.push_str(&format!(",feat_{i:03}"));
    }
    out.push_str(",class\n");

    for &sensor in &sensor_of_row {
        let positive = rng.gen::<bool>();
        let sign = if positive { 1.0 } else { -1.0 };
        out.push_str(&format!("s{sensor:02}"));
        for i in 0..dims {
            let value = sign * separation * direction[i] + sensor_shift[sensor][i] + normal(&mut rng);
            out.push_str(&format!(",{value:.5}"));
        }
        out.push_str(if positive { ",AAV\n" } else { ",DW\n" });
    }
    out
}

/// Largest-remainder allocation of `total` items proportional to `weights`.
fn allocate(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in 0..total - assigned {
        counts[order[i % order.len()]] += 1;
    }
    counts
}

fn weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Bisection on the intercept so that `mean(sigmoid((s - b)/T))` matches
/// the target rate.
fn calibrate_intercept(scores: &[f64], target: f64) -> f64 {
    let mut lo = -50.0;
    let mut hi = 50.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let rate: f64 =
            scores.iter().map(|&s| sigmoid((s - mid) / LABEL_TEMPERATURE)).sum::<f64>() / scores.len() as f64;
        if rate > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{load_csv_from_reader, partition, FederationSpec, PartitionMode};

    #[test]
    fn adult_like_is_deterministic() {
        let a = adult_like_csv(500, 7);
        let b = adult_like_csv(500, 7);
        assert_eq!(a, b);
        assert_ne!(a, adult_like_csv(500, 8));
    }

    #[test]
    fn adult_like_parses_with_full_row_count() {
        let text = adult_like_csv(2000, 3);
        let table = load_csv_from_reader(text.as_bytes(), &adult_schema()).unwrap();
        assert_eq!(table.samples.len(), 2000);
        assert_eq!(table.dropped_rows, 0);
        assert_eq!(table.label_levels, ["<=50K".to_string(), ">50K".to_string()]);
    }

    #[test]
    fn adult_positive_rate_near_target() {
        let text = adult_like_csv(20_000, 1);
        let table = load_csv_from_reader(text.as_bytes(), &adult_schema()).unwrap();
        let positive = table.samples.iter().filter(|s| s.label == 1).count() as f64;
        let rate = positive / table.samples.len() as f64;
        assert!((rate - ADULT_POSITIVE_RATE).abs() < 0.02, "positive rate {rate}");
    }

    #[test]
    fn adult_education_supports_sixteen_device_partition() {
        let text = adult_like_csv(ADULT_ROWS, 5);
        let table = load_csv_from_reader(text.as_bytes(), &adult_schema()).unwrap();
        let spec = FederationSpec {
            devices: ADULT_EDUCATION_LEVELS,
            mode: PartitionMode::ByAttribute("education".into()),
            seed: 0,
        };
        let devices = partition(&table, &spec).unwrap();
        assert_eq!(devices.len(), 16);
        let total: usize = devices.iter().map(|d| d.train.len()).sum();
        assert_eq!(total, ADULT_ROWS);
        let mean = total / devices.len();
        assert_eq!(mean, 2035);
    }

    #[test]
    fn vehicle_like_parses_and_partitions_by_sensor() {
        let rows = VEHICLE_SENSORS * 40;
        let text = vehicle_like_csv(rows, 11);
        let table = load_csv_from_reader(text.as_bytes(), &vehicle_schema()).unwrap();
        assert_eq!(table.samples.len(), rows);
        assert_eq!(table.dim(), 100);
        let spec = FederationSpec {
            devices: VEHICLE_SENSORS,
            mode: PartitionMode::ByAttribute("sensor_id".into()),
            seed: 0,
        };
        let devices = partition(&table, &spec).unwrap();
        assert_eq!(devices.len(), VEHICLE_SENSORS);
        assert_eq!(devices.iter().map(|d| d.train.len()).sum::<usize>() / devices.len(), 40);
    }

    #[test]
    fn default_vehicle_rows_mean_per_sensor() {
        assert_eq!(VEHICLE_ROWS / VEHICLE_SENSORS, 1899);
        assert_eq!(ADULT_ROWS / ADULT_EDUCATION_LEVELS, 2035);
    }
}
