//! Synthetic air-quality streams plus CSV ingestion.
//!
//! The generator is statistics-driven: each feature follows a diurnal
//! sinusoid around its published mean with Gaussian noise and a slow random
//! walk, clamped to its published range. Contextual anomalies are injected
//! on top as ramped offsets of several standard deviations, so an event is
//! wrong for its context while every value stays individually plausible.

use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Error;
use crate::seeds;
use crate::series::{Instance, MultivariateSeries, FEATURE_COUNT, FEATURE_NAMES};

/// First timestamp of every generated series: 2025-01-01T00:00:00Z.
pub const START_TIMESTAMP: i64 = 1_735_689_600;

/// Seconds between consecutive instances.
pub const DEFAULT_INTERVAL_S: i64 = 150;

/// Offset magnitude for injected anomalies, in feature standard deviations.
pub const ANOMALY_STD_MULTIPLE: f64 = 4.0;

const TAG_BASELINE: u64 = 0x1;
const TAG_EVENT: u64 = 0x2;

/// Published per-feature summary statistics, in raw units and in
/// [`FEATURE_NAMES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub min: [f64; FEATURE_COUNT],
    pub max: [f64; FEATURE_COUNT],
    pub avg: [f64; FEATURE_COUNT],
    pub std: [f64; FEATURE_COUNT],
}

impl FeatureStats {
    pub fn validate(&self) -> Result<(), Error> {
        for m in 0..FEATURE_COUNT {
            if !(self.min[m] <= self.avg[m] && self.avg[m] <= self.max[m]) {
                return Err(Error::InvalidConfig(format!(
                    "{}: average {} outside [{}, {}]",
                    FEATURE_NAMES[m], self.avg[m], self.min[m], self.max[m]
                )));
            }
            // Negated form also rejects a NaN spread.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(self.std[m] >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{}: negative spread {}",
                    FEATURE_NAMES[m], self.std[m]
                )));
            }
        }
        Ok(())
    }
}

/// Two-day home air-quality summary (one cooking anomaly in the original).
pub const STATS_2D1A: FeatureStats = FeatureStats {
    min: [18.79, 44.62, 968.0, 635.0, 46.0, 0.0, 1.0, 1.0, 37.0],
    max: [27.89, 95.76, 981.0, 2518.0, 721.0, 74.0, 659.0, 852.0, 94.0],
    avg: [22.0, 58.53, 974.5, 1757.5, 188.30, 21.39, 97.95, 101.19, 50.80],
    std: [1.97, 9.51, 4.32, 434.54, 121.65, 25.01, 100.81, 106.32, 12.13],
};

/// Ten-day summary (heating malfunction plus cooking in the original).
pub const STATS_10D2A: FeatureStats = FeatureStats {
    min: [8.99, 23.22, 983.0, 400.0, 0.0, 0.0, 0.0, 0.0, 37.0],
    max: [33.11, 95.79, 1010.0, 2402.0, 4851.0, 44.0, 697.0, 1000.0, 84.0],
    avg: [21.75, 51.36, 993.48, 1439.9, 133.17, 11.68, 83.06, 97.48, 50.76],
    std: [2.83, 9.50, 6.2, 357.61, 290.83, 13.24, 116.71, 159.71, 11.93],
};

/// Five-month summary; the big unlabeled stream used for tuning.
pub const STATS_5M: FeatureStats = FeatureStats {
    min: [0.0, 0.0, 946.8, 0.0, 46.0, 0.0, 0.0, 0.0, 0.0],
    max: [58.2, 122.08, 2008.0, 2679.0, 4851.0, 76.0, 706.0, 1000.0, 133.0],
    avg: [24.49, 42.86, 991.61, 1010.92, 198.46, 17.05, 42.89, 48.25, 53.18],
    std: [2.86, 9.01, 11.28, 417.37, 207.81, 15.77, 84.08, 106.88, 11.34],
};

/// Which features an event pushes and how far, in standard deviations.
/// A zero entry leaves the feature untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyProfile {
    pub name: &'static str,
    pub deltas: [f64; FEATURE_COUNT],
    pub duration: usize,
}

/// Unintended cooking: carbon dioxide drops while temperature, humidity,
/// organics, and particulates rise. Light and sound stay untouched.
pub fn cooking(duration: usize) -> AnomalyProfile {
    let k = ANOMALY_STD_MULTIPLE;
    AnomalyProfile {
        name: "cooking",
        deltas: [k, k, 0.0, -k, k, 0.0, k, k, 0.0],
        duration,
    }
}

/// Heating malfunction with open windows: carbon dioxide rises while
/// temperature, humidity, pressure, organics, and particulates fall.
pub fn heating(duration: usize) -> AnomalyProfile {
    let k = ANOMALY_STD_MULTIPLE;
    AnomalyProfile {
        name: "heating",
        deltas: [-k, -k, -k, k, -k, 0.0, -k, -k, 0.0],
        duration,
    }
}

/// Labeled event ranges, inclusive on both ends, sorted, non-overlapping.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelSet {
    events: Vec<(usize, usize)>,
}

impl LabelSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(mut events: Vec<(usize, usize)>) -> Result<Self, Error> {
        events.sort_unstable();
        for &(start, end) in &events {
            if end < start {
                return Err(Error::InvalidConfig(format!(
                    "event range [{start}, {end}] runs backwards"
                )));
            }
        }
        for pair in events.windows(2) {
            if pair[1].0 <= pair[0].1 {
                return Err(Error::EventOverlap { start: pair[1].0, end: pair[1].1 });
            }
        }
        Ok(Self { events })
    }

    pub fn events(&self) -> &[(usize, usize)] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.events.iter().any(|&(s, e)| s <= index && index <= e)
    }

    pub fn check_bounds(&self, series_len: usize) -> Result<(), Error> {
        for &(start, end) in &self.events {
            if end >= series_len {
                return Err(Error::OutOfBounds(format!(
                    "event [{start}, {end}] outside series of length {series_len}"
                )));
            }
        }
        Ok(())
    }
}

/// Draws a clean stream: per feature, mean + a 24 h sinusoid at half a
/// standard deviation + a decaying random walk + Gaussian noise, clamped to
/// the published range. Same stats, length, interval, and seed give a
/// bit-identical series.
pub fn generate_baseline(
    stats: &FeatureStats,
    n_rows: usize,
    sampling_interval_s: i64,
    seed: u64,
) -> Result<MultivariateSeries, Error> {
    stats.validate()?;
    if n_rows == 0 {
        return Err(Error::InvalidConfig("cannot generate an empty series".into()));
    }
    if sampling_interval_s <= 0 {
        return Err(Error::InvalidConfig(format!(
            "sampling interval must be positive, got {sampling_interval_s}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = Normal::new(0.0, 1.0).expect("unit normal");

    // One draw order forever: phases first, then per row, per feature, one
    // walk step and one noise sample.
    let mut phase = [0.0; FEATURE_COUNT];
    for p in phase.iter_mut() {
        use rand::RngExt;
        *p = rng.random::<f64>() * std::f64::consts::TAU;
    }
    let mut walk = [0.0; FEATURE_COUNT];
    let mut instances = Vec::with_capacity(n_rows);
    for t in 0..n_rows {
        let seconds = t as f64 * sampling_interval_s as f64;
        let mut values = [0.0; FEATURE_COUNT];
        for m in 0..FEATURE_COUNT {
            let sd = stats.std[m];
            walk[m] = walk[m] * 0.999 + uniform.sample(&mut rng) * 0.02 * sd;
            let diurnal =
                0.5 * sd * (std::f64::consts::TAU * seconds / 86_400.0 + phase[m]).sin();
            let noise = uniform.sample(&mut rng) * 0.5 * sd;
            values[m] =
                (stats.avg[m] + diurnal + walk[m] + noise).clamp(stats.min[m], stats.max[m]);
        }
        instances.push(Instance::new(
            START_TIMESTAMP + t as i64 * sampling_interval_s,
            values,
        )?);
    }
    MultivariateSeries::new(instances)
}

/// Overlays one event on a copy of the series. Affected features ramp to
/// their offsets over the first three instances, hold with noise, and ramp
/// back over the last three; every instance outside the labeled range is
/// carried over bit-for-bit. Values clamp to the published range.
pub fn inject_anomaly(
    series: &MultivariateSeries,
    labels: &LabelSet,
    stats: &FeatureStats,
    profile: &AnomalyProfile,
    start_index: usize,
    seed: u64,
) -> Result<(MultivariateSeries, LabelSet), Error> {
    stats.validate()?;
    let d = profile.duration;
    if d == 0 {
        return Err(Error::InvalidConfig(format!(
            "{} event with zero duration labels nothing",
            profile.name
        )));
    }
    if start_index + d > series.len() {
        return Err(Error::OutOfBounds(format!(
            "event [{start_index}, {}] outside series of length {}",
            start_index + d - 1,
            series.len()
        )));
    }
    let end = start_index + d - 1;

    let mut events = labels.events().to_vec();
    events.push((start_index, end));
    let labels = LabelSet::new(events)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = Normal::new(0.0, 1.0).expect("unit normal");
    let mut instances = series.instances().to_vec();
    for j in 0..d {
        // Rise over three instances, hold, fall over three.
        let ramp = (1.0f64).min((j as f64 + 1.0) / 3.0).min((d - j) as f64 / 3.0);
        let inst = &mut instances[start_index + j];
        for m in 0..FEATURE_COUNT {
            if profile.deltas[m] == 0.0 {
                continue;
            }
            let offset = profile.deltas[m] * stats.std[m]
                + uniform.sample(&mut rng) * 0.3 * stats.std[m];
            inst.values[m] =
                (inst.values[m] + ramp * offset).clamp(stats.min[m], stats.max[m]);
        }
    }
    Ok((MultivariateSeries::new(instances)?, labels))
}

/// Named benchmark layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// 1151 rows over two days, one cooking event of 28.
    TwoDay,
    /// 6336 rows over ten days, one heating and one cooking event of 24,
    /// more than two simulated days apart.
    TenDay,
    /// 91738 unlabeled rows for tuning.
    FiveMonth,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 3] =
        [DatasetKind::TwoDay, DatasetKind::TenDay, DatasetKind::FiveMonth];

    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetKind::TwoDay => "2d1a",
            DatasetKind::TenDay => "10d2a",
            DatasetKind::FiveMonth => "5m",
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "2d1a" => Ok(DatasetKind::TwoDay),
            "10d2a" => Ok(DatasetKind::TenDay),
            "5m" => Ok(DatasetKind::FiveMonth),
            other => Err(Error::InvalidConfig(format!("unknown dataset kind '{other}'"))),
        }
    }
}

/// Generates a full labeled benchmark for the given kind.
pub fn make_benchmark(kind: DatasetKind, seed: u64) -> Result<(MultivariateSeries, LabelSet), Error> {
    let base_seed = seeds::derive(seed, &[TAG_BASELINE]);
    match kind {
        DatasetKind::TwoDay => {
            let base = generate_baseline(&STATS_2D1A, 1151, DEFAULT_INTERVAL_S, base_seed)?;
            inject_anomaly(
                &base,
                &LabelSet::empty(),
                &STATS_2D1A,
                &cooking(28),
                600,
                seeds::derive(seed, &[TAG_EVENT, 0]),
            )
        }
        DatasetKind::TenDay => {
            let base = generate_baseline(&STATS_10D2A, 6336, DEFAULT_INTERVAL_S, base_seed)?;
            let (with_heat, labels) = inject_anomaly(
                &base,
                &LabelSet::empty(),
                &STATS_10D2A,
                &heating(24),
                1500,
                seeds::derive(seed, &[TAG_EVENT, 0]),
            )?;
            inject_anomaly(
                &with_heat,
                &labels,
                &STATS_10D2A,
                &cooking(24),
                3000,
                seeds::derive(seed, &[TAG_EVENT, 1]),
            )
        }
        DatasetKind::FiveMonth => {
            let series = generate_baseline(&STATS_5M, 91_738, DEFAULT_INTERVAL_S, base_seed)?;
            Ok((series, LabelSet::empty()))
        }
    }
}

fn rfc3339(timestamp: i64) -> String {
    chrono::DateTime::from_timestamp(timestamp, 0)
        .map(|dt| dt.to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
        .unwrap_or_else(|| timestamp.to_string())
}

/// Writes the series schema: a `timestamp` column in RFC 3339 UTC followed
/// by the nine features. Floats print in shortest round-trip form, so a
/// write/read cycle reproduces the series exactly.
pub fn write_csv(path: &Path, series: &MultivariateSeries) -> Result<(), Error> {
    let mut out = Vec::new();
    write!(out, "timestamp").unwrap();
    for name in FEATURE_NAMES {
        write!(out, ",{name}").unwrap();
    }
    writeln!(out).unwrap();
    for inst in series.instances() {
        write!(out, "{}", rfc3339(inst.timestamp)).unwrap();
        for v in inst.values {
            write!(out, ",{v}").unwrap();
        }
        writeln!(out).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads the series schema back; see [`write_csv`].
pub fn read_csv(path: &Path) -> Result<MultivariateSeries, Error> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    {
        let header = reader.headers()?;
        let expected: Vec<&str> =
            std::iter::once("timestamp").chain(FEATURE_NAMES).collect();
        for (pos, want) in expected.iter().enumerate() {
            let found = header.get(pos).unwrap_or("");
            if found != *want {
                return Err(Error::SchemaMismatch {
                    position: pos,
                    expected: want.to_string(),
                    found: found.to_string(),
                });
            }
        }
        if header.len() != expected.len() {
            return Err(Error::SchemaMismatch {
                position: expected.len(),
                expected: "end of header".into(),
                found: header.get(expected.len()).unwrap_or("").to_string(),
            });
        }
    }
    let mut instances = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        if record.len() != FEATURE_COUNT + 1 {
            return Err(Error::MalformedRow {
                row,
                reason: format!("expected {} fields, got {}", FEATURE_COUNT + 1, record.len()),
            });
        }
        let timestamp = chrono::DateTime::parse_from_rfc3339(&record[0])
            .map_err(|e| Error::MalformedRow { row, reason: format!("bad timestamp: {e}") })?
            .timestamp();
        let mut values = [0.0; FEATURE_COUNT];
        for m in 0..FEATURE_COUNT {
            let field = &record[m + 1];
            values[m] = field.parse::<f64>().map_err(|_| Error::MalformedRow {
                row,
                reason: format!("{} value '{}' is not a number", FEATURE_NAMES[m], field),
            })?;
            if !values[m].is_finite() {
                return Err(Error::MalformedRow {
                    row,
                    reason: format!("{} value '{}' is not finite", FEATURE_NAMES[m], field),
                });
            }
        }
        instances.push(Instance { timestamp, values });
    }
    // The series constructor re-checks monotonicity and reports row numbers.
    MultivariateSeries::new(instances)
}

/// Writes `start,end` per event, inclusive indices.
pub fn write_labels(path: &Path, labels: &LabelSet) -> Result<(), Error> {
    let mut out = String::from("start,end\n");
    for &(start, end) in labels.events() {
        out.push_str(&format!("{start},{end}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<LabelSet, Error> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    {
        let header = reader.headers()?;
        if header.len() != 2 || &header[0] != "start" || &header[1] != "end" {
            return Err(Error::SchemaMismatch {
                position: 0,
                expected: "start,end".into(),
                found: header.iter().collect::<Vec<_>>().join(","),
            });
        }
    }
    let mut events = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let parse = |field: &str| {
            field.parse::<usize>().map_err(|_| Error::MalformedRow {
                row,
                reason: format!("'{field}' is not an index"),
            })
        };
        events.push((parse(&record[0])?, parse(&record[1])?));
    }
    LabelSet::new(events)
}
