//! Multivariate series, sliding windows, and per-window normalization.
//!
//! A series is a strictly time-ordered sequence of nine-feature instances.
//! Detection and training both consume (window, next) pairs produced by
//! [`slide`]; each window carries its own min-max normalizer so the model
//! always sees inputs anchored to the recent signal range.

use crate::error::Error;

/// Number of features per instance. Fixed by the sensor schema.
pub const FEATURE_COUNT: usize = 9;

/// Column order shared by every CSV artifact.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "temp", "humidity", "pressure", "co2", "voc", "light", "pm1", "pm25", "sound",
];

/// Guard added to the window range so constant features stay finite.
pub const NORM_EPS: f64 = 1e-8;

/// One sensor reading: epoch seconds plus one value per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub timestamp: i64,
    pub values: [f64; FEATURE_COUNT],
}

impl Instance {
    pub fn new(timestamp: i64, values: [f64; FEATURE_COUNT]) -> Result<Self, Error> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "non-finite value in instance at timestamp {timestamp}"
            )));
        }
        Ok(Self { timestamp, values })
    }
}

/// Time-ordered instances. Construction enforces strictly increasing
/// timestamps and finite values, so downstream code can assume both.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MultivariateSeries {
    instances: Vec<Instance>,
}

impl MultivariateSeries {
    pub fn new(instances: Vec<Instance>) -> Result<Self, Error> {
        for (row, pair) in instances.windows(2).enumerate() {
            if pair[1].timestamp <= pair[0].timestamp {
                return Err(Error::NonMonotonicTimestamp { row: row + 2 });
            }
        }
        for (row, inst) in instances.iter().enumerate() {
            if inst.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::MalformedRow {
                    row: row + 1,
                    reason: "non-finite value".into(),
                });
            }
        }
        Ok(Self { instances })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn get(&self, i: usize) -> Option<&Instance> {
        self.instances.get(i)
    }
}

/// Sliding-window geometry. `n` is both the window length and the capacity
/// of the per-feature error buffers downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    pub n: usize,
}

impl WindowConfig {
    pub fn new(n: usize) -> Result<Self, Error> {
        if n < 2 {
            return Err(Error::InvalidConfig(format!(
                "window length must be at least 2, got {n}"
            )));
        }
        Ok(Self { n })
    }
}

/// Yields every (window, next) pair: windows of length `n` paired with the
/// instance immediately after. A series of length L yields L - n pairs.
pub fn slide(
    series: &MultivariateSeries,
    cfg: WindowConfig,
) -> Result<impl Iterator<Item = (&[Instance], &Instance)>, Error> {
    let n = cfg.n;
    if series.len() < n + 1 {
        return Err(Error::InputTooShort(format!(
            "need at least {} instances for window length {n}, got {}",
            n + 1,
            series.len()
        )));
    }
    let instances = series.instances();
    Ok((0..series.len() - n).map(move |s| (&instances[s..s + n], &instances[s + n])))
}

/// A set of window start positions over one series; the training dataset
/// view. Start `s` denotes the pair (instances[s..s+n], instances[s+n]).
#[derive(Debug, Clone)]
pub struct WindowSet<'a> {
    series: &'a MultivariateSeries,
    n: usize,
    starts: Vec<usize>,
}

impl<'a> WindowSet<'a> {
    /// Every pair in the series.
    pub fn full(series: &'a MultivariateSeries, cfg: WindowConfig) -> Result<Self, Error> {
        Self::range(series, cfg, 0, series.len())
    }

    /// Pairs whose window and target both lie inside [lo, hi).
    pub fn range(
        series: &'a MultivariateSeries,
        cfg: WindowConfig,
        lo: usize,
        hi: usize,
    ) -> Result<Self, Error> {
        let n = cfg.n;
        if hi > series.len() || lo > hi {
            return Err(Error::OutOfBounds(format!(
                "window range [{lo}, {hi}) outside series of length {}",
                series.len()
            )));
        }
        if hi - lo < n + 1 {
            return Err(Error::InputTooShort(format!(
                "range [{lo}, {hi}) too short for window length {n}"
            )));
        }
        let starts = (lo..hi - n).collect();
        Ok(Self { series, n, starts })
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pair(&self, i: usize) -> (&'a [Instance], &'a Instance) {
        let s = self.starts[i];
        let instances = self.series.instances();
        (&instances[s..s + self.n], &instances[s + self.n])
    }
}

/// Per-feature min/max fitted on one window.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub min: [f64; FEATURE_COUNT],
    pub max: [f64; FEATURE_COUNT],
}

/// Fits min-max bounds over a window. Errors on an empty window.
pub fn fit_normalizer(window: &[Instance]) -> Result<NormalizationStats, Error> {
    if window.is_empty() {
        return Err(Error::InputTooShort("cannot fit normalizer on empty window".into()));
    }
    let mut min = [f64::INFINITY; FEATURE_COUNT];
    let mut max = [f64::NEG_INFINITY; FEATURE_COUNT];
    for inst in window {
        for (m, (x, v)) in min.iter_mut().zip(max.iter_mut().zip(inst.values)) {
            *m = m.min(v);
            *x = x.max(v);
        }
    }
    Ok(NormalizationStats { min, max })
}

/// Maps raw values to (x - min) / (max - min + eps), feature by feature.
pub fn normalize(values: &[f64; FEATURE_COUNT], stats: &NormalizationStats) -> [f64; FEATURE_COUNT] {
    let mut out = [0.0; FEATURE_COUNT];
    for m in 0..FEATURE_COUNT {
        out[m] = (values[m] - stats.min[m]) / (stats.max[m] - stats.min[m] + NORM_EPS);
    }
    out
}

/// Inverse of [`normalize`] under the same stats.
pub fn denormalize(values: &[f64; FEATURE_COUNT], stats: &NormalizationStats) -> [f64; FEATURE_COUNT] {
    let mut out = [0.0; FEATURE_COUNT];
    for m in 0..FEATURE_COUNT {
        out[m] = values[m] * (stats.max[m] - stats.min[m] + NORM_EPS) + stats.min[m];
    }
    out
}
