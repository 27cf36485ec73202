//! One-point average model: a feature sequence collapsed to its temporal
//! mean, compared by Euclidean distance.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFeature {
    values: Vec<f64>,
    source_id: String,
}

impl MeanFeature {
    pub fn new(values: Vec<f64>, source_id: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyFeatures);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mean feature"));
        }
        Ok(Self {
            values,
            source_id: source_id.into(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    /// `item_id,v0,...,v{d-1}` as one CSV record.
    pub fn write_csv_row<W: Write>(&self, item_id: &str, out: &mut csv::Writer<W>) -> Result<()> {
        let mut record = vec![item_id.to_string()];
        record.extend(self.values.iter().map(|v| v.to_string()));
        out.write_record(&record).map_err(|e| Error::Format {
            what: "mean feature csv",
            reason: e.to_string(),
        })
    }
}

// Pairwise summation of column `col` over rows `lo..hi`.
fn column_sum(features: &FeatureSequence, col: usize, lo: usize, hi: usize) -> f64 {
    if hi - lo <= 32 {
        return (lo..hi).map(|t| features.frame(t)[col]).sum();
    }
    let mid = lo + (hi - lo) / 2;
    column_sum(features, col, lo, mid) + column_sum(features, col, mid, hi)
}

/// Coordinate-wise mean over all frames.
pub fn mean_feature(features: &FeatureSequence) -> Result<MeanFeature> {
    let n = features.len();
    if n == 0 {
        return Err(Error::EmptyFeatures);
    }
    let values = (0..features.dim())
        .map(|j| column_sum(features, j, 0, n) / n as f64)
        .collect();
    MeanFeature::new(values, features.source_id())
}

pub fn euclidean(a: &MeanFeature, b: &MeanFeature) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}
