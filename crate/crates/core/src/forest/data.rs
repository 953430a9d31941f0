//! Training-data container for the weighted forests. Features are small
//! categorical columns: genotypes take values 0/1/2, indicator features 0/1.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    Genotype,
    Binary,
}

impl FeatureKind {
    /// Number of admissible values.
    pub fn arity(self) -> u8 {
        match self {
            FeatureKind::Genotype => 3,
            FeatureKind::Binary => 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FeatureColumn {
    pub name: String,
    pub kind: FeatureKind,
    pub values: Vec<u8>,
}

/// Row-weighted classification problem with categorical features.
#[derive(Clone, Debug)]
pub struct ForestData {
    pub features: Vec<FeatureColumn>,
    pub response: Vec<u8>,
    /// 2 for binary responses, 3 for genotype responses.
    pub n_classes: u8,
    pub weights: Vec<f64>,
    pub response_name: String,
}

impl ForestData {
    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_rows();
        if n == 0 {
            return Err(Error::data("forest data has no rows"));
        }
        if self.weights.len() != n {
            return Err(Error::data("forest weight length mismatch"));
        }
        if !(2..=3).contains(&self.n_classes) {
            return Err(Error::data("forest response must have 2 or 3 classes"));
        }
        for (i, &w) in self.weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::data(format!("row {i}: invalid weight {w}")));
            }
        }
        if !self.weights.iter().any(|&w| w > 0.0) {
            return Err(Error::data("forest data has zero total weight"));
        }
        for (i, &y) in self.response.iter().enumerate() {
            if y >= self.n_classes {
                return Err(Error::data(format!("row {i}: response {y} out of range")));
            }
        }
        for col in &self.features {
            if col.values.len() != n {
                return Err(Error::data(format!(
                    "feature {} length mismatch",
                    col.name
                )));
            }
            let arity = col.kind.arity();
            for (i, &v) in col.values.iter().enumerate() {
                if v >= arity {
                    return Err(Error::data(format!(
                        "feature {} row {i}: value {v} exceeds arity",
                        col.name
                    )));
                }
            }
        }
        // a one-class response cannot be learned
        let mut seen = [false; 3];
        for (i, &y) in self.response.iter().enumerate() {
            if self.weights[i] > 0.0 {
                seen[y as usize] = true;
            }
        }
        if seen.iter().filter(|&&s| s).count() < 2 {
            return Err(Error::data(
                "forest response is constant over the weighted rows",
            ));
        }
        Ok(())
    }
}
