//! Model persistence: a single JSON document holding the symbol table and
//! parameters, value-exact across save/load round trips.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{HmmParams, TrainingCounts};
use crate::ldp::CategoryDomain;

/// Metadata attached to a differentially private release.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseMetadata {
    pub epsilon_cdp: f64,
    pub sensitivity: f64,
    /// Rows replaced by a uniform distribution after noise zeroed them,
    /// e.g. `"transition:2"` or `"initial"`.
    pub repaired_rows: Vec<String>,
}

/// On-disk model document: dimensions, symbol table and parameters, plus
/// optional training counts and release metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub state_count: usize,
    pub symbol_count: usize,
    /// All symbols in index order; the null symbol is last.
    pub symbols: Vec<String>,
    pub null_symbol: String,
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub emission: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_counts: Option<TrainingCounts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub release: Option<ReleaseMetadata>,
}

impl ModelDocument {
    pub fn new(params: &HmmParams, domain: &CategoryDomain) -> Result<Self> {
        params.validate()?;
        if params.n_symbols() != domain.m() {
            return Err(Error::ModelDocument {
                reason: format!(
                    "emission matrix has {} symbols but the domain has {}",
                    params.n_symbols(),
                    domain.m()
                ),
            });
        }
        Ok(ModelDocument {
            state_count: params.n_states(),
            symbol_count: params.n_symbols(),
            symbols: domain.symbols().to_vec(),
            null_symbol: domain.null_symbol().to_string(),
            initial: params.pi.clone(),
            transition: params.trans.clone(),
            emission: params.emit.clone(),
            training_counts: None,
            release: None,
        })
    }

    pub fn with_counts(mut self, counts: TrainingCounts) -> Self {
        self.training_counts = Some(counts);
        self
    }

    pub fn with_release(mut self, release: ReleaseMetadata) -> Self {
        self.release = Some(release);
        self
    }

    pub fn params(&self) -> Result<HmmParams> {
        HmmParams::new(
            self.initial.clone(),
            self.transition.clone(),
            self.emission.clone(),
        )
    }

    pub fn domain(&self) -> Result<CategoryDomain> {
        CategoryDomain::new(self.symbols.clone(), self.null_symbol.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let params = self.params()?;
        if self.state_count != params.n_states() || self.symbol_count != params.n_symbols() {
            return Err(Error::ModelDocument {
                reason: "declared dimensions do not match the matrices".into(),
            });
        }
        if self.symbols.len() + 1 != self.symbol_count {
            return Err(Error::ModelDocument {
                reason: format!(
                    "symbol table has {} entries, expected {} (null excluded)",
                    self.symbols.len(),
                    self.symbol_count - 1
                ),
            });
        }
        self.domain()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (HmmParams, CategoryDomain) {
        let domain = CategoryDomain::new(vec!["a", "b"], "no_event").unwrap();
        let params = HmmParams::new(
            vec![1.0 / 3.0, 2.0 / 3.0],
            vec![vec![0.1, 0.9], vec![0.55, 0.45]],
            vec![
                vec![0.2, 0.3, 0.5],
                vec![1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0],
            ],
        )
        .unwrap();
        (params, domain)
    }

    #[test]
    fn round_trip_is_value_exact() {
        let (params, domain) = sample();
        let doc = ModelDocument::new(&params, &domain).unwrap();
        let text = doc.to_json().unwrap();
        let loaded = ModelDocument::from_json(&text).unwrap();
        assert_eq!(doc, loaded);
        let reloaded = loaded.params().unwrap();
        assert_eq!(params.pi, reloaded.pi);
        assert_eq!(params.trans, reloaded.trans);
        assert_eq!(params.emit, reloaded.emit);
    }

    #[test]
    fn rejects_mismatched_domain() {
        let (params, _) = sample();
        let wide = CategoryDomain::new(vec!["a", "b", "c"], "no_event").unwrap();
        assert!(ModelDocument::new(&params, &wide).is_err());
    }

    #[test]
    fn rejects_tampered_document() {
        let (params, domain) = sample();
        let mut doc = ModelDocument::new(&params, &domain).unwrap();
        doc.transition[0][0] = 0.4;
        assert!(ModelDocument::from_json(&doc.to_json().unwrap()).is_err());
    }
}
