//! Client-side k-ary randomized response and the matching aggregator-side
//! frequency decoder.
//!
//! The mechanism keeps the true category with probability
//! `e^eps / (k - 1 + e^eps)` and otherwise reports one of the remaining
//! `k - 1` categories uniformly at random. `verify_ldp` checks the resulting
//! privacy guarantee analytically instead of trusting the closed form.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The finite observation alphabet plus a reserved "no observation" symbol.
///
/// Symbol order is fixed for a run: index `i` maps to `symbols[i]` for
/// `i < k`, and the null symbol sits at index `k`. The null symbol is
/// reportable but is not part of the randomized-response domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryDomain {
    symbols: Vec<String>,
    null_symbol: String,
}

impl CategoryDomain {
    pub fn new<S: Into<String>>(symbols: Vec<S>, null_symbol: impl Into<String>) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        let null_symbol = null_symbol.into();
        if symbols.len() < 2 {
            return Err(Error::InvalidDomain {
                reason: format!("need at least 2 symbols, got {}", symbols.len()),
            });
        }
        if null_symbol.is_empty() {
            return Err(Error::InvalidDomain {
                reason: "null symbol must be non-empty".into(),
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &symbols {
            if s.is_empty() {
                return Err(Error::InvalidDomain {
                    reason: "symbols must be non-empty".into(),
                });
            }
            if !seen.insert(s.as_str()) {
                return Err(Error::InvalidDomain {
                    reason: format!("duplicate symbol {s:?}"),
                });
            }
        }
        if seen.contains(null_symbol.as_str()) {
            return Err(Error::InvalidDomain {
                reason: format!("null symbol {null_symbol:?} collides with a domain symbol"),
            });
        }
        Ok(CategoryDomain {
            symbols,
            null_symbol,
        })
    }

    /// Number of randomized-response categories (excludes the null symbol).
    pub fn k(&self) -> usize {
        self.symbols.len()
    }

    /// Total symbol count including the null symbol; observation indices
    /// range over `0..m()` with the null symbol at `m() - 1`.
    pub fn m(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn null_symbol(&self) -> &str {
        &self.null_symbol
    }

    pub fn null_index(&self) -> usize {
        self.symbols.len()
    }

    /// Index of a domain symbol (the null symbol included, at `k`).
    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        if symbol == self.null_symbol {
            return Some(self.null_index());
        }
        self.symbols.iter().position(|s| s == symbol)
    }

    /// Symbol at an observation index, the null symbol for index `k`.
    pub fn symbol_at(&self, index: usize) -> Option<&str> {
        if index == self.null_index() {
            Some(&self.null_symbol)
        } else {
            self.symbols.get(index).map(String::as_str)
        }
    }

    /// All `m()` symbols in index order, null last.
    pub fn all_symbols(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.symbols.iter().map(String::as_str).collect();
        out.push(&self.null_symbol);
        out
    }

    fn rr_index_of(&self, symbol: &str) -> Result<usize> {
        self.symbols
            .iter()
            .position(|s| s == symbol)
            .ok_or_else(|| Error::UnknownSymbol {
                symbol: symbol.to_string(),
            })
    }
}

/// Privacy parameter epsilon for one mechanism invocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    epsilon: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidBudget { epsilon });
        }
        Ok(PrivacyBudget { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// One client emission after perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedReport {
    pub pseudonym: String,
    pub slot: u64,
    pub symbol: String,
    pub epsilon_used: f64,
}

/// The keep/switch probabilities of the k-ary mechanism.
///
/// Computed as `p = 1 / (1 + (k-1) e^{-eps})` and `q = e^{-eps} * p`, which
/// stays finite for arbitrarily large epsilon.
pub fn krr_probabilities(k: usize, budget: PrivacyBudget) -> (f64, f64) {
    let w = (-budget.epsilon()).exp();
    let denom = 1.0 + (k as f64 - 1.0) * w;
    (1.0 / denom, w / denom)
}

/// Probability vector of the mechanism output given a true value.
///
/// Entry for the true value is `e^eps / (k - 1 + e^eps)`; every other entry
/// is `1 / (k - 1 + e^eps)`.
pub fn krr_distribution(
    true_value: &str,
    domain: &CategoryDomain,
    budget: PrivacyBudget,
) -> Result<Vec<f64>> {
    let idx = domain.rr_index_of(true_value)?;
    let (p, q) = krr_probabilities(domain.k(), budget);
    let mut dist = vec![q; domain.k()];
    dist[idx] = p;
    Ok(dist)
}

/// Draw one perturbed symbol, exactly distributed per `krr_distribution`.
pub fn krr_perturb<'d, R: Rng>(
    true_value: &str,
    domain: &'d CategoryDomain,
    budget: PrivacyBudget,
    rng: &mut R,
) -> Result<&'d str> {
    let idx = domain.rr_index_of(true_value)?;
    let (p, _) = krr_probabilities(domain.k(), budget);
    let u: f64 = rng.gen();
    let out = if u < p {
        idx
    } else {
        // uniform over the k-1 other symbols
        let r = rng.gen_range(0..domain.k() - 1);
        if r < idx {
            r
        } else {
            r + 1
        }
    };
    Ok(&domain.symbols()[out])
}

/// Maximum probability ratio `P[T(a) = s] / P[T(b) = s]` over all input
/// pairs and outputs, enumerated from the actual output distributions.
///
/// A mechanism satisfies epsilon-LDP iff this ratio is at most `e^eps`.
pub fn verify_ldp(domain: &CategoryDomain, budget: PrivacyBudget) -> Result<f64> {
    let k = domain.k();
    let mut dists = Vec::with_capacity(k);
    for s in domain.symbols() {
        dists.push(krr_distribution(s, domain, budget)?);
    }
    let mut max_ratio = 0.0f64;
    for a in 0..k {
        for b in 0..k {
            if a == b {
                continue;
            }
            for out in 0..k {
                let ratio = dists[a][out] / dists[b][out];
                if ratio > max_ratio {
                    max_ratio = ratio;
                }
            }
        }
    }
    Ok(max_ratio)
}

/// Unbiased frequency estimates decoded from perturbed reports.
///
/// For each domain symbol, `f = (c/n - q) / (p - q)` where `c` is the
/// observed count and `n` the number of non-null reports. Estimates are not
/// clipped and may fall outside `[0, 1]`; they sum to 1.
pub fn estimate_frequencies(
    reports: &[PerturbedReport],
    domain: &CategoryDomain,
    budget: PrivacyBudget,
) -> Result<Vec<f64>> {
    if reports.is_empty() {
        return Err(Error::EmptyInput { what: "reports" });
    }
    let mut counts = vec![0u64; domain.k()];
    let mut n = 0u64;
    for report in reports {
        if report.epsilon_used != budget.epsilon() {
            return Err(Error::MixedEpsilon {
                expected: budget.epsilon(),
                found: report.epsilon_used,
            });
        }
        if report.symbol == domain.null_symbol() {
            // null reports are unperturbed and carry no frequency signal
            continue;
        }
        let idx = domain.rr_index_of(&report.symbol)?;
        counts[idx] += 1;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyInput {
            what: "non-null reports",
        });
    }
    let (p, q) = krr_probabilities(domain.k(), budget);
    let n = n as f64;
    Ok(counts
        .iter()
        .map(|&c| (c as f64 / n - q) / (p - q))
        .collect())
}
