//! Discrete-observation HMM numerics: scaled forward/backward evaluation,
//! posterior statistics, Baum-Welch re-estimation, and a brute-force
//! path-enumeration likelihood used as a testing oracle.
//!
//! Scaling convention: each forward row is normalized to sum 1 and the
//! multiplier `scale[t]` is recorded, so `log P(O|w) = -sum(log scale[t])`.
//! The backward pass reuses the forward scale factors; with both in place,
//! the marginal posterior at `t` is simply `alpha[t][j] * beta[t][j]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-stochasticity tolerance for parameter validation.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Hidden path count guard for the enumeration oracle.
pub const ENUMERATION_LIMIT: u64 = 1_000_000;

/// Model parameters: initial distribution, transition and emission matrices.
///
/// `emit` has one column per observation symbol including the null symbol,
/// so `n_symbols() == k + 1` for a k-category domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmParams {
    pub pi: Vec<f64>,
    pub trans: Vec<Vec<f64>>,
    pub emit: Vec<Vec<f64>>,
}

fn check_row(row: &[f64], what: &str, index: usize) -> Result<()> {
    let mut sum = 0.0;
    for &v in row {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidParams {
                reason: format!("{what} row {index} has invalid entry {v}"),
            });
        }
        sum += v;
    }
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::InvalidParams {
            reason: format!("{what} row {index} sums to {sum}, expected 1"),
        });
    }
    Ok(())
}

impl HmmParams {
    pub fn new(pi: Vec<f64>, trans: Vec<Vec<f64>>, emit: Vec<Vec<f64>>) -> Result<Self> {
        let params = HmmParams { pi, trans, emit };
        params.validate()?;
        Ok(params)
    }

    pub fn n_states(&self) -> usize {
        self.pi.len()
    }

    pub fn n_symbols(&self) -> usize {
        self.emit.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.pi.len();
        if n == 0 {
            return Err(Error::InvalidParams {
                reason: "need at least one state".into(),
            });
        }
        if self.trans.len() != n || self.emit.len() != n {
            return Err(Error::InvalidParams {
                reason: format!(
                    "shape mismatch: pi has {n} states, trans {} rows, emit {} rows",
                    self.trans.len(),
                    self.emit.len()
                ),
            });
        }
        let m = self.n_symbols();
        if m == 0 {
            return Err(Error::InvalidParams {
                reason: "need at least one observation symbol".into(),
            });
        }
        check_row(&self.pi, "initial", 0)?;
        for (i, row) in self.trans.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidParams {
                    reason: format!("transition row {i} has length {}, expected {n}", row.len()),
                });
            }
            check_row(row, "transition", i)?;
        }
        for (j, row) in self.emit.iter().enumerate() {
            if row.len() != m {
                return Err(Error::InvalidParams {
                    reason: format!("emission row {j} has length {}, expected {m}", row.len()),
                });
            }
            check_row(row, "emission", j)?;
        }
        Ok(())
    }

    /// Uniform rows everywhere.
    pub fn uniform(n_states: usize, n_symbols: usize) -> Result<Self> {
        if n_states == 0 || n_symbols == 0 {
            return Err(Error::InvalidParams {
                reason: "state and symbol counts must be positive".into(),
            });
        }
        let pi = vec![1.0 / n_states as f64; n_states];
        let trans = vec![vec![1.0 / n_states as f64; n_states]; n_states];
        let emit = vec![vec![1.0 / n_symbols as f64; n_symbols]; n_states];
        Ok(HmmParams { pi, trans, emit })
    }

    /// Random stochastic rows (flat Dirichlet) drawn from the given source.
    pub fn random<R: Rng>(n_states: usize, n_symbols: usize, rng: &mut R) -> Result<Self> {
        if n_states == 0 || n_symbols == 0 {
            return Err(Error::InvalidParams {
                reason: "state and symbol counts must be positive".into(),
            });
        }
        let mut row = |len: usize| -> Vec<f64> {
            let mut v: Vec<f64> = (0..len).map(|_| exp1(rng)).collect();
            let sum: f64 = v.iter().sum();
            for x in &mut v {
                *x /= sum;
            }
            v
        };
        Ok(HmmParams {
            pi: row(n_states),
            trans: (0..n_states).map(|_| row(n_states)).collect(),
            emit: (0..n_states).map(|_| row(n_symbols)).collect(),
        })
    }

    fn check_sequence(&self, seq: &ObservationSequence) -> Result<()> {
        let m = self.n_symbols();
        for &o in &seq.obs {
            if o >= m {
                return Err(Error::ObservationOutOfRange { index: o, m });
            }
        }
        Ok(())
    }
}

/// Unit-rate exponential variate, strictly positive.
fn exp1<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return -u.ln();
        }
    }
}

/// One pseudonymous home's observation sequence, as symbol indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationSequence {
    pub pseudonym: String,
    pub obs: Vec<usize>,
}

impl ObservationSequence {
    pub fn new(pseudonym: impl Into<String>, obs: Vec<usize>) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::EmptyInput {
                what: "observation sequence",
            });
        }
        Ok(ObservationSequence {
            pseudonym: pseudonym.into(),
            obs,
        })
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

/// Scaled forward/backward variables for one sequence.
///
/// A sequence with zero probability under the model yields
/// `log_likelihood == f64::NEG_INFINITY` with the remaining rows zeroed;
/// no arithmetic panics.
#[derive(Debug, Clone)]
pub struct Trellis {
    /// T x N scaled forward variables; each computed row sums to 1.
    pub alpha: Vec<Vec<f64>>,
    /// T x N scaled backward variables (empty until `backward` runs).
    pub beta: Vec<Vec<f64>>,
    /// Per-step scaling multipliers, all > 0.
    pub scale: Vec<f64>,
    /// log P(O|w) = -sum(log scale[t]).
    pub log_likelihood: f64,
}

impl Trellis {
    pub fn is_feasible(&self) -> bool {
        self.log_likelihood.is_finite()
    }
}

/// Forward pass: fills `alpha`, `scale` and the log-likelihood.
pub fn forward(params: &HmmParams, seq: &ObservationSequence) -> Result<Trellis> {
    params.validate()?;
    params.check_sequence(seq)?;
    let n = params.n_states();
    let t_len = seq.len();
    let mut alpha = vec![vec![0.0; n]; t_len];
    let mut scale = vec![1.0; t_len];
    let mut log_likelihood = 0.0;

    for t in 0..t_len {
        let o = seq.obs[t];
        let mut row_sum = 0.0;
        for j in 0..n {
            let prior = if t == 0 {
                params.pi[j]
            } else {
                (0..n).map(|i| alpha[t - 1][i] * params.trans[i][j]).sum()
            };
            let v = params.emit[j][o] * prior;
            alpha[t][j] = v;
            row_sum += v;
        }
        if row_sum <= 0.0 {
            // zero-probability sequence: report -inf, leave the tail zeroed
            return Ok(Trellis {
                alpha,
                beta: Vec::new(),
                scale,
                log_likelihood: f64::NEG_INFINITY,
            });
        }
        let c = 1.0 / row_sum;
        for j in 0..n {
            alpha[t][j] *= c;
        }
        scale[t] = c;
        log_likelihood -= c.ln();
    }

    Ok(Trellis {
        alpha,
        beta: Vec::new(),
        scale,
        log_likelihood,
    })
}

/// Backward pass on top of the forward trellis; fills `beta` using the
/// forward scale factors, so `alpha[t][j] * beta[t][j]` is the marginal
/// state posterior.
pub fn backward(params: &HmmParams, seq: &ObservationSequence) -> Result<Trellis> {
    let mut trellis = forward(params, seq)?;
    if !trellis.is_feasible() {
        return Ok(trellis);
    }
    let n = params.n_states();
    let t_len = seq.len();
    let mut beta = vec![vec![0.0; n]; t_len];
    for j in 0..n {
        beta[t_len - 1][j] = 1.0;
    }
    for t in (0..t_len - 1).rev() {
        let o_next = seq.obs[t + 1];
        let c_next = trellis.scale[t + 1];
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                sum += params.trans[i][j] * params.emit[j][o_next] * beta[t + 1][j];
            }
            beta[t][i] = c_next * sum;
        }
    }
    trellis.beta = beta;
    Ok(trellis)
}

/// log P(O|w) via the scaled forward recursion.
pub fn likelihood(params: &HmmParams, seq: &ObservationSequence) -> Result<f64> {
    Ok(forward(params, seq)?.log_likelihood)
}

/// log P(O|w) by summing over every hidden path; the testing oracle.
///
/// Refuses inputs where `N^T` exceeds [`ENUMERATION_LIMIT`].
pub fn brute_force_likelihood(params: &HmmParams, seq: &ObservationSequence) -> Result<f64> {
    params.validate()?;
    params.check_sequence(seq)?;
    let n = params.n_states();
    let t_len = seq.len();
    let mut paths: u64 = 1;
    for _ in 0..t_len {
        paths = paths.saturating_mul(n as u64);
        if paths > ENUMERATION_LIMIT {
            return Err(Error::EnumerationGuard {
                states: n,
                len: t_len,
                limit: ENUMERATION_LIMIT,
            });
        }
    }
    let mut total = 0.0f64;
    let mut states = vec![0usize; t_len];
    loop {
        let mut p = params.pi[states[0]] * params.emit[states[0]][seq.obs[0]];
        for t in 1..t_len {
            p *= params.trans[states[t - 1]][states[t]] * params.emit[states[t]][seq.obs[t]];
        }
        total += p;
        // advance the path odometer
        let mut pos = t_len;
        loop {
            if pos == 0 {
                return Ok(total.ln());
            }
            pos -= 1;
            states[pos] += 1;
            if states[pos] < n {
                break;
            }
            states[pos] = 0;
        }
    }
}

/// Posterior statistics of one sequence under the model.
#[derive(Debug, Clone)]
pub struct PosteriorStats {
    /// T x N marginal state posteriors; each row sums to 1.
    pub marginal: Vec<Vec<f64>>,
    /// (T-1) x N x N pairwise posteriors; `pairwise[t][i][j]` is the
    /// probability of being in state `i` at step `t` and `j` at `t + 1`.
    /// Each matrix sums to 1.
    pub pairwise: Vec<Vec<Vec<f64>>>,
    /// N x M emission posteriors: marginal mass accumulated per observed
    /// symbol, the numerator of the emission update.
    pub emission_posteriors: Vec<Vec<f64>>,
}

/// Forward-backward posteriors; errors on zero-probability sequences.
pub fn posteriors(params: &HmmParams, seq: &ObservationSequence) -> Result<PosteriorStats> {
    let trellis = backward(params, seq)?;
    if !trellis.is_feasible() {
        return Err(Error::InfeasibleSequence {
            pseudonym: seq.pseudonym.clone(),
        });
    }
    posteriors_from_trellis(params, seq, &trellis)
}

fn posteriors_from_trellis(
    params: &HmmParams,
    seq: &ObservationSequence,
    trellis: &Trellis,
) -> Result<PosteriorStats> {
    let n = params.n_states();
    let m = params.n_symbols();
    let t_len = seq.len();

    let mut marginal = vec![vec![0.0; n]; t_len];
    for t in 0..t_len {
        for j in 0..n {
            marginal[t][j] = trellis.alpha[t][j] * trellis.beta[t][j];
        }
    }

    let mut pairwise = vec![vec![vec![0.0; n]; n]; t_len.saturating_sub(1)];
    for t in 1..t_len {
        let o = seq.obs[t];
        let c = trellis.scale[t];
        for i in 0..n {
            for j in 0..n {
                pairwise[t - 1][i][j] = c
                    * trellis.alpha[t - 1][i]
                    * params.trans[i][j]
                    * params.emit[j][o]
                    * trellis.beta[t][j];
            }
        }
    }

    let mut emission_posteriors = vec![vec![0.0; m]; n];
    for t in 0..t_len {
        let o = seq.obs[t];
        for j in 0..n {
            emission_posteriors[j][o] += marginal[t][j];
        }
    }

    Ok(PosteriorStats {
        marginal,
        pairwise,
        emission_posteriors,
    })
}

/// Unnormalized expected-count accumulators from one E-step over a batch.
///
/// Normalizing each row yields the re-estimated parameters, so these are
/// also the count statistics a differentially private release starts from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCounts {
    pub transition: Vec<Vec<f64>>,
    pub emission: Vec<Vec<f64>>,
}

fn accumulate_counts(params: &HmmParams, sequences: &[ObservationSequence]) -> Result<(TrainingCounts, usize)> {
    let n = params.n_states();
    let m = params.n_symbols();
    let mut trans = vec![vec![0.0; n]; n];
    let mut emit = vec![vec![0.0; m]; n];
    let mut feasible = 0usize;
    for seq in sequences {
        let trellis = backward(params, seq)?;
        if !trellis.is_feasible() {
            continue;
        }
        feasible += 1;
        let stats = posteriors_from_trellis(params, seq, &trellis)?;
        for mat in &stats.pairwise {
            for i in 0..n {
                for j in 0..n {
                    trans[i][j] += mat[i][j];
                }
            }
        }
        for j in 0..n {
            for k in 0..m {
                emit[j][k] += stats.emission_posteriors[j][k];
            }
        }
    }
    Ok((
        TrainingCounts {
            transition: trans,
            emission: emit,
        },
        feasible,
    ))
}

/// Normalize accumulators into parameters. Rows with zero expected
/// occupancy keep the previous parameter row; the returned counts carry
/// that retained row as pseudo-counts so that normalizing the counts
/// always reproduces the returned parameters.
fn reestimate(params: &HmmParams, mut counts: TrainingCounts) -> (HmmParams, TrainingCounts) {
    let n = params.n_states();
    let mut trans = vec![vec![0.0; n]; n];
    for i in 0..n {
        let denom: f64 = counts.transition[i].iter().sum();
        if denom > 0.0 {
            for j in 0..n {
                trans[i][j] = counts.transition[i][j] / denom;
            }
        } else {
            trans[i].clone_from_slice(&params.trans[i]);
            counts.transition[i].clone_from_slice(&params.trans[i]);
        }
    }
    let m = params.n_symbols();
    let mut emit = vec![vec![0.0; m]; n];
    for j in 0..n {
        let denom: f64 = counts.emission[j].iter().sum();
        if denom > 0.0 {
            for k in 0..m {
                emit[j][k] = counts.emission[j][k] / denom;
            }
        } else {
            emit[j].clone_from_slice(&params.emit[j]);
            counts.emission[j].clone_from_slice(&params.emit[j]);
        }
    }
    (
        HmmParams {
            pi: params.pi.clone(),
            trans,
            emit,
        },
        counts,
    )
}

/// One Baum-Welch re-estimation step over a batch of sequences.
///
/// Transition and emission rows are updated; the initial distribution is
/// left as-is. Infeasible sequences contribute nothing; it is an error for
/// every sequence to be infeasible. Accumulation follows input order, so
/// the result is bit-reproducible.
pub fn baum_welch_step(
    params: &HmmParams,
    sequences: &[ObservationSequence],
) -> Result<HmmParams> {
    if sequences.is_empty() {
        return Err(Error::EmptyInput { what: "sequences" });
    }
    let (counts, feasible) = accumulate_counts(params, sequences)?;
    if feasible == 0 {
        return Err(Error::TrainingFailed {
            reason: "every sequence has zero probability under the current model".into(),
        });
    }
    Ok(reestimate(params, counts).0)
}

/// Total log-likelihood over a batch, summed in input order. Infeasible
/// sequences contribute negative infinity.
pub fn total_log_likelihood(
    params: &HmmParams,
    sequences: &[ObservationSequence],
) -> Result<f64> {
    let mut total = 0.0;
    for seq in sequences {
        total += likelihood(params, seq)?;
    }
    Ok(total)
}

/// Result of an iterated training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: HmmParams,
    /// Total log-likelihood after each iteration.
    pub trace: Vec<f64>,
    /// Final-step accumulators; normalizing them reproduces `params`.
    pub counts: TrainingCounts,
}

/// Iterate Baum-Welch until the total log-likelihood changes by less than
/// `tol` or `max_iter` is reached.
pub fn train(
    init: &HmmParams,
    sequences: &[ObservationSequence],
    tol: f64,
    max_iter: usize,
) -> Result<TrainOutcome> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig {
            reason: format!("tol must be positive, got {tol}"),
        });
    }
    if max_iter == 0 {
        return Err(Error::InvalidConfig {
            reason: "max_iter must be at least 1".into(),
        });
    }
    if sequences.is_empty() {
        return Err(Error::EmptyInput { what: "sequences" });
    }

    let mut params = init.clone();
    let mut previous = total_log_likelihood(&params, sequences)?;
    if !previous.is_finite() {
        return Err(Error::TrainingFailed {
            reason: "a sequence has zero probability under the initial model".into(),
        });
    }
    let mut trace = Vec::new();
    let mut last_counts = None;
    for _ in 0..max_iter {
        let (counts, feasible) = accumulate_counts(&params, sequences)?;
        if feasible == 0 {
            return Err(Error::TrainingFailed {
                reason: "every sequence became infeasible during training".into(),
            });
        }
        let (next, counts) = reestimate(&params, counts);
        params = next;
        last_counts = Some(counts);
        let current = total_log_likelihood(&params, sequences)?;
        trace.push(current);
        if (current - previous).abs() < tol {
            break;
        }
        previous = current;
    }
    Ok(TrainOutcome {
        params,
        trace,
        counts: last_counts.expect("max_iter >= 1 guarantees one iteration"),
    })
}
