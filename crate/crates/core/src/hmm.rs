//! Exact inference for HMMs with time-varying transitions.
//!
//! Transitions are passed as a `T×K²` table of log probabilities where row
//! `t` holds `log A_t[i, j] = log p(z_t = j | z_{t-1} = i)` in row-major
//! order; row 0 is ignored. All recursions run in log space with per-step
//! normalization.

use crate::error::{Error, Result};
use crate::numerics::logsumexp;
use crate::tensor::Tensor;

/// Filtered and smoothed state beliefs plus the log marginal likelihood.
#[derive(Clone, Debug)]
pub struct StatePosterior {
    pub filtered: Tensor,
    pub smoothed: Tensor,
    pub log_likelihood: f64,
    /// Per-step log normalizers `ln p(x_t | x_<t)`.
    pub step_log_likelihood: Vec<f64>,
}

/// Components of the composite training objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub nll: f64,
    pub ce: f64,
    pub l2: f64,
    pub wavelet: f64,
    pub lambda_ce: f64,
    pub lambda_l2: f64,
    pub lambda_w: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(nll: f64, ce: f64, l2: f64, wavelet: f64, lambda_ce: f64, lambda_l2: f64, lambda_w: f64) -> Self {
        let total = nll + lambda_ce * ce + lambda_l2 * l2 + lambda_w * wavelet;
        Self { nll, ce, l2, wavelet, lambda_ce, lambda_l2, lambda_w, total }
    }
}

fn validate(log_emit: &Tensor, log_trans: &Tensor, log_init: &[f64]) -> Result<()> {
    let k = log_emit.cols();
    if k == 0 {
        return Err(Error::InvalidArgument("hmm needs at least one state".into()));
    }
    if log_init.len() != k {
        return Err(Error::Shape(format!("initial distribution has {} entries for {k} states", log_init.len())));
    }
    if log_trans.rows() != log_emit.rows() || log_trans.cols() != k * k {
        return Err(Error::Shape(format!(
            "transition table {}x{} does not match {} steps of {k} states",
            log_trans.rows(),
            log_trans.cols(),
            log_emit.rows()
        )));
    }
    for t in 0..log_emit.rows() {
        let row = log_emit.row(t);
        if row.iter().any(|x| x.is_nan() || *x == f64::INFINITY) || row.iter().all(|x| *x == f64::NEG_INFINITY) {
            return Err(Error::Numeric(format!("emission row at step {t} has no finite mass")));
        }
    }
    Ok(())
}

/// Forward recursion table: `T×(K+1)` with log filtered posteriors and the
/// per-step log normalizer in the last column.
pub fn log_filter_table(log_emit: &Tensor, log_trans: &Tensor, log_init: &Tensor) -> Tensor {
    let (t_len, k) = log_emit.shape();
    let mut out = Tensor::zeros(t_len, k + 1);
    let mut q = vec![0.0; k];
    let mut col = vec![0.0; k];
    for t in 0..t_len {
        if t == 0 {
            for j in 0..k {
                q[j] = log_init.data()[j] + log_emit.get(0, j);
            }
        } else {
            let lt = log_trans.row(t);
            for j in 0..k {
                for i in 0..k {
                    col[i] = out.get(t - 1, i) + lt[i * k + j];
                }
                q[j] = logsumexp(&col) + log_emit.get(t, j);
            }
        }
        let n = logsumexp(&q);
        let row = out.row_mut(t);
        for j in 0..k {
            row[j] = q[j] - n;
        }
        row[k] = n;
    }
    out
}

/// Log marginal likelihood and filtered posteriors (probabilities, `T×K`).
pub fn forward(log_emit: &Tensor, log_trans: &Tensor, log_init: &[f64]) -> Result<(f64, Tensor)> {
    validate(log_emit, log_trans, log_init)?;
    let table = log_filter_table(log_emit, log_trans, &Tensor::row_vector(log_init.to_vec()));
    let k = log_emit.cols();
    let mut filtered = Tensor::zeros(log_emit.rows(), k);
    let mut ll = 0.0;
    for t in 0..log_emit.rows() {
        let row = table.row(t);
        ll += row[k];
        for j in 0..k {
            filtered.set(t, j, row[j].exp());
        }
    }
    if !ll.is_finite() {
        return Err(Error::Numeric("log likelihood is not finite".into()));
    }
    Ok((ll, filtered))
}

pub fn forward_backward(log_emit: &Tensor, log_trans: &Tensor, log_init: &[f64]) -> Result<StatePosterior> {
    validate(log_emit, log_trans, log_init)?;
    let (t_len, k) = log_emit.shape();
    let table = log_filter_table(log_emit, log_trans, &Tensor::row_vector(log_init.to_vec()));
    let mut log_beta = Tensor::zeros(t_len, k);
    let mut terms = vec![0.0; k];
    for t in (0..t_len.saturating_sub(1)).rev() {
        let lt = log_trans.row(t + 1);
        let norm = table.get(t + 1, k);
        for i in 0..k {
            for j in 0..k {
                terms[j] = lt[i * k + j] + log_emit.get(t + 1, j) + log_beta.get(t + 1, j);
            }
            log_beta.set(t, i, logsumexp(&terms) - norm);
        }
    }
    let mut filtered = Tensor::zeros(t_len, k);
    let mut smoothed = Tensor::zeros(t_len, k);
    let mut ll = 0.0;
    let mut steps = Vec::with_capacity(t_len);
    for t in 0..t_len {
        ll += table.get(t, k);
        steps.push(table.get(t, k));
        for j in 0..k {
            filtered.set(t, j, table.get(t, j).exp());
            terms[j] = table.get(t, j) + log_beta.get(t, j);
        }
        let z = logsumexp(&terms);
        for j in 0..k {
            smoothed.set(t, j, (terms[j] - z).exp());
        }
    }
    if !ll.is_finite() {
        return Err(Error::Numeric("log likelihood is not finite".into()));
    }
    Ok(StatePosterior { filtered, smoothed, log_likelihood: ll, step_log_likelihood: steps })
}

/// Most probable state path. Ties resolve toward the lower state index.
pub fn viterbi(log_emit: &Tensor, log_trans: &Tensor, log_init: &[f64]) -> Result<Vec<usize>> {
    validate(log_emit, log_trans, log_init)?;
    let (t_len, k) = log_emit.shape();
    if t_len == 0 {
        return Ok(Vec::new());
    }
    let mut delta: Vec<f64> = (0..k).map(|j| log_init[j] + log_emit.get(0, j)).collect();
    let mut back = vec![0usize; t_len * k];
    let mut next = vec![0.0; k];
    for t in 1..t_len {
        let lt = log_trans.row(t);
        for j in 0..k {
            let mut best = (f64::NEG_INFINITY, 0usize);
            for (i, d) in delta.iter().enumerate() {
                let s = d + lt[i * k + j];
                if s > best.0 {
                    best = (s, i);
                }
            }
            back[t * k + j] = best.1;
            next[j] = best.0 + log_emit.get(t, j);
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut state = 0;
    for j in 1..k {
        if delta[j] > delta[state] {
            state = j;
        }
    }
    let mut path = vec![0; t_len];
    path[t_len - 1] = state;
    for t in (1..t_len).rev() {
        state = back[t * k + state];
        path[t - 1] = state;
    }
    Ok(path)
}

/// Joint log probability of a state path and the observations.
pub fn path_log_prob(path: &[usize], log_emit: &Tensor, log_trans: &Tensor, log_init: &[f64]) -> f64 {
    let k = log_emit.cols();
    let mut s = 0.0;
    for (t, &z) in path.iter().enumerate() {
        s += log_emit.get(t, z);
        s += if t == 0 { log_init[z] } else { log_trans.get(t, path[t - 1] * k + z) };
    }
    s
}

/// Builds a log transition table from per-step probability matrices.
pub fn log_transition_table(mats: &[Tensor]) -> Result<Tensor> {
    let k = mats.first().map_or(0, Tensor::rows);
    let mut out = Tensor::zeros(mats.len(), k * k);
    for (t, m) in mats.iter().enumerate() {
        if m.shape() != (k, k) {
            return Err(Error::Shape(format!("transition matrix {t} is not {k}x{k}")));
        }
        for (o, p) in out.row_mut(t).iter_mut().zip(m.data()) {
            *o = p.ln();
        }
    }
    Ok(out)
}
