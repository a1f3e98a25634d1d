//! Classification, regime-alignment, trading and latency metrics.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Counts with rows = truth, columns = prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub k: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self { k, counts: vec![0; k * k] }
    }

    pub fn from_pairs(truth: &[usize], pred: &[usize], k: usize) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::InvalidArgument(format!("{} truths vs {} predictions", truth.len(), pred.len())));
        }
        let mut cm = Self::new(k);
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= k || p >= k {
                return Err(Error::InvalidArgument(format!("label ({t}, {p}) out of range for {k} classes")));
            }
            cm.counts[t * k + p] += 1;
        }
        Ok(cm)
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Self {
        let k = rows.len();
        Self { k, counts: rows.iter().flatten().copied().collect() }
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> f64 {
    let n = cm.total();
    if n == 0 {
        0.0
    } else {
        cm.trace() as f64 / n as f64
    }
}

/// Multiclass Matthews correlation; 0 when either marginal is degenerate.
pub fn mcc(cm: &ConfusionMatrix) -> f64 {
    let k = cm.k;
    let s = cm.total() as f64;
    let c = cm.trace() as f64;
    let t: Vec<f64> = (0..k).map(|i| (0..k).map(|j| cm.get(i, j)).sum::<u64>() as f64).collect();
    let p: Vec<f64> = (0..k).map(|j| (0..k).map(|i| cm.get(i, j)).sum::<u64>() as f64).collect();
    let tp: f64 = t.iter().zip(&p).map(|(a, b)| a * b).sum();
    let tt: f64 = t.iter().map(|a| a * a).sum();
    let pp: f64 = p.iter().map(|a| a * a).sum();
    let den = (s * s - pp) * (s * s - tt);
    if den <= 0.0 {
        return 0.0;
    }
    (c * s - tp) / den.sqrt()
}

/// Per-class F1 for classes `0..k` (0 for classes with no support and no predictions).
pub fn per_class_f1(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.k)
        .map(|i| {
            let tp = cm.get(i, i) as f64;
            let support: u64 = (0..cm.k).map(|j| cm.get(i, j)).sum();
            let predicted: u64 = (0..cm.k).map(|j| cm.get(j, i)).sum();
            let denom = support as f64 + predicted as f64;
            if denom == 0.0 {
                0.0
            } else {
                2.0 * tp / denom
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegimeF1 {
    /// Macro F1 over the regimes present in the truth.
    pub f1: f64,
    /// `mapping[s]` is the regime label assigned to decoded state `s`.
    pub mapping: Vec<usize>,
    pub per_regime: Vec<f64>,
}

fn macro_f1(cm: &ConfusionMatrix, present: &[bool]) -> (f64, Vec<f64>) {
    let f = per_class_f1(cm);
    let n = present.iter().filter(|p| **p).count().max(1);
    (f.iter().zip(present).filter(|(_, p)| **p).map(|(v, _)| v).sum::<f64>() / n as f64, f)
}

/// Macro F1 of decoded states against true regimes after the best one-to-one relabeling.
///
/// Labels live in `0..n` with `n = max(k, labels seen)`; up to 8 labels are
/// searched exhaustively, larger label sets greedily.
pub fn regime_f1(decoded: &[usize], truth: &[usize], k: usize) -> Result<RegimeF1> {
    if decoded.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "decoded path has {} steps, truth has {}",
            decoded.len(),
            truth.len()
        )));
    }
    let n = decoded.iter().chain(truth).map(|v| v + 1).max().unwrap_or(0).max(k).max(1);
    let mut joint = vec![0u64; n * n];
    for (&d, &t) in decoded.iter().zip(truth) {
        joint[d * n + t] += 1;
    }
    let mut present = vec![false; n];
    for &t in truth {
        present[t] = true;
    }
    let score = |mapping: &[usize]| {
        let mut cm = ConfusionMatrix::new(n);
        for d in 0..n {
            for t in 0..n {
                cm.counts[t * n + mapping[d]] += joint[d * n + t];
            }
        }
        macro_f1(&cm, &present)
    };
    let mut best_map: Vec<usize> = (0..n).collect();
    let (mut best, mut best_per) = score(&best_map);
    if n <= 8 {
        let mut perm: Vec<usize> = (0..n).collect();
        while next_permutation(&mut perm) {
            let (f, per) = score(&perm);
            if f > best + 1e-15 {
                best = f;
                best_per = per;
                best_map = perm.clone();
            }
        }
    } else {
        // greedy: repeatedly pair the decoded state and regime with the largest overlap
        let mut map = vec![usize::MAX; n];
        let mut used = vec![false; n];
        for _ in 0..n {
            let mut pick = None;
            for d in (0..n).filter(|&d| map[d] == usize::MAX) {
                for t in (0..n).filter(|&t| !used[t]) {
                    if pick.is_none_or(|(_, _, c)| joint[d * n + t] > c) {
                        pick = Some((d, t, joint[d * n + t]));
                    }
                }
            }
            let (d, t, _) = pick.expect("free pair");
            map[d] = t;
            used[t] = true;
        }
        let (f, per) = score(&map);
        if f > best {
            best = f;
            best_per = per;
            best_map = map;
        }
    }
    Ok(RegimeF1 { f1: best, mapping: best_map, per_regime: best_per })
}

fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TradeSimConfig {
    /// Cost per unit change of position, basis points.
    pub fee_bps: f64,
    /// Multiplier applied to the per-step Sharpe for the annualized figure.
    pub annualization: f64,
}

impl Default for TradeSimConfig {
    fn default() -> Self {
        Self { fee_bps: 1.0, annualization: 1.0 }
    }
}

impl TradeSimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fee_bps >= 0.0) || !self.fee_bps.is_finite() {
            return Err(Error::InvalidConfig("fee_bps must be a nonnegative number".into()));
        }
        if !(self.annualization > 0.0) || !self.annualization.is_finite() {
            return Err(Error::InvalidConfig("annualization must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TradeSim {
    /// Per-step Sharpe (mean / population std of returns); 0 for constant returns.
    pub sharpe: f64,
    pub annualized: f64,
    pub returns: Vec<f64>,
    /// Cumulative returns.
    pub pnl: Vec<f64>,
}

/// Positions `-1/0/+1` held from step `t` to `t+1` earn the relative mid
/// change, less `fee·|Δposition|` charged when the position changes.
pub fn sharpe_sim(positions: &[i32], mid: &[f64], cfg: &TradeSimConfig) -> Result<TradeSim> {
    if positions.len() != mid.len() {
        return Err(Error::InvalidArgument(format!("{} positions for {} prices", positions.len(), mid.len())));
    }
    if !(cfg.fee_bps >= 0.0) {
        return Err(Error::InvalidArgument("fee must be nonnegative".into()));
    }
    let fee = cfg.fee_bps * 1e-4;
    let mut returns = Vec::with_capacity(mid.len().saturating_sub(1));
    let mut prev = 0i32;
    for t in 0..mid.len().saturating_sub(1) {
        let pos = positions[t];
        let gross = f64::from(pos) * (mid[t + 1] - mid[t]) / mid[t];
        returns.push(gross - fee * f64::from((pos - prev).abs()));
        prev = pos;
    }
    let mut acc = 0.0;
    let pnl = returns
        .iter()
        .map(|r| {
            acc += r;
            acc
        })
        .collect();
    let sd = crate::numerics::population_std(&returns);
    let sharpe = if sd > 0.0 { crate::numerics::mean(&returns) / sd } else { 0.0 };
    Ok(TradeSim { sharpe, annualized: sharpe * cfg.annualization, returns, pnl })
}

/// Linear-interpolated percentile, `q` in `[0, 100]`.
pub fn percentile(samples: &[f64], q: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = (q / 100.0).clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let ma = crate::numerics::mean(&ra);
    let mb = crate::numerics::mean(&rb);
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - ma) * (y - mb);
        da += (x - ma).powi(2);
        db += (y - mb).powi(2);
    }
    if da == 0.0 || db == 0.0 {
        0.0
    } else {
        num / (da * db).sqrt()
    }
}

/// F1 of the volatile regime when no ground truth exists: rows in the top
/// volatility quintile are the positives, and the decoded state with the
/// highest mean volatility is the predicted volatile regime.
pub fn volatile_regime_f1(decoded: &[usize], volatility: &[f64], k: usize) -> Result<f64> {
    if decoded.len() != volatility.len() {
        return Err(Error::InvalidArgument(format!("{} states for {} volatility values", decoded.len(), volatility.len())));
    }
    if decoded.is_empty() {
        return Err(Error::InvalidArgument("empty sequence".into()));
    }
    if let Some(s) = decoded.iter().find(|&&s| s >= k) {
        return Err(Error::InvalidArgument(format!("state {s} out of range for {k} states")));
    }
    let cut = percentile(volatility, 80.0);
    let mut sum = vec![0.0; k];
    let mut count = vec![0usize; k];
    for (&s, &v) in decoded.iter().zip(volatility) {
        sum[s] += v;
        count[s] += 1;
    }
    let volatile = (0..k)
        .filter(|&s| count[s] > 0)
        .max_by(|&a, &b| (sum[a] / count[a] as f64).total_cmp(&(sum[b] / count[b] as f64)))
        .expect("nonempty");
    let truth: Vec<usize> = volatility.iter().map(|&v| usize::from(v >= cut)).collect();
    let pred: Vec<usize> = decoded.iter().map(|&s| usize::from(s == volatile)).collect();
    let cm = ConfusionMatrix::from_pairs(&truth, &pred, 2)?;
    Ok(per_class_f1(&cm)[1])
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub steps: usize,
    pub accuracy: f64,
    pub mcc: f64,
    pub regime_f1: Option<f64>,
    /// `generator` (true regimes) or `volatility_quintile` (fallback).
    pub regime_truth: Option<&'static str>,
    pub per_regime_f1: Vec<f64>,
    pub nll_per_step: f64,
    pub sharpe: f64,
    pub sharpe_annualized: f64,
    pub annualization: f64,
    pub fee_bps: f64,
    pub latency_p50_ms: Option<f64>,
    pub latency_p99_ms: Option<f64>,
}

impl MetricsReport {
    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.6}"));
        let mut s = String::new();
        s.push_str(&format!("annualization = {}\n", self.annualization));
        s.push_str(&format!("fee_bps = {}\n", self.fee_bps));
        s.push_str(&format!("steps = {}\n", self.steps));
        s.push_str(&format!("accuracy = {:.6}\n", self.accuracy));
        s.push_str(&format!("mcc = {:.6}\n", self.mcc));
        s.push_str(&format!("regime_f1 = {}\n", opt(self.regime_f1)));
        s.push_str(&format!("regime_truth = {}\n", self.regime_truth.unwrap_or("NA")));
        for (i, f) in self.per_regime_f1.iter().enumerate() {
            s.push_str(&format!("regime_f1_{i} = {f:.6}\n"));
        }
        s.push_str(&format!("nll_per_step = {:.6}\n", self.nll_per_step));
        s.push_str(&format!("sharpe = {:.6}\n", self.sharpe));
        s.push_str(&format!("sharpe_annualized = {:.6}\n", self.sharpe_annualized));
        s.push_str(&format!("latency_p50_ms = {}\n", opt(self.latency_p50_ms)));
        s.push_str(&format!("latency_p99_ms = {}\n", opt(self.latency_p99_ms)));
        s
    }
}
