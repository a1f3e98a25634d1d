//! Adaptation signals, volatility/frequency gate, pathway fusion and causal attention.

use serde::{Deserialize, Serialize};

use crate::data::FeatureFrame;
use crate::numerics::{mean, population_std, sigmoid_scalar};
use crate::params::{init_matrix, param_struct};
use crate::rng::SeededRng;
use crate::tape::{Graph, Var};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptationSignals {
    /// Population std of mid-price changes in the window (price units).
    pub sigma: f64,
    /// Arrivals per second.
    pub lambda: f64,
    pub window: usize,
    pub duration_s: f64,
    pub window_mean: Vec<f64>,
}

/// Signals over a window of consecutive frames spaced `interval_s` apart.
pub fn adaptation_signals(frames: &[FeatureFrame], interval_s: f64) -> Result<AdaptationSignals> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("adaptation window is empty".into()));
    }
    if !(interval_s > 0.0) {
        return Err(Error::InvalidArgument("frame interval must be positive".into()));
    }
    let changes: Vec<f64> = frames.windows(2).map(|p| p[1].mid - p[0].mid).collect();
    let arrivals: u64 = frames.iter().map(|f| u64::from(f.arrival_count)).sum();
    let duration_s = frames.len() as f64 * interval_s;
    let dim = frames[0].x.len();
    let window_mean = (0..dim).map(|j| mean(&frames.iter().map(|f| f.x[j]).collect::<Vec<_>>())).collect();
    Ok(AdaptationSignals {
        sigma: population_std(&changes),
        lambda: arrivals as f64 / duration_s,
        window: frames.len(),
        duration_s,
        window_mean,
    })
}

/// Trailing-window σ and λ for every row, windows truncated at the start.
pub fn signal_series(mid: &[f64], arrivals: &[u32], window: usize, interval_s: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if window < 2 {
        return Err(Error::InvalidArgument("signal window must span at least two frames".into()));
    }
    if mid.len() != arrivals.len() {
        return Err(Error::Shape("mid and arrival series differ in length".into()));
    }
    let mut sigma = Vec::with_capacity(mid.len());
    let mut lambda = Vec::with_capacity(mid.len());
    for t in 0..mid.len() {
        let start = (t + 1).saturating_sub(window);
        let changes: Vec<f64> = (start + 1..=t).map(|s| mid[s] - mid[s - 1]).collect();
        sigma.push(population_std(&changes));
        let count: u64 = arrivals[start..=t].iter().map(|&a| u64::from(a)).sum();
        lambda.push(count as f64 / ((t + 1 - start) as f64 * interval_s));
    }
    Ok((sigma, lambda))
}

/// Training-split moments used to standardize gate inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalNormalizer {
    pub sigma_mean: f64,
    pub sigma_std: f64,
    pub lambda_mean: f64,
    pub lambda_std: f64,
}

impl Default for SignalNormalizer {
    fn default() -> Self {
        Self { sigma_mean: 0.0, sigma_std: 1.0, lambda_mean: 0.0, lambda_std: 1.0 }
    }
}

impl SignalNormalizer {
    pub fn fit(sigma: &[f64], lambda: &[f64]) -> Self {
        let floor = |s: f64| if s > 1e-12 { s } else { 1.0 };
        Self {
            sigma_mean: mean(sigma),
            sigma_std: floor(population_std(sigma)),
            lambda_mean: mean(lambda),
            lambda_std: floor(population_std(lambda)),
        }
    }

    pub fn standardize(&self, sigma: f64, lambda: f64) -> [f64; 2] {
        [(sigma - self.sigma_mean) / self.sigma_std, (lambda - self.lambda_mean) / self.lambda_std]
    }
}

param_struct! {
    /// `w_g` is `k × inputs`.
    pub struct GateParams { w_g: P, b_g: P }
}

impl GateParams {
    /// Random weights, except the volatility column starts positive so the fine path gains weight as σ rises.
    pub fn init(rng: &mut SeededRng, hidden: usize, inputs: usize) -> Self {
        let mut w_g = init_matrix(rng, inputs, hidden, 1.0).transpose();
        for r in 0..hidden {
            let v = w_g.get(r, 0).abs();
            w_g.set(r, 0, v);
        }
        Self { w_g, b_g: Tensor::zeros(1, hidden) }
    }
}

/// `g = sigmoid(W_g s + b_g)` for standardized inputs `s`.
pub fn gate(standardized: &[f64], p: &GateParams) -> Result<Vec<f64>> {
    if standardized.len() != p.w_g.cols() {
        return Err(Error::Shape(format!("gate expects {} inputs, got {}", p.w_g.cols(), standardized.len())));
    }
    Ok((0..p.w_g.rows())
        .map(|i| sigmoid_scalar(crate::tensor::dot(p.w_g.row(i), standardized) + p.b_g.data()[i]))
        .collect())
}

/// Tape gate over rows of standardized signals `s` (`T × inputs`).
pub fn gate_rows(g: &mut Graph, s: Var, p: &GateParams<Var>) -> Var {
    let wt = g.transpose(p.w_g);
    let z = g.matmul(s, wt);
    let z = g.add_row(z, p.b_g);
    g.sigmoid(z)
}

/// Elementwise `g ∘ h_fine + (1 − g) ∘ h_coarse`.
pub fn fuse(gate: &[f64], h_fine: &[f64], h_coarse: &[f64]) -> Result<Vec<f64>> {
    if gate.len() != h_fine.len() || gate.len() != h_coarse.len() {
        return Err(Error::Shape(format!(
            "fuse lengths differ: gate {}, fine {}, coarse {}",
            gate.len(),
            h_fine.len(),
            h_coarse.len()
        )));
    }
    Ok(gate.iter().zip(h_fine).zip(h_coarse).map(|((g, f), c)| c + g * (f - c)).collect())
}

pub fn fuse_rows(g: &mut Graph, gate: Var, h_fine: Var, h_coarse: Var) -> Var {
    let diff = g.sub(h_fine, h_coarse);
    let mix = g.mul(gate, diff);
    g.add(h_coarse, mix)
}

param_struct! {
    /// Heads occupy consecutive column blocks of the `k×k` projections.
    pub struct AttentionParams { w_q: P, w_k: P, w_v: P, w_o: P }
}

impl AttentionParams {
    pub fn init(rng: &mut SeededRng, hidden: usize) -> Self {
        Self {
            w_q: init_matrix(rng, hidden, hidden, 1.0),
            w_k: init_matrix(rng, hidden, hidden, 1.0),
            w_v: init_matrix(rng, hidden, hidden, 1.0),
            w_o: init_matrix(rng, hidden, hidden, 1.0),
        }
    }
}

/// Tape attention over fused rows `z` (`T×k`); returns the context rows and the raw attention node.
pub fn attention_rows(g: &mut Graph, z: Var, p: &AttentionParams<Var>, heads: usize, lookback: usize) -> (Var, Var) {
    let q = g.matmul(z, p.w_q);
    let k = g.matmul(z, p.w_k);
    let v = g.matmul(z, p.w_v);
    let att = g.local_attention(q, k, v, heads, lookback);
    (g.matmul(att, p.w_o), att)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOutput {
    pub context: Vec<f64>,
    /// Per-head weights over keys `t - len + 1 ..= t`.
    pub weights: Vec<Vec<f64>>,
    /// Set when the window was cut by the sequence start.
    pub truncated: bool,
}

/// Context vector at step `t` from fused history rows `0..=t`.
pub fn aga_attention(fused: &Tensor, t: usize, p: &AttentionParams, heads: usize, lookback: usize) -> Result<AttentionOutput> {
    let k = p.w_q.rows();
    if heads == 0 || k % heads != 0 {
        return Err(Error::InvalidArgument(format!("{heads} heads do not divide width {k}")));
    }
    if lookback == 0 {
        return Err(Error::InvalidArgument("lookback must be at least one step".into()));
    }
    if t >= fused.rows() {
        return Err(Error::InvalidArgument(format!("step {t} beyond history of {} rows", fused.rows())));
    }
    if fused.cols() != k {
        return Err(Error::Shape(format!("fused width {} differs from {k}", fused.cols())));
    }
    let start = t.saturating_sub(lookback);
    let mut window = Tensor::zeros(t + 1 - start, k);
    for (r, s) in (start..=t).enumerate() {
        window.row_mut(r).copy_from_slice(fused.row(s));
    }
    let mut g = Graph::new();
    let z = g.constant(window);
    let bound = crate::params::bind_constant(&mut g, p);
    let (ctx, att) = attention_rows(&mut g, z, &bound, heads, lookback);
    let last = t - start;
    let aw = g.attention_weights(att).expect("attention node");
    let weights = (0..heads).map(|h| aw.step(last, h).to_vec()).collect();
    Ok(AttentionOutput { context: g.value(ctx).row(last).to_vec(), weights, truncated: t < lookback })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::grad_check_tree;
    use proptest::prelude::*;

    fn frame(mid: f64, arrivals: u32) -> FeatureFrame {
        FeatureFrame { timestamp_ns: 0, x: vec![1.0, 2.0], mid, arrival_count: arrivals, true_regime: None, warmup: false }
    }

    #[test]
    fn signal_examples() {
        let constant = vec![frame(5.0, 0); 10];
        assert_eq!(adaptation_signals(&constant, 0.1).unwrap().sigma, 0.0);
        let s = adaptation_signals(&[frame(0.0, 4), frame(2.0, 3), frame(6.0, 2), frame(6.0, 1)], 0.5).unwrap();
        assert!((s.lambda - 5.0).abs() < 1e-12);
        let s = adaptation_signals(&[frame(0.0, 0), frame(2.0, 0), frame(6.0, 0)], 0.5).unwrap();
        assert!((s.sigma - 1.0).abs() < 1e-12);
        assert_eq!(s.window_mean, vec![1.0, 2.0]);
        assert!(adaptation_signals(&[], 0.1).is_err());
    }

    #[test]
    fn series_matches_window_op() {
        let mut rng = SeededRng::new(1);
        let frames: Vec<FeatureFrame> =
            (0..50).map(|i| frame(100.0 + (i as f64 * 0.7).sin() + rng.normal(), rng.below(9) as u32)).collect();
        let mid: Vec<f64> = frames.iter().map(|f| f.mid).collect();
        let arr: Vec<u32> = frames.iter().map(|f| f.arrival_count).collect();
        let (sig, lam) = signal_series(&mid, &arr, 8, 0.1).unwrap();
        for t in 7..50 {
            let s = adaptation_signals(&frames[t - 7..=t], 0.1).unwrap();
            assert!((s.sigma - sig[t]).abs() < 1e-12);
            assert!((s.lambda - lam[t]).abs() < 1e-9);
        }
    }

    #[test]
    fn gate_examples() {
        let zero = GateParams { w_g: Tensor::zeros(3, 2), b_g: Tensor::zeros(1, 3) };
        assert_eq!(gate(&[1.3, -2.0], &zero).unwrap(), vec![0.5; 3]);
        let ln3 = GateParams { w_g: Tensor::zeros(1, 2), b_g: Tensor::scalar(3f64.ln()) };
        assert!((gate(&[0.0, 0.0], &ln3).unwrap()[0] - 0.75).abs() < 1e-15);
        let mono = GateParams { w_g: Tensor::row_vector(vec![1.0, 0.0]), b_g: Tensor::scalar(0.0) };
        let mut prev = 0.0;
        for i in -20..20 {
            let v = gate(&[i as f64 * 0.3, 0.7], &mono).unwrap()[0];
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn gate_nondecreasing_in_sigma_with_positive_column() {
        let mut rng = SeededRng::new(2);
        let mut p = GateParams::init(&mut rng, 8, 2);
        for i in 0..8 {
            let w = p.w_g.get(i, 0).abs();
            p.w_g.set(i, 0, w);
        }
        let mut prev = gate(&[-5.0, 0.3], &p).unwrap();
        for s in 1..=100 {
            let cur = gate(&[-5.0 + s as f64 * 0.1, 0.3], &p).unwrap();
            assert!(cur.iter().zip(&prev).all(|(c, p)| c >= p));
            prev = cur;
        }
    }

    #[test]
    fn fuse_examples() {
        let f = [1.0, -2.0, 3.0];
        let c = [0.0, 4.0, -1.0];
        let near_one = 1.0 - 1e-12;
        let out = fuse(&[near_one; 3], &f, &c).unwrap();
        assert!(out.iter().zip(&f).all(|(a, b)| (a - b).abs() < 1e-10));
        assert_eq!(fuse(&[0.5; 3], &f, &c).unwrap(), vec![0.5, 1.0, 1.0]);
        assert_eq!(fuse(&[0.1, 0.7, 0.3], &f, &f).unwrap(), f.to_vec());
        assert!(fuse(&[0.5; 2], &f, &c).is_err());
    }

    proptest! {
        #[test]
        fn fuse_is_convex(g in proptest::collection::vec(0.0f64..1.0, 5),
                          f in proptest::collection::vec(-10.0f64..10.0, 5),
                          c in proptest::collection::vec(-10.0f64..10.0, 5)) {
            let out = fuse(&g, &f, &c).unwrap();
            for i in 0..5 {
                prop_assert!(out[i] >= f[i].min(c[i]) - 1e-12 && out[i] <= f[i].max(c[i]) + 1e-12);
            }
        }
    }

    fn identity_attention(k: usize) -> AttentionParams {
        AttentionParams { w_q: Tensor::identity(k), w_k: Tensor::identity(k), w_v: Tensor::identity(k), w_o: Tensor::identity(k) }
    }

    #[test]
    fn attention_examples() {
        let p = identity_attention(4);
        let z = Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let out = aga_attention(&z, 0, &p, 2, 8).unwrap();
        assert_eq!(out.context, vec![1.0, 2.0, 3.0, 4.0]);
        assert!(out.weights.iter().all(|w| w == &vec![1.0]));
        assert!(out.truncated);

        // identical keys: W_K = 0 makes every score equal
        let mut rng = SeededRng::new(3);
        let z = Tensor::from_vec(12, 4, (0..48).map(|_| rng.normal()).collect()).unwrap();
        let p = AttentionParams { w_k: Tensor::zeros(4, 4), ..AttentionParams::init(&mut rng, 4) };
        let l = 5;
        let out = aga_attention(&z, 11, &p, 2, l).unwrap();
        for w in &out.weights {
            assert!(w.iter().all(|x| (x - 1.0 / (l + 1) as f64).abs() < 1e-12));
        }
        let mut mean_v = vec![0.0; 4];
        for s in 11 - l..=11 {
            for (m, v) in mean_v.iter_mut().zip(Tensor::row_vector(z.row(s).to_vec()).matmul(&p.w_v).data()) {
                *m += v / (l + 1) as f64;
            }
        }
        let expected = Tensor::row_vector(mean_v).matmul(&p.w_o);
        assert!(out.context.iter().zip(expected.data()).all(|(a, b)| (a - b).abs() < 1e-12));

        // one head, d_k = 1: scores {0, ln 2}
        let p = AttentionParams {
            w_q: Tensor::scalar(1.0),
            w_k: Tensor::scalar(1.0),
            w_v: Tensor::scalar(1.0),
            w_o: Tensor::scalar(1.0),
        };
        let ln2 = 2f64.ln();
        let z = Tensor::col_vector(vec![0.0, ln2.sqrt()]);
        let out = aga_attention(&z, 1, &p, 1, 4).unwrap();
        assert!((out.weights[0][0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((out.weights[0][1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn attention_is_causal_and_normalized() {
        let mut rng = SeededRng::new(4);
        let p = AttentionParams::init(&mut rng, 8);
        let z = Tensor::from_vec(40, 8, (0..320).map(|_| rng.normal()).collect()).unwrap();
        let base = aga_attention(&z, 20, &p, 4, 6).unwrap();
        for w in &base.weights {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12 && w.iter().all(|x| *x >= 0.0));
        }
        let mut zp = z.clone();
        for r in 21..40 {
            zp.row_mut(r).iter_mut().for_each(|v| *v += 3.0);
        }
        assert_eq!(aga_attention(&zp, 20, &p, 4, 6).unwrap(), base);
        assert!(aga_attention(&z, 40, &p, 4, 6).is_err());
    }

    param_struct! {
        pub struct AgaPath { w_g: P, b_g: P, w_q: P, w_k: P, w_v: P, w_o: P }
    }

    #[test]
    fn aga_path_grad_check() {
        let mut rng = SeededRng::new(5);
        let gp = GateParams::init(&mut rng, 4, 2);
        let ap = AttentionParams::init(&mut rng, 4);
        let tree = AgaPath { w_g: gp.w_g, b_g: gp.b_g, w_q: ap.w_q, w_k: ap.w_k, w_v: ap.w_v, w_o: ap.w_o };
        let s = Tensor::from_vec(9, 2, (0..18).map(|_| rng.normal()).collect()).unwrap();
        let hf = Tensor::from_vec(9, 4, (0..36).map(|_| rng.normal()).collect()).unwrap();
        let hc = Tensor::from_vec(9, 4, (0..36).map(|_| rng.normal()).collect()).unwrap();
        let report = grad_check_tree(&tree, 1e-6, |g, p| {
            let sv = g.constant(s.clone());
            let gv = gate_rows(g, sv, &GateParams { w_g: p.w_g, b_g: p.b_g });
            let f = g.constant(hf.clone());
            let c = g.constant(hc.clone());
            let z = fuse_rows(g, gv, f, c);
            let (ctx, _) = attention_rows(g, z, &AttentionParams { w_q: p.w_q, w_k: p.w_k, w_v: p.w_v, w_o: p.w_o }, 2, 3);
            let sq = g.tanh(ctx);
            Ok(g.sum_all(sq))
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }
}
