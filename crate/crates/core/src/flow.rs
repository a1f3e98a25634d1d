//! Conditional affine-coupling flows and the Gaussian emission baseline.

use std::f64::consts::PI;

use crate::params::{init_matrix, join, param_struct, ParamTree};
use crate::rng::SeededRng;
use crate::tape::{Graph, Var};
use crate::tensor::Tensor;
use crate::{Error, Result};

param_struct! {
    /// Scale (`s`) and translation (`t`) nets, each `in → hidden → D` with tanh.
    pub struct CouplingParams {
        w1_s: P, b1_s: P, w2_s: P, b2_s: P,
        w1_t: P, b1_t: P, w2_t: P, b2_t: P,
    }
}

/// Layer stacks, one per state, or a single shared stack with a state embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowParams<P = Tensor> {
    pub stacks: Vec<Vec<CouplingParams<P>>>,
    pub embed: Option<P>,
}

impl<P> ParamTree<P> for FlowParams<P> {
    type Mapped<Q> = FlowParams<Q>;

    fn map_leaves<Q>(&self, prefix: &str, f: &mut dyn FnMut(&str, &P) -> Q) -> FlowParams<Q> {
        FlowParams {
            stacks: self
                .stacks
                .iter()
                .enumerate()
                .map(|(s, stack)| {
                    stack
                        .iter()
                        .enumerate()
                        .map(|(l, layer)| layer.map_leaves(&join(prefix, &format!("stack{s}.layer{l}")), f))
                        .collect()
                })
                .collect(),
            embed: self.embed.as_ref().map(|e| f(&join(prefix, "embed"), e)),
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &P)) {
        for (s, stack) in self.stacks.iter().enumerate() {
            for (l, layer) in stack.iter().enumerate() {
                layer.visit(&join(prefix, &format!("stack{s}.layer{l}")), f);
            }
        }
        if let Some(e) = &self.embed {
            f(&join(prefix, "embed"), e);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        for (s, stack) in self.stacks.iter_mut().enumerate() {
            for (l, layer) in stack.iter_mut().enumerate() {
                layer.visit_mut(&join(prefix, &format!("stack{s}.layer{l}")), f);
            }
        }
        if let Some(e) = &mut self.embed {
            f(&join(prefix, "embed"), e);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSpec {
    pub dim: usize,
    pub context: usize,
    pub states: usize,
    pub layers: usize,
    pub hidden: usize,
    pub clamp: f64,
    pub per_state_stacks: bool,
    pub embed_dim: usize,
    /// Nets see only state and context and transform every dimension.
    pub literal: bool,
}

impl FlowSpec {
    /// 1 on dimensions that condition layer `layer` (left unchanged), 0 on transformed ones.
    pub fn mask(&self, layer: usize) -> Vec<f64> {
        (0..self.dim).map(|d| if !self.literal && (d + layer) % 2 == 0 { 1.0 } else { 0.0 }).collect()
    }

    fn net_input(&self) -> usize {
        let u = if self.literal { 0 } else { self.dim };
        let e = if self.per_state_stacks { 0 } else { self.embed_dim };
        u + e + self.context
    }
}

impl FlowParams {
    /// Random hidden layers, zero output layers: the identity flow.
    pub fn init(rng: &mut SeededRng, spec: &FlowSpec) -> Self {
        let n_stacks = if spec.per_state_stacks { spec.states } else { 1 };
        let inp = spec.net_input();
        let layer = |rng: &mut SeededRng| CouplingParams {
            w1_s: init_matrix(rng, inp, spec.hidden, 1.0),
            b1_s: Tensor::zeros(1, spec.hidden),
            w2_s: Tensor::zeros(spec.hidden, spec.dim),
            b2_s: Tensor::zeros(1, spec.dim),
            w1_t: init_matrix(rng, inp, spec.hidden, 1.0),
            b1_t: Tensor::zeros(1, spec.hidden),
            w2_t: Tensor::zeros(spec.hidden, spec.dim),
            b2_t: Tensor::zeros(1, spec.dim),
        };
        let stacks = (0..n_stacks).map(|_| (0..spec.layers).map(|_| layer(rng)).collect()).collect();
        let embed = (!spec.per_state_stacks).then(|| init_matrix(rng, 1, spec.states * spec.embed_dim, 1.0).reshaped(spec.states, spec.embed_dim).expect("embed shape"));
        Self { stacks, embed }
    }
}

fn mlp(g: &mut Graph, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Var {
    let h = g.matmul(x, w1);
    let h = g.add_row(h, b1);
    let h = g.tanh(h);
    let o = g.matmul(h, w2);
    g.add_row(o, b2)
}

/// Batched flow evaluation for a single state on the tape.
pub struct FlowEval<'a> {
    pub spec: &'a FlowSpec,
    pub params: &'a FlowParams<Var>,
}

impl FlowEval<'_> {
    fn stack(&self, state: usize) -> &[CouplingParams<Var>] {
        let idx = if self.spec.per_state_stacks { state } else { 0 };
        &self.params.stacks[idx]
    }

    /// Conditioning block shared by every layer: `[embed_z; c]`.
    fn conditioner(&self, g: &mut Graph, state: usize, c: Var) -> Var {
        match self.params.embed {
            Some(embed) if !self.spec.per_state_stacks => {
                let rows = g.shape(c).0;
                let mut onehot = Tensor::zeros(rows, self.spec.states);
                for r in 0..rows {
                    onehot.set(r, state, 1.0);
                }
                let oh = g.constant(onehot);
                let e = g.matmul(oh, embed);
                g.concat_cols(&[e, c])
            }
            _ => c,
        }
    }

    fn scale_shift(&self, g: &mut Graph, layer: usize, p: &CouplingParams<Var>, fixed: Var, cond: Var) -> (Var, Var) {
        let input = if self.spec.literal { cond } else { g.concat_cols(&[fixed, cond]) };
        let raw_s = mlp(g, input, p.w1_s, p.b1_s, p.w2_s, p.b2_s);
        let raw_t = mlp(g, input, p.w1_t, p.b1_t, p.w2_t, p.b2_t);
        let free = g.constant(Tensor::row_vector(self.spec.mask(layer).iter().map(|m| 1.0 - m).collect()));
        let s = g.soft_clamp(raw_s, self.spec.clamp);
        let s = g.mul_row(s, free);
        let t = g.mul_row(raw_t, free);
        (s, t)
    }

    fn masked(&self, g: &mut Graph, layer: usize, v: Var) -> Var {
        let m = g.constant(Tensor::row_vector(self.spec.mask(layer)));
        g.mul_row(v, m)
    }

    /// One coupling layer, forward or inverse; returns the output and its log-det (`T×1`).
    pub fn apply_layer(&self, g: &mut Graph, layer: usize, state: usize, v: Var, cond: Var, inverse: bool) -> (Var, Var) {
        let p = &self.stack(state)[layer];
        let fixed = self.masked(g, layer, v);
        let (s, t) = self.scale_shift(g, layer, p, fixed, cond);
        if inverse {
            let shifted = g.sub(v, t);
            let neg = g.scale(s, -1.0);
            let ens = g.exp(neg);
            (g.mul(shifted, ens), g.sum_cols(neg))
        } else {
            let es = g.exp(s);
            let scaled = g.mul(v, es);
            (g.add(scaled, t), g.sum_cols(s))
        }
    }

    fn run(&self, g: &mut Graph, state: usize, v: Var, c: Var, inverse: bool) -> (Var, Var) {
        let cond = self.conditioner(g, state, c);
        let n = self.stack(state).len();
        let mut cur = v;
        let mut log_det = g.constant(Tensor::zeros(g.shape(v).0, 1));
        for i in 0..n {
            let layer = if inverse { n - 1 - i } else { i };
            let (out, ld) = self.apply_layer(g, layer, state, cur, cond, inverse);
            cur = out;
            log_det = g.add(log_det, ld);
        }
        (cur, log_det)
    }

    /// Base samples `u` (`T×D`) to data space; returns `(x, log_det T×1)`.
    pub fn forward(&self, g: &mut Graph, state: usize, u: Var, c: Var) -> (Var, Var) {
        self.run(g, state, u, c, false)
    }

    /// Data `x` back to base space; returns `(u, log_det_inverse T×1)`.
    pub fn inverse(&self, g: &mut Graph, state: usize, x: Var, c: Var) -> (Var, Var) {
        self.run(g, state, x, c, true)
    }

    /// Log-density of each row of `x` under `state` (`T×1`).
    pub fn log_prob(&self, g: &mut Graph, state: usize, x: Var, c: Var) -> Var {
        let (u, ld) = self.inverse(g, state, x, c);
        let base = std_normal_rows(g, u);
        g.add(base, ld)
    }
}

fn std_normal_rows(g: &mut Graph, u: Var) -> Var {
    let d = g.shape(u).1 as f64;
    let sq = g.square(u);
    let ss = g.sum_cols(sq);
    let half = g.scale(ss, -0.5);
    g.add_scalar(half, -0.5 * d * (2.0 * PI).ln())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmissionLogProb {
    pub value: f64,
    pub log_det: f64,
}

fn check_inputs(spec: &FlowSpec, v: &[f64], z: usize, c: &[f64]) -> Result<()> {
    if v.len() != spec.dim || c.len() != spec.context {
        return Err(Error::Shape(format!(
            "flow expects dim {} and context {}, got {} and {}",
            spec.dim,
            spec.context,
            v.len(),
            c.len()
        )));
    }
    if z >= spec.states {
        return Err(Error::InvalidArgument(format!("state {z} out of range for {} states", spec.states)));
    }
    Ok(())
}

/// Runs one layer at a time on a single row so failures can name the layer.
fn single_row(
    spec: &FlowSpec,
    params: &FlowParams,
    v: &[f64],
    z: usize,
    c: &[f64],
    inverse: bool,
) -> Result<(Vec<f64>, f64)> {
    check_inputs(spec, v, z, c)?;
    let mut g = Graph::new();
    let bound = crate::params::bind_constant(&mut g, params);
    let eval = FlowEval { spec, params: &bound };
    let cv = g.constant(Tensor::row_vector(c.to_vec()));
    let cond = eval.conditioner(&mut g, z, cv);
    let n = eval.stack(z).len();
    let mut cur = g.constant(Tensor::row_vector(v.to_vec()));
    let mut total = 0.0;
    for i in 0..n {
        let layer = if inverse { n - 1 - i } else { i };
        let (out, ld) = eval.apply_layer(&mut g, layer, z, cur, cond, inverse);
        let ld = g.scalar(ld);
        if !ld.is_finite() || !g.value(out).is_finite() {
            return Err(Error::Numeric(format!("flow layer {layer} produced a non-finite value")));
        }
        total += ld;
        cur = out;
    }
    Ok((g.value(cur).data().to_vec(), total))
}

pub fn flow_forward(u: &[f64], z: usize, c: &[f64], params: &FlowParams, spec: &FlowSpec) -> Result<(Vec<f64>, f64)> {
    single_row(spec, params, u, z, c, false)
}

pub fn flow_inverse(x: &[f64], z: usize, c: &[f64], params: &FlowParams, spec: &FlowSpec) -> Result<(Vec<f64>, f64)> {
    single_row(spec, params, x, z, c, true)
}

pub fn emission_logprob(x: &[f64], z: usize, c: &[f64], params: &FlowParams, spec: &FlowSpec) -> Result<EmissionLogProb> {
    let (u, log_det) = flow_inverse(x, z, c, params, spec)?;
    Ok(EmissionLogProb { value: crate::numerics::std_normal_logpdf(&u) + log_det, log_det })
}

param_struct! {
    /// Per-state linear maps from context to mean and log-variance.
    pub struct GaussianParams { w_mu: [P], b_mu: [P], w_lv: [P], b_lv: [P] }
}

impl GaussianParams {
    pub fn init(rng: &mut SeededRng, states: usize, context: usize, dim: usize) -> Self {
        let small = |rng: &mut SeededRng| init_matrix(rng, context, dim, 0.1);
        Self {
            w_mu: (0..states).map(|_| small(rng)).collect(),
            b_mu: vec![Tensor::zeros(1, dim); states],
            w_lv: (0..states).map(|_| small(rng)).collect(),
            b_lv: vec![Tensor::zeros(1, dim); states],
        }
    }
}

/// Diagonal Gaussian log-density rows for `state`.
pub fn gaussian_log_prob_rows(g: &mut Graph, p: &GaussianParams<Var>, state: usize, x: Var, c: Var) -> Var {
    let mu = g.matmul(c, p.w_mu[state]);
    let mu = g.add_row(mu, p.b_mu[state]);
    let lv = g.matmul(c, p.w_lv[state]);
    let lv = g.add_row(lv, p.b_lv[state]);
    let diff = g.sub(x, mu);
    let sq = g.square(diff);
    let neg = g.scale(lv, -1.0);
    let prec = g.exp(neg);
    let maha = g.mul(sq, prec);
    let terms = g.add(maha, lv);
    let s = g.sum_cols(terms);
    let half = g.scale(s, -0.5);
    let d = g.shape(x).1 as f64;
    g.add_scalar(half, -0.5 * d * (2.0 * PI).ln())
}

pub fn gaussian_emission_logprob(x: &[f64], z: usize, c: &[f64], p: &GaussianParams) -> Result<EmissionLogProb> {
    if z >= p.w_mu.len() {
        return Err(Error::InvalidArgument(format!("state {z} out of range for {} states", p.w_mu.len())));
    }
    if x.len() != p.w_mu[z].cols() || c.len() != p.w_mu[z].rows() {
        return Err(Error::Shape("gaussian emission dimensions do not match".into()));
    }
    let mut g = Graph::new();
    let bound = crate::params::bind_constant(&mut g, p);
    let xv = g.constant(Tensor::row_vector(x.to_vec()));
    let cv = g.constant(Tensor::row_vector(c.to_vec()));
    let lp = gaussian_log_prob_rows(&mut g, &bound, z, xv, cv);
    Ok(EmissionLogProb { value: g.scalar(lp), log_det: 0.0 })
}
