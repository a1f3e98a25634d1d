//! Context-conditioned, temperature-scaled transition model.

use crate::numerics::{sigmoid_scalar, softmax, softplus};
use crate::params::{init_matrix, join, param_struct, ParamTree};
use crate::rng::SeededRng;
use crate::tape::{Graph, Var};
use crate::tensor::{dot, Tensor};
use crate::{Error, Result};

param_struct! {
    /// Pair logits `(U_i v_j + a_i)·c + b_ij`; `w_u[i]` is `d × m_e`, `a[i]` is `1×d`.
    pub struct BilinearParams { w_u: [P], embed_v: P, a: [P], b_pair: P }
}

param_struct! {
    pub struct TemperatureParams { alpha_raw: P }
}

param_struct! {
    /// Gate blocks ordered reset, update, candidate.
    pub struct GruParams { w_x: P, w_h: P, b_x: P, b_h: P }
}

param_struct! {
    pub struct MlpParams { w1: P, b1: P, w2: P, b2: P }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionParams<P = Tensor> {
    pub bilinear: Option<BilinearParams<P>>,
    pub temperature: Option<TemperatureParams<P>>,
    pub gru: Option<GruParams<P>>,
    pub mlp: Option<MlpParams<P>>,
    pub init_logits: P,
}

impl<P> ParamTree<P> for TransitionParams<P> {
    type Mapped<Q> = TransitionParams<Q>;

    fn map_leaves<Q>(&self, prefix: &str, f: &mut dyn FnMut(&str, &P) -> Q) -> TransitionParams<Q> {
        TransitionParams {
            bilinear: self.bilinear.as_ref().map(|p| p.map_leaves(&join(prefix, "bilinear"), f)),
            temperature: self.temperature.as_ref().map(|p| p.map_leaves(&join(prefix, "temperature"), f)),
            gru: self.gru.as_ref().map(|p| p.map_leaves(&join(prefix, "gru"), f)),
            mlp: self.mlp.as_ref().map(|p| p.map_leaves(&join(prefix, "mlp"), f)),
            init_logits: f(&join(prefix, "init_logits"), &self.init_logits),
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &P)) {
        if let Some(p) = &self.bilinear {
            p.visit(&join(prefix, "bilinear"), f);
        }
        if let Some(p) = &self.temperature {
            p.visit(&join(prefix, "temperature"), f);
        }
        if let Some(p) = &self.gru {
            p.visit(&join(prefix, "gru"), f);
        }
        if let Some(p) = &self.mlp {
            p.visit(&join(prefix, "mlp"), f);
        }
        f(&join(prefix, "init_logits"), &self.init_logits);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        if let Some(p) = &mut self.bilinear {
            p.visit_mut(&join(prefix, "bilinear"), f);
        }
        if let Some(p) = &mut self.temperature {
            p.visit_mut(&join(prefix, "temperature"), f);
        }
        if let Some(p) = &mut self.gru {
            p.visit_mut(&join(prefix, "gru"), f);
        }
        if let Some(p) = &mut self.mlp {
            p.visit_mut(&join(prefix, "mlp"), f);
        }
        f(&join(prefix, "init_logits"), &mut self.init_logits);
    }
}

/// Which logit sources are active.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionSpec {
    pub states: usize,
    pub context: usize,
    pub embed_dim: usize,
    pub gru_hidden: usize,
    pub mlp_hidden: usize,
    pub bilinear: bool,
    pub recurrent: bool,
    pub learn_temperature: bool,
    pub alpha_init: f64,
    pub persistence_init: f64,
}

impl TransitionParams {
    pub fn init(rng: &mut SeededRng, spec: &TransitionSpec) -> Result<Self> {
        let k = spec.states;
        if k < 2 {
            return Err(Error::InvalidConfig("at least two hidden states are required".into()));
        }
        if !spec.bilinear && !spec.recurrent {
            return Err(Error::InvalidConfig("transitions need the bilinear or the recurrent term".into()));
        }
        if !(spec.alpha_init > 0.0) {
            return Err(Error::InvalidConfig("alpha_init must be positive".into()));
        }
        let d = spec.context;
        let mut b_pair = Tensor::zeros(1, k * k);
        for i in 0..k {
            b_pair.data_mut()[i * k + i] = spec.persistence_init;
        }
        let bilinear = spec.bilinear.then(|| BilinearParams {
            w_u: (0..k).map(|_| init_matrix(rng, d, spec.embed_dim, 0.1)).collect(),
            embed_v: init_matrix(rng, 1, k * spec.embed_dim, 1.0).reshaped(k, spec.embed_dim).expect("embed"),
            a: (0..k).map(|_| init_matrix(rng, d, 1, 0.1).transpose()).collect(),
            b_pair: b_pair.clone(),
        });
        let h = spec.gru_hidden;
        let gru = spec.recurrent.then(|| GruParams {
            w_x: init_matrix(rng, d, 3 * h, 1.0),
            w_h: init_matrix(rng, h, 3 * h, 1.0),
            b_x: Tensor::zeros(1, 3 * h),
            b_h: Tensor::zeros(1, 3 * h),
        });
        let mlp = spec.recurrent.then(|| MlpParams {
            w1: init_matrix(rng, h, spec.mlp_hidden, 1.0),
            b1: Tensor::zeros(1, spec.mlp_hidden),
            w2: init_matrix(rng, spec.mlp_hidden, k * k, 0.1),
            b2: if spec.bilinear { Tensor::zeros(1, k * k) } else { b_pair },
        });
        let temperature = spec
            .learn_temperature
            .then(|| TemperatureParams { alpha_raw: Tensor::scalar(inverse_softplus(spec.alpha_init)) });
        Ok(Self { bilinear, temperature, gru, mlp, init_logits: Tensor::zeros(1, k) })
    }

    pub fn states(&self) -> usize {
        self.init_logits.cols()
    }

    /// Current `α`, zero when the temperature is fixed.
    pub fn alpha(&self) -> f64 {
        self.temperature.as_ref().map_or(0.0, |t| softplus(t.alpha_raw.data()[0]))
    }

    pub fn initial_distribution(&self) -> Vec<f64> {
        softmax(self.init_logits.data(), 1.0).expect("finite initial logits")
    }
}

pub fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// `τ = 1 + α σ`.
pub fn temperature(sigma: f64, alpha: f64) -> Result<f64> {
    if !(sigma >= 0.0) || !(alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("temperature needs σ ≥ 0 and α ≥ 0, got {sigma}, {alpha}")));
    }
    Ok(1.0 + alpha * sigma)
}

/// `(U_i v_j + a_i)·c + b_ij`.
pub fn pair_logit(i: usize, j: usize, c: &[f64], p: &BilinearParams) -> Result<f64> {
    let k = p.embed_v.rows();
    if i >= k || j >= k {
        return Err(Error::InvalidArgument(format!("state pair ({i}, {j}) out of range for {k} states")));
    }
    if c.len() != p.w_u[i].rows() {
        return Err(Error::Shape(format!("context length {} differs from {}", c.len(), p.w_u[i].rows())));
    }
    let uv = p.w_u[i].matmul(&Tensor::col_vector(p.embed_v.row(j).to_vec()));
    let w: Vec<f64> = uv.data().iter().zip(p.a[i].data()).map(|(x, y)| x + y).collect();
    Ok(dot(&w, c) + p.b_pair.data()[i * k + j])
}

/// Softmax of one row of logits at temperature `tau`.
pub fn transition_row(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    softmax(logits, tau)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    pub probs: Tensor,
    pub tau: f64,
}

/// Full matrix for one step from the previous context, the normalized
/// volatility and an optional recurrent logit offset.
pub fn transition_matrix(c: &[f64], sigma: f64, offset: Option<&[f64]>, p: &TransitionParams) -> Result<TransitionMatrix> {
    let (logp, tau) = log_transition_matrix(c, sigma, offset, p)?;
    Ok(TransitionMatrix { probs: logp.map(f64::exp), tau })
}

/// Log-space form of [`transition_matrix`], with the temperature.
pub fn log_transition_matrix(c: &[f64], sigma: f64, offset: Option<&[f64]>, p: &TransitionParams) -> Result<(Tensor, f64)> {
    let k = p.states();
    let tau = temperature(sigma, p.alpha())?;
    let mut logp = Tensor::zeros(k, k);
    for i in 0..k {
        let mut row = vec![0.0; k];
        for (j, r) in row.iter_mut().enumerate() {
            if let Some(b) = &p.bilinear {
                *r += pair_logit(i, j, c, b)?;
            }
            if let Some(o) = offset {
                *r += o[i * k + j];
            }
        }
        let scaled: Vec<f64> = row.iter().map(|v| v / tau).collect();
        let norm = crate::numerics::logsumexp(&scaled);
        for (j, v) in scaled.iter().enumerate() {
            logp.set(i, j, v - norm);
        }
    }
    if !logp.is_finite() {
        return Err(Error::Numeric("transition logits are not finite".into()));
    }
    Ok((logp, tau))
}

/// GRU update followed by the offset perceptron.
pub fn context_update(c: &[f64], h_prev: &[f64], gru: &GruParams, mlp: &MlpParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = gru.w_h.rows();
    if c.len() != gru.w_x.rows() || h_prev.len() != h {
        return Err(Error::Shape("context update dimensions do not match".into()));
    }
    let xp = Tensor::row_vector(c.to_vec()).matmul(&gru.w_x).zip_map(&gru.b_x, |a, b| a + b);
    let hp = Tensor::row_vector(h_prev.to_vec()).matmul(&gru.w_h).zip_map(&gru.b_h, |a, b| a + b);
    let (xp, hp) = (xp.data(), hp.data());
    let mut out = vec![0.0; h];
    for j in 0..h {
        let r = sigmoid_scalar(xp[j] + hp[j]);
        let z = sigmoid_scalar(xp[h + j] + hp[h + j]);
        let n = (xp[2 * h + j] + r * hp[2 * h + j]).tanh();
        out[j] = (1.0 - z) * n + z * h_prev[j];
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("transition context state is not finite".into()));
    }
    let hidden = Tensor::row_vector(out.clone()).matmul(&mlp.w1).zip_map(&mlp.b1, |a, b| (a + b).tanh());
    let offset = hidden.matmul(&mlp.w2).zip_map(&mlp.b2, |a, b| a + b);
    Ok((out, offset.into_vec()))
}

/// GRU over the rows of `inputs`, from a zero state; row `t` is the state after input `t`.
pub fn gru_sequence(g: &mut Graph, inputs: Var, p: &GruParams<Var>) -> Var {
    let h = g.shape(p.w_h).0;
    let steps = g.shape(inputs).0;
    let xp = g.matmul(inputs, p.w_x);
    let xp = g.add_row(xp, p.b_x);
    let mut state = g.constant(Tensor::zeros(1, h));
    let mut rows = Vec::with_capacity(steps);
    for t in 0..steps {
        let x = g.slice_rows(xp, t, 1);
        let hp = g.matmul(state, p.w_h);
        let hp = g.add_row(hp, p.b_h);
        let xrz = g.slice_cols(x, 0, 2 * h);
        let hrz = g.slice_cols(hp, 0, 2 * h);
        let rz = g.add(xrz, hrz);
        let rz = g.sigmoid(rz);
        let r = g.slice_cols(rz, 0, h);
        let z = g.slice_cols(rz, h, h);
        let xn = g.slice_cols(x, 2 * h, h);
        let hn = g.slice_cols(hp, 2 * h, h);
        let rh = g.mul(r, hn);
        let n = g.add(xn, rh);
        let n = g.tanh(n);
        // (1 - z) n + z h = n + z (h - n)
        let diff = g.sub(state, n);
        let zd = g.mul(z, diff);
        state = g.add(n, zd);
        rows.push(state);
    }
    if rows.is_empty() {
        return g.constant(Tensor::zeros(0, h));
    }
    g.concat_rows(&rows)
}

pub fn mlp_rows(g: &mut Graph, x: Var, p: &MlpParams<Var>) -> Var {
    let h = g.matmul(x, p.w1);
    let h = g.add_row(h, p.b1);
    let h = g.tanh(h);
    let o = g.matmul(h, p.w2);
    g.add_row(o, p.b2)
}

/// `d × K²` matrix whose column `i·K + j` is `U_i v_j + a_i`.
pub fn pair_weights(g: &mut Graph, p: &BilinearParams<Var>) -> Var {
    let blocks: Vec<Var> = p
        .w_u
        .iter()
        .zip(&p.a)
        .map(|(&u, &a)| {
            let ut = g.transpose(u);
            let vu = g.matmul(p.embed_v, ut);
            let shifted = g.add_row(vu, a);
            g.transpose(shifted)
        })
        .collect();
    g.concat_cols(&blocks)
}

/// Log transition rows (`T×K²`) for contexts `ctx` (`T×d`), normalized
/// volatilities `sigma` and recurrent states `h_trans` (`T×h`, if enabled).
pub fn log_transition_rows(
    g: &mut Graph,
    p: &TransitionParams<Var>,
    ctx: Var,
    sigma: &[f64],
    h_trans: Option<Var>,
) -> Var {
    let t_len = g.shape(ctx).0;
    let k = g.shape(p.init_logits).1;
    let mut logits = None;
    if let Some(b) = &p.bilinear {
        let w = pair_weights(g, b);
        let l = g.matmul(ctx, w);
        logits = Some(g.add_row(l, b.b_pair));
    }
    if let (Some(mlp), Some(h)) = (&p.mlp, h_trans) {
        let off = mlp_rows(g, h, mlp);
        logits = Some(match logits {
            Some(l) => g.add(l, off),
            None => off,
        });
    }
    let mut logits = logits.expect("at least one transition term");
    if let Some(tp) = &p.temperature {
        let alpha = g.softplus(tp.alpha_raw);
        let s = g.constant(Tensor::col_vector(sigma.to_vec()));
        let scaled = g.scale_by(s, alpha);
        let tau = g.add_scalar(scaled, 1.0);
        logits = g.div_col(logits, tau);
    }
    let rows = g.reshape(logits, t_len * k, k);
    let lp = g.log_softmax_rows(rows);
    g.reshape(lp, t_len, k * k)
}
