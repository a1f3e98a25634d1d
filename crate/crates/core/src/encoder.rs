//! Fine (dilated causal convolution) and coarse (learnable wavelet + LSTM) pathways.

use crate::params::{init_matrix, param_struct};
use crate::rng::SeededRng;
use crate::tape::{analysis_matrix_value, Graph, Var};
use crate::tensor::Tensor;
use crate::{Error, Result};

param_struct! {
    /// Per-layer conv filters `(kernel·in) × out`, tap `j` reading lag `j·dilation`.
    pub struct FinePathParams { w: [P], b: [P] }
}

param_struct! {
    pub struct WaveletParams { filter: P }
}

param_struct! {
    /// Gate blocks ordered input, forget, output, candidate.
    pub struct LstmParams { w_x: P, w_h: P, b: P }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub dilations: Vec<usize>,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self { kernel: 5, dilations: vec![1, 2, 4, 8] }
    }
}

impl ConvSpec {
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel - 1) * self.dilations.iter().sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.dilations.is_empty() {
            return Err(Error::InvalidConfig("convolution needs a kernel and at least one dilation".into()));
        }
        for pair in self.dilations.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::InvalidConfig("dilations must be strictly increasing".into()));
            }
        }
        if self.dilations.iter().any(|d| !d.is_power_of_two()) {
            return Err(Error::InvalidConfig("dilations must be powers of two".into()));
        }
        Ok(())
    }
}

impl FinePathParams {
    pub fn init(rng: &mut SeededRng, spec: &ConvSpec, in_dim: usize, hidden: usize) -> Self {
        let mut w = Vec::new();
        let mut b = Vec::new();
        let mut c_in = in_dim;
        for _ in &spec.dilations {
            w.push(init_matrix(rng, spec.kernel * c_in, hidden, 2f64.sqrt()));
            b.push(Tensor::zeros(1, hidden));
            c_in = hidden;
        }
        Self { w, b }
    }
}

/// Tape form of the fine path: `x` is `T×m`, result `T×k` (row `t` only sees rows `≤ t`).
pub fn fine_path(g: &mut Graph, x: Var, p: &FinePathParams<Var>, spec: &ConvSpec) -> Result<Var> {
    if p.w.len() != spec.dilations.len() || p.b.len() != spec.dilations.len() {
        return Err(Error::Shape(format!(
            "fine path has {} layers but {} dilations",
            p.w.len(),
            spec.dilations.len()
        )));
    }
    let mut h = x;
    for (layer, &d) in spec.dilations.iter().enumerate() {
        let c_in = g.shape(h).1;
        let (wr, wc) = g.shape(p.w[layer]);
        if wr != spec.kernel * c_in || g.shape(p.b[layer]) != (1, wc) {
            return Err(Error::Shape(format!(
                "fine path layer {layer}: filter {wr}×{wc} does not fit {c_in} input channels with kernel {}",
                spec.kernel
            )));
        }
        let taps: Vec<Var> = (0..spec.kernel).map(|j| g.shift_rows(h, j * d)).collect();
        let stacked = g.concat_cols(&taps);
        let z = g.matmul(stacked, p.w[layer]);
        let z = g.add_row(z, p.b[layer]);
        h = g.relu(z);
    }
    Ok(h)
}

/// Fine-path outputs for every row of `x` (missing history is zero-padded).
pub fn dilated_causal_conv(x: &Tensor, params: &FinePathParams, spec: &ConvSpec) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let p = crate::params::bind_constant(&mut g, params);
    let out = fine_path(&mut g, xv, &p, spec)?;
    Ok(g.take_value(out))
}

/// Highpass partner `g[n] = (-1)^n h[L-1-n]`.
pub fn qmf_highpass(h: &[f64]) -> Vec<f64> {
    let l = h.len();
    (0..l).map(|n| if n % 2 == 0 { h[l - 1 - n] } else { -h[l - 1 - n] }).collect()
}

/// `L×L` matrix `Q` with `h · Q = qmf_highpass(h)`.
fn qmf_matrix(l: usize) -> Tensor {
    let mut q = Tensor::zeros(l, l);
    for n in 0..l {
        q.set(l - 1 - n, n, if n % 2 == 0 { 1.0 } else { -1.0 });
    }
    q
}

/// Haar lowpass padded with zeros to length `len`.
pub fn haar_filter(len: usize) -> Vec<f64> {
    let mut h = vec![0.0; len.max(2)];
    h[0] = std::f64::consts::FRAC_1_SQRT_2;
    h[1] = std::f64::consts::FRAC_1_SQRT_2;
    h
}

#[derive(Clone, Debug, PartialEq)]
pub struct DwtCoeffs {
    /// Final-level approximation.
    pub approx: Vec<f64>,
    /// Detail coefficients, finest level first.
    pub details: Vec<Vec<f64>>,
    /// Samples prepended by reflection to reach a multiple of `2^levels`.
    pub padded: usize,
}

/// Periodic multi-level analysis with lowpass `h` and its mirror highpass.
pub fn learnable_dwt(x: &[f64], h: &[f64], levels: usize) -> Result<DwtCoeffs> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("wavelet input is empty".into()));
    }
    if h.len() > x.len() {
        return Err(Error::InvalidArgument(format!(
            "wavelet filter length {} exceeds window {}",
            h.len(),
            x.len()
        )));
    }
    let block = 1usize << levels;
    let padded = (block - x.len() % block) % block;
    let n = x.len();
    let mut signal: Vec<f64> = (0..padded)
        .map(|i| {
            // reflect about the first sample without repeating it
            let period = 2 * (n - 1).max(1);
            let k = (padded - i) % period;
            x[if k < n { k } else { period - k }]
        })
        .collect();
    signal.extend_from_slice(x);
    let g = qmf_highpass(h);
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let len = signal.len();
        let row = Tensor::row_vector(signal);
        let a = row.matmul(&analysis_matrix_value(h, len));
        let d = row.matmul(&analysis_matrix_value(&g, len));
        details.push(d.into_vec());
        signal = a.into_vec();
    }
    Ok(DwtCoeffs { approx: signal, details, padded })
}

/// Soft filter-bank penalty `(‖h‖₂ − 1)² + (Σg)²`.
pub fn wavelet_penalty(g: &mut Graph, filter: Var) -> Var {
    let l = g.shape(filter).1;
    let sq = g.square(filter);
    let norm2 = g.sum_all(sq);
    let norm = g.sqrt(norm2);
    let dev = g.add_scalar(norm, -1.0);
    let dev2 = g.square(dev);
    let q = g.constant(qmf_matrix(l));
    let hp = g.matmul(filter, q);
    let s = g.sum_all(hp);
    let s2 = g.square(s);
    g.add(dev2, s2)
}

pub fn wavelet_penalty_value(h: &[f64]) -> f64 {
    let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    let s: f64 = qmf_highpass(h).iter().sum();
    (norm - 1.0).powi(2) + s * s
}

/// Rows of `windows` (`B×N`) through `levels` of analysis; returns the final
/// approximation and, if requested, the first-level details.
pub fn dwt_rows(g: &mut Graph, windows: Var, filter: Var, levels: usize, with_details: bool) -> (Var, Option<Var>) {
    let l = g.shape(filter).1;
    let q = g.constant(qmf_matrix(l));
    let high = g.matmul(filter, q);
    let mut a = windows;
    let mut d1 = None;
    for level in 0..levels {
        let n = g.shape(a).1;
        if level == 0 && with_details {
            let mg = g.analysis_matrix(high, n);
            d1 = Some(g.matmul(a, mg));
        }
        let mh = g.analysis_matrix(filter, n);
        a = g.matmul(a, mh);
    }
    (a, d1)
}

impl LstmParams {
    pub fn init(rng: &mut SeededRng, input: usize, hidden: usize) -> Self {
        let mut b = Tensor::zeros(1, 4 * hidden);
        for j in hidden..2 * hidden {
            b.data_mut()[j] = 1.0;
        }
        Self { w_x: init_matrix(rng, input, 4 * hidden, 1.0), w_h: init_matrix(rng, hidden, 4 * hidden, 1.0), b }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.rows()
    }
}

/// One LSTM update.
pub fn lstm_step(a: &[f64], h_prev: &[f64], c_prev: &[f64], p: &LstmParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = p.hidden();
    if a.len() != p.w_x.rows() || h_prev.len() != k || c_prev.len() != k || p.w_x.cols() != 4 * k || p.b.cols() != 4 * k {
        return Err(Error::Shape(format!(
            "lstm expects input {} and state {k}, got {} / {} / {}",
            p.w_x.rows(),
            a.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    let z = Tensor::row_vector(a.to_vec())
        .matmul(&p.w_x)
        .zip_map(&Tensor::row_vector(h_prev.to_vec()).matmul(&p.w_h), |x, y| x + y)
        .zip_map(&p.b, |x, y| x + y);
    let z = z.data();
    let sig = crate::numerics::sigmoid_scalar;
    let mut h = vec![0.0; k];
    let mut c = vec![0.0; k];
    for j in 0..k {
        let i = sig(z[j]);
        let f = sig(z[k + j]);
        let o = sig(z[2 * k + j]);
        let cand = z[3 * k + j].tanh();
        c[j] = f * c_prev[j] + i * cand;
        h[j] = o * c[j].tanh();
    }
    if h.iter().chain(&c).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("lstm state is not finite".into()));
    }
    Ok((h, c))
}

/// Runs an LSTM from zero state over the rows of `inputs` (`B×in`), returning `B×k` hidden states.
pub fn lstm_sequence(g: &mut Graph, inputs: Var, p: &LstmParams<Var>) -> Var {
    let k = g.shape(p.w_h).0;
    let steps = g.shape(inputs).0;
    let proj = g.matmul(inputs, p.w_x);
    let proj = g.add_row(proj, p.b);
    let mut h = g.constant(Tensor::zeros(1, k));
    let mut c = g.constant(Tensor::zeros(1, k));
    let mut hs = Vec::with_capacity(steps);
    for t in 0..steps {
        let xt = g.slice_rows(proj, t, 1);
        let rec = g.matmul(h, p.w_h);
        let z = g.add(xt, rec);
        let ifo = g.slice_cols(z, 0, 3 * k);
        let ifo = g.sigmoid(ifo);
        let cand = g.slice_cols(z, 3 * k, k);
        let cand = g.tanh(cand);
        let i = g.slice_cols(ifo, 0, k);
        let f = g.slice_cols(ifo, k, k);
        let o = g.slice_cols(ifo, 2 * k, k);
        let keep = g.mul(f, c);
        let write = g.mul(i, cand);
        c = g.add(keep, write);
        let tc = g.tanh(c);
        h = g.mul(o, tc);
        hs.push(h);
    }
    if hs.is_empty() {
        return g.constant(Tensor::zeros(0, k));
    }
    g.concat_rows(&hs)
}

/// Layout of the coarse pathway.
#[derive(Clone, Debug, PartialEq)]
pub struct CoarseSpec {
    pub window: usize,
    pub stride: usize,
    pub levels: usize,
    pub channels: Vec<usize>,
    pub with_details: bool,
}

impl CoarseSpec {
    pub fn lstm_input(&self) -> usize {
        let approx = self.window >> self.levels;
        self.channels.len() * (approx + if self.with_details { self.window / 2 } else { 0 })
    }

    pub fn validate(&self, feature_dim: usize, filter_len: usize) -> Result<()> {
        let block = 1usize << self.levels;
        if self.levels == 0 || self.window == 0 || self.window % block != 0 {
            return Err(Error::InvalidConfig(format!(
                "coarse window {} must be a positive multiple of 2^{}",
                self.window, self.levels
            )));
        }
        if (self.window >> (self.levels - 1)) < filter_len {
            return Err(Error::InvalidConfig("wavelet filter longer than the deepest level".into()));
        }
        if self.stride == 0 || self.channels.is_empty() {
            return Err(Error::InvalidConfig("coarse path needs a stride and at least one channel".into()));
        }
        if let Some(c) = self.channels.iter().find(|&&c| c >= feature_dim) {
            return Err(Error::InvalidConfig(format!("coarse channel {c} out of range for {feature_dim} features")));
        }
        Ok(())
    }

    /// Relative rows of `0..len` that close a block when row 0 sits at absolute index `offset`.
    pub fn block_ends(&self, offset: usize, len: usize) -> Vec<usize> {
        (0..len).filter(|&t| t + 1 >= self.window && (offset + t + 1) % self.stride == 0).collect()
    }
}

/// Tape form of the coarse path: block windows of `x` through the DWT and
/// LSTM, held until the next block closes. Rows before the first block are zero.
pub fn coarse_path(
    g: &mut Graph,
    x: &Tensor,
    offset: usize,
    filter: Var,
    lstm: &LstmParams<Var>,
    spec: &CoarseSpec,
) -> Var {
    let k = g.shape(lstm.w_h).0;
    let t_len = x.rows();
    let ends = spec.block_ends(offset, t_len);
    if ends.is_empty() {
        return g.constant(Tensor::zeros(t_len, k));
    }
    let n = spec.window;
    let c = spec.channels.len();
    let mut win = Tensor::zeros(ends.len() * c, n);
    for (b, &e) in ends.iter().enumerate() {
        for (ci, &ch) in spec.channels.iter().enumerate() {
            let row = win.row_mut(b * c + ci);
            for (i, r) in (e + 1 - n..=e).enumerate() {
                row[i] = x.get(r, ch);
            }
        }
    }
    let win = g.constant(win);
    let (a, d1) = dwt_rows(g, win, filter, spec.levels, spec.with_details);
    let approx_len = n >> spec.levels;
    let a = g.reshape(a, ends.len(), c * approx_len);
    let input = match d1 {
        Some(d) => {
            let d = g.reshape(d, ends.len(), c * n / 2);
            g.concat_cols(&[a, d])
        }
        None => a,
    };
    let hs = lstm_sequence(g, input, lstm);
    let mut idx = Vec::with_capacity(t_len);
    let mut next = 0;
    let mut current = None;
    for t in 0..t_len {
        while next < ends.len() && ends[next] <= t {
            current = Some(next);
            next += 1;
        }
        idx.push(current);
    }
    g.gather_rows(hs, idx)
}

/// Fine and coarse outputs at a single step.
#[derive(Clone, Debug, PartialEq)]
pub struct PathFeatures {
    pub h_fine: Vec<f64>,
    pub h_coarse: Vec<f64>,
}
