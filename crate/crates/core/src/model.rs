//! The composed model: encoders, gate, attention, emissions, transitions and
//! the classification head, evaluated on the tape over contiguous row ranges.

use serde::{Deserialize, Serialize};

use crate::attention::{attention_rows, fuse_rows, gate_rows, signal_series, AttentionParams, GateParams, SignalNormalizer};
use crate::data::Dataset;
use crate::encoder::{coarse_path, fine_path, haar_filter, wavelet_penalty, CoarseSpec, ConvSpec, FinePathParams, LstmParams, WaveletParams};
use crate::flow::{gaussian_log_prob_rows, FlowEval, FlowParams, FlowSpec, GaussianParams};
use crate::hmm;
use crate::numerics::{entropy, mean};
use crate::params::{bind, init_matrix, is_decayed, join, param_struct, ParamTree};
use crate::rng::SeededRng;
use crate::tape::{Graph, Var};
use crate::tensor::Tensor;
use crate::transitions::{gru_sequence, log_transition_rows, TransitionParams, TransitionSpec};
use crate::{Error, Result};

/// Component switches for ablation runs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    pub no_aga: bool,
    pub no_dilated: bool,
    pub no_wavelet_lstm: bool,
    pub gaussian_emissions: bool,
    pub fixed_transitions: bool,
    pub literal_eq14: bool,
}

impl AblationFlags {
    pub const NAMES: [&'static str; 6] =
        ["no_aga", "no_dilated", "no_wavelet_lstm", "gaussian_emissions", "fixed_transitions", "literal_eq14"];

    /// Turns on a flag by name (dashes and underscores are interchangeable).
    pub fn enable(&mut self, name: &str) -> Result<()> {
        match name.trim().replace('-', "_").as_str() {
            "no_aga" => self.no_aga = true,
            "no_dilated" => self.no_dilated = true,
            "no_wavelet_lstm" => self.no_wavelet_lstm = true,
            "gaussian_emissions" => self.gaussian_emissions = true,
            "fixed_transitions" => self.fixed_transitions = true,
            "literal_eq14" => self.literal_eq14 = true,
            other => return Err(Error::InvalidConfig(format!("unknown ablation flag '{other}'"))),
        }
        Ok(())
    }

    pub fn active(&self) -> Vec<&'static str> {
        let on = [
            self.no_aga,
            self.no_dilated,
            self.no_wavelet_lstm,
            self.gaussian_emissions,
            self.fixed_transitions,
            self.literal_eq14,
        ];
        Self::NAMES.iter().zip(on).filter(|(_, b)| *b).map(|(n, _)| *n).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionLogits {
    /// Recurrent offsets added to the bilinear pair logits.
    #[default]
    Augment,
    /// Recurrent logits alone.
    Replace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub states: usize,
    pub hidden: usize,
    pub heads: usize,
    pub lookback: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub wavelet_levels: usize,
    pub wavelet_filter_len: usize,
    pub coarse_window: usize,
    pub coarse_stride: usize,
    /// Feature columns fed to the coarse pathway.
    pub coarse_channels: Vec<usize>,
    pub coarse_details: bool,
    pub flow_layers: usize,
    pub flow_hidden: usize,
    pub scale_clamp: f64,
    pub per_state_stacks: bool,
    pub state_embed_dim: usize,
    pub transition_embed_dim: usize,
    pub gru_hidden: usize,
    pub mlp_hidden: usize,
    pub transition_logits: TransitionLogits,
    pub alpha_init: f64,
    /// Initial diagonal bias of the transition logits.
    pub persistence_init: f64,
    pub signal_window: usize,
    /// Extra feature columns appended to the gate input after σ and λ.
    pub gate_features: Vec<usize>,
    pub ablations: AblationFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            states: 4,
            hidden: 32,
            heads: 4,
            lookback: 32,
            kernel: 5,
            dilations: vec![1, 2, 4, 8],
            wavelet_levels: 3,
            wavelet_filter_len: 4,
            coarse_window: 32,
            coarse_stride: 8,
            coarse_channels: vec![1, 3, 4, 5],
            coarse_details: false,
            flow_layers: 4,
            flow_hidden: 16,
            scale_clamp: 5.0,
            per_state_stacks: true,
            state_embed_dim: 4,
            transition_embed_dim: 4,
            gru_hidden: 16,
            mlp_hidden: 16,
            transition_logits: TransitionLogits::Augment,
            alpha_init: 0.1,
            persistence_init: 4.0,
            signal_window: 20,
            gate_features: Vec::new(),
            ablations: AblationFlags::default(),
        }
    }
}

impl ModelConfig {
    pub fn conv_spec(&self) -> ConvSpec {
        ConvSpec { kernel: self.kernel, dilations: self.dilations.clone() }
    }

    pub fn coarse_spec(&self) -> CoarseSpec {
        CoarseSpec {
            window: self.coarse_window,
            stride: self.coarse_stride,
            levels: self.wavelet_levels,
            channels: self.coarse_channels.clone(),
            with_details: self.coarse_details,
        }
    }

    pub fn flow_spec(&self, feature_dim: usize) -> FlowSpec {
        FlowSpec {
            dim: feature_dim,
            context: self.hidden,
            states: self.states,
            layers: self.flow_layers,
            hidden: self.flow_hidden,
            clamp: self.scale_clamp,
            per_state_stacks: self.per_state_stacks,
            embed_dim: self.state_embed_dim,
            literal: self.ablations.literal_eq14,
        }
    }

    pub fn transition_spec(&self) -> TransitionSpec {
        let fixed = self.ablations.fixed_transitions;
        TransitionSpec {
            states: self.states,
            context: self.hidden,
            embed_dim: self.transition_embed_dim,
            gru_hidden: self.gru_hidden,
            mlp_hidden: self.mlp_hidden,
            bilinear: fixed || self.transition_logits == TransitionLogits::Augment,
            recurrent: !fixed,
            learn_temperature: !fixed,
            alpha_init: self.alpha_init,
            persistence_init: self.persistence_init,
        }
    }

    pub fn uses_fine(&self) -> bool {
        !self.ablations.no_dilated
    }

    pub fn uses_coarse(&self) -> bool {
        !self.ablations.no_wavelet_lstm
    }

    pub fn uses_gate(&self) -> bool {
        !self.ablations.no_aga && self.uses_fine() && self.uses_coarse()
    }

    pub fn gate_inputs(&self) -> usize {
        2 + self.gate_features.len()
    }

    /// Leading rows whose encoder inputs are incomplete; excluded from every loss and output.
    pub fn warmup(&self) -> usize {
        let mut w = self.signal_window;
        if self.uses_fine() {
            w = w.max(self.conv_spec().receptive_field());
        }
        if self.uses_coarse() {
            w = w.max(self.coarse_window + self.coarse_stride);
        }
        if !self.ablations.no_aga {
            w = w.max(self.lookback + 1);
        }
        w + 1
    }

    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.states < 2 {
            return bad("states must be at least 2".into());
        }
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return bad(format!("hidden size {} must be a positive multiple of heads {}", self.hidden, self.heads));
        }
        if self.lookback == 0 {
            return bad("lookback must be at least 1".into());
        }
        if !self.uses_fine() && !self.uses_coarse() {
            return bad("no_dilated and no_wavelet_lstm together leave no encoder".into());
        }
        if self.uses_fine() {
            self.conv_spec().validate()?;
        }
        if self.uses_coarse() {
            self.coarse_spec().validate(feature_dim, self.wavelet_filter_len)?;
            if self.wavelet_filter_len < 2 || self.wavelet_filter_len % 2 != 0 {
                return bad("wavelet filter length must be even and at least 2".into());
            }
        }
        if self.flow_layers == 0 || self.flow_hidden == 0 || !(self.scale_clamp > 0.0) {
            return bad("flow needs layers, hidden units and a positive clamp".into());
        }
        if self.signal_window < 2 {
            return bad("signal window must be at least 2".into());
        }
        if let Some(c) = self.gate_features.iter().find(|&&c| c >= feature_dim) {
            return bad(format!("gate feature column {c} out of range for {feature_dim} features"));
        }
        if feature_dim == 0 {
            return bad("dataset has no feature columns".into());
        }
        Ok(())
    }
}

param_struct! {
    pub struct ClassifierParams { w: P, b: P }
}

/// Every trainable tensor of the model; disabled components are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<P = Tensor> {
    pub fine: Option<FinePathParams<P>>,
    pub wavelet: Option<WaveletParams<P>>,
    pub lstm: Option<LstmParams<P>>,
    pub gate: Option<GateParams<P>>,
    pub attention: Option<AttentionParams<P>>,
    pub flow: Option<FlowParams<P>>,
    pub gaussian: Option<GaussianParams<P>>,
    pub transitions: TransitionParams<P>,
    pub classifier: ClassifierParams<P>,
}

impl<P> ParamTree<P> for ModelParams<P> {
    type Mapped<Q> = ModelParams<Q>;

    fn map_leaves<Q>(&self, prefix: &str, f: &mut dyn FnMut(&str, &P) -> Q) -> ModelParams<Q> {
        ModelParams {
            fine: self.fine.as_ref().map(|p| p.map_leaves(&join(prefix, "fine"), f)),
            wavelet: self.wavelet.as_ref().map(|p| p.map_leaves(&join(prefix, "wavelet"), f)),
            lstm: self.lstm.as_ref().map(|p| p.map_leaves(&join(prefix, "lstm"), f)),
            gate: self.gate.as_ref().map(|p| p.map_leaves(&join(prefix, "gate"), f)),
            attention: self.attention.as_ref().map(|p| p.map_leaves(&join(prefix, "attention"), f)),
            flow: self.flow.as_ref().map(|p| p.map_leaves(&join(prefix, "flow"), f)),
            gaussian: self.gaussian.as_ref().map(|p| p.map_leaves(&join(prefix, "gaussian"), f)),
            transitions: self.transitions.map_leaves(&join(prefix, "transitions"), f),
            classifier: self.classifier.map_leaves(&join(prefix, "classifier"), f),
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &P)) {
        if let Some(p) = &self.fine {
            p.visit(&join(prefix, "fine"), f);
        }
        if let Some(p) = &self.wavelet {
            p.visit(&join(prefix, "wavelet"), f);
        }
        if let Some(p) = &self.lstm {
            p.visit(&join(prefix, "lstm"), f);
        }
        if let Some(p) = &self.gate {
            p.visit(&join(prefix, "gate"), f);
        }
        if let Some(p) = &self.attention {
            p.visit(&join(prefix, "attention"), f);
        }
        if let Some(p) = &self.flow {
            p.visit(&join(prefix, "flow"), f);
        }
        if let Some(p) = &self.gaussian {
            p.visit(&join(prefix, "gaussian"), f);
        }
        self.transitions.visit(&join(prefix, "transitions"), f);
        self.classifier.visit(&join(prefix, "classifier"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        if let Some(p) = &mut self.fine {
            p.visit_mut(&join(prefix, "fine"), f);
        }
        if let Some(p) = &mut self.wavelet {
            p.visit_mut(&join(prefix, "wavelet"), f);
        }
        if let Some(p) = &mut self.lstm {
            p.visit_mut(&join(prefix, "lstm"), f);
        }
        if let Some(p) = &mut self.gate {
            p.visit_mut(&join(prefix, "gate"), f);
        }
        if let Some(p) = &mut self.attention {
            p.visit_mut(&join(prefix, "attention"), f);
        }
        if let Some(p) = &mut self.flow {
            p.visit_mut(&join(prefix, "flow"), f);
        }
        if let Some(p) = &mut self.gaussian {
            p.visit_mut(&join(prefix, "gaussian"), f);
        }
        self.transitions.visit_mut(&join(prefix, "transitions"), f);
        self.classifier.visit_mut(&join(prefix, "classifier"), f);
    }
}

/// Statistics fitted on the training split and frozen with the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputStats {
    pub signals: SignalNormalizer,
    /// Mean training σ; the temperature sees σ divided by this.
    pub sigma_scale: f64,
    /// Frame spacing in seconds.
    pub interval_s: f64,
}

impl Default for InputStats {
    fn default() -> Self {
        Self { signals: SignalNormalizer::default(), sigma_scale: 1.0, interval_s: 0.1 }
    }
}

impl InputStats {
    pub fn to_tensor(&self) -> Tensor {
        let s = &self.signals;
        Tensor::row_vector(vec![s.sigma_mean, s.sigma_std, s.lambda_mean, s.lambda_std, self.sigma_scale, self.interval_s])
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let d = t.data();
        if d.len() != 6 {
            return Err(Error::Format(format!("input statistics block has {} values, expected 6", d.len())));
        }
        Ok(Self {
            signals: SignalNormalizer { sigma_mean: d[0], sigma_std: d[1], lambda_mean: d[2], lambda_std: d[3] },
            sigma_scale: d[4],
            interval_s: d[5],
        })
    }
}

/// Dataset columns converted to the model's inputs.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub x: Tensor,
    pub sigma: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Standardized gate inputs, `N × gate_inputs`.
    pub gate_inputs: Tensor,
    /// σ divided by the training scale.
    pub tau_sigma: Vec<f64>,
    pub labels: Vec<Option<usize>>,
    pub regimes: Vec<Option<usize>>,
    pub mid: Vec<f64>,
}

impl Prepared {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub feature_dim: usize,
    pub stats: InputStats,
    pub params: ModelParams,
}

/// Tape handles produced by one forward pass over rows `start..end`.
pub struct ChunkOutput {
    /// `T_L × (K+1)`: log filtered posteriors and per-step log normalizers.
    pub filter: Var,
    /// Negative log marginal likelihood summed over loss rows (`1×1`).
    pub nll_sum: Var,
    /// Cross-entropy summed over labeled loss rows (`1×1`), if any.
    pub ce_sum: Option<Var>,
    pub labeled: usize,
    pub loss_rows: usize,
    /// Class log-probabilities for loss rows (`T_L × 3`).
    pub class_logp: Var,
    pub log_emit: Var,
    pub log_trans: Var,
    pub log_init: Var,
    pub context: Var,
    pub gate: Option<Var>,
    pub attention: Option<Var>,
    pub h_fine: Option<Var>,
    pub h_coarse: Option<Var>,
}

impl Model {
    pub fn new(config: ModelConfig, feature_dim: usize, seed: u64) -> Result<Self> {
        config.validate(feature_dim)?;
        let k = config.hidden;
        let stream = |s: u64| SeededRng::fork(seed, s);
        let fine = config.uses_fine().then(|| FinePathParams::init(&mut stream(1), &config.conv_spec(), feature_dim, k));
        let (wavelet, lstm) = if config.uses_coarse() {
            let spec = config.coarse_spec();
            let filter = Tensor::row_vector(haar_filter(config.wavelet_filter_len));
            (Some(WaveletParams { filter }), Some(LstmParams::init(&mut stream(2), spec.lstm_input(), k)))
        } else {
            (None, None)
        };
        let gate = config.uses_gate().then(|| GateParams::init(&mut stream(3), k, config.gate_inputs()));
        let attention = (!config.ablations.no_aga).then(|| AttentionParams::init(&mut stream(4), k));
        let (flow, gaussian) = if config.ablations.gaussian_emissions {
            (None, Some(GaussianParams::init(&mut stream(5), config.states, k, feature_dim)))
        } else {
            (Some(FlowParams::init(&mut stream(5), &config.flow_spec(feature_dim))), None)
        };
        let transitions = TransitionParams::init(&mut stream(6), &config.transition_spec())?;
        let classifier = ClassifierParams { w: init_matrix(&mut stream(7), k + config.states, 3, 1.0), b: Tensor::zeros(1, 3) };
        let params = ModelParams { fine, wavelet, lstm, gate, attention, flow, gaussian, transitions, classifier };
        Ok(Self { config, feature_dim, stats: InputStats::default(), params })
    }

    pub fn param_count(&self) -> usize {
        crate::params::count_params(&self.params)
    }

    /// Names and shapes of all parameter tensors in canonical order.
    pub fn param_names(&self) -> Vec<(String, (usize, usize))> {
        let mut out = Vec::new();
        self.params.visit("", &mut |n, t| out.push((n.to_string(), t.shape())));
        out
    }

    /// Converts a dataset into model inputs; features must match the model width.
    pub fn prepare(&self, ds: &Dataset) -> Result<Prepared> {
        prepare_inputs(&self.config, self.feature_dim, &self.stats, ds)
    }

    /// Fits the input statistics on a training dataset.
    pub fn fit_stats(&mut self, ds: &Dataset) -> Result<()> {
        let interval_s = ds.interval_seconds().unwrap_or(self.stats.interval_s);
        let (sigma, lambda) = signal_series(&ds.mid, &ds.arrival_count, self.config.signal_window, interval_s)?;
        let w = self.config.warmup().min(sigma.len());
        let (s, l) = (&sigma[w..], &lambda[w..]);
        let sigma_scale = mean(s);
        self.stats = InputStats {
            signals: SignalNormalizer::fit(s, l),
            sigma_scale: if sigma_scale > 1e-12 { sigma_scale } else { 1.0 },
            interval_s,
        };
        Ok(())
    }

    /// Forward pass over rows `start..end` of `prep`; losses cover rows `start + loss_from..end`.
    /// With `emission_context` off the emission nets receive a zero context.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_chunk(
        &self,
        g: &mut Graph,
        p: &ModelParams<Var>,
        prep: &Prepared,
        start: usize,
        end: usize,
        loss_from: usize,
        emission_context: bool,
    ) -> Result<ChunkOutput> {
        let cfg = &self.config;
        let t_len = end - start;
        if loss_from == 0 || loss_from >= t_len || end > prep.len() {
            return Err(Error::InvalidArgument(format!(
                "chunk {start}..{end} with loss offset {loss_from} is not valid for {} rows",
                prep.len()
            )));
        }
        let rows = slice_rows(&prep.x, start, end);
        let x = g.constant(rows.clone());
        let h_fine = match &p.fine {
            Some(fp) => Some(fine_path(g, x, fp, &cfg.conv_spec())?),
            None => None,
        };
        let h_coarse = match (&p.wavelet, &p.lstm) {
            (Some(w), Some(l)) => Some(coarse_path(g, &rows, start, w.filter, l, &cfg.coarse_spec())),
            _ => None,
        };
        let mut gate = None;
        let mut attention = None;
        let context = if cfg.ablations.no_aga {
            match (h_fine, h_coarse) {
                (Some(f), Some(c)) => {
                    let s = g.add(f, c);
                    g.scale(s, 0.5)
                }
                (Some(v), None) | (None, Some(v)) => v,
                (None, None) => unreachable!("validated"),
            }
        } else {
            let fused = match (h_fine, h_coarse, &p.gate) {
                (Some(f), Some(c), Some(gp)) => {
                    let s = g.constant(slice_rows(&prep.gate_inputs, start, end));
                    let gv = gate_rows(g, s, gp);
                    gate = Some(gv);
                    fuse_rows(g, gv, f, c)
                }
                (Some(v), None, _) | (None, Some(v), _) => v,
                _ => unreachable!("validated"),
            };
            let ap = p.attention.as_ref().expect("attention enabled");
            let (ctx, att) = attention_rows(g, fused, ap, cfg.heads, cfg.lookback);
            attention = Some(att);
            ctx
        };

        let n_loss = t_len - loss_from;
        let ctx_prev = g.slice_rows(context, loss_from - 1, n_loss);
        let x_loss = g.slice_rows(x, loss_from, n_loss);
        let emit_ctx = if emission_context { ctx_prev } else { g.constant(Tensor::zeros(n_loss, cfg.hidden)) };
        let mut cols = Vec::with_capacity(cfg.states);
        for z in 0..cfg.states {
            let lp = if let Some(fp) = &p.flow {
                let spec = cfg.flow_spec(self.feature_dim);
                FlowEval { spec: &spec, params: fp }.log_prob(g, z, x_loss, emit_ctx)
            } else {
                gaussian_log_prob_rows(g, p.gaussian.as_ref().expect("gaussian head"), z, x_loss, emit_ctx)
            };
            cols.push(lp);
        }
        let log_emit = g.concat_cols(&cols);

        let h_trans = p.transitions.gru.as_ref().map(|gp| {
            let hs = gru_sequence(g, context, gp);
            g.slice_rows(hs, loss_from - 1, n_loss)
        });
        let sigma_prev = &prep.tau_sigma[start + loss_from - 1..end - 1];
        let log_trans = log_transition_rows(g, &p.transitions, ctx_prev, sigma_prev, h_trans);
        let log_init = g.log_softmax_rows(p.transitions.init_logits);
        let filter = g.hmm_filter(log_emit, log_trans, log_init);
        let norms = g.slice_cols(filter, cfg.states, 1);
        let ll = g.sum_all(norms);
        let nll_sum = g.scale(ll, -1.0);

        let log_filtered = g.slice_cols(filter, 0, cfg.states);
        let filtered = g.exp(log_filtered);
        let ctx_now = g.slice_rows(context, loss_from, n_loss);
        let head_in = g.concat_cols(&[ctx_now, filtered]);
        let logits = g.matmul(head_in, p.classifier.w);
        let logits = g.add_row(logits, p.classifier.b);
        let class_logp = g.log_softmax_rows(logits);
        let mut onehot = Tensor::zeros(n_loss, 3);
        let mut labeled = 0;
        for r in 0..n_loss {
            if let Some(c) = prep.labels[start + loss_from + r] {
                onehot.set(r, c, 1.0);
                labeled += 1;
            }
        }
        let ce_sum = (labeled > 0).then(|| {
            let m = g.constant(onehot);
            let picked = g.mul(class_logp, m);
            let s = g.sum_all(picked);
            g.scale(s, -1.0)
        });
        Ok(ChunkOutput {
            filter,
            nll_sum,
            ce_sum,
            labeled,
            loss_rows: n_loss,
            class_logp,
            log_emit,
            log_trans,
            log_init,
            context,
            gate,
            attention,
            h_fine,
            h_coarse,
        })
    }

    /// `(Σ w², wavelet penalty)` over the bound parameters.
    pub fn regularizers(&self, g: &mut Graph, p: &ModelParams<Var>) -> (Var, Var) {
        let mut terms = Vec::new();
        p.visit("", &mut |name, v| {
            if is_decayed(name) {
                terms.push(*v);
            }
        });
        let mut l2 = g.constant(Tensor::scalar(0.0));
        for v in terms {
            let sq = g.square(v);
            let s = g.sum_all(sq);
            l2 = g.add(l2, s);
        }
        let wav = match &p.wavelet {
            Some(w) => wavelet_penalty(g, w.filter),
            None => g.constant(Tensor::scalar(0.0)),
        };
        (l2, wav)
    }

    /// Full-sequence inference from the first post-warm-up row.
    pub fn infer(&self, prep: &Prepared) -> Result<Inference> {
        let warm = self.config.warmup();
        if prep.len() <= warm {
            return Err(Error::Data(format!("dataset has {} rows, needs more than the {warm}-row warm-up", prep.len())));
        }
        let mut g = Graph::new();
        let p = crate::params::bind_constant(&mut g, &self.params);
        let out = self.forward_chunk(&mut g, &p, prep, 0, prep.len(), warm, true)?;
        let log_emit = g.value(out.log_emit).clone();
        let log_trans = g.value(out.log_trans).clone();
        let log_init = g.value(out.log_init).data().to_vec();
        if !log_emit.is_finite() || !log_trans.is_finite() {
            return Err(Error::Numeric("model produced non-finite emission or transition values".into()));
        }
        let post = hmm::forward_backward(&log_emit, &log_trans, &log_init)?;
        let path = hmm::viterbi(&log_emit, &log_trans, &log_init)?;
        let class_probs = g.value(out.class_logp).map(f64::exp);
        let predictions = (0..class_probs.rows()).map(|r| argmax(class_probs.row(r))).collect();
        let n = out.loss_rows;
        let gate_mean = match out.gate {
            Some(gv) => (0..n).map(|r| mean(g.value(gv).row(warm + r))).collect(),
            None => vec![f64::NAN; n],
        };
        let heads = self.config.heads;
        let head_entropy = match out.attention.and_then(|a| g.attention_weights(a)) {
            Some(aw) => {
                let mut t = Tensor::zeros(n, heads);
                for r in 0..n {
                    for h in 0..heads {
                        t.set(r, h, entropy(aw.step(warm + r, h)));
                    }
                }
                t
            }
            None => Tensor::filled(n, heads, f64::NAN),
        };
        let alpha = self.params.transitions.alpha();
        let tau = (0..n).map(|r| 1.0 + alpha * prep.tau_sigma[warm + r - 1]).collect();
        let transitions = log_trans.map(f64::exp);
        Ok(Inference {
            start: warm,
            filtered: post.filtered,
            smoothed: post.smoothed,
            log_likelihood: post.log_likelihood,
            step_log_likelihood: post.step_log_likelihood,
            viterbi: path,
            class_probs,
            predictions,
            gate_mean,
            head_entropy,
            tau,
            transitions,
        })
    }
}

/// Per-step outputs for rows `start..`.
#[derive(Clone, Debug)]
pub struct Inference {
    pub start: usize,
    pub filtered: Tensor,
    pub smoothed: Tensor,
    pub log_likelihood: f64,
    pub step_log_likelihood: Vec<f64>,
    pub viterbi: Vec<usize>,
    pub class_probs: Tensor,
    pub predictions: Vec<usize>,
    pub gate_mean: Vec<f64>,
    pub head_entropy: Tensor,
    pub tau: Vec<f64>,
    /// Row `r` holds the `K×K` matrix into step `start + r` (row 0 unused).
    pub transitions: Tensor,
}

impl Inference {
    pub fn len(&self) -> usize {
        self.viterbi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.viterbi.is_empty()
    }

    pub fn nll_per_step(&self) -> f64 {
        -self.log_likelihood / self.len() as f64
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn slice_rows(t: &Tensor, start: usize, end: usize) -> Tensor {
    let c = t.cols();
    Tensor::from_vec(end - start, c, t.data()[start * c..end * c].to_vec()).expect("row slice")
}

fn prepare_inputs(cfg: &ModelConfig, feature_dim: usize, stats: &InputStats, ds: &Dataset) -> Result<Prepared> {
    if ds.feature_dim() != feature_dim {
        return Err(Error::Data(format!(
            "dataset has {} feature columns ({}), model expects {feature_dim}",
            ds.feature_dim(),
            ds.feature_names.join(",")
        )));
    }
    if let Some(i) = ds.features.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "feature '{}' is missing or non-finite at row {}",
            ds.feature_names[i % feature_dim],
            i / feature_dim
        )));
    }
    let interval_s = ds.interval_seconds().unwrap_or(stats.interval_s);
    let (sigma, lambda) = signal_series(&ds.mid, &ds.arrival_count, cfg.signal_window, interval_s)?;
    let x = Tensor::from_vec(ds.len(), feature_dim, ds.features.clone())?;
    let n_in = cfg.gate_inputs();
    let mut gate_inputs = Tensor::zeros(ds.len(), n_in);
    for t in 0..ds.len() {
        let [s, l] = stats.signals.standardize(sigma[t], lambda[t]);
        let row = gate_inputs.row_mut(t);
        row[0] = s;
        row[1] = l;
        for (j, &c) in cfg.gate_features.iter().enumerate() {
            row[2 + j] = x.get(t, c);
        }
    }
    let tau_sigma = sigma.iter().map(|s| s / stats.sigma_scale).collect();
    Ok(Prepared {
        x,
        sigma,
        lambda,
        gate_inputs,
        tau_sigma,
        labels: ds.label.iter().map(|l| l.map(|l| l.class())).collect(),
        regimes: ds.true_regime.clone(),
        mid: ds.mid.clone(),
    })
}

/// Binds a model's parameters for training.
pub fn bind_params(g: &mut Graph, params: &ModelParams) -> ModelParams<Var> {
    bind(g, params)
}
