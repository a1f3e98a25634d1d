//! Step-at-a-time inference for the serving path and latency measurement.

use std::collections::VecDeque;
use std::time::Instant;

use crate::attention::{aga_attention, fuse, gate};
use crate::data::Dataset;
use crate::encoder::{lstm_step, qmf_highpass};
use crate::flow::{emission_logprob, gaussian_emission_logprob};
use crate::metrics::percentile;
use crate::model::{argmax, Model};
use crate::numerics::{logsumexp, population_std, softmax};
use crate::tape::analysis_matrix_value;
use crate::tensor::Tensor;
use crate::transitions::{context_update, log_transition_matrix};
use crate::{Error, Result};

/// Outputs for one step; posterior fields stay empty during the warm-up.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub step: usize,
    pub context: Vec<f64>,
    pub gate_mean: Option<f64>,
    pub filtered: Option<Vec<f64>>,
    pub class_probs: Option<Vec<f64>>,
    pub prediction: Option<usize>,
}

/// Incremental version of [`Model::infer`]'s filtered outputs.
pub struct StreamingPredictor<'a> {
    model: &'a Model,
    warmup: usize,
    t: usize,
    mids: VecDeque<f64>,
    arrivals: VecDeque<u32>,
    /// Input history per fine layer, newest last.
    fine_inputs: Vec<VecDeque<Vec<f64>>>,
    coarse_rows: VecDeque<Vec<f64>>,
    dwt_low: Vec<Tensor>,
    dwt_high: Option<Tensor>,
    lstm_state: Option<(Vec<f64>, Vec<f64>)>,
    h_coarse: Vec<f64>,
    fused: VecDeque<Vec<f64>>,
    prev: Option<Previous>,
    gru_h: Vec<f64>,
    log_alpha: Option<Vec<f64>>,
}

struct Previous {
    context: Vec<f64>,
    tau_sigma: f64,
    offset: Option<Vec<f64>>,
}

impl<'a> StreamingPredictor<'a> {
    pub fn new(model: &'a Model) -> Self {
        let cfg = &model.config;
        let conv = cfg.conv_spec();
        let fine_inputs = if cfg.uses_fine() {
            conv.dilations.iter().map(|d| VecDeque::with_capacity((conv.kernel - 1) * d + 1)).collect()
        } else {
            Vec::new()
        };
        let (dwt_low, dwt_high) = match &model.params.wavelet {
            Some(w) => {
                let spec = cfg.coarse_spec();
                let h = w.filter.data();
                let low = (0..spec.levels).map(|l| analysis_matrix_value(h, spec.window >> l)).collect();
                let high = spec.with_details.then(|| analysis_matrix_value(&qmf_highpass(h), spec.window));
                (low, high)
            }
            None => (Vec::new(), None),
        };
        Self {
            model,
            warmup: cfg.warmup(),
            t: 0,
            mids: VecDeque::new(),
            arrivals: VecDeque::new(),
            fine_inputs,
            coarse_rows: VecDeque::new(),
            dwt_low,
            dwt_high,
            lstm_state: None,
            h_coarse: vec![0.0; cfg.hidden],
            fused: VecDeque::new(),
            prev: None,
            gru_h: vec![0.0; cfg.gru_hidden],
            log_alpha: None,
        }
    }

    pub fn steps_seen(&self) -> usize {
        self.t
    }

    /// Consumes one normalized feature row with its mid-price and arrival count.
    pub fn step(&mut self, x: &[f64], mid: f64, arrivals: u32) -> Result<StepOutput> {
        let model = self.model;
        let cfg = &model.config;
        if x.len() != model.feature_dim {
            return Err(Error::Shape(format!("step expects {} features, got {}", model.feature_dim, x.len())));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("feature {i} is not finite at step {}", self.t)));
        }
        // adaptation signals over the trailing window
        let w = cfg.signal_window;
        self.mids.push_back(mid);
        self.arrivals.push_back(arrivals);
        if self.mids.len() > w {
            self.mids.pop_front();
            self.arrivals.pop_front();
        }
        let changes: Vec<f64> = self.mids.iter().zip(self.mids.iter().skip(1)).map(|(a, b)| b - a).collect();
        let sigma = population_std(&changes);
        let count: u64 = self.arrivals.iter().map(|&a| u64::from(a)).sum();
        let lambda = count as f64 / (self.arrivals.len() as f64 * model.stats.interval_s);

        let h_fine = self.fine_step(x);
        let h_coarse = self.coarse_step(x)?;
        let mut gate_mean = None;
        let context = if cfg.ablations.no_aga {
            match (h_fine, h_coarse) {
                (Some(f), Some(c)) => f.iter().zip(&c).map(|(a, b)| (a + b) * 0.5).collect(),
                (Some(v), None) | (None, Some(v)) => v,
                (None, None) => unreachable!("validated"),
            }
        } else {
            let fused = match (h_fine, h_coarse, &model.params.gate) {
                (Some(f), Some(c), Some(gp)) => {
                    let [s, l] = model.stats.signals.standardize(sigma, lambda);
                    let mut inputs = vec![s, l];
                    inputs.extend(cfg.gate_features.iter().map(|&c| x[c]));
                    let gv = gate(&inputs, gp)?;
                    gate_mean = Some(gv.iter().sum::<f64>() / gv.len() as f64);
                    fuse(&gv, &f, &c)?
                }
                (Some(v), None, _) | (None, Some(v), _) => v,
                _ => unreachable!("validated"),
            };
            self.fused.push_back(fused);
            if self.fused.len() > cfg.lookback + 1 {
                self.fused.pop_front();
            }
            let rows: Vec<Vec<f64>> = self.fused.iter().cloned().collect();
            let history = Tensor::from_rows(&rows)?;
            let ap = model.params.attention.as_ref().expect("attention enabled");
            aga_attention(&history, rows.len() - 1, ap, cfg.heads, cfg.lookback)?.context
        };

        let mut out = StepOutput {
            step: self.t,
            context: context.clone(),
            gate_mean,
            filtered: None,
            class_probs: None,
            prediction: None,
        };
        if self.t >= self.warmup {
            let prev = self.prev.as_ref().expect("warm-up leaves a previous context");
            let k = cfg.states;
            let mut log_emit = vec![0.0; k];
            for (z, le) in log_emit.iter_mut().enumerate() {
                *le = match (&model.params.flow, &model.params.gaussian) {
                    (Some(fp), _) => emission_logprob(x, z, &prev.context, fp, &cfg.flow_spec(model.feature_dim))?.value,
                    (None, Some(gp)) => gaussian_emission_logprob(x, z, &prev.context, gp)?.value,
                    (None, None) => unreachable!("one emission head"),
                };
            }
            let prior: Vec<f64> = match &self.log_alpha {
                None => {
                    let init = model.params.transitions.initial_distribution();
                    init.iter().map(|p| p.ln()).collect()
                }
                Some(la) => {
                    let (lt, _) =
                        log_transition_matrix(&prev.context, prev.tau_sigma, prev.offset.as_deref(), &model.params.transitions)?;
                    (0..k)
                        .map(|j| {
                            let terms: Vec<f64> = (0..k).map(|i| la[i] + lt.get(i, j)).collect();
                            logsumexp(&terms)
                        })
                        .collect()
                }
            };
            let joint: Vec<f64> = prior.iter().zip(&log_emit).map(|(a, b)| a + b).collect();
            let norm = logsumexp(&joint);
            if !norm.is_finite() {
                return Err(Error::Numeric(format!("filter normalizer is not finite at step {}", self.t)));
            }
            let la: Vec<f64> = joint.iter().map(|v| v - norm).collect();
            let filtered: Vec<f64> = la.iter().map(|v| v.exp()).collect();
            let mut head_in = context.clone();
            head_in.extend_from_slice(&filtered);
            let logits = Tensor::row_vector(head_in)
                .matmul(&model.params.classifier.w)
                .zip_map(&model.params.classifier.b, |a, b| a + b);
            let probs = softmax(logits.data(), 1.0)?;
            out.prediction = Some(argmax(&probs));
            out.class_probs = Some(probs);
            out.filtered = Some(filtered);
            self.log_alpha = Some(la);
        }

        let offset = match (&model.params.transitions.gru, &model.params.transitions.mlp) {
            (Some(gru), Some(mlp)) => {
                let (h, off) = context_update(&context, &self.gru_h, gru, mlp)?;
                self.gru_h = h;
                Some(off)
            }
            _ => None,
        };
        self.prev = Some(Previous { context, tau_sigma: sigma / model.stats.sigma_scale, offset });
        self.t += 1;
        Ok(out)
    }

    fn fine_step(&mut self, x: &[f64]) -> Option<Vec<f64>> {
        let fp = self.model.params.fine.as_ref()?;
        let conv = self.model.config.conv_spec();
        let mut input = x.to_vec();
        for (layer, &d) in conv.dilations.iter().enumerate() {
            let hist = &mut self.fine_inputs[layer];
            hist.push_back(input);
            if hist.len() > (conv.kernel - 1) * d + 1 {
                hist.pop_front();
            }
            let c_in = hist.back().expect("just pushed").len();
            let mut stacked = vec![0.0; conv.kernel * c_in];
            for j in 0..conv.kernel {
                if let Some(row) = (hist.len() - 1).checked_sub(j * d).map(|i| &hist[i]) {
                    stacked[j * c_in..(j + 1) * c_in].copy_from_slice(row);
                }
            }
            let z = Tensor::row_vector(stacked).matmul(&fp.w[layer]).zip_map(&fp.b[layer], |a, b| (a + b).max(0.0));
            input = z.into_vec();
        }
        Some(input)
    }

    fn coarse_step(&mut self, x: &[f64]) -> Result<Option<Vec<f64>>> {
        let Some(lp) = self.model.params.lstm.as_ref() else {
            return Ok(None);
        };
        let spec = self.model.config.coarse_spec();
        self.coarse_rows.push_back(spec.channels.iter().map(|&c| x[c]).collect());
        if self.coarse_rows.len() > spec.window {
            self.coarse_rows.pop_front();
        }
        if self.t + 1 >= spec.window && (self.t + 1) % spec.stride == 0 {
            let n = spec.window;
            let mut approx = Vec::new();
            let mut details = Vec::new();
            for ci in 0..spec.channels.len() {
                let series: Vec<f64> = self.coarse_rows.iter().map(|r| r[ci]).collect();
                let mut a = Tensor::row_vector(series);
                if let Some(high) = &self.dwt_high {
                    details.extend_from_slice(a.matmul(high).data());
                }
                for m in &self.dwt_low {
                    a = a.matmul(m);
                }
                approx.extend_from_slice(a.data());
                debug_assert_eq!(a.cols(), n >> spec.levels);
            }
            approx.extend(details);
            let k = lp.hidden();
            let (h0, c0) = self.lstm_state.take().unwrap_or_else(|| (vec![0.0; k], vec![0.0; k]));
            let (h, c) = lstm_step(&approx, &h0, &c0, lp)?;
            self.h_coarse = h.clone();
            self.lstm_state = Some((h, c));
        }
        Ok(Some(self.h_coarse.clone()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyReport {
    pub steps: usize,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub mean_ms: f64,
}

/// Times `steps` streaming steps over the rows of `ds` (cycled, restarting the
/// stream at the end), after `warmup_steps` untimed steps past the model warm-up.
pub fn latency_p99(model: &Model, ds: &Dataset, warmup_steps: usize, steps: usize) -> Result<LatencyReport> {
    if ds.len() <= model.config.warmup() + 1 {
        return Err(Error::Data(format!("latency run needs more than {} rows", model.config.warmup() + 1)));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("latency run needs at least one timed step".into()));
    }
    let mut stream = StreamingPredictor::new(model);
    let mut row = 0;
    let mut samples = Vec::with_capacity(steps);
    let untimed = model.config.warmup() + warmup_steps;
    let mut done = 0;
    while samples.len() < steps {
        if row == ds.len() {
            row = 0;
            stream = StreamingPredictor::new(model);
        }
        let started = Instant::now();
        let out = stream.step(ds.row(row), ds.mid[row], ds.arrival_count[row])?;
        let ms = started.elapsed().as_secs_f64() * 1e3;
        std::hint::black_box(&out);
        if done >= untimed && out.prediction.is_some() {
            samples.push(ms);
        }
        done += 1;
        row += 1;
    }
    Ok(LatencyReport {
        steps,
        p50_ms: percentile(&samples, 50.0),
        p99_ms: percentile(&samples, 99.0),
        mean_ms: crate::numerics::mean(&samples),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::testutil::{perturbed_model, small_dataset};

    fn check_against_batch(cfg: ModelConfig) {
        let ds = small_dataset(220, 9);
        let mut model = perturbed_model(cfg, ds.feature_dim(), 4);
        model.fit_stats(&ds).unwrap();
        let batch = model.infer(&model.prepare(&ds).unwrap()).unwrap_or_else(|e| panic!("{:?}: {e}", model.config.ablations.active()));
        let mut stream = StreamingPredictor::new(&model);
        for t in 0..ds.len() {
            let out = stream.step(ds.row(t), ds.mid[t], ds.arrival_count[t]).unwrap();
            if t < batch.start {
                assert!(out.filtered.is_none());
                continue;
            }
            let r = t - batch.start;
            let filtered = out.filtered.unwrap();
            for (a, b) in filtered.iter().zip(batch.filtered.row(r)) {
                assert!((a - b).abs() < 1e-9, "step {t}: {a} vs {b}");
            }
            for (a, b) in out.class_probs.unwrap().iter().zip(batch.class_probs.row(r)) {
                assert!((a - b).abs() < 1e-9);
            }
            assert_eq!(out.prediction.unwrap(), batch.predictions[r]);
            if let Some(gm) = out.gate_mean {
                assert!((gm - batch.gate_mean[r]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn streaming_matches_batch_inference() {
        let small = ModelConfig { hidden: 8, heads: 2, ..Default::default() };
        check_against_batch(small.clone());
        for flag in crate::model::AblationFlags::NAMES {
            let mut cfg = small.clone();
            cfg.ablations.enable(flag).unwrap();
            check_against_batch(cfg);
        }
        check_against_batch(ModelConfig { coarse_details: true, gate_features: vec![2], ..small.clone() });
        check_against_batch(ModelConfig { transition_logits: crate::model::TransitionLogits::Replace, ..small });
    }

    #[test]
    fn latency_report_is_ordered() {
        let ds = small_dataset(200, 2);
        let model = Model::new(ModelConfig { hidden: 8, heads: 2, ..Default::default() }, 7, 1).unwrap();
        let r = latency_p99(&model, &ds, 10, 300).unwrap();
        assert_eq!(r.steps, 300);
        assert!(r.p99_ms >= r.p50_ms && r.p50_ms > 0.0);
        assert!(latency_p99(&model, &ds.slice(0, 30), 0, 10).is_err());
    }
}
