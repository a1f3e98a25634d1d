//! Optimizer, schedule and the chunked training loop.

use std::f64::consts::PI;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::hmm::LossBreakdown;
use crate::model::{bind_params, Model, ModelParams, Prepared};
use crate::params::{collect_grads, ParamTree};
use crate::rng::SeededRng;
use crate::tape::{Graph, Var};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Chunks per optimizer step.
    pub batch_size: usize,
    pub patience: usize,
    /// Loss rows per chunk; 0 trains on the whole split as one chunk.
    pub chunk_len: usize,
    /// Rows of encoder history prepended to each chunk.
    pub burn_in: usize,
    pub learning_rate: f64,
    pub lr_floor: f64,
    pub clip_norm: f64,
    pub lambda_ce: f64,
    pub lambda_l2: f64,
    pub lambda_w: f64,
    /// Train share of a chronological train/validation split.
    pub train_fraction: f64,
    /// Probability that a training chunk hides the context from the emission nets.
    pub emission_context_dropout: f64,
    /// Stops after this many optimizer steps when set.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 200,
            batch_size: 256,
            patience: 10,
            chunk_len: 128,
            burn_in: 96,
            learning_rate: 3e-4,
            lr_floor: 1e-6,
            clip_norm: 5.0,
            lambda_ce: 1.0,
            lambda_l2: 1e-5,
            lambda_w: 1e-3,
            train_fraction: 0.8,
            emission_context_dropout: 0.8,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.max_epochs == 0 || self.batch_size == 0 {
            return bad("max_epochs and batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.lr_floor >= 0.0) || self.lr_floor > self.learning_rate {
            return bad("learning rate must be positive and not below the floor");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        if [self.lambda_ce, self.lambda_l2, self.lambda_w].iter().any(|l| !(*l >= 0.0)) {
            return bad("loss weights must be nonnegative");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie strictly between 0 and 1");
        }
        if !(0.0..=1.0).contains(&self.emission_context_dropout) {
            return bad("emission_context_dropout must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { ce: self.lambda_ce, l2: self.lambda_l2, wavelet: self.lambda_w }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub ce: f64,
    pub l2: f64,
    pub wavelet: f64,
}

/// Cosine decay from `initial` to `floor` over `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub initial: f64,
    pub floor: f64,
    pub total_steps: usize,
}

pub fn schedule_rate(t: usize, s: &Schedule) -> f64 {
    if s.total_steps == 0 || t >= s.total_steps {
        return s.floor;
    }
    s.floor + 0.5 * (s.initial - s.floor) * (1.0 + (PI * t as f64 / s.total_steps as f64).cos())
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new<T: ParamTree<Tensor>>(params: &T) -> Self {
        let mut m = Vec::new();
        params.visit("", &mut |_, t| m.push(Tensor::zeros(t.rows(), t.cols())));
        Self { v: m.clone(), m, step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update; `grads` follow the parameters' visit order.
pub fn adam_step<T: ParamTree<Tensor>>(params: &mut T, grads: &[Tensor], state: &mut OptimizerState, lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate {lr} must be positive")));
    }
    let mut idx = 0;
    let mut failure = None;
    params.visit("", &mut |name, t| {
        if failure.is_none() {
            if grads.get(idx).map(|g| g.shape()) != Some(t.shape()) {
                failure = Some(Error::Shape(format!("gradient for {name} does not match its parameter")));
            } else if !grads[idx].is_finite() {
                failure = Some(Error::Numeric(format!("non-finite gradient for {name}")));
            }
        }
        idx += 1;
    });
    if idx != grads.len() {
        return Err(Error::Shape(format!("{} gradients for {idx} parameters", grads.len())));
    }
    if let Some(e) = failure {
        return Err(e);
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let mut i = 0;
    params.visit_mut("", &mut |_, t| {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (mj, gj) in m.iter_mut().zip(g) {
            *mj = b1 * *mj + (1.0 - b1) * gj;
        }
        let v = state.v[i].data_mut();
        for (vj, gj) in v.iter_mut().zip(g) {
            *vj = b2 * *vj + (1.0 - b2) * gj * gj;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((p, mj), vj) in t.data_mut().iter_mut().zip(m).zip(v) {
            *p -= lr * (mj / c1) / ((vj / c2).sqrt() + eps);
        }
        i += 1;
    });
    Ok(())
}

/// Scales gradients to global norm `max_norm` if above it; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
    if norm > max_norm {
        let f = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= f);
        }
    }
    norm
}

/// Rows `start..end` of the prepared data; losses cover `start + loss_from..end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Chunk {
    pub start: usize,
    pub end: usize,
    pub loss_from: usize,
    /// Whether the emission nets see the context in this chunk.
    pub emission_context: bool,
}

/// Tiles loss rows `lo..hi` into chunks of `len` (0: one chunk) with `prefix` rows of history.
pub fn make_chunks(lo: usize, hi: usize, len: usize, prefix: usize) -> Vec<Chunk> {
    let mut out = Vec::new();
    if hi <= lo {
        return out;
    }
    let len = if len == 0 { hi - lo } else { len };
    let mut s = lo;
    while s < hi {
        let e = (s + len).min(hi);
        let start = s.saturating_sub(prefix);
        out.push(Chunk { start, end: e, loss_from: s - start, emission_context: true });
        s = e;
    }
    out
}

/// Composite loss of a single chunk: per-step NLL, per-label CE and both weighted regularizers.
pub fn composite_loss(
    g: &mut Graph,
    model: &Model,
    p: &ModelParams<Var>,
    prep: &Prepared,
    chunk: &Chunk,
    w: LossWeights,
) -> Result<Var> {
    let out = model.forward_chunk(g, p, prep, chunk.start, chunk.end, chunk.loss_from, chunk.emission_context)?;
    let mut loss = g.scale(out.nll_sum, 1.0 / out.loss_rows as f64);
    if let Some(ce) = out.ce_sum {
        let c = g.scale(ce, w.ce / out.labeled as f64);
        loss = g.add(loss, c);
    }
    let (l2, wav) = model.regularizers(g, p);
    let a = g.scale(l2, w.l2);
    let b = g.scale(wav, w.wavelet);
    let loss = g.add(loss, a);
    Ok(g.add(loss, b))
}

/// Mean composite loss over `chunks` and, if requested, its gradient in parameter visit order.
pub fn sequence_loss(
    model: &Model,
    prep: &Prepared,
    chunks: &[Chunk],
    w: LossWeights,
    want_grads: bool,
) -> Result<(LossBreakdown, Option<Vec<Tensor>>)> {
    if chunks.is_empty() {
        return Err(Error::InvalidArgument("loss needs at least one chunk".into()));
    }
    let scale = 1.0 / chunks.len() as f64;
    let mut nll = 0.0;
    let mut ce = 0.0;
    let mut grads: Option<Vec<Tensor>> = None;
    let add = |acc: &mut Option<Vec<Tensor>>, new: Vec<Tensor>| match acc {
        Some(a) => a.iter_mut().zip(&new).for_each(|(x, y)| x.add_assign(y)),
        None => *acc = Some(new),
    };
    for c in chunks {
        let mut g = Graph::new();
        let p = bind_params(&mut g, &model.params);
        let out = model.forward_chunk(&mut g, &p, prep, c.start, c.end, c.loss_from, c.emission_context)?;
        let chunk_nll = g.scale(out.nll_sum, scale / out.loss_rows as f64);
        let loss = match out.ce_sum {
            Some(ce_sum) => {
                ce += g.scalar(ce_sum) / out.labeled as f64 * scale;
                let c = g.scale(ce_sum, w.ce * scale / out.labeled as f64);
                g.add(chunk_nll, c)
            }
            None => chunk_nll,
        };
        nll += g.scalar(chunk_nll);
        if want_grads {
            let gr = g.backward(loss);
            add(&mut grads, collect_grads(&p, &gr, &g));
        }
    }
    let mut g = Graph::new();
    let p = bind_params(&mut g, &model.params);
    let (l2v, wavv) = model.regularizers(&mut g, &p);
    let (l2, wav) = (g.scalar(l2v), g.scalar(wavv));
    if want_grads {
        let a = g.scale(l2v, w.l2);
        let b = g.scale(wavv, w.wavelet);
        let reg = g.add(a, b);
        let gr = g.backward(reg);
        add(&mut grads, collect_grads(&p, &gr, &g));
    }
    let breakdown = LossBreakdown::new(nll, ce, l2, wav, w.ce, w.l2, w.wavelet);
    if !breakdown.total.is_finite() {
        return Err(Error::Numeric(format!("loss is not finite (nll {nll}, ce {ce})")));
    }
    Ok((breakdown, grads))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub validation: LossBreakdown,
    pub learning_rate: f64,
    pub seconds: f64,
    pub clipped_steps: usize,
    pub steps: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    /// Tab-separated history with a header line.
    pub fn to_text(&self) -> String {
        let mut s = String::from(
            "epoch\ttrain_total\ttrain_nll\ttrain_ce\tval_total\tval_nll\tval_ce\tlr\tseconds\tsteps\tclipped\tbest\n",
        );
        for r in &self.epochs {
            s.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.3e}\t{:.2}\t{}\t{}\t{}\n",
                r.epoch,
                r.train.total,
                r.train.nll,
                r.train.ce,
                r.validation.total,
                r.validation.nll,
                r.validation.ce,
                r.learning_rate,
                r.seconds,
                r.steps,
                r.clipped_steps,
                u8::from(Some(r.epoch) == self.best_epoch)
            ));
        }
        s
    }
}

/// Chronological train/validation layout over one prepared dataset.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: Vec<Chunk>,
    pub validation: Vec<Chunk>,
    pub boundary: usize,
}

pub fn split_chunks(model: &Model, rows: usize, cfg: &TrainConfig) -> Result<Split> {
    let warm = model.config.warmup();
    let boundary = (rows as f64 * cfg.train_fraction).round() as usize;
    let prefix = cfg.burn_in.max(warm);
    let train = make_chunks(warm, boundary, cfg.chunk_len, prefix);
    let validation = make_chunks(boundary.max(warm), rows, cfg.chunk_len, prefix);
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Data(format!(
            "{rows} rows leave no training or validation steps after the {warm}-row warm-up"
        )));
    }
    Ok(Split { train, validation, boundary })
}

/// Observer for progress lines.
pub type Progress<'a> = &'a mut dyn FnMut(&EpochRecord);

/// Trains `model` in place on a chronological split of `ds`; restores the best validation parameters.
pub fn train(model: &mut Model, ds: &Dataset, cfg: &TrainConfig, seed: u64, mut progress: Option<Progress>) -> Result<TrainHistory> {
    cfg.validate()?;
    let boundary = (ds.len() as f64 * cfg.train_fraction).round() as usize;
    model.fit_stats(&ds.slice(0, boundary))?;
    let prep = model.prepare(ds)?;
    let split = split_chunks(model, prep.len(), cfg)?;
    let weights = cfg.weights();
    let batches_per_epoch = split.train.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.max_steps.unwrap_or(usize::MAX).min(batches_per_epoch * cfg.max_epochs);
    let schedule = Schedule { initial: cfg.learning_rate, floor: cfg.lr_floor, total_steps };
    let mut opt = OptimizerState::new(&model.params);
    let mut rng = SeededRng::fork(seed, 99);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut since_best = 0;
    let mut step = 0;
    let mut last_finite = f64::NAN;
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    'epochs: for epoch in 0..cfg.max_epochs {
        let started = Instant::now();
        rng.shuffle(&mut order);
        let mut sum = LossBreakdown::default();
        let mut batches = 0;
        let mut clipped = 0;
        let mut lr = schedule_rate(step, &schedule);
        for batch in order.chunks(cfg.batch_size) {
            if step >= total_steps {
                break;
            }
            let chunks: Vec<Chunk> = batch
                .iter()
                .map(|&i| Chunk { emission_context: rng.uniform() >= cfg.emission_context_dropout, ..split.train[i] })
                .collect();
            let (loss, grads) = sequence_loss(model, &prep, &chunks, weights, true).map_err(|e| match e {
                Error::Numeric(m) => {
                    Error::Numeric(format!("training diverged at epoch {epoch} (last finite loss {last_finite:.6}): {m}"))
                }
                other => other,
            })?;
            last_finite = loss.total;
            let mut grads = grads.expect("gradients requested");
            if clip_global_norm(&mut grads, cfg.clip_norm) > cfg.clip_norm {
                clipped += 1;
            }
            lr = schedule_rate(step, &schedule);
            adam_step(&mut model.params, &grads, &mut opt, lr)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}: {e}")))?;
            step += 1;
            batches += 1;
            accumulate(&mut sum, &loss);
        }
        if batches == 0 {
            break;
        }
        let train_mean = scale_breakdown(&sum, 1.0 / batches as f64);
        let (val, _) = sequence_loss(model, &prep, &split.validation, weights, false)
            .map_err(|e| Error::Numeric(format!("validation failed at epoch {epoch}: {e}")))?;
        let record = EpochRecord {
            epoch,
            train: train_mean,
            validation: val,
            learning_rate: lr,
            seconds: started.elapsed().as_secs_f64(),
            clipped_steps: clipped,
            steps: batches,
        };
        if let Some(p) = progress.as_mut() {
            p(&record);
        }
        history.epochs.push(record);
        if best.as_ref().is_none_or(|(b, _)| val.total < *b) {
            best = Some((val.total, model.params.clone()));
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break 'epochs;
            }
        }
        if step >= total_steps {
            break;
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok(history)
}

fn accumulate(acc: &mut LossBreakdown, l: &LossBreakdown) {
    acc.nll += l.nll;
    acc.ce += l.ce;
    acc.l2 += l.l2;
    acc.wavelet += l.wavelet;
    acc.total += l.total;
    acc.lambda_ce = l.lambda_ce;
    acc.lambda_l2 = l.lambda_l2;
    acc.lambda_w = l.lambda_w;
}

fn scale_breakdown(l: &LossBreakdown, f: f64) -> LossBreakdown {
    LossBreakdown::new(l.nll * f, l.ce * f, l.l2 * f, l.wavelet * f, l.lambda_ce, l.lambda_l2, l.lambda_w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::params::flatten;
    use crate::testutil::{narrow, small_dataset, tiny_config};

    use crate::params::param_struct;

    param_struct! {
        pub struct Pair { a: P, b: P }
    }

    fn pair() -> Pair {
        Pair { a: Tensor::row_vector(vec![1.0, -2.0]), b: Tensor::scalar(0.5) }
    }

    #[test]
    fn adam_examples() {
        let mut p = pair();
        let mut st = OptimizerState::new(&p);
        let zero = vec![Tensor::zeros(1, 2), Tensor::zeros(1, 1)];
        adam_step(&mut p, &zero, &mut st, 1e-3).unwrap();
        assert_eq!(p, pair());

        let mut p = pair();
        let mut st = OptimizerState::new(&p);
        let g = vec![Tensor::row_vector(vec![0.3, -40.0]), Tensor::scalar(1e-4)];
        adam_step(&mut p, &g, &mut st, 1e-3).unwrap();
        let moved: Vec<f64> = flatten(&p).iter().zip(flatten(&pair())).map(|(a, b)| b - a).collect();
        // m̂ = g and v̂ = g², so each coordinate moves lr·g/(|g| + ε)
        for (d, gv) in moved.iter().zip([0.3, -40.0, 1e-4]) {
            assert!((d - 1e-3 * gv / (f64::abs(gv) + 1e-8)).abs() < 1e-15);
            assert!((d.abs() - 1e-3).abs() < 1e-6);
        }

        let mut q = pair();
        let mut st2 = OptimizerState::new(&q);
        adam_step(&mut q, &g, &mut st2, 1e-3).unwrap();
        assert_eq!(p, q);
        assert_eq!(st, st2);

        let bad = vec![Tensor::row_vector(vec![f64::NAN, 0.0]), Tensor::scalar(0.0)];
        let err = adam_step(&mut q, &bad, &mut st2, 1e-3).unwrap_err().to_string();
        assert!(err.contains('a'), "{err}");
        assert!(adam_step(&mut q, &g[..1], &mut st2, 1e-3).is_err());
    }

    #[test]
    fn schedule_examples() {
        let s = Schedule { initial: 3e-4, floor: 1e-6, total_steps: 1000 };
        assert_eq!(schedule_rate(0, &s), 3e-4);
        assert_eq!(schedule_rate(1000, &s), 1e-6);
        assert_eq!(schedule_rate(5000, &s), 1e-6);
        assert!((schedule_rate(500, &s) - (3e-4 + 1e-6) / 2.0).abs() < 1e-15);
        let rates: Vec<f64> = (0..=1000).map(|t| schedule_rate(t, &s)).collect();
        assert!(rates.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn clipping_and_chunks() {
        let mut g = vec![Tensor::row_vector(vec![3.0, 4.0])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
        assert_eq!(clip_global_norm(&mut g, 2.0), 1.0);

        let c = make_chunks(10, 35, 10, 4);
        assert_eq!(c.iter().map(|c| (c.start, c.end, c.loss_from)).collect::<Vec<_>>(), vec![(6, 20, 4), (16, 30, 4), (26, 35, 4)]);
        let whole = make_chunks(10, 35, 0, 100);
        assert_eq!((whole.len(), whole[0].start, whole[0].loss_from), (1, 0, 10));
        assert!(make_chunks(5, 5, 10, 0).is_empty());
    }

    fn toy() -> (Model, Dataset, TrainConfig) {
        let ds = narrow(&small_dataset(160, 12), 3);
        let model = Model::new(tiny_config(2, 3), 3, 3).unwrap();
        let cfg = TrainConfig { batch_size: 2, chunk_len: 16, burn_in: 8, learning_rate: 1e-2, ..Default::default() };
        (model, ds, cfg)
    }

    #[test]
    fn one_epoch_smoke() {
        let (mut model, ds, cfg) = toy();
        let before = model.params.clone();
        let h = train(&mut model, &ds, &TrainConfig { max_epochs: 1, ..cfg }, 1, None).unwrap();
        assert_eq!(h.epochs.len(), 1);
        assert_eq!(h.best_epoch, Some(0));
        assert_ne!(model.params, before);
        assert!(h.to_text().lines().count() == 2);
    }

    #[test]
    fn training_loss_trends_down() {
        let (mut model, ds, cfg) = toy();
        let cfg = TrainConfig { max_epochs: 20, patience: 100, emission_context_dropout: 0.0, ..cfg };
        let h = train(&mut model, &ds, &cfg, 2, None).unwrap();
        assert_eq!(h.epochs.len(), 20);
        let means: Vec<f64> =
            h.epochs.chunks(5).map(|c| c.iter().map(|r| r.train.total).sum::<f64>() / c.len() as f64).collect();
        assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
    }

    #[test]
    fn ten_steps_are_reproducible() {
        let run = || {
            let (mut model, ds, cfg) = toy();
            train(&mut model, &ds, &TrainConfig { max_steps: Some(10), max_epochs: 50, ..cfg }, 9, None).unwrap();
            flatten(&model.params)
        };
        let a = run();
        let b = run();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn early_stopping_restores_the_best_epoch() {
        let (mut model, ds, cfg) = toy();
        let cfg = TrainConfig { max_epochs: 12, patience: 2, learning_rate: 0.2, ..cfg };
        let h = train(&mut model, &ds, &cfg, 4, None).unwrap();
        let best = h.best_epoch.unwrap();
        let min = h.epochs.iter().map(|r| r.validation.total).fold(f64::INFINITY, f64::min);
        assert_eq!(h.epochs[best].validation.total, min);
        let prep = model.prepare(&ds).unwrap();
        let split = split_chunks(&model, prep.len(), &cfg).unwrap();
        let (val, _) = sequence_loss(&model, &prep, &split.validation, cfg.weights(), false).unwrap();
        assert!((val.total - min).abs() < 1e-12);
    }

    #[test]
    fn divergence_reports_the_epoch() {
        let (mut model, ds, cfg) = toy();
        model.params.classifier.b.data_mut()[0] = f64::NAN;
        let err = train(&mut model, &ds, &cfg, 1, None).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert!(err.to_string().contains("epoch 0"), "{err}");
    }

    #[test]
    fn gaussian_flag_trains() {
        let (_, ds, cfg) = toy();
        let mut c = tiny_config(2, 3);
        c.ablations.enable("gaussian_emissions").unwrap();
        let mut model = Model::new(c, 3, 1).unwrap();
        let h = train(&mut model, &ds, &TrainConfig { max_epochs: 2, ..cfg }, 1, None).unwrap();
        assert_eq!(h.epochs.len(), 2);
        assert!(ModelConfig::default().validate(7).is_ok());
    }
}
