//! End-to-end scoring of a model on a dataset.

use crate::data::{Dataset, Label};
use crate::metrics::{accuracy, mcc, regime_f1, volatile_regime_f1, sharpe_sim, ConfusionMatrix, MetricsReport, RegimeF1, TradeSim, TradeSimConfig};
use crate::model::{Inference, Model};
use crate::stream::{latency_p99, LatencyReport};
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// First scored row; earlier rows only feed the encoder and filter.
    pub from: usize,
    /// Timed streaming steps (0 skips the latency run).
    pub latency_steps: usize,
    pub latency_warmup: usize,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub trade: TradeSim,
    pub regimes: Option<RegimeF1>,
    pub latency: Option<LatencyReport>,
    pub inference: Inference,
    /// Dataset row of the first scored step.
    pub first_row: usize,
}

pub fn evaluate(model: &Model, ds: &Dataset, trade: &TradeSimConfig, opts: &EvalOptions) -> Result<Evaluation> {
    let prep = model.prepare(ds)?;
    let inf = model.infer(&prep)?;
    let first_row = opts.from.max(inf.start);
    if first_row >= ds.len() {
        return Err(Error::Data(format!("no rows left to score after row {first_row}")));
    }
    let skip = first_row - inf.start;
    let preds = &inf.predictions[skip..];
    let rows = first_row..ds.len();

    let (truth, hits): (Vec<usize>, Vec<usize>) = rows
        .clone()
        .zip(preds)
        .filter_map(|(t, &p)| ds.label[t].map(|l| (l.class(), p)))
        .unzip();
    let cm = ConfusionMatrix::from_pairs(&truth, &hits, 3)?;

    let labeled_regimes = ds.true_regime[first_row..].iter().all(Option::is_some);
    let regimes = if labeled_regimes {
        let truth: Vec<usize> = ds.true_regime[first_row..].iter().map(|r| r.expect("checked")).collect();
        Some(regime_f1(&inf.viterbi[skip..], &truth, model.config.states)?)
    } else {
        None
    };
    let (regime_score, regime_truth) = match &regimes {
        Some(r) => (Some(r.f1), Some("generator")),
        None => {
            let f1 = volatile_regime_f1(&inf.viterbi[skip..], &prep.sigma[first_row..], model.config.states)?;
            (Some(f1), Some("volatility_quintile"))
        }
    };

    let positions: Vec<i32> = preds.iter().map(|&c| Label::from_class(c).map_or(0, Label::sign)).collect();
    let sim = sharpe_sim(&positions, &ds.mid[first_row..], trade)?;

    let latency = if opts.latency_steps > 0 {
        Some(latency_p99(model, ds, opts.latency_warmup, opts.latency_steps)?)
    } else {
        None
    };

    let scored = ds.len() - first_row;
    let report = MetricsReport {
        steps: scored,
        accuracy: accuracy(&cm),
        mcc: mcc(&cm),
        regime_f1: regime_score,
        regime_truth,
        per_regime_f1: regimes.as_ref().map_or_else(Vec::new, |r| r.per_regime.clone()),
        nll_per_step: scored_nll(&inf, skip),
        sharpe: sim.sharpe,
        sharpe_annualized: sim.annualized,
        annualization: trade.annualization,
        fee_bps: trade.fee_bps,
        latency_p50_ms: latency.as_ref().map(|l| l.p50_ms),
        latency_p99_ms: latency.as_ref().map(|l| l.p99_ms),
    };
    Ok(Evaluation { report, trade: sim, regimes, latency, inference: inf, first_row })
}

fn scored_nll(inf: &Inference, skip: usize) -> f64 {
    let n = inf.len() - skip;
    -inf.step_log_likelihood[skip..].iter().sum::<f64>() / n as f64
}
