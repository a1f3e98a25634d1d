//! Synthetic order flow: a Markov-modulated Poisson/Gaussian book simulator,
//! the per-snapshot feature pipeline, rolling normalization and labeling,
//! and the text/binary dataset formats.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::population_std;
use crate::rng::SeededRng;

pub const FEATURE_NAMES: [&str; 7] =
    ["price_imbalance", "volume_imbalance", "ofi", "micro_mid_diff", "realized_vol", "depth", "spread"];

pub const DATASET_MAGIC: &[u8; 4] = b"AGAD";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Row-stochastic regime transition matrix (per snapshot step).
    pub transition: Vec<Vec<f64>>,
    /// Order arrival intensity per regime, events per second.
    pub intensity: Vec<f64>,
    /// Mid-price volatility per regime, price units per √step.
    pub volatility: Vec<f64>,
    pub interval_ms: f64,
    pub horizon: usize,
    pub seed: u64,
    pub tick: f64,
    pub initial_mid: f64,
    /// Long-run mean of the depth on each side of the book.
    pub depth_mean: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            transition: vec![
                vec![0.995, 0.004, 0.001],
                vec![0.003, 0.994, 0.003],
                vec![0.002, 0.008, 0.990],
            ],
            intensity: vec![20.0, 50.0, 120.0],
            volatility: vec![0.005, 0.015, 0.04],
            interval_ms: 100.0,
            horizon: 30_000,
            seed: 7,
            tick: 0.01,
            initial_mid: 100.0,
            depth_mean: 500.0,
        }
    }
}

impl GeneratorConfig {
    pub fn regimes(&self) -> usize {
        self.transition.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.transition.len();
        if k == 0 {
            return Err(Error::InvalidConfig("transition matrix is empty".into()));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidConfig(format!("transition row {i} has {} entries, expected {k}", row.len())));
            }
            let s: f64 = row.iter().sum();
            if s == 0.0 {
                return Err(Error::InvalidConfig(format!("transition row {i} is all zero")));
            }
            if row.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidConfig(format!("transition row {i} is not a probability vector (sum {s})")));
            }
        }
        if self.intensity.len() != k || self.volatility.len() != k {
            return Err(Error::InvalidConfig(format!("intensity and volatility need {k} entries")));
        }
        if self.intensity.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidConfig("intensities must be positive".into()));
        }
        if self.volatility.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(Error::InvalidConfig("volatilities must be nonnegative".into()));
        }
        if !(self.interval_ms > 0.0) || !(self.tick > 0.0) || !(self.depth_mean > 0.0) {
            return Err(Error::InvalidConfig("interval, tick and depth mean must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Bid,
    Ask,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    Submit,
    Cancel,
    Execute,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EventRecord {
    pub timestamp_ns: u64,
    pub side: Side,
    pub kind: EventKind,
    pub price_ticks: i64,
    pub size: u32,
}

impl EventRecord {
    /// Contribution to order flow imbalance: signed size at the best quotes.
    /// Bid additions and ask removals push up; bid removals and ask additions push down.
    pub fn signed_flow(&self) -> f64 {
        let s = f64::from(self.size);
        match (self.side, self.kind) {
            (Side::Bid, EventKind::Submit) => s,
            (Side::Bid, _) => -s,
            (Side::Ask, EventKind::Submit) => -s,
            (Side::Ask, _) => s,
        }
    }
}

/// Book state at the end of one snapshot interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BookSnapshot {
    pub timestamp_ns: u64,
    pub mid: f64,
    pub spread: f64,
    pub bid_depth: f64,
    pub ask_depth: f64,
    pub ofi: f64,
    pub arrivals: u32,
    pub regime: Option<usize>,
}

impl BookSnapshot {
    /// Depth-weighted mid price.
    pub fn microprice(&self) -> f64 {
        let bid = self.mid - 0.5 * self.spread;
        let ask = self.mid + 0.5 * self.spread;
        (ask * self.bid_depth + bid * self.ask_depth) / (self.bid_depth + self.ask_depth)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFrame {
    pub timestamp_ns: u64,
    pub x: Vec<f64>,
    pub mid: f64,
    pub arrival_count: u32,
    pub true_regime: Option<usize>,
    /// Set while the feature window is not yet full.
    pub warmup: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Down,
    Neutral,
    Up,
}

impl Label {
    pub fn class(self) -> usize {
        match self {
            Label::Down => 0,
            Label::Neutral => 1,
            Label::Up => 2,
        }
    }

    pub fn from_class(c: usize) -> Option<Self> {
        match c {
            0 => Some(Label::Down),
            1 => Some(Label::Neutral),
            2 => Some(Label::Up),
            _ => None,
        }
    }

    pub fn sign(self) -> i32 {
        self.class() as i32 - 1
    }
}

pub struct GeneratedData {
    pub events: Vec<EventRecord>,
    pub snapshots: Vec<BookSnapshot>,
    pub regimes: Vec<usize>,
}

/// Samples a regime path, order events and book snapshots.
pub fn generate(config: &GeneratorConfig) -> Result<GeneratedData> {
    config.validate()?;
    let mut rng = SeededRng::new(config.seed);
    let mut jitter = SeededRng::fork(config.seed, 1);
    let k = config.regimes();
    let interval_ns = (config.interval_ms * 1e6).round() as u64;
    let interval_s = config.interval_ms / 1000.0;
    let mut regime = rng.below(k);
    let mut mid = config.initial_mid;
    let mut bid_depth = config.depth_mean;
    let mut ask_depth = config.depth_mean;
    let mut log_excess = 0.0f64;
    let mut events = Vec::new();
    let mut snapshots = Vec::with_capacity(config.horizon);
    let mut regimes = Vec::with_capacity(config.horizon);
    let mut stamps = Vec::new();
    for t in 0..config.horizon {
        if t > 0 {
            regime = rng.categorical(&config.transition[regime]);
        }
        let vol = config.volatility[regime];
        let n = rng.poisson(config.intensity[regime] * interval_s) as usize;
        stamps.clear();
        stamps.extend((0..n).map(|_| t as u64 * interval_ns + (rng.uniform() * interval_ns as f64) as u64));
        stamps.sort_unstable();
        let spread = config.tick * (1.0 + log_excess.exp());
        let bid_px = mid - 0.5 * spread;
        let ask_px = mid + 0.5 * spread;
        let mut ofi = 0.0;
        for &ts in &stamps {
            let side = if rng.uniform() < 0.5 { Side::Bid } else { Side::Ask };
            let u = rng.uniform();
            let kind = if u < 0.5 {
                EventKind::Submit
            } else if u < 0.8 {
                EventKind::Cancel
            } else {
                EventKind::Execute
            };
            let size = 1 + rng.poisson(4.0) as u32;
            let px = match side {
                Side::Bid => bid_px,
                Side::Ask => ask_px,
            };
            let ev = EventRecord { timestamp_ns: ts, side, kind, price_ticks: (px / config.tick).round() as i64, size };
            ofi += ev.signed_flow();
            let depth = match side {
                Side::Bid => &mut bid_depth,
                Side::Ask => &mut ask_depth,
            };
            let delta = f64::from(size);
            *depth = match kind {
                EventKind::Submit => *depth + delta,
                _ => (*depth - delta).max(1.0),
            };
            events.push(ev);
        }
        // Depth mean-reverts towards its long-run level.
        bid_depth = (bid_depth + 0.05 * (config.depth_mean - bid_depth) + 2.0 * rng.normal()).max(1.0);
        ask_depth = (ask_depth + 0.05 * (config.depth_mean - ask_depth) + 2.0 * rng.normal()).max(1.0);
        // Time-averaged spread: one tick plus an excess whose log mean-reverts to a volatility-driven level.
        let target = (0.05 + vol / config.tick).ln();
        log_excess += 0.2 * (target - log_excess) + 0.1 * rng.normal();
        mid += vol * rng.normal();
        snapshots.push(BookSnapshot {
            timestamp_ns: (t as u64 + 1) * interval_ns,
            mid,
            spread: config.tick * (1.0 + log_excess.exp()),
            bid_depth,
            ask_depth,
            // Uniform dequantization of the integer flow.
            ofi: ofi + jitter.uniform() - 0.5,
            arrivals: n as u32,
            regime: Some(regime),
        });
        regimes.push(regime);
    }
    Ok(GeneratedData { events, snapshots, regimes })
}

/// Stationary distribution of a row-stochastic matrix by power iteration.
pub fn stationary_distribution(p: &[Vec<f64>]) -> Vec<f64> {
    let k = p.len();
    let mut pi = vec![1.0 / k as f64; k];
    for _ in 0..100_000 {
        let mut next = vec![0.0; k];
        for i in 0..k {
            for j in 0..k {
                next[j] += pi[i] * p[i][j];
            }
        }
        let diff: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if diff < 1e-15 {
            break;
        }
    }
    pi
}

/// Raw per-snapshot features. Frame `t` uses only snapshots `≤ t`.
///
/// Realized volatility is the population standard deviation of the last `window`
/// mid-price changes; frames before that many changes exist are flagged `warmup`.
pub fn compute_features(snapshots: &[BookSnapshot], window: usize) -> Result<Vec<FeatureFrame>> {
    if window < 2 {
        return Err(Error::InvalidArgument(format!("feature window must be at least 2, got {window}")));
    }
    let mut frames = Vec::with_capacity(snapshots.len());
    let mut changes = Vec::with_capacity(snapshots.len());
    for (t, s) in snapshots.iter().enumerate() {
        if t > 0 {
            changes.push(s.mid - snapshots[t - 1].mid);
        }
        let warmup = changes.len() < window;
        let vol = population_std(&changes[changes.len().saturating_sub(window)..]);
        let micro = s.microprice();
        let micro_diff = if t > 0 { micro - snapshots[t - 1].microprice() } else { 0.0 };
        let total = s.bid_depth + s.ask_depth;
        let x = vec![
            micro - s.mid,
            (s.bid_depth - s.ask_depth) / total,
            s.ofi,
            micro_diff,
            vol,
            total,
            s.spread,
        ];
        frames.push(FeatureFrame {
            timestamp_ns: s.timestamp_ns,
            x,
            mid: s.mid,
            arrival_count: s.arrivals,
            true_regime: s.regime,
            warmup,
        });
    }
    Ok(frames)
}

/// `(x_t - mean) / max(std, floor)` over the trailing `window` values ending at `t`
/// (fewer at the start of the series).
pub fn rolling_zscore(series: &[f64], window: usize, floor: f64) -> Result<Vec<f64>> {
    if window < 2 {
        return Err(Error::InvalidArgument(format!("z-score window must be at least 2, got {window}")));
    }
    let mut out = Vec::with_capacity(series.len());
    let reference = series.first().copied().unwrap_or(0.0);
    let (mut s1, mut s2) = (0.0, 0.0);
    for t in 0..series.len() {
        // Recompute periodically to bound drift in the running sums.
        let fresh = t % window == 0;
        if fresh {
            let lo = (t + 1).saturating_sub(window);
            s1 = 0.0;
            s2 = 0.0;
            for &x in &series[lo..t] {
                let d = x - reference;
                s1 += d;
                s2 += d * d;
            }
        }
        let d = series[t] - reference;
        s1 += d;
        s2 += d * d;
        if t >= window && !fresh {
            let old = series[t - window] - reference;
            s1 -= old;
            s2 -= old * old;
        }
        let n = (t + 1).min(window) as f64;
        let m = s1 / n;
        let var = (s2 / n - m * m).max(0.0);
        out.push((d - m) / var.sqrt().max(floor));
    }
    Ok(out)
}

/// Three-class movement label with inclusive `±0.5σ` boundaries.
///
/// With `sigma == 0` the sign of the move decides and a zero move is neutral.
pub fn label(mid: &[f64], t: usize, horizon: usize, sigma: f64) -> Result<Label> {
    if t + horizon >= mid.len() {
        return Err(Error::InvalidArgument(format!(
            "label at {t} with horizon {horizon} runs past {} prices",
            mid.len()
        )));
    }
    let delta = mid[t + horizon] - mid[t];
    let threshold = 0.5 * sigma;
    Ok(if sigma == 0.0 {
        if delta > 0.0 {
            Label::Up
        } else if delta < 0.0 {
            Label::Down
        } else {
            Label::Neutral
        }
    } else if delta >= threshold {
        Label::Up
    } else if delta <= -threshold {
        Label::Down
    } else {
        Label::Neutral
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Window (steps) for realized volatility.
    pub window: usize,
    /// Rolling z-score window (steps).
    pub zscore_window: usize,
    pub zscore_floor: f64,
    /// Forward horizon of the movement label, milliseconds.
    pub label_horizon_ms: f64,
    /// Feature columns, in order, that a training dataset must carry.
    pub columns: Vec<String>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window: 20,
            zscore_window: 18_000,
            zscore_floor: 1e-8,
            label_horizon_ms: 500.0,
            columns: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl FeatureConfig {
    /// Checks a dataset's feature columns against `columns`, naming the first difference.
    pub fn check_columns(&self, names: &[String]) -> Result<()> {
        for (i, want) in self.columns.iter().enumerate() {
            match names.get(i) {
                Some(got) if got == want => {}
                Some(got) => {
                    return Err(Error::Data(format!("feature column {i} is '{got}', config expects '{want}'")))
                }
                None => return Err(Error::Data(format!("dataset lacks feature column '{want}'"))),
            }
        }
        if let Some(extra) = names.get(self.columns.len()) {
            return Err(Error::Data(format!("dataset has unexpected feature column '{extra}'")));
        }
        Ok(())
    }
}

/// A normalized, labeled feature table. Warm-up rows are already removed.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub timestamps: Vec<u64>,
    /// Row-major `rows × m` normalized features.
    pub features: Vec<f64>,
    pub mid: Vec<f64>,
    pub arrival_count: Vec<u32>,
    pub true_regime: Vec<Option<usize>>,
    pub label: Vec<Option<Label>>,
}

impl Dataset {
    pub fn empty(feature_names: Vec<String>) -> Self {
        Self {
            feature_names,
            timestamps: Vec::new(),
            features: Vec::new(),
            mid: Vec::new(),
            arrival_count: Vec::new(),
            true_regime: Vec::new(),
            label: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let m = self.feature_dim();
        &self.features[t * m..(t + 1) * m]
    }

    /// Snapshot interval in seconds inferred from the timestamps.
    pub fn interval_seconds(&self) -> Option<f64> {
        (self.timestamps.len() >= 2).then(|| (self.timestamps[1] - self.timestamps[0]) as f64 * 1e-9)
    }

    /// Rows `range` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        let m = self.feature_dim();
        Dataset {
            feature_names: self.feature_names.clone(),
            timestamps: self.timestamps[start..end].to_vec(),
            features: self.features[start * m..end * m].to_vec(),
            mid: self.mid[start..end].to_vec(),
            arrival_count: self.arrival_count[start..end].to_vec(),
            true_regime: self.true_regime[start..end].to_vec(),
            label: self.label[start..end].to_vec(),
        }
    }

    pub fn columns(&self) -> Vec<String> {
        let mut c = vec!["timestamp_ns".to_string()];
        c.extend(self.feature_names.iter().cloned());
        c.extend(["mid", "arrival_count", "true_regime", "label"].map(String::from));
        c
    }

    pub fn write_text<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        writeln!(w, "{}", self.columns().join(","))?;
        for t in 0..self.len() {
            write!(w, "{}", self.timestamps[t])?;
            for x in self.row(t) {
                write!(w, ",{x:?}")?;
            }
            write!(w, ",{:?},{}", self.mid[t], self.arrival_count[t])?;
            match self.true_regime[t] {
                Some(r) => write!(w, ",{r}")?,
                None => write!(w, ",NA")?,
            }
            match self.label[t] {
                Some(l) => writeln!(w, ",{}", l.sign())?,
                None => writeln!(w, ",NA")?,
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_text<R: Read>(r: R) -> Result<Dataset> {
        let mut lines = BufReader::new(r).lines();
        let header = lines.next().ok_or_else(|| Error::Data("dataset file is empty".into()))??;
        let cols: Vec<&str> = header.trim_end().split(',').collect();
        let n = cols.len();
        if n < 5 || cols[0] != "timestamp_ns" || cols[n - 4..] != ["mid", "arrival_count", "true_regime", "label"] {
            return Err(Error::Data(format!("unexpected dataset header: {header}")));
        }
        let mut ds = Dataset::empty(cols[1..n - 4].iter().map(|s| s.to_string()).collect());
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != n {
                return Err(Error::Data(format!("line {} has {} fields, expected {n}", lineno + 2, f.len())));
            }
            let bad = |c: usize| Error::Data(format!("line {}: cannot parse column {}", lineno + 2, cols[c]));
            ds.timestamps.push(f[0].parse().map_err(|_| bad(0))?);
            for c in 1..n - 4 {
                ds.features.push(f[c].parse().map_err(|_| bad(c))?);
            }
            ds.mid.push(f[n - 4].parse().map_err(|_| bad(n - 4))?);
            ds.arrival_count.push(f[n - 3].parse().map_err(|_| bad(n - 3))?);
            ds.true_regime.push(if f[n - 2] == "NA" { None } else { Some(f[n - 2].parse().map_err(|_| bad(n - 2))?) });
            ds.label.push(match f[n - 1] {
                "NA" => None,
                s => {
                    let v: i32 = s.parse().map_err(|_| bad(n - 1))?;
                    Some(Label::from_class((v + 1) as usize).ok_or_else(|| bad(n - 1))?)
                }
            });
        }
        Ok(ds)
    }

    /// Little-endian binary twin: magic, version (u32), column count (u32),
    /// row count (u64), then row-major f64 values with NaN for missing entries.
    pub fn write_binary<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        let cols = self.feature_dim() + 5;
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        w.write_all(&(cols as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for t in 0..self.len() {
            w.write_all(&(self.timestamps[t] as f64).to_le_bytes())?;
            for x in self.row(t) {
                w.write_all(&x.to_le_bytes())?;
            }
            let tail = [
                self.mid[t],
                f64::from(self.arrival_count[t]),
                self.true_regime[t].map_or(f64::NAN, |r| r as f64),
                self.label[t].map_or(f64::NAN, |l| f64::from(l.sign())),
            ];
            for x in tail {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(r: R) -> Result<Dataset> {
        let mut r = BufReader::new(r);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Format("not an AGAD dataset".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        r.read_exact(&mut b4)?;
        let cols = u32::from_le_bytes(b4) as usize;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let rows = u64::from_le_bytes(b8) as usize;
        if cols < 5 {
            return Err(Error::Format(format!("dataset has {cols} columns")));
        }
        let m = cols - 5;
        let names = if m == FEATURE_NAMES.len() {
            FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
        } else {
            (0..m).map(|i| format!("f{i}")).collect()
        };
        let mut ds = Dataset::empty(names);
        let mut row = vec![0.0; cols];
        for _ in 0..rows {
            for v in row.iter_mut() {
                r.read_exact(&mut b8)?;
                *v = f64::from_le_bytes(b8);
            }
            ds.timestamps.push(row[0] as u64);
            ds.features.extend_from_slice(&row[1..1 + m]);
            ds.mid.push(row[1 + m]);
            ds.arrival_count.push(row[2 + m] as u32);
            ds.true_regime.push((!row[3 + m].is_nan()).then(|| row[3 + m] as usize));
            ds.label.push(if row[4 + m].is_nan() { None } else { Label::from_class((row[4 + m] + 1.0) as usize) });
        }
        Ok(ds)
    }

    /// Reads either format, chosen by the leading magic bytes.
    pub fn load(path: &Path) -> Result<Dataset> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(DATASET_MAGIC) {
            Dataset::read_binary(&bytes[..])
        } else {
            Dataset::read_text(&bytes[..])
        }
    }
}

/// Normalizes and labels raw frames. Rows whose feature window or z-score
/// window is not yet full are dropped.
pub fn build_dataset(frames: &[FeatureFrame], interval_ms: f64, cfg: &FeatureConfig) -> Result<Dataset> {
    let names: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    let m = names.len();
    let n = frames.len();
    let mut normalized = vec![0.0; n * m];
    for j in 0..m {
        let col: Vec<f64> = frames.iter().map(|f| f.x[j]).collect();
        let z = rolling_zscore(&col, cfg.zscore_window, cfg.zscore_floor)?;
        for t in 0..n {
            normalized[t * m + j] = z[t];
        }
    }
    let horizon = (cfg.label_horizon_ms / interval_ms).round().max(1.0) as usize;
    let mid: Vec<f64> = frames.iter().map(|f| f.mid).collect();
    // Label scale: rolling std of horizon-length mid changes observed up to t.
    let mut moves = vec![0.0; n];
    for t in horizon..n {
        moves[t] = mid[t] - mid[t - horizon];
    }
    let mut ds = Dataset::empty(names);
    let start = frames.iter().position(|f| !f.warmup).unwrap_or(n);
    let first = start.max(horizon + cfg.zscore_window.saturating_sub(1));
    for t in first.min(n)..n {
        let lo = (t + 1).saturating_sub(cfg.zscore_window).max(horizon);
        let sigma = population_std(&moves[lo..=t]);
        let lbl = if t + horizon < n { Some(label(&mid, t, horizon, sigma)?) } else { None };
        ds.timestamps.push(frames[t].timestamp_ns);
        ds.features.extend_from_slice(&normalized[t * m..(t + 1) * m]);
        ds.mid.push(frames[t].mid);
        ds.arrival_count.push(frames[t].arrival_count);
        ds.true_regime.push(frames[t].true_regime);
        ds.label.push(lbl);
    }
    Ok(ds)
}
