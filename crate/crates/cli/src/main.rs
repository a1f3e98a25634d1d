use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aga_core::checkpoint::Checkpoint;
use aga_core::config::RunConfig;
use aga_core::data::{stationary_distribution, Dataset};
use aga_core::evaluate::{evaluate, EvalOptions};
use aga_core::model::Model;
use aga_core::train::{train, EpochRecord};
use aga_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aga", version, about = "Adaptive-granularity neural HMM for order-flow data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an order book and write a labeled dataset.
    Generate(Common),
    /// Fit a model and write the best checkpoint.
    Train(Common),
    /// Score a checkpoint on a dataset.
    Evaluate(Common),
    /// Write causal per-step class and state probabilities.
    Predict(Common),
    /// Write per-step diagnostics (signals, gate, attention, temperature, transitions, Viterbi path).
    Inspect(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated ablation flags added to the model config.
    #[arg(long, value_delimiter = ',')]
    ablate: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (run, common): (fn(&RunConfig, &Path) -> Result<()>, &Common) = match &cli.command {
        Command::Generate(c) => (cmd_generate, c),
        Command::Train(c) => (cmd_train, c),
        Command::Evaluate(c) => (cmd_evaluate, c),
        Command::Predict(c) => (cmd_predict, c),
        Command::Inspect(c) => (cmd_inspect, c),
    };
    match resolve(common).and_then(|cfg| run(&cfg, &common.out)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn resolve(c: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.apply_ablations(&c.ablate.join(","))?;
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::Data(format!("cannot create {}: {e}", out.display())))?;
    write(&out.join("config.toml"), &cfg.to_toml()?)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

fn dataset_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.paths.dataset.clone().unwrap_or_else(|| out.join("dataset.agad"))
}

fn checkpoint_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.paths.checkpoint.clone().unwrap_or_else(|| out.join("model.agah"))
}

fn load_pair(cfg: &RunConfig, out: &Path) -> Result<(Checkpoint, Dataset)> {
    let ck = Checkpoint::load(&checkpoint_path(cfg, out))?;
    let ds = Dataset::load(&dataset_path(cfg, out))?;
    ck.check_columns(&ds.feature_names)?;
    Ok((ck, ds))
}

fn cell(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.9}")
    } else {
        "NA".into()
    }
}

fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<()> {
    prepare_out(cfg, out)?;
    let syn = cfg.synthesize()?;
    let ds = &syn.dataset;
    let mut bin = Vec::new();
    ds.write_binary(&mut bin)?;
    std::fs::write(out.join("dataset.agad"), bin)?;
    let mut text = Vec::new();
    ds.write_text(&mut text)?;
    std::fs::write(out.join("dataset.csv"), text)?;

    let k = cfg.generator.transition.len();
    let mut counts = vec![0usize; k];
    syn.regimes.iter().for_each(|&r| counts[r] += 1);
    let pi = stationary_distribution(&cfg.generator.transition);
    let mut labels = [0usize; 4];
    for l in &ds.label {
        labels[l.map_or(3, |l| l.class())] += 1;
    }
    println!("snapshots = {}", syn.regimes.len());
    println!("events = {}", syn.events);
    println!("rows = {}", ds.len());
    println!("regimes = {k}");
    for (i, (c, p)) in counts.iter().zip(&pi).enumerate() {
        let f = if syn.regimes.is_empty() { 0.0 } else { *c as f64 / syn.regimes.len() as f64 };
        println!("regime_{i} = {f:.4} (stationary {p:.4})");
    }
    println!("labels_down = {}", labels[0]);
    println!("labels_neutral = {}", labels[1]);
    println!("labels_up = {}", labels[2]);
    println!("labels_missing = {}", labels[3]);
    Ok(())
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = Dataset::load(&dataset_path(cfg, out))?;
    cfg.features.check_columns(&ds.feature_names)?;
    prepare_out(cfg, out)?;
    let mut model = Model::new(cfg.model.clone(), ds.feature_dim(), cfg.seed)?;
    let mut report = |r: &EpochRecord| {
        eprintln!(
            "epoch {:>3}  train {:.5}  val {:.5}  lr {:.2e}  {:.1}s",
            r.epoch, r.train.total, r.validation.total, r.learning_rate, r.seconds
        )
    };
    let history = train(&mut model, &ds, &cfg.train, cfg.seed, Some(&mut report))?;
    write(&out.join("history.tsv"), &history.to_text())?;
    let params = model.param_count();
    Checkpoint::new(model, ds.feature_names.clone()).save(&out.join("model.agah"))?;
    println!("parameters = {params}");
    println!("best_epoch = {}", history.best_epoch.map_or("NA".into(), |e| e.to_string()));
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (ck, ds) = load_pair(cfg, out)?;
    prepare_out(cfg, out)?;
    let opts = EvalOptions { from: 0, latency_steps: cfg.eval.latency_steps, latency_warmup: cfg.eval.latency_warmup };
    let ev = evaluate(&ck.model, &ds, &cfg.trade, &opts)?;
    let report = ev.report.to_text();
    write(&out.join("metrics.txt"), &report)?;
    let mut pnl = String::from("row\ttimestamp_ns\tposition\treturn\tpnl\n");
    for (i, (r, c)) in ev.trade.returns.iter().zip(&ev.trade.pnl).enumerate() {
        let t = ev.first_row + i;
        let pos = aga_core::data::Label::from_class(ev.inference.predictions[t - ev.inference.start]).map_or(0, |l| l.sign());
        let _ = writeln!(pnl, "{t}\t{}\t{pos}\t{}\t{}", ds.timestamps[t], cell(*r), cell(*c));
    }
    write(&out.join("pnl.tsv"), &pnl)?;
    print!("{report}");
    Ok(())
}

fn cmd_predict(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (ck, ds) = load_pair(cfg, out)?;
    prepare_out(cfg, out)?;
    let model = &ck.model;
    let inf = model.infer(&model.prepare(&ds)?)?;
    let k = model.config.states;
    let mut s = String::from("row\ttimestamp_ns\tclass\tp_down\tp_neutral\tp_up");
    (0..k).for_each(|j| {
        let _ = write!(s, "\tfiltered_{j}");
    });
    s.push('\n');
    for r in 0..inf.len() {
        let t = inf.start + r;
        let _ = write!(s, "{t}\t{}\t{}", ds.timestamps[t], inf.predictions[r] as i64 - 1);
        for v in inf.class_probs.row(r).iter().chain(inf.filtered.row(r)) {
            let _ = write!(s, "\t{}", cell(*v));
        }
        s.push('\n');
    }
    write(&out.join("predictions.tsv"), &s)?;
    println!("rows = {}", inf.len());
    Ok(())
}

fn cmd_inspect(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (ck, ds) = load_pair(cfg, out)?;
    prepare_out(cfg, out)?;
    let model = &ck.model;
    let prep = model.prepare(&ds)?;
    let inf = model.infer(&prep)?;
    let (k, heads) = (model.config.states, model.config.heads);
    let mut s = String::from("row\ttimestamp_ns\tsigma\tlambda\tgate_mean");
    (0..heads).for_each(|h| {
        let _ = write!(s, "\tentropy_{h}");
    });
    s.push_str("\ttau");
    for i in 0..k {
        for j in 0..k {
            let _ = write!(s, "\tp_{i}_{j}");
        }
    }
    s.push_str("\tviterbi\n");
    for r in 0..inf.len() {
        let t = inf.start + r;
        let _ = write!(s, "{t}\t{}\t{}\t{}\t{}", ds.timestamps[t], cell(prep.sigma[t]), cell(prep.lambda[t]), cell(inf.gate_mean[r]));
        for h in 0..heads {
            let _ = write!(s, "\t{}", cell(inf.head_entropy.get(r, h)));
        }
        let _ = write!(s, "\t{}", cell(inf.tau[r]));
        for v in inf.transitions.row(r) {
            let _ = write!(s, "\t{}", if r == 0 { "NA".into() } else { cell(*v) });
        }
        let _ = writeln!(s, "\t{}", inf.viterbi[r]);
    }
    write(&out.join("inspect.tsv"), &s)?;
    println!("rows = {}", inf.len());
    Ok(())
}
