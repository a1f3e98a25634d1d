use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aga_core::checkpoint::Checkpoint;
use aga_core::data::{stationary_distribution, Dataset};

const TOY_MODEL: &str = r#"
[model]
states = 3
hidden = 8
heads = 2
lookback = 8
dilations = [1, 2]
wavelet_levels = 2
coarse_window = 8
coarse_stride = 4
flow_layers = 2
flow_hidden = 8
signal_window = 10
gru_hidden = 8
mlp_hidden = 8
"#;

struct Scratch(PathBuf);

impl Scratch {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("aga_cli_{tag}_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        Scratch(dir)
    }

    fn config(&self, name: &str, text: &str) -> PathBuf {
        let p = self.0.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.0.join(rel)
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn aga(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aga"))
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn toy_config(extra: &str) -> String {
    format!("seed = 5\n[generator]\nhorizon = 260\n[features]\nzscore_window = 30\n[train]\nmax_epochs = 2\n[eval]\nlatency_steps = 50\n{TOY_MODEL}{extra}")
}

#[test]
fn generate_is_deterministic_per_seed() {
    let s = Scratch::new("gen");
    let cfg = s.config("run.toml", "[generator]\nhorizon = 500\n[features]\nzscore_window = 40\n");
    ok(&aga("generate", &cfg, &s.path("a"), &["--seed", "9"]));
    ok(&aga("generate", &cfg, &s.path("b"), &["--seed", "9"]));
    ok(&aga("generate", &cfg, &s.path("c"), &["--seed", "10"]));
    for f in ["dataset.agad", "dataset.csv"] {
        let a = std::fs::read(s.path("a").join(f)).unwrap();
        assert_eq!(a, std::fs::read(s.path("b").join(f)).unwrap(), "{f}");
        assert_ne!(a, std::fs::read(s.path("c").join(f)).unwrap(), "{f}");
    }
    let echo = std::fs::read_to_string(s.path("a/config.toml")).unwrap();
    assert!(echo.starts_with("seed = 9\n"));
}

#[test]
fn zero_horizon_gives_an_empty_dataset() {
    let s = Scratch::new("empty");
    let cfg = s.config("run.toml", "[generator]\nhorizon = 0\n");
    let out = ok(&aga("generate", &cfg, &s.path("o"), &[]));
    assert!(out.contains("rows = 0"));
    let csv = std::fs::read_to_string(s.path("o/dataset.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    assert!(csv.starts_with("timestamp_ns,"));
    assert!(Dataset::load(&s.path("o/dataset.agad")).unwrap().is_empty());
}

#[test]
fn regime_frequencies_track_the_stationary_distribution() {
    let s = Scratch::new("stat");
    let cfg = s.config("run.toml", "[generator]\nhorizon = 300000\n[features]\nzscore_window = 100\n");
    let out = ok(&aga("generate", &cfg, &s.path("o"), &[]));
    let pi = stationary_distribution(&aga_core::data::GeneratorConfig::default().transition);
    for (i, p) in pi.iter().enumerate() {
        let line = out.lines().find(|l| l.starts_with(&format!("regime_{i} = "))).unwrap();
        let f: f64 = line.split_whitespace().nth(2).unwrap().parse().unwrap();
        assert!((f - p).abs() < 0.05, "regime {i}: {f} vs {p}");
    }
}

#[test]
fn train_writes_a_verifiable_reproducible_checkpoint() {
    let s = Scratch::new("train");
    let cfg = s.config("run.toml", &toy_config(""));
    ok(&aga("generate", &cfg, &s.path("o"), &[]));
    let rows = Dataset::load(&s.path("o/dataset.agad")).unwrap().len();
    assert!((180..=230).contains(&rows), "{rows}");
    ok(&aga("train", &cfg, &s.path("o"), &[]));
    let first = std::fs::read(s.path("o/model.agah")).unwrap();
    let ck = Checkpoint::load(&s.path("o/model.agah")).unwrap();
    assert_eq!(ck.to_bytes().unwrap(), first);
    let history = std::fs::read_to_string(s.path("o/history.tsv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    ok(&aga("train", &cfg, &s.path("o"), &[]));
    assert_eq!(std::fs::read(s.path("o/model.agah")).unwrap(), first);

    let dataset = "[paths]\ndataset = \"o/dataset.agad\"\n";
    let cfg2 = s.config("ablate.toml", &(toy_config("") + dataset));
    ok(&aga("train", &cfg2, &s.path("ab"), &["--ablate", "no_aga"]));
    let ab = Checkpoint::load(&s.path("ab/model.agah")).unwrap();
    assert!(ab.model.config.ablations.no_aga);
    assert!(ab.model.param_count() < ck.model.param_count());
    assert!(std::fs::read_to_string(s.path("ab/config.toml")).unwrap().contains("no_aga = true"));
}

#[test]
fn evaluate_predict_and_inspect_write_their_tables() {
    let s = Scratch::new("eval");
    let cfg = s.config("run.toml", &toy_config(""));
    let o = s.path("o");
    ok(&aga("generate", &cfg, &o, &[]));
    ok(&aga("train", &cfg, &o, &[]));
    let ds = Dataset::load(&o.join("dataset.agad")).unwrap();
    let warm = Checkpoint::load(&o.join("model.agah")).unwrap().model.config.warmup();

    let report = ok(&aga("evaluate", &cfg, &o, &[]));
    for key in ["accuracy", "mcc", "regime_f1", "nll_per_step", "sharpe", "latency_p99_ms"] {
        assert!(report.lines().any(|l| l.starts_with(&format!("{key} = "))), "{key}");
    }
    let pnl = std::fs::read_to_string(o.join("pnl.tsv")).unwrap();
    assert_eq!(pnl.lines().count(), ds.len() - warm);

    ok(&aga("predict", &cfg, &o, &[]));
    let pred = std::fs::read_to_string(o.join("predictions.tsv")).unwrap();
    assert_eq!(pred.lines().count() - 1, ds.len() - warm);
    assert_eq!(pred.lines().next().unwrap().split('\t').count(), 6 + 3);

    ok(&aga("inspect", &cfg, &o, &[]));
    let ins = std::fs::read_to_string(o.join("inspect.tsv")).unwrap();
    let header: Vec<&str> = ins.lines().next().unwrap().split('\t').collect();
    assert_eq!(header.len(), 5 + 2 + 1 + 9 + 1);
    assert_eq!(ins.lines().count() - 1, ds.len() - warm);
}

#[test]
fn predict_is_causal_under_truncation() {
    let s = Scratch::new("causal");
    let cfg = s.config("run.toml", &toy_config(""));
    let o = s.path("o");
    ok(&aga("generate", &cfg, &o, &[]));
    ok(&aga("train", &cfg, &o, &[]));
    ok(&aga("predict", &cfg, &o, &[]));
    let full = std::fs::read_to_string(o.join("predictions.tsv")).unwrap();

    let ds = Dataset::load(&o.join("dataset.agad")).unwrap();
    let cut = ds.len() - 40;
    let mut csv = Vec::new();
    ds.slice(0, cut).write_text(&mut csv).unwrap();
    std::fs::write(s.path("short.csv"), csv).unwrap();
    let ck = s.path("o/model.agah");
    let cfg2 = s.config("short.toml", &toy_config(&format!("[paths]\ndataset = \"short.csv\"\ncheckpoint = {:?}\n", ck)));
    ok(&aga("predict", &cfg2, &s.path("t"), &[]));
    let short = std::fs::read_to_string(s.path("t/predictions.tsv")).unwrap();
    let n = short.lines().count();
    assert!(n > 10);
    assert_eq!(short.lines().collect::<Vec<_>>(), full.lines().take(n).collect::<Vec<_>>());
}

#[test]
fn inspect_on_constant_prices_has_unit_temperature() {
    let s = Scratch::new("flat");
    let cfg = s.config("run.toml", &toy_config(""));
    let o = s.path("o");
    ok(&aga("generate", &cfg, &o, &[]));
    ok(&aga("train", &cfg, &o, &[]));
    let mut ds = Dataset::load(&o.join("dataset.agad")).unwrap();
    ds.mid.iter_mut().for_each(|m| *m = 100.0);
    let mut csv = Vec::new();
    ds.write_text(&mut csv).unwrap();
    std::fs::write(s.path("flat.csv"), csv).unwrap();
    let cfg2 = s.config("flat.toml", &toy_config("[paths]\ndataset = \"flat.csv\"\ncheckpoint = \"o/model.agah\"\n"));
    ok(&aga("inspect", &cfg2, &s.path("f"), &[]));
    let text = std::fs::read_to_string(s.path("f/inspect.tsv")).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split('\t').collect();
    let (si, ti) = (header.iter().position(|h| *h == "sigma").unwrap(), header.iter().position(|h| *h == "tau").unwrap());
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        assert!(f[si].parse::<f64>().unwrap().abs() < 1e-9, "{line}");
        assert!((f[ti].parse::<f64>().unwrap() - 1.0).abs() < 1e-9, "{line}");
    }
}

#[test]
fn exit_codes_follow_the_error_class() {
    let s = Scratch::new("codes");
    let o = s.path("o");
    let bad_key = s.config("bad.toml", "[model]\nhiden = 3\n");
    let out = aga("generate", &bad_key, &o, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hiden"));

    let cfg = s.config("run.toml", &toy_config(""));
    let out = aga("train", &cfg, &o, &["--ablate", "no_such_flag"]);
    assert_eq!(out.status.code(), Some(2));

    let out = aga("train", &cfg, &s.path("missing"), &[]);
    assert_eq!(out.status.code(), Some(3));

    ok(&aga("generate", &cfg, &o, &[]));
    let renamed = s.config("renamed.toml", &toy_config("").replace(
        "zscore_window = 30",
        "zscore_window = 30\ncolumns = [\"price_imbalance\", \"volume_imbalance\", \"order_flow\", \"micro_mid_diff\", \"realized_vol\", \"depth\", \"spread\"]",
    ));
    let out = aga("train", &renamed, &o, &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("order_flow"));

    let hot = s.config("hot.toml", &toy_config("").replace("max_epochs = 2", "max_epochs = 2\nlearning_rate = 1e300\nclip_norm = 1e300"));
    let out = aga("train", &hot, &o, &[]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}
