use std::path::Path;
use std::process::{Command, Output};

use fhrformer::cli::{self, load_split};
use fhrformer::config::{Preset, RunConfig};
use fhrformer::{checkpoint, csvio};
use fhrformer_core::apps::SplitTag;
use fhrformer_core::exec::Sequential;
use fhrformer_core::metrics::METRIC_KEYS;
use fhrformer_core::trainer;

const SMALL: &str = r#"
[model]
signal_length = 64
patch_size = 8
d_model = 8
ffn_dim = 16
encoder_layers = 1
decoder_layers = 1
heads = 2

[train]
batch_size = 4
max_epochs = 3

[synth]
count = 30
length = [60, 80]

[forecast]
context_len = 32
step = 8
horizon = 16
passes = 3
"#;

fn fhrformer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fhrformer")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let o = fhrformer(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["synth", "--count", "100", "--seed", "7", "--out", p(d)]);
    }
    for f in [cli::RAW_FILE, "train.fhrd", "val.fhrd", "test.fhrd", cli::CONFIG_FILE] {
        let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f} differs");
    }
    let c = dir.path().join("c");
    ok(&["synth", "--count", "100", "--seed", "8", "--out", p(&c)]);
    assert_ne!(std::fs::read(a.join(cli::RAW_FILE)).unwrap(), std::fs::read(c.join(cli::RAW_FILE)).unwrap());
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg_path = dir.path().join("small.toml");
    std::fs::write(&cfg_path, SMALL).unwrap();
    let c = p(&cfg_path);
    let o = p(&out);
    ok(&["synth", "--config", c, "--out", o]);

    // prep from the raw CSV reproduces the synthetic split files
    let re = dir.path().join("re");
    ok(&["prep", "--config", c, "--input", p(&out.join(cli::RAW_FILE)), "--out", p(&re)]);
    for f in ["train.fhrd", "val.fhrd", "test.fhrd"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(re.join(f)).unwrap());
    }

    ok(&["train", "--config", c, "--out", o]);
    let log = std::fs::read_to_string(out.join(cli::TRAIN_LOG_FILE)).unwrap();
    assert_eq!(log.lines().next().unwrap(), "epoch,train_loss,val_loss,lr,stale");
    assert_eq!(log.lines().count(), 4);

    // the saved checkpoint reproduces the reported best validation loss
    let summary = std::fs::read_to_string(out.join(cli::TRAIN_SUMMARY_FILE)).unwrap();
    let best: f64 = summary.lines().find_map(|l| l.strip_prefix("best_val_loss ")).unwrap().parse().unwrap();
    let cfg = RunConfig::from_toml(Preset::Toy, SMALL).unwrap();
    let model = checkpoint::load(&out.join(cli::CHECKPOINT_FILE)).unwrap();
    let val = load_split(&out, SplitTag::Validation).unwrap();
    let again = trainer::validate(&model, &val.records, &cfg.train_config(), &Sequential).unwrap();
    assert!((again - best).abs() <= 1e-6, "{again} vs {best}");

    ok(&["eval", "--config", c, "--out", o]);
    let eval = std::fs::read_to_string(out.join(cli::EVAL_FILE)).unwrap();
    let mut lines = eval.lines();
    assert_eq!(lines.next().unwrap().split(',').collect::<Vec<_>>(), METRIC_KEYS);
    assert_eq!(lines.next().unwrap().split(',').count(), 8);
    assert!(lines.next().is_none());
    let record = std::fs::read_to_string(out.join(cli::METRICS_FILE)).unwrap();
    assert!(csvio::parse_metrics_record(&record).is_some());

    ok(&["inpaint", "--config", c, "--out", o, "--plot"]);
    assert_eq!(std::fs::read_to_string(out.join(cli::INPAINT_FILE)).unwrap().lines().count(), 65);
    assert!(out.join("inpaint.svg").exists());

    ok(&["forecast", "--config", c, "--out", o, "--plot", "--passes", "4"]);
    let fc = std::fs::read_to_string(out.join(cli::FORECAST_FILE)).unwrap();
    assert_eq!(fc.lines().next().unwrap(), "sample_index,value,lower95,upper95");
    assert_eq!(fc.lines().count(), 17);
    assert!(out.join("forecast.svg").exists());
    let echoed = std::fs::read_to_string(out.join(cli::CONFIG_FILE)).unwrap();
    assert!(echoed.contains("passes = 4"));

    let sweep = dir.path().join("sweep");
    ok(&["sweep", "--config", c, "--data", o, "--out", p(&sweep), "--patch-sizes", "8,16", "--mask-ratios", "0.2"]);
    let rows = std::fs::read_to_string(sweep.join(cli::SWEEP_FILE)).unwrap();
    assert_eq!(rows.lines().count(), 3);
    assert!(rows.lines().skip(1).all(|l| l.ends_with(",ok")));
}

fn error_line(o: &Output) -> String {
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr).into_owned();
    assert_eq!(err.lines().count(), 1, "{err}");
    err
}

#[test]
fn failures_are_one_machine_readable_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = p(dir.path());
    let e = error_line(&fhrformer(&["eval", "--out", o, "--checkpoint", "/nonexistent/best.fhrf"]));
    assert!(e.starts_with("error: kind=io msg="), "{e}");
    let e = error_line(&fhrformer(&["train", "--bogus"]));
    assert!(e.starts_with("error: kind=usage msg="), "{e}");
    let e = error_line(&fhrformer(&["prep", "--out", o, "--input", "/nonexistent.csv"]));
    assert!(e.starts_with("error: kind=csv"), "{e}");
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[model]\nheads = 3\n").unwrap();
    let e = error_line(&fhrformer(&["synth", "--out", o, "--config", p(&bad)]));
    assert!(e.starts_with("error: kind=config"), "{e}");
    let e = error_line(&fhrformer(&["synth", "--out", o, "--patch-size", "7"]));
    assert!(e.starts_with("error: kind=config"), "{e}");
}

#[test]
fn help_lists_preset_defaults() {
    let o = fhrformer(&["--help"]);
    assert!(o.status.success());
    let h = String::from_utf8_lossy(&o.stdout);
    for flag in ["--config", "--seed", "--patch-size", "--mask-ratio", "--out", "--preset", "--plot"] {
        assert!(h.contains(flag), "{flag} missing");
    }
    assert!(h.contains("toy=30, paper=30"));
    assert!(h.contains("batch=128 lr=0.0001"));
    let o = fhrformer(&["forecast", "--help"]);
    let h = String::from_utf8_lossy(&o.stdout);
    assert!(h.contains("toy=300, paper=300") && h.contains("toy=1200, paper=3600"));
}
