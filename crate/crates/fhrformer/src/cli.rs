//! Command-line front end. `main` only forwards to [`run`], so the whole
//! pipeline is also callable in-process.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use fhrformer_core::apps::{
    build_dataset, forecast_interval, generate_synthetic, inpaint, DatasetContainer, SplitTag, Splits,
};
use fhrformer_core::numerics::NamedTensor;
use fhrformer_core::prep::{PrepConfig, PreparedSignal, RawRecord, BPM_MAX, MISSING};
use fhrformer_core::trainer::{self, EpochLog, Observer};
use fhrformer_core::FhrFormer;

use crate::config::{Preset, RunConfig};
use crate::error::{CliError, Result};
use crate::threads::ThreadPool;
use crate::{checkpoint, container, csvio, plot};

pub const CONFIG_FILE: &str = "config.toml";
pub const RAW_FILE: &str = "raw.csv";
pub const CHECKPOINT_FILE: &str = "best.fhrf";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const TRAIN_SUMMARY_FILE: &str = "train_summary.txt";
pub const METRICS_FILE: &str = "metrics.txt";
pub const EVAL_FILE: &str = "eval.csv";
pub const PER_SIGNAL_FILE: &str = "eval_per_signal.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const INPAINT_FILE: &str = "inpaint.csv";
pub const FORECAST_FILE: &str = "forecast.csv";

pub fn split_file(tag: SplitTag) -> String {
    format!("{}.fhrd", tag.name())
}

/// Masked transformer autoencoder for fetal heart rate signals.
#[derive(Debug, Parser)]
#[command(name = "fhrformer", version)]
pub struct Cli {
    /// TOML file merged over the preset
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Root seed for every random stream
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Samples per patch
    #[arg(long, global = true, value_name = "N")]
    pub patch_size: Option<usize>,
    /// Fraction of eligible patches masked
    #[arg(long, global = true, value_name = "F")]
    pub mask_ratio: Option<f64>,
    /// Run directory for every output
    #[arg(long, global = true, value_name = "DIR", default_value = "run")]
    pub out: PathBuf,
    /// Configuration preset
    #[arg(long, global = true, value_enum, default_value = "toy")]
    pub preset: Preset,
    /// Also render SVG plots
    #[arg(long, global = true)]
    pub plot: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic recordings and split them into datasets
    Synth {
        /// Number of recordings
        #[arg(long, value_name = "N")]
        count: Option<usize>,
    },
    /// Preprocess a raw CSV (episode_id,sample_index,fhr_bpm) into datasets
    Prep {
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
    /// Train on the train split, early-stopping on the validation split
    Train {
        /// Directory holding the split files (defaults to --out)
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Train and evaluate one model per patch size and mask ratio
    Sweep {
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', value_name = "N,..", default_value = "15,30,60")]
        patch_sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', value_name = "F,..", default_value = "0.1,0.15,0.2")]
        mask_ratios: Vec<f64>,
    },
    /// Evaluate a checkpoint on the test split
    Eval {
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Defaults to best.fhrf in the run directory
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Fill the missing regions of one test signal
    Inpaint {
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Test record index
        #[arg(long, value_name = "N", default_value_t = 0)]
        index: usize,
    },
    /// Recursive forecast with a Monte Carlo dropout band for one test signal
    Forecast {
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "N", default_value_t = 0)]
        index: usize,
        /// Samples to forecast
        #[arg(long, value_name = "N")]
        horizon: Option<usize>,
        /// Samples predicted per iteration
        #[arg(long, value_name = "N")]
        step: Option<usize>,
        /// Context window in samples
        #[arg(long, value_name = "N")]
        context_len: Option<usize>,
        /// Dropout passes for the band
        #[arg(long, value_name = "N")]
        passes: Option<usize>,
    },
}

/// The clap command with preset defaults spliced into the help texts.
pub fn command() -> clap::Command {
    let toy = RunConfig::preset(Preset::Toy);
    let paper = RunConfig::preset(Preset::Paper);
    let both = |f: &dyn Fn(&RunConfig) -> String| format!("[presets: toy={}, paper={}]", f(&toy), f(&paper));
    let seed = both(&|c| c.seed.to_string());
    let patch = both(&|c| c.model.patch_size.to_string());
    let ratio = both(&|c| c.model.mask_ratio.to_string());
    let count = both(&|c| c.synth.count.to_string());
    let horizon = both(&|c| c.forecast.horizon.to_string());
    let step = both(&|c| c.forecast.step.to_string());
    let context = both(&|c| c.forecast.context_len.to_string());
    let passes = both(&|c| c.forecast.passes.to_string());
    let train = format!(
        "Model and training defaults:\n  toy:   {}\n  paper: {}",
        summary(&toy),
        summary(&paper)
    );
    Cli::command()
        .mut_arg("seed", |a| a.help(format!("Root seed for every random stream {seed}")))
        .mut_arg("patch_size", |a| a.help(format!("Samples per patch {patch}")))
        .mut_arg("mask_ratio", |a| a.help(format!("Fraction of eligible patches masked {ratio}")))
        .mut_subcommand("synth", |s| s.mut_arg("count", |a| a.help(format!("Number of recordings {count}"))))
        .mut_subcommand("forecast", |s| {
            s.mut_arg("horizon", |a| a.help(format!("Samples to forecast {horizon}")))
                .mut_arg("step", |a| a.help(format!("Samples predicted per iteration {step}")))
                .mut_arg("context_len", |a| a.help(format!("Context window in samples {context}")))
                .mut_arg("passes", |a| a.help(format!("Dropout passes for the band {passes}")))
        })
        .after_help(train)
}

fn summary(c: &RunConfig) -> String {
    format!(
        "L={} p={} d_model={} ffn={} layers={}+{} heads={} dropout={} batch={} lr={} wd={} epochs={} patience={}",
        c.model.signal_length,
        c.model.patch_size,
        c.model.d_model,
        c.model.ffn_dim,
        c.model.encoder_layers,
        c.model.decoder_layers,
        c.model.heads,
        c.model.dropout,
        c.train.batch_size,
        c.train.learning_rate,
        c.train.weight_decay,
        c.train.max_epochs,
        c.train.early_stop_patience
    )
}

/// Parses `args` (program name first), runs the subcommand and returns
/// the process exit code. Help and version go to stdout; errors are one
/// `error: kind=... msg=...` line on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: kind=usage msg={first}");
            return 2;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: kind=usage msg={}", e.to_string().lines().next().unwrap_or(""));
            return 2;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: kind={} msg={}", e.kind(), one_line(&e.to_string()));
            1
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Preset, then config file, then flags.
pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(cli.preset, cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = cli.patch_size {
        cfg.model.patch_size = p;
    }
    if let Some(r) = cli.mask_ratio {
        cfg.model.mask_ratio = r;
    }
    match &cli.command {
        Command::Synth { count: Some(n) } => cfg.synth.count = *n,
        Command::Forecast { horizon, step, context_len, passes, .. } => {
            if let Some(v) = horizon {
                cfg.forecast.horizon = *v;
            }
            if let Some(v) = step {
                cfg.forecast.step = *v;
            }
            if let Some(v) = context_len {
                cfg.forecast.context_len = *v;
            }
            if let Some(v) = passes {
                cfg.forecast.passes = *v;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve(cli)?;
    let out = cli.out.as_path();
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    cfg.save(&out.join(CONFIG_FILE))?;
    let pool = ThreadPool::from_env();
    let data_dir = |d: &Option<PathBuf>| d.clone().unwrap_or_else(|| out.to_path_buf());
    let ckpt = |c: &Option<PathBuf>| c.clone().unwrap_or_else(|| out.join(CHECKPOINT_FILE));
    match &cli.command {
        Command::Synth { .. } => {
            let raw = generate_synthetic(&cfg.synth_spec(), cfg.synth.count)?;
            csvio::write_raw(&out.join(RAW_FILE), &raw)?;
            write_splits(out, &raw, &cfg)
        }
        Command::Prep { input } => {
            let raw = csvio::read_raw(input)?;
            write_splits(out, &raw, &cfg)
        }
        Command::Train { data } => train(out, &data_dir(data), &cfg, &pool),
        Command::Sweep { data, patch_sizes, mask_ratios } => {
            let dir = data_dir(data);
            let (tr, va, te) = (load_split(&dir, SplitTag::Train)?, load_split(&dir, SplitTag::Validation)?, load_split(&dir, SplitTag::Test)?);
            let rows = trainer::sweep(
                patch_sizes,
                mask_ratios,
                &cfg.model_config(),
                &cfg.train_config(),
                &tr.records,
                &va.records,
                &te.records,
                &pool,
            );
            csvio::write_sweep(&out.join(SWEEP_FILE), &rows)
        }
        Command::Eval { data, checkpoint } => {
            let model = checkpoint::load(&ckpt(checkpoint))?;
            let test = load_split(&data_dir(data), SplitTag::Test)?;
            let rows = trainer::evaluate_signals(&model, &test.records, cfg.model.mask_ratio, cfg.seed, &pool)?;
            let report = trainer::report_from(&model, &test.records, &rows)?;
            csvio::write_metrics_record(&out.join(METRICS_FILE), &report)?;
            csvio::write_metrics_csv(&out.join(EVAL_FILE), &report)?;
            csvio::write_per_signal(&out.join(PER_SIGNAL_FILE), &rows)
        }
        Command::Inpaint { data, checkpoint, index } => {
            let model = checkpoint::load(&ckpt(checkpoint))?;
            let test = load_split(&data_dir(data), SplitTag::Test)?;
            let signal = pick(&test, *index)?;
            let filled = inpaint(&model, signal)?;
            let bpm: Vec<f32> = filled.signal.values.iter().map(|v| v * BPM_MAX as f32).collect();
            csvio::write_series(&out.join(INPAINT_FILE), 0, &bpm)?;
            if cli.plot {
                let original = observed_bpm(signal);
                let fill: Vec<f64> = (0..signal.len())
                    .map(|t| if signal.missing_mask[t] == MISSING && t >= signal.pad_len() { bpm[t] as f64 } else { f64::NAN })
                    .collect();
                plot::save(
                    &out.join("inpaint.svg"),
                    &format!("episode {} inpainting", signal.episode_id),
                    &[
                        plot::Series { label: "observed", color: "black", start: 0, values: &original },
                        plot::Series { label: "inpainted", color: "crimson", start: 0, values: &fill },
                    ],
                )?;
            }
            Ok(())
        }
        Command::Forecast { data, checkpoint, index, .. } => {
            let model = checkpoint::load(&ckpt(checkpoint))?;
            let test = load_split(&data_dir(data), SplitTag::Test)?;
            let signal = pick(&test, *index)?;
            let fc = cfg.forecast_config();
            // skip the left padding so the context is all signal when it can be
            let start = signal.pad_len().min(signal.len().saturating_sub(fc.context_len));
            let end = start + fc.context_len;
            if end > signal.len() {
                return Err(CliError::Config(format!(
                    "context of {} samples does not fit a signal of {}",
                    fc.context_len,
                    signal.len()
                )));
            }
            let context = &signal.values[start..end];
            let result = forecast_interval(&model, context, &fc, cfg.forecast.passes, cfg.seed, &pool)?;
            csvio::write_forecast(&out.join(FORECAST_FILE), end, &result, BPM_MAX as f32)?;
            if cli.plot {
                let truth = observed_bpm(signal);
                let scale = |v: &[f32]| v.iter().map(|&x| x as f64 * BPM_MAX).collect::<Vec<_>>();
                let (mean, lo, hi) = (scale(&result.mean), scale(&result.lower95), scale(&result.upper95));
                plot::save(
                    &out.join("forecast.svg"),
                    &format!("episode {} forecast", signal.episode_id),
                    &[
                        plot::Series { label: "signal", color: "black", start: 0, values: &truth[start..] },
                        plot::Series { label: "forecast", color: "crimson", start: end - start, values: &mean },
                        plot::Series { label: "lower 95%", color: "steelblue", start: end - start, values: &lo },
                        plot::Series { label: "upper 95%", color: "steelblue", start: end - start, values: &hi },
                    ],
                )?;
            }
            Ok(())
        }
    }
}

fn observed_bpm(s: &PreparedSignal) -> Vec<f64> {
    s.values
        .iter()
        .zip(&s.missing_mask)
        .map(|(&v, &m)| if m == MISSING { f64::NAN } else { v as f64 * BPM_MAX })
        .collect()
}

fn pick(c: &DatasetContainer, index: usize) -> Result<&PreparedSignal> {
    c.records
        .get(index)
        .ok_or_else(|| CliError::Config(format!("index {} out of range for {} test records", index, c.records.len())))
}

fn write_splits(out: &Path, raw: &[RawRecord], cfg: &RunConfig) -> Result<()> {
    let prep = PrepConfig { length: cfg.model.signal_length, ..PrepConfig::default() };
    let Splits { train, validation, test } = build_dataset(raw, &cfg.split_ratios(), &prep, cfg.seed)?;
    for c in [train, validation, test] {
        container::save(&out.join(split_file(c.split)), &c)?;
    }
    Ok(())
}

pub fn load_split(dir: &Path, tag: SplitTag) -> Result<DatasetContainer> {
    let path = dir.join(split_file(tag));
    let c = container::load(&path)?;
    if c.split != tag {
        return Err(CliError::format(&path, format!("holds the {} split, expected {}", c.split.name(), tag.name())));
    }
    Ok(c)
}

struct TrainObserver {
    log: csvio::TrainLog,
    log_path: PathBuf,
    ckpt_path: PathBuf,
    model: fhrformer_core::ModelConfig,
}

impl Observer<Vec<NamedTensor<f32>>> for TrainObserver {
    fn on_epoch(&mut self, l: &EpochLog) -> fhrformer_core::Result<()> {
        eprintln!("epoch {:>3} train {:.6} val {:.6} lr {:.2e}", l.epoch, l.train_loss, l.val_loss, l.lr);
        self.log
            .append(l)
            .map_err(|e| fhrformer_core::Error::Training(format!("{}: {e}", self.log_path.display())))
    }

    fn on_best(&mut self, _epoch: usize, snapshot: &Vec<NamedTensor<f32>>) -> fhrformer_core::Result<()> {
        let model = FhrFormer::from_params(self.model, snapshot.clone())?;
        checkpoint::save(&self.ckpt_path, &model).map_err(|e| fhrformer_core::Error::Checkpoint(e.to_string()))
    }
}

fn train(out: &Path, data: &Path, cfg: &RunConfig, pool: &ThreadPool) -> Result<()> {
    let tr = load_split(data, SplitTag::Train)?;
    let va = load_split(data, SplitTag::Validation)?;
    let model = FhrFormer::new(cfg.model_config(), cfg.seed)?;
    let log_path = out.join(TRAIN_LOG_FILE);
    let mut obs = TrainObserver {
        log: csvio::TrainLog::create(&log_path)?,
        log_path,
        ckpt_path: out.join(CHECKPOINT_FILE),
        model: cfg.model_config(),
    };
    let (model, report) = trainer::fit(model, &tr.records, &va.records, &cfg.train_config(), pool, &mut obs)?;
    checkpoint::save(&out.join(CHECKPOINT_FILE), &model)?;
    let summary = format!(
        "best_epoch {}\nbest_val_loss {}\nepochs_run {}\nstopped_early {}\n",
        report.best_epoch,
        report.best_val_loss,
        report.history.len(),
        report.stopped_early
    );
    let path = out.join(TRAIN_SUMMARY_FILE);
    std::fs::write(&path, summary).map_err(|e| CliError::io(&path, e))
}
