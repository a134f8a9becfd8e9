//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation failure, 3 runtime failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data::{read_record, write_record, Manifest, UtteranceRecord, MANIFEST_FILE};
use crate::masking::FrameMask;
use crate::metrics::{self, plot, EvalConfig, Evaluation};
use crate::model::{full_model_gradcheck, load_checkpoint, ModelConfig, ABLATION_NAMES};
use crate::synth::{build_corpus, GenConfig};
use crate::trainer::{self, RunOutputs, TrainConfig, LATEST_CHECKPOINT};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Environment variable naming the default corpus directory.
pub const DATA_DIR_ENV: &str = "PROMODE_DATA_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "promode",
    version,
    about = "Masked prosody latent model: corpus synthesis, training, continuation and evaluation"
)]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus (manifest plus record files).
    SynthCorpus(SynthArgs),
    /// Check a corpus manifest and every record it lists.
    Validate(ValidateArgs),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Score prompt continuation on a corpus split.
    Eval(EvalArgs),
    /// Predict the continuation of one record.
    Infer(InferArgs),
    /// Finite-difference check of the full tiny-model loss gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long, env = DATA_DIR_ENV, value_name = "DIR")]
    pub out: PathBuf,
    /// Generator config file (TOML); flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Corpus seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Utterances in the train split.
    #[arg(long, value_name = "N")]
    pub train_size: Option<usize>,
    /// Utterances in the dev split.
    #[arg(long, value_name = "N")]
    pub dev_size: Option<usize>,
    /// Utterances in the test split.
    #[arg(long, value_name = "N")]
    pub test_size: Option<usize>,
    /// Smallest phoneme count per utterance.
    #[arg(long, value_name = "N")]
    pub phonemes_min: Option<u32>,
    /// Largest phoneme count per utterance.
    #[arg(long, value_name = "N")]
    pub phonemes_max: Option<u32>,
    /// Overwrite an existing corpus generated with a different config.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Corpus directory containing the manifest.
    #[arg(long, env = DATA_DIR_ENV, value_name = "DIR")]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory containing the manifest.
    #[arg(long, env = DATA_DIR_ENV, value_name = "DIR")]
    pub data: PathBuf,
    /// Run directory for checkpoints, metric log and resolved config.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Run config file (TOML) with optional `preset` key and `[model]`, `[train]` tables; flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Model size preset: full, desk, compact or tiny.
    #[arg(long, value_name = "NAME")]
    pub preset: Option<String>,
    /// Ablation to apply (repeatable): aol, dur, mel10, context-text, f0, energy, modadaln.
    #[arg(long, value_name = "NAME")]
    pub ablate: Vec<String>,
    /// Training seed (initialization, batches and masks).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Total iterations.
    #[arg(long, value_name = "N")]
    pub iterations: Option<u64>,
    /// Utterances per batch.
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long, value_name = "RATE")]
    pub lr: Option<f64>,
    /// Checkpoint cadence in iterations.
    #[arg(long, value_name = "N")]
    pub checkpoint_every: Option<u64>,
    /// Dev-loss cadence in iterations (0 disables).
    #[arg(long, value_name = "N")]
    pub dev_every: Option<u64>,
    /// Stop when dev loss stalls.
    #[arg(long)]
    pub early_stopping: bool,
    /// Continue from this checkpoint; its model config is used.
    #[arg(long, value_name = "FILE")]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Corpus directory containing the manifest.
    #[arg(long, env = DATA_DIR_ENV, value_name = "DIR")]
    pub data: PathBuf,
    /// Model checkpoint; required unless --baseline is set.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Score the per-speaker-mean baseline instead of a model.
    #[arg(long)]
    pub baseline: bool,
    /// Corpus split to evaluate.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Evaluation config file (TOML).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Pitch-accuracy threshold in cents.
    #[arg(long, value_name = "CENTS")]
    pub threshold_cents: Option<f64>,
    /// Report output path (TOML); printed to standard output regardless.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Per-utterance diagnostics output path (TOML).
    #[arg(long, value_name = "FILE")]
    pub diagnostics: Option<PathBuf>,
    /// Directory for F0 contour plots (SVG).
    #[arg(long, value_name = "DIR")]
    pub plots: Option<PathBuf>,
    /// Number of utterances to plot.
    #[arg(long, value_name = "N", default_value_t = 8)]
    pub max_plots: usize,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Model checkpoint.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Input record file.
    #[arg(long, value_name = "FILE")]
    pub record: PathBuf,
    /// Prompt share of the utterance, snapped to the nearest phoneme boundary.
    #[arg(long, value_name = "FRACTION", default_value_t = 0.5)]
    pub split: f64,
    /// Output record file holding the predicted continuation.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Seed for parameters and the synthetic utterance.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Utterance length in frames.
    #[arg(long, value_name = "N", default_value_t = 12)]
    pub frames: usize,
    /// Largest accepted relative error.
    #[arg(long, value_name = "TOL", default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Validation(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Validation(_) => EXIT_VALIDATION,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Validation(m) | Failure::Runtime(m) => m,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    let result = match cli.threads {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli.command, out)),
            Err(e) => Err(runtime(e)),
        },
        Some(_) => Err(Failure::Usage("--threads must be positive".into())),
        None => dispatch(&cli.command, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message());
            f.code()
        }
    }
}

fn dispatch(cmd: &Command, out: &mut dyn Write) -> Result<(), Failure> {
    match cmd {
        Command::SynthCorpus(a) => synth_corpus(a, out),
        Command::Validate(a) => validate(a, out),
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Infer(a) => infer(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
    }
}

fn say(out: &mut dyn Write, text: impl std::fmt::Display) -> Result<(), Failure> {
    writeln!(out, "{text}").map_err(runtime)
}

fn read_table(path: &Path) -> Result<toml::Table, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// `base` with the keys of `over` written on top.
fn overlay<T: Serialize + DeserializeOwned>(
    base: &T,
    over: Option<&toml::Table>,
    what: &str,
) -> Result<T, Failure> {
    let empty = toml::Table::new();
    let over = over.unwrap_or(&empty);
    let mut table =
        toml::Table::try_from(base).map_err(|e| Failure::Usage(format!("{what}: {e}")))?;
    merge(&mut table, over);
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| Failure::Usage(format!("{what}: {e}")))
}

fn sub_table<'a>(
    table: Option<&'a toml::Table>,
    key: &str,
) -> Result<Option<&'a toml::Table>, Failure> {
    match table.and_then(|t| t.get(key)) {
        None => Ok(None),
        Some(toml::Value::Table(t)) => Ok(Some(t)),
        Some(_) => Err(Failure::Usage(format!(
            "config key `{key}` must be a table"
        ))),
    }
}

fn load_manifest(dir: &Path) -> Result<Manifest, Failure> {
    Manifest::load(&dir.join(MANIFEST_FILE))
        .map_err(|e| Failure::Validation(format!("{}: {e}", dir.display())))
}

fn load_split(
    manifest: &Manifest,
    dir: &Path,
    split: &str,
) -> Result<Vec<UtteranceRecord>, Failure> {
    manifest
        .load_split(dir, split)
        .map_err(|e| Failure::Validation(format!("split {split}: {e}")))
}

fn synth_corpus(a: &SynthArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let file = a.config.as_deref().map(read_table).transpose()?;
    let mut cfg: GenConfig = overlay(&GenConfig::default(), file.as_ref(), "generator config")?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    for (flag, slot) in [
        (a.train_size, &mut cfg.train_utterances),
        (a.dev_size, &mut cfg.dev_utterances),
        (a.test_size, &mut cfg.test_utterances),
    ] {
        if let Some(n) = flag {
            *slot = n;
        }
    }
    if let Some(n) = a.phonemes_min {
        cfg.phonemes_min = n;
    }
    if let Some(n) = a.phonemes_max {
        cfg.phonemes_max = n;
    }
    cfg.check().map_err(|e| Failure::Usage(e.to_string()))?;
    let manifest = build_corpus(&cfg, &a.out, a.force).map_err(runtime)?;
    let counts: Vec<String> = manifest
        .splits
        .iter()
        .map(|(s, f)| format!("{s} {}", f.len()))
        .collect();
    say(
        out,
        format!(
            "wrote corpus {} (seed {}) to {}: {}",
            manifest.corpus,
            manifest.seed,
            a.out.display(),
            counts.join(", ")
        ),
    )
}

fn validate(a: &ValidateArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let manifest = load_manifest(&a.data)?;
    let issues = manifest.validate(&a.data);
    for i in &issues {
        say(out, format!("{}: {}", i.path, i.message))?;
    }
    let records: usize = manifest.splits.values().map(Vec::len).sum();
    say(
        out,
        format!("{records} records, {} violations", issues.len()),
    )?;
    if issues.is_empty() {
        Ok(())
    } else {
        Err(Failure::Validation(format!("{} violations", issues.len())))
    }
}

fn train(a: &TrainArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let file = a.config.as_deref().map(read_table).transpose()?;
    let preset_name = match (&a.preset, file.as_ref().and_then(|t| t.get("preset"))) {
        (Some(p), _) => p.clone(),
        (None, Some(toml::Value::String(p))) => p.clone(),
        (None, Some(_)) => {
            return Err(Failure::Usage(
                "config key `preset` must be a string".into(),
            ))
        }
        (None, None) => "desk".into(),
    };
    let preset = ModelConfig::preset(&preset_name).ok_or_else(|| {
        Failure::Usage(format!(
            "unknown preset {preset_name} (full, desk, compact, tiny)"
        ))
    })?;
    let mut model_cfg: ModelConfig =
        overlay(&preset, sub_table(file.as_ref(), "model")?, "model config")?;
    for name in &a.ablate {
        model_cfg.ablations.apply(name).map_err(|_| {
            Failure::Usage(format!(
                "unknown ablation {name} ({})",
                ABLATION_NAMES.join(", ")
            ))
        })?;
    }
    let mut cfg: TrainConfig = overlay(
        &TrainConfig::default(),
        sub_table(file.as_ref(), "train")?,
        "train config",
    )?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    if let Some(v) = a.dev_every {
        cfg.dev_every = v;
    }
    cfg.early_stopping |= a.early_stopping;
    cfg.check().map_err(|e| Failure::Usage(e.to_string()))?;

    let (model, start) = match &a.resume {
        Some(p) => {
            let ck = load_checkpoint(p).map_err(runtime)?;
            (ck.model, ck.iteration)
        }
        None => {
            model_cfg
                .check()
                .map_err(|e| Failure::Usage(e.to_string()))?;
            (trainer::init_model(&model_cfg, &cfg).map_err(runtime)?, 0)
        }
    };
    let manifest = load_manifest(&a.data)?;
    let train_set = load_split(&manifest, &a.data, "train")?;
    let dev_set = if manifest.splits.contains_key("dev") {
        load_split(&manifest, &a.data, "dev")?
    } else {
        Vec::new()
    };

    std::fs::create_dir_all(&a.out).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        model: &'a ModelConfig,
        train: &'a TrainConfig,
    }
    let resolved = toml::to_string(&Resolved {
        model: model.config(),
        train: &cfg,
    })
    .map_err(runtime)?;
    std::fs::write(a.out.join("config.toml"), resolved).map_err(runtime)?;
    let outputs = RunOutputs {
        checkpoint_dir: Some(a.out.clone()),
        log_path: Some(a.out.join("log.jsonl")),
    };
    say(
        out,
        format!(
            "training {} parameters on {} utterances from iteration {start}",
            model.params.total_values(),
            train_set.len()
        ),
    )?;
    let summary =
        trainer::train(model, start, &train_set, &dev_set, &cfg, &outputs).map_err(runtime)?;
    let last = summary
        .history
        .last()
        .map(|s| format!(", final loss {:.6}", s.loss))
        .unwrap_or_default();
    say(
        out,
        format!(
            "finished at iteration {}{last}{}; checkpoint {}",
            summary.iteration,
            if summary.stopped_early {
                " (early stop)"
            } else {
                ""
            },
            a.out.join(LATEST_CHECKPOINT).display()
        ),
    )
}

fn eval(a: &EvalArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let file = a.config.as_deref().map(read_table).transpose()?;
    let mut cfg: EvalConfig = overlay(&EvalConfig::default(), file.as_ref(), "eval config")?;
    if let Some(t) = a.threshold_cents {
        cfg.threshold_cents = t;
    }
    let manifest = load_manifest(&a.data)?;
    let records = load_split(&manifest, &a.data, &a.split)?;
    let mut echo = BTreeMap::from([
        ("split".to_string(), a.split.clone()),
        ("corpus".to_string(), manifest.corpus.clone()),
    ]);
    let evaluation: Evaluation = match (&a.checkpoint, a.baseline) {
        (_, true) => metrics::evaluate_speaker_mean_baseline(&records, &cfg).map_err(runtime)?,
        (Some(p), false) => {
            let ck = load_checkpoint(p).map_err(runtime)?;
            echo.insert("checkpoint".into(), p.display().to_string());
            echo.insert("iteration".into(), ck.iteration.to_string());
            metrics::evaluate_continuation(&ck.model, &records, &cfg, echo).map_err(runtime)?
        }
        (None, false) => {
            return Err(Failure::Usage(
                "eval needs --checkpoint or --baseline".into(),
            ))
        }
    };
    let report = evaluation.report.to_toml();
    if let Some(p) = &a.out {
        std::fs::write(p, &report).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
    }
    if let Some(p) = &a.diagnostics {
        std::fs::write(p, evaluation.diagnostics_toml())
            .map_err(|e| runtime(format!("{}: {e}", p.display())))?;
    }
    if let Some(dir) = &a.plots {
        plot_contours(dir, a, &records, &evaluation)?;
    }
    say(out, report.trim_end())
}

fn plot_contours(
    dir: &Path,
    a: &EvalArgs,
    records: &[UtteranceRecord],
    evaluation: &Evaluation,
) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    let model = match &a.checkpoint {
        Some(p) if !a.baseline => Some(load_checkpoint(p).map_err(runtime)?.model),
        _ => None,
    };
    let means = metrics::SpeakerMeans::new(records, &evaluation_energy(model.as_ref()))?;
    let by_id: BTreeMap<&str, &UtteranceRecord> =
        records.iter().map(|r| (r.id.as_str(), r)).collect();
    for u in evaluation.utterances.iter().take(a.max_plots) {
        let r = by_id[u.id.as_str()];
        let (k, _) = metrics::continuation_split(&r.durations_frames)
            .expect("scored utterances have a split");
        let pred = match &model {
            Some(m) => m
                .predict(r, &FrameMask::suffix(&r.durations_frames, k))
                .map_err(runtime)?,
            None => means.predict(r),
        };
        let gt: Vec<f64> = r.f0_hz.iter().map(|&v| f64::from(v)).collect();
        let path = dir.join(format!("{}.svg", u.id));
        plot::plot_f0(
            &path,
            &u.id,
            &gt,
            &metrics::eval::gated_f0(&pred),
            u.boundary,
        )
        .map_err(runtime)?;
    }
    Ok(())
}

fn evaluation_energy(model: Option<&crate::model::ProMode<f32>>) -> crate::data::EnergyConfig {
    model.map(|m| m.energy).unwrap_or_default()
}

impl From<metrics::MetricError> for Failure {
    fn from(e: metrics::MetricError) -> Self {
        runtime(e)
    }
}

fn infer(a: &InferArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let ck = load_checkpoint(&a.checkpoint).map_err(runtime)?;
    let record = read_record(&a.record)
        .map_err(|e| Failure::Validation(format!("{}: {e}", a.record.display())))?;
    let (k, b) =
        metrics::split_at_fraction(&record.durations_frames, a.split).ok_or_else(|| {
            Failure::Usage(format!(
                "--split {} needs a fraction in [0, 1] and at least two phonemes",
                a.split
            ))
        })?;
    let mask = FrameMask::suffix(&record.durations_frames, k);
    let pred = ck.model.predict(&record, &mask).map_err(runtime)?;
    let cont = continuation_record(&record, &pred, k, b);
    write_record(&cont, &a.out).map_err(runtime)?;
    say(
        out,
        format!(
            "wrote {} continuation frames ({} phonemes) to {}",
            cont.frames(),
            cont.phonemes(),
            a.out.display()
        ),
    )
}

/// Predicted frames `b..` of `record` as a record; voicing follows the vuv
/// logit, and frames predicted voiced with non-positive F0 are unvoiced.
pub fn continuation_record(
    record: &UtteranceRecord,
    pred: &crate::model::Predictions,
    first_phoneme: usize,
    b: usize,
) -> UtteranceRecord {
    let t = record.frames();
    let mut f0 = Vec::with_capacity(t - b);
    let mut vuv = Vec::with_capacity(t - b);
    for i in b..t {
        let voiced = pred.vuv_logit[i] >= 0.0 && pred.f0_hz[i] > 0.0 && pred.f0_hz[i].is_finite();
        f0.push(if voiced { pred.f0_hz[i] } else { 0.0 });
        vuv.push(u8::from(voiced));
    }
    UtteranceRecord {
        id: format!("{}-continuation", record.id),
        speaker_id: record.speaker_id.clone(),
        split: record.split.clone(),
        f0_hz: f0,
        energy_raw: pred.energy_log[b..].iter().map(|&e| e.exp2()).collect(),
        mel10: pred.mel10[b..].to_vec(),
        vuv,
        phoneme_ids: record.phoneme_ids[first_phoneme..].to_vec(),
        durations_frames: record.durations_frames[first_phoneme..].to_vec(),
        speaker_vec: record.speaker_vec.clone(),
        frame_hop_ms: record.frame_hop_ms,
    }
}

fn gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let cfg = ModelConfig::tiny();
    let report = full_model_gradcheck(&cfg, a.frames, a.seed)
        .map_err(|e| Failure::Validation(format!("gradient check inconclusive: {e}")))?;
    say(out, format!("checked {} coordinates; max relative error {:.3e} at coordinate {} (analytic {:.6e}, numeric {:.6e})", report.coordinates, report.max_rel_error, report.worst_coordinate, report.analytic, report.numeric))?;
    if report.max_rel_error < a.tolerance {
        say(out, "gradient check passed")
    } else {
        Err(Failure::Validation(format!(
            "max relative error {:.3e} ≥ {:.1e}",
            report.max_rel_error, a.tolerance
        )))
    }
}
