//! Command-line front end: `track`, `train`, `eval` and `bench`.
//!
//! Exit codes: 0 success, 2 I/O or parse failure, 3 configuration or weight
//! mismatch, 4 numeric failure.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::audio::{AudioError, FeatureExtractor};
use crate::dbn::DbnConfig;
use crate::encoder::{BlockConfig, EncoderConfig};
use crate::eval::{
    format_annotations, latency_ms, parse_annotations, score_annotations, Annotation,
    DEFAULT_TOLERANCE_S,
};
use crate::model::weights::WeightsError;
use crate::model::{Model, ModelConfig, ModelError};
use crate::pipeline::{measure_rtf, track_reader, PipelineError};
use crate::train::{
    examples_from_clip, gen_click_track, gen_corpus, train, CorpusSpec, SynthOptions, TrainConfig,
    TrainError,
};

#[derive(Debug, Parser)]
#[command(
    name = "streambeat",
    version,
    about = "Streaming beat and downbeat tracker"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track beats in a WAV file, streaming it as live input.
    Track(TrackArgs),
    /// Train the toy model on synthetic click tracks.
    Train(TrainArgs),
    /// Score a beat file against a reference beat file.
    Eval(EvalArgs),
    /// Measure latency and real-time factor.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct BlockArgs {
    /// Left context frames.
    #[arg(long, default_value_t = 64)]
    pub nl: usize,
    /// Center block frames.
    #[arg(long, default_value_t = 16)]
    pub nc: usize,
    /// Right look-ahead frames.
    #[arg(long, default_value_t = 16)]
    pub nr: usize,
}

#[derive(Debug, Clone, Args)]
pub struct DbnArgs {
    #[arg(long, default_value_t = 55.0)]
    pub min_bpm: f64,
    #[arg(long, default_value_t = 215.0)]
    pub max_bpm: f64,
    #[arg(long, default_value_t = 16)]
    pub observation_lambda: u32,
    #[arg(long, default_value_t = 100.0)]
    pub transition_lambda: f64,
}

impl DbnArgs {
    fn config(&self) -> DbnConfig {
        DbnConfig {
            min_bpm: self.min_bpm,
            max_bpm: self.max_bpm,
            observation_lambda: self.observation_lambda,
            transition_lambda: self.transition_lambda,
            ..DbnConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    pub audio: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub block: BlockArgs,
    #[command(flatten)]
    pub dbn: DbnArgs,
    /// Beat file to write; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per-frame activations as CSV.
    #[arg(long)]
    pub emit_activations: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 12)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub d_model: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    /// Training clips; 20 more are generated for validation.
    #[arg(long, default_value_t = 200)]
    pub clips: usize,
    /// Length of each synthetic clip in seconds.
    #[arg(long, default_value_t = 12.0)]
    pub duration: f64,
    #[command(flatten)]
    pub block: BlockArgs,
    /// Weight file to write.
    #[arg(long, default_value = "model.bin")]
    pub out: PathBuf,
    /// JSON report path; defaults to the weight path with a `.json` extension.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub estimate: PathBuf,
    pub reference: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE_S)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Weights to benchmark; a seeded untrained toy model when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub nl: usize,
    /// Center sizes to measure (comma separated).
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 16])]
    pub nc: Vec<usize>,
    /// Right look-ahead per center size; defaults to matching the center sizes.
    #[arg(long, value_delimiter = ',')]
    pub nr: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub dbn: DbnArgs,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn io(m: impl std::fmt::Display) -> Self {
        CliError {
            code: 2,
            message: m.to_string(),
        }
    }
    fn config(m: impl std::fmt::Display) -> Self {
        CliError {
            code: 3,
            message: m.to_string(),
        }
    }
    fn numeric(m: impl std::fmt::Display) -> Self {
        CliError {
            code: 4,
            message: m.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::io(e)
    }
}

impl From<AudioError> for CliError {
    fn from(e: AudioError) -> Self {
        CliError::io(e)
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match &e {
            _ if e.is_numeric() => CliError::numeric(e),
            ModelError::Weights(WeightsError::Io(_)) => CliError::io(e),
            _ => CliError::config(e),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Audio(a) => a.into(),
            PipelineError::Model(m) => m.into(),
            PipelineError::Dbn(d) => CliError::config(d),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::numeric(e),
            TrainError::Model(m) => m.into(),
        }
    }
}

fn block_config(nl: usize, nc: usize, nr: usize) -> Result<BlockConfig, CliError> {
    BlockConfig::new(nl, nc, nr).map_err(CliError::config)
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn cmd_track(a: &TrackArgs) -> Result<(), CliError> {
    let block = block_config(a.block.nl, a.block.nc, a.block.nr)?;
    let model = Model::load(&a.model)?;
    eprintln!("latency: {} ms", latency_ms(&block));
    let file = fs::File::open(&a.audio)
        .map_err(|e| CliError::io(format!("{}: {e}", a.audio.display())))?;
    let out = track_reader(
        &model,
        BufReader::new(file),
        block,
        a.dbn.config(),
        1024,
        |_| {},
    )?;
    let beats: Vec<Annotation> = out
        .beats
        .iter()
        .map(|b| Annotation {
            time_s: b.time_s,
            beat_number: Some(b.beat_number),
        })
        .collect();
    write_output(a.out.as_deref(), &format_annotations(&beats))?;
    if let Some(path) = &a.emit_activations {
        let mut csv = String::from("frame_index,beat_p,downbeat_p\n");
        for f in &out.activations {
            csv.push_str(&format!(
                "{},{:.6},{:.6}\n",
                f.frame_index, f.beat, f.downbeat
            ));
        }
        fs::write(path, csv)?;
    }
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let base = block_config(a.block.nl, a.block.nc, a.block.nr)?;
    let mut blocks = vec![base];
    if base.n_center != 1 || base.n_right != 1 {
        blocks.push(block_config(a.block.nl, 1, 1)?);
    }
    let model = ModelConfig {
        encoder: EncoderConfig {
            n_layers: a.layers,
            n_heads: a.heads,
            d_model: a.d_model,
            d_ffn: 4 * a.d_model,
            ..ModelConfig::toy().encoder
        },
        ..ModelConfig::toy()
    };
    model.validate()?;
    if a.duration < 5.0 {
        return Err(CliError::config("clips must be at least 5 s long"));
    }
    let cfg = TrainConfig {
        model,
        blocks,
        epochs: a.epochs,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let ex = FeatureExtractor::new();
    let corpus = |n_clips, seed| {
        gen_corpus(&CorpusSpec {
            n_clips,
            duration_s: a.duration,
            seed,
            ..CorpusSpec::default()
        })
        .iter()
        .flat_map(|c| {
            examples_from_clip(
                c,
                &ex,
                cfg.model.n_tempo_bins,
                cfg.segment_s,
                cfg.widen_targets,
            )
        })
        .collect::<Vec<_>>()
    };
    let train_set = corpus(a.clips, a.seed.wrapping_mul(2).wrapping_add(1));
    let val_set = corpus(20, a.seed.wrapping_mul(2).wrapping_add(2));
    let (params, report) = train(&cfg, &train_set, &val_set, |r| {
        let e = r.train_loss.len() - 1;
        eprintln!(
            "epoch {:>3}: train {:.4} val {:.4} lr {:.1e}",
            e + 1,
            r.train_loss[e],
            r.val_loss[e],
            r.lr[e]
        );
    })?;
    let model = Model::new(cfg.model.clone(), params)?;
    model.save(&a.out)?;
    let report_path = a
        .report
        .clone()
        .unwrap_or_else(|| a.out.with_extension("json"));
    let json = json!({
        "config": cfg,
        "train_loss": report.train_loss,
        "val_loss": report.val_loss,
        "lr": report.lr,
        "steps": report.steps,
        "seconds": report.seconds,
        "param_count": report.param_count,
    });
    fs::write(
        &report_path,
        serde_json::to_string_pretty(&json).expect("report serializes"),
    )?;
    eprintln!("wrote {} and {}", a.out.display(), report_path.display());
    Ok(())
}

fn read_annotations(path: &Path) -> Result<Vec<Annotation>, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    parse_annotations(&text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    let est = read_annotations(&a.estimate)?;
    let reference = read_annotations(&a.reference)?;
    let s = score_annotations(&reference, &est, a.tolerance);
    let mut out = json!({ "beats": s.beats });
    if let Some(d) = s.downbeats {
        out["downbeats"] = json!(d);
    }
    println!("{out}");
    Ok(())
}

pub fn cmd_bench(a: &BenchArgs) -> Result<(), CliError> {
    let model = match &a.model {
        Some(p) => Model::load(p)?,
        None => {
            let cfg = ModelConfig::toy();
            Model::new(cfg.clone(), cfg.init_params(a.seed))?
        }
    };
    if !a.nr.is_empty() && a.nr.len() != a.nc.len() {
        return Err(CliError::config("--nr must list one value per --nc value"));
    }
    let clip = gen_click_track(120.0, 4, 30.0, a.seed, &SynthOptions::default()).audio;
    let dbn = a.dbn.config();
    for (i, &nc) in a.nc.iter().enumerate() {
        let nr = a.nr.get(i).copied().unwrap_or(nc);
        let block = block_config(a.nl, nc, nr)?;
        let r = measure_rtf(&model, &clip, block, &dbn, a.runs)?;
        println!(
            "{}",
            json!({
                "n_left": a.nl,
                "n_center": nc,
                "n_right": nr,
                "latency_ms": r.latency_ms,
                "rtf_first": r.first_run,
                "rtf_median": r.median,
            })
        );
    }
    Ok(())
}

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Track(a) => cmd_track(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run(args: impl IntoIterator<Item = impl Into<OsString> + Clone>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
