//! Command-line front end. [`run`] returns the process exit code.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data format
//! error, 4 gradient check above threshold.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::classifier::{
    evaluate, gradcheck_model, train, AggregatorKind, Evaluation, GradcheckSetup, ModelConfig,
    OtsModel, SgdConfig,
};
use crate::costmodel::{
    cost_fc, cost_gram, cost_nonlocal, cost_oab_with, cost_pool, cost_self_attention,
    standard_preset, render_delimited, render_table, Bias, CostReport, CostTable,
};
use crate::dataio::{
    generate_synthetic, load_checkpoint, load_feature_pairs, save_checkpoint, write_container,
    CooccurrenceSpec, SceneDataset, TensorRecord,
};
use crate::error::{OtsError, Result};
use crate::numcore::GradcheckConfig;
use crate::oam::{parse_alpha_chain, Alpha, Fusion};
use crate::ofam::ofam;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FORMAT: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "ots", version, about = "Scene recognition from object features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print parameter and FLOP counts.
    Analyze(AnalyzeArgs),
    /// Turn feature/score map pairs into per-object features.
    Ofam(OfamArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Finite-difference check of a small model.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Text,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SyntheticPreset {
    Default,
    Small,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Emit the reference cost tables.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// One object attention block, `C:ALPHA`.
    #[arg(long, value_name = "C:ALPHA")]
    pub oab: Vec<String>,
    /// Cascaded blocks, `C:A1,A2,...`.
    #[arg(long, value_name = "C:ALPHAS")]
    pub stack: Vec<String>,
    /// Self-attention block, `C_IN:C_QK:C_V:C_OUT`.
    #[arg(long, value_name = "C_IN:C_QK:C_V:C_OUT")]
    pub self_attention: Vec<String>,
    /// Non-local block, `C_IN:C:C_OUT`.
    #[arg(long, value_name = "C_IN:C:C_OUT")]
    pub nonlocal: Vec<String>,
    /// GRAM aggregation, `C:C_OUT`.
    #[arg(long, value_name = "C:C_OUT")]
    pub gram: Vec<String>,
    /// Flatten plus dense layer, `C:C_OUT`.
    #[arg(long, value_name = "C:C_OUT")]
    pub fc: Vec<String>,
    /// Max and average pooling over `C` channels.
    #[arg(long, value_name = "C")]
    pub pool: Vec<usize>,
    /// Number of object units.
    #[arg(long, default_value_t = 150)]
    pub n: usize,
    /// Count attention projections without biases.
    #[arg(long)]
    pub no_bias: bool,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    pub format: OutputFormat,
}

#[derive(Args, Debug)]
pub struct OfamArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Dataset container written by `ofam` or `SceneDataset::save`.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Generate a synthetic co-occurrence dataset instead.
    #[arg(long, value_enum)]
    pub synthetic: Option<SyntheticPreset>,
    #[arg(long, default_value_t = 2000)]
    pub train_samples: usize,
    #[arg(long, default_value_t = 500)]
    pub eval_samples: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Held-out container for per-epoch evaluation (with `--data`).
    #[arg(long, conflicts_with = "synthetic")]
    pub eval_data: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value = "2,0.5")]
    pub alphas: String,
    #[arg(long, value_parser = parse_aggregator, default_value = "gram")]
    pub aggregator: AggregatorKind,
    #[arg(long, default_value_t = 2048)]
    pub c_out: usize,
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 10)]
    pub step_epochs: usize,
    #[arg(long, default_value = "model.otsf")]
    pub checkpoint: PathBuf,
    /// Per-epoch CSV table.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Only for display: marks classes below this accuracy.
    #[arg(long, default_value_t = 0.0)]
    pub threshold: f64,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 32)]
    pub channels: usize,
    #[arg(long, default_value_t = 12)]
    pub objects: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value = "2,0.5")]
    pub alphas: String,
    #[arg(long, value_parser = parse_aggregator, default_value = "gram")]
    pub aggregator: AggregatorKind,
    #[arg(long, default_value_t = 16)]
    pub c_out: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub coords: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub threshold: f64,
}

fn parse_aggregator(s: &str) -> std::result::Result<AggregatorKind, String> {
    s.parse().map_err(|e: OtsError| e.to_string())
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(&cli.command) {
        Ok((text, code)) => {
            let _ = stdout.write_all(text.as_bytes());
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &OtsError) -> i32 {
    match e {
        OtsError::Format { .. } => EXIT_FORMAT,
        _ => EXIT_USAGE,
    }
}

/// Runs a parsed command, returning its standard output and exit code.
pub fn execute(cmd: &Command) -> Result<(String, i32)> {
    match cmd {
        Command::Analyze(a) => cmd_analyze(a).map(|s| (s, EXIT_OK)),
        Command::Ofam(a) => cmd_ofam(a).map(|s| (s, EXIT_OK)),
        Command::Train(a) => cmd_train(a).map(|s| (s, EXIT_OK)),
        Command::Eval(a) => cmd_eval(a).map(|s| (s, EXIT_OK)),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn fields(spec: &str, n: usize, flag: &str) -> Result<Vec<usize>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != n {
        return Err(OtsError::Usage(format!("--{flag} expects {n} colon-separated values, got {spec:?}")));
    }
    parts
        .iter()
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| OtsError::Usage(format!("--{flag}: {p:?} is not a positive integer")))
        })
        .collect()
}

fn split_alpha(spec: &str, flag: &str) -> Result<(usize, Vec<Alpha>)> {
    let (c, alphas) = spec
        .split_once(':')
        .ok_or_else(|| OtsError::Usage(format!("--{flag} expects C:ALPHA, got {spec:?}")))?;
    let c = c
        .trim()
        .parse()
        .map_err(|_| OtsError::Usage(format!("--{flag}: {c:?} is not a channel count")))?;
    Ok((c, parse_alpha_chain(alphas)?))
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<String> {
    let bias = if a.no_bias { Bias::None } else { Bias::PerProjection };
    let mut tables = Vec::new();
    if a.preset == Some(Preset::Paper) {
        tables.extend(standard_preset());
    }
    let mut rows: Vec<CostReport> = Vec::new();
    for s in &a.oab {
        let (c, alphas) = split_alpha(s, "oab")?;
        for alpha in alphas {
            rows.push(cost_oab_with(c, alpha, a.n, bias)?);
        }
    }
    for s in &a.stack {
        let (c, alphas) = split_alpha(s, "stack")?;
        let mut parts = Vec::new();
        let mut channels = c;
        for &alpha in &alphas {
            let r = cost_oab_with(channels, alpha, a.n, bias)?;
            channels = 2 * alpha.value_channels(channels)?;
            parts.push(r);
        }
        let label: Vec<String> = alphas.iter().map(|x| x.to_string()).collect();
        rows.push(CostReport::chain(
            format!("OAB x{} (c_in={c}, alpha={})", alphas.len(), label.join(",")),
            &parts,
        ));
    }
    for s in &a.self_attention {
        let f = fields(s, 4, "self-attention")?;
        rows.push(cost_self_attention(f[0], f[1], f[2], f[3], a.n, bias));
    }
    for s in &a.nonlocal {
        let f = fields(s, 3, "nonlocal")?;
        rows.push(cost_nonlocal(f[0], f[1], f[2], a.n, bias));
    }
    for s in &a.gram {
        let f = fields(s, 2, "gram")?;
        rows.push(cost_gram(f[0], a.n, f[1]));
    }
    for s in &a.fc {
        let f = fields(s, 2, "fc")?;
        rows.push(cost_fc(f[0], a.n, f[1]));
    }
    for &c in &a.pool {
        rows.push(cost_pool(c, a.n));
    }
    if !rows.is_empty() {
        tables.push(CostTable {
            title: format!("Requested layers, N = {}", a.n),
            rows,
        });
    }
    if tables.is_empty() {
        return Err(OtsError::Usage(
            "nothing to analyze: pass --preset paper or at least one layer flag".into(),
        ));
    }
    let mut out = String::new();
    for (i, t) in tables.iter().enumerate() {
        match a.format {
            OutputFormat::Text => {
                if i > 0 {
                    out.push('\n');
                }
                let _ = writeln!(out, "{}", t.title);
                out.push_str(&render_table(&t.rows));
            }
            OutputFormat::Csv => {
                let _ = writeln!(out, "# {}", t.title);
                out.push_str(&render_delimited(&t.rows));
            }
        }
    }
    Ok(out)
}

pub fn cmd_ofam(a: &OfamArgs) -> Result<String> {
    let pairs = load_feature_pairs(&a.input)?;
    let first = pairs
        .first()
        .ok_or_else(|| OtsError::format(0, "input holds no samples"))?;
    let (channels, objects) = (first.features.channel_count(), first.scores.object_count());
    let classes = pairs.iter().map(|p| p.label).max().unwrap_or(0) + 1;

    let mut records = vec![
        TensorRecord::from_f64("meta.shape", vec![2], &[channels as f64, objects as f64])?,
        TensorRecord::from_text(
            "meta.classes",
            &(0..classes).map(|k| format!("class{k}")).collect::<Vec<_>>().join("\n"),
        ),
    ];
    let mut counts = vec![0usize; objects];
    for (i, p) in pairs.iter().enumerate() {
        if p.features.channel_count() != channels || p.scores.object_count() != objects {
            return Err(OtsError::format(
                0,
                format!("sample {i}: shape differs from sample 0 ({channels} channels, {objects} objects)"),
            ));
        }
        let x = ofam(&p.features, &p.scores)?;
        for (c, &present) in counts.iter_mut().zip(x.present()) {
            *c += present as usize;
        }
        records.push(TensorRecord::from_matrix(format!("{i}.X"), x.matrix()));
        let flags: Vec<u8> = x.present().iter().map(|&b| b as u8).collect();
        records.push(TensorRecord::from_u8(format!("{i}.present"), vec![objects], &flags)?);
        records.push(TensorRecord::from_f64(format!("{i}.y"), vec![], &[p.label as f64])?);
    }
    write_container(&a.output, &records)?;

    let mut out = format!("wrote {} samples to {}\nobject  present\n", pairs.len(), a.output.display());
    for (j, c) in counts.iter().enumerate() {
        let _ = writeln!(out, "{j:>6}  {c}/{}", pairs.len());
    }
    Ok(out)
}

fn synthetic_spec(p: SyntheticPreset) -> CooccurrenceSpec {
    match p {
        SyntheticPreset::Default => CooccurrenceSpec::default_spec(),
        SyntheticPreset::Small => CooccurrenceSpec::small(7),
    }
}

/// Train and held-out sets from the data flags.
fn load_data(d: &DataArgs, extra_eval: Option<&PathBuf>) -> Result<(SceneDataset, Option<SceneDataset>)> {
    match (&d.data, d.synthetic) {
        (Some(path), _) => {
            let train = SceneDataset::load(path)?;
            let eval = extra_eval.map(SceneDataset::load).transpose()?;
            Ok((train, eval))
        }
        (None, Some(p)) => {
            let all = generate_synthetic(&synthetic_spec(p), d.train_samples + d.eval_samples)?;
            let (train, eval) = all.split_at(d.train_samples);
            Ok((train, (!eval.is_empty()).then_some(eval)))
        }
        (None, None) => Err(OtsError::Usage("no dataset: pass --data PATH or --synthetic PRESET".into())),
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<String> {
    let (train_set, eval_set) = load_data(&a.data, a.eval_data.as_ref())?;
    let config = ModelConfig {
        channels: train_set.channel_count(),
        objects: train_set.object_count(),
        alphas: parse_alpha_chain(&a.alphas)?,
        fusion: Fusion::Concat,
        oam_bias: false,
        aggregator: a.aggregator,
        c_out: a.c_out,
        classes: train_set.classes(),
        gram_bias: false,
        relu: false,
    };
    let sgd = SgdConfig {
        lr0: a.lr,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        step_epochs: a.step_epochs,
        step_factor: 0.1,
        epochs: a.epochs,
        batch_size: a.batch_size,
    };
    let mut model = OtsModel::new(config, a.seed)?;
    let report = train(&mut model, &train_set, eval_set.as_ref(), &sgd, a.seed)?;
    save_checkpoint(&a.checkpoint, &model)?;
    let table = report.to_delimited();
    if let Some(path) = &a.report {
        fs::write(path, &table)?;
    }
    let mut out = table;
    let _ = writeln!(out, "checkpoint: {}", a.checkpoint.display());
    if let Some(e) = &report.final_eval {
        out.push_str(&class_table(e, eval_set.as_ref().unwrap().class_names(), 0.0));
    }
    Ok(out)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<String> {
    let model = load_checkpoint(&a.checkpoint)?;
    let data = match (&a.data.data, a.data.synthetic) {
        (Some(path), _) => SceneDataset::load(path)?,
        (None, Some(_)) => {
            let (train, eval) = load_data(&a.data, None)?;
            eval.unwrap_or(train)
        }
        (None, None) => return Err(OtsError::Usage("no dataset: pass --data PATH or --synthetic PRESET".into())),
    };
    let e = evaluate(&model, &data)?;
    Ok(class_table(&e, data.class_names(), a.threshold))
}

/// Per-class accuracy in percent followed by the class mean.
pub fn class_table(e: &Evaluation, names: &[String], threshold: f64) -> String {
    let width = names.iter().map(|n| n.len()).max().unwrap_or(0).max("Overall".len());
    let mut out = format!("{:<width$}  Accuracy (%)\n", "Class");
    for (name, acc) in names.iter().zip(&e.per_class) {
        match acc {
            Some(a) => {
                let mark = if *a < threshold { "  below threshold" } else { "" };
                let _ = writeln!(out, "{name:<width$}  {:>12.1}{mark}", a * 100.0);
            }
            None => {
                let _ = writeln!(out, "{name:<width$}  {:>12}", "-");
            }
        }
    }
    let _ = writeln!(out, "{:<width$}  {:>12.1}", "Mean", e.mean_class_accuracy * 100.0);
    let _ = writeln!(out, "{:<width$}  {:>12.1}", "Overall", e.accuracy * 100.0);
    out
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<(String, i32)> {
    let setup = GradcheckSetup {
        channels: a.channels,
        objects: a.objects,
        classes: a.classes,
        alphas: a.alphas.clone(),
        aggregator: a.aggregator,
        c_out: a.c_out,
        seed: a.seed,
        ..GradcheckSetup::default()
    };
    let cfg = GradcheckConfig {
        step: a.step,
        coords_per_param: a.coords,
        seed: a.seed,
    };
    let report = gradcheck_model(&setup, &cfg)?;
    let mut out = String::from("parameter  coords  max_rel_error\n");
    for p in &report.params {
        let _ = writeln!(out, "{}  {}  {:.3e}", p.name, p.coords_checked, p.max_rel_error);
    }
    let ok = report.max_rel_error < a.threshold;
    let _ = writeln!(
        out,
        "max relative error {:.3e} ({}, threshold {:e})",
        report.max_rel_error,
        if ok { "ok" } else { "FAILED" },
        a.threshold
    );
    Ok((out, if ok { EXIT_OK } else { EXIT_CHECK_FAILED }))
}
