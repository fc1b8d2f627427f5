//! Subcommand implementations and the error-to-exit-code mapping.

use std::fmt;
use std::path::{Path, PathBuf};

use ttrnn::cells::CellKind;
use ttrnn::checks::run_checks;
use ttrnn::evalbench::{eer, read_scores, Field, Report};
use ttrnn::experiment::{bench_report, evaluate_checkpoint, metric_name, params_report, train_run, RunConfig};
use ttrnn::features::{
    log_mel_spectrogram, mfcc, parse_idx, permute_pixels, read_wav_pcm16, FeatureConfig, IdxDataset,
};
use ttrnn::tensor::{load_tten, save_tten};
use ttrnn::tt::{balanced_factorization, tt_svd, Truncation};
use ttrnn::Error;

use crate::output::render;
use crate::{
    BenchArgs, Cli, Command, DecomposeArgs, EvalArgs, FeaturizeArgs, GradcheckArgs, Metric, ModelOverrides,
    OutputFormat,
};

#[derive(Debug)]
pub enum CliError {
    Lib(Error),
    ChecksFailed(Vec<String>),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::ChecksFailed(names) => write!(f, "gradient check failed: {}", names.join(", ")),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(Error::Io(e))
    }
}

impl CliError {
    /// 2 configuration or shape, 3 I/O or parsing, 4 numeric divergence,
    /// 5 gradient-check failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::ChecksFailed(_) => 5,
            CliError::Lib(e) => match e {
                Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_)
                | Error::MalformedHeader(_)
                | Error::UnsupportedEncoding(_)
                | Error::BadMagic(_)
                | Error::TruncatedPayload { .. }
                | Error::RaggedImages
                | Error::SignalTooShort { .. } => 3,
                Error::NonFiniteLoss { .. } | Error::NonFiniteFunctionValue(_) | Error::SvdFailure(_) => 4,
                _ => 2,
            },
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Params(o) => params(cli, o),
        Command::Decompose(a) => decompose(cli, a),
        Command::Train => train(cli),
        Command::Eval(a) => eval(cli, a),
        Command::Bench(a) => bench(cli, a),
        Command::Featurize(a) => featurize(cli, a),
        Command::Gradcheck(a) => gradcheck(cli, a),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    load_config_from(cli.config.as_deref(), cli.seed)
}

fn load_config_from(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn apply_overrides(cfg: &mut RunConfig, o: &ModelOverrides) -> Result<()> {
    if let Some(c) = &o.cell {
        cfg.cell = serde_json::from_value::<CellKind>(serde_json::Value::String(c.to_lowercase()))
            .map_err(|_| Error::Config(format!("unknown cell {c:?}; expected lstm or gru")))?;
    }
    if let Some(v) = o.hidden {
        cfg.hidden = v;
    }
    if o.input.is_some() {
        cfg.input = o.input;
    }
    if o.output.is_some() {
        cfg.output = o.output;
    }
    if let Some(v) = o.cores {
        cfg.cores = v;
        cfg.row_dims = None;
        cfg.col_dims = None;
    }
    if let Some(r) = o.rank {
        cfg.ranks = vec![r];
    }
    if o.gate_rank.is_some() {
        cfg.gate_rank = o.gate_rank;
    }
    if o.no_bias {
        cfg.bias = false;
    }
    if o.hidden.is_some() || o.input.is_some() {
        cfg.row_dims = None;
        cfg.col_dims = None;
    }
    cfg.validate()?;
    Ok(())
}

fn print(r: &Report, format: Option<OutputFormat>) -> Result<()> {
    print!("{}", render(r, format)?);
    Ok(())
}

fn params(cli: &Cli, o: &ModelOverrides) -> Result<()> {
    let mut cfg = load_config(cli)?;
    apply_overrides(&mut cfg, o)?;
    print(&params_report(&cfg)?, cli.format)
}

fn join(v: &[usize], sep: &str) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(sep)
}

fn decompose(cli: &Cli, a: &DecomposeArgs) -> Result<()> {
    let t = load_tten(&a.input)?;
    if t.rank() != 2 {
        return Err(Error::ExtentMismatch(format!("decompose needs a matrix, got shape {:?}", t.shape())).into());
    }
    let rows = match &a.rows {
        Some(r) => r.clone(),
        None => balanced_factorization(t.rows(), a.cores)?,
    };
    let cols = match &a.cols {
        Some(c) => c.clone(),
        None => balanced_factorization(t.cols(), a.cores)?,
    };
    let trunc = if let Some(r) = &a.ranks {
        if r.len() != rows.len() + 1 || r[0] != 1 || r[r.len() - 1] != 1 {
            return Err(Error::Config(format!(
                "rank profile {r:?} must have {} entries starting and ending in 1",
                rows.len() + 1
            ))
            .into());
        }
        Truncation::Ranks(r[1..r.len() - 1].to_vec())
    } else if let Some(m) = a.max_rank {
        Truncation::MaxRank(m)
    } else if let Some(eps) = a.tol {
        Truncation::Tolerance(eps)
    } else {
        Truncation::Exact
    };
    let tt = tt_svd(&t, &rows, &cols, &trunc)?;
    let err = tt.to_dense().relative_error(&t)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("tt-decomposition"));
    tt.save(&out)?;
    let mut r = Report::new(["row_dims", "col_dims", "ranks", "dense_params", "tt_params", "rel_error"]);
    r.push(vec![
        join(&rows, "x").into(),
        join(&cols, "x").into(),
        join(tt.ranks(), "-").into(),
        t.len().into(),
        tt.param_count().into(),
        Field::Float(err),
    ])?;
    print(&r, cli.format)
}

fn train(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let outcome = train_run(&cfg)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    let s = outcome.save(&cfg, &out)?;
    let mut r = Report::new([
        "task",
        "mode",
        "metric",
        "test_metric",
        "best_epoch",
        "best_val_metric",
        "epochs_run",
        "recurrent_weights",
    ]);
    r.push(vec![
        metric_task(&cfg).into(),
        cfg.mode.to_string().into(),
        s.metric.clone().into(),
        s.test_metric.into(),
        s.best_epoch.into(),
        s.best_val_metric.into(),
        s.epochs_run.into(),
        s.recurrent_weights.into(),
    ])?;
    print(&r, cli.format)
}

fn metric_task(cfg: &RunConfig) -> String {
    serde_json::to_value(cfg.task).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn write_report(cli: &Cli, r: &Report, stem: &str) -> Result<()> {
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.json")), render(r, Some(OutputFormat::Json))?)?;
        std::fs::write(dir.join(format!("{stem}.csv")), render(r, Some(OutputFormat::Csv))?)?;
    }
    Ok(())
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let (metric, value) = match (&a.scores, &a.checkpoint) {
        (Some(path), _) => {
            if a.metric == Some(Metric::Accuracy) {
                return Err(Error::Config("score files are scored by EER only".to_string()).into());
            }
            let scores = read_scores(std::fs::File::open(path)?)?;
            ("eer", eer(&scores)?)
        }
        (None, Some(ckpt)) => {
            // a run directory keeps its config next to the checkpoint
            let beside = ckpt.parent().map(|p| p.join("config.json")).filter(|p| p.exists());
            let cfg = load_config_from(cli.config.as_deref().or(beside.as_deref()), cli.seed)?;
            let name = metric_name(cfg.task);
            let wanted = a.metric.map(|m| match m {
                Metric::Accuracy => "accuracy",
                Metric::Eer => "eer",
            });
            if wanted.is_some_and(|w| w != name) {
                return Err(Error::Config(format!("task {} is scored by {name}", metric_task(&cfg))).into());
            }
            (name, evaluate_checkpoint(&cfg, ckpt)?)
        }
        (None, None) => return Err(Error::Config("eval needs --checkpoint or --scores".to_string()).into()),
    };
    let mut r = Report::new(["metric", "value"]);
    r.push(vec![metric.into(), value.into()])?;
    write_report(cli, &r, "eval")?;
    print(&r, cli.format)
}

fn bench(cli: &Cli, a: &BenchArgs) -> Result<()> {
    let mut cfg = load_config(cli)?;
    apply_overrides(&mut cfg, &a.model)?;
    if let Some(r) = &a.ranks {
        cfg.bench.ranks = r.clone();
    }
    if let Some(n) = a.reps {
        cfg.bench.reps = n;
    }
    cfg.validate()?;
    let r = bench_report(&cfg, cfg.bench.reps)?;
    write_report(cli, &r, "bench")?;
    print(&r, cli.format)
}

fn featurize(cli: &Cli, a: &FeaturizeArgs) -> Result<()> {
    let bytes = std::fs::read(&a.input)?;
    let (kind, t) = if bytes.starts_with(b"RIFF") {
        let audio = read_wav_pcm16(&bytes)?;
        let d = FeatureConfig::default();
        let fc = FeatureConfig {
            frame_ms: a.frame_ms.unwrap_or(d.frame_ms),
            hop_ms: a.hop_ms.unwrap_or(d.hop_ms),
            n_mels: a.mels.unwrap_or(d.n_mels),
            ..d
        };
        let spec = log_mel_spectrogram(&audio, &fc)?;
        match a.mfcc {
            Some(n) => ("mfcc", mfcc(&spec, n)?),
            None => ("log-mel", spec.data),
        }
    } else {
        let images = parse_idx(&bytes)?;
        if a.permute {
            let n = images.shape().first().copied().unwrap_or(0);
            let ds = IdxDataset::new(images, vec![0; n])?;
            let (seqs, _) = permute_pixels(&ds, cli.seed.unwrap_or(0))?;
            ("permuted-pixels", seqs.items)
        } else {
            ("idx", images)
        }
    };
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    let stem = a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("features");
    let path = dir.join(format!("{stem}.tten"));
    save_tten(&t, &path)?;
    let mut r = Report::new(["input", "features", "shape", "output"]);
    r.push(vec![
        a.input.display().to_string().into(),
        kind.into(),
        join(t.shape(), "x").into(),
        path.display().to_string().into(),
    ])?;
    print(&r, cli.format)
}

fn gradcheck(cli: &Cli, a: &GradcheckArgs) -> Result<()> {
    let outcomes = run_checks(a.eps, a.tol, a.only.as_deref())?;
    let mut r = Report::new(["check", "rel_error", "status"]);
    for o in &outcomes {
        r.push(vec![o.name.clone().into(), o.rel_error.into(), if o.passed { "pass" } else { "FAIL" }.into()])?;
    }
    print(&r, cli.format)?;
    let failed: Vec<String> = outcomes.into_iter().filter(|o| !o.passed).map(|o| o.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::ChecksFailed(failed))
    }
}
