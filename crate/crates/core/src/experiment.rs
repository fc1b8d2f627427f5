//! Run configuration and the end-to-end pipelines behind the command line:
//! parameter accounting, training, evaluation and benchmarking.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autograd::{
    ge2e_var, train_loop, Ge2eConfig, Graph, Objective, OptimizerKind, ParamId, ParamStore, Reduction, TrainConfig,
    TrainingHistory, Var,
};
use crate::cells::{count_params_dense, count_params_tt1, count_params_tt2_closed_form, CellKind, Recurrent};
use crate::checkpoint::{load_cell, save_cell, CellMode};
use crate::data::{digits, pixel_sequence_splits, synthetic_speakers, SpeakerConfig, Splits};
use crate::error::{Error, Result};
use crate::evalbench::{accuracy, compression_ratio, eer, time_fn, Field, Report, ScoreSet};
use crate::features::IdxDataset;
use crate::model::{CellSpec, SequenceData, SequenceModel};
use crate::rng::{seeded, shuffle, uniform_tensor, Rng};
use crate::tensor::{dot, Tensor};
use crate::tt::balanced_factorization;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Digit classification from one pixel per time step.
    #[default]
    MnistSeq,
    /// GE2E training on synthetic speakers, scored by EER.
    VerifToy,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// IDX image file; the bundled 8x8 digits when absent.
    pub images: Option<PathBuf>,
    /// IDX label file, required together with `images`.
    pub labels: Option<PathBuf>,
    /// Present pixels under one fixed random permutation.
    pub permute: bool,
    /// Seed of the pixel permutation; the run seed when absent.
    pub permute_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ge2eSettings {
    pub speakers_per_batch: usize,
    pub exclude_self: bool,
}

impl Default for Ge2eSettings {
    fn default() -> Self {
        Ge2eSettings { speakers_per_batch: 6, exclude_self: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSettings {
    /// One TT row per rank; each row uses that rank everywhere.
    pub ranks: Vec<usize>,
    pub reps: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings { ranks: vec![2, 3, 4], reps: crate::evalbench::DEFAULT_REPS }
    }
}

/// Everything a run needs, read from one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: Task,
    pub cell: CellKind,
    pub mode: CellMode,
    pub hidden: usize,
    /// Features per time step; derived from the task when absent.
    pub input: Option<usize>,
    pub cores: usize,
    /// Factorization of `hidden`; balanced when absent.
    pub row_dims: Option<Vec<usize>>,
    /// Factorization of `input`; balanced when absent.
    pub col_dims: Option<Vec<usize>>,
    /// Internal TT ranks `r_1 .. r_{n-1}`; a single entry is repeated.
    pub ranks: Vec<usize>,
    /// Leading rank `r_0` of fused cells; `ranks[0]` when absent.
    pub gate_rank: Option<usize>,
    /// Head size: classes or embedding width. Task default when absent,
    /// no head when zero.
    pub output: Option<usize>,
    /// Count one bias vector per gate.
    pub bias: bool,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    /// The learning rate is multiplied by `lr_decay` after this epoch.
    pub lr_decay_epoch: Option<usize>,
    pub lr_decay: f64,
    pub epochs: usize,
    pub patience: Option<usize>,
    pub data: DataConfig,
    pub speakers: SpeakerConfig,
    pub ge2e: Ge2eSettings,
    pub bench: BenchSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            task: Task::MnistSeq,
            cell: CellKind::Lstm,
            mode: CellMode::Dense,
            hidden: 64,
            input: None,
            cores: 2,
            row_dims: None,
            col_dims: None,
            ranks: vec![4],
            gate_rank: None,
            output: None,
            bias: true,
            seed: 0,
            optimizer: t.optimizer,
            lr: t.lr,
            batch_size: t.batch_size,
            lr_decay_epoch: t.lr_decay_epoch,
            lr_decay: t.lr_decay,
            epochs: t.epochs,
            patience: t.patience,
            data: DataConfig { permute: true, ..DataConfig::default() },
            speakers: SpeakerConfig::default(),
            ge2e: Ge2eSettings::default(),
            bench: BenchSettings::default(),
        }
    }
}

pub const DIGIT_CLASSES: usize = 10;
const DEFAULT_EMBEDDING: usize = 8;

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.hidden == 0 || self.cores == 0 {
            return bad("hidden and cores must be positive");
        }
        if self.input == Some(0) {
            return bad("input must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) || !self.lr_decay.is_finite() || self.lr_decay <= 0.0 {
            return bad("learning rate and decay must be positive");
        }
        if self.ranks.contains(&0) || self.gate_rank == Some(0) {
            return bad("ranks must be positive");
        }
        if self.data.images.is_some() != self.data.labels.is_some() {
            return bad("data.images and data.labels go together");
        }
        if self.ge2e.speakers_per_batch < 2 {
            return bad("ge2e.speakers_per_batch must be at least 2");
        }
        if self.bench.ranks.is_empty() || self.bench.ranks.contains(&0) {
            return bad("bench.ranks must be a non-empty list of positive ranks");
        }
        if self.mode != CellMode::Dense {
            self.cell_spec()?;
        }
        Ok(())
    }

    /// Input width: configured, or implied by the task.
    pub fn input_size(&self) -> usize {
        self.input.unwrap_or(match self.task {
            Task::MnistSeq => 1,
            Task::VerifToy => self.speakers.feature_dim,
        })
    }

    pub fn output_size(&self) -> usize {
        self.output.unwrap_or(match self.task {
            Task::MnistSeq => DIGIT_CLASSES,
            Task::VerifToy => DEFAULT_EMBEDDING,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            optimizer: self.optimizer,
            lr_decay_epoch: self.lr_decay_epoch,
            lr_decay: self.lr_decay,
            patience: self.patience,
        }
    }

    /// Internal ranks `r_1 .. r_{n-1}` after broadcasting.
    fn internal_ranks(&self) -> Result<Vec<usize>> {
        let n = self.cores;
        match self.ranks.len() {
            1 => Ok(vec![self.ranks[0]; n - 1]),
            l if l == n - 1 => Ok(self.ranks.clone()),
            l => Err(Error::Config(format!("{n} cores take 1 or {} ranks, got {l}", n - 1))),
        }
    }

    fn gate_rank_value(&self) -> usize {
        self.gate_rank.or(self.ranks.first().copied()).unwrap_or(1)
    }

    fn factors(&self) -> Result<(Vec<usize>, Vec<usize>)> {
        let rows = match &self.row_dims {
            Some(r) => r.clone(),
            None => balanced_factorization(self.hidden, self.cores)?,
        };
        let cols = match &self.col_dims {
            Some(c) => c.clone(),
            None => balanced_factorization(self.input_size(), self.cores)?,
        };
        Ok((rows, cols))
    }

    /// Full rank profile of the given TT layout.
    fn rank_profile(&self, mode: CellMode) -> Result<Vec<usize>> {
        let mut ranks = vec![if mode == CellMode::Fused { self.gate_rank_value() } else { 1 }];
        ranks.extend(self.internal_ranks()?);
        ranks.push(1);
        Ok(ranks)
    }

    /// Shape of the configured recurrent layer.
    pub fn cell_spec(&self) -> Result<CellSpec> {
        self.spec_for(self.mode)
    }

    fn spec_for(&self, mode: CellMode) -> Result<CellSpec> {
        let base = CellSpec::dense(self.cell, self.input_size(), self.hidden);
        if mode == CellMode::Dense {
            return Ok(base);
        }
        let (row_dims, col_dims) = self.factors()?;
        if row_dims.len() != self.cores || col_dims.len() != self.cores {
            return Err(Error::Config(format!(
                "factorizations {row_dims:?} / {col_dims:?} need {} factors each",
                self.cores
            )));
        }
        let spec = CellSpec { mode, row_dims, col_dims, ranks: self.rank_profile(mode)?, ..base };
        spec.validate()?;
        Ok(spec)
    }
}

/// One row of the parameter table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub model: String,
    pub weights: usize,
    pub bias: usize,
    pub head: usize,
    pub total: usize,
}

/// Dense, per-gate TT and fused TT parameter counts of the configured
/// model, with compression ratios of the totals against the dense total.
pub fn params_table(cfg: &RunConfig) -> Result<Vec<ParamRow>> {
    let g = cfg.cell.gates();
    let (d, m) = (cfg.hidden, cfg.input_size());
    let bias = if cfg.bias { g * d } else { 0 };
    let out = cfg.output_size();
    let head = if out > 0 { out * d + out } else { 0 };
    let row = |model: &str, weights: usize| ParamRow {
        model: model.to_string(),
        weights,
        bias,
        head,
        total: weights + bias + head,
    };
    let mut rows = vec![row(&format!("dense {}", cfg.cell), count_params_dense(g, d, m, false))];
    let pg = cfg.spec_for(CellMode::PerGate)?;
    rows.push(row(&format!("tt-pergate {}", cfg.cell), count_params_tt1(g, &pg.row_dims, &pg.col_dims, &pg.ranks)));
    let fu = cfg.spec_for(CellMode::Fused)?;
    // one gate core per weight stack
    let fused = count_params_tt2_closed_form(g, &fu.row_dims, &fu.col_dims, &fu.ranks) + g * fu.ranks[0];
    rows.push(row(&format!("tt-fused {}", cfg.cell), fused));
    Ok(rows)
}

pub fn params_report(cfg: &RunConfig) -> Result<Report> {
    let rows = params_table(cfg)?;
    let dense = rows[0].total as u64;
    let mut r = Report::new(["model", "weights", "bias", "head", "total", "compression"]);
    for p in rows {
        let ratio = compression_ratio(dense, p.total as u64)?;
        r.push(vec![
            p.model.into(),
            p.weights.into(),
            p.bias.into(),
            p.head.into(),
            p.total.into(),
            Field::Float((ratio.ratio * 100.0).round() / 100.0),
        ])?;
    }
    Ok(r)
}

/// One accounting of a fused or per-gate TT model that reproduces a target count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizationHit {
    pub accounting: String,
    pub row_dims: Vec<usize>,
    pub gate_rank: usize,
    pub rank: usize,
    pub bias: bool,
    pub head: bool,
}

fn orderings(sorted: &[usize]) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut cur = sorted.to_vec();
    fn rec(k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == cur.len() {
            if !out.contains(cur) {
                out.push(cur.clone());
            }
            return;
        }
        for i in k..cur.len() {
            cur.swap(k, i);
            rec(k + 1, cur, out);
            cur.swap(k, i);
        }
    }
    rec(0, &mut cur, &mut out);
    out
}

/// Searches hidden-size factorizations (2 to 4 cores, every order), a
/// scalar input, uniform internal ranks and leading ranks up to `max_rank`,
/// under several accountings, for totals equal to `target`.
///
/// Accountings: `tt1` (per-gate cores), `tt2` (shared cores plus one gate
/// core), `tt2-both` (a gate core per stack), `shared` (shared cores only);
/// each with or without gate biases and the `head` parameters.
pub fn factorization_search(
    target: usize,
    gates: usize,
    hidden: usize,
    head: usize,
    max_rank: usize,
) -> Vec<FactorizationHit> {
    let mut hits = Vec::new();
    for n in 2..=4 {
        let mut lists = Vec::new();
        crate::tt::for_each_factorization(hidden, n, |f| lists.push(f.to_vec()));
        for rows in lists.iter().flat_map(|l| orderings(l)) {
            let cols = vec![1; n];
            for r in 1..=max_rank {
                for r0 in 1..=max_rank {
                    let mut ranks = vec![r0];
                    ranks.extend(std::iter::repeat_n(r, n - 1));
                    ranks.push(1);
                    let shared = count_params_tt2_closed_form(gates, &rows, &cols, &ranks) - gates * r0;
                    let mut variants =
                        vec![("tt2", shared + gates * r0), ("tt2-both", shared + 2 * gates * r0), ("shared", shared)];
                    if r0 == 1 {
                        variants.push(("tt1", gates * shared));
                    }
                    for (name, count) in variants {
                        for bias in [false, true] {
                            for with_head in [false, true] {
                                let total =
                                    count + if bias { gates * hidden } else { 0 } + if with_head { head } else { 0 };
                                if total == target {
                                    hits.push(FactorizationHit {
                                        accounting: name.to_string(),
                                        row_dims: rows.clone(),
                                        gate_rank: r0,
                                        rank: r,
                                        bias,
                                        head: with_head,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    hits
}

/// Loads the task's train, validation and test splits.
pub fn load_splits(cfg: &RunConfig) -> Result<Splits> {
    match cfg.task {
        Task::MnistSeq => {
            let ds = match (&cfg.data.images, &cfg.data.labels) {
                (Some(i), Some(l)) => IdxDataset::from_idx(&std::fs::read(i)?, &std::fs::read(l)?)?,
                _ => digits()?,
            };
            let perm = cfg.data.permute.then(|| cfg.data.permute_seed.unwrap_or(cfg.seed));
            pixel_sequence_splits(&ds, perm, cfg.seed)
        }
        Task::VerifToy => synthetic_speakers(&cfg.speakers, cfg.seed),
    }
}

/// Class predictions of `model` on `data`.
pub fn classify(model: &SequenceModel, store: &ParamStore, data: &SequenceData) -> Result<Vec<usize>> {
    let out = model.predict(store, data, 256)?;
    let c = out.cols();
    Ok(out
        .data()
        .chunks(c)
        .map(|row| row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best }))
        .collect())
}

/// Cosine scores of all utterance pairs, split by whether the two share a speaker.
pub fn pair_scores(embeddings: &Tensor, speakers: &[usize]) -> Result<ScoreSet> {
    let (n, e) = (embeddings.rows(), embeddings.cols());
    let rows: Vec<&[f64]> = embeddings.data().chunks(e).collect();
    let norms: Vec<f64> = rows.iter().map(|r| dot(r, r).sqrt()).collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::ZeroNormEmbedding(i));
    }
    let mut s = ScoreSet::default();
    for i in 0..n {
        for j in i + 1..n {
            let c = dot(rows[i], rows[j]) / (norms[i] * norms[j]);
            if speakers[i] == speakers[j] {
                s.positive.push(c);
            } else {
                s.negative.push(c);
            }
        }
    }
    Ok(s)
}

pub fn verification_eer(model: &SequenceModel, store: &ParamStore, data: &SequenceData) -> Result<f64> {
    let emb = model.predict(store, data, 256)?;
    eer(&pair_scores(&emb, &data.labels)?)
}

/// Mini-batch cross-entropy on labelled sequences; validated by accuracy.
pub struct ClassificationObjective<'a> {
    pub model: &'a SequenceModel,
    pub train: &'a SequenceData,
    pub val: &'a SequenceData,
}

impl Objective for ClassificationObjective<'_> {
    fn train_size(&self) -> usize {
        self.train.len()
    }
    fn val_size(&self) -> usize {
        self.val.len()
    }
    fn batch_loss(&self, g: &mut Graph, store: &ParamStore, batch: &[usize]) -> Result<Var> {
        let b = self.model.bind(g, store);
        let logits = self.model.forward(g, &b, &self.train.batch(batch)?)?;
        let rows = g.transpose(logits)?;
        let labels: Vec<usize> = batch.iter().map(|&i| self.train.labels[i]).collect();
        g.softmax_xent(rows, &labels, Reduction::Mean)
    }
    fn validate(&self, store: &ParamStore) -> Result<f64> {
        accuracy(&classify(self.model, store, self.val)?, &self.val.labels)
    }
    fn higher_is_better(&self) -> bool {
        true
    }
}

/// GE2E on batches of whole speakers; validated by pairwise EER.
pub struct VerificationObjective<'a> {
    pub model: &'a SequenceModel,
    pub train: &'a SequenceData,
    pub val: &'a SequenceData,
    pub w: ParamId,
    pub b: ParamId,
    pub settings: Ge2eSettings,
}

impl VerificationObjective<'_> {
    fn speaker_items(&self) -> Vec<Vec<usize>> {
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (i, &s) in self.train.labels.iter().enumerate() {
            match groups.last_mut() {
                Some(g) if self.train.labels[g[0]] == s => g.push(i),
                _ => groups.push(vec![i]),
            }
        }
        groups
    }
}

impl Objective for VerificationObjective<'_> {
    fn train_size(&self) -> usize {
        self.train.len()
    }
    fn val_size(&self) -> usize {
        self.val.len()
    }

    /// Shuffled speakers, `speakers_per_batch` at a time with all their
    /// utterances; a lone leftover speaker joins the previous batch.
    fn epoch_batches(&self, rng: &mut Rng, _batch_size: usize) -> Vec<Vec<usize>> {
        let mut speakers = self.speaker_items();
        shuffle(rng, &mut speakers);
        let mut batches: Vec<Vec<usize>> = Vec::new();
        for chunk in speakers.chunks(self.settings.speakers_per_batch) {
            let items: Vec<usize> = chunk.concat();
            if chunk.len() < 2 && !batches.is_empty() {
                batches.last_mut().expect("non-empty").extend(items);
            } else {
                batches.push(items);
            }
        }
        batches
    }

    fn batch_loss(&self, g: &mut Graph, store: &ParamStore, batch: &[usize]) -> Result<Var> {
        let mut groups: Vec<usize> = Vec::new();
        for (k, &i) in batch.iter().enumerate() {
            if k > 0 && self.train.labels[batch[k - 1]] == self.train.labels[i] {
                *groups.last_mut().expect("non-empty") += 1;
            } else {
                groups.push(1);
            }
        }
        let bound = self.model.bind(g, store);
        let emb = self.model.forward(g, &bound, &self.train.batch(batch)?)?;
        let rows = g.transpose(emb)?;
        let (w, b) = (g.param(store, self.w), g.param(store, self.b));
        let cfg = Ge2eConfig { exclude_self: self.settings.exclude_self };
        ge2e_var(g, rows, &groups, w, b, cfg, Reduction::Mean)
    }

    fn validate(&self, store: &ParamStore) -> Result<f64> {
        verification_eer(self.model, store, self.val)
    }
    fn higher_is_better(&self) -> bool {
        false
    }
}

/// Result of [`train_run`].
pub struct TrainOutcome {
    pub model: SequenceModel,
    pub store: ParamStore,
    pub history: TrainingHistory,
    /// `accuracy` or `eer`.
    pub metric: &'static str,
    pub test_metric: f64,
}

pub fn metric_name(task: Task) -> &'static str {
    match task {
        Task::MnistSeq => "accuracy",
        Task::VerifToy => "eer",
    }
}

/// Trains the configured model and scores the restored best epoch on the
/// test split.
pub fn train_run(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    match (cfg.task, cfg.output_size()) {
        (Task::MnistSeq, DIGIT_CLASSES) | (Task::VerifToy, 1..) => {}
        (Task::MnistSeq, _) => return Err(Error::Config("mnist-seq needs a 10-way head".to_string())),
        (Task::VerifToy, _) => return Err(Error::Config("verif-toy needs an embedding head".to_string())),
    }
    let splits = load_splits(cfg)?;
    let features = splits.train.features();
    if features != cfg.input_size() {
        return Err(Error::Config(format!("data has {features} features per step, config says {}", cfg.input_size())));
    }
    let mut init = seeded(cfg.seed);
    let mut store = ParamStore::new();
    let model = SequenceModel::random(&mut store, &mut init, &cfg.cell_spec()?, cfg.output_size())?;
    let mut order = seeded(cfg.seed.wrapping_add(1));
    let tc = cfg.train_config();
    let (history, test_metric) = match cfg.task {
        Task::MnistSeq => {
            let obj = ClassificationObjective { model: &model, train: &splits.train, val: &splits.val };
            let h = train_loop(&obj, &mut store, &tc, &mut order)?;
            (h, accuracy(&classify(&model, &store, &splits.test)?, &splits.test.labels)?)
        }
        Task::VerifToy => {
            let (w, b) = crate::autograd::add_ge2e_scale(&mut store);
            let obj = VerificationObjective {
                model: &model,
                train: &splits.train,
                val: &splits.val,
                w,
                b,
                settings: cfg.ge2e.clone(),
            };
            let h = train_loop(&obj, &mut store, &tc, &mut order)?;
            (h, verification_eer(&model, &store, &splits.test)?)
        }
    };
    Ok(TrainOutcome { model, store, history, metric: metric_name(cfg.task), test_metric })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub task: Task,
    pub mode: CellMode,
    pub metric: String,
    pub test_metric: f64,
    pub best_epoch: usize,
    pub best_val_metric: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub recurrent_weights: usize,
}

impl TrainOutcome {
    pub fn summary(&self, cfg: &RunConfig) -> Result<RunSummary> {
        let (cell, _) = self.model.to_cell(&self.store)?;
        Ok(RunSummary {
            task: cfg.task,
            mode: cfg.mode,
            metric: self.metric.to_string(),
            test_metric: self.test_metric,
            best_epoch: self.history.best_epoch,
            best_val_metric: self.history.best_metric,
            epochs_run: self.history.epochs.len(),
            stopped_early: self.history.stopped_early,
            recurrent_weights: cell.param_count(false),
        })
    }

    /// Writes `checkpoint/`, `history.csv`, `config.json` and `summary.json` under `dir`.
    pub fn save(&self, cfg: &RunConfig, dir: impl AsRef<Path>) -> Result<RunSummary> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let (cell, head) = self.model.to_cell(&self.store)?;
        save_cell(&cell, head.as_ref(), dir.join("checkpoint"))?;
        self.history.save_csv(dir.join("history.csv"))?;
        std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
        let summary = self.summary(cfg)?;
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        Ok(summary)
    }
}

/// Scores a saved checkpoint on the test split of the configured task.
pub fn evaluate_checkpoint(cfg: &RunConfig, checkpoint: impl AsRef<Path>) -> Result<f64> {
    let (cell, head) = load_cell(checkpoint)?;
    let splits = load_splits(cfg)?;
    let features = splits.test.features();
    if cell.input_size() != features {
        return Err(Error::IncompatibleCheckpoint(format!(
            "cell takes {} inputs per step, data has {features}",
            cell.input_size()
        )));
    }
    let head = head.ok_or_else(|| Error::IncompatibleCheckpoint("checkpoint has no head".to_string()))?;
    if cfg.task == Task::MnistSeq && head.weight.rows() != DIGIT_CLASSES {
        return Err(Error::IncompatibleCheckpoint(format!(
            "head has {} outputs, task has 10 classes",
            head.weight.rows()
        )));
    }
    let mut store = ParamStore::new();
    let model = SequenceModel::from_cell(&mut store, &cell, Some(&head))?;
    match cfg.task {
        Task::MnistSeq => accuracy(&classify(&model, &store, &splits.test)?, &splits.test.labels),
        Task::VerifToy => verification_eer(&model, &store, &splits.test),
    }
}

/// The model-size and latency table: a dense row and one fused TT row per
/// configured rank, each with exact parameter counts (cell, biases and
/// head) and measured train-step and eval-step times.
pub fn bench_report(cfg: &RunConfig, reps: usize) -> Result<Report> {
    let mut rng = seeded(cfg.seed);
    let mut r = Report::new(["model", "rank", "params", "train_step_s", "eval_step_s"]);
    let mut specs = vec![(format!("dense {}", cfg.cell), None, cfg.spec_for(CellMode::Dense)?)];
    for &rank in &cfg.bench.ranks {
        let c = RunConfig { ranks: vec![rank], gate_rank: Some(rank), ..cfg.clone() };
        specs.push((format!("tt-fused {}", cfg.cell), Some(rank), c.spec_for(CellMode::Fused)?));
    }
    let out = cfg.output_size();
    for (name, rank, spec) in specs {
        let mut store = ParamStore::new();
        let model = SequenceModel::random(&mut store, &mut rng, &spec, out)?;
        let (cell, head) = model.to_cell(&store)?;
        let params = cell.param_count(cfg.bias) + head.as_ref().map_or(0, |h| h.param_count());
        let (train, eval) = time_steps(&model, &mut store, &cell, head.as_ref(), reps, &mut rng)?;
        r.push(vec![
            name.into(),
            rank.map_or(Field::Text("-".into()), Field::from),
            params.into(),
            train.into(),
            eval.into(),
        ])?;
    }
    Ok(r)
}

/// Mean seconds of one training step (forward and backward through one
/// recurrent step and the head, batch 1) and of one inference step.
fn time_steps(
    model: &SequenceModel,
    store: &mut ParamStore,
    cell: &crate::cells::Cell,
    head: Option<&crate::cells::ProjectionLayer>,
    reps: usize,
    rng: &mut Rng,
) -> Result<(f64, f64)> {
    let x = uniform_tensor(rng, &[model.input_size(), 1], -1.0, 1.0);
    let xs = vec![x.clone()];
    let readout = {
        let mut g = Graph::new();
        let b = model.bind(&mut g, store);
        let y = model.forward(&mut g, &b, &xs)?;
        uniform_tensor(rng, g.value(y).shape(), -1.0, 1.0)
    };
    let train = time_fn("train step", reps, || {
        store.zero_grads();
        let mut g = Graph::new();
        let b = model.bind(&mut g, store);
        let y = model.forward(&mut g, &b, &xs)?;
        let weighted = g.mul_const(y, readout.clone())?;
        let loss = g.sum(weighted);
        g.backward(loss, store)?;
        Ok(())
    })?;
    let xv = Tensor::vector(x.data().to_vec());
    let s0 = cell.initial_state();
    let eval = time_fn("eval step", reps, || {
        let s = cell.step(std::hint::black_box(&xv), &s0)?;
        if let Some(h) = head {
            std::hint::black_box(h.project(&s.h)?);
        }
        Ok(())
    })?;
    Ok((train.mean_secs, eval.mean_secs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_rejection() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert!(matches!(RunConfig::from_json(r#"{"hiden": 3}"#), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_json(r#"{"hidden": 0}"#), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_json(r#"{"mode": "tt-fused", "ranks": [1, 2, 3]}"#), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::from_json(r#"{"mode": "tt-fused", "hidden": 7, "row_dims": [2, 4]}"#),
            Err(Error::Config(_))
        ));
        let c = RunConfig::from_json(r#"{"task": "verif-toy", "mode": "tt-pergate", "cell": "gru", "hidden": 16}"#)
            .unwrap();
        assert_eq!(c.input_size(), 8);
        let spec = c.cell_spec().unwrap();
        assert_eq!((spec.row_dims, spec.col_dims, spec.ranks), (vec![4, 4], vec![2, 4], vec![1, 4, 1]));
    }

    fn total(cfg: &RunConfig, row: usize) -> usize {
        params_table(cfg).unwrap()[row].total
    }

    #[test]
    fn params_reproduce_dense_counts() {
        let big = RunConfig { hidden: 512, input: Some(4096), output: Some(256), ..RunConfig::default() };
        assert_eq!(total(&big, 0), 9_570_560);
        let seq = RunConfig { hidden: 256, input: Some(1), ..RunConfig::default() };
        assert_eq!(total(&seq, 0), 266_762);
        let tiny =
            RunConfig { hidden: 1, input: Some(1), output: Some(0), bias: false, cores: 1, ..RunConfig::default() };
        assert_eq!(total(&tiny, 0), 8);
    }

    #[test]
    fn fused_row_matches_a_built_cell() {
        let cfg = RunConfig {
            mode: CellMode::Fused,
            ranks: vec![3],
            gate_rank: Some(2),
            hidden: 16,
            input: Some(4),
            ..RunConfig::default()
        };
        let mut store = ParamStore::new();
        let model = SequenceModel::random(&mut store, &mut seeded(0), &cfg.cell_spec().unwrap(), 10).unwrap();
        let (cell, head) = model.to_cell(&store).unwrap();
        let rows = params_table(&cfg).unwrap();
        assert_eq!(rows[2].weights, cell.param_count(false));
        assert_eq!(rows[2].total, cell.param_count(true) + head.unwrap().param_count());
        let pg = RunConfig { mode: CellMode::PerGate, ..cfg };
        let cell = pg.cell_spec().unwrap().build(&mut seeded(1)).unwrap();
        assert_eq!(rows[1].weights, cell.param_count(false));
    }

    #[test]
    fn factorization_search_finds_known_accounting() {
        // rows (16, 16), r0 = 2, r = 4: cores 2176 + 1088, plus the 2570-parameter head
        let hits = factorization_search(5_834, 4, 256, 2_570, 8);
        assert!(hits.iter().any(|h| h.accounting == "shared"
            && h.row_dims == [16, 16]
            && h.gate_rank == 2
            && h.rank == 4
            && h.head
            && !h.bias));
    }

    #[test]
    fn pair_scores_split_by_speaker() {
        let e = Tensor::from_vec(&[3, 2], vec![1.0, 0.0, 2.0, 0.0, 0.0, 1.0]).unwrap();
        let s = pair_scores(&e, &[0, 0, 1]).unwrap();
        assert_eq!(s.positive, vec![1.0]);
        assert_eq!(s.negative, vec![0.0, 0.0]);
    }

    #[test]
    fn bench_smoke() {
        let cfg = RunConfig {
            hidden: 16,
            input: Some(16),
            output: Some(4),
            bench: BenchSettings { ranks: vec![2], reps: 1 },
            ..RunConfig::default()
        };
        let r = bench_report(&cfg, 2).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.rows[0][2], Field::Int((4 * 16 * 32 + 64 + 68) as i64));
    }
}
