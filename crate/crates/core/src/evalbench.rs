//! Verification and classification metrics, compression reports, and a
//! wall-clock timing harness.

use std::io::{Read, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores of same-identity (positive) and different-identity (negative) trials.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreSet {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

impl ScoreSet {
    pub fn new(positive: Vec<f64>, negative: Vec<f64>) -> Self {
        ScoreSet { positive, negative }
    }

    fn validate(&self) -> Result<()> {
        if self.positive.is_empty() {
            return Err(Error::EmptyScores("positive"));
        }
        if self.negative.is_empty() {
            return Err(Error::EmptyScores("negative"));
        }
        if self.positive.iter().chain(&self.negative).any(|s| !s.is_finite()) {
            return Err(Error::extent("scores must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    label: String,
    score: f64,
}

/// Reads a `label,score` CSV with labels `pos` / `neg`.
pub fn read_scores(r: impl Read) -> Result<ScoreSet> {
    let mut s = ScoreSet::default();
    for row in csv::Reader::from_reader(r).deserialize::<ScoreRow>() {
        let row = row?;
        match row.label.as_str() {
            "pos" => s.positive.push(row.score),
            "neg" => s.negative.push(row.score),
            other => return Err(Error::Config(format!("score label {other:?} is neither pos nor neg"))),
        }
    }
    Ok(s)
}

pub fn write_scores(s: &ScoreSet, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (label, list) in [("pos", &s.positive), ("neg", &s.negative)] {
        for &score in list {
            out.serialize(ScoreRow { label: label.to_string(), score })?;
        }
    }
    out.flush()?;
    Ok(())
}

/// False-negative and false-positive rates at threshold `t`: positives
/// `< t` are rejected, negatives `>= t` are accepted. Both lists sorted.
fn rates(pos: &[f64], neg: &[f64], t: f64) -> (f64, f64) {
    let fnr = pos.partition_point(|&s| s < t) as f64 / pos.len() as f64;
    let fpr = (neg.len() - neg.partition_point(|&s| s < t)) as f64 / neg.len() as f64;
    (fnr, fpr)
}

/// Interpolated crossing of `FNR - FPR` over thresholds in increasing order.
pub(crate) fn crossing(points: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    let mut prev: Option<(f64, f64)> = None;
    for (fnr, fpr) in points {
        let d = fnr - fpr;
        if d >= 0.0 {
            return match prev {
                None => fnr,
                Some((pf, pp)) => {
                    let dp = pf - pp;
                    let alpha = -dp / (d - dp);
                    pf + alpha * (fnr - pf)
                }
            };
        }
        prev = Some((fnr, fpr));
    }
    // unreachable for a sweep ending above every score, where FNR = 1 and FPR = 0
    prev.map_or(0.5, |(f, p)| 0.5 * (f + p))
}

/// Equal error rate.
///
/// Thresholds run over `-inf`, every distinct score in increasing order, and
/// `+inf`. The first threshold where `FNR - FPR >= 0` and its predecessor
/// bracket the crossing, which is located by linear interpolation.
pub fn eer(s: &ScoreSet) -> Result<f64> {
    s.validate()?;
    let mut pos = s.positive.clone();
    let mut neg = s.negative.clone();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let sweep = std::iter::once(f64::NEG_INFINITY)
        .chain(thresholds)
        .chain(std::iter::once(f64::INFINITY))
        .map(|t| rates(&pos, &neg, t));
    Ok(crossing(sweep))
}

pub fn accuracy(preds: &[usize], truth: &[usize]) -> Result<f64> {
    if preds.len() != truth.len() {
        return Err(Error::LengthMismatch(preds.len(), truth.len()));
    }
    if preds.is_empty() {
        return Err(Error::EmptyDataset("no predictions".to_string()));
    }
    Ok(preds.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / preds.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub dense_count: u64,
    pub tt_count: u64,
    pub ratio: f64,
    /// `ratio` rounded to the nearest integer, as tables report it.
    pub rounded: u64,
}

pub fn compression_ratio(dense_count: u64, tt_count: u64) -> Result<CompressionReport> {
    if dense_count == 0 || tt_count == 0 {
        return Err(Error::ZeroCount);
    }
    let ratio = dense_count as f64 / tt_count as f64;
    Ok(CompressionReport { dense_count, tt_count, ratio, rounded: ratio.round() as u64 })
}

pub const WARMUP_REPS: usize = 10;
pub const DEFAULT_REPS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub descriptor: String,
    pub reps: usize,
    pub mean_secs: f64,
    pub std_secs: f64,
}

/// Times `f` over `reps` calls after [`WARMUP_REPS`] unmeasured calls.
/// The standard deviation is the population one.
pub fn time_fn(descriptor: impl Into<String>, reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<BenchResult> {
    if reps == 0 {
        return Err(Error::ZeroReps);
    }
    for _ in 0..WARMUP_REPS {
        f()?;
    }
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        f()?;
        times.push(start.elapsed().as_secs_f64());
    }
    let mean = times.iter().sum::<f64>() / reps as f64;
    let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / reps as f64;
    Ok(BenchResult { descriptor: descriptor.into(), reps, mean_secs: mean, std_secs: var.sqrt() })
}

/// Mean wall time of one recurrent step on fixed synthetic inputs.
pub fn time_step<C: crate::cells::Recurrent + ?Sized>(
    cell: &C,
    reps: usize,
    rng: &mut crate::rng::Rng,
) -> Result<BenchResult> {
    let x = crate::rng::uniform_tensor(rng, &[cell.input_size()], -1.0, 1.0);
    let mut s = cell.initial_state();
    s.h = crate::rng::uniform_tensor(rng, &[cell.hidden_size()], -0.5, 0.5);
    let desc = format!("{} step D={} M={}", cell.kind(), cell.hidden_size(), cell.input_size());
    time_fn(desc, reps, || {
        std::hint::black_box(cell.step(std::hint::black_box(&x), &s)?);
        Ok(())
    })
}

/// One report cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Field {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Field {
    fn render(&self) -> String {
        match self {
            Field::Int(v) => v.to_string(),
            Field::Float(v) => format!("{v:?}"),
            Field::Text(s) => s.clone(),
        }
    }

    /// Integers first, then floats, then text.
    fn parse(s: &str) -> Field {
        if let Ok(v) = s.parse::<i64>() {
            Field::Int(v)
        } else if let Ok(v) = s.parse::<f64>() {
            Field::Float(v)
        } else {
            Field::Text(s.to_string())
        }
    }
}

impl From<f64> for Field {
    fn from(v: f64) -> Self {
        Field::Float(v)
    }
}

impl From<u64> for Field {
    fn from(v: u64) -> Self {
        Field::Int(v as i64)
    }
}

impl From<usize> for Field {
    fn from(v: usize) -> Self {
        Field::Int(v as i64)
    }
}

impl From<&str> for Field {
    fn from(v: &str) -> Self {
        Field::Text(v.to_string())
    }
}

impl From<String> for Field {
    fn from(v: String) -> Self {
        Field::Text(v)
    }
}

/// A table of results with named columns.
///
/// Text cells that read as numbers come back from CSV as numbers; JSON
/// preserves them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Field>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

impl Report {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Report { columns: columns.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Field>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::LengthMismatch(row.len(), self.columns.len()));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<&Field>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| &r[k]).collect())
    }
}

/// Deterministic rendering of `r` as pretty JSON or CSV.
pub fn emit_report(r: &Report, format: Format) -> Result<String> {
    match format {
        Format::Json => Ok(serde_json::to_string_pretty(r)? + "\n"),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&r.columns)?;
            for row in &r.rows {
                w.write_record(row.iter().map(Field::render))?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
    }
}

pub fn parse_report(text: &str, format: Format) -> Result<Report> {
    match format {
        Format::Json => Ok(serde_json::from_str(text)?),
        Format::Csv => {
            let mut rd = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
            let mut records = rd.records();
            let columns: Vec<String> = match records.next() {
                Some(h) => h?.iter().map(str::to_string).collect(),
                None => return Ok(Report::default()),
            };
            let mut report = Report { columns, rows: Vec::new() };
            for rec in records {
                report.push(rec?.iter().map(Field::parse).collect())?;
            }
            Ok(report)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{below, seeded, uniform};

    /// Counts by direct comparison at every candidate threshold, O(n^2).
    fn brute_eer(s: &ScoreSet) -> f64 {
        let mut ts: Vec<f64> = s.positive.iter().chain(&s.negative).copied().collect();
        ts.push(f64::NEG_INFINITY);
        ts.push(f64::INFINITY);
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        let pts = ts.into_iter().map(|t| {
            let fnr = s.positive.iter().filter(|&&p| p < t).count() as f64 / s.positive.len() as f64;
            let fpr = s.negative.iter().filter(|&&n| n >= t).count() as f64 / s.negative.len() as f64;
            (fnr, fpr)
        });
        crossing(pts)
    }

    fn random_scores(rng: &mut crate::rng::Rng, quantum: f64) -> ScoreSet {
        let np = 1 + below(rng, 30);
        let nn = 1 + below(rng, 30);
        let shift = uniform(rng, -1.0, 2.0);
        let q = |x: f64| if quantum > 0.0 { (x / quantum).round() * quantum } else { x };
        ScoreSet::new(
            (0..np).map(|_| q(uniform(rng, 0.0, 1.0) + shift)).collect(),
            (0..nn).map(|_| q(uniform(rng, 0.0, 1.0))).collect(),
        )
    }

    #[test]
    fn eer_examples() {
        let sep = ScoreSet::new(vec![0.8, 0.7, 0.6], vec![0.5, 0.4, 0.3]);
        assert_eq!(eer(&sep).unwrap(), 0.0);
        let mixed = ScoreSet::new(vec![0.9, 0.2], vec![0.8, 0.1]);
        assert_eq!(eer(&mixed).unwrap(), 0.5);
        let same = ScoreSet::new(vec![0.3, 0.1, 0.7], vec![0.3, 0.1, 0.7]);
        assert!((eer(&same).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(eer(&ScoreSet::new(vec![], vec![1.0])), Err(Error::EmptyScores("positive"))));
        assert!(matches!(eer(&ScoreSet::new(vec![1.0], vec![])), Err(Error::EmptyScores("negative"))));
    }

    #[test]
    fn eer_matches_brute_force() {
        let mut rng = seeded(1);
        for trial in 0..1000 {
            let s = random_scores(&mut rng, if trial % 2 == 0 { 0.0 } else { 0.05 });
            let (a, b) = (eer(&s).unwrap(), brute_eer(&s));
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
            assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn eer_matches_dense_grid() {
        let mut rng = seeded(2);
        for _ in 0..20 {
            let s = random_scores(&mut rng, 1e-3);
            let lo = s.positive.iter().chain(&s.negative).cloned().fold(f64::INFINITY, f64::min);
            let hi = s.positive.iter().chain(&s.negative).cloned().fold(f64::NEG_INFINITY, f64::max);
            let n = 100_000;
            let grid = (0..=n + 1).map(|i| {
                let t = if i == n + 1 { f64::INFINITY } else { lo + (hi - lo) * i as f64 / n as f64 };
                let fnr = s.positive.iter().filter(|&&p| p < t).count() as f64 / s.positive.len() as f64;
                let fpr = s.negative.iter().filter(|&&x| x >= t).count() as f64 / s.negative.len() as f64;
                (fnr, fpr)
            });
            assert!((eer(&s).unwrap() - crossing(grid)).abs() < 1e-4);
        }
    }

    #[test]
    fn eer_is_rank_invariant_and_monotone_in_ordered_pairs() {
        let mut rng = seeded(3);
        for _ in 0..200 {
            let s = random_scores(&mut rng, 0.0);
            let base = eer(&s).unwrap();
            let f = |x: f64| (3.0 * x).exp() - 7.0;
            let t =
                ScoreSet::new(s.positive.iter().map(|&x| f(x)).collect(), s.negative.iter().map(|&x| f(x)).collect());
            assert!((eer(&t).unwrap() - base).abs() < 1e-12);

            let mut more = s.clone();
            let mx = s.positive.iter().chain(&s.negative).cloned().fold(f64::NEG_INFINITY, f64::max);
            let mn = s.positive.iter().chain(&s.negative).cloned().fold(f64::INFINITY, f64::min);
            more.positive.push(mx + 1.0);
            more.negative.push(mn - 1.0);
            assert!(eer(&more).unwrap() <= base + 1e-12);
        }
    }

    #[test]
    fn score_csv_round_trip() {
        let s = ScoreSet::new(vec![0.25, 1.5], vec![-0.125]);
        let mut buf = Vec::new();
        write_scores(&s, &mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("label,score\n"));
        assert_eq!(read_scores(&buf[..]).unwrap(), s);
        assert!(matches!(read_scores(&b"label,score\nmaybe,1\n"[..]), Err(Error::Config(_))));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert!(matches!(accuracy(&[1], &[1, 2]), Err(Error::LengthMismatch(1, 2))));
    }

    #[test]
    fn compression_examples() {
        let r = compression_ratio(266_762, 3_434).unwrap();
        assert!((r.ratio - 77.68).abs() < 1e-2);
        assert_eq!(r.rounded, 78);
        let r = compression_ratio(266_762, 5_834).unwrap();
        assert!((r.ratio - 45.72).abs() < 1e-2);
        assert_eq!(r.rounded, 46);
        assert_eq!(compression_ratio(7, 7).unwrap().rounded, 1);
        assert!(matches!(compression_ratio(0, 7), Err(Error::ZeroCount)));
    }

    #[test]
    fn timing_examples() {
        assert!(matches!(time_fn("x", 0, || Ok(())), Err(Error::ZeroReps)));
        let cell = crate::cells::DenseCell::random(&mut seeded(4), crate::cells::CellKind::Lstm, 8, 8);
        let r = time_step(&cell, 5, &mut seeded(5)).unwrap();
        assert!(r.mean_secs > 0.0 && r.std_secs >= 0.0);
        assert_eq!(r.reps, 5);
    }

    fn sample_report() -> Report {
        let mut r = Report::new(["model", "rank", "params", "eval_step_s"]);
        r.push(vec!["dense lstm".into(), Field::Text("-".into()), 9_570_560u64.into(), 1.25e-3.into()]).unwrap();
        r.push(vec!["tt-fused lstm".into(), 2usize.into(), 21_248u64.into(), 3.0.into()]).unwrap();
        r
    }

    #[test]
    fn report_round_trips() {
        for fmt in [Format::Json, Format::Csv] {
            let empty = Report::new(["a", "b"]);
            assert_eq!(parse_report(&emit_report(&empty, fmt).unwrap(), fmt).unwrap(), empty);
            let r = sample_report();
            let text = emit_report(&r, fmt).unwrap();
            assert_eq!(parse_report(&text, fmt).unwrap(), r);
            assert_eq!(emit_report(&r, fmt).unwrap(), text);
        }
        let csv = emit_report(&sample_report(), Format::Csv).unwrap();
        assert!(csv.starts_with("model,rank,params,eval_step_s\ndense lstm,-,9570560,0.00125\n"));
    }
}
