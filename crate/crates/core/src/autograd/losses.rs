//! Cross-entropy and the generalized end-to-end (GE2E) speaker loss.

use super::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

/// `-log softmax(logits)[label]`, computed with max subtraction.
///
/// `logits` is a `K`-vector with one label, or a `B x K` batch with `B`
/// labels, in which case the mean over the batch is returned.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let batch = match logits.shape() {
        [k] => logits.reshape(&[1, *k])?,
        [_, _] => logits.clone(),
        s => return Err(Error::extent(format!("logits must be a vector or matrix, got {s:?}"))),
    };
    if batch.cols() < 2 {
        return Err(Error::extent(format!("cross-entropy needs at least 2 classes, got {}", batch.cols())));
    }
    let mut g = Graph::new();
    let l = g.input(batch);
    let loss = g.softmax_xent(l, labels, Reduction::Mean)?;
    Ok(g.value(loss).item())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Ge2eConfig {
    /// Compare each utterance with its own speaker's centroid computed
    /// without that utterance. Speakers with a single utterance keep the
    /// self-included centroid.
    pub exclude_self: bool,
}

fn check_groups(groups: &[usize], total: usize) -> Result<()> {
    if groups.len() < 2 {
        return Err(Error::FewerThanTwoSpeakers(groups.len()));
    }
    if groups.contains(&0) {
        return Err(Error::extent("every speaker needs at least one embedding"));
    }
    let n: usize = groups.iter().sum();
    if n != total {
        return Err(Error::LengthMismatch(n, total));
    }
    Ok(())
}

/// Builds the scaled-similarity logits `w cos(e_ji, c_k) + b` for
/// embeddings stacked row-wise in speaker order (`groups[j]` rows each).
pub fn ge2e_logits(
    g: &mut Graph,
    emb: Var,
    groups: &[usize],
    w: Var,
    b: Var,
    cfg: Ge2eConfig,
) -> Result<(Var, Vec<usize>)> {
    let total = g.value(emb).shape().first().copied().unwrap_or(0);
    check_groups(groups, total)?;
    let speakers = groups.len();
    let labels: Vec<usize> = groups.iter().enumerate().flat_map(|(j, &n)| std::iter::repeat_n(j, n)).collect();

    let mut avg = Tensor::zeros(&[speakers, total]);
    let mut start = 0;
    for (j, &n) in groups.iter().enumerate() {
        for i in start..start + n {
            avg.data_mut()[j * total + i] = 1.0 / n as f64;
        }
        start += n;
    }
    let avg = g.input(avg);
    let centroids = g.matmul(avg, emb)?;
    let mut sim = g.cosine_sim(emb, centroids)?;

    if cfg.exclude_self {
        let mut excl = Tensor::zeros(&[total, total]);
        let mut mask = Tensor::zeros(&[total, speakers]);
        let mut start = 0;
        for (j, &n) in groups.iter().enumerate() {
            for i in start..start + n {
                if n > 1 {
                    mask.data_mut()[i * speakers + j] = 1.0;
                    for i2 in start..start + n {
                        if i2 != i {
                            excl.data_mut()[i * total + i2] = 1.0 / (n - 1) as f64;
                        }
                    }
                } else {
                    excl.data_mut()[i * total + i] = 1.0;
                }
            }
            start += n;
        }
        let excl = g.input(excl);
        let own_centroids = g.matmul(excl, emb)?;
        let own = g.row_cosine(emb, own_centroids)?;
        let ones = g.input(Tensor::full(&[1, speakers], 1.0));
        let own_wide = g.matmul(own, ones)?;
        let keep = mask.map(|m| 1.0 - m);
        let kept = g.mul_const(sim, keep)?;
        let replaced = g.mul_const(own_wide, mask)?;
        sim = g.add(kept, replaced)?;
    }
    let scaled = g.scale_by(w, sim)?;
    Ok((g.add_scalar(scaled, b)?, labels))
}

/// GE2E loss node: `sum_{j,i} -S_{ji,j} + log sum_k exp(S_{ji,k})`, or its
/// mean over utterances.
pub fn ge2e_var(
    g: &mut Graph,
    emb: Var,
    groups: &[usize],
    w: Var,
    b: Var,
    cfg: Ge2eConfig,
    reduction: Reduction,
) -> Result<Var> {
    let (logits, labels) = ge2e_logits(g, emb, groups, w, b, cfg)?;
    g.softmax_xent(logits, &labels, reduction)
}

fn stack(embeddings: &[Vec<Tensor>]) -> Result<(Tensor, Vec<usize>)> {
    let groups: Vec<usize> = embeddings.iter().map(Vec::len).collect();
    if groups.len() < 2 {
        return Err(Error::FewerThanTwoSpeakers(groups.len()));
    }
    let rows: Vec<Tensor> = embeddings.iter().flatten().map(|e| e.reshape(&[1, e.len()])).collect::<Result<_>>()?;
    if rows.is_empty() {
        return Err(Error::extent("every speaker needs at least one embedding"));
    }
    Ok((Tensor::concat_rows(&rows)?, groups))
}

/// Per-utterance GE2E terms, grouped by speaker.
pub fn ge2e_per_utterance(embeddings: &[Vec<Tensor>], w: f64, b: f64, cfg: Ge2eConfig) -> Result<Vec<Vec<f64>>> {
    let (emb, groups) = stack(embeddings)?;
    let mut g = Graph::new();
    let e = g.input(emb);
    let (wv, bv) = (g.input(Tensor::scalar(w)), g.input(Tensor::scalar(b)));
    let (logits, labels) = ge2e_logits(&mut g, e, &groups, wv, bv, cfg)?;
    let l = g.value(logits);
    let k = l.cols();
    let flat: Vec<f64> = l
        .data()
        .chunks(k)
        .zip(&labels)
        .map(|(row, &j)| {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            mx + row.iter().map(|z| (z - mx).exp()).sum::<f64>().ln() - row[j]
        })
        .collect();
    let mut out = Vec::with_capacity(groups.len());
    let mut start = 0;
    for n in groups {
        out.push(flat[start..start + n].to_vec());
        start += n;
    }
    Ok(out)
}

/// Total GE2E loss over all utterances.
pub fn ge2e_loss(embeddings: &[Vec<Tensor>], w: f64, b: f64, cfg: Ge2eConfig) -> Result<f64> {
    Ok(ge2e_per_utterance(embeddings, w, b, cfg)?.iter().flatten().sum())
}

/// Adds the similarity scale `w` (clamped at `1e-6`) and offset `b`.
pub fn add_ge2e_scale(store: &mut ParamStore) -> (super::ParamId, super::ParamId) {
    let w = store.add_bounded("ge2e.w", Tensor::scalar(10.0), 1e-6);
    let b = store.add("ge2e.b", Tensor::scalar(-5.0));
    (w, b)
}
