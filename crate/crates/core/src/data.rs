//! Desk-scale datasets: the bundled 8x8 digits as pixel sequences and a
//! synthetic speaker-verification set.

use crate::error::{Error, Result};
use crate::features::{permute_pixels, IdxDataset};
use crate::model::SequenceData;
use crate::rng::{normal, permutation, seeded, Rng};
use crate::tensor::Tensor;

const DIGITS_IMAGES: &[u8] = include_bytes!("../data/digits8x8-images.idx");
const DIGITS_LABELS: &[u8] = include_bytes!("../data/digits8x8-labels.idx");

/// The bundled 1797 handwritten digits, 8x8 pixels scaled to `[0, 1]`.
pub fn digits() -> Result<IdxDataset> {
    IdxDataset::from_idx(DIGITS_IMAGES, DIGITS_LABELS)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: SequenceData,
    pub val: SequenceData,
    pub test: SequenceData,
}

/// Turns images into one-pixel-per-step sequences (optionally under a fixed
/// pixel permutation drawn from `permute_seed`) and splits them after a
/// seeded shuffle: one sixth each for validation and test, the rest for
/// training.
pub fn pixel_sequence_splits(ds: &IdxDataset, permute_seed: Option<u64>, split_seed: u64) -> Result<Splits> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("no images".to_string()));
    }
    let seqs = match permute_seed {
        Some(s) => permute_pixels(ds, s)?.0,
        None => {
            let (n, l) = (ds.len(), ds.item_len());
            IdxDataset::new(ds.items.reshape(&[n, l, 1])?, ds.labels.clone())?
        }
    };
    let data = SequenceData::new(seqs.items, seqs.labels)?;
    let n = data.len();
    let held = ((n as f64) / 6.0).round() as usize;
    if n < 3 || held == 0 || 2 * held >= n {
        return Err(Error::EmptyDataset(format!("{n} items cannot be split three ways")));
    }
    let order = permutation(&mut seeded(split_seed), n);
    let train_n = n - 2 * held;
    Ok(Splits {
        train: data.subset(&order[..train_n])?,
        val: data.subset(&order[train_n..train_n + held])?,
        test: data.subset(&order[train_n + held..])?,
    })
}

/// Parameters of the synthetic speaker generator.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeakerConfig {
    pub train_speakers: usize,
    pub val_speakers: usize,
    pub test_speakers: usize,
    pub utterances: usize,
    pub frames: usize,
    pub feature_dim: usize,
    /// Standard deviation of speaker means around the origin.
    pub separation: f64,
    /// Standard deviation of per-frame noise around the speaker mean.
    pub noise: f64,
}

impl Default for SpeakerConfig {
    fn default() -> Self {
        SpeakerConfig {
            train_speakers: 64,
            val_speakers: 12,
            test_speakers: 12,
            utterances: 6,
            frames: 12,
            feature_dim: 8,
            separation: 1.0,
            noise: 0.75,
        }
    }
}

/// Utterances of `speakers` fresh speakers, grouped speaker by speaker.
/// Every frame is the speaker mean plus isotropic Gaussian noise, and each
/// utterance also carries a small random offset so that no two are alike.
fn speakers(rng: &mut Rng, cfg: &SpeakerConfig, speakers: usize) -> Result<SequenceData> {
    let (k, t, f) = (cfg.utterances, cfg.frames, cfg.feature_dim);
    let mut data = Vec::with_capacity(speakers * k * t * f);
    let mut labels = Vec::with_capacity(speakers * k);
    for s in 0..speakers {
        let mean: Vec<f64> = (0..f).map(|_| cfg.separation * normal(rng)).collect();
        for _ in 0..k {
            let offset: Vec<f64> = (0..f).map(|_| 0.25 * cfg.noise * normal(rng)).collect();
            for _ in 0..t {
                data.extend((0..f).map(|i| mean[i] + offset[i] + cfg.noise * normal(rng)));
            }
            labels.push(s);
        }
    }
    SequenceData::new(Tensor::from_vec(&[speakers * k, t, f], data)?, labels)
}

/// Train, validation and test speakers, all disjoint.
pub fn synthetic_speakers(cfg: &SpeakerConfig, seed: u64) -> Result<Splits> {
    if cfg.utterances < 2 || cfg.frames == 0 || cfg.feature_dim == 0 {
        return Err(Error::Config("speakers need at least 2 utterances of non-empty frames".to_string()));
    }
    for (n, what) in [(cfg.train_speakers, "train"), (cfg.val_speakers, "val"), (cfg.test_speakers, "test")] {
        if n < 2 {
            return Err(Error::Config(format!("{what} split needs at least 2 speakers, got {n}")));
        }
    }
    let mut rng = seeded(seed);
    Ok(Splits {
        train: speakers(&mut rng, cfg, cfg.train_speakers)?,
        val: speakers(&mut rng, cfg, cfg.val_speakers)?,
        test: speakers(&mut rng, cfg, cfg.test_speakers)?,
    })
}
