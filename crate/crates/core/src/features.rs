//! Audio and image front ends: PCM16 WAV, STFT, mel filterbank, MFCC, IDX.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{permutation, seeded};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::MalformedHeader("sample rate must be positive".to_string()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::extent("audio samples must be finite"));
        }
        Ok(AudioBuffer { samples, sample_rate })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Reads a RIFF/WAVE file holding 16-bit PCM. Only the first channel is kept;
/// samples are scaled by `1/32768`.
pub fn read_wav_pcm16(bytes: &[u8]) -> Result<AudioBuffer> {
    let bad = |m: &str| Error::MalformedHeader(m.to_string());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("missing RIFF/WAVE signature"));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(bytes, pos + 4) as usize;
        let body = pos + 8;
        if id == b"fmt " {
            if size < 16 || body + size > bytes.len() {
                return Err(bad("short fmt chunk"));
            }
            format =
                Some((le_u16(bytes, body), le_u16(bytes, body + 2), le_u32(bytes, body + 4), le_u16(bytes, body + 14)));
        } else if id == b"data" {
            let (tag, channels, rate, bits) = format.ok_or_else(|| bad("data chunk before fmt chunk"))?;
            if tag != 1 {
                return Err(Error::UnsupportedEncoding(format!("format tag {tag}, expected PCM (1)")));
            }
            if bits != 16 {
                return Err(Error::UnsupportedEncoding(format!("{bits}-bit samples, expected 16")));
            }
            if channels == 0 || rate == 0 {
                return Err(bad("zero channels or sample rate"));
            }
            if body + size > bytes.len() {
                return Err(bad("data chunk extends past end of file"));
            }
            let stride = 2 * channels as usize;
            let samples = bytes[body..body + size]
                .chunks_exact(stride)
                .map(|f| i16::from_le_bytes([f[0], f[1]]) as f64 / 32768.0)
                .collect();
            return AudioBuffer::new(samples, rate);
        }
        pos = body + size + (size & 1);
    }
    Err(bad("no data chunk"))
}

/// Mono 16-bit PCM WAV encoding; samples are clipped to `[-1, 1)`.
pub fn write_wav_pcm16(a: &AudioBuffer) -> Vec<u8> {
    let data_len = 2 * a.samples.len() as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&a.sample_rate.to_le_bytes());
    out.extend_from_slice(&(2 * a.sample_rate).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &a.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Counts butterflies performed by [`fft_in_place`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FftStats {
    pub butterflies: u64,
}

/// Iterative radix-2 decimation-in-time FFT. `re.len()` must be a power of two.
pub fn fft_in_place(re: &mut [f64], im: &mut [f64], stats: &mut FftStats) {
    let n = re.len();
    assert!(n.is_power_of_two() && im.len() == n, "FFT length must be a power of two");
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) };
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let (wr, wi) = ((ang * k as f64).cos(), (ang * k as f64).sin());
                let (a, b) = (start + k, start + k + len / 2);
                let tr = re[b] * wr - im[b] * wi;
                let ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                stats.butterflies += 1;
            }
        }
        len <<= 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
    Hamming,
}

impl Window {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        let (a0, a1) = match self {
            Window::Hann => (0.5, 0.5),
            Window::Hamming => (0.54, 0.46),
        };
        (0..n).map(|i| a0 - a1 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
    }
}

/// Frames x bins magnitudes (or log energies after the mel stage).
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub data: Tensor,
    pub frame_ms: f64,
    pub hop_ms: f64,
    /// Center frequency in Hz of each column.
    pub bin_hz: Vec<f64>,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.data.rows()
    }

    pub fn bins(&self) -> usize {
        self.data.cols()
    }
}

fn samples_for(ms: f64, rate: u32) -> usize {
    (ms * rate as f64 / 1000.0).round() as usize
}

/// Number of full frames: `floor((n - frame) / hop) + 1`.
pub fn frame_count(n: usize, frame: usize, hop: usize) -> Result<usize> {
    if n < frame || frame == 0 {
        return Err(Error::SignalTooShort { samples: n, frame });
    }
    Ok((n - frame) / hop + 1)
}

/// Magnitude STFT. Each frame is windowed, zero-padded to the next power
/// of two and transformed; bins `0..=n_fft/2` are kept.
pub fn stft(a: &AudioBuffer, frame_ms: f64, hop_ms: f64, window: Window) -> Result<Spectrogram> {
    if !(hop_ms > 0.0 && frame_ms >= hop_ms) {
        return Err(Error::extent(format!("need frame_ms >= hop_ms > 0, got {frame_ms} / {hop_ms}")));
    }
    let frame = samples_for(frame_ms, a.sample_rate);
    let hop = samples_for(hop_ms, a.sample_rate).max(1);
    let frames = frame_count(a.samples.len(), frame, hop)?;
    let n_fft = frame.next_power_of_two();
    let bins = n_fft / 2 + 1;
    let win = window.coefficients(frame);
    let mut out = Vec::with_capacity(frames * bins);
    let mut stats = FftStats::default();
    let (mut re, mut im) = (vec![0.0; n_fft], vec![0.0; n_fft]);
    for f in 0..frames {
        let x = &a.samples[f * hop..f * hop + frame];
        re.iter_mut().for_each(|v| *v = 0.0);
        im.iter_mut().for_each(|v| *v = 0.0);
        for (r, (s, w)) in re.iter_mut().zip(x.iter().zip(&win)) {
            *r = s * w;
        }
        fft_in_place(&mut re, &mut im, &mut stats);
        out.extend((0..bins).map(|k| re[k].hypot(im[k])));
    }
    let bin_hz = (0..bins).map(|k| k as f64 * a.sample_rate as f64 / n_fft as f64).collect();
    Ok(Spectrogram { data: Tensor::from_vec(&[frames, bins], out)?, frame_ms, hop_ms, bin_hz })
}

/// `2595 log10(1 + f / 700)`.
pub fn mel_scale(f: f64) -> Result<f64> {
    if f < 0.0 {
        return Err(Error::NegativeFrequency(f));
    }
    Ok(2595.0 * (1.0 + f / 700.0).log10())
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters with unit peaks, band edges equally spaced in mel.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    /// `n_mels x bins`
    pub weights: Tensor,
    /// Peak frequency of each filter in Hz.
    pub centers_hz: Vec<f64>,
    pub f_min: f64,
    pub f_max: f64,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, bin_hz: &[f64], f_min: f64, f_max: f64) -> Result<Self> {
        if n_mels == 0 || f_max <= f_min {
            return Err(Error::extent(format!("{n_mels} mel bands over [{f_min}, {f_max}] Hz")));
        }
        let (lo, hi) = (mel_scale(f_min)?, mel_scale(f_max)?);
        let edges: Vec<f64> =
            (0..n_mels + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64)).collect();
        let bins = bin_hz.len();
        let mut w = vec![0.0; n_mels * bins];
        for m in 0..n_mels {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            for (k, &f) in bin_hz.iter().enumerate() {
                let v = if f > l && f <= c {
                    (f - l) / (c - l)
                } else if f > c && f < r {
                    (r - f) / (r - c)
                } else {
                    0.0
                };
                w[m * bins + k] = v;
            }
        }
        Ok(MelFilterbank {
            weights: Tensor::from_vec(&[n_mels, bins], w)?,
            centers_hz: edges[1..=n_mels].to_vec(),
            f_min,
            f_max,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.centers_hz.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub window: Window,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            frame_ms: 30.0,
            hop_ms: 10.0,
            n_mels: 40,
            f_min: 20.0,
            f_max: 4000.0,
            window: Window::Hann,
            log_floor: 1e-10,
        }
    }
}

/// Natural log of mel-filtered power, floored at `cfg.log_floor`.
pub fn log_mel_spectrogram(a: &AudioBuffer, cfg: &FeatureConfig) -> Result<Spectrogram> {
    let spec = stft(a, cfg.frame_ms, cfg.hop_ms, cfg.window)?;
    let bank = MelFilterbank::new(cfg.n_mels, &spec.bin_hz, cfg.f_min, cfg.f_max)?;
    let power = spec.data.map(|x| x * x);
    let energies = power.matmul(&bank.weights.transpose()?)?;
    Ok(Spectrogram {
        data: energies.map(|e| e.max(cfg.log_floor).ln()),
        frame_ms: cfg.frame_ms,
        hop_ms: cfg.hop_ms,
        bin_hz: bank.centers_hz,
    })
}

/// `c_n = sum_{m=1}^{M} S_m cos(n (m - 1/2) pi / M)` per frame, `n < n_coeffs`.
pub fn mfcc(log_mel: &Spectrogram, n_coeffs: usize) -> Result<Tensor> {
    let (frames, m) = (log_mel.frames(), log_mel.bins());
    if n_coeffs == 0 || n_coeffs > m {
        return Err(Error::extent(format!("{n_coeffs} coefficients from {m} mel bands")));
    }
    let basis = Tensor::from_fn(&[m, n_coeffs], |ix| {
        let (mm, n) = (ix[0] as f64 + 1.0, ix[1] as f64);
        (n * (mm - 0.5) * PI / m as f64).cos()
    });
    let out = log_mel.data.matmul(&basis)?;
    debug_assert_eq!(out.shape(), &[frames, n_coeffs]);
    Ok(out)
}

/// Unsigned-byte IDX array: extents and raw payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl IdxArray {
    /// Values scaled to `[0, 1]` by `1/255`.
    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::from_vec(&self.dims, self.bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }
}

/// Parses an IDX file: `00 00 08 n`, `n` big-endian `u32` extents, payload.
pub fn parse_idx_raw(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        let mut m = [0u8; 4];
        m[..bytes.len()].copy_from_slice(bytes);
        return Err(Error::BadMagic(m));
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if magic[0] != 0 || magic[1] != 0 || magic[2] != 0x08 || magic[3] == 0 {
        return Err(Error::BadMagic(magic));
    }
    let n = magic[3] as usize;
    let header = 4 + 4 * n;
    if bytes.len() < header {
        return Err(Error::TruncatedPayload { expected: header, found: bytes.len() });
    }
    let dims: Vec<usize> = (0..n)
        .map(|k| u32::from_be_bytes([bytes[4 + 4 * k], bytes[5 + 4 * k], bytes[6 + 4 * k], bytes[7 + 4 * k]]) as usize)
        .collect();
    let len: usize = dims.iter().product();
    if bytes.len() != header + len {
        return Err(Error::TruncatedPayload { expected: header + len, found: bytes.len() });
    }
    Ok(IdxArray { dims, bytes: bytes[header..].to_vec() })
}

/// [`parse_idx_raw`] followed by scaling to `[0, 1]`.
pub fn parse_idx(bytes: &[u8]) -> Result<Tensor> {
    parse_idx_raw(bytes)?.to_tensor()
}

pub fn serialize_idx(a: &IdxArray) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, a.dims.len() as u8];
    for &d in &a.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&a.bytes);
    out
}

/// Inverse of [`IdxArray::to_tensor`] (values rounded to the nearest byte).
pub fn tensor_to_idx(t: &Tensor) -> IdxArray {
    IdxArray {
        dims: t.shape().to_vec(),
        bytes: t.data().iter().map(|&x| (x * 255.0).round().clamp(0.0, 255.0) as u8).collect(),
    }
}

/// Images with one label each.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxDataset {
    /// `N x ...`, values in `[0, 1]`.
    pub items: Tensor,
    pub labels: Vec<usize>,
}

impl IdxDataset {
    pub fn new(items: Tensor, labels: Vec<usize>) -> Result<Self> {
        let n = items.shape().first().copied().unwrap_or(0);
        if n != labels.len() {
            return Err(Error::LengthMismatch(labels.len(), n));
        }
        Ok(IdxDataset { items, labels })
    }

    pub fn from_idx(images: &[u8], labels: &[u8]) -> Result<Self> {
        let items = parse_idx(images)?;
        let labels = parse_idx_raw(labels)?.bytes.into_iter().map(usize::from).collect();
        Self::new(items, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Pixels per item.
    pub fn item_len(&self) -> usize {
        self.items.shape()[1..].iter().product()
    }

    pub fn item(&self, i: usize) -> &[f64] {
        let l = self.item_len();
        &self.items.data()[i * l..(i + 1) * l]
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let mut shape = self.items.shape().to_vec();
        shape[0] = idx.len();
        let data = idx.iter().flat_map(|&i| self.item(i).iter().copied()).collect();
        Self::new(Tensor::from_vec(&shape, data)?, idx.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Flattens every image and reorders its pixels by one permutation drawn
/// from `seed`. Returns sequences of shape `N x L x 1` and the permutation
/// (`out[t] = in[perm[t]]`).
pub fn permute_pixels(ds: &IdxDataset, seed: u64) -> Result<(IdxDataset, Vec<usize>)> {
    if ds.items.rank() < 2 {
        return Err(Error::RaggedImages);
    }
    let (n, l) = (ds.len(), ds.item_len());
    let perm = permutation(&mut seeded(seed), l);
    let mut data = Vec::with_capacity(n * l);
    for i in 0..n {
        let img = ds.item(i);
        data.extend(perm.iter().map(|&p| img[p]));
    }
    Ok((IdxDataset::new(Tensor::from_vec(&[n, l, 1], data)?, ds.labels.clone())?, perm))
}

/// Builds an IDX dataset from separately sized images, which must share one size.
pub fn stack_images(images: &[Vec<f64>], labels: Vec<usize>) -> Result<IdxDataset> {
    let l = images.first().map_or(0, Vec::len);
    if l == 0 || images.iter().any(|im| im.len() != l) {
        return Err(Error::RaggedImages);
    }
    IdxDataset::new(Tensor::from_vec(&[images.len(), l], images.concat())?, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, uniform};
    use proptest::prelude::*;

    fn tone(freq: f64, rate: u32, secs: f64) -> AudioBuffer {
        let n = (rate as f64 * secs) as usize;
        let s = (0..n).map(|i| 0.5 * (2.0 * PI * freq * i as f64 / rate as f64).sin()).collect();
        AudioBuffer::new(s, rate).unwrap()
    }

    #[test]
    fn wav_examples() {
        let a = AudioBuffer::new(vec![0.0; 4], 8000).unwrap();
        let back = read_wav_pcm16(&write_wav_pcm16(&a)).unwrap();
        assert_eq!(back, a);

        let mut bytes = write_wav_pcm16(&AudioBuffer::new(vec![0.0], 16000).unwrap());
        let n = bytes.len();
        bytes[n - 2..].copy_from_slice(&32767i16.to_le_bytes());
        let s = read_wav_pcm16(&bytes).unwrap().samples[0];
        assert_eq!(s, 32767.0 / 32768.0);

        bytes.truncate(n - 1);
        assert!(matches!(read_wav_pcm16(&bytes), Err(Error::MalformedHeader(_))));
        assert!(matches!(read_wav_pcm16(b"RIFX0000WAVE"), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn wav_rejects_non_pcm16() {
        let mut bytes = write_wav_pcm16(&AudioBuffer::new(vec![0.1, 0.2], 8000).unwrap());
        bytes[34] = 8; // bits per sample
        assert!(matches!(read_wav_pcm16(&bytes), Err(Error::UnsupportedEncoding(_))));
        bytes[34] = 16;
        bytes[20] = 3; // IEEE float tag
        assert!(matches!(read_wav_pcm16(&bytes), Err(Error::UnsupportedEncoding(_))));
    }

    #[test]
    fn wav_takes_first_channel() {
        let mut bytes = write_wav_pcm16(&AudioBuffer::new(vec![0.0; 4], 8000).unwrap());
        bytes[22] = 2; // stereo: 4 int16 values become 2 frames
        let pcm: [i16; 4] = [100, -5, 200, -6];
        for (k, v) in pcm.iter().enumerate() {
            bytes[44 + 2 * k..46 + 2 * k].copy_from_slice(&v.to_le_bytes());
        }
        let a = read_wav_pcm16(&bytes).unwrap();
        assert_eq!(a.samples, vec![100.0 / 32768.0, 200.0 / 32768.0]);
    }

    #[test]
    fn fft_matches_direct_dft() {
        let mut rng = seeded(1);
        let n = 64;
        let x: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let (mut re, mut im) = (x.clone(), vec![0.0; n]);
        fft_in_place(&mut re, &mut im, &mut FftStats::default());
        for k in 0..n {
            let (mut sr, mut si) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let a = -2.0 * PI * (k * t) as f64 / n as f64;
                sr += v * a.cos();
                si += v * a.sin();
            }
            assert!((re[k] - sr).abs() < 1e-10 && (im[k] - si).abs() < 1e-10);
        }
    }

    #[test]
    fn fft_operation_count_is_n_log_n() {
        for p in 0..=12 {
            let n = 1usize << p;
            let mut stats = FftStats::default();
            fft_in_place(&mut vec![0.0; n], &mut vec![0.0; n], &mut stats);
            assert_eq!(stats.butterflies, (n / 2 * p) as u64);
        }
    }

    #[test]
    fn stft_examples() {
        let dc = AudioBuffer::new(vec![0.3; 800], 8000).unwrap();
        let s = stft(&dc, 30.0, 10.0, Window::Hann).unwrap();
        for f in 0..s.frames() {
            let row = &s.data.data()[f * s.bins()..(f + 1) * s.bins()];
            let argmax = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, 0);
        }
        let zero = AudioBuffer::new(vec![0.0; 800], 8000).unwrap();
        assert!(stft(&zero, 30.0, 10.0, Window::Hamming).unwrap().data.data().iter().all(|&x| x == 0.0));

        // n_fft = 256 at 8 kHz; bin 40 is 1250 Hz
        let s = stft(&tone(1250.0, 8000, 0.2), 30.0, 10.0, Window::Hann).unwrap();
        assert_eq!(s.bins(), 129);
        for f in 0..s.frames() {
            let row = &s.data.data()[f * 129..(f + 1) * 129];
            let argmax = (0..129).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, 40);
        }
        let short = AudioBuffer::new(vec![0.0; 100], 8000).unwrap();
        assert!(matches!(
            stft(&short, 30.0, 10.0, Window::Hann),
            Err(Error::SignalTooShort { samples: 100, frame: 240 })
        ));
    }

    #[test]
    fn frame_count_formula() {
        for n in (240..1000).step_by(13) {
            for hop in [1, 7, 80, 240] {
                let a = AudioBuffer::new(vec![0.0; n], 8000).unwrap();
                let hop_ms = hop as f64 / 8.0;
                let s = stft(&a, 30.0, hop_ms, Window::Hann).unwrap();
                assert_eq!(s.frames(), (n - 240) / hop + 1);
            }
        }
    }

    #[test]
    fn mel_examples() {
        assert_eq!(mel_scale(0.0).unwrap(), 0.0);
        assert!((mel_scale(700.0).unwrap() - 2595.0 * 2f64.log10()).abs() < 1e-9);
        assert!((mel_scale(700.0).unwrap() - 781.1728).abs() < 1e-4);
        let mut prev = -1.0;
        for f in (0..=20_000).step_by(1000) {
            let m = mel_scale(f as f64).unwrap();
            assert!(m > prev);
            prev = m;
        }
        assert!(matches!(mel_scale(-1.0), Err(Error::NegativeFrequency(_))));
        assert!((mel_to_hz(mel_scale(1234.5).unwrap()) - 1234.5).abs() < 1e-8);
    }

    #[test]
    fn filterbank_geometry() {
        let bins: Vec<f64> = (0..129).map(|k| k as f64 * 31.25).collect();
        let fb = MelFilterbank::new(40, &bins, 20.0, 4000.0).unwrap();
        assert!(fb.weights.data().iter().all(|&w| w >= 0.0));
        assert!(fb.centers_hz.windows(2).all(|c| c[0] < c[1]));
        for (k, &f) in bins.iter().enumerate() {
            if f > 20.0 && f < 4000.0 {
                let s: f64 = (0..40).map(|m| fb.weights.data()[m * 129 + k]).sum();
                assert!(s > 0.0, "bin {k} ({f} Hz) uncovered");
            }
        }
    }

    #[test]
    fn log_mel_examples() {
        let cfg = FeatureConfig::default();
        let zero = AudioBuffer::new(vec![0.0; 8000], 8000).unwrap();
        let s = log_mel_spectrogram(&zero, &cfg).unwrap();
        assert_eq!(s.data.shape(), &[98, 40]);
        assert!(s.data.data().iter().all(|&x| x == 1e-10f64.ln()));

        let mut rng = seeded(2);
        let noise = AudioBuffer::new((0..8000).map(|_| uniform(&mut rng, -0.5, 0.5)).collect(), 8000).unwrap();
        let s = log_mel_spectrogram(&noise, &cfg).unwrap();
        assert!(s.data.data().iter().all(|&x| x > 1e-10f64.ln()));

        let s = log_mel_spectrogram(&tone(1000.0, 8000, 1.0), &cfg).unwrap();
        let nearest =
            (0..40).min_by(|&a, &b| (s.bin_hz[a] - 1000.0).abs().total_cmp(&(s.bin_hz[b] - 1000.0).abs())).unwrap();
        for f in 0..s.frames() {
            let row = &s.data.data()[f * 40..(f + 1) * 40];
            let argmax = (0..40).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, nearest);
        }
    }

    fn mfcc_loop(s: &Spectrogram, n_coeffs: usize) -> Vec<f64> {
        let m = s.bins();
        let mut out = Vec::new();
        for f in 0..s.frames() {
            for n in 0..n_coeffs {
                let mut c = 0.0;
                for mm in 1..=m {
                    c += s.data.data()[f * m + mm - 1] * (n as f64 * (mm as f64 - 0.5) * PI / m as f64).cos();
                }
                out.push(c);
            }
        }
        out
    }

    fn spec(data: Tensor) -> Spectrogram {
        let bins = data.cols();
        Spectrogram { data, frame_ms: 30.0, hop_ms: 10.0, bin_hz: vec![0.0; bins] }
    }

    #[test]
    fn mfcc_examples() {
        let s = spec(Tensor::full(&[3, 40], 2.5));
        let c = mfcc(&s, 13).unwrap();
        for f in 0..3 {
            assert!((c.data()[f * 13] - 100.0).abs() < 1e-12);
            assert!(c.data()[f * 13 + 1..(f + 1) * 13].iter().all(|x| x.abs() < 1e-12));
        }
        assert!(mfcc(&spec(Tensor::zeros(&[2, 40])), 40).unwrap().data().iter().all(|&x| x == 0.0));
        assert!(matches!(mfcc(&s, 41), Err(Error::ExtentMismatch(_))));

        let mut rng = seeded(3);
        let s = spec(crate::rng::normal_tensor(&mut rng, &[5, 40], 3.0));
        let c = mfcc(&s, 20).unwrap();
        for (a, b) in c.data().iter().zip(mfcc_loop(&s, 20)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn idx_examples() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 4, 0, 51, 102, 255];
        let t = parse_idx(&bytes).unwrap();
        assert_eq!(t.shape(), &[4]);
        assert_eq!(t.data(), &[0.0, 0.2, 0.4, 1.0]);

        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 28, 0, 0, 0, 28];
        bytes.extend((0..2 * 28 * 28).map(|i| (i % 256) as u8));
        assert_eq!(parse_idx(&bytes).unwrap().shape(), &[2, 28, 28]);
        assert_eq!(serialize_idx(&parse_idx_raw(&bytes).unwrap()), bytes);

        assert!(matches!(parse_idx(&[0, 0, 9, 1]), Err(Error::BadMagic([0, 0, 9, 1]))));
        assert!(matches!(parse_idx(&[1, 0, 8, 1]), Err(Error::BadMagic(_))));
        assert!(matches!(
            parse_idx(&bytes[..bytes.len() - 1]),
            Err(Error::TruncatedPayload { expected: 1584, found: 1583 })
        ));
    }

    #[test]
    fn permutation_examples() {
        let mut rng = seeded(4);
        let items = crate::rng::uniform_tensor(&mut rng, &[3, 28, 28], 0.0, 1.0);
        let ds = IdxDataset::new(items, vec![1, 2, 3]).unwrap();
        let (p, perm) = permute_pixels(&ds, 0).unwrap();
        assert_eq!(p.items.shape(), &[3, 784, 1]);
        let mut inv = vec![0; 784];
        for (t, &s) in perm.iter().enumerate() {
            inv[s] = t;
        }
        for i in 0..3 {
            let restored: Vec<f64> = (0..784).map(|s| p.item(i)[inv[s]]).collect();
            assert_eq!(restored, ds.item(i));
        }
        let other = IdxDataset::new(crate::rng::uniform_tensor(&mut rng, &[2, 784], 0.0, 1.0), vec![0, 0]).unwrap();
        assert_eq!(permute_pixels(&other, 0).unwrap().1, perm);
        let (_, perm1) = permute_pixels(&ds, 1).unwrap();
        let differ = perm.iter().zip(&perm1).filter(|(a, b)| a != b).count();
        assert!(differ >= 700, "{differ}");

        let flat = IdxDataset::new(Tensor::vector(vec![0.0, 1.0]), vec![0, 1]).unwrap();
        assert!(matches!(permute_pixels(&flat, 0), Err(Error::RaggedImages)));
        assert!(matches!(stack_images(&[vec![0.0; 3], vec![0.0; 2]], vec![0, 1]), Err(Error::RaggedImages)));
    }

    proptest! {
        #[test]
        fn idx_round_trip(dims in proptest::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
            let len: usize = dims.iter().product();
            let mut rng = seeded(seed);
            let bytes: Vec<u8> = (0..len).map(|_| crate::rng::below(&mut rng, 256) as u8).collect();
            let a = IdxArray { dims, bytes };
            let encoded = serialize_idx(&a);
            let parsed = parse_idx_raw(&encoded).unwrap();
            prop_assert_eq!(&parsed, &a);
            prop_assert_eq!(tensor_to_idx(&parsed.to_tensor().unwrap()), a);
            prop_assert_eq!(serialize_idx(&parsed), encoded);
        }
    }
}
