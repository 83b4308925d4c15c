//! Log-magnitude STFT frontend.
//!
//! The default [`StftConfig`] is fixed by its output shape: a 3 s clip at 22,050 Hz
//! becomes a 257×300 spectrogram (`n_fft = 512`, hop 221, `n_fft/2` reflective padding
//! on both ends).

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{degenerate_err, dim_err, usage_err, Result};
use crate::tensor::Tensor;

pub const SAMPLE_RATE: u32 = 22_050;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(usage_err!("sample rate must be positive"));
        }
        if samples.is_empty() {
            return Err(degenerate_err!("empty waveform"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(crate::Error::NonFinite("waveform sample".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(libm::fabs(*s)))
    }
}

/// `bins × frames` log-magnitudes, stored bin-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    bins: usize,
    frames: usize,
    values: Vec<f64>,
}

impl Spectrogram {
    pub fn new(bins: usize, frames: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(&[bins, frames], values).map(Self::from_tensor_unchecked)
    }

    fn from_tensor_unchecked(t: Tensor) -> Self {
        let (bins, frames) = (t.shape()[0], t.shape()[1]);
        Self {
            bins,
            frames,
            values: t.into_data(),
        }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(dim_err!("spectrogram must be rank 2, got {:?}", t.shape()));
        }
        Ok(Self::from_tensor_unchecked(t.clone()))
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![self.bins, self.frames], self.values.clone())
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, bin: usize, frame: usize) -> f64 {
        self.values[bin * self.frames + frame]
    }

    /// Loudest bin of one frame (ties to the lowest bin).
    pub fn column_argmax(&self, frame: usize) -> usize {
        crate::autodiff::argmax_first((0..self.bins).map(|b| self.at(b, frame)))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Per-bin average over time.
    pub fn mean_over_frames(&self) -> Vec<f64> {
        self.values
            .chunks(self.frames)
            .map(|row| row.iter().sum::<f64>() / self.frames as f64)
            .collect()
    }

    /// Zero-mean, unit-variance copy. A constant spectrogram is only centred.
    pub fn standardized(&self) -> Self {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        let var = self.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = libm::sqrt(var);
        let scale = if sd > 0.0 { 1.0 / sd } else { 1.0 };
        Self {
            bins: self.bins,
            frames: self.frames,
            values: self.values.iter().map(|v| (v - mean) * scale).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StftConfig {
    pub n_fft: usize,
    pub win_samples: usize,
    pub hop_samples: usize,
    /// Reflective padding added to each end before framing.
    pub pad: usize,
    pub eps: f64,
    /// Standardize the spectrogram after the log.
    pub normalize: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: 512,
            win_samples: 512,
            hop_samples: 221,
            pad: 256,
            eps: 1e-5,
            normalize: false,
        }
    }
}

impl StftConfig {
    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frame count for a waveform of `len` samples.
    pub fn frames_for(&self, len: usize) -> Option<usize> {
        let padded = len + 2 * self.pad;
        if padded < self.win_samples || self.hop_samples == 0 {
            None
        } else {
            Some((padded - self.win_samples) / self.hop_samples + 1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Complex {
    re: f64,
    im: f64,
}

impl Complex {
    fn abs(self) -> f64 {
        libm::hypot(self.re, self.im)
    }
}

/// In-place iterative radix-2 FFT. `buf.len()` must be a power of two.
fn fft_pow2(buf: &mut [Complex]) {
    let n = buf.len();
    let mut j = 0;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let (s, c) = libm::sincos(ang * k as f64);
                let a = buf[start + k];
                let b = buf[start + k + len / 2];
                let t = Complex {
                    re: b.re * c - b.im * s,
                    im: b.re * s + b.im * c,
                };
                buf[start + k] = Complex { re: a.re + t.re, im: a.im + t.im };
                buf[start + k + len / 2] = Complex { re: a.re - t.re, im: a.im - t.im };
            }
        }
        len <<= 1;
    }
}

fn dft_direct(x: &[f64], n: usize, bins: usize) -> Vec<Complex> {
    (0..bins)
        .map(|k| {
            let mut acc = Complex { re: 0.0, im: 0.0 };
            for (t, &v) in x.iter().enumerate().take(n) {
                let (s, c) = libm::sincos(-2.0 * PI * (k * t % n) as f64 / n as f64);
                acc.re += v * c;
                acc.im += v * s;
            }
            acc
        })
        .collect()
}

/// One-sided DFT magnitudes (`n_fft/2 + 1` bins) of a frame zero-padded or truncated to `n_fft`.
pub fn dft_magnitudes(frame: &[f64], n_fft: usize) -> Vec<f64> {
    let bins = n_fft / 2 + 1;
    if n_fft.is_power_of_two() {
        let mut buf: Vec<Complex> = (0..n_fft)
            .map(|i| Complex {
                re: frame.get(i).copied().unwrap_or(0.0),
                im: 0.0,
            })
            .collect();
        fft_pow2(&mut buf);
        buf[..bins].iter().map(|c| c.abs()).collect()
    } else {
        dft_direct(frame, n_fft, bins).into_iter().map(Complex::abs).collect()
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * libm::cos(2.0 * PI * n as f64 / len as f64))
        .collect()
}

fn reflect_pad(x: &[f64], pad: usize) -> Result<Vec<f64>> {
    if pad == 0 {
        return Ok(x.to_vec());
    }
    if x.len() <= pad {
        return Err(degenerate_err!(
            "waveform of {} samples too short for reflective padding of {pad}",
            x.len()
        ));
    }
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((1..=pad).map(|i| x[n - 1 - i]));
    Ok(out)
}

/// Hann-windowed STFT, `ln(|X| + eps)` per bin and frame.
pub fn stft_log_spectrogram(w: &Waveform, cfg: &StftConfig) -> Result<Spectrogram> {
    if cfg.hop_samples == 0 || cfg.win_samples == 0 || cfg.n_fft < 2 {
        return Err(usage_err!("hop, window and n_fft must be positive"));
    }
    if !(cfg.eps > 0.0) {
        return Err(usage_err!("eps must be positive"));
    }
    let padded = reflect_pad(w.samples(), cfg.pad)?;
    let frames = cfg
        .frames_for(w.samples().len())
        .ok_or_else(|| degenerate_err!("waveform shorter than one window after padding"))?;
    let bins = cfg.bins();
    let window = hann(cfg.win_samples);
    // window wider than n_fft: keep the centred n_fft samples
    let crop = cfg.win_samples.saturating_sub(cfg.n_fft) / 2;
    let mut values = vec![0.0; bins * frames];
    let mut frame = vec![0.0; cfg.win_samples];
    for f in 0..frames {
        let start = f * cfg.hop_samples;
        for (i, slot) in frame.iter_mut().enumerate() {
            *slot = padded[start + i] * window[i];
        }
        let mags = dft_magnitudes(&frame[crop..], cfg.n_fft);
        for (b, m) in mags.into_iter().enumerate() {
            values[b * frames + f] = libm::log(m + cfg.eps);
        }
    }
    let spec = Spectrogram::new(bins, frames, values)?;
    Ok(if cfg.normalize { spec.standardized() } else { spec })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_seconds() -> usize {
        3 * SAMPLE_RATE as usize
    }

    #[test]
    fn full_scale_configuration_shape() {
        let w = Waveform::new(vec![0.0; three_seconds()], SAMPLE_RATE).unwrap();
        let s = stft_log_spectrogram(&w, &StftConfig::default()).unwrap();
        assert_eq!((s.bins(), s.frames()), (257, 300));
    }

    #[test]
    fn zero_signal_is_log_eps() {
        let w = Waveform::new(vec![0.0; 4000], SAMPLE_RATE).unwrap();
        let cfg = StftConfig::default();
        let s = stft_log_spectrogram(&w, &cfg).unwrap();
        let expect = libm::log(cfg.eps);
        assert!(s.values().iter().all(|&v| v == expect));
    }

    #[test]
    fn bin_centred_tone_peaks_at_its_bin() {
        let cfg = StftConfig::default();
        let k = 20;
        let f = k as f64 * SAMPLE_RATE as f64 / cfg.n_fft as f64;
        let omega = 2.0 * PI * f / SAMPLE_RATE as f64;
        // cosine with (len - 1)·omega a multiple of pi: reflection is seamless at both ends
        let len = 64 * 344 + 1;
        let samples = (0..len).map(|t| libm::cos(omega * t as f64)).collect();
        let s = stft_log_spectrogram(&Waveform::new(samples, SAMPLE_RATE).unwrap(), &cfg).unwrap();
        for frame in 0..s.frames() {
            assert_eq!(s.column_argmax(frame), k, "frame {frame}");
        }
        // a sine of arbitrary length peaks at the bin on every frame clear of the padding
        let samples: Vec<f64> = (0..22_050).map(|t| libm::sin(omega * t as f64)).collect();
        let w = Waveform::new(samples.clone(), SAMPLE_RATE).unwrap();
        let s = stft_log_spectrogram(&w, &cfg).unwrap();
        let interior = (cfg.pad.div_ceil(cfg.hop_samples))..(s.frames() - 2);
        for frame in interior.clone() {
            assert_eq!(s.column_argmax(frame), k, "frame {frame}");
        }
        // one interior frame against a direct DFT
        let frame = interior.start + 3;
        let start = frame * cfg.hop_samples - cfg.pad;
        let win = hann(cfg.win_samples);
        let windowed: Vec<f64> = (0..cfg.win_samples).map(|i| samples[start + i] * win[i]).collect();
        let direct = dft_direct(&windowed, cfg.n_fft, cfg.bins());
        for (b, c) in direct.iter().enumerate() {
            assert!((libm::log(c.abs() + cfg.eps) - s.at(b, frame)).abs() < 1e-8);
        }
    }

    #[test]
    fn fft_matches_direct_dft() {
        let x: Vec<f64> = (0..64).map(|i| libm::sin(i as f64 * 0.37) + 0.1 * i as f64).collect();
        let fast = dft_magnitudes(&x, 64);
        let slow: Vec<f64> = dft_direct(&x, 64, 33).into_iter().map(Complex::abs).collect();
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn too_short_is_degenerate() {
        let w = Waveform::new(vec![0.1; 100], SAMPLE_RATE).unwrap();
        let cfg = StftConfig {
            pad: 0,
            ..StftConfig::default()
        };
        assert!(matches!(stft_log_spectrogram(&w, &cfg), Err(crate::Error::Degenerate(_))));
        let cfg = StftConfig::default();
        assert!(matches!(stft_log_spectrogram(&w, &cfg), Err(crate::Error::Degenerate(_))));
    }

    #[test]
    fn reflect_padding_layout() {
        let p = reflect_pad(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(p, vec![3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0]);
    }
}
