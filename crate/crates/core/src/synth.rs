//! Seeded synthetic audio-visual scenes with exact ground truth.
//!
//! Each category owns a colour and a tone (`200·(i+1)` Hz). A scene is textured grey
//! noise with one filled ellipse per sounding category; its audio is the sum of those
//! categories' sinusoids. Everything is a pure function of the seed.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::audio::{Waveform, SAMPLE_RATE};
use crate::error::{dim_err, usage_err, Error, Result};
use crate::image::Image;
use crate::locseg::Mask;
use crate::metrics::SourceTruth;
use crate::params::{seeded_rng, SeededRng};

/// Base colours; index = category id.
pub const PALETTE: [[f64; 3]; 8] = [
    [0.90, 0.10, 0.10],
    [0.10, 0.80, 0.15],
    [0.15, 0.25, 0.95],
    [0.95, 0.90, 0.10],
    [0.85, 0.15, 0.85],
    [0.10, 0.85, 0.90],
    [0.95, 0.55, 0.05],
    [0.45, 0.10, 0.60],
];

pub const MAX_CATEGORIES: usize = PALETTE.len();

/// Hard bounds on a source's share of the image.
pub const AREA_BOUNDS: (f64, f64) = (0.02, 0.30);

pub fn category_frequency(category: usize) -> f64 {
    200.0 * (category + 1) as f64
}

pub fn category_color(category: usize) -> [f64; 3] {
    PALETTE[category]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub categories: usize,
    /// Range the target ellipse area fraction is drawn from.
    pub min_area: f64,
    pub max_area: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            categories: 4,
            min_area: 0.08,
            max_area: 0.25,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.categories == 0 || self.categories > MAX_CATEGORIES {
            return Err(usage_err!("categories must be in 1..={MAX_CATEGORIES}"));
        }
        if self.height < 8 || self.width < 8 {
            return Err(usage_err!("scenes must be at least 8x8"));
        }
        if !(AREA_BOUNDS.0 <= self.min_area && self.min_area <= self.max_area && self.max_area <= AREA_BOUNDS.1) {
            return Err(usage_err!("area range must lie within {AREA_BOUNDS:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub image: Image,
    pub sources: Vec<SourceTruth>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticAudio {
    pub waveform: Waveform,
    pub categories: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvSample {
    pub scene: SyntheticScene,
    pub audio: SyntheticAudio,
}

impl AvSample {
    pub fn categories(&self) -> Vec<usize> {
        self.scene.sources.iter().map(|s| s.category).collect()
    }

    /// Union of every source mask.
    pub fn union_mask(&self) -> Mask {
        let first = &self.scene.sources[0].mask;
        self.scene.sources[1..]
            .iter()
            .fold(first.clone(), |acc, s| acc.union(&s.mask).expect("masks share a shape"))
    }
}

/// SplitMix64 finalizer.
pub fn mix_seed(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(seed: u64, tag: u64) -> SeededRng {
    seeded_rng(mix_seed(seed ^ mix_seed(tag)))
}

fn check_categories(categories: &[usize], total: usize) -> Result<()> {
    if categories.is_empty() || categories.len() > total {
        return Err(usage_err!("need between 1 and {total} categories, got {}", categories.len()));
    }
    if let Some(c) = categories.iter().find(|&&c| c >= total) {
        return Err(usage_err!("category {c} outside 0..{total}"));
    }
    let mut sorted = categories.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != categories.len() {
        return Err(usage_err!("duplicate categories {categories:?}"));
    }
    Ok(())
}

fn ellipse_mask(h: usize, w: usize, cx: f64, cy: f64, rx: f64, ry: f64) -> Mask {
    Mask::from_fn(h, w, |y, x| {
        let dx = (x as f64 + 0.5 - cx) / rx;
        let dy = (y as f64 + 0.5 - cy) / ry;
        dx * dx + dy * dy <= 1.0
    })
}

pub fn gen_scene(seed: u64, categories: &[usize], cfg: &SceneConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    check_categories(categories, cfg.categories)?;
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = stream(seed, 1);
    let mut data = Vec::with_capacity(h * w * 3);
    for _ in 0..h * w {
        let grey = rng.gen_range(0.3..0.7);
        for _ in 0..3 {
            data.push(grey + rng.gen_range(-0.06..0.06));
        }
    }
    let mut image = Image::new(h, w, 3, data)?;
    let mut sources: Vec<SourceTruth> = Vec::with_capacity(categories.len());
    for &c in categories {
        let mut placed = None;
        for _ in 0..100 {
            let area = rng.gen_range(cfg.min_area..=cfg.max_area) * (h * w) as f64;
            let aspect = libm::exp(rng.gen_range(-0.5..0.5));
            let rx = libm::sqrt(area / (PI * aspect));
            let ry = rx * aspect;
            if 2.0 * rx >= w as f64 || 2.0 * ry >= h as f64 {
                continue;
            }
            let cx = rng.gen_range(rx..w as f64 - rx);
            let cy = rng.gen_range(ry..h as f64 - ry);
            let m = ellipse_mask(h, w, cx, cy, rx, ry);
            let frac = m.area_fraction();
            if frac < AREA_BOUNDS.0 || frac > AREA_BOUNDS.1 || sources.iter().any(|s| s.mask.overlaps(&m)) {
                continue;
            }
            placed = Some(m);
            break;
        }
        let mask = placed.ok_or_else(|| {
            Error::Generation(alloc::format!("could not place category {c} after 100 attempts (seed {seed})"))
        })?;
        let base = category_color(c);
        for y in 0..h {
            for x in 0..w {
                if mask.get(y, x) {
                    for (ch, px) in image.pixel_mut(y, x).iter_mut().enumerate() {
                        *px = (base[ch] + rng.gen_range(-0.08..0.08)).clamp(0.0, 1.0);
                    }
                }
            }
        }
        sources.push(SourceTruth { category: c, mask });
    }
    Ok(SyntheticScene { image, sources, seed })
}

pub fn gen_audio(categories: &[usize], seed: u64, duration_s: f64, sample_rate: u32) -> Result<SyntheticAudio> {
    if !(duration_s > 0.0) || sample_rate == 0 {
        return Err(usage_err!("duration and sample rate must be positive"));
    }
    let n = libm::round(duration_s * sample_rate as f64) as usize;
    if n == 0 {
        return Err(usage_err!("duration shorter than one sample"));
    }
    let mut rng = stream(seed, 2);
    let tones: Vec<(f64, f64, f64)> = categories
        .iter()
        .map(|&c| {
            (
                category_frequency(c),
                rng.gen_range(0.8..1.2),
                rng.gen_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let sr = sample_rate as f64;
    let mut samples: Vec<f64> = (0..n)
        .map(|t| {
            let time = t as f64 / sr;
            tones
                .iter()
                .map(|&(f, a, ph)| a * libm::sin(2.0 * PI * f * time + ph))
                .sum::<f64>()
                + rng.gen_range(-0.01..0.01)
        })
        .collect();
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(libm::fabs(*s)));
    if peak > 1.0 {
        samples.iter_mut().for_each(|s| *s /= peak);
    }
    Ok(SyntheticAudio {
        waveform: Waveform::new(samples, sample_rate)?,
        categories: categories.to_vec(),
    })
}

/// Two samples side by side: images concatenated horizontally, masks padded into their
/// half, waveforms averaged.
pub fn make_duet(a: &AvSample, b: &AvSample) -> Result<AvSample> {
    let (ia, ib) = (&a.scene.image, &b.scene.image);
    if ia.height() != ib.height() || ia.width() != ib.width() {
        return Err(dim_err!("duet halves must share a shape"));
    }
    let (wa, wb) = (&a.audio.waveform, &b.audio.waveform);
    if wa.samples().len() != wb.samples().len() || wa.sample_rate() != wb.sample_rate() {
        return Err(dim_err!("duet waveforms must share length and rate"));
    }
    let image = ia.hconcat(ib)?;
    let width = image.width();
    let mut sources = Vec::new();
    for s in &a.scene.sources {
        sources.push(SourceTruth {
            category: s.category,
            mask: s.mask.pad_into(width, 0)?,
        });
    }
    for s in &b.scene.sources {
        sources.push(SourceTruth {
            category: s.category,
            mask: s.mask.pad_into(width, ia.width())?,
        });
    }
    let samples = wa.samples().iter().zip(wb.samples()).map(|(x, y)| 0.5 * (x + y)).collect();
    let mut categories = a.audio.categories.clone();
    categories.extend_from_slice(&b.audio.categories);
    Ok(AvSample {
        scene: SyntheticScene {
            image,
            sources,
            seed: a.scene.seed,
        },
        audio: SyntheticAudio {
            waveform: Waveform::new(samples, wa.sample_rate())?,
            categories,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const STRIDE: u64 = 1_000_000;

    pub fn offset(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => Self::STRIDE,
            Split::Test => 2 * Self::STRIDE,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    /// Sample seed for position `index`; the three splits occupy disjoint ranges.
    pub fn sample_seed(self, index: usize) -> Result<u64> {
        if index as u64 >= Self::STRIDE {
            return Err(usage_err!("split index {index} exceeds {}", Self::STRIDE));
        }
        Ok(self.offset() + index as u64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub scene: SceneConfig,
    pub audio_seconds: f64,
    pub sample_rate: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            audio_seconds: 3.0,
            sample_rate: SAMPLE_RATE,
        }
    }
}

/// Sample number `sample_seed` of a dataset: one random category, or for duets two
/// scenes with distinct categories.
pub fn gen_sample(dataset_seed: u64, sample_seed: u64, duet: bool, cfg: &SynthConfig) -> Result<AvSample> {
    let seed = mix_seed(dataset_seed ^ mix_seed(sample_seed));
    let mut rng = stream(seed, 3);
    let mut cats: Vec<usize> = (0..cfg.scene.categories).collect();
    cats.shuffle(&mut rng);
    let single = |c: usize, s: u64| -> Result<AvSample> {
        Ok(AvSample {
            scene: gen_scene(s, &[c], &cfg.scene)?,
            audio: gen_audio(&[c], s, cfg.audio_seconds, cfg.sample_rate)?,
        })
    };
    if duet {
        if cfg.scene.categories < 2 {
            return Err(usage_err!("duets need at least two categories"));
        }
        let a = single(cats[0], mix_seed(seed ^ 11))?;
        let b = single(cats[1], mix_seed(seed ^ 12))?;
        let mut d = make_duet(&a, &b)?;
        d.scene.seed = sample_seed;
        Ok(d)
    } else {
        let mut s = single(cats[0], seed)?;
        s.scene.seed = sample_seed;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{stft_log_spectrogram, StftConfig};

    #[test]
    fn scenes_are_deterministic() {
        let cfg = SceneConfig::default();
        let a = gen_scene(42, &[1, 3], &cfg).unwrap();
        let b = gen_scene(42, &[1, 3], &cfg).unwrap();
        assert_eq!(a, b);
        let c = gen_scene(43, &[1, 3], &cfg).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn one_category_one_mask() {
        let s = gen_scene(5, &[2], &SceneConfig::default()).unwrap();
        assert_eq!(s.sources.len(), 1);
        assert_eq!(s.sources[0].category, 2);
        assert!(s.sources[0].mask.area() > 0);
    }

    #[test]
    fn masks_are_disjoint_for_multi_source_scenes() {
        let cfg = SceneConfig {
            max_area: 0.12,
            ..SceneConfig::default()
        };
        for seed in 0..50 {
            let s = gen_scene(seed, &[0, 1, 2], &cfg).unwrap();
            for i in 0..3 {
                for j in i + 1..3 {
                    assert!(!s.sources[i].mask.overlaps(&s.sources[j].mask));
                }
            }
        }
    }

    #[test]
    fn bad_categories_are_rejected() {
        let cfg = SceneConfig::default();
        assert!(gen_scene(0, &[], &cfg).is_err());
        assert!(gen_scene(0, &[4], &cfg).is_err());
        assert!(gen_scene(0, &[1, 1], &cfg).is_err());
    }

    #[test]
    fn audio_is_deterministic_and_bounded() {
        let a = gen_audio(&[0, 2], 9, 0.5, SAMPLE_RATE).unwrap();
        let b = gen_audio(&[0, 2], 9, 0.5, SAMPLE_RATE).unwrap();
        assert_eq!(a, b);
        assert!(a.waveform.peak() <= 1.0);
        assert!(gen_audio(&[0], 9, 0.0, SAMPLE_RATE).is_err());
    }

    #[test]
    fn single_tone_peaks_at_its_bin() {
        let cfg = StftConfig::default();
        for c in 0..4 {
            let a = gen_audio(&[c], 1, 1.0, SAMPLE_RATE).unwrap();
            let s = stft_log_spectrogram(&a.waveform, &cfg).unwrap();
            let bin = libm::round(category_frequency(c) * cfg.n_fft as f64 / SAMPLE_RATE as f64) as usize;
            for f in 2..s.frames() - 2 {
                assert_eq!(s.column_argmax(f), bin, "category {c} frame {f}");
            }
        }
    }

    #[test]
    fn duet_layout() {
        let cfg = SynthConfig {
            audio_seconds: 0.2,
            ..SynthConfig::default()
        };
        let s = gen_sample(0, 3, false, &cfg).unwrap();
        let d = make_duet(&s, &s).unwrap();
        assert_eq!(d.scene.image.width(), 64);
        for y in 0..32 {
            for x in 0..32 {
                assert_eq!(d.scene.image.pixel(y, x), d.scene.image.pixel(y, x + 32));
            }
        }
        assert_eq!(d.scene.sources.len(), 2);
        assert_eq!(d.scene.sources[0].mask.area(), d.scene.sources[1].mask.area());
        assert_eq!(d.audio.waveform.samples(), s.audio.waveform.samples());
    }

    #[test]
    fn split_seeds_are_disjoint() {
        let a = Split::Train.sample_seed(999_999).unwrap();
        let b = Split::Val.sample_seed(0).unwrap();
        assert!(a < b);
        assert!(Split::Train.sample_seed(1_000_000).is_err());
    }
}
