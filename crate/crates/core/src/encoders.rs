//! Pool-project towers standing in for the visual and audio backbones.
//!
//! Visual: stage 1 projects raw `patch×patch` tiles, every later stage 2×2 average-pools
//! the previous stage and projects again, each followed by `tanh`. All S stage outputs form
//! the pyramid, optionally L2-normalized per location. Audio: the time-averaged
//! log-spectrogram goes through a linear frame projection, `tanh`, a second projection
//! and L2 normalization. Averaging before the first projection is the same as averaging
//! projected frames because that projection is linear.

use alloc::format;
use alloc::vec::Vec;

use crate::audio::Spectrogram;
use crate::autodiff::{Graph, Var};
use crate::error::{degenerate_err, dim_err, usage_err, Result};
use crate::image::Image;
use crate::params::{uniform_init, Bound, ParamStore, SeededRng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    /// Embedding width D.
    pub dim: usize,
    /// Number of pyramid stages S.
    pub stages: usize,
    /// Side of the raw pixel tiles fed to stage 1.
    pub patch: usize,
    pub channels: usize,
    /// Frequency bins of the input spectrogram.
    pub audio_bins: usize,
    pub normalize_visual: bool,
    pub normalize_audio: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            stages: 3,
            patch: 4,
            channels: 3,
            audio_bins: 257,
            normalize_visual: true,
            normalize_audio: true,
        }
    }
}

impl EncoderConfig {
    /// D = 512 and S = 4; a 160×160 input then ends on a 5×5 map (P = 25).
    pub fn full_scale() -> Self {
        Self {
            dim: 512,
            stages: 4,
            ..Self::default()
        }
    }

    /// Spatial grid of every stage for an `h×w` image.
    pub fn grid_sizes(&self, h: usize, w: usize) -> Result<Vec<(usize, usize)>> {
        if self.stages == 0 {
            return Err(usage_err!("at least one stage is required"));
        }
        let unit = self.patch << (self.stages - 1);
        if self.patch == 0 || h == 0 || w == 0 || h % unit != 0 || w % unit != 0 {
            return Err(dim_err!(
                "{h}x{w} image is not divisible by {unit} (patch {} over {} stages)",
                self.patch,
                self.stages
            ));
        }
        Ok((0..self.stages)
            .map(|s| (h / (self.patch << s), w / (self.patch << s)))
            .collect())
    }

    pub fn init_params(&self, rng: &mut SeededRng, store: &mut ParamStore) -> Result<()> {
        let d = self.dim;
        for s in 1..=self.stages {
            let fan_in = if s == 1 { self.patch * self.patch * self.channels } else { d };
            store.insert(&format!("visual.stage{s}.weight"), uniform_init(&[fan_in, d], fan_in, rng))?;
            store.insert(&format!("visual.stage{s}.bias"), uniform_init(&[d], fan_in, rng))?;
        }
        let bins = self.audio_bins;
        store.insert("audio.frame_proj.weight", uniform_init(&[bins, d], bins, rng))?;
        store.insert("audio.frame_proj.bias", uniform_init(&[d], bins, rng))?;
        store.insert("audio.proj.weight", uniform_init(&[d, d], d, rng))?;
        store.insert("audio.proj.bias", uniform_init(&[d], d, rng))?;
        Ok(())
    }
}

/// One pyramid level inside a graph: `(h·w)×D` rows in grid order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaleVar {
    pub var: Var,
    pub height: usize,
    pub width: usize,
}

pub fn visual_forward(g: &mut Graph, p: &Bound, cfg: &EncoderConfig, img: &Image) -> Result<Vec<ScaleVar>> {
    if img.channels() != cfg.channels {
        return Err(dim_err!("image has {} channels, encoder expects {}", img.channels(), cfg.channels));
    }
    let grids = cfg.grid_sizes(img.height(), img.width())?;
    let patches = g.constant(img.patchify(cfg.patch)?);
    let mut x = patches;
    let mut out = Vec::with_capacity(cfg.stages);
    for (s, &(h, w)) in grids.iter().enumerate() {
        if s > 0 {
            let (ph, pw) = grids[s - 1];
            x = g.avg_pool2x2(x, ph, pw)?;
        }
        let wv = p.var(&format!("visual.stage{}.weight", s + 1))?;
        let bv = p.var(&format!("visual.stage{}.bias", s + 1))?;
        let lin = g.matmul(x, wv)?;
        let pre = g.add_row(lin, bv)?;
        x = g.tanh(pre)?;
        let feat = if cfg.normalize_visual { g.normalize_rows(x)? } else { x };
        out.push(ScaleVar { var: feat, height: h, width: w });
    }
    Ok(out)
}

/// Audio embedding as a `1×D` row from a time-averaged spectrogram.
pub fn audio_forward(g: &mut Graph, p: &Bound, cfg: &EncoderConfig, pooled: &[f64]) -> Result<Var> {
    if pooled.len() != cfg.audio_bins {
        return Err(dim_err!("spectrogram has {} bins, encoder expects {}", pooled.len(), cfg.audio_bins));
    }
    let x = g.constant(Tensor::new(&[1, pooled.len()], pooled.to_vec())?);
    let w0 = p.var("audio.frame_proj.weight")?;
    let b0 = p.var("audio.frame_proj.bias")?;
    let w1 = p.var("audio.proj.weight")?;
    let b1 = p.var("audio.proj.bias")?;
    let h = g.matmul(x, w0)?;
    let h = g.add_row(h, b0)?;
    let h = g.tanh(h)?;
    let a = g.matmul(h, w1)?;
    let a = g.add_row(a, b1)?;
    if cfg.normalize_audio {
        g.normalize_rows(a).map_err(|_| degenerate_err!("audio embedding has zero norm"))
    } else {
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    /// `(height·width)×D`.
    pub features: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisualFeaturePyramid {
    pub scales: Vec<FeatureMap>,
}

impl VisualFeaturePyramid {
    pub fn dim(&self) -> usize {
        self.scales[0].features.shape()[1]
    }

    pub fn finest(&self) -> &FeatureMap {
        self.scales.last().expect("pyramid has at least one scale")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioEmbedding(pub Tensor);

impl AudioEmbedding {
    pub fn vector(&self) -> &[f64] {
        self.0.data()
    }
}

pub fn encode_image(img: &Image, params: &ParamStore, cfg: &EncoderConfig) -> Result<VisualFeaturePyramid> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let scales = visual_forward(&mut g, &p, cfg, img)?
        .into_iter()
        .map(|s| FeatureMap {
            height: s.height,
            width: s.width,
            features: g.value(s.var).clone(),
        })
        .collect();
    Ok(VisualFeaturePyramid { scales })
}

pub fn encode_audio(spec: &Spectrogram, params: &ParamStore, cfg: &EncoderConfig) -> Result<AudioEmbedding> {
    encode_pooled_audio(&spec.mean_over_frames(), params, cfg)
}

pub fn encode_pooled_audio(pooled: &[f64], params: &ParamStore, cfg: &EncoderConfig) -> Result<AudioEmbedding> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let a = audio_forward(&mut g, &p, cfg, pooled)?;
    let v = g.value(a).reshape(&[cfg.dim])?;
    Ok(AudioEmbedding(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::seeded_rng;

    fn params(cfg: &EncoderConfig) -> ParamStore {
        let mut store = ParamStore::new();
        cfg.init_params(&mut seeded_rng(7), &mut store).unwrap();
        store
    }

    #[test]
    fn desk_pyramid_shapes() {
        let cfg = EncoderConfig::default();
        let img = Image::filled(32, 32, &[0.2, 0.5, 0.9]).unwrap();
        let pyr = encode_image(&img, &params(&cfg), &cfg).unwrap();
        let shapes: Vec<_> = pyr.scales.iter().map(|m| (m.height, m.width)).collect();
        assert_eq!(shapes, [(8, 8), (4, 4), (2, 2)]);
        for m in &pyr.scales {
            assert_eq!(m.features.shape(), &[m.height * m.width, 64]);
        }
    }

    #[test]
    fn constant_image_gives_constant_maps() {
        let cfg = EncoderConfig {
            dim: 16,
            ..EncoderConfig::default()
        };
        let img = Image::filled(32, 32, &[0.3, 0.1, 0.7]).unwrap();
        let pyr = encode_image(&img, &params(&cfg), &cfg).unwrap();
        for m in &pyr.scales {
            let first = m.features.row(0).to_vec();
            for r in 1..m.height * m.width {
                for (a, b) in m.features.row(r).iter().zip(&first) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_stage_pyramid() {
        let cfg = EncoderConfig {
            stages: 1,
            dim: 8,
            ..EncoderConfig::default()
        };
        let img = Image::filled(16, 16, &[0.5; 3]).unwrap();
        let pyr = encode_image(&img, &params(&cfg), &cfg).unwrap();
        assert_eq!(pyr.scales.len(), 1);
        assert_eq!((pyr.scales[0].height, pyr.scales[0].width), (4, 4));
    }

    #[test]
    fn indivisible_image_is_rejected() {
        let cfg = EncoderConfig::default();
        let img = Image::filled(30, 32, &[0.5; 3]).unwrap();
        assert!(matches!(
            encode_image(&img, &params(&cfg), &cfg),
            Err(crate::Error::Dimension(_))
        ));
    }

    #[test]
    fn audio_embedding_is_unit_and_deterministic() {
        let cfg = EncoderConfig {
            audio_bins: 9,
            dim: 8,
            ..EncoderConfig::default()
        };
        let store = params(&cfg);
        let spec = Spectrogram::new(9, 4, (0..36).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let a = encode_audio(&spec, &store, &cfg).unwrap();
        let b = encode_audio(&spec, &store, &cfg).unwrap();
        assert_eq!(a, b);
        let n: f64 = a.vector().iter().map(|v| v * v).sum();
        assert!((n.sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_audio_projection_is_degenerate() {
        let cfg = EncoderConfig {
            audio_bins: 4,
            dim: 3,
            ..EncoderConfig::default()
        };
        let mut store = ParamStore::new();
        for (name, t) in params(&cfg).iter() {
            let z = if name.starts_with("audio.proj") { Tensor::zeros(t.shape()) } else { t.clone() };
            store.insert(name, z).unwrap();
        }
        let spec = Spectrogram::new(4, 2, alloc::vec![1.0; 8]).unwrap();
        assert!(matches!(encode_audio(&spec, &store, &cfg), Err(crate::Error::Degenerate(_))));
    }
}
