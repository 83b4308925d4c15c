//! Localization heatmaps and binary masks.

use alloc::vec;
use alloc::vec::Vec;

use crate::contrastive::cos_sim_map;
use crate::encoders::{AudioEmbedding, VisualFeaturePyramid};
use crate::error::{dim_err, usage_err, Result};
use crate::mmt::MmtOutput;
use crate::tensor::Tensor;

/// `height×width` score map.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationMap {
    scores: Tensor,
}

impl LocalizationMap {
    pub fn new(height: usize, width: usize, scores: Vec<f64>) -> Result<Self> {
        Ok(Self {
            scores: Tensor::new(&[height, width], scores)?,
        })
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(dim_err!("localization map must be rank 2, got {:?}", t.shape()));
        }
        Ok(Self { scores: t })
    }

    pub fn height(&self) -> usize {
        self.scores.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.scores.shape()[1]
    }

    pub fn scores(&self) -> &[f64] {
        self.scores.data()
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.scores
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.scores.at2(y, x)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.scores()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Rescaled to `[0,1]`; a constant map becomes all ones.
    pub fn min_max_normalized(&self) -> Self {
        let (lo, hi) = self.min_max();
        let data = if hi > lo {
            self.scores().iter().map(|v| (v - lo) / (hi - lo)).collect()
        } else {
            vec![1.0; self.scores.len()]
        };
        Self {
            scores: Tensor::from_parts(self.scores.shape().to_vec(), data),
        }
    }
}

/// Binary `height×width` mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width || height == 0 || width == 0 {
            return Err(dim_err!("mask {height}x{width} with {} bits", bits.len()));
        }
        Ok(Self { height, width, bits })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self { height, width, bits }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn area_fraction(&self) -> f64 {
        self.area() as f64 / self.bits.len() as f64
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn overlaps(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).any(|(a, b)| *a && *b)
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        if !self.same_shape(other) {
            return Err(dim_err!("union of differently shaped masks"));
        }
        Ok(Mask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect(),
        })
    }

    /// Places this mask at column offset `x0` of a wider empty canvas.
    pub fn pad_into(&self, width: usize, x0: usize) -> Result<Mask> {
        if x0 + self.width > width {
            return Err(dim_err!("mask of width {} does not fit at {x0} in {width}", self.width));
        }
        Ok(Mask::from_fn(self.height, width, |y, x| {
            x >= x0 && x < x0 + self.width && self.get(y, x - x0)
        }))
    }
}

/// Class-tagged masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    pub masks: Vec<(Option<usize>, Mask)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMethod {
    /// Min-max normalize, then keep values `>= level`.
    MinMax(f64),
    /// Keep raw values `>= level`.
    Fixed(f64),
}

impl Default for ThresholdMethod {
    fn default() -> Self {
        ThresholdMethod::MinMax(0.5)
    }
}

pub fn threshold_mask(map: &LocalizationMap, method: ThresholdMethod) -> Mask {
    let (h, w) = (map.height(), map.width());
    match method {
        ThresholdMethod::MinMax(level) => {
            let n = map.min_max_normalized();
            Mask::from_fn(h, w, |y, x| n.at(y, x) >= level)
        }
        ThresholdMethod::Fixed(level) => Mask::from_fn(h, w, |y, x| map.at(y, x) >= level),
    }
}

/// Cosine-similarity map of `audio` against every pyramid scale.
pub fn per_scale_maps(audio: &AudioEmbedding, pyr: &VisualFeaturePyramid) -> Result<Vec<LocalizationMap>> {
    pyr.scales
        .iter()
        .map(|m| LocalizationMap::from_tensor(cos_sim_map(audio, m)?))
        .collect()
}

/// Corner-aligned bilinear resampling.
pub fn upsample_bilinear(map: &LocalizationMap, height: usize, width: usize) -> Result<LocalizationMap> {
    if height == 0 || width == 0 {
        return Err(usage_err!("target size must be positive"));
    }
    let (h, w) = (map.height(), map.width());
    if (h, w) == (height, width) {
        return Ok(map.clone());
    }
    let coord = |i: usize, src: usize, dst: usize| -> (usize, usize, f64) {
        if src == 1 || dst == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
        let lo = (libm::floor(pos) as usize).min(src - 1);
        let hi = (lo + 1).min(src - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        let (y0, y1, fy) = coord(y, h, height);
        for x in 0..width {
            let (x0, x1, fx) = coord(x, w, width);
            let top = map.at(y0, x0) * (1.0 - fx) + map.at(y0, x1) * fx;
            let bot = map.at(y1, x0) * (1.0 - fx) + map.at(y1, x1) * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    LocalizationMap::new(height, width, out)
}

/// Upsamples each map to `height×width` and averages them.
pub fn aggregate_scales(maps: &[LocalizationMap], height: usize, width: usize) -> Result<LocalizationMap> {
    if maps.is_empty() {
        return Err(usage_err!("no maps to aggregate"));
    }
    let mut acc = vec![0.0; height * width];
    for m in maps {
        let up = upsample_bilinear(m, height, width)?;
        for (a, v) in acc.iter_mut().zip(up.scores()) {
            *a += v;
        }
    }
    let n = maps.len() as f64;
    LocalizationMap::new(height, width, acc.into_iter().map(|v| v / n).collect())
}

/// Per-category maps `cos(ĉ_i, f̂_p)` on the `grid` of patch tokens, upsampled to the target.
pub fn class_aware_maps(
    out: &MmtOutput,
    grid: (usize, usize),
    height: usize,
    width: usize,
) -> Result<Vec<LocalizationMap>> {
    let (p, d) = out.updated_patches.dims2()?;
    let (c, d2) = out.updated_categories.dims2()?;
    if d != d2 {
        return Err(dim_err!("patch width {d} vs category width {d2}"));
    }
    if grid.0 * grid.1 != p {
        return Err(dim_err!("{p} patch tokens do not fill a {}x{} grid", grid.0, grid.1));
    }
    let norm = |v: &[f64]| libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    (0..c)
        .map(|i| {
            let cat = out.updated_categories.row(i);
            let nc = norm(cat);
            let scores = (0..p)
                .map(|j| {
                    let f = out.updated_patches.row(j);
                    let den = nc * norm(f);
                    if den == 0.0 {
                        0.0
                    } else {
                        (f.iter().zip(cat).map(|(a, b)| a * b).sum::<f64>() / den).clamp(-1.0, 1.0)
                    }
                })
                .collect();
            upsample_bilinear(&LocalizationMap::new(grid.0, grid.1, scores)?, height, width)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_hand_case() {
        let m = LocalizationMap::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let up = upsample_bilinear(&m, 4, 4).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert!((up.at(y, x) - x as f64 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn aggregate_identity_and_constants() {
        let m = LocalizationMap::new(3, 3, (0..9).map(|i| i as f64).collect()).unwrap();
        assert_eq!(aggregate_scales(&[m.clone()], 3, 3).unwrap(), m);
        let c = LocalizationMap::new(2, 2, vec![0.4; 4]).unwrap();
        let a = aggregate_scales(&[c.clone(), c], 8, 8).unwrap();
        assert!(a.scores().iter().all(|&v| (v - 0.4).abs() < 1e-15));
        assert!(aggregate_scales(&[], 2, 2).is_err());
    }

    #[test]
    fn constant_map_thresholds_to_all_ones() {
        let c = LocalizationMap::new(2, 3, vec![-0.2; 6]).unwrap();
        assert_eq!(threshold_mask(&c, ThresholdMethod::default()).area(), 6);
    }

    #[test]
    fn raising_fixed_threshold_never_grows() {
        let m = LocalizationMap::new(2, 3, vec![0.1, 0.5, 0.3, 0.9, 0.2, 0.7]).unwrap();
        let mut prev = usize::MAX;
        for t in [0.0, 0.15, 0.3, 0.6, 0.95] {
            let a = threshold_mask(&m, ThresholdMethod::Fixed(t)).area();
            assert!(a <= prev);
            prev = a;
        }
    }

    #[test]
    fn identical_category_tokens_give_identical_maps() {
        let out = MmtOutput {
            updated_patches: Tensor::new(&[4, 2], vec![1.0, 0.0, 0.0, 1.0, 0.6, 0.8, -1.0, 0.0]).unwrap(),
            updated_categories: Tensor::new(&[2, 2], vec![0.3, 0.4, 0.3, 0.4]).unwrap(),
        };
        let maps = class_aware_maps(&out, (2, 2), 5, 5).unwrap();
        assert_eq!(maps[0], maps[1]);
        assert!(maps[0].scores().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn mask_padding_and_union() {
        let m = Mask::from_fn(2, 2, |y, x| y == x);
        let p = m.pad_into(4, 2).unwrap();
        assert_eq!(p.area(), 2);
        assert!(p.get(0, 2) && p.get(1, 3));
        let q = m.pad_into(4, 0).unwrap();
        assert_eq!(p.union(&q).unwrap().area(), 4);
        assert!(!p.overlaps(&q));
    }
}
