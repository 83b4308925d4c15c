//! Localization and segmentation metrics.
//!
//! Conventions for degenerate inputs: IoU of two empty masks is 1, precision of an empty
//! prediction is 0, and AP needs at least one positive pixel.

use alloc::vec::Vec;

use crate::error::{dim_err, usage_err, Error, Result};
use crate::locseg::{threshold_mask, LocalizationMap, Mask, ThresholdMethod};

/// Largest number of sources per sample for exhaustive permutation search.
pub const PIAP_MAX_SOURCES: usize = 6;

pub const DEFAULT_F_BETA2: f64 = 0.3;

/// `{0.05, 0.10, …, 0.95}`.
pub fn default_auc_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}

fn check_shapes(a: &Mask, b: &Mask) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(dim_err!(
            "mask shapes {}x{} and {}x{} differ",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        ))
    }
}

pub fn iou(pred: &Mask, gt: &Mask) -> Result<f64> {
    check_shapes(pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Fraction of values `>= tau`.
pub fn success_rate(ious: &[f64], tau: f64) -> Result<f64> {
    if ious.is_empty() {
        return Err(usage_err!("success rate of an empty list"));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(usage_err!("threshold {tau} outside [0,1]"));
    }
    Ok(ious.iter().filter(|&&v| v >= tau).count() as f64 / ious.len() as f64)
}

pub fn auc_on_grid(ious: &[f64], grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(usage_err!("empty threshold grid"));
    }
    let mut acc = 0.0;
    for &t in grid {
        acc += success_rate(ious, t)?;
    }
    Ok(acc / grid.len() as f64)
}

pub fn auc(ious: &[f64]) -> Result<f64> {
    auc_on_grid(ious, &default_auc_grid())
}

/// Pixel-ranking average precision: `Σ (R_k − R_{k−1})·P_k` over descending distinct scores.
pub fn ap_pixelwise(map: &LocalizationMap, gt: &Mask) -> Result<f64> {
    if map.height() != gt.height() || map.width() != gt.width() {
        return Err(dim_err!("map and mask shapes differ"));
    }
    let positives = gt.area();
    if positives == 0 {
        return Err(usage_err!("average precision needs a non-empty ground truth"));
    }
    let mut order: Vec<(f64, bool)> = map.scores().iter().copied().zip(gt.bits().iter().copied()).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let score = order[i].0;
        while i < order.len() && order[i].0 == score {
            tp += order[i].1 as usize;
            seen += 1;
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// `(1+β²)·P·R / (β²·P + R)`, zero when the denominator vanishes.
pub fn f_score(pred: &Mask, gt: &Mask, beta2: f64) -> Result<f64> {
    check_shapes(pred, gt)?;
    let tp = pred.bits().iter().zip(gt.bits()).filter(|(p, g)| **p && **g).count() as f64;
    let np = pred.area() as f64;
    let ng = gt.area() as f64;
    let p = if np > 0.0 { tp / np } else { 0.0 };
    let r = if ng > 0.0 { tp / ng } else { 0.0 };
    let den = beta2 * p + r;
    Ok(if den > 0.0 { (1.0 + beta2) * p * r / den } else { 0.0 })
}

pub fn miou(preds: &[Mask], gts: &[Mask]) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(dim_err!("{} predictions vs {} ground truths", preds.len(), gts.len()));
    }
    if preds.is_empty() {
        return Err(usage_err!("mIoU of an empty set"));
    }
    let mut acc = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        acc += iou(p, g)?;
    }
    Ok(acc / preds.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceTruth {
    pub category: usize,
    pub mask: Mask,
}

/// Predictions and ground truth for one evaluated sample.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalRecord {
    /// Class-agnostic heatmap.
    pub map: Option<LocalizationMap>,
    /// Class-agnostic binary prediction.
    pub mask: Option<Mask>,
    /// Per-category heatmaps, tagged with their category id.
    pub category_maps: Vec<(usize, LocalizationMap)>,
    pub sources: Vec<SourceTruth>,
}

impl EvalRecord {
    fn category_map(&self, c: usize) -> Result<&LocalizationMap> {
        self.category_maps
            .iter()
            .find(|(id, _)| *id == c)
            .map(|(_, m)| m)
            .ok_or_else(|| usage_err!("no predicted map for present category {c}"))
    }
}

fn per_present_category<T>(
    records: &[EvalRecord],
    mut f: impl FnMut(&LocalizationMap, &Mask) -> Result<T>,
) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for r in records {
        for s in &r.sources {
            out.push(f(r.category_map(s.category)?, &s.mask)?);
        }
    }
    if out.is_empty() {
        return Err(usage_err!("no (sample, category) pairs to evaluate"));
    }
    Ok(out)
}

/// Class-aware AP: mean over every (sample, present category) pair.
pub fn cap(records: &[EvalRecord]) -> Result<f64> {
    let aps = per_present_category(records, ap_pixelwise)?;
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// IoUs of every present category's thresholded map against its ground truth.
pub fn class_ious(records: &[EvalRecord], method: ThresholdMethod) -> Result<Vec<f64>> {
    per_present_category(records, |m, g| iou(&threshold_mask(m, method), g))
}

/// Class-aware IoU success rate at `tau`.
pub fn ciou(records: &[EvalRecord], tau: f64, method: ThresholdMethod) -> Result<f64> {
    success_rate(&class_ious(records, method)?, tau)
}

/// All orderings of `0..k`, lexicographic.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(k), &mut alloc::vec![false; k], &mut out);
    out
}

/// Permutation-invariant AP: per sample the best mean AP over assignments of the K
/// predicted maps (in `category_maps` order) to the K ground-truth sources.
pub fn piap(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(usage_err!("PIAP of an empty set"));
    }
    let mut acc = 0.0;
    for r in records {
        let k = r.sources.len();
        if k != r.category_maps.len() {
            return Err(dim_err!("{} predicted maps for {k} sources", r.category_maps.len()));
        }
        if k == 0 {
            return Err(usage_err!("sample without sources"));
        }
        if k > PIAP_MAX_SOURCES {
            return Err(usage_err!("{k} sources exceed the exhaustive bound {PIAP_MAX_SOURCES}"));
        }
        // ap[i][j]: predicted map i against source j
        let mut table = Vec::with_capacity(k * k);
        for (_, m) in &r.category_maps {
            for s in &r.sources {
                table.push(ap_pixelwise(m, &s.mask)?);
            }
        }
        let best = permutations(k)
            .iter()
            .map(|perm| perm.iter().enumerate().map(|(i, &j)| table[i * k + j]).sum::<f64>() / k as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        acc += best;
    }
    Ok(acc / records.len() as f64)
}

/// Every metric as a fraction; `None` where the evaluated split does not define it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsReport {
    pub ap: Option<f64>,
    pub cap: Option<f64>,
    pub piap: Option<f64>,
    pub iou: Option<f64>,
    pub ciou: Option<f64>,
    pub auc: Option<f64>,
    pub miou: Option<f64>,
    pub f_score: Option<f64>,
}

impl MetricsReport {
    pub const KEYS: [&'static str; 8] = ["ap", "cap", "piap", "iou", "ciou", "auc", "miou", "f_score"];

    pub fn values(&self) -> [Option<f64>; 8] {
        [
            self.ap,
            self.cap,
            self.piap,
            self.iou,
            self.ciou,
            self.auc,
            self.miou,
            self.f_score,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (k, v) in Self::KEYS.iter().zip(self.values()) {
            if let Some(v) = v {
                if !(0.0..=1.0 + 1e-12).contains(&v) {
                    return Err(Error::NonFinite(alloc::format!("metric {k} = {v} outside [0,1]")));
                }
            }
        }
        Ok(())
    }
}
