//! Inference, heatmaps and metric reports for trained models.
//!
//! The class-agnostic heatmap is the audio-visual cosine map: averaged over the selected
//! pyramid scales for multi-scale models, the last stage alone for the single-scale
//! baseline. Per-category maps come from querying the image with a clean tone of each
//! category, or from the transformer's category tokens when `mmt_class_maps` is set.

use alloc::vec::Vec;

use crate::encoders::{encode_image, encode_pooled_audio, AudioEmbedding, VisualFeaturePyramid};
use crate::error::Result;
use crate::image::Image;
use crate::locseg::{aggregate_scales, class_aware_maps, per_scale_maps, threshold_mask, LocalizationMap, Mask};
use crate::metrics::{
    ap_pixelwise, auc, cap, ciou, class_ious, f_score, iou, miou, piap, success_rate, EvalRecord, MetricsReport,
};
use crate::mmt::{build_tokens_at, category_logits, mmt_stack, MmtOutput};
use crate::synth::gen_audio;
use crate::train::{pooled_spectrum, Dataset, Example, Model};

/// Seed of the clean reference tones used as category queries.
pub const PROTOTYPE_SEED: u64 = 0x7072_6F74;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub map: LocalizationMap,
    pub mask: Mask,
    /// One map per category id `0..C`.
    pub category_maps: Vec<LocalizationMap>,
    /// Maps of the transformer's category tokens when the transformer is present.
    pub token_maps: Option<Vec<LocalizationMap>>,
    /// Category logits when the transformer is present.
    pub logits: Option<Vec<f64>>,
}

/// A model together with cached per-category reference embeddings.
#[derive(Debug, Clone)]
pub struct Predictor<'a> {
    model: &'a Model,
    prototypes: Vec<AudioEmbedding>,
}

impl<'a> Predictor<'a> {
    pub fn new(model: &'a Model) -> Result<Self> {
        let cfg = &model.config;
        let enc = cfg.encoder();
        let mut prototypes = Vec::new();
        for c in 0..cfg.categories {
            let audio = gen_audio(&[c], PROTOTYPE_SEED, cfg.audio_seconds, cfg.sample_rate)?;
            let pooled = pooled_spectrum(&audio.waveform, cfg)?;
            prototypes.push(encode_pooled_audio(&pooled, &model.params, &enc)?);
        }
        Ok(Self { model, prototypes })
    }

    fn heatmap(&self, audio: &AudioEmbedding, pyr: &VisualFeaturePyramid, h: usize, w: usize) -> Result<LocalizationMap> {
        let cfg = &self.model.config;
        let maps = per_scale_maps(audio, pyr)?;
        let selected: Vec<LocalizationMap> = if cfg.mmc_enabled {
            cfg.heatmap_scales().iter().map(|&s| maps[s - 1].clone()).collect()
        } else {
            alloc::vec![maps[maps.len() - 1].clone()]
        };
        aggregate_scales(&selected, h, w)
    }

    pub fn transformer_output(&self, pyr: &VisualFeaturePyramid, audio: &AudioEmbedding) -> Result<MmtOutput> {
        let cfg = &self.model.config;
        let tokens = build_tokens_at(pyr, cfg.token_stage(), audio, &self.model.params)?;
        mmt_stack(&tokens, &cfg.mmt(), &self.model.params)
    }

    pub fn predict(&self, image: &Image, pooled: &[f64]) -> Result<Prediction> {
        let cfg = &self.model.config;
        let enc = cfg.encoder();
        let (h, w) = (image.height(), image.width());
        let pyr = encode_image(image, &self.model.params, &enc)?;
        let audio = encode_pooled_audio(pooled, &self.model.params, &enc)?;
        let map = self.heatmap(&audio, &pyr, h, w)?;
        let mask = threshold_mask(&map, cfg.threshold());
        let (token_maps, logits) = if cfg.mmt_enabled {
            let out = self.transformer_output(&pyr, &audio)?;
            let grid = &pyr.scales[cfg.token_stage() - 1];
            let maps = class_aware_maps(&out, (grid.height, grid.width), h, w)?;
            (Some(maps), Some(category_logits(&out, &self.model.params)?))
        } else {
            (None, None)
        };
        let category_maps = match &token_maps {
            Some(maps) if cfg.mmt_class_maps => maps.clone(),
            _ => self
                .prototypes
                .iter()
                .map(|a| self.heatmap(a, &pyr, h, w))
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(Prediction {
            map,
            mask,
            category_maps,
            token_maps,
            logits,
        })
    }

    pub fn record(&self, ex: &Example) -> Result<EvalRecord> {
        let pred = self.predict(&ex.sample.scene.image, &ex.pooled)?;
        let sources = ex.sample.scene.sources.clone();
        let category_maps = sources
            .iter()
            .map(|s| (s.category, pred.category_maps[s.category].clone()))
            .collect();
        Ok(EvalRecord {
            map: Some(pred.map),
            mask: Some(pred.mask),
            category_maps,
            sources,
        })
    }
}

/// Per-sample predictions for a dataset, in order.
pub fn records(model: &Model, data: &Dataset) -> Result<Vec<EvalRecord>> {
    let p = Predictor::new(model)?;
    data.examples.iter().map(|ex| p.record(ex)).collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Metrics of `records` evaluated as single-source or duet samples.
///
/// Single-source splits report AP, IoU success, AUC, mIoU and F-score of the
/// class-agnostic map. Duet splits report CAP, PIAP, CIoU success and AUC over the
/// per-category maps, plus mIoU and F-score of the class-agnostic mask against the
/// union of both sources.
pub fn report(model: &Model, recs: &[EvalRecord], duet: bool) -> Result<MetricsReport> {
    let cfg = &model.config;
    let union: Vec<Mask> = recs
        .iter()
        .map(|r| {
            r.sources[1..]
                .iter()
                .try_fold(r.sources[0].mask.clone(), |acc, s| acc.union(&s.mask))
        })
        .collect::<Result<_>>()?;
    let preds: Vec<Mask> = recs.iter().map(|r| r.mask.clone().expect("records carry masks")).collect();
    let ious = preds.iter().zip(&union).map(|(p, g)| iou(p, g)).collect::<Result<Vec<_>>>()?;
    let fs = preds
        .iter()
        .zip(&union)
        .map(|(p, g)| f_score(p, g, cfg.f_beta2))
        .collect::<Result<Vec<_>>>()?;
    let mut out = MetricsReport {
        miou: Some(miou(&preds, &union)?),
        f_score: Some(mean(&fs)),
        ..MetricsReport::default()
    };
    if duet {
        let cls = class_ious(recs, cfg.threshold())?;
        out.cap = Some(cap(recs)?);
        out.piap = Some(piap(recs)?);
        out.ciou = Some(ciou(recs, cfg.ciou_tau, cfg.threshold())?);
        out.auc = Some(auc(&cls)?);
    } else {
        let aps = recs
            .iter()
            .zip(&union)
            .map(|(r, g)| ap_pixelwise(r.map.as_ref().expect("records carry maps"), g))
            .collect::<Result<Vec<_>>>()?;
        out.ap = Some(mean(&aps));
        out.iou = Some(success_rate(&ious, cfg.iou_tau)?);
        out.auc = Some(auc(&ious)?);
    }
    out.validate()?;
    Ok(out)
}

pub fn evaluate(model: &Model, data: &Dataset) -> Result<MetricsReport> {
    report(model, &records(model, data)?, data.duet)
}

/// Share of samples whose highest category logit is a planted category.
pub fn category_accuracy(model: &Model, data: &Dataset) -> Result<Option<f64>> {
    if !model.config.mmt_enabled {
        return Ok(None);
    }
    let p = Predictor::new(model)?;
    let mut hits = 0usize;
    for ex in &data.examples {
        let logits = p.predict(&ex.sample.scene.image, &ex.pooled)?.logits.expect("transformer logits");
        let best = crate::autodiff::argmax_first(logits.iter().copied()).map(|(i, _)| i);
        if best.is_some_and(|i| ex.labels[i] > 0.5) {
            hits += 1;
        }
    }
    Ok(Some(hits as f64 / data.len() as f64))
}
