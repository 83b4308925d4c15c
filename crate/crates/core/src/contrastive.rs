//! Multiple-instance contrastive objectives.
//!
//! `sim(A, V)` is the largest cosine similarity between the audio embedding and any
//! location of a visual map. The single-scale objective is InfoNCE over these max-pooled
//! similarities; the multi-scale objectives sum it over pyramid scales, once with other
//! samples' visual bags as negatives (audio→visual) and once with other samples' audio
//! as negatives (visual→audio). Every loss is averaged over the anchors of the batch.

use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::encoders::{AudioEmbedding, FeatureMap, ScaleVar, VisualFeaturePyramid};
use crate::error::{dim_err, usage_err, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveConfig {
    pub tau: f64,
    /// 1-based pyramid scales entering the multi-scale sums.
    pub scales_used: Vec<usize>,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            tau: 0.03,
            scales_used: alloc::vec![1, 2, 3],
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self, stages: usize) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(usage_err!("temperature must be positive, got {}", self.tau));
        }
        if self.scales_used.is_empty() {
            return Err(usage_err!("no scales selected"));
        }
        if let Some(s) = self.scales_used.iter().find(|&&s| s == 0 || s > stages) {
            return Err(usage_err!("scale {s} outside 1..={stages}"));
        }
        Ok(())
    }
}

/// Per-location cosine similarity of `audio` (1×D) against a map (`HW×D`), as `HW×1`.
pub fn cos_sim_map_graph(g: &mut Graph, audio: Var, map: Var) -> Result<Var> {
    let a = g.normalize_rows(audio)?;
    let v = g.normalize_rows(map)?;
    let at = g.transpose(a)?;
    g.matmul(v, at)
}

/// `B×B` matrix whose `[i][k]` entry is `sim(A_i, V_k)` at one scale.
pub fn sim_matrix(g: &mut Graph, audio: &[Var], visual: &[ScaleVar]) -> Result<Var> {
    if audio.len() != visual.len() {
        return Err(dim_err!("{} audio embeddings vs {} visual bags", audio.len(), visual.len()));
    }
    if audio.len() < 2 {
        return Err(usage_err!("contrastive losses need a batch of at least 2"));
    }
    let stacked = g.concat(audio, 0)?;
    let a = g.normalize_rows(stacked)?;
    let at = g.transpose(a)?;
    let mut cols = Vec::with_capacity(visual.len());
    for v in visual {
        let vn = g.normalize_rows(v.var)?;
        let sims = g.matmul(vn, at)?;
        cols.push(g.max_rows(sims)?);
    }
    let by_visual = g.concat(&cols, 0)?;
    g.transpose(by_visual)
}

fn check_scales(visual: &[Vec<ScaleVar>], cfg: &ContrastiveConfig) -> Result<()> {
    let stages = visual.first().map_or(0, Vec::len);
    if visual.iter().any(|p| p.len() != stages) {
        return Err(dim_err!("pyramids in the batch have different depths"));
    }
    cfg.validate(stages)
}

/// `-mean_i log softmax(S/tau)[i][i]` with the softmax along `axis`
/// (1: audio anchors over visual bags, 0: visual anchors over audio).
fn infonce_diag(g: &mut Graph, sims: Var, tau: f64, axis: usize) -> Result<Var> {
    let b = g.value(sims).shape()[0];
    let logits = g.scale(sims, 1.0 / tau)?;
    let ls = g.log_softmax(logits, axis)?;
    let diag: Vec<usize> = (0..b).map(|i| i * b + i).collect();
    let picked = g.gather(ls, &diag)?;
    let m = g.mean(picked)?;
    g.scale(m, -1.0)
}

fn sum_vars(g: &mut Graph, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = g.add(acc, v)?;
    }
    Ok(acc)
}

/// Single-scale baseline objective over one visual map per sample.
pub fn loss_mc_graph(g: &mut Graph, audio: &[Var], visual: &[ScaleVar], tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(usage_err!("temperature must be positive, got {tau}"));
    }
    let sims = sim_matrix(g, audio, visual)?;
    infonce_diag(g, sims, tau, 1)
}

fn scale_column(visual: &[Vec<ScaleVar>], s: usize) -> Vec<ScaleVar> {
    visual.iter().map(|p| p[s - 1]).collect()
}

pub fn loss_a2v_graph(g: &mut Graph, audio: &[Var], visual: &[Vec<ScaleVar>], cfg: &ContrastiveConfig) -> Result<Var> {
    check_scales(visual, cfg)?;
    let mut terms = Vec::new();
    for &s in &cfg.scales_used {
        let sims = sim_matrix(g, audio, &scale_column(visual, s))?;
        terms.push(infonce_diag(g, sims, cfg.tau, 1)?);
    }
    sum_vars(g, &terms)
}

pub fn loss_v2a_graph(g: &mut Graph, audio: &[Var], visual: &[Vec<ScaleVar>], cfg: &ContrastiveConfig) -> Result<Var> {
    check_scales(visual, cfg)?;
    let mut terms = Vec::new();
    for &s in &cfg.scales_used {
        let sims = sim_matrix(g, audio, &scale_column(visual, s))?;
        terms.push(infonce_diag(g, sims, cfg.tau, 0)?);
    }
    sum_vars(g, &terms)
}

/// Multi-scale objective `L_a2v + L_v2a`, sharing one similarity matrix per scale.
#[derive(Debug, Clone, Copy)]
pub struct MmcLoss {
    pub total: Var,
    pub a2v: Var,
    pub v2a: Var,
}

pub fn loss_mmc_graph(g: &mut Graph, audio: &[Var], visual: &[Vec<ScaleVar>], cfg: &ContrastiveConfig) -> Result<MmcLoss> {
    check_scales(visual, cfg)?;
    let mut fwd = Vec::new();
    let mut bwd = Vec::new();
    for &s in &cfg.scales_used {
        let sims = sim_matrix(g, audio, &scale_column(visual, s))?;
        fwd.push(infonce_diag(g, sims, cfg.tau, 1)?);
        bwd.push(infonce_diag(g, sims, cfg.tau, 0)?);
    }
    let a2v = sum_vars(g, &fwd)?;
    let v2a = sum_vars(g, &bwd)?;
    let total = g.add(a2v, v2a)?;
    Ok(MmcLoss { total, a2v, v2a })
}

/// Encoded batch: one audio embedding and one visual pyramid per sample.
#[derive(Debug, Clone)]
pub struct BatchPack {
    pub audio: Vec<AudioEmbedding>,
    pub visual: Vec<VisualFeaturePyramid>,
}

impl BatchPack {
    pub fn new(audio: Vec<AudioEmbedding>, visual: Vec<VisualFeaturePyramid>) -> Result<Self> {
        if audio.len() != visual.len() {
            return Err(dim_err!("{} audio vs {} visual entries", audio.len(), visual.len()));
        }
        if audio.len() < 2 {
            return Err(usage_err!("batch needs at least 2 samples"));
        }
        let d = audio[0].vector().len();
        if audio.iter().any(|a| a.vector().len() != d) || visual.iter().any(|v| v.dim() != d) {
            return Err(dim_err!("embedding widths differ within the batch"));
        }
        Ok(Self { audio, visual })
    }

    pub fn len(&self) -> usize {
        self.audio.len()
    }

    pub fn is_empty(&self) -> bool {
        self.audio.is_empty()
    }

    fn bind(&self, g: &mut Graph) -> Result<(Vec<Var>, Vec<Vec<ScaleVar>>)> {
        let audio = self
            .audio
            .iter()
            .map(|a| Ok(g.constant(a.0.reshape(&[1, a.0.len()])?)))
            .collect::<Result<Vec<_>>>()?;
        let visual = self
            .visual
            .iter()
            .map(|p| {
                p.scales
                    .iter()
                    .map(|m| ScaleVar {
                        var: g.constant(m.features.clone()),
                        height: m.height,
                        width: m.width,
                    })
                    .collect()
            })
            .collect();
        Ok((audio, visual))
    }
}

pub fn loss_mc(batch: &BatchPack, scale: usize, tau: f64) -> Result<f64> {
    let mut g = Graph::new();
    let (audio, visual) = batch.bind(&mut g)?;
    if scale == 0 || visual.iter().any(|p| p.len() < scale) {
        return Err(usage_err!("scale {scale} not present in the batch"));
    }
    let l = loss_mc_graph(&mut g, &audio, &scale_column(&visual, scale), tau)?;
    Ok(g.value(l).item())
}

pub fn loss_a2v(batch: &BatchPack, cfg: &ContrastiveConfig) -> Result<f64> {
    let mut g = Graph::new();
    let (audio, visual) = batch.bind(&mut g)?;
    let l = loss_a2v_graph(&mut g, &audio, &visual, cfg)?;
    Ok(g.value(l).item())
}

pub fn loss_v2a(batch: &BatchPack, cfg: &ContrastiveConfig) -> Result<f64> {
    let mut g = Graph::new();
    let (audio, visual) = batch.bind(&mut g)?;
    let l = loss_v2a_graph(&mut g, &audio, &visual, cfg)?;
    Ok(g.value(l).item())
}

pub fn loss_mmc(batch: &BatchPack, cfg: &ContrastiveConfig) -> Result<f64> {
    let mut g = Graph::new();
    let (audio, visual) = batch.bind(&mut g)?;
    let l = loss_mmc_graph(&mut g, &audio, &visual, cfg)?;
    Ok(g.value(l.total).item())
}

/// Cosine similarity of `audio` with every location of `map`, shaped `height×width`.
pub fn cos_sim_map(audio: &AudioEmbedding, map: &FeatureMap) -> Result<Tensor> {
    let d = map.features.shape()[1];
    if audio.vector().len() != d {
        return Err(dim_err!("audio width {} vs map width {d}", audio.vector().len()));
    }
    let mut g = Graph::new();
    let a = g.constant(audio.0.reshape(&[1, d])?);
    let v = g.constant(map.features.clone());
    let m = cos_sim_map_graph(&mut g, a, v)?;
    g.value(m).reshape(&[map.height, map.width])
}

/// `sim(A, V)`: the maximal location similarity and its flat index (ties to the lowest).
pub fn sim_max(audio: &AudioEmbedding, map: &FeatureMap) -> Result<(f64, usize)> {
    let m = cos_sim_map(audio, map)?;
    let mut g = Graph::new();
    let x = g.constant(m);
    let (v, idx) = g.max_over_locations(x)?;
    Ok((g.value(v).item(), idx))
}
