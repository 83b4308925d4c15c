//! Multi-scale multi-instance transformer.
//!
//! Patch tokens fuse the last pyramid stage with the audio embedding
//! (`f_p = v_p·W_v + A·W_a`), learned category tokens are appended after them, and each
//! layer replaces every token by `softmax(x_j Xᵀ / √D) X` computed from the layer input.
//! Query/key/value projections and residual connections are optional and off by default.
//! Category tokens that come out of the stack feed a per-category linear head.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::encoders::{AudioEmbedding, ScaleVar, VisualFeaturePyramid};
use crate::error::{dim_err, usage_err, Result};
use crate::params::{uniform_init, Bound, ParamStore, SeededRng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct MmtConfig {
    pub depth: usize,
    pub categories: usize,
    pub residual: bool,
    pub qkv: bool,
}

impl Default for MmtConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            categories: 4,
            residual: false,
            qkv: false,
        }
    }
}

impl MmtConfig {
    pub fn init_params(&self, dim: usize, rng: &mut SeededRng, store: &mut ParamStore) -> Result<()> {
        if self.categories == 0 {
            return Err(usage_err!("at least one category token is required"));
        }
        if self.depth == 0 {
            return Err(usage_err!("transformer depth must be at least 1"));
        }
        let c = self.categories;
        store.insert("mmt.w_v", uniform_init(&[dim, dim], dim, rng))?;
        store.insert("mmt.w_a", uniform_init(&[dim, dim], dim, rng))?;
        store.insert("mmt.category_tokens", uniform_init(&[c, dim], dim, rng))?;
        if self.qkv {
            for l in 0..self.depth {
                for k in ["q", "k", "v"] {
                    store.insert(&format!("mmt.layer{l}.w{k}"), uniform_init(&[dim, dim], dim, rng))?;
                }
            }
        }
        store.insert("mmt.head.weight", uniform_init(&[c, dim], dim, rng))?;
        store.insert("mmt.head.bias", uniform_init(&[c], dim, rng))?;
        Ok(())
    }
}

/// `(P + C)×D` token matrix, patches first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenVars {
    pub seq: Var,
    pub patches: usize,
    pub categories: usize,
}

pub fn build_tokens_graph(g: &mut Graph, p: &Bound, finest: ScaleVar, audio: Var) -> Result<TokenVars> {
    let wv = p.var("mmt.w_v")?;
    let wa = p.var("mmt.w_a")?;
    let table = p.var("mmt.category_tokens")?;
    let d = g.value(wv).shape()[0];
    let (patches, vd) = g.value(finest.var).dims2()?;
    if vd != d || g.value(audio).len() != d {
        return Err(dim_err!("token fusion expects width {d}"));
    }
    let vis = g.matmul(finest.var, wv)?;
    let aud = g.matmul(audio, wa)?;
    let fused = g.add_row(vis, aud)?;
    let seq = g.concat(&[fused, table], 0)?;
    Ok(TokenVars {
        seq,
        patches,
        categories: g.value(table).shape()[0],
    })
}

/// Single-token attention: `softmax(q Xᵀ / √D) X` for a `1×D` query.
pub fn attention_graph(g: &mut Graph, query: Var, seq: Var) -> Result<Var> {
    attend(g, query, seq, seq)
}

fn attend(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<Var> {
    let (_, d) = g.value(k).dims2()?;
    if g.value(q).dims2()?.1 != d {
        return Err(dim_err!("query width differs from sequence width {d}"));
    }
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scaled = g.scale(scores, 1.0 / libm::sqrt(d as f64))?;
    let w = g.softmax(scaled, 1)?;
    g.matmul(w, v)
}

/// One layer over the whole sequence; every output reads the pre-update sequence.
pub fn mmt_layer_graph(g: &mut Graph, p: &Bound, cfg: &MmtConfig, layer: usize, seq: Var) -> Result<Var> {
    let (q, k, v) = if cfg.qkv {
        let wq = p.var(&format!("mmt.layer{layer}.wq"))?;
        let wk = p.var(&format!("mmt.layer{layer}.wk"))?;
        let wv = p.var(&format!("mmt.layer{layer}.wv"))?;
        (g.matmul(seq, wq)?, g.matmul(seq, wk)?, g.matmul(seq, wv)?)
    } else {
        (seq, seq, seq)
    };
    let out = attend(g, q, k, v)?;
    if cfg.residual {
        g.add(seq, out)
    } else {
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MmtOutputVars {
    pub patches: Var,
    pub categories: Var,
}

pub fn mmt_stack_graph(g: &mut Graph, p: &Bound, cfg: &MmtConfig, tokens: TokenVars) -> Result<MmtOutputVars> {
    if cfg.depth == 0 {
        return Err(usage_err!("transformer depth must be at least 1"));
    }
    let mut x = tokens.seq;
    for l in 0..cfg.depth {
        x = mmt_layer_graph(g, p, cfg, l, x)?;
    }
    Ok(MmtOutputVars {
        patches: g.slice_rows(x, 0, tokens.patches)?,
        categories: g.slice_rows(x, tokens.patches, tokens.categories)?,
    })
}

/// One logit per category: `ĉ_i · w_i + b_i`.
pub fn category_logits_graph(g: &mut Graph, p: &Bound, categories: Var) -> Result<Var> {
    let w = p.var("mmt.head.weight")?;
    let b = p.var("mmt.head.bias")?;
    let prod = g.mul(categories, w)?;
    let s = g.sum_last(prod)?;
    g.add(s, b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    /// `P×D`.
    pub patch_tokens: Tensor,
    /// `C×D`.
    pub category_tokens: Tensor,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.patch_tokens.shape()[0] + self.category_tokens.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Tokens in sequence order as one `(P + C)×D` matrix.
    pub fn stacked(&self) -> Result<Tensor> {
        let mut g = Graph::new();
        let a = g.constant(self.patch_tokens.clone());
        let b = g.constant(self.category_tokens.clone());
        let s = g.concat(&[a, b], 0)?;
        Ok(g.value(s).clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmtOutput {
    pub updated_patches: Tensor,
    pub updated_categories: Tensor,
}

/// Tokens from the last pyramid stage.
pub fn build_tokens(
    pyr: &VisualFeaturePyramid,
    audio: &AudioEmbedding,
    params: &ParamStore,
) -> Result<TokenSequence> {
    build_tokens_at(pyr, pyr.scales.len(), audio, params)
}

/// Tokens from pyramid stage `stage` (1-based).
pub fn build_tokens_at(
    pyr: &VisualFeaturePyramid,
    stage: usize,
    audio: &AudioEmbedding,
    params: &ParamStore,
) -> Result<TokenSequence> {
    if stage == 0 || stage > pyr.scales.len() {
        return Err(usage_err!("stage {stage} outside 1..={}", pyr.scales.len()));
    }
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let map = &pyr.scales[stage - 1];
    let v = g.constant(map.features.clone());
    let a = g.constant(audio.0.reshape(&[1, audio.0.len()])?);
    let t = build_tokens_graph(
        &mut g,
        &p,
        ScaleVar {
            var: v,
            height: map.height,
            width: map.width,
        },
        a,
    )?;
    let seq = g.value(t.seq);
    let d = seq.shape()[1];
    Ok(TokenSequence {
        patch_tokens: Tensor::new(&[t.patches, d], seq.data()[..t.patches * d].to_vec())?,
        category_tokens: Tensor::new(&[t.categories, d], seq.data()[t.patches * d..].to_vec())?,
    })
}

/// Attention of one token against a sequence.
pub fn attention(token: &[f64], seq: &TokenSequence) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let q = g.constant(Tensor::new(&[1, token.len()], token.to_vec())?);
    let x = g.constant(seq.stacked()?);
    let out = attention_graph(&mut g, q, x)?;
    Ok(g.value(out).data().to_vec())
}

fn split_output(g: &Graph, out: MmtOutputVars) -> MmtOutput {
    MmtOutput {
        updated_patches: g.value(out.patches).clone(),
        updated_categories: g.value(out.categories).clone(),
    }
}

fn token_vars(g: &mut Graph, seq: &TokenSequence) -> Result<TokenVars> {
    let s = g.constant(seq.stacked()?);
    Ok(TokenVars {
        seq: s,
        patches: seq.patch_tokens.shape()[0],
        categories: seq.category_tokens.shape()[0],
    })
}

pub fn mmt_layer(seq: &TokenSequence, cfg: &MmtConfig, params: &ParamStore) -> Result<TokenSequence> {
    let one = MmtConfig { depth: 1, ..cfg.clone() };
    let out = mmt_stack(seq, &one, params)?;
    Ok(TokenSequence {
        patch_tokens: out.updated_patches,
        category_tokens: out.updated_categories,
    })
}

pub fn mmt_stack(seq: &TokenSequence, cfg: &MmtConfig, params: &ParamStore) -> Result<MmtOutput> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let t = token_vars(&mut g, seq)?;
    let out = mmt_stack_graph(&mut g, &p, cfg, t)?;
    Ok(split_output(&g, out))
}

pub fn category_logits(out: &MmtOutput, params: &ParamStore) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let c = g.constant(out.updated_categories.clone());
    let l = category_logits_graph(&mut g, &p, c)?;
    Ok(g.value(l).data().to_vec())
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::seeded_rng;
    use alloc::vec;

    fn seq(p: &[&[f64]], c: &[&[f64]]) -> TokenSequence {
        let d = p.first().or(c.first()).unwrap().len();
        TokenSequence {
            patch_tokens: Tensor::new(&[p.len(), d], p.concat()).unwrap(),
            category_tokens: Tensor::new(&[c.len(), d], c.concat()).unwrap(),
        }
    }

    fn params(d: usize, cfg: &MmtConfig) -> ParamStore {
        let mut s = ParamStore::new();
        cfg.init_params(d, &mut seeded_rng(3), &mut s).unwrap();
        s
    }

    #[test]
    fn single_token_attention_is_identity() {
        let s = TokenSequence {
            patch_tokens: Tensor::new(&[1, 3], vec![0.3, -1.0, 2.0]).unwrap(),
            category_tokens: Tensor::new(&[1, 3], vec![0.3, -1.0, 2.0]).unwrap(),
        };
        // both tokens identical, so any query returns the common token
        let out = attention(&[5.0, 1.0, -2.0], &s).unwrap();
        for (a, b) in out.iter().zip([0.3, -1.0, 2.0]) {
            assert!((a - b).abs() < 1e-14);
        }
        let mut g = Graph::new();
        let q = g.constant(Tensor::new(&[1, 2], vec![0.5, 0.1]).unwrap());
        let x = g.constant(Tensor::new(&[1, 2], vec![-0.7, 0.9]).unwrap());
        let o = attention_graph(&mut g, q, x).unwrap();
        assert_eq!(g.value(o).data(), &[-0.7, 0.9]);
    }

    #[test]
    fn two_token_hand_case() {
        let s = seq(&[&[1.0, 0.0]], &[&[0.0, 1.0]]);
        let out = attention(&[1.0, 0.0], &s).unwrap();
        let w0 = libm::exp(1.0 / libm::sqrt(2.0)) / (libm::exp(1.0 / libm::sqrt(2.0)) + 1.0);
        assert!((out[0] - w0).abs() < 1e-14);
        assert!((out[1] - (1.0 - w0)).abs() < 1e-14);
        assert!((w0 - 0.6698).abs() < 1e-4);
    }

    #[test]
    fn identical_tokens_are_a_fixed_point() {
        let t: &[f64] = &[0.2, -0.4, 0.8];
        let s = seq(&[t, t, t], &[t, t]);
        let cfg = MmtConfig {
            categories: 2,
            ..MmtConfig::default()
        };
        let p = params(3, &cfg);
        let one = mmt_layer(&s, &cfg, &p).unwrap();
        assert!(one.patch_tokens.max_abs_diff(&s.patch_tokens) < 1e-14);
        let out = mmt_stack(&s, &cfg, &p).unwrap();
        assert!(out.updated_patches.max_abs_diff(&s.patch_tokens) < 1e-14);
        assert!(out.updated_categories.max_abs_diff(&s.category_tokens) < 1e-14);
    }

    #[test]
    fn depth_one_matches_layer() {
        let s = seq(&[&[0.1, 0.5], &[0.9, -0.3]], &[&[0.4, 0.4]]);
        let cfg = MmtConfig {
            depth: 1,
            categories: 1,
            ..MmtConfig::default()
        };
        let p = params(2, &cfg);
        let a = mmt_layer(&s, &cfg, &p).unwrap();
        let b = mmt_stack(&s, &cfg, &p).unwrap();
        assert_eq!(a.patch_tokens, b.updated_patches);
        assert_eq!(a.category_tokens, b.updated_categories);
    }

    #[test]
    fn zero_head_gives_bias() {
        let cfg = MmtConfig {
            categories: 2,
            ..MmtConfig::default()
        };
        let mut p = ParamStore::new();
        for (n, t) in params(3, &cfg).iter() {
            let t = if n == "mmt.head.weight" { Tensor::zeros(t.shape()) } else { t.clone() };
            p.insert(n, t).unwrap();
        }
        let out = MmtOutput {
            updated_patches: Tensor::full(&[1, 3], 0.5),
            updated_categories: Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0]).unwrap(),
        };
        let l = category_logits(&out, &p).unwrap();
        assert_eq!(l, p.get("mmt.head.bias").unwrap().data());
        assert!(l.iter().all(|&z| sigmoid(z) > 0.0 && sigmoid(z) < 1.0));
    }

    #[test]
    fn zero_audio_reduces_to_visual_projection() {
        let cfg = MmtConfig {
            categories: 1,
            ..MmtConfig::default()
        };
        let p = params(2, &cfg);
        let pyr = VisualFeaturePyramid {
            scales: vec![crate::encoders::FeatureMap {
                height: 1,
                width: 1,
                features: Tensor::new(&[1, 2], vec![0.6, 0.8]).unwrap(),
            }],
        };
        let t = build_tokens(&pyr, &AudioEmbedding(Tensor::zeros(&[2])), &p).unwrap();
        let wv = p.get("mmt.w_v").unwrap().data();
        let expect = [0.6 * wv[0] + 0.8 * wv[2], 0.6 * wv[1] + 0.8 * wv[3]];
        for (a, b) in t.patch_tokens.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(t.len(), 2);
        assert_eq!(&t.category_tokens, p.get("mmt.category_tokens").unwrap());
    }
}
