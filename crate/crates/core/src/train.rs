//! Run configuration, synthetic datasets, the model container and the training loop.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::audio::{stft_log_spectrogram, StftConfig, Waveform, SAMPLE_RATE};
use crate::autodiff::{Graph, Var};
use crate::contrastive::{loss_mc_graph, loss_mmc_graph, ContrastiveConfig};
use crate::encoders::{audio_forward, visual_forward, EncoderConfig};
use crate::error::{usage_err, Error, Result};
use crate::locseg::ThresholdMethod;
use crate::mmt::{build_tokens_graph, category_logits_graph, mmt_stack_graph, MmtConfig};
use crate::params::{seeded_rng, Bound, ParamStore};
use crate::synth::{gen_sample, mix_seed, AvSample, SceneConfig, Split, SynthConfig};
use crate::tensor::Tensor;

/// Every knob of a run. Defaults are the desk-scale configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dim: usize,
    pub stages: usize,
    pub patch: usize,
    pub image_size: usize,
    pub categories: usize,
    pub tau: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub mmc_enabled: bool,
    pub mmt_enabled: bool,
    pub mmt_depth: usize,
    pub mmt_residual: bool,
    pub mmt_qkv: bool,
    /// 1-based pyramid stage feeding the transformer; 0 means the last one.
    pub mmt_stage: usize,
    /// 1-based scales in the multi-scale losses and map aggregation; empty means all.
    pub scales_used: Vec<usize>,
    /// Scales averaged into the evaluation heatmap; empty means `scales_used`. The
    /// default keeps only the finest map, whose cells are small enough to trace the
    /// object outline; coarser maps blur masks at 32×32.
    pub map_scales: Vec<usize>,
    /// Per-category maps from the transformer's category tokens instead of clean-tone
    /// queries.
    pub mmt_class_maps: bool,
    /// Weight of the category loss when the transformer is on.
    pub lambda_cls: f64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub audio_seconds: f64,
    pub sample_rate: u32,
    pub min_area: f64,
    pub max_area: f64,
    pub normalize_spectrogram: bool,
    pub normalize_audio: bool,
    pub normalize_visual: bool,
    pub mask_threshold: f64,
    pub iou_tau: f64,
    pub ciou_tau: f64,
    pub f_beta2: f64,
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let scene = SceneConfig::default();
        Self {
            dim: 64,
            stages: 3,
            patch: 4,
            image_size: 32,
            categories: 4,
            tau: 0.03,
            batch_size: 16,
            epochs: 30,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            mmc_enabled: true,
            mmt_enabled: true,
            mmt_depth: 3,
            mmt_residual: false,
            mmt_qkv: false,
            mmt_stage: 0,
            scales_used: Vec::new(),
            map_scales: alloc::vec![1],
            mmt_class_maps: false,
            lambda_cls: 0.1,
            train_size: 512,
            val_size: 128,
            test_size: 128,
            audio_seconds: 3.0,
            sample_rate: SAMPLE_RATE,
            min_area: scene.min_area,
            max_area: scene.max_area,
            normalize_spectrogram: false,
            normalize_audio: true,
            normalize_visual: true,
            mask_threshold: 0.5,
            iou_tau: 0.3,
            ciou_tau: 0.1,
            f_beta2: 0.3,
            output_dir: String::from("runs/desk"),
        }
    }
}

impl RunConfig {
    /// Full-scale shape constants: `D = 512`, four stages, 160-pixel inputs (5×5 last map),
    /// batch 128 for 100 epochs at learning rate 1e-4.
    pub fn full_scale() -> Self {
        Self {
            dim: 512,
            stages: 4,
            patch: 4,
            image_size: 160,
            batch_size: 128,
            epochs: 100,
            learning_rate: 1e-4,
            ..Self::default()
        }
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            dim: self.dim,
            stages: self.stages,
            patch: self.patch,
            channels: 3,
            audio_bins: self.stft().bins(),
            normalize_visual: self.normalize_visual,
            normalize_audio: self.normalize_audio,
        }
    }

    pub fn mmt(&self) -> MmtConfig {
        MmtConfig {
            depth: self.mmt_depth,
            categories: self.categories,
            residual: self.mmt_residual,
            qkv: self.mmt_qkv,
        }
    }

    pub fn scales(&self) -> Vec<usize> {
        if self.scales_used.is_empty() {
            (1..=self.stages).collect()
        } else {
            self.scales_used.clone()
        }
    }

    pub fn heatmap_scales(&self) -> Vec<usize> {
        if self.map_scales.is_empty() {
            self.scales()
        } else {
            self.map_scales.clone()
        }
    }

    /// Resolved 1-based transformer stage.
    pub fn token_stage(&self) -> usize {
        if self.mmt_stage == 0 {
            self.stages
        } else {
            self.mmt_stage
        }
    }

    pub fn contrastive(&self) -> ContrastiveConfig {
        ContrastiveConfig {
            tau: self.tau,
            scales_used: self.scales(),
        }
    }

    pub fn stft(&self) -> StftConfig {
        StftConfig {
            normalize: self.normalize_spectrogram,
            ..StftConfig::default()
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            scene: SceneConfig {
                height: self.image_size,
                width: self.image_size,
                categories: self.categories,
                min_area: self.min_area,
                max_area: self.max_area,
            },
            audio_seconds: self.audio_seconds,
            sample_rate: self.sample_rate,
        }
    }

    pub fn threshold(&self) -> ThresholdMethod {
        ThresholdMethod::MinMax(self.mask_threshold)
    }

    /// Transformer patch-token count for a square input.
    pub fn patches(&self) -> Result<usize> {
        let grids = self.encoder().grid_sizes(self.image_size, self.image_size)?;
        let (h, w) = grids[self.token_stage().min(grids.len()) - 1];
        Ok(h * w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(usage_err!("batch_size must be at least 2"));
        }
        if self.dim == 0 || self.stages == 0 || self.patch == 0 {
            return Err(usage_err!("dim, stages and patch must be positive"));
        }
        if self.epochs == 0 {
            return Err(usage_err!("epochs must be positive"));
        }
        if self.mmt_enabled && self.mmt_depth == 0 {
            return Err(usage_err!("mmt_depth must be at least 1 when the transformer is enabled"));
        }
        if !(self.learning_rate > 0.0) || !(self.adam_eps > 0.0) {
            return Err(usage_err!("learning_rate and adam_eps must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(usage_err!("Adam betas must lie in [0, 1)"));
        }
        if !(self.lambda_cls >= 0.0) {
            return Err(usage_err!("lambda_cls must be non-negative"));
        }
        if self.train_size < self.batch_size {
            return Err(usage_err!("train_size {} is smaller than one batch", self.train_size));
        }
        if self.val_size == 0 || self.test_size == 0 {
            return Err(usage_err!("val_size and test_size must be positive"));
        }
        for (name, v) in [
            ("mask_threshold", self.mask_threshold),
            ("iou_tau", self.iou_tau),
            ("ciou_tau", self.ciou_tau),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(usage_err!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.f_beta2 > 0.0) {
            return Err(usage_err!("f_beta2 must be positive"));
        }
        self.contrastive().validate(self.stages)?;
        if let Some(s) = self.map_scales.iter().find(|&&s| s == 0 || s > self.stages) {
            return Err(usage_err!("map scale {s} outside 1..={}", self.stages));
        }
        if self.mmt_stage > self.stages {
            return Err(usage_err!("mmt_stage {} outside 0..={}", self.mmt_stage, self.stages));
        }
        self.synth().scene.validate()?;
        self.patches()?;
        Ok(())
    }
}

/// One generated sample with its cached time-averaged spectrum and label vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub index: usize,
    pub sample: AvSample,
    pub pooled: Vec<f64>,
    /// Multi-hot category presence.
    pub labels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub duet: bool,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

pub fn split_size(cfg: &RunConfig, split: Split) -> usize {
    match split {
        Split::Train => cfg.train_size,
        Split::Val => cfg.val_size,
        Split::Test => cfg.test_size,
    }
}

/// Pooled spectrum of a waveform under the run's front-end settings.
pub fn pooled_spectrum(wave: &Waveform, cfg: &RunConfig) -> Result<Vec<f64>> {
    Ok(stft_log_spectrogram(wave, &cfg.stft())?.mean_over_frames())
}

pub fn make_example(cfg: &RunConfig, index: usize, sample: AvSample) -> Result<Example> {
    let pooled = pooled_spectrum(&sample.audio.waveform, cfg)?;
    let mut labels = vec![0.0; cfg.categories];
    for c in sample.categories() {
        labels[c] = 1.0;
    }
    Ok(Example {
        index,
        sample,
        pooled,
        labels,
    })
}

/// Generates `split` with the size configured for it.
pub fn build_dataset(cfg: &RunConfig, split: Split, duet: bool) -> Result<Dataset> {
    build_dataset_sized(cfg, split, duet, split_size(cfg, split))
}

pub fn build_dataset_sized(cfg: &RunConfig, split: Split, duet: bool, n: usize) -> Result<Dataset> {
    let synth = cfg.synth();
    let examples = (0..n)
        .map(|i| make_example(cfg, i, gen_sample(cfg.seed, split.sample_seed(i)?, duet, &synth)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { split, duet, examples })
}

/// Configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: RunConfig,
    pub params: ParamStore,
}

impl Model {
    /// Seeded initialization: encoder parameters first, transformer parameters after.
    pub fn init(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded_rng(mix_seed(cfg.seed ^ 0x1A17));
        let mut params = ParamStore::new();
        cfg.encoder().init_params(&mut rng, &mut params)?;
        if cfg.mmt_enabled {
            cfg.mmt().init_params(cfg.dim, &mut rng, &mut params)?;
        }
        Ok(Self {
            config: cfg.clone(),
            params,
        })
    }

    /// Wraps loaded parameters after checking names and shapes against `cfg`.
    pub fn from_params(cfg: &RunConfig, params: ParamStore) -> Result<Self> {
        let layout = Self::init(cfg)?.params;
        if layout.names() != params.names() {
            return Err(usage_err!(
                "checkpoint parameters {:?} do not match the configuration {:?}",
                params.names(),
                layout.names()
            ));
        }
        for ((name, a), b) in layout.iter().zip(params.tensors()) {
            if a.shape() != b.shape() {
                return Err(usage_err!("parameter {name}: shape {:?}, expected {:?}", b.shape(), a.shape()));
            }
        }
        Ok(Self {
            config: cfg.clone(),
            params,
        })
    }
}

/// Parameters plus Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ParamStore,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    /// Loss of every optimizer step, in order.
    pub loss_history: Vec<f64>,
}

impl TrainState {
    pub fn new(params: ParamStore) -> Self {
        let zeros = |t: &Tensor| Tensor::from_parts(t.shape().to_vec(), vec![0.0; t.len()]);
        let m = params.tensors().iter().map(zeros).collect();
        let v = params.tensors().iter().map(zeros).collect();
        Self {
            params,
            m,
            v,
            step: 0,
            loss_history: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }
}

/// Bias-corrected Adam update of every parameter.
pub fn adam_step(state: &mut TrainState, grads: &[Tensor], adam: &AdamConfig) -> Result<()> {
    if grads.len() != state.params.len() {
        return Err(usage_err!("{} gradients for {} parameters", grads.len(), state.params.len()));
    }
    for ((name, p), gr) in state.params.iter().zip(grads) {
        if p.shape() != gr.shape() {
            return Err(usage_err!("gradient for {name} has shape {:?}", gr.shape()));
        }
        if gr.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(alloc::format!("gradient of {name} at step {}", state.step + 1)));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - libm::pow(adam.beta1, t as f64);
    let c2 = 1.0 - libm::pow(adam.beta2, t as f64);
    let (m_all, v_all) = (&mut state.m, &mut state.v);
    for (((p, gr), m), v) in state.params.tensors_mut().iter_mut().zip(grads).zip(m_all).zip(v_all) {
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (i, &gi) in gr.data().iter().enumerate() {
            md[i] = adam.beta1 * md[i] + (1.0 - adam.beta1) * gi;
            vd[i] = adam.beta2 * vd[i] + (1.0 - adam.beta2) * gi * gi;
            let mh = md[i] / c1;
            let vh = vd[i] / c2;
            pd[i] -= adam.lr * mh / (libm::sqrt(vh) + adam.eps);
        }
    }
    Ok(())
}

/// Graph handles for the loss of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchLossVars {
    pub total: Var,
    pub contrastive: Var,
    pub classification: Option<Var>,
}

/// Builds the training objective for `batch` on `g`: the multi-scale contrastive loss
/// (or the single-scale one on the last stage when it is disabled), plus `λ` times the
/// mean category cross-entropy when the transformer is on.
pub fn batch_loss_graph(g: &mut Graph, p: &Bound, cfg: &RunConfig, batch: &[&Example]) -> Result<BatchLossVars> {
    let enc = cfg.encoder();
    let mut audio = Vec::with_capacity(batch.len());
    let mut visual = Vec::with_capacity(batch.len());
    for ex in batch {
        visual.push(visual_forward(g, p, &enc, &ex.sample.scene.image)?);
        audio.push(audio_forward(g, p, &enc, &ex.pooled)?);
    }
    let contrastive = if cfg.mmc_enabled {
        loss_mmc_graph(g, &audio, &visual, &cfg.contrastive())?.total
    } else {
        let last: Vec<_> = visual.iter().map(|v| v[v.len() - 1]).collect();
        loss_mc_graph(g, &audio, &last, cfg.tau)?
    };
    if !cfg.mmt_enabled {
        return Ok(BatchLossVars {
            total: contrastive,
            contrastive,
            classification: None,
        });
    }
    let mcfg = cfg.mmt();
    let stage = cfg.token_stage();
    let mut terms = Vec::with_capacity(batch.len());
    for ((ex, vis), &a) in batch.iter().zip(&visual).zip(&audio) {
        let tokens = build_tokens_graph(g, p, vis[stage - 1], a)?;
        let out = mmt_stack_graph(g, p, &mcfg, tokens)?;
        let logits = category_logits_graph(g, p, out.categories)?;
        terms.push(g.bce_with_logits(logits, &ex.labels)?);
    }
    let stacked = g.concat(&terms, 0)?;
    let cls = g.mean(stacked)?;
    let weighted = g.scale(cls, cfg.lambda_cls)?;
    let total = g.add(contrastive, weighted)?;
    Ok(BatchLossVars {
        total,
        contrastive,
        classification: Some(cls),
    })
}

/// Loss value of one batch under fixed parameters.
pub fn batch_loss(params: &ParamStore, cfg: &RunConfig, batch: &[&Example]) -> Result<f64> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let l = batch_loss_graph(&mut g, &p, cfg, batch)?;
    Ok(g.value(l.total).item())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStat {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    /// Mean step loss of every epoch.
    pub epoch_losses: Vec<f64>,
    pub state: TrainState,
}

impl TrainOutcome {
    pub fn first_batch_loss(&self) -> f64 {
        self.state.loss_history[0]
    }
}

/// Seeded visiting order of the training set for one epoch.
pub fn epoch_order(cfg: &RunConfig, epoch: usize, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded_rng(mix_seed(cfg.seed ^ mix_seed(0xE90C ^ epoch as u64))));
    idx
}

/// Trains from the seeded initialization; parameters are rounded to `f32` at the end
/// so that a checkpoint reproduces the returned model exactly.
pub fn train(cfg: &RunConfig, data: &Dataset, observer: &mut dyn FnMut(&EpochStat)) -> Result<TrainOutcome> {
    let mut state = TrainState::new(Model::init(cfg)?.params);
    let epoch_losses = train_from(cfg, data, &mut state, observer)?;
    let model = Model {
        config: cfg.clone(),
        params: state.params.clone(),
    };
    Ok(TrainOutcome {
        model,
        epoch_losses,
        state,
    })
}

/// Runs every epoch on a caller-owned state and returns the per-epoch mean losses. On a
/// non-finite loss the state is left as it was before the failing step.
pub fn train_from(
    cfg: &RunConfig,
    data: &Dataset,
    state: &mut TrainState,
    observer: &mut dyn FnMut(&EpochStat),
) -> Result<Vec<f64>> {
    if data.len() < 2 {
        return Err(usage_err!("training needs at least two examples"));
    }
    let adam = AdamConfig::from_run(cfg);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(cfg, epoch, data.len());
        let mut sum = 0.0;
        let mut steps = 0u64;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data.examples[i]).collect();
            let mut g = Graph::new();
            let p = state.params.bind(&mut g, true);
            let loss = batch_loss_graph(&mut g, &p, cfg, &batch)?;
            let value = g.value(loss.total).item();
            if !value.is_finite() {
                return Err(Error::NonFinite(alloc::format!("loss at epoch {} step {}", epoch + 1, state.step + 1)));
            }
            g.backward(loss.total)?;
            adam_step(state, &p.grads(&g), &adam)?;
            state.loss_history.push(value);
            sum += value;
            steps += 1;
        }
        let mean_loss = sum / steps as f64;
        epoch_losses.push(mean_loss);
        observer(&EpochStat {
            epoch: epoch + 1,
            mean_loss,
            steps: state.step,
        });
    }
    state.params.quantize_f32();
    Ok(epoch_losses)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        RunConfig {
            dim: 8,
            train_size: 8,
            val_size: 4,
            test_size: 4,
            batch_size: 4,
            epochs: 2,
            audio_seconds: 0.1,
            ..RunConfig::default()
        }
    }

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        RunConfig::full_scale().validate().unwrap();
        assert_eq!(RunConfig::full_scale().patches().unwrap(), 25);
        assert_eq!(RunConfig::default().patches().unwrap(), 4);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            RunConfig { batch_size: 1, ..tiny() },
            RunConfig { mmt_depth: 0, ..tiny() },
            RunConfig { tau: 0.0, ..tiny() },
            RunConfig { scales_used: vec![4], ..tiny() },
            RunConfig { image_size: 30, ..tiny() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        let ok = RunConfig { mmt_enabled: false, mmt_depth: 0, ..tiny() };
        ok.validate().unwrap();
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let model = Model::init(&tiny()).unwrap();
        let mut st = TrainState::new(model.params.clone());
        let zeros: Vec<Tensor> = model.params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        adam_step(&mut st, &zeros, &AdamConfig::default()).unwrap();
        assert_eq!(st.params, model.params);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_matches_scalar_simulation() {
        let mut ps = ParamStore::new();
        ps.insert("x", Tensor::from_vec(vec![1.0]).unwrap()).unwrap();
        let mut st = TrainState::new(ps);
        let adam = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let g = 0.7;
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=50 {
            adam_step(&mut st, &[Tensor::from_vec(vec![g]).unwrap()], &adam).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.01 * mh / (vh.sqrt() + 1e-8);
            assert!((st.params.tensors()[0].data()[0] - x).abs() < 1e-13);
        }
        // constant gradient: every bias-corrected step has size lr
        assert!((x - (1.0 - 50.0 * 0.01)).abs() < 1e-6);
    }

    #[test]
    fn non_finite_grads_abort() {
        let mut ps = ParamStore::new();
        ps.insert("x", Tensor::from_vec(vec![1.0]).unwrap()).unwrap();
        let mut st = TrainState::new(ps);
        let bad = Tensor::from_parts(vec![1], vec![f64::NAN]);
        assert!(matches!(
            adam_step(&mut st, &[bad], &AdamConfig::default()),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn disabling_mmt_drops_its_parameters() {
        let with = Model::init(&tiny()).unwrap();
        let without = Model::init(&RunConfig { mmt_enabled: false, ..tiny() }).unwrap();
        assert!(with.params.names().iter().any(|n| n.starts_with("mmt.")));
        assert!(!without.params.names().iter().any(|n| n.starts_with("mmt.")));
        assert!(Model::from_params(&tiny(), without.params).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny();
        let data = build_dataset(&cfg, Split::Train, false).unwrap();
        let a = train(&cfg, &data, &mut |_| {}).unwrap();
        let b = train(&cfg, &data, &mut |_| {}).unwrap();
        assert_eq!(a.epoch_losses, b.epoch_losses);
        assert_eq!(a.model, b.model);
        assert_eq!(a.state.step, 4);
    }
}
