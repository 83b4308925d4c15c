//! Plain-text `key=value` run configuration. Every `RunConfig` field is a key, blank
//! lines and `#` comments are ignored, and lists are comma-separated.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use m2vsl_core::train::RunConfig;

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| anyhow!("{key}: cannot parse {v:?}: {e}"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => bail!("{key}: expected a boolean, got {v:?}"),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Applies one assignment.
pub fn set(cfg: &mut RunConfig, key: &str, value: &str) -> Result<()> {
    let v = value.trim();
    match key.trim() {
        "dim" => cfg.dim = parse(key, v)?,
        "stages" => cfg.stages = parse(key, v)?,
        "patch" => cfg.patch = parse(key, v)?,
        "image_size" => cfg.image_size = parse(key, v)?,
        "categories" => cfg.categories = parse(key, v)?,
        "tau" => cfg.tau = parse(key, v)?,
        "batch_size" => cfg.batch_size = parse(key, v)?,
        "epochs" => cfg.epochs = parse(key, v)?,
        "learning_rate" => cfg.learning_rate = parse(key, v)?,
        "adam_beta1" => cfg.adam_beta1 = parse(key, v)?,
        "adam_beta2" => cfg.adam_beta2 = parse(key, v)?,
        "adam_eps" => cfg.adam_eps = parse(key, v)?,
        "seed" => cfg.seed = parse(key, v)?,
        "mmc_enabled" => cfg.mmc_enabled = parse_bool(key, v)?,
        "mmt_enabled" => cfg.mmt_enabled = parse_bool(key, v)?,
        "mmt_depth" => cfg.mmt_depth = parse(key, v)?,
        "mmt_residual" => cfg.mmt_residual = parse_bool(key, v)?,
        "mmt_qkv" => cfg.mmt_qkv = parse_bool(key, v)?,
        "mmt_stage" => cfg.mmt_stage = parse(key, v)?,
        "scales_used" => cfg.scales_used = parse_list(key, v)?,
        "map_scales" => cfg.map_scales = parse_list(key, v)?,
        "mmt_class_maps" => cfg.mmt_class_maps = parse_bool(key, v)?,
        "lambda_cls" => cfg.lambda_cls = parse(key, v)?,
        "train_size" => cfg.train_size = parse(key, v)?,
        "val_size" => cfg.val_size = parse(key, v)?,
        "test_size" => cfg.test_size = parse(key, v)?,
        "audio_seconds" => cfg.audio_seconds = parse(key, v)?,
        "sample_rate" => cfg.sample_rate = parse(key, v)?,
        "min_area" => cfg.min_area = parse(key, v)?,
        "max_area" => cfg.max_area = parse(key, v)?,
        "normalize_spectrogram" => cfg.normalize_spectrogram = parse_bool(key, v)?,
        "normalize_audio" => cfg.normalize_audio = parse_bool(key, v)?,
        "normalize_visual" => cfg.normalize_visual = parse_bool(key, v)?,
        "mask_threshold" => cfg.mask_threshold = parse(key, v)?,
        "iou_tau" => cfg.iou_tau = parse(key, v)?,
        "ciou_tau" => cfg.ciou_tau = parse(key, v)?,
        "f_beta2" => cfg.f_beta2 = parse(key, v)?,
        "output_dir" => cfg.output_dir = v.to_string(),
        other => bail!("unknown config key {other:?}"),
    }
    Ok(())
}

/// Every field as `(key, value)` in declaration order; `set` accepts each pair back.
pub fn entries(cfg: &RunConfig) -> Vec<(&'static str, String)> {
    vec![
        ("dim", cfg.dim.to_string()),
        ("stages", cfg.stages.to_string()),
        ("patch", cfg.patch.to_string()),
        ("image_size", cfg.image_size.to_string()),
        ("categories", cfg.categories.to_string()),
        ("tau", cfg.tau.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("epochs", cfg.epochs.to_string()),
        ("learning_rate", cfg.learning_rate.to_string()),
        ("adam_beta1", cfg.adam_beta1.to_string()),
        ("adam_beta2", cfg.adam_beta2.to_string()),
        ("adam_eps", cfg.adam_eps.to_string()),
        ("seed", cfg.seed.to_string()),
        ("mmc_enabled", cfg.mmc_enabled.to_string()),
        ("mmt_enabled", cfg.mmt_enabled.to_string()),
        ("mmt_depth", cfg.mmt_depth.to_string()),
        ("mmt_residual", cfg.mmt_residual.to_string()),
        ("mmt_qkv", cfg.mmt_qkv.to_string()),
        ("mmt_stage", cfg.mmt_stage.to_string()),
        ("scales_used", list(&cfg.scales_used)),
        ("map_scales", list(&cfg.map_scales)),
        ("mmt_class_maps", cfg.mmt_class_maps.to_string()),
        ("lambda_cls", cfg.lambda_cls.to_string()),
        ("train_size", cfg.train_size.to_string()),
        ("val_size", cfg.val_size.to_string()),
        ("test_size", cfg.test_size.to_string()),
        ("audio_seconds", cfg.audio_seconds.to_string()),
        ("sample_rate", cfg.sample_rate.to_string()),
        ("min_area", cfg.min_area.to_string()),
        ("max_area", cfg.max_area.to_string()),
        ("normalize_spectrogram", cfg.normalize_spectrogram.to_string()),
        ("normalize_audio", cfg.normalize_audio.to_string()),
        ("normalize_visual", cfg.normalize_visual.to_string()),
        ("mask_threshold", cfg.mask_threshold.to_string()),
        ("iou_tau", cfg.iou_tau.to_string()),
        ("ciou_tau", cfg.ciou_tau.to_string()),
        ("f_beta2", cfg.f_beta2.to_string()),
        ("output_dir", cfg.output_dir.clone()),
    ]
}

/// Splits `key=value`.
pub fn split_assignment(s: &str) -> Result<(&str, &str)> {
    s.split_once('=').ok_or_else(|| anyhow!("expected key=value, got {s:?}"))
}

/// Applies the assignments of a config file on top of `cfg`.
pub fn apply_text(cfg: &mut RunConfig, text: &str) -> Result<()> {
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = split_assignment(line).with_context(|| format!("line {}", i + 1))?;
        set(cfg, k, v).with_context(|| format!("line {}", i + 1))?;
    }
    Ok(())
}

pub fn to_text(cfg: &RunConfig) -> String {
    entries(cfg).into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Every entry except `output_dir`, so that artifacts of a run do not depend on where
/// they were written.
pub fn run_entries(cfg: &RunConfig) -> Vec<(&'static str, String)> {
    entries(cfg).into_iter().filter(|(k, _)| *k != "output_dir").collect()
}

pub fn run_text(cfg: &RunConfig) -> String {
    run_entries(cfg).into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Defaults, then the file if given, then every override in order; validated.
pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        apply_text(&mut cfg, &text).with_context(|| format!("in {}", path.display()))?;
    }
    for o in overrides {
        let (k, v) = split_assignment(o)?;
        set(&mut cfg, k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
