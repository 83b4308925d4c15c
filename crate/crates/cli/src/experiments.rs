//! Batch-size sweep and the on/off grid of the multi-scale loss and the transformer.

use anyhow::Result;
use m2vsl_core::eval::evaluate;
use m2vsl_core::metrics::MetricsReport;
use m2vsl_core::synth::Split;
use m2vsl_core::train::{build_dataset, train, RunConfig, TrainOutcome};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub batch_size: usize,
    pub first_epoch_loss: f64,
    pub final_epoch_loss: f64,
    pub report: MetricsReport,
}

/// One training run per batch size on the shared seed, each evaluated on the
/// single-source test split.
pub fn sweep_batch(cfg: &RunConfig, sizes: &[usize], progress: &mut dyn FnMut(&str)) -> Result<Vec<SweepRow>> {
    anyhow::ensure!(!sizes.is_empty(), "sweep needs at least one batch size");
    let train_set = build_dataset(cfg, Split::Train, false)?;
    let test = build_dataset(cfg, Split::Test, false)?;
    let mut rows = Vec::new();
    for &b in sizes {
        let c = RunConfig {
            batch_size: b,
            ..cfg.clone()
        };
        c.validate()?;
        let out = train(&c, &train_set, &mut |_| {})?;
        let report = evaluate(&out.model, &test)?;
        progress(&format!("batch {b}: final loss {:.4}", out.epoch_losses.last().copied().unwrap_or(f64::NAN)));
        rows.push(SweepRow {
            batch_size: b,
            first_epoch_loss: out.epoch_losses[0],
            final_epoch_loss: *out.epoch_losses.last().expect("at least one epoch"),
            report,
        });
    }
    Ok(rows)
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = String::from("batch_size\tfirst_epoch_loss\tfinal_epoch_loss\tap\tiou\tauc\tmiou\tf_score\n");
    for r in rows {
        let m = &r.report;
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.batch_size,
            r.first_epoch_loss,
            r.final_epoch_loss,
            fmt(m.ap),
            fmt(m.iou),
            fmt(m.auc),
            fmt(m.miou),
            fmt(m.f_score)
        ));
    }
    s
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| x.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Baseline,
    MmcOnly,
    MmtOnly,
    Full,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Baseline, Arm::MmcOnly, Arm::MmtOnly, Arm::Full];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::MmcOnly => "mmc_only",
            Arm::MmtOnly => "mmt_only",
            Arm::Full => "full",
        }
    }

    pub fn mmc(self) -> bool {
        matches!(self, Arm::MmcOnly | Arm::Full)
    }

    pub fn mmt(self) -> bool {
        matches!(self, Arm::MmtOnly | Arm::Full)
    }

    pub fn apply(self, cfg: &RunConfig) -> RunConfig {
        RunConfig {
            mmc_enabled: self.mmc(),
            mmt_enabled: self.mmt(),
            ..cfg.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub arm: Arm,
    pub final_epoch_loss: f64,
    /// Metrics on the duet test split.
    pub report: MetricsReport,
}

/// Trains and evaluates one arm on prebuilt data.
pub fn run_arm(
    arm: Arm,
    cfg: &RunConfig,
    train_set: &m2vsl_core::train::Dataset,
    duet_test: &m2vsl_core::train::Dataset,
) -> Result<(TrainOutcome, AblationRow)> {
    let c = arm.apply(cfg);
    c.validate()?;
    let out = train(&c, train_set, &mut |_| {})?;
    let report = evaluate(&out.model, duet_test)?;
    let row = AblationRow {
        arm,
        final_epoch_loss: *out.epoch_losses.last().expect("at least one epoch"),
        report,
    };
    Ok((out, row))
}

/// All four arms on the shared seed: trained on single-source scenes, evaluated on
/// the duet test split.
pub fn ablate(cfg: &RunConfig, progress: &mut dyn FnMut(&str)) -> Result<Vec<AblationRow>> {
    let train_set = build_dataset(cfg, Split::Train, false)?;
    let duet = build_dataset(cfg, Split::Test, true)?;
    let mut rows = Vec::new();
    for arm in Arm::ALL {
        let (_, row) = run_arm(arm, cfg, &train_set, &duet)?;
        progress(&format!("{}: duet mIoU {:.4}", arm.name(), row.report.miou.unwrap_or(f64::NAN)));
        rows.push(row);
    }
    Ok(rows)
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("arm\tmmc\tmmt\tfinal_epoch_loss\tmiou\tf_score\tcap\tpiap\tciou\tauc\n");
    for r in rows {
        let m = &r.report;
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.arm.name(),
            r.arm.mmc(),
            r.arm.mmt(),
            r.final_epoch_loss,
            fmt(m.miou),
            fmt(m.f_score),
            fmt(m.cap),
            fmt(m.piap),
            fmt(m.ciou),
            fmt(m.auc)
        ));
    }
    s
}
