//! Subcommands of the `m2vsl` binary.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use m2vsl_core::eval::Predictor;
use m2vsl_core::gradcheck::{self, GradcheckConfig, GradcheckReport};
use m2vsl_core::synth::{gen_sample, Split};
use m2vsl_core::train::{build_dataset, make_example, train_from, Model, RunConfig, TrainState};
use m2vsl_core::Tensor;
use serde_json::Value;

use crate::pgm::Greymap;
use crate::report::{self, number, Flat};
use crate::{checkpoint, config, experiments, m2ts, NumericalFailure};

pub const CONFIG_FILE: &str = "config.txt";
pub const LOSS_CURVE_FILE: &str = "loss_curve.tsv";

#[derive(Debug, Parser)]
#[command(name = "m2vsl", version, about = "Multi-scale audio-visual sound source localization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write its checkpoint and loss curve.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on a synthetic split.
    Eval(EvalArgs),
    /// Write heatmaps and masks for selected samples.
    Localize(LocalizeArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate once per batch size.
    SweepBatch(SweepArgs),
    /// Train and evaluate the four on/off arms of the multi-scale loss and the transformer.
    Ablate(ConfigArgs),
    /// Materialize a synthetic split on disk.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Shorthand for `--set output_dir=DIR`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ConfigArgs {
    fn overrides(&self) -> Vec<String> {
        let mut o = self.set.clone();
        if let Some(out) = &self.out {
            o.push(format!("output_dir={}", out.display()));
        }
        o
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        config::resolve(self.config.as_deref(), &self.overrides())
    }

    /// Like `resolve`, but falls back to the config saved next to a checkpoint.
    fn resolve_for(&self, ckpt: &Path) -> Result<RunConfig> {
        let saved = ckpt.join(CONFIG_FILE);
        let file = match &self.config {
            Some(p) => Some(p.clone()),
            None if saved.exists() => Some(saved),
            None => None,
        };
        config::resolve(file.as_deref(), &self.overrides())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Checkpoint directory; defaults to the configured output directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Evaluate side-by-side two-source scenes.
    #[arg(long)]
    pub duet: bool,
    /// Report path; defaults to `report_<split>[_duet].json` in the checkpoint directory.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct LocalizeArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub duet: bool,
    /// Sample indices within the split.
    #[arg(long, value_delimiter = ',', required = true)]
    pub ids: Vec<usize>,
    /// Destination; defaults to `localize/` in the checkpoint directory.
    #[arg(long)]
    pub dest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Elements sampled per input tensor; 0 checks every element.
    #[arg(long, default_value_t = 24)]
    pub max_per_tensor: usize,
    /// Corrupt the matmul backward pass; the check must then fail.
    #[arg(long)]
    pub inject_fault: bool,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
    pub sizes: Vec<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
    #[arg(long)]
    pub duet: bool,
    /// Number of samples; defaults to the configured split size.
    #[arg(long)]
    pub count: Option<usize>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a.resolve()?),
        Command::Eval(a) => cmd_eval(&a),
        Command::Localize(a) => cmd_localize(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::SweepBatch(a) => cmd_sweep(&a.cfg.resolve()?, &a.sizes),
        Command::Ablate(a) => cmd_ablate(&a.resolve()?),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn loss_curve_text(losses: &[f64]) -> String {
    let mut s = String::from("epoch\tmean_loss\n");
    for (i, l) in losses.iter().enumerate() {
        s.push_str(&format!("{}\t{}\n", i + 1, l));
    }
    s
}

/// Writes the run config, checkpoint and loss curve of a trained model into `dir`.
pub fn save_run(dir: &Path, cfg: &RunConfig, params: &m2vsl_core::params::ParamStore, losses: &[f64]) -> Result<()> {
    create_dir(dir)?;
    std::fs::write(dir.join(CONFIG_FILE), config::run_text(cfg))?;
    checkpoint::save(dir, params)?;
    std::fs::write(dir.join(LOSS_CURVE_FILE), loss_curve_text(losses))?;
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let out = PathBuf::from(&cfg.output_dir);
    create_dir(&out)?;
    let data = build_dataset(cfg, Split::Train, false)?;
    let mut state = TrainState::new(Model::init(cfg)?.params);
    let mut losses = Vec::new();
    let result = train_from(cfg, &data, &mut state, &mut |s| {
        eprintln!("epoch {:>3}/{}  loss {:.6}", s.epoch, cfg.epochs, s.mean_loss);
        losses.push(s.mean_loss);
    });
    if let Err(e) = result {
        if matches!(e, m2vsl_core::Error::NonFinite(_) | m2vsl_core::Error::Degenerate(_)) {
            let dump = out.join("abort");
            let saved = save_run(&dump, cfg, &state.params, &losses)
                .and_then(|_| Ok(std::fs::write(dump.join("reason.txt"), format!("{e}\nsteps completed: {}\n", state.step))?));
            match saved {
                Ok(()) => eprintln!("state dumped to {}", dump.display()),
                Err(d) => eprintln!("could not dump state: {d:#}"),
            }
        }
        return Err(e.into());
    }
    save_run(&out, cfg, &state.params, &losses)?;
    println!(
        "trained {} steps, final epoch loss {:.6}; checkpoint in {}",
        state.step,
        losses.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

/// Loads a checkpoint and checks it against `cfg`.
pub fn load_model(cfg: &RunConfig, dir: &Path) -> Result<Model> {
    let params = checkpoint::load(dir)?;
    Model::from_params(cfg, params).with_context(|| format!("checkpoint {} does not match the config", dir.display()))
}

fn checkpoint_dir(arg: &Option<PathBuf>, cfg: &ConfigArgs) -> Result<PathBuf> {
    Ok(match arg {
        Some(p) => p.clone(),
        None => PathBuf::from(cfg.resolve()?.output_dir),
    })
}

fn split_tag(split: Split, duet: bool) -> String {
    if duet {
        format!("{}_duet", split.name())
    } else {
        split.name().to_string()
    }
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let dir = checkpoint_dir(&a.checkpoint, &a.cfg)?;
    let cfg = a.cfg.resolve_for(&dir)?;
    let model = load_model(&cfg, &dir)?;
    let split: Split = a.split.into();
    let data = build_dataset(&cfg, split, a.duet)?;
    let metrics = m2vsl_core::eval::evaluate(&model, &data)?;
    let mut flat = report::metrics_with_config(&metrics, &cfg);
    flat.insert("split".into(), Value::String(split.name().into()));
    flat.insert("duet".into(), Value::Bool(a.duet));
    flat.insert("samples".into(), Value::from(data.len()));
    if let Some(acc) = m2vsl_core::eval::category_accuracy(&model, &data)? {
        flat.insert("category_accuracy".into(), number(acc));
    }
    let path = a
        .report
        .clone()
        .unwrap_or_else(|| dir.join(format!("report_{}.json", split_tag(split, a.duet))));
    report::write(&path, &flat)?;
    print!("{}", report::to_string(&report::metrics(&metrics)));
    Ok(())
}

fn write_map(dir: &Path, stem: &str, map: &m2vsl_core::locseg::LocalizationMap) -> Result<()> {
    Greymap::from_map(map).write(&dir.join(format!("{stem}.pgm")))?;
    m2ts::write(&dir.join(format!("{stem}.m2ts")), map.as_tensor())
}

fn cmd_localize(a: &LocalizeArgs) -> Result<()> {
    let dir = checkpoint_dir(&a.checkpoint, &a.cfg)?;
    let cfg = a.cfg.resolve_for(&dir)?;
    let model = load_model(&cfg, &dir)?;
    let dest = a.dest.clone().unwrap_or_else(|| dir.join("localize"));
    create_dir(&dest)?;
    let split: Split = a.split.into();
    let predictor = Predictor::new(&model)?;
    let synth = cfg.synth();
    for &id in &a.ids {
        let sample = gen_sample(cfg.seed, split.sample_seed(id)?, a.duet, &synth)?;
        let ex = make_example(&cfg, id, sample)?;
        let pred = predictor.predict(&ex.sample.scene.image, &ex.pooled)?;
        let stem = format!("{}_{id:05}", split_tag(split, a.duet));
        write_map(&dest, &format!("{stem}_heatmap"), &pred.map)?;
        Greymap::from_mask(&pred.mask).write(&dest.join(format!("{stem}_mask.pgm")))?;
        Greymap::from_mask(&ex.sample.union_mask()).write(&dest.join(format!("{stem}_gt.pgm")))?;
        m2ts::write(&dest.join(format!("{stem}_image.m2ts")), &ex.sample.scene.image.to_tensor())?;
        for (c, map) in pred.category_maps.iter().enumerate() {
            write_map(&dest, &format!("{stem}_category{c}"), map)?;
            let mask = m2vsl_core::locseg::threshold_mask(map, cfg.threshold());
            Greymap::from_mask(&mask).write(&dest.join(format!("{stem}_category{c}_mask.pgm")))?;
        }
        for (c, map) in pred.token_maps.iter().flatten().enumerate() {
            write_map(&dest, &format!("{stem}_token{c}"), map)?;
        }
        println!("{stem}: categories {:?}", ex.sample.categories());
    }
    Ok(())
}

pub fn gradcheck_flat(rep: &GradcheckReport) -> Flat {
    let mut flat = Flat::new();
    flat.insert("passed".into(), Value::Bool(rep.passed()));
    flat.insert("tolerance".into(), number(rep.tolerance));
    flat.insert("max_rel_err".into(), number(rep.max_rel_err()));
    flat.insert("suites".into(), Value::from(rep.suites.len()));
    for s in &rep.suites {
        flat.insert(format!("suite.{}.max_rel_err", s.name), number(s.max_rel_err));
        flat.insert(format!("suite.{}.checked", s.name), Value::from(s.checked));
        flat.insert(format!("suite.{}.skipped", s.name), Value::from(s.skipped));
        flat.insert(format!("suite.{}.below_floor", s.name), Value::from(s.below_floor));
        flat.insert(format!("suite.{}.passed", s.name), Value::Bool(s.passed));
    }
    flat
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let cfg = GradcheckConfig {
        seed: a.seed,
        max_per_tensor: a.max_per_tensor,
        inject_fault: a.inject_fault,
        ..GradcheckConfig::default()
    };
    let rep = gradcheck::run(&cfg)?;
    println!("{:<48} {:>12} {:>8} {:>8} {:>8}  status", "suite", "max_rel_err", "checked", "skipped", "floor");
    for s in &rep.suites {
        println!(
            "{:<48} {:>12.3e} {:>8} {:>8} {:>8}  {}",
            s.name,
            s.max_rel_err,
            s.checked,
            s.skipped,
            s.below_floor,
            if s.passed { "ok" } else { "FAIL" }
        );
    }
    if let Some(path) = &a.report {
        report::write(path, &gradcheck_flat(&rep))?;
    }
    if !rep.passed() {
        let failed: Vec<&str> = rep.suites.iter().filter(|s| !s.passed).map(|s| s.name.as_str()).collect();
        return Err(NumericalFailure(format!(
            "gradient check above tolerance {:e} in: {}",
            rep.tolerance,
            failed.join(", ")
        ))
        .into());
    }
    println!("all {} suites within {:e}", rep.suites.len(), rep.tolerance);
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, sizes: &[usize]) -> Result<()> {
    let dir = PathBuf::from(&cfg.output_dir).join("sweep");
    create_dir(&dir)?;
    let rows = experiments::sweep_batch(cfg, sizes, &mut |m| eprintln!("{m}"))?;
    for r in &rows {
        let c = RunConfig {
            batch_size: r.batch_size,
            ..cfg.clone()
        };
        let mut flat = report::metrics_with_config(&r.report, &c);
        flat.insert("first_epoch_loss".into(), number(r.first_epoch_loss));
        flat.insert("final_epoch_loss".into(), number(r.final_epoch_loss));
        report::write(&dir.join(format!("batch_{}.json", r.batch_size)), &flat)?;
    }
    let table = experiments::sweep_table(&rows);
    std::fs::write(dir.join("curve.tsv"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig) -> Result<()> {
    let dir = PathBuf::from(&cfg.output_dir).join("ablation");
    create_dir(&dir)?;
    let rows = experiments::ablate(cfg, &mut |m| eprintln!("{m}"))?;
    for r in &rows {
        let mut flat = report::metrics_with_config(&r.report, &r.arm.apply(cfg));
        flat.insert("arm".into(), Value::String(r.arm.name().into()));
        flat.insert("final_epoch_loss".into(), number(r.final_epoch_loss));
        report::write(&dir.join(format!("{}.json", r.arm.name())), &flat)?;
    }
    let table = experiments::ablation_table(&rows);
    std::fs::write(dir.join("table.tsv"), &table)?;
    print!("{table}");
    Ok(())
}

fn join(xs: &[usize]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let split: Split = a.split.into();
    let n = a.count.unwrap_or_else(|| m2vsl_core::train::split_size(&cfg, split));
    let dir = PathBuf::from(&cfg.output_dir).join(format!("synth_{}", split_tag(split, a.duet)));
    create_dir(&dir)?;
    let synth = cfg.synth();
    let mut manifest = String::new();
    for id in 0..n {
        let seed = split.sample_seed(id)?;
        let s = gen_sample(cfg.seed, seed, a.duet, &synth)?;
        m2ts::write(&dir.join(format!("{id:05}_image.m2ts")), &s.scene.image.to_tensor())?;
        let wave = Tensor::from_vec(s.audio.waveform.samples().to_vec())?;
        m2ts::write(&dir.join(format!("{id:05}_audio.m2ts")), &wave)?;
        for (k, src) in s.scene.sources.iter().enumerate() {
            Greymap::from_mask(&src.mask).write(&dir.join(format!("{id:05}_mask{k}.pgm")))?;
        }
        manifest.push_str(&format!("{id} {seed} {}\n", join(&s.categories())));
    }
    std::fs::write(dir.join("manifest.txt"), manifest)?;
    println!("{n} samples in {}", dir.display());
    Ok(())
}
