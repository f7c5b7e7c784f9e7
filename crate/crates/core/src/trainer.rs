//! Training loop, evaluation and the ablation driver.
//!
//! An epoch draws `crops_per_image` random aligned crops from every training
//! image, shuffles them and walks through them in mini-batches. All
//! randomness derives from `seed`, so a run is reproducible bit for bit.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use xrds_autodiff::{Graph, Tensor};

use crate::data_io::{load_sample, RenderingSample};
use crate::error::{Result, XrdsError};
use crate::feature_map::FeatureMap;
use crate::metrics::{bicubic_upsample, mean_psnr, psnr_srgb, spp_average, MetricsReport, ReportBuilder, ReportContext, RELMSE_EPS, ROBUST_BETA};
use crate::model::{ModelConfig, XrdsModel};
use crate::optim::{clip_global_norm, Adam, AdamConfig};
use crate::patches::{extract_patches, PatchBatch};
use crate::toyscenes::{Manifest, Split};

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const METHOD_MODEL: &str = "xrds";
pub const METHOD_BICUBIC: &str = "bicubic";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from `lr` to zero over the run.
    Cosine,
}

impl LrSchedule {
    pub fn at(self, lr: f64, step: u64, total: u64) -> f64 {
        match self {
            LrSchedule::Constant => lr,
            LrSchedule::Cosine => {
                let t = (step as f64 / total.max(1) as f64).min(1.0);
                lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// High-resolution patch side.
    pub patch: usize,
    pub crops_per_image: usize,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    /// Validate every this many epochs (and after the last one).
    pub val_every: usize,
    /// Stop after this many validations without improvement, if set.
    pub patience: Option<usize>,
    /// Clip gradients to this global L2 norm, if set.
    pub grad_clip: Option<f64>,
    pub robust_beta: f64,
    /// Warm-start from matching parameters of this checkpoint.
    pub init_checkpoint: Option<PathBuf>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Full-scale schedule.
    pub fn paper() -> Self {
        Self {
            lr: 1e-4,
            lr_schedule: LrSchedule::Constant,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 16,
            epochs: 400,
            patch: 256,
            crops_per_image: 1,
            max_steps: None,
            seed: 0,
            manifest: PathBuf::from("data/manifest.json"),
            out_dir: PathBuf::from("runs/xrds"),
            val_every: 1,
            patience: None,
            grad_clip: None,
            robust_beta: ROBUST_BETA,
            init_checkpoint: None,
            model: ModelConfig::paper(),
        }
    }

    /// CPU-sized schedule around the small network.
    pub fn desk() -> Self {
        Self {
            lr: 2e-3,
            lr_schedule: LrSchedule::Cosine,
            batch_size: 4,
            epochs: 20,
            patch: 64,
            crops_per_image: 4,
            val_every: 5,
            model: ModelConfig::desk(),
            ..Self::paper()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            "micro" => Ok(Self {
                model: ModelConfig::micro(),
                ..Self::desk()
            }),
            other => Err(XrdsError::Config(format!("unknown train profile `{other}`"))),
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(XrdsError::Config("train.lr must be finite and non-negative".into()));
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(XrdsError::Config(format!("train.{name} must lie in [0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0 && self.robust_beta > 0.0) {
            return Err(XrdsError::Config("train.adam_eps and train.robust_beta must be positive".into()));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("patch", self.patch),
            ("crops_per_image", self.crops_per_image),
            ("val_every", self.val_every),
        ] {
            if v == 0 {
                return Err(XrdsError::Config(format!("train.{name} must be positive")));
            }
        }
        let unit = self.model.scale * self.model.window;
        if !self.patch.is_multiple_of(unit) {
            return Err(XrdsError::Config(format!(
                "train.patch {} must be divisible by scale x window = {unit}",
                self.patch
            )));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(XrdsError::Config("train.grad_clip must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Named samples in manifest order.
#[derive(Clone, Debug, Default)]
pub struct ImageSet {
    pub names: Vec<String>,
    pub samples: Vec<RenderingSample>,
}

impl ImageSet {
    pub fn load(manifest: &Manifest, split: Split) -> Result<Self> {
        let mut set = ImageSet::default();
        for entry in manifest.split(split) {
            let sample = load_sample(&manifest.sample_dir(entry))?;
            set.names.push(entry.path.clone());
            set.samples.push(sample);
        }
        Ok(set)
    }

    pub fn push(&mut self, name: impl Into<String>, sample: RenderingSample) {
        self.names.push(name.into());
        self.samples.push(sample);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn require(&self, what: &str) -> Result<()> {
        if self.is_empty() {
            return Err(XrdsError::EmptySplit(what.to_string()));
        }
        Ok(())
    }

    fn check_scale(&self, scale: usize) -> Result<()> {
        if let Some((name, s)) = self.names.iter().zip(&self.samples).find(|(_, s)| s.scale != scale) {
            return Err(XrdsError::ConfigMismatch(format!(
                "sample `{name}` has scale {}, model expects {scale}",
                s.scale
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_psnr: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub steps: u64,
    pub best_val_psnr: f64,
    pub last_val_psnr: f64,
    pub log: Vec<LogRecord>,
    pub model: XrdsModel,
}

/// Mean per-image PSNR of full-image predictions.
pub fn validation_psnr(model: &XrdsModel, set: &ImageSet) -> Result<f64> {
    set.require("val")?;
    let mut values = Vec::with_capacity(set.len());
    for s in &set.samples {
        let hr = s.hr_rgb.as_ref().ok_or_else(|| XrdsError::Dimension("validation sample lacks hr_rgb".into()))?;
        values.push(psnr_srgb(&model.predict(&s.lr_rgb, &s.aux)?, hr)?);
    }
    mean_psnr(&values)
}

type EpochCrops = (Vec<PatchBatch>, Vec<(usize, usize)>);

/// Crops for one epoch in shuffled order: `(image, crop)` pairs into `crops`.
fn epoch_crops(train: &ImageSet, cfg: &TrainConfig, epoch: u64) -> Result<EpochCrops> {
    let base = cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ epoch.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    let mut crops = Vec::with_capacity(train.len());
    let mut order = Vec::with_capacity(train.len() * cfg.crops_per_image);
    for (i, s) in train.samples.iter().enumerate() {
        crops.push(extract_patches(s, cfg.patch, cfg.crops_per_image, base ^ (i as u64 + 1))?);
        order.extend((0..cfg.crops_per_image).map(|k| (i, k)));
    }
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(base ^ 0xD1B5_4A32_D192_ED03));
    Ok((crops, order))
}

fn gather_batch(crops: &[PatchBatch], picks: &[(usize, usize)]) -> (Tensor<f32>, Tensor<f32>, Tensor<f32>) {
    let lr: Vec<FeatureMap> = picks.iter().map(|&(i, k)| crops[i].lr[k].clone()).collect();
    let aux: Vec<FeatureMap> = picks.iter().map(|&(i, k)| crops[i].aux[k].clone()).collect();
    let hr: Vec<FeatureMap> = picks.iter().map(|&(i, k)| crops[i].hr[k].clone()).collect();
    (
        FeatureMap::batch_to_nhwc(&lr),
        FeatureMap::batch_to_nhwc(&aux),
        FeatureMap::batch_to_nhwc(&hr),
    )
}

/// One optimizer step on NHWC tensors; returns the loss before the update.
pub fn train_step(
    model: &mut XrdsModel,
    adam: &mut Adam<f32>,
    batch: (Tensor<f32>, Tensor<f32>, Tensor<f32>),
    robust_beta: f64,
    grad_clip: Option<f64>,
) -> Result<f64> {
    let (lr, aux, hr) = batch;
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, true);
    let lr = g.constant(lr);
    let aux = g.constant(aux);
    let out = model.net.forward(&mut g, &p, lr, aux)?;
    let loss = g.robust_loss(out, Rc::new(hr.into_data()), robust_beta as f32);
    let value = g.value(loss).data()[0] as f64;
    if !value.is_finite() {
        return Ok(value);
    }
    let mut grads = g.backward(loss);
    let mut gs: Vec<Option<Vec<f32>>> = p.vars().iter().map(|v| grads.take(*v)).collect();
    if let Some(c) = grad_clip {
        clip_global_norm(&mut gs, c);
    }
    adam.step(model.params.tensors_mut(), &gs);
    Ok(value)
}

/// Builds the initial model: fresh, or warm-started from `init_checkpoint`
/// (tensors whose name and shape match are copied; e.g. a new scale keeps
/// everything except the upscale head and the aux projections).
pub fn initial_model(cfg: &TrainConfig) -> Result<XrdsModel> {
    let mut model = XrdsModel::new(cfg.model.clone(), cfg.seed)?;
    if let Some(path) = &cfg.init_checkpoint {
        let source = XrdsModel::load(path)?;
        let copied = model.copy_matching(&source);
        if copied == 0 {
            return Err(XrdsError::ConfigMismatch(format!(
                "checkpoint {} shares no parameters with the configured model",
                path.display()
            )));
        }
    }
    Ok(model)
}

/// Trains from the manifest named in `cfg`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let manifest = Manifest::load(&cfg.manifest)?;
    let train_set = ImageSet::load(&manifest, Split::Train)?;
    let val_set = ImageSet::load(&manifest, Split::Val)?;
    train_on(cfg, &train_set, &val_set)
}

/// Trains on in-memory image sets, writing checkpoints and the log to `cfg.out_dir`.
pub fn train_on(cfg: &TrainConfig, train_set: &ImageSet, val_set: &ImageSet) -> Result<TrainOutcome> {
    cfg.validate()?;
    train_set.require("train")?;
    val_set.require("val")?;
    train_set.check_scale(cfg.model.scale)?;
    val_set.check_scale(cfg.model.scale)?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| XrdsError::io(&cfg.out_dir, e))?;
    let best_path = cfg.out_dir.join(BEST_CHECKPOINT);
    let last_path = cfg.out_dir.join(LAST_CHECKPOINT);
    let log_path = cfg.out_dir.join(TRAIN_LOG);
    let mut log_file = fs::File::create(&log_path).map_err(|e| XrdsError::io(&log_path, e))?;

    let mut model = initial_model(cfg)?;
    let mut adam = Adam::new(cfg.adam(), model.params.tensors_mut());
    let mut log = Vec::new();
    let mut step: u64 = 0;
    let mut best = f64::NEG_INFINITY;
    let mut last_val = f64::NEG_INFINITY;
    let mut stale = 0usize;
    let mut last_loss = 0.0;
    let max_steps = cfg.max_steps.map(|m| m as u64).unwrap_or(u64::MAX);
    let per_epoch = (train_set.len() * cfg.crops_per_image).div_ceil(cfg.batch_size) as u64;
    let total_steps = max_steps.min(per_epoch * cfg.epochs as u64);

    let mut write = |rec: &LogRecord, log: &mut Vec<LogRecord>| -> Result<()> {
        writeln!(log_file, "{}", serde_json::to_string(rec)?).map_err(|e| XrdsError::io(&log_path, e))?;
        log.push(rec.clone());
        Ok(())
    };

    'epochs: for epoch in 0..cfg.epochs as u64 {
        let (crops, order) = epoch_crops(train_set, cfg, epoch)?;
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for picks in order.chunks(cfg.batch_size) {
            if step >= max_steps {
                break;
            }
            adam.cfg.lr = cfg.lr_schedule.at(cfg.lr, step, total_steps);
            let loss = train_step(&mut model, &mut adam, gather_batch(&crops, picks), cfg.robust_beta, cfg.grad_clip)?;
            if !loss.is_finite() {
                let provenance: Vec<String> = picks
                    .iter()
                    .map(|&(i, k)| format!("{}@{:?}", train_set.names[i], crops[i].origins[k]))
                    .collect();
                return Err(XrdsError::NonFiniteLoss {
                    step,
                    epoch,
                    batch: provenance.join(", "),
                });
            }
            step += 1;
            last_loss = loss;
            epoch_loss += loss;
            batches += 1;
            write(
                &LogRecord {
                    step,
                    epoch,
                    loss,
                    lr: adam.cfg.lr,
                    val_psnr: None,
                },
                &mut log,
            )?;
        }
        let finished = step >= max_steps || epoch + 1 == cfg.epochs as u64;
        if (epoch + 1) % cfg.val_every as u64 == 0 || finished {
            let psnr = validation_psnr(&model, val_set)?;
            last_val = psnr;
            write(
                &LogRecord {
                    step,
                    epoch,
                    loss: if batches > 0 { epoch_loss / batches as f64 } else { last_loss },
                    lr: adam.cfg.lr,
                    val_psnr: Some(psnr),
                },
                &mut log,
            )?;
            if psnr > best {
                best = psnr;
                stale = 0;
                model.save(&best_path)?;
            } else {
                stale += 1;
            }
            if cfg.patience.is_some_and(|p| stale >= p) {
                break 'epochs;
            }
        }
        if finished {
            break;
        }
    }
    model.save(&last_path)?;
    if !best_path.exists() {
        model.save(&best_path)?;
        best = last_val;
    }
    Ok(TrainOutcome {
        best_checkpoint: best_path,
        last_checkpoint: last_path,
        log_path,
        steps: step,
        best_val_psnr: best,
        last_val_psnr: last_val,
        log,
        model,
    })
}

/// Full-image evaluation of `model` on `set`, with bicubic rows for comparison.
pub fn evaluate_model(model: &XrdsModel, set: &ImageSet, split: &str, checkpoint_id: &str) -> Result<MetricsReport> {
    set.require(split)?;
    set.check_scale(model.scale())?;
    let first = &set.samples[0];
    let s = model.scale();
    let mut report = ReportBuilder::new(ReportContext {
        scale: s,
        spp_lr: first.spp_lr,
        spp_aux: first.spp_aux,
        spp_avg: spp_average(first.spp_lr, first.spp_aux, s),
        checkpoint: checkpoint_id.to_string(),
        split: split.to_string(),
        relmse_eps: RELMSE_EPS,
    });
    for (name, sample) in set.names.iter().zip(&set.samples) {
        let hr = sample
            .hr_rgb
            .as_ref()
            .ok_or_else(|| XrdsError::Dimension(format!("sample `{name}` has no hr_rgb reference")))?;
        let sr = model.predict(&sample.lr_rgb, &sample.aux)?;
        report.add(name, METHOD_MODEL, &sr, hr)?;
        if s > 1 {
            report.add(name, METHOD_BICUBIC, &bicubic_upsample(&sample.lr_rgb, s)?, hr)?;
        }
    }
    Ok(report.finish())
}

/// Evaluates a checkpoint on one split of a manifest.
pub fn evaluate(checkpoint: &Path, manifest: &Path, split: Split) -> Result<MetricsReport> {
    let model = XrdsModel::load(checkpoint)?;
    let manifest = Manifest::load(manifest)?;
    let set = ImageSet::load(&manifest, split)?;
    let id = model.fingerprint()?;
    evaluate_model(&model, &set, split.name(), &id[..16])
}

#[derive(Clone, Debug)]
pub struct AblationVariant {
    pub label: String,
    pub config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub aux_mask: String,
    pub groups: usize,
    pub blocks: usize,
    pub params: usize,
    pub psnr_db: f64,
    pub bicubic_psnr_db: Option<f64>,
    pub relmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub split: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<20} {:<12} {:>3} {:>3} {:>10} {:>9} {:>9} {:>10}\n",
            "variant", "aux", "N", "B", "params", "psnr_db", "bicubic", "relmse"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<20} {:<12} {:>3} {:>3} {:>10} {:>9.3} {:>9} {:>10.6}\n",
                r.label,
                r.aux_mask,
                r.groups,
                r.blocks,
                r.params,
                r.psnr_db,
                r.bicubic_psnr_db.map_or("-".into(), |v| format!("{v:.3}")),
                r.relmse
            ));
        }
        out
    }
}

/// Trains and evaluates every variant on the given sets; rows keep grid order.
pub fn run_ablation_on(grid: &[AblationVariant], train_set: &ImageSet, val_set: &ImageSet, test_set: &ImageSet) -> Result<AblationTable> {
    if grid.is_empty() {
        return Err(XrdsError::Config("ablation grid is empty".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for v in grid {
        let outcome = train_on(&v.config, train_set, val_set)?;
        let model = XrdsModel::load(&outcome.best_checkpoint)?;
        let report = evaluate_model(&model, test_set, "test", &v.label)?;
        let ours = report.aggregate(METHOD_MODEL).expect("model rows present");
        rows.push(AblationRow {
            label: v.label.clone(),
            aux_mask: v.config.model.aux_mask.label().to_string(),
            groups: v.config.model.groups,
            blocks: v.config.model.blocks,
            params: model.count_parameters(),
            psnr_db: ours.mean_psnr_db.unwrap_or(f64::INFINITY),
            bicubic_psnr_db: report.aggregate(METHOD_BICUBIC).and_then(|a| a.mean_psnr_db),
            relmse: ours.mean_relmse,
        });
    }
    Ok(AblationTable {
        split: "test".into(),
        rows,
    })
}

/// Runs the grid on the manifest shared by all variants.
pub fn run_ablation(grid: &[AblationVariant]) -> Result<AblationTable> {
    let first = grid.first().ok_or_else(|| XrdsError::Config("ablation grid is empty".into()))?;
    let manifest = Manifest::load(&first.config.manifest)?;
    let train_set = ImageSet::load(&manifest, Split::Train)?;
    let val_set = ImageSet::load(&manifest, Split::Val)?;
    let test_set = ImageSet::load(&manifest, Split::Test)?;
    if grid.iter().any(|v| v.config.manifest != first.config.manifest) {
        return Err(XrdsError::Config("ablation variants must share one manifest".into()));
    }
    run_ablation_on(grid, &train_set, &val_set, &test_set)
}
