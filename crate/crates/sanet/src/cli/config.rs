//! Flat key=value run configuration. UTF-8 lines, '#' comments, unknown
//! keys rejected; every run logs the fully-resolved text.

use crate::backbone::{BackboneConfig, StageConfig};
use crate::error::{Error, Result};
use crate::head::FusionMode;
use crate::model::ModelConfig;
use crate::tensor::Elem;
use crate::train::AugmentConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    CrossEntropyLovasz,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointCriterion {
    MinCrossEntropy,
    MaxMeanIou,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    // model
    pub stem_channels: usize,
    pub stage_blocks: Vec<usize>,
    pub stage_channels: Vec<usize>,
    pub stage_strides: Vec<usize>,
    pub stage_dilations: Vec<usize>,
    pub cardinality: usize,
    pub hidden_channels: usize,
    pub lstm_kernel: usize,
    pub lstm_dilation: usize,
    pub psp_bins: Vec<(usize, usize)>,
    pub psp_reduce: usize,
    pub fusion: FusionMode,
    pub num_classes: usize,
    pub fcn_hidden: usize,
    // training
    pub seed: u64,
    pub lr: Elem,
    pub lr_power: Elem,
    pub weight_decay: Elem,
    pub steps: u64,
    pub batch: usize,
    pub loss: LossKind,
    pub lovasz_weight: Elem,
    pub lovasz_warmup: u64,
    pub val_interval: u64,
    pub snapshot_step: u64,
    pub checkpoint_criterion: CheckpointCriterion,
    pub aug_flip: Elem,
    pub aug_scale: Elem,
    pub aug_contrast: Elem,
    pub standardize: bool,
    // data
    pub train_dir: String,
    pub val_dir: String,
    // synthetic generator
    pub synth_count: usize,
    pub synth_height: usize,
    pub synth_width: usize,
    // inference
    pub scales: Vec<Elem>,
    // ablation protocol
    pub ablate_epochs: u64,
    pub ablate_seeds: Vec<u64>,
    pub ablate_threshold: Elem,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            stem_channels: 16,
            stage_blocks: vec![2, 2, 2, 2],
            stage_channels: vec![32, 64, 128, 256],
            stage_strides: vec![1, 2, 1, 1],
            stage_dilations: vec![1, 1, 2, 4],
            cardinality: 8,
            hidden_channels: 32,
            lstm_kernel: 3,
            lstm_dilation: 2,
            psp_bins: vec![(6, 6), (3, 3), (2, 2), (1, 1)],
            psp_reduce: 64,
            fusion: FusionMode::Concat,
            num_classes: 5,
            fcn_hidden: 64,
            seed: 1,
            lr: 1e-5,
            lr_power: 0.9,
            weight_decay: 0.01,
            steps: 300,
            batch: 2,
            loss: LossKind::CrossEntropy,
            lovasz_weight: 1.0,
            lovasz_warmup: 0,
            val_interval: 50,
            snapshot_step: 0,
            checkpoint_criterion: CheckpointCriterion::MinCrossEntropy,
            aug_flip: 0.5,
            aug_scale: 1.0,
            aug_contrast: 1.0,
            standardize: false,
            train_dir: String::new(),
            val_dir: String::new(),
            synth_count: 8,
            synth_height: 64,
            synth_width: 64,
            scales: vec![0.75, 1.0, 1.25],
            ablate_epochs: 8,
            ablate_seeds: vec![1, 2, 3],
            ablate_threshold: 0.8,
        }
    }
}

fn parse_list<T: std::str::FromStr>(v: &str, key: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| Error::Config(format!("{key}: cannot parse '{s}'")))
        })
        .collect()
}

fn parse_bins(v: &str) -> Result<Vec<(usize, usize)>> {
    v.split(',')
        .map(|s| {
            let (a, b) = s
                .trim()
                .split_once('x')
                .ok_or_else(|| Error::Config(format!("psp_bins: '{s}' is not HxW")))?;
            Ok((
                a.parse().map_err(|_| Error::Config(format!("psp_bins: bad '{a}'")))?,
                b.parse().map_err(|_| Error::Config(format!("psp_bins: bad '{b}'")))?,
            ))
        })
        .collect()
}

fn fmt_list<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    /// Apply key=value lines on top of the current values.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let bad = |k: &str, v: &str| Error::Config(format!("{k}: cannot parse '{v}'"));
        match key {
            "stem_channels" => self.stem_channels = v.parse().map_err(|_| bad(key, v))?,
            "stage_blocks" => self.stage_blocks = parse_list(v, key)?,
            "stage_channels" => self.stage_channels = parse_list(v, key)?,
            "stage_strides" => self.stage_strides = parse_list(v, key)?,
            "stage_dilations" => self.stage_dilations = parse_list(v, key)?,
            "cardinality" => self.cardinality = v.parse().map_err(|_| bad(key, v))?,
            "hidden_channels" => self.hidden_channels = v.parse().map_err(|_| bad(key, v))?,
            "lstm_kernel" => self.lstm_kernel = v.parse().map_err(|_| bad(key, v))?,
            "lstm_dilation" => self.lstm_dilation = v.parse().map_err(|_| bad(key, v))?,
            "psp_bins" => self.psp_bins = parse_bins(v)?,
            "psp_reduce" => self.psp_reduce = v.parse().map_err(|_| bad(key, v))?,
            "fusion" => self.fusion = FusionMode::parse(v)?,
            "num_classes" => self.num_classes = v.parse().map_err(|_| bad(key, v))?,
            "fcn_hidden" => self.fcn_hidden = v.parse().map_err(|_| bad(key, v))?,
            "seed" => self.seed = v.parse().map_err(|_| bad(key, v))?,
            "lr" => self.lr = v.parse().map_err(|_| bad(key, v))?,
            "lr_power" => self.lr_power = v.parse().map_err(|_| bad(key, v))?,
            "weight_decay" => self.weight_decay = v.parse().map_err(|_| bad(key, v))?,
            "steps" => self.steps = v.parse().map_err(|_| bad(key, v))?,
            "batch" => self.batch = v.parse().map_err(|_| bad(key, v))?,
            "loss" => {
                self.loss = match v {
                    "ce" => LossKind::CrossEntropy,
                    "ce+lovasz" => LossKind::CrossEntropyLovasz,
                    _ => return Err(Error::Config(format!("loss: '{v}' (ce | ce+lovasz)"))),
                }
            }
            "lovasz_weight" => self.lovasz_weight = v.parse().map_err(|_| bad(key, v))?,
            "lovasz_warmup" => self.lovasz_warmup = v.parse().map_err(|_| bad(key, v))?,
            "val_interval" => self.val_interval = v.parse().map_err(|_| bad(key, v))?,
            "snapshot_step" => self.snapshot_step = v.parse().map_err(|_| bad(key, v))?,
            "checkpoint_criterion" => {
                self.checkpoint_criterion = match v {
                    "min_ce" => CheckpointCriterion::MinCrossEntropy,
                    "max_miou" => CheckpointCriterion::MaxMeanIou,
                    _ => {
                        return Err(Error::Config(format!(
                            "checkpoint_criterion: '{v}' (min_ce | max_miou)"
                        )))
                    }
                }
            }
            "aug_flip" => self.aug_flip = v.parse().map_err(|_| bad(key, v))?,
            "aug_scale" => self.aug_scale = v.parse().map_err(|_| bad(key, v))?,
            "aug_contrast" => self.aug_contrast = v.parse().map_err(|_| bad(key, v))?,
            "standardize" => {
                self.standardize = match v {
                    "true" => true,
                    "false" => false,
                    _ => return Err(Error::Config(format!("standardize: '{v}' (true | false)"))),
                }
            }
            "train_dir" => self.train_dir = v.to_string(),
            "val_dir" => self.val_dir = v.to_string(),
            "synth_count" => self.synth_count = v.parse().map_err(|_| bad(key, v))?,
            "synth_height" => self.synth_height = v.parse().map_err(|_| bad(key, v))?,
            "synth_width" => self.synth_width = v.parse().map_err(|_| bad(key, v))?,
            "scales" => self.scales = parse_list(v, key)?,
            "ablate_epochs" => self.ablate_epochs = v.parse().map_err(|_| bad(key, v))?,
            "ablate_seeds" => self.ablate_seeds = parse_list(v, key)?,
            "ablate_threshold" => self.ablate_threshold = v.parse().map_err(|_| bad(key, v))?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Fully-resolved echo in canonical key order; `parse` of this text
    /// reproduces the config exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        kv("stem_channels", self.stem_channels.to_string());
        kv("stage_blocks", fmt_list(&self.stage_blocks));
        kv("stage_channels", fmt_list(&self.stage_channels));
        kv("stage_strides", fmt_list(&self.stage_strides));
        kv("stage_dilations", fmt_list(&self.stage_dilations));
        kv("cardinality", self.cardinality.to_string());
        kv("hidden_channels", self.hidden_channels.to_string());
        kv("lstm_kernel", self.lstm_kernel.to_string());
        kv("lstm_dilation", self.lstm_dilation.to_string());
        kv(
            "psp_bins",
            self.psp_bins
                .iter()
                .map(|(a, b)| format!("{a}x{b}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("psp_reduce", self.psp_reduce.to_string());
        kv("fusion", self.fusion.name().to_string());
        kv("num_classes", self.num_classes.to_string());
        kv("fcn_hidden", self.fcn_hidden.to_string());
        kv("seed", self.seed.to_string());
        kv("lr", self.lr.to_string());
        kv("lr_power", self.lr_power.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("steps", self.steps.to_string());
        kv("batch", self.batch.to_string());
        kv(
            "loss",
            match self.loss {
                LossKind::CrossEntropy => "ce".to_string(),
                LossKind::CrossEntropyLovasz => "ce+lovasz".to_string(),
            },
        );
        kv("lovasz_weight", self.lovasz_weight.to_string());
        kv("lovasz_warmup", self.lovasz_warmup.to_string());
        kv("val_interval", self.val_interval.to_string());
        kv("snapshot_step", self.snapshot_step.to_string());
        kv(
            "checkpoint_criterion",
            match self.checkpoint_criterion {
                CheckpointCriterion::MinCrossEntropy => "min_ce".to_string(),
                CheckpointCriterion::MaxMeanIou => "max_miou".to_string(),
            },
        );
        kv("aug_flip", self.aug_flip.to_string());
        kv("aug_scale", self.aug_scale.to_string());
        kv("aug_contrast", self.aug_contrast.to_string());
        kv("standardize", self.standardize.to_string());
        kv("train_dir", self.train_dir.clone());
        kv("val_dir", self.val_dir.clone());
        kv("synth_count", self.synth_count.to_string());
        kv("synth_height", self.synth_height.to_string());
        kv("synth_width", self.synth_width.to_string());
        kv("scales", fmt_list(&self.scales));
        kv("ablate_epochs", self.ablate_epochs.to_string());
        kv("ablate_seeds", fmt_list(&self.ablate_seeds));
        kv("ablate_threshold", self.ablate_threshold.to_string());
        s
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let n = 4;
        if self.stage_blocks.len() != n
            || self.stage_channels.len() != n
            || self.stage_strides.len() != n
            || self.stage_dilations.len() != n
        {
            return Err(Error::Config("stage lists must have exactly four entries".into()));
        }
        let stages = (0..n)
            .map(|i| StageConfig {
                blocks: self.stage_blocks[i],
                channels: self.stage_channels[i],
                cardinality: self.cardinality,
                stride: self.stage_strides[i],
                dilation: self.stage_dilations[i],
            })
            .collect();
        let cfg = ModelConfig {
            backbone: BackboneConfig { stem_channels: self.stem_channels, stages },
            hidden_channels: self.hidden_channels,
            lstm_kernel: self.lstm_kernel,
            lstm_dilation: self.lstm_dilation,
            psp_bins: self.psp_bins.clone(),
            psp_reduce: self.psp_reduce,
            fusion: self.fusion,
            num_classes: self.num_classes,
            fcn_hidden: self.fcn_hidden,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            flip_prob: self.aug_flip,
            scale_prob: self.aug_scale,
            contrast_prob: self.aug_contrast,
            ..AugmentConfig::default()
        }
    }
}
