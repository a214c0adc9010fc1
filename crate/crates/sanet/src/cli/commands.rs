//! Command drivers: training loop, evaluation, inference, the ablation
//! protocol, and the verification reports. Everything is deterministic for
//! a given (config, seed): data order, augmentation and initialization all
//! derive from the run seed through stateless forks.

use std::fs;
use std::path::Path;

use crate::cli::checkpoint::{load_checkpoint, save_checkpoint, CheckpointEntry};
use crate::cli::config::{CheckpointCriterion, LossKind, RunConfig};
use crate::cli::data::{
    channel_stats, generate_synthetic, labels_to_color, load_dataset, standardize_image, Sample,
};
use crate::cli::pnm::{atomic_write, read_ppm, write_pgm, write_ppm};
use crate::error::{Error, Result};
use crate::layers::{pull_grads, ParamSet};
use crate::model::{AblationModel, SaNet, Variant};
use crate::tape::{Tape, Var};
use crate::tensor::{Elem, SeededRng, Shape, Tensor, IGNORE_INDEX};
use crate::train::loss::{cross_entropy, cross_entropy_raw, lovasz_softmax};
use crate::train::metrics::{accumulate_confusion, argmax_channels, report_from_confusion, MetricReport};
use crate::train::optim::{poly_lr, AdamW, AdamWParams};
use crate::train::{augment, multi_scale_infer, Labels};
use crate::verify::model_cost::flops_count;
use crate::verify::suite::run_gradcheck_suite;
use crate::verify::CostReport;

/// Auxiliary-classifier loss weight in the ablation protocol.
pub const AUX_LOSS_WEIGHT: Elem = 0.4;

/// A model the shared fit loop can train.
pub trait TrainModel: ParamSet {
    fn batch_loss(
        &self,
        tape: &mut Tape,
        images: &Tensor,
        labels: &Labels,
        step: u64,
        cfg: &RunConfig,
    ) -> Result<Var>;

    fn infer_logits(&self, image: &Tensor) -> Result<Tensor>;
}

impl TrainModel for SaNet {
    fn batch_loss(
        &self,
        tape: &mut Tape,
        images: &Tensor,
        labels: &Labels,
        step: u64,
        cfg: &RunConfig,
    ) -> Result<Var> {
        let logits = self.forward(tape, images)?;
        let ce = cross_entropy(tape, logits, labels, IGNORE_INDEX)?;
        match cfg.loss {
            LossKind::CrossEntropy => Ok(ce.var),
            LossKind::CrossEntropyLovasz if step >= cfg.lovasz_warmup => {
                let probs = tape.softmax_channels(logits)?;
                let lv = lovasz_softmax(tape, probs, labels, IGNORE_INDEX)?;
                let scaled = tape.scale(lv.var, cfg.lovasz_weight);
                tape.add(ce.var, scaled)
            }
            LossKind::CrossEntropyLovasz => Ok(ce.var),
        }
    }

    fn infer_logits(&self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let v = self.forward(&mut tape, image)?;
        Ok(tape.value(v).clone())
    }
}

impl TrainModel for AblationModel {
    fn batch_loss(
        &self,
        tape: &mut Tape,
        images: &Tensor,
        labels: &Labels,
        _step: u64,
        _cfg: &RunConfig,
    ) -> Result<Var> {
        let out = self.forward(tape, images)?;
        let ce = cross_entropy(tape, out.logits, labels, IGNORE_INDEX)?;
        match out.aux_logits {
            Some(aux) => {
                let aux_ce = cross_entropy(tape, aux, labels, IGNORE_INDEX)?;
                let scaled = tape.scale(aux_ce.var, AUX_LOSS_WEIGHT);
                tape.add(ce.var, scaled)
            }
            None => Ok(ce.var),
        }
    }

    fn infer_logits(&self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, image)?;
        Ok(tape.value(out.logits).clone())
    }
}

fn stack_images(items: &[&Tensor]) -> Result<Tensor> {
    let first = items[0].shape();
    let mut data = Vec::with_capacity(first.numel() * items.len());
    for t in items {
        if t.shape() != first {
            return Err(Error::Shape("batch images disagree in shape".into()));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(Shape::new(items.len(), first.c, first.h, first.w), data)
}

type ChannelStats = ([Elem; 3], [Elem; 3]);

/// Single-scale evaluation: mean per-sample cross-entropy plus metrics.
fn evaluate<M: TrainModel>(
    model: &M,
    samples: &[Sample],
    num_classes: usize,
    stats: Option<&ChannelStats>,
) -> Result<(Elem, MetricReport)> {
    let mut confusion = vec![0u64; num_classes * num_classes];
    let mut ce_sum: Elem = 0.0;
    for s in samples {
        let mut image = s.image.clone();
        if let Some((mean, std)) = stats {
            standardize_image(&mut image, mean, std);
        }
        let logits = model.infer_logits(&image)?;
        let (ce, _, _) = cross_entropy_raw(&logits, &s.labels, IGNORE_INDEX)?;
        ce_sum += ce;
        let pred = argmax_channels(&logits);
        accumulate_confusion(&mut confusion, &pred, &s.labels, num_classes, IGNORE_INDEX)?;
    }
    Ok((
        ce_sum / samples.len().max(1) as Elem,
        report_from_confusion(&confusion, num_classes),
    ))
}

#[derive(Clone, Debug)]
pub struct CurveRow {
    pub step: u64,
    pub lr: Elem,
    pub train_loss: Elem,
    pub val_ce: Elem,
    pub val_pixel_acc: Elem,
    pub val_mean_iou: Elem,
}

pub struct FitReport {
    pub curve: Vec<CurveRow>,
    pub final_val: Option<MetricReport>,
}

fn curve_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("step,lr,train_loss,val_ce,val_pixel_acc,val_mean_iou\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.step, r.lr, r.train_loss, r.val_ce, r.val_pixel_acc, r.val_mean_iou
        ));
    }
    out
}

fn model_entries<M: ParamSet>(
    model: &M,
    opt: &AdamW,
    train_step: u64,
    stats: Option<&ChannelStats>,
) -> Vec<CheckpointEntry> {
    let mut entries = Vec::new();
    model.visit(&mut |name, t| {
        entries.push(CheckpointEntry {
            name: format!("param.{name}"),
            shape: t.shape(),
            data: t.data().iter().map(|&v| v as f64).collect(),
        });
    });
    for (name, m, v) in opt.export_slots(model) {
        let shape = Shape::new(1, 1, 1, m.len());
        entries.push(CheckpointEntry {
            name: format!("adamw.m.{name}"),
            shape,
            data: m.iter().map(|&x| x as f64).collect(),
        });
        entries.push(CheckpointEntry {
            name: format!("adamw.v.{name}"),
            shape,
            data: v.iter().map(|&x| x as f64).collect(),
        });
    }
    entries.push(CheckpointEntry::scalar("meta.adamw_step", opt.step as f64));
    entries.push(CheckpointEntry::scalar("meta.train_step", train_step as f64));
    if let Some((mean, std)) = stats {
        entries.push(CheckpointEntry {
            name: "meta.std.mean".into(),
            shape: Shape::new(1, 3, 1, 1),
            data: mean.iter().map(|&v| v as f64).collect(),
        });
        entries.push(CheckpointEntry {
            name: "meta.std.std".into(),
            shape: Shape::new(1, 3, 1, 1),
            data: std.iter().map(|&v| v as f64).collect(),
        });
    }
    entries
}

fn restore_model<M: ParamSet>(
    model: &mut M,
    opt: &mut AdamW,
    entries: &[CheckpointEntry],
) -> Result<u64> {
    let mut train_step = 0u64;
    let by_name: std::collections::HashMap<&str, &CheckpointEntry> =
        entries.iter().map(|e| (e.name.as_str(), e)).collect();
    let mut missing = Vec::new();
    model.visit_mut(&mut |name, t| {
        match by_name.get(format!("param.{name}").as_str()) {
            Some(e) if e.shape == t.shape() => {
                for (dst, src) in t.data_mut().iter_mut().zip(&e.data) {
                    *dst = *src as Elem;
                }
            }
            _ => missing.push(name.to_string()),
        }
        let len = t.data().len();
        if let (Some(me), Some(ve)) = (
            by_name.get(format!("adamw.m.{name}").as_str()),
            by_name.get(format!("adamw.v.{name}").as_str()),
        ) {
            if me.data.len() == len && ve.data.len() == len {
                opt.restore_slot(
                    name,
                    me.data.iter().map(|&x| x as Elem).collect(),
                    ve.data.iter().map(|&x| x as Elem).collect(),
                );
            }
        }
    });
    if !missing.is_empty() {
        return Err(Error::Load(format!(
            "checkpoint is missing or mismatches parameters: {}",
            missing.join(", ")
        )));
    }
    if let Some(e) = by_name.get("meta.adamw_step") {
        opt.step = e.data[0] as u64;
    }
    if let Some(e) = by_name.get("meta.train_step") {
        train_step = e.data[0] as u64;
    }
    Ok(train_step)
}

fn checkpoint_stats(entries: &[CheckpointEntry]) -> Option<ChannelStats> {
    let mean = entries.iter().find(|e| e.name == "meta.std.mean")?;
    let std = entries.iter().find(|e| e.name == "meta.std.std")?;
    let mut m = [0.0; 3];
    let mut s = [1.0; 3];
    for c in 0..3 {
        m[c] = mean.data[c] as Elem;
        s[c] = std.data[c] as Elem;
    }
    Some((m, s))
}

struct FitPlan<'a> {
    cfg: &'a RunConfig,
    start_step: u64,
    out: Option<&'a Path>,
    config_echo: String,
    stats: Option<ChannelStats>,
}

/// The training loop shared by `train` and `ablate`. Sample order shuffles
/// per epoch, augmentation draws from per-sample forked streams, and the
/// learning rate follows the polynomial schedule over the full budget.
fn fit<M: TrainModel>(
    model: &mut M,
    train: &[Sample],
    val: &[Sample],
    opt: &mut AdamW,
    plan: &FitPlan,
) -> Result<FitReport> {
    let cfg = plan.cfg;
    let root = SeededRng::new(cfg.seed);
    let n = train.len();
    let mut curve = Vec::new();
    let mut best: Option<Elem> = None;
    let mut final_val = None;
    let mut shuffled: (u64, Vec<usize>) = (u64::MAX, Vec::new());

    for step in plan.start_step..cfg.steps {
        let gsi0 = step * cfg.batch as u64;
        let mut images = Vec::with_capacity(cfg.batch);
        let mut labels = Vec::with_capacity(cfg.batch);
        for j in 0..cfg.batch as u64 {
            let gsi = gsi0 + j;
            let epoch = gsi / n as u64;
            if shuffled.0 != epoch {
                let mut order: Vec<usize> = (0..n).collect();
                root.fork("shuffle", epoch).shuffle(&mut order);
                shuffled = (epoch, order);
            }
            let idx = shuffled.1[(gsi % n as u64) as usize];
            let mut aug_rng = root.fork("augment", gsi);
            let (mut img, lab) = augment(
                &train[idx].image,
                &train[idx].labels,
                &cfg.augment_config(),
                &mut aug_rng,
            )?;
            if let Some((mean, std)) = &plan.stats {
                standardize_image(&mut img, mean, std);
            }
            images.push(img);
            labels.push(lab);
        }
        let image_refs: Vec<&Tensor> = images.iter().collect();
        let batch_images = stack_images(&image_refs)?;
        let label_refs: Vec<&Labels> = labels.iter().collect();
        let batch_labels = Labels::stack(&label_refs)?;

        let mut tape = Tape::new();
        let loss = model.batch_loss(&mut tape, &batch_images, &batch_labels, step, cfg)?;
        let loss_value = tape.scalar(loss);
        if !loss_value.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss at step {step} (first sample index {gsi0}, seed {})",
                cfg.seed
            )));
        }
        let seed_grad = Tensor::alloc(Shape::new(1, 1, 1, 1), 1.0)?;
        tape.backward(loss, &seed_grad)?;
        pull_grads(model, &tape);
        let lr = poly_lr(step, cfg.steps, cfg.lr, cfg.lr_power)?;
        opt.step_params(model, lr);

        let done = step + 1;
        if cfg.snapshot_step > 0 && done == cfg.snapshot_step {
            if let Some(out) = plan.out {
                let entries = model_entries(model, opt, done, plan.stats.as_ref());
                save_checkpoint(&out.join("snapshot.bin"), &plan.config_echo, &entries)?;
            }
        }
        if done % cfg.val_interval == 0 || done == cfg.steps {
            let (val_ce, report) = evaluate(model, val, cfg.num_classes, plan.stats.as_ref())?;
            curve.push(CurveRow {
                step: done,
                lr,
                train_loss: loss_value,
                val_ce,
                val_pixel_acc: report.pixel_accuracy,
                val_mean_iou: report.mean_iou,
            });
            let score = match cfg.checkpoint_criterion {
                CheckpointCriterion::MinCrossEntropy => -val_ce,
                CheckpointCriterion::MaxMeanIou => report.mean_iou,
            };
            if best.map_or(true, |b| score > b) {
                best = Some(score);
                if let Some(out) = plan.out {
                    let entries = model_entries(model, opt, done, plan.stats.as_ref());
                    save_checkpoint(&out.join("checkpoint.bin"), &plan.config_echo, &entries)?;
                }
            }
            final_val = Some(report);
        }
    }
    Ok(FitReport { curve, final_val })
}

pub struct TrainOutcome {
    pub curve: Vec<CurveRow>,
    pub final_val: Option<MetricReport>,
    pub final_train_accuracy: Elem,
}

pub fn cmd_train(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    let model_cfg = cfg.model_config()?;
    fs::create_dir_all(out)?;
    let train = load_dataset(Path::new(&cfg.train_dir), cfg.num_classes)?;
    let val = if cfg.val_dir.is_empty() {
        load_dataset(Path::new(&cfg.train_dir), cfg.num_classes)?
    } else {
        load_dataset(Path::new(&cfg.val_dir), cfg.num_classes)?
    };
    let stats = cfg.standardize.then(|| channel_stats(&train));

    let root = SeededRng::new(cfg.seed);
    let mut model = SaNet::new(model_cfg, &mut root.fork("init", 0))?;
    let mut opt = AdamW::new(AdamWParams { weight_decay: cfg.weight_decay, ..Default::default() });
    let mut start_step = 0;
    if let Some(ckpt) = resume {
        let (ckpt_cfg_text, entries) = load_checkpoint(ckpt)?;
        let ckpt_cfg = RunConfig::parse(&ckpt_cfg_text)?;
        if ckpt_cfg.num_classes != cfg.num_classes {
            return Err(Error::Config(format!(
                "checkpoint has {} classes, config asks for {}",
                ckpt_cfg.num_classes, cfg.num_classes
            )));
        }
        start_step = restore_model(&mut model, &mut opt, &entries)?;
    }

    let echo = cfg.to_text();
    atomic_write(&out.join("config.txt"), echo.as_bytes())?;
    let plan = FitPlan { cfg, start_step, out: Some(out), config_echo: echo.clone(), stats };
    let report = fit(&mut model, &train, &val, &mut opt, &plan)?;

    let entries = model_entries(&model, &opt, cfg.steps, plan.stats.as_ref());
    save_checkpoint(&out.join("final.bin"), &echo, &entries)?;
    atomic_write(&out.join("curve.csv"), curve_csv(&report.curve).as_bytes())?;
    if let Some(val_report) = &report.final_val {
        atomic_write(&out.join("metrics.csv"), val_report.csv().as_bytes())?;
    }
    let (_, train_report) = evaluate(&model, &train, cfg.num_classes, plan.stats.as_ref())?;
    Ok(TrainOutcome {
        curve: report.curve,
        final_val: report.final_val,
        final_train_accuracy: train_report.pixel_accuracy,
    })
}

/// Rebuild a model from a checkpoint's embedded config, cross-checking the
/// caller's class count.
fn model_from_checkpoint(
    ckpt: &Path,
    expect_classes: usize,
) -> Result<(SaNet, RunConfig, Option<ChannelStats>)> {
    let (cfg_text, entries) = load_checkpoint(ckpt)?;
    let ckpt_cfg = RunConfig::parse(&cfg_text)?;
    if ckpt_cfg.num_classes != expect_classes {
        return Err(Error::Config(format!(
            "checkpoint has {} classes, config asks for {expect_classes}",
            ckpt_cfg.num_classes
        )));
    }
    let root = SeededRng::new(ckpt_cfg.seed);
    let mut model = SaNet::new(ckpt_cfg.model_config()?, &mut root.fork("init", 0))?;
    let mut opt = AdamW::new(AdamWParams::default());
    restore_model(&mut model, &mut opt, &entries)?;
    let stats = checkpoint_stats(&entries);
    Ok((model, ckpt_cfg, stats))
}

pub fn cmd_eval(cfg: &RunConfig, ckpt: &Path, out: &Path) -> Result<MetricReport> {
    let (model, _, stats) = model_from_checkpoint(ckpt, cfg.num_classes)?;
    fs::create_dir_all(out)?;
    let dir = if cfg.val_dir.is_empty() { &cfg.train_dir } else { &cfg.val_dir };
    let samples = load_dataset(Path::new(dir), cfg.num_classes)?;
    let mut confusion = vec![0u64; cfg.num_classes * cfg.num_classes];
    for s in &samples {
        let mut image = s.image.clone();
        if let Some((mean, std)) = &stats {
            standardize_image(&mut image, mean, std);
        }
        let probs = multi_scale_infer(|img| model.infer_logits(img), &image, &cfg.scales)?;
        let pred = argmax_channels(&probs);
        accumulate_confusion(&mut confusion, &pred, &s.labels, cfg.num_classes, IGNORE_INDEX)?;
    }
    let report = report_from_confusion(&confusion, cfg.num_classes);
    atomic_write(&out.join("metrics.csv"), report.csv().as_bytes())?;
    Ok(report)
}

pub fn cmd_infer(cfg: &RunConfig, ckpt: &Path, image_path: &Path, out: &Path) -> Result<()> {
    let (model, _, stats) = model_from_checkpoint(ckpt, cfg.num_classes)?;
    fs::create_dir_all(out)?;
    let ppm = read_ppm(image_path)?;
    let mut image = crate::cli::data::image_to_tensor(&ppm);
    if let Some((mean, std)) = &stats {
        standardize_image(&mut image, mean, std);
    }
    let probs = multi_scale_infer(|img| model.infer_logits(img), &image, &cfg.scales)?;
    let pred = argmax_channels(&probs);
    let stem = image_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image");
    write_pgm(
        &out.join(format!("{stem}_labels.pgm")),
        &crate::cli::pnm::Pgm { w: pred.w, h: pred.h, gray: pred.data.clone() },
    )?;
    write_ppm(&out.join(format!("{stem}_color.ppm")), &labels_to_color(&pred))?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct AblateRow {
    pub variant: String,
    pub seed: u64,
    pub final_miou: Elem,
    pub epochs_to_threshold: u64,
}

/// Train every variant with identical seeds and budget; report final mean
/// IoU and epochs until 80% of the plain FCN's final accuracy.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<Vec<AblateRow>> {
    let model_cfg = cfg.model_config()?;
    fs::create_dir_all(out)?;
    let train = load_dataset(Path::new(&cfg.train_dir), cfg.num_classes)?;
    let val = if cfg.val_dir.is_empty() {
        load_dataset(Path::new(&cfg.train_dir), cfg.num_classes)?
    } else {
        load_dataset(Path::new(&cfg.val_dir), cfg.num_classes)?
    };
    let steps_per_epoch = (train.len() as u64).div_ceil(cfg.batch as u64);
    let total_steps = steps_per_epoch * cfg.ablate_epochs;

    let mut rows = Vec::new();
    for &seed in &cfg.ablate_seeds {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = seed;
        run_cfg.steps = total_steps;
        run_cfg.val_interval = steps_per_epoch;
        run_cfg.loss = LossKind::CrossEntropy;

        let mut histories: Vec<(String, Vec<CurveRow>)> = Vec::new();
        for variant in Variant::all() {
            let root = SeededRng::new(seed);
            let mut model = AblationModel::new(variant, &model_cfg, &mut root.fork("init", 0))?;
            let mut opt = AdamW::new(AdamWParams {
                weight_decay: cfg.weight_decay,
                ..Default::default()
            });
            let plan = FitPlan {
                cfg: &run_cfg,
                start_step: 0,
                out: None,
                config_echo: String::new(),
                stats: None,
            };
            let report = fit(&mut model, &train, &val, &mut opt, &plan)?;
            histories.push((variant.name(), report.curve));
        }
        // threshold: 80% of the plain FCN's final accuracy for this seed
        let plain = &histories[0];
        debug_assert_eq!(plain.0, "plain-fcn");
        let plain_final_acc = plain.1.last().map(|r| r.val_pixel_acc).unwrap_or(0.0);
        let threshold = cfg.ablate_threshold * plain_final_acc;
        for (name, curve) in &histories {
            let final_miou = curve.last().map(|r| r.val_mean_iou).unwrap_or(0.0);
            let epochs_to_threshold = curve
                .iter()
                .position(|r| r.val_pixel_acc >= threshold)
                .map(|i| i as u64 + 1)
                .unwrap_or(cfg.ablate_epochs + 1);
            rows.push(AblateRow {
                variant: name.clone(),
                seed,
                final_miou,
                epochs_to_threshold,
            });
        }
    }
    let mut csv = String::from("variant,seed,final_miou,epochs_to_threshold\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.variant, r.seed, r.final_miou, r.epochs_to_threshold
        ));
    }
    atomic_write(&out.join("ablate.csv"), csv.as_bytes())?;
    Ok(rows)
}

pub fn cmd_gradcheck(seed: u64, out: Option<&Path>) -> Result<()> {
    let reports = run_gradcheck_suite(seed)?;
    let mut csv = String::from("op,worst_rel_err,tolerance,elements,passed\n");
    for r in &reports {
        println!("{}", r.line());
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.name, r.worst_rel_err, r.tolerance, r.elements, r.passed
        ));
    }
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        atomic_write(&out.join("gradcheck.csv"), csv.as_bytes())?;
    }
    let failures: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.name.as_str())
        .collect();
    if failures.is_empty() {
        println!("gradcheck: all {} checks passed", reports.len());
        Ok(())
    } else {
        Err(Error::Check(format!("gradient checks failed: {}", failures.join(", "))))
    }
}

pub fn cmd_flops(cfg: &RunConfig, out: Option<&Path>) -> Result<CostReport> {
    let model_cfg = cfg.model_config()?;
    let input = Shape::new(1, 3, cfg.synth_height, cfg.synth_width);
    let report = flops_count(&model_cfg, input)?;
    print!("{}", report.table());
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        atomic_write(&out.join("flops.csv"), report.csv().as_bytes())?;
    }
    Ok(report)
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut rng = SeededRng::new(cfg.seed).fork("synth", 0);
    generate_synthetic(
        cfg.synth_count,
        (cfg.synth_height, cfg.synth_width),
        cfg.num_classes,
        &mut rng,
        out,
    )
}
