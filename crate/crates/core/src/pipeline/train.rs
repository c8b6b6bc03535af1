//! Supervised pretraining, contrastive adaptation, fine-tuning with early
//! stopping, and self-training.

use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::selection::{checkpoint_steps, select_checkpoint, window_start, CheckpointRecord};
use crate::augment::{AugmentPolicy, CropParams, Image};
use crate::autodiff::{Graph, Tensor};
use crate::contrastive::{build_pair_batch, nt_xent_loss, pretrain_step, ContrastiveConfig, PairBatch};
use crate::data::{subsample_fraction, Dataset, Record};
use crate::error::{Error, Result};
use crate::models::{
    stack_images, ClassificationHead, Encoder, EncoderConfig, HeadInit, Model, ProjectionHead, Provenance,
};
use crate::optim::{OptimConfig, OptimizerState, Schedule, ScheduleKind};
use crate::params::ParamSet;
use crate::seed::{label_key, mix, rng_for};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: u64,
    pub loss: f64,
}

fn crop_flip() -> AugmentPolicy {
    AugmentPolicy {
        crop: Some(CropParams { area_range: [0.5, 1.0], ..Default::default() }),
        ..Default::default()
    }
}

fn schedule(kind: ScheduleKind, base_lr: f64, max_steps: u64) -> Schedule {
    match kind {
        ScheduleKind::Constant => Schedule::constant(base_lr, max_steps),
        ScheduleKind::LinearDecay => Schedule::linear(base_lr, max_steps),
        ScheduleKind::ExponentialStaircase => Schedule::exponential(base_lr, 0.5, (max_steps / 3).max(1), max_steps),
    }
}

fn diverged(step: u64, e: Error) -> Error {
    match e {
        Error::NumericOverflow { .. } => Error::Divergence { step: step as usize, loss: f64::NAN },
        other => other,
    }
}

fn check_loss(step: u64, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { step: step as usize, loss })
    }
}

/// Logits, accuracy and mean cross-entropy of `model` on `records`.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub logits: Tensor,
    pub labels: Vec<usize>,
    pub accuracy: f64,
    pub loss: f64,
}

const EVAL_CHUNK: usize = 128;

pub fn evaluate(model: &Model, records: &[Record]) -> Result<Evaluation> {
    if records.is_empty() {
        return Err(Error::Empty("evaluation set is empty".into()));
    }
    let classes = model.head.classes;
    let mut data = Vec::with_capacity(records.len() * classes);
    for chunk in records.chunks(EVAL_CHUNK) {
        let views: Vec<Vec<Image>> = chunk.iter().map(|r| r.views.clone()).collect();
        data.extend_from_slice(model.classify(&views)?.data());
    }
    let logits = Tensor::new(vec![records.len(), classes], data)?;
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let accuracy = stats::accuracy(&logits, &labels)?;
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[y];
    }
    Ok(Evaluation { logits, labels, accuracy, loss: loss / records.len() as f64 })
}

/// Row-wise softmax of the model's logits.
pub fn soft_labels(model: &Model, records: &[Record]) -> Result<Vec<Vec<f64>>> {
    let eval = evaluate(model, records)?;
    Ok((0..records.len())
        .map(|i| {
            let row = eval.logits.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect()
        })
        .collect())
}

/// One training example: a record and its target distribution.
#[derive(Debug, Clone)]
struct Example<'a> {
    record: &'a Record,
    target: Target,
}

#[derive(Debug, Clone)]
enum Target {
    Hard(usize),
    Soft(Vec<f64>),
}

struct LoopSpec<'a> {
    steps: u64,
    batch_size: usize,
    schedule: Schedule,
    optimizer: OptimConfig,
    augment: &'a AugmentPolicy,
    linear_probe: bool,
    eval_every: u64,
    patience: u64,
    log_every: u64,
}

struct LoopOutcome {
    history: Vec<LossPoint>,
    evaluations: Vec<(u64, f64)>,
    best: Option<(u64, f64)>,
}

/// Score used for early stopping: accuracy, then lower loss.
fn better(a: &Evaluation, b: Option<&(f64, f64)>) -> bool {
    match b {
        None => true,
        Some(&(acc, loss)) => a.accuracy > acc || (a.accuracy == acc && a.loss < loss),
    }
}

/// Mini-batch training with cross-entropy on soft targets. With `val`,
/// evaluates at step 0, every `eval_every` steps and at the end, and leaves
/// `model` at the best evaluation.
fn train_loop(model: &mut Model, examples: &[Example], val: Option<&[Record]>, spec: &LoopSpec, seed: u64) -> Result<LoopOutcome> {
    if examples.is_empty() {
        return Err(Error::Empty("no training examples".into()));
    }
    spec.optimizer.validate()?;
    spec.schedule.validate()?;
    let classes = model.head.classes;
    let mut enc_opt = OptimizerState::new(spec.optimizer.clone(), &model.encoder.params);
    let mut head_opt = OptimizerState::new(spec.optimizer.clone(), &model.head.params);
    let mut history = Vec::new();
    let mut evaluations = Vec::new();
    let mut best: Option<(u64, (f64, f64), ParamSet, ParamSet)> = None;
    let mut stale = 0;
    let batch = spec.batch_size.min(examples.len()).max(1);

    let mut evaluate_at = |step: u64, model: &Model, best: &mut Option<(u64, (f64, f64), ParamSet, ParamSet)>| -> Result<bool> {
        let Some(val) = val else { return Ok(false) };
        let e = evaluate(model, val)?;
        evaluations.push((step, e.accuracy));
        if better(&e, best.as_ref().map(|b| &b.1)) {
            *best = Some((step, (e.accuracy, e.loss), model.encoder.params.clone(), model.head.params.clone()));
            Ok(true)
        } else {
            Ok(false)
        }
    };

    evaluate_at(0, model, &mut best)?;
    for step in 0..spec.steps {
        let mut rng = rng_for(&[seed, label_key("batch"), step]);
        let picked = index::sample(&mut rng, examples.len(), batch).into_vec();
        let mut views = Vec::with_capacity(batch);
        let mut targets = vec![0.0; batch * classes];
        for (row, &i) in picked.iter().enumerate() {
            let ex = &examples[i];
            let mut arng = rng_for(&[seed, ex.record.id, step]);
            let aug = ex.record.views.iter().map(|v| spec.augment.apply(v, &mut arng)).collect::<Result<Vec<_>>>()?;
            views.push(aug);
            match &ex.target {
                Target::Hard(y) => targets[row * classes + y] = 1.0,
                Target::Soft(p) => targets[row * classes..(row + 1) * classes].copy_from_slice(p),
            }
        }
        let mut g = Graph::new();
        let eb = model.encoder.params.bind(&mut g, !spec.linear_probe);
        let hb = model.head.params.bind(&mut g, true);
        let logits = model.forward(&mut g, &eb, &hb, &views).map_err(|e| diverged(step, e))?;
        let loss_var = g
            .softmax_cross_entropy(logits, Tensor::new(vec![batch, classes], targets)?)
            .map_err(|e| diverged(step, e))?;
        let loss = g.value(loss_var).item();
        check_loss(step, loss)?;
        if spec.log_every > 0 && step % spec.log_every == 0 {
            history.push(LossPoint { step, loss });
        }
        let grads = g.backward(loss_var)?;
        let lr = spec.schedule.value(step)?;
        if !spec.linear_probe {
            let eg = eb.collect(&grads, &model.encoder.params);
            enc_opt.step(&mut model.encoder.params, &eg, lr)?;
        }
        let hg = hb.collect(&grads, &model.head.params);
        head_opt.step(&mut model.head.params, &hg, lr)?;

        let done = step + 1;
        if val.is_some() && (done % spec.eval_every.max(1) == 0 || done == spec.steps) {
            if evaluate_at(done, model, &mut best)? {
                stale = 0;
            } else {
                stale += 1;
                if spec.patience > 0 && stale >= spec.patience {
                    break;
                }
            }
        }
    }
    let best = match best {
        Some((step, (acc, _), enc, head)) => {
            model.encoder.params = enc;
            model.head.params = head;
            Some((step, acc))
        }
        None => None,
    };
    Ok(LoopOutcome { history, evaluations, best })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupervisedConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub schedule: ScheduleKind,
    pub optimizer: OptimConfig,
    pub augment: AugmentPolicy,
    pub log_every: u64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        SupervisedConfig {
            steps: 600,
            batch_size: 32,
            learning_rate: 3e-3,
            schedule: ScheduleKind::LinearDecay,
            optimizer: OptimConfig::adam(0.0),
            augment: crop_flip(),
            log_every: 25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SupervisedOutcome {
    pub encoder: Encoder,
    pub history: Vec<LossPoint>,
    /// Accuracy of the upstream head on the held-out upstream split.
    pub heldout_accuracy: f64,
}

/// Trains a fresh encoder with a linear head on the labeled upstream set.
pub fn supervised_pretrain(
    encoder_cfg: &EncoderConfig,
    upstream: &Dataset,
    cfg: &SupervisedConfig,
    seed: u64,
) -> Result<SupervisedOutcome> {
    if upstream.classes < 2 {
        return Err(Error::Config(format!("upstream set needs >= 2 classes, has {}", upstream.classes)));
    }
    let mut rng = rng_for(&[seed, label_key("encoder-init")]);
    let encoder = Encoder::build(encoder_cfg, &mut rng)?;
    let head = ClassificationHead::build(encoder_cfg.embed_dim, upstream.classes, None, HeadInit::Random, &mut rng)?;
    let mut model = Model::new(encoder, head)?;
    model.encoder.transition(Provenance::Supervised)?;
    let examples: Vec<Example> =
        upstream.train.iter().map(|r| Example { record: r, target: Target::Hard(r.label) }).collect();
    let spec = LoopSpec {
        steps: cfg.steps,
        batch_size: cfg.batch_size,
        schedule: schedule(cfg.schedule, cfg.learning_rate, cfg.steps),
        optimizer: cfg.optimizer.clone(),
        augment: &cfg.augment,
        linear_probe: false,
        eval_every: 0,
        patience: 0,
        log_every: cfg.log_every,
    };
    let out = train_loop(&mut model, &examples, None, &spec, mix(&[seed, label_key("supervised")]))?;
    let heldout = if upstream.test.is_empty() { f64::NAN } else { evaluate(&model, &upstream.test)?.accuracy };
    Ok(SupervisedOutcome { encoder: model.encoder, history: out.history, heldout_accuracy: heldout })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastiveRunConfig {
    pub loss: ContrastiveConfig,
    /// Total steps `M`.
    pub steps: u64,
    pub checkpoint_every: u64,
    pub learning_rate: f64,
    pub schedule: ScheduleKind,
    pub optimizer: OptimConfig,
    pub augment: AugmentPolicy,
    pub projection_hidden: usize,
    pub projection_dim: usize,
}

impl Default for ContrastiveRunConfig {
    fn default() -> Self {
        ContrastiveRunConfig {
            loss: ContrastiveConfig::default(),
            steps: 400,
            checkpoint_every: 50,
            learning_rate: 0.3,
            schedule: ScheduleKind::LinearDecay,
            optimizer: OptimConfig::lars(1e-6),
            augment: AugmentPolicy::natural(),
            projection_hidden: 64,
            projection_dim: 32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContrastiveOutcome {
    pub checkpoints: Vec<CheckpointRecord>,
    pub selected: CheckpointRecord,
    pub encoder: Encoder,
    pub history: Vec<LossPoint>,
}

fn contrastive_loss(encoder: &Encoder, head: &ProjectionHead, batch: &PairBatch, temperature: f64) -> Result<f64> {
    let mut g = Graph::new();
    let eb = encoder.params.bind(&mut g, false);
    let hb = head.params.bind(&mut g, false);
    let x = g.constant(stack_images(&batch.views)?);
    let emb = encoder.forward(&mut g, &eb, x)?;
    let z = head.forward(&mut g, &hb, emb)?;
    let out = nt_xent_loss(&mut g, z, &batch.pairing, temperature)?;
    Ok(g.value(out.loss).item())
}

/// Contrastive adaptation of `init` on unlabeled records for `M` steps,
/// checkpointing every `checkpoint_every` steps and at `M`, then selecting
/// the minimum-loss checkpoint in the final window. The loss of a
/// checkpoint at step `s` is the loss of batch `s` under the parameters
/// after `s` updates.
pub fn contrastive_pretrain(
    init: &Encoder,
    unlabeled: &[Record],
    cfg: &ContrastiveRunConfig,
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<ContrastiveOutcome> {
    cfg.loss.validate()?;
    if unlabeled.len() < 2 {
        return Err(Error::Empty(format!("contrastive training needs >= 2 unlabeled records, got {}", unlabeled.len())));
    }
    let steps = checkpoint_steps(cfg.steps, cfg.checkpoint_every)?;
    let start = window_start(cfg.steps);
    let mut encoder = init.clone();
    encoder.transition(Provenance::Contrastive)?;
    let mut rng = rng_for(&[seed, label_key("projection-init")]);
    let mut head =
        ProjectionHead::build(encoder.config.embed_dim, cfg.projection_hidden, cfg.projection_dim, &mut rng)?;
    let mut enc_opt = OptimizerState::new(cfg.optimizer.clone(), &encoder.params);
    let mut head_opt = OptimizerState::new(cfg.optimizer.clone(), &head.params);
    let sched = schedule(cfg.schedule, cfg.learning_rate, cfg.steps);
    sched.validate()?;
    let batch = cfg.loss.batch_size.min(unlabeled.len());
    let batch_at = |step: u64| -> Result<PairBatch> {
        let mut brng = rng_for(&[seed, label_key("contrastive-batch"), step]);
        let picked: Vec<&Record> = index::sample(&mut brng, unlabeled.len(), batch).into_iter().map(|i| &unlabeled[i]).collect();
        build_pair_batch(&picked, &cfg.augment, seed, step)
    };

    let mut checkpoints = Vec::with_capacity(steps.len());
    let mut snapshots: Vec<(u64, ParamSet)> = Vec::new();
    let mut history = Vec::new();
    let mut record = |step: u64, loss: f64, encoder: &Encoder, snapshots: &mut Vec<(u64, ParamSet)>| -> Result<()> {
        checkpoints.push(CheckpointRecord { step, loss, params_hash: encoder.params.content_hash() });
        if step >= start {
            snapshots.push((step, encoder.params.clone()));
        }
        if let Some(dir) = checkpoint_dir {
            encoder.save(&dir.join(format!("contrastive-{step:08}.ckpt")), step)?;
        }
        Ok(())
    };
    let mut next = 0;
    for step in 0..cfg.steps {
        let pb = batch_at(step)?;
        let pre = (steps[next] == step).then(|| encoder.clone());
        let loss = pretrain_step(&mut encoder, &mut head, &pb, &cfg.loss, &mut enc_opt, &mut head_opt, sched.value(step)?)
            .map_err(|e| diverged(step, e))?;
        check_loss(step, loss)?;
        history.push(LossPoint { step, loss });
        if let Some(pre) = pre {
            record(step, loss, &pre, &mut snapshots)?;
            next += 1;
        }
    }
    let final_loss = contrastive_loss(&encoder, &head, &batch_at(cfg.steps)?, cfg.loss.temperature)?;
    check_loss(cfg.steps, final_loss)?;
    record(cfg.steps, final_loss, &encoder, &mut snapshots)?;
    let selected = select_checkpoint(&checkpoints, cfg.steps)?.clone();
    let params = snapshots.into_iter().find(|(s, _)| *s == selected.step).map(|(_, p)| p).expect("window snapshot");
    encoder.params = params;
    Ok(ContrastiveOutcome { checkpoints, selected, encoder, history })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadScenario {
    /// Pretrained encoder with a new random head.
    PretrainedRandomHead,
    /// In-distribution fine-tuned model, head kept.
    FinetunedKeepHead,
    /// In-distribution fine-tuned encoder with a new random head.
    FinetunedRandomHead,
}

impl HeadScenario {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadScenario::PretrainedRandomHead => "pretrained_random_head",
            HeadScenario::FinetunedKeepHead => "finetuned_keep_head",
            HeadScenario::FinetunedRandomHead => "finetuned_random_head",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub max_steps: u64,
    pub batch_size: usize,
    pub eval_every: u64,
    /// Evaluations without improvement before stopping; 0 disables.
    pub patience: u64,
    pub schedule: ScheduleKind,
    pub optimizer: OptimConfig,
    pub augment: AugmentPolicy,
    /// Train the head only.
    pub linear_probe: bool,
    /// Attention width for multi-view records; `None` for single views.
    pub attention: Option<usize>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            max_steps: 300,
            batch_size: 32,
            eval_every: 25,
            patience: 0,
            schedule: ScheduleKind::Constant,
            optimizer: OptimConfig::adam(0.0),
            augment: crop_flip(),
            linear_probe: false,
            attention: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub weight_decay: f64,
}

/// The model a fine-tune starts from. The `Finetuned*` scenarios need the
/// in-distribution model.
pub fn initial_model(
    scenario: HeadScenario,
    pretrained: &Encoder,
    id_model: Option<&Model>,
    classes: usize,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<Model> {
    let mut rng = rng_for(&[seed, label_key("head-init")]);
    let fresh_head = |rng: &mut crate::seed::Rng, dim: usize| {
        ClassificationHead::build(dim, classes, cfg.attention, HeadInit::Random, rng)
    };
    match scenario {
        HeadScenario::PretrainedRandomHead => {
            let head = fresh_head(&mut rng, pretrained.config.embed_dim)?;
            Model::new(pretrained.clone(), head)
        }
        HeadScenario::FinetunedKeepHead | HeadScenario::FinetunedRandomHead => {
            let m = id_model.ok_or_else(|| Error::Config(format!("{} needs a fine-tuned model", scenario.as_str())))?;
            if m.encoder.provenance != Provenance::FineTuned {
                return Err(Error::Provenance(format!(
                    "{} expects a fine-tuned model, got {}",
                    scenario.as_str(),
                    m.encoder.provenance.as_str()
                )));
            }
            if scenario == HeadScenario::FinetunedKeepHead {
                if m.head.classes != classes {
                    return Err(Error::Config(format!("kept head has {} classes, task has {classes}", m.head.classes)));
                }
                Ok(m.clone())
            } else {
                let head = fresh_head(&mut rng, m.encoder.config.embed_dim)?;
                Model::new(m.encoder.clone(), head)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub model: Model,
    /// Best validation accuracy; the returned model reproduces it.
    pub best_val_metric: f64,
    pub best_step: u64,
    /// `(step, validation accuracy)` at every evaluation.
    pub evaluations: Vec<(u64, f64)>,
    pub history: Vec<LossPoint>,
    pub train_size: usize,
}

fn finetune_examples(
    mut model: Model,
    examples: &[Example],
    val: &[Record],
    point: GridPoint,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<FinetuneOutcome> {
    if val.is_empty() {
        return Err(Error::Empty("fine-tuning needs a validation split".into()));
    }
    model.encoder.transition(Provenance::FineTuned)?;
    let mut optimizer = cfg.optimizer.clone();
    optimizer.weight_decay = point.weight_decay;
    let spec = LoopSpec {
        steps: cfg.max_steps,
        batch_size: cfg.batch_size,
        schedule: schedule(cfg.schedule, point.learning_rate, cfg.max_steps),
        optimizer,
        augment: &cfg.augment,
        linear_probe: cfg.linear_probe,
        eval_every: cfg.eval_every,
        patience: cfg.patience,
        log_every: cfg.eval_every.max(1),
    };
    let out = train_loop(&mut model, examples, Some(val), &spec, mix(&[seed, label_key("finetune")]))?;
    let (best_step, best_val_metric) = out.best.expect("validation evaluated");
    Ok(FinetuneOutcome {
        model,
        best_val_metric,
        best_step,
        evaluations: out.evaluations,
        history: out.history,
        train_size: examples.len(),
    })
}

/// End-to-end fine-tuning of `init` on a stratified `fraction` of `train`
/// with early stopping on `val` accuracy.
pub fn finetune(
    init: Model,
    train: &[Record],
    val: &[Record],
    fraction: f64,
    point: GridPoint,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<FinetuneOutcome> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fine-tune fraction must be in (0, 1], got {fraction}")));
    }
    let picked = subsample_fraction(train, fraction, seed)?;
    if picked.is_empty() {
        return Err(Error::Empty("fine-tune training subset is empty".into()));
    }
    let examples: Vec<Example> =
        picked.iter().map(|&i| Example { record: &train[i], target: Target::Hard(train[i].label) }).collect();
    finetune_examples(init, &examples, val, point, cfg, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub index: usize,
    pub point: GridPoint,
    /// `None` when the run failed.
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: GridPoint,
    pub best_index: usize,
    /// Sorted by score, highest first; equal scores keep grid order and
    /// failed points come last.
    pub leaderboard: Vec<GridEntry>,
}

/// Cartesian product, learning rate major.
pub fn grid_points(learning_rates: &[f64], weight_decays: &[f64]) -> Vec<GridPoint> {
    learning_rates
        .iter()
        .flat_map(|&learning_rate| weight_decays.iter().map(move |&weight_decay| GridPoint { learning_rate, weight_decay }))
        .collect()
}

/// Scores every point (in parallel) and picks the maximum.
pub fn grid_search<F>(points: &[GridPoint], score: F) -> Result<GridResult>
where
    F: Fn(usize, &GridPoint) -> Result<f64> + Sync,
{
    use rayon::prelude::*;
    if points.is_empty() {
        return Err(Error::Empty("hyper-parameter grid is empty".into()));
    }
    let mut leaderboard: Vec<GridEntry> = points
        .par_iter()
        .enumerate()
        .map(|(index, p)| match score(index, p) {
            Ok(s) if !s.is_nan() => GridEntry { index, point: *p, score: Some(s), error: None },
            Ok(_) => GridEntry { index, point: *p, score: None, error: Some("NaN score".into()) },
            Err(e) => GridEntry { index, point: *p, score: None, error: Some(e.to_string()) },
        })
        .collect();
    leaderboard.sort_by(|a, b| match (a.score, b.score) {
        (Some(x), Some(y)) => y.total_cmp(&x).then(a.index.cmp(&b.index)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.index.cmp(&b.index),
    });
    let top = &leaderboard[0];
    if top.score.is_none() {
        return Err(Error::Config(format!(
            "every grid point failed; first error: {}",
            top.error.as_deref().unwrap_or("unknown")
        )));
    }
    Ok(GridResult { best: top.point, best_index: top.index, leaderboard })
}

#[derive(Debug, Clone)]
pub struct SelfTrainOutcome {
    pub teacher: FinetuneOutcome,
    pub student: FinetuneOutcome,
    pub pseudo_labels: Vec<Vec<f64>>,
}

/// Teacher fine-tuned on the labeled set labels `unlabeled` with its
/// predicted probabilities; the student trains from `pretrained` on the
/// hard-labeled set plus the soft-labeled records.
pub fn self_train(
    pretrained: &Encoder,
    labeled: &Dataset,
    unlabeled: &[Record],
    teacher_point: GridPoint,
    student_point: GridPoint,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<SelfTrainOutcome> {
    let teacher_seed = mix(&[seed, label_key("teacher")]);
    let init = initial_model(HeadScenario::PretrainedRandomHead, pretrained, None, labeled.classes, cfg, teacher_seed)?;
    let teacher = finetune(init, &labeled.train, &labeled.val, 1.0, teacher_point, cfg, teacher_seed)?;
    let pseudo_labels = if unlabeled.is_empty() { Vec::new() } else { soft_labels(&teacher.model, unlabeled)? };
    let mut examples: Vec<Example> =
        labeled.train.iter().map(|r| Example { record: r, target: Target::Hard(r.label) }).collect();
    examples.extend(unlabeled.iter().zip(&pseudo_labels).map(|(r, p)| Example { record: r, target: Target::Soft(p.clone()) }));
    let init = initial_model(HeadScenario::PretrainedRandomHead, pretrained, None, labeled.classes, cfg, seed)?;
    let student = finetune_examples(init, &examples, &labeled.val, student_point, cfg, seed)?;
    Ok(SelfTrainOutcome { teacher, student, pseudo_labels })
}
