//! Pretraining, adaptation, fine-tuning and the three-scenario evaluation
//! protocol.

mod selection;
mod train;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use selection::{checkpoint_steps, select_checkpoint, window_start, CheckpointRecord};
pub use train::{
    contrastive_pretrain, evaluate, finetune, grid_points, grid_search, initial_model, self_train, soft_labels,
    supervised_pretrain, ContrastiveOutcome, ContrastiveRunConfig, Evaluation, FinetuneConfig, FinetuneOutcome,
    GridEntry, GridPoint, GridResult, HeadScenario, LossPoint, SelfTrainOutcome, SupervisedConfig, SupervisedOutcome,
};

use crate::data::{fingerprint, Dataset, Record, TaskBundle};
use crate::error::{Error, Result};
use crate::models::{Encoder, EncoderConfig, EncoderPreset, Model, Provenance};
use crate::optim::ValueGrid;
use crate::seed::{label_key, mix, rng_for};
use crate::stats;

/// Interpretation of the checkpoint window recorded in every manifest.
pub const WINDOW_NOTE: &str =
    "checkpoint window read as the final 0.1% of contrastive steps: [ceil(0.999*M), M], minimum loss, earliest step on ties";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Random initialization.
    Random,
    /// Supervised upstream pretraining only (baseline).
    Supervised,
    /// Supervised pretraining followed by contrastive adaptation.
    Remedis,
    /// Supervised pretraining, then a student trained on teacher soft labels
    /// of the unlabeled data.
    SelfTraining,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Random, Strategy::Supervised, Strategy::Remedis, Strategy::SelfTraining];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Supervised => "supervised",
            Strategy::Remedis => "remedis",
            Strategy::SelfTraining => "self_training",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub learning_rates: ValueGrid,
    pub weight_decays: ValueGrid,
}

impl GridSpec {
    pub fn single(learning_rate: f64, weight_decay: f64) -> Self {
        GridSpec {
            learning_rates: ValueGrid::Explicit(vec![learning_rate]),
            weight_decays: ValueGrid::Explicit(vec![weight_decay]),
        }
    }

    pub fn points(&self) -> Result<Vec<GridPoint>> {
        let points = grid_points(&self.learning_rates.values()?, &self.weight_decays.values()?);
        if points.is_empty() {
            return Err(Error::Config("hyper-parameter grid is empty".into()));
        }
        if points.iter().any(|p| !(p.learning_rate > 0.0) || !(p.weight_decay >= 0.0)) {
            return Err(Error::Config("grid learning rates must be > 0 and weight decays >= 0".into()));
        }
        Ok(points)
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            learning_rates: ValueGrid::LogSpaced { n: 2, lo_exp: -3.0, hi_exp: -2.5, include_zero: false },
            weight_decays: ValueGrid::Explicit(vec![0.0]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSpec {
    pub strategies: Vec<Strategy>,
    pub archs: Vec<EncoderPreset>,
    pub supervised: SupervisedConfig,
    pub contrastive: ContrastiveRunConfig,
    pub finetune: FinetuneConfig,
    /// In-distribution fine-tune grid (also the self-training teacher grid).
    pub id_grid: GridSpec,
    /// Out-of-distribution grid, searched once at fraction 1.0.
    pub ood_grid: GridSpec,
    pub student_grid: GridSpec,
    pub ood_scenario: HeadScenario,
    /// Label fractions of the shifted training split; must contain 0 and 1.
    pub fractions: Vec<f64>,
    pub repeats: usize,
    pub top_k: usize,
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        ProtocolSpec {
            strategies: vec![Strategy::Supervised, Strategy::Remedis],
            archs: vec![EncoderPreset::Small],
            supervised: SupervisedConfig::default(),
            contrastive: ContrastiveRunConfig::default(),
            finetune: FinetuneConfig::default(),
            id_grid: GridSpec::default(),
            ood_grid: GridSpec::default(),
            student_grid: GridSpec::default(),
            ood_scenario: HeadScenario::FinetunedKeepHead,
            fractions: vec![0.0, 0.1, 0.2, 0.5, 1.0],
            repeats: 10,
            top_k: 3,
        }
    }
}

impl ProtocolSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.repeats < 2 {
            return bad(format!("repeats must be >= 2 for intervals, got {}", self.repeats));
        }
        if self.strategies.is_empty() || self.archs.is_empty() {
            return bad("at least one strategy and one architecture are required".into());
        }
        let mut seen = self.strategies.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.strategies.len() {
            return bad("strategies must be distinct".into());
        }
        let mut archs: Vec<&str> = self.archs.iter().map(|a| a.as_str()).collect();
        archs.sort();
        archs.dedup();
        if archs.len() != self.archs.len() {
            return bad("architectures must be distinct".into());
        }
        let f = &self.fractions;
        if f.windows(2).any(|w| !(w[0] < w[1])) || f.first() != Some(&0.0) || f.last() != Some(&1.0) {
            return bad(format!("fractions must be strictly increasing from 0 to 1, got {f:?}"));
        }
        if self.top_k < 2 {
            return bad("top_k must be >= 2".into());
        }
        if self.finetune.batch_size == 0 || self.supervised.batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        self.contrastive.loss.validate()?;
        if self.contrastive.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive".into());
        }
        for a in [&self.supervised.augment, &self.contrastive.augment, &self.finetune.augment] {
            a.validate()?;
        }
        self.supervised.optimizer.validate()?;
        self.contrastive.optimizer.validate()?;
        self.finetune.optimizer.validate()?;
        for g in [&self.id_grid, &self.ood_grid, &self.student_grid] {
            g.points()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses every available core.
    pub workers: Option<usize>,
    /// Where contrastive checkpoints are written, if anywhere.
    pub checkpoint_dir: Option<PathBuf>,
}

pub const SCENARIO_ID: &str = "in_distribution";
pub const SCENARIO_ZERO_SHOT: &str = "zero_shot_ood";
pub const SCENARIO_ZERO_SHOT_SECONDARY: &str = "zero_shot_ood_secondary";
pub const SCENARIO_OOD: &str = "ood_finetune";

pub fn scenario_rank(s: &str) -> usize {
    match s {
        SCENARIO_ID => 0,
        SCENARIO_ZERO_SHOT => 1,
        SCENARIO_ZERO_SHOT_SECONDARY => 2,
        SCENARIO_OOD => 3,
        _ => 4,
    }
}

/// One evaluated metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub strategy: String,
    pub arch: String,
    pub scenario: String,
    pub fraction: f64,
    pub repeat: usize,
    pub metric_name: String,
    pub value: f64,
    pub seed: u64,
    pub wall_seconds: f64,
}

impl MetricRow {
    fn order_key(&self) -> (usize, String, usize, u64, usize, String) {
        let strategy = Strategy::parse(&self.strategy).map(|s| s as usize).unwrap_or(usize::MAX);
        (
            strategy,
            self.arch.clone(),
            scenario_rank(&self.scenario),
            self.fraction.to_bits(),
            self.repeat,
            self.metric_name.clone(),
        )
    }
}

/// Deterministic row order: strategy, arch, scenario, fraction, repeat,
/// metric.
pub fn sort_rows(rows: &mut [MetricRow]) {
    rows.sort_by_key(MetricRow::order_key);
}

/// Test-set accuracy of one cell restricted to one subgroup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRow {
    pub strategy: String,
    pub arch: String,
    pub scenario: String,
    pub fraction: f64,
    pub repeat: usize,
    pub attribute: String,
    pub group: usize,
    pub n: usize,
    pub value: f64,
}

pub fn sort_subgroup_rows(rows: &mut [SubgroupRow]) {
    rows.sort_by_key(|r| {
        let strategy = Strategy::parse(&r.strategy).map(|s| s as usize).unwrap_or(usize::MAX);
        (strategy, r.arch.clone(), scenario_rank(&r.scenario), r.fraction.to_bits(), r.repeat, r.attribute.clone(), r.group)
    });
}

/// Per-subgroup accuracy of `eval` on `records`.
pub fn subgroup_accuracy(eval: &Evaluation, records: &[Record]) -> Result<Vec<stats::GroupMetric>> {
    let predicted = stats::argmax_rows(&eval.logits);
    let correct: Vec<f64> = predicted.iter().zip(&eval.labels).map(|(p, l)| f64::from(u8::from(p == l))).collect();
    let attrs = BTreeMap::from([("subgroup".to_string(), records.iter().map(|r| r.subgroup).collect())]);
    stats::subgroup_metrics(&correct, &attrs, "subgroup", 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub strategy: String,
    pub arch: String,
    pub scenario: String,
    pub fraction: f64,
    pub repeat: usize,
    pub error: String,
}

/// Metrics for one evaluation: accuracy, top-k accuracy when there are
/// more than `k` classes, and AUC for binary tasks.
pub fn metric_values(eval: &Evaluation, top_k: usize) -> Result<Vec<(String, f64)>> {
    let classes = eval.logits.shape()[1];
    let mut out = vec![("accuracy".to_string(), eval.accuracy)];
    if classes > top_k {
        out.push((format!("top{top_k}_accuracy"), stats::topk_accuracy(&eval.logits, &eval.labels, top_k)?));
    }
    if classes == 2 {
        let scores: Vec<f64> = (0..eval.labels.len()).map(|i| eval.logits.row(i)[1] - eval.logits.row(i)[0]).collect();
        let labels: Vec<bool> = eval.labels.iter().map(|&l| l == 1).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            out.push(("auc".to_string(), stats::auc(&scores, &labels)?));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub arch: String,
    pub supervised_hash: String,
    pub supervised_heldout_accuracy: f64,
    pub supervised_history: Vec<LossPoint>,
    pub contrastive_hash: Option<String>,
    pub contrastive_parent: Option<String>,
    pub contrastive_checkpoints: Vec<CheckpointRecord>,
    pub contrastive_selected: Option<CheckpointRecord>,
    pub random_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub strategy: String,
    pub arch: String,
    pub stage: String,
    pub result: GridResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub strategy: String,
    pub arch: String,
    pub scenario: String,
    pub fraction: f64,
    pub repeat: usize,
    pub wall_seconds: f64,
}

/// Reproducibility record of a protocol run. Contains no timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub spec: ProtocolSpec,
    /// Dataset name → fingerprint hash.
    pub data_hashes: BTreeMap<String, String>,
    pub shift_hash: String,
    /// `"<strategy>/<arch>"` → content hash of the pretrained encoder.
    pub encoder_hashes: BTreeMap<String, String>,
    pub repeat_seeds: Vec<u64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ProtocolResult {
    pub rows: Vec<MetricRow>,
    pub subgroups: Vec<SubgroupRow>,
    pub failures: Vec<CellFailure>,
    pub timings: Vec<Timing>,
    pub pretrain: Vec<PretrainSummary>,
    pub grids: Vec<GridSummary>,
    pub manifest: Manifest,
}

pub fn repeat_seed(seed: u64, repeat: usize) -> u64 {
    mix(&[seed, label_key("repeat"), repeat as u64])
}

/// Pretrained encoders for one architecture; only those needed by the
/// spec's strategies are built.
pub struct Pretrained {
    pub random: Option<Encoder>,
    pub supervised: Option<Encoder>,
    pub remedis: Option<Encoder>,
    pub summary: PretrainSummary,
}

impl Pretrained {
    /// Encoder a strategy fine-tunes from.
    pub fn encoder(&self, strategy: Strategy) -> Option<&Encoder> {
        match strategy {
            Strategy::Random => self.random.as_ref(),
            Strategy::Supervised | Strategy::SelfTraining => self.supervised.as_ref(),
            Strategy::Remedis => self.remedis.as_ref(),
        }
    }
}

/// Pretraining stage of the protocol for one architecture, with the same
/// seeds `run_protocol` uses.
pub fn pretrain_arch(
    spec: &ProtocolSpec,
    bundle: &TaskBundle,
    arch: EncoderPreset,
    seed: u64,
    opts: &RunOptions,
) -> Result<Pretrained> {
    let [c, h, _] = bundle.image_shape();
    let cfg = EncoderConfig::preset(arch, h, c);
    let needs = |s: Strategy| spec.strategies.contains(&s);
    let random = if needs(Strategy::Random) {
        Some(Encoder::build(&cfg, &mut rng_for(&[seed, label_key("random-init"), arch as u64]))?)
    } else {
        None
    };
    let mut summary = PretrainSummary {
        arch: arch.as_str().to_string(),
        supervised_hash: String::new(),
        supervised_heldout_accuracy: f64::NAN,
        supervised_history: Vec::new(),
        contrastive_hash: None,
        contrastive_parent: None,
        contrastive_checkpoints: Vec::new(),
        contrastive_selected: None,
        random_hash: random.as_ref().map(|e| e.params.content_hash()),
    };
    let mut supervised = None;
    let mut remedis = None;
    if needs(Strategy::Supervised) || needs(Strategy::Remedis) || needs(Strategy::SelfTraining) {
        let sup = supervised_pretrain(&cfg, &bundle.upstream, &spec.supervised, mix(&[seed, arch as u64]))?;
        summary.supervised_hash = sup.encoder.params.content_hash();
        summary.supervised_heldout_accuracy = sup.heldout_accuracy;
        summary.supervised_history = sup.history;
        if needs(Strategy::Remedis) {
            let dir = opts.checkpoint_dir.as_ref().map(|d| d.join(arch.as_str()));
            let out = contrastive_pretrain(
                &sup.encoder,
                &bundle.unlabeled,
                &spec.contrastive,
                mix(&[seed, label_key("contrastive"), arch as u64]),
                dir.as_deref(),
            )?;
            summary.contrastive_hash = Some(out.encoder.params.content_hash());
            summary.contrastive_parent = out.encoder.parent.clone();
            summary.contrastive_checkpoints = out.checkpoints;
            summary.contrastive_selected = Some(out.selected);
            remedis = Some(out.encoder);
        }
        supervised = Some(sup.encoder);
    }
    Ok(Pretrained { random, supervised, remedis, summary })
}

/// Rejects a contrastive encoder that does not descend from `base`.
pub fn check_remedis_provenance(remedis: &Encoder, base: &Encoder) -> Result<()> {
    if base.provenance != Provenance::Supervised {
        return Err(Error::Provenance(format!("base encoder is {}, expected supervised", base.provenance.as_str())));
    }
    if remedis.provenance != Provenance::Contrastive {
        return Err(Error::Provenance(format!("adapted encoder is {}, expected contrastive", remedis.provenance.as_str())));
    }
    let want = base.params.content_hash();
    if remedis.parent.as_deref() != Some(want.as_str()) {
        return Err(Error::Provenance(format!(
            "contrastive encoder descends from {:?}, configured supervised init is {want}",
            remedis.parent
        )));
    }
    Ok(())
}

/// Everything a repeat needs for one (strategy, arch) pair.
struct Plan<'a> {
    strategy: Strategy,
    arch: EncoderPreset,
    encoder: &'a Encoder,
    id_point: GridPoint,
    ood_point: GridPoint,
    student_point: Option<GridPoint>,
}

fn id_model(plan: &Plan, spec: &ProtocolSpec, bundle: &TaskBundle, seed: u64) -> Result<FinetuneOutcome> {
    let d_in = &bundle.d_in;
    match plan.student_point {
        Some(student) => Ok(self_train(plan.encoder, d_in, &bundle.unlabeled, plan.id_point, student, &spec.finetune, seed)?.student),
        None => {
            let init = initial_model(HeadScenario::PretrainedRandomHead, plan.encoder, None, d_in.classes, &spec.finetune, seed)?;
            finetune(init, &d_in.train, &d_in.val, 1.0, plan.id_point, &spec.finetune, seed)
        }
    }
}

fn ood_finetune(
    plan: &Plan,
    spec: &ProtocolSpec,
    d_out: &Dataset,
    id: &Model,
    fraction: f64,
    point: GridPoint,
    seed: u64,
) -> Result<FinetuneOutcome> {
    let init = initial_model(spec.ood_scenario, plan.encoder, Some(id), d_out.classes, &spec.finetune, seed)?;
    finetune(init, &d_out.train, &d_out.val, fraction, point, &spec.finetune, seed)
}

fn plan_grids<'a>(
    strategy: Strategy,
    arch: EncoderPreset,
    encoder: &'a Encoder,
    spec: &ProtocolSpec,
    bundle: &TaskBundle,
    seed: u64,
) -> Result<(Plan<'a>, Vec<GridSummary>)> {
    let grid_seed = mix(&[seed, label_key("grid"), strategy as u64, arch as u64]);
    let summary = |stage: &str, result: GridResult| GridSummary {
        strategy: strategy.as_str().into(),
        arch: arch.as_str().into(),
        stage: stage.into(),
        result,
    };
    let d_in = &bundle.d_in;
    let id_grid = grid_search(&spec.id_grid.points()?, |_, p| {
        let init = initial_model(HeadScenario::PretrainedRandomHead, encoder, None, d_in.classes, &spec.finetune, grid_seed)?;
        Ok(finetune(init, &d_in.train, &d_in.val, 1.0, *p, &spec.finetune, grid_seed)?.best_val_metric)
    })?;
    let mut grids = vec![summary("in_distribution", id_grid.clone())];
    let mut plan = Plan {
        strategy,
        arch,
        encoder,
        id_point: id_grid.best,
        ood_point: id_grid.best,
        student_point: None,
    };
    if strategy == Strategy::SelfTraining {
        let student = grid_search(&spec.student_grid.points()?, |_, p| {
            let out = self_train(encoder, d_in, &bundle.unlabeled, id_grid.best, *p, &spec.finetune, grid_seed)?;
            Ok(out.student.best_val_metric)
        })?;
        plan.student_point = Some(student.best);
        grids.push(summary("student", student));
    }
    let id = id_model(&plan, spec, bundle, grid_seed)?;
    let d_out = &bundle.d_out;
    let ood = grid_search(&spec.ood_grid.points()?, |_, p| {
        Ok(ood_finetune(&plan, spec, d_out, &id.model, 1.0, *p, grid_seed)?.best_val_metric)
    })?;
    plan.ood_point = ood.best;
    grids.push(summary("ood_fraction_1.0", ood));
    Ok((plan, grids))
}

struct UnitOutput {
    rows: Vec<MetricRow>,
    subgroups: Vec<SubgroupRow>,
    failures: Vec<CellFailure>,
    timings: Vec<Timing>,
}

fn run_unit(plan: &Plan, spec: &ProtocolSpec, bundle: &TaskBundle, repeat: usize, seed: u64) -> UnitOutput {
    let seed_r = repeat_seed(seed, repeat);
    let mut out = UnitOutput { rows: Vec::new(), subgroups: Vec::new(), failures: Vec::new(), timings: Vec::new() };
    let (strategy, arch) = (plan.strategy.as_str(), plan.arch.as_str());
    let emit = |out: &mut UnitOutput,
                scenario: &str,
                fraction: f64,
                started: Instant,
                records: &[Record],
                result: Result<Evaluation>| {
        let secs = started.elapsed().as_secs_f64();
        let metrics = result.and_then(|e| Ok((metric_values(&e, spec.top_k)?, subgroup_accuracy(&e, records)?)));
        match metrics {
            Ok((values, groups)) => {
                for g in groups {
                    out.subgroups.push(SubgroupRow {
                        strategy: strategy.into(),
                        arch: arch.into(),
                        scenario: scenario.into(),
                        fraction,
                        repeat,
                        attribute: "subgroup".into(),
                        group: g.group,
                        n: g.n,
                        value: g.mean,
                    });
                }
                for (name, value) in values {
                    out.rows.push(MetricRow {
                        strategy: strategy.into(),
                        arch: arch.into(),
                        scenario: scenario.into(),
                        fraction,
                        repeat,
                        metric_name: name,
                        value,
                        seed: seed_r,
                        wall_seconds: 0.0,
                    });
                }
            }
            Err(e) => out.failures.push(CellFailure {
                strategy: strategy.into(),
                arch: arch.into(),
                scenario: scenario.into(),
                fraction,
                repeat,
                error: e.to_string(),
            }),
        }
        out.timings.push(Timing {
            strategy: strategy.into(),
            arch: arch.into(),
            scenario: scenario.into(),
            fraction,
            repeat,
            wall_seconds: secs,
        });
    };

    let started = Instant::now();
    let id = id_model(plan, spec, bundle, seed_r);
    let id = match id {
        Ok(id) => id,
        Err(e) => {
            let msg = format!("in-distribution fine-tune failed: {e}");
            emit(&mut out, SCENARIO_ID, 1.0, started, &[], Err(Error::Config(msg.clone())));
            for &f in &spec.fractions {
                let scenario = if f == 0.0 { SCENARIO_ZERO_SHOT } else { SCENARIO_OOD };
                emit(&mut out, scenario, f, Instant::now(), &[], Err(Error::Config(msg.clone())));
            }
            return out;
        }
    };
    emit(&mut out, SCENARIO_ID, 1.0, started, &bundle.d_in.test, evaluate(&id.model, &bundle.d_in.test));
    let t = Instant::now();
    emit(&mut out, SCENARIO_ZERO_SHOT, 0.0, t, &bundle.d_out.test, evaluate(&id.model, &bundle.d_out.test));
    if let Some(d2) = &bundle.d_out2 {
        let t = Instant::now();
        emit(&mut out, SCENARIO_ZERO_SHOT_SECONDARY, 0.0, t, &d2.test, evaluate(&id.model, &d2.test));
    }
    for &f in spec.fractions.iter().filter(|&&f| f > 0.0) {
        let t = Instant::now();
        let result = ood_finetune(plan, spec, &bundle.d_out, &id.model, f, plan.ood_point, seed_r)
            .and_then(|o| evaluate(&o.model, &bundle.d_out.test));
        emit(&mut out, SCENARIO_OOD, f, t, &bundle.d_out.test, result);
    }
    out
}

/// Runs every strategy × architecture × repeat. Pretraining happens once
/// per architecture; hyper-parameters are chosen once per (strategy, arch)
/// (the shifted-domain grid at fraction 1.0 only) and reused by every
/// repeat and fraction. Repeats differ in head initialization, batch
/// order, augmentation and label subsample; the repeat seed is shared
/// across strategies. Failed cells are recorded and do not stop the run.
pub fn run_protocol(spec: &ProtocolSpec, bundle: &TaskBundle, seed: u64, opts: &RunOptions) -> Result<ProtocolResult> {
    spec.validate()?;
    if bundle.d_in.classes != bundle.d_out.classes {
        return Err(Error::Config("in- and out-of-distribution label spaces differ".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = opts.workers {
        if w == 0 {
            return Err(Error::Config("workers must be positive".into()));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_in_pool(spec, bundle, seed, opts))
}

fn run_in_pool(spec: &ProtocolSpec, bundle: &TaskBundle, seed: u64, opts: &RunOptions) -> Result<ProtocolResult> {
    let pretrained: Vec<Pretrained> =
        spec.archs.par_iter().map(|&arch| pretrain_arch(spec, bundle, arch, seed, opts)).collect::<Result<_>>()?;

    let mut encoder_hashes = BTreeMap::new();
    let mut pairs = Vec::new();
    for (arch, pre) in spec.archs.iter().zip(&pretrained) {
        if let (Some(r), Some(s)) = (&pre.remedis, &pre.supervised) {
            check_remedis_provenance(r, s)?;
        }
        for &strategy in &spec.strategies {
            let enc = pre
                .encoder(strategy)
                .expect("encoder pretrained for every configured strategy");
            encoder_hashes.insert(format!("{}/{}", strategy.as_str(), arch.as_str()), enc.params.content_hash());
            pairs.push((strategy, *arch, enc));
        }
    }

    let planned: Vec<(Plan, Vec<GridSummary>)> = pairs
        .par_iter()
        .map(|&(strategy, arch, enc)| plan_grids(strategy, arch, enc, spec, bundle, seed))
        .collect::<Result<_>>()?;

    let units: Vec<(usize, usize)> =
        (0..planned.len()).flat_map(|p| (0..spec.repeats).map(move |r| (p, r))).collect();
    let outputs: Vec<UnitOutput> =
        units.par_iter().map(|&(p, r)| run_unit(&planned[p].0, spec, bundle, r, seed)).collect();

    let grids: Vec<GridSummary> = planned.into_iter().flat_map(|(_, g)| g).collect();
    let mut rows = Vec::new();
    let mut subgroups = Vec::new();
    let mut failures = Vec::new();
    let mut timings = Vec::new();
    for o in outputs {
        rows.extend(o.rows);
        subgroups.extend(o.subgroups);
        failures.extend(o.failures);
        timings.extend(o.timings);
    }
    sort_rows(&mut rows);
    sort_subgroup_rows(&mut subgroups);

    let shift_hash = bundle.shift.hash();
    let mut data_hashes = BTreeMap::new();
    for ds in bundle.datasets() {
        data_hashes.insert(ds.name.clone(), fingerprint(ds, &shift_hash)?.hash());
    }
    let mut notes = vec![WINDOW_NOTE.to_string()];
    notes.push("hyper-parameters selected once per strategy and architecture; the shifted-domain grid runs at fraction 1.0 only".into());
    notes.push("metrics.csv carries wall_seconds = 0 so reruns are byte-identical; measured times are in timings.csv".into());
    let manifest = Manifest {
        seed,
        spec: spec.clone(),
        data_hashes,
        shift_hash,
        encoder_hashes,
        repeat_seeds: (0..spec.repeats).map(|r| repeat_seed(seed, r)).collect(),
        notes,
    };
    Ok(ProtocolResult {
        rows,
        subgroups,
        failures,
        timings,
        pretrain: pretrained.iter().map(|p| p.summary.clone()).collect(),
        grids,
        manifest,
    })
}
