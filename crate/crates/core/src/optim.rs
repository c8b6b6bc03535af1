//! Optimizers and learning-rate schedules.
//!
//! Update rules, for parameter `w`, gradient `g`, weight decay `wd` and
//! learning rate `lr` (weight decay always enters as `g + wd·w`):
//!
//! * **LARS**: per tensor, trust ratio `λ = η‖w‖ / ‖g + wd·w‖`, momentum
//!   `v ← βv + lr·λ·(g + wd·w)`, `w ← w − v`. Tensors with `‖w‖ = 0` or
//!   `‖g‖ = 0`, and norm/bias tensors, take the same step with `λ = 1`.
//! * **SGD with Nesterov momentum**: `v ← βv + g'`, `w ← w − lr·(g' + βv)`.
//! * **Adam**: `m ← β1·m + (1−β1)g'`, `s ← β2·s + (1−β2)g'²`,
//!   `w ← w − lr·m̂ / (√ŝ + ε)` with bias-corrected `m̂`, `ŝ`.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Lars,
    SgdNesterov,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub weight_decay: f64,
    pub momentum: f64,
    pub trust_coefficient: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            kind: OptimizerKind::Adam,
            weight_decay: 0.0,
            momentum: 0.9,
            trust_coefficient: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn lars(weight_decay: f64) -> Self {
        OptimConfig { kind: OptimizerKind::Lars, weight_decay, ..Default::default() }
    }

    pub fn sgd_nesterov(momentum: f64, weight_decay: f64) -> Self {
        OptimConfig { kind: OptimizerKind::SgdNesterov, momentum, weight_decay, ..Default::default() }
    }

    pub fn adam(weight_decay: f64) -> Self {
        OptimConfig { kind: OptimizerKind::Adam, weight_decay, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.trust_coefficient > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer hyper-parameters: {self:?}")))
        }
    }
}

fn check_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("parameter has {a} values, gradient {b}")));
    }
    Ok(())
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One LARS step on a single tensor. `adapt = false` disables the trust
/// ratio (used for norm and bias tensors).
pub fn lars_update(
    w: &mut [f64],
    g: &[f64],
    velocity: &mut [f64],
    lr: f64,
    cfg: &OptimConfig,
    adapt: bool,
) -> Result<()> {
    check_len("lars_update", w.len(), g.len())?;
    check_len("lars_update", w.len(), velocity.len())?;
    let wd = cfg.weight_decay;
    let d: Vec<f64> = w.iter().zip(g).map(|(wi, gi)| gi + wd * wi).collect();
    let (wn, gn) = (l2(w), l2(g));
    let dn = l2(&d);
    let trust = if adapt && wn > 0.0 && gn > 0.0 && dn > 0.0 {
        cfg.trust_coefficient * wn / dn
    } else {
        1.0
    };
    for ((wi, vi), di) in w.iter_mut().zip(velocity.iter_mut()).zip(&d) {
        *vi = cfg.momentum * *vi + lr * trust * di;
        *wi -= *vi;
    }
    Ok(())
}

pub fn sgd_nesterov_update(w: &mut [f64], g: &[f64], velocity: &mut [f64], lr: f64, cfg: &OptimConfig) -> Result<()> {
    check_len("sgd_nesterov_update", w.len(), g.len())?;
    check_len("sgd_nesterov_update", w.len(), velocity.len())?;
    let beta = cfg.momentum;
    for ((wi, vi), gi) in w.iter_mut().zip(velocity.iter_mut()).zip(g) {
        let gd = gi + cfg.weight_decay * *wi;
        *vi = beta * *vi + gd;
        *wi -= lr * (gd + beta * *vi);
    }
    Ok(())
}

/// `step` is the 1-based update count used for bias correction.
pub fn adam_update(
    w: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    s: &mut [f64],
    step: u64,
    lr: f64,
    cfg: &OptimConfig,
) -> Result<()> {
    check_len("adam_update", w.len(), g.len())?;
    check_len("adam_update", w.len(), m.len())?;
    check_len("adam_update", w.len(), s.len())?;
    if step == 0 {
        return Err(Error::invalid("adam step counter starts at 1"));
    }
    let c1 = 1.0 - cfg.beta1.powi(step as i32);
    let c2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..w.len() {
        let gd = g[i] + cfg.weight_decay * w[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gd;
        s[i] = cfg.beta2 * s[i] + (1.0 - cfg.beta2) * gd * gd;
        let mh = m[i] / c1;
        let sh = s[i] / c2;
        w[i] -= lr * mh / (sh.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Per-tensor optimizer slots.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub cfg: OptimConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl OptimizerState {
    pub fn new(cfg: OptimConfig, params: &ParamSet) -> Self {
        let first = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        let second = match cfg.kind {
            OptimizerKind::Adam => params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            _ => Vec::new(),
        };
        OptimizerState { cfg, first, second, steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Momentum / first-moment slot for parameter `index`.
    pub fn slot(&self, index: usize) -> &[f64] {
        &self.first[index]
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(Error::shape(
                "optimizer",
                format!("{} parameters, {} gradients, {} slots", params.len(), grads.len(), self.first.len()),
            ));
        }
        self.steps += 1;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.value.shape() != g.shape() {
                return Err(Error::shape(
                    "optimizer",
                    format!("`{}` is {:?} but gradient is {:?}", p.name, p.value.shape(), g.shape()),
                ));
            }
            let w = p.value.data_mut();
            match self.cfg.kind {
                OptimizerKind::Lars => {
                    let adapt = p.kind == ParamKind::Weight;
                    lars_update(w, g.data(), &mut self.first[i], lr, &self.cfg, adapt)?
                }
                OptimizerKind::SgdNesterov => sgd_nesterov_update(w, g.data(), &mut self.first[i], lr, &self.cfg)?,
                OptimizerKind::Adam => {
                    adam_update(w, g.data(), &mut self.first[i], &mut self.second[i], self.steps, lr, &self.cfg)?
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    /// `base · (1 − t/M)`.
    LinearDecay,
    /// `base · factor^⌊t / decay_steps⌋`.
    ExponentialStaircase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub base_lr: f64,
    #[serde(default = "default_decay_factor")]
    pub decay_factor: f64,
    #[serde(default = "default_decay_steps")]
    pub decay_steps: u64,
    pub max_steps: u64,
}

fn default_decay_factor() -> f64 {
    0.1
}

fn default_decay_steps() -> u64 {
    1
}

impl Schedule {
    pub fn constant(base_lr: f64, max_steps: u64) -> Self {
        Schedule { kind: ScheduleKind::Constant, base_lr, decay_factor: 1.0, decay_steps: 1, max_steps }
    }

    pub fn linear(base_lr: f64, max_steps: u64) -> Self {
        Schedule { kind: ScheduleKind::LinearDecay, base_lr, decay_factor: 1.0, decay_steps: 1, max_steps }
    }

    pub fn exponential(base_lr: f64, decay_factor: f64, decay_steps: u64, max_steps: u64) -> Self {
        Schedule { kind: ScheduleKind::ExponentialStaircase, base_lr, decay_factor, decay_steps, max_steps }
    }

    /// Learning rate at step `t`, `0 ≤ t ≤ max_steps`.
    pub fn value(&self, t: u64) -> Result<f64> {
        if t > self.max_steps {
            return Err(Error::invalid(format!("schedule step {t} exceeds max steps {}", self.max_steps)));
        }
        Ok(match self.kind {
            ScheduleKind::Constant => self.base_lr,
            ScheduleKind::LinearDecay => {
                if self.max_steps == 0 {
                    self.base_lr
                } else {
                    self.base_lr * (1.0 - t as f64 / self.max_steps as f64)
                }
            }
            ScheduleKind::ExponentialStaircase => {
                let k = t / self.decay_steps.max(1);
                self.base_lr * self.decay_factor.powi(k as i32)
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr >= 0.0) || !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) || self.decay_steps == 0 {
            return Err(Error::Config(format!("invalid schedule: {self:?}")));
        }
        Ok(())
    }
}

/// `n` values evenly spaced in log10 between `lo` and `hi` inclusive.
pub fn log_space(n: usize, lo: f64, hi: f64) -> Result<Vec<f64>> {
    if n == 0 || lo <= 0.0 || hi <= 0.0 {
        return Err(Error::invalid(format!("log_space({n}, {lo}, {hi})")));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect())
}

/// Declarative value list: explicit values or `n` log-spaced samples in
/// `[10^lo_exp, 10^hi_exp]`, optionally with a leading zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ValueGrid {
    Explicit(Vec<f64>),
    LogSpaced {
        n: usize,
        lo_exp: f64,
        hi_exp: f64,
        #[serde(default)]
        include_zero: bool,
    },
}

impl ValueGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        match self {
            ValueGrid::Explicit(v) => Ok(v.clone()),
            ValueGrid::LogSpaced { n, lo_exp, hi_exp, include_zero } => {
                let mut v = Vec::new();
                if *include_zero {
                    v.push(0.0);
                }
                v.extend(log_space(*n, 10f64.powf(*lo_exp), 10f64.powf(*hi_exp))?);
                Ok(v)
            }
        }
    }
}
