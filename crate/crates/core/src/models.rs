//! Encoder `f`, projection head, classification head `g`, attention
//! pooling, and the composed classifier `h = g ∘ f`.
//!
//! The encoder is a small convnet: each stage is `depth` blocks of
//! 3×3 convolution with standardized weights, group norm and ReLU; the
//! first block of every stage has stride 2. A global average pool follows,
//! then an optional linear map to the embedding width `D`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::Image;
use crate::autodiff::{Graph, Tensor, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::params::{Binding, ParamKind, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderPreset {
    Small,
    Large,
}

impl EncoderPreset {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderPreset::Small => "small",
            EncoderPreset::Large => "large",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_size: usize,
    pub in_channels: usize,
    pub widths: Vec<usize>,
    /// Conv blocks per stage.
    pub depth: usize,
    pub groups: usize,
    pub embed_dim: usize,
}

impl EncoderConfig {
    pub fn preset(preset: EncoderPreset, input_size: usize, in_channels: usize) -> Self {
        match preset {
            EncoderPreset::Small => EncoderConfig {
                input_size,
                in_channels,
                widths: vec![8, 16, 32],
                depth: 1,
                groups: 4,
                embed_dim: 32,
            },
            EncoderPreset::Large => EncoderConfig {
                input_size,
                in_channels,
                widths: vec![16, 32, 64],
                depth: 2,
                groups: 8,
                embed_dim: 64,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.widths.is_empty() || self.depth == 0 || self.input_size == 0 {
            return Err(Error::Config(format!("degenerate encoder config {self:?}")));
        }
        if self.in_channels == 0 {
            return Err(Error::Config("encoder needs at least one input channel".into()));
        }
        for &w in &self.widths {
            if self.groups == 0 || w % self.groups != 0 {
                return Err(Error::Config(format!("{} groups do not divide {w} channels", self.groups)));
            }
        }
        Ok(())
    }

    /// Spatial side after every stride-2 stage.
    pub fn output_side(&self) -> usize {
        self.widths.iter().fold(self.input_size, |s, _| (s + 2 - 3) / 2 + 1)
    }

    fn needs_linear(&self) -> bool {
        self.embed_dim != *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        let mut c_in = self.in_channels;
        let mut n = 0;
        for &w in &self.widths {
            for _ in 0..self.depth {
                n += w * c_in * 9 + 2 * w;
                c_in = w;
            }
        }
        if self.needs_linear() {
            n += c_in * self.embed_dim + self.embed_dim;
        }
        n
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Random,
    Supervised,
    Contrastive,
    FineTuned,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Random => "random",
            Provenance::Supervised => "supervised",
            Provenance::Contrastive => "contrastive",
            Provenance::FineTuned => "fine_tuned",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Provenance::Random),
            "supervised" => Ok(Provenance::Supervised),
            "contrastive" => Ok(Provenance::Contrastive),
            "fine_tuned" => Ok(Provenance::FineTuned),
            _ => Err(Error::Format(format!("unknown provenance {s:?}"))),
        }
    }

    /// Stages only move forward; fine-tuned models may be fine-tuned again.
    pub fn can_become(self, next: Provenance) -> bool {
        next > self || (self == Provenance::FineTuned && next == Provenance::FineTuned)
    }
}

fn uniform_tensor(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

/// Stacks equally sized images into `[N, C, H, W]`.
pub fn stack_images(images: &[Image]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::Empty("no images to stack".into()))?;
    let (c, h, w) = (first.channels(), first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        if (img.channels(), img.height(), img.width()) != (c, h, w) {
            return Err(Error::shape(
                "stack_images",
                format!("{}x{}x{} among {c}x{h}x{w}", img.channels(), img.height(), img.width()),
            ));
        }
        data.extend_from_slice(img.pixels());
    }
    Tensor::new(vec![images.len(), c, h, w], data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: ParamSet,
    pub provenance: Provenance,
    /// Content hash of the parameters this encoder was initialized from at
    /// its last provenance change.
    pub parent: Option<String>,
}

impl Encoder {
    /// He-uniform convolutions, unit group-norm scale, zero offsets.
    pub fn build(config: &EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut c_in = config.in_channels;
        for (s, &w) in config.widths.iter().enumerate() {
            for d in 0..config.depth {
                let bound = (6.0 / (c_in * 9) as f64).sqrt();
                params.push(format!("s{s}b{d}.conv"), ParamKind::Weight, uniform_tensor(rng, &[w, c_in, 3, 3], bound));
                params.push(format!("s{s}b{d}.gn_scale"), ParamKind::Norm, Tensor::ones(&[w]));
                params.push(format!("s{s}b{d}.gn_shift"), ParamKind::Norm, Tensor::zeros(&[w]));
                c_in = w;
            }
        }
        if config.needs_linear() {
            let bound = (6.0 / (c_in + config.embed_dim) as f64).sqrt();
            params.push("embed.w", ParamKind::Weight, uniform_tensor(rng, &[c_in, config.embed_dim], bound));
            params.push("embed.b", ParamKind::Bias, Tensor::zeros(&[config.embed_dim]));
        }
        Ok(Encoder { config: config.clone(), params, provenance: Provenance::Random, parent: None })
    }

    pub fn forward(&self, g: &mut Graph, b: &Binding, x: Var) -> Result<Var> {
        let cfg = &self.config;
        let s = g.value(x).shape().to_vec();
        if s.len() != 4 || s[1] != cfg.in_channels || s[2] != cfg.input_size || s[3] != cfg.input_size {
            return Err(Error::shape(
                "encoder",
                format!("input {s:?}, expected [N, {}, {}, {}]", cfg.in_channels, cfg.input_size, cfg.input_size),
            ));
        }
        let mut h = x;
        let mut k = 0;
        for _ in &cfg.widths {
            for d in 0..cfg.depth {
                let w = g.weight_standardize(b.var(k))?;
                h = g.conv2d(h, w, if d == 0 { 2 } else { 1 }, 1)?;
                h = g.group_norm(h, b.var(k + 1), b.var(k + 2), cfg.groups)?;
                h = g.relu(h)?;
                k += 3;
            }
        }
        h = g.spatial_mean(h)?;
        if cfg.needs_linear() {
            h = g.matmul(h, b.var(k))?;
            h = g.add_bias(h, b.var(k + 1))?;
        }
        Ok(h)
    }

    /// Embeddings without gradient tracking.
    pub fn encode(&self, images: &[Image]) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let x = g.constant(stack_images(images)?);
        let out = self.forward(&mut g, &b, x)?;
        Ok(g.value(out).clone())
    }

    /// Moves to `next`, recording the current parameters as the parent.
    pub fn transition(&mut self, next: Provenance) -> Result<()> {
        if !self.provenance.can_become(next) {
            return Err(Error::Provenance(format!(
                "cannot go from {} to {}",
                self.provenance.as_str(),
                next.as_str()
            )));
        }
        self.parent = Some(self.params.content_hash());
        self.provenance = next;
        Ok(())
    }

    pub fn to_checkpoint(&self, step: u64) -> Result<Checkpoint> {
        Ok(Checkpoint::new(self.params.clone())
            .with_meta("model", "encoder")
            .with_meta("config", serde_json::to_string(&self.config)?)
            .with_meta("config_hash", self.config.hash())
            .with_meta("provenance", self.provenance.as_str())
            .with_meta("parent", self.parent.clone().unwrap_or_else(|| "-".into()))
            .with_meta("step", step.to_string()))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta("model")? != "encoder" {
            return Err(Error::Format("checkpoint does not hold an encoder".into()));
        }
        let config: EncoderConfig = serde_json::from_str(ck.meta("config")?)?;
        let reference = Encoder::build(&config, &mut crate::seed::rng_for(&[0]))?;
        reference.params.check_layout(&ck.params)?;
        let parent = match ck.meta("parent")? {
            "-" => None,
            p => Some(p.to_string()),
        };
        Ok(Encoder { config, params: ck.params.clone(), provenance: Provenance::parse(ck.meta("provenance")?)?, parent })
    }

    pub fn save(&self, path: &Path, step: u64) -> Result<()> {
        self.to_checkpoint(step)?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Two fully connected layers `D → hidden → P` with ReLU between.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub params: ParamSet,
}

impl ProjectionHead {
    pub fn build(input: usize, hidden: usize, output: usize, rng: &mut impl Rng) -> Result<Self> {
        if input == 0 || hidden == 0 || output == 0 {
            return Err(Error::Config("projection head dimensions must be positive".into()));
        }
        let mut params = ParamSet::new();
        params.push("proj.w1", ParamKind::Weight, uniform_tensor(rng, &[input, hidden], (6.0 / input as f64).sqrt()));
        params.push("proj.b1", ParamKind::Bias, Tensor::zeros(&[hidden]));
        params.push("proj.w2", ParamKind::Weight, uniform_tensor(rng, &[hidden, output], (6.0 / (hidden + output) as f64).sqrt()));
        params.push("proj.b2", ParamKind::Bias, Tensor::zeros(&[output]));
        Ok(ProjectionHead { params })
    }

    pub fn input_dim(&self) -> usize {
        self.params.get(0).value.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.params.get(2).value.shape()[1]
    }

    pub fn forward(&self, g: &mut Graph, b: &Binding, x: Var) -> Result<Var> {
        let h = g.matmul(x, b.var(0))?;
        let h = g.add_bias(h, b.var(1))?;
        let h = g.relu(h)?;
        let z = g.matmul(h, b.var(2))?;
        g.add_bias(z, b.var(3))
    }

    pub fn project(&self, embeddings: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let x = g.constant(embeddings.clone());
        let z = self.forward(&mut g, &b, x)?;
        Ok(g.value(z).clone())
    }
}

/// Weighted average of `emb[M, D]` with weights `softmax(scores[1, M])`.
pub fn pool_with_scores(g: &mut Graph, emb: Var, scores: Var) -> Result<Var> {
    let m = g.value(emb).shape()[0];
    if m == 0 {
        return Err(Error::Empty("attention pooling over zero embeddings".into()));
    }
    if g.value(scores).shape() != [1, m] {
        return Err(Error::shape("attention_pool", format!("scores {:?} for {m} embeddings", g.value(scores).shape())));
    }
    let weights = g.softmax(scores)?;
    g.matmul(weights, emb)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInit {
    Zero,
    Random,
}

/// Affine map `D → classes`, optionally preceded by gated attention
/// pooling over a record's views (`score = tanh(e·V)·w`).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationHead {
    pub classes: usize,
    pub attention: bool,
    pub params: ParamSet,
}

impl ClassificationHead {
    pub fn build(input: usize, classes: usize, attention: Option<usize>, init: HeadInit, rng: &mut impl Rng) -> Result<Self> {
        if input == 0 || classes < 2 {
            return Err(Error::Config(format!("head needs D > 0 and >= 2 classes, got {input} and {classes}")));
        }
        let mut params = ParamSet::new();
        let bound = (6.0 / (input + classes) as f64).sqrt();
        let w = match init {
            HeadInit::Zero => Tensor::zeros(&[input, classes]),
            HeadInit::Random => uniform_tensor(rng, &[input, classes], bound),
        };
        params.push("head.w", ParamKind::Weight, w);
        params.push("head.b", ParamKind::Bias, Tensor::zeros(&[classes]));
        if let Some(a) = attention {
            if a == 0 {
                return Err(Error::Config("attention width must be positive".into()));
            }
            params.push("attn.v", ParamKind::Weight, uniform_tensor(rng, &[input, a], (6.0 / (input + a) as f64).sqrt()));
            params.push("attn.w", ParamKind::Weight, uniform_tensor(rng, &[a, 1], (6.0 / (a + 1) as f64).sqrt()));
        }
        Ok(ClassificationHead { classes, attention: attention.is_some(), params })
    }

    pub fn input_dim(&self) -> usize {
        self.params.get(0).value.shape()[0]
    }

    /// Attention-pooled embedding of `emb[M, D]`, shape `[1, D]`.
    pub fn attention_pool(&self, g: &mut Graph, b: &Binding, emb: Var) -> Result<Var> {
        if !self.attention {
            return Err(Error::invalid("head has no attention layer"));
        }
        let m = g.value(emb).shape()[0];
        let h = g.matmul(emb, b.var(2))?;
        let h = g.tanh(h)?;
        let s = g.matmul(h, b.var(3))?;
        let s = g.reshape(s, &[1, m])?;
        pool_with_scores(g, emb, s)
    }

    pub fn logits(&self, g: &mut Graph, b: &Binding, emb: Var) -> Result<Var> {
        let z = g.matmul(emb, b.var(0))?;
        g.add_bias(z, b.var(1))
    }
}

/// `h = g ∘ f`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: Encoder,
    pub head: ClassificationHead,
}

impl Model {
    pub fn new(encoder: Encoder, head: ClassificationHead) -> Result<Self> {
        if head.input_dim() != encoder.config.embed_dim {
            return Err(Error::shape(
                "model",
                format!("head expects D = {}, encoder gives {}", head.input_dim(), encoder.config.embed_dim),
            ));
        }
        Ok(Model { encoder, head })
    }

    /// Logits for a batch of records, each given as its list of views.
    /// Without attention every record must have exactly one view.
    pub fn forward(&self, g: &mut Graph, eb: &Binding, hb: &Binding, records: &[Vec<Image>]) -> Result<Var> {
        if records.is_empty() {
            return Err(Error::Empty("empty batch".into()));
        }
        let flat: Vec<Image> = records.iter().flatten().cloned().collect();
        let x = g.constant(stack_images(&flat)?);
        let emb = self.encoder.forward(g, eb, x)?;
        let pooled = if self.head.attention {
            let mut rows = Vec::with_capacity(records.len());
            let mut start = 0;
            for r in records {
                if r.is_empty() {
                    return Err(Error::Empty("record without views".into()));
                }
                let part = g.select_rows(emb, (start..start + r.len()).collect())?;
                rows.push(self.head.attention_pool(g, hb, part)?);
                start += r.len();
            }
            g.concat(&rows)?
        } else {
            if records.iter().any(|r| r.len() != 1) {
                return Err(Error::invalid("records with several views need an attention head"));
            }
            emb
        };
        self.head.logits(g, hb, pooled)
    }

    pub fn classify(&self, records: &[Vec<Image>]) -> Result<Tensor> {
        let mut g = Graph::new();
        let eb = self.encoder.params.bind(&mut g, false);
        let hb = self.head.params.bind(&mut g, false);
        let out = self.forward(&mut g, &eb, &hb, records)?;
        Ok(g.value(out).clone())
    }

    pub fn head_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.head.params.clone())
            .with_meta("model", "head")
            .with_meta("classes", self.head.classes.to_string())
            .with_meta("attention", self.head.attention.to_string())
    }
}
