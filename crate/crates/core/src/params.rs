//! Named parameter storage shared by models and optimizers.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Gradients, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Role of a parameter tensor; norm and bias parameters skip LARS trust
/// scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    Norm,
}

impl ParamKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamKind::Weight => "weight",
            ParamKind::Bias => "bias",
            ParamKind::Norm => "norm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "weight" => Ok(ParamKind::Weight),
            "bias" => Ok(ParamKind::Bias),
            "norm" => Ok(ParamKind::Norm),
            other => Err(Error::Format(format!("unknown parameter kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

/// Graph handles for a [`ParamSet`], index-aligned with it.
#[derive(Debug, Clone)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, index: usize) -> Var {
        self.vars[index]
    }

    /// Gradients in parameter order.
    pub fn collect(&self, grads: &Gradients, params: &ParamSet) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(params.iter())
            .map(|(v, p)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(p.value.shape())))
            .collect()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> usize {
        self.params.push(Param { name: name.into(), kind, value });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, index: usize) -> &Param {
        &self.params[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Param {
        &mut self.params[index]
    }

    pub fn find(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Registers every tensor on `graph`; trainable leaves when `trainable`.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> Binding {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    graph.param(p.value.clone())
                } else {
                    graph.constant(p.value.clone())
                }
            })
            .collect();
        Binding { vars }
    }

    /// SHA-256 over names, shapes and exact bit patterns.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            h.update([0]);
            for d in p.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Verifies names and shapes match `other` in order.
    pub fn check_layout(&self, other: &ParamSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::invalid(format!(
                "parameter count mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for (a, b) in self.iter().zip(other.iter()) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::invalid(format!(
                    "parameter `{}` {:?} does not match `{}` {:?}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
        }
        Ok(())
    }
}
