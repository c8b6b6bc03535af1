//! Parameter checkpoints.
//!
//! A checkpoint is a UTF-8 header followed by raw tensor data:
//!
//! ```text
//! shiftlab-checkpoint 1
//! meta <key> <value>          (zero or more; value runs to end of line)
//! tensor <name> <kind> <d0>x<d1>x...
//! ...
//! end
//! <little-endian f64 values of every tensor, in header order>
//! ```
//!
//! Scalars use the shape token `-`. Names and keys contain no whitespace.

use std::collections::BTreeMap;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamSet};

const MAGIC: &str = "shiftlab-checkpoint 1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: ParamSet,
}

fn check_token(what: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(Error::invalid(format!("checkpoint {what} {s:?} must be a nonempty token without whitespace")));
    }
    Ok(())
}

impl Checkpoint {
    pub fn new(params: ParamSet) -> Self {
        Checkpoint { meta: BTreeMap::new(), params }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks `{key}`")))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut head = String::from(MAGIC);
        head.push('\n');
        for (k, v) in &self.meta {
            check_token("key", k)?;
            if v.contains('\n') {
                return Err(Error::invalid(format!("checkpoint value for `{k}` spans lines")));
            }
            head.push_str(&format!("meta {k} {v}\n"));
        }
        for p in self.params.iter() {
            check_token("tensor name", &p.name)?;
            let shape = if p.value.shape().is_empty() {
                "-".to_string()
            } else {
                p.value.shape().iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
            };
            head.push_str(&format!("tensor {} {} {shape}\n", p.name, p.kind.as_str()));
        }
        head.push_str("end\n");
        let mut out = head.into_bytes();
        for p in self.params.iter() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
        let mut pos = 0;
        let mut next_line = || -> Result<&str> {
            let rest = &bytes[pos..];
            let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))?;
            pos += nl + 1;
            std::str::from_utf8(&rest[..nl]).map_err(|_| bad("header is not UTF-8"))
        };
        if next_line()? != MAGIC {
            return Err(bad("unrecognized magic line"));
        }
        let mut meta = BTreeMap::new();
        let mut layout = Vec::new();
        loop {
            let line = next_line()?;
            if line == "end" {
                break;
            }
            let mut parts = line.splitn(3, ' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some("meta"), Some(k), v) => {
                    meta.insert(k.to_string(), v.unwrap_or("").to_string());
                }
                (Some("tensor"), Some(name), Some(rest)) => {
                    let (kind, shape) = rest.split_once(' ').ok_or_else(|| bad("tensor line lacks a shape"))?;
                    let shape: Vec<usize> = if shape == "-" {
                        vec![]
                    } else {
                        shape.split('x').map(|d| d.parse().map_err(|_| bad("bad extent"))).collect::<Result<_>>()?
                    };
                    layout.push((name.to_string(), ParamKind::parse(kind)?, shape));
                }
                _ => return Err(bad(&format!("unexpected header line {line:?}"))),
            }
        }
        let mut body = &bytes[pos..];
        let mut params = ParamSet::new();
        for (name, kind, shape) in layout {
            let n: usize = shape.iter().product();
            if body.len() < 8 * n {
                return Err(bad("truncated tensor data"));
            }
            let data = body[..8 * n].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            body = &body[8 * n..];
            params.push(name, kind, Tensor::new(shape, data)?);
        }
        if !body.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Checkpoint { meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}
