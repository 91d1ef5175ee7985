//! `SQCK` checkpoint files: named sections holding the parameters, the Adam
//! state, the training class counts and the training settings.
//!
//! Layout (little-endian): magic `SQCK`, `u16` version 1, `u32` section
//! count, then per section a `u16` name length, the UTF-8 name, a `u8` kind
//! (0 = `f64`, 1 = `u64`, 2 = UTF-8 text), a `u64` element count and the
//! payload.

use std::path::Path;

use seqratio::model::{ModelParams, ModelShape, OptimizerState, TrainConfig};
use seqratio::ClassPriorStats;

use crate::error::{CliError, CliResult};

const MAGIC: &[u8; 4] = b"SQCK";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub class_counts: Vec<usize>,
    pub config: TrainConfig,
}

enum Section {
    F64(Vec<f64>),
    U64(Vec<u64>),
    Text(String),
}

impl Checkpoint {
    pub fn priors(&self) -> ClassPriorStats {
        ClassPriorStats::new(self.class_counts.clone())
    }

    fn sections(&self) -> Vec<(String, Section)> {
        let shape = self.params.shape();
        let mut out = vec![
            (
                "config".to_string(),
                Section::Text(serde_json::to_string(&self.config).expect("config serializes")),
            ),
            (
                "shape".into(),
                Section::U64(vec![shape.dim as u64, shape.hidden as u64, shape.classes as u64]),
            ),
            (
                "class_counts".into(),
                Section::U64(self.class_counts.iter().map(|&c| c as u64).collect()),
            ),
        ];
        for (name, _, range) in shape.slices() {
            out.push((name.into(), Section::F64(self.params.values()[range].to_vec())));
        }
        out.push(("adam.step".into(), Section::U64(vec![self.optimizer.step])));
        out.push(("adam.m".into(), Section::F64(self.optimizer.m.clone())));
        out.push(("adam.v".into(), Section::F64(self.optimizer.v.clone())));
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let sections = self.sections();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
        for (name, section) in sections {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match section {
                Section::F64(v) => {
                    out.push(0);
                    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
                }
                Section::U64(v) => {
                    out.push(1);
                    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
                }
                Section::Text(s) => {
                    out.push(2);
                    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
                    out.extend_from_slice(s.as_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> CliResult<Self> {
        let bad = |reason: &str| CliError::format(path, reason.to_string());
        let mut r = Reader { bytes, at: 0 };
        if r.take(4).ok_or_else(|| bad("truncated"))? != MAGIC {
            return Err(bad("not a SQCK checkpoint"));
        }
        let version = u16::from_le_bytes(r.array().ok_or_else(|| bad("truncated"))?);
        if version != VERSION {
            return Err(bad("unsupported checkpoint version"));
        }
        let count = u32::from_le_bytes(r.array().ok_or_else(|| bad("truncated"))?);
        let mut sections = std::collections::BTreeMap::new();
        for _ in 0..count {
            let section = r.section().ok_or_else(|| bad("truncated section"))?;
            if sections.insert(section.0.clone(), section.1).is_some() {
                return Err(bad("duplicate section"));
            }
        }
        if r.at != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let mut take = |name: &str| sections.remove(name).ok_or_else(|| bad(&format!("missing section `{name}`")));
        let f64s = |s: Section, name: &str| match s {
            Section::F64(v) => Ok(v),
            _ => Err(bad(&format!("section `{name}` has the wrong kind"))),
        };
        let u64s = |s: Section, name: &str| match s {
            Section::U64(v) => Ok(v),
            _ => Err(bad(&format!("section `{name}` has the wrong kind"))),
        };
        let config: TrainConfig = match take("config")? {
            Section::Text(s) => serde_json::from_str(&s).map_err(|e| bad(&e.to_string()))?,
            _ => return Err(bad("section `config` has the wrong kind")),
        };
        let dims = u64s(take("shape")?, "shape")?;
        if dims.len() != 3 {
            return Err(bad("shape needs three entries"));
        }
        let shape = ModelShape {
            dim: dims[0] as usize,
            hidden: dims[1] as usize,
            classes: dims[2] as usize,
        };
        let class_counts: Vec<usize> = u64s(take("class_counts")?, "class_counts")?
            .into_iter()
            .map(|c| c as usize)
            .collect();
        if class_counts.len() != shape.classes {
            return Err(bad("class counts do not match the shape"));
        }
        let mut values = Vec::with_capacity(shape.num_params());
        for (name, _, range) in shape.slices() {
            let v = f64s(take(name)?, name)?;
            if v.len() != range.len() {
                return Err(bad(&format!("section `{name}` has the wrong length")));
            }
            values.extend(v);
        }
        let params = ModelParams::new(shape, values).map_err(|e| bad(&e.to_string()))?;
        let step = u64s(take("adam.step")?, "adam.step")?;
        let optimizer = OptimizerState {
            step: *step.first().ok_or_else(|| bad("empty adam.step"))?,
            m: f64s(take("adam.m")?, "adam.m")?,
            v: f64s(take("adam.v")?, "adam.v")?,
        };
        if optimizer.m.len() != shape.num_params() || optimizer.v.len() != shape.num_params() {
            return Err(bad("optimizer state does not match the parameters"));
        }
        if let Some(extra) = sections.keys().next() {
            return Err(bad(&format!("unknown section `{extra}`")));
        }
        Ok(Self {
            params,
            optimizer,
            class_counts,
            config,
        })
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.encode()).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.at.checked_add(n)?;
        let out = self.bytes.get(self.at..end)?;
        self.at = end;
        Some(out)
    }

    fn array<const N: usize>(&mut self) -> Option<[u8; N]> {
        self.take(N)?.try_into().ok()
    }

    fn section(&mut self) -> Option<(String, Section)> {
        let len = u16::from_le_bytes(self.array()?) as usize;
        let name = String::from_utf8(self.take(len)?.to_vec()).ok()?;
        let kind = self.take(1)?[0];
        let n = usize::try_from(u64::from_le_bytes(self.array()?)).ok()?;
        let section = match kind {
            0 => Section::F64(
                self.take(n.checked_mul(8)?)?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
            1 => Section::U64(
                self.take(n.checked_mul(8)?)?
                    .chunks_exact(8)
                    .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
            2 => Section::Text(String::from_utf8(self.take(n)?.to_vec()).ok()?),
            _ => return None,
        };
        Some((name, section))
    }
}
