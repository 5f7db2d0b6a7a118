//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"C2FDFT\0" | u32 version | u64 len | config text
//! u64 count | count x (u32 len | name | u8 dtype | u32 rank | rank x u64 dim | payload)
//! u64 length of everything above | u32 CRC32 of everything above
//! ```
//!
//! Model weights are stored under their parameter names. Optimizer and
//! trainer state live under the `optim.` and `state.` prefixes.

use std::collections::BTreeMap;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::network::DftModel;
use crate::rng::RngState;
use crate::trainer::{Stage, TrainerState};

pub const MAGIC: &[u8; 7] = b"C2FDFT\0";
pub const FORMAT_VERSION: u32 = 1;
const TRAILER: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U64(Vec<u64>),
    U8(Vec<u8>),
}

impl ArrayData {
    fn tag(&self) -> u8 {
        match self {
            Self::F32(_) => 0,
            Self::F64(_) => 1,
            Self::U64(_) => 2,
            Self::U8(_) => 3,
        }
    }

    fn len(&self) -> usize {
        match self {
            Self::F32(v) => v.len(),
            Self::F64(v) => v.len(),
            Self::U64(v) => v.len(),
            Self::U8(v) => v.len(),
        }
    }

    fn write(&self, out: &mut Vec<u8>) {
        match self {
            Self::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Self::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Self::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Self::U8(v) => out.extend_from_slice(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: ArrayData) -> Result<Self> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!("{name}: shape {shape:?} does not hold {} values", data.len())));
        }
        Ok(Self { name, shape, data })
    }

    fn scalar_u64(name: &str, v: u64) -> Self {
        Self {
            name: name.into(),
            shape: vec![1],
            data: ArrayData::U64(vec![v]),
        }
    }

    fn vector(name: String, data: ArrayData) -> Self {
        Self {
            name,
            shape: vec![data.len()],
            data,
        }
    }
}

/// Raw checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub arrays: Vec<NamedArray>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn size(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| Error::Checkpoint(format!("{what} does not fit in memory")))
    }

    fn string(&mut self, n: usize, what: &str) -> Result<String> {
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
    }
}

fn chunks<const N: usize, V>(bytes: &[u8], f: impl Fn([u8; N]) -> V) -> Vec<V> {
    bytes.chunks_exact(N).map(|c| f(c.try_into().unwrap())).collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&(self.arrays.len() as u64).to_le_bytes());
        for a in &self.arrays {
            out.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
            out.extend_from_slice(a.name.as_bytes());
            out.push(a.data.tag());
            out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
            for &d in &a.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            a.data.write(&mut out);
        }
        out.extend_from_slice(&(out.len() as u64).to_le_bytes());
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        if bytes.len() < MAGIC.len() + 4 + TRAILER {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let n = bytes.len();
        let recorded = u64::from_le_bytes(bytes[n - TRAILER..n - 4].try_into().unwrap());
        if recorded != (n - TRAILER) as u64 {
            return Err(Error::Checkpoint(format!(
                "truncated or padded file: trailer records {recorded} bytes, found {}",
                n - TRAILER
            )));
        }
        let crc = u32::from_le_bytes(bytes[n - 4..].try_into().unwrap());
        if crc32fast::hash(&bytes[..n - 4]) != crc {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let mut r = Reader {
            buf: &bytes[..n - TRAILER],
            pos: MAGIC.len(),
        };
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (this build reads {FORMAT_VERSION})"
            )));
        }
        let len = r.size("config length")?;
        let config = r.string(len, "config")?;
        let count = r.size("array count")?;
        let mut arrays = Vec::new();
        for _ in 0..count {
            let len = r.u32("name length")? as usize;
            let name = r.string(len, "array name")?;
            let tag = r.u8("dtype")?;
            let rank = r.u32("rank")? as usize;
            let shape = (0..rank).map(|_| r.size("dimension")).collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflows")))?;
            let width = match tag {
                0 => 4,
                1 | 2 => 8,
                3 => 1,
                _ => return Err(Error::Checkpoint(format!("{name}: unknown dtype tag {tag}"))),
            };
            let bytes_len = numel
                .checked_mul(width)
                .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflows")))?;
            let payload = r.take(bytes_len, &name)?;
            let data = match tag {
                0 => ArrayData::F32(chunks(payload, f32::from_le_bytes)),
                1 => ArrayData::F64(chunks(payload, f64::from_le_bytes)),
                2 => ArrayData::U64(chunks(payload, u64::from_le_bytes)),
                _ => ArrayData::U8(payload.to_vec()),
            };
            arrays.push(NamedArray { name, shape, data });
        }
        if r.pos != r.buf.len() {
            return Err(Error::Checkpoint("trailing bytes after the last array".into()));
        }
        Ok(Self { config, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        // write-then-rename so an interrupted save never clobbers the last good file
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }
}

/// A model plus, optionally, the trainer state needed to resume.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub config: RunConfig,
    pub weights: Vec<(String, Vec<usize>, Vec<f32>)>,
    pub state: Option<TrainerState>,
}

impl Snapshot {
    pub fn of_model(config: &RunConfig, model: &DftModel<f32>, state: Option<TrainerState>) -> Self {
        Self {
            config: config.clone(),
            weights: model.named_arrays(),
            state,
        }
    }

    /// Builds the model this snapshot describes and loads its weights.
    pub fn model(&self) -> Result<DftModel<f32>> {
        let model = DftModel::new(&self.config.model, 0)?;
        model.load_named(&self.weights)?;
        Ok(model)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut arrays: Vec<NamedArray> = self
            .weights
            .iter()
            .map(|(n, s, d)| NamedArray {
                name: n.clone(),
                shape: s.clone(),
                data: ArrayData::F32(d.clone()),
            })
            .collect();
        if let Some(st) = &self.state {
            arrays.push(NamedArray::vector("state.stage".into(), ArrayData::U8(vec![st.stage.code()])));
            arrays.push(NamedArray::scalar_u64("state.iteration", st.iteration as u64));
            arrays.push(NamedArray::vector("state.rng_seed".into(), ArrayData::U8(st.rng.seed.to_vec())));
            arrays.push(NamedArray::scalar_u64("state.rng_stream", st.rng.stream));
            let pos = st.rng.word_pos;
            arrays.push(NamedArray::vector(
                "state.rng_word_pos".into(),
                ArrayData::U64(vec![pos as u64, (pos >> 64) as u64]),
            ));
            arrays.push(NamedArray::scalar_u64("state.samples_drawn", st.samples_drawn));
            arrays.push(NamedArray::scalar_u64("optim.step", st.optim_step));
            for (name, (m, v)) in &st.moments {
                arrays.push(NamedArray::vector(format!("optim.m.{name}"), ArrayData::F64(m.clone())));
                arrays.push(NamedArray::vector(format!("optim.v.{name}"), ArrayData::F64(v.clone())));
            }
        }
        Checkpoint {
            config: self.config.to_text(),
            arrays,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = RunConfig::parse(&ck.config)?;
        let mut weights = Vec::new();
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        let mut fields: BTreeMap<&str, &ArrayData> = BTreeMap::new();
        for a in &ck.arrays {
            if let Some(name) = a.name.strip_prefix("optim.m.") {
                m.insert(name.to_string(), f64s(a)?);
            } else if let Some(name) = a.name.strip_prefix("optim.v.") {
                v.insert(name.to_string(), f64s(a)?);
            } else if a.name.starts_with("state.") || a.name.starts_with("optim.") {
                fields.insert(a.name.as_str(), &a.data);
            } else {
                match &a.data {
                    ArrayData::F32(d) => weights.push((a.name.clone(), a.shape.clone(), d.clone())),
                    _ => return Err(Error::Checkpoint(format!("weight {} is not float32", a.name))),
                }
            }
        }
        let state = if fields.is_empty() {
            None
        } else {
            let u64s = |name: &str, n: usize| -> Result<Vec<u64>> {
                match fields.get(name) {
                    Some(ArrayData::U64(d)) if d.len() == n => Ok(d.clone()),
                    _ => Err(Error::Checkpoint(format!("missing or malformed {name}"))),
                }
            };
            let bytes = |name: &str, n: usize| -> Result<Vec<u8>> {
                match fields.get(name) {
                    Some(ArrayData::U8(d)) if d.len() == n => Ok(d.clone()),
                    _ => Err(Error::Checkpoint(format!("missing or malformed {name}"))),
                }
            };
            let stage = Stage::from_code(bytes("state.stage", 1)?[0]).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let pos = u64s("state.rng_word_pos", 2)?;
            if m.keys().ne(v.keys()) {
                return Err(Error::Checkpoint("optimizer moments are incomplete".into()));
            }
            let moments = m.into_iter().zip(v).map(|((k, m), (_, v))| (k, (m, v))).collect();
            Some(TrainerState {
                stage,
                iteration: u64s("state.iteration", 1)?[0] as usize,
                rng: RngState {
                    seed: bytes("state.rng_seed", 32)?.try_into().unwrap(),
                    stream: u64s("state.rng_stream", 1)?[0],
                    word_pos: u128::from(pos[0]) | (u128::from(pos[1]) << 64),
                },
                samples_drawn: u64s("state.samples_drawn", 1)?[0],
                optim_step: u64s("optim.step", 1)?[0],
                moments,
            })
        };
        Ok(Self { config, weights, state })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn f64s(a: &NamedArray) -> Result<Vec<f64>> {
    match &a.data {
        ArrayData::F64(d) => Ok(d.clone()),
        _ => Err(Error::Checkpoint(format!("{} is not float64", a.name))),
    }
}
