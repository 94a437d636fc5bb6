//! Named parameter tensors and the `IBWT` weight file.
//!
//! Layout, all integers `u32` little-endian:
//!
//! ```text
//! "IBWT" | version (=1) | tensor count
//! per tensor: name length | UTF-8 name | rank | dims... | f32 LE data
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use indexmap::IndexMap;

use super::graph::{Manifest, ParamSpec};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub const WEIGHT_MAGIC: &[u8; 4] = b"IBWT";
pub const WEIGHT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Param {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::mismatch("parameter data", &[n], &[data.len()]));
        }
        Ok(Self { shape, data })
    }
}

/// Insertion-ordered map of parameter name to tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    params: IndexMap<String, Param>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, param: Param) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Weights(format!("duplicate tensor '{name}'")));
        }
        self.params.insert(name, param);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Param> {
        self.get(name)
            .ok_or_else(|| Error::Weights(format!("missing tensor '{name}'")))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    /// All-zero tensors for every manifest entry.
    pub fn zeros(manifest: &Manifest) -> Self {
        let mut store = Self::new();
        for p in &manifest.params {
            let n = p.shape.iter().product();
            store
                .params
                .insert(p.name.clone(), Param { shape: p.shape.clone(), data: vec![0.0; n] });
        }
        store
    }

    /// Deterministic random weights for shape and range testing.
    ///
    /// Convolution weights and biases are uniform in `±scale/sqrt(fan_in)`;
    /// normalization scales are 1 and shifts 0. Values are drawn from
    /// SplitMix64 in manifest order.
    pub fn random(manifest: &Manifest, seed: u64, scale: f32) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut store = Self::new();
        // bias fan-in comes from the preceding weight of the same layer
        let mut last_fan_in = 1usize;
        for ParamSpec { name, shape } in &manifest.params {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".norm.weight") {
                vec![1.0; n]
            } else if name.ends_with(".norm.bias") {
                vec![0.0; n]
            } else {
                if shape.len() == 4 {
                    last_fan_in = if name.contains("uconv") {
                        shape[0] * shape[2] * shape[3]
                    } else {
                        shape[1] * shape[2] * shape[3]
                    };
                }
                let bound = scale as f64 / (last_fan_in as f64).sqrt();
                (0..n).map(|_| rng.uniform(-bound, bound) as f32).collect()
            };
            store.params.insert(name.clone(), Param { shape: shape.clone(), data });
        }
        store
    }

    /// Every manifest tensor present with the expected shape and nothing else.
    pub fn validate(&self, manifest: &Manifest) -> Result<()> {
        for spec in &manifest.params {
            let p = self.require(&spec.name)?;
            if p.shape != spec.shape {
                return Err(Error::Weights(format!(
                    "tensor '{}' has shape {:?}, expected {:?}",
                    spec.name, p.shape, spec.shape
                )));
            }
        }
        if self.params.len() != manifest.params.len() {
            let unknown: Vec<&String> = self
                .params
                .keys()
                .filter(|k| !manifest.params.iter().any(|s| &s.name == *k))
                .collect();
            return Err(Error::Weights(format!("unknown tensors {unknown:?}")));
        }
        for (name, p) in &self.params {
            if p.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Weights(format!("tensor '{name}' has non-finite values")));
            }
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(WEIGHT_MAGIC)?;
        w.write_u32::<LittleEndian>(WEIGHT_VERSION)?;
        w.write_u32::<LittleEndian>(self.params.len() as u32)?;
        for (name, p) in &self.params {
            w.write_u32::<LittleEndian>(name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            w.write_u32::<LittleEndian>(p.shape.len() as u32)?;
            for &d in &p.shape {
                w.write_u32::<LittleEndian>(d as u32)?;
            }
            for &v in &p.data {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    /// Parses a whole weight file; trailing bytes and truncation are errors.
    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let fmt = |m: &str| Error::format("IBWT", m);
        let eof = |e: std::io::Error| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::format("IBWT", "truncated file")
            } else {
                Error::Io(e)
            }
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(eof)?;
        if &magic != WEIGHT_MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(eof)?;
        if version != WEIGHT_VERSION {
            return Err(fmt(&format!("unsupported version {version}")));
        }
        let count = r.read_u32::<LittleEndian>().map_err(eof)?;
        let mut store = Self::new();
        for _ in 0..count {
            let len = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
            if len > 4096 {
                return Err(fmt("tensor name too long"));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(eof)?;
            let name = String::from_utf8(name).map_err(|_| fmt("tensor name is not UTF-8"))?;
            let rank = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
            if rank > 8 {
                return Err(fmt(&format!("tensor '{name}' has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.read_u32::<LittleEndian>().map_err(eof)? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n <= 1 << 30)
                .ok_or_else(|| fmt(&format!("tensor '{name}' is implausibly large")))?;
            let mut data = vec![0f32; n];
            r.read_f32_into::<LittleEndian>(&mut data).map_err(eof)?;
            store.insert(name, Param { shape, data })?;
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(fmt("trailing bytes after last tensor"));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Loads and validates against the full network manifest.
    pub fn load_validated(path: impl AsRef<Path>) -> Result<Self> {
        let store = Self::load(path)?;
        store.validate(&Manifest::full()?)?;
        Ok(store)
    }
}
