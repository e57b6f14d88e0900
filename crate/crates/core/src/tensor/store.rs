use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;
use crate::error::{Error, Result};
use crate::util;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MOSCKPT1";

/// Parameter initialisation schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform Glorot with explicit fan-in / fan-out.
    Glorot {
        fan_in: usize,
        fan_out: usize,
    },
    /// Uniform He for layers followed by ReLU.
    He {
        fan_in: usize,
    },
    Zeros,
    /// Normal(0, 1/sqrt(dim)).
    Embedding {
        dim: usize,
    },
}

/// Named trainable parameters. Names are slash-free dotted paths such as
/// `mosnet.blstm.fwd.w_ih`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore {
    params: BTreeMap<String, Tensor>,
    rng_seed: u64,
    init_counter: u64,
}

impl ParameterStore {
    pub fn new(rng_seed: u64) -> Self {
        ParameterStore {
            params: BTreeMap::new(),
            rng_seed,
            init_counter: 0,
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Registers a new parameter, drawing its initial value from the store's
    /// seeded stream. Registration order fixes the values.
    pub fn register(&mut self, name: &str, shape: &[usize], init: Init) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        if shape.contains(&0) {
            return Err(Error::Config(format!(
                "parameter `{name}` has a zero dimension {shape:?}"
            )));
        }
        let mut rng = util::rng(util::mix_seed(&[self.rng_seed, self.init_counter]));
        self.init_counter += 1;
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Glorot { fan_in, fan_out } => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
            }
            Init::He { fan_in } => {
                let bound = (6.0 / fan_in as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
            }
            Init::Embedding { dim } => {
                let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid std");
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            }
        };
        self.params
            .insert(name.to_string(), Tensor::new(shape.to_vec(), data)?);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    /// Replaces a parameter value; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self.get_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(Error::shape(
                format!("ParameterStore::set({name})"),
                format!("{:?} vs {:?}", slot.shape(), value.shape()),
            ));
        }
        *slot = value;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Overwrites every parameter (biases included) with uniform noise in
    /// `[-scale, scale]`. Used to move gradient checks away from the zero-bias
    /// ReLU kinks of a fresh initialisation.
    pub fn randomize(&mut self, seed: u64, scale: f64) {
        let mut rng = util::rng(seed);
        for t in self.params.values_mut() {
            for v in t.data_mut() {
                *v = rng.gen_range(-scale..scale);
            }
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&self.rng_seed.to_le_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, t) in &self.params {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
        }
        for t in self.params.values() {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let rng_seed = r.u64()?;
        let count = r.u32()? as usize;
        let mut table = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format("checkpoint", "parameter name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            table.push((name, shape));
        }
        let mut params = BTreeMap::new();
        for (name, shape) in table {
            let n: usize = shape.iter().product();
            let raw = r.take(n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            if params
                .insert(name.clone(), Tensor::new(shape, data)?)
                .is_some()
            {
                return Err(Error::format(
                    "checkpoint",
                    format!("duplicate name `{name}`"),
                ));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        Ok(ParameterStore {
            params,
            rng_seed,
            init_counter: 0,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("checkpoint", "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let mut store = ParameterStore::new(42);
        store
            .register(
                "a.weight",
                &[3, 4],
                Init::Glorot {
                    fan_in: 3,
                    fan_out: 4,
                },
            )
            .unwrap();
        store.register("a.bias", &[4], Init::Zeros).unwrap();
        store
            .register("emb", &[5, 2], Init::Embedding { dim: 2 })
            .unwrap();
        store.get_mut("a.bias").unwrap().data_mut()[1] = f64::MIN_POSITIVE;
        let bytes = store.to_bytes();
        assert_eq!(&bytes[..8], b"MOSCKPT1");
        let back = ParameterStore::from_bytes(&bytes).unwrap();
        assert_eq!(back.rng_seed(), 42);
        for ((n1, t1), (n2, t2)) in store.iter().zip(back.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut store = ParameterStore::new(1);
        store.register("w", &[2], Init::Zeros).unwrap();
        let mut bytes = store.to_bytes();
        assert!(ParameterStore::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(matches!(
            ParameterStore::from_bytes(&bytes),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParameterStore::new(1);
        store.register("w", &[2], Init::Zeros).unwrap();
        assert!(store.register("w", &[2], Init::Zeros).is_err());
        assert!(store.register("z", &[0, 2], Init::Zeros).is_err());
    }

    #[test]
    fn glorot_respects_limit() {
        let mut store = ParameterStore::new(3);
        store
            .register(
                "w",
                &[10, 20],
                Init::Glorot {
                    fan_in: 10,
                    fan_out: 20,
                },
            )
            .unwrap();
        let limit = (6.0f64 / 30.0).sqrt();
        assert!(store
            .get("w")
            .unwrap()
            .data()
            .iter()
            .all(|v| v.abs() < limit));
    }
}
