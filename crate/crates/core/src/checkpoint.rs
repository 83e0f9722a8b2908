//! Self-describing little-endian checkpoint files.
//!
//! ```text
//! "TSIT" | u32 version | u64 step
//! u64 len | config text (UTF-8)
//! [u8; 32] rng seed | u64 rng stream | u128 rng word position
//! u64 batch seed | u64 epoch | u64 position
//! u32 count | { u32 len | name | u64 value }*              counters
//! u32 count | { u32 len | name | u8 dtype | u8 ndim | u64 dim* | data }*
//! ```
//! Tensor data is row-major; its length follows from dtype and shape.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::BatchCursor;
use crate::error::{Error, Result};
use crate::tensor::{DType, Float, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TSIT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredTensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Little-endian element bytes.
    pub bytes: Vec<u8>,
}

impl StoredTensor {
    pub fn from_tensor<T: Float>(name: &str, t: &Tensor<T>) -> Self {
        Self::from_slice(name, t.shape(), t.data())
    }

    pub fn from_slice<T: Float>(name: &str, shape: &[usize], data: &[T]) -> Self {
        let mut bytes = Vec::with_capacity(data.len() * T::DTYPE.size());
        for &v in data {
            v.write_le(&mut bytes);
        }
        StoredTensor { name: name.to_string(), dtype: T::DTYPE, shape: shape.to_vec(), bytes }
    }

    pub fn to_vec<T: Float>(&self) -> Result<Vec<T>> {
        if self.dtype != T::DTYPE {
            return Err(Error::CorruptCheckpoint(format!(
                "{}: stored as {:?}, requested {:?}",
                self.name,
                self.dtype,
                T::DTYPE
            )));
        }
        Ok(self.bytes.chunks_exact(T::DTYPE.size()).map(T::read_le).collect())
    }

    pub fn to_tensor<T: Float>(&self) -> Result<Tensor<T>> {
        Tensor::from_vec(&self.shape, self.to_vec()?)
    }
}

/// Complete position of a ChaCha8 generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkpoint {
    pub step: u64,
    /// The run configuration the tensors belong to.
    pub config: String,
    pub rng: RngState,
    pub cursor: BatchCursor,
    pub counters: BTreeMap<String, u64>,
    pub tensors: Vec<StoredTensor>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::CorruptCheckpoint(format!(
                "truncated: {what} needs {n} bytes at offset {}, {} remain",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.array::<1>(what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let n = self.u64(what)?;
        usize::try_from(n).map_err(|_| Error::CorruptCheckpoint(format!("{what}: length {n} overflows")))
    }

    fn string(&mut self, len: usize, what: &str) -> Result<String> {
        String::from_utf8(self.take(len, what)?.to_vec())
            .map_err(|_| Error::CorruptCheckpoint(format!("{what} is not UTF-8")))
    }

    fn name(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        self.string(n, what)
    }
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u64).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        for v in [self.cursor.seed, self.cursor.epoch, self.cursor.position as u64] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.counters.len() as u32).to_le_bytes());
        for (k, v) in &self.counters {
            put_name(&mut out, k);
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_name(&mut out, &t.name);
            out.push(t.dtype.code());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&t.bytes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::CorruptCheckpoint("bad magic".into()));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion { found: version, expected: CHECKPOINT_VERSION });
        }
        let step = r.u64("step")?;
        let n = r.len("config length")?;
        let config = r.string(n, "config")?;
        let rng = RngState {
            seed: r.array("rng seed")?,
            stream: r.u64("rng stream")?,
            word_pos: u128::from_le_bytes(r.array("rng position")?),
        };
        let cursor = BatchCursor { seed: r.u64("batch seed")?, epoch: r.u64("epoch")?, position: r.len("position")? };
        let mut counters = BTreeMap::new();
        for _ in 0..r.u32("counter count")? {
            let k = r.name("counter name")?;
            counters.insert(k, r.u64("counter value")?);
        }
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = r.name("tensor name")?;
            let code = r.u8("dtype")?;
            let dtype = DType::from_code(code)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("{name}: unknown dtype code {code}")))?;
            let ndim = r.u8("ndim")? as usize;
            let shape = (0..ndim).map(|_| r.len("dim")).collect::<Result<Vec<_>>>()?;
            if ndim == 0 || shape.contains(&0) {
                return Err(Error::CorruptCheckpoint(format!("{name}: invalid shape {shape:?}")));
            }
            let size = shape
                .iter()
                .try_fold(dtype.size(), |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::CorruptCheckpoint(format!("{name}: shape {shape:?} overflows")))?;
            let data = r.take(size, &format!("data of {name}"))?.to_vec();
            tensors.push(StoredTensor { name, dtype, shape, bytes: data });
        }
        if r.pos != bytes.len() {
            return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { step, config, rng, cursor, counters, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn get(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Tensors whose names start with `prefix`, keyed by the remainder.
    pub fn tensor_map<T: Float>(&self, prefix: &str) -> Result<BTreeMap<String, Tensor<T>>> {
        self.tensors
            .iter()
            .filter_map(|t| t.name.strip_prefix(prefix).map(|rest| (rest, t)))
            .map(|(rest, t)| Ok((rest.to_string(), t.to_tensor()?)))
            .collect()
    }

    /// A file holding only tensors, e.g. feature-extractor weights.
    pub fn tensors_only(tensors: Vec<StoredTensor>) -> Self {
        Checkpoint {
            step: 0,
            config: String::new(),
            rng: RngState::capture(&ChaCha8Rng::seed_from_u64(0)),
            cursor: BatchCursor::new(0),
            counters: BTreeMap::new(),
            tensors,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let _: u64 = rng.random();
        let a: Tensor<f32> = Tensor::from_vec(&[2, 3], (0..6).map(|v| v as f32 * 0.3 - 1.0).collect()).unwrap();
        let b: Tensor<f64> = Tensor::from_vec(&[1, 1, 2, 2], vec![1e-300, -0.0, f64::MAX, 3.5]).unwrap();
        Checkpoint {
            step: 42,
            config: "[net]\nk = 3\n".into(),
            rng: RngState::capture(&rng),
            cursor: BatchCursor { seed: 5, epoch: 2, position: 3 },
            counters: [("opt_g.t".to_string(), 42u64)].into(),
            tensors: vec![StoredTensor::from_tensor("a", &a), StoredTensor::from_tensor("b", &b)],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        let t: Tensor<f64> = back.get("b").unwrap().to_tensor().unwrap();
        assert_eq!(t.data()[2], f64::MAX);
        assert!(back.get("a").unwrap().to_tensor::<f64>().is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        c.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), c);
    }

    #[test]
    fn rng_state_resumes_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let _: [u64; 7] = rng.random();
        let mut restored = RngState::capture(&rng).restore();
        let a: [u32; 9] = rng.random();
        let b: [u32; 9] = restored.random();
        assert_eq!(a, b);
    }

    #[test]
    fn every_truncation_is_reported() {
        let bytes = sample().to_bytes();
        for cut in 0..bytes.len() {
            match Checkpoint::from_bytes(&bytes[..cut]) {
                Err(Error::CorruptCheckpoint(_)) => {}
                other => panic!("cut at {cut}: {other:?}"),
            }
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Checkpoint::from_bytes(&extra), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn version_and_magic() {
        let mut bytes = sample().to_bytes();
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::CheckpointVersion { found: 7, expected: 1 })));
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::CorruptCheckpoint(_))));
    }
}
