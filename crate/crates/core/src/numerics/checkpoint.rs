//! Binary checkpoint format.
//!
//! ```text
//! magic        8 bytes   "GACCKPT\0"
//! version      u32 LE
//! header_len   u32 LE, followed by header_len bytes of UTF-8 "key=value\n" lines
//! entry_count  u32 LE
//! entries      entry_count × {
//!                name_len u32 LE, name bytes (UTF-8),
//!                rank u32 LE, dims rank × u64 LE,
//!                payload product(dims) × f64 LE
//!              }
//! ```
//!
//! Names beginning with `__` are reserved for optimizer moments and RNG
//! state. RNG words are stored as `f64::from_bits` of the raw `u64`, so the
//! round trip is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Adam, Module, Tensor};

const MAGIC: &[u8; 8] = b"GACCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub header: Vec<(String, String)>,
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_header(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.header.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.header.push((key, value)),
        }
    }

    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn push(&mut self, name: impl Into<String>, t: &Tensor) {
        self.entries.push((name.into(), strip_grad(t)));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry `{name}`")))
    }

    pub fn push_rng(&mut self, name: &str, rng: &ChaCha8Rng) {
        let seed = rng.get_seed();
        let mut words: Vec<u64> = seed
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        words.push(rng.get_stream());
        let pos = rng.get_word_pos();
        words.push(pos as u64);
        words.push((pos >> 64) as u64);
        let data = words.into_iter().map(f64::from_bits).collect();
        self.push(
            format!("__rng.{name}"),
            &Tensor::new(vec![7], data).expect("7 words"),
        );
    }

    pub fn rng(&self, name: &str) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let t = self.require(&format!("__rng.{name}"))?;
        if t.len() != 7 {
            return Err(Error::Checkpoint(format!("rng `{name}` has {} words", t.len())));
        }
        let words: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
        let mut seed = [0u8; 32];
        for (chunk, w) in seed.chunks_exact_mut(8).zip(&words[..4]) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(words[4]);
        rng.set_word_pos(u128::from(words[5]) | (u128::from(words[6]) << 64));
        Ok(rng)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let mut header = String::new();
        for (k, v) in &self.header {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Checkpoint(format!("unencodable header entry `{k}`")));
            }
            header.push_str(k);
            header.push('=');
            header.push_str(v);
            header.push('\n');
        }
        write_u32(w, header.len())?;
        w.write_all(header.as_bytes())?;
        write_u32(w, self.entries.len())?;
        for (name, t) in &self.entries {
            write_u32(w, name.len())?;
            w.write_all(name.as_bytes())?;
            write_u32(w, t.shape().len())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(8 * t.len());
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let header_len = read_u32(r)? as usize;
        let header_bytes = read_bytes(r, header_len)?;
        let header_text = String::from_utf8(header_bytes)
            .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
        let header = header_text
            .lines()
            .map(|line| {
                line.split_once('=')
                    .map(|(k, v)| (k.to_owned(), v.to_owned()))
                    .ok_or_else(|| Error::Checkpoint(format!("malformed header line `{line}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let count = read_u32(r)? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            let name = String::from_utf8(read_bytes(r, name_len)?)
                .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
            let rank = read_u32(r)? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                dims.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = dims.iter().product();
            let payload = read_bytes(r, 8 * n)?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            entries.push((name, Tensor::new(dims, data)?));
        }
        Ok(Self { header, entries })
    }

    /// Stores every parameter of `module` as `{prefix}.{name}`.
    pub fn push_module<M: Module>(&mut self, prefix: &str, module: &M) {
        for (name, t) in module.named_params() {
            self.push(format!("{prefix}.{name}"), t);
        }
    }

    /// Overwrites the parameters of `module` from `{prefix}.{name}` entries.
    pub fn load_module<M: Module>(&self, prefix: &str, module: &mut M) -> Result<()> {
        let names: Vec<String> = module.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, p) in names.iter().zip(module.params_mut()) {
            let t = self.require(&format!("{prefix}.{name}"))?;
            if t.len() != p.len() {
                return Err(Error::Checkpoint(format!(
                    "entry `{prefix}.{name}` has {} values, parameter has {}",
                    t.len(),
                    p.len()
                )));
            }
            p.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    /// Stores Adam moments and step count under `__adam.{name}`.
    pub fn push_adam(&mut self, name: &str, adam: &Adam) {
        let step = f64::from_bits(adam.steps_taken());
        self.push(format!("__adam.{name}.step"), &Tensor::new(vec![1], vec![step]).expect("one value"));
        for (i, (m, v)) in adam.first_moments().iter().zip(adam.second_moments()).enumerate() {
            self.push(format!("__adam.{name}.m{i}"), &Tensor::new(vec![m.len()], m.clone()).expect("flat"));
            self.push(format!("__adam.{name}.v{i}"), &Tensor::new(vec![v.len()], v.clone()).expect("flat"));
        }
    }

    pub fn load_adam(&self, name: &str, adam: &mut Adam) -> Result<()> {
        let step = self.require(&format!("__adam.{name}.step"))?.data()[0].to_bits();
        let (mut m, mut v) = (Vec::new(), Vec::new());
        while let (Some(a), Some(b)) = (
            self.get(&format!("__adam.{name}.m{}", m.len())),
            self.get(&format!("__adam.{name}.v{}", v.len())),
        ) {
            m.push(a.data().to_vec());
            v.push(b.data().to_vec());
        }
        adam.set_state(step, m, v)
    }

    /// Writes atomically: a temporary file in the target directory is renamed
    /// into place once complete.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        self.write_to(&mut bytes)?;
        crate::harness::write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

fn strip_grad(t: &Tensor) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("same shape")
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("length {v} overflows u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_bytes<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}
