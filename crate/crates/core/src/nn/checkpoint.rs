//! Binary parameter checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes   "RLABCKPT"
//! version    u32       1
//! entries    u32
//! per entry:
//!   name_len u32, name (UTF-8)
//!   kind     u8        0 = MLP, 1 = plain vector
//!   MLP:     layers u32, sizes (layers + 1) × u32, activation tags layers × u8,
//!            count u64, params count × f64 (row-major weights then biases per layer)
//!   vector:  count u64, values count × f64
//! ```
//!
//! A sidecar `<file>.manifest` lists one `key = value` per line: format,
//! sha256 of the binary file, and an `entry` line per record.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::mlp::{Activation, Mlp};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RLABCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    Mlp(Mlp),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    entries: Vec<(String, Entry)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_mlp(&mut self, name: &str, mlp: &Mlp) -> &mut Self {
        self.entries.push((name.to_string(), Entry::Mlp(mlp.clone())));
        self
    }

    pub fn push_vector(&mut self, name: &str, values: &[f64]) -> &mut Self {
        self.entries.push((name.to_string(), Entry::Vector(values.to_vec())));
        self
    }

    pub fn entries(&self) -> &[(String, Entry)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    pub fn mlp(&self, name: &str) -> Result<&Mlp> {
        match self.get(name) {
            Some(Entry::Mlp(m)) => Ok(m),
            _ => Err(Error::invalid(format!("checkpoint has no network named {name:?}"))),
        }
    }

    pub fn vector(&self, name: &str) -> Result<&[f64]> {
        match self.get(name) {
            Some(Entry::Vector(v)) => Ok(v),
            _ => Err(Error::invalid(format!("checkpoint has no vector named {name:?}"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, entry) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match entry {
                Entry::Mlp(m) => {
                    out.push(0);
                    out.extend_from_slice(&(m.num_layers() as u32).to_le_bytes());
                    for &s in m.sizes() {
                        out.extend_from_slice(&(s as u32).to_le_bytes());
                    }
                    out.extend(m.activations().iter().map(|a| a.tag()));
                    write_f64s(&mut out, m.params());
                }
                Entry::Vector(v) => {
                    out.push(1);
                    write_f64s(&mut out, v);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(corrupt(&format!("unsupported format version {version}")));
        }
        let count = r.u32()?;
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| corrupt("entry name is not UTF-8"))?;
            let entry = match r.u8()? {
                0 => {
                    let layers = r.u32()? as usize;
                    let sizes = (0..=layers).map(|_| r.u32().map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
                    let acts = (0..layers)
                        .map(|_| r.u8().and_then(|t| Activation::from_tag(t).ok_or_else(|| corrupt("unknown activation"))))
                        .collect::<Result<Vec<_>>>()?;
                    let params = r.f64s()?;
                    let mut mlp = Mlp::new(&sizes, &acts)?;
                    mlp.set_params(&params)?;
                    Entry::Mlp(mlp)
                }
                1 => Entry::Vector(r.f64s()?),
                k => return Err(corrupt(&format!("unknown entry kind {k}"))),
            };
            entries.push((name, entry));
        }
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Checkpoint { entries })
    }

    pub fn manifest(&self, bytes: &[u8]) -> String {
        let mut s = String::new();
        writeln!(s, "format = rlab-checkpoint {FORMAT_VERSION}").unwrap();
        writeln!(s, "sha256 = {}", hex::encode(Sha256::digest(bytes))).unwrap();
        for (name, entry) in &self.entries {
            match entry {
                Entry::Mlp(m) => {
                    let sizes: Vec<String> = m.sizes().iter().map(|s| s.to_string()).collect();
                    let acts: Vec<&str> = m.activations().iter().map(|a| a.name()).collect();
                    writeln!(s, "entry = {name} mlp {} {}", sizes.join("-"), acts.join(",")).unwrap();
                }
                Entry::Vector(v) => writeln!(s, "entry = {name} vector {}", v.len()).unwrap(),
            }
        }
        s
    }

    /// Writes the binary file and its manifest; returns the manifest path.
    pub fn save(&self, path: &Path) -> Result<PathBuf> {
        let bytes = self.to_bytes();
        fs::write(path, &bytes)?;
        let manifest = manifest_path(path);
        fs::write(&manifest, self.manifest(&bytes))?;
        Ok(manifest)
    }

    /// Loads a checkpoint, verifying the manifest digest when one is present.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        if let Ok(text) = fs::read_to_string(manifest_path(path)) {
            let want = text
                .lines()
                .filter_map(|l| l.split_once('='))
                .find(|(k, _)| k.trim() == "sha256")
                .map(|(_, v)| v.trim().to_string());
            if let Some(want) = want {
                if want != hex::encode(Sha256::digest(&bytes)) {
                    return Err(corrupt("sha256 does not match manifest"));
                }
            }
        }
        Self::from_bytes(&bytes)
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest");
    PathBuf::from(p)
}

fn corrupt(msg: &str) -> Error {
    Error::InvalidSpec(format!("checkpoint: {msg}"))
}

fn write_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n.checked_mul(8).is_none_or(|b| b > self.bytes.len() - self.pos) {
            return Err(corrupt("truncated"));
        }
        (0..n).map(|_| Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::with_init(&[4, 8, 2], Activation::Tanh, Activation::Identity, Init::FanInUniform, &mut rng).unwrap();
        let mut ck = Checkpoint::new();
        ck.push_mlp("policy", &net).push_vector("odd", &[f64::MIN_POSITIVE, -0.0, 1e300, f64::NAN]);
        ck
    }

    #[test]
    fn byte_round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.mlp("policy").unwrap().params(), ck.mlp("policy").unwrap().params());
        let bits: Vec<u64> = back.vector("odd").unwrap().iter().map(|v| v.to_bits()).collect();
        let want: Vec<u64> = ck.vector("odd").unwrap().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, want);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
