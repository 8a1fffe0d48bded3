//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian: magic `SPDT`, version `u32`, tensor
//! count `u32`, then per tensor a `u16` name length, the UTF-8 name, a `u8`
//! rank, `rank` dims as `u64` and the payload as `f64`.

use std::path::Path;

use crate::autodiff::Graph;
use crate::error::{CheckpointError, Error, Result};
use crate::models::OptimizerState;
use crate::numerics::Tensor;

pub const MAGIC: [u8; 4] = *b"SPDT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint { tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| CheckpointError::Malformed(format!("missing tensor '{name}'")).into())
    }

    pub fn add_graph(&mut self, prefix: &str, g: &Graph) {
        for p in g.params() {
            self.push(format!("{prefix}/{}", p.name), p.value.clone());
        }
    }

    pub fn add_optimizer(&mut self, prefix: &str, g: &Graph, opt: &OptimizerState) {
        self.push(format!("{prefix}/step"), Tensor::scalar(opt.step as f64));
        for (s, slot) in opt.slots.iter().enumerate() {
            for (p, t) in g.params().iter().zip(slot) {
                self.push(format!("{prefix}/slot{s}/{}", p.name), t.clone());
            }
        }
    }

    /// Overwrites the parameters of `g`, which must have the saved layout.
    pub fn restore_graph(&self, prefix: &str, g: &mut Graph) -> Result<()> {
        let mut values = Vec::with_capacity(g.params().len());
        for p in g.params() {
            let t = self.require(&format!("{prefix}/{}", p.name))?;
            if t.dims() != p.value.dims() {
                return Err(CheckpointError::Malformed(format!(
                    "'{prefix}/{}' has shape {:?}, network expects {:?}",
                    p.name,
                    t.dims(),
                    p.value.dims()
                ))
                .into());
            }
            values.push(t.clone());
        }
        for (p, v) in g.params_mut().iter_mut().zip(values) {
            p.value = v;
        }
        Ok(())
    }

    pub fn restore_optimizer(&self, prefix: &str, g: &Graph, opt: &mut OptimizerState) -> Result<()> {
        let step = self.require(&format!("{prefix}/step"))?.data()[0];
        let mut slots = opt.slots.clone();
        for (s, slot) in slots.iter_mut().enumerate() {
            for (p, t) in g.params().iter().zip(slot.iter_mut()) {
                let saved = self.require(&format!("{prefix}/slot{s}/{}", p.name))?;
                if saved.dims() != t.dims() {
                    return Err(CheckpointError::Malformed(format!("optimizer slot for '{}'", p.name)).into());
                }
                *t = saved.clone();
            }
        }
        opt.slots = slots;
        opt.step = step as u64;
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count = u32::try_from(self.tensors.len())
            .map_err(|_| CheckpointError::Malformed("too many tensors".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, t) in &self.tensors {
            let len = u16::try_from(name.len())
                .map_err(|_| CheckpointError::Malformed(format!("name '{name}' too long")))?;
            let rank = u8::try_from(t.rank()).map_err(|_| CheckpointError::DimensionOverflow { name: name.clone() })?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(rank);
            for &d in t.dims() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("four bytes");
        if magic != MAGIC {
            return Err(CheckpointError::Magic { found: magic }.into());
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: VERSION,
            }
            .into());
        }
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().expect("two bytes"));
            let name = std::str::from_utf8(r.take(len as usize, "name")?)
                .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.take(1, "rank")?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            let mut len: usize = 1;
            for _ in 0..rank {
                let d = u64::from_le_bytes(r.take(8, "dims")?.try_into().expect("eight bytes"));
                let d = usize::try_from(d).map_err(|_| CheckpointError::DimensionOverflow { name: name.clone() })?;
                len = len
                    .checked_mul(d)
                    .filter(|l| l.checked_mul(8).is_some())
                    .ok_or_else(|| CheckpointError::DimensionOverflow { name: name.clone() })?;
                dims.push(d);
            }
            if len * 8 > r.remaining() {
                return Err(CheckpointError::Truncated {
                    what: format!("payload of '{name}'"),
                }
                .into());
            }
            let data = r
                .take(len * 8, "payload")?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
                .collect();
            let t = Tensor::new(dims, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            tensors.push((name, t));
        }
        if r.remaining() != 0 {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", r.remaining())).into());
        }
        Ok(Checkpoint { tensors })
    }
}

impl Default for Checkpoint {
    fn default() -> Self {
        Self::new()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(CheckpointError::Truncated { what: what.to_string() }.into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("four bytes")))
    }
}

/// Writes `ckpt` through a temporary file so an interrupted write never
/// replaces a good checkpoint.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = ckpt.encode()?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new();
        c.push("a", Tensor::matrix(2, 3, vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5, 1e300, -7.0]).unwrap());
        c.push("step", Tensor::scalar(42.0));
        c
    }

    fn checkpoint_err(r: Result<Checkpoint>) -> CheckpointError {
        match r {
            Err(Error::Checkpoint(e)) => e,
            other => panic!("expected checkpoint error, got {other:?}"),
        }
    }

    #[test]
    fn bitwise_round_trip() {
        let c = sample();
        let d = Checkpoint::decode(&c.encode().unwrap()).unwrap();
        for ((n1, t1), (n2, t2)) in c.tensors.iter().zip(&d.tensors) {
            assert_eq!(n1, n2);
            assert_eq!(t1.dims(), t2.dims());
            let b1: Vec<u64> = t1.data().iter().map(|x| x.to_bits()).collect();
            let b2: Vec<u64> = t2.data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(b1, b2);
        }
    }

    #[test]
    fn distinct_errors() {
        let good = sample().encode().unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(checkpoint_err(Checkpoint::decode(&bad)), CheckpointError::Magic { .. }));
        let mut bumped = good.clone();
        bumped[4..8].copy_from_slice(&(VERSION + 1).to_le_bytes());
        assert!(matches!(
            checkpoint_err(Checkpoint::decode(&bumped)),
            CheckpointError::Version { found: 2, expected: 1 }
        ));
        for cut in [2, 10, good.len() - 1] {
            assert!(matches!(
                checkpoint_err(Checkpoint::decode(&good[..cut])),
                CheckpointError::Truncated { .. }
            ));
        }
        let mut huge = good.clone();
        // first dim of tensor "a": header 12 + len 2 + name 1 + rank 1
        huge[16..24].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(
            checkpoint_err(Checkpoint::decode(&huge)),
            CheckpointError::DimensionOverflow { .. }
        ));
        let mut trailing = good;
        trailing.push(0);
        assert!(matches!(checkpoint_err(Checkpoint::decode(&trailing)), CheckpointError::Malformed(_)));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.spdt");
        save_checkpoint(&p, &sample()).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), sample());
        assert!(matches!(load_checkpoint(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
