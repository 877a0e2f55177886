//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian `u64`, floats little-endian `f64`):
//!
//! ```text
//! m, d, n_items, mode            header
//! theta[0..m]                    parameters
//! [mask[0..m] as u8]             target checkpoints only
//! [k, descriptor[0..k]]          target checkpoints only
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub dim: u64,
    pub n_items: u64,
    pub mode: u64,
    pub values: Vec<f64>,
    pub mask: Option<Vec<bool>>,
    pub descriptor: Vec<u64>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = self.values.len();
        let mut out = Vec::with_capacity(32 + 8 * m);
        for h in [m as u64, self.dim, self.n_items, self.mode] {
            out.extend_from_slice(&h.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(mask) = &self.mask {
            out.extend(mask.iter().map(|&b| b as u8));
            out.extend_from_slice(&(self.descriptor.len() as u64).to_le_bytes());
            for d in &self.descriptor {
                out.extend_from_slice(&d.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let m = cur.u64()? as usize;
        let dim = cur.u64()?;
        let n_items = cur.u64()?;
        let mode = cur.u64()?;
        let values = (0..m).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        let (mask, descriptor) = if cur.pos == bytes.len() {
            (None, Vec::new())
        } else {
            let mask = cur.take(m)?.iter().map(|&b| b != 0).collect();
            let k = cur.u64()? as usize;
            let desc = (0..k).map(|_| cur.u64()).collect::<Result<Vec<_>>>()?;
            (Some(mask), desc)
        };
        if cur.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint {
            dim,
            n_items,
            mode,
            values,
            mask,
            descriptor,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bytes_round_trip(values in prop::collection::vec(-1e6f64..1e6, 0..40),
                            masked in any::<bool>(),
                            desc in prop::collection::vec(any::<u64>(), 0..5)) {
            let ck = Checkpoint {
                dim: 3,
                n_items: 7,
                mode: 1,
                mask: masked.then(|| values.iter().map(|v| *v > 0.0).collect()),
                descriptor: if masked { desc } else { Vec::new() },
                values,
            };
            prop_assert_eq!(Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), ck);
        }
    }

    #[test]
    fn header_layout() {
        let ck = Checkpoint {
            dim: 2,
            n_items: 1,
            mode: 0,
            values: vec![1.5, -2.0],
            mask: None,
            descriptor: vec![],
        };
        let b = ck.to_bytes();
        assert_eq!(b.len(), 32 + 16);
        assert_eq!(&b[0..8], &2u64.to_le_bytes());
        assert_eq!(&b[32..40], &1.5f64.to_le_bytes());
        assert!(Checkpoint::from_bytes(&b[..40]).is_err());
    }
}
