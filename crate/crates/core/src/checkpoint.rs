//! Binary checkpoint container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! b"MCDCKPT1"
//! u64 step, u64 total_steps, f64 m0, f64 beta, u64 seed
//! u32 config length, config bytes (UTF-8 key = value text)
//! u32 tensor count
//! per tensor: u32 name length, name bytes, u64 rows, u64 cols, rows*cols f64 (row-major)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::schedules::ScheduleState;

pub const MAGIC: &[u8; 8] = b"MCDCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub schedule: ScheduleState,
    pub seed: u64,
    pub config: String,
    pub tensors: Vec<(String, Array2<f64>)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Result<&Array2<f64>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor '{name}'")))
    }

    /// Like [`Checkpoint::get`] but also checks the shape.
    pub fn get_shaped(&self, name: &str, shape: (usize, usize)) -> Result<&Array2<f64>> {
        let t = self.get(name)?;
        if t.dim() != shape {
            return Err(Error::CorruptCheckpoint(format!(
                "tensor '{name}' is {:?}, expected {shape:?}",
                t.dim()
            )));
        }
        Ok(t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.schedule.step.to_le_bytes());
        out.extend_from_slice(&self.schedule.total_steps.to_le_bytes());
        out.extend_from_slice(&self.schedule.m0.to_le_bytes());
        out.extend_from_slice(&self.schedule.beta.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.ncols() as u64).to_le_bytes());
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::CorruptCheckpoint("bad magic".into()));
        }
        let step = r.u64()?;
        let total = r.u64()?;
        let m0 = r.f64()?;
        let beta = r.f64()?;
        let schedule = ScheduleState::with_params(step, total, m0, beta)
            .map_err(|e| Error::CorruptCheckpoint(format!("schedule: {e}")))?;
        let seed = r.u64()?;
        let config = r.string()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.string()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let len = rows
                .checked_mul(cols)
                .filter(|&n| n <= r.remaining() / 8)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("tensor '{name}' runs past end of file")))?;
            let data: Vec<f64> = (0..len).map(|_| r.f64()).collect::<Result<_>>()?;
            let t = Array2::from_shape_vec((rows, cols), data)
                .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
            tensors.push((name, t));
        }
        if r.remaining() != 0 {
            return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self {
            schedule,
            seed,
            config,
            tensors,
        })
    }

    /// Writes to a sibling temp file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
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

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::CorruptCheckpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::CorruptCheckpoint("name is not UTF-8".into()))
    }
}
