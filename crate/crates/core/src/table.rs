//! Tables of log sampling probabilities over all configurations up to a
//! maximal sample size, with CSV and binary serialization.

use std::io::{self, BufRead, Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lattice::{size_of, LatticeError, LatticeIndex, SampleConfig};
use crate::output::fmt_f64;

const BINARY_MAGIC: &[u8; 6] = b"ASGPT\x01";

#[derive(Debug, Error)]
pub enum TableError {
    #[error("configuration {0:?} is outside the table")]
    OutOfTable(Vec<u32>),
    #[error("table expects {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("malformed table data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// `log p(n)` for every `n` with `1 ≤ ‖n‖ ≤ max_size`, stored in lattice
/// index order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbTable {
    index: LatticeIndex,
    log_p: Vec<f64>,
}

impl ProbTable {
    pub fn from_values(index: LatticeIndex, log_p: Vec<f64>) -> Result<Self, TableError> {
        if log_p.len() != index.len() {
            return Err(TableError::LengthMismatch { expected: index.len(), got: log_p.len() });
        }
        Ok(Self { index, log_p })
    }

    pub fn dim(&self) -> usize {
        self.index.dim()
    }

    pub fn max_size(&self) -> u32 {
        self.index.max_size()
    }

    pub fn index(&self) -> &LatticeIndex {
        &self.index
    }

    pub fn values(&self) -> &[f64] {
        &self.log_p
    }

    /// `log p(n)`, `None` outside the table.
    pub fn get(&self, counts: &[u32]) -> Option<f64> {
        self.index.index_of(counts).map(|k| self.log_p[k])
    }

    pub fn log_p(&self, n: &SampleConfig) -> Result<f64, TableError> {
        self.get(n.counts()).ok_or_else(|| TableError::OutOfTable(n.counts().to_vec()))
    }

    pub fn contains(&self, counts: &[u32]) -> bool {
        self.index.index_of(counts).is_some()
    }

    /// `Σ_{‖n‖=m} p(n)` for each `m = 1..=max_size`.
    pub fn size_sums(&self) -> Vec<f64> {
        (1..=self.max_size())
            .map(|m| {
                let start = self.index.level_offset(m);
                self.log_p[start..start + self.index.level_len(m)].iter().map(|v| v.exp()).sum()
            })
            .collect()
    }

    /// All `(configuration, log p)` pairs in index order.
    pub fn iter(&self) -> impl Iterator<Item = (SampleConfig, f64)> + '_ {
        (1..=self.max_size()).flat_map(move |m| {
            let start = self.index.level_offset(m);
            self.index
                .level(m)
                .into_iter()
                .enumerate()
                .map(move |(k, c)| (c, self.log_p[start + k]))
        })
    }

    /// Writes `c1..cd,log_p` rows, then one comment row per size with the
    /// normalization sum.
    pub fn write_csv<W: Write>(&self, mut w: W, provenance: &str) -> io::Result<()> {
        writeln!(w, "# {provenance}")?;
        let header: Vec<String> = (1..=self.dim()).map(|i| format!("c{i}")).collect();
        writeln!(w, "{},log_p", header.join(","))?;
        for (c, lp) in self.iter() {
            let counts: Vec<String> = c.counts().iter().map(u32::to_string).collect();
            writeln!(w, "{},{}", counts.join(","), fmt_f64(lp))?;
        }
        for (m, s) in self.size_sums().into_iter().enumerate() {
            writeln!(w, "# normalization size={} sum_p={}", m + 1, fmt_f64(s))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, TableError> {
        let mut d = None;
        let mut rows: Vec<(Vec<u32>, f64)> = Vec::new();
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if d.is_none() {
                let cols = line.split(',').count();
                if cols < 3 {
                    return Err(TableError::Format(format!("bad header {line:?}")));
                }
                d = Some(cols - 1);
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let dim = d.expect("header parsed");
            if fields.len() != dim + 1 {
                return Err(TableError::Format(format!("bad row {line:?}")));
            }
            let counts = fields[..dim]
                .iter()
                .map(|f| f.parse::<u32>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| TableError::Format(e.to_string()))?;
            let lp = fields[dim].parse::<f64>().map_err(|e| TableError::Format(e.to_string()))?;
            rows.push((counts, lp));
        }
        let d = d.ok_or_else(|| TableError::Format("missing header".into()))?;
        let max_size = rows.iter().map(|(c, _)| size_of(c)).max().unwrap_or(0) as u32;
        let index = LatticeIndex::new(d, max_size)?;
        let mut log_p = vec![f64::NAN; index.len()];
        for (c, lp) in rows {
            let k = index.index_of(&c).ok_or_else(|| TableError::OutOfTable(c.clone()))?;
            log_p[k] = lp;
        }
        if log_p.iter().any(|v| v.is_nan()) {
            return Err(TableError::Format("table has missing configurations".into()));
        }
        Self::from_values(index, log_p)
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&self.max_size().to_le_bytes())?;
        w.write_all(&(self.log_p.len() as u64).to_le_bytes())?;
        for v in &self.log_p {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, TableError> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(TableError::Format("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let d = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let max_size = u32::from_le_bytes(b4);
        r.read_exact(&mut b8)?;
        let len = u64::from_le_bytes(b8) as usize;
        let index = LatticeIndex::new(d, max_size)?;
        if len != index.len() {
            return Err(TableError::LengthMismatch { expected: index.len(), got: len });
        }
        let mut log_p = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut b8)?;
            log_p.push(f64::from_le_bytes(b8));
        }
        Self::from_values(index, log_p)
    }
}

/// Cache file for a table keyed by parameter hash, maximal size and policy.
pub fn cache_path(dir: &Path, params_hash: &str, max_size: u32, policy: &str) -> PathBuf {
    let mut h = Sha256::new();
    h.update(params_hash.as_bytes());
    h.update(max_size.to_le_bytes());
    h.update(policy.as_bytes());
    let key: String = h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect();
    dir.join(format!("ptable-{key}.bin"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_table(n: u32) -> ProbTable {
        // d = 2 uniform stationary density: p(n) = 1/(‖n‖+1)
        let index = LatticeIndex::new(2, n).unwrap();
        let mut values = vec![0.0; index.len()];
        for m in 1..=n {
            for c in index.level(m) {
                values[index.index_of(c.counts()).unwrap()] = -(f64::from(m) + 1.0).ln();
            }
        }
        ProbTable::from_values(index, values).unwrap()
    }

    #[test]
    fn size_sums_are_one() {
        for s in uniform_table(8).size_sums() {
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn csv_and_binary_roundtrip() {
        let t = uniform_table(6);
        let mut buf = Vec::new();
        t.write_csv(&mut buf, "test").unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# test\nc1,c2,log_p\n"));
        assert!(text.contains("# normalization size=6"));
        assert_eq!(ProbTable::read_csv(&buf[..]).unwrap(), t);

        let mut bin = Vec::new();
        t.write_binary(&mut bin).unwrap();
        assert_eq!(ProbTable::read_binary(&bin[..]).unwrap(), t);
        assert!(ProbTable::read_binary(&bin[1..]).is_err());
    }

    #[test]
    fn lookups_outside_the_table() {
        let t = uniform_table(3);
        assert!(t.get(&[2, 2]).is_none());
        assert!(t.get(&[0, 0]).is_none());
        let n = SampleConfig::new(vec![4, 0]).unwrap();
        assert!(matches!(t.log_p(&n), Err(TableError::OutOfTable(_))));
    }

    #[test]
    fn cache_path_depends_on_key() {
        let dir = Path::new("/tmp");
        let a = cache_path(dir, "abc", 10, "drop");
        assert_eq!(a, cache_path(dir, "abc", 10, "drop"));
        assert_ne!(a, cache_path(dir, "abc", 11, "drop"));
        assert_ne!(a, cache_path(dir, "abc", 10, "proxy"));
    }
}
