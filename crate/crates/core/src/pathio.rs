//! Path ensembles: columnar little-endian binary files and CSV marginals.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes   "FWPATH\0\0"
//! version      u32       PATH_SCHEMA_VERSION
//! kind         u32       PathKind code
//! seed         u64
//! n_paths      u64
//! n_times      u32
//! reserved     u32       0
//! times        f64 × n_times
//! flags        u8  × n_paths        0 = ok, nonzero = path stopped early
//! per time:    loc u32 × n_paths, coord1 f64 × n_paths, coord2 f64 × n_paths
//! ```

use crate::error::{Error, Result};
use std::io::{Read, Write};

pub const PATH_MAGIC: [u8; 8] = *b"FWPATH\0\0";
pub const PATH_SCHEMA_VERSION: u32 = 1;
/// Set in `loc` when the state sits on a vertex; the low bits then hold the vertex id.
pub const VERTEX_BIT: u32 = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    /// Graph diffusion: `loc` = edge, `coord1` = h.
    Graph = 0,
    /// Projected planar ambient paths: `loc` = edge, `coord1` = h.
    AmbientProjected = 1,
    /// Book diffusion: `loc` = page 1..4 (0 on the binding), `coord1` = r, `coord2` = θ.
    Book = 2,
    /// Projected ℝ³ ambient paths, same coordinates as `Book`.
    BookAmbient = 3,
}

impl PathKind {
    fn from_code(c: u32) -> Result<Self> {
        Ok(match c {
            0 => Self::Graph,
            1 => Self::AmbientProjected,
            2 => Self::Book,
            3 => Self::BookAmbient,
            _ => return Err(Error::Invalid(format!("unknown path kind {c}"))),
        })
    }
}

pub const FLAG_OK: u8 = 0;
pub const FLAG_DOMAIN_EXIT: u8 = 1;
pub const FLAG_RANGE: u8 = 2;
pub const FLAG_OTHER: u8 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub kind: PathKind,
    pub seed: u64,
    pub times: Vec<f64>,
    pub flags: Vec<u8>,
    /// `loc[t][p]`
    pub loc: Vec<Vec<u32>>,
    pub coord1: Vec<Vec<f64>>,
    pub coord2: Vec<Vec<f64>>,
}

/// One path's record: flag and `(loc, coord1, coord2)` per observation time.
pub type PathRecord = (u8, Vec<(u32, f64, f64)>);

impl Ensemble {
    pub fn from_paths(kind: PathKind, seed: u64, times: Vec<f64>, paths: Vec<PathRecord>) -> Self {
        let nt = times.len();
        let np = paths.len();
        let mut loc = vec![Vec::with_capacity(np); nt];
        let mut coord1 = vec![Vec::with_capacity(np); nt];
        let mut coord2 = vec![Vec::with_capacity(np); nt];
        let mut flags = Vec::with_capacity(np);
        for (flag, states) in paths {
            flags.push(flag);
            for t in 0..nt {
                let (l, a, b) = states.get(t).copied().unwrap_or((u32::MAX, f64::NAN, f64::NAN));
                loc[t].push(l);
                coord1[t].push(a);
                coord2[t].push(b);
            }
        }
        Self { kind, seed, times, flags, loc, coord1, coord2 }
    }

    pub fn n_paths(&self) -> usize {
        self.flags.len()
    }

    pub fn n_flagged(&self) -> usize {
        self.flags.iter().filter(|&&f| f != FLAG_OK).count()
    }

    /// Unflagged `(loc, coord1, coord2)` samples at time index `t`.
    pub fn samples(&self, t: usize) -> Vec<(u32, f64, f64)> {
        (0..self.n_paths()).filter(|&p| self.flags[p] == FLAG_OK).map(|p| (self.loc[t][p], self.coord1[t][p], self.coord2[t][p])).collect()
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Invalid(e.to_string());
        let mut buf: Vec<u8> = Vec::with_capacity(48 + self.times.len() * (8 + 20 * self.n_paths()) + self.n_paths());
        buf.extend_from_slice(&PATH_MAGIC);
        buf.extend_from_slice(&PATH_SCHEMA_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.kind as u32).to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.extend_from_slice(&(self.n_paths() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.times.len() as u32).to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        for t in &self.times {
            buf.extend_from_slice(&t.to_le_bytes());
        }
        buf.extend_from_slice(&self.flags);
        for t in 0..self.times.len() {
            for v in &self.loc[t] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for v in &self.coord1[t] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for v in &self.coord2[t] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf).map_err(io)
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf).map_err(|e| Error::Invalid(e.to_string()))?;
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if pos + n > buf.len() {
                return Err(Error::Invalid("truncated path file".into()));
            }
            let s = &buf[pos..pos + n];
            pos += n;
            Ok(s)
        };
        if take(8)? != PATH_MAGIC {
            return Err(Error::Invalid("not a path file".into()));
        }
        let u32_of = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
        let u64_of = |b: &[u8]| u64::from_le_bytes(b.try_into().unwrap());
        let f64_of = |b: &[u8]| f64::from_le_bytes(b.try_into().unwrap());
        let version = u32_of(take(4)?);
        if version != PATH_SCHEMA_VERSION {
            return Err(Error::Invalid(format!("path schema version {version} (expected {PATH_SCHEMA_VERSION})")));
        }
        let kind = PathKind::from_code(u32_of(take(4)?))?;
        let seed = u64_of(take(8)?);
        let np = u64_of(take(8)?) as usize;
        let nt = u32_of(take(4)?) as usize;
        take(4)?;
        let times: Vec<f64> = take(8 * nt)?.chunks(8).map(f64_of).collect();
        let flags = take(np)?.to_vec();
        let mut loc = Vec::with_capacity(nt);
        let mut coord1 = Vec::with_capacity(nt);
        let mut coord2 = Vec::with_capacity(nt);
        for _ in 0..nt {
            loc.push(take(4 * np)?.chunks(4).map(u32_of).collect());
            coord1.push(take(8 * np)?.chunks(8).map(f64_of).collect());
            coord2.push(take(8 * np)?.chunks(8).map(f64_of).collect());
        }
        Ok(Self { kind, seed, times, flags, loc, coord1, coord2 })
    }

    /// Per time and location: count, mean and standard error of both coordinates.
    pub fn marginals_csv(&self) -> String {
        let mut s = String::from("t,loc,count,mean1,stderr1,mean2,stderr2\n");
        for (ti, t) in self.times.iter().enumerate() {
            let samples = self.samples(ti);
            let mut locs: Vec<u32> = samples.iter().map(|s| s.0).collect();
            locs.sort();
            locs.dedup();
            for l in locs {
                let xs: Vec<(f64, f64)> = samples.iter().filter(|s| s.0 == l).map(|s| (s.1, s.2)).collect();
                let n = xs.len() as f64;
                let stat = |f: &dyn Fn(&(f64, f64)) -> f64| {
                    let m = xs.iter().map(f).sum::<f64>() / n;
                    let v = if n > 1.0 { xs.iter().map(|x| (f(x) - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
                    (m, (v / n).sqrt())
                };
                let (m1, e1) = stat(&|x| x.0);
                let (m2, e2) = stat(&|x| x.1);
                let loc = if l & VERTEX_BIT != 0 { format!("v{}", l & !VERTEX_BIT) } else { l.to_string() };
                s.push_str(&format!("{t},{loc},{},{m1:e},{e1:e},{m2:e},{e2:e}\n", xs.len()));
            }
        }
        s
    }

    /// Every unflagged sample: `t,path,loc,coord1,coord2`.
    pub fn samples_csv(&self) -> String {
        let mut s = String::from("t,path,loc,coord1,coord2\n");
        for (ti, t) in self.times.iter().enumerate() {
            for p in 0..self.n_paths() {
                if self.flags[p] == FLAG_OK {
                    s.push_str(&format!("{t},{p},{},{:e},{:e}\n", self.loc[ti][p], self.coord1[ti][p], self.coord2[ti][p]));
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let paths = vec![(0u8, vec![(0u32, 1.0, 0.0), (2, 1.5, -0.25)]), (1, vec![(1, 0.5, 0.0), (u32::MAX, f64::NAN, f64::NAN)]), (0, vec![(VERTEX_BIT | 3, 0.25, 0.0), (0, 9.0, 1.0)])];
        let e = Ensemble::from_paths(PathKind::Graph, 42, vec![0.0, 1.0], paths);
        let mut buf = Vec::new();
        e.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"FWPATH\0\0");
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        assert_eq!(buf.len(), 40 + 16 + 3 + 2 * 3 * 20);
        let back = Ensemble::read_binary(&buf[..]).unwrap();
        assert_eq!(back.times, e.times);
        assert_eq!(back.flags, e.flags);
        assert_eq!(back.loc, e.loc);
        assert_eq!(back.coord1[0], e.coord1[0]);
        assert!(back.coord1[1][1].is_nan());
        assert_eq!(e.samples(1).len(), 2);
        let csv = e.marginals_csv();
        assert!(csv.contains("0,v3,1,"));
        assert!(Ensemble::read_binary(&buf[..30]).is_err());
    }
}
