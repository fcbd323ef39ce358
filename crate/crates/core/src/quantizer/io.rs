//! Persistence of trained chains.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "PDMPQGRD"
//! version      u32      1
//! fingerprint  32 bytes
//! horizon N    u32
//! K            u32
//! dims         u32
//! seed         u64
//! samples      u64
//! scales       dims × f64
//! for n in 0..=N:
//!   distortion f64
//!   points     K × dims × f64
//!   weights    K × f64
//!   if n >= 1, for each of the K rows of the stage-n transition matrix:
//!     flagged  u8
//!     nnz      u32
//!     entries  nnz × (column u32, probability f64)
//! ```
//!
//! The JSON export carries the same content with every float printed in
//! shortest round-trip form, so it is lossless for `f64`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Grid, QuantizedChain, TrainingMeta, TransitionMatrix, WeightedNorm};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const GRID_MAGIC: &[u8; 8] = b"PDMPQGRD";
pub const GRID_VERSION: u32 = 1;

pub(crate) struct Writer<W: Write>(pub W);

impl<W: Write> Writer<W> {
    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.0.write_all(b).map_err(|e| Error::Format(e.to_string()))
    }
    pub fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }
    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
}

pub(crate) struct Reader<R: Read>(pub R);

impl<R: Read> Reader<R> {
    pub fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0
            .read_exact(&mut b)
            .map_err(|e| Error::Format(format!("truncated file: {e}")))?;
        Ok(b)
    }
    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }
    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    pub fn expect_end(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.0.read(&mut probe) {
            Ok(0) => Ok(()),
            Ok(_) => Err(Error::Format("trailing bytes after artifact".into())),
            Err(e) => Err(Error::Format(e.to_string())),
        }
    }
}

pub fn write_chain<F: Scalar, W: Write>(chain: &QuantizedChain<F>, out: W) -> Result<()> {
    let mut w = Writer(out);
    w.bytes(GRID_MAGIC)?;
    w.u32(GRID_VERSION)?;
    w.bytes(&chain.meta.fingerprint)?;
    w.u32(chain.horizon() as u32)?;
    w.u32(chain.k() as u32)?;
    w.u32(chain.dims() as u32)?;
    w.u64(chain.meta.seed)?;
    w.u64(chain.meta.samples)?;
    for s in chain.norm.scales() {
        w.f64(s.as_f64())?;
    }
    for (n, g) in chain.grids.iter().enumerate() {
        w.f64(chain.meta.distortion.get(n).map_or(0.0, |d| d.as_f64()))?;
        for x in &g.points {
            w.f64(x.as_f64())?;
        }
        for x in &g.weights {
            w.f64(x.as_f64())?;
        }
        if n >= 1 {
            let p = chain.transition(n);
            for i in 0..p.nrows() {
                let (cols, probs) = p.row(i);
                w.u8(u8::from(p.is_flagged(i)))?;
                w.u32(cols.len() as u32)?;
                for (c, v) in cols.iter().zip(probs) {
                    w.u32(*c)?;
                    w.f64(v.as_f64())?;
                }
            }
        }
    }
    w.0.flush().map_err(|e| Error::Format(e.to_string()))
}

pub fn read_chain<F: Scalar, R: Read>(input: R) -> Result<QuantizedChain<F>> {
    let mut r = Reader(input);
    if &r.array::<8>()? != GRID_MAGIC {
        return Err(Error::Format("not a grid file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != GRID_VERSION {
        return Err(Error::Format(format!("unsupported grid file version {version}")));
    }
    let fingerprint = r.array::<32>()?;
    let horizon = r.u32()? as usize;
    let k = r.u32()? as usize;
    let dims = r.u32()? as usize;
    if k == 0 || dims == 0 {
        return Err(Error::Format("empty grid header".into()));
    }
    let seed = r.u64()?;
    let samples = r.u64()?;
    let scales = (0..dims).map(|_| r.f64().map(F::lit)).collect::<Result<Vec<_>>>()?;
    let norm = WeightedNorm::new(scales)?;
    let mut grids = Vec::with_capacity(horizon + 1);
    let mut transitions = Vec::with_capacity(horizon);
    let mut distortion = Vec::with_capacity(horizon + 1);
    for n in 0..=horizon {
        distortion.push(F::lit(r.f64()?));
        let points = (0..k * dims).map(|_| r.f64().map(F::lit)).collect::<Result<Vec<_>>>()?;
        let weights = (0..k).map(|_| r.f64().map(F::lit)).collect::<Result<Vec<_>>>()?;
        grids.push(Grid::new(n, dims, points, weights)?);
        if n >= 1 {
            let mut row_ptr = vec![0usize];
            let mut cols = Vec::new();
            let mut probs = Vec::new();
            let mut flagged = Vec::with_capacity(k);
            for _ in 0..k {
                flagged.push(r.u8()? != 0);
                let nnz = r.u32()? as usize;
                if nnz > k {
                    return Err(Error::Format("transition row longer than K".into()));
                }
                for _ in 0..nnz {
                    let c = r.u32()?;
                    if c as usize >= k {
                        return Err(Error::Format("transition column out of range".into()));
                    }
                    cols.push(c);
                    probs.push(F::lit(r.f64()?));
                }
                row_ptr.push(cols.len());
            }
            transitions.push(TransitionMatrix::from_parts(row_ptr, cols, probs, flagged, k));
        }
    }
    r.expect_end()?;
    let meta = TrainingMeta {
        seed,
        samples,
        distortion,
        fingerprint,
    };
    QuantizedChain::new(grids, transitions, norm, meta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainJson {
    pub version: u32,
    pub fingerprint: String,
    pub horizon: usize,
    pub k: usize,
    pub dims: usize,
    pub seed: u64,
    pub samples: u64,
    pub scales: Vec<f64>,
    pub stages: Vec<StageJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageJson {
    pub stage: usize,
    pub distortion: f64,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Rows of the transition matrix into this stage; absent for stage 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transitions: Option<Vec<RowJson>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowJson {
    pub flagged: bool,
    pub entries: Vec<(u32, f64)>,
}

fn hex32(b: &[u8; 32]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

fn unhex32(s: &str) -> Result<[u8; 32]> {
    if s.len() != 64 {
        return Err(Error::Format("fingerprint must be 64 hex digits".into()));
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(out)
}

impl<F: Scalar> QuantizedChain<F> {
    pub fn to_json(&self) -> ChainJson {
        let f = |v: &[F]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        ChainJson {
            version: GRID_VERSION,
            fingerprint: hex32(&self.meta.fingerprint),
            horizon: self.horizon(),
            k: self.k(),
            dims: self.dims(),
            seed: self.meta.seed,
            samples: self.meta.samples,
            scales: f(self.norm.scales()),
            stages: self
                .grids
                .iter()
                .enumerate()
                .map(|(n, g)| StageJson {
                    stage: n,
                    distortion: self.meta.distortion.get(n).map_or(0.0, |d| d.as_f64()),
                    points: g.iter().map(f).collect(),
                    weights: f(&g.weights),
                    transitions: (n >= 1).then(|| {
                        let p = self.transition(n);
                        (0..p.nrows())
                            .map(|i| {
                                let (c, v) = p.row(i);
                                RowJson {
                                    flagged: p.is_flagged(i),
                                    entries: c.iter().zip(v).map(|(c, v)| (*c, v.as_f64())).collect(),
                                }
                            })
                            .collect()
                    }),
                })
                .collect(),
        }
    }

    pub fn from_json(json: &ChainJson) -> Result<Self> {
        let lit = |v: &[f64]| v.iter().map(|x| F::lit(*x)).collect::<Vec<_>>();
        let norm = WeightedNorm::new(lit(&json.scales))?;
        let mut grids = Vec::new();
        let mut transitions = Vec::new();
        for (n, s) in json.stages.iter().enumerate() {
            let points = s.points.iter().flat_map(|p| lit(p)).collect();
            grids.push(Grid::new(n, json.dims, points, lit(&s.weights))?);
            if n >= 1 {
                let rows = s
                    .transitions
                    .as_ref()
                    .ok_or_else(|| Error::Format(format!("stage {n} lacks transitions")))?;
                let mut row_ptr = vec![0usize];
                let (mut cols, mut probs, mut flagged) = (Vec::new(), Vec::new(), Vec::new());
                for r in rows {
                    flagged.push(r.flagged);
                    for (c, v) in &r.entries {
                        cols.push(*c);
                        probs.push(F::lit(*v));
                    }
                    row_ptr.push(cols.len());
                }
                transitions.push(TransitionMatrix::from_parts(row_ptr, cols, probs, flagged, json.k));
            }
        }
        let meta = TrainingMeta {
            seed: json.seed,
            samples: json.samples,
            distortion: json.stages.iter().map(|s| F::lit(s.distortion)).collect(),
            fingerprint: unhex32(&json.fingerprint)?,
        };
        Self::new(grids, transitions, norm, meta)
    }
}
