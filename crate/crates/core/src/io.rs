//! SFC1 array container and CSV helpers.
//!
//! An SFC1 file is little-endian throughout:
//!
//! ```text
//! "SFC1" | version: u32 = 1 | count: u32
//! count × ( name_len: u32 | name: UTF-8 | dtype: u8 (1 = f64, 2 = c128)
//!          | ndim: u8 | dims: ndim × u64 | payload: row-major values )
//! ```
//!
//! Complex values are stored as interleaved `(re, im)` pairs.

use std::collections::HashSet;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SFC1";
pub const VERSION: u32 = 1;

/// One array stored in a container.
#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    Real(ArrayD<f64>),
    Complex(ArrayD<Complex64>),
}

impl ArrayData {
    pub fn shape(&self) -> &[usize] {
        match self {
            ArrayData::Real(a) => a.shape(),
            ArrayData::Complex(a) => a.shape(),
        }
    }

    fn dtype(&self) -> u8 {
        match self {
            ArrayData::Real(_) => 1,
            ArrayData::Complex(_) => 2,
        }
    }
}

/// Ordered collection of uniquely named arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sfc1 {
    pub arrays: Vec<(String, ArrayData)>,
}

impl Sfc1 {
    pub fn new() -> Self {
        Sfc1::default()
    }

    pub fn push(&mut self, name: impl Into<String>, data: ArrayData) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::Format(format!("duplicate array name {name:?}")));
        }
        self.arrays.push((name, data));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ArrayData> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, d)| d)
    }

    pub fn real(&self, name: &str) -> Result<&ArrayD<f64>> {
        match self.get(name) {
            Some(ArrayData::Real(a)) => Ok(a),
            Some(_) => Err(Error::Format(format!("array {name:?} is not real"))),
            None => Err(Error::Format(format!("missing array {name:?}"))),
        }
    }

    pub fn complex(&self, name: &str) -> Result<&ArrayD<Complex64>> {
        match self.get(name) {
            Some(ArrayData::Complex(a)) => Ok(a),
            Some(_) => Err(Error::Format(format!("array {name:?} is not complex"))),
            None => Err(Error::Format(format!("missing array {name:?}"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, data) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(data.dtype());
            out.push(data.shape().len() as u8);
            for &d in data.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match data {
                ArrayData::Real(a) => a.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                ArrayData::Complex(a) => a.iter().for_each(|v| {
                    out.extend_from_slice(&v.re.to_le_bytes());
                    out.extend_from_slice(&v.im.to_le_bytes());
                }),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic, not an SFC1 file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported SFC1 version {version}")));
        }
        let count = r.u32()?;
        let mut out = Sfc1::new();
        let mut seen = HashSet::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format("array name is not UTF-8".into()))?;
            if !seen.insert(name.clone()) {
                return Err(Error::Format(format!("duplicate array name {name:?}")));
            }
            let dtype = r.take(1)?[0];
            let ndim = r.take(1)?[0] as usize;
            let dims = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len: usize = dims.iter().product();
            let data = match dtype {
                1 => {
                    let v = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                    ArrayData::Real(ArrayD::from_shape_vec(IxDyn(&dims), v).expect("length checked"))
                }
                2 => {
                    let v = (0..len)
                        .map(|_| Ok(Complex64::new(r.f64()?, r.f64()?)))
                        .collect::<Result<Vec<_>>>()?;
                    ArrayData::Complex(ArrayD::from_shape_vec(IxDyn(&dims), v).expect("length checked"))
                }
                d => return Err(Error::Format(format!("unknown dtype code {d}"))),
            };
            out.arrays.push((name, data));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Sfc1::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(k).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated SFC1 payload".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
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
}

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV text with a header row and `'\n'` line endings.
pub fn csv(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Two-column `k,value` spectrum CSV.
pub fn spectrum_csv(curve: &crate::norms::SpectrumCurve) -> String {
    let rows: Vec<Vec<f64>> = curve.k_bins.iter().zip(&curve.values).map(|(k, v)| vec![*k, *v]).collect();
    csv(&["k", "value"], &rows)
}
