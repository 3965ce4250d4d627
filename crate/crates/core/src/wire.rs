//! Binary message format for coordinator/worker exchange.
//!
//! Every record starts with a 4-byte magic `ISM1` and a one-byte tag,
//! followed by little-endian `u64` dimensions and little-endian `f64`
//! payload (complex numbers as `re, im` pairs).
//!
//! | tag | record        | header                              | payload        |
//! |-----|---------------|-------------------------------------|----------------|
//! | 1   | control field | steps, channels, t_start, τ (f64)   | steps·channels |
//! | 2   | complex vec   | dim                                 | 2·dim          |
//! | 3   | complex mat   | rows, cols                          | 2·rows·cols    |
//! | 4   | real vec      | len                                 | len            |

use crate::controls::{ControlField, TimeGrid};
use crate::error::{IsmError, Result};
use crate::linalg::{CMat, CVec, C64};

const MAGIC: &[u8; 4] = b"ISM1";
const TAG_CONTROL: u8 = 1;
const TAG_CVEC: u8 = 2;
const TAG_CMAT: u8 = 3;
const TAG_REAL: u8 = 4;

/// Appends records to a byte buffer.
#[derive(Default, Debug)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }

    fn header(&mut self, tag: u8) {
        self.buf.extend_from_slice(MAGIC);
        self.buf.push(tag);
    }

    fn u64(&mut self, v: usize) {
        self.buf.extend_from_slice(&(v as u64).to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn complex(&mut self, z: &[C64]) {
        self.buf.reserve(16 * z.len());
        for c in z {
            self.f64(c.re);
            self.f64(c.im);
        }
    }

    pub fn control(&mut self, u: &ControlField) -> &mut Self {
        self.header(TAG_CONTROL);
        self.u64(u.steps());
        self.u64(u.channels());
        self.f64(u.grid().t_start());
        self.f64(u.grid().tau());
        for &x in u.as_slice() {
            self.f64(x);
        }
        self
    }

    pub fn cvec(&mut self, v: &CVec) -> &mut Self {
        self.header(TAG_CVEC);
        self.u64(v.dim());
        self.complex(v.as_slice());
        self
    }

    pub fn cmat(&mut self, m: &CMat) -> &mut Self {
        self.header(TAG_CMAT);
        self.u64(m.rows());
        self.u64(m.cols());
        self.complex(m.as_slice());
        self
    }

    pub fn reals(&mut self, v: &[f64]) -> &mut Self {
        self.header(TAG_REAL);
        self.u64(v.len());
        for &x in v {
            self.f64(x);
        }
        self
    }
}

/// Reads records back in the order they were written.
#[derive(Debug)]
pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn is_exhausted(&self) -> bool {
        self.pos == self.buf.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| IsmError::Wire(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn header(&mut self, tag: u8) -> Result<()> {
        let m = self.take(4)?;
        if m != MAGIC {
            return Err(IsmError::Wire(format!("bad magic at byte {}", self.pos - 4)));
        }
        let t = self.take(1)?[0];
        if t != tag {
            return Err(IsmError::Wire(format!("expected record tag {tag}, found {t}")));
        }
        Ok(())
    }

    fn u64(&mut self) -> Result<usize> {
        let b: [u8; 8] = self.take(8)?.try_into().unwrap();
        usize::try_from(u64::from_le_bytes(b)).map_err(|_| IsmError::Wire("dimension overflow".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        let b: [u8; 8] = self.take(8)?.try_into().unwrap();
        Ok(f64::from_le_bytes(b))
    }

    fn count(&mut self, n: usize, width: usize) -> Result<()> {
        match n.checked_mul(width) {
            Some(bytes) if self.pos + bytes <= self.buf.len() => Ok(()),
            _ => Err(IsmError::Wire(format!("payload of {n} entries exceeds message"))),
        }
    }

    fn complex(&mut self, n: usize) -> Result<Vec<C64>> {
        self.count(n, 16)?;
        (0..n).map(|_| Ok(C64::new(self.f64()?, self.f64()?))).collect()
    }

    pub fn control(&mut self) -> Result<ControlField> {
        self.header(TAG_CONTROL)?;
        let steps = self.u64()?;
        let channels = self.u64()?;
        let t0 = self.f64()?;
        let tau = self.f64()?;
        let n = steps
            .checked_mul(channels)
            .ok_or_else(|| IsmError::Wire("dimension overflow".into()))?;
        self.count(n, 8)?;
        let samples = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        let grid = TimeGrid::with_step(t0, tau, steps).map_err(|e| IsmError::Wire(e.to_string()))?;
        ControlField::new(grid, channels, samples).map_err(|e| IsmError::Wire(e.to_string()))
    }

    pub fn cvec(&mut self) -> Result<CVec> {
        self.header(TAG_CVEC)?;
        let n = self.u64()?;
        Ok(CVec::new(self.complex(n)?))
    }

    pub fn cmat(&mut self) -> Result<CMat> {
        self.header(TAG_CMAT)?;
        let r = self.u64()?;
        let c = self.u64()?;
        let n = r
            .checked_mul(c)
            .ok_or_else(|| IsmError::Wire("dimension overflow".into()))?;
        CMat::from_vec(r, c, self.complex(n)?).map_err(|e| IsmError::Wire(e.to_string()))
    }

    pub fn reals(&mut self) -> Result<Vec<f64>> {
        self.header(TAG_REAL)?;
        let n = self.u64()?;
        self.count(n, 8)?;
        (0..n).map(|_| self.f64()).collect()
    }
}
