use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};

/// Shape of a scale-correlation filter bank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BankShape {
    /// Number of scale slices `K_s` (1 or 2).
    pub ks: usize,
    pub kh: usize,
    pub kw: usize,
    pub cin: usize,
    pub cout: usize,
}

impl BankShape {
    pub fn new(ks: usize, kh: usize, kw: usize, cin: usize, cout: usize) -> Result<Self> {
        let s = Self { ks, kh, kw, cin, cout };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.ks) {
            return Err(invalid(format!("scale extent must be 1 or 2, got {}", self.ks)));
        }
        if self.kh.is_multiple_of(2) || self.kw.is_multiple_of(2) {
            return Err(invalid(format!(
                "spatial extent must be odd, got {}x{}",
                self.kh, self.kw
            )));
        }
        if self.cin == 0 || self.cout == 0 {
            return Err(invalid("channel counts must be positive"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ks * self.kh * self.kw * self.cin * self.cout
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inputs feeding each output: `K_s kh kw C_in`.
    pub fn fan_in(&self) -> usize {
        self.ks * self.kh * self.kw * self.cin
    }
}

/// Weights `psi[l][y][i][o]` of one scale-correlation layer.
///
/// `l` is the scale slice, `y = (row, col)` the spatial tap (row-major), `i`
/// the input channel and `o` the output channel, stored in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    shape: BankShape,
    weights: Vec<f64>,
}

impl FilterBank {
    pub fn new(shape: BankShape, weights: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if weights.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "bank {shape:?} needs {} weights, got {}",
                shape.len(),
                weights.len()
            )));
        }
        Ok(Self { shape, weights })
    }

    pub fn zeros(shape: BankShape) -> Result<Self> {
        Self::new(shape, vec![0.0; shape.len()])
    }

    pub fn shape(&self) -> BankShape {
        self.shape
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    #[inline]
    pub fn index(&self, l: usize, row: usize, col: usize, i: usize, o: usize) -> usize {
        let s = &self.shape;
        (((l * s.kh + row) * s.kw + col) * s.cin + i) * s.cout + o
    }

    #[inline]
    pub fn get(&self, l: usize, row: usize, col: usize, i: usize, o: usize) -> f64 {
        self.weights[self.index(l, row, col, i, o)]
    }

    pub fn set(&mut self, l: usize, row: usize, col: usize, i: usize, o: usize, v: f64) {
        let idx = self.index(l, row, col, i, o);
        self.weights[idx] = v;
    }

    /// I.i.d. `N(0, std^2)` weights.
    pub fn random_normal(shape: BankShape, std: f64, rng: &mut impl Rng) -> Result<Self> {
        shape.validate()?;
        let dist = Normal::new(0.0, std).map_err(|e| invalid(format!("bad std {std}: {e}")))?;
        Ok(Self { shape, weights: (0..shape.len()).map(|_| dist.sample(rng)).collect() })
    }

    /// He initialisation: `N(0, 2 / fan_in)`.
    pub fn he_normal(shape: BankShape, rng: &mut impl Rng) -> Result<Self> {
        Self::random_normal(shape, (2.0 / shape.fan_in() as f64).sqrt(), rng)
    }
}

/// Overwrites `bank` with a near-identity: weight 1 at scale slice 0,
/// the spatial centre and input channel `o mod C_in` for each output `o`,
/// Gaussian noise of standard deviation `noise_std` everywhere else.
pub fn init_identity(bank: &mut FilterBank, noise_std: f64, seed: u64) -> Result<()> {
    init_identity_with(bank, noise_std, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// [`init_identity`] drawing noise from a caller-supplied generator.
pub fn init_identity_with(bank: &mut FilterBank, noise_std: f64, rng: &mut impl Rng) -> Result<()> {
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(invalid(format!("noise std must be non-negative, got {noise_std}")));
    }
    if noise_std == 0.0 {
        bank.weights.iter_mut().for_each(|w| *w = 0.0);
    } else {
        let dist = Normal::new(0.0, noise_std).expect("finite positive std");
        bank.weights.iter_mut().for_each(|w| *w = dist.sample(rng));
    }
    let s = bank.shape;
    for o in 0..s.cout {
        bank.set(0, s.kh / 2, s.kw / 2, o % s.cin, o, 1.0);
    }
    Ok(())
}

const BANK_MAGIC: &[u8; 4] = b"DSSW";

/// Writes a `DSSW` record: magic, `K_s, kh, kw, C_in, C_out` as
/// little-endian `u32`, then the weights as little-endian `f64`.
pub fn encode_bank(w: &mut impl Write, bank: &FilterBank) -> Result<()> {
    w.write_all(BANK_MAGIC)?;
    let s = bank.shape;
    for d in [s.ks, s.kh, s.kw, s.cin, s.cout] {
        let d = u32::try_from(d).map_err(|_| invalid("bank dimension exceeds u32"))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for v in &bank.weights {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads one `DSSW` record. Returns `Ok(None)` at a clean end of input.
pub fn decode_bank(r: &mut impl Read) -> Result<Option<FilterBank>> {
    let mut magic = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        let n = r.read(&mut magic[got..])?;
        if n == 0 {
            break;
        }
        got += n;
    }
    if got == 0 {
        return Ok(None);
    }
    if got < 4 || &magic != BANK_MAGIC {
        return Err(Error::Format("not a DSSW weight record".into()));
    }
    let mut dims = [0usize; 5];
    for d in &mut dims {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)
            .map_err(|_| Error::Format("DSSW header truncated".into()))?;
        *d = u32::from_le_bytes(b) as usize;
    }
    let [ks, kh, kw, cin, cout] = dims;
    let shape = BankShape::new(ks, kh, kw, cin, cout)
        .map_err(|e| Error::Format(format!("DSSW header: {e}")))?;
    if shape.len() > 1 << 28 {
        return Err(Error::Format(format!("DSSW bank {shape:?} is implausibly large")));
    }
    let mut raw = vec![0u8; shape.len() * 8];
    r.read_exact(&mut raw)
        .map_err(|_| Error::Format(format!("DSSW payload truncated: expected {} weights", shape.len())))?;
    let weights = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    Ok(Some(FilterBank { shape, weights }))
}

/// Reads every `DSSW` record of a stream, in order.
pub fn decode_banks(r: &mut impl Read) -> Result<Vec<FilterBank>> {
    let mut out = Vec::new();
    while let Some(b) = decode_bank(r)? {
        out.push(b);
    }
    Ok(out)
}
