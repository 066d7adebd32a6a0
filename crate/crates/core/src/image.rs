//! Multi-channel images and binary Netpbm (PGM/PPM) I/O.
//!
//! Pixels are stored channel-last: the value of channel `c` at row `y`,
//! column `x` lives at `(y * width + x) * channels + c`.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{invalid, Error, Result};

/// A dense `height x width x channels` image of `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(invalid(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    /// Builds an image from `f(y, x, c)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self { height, width, channels, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Keeps every `factor`-th pixel in both directions, starting at the origin.
    pub fn subsample(&self, factor: usize) -> Result<Image> {
        if factor == 0 {
            return Err(invalid("subsampling factor must be positive"));
        }
        let h = self.height.div_ceil(factor);
        let w = self.width.div_ceil(factor);
        Ok(Image::from_fn(h, w, self.channels, |y, x, c| self.get(y * factor, x * factor, c)))
    }

    /// Multiplies every value by `s`.
    pub fn scaled(&self, s: f64) -> Image {
        Image { data: self.data.iter().map(|v| v * s).collect(), ..self.clone() }
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Reads a binary PGM (P5, one channel) or PPM (P6, three channels) file.
/// Samples are scaled to `[0, 1]` by the header's maxval.
pub fn read_pnm(path: impl AsRef<Path>) -> Result<Image> {
    let file = std::fs::File::open(path.as_ref())?;
    decode_pnm(BufReader::new(file))
}

/// Decodes P5/P6 data from a reader.
pub fn decode_pnm(mut r: impl BufRead) -> Result<Image> {
    let magic = header_token(&mut r)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => {
            return Err(Error::Format(format!(
                "not a binary PGM/PPM file (magic {other:?}, expected P5 or P6)"
            )))
        }
    };
    let width = header_number(&mut r, "width")?;
    let height = header_number(&mut r, "height")?;
    let maxval = header_number(&mut r, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("PGM/PPM header has empty size {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("PGM/PPM maxval {maxval} outside 1..=65535")));
    }
    let bytes_per_sample = if maxval < 256 { 1 } else { 2 };
    let n = width * height * channels;
    let mut raw = vec![0u8; n * bytes_per_sample];
    r.read_exact(&mut raw).map_err(|_| {
        Error::Format(format!("PGM/PPM raster truncated: expected {} bytes", raw.len()))
    })?;
    let scale = 1.0 / maxval as f64;
    let data = if bytes_per_sample == 1 {
        raw.iter().map(|&b| b as f64 * scale).collect()
    } else {
        raw.chunks_exact(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]) as f64 * scale)
            .collect()
    };
    Image::new(height, width, channels, data)
}

fn header_token(r: &mut impl BufRead) -> Result<String> {
    let mut token = Vec::new();
    loop {
        let mut byte = [0u8; 1];
        if r.read(&mut byte)? == 0 {
            if token.is_empty() {
                return Err(Error::Format("PGM/PPM header ended unexpectedly".into()));
            }
            break;
        }
        let b = byte[0];
        if b == b'#' && token.is_empty() {
            let mut comment = Vec::new();
            r.read_until(b'\n', &mut comment)?;
            continue;
        }
        if b.is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            break;
        }
        token.push(b);
        if token.len() > 16 {
            return Err(Error::Format("PGM/PPM header token too long".into()));
        }
    }
    String::from_utf8(token).map_err(|_| Error::Format("PGM/PPM header is not ASCII".into()))
}

fn header_number(r: &mut impl BufRead, what: &str) -> Result<usize> {
    let tok = header_token(r)?;
    tok.parse()
        .map_err(|_| Error::Format(format!("PGM/PPM header: bad {what} {tok:?}")))
}

/// Writes `image` as an 8-bit P5 (one channel) or P6 (three channels) file.
/// Values are clamped to `[0, 1]` and rounded to the nearest of 256 levels.
pub fn write_pnm(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    encode_pnm(&mut f, image)?;
    f.flush()?;
    Ok(())
}

pub fn encode_pnm(w: &mut impl Write, image: &Image) -> Result<()> {
    let magic = match image.channels() {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(invalid(format!("PGM/PPM output needs 1 or 3 channels, image has {c}")))
        }
    };
    write!(w, "{magic}\n{} {}\n255\n", image.width(), image.height())?;
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    Ok(())
}
