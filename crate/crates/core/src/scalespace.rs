//! Scale-space stacks and the lift from images.
//!
//! A stack holds `S` copies of an image, level `k` blurred by the discrete
//! Gaussian of scale `t_k = s0 * 4^k - s0`. That is the extra blur an image
//! of base scale `s0` needs so that keeping every `2^k`-th pixel of it
//! matches an image acquired at `2^k` times coarser resolution. Level 0
//! is the image itself; no level is subsampled.
//!
//! On disk a stack is a `DSS1` file: the magic bytes, then `S, H, W, C` as
//! little-endian `u32`, then the values as little-endian `f64` in
//! level-major, row-major, channel-last order.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::kernels::{
    default_radius, discrete_gaussian_1d, radius_for, separable_blur_2d_with, Mat2, SpatialBoundary,
};

/// Base scale used throughout: a pixel is modelled as a Gaussian of variance 1/4.
pub const DEFAULT_S0: f64 = 0.25;

/// Blur scale `t(a, s0) = s0 / a^2 - s0` added by a dilation of factor `a`.
pub fn dilation_scale(a: f64, s0: f64) -> Result<f64> {
    if !(s0 > 0.0) || !s0.is_finite() {
        return Err(invalid(format!("base scale s0 must be positive, got {s0}")));
    }
    if !(a > 0.0) {
        return Err(Error::InvalidDilation(format!("factor {a} is not positive")));
    }
    if a > 1.0 {
        return Err(Error::InvalidDilation(format!(
            "factor {a} > 1 would need negative blur"
        )));
    }
    Ok(s0 / (a * a) - s0)
}

/// Scale of level `k`: `t(2^{-k}, s0)`.
pub fn level_scale(k: usize, s0: f64) -> Result<f64> {
    dilation_scale((-(k as f64)).exp2(), s0)
}

/// Anisotropic blur `T = A^{-1} S0 A^{-T} - S0` for a linear dilation `A`.
///
/// Fails with [`Error::InvalidDilation`] when `T` is not positive
/// semidefinite, i.e. when `A` stretches some direction.
pub fn anisotropic_scale_matrix(a: Mat2, sigma0: Mat2) -> Result<Mat2> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if det == 0.0 || !det.is_finite() {
        return Err(Error::InvalidDilation("dilation matrix is singular".into()));
    }
    let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
    let mut t = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut acc = 0.0;
            for p in 0..2 {
                for q in 0..2 {
                    acc += inv[i][p] * sigma0[p][q] * inv[j][q];
                }
            }
            t[i][j] = acc - sigma0[i][j];
        }
    }
    let off = 0.5 * (t[0][1] + t[1][0]);
    t[0][1] = off;
    t[1][0] = off;
    let trace = t[0][0] + t[1][1];
    let disc = ((t[0][0] - t[1][1]).powi(2) + 4.0 * off * off).sqrt();
    let smallest = 0.5 * (trace - disc);
    let tol = 1e-12 * (sigma0[0][0].abs() + sigma0[1][1].abs()).max(1.0) * (1.0 + trace.abs());
    if smallest < -tol {
        return Err(Error::InvalidDilation(format!(
            "blur matrix has negative eigenvalue {smallest:e}; the dilation enlarges some direction"
        )));
    }
    Ok(t)
}

/// `S` levels of an `H x W x C` signal, with the scale of each level.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleSpaceStack {
    levels: usize,
    height: usize,
    width: usize,
    channels: usize,
    s0: f64,
    level_scales: Vec<f64>,
    data: Vec<f64>,
}

impl ScaleSpaceStack {
    pub fn new(levels: usize, height: usize, width: usize, channels: usize, s0: f64, data: Vec<f64>) -> Result<Self> {
        if levels == 0 || height == 0 || width == 0 || channels == 0 {
            return Err(invalid(format!(
                "stack dimensions must be positive, got {levels}x{height}x{width}x{channels}"
            )));
        }
        if data.len() != levels * height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{levels}x{height}x{width}x{channels} stack needs {} values, got {}",
                levels * height * width * channels,
                data.len()
            )));
        }
        let level_scales = (0..levels).map(|k| level_scale(k, s0)).collect::<Result<_>>()?;
        Ok(Self { levels, height, width, channels, s0, level_scales, data })
    }

    pub fn zeros(levels: usize, height: usize, width: usize, channels: usize, s0: f64) -> Result<Self> {
        Self::new(levels, height, width, channels, s0, vec![0.0; levels * height * width * channels])
    }

    /// Stacks equally sized images, one per level.
    pub fn from_levels(images: &[Image], s0: f64) -> Result<Self> {
        let first = images.first().ok_or_else(|| invalid("no levels given"))?;
        let (h, w, c) = (first.height(), first.width(), first.channels());
        let mut data = Vec::with_capacity(images.len() * h * w * c);
        for (k, img) in images.iter().enumerate() {
            if (img.height(), img.width(), img.channels()) != (h, w, c) {
                return Err(Error::ShapeMismatch(format!(
                    "level {k} is {}x{}x{}, level 0 is {h}x{w}x{c}",
                    img.height(),
                    img.width(),
                    img.channels()
                )));
            }
            data.extend_from_slice(img.data());
        }
        Self::new(images.len(), h, w, c, s0, data)
    }

    pub fn levels(&self) -> usize {
        self.levels
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

    pub fn s0(&self) -> f64 {
        self.s0
    }

    /// Always 2: level `k` corresponds to a dilation by `2^{-k}`.
    pub fn base(&self) -> u32 {
        2
    }

    pub fn level_scales(&self) -> &[f64] {
        &self.level_scales
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn level_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn level(&self, k: usize) -> &[f64] {
        let n = self.level_len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn level_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.level_len();
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn level_image(&self, k: usize) -> Image {
        Image::new(self.height, self.width, self.channels, self.level(k).to_vec())
            .expect("level has image shape")
    }

    #[inline]
    pub fn index(&self, k: usize, y: usize, x: usize, c: usize) -> usize {
        ((k * self.height + y) * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, k: usize, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(k, y, x, c)]
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Same geometry and scales, new values.
    pub fn with_data(&self, channels: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(self.levels, self.height, self.width, channels, self.s0, data)
    }
}

/// How [`lift_with`] builds its kernels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LiftOptions {
    /// Kernel radius in standard deviations, rounded up.
    pub radius_sigmas: f64,
    pub boundary: SpatialBoundary,
}

impl Default for LiftOptions {
    fn default() -> Self {
        Self { radius_sigmas: 4.0, boundary: SpatialBoundary::Zero }
    }
}

/// Lifts `image` to `levels` scales with base scale `s0` and default options.
pub fn lift(image: &Image, levels: usize, s0: f64) -> Result<ScaleSpaceStack> {
    lift_with(image, levels, s0, &LiftOptions::default())
}

/// Lifts `image`: level `k` is the image blurred by the discrete Gaussian of
/// scale `t_k`, applied separably at the original resolution.
pub fn lift_with(image: &Image, levels: usize, s0: f64, opts: &LiftOptions) -> Result<ScaleSpaceStack> {
    if levels == 0 {
        return Err(invalid("a stack needs at least one level"));
    }
    if !(opts.radius_sigmas > 0.0) {
        return Err(invalid("kernel radius must be positive"));
    }
    let scales = (0..levels).map(|k| level_scale(k, s0)).collect::<Result<Vec<_>>>()?;
    let blurred = scales
        .par_iter()
        .map(|&t| {
            if t == 0.0 {
                return Ok(image.clone());
            }
            let g = discrete_gaussian_1d(t, radius_for(t, opts.radius_sigmas))?;
            separable_blur_2d_with(&g, &g, image, opts.boundary)
        })
        .collect::<Result<Vec<_>>>()?;
    ScaleSpaceStack::from_levels(&blurred, s0)
}

/// Relative L2 difference between level `k` and level `j < k` blurred by
/// `G(t_k - t_j)`, over pixels at least `ceil(6 sqrt(t_k))` from the border.
///
/// The transfer kernel has radius `ceil(6 sqrt(t_k - t_j))`.
pub fn recursivity_residual(stack: &ScaleSpaceStack, j: usize, k: usize) -> Result<f64> {
    if !(j < k && k < stack.levels()) {
        return Err(invalid(format!(
            "need j < k < {}, got j={j}, k={k}",
            stack.levels()
        )));
    }
    let scales = stack.level_scales();
    let dt = scales[k] - scales[j];
    let g = discrete_gaussian_1d(dt, radius_for(dt, 6.0))?;
    let from_j = separable_blur_2d_with(&g, &g, &stack.level_image(j), SpatialBoundary::Zero)?;
    let border = radius_for(scales[k], 6.0);
    let (h, w) = (stack.height(), stack.width());
    if 2 * border >= h || 2 * border >= w {
        return Err(invalid(format!(
            "{h}x{w} image has no pixels farther than {border} from the border"
        )));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for y in border..h - border {
        for x in border..w - border {
            for c in 0..stack.channels() {
                let want = stack.get(k, y, x, c);
                let d = from_j.get(y, x, c) - want;
                num += d * d;
                den += want * want;
            }
        }
    }
    if den == 0.0 {
        return Err(invalid(format!("level {k} is zero on the interior")));
    }
    Ok((num / den).sqrt())
}

/// Naive and band-limited subsampling of the same image.
#[derive(Clone, Debug, PartialEq)]
pub struct DownsampleDemo {
    /// Every `factor`-th pixel of the input.
    pub naive: Image,
    /// Every `factor`-th pixel after blurring by `t(1/factor, 1/4)`.
    pub bandlimited: Image,
    /// The blur scale used.
    pub scale: f64,
}

/// Subsamples `image` by `factor` with and without the matching blur.
pub fn downsample_demo(image: &Image, factor: usize) -> Result<DownsampleDemo> {
    if factor < 2 {
        return Err(invalid(format!("downsampling factor must be at least 2, got {factor}")));
    }
    let t = dilation_scale(1.0 / factor as f64, DEFAULT_S0)?;
    let g = discrete_gaussian_1d(t, default_radius(t))?;
    let blurred = separable_blur_2d_with(&g, &g, image, SpatialBoundary::Zero)?;
    Ok(DownsampleDemo {
        naive: image.subsample(factor)?,
        bandlimited: blurred.subsample(factor)?,
        scale: t,
    })
}

const STACK_MAGIC: &[u8; 4] = b"DSS1";

pub fn encode_stack(w: &mut impl Write, stack: &ScaleSpaceStack) -> Result<()> {
    w.write_all(STACK_MAGIC)?;
    for d in [stack.levels, stack.height, stack.width, stack.channels] {
        let d = u32::try_from(d).map_err(|_| invalid("stack dimension exceeds u32"))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for v in &stack.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a `DSS1` stream. The format has no scale metadata, so `s0` is supplied.
pub fn decode_stack(r: &mut impl Read, s0: f64) -> Result<ScaleSpaceStack> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("stack file too short for its DSS1 header".into()))?;
    if &magic != STACK_MAGIC {
        return Err(Error::Format(format!("not a DSS1 stack file (magic {magic:?})")));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)
            .map_err(|_| Error::Format("DSS1 header truncated".into()))?;
        *d = u32::from_le_bytes(b) as usize;
    }
    let [s, h, w, c] = dims;
    let n = s
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(c))
        .filter(|&n| n > 0 && n <= 1 << 31)
        .ok_or_else(|| Error::Format(format!("DSS1 dimensions {s}x{h}x{w}x{c} are unusable")))?;
    let mut raw = vec![0u8; n * 8];
    r.read_exact(&mut raw)
        .map_err(|_| Error::Format(format!("DSS1 payload truncated: expected {n} values")))?;
    let data = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    ScaleSpaceStack::new(s, h, w, c, s0, data)
}

pub fn write_stack(path: impl AsRef<Path>, stack: &ScaleSpaceStack) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    encode_stack(&mut f, stack)?;
    f.flush()?;
    Ok(())
}

pub fn read_stack(path: impl AsRef<Path>, s0: f64) -> Result<ScaleSpaceStack> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path.as_ref())?);
    decode_stack(&mut f, s0)
}
