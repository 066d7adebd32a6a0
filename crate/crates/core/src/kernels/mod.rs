//! Smoothing kernels for building scale-spaces.
//!
//! The main family is the discrete Gaussian `G(x, t) = e^{-t} I_{|x|}(t)`,
//! the Green's function of the heat equation on the integer lattice. It has
//! unit mass and variance `t`, and `G(., s) * G(., t) = G(., s + t)` holds
//! exactly on the untruncated kernels. Truncation to a finite radius loses a
//! little mass; the loss is reported by [`Kernel1D::mass_deficit`] and never
//! hidden by silent renormalisation.
//!
//! Alternatives offered for comparison:
//!
//! * binomial kernels `C(N, x) / 2^N`, the `N`-fold convolution of `[1/2, 1/2]`;
//! * sampled continuous Gaussians, which do not form a semigroup;
//! * alpha-scale-space kernels with Fourier transform `exp(-|w|^{2 alpha} t)`.

mod bessel;
mod conv;

pub use bessel::{bessel_i_scaled, bessel_i_scaled_orders};
pub use conv::{convolve_1d, filter_axis, separable_blur_2d, separable_blur_2d_with, Axis};

use crate::error::{invalid, Error, Result};
use crate::image::Image;

/// What to assume about pixels outside the image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum SpatialBoundary {
    /// Pixels outside the image are zero.
    #[default]
    Zero,
    /// The image tiles the plane; coordinates wrap around.
    Periodic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    DiscreteGaussian,
    Binomial,
    SampledGaussian,
    Alpha,
}

/// A finite 1-D kernel. Tap `j` sits at offset `j - origin`.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel1D {
    taps: Vec<f64>,
    origin: usize,
    scale: f64,
    family: KernelFamily,
}

impl Kernel1D {
    /// Wraps explicit taps. `origin` indexes the tap at offset zero.
    pub fn from_taps(taps: Vec<f64>, origin: usize, scale: f64, family: KernelFamily) -> Result<Self> {
        if taps.is_empty() || origin >= taps.len() {
            return Err(invalid(format!(
                "kernel origin {origin} outside {} taps",
                taps.len()
            )));
        }
        Ok(Self { taps, origin, scale, family })
    }

    /// The unit impulse (scale zero).
    pub fn identity() -> Self {
        Self { taps: vec![1.0], origin: 0, scale: 0.0, family: KernelFamily::DiscreteGaussian }
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn origin(&self) -> usize {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Largest offset from the origin covered by a tap.
    pub fn radius(&self) -> usize {
        self.origin.max(self.taps.len() - 1 - self.origin)
    }

    /// The variance parameter the kernel was built for.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    /// Tap at signed offset `x`, zero outside the support.
    pub fn at(&self, x: i64) -> f64 {
        let j = x + self.origin as i64;
        if j < 0 || j >= self.taps.len() as i64 {
            0.0
        } else {
            self.taps[j as usize]
        }
    }

    pub fn mass(&self) -> f64 {
        self.taps.iter().sum()
    }

    /// `1 - sum(taps)`: the mass lost to truncation.
    pub fn mass_deficit(&self) -> f64 {
        1.0 - self.mass()
    }

    /// A copy rescaled to unit mass.
    pub fn normalized(&self) -> Kernel1D {
        let m = self.mass();
        Kernel1D { taps: self.taps.iter().map(|v| v / m).collect(), ..self.clone() }
    }

    /// Full (untruncated) convolution of two kernels. Scales add.
    pub fn convolve(&self, other: &Kernel1D) -> Kernel1D {
        let mut taps = vec![0.0; self.taps.len() + other.taps.len() - 1];
        for (i, a) in self.taps.iter().enumerate() {
            for (j, b) in other.taps.iter().enumerate() {
                taps[i + j] += a * b;
            }
        }
        Kernel1D {
            taps,
            origin: self.origin + other.origin,
            scale: self.scale + other.scale,
            family: self.family,
        }
    }
}

/// `ceil(m * sqrt(t))`, the truncation radius covering `m` standard deviations.
pub fn radius_for(t: f64, sigmas: f64) -> usize {
    (sigmas * t.max(0.0).sqrt()).ceil() as usize
}

/// The default truncation radius `ceil(4 sqrt(t))`.
pub fn default_radius(t: f64) -> usize {
    radius_for(t, 4.0)
}

/// Discrete Gaussian of variance `t` truncated to `[-radius, radius]`.
///
/// The taps are not renormalised; see [`Kernel1D::mass_deficit`].
pub fn discrete_gaussian_1d(t: f64, radius: usize) -> Result<Kernel1D> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid(format!("scale must be finite and non-negative, got {t}")));
    }
    let orders = bessel_i_scaled_orders(radius, t)?;
    let mut taps = Vec::with_capacity(2 * radius + 1);
    taps.extend(orders.iter().rev());
    taps.extend(&orders[1..]);
    Ok(Kernel1D { taps, origin: radius, scale: t, family: KernelFamily::DiscreteGaussian })
}

const BINOMIAL_EXACT_MAX: u32 = 60;

/// Binomial kernel `C(n, x) / 2^n` for `x` in `0..=n`, anchored at `floor(n / 2)`.
///
/// Its variance is `n / 4`, which is stored as the scale. Up to `n = 60`
/// the coefficients are exact integers before the final division.
pub fn binomial_kernel(n: u32) -> Result<Kernel1D> {
    if n > 1 << 20 {
        return Err(invalid(format!("binomial order {n} is unreasonably large")));
    }
    let taps = if n <= BINOMIAL_EXACT_MAX {
        let denom = (n as f64).exp2();
        let mut c: u128 = 1;
        let mut taps = Vec::with_capacity(n as usize + 1);
        for x in 0..=n as u128 {
            taps.push(c as f64 / denom);
            c = c * (n as u128 - x) / (x + 1);
        }
        taps
    } else {
        let mut ln_fact = Vec::with_capacity(n as usize + 1);
        let mut acc = 0.0;
        ln_fact.push(0.0);
        for k in 1..=n {
            acc += (k as f64).ln();
            ln_fact.push(acc);
        }
        let ln_denom = n as f64 * std::f64::consts::LN_2;
        (0..=n as usize)
            .map(|x| (ln_fact[n as usize] - ln_fact[x] - ln_fact[n as usize - x] - ln_denom).exp())
            .collect()
    };
    Ok(Kernel1D {
        taps,
        origin: (n / 2) as usize,
        scale: n as f64 / 4.0,
        family: KernelFamily::Binomial,
    })
}

/// Samples of the continuous Gaussian density with variance `t`.
pub fn sampled_gaussian_1d(t: f64, radius: usize) -> Result<Kernel1D> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(invalid(format!("sampled Gaussian needs a positive scale, got {t}")));
    }
    let norm = 1.0 / (2.0 * std::f64::consts::PI * t).sqrt();
    let taps = (0..=2 * radius)
        .map(|j| {
            let x = j as f64 - radius as f64;
            norm * (-x * x / (2.0 * t)).exp()
        })
        .collect();
    Ok(Kernel1D { taps, origin: radius, scale: t, family: KernelFamily::SampledGaussian })
}

/// Alpha-scale-space kernel on a periodic grid of odd `length`.
///
/// The taps are the inverse DFT of `exp(-|w_j|^{2 alpha} t)` at the
/// frequencies `w_j = 2 pi j / length`, `j = -r..=r`. For `alpha = 1` this is
/// a periodised Gaussian of variance `2 t`.
pub fn alpha_kernel_1d(alpha: f64, t: f64, length: usize) -> Result<Kernel1D> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid(format!("scale must be finite and non-negative, got {t}")));
    }
    if length.is_multiple_of(2) {
        return Err(invalid(format!("alpha kernel length must be odd, got {length}")));
    }
    let r = (length / 2) as i64;
    let l = length as f64;
    let spectrum: Vec<(f64, f64)> = (-r..=r)
        .map(|j| {
            let w = 2.0 * std::f64::consts::PI * j as f64 / l;
            (w, (-w.abs().powf(2.0 * alpha) * t).exp())
        })
        .collect();
    let mut taps = Vec::with_capacity(length);
    for x in -r..=r {
        let (mut re, mut im) = (0.0, 0.0);
        for &(w, h) in &spectrum {
            let (s, c) = (w * x as f64).sin_cos();
            re += h * c;
            im += h * s;
        }
        if (im / l).abs() >= 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "alpha kernel tap {x} has imaginary part {:e}",
                im / l
            )));
        }
        taps.push(re / l);
    }
    Ok(Kernel1D { taps, origin: r as usize, scale: t, family: KernelFamily::Alpha })
}

/// A symmetric 2x2 matrix `[[xx, xy], [xy, yy]]` in (column, row) coordinates.
pub type Mat2 = [[f64; 2]; 2];

#[derive(Clone, Debug, PartialEq)]
enum Repr {
    Separable { x: Kernel1D, y: Kernel1D },
    Dense { grid: Vec<f64>, radius: usize },
}

/// A 2-D smoothing kernel, either separable or a dense square grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel2D {
    repr: Repr,
    scale: Mat2,
}

impl Kernel2D {
    /// Product kernel `kx(x) ky(y)`; `kx` runs along columns.
    pub fn separable(kx: Kernel1D, ky: Kernel1D) -> Self {
        let scale = [[kx.scale(), 0.0], [0.0, ky.scale()]];
        Self { repr: Repr::Separable { x: kx, y: ky }, scale }
    }

    /// Isotropic discrete Gaussian of scale `t`.
    pub fn isotropic(t: f64, radius: usize) -> Result<Self> {
        let k = discrete_gaussian_1d(t, radius)?;
        Ok(Self::separable(k.clone(), k))
    }

    /// Gaussian with scale matrix `scale`.
    ///
    /// A diagonal matrix gives a separable pair of discrete Gaussians. A
    /// matrix with off-diagonal terms has no separable discrete analogue, so
    /// a sampled anisotropic Gaussian on a dense grid is returned instead,
    /// normalised to unit mass.
    pub fn gaussian(scale: Mat2, radius: usize) -> Result<Self> {
        let [[a, b], [b2, d]] = scale;
        if (b - b2).abs() > 1e-12 * (a.abs() + d.abs()).max(1.0) {
            return Err(invalid("scale matrix must be symmetric"));
        }
        if b == 0.0 {
            let kx = discrete_gaussian_1d(a, radius)?;
            let ky = discrete_gaussian_1d(d, radius)?;
            return Ok(Self::separable(kx, ky));
        }
        let det = a * d - b * b;
        if !(det > 0.0) {
            return Err(invalid(format!(
                "anisotropic scale matrix must be positive definite, det = {det}"
            )));
        }
        let (ia, ib, id) = (d / det, -b / det, a / det);
        let n = 2 * radius + 1;
        let mut grid = Vec::with_capacity(n * n);
        for row in 0..n {
            let v = row as f64 - radius as f64;
            for col in 0..n {
                let u = col as f64 - radius as f64;
                grid.push((-0.5 * (ia * u * u + 2.0 * ib * u * v + id * v * v)).exp());
            }
        }
        let total: f64 = grid.iter().sum();
        grid.iter_mut().for_each(|g| *g /= total);
        Ok(Self { repr: Repr::Dense { grid, radius }, scale })
    }

    pub fn scale(&self) -> Mat2 {
        self.scale
    }

    pub fn is_separable(&self) -> bool {
        matches!(self.repr, Repr::Separable { .. })
    }

    /// Row-major `(2r+1) x (2r+1)` grid, `r` being the larger of the two radii.
    pub fn to_dense(&self) -> (Vec<f64>, usize) {
        match &self.repr {
            Repr::Dense { grid, radius } => (grid.clone(), *radius),
            Repr::Separable { x, y } => {
                let r = x.radius().max(y.radius());
                let n = 2 * r + 1;
                let mut grid = Vec::with_capacity(n * n);
                for row in 0..n {
                    for col in 0..n {
                        grid.push(y.at(row as i64 - r as i64) * x.at(col as i64 - r as i64));
                    }
                }
                (grid, r)
            }
        }
    }

    pub fn mass(&self) -> f64 {
        match &self.repr {
            Repr::Dense { grid, .. } => grid.iter().sum(),
            Repr::Separable { x, y } => x.mass() * y.mass(),
        }
    }

    /// Convolves every channel of `image` with the kernel.
    pub fn apply(&self, image: &Image, boundary: SpatialBoundary) -> Result<Image> {
        match &self.repr {
            Repr::Separable { x, y } => separable_blur_2d_with(x, y, image, boundary),
            Repr::Dense { grid, radius } => Ok(dense_blur(grid, *radius, image, boundary)),
        }
    }
}

fn dense_blur(grid: &[f64], radius: usize, image: &Image, boundary: SpatialBoundary) -> Image {
    let (h, w, ch) = (image.height() as i64, image.width() as i64, image.channels());
    let n = 2 * radius + 1;
    let r = radius as i64;
    Image::from_fn(image.height(), image.width(), ch, |y, x, c| {
        let mut acc = 0.0;
        for a in 0..n {
            let sy = y as i64 + r - a as i64;
            let sy = match boundary {
                SpatialBoundary::Zero if sy < 0 || sy >= h => continue,
                SpatialBoundary::Zero => sy,
                SpatialBoundary::Periodic => sy.rem_euclid(h),
            };
            for b in 0..n {
                let sx = x as i64 + r - b as i64;
                let sx = match boundary {
                    SpatialBoundary::Zero if sx < 0 || sx >= w => continue,
                    SpatialBoundary::Zero => sx,
                    SpatialBoundary::Periodic => sx.rem_euclid(w),
                };
                acc += grid[a * n + b] * image.get(sy as usize, sx as usize, c);
            }
        }
        acc
    })
}
