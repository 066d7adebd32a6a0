use super::{Kernel1D, SpatialBoundary};
use crate::error::{invalid, Result};
use crate::image::Image;

/// Image axis along which a 1-D kernel is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Along a row (the column index varies).
    X,
    /// Along a column (the row index varies).
    Y,
}

/// Same-length convolution with zero padding:
/// `out[i] = sum_j taps[j] * signal[i + origin - j]`.
pub fn convolve_1d(kernel: &Kernel1D, signal: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; signal.len()];
    convolve_line(kernel, signal, &mut out, SpatialBoundary::Zero);
    out
}

fn convolve_line(kernel: &Kernel1D, src: &[f64], dst: &mut [f64], boundary: SpatialBoundary) {
    let n = src.len() as i64;
    let origin = kernel.origin() as i64;
    let taps = kernel.taps();
    for (i, out) in dst.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &k) in taps.iter().enumerate() {
            let s = i as i64 + origin - j as i64;
            match boundary {
                SpatialBoundary::Zero => {
                    if s >= 0 && s < n {
                        acc += k * src[s as usize];
                    }
                }
                SpatialBoundary::Periodic => acc += k * src[s.rem_euclid(n) as usize],
            }
        }
        *out = acc;
    }
}

/// Convolves every line of `image` along `axis`, channel by channel.
pub fn filter_axis(kernel: &Kernel1D, image: &Image, axis: Axis, boundary: SpatialBoundary) -> Image {
    let (h, w, ch) = (image.height(), image.width(), image.channels());
    let mut out = Image::zeros(h, w, ch);
    let (lines, len) = match axis {
        Axis::X => (h, w),
        Axis::Y => (w, h),
    };
    let index = |line: usize, pos: usize, c: usize| match axis {
        Axis::X => (line * w + pos) * ch + c,
        Axis::Y => (pos * w + line) * ch + c,
    };
    let mut src = vec![0.0; len];
    let mut dst = vec![0.0; len];
    let data = image.data();
    for line in 0..lines {
        for c in 0..ch {
            for (p, v) in src.iter_mut().enumerate() {
                *v = data[index(line, p, c)];
            }
            convolve_line(kernel, &src, &mut dst, boundary);
            let o = out.data_mut();
            for (p, v) in dst.iter().enumerate() {
                o[index(line, p, c)] = *v;
            }
        }
    }
    out
}

/// Separable 2-D convolution with zero padding: `kx` along rows, then `ky`
/// along columns.
pub fn separable_blur_2d(kx: &Kernel1D, ky: &Kernel1D, image: &Image) -> Result<Image> {
    separable_blur_2d_with(kx, ky, image, SpatialBoundary::Zero)
}

/// [`separable_blur_2d`] with a choice of boundary handling.
pub fn separable_blur_2d_with(
    kx: &Kernel1D,
    ky: &Kernel1D,
    image: &Image,
    boundary: SpatialBoundary,
) -> Result<Image> {
    if kx.is_empty() || ky.is_empty() {
        return Err(invalid("empty kernel"));
    }
    let rows = filter_axis(kx, image, Axis::X, boundary);
    Ok(filter_axis(ky, &rows, Axis::Y, boundary))
}
