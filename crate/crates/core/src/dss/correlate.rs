use rayon::prelude::*;

use super::bank::FilterBank;
use crate::error::{Error, Result};
use crate::kernels::SpatialBoundary;
use crate::scalespace::ScaleSpaceStack;

/// Treatment of scale indices past the coarsest level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ScaleBoundary {
    /// Terms reading past the coarsest level are dropped.
    #[default]
    Zero,
    /// Such terms read the coarsest level instead.
    Replicate,
}

/// Scale correlation with zero spatial padding. See [`scale_correlate_with`].
pub fn scale_correlate(
    stack: &ScaleSpaceStack,
    bank: &FilterBank,
    boundary: ScaleBoundary,
) -> Result<ScaleSpaceStack> {
    scale_correlate_with(stack, bank, boundary, SpatialBoundary::Zero)
}

/// Correlates a stack with a filter bank over scales and dilated space:
///
/// ```text
/// out_k^o(z) = sum_l sum_y sum_i psi[l][y][i][o] f_{l+k}^i(z + 2^k y)
/// ```
///
/// for `l < K_s` and `y` ranging over the centred `kh x kw` grid. The
/// spatial taps at level `k` are spread `2^k` pixels apart, which makes the
/// layer commute with dilations by powers of two. Terms are accumulated in
/// the order `l`, `y` (row-major), `i`, so results are reproducible bit
/// for bit.
pub fn scale_correlate_with(
    stack: &ScaleSpaceStack,
    bank: &FilterBank,
    boundary: ScaleBoundary,
    spatial: SpatialBoundary,
) -> Result<ScaleSpaceStack> {
    let shape = bank.shape();
    if stack.channels() != shape.cin {
        return Err(Error::ShapeMismatch(format!(
            "stack has {} channels, filter bank expects {}",
            stack.channels(),
            shape.cin
        )));
    }
    let (levels, h, w) = (stack.levels(), stack.height(), stack.width());
    let (cin, cout) = (shape.cin, shape.cout);
    let (ry, rx) = ((shape.kh / 2) as i64, (shape.kw / 2) as i64);
    let src = stack.data();
    let weights = bank.weights();
    let row_len = w * cout;
    let mut out = vec![0.0; levels * h * row_len];

    out.par_chunks_mut(row_len).enumerate().for_each(|(row_index, row)| {
        let k = row_index / h;
        let zy = (row_index % h) as i64;
        let step = 1i64 << k.min(62);
        let mut acc = vec![0.0; cout];
        for zx in 0..w as i64 {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for l in 0..shape.ks {
                let level = match boundary {
                    ScaleBoundary::Zero if l + k >= levels => continue,
                    ScaleBoundary::Zero => l + k,
                    ScaleBoundary::Replicate => (l + k).min(levels - 1),
                };
                for a in 0..shape.kh {
                    let Some(sy) = locate(zy + step * (a as i64 - ry), h, spatial) else {
                        continue;
                    };
                    for b in 0..shape.kw {
                        let Some(sx) = locate(zx + step * (b as i64 - rx), w, spatial) else {
                            continue;
                        };
                        let px = ((level * h + sy) * w + sx) * cin;
                        let wbase = ((l * shape.kh + a) * shape.kw + b) * cin * cout;
                        for i in 0..cin {
                            let v = src[px + i];
                            let wrow = &weights[wbase + i * cout..wbase + (i + 1) * cout];
                            for (acc_o, w_o) in acc.iter_mut().zip(wrow) {
                                *acc_o += w_o * v;
                            }
                        }
                    }
                }
            }
            let start = zx as usize * cout;
            row[start..start + cout].copy_from_slice(&acc);
        }
    });

    stack.with_data(cout, out)
}

#[inline]
fn locate(p: i64, n: usize, spatial: SpatialBoundary) -> Option<usize> {
    match spatial {
        SpatialBoundary::Zero => (p >= 0 && p < n as i64).then_some(p as usize),
        SpatialBoundary::Periodic => Some(p.rem_euclid(n as i64) as usize),
    }
}
