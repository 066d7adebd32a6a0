use super::bank::FilterBank;
use super::correlate::{scale_correlate_with, ScaleBoundary};
use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::kernels::SpatialBoundary;
use crate::scalespace::ScaleSpaceStack;

/// Elementwise `max(0, x)`.
pub fn relu(stack: &ScaleSpaceStack) -> ScaleSpaceStack {
    let data = stack.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    stack.with_data(stack.channels(), data).expect("same shape")
}

/// Whether batch norm uses batch statistics or the stored running ones.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum BnMode {
    Train,
    #[default]
    Eval,
}

/// Per-channel parameters of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
}

impl BatchNormState {
    /// `gamma = 1`, `beta = 0`, running mean 0, running variance 1, `eps = 1e-5`.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Per-channel mean and (biased) variance over batch, scale and space.
pub fn batch_statistics(batch: &[ScaleSpaceStack]) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = batch.first().ok_or_else(|| invalid("empty batch"))?;
    let c = first.channels();
    if batch.iter().any(|s| s.channels() != c) {
        return Err(Error::ShapeMismatch("batch items disagree on channel count".into()));
    }
    let count: usize = batch.iter().map(|s| s.data().len() / c).sum();
    let mut mean = vec![0.0; c];
    for s in batch {
        for px in s.data().chunks_exact(c) {
            mean.iter_mut().zip(px).for_each(|(m, v)| *m += v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let mut var = vec![0.0; c];
    for s in batch {
        for px in s.data().chunks_exact(c) {
            for ((acc, v), m) in var.iter_mut().zip(px).zip(&mean) {
                let d = v - m;
                *acc += d * d;
            }
        }
    }
    var.iter_mut().for_each(|v| *v /= count as f64);
    Ok((mean, var))
}

/// `gamma (x - mean) / sqrt(var + eps) + beta`, per channel.
///
/// In [`BnMode::Train`] the statistics are taken over every item, level and
/// pixel of the batch; in [`BnMode::Eval`] the running values are used.
pub fn batch_norm(
    batch: &[ScaleSpaceStack],
    state: &BatchNormState,
    mode: BnMode,
) -> Result<Vec<ScaleSpaceStack>> {
    let c = state.channels();
    if state.beta.len() != c || state.running_mean.len() != c || state.running_var.len() != c {
        return Err(invalid("batch-norm parameter vectors differ in length"));
    }
    if let Some(s) = batch.iter().find(|s| s.channels() != c) {
        return Err(Error::ShapeMismatch(format!(
            "batch norm over {c} channels got a {}-channel input",
            s.channels()
        )));
    }
    let (mean, var) = match mode {
        BnMode::Train => batch_statistics(batch)?,
        BnMode::Eval => (state.running_mean.clone(), state.running_var.clone()),
    };
    let scale: Vec<f64> = (0..c).map(|j| state.gamma[j] / (var[j] + state.eps).sqrt()).collect();
    batch
        .iter()
        .map(|s| {
            let mut data = s.data().to_vec();
            for px in data.chunks_exact_mut(c) {
                for j in 0..c {
                    px[j] = (px[j] - mean[j]) * scale[j] + state.beta[j];
                }
            }
            s.with_data(c, data)
        })
        .collect()
}

/// Mean over the scale axis.
pub fn scale_pool(stack: &ScaleSpaceStack) -> Image {
    let n = stack.height() * stack.width() * stack.channels();
    let mut acc = vec![0.0; n];
    for k in 0..stack.levels() {
        acc.iter_mut().zip(stack.level(k)).for_each(|(a, v)| *a += v);
    }
    let inv = 1.0 / stack.levels() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Image::new(stack.height(), stack.width(), stack.channels(), acc).expect("level shape")
}

/// Mean over non-overlapping 2x2 windows at every level.
pub fn spatial_avg_pool(stack: &ScaleSpaceStack) -> Result<ScaleSpaceStack> {
    let (h, w, c) = (stack.height(), stack.width(), stack.channels());
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::ShapeMismatch(format!("2x2 pooling needs even sizes, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut data = Vec::with_capacity(stack.levels() * oh * ow * c);
    for k in 0..stack.levels() {
        for y in 0..oh {
            for x in 0..ow {
                for ch in 0..c {
                    let s = stack.get(k, 2 * y, 2 * x, ch)
                        + stack.get(k, 2 * y, 2 * x + 1, ch)
                        + stack.get(k, 2 * y + 1, 2 * x, ch)
                        + stack.get(k, 2 * y + 1, 2 * x + 1, ch);
                    data.push(0.25 * s);
                }
            }
        }
    }
    ScaleSpaceStack::new(stack.levels(), oh, ow, c, stack.s0(), data)
}

/// Appends zero channels so `stack` has `channels` channels.
pub fn pad_channels(stack: &ScaleSpaceStack, channels: usize) -> Result<ScaleSpaceStack> {
    let c = stack.channels();
    if channels < c {
        return Err(Error::ShapeMismatch(format!("cannot pad {c} channels down to {channels}")));
    }
    let mut data = Vec::with_capacity(stack.data().len() / c * channels);
    for px in stack.data().chunks_exact(c) {
        data.extend_from_slice(px);
        data.extend(std::iter::repeat_n(0.0, channels - c));
    }
    stack.with_data(channels, data)
}

/// Concatenates stacks along the channel axis.
pub fn concat_channels(parts: &[ScaleSpaceStack]) -> Result<ScaleSpaceStack> {
    let first = parts.first().ok_or_else(|| invalid("nothing to concatenate"))?;
    let dims = (first.levels(), first.height(), first.width());
    if parts.iter().any(|p| (p.levels(), p.height(), p.width()) != dims) {
        return Err(Error::ShapeMismatch("concatenated stacks differ in size".into()));
    }
    let total: usize = parts.iter().map(|p| p.channels()).sum();
    let pixels = first.data().len() / first.channels();
    let mut data = Vec::with_capacity(pixels * total);
    for p in 0..pixels {
        for part in parts {
            let c = part.channels();
            data.extend_from_slice(&part.data()[p * c..(p + 1) * c]);
        }
    }
    first.with_data(total, data)
}

/// Settings shared by composite layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BlockOptions {
    pub scale_boundary: ScaleBoundary,
    pub spatial: SpatialBoundary,
    pub bn_mode: BnMode,
}

/// `BN(corr_2(ReLU(BN(corr_1(x))))) + pad(x)` applied to a batch.
///
/// `banks[0]` must have a single scale slice; the skip connection pads
/// the input with zero channels up to the output width.
pub fn residual_block(
    batch: &[ScaleSpaceStack],
    banks: [&FilterBank; 2],
    norms: [&BatchNormState; 2],
    opts: BlockOptions,
) -> Result<Vec<ScaleSpaceStack>> {
    if banks[0].shape().ks != 1 {
        return Err(invalid("first correlation of a residual block must have one scale slice"));
    }
    let cout = banks[1].shape().cout;
    let corr = |b: &FilterBank, xs: &[ScaleSpaceStack]| -> Result<Vec<ScaleSpaceStack>> {
        xs.iter().map(|x| scale_correlate_with(x, b, opts.scale_boundary, opts.spatial)).collect()
    };
    let h = corr(banks[0], batch)?;
    let h = batch_norm(&h, norms[0], opts.bn_mode)?;
    let h: Vec<_> = h.iter().map(relu).collect();
    let h = corr(banks[1], &h)?;
    let h = batch_norm(&h, norms[1], opts.bn_mode)?;
    batch
        .iter()
        .zip(h)
        .map(|(x, fx)| {
            let skip = pad_channels(x, cout)?;
            let data = fx.data().iter().zip(skip.data()).map(|(a, b)| a + b).collect();
            fx.with_data(cout, data)
        })
        .collect()
}

/// Densely connected block: layer `m` sees the concatenation of the input
/// and all earlier layer outputs and applies BN, ReLU, then its bank.
/// The result concatenates the input with every layer output.
pub fn dense_block(
    batch: &[ScaleSpaceStack],
    banks: &[&FilterBank],
    norms: &[&BatchNormState],
    opts: BlockOptions,
) -> Result<Vec<ScaleSpaceStack>> {
    if banks.len() != norms.len() {
        return Err(invalid("dense block needs one batch norm per correlation"));
    }
    let mut features: Vec<ScaleSpaceStack> = batch.to_vec();
    for (bank, norm) in banks.iter().zip(norms) {
        let h = batch_norm(&features, norm, opts.bn_mode)?;
        let new: Vec<ScaleSpaceStack> = h
            .iter()
            .map(|x| scale_correlate_with(&relu(x), bank, opts.scale_boundary, opts.spatial))
            .collect::<Result<_>>()?;
        features = features
            .iter()
            .zip(&new)
            .map(|(f, n)| concat_channels(&[f.clone(), n.clone()]))
            .collect::<Result<_>>()?;
    }
    Ok(features)
}
