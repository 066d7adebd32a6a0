use std::fmt;
use std::str::FromStr;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::bank::{init_identity_with, BankShape, FilterBank};
use super::correlate::{scale_correlate_with, ScaleBoundary};
use super::layers::{
    batch_norm, dense_block, relu, residual_block, scale_pool, spatial_avg_pool, BatchNormState,
    BlockOptions, BnMode,
};
use crate::error::{Error, Result};
use crate::kernels::SpatialBoundary;
use crate::scalespace::ScaleSpaceStack;

/// One entry of a network description.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Corr { shape: BankShape, boundary: ScaleBoundary },
    Relu,
    BatchNorm { channels: usize },
    ScalePool,
    AvgPool,
    /// `corr[1,kh,kw] -> BN -> ReLU -> corr[ks,kh,kw] -> BN`, plus a skip.
    Residual { ks: usize, kh: usize, kw: usize, cin: usize, cout: usize, boundary: ScaleBoundary },
    /// `n` layers of `BN -> ReLU -> corr[ks,kh,kw]`, each adding `growth` channels.
    Dense { n: usize, growth: usize, ks: usize, kh: usize, kw: usize, cin: usize, boundary: ScaleBoundary },
}

impl LayerSpec {
    /// Filter banks owned by the layer, in the order they are applied.
    pub fn bank_shapes(&self) -> Vec<BankShape> {
        match *self {
            LayerSpec::Corr { shape, .. } => vec![shape],
            LayerSpec::Residual { ks, kh, kw, cin, cout, .. } => vec![
                BankShape { ks: 1, kh, kw, cin, cout },
                BankShape { ks, kh, kw, cin: cout, cout },
            ],
            LayerSpec::Dense { n, growth, ks, kh, kw, cin, .. } => (0..n)
                .map(|m| BankShape { ks, kh, kw, cin: cin + m * growth, cout: growth })
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Channel counts of the batch-norm layers owned by the layer.
    pub fn norm_channels(&self) -> Vec<usize> {
        match *self {
            LayerSpec::BatchNorm { channels } => vec![channels],
            LayerSpec::Residual { cout, .. } => vec![cout, cout],
            LayerSpec::Dense { n, growth, cin, .. } => (0..n).map(|m| cin + m * growth).collect(),
            _ => Vec::new(),
        }
    }

    /// Declared input channels, if the layer fixes them.
    pub fn input_channels(&self) -> Option<usize> {
        match *self {
            LayerSpec::Corr { shape, .. } => Some(shape.cin),
            LayerSpec::BatchNorm { channels } => Some(channels),
            LayerSpec::Residual { cin, .. } | LayerSpec::Dense { cin, .. } => Some(cin),
            _ => None,
        }
    }

    pub fn output_channels(&self, input: usize) -> usize {
        match *self {
            LayerSpec::Corr { shape, .. } => shape.cout,
            LayerSpec::Residual { cout, .. } => cout,
            LayerSpec::Dense { n, growth, cin, .. } => cin + n * growth,
            _ => input,
        }
    }

    /// Extra coarser levels read by the layer: the sum of `K_s - 1`.
    pub fn scale_depth(&self) -> usize {
        self.bank_shapes().iter().map(|s| s.ks - 1).sum()
    }

    /// Spatial reach of the layer at level 0, in pixels.
    pub fn spatial_radius(&self) -> usize {
        self.bank_shapes().iter().map(|s| s.kh.max(s.kw) / 2).sum()
    }

    /// True for layers that are linear in their input.
    pub fn is_linear(&self) -> bool {
        matches!(self, LayerSpec::Corr { .. } | LayerSpec::ScalePool | LayerSpec::AvgPool)
    }

    fn validate(&self) -> Result<()> {
        for s in self.bank_shapes() {
            s.validate()?;
        }
        match *self {
            LayerSpec::Residual { cin, cout, .. } if cout < cin => Err(Error::InvalidArgument(format!(
                "residual block cannot narrow {cin} channels to {cout}"
            ))),
            LayerSpec::Dense { n: 0, .. } | LayerSpec::Dense { growth: 0, .. } => {
                Err(Error::InvalidArgument("dense block needs n >= 1 and growth >= 1".into()))
            }
            LayerSpec::BatchNorm { channels: 0 } => {
                Err(Error::InvalidArgument("batch norm needs c >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// A network as an ordered list of layers.
///
/// The text form has one layer per line; blank lines and text after `#`
/// are ignored:
///
/// ```text
/// corr ks=2 kh=3 kw=3 cin=1 cout=8 boundary=zero
/// relu
/// bn c=8
/// residual ks=2 kh=3 kw=3 cin=8 cout=16 boundary=replicate
/// dense n=3 growth=12 ks=2 kh=3 kw=3 cin=16
/// avgpool
/// scalepool
/// ```
///
/// `boundary` is optional and defaults to `zero`; `kh` and `kw` default to 3.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        for l in &layers {
            l.validate()?;
        }
        Ok(Self { layers })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut layers = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let layer = parse_layer(line).map_err(|msg| Error::Parse { line: i + 1, msg })?;
            layer.validate().map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
            layers.push(layer);
        }
        Ok(Self { layers })
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn bank_shapes(&self) -> Vec<BankShape> {
        self.layers.iter().flat_map(LayerSpec::bank_shapes).collect()
    }

    pub fn norm_channels(&self) -> Vec<usize> {
        self.layers.iter().flat_map(LayerSpec::norm_channels).collect()
    }

    /// Channels expected by the first layer that declares them.
    pub fn input_channels(&self) -> Option<usize> {
        self.layers.iter().find_map(LayerSpec::input_channels)
    }

    /// Follows channel counts through the layers, naming the first layer
    /// (0-based) whose declared input disagrees.
    pub fn check_channels(&self, input: usize) -> Result<usize> {
        let mut c = input;
        for (idx, l) in self.layers.iter().enumerate() {
            if let Some(expected) = l.input_channels() {
                if expected != c {
                    return Err(Error::ChannelMismatch { layer: idx, expected, found: c });
                }
            }
            c = l.output_channels(c);
        }
        Ok(c)
    }

    pub fn scale_depth(&self) -> usize {
        self.layers.iter().map(LayerSpec::scale_depth).sum()
    }

    pub fn spatial_radius(&self) -> usize {
        self.layers.iter().map(LayerSpec::spatial_radius).sum()
    }

    pub fn is_linear(&self) -> bool {
        self.layers.iter().all(LayerSpec::is_linear)
    }
}

impl FromStr for NetworkSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

fn boundary_name(b: ScaleBoundary) -> &'static str {
    match b {
        ScaleBoundary::Zero => "zero",
        ScaleBoundary::Replicate => "replicate",
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.layers {
            match *l {
                LayerSpec::Corr { shape: s, boundary } => writeln!(
                    f,
                    "corr ks={} kh={} kw={} cin={} cout={} boundary={}",
                    s.ks, s.kh, s.kw, s.cin, s.cout, boundary_name(boundary)
                )?,
                LayerSpec::Relu => writeln!(f, "relu")?,
                LayerSpec::BatchNorm { channels } => writeln!(f, "bn c={channels}")?,
                LayerSpec::ScalePool => writeln!(f, "scalepool")?,
                LayerSpec::AvgPool => writeln!(f, "avgpool")?,
                LayerSpec::Residual { ks, kh, kw, cin, cout, boundary } => writeln!(
                    f,
                    "residual ks={ks} kh={kh} kw={kw} cin={cin} cout={cout} boundary={}",
                    boundary_name(boundary)
                )?,
                LayerSpec::Dense { n, growth, ks, kh, kw, cin, boundary } => writeln!(
                    f,
                    "dense n={n} growth={growth} ks={ks} kh={kh} kw={kw} cin={cin} boundary={}",
                    boundary_name(boundary)
                )?,
            }
        }
        Ok(())
    }
}

struct Args<'a> {
    pairs: Vec<(&'a str, &'a str, bool)>,
}

impl<'a> Args<'a> {
    fn new(tokens: &[&'a str]) -> std::result::Result<Self, String> {
        let mut pairs: Vec<(&str, &str, bool)> = Vec::new();
        for t in tokens {
            let (k, v) = t.split_once('=').ok_or_else(|| format!("expected key=value, got {t:?}"))?;
            if pairs.iter().any(|p| p.0 == k) {
                return Err(format!("duplicate key {k:?}"));
            }
            pairs.push((k, v, false));
        }
        Ok(Self { pairs })
    }

    fn take(&mut self, key: &str) -> Option<&'a str> {
        let p = self.pairs.iter_mut().find(|p| p.0 == key)?;
        p.2 = true;
        Some(p.1)
    }

    fn num(&mut self, key: &str, default: Option<usize>) -> std::result::Result<usize, String> {
        match self.take(key) {
            Some(v) => v.parse().map_err(|_| format!("{key} must be a non-negative integer, got {v:?}")),
            None => default.ok_or_else(|| format!("missing {key}=")),
        }
    }

    fn boundary(&mut self) -> std::result::Result<ScaleBoundary, String> {
        match self.take("boundary") {
            None | Some("zero") => Ok(ScaleBoundary::Zero),
            Some("replicate") => Ok(ScaleBoundary::Replicate),
            Some(other) => Err(format!("boundary must be zero or replicate, got {other:?}")),
        }
    }

    fn finish(self) -> std::result::Result<(), String> {
        match self.pairs.iter().find(|p| !p.2) {
            Some(p) => Err(format!("unknown key {:?}", p.0)),
            None => Ok(()),
        }
    }
}

fn parse_layer(line: &str) -> std::result::Result<LayerSpec, String> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    let mut a = Args::new(&tokens[1..])?;
    let layer = match tokens[0] {
        "corr" => LayerSpec::Corr {
            shape: BankShape {
                ks: a.num("ks", Some(1))?,
                kh: a.num("kh", Some(3))?,
                kw: a.num("kw", Some(3))?,
                cin: a.num("cin", None)?,
                cout: a.num("cout", None)?,
            },
            boundary: a.boundary()?,
        },
        "relu" => LayerSpec::Relu,
        "bn" => LayerSpec::BatchNorm { channels: a.num("c", None)? },
        "scalepool" => LayerSpec::ScalePool,
        "avgpool" => LayerSpec::AvgPool,
        "residual" => LayerSpec::Residual {
            ks: a.num("ks", Some(1))?,
            kh: a.num("kh", Some(3))?,
            kw: a.num("kw", Some(3))?,
            cin: a.num("cin", None)?,
            cout: a.num("cout", None)?,
            boundary: a.boundary()?,
        },
        "dense" => LayerSpec::Dense {
            n: a.num("n", None)?,
            growth: a.num("growth", None)?,
            ks: a.num("ks", Some(1))?,
            kh: a.num("kh", Some(3))?,
            kw: a.num("kw", Some(3))?,
            cin: a.num("cin", None)?,
            boundary: a.boundary()?,
        },
        other => return Err(format!("unknown layer {other:?}")),
    };
    a.finish()?;
    Ok(layer)
}

/// Trainable parameters of a network, in order of appearance.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkWeights {
    pub banks: Vec<FilterBank>,
    pub norms: Vec<BatchNormState>,
}

impl NetworkWeights {
    /// Banks as given, batch norms at their defaults.
    pub fn from_banks(spec: &NetworkSpec, banks: Vec<FilterBank>) -> Result<Self> {
        let norms = spec.norm_channels().into_iter().map(BatchNormState::new).collect();
        let w = Self { banks, norms };
        w.check(spec)?;
        Ok(w)
    }

    /// Near-identity banks with noise drawn from one seeded stream.
    pub fn identity(spec: &NetworkSpec, noise_std: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let banks = spec
            .bank_shapes()
            .into_iter()
            .map(|s| {
                let mut b = FilterBank::zeros(s)?;
                init_identity_with(&mut b, noise_std, &mut rng)?;
                Ok(b)
            })
            .collect::<Result<_>>()?;
        Self::from_banks(spec, banks)
    }

    /// I.i.d. He-normal banks from one seeded stream.
    pub fn he_normal(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let banks = spec
            .bank_shapes()
            .into_iter()
            .map(|s| FilterBank::he_normal(s, &mut rng))
            .collect::<Result<_>>()?;
        Self::from_banks(spec, banks)
    }

    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        let shapes = spec.bank_shapes();
        if shapes.len() != self.banks.len() {
            return Err(Error::ShapeMismatch(format!(
                "network has {} filter banks, {} supplied",
                shapes.len(),
                self.banks.len()
            )));
        }
        for (j, (s, b)) in shapes.iter().zip(&self.banks).enumerate() {
            if *s != b.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "filter bank {j} should be {s:?}, got {:?}",
                    b.shape()
                )));
            }
        }
        let norms = spec.norm_channels();
        if norms.len() != self.norms.len()
            || norms.iter().zip(&self.norms).any(|(c, n)| *c != n.channels())
        {
            return Err(Error::ShapeMismatch("batch-norm parameters do not match the network".into()));
        }
        Ok(())
    }
}

/// Run-time settings of a forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    pub bn_mode: BnMode,
    pub spatial: SpatialBoundary,
}

/// A network description together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    weights: NetworkWeights,
}

impl Network {
    pub fn new(spec: NetworkSpec, weights: NetworkWeights) -> Result<Self> {
        weights.check(&spec)?;
        Ok(Self { spec, weights })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn weights(&self) -> &NetworkWeights {
        &self.weights
    }

    pub fn forward(&self, input: &ScaleSpaceStack, opts: ForwardOptions) -> Result<ScaleSpaceStack> {
        let mut out = self.forward_batch(std::slice::from_ref(input), opts)?;
        Ok(out.pop().expect("one item in, one out"))
    }

    pub fn forward_batch(&self, inputs: &[ScaleSpaceStack], opts: ForwardOptions) -> Result<Vec<ScaleSpaceStack>> {
        let mut xs = inputs.to_vec();
        let (mut bank_at, mut norm_at) = (0, 0);
        for (idx, layer) in self.spec.layers.iter().enumerate() {
            if let (Some(expected), Some(x)) = (layer.input_channels(), xs.first()) {
                if x.channels() != expected {
                    return Err(Error::ChannelMismatch { layer: idx, expected, found: x.channels() });
                }
            }
            let nb = layer.bank_shapes().len();
            let nn = layer.norm_channels().len();
            let banks = &self.weights.banks[bank_at..bank_at + nb];
            let norms = &self.weights.norms[norm_at..norm_at + nn];
            bank_at += nb;
            norm_at += nn;
            xs = match *layer {
                LayerSpec::Corr { boundary, .. } => xs
                    .iter()
                    .map(|x| scale_correlate_with(x, &banks[0], boundary, opts.spatial))
                    .collect::<Result<_>>()?,
                LayerSpec::Relu => xs.iter().map(relu).collect(),
                LayerSpec::BatchNorm { .. } => batch_norm(&xs, &norms[0], opts.bn_mode)?,
                LayerSpec::ScalePool => xs
                    .iter()
                    .map(|x| {
                        let img = scale_pool(x);
                        ScaleSpaceStack::new(1, img.height(), img.width(), img.channels(), x.s0(), img.into_data())
                    })
                    .collect::<Result<_>>()?,
                LayerSpec::AvgPool => xs.iter().map(spatial_avg_pool).collect::<Result<_>>()?,
                LayerSpec::Residual { boundary, .. } => {
                    let bo = BlockOptions { scale_boundary: boundary, spatial: opts.spatial, bn_mode: opts.bn_mode };
                    residual_block(&xs, [&banks[0], &banks[1]], [&norms[0], &norms[1]], bo)?
                }
                LayerSpec::Dense { boundary, .. } => {
                    let bo = BlockOptions { scale_boundary: boundary, spatial: opts.spatial, bn_mode: opts.bn_mode };
                    let b: Vec<&FilterBank> = banks.iter().collect();
                    let n: Vec<&BatchNormState> = norms.iter().collect();
                    dense_block(&xs, &b, &n, bo)?
                }
            };
        }
        Ok(xs)
    }
}
