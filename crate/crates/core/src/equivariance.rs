//! Measuring scale equivariance of a network.
//!
//! Downscaling an image `f` by `2^ell` (blur by `t(2^{-ell}, s0)`, then keep
//! every `2^ell`-th pixel) gives `g`. An exactly equivariant network `Phi`
//! satisfies `Phi[g](k, x) = Phi[f](k + ell, 2^ell x)`, so the relative
//! error
//!
//! ```text
//! L(2^{-ell}, k) = |Phi[f](k + ell, 2^ell .) - Phi[g](k, .)| / |Phi[f](k + ell, 2^ell .)|
//! ```
//!
//! measures how far the network is from that ideal. Cells with
//! `k + ell + depth >= S`, `depth` being the number of extra levels the
//! network reads, depend on levels the stack of `g` does not have and are
//! flagged as contaminated.
//!
//! The default [`EquivarianceConfig`] treats images as periodic. On a torus
//! the subsampling step maps the grid of `f` onto the grid of `g` exactly,
//! so the measurement isolates the network; with zero padding a border of
//! the network's spatial reach times `2^ell` is left out instead.

use crate::dss::{BnMode, ForwardOptions, Network, NetworkSpec};
use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::kernels::{discrete_gaussian_1d, radius_for, separable_blur_2d_with, SpatialBoundary};
use crate::numfmt::format_sig;
use crate::scalespace::{dilation_scale, lift_with, LiftOptions, ScaleSpaceStack};

/// Denominators below this are rejected.
pub const MIN_REFERENCE_NORM: f64 = 1e-12;

/// Number of coarser levels the network reads beyond the current one.
pub fn scale_receptive_depth(spec: &NetworkSpec) -> usize {
    spec.scale_depth()
}

/// Whether cell `(ell, k)` depends on levels missing from a stack of `levels`.
pub fn is_contaminated(ell: usize, k: usize, depth: usize, levels: usize) -> bool {
    k + ell + depth >= levels
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EquivarianceConfig {
    /// Stack depth `S`.
    pub levels: usize,
    pub s0: f64,
    /// Lift kernel radius in standard deviations.
    pub radius_sigmas: f64,
    pub spatial: SpatialBoundary,
    pub bn_mode: BnMode,
}

impl Default for EquivarianceConfig {
    fn default() -> Self {
        Self {
            levels: 8,
            s0: 0.25,
            radius_sigmas: 4.0,
            spatial: SpatialBoundary::Periodic,
            bn_mode: BnMode::Eval,
        }
    }
}

impl EquivarianceConfig {
    fn lift_options(&self) -> LiftOptions {
        LiftOptions { radius_sigmas: self.radius_sigmas, boundary: self.spatial }
    }

    fn forward_options(&self) -> ForwardOptions {
        ForwardOptions { bn_mode: self.bn_mode, spatial: self.spatial }
    }
}

/// The image `f` seen at `2^ell` times coarser resolution.
pub fn downscale(image: &Image, ell: usize, cfg: &EquivarianceConfig) -> Result<Image> {
    let f = 1usize << ell;
    if !image.height().is_multiple_of(f) || !image.width().is_multiple_of(f) {
        return Err(invalid(format!(
            "2^{ell} = {f} does not divide the {}x{} image",
            image.height(),
            image.width()
        )));
    }
    let t = dilation_scale(1.0 / f as f64, cfg.s0)?;
    let g = discrete_gaussian_1d(t, radius_for(t, cfg.radius_sigmas))?;
    separable_blur_2d_with(&g, &g, image, cfg.spatial)?.subsample(f)
}

fn network_stack(net: &Network, image: &Image, cfg: &EquivarianceConfig) -> Result<ScaleSpaceStack> {
    let lifted = lift_with(image, cfg.levels, cfg.s0, &cfg.lift_options())?;
    let out = net.forward(&lifted, cfg.forward_options())?;
    if out.levels() != cfg.levels {
        return Err(invalid(format!(
            "network output has {} levels; equivariance needs all {}",
            out.levels(),
            cfg.levels
        )));
    }
    Ok(out)
}

fn check_ell(image: &Image, ell: usize, cfg: &EquivarianceConfig) -> Result<()> {
    if ell == 0 || ell >= cfg.levels {
        return Err(invalid(format!("ell must lie in 1..{}, got {ell}", cfg.levels)));
    }
    let f = 1usize << ell;
    if !image.height().is_multiple_of(f) || !image.width().is_multiple_of(f) {
        return Err(invalid(format!(
            "2^{ell} = {f} does not divide the {}x{} image",
            image.height(),
            image.width()
        )));
    }
    Ok(())
}

/// Numerator and denominator norms of one cell.
fn cell_norms(
    phi_f: &ScaleSpaceStack,
    phi_g: &ScaleSpaceStack,
    ell: usize,
    k: usize,
    border: usize,
) -> Result<(f64, f64)> {
    let f = 1usize << ell;
    let (h, w, c) = (phi_g.height(), phi_g.width(), phi_g.channels());
    if 2 * border >= h || 2 * border >= w {
        return Err(invalid(format!(
            "a border of {border} pixels leaves nothing of the {h}x{w} downscaled output"
        )));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for y in border..h - border {
        for x in border..w - border {
            for ch in 0..c {
                let want = phi_f.get(k + ell, f * y, f * x, ch);
                let d = want - phi_g.get(k, y, x, ch);
                num += d * d;
                den += want * want;
            }
        }
    }
    Ok((num.sqrt(), den.sqrt()))
}

fn border_for(spec: &NetworkSpec, ell: usize, cfg: &EquivarianceConfig) -> usize {
    match cfg.spatial {
        SpatialBoundary::Periodic => 0,
        SpatialBoundary::Zero => spec.spatial_radius() << ell,
    }
}

/// `L(2^{-ell}, k)` for every `k` in `0..S - ell`.
///
/// Fails with [`Error::DegenerateActivation`] when a reference norm is
/// below [`MIN_REFERENCE_NORM`].
pub fn equivariance_error(net: &Network, image: &Image, ell: usize, cfg: &EquivarianceConfig) -> Result<Vec<f64>> {
    check_ell(image, ell, cfg)?;
    let phi_f = network_stack(net, image, cfg)?;
    let phi_g = network_stack(net, &downscale(image, ell, cfg)?, cfg)?;
    let border = border_for(net.spec(), ell, cfg);
    (0..cfg.levels - ell)
        .map(|k| {
            let (num, den) = cell_norms(&phi_f, &phi_g, ell, k, border)?;
            if den < MIN_REFERENCE_NORM {
                return Err(Error::DegenerateActivation { ell, k, norm: den });
            }
            Ok(num / den)
        })
        .collect()
}

/// One entry of an [`EquivarianceReport`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EquivarianceCell {
    pub ell: usize,
    pub k: usize,
    pub error: f64,
    pub contaminated: bool,
}

/// Provenance of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportMeta {
    /// FNV-1a hash of the network description's canonical text.
    pub spec_hash: u64,
    pub image_id: String,
    pub levels: usize,
    pub seed: u64,
}

/// Errors `L(2^{-ell}, k)` for `ell` in `1..=max_ell` and `k` in `0..S - ell`.
#[derive(Clone, Debug, PartialEq)]
pub struct EquivarianceReport {
    pub cells: Vec<EquivarianceCell>,
    pub meta: ReportMeta,
}

impl EquivarianceReport {
    pub fn error(&self, ell: usize, k: usize) -> Option<f64> {
        self.cells.iter().find(|c| c.ell == ell && c.k == k).map(|c| c.error)
    }

    /// Largest error among cells with the given contamination flag.
    pub fn max_error(&self, contaminated: bool) -> Option<f64> {
        self.cells
            .iter()
            .filter(|c| c.contaminated == contaminated)
            .map(|c| c.error)
            .fold(None, |m, e| Some(m.map_or(e, |m: f64| m.max(e))))
    }

    /// `ell,k,error,contaminated` rows, errors to 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("ell,k,error,contaminated\n");
        for c in &self.cells {
            s.push_str(&format!(
                "{},{},{},{}\n",
                c.ell,
                c.k,
                format_sig(c.error, 9),
                u8::from(c.contaminated)
            ));
        }
        s
    }

    /// Parses the output of [`EquivarianceReport::to_csv`].
    pub fn cells_from_csv(text: &str) -> Result<Vec<EquivarianceCell>> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("ell,k,error,contaminated") {
            return Err(Error::Format("missing ell,k,error,contaminated header".into()));
        }
        lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let bad = || Error::Format(format!("bad report row {l:?}"));
                let f: Vec<&str> = l.trim().split(',').collect();
                if f.len() != 4 {
                    return Err(bad());
                }
                Ok(EquivarianceCell {
                    ell: f[0].parse().map_err(|_| bad())?,
                    k: f[1].parse().map_err(|_| bad())?,
                    error: f[2].parse().map_err(|_| bad())?,
                    contaminated: match f[3] {
                        "0" => false,
                        "1" => true,
                        _ => return Err(bad()),
                    },
                })
            })
            .collect()
    }
}

/// FNV-1a over the canonical text of `spec`.
pub fn spec_hash(spec: &NetworkSpec) -> u64 {
    spec.to_string().bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Measures every cell for `ell` in `1..=max_ell`.
///
/// A contaminated cell whose reference activation vanishes (possible when a
/// ReLU zeroes a nearly constant top level) is recorded as infinite; the
/// same condition in a clean cell is an error.
pub fn sweep(
    net: &Network,
    image: &Image,
    max_ell: usize,
    cfg: &EquivarianceConfig,
    image_id: &str,
    seed: u64,
) -> Result<EquivarianceReport> {
    if max_ell == 0 {
        return Err(invalid("max_ell must be at least 1"));
    }
    for ell in 1..=max_ell {
        check_ell(image, ell, cfg)?;
    }
    let depth = scale_receptive_depth(net.spec());
    let phi_f = network_stack(net, image, cfg)?;
    let mut cells = Vec::new();
    for ell in 1..=max_ell {
        let phi_g = network_stack(net, &downscale(image, ell, cfg)?, cfg)?;
        let border = border_for(net.spec(), ell, cfg);
        for k in 0..cfg.levels - ell {
            let contaminated = is_contaminated(ell, k, depth, cfg.levels);
            let (num, den) = cell_norms(&phi_f, &phi_g, ell, k, border)?;
            let error = if den >= MIN_REFERENCE_NORM {
                num / den
            } else if contaminated {
                f64::INFINITY
            } else {
                return Err(Error::DegenerateActivation { ell, k, norm: den });
            };
            cells.push(EquivarianceCell { ell, k, error, contaminated });
        }
    }
    Ok(EquivarianceReport {
        cells,
        meta: ReportMeta {
            spec_hash: spec_hash(net.spec()),
            image_id: image_id.to_string(),
            levels: cfg.levels,
            seed,
        },
    })
}
