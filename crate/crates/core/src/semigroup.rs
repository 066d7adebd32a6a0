//! Semigroups, their actions, and semigroup correlation.
//!
//! A left action on functions satisfies `L_{st} = L_s L_t`. Correlating a
//! filter `psi` with a signal `f` over a semigroup,
//!
//! ```text
//! [psi * f](s) = sum_x psi(x) [L_s f](x),
//! ```
//!
//! commutes with the action: `[psi * L_t f](s) = [psi * f](st)`. Cyclic
//! groups recover circular correlation and rotation groups recover group
//! correlation.
//!
//! The scale-shift semigroup used for images has elements `(2^{-k}, z)`
//! acting by `f -> [G_k * f](2^k (x + z))`: blur, shift, then keep every
//! `2^k`-th pixel.

use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::kernels::{default_radius, discrete_gaussian_1d, separable_blur_2d_with, SpatialBoundary};
use crate::scalespace::dilation_scale;

/// The element `(2^{-k}, z)` of the dyadic scale-shift semigroup.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ScaleShiftElement {
    pub k: u32,
    pub z: [i64; 2],
}

impl ScaleShiftElement {
    pub fn new(k: u32, z: [i64; 2]) -> Self {
        Self { k, z }
    }

    pub fn identity() -> Self {
        Self { k: 0, z: [0, 0] }
    }

    /// The dilation factor `2^{-k}`.
    pub fn dilation(&self) -> f64 {
        (-(self.k as f64)).exp2()
    }

    /// `self . other = (2^{-(k1+k2)}, 2^{-k1} z2 + z1)`.
    ///
    /// Fails with [`Error::NonRepresentable`] when `2^{k1}` does not divide
    /// `z2`, since the product then has a fractional shift.
    pub fn compose(&self, other: &ScaleShiftElement) -> Result<ScaleShiftElement> {
        let k = self
            .k
            .checked_add(other.k)
            .filter(|k| *k < 63)
            .ok_or_else(|| invalid("scale exponent overflow"))?;
        let step = 1i64 << self.k.min(62);
        if other.z.iter().any(|c| c % step != 0) {
            return Err(Error::NonRepresentable { k: self.k, z: other.z });
        }
        Ok(ScaleShiftElement {
            k,
            z: [other.z[0] / step + self.z[0], other.z[1] / step + self.z[1]],
        })
    }

    /// Applies the element to an image whose base scale is `s0`.
    ///
    /// The output has the input's size; `z` is `(x, y)` in pixels.
    pub fn apply(&self, image: &Image, s0: f64, boundary: SpatialBoundary) -> Result<Image> {
        let t = dilation_scale(self.dilation(), s0)?;
        let g = discrete_gaussian_1d(t, default_radius(t))?;
        let blurred = separable_blur_2d_with(&g, &g, image, boundary)?;
        let (h, w) = (image.height() as i64, image.width() as i64);
        let f = 1i64 << self.k;
        let mut out = Image::zeros(image.height(), image.width(), image.channels());
        for y in 0..h {
            for x in 0..w {
                let (mut sy, mut sx) = (f * (y + self.z[1]), f * (x + self.z[0]));
                match boundary {
                    SpatialBoundary::Zero if sy < 0 || sy >= h || sx < 0 || sx >= w => continue,
                    SpatialBoundary::Zero => {}
                    SpatialBoundary::Periodic => {
                        sy = sy.rem_euclid(h);
                        sx = sx.rem_euclid(w);
                    }
                }
                for c in 0..image.channels() {
                    out.set(y as usize, x as usize, c, blurred.get(sy as usize, sx as usize, c));
                }
            }
        }
        Ok(out)
    }
}

/// A finite semigroup on `0..n` given by its multiplication table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteSemigroup {
    n: usize,
    table: Vec<usize>,
}

impl FiniteSemigroup {
    /// `table[a * n + b]` is the product `ab`. Closure and associativity
    /// are checked exhaustively.
    pub fn new(n: usize, table: Vec<usize>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidTable("semigroup must be non-empty".into()));
        }
        if table.len() != n * n {
            return Err(Error::InvalidTable(format!(
                "table for {n} elements needs {} entries, got {}",
                n * n,
                table.len()
            )));
        }
        if let Some(pos) = table.iter().position(|&v| v >= n) {
            return Err(Error::InvalidTable(format!(
                "product {} * {} = {} is not an element",
                pos / n,
                pos % n,
                table[pos]
            )));
        }
        let s = Self { n, table };
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    if s.compose(s.compose(a, b), c) != s.compose(a, s.compose(b, c)) {
                        return Err(Error::InvalidTable(format!(
                            "not associative at ({a}, {b}, {c})"
                        )));
                    }
                }
            }
        }
        Ok(s)
    }

    /// Builds the table from a product function.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> usize) -> Result<Self> {
        let table = (0..n * n).map(|i| f(i / n, i % n)).collect();
        Self::new(n, table)
    }

    /// The additive group `Z_n`.
    pub fn cyclic(n: usize) -> Result<Self> {
        Self::from_fn(n, |a, b| (a + b) % n)
    }

    pub fn order(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn compose(&self, a: usize, b: usize) -> usize {
        self.table[a * self.n + b]
    }

    pub fn identity(&self) -> Option<usize> {
        (0..self.n).find(|&e| (0..self.n).all(|a| self.compose(e, a) == a && self.compose(a, e) == a))
    }

    pub fn is_commutative(&self) -> bool {
        (0..self.n).all(|a| (0..self.n).all(|b| self.compose(a, b) == self.compose(b, a)))
    }
}

/// An action of a finite semigroup on functions over `0..m`:
/// `[L_s f](x) = w_s(x) f(map_s(x))`, with `w_s = 1` when no weights are given.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionTable {
    domain: usize,
    maps: Vec<Vec<usize>>,
    weights: Option<Vec<Vec<f64>>>,
}

/// The first triple `(s, t, x)` at which `L_{st} = L_s L_t` fails.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActionViolation {
    pub s: usize,
    pub t: usize,
    pub x: usize,
}

impl ActionTable {
    pub fn new(domain: usize, maps: Vec<Vec<usize>>, weights: Option<Vec<Vec<f64>>>) -> Result<Self> {
        for (s, m) in maps.iter().enumerate() {
            if m.len() != domain {
                return Err(Error::InvalidTable(format!(
                    "map of element {s} has {} points, domain has {domain}",
                    m.len()
                )));
            }
            if let Some(x) = m.iter().position(|&p| p >= domain) {
                return Err(Error::InvalidTable(format!(
                    "map of element {s} sends {x} outside the domain"
                )));
            }
        }
        if let Some(w) = &weights {
            if w.len() != maps.len() || w.iter().any(|row| row.len() != domain) {
                return Err(Error::InvalidTable("weights must match maps in shape".into()));
            }
        }
        Ok(Self { domain, maps, weights })
    }

    /// The action of a semigroup on functions over itself, `[L_s f](x) = f(xs)`.
    pub fn right_multiplication(semigroup: &FiniteSemigroup) -> Self {
        let n = semigroup.order();
        let maps = (0..n).map(|s| (0..n).map(|x| semigroup.compose(x, s)).collect()).collect();
        Self { domain: n, maps, weights: None }
    }

    pub fn domain(&self) -> usize {
        self.domain
    }

    pub fn elements(&self) -> usize {
        self.maps.len()
    }

    pub fn map(&self, s: usize) -> &[usize] {
        &self.maps[s]
    }

    #[inline]
    fn weight(&self, s: usize, x: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[s][x])
    }

    /// `L_s f`.
    pub fn apply(&self, s: usize, f: &[f64]) -> Vec<f64> {
        (0..self.domain)
            .map(|x| match &self.weights {
                None => f[self.maps[s][x]],
                Some(w) => w[s][x] * f[self.maps[s][x]],
            })
            .collect()
    }
}

fn check_shapes(semigroup: &FiniteSemigroup, action: &ActionTable, psi: &[f64], f: &[f64]) -> Result<()> {
    if action.elements() != semigroup.order() {
        return Err(Error::ShapeMismatch(format!(
            "action has {} elements, semigroup has {}",
            action.elements(),
            semigroup.order()
        )));
    }
    if psi.len() != action.domain() || f.len() != action.domain() {
        return Err(Error::ShapeMismatch(format!(
            "filter ({}) and signal ({}) must live on the action domain ({})",
            psi.len(),
            f.len(),
            action.domain()
        )));
    }
    Ok(())
}

/// `[psi * f](s) = sum_x psi(x) [L_s f](x)` for every element `s`.
pub fn semigroup_correlate(
    semigroup: &FiniteSemigroup,
    action: &ActionTable,
    psi: &[f64],
    f: &[f64],
) -> Result<Vec<f64>> {
    check_shapes(semigroup, action, psi, f)?;
    Ok((0..semigroup.order())
        .map(|s| {
            let lf = action.apply(s, f);
            psi.iter().zip(&lf).map(|(p, v)| p * v).sum()
        })
        .collect())
}

/// `max_s |[psi * L_t f](s) - [psi * f](st)|`.
pub fn check_equivariance_finite(
    semigroup: &FiniteSemigroup,
    action: &ActionTable,
    psi: &[f64],
    f: &[f64],
    t: usize,
) -> Result<f64> {
    check_shapes(semigroup, action, psi, f)?;
    if t >= semigroup.order() {
        return Err(invalid(format!("element {t} outside the semigroup")));
    }
    let moved = action.apply(t, f);
    let lhs = semigroup_correlate(semigroup, action, psi, &moved)?;
    let rhs = semigroup_correlate(semigroup, action, psi, f)?;
    Ok((0..semigroup.order())
        .map(|s| (lhs[s] - rhs[semigroup.compose(s, t)]).abs())
        .fold(0.0, f64::max))
}

/// Checks `L_{st} = L_s L_t` pointwise for every pair of elements.
pub fn verify_left_action(
    semigroup: &FiniteSemigroup,
    action: &ActionTable,
) -> std::result::Result<(), ActionViolation> {
    let n = semigroup.order().min(action.elements());
    for s in 0..n {
        for t in 0..n {
            let st = semigroup.compose(s, t);
            for x in 0..action.domain() {
                let via = action.maps[s][x];
                let same_point = action.maps[st][x] == action.maps[t][via];
                let w_direct = action.weight(st, x);
                let w_chain = action.weight(s, x) * action.weight(t, via);
                let tol = 1e-12 * w_direct.abs().max(w_chain.abs()).max(1.0);
                if !same_point || (w_direct - w_chain).abs() > tol {
                    return Err(ActionViolation { s, t, x });
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shift_action(n: usize) -> ActionTable {
        let maps = (0..n).map(|s| (0..n).map(|x| (x + s) % n).collect()).collect();
        ActionTable::new(n, maps, None).unwrap()
    }

    #[test]
    fn test_cyclic_impulse_filter_returns_signal() {
        let z5 = FiniteSemigroup::cyclic(5).unwrap();
        let act = shift_action(5);
        let f = [1.0, 2.0, 3.0, 4.0, 5.0];
        let out = semigroup_correlate(&z5, &act, &[1.0, 0.0, 0.0, 0.0, 0.0], &f).unwrap();
        assert_eq!(out, f.to_vec());
        let out = semigroup_correlate(&z5, &act, &[1.0, 1.0, 0.0, 0.0, 0.0], &f).unwrap();
        assert_eq!(out, vec![3.0, 5.0, 7.0, 9.0, 6.0]);
    }

    #[test]
    fn test_compose_example() {
        let a = ScaleShiftElement::new(1, [5, 0]);
        let b = ScaleShiftElement::new(0, [2, 0]);
        assert_eq!(a.compose(&b).unwrap(), ScaleShiftElement::new(1, [6, 0]));
    }

    #[test]
    fn test_compose_rejects_fractional_shift() {
        let a = ScaleShiftElement::new(1, [0, 0]);
        let b = ScaleShiftElement::new(0, [1, 0]);
        assert!(matches!(a.compose(&b), Err(Error::NonRepresentable { k: 1, .. })));
    }

    #[test]
    fn test_compose_matches_action_on_impulse() {
        let mut img = Image::zeros(24, 40, 1);
        img.set(12, 30, 0, 1.0);
        let a = ScaleShiftElement::new(1, [-5, 1]);
        let b = ScaleShiftElement::new(0, [2, -2]);
        let ab = a.compose(&b).unwrap();
        let chained = a.apply(&b.apply(&img, 0.25, SpatialBoundary::Zero).unwrap(), 0.25, SpatialBoundary::Zero).unwrap();
        let direct = ab.apply(&img, 0.25, SpatialBoundary::Zero).unwrap();
        assert!(direct.l2_norm() > 0.1);
        assert_eq!(chained, direct);
    }

    #[test]
    fn test_table_validation() {
        assert!(FiniteSemigroup::new(2, vec![0, 1, 1]).is_err());
        assert!(FiniteSemigroup::new(2, vec![0, 2, 1, 0]).is_err());
        // x*y = y+1 mod 3 is closed but not associative
        assert!(FiniteSemigroup::from_fn(3, |_, b| (b + 1) % 3).is_err());
        let z4 = FiniteSemigroup::cyclic(4).unwrap();
        assert_eq!(z4.identity(), Some(0));
        assert!(z4.is_commutative());
    }

    #[test]
    fn test_weighted_action_law() {
        // Z_2 acting on two points by swapping, with a sign on the swap.
        let s = FiniteSemigroup::cyclic(2).unwrap();
        let act = ActionTable::new(2, vec![vec![0, 1], vec![1, 0]], Some(vec![vec![1.0, 1.0], vec![-1.0, -1.0]]))
            .unwrap();
        assert_eq!(verify_left_action(&s, &act), Ok(()));
        let bad = ActionTable::new(2, vec![vec![0, 1], vec![1, 0]], Some(vec![vec![1.0, 1.0], vec![2.0, 2.0]]))
            .unwrap();
        assert!(verify_left_action(&s, &bad).is_err());
    }
}
