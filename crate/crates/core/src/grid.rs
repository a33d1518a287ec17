//! Uniform grids with second-order finite differences and trapezoid quadrature.

use crate::error::{invalid, Error, Result};
use crate::Scalar;

/// Minimum node count accepted by [`SpatialGrid::new`].
pub const MIN_NODES: usize = 16;

/// Uniform grid on `[-L, L]`.
///
/// Nodes are built as `L·(2i − (N−1))/(N−1)`, so mirrored nodes are exact
/// negatives of each other and parity of sampled fields survives the
/// stencils bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid<T> {
    half_width: T,
    dx: T,
    nodes: Vec<T>,
}

impl<T: Scalar> SpatialGrid<T> {
    pub fn new(half_width: T, n: usize) -> Result<Self> {
        if n < MIN_NODES {
            return Err(invalid(
                "nodes",
                format!("need at least {MIN_NODES}, got {n}"),
            ));
        }
        if !(half_width > T::zero() && half_width.is_finite()) {
            return Err(invalid(
                "half_width",
                format!("must be positive, got {half_width}"),
            ));
        }
        let m = T::from_usize_lossy(n - 1);
        let nodes = (0..n)
            .map(|i| {
                let k = 2.0 * i as f64 - (n - 1) as f64;
                half_width * (T::lit(k) / m)
            })
            .collect();
        Ok(Self {
            half_width,
            dx: T::lit(2.0) * half_width / m,
            nodes,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn half_width(&self) -> T {
        self.half_width
    }

    #[inline]
    pub fn dx(&self) -> T {
        self.dx
    }

    #[inline]
    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    /// Samples `f` at every node.
    pub fn sample<F: Fn(T) -> T>(&self, f: F) -> Vec<T> {
        self.nodes.iter().map(|&x| f(x)).collect()
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: len,
            });
        }
        Ok(())
    }

    /// First derivative: central differences inside, second-order one-sided at the ends.
    pub fn d1(&self, f: &[T]) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.len()];
        self.d1_into(f, &mut out)?;
        Ok(out)
    }

    pub fn d1_into(&self, f: &[T], out: &mut [T]) -> Result<()> {
        self.check(f.len())?;
        self.check(out.len())?;
        d1_stencil(f, self.dx, out);
        Ok(())
    }

    /// Second derivative: 3-point stencil inside, 4-point one-sided at the ends.
    pub fn d2(&self, f: &[T]) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.len()];
        self.d2_into(f, &mut out)?;
        Ok(out)
    }

    pub fn d2_into(&self, f: &[T], out: &mut [T]) -> Result<()> {
        self.check(f.len())?;
        self.check(out.len())?;
        d2_stencil(f, self.dx, out);
        Ok(())
    }

    /// `∂ₓ(x·f)`.
    pub fn drift(&self, f: &[T]) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.len()];
        let mut scratch = vec![T::zero(); self.len()];
        self.drift_into(f, &mut scratch, &mut out)?;
        Ok(out)
    }

    /// `∂ₓ(x·f)` using caller-provided scratch space for `x·f`.
    pub fn drift_into(&self, f: &[T], scratch: &mut [T], out: &mut [T]) -> Result<()> {
        self.check(f.len())?;
        self.check(scratch.len())?;
        for ((s, &v), &x) in scratch.iter_mut().zip(f).zip(&self.nodes) {
            *s = x * v;
        }
        self.d1_into(scratch, out)
    }

    /// Trapezoid rule over `[-L, L]`.
    pub fn integrate(&self, f: &[T]) -> Result<T> {
        self.check(f.len())?;
        Ok(trapezoid(f, self.dx))
    }

    /// Trapezoid rule applied to `g(x)·f(x)`.
    pub fn integrate_with<G: Fn(T) -> T>(&self, f: &[T], g: G) -> Result<T> {
        self.check(f.len())?;
        let n = f.len();
        let mut s = T::zero();
        for i in 1..n - 1 {
            s = s + g(self.nodes[i]) * f[i];
        }
        let ends = g(self.nodes[0]) * f[0] + g(self.nodes[n - 1]) * f[n - 1];
        Ok((s + T::lit(0.5) * ends) * self.dx)
    }

    /// Pins both boundary values to zero.
    #[inline]
    pub fn pin(f: &mut [T]) {
        if let Some(first) = f.first_mut() {
            *first = T::zero();
        }
        if let Some(last) = f.last_mut() {
            *last = T::zero();
        }
    }
}

pub(crate) fn d1_stencil<T: Scalar>(f: &[T], h: T, out: &mut [T]) {
    let n = f.len();
    let inv2h = T::one() / (h + h);
    let three = T::lit(3.0);
    let four = T::lit(4.0);
    out[0] = (-three * f[0] + four * f[1] - f[2]) * inv2h;
    for i in 1..n - 1 {
        out[i] = (f[i + 1] - f[i - 1]) * inv2h;
    }
    out[n - 1] = (three * f[n - 1] - four * f[n - 2] + f[n - 3]) * inv2h;
}

pub(crate) fn d2_stencil<T: Scalar>(f: &[T], h: T, out: &mut [T]) {
    let n = f.len();
    let invh2 = T::one() / (h * h);
    let two = T::lit(2.0);
    let five = T::lit(5.0);
    let four = T::lit(4.0);
    out[0] = (two * f[0] - five * f[1] + four * f[2] - f[3]) * invh2;
    for i in 1..n - 1 {
        out[i] = ((f[i + 1] + f[i - 1]) - two * f[i]) * invh2;
    }
    out[n - 1] = (two * f[n - 1] - five * f[n - 2] + four * f[n - 3] - f[n - 4]) * invh2;
}

pub(crate) fn trapezoid<T: Scalar>(f: &[T], h: T) -> T {
    let n = f.len();
    let inner = f[1..n - 1].iter().fold(T::zero(), |s, &v| s + v);
    (inner + T::lit(0.5) * (f[0] + f[n - 1])) * h
}

/// Tensor grid for the (x, p) phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGrid<T> {
    pub x: SpatialGrid<T>,
    pub p: SpatialGrid<T>,
    alpha: T,
}

impl<T: Scalar> PhaseGrid<T> {
    /// Default momentum node count.
    pub const DEFAULT_P_NODES: usize = 512;

    /// Smallest momentum half-width keeping the stationary Gaussian's tail
    /// mass below 1e-10: `8√α`.
    pub fn min_p_half_width(alpha: T) -> T {
        T::lit(8.0) * alpha.sqrt()
    }

    /// Default momentum half-width, `8√α`; with [`Self::DEFAULT_P_NODES`] this
    /// keeps the three-point discretisation error of `L̂₁` below 1e-3 relative.
    pub fn default_p_half_width(alpha: T) -> T {
        Self::min_p_half_width(alpha)
    }

    pub fn new(x: SpatialGrid<T>, p: SpatialGrid<T>, alpha: T) -> Result<Self> {
        if !(alpha > T::zero()) {
            return Err(invalid("alpha", "must be positive"));
        }
        // small slack so that exactly 8√α passes after rounding
        if p.half_width() * T::lit(1.0 + 1e-12) < Self::min_p_half_width(alpha) {
            return Err(invalid(
                "p_half_width",
                format!(
                    "{} is below 8·sqrt(alpha) = {}",
                    p.half_width(),
                    Self::min_p_half_width(alpha)
                ),
            ));
        }
        Ok(Self { x, p, alpha })
    }

    /// Default momentum axis for the given x-grid and α.
    pub fn with_default_p(x: SpatialGrid<T>, alpha: T) -> Result<Self> {
        let p = SpatialGrid::new(Self::default_p_half_width(alpha), Self::DEFAULT_P_NODES)?;
        Self::new(x, p, alpha)
    }

    #[inline]
    pub fn alpha(&self) -> T {
        self.alpha
    }

    /// Total node count `N_x · N_p`.
    #[inline]
    pub fn len(&self) -> usize {
        self.x.len() * self.p.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index; p varies fastest.
    #[inline]
    pub fn index(&self, ix: usize, ip: usize) -> usize {
        ix * self.p.len() + ip
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn interior_max(a: &[f64], b: &[f64]) -> f64 {
        a[1..a.len() - 1]
            .iter()
            .zip(&b[1..b.len() - 1])
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn nodes_are_symmetric_and_span() {
        let g = SpatialGrid::<f64>::new(20.0, 1024).unwrap();
        assert_eq!(g.nodes()[0], -20.0);
        assert_eq!(g.nodes()[1023], 20.0);
        for i in 0..1024 {
            assert_eq!(g.nodes()[i], -g.nodes()[1023 - i]);
        }
        assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
        assert!((g.dx() * 1023.0 - 40.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(SpatialGrid::<f64>::new(1.0, 15).is_err());
        assert!(SpatialGrid::<f64>::new(0.0, 64).is_err());
        let g = SpatialGrid::<f64>::new(1.0, 32).unwrap();
        assert!(matches!(
            g.d1(&[0.0; 31]),
            Err(Error::LengthMismatch {
                expected: 32,
                got: 31
            })
        ));
    }

    #[test]
    fn d1_examples() {
        let g = SpatialGrid::<f64>::new(1.0, 101).unwrap();
        let c = g.d1(&vec![3.0; 101]).unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-12));
        let lin = g.d1(&g.sample(|x| x)).unwrap();
        assert!(lin.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let sq = g.d1(&g.sample(|x| x * x)).unwrap();
        assert!(interior_max(&sq, &g.sample(|x| 2.0 * x)) <= 1e-10);
        // one-sided ends are exact on quadratics too
        assert!((sq[0] + 2.0).abs() < 1e-10 && (sq[100] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn d2_examples() {
        let g = SpatialGrid::<f64>::new(1.0, 101).unwrap();
        let lin = g.d2(&g.sample(|x| x)).unwrap();
        assert!(lin.iter().all(|v| v.abs() < 1e-9));
        let sq = g.d2(&g.sample(|x| x * x)).unwrap();
        assert!(sq.iter().all(|v| (v - 2.0).abs() < 1e-8));
        let gs = SpatialGrid::<f64>::new(std::f64::consts::PI, 401).unwrap();
        let s = gs.d2(&gs.sample(f64::sin)).unwrap();
        assert!(interior_max(&s, &gs.sample(|x| -x.sin())) <= 1e-4);
    }

    #[test]
    fn drift_examples() {
        let g = SpatialGrid::<f64>::new(3.0, 301).unwrap();
        let one = g.drift(&vec![1.0; 301]).unwrap();
        assert!(one.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let x = g.drift(&g.sample(|x| x)).unwrap();
        assert!(interior_max(&x, &g.sample(|x| 2.0 * x)) < 1e-10);
        let e = g.drift(&g.sample(|x| (-x * x).exp())).unwrap();
        let exact = g.sample(|x| (1.0 - 2.0 * x * x) * (-x * x).exp());
        assert!(interior_max(&e, &exact) < 3.0 * g.dx() * g.dx());
    }

    #[test]
    fn integrate_examples() {
        let g = SpatialGrid::<f64>::new(1.0, 64).unwrap();
        assert!((g.integrate(&vec![1.0; 64]).unwrap() - 2.0).abs() < 1e-14);
        assert!(g.integrate(&g.sample(|x| x)).unwrap().abs() < 1e-15);
        let g = SpatialGrid::<f64>::new(10.0, 1001).unwrap();
        let v = g.integrate(&g.sample(|x| (-x * x).exp())).unwrap();
        assert!((v - std::f64::consts::PI.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn summation_by_parts_bound() {
        let g = SpatialGrid::<f64>::new(2.0, 201).unwrap();
        let f = g.sample(|x| (x + 0.3).cos() * (-0.5 * x * x).exp());
        let lhs = g.integrate(&g.d1(&f).unwrap()).unwrap().abs();
        let bound = f[0].abs() + f[200].abs() + 10.0 * g.dx() * g.dx();
        assert!(lhs <= bound);
    }

    #[test]
    fn single_precision_grid() {
        let g = SpatialGrid::<f32>::new(10.0, 1001).unwrap();
        let v = g.integrate(&g.sample(|x| (-x * x).exp())).unwrap();
        assert!((v - std::f32::consts::PI.sqrt()).abs() < 1e-5);
    }

    #[test]
    fn phase_grid_tail_bound() {
        let x = SpatialGrid::<f64>::new(5.0, 32).unwrap();
        let p = SpatialGrid::<f64>::new(7.0, 32).unwrap();
        assert!(PhaseGrid::new(x.clone(), p, 1.0).is_err());
        let ok = PhaseGrid::with_default_p(x.clone(), 0.25).unwrap();
        assert_eq!(ok.p.half_width(), 4.0);
        let wide = PhaseGrid::with_default_p(x, 4.0).unwrap();
        assert_eq!(wide.p.half_width(), 16.0);
        assert_eq!(wide.index(1, 0), 512);
    }

    proptest! {
        #[test]
        fn stencils_are_linear(a in -5.0f64..5.0, b in -5.0f64..5.0, s in 0.1f64..3.0) {
            let g = SpatialGrid::<f64>::new(4.0, 40).unwrap();
            let f = g.sample(|x| (s * x).sin());
            let h = g.sample(|x| (-x * x / s).exp());
            let mix: Vec<f64> = f.iter().zip(&h).map(|(u, v)| a * u + b * v).collect();
            for op in [SpatialGrid::d1, SpatialGrid::d2, SpatialGrid::drift] {
                let lhs = op(&g, &mix).unwrap();
                let (fu, hv) = (op(&g, &f).unwrap(), op(&g, &h).unwrap());
                for i in 0..40 {
                    let r = a * fu[i] + b * hv[i];
                    prop_assert!((lhs[i] - r).abs() <= 1e-9 * (1.0 + r.abs()));
                }
            }
        }

        #[test]
        fn parity_is_exact(s in 0.1f64..3.0, n in 16usize..200) {
            let g = SpatialGrid::<f64>::new(3.0, n).unwrap();
            let even = g.sample(|x| (-s * x * x).exp());
            let d1 = g.d1(&even).unwrap();
            let d2 = g.d2(&even).unwrap();
            for i in 0..n {
                prop_assert_eq!(d1[i], -d1[n - 1 - i]);
                prop_assert_eq!(d2[i], d2[n - 1 - i]);
            }
        }
    }
}
