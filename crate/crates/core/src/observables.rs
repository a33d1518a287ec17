//! Scalar observables and shape diagnostics of the position distribution `P = W₊`.

use crate::error::{invalid, Error, Result};
use crate::grid::SpatialGrid;
use crate::oqbm::WignerField;
use crate::Scalar;

/// `∫W₊ dx`.
pub fn norm<T: Scalar>(f: &WignerField<T>) -> T {
    crate::grid::trapezoid(&f.w_plus, f.grid().dx())
}

/// `⟨σ_z⟩ = ∫W₋ dx`.
pub fn sigma_z<T: Scalar>(f: &WignerField<T>) -> T {
    crate::grid::trapezoid(&f.w_minus, f.grid().dx())
}

/// `C_I(t) = ∫C_I dx`.
pub fn coherence_total<T: Scalar>(f: &WignerField<T>) -> T {
    crate::grid::trapezoid(&f.c_i, f.grid().dx())
}

/// `∫C_R dx`.
pub fn coherence_real_total<T: Scalar>(f: &WignerField<T>) -> T {
    crate::grid::trapezoid(&f.c_r, f.grid().dx())
}

fn positive_norm<T: Scalar>(f: &WignerField<T>) -> Result<T> {
    let n = norm(f);
    if !(n > T::zero()) {
        return Err(invalid(
            "field",
            format!("norm of W₊ must be positive, got {n}"),
        ));
    }
    Ok(n)
}

/// Mean position under `P = W₊/∫W₊`.
pub fn mean<T: Scalar>(f: &WignerField<T>) -> Result<T> {
    let n = positive_norm(f)?;
    Ok(f.grid().integrate_with(&f.w_plus, |x| x)? / n)
}

/// `⟨x²⟩ − ⟨x⟩²` under `P = W₊/∫W₊`.
pub fn variance<T: Scalar>(f: &WignerField<T>) -> Result<T> {
    let n = positive_norm(f)?;
    let g = f.grid();
    let m = g.integrate_with(&f.w_plus, |x| x)? / n;
    // central form avoids cancellation for off-centre distributions
    Ok(g.integrate_with(&f.w_plus, |x| (x - m) * (x - m))? / n)
}

/// Per-time scalar observables of a trajectory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeSeries<T> {
    pub times: Vec<T>,
    pub norm: Vec<T>,
    pub mean_x: Vec<T>,
    pub variance: Vec<T>,
    pub c_i_total: Vec<T>,
    pub sigma_z: Vec<T>,
}

impl<T: Scalar> TimeSeries<T> {
    pub fn new() -> Self {
        Self {
            times: Vec::new(),
            norm: Vec::new(),
            mean_x: Vec::new(),
            variance: Vec::new(),
            c_i_total: Vec::new(),
            sigma_z: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Appends the observables of `f`; mean and variance are NaN when the
    /// norm is not positive (e.g. for difference fields).
    pub fn record(&mut self, f: &WignerField<T>) {
        self.times.push(f.t);
        self.norm.push(norm(f));
        self.mean_x.push(mean(f).unwrap_or(T::nan()));
        self.variance.push(variance(f).unwrap_or(T::nan()));
        self.c_i_total.push(coherence_total(f));
        self.sigma_z.push(sigma_z(f));
    }

    /// Central-difference derivative of `⟨σ_z⟩` at the last recorded time,
    /// one-sided second order.
    pub fn sigma_z_rate_at_end(&self) -> Option<T> {
        let n = self.len();
        if n < 3 {
            return None;
        }
        let (t0, t1, t2) = (self.times[n - 3], self.times[n - 2], self.times[n - 1]);
        let (y0, y1, y2) = (
            self.sigma_z[n - 3],
            self.sigma_z[n - 2],
            self.sigma_z[n - 1],
        );
        // derivative of the interpolating parabola at t2
        let h1 = t1 - t0;
        let h2 = t2 - t1;
        let d = y0 * h2 / (h1 * (h1 + h2)) - y1 * (h1 + h2) / (h1 * h2)
            + y2 * (h1 + h2 + h2) / (h2 * (h1 + h2));
        Some(d)
    }
}

/// Peak detection threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold<T> {
    /// Fraction of `max W₊`.
    Relative(T),
    Absolute(T),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakOptions<T> {
    pub threshold: Threshold<T>,
    /// Minimum peak separation; `None` means 10·dx.
    pub min_sep: Option<T>,
}

impl<T: Scalar> Default for PeakOptions<T> {
    fn default() -> Self {
        Self {
            threshold: Threshold::Relative(T::lit(1e-2)),
            min_sep: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PeakReport<T> {
    pub positions: Vec<T>,
    pub heights: Vec<T>,
    /// Grid index of each peak (centre of a plateau).
    pub indices: Vec<usize>,
    pub count: usize,
}

/// Local maxima of `W₊` above the threshold, merged within the minimum separation.
pub fn peak_census<T: Scalar>(f: &WignerField<T>, opts: &PeakOptions<T>) -> Result<PeakReport<T>> {
    peaks_of(f.grid(), &f.w_plus, opts)
}

/// [`peak_census`] on a bare sampled profile.
pub fn peaks_of<T: Scalar>(
    grid: &SpatialGrid<T>,
    p: &[T],
    opts: &PeakOptions<T>,
) -> Result<PeakReport<T>> {
    if p.len() != grid.len() {
        return Err(Error::LengthMismatch {
            expected: grid.len(),
            got: p.len(),
        });
    }
    let max = p.iter().copied().fold(T::neg_infinity(), T::max);
    let cut = match opts.threshold {
        Threshold::Relative(r) | Threshold::Absolute(r) if !(r > T::zero()) => {
            return Err(invalid("threshold", "must be positive"));
        }
        Threshold::Relative(r) => r * max,
        Threshold::Absolute(a) => a,
    };
    let min_sep = opts.min_sep.unwrap_or(T::lit(10.0) * grid.dx());
    let x = grid.nodes();
    let n = p.len();

    // (index, height) of strict maxima, plateaus collapsed to their centre
    let mut cands: Vec<(usize, T)> = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        let mut j = i;
        while j + 1 < n && p[j + 1] == p[i] {
            j += 1;
        }
        if j + 1 < n && p[i] > p[i - 1] && p[j] > p[j + 1] && p[i] > T::zero() && p[i] >= cut {
            cands.push(((i + j) / 2, p[i]));
        }
        i = j + 1;
    }
    cands.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    let mut kept: Vec<(usize, T)> = Vec::new();
    for (idx, h) in cands {
        if kept.iter().all(|&(k, _)| (x[k] - x[idx]).abs() >= min_sep) {
            kept.push((idx, h));
        }
    }
    kept.sort_by_key(|&(idx, _)| idx);

    let mut report = PeakReport::default();
    for (idx, h) in kept {
        let (pos, height) = refine(x, p, idx, grid.dx()).unwrap_or((x[idx], h));
        report.positions.push(pos);
        report.heights.push(height);
        report.indices.push(idx);
    }
    report.count = report.indices.len();
    Ok(report)
}

/// Parabolic sub-grid refinement of an isolated maximum.
fn refine<T: Scalar>(x: &[T], p: &[T], i: usize, dx: T) -> Option<(T, T)> {
    if i == 0 || i + 1 >= p.len() {
        return None;
    }
    let (a, b, c) = (p[i - 1], p[i], p[i + 1]);
    let curv = a - (b + b) + c;
    if !(curv < T::zero()) {
        return None;
    }
    let off = T::lit(0.5) * (a - c) / curv;
    let h = b - T::lit(0.25) * (a - c) * off;
    Some((x[i] + off * dx, h))
}

/// Least-squares single-Gaussian fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFit<T> {
    pub amplitude: T,
    pub mean: T,
    pub variance: T,
    /// L² residual over L² norm of the data.
    pub residual: T,
}

/// Fits `A·exp(−(x−μ)²/(2v))` to `(x, y)` by Levenberg-Marquardt, started from the moments.
pub fn fit_gaussian<T: Scalar>(x: &[T], y: &[T]) -> Result<GaussianFit<T>> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::DegenerateFit("need at least three samples".into()));
    }
    let mass: T = y.iter().fold(T::zero(), |s, &v| s + v);
    if !(mass > T::zero()) {
        return Err(Error::DegenerateFit("profile has no positive mass".into()));
    }
    let mu0 = x.iter().zip(y).fold(T::zero(), |s, (&a, &b)| s + a * b) / mass;
    let v0 = x
        .iter()
        .zip(y)
        .fold(T::zero(), |s, (&a, &b)| s + (a - mu0) * (a - mu0) * b)
        / mass;
    if !(v0 > T::zero()) {
        return Err(Error::DegenerateFit("zero variance".into()));
    }
    let peak = y.iter().copied().fold(T::neg_infinity(), T::max);
    // parameters (A, μ, ln v)
    let mut theta = [peak, mu0, v0.ln()];
    let cost = |th: &[T; 3]| -> T {
        let v = th[2].exp();
        x.iter().zip(y).fold(T::zero(), |s, (&xi, &yi)| {
            let r = yi - th[0] * (-(xi - th[1]) * (xi - th[1]) / (v + v)).exp();
            s + r * r
        })
    };
    let mut current = cost(&theta);
    let mut lambda = T::lit(1e-3);
    for _ in 0..500 {
        let v = theta[2].exp();
        let mut jtj = [[T::zero(); 3]; 3];
        let mut jtr = [T::zero(); 3];
        for (&xi, &yi) in x.iter().zip(y) {
            let d = xi - theta[1];
            let e = (-d * d / (v + v)).exp();
            let model = theta[0] * e;
            let r = yi - model;
            let jac = [e, model * d / v, model * d * d / (v + v)];
            for a in 0..3 {
                jtr[a] = jtr[a] + jac[a] * r;
                for b in 0..3 {
                    jtj[a][b] = jtj[a][b] + jac[a] * jac[b];
                }
            }
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut m = jtj;
            for (a, row) in m.iter_mut().enumerate() {
                row[a] = row[a] * (T::one() + lambda);
            }
            let Some(step) = solve3(m, jtr) else {
                lambda = lambda * T::lit(10.0);
                continue;
            };
            let trial = [theta[0] + step[0], theta[1] + step[1], theta[2] + step[2]];
            let c = cost(&trial);
            if c.is_finite() && c <= current {
                let rel = (current - c) / current.max(T::min_positive_value());
                theta = trial;
                current = c;
                lambda = (lambda * T::lit(0.3)).max(T::lit(1e-12));
                improved = rel > T::lit(1e-14);
                break;
            }
            lambda = lambda * T::lit(10.0);
        }
        if !improved {
            break;
        }
    }
    let variance = theta[2].exp();
    if !(variance > T::zero()) || !variance.is_finite() {
        return Err(Error::DegenerateFit("fitted variance collapsed".into()));
    }
    let data = y.iter().fold(T::zero(), |s, &v| s + v * v);
    Ok(GaussianFit {
        amplitude: theta[0],
        mean: theta[1],
        variance,
        residual: (current / data).sqrt(),
    })
}

fn solve3<T: Scalar>(m: [[T; 3]; 3], b: [T; 3]) -> Option<[T; 3]> {
    let det = |a: &[[T; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d = det(&m);
    if d == T::zero() || !d.is_finite() {
        return None;
    }
    let mut out = [T::zero(); 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut mk = m;
        for r in 0..3 {
            mk[r][k] = b[r];
        }
        *o = det(&mk) / d;
    }
    Some(out)
}

/// Single-Gaussian residual of `P = W₊`.
pub fn gaussian_residual<T: Scalar>(f: &WignerField<T>) -> Result<T> {
    positive_norm(f)?;
    Ok(fit_gaussian(f.grid().nodes(), &f.w_plus)?.residual)
}

/// Gaussian residual of each lobe, splitting `P` at the minima between peaks.
pub fn lobe_residuals<T: Scalar>(f: &WignerField<T>, peaks: &PeakReport<T>) -> Result<Vec<T>> {
    positive_norm(f)?;
    let x = f.grid().nodes();
    let p = &f.w_plus;
    if peaks.count <= 1 {
        return Ok(vec![fit_gaussian(x, p)?.residual]);
    }
    let mut cuts = vec![0usize];
    for w in peaks.indices.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let m = (lo..=hi)
            .min_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap_or(lo);
        cuts.push(m);
    }
    cuts.push(p.len() - 1);
    cuts.windows(2)
        .map(|w| fit_gaussian(&x[w[0]..=w[1]], &p[w[0]..=w[1]]).map(|g| g.residual))
        .collect()
}

/// Log-log slope of `σ²(t) − σ²(0)` over `window`.
pub fn growth_exponent<T: Scalar>(ts: &TimeSeries<T>, window: (T, T)) -> Result<T> {
    if ts.is_empty() {
        return Err(invalid("series", "empty time series"));
    }
    let base = ts.variance[0];
    let mut pts = Vec::new();
    for (&t, &v) in ts.times.iter().zip(&ts.variance) {
        if t >= window.0 && t <= window.1 && t > T::zero() {
            let y = v - base;
            if !(y > T::zero()) {
                return Err(invalid(
                    "window",
                    format!("σ²(t) − σ²(0) = {y} is not positive at t = {t}"),
                ));
            }
            pts.push((t.ln(), y.ln()));
        }
    }
    if pts.len() < 2 {
        return Err(invalid(
            "window",
            "fewer than two samples inside the window",
        ));
    }
    let n = T::from_usize_lossy(pts.len());
    let mx = pts.iter().fold(T::zero(), |s, p| s + p.0) / n;
    let my = pts.iter().fold(T::zero(), |s, p| s + p.1) / n;
    let (sxy, sxx) = pts.iter().fold((T::zero(), T::zero()), |(a, b), p| {
        (a + (p.0 - mx) * (p.1 - my), b + (p.0 - mx) * (p.0 - mx))
    });
    if sxx == T::zero() {
        return Err(invalid("window", "degenerate time window"));
    }
    Ok(sxy / sxx)
}

/// Default early and late windows for [`growth_exponent`].
pub fn default_windows<T: Scalar>() -> [(T, T); 2] {
    [(T::lit(2.0), T::lit(20.0)), (T::lit(100.0), T::lit(200.0))]
}
