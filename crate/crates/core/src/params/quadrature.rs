//! Adaptive Gauss-Kronrod quadrature and symmetric-exclusion principal values.

// Tabulated 15-point Kronrod nodes and weights, kept at published precision.
#![allow(clippy::excessive_precision)]

use crate::error::{Error, Result};
use crate::Scalar;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5, 7).
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// A quadrature value with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate<T> {
    pub value: T,
    pub error: T,
}

fn gk15<T: Scalar, F: Fn(T) -> T>(f: &F, a: T, b: T) -> (T, T) {
    let half = T::lit(0.5);
    let center = half * (a + b);
    let radius = half * (b - a);
    let fc = f(center);
    let mut kronrod = fc * T::lit(WGK[7]);
    let mut gauss = fc * T::lit(WG[3]);
    for j in 0..7 {
        let dx = radius * T::lit(XGK[j]);
        let s = f(center - dx) + f(center + dx);
        kronrod = kronrod + T::lit(WGK[j]) * s;
        if j % 2 == 1 {
            gauss = gauss + T::lit(WG[j / 2]) * s;
        }
    }
    (kronrod * radius, ((kronrod - gauss) * radius).abs())
}

/// Globally adaptive G7-K15 integration of `f` over `[a, b]`.
///
/// Bisects the interval with the largest error estimate until the summed
/// estimate falls below `max(abs_tol, rel_tol * |I|)` or `max_intervals` is hit.
pub fn integrate_adaptive<T: Scalar, F: Fn(T) -> T>(
    f: F,
    a: T,
    b: T,
    abs_tol: T,
    rel_tol: T,
    max_intervals: usize,
) -> Result<Estimate<T>> {
    if a == b {
        return Ok(Estimate {
            value: T::zero(),
            error: T::zero(),
        });
    }
    let (v, e) = gk15(&f, a, b);
    let mut intervals = vec![(a, b, v, e)];
    loop {
        let total: T = intervals.iter().fold(T::zero(), |s, iv| s + iv.2);
        let err: T = intervals.iter().fold(T::zero(), |s, iv| s + iv.3);
        if !total.is_finite() || !err.is_finite() {
            return Err(Error::Quadrature {
                a: a.to_f64_lossy(),
                b: b.to_f64_lossy(),
                error: f64::NAN,
            });
        }
        let target = abs_tol.max(rel_tol * total.abs());
        if err <= target {
            return Ok(Estimate {
                value: total,
                error: err,
            });
        }
        if intervals.len() >= max_intervals {
            return Err(Error::Quadrature {
                a: a.to_f64_lossy(),
                b: b.to_f64_lossy(),
                error: err.to_f64_lossy(),
            });
        }
        let (worst, _) =
            intervals
                .iter()
                .enumerate()
                .fold((0usize, T::neg_infinity()), |best, (i, iv)| {
                    if iv.3 > best.1 {
                        (i, iv.3)
                    } else {
                        best
                    }
                });
        let (lo, hi, _, _) = intervals.swap_remove(worst);
        let mid = T::lit(0.5) * (lo + hi);
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
}

/// Settings for [`principal_value_integral`].
#[derive(Debug, Clone, Copy)]
pub struct PvOptions {
    /// Initial exclusion half-width as a fraction of the domain width.
    pub epsilon_fraction: f64,
    /// Number of halvings in the geometric schedule (3 gives eps, eps/2, eps/4).
    pub levels: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for PvOptions {
    fn default() -> Self {
        Self {
            epsilon_fraction: 1e-2,
            levels: 3,
            rel_tol: 1e-6,
            abs_tol: 1e-12,
        }
    }
}

/// Cauchy principal value of `∫_a^b f`, where `f` carries a simple pole at `pole`.
///
/// The integral is evaluated with a symmetric window `(pole - eps, pole + eps)`
/// removed for a geometric schedule of `eps`, then extrapolated to `eps -> 0`.
/// The exclusion error expands in odd powers of `eps`, so the Richardson
/// factors are 2 and 8.
pub fn principal_value_integral<T: Scalar, F: Fn(T) -> T>(
    f: F,
    pole: T,
    a: T,
    b: T,
    opts: &PvOptions,
) -> Result<Estimate<T>> {
    if !(a < pole && pole < b) {
        return Err(crate::error::invalid(
            "pole",
            format!(
                "pole {} must lie strictly inside ({}, {})",
                pole.to_f64_lossy(),
                a.to_f64_lossy(),
                b.to_f64_lossy()
            ),
        ));
    }
    if opts.levels < 2 {
        return Err(crate::error::invalid(
            "levels",
            "need at least two exclusion widths",
        ));
    }
    let width = b - a;
    let gap = (pole - a).min(b - pole);
    let mut eps = (T::lit(opts.epsilon_fraction) * width).min(T::lit(0.5) * gap);
    let abs_tol = T::lit(opts.abs_tol * 1e-3);
    let rel_tol = T::lit(opts.rel_tol * 1e-4);

    let mut raw = Vec::with_capacity(opts.levels);
    for _ in 0..opts.levels {
        let left = integrate_adaptive(&f, a, pole - eps, abs_tol, rel_tol, 4000)?;
        let right = integrate_adaptive(&f, pole + eps, b, abs_tol, rel_tol, 4000)?;
        raw.push(left.value + right.value);
        eps = eps * T::lit(0.5);
    }

    // Richardson table over odd powers: factors 2^1, 2^3, 2^5, ...
    let mut table = vec![raw.clone()];
    let mut power = 1i32;
    while table.last().map_or(0, |r| r.len()) > 1 {
        let prev = table.last().unwrap();
        let factor = T::lit(2f64.powi(power));
        let next: Vec<T> = prev
            .windows(2)
            .map(|w| (factor * w[1] - w[0]) / (factor - T::one()))
            .collect();
        table.push(next);
        power += 2;
    }
    let best = table.last().unwrap()[0];
    let previous = *table[table.len() - 2].last().unwrap();
    let error = (best - previous).abs();

    let diffs: Vec<T> = raw.windows(2).map(|w| w[1] - w[0]).collect();
    let scale = best.abs().max(T::lit(opts.abs_tol));
    let negligible = |d: T| d.abs() <= T::lit(opts.rel_tol) * scale;
    let mut consistent = true;
    for w in diffs.windows(2) {
        if negligible(w[0]) && negligible(w[1]) {
            continue;
        }
        // leading term is linear in eps: successive differences shrink by ~2
        let ratio = w[0] / w[1];
        if !(ratio > T::lit(1.25) && ratio < T::lit(3.0)) {
            consistent = false;
        }
    }
    let tolerance = T::lit(opts.abs_tol).max(T::lit(opts.rel_tol) * best.abs());
    let converged = error.is_finite() && (error <= tolerance || consistent);
    if !converged {
        return Err(Error::PrincipalValue {
            estimates: raw.iter().map(|v| v.to_f64_lossy()).collect(),
            residuals: diffs.iter().map(|v| v.to_f64_lossy()).collect(),
        });
    }
    Ok(Estimate { value: best, error })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_kronrod_polynomial_exact() {
        let r = integrate_adaptive(
            |x: f64| x.powi(5) - 3.0 * x * x,
            -1.0,
            2.0,
            1e-14,
            1e-14,
            10,
        )
        .unwrap();
        let exact = (64.0 - 1.0) / 6.0 - (8.0 + 1.0);
        assert!((r.value - exact).abs() < 1e-12);
    }

    #[test]
    fn adaptive_resolves_peaked_integrand() {
        let r = integrate_adaptive(|x: f64| 1.0 / (1e-4 + x * x), -1.0, 1.0, 1e-12, 1e-12, 2000)
            .unwrap();
        let exact = 2.0 * (1.0f64 / 1e-2).atan() / 1e-2;
        assert!((r.value - exact).abs() / exact < 1e-10);
    }

    #[test]
    fn pv_odd_integrand_vanishes() {
        let omega = 1.7f64;
        let r = principal_value_integral(
            |w: f64| 1.0 / (w - omega),
            omega,
            omega - 1.0,
            omega + 1.0,
            &PvOptions::default(),
        )
        .unwrap();
        assert!(r.value.abs() < 1e-10, "{}", r.value);
    }

    #[test]
    fn pv_removable_singularity() {
        let omega = 0.4f64;
        let r = principal_value_integral(
            |w: f64| (w - omega) / (w - omega),
            omega,
            omega - 1.0,
            omega + 2.0,
            &PvOptions::default(),
        )
        .unwrap();
        assert!((r.value - 3.0).abs() < 1e-10);
    }

    #[test]
    fn pv_linear_numerator() {
        let r =
            principal_value_integral(|w: f64| w / (w - 1.0), 1.0, 0.0, 2.0, &PvOptions::default())
                .unwrap();
        assert!((r.value - 2.0).abs() < 1e-10, "{}", r.value);
    }

    #[test]
    fn pv_log_oracle() {
        // P∫_0^3 1/(w-1) dw = ln 2
        let r = principal_value_integral(
            |w: f64| 1.0 / (w - 1.0),
            1.0,
            0.0,
            3.0,
            &PvOptions::default(),
        )
        .unwrap();
        assert!((r.value - 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn pv_rejects_pole_outside() {
        assert!(
            principal_value_integral(|w: f64| w, 3.0, 0.0, 2.0, &PvOptions::default()).is_err()
        );
    }
}
