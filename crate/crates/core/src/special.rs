//! Special functions: Euler gamma and Hermite polynomials.

use crate::Scalar;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Euler gamma function via the Lanczos approximation (g = 7, nine terms),
/// with the reflection formula below one half.
pub fn gamma<T: Scalar>(z: T) -> T {
    let half = T::lit(0.5);
    if z < half {
        let pi = T::PI();
        return pi / ((pi * z).sin() * gamma(T::one() - z));
    }
    let z = z - T::one();
    let mut acc = T::lit(LANCZOS_COEF[0]);
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc = acc + T::lit(c) / (z + T::from_usize_lossy(i));
    }
    let t = z + T::lit(LANCZOS_G) + half;
    (T::lit(2.0) * T::PI()).sqrt() * t.powf(z + half) * (-t).exp() * acc
}

/// Physicists' Hermite polynomial H_n(x) by the three-term recurrence
/// H_{n+1} = 2x H_n - 2n H_{n-1}.
pub fn hermite<T: Scalar>(n: usize, x: T) -> T {
    let two = T::lit(2.0);
    let mut prev = T::one();
    if n == 0 {
        return prev;
    }
    let mut cur = two * x;
    for k in 1..n {
        let next = two * x * cur - two * T::from_usize_lossy(k) * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// n! as a scalar.
pub fn factorial<T: Scalar>(n: usize) -> T {
    (1..=n).fold(T::one(), |acc, k| acc * T::from_usize_lossy(k))
}
