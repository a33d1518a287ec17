//! Physical parameters, bath kernels and the dimensionless rate coefficients.
//!
//! Everything is expressed with ħ = k_B = 1: temperatures are energies and
//! frequencies share one unit (conventionally the trap frequency ω).

mod quadrature;

pub use quadrature::{integrate_adaptive, principal_value_integral, Estimate, PvOptions};

use crate::error::{invalid, Error, Result};
use crate::Scalar;

/// Microscopic parameters of the particle, its internal qubit and the bath.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams<T> {
    pub mass: T,
    /// Trap frequency ω.
    pub trap_frequency: T,
    /// Qubit transition frequency Ω.
    pub qubit_frequency: T,
    /// Damping γ.
    pub damping: T,
    /// Lorentz-Drude cutoff Λ.
    pub cutoff: T,
    /// k_B T.
    pub temperature: T,
    /// Relative bath/qubit coupling a₀.
    pub coupling: T,
}

/// Thresholds for the "≫" relations the derivation relies on.
#[derive(Debug, Clone, Copy)]
pub struct RegimeThresholds {
    /// Minimum γ/ω for the high-damping regime.
    pub damping_ratio: f64,
    /// Minimum ratio in each link of T ≫ Λ ≫ ω.
    pub temperature_ratio: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self {
            damping_ratio: 10.0,
            temperature_ratio: 10.0,
        }
    }
}

impl<T: Scalar> PhysicalParams<T> {
    pub fn new(
        mass: T,
        trap_frequency: T,
        qubit_frequency: T,
        damping: T,
        cutoff: T,
        temperature: T,
        coupling: T,
    ) -> Result<Self> {
        let p = Self {
            mass,
            trap_frequency,
            qubit_frequency,
            damping,
            cutoff,
            temperature,
            coupling,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("trap_frequency", self.trap_frequency),
            ("qubit_frequency", self.qubit_frequency),
            ("damping", self.damping),
            ("cutoff", self.cutoff),
            ("temperature", self.temperature),
        ];
        for (name, v) in positive {
            if !(v > T::zero() && v.is_finite()) {
                return Err(invalid(
                    name,
                    format!("must be positive and finite, got {v}"),
                ));
            }
        }
        if !self.coupling.is_finite() {
            return Err(invalid("coupling", "must be finite"));
        }
        Ok(())
    }

    /// Position scale √(1/(2mω)).
    pub fn x0(&self) -> T {
        (T::one() / (T::lit(2.0) * self.mass * self.trap_frequency)).sqrt()
    }

    /// Momentum scale √(mω/2).
    pub fn p0(&self) -> T {
        (self.mass * self.trap_frequency / T::lit(2.0)).sqrt()
    }

    /// Thermal ratio α = T/ω.
    pub fn alpha(&self) -> T {
        self.temperature / self.trap_frequency
    }

    /// Matsubara frequency ν_n = 2πnT.
    pub fn matsubara(&self, n: usize) -> T {
        T::lit(2.0) * T::PI() * T::from_usize_lossy(n) * self.temperature
    }

    /// Bose occupation 1/(e^{ω/T} − 1), computed through `exp_m1`.
    pub fn bose(&self, w: T) -> T {
        T::one() / (w / self.temperature).exp_m1()
    }

    pub fn is_high_damping(&self, th: &RegimeThresholds) -> bool {
        self.damping / self.trap_frequency >= T::lit(th.damping_ratio)
    }

    /// T ≫ Λ ≫ ω.
    pub fn is_high_temperature(&self, th: &RegimeThresholds) -> bool {
        let r = T::lit(th.temperature_ratio);
        self.temperature >= r * self.cutoff && self.cutoff >= r * self.trap_frequency
    }

    fn j(&self, w: T) -> T {
        let l2 = self.cutoff * self.cutoff;
        T::lit(2.0) * self.mass * self.damping / T::PI() * w * l2 / (l2 + w * w)
    }
}

/// Ohmic spectral density with Lorentz-Drude cutoff, (2mγ/π)·w·Λ²/(Λ²+w²).
pub fn spectral_density<T: Scalar>(w: T, p: &PhysicalParams<T>) -> Result<T> {
    if w < T::zero() || w.is_nan() {
        return Err(invalid(
            "frequency",
            format!("must be non-negative, got {w}"),
        ));
    }
    if w.is_infinite() {
        return Ok(T::zero());
    }
    Ok(p.j(w))
}

/// High-temperature noise and dissipation kernels (ν(τ), η(τ)).
pub fn thermal_kernels<T: Scalar>(
    tau: T,
    p: &PhysicalParams<T>,
    th: &RegimeThresholds,
) -> Result<(T, T)> {
    if !p.is_high_temperature(th) {
        return Err(Error::Regime(format!(
            "thermal kernels need T ≥ {r}Λ and Λ ≥ {r}ω",
            r = th.temperature_ratio
        )));
    }
    let l = p.cutoff;
    let decay = (-l * tau.abs()).exp();
    let nu = T::lit(2.0) * p.mass * p.damping * p.temperature * l * decay;
    let sign = if tau > T::zero() {
        T::one()
    } else if tau < T::zero() {
        -T::one()
    } else {
        T::zero()
    };
    let eta = p.mass * p.damping * l * l * sign * decay;
    Ok((nu, eta))
}

/// Oscillator dissipator coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QhoCoefficients<T> {
    pub d_x: T,
    pub c_x: T,
    pub d_p: T,
    pub c_p: T,
}

/// Lorentz-Drude coefficients, exact or in the T ≫ Λ ≫ ω limit.
pub fn qho_coefficients<T: Scalar>(p: &PhysicalParams<T>, high_limit: bool) -> QhoCoefficients<T> {
    let (m, g, t, l, w) = (p.mass, p.damping, p.temperature, p.cutoff, p.trap_frequency);
    let two = T::lit(2.0);
    if high_limit {
        QhoCoefficients {
            d_x: two * m * g * t,
            c_x: m * g * l,
            d_p: two * m * g * t * w / l,
            c_p: m * g * w,
        }
    } else {
        let den = l * l + w * w;
        QhoCoefficients {
            d_x: two * m * g * t * l * l / den,
            c_x: m * g * l * l * l / den,
            d_p: two * m * g * t * l * w / den,
            c_p: m * g * l * l * w / den,
        }
    }
}

/// Whether the cross rates insist on Ω = ω.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resonance {
    #[default]
    Enforce,
    /// Compute anyway and report the detuning in the result.
    Warn,
}

/// Options for the principal-value-based rates.
#[derive(Debug, Clone, Copy)]
pub struct RateOptions {
    /// Upper integration limit in units of Λ.
    pub cutoff_multiple: f64,
    pub pv: PvOptions,
    pub resonance: Resonance,
    pub regime: RegimeThresholds,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            cutoff_multiple: 20.0,
            pv: PvOptions::default(),
            resonance: Resonance::Enforce,
            regime: RegimeThresholds::default(),
        }
    }
}

/// A principal-value rate split into quadrature and domain-truncation errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PvRate<T> {
    pub value: T,
    pub quadrature_error: T,
    /// Change in the value when the upper limit is doubled.
    pub tail_error: T,
}

fn pv_rate<T: Scalar, G: Fn(T) -> T>(
    g: G,
    p: &PhysicalParams<T>,
    opts: &RateOptions,
) -> Result<PvRate<T>> {
    let pole = p.qubit_frequency;
    let f = |w: T| g(w) / (w - pole);
    let upper = T::lit(opts.cutoff_multiple) * p.cutoff;
    if upper <= pole {
        return Err(invalid(
            "cutoff_multiple",
            "integration domain must extend past the qubit frequency",
        ));
    }
    let base = principal_value_integral(f, pole, T::zero(), upper, &opts.pv)?;
    let extra = integrate_adaptive(
        f,
        upper,
        upper + upper,
        T::lit(opts.pv.abs_tol),
        T::lit(opts.pv.rel_tol * 1e-3),
        2000,
    )?;
    Ok(PvRate {
        value: base.value,
        quadrature_error: base.error,
        tail_error: extra.value.abs(),
    })
}

/// Qubit rates (λ̄₁, λ̄₂, λ̄₃, Γ(Ω)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLevelRates<T> {
    pub lambda1: PvRate<T>,
    pub lambda2: T,
    pub lambda3: T,
    pub gamma_omega: T,
}

pub fn two_level_rates<T: Scalar>(
    p: &PhysicalParams<T>,
    opts: &RateOptions,
) -> Result<TwoLevelRates<T>> {
    p.validate()?;
    let omega = p.qubit_frequency;
    let a2 = p.coupling * p.coupling;
    let gamma_omega = T::lit(2.0) * a2 * T::PI() * p.j(omega);
    let n = p.bose(omega);
    let half = T::lit(0.5);
    let mut lambda1 = pv_rate(|w| p.j(w) * (p.bose(w) + half), p, opts)?;
    lambda1.value = a2 * lambda1.value - half * omega;
    lambda1.quadrature_error = a2 * lambda1.quadrature_error;
    lambda1.tail_error = a2 * lambda1.tail_error;
    Ok(TwoLevelRates {
        lambda1,
        lambda2: gamma_omega * (n + T::one()),
        lambda3: gamma_omega * n,
        gamma_omega,
    })
}

/// Qubit-oscillator cross rates (β̄₁, β̄₂, β̄₃).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossRates<T> {
    pub beta1: T,
    pub beta2: T,
    pub beta3: PvRate<T>,
    /// (Ω − ω)/ω; nonzero only under [`Resonance::Warn`].
    pub detuning: T,
}

pub fn cross_rates<T: Scalar>(p: &PhysicalParams<T>, opts: &RateOptions) -> Result<CrossRates<T>> {
    p.validate()?;
    let detuning = (p.qubit_frequency - p.trap_frequency) / p.trap_frequency;
    if opts.resonance == Resonance::Enforce && detuning.abs() > T::lit(1e-9) {
        return Err(Error::Regime(format!(
            "cross rates assume Ω = ω, detuning is {detuning}"
        )));
    }
    let omega = p.qubit_frequency;
    let scale = p.coupling * p.x0();
    let beta2 = T::lit(2.0) * T::PI() * scale * p.j(omega);
    let mut beta3 = pv_rate(|w| p.j(w), p, opts)?;
    beta3.value = scale * beta3.value;
    beta3.quadrature_error = scale.abs() * beta3.quadrature_error;
    beta3.tail_error = scale.abs() * beta3.tail_error;
    Ok(CrossRates {
        beta1: beta2 * p.bose(omega),
        beta2,
        beta3,
        detuning,
    })
}

/// The nine dimensionless rates driving the reduced dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CoefficientSet<T> {
    pub alpha_bar: T,
    pub beta_bar: T,
    pub beta1: T,
    pub beta2: T,
    pub beta3: T,
    pub lambda1: T,
    pub lambda2: T,
    pub lambda3: T,
    pub gamma_omega: T,
}

impl<T: Scalar> CoefficientSet<T> {
    /// Key names used by the flat key-value representation, in canonical order.
    pub const KEYS: [&'static str; 9] = [
        "alpha_bar",
        "beta_bar",
        "beta1",
        "beta2",
        "beta3",
        "lambda1",
        "lambda2",
        "lambda3",
        "gamma_omega",
    ];

    pub fn zero() -> Self {
        Self {
            alpha_bar: T::zero(),
            beta_bar: T::zero(),
            beta1: T::zero(),
            beta2: T::zero(),
            beta3: T::zero(),
            lambda1: T::zero(),
            lambda2: T::zero(),
            lambda3: T::zero(),
            gamma_omega: T::zero(),
        }
    }

    /// Sign constraints: ᾱ > 0 and β̄, λ̄₂, λ̄₃, Γ(Ω) ≥ 0.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in Self::KEYS.iter().zip(self.values()) {
            if !v.is_finite() {
                return Err(invalid(name, format!("must be finite, got {v}")));
            }
        }
        if self.alpha_bar <= T::zero() {
            return Err(invalid("alpha_bar", "must be positive"));
        }
        for (name, v) in [
            ("beta_bar", self.beta_bar),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("gamma_omega", self.gamma_omega),
        ] {
            if v < T::zero() {
                return Err(invalid(name, format!("must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn values(&self) -> [T; 9] {
        [
            self.alpha_bar,
            self.beta_bar,
            self.beta1,
            self.beta2,
            self.beta3,
            self.lambda1,
            self.lambda2,
            self.lambda3,
            self.gamma_omega,
        ]
    }

    /// `(key, value)` pairs in [`Self::KEYS`] order.
    pub fn to_pairs(&self) -> Vec<(&'static str, T)> {
        Self::KEYS.iter().copied().zip(self.values()).collect()
    }

    /// Builds a set from a key lookup; the first missing key is reported.
    pub fn from_lookup<F: FnMut(&str) -> Option<T>>(mut get: F) -> Result<Self> {
        let mut v = [T::zero(); 9];
        for (slot, key) in v.iter_mut().zip(Self::KEYS) {
            *slot = get(key).ok_or_else(|| invalid(key, "missing"))?;
        }
        Ok(Self {
            alpha_bar: v[0],
            beta_bar: v[1],
            beta1: v[2],
            beta2: v[3],
            beta3: v[4],
            lambda1: v[5],
            lambda2: v[6],
            lambda3: v[7],
            gamma_omega: v[8],
        })
    }

    pub fn cast<U: Scalar>(&self) -> CoefficientSet<U> {
        let c = |v: T| U::lit(v.to_f64_lossy());
        CoefficientSet {
            alpha_bar: c(self.alpha_bar),
            beta_bar: c(self.beta_bar),
            beta1: c(self.beta1),
            beta2: c(self.beta2),
            beta3: c(self.beta3),
            lambda1: c(self.lambda1),
            lambda2: c(self.lambda2),
            lambda3: c(self.lambda3),
            gamma_omega: c(self.gamma_omega),
        }
    }

    /// Derives the reduced coefficients from microscopic parameters.
    ///
    /// Requires the high-damping regime: ᾱ = Tω/(4γ) and β̄ = ω²/(4γ) only
    /// hold once momentum has been adiabatically eliminated.
    pub fn from_physical(p: &PhysicalParams<T>, opts: &RateOptions) -> Result<Self> {
        p.validate()?;
        if !p.is_high_damping(&opts.regime) {
            return Err(Error::Regime(format!(
                "adiabatic elimination needs γ/ω ≥ {}",
                opts.regime.damping_ratio
            )));
        }
        let q = two_level_rates(p, opts)?;
        let x = cross_rates(p, opts)?;
        let four_gamma = T::lit(4.0) * p.damping;
        let w = p.trap_frequency;
        Ok(Self {
            alpha_bar: p.temperature * w / four_gamma,
            beta_bar: w * w / four_gamma,
            beta1: x.beta1,
            beta2: x.beta2,
            beta3: x.beta3.value,
            lambda1: q.lambda1.value,
            lambda2: q.lambda2,
            lambda3: q.lambda3,
            gamma_omega: q.gamma_omega,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> PhysicalParams<f64> {
        PhysicalParams::<f64>::new(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn spectral_density_values() {
        let p = unit();
        assert_eq!(spectral_density(0.0, &p).unwrap(), 0.0);
        let at_cutoff = spectral_density(1.0, &p).unwrap();
        assert!((at_cutoff - 1.0 / std::f64::consts::PI).abs() < 1e-15);
        let v = spectral_density(2.0, &p).unwrap();
        assert!((v - 4.0 / (5.0 * std::f64::consts::PI)).abs() < 1e-15);
        assert!(spectral_density(-1.0, &p).is_err());
    }

    #[test]
    fn spectral_density_peaks_at_cutoff() {
        let mut p = unit();
        p.cutoff = 3.0;
        let (mut best, mut arg) = (0.0, 0.0);
        for i in 0..=6000 {
            let w = i as f64 * 1e-3;
            let j = spectral_density(w, &p).unwrap();
            assert!(j >= 0.0);
            if j > best {
                best = j;
                arg = w;
            }
        }
        assert!((arg - 3.0).abs() < 1.5e-3);
    }

    #[test]
    fn kernels_need_high_temperature() {
        let p = unit();
        assert!(matches!(
            thermal_kernels(0.0, &p, &RegimeThresholds::default()),
            Err(Error::Regime(_))
        ));
        let hot = PhysicalParams::<f64>::new(1.0, 1.0, 1.0, 2.0, 10.0, 100.0, 1.0).unwrap();
        let th = RegimeThresholds::default();
        let (nu, eta) = thermal_kernels(0.0, &hot, &th).unwrap();
        assert!((nu - 2.0 * 2.0 * 100.0 * 10.0).abs() < 1e-9);
        assert_eq!(eta, 0.0);
        let (nu, _) = thermal_kernels(0.1, &hot, &th).unwrap();
        assert!((nu - 4000.0 / std::f64::consts::E).abs() < 1e-9);
        let (nu, eta) = thermal_kernels(1e3, &hot, &th).unwrap();
        assert_eq!((nu, eta), (0.0, 0.0));
    }

    #[test]
    fn qho_high_limit_and_ratio() {
        let p = PhysicalParams::<f64>::new(2.0, 1.0, 1.0, 3.0, 1e3, 5e4, 1.0).unwrap();
        let hi = qho_coefficients(&p, true);
        assert_eq!(hi.d_x, 2.0 * 2.0 * 3.0 * 5e4);
        assert_eq!(hi.c_p, 2.0 * 3.0 * 1.0);
        let ex = qho_coefficients(&p, false);
        assert!((ex.d_p / ex.d_x - 1.0 / 1e3).abs() < 1e-15);
        assert!((ex.d_x - hi.d_x).abs() / hi.d_x <= 2e-6);
    }

    #[test]
    fn bose_small_argument_is_accurate() {
        let mut p = unit();
        p.temperature = 1e8;
        // n ≈ T/w − 1/2 for w ≪ T
        let n = p.bose(1.0);
        assert!((n - (1e8 - 0.5)).abs() / 1e8 < 1e-12);
    }

    #[test]
    fn two_level_rate_relations() {
        let opts = RateOptions::default();
        let p = PhysicalParams::<f64>::new(1.0, 1.0, 1.0, 0.5, 10.0, 2.0, 0.3).unwrap();
        let r = two_level_rates(&p, &opts).unwrap();
        assert!((r.lambda2 - r.lambda3 - r.gamma_omega).abs() <= 1e-15 * r.lambda2);
        let mut q = p;
        q.coupling = 0.6;
        let r2 = two_level_rates(&q, &opts).unwrap();
        assert!((r2.gamma_omega / r.gamma_omega - 4.0).abs() < 1e-12);
        let mut cold = p;
        cold.temperature = 1e-3;
        let rc = two_level_rates(&cold, &opts).unwrap();
        assert_eq!(rc.lambda3, 0.0);
        assert_eq!(rc.lambda2, rc.gamma_omega);
    }

    #[test]
    fn cross_rate_relations() {
        let opts = RateOptions::default();
        let p = PhysicalParams::<f64>::new(1.0, 1.0, 1.0, 0.5, 10.0, 2.0, 0.3).unwrap();
        let x = cross_rates(&p, &opts).unwrap();
        assert!((x.beta1 / x.beta2 - p.bose(1.0)).abs() < 1e-12);
        let mut cold = p;
        cold.temperature = 1e-3;
        assert_eq!(cross_rates(&cold, &opts).unwrap().beta1, 0.0);
        let mut off = p;
        off.qubit_frequency = 1.2;
        assert!(matches!(cross_rates(&off, &opts), Err(Error::Regime(_))));
        let warn = RateOptions {
            resonance: Resonance::Warn,
            ..opts
        };
        let w = cross_rates(&off, &warn).unwrap();
        assert!((w.detuning - 0.2).abs() < 1e-12);
    }

    #[test]
    fn beta2_unit_normalisation() {
        // choose a₀ so that a₀x₀J(Ω) = 1
        let mut p = PhysicalParams::<f64>::new(1.0, 1.0, 1.0, 0.5, 10.0, 2.0, 1.0).unwrap();
        p.coupling = 1.0 / (p.x0() * spectral_density(1.0, &p).unwrap());
        let x = cross_rates(&p, &RateOptions::default()).unwrap();
        assert!((x.beta2 - 2.0 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn from_physical_requires_high_damping() {
        let opts = RateOptions::default();
        let slow = PhysicalParams::<f64>::new(1.0, 1.0, 1.0, 2.0, 10.0, 200.0, 0.1).unwrap();
        assert!(matches!(
            CoefficientSet::<f64>::from_physical(&slow, &opts),
            Err(Error::Regime(_))
        ));
        let fast = PhysicalParams::<f64>::new(1.0, 1.0, 1.0, 20.0, 10.0, 200.0, 0.1).unwrap();
        let c = CoefficientSet::<f64>::from_physical(&fast, &opts).unwrap();
        assert!((c.alpha_bar - 200.0 / 80.0).abs() < 1e-14);
        assert!((c.beta_bar - 1.0 / 80.0).abs() < 1e-14);
        c.validate().unwrap();
    }

    #[test]
    fn lookup_reports_first_missing_key() {
        let err =
            CoefficientSet::<f64>::from_lookup(|k| (k == "alpha_bar").then_some(1.0)).unwrap_err();
        assert_eq!(
            err,
            Error::InvalidParameter {
                name: "beta_bar",
                reason: "missing".into()
            }
        );
        let c = CoefficientSet {
            alpha_bar: 1.0,
            lambda1: -2e-3,
            ..CoefficientSet::zero()
        };
        let pairs = c.to_pairs();
        let back =
            CoefficientSet::from_lookup(|k| pairs.iter().find(|p| p.0 == k).map(|p| p.1)).unwrap();
        assert_eq!(back, c);
    }
}
