//! Truncated hierarchy for the position moments `R_n = (⟨xⁿW₊⟩, ⟨xⁿW₋⟩, ⟨xⁿC_R⟩, ⟨xⁿC_I⟩)`.
//!
//! `dR_n/dt = M_n R_n + A_n R_{n−1} + B_n R_{n−2} + C R_{n+1}`, closed by
//! `R_{N_max+1} = 0`.

use crate::error::{invalid, Error, Result};
use crate::oqbm::{InternalState, LambdaOneCoupling, WignerField};
use crate::params::CoefficientSet;
use crate::special::gamma;
use crate::Scalar;

pub type Mat4<T> = [[T; 4]; 4];

/// Which population-inversion decay enters `M_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HierarchyForm {
    /// `M_n[1][1] = −(β̄ + 2λ̄₃)`, as the matrices are printed.
    #[default]
    Printed,
    /// `M_n[1][1] = −(nβ̄ + 2λ̄₃ + Γ(Ω))`, the rate obtained by taking moments
    /// of the four-field PDE system directly.
    PdeConsistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct HierarchyOptions {
    pub form: HierarchyForm,
    pub lambda1: LambdaOneCoupling,
}

/// Smallest admissible truncation order.
pub const MIN_NMAX: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct MomentSystem<T> {
    nmax: usize,
    c: CoefficientSet<T>,
    opts: HierarchyOptions,
    m: Vec<Mat4<T>>,
    a: Vec<Mat4<T>>,
    b: Vec<T>,
    up: Mat4<T>,
}

/// Builds the printed hierarchy up to order `nmax`.
pub fn build_system<T: Scalar>(c: &CoefficientSet<T>, nmax: usize) -> Result<MomentSystem<T>> {
    MomentSystem::new(c, nmax, HierarchyOptions::default())
}

impl<T: Scalar> MomentSystem<T> {
    pub fn new(c: &CoefficientSet<T>, nmax: usize, opts: HierarchyOptions) -> Result<Self> {
        if nmax < MIN_NMAX {
            return Err(invalid(
                "nmax",
                format!("must be at least {MIN_NMAX}, got {nmax}"),
            ));
        }
        let mut sys = Self {
            nmax,
            c: *c,
            opts,
            m: Vec::with_capacity(nmax + 1),
            a: Vec::with_capacity(nmax + 1),
            b: Vec::with_capacity(nmax + 1),
            up: [[T::zero(); 4]; 4],
        };
        for n in 0..=nmax {
            sys.m.push(sys.build_m(n));
            sys.a.push(sys.build_a(n));
            let nf = T::from_usize_lossy(n);
            sys.b.push(c.alpha_bar * nf * (nf - T::one()));
        }
        let q = T::lit(0.25);
        sys.up = [
            [T::zero(); 4],
            [T::zero(), T::zero(), -c.beta2, T::lit(2.0) * c.beta3],
            [T::zero(), q * c.beta2, T::zero(), T::zero()],
            [T::zero(), -T::lit(0.5) * c.beta3, T::zero(), T::zero()],
        ];
        Ok(sys)
    }

    pub fn nmax(&self) -> usize {
        self.nmax
    }

    pub fn coefficients(&self) -> &CoefficientSet<T> {
        &self.c
    }

    pub fn options(&self) -> HierarchyOptions {
        self.opts
    }

    /// `δ₁ = 2β̄n + λ̄₂ + λ̄₃`.
    pub fn delta1(&self, n: usize) -> T {
        T::lit(2.0) * self.c.beta_bar * T::from_usize_lossy(n) + self.c.lambda2 + self.c.lambda3
    }

    /// `δ₂ = 4λ̄₁ − 2β̄n − λ̄₂ − λ̄₃`.
    pub fn delta2(&self, n: usize) -> T {
        T::lit(4.0) * self.c.lambda1
            - T::lit(2.0) * self.c.beta_bar * T::from_usize_lossy(n)
            - self.c.lambda2
            - self.c.lambda3
    }

    /// `δ₃ = 2β̄₁ + β̄₂`.
    pub fn delta3(&self) -> T {
        T::lit(2.0) * self.c.beta1 + self.c.beta2
    }

    fn build_m(&self, n: usize) -> Mat4<T> {
        let c = &self.c;
        let nf = T::from_usize_lossy(n);
        let z = T::zero();
        let half = T::lit(0.5);
        let wm = match self.opts.form {
            HierarchyForm::Printed => -(c.beta_bar + T::lit(2.0) * c.lambda3),
            HierarchyForm::PdeConsistent => {
                -(nf * c.beta_bar + T::lit(2.0) * c.lambda3 + c.gamma_omega)
            }
        };
        let (ci_diag, rot) = match self.opts.lambda1 {
            LambdaOneCoupling::Diagonal => (half * self.delta2(n), z),
            LambdaOneCoupling::Rotation => (-half * self.delta1(n), T::lit(2.0) * c.lambda1),
        };
        [
            [-c.beta_bar * nf, z, z, z],
            [-c.gamma_omega, wm, z, z],
            [z, z, -half * self.delta1(n), -rot],
            [z, z, rot, ci_diag],
        ]
    }

    fn build_a(&self, n: usize) -> Mat4<T> {
        let c = &self.c;
        let nf = T::from_usize_lossy(n);
        let z = T::zero();
        let d3 = self.delta3();
        [
            [z, z, -nf * c.beta2 / T::lit(2.0), -nf * c.beta3],
            [z, z, nf * d3, z],
            [-nf * c.beta2 / T::lit(8.0), -nf * d3 / T::lit(4.0), z, z],
            [-nf * c.beta3 / T::lit(4.0), z, z, z],
        ]
    }

    pub fn m(&self, n: usize) -> &Mat4<T> {
        &self.m[n]
    }

    pub fn a(&self, n: usize) -> &Mat4<T> {
        &self.a[n]
    }

    /// `B_n = ᾱn(n−1)·I`, returned as a full matrix.
    pub fn b(&self, n: usize) -> Mat4<T> {
        let mut out = [[T::zero(); 4]; 4];
        for (i, row) in out.iter_mut().enumerate() {
            row[i] = self.b[n];
        }
        out
    }

    pub fn c(&self) -> &Mat4<T> {
        &self.up
    }

    /// Length of the flattened state `4·(N_max+1)`.
    pub fn dim(&self) -> usize {
        4 * (self.nmax + 1)
    }

    /// `out = L·r` for the flattened truncated operator.
    pub fn apply(&self, r: &[T], out: &mut [T]) {
        let nmax = self.nmax;
        for n in 0..=nmax {
            let mut acc = [T::zero(); 4];
            mat_vec_add(&self.m[n], &r[4 * n..4 * n + 4], &mut acc);
            if n >= 1 {
                mat_vec_add(&self.a[n], &r[4 * (n - 1)..4 * n], &mut acc);
            }
            if n >= 2 {
                for (k, v) in acc.iter_mut().enumerate() {
                    *v = *v + self.b[n] * r[4 * (n - 2) + k];
                }
            }
            if n < nmax {
                mat_vec_add(&self.up, &r[4 * (n + 1)..4 * (n + 2)], &mut acc);
            }
            out[4 * n..4 * n + 4].copy_from_slice(&acc);
        }
    }

    /// Dense row-major matrix of the truncated operator.
    pub fn dense(&self) -> Vec<Vec<T>> {
        let d = self.dim();
        let mut cols = vec![vec![T::zero(); d]; d];
        let mut e = vec![T::zero(); d];
        let mut out = vec![T::zero(); d];
        for j in 0..d {
            e[j] = T::one();
            self.apply(&e, &mut out);
            for i in 0..d {
                cols[i][j] = out[i];
            }
            e[j] = T::zero();
        }
        cols
    }

    /// Spectral-radius estimate by power iteration with log-averaged growth
    /// factors (robust to complex-conjugate dominant pairs).
    pub fn spectral_bound(&self) -> T {
        let d = self.dim();
        let mut v: Vec<T> = (0..d)
            .map(|i| T::one() + T::lit(0.1) * T::from_usize_lossy(i % 7))
            .collect();
        let mut w = vec![T::zero(); d];
        let norm = |x: &[T]| x.iter().fold(T::zero(), |s, &a| s + a * a).sqrt();
        let n0 = norm(&v);
        v.iter_mut().for_each(|a| *a = *a / n0);
        let (burn, iters) = (200, 400);
        let mut log_sum = T::zero();
        for k in 0..burn + iters {
            self.apply(&v, &mut w);
            let nw = norm(&w);
            if nw == T::zero() || !nw.is_finite() {
                return if nw == T::zero() {
                    T::zero()
                } else {
                    T::infinity()
                };
            }
            if k >= burn {
                log_sum = log_sum + nw.ln();
            }
            for (a, &b) in v.iter_mut().zip(&w) {
                *a = b / nw;
            }
        }
        (log_sum / T::from_usize_lossy(iters)).exp()
    }
}

fn mat_vec_add<T: Scalar>(m: &Mat4<T>, v: &[T], acc: &mut [T; 4]) {
    for i in 0..4 {
        acc[i] = acc[i] + m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2] + m[i][3] * v[3];
    }
}

/// Moments of the Gaussian initial state: `Γ((1+n)/2)/√π` times the qubit weights, zero for odd `n`.
pub fn initial_moments<T: Scalar>(n: usize, state: &InternalState<T>) -> [T; 4] {
    if n % 2 == 1 {
        return [T::zero(); 4];
    }
    let s = gamma(T::lit((1 + n) as f64 / 2.0)) / T::PI().sqrt();
    state.weights().map(|w| s * w)
}

/// Stable-step factor: RK4 requires `dt·ρ ≤ 2.5`.
pub const RK4_STABILITY: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentSettings<T> {
    pub dt: T,
    pub t_final: T,
    /// Record every `sample_every` steps (the final time is always recorded).
    pub sample_every: usize,
    /// Abort when the state norm exceeds this multiple of its initial value.
    pub blowup_factor: T,
}

impl<T: Scalar> MomentSettings<T> {
    pub fn new(dt: T, t_final: T) -> Self {
        Self {
            dt,
            t_final,
            sample_every: 1,
            blowup_factor: T::lit(1e8),
        }
    }
}

/// Sampled solution of the hierarchy: `moments[k][n]` is `R_n(times[k])`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTrajectory<T> {
    pub times: Vec<T>,
    pub moments: Vec<Vec<[T; 4]>>,
    pub spectral_bound: T,
}

impl<T: Scalar> MomentTrajectory<T> {
    /// Time series of `R_n`.
    pub fn order(&self, n: usize) -> Vec<[T; 4]> {
        self.moments.iter().map(|r| r[n]).collect()
    }
}

/// RK4 integration of the truncated hierarchy.
pub fn evolve_moments<T: Scalar>(
    sys: &MomentSystem<T>,
    init: &[[T; 4]],
    settings: &MomentSettings<T>,
) -> Result<MomentTrajectory<T>> {
    if init.len() != sys.nmax + 1 {
        return Err(Error::LengthMismatch {
            expected: sys.nmax + 1,
            got: init.len(),
        });
    }
    let MomentSettings {
        dt,
        t_final,
        sample_every,
        blowup_factor,
    } = *settings;
    if !(dt > T::zero()) || !(t_final >= T::zero()) || sample_every == 0 {
        return Err(invalid(
            "dt",
            "need dt > 0, t_final ≥ 0 and sample_every ≥ 1",
        ));
    }
    let rho = sys.spectral_bound();
    let max_dt = T::lit(RK4_STABILITY) / rho;
    if dt > max_dt {
        return Err(Error::Unstable {
            dt: dt.to_f64_lossy(),
            max_dt: max_dt.to_f64_lossy(),
            binding: format!("moment hierarchy spectral bound {:e}", rho.to_f64_lossy()),
        });
    }
    let d = sys.dim();
    let mut r: Vec<T> = init.iter().flatten().copied().collect();
    let norm = |x: &[T]| x.iter().fold(T::zero(), |s, &a| s.max(a.abs()));
    let bound = blowup_factor * norm(&r).max(T::one());
    let steps = (t_final / dt).round().to_f64_lossy() as usize;
    let unflatten = |r: &[T]| -> Vec<[T; 4]> {
        r.chunks_exact(4)
            .map(|c| [c[0], c[1], c[2], c[3]])
            .collect()
    };
    let mut out = MomentTrajectory {
        times: vec![T::zero()],
        moments: vec![init.to_vec()],
        spectral_bound: rho,
    };
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (
        vec![T::zero(); d],
        vec![T::zero(); d],
        vec![T::zero(); d],
        vec![T::zero(); d],
        vec![T::zero(); d],
    );
    let half = T::lit(0.5) * dt;
    let sixth = dt / T::lit(6.0);
    let two = T::lit(2.0);
    for s in 1..=steps {
        sys.apply(&r, &mut k1);
        for i in 0..d {
            tmp[i] = r[i] + half * k1[i];
        }
        sys.apply(&tmp, &mut k2);
        for i in 0..d {
            tmp[i] = r[i] + half * k2[i];
        }
        sys.apply(&tmp, &mut k3);
        for i in 0..d {
            tmp[i] = r[i] + dt * k3[i];
        }
        sys.apply(&tmp, &mut k4);
        for i in 0..d {
            r[i] = r[i] + sixth * (k1[i] + two * (k2[i] + k3[i]) + k4[i]);
        }
        let t = dt * T::from_usize_lossy(s);
        let nr = norm(&r);
        if !nr.is_finite() || nr > bound {
            return Err(Error::MomentBlowUp {
                t: t.to_f64_lossy(),
                norm: nr.to_f64_lossy(),
                bound: bound.to_f64_lossy(),
                spectral_bound: rho.to_f64_lossy(),
            });
        }
        if s % sample_every == 0 || s == steps {
            out.times.push(t);
            out.moments.push(unflatten(&r));
        }
    }
    Ok(out)
}

/// `(t, ⟨xⁿ·field⟩)` for each snapshot.
pub fn moments_from_pde<T: Scalar>(
    snapshots: &[WignerField<T>],
    n: usize,
) -> Result<Vec<(T, [T; 4])>> {
    let mut out = Vec::with_capacity(snapshots.len());
    for f in snapshots {
        let g = f.grid();
        let edge = g.half_width().powi(n as i32);
        let peak = f
            .components()
            .iter()
            .flat_map(|c| c.iter())
            .fold(T::zero(), |m, v| m.max(v.abs()));
        let limit = T::max_value() / T::from_usize_lossy(g.len() * 4);
        if !edge.is_finite() || edge > limit || edge * peak > limit {
            return Err(invalid(
                "n",
                format!(
                    "x^{n} overflows at the grid edge |x| = {}; use a lower order or a narrower grid",
                    g.half_width()
                ),
            ));
        }
        let comps = f.components();
        let mut v = [T::zero(); 4];
        for (slot, comp) in v.iter_mut().zip(comps) {
            *slot = g.integrate_with(comp, |x| x.powi(n as i32))?;
        }
        out.push((f.t, v));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpatialGrid;
    use crate::oqbm::{initial_field, InitialCondition, InitialKind};
    use std::sync::Arc;

    fn coeffs() -> CoefficientSet<f64> {
        CoefficientSet {
            alpha_bar: 8e-3,
            beta_bar: 1e-3,
            beta1: 3e-3,
            beta2: 5e-2,
            beta3: 1e-2,
            lambda1: 5e-3,
            lambda2: 8e-3,
            lambda3: 1e-3,
            gamma_omega: 1e-4,
        }
    }

    #[test]
    fn m0_a0_b2() {
        let c = coeffs();
        let s = build_system(&c, 8).unwrap();
        let m0 = s.m(0);
        assert_eq!(m0[0][0], 0.0);
        assert_eq!(m0[1][1], -(c.beta_bar + 2.0 * c.lambda3));
        assert_eq!(m0[2][2], -(c.lambda2 + c.lambda3) / 2.0);
        assert!((m0[3][3] - (4.0 * c.lambda1 - c.lambda2 - c.lambda3) / 2.0).abs() < 1e-18);
        assert_eq!(m0[1][0], -c.gamma_omega);
        assert!(s.a(0).iter().flatten().all(|&v| v == 0.0));
        let b2 = s.b(2);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(b2[i][j], if i == j { 2.0 * c.alpha_bar } else { 0.0 });
            }
        }
        assert!(s.b(0).iter().flatten().all(|&v| v == 0.0));
        assert!(s.b(1).iter().flatten().all(|&v| v == 0.0));
        assert!(s.c()[0].iter().all(|&v| v == 0.0));
        assert_eq!(s.delta3(), 2.0 * c.beta1 + c.beta2);
    }

    #[test]
    fn consistent_form_changes_only_inversion_decay() {
        let c = coeffs();
        let p = build_system(&c, 4).unwrap();
        let q = MomentSystem::new(
            &c,
            4,
            HierarchyOptions {
                form: HierarchyForm::PdeConsistent,
                ..Default::default()
            },
        )
        .unwrap();
        for n in 0..=4 {
            for i in 0..4 {
                for j in 0..4 {
                    if (i, j) != (1, 1) {
                        assert_eq!(p.m(n)[i][j], q.m(n)[i][j]);
                    }
                }
            }
            let want = -(n as f64 * c.beta_bar + 2.0 * c.lambda3 + c.gamma_omega);
            assert!((q.m(n)[1][1] - want).abs() < 1e-18);
        }
    }

    #[test]
    fn rejects_low_order() {
        assert!(build_system(&coeffs(), 1).is_err());
    }

    #[test]
    fn initial_moment_values() {
        let s = InternalState::<f64>::new(0.4, 1.3).unwrap();
        assert_eq!(initial_moments(0, &s)[0], 1.0);
        assert!((initial_moments(2, &s)[0] - 0.5).abs() < 1e-14);
        assert!((initial_moments(4, &s)[0] - 0.75).abs() < 1e-14);
        assert_eq!(initial_moments(3, &s), [0.0; 4]);
        let w = s.weights();
        assert!((initial_moments(2, &s)[3] - 0.5 * w[3]).abs() < 1e-14);
    }

    fn init(s: &MomentSystem<f64>, st: &InternalState<f64>) -> Vec<[f64; 4]> {
        (0..=s.nmax()).map(|n| initial_moments(n, st)).collect()
    }

    #[test]
    fn zero_coefficients_freeze_moments() {
        let s = build_system(&CoefficientSet::zero(), 4).unwrap();
        let st = InternalState::new(0.3, 0.2).unwrap();
        let r0 = init(&s, &st);
        let tr = evolve_moments(&s, &r0, &MomentSettings::new(0.1, 5.0)).unwrap();
        assert_eq!(tr.moments.last().unwrap(), &r0);
        assert_eq!(tr.spectral_bound, 0.0);
    }

    #[test]
    fn second_moment_relaxes_to_ratio() {
        let c = CoefficientSet {
            alpha_bar: 0.2,
            beta_bar: 0.1,
            ..CoefficientSet::zero()
        };
        let s = build_system(&c, 4).unwrap();
        let st = InternalState::new(0.0, 0.0).unwrap();
        let tr = evolve_moments(&s, &init(&s, &st), &MomentSettings::new(0.01, 10.0)).unwrap();
        // closed form: m(t) = a/b + (m0 − a/b)e^{−2bt}
        let want = 2.0 + (0.5 - 2.0) * (-2.0f64 * 0.1 * 10.0).exp();
        let got = tr.moments.last().unwrap()[2][0];
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        // zeroth moment conserved
        assert!(tr.order(0).iter().all(|r| (r[0] - 1.0).abs() < 1e-14));
    }

    #[test]
    fn zeroth_moment_conserved_with_couplings() {
        let s = build_system(&coeffs(), 8).unwrap();
        let st = InternalState::new(0.5, 2.0).unwrap();
        let tr = evolve_moments(&s, &init(&s, &st), &MomentSettings::new(0.05, 50.0)).unwrap();
        assert!(tr.order(0).iter().all(|r| (r[0] - 1.0).abs() < 1e-9));
    }

    #[test]
    fn step_beyond_spectral_bound_is_rejected() {
        let c = CoefficientSet {
            alpha_bar: 1.0,
            beta_bar: 0.05,
            ..coeffs()
        };
        let s = build_system(&c, 8).unwrap();
        let st = InternalState::new(0.5, 2.0).unwrap();
        let dt = 3.0 / s.spectral_bound();
        let e = evolve_moments(&s, &init(&s, &st), &MomentSettings::new(dt, 10.0 * dt));
        assert!(matches!(e, Err(Error::Unstable { .. })));
    }

    #[test]
    fn spectral_bound_matches_dense_eigenvalues() {
        for (ab, nmax) in [(8e-3, 8), (1.0, 8), (1.0, 12)] {
            let c = CoefficientSet {
                alpha_bar: ab,
                ..coeffs()
            };
            let s = build_system(&c, nmax).unwrap();
            let d = s.dim();
            let dense = s.dense();
            let m = nalgebra::DMatrix::from_fn(d, d, |i, j| dense[i][j]);
            let rho = m
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            let est = s.spectral_bound();
            assert!((est - rho).abs() <= 0.05 * rho, "{est} vs {rho}");
        }
    }

    #[test]
    fn blow_up_is_reported() {
        let c = CoefficientSet {
            lambda1: 1.0,
            ..CoefficientSet::zero()
        };
        let s = build_system(&c, 2).unwrap();
        let st = InternalState::new(0.5, 1.0).unwrap();
        let mut set = MomentSettings::new(0.01, 100.0);
        set.blowup_factor = 1e3;
        assert!(matches!(
            evolve_moments(&s, &init(&s, &st), &set),
            Err(Error::MomentBlowUp { .. })
        ));
    }

    #[test]
    fn pde_moments_of_initial_field() {
        let g = Arc::new(SpatialGrid::<f64>::new(20.0, 1024).unwrap());
        let st = InternalState::new(0.3, 0.7).unwrap();
        let f = initial_field(&InitialCondition::new(InitialKind::Single, 2.0, st), g).unwrap();
        let snaps = [f.clone()];
        let m0 = moments_from_pde(&snaps, 0).unwrap()[0].1;
        assert!((m0[0] - 1.0).abs() < 1e-12);
        assert!((m0[1] - crate::observables::sigma_z(&f)).abs() < 1e-15);
        let m2 = moments_from_pde(&snaps, 2).unwrap()[0].1;
        let want = initial_moments(2, &st);
        for k in 0..4 {
            assert!((m2[k] - want[k]).abs() < 1e-8);
        }
        let m3 = moments_from_pde(&snaps, 3).unwrap()[0].1;
        assert!(m3.iter().all(|v| v.abs() < 1e-10));
        assert!(moments_from_pde(&snaps, 400).is_err());
    }
}
