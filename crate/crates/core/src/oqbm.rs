//! Four-field Wigner representation of the reduced dynamics and its RK4 integrator.

use std::sync::Arc;

use num_complex::Complex;

use crate::error::{invalid, Error, Result};
use crate::grid::SpatialGrid;
use crate::observables::TimeSeries;
use crate::params::CoefficientSet;
use crate::Scalar;

/// Safety factor applied to both stability bounds.
pub const CFL_SAFETY: f64 = 0.4;

/// Bloch angles of the initial qubit state, canonicalised to θ ∈ [0, π), φ ∈ [0, 2π).
///
/// Every quantity built from the state depends on θ only through 2θ, so
/// reducing θ modulo π loses nothing (θ = π is the same state as θ = 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InternalState<T> {
    theta: T,
    phi: T,
}

impl<T: Scalar> InternalState<T> {
    pub fn new(theta: T, phi: T) -> Result<Self> {
        if !theta.is_finite() || !phi.is_finite() {
            return Err(invalid("theta/phi", "angles must be finite"));
        }
        let wrap = |v: T, period: T| {
            let r = v % period;
            let r = if r < T::zero() { r + period } else { r };
            if r >= period {
                T::zero()
            } else {
                r
            }
        };
        Ok(Self {
            theta: wrap(theta, T::PI()),
            phi: wrap(phi, T::TAU()),
        })
    }

    pub fn theta(&self) -> T {
        self.theta
    }

    pub fn phi(&self) -> T {
        self.phi
    }

    /// Weights `(1, cos2θ, ½sin2θ cosφ, −½sin2θ sinφ)` multiplying the spatial
    /// profile in `(W₊, W₋, C_R, C_I)`.
    pub fn weights(&self) -> [T; 4] {
        let two_theta = self.theta + self.theta;
        let half_s = T::lit(0.5) * two_theta.sin();
        [
            T::one(),
            two_theta.cos(),
            half_s * self.phi.cos(),
            -half_s * self.phi.sin(),
        ]
    }

    /// The 2×2 qubit density matrix with unit trace.
    pub fn density_matrix(&self) -> [[Complex<T>; 2]; 2] {
        let [_, wm, cr, ci] = self.weights();
        let half = T::lit(0.5);
        [
            [
                Complex::new(half * (T::one() + wm), T::zero()),
                Complex::new(cr, ci),
            ],
            [
                Complex::new(cr, -ci),
                Complex::new(half * (T::one() - wm), T::zero()),
            ],
        ]
    }
}

/// Spatial shape of the initial distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialKind {
    /// `e^{−x^k}`.
    Single,
    /// `e^{−(x+3)^k} + e^{−(x−3)^k}`.
    Double,
}

/// Offset of the two lobes of [`InitialKind::Double`].
pub const DOUBLE_OFFSET: f64 = 3.0;

/// Treatment of exponents for which `e^{−x^k}` is not normalisable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExponentRule {
    Strict,
    /// Substitute `e^{−|x|^k}` for odd or non-integer `k`.
    #[default]
    AbsoluteValue,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialCondition<T> {
    pub kind: InitialKind,
    pub k: T,
    pub state: InternalState<T>,
    pub rule: ExponentRule,
}

impl<T: Scalar> InitialCondition<T> {
    pub fn new(kind: InitialKind, k: T, state: InternalState<T>) -> Self {
        Self {
            kind,
            k,
            state,
            rule: ExponentRule::default(),
        }
    }

    /// True when `k` is a positive even integer, so `e^{−x^k}` is used verbatim.
    pub fn is_even_exponent(&self) -> bool {
        let r = self.k.round();
        r == self.k && (r.to_f64_lossy() as i64) % 2 == 0
    }

    /// True when the profile had to be built from `|x|^k`.
    pub fn uses_abs_substitution(&self) -> bool {
        !self.is_even_exponent()
    }

    /// Unnormalised profile value at `x`.
    fn shape(&self, x: T) -> T {
        let even = self.is_even_exponent();
        let pow = |u: T| {
            if even {
                u.powi(self.k.to_f64_lossy() as i32)
            } else {
                u.abs().powf(self.k)
            }
        };
        match self.kind {
            InitialKind::Single => (-pow(x)).exp(),
            InitialKind::Double => {
                let d = T::lit(DOUBLE_OFFSET);
                (-pow(x + d)).exp() + (-pow(x - d)).exp()
            }
        }
    }
}

/// The four real fields `(W₊, W₋, C_R, C_I)` on a shared grid.
///
/// In matrix form `W₁₁ = (W₊+W₋)/2`, `W₂₂ = (W₊−W₋)/2`, `W₁₂ = C_R + iC_I`.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerField<T> {
    grid: Arc<SpatialGrid<T>>,
    pub w_plus: Vec<T>,
    pub w_minus: Vec<T>,
    pub c_r: Vec<T>,
    pub c_i: Vec<T>,
    pub t: T,
}

impl<T: Scalar> WignerField<T> {
    pub fn zeros(grid: Arc<SpatialGrid<T>>) -> Self {
        let n = grid.len();
        Self {
            grid,
            w_plus: vec![T::zero(); n],
            w_minus: vec![T::zero(); n],
            c_r: vec![T::zero(); n],
            c_i: vec![T::zero(); n],
            t: T::zero(),
        }
    }

    /// Builds a field from explicit components, checking their lengths.
    pub fn from_components(grid: Arc<SpatialGrid<T>>, comps: [Vec<T>; 4], t: T) -> Result<Self> {
        for c in &comps {
            if c.len() != grid.len() {
                return Err(Error::LengthMismatch {
                    expected: grid.len(),
                    got: c.len(),
                });
            }
        }
        let [w_plus, w_minus, c_r, c_i] = comps;
        Ok(Self {
            grid,
            w_plus,
            w_minus,
            c_r,
            c_i,
            t,
        })
    }

    pub fn grid(&self) -> &Arc<SpatialGrid<T>> {
        &self.grid
    }

    pub fn components(&self) -> [&[T]; 4] {
        [&self.w_plus, &self.w_minus, &self.c_r, &self.c_i]
    }

    pub fn components_mut(&mut self) -> [&mut Vec<T>; 4] {
        [
            &mut self.w_plus,
            &mut self.w_minus,
            &mut self.c_r,
            &mut self.c_i,
        ]
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    /// `self ← a·self + b·other`.
    pub fn lincomb(&mut self, a: T, b: T, other: &Self) -> Result<()> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        for (s, o) in self.components_mut().into_iter().zip(other.components()) {
            for (u, &v) in s.iter_mut().zip(o) {
                *u = a * *u + b * v;
            }
        }
        Ok(())
    }

    pub fn scaled(&self, a: T) -> Self {
        let mut out = self.clone();
        for c in out.components_mut() {
            c.iter_mut().for_each(|v| *v = *v * a);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.components()
            .iter()
            .all(|c| c.iter().all(|v| v.is_finite()))
    }

    /// The 2×2 Wigner matrix at node `i`.
    pub fn matrix_at(&self, i: usize) -> [[Complex<T>; 2]; 2] {
        let half = T::lit(0.5);
        let (p, m) = (self.w_plus[i], self.w_minus[i]);
        [
            [
                Complex::new(half * (p + m), T::zero()),
                Complex::new(self.c_r[i], self.c_i[i]),
            ],
            [
                Complex::new(self.c_r[i], -self.c_i[i]),
                Complex::new(half * (p - m), T::zero()),
            ],
        ]
    }

    /// Largest |component| difference against another field on the same grid.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        let mut m = T::zero();
        for (a, b) in self.components().iter().zip(other.components()) {
            for (u, v) in a.iter().zip(b) {
                m = m.max((*u - *v).abs());
            }
        }
        Ok(m)
    }
}

/// Initial field: spatial profile (pinned to zero at ±L) normalised to unit
/// trapezoid mass, times the qubit weights of the internal state.
pub fn initial_field<T: Scalar>(
    ic: &InitialCondition<T>,
    grid: Arc<SpatialGrid<T>>,
) -> Result<WignerField<T>> {
    if !(ic.k > T::zero() && ic.k.is_finite()) {
        return Err(invalid(
            "k",
            format!("exponent must be positive, got {}", ic.k),
        ));
    }
    if ic.rule == ExponentRule::Strict && !ic.is_even_exponent() {
        return Err(invalid(
            "k",
            format!(
                "e^(-x^{}) is not normalisable; select the |x|^k rule to substitute",
                ic.k
            ),
        ));
    }
    let mut profile = grid.sample(|x| ic.shape(x));
    SpatialGrid::pin(&mut profile);
    let norm = grid.integrate(&profile)?;
    if !(norm > T::zero()) {
        return Err(invalid("grid", "initial profile has no mass on the grid"));
    }
    let weights = ic.state.weights();
    let mut f = WignerField::zeros(grid);
    for (comp, w) in f.components_mut().into_iter().zip(weights) {
        for (c, &p) in comp.iter_mut().zip(&profile) {
            *c = w * p / norm;
        }
    }
    Ok(f)
}

/// How the λ̄₁ term enters the coherence equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LambdaOneCoupling {
    /// `+2λ̄₁` on the `C_I` diagonal, as the four-field system is written.
    #[default]
    Diagonal,
    /// The commutator `iλ̄₁[σ_z, ·]`: rotates `(C_R, C_I)` at rate `2λ̄₁`.
    Rotation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RhsOptions {
    pub lambda1: LambdaOneCoupling,
}

/// Pointwise qubit block of the right-hand side as a 4×4 matrix acting on
/// `(W₊, W₋, C_R, C_I)`: decay, relaxation and the λ̄₁ term.
pub fn local_block<T: Scalar>(c: &CoefficientSet<T>, opts: &RhsOptions) -> [[T; 4]; 4] {
    let z = T::zero();
    let half = T::lit(0.5);
    let decay_c = half * (c.lambda2 + c.lambda3);
    let (diag_ci, rot) = match opts.lambda1 {
        LambdaOneCoupling::Diagonal => {
            (half * (T::lit(4.0) * c.lambda1 - c.lambda2 - c.lambda3), z)
        }
        LambdaOneCoupling::Rotation => (-decay_c, T::lit(2.0) * c.lambda1),
    };
    [
        [z, z, z, z],
        [
            -c.gamma_omega,
            -(T::lit(2.0) * c.lambda3 + c.gamma_omega),
            z,
            z,
        ],
        [z, z, -decay_c, -rot],
        [z, z, rot, diag_ci],
    ]
}

/// Scratch buffers reused across right-hand-side evaluations.
#[derive(Debug, Clone)]
pub struct Workspace<T> {
    d1: [Vec<T>; 4],
    d2: Vec<T>,
    drift: Vec<T>,
    xf: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    pub fn new(n: usize) -> Self {
        let z = || vec![T::zero(); n];
        Self {
            d1: [z(), z(), z(), z()],
            d2: z(),
            drift: z(),
            xf: z(),
        }
    }
}

/// Time derivative of the four fields.
pub fn rhs<T: Scalar>(f: &WignerField<T>, c: &CoefficientSet<T>) -> Result<WignerField<T>> {
    let mut out = WignerField::zeros(f.grid.clone());
    let mut ws = Workspace::new(f.grid.len());
    rhs_into(f, c, &RhsOptions::default(), &mut ws, &mut out)?;
    Ok(out)
}

pub fn rhs_with<T: Scalar>(
    f: &WignerField<T>,
    c: &CoefficientSet<T>,
    opts: &RhsOptions,
) -> Result<WignerField<T>> {
    let mut out = WignerField::zeros(f.grid.clone());
    let mut ws = Workspace::new(f.grid.len());
    rhs_into(f, c, opts, &mut ws, &mut out)?;
    Ok(out)
}

/// Allocation-free right-hand side writing into `out` (which must share `f`'s grid).
pub fn rhs_into<T: Scalar>(
    f: &WignerField<T>,
    c: &CoefficientSet<T>,
    opts: &RhsOptions,
    ws: &mut Workspace<T>,
    out: &mut WignerField<T>,
) -> Result<()> {
    if !f.same_grid(out) {
        return Err(Error::GridMismatch);
    }
    let g = &*f.grid;
    let n = g.len();
    if ws.d2.len() != n {
        *ws = Workspace::new(n);
    }
    let x = g.nodes();
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let eight = T::lit(8.0);

    for (d, comp) in ws.d1.iter_mut().zip(f.components()) {
        g.d1_into(comp, d)?;
    }
    // transport part ᾱ∂²F + β̄∂(xF), identical for every component
    for (o, comp) in out.components_mut().into_iter().zip(f.components()) {
        g.d2_into(comp, &mut ws.d2)?;
        g.drift_into(comp, &mut ws.xf, &mut ws.drift)?;
        for i in 0..n {
            o[i] = c.alpha_bar * ws.d2[i] + c.beta_bar * ws.drift[i];
        }
    }

    let [dwp, dwm, dcr, dci] = &ws.d1;
    let (wp, wm, cr, ci) = (&f.w_plus, &f.w_minus, &f.c_r, &f.c_i);
    let k_wm_cr = two * c.beta1 + c.beta2;
    let decay_wm = two * c.lambda3 + c.gamma_omega;
    let decay_c = half * (c.lambda2 + c.lambda3);
    let (diag_ci, rot) = match opts.lambda1 {
        LambdaOneCoupling::Diagonal => {
            (half * (four * c.lambda1 - c.lambda2 - c.lambda3), T::zero())
        }
        LambdaOneCoupling::Rotation => (-decay_c, two * c.lambda1),
    };
    for i in 0..n {
        out.w_plus[i] = out.w_plus[i] + half * c.beta2 * dcr[i] + c.beta3 * dci[i];
        out.w_minus[i] = out.w_minus[i] - k_wm_cr * dcr[i] - c.beta2 * x[i] * cr[i]
            + two * c.beta3 * x[i] * ci[i]
            - decay_wm * wm[i]
            - c.gamma_omega * wp[i];
        out.c_r[i] = out.c_r[i]
            + k_wm_cr / four * dwm[i]
            + c.beta2 / eight * dwp[i]
            + c.beta2 / four * x[i] * wm[i]
            - decay_c * cr[i]
            - rot * ci[i];
        out.c_i[i] = out.c_i[i] + c.beta3 / four * dwp[i] - c.beta3 / two * x[i] * wm[i]
            + diag_ci * ci[i]
            + rot * cr[i];
    }
    out.t = f.t;
    Ok(())
}

/// Which stability constraint limits the step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binding {
    Diffusion,
    Advection,
    /// No coefficient restricts the step.
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CflReport<T> {
    /// `None` when the step is unbounded.
    pub max_dt: Option<T>,
    pub diffusive_dt: Option<T>,
    pub advective_dt: Option<T>,
    pub binding: Binding,
    pub passed: bool,
}

/// Largest absolute local rate: a Gershgorin row bound of the non-transport terms.
pub fn rate_max<T: Scalar>(c: &CoefficientSet<T>, grid: &SpatialGrid<T>, opts: &RhsOptions) -> T {
    let l = grid.half_width();
    let dx = grid.dx();
    let half = T::lit(0.5);
    let k = (T::lit(2.0) * c.beta1 + c.beta2).abs();
    let (b2, b3) = (c.beta2.abs(), c.beta3.abs());
    let decay_c = half * (c.lambda2 + c.lambda3).abs();
    let ci_diag = match opts.lambda1 {
        LambdaOneCoupling::Diagonal => {
            half * (T::lit(4.0) * c.lambda1 - c.lambda2 - c.lambda3).abs()
        }
        LambdaOneCoupling::Rotation => decay_c + T::lit(2.0) * c.lambda1.abs(),
    };
    let rows = [
        (half * b2 + b3) / dx,
        k / dx
            + (b2 + T::lit(2.0) * b3) * l
            + (T::lit(2.0) * c.lambda3 + c.gamma_omega).abs()
            + c.gamma_omega.abs(),
        (k / T::lit(4.0) + b2 / T::lit(8.0)) / dx + b2 / T::lit(4.0) * l + decay_c,
        b3 / T::lit(4.0) / dx + b3 * half * l + ci_diag,
    ];
    rows.into_iter().fold(T::zero(), T::max)
}

/// Checks `dt` against the diffusive and advective/reactive bounds.
pub fn cfl_check<T: Scalar>(
    c: &CoefficientSet<T>,
    grid: &SpatialGrid<T>,
    dt: T,
    opts: &RhsOptions,
) -> CflReport<T> {
    let s = T::lit(CFL_SAFETY);
    let dx = grid.dx();
    let diffusive_dt = (c.alpha_bar > T::zero()).then(|| s * dx * dx / (T::lit(2.0) * c.alpha_bar));
    let speed = c.beta_bar.abs() * grid.half_width() / dx + rate_max(c, grid, opts);
    let advective_dt = (speed > T::zero()).then(|| s / speed);
    let (max_dt, binding) = match (diffusive_dt, advective_dt) {
        (None, None) => (None, Binding::Unbounded),
        (Some(d), None) => (Some(d), Binding::Diffusion),
        (None, Some(a)) => (Some(a), Binding::Advection),
        (Some(d), Some(a)) if d <= a => (Some(d), Binding::Diffusion),
        (Some(_), Some(a)) => (Some(a), Binding::Advection),
    };
    CflReport {
        max_dt,
        diffusive_dt,
        advective_dt,
        binding,
        passed: dt > T::zero() && max_dt.is_none_or(|m| dt <= m),
    }
}

/// One classical RK4 step with reusable buffers.
pub struct Stepper<T> {
    ws: Workspace<T>,
    k: [WignerField<T>; 4],
    stage: WignerField<T>,
    opts: RhsOptions,
}

impl<T: Scalar> Stepper<T> {
    pub fn new(grid: Arc<SpatialGrid<T>>, opts: RhsOptions) -> Self {
        let z = || WignerField::zeros(grid.clone());
        Self {
            ws: Workspace::new(grid.len()),
            k: [z(), z(), z(), z()],
            stage: z(),
            opts,
        }
    }

    /// Advances `f` by `dt` in place and re-pins the boundary values.
    pub fn step(&mut self, f: &mut WignerField<T>, c: &CoefficientSet<T>, dt: T) -> Result<()> {
        let half = T::lit(0.5) * dt;
        let [k1, k2, k3, k4] = &mut self.k;
        rhs_into(f, c, &self.opts, &mut self.ws, k1)?;
        stage_from(&mut self.stage, f, half, k1);
        rhs_into(&self.stage, c, &self.opts, &mut self.ws, k2)?;
        stage_from(&mut self.stage, f, half, k2);
        rhs_into(&self.stage, c, &self.opts, &mut self.ws, k3)?;
        stage_from(&mut self.stage, f, dt, k3);
        rhs_into(&self.stage, c, &self.opts, &mut self.ws, k4)?;
        let sixth = dt / T::lit(6.0);
        let two = T::lit(2.0);
        let mut finite = true;
        for (ci, comp) in f.components_mut().into_iter().enumerate() {
            let (a, b, cc, d) = (
                k1.components()[ci],
                k2.components()[ci],
                k3.components()[ci],
                k4.components()[ci],
            );
            for i in 0..comp.len() {
                let v = comp[i] + sixth * (a[i] + two * (b[i] + cc[i]) + d[i]);
                finite &= v.is_finite();
                comp[i] = v;
            }
            SpatialGrid::pin(comp);
        }
        f.t = f.t + dt;
        if !finite {
            return Err(Error::NonFinite {
                t: f.t.to_f64_lossy(),
            });
        }
        Ok(())
    }
}

fn stage_from<T: Scalar>(stage: &mut WignerField<T>, f: &WignerField<T>, h: T, k: &WignerField<T>) {
    for ((s, a), b) in stage
        .components_mut()
        .into_iter()
        .zip(f.components())
        .zip(k.components())
    {
        for i in 0..s.len() {
            s[i] = a[i] + h * b[i];
        }
    }
    stage.t = f.t + h;
}

/// Single RK4 step returning the new field.
pub fn step_rk4<T: Scalar>(
    f: &WignerField<T>,
    c: &CoefficientSet<T>,
    dt: T,
) -> Result<WignerField<T>> {
    let mut out = f.clone();
    Stepper::new(f.grid.clone(), RhsOptions::default()).step(&mut out, c, dt)?;
    Ok(out)
}

/// Time step selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DtChoice<T> {
    /// Use the stability bound.
    Auto,
    Fixed(T),
}

/// Integration schedule shared by every run.
#[derive(Debug, Clone, PartialEq)]
pub struct Integrator<T> {
    pub dt: DtChoice<T>,
    pub t_final: T,
    pub snapshots: Vec<T>,
    /// Record the time series every `series_stride` steps.
    pub series_stride: usize,
    pub options: RhsOptions,
}

impl<T: Scalar> Integrator<T> {
    pub fn default_snapshots() -> Vec<T> {
        [0.0, 50.0, 100.0, 150.0, 200.0]
            .iter()
            .map(|&v| T::lit(v))
            .collect()
    }
}

/// One reproducible run: coefficients, initial state, grid and schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig<T> {
    pub coefficients: CoefficientSet<T>,
    pub initial: InitialCondition<T>,
    pub half_width: T,
    pub nodes: usize,
    pub integrator: Integrator<T>,
}

/// Result of [`evolve`].
#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub snapshots: Vec<WignerField<T>>,
    pub series: TimeSeries<T>,
    /// Largest step actually used.
    pub dt: T,
    pub steps: usize,
    pub cfl: CflReport<T>,
}

impl<T: Scalar> Trajectory<T> {
    /// Snapshot closest to time `t`.
    pub fn snapshot_at(&self, t: T) -> Option<&WignerField<T>> {
        self.snapshots.iter().min_by(|a, b| {
            (a.t - t)
                .abs()
                .partial_cmp(&(b.t - t).abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    }
}

/// Evolves a configured scenario from its initial condition.
pub fn evolve<T: Scalar>(cfg: &ScenarioConfig<T>) -> Result<Trajectory<T>> {
    let grid = Arc::new(SpatialGrid::new(cfg.half_width, cfg.nodes)?);
    let f0 = initial_field(&cfg.initial, grid)?;
    evolve_field(f0, &cfg.coefficients, &cfg.integrator)
}

/// Fixed-step RK4 from an arbitrary initial field.
///
/// The horizon is split at the snapshot times and each piece uses the
/// largest uniform step not exceeding the requested one, so snapshots land
/// exactly on their nominal times.
pub fn evolve_field<T: Scalar>(
    initial: WignerField<T>,
    c: &CoefficientSet<T>,
    schedule: &Integrator<T>,
) -> Result<Trajectory<T>> {
    let t_final = schedule.t_final;
    if !(t_final >= T::zero() && t_final.is_finite()) {
        return Err(invalid("t_final", "must be finite and non-negative"));
    }
    if schedule.series_stride == 0 {
        return Err(invalid("series_stride", "must be at least 1"));
    }
    let mut stops: Vec<T> = schedule.snapshots.clone();
    for &s in &stops {
        if !(s >= T::zero() && s <= t_final) {
            return Err(invalid(
                "snapshots",
                format!("time {s} outside [0, {t_final}]"),
            ));
        }
    }
    stops.sort_by(|a, b| a.partial_cmp(b).unwrap());
    stops.dedup();

    let grid = initial.grid().clone();
    let cfl = cfl_check(c, &grid, T::one(), &schedule.options);
    let dt_req = match schedule.dt {
        DtChoice::Fixed(dt) => {
            let chk = cfl_check(c, &grid, dt, &schedule.options);
            if !chk.passed {
                return Err(Error::Unstable {
                    dt: dt.to_f64_lossy(),
                    max_dt: chk.max_dt.map_or(f64::INFINITY, |v| v.to_f64_lossy()),
                    binding: format!("{:?}", chk.binding),
                });
            }
            dt
        }
        DtChoice::Auto => cfl.max_dt.unwrap_or(t_final.max(T::one())),
    };
    let cfl = cfl_check(c, &grid, dt_req, &schedule.options);

    let mut f = initial;
    let t0 = f.t;
    let mut series = TimeSeries::new();
    series.record(&f);
    let mut snapshots = Vec::with_capacity(stops.len());
    let mut stepper = Stepper::new(grid.clone(), schedule.options);
    let mut steps = 0usize;
    let mut dt_used = T::zero();

    let mut targets = stops.clone();
    if targets.last().is_none_or(|&l| l < t_final) {
        targets.push(t_final);
    }
    let mut next_snap = 0;
    let mut seg_start = T::zero();
    for &target in &targets {
        let seg = target - seg_start;
        if seg > T::zero() {
            let n = (seg / dt_req).ceil().to_f64_lossy().max(1.0) as usize;
            let dt = seg / T::from_usize_lossy(n);
            dt_used = dt_used.max(dt);
            for j in 1..=n {
                stepper.step(&mut f, c, dt)?;
                // keep the clock free of accumulated rounding
                f.t = t0 + seg_start + dt * T::from_usize_lossy(j);
                steps += 1;
                if steps.is_multiple_of(schedule.series_stride) {
                    series.record(&f);
                }
            }
            f.t = t0 + target;
            if series.times.last().is_none_or(|&l| l < f.t) {
                series.record(&f);
            }
        }
        while next_snap < stops.len() && stops[next_snap] <= target {
            snapshots.push(f.clone());
            next_snap += 1;
        }
        seg_start = target;
    }
    Ok(Trajectory {
        snapshots,
        series,
        dt: dt_used,
        steps,
        cfl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observables;
    use proptest::prelude::*;

    fn grid(l: f64, n: usize) -> Arc<SpatialGrid<f64>> {
        Arc::new(SpatialGrid::new(l, n).unwrap())
    }

    fn state(theta: f64, phi: f64) -> InternalState<f64> {
        InternalState::new(theta, phi).unwrap()
    }

    fn fig1a() -> CoefficientSet<f64> {
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
    fn angles_are_canonicalised() {
        let s = state(std::f64::consts::PI, 9.0);
        assert_eq!(s.theta(), 0.0);
        assert!((s.phi() - (9.0 - std::f64::consts::TAU)).abs() < 1e-15);
        let neg = state(-0.25, -1.0);
        assert!(neg.theta() >= 0.0 && neg.theta() < std::f64::consts::PI);
    }

    #[test]
    fn density_matrix_is_a_state() {
        for i in 0..20 {
            for j in 0..20 {
                let s = state(i as f64 * 0.3, j as f64 * 0.7);
                let m = s.density_matrix();
                let tr = m[0][0].re + m[1][1].re;
                assert!((tr - 1.0).abs() < 1e-14);
                let det = m[0][0].re * m[1][1].re - m[0][1].norm_sqr();
                assert!(det > -1e-14 && m[0][0].re >= -1e-15 && m[1][1].re >= -1e-15);
            }
        }
    }

    #[test]
    fn initial_field_normalised_and_weighted() {
        let g = grid(20.0, 1024);
        let ic = InitialCondition::new(InitialKind::Single, 2.0, state(0.3, 1.1));
        let f = initial_field(&ic, g.clone()).unwrap();
        assert!((g.integrate(&f.w_plus).unwrap() - 1.0).abs() < 1e-10);
        assert!((observables::variance(&f).unwrap() - 0.5).abs() < 1e-8);

        let excited = InitialCondition::new(
            InitialKind::Single,
            2.0,
            state(std::f64::consts::FRAC_PI_2, 0.4),
        );
        let f = initial_field(&excited, g).unwrap();
        for i in 0..1024 {
            let m = f.matrix_at(i);
            assert!(m[0][0].re.abs() < 1e-16);
            assert!(f.c_r[i].abs() < 1e-16 && f.c_i[i].abs() < 1e-16);
            assert!((f.w_minus[i] + f.w_plus[i]).abs() < 1e-16);
        }
    }

    #[test]
    fn odd_exponent_rule() {
        let g = grid(10.0, 256);
        let mut ic = InitialCondition::new(InitialKind::Single, 3.0, state(0.0, 0.0));
        assert!(ic.uses_abs_substitution());
        let f = initial_field(&ic, g.clone()).unwrap();
        assert!((g.integrate(&f.w_plus).unwrap() - 1.0).abs() < 1e-12);
        ic.rule = ExponentRule::Strict;
        assert!(initial_field(&ic, g.clone()).is_err());
        ic.k = -1.0;
        assert!(initial_field(&ic, g).is_err());
    }

    #[test]
    fn rhs_of_zero_is_zero() {
        let g = grid(5.0, 64);
        let r = rhs(&WignerField::zeros(g), &fig1a()).unwrap();
        assert!(r.components().iter().all(|c| c.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn stationary_ornstein_uhlenbeck_profile() {
        let g = grid(10.0, 801);
        let c = CoefficientSet {
            alpha_bar: 8e-3,
            beta_bar: 1e-3,
            beta1: 3e-3,
            lambda1: 1e-3,
            lambda2: 2e-3,
            ..CoefficientSet::zero()
        };
        let var = c.alpha_bar / c.beta_bar;
        let mut f = WignerField::zeros(g.clone());
        f.w_plus = g.sample(|x| (-x * x / (2.0 * var)).exp());
        let r = rhs(&f, &c).unwrap();
        let peak = c.beta_bar;
        assert!(r.w_plus[1..800].iter().all(|v| v.abs() < 1e-4 * peak));
    }

    #[test]
    fn w_plus_rhs_is_a_total_derivative() {
        let g = grid(20.0, 1024);
        let ic = InitialCondition::new(InitialKind::Double, 2.0, state(0.4, 0.9));
        let f = initial_field(&ic, g.clone()).unwrap();
        let r = rhs(&f, &fig1a()).unwrap();
        assert!(g.integrate(&r.w_plus).unwrap().abs() < 1e-12);
    }

    #[test]
    fn cfl_examples() {
        let g = SpatialGrid::new(20.0, 1024).unwrap();
        let rep = cfl_check(&fig1a(), &g, 1e-3, &RhsOptions::default());
        let d = rep.diffusive_dt.unwrap();
        assert!((d - 0.4 * g.dx() * g.dx() / 0.016).abs() < 1e-12);
        assert!((d - 0.038).abs() < 1e-3);
        assert!(rep.passed);
        let none = cfl_check(&CoefficientSet::zero(), &g, 1e6, &RhsOptions::default());
        assert_eq!(none.binding, Binding::Unbounded);
        assert!(none.max_dt.is_none() && none.passed);
        let fine = SpatialGrid::new(20.0, 2047).unwrap();
        let d2 = cfl_check(&fig1a(), &fine, 1e-3, &RhsOptions::default())
            .diffusive_dt
            .unwrap();
        assert!((d / d2 - 4.0).abs() < 1e-12);
        assert!(!cfl_check(&fig1a(), &g, 1.0, &RhsOptions::default()).passed);
    }

    #[test]
    fn zero_coefficients_leave_field_unchanged() {
        let g = grid(10.0, 128);
        let ic = InitialCondition::new(InitialKind::Single, 2.0, state(0.3, 0.2));
        let f = initial_field(&ic, g).unwrap();
        let s = step_rk4(&f, &CoefficientSet::zero(), 0.1).unwrap();
        assert_eq!(s.w_plus, f.w_plus);
        assert_eq!(s.c_i, f.c_i);
    }

    #[test]
    fn pure_decay_matches_exponential() {
        let g = grid(5.0, 64);
        let c = CoefficientSet {
            lambda3: 0.3,
            ..CoefficientSet::zero()
        };
        let mut f = WignerField::zeros(g);
        f.w_minus.iter_mut().for_each(|v| *v = 1.0);
        let dt = 0.1;
        let s = step_rk4(&f, &c, dt).unwrap();
        let exact = (-2.0f64 * 0.3 * dt).exp();
        // RK4 local error ~ (0.6·dt)^5/120
        assert!((s.w_minus[10] - exact).abs() < 1e-7);
        assert_eq!(s.w_minus[0], 0.0);
    }

    #[test]
    fn lambda_one_rotation_variant() {
        let g = grid(5.0, 64);
        let c = CoefficientSet {
            lambda1: 0.25,
            ..CoefficientSet::zero()
        };
        let mut f = WignerField::zeros(g);
        f.c_r.iter_mut().for_each(|v| *v = 1.0);
        let opts = RhsOptions {
            lambda1: LambdaOneCoupling::Rotation,
        };
        let r = rhs_with(&f, &c, &opts).unwrap();
        assert!((r.c_i[5] - 0.5).abs() < 1e-15 && r.c_r[5].abs() < 1e-15);
        let printed = rhs(&f, &c).unwrap();
        assert_eq!(printed.c_i[5], 0.0);
    }

    #[test]
    fn local_block_matches_rhs_on_uniform_fields() {
        let g = grid(5.0, 64);
        let c = fig1a();
        for opts in [
            RhsOptions::default(),
            RhsOptions {
                lambda1: LambdaOneCoupling::Rotation,
            },
        ] {
            let mut f = WignerField::zeros(g.clone());
            let v = [0.3, -0.7, 0.2, 0.9];
            for (comp, &val) in f.components_mut().into_iter().zip(&v) {
                comp.iter_mut().for_each(|u| *u = val);
            }
            // keep only pointwise terms
            let local = CoefficientSet {
                alpha_bar: 0.0,
                beta_bar: 0.0,
                beta1: 0.0,
                beta2: 0.0,
                beta3: 0.0,
                ..c
            };
            let r = rhs_with(&f, &local, &opts).unwrap();
            let b = local_block(&local, &opts);
            for k in 0..4 {
                let want: f64 = (0..4).map(|j| b[k][j] * v[j]).sum();
                assert!((r.components()[k][10] - want).abs() < 1e-17);
            }
        }
    }

    #[test]
    fn zero_horizon_returns_initial_snapshot() {
        let g = grid(10.0, 128);
        let ic = InitialCondition::new(InitialKind::Single, 2.0, state(0.3, 0.2));
        let f = initial_field(&ic, g).unwrap();
        let sched = Integrator {
            dt: DtChoice::Auto,
            t_final: 0.0,
            snapshots: vec![0.0],
            series_stride: 1,
            options: RhsOptions::default(),
        };
        let tr = evolve_field(f.clone(), &fig1a(), &sched).unwrap();
        assert_eq!(tr.snapshots.len(), 1);
        assert_eq!(tr.snapshots[0], f);
        assert_eq!(tr.steps, 0);
    }

    #[test]
    fn snapshots_land_on_schedule_and_conserve_trace() {
        let cfg = ScenarioConfig {
            coefficients: fig1a(),
            initial: InitialCondition::new(
                InitialKind::Single,
                2.0,
                state(std::f64::consts::FRAC_PI_6, std::f64::consts::PI),
            ),
            half_width: 20.0,
            nodes: 256,
            integrator: Integrator {
                dt: DtChoice::Auto,
                t_final: 10.0,
                snapshots: vec![0.0, 2.5, 10.0],
                series_stride: 5,
                options: RhsOptions::default(),
            },
        };
        let tr = evolve(&cfg).unwrap();
        let times: Vec<f64> = tr.snapshots.iter().map(|s| s.t).collect();
        assert_eq!(times, vec![0.0, 2.5, 10.0]);
        assert!(tr.series.times.windows(2).all(|w| w[1] > w[0]));
        assert!(tr.series.norm.iter().all(|n| (n - 1.0).abs() < 1e-10));
        let again = evolve(&cfg).unwrap();
        assert_eq!(again.snapshots, tr.snapshots);
    }

    #[test]
    fn fixed_dt_beyond_bound_is_rejected() {
        let g = grid(20.0, 256);
        let f = WignerField::zeros(g);
        let sched = Integrator {
            dt: DtChoice::Fixed(10.0),
            t_final: 10.0,
            snapshots: vec![],
            series_stride: 1,
            options: RhsOptions::default(),
        };
        assert!(matches!(
            evolve_field(f, &fig1a(), &sched),
            Err(Error::Unstable { .. })
        ));
    }

    #[test]
    fn non_finite_values_abort() {
        let g = grid(5.0, 32);
        let mut f = WignerField::zeros(g);
        f.c_r[4] = f64::NAN;
        match step_rk4(&f, &fig1a(), 0.01) {
            Err(Error::NonFinite { t }) => assert!((t - 0.01).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn even_data_without_coherence_keeps_parity() {
        let g = grid(20.0, 256);
        let ic = InitialCondition::new(
            InitialKind::Double,
            10.0,
            state(std::f64::consts::FRAC_PI_2, 0.5),
        );
        let mut f = initial_field(&ic, g).unwrap();
        let c = fig1a();
        let mut st = Stepper::new(f.grid().clone(), RhsOptions::default());
        for _ in 0..200 {
            st.step(&mut f, &c, 0.05).unwrap();
        }
        let n = f.w_plus.len();
        for i in 0..n {
            assert!((f.w_plus[i] - f.w_plus[n - 1 - i]).abs() <= 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn evolution_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, th in 0.0f64..3.0, ph in 0.0f64..6.0) {
            let g = grid(10.0, 96);
            let f = initial_field(&InitialCondition::new(InitialKind::Single, 2.0, state(th, ph)), g.clone()).unwrap();
            let h = initial_field(&InitialCondition::new(InitialKind::Double, 2.0, state(ph, th)), g).unwrap();
            let sched = Integrator {
                dt: DtChoice::Auto,
                t_final: 3.0,
                snapshots: vec![3.0],
                series_stride: 1000,
                options: RhsOptions::default(),
            };
            let c = fig1a();
            let mut mix = f.scaled(a);
            mix.lincomb(1.0, b, &h).unwrap();
            let lhs = evolve_field(mix, &c, &sched).unwrap().snapshots.remove(0);
            let mut rhs_ = evolve_field(f, &c, &sched).unwrap().snapshots.remove(0).scaled(a);
            rhs_.lincomb(1.0, b, &evolve_field(h, &c, &sched).unwrap().snapshots[0]).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs_).unwrap() < 1e-12);
        }
    }
}
