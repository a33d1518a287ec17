//! Full (x, p) phase-space dynamics before momentum is eliminated.
//!
//! Time is measured in units of the trap period scale, so ω = 1: the
//! oscillator part reads `γα∂²ₚ + γ∂ₚp + (x/2)∂ₚ − (p/2)∂ₓ`, and its
//! high-damping reduction has `ᾱ = α/(4γ)` and `β̄ = 1/(4γ)`.

use std::sync::Arc;

use num_complex::Complex;

use crate::error::{invalid, Error, Result};
use crate::grid::{d1_stencil, d2_stencil, trapezoid, PhaseGrid, SpatialGrid};
use crate::moments::Mat4;
use crate::oqbm::{
    self, initial_field, local_block, DtChoice, InitialCondition, Integrator, RhsOptions,
    WignerField, CFL_SAFETY,
};
use crate::params::CoefficientSet;
use crate::special::{factorial, hermite};
use crate::Scalar;

/// Oracle tolerance for the superoperator expansion.
pub const ORACLE_TOL: f64 = 1e-12;

type C2<T> = [[Complex<T>; 2]; 2];

/// The four coupling superoperators as real 4×4 matrices on `(W₊, W₋, C_R, C_I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MSuperOperators<T> {
    pub m1: Mat4<T>,
    pub m2: Mat4<T>,
    pub m3: Mat4<T>,
    pub m4: Mat4<T>,
}

/// Hand-expanded superoperators, checked against direct 2×2 arithmetic.
pub fn expand_m_operators<T: Scalar>(c: &CoefficientSet<T>) -> Result<MSuperOperators<T>> {
    let ops = expanded(c);
    let err = oracle_error(c, &ops);
    if !(err <= T::lit(ORACLE_TOL) * (T::one() + coupling_scale(c))) {
        return Err(Error::OracleMismatch(err.to_f64_lossy()));
    }
    Ok(ops)
}

fn coupling_scale<T: Scalar>(c: &CoefficientSet<T>) -> T {
    c.beta1.abs() + c.beta2.abs() + c.beta3.abs()
}

fn expanded<T: Scalar>(c: &CoefficientSet<T>) -> MSuperOperators<T> {
    let z = T::zero();
    let (b1, b2, b3) = (c.beta1, c.beta2, c.beta3);
    let h = T::lit(0.5);
    let q = T::lit(0.25);
    let e = T::lit(0.125);
    let two = T::lit(2.0);
    let k = two * b1 + b2;
    MSuperOperators {
        m1: [
            [z, z, -b3, h * b2],
            [z, z, z, -k],
            [-q * b3, z, z, z],
            [e * b2, q * k, z, z],
        ],
        m2: [
            [z, z, h * b2, b3],
            [z, z, -k, z],
            [e * b2, q * k, z, z],
            [q * b3, z, z, z],
        ],
        m3: [
            [z, z, z, z],
            [z, z, -b2, two * b3],
            [z, q * b2, z, z],
            [z, -h * b3, z, z],
        ],
        m4: [
            [z, z, z, z],
            [z, z, -two * b3, -b2],
            [z, h * b3, z, z],
            [z, q * b2, z, z],
        ],
    }
}

/// Which superoperator to evaluate with [`apply_direct`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    M1,
    M2,
    M3,
    M4,
}

fn mul<T: Scalar>(a: &C2<T>, b: &C2<T>) -> C2<T> {
    let mut o = [[Complex::new(T::zero(), T::zero()); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            o[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    o
}

fn lin<T: Scalar>(terms: &[(Complex<T>, C2<T>)]) -> C2<T> {
    let mut o = [[Complex::new(T::zero(), T::zero()); 2]; 2];
    for (s, m) in terms {
        for i in 0..2 {
            for j in 0..2 {
                o[i][j] = o[i][j] + *s * m[i][j];
            }
        }
    }
    o
}

fn paulis<T: Scalar>() -> (C2<T>, C2<T>, C2<T>) {
    let z = Complex::new(T::zero(), T::zero());
    let o = Complex::new(T::one(), T::zero());
    let i = Complex::new(T::zero(), T::one());
    let sx = [[z, o], [o, z]];
    let sy = [[z, -i], [i, z]];
    let splus = [[z, o], [z, z]];
    (sx, sy, splus)
}

/// Evaluates a superoperator on a 2×2 matrix by direct complex arithmetic.
pub fn apply_direct<T: Scalar>(which: Which, c: &CoefficientSet<T>, w: &C2<T>) -> C2<T> {
    let (sx, sy, sp) = paulis::<T>();
    let re = |v: T| Complex::new(v, T::zero());
    let im = |v: T| Complex::new(T::zero(), v);
    let one = re(T::one());
    let comm = |a: &C2<T>| lin(&[(one, mul(a, w)), (-one, mul(w, a))]);
    let anti = |a: &C2<T>| lin(&[(one, mul(a, w)), (one, mul(w, a))]);
    let (b1, b2, b3) = (c.beta1, c.beta2, c.beta3);
    let two = T::lit(2.0);
    match which {
        Which::M1 => {
            let inner = lin(&[
                (re(two), anti(&sp)),
                (re(-two), mul(&sx, w)),
                (-one, comm(&sx)),
            ]);
            lin(&[
                (im(b2 / T::lit(8.0)), inner),
                (im(-b1 / two), comm(&sx)),
                (re(-b3 / T::lit(4.0)), anti(&sx)),
            ])
        }
        Which::M2 => {
            let inner = lin(&[
                (re(two), mul(&sx, w)),
                (re(-two), comm(&sp)),
                (im(-T::one()), comm(&sy)),
            ]);
            lin(&[
                (re(b2 / T::lit(8.0)), inner),
                (im(-b1 / two), comm(&sy)),
                (re(-b3 / T::lit(4.0)), anti(&sy)),
            ])
        }
        Which::M3 => lin(&[
            (im(b3 / two), comm(&sx)),
            (im(-b2 / T::lit(4.0)), comm(&sy)),
        ]),
        Which::M4 => lin(&[
            (im(-b2 / T::lit(4.0)), comm(&sx)),
            (im(-b3 / two), comm(&sy)),
        ]),
    }
}

/// Matrix form of a four-field vector: `[[(W₊+W₋)/2, C_R+iC_I], [C_R−iC_I, (W₊−W₋)/2]]`.
pub fn fields_to_matrix<T: Scalar>(v: [T; 4]) -> C2<T> {
    let h = T::lit(0.5);
    [
        [
            Complex::new(h * (v[0] + v[1]), T::zero()),
            Complex::new(v[2], v[3]),
        ],
        [
            Complex::new(v[2], -v[3]),
            Complex::new(h * (v[0] - v[1]), T::zero()),
        ],
    ]
}

/// Four-field image of a matrix, plus its departure from Hermiticity.
pub fn matrix_to_fields<T: Scalar>(m: &C2<T>) -> ([T; 4], T) {
    let fields = [
        (m[0][0] + m[1][1]).re,
        (m[0][0] - m[1][1]).re,
        m[0][1].re,
        m[0][1].im,
    ];
    let herm = (m[1][0] - m[0][1].conj()).norm() + m[0][0].im.abs() + m[1][1].im.abs();
    (fields, herm)
}

/// Four-field images of the Hermitian basis `{I, σx, σy, σz}`.
pub fn hermitian_basis<T: Scalar>() -> [[T; 4]; 4] {
    let (z, o, t) = (T::zero(), T::one(), T::lit(2.0));
    [[t, z, z, z], [z, z, o, z], [z, z, z, -o], [z, t, z, z]]
}

/// Largest discrepancy between the expanded matrices and direct arithmetic on the basis.
pub fn oracle_error<T: Scalar>(c: &CoefficientSet<T>, ops: &MSuperOperators<T>) -> T {
    let mut worst = T::zero();
    for (which, m) in [
        (Which::M1, &ops.m1),
        (Which::M2, &ops.m2),
        (Which::M3, &ops.m3),
        (Which::M4, &ops.m4),
    ] {
        for v in hermitian_basis::<T>() {
            let (direct, herm) = matrix_to_fields(&apply_direct(which, c, &fields_to_matrix(v)));
            worst = worst.max(herm);
            for k in 0..4 {
                let e = (0..4).fold(T::zero(), |s, j| s + m[k][j] * v[j]);
                worst = worst.max((e - direct[k]).abs());
            }
        }
    }
    worst
}

/// Discretely normalised stationary momentum distribution `(2πα)^{-1/2} e^{−p²/2α}`.
pub fn stationary_w<T: Scalar>(p: &SpatialGrid<T>, alpha: T) -> Vec<T> {
    let mut w = p.sample(|v| (-v * v / (alpha + alpha)).exp());
    let s = trapezoid(&w, p.dx());
    w.iter_mut().for_each(|v| *v = *v / s);
    w
}

/// Four real fields on a [`PhaseGrid`], p varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpaceField<T> {
    grid: Arc<PhaseGrid<T>>,
    pub fields: [Vec<T>; 4],
    pub t: T,
}

impl<T: Scalar> PhaseSpaceField<T> {
    pub fn zeros(grid: Arc<PhaseGrid<T>>) -> Self {
        let n = grid.len();
        Self {
            grid,
            fields: [
                vec![T::zero(); n],
                vec![T::zero(); n],
                vec![T::zero(); n],
                vec![T::zero(); n],
            ],
            t: T::zero(),
        }
    }

    pub fn grid(&self) -> &Arc<PhaseGrid<T>> {
        &self.grid
    }

    /// `w_s(p)·W̄(x)` for a field given on the x-axis of this grid.
    pub fn thermalized(grid: Arc<PhaseGrid<T>>, w: &WignerField<T>) -> Result<Self> {
        if **w.grid() != grid.x {
            return Err(Error::GridMismatch);
        }
        let ws = stationary_w(&grid.p, grid.alpha());
        let np = grid.p.len();
        let mut f = Self::zeros(grid.clone());
        for (dst, src) in f.fields.iter_mut().zip(w.components()) {
            for (ix, &v) in src.iter().enumerate() {
                for ip in 0..np {
                    dst[ix * np + ip] = ws[ip] * v;
                }
            }
        }
        f.t = w.t;
        Ok(f)
    }

    /// p-marginal as a field on the x-axis.
    pub fn marginal(&self, xgrid: Arc<SpatialGrid<T>>) -> Result<WignerField<T>> {
        if *xgrid != self.grid.x {
            return Err(Error::GridMismatch);
        }
        let np = self.grid.p.len();
        let dp = self.grid.p.dx();
        let comps = self.fields.clone().map(|f| {
            f.chunks_exact(np)
                .map(|row| trapezoid(row, dp))
                .collect::<Vec<T>>()
        });
        WignerField::from_components(xgrid, comps, self.t)
    }

    /// `∬W₊ dx dp`.
    pub fn trace(&self) -> T {
        let np = self.grid.p.len();
        let row: Vec<T> = self.fields[0]
            .chunks_exact(np)
            .map(|r| trapezoid(r, self.grid.p.dx()))
            .collect();
        trapezoid(&row, self.grid.x.dx())
    }

    /// Discrete L² norm over all four fields.
    pub fn l2_norm(&self) -> T {
        let s = self
            .fields
            .iter()
            .flat_map(|f| f.iter())
            .fold(T::zero(), |s, &v| s + v * v);
        (s * self.grid.x.dx() * self.grid.p.dx()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.fields.iter().all(|f| f.iter().all(|v| v.is_finite()))
    }

    fn pin_edges(&mut self) {
        let nx = self.grid.x.len();
        let np = self.grid.p.len();
        for f in self.fields.iter_mut() {
            for ip in 0..np {
                f[ip] = T::zero();
                f[(nx - 1) * np + ip] = T::zero();
            }
            for ix in 0..nx {
                f[ix * np] = T::zero();
                f[ix * np + np - 1] = T::zero();
            }
        }
    }
}

/// `P f = w_s(p) ∫f dp`, applied componentwise.
pub fn projector_apply<T: Scalar>(f: &PhaseSpaceField<T>) -> PhaseSpaceField<T> {
    let g = f.grid.clone();
    let ws = stationary_w(&g.p, g.alpha());
    let np = g.p.len();
    let mut out = PhaseSpaceField::zeros(g.clone());
    for (dst, src) in out.fields.iter_mut().zip(&f.fields) {
        for (drow, srow) in dst.chunks_exact_mut(np).zip(src.chunks_exact(np)) {
            let m = trapezoid(srow, g.p.dx());
            for (d, &w) in drow.iter_mut().zip(&ws) {
                *d = w * m;
            }
        }
    }
    out.t = f.t;
    out
}

/// `Q f = f − P f`.
pub fn complement_apply<T: Scalar>(f: &PhaseSpaceField<T>) -> PhaseSpaceField<T> {
    let mut q = projector_apply(f);
    for (a, b) in q.fields.iter_mut().zip(&f.fields) {
        for (u, &v) in a.iter_mut().zip(b) {
            *u = v - *u;
        }
    }
    q
}

/// Discretised `L̂₁ = α∂²ₚ + ∂ₚp` on a momentum grid.
pub fn apply_l1<T: Scalar>(p: &SpatialGrid<T>, alpha: T, f: &[T]) -> Result<Vec<T>> {
    let d2 = p.d2(f)?;
    let dr = p.drift(f)?;
    Ok(d2.iter().zip(&dr).map(|(&a, &b)| alpha * a + b).collect())
}

/// `‖L̂₁P_n + nP_n‖/‖P_n‖` for the eigenfunction `P_n = w_s·(2ⁿn!)^{-1/2}H_n(p/√(2α))`.
pub fn hermite_eigencheck<T: Scalar>(n: usize, grid: &PhaseGrid<T>) -> Result<T> {
    if n > 6 {
        return Err(invalid(
            "n",
            format!("eigenfunction order must be ≤ 6, got {n}"),
        ));
    }
    let alpha = grid.alpha();
    let ws = stationary_w(&grid.p, alpha);
    let scale = (T::lit(2f64.powi(n as i32)) * factorial::<T>(n))
        .sqrt()
        .recip();
    let s2a = (alpha + alpha).sqrt();
    let pn: Vec<T> = grid
        .p
        .nodes()
        .iter()
        .zip(&ws)
        .map(|(&p, &w)| w * scale * hermite(n, p / s2a))
        .collect();
    let l1 = apply_l1(&grid.p, alpha, &pn)?;
    let nf = T::from_usize_lossy(n);
    let (num, den) = l1
        .iter()
        .zip(&pn)
        .fold((T::zero(), T::zero()), |(a, b), (&l, &v)| {
            let r = l + nf * v;
            (a + r * r, b + v * v)
        });
    Ok((num / den).sqrt())
}

/// Discretised `L̂₂ = −(p/2)∂ₓ + (x/2)∂ₚ` on the phase grid.
pub fn apply_l2<T: Scalar>(f: &PhaseSpaceField<T>) -> PhaseSpaceField<T> {
    let g = f.grid.clone();
    let (nx, np) = (g.x.len(), g.p.len());
    let mut out = PhaseSpaceField::zeros(g.clone());
    let mut dx = vec![T::zero(); g.len()];
    let mut dp = vec![T::zero(); g.len()];
    let h = T::lit(0.5);
    for (dst, src) in out.fields.iter_mut().zip(&f.fields) {
        d1_x(src, nx, np, g.x.dx(), &mut dx);
        for (o, i) in dp.chunks_exact_mut(np).zip(src.chunks_exact(np)) {
            d1_stencil(i, g.p.dx(), o);
        }
        for ix in 0..nx {
            let x = g.x.nodes()[ix];
            for ip in 0..np {
                let k = ix * np + ip;
                dst[k] = -h * g.p.nodes()[ip] * dx[k] + h * x * dp[k];
            }
        }
    }
    out.t = f.t;
    out
}

/// Test fields `w_s(p)·g(x)·(qubit weights)` used by [`pl2p_check`].
fn pl2p_test_fields<T: Scalar>(grid: &Arc<PhaseGrid<T>>) -> Vec<PhaseSpaceField<T>> {
    let xs: [Box<dyn Fn(T) -> T>; 3] = [
        Box::new(|x: T| (-x * x).exp()),
        Box::new(|x: T| (-(x - T::one()) * (x - T::one()) / T::lit(2.0)).exp()),
        Box::new(|x: T| x * (-x * x).exp()),
    ];
    let ps: [Box<dyn Fn(T) -> T>; 2] = [
        Box::new(|_| T::one()),
        Box::new(|p: T| T::one() + p + p * p),
    ];
    let mut out = Vec::new();
    for gx in &xs {
        for hp in &ps {
            let mut f = PhaseSpaceField::zeros(grid.clone());
            let np = grid.p.len();
            for (k, comp) in f.fields.iter_mut().enumerate() {
                let wk = T::one() / T::from_usize_lossy(k + 1);
                for (ix, &x) in grid.x.nodes().iter().enumerate() {
                    for (ip, &p) in grid.p.nodes().iter().enumerate() {
                        comp[ix * np + ip] = wk * gx(x) * hp(p) * (-p * p / T::lit(2.0)).exp();
                    }
                }
            }
            out.push(f);
        }
    }
    out
}

/// Largest `‖P L̂₂ P f‖ / ‖L̂₂ P f‖` over a basis of smooth test fields.
pub fn pl2p_check<T: Scalar>(grid: &Arc<PhaseGrid<T>>) -> T {
    let mut worst = T::zero();
    for f in pl2p_test_fields(grid) {
        let l2p = apply_l2(&projector_apply(&f));
        let den = l2p.l2_norm();
        if den > T::zero() {
            worst = worst.max(projector_apply(&l2p).l2_norm() / den);
        }
    }
    worst
}

/// Projector algebra residuals `(‖P²f − Pf‖, ‖Q²f − Qf‖, ‖PQf‖)`, each relative to `‖f‖`.
pub fn projector_residuals<T: Scalar>(f: &PhaseSpaceField<T>) -> [T; 3] {
    let nf = f.l2_norm().max(T::min_positive_value());
    let diff = |a: &PhaseSpaceField<T>, b: &PhaseSpaceField<T>| {
        let mut d = a.clone();
        for (u, v) in d.fields.iter_mut().zip(&b.fields) {
            for (x, &y) in u.iter_mut().zip(v) {
                *x = *x - y;
            }
        }
        d.l2_norm() / nf
    };
    let p = projector_apply(f);
    let q = complement_apply(f);
    [
        diff(&projector_apply(&p), &p),
        diff(&complement_apply(&q), &q),
        projector_apply(&q).l2_norm() / nf,
    ]
}

fn d1_x<T: Scalar>(f: &[T], nx: usize, np: usize, h: T, out: &mut [T]) {
    let inv2h = T::one() / (h + h);
    let (three, four) = (T::lit(3.0), T::lit(4.0));
    for ip in 0..np {
        out[ip] = (-three * f[ip] + four * f[np + ip] - f[2 * np + ip]) * inv2h;
        let l = (nx - 1) * np + ip;
        out[l] = (three * f[l] - four * f[l - np] + f[l - 2 * np]) * inv2h;
    }
    for ix in 1..nx - 1 {
        let (a, b, o) = ((ix - 1) * np, (ix + 1) * np, ix * np);
        for ip in 0..np {
            out[o + ip] = (f[b + ip] - f[a + ip]) * inv2h;
        }
    }
}

/// Which pointwise factor multiplies a coupling term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Field,
    XField,
    PField,
    DpField,
    DxField,
}

/// Everything the 2-D generator needs besides the field.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseModel<T> {
    pub gamma: T,
    pub ops: MSuperOperators<T>,
    pub local: Mat4<T>,
    terms: Vec<(usize, usize, Source, T)>,
}

impl<T: Scalar> PhaseModel<T> {
    pub fn new(c: &CoefficientSet<T>, gamma: T, opts: &RhsOptions) -> Result<Self> {
        if !(gamma > T::zero()) {
            return Err(invalid("gamma_eff", "must be positive"));
        }
        let ops = expand_m_operators(c)?;
        let local = local_block(c, opts);
        let mut terms = Vec::new();
        for (m, src) in [
            (&local, Source::Field),
            (&ops.m3, Source::XField),
            (&ops.m4, Source::PField),
            (&ops.m1, Source::DpField),
            (&ops.m2, Source::DxField),
        ] {
            for k in 0..4 {
                for j in 0..4 {
                    if m[k][j] != T::zero() {
                        terms.push((k, j, src, m[k][j]));
                    }
                }
            }
        }
        Ok(Self {
            gamma,
            ops,
            local,
            terms,
        })
    }
}

/// Scratch space for [`rhs_2d_into`].
pub struct Workspace2d<T> {
    dp: [Vec<T>; 4],
    dx: [Vec<T>; 4],
    xcol: Vec<T>,
    pcol: Vec<T>,
    row: Vec<T>,
    row2: Vec<T>,
}

impl<T: Scalar> Workspace2d<T> {
    pub fn new(grid: &PhaseGrid<T>) -> Self {
        let n = grid.len();
        let np = grid.p.len();
        let z = || vec![T::zero(); n];
        let mut xcol = z();
        let mut pcol = z();
        for (ix, &x) in grid.x.nodes().iter().enumerate() {
            xcol[ix * np..(ix + 1) * np].fill(x);
            pcol[ix * np..(ix + 1) * np].copy_from_slice(grid.p.nodes());
        }
        Self {
            dp: [z(), z(), z(), z()],
            dx: [z(), z(), z(), z()],
            xcol,
            pcol,
            row: vec![T::zero(); np],
            row2: vec![T::zero(); np],
        }
    }
}

/// Time derivative of the phase-space field.
pub fn rhs_2d<T: Scalar>(
    f: &PhaseSpaceField<T>,
    c: &CoefficientSet<T>,
    gamma: T,
) -> Result<PhaseSpaceField<T>> {
    let model = PhaseModel::new(c, gamma, &RhsOptions::default())?;
    let mut ws = Workspace2d::new(&f.grid);
    let mut out = PhaseSpaceField::zeros(f.grid.clone());
    rhs_2d_into(f, &model, &mut ws, &mut out)?;
    Ok(out)
}

pub fn rhs_2d_into<T: Scalar>(
    f: &PhaseSpaceField<T>,
    model: &PhaseModel<T>,
    ws: &mut Workspace2d<T>,
    out: &mut PhaseSpaceField<T>,
) -> Result<()> {
    let g = &*f.grid;
    if *g != *out.grid || ws.xcol.len() != g.len() {
        return Err(Error::GridMismatch);
    }
    let (nx, np) = (g.x.len(), g.p.len());
    let (hx, hp) = (g.x.dx(), g.p.dx());
    let half = T::lit(0.5);
    let diff = model.gamma * g.alpha();
    for k in 0..4 {
        let src = &f.fields[k];
        let dst = &mut out.fields[k];
        for (o, i) in ws.dp[k].chunks_exact_mut(np).zip(src.chunks_exact(np)) {
            d1_stencil(i, hp, o);
        }
        d1_x(src, nx, np, hx, &mut ws.dx[k]);
        // γα∂²ₚ + γ∂ₚ(p·)
        for ix in 0..nx {
            let r = ix * np..(ix + 1) * np;
            for ((w, &v), &p) in ws.row.iter_mut().zip(&src[r.clone()]).zip(g.p.nodes()) {
                *w = p * v;
            }
            d1_stencil(&ws.row, hp, &mut ws.row2);
            d2_stencil(&src[r.clone()], hp, &mut dst[r]);
            for (d, &v) in dst[ix * np..(ix + 1) * np].iter_mut().zip(&ws.row2) {
                *d = diff * *d + model.gamma * v;
            }
        }
        // (x/2)∂ₚ − (p/2)∂ₓ
        for i in 0..dst.len() {
            dst[i] = dst[i] + half * (ws.xcol[i] * ws.dp[k][i] - ws.pcol[i] * ws.dx[k][i]);
        }
    }
    for &(k, j, src, c) in &model.terms {
        let dst = &mut out.fields[k];
        let fj = &f.fields[j];
        match src {
            Source::Field => axpy(dst, c, fj),
            Source::DpField => axpy(dst, c, &ws.dp[j]),
            Source::DxField => axpy(dst, c, &ws.dx[j]),
            Source::XField => weighted_axpy(dst, c, &ws.xcol, fj),
            Source::PField => weighted_axpy(dst, c, &ws.pcol, fj),
        }
    }
    out.t = f.t;
    Ok(())
}

fn axpy<T: Scalar>(dst: &mut [T], c: T, v: &[T]) {
    for (d, &s) in dst.iter_mut().zip(v) {
        *d = *d + c * s;
    }
}

fn weighted_axpy<T: Scalar>(dst: &mut [T], c: T, w: &[T], v: &[T]) {
    for ((d, &a), &s) in dst.iter_mut().zip(w).zip(v) {
        *d = *d + c * a * s;
    }
}

fn row_sum<T: Scalar>(m: &Mat4<T>, k: usize) -> T {
    m[k].iter().fold(T::zero(), |s, v| s + v.abs())
}

/// Stable step for the 2-D system: `(diffusive, advective/reactive)` bounds.
pub fn cfl_2d<T: Scalar>(grid: &PhaseGrid<T>, model: &PhaseModel<T>) -> (T, T) {
    let s = T::lit(CFL_SAFETY);
    let (hx, hp) = (grid.x.dx(), grid.p.dx());
    let (lx, lp) = (grid.x.half_width(), grid.p.half_width());
    let half = T::lit(0.5);
    let diffusive = s * hp * hp / (T::lit(2.0) * model.gamma * grid.alpha());
    let transport = model.gamma * lp / hp + model.gamma + half * lx / hp + half * lp / hx;
    let mut rate = T::zero();
    for k in 0..4 {
        let r = row_sum(&model.local, k)
            + row_sum(&model.ops.m1, k) / hp
            + row_sum(&model.ops.m2, k) / hx
            + row_sum(&model.ops.m3, k) * lx
            + row_sum(&model.ops.m4, k) * lp;
        rate = rate.max(r);
    }
    (diffusive, s / (transport + rate))
}

/// Classical RK4 for the phase-space field with edges pinned to zero.
pub struct Stepper2d<T> {
    model: PhaseModel<T>,
    ws: Workspace2d<T>,
    k: [PhaseSpaceField<T>; 4],
    stage: PhaseSpaceField<T>,
}

impl<T: Scalar> Stepper2d<T> {
    pub fn new(grid: Arc<PhaseGrid<T>>, model: PhaseModel<T>) -> Self {
        let z = || PhaseSpaceField::zeros(grid.clone());
        Self {
            model,
            ws: Workspace2d::new(&grid),
            k: [z(), z(), z(), z()],
            stage: z(),
        }
    }

    pub fn step(&mut self, f: &mut PhaseSpaceField<T>, dt: T) -> Result<()> {
        let h = T::lit(0.5) * dt;
        let [k1, k2, k3, k4] = &mut self.k;
        rhs_2d_into(f, &self.model, &mut self.ws, k1)?;
        stage2(&mut self.stage, f, h, k1);
        rhs_2d_into(&self.stage, &self.model, &mut self.ws, k2)?;
        stage2(&mut self.stage, f, h, k2);
        rhs_2d_into(&self.stage, &self.model, &mut self.ws, k3)?;
        stage2(&mut self.stage, f, dt, k3);
        rhs_2d_into(&self.stage, &self.model, &mut self.ws, k4)?;
        let sixth = dt / T::lit(6.0);
        let two = T::lit(2.0);
        let mut finite = true;
        for c in 0..4 {
            let (a, b, cc, d) = (&k1.fields[c], &k2.fields[c], &k3.fields[c], &k4.fields[c]);
            for (i, v) in f.fields[c].iter_mut().enumerate() {
                *v = *v + sixth * (a[i] + two * (b[i] + cc[i]) + d[i]);
                finite &= v.is_finite();
            }
        }
        f.pin_edges();
        f.t = f.t + dt;
        if !finite {
            return Err(Error::NonFinite {
                t: f.t.to_f64_lossy(),
            });
        }
        Ok(())
    }
}

fn stage2<T: Scalar>(
    s: &mut PhaseSpaceField<T>,
    f: &PhaseSpaceField<T>,
    h: T,
    k: &PhaseSpaceField<T>,
) {
    for c in 0..4 {
        for ((o, &a), &b) in s.fields[c].iter_mut().zip(&f.fields[c]).zip(&k.fields[c]) {
            *o = a + h * b;
        }
    }
    s.t = f.t + h;
}

/// Reduced coefficients implied by `γ_eff` and `α` (ω = 1), other rates kept.
pub fn reduced_coefficients<T: Scalar>(
    c: &CoefficientSet<T>,
    alpha: T,
    gamma: T,
) -> CoefficientSet<T> {
    CoefficientSet {
        alpha_bar: alpha / (T::lit(4.0) * gamma),
        beta_bar: T::one() / (T::lit(4.0) * gamma),
        ..*c
    }
}

/// Setup for [`validate_elimination`].
#[derive(Debug, Clone, PartialEq)]
pub struct EliminationConfig<T> {
    /// Couplings and qubit rates; `alpha_bar` and `beta_bar` are replaced per γ_eff.
    pub coefficients: CoefficientSet<T>,
    pub alpha: T,
    pub initial: InitialCondition<T>,
    pub x_half_width: T,
    pub x_nodes: usize,
    /// `None` selects `8√α`.
    pub p_half_width: Option<T>,
    pub p_nodes: usize,
    pub t_final: T,
    /// Comparison times (0 and `t_final` are always included).
    pub times: Vec<T>,
    /// 2-D step as a fraction of the stability bound.
    pub dt_fraction: T,
    /// Also report the distance to the λ̄₁-rotation variant of the reduced equations.
    pub compare_rotation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EliminationRow<T> {
    pub gamma_eff: T,
    pub t: T,
    /// Summed L¹ distance of the four p-marginals to the reduced solution.
    pub l1_distance: T,
    pub l1_rotation: Option<T>,
    /// `|∬W₊ − 1|` of the 2-D solution.
    pub trace_error: T,
    pub dt: T,
    pub retried: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EliminationReport<T> {
    pub rows: Vec<EliminationRow<T>>,
}

impl<T: Scalar> EliminationReport<T> {
    /// `(γ_eff, distance)` at the comparison time closest to `t`.
    pub fn distances_at(&self, t: T) -> Vec<(T, T)> {
        let mut gammas: Vec<T> = Vec::new();
        for r in &self.rows {
            if !gammas.contains(&r.gamma_eff) {
                gammas.push(r.gamma_eff);
            }
        }
        gammas
            .into_iter()
            .filter_map(|g| {
                self.rows
                    .iter()
                    .filter(|r| r.gamma_eff == g)
                    .min_by(|a, b| {
                        (a.t - t)
                            .abs()
                            .partial_cmp(&(b.t - t).abs())
                            .unwrap_or(std::cmp::Ordering::Equal)
                    })
                    .map(|r| (g, r.l1_distance))
            })
            .collect()
    }

    /// True when the distance at `t` decreases strictly along the schedule.
    pub fn strictly_decreasing_at(&self, t: T) -> bool {
        self.distances_at(t).windows(2).all(|w| w[1].1 < w[0].1)
    }
}

fn l1_distance<T: Scalar>(a: &WignerField<T>, b: &WignerField<T>) -> Result<T> {
    if !a.same_grid(b) {
        return Err(Error::GridMismatch);
    }
    let dx = a.grid().dx();
    let mut total = T::zero();
    for (u, v) in a.components().iter().zip(b.components()) {
        let d: Vec<T> = u.iter().zip(v).map(|(&p, &q)| (p - q).abs()).collect();
        total = total + trapezoid(&d, dx);
    }
    Ok(total)
}

fn run_2d<T: Scalar>(
    f0: &PhaseSpaceField<T>,
    model: PhaseModel<T>,
    stops: &[T],
    dt_max: T,
) -> Result<Vec<PhaseSpaceField<T>>> {
    let grid = f0.grid.clone();
    let mut stepper = Stepper2d::new(grid, model);
    let mut f = f0.clone();
    let mut out = vec![f.clone()];
    let mut start = T::zero();
    for &stop in stops {
        let seg = stop - start;
        if seg > T::zero() {
            let n = (seg / dt_max).ceil().to_f64_lossy().max(1.0) as usize;
            let dt = seg / T::from_usize_lossy(n);
            for j in 1..=n {
                stepper.step(&mut f, dt)?;
                f.t = start + dt * T::from_usize_lossy(j);
            }
            f.t = stop;
        }
        out.push(f.clone());
        start = stop;
    }
    Ok(out)
}

/// Evolves the 2-D system for each `γ_eff` and compares p-marginals with the
/// reduced four-field equations at the configured times.
pub fn validate_elimination<T: Scalar>(
    cfg: &EliminationConfig<T>,
    schedule: &[T],
) -> Result<EliminationReport<T>> {
    if schedule.is_empty() {
        return Err(invalid("gamma_schedule", "empty"));
    }
    let xgrid = Arc::new(SpatialGrid::new(cfg.x_half_width, cfg.x_nodes)?);
    let pw = cfg
        .p_half_width
        .unwrap_or_else(|| PhaseGrid::<T>::default_p_half_width(cfg.alpha));
    let pgrid = SpatialGrid::new(pw, cfg.p_nodes)?;
    let grid = Arc::new(PhaseGrid::new((*xgrid).clone(), pgrid, cfg.alpha)?);
    let w0 = initial_field(&cfg.initial, xgrid.clone())?;
    let f0 = PhaseSpaceField::thermalized(grid.clone(), &w0)?;

    let mut stops: Vec<T> = cfg
        .times
        .iter()
        .copied()
        .filter(|&t| t > T::zero() && t < cfg.t_final)
        .collect();
    stops.push(cfg.t_final);
    stops.sort_by(|a, b| a.partial_cmp(b).unwrap());
    stops.dedup();

    let mut rows = Vec::new();
    for &gamma in schedule {
        let reduced = reduced_coefficients(&cfg.coefficients, cfg.alpha, gamma);
        let printed = RhsOptions::default();
        let model = PhaseModel::new(&cfg.coefficients, gamma, &printed)?;
        let (d, a) = cfl_2d(&grid, &model);
        let mut dt = cfg.dt_fraction * d.min(a);
        let mut retried = false;
        let snaps = match run_2d(&f0, model.clone(), &stops, dt) {
            Ok(s) => s,
            Err(Error::NonFinite { .. }) => {
                dt = dt * T::lit(0.5);
                retried = true;
                run_2d(&f0, model, &stops, dt)?
            }
            Err(e) => return Err(e),
        };
        let reference = |opts: RhsOptions| {
            let sched = Integrator {
                dt: DtChoice::Auto,
                t_final: cfg.t_final,
                snapshots: std::iter::once(T::zero())
                    .chain(stops.iter().copied())
                    .collect(),
                series_stride: usize::MAX,
                options: opts,
            };
            oqbm::evolve_field(w0.clone(), &reduced, &sched)
        };
        let main = reference(printed)?;
        let rot = if cfg.compare_rotation {
            Some(reference(RhsOptions {
                lambda1: oqbm::LambdaOneCoupling::Rotation,
            })?)
        } else {
            None
        };
        for (k, s) in snaps.iter().enumerate() {
            let marg = s.marginal(xgrid.clone())?;
            let l1 = l1_distance(&marg, &main.snapshots[k])?;
            let l1_rotation = match &rot {
                Some(r) => Some(l1_distance(&marg, &r.snapshots[k])?),
                None => None,
            };
            rows.push(EliminationRow {
                gamma_eff: gamma,
                t: s.t,
                l1_distance: l1,
                l1_rotation,
                trace_error: (s.trace() - T::one()).abs(),
                dt,
                retried,
            });
        }
    }
    Ok(EliminationReport { rows })
}
