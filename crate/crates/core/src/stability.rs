//! Normal-mode stability of the basic state.
//!
//! Unknowns are `w_hat` and `N = int_1^x3 n_hat` on the mesh, stacked as
//! `[w_hat; N]`. The pair `(A, B)` with `A x = gamma B x` is
//!
//! ```text
//! (D4 - 2a^2 D2 + a^4) w + a^2 Ra D N = gamma Sc^-1 (D2 - a^2) w
//! (D2 - a^2 - Us T_b D) N - Us n_b T' G
//!   + i int_1^x Us n_b T_b / F (a1 q1 + a2 q2) - int_1^x n_b' w = gamma N
//! ```
//!
//! The second line is the concentration equation integrated once from the
//! surface, using the zero-flux condition there.
//!
//! where `G`, `q1`, `q2` are the perturbed light maps. Seven rows carry the
//! wall conditions.

use faer::prelude::*;
use faer::{c64, Mat};
use serde::Serialize;
use std::f64::consts::PI;

use crate::basic_state::BasicState;
use crate::error::{Error, Result};
use crate::grid::{cumulative_integral, DiffOperator, Derivatives, Mesh};
use crate::params::NumericsConfig;
use crate::perturbed::{assemble_diffuse_operators, OrdinateSet, PerturbedRadiationOperators};

/// Eigenvalues at or beyond this magnitude come from the boundary rows.
const INFINITE_EIGENVALUE: f64 = 1e8;
/// Imaginary part above which a neutral mode is oscillatory.
const OSCILLATORY_THRESHOLD: f64 = 1e-4;
/// Formal order of the finite-difference stencils.
pub const STENCIL_ACCURACY: usize = 6;
const SHIFT: c64 = c64 { re: -0.5, im: 0.0 };

#[derive(Debug, Clone)]
pub struct StabilityOperator {
    pub a: Mat<c64>,
    pub b: Mat<c64>,
    pub wavenumber: f64,
    pub rayleigh: f64,
    pub mesh_points: usize,
    d1: Mat<c64>,
}

/// Indices of the rows that hold wall conditions: four for the velocity and
/// the floor flux condition, which owns the extra unknown `n_hat(0)`.
pub fn boundary_rows(m: usize) -> [usize; 5] {
    [0, 1, m - 2, m - 1, 2 * m]
}

fn dense(op: &DiffOperator, m: usize) -> Mat<c64> {
    let mut out = Mat::<c64>::zeros(m, m);
    for (i, row) in op.rows.iter().enumerate() {
        for &(j, w) in row {
            out[(i, j)] += c64::new(w, 0.0);
        }
    }
    out
}

fn diagonal(v: &[f64]) -> Mat<c64> {
    let m = v.len();
    Mat::from_fn(m, m, |i, j| if i == j { c64::new(v[i], 0.0) } else { c64::new(0.0, 0.0) })
}

fn scaled(m: &Mat<c64>, factor: f64) -> Mat<c64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * factor)
}

fn row_max(mat: &Mat<c64>, i: usize) -> f64 {
    (0..mat.ncols()).map(|j| mat[(i, j)].norm()).fold(0.0, f64::max)
}

/// `int_0^x f` at the nodes as a matrix acting on nodal `f`.
fn cumulative_matrix(mesh: &Mesh) -> Mat<c64> {
    let m = mesh.len();
    let mut out = Mat::<c64>::zeros(m, m);
    let mut unit = vec![0.0; m];
    for j in 0..m {
        unit[j] = 1.0;
        let c = cumulative_integral(mesh, &unit);
        for i in 0..m {
            out[(i, j)] = c64::new(c[i], 0.0);
        }
        unit[j] = 0.0;
    }
    out
}

/// `int_1^x f` at the nodes as a matrix acting on nodal `f`.
fn surface_integral_matrix(mesh: &Mesh) -> Mat<c64> {
    let c = cumulative_matrix(mesh);
    let m = mesh.len();
    Mat::from_fn(m, m, |i, j| c[(i, j)] - c[(m - 1, j)])
}

fn norm(v: &[c64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn mat_vec(m: &Mat<c64>, x: &[c64]) -> Vec<c64> {
    PerturbedRadiationOperators::apply(m, x)
}

/// Assembles the generalized eigenproblem at Rayleigh number `rayleigh`.
pub fn assemble(
    state: &BasicState,
    ops: &PerturbedRadiationOperators,
    rayleigh: f64,
) -> Result<StabilityOperator> {
    let m = state.mesh.len();
    if ops.map_g.nrows() != m {
        return Err(Error::DimensionMismatch { expected: m, found: ops.map_g.nrows() });
    }
    let p = &state.params;
    let k = ops.wavenumber;
    let (k1, k2) = (k * ops.wavevector_angle.cos(), k * ops.wavevector_angle.sin());
    let k2sq = k * k;
    let us = p.swim_speed;
    let d = Derivatives::new(&state.mesh, STENCIL_ACCURACY);
    let (d1, d2, d4) = (dense(&d.d1, m), dense(&d.d2, m), dense(&d.d4, m));
    let eye = Mat::<c64>::identity(m, m);
    let re = |v: f64| c64::new(v, 0.0);

    let flux = state.downward_flux();
    let n_slope: Vec<f64> = state.n_b.iter().zip(&state.dtb_dg).map(|(n, t)| n * t).collect();
    let horizontal: Vec<f64> = (0..m).map(|i| us * state.n_b[i] * state.t_b[i] / flux[i]).collect();

    let ww = &d4 - scaled(&d2, 2.0 * k2sq) + scaled(&eye, k2sq * k2sq);
    let wn = scaled(&d1, k2sq * rayleigh);
    let bww = scaled(&(&d2 - scaled(&eye, k2sq)), 1.0 / p.schmidt);
    let q_h = scaled(&ops.map_q1, k1) + scaled(&ops.map_q2, k2);

    // The concentration equation is integrated twice. With the flux
    // Phi = N'' - Us T N' - Us n T' G and the factor P = exp(-Us int_0^x T),
    //   (P N')' = P S,  S = (gamma + a^2) N - i Hq N + Hw w + Us n T' G,
    // so N' = (n_hat(0) + int_0^x P S) / P and N = int_1^x N'. The field G
    // carries thin wall layers of the grazing ordinates and now only enters
    // under integrals.
    let cumulative = cumulative_matrix(&state.mesh);
    let from_top = surface_integral_matrix(&state.mesh);
    let exponent = cumulative_integral(&state.mesh, &state.t_b);
    let factor: Vec<f64> = exponent.iter().map(|e| (-us * e).exp()).collect();
    let inverse: Vec<f64> = factor.iter().map(|f| 1.0 / f).collect();
    let i_unit = c64::new(0.0, 1.0);
    let hq = &from_top * diagonal(&horizontal) * &q_h;
    let hw = &from_top * diagonal(&state.dn_b());
    let propagate = &from_top * diagonal(&inverse) * &cumulative * diagonal(&factor);
    let source = Mat::from_fn(m, m, |i, j| {
        let local = if i == j { re(k2sq) } else { re(0.0) };
        local - i_unit * hq[(i, j)] + ops.map_g[(i, j)] * (us * n_slope[i])
    });
    let nn = &eye - &propagate * &source;
    let nw = -(&propagate * &hw);
    let slope: Vec<f64> = (0..m).map(|i| (0..m).map(|j| from_top[(i, j)].re * inverse[j]).sum()).collect();

    let size = 2 * m + 1;
    let mut a = Mat::<c64>::zeros(size, size);
    let mut b = Mat::<c64>::zeros(size, size);
    for i in 0..m {
        for j in 0..m {
            a[(i, j)] = ww[(i, j)];
            a[(i, m + j)] = wn[(i, j)];
            a[(m + i, j)] = nw[(i, j)];
            a[(m + i, m + j)] = nn[(i, j)];
            b[(i, j)] = bww[(i, j)];
            b[(m + i, m + j)] = propagate[(i, j)];
        }
        a[(m + i, 2 * m)] = re(-slope[i]);
    }

    let rows = boundary_rows(m);
    for &r in &rows[..4] {
        for j in 0..size {
            a[(r, j)] = c64::new(0.0, 0.0);
            b[(r, j)] = c64::new(0.0, 0.0);
        }
    }
    // w = Dw = 0 at the floor, w = D2 w = 0 at the surface.
    a[(rows[0], 0)] = re(1.0);
    a[(rows[3], m - 1)] = re(1.0);
    for j in 0..m {
        a[(rows[1], j)] = d1[(0, j)];
        a[(rows[2], j)] = d2[(m - 1, j)];
    }
    // Zero flux at the floor. The surface condition and N(1) = 0 hold by
    // construction.
    for j in 0..m {
        a[(rows[4], j)] = hw[(0, j)];
        a[(rows[4], m + j)] = -i_unit * hq[(0, j)];
    }
    a[(rows[4], m)] += re(k2sq);
    b[(rows[4], m)] = re(-1.0);

    for i in 0..size {
        let scale = row_max(&a, i).max(row_max(&b, i));
        if scale > 0.0 {
            for j in 0..size {
                a[(i, j)] /= scale;
                b[(i, j)] /= scale;
            }
        }
    }
    Ok(StabilityOperator { a, b, wavenumber: k, rayleigh, mesh_points: m, d1 })
}

impl StabilityOperator {
    /// Finite eigenvalues, sorted by decreasing real part.
    pub fn spectrum(&self) -> Result<Vec<c64>> {
        let n = self.a.nrows();
        let shifted = Mat::from_fn(n, n, |i, j| self.a[(i, j)] - SHIFT * self.b[(i, j)]);
        let lu = shifted.partial_piv_lu();
        let c = lu.solve(&self.b);
        if (0..n).any(|i| (0..n).any(|j| !c[(i, j)].re.is_finite() || !c[(i, j)].im.is_finite())) {
            return Err(Error::EigenFailure("shifted operator is singular".into()));
        }
        let mu = c.eigenvalues().map_err(|e| Error::EigenFailure(format!("{e:?}")))?;
        let mut gamma: Vec<c64> = mu
            .into_iter()
            .filter(|m| m.norm() > 1.0 / INFINITE_EIGENVALUE)
            .map(|m| SHIFT + m.inv())
            .filter(|g| g.norm() < INFINITE_EIGENVALUE)
            .collect();
        if gamma.is_empty() {
            return Err(Error::EigenFailure("no finite eigenvalues".into()));
        }
        gamma.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
        Ok(gamma)
    }

    /// Spectrum from the QZ route, for cross-checking [`spectrum`](Self::spectrum).
    pub fn spectrum_qz(&self) -> Result<Vec<c64>> {
        let ev = self.a.generalized_eigen(&self.b).map_err(|e| Error::EigenFailure(format!("{e:?}")))?;
        let (sa, sb) = (ev.S_a(), ev.S_b());
        let mut gamma: Vec<c64> = (0..self.a.nrows())
            .filter_map(|i| {
                let (x, y) = (sa.column_vector()[i], sb.column_vector()[i]);
                (y.norm() > x.norm() / INFINITE_EIGENVALUE).then(|| x / y)
            })
            .collect();
        gamma.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
        Ok(gamma)
    }

    /// Leading eigenvalue, preferring `Im >= 0` within a conjugate pair.
    pub fn leading_eigenvalue(&self) -> Result<c64> {
        let spectrum = self.spectrum()?;
        let top = spectrum[0];
        let tol = 1e-9 * (1.0 + top.norm());
        Ok(spectrum
            .iter()
            .take_while(|g| (g.re - top.re).abs() < tol)
            .copied()
            .max_by(|x, y| x.im.total_cmp(&y.im))
            .unwrap_or(top))
    }

    fn residual(&self, gamma: c64, x: &[c64]) -> f64 {
        let ax = mat_vec(&self.a, x);
        let bx = mat_vec(&self.b, x);
        norm(&ax.iter().zip(&bx).map(|(p, q)| p - gamma * q).collect::<Vec<_>>()) / norm(x)
    }

    /// Eigenvector for `gamma` by inverse iteration with Rayleigh updates.
    fn eigenvector(&self, mut gamma: c64) -> Result<(c64, Vec<c64>)> {
        let n = self.a.nrows();
        let mut x: Vec<c64> = (0..n).map(|i| c64::new(1.0 + (i as f64 * 0.37).sin(), 0.1)).collect();
        let mut best = (f64::INFINITY, gamma, x.clone());
        for _ in 0..8 {
            let lu = Mat::from_fn(n, n, |i, j| self.a[(i, j)] - gamma * self.b[(i, j)]).partial_piv_lu();
            let bx = Mat::from_fn(n, 1, |i, _| mat_vec(&self.b, &x)[i]);
            let y = lu.solve(&bx);
            let next: Vec<c64> = (0..n).map(|i| y[(i, 0)]).collect();
            let scale = norm(&next);
            if !scale.is_finite() || scale == 0.0 {
                break;
            }
            x = next.iter().map(|v| v / scale).collect();
            let ax = mat_vec(&self.a, &x);
            let bx = mat_vec(&self.b, &x);
            let den: c64 = bx.iter().map(|v| v.norm_sqr()).sum::<f64>().into();
            let num: c64 = bx.iter().zip(&ax).map(|(q, p)| q.conj() * p).sum();
            let candidate = num / den;
            let r = self.residual(candidate, &x);
            if r < best.0 {
                best = (r, candidate, x.clone());
            }
            if r < 1e-13 {
                break;
            }
            // Keep the shift off the eigenvalue so the factorization stays usable.
            gamma = candidate + c64::new(1e-12 * (1.0 + candidate.norm()), 0.0);
        }
        if !best.0.is_finite() {
            return Err(Error::EigenFailure("inverse iteration broke down".into()));
        }
        Ok((best.1, best.2))
    }
}

/// Leading eigenpair with profiles and diagnostics.
#[derive(Debug, Clone)]
pub struct ModeResult {
    pub gamma: c64,
    pub w_hat: Vec<c64>,
    pub n_big: Vec<c64>,
    pub n_hat: Vec<c64>,
    pub residual: f64,
    pub boundary_residual: f64,
    pub wavenumber: f64,
    pub rayleigh: f64,
}

pub fn leading_growth_rate(op: &StabilityOperator) -> Result<ModeResult> {
    let gamma = op.leading_eigenvalue()?;
    let (gamma, x) = op.eigenvector(gamma)?;
    let m = op.mesh_points;
    let n_big = x[m..2 * m].to_vec();
    let n_hat = mat_vec(&op.d1, &n_big);
    // max |n_hat| = 1, real and positive there.
    let peak = n_hat.iter().copied().max_by(|p, q| p.norm().total_cmp(&q.norm())).unwrap();
    let phase = peak.inv();
    let x: Vec<c64> = x.iter().map(|v| v * phase).collect();
    let ax = mat_vec(&op.a, &x);
    let bx = mat_vec(&op.b, &x);
    let xnorm = norm(&x);
    let boundary_residual =
        boundary_rows(m).iter().map(|&r| (ax[r] - gamma * bx[r]).norm()).fold(0.0, f64::max) / xnorm;
    Ok(ModeResult {
        gamma,
        residual: op.residual(gamma, &x),
        boundary_residual,
        w_hat: x[..m].to_vec(),
        n_big: x[m..2 * m].to_vec(),
        n_hat: n_hat.iter().map(|v| v * phase).collect(),
        wavenumber: op.wavenumber,
        rayleigh: op.rayleigh,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Stationary,
    Oscillatory,
}

impl Branch {
    pub fn classify(im_gamma: f64) -> Branch {
        if im_gamma.abs() > OSCILLATORY_THRESHOLD {
            Branch::Oscillatory
        } else {
            Branch::Stationary
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Stationary => "stationary",
            Branch::Oscillatory => "oscillatory",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NeutralPoint {
    pub a: f64,
    pub ra: f64,
    pub im_gamma: f64,
    pub branch: Branch,
}

/// Everything fixed for one wavenumber while Ra varies.
pub struct WavenumberProblem<'a> {
    pub state: &'a BasicState,
    pub ops: PerturbedRadiationOperators,
}

impl<'a> WavenumberProblem<'a> {
    pub fn new(state: &'a BasicState, wavenumber: f64, numerics: &NumericsConfig) -> Result<Self> {
        let ordinates = OrdinateSet::from_numerics(numerics)?;
        let ops = assemble_diffuse_operators(state, wavenumber, &ordinates, numerics)?;
        Ok(WavenumberProblem { state, ops })
    }

    pub fn operator(&self, rayleigh: f64) -> Result<StabilityOperator> {
        assemble(self.state, &self.ops, rayleigh)
    }

    pub fn leading(&self, rayleigh: f64) -> Result<c64> {
        self.operator(rayleigh)?.leading_eigenvalue()
    }

    pub fn mode(&self, rayleigh: f64) -> Result<ModeResult> {
        leading_growth_rate(&self.operator(rayleigh)?)
    }
}

const BRACKET: (f64, f64) = (10.0, 1e4);
const MAX_DOUBLINGS: usize = 20;

/// Rayleigh number where the leading growth rate at this wavenumber
/// crosses zero, searched from `guess` or from the default bracket.
pub fn neutral_ra(problem: &WavenumberProblem, guess: Option<f64>, numerics: &NumericsConfig) -> Result<NeutralPoint> {
    let a = problem.ops.wavenumber;
    let f = |ra: f64| problem.leading(ra).map(|g| g.re);
    let (mut lo, mut hi) = match guess {
        Some(g) if g > 0.0 => (g / 1.25, g * 1.25),
        _ => BRACKET,
    };
    let mut f_lo = f(lo)?;
    let mut doublings = 0;
    while f_lo > 0.0 {
        if doublings == MAX_DOUBLINGS || lo < 1e-6 {
            return Err(Error::NoBracket { wavenumber: a, ra_lo: lo, ra_hi: hi });
        }
        hi = lo;
        lo /= 2.0;
        f_lo = f(lo)?;
        doublings += 1;
    }
    let mut f_hi = f(hi)?;
    doublings = 0;
    while f_hi < 0.0 {
        if doublings == MAX_DOUBLINGS {
            return Err(Error::NoBracket { wavenumber: a, ra_lo: lo, ra_hi: hi });
        }
        lo = hi;
        f_lo = f_hi;
        hi *= 2.0;
        f_hi = f(hi)?;
        doublings += 1;
    }

    // Illinois false position; the leading real part has kinks where modes cross.
    let mut side = 0;
    let mut ra = 0.5 * (lo + hi);
    for _ in 0..200 {
        ra = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
        if !(ra > lo && ra < hi) {
            ra = 0.5 * (lo + hi);
        }
        let fr = f(ra)?;
        if fr.abs() < 1e-13 {
            break;
        }
        if fr < 0.0 {
            lo = ra;
            f_lo = fr;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = ra;
            f_hi = fr;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        }
        if hi - lo < 1e-6 * ra * numerics.neutral_tol.clamp(1e-3, 1.0) {
            ra = 0.5 * (lo + hi);
            break;
        }
    }
    let gamma = problem.leading(ra)?;
    Ok(NeutralPoint { a, ra, im_gamma: gamma.im.abs(), branch: Branch::classify(gamma.im) })
}

/// Neutral Rayleigh number at `a`, building the light maps first.
pub fn neutral_ra_at(state: &BasicState, a: f64, guess: Option<f64>, numerics: &NumericsConfig) -> Result<NeutralPoint> {
    let problem = WavenumberProblem::new(state, a, numerics)?;
    neutral_ra(&problem, guess, numerics)
}

#[derive(Debug, Clone)]
pub struct NeutralSample {
    pub a: f64,
    pub point: std::result::Result<NeutralPoint, Error>,
}

/// Wavenumber where the lowest neutral mode changes type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchTransition {
    pub a: f64,
    pub below: Branch,
    pub above: Branch,
}

#[derive(Debug, Clone)]
pub struct NeutralCurve {
    pub samples: Vec<NeutralSample>,
    pub transitions: Vec<BranchTransition>,
}

impl NeutralCurve {
    pub fn points(&self) -> impl Iterator<Item = &NeutralPoint> {
        self.samples.iter().filter_map(|s| s.point.as_ref().ok())
    }

    pub fn lowest(&self) -> Option<(usize, &NeutralPoint)> {
        self.samples
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.point.as_ref().ok().map(|p| (i, p)))
            .min_by(|x, y| x.1.ra.total_cmp(&y.1.ra))
    }
}

pub fn wavenumber_grid(a_min: f64, a_max: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![a_min];
    }
    (0..points).map(|i| a_min + (a_max - a_min) * i as f64 / (points - 1) as f64).collect()
}

fn check_range(a_min: f64, a_max: f64) -> Result<()> {
    if !(a_min > 0.0 && a_max <= 20.0 && a_min <= a_max) {
        return Err(Error::InvalidParams(format!("wavenumber range [{a_min}, {a_max}] must lie in (0, 20]")));
    }
    Ok(())
}

/// Lowest neutral branch over `[a_min, a_max]`, with branch-type changes
/// located to within 0.02.
pub fn trace_neutral_curve(
    state: &BasicState,
    a_min: f64,
    a_max: f64,
    points: usize,
    numerics: &NumericsConfig,
) -> Result<NeutralCurve> {
    check_range(a_min, a_max)?;
    let mut samples: Vec<NeutralSample> = Vec::with_capacity(points);
    let mut guess = None;
    for a in wavenumber_grid(a_min, a_max, points) {
        let point = neutral_ra_at(state, a, guess, numerics);
        if let Ok(p) = &point {
            guess = Some(p.ra);
        }
        samples.push(NeutralSample { a, point });
    }
    let mut transitions = Vec::new();
    for pair in samples.windows(2) {
        let (Ok(left), Ok(right)) = (&pair[0].point, &pair[1].point) else { continue };
        if left.branch != right.branch {
            transitions.push(locate_transition(state, *left, *right, numerics)?);
        }
    }
    Ok(NeutralCurve { samples, transitions })
}

fn locate_transition(
    state: &BasicState,
    mut left: NeutralPoint,
    mut right: NeutralPoint,
    numerics: &NumericsConfig,
) -> Result<BranchTransition> {
    let (below, above) = (left.branch, right.branch);
    while right.a - left.a > 0.04 {
        let mid = 0.5 * (left.a + right.a);
        let p = neutral_ra_at(state, mid, Some(0.5 * (left.ra + right.ra)), numerics)?;
        if p.branch == below {
            left = p;
        } else {
            right = p;
        }
    }
    Ok(BranchTransition { a: 0.5 * (left.a + right.a), below, above })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalResult {
    pub a_c: f64,
    pub ra_c: f64,
    pub im_gamma: f64,
    pub branch: Branch,
    pub wavelength: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
}

impl CriticalResult {
    fn from_point(p: NeutralPoint) -> CriticalResult {
        CriticalResult {
            a_c: p.a,
            ra_c: p.ra,
            im_gamma: p.im_gamma,
            branch: p.branch,
            wavelength: 2.0 * PI / p.a,
            period: (p.branch == Branch::Oscillatory).then(|| 2.0 * PI / p.im_gamma),
        }
    }
}

/// Minimum of the traced curve, refined by golden-section search to
/// `da <= 1e-3`.
pub fn find_critical(state: &BasicState, curve: &NeutralCurve, numerics: &NumericsConfig) -> Result<CriticalResult> {
    let Some((k, best)) = curve.lowest() else {
        return Err(curve.samples.first().and_then(|s| s.point.clone().err()).unwrap_or(Error::NoBracket {
            wavenumber: f64::NAN,
            ra_lo: BRACKET.0,
            ra_hi: BRACKET.1,
        }));
    };
    let n = curve.samples.len();
    if n == 1 {
        return Ok(CriticalResult::from_point(*best));
    }
    let mut lo = curve.samples[k.saturating_sub(1)].a;
    let mut hi = curve.samples[(k + 1).min(n - 1)].a;
    let mut best = *best;
    let eval = |a: f64, best: &mut NeutralPoint| -> Result<f64> {
        let p = neutral_ra_at(state, a, Some(best.ra), numerics)?;
        if p.ra < best.ra {
            *best = p;
        }
        Ok(p.ra)
    };
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let mut f1 = eval(x1, &mut best)?;
    let mut f2 = eval(x2, &mut best)?;
    while hi - lo > 1e-3 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = eval(x1, &mut best)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = eval(x2, &mut best)?;
        }
    }
    Ok(CriticalResult::from_point(best))
}

/// Traces and refines in one call.
pub fn critical_point(
    state: &BasicState,
    a_min: f64,
    a_max: f64,
    points: usize,
    numerics: &NumericsConfig,
) -> Result<(NeutralCurve, CriticalResult)> {
    let curve = trace_neutral_curve(state, a_min, a_max, points, numerics)?;
    let critical = find_critical(state, &curve, numerics)?;
    Ok((curve, critical))
}

/// Real perturbation fields on an `(x1, x3)` grid at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub x1: Vec<f64>,
    pub x3: Vec<f64>,
    /// `w[i3][i1]`.
    pub w: Vec<Vec<f64>>,
    pub n: Vec<Vec<f64>>,
}

/// Samples `Re[f(x3) exp(i Im(gamma) t + i a x1)]` over one wavelength at
/// the given fractions of the oscillation period. Growth is dropped; the
/// mode is taken as neutral.
pub fn eigenmode_snapshots(
    mode: &ModeResult,
    x3: &[f64],
    fractions: &[f64],
    x1_points: usize,
) -> Result<Vec<Snapshot>> {
    let omega = mode.gamma.im;
    if omega.abs() <= OSCILLATORY_THRESHOLD {
        return Err(Error::Stationary);
    }
    let period = 2.0 * PI / omega.abs();
    let a = mode.wavenumber;
    let wavelength = 2.0 * PI / a.abs();
    let x1: Vec<f64> = (0..x1_points).map(|i| wavelength * i as f64 / (x1_points - 1).max(1) as f64).collect();
    Ok(fractions
        .iter()
        .map(|f| {
            let t = f * period;
            let field = |profile: &[c64]| -> Vec<Vec<f64>> {
                profile
                    .iter()
                    .map(|v| x1.iter().map(|x| (v * c64::new(0.0, omega * t + a * x).exp()).re).collect())
                    .collect()
            };
            Snapshot { time: t, x1: x1.clone(), x3: x3.to_vec(), w: field(&mode.w_hat), n: field(&mode.n_hat) }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basic_state::solve_basic_state;
    use crate::params::{SuspensionInput, TaxisSpec};
    use crate::perturbed::build_operators;

    fn numerics() -> NumericsConfig {
        let mut n = NumericsConfig::default().with_mesh(51);
        n.ordinates_per_hemisphere = 6;
        n.azimuthal_points = 6;
        n
    }

    fn fig5() -> BasicState {
        let p = SuspensionInput {
            swim_speed: 20.0,
            optical_depth: 1.0,
            albedo: 0.605,
            aniso: 0.38,
            incidence_deg: 40.0,
            taxis: TaxisSpec::CriticalIntensity(1.0),
            ..Default::default()
        }
        .resolve()
        .unwrap();
        solve_basic_state(&p, &numerics()).unwrap()
    }

    #[test]
    fn layout_and_boundary_rows() {
        let s = fig5();
        let problem = WavenumberProblem::new(&s, 2.0, &numerics()).unwrap();
        let op = problem.operator(300.0).unwrap();
        assert_eq!(op.a.nrows(), 103);
        let rows = boundary_rows(51);
        // Velocity conditions and the surface row, where N(1) = 0.
        let algebraic = [rows[0], rows[1], rows[2], rows[3], 101];
        for r in 0..103 {
            let b_empty = (0..103).all(|j| op.b[(r, j)] == c64::new(0.0, 0.0));
            assert_eq!(b_empty, algebraic.contains(&r), "row {r}");
        }
        let again = problem.operator(300.0).unwrap();
        assert!(op.a == again.a && op.b == again.b);
    }

    #[test]
    fn zero_rayleigh_decouples_velocity() {
        let s = fig5();
        let problem = WavenumberProblem::new(&s, 2.0, &numerics()).unwrap();
        let op = problem.operator(0.0).unwrap();
        for i in 0..51 {
            for j in 51..102 {
                assert_eq!(op.a[(i, j)], c64::new(0.0, 0.0));
            }
        }
        assert!(problem.leading(0.0).unwrap().re < 0.0);
    }

    #[test]
    fn shift_invert_matches_qz() {
        let s = fig5();
        let op = WavenumberProblem::new(&s, 2.67, &numerics()).unwrap().operator(400.0).unwrap();
        let a = op.spectrum().unwrap();
        let b = op.spectrum_qz().unwrap();
        for g in a.iter().take(6) {
            let nearest = b.iter().map(|h| (g - h).norm()).fold(f64::INFINITY, f64::min);
            assert!(nearest < 1e-7 * (1.0 + g.norm()), "{g} {nearest}");
        }
    }

    #[test]
    fn leading_mode_satisfies_residual_bounds() {
        let s = fig5();
        let problem = WavenumberProblem::new(&s, 2.67, &numerics()).unwrap();
        let mode = problem.mode(400.0).unwrap();
        assert!(mode.residual < 1e-8, "{}", mode.residual);
        assert!(mode.boundary_residual < 1e-8, "{}", mode.boundary_residual);
        let peak = mode.n_hat.iter().copied().max_by(|p, q| p.norm().total_cmp(&q.norm())).unwrap();
        assert!((peak - c64::new(1.0, 0.0)).norm() < 1e-12);
        assert!((mode.gamma - problem.leading(400.0).unwrap()).norm() < 1e-8 * mode.gamma.norm());
    }

    #[test]
    fn reflected_wavevector_conjugates_the_spectrum() {
        let s = fig5();
        let o = OrdinateSet::from_numerics(&numerics()).unwrap();
        let plus = build_operators(&s, 2.67, 0.0, &o, true).unwrap();
        let minus = build_operators(&s, -2.67, 0.0, &o, true).unwrap();
        let sp = assemble(&s, &plus, 400.0).unwrap().spectrum().unwrap();
        let sm = assemble(&s, &minus, 400.0).unwrap().spectrum().unwrap();
        for g in sp.iter().take(8) {
            let nearest = sm.iter().map(|h| (g.conj() - h).norm()).fold(f64::INFINITY, f64::min);
            assert!(nearest < 1e-10 * (1.0 + g.norm()), "{g} {nearest}");
        }
    }

    #[test]
    fn snapshots_repeat_after_one_period() {
        let s = fig5();
        let problem = WavenumberProblem::new(&s, 2.67, &numerics()).unwrap();
        let np = neutral_ra(&problem, Some(400.0), &numerics()).unwrap();
        assert_eq!(np.branch, Branch::Oscillatory);
        let mode = problem.mode(np.ra).unwrap();
        let snaps = eigenmode_snapshots(&mode, &s.mesh.nodes, &[0.0, 0.25, 0.5, 0.75, 1.0], 41).unwrap();
        assert_eq!(snaps.len(), 5);
        let (first, last) = (&snaps[0], &snaps[4]);
        for (r0, r1) in first.w.iter().zip(&last.w) {
            for (v0, v1) in r0.iter().zip(r1) {
                assert!((v0 - v1).abs() < 1e-8);
            }
        }
        // The conjugate mode is the mirror image in x1.
        let mirror = ModeResult {
            gamma: mode.gamma.conj(),
            w_hat: mode.w_hat.iter().map(|v| v.conj()).collect(),
            n_hat: mode.n_hat.iter().map(|v| v.conj()).collect(),
            ..mode.clone()
        };
        let other = eigenmode_snapshots(&mirror, &s.mesh.nodes, &[0.3], 41).unwrap();
        let here = eigenmode_snapshots(&mode, &s.mesh.nodes, &[0.3], 41).unwrap();
        for (r0, r1) in here[0].w.iter().zip(&other[0].w) {
            for k in 0..41 {
                let mirrored = r1[40 - k];
                assert!((r0[k] - mirrored).abs() < 1e-9, "{} {}", r0[k], mirrored);
            }
        }
    }

    #[test]
    fn stationary_mode_has_no_cycle() {
        let mode = ModeResult {
            gamma: c64::new(0.0, 1e-9),
            w_hat: vec![c64::new(1.0, 0.0); 3],
            n_big: vec![c64::new(1.0, 0.0); 3],
            n_hat: vec![c64::new(1.0, 0.0); 3],
            residual: 0.0,
            boundary_residual: 0.0,
            wavenumber: 1.0,
            rayleigh: 0.0,
        };
        assert_eq!(eigenmode_snapshots(&mode, &[0.0, 0.5, 1.0], &[0.0], 5), Err(Error::Stationary));
    }

    #[test]
    fn critical_result_reports_wavelength_and_period() {
        let p = NeutralPoint { a: 2.0, ra: 100.0, im_gamma: 4.0, branch: Branch::Oscillatory };
        let c = CriticalResult::from_point(p);
        assert!((c.wavelength * c.a_c - 2.0 * PI).abs() < 1e-15);
        assert!((c.period.unwrap() - PI / 2.0).abs() < 1e-15);
        let s = CriticalResult::from_point(NeutralPoint { branch: Branch::Stationary, im_gamma: 0.0, ..p });
        assert!(s.period.is_none());
        let json = serde_json::to_string(&s).unwrap();
        assert!(!json.contains("period") && json.contains("\"stationary\""));
    }

    #[test]
    fn wavenumber_grid_endpoints() {
        assert_eq!(wavenumber_grid(1.0, 2.0, 1), vec![1.0]);
        let g = wavenumber_grid(0.1, 10.0, 60);
        assert_eq!((g[0], g[59]), (0.1, 10.0));
        assert!(check_range(0.0, 1.0).is_err() && check_range(1.0, 21.0).is_err());
    }
}
