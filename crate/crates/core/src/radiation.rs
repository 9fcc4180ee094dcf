//! Basic-state light field in a horizontally uniform layer.
//!
//! The collimated beam is attenuated in closed form. The diffuse part enters
//! through a coupled pair of Fredholm equations of the second kind for the
//! total intensity `G(tau)` and the downward flux `F(tau)`:
//!
//! ```text
//! G(t) = G_c(t) + w/2 int_0^T [ G(s) E1(|t-s|) + A sgn(t-s) F(s) E2(|t-s|) ] ds
//! F(t) = F_c(t) + w/2 int_0^T [ A F(s) E3(|t-s|) + sgn(t-s) G(s) E2(|t-s|) ] ds
//! ```
//!
//! Discretized by Nystrom product integration: the unknowns are interpolated
//! quadratically on panels of a cosine-graded `tau` grid and the kernel moments on
//! panels touching the collocation point are integrated exactly through
//! primitives of `u^p E_n(u)`, which removes the logarithmic singularity of
//! `E1` and the jump of the signed `E2` kernel. Distant panels use
//! Gauss-Legendre quadrature.

use faer::prelude::*;
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{cumulative_integral, Mesh};
use crate::params::CollimatedFluxForm;
use crate::special::{exp_integral_any, exp_integrals_123, gauss_legendre, QuadratureRule};

/// Optical depth measured from the top at every mesh node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticalGrid {
    pub x3_nodes: Vec<f64>,
    pub tau_nodes: Vec<f64>,
    pub tau_h_total: f64,
}

/// `tau(x3) = tau_h int_{x3}^1 n_b`.
pub fn build_optical_grid(concentration: &[f64], optical_depth: f64, mesh: &Mesh) -> Result<OpticalGrid> {
    if concentration.len() != mesh.len() {
        return Err(Error::DimensionMismatch { expected: mesh.len(), found: concentration.len() });
    }
    if let Some(bad) = concentration.iter().find(|&&n| !(n >= 0.0)) {
        return Err(Error::Domain(format!("negative concentration {bad}")));
    }
    let running = cumulative_integral(mesh, concentration);
    let total = *running.last().unwrap();
    let tau_nodes: Vec<f64> = running.iter().map(|c| optical_depth * (total - c)).collect();
    Ok(OpticalGrid {
        x3_nodes: mesh.nodes.clone(),
        tau_h_total: tau_nodes[0],
        tau_nodes,
    })
}

/// Collimated intensity and signed vertical flux (negative: downward).
pub fn collimated_components(grid: &OpticalGrid, intensity: f64, refraction_angle: f64) -> (Vec<f64>, Vec<f64>) {
    let mu0 = refraction_angle.cos();
    let g: Vec<f64> = grid.tau_nodes.iter().map(|t| intensity * (-t / mu0).exp()).collect();
    let q = g.iter().map(|v| -mu0 * v).collect();
    (g, q)
}

/// Radiation profiles sampled on the mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiationField {
    pub g_total: Vec<f64>,
    /// Signed vertical flux (upward positive).
    pub q_vertical: Vec<f64>,
    pub g_collimated: Vec<f64>,
    pub g_diffuse: Vec<f64>,
    pub q_collimated: Vec<f64>,
    pub q_diffuse: Vec<f64>,
}

impl RadiationField {
    /// Magnitude of the (downward) vertical flux.
    pub fn downward_flux(&self) -> Vec<f64> {
        self.q_vertical.iter().map(|q| -q).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kernel {
    E1,
    SignedE2,
    E3,
}

impl Kernel {
    fn order(self) -> u32 {
        match self {
            Kernel::E1 => 1,
            Kernel::SignedE2 => 2,
            Kernel::E3 => 3,
        }
    }

    fn odd(self) -> bool {
        self == Kernel::SignedE2
    }

    /// `int_0^u v^p K(v) dv` for `p = 0, 1, 2`.
    fn moments_from_zero(self, u: f64) -> [f64; 3] {
        let n = self.order();
        let x = u.abs();
        let primitive = |x: f64| {
            let e1 = exp_integral_any(n + 1, x);
            let e2 = exp_integral_any(n + 2, x);
            let e3 = exp_integral_any(n + 3, x);
            [-e1, -x * e1 - e2, -x * x * e1 - 2.0 * x * e2 - 2.0 * e3]
        };
        let at_x = primitive(x);
        let at_0 = primitive(0.0);
        let mut m = [at_x[0] - at_0[0], at_x[1] - at_0[1], at_x[2] - at_0[2]];
        if u < 0.0 {
            // v -> -w: int_0^u v^p K(v) dv = -(-1)^p s int_0^|u| w^p K(w) dw
            let s = if self.odd() { -1.0 } else { 1.0 };
            for (p, mp) in m.iter_mut().enumerate() {
                *mp *= -s * if p % 2 == 0 { 1.0 } else { -1.0 };
            }
        }
        m
    }
}

/// Product-integration weights on quadratic panels. Nodes are graded towards
/// both faces, where the solution behaves like `tau ln tau`.
#[derive(Debug, Clone)]
struct PanelQuadrature {
    nodes: Vec<f64>,
    far_rules: [QuadratureRule; 3],
}

/// Lagrange basis on `(a, 0, b)` as `[constant, linear, quadratic]` coefficients in `x`.
fn quadratic_basis(a: f64, b: f64) -> [[f64; 3]; 3] {
    [
        [0.0, -b / (a * (a - b)), 1.0 / (a * (a - b))],
        [1.0, -(a + b) / (a * b), 1.0 / (a * b)],
        [0.0, -a / (b * (b - a)), 1.0 / (b * (b - a))],
    ]
}

impl PanelQuadrature {
    fn new(total: f64, points: usize) -> Result<Self> {
        debug_assert!(points >= 3 && points % 2 == 1);
        let last = (points - 1) as f64;
        let nodes = (0..points)
            .map(|j| 0.5 * total * (1.0 - (std::f64::consts::PI * j as f64 / last).cos()))
            .collect();
        Ok(PanelQuadrature { nodes, far_rules: [gauss_legendre(10)?, gauss_legendre(6)?, gauss_legendre(4)?] })
    }

    /// Weights `W_j` with `int_0^T K(t - s) f(s) ds ~ sum_j W_j f(s_j)`,
    /// for the kernels `E1`, signed `E2` and `E3` in that order.
    fn weights(&self, t: f64) -> [Vec<f64>; 3] {
        const KERNELS: [Kernel; 3] = [Kernel::E1, Kernel::SignedE2, Kernel::E3];
        let n = self.nodes.len();
        let mut w = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for p in 0..(n - 1) / 2 {
            let js = [2 * p, 2 * p + 1, 2 * p + 2];
            let (s0, s1, s2) = (self.nodes[js[0]], self.nodes[js[1]], self.nodes[js[2]]);
            let basis = quadratic_basis(s0 - s1, s2 - s1);
            let width = s2 - s0;
            let gap = if t < s0 { s0 - t } else if t > s2 { t - s2 } else { 0.0 };
            if gap < width {
                for (wk, kernel) in w.iter_mut().zip(KERNELS) {
                    let local = Self::near_panel(t, s0, s1, s2, &basis, kernel);
                    for (j, v) in js.iter().zip(local) {
                        wk[*j] += v;
                    }
                }
                continue;
            }
            // Fewer points as the nearest singularity recedes.
            let rule = if gap < 3.0 * width {
                &self.far_rules[0]
            } else if gap < 10.0 * width {
                &self.far_rules[1]
            } else {
                &self.far_rules[2]
            };
            let mapped = rule.mapped(s0, s2);
            for (&s, &wq) in mapped.nodes.iter().zip(&mapped.weights) {
                let x = s - s1;
                let u = t - s;
                let e = exp_integrals_123(u.abs());
                let k = [e[0], u.signum() * e[1], e[2]];
                for (c, j) in basis.iter().zip(js) {
                    let l = wq * (c[0] + x * (c[1] + x * c[2]));
                    for (wk, kv) in w.iter_mut().zip(k) {
                        wk[j] += l * kv;
                    }
                }
            }
        }
        w
    }

    fn near_panel(t: f64, s0: f64, s1: f64, s2: f64, basis: &[[f64; 3]; 3], kernel: Kernel) -> [f64; 3] {
        // u = t - s runs over [t - s2, t - s0]
        let hi = kernel.moments_from_zero(t - s0);
        let lo = kernel.moments_from_zero(t - s2);
        let m = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        // Rewrite each basis polynomial in x = s - s1 = d - u, d = t - s1.
        let d = t - s1;
        let mut out = [0.0; 3];
        for (o, &[a, b, c]) in out.iter_mut().zip(basis) {
            let c0 = a + b * d + c * d * d;
            let c1 = -b - 2.0 * c * d;
            *o = c0 * m[0] + c1 * m[1] + c * m[2];
        }
        out
    }
}

/// Nodal solution of the coupled pair for unit incident intensity.
#[derive(Debug, Clone)]
pub struct FredholmSolution {
    tau_nodes: Vec<f64>,
    intensity: Vec<f64>,
    downward_flux: Vec<f64>,
    albedo: f64,
    aniso: f64,
    beam_cosine: f64,
    flux_form: CollimatedFluxForm,
    quadrature: Option<PanelQuadrature>,
    /// Max-norm residual of the discrete system.
    pub residual: f64,
}

fn collimated_sources(tau: f64, beam_cosine: f64, form: CollimatedFluxForm) -> (f64, f64) {
    let g = (-tau / beam_cosine).exp();
    let f = match form {
        CollimatedFluxForm::Projected => beam_cosine * g,
        CollimatedFluxForm::Unprojected => g,
    };
    (g, f)
}

impl FredholmSolution {
    /// Solves on `points` uniformly spaced nodes over `[0, tau_total]`.
    pub fn solve(
        tau_total: f64,
        points: usize,
        albedo: f64,
        aniso: f64,
        beam_cosine: f64,
        flux_form: CollimatedFluxForm,
    ) -> Result<FredholmSolution> {
        if !(0.0..=1.0).contains(&albedo) || !(-1.0..=1.0).contains(&aniso) {
            return Err(Error::InvalidParams(format!("albedo {albedo}, anisotropy {aniso}")));
        }
        if points < 3 || points.is_multiple_of(2) {
            return Err(Error::InvalidParams(format!("tau quadrature needs an odd count >= 3, got {points}")));
        }
        if tau_total <= 0.0 {
            let (g, f) = collimated_sources(0.0, beam_cosine, flux_form);
            return Ok(FredholmSolution {
                tau_nodes: vec![0.0],
                intensity: vec![g],
                downward_flux: vec![f],
                albedo,
                aniso,
                beam_cosine,
                flux_form,
                quadrature: None,
                residual: 0.0,
            });
        }
        let quad = PanelQuadrature::new(tau_total, points)?;
        let n = points;
        let half_albedo = 0.5 * albedo;
        let mut system = Mat::<f64>::identity(2 * n, 2 * n);
        let mut rhs = Mat::<f64>::zeros(2 * n, 1);
        for i in 0..n {
            let t = quad.nodes[i];
            let [w1, w2, w3] = quad.weights(t);
            for j in 0..n {
                system[(i, j)] -= half_albedo * w1[j];
                system[(i, n + j)] -= half_albedo * aniso * w2[j];
                system[(n + i, n + j)] -= half_albedo * aniso * w3[j];
                system[(n + i, j)] -= half_albedo * w2[j];
            }
            let (g, f) = collimated_sources(t, beam_cosine, flux_form);
            rhs[(i, 0)] = g;
            rhs[(n + i, 0)] = f;
        }
        let sol = solve_dense(&system, &rhs)?;
        let intensity: Vec<f64> = (0..n).map(|i| sol[(i, 0)]).collect();
        let downward_flux: Vec<f64> = (0..n).map(|i| sol[(n + i, 0)]).collect();
        let residual = residual_norm(&system, &sol, &rhs);
        Ok(FredholmSolution {
            tau_nodes: quad.nodes.clone(),
            intensity,
            downward_flux,
            albedo,
            aniso,
            beam_cosine,
            flux_form,
            quadrature: Some(quad),
            residual,
        })
    }

    pub fn tau_nodes(&self) -> &[f64] {
        &self.tau_nodes
    }

    pub fn nodal_intensity(&self) -> &[f64] {
        &self.intensity
    }

    pub fn nodal_flux(&self) -> &[f64] {
        &self.downward_flux
    }

    /// Total intensity and downward flux at any optical depth, through the
    /// integral equations themselves (Nystrom interpolation).
    pub fn evaluate(&self, tau: f64) -> (f64, f64) {
        let Some(quad) = &self.quadrature else {
            return collimated_sources(0.0, self.beam_cosine, self.flux_form);
        };
        let total = *self.tau_nodes.last().unwrap();
        let t = tau.clamp(0.0, total);
        let (mut g, mut f) = collimated_sources(t, self.beam_cosine, self.flux_form);
        if self.albedo == 0.0 {
            return (g, f);
        }
        let half = 0.5 * self.albedo;
        let [w1, w2, w3] = quad.weights(t);
        for j in 0..self.tau_nodes.len() {
            g += half * (w1[j] * self.intensity[j] + self.aniso * w2[j] * self.downward_flux[j]);
            f += half * (self.aniso * w3[j] * self.downward_flux[j] + w2[j] * self.intensity[j]);
        }
        (g, f)
    }

    /// Collimated parts `(G_c, F_c)` at `tau`, consistent with the solved system.
    pub fn collimated(&self, tau: f64) -> (f64, f64) {
        collimated_sources(tau, self.beam_cosine, self.flux_form)
    }
}

/// Isotropic-scattering intensity equation on its own (no flux unknowns).
pub fn solve_isotropic_intensity(
    tau_total: f64,
    points: usize,
    albedo: f64,
    beam_cosine: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let quad = PanelQuadrature::new(tau_total, points)?;
    let n = points;
    let mut system = Mat::<f64>::identity(n, n);
    let mut rhs = Mat::<f64>::zeros(n, 1);
    for i in 0..n {
        let [w1, _, _] = quad.weights(quad.nodes[i]);
        for j in 0..n {
            system[(i, j)] -= 0.5 * albedo * w1[j];
        }
        rhs[(i, 0)] = (-quad.nodes[i] / beam_cosine).exp();
    }
    let sol = solve_dense(&system, &rhs)?;
    Ok((quad.nodes.clone(), (0..n).map(|i| sol[(i, 0)]).collect()))
}

pub(crate) fn solve_dense(system: &Mat<f64>, rhs: &Mat<f64>) -> Result<Mat<f64>> {
    let lu = system.partial_piv_lu();
    let sol = lu.solve(rhs);
    let bad = (0..sol.nrows()).any(|i| (0..sol.ncols()).any(|j| !sol[(i, j)].is_finite()));
    if bad {
        return Err(Error::SingularSystem { condition: f64::INFINITY });
    }
    let x_norm = max_abs(&sol);
    let b_norm = max_abs(rhs).max(f64::MIN_POSITIVE);
    // ||A^-1|| >= ||x|| / ||b||; a cheap lower bound on the condition number.
    let a_norm = (0..system.nrows())
        .map(|i| (0..system.ncols()).map(|j| system[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let condition = a_norm * x_norm / b_norm;
    if condition > 1e14 {
        return Err(Error::SingularSystem { condition });
    }
    Ok(sol)
}

fn max_abs(m: &Mat<f64>) -> f64 {
    let mut v: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            v = v.max(m[(i, j)].abs());
        }
    }
    v
}

fn residual_norm(system: &Mat<f64>, x: &Mat<f64>, rhs: &Mat<f64>) -> f64 {
    let r = system * x - rhs;
    max_abs(&r) / max_abs(rhs).max(1.0)
}

/// Solves the coupled pair on the grid's optical range and samples the field
/// at the grid nodes, scaled by the incident intensity.
pub fn solve_fredholm_pair(
    grid: &OpticalGrid,
    albedo: f64,
    aniso: f64,
    refraction_angle: f64,
    intensity: f64,
    tau_points: usize,
    flux_form: CollimatedFluxForm,
) -> Result<RadiationField> {
    let sol = FredholmSolution::solve(
        grid.tau_h_total,
        tau_points,
        albedo,
        aniso,
        refraction_angle.cos(),
        flux_form,
    )?;
    if sol.residual > 1e-10 {
        return Err(Error::SingularSystem { condition: sol.residual / f64::EPSILON });
    }
    Ok(sample_field(&sol, &grid.tau_nodes, intensity))
}

/// Samples a solved field at the given optical depths.
pub fn sample_field(sol: &FredholmSolution, tau: &[f64], intensity: f64) -> RadiationField {
    let m = tau.len();
    let mut field = RadiationField {
        g_total: Vec::with_capacity(m),
        q_vertical: Vec::with_capacity(m),
        g_collimated: Vec::with_capacity(m),
        g_diffuse: Vec::with_capacity(m),
        q_collimated: Vec::with_capacity(m),
        q_diffuse: Vec::with_capacity(m),
    };
    for &t in tau {
        let (g, f) = sol.evaluate(t);
        let (gc, fc) = sol.collimated(t);
        let (g, f, gc, fc) = (intensity * g, intensity * f, intensity * gc, intensity * fc);
        let gd = if sol.albedo == 0.0 { 0.0 } else { g - gc };
        let fd = if sol.albedo == 0.0 { 0.0 } else { f - fc };
        field.g_collimated.push(gc);
        field.g_diffuse.push(gd);
        field.g_total.push(gc + gd);
        field.q_collimated.push(-fc);
        field.q_diffuse.push(-fd);
        field.q_vertical.push(-(fc + fd));
    }
    field
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::exp_integral;

    fn uniform_grid(tau_h: f64, mesh: &Mesh) -> OpticalGrid {
        build_optical_grid(&vec![1.0; mesh.len()], tau_h, mesh).unwrap()
    }

    #[test]
    fn optical_grid_examples() {
        let mesh = Mesh::uniform(51);
        let g = uniform_grid(1.0, &mesh);
        for (x, t) in g.x3_nodes.iter().zip(&g.tau_nodes) {
            assert!((t - (1.0 - x)).abs() < 1e-14);
        }
        assert_eq!(*g.tau_nodes.last().unwrap(), 0.0);
        let g2 = build_optical_grid(&vec![2.0; 51], 0.5, &mesh).unwrap();
        assert!((g2.tau_h_total - 1.0).abs() < 1e-14);
        assert!(build_optical_grid(&[1.0; 3], 1.0, &mesh).is_err());
        let mut neg = vec![1.0; 51];
        neg[3] = -0.1;
        assert!(build_optical_grid(&neg, 1.0, &mesh).is_err());
    }

    #[test]
    fn optical_grid_matches_fine_trapezoid() {
        let mesh = Mesh::uniform(101);
        let profile = |x: f64| 0.4 + 1.2 * (-(x - 0.7f64).powi(2) / 0.1).exp();
        let n: Vec<f64> = mesh.nodes.iter().map(|&x| profile(x)).collect();
        let grid = build_optical_grid(&n, 0.8, &mesh).unwrap();
        for (k, &x) in mesh.nodes.iter().enumerate().step_by(10) {
            let m = 200_000;
            let h = (1.0 - x) / m as f64;
            let trap = if m > 0 && h > 0.0 {
                h * ((0..=m).map(|i| profile(x + i as f64 * h)).sum::<f64>()
                    - 0.5 * (profile(x) + profile(1.0)))
            } else {
                0.0
            };
            assert!((grid.tau_nodes[k] - 0.8 * trap).abs() < 1e-8, "x={x}: {}", grid.tau_nodes[k] - 0.8 * trap);
        }
        assert!(grid.tau_nodes.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn collimated_examples() {
        let mesh = Mesh::uniform(51);
        let g = uniform_grid(1.0, &mesh);
        let (gc, qc) = collimated_components(&g, 2.0, 0.3);
        assert!((gc[50] - 2.0).abs() < 1e-15);
        assert!((qc[50] + 2.0 * 0.3f64.cos()).abs() < 1e-15);
        let (gc, _) = collimated_components(&g, 1.0, 0.0);
        assert!((gc[0] - (-1f64).exp()).abs() < 1e-14);
        let single = OpticalGrid { x3_nodes: vec![0.5], tau_nodes: vec![0.5], tau_h_total: 0.5 };
        let (gc, _) = collimated_components(&single, 1.0, 0.83138);
        assert!((gc[0] - 0.476_161_860_3).abs() < 1e-10, "{}", gc[0]);
    }

    #[test]
    fn panel_weights_integrate_kernels_exactly_for_quadratics() {
        // Compare against the closed forms
        //   int_0^T E1(|t-s|) ds = 2 - E2(t) - E2(T-t)
        //   int_0^T sgn(t-s) E2(|t-s|) ds = E3(T-t) - E3(t)
        let quad = PanelQuadrature::new(0.9, 31).unwrap();
        for &t in &[0.0, 0.03, 0.3, 0.45, 0.9] {
            let [w1, w2, _] = quad.weights(t);
            let w1: f64 = w1.iter().sum();
            let e = 2.0 - exp_integral(2, t).unwrap() - exp_integral(2, 0.9 - t).unwrap();
            assert!((w1 - e).abs() < 1e-12, "t={t}: {w1} vs {e}");
            let w2: f64 = w2.iter().sum();
            let e2 = exp_integral(3, 0.9 - t).unwrap() - exp_integral(3, t).unwrap();
            assert!((w2 - e2).abs() < 1e-12);
        }
    }

    #[test]
    fn no_scattering_gives_beam_only() {
        let mesh = Mesh::uniform(51);
        for alpha_deg in [0.0f64, 40.0, 80.0] {
            let a0 = crate::params::snell_refract(alpha_deg, 1.333).unwrap();
            for tau_h in [0.25, 1.0] {
                let grid = uniform_grid(tau_h, &mesh);
                let f = solve_fredholm_pair(&grid, 0.0, 0.3, a0, 1.0, 101, CollimatedFluxForm::Projected).unwrap();
                for (g, t) in f.g_total.iter().zip(&grid.tau_nodes) {
                    assert!((g - (-t / a0.cos()).exp()).abs() < 1e-10);
                }
                assert!(f.g_diffuse.iter().all(|&v| v == 0.0));
                assert!(f.q_diffuse.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn isotropic_case_decouples() {
        let mu0 = 0.8;
        let coupled = FredholmSolution::solve(0.8, 101, 0.7, 0.0, mu0, CollimatedFluxForm::Projected).unwrap();
        let (_, iso) = solve_isotropic_intensity(0.8, 101, 0.7, mu0).unwrap();
        for (a, b) in coupled.nodal_intensity().iter().zip(&iso) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn flux_balance_and_refinement() {
        // dF/dtau = -(1 - w) G for the total field.
        let sol = FredholmSolution::solve(0.8, 201, 0.8, 0.2, 1.0, CollimatedFluxForm::Projected).unwrap();
        assert!(sol.residual < 1e-10);
        let h = 1e-4;
        for &t in &[0.1, 0.4, 0.7] {
            let dfdt = (sol.evaluate(t + h).1 - sol.evaluate(t - h).1) / (2.0 * h);
            assert!((dfdt + 0.2 * sol.evaluate(t).0).abs() < 1e-6);
        }
        let coarse = FredholmSolution::solve(0.8, 101, 0.8, 0.2, 1.0, CollimatedFluxForm::Projected).unwrap();
        let diff = (0..=40)
            .map(|k| 0.02 * k as f64)
            .map(|t| (coarse.evaluate(t).0 - sol.evaluate(t).0).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-6, "refinement change {diff}");
    }

    #[test]
    fn unprojected_form_differs_only_through_flux_source() {
        let a = FredholmSolution::solve(0.5, 51, 0.0, 0.0, 0.6, CollimatedFluxForm::Unprojected).unwrap();
        let (g, f) = a.evaluate(0.2);
        assert!((g - f).abs() < 1e-15);
    }
}
