//! Slow reference solvers that cross-check the production paths with
//! deliberately different discretizations.
//!
//! * The basic light field by discrete-ordinate sweeps and source iteration,
//!   instead of the Nystrom solve of the integral equations.
//! * The growth rate by Newton iteration on the eigenvalue problem posed as a
//!   boundary-value problem with `gamma` as an unknown, on second-order
//!   stencils and Richardson-extrapolated.
//! * The basic state on a four times finer mesh.

use faer::prelude::*;
use faer::{c64, Mat};
use serde::Serialize;

use crate::basic_state::{solve_basic_state, BasicState};
use crate::error::{Error, Result};
use crate::grid::{DiffOperator, Mesh};
use crate::params::{CollimatedFluxForm, NumericsConfig, SuspensionParams};
use crate::perturbed::PerturbedRadiationOperators;
use crate::radiation::build_optical_grid;
use crate::special::gauss_legendre;
use crate::stability::WavenumberProblem;

/// One production-versus-oracle comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub quantity: String,
    pub production: f64,
    pub oracle: f64,
    pub relative_difference: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn relative(p: f64, o: f64) -> f64 {
    (p - o).abs() / o.abs().max(1.0)
}

impl OracleReport {
    pub fn scalar(quantity: &str, production: f64, oracle: f64, tolerance: f64) -> OracleReport {
        let relative_difference = relative(production, oracle);
        OracleReport {
            quantity: quantity.to_string(),
            production,
            oracle,
            relative_difference,
            tolerance,
            pass: relative_difference <= tolerance,
        }
    }

    /// Worst node of two profiles; the stored values are the ones at that node.
    pub fn profile(quantity: &str, production: &[f64], oracle: &[f64], tolerance: f64) -> OracleReport {
        let worst = production
            .iter()
            .zip(oracle)
            .max_by(|x, y| relative(*x.0, *x.1).total_cmp(&relative(*y.0, *y.1)))
            .map(|(p, o)| (*p, *o))
            .unwrap_or((0.0, 0.0));
        let mut report = OracleReport::scalar(quantity, worst.0, worst.1, tolerance);
        if production.len() != oracle.len() {
            report.relative_difference = f64::INFINITY;
            report.pass = false;
        }
        report
    }
}

/// Light field from the sweep oracle, sampled on the mesh.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepField {
    pub g_total: Vec<f64>,
    /// Signed vertical flux (upward positive).
    pub q_vertical: Vec<f64>,
    pub iterations: usize,
}

/// Cells of the uniform optical grid used by the sweeps.
const SWEEP_CELLS: usize = 4000;
const SOURCE_TOL: f64 = 1e-10;
const SOURCE_MAX_ITER: usize = 20_000;

/// `int_0^1 [a u + b (1 - u)] e^{-d u} d du` as weights on `(a, b)`.
fn linear_source_weights(d: f64) -> (f64, f64, f64) {
    let decay = (-d).exp();
    let total = -(-d).exp_m1();
    let near = if d < 1e-3 {
        d * (0.5 - d * (1.0 / 3.0 - d / 8.0))
    } else {
        (total - d * decay) / d
    };
    (decay, near, total - near)
}

/// Basic light field for concentration `n_b` by discrete-ordinate sweeps with
/// `ordinates` Gauss points per hemisphere, iterating the scattering source
/// to a relative change of 1e-10.
pub fn oracle_rte_source_iteration(n_b: &[f64], params: &SuspensionParams, ordinates: usize) -> Result<SweepField> {
    let mesh = Mesh::uniform(n_b.len());
    let grid = build_optical_grid(n_b, params.optical_depth, &mesh)?;
    let total = grid.tau_h_total;
    let mu0 = params.beam_cosine();
    let scale = params.intensity;
    let collimated = |t: f64| {
        let g = (-t / mu0).exp();
        let f = match params.collimated_flux {
            CollimatedFluxForm::Projected => mu0 * g,
            CollimatedFluxForm::Unprojected => g,
        };
        (g, f)
    };
    let sample = |g: &[f64], f: &[f64]| {
        let h = total / SWEEP_CELLS as f64;
        let (mut gs, mut qs) = (Vec::new(), Vec::new());
        for &t in &grid.tau_nodes {
            let (gv, fv) = if total <= 0.0 {
                (g[0], f[0])
            } else {
                let k = ((t / h).floor() as usize).min(SWEEP_CELLS - 1);
                let s = (t / h - k as f64).clamp(0.0, 1.0);
                (g[k] + s * (g[k + 1] - g[k]), f[k] + s * (f[k + 1] - f[k]))
            };
            gs.push(scale * gv);
            qs.push(-scale * fv);
        }
        (gs, qs)
    };
    let nodes = SWEEP_CELLS + 1;
    let h = total / SWEEP_CELLS as f64;
    let tau: Vec<f64> = (0..nodes).map(|i| i as f64 * h).collect();
    let (gc, fc): (Vec<f64>, Vec<f64>) = tau.iter().map(|&t| collimated(t)).unzip();
    if params.albedo == 0.0 || total <= 0.0 {
        let (g_total, q_vertical) = sample(&gc, &fc);
        return Ok(SweepField { g_total, q_vertical, iterations: 0 });
    }
    let rule = gauss_legendre(ordinates)?.mapped(0.0, 1.0);
    let weights: Vec<(f64, f64, f64, f64)> = rule
        .nodes
        .iter()
        .map(|&mu| {
            let (e, a, b) = linear_source_weights(h / mu);
            (mu, e, a, b)
        })
        .collect();
    let two_pi = 2.0 * std::f64::consts::PI;
    let source_scale = params.albedo / (4.0 * std::f64::consts::PI);
    let (mut g, mut f) = (gc.clone(), fc.clone());
    let mut intensity = vec![0.0; nodes];
    for iteration in 1..=SOURCE_MAX_ITER {
        let mut g_new = gc.clone();
        let mut f_new = fc.clone();
        for (k, &(mu, decay, near, far)) in weights.iter().enumerate() {
            let w = two_pi * rule.weights[k];
            for down in [true, false] {
                let sign = if down { 1.0 } else { -1.0 };
                let src = |i: usize| source_scale * (g[i] + params.aniso * sign * mu * f[i]);
                intensity[if down { 0 } else { nodes - 1 }] = 0.0;
                for step in 0..SWEEP_CELLS {
                    let (from, to) = if down { (step, step + 1) } else { (nodes - 1 - step, nodes - 2 - step) };
                    intensity[to] = decay * intensity[from] + near * src(to) + far * src(from);
                }
                for i in 0..nodes {
                    g_new[i] += w * intensity[i];
                    f_new[i] += w * sign * mu * intensity[i];
                }
            }
        }
        let change = g_new
            .iter()
            .zip(&g)
            .chain(f_new.iter().zip(&f))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        let size = g_new.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        g = g_new;
        f = f_new;
        if change <= SOURCE_TOL * size.max(1.0) {
            let (g_total, q_vertical) = sample(&g, &f);
            return Ok(SweepField { g_total, q_vertical, iterations: iteration });
        }
        if !change.is_finite() {
            return Err(Error::NoConvergence { iterations: iteration, residual: change });
        }
    }
    Err(Error::NoConvergence { iterations: SOURCE_MAX_ITER, residual: f64::NAN })
}

/// Growth rate from the alternate scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AltGrowthRate {
    pub gamma_re: f64,
    pub gamma_im: f64,
    /// `(mesh points, re, im)` for each level before extrapolation.
    pub levels: Vec<(usize, f64, f64)>,
    /// Largest Newton residual over the levels.
    pub residual: f64,
}

impl AltGrowthRate {
    pub fn gamma(&self) -> c64 {
        c64::new(self.gamma_re, self.gamma_im)
    }
}

const NEWTON_TOL: f64 = 1e-8;
const NEWTON_MAX_ITER: usize = 40;

/// Coarse-to-fine cubic interpolation as a matrix.
fn prolongation(coarse: &Mesh, fine: &Mesh) -> Mat<c64> {
    let mut out = Mat::<c64>::zeros(fine.len(), coarse.len());
    let mut unit = vec![0.0; coarse.len()];
    for j in 0..coarse.len() {
        unit[j] = 1.0;
        for (i, &x) in fine.nodes.iter().enumerate() {
            out[(i, j)] = c64::new(coarse.interpolate(&unit, x), 0.0);
        }
        unit[j] = 0.0;
    }
    out
}

fn restrict_map(map: &Mat<c64>, stride: usize, prolong: &Mat<c64>) -> Mat<c64> {
    let rows = Mat::from_fn(prolong.ncols(), map.ncols(), |i, j| map[(i * stride, j)]);
    &rows * prolong
}

fn dense_real(op: &DiffOperator) -> Vec<Vec<f64>> {
    let m = op.rows.len();
    let mut out = vec![vec![0.0; m]; m];
    for (i, row) in op.rows.iter().enumerate() {
        for &(j, w) in row {
            out[i][j] += w;
        }
    }
    out
}

/// `int_1^{x_i}` by the trapezoid rule.
fn trapezoid_from_top(m: usize, h: f64) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; m]; m];
    for (i, row) in out.iter_mut().enumerate().take(m - 1) {
        for (j, cell) in row.iter_mut().enumerate().skip(i) {
            *cell = if j == i || j == m - 1 { -0.5 * h } else { -h };
        }
    }
    out
}

/// Second-order pencil on every `stride`-th node of the state's mesh.
fn second_order_pencil(
    state: &BasicState,
    ops: &PerturbedRadiationOperators,
    rayleigh: f64,
    stride: usize,
) -> (Mat<c64>, Mat<c64>) {
    let p = &state.params;
    let fine = &state.mesh;
    let m = (fine.len() - 1) / stride + 1;
    let mesh = Mesh::uniform(m);
    let pick = |v: &[f64]| -> Vec<f64> { (0..m).map(|i| v[i * stride]).collect() };
    let (n_b, t_b, slope_t) = (pick(&state.n_b), pick(&state.t_b), pick(&state.dtb_dg));
    let flux = pick(&state.downward_flux());
    let prolong = prolongation(&mesh, fine);
    let map_g = restrict_map(&ops.map_g, stride, &prolong);
    let k = ops.wavenumber;
    let (k1, k2) = (k * ops.wavevector_angle.cos(), k * ops.wavevector_angle.sin());
    let (q1, q2) = (restrict_map(&ops.map_q1, stride, &prolong), restrict_map(&ops.map_q2, stride, &prolong));
    let q_h = Mat::from_fn(m, m, |i, j| q1[(i, j)] * k1 + q2[(i, j)] * k2);
    let d1 = dense_real(&DiffOperator::new(&mesh, 1, 2));
    let d2 = dense_real(&DiffOperator::new(&mesh, 2, 2));
    let d4 = dense_real(&DiffOperator::new(&mesh, 4, 2));
    let dn: Vec<f64> = (0..m).map(|i| (0..m).map(|j| d1[i][j] * n_b[j]).sum()).collect();
    let top = trapezoid_from_top(m, mesh.step);
    let us = p.swim_speed;
    let ksq = k * k;
    let re = |v: f64| c64::new(v, 0.0);

    let mut a = Mat::<c64>::zeros(2 * m, 2 * m);
    let mut b = Mat::<c64>::zeros(2 * m, 2 * m);
    for i in 0..m {
        for j in 0..m {
            let eye = if i == j { 1.0 } else { 0.0 };
            a[(i, j)] = re(d4[i][j] - 2.0 * ksq * d2[i][j] + ksq * ksq * eye);
            a[(i, m + j)] = re(ksq * rayleigh * d1[i][j]);
            b[(i, j)] = re((d2[i][j] - ksq * eye) / p.schmidt);
            a[(m + i, m + j)] = re(d2[i][j] - ksq * eye - us * t_b[i] * d1[i][j])
                - map_g[(i, j)] * (us * n_b[i] * slope_t[i]);
            a[(m + i, j)] = re(-top[i][j] * dn[j]);
            b[(m + i, m + j)] = re(eye);
        }
    }
    // i int_1^x Us n_b T_b / F (k . q)
    for i in 0..m {
        for l in 0..m {
            let w = top[i][l] * us * n_b[l] * t_b[l] / flux[l];
            if w == 0.0 {
                continue;
            }
            for j in 0..m {
                a[(m + i, m + j)] += c64::new(0.0, w) * q_h[(l, j)];
            }
        }
    }
    // Velocity conditions, flux at both walls and N(1) = 0.
    let rows = [0, 1, m - 2, m - 1, m, 2 * m - 2, 2 * m - 1];
    for &r in &rows {
        for j in 0..2 * m {
            a[(r, j)] = re(0.0);
            b[(r, j)] = re(0.0);
        }
    }
    a[(rows[0], 0)] = re(1.0);
    a[(rows[3], m - 1)] = re(1.0);
    for j in 0..m {
        a[(rows[1], j)] = re(d1[0][j]);
        a[(rows[2], j)] = re(d2[m - 1][j]);
    }
    for (row, node) in [(rows[4], 0), (rows[5], m - 1)] {
        for j in 0..m {
            a[(row, m + j)] = re(d2[node][j] - us * t_b[node] * d1[node][j])
                - map_g[(node, j)] * (us * n_b[node] * slope_t[node]);
        }
    }
    a[(rows[6], 2 * m - 1)] = re(1.0);
    for i in 0..2 * m {
        let scale = (0..2 * m).map(|j| a[(i, j)].norm().max(b[(i, j)].norm())).fold(0.0, f64::max);
        for j in 0..2 * m {
            a[(i, j)] /= scale;
            b[(i, j)] /= scale;
        }
    }
    (a, b)
}

fn column(v: &[c64]) -> Mat<c64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

fn mat_vec(m: &Mat<c64>, x: &[c64]) -> Vec<c64> {
    PerturbedRadiationOperators::apply(m, x)
}

fn norm(v: &[c64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Damped Newton on `(A - gamma B) x = 0`, `c^H x = 1` from `gamma`.
fn newton_eigenpair(a: &Mat<c64>, b: &Mat<c64>, gamma: c64) -> Result<(c64, f64)> {
    let n = a.nrows();
    // Two inverse-iteration steps give the starting vector and the gauge.
    let shifted = Mat::from_fn(n, n, |i, j| a[(i, j)] - gamma * b[(i, j)]).partial_piv_lu();
    let mut x: Vec<c64> = (0..n).map(|i| c64::new(1.0, 0.01 * i as f64)).collect();
    for _ in 0..2 {
        let y = shifted.solve(&column(&mat_vec(b, &x)));
        let s = norm(&(0..n).map(|i| y[(i, 0)]).collect::<Vec<_>>());
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::EigenFailure("alternate scheme: singular start".into()));
        }
        x = (0..n).map(|i| y[(i, 0)] / s).collect();
    }
    let gauge: Vec<c64> = x.clone();
    let mut gamma = gamma;
    let residual = |g: c64, x: &[c64]| -> (Vec<c64>, f64) {
        let ax = mat_vec(a, x);
        let bx = mat_vec(b, x);
        let mut r: Vec<c64> = ax.iter().zip(&bx).map(|(p, q)| p - g * q).collect();
        r.push(gauge.iter().zip(x).map(|(c, v)| c.conj() * v).sum::<c64>() - c64::new(1.0, 0.0));
        let size = norm(&r);
        (r, size)
    };
    let (mut r, mut size) = residual(gamma, &x);
    for _ in 0..NEWTON_MAX_ITER {
        if size < NEWTON_TOL {
            return Ok((gamma, size));
        }
        let bx = mat_vec(b, &x);
        let jac = Mat::from_fn(n + 1, n + 1, |i, j| match (i < n, j < n) {
            (true, true) => a[(i, j)] - gamma * b[(i, j)],
            (true, false) => -bx[i],
            (false, true) => gauge[j].conj(),
            (false, false) => c64::new(0.0, 0.0),
        });
        let step = jac.partial_piv_lu().solve(&column(&r));
        let mut damping = 1.0;
        loop {
            let trial: Vec<c64> = (0..n).map(|i| x[i] - step[(i, 0)] * damping).collect();
            let g_trial = gamma - step[(n, 0)] * damping;
            let (r_trial, s_trial) = residual(g_trial, &trial);
            if s_trial < size || damping < 1e-3 {
                x = trial;
                gamma = g_trial;
                r = r_trial;
                size = s_trial;
                break;
            }
            damping *= 0.5;
        }
        if !size.is_finite() {
            break;
        }
    }
    if size < NEWTON_TOL {
        Ok((gamma, size))
    } else {
        Err(Error::NoConvergence { iterations: NEWTON_MAX_ITER, residual: size })
    }
}

/// Leading growth rate at `(a, rayleigh)` from second-order stencils on
/// every fourth, second and single node of the state's mesh, with two rounds
/// of Richardson extrapolation. Light maps come from the production operators
/// on the state's mesh.
pub fn oracle_alt_growth_rate(
    state: &BasicState,
    a: f64,
    rayleigh: f64,
    numerics: &NumericsConfig,
) -> Result<AltGrowthRate> {
    let m = state.mesh.len();
    if !(m - 1).is_multiple_of(4) || m < 41 {
        return Err(Error::InvalidParams(format!("alternate scheme needs 4k + 1 >= 41 mesh points, got {m}")));
    }
    let problem = WavenumberProblem::new(state, a, numerics)?;
    let mut gamma = problem.leading(rayleigh)?;
    let mut levels = Vec::new();
    let mut values = Vec::new();
    let mut residual: f64 = 0.0;
    for stride in [4, 2, 1] {
        let (pa, pb) = second_order_pencil(state, &problem.ops, rayleigh, stride);
        let (g, r) = newton_eigenpair(&pa, &pb, gamma)?;
        levels.push(((m - 1) / stride + 1, g.re, g.im));
        values.push(g);
        residual = residual.max(r);
        gamma = g;
    }
    let first: Vec<c64> = values.windows(2).map(|v| (v[1] * 4.0 - v[0]) / 3.0).collect();
    let extrapolated = (first[1] * 16.0 - first[0]) / 15.0;
    Ok(AltGrowthRate { gamma_re: extrapolated.re, gamma_im: extrapolated.im, levels, residual })
}

/// Basic state on a mesh four times finer than `numerics` asks for.
pub fn oracle_fixed_point_fine(params: &SuspensionParams, numerics: &NumericsConfig) -> Result<BasicState> {
    let fine = (*numerics).with_mesh(4 * (numerics.mesh_points - 1) + 1);
    solve_basic_state(params, &fine)
}

/// Fine-mesh state restricted to every fourth node.
pub fn restrict_to_coarse(fine: &[f64]) -> Vec<f64> {
    fine.iter().step_by(4).copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{SuspensionInput, TaxisSpec};

    fn params(albedo: f64, aniso: f64, optical_depth: f64, incidence_deg: f64) -> SuspensionParams {
        SuspensionInput {
            swim_speed: 10.0,
            optical_depth,
            albedo,
            aniso,
            incidence_deg,
            taxis: TaxisSpec::CriticalIntensity(1.0),
            ..Default::default()
        }
        .resolve()
        .unwrap()
    }

    #[test]
    fn report_uses_unit_floor() {
        let r = OracleReport::scalar("x", 1.5e-3, 1.0e-3, 1e-3);
        assert!((r.relative_difference - 5e-4).abs() < 1e-15);
        assert!(r.pass);
        let r = OracleReport::scalar("y", 210.0, 200.0, 1e-2);
        assert!((r.relative_difference - 0.05).abs() < 1e-15);
        assert!(!r.pass);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"relative_difference\""));
    }

    #[test]
    fn linear_source_weights_match_quadrature() {
        for d in [1e-6, 1e-3, 0.3, 5.0, 80.0] {
            let (e, near, far) = linear_source_weights(d);
            let rule = gauss_legendre(40).unwrap().mapped(0.0, 1.0);
            let a = rule.integrate(|u| u * (-d * u).exp() * d);
            let b = rule.integrate(|u| (1.0 - u) * (-d * u).exp() * d);
            assert!((e - (-d).exp()).abs() < 1e-15);
            assert!((near - a).abs() < 1e-12 * (1.0 + a), "{d}");
            assert!((far - b).abs() < 1e-12 * (1.0 + b), "{d}");
        }
    }

    #[test]
    fn sweeps_without_scattering_are_the_beam() {
        let p = params(0.0, 0.0, 0.7, 30.0);
        let n = vec![1.0; 51];
        let field = oracle_rte_source_iteration(&n, &p, 8).unwrap();
        let mu0 = p.beam_cosine();
        for (i, g) in field.g_total.iter().enumerate() {
            let tau = 0.7 * (1.0 - i as f64 / 50.0);
            assert!((g - (-tau / mu0).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn sweeps_match_nystrom_field() {
        let p = params(0.8, 0.2, 0.8, 0.0);
        let state = solve_basic_state(&p, &NumericsConfig::default().with_mesh(51)).unwrap();
        let field = oracle_rte_source_iteration(&state.n_b, &p, 48).unwrap();
        let g = OracleReport::profile("G_b", &state.radiation.g_total, &field.g_total, 1e-4);
        let q = OracleReport::profile("q_b", &state.radiation.q_vertical, &field.q_vertical, 1e-4);
        assert!(g.pass, "{g:?}");
        assert!(q.pass, "{q:?}");
    }
}
