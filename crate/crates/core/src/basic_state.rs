//! Self-consistent equilibrium: cell concentration coupled to the light field.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{cumulative_integral_with, integral, sup_diff, Mesh};
use crate::params::{NumericsConfig, SuspensionParams};
use crate::radiation::{build_optical_grid, sample_field, FredholmSolution, RadiationField};

/// Converged (or last-iterate) basic state on a uniform mesh.
#[derive(Debug, Clone)]
pub struct BasicState {
    pub params: SuspensionParams,
    pub mesh: Mesh,
    pub n_b: Vec<f64>,
    pub radiation: RadiationField,
    pub t_b: Vec<f64>,
    pub dtb_dg: Vec<f64>,
    pub iterations_used: usize,
    /// Sup-norm change of `n_b` over the last Picard step.
    pub residual: f64,
    pub converged: bool,
    field: Option<FredholmSolution>,
}

/// Summary of a basic state, for metadata output.
#[derive(Debug, Clone, Serialize)]
pub struct BasicStateSummary {
    pub mesh_points: usize,
    pub iterations_used: usize,
    pub residual: f64,
    pub converged: bool,
    pub integral_n_b: f64,
    pub ode_residual: f64,
    pub peak_x3: f64,
}

impl BasicState {
    pub fn g_total(&self) -> &[f64] {
        &self.radiation.g_total
    }

    pub fn gb_collimated(&self) -> &[f64] {
        &self.radiation.g_collimated
    }

    pub fn gb_diffuse(&self) -> &[f64] {
        &self.radiation.g_diffuse
    }

    /// Magnitude of the downward vertical flux.
    pub fn downward_flux(&self) -> Vec<f64> {
        self.radiation.downward_flux()
    }

    /// `dn_b/dx3`, taken from the cell balance itself rather than differenced.
    pub fn dn_b(&self) -> Vec<f64> {
        let us = self.params.swim_speed;
        self.n_b.iter().zip(&self.t_b).map(|(n, t)| us * t * n).collect()
    }

    /// Optical depth from the top at each node.
    pub fn optical_depth_profile(&self) -> Vec<f64> {
        optical_profile(&self.mesh, &self.n_b, self.params.optical_depth)
    }

    /// Total intensity and downward flux at arbitrary optical depth.
    pub(crate) fn light_at(&self, tau: f64) -> (f64, f64) {
        let i0 = self.params.intensity;
        match &self.field {
            Some(sol) => {
                let (g, f) = sol.evaluate(tau);
                (i0 * g, i0 * f)
            }
            None => (i0, i0 * self.params.beam_cosine()),
        }
    }

    /// Taxis response at an arbitrary depth, given nodal optical depths.
    fn taxis_at(&self, tau_nodes: &[f64], x: f64) -> f64 {
        let tau = self.mesh.interpolate(tau_nodes, x);
        self.params.taxis(self.light_at(tau).0)
    }

    /// Residual of the integrated cell balance,
    /// `sup |n_b(x) - n_b(0) - Us int_0^x T_b n_b|`.
    ///
    /// Between nodes near the walls `n_b` has a `y^2 ln y` term that
    /// polynomial interpolation misses, so there it is propagated from the
    /// nearest node below with the local solution `n(x_k) exp(Us int T)`.
    pub fn ode_residual(&self) -> f64 {
        let us = self.params.swim_speed;
        let flux: Vec<f64> = self.n_b.iter().zip(&self.t_b).map(|(n, t)| us * t * n).collect();
        let tau = self.optical_depth_profile();
        let inner = crate::special::gauss_legendre(8).expect("eight-point rule");
        let mesh = &self.mesh;
        let run = cumulative_integral_with(mesh, &flux, |x| {
            let k = ((x / mesh.step).floor() as usize).min(mesh.len() - 2);
            let x_k = mesh.nodes[k];
            let growth = inner.mapped(x_k, x).integrate(|s| self.taxis_at(&tau, s));
            let t = self.taxis_at(&tau, x);
            us * t * self.n_b[k] * (us * growth).exp()
        });
        self.n_b
            .iter()
            .zip(&run)
            .map(|(n, r)| (n - self.n_b[0] - r).abs())
            .fold(0.0, f64::max)
    }

    pub fn normalization(&self) -> f64 {
        integral(&self.mesh, &self.n_b)
    }

    /// Location of the concentration maximum, refined by a parabola through
    /// the largest node and its neighbours.
    pub fn peak_location(&self) -> f64 {
        let (k, _) = self
            .n_b
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        if k == 0 || k + 1 == self.n_b.len() {
            return self.mesh.nodes[k];
        }
        let (a, b, c) = (self.n_b[k - 1], self.n_b[k], self.n_b[k + 1]);
        let denom = a - 2.0 * b + c;
        let shift = if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
        self.mesh.nodes[k] + shift * self.mesh.step
    }

    pub fn summary(&self) -> BasicStateSummary {
        BasicStateSummary {
            mesh_points: self.mesh.len(),
            iterations_used: self.iterations_used,
            residual: self.residual,
            converged: self.converged,
            integral_n_b: self.normalization(),
            ode_residual: self.ode_residual(),
            peak_x3: self.peak_location(),
        }
    }

    /// Applies one unrelaxed fixed-point update to the stored concentration.
    pub fn picard_step(&self) -> Vec<f64> {
        let (_, t_b, _, tau) = self.respond(&self.n_b);
        self.update(&t_b, &tau)
    }

    /// Concentration update with the taxis integrated pointwise near the
    /// walls, where the light field has a `tau ln tau` singularity.
    fn update(&self, t_b: &[f64], tau: &[f64]) -> Vec<f64> {
        let us = self.params.swim_speed;
        let scaled: Vec<f64> = t_b.iter().map(|t| us * t).collect();
        let exponent = cumulative_integral_with(&self.mesh, &scaled, |x| us * self.taxis_at(tau, x));
        normalized_exponential(&exponent, &self.mesh)
    }

    /// Light field, taxis response and optical depths for a trial concentration.
    fn respond(&self, n_b: &[f64]) -> (RadiationField, Vec<f64>, Vec<f64>, Vec<f64>) {
        let tau = optical_profile(&self.mesh, n_b, self.params.optical_depth);
        let radiation = match &self.field {
            Some(sol) => sample_field(sol, &tau, self.params.intensity),
            None => uniform_field(&self.params, n_b.len()),
        };
        let t_b = radiation.g_total.iter().map(|&g| self.params.taxis(g)).collect();
        let dtb = radiation.g_total.iter().map(|&g| self.params.taxis_slope(g)).collect();
        (radiation, t_b, dtb, tau)
    }
}

fn optical_profile(mesh: &Mesh, n_b: &[f64], optical_depth: f64) -> Vec<f64> {
    build_optical_grid(n_b, optical_depth, mesh)
        .map(|g| g.tau_nodes)
        .unwrap_or_else(|_| vec![0.0; mesh.len()])
}

/// Light field of an optically empty layer: the unattenuated beam.
fn uniform_field(params: &SuspensionParams, m: usize) -> RadiationField {
    let g = params.intensity;
    let q = -g * params.beam_cosine();
    RadiationField {
        g_total: vec![g; m],
        q_vertical: vec![q; m],
        g_collimated: vec![g; m],
        g_diffuse: vec![0.0; m],
        q_collimated: vec![q; m],
        q_diffuse: vec![0.0; m],
    }
}

/// Exact solution of `dn/dx3 = Us T_b n` with unit mean.
pub fn concentration_update(t_b: &[f64], swim_speed: f64, mesh: &Mesh) -> Vec<f64> {
    let scaled: Vec<f64> = t_b.iter().map(|t| swim_speed * t).collect();
    normalized_exponential(&crate::grid::cumulative_integral(mesh, &scaled), mesh)
}

/// `exp(s) / int exp(s)`, shifted so the largest exponent is zero.
fn normalized_exponential(exponent: &[f64], mesh: &Mesh) -> Vec<f64> {
    let top = exponent.iter().cloned().fold(f64::MIN, f64::max);
    let raw: Vec<f64> = exponent.iter().map(|e| (e - top).exp()).collect();
    let total = integral(mesh, &raw);
    raw.iter().map(|r| r / total).collect()
}

/// Picard iteration to the self-consistent state. Fails with
/// `NoConvergence` if the iteration budget runs out.
pub fn solve_basic_state(params: &SuspensionParams, numerics: &NumericsConfig) -> Result<BasicState> {
    let state = iterate_basic_state(params, numerics)?;
    if state.converged {
        Ok(state)
    } else {
        Err(Error::NoConvergence { iterations: state.iterations_used, residual: state.residual })
    }
}

/// Like [`solve_basic_state`] but hands back the last iterate when the
/// budget runs out, with `converged` cleared.
pub fn iterate_basic_state(params: &SuspensionParams, numerics: &NumericsConfig) -> Result<BasicState> {
    numerics.validate()?;
    let mesh = Mesh::uniform(numerics.mesh_points);
    let m = mesh.len();
    // The mean concentration is pinned to one, so the total optical depth
    // is known up front and the integral equations are solved only once.
    let field = if params.optical_depth > 0.0 {
        let sol = FredholmSolution::solve(
            params.optical_depth,
            numerics.tau_quadrature_points,
            params.albedo,
            params.aniso,
            params.beam_cosine(),
            params.collimated_flux,
        )?;
        if sol.residual > 1e-10 {
            return Err(Error::SingularSystem { condition: sol.residual / f64::EPSILON });
        }
        Some(sol)
    } else {
        None
    };
    let mut state = BasicState {
        params: *params,
        mesh: mesh.clone(),
        n_b: vec![1.0; m],
        radiation: uniform_field(params, m),
        t_b: vec![0.0; m],
        dtb_dg: vec![0.0; m],
        iterations_used: 0,
        residual: f64::INFINITY,
        converged: false,
        field,
    };
    let relax = numerics.picard_relaxation;
    let mut accel = Anderson::new(5);
    for iter in 1..=numerics.picard_max_iter {
        let (radiation, t_b, dtb, tau) = state.respond(&state.n_b);
        let update = state.update(&t_b, &tau);
        let change = sup_diff(&update, &state.n_b);
        state.radiation = radiation;
        state.t_b = t_b;
        state.dtb_dg = dtb;
        state.iterations_used = iter;
        state.residual = change;
        if change < numerics.picard_tol {
            state.n_b = update;
            let (radiation, t_b, dtb, _) = state.respond(&state.n_b);
            state.radiation = radiation;
            state.t_b = t_b;
            state.dtb_dg = dtb;
            state.converged = true;
            return Ok(state);
        }
        let next = accel.next(&state.n_b, &update, relax);
        state.n_b = if next.iter().all(|&v| v > 0.0) {
            next
        } else {
            accel.reset();
            state.n_b.iter().zip(&update).map(|(o, u)| o + relax * (u - o)).collect()
        };
    }
    Ok(state)
}

/// Type-II Anderson mixing over a short history, falling back to plain
/// relaxation until enough history exists.
struct Anderson {
    depth: usize,
    xs: Vec<Vec<f64>>,
    fs: Vec<Vec<f64>>,
}

impl Anderson {
    fn new(depth: usize) -> Self {
        Anderson { depth, xs: Vec::new(), fs: Vec::new() }
    }

    fn reset(&mut self) {
        self.xs.clear();
        self.fs.clear();
    }

    fn next(&mut self, x: &[f64], gx: &[f64], relax: f64) -> Vec<f64> {
        let f: Vec<f64> = gx.iter().zip(x).map(|(g, x)| g - x).collect();
        self.xs.push(x.to_vec());
        self.fs.push(f.clone());
        if self.xs.len() > self.depth + 1 {
            self.xs.remove(0);
            self.fs.remove(0);
        }
        let k = self.xs.len() - 1;
        let plain = |x: &[f64], f: &[f64]| x.iter().zip(f).map(|(x, f)| x + relax * f).collect();
        if k == 0 {
            return plain(x, &f);
        }
        // Least squares for the differences of residuals via normal equations.
        let df: Vec<Vec<f64>> = (0..k)
            .map(|j| self.fs[j + 1].iter().zip(&self.fs[j]).map(|(a, b)| a - b).collect())
            .collect();
        let dx: Vec<Vec<f64>> = (0..k)
            .map(|j| self.xs[j + 1].iter().zip(&self.xs[j]).map(|(a, b)| a - b).collect())
            .collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut gram = faer::Mat::<f64>::zeros(k, k);
        let mut rhs = faer::Mat::<f64>::zeros(k, 1);
        for i in 0..k {
            for j in 0..k {
                gram[(i, j)] = dot(&df[i], &df[j]);
            }
            gram[(i, i)] *= 1.0 + 1e-10;
            rhs[(i, 0)] = dot(&df[i], &f);
        }
        use faer::prelude::*;
        let coef = gram.partial_piv_lu().solve(&rhs);
        if (0..k).any(|i| !coef[(i, 0)].is_finite()) {
            self.reset();
            return plain(x, &f);
        }
        let mut out: Vec<f64> = plain(x, &f);
        for j in 0..k {
            let c = coef[(j, 0)];
            for (o, (a, b)) in out.iter_mut().zip(dx[j].iter().zip(&df[j])) {
                *o -= c * (a + relax * b);
            }
        }
        out
    }
}

/// Depths where the total intensity crosses `g_c`, ascending.
pub fn locate_critical_crossings(state: &BasicState, g_c: f64) -> Vec<f64> {
    let mesh = &state.mesh;
    let diff: Vec<f64> = state.g_total().iter().map(|g| g - g_c).collect();
    let mut out = Vec::new();
    for k in 0..diff.len() - 1 {
        let (a, b) = (diff[k], diff[k + 1]);
        if a == 0.0 {
            out.push(mesh.nodes[k]);
            continue;
        }
        if a.signum() == b.signum() || b == 0.0 {
            continue;
        }
        let root = crate::params::bisect(
            |x| mesh.interpolate(&diff, x),
            mesh.nodes[k],
            mesh.nodes[k + 1],
            1e-12,
        );
        out.push(root);
    }
    if diff.last() == Some(&0.0) {
        out.push(1.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{SuspensionInput, TaxisSpec};

    fn params(input: SuspensionInput) -> SuspensionParams {
        input.resolve().unwrap()
    }

    #[test]
    fn update_examples() {
        let mesh = Mesh::uniform(51);
        let n = concentration_update(&vec![0.0; 51], 7.0, &mesh);
        assert!(n.iter().all(|v| (v - 1.0).abs() < 1e-14));
        let n = concentration_update(&vec![1.0; 51], 1.0, &mesh);
        let e = std::f64::consts::E;
        assert!((n[50] - e / (e - 1.0)).abs() < 1e-12);
        assert!((n[50] - 1.58198).abs() < 1e-5);
        let c = -0.3;
        let us = 4.0;
        let n = concentration_update(&vec![c; 51], us, &mesh);
        for (x, v) in mesh.nodes.iter().zip(&n) {
            let exact = us * c * (us * c * x).exp() / ((us * c).exp() - 1.0);
            assert!((v - exact).abs() < 1e-10);
        }
    }

    #[test]
    fn update_survives_huge_exponents() {
        let mesh = Mesh::uniform(51);
        let n = concentration_update(&vec![0.9; 51], 1000.0, &mesh);
        assert!(n.iter().all(|v| v.is_finite()));
        assert!((integral(&mesh, &n) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_swimming_gives_uniform_state() {
        let p = params(SuspensionInput { swim_speed: 0.0, albedo: 0.7, aniso: 0.4, ..Default::default() });
        let s = solve_basic_state(&p, &NumericsConfig::default()).unwrap();
        assert!(s.n_b.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn converged_state_satisfies_invariants() {
        let p = params(SuspensionInput {
            swim_speed: 10.0,
            optical_depth: 0.8,
            albedo: 0.8,
            aniso: 0.2,
            taxis: TaxisSpec::Upsilon(0.3),
            ..Default::default()
        });
        let numerics = NumericsConfig::default();
        let s = solve_basic_state(&p, &numerics).unwrap();
        assert!((s.normalization() - 1.0).abs() < 1e-10);
        assert!(s.n_b.iter().all(|&v| v > 0.0));
        assert!(s.ode_residual() < 1e-6, "{}", s.ode_residual());
        assert!(sup_diff(&s.picard_step(), &s.n_b) < numerics.picard_tol);
        for k in 0..s.mesh.len() {
            let r = &s.radiation;
            assert_eq!(r.g_total[k], r.g_collimated[k] + r.g_diffuse[k]);
            assert!(r.g_total[k] > 0.0);
        }
    }

    #[test]
    fn empty_layer_is_uniformly_lit() {
        let p = params(SuspensionInput { optical_depth: 0.0, swim_speed: 5.0, ..Default::default() });
        let s = solve_basic_state(&p, &NumericsConfig::default()).unwrap();
        assert!(s.g_total().iter().all(|&g| g == 1.0));
        let t = p.taxis(1.0);
        let n = concentration_update(&vec![t; s.mesh.len()], 5.0, &s.mesh);
        assert!(sup_diff(&n, &s.n_b) < 1e-12);
    }

    #[test]
    fn exhausted_budget_is_flagged() {
        let p = params(SuspensionInput { swim_speed: 10.0, optical_depth: 1.0, ..Default::default() });
        let numerics = NumericsConfig { picard_max_iter: 1, ..Default::default() };
        match solve_basic_state(&p, &numerics) {
            Err(Error::NoConvergence { iterations: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let s = iterate_basic_state(&p, &numerics).unwrap();
        assert!(!s.converged);
    }

    #[test]
    fn crossings_examples() {
        let p = params(SuspensionInput { swim_speed: 2.0, optical_depth: 1.0, ..Default::default() });
        let s = solve_basic_state(&p, &NumericsConfig::default()).unwrap();
        assert!(locate_critical_crossings(&s, 10.0).is_empty());
        let lo = s.g_total()[0];
        let hi = *s.g_total().last().unwrap();
        let mid = 0.5 * (lo + hi);
        let x = locate_critical_crossings(&s, mid);
        assert_eq!(x.len(), 1);
        assert!((s.mesh.interpolate(s.g_total(), x[0]) - mid).abs() < 1e-10);
    }
}
